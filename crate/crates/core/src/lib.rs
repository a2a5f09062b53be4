//! Desk-scale laboratory for aligning a conditional rectified-flow generator
//! with identity-consistency preferences.
//!
//! The crate is organized around five subsystems:
//!
//! - [`autodiff`] — dense MLP math, reverse-mode gradients, Adam.
//! - [`world`] — a synthetic multi-subject "video" domain with ground-truth
//!   consistency and prompt-adherence oracles, distortion operators, and
//!   preference-pair synthesis.
//! - [`flow`] — the conditional rectified-flow policy: velocity network,
//!   deterministic ODE and stochastic SDE samplers, per-step Gaussian
//!   transition statistics, and flow-regression pretraining.
//! - [`reward`] — ties-aware pairwise preference modeling, teacher filtering
//!   of noisy auto labels, curriculum data mixing, and benchmark accuracy.
//! - [`grpo`] — group-relative policy optimization of the flow policy with a
//!   clipped surrogate objective, plus evaluation and ablation harnesses.
//!
//! Everything is seeded and single-threaded by default: identical seeds
//! reproduce identical results bit-for-bit.

pub mod autodiff;
pub mod flow;
pub mod grpo;
pub mod reward;
pub mod rng;
pub mod world;
