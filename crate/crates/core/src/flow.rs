//! Conditional rectified-flow model over video latents.
//!
//! The velocity network takes (z_t, condition embedding, time encoding) and
//! predicts the velocity field transporting noise (t = 1) to data (t = 0).
//! Deterministic sampling integrates dz = v dt backward in time by Euler
//! steps; stochastic sampling uses the equivalent reverse SDE
//!
//! ```text
//! dz = [v + (sigma_t^2 / 2t) (z + (1 - t) v)] dt + sigma_t dw,  sigma_t = a t,
//! ```
//!
//! discretized by Euler-Maruyama with the drift evaluated at the step's
//! start time. Each SDE step is a Gaussian transition whose mean, scalar
//! std, realized next state, and log-density are recorded, which is what a
//! policy-ratio objective later replays.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{
    adam_step, forward, grad, AdamState, Activation, AutodiffError, NetSpec, ParamVector, Tape,
    Var,
};
use crate::rng::standard_normal_vec;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// (t, sin 2πt, cos 2πt) appended to every network input.
pub const TIME_ENC_DIM: usize = 3;

pub fn time_encoding(t: f64) -> [f64; TIME_ENC_DIM] {
    let w = std::f64::consts::TAU * t;
    [t, w.sin(), w.cos()]
}

// ── Policy ───────────────────────────────────────────────────────────

/// Velocity-field network v(z, c, t) with output dimension equal to the
/// latent dimension.
#[derive(Debug, Clone)]
pub struct FlowPolicy {
    pub spec: NetSpec,
    pub params: ParamVector,
}

impl FlowPolicy {
    pub fn new(
        latent_dim: usize,
        cond_dim: usize,
        hidden_widths: Vec<usize>,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let spec = NetSpec {
            input_dim: latent_dim + cond_dim + TIME_ENC_DIM,
            hidden_widths,
            output_dim: latent_dim,
            activation,
        };
        let params = spec.init_params(rng);
        FlowPolicy { spec, params }
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.spec.input_dim - self.spec.output_dim - TIME_ENC_DIM
    }

    fn net_input(&self, z: &[f64], cond: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
        if z.len() != self.latent_dim() {
            return Err(FlowError::Invalid(format!(
                "latent length {} != policy latent dim {}",
                z.len(),
                self.latent_dim()
            )));
        }
        if cond.len() != self.cond_dim() {
            return Err(FlowError::Invalid(format!(
                "condition length {} != policy condition dim {}",
                cond.len(),
                self.cond_dim()
            )));
        }
        let mut input = Vec::with_capacity(self.spec.input_dim);
        input.extend_from_slice(z);
        input.extend_from_slice(cond);
        input.extend_from_slice(&time_encoding(t));
        Ok(input)
    }

    /// Evaluate the velocity field at (z, c, t), t in [0, 1].
    pub fn velocity(&self, z: &[f64], cond: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(FlowError::Invalid(format!("time {t} outside [0, 1]")));
        }
        let input = self.net_input(z, cond, t)?;
        Ok(forward(&self.spec, &self.params, &input)?)
    }
}

// ── Time grid and noise schedule ─────────────────────────────────────

/// Strictly decreasing times from exactly 1 to exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self, FlowError> {
        if times.len() < 2 {
            return Err(FlowError::Invalid("grid needs at least two times".into()));
        }
        if times[0] != 1.0 || *times.last().unwrap() != 0.0 {
            return Err(FlowError::Invalid("grid must run from exactly 1 to exactly 0".into()));
        }
        if times.windows(2).any(|w| w[1] >= w[0]) {
            return Err(FlowError::Invalid("grid times must strictly decrease".into()));
        }
        Ok(TimeGrid { times })
    }

    /// Uniform grid with `steps` integration steps.
    pub fn uniform(steps: usize) -> Result<Self, FlowError> {
        if steps == 0 {
            return Err(FlowError::Invalid("step count must be >= 1".into()));
        }
        let times = (0..=steps)
            .map(|i| ((steps - i) as f64) / steps as f64)
            .collect();
        TimeGrid::new(times)
    }

    pub fn step_count(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// (t_from, t_to) spans, in integration order.
    pub fn spans(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.windows(2).map(|w| (w[0], w[1]))
    }
}

/// sigma_t = scale * t, so sigma_0 = 0 and scale 0 recovers the ODE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub scale: f64,
}

impl NoiseSchedule {
    pub fn new(scale: f64) -> Result<Self, FlowError> {
        if !(scale >= 0.0) {
            return Err(FlowError::Invalid("noise scale must be >= 0".into()));
        }
        Ok(NoiseSchedule { scale })
    }

    pub fn sigma(&self, t: f64) -> f64 {
        self.scale * t
    }

    /// The drift correction factor sigma_t^2 / (2t), simplified analytically
    /// to scale^2 * t / 2 so t -> 0 is regular.
    pub fn drift_coef(&self, t: f64) -> f64 {
        self.scale * self.scale * t / 2.0
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule { scale: 1.0 }
    }
}

// ── Samplers ─────────────────────────────────────────────────────────

fn check_span(t_from: f64, t_to: f64) -> Result<(), FlowError> {
    if !(0.0 <= t_to && t_to < t_from && t_from <= 1.0) {
        return Err(FlowError::Invalid(format!(
            "integration span must satisfy 0 <= t_to < t_from <= 1, got ({t_from}, {t_to})"
        )));
    }
    Ok(())
}

/// One deterministic Euler step: z - (t_from - t_to) * v(z, c, t_from).
pub fn ode_step(
    policy: &FlowPolicy,
    z: &[f64],
    cond: &[f64],
    t_from: f64,
    t_to: f64,
) -> Result<Vec<f64>, FlowError> {
    check_span(t_from, t_to)?;
    let v = policy.velocity(z, cond, t_from)?;
    let dt = t_from - t_to;
    Ok(z.iter().zip(&v).map(|(zi, vi)| zi - dt * vi).collect())
}

/// One Euler-Maruyama step of the reverse SDE. Returns the realized next
/// state plus the Gaussian transition statistics (mean, scalar std).
pub fn sde_step(
    policy: &FlowPolicy,
    z: &[f64],
    cond: &[f64],
    t_from: f64,
    t_to: f64,
    noise: &[f64],
    schedule: &NoiseSchedule,
) -> Result<(Vec<f64>, Vec<f64>, f64), FlowError> {
    check_span(t_from, t_to)?;
    if t_from <= 0.0 {
        return Err(FlowError::Invalid("SDE steps cannot start at t = 0".into()));
    }
    if noise.len() != z.len() {
        return Err(FlowError::Invalid(format!(
            "noise length {} != latent length {}",
            noise.len(),
            z.len()
        )));
    }
    let v = policy.velocity(z, cond, t_from)?;
    let dt = t_from - t_to;
    let coef = schedule.drift_coef(t_from);
    let one_minus_t = 1.0 - t_from;
    let mut mean = vec![0.0; z.len()];
    for i in 0..z.len() {
        let drift = v[i] + coef * (z[i] + one_minus_t * v[i]);
        mean[i] = z[i] - dt * drift;
    }
    let std = schedule.sigma(t_from) * dt.sqrt();
    let next = mean.iter().zip(noise).map(|(m, n)| m + std * n).collect();
    Ok((next, mean, std))
}

/// Log-density of the isotropic Gaussian N(mean, std^2 I) at `x`.
pub fn transition_logprob(mean: &[f64], std: f64, x: &[f64]) -> Result<f64, FlowError> {
    if std <= 0.0 {
        return Err(FlowError::Invalid("transition std must be positive".into()));
    }
    if x.len() != mean.len() {
        return Err(FlowError::Invalid(format!(
            "point length {} != mean length {}",
            x.len(),
            mean.len()
        )));
    }
    let mut ssq = 0.0;
    for (xi, mi) in x.iter().zip(mean) {
        let d = xi - mi;
        ssq += d * d;
    }
    let d = mean.len() as f64;
    Ok(-0.5 * ssq / (std * std) - d * std.ln() - 0.5 * d * LN_2PI)
}

pub const LN_2PI: f64 = 1.837_877_066_409_345_4;

// ── Trajectories ─────────────────────────────────────────────────────

/// One recorded SDE transition. `state` is z at `t_from`; `next` is the
/// realized sample of N(mean, std^2 I), i.e. the action taken; `logp` is
/// its log-density under the sampling policy (0 when std == 0 and the
/// transition is deterministic).
#[derive(Debug, Clone)]
pub struct TrajStep {
    pub t_from: f64,
    pub t_to: f64,
    pub state: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: f64,
    pub next: Vec<f64>,
    pub logp: f64,
}

/// A full SDE rollout from initial noise to the terminal latent.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub init_noise: Vec<f64>,
    pub steps: Vec<TrajStep>,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        self.steps
            .last()
            .map(|s| s.next.as_slice())
            .unwrap_or(&self.init_noise)
    }
}

/// Roll one trajectory from `init_noise`, drawing per-step noise from `rng`.
pub fn sample_trajectory(
    policy: &FlowPolicy,
    cond: &[f64],
    init_noise: Vec<f64>,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory, FlowError> {
    if init_noise.len() != policy.latent_dim() {
        return Err(FlowError::Invalid(format!(
            "initial noise length {} != latent dim {}",
            init_noise.len(),
            policy.latent_dim()
        )));
    }
    let mut state = init_noise.clone();
    let mut steps = Vec::with_capacity(grid.step_count());
    for (t_from, t_to) in grid.spans() {
        let noise = standard_normal_vec(rng, state.len());
        let (next, mean, std) = sde_step(policy, &state, cond, t_from, t_to, &noise, schedule)?;
        let logp = if std > 0.0 {
            transition_logprob(&mean, std, &next)?
        } else {
            0.0
        };
        steps.push(TrajStep {
            t_from,
            t_to,
            state: state.clone(),
            mean,
            std,
            next: next.clone(),
            logp,
        });
        state = next;
    }
    Ok(Trajectory { init_noise, steps })
}

/// Sample a group of G trajectories under one condition. With
/// `noise_differentiation` each member draws its own initial latent;
/// otherwise all share one draw.
pub fn sample_group(
    policy: &FlowPolicy,
    cond: &[f64],
    group_size: usize,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    noise_differentiation: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Trajectory>, FlowError> {
    if group_size < 2 {
        return Err(FlowError::Invalid("group size must be >= 2".into()));
    }
    let d = policy.latent_dim();
    let shared = if noise_differentiation {
        None
    } else {
        Some(standard_normal_vec(rng, d))
    };
    let mut trajectories = Vec::with_capacity(group_size);
    for _ in 0..group_size {
        let z1 = match &shared {
            Some(z) => z.clone(),
            None => standard_normal_vec(rng, d),
        };
        trajectories.push(sample_trajectory(policy, cond, z1, grid, schedule, rng)?);
    }
    Ok(trajectories)
}

// ── Pretraining ──────────────────────────────────────────────────────

/// One prepared regression example: the interpolated state z_t = t z_1 +
/// (1 - t) z_0 and the velocity target z_1 - z_0.
#[derive(Debug, Clone)]
pub struct FlowBatchItem {
    pub z_t: Vec<f64>,
    pub cond: Vec<f64>,
    pub t: f64,
    pub target: Vec<f64>,
}

/// Draw (t, z_1) per item and build the interpolants for the flow
/// regression loss.
pub fn make_regression_batch(
    data: &[(Vec<f64>, Vec<f64>)],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FlowBatchItem>, FlowError> {
    use rand::Rng;
    if data.is_empty() {
        return Err(FlowError::Invalid("batch must be nonempty".into()));
    }
    let mut items = Vec::with_capacity(data.len());
    for (z0, cond) in data {
        let t: f64 = rng.random();
        let z1 = standard_normal_vec(rng, z0.len());
        let z_t: Vec<f64> = z1
            .iter()
            .zip(z0)
            .map(|(n, d)| t * n + (1.0 - t) * d)
            .collect();
        let target: Vec<f64> = z1.iter().zip(z0).map(|(n, d)| n - d).collect();
        items.push(FlowBatchItem { z_t, cond: cond.clone(), t, target });
    }
    Ok(items)
}

/// Mean over the batch of ||v(z_t, c, t) - (z_1 - z_0)||^2, with its
/// gradient with respect to the policy parameters.
pub fn regression_loss_grad(
    spec: &NetSpec,
    params: &ParamVector,
    items: &[FlowBatchItem],
) -> Result<(f64, Vec<f64>), FlowError> {
    if items.is_empty() {
        return Err(FlowError::Invalid("batch must be nonempty".into()));
    }
    let result = grad(params, |tape| {
        let mut total: Option<Var> = None;
        for item in items {
            let mut input = Vec::with_capacity(spec.input_dim);
            input.extend_from_slice(&item.z_t);
            input.extend_from_slice(&item.cond);
            input.extend_from_slice(&time_encoding(item.t));
            let x = tape.constant(&input)?;
            let v = tape.mlp(spec, x)?;
            let target = tape.constant(&item.target)?;
            let diff = tape.sub(v, target)?;
            let sq = tape.square(diff)?;
            let ssq = tape.sum(sq)?;
            total = Some(match total {
                Some(t) => tape.add(t, ssq)?,
                None => ssq,
            });
        }
        tape.scale(total.unwrap(), 1.0 / items.len() as f64)
    })?;
    Ok(result)
}

/// One pretraining step: sample interpolants, take an Adam step on the
/// regression loss, return the loss.
pub fn pretrain_step(
    policy: &mut FlowPolicy,
    adam: &mut AdamState,
    data: &[(Vec<f64>, Vec<f64>)],
    rng: &mut ChaCha8Rng,
) -> Result<f64, FlowError> {
    let items = make_regression_batch(data, rng)?;
    let (loss, grads) = regression_loss_grad(&policy.spec, &policy.params, &items)?;
    adam_step(adam, &mut policy.params, &grads)?;
    Ok(loss)
}

/// Tape helper shared with the GRPO surrogate: rebuild the step's Gaussian
/// mean from the stored state under the current parameters, mirroring
/// [`sde_step`] arithmetic exactly.
pub(crate) fn tape_transition_mean(
    tape: &mut Tape,
    spec: &NetSpec,
    step: &TrajStep,
    cond: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Var, AutodiffError> {
    let mut input = Vec::with_capacity(spec.input_dim);
    input.extend_from_slice(&step.state);
    input.extend_from_slice(cond);
    input.extend_from_slice(&time_encoding(step.t_from));
    let x = tape.constant(&input)?;
    let v = tape.mlp(spec, x)?;
    let z = tape.constant(&step.state)?;
    let dt = step.t_from - step.t_to;
    let coef = schedule.drift_coef(step.t_from);
    // drift = v + coef * (z + (1 - t) v); mean = z - dt * drift
    let scaled_v = tape.scale(v, 1.0 - step.t_from)?;
    let inner = tape.add(z, scaled_v)?;
    let correction = tape.scale(inner, coef)?;
    let drift = tape.add(v, correction)?;
    let step_vec = tape.scale(drift, dt)?;
    tape.sub(z, step_vec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Segment;
    use crate::rng::stream;
    use crate::world::{gen_condition, gen_ground_truth, WorldConfig};
    use rand::Rng;

    fn tiny_policy(seed: u64) -> (FlowPolicy, Vec<f64>) {
        let mut rng = stream(seed, 0);
        let policy = FlowPolicy::new(6, 4, vec![8], Activation::Tanh, &mut rng);
        let cond: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        (policy, cond)
    }

    #[test]
    fn zero_policy_emits_zero_velocity() {
        let (mut policy, cond) = tiny_policy(50);
        policy.params = ParamVector::zeros(policy.spec.param_layout());
        let v = policy.velocity(&[0.3; 6], &cond, 0.5).unwrap();
        assert_eq!(v, vec![0.0; 6]);
    }

    #[test]
    fn velocity_is_deterministic_and_matches_forward() {
        let (policy, cond) = tiny_policy(51);
        let z = [0.1, -0.4, 0.9, 0.0, 0.2, -1.1];
        let v1 = policy.velocity(&z, &cond, 0.7).unwrap();
        let v2 = policy.velocity(&z, &cond, 0.7).unwrap();
        assert_eq!(v1, v2);
        let mut input = z.to_vec();
        input.extend_from_slice(&cond);
        input.extend_from_slice(&time_encoding(0.7));
        let via_forward = forward(&policy.spec, &policy.params, &input).unwrap();
        assert_eq!(v1, via_forward);
    }

    #[test]
    fn velocity_rejects_bad_time_and_dims() {
        let (policy, cond) = tiny_policy(52);
        assert!(policy.velocity(&[0.0; 6], &cond, 1.5).is_err());
        assert!(policy.velocity(&[0.0; 5], &cond, 0.5).is_err());
        assert!(policy.velocity(&[0.0; 6], &cond[..3], 0.5).is_err());
    }

    #[test]
    fn grid_construction_and_validation() {
        let grid = TimeGrid::uniform(4).unwrap();
        assert_eq!(grid.times(), &[1.0, 0.75, 0.5, 0.25, 0.0]);
        assert_eq!(grid.step_count(), 4);
        assert!(TimeGrid::new(vec![1.0, 0.5, 0.0]).is_ok());
        assert!(TimeGrid::new(vec![1.0, 0.5]).is_err());
        assert!(TimeGrid::new(vec![0.9, 0.0]).is_err());
        assert!(TimeGrid::new(vec![1.0, 0.5, 0.5, 0.0]).is_err());
        assert!(TimeGrid::uniform(0).is_err());
    }

    #[test]
    fn ode_step_with_zero_velocity_is_identity() {
        let (mut policy, cond) = tiny_policy(53);
        policy.params = ParamVector::zeros(policy.spec.param_layout());
        let z = vec![0.4; 6];
        assert_eq!(ode_step(&policy, &z, &cond, 0.8, 0.6).unwrap(), z);
    }

    /// A policy whose velocity is a constant vector: single affine layer,
    /// zero weights, bias = u.
    fn constant_policy(u: &[f64], cond_dim: usize) -> FlowPolicy {
        let spec = NetSpec {
            input_dim: u.len() + cond_dim + TIME_ENC_DIM,
            hidden_widths: vec![],
            output_dim: u.len(),
            activation: Activation::Tanh,
        };
        let mut params = ParamVector::zeros(spec.param_layout());
        let w_len = spec.param_layout()[0].len();
        params.values_mut()[w_len..].copy_from_slice(u);
        FlowPolicy { spec, params }
    }

    #[test]
    fn constant_field_integrates_exactly_across_refinements() {
        let u = [0.7, -0.3, 1.2];
        let policy = constant_policy(&u, 2);
        let cond = [0.1, 0.2];
        let z1 = [2.0, -1.0, 0.5];
        for steps in [1, 2, 5, 8, 16] {
            let grid = TimeGrid::uniform(steps).unwrap();
            let mut z = z1.to_vec();
            for (t_from, t_to) in grid.spans() {
                z = ode_step(&policy, &z, &cond, t_from, t_to).unwrap();
            }
            for i in 0..3 {
                assert!(
                    (z[i] - (z1[i] - u[i])).abs() < 1e-12,
                    "steps {steps}: {} vs {}",
                    z[i],
                    z1[i] - u[i]
                );
            }
        }
    }

    #[test]
    fn single_step_ode_is_one_velocity_subtraction() {
        let (policy, cond) = tiny_policy(54);
        let z = vec![0.2, -0.8, 0.5, 1.0, -0.1, 0.0];
        let v = policy.velocity(&z, &cond, 1.0).unwrap();
        let z0 = ode_step(&policy, &z, &cond, 1.0, 0.0).unwrap();
        for i in 0..z.len() {
            assert!((z0[i] - (z[i] - v[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn ode_step_rejects_reversed_times() {
        let (policy, cond) = tiny_policy(55);
        assert!(ode_step(&policy, &[0.0; 6], &cond, 0.5, 0.8).is_err());
    }

    #[test]
    fn sde_step_collapses_to_ode_at_scale_zero() {
        let (policy, cond) = tiny_policy(56);
        let z = vec![0.3, -0.2, 0.8, 0.1, -0.6, 0.4];
        let noise = vec![1.3; 6];
        let schedule = NoiseSchedule::new(0.0).unwrap();
        let (next, mean, std) = sde_step(&policy, &z, &cond, 0.9, 0.7, &noise, &schedule).unwrap();
        let ode = ode_step(&policy, &z, &cond, 0.9, 0.7).unwrap();
        assert_eq!(std, 0.0);
        assert_eq!(next, ode);
        assert_eq!(mean, ode);
    }

    #[test]
    fn sde_step_matches_closed_form_for_zero_velocity() {
        let cond_dim = 2;
        let policy = constant_policy(&[0.0, 0.0, 0.0], cond_dim);
        let cond = [0.0, 0.0];
        let z = [1.0, -2.0, 0.5];
        let schedule = NoiseSchedule::new(1.0).unwrap();
        let (t_from, t_to) = (0.8, 0.6);
        let (_, mean, std) =
            sde_step(&policy, &z, &cond, t_from, t_to, &[0.0; 3], &schedule).unwrap();
        let dt = t_from - t_to;
        let factor = 1.0 - dt * t_from / 2.0;
        for i in 0..3 {
            assert!((mean[i] - z[i] * factor).abs() < 1e-15);
        }
        assert!((std - t_from * dt.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sde_step_with_zero_noise_lands_on_the_mean() {
        let (policy, cond) = tiny_policy(57);
        let z = vec![0.2; 6];
        let schedule = NoiseSchedule::default();
        let (next, mean, _) = sde_step(&policy, &z, &cond, 0.5, 0.25, &[0.0; 6], &schedule).unwrap();
        assert_eq!(next, mean);
    }

    #[test]
    fn logprob_peak_and_one_sigma_offsets() {
        let mean = vec![0.3, -0.7, 1.1, 0.0];
        let s = 0.37;
        let peak = transition_logprob(&mean, s, &mean).unwrap();
        let want = -(mean.len() as f64) * (s * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((peak - want).abs() < 1e-12);

        let mut off = mean.clone();
        off[0] += s;
        let shifted = transition_logprob(&mean, s, &off).unwrap();
        assert!((shifted - peak + 0.5).abs() < 1e-12);

        assert!(transition_logprob(&mean, 0.0, &mean).is_err());
    }

    #[test]
    fn logprob_integrates_to_one_in_1d() {
        // Simpson quadrature of exp(logprob) over mean +- 12 std.
        let mean = vec![0.4];
        let s = 0.9;
        let (lo, hi) = (mean[0] - 12.0 * s, mean[0] + 12.0 * s);
        let n = 4000; // even
        let h = (hi - lo) / n as f64;
        let f = |x: f64| transition_logprob(&mean, s, &[x]).unwrap().exp();
        let mut integral = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 0 { 2.0 } else { 4.0 };
            integral += w * f(lo + i as f64 * h);
        }
        integral *= h / 3.0;
        assert!((integral - 1.0).abs() < 1e-6, "integral {integral}");
    }

    #[test]
    fn shared_noise_zero_scale_collapses_the_group() {
        let (policy, cond) = tiny_policy(58);
        let grid = TimeGrid::uniform(4).unwrap();
        let schedule = NoiseSchedule::new(0.0).unwrap();
        let group = sample_group(&policy, &cond, 4, &grid, &schedule, false, &mut stream(58, 1))
            .unwrap();
        for traj in &group[1..] {
            assert_eq!(traj.terminal(), group[0].terminal());
            assert_eq!(traj.init_noise, group[0].init_noise);
        }
    }

    #[test]
    fn noise_differentiation_draws_distinct_initial_latents() {
        let (policy, cond) = tiny_policy(59);
        let grid = TimeGrid::uniform(3).unwrap();
        let schedule = NoiseSchedule::default();
        let group = sample_group(&policy, &cond, 5, &grid, &schedule, true, &mut stream(59, 1))
            .unwrap();
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                assert_ne!(group[i].init_noise, group[j].init_noise);
            }
        }
        assert!(sample_group(&policy, &cond, 1, &grid, &schedule, true, &mut stream(59, 2)).is_err());
    }

    #[test]
    fn stored_logps_replay_exactly() {
        let (policy, cond) = tiny_policy(60);
        let grid = TimeGrid::uniform(5).unwrap();
        let schedule = NoiseSchedule::default();
        let group = sample_group(&policy, &cond, 3, &grid, &schedule, true, &mut stream(60, 1))
            .unwrap();
        for traj in &group {
            for step in &traj.steps {
                let recomputed = transition_logprob(&step.mean, step.std, &step.next).unwrap();
                assert_eq!(recomputed, step.logp);
            }
            // States chain: each step starts where the previous one landed.
            for w in traj.steps.windows(2) {
                assert_eq!(w[0].next, w[1].state);
            }
        }
    }

    #[test]
    fn sde_ode_gap_shrinks_with_the_noise_scale() {
        let (policy, cond) = tiny_policy(61);
        let grid = TimeGrid::uniform(6).unwrap();
        let d = policy.latent_dim();
        let z1 = standard_normal_vec(&mut stream(61, 7), d);

        // ODE reference path.
        let mut ode_path = vec![z1.clone()];
        let mut z = z1.clone();
        for (t_from, t_to) in grid.spans() {
            z = ode_step(&policy, &z, &cond, t_from, t_to).unwrap();
            ode_path.push(z.clone());
        }

        let max_dev = |scale: f64| -> f64 {
            let schedule = NoiseSchedule::new(scale).unwrap();
            // Shared per-step noise draws across scales.
            let mut rng = stream(61, 8);
            let mut z = z1.clone();
            let mut dev = 0.0_f64;
            for (idx, (t_from, t_to)) in grid.spans().enumerate() {
                let noise = standard_normal_vec(&mut rng, d);
                let (next, _, _) =
                    sde_step(&policy, &z, &cond, t_from, t_to, &noise, &schedule).unwrap();
                z = next;
                let step_dev = z
                    .iter()
                    .zip(&ode_path[idx + 1])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0_f64, f64::max);
                dev = dev.max(step_dev);
            }
            dev
        };

        let d_half = max_dev(0.5);
        let d_tenth = max_dev(0.1);
        let d_cent = max_dev(0.01);
        let d_zero = max_dev(0.0);
        assert!(d_half > d_tenth && d_tenth > d_cent, "{d_half} {d_tenth} {d_cent}");
        assert_eq!(d_zero, 0.0);
    }

    #[test]
    fn perfect_predictor_has_zero_regression_loss() {
        // Data where z0 = 0: target = z1 and z_t = t z1, so v(z_t) = z_t / t
        // is exact. Instead use a constant-velocity construction: z0 fixed,
        // z1 fixed via rigged batch items.
        let u = [0.5, -0.25];
        let policy = constant_policy(&u, 1);
        let items = vec![FlowBatchItem {
            z_t: vec![0.3, 0.4],
            cond: vec![0.0],
            t: 0.6,
            target: u.to_vec(),
        }];
        let (loss, grads) = regression_loss_grad(&policy.spec, &policy.params, &items).unwrap();
        assert!(loss.abs() < 1e-24);
        assert!(grads.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn pretraining_reduces_the_loss_on_a_toy_set() {
        let world = WorldConfig { subjects: 1, frames: 4, ..WorldConfig::default() };
        let mut rng = stream(62, 0);
        let mut data = Vec::new();
        for _ in 0..32 {
            let cond = gen_condition(&world, true, &mut rng).unwrap();
            let video =
                gen_ground_truth(&cond.identities, &cond.prompt, world.frames, world.jitter, &mut rng)
                    .unwrap();
            data.push((video.into_latent(), cond.embedding()));
        }
        let latent_dim = world.latent_dim();
        let cond_dim = data[0].1.len();
        let mut policy = FlowPolicy::new(latent_dim, cond_dim, vec![32], Activation::Tanh, &mut rng);
        let mut adam = AdamState::new(policy.params.len(), 2e-3);
        let mut first = None;
        let mut last = 0.0;
        for step in 0..200 {
            let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..8)
                .map(|_| data[rng.random_range(0..data.len())].clone())
                .collect();
            let loss = pretrain_step(&mut policy, &mut adam, &batch, &mut rng).unwrap();
            if step == 0 {
                first = Some(loss);
            }
            last = loss;
        }
        assert!(last < first.unwrap() * 0.8, "no progress: {first:?} -> {last}");
    }

    #[test]
    fn tape_transition_mean_replays_sde_step_bitwise() {
        let (policy, cond) = tiny_policy(63);
        let grid = TimeGrid::uniform(4).unwrap();
        let schedule = NoiseSchedule::default();
        let traj = sample_trajectory(
            &policy,
            &cond,
            standard_normal_vec(&mut stream(63, 1), 6),
            &grid,
            &schedule,
            &mut stream(63, 2),
        )
        .unwrap();
        for step in &traj.steps {
            let mut tape = Tape::new(&policy.params);
            let mean_var =
                tape_transition_mean(&mut tape, &policy.spec, step, &cond, &schedule).unwrap();
            assert_eq!(tape.value(mean_var), step.mean.as_slice());
        }
    }

    #[test]
    fn empty_pretrain_batch_is_rejected() {
        let (mut policy, _) = tiny_policy(64);
        let mut adam = AdamState::new(policy.params.len(), 1e-3);
        assert!(pretrain_step(&mut policy, &mut adam, &[], &mut stream(64, 1)).is_err());
        let _ = Segment::new("unused", vec![1]);
    }
}
