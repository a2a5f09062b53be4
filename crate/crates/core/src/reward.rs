//! Ties-aware preference reward learning.
//!
//! A scalar reward r(x, prompt, y) is trained from pairwise comparisons
//! under the Bradley-Terry-with-Ties likelihood
//!
//! ```text
//! P(A > B) = e^rA / (e^rA + θ e^rB)
//! P(B > A) = e^rB / (θ e^rA + e^rB)
//! P(tie)   = (θ² - 1) e^rA e^rB / [(e^rA + θ e^rB)(θ e^rA + e^rB)]
//! ```
//!
//! with θ >= 1 controlling the tie mass (θ = 1 recovers plain
//! Bradley-Terry). Probabilities are computed after subtracting
//! max(rA, rB) so unbounded rewards cannot overflow. The module also
//! provides the teacher-filtering protocol for noisy auto labels, the
//! three data-mixing schedules (random, staged, smooth cosine curriculum),
//! and benchmark accuracy via three-way argmax.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    adam_step, forward, grad, AdamState, Activation, AutodiffError, NetSpec, ParamVector, Var,
};
use crate::world::{Condition, PairRecord, PrefLabel, VideoSample};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

// ── Featurization ────────────────────────────────────────────────────

/// Fixed video featurization: the flat latent followed by each frame's
/// mean slot appearance.
pub fn video_features(video: &VideoSample) -> Vec<f64> {
    let (frames, k, m) = (video.frames(), video.subjects(), video.appearance_dim());
    let mut features = video.latent().to_vec();
    for f in 0..frames {
        let mut mean = vec![0.0; m];
        for slot in 0..k {
            for (acc, a) in mean.iter_mut().zip(video.appearance(f, slot)) {
                *acc += a;
            }
        }
        for acc in &mut mean {
            *acc /= k as f64;
        }
        features.extend(mean);
    }
    features
}

pub fn video_feature_dim(frames: usize, subjects: usize, appearance_dim: usize) -> usize {
    VideoSample::latent_dim(frames, subjects, appearance_dim) + frames * appearance_dim
}

/// Full reward-net input: identity embedding, prompt embedding, video
/// features — the reward is a function of the condition and the video.
pub fn reward_input(cond: &Condition, video: &VideoSample) -> Vec<f64> {
    let mut input = cond.identities.flat();
    input.extend(cond.prompt.embedding(&cond.identities));
    input.extend(video_features(video));
    input
}

pub fn reward_input_dim(frames: usize, subjects: usize, appearance_dim: usize) -> usize {
    Condition::embedding_dim(subjects, appearance_dim)
        + video_feature_dim(frames, subjects, appearance_dim)
}

// ── Reward network ───────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct RewardNet {
    pub spec: NetSpec,
    pub params: ParamVector,
}

impl RewardNet {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let spec = NetSpec { input_dim, hidden_widths, output_dim: 1, activation };
        let params = spec.init_params(rng);
        RewardNet { spec, params }
    }

    pub fn score(&self, input: &[f64]) -> Result<f64, RewardError> {
        Ok(forward(&self.spec, &self.params, input)?[0])
    }

    pub fn score_video(&self, cond: &Condition, video: &VideoSample) -> Result<f64, RewardError> {
        self.score(&reward_input(cond, video))
    }
}

// ── BTT probabilities ────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BttConfig {
    pub theta: f64,
}

impl Default for BttConfig {
    fn default() -> Self {
        BttConfig { theta: 5.0 }
    }
}

fn check_theta(theta: f64) -> Result<(), RewardError> {
    if !(theta >= 1.0) {
        return Err(RewardError::Invalid(format!("theta must be >= 1, got {theta}")));
    }
    Ok(())
}

/// The three preference probabilities (A wins, B wins, tie). Computed in
/// shifted space so only reward differences matter; sums to 1 and gives
/// p_tie = 0 exactly at theta = 1.
pub fn btt_probs(r_a: f64, r_b: f64, theta: f64) -> Result<(f64, f64, f64), RewardError> {
    check_theta(theta)?;
    if !r_a.is_finite() || !r_b.is_finite() {
        return Err(RewardError::Invalid("rewards must be finite".into()));
    }
    let m = r_a.max(r_b);
    let ea = (r_a - m).exp();
    let eb = (r_b - m).exp();
    let den_a = ea + theta * eb;
    let den_b = theta * ea + eb;
    let p_a = ea / den_a;
    let p_b = eb / den_b;
    let p_tie = (theta * theta - 1.0) * ea * eb / (den_a * den_b);
    Ok((p_a, p_b, p_tie))
}

/// Three-way argmax over the BTT probabilities, with ties broken in the
/// fixed order (A wins, B wins, tie).
pub fn btt_argmax(r_a: f64, r_b: f64, theta: f64) -> Result<PrefLabel, RewardError> {
    let (p_a, p_b, p_tie) = btt_probs(r_a, r_b, theta)?;
    if p_a >= p_b && p_a >= p_tie {
        Ok(PrefLabel::AWins)
    } else if p_b >= p_tie {
        Ok(PrefLabel::BWins)
    } else {
        Ok(PrefLabel::Tie)
    }
}

// ── Prepared examples ────────────────────────────────────────────────

/// A featurized preference pair — reward inputs for both sides plus the
/// stored label. Oracle scores never appear here.
#[derive(Debug, Clone)]
pub struct PairExample {
    pub feat_a: Vec<f64>,
    pub feat_b: Vec<f64>,
    pub label: PrefLabel,
}

pub fn prepare_examples(records: &[PairRecord]) -> Vec<PairExample> {
    records
        .iter()
        .map(|r| PairExample {
            feat_a: reward_input(&r.condition, &r.video_a),
            feat_b: reward_input(&r.condition, &r.video_b),
            label: r.label,
        })
        .collect()
}

// ── Negative log-likelihood ──────────────────────────────────────────

/// Mean BTT negative log-likelihood over a batch, with its gradient with
/// respect to the reward parameters.
pub fn btt_nll_grad(
    spec: &NetSpec,
    params: &ParamVector,
    batch: &[&PairExample],
    theta: f64,
) -> Result<(f64, Vec<f64>), RewardError> {
    check_theta(theta)?;
    if batch.is_empty() {
        return Err(RewardError::Invalid("batch must be nonempty".into()));
    }
    if theta == 1.0 && batch.iter().any(|p| p.label == PrefLabel::Tie) {
        return Err(RewardError::Invalid(
            "theta must exceed 1 when the batch contains tie labels".into(),
        ));
    }
    let ln_tie_coef = if theta > 1.0 { (theta * theta - 1.0).ln() } else { 0.0 };
    let result = grad(params, |tape| {
        let mut total: Option<Var> = None;
        for pair in batch {
            let xa = tape.constant(&pair.feat_a)?;
            let ra = tape.mlp(spec, xa)?;
            let xb = tape.constant(&pair.feat_b)?;
            let rb = tape.mlp(spec, xb)?;
            // Shift by max(ra, rb); the shift's own gradient cancels.
            let m = tape.max(ra, rb)?;
            let sa = tape.sub(ra, m)?;
            let sb = tape.sub(rb, m)?;
            let ea = tape.exp(sa)?;
            let eb = tape.exp(sb)?;
            let theta_eb = tape.scale(eb, theta)?;
            let den_a = tape.add(ea, theta_eb)?;
            let theta_ea = tape.scale(ea, theta)?;
            let den_b = tape.add(theta_ea, eb)?;
            let ln_den_a = tape.ln(den_a)?;
            let ln_den_b = tape.ln(den_b)?;
            let nll = match pair.label {
                PrefLabel::AWins => tape.sub(ln_den_a, sa)?,
                PrefLabel::BWins => tape.sub(ln_den_b, sb)?,
                PrefLabel::Tie => {
                    let dens = tape.add(ln_den_a, ln_den_b)?;
                    let shifts = tape.add(sa, sb)?;
                    let partial = tape.sub(dens, shifts)?;
                    let coef = tape.scalar(ln_tie_coef)?;
                    tape.sub(partial, coef)?
                }
            };
            total = Some(match total {
                Some(t) => tape.add(t, nll)?,
                None => nll,
            });
        }
        tape.scale(total.unwrap(), 1.0 / batch.len() as f64)
    })?;
    Ok(result)
}

/// Value-only mean NLL via the plain forward pass.
pub fn btt_nll_value(
    net: &RewardNet,
    batch: &[&PairExample],
    theta: f64,
) -> Result<f64, RewardError> {
    check_theta(theta)?;
    if batch.is_empty() {
        return Err(RewardError::Invalid("batch must be nonempty".into()));
    }
    let mut total = 0.0;
    for pair in batch {
        let r_a = net.score(&pair.feat_a)?;
        let r_b = net.score(&pair.feat_b)?;
        let (p_a, p_b, p_tie) = btt_probs(r_a, r_b, theta)?;
        let p = match pair.label {
            PrefLabel::AWins => p_a,
            PrefLabel::BWins => p_b,
            PrefLabel::Tie => p_tie,
        };
        total -= p.ln();
    }
    Ok(total / batch.len() as f64)
}

// ── Curriculum schedules ─────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Random,
    Staged,
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurriculumSchedule {
    pub kind: ScheduleKind,
    pub total_steps: usize,
}

impl CurriculumSchedule {
    pub fn new(kind: ScheduleKind, total_steps: usize) -> Result<Self, RewardError> {
        if total_steps == 0 {
            return Err(RewardError::Invalid("total_steps must be >= 1".into()));
        }
        Ok(CurriculumSchedule { kind, total_steps })
    }
}

/// Cosine mixing weight 0.5 (1 + cos(π t / T)): the probability of drawing
/// from the auto set at step `t_step`. Non-increasing from 1 to 0.
pub fn alpha(t_step: usize, total_steps: usize) -> Result<f64, RewardError> {
    if total_steps == 0 {
        return Err(RewardError::Invalid("total_steps must be >= 1".into()));
    }
    if t_step > total_steps {
        return Err(RewardError::Invalid(format!(
            "step {t_step} outside [0, {total_steps}]"
        )));
    }
    Ok(0.5 * (1.0 + (std::f64::consts::PI * t_step as f64 / total_steps as f64).cos()))
}

/// Draw one training batch at step `t_step`.
///
/// - smooth: each item comes from the auto set with probability alpha.
/// - staged: auto set for the first half of training, human set after.
/// - random: uniform over the pooled union.
pub fn sample_batch<'a>(
    schedule: &CurriculumSchedule,
    t_step: usize,
    human: &'a [PairExample],
    auto: &'a [PairExample],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<&'a PairExample>, RewardError> {
    if batch_size == 0 {
        return Err(RewardError::Invalid("batch_size must be >= 1".into()));
    }
    if t_step >= schedule.total_steps {
        return Err(RewardError::Invalid(format!(
            "step {t_step} outside [0, {})",
            schedule.total_steps
        )));
    }
    match schedule.kind {
        ScheduleKind::Smooth | ScheduleKind::Staged => {
            if human.is_empty() || auto.is_empty() {
                return Err(RewardError::Invalid(
                    "smooth and staged schedules need both datasets nonempty".into(),
                ));
            }
        }
        ScheduleKind::Random => {
            if human.is_empty() && auto.is_empty() {
                return Err(RewardError::Invalid("no data to sample from".into()));
            }
        }
    }
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let item = match schedule.kind {
            ScheduleKind::Smooth => {
                let a = alpha(t_step, schedule.total_steps)?;
                if rng.random::<f64>() < a {
                    &auto[rng.random_range(0..auto.len())]
                } else {
                    &human[rng.random_range(0..human.len())]
                }
            }
            ScheduleKind::Staged => {
                if 2 * t_step < schedule.total_steps {
                    &auto[rng.random_range(0..auto.len())]
                } else {
                    &human[rng.random_range(0..human.len())]
                }
            }
            ScheduleKind::Random => {
                let n = human.len() + auto.len();
                let idx = rng.random_range(0..n);
                if idx < human.len() {
                    &human[idx]
                } else {
                    &auto[idx - human.len()]
                }
            }
        };
        batch.push(item);
    }
    Ok(batch)
}

// ── Training ─────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct RmTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub theta: f64,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    /// Curve-recording cadence in steps.
    pub eval_every: usize,
}

impl Default for RmTrainConfig {
    fn default() -> Self {
        RmTrainConfig {
            steps: 600,
            batch_size: 32,
            lr: 2e-3,
            theta: 5.0,
            hidden_widths: vec![64],
            activation: Activation::Tanh,
            eval_every: 50,
        }
    }
}

/// One row of the accuracy/loss curve a training run emits.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub split: String,
    pub accuracy: f64,
    pub loss: f64,
}

/// Train a reward net on (human, auto) under the given schedule. When a
/// benchmark is supplied, accuracy/loss curve points are recorded every
/// `eval_every` steps and at the final step.
pub fn train_reward(
    input_dim: usize,
    human: &[PairExample],
    auto: &[PairExample],
    schedule: &CurriculumSchedule,
    cfg: &RmTrainConfig,
    benchmark: Option<&[PairExample]>,
    rng: &mut ChaCha8Rng,
) -> Result<(RewardNet, Vec<CurvePoint>), RewardError> {
    if cfg.steps != schedule.total_steps {
        return Err(RewardError::Invalid(
            "schedule total_steps must equal the training step count".into(),
        ));
    }
    let mut net = RewardNet::new(input_dim, cfg.hidden_widths.clone(), cfg.activation, rng);
    let mut adam = AdamState::new(net.params.len(), cfg.lr);
    let mut curve = Vec::new();
    for step in 0..cfg.steps {
        let batch = sample_batch(schedule, step, human, auto, cfg.batch_size, rng)?;
        let (loss, grads) = btt_nll_grad(&net.spec, &net.params, &batch, cfg.theta)?;
        adam_step(&mut adam, &mut net.params, &grads)?;
        let record = step % cfg.eval_every == 0 || step + 1 == cfg.steps;
        if record {
            let batch_acc = accuracy_over(&net, &batch, cfg.theta)?;
            curve.push(CurvePoint {
                step,
                split: "train".into(),
                accuracy: batch_acc,
                loss,
            });
            if let Some(bench) = benchmark {
                let refs: Vec<&PairExample> = bench.iter().collect();
                let acc = eval_accuracy(&net, bench, cfg.theta)?;
                let bench_loss = btt_nll_value(&net, &refs, cfg.theta)?;
                curve.push(CurvePoint {
                    step,
                    split: "benchmark".into(),
                    accuracy: acc,
                    loss: bench_loss,
                });
            }
        }
    }
    Ok((net, curve))
}

/// Teacher recipe: trained on the human set only.
pub fn train_teacher(
    input_dim: usize,
    human: &[PairExample],
    cfg: &RmTrainConfig,
    benchmark: Option<&[PairExample]>,
    rng: &mut ChaCha8Rng,
) -> Result<(RewardNet, Vec<CurvePoint>), RewardError> {
    if human.is_empty() {
        return Err(RewardError::Invalid("teacher needs a nonempty human set".into()));
    }
    let schedule = CurriculumSchedule::new(ScheduleKind::Random, cfg.steps)?;
    train_reward(input_dim, human, &[], &schedule, cfg, benchmark, rng)
}

/// Keep the auto-labeled pairs whose stored label matches the teacher's
/// three-way prediction. Returns the kept indices and the retention
/// fraction.
pub fn teacher_filter(
    teacher: &RewardNet,
    auto: &[PairExample],
    theta: f64,
) -> Result<(Vec<usize>, f64), RewardError> {
    if auto.is_empty() {
        return Err(RewardError::Invalid("auto set must be nonempty".into()));
    }
    let mut kept = Vec::new();
    for (i, pair) in auto.iter().enumerate() {
        let r_a = teacher.score(&pair.feat_a)?;
        let r_b = teacher.score(&pair.feat_b)?;
        if btt_argmax(r_a, r_b, theta)? == pair.label {
            kept.push(i);
        }
    }
    let retention = kept.len() as f64 / auto.len() as f64;
    Ok((kept, retention))
}

fn accuracy_over(
    net: &RewardNet,
    pairs: &[&PairExample],
    theta: f64,
) -> Result<f64, RewardError> {
    let mut correct = 0usize;
    for pair in pairs {
        let r_a = net.score(&pair.feat_a)?;
        let r_b = net.score(&pair.feat_b)?;
        if btt_argmax(r_a, r_b, theta)? == pair.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Fraction of benchmark pairs whose three-way argmax matches the label.
pub fn eval_accuracy(
    net: &RewardNet,
    benchmark: &[PairExample],
    theta: f64,
) -> Result<f64, RewardError> {
    if benchmark.is_empty() {
        return Err(RewardError::Invalid("benchmark must be nonempty".into()));
    }
    let refs: Vec<&PairExample> = benchmark.iter().collect();
    accuracy_over(net, &refs, theta)
}

/// Accuracy of raw (score_a, score_b, label) triples under BTT argmax —
/// used to probe non-network scorers such as the oracle itself.
pub fn accuracy_from_scores(
    scored: &[(f64, f64, PrefLabel)],
    theta: f64,
) -> Result<f64, RewardError> {
    if scored.is_empty() {
        return Err(RewardError::Invalid("scored set must be nonempty".into()));
    }
    let mut correct = 0usize;
    for &(r_a, r_b, label) in scored {
        if btt_argmax(r_a, r_b, theta)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / scored.len() as f64)
}
