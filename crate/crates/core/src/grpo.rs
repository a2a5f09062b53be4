//! Group-relative policy optimization of the flow policy.
//!
//! Each round samples G SDE trajectories per condition under the frozen
//! pre-round policy, scores the terminal latents, normalizes rewards into
//! advantages within each group ((r - mean) / std, zero when degenerate),
//! and ascends the clipped surrogate
//!
//! ```text
//! J = mean over groups of (1/G) Σ_i (1/T) Σ_t min(ρ Â, clip(ρ, 1-ε, 1+ε) Â)
//! ```
//!
//! where ρ is the new/old Gaussian transition density ratio obtained by
//! replaying each stored action through the current parameters. No KL term.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{adam_step, grad, AdamState, AutodiffError, ParamVector};
use crate::flow::{
    sample_group, sample_trajectory, tape_transition_mean, FlowError, FlowPolicy, NoiseSchedule,
    TimeGrid, Trajectory, LN_2PI,
};
use crate::rng::{standard_normal_vec, stream};
use crate::world::Condition;

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("non-finite reward for condition {condition_index}")]
    NonFiniteReward { condition_index: usize },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Scores a terminal latent under its condition.
pub type ScoreFn<'a> = dyn Fn(&Condition, &[f64]) -> f64 + 'a;

// ── Configuration ────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    /// Trajectories per group (G).
    pub group_size: usize,
    /// Groups (conditions) per round.
    pub group_num: usize,
    /// Trust-region half-width for the density ratio.
    pub clip_eps: f64,
    /// Integration steps while training.
    pub train_grid_steps: usize,
    /// Integration steps while evaluating.
    pub eval_grid_steps: usize,
    /// Give each group member its own initial latent.
    pub noise_differentiation: bool,
    /// Gradient steps per round on the frozen rollouts.
    pub updates_per_round: usize,
    pub lr: f64,
    pub total_rounds: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            group_num: 16,
            clip_eps: 1e-3,
            train_grid_steps: 8,
            eval_grid_steps: 16,
            noise_differentiation: true,
            updates_per_round: 1,
            lr: 1e-3,
            total_rounds: 60,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.group_size < 2 {
            return Err(GrpoError::Invalid("group_size must be >= 2".into()));
        }
        if self.group_num == 0 {
            return Err(GrpoError::Invalid("group_num must be >= 1".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(GrpoError::Invalid("clip_eps must lie in (0, 1)".into()));
        }
        if self.train_grid_steps == 0 || self.train_grid_steps > self.eval_grid_steps {
            return Err(GrpoError::Invalid(
                "grid steps must satisfy 1 <= train <= eval".into(),
            ));
        }
        if self.lr <= 0.0 {
            return Err(GrpoError::Invalid("lr must be positive".into()));
        }
        Ok(())
    }
}

// ── Rollouts and snapshots ───────────────────────────────────────────

/// Frozen pre-update policy parameters.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    params: ParamVector,
}

impl PolicySnapshot {
    pub fn take(policy: &FlowPolicy) -> Self {
        PolicySnapshot { params: policy.params.clone() }
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn restore_into(&self, policy: &mut FlowPolicy) {
        policy.params = self.params.clone();
    }
}

/// G trajectories under one condition with terminal rewards and
/// group-normalized advantages.
#[derive(Debug, Clone)]
pub struct GroupRollout {
    pub condition: Condition,
    pub cond_embedding: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

// ── Advantages ───────────────────────────────────────────────────────

const ADV_STD_FLOOR: f64 = 1e-8;

/// Group-relative normalization (r - mean) / max(std, 1e-8) with the
/// population standard deviation. All-equal rewards yield all zeros.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::Invalid("advantage groups need at least 2 rewards".into()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = var.sqrt().max(ADV_STD_FLOOR);
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

// ── Surrogate objective ──────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct SurrogateEval {
    /// Value of the loss (the negated objective).
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Fraction of (trajectory, step) terms whose ratio left the clip band.
    pub clipped_fraction: f64,
}

/// Loss to minimize: the negative of the clipped surrogate objective.
/// Every stored action is replayed through the current parameters to get
/// the new-policy log-density; the old side comes from the statistics
/// stored at sampling time.
pub fn surrogate_loss(
    rollouts: &[GroupRollout],
    policy: &FlowPolicy,
    schedule: &NoiseSchedule,
    clip_eps: f64,
) -> Result<SurrogateEval, GrpoError> {
    if rollouts.is_empty() {
        return Err(GrpoError::Invalid("no rollouts".into()));
    }
    if !(clip_eps > 0.0 && clip_eps < 1.0) {
        return Err(GrpoError::Invalid("clip_eps must lie in (0, 1)".into()));
    }
    for rollout in rollouts {
        if rollout.trajectories.len() != rollout.advantages.len()
            || rollout.trajectories.len() != rollout.rewards.len()
            || rollout.trajectories.len() < 2
        {
            return Err(GrpoError::Invalid(
                "rollout must carry G >= 2 trajectories with rewards and advantages".into(),
            ));
        }
        for traj in &rollout.trajectories {
            if traj.steps.is_empty() {
                return Err(GrpoError::Invalid("trajectory has no stored steps".into()));
            }
            if traj.steps.iter().any(|s| s.std <= 0.0 || !s.logp.is_finite()) {
                return Err(GrpoError::Invalid(
                    "trajectory lacks stochastic transition statistics".into(),
                ));
            }
        }
    }

    let mut clipped = 0usize;
    let mut terms = 0usize;
    let (loss, grad_vec) = {
        let clipped = &mut clipped;
        let terms = &mut terms;
        grad(&policy.params, |tape| {
            let mut total = None;
            for rollout in rollouts {
                let mut group_sum = None;
                for (traj, &adv) in rollout.trajectories.iter().zip(&rollout.advantages) {
                    let mut traj_sum = None;
                    for step in &traj.steps {
                        let mean = tape_transition_mean(
                            tape,
                            &policy.spec,
                            step,
                            &rollout.cond_embedding,
                            schedule,
                        )?;
                        let action = tape.constant(&step.next)?;
                        let diff = tape.sub(action, mean)?;
                        let sq = tape.square(diff)?;
                        let ssq = tape.sum(sq)?;
                        let d = step.next.len() as f64;
                        let log_norm = -d * step.std.ln() - 0.5 * d * LN_2PI;
                        let scaled = tape.scale(ssq, -0.5 / (step.std * step.std))?;
                        let norm = tape.scalar(log_norm)?;
                        let logp_new = tape.add(scaled, norm)?;
                        let old = tape.scalar(step.logp)?;
                        let log_ratio = tape.sub(logp_new, old)?;
                        let ratio = tape.exp(log_ratio)?;

                        let ratio_val = tape.value(ratio)[0];
                        *terms += 1;
                        if (ratio_val - 1.0).abs() > clip_eps {
                            *clipped += 1;
                        }

                        let unclipped = tape.scale(ratio, adv)?;
                        let clamp = tape.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)?;
                        let clipped_term = tape.scale(clamp, adv)?;
                        let term = tape.min(unclipped, clipped_term)?;
                        traj_sum = Some(match traj_sum {
                            Some(t) => tape.add(t, term)?,
                            None => term,
                        });
                    }
                    let traj_mean =
                        tape.scale(traj_sum.unwrap(), 1.0 / traj.steps.len() as f64)?;
                    group_sum = Some(match group_sum {
                        Some(g) => tape.add(g, traj_mean)?,
                        None => traj_mean,
                    });
                }
                let group_mean = tape.scale(
                    group_sum.unwrap(),
                    1.0 / rollout.trajectories.len() as f64,
                )?;
                total = Some(match total {
                    Some(t) => tape.add(t, group_mean)?,
                    None => group_mean,
                });
            }
            let objective = tape.scale(total.unwrap(), 1.0 / rollouts.len() as f64)?;
            tape.scale(objective, -1.0)
        })?
    };
    Ok(SurrogateEval {
        loss,
        grad: grad_vec,
        clipped_fraction: clipped as f64 / terms as f64,
    })
}

// ── Training round ───────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub oracle_mean: f64,
    pub surrogate: f64,
    pub clipped_fraction: f64,
}

/// One GRPO round: snapshot, sample a group per condition under the frozen
/// policy, score terminals, normalize advantages, then take
/// `updates_per_round` gradient steps on the surrogate.
#[allow(clippy::too_many_arguments)]
pub fn grpo_round(
    policy: &mut FlowPolicy,
    adam: &mut AdamState,
    conditions: &[Condition],
    reward_fn: &ScoreFn,
    oracle_fn: &ScoreFn,
    cfg: &GrpoConfig,
    schedule: &NoiseSchedule,
    round: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RoundMetrics, GrpoError> {
    cfg.validate()?;
    if conditions.len() != cfg.group_num {
        return Err(GrpoError::Invalid(format!(
            "expected {} conditions per round, got {}",
            cfg.group_num,
            conditions.len()
        )));
    }
    let grid = TimeGrid::uniform(cfg.train_grid_steps)?;
    let snapshot = PolicySnapshot::take(policy);

    let mut rollouts = Vec::with_capacity(conditions.len());
    let mut all_rewards = Vec::new();
    let mut oracle_sum = 0.0;
    let mut oracle_count = 0usize;
    for (ci, cond) in conditions.iter().enumerate() {
        let cond_embedding = cond.embedding();
        let trajectories = sample_group(
            policy,
            &cond_embedding,
            cfg.group_size,
            &grid,
            schedule,
            cfg.noise_differentiation,
            rng,
        )?;
        let mut rewards = Vec::with_capacity(trajectories.len());
        for traj in &trajectories {
            let r = reward_fn(cond, traj.terminal());
            if !r.is_finite() {
                return Err(GrpoError::NonFiniteReward { condition_index: ci });
            }
            oracle_sum += oracle_fn(cond, traj.terminal());
            oracle_count += 1;
            rewards.push(r);
        }
        let advantages = compute_advantages(&rewards)?;
        all_rewards.extend_from_slice(&rewards);
        rollouts.push(GroupRollout {
            condition: cond.clone(),
            cond_embedding,
            trajectories,
            rewards,
            advantages,
        });
    }

    let n = all_rewards.len() as f64;
    let reward_mean = all_rewards.iter().sum::<f64>() / n;
    let reward_var =
        all_rewards.iter().map(|r| (r - reward_mean) * (r - reward_mean)).sum::<f64>() / n;

    // All-zero advantages mean an exactly zero gradient; skip the replay.
    let degenerate = rollouts.iter().all(|ro| ro.advantages.iter().all(|&a| a == 0.0));
    let mut surrogate = 0.0;
    let mut clipped_fraction = 0.0;
    if !degenerate {
        for _ in 0..cfg.updates_per_round {
            let eval = surrogate_loss(&rollouts, policy, schedule, cfg.clip_eps)?;
            adam_step(adam, &mut policy.params, &eval.grad)?;
            surrogate = eval.loss;
            clipped_fraction = eval.clipped_fraction;
        }
    }
    if cfg.updates_per_round == 0 {
        // Nothing moved; keep the snapshot semantics visible to callers.
        debug_assert_eq!(snapshot.params().values(), policy.params.values());
    }

    Ok(RoundMetrics {
        round,
        reward_mean,
        reward_std: reward_var.sqrt(),
        oracle_mean: oracle_sum / oracle_count as f64,
        surrogate,
        clipped_fraction,
    })
}

// ── Evaluation ───────────────────────────────────────────────────────

/// Sample once per condition with the eval grid via the SDE (seeded per
/// condition from `eval_seed`), score the terminals, and return
/// (mean, population std).
pub fn evaluate_policy(
    policy: &FlowPolicy,
    conditions: &[Condition],
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    score_fn: &ScoreFn,
    eval_seed: u64,
) -> Result<(f64, f64), GrpoError> {
    if conditions.is_empty() {
        return Err(GrpoError::Invalid("evaluation needs at least one condition".into()));
    }
    let mut scores = Vec::with_capacity(conditions.len());
    for (i, cond) in conditions.iter().enumerate() {
        let mut rng = stream(eval_seed, i as u64);
        let z1 = standard_normal_vec(&mut rng, policy.latent_dim());
        let cond_emb = cond.embedding();
        let traj = sample_trajectory(policy, &cond_emb, z1, grid, schedule, &mut rng)?;
        let s = score_fn(cond, traj.terminal());
        if !s.is_finite() {
            return Err(GrpoError::NonFiniteReward { condition_index: i });
        }
        scores.push(s);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

// ── Ablation harness ─────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub group_num: usize,
    pub noise_diff: bool,
    pub final_oracle_mean: f64,
    pub seed: u64,
}

/// The four ablation configurations, in emission order.
pub const ABLATION_GRID: [(usize, bool); 4] =
    [(4, false), (4, true), (16, false), (16, true)];

/// Train the cross of group_num x noise_differentiation from the same
/// starting policy and seed; report each configuration's final oracle mean
/// on the shared evaluation set.
#[allow(clippy::too_many_arguments)]
pub fn ablation_run(
    base: &FlowPolicy,
    base_cfg: &GrpoConfig,
    schedule: &NoiseSchedule,
    sample_conditions: &dyn Fn(usize, usize) -> Vec<Condition>,
    reward_fn: &ScoreFn,
    oracle_fn: &ScoreFn,
    eval_conditions: &[Condition],
    eval_grid: &TimeGrid,
    seed: u64,
) -> Result<Vec<AblationRow>, GrpoError> {
    let snapshot = PolicySnapshot::take(base);
    let mut rows = Vec::with_capacity(ABLATION_GRID.len());
    for (group_num, noise_diff) in ABLATION_GRID {
        let cfg = GrpoConfig {
            group_num,
            noise_differentiation: noise_diff,
            ..base_cfg.clone()
        };
        cfg.validate()?;
        let mut policy = base.clone();
        snapshot.restore_into(&mut policy);
        let mut adam = AdamState::new(policy.params.len(), cfg.lr);
        let mut rng = stream(seed, 0);
        for round in 0..cfg.total_rounds {
            let conditions = sample_conditions(round, cfg.group_num);
            grpo_round(
                &mut policy,
                &mut adam,
                &conditions,
                reward_fn,
                oracle_fn,
                &cfg,
                schedule,
                round,
                &mut rng,
            )?;
        }
        let (final_oracle_mean, _) =
            evaluate_policy(&policy, eval_conditions, eval_grid, schedule, oracle_fn, seed)?;
        rows.push(AblationRow { group_num, noise_diff, final_oracle_mean, seed });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Activation;
    use crate::rng::stream;
    use crate::world::{gen_condition, oracle_consistency, VideoSample, WorldConfig};

    fn small_world() -> WorldConfig {
        WorldConfig { frames: 3, subjects: 2, appearance_dim: 2, ..WorldConfig::default() }
    }

    fn setup(seed: u64) -> (WorldConfig, FlowPolicy, Vec<Condition>) {
        let world = small_world();
        let mut rng = stream(seed, 0);
        let cond_dim = Condition::embedding_dim(world.subjects, world.appearance_dim);
        let policy =
            FlowPolicy::new(world.latent_dim(), cond_dim, vec![16], Activation::Tanh, &mut rng);
        let conditions: Vec<Condition> =
            (0..3).map(|_| gen_condition(&world, true, &mut rng).unwrap()).collect();
        (world, policy, conditions)
    }

    fn oracle_score(world: &WorldConfig) -> impl Fn(&Condition, &[f64]) -> f64 + '_ {
        move |cond: &Condition, latent: &[f64]| {
            let video = VideoSample::from_latent(
                world.frames,
                world.subjects,
                world.appearance_dim,
                latent.to_vec(),
            )
            .unwrap();
            oracle_consistency(&video, &cond.identities).unwrap()
        }
    }

    #[test]
    fn advantages_match_hand_computation() {
        let adv = compute_advantages(&[1.0, 2.0, 3.0]).unwrap();
        let want = 1.224_744_871_391_589;
        assert!((adv[0] + want).abs() < 1e-9);
        assert!(adv[1].abs() < 1e-12);
        assert!((adv[2] - want).abs() < 1e-9);
    }

    #[test]
    fn degenerate_rewards_give_zero_advantages() {
        let adv = compute_advantages(&[2.5; 6]).unwrap();
        assert!(adv.iter().all(|&a| a == 0.0));
        assert!(compute_advantages(&[1.0]).is_err());
    }

    #[test]
    fn advantages_are_normalized() {
        let mut rng = stream(100, 0);
        use rand::Rng;
        for _ in 0..20 {
            let rewards: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let adv = compute_advantages(&rewards).unwrap();
            let mean = adv.iter().sum::<f64>() / adv.len() as f64;
            let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / adv.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    fn build_rollouts(
        world: &WorldConfig,
        policy: &FlowPolicy,
        conditions: &[Condition],
        schedule: &NoiseSchedule,
        seed: u64,
    ) -> Vec<GroupRollout> {
        let grid = TimeGrid::uniform(3).unwrap();
        let score = oracle_score(world);
        let mut rng = stream(seed, 0);
        conditions
            .iter()
            .map(|cond| {
                let emb = cond.embedding();
                let trajectories =
                    sample_group(policy, &emb, 4, &grid, schedule, true, &mut rng).unwrap();
                let rewards: Vec<f64> =
                    trajectories.iter().map(|t| score(cond, t.terminal())).collect();
                let advantages = compute_advantages(&rewards).unwrap();
                GroupRollout {
                    condition: cond.clone(),
                    cond_embedding: emb,
                    trajectories,
                    rewards,
                    advantages,
                }
            })
            .collect()
    }

    #[test]
    fn unchanged_policy_has_unit_ratios_and_zero_loss() {
        let (world, policy, conditions) = setup(101);
        let schedule = NoiseSchedule::default();
        let rollouts = build_rollouts(&world, &policy, &conditions, &schedule, 102);
        let eval = surrogate_loss(&rollouts, &policy, &schedule, 1e-3).unwrap();
        // Advantages are zero-mean per group and every ratio is 1.
        assert!(eval.loss.abs() < 1e-12, "loss {}", eval.loss);
        assert_eq!(eval.clipped_fraction, 0.0);

        // Explicit ratio check through the snapshot round trip.
        let snapshot = PolicySnapshot::take(&policy);
        let mut moved = policy.clone();
        for v in moved.params.values_mut() {
            *v += 0.01;
        }
        snapshot.restore_into(&mut moved);
        for rollout in &rollouts {
            for traj in &rollout.trajectories {
                for step in &traj.steps {
                    let replayed = crate::flow::transition_logprob(&step.mean, step.std, &step.next)
                        .unwrap();
                    let ratio = (replayed - step.logp).exp();
                    assert!((ratio - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn clip_arithmetic_matches_hand_cases() {
        // term = min(rho * adv, clip(rho) * adv)
        let eps = 1e-3;
        let case = |rho: f64, adv: f64| -> f64 {
            let clipped = rho.clamp(1.0 - eps, 1.0 + eps);
            (rho * adv).min(clipped * adv)
        };
        assert!((case(1.002, 1.0) - 1.001).abs() < 1e-12);
        assert!((case(0.5, -1.0) - (-0.999)).abs() < 1e-12);
    }

    #[test]
    fn surrogate_term_is_bounded_by_clip() {
        let (world, policy, conditions) = setup(103);
        let schedule = NoiseSchedule::default();
        let rollouts = build_rollouts(&world, &policy, &conditions, &schedule, 104);
        // Perturb the policy so ratios leave 1.
        let mut moved = policy.clone();
        for (i, v) in moved.params.values_mut().iter_mut().enumerate() {
            *v += 0.003 * ((i % 7) as f64 - 3.0);
        }
        let eps = 0.2;
        let eval = surrogate_loss(&rollouts, &moved, &schedule, eps).unwrap();
        // |objective| <= (1 + eps) * max |advantage| by the min/clip bound.
        let max_adv = rollouts
            .iter()
            .flat_map(|r| r.advantages.iter())
            .fold(0.0_f64, |m, &a| m.max(a.abs()));
        assert!(eval.loss.abs() <= (1.0 + eps) * max_adv + 1e-9);
        assert!((0.0..=1.0).contains(&eval.clipped_fraction));
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let (world, policy, conditions) = setup(105);
        let schedule = NoiseSchedule::default();
        let rollouts = build_rollouts(&world, &policy, &conditions[..1], &schedule, 106);
        // Check at parameters displaced from the sampling policy so the
        // ratios sit away from the clip kinks (eps kept wide).
        let mut probe = policy.clone();
        for (i, v) in probe.params.values_mut().iter_mut().enumerate() {
            *v += 0.002 * (((i * 37) % 11) as f64 / 11.0 - 0.5);
        }
        let eps = 0.5;
        let eval = surrogate_loss(&rollouts, &probe, &schedule, eps).unwrap();
        let h = 1e-5;
        for i in (0..probe.params.len()).step_by(13) {
            let mut up = probe.clone();
            up.params.values_mut()[i] += h;
            let mut dn = probe.clone();
            dn.params.values_mut()[i] -= h;
            let lu = surrogate_loss(&rollouts, &up, &schedule, eps).unwrap().loss;
            let ld = surrogate_loss(&rollouts, &dn, &schedule, eps).unwrap().loss;
            let fd = (lu - ld) / (2.0 * h);
            let denom = eval.grad[i].abs().max(fd.abs());
            if denom < 1e-6 {
                assert!((eval.grad[i] - fd).abs() < 1e-8);
            } else {
                assert!(
                    (eval.grad[i] - fd).abs() / denom < 1e-3,
                    "coord {i}: ad {} fd {fd}",
                    eval.grad[i]
                );
            }
        }
    }

    #[test]
    fn zero_updates_leave_parameters_unchanged() {
        let (world, mut policy, conditions) = setup(107);
        let before = policy.params.values().to_vec();
        let mut adam = AdamState::new(policy.params.len(), 1e-3);
        let cfg = GrpoConfig {
            group_size: 3,
            group_num: 2,
            train_grid_steps: 3,
            eval_grid_steps: 3,
            updates_per_round: 0,
            ..GrpoConfig::default()
        };
        let schedule = NoiseSchedule::default();
        let score = oracle_score(&world);
        let metrics = grpo_round(
            &mut policy,
            &mut adam,
            &conditions[..2],
            &score,
            &score,
            &cfg,
            &schedule,
            0,
            &mut stream(108, 0),
        )
        .unwrap();
        assert_eq!(policy.params.values(), before.as_slice());
        assert_eq!(metrics.round, 0);
        assert!(metrics.reward_mean.is_finite());
    }

    #[test]
    fn constant_reward_leaves_parameters_unchanged() {
        let (world, mut policy, conditions) = setup(109);
        let before = policy.params.values().to_vec();
        let mut adam = AdamState::new(policy.params.len(), 1e-3);
        let cfg = GrpoConfig {
            group_size: 3,
            group_num: 2,
            train_grid_steps: 3,
            eval_grid_steps: 3,
            ..GrpoConfig::default()
        };
        let schedule = NoiseSchedule::default();
        let constant = |_: &Condition, _: &[f64]| 1.25;
        let oracle = oracle_score(&world);
        let metrics = grpo_round(
            &mut policy,
            &mut adam,
            &conditions[..2],
            &constant,
            &oracle,
            &cfg,
            &schedule,
            0,
            &mut stream(110, 0),
        )
        .unwrap();
        assert_eq!(policy.params.values(), before.as_slice());
        assert_eq!(metrics.surrogate, 0.0);
        assert_eq!(metrics.reward_std, 0.0);
    }

    #[test]
    fn non_finite_reward_names_the_condition() {
        let (_, mut policy, conditions) = setup(111);
        let mut adam = AdamState::new(policy.params.len(), 1e-3);
        let cfg = GrpoConfig {
            group_size: 2,
            group_num: 2,
            train_grid_steps: 2,
            eval_grid_steps: 2,
            ..GrpoConfig::default()
        };
        let schedule = NoiseSchedule::default();
        let bad = |_: &Condition, _: &[f64]| f64::NAN;
        let good = |_: &Condition, _: &[f64]| 0.0;
        let err = grpo_round(
            &mut policy,
            &mut adam,
            &conditions[..2],
            &bad,
            &good,
            &cfg,
            &schedule,
            0,
            &mut stream(112, 0),
        )
        .unwrap_err();
        match err {
            GrpoError::NonFiniteReward { condition_index } => assert_eq!(condition_index, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn evaluation_is_seed_stable() {
        let (world, policy, conditions) = setup(113);
        let grid = TimeGrid::uniform(4).unwrap();
        let schedule = NoiseSchedule::default();
        let score = oracle_score(&world);
        let (m1, s1) =
            evaluate_policy(&policy, &conditions, &grid, &schedule, &score, 999).unwrap();
        let (m2, s2) =
            evaluate_policy(&policy, &conditions, &grid, &schedule, &score, 999).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(s1, s2);
        let (m3, _) =
            evaluate_policy(&policy, &conditions, &grid, &schedule, &score, 1000).unwrap();
        assert_ne!(m1, m3);
    }

    #[test]
    fn surrogate_rejects_deterministic_transitions() {
        let (world, policy, conditions) = setup(114);
        let schedule = NoiseSchedule::new(0.0).unwrap();
        let rollouts = build_rollouts(&world, &policy, &conditions[..1], &schedule, 115);
        assert!(matches!(
            surrogate_loss(&rollouts, &policy, &schedule, 1e-3),
            Err(GrpoError::Invalid(_))
        ));
    }

    #[test]
    fn grpo_config_validation() {
        assert!(GrpoConfig::default().validate().is_ok());
        assert!(GrpoConfig { group_size: 1, ..GrpoConfig::default() }.validate().is_err());
        assert!(GrpoConfig { clip_eps: 0.0, ..GrpoConfig::default() }.validate().is_err());
        assert!(GrpoConfig { clip_eps: 1.5, ..GrpoConfig::default() }.validate().is_err());
        assert!(GrpoConfig {
            train_grid_steps: 20,
            eval_grid_steps: 10,
            ..GrpoConfig::default()
        }
        .validate()
        .is_err());
    }
}
