//! Finite-difference verification of every loss gradient in the crate:
//! flow regression, ties-aware preference NLL, and the clipped GRPO
//! surrogate, each at several random parameter points.

use idflow_core::autodiff::{Activation, ParamVector};
use idflow_core::flow::{
    make_regression_batch, regression_loss_grad, sample_group, FlowPolicy, NoiseSchedule, TimeGrid,
};
use idflow_core::grpo::{compute_advantages, surrogate_loss, GroupRollout};
use idflow_core::reward::{btt_nll_grad, prepare_examples, reward_input_dim, RewardNet};
use idflow_core::rng::stream;
use idflow_core::world::{
    corrupt, gen_condition, gen_ground_truth, oracle_consistency, synth_preference_pair,
    CorruptionKind, PairRecord, PairSource, VideoSample, WorldConfig,
};
use rand::Rng;

const REL_TOL: f64 = 1e-3;

/// Central finite differences with h = 1e-4 against the analytic gradient,
/// on a deterministic subset of coordinates.
fn check_gradient(
    params: &ParamVector,
    analytic: &[f64],
    loss_at: &dyn Fn(&ParamVector) -> f64,
    stride: usize,
    label: &str,
) {
    let h = 1e-4;
    let mut checked = 0;
    for i in (0..params.len()).step_by(stride.max(1)) {
        let mut up = params.clone();
        up.values_mut()[i] += h;
        let mut dn = params.clone();
        dn.values_mut()[i] -= h;
        let fd = (loss_at(&up) - loss_at(&dn)) / (2.0 * h);
        let denom = analytic[i].abs().max(fd.abs());
        if denom < 1e-6 {
            assert!(
                (analytic[i] - fd).abs() < 1e-9,
                "{label} coord {i}: ad {} vs fd {fd}",
                analytic[i]
            );
        } else {
            assert!(
                (analytic[i] - fd).abs() / denom < REL_TOL,
                "{label} coord {i}: ad {} vs fd {fd}",
                analytic[i]
            );
        }
        checked += 1;
    }
    assert!(checked > 10, "{label}: too few coordinates checked");
}

#[test]
fn flow_regression_gradient_matches_finite_differences() {
    let world = WorldConfig { subjects: 2, frames: 4, ..WorldConfig::default() };
    let mut rng = stream(301, 0);
    let mut data = Vec::new();
    for _ in 0..6 {
        let cond = gen_condition(&world, true, &mut rng).unwrap();
        let video =
            gen_ground_truth(&cond.identities, &cond.prompt, world.frames, world.jitter, &mut rng)
                .unwrap();
        data.push((video.into_latent(), cond.embedding()));
    }
    let cond_dim = data[0].1.len();
    let items = make_regression_batch(&data, &mut rng).unwrap();

    for point in 0..3 {
        let policy = FlowPolicy::new(
            world.latent_dim(),
            cond_dim,
            vec![10],
            if point % 2 == 0 { Activation::Tanh } else { Activation::Gelu },
            &mut stream(302, point),
        );
        let (_, grads) = regression_loss_grad(&policy.spec, &policy.params, &items).unwrap();
        check_gradient(
            &policy.params,
            &grads,
            &|p| regression_loss_grad(&policy.spec, p, &items).unwrap().0,
            11,
            "flow regression",
        );
    }
}

#[test]
fn btt_nll_gradient_matches_finite_differences() {
    let world = WorldConfig::default();
    let mut rng = stream(303, 0);
    let mut records: Vec<PairRecord> = Vec::new();
    while records.len() < 8 {
        let cond = gen_condition(&world, true, &mut rng).unwrap();
        let sp = synth_preference_pair(
            &cond,
            |c, r| gen_ground_truth(&c.identities, &c.prompt, world.frames, world.jitter, r),
            |c, r| {
                let v = gen_ground_truth(&c.identities, &c.prompt, world.frames, world.jitter, r)?;
                let severity = r.random_range(0.2..0.9);
                corrupt(&v, CorruptionKind::Noise, severity, r)
            },
            0.0,
            world.tie_threshold,
            world.adherence_gap,
            PairSource::HumanLike,
            &mut rng,
        )
        .unwrap();
        if let Some(sp) = sp {
            records.push(PairRecord::from(sp));
        }
    }
    let examples = prepare_examples(&records);
    let refs: Vec<&_> = examples.iter().collect();
    let input_dim = reward_input_dim(world.frames, world.subjects, world.appearance_dim);

    for point in 0..3 {
        let net = RewardNet::new(input_dim, vec![12], Activation::Tanh, &mut stream(304, point));
        let (_, grads) = btt_nll_grad(&net.spec, &net.params, &refs, 5.0).unwrap();
        check_gradient(
            &net.params,
            &grads,
            &|p| btt_nll_grad(&net.spec, p, &refs, 5.0).unwrap().0,
            17,
            "btt nll",
        );
    }
}

#[test]
fn grpo_surrogate_gradient_matches_finite_differences() {
    let world = WorldConfig { subjects: 2, frames: 3, appearance_dim: 2, ..WorldConfig::default() };
    let mut rng = stream(305, 0);
    let cond_dim = idflow_core::world::Condition::embedding_dim(world.subjects, world.appearance_dim);
    let sampling_policy =
        FlowPolicy::new(world.latent_dim(), cond_dim, vec![12], Activation::Tanh, &mut rng);
    let schedule = NoiseSchedule::default();
    let grid = TimeGrid::uniform(3).unwrap();

    // Frozen mini-rollout sampled once under the base policy.
    let mut rollouts = Vec::new();
    for _ in 0..2 {
        let cond = gen_condition(&world, true, &mut rng).unwrap();
        let emb = cond.embedding();
        let trajectories =
            sample_group(&sampling_policy, &emb, 4, &grid, &schedule, true, &mut rng).unwrap();
        let rewards: Vec<f64> = trajectories
            .iter()
            .map(|t| {
                let video = VideoSample::from_latent(
                    world.frames,
                    world.subjects,
                    world.appearance_dim,
                    t.terminal().to_vec(),
                )
                .unwrap();
                oracle_consistency(&video, &cond.identities).unwrap()
            })
            .collect();
        let advantages = compute_advantages(&rewards).unwrap();
        rollouts.push(GroupRollout {
            condition: cond,
            cond_embedding: emb,
            trajectories,
            rewards,
            advantages,
        });
    }

    // Probe at parameter points displaced from the sampling policy; the clip
    // band is kept wide so no ratio sits near a kink at FD scale.
    let eps = 0.5;
    for point in 0..3 {
        let mut probe = sampling_policy.clone();
        let mut prng = stream(306, point);
        for v in probe.params.values_mut() {
            *v += prng.random_range(-0.003..0.003);
        }
        let eval = surrogate_loss(&rollouts, &probe, &schedule, eps).unwrap();
        check_gradient(
            &probe.params,
            &eval.grad,
            &|p| {
                let mut at = probe.clone();
                at.params = p.clone();
                surrogate_loss(&rollouts, &at, &schedule, eps).unwrap().loss
            },
            19,
            "grpo surrogate",
        );
    }
}
