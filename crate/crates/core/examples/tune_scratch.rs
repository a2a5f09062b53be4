// Scratch diagnostics for GRPO signal-to-noise. Not part of the artifact.
use idflow_core::autodiff::{AdamState, Activation};
use idflow_core::flow::{FlowPolicy, NoiseSchedule, TimeGrid, sample_group, pretrain_step};
use idflow_core::grpo::{compute_advantages, surrogate_loss, GroupRollout, evaluate_policy};
use idflow_core::rng::stream;
use idflow_core::world::{gen_condition, gen_ground_truth, oracle_consistency, sample_to_video, Condition, WorldConfig};

fn oracle(world: &WorldConfig) -> impl Fn(&Condition, &[f64]) -> f64 + '_ {
    move |cond, latent| {
        oracle_consistency(&sample_to_video(world, latent), &cond.identities).unwrap()
    }
}

fn main() {
    let world = WorldConfig::default();
    let latent_dim = world.latent_dim();
    let cond_dim = Condition::embedding_dim(world.subjects, world.appearance_dim);
    let pretrain_steps: usize = std::env::var("PRETRAIN").ok().and_then(|v| v.parse().ok()).unwrap_or(1200);
    let sigma: f64 = std::env::var("SIGMA").ok().and_then(|v| v.parse().ok()).unwrap_or(0.7);
    let group_num: usize = std::env::var("GROUPS").ok().and_then(|v| v.parse().ok()).unwrap_or(16);
    let group_size: usize = std::env::var("G").ok().and_then(|v| v.parse().ok()).unwrap_or(8);
    let nd: bool = std::env::var("ND").ok().map(|v| v == "1").unwrap_or(true);
    let probes: usize = std::env::var("PROBES").ok().and_then(|v| v.parse().ok()).unwrap_or(20);

    // quick pretrain
    let mut rng = stream(42, 1);
    let mut policy = FlowPolicy::new(latent_dim, cond_dim, vec![64, 64], Activation::Tanh, &mut rng);
    let mut adam = AdamState::new(policy.params.len(), 2e-3);
    let mut prng = stream(42, 2);
    for _ in 0..pretrain_steps {
        let mut batch = Vec::new();
        for _ in 0..16 {
            use rand::Rng;
            let flag: bool = prng.random();
            let cond = gen_condition(&world, flag, &mut prng).unwrap();
            let v = gen_ground_truth(&cond.identities, &cond.prompt, world.frames, world.jitter, &mut prng).unwrap();
            batch.push((v.into_latent(), cond.embedding()));
        }
        pretrain_step(&mut policy, &mut adam, &batch, &mut prng).unwrap();
    }

    let schedule = NoiseSchedule::new(sigma).unwrap();
    let grid = TimeGrid::uniform(8).unwrap();
    let eval_grid = TimeGrid::uniform(16).unwrap();
    let score = oracle(&world);

    let mut test_rng = stream(42, 9);
    let test: Vec<Condition> = (0..100).map(|_| gen_condition(&world, true, &mut test_rng).unwrap()).collect();
    let (base_mean, _) = evaluate_policy(&policy, &test, &eval_grid, &schedule, &score, 777).unwrap();
    println!("baseline oracle: {base_mean:.4} (sigma={sigma} groups={group_num} G={group_size} nd={nd})");

    // N independent one-round gradients at the same policy
    let mut grads: Vec<Vec<f64>> = Vec::new();
    let mut cond_rng = stream(42, 7);
    let mut samp_rng = stream(42, 8);
    for _ in 0..probes {
        let mut rollouts = Vec::new();
        for _ in 0..group_num {
            let cond = gen_condition(&world, true, &mut cond_rng).unwrap();
            let emb = cond.embedding();
            let trajs = sample_group(&policy, &emb, group_size, &grid, &schedule, nd, &mut samp_rng).unwrap();
            let rewards: Vec<f64> = trajs.iter().map(|t| score(&cond, t.terminal())).collect();
            let adv = compute_advantages(&rewards).unwrap();
            rollouts.push(GroupRollout { condition: cond, cond_embedding: emb, trajectories: trajs, rewards, advantages: adv });
        }
        let eval = surrogate_loss(&rollouts, &policy, &schedule, 1e-3).unwrap();
        grads.push(eval.grad);
    }
    let n = grads.len();
    let dim = grads[0].len();
    let mut mean = vec![0.0; dim];
    for g in &grads { for (m, x) in mean.iter_mut().zip(g) { *m += x / n as f64; } }
    let mnorm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    let avg_norm: f64 = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt()).sum::<f64>() / n as f64;
    let mut cos_sum = 0.0;
    for g in &grads {
        let dot: f64 = g.iter().zip(&mean).map(|(a, b)| a * b).sum();
        let gn: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        cos_sum += dot / (gn * mnorm);
    }
    println!("mean-grad norm {mnorm:.4}, avg per-round norm {avg_norm:.4}, mean cos(g_i, gbar) {:.4}", cos_sum / n as f64);

    // step along -mean grad (normalized), various etas, re-evaluate
    for eta in [0.01, 0.03, 0.1, 0.3] {
        let mut moved = policy.clone();
        for (p, g) in moved.params.values_mut().iter_mut().zip(&mean) {
            *p -= eta / mnorm * g;
        }
        let (m, _) = evaluate_policy(&moved, &test, &eval_grid, &schedule, &score, 777).unwrap();
        println!("eta {eta}: oracle {m:.4} (delta {:+.4})", m - base_mean);
    }

    // Optional: full GRPO training loop
    if let Ok(rounds_s) = std::env::var("ROUNDS") {
        let rounds: usize = rounds_s.parse().unwrap();
        let lr: f64 = std::env::var("LR").ok().and_then(|v| v.parse().ok()).unwrap_or(1e-3);
        let mut p = policy.clone();
        let mut ad = AdamState::new(p.params.len(), lr);
        let mut crng = stream(43, 7);
        let mut srng = stream(43, 8);
        for round in 0..rounds {
            let conds: Vec<Condition> = (0..group_num).map(|_| gen_condition(&world, true, &mut crng).unwrap()).collect();
            let cfg = idflow_core::grpo::GrpoConfig {
                group_size, group_num, train_grid_steps: 8, eval_grid_steps: 16,
                noise_differentiation: nd, lr, total_rounds: rounds,
                ..Default::default()
            };
            idflow_core::grpo::grpo_round(&mut p, &mut ad, &conds, &score, &score, &cfg, &schedule, round, &mut srng).unwrap();
            if (round + 1) % 20 == 0 {
                let (m, _) = evaluate_policy(&p, &test, &eval_grid, &schedule, &score, 777).unwrap();
                println!("  round {}: eval oracle {m:.4} ({:+.1}%)", round + 1, 100.0 * (m - base_mean) / base_mean);
            }
        }
        let (m, _) = evaluate_policy(&p, &test, &eval_grid, &schedule, &score, 777).unwrap();
        println!("final: {m:.4} ({:+.1}% vs baseline {base_mean:.4})", 100.0 * (m - base_mean) / base_mean);
    }
}
