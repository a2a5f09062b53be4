//! Command implementations: pretraining, preference-data synthesis, reward
//! training, teacher filtering, GRPO alignment, evaluation, and ablation.
//!
//! Every command derives its randomness from (config.seed, fixed stream
//! tag), so re-running a command with the same config writes byte-identical
//! outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use idflow_core::autodiff::AdamState;
use idflow_core::flow::{FlowPolicy, NoiseSchedule, TimeGrid};
use idflow_core::grpo::{ablation_run, evaluate_policy, grpo_round};
use idflow_core::reward::{
    eval_accuracy, prepare_examples, reward_input_dim, teacher_filter, train_reward,
    CurriculumSchedule, CurvePoint, PairExample, RewardNet, RmTrainConfig, ScheduleKind,
};
use idflow_core::rng::{standard_normal_vec, stream};
use idflow_core::world::{
    corrupt, gen_condition, gen_ground_truth, oracle_agreement, oracle_consistency, read_pairs,
    sample_to_video, synth_preference_pair, write_pairs, Condition, CorruptionKind, PairRecord,
    PairSource, PrefLabel, VideoSample, WorldConfig,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::CliError;

// Stream tags, one per consumer of the base seed.
const TAG_FLOW_INIT: u64 = 1;
const TAG_PRETRAIN: u64 = 2;
const TAG_PREFS_HUMAN: u64 = 3;
const TAG_PREFS_AUTO: u64 = 4;
const TAG_PREFS_BENCH: u64 = 5;
const TAG_RM_TRAIN: u64 = 6;
const TAG_GRPO_CONDITIONS: u64 = 7;
const TAG_GRPO_SAMPLING: u64 = 8;
const TAG_TEST_CONDITIONS: u64 = 9;
const TAG_EVAL_SEED: u64 = 10;
const TAG_ABLATION: u64 = 11;

pub fn checkpoints_dir(config: &RunConfig) -> PathBuf {
    config.out_dir.join("checkpoints")
}

pub fn data_dir(config: &RunConfig) -> PathBuf {
    config.out_dir.join("data")
}

pub fn metrics_dir(config: &RunConfig) -> PathBuf {
    config.out_dir.join("metrics")
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Lossless float formatting for CSV cells.
fn fmt_f(v: f64) -> String {
    format!("{v}")
}

// ── Shared wiring ────────────────────────────────────────────────────

fn flow_checkpoint(config: &RunConfig, name: &str) -> PathBuf {
    checkpoints_dir(config).join(format!("{name}.json"))
}

fn load_flow_policy(config: &RunConfig, name: &str) -> Result<FlowPolicy, CliError> {
    let (manifest, params) = load_checkpoint(&flow_checkpoint(config, name))?;
    if manifest.kind != "flow" {
        return Err(CliError::Precondition(format!(
            "checkpoint {name} holds a {} net, expected flow",
            manifest.kind
        )));
    }
    Ok(FlowPolicy { spec: manifest.net, params })
}

fn load_reward_net(path: &Path) -> Result<RewardNet, CliError> {
    let (manifest, params) = load_checkpoint(path)?;
    if manifest.kind != "reward" {
        return Err(CliError::Precondition(format!(
            "checkpoint {} holds a {} net, expected reward",
            path.display(),
            manifest.kind
        )));
    }
    Ok(RewardNet { spec: manifest.net, params })
}

/// Oracle scorer over terminal latents.
fn oracle_score_fn(world: &WorldConfig) -> impl Fn(&Condition, &[f64]) -> f64 + '_ {
    move |cond, latent| {
        let video = sample_to_video(world, latent);
        oracle_consistency(&video, &cond.identities).unwrap_or(f64::NAN)
    }
}

/// Learned-reward scorer over terminal latents.
fn learned_score_fn<'a>(
    world: &'a WorldConfig,
    net: &'a RewardNet,
) -> impl Fn(&Condition, &[f64]) -> f64 + 'a {
    move |cond, latent| {
        let video = sample_to_video(world, latent);
        net.score_video(cond, &video).unwrap_or(f64::NAN)
    }
}

fn gen_conditions(
    world: &WorldConfig,
    count: usize,
    identity_consistent: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Condition>, CliError> {
    (0..count)
        .map(|_| {
            gen_condition(world, identity_consistent, rng)
                .map_err(|e| CliError::Numerical(e.to_string()))
        })
        .collect()
}

/// The fixed held-out evaluation conditions for this config.
fn test_conditions(config: &RunConfig) -> Result<Vec<Condition>, CliError> {
    let mut rng = stream(config.seed, TAG_TEST_CONDITIONS);
    gen_conditions(&config.world, config.eval_conditions, true, &mut rng)
}

// ── pretrain ─────────────────────────────────────────────────────────

pub fn cmd_pretrain(config: &RunConfig) -> Result<(), CliError> {
    ensure_dir(&metrics_dir(config))?;
    let world = &config.world;
    let latent_dim = world.latent_dim();
    let cond_dim = Condition::embedding_dim(world.subjects, world.appearance_dim);

    let mut init_rng = stream(config.seed, TAG_FLOW_INIT);
    let mut policy = FlowPolicy::new(
        latent_dim,
        cond_dim,
        config.flow.hidden_widths.clone(),
        config.flow.activation,
        &mut init_rng,
    );
    let mut adam = AdamState::new(policy.params.len(), config.flow.pretrain_lr);
    let mut rng = stream(config.seed, TAG_PRETRAIN);

    let mut csv = String::from("step,loss\n");
    for step in 0..config.flow.pretrain_steps {
        // Fresh ground-truth batch each step; prompts are a 50/50 mix of
        // identity-describing and plain so both condition styles are seen.
        let mut batch = Vec::with_capacity(config.flow.pretrain_batch);
        for _ in 0..config.flow.pretrain_batch {
            let flag: bool = rng.random();
            let cond = gen_condition(world, flag, &mut rng)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let video =
                gen_ground_truth(&cond.identities, &cond.prompt, world.frames, world.jitter, &mut rng)
                    .map_err(|e| CliError::Numerical(e.to_string()))?;
            batch.push((video.into_latent(), cond.embedding()));
        }
        let loss = idflow_core::flow::pretrain_step(&mut policy, &mut adam, &batch, &mut rng)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let _ = writeln!(csv, "{step},{}", fmt_f(loss));
    }
    write_text(&metrics_dir(config).join("pretrain_loss.csv"), &csv)?;
    save_checkpoint(
        &checkpoints_dir(config),
        "flow_pretrained",
        "flow",
        &policy.spec,
        config.seed,
        config.flow.pretrain_steps as u64,
        &policy.params,
    )?;
    println!(
        "pretrained flow policy: {} params, {} steps",
        policy.params.len(),
        config.flow.pretrain_steps
    );
    Ok(())
}

// ── gen-prefs ────────────────────────────────────────────────────────

struct SplitSpec {
    name: &'static str,
    tag: u64,
    count: usize,
    label_noise: f64,
    source: PairSource,
}

pub fn cmd_gen_prefs(config: &RunConfig) -> Result<(), CliError> {
    let world = &config.world;
    let policy = load_flow_policy(config, "flow_pretrained")?;
    ensure_dir(&data_dir(config))?;
    ensure_dir(&metrics_dir(config))?;

    let grid = TimeGrid::uniform(config.grpo.eval_grid_steps)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let schedule =
        NoiseSchedule::new(config.flow.sigma_scale).map_err(|e| CliError::Config(e.to_string()))?;

    let splits = [
        SplitSpec {
            name: "human_like",
            tag: TAG_PREFS_HUMAN,
            count: config.prefs.human_count(),
            label_noise: world.human_label_noise,
            source: PairSource::HumanLike,
        },
        SplitSpec {
            name: "auto_like",
            tag: TAG_PREFS_AUTO,
            count: config.prefs.auto_count(),
            label_noise: world.auto_label_noise,
            source: PairSource::AutoLike,
        },
        SplitSpec {
            name: "benchmark",
            tag: TAG_PREFS_BENCH,
            count: config.prefs.benchmark_pairs,
            label_noise: 0.0,
            source: PairSource::HumanLike,
        },
    ];

    let mut balance = String::from("split,pairs,a_wins,b_wins,tie,oracle_agreement\n");
    for split in &splits {
        let mut rng = stream(config.seed, split.tag);
        let records = synth_split(world, &policy, &grid, &schedule, split, &mut rng)?;
        let path = data_dir(config).join(format!("{}.jsonl", split.name));
        write_pairs(&path, &records).map_err(|e| CliError::Io(e.to_string()))?;

        let count = |l: PrefLabel| records.iter().filter(|r| r.label == l).count();
        let agreement = oracle_agreement(&records, world.tie_threshold);
        let _ = writeln!(
            balance,
            "{},{},{},{},{},{}",
            split.name,
            records.len(),
            count(PrefLabel::AWins),
            count(PrefLabel::BWins),
            count(PrefLabel::Tie),
            fmt_f(agreement)
        );
        println!(
            "{}: {} pairs (A {} / B {} / tie {}), oracle agreement {:.3}",
            split.name,
            records.len(),
            count(PrefLabel::AWins),
            count(PrefLabel::BWins),
            count(PrefLabel::Tie),
            agreement
        );
    }
    write_text(&metrics_dir(config).join("gen_prefs_balance.csv"), &balance)?;
    Ok(())
}

/// Candidate generators: ground truth vs. its corrupted copy, two policy
/// samples, or a policy sample vs. its corrupted copy, at mixed severities.
fn synth_split(
    world: &WorldConfig,
    policy: &FlowPolicy,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    split: &SplitSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PairRecord>, CliError> {
    let mut records = Vec::with_capacity(split.count);
    let max_attempts = split.count * 50;
    let mut attempts = 0;
    while records.len() < split.count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(CliError::Numerical(format!(
                "pair synthesis for {} stalled after {attempts} attempts",
                split.name
            )));
        }
        let cond =
            gen_condition(world, true, rng).map_err(|e| CliError::Numerical(e.to_string()))?;
        let recipe = rng.random_range(0..3u8);
        let severity = rng.random_range(0.15..0.9);
        let kind = draw_corruption_kind(world.subjects, rng);
        let swap_sides: bool = rng.random();

        let sample_policy = |c: &Condition, r: &mut ChaCha8Rng| -> Result<VideoSample, idflow_core::world::WorldError> {
            let z1 = standard_normal_vec(r, policy.latent_dim());
            let traj = idflow_core::flow::sample_trajectory(
                policy,
                &c.embedding(),
                z1,
                grid,
                schedule,
                r,
            )
            .map_err(|e| idflow_core::world::WorldError::Invalid(e.to_string()))?;
            Ok(sample_to_video(world, traj.terminal()))
        };

        let synth = |gen_a: Box<dyn FnOnce(&Condition, &mut ChaCha8Rng) -> Result<VideoSample, idflow_core::world::WorldError>>,
                     gen_b: Box<dyn FnOnce(&Condition, &mut ChaCha8Rng) -> Result<VideoSample, idflow_core::world::WorldError>>,
                     rng: &mut ChaCha8Rng| {
            if swap_sides {
                synth_preference_pair(
                    &cond,
                    gen_b,
                    gen_a,
                    split.label_noise,
                    world.tie_threshold,
                    world.adherence_gap,
                    split.source,
                    rng,
                )
            } else {
                synth_preference_pair(
                    &cond,
                    gen_a,
                    gen_b,
                    split.label_noise,
                    world.tie_threshold,
                    world.adherence_gap,
                    split.source,
                    rng,
                )
            }
        };

        let result = match recipe {
            0 => {
                // Ground truth vs. a corrupted copy of itself.
                let clean = gen_ground_truth(&cond.identities, &cond.prompt, world.frames, world.jitter, rng)
                    .map_err(|e| CliError::Numerical(e.to_string()))?;
                let clean_b = clean.clone();
                synth(
                    Box::new(move |_, _| Ok(clean)),
                    Box::new(move |_, r| corrupt(&clean_b, kind, severity, r)),
                    rng,
                )
            }
            1 => {
                // Two independent policy samples.
                synth(
                    Box::new(sample_policy),
                    Box::new(sample_policy),
                    rng,
                )
            }
            _ => {
                // Policy sample vs. its corrupted copy.
                let base = sample_policy(&cond, rng).map_err(|e| CliError::Numerical(e.to_string()))?;
                let base_b = base.clone();
                synth(
                    Box::new(move |_, _| Ok(base)),
                    Box::new(move |_, r| corrupt(&base_b, kind, severity, r)),
                    rng,
                )
            }
        }
        .map_err(|e| CliError::Numerical(e.to_string()))?;

        if let Some(sp) = result {
            records.push(PairRecord::from(sp));
        }
    }
    Ok(records)
}

fn draw_corruption_kind(subjects: usize, rng: &mut ChaCha8Rng) -> CorruptionKind {
    let kinds: &[CorruptionKind] = if subjects >= 2 {
        &[
            CorruptionKind::IdentitySwap,
            CorruptionKind::Drift,
            CorruptionKind::Noise,
            CorruptionKind::PromptViolation,
        ]
    } else {
        &[CorruptionKind::Drift, CorruptionKind::Noise, CorruptionKind::PromptViolation]
    };
    kinds[rng.random_range(0..kinds.len())]
}

// ── train-rm ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DataSelector {
    /// Human-labeled pairs only.
    Human,
    /// Raw auto-labeled pairs only.
    Auto,
    /// Teacher-filtered auto pairs only.
    Filtered,
    /// Human plus raw auto pairs.
    HumanAuto,
    /// Human plus teacher-filtered auto pairs.
    HumanFiltered,
}

impl DataSelector {
    pub fn slug(self) -> &'static str {
        match self {
            DataSelector::Human => "human",
            DataSelector::Auto => "auto",
            DataSelector::Filtered => "filtered",
            DataSelector::HumanAuto => "human-auto",
            DataSelector::HumanFiltered => "human-filtered",
        }
    }

    fn is_two_source(self) -> bool {
        matches!(self, DataSelector::HumanAuto | DataSelector::HumanFiltered)
    }
}

fn schedule_slug(kind: ScheduleKind) -> &'static str {
    match kind {
        ScheduleKind::Random => "random",
        ScheduleKind::Staged => "staged",
        ScheduleKind::Smooth => "smooth",
    }
}

fn load_examples(path: &Path) -> Result<Vec<PairExample>, CliError> {
    let records = read_pairs(path)
        .map_err(|e| CliError::Precondition(format!("{}: {e}", path.display())))?;
    Ok(prepare_examples(&records))
}

pub fn cmd_train_rm(
    config: &RunConfig,
    data: DataSelector,
    schedule_override: Option<ScheduleKind>,
) -> Result<(), CliError> {
    let dir = data_dir(config);

    let schedule_kind = match (data.is_two_source(), schedule_override) {
        (true, Some(k)) => k,
        (true, None) => config.reward.schedule,
        (false, Some(k)) if k != ScheduleKind::Random => {
            return Err(CliError::Config(format!(
                "schedule {} needs two data sources; {} is single-source",
                schedule_slug(k),
                data.slug()
            )));
        }
        (false, _) => ScheduleKind::Random,
    };

    // Filtered sources are produced by the filter command, which itself
    // requires the teacher checkpoint.
    let human = load_examples(&dir.join("human_like.jsonl"))?;
    let (primary, secondary): (Vec<PairExample>, Vec<PairExample>) = match data {
        DataSelector::Human => (human, Vec::new()),
        DataSelector::Auto => (load_examples(&dir.join("auto_like.jsonl"))?, Vec::new()),
        DataSelector::Filtered => {
            require_teacher(config)?;
            (load_examples(&dir.join("filtered_auto.jsonl"))?, Vec::new())
        }
        DataSelector::HumanAuto => (human, load_examples(&dir.join("auto_like.jsonl"))?),
        DataSelector::HumanFiltered => {
            require_teacher(config)?;
            (human, load_examples(&dir.join("filtered_auto.jsonl"))?)
        }
    };
    let benchmark = load_examples(&dir.join("benchmark.jsonl"))?;

    let (net, curve) = run_rm_training(config, &primary, &secondary, schedule_kind, &benchmark)?;
    let final_acc = eval_accuracy(&net, &benchmark, config.reward.theta)
        .map_err(|e| CliError::Numerical(e.to_string()))?;

    let name = format!("reward_{}_{}", data.slug(), schedule_slug(schedule_kind));
    ensure_dir(&metrics_dir(config))?;
    write_curve(
        &metrics_dir(config).join(format!("rm_accuracy_{}_{}.csv", data.slug(), schedule_slug(schedule_kind))),
        &curve,
    )?;
    save_checkpoint(
        &checkpoints_dir(config),
        &name,
        "reward",
        &net.spec,
        config.seed,
        config.reward.train_steps as u64,
        &net.params,
    )?;
    println!("{name}: benchmark accuracy {final_acc:.4}");
    Ok(())
}

fn require_teacher(config: &RunConfig) -> Result<(), CliError> {
    let teacher = flow_checkpoint(config, "reward_human_random");
    if !teacher.exists() {
        return Err(CliError::Precondition(format!(
            "filtered data needs the teacher checkpoint {} (run train-rm --data human, then filter)",
            teacher.display()
        )));
    }
    Ok(())
}

/// Shared trainer body: the cadence and architecture come from the config;
/// the seed stream is fixed so selector rows are comparable.
fn run_rm_training(
    config: &RunConfig,
    primary: &[PairExample],
    secondary: &[PairExample],
    schedule_kind: ScheduleKind,
    benchmark: &[PairExample],
) -> Result<(RewardNet, Vec<CurvePoint>), CliError> {
    let world = &config.world;
    let input_dim = reward_input_dim(world.frames, world.subjects, world.appearance_dim);
    let cfg = RmTrainConfig {
        steps: config.reward.train_steps,
        batch_size: config.reward.batch_size,
        lr: config.reward.lr,
        theta: config.reward.theta,
        hidden_widths: config.reward.hidden_widths.clone(),
        activation: config.reward.activation,
        eval_every: config.reward.eval_every,
    };
    let schedule = CurriculumSchedule::new(schedule_kind, cfg.steps)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut rng = stream(config.seed, TAG_RM_TRAIN);
    // The schedules treat (human, auto) as (primary, secondary).
    train_reward(input_dim, primary, secondary, &schedule, &cfg, Some(benchmark), &mut rng)
        .map_err(|e| CliError::Numerical(e.to_string()))
}

fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<(), CliError> {
    let mut csv = String::from("step,split,accuracy,loss\n");
    for p in curve {
        let _ = writeln!(csv, "{},{},{},{}", p.step, p.split, fmt_f(p.accuracy), fmt_f(p.loss));
    }
    write_text(path, &csv)
}

// ── filter ───────────────────────────────────────────────────────────

pub fn cmd_filter(config: &RunConfig) -> Result<(), CliError> {
    let dir = data_dir(config);
    let teacher_path = flow_checkpoint(config, "reward_human_random");
    let teacher = load_reward_net(&teacher_path)?;
    let auto_path = dir.join("auto_like.jsonl");
    let records = read_pairs(&auto_path)
        .map_err(|e| CliError::Precondition(format!("{}: {e}", auto_path.display())))?;
    if records.is_empty() {
        return Err(CliError::Precondition("auto_like.jsonl is empty".into()));
    }
    let examples = prepare_examples(&records);
    let (kept, retention) = teacher_filter(&teacher, &examples, config.reward.theta)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let filtered: Vec<PairRecord> = kept.iter().map(|&i| records[i].clone()).collect();
    write_pairs(&dir.join("filtered_auto.jsonl"), &filtered)
        .map_err(|e| CliError::Io(e.to_string()))?;

    ensure_dir(&metrics_dir(config))?;
    let mut csv = String::from("kept,total,retention\n");
    let _ = writeln!(csv, "{},{},{}", filtered.len(), records.len(), fmt_f(retention));
    write_text(&metrics_dir(config).join("retention.csv"), &csv)?;
    println!(
        "teacher filter kept {}/{} auto pairs (retention {:.3})",
        filtered.len(),
        records.len(),
        retention
    );
    Ok(())
}

// ── grpo ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RewardSelector {
    Oracle,
    Learned,
}

impl RewardSelector {
    pub fn slug(self) -> &'static str {
        match self {
            RewardSelector::Oracle => "oracle",
            RewardSelector::Learned => "learned",
        }
    }
}

pub fn cmd_grpo(
    config: &RunConfig,
    selector: RewardSelector,
    reward_checkpoint: Option<&Path>,
) -> Result<(), CliError> {
    let world = &config.world;
    let mut policy = load_flow_policy(config, "flow_pretrained")?;
    let oracle = oracle_score_fn(world);

    let reward_net = match selector {
        RewardSelector::Oracle => None,
        RewardSelector::Learned => {
            let path = reward_checkpoint
                .map(Path::to_path_buf)
                .unwrap_or_else(|| flow_checkpoint(config, "reward_human-filtered_smooth"));
            Some(load_reward_net(&path)?)
        }
    };

    let schedule =
        NoiseSchedule::new(config.flow.sigma_scale).map_err(|e| CliError::Config(e.to_string()))?;
    let eval_grid = TimeGrid::uniform(config.grpo.eval_grid_steps)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let test_set = test_conditions(config)?;
    let eval_seed = config.seed.wrapping_add(TAG_EVAL_SEED << 32);

    let (baseline_mean, baseline_std) =
        evaluate_policy(&policy, &test_set, &eval_grid, &schedule, &oracle, eval_seed)
            .map_err(|e| CliError::Numerical(e.to_string()))?;

    let mut adam = AdamState::new(policy.params.len(), config.grpo.lr);
    let mut cond_rng = stream(config.seed, TAG_GRPO_CONDITIONS);
    let mut sample_rng = stream(config.seed, TAG_GRPO_SAMPLING);
    let mut rounds_csv =
        String::from("round,reward_mean,reward_std,oracle_mean,surrogate,clipped_fraction,wall_ms\n");

    for round in 0..config.grpo.total_rounds {
        let conditions = gen_conditions(world, config.grpo.group_num, true, &mut cond_rng)?;
        let metrics = match &reward_net {
            Some(net) => {
                let learned = learned_score_fn(world, net);
                grpo_round(
                    &mut policy,
                    &mut adam,
                    &conditions,
                    &learned,
                    &oracle,
                    &config.grpo,
                    &schedule,
                    round,
                    &mut sample_rng,
                )
            }
            None => grpo_round(
                &mut policy,
                &mut adam,
                &conditions,
                &oracle,
                &oracle,
                &config.grpo,
                &schedule,
                round,
                &mut sample_rng,
            ),
        }
        .map_err(|e| match e {
            idflow_core::grpo::GrpoError::NonFiniteReward { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        })?;
        // wall_ms is pinned to 0 so reruns are byte-identical; timing goes
        // to stdout instead.
        let _ = writeln!(
            rounds_csv,
            "{},{},{},{},{},{},0",
            metrics.round,
            fmt_f(metrics.reward_mean),
            fmt_f(metrics.reward_std),
            fmt_f(metrics.oracle_mean),
            fmt_f(metrics.surrogate),
            fmt_f(metrics.clipped_fraction)
        );
    }

    let (final_mean, final_std) =
        evaluate_policy(&policy, &test_set, &eval_grid, &schedule, &oracle, eval_seed)
            .map_err(|e| CliError::Numerical(e.to_string()))?;

    ensure_dir(&metrics_dir(config))?;
    write_text(
        &metrics_dir(config).join(format!("grpo_rounds_{}.csv", selector.slug())),
        &rounds_csv,
    )?;
    let mut eval_csv = String::from("phase,oracle_mean,oracle_std\n");
    let _ = writeln!(eval_csv, "baseline,{},{}", fmt_f(baseline_mean), fmt_f(baseline_std));
    let _ = writeln!(eval_csv, "final,{},{}", fmt_f(final_mean), fmt_f(final_std));
    write_text(
        &metrics_dir(config).join(format!("grpo_eval_{}.csv", selector.slug())),
        &eval_csv,
    )?;
    save_checkpoint(
        &checkpoints_dir(config),
        &format!("flow_grpo_{}", selector.slug()),
        "flow",
        &policy.spec,
        config.seed,
        config.grpo.total_rounds as u64,
        &policy.params,
    )?;
    let rel = 100.0 * (final_mean - baseline_mean) / baseline_mean;
    println!(
        "grpo ({}): oracle mean {:.4} -> {:.4} ({rel:+.1}% over {} rounds)",
        selector.slug(),
        baseline_mean,
        final_mean,
        config.grpo.total_rounds
    );
    Ok(())
}

// ── eval ─────────────────────────────────────────────────────────────

pub fn cmd_eval(config: &RunConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let world = &config.world;
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| flow_checkpoint(config, "flow_pretrained"));
    let (manifest, params) = load_checkpoint(&path)?;
    if manifest.kind != "flow" {
        return Err(CliError::Precondition(format!(
            "{} is not a flow checkpoint",
            path.display()
        )));
    }
    let policy = FlowPolicy { spec: manifest.net, params };
    let oracle = oracle_score_fn(world);
    let schedule =
        NoiseSchedule::new(config.flow.sigma_scale).map_err(|e| CliError::Config(e.to_string()))?;
    let eval_grid = TimeGrid::uniform(config.grpo.eval_grid_steps)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let test_set = test_conditions(config)?;
    let eval_seed = config.seed.wrapping_add(TAG_EVAL_SEED << 32);
    let (mean, std) = evaluate_policy(&policy, &test_set, &eval_grid, &schedule, &oracle, eval_seed)
        .map_err(|e| CliError::Numerical(e.to_string()))?;

    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    ensure_dir(&metrics_dir(config))?;
    let mut csv = String::from("checkpoint,oracle_mean,oracle_std,conditions\n");
    let _ = writeln!(csv, "{stem},{},{},{}", fmt_f(mean), fmt_f(std), test_set.len());
    write_text(&metrics_dir(config).join(format!("eval_{stem}.csv")), &csv)?;
    println!("{stem}: oracle mean {mean:.4} (std {std:.4}) over {} conditions", test_set.len());
    Ok(())
}

// ── ablate ───────────────────────────────────────────────────────────

pub fn cmd_ablate(config: &RunConfig) -> Result<(), CliError> {
    let world = &config.world;
    let base = load_flow_policy(config, "flow_pretrained")?;
    let oracle = oracle_score_fn(world);
    let schedule =
        NoiseSchedule::new(config.flow.sigma_scale).map_err(|e| CliError::Config(e.to_string()))?;
    let eval_grid = TimeGrid::uniform(config.grpo.eval_grid_steps)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let test_set = test_conditions(config)?;

    let mut csv = String::from("group_num,noise_diff,final_oracle_mean,seed\n");
    for s in 0..config.ablation_seeds {
        let seed = config.seed.wrapping_add(s);
        let world_for_conditions = world.clone();
        let sample_conditions = move |round: usize, count: usize| -> Vec<Condition> {
            // Shared per-(seed, round) condition batch; smaller group
            // counts take a prefix of the same draw.
            let mut rng = stream(seed, TAG_ABLATION.wrapping_add(1000 + round as u64));
            (0..count)
                .map(|_| gen_condition(&world_for_conditions, true, &mut rng).expect("condition"))
                .collect()
        };
        let rows = ablation_run(
            &base,
            &config.grpo,
            &schedule,
            &sample_conditions,
            &oracle,
            &oracle,
            &test_set,
            &eval_grid,
            seed,
        )
        .map_err(|e| CliError::Numerical(e.to_string()))?;
        for row in rows {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                row.group_num,
                row.noise_diff,
                fmt_f(row.final_oracle_mean),
                row.seed
            );
            println!(
                "ablation seed {}: group_num {:>2}, noise_diff {:5} -> oracle {:.4}",
                row.seed, row.group_num, row.noise_diff, row.final_oracle_mean
            );
        }
    }
    ensure_dir(&metrics_dir(config))?;
    write_text(&metrics_dir(config).join("ablation.csv"), &csv)?;
    Ok(())
}
