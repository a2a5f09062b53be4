//! Synthetic multi-subject video domain.
//!
//! A "video" is F frames of K subject slots, each slot carrying a 2-D
//! position and an m-dimensional appearance vector. Ground truth renders
//! each subject's identity vector along a prompt-specified trajectory.
//! Two oracles score a video: identity consistency (best one-to-one
//! slot-to-identity assignment per frame, exhaustive over permutations)
//! and prompt adherence (same assignment mechanism over positions).
//! Distortion operators and oracle-labeled pair synthesis provide the raw
//! material for preference learning.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("identity sampling failed after {0} attempts")]
    SamplingExhausted(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("pair record parse: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Slot layout: 2 position coordinates followed by the appearance vector.
pub const POSITION_DIM: usize = 2;

/// Maximum subjects per scene; the assignment search is exhaustive over
/// permutations, so this stays tiny.
pub const MAX_SUBJECTS: usize = 3;

/// Oracle scores live in [0, ORACLE_MAX].
pub const ORACLE_MAX: f64 = 5.0;

// ── World configuration ──────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Frames per video (F).
    pub frames: usize,
    /// Subjects per scene (K), 1..=3.
    pub subjects: usize,
    /// Appearance dimension (m).
    pub appearance_dim: usize,
    /// Appearance noise in ground-truth renders.
    pub jitter: f64,
    /// Minimum pairwise identity distance enforced at generation.
    pub identity_min_dist: f64,
    /// Oracle-gap band labeled as a tie.
    pub tie_threshold: f64,
    /// Pairs whose adherence scores differ by more than this are discarded.
    pub adherence_gap: f64,
    /// Label-flip probability for human-like annotation.
    pub human_label_noise: f64,
    /// Label-flip probability for auto-like annotation.
    pub auto_label_noise: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            frames: 8,
            subjects: 2,
            appearance_dim: 4,
            jitter: 0.1,
            identity_min_dist: 0.5,
            tie_threshold: 0.15,
            adherence_gap: 0.3,
            human_label_noise: 0.05,
            auto_label_noise: 0.30,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.frames == 0 {
            return Err(WorldError::Invalid("frames must be >= 1".into()));
        }
        if self.subjects == 0 || self.subjects > MAX_SUBJECTS {
            return Err(WorldError::Invalid(format!(
                "subjects must lie in 1..={MAX_SUBJECTS}"
            )));
        }
        if self.appearance_dim == 0 {
            return Err(WorldError::Invalid("appearance_dim must be >= 1".into()));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return Err(WorldError::Invalid("jitter must lie in [0, 0.5)".into()));
        }
        if self.tie_threshold <= 0.0 || self.adherence_gap <= 0.0 {
            return Err(WorldError::Invalid(
                "tie_threshold and adherence_gap must be positive".into(),
            ));
        }
        for noise in [self.human_label_noise, self.auto_label_noise] {
            if !(0.0..0.5).contains(&noise) {
                return Err(WorldError::Invalid("label noise must lie in [0, 0.5)".into()));
            }
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        VideoSample::latent_dim(self.frames, self.subjects, self.appearance_dim)
    }
}

// ── Identities ───────────────────────────────────────────────────────

/// K identity vectors in [-1, 1]^m. Pairwise separation is enforced by the
/// generator, not the constructor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentitySet {
    identities: Vec<Vec<f64>>,
}

impl IdentitySet {
    pub fn new(identities: Vec<Vec<f64>>) -> Result<Self, WorldError> {
        if identities.is_empty() || identities.len() > MAX_SUBJECTS {
            return Err(WorldError::Invalid(format!(
                "identity count must lie in 1..={MAX_SUBJECTS}"
            )));
        }
        let m = identities[0].len();
        if m == 0 || identities.iter().any(|u| u.len() != m) {
            return Err(WorldError::Invalid("identity vectors must share a nonzero dim".into()));
        }
        if identities.iter().flatten().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(WorldError::Invalid("identity entries must lie in [-1, 1]".into()));
        }
        Ok(IdentitySet { identities })
    }

    pub fn count(&self) -> usize {
        self.identities.len()
    }

    pub fn dim(&self) -> usize {
        self.identities[0].len()
    }

    pub fn identity(&self, k: usize) -> &[f64] {
        &self.identities[k]
    }

    pub fn flat(&self) -> Vec<f64> {
        self.identities.iter().flatten().copied().collect()
    }

    pub fn min_pairwise_dist(&self) -> f64 {
        let mut min = f64::INFINITY;
        for i in 0..self.count() {
            for j in i + 1..self.count() {
                let d: f64 = self.identities[i]
                    .iter()
                    .zip(&self.identities[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                min = min.min(d);
            }
        }
        min
    }
}

/// Rejection-sample an identity set whose members are at least `min_dist`
/// apart.
pub fn gen_identity_set(
    subjects: usize,
    dim: usize,
    min_dist: f64,
    rng: &mut ChaCha8Rng,
) -> Result<IdentitySet, WorldError> {
    const MAX_ATTEMPTS: usize = 10_000;
    for _ in 0..MAX_ATTEMPTS {
        let identities: Vec<Vec<f64>> = (0..subjects)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let set = IdentitySet::new(identities)?;
        if set.count() == 1 || set.min_pairwise_dist() >= min_dist {
            return Ok(set);
        }
    }
    Err(WorldError::SamplingExhausted(MAX_ATTEMPTS))
}

// ── Prompts ──────────────────────────────────────────────────────────

/// Straight-line motion for one subject: position(f) = start + velocity * f.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPath {
    pub start: [f64; 2],
    pub velocity: [f64; 2],
}

/// Per-subject trajectories plus a flag controlling whether the prompt
/// embedding also encodes the subjects' identity vectors (the analog of a
/// prompt that describes the subjects accurately).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub paths: Vec<SubjectPath>,
    pub identity_consistent: bool,
}

impl PromptSpec {
    pub fn subjects(&self) -> usize {
        self.paths.len()
    }

    pub fn expected_position(&self, subject: usize, frame: usize) -> [f64; 2] {
        let p = &self.paths[subject];
        [
            p.start[0] + p.velocity[0] * frame as f64,
            p.start[1] + p.velocity[1] * frame as f64,
        ]
    }

    /// Deterministic encoding: flattened trajectories, then the identity
    /// vectors when `identity_consistent` is set (zeros otherwise).
    pub fn embedding(&self, ids: &IdentitySet) -> Vec<f64> {
        let mut e = Vec::with_capacity(Self::embedding_dim(ids.count(), ids.dim()));
        for p in &self.paths {
            e.extend_from_slice(&p.start);
            e.extend_from_slice(&p.velocity);
        }
        if self.identity_consistent {
            e.extend(ids.flat());
        } else {
            e.extend(std::iter::repeat(0.0).take(ids.count() * ids.dim()));
        }
        e
    }

    pub fn embedding_dim(subjects: usize, appearance_dim: usize) -> usize {
        subjects * 4 + subjects * appearance_dim
    }
}

/// Draw starts in [-1, 1]^2 and velocities in [-0.25, 0.25]^2.
pub fn gen_prompt(subjects: usize, identity_consistent: bool, rng: &mut ChaCha8Rng) -> PromptSpec {
    let paths = (0..subjects)
        .map(|_| SubjectPath {
            start: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            velocity: [rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25)],
        })
        .collect();
    PromptSpec { paths, identity_consistent }
}

// ── Conditions ───────────────────────────────────────────────────────

/// The generation condition: reference identities plus the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub identities: IdentitySet,
    pub prompt: PromptSpec,
}

impl Condition {
    pub fn subjects(&self) -> usize {
        self.identities.count()
    }

    /// Network conditioning vector: raw identities, then the prompt embedding.
    pub fn embedding(&self) -> Vec<f64> {
        let mut e = self.identities.flat();
        e.extend(self.prompt.embedding(&self.identities));
        e
    }

    pub fn embedding_dim(subjects: usize, appearance_dim: usize) -> usize {
        subjects * appearance_dim + PromptSpec::embedding_dim(subjects, appearance_dim)
    }
}

pub fn gen_condition(
    cfg: &WorldConfig,
    identity_consistent: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Condition, WorldError> {
    let identities = gen_identity_set(cfg.subjects, cfg.appearance_dim, cfg.identity_min_dist, rng)?;
    let prompt = gen_prompt(cfg.subjects, identity_consistent, rng);
    Ok(Condition { identities, prompt })
}

// ── Video samples ────────────────────────────────────────────────────

/// F x K slots of (position, appearance), stored as one flat latent vector.
/// The flat and structured views are bijective by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSample {
    frames: usize,
    subjects: usize,
    appearance_dim: usize,
    latent: Vec<f64>,
}

impl VideoSample {
    pub fn latent_dim(frames: usize, subjects: usize, appearance_dim: usize) -> usize {
        frames * subjects * (POSITION_DIM + appearance_dim)
    }

    pub fn from_latent(
        frames: usize,
        subjects: usize,
        appearance_dim: usize,
        latent: Vec<f64>,
    ) -> Result<Self, WorldError> {
        let expected = Self::latent_dim(frames, subjects, appearance_dim);
        if latent.len() != expected {
            return Err(WorldError::Invalid(format!(
                "latent length {} inconsistent with (F={frames}, K={subjects}, m={appearance_dim}): expected {expected}",
                latent.len()
            )));
        }
        Ok(VideoSample { frames, subjects, appearance_dim, latent })
    }

    pub fn zeros(frames: usize, subjects: usize, appearance_dim: usize) -> Self {
        let len = Self::latent_dim(frames, subjects, appearance_dim);
        VideoSample { frames, subjects, appearance_dim, latent: vec![0.0; len] }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let expected = Self::latent_dim(self.frames, self.subjects, self.appearance_dim);
        if self.latent.len() != expected {
            return Err(WorldError::Invalid(format!(
                "latent length {} does not match dims (expected {expected})",
                self.latent.len()
            )));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn subjects(&self) -> usize {
        self.subjects
    }

    pub fn appearance_dim(&self) -> usize {
        self.appearance_dim
    }

    pub fn latent(&self) -> &[f64] {
        &self.latent
    }

    pub fn into_latent(self) -> Vec<f64> {
        self.latent
    }

    fn slot_offset(&self, frame: usize, slot: usize) -> usize {
        (frame * self.subjects + slot) * (POSITION_DIM + self.appearance_dim)
    }

    pub fn position(&self, frame: usize, slot: usize) -> [f64; 2] {
        let o = self.slot_offset(frame, slot);
        [self.latent[o], self.latent[o + 1]]
    }

    pub fn set_position(&mut self, frame: usize, slot: usize, pos: [f64; 2]) {
        let o = self.slot_offset(frame, slot);
        self.latent[o] = pos[0];
        self.latent[o + 1] = pos[1];
    }

    pub fn appearance(&self, frame: usize, slot: usize) -> &[f64] {
        let o = self.slot_offset(frame, slot) + POSITION_DIM;
        &self.latent[o..o + self.appearance_dim]
    }

    pub fn appearance_mut(&mut self, frame: usize, slot: usize) -> &mut [f64] {
        let o = self.slot_offset(frame, slot) + POSITION_DIM;
        &mut self.latent[o..o + self.appearance_dim]
    }
}

// ── Ground truth ─────────────────────────────────────────────────────

/// Render identities along the prompt trajectories. Positions are exact;
/// appearances are the identity vectors plus per-frame Gaussian jitter.
pub fn gen_ground_truth(
    ids: &IdentitySet,
    prompt: &PromptSpec,
    frames: usize,
    jitter: f64,
    rng: &mut ChaCha8Rng,
) -> Result<VideoSample, WorldError> {
    if !(0.0..0.5).contains(&jitter) {
        return Err(WorldError::Invalid("jitter must lie in [0, 0.5)".into()));
    }
    if prompt.subjects() != ids.count() {
        return Err(WorldError::Invalid(format!(
            "prompt has {} subjects, identity set has {}",
            prompt.subjects(),
            ids.count()
        )));
    }
    let mut video = VideoSample::zeros(frames, ids.count(), ids.dim());
    for f in 0..frames {
        for k in 0..ids.count() {
            video.set_position(f, k, prompt.expected_position(k, f));
            let app = video.appearance_mut(f, k);
            for (a, u) in app.iter_mut().zip(ids.identity(k)) {
                let noise: f64 = StandardNormal.sample(rng);
                *a = u + jitter * noise;
            }
        }
    }
    Ok(video)
}

// ── Assignment search ────────────────────────────────────────────────

/// All permutations of 0..k in lexicographic order (k <= 3 in practice).
fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, remaining: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..remaining.len() {
            let v = remaining.remove(i);
            prefix.push(v);
            rec(prefix, remaining, out);
            prefix.pop();
            remaining.insert(i, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..k).collect(), &mut out);
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// ── Oracles ──────────────────────────────────────────────────────────

/// Identity-consistency score in [0, 5]. Per frame, slots are matched
/// one-to-one to identities by the permutation minimizing total appearance
/// distance, so duplicating one subject's appearance over another cannot
/// score as two faithful renderings. The per-frame score is
/// 5 * exp(-mean matched squared distance / m); the result is the frame mean.
pub fn oracle_consistency(video: &VideoSample, ids: &IdentitySet) -> Result<f64, WorldError> {
    if video.subjects() != ids.count() {
        return Err(WorldError::Invalid(format!(
            "video has {} slots, identity set has {}",
            video.subjects(),
            ids.count()
        )));
    }
    if video.appearance_dim() != ids.dim() {
        return Err(WorldError::Invalid(format!(
            "video appearance dim {} != identity dim {}",
            video.appearance_dim(),
            ids.dim()
        )));
    }
    let k = ids.count();
    let m = ids.dim() as f64;
    let perms = permutations(k);
    let mut total = 0.0;
    for f in 0..video.frames() {
        let mut best = f64::INFINITY;
        for perm in &perms {
            let cost: f64 = (0..k)
                .map(|slot| sq_dist(video.appearance(f, slot), ids.identity(perm[slot])))
                .sum();
            best = best.min(cost);
        }
        let mean_sq = best / k as f64;
        total += ORACLE_MAX * (-mean_sq / m).exp();
    }
    Ok(total / video.frames() as f64)
}

/// Prompt-adherence score in [0, 1]: exp of the negative per-coordinate mean
/// squared positional error, with slots matched to trajectories per frame by
/// the same exhaustive-bijection rule the consistency oracle uses (applied
/// to positions, so appearance corruption cannot move this score).
pub fn oracle_prompt_adherence(video: &VideoSample, prompt: &PromptSpec) -> Result<f64, WorldError> {
    if video.subjects() != prompt.subjects() {
        return Err(WorldError::Invalid(format!(
            "video has {} slots, prompt has {} subjects",
            video.subjects(),
            prompt.subjects()
        )));
    }
    let k = prompt.subjects();
    let perms = permutations(k);
    let mut total = 0.0;
    for f in 0..video.frames() {
        let mut best = f64::INFINITY;
        for perm in &perms {
            let cost: f64 = (0..k)
                .map(|slot| {
                    let pos = video.position(f, slot);
                    let want = prompt.expected_position(perm[slot], f);
                    sq_dist(&pos, &want)
                })
                .sum();
            best = best.min(cost);
        }
        total += best;
    }
    let denom = (video.frames() * k * POSITION_DIM) as f64;
    Ok((-total / denom).exp())
}

// ── Distortions ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    /// Copy one slot's appearance track over another's.
    IdentitySwap,
    /// Pull appearances toward their per-frame mean, ramping over frames.
    Drift,
    /// Add Gaussian appearance noise.
    Noise,
    /// Shift each slot's positions by a fixed random offset.
    PromptViolation,
}

pub fn corrupt(
    video: &VideoSample,
    kind: CorruptionKind,
    severity: f64,
    rng: &mut ChaCha8Rng,
) -> Result<VideoSample, WorldError> {
    if !(severity > 0.0 && severity <= 1.0) {
        return Err(WorldError::Invalid("severity must lie in (0, 1]".into()));
    }
    let mut out = video.clone();
    let (frames, k, m) = (video.frames(), video.subjects(), video.appearance_dim());
    match kind {
        CorruptionKind::IdentitySwap => {
            if k < 2 {
                return Err(WorldError::Invalid(
                    "identity_swap requires at least two subjects".into(),
                ));
            }
            let src = rng.random_range(0..k);
            let mut dst = rng.random_range(0..k - 1);
            if dst >= src {
                dst += 1;
            }
            for f in 0..frames {
                let track = video.appearance(f, src).to_vec();
                out.appearance_mut(f, dst).copy_from_slice(&track);
            }
        }
        CorruptionKind::Drift => {
            for f in 0..frames {
                let frac = if frames > 1 { f as f64 / (frames - 1) as f64 } else { 1.0 };
                let lambda = severity * frac;
                let mut mean = vec![0.0; m];
                for slot in 0..k {
                    for (acc, a) in mean.iter_mut().zip(video.appearance(f, slot)) {
                        *acc += a;
                    }
                }
                for acc in &mut mean {
                    *acc /= k as f64;
                }
                for slot in 0..k {
                    let app = out.appearance_mut(f, slot);
                    for (a, mu) in app.iter_mut().zip(&mean) {
                        *a = (1.0 - lambda) * *a + lambda * mu;
                    }
                }
            }
        }
        CorruptionKind::Noise => {
            for f in 0..frames {
                for slot in 0..k {
                    let app = out.appearance_mut(f, slot);
                    for a in app.iter_mut() {
                        let noise: f64 = StandardNormal.sample(rng);
                        *a += severity * noise;
                    }
                }
            }
        }
        CorruptionKind::PromptViolation => {
            for slot in 0..k {
                let gx: f64 = StandardNormal.sample(rng);
                let gy: f64 = StandardNormal.sample(rng);
                let off = [severity * gx, severity * gy];
                for f in 0..frames {
                    let pos = out.position(f, slot);
                    out.set_position(f, slot, [pos[0] + off[0], pos[1] + off[1]]);
                }
            }
        }
    }
    Ok(out)
}

// ── Preference pairs ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrefLabel {
    #[serde(rename = "A_wins")]
    AWins,
    #[serde(rename = "B_wins")]
    BWins,
    #[serde(rename = "tie")]
    Tie,
}

impl PrefLabel {
    pub fn flipped(self) -> PrefLabel {
        match self {
            PrefLabel::AWins => PrefLabel::BWins,
            PrefLabel::BWins => PrefLabel::AWins,
            PrefLabel::Tie => PrefLabel::Tie,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    HumanLike,
    AutoLike,
}

/// Two videos generated under one condition plus an annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub condition: Condition,
    pub video_a: VideoSample,
    pub video_b: VideoSample,
    pub label: PrefLabel,
    pub source: PairSource,
}

/// A synthesized pair together with the oracle scores that produced its
/// label. The scores are for evaluation only and never feed reward training.
#[derive(Debug, Clone)]
pub struct SynthesizedPair {
    pub pair: PreferencePair,
    pub oracle_a: f64,
    pub oracle_b: f64,
}

/// Generate two candidates under `condition`, filter on the adherence gap,
/// and label by oracle comparison: a tie inside `tie_threshold`, the
/// higher-scoring video otherwise, with non-tie labels flipped with
/// probability `label_noise`. Returns `None` when the pair is discarded.
pub fn synth_preference_pair<FA, FB>(
    condition: &Condition,
    gen_a: FA,
    gen_b: FB,
    label_noise: f64,
    tie_threshold: f64,
    adherence_gap: f64,
    source: PairSource,
    rng: &mut ChaCha8Rng,
) -> Result<Option<SynthesizedPair>, WorldError>
where
    FA: FnOnce(&Condition, &mut ChaCha8Rng) -> Result<VideoSample, WorldError>,
    FB: FnOnce(&Condition, &mut ChaCha8Rng) -> Result<VideoSample, WorldError>,
{
    if tie_threshold <= 0.0 {
        return Err(WorldError::Invalid("tie_threshold must be positive".into()));
    }
    if adherence_gap <= 0.0 {
        return Err(WorldError::Invalid("adherence_gap must be positive".into()));
    }
    if !(0.0..0.5).contains(&label_noise) {
        return Err(WorldError::Invalid("label_noise must lie in [0, 0.5)".into()));
    }
    let video_a = gen_a(condition, rng)?;
    let video_b = gen_b(condition, rng)?;
    let adh_a = oracle_prompt_adherence(&video_a, &condition.prompt)?;
    let adh_b = oracle_prompt_adherence(&video_b, &condition.prompt)?;
    if (adh_a - adh_b).abs() > adherence_gap {
        return Ok(None);
    }
    let oracle_a = oracle_consistency(&video_a, &condition.identities)?;
    let oracle_b = oracle_consistency(&video_b, &condition.identities)?;
    let mut label = if (oracle_a - oracle_b).abs() < tie_threshold {
        PrefLabel::Tie
    } else if oracle_a > oracle_b {
        PrefLabel::AWins
    } else {
        PrefLabel::BWins
    };
    if label != PrefLabel::Tie && rng.random::<f64>() < label_noise {
        label = label.flipped();
    }
    Ok(Some(SynthesizedPair {
        pair: PreferencePair {
            condition: condition.clone(),
            video_a,
            video_b,
            label,
            source,
        },
        oracle_a,
        oracle_b,
    }))
}

// ── Dataset files ────────────────────────────────────────────────────

/// One line of a pair dataset file. Oracle scores ride along for
/// evaluation and reporting only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub condition: Condition,
    #[serde(rename = "y_A")]
    pub video_a: VideoSample,
    #[serde(rename = "y_B")]
    pub video_b: VideoSample,
    pub label: PrefLabel,
    pub source: PairSource,
    #[serde(rename = "oracle_A")]
    pub oracle_a: f64,
    #[serde(rename = "oracle_B")]
    pub oracle_b: f64,
}

impl From<SynthesizedPair> for PairRecord {
    fn from(sp: SynthesizedPair) -> Self {
        PairRecord {
            condition: sp.pair.condition,
            video_a: sp.pair.video_a,
            video_b: sp.pair.video_b,
            label: sp.pair.label,
            source: sp.pair.source,
            oracle_a: sp.oracle_a,
            oracle_b: sp.oracle_b,
        }
    }
}

/// Write records as line-delimited JSON.
pub fn write_pairs(path: &Path, records: &[PairRecord]) -> Result<(), WorldError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut file, rec)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Read a line-delimited JSON pair file, validating video dimensions.
pub fn read_pairs(path: &Path) -> Result<Vec<PairRecord>, WorldError> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(&line)?;
        rec.video_a.validate()?;
        rec.video_b.validate()?;
        records.push(rec);
    }
    Ok(records)
}

/// View a generated latent as a video with this world's dimensions.
/// Panics if the length disagrees; generated latents always match.
pub fn sample_to_video(cfg: &WorldConfig, latent: &[f64]) -> VideoSample {
    VideoSample::from_latent(cfg.frames, cfg.subjects, cfg.appearance_dim, latent.to_vec())
        .expect("latent length matches world dimensions")
}

/// Fraction of records whose stored label matches the label the oracle rule
/// would assign from the stored scores.
pub fn oracle_agreement(records: &[PairRecord], tie_threshold: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let agree = records
        .iter()
        .filter(|r| {
            let oracle_label = if (r.oracle_a - r.oracle_b).abs() < tie_threshold {
                PrefLabel::Tie
            } else if r.oracle_a > r.oracle_b {
                PrefLabel::AWins
            } else {
                PrefLabel::BWins
            };
            r.label == oracle_label
        })
        .count();
    agree as f64 / records.len() as f64
}
