//! Run configuration: one JSON document with a documented default for
//! every field. Unknown keys are rejected with the offending key named.

use std::path::{Path, PathBuf};

use idflow_core::autodiff::Activation;
use idflow_core::grpo::GrpoConfig;
use idflow_core::reward::ScheduleKind;
use idflow_core::world::WorldConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base seed; every command derives its streams from it.
    pub seed: u64,
    /// Output directory for checkpoints, datasets, metrics, and reports.
    pub out_dir: PathBuf,
    /// Held-out conditions used by policy evaluation.
    pub eval_conditions: usize,
    /// Seeds run by the ablation command (seed, seed+1, ...).
    pub ablation_seeds: u64,
    pub world: WorldConfig,
    pub flow: FlowSection,
    pub reward: RewardSection,
    pub prefs: PrefsSection,
    pub grpo: GrpoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            eval_conditions: 100,
            ablation_seeds: 3,
            world: WorldConfig::default(),
            flow: FlowSection::default(),
            reward: RewardSection::default(),
            prefs: PrefsSection::default(),
            grpo: GrpoConfig::default(),
        }
    }
}

/// Flow-policy architecture, noise scale, and pretraining knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSection {
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    /// SDE noise scale a in sigma_t = a t.
    pub sigma_scale: f64,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection {
            hidden_widths: vec![64, 64],
            activation: Activation::Tanh,
            sigma_scale: 0.7,
            pretrain_steps: 1200,
            pretrain_batch: 16,
            pretrain_lr: 2e-3,
        }
    }
}

/// Reward-net architecture and training knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    /// Tie-tendency parameter of the preference likelihood.
    pub theta: f64,
    /// Default mixing schedule for two-source training.
    pub schedule: ScheduleKind,
    pub train_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub eval_every: usize,
}

impl Default for RewardSection {
    fn default() -> Self {
        RewardSection {
            hidden_widths: vec![64],
            activation: Activation::Tanh,
            theta: 5.0,
            schedule: ScheduleKind::Smooth,
            train_steps: 600,
            batch_size: 32,
            lr: 2e-3,
            eval_every: 50,
        }
    }
}

/// Preference-dataset sizes. Effective counts are `round(base * scale)`,
/// keeping generation desk-cheap while preserving the 1:2 human/auto shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrefsSection {
    pub human_pairs: usize,
    pub auto_pairs: usize,
    pub benchmark_pairs: usize,
    pub scale: f64,
}

impl Default for PrefsSection {
    fn default() -> Self {
        PrefsSection {
            human_pairs: 5000,
            auto_pairs: 10_000,
            benchmark_pairs: 300,
            scale: 0.1,
        }
    }
}

impl PrefsSection {
    pub fn human_count(&self) -> usize {
        ((self.human_pairs as f64) * self.scale).round().max(1.0) as usize
    }

    pub fn auto_count(&self) -> usize {
        ((self.auto_pairs as f64) * self.scale).round().max(1.0) as usize
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.world.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.grpo.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.eval_conditions == 0 {
            return Err(CliError::Config("eval_conditions must be >= 1".into()));
        }
        if self.ablation_seeds == 0 {
            return Err(CliError::Config("ablation_seeds must be >= 1".into()));
        }
        if self.flow.pretrain_steps == 0 || self.flow.pretrain_batch == 0 {
            return Err(CliError::Config("pretraining needs steps and batch >= 1".into()));
        }
        if !(self.flow.sigma_scale > 0.0) {
            return Err(CliError::Config("sigma_scale must be positive".into()));
        }
        if self.reward.theta < 1.0 {
            return Err(CliError::Config("reward theta must be >= 1".into()));
        }
        if self.reward.train_steps == 0 || self.reward.batch_size == 0 || self.reward.eval_every == 0
        {
            return Err(CliError::Config("reward training knobs must be >= 1".into()));
        }
        if self.prefs.scale <= 0.0 {
            return Err(CliError::Config("prefs scale must be positive".into()));
        }
        if self.prefs.benchmark_pairs == 0 {
            return Err(CliError::Config("benchmark_pairs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Load the config (defaults when no path is given), then apply CLI
/// overrides.
pub fn load_config(
    path: Option<&Path>,
    seed_override: Option<u64>,
    out_override: Option<&Path>,
) -> Result<RunConfig, CliError> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", p.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    if let Some(out) = out_override {
        config.out_dir = out.to_path_buf();
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrips_through_json() {
        let config = RunConfig::default();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = serde_json::from_str::<RunConfig>(r#"{"seed": 1, "typo_key": 2}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("typo_key"), "{err}");

        let err = serde_json::from_str::<RunConfig>(r#"{"world": {"framez": 8}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("framez"), "{err}");
    }

    #[test]
    fn missing_keys_fall_back_to_defaults() {
        let config: RunConfig = serde_json::from_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.world, WorldConfig::default());
        assert_eq!(config.grpo.group_size, 8);
    }

    #[test]
    fn pref_counts_scale() {
        let prefs = PrefsSection::default();
        assert_eq!(prefs.human_count(), 500);
        assert_eq!(prefs.auto_count(), 1000);
    }
}
