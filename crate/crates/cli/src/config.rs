//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vln_core::env_synth::EnvParams;
use vln_core::graph_builder::EdgeRuleParams;
use vln_core::il_pipeline::{InstructionConfig, LossWeights, Optimizer, TrainConfig, FILLER_TOKEN_BASE};
use vln_core::traj_sampler::SampleConfig;

use crate::error::CliError;

/// Overrides `out_dir` when set.
pub const OUT_ROOT_ENV: &str = "VLN_OUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generate,
    Graphs,
    Sample,
    Instructions,
    Emit,
    Train,
    Dagger,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Generate,
        Stage::Graphs,
        Stage::Sample,
        Stage::Instructions,
        Stage::Emit,
        Stage::Train,
        Stage::Dagger,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Graphs => "graphs",
            Stage::Sample => "sample",
            Stage::Instructions => "instructions",
            Stage::Emit => "emit",
            Stage::Train => "train",
            Stage::Dagger => "dagger",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    pub threads: usize,
    /// Executed in dependency order regardless of how they are listed.
    pub stages: Vec<Stage>,
    pub generate: GenerateConfig,
    pub graphs: GraphConfig,
    pub sample: SampleStageConfig,
    pub instructions: InstructionStageConfig,
    pub train: TrainStageConfig,
    pub dagger: DaggerConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            threads: 0,
            stages: Stage::ALL.to_vec(),
            generate: GenerateConfig::default(),
            graphs: GraphConfig::default(),
            sample: SampleStageConfig::default(),
            instructions: InstructionStageConfig::default(),
            train: TrainStageConfig::default(),
            dagger: DaggerConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub train_envs: usize,
    pub val_unseen_envs: usize,
    pub test_envs: usize,
    pub feature_dim: usize,
    /// The split field is overwritten per environment.
    pub env: EnvParams,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            train_envs: 8,
            val_unseen_envs: 2,
            test_envs: 2,
            feature_dim: 64,
            env: EnvParams::default(),
        }
    }
}

impl GenerateConfig {
    pub fn total(&self) -> usize {
        self.train_envs + self.val_unseen_envs + self.test_envs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Noise on the oracle edge probabilities.
    pub sigma: f64,
    /// Fixed rule weights; both or neither. When absent they are fitted on
    /// the training environments.
    pub lambda_d: Option<f64>,
    pub lambda_p: Option<f64>,
    /// Sample and simulate training environments on the built graphs
    /// instead of the reference graphs.
    pub train_on_built: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { sigma: 0.1, lambda_d: None, lambda_p: None, train_on_built: true }
    }
}

impl GraphConfig {
    pub fn fixed_params(&self) -> Option<EdgeRuleParams> {
        Some(EdgeRuleParams::new(self.lambda_d?, self.lambda_p?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleStageConfig {
    pub waypoints: usize,
    pub max_length_m: f64,
    pub max_steps: usize,
    /// Cap per training environment.
    pub per_env_cap: usize,
    /// Cap per evaluation environment.
    pub eval_per_env_cap: usize,
    pub attempts_per_path: usize,
}

impl Default for SampleStageConfig {
    fn default() -> Self {
        let core = SampleConfig::default();
        Self {
            waypoints: core.waypoints,
            max_length_m: core.max_length_m,
            max_steps: core.max_steps,
            per_env_cap: 200,
            eval_per_env_cap: 25,
            attempts_per_path: core.attempts_per_path,
        }
    }
}

impl SampleStageConfig {
    pub fn to_core(&self, cap: usize, seed: u64) -> SampleConfig {
        SampleConfig {
            waypoints: self.waypoints,
            max_length_m: self.max_length_m,
            max_steps: self.max_steps,
            per_env_cap: cap,
            seed,
            attempts_per_path: self.attempts_per_path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstructionStageConfig {
    pub vocab_size: u32,
    pub noise_rate: f64,
    /// Trajectories per training environment held out as val-seen.
    pub val_seen_per_env: usize,
}

impl Default for InstructionStageConfig {
    fn default() -> Self {
        let core = InstructionConfig::default();
        Self { vocab_size: core.vocab_size, noise_rate: core.noise_rate, val_seen_per_env: 10 }
    }
}

impl InstructionStageConfig {
    pub fn to_core(&self) -> InstructionConfig {
        InstructionConfig { vocab_size: self.vocab_size, noise_rate: self.noise_rate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainStageConfig {
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub loss_weights: LossWeights,
}

impl Default for TrainStageConfig {
    fn default() -> Self {
        let core = TrainConfig::default();
        Self {
            embed_dim: 32,
            epochs: 15,
            batch_size: core.batch_size,
            learning_rate: core.learning_rate,
            optimizer: core.optimizer,
            loss_weights: core.loss_weights,
        }
    }
}

impl TrainStageConfig {
    pub fn to_core(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            loss_weights: self.loss_weights,
            freeze_heads: false,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaggerConfig {
    pub iterations: usize,
    /// Epochs of continued training after each aggregation.
    pub epochs: usize,
    /// Start rollouts one random step off the reference start.
    pub perturbed_starts: bool,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        Self { iterations: 1, epochs: 15, perturbed_starts: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Also evaluate every policy from perturbed starts.
    pub perturbed_starts: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { perturbed_starts: true }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    /// Applies the output-root override from the environment.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(root) = std::env::var_os(OUT_ROOT_ENV) {
            self.out_dir = PathBuf::from(root);
        }
        self
    }

    pub fn ordered_stages(&self) -> Vec<Stage> {
        let mut stages = self.stages.clone();
        stages.sort();
        stages.dedup();
        stages
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::Config(msg));
        let g = &self.generate;
        if g.train_envs == 0 {
            return fail("generate.train_envs must be at least 1".into());
        }
        if g.feature_dim == 0 {
            return fail("generate.feature_dim must be positive".into());
        }
        if !(self.graphs.sigma >= 0.0 && self.graphs.sigma.is_finite()) {
            return fail(format!("graphs.sigma must be a non-negative number, got {}", self.graphs.sigma));
        }
        if self.graphs.lambda_d.is_some() != self.graphs.lambda_p.is_some() {
            return fail("graphs.lambda_d and graphs.lambda_p must be given together".into());
        }
        if let Some(p) = self.graphs.fixed_params() {
            p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        let s = &self.sample;
        s.to_core(s.per_env_cap, 0).validate().map_err(|e| CliError::Config(e.to_string()))?;
        if s.eval_per_env_cap == 0 {
            return fail("sample.eval_per_env_cap must be at least 1".into());
        }
        if self.instructions.val_seen_per_env >= s.per_env_cap {
            return fail("instructions.val_seen_per_env must leave training trajectories".into());
        }
        if self.instructions.vocab_size <= FILLER_TOKEN_BASE
            || !(0.0..=1.0).contains(&self.instructions.noise_rate)
        {
            return fail(format!("invalid instruction settings {:?}", self.instructions));
        }
        if self.train.embed_dim == 0 {
            return fail("train.embed_dim must be positive".into());
        }
        self.train.to_core(self.train.epochs, 0).validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.dagger.iterations > 0 && self.dagger.epochs == 0 {
            return fail("dagger.epochs must be positive".into());
        }
        Ok(())
    }
}
