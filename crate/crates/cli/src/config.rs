//! Run configuration: a TOML file with one section per subsystem. Unknown
//! keys are rejected, every module-level invariant is re-validated when the
//! run objects are built, and a parsed config serializes back to an equal
//! config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use steerdiff_core::diffnum::Mlp;
use steerdiff_core::diffuser::{DenoiserModel, NoiseSchedule};
use steerdiff_core::embedspace::{AnchorSet, SyntheticEncoder};
use steerdiff_core::grpo::{fnv1a64, GrpoConfig};
use steerdiff_core::reward::{RewardContext, RewardSpec};
use steerdiff_core::synthlab::{make_task, TaskSpec};
use steerdiff_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    /// Preset name: basic8, nudity-analog, or mixed.
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default)]
    pub seed: u64,
    /// Optional task table file overriding the preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Optional anchor tables overriding the task's designated anchors.
    /// Both must be given together.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors_safe_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors_unsafe_file: Option<PathBuf>,
}

fn default_preset() -> String {
    "basic8".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    /// Embedding dimension d.
    #[serde(default = "default_embed_dim")]
    pub dim: usize,
    #[serde(default)]
    pub encoder_seed: u64,
    /// Magnitude of the common encoder offset (embedding-cone tightness).
    #[serde(default = "default_offset_scale")]
    pub offset_scale: f64,
}

fn default_embed_dim() -> usize {
    8
}

fn default_offset_scale() -> f64 {
    4.0
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            dim: default_embed_dim(),
            encoder_seed: 0,
            offset_scale: default_offset_scale(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// Number of DDIM steps T.
    pub steps: usize,
    /// Stochasticity in [0, 1]; training requires eta > 0.
    pub eta: f64,
    /// Target alpha-bar at t = T.
    #[serde(default = "default_alpha_bar_end")]
    pub alpha_bar_end: f64,
}

fn default_alpha_bar_end() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    /// Classifier-free guidance weight; 1 disables the unconditional branch.
    #[serde(default = "default_guidance")]
    pub guidance: f64,
}

fn default_guidance() -> f64 {
    1.0
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            guidance: default_guidance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden layer widths of the denoiser MLP.
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Training steps (one rollout batch + M inner epochs each).
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Progress-line cadence (0 = silent).
    #[serde(default)]
    pub eval_every: usize,
    /// Checkpoint cadence in steps (0 = final checkpoint only).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Samples per prompt for the final unsafe-rate/utility evaluation.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Oracle score above which a sample counts as unsafe.
    #[serde(default = "default_oracle_threshold")]
    pub oracle_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_eval_samples() -> usize {
    100
}

fn default_oracle_threshold() -> f64 {
    0.6
}

/// Full run configuration (the TOML schema).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskSection,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    pub model: ModelSection,
    #[serde(default)]
    pub reward: RewardSpec,
    #[serde(default)]
    pub grpo: GrpoConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg = Self::from_toml_str(&text)?;
        cfg.build()?; // re-validate every module invariant at load time
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config serialize: {e}")))
    }

    /// Hash of the policy-identity sections (task, embedding, model); stored
    /// in checkpoints so they reject mismatched run setups while remaining
    /// loadable under different sampler/eval settings.
    pub fn policy_hash(&self) -> u64 {
        #[derive(Serialize)]
        struct Identity<'a> {
            task: &'a TaskSection,
            embedding: &'a EmbeddingSection,
            model: &'a ModelSection,
        }
        let canon = serde_json::to_string(&Identity {
            task: &self.task,
            embedding: &self.embedding,
            model: &self.model,
        })
        .expect("identity serializes");
        fnv1a64(canon.as_bytes())
    }

    /// Instantiates and validates every run object.
    pub fn build(&self) -> Result<BuiltRun> {
        let task = match &self.task.file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::Config(format!("cannot read task file {}: {e}", path.display()))
                })?;
                TaskSpec::from_table_str(&text)?
            }
            None => make_task(&self.task.preset, self.task.seed)?,
        };
        let encoder = SyntheticEncoder::from_seed_with_offset(
            self.embedding.dim,
            task.data_dim,
            self.embedding.encoder_seed,
            self.embedding.offset_scale,
        )?;
        let anchors = match (&self.task.anchors_safe_file, &self.task.anchors_unsafe_file) {
            (Some(safe), Some(unsafe_)) => AnchorSet::from_table_files(safe, unsafe_)?,
            (None, None) => task.anchor_set()?,
            _ => {
                return Err(Error::Config(
                    "anchors_safe_file and anchors_unsafe_file must be given together".into(),
                ))
            }
        };
        let schedule = NoiseSchedule::exponential(
            self.schedule.steps,
            self.schedule.eta,
            self.schedule.alpha_bar_end,
        )?;
        let reward_ctx = RewardContext::build(encoder.clone(), &anchors, self.reward)?;
        self.grpo.validate()?;
        if !(self.run.oracle_threshold > 0.0 && self.run.oracle_threshold < 1.0) {
            return Err(Error::Config("oracle_threshold must be in (0, 1)".into()));
        }
        if self.run.eval_samples == 0 {
            return Err(Error::Config("eval_samples must be positive".into()));
        }

        let latent = task.data_dim;
        let n_prompts = task.prompts.len();
        let mut sizes = vec![latent + n_prompts + 1];
        sizes.extend_from_slice(&self.model.hidden);
        sizes.push(latent);
        let net = Mlp::new(&sizes, self.model.init_seed)?;
        let model = DenoiserModel::with_onehot_conditioning(net, latent, n_prompts)?;

        Ok(BuiltRun {
            task,
            encoder,
            schedule,
            model,
            reward_ctx,
        })
    }
}

/// Instantiated, validated run objects.
pub struct BuiltRun {
    pub task: TaskSpec,
    pub encoder: SyntheticEncoder,
    pub schedule: NoiseSchedule,
    pub model: DenoiserModel,
    pub reward_ctx: RewardContext,
}
