//! Implementations of the CLI commands: training, evaluation, the steering
//! sweep, and the reward/sampler ablation drivers.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use steerdiff_core::diffuser::NoiseSchedule;
use steerdiff_core::embedspace::{steer, text_safety_score};
use steerdiff_core::grpo::{load_checkpoint, train_run, TrainOptions, TrainSetup};
use steerdiff_core::reward::RewardVariant;
use steerdiff_core::seeding::mix_seed;
use steerdiff_core::synthlab::{unsafe_rate, utility_score};
use steerdiff_core::{Error, Result};

use crate::config::{BuiltRun, RunConfig};

const EVAL_SAFETY_TAG: u64 = 0x6576_616c;
const EVAL_UTILITY_TAG: u64 = 0x7574_696c;

/// Final summary emitted by `train` (and written to `summary.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub final_unsafe_rate: f64,
    pub final_utility: f64,
    pub epochs: usize,
}

/// Evaluates a model under the config's schedule and eval settings.
fn evaluate(built: &BuiltRun, cfg: &RunConfig, seed: u64) -> Result<(f64, f64)> {
    let rate = unsafe_rate(
        &built.model,
        &built.schedule,
        cfg.sampler.guidance,
        &built.task,
        cfg.run.eval_samples,
        cfg.run.oracle_threshold,
        mix_seed(seed, EVAL_SAFETY_TAG),
    )?;
    let utility = utility_score(
        &built.model,
        &built.schedule,
        cfg.sampler.guidance,
        &built.task,
        &built.encoder,
        cfg.run.eval_samples,
        mix_seed(seed, EVAL_UTILITY_TAG),
    )?;
    Ok((rate, utility))
}

/// Runs training per the config and returns the final summary.
pub fn cmd_train(
    cfg: &RunConfig,
    seed: u64,
    out_dir: Option<&Path>,
    workers: usize,
) -> Result<TrainSummary> {
    let mut built = cfg.build()?;
    let setup = TrainSetup {
        task: &built.task,
        schedule: &built.schedule,
        guidance_w: cfg.sampler.guidance,
        reward_ctx: &built.reward_ctx,
        oracle_threshold: cfg.run.oracle_threshold,
    };
    let opts = TrainOptions {
        steps: cfg.run.epochs,
        log_every: cfg.run.eval_every,
        checkpoint_every: cfg.run.checkpoint_every,
        out_dir: out_dir.map(Path::to_path_buf),
        workers,
        config_hash: cfg.policy_hash(),
    };
    let outcome = train_run(built.model.clone(), &setup, &cfg.grpo, &opts, seed)?;
    built.model = outcome.model;

    let (final_unsafe_rate, final_utility) = evaluate(&built, cfg, seed)?;
    let summary = TrainSummary {
        final_unsafe_rate,
        final_utility,
        epochs: cfg.run.epochs,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Config(format!("summary serialization: {e}")))?;
        std::fs::write(dir.join("summary.json"), json)?;
    }
    Ok(summary)
}

/// Per-prompt steering sweep: safety score before and after steering at each
/// strength in the grid. Returns CSV text.
pub fn cmd_steer_sweep(cfg: &RunConfig, alphas: &[f64]) -> Result<String> {
    let built = cfg.build()?;
    let v_safe = built.reward_ctx.safety_direction();
    let mut csv = String::new();
    csv.push_str("# steering sweep: cosine of each prompt embedding with the safety direction,\n");
    csv.push_str("# unsteered (score_before) and after steer(z, alpha) (score_after).\n");
    csv.push_str("prompt_id,label,alpha,score_before,score_after\n");
    for prompt in &built.task.prompts {
        let z = built.encoder.encode(&prompt.center)?;
        let before = text_safety_score(&z, v_safe);
        for &alpha in alphas {
            let after = text_safety_score(&steer(&z, v_safe, alpha)?, v_safe);
            let label = if prompt.unsafe_label { "unsafe" } else { "safe" };
            writeln!(csv, "{},{label},{alpha},{before},{after}", prompt.id)
                .expect("string write");
        }
    }
    Ok(csv)
}

/// One row of the reward-ablation comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateRewardRow {
    pub variant: String,
    pub unsafe_rate: f64,
    pub utility_score: f64,
}

/// Trains every requested reward variant from the same seed and budget and
/// reports each final unsafe rate and utility. Analysis output; asserts
/// nothing.
pub fn cmd_ablate_reward(
    cfg: &RunConfig,
    variants: &[RewardVariant],
    seed: u64,
    out_dir: Option<&Path>,
    workers: usize,
) -> Result<Vec<AblateRewardRow>> {
    if variants.is_empty() {
        return Err(Error::Config("no reward variants requested".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut run_cfg = cfg.clone();
        run_cfg.reward.variant = variant;
        let sub_dir = out_dir.map(|d| d.join(variant.name()));
        let summary = cmd_train(&run_cfg, seed, sub_dir.as_deref(), workers)?;
        rows.push(AblateRewardRow {
            variant: variant.name().to_string(),
            unsafe_rate: summary.final_unsafe_rate,
            utility_score: summary.final_utility,
        });
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&rows)
            .map_err(|e| Error::Config(format!("ablation serialization: {e}")))?;
        std::fs::write(dir.join("ablate_reward.json"), json)?;
    }
    Ok(rows)
}

/// Evaluates a trained checkpoint's unsafe rate under every (eta, T) sampler
/// setting in the grid. Returns CSV text.
pub fn cmd_ablate_sampler(
    cfg: &RunConfig,
    checkpoint: &Path,
    etas: &[f64],
    steps_grid: &[usize],
    seed: u64,
) -> Result<String> {
    let mut built = cfg.build()?;
    let (params, _) = load_checkpoint(checkpoint, Some(cfg.policy_hash()))?;
    built.model.set_params(&params)?;

    let mut csv = String::new();
    csv.push_str("# unsafe rate of a fixed checkpoint under each sampler setting\n");
    csv.push_str("eta,steps,unsafe_rate\n");
    for &eta in etas {
        for &steps in steps_grid {
            let schedule = NoiseSchedule::exponential(steps, eta, cfg.schedule.alpha_bar_end)?;
            let rate = unsafe_rate(
                &built.model,
                &schedule,
                cfg.sampler.guidance,
                &built.task,
                cfg.run.eval_samples,
                cfg.run.oracle_threshold,
                mix_seed(seed, EVAL_SAFETY_TAG),
            )?;
            writeln!(csv, "{eta},{steps},{rate}").expect("string write");
        }
    }
    Ok(csv)
}

/// Safety/utility report of a policy (fresh from config, or a checkpoint).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub unsafe_rate: f64,
    pub utility_score: f64,
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, seed: u64) -> Result<EvalReport> {
    let mut built = cfg.build()?;
    if let Some(path) = checkpoint {
        let (params, _) = load_checkpoint(path, Some(cfg.policy_hash()))?;
        built.model.set_params(&params)?;
    }
    let (rate, utility) = evaluate(&built, cfg, seed)?;
    Ok(EvalReport {
        unsafe_rate: rate,
        utility_score: utility,
    })
}

/// Parses a reward-variant name as used in config files and CLI flags.
pub fn parse_variant(name: &str) -> Result<RewardVariant> {
    match name {
        "steered" => Ok(RewardVariant::Steered),
        "plain_cosine" => Ok(RewardVariant::PlainCosine),
        "safeclip_posneg" => Ok(RewardVariant::SafeclipPosneg),
        "neg_only" => Ok(RewardVariant::NegOnly),
        other => Err(Error::Config(format!(
            "unknown reward variant {other:?} (expected steered, plain_cosine, safeclip_posneg, or neg_only)"
        ))),
    }
}
