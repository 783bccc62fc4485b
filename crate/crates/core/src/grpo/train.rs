//! Batch loss/gradient assembly and the rollout -> advantage -> update loop.
//!
//! Gradients are accumulated per trajectory (in that sample's shuffled
//! timestep order) and the per-sample buffers are summed in sample order, so
//! results are bit-identical regardless of the worker count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use super::{save_checkpoint, GrpoConfig, RolloutGroup};
use crate::diffnum::{adam_step, AdamParams, AdamState, GradientBuffer};
use crate::diffuser::{
    ddim_mean, draw_initial_noise, gaussian_logprob, logprob_step_traced, rollout, DenoiserModel,
    NoiseSchedule, Trajectory,
};
use crate::reward::RewardContext;
use crate::seeding::mix_seed;
use crate::synthlab::{oracle_unsafe, TaskSpec};
use crate::{Error, Result};

const NOISE_TAG: u64 = 0x6e6f_6973;
const ROLLOUT_TAG: u64 = 0x726f_6c6c;

/// Timesteps that receive gradient: the last `ceil(fraction * T)` sampling
/// steps (t = 1 .. ceil), restricted to stochastic transitions.
pub fn trained_timesteps(schedule: &NoiseSchedule, fraction: f64) -> Vec<usize> {
    let t_max = ((fraction * schedule.steps() as f64).ceil() as usize).clamp(1, schedule.steps());
    (1..=t_max)
        .filter(|&t| schedule.is_stochastic(t))
        .collect()
}

/// Log-probability of one stored transition under current parameters,
/// through the same arithmetic as the rollout.
fn transition_logp(
    model: &DenoiserModel,
    traj: &Trajectory,
    t: usize,
    schedule: &NoiseSchedule,
    guidance_w: f64,
) -> Result<f64> {
    let cond = model.cond(traj.prompt_id)?.to_vec();
    let mean = ddim_mean(model, traj.state_at(t), t, &cond, guidance_w, schedule)?;
    Ok(gaussian_logprob(
        traj.state_at(t - 1),
        &mean,
        schedule.sigma(t),
    ))
}

struct PairTerms {
    loss: f64,
    dloss_dlogp: f64,
    kl: f64,
    clipped: bool,
}

fn pair_terms(log_ratio: f64, advantage: f64, cfg: &GrpoConfig) -> Option<PairTerms> {
    let rho = log_ratio.exp();
    if !rho.is_finite() {
        return None;
    }
    let unclipped = -advantage * rho;
    let clipped_val = -advantage * rho.clamp(1.0 - cfg.clip_range, 1.0 + cfg.clip_range);
    // On ties the unclipped branch is active, so gradient flows at rho = 1.
    let (surr, dsurr, clipped) = if unclipped >= clipped_val {
        (unclipped, -advantage * rho, false)
    } else {
        (clipped_val, 0.0, true)
    };
    let kl = log_ratio.exp_m1() - log_ratio;
    let dkl = log_ratio.exp_m1();
    Some(PairTerms {
        loss: surr + cfg.kl_coef * kl,
        dloss_dlogp: dsurr + cfg.kl_coef * dkl,
        kl,
        clipped,
    })
}

fn flatten_batch(batch: &[RolloutGroup]) -> Vec<(&Trajectory, f64)> {
    batch
        .iter()
        .flat_map(|g| g.trajectories.iter().zip(g.advantages.iter().copied()))
        .collect()
}

fn map_results<T, F>(pool: Option<&ThreadPool>, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = match pool {
        Some(p) => p.install(|| (0..n).into_par_iter().map(&f).collect()),
        None => (0..n).map(f).collect(),
    };
    results.into_iter().collect()
}

/// Diagnostics of one gradient accumulation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub kl_mean: f64,
    pub clip_frac: f64,
    pub n_pairs: usize,
}

/// Mean per-pair loss (surrogate + KL) over the batch under current
/// parameters. Pure; the finite-difference oracle probes this function.
pub fn batch_loss(
    model: &DenoiserModel,
    batch: &[RolloutGroup],
    schedule: &NoiseSchedule,
    guidance_w: f64,
    cfg: &GrpoConfig,
) -> Result<f64> {
    let ts = trained_timesteps(schedule, cfg.timestep_fraction);
    if ts.is_empty() {
        return Err(Error::Config("no stochastic timesteps to train on".into()));
    }
    let samples = flatten_batch(batch);
    if samples.is_empty() {
        return Err(Error::Config("empty rollout batch".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (idx, (traj, adv)) in samples.iter().enumerate() {
        for &t in &ts {
            let logp = transition_logp(model, traj, t, schedule, guidance_w)?;
            let terms = pair_terms(logp - traj.old_logp_at(t), *adv, cfg)
                .ok_or(Error::DivergedPolicy { sample: idx, t })?;
            sum += terms.loss;
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Loss, parameter gradient, and diagnostics over a rollout batch.
///
/// Each sample walks its trained timesteps in an order shuffled by
/// `mix_seed(shuffle_seed, sample_index)`.
pub fn batch_gradient(
    model: &DenoiserModel,
    batch: &[RolloutGroup],
    schedule: &NoiseSchedule,
    guidance_w: f64,
    cfg: &GrpoConfig,
    shuffle_seed: u64,
    pool: Option<&ThreadPool>,
) -> Result<(f64, GradientBuffer, BatchStats)> {
    let ts = trained_timesteps(schedule, cfg.timestep_fraction);
    if ts.is_empty() {
        return Err(Error::Config("no stochastic timesteps to train on".into()));
    }
    let samples = flatten_batch(batch);
    if samples.is_empty() {
        return Err(Error::Config("empty rollout batch".into()));
    }
    let n_params = model.params().len();

    struct SampleOut {
        grad: Vec<f64>,
        loss_sum: f64,
        kl_sum: f64,
        clip_count: usize,
    }

    let per_sample = map_results(pool, samples.len(), |idx| {
        let (traj, adv) = samples[idx];
        let mut order = ts.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(shuffle_seed, idx as u64));
        order.shuffle(&mut rng);

        let mut out = SampleOut {
            grad: vec![0.0; n_params],
            loss_sum: 0.0,
            kl_sum: 0.0,
            clip_count: 0,
        };
        for &t in &order {
            let step = logprob_step_traced(model, traj, t, schedule, guidance_w)?;
            let terms = pair_terms(step.logp - traj.old_logp_at(t), adv, cfg)
                .ok_or(Error::DivergedPolicy { sample: idx, t })?;
            if terms.dloss_dlogp != 0.0 {
                step.backward(model, terms.dloss_dlogp, &mut out.grad)?;
            }
            out.loss_sum += terms.loss;
            out.kl_sum += terms.kl;
            if terms.clipped {
                out.clip_count += 1;
            }
        }
        Ok(out)
    })?;

    let n_pairs = samples.len() * ts.len();
    let scale = 1.0 / n_pairs as f64;
    let mut grad = GradientBuffer::zeros(n_params);
    let mut loss = 0.0;
    let mut kl = 0.0;
    let mut clipped = 0usize;
    for s in &per_sample {
        grad.accumulate_scaled(&s.grad, scale)?;
        loss += s.loss_sum;
        kl += s.kl_sum;
        clipped += s.clip_count;
    }
    Ok((
        loss * scale,
        grad,
        BatchStats {
            kl_mean: kl * scale,
            clip_frac: clipped as f64 / n_pairs as f64,
            n_pairs,
        },
    ))
}

/// Aggregated diagnostics of one optimizer step (all inner epochs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStepStats {
    /// Batch loss measured on the first inner epoch (at the snapshot).
    pub loss_first: f64,
    pub kl_mean: f64,
    pub clip_frac: f64,
    pub grad_norm: f64,
}

/// Runs `inner_epochs` gradient accumulations and Adam updates over one
/// rollout batch, with global-norm clipping and the hard KL abort.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut DenoiserModel,
    adam: &mut AdamState,
    batch: &[RolloutGroup],
    schedule: &NoiseSchedule,
    guidance_w: f64,
    cfg: &GrpoConfig,
    step_idx: usize,
    step_seed: u64,
    pool: Option<&ThreadPool>,
) -> Result<TrainStepStats> {
    let adam_params = AdamParams::with_lr(cfg.lr);
    let mut stats = TrainStepStats {
        loss_first: 0.0,
        kl_mean: 0.0,
        clip_frac: 0.0,
        grad_norm: 0.0,
    };
    for epoch in 0..cfg.inner_epochs {
        let (loss, mut grad, batch_stats) = batch_gradient(
            model,
            batch,
            schedule,
            guidance_w,
            cfg,
            mix_seed(step_seed, epoch as u64),
            pool,
        )?;
        if batch_stats.kl_mean > cfg.kl_abort {
            return Err(Error::KlAbort {
                kl: batch_stats.kl_mean,
                threshold: cfg.kl_abort,
                step: step_idx,
            });
        }
        if epoch == 0 {
            stats.loss_first = loss;
        }
        stats.kl_mean += batch_stats.kl_mean;
        stats.clip_frac += batch_stats.clip_frac;
        stats.grad_norm += grad.clip_global_norm(cfg.grad_clip);
        adam_step(model.params_mut(), grad.as_slice(), adam, &adam_params)?;
    }
    let m = cfg.inner_epochs as f64;
    stats.kl_mean /= m;
    stats.clip_frac /= m;
    stats.grad_norm /= m;
    Ok(stats)
}

/// One line of the metrics stream (JSONL, one object per training step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub reward_mean_safe: f64,
    pub reward_mean_unsafe: f64,
    pub kl_mean: f64,
    pub clip_frac: f64,
    pub grad_norm: f64,
    pub unsafe_rate: f64,
}

/// Immutable run ingredients shared by every training step.
pub struct TrainSetup<'a> {
    pub task: &'a TaskSpec,
    pub schedule: &'a NoiseSchedule,
    pub guidance_w: f64,
    pub reward_ctx: &'a RewardContext,
    /// Oracle score above which a sample counts as unsafe.
    pub oracle_threshold: f64,
}

/// Run-level knobs: budget, cadences, output, parallelism.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub steps: usize,
    /// Progress line to stderr every this many steps (0 = silent).
    pub log_every: usize,
    /// Checkpoint cadence in steps (0 = final checkpoint only).
    pub checkpoint_every: usize,
    pub out_dir: Option<PathBuf>,
    /// Worker threads for rollouts and gradient accumulation (<= 1 =
    /// sequential). Results do not depend on this value.
    pub workers: usize,
    /// Hash stamped into checkpoints, binding them to a run configuration.
    pub config_hash: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 0,
            log_every: 0,
            checkpoint_every: 0,
            out_dir: None,
            workers: 1,
            config_hash: 0,
        }
    }
}

pub struct TrainOutcome {
    pub model: DenoiserModel,
    pub history: Vec<StepMetrics>,
}

/// Generates one rollout batch under the parameter snapshot.
fn collect_groups(
    snapshot: &DenoiserModel,
    setup: &TrainSetup,
    cfg: &GrpoConfig,
    step_seed: u64,
    pool: Option<&ThreadPool>,
) -> Result<Vec<RolloutGroup>> {
    let batch_noise = draw_initial_noise(snapshot.latent_dim(), mix_seed(step_seed, NOISE_TAG));
    let prompts = &setup.task.prompts;
    map_results(pool, prompts.len(), |pid| {
        let prompt = &prompts[pid];
        let noise = if cfg.shared_noise_per_group {
            draw_initial_noise(
                snapshot.latent_dim(),
                mix_seed(mix_seed(step_seed, NOISE_TAG), 1 + pid as u64),
            )
        } else {
            batch_noise.clone()
        };
        let trajs = rollout(
            snapshot,
            prompt.id,
            cfg.group_size,
            setup.schedule,
            setup.guidance_w,
            &noise,
            mix_seed(mix_seed(step_seed, ROLLOUT_TAG), prompt.id as u64),
        )?;
        let rewards = trajs
            .iter()
            .map(|tr| setup.reward_ctx.reward(tr.final_sample(), &prompt.center))
            .collect::<Result<Vec<f64>>>()?;
        RolloutGroup::from_rewards(prompt.id, trajs, rewards, cfg.delta, cfg.adv_clip)
    })
}

fn batch_metrics(
    step: usize,
    batch: &[RolloutGroup],
    setup: &TrainSetup,
    stats: &TrainStepStats,
) -> StepMetrics {
    let mut safe_sum = 0.0;
    let mut safe_n = 0usize;
    let mut unsafe_sum = 0.0;
    let mut unsafe_n = 0usize;
    let mut unsafe_hits = 0usize;
    let mut unsafe_samples = 0usize;
    for group in batch {
        let prompt = &setup.task.prompts[group.prompt_id];
        if prompt.unsafe_label {
            unsafe_sum += group.mean_reward();
            unsafe_n += 1;
            for traj in &group.trajectories {
                if oracle_unsafe(traj.final_sample(), setup.task) > setup.oracle_threshold {
                    unsafe_hits += 1;
                }
                unsafe_samples += 1;
            }
        } else {
            safe_sum += group.mean_reward();
            safe_n += 1;
        }
    }
    StepMetrics {
        step,
        reward_mean_safe: if safe_n > 0 { safe_sum / safe_n as f64 } else { 0.0 },
        reward_mean_unsafe: if unsafe_n > 0 {
            unsafe_sum / unsafe_n as f64
        } else {
            0.0
        },
        kl_mean: stats.kl_mean,
        clip_frac: stats.clip_frac,
        grad_norm: stats.grad_norm,
        unsafe_rate: if unsafe_samples > 0 {
            unsafe_hits as f64 / unsafe_samples as f64
        } else {
            0.0
        },
    }
}

/// The online loop: snapshot -> rollout -> rewards -> group advantages ->
/// inner-epoch updates, with JSONL metrics and periodic checkpoints.
pub fn train_run(
    model: DenoiserModel,
    setup: &TrainSetup,
    cfg: &GrpoConfig,
    opts: &TrainOptions,
    run_seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    setup.task.validate()?;
    if setup.schedule.eta() == 0.0 {
        return Err(Error::Config(
            "training requires a stochastic sampler (eta > 0)".into(),
        ));
    }
    if model.n_prompts() != setup.task.prompts.len() {
        return Err(Error::Config(format!(
            "model conditions {} prompts but task has {}",
            model.n_prompts(),
            setup.task.prompts.len()
        )));
    }
    if trained_timesteps(setup.schedule, cfg.timestep_fraction).is_empty() {
        return Err(Error::Config("no stochastic timesteps to train on".into()));
    }

    let pool = if opts.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.workers)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
        )
    } else {
        None
    };

    let mut metrics_out = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join("metrics.jsonl"))?))
        }
        None => None,
    };

    let mut model = model;
    let mut adam = AdamState::new(model.params().len());
    let mut history = Vec::with_capacity(opts.steps);

    for step in 0..opts.steps {
        let step_seed = mix_seed(run_seed, step as u64);
        let snapshot = model.clone();
        let batch = collect_groups(&snapshot, setup, cfg, step_seed, pool.as_ref())?;
        let stats = train_step(
            &mut model,
            &mut adam,
            &batch,
            setup.schedule,
            setup.guidance_w,
            cfg,
            step,
            step_seed,
            pool.as_ref(),
        )?;
        let row = batch_metrics(step, &batch, setup, &stats);
        if let Some(out) = metrics_out.as_mut() {
            let line = serde_json::to_string(&row)
                .map_err(|e| Error::Config(format!("metrics serialization: {e}")))?;
            writeln!(out, "{line}")?;
        }
        if opts.log_every > 0 && (step + 1) % opts.log_every == 0 {
            eprintln!(
                "step {:>5}  reward_safe {:+.4}  reward_unsafe {:+.4}  unsafe_rate {:.3}  kl {:.2e}",
                step, row.reward_mean_safe, row.reward_mean_unsafe, row.unsafe_rate, row.kl_mean
            );
        }
        history.push(row);
        if opts.checkpoint_every > 0 && (step + 1) % opts.checkpoint_every == 0 {
            if let Some(dir) = &opts.out_dir {
                save_checkpoint(
                    &dir.join(format!("checkpoint_{:06}.bin", step + 1)),
                    model.params(),
                    opts.config_hash,
                )?;
            }
        }
    }

    if let Some(out) = metrics_out.as_mut() {
        out.flush()?;
    }
    if let Some(dir) = &opts.out_dir {
        save_checkpoint(
            &dir.join("checkpoint_final.bin"),
            model.params(),
            opts.config_hash,
        )?;
    }
    Ok(TrainOutcome { model, history })
}
