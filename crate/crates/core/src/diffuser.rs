//! Toy conditional denoising-diffusion model: exponential noise schedule,
//! DDIM sampling with tunable stochasticity, classifier-free-guidance
//! combination, and exact Gaussian transition log-probabilities.
//!
//! One sampling step from `z_t` to `z_{t-1}` is
//!
//! ```text
//! eps_hat = eps_u + w * (eps_c - eps_u)
//! x0_hat  = (z_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)
//! mu      = sqrt(abar_{t-1}) * x0_hat + sqrt(1 - abar_{t-1} - sigma_t^2) * eps_hat
//! z_{t-1} = mu + sigma_t * noise
//! ```
//!
//! with `sigma_t = eta * sqrt((1-abar_{t-1})/(1-abar_t)) * sqrt(1 - abar_t/abar_{t-1})`.
//! For `sigma_t > 0` the transition is a Gaussian whose log-density carries
//! its full normalizing constant, so densities compose across steps with
//! differing sigma. The final hop (t = 1, where `abar_0 = 1`) has
//! `sigma_1 = 0` and is deterministic; its stored log-probability is 0.0 by
//! convention and it never enters ratio-based losses.

use std::f64::consts::PI;

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffnum::{Mlp, MlpTrace};
use crate::seeding::mix_seed;
use crate::{Error, Result};

/// Floor applied to the alpha-bar sequence.
pub const ALPHA_BAR_FLOOR: f64 = 1e-4;

/// Discrete noise schedule over `T` sampling steps.
///
/// `alpha_bars` has length T+1 with `alpha_bars[0] = 1`, strictly decreasing,
/// all in (0, 1]. `sigmas[t]` is the transition noise scale for the step
/// `z_t -> z_{t-1}`; `sigmas[0]` is unused and kept at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    eta: f64,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Exponential schedule `abar_t = exp(-c t / T)` with `c` chosen so that
    /// `abar_T = alpha_bar_end` (default 1e-2), floored at 1e-4.
    pub fn exponential(steps: usize, eta: f64, alpha_bar_end: f64) -> Result<Self> {
        if !(alpha_bar_end > 0.0 && alpha_bar_end < 1.0) {
            return Err(Error::Config(format!(
                "alpha_bar_end must be in (0, 1), got {alpha_bar_end}"
            )));
        }
        let c = -alpha_bar_end.ln();
        let alpha_bars = (0..=steps)
            .map(|t| {
                (-c * t as f64 / steps as f64)
                    .exp()
                    .clamp(ALPHA_BAR_FLOOR, 1.0)
            })
            .collect();
        Self::from_alpha_bars(alpha_bars, eta)
    }

    /// Builds a schedule from an explicit alpha-bar sequence.
    pub fn from_alpha_bars(alpha_bars: Vec<f64>, eta: f64) -> Result<Self> {
        if alpha_bars.len() < 2 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Config(format!("eta must be in [0, 1], got {eta}")));
        }
        if alpha_bars[0] != 1.0 {
            return Err(Error::Config(format!(
                "alpha_bar_0 must be 1, got {}",
                alpha_bars[0]
            )));
        }
        for w in alpha_bars.windows(2) {
            if !(w[1] > 0.0 && w[1] <= 1.0 && w[1] < w[0]) {
                return Err(Error::Config(format!(
                    "alpha_bars must be strictly decreasing in (0, 1]: {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        let steps = alpha_bars.len() - 1;
        let mut sigmas = vec![0.0; steps + 1];
        for t in 1..=steps {
            let (prev, cur) = (alpha_bars[t - 1], alpha_bars[t]);
            let variance = (1.0 - prev) / (1.0 - cur) * (1.0 - cur / prev);
            sigmas[t] = eta * variance.max(0.0).sqrt();
            let slack = 1.0 - prev - sigmas[t] * sigmas[t];
            if slack < -1e-12 {
                return Err(Error::InvalidSchedule { t, value: slack });
            }
        }
        Ok(Self {
            steps,
            eta,
            alpha_bars,
            sigmas,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `abar_t` for t in 0..=T.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// `sigma_t` for t in 1..=T.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    /// Whether the `z_t -> z_{t-1}` transition carries a density.
    pub fn is_stochastic(&self, t: usize) -> bool {
        self.sigmas[t] > 0.0
    }

    /// Fraction-of-schedule encoding of `t` fed to the denoiser.
    pub fn time_input(&self, t: usize) -> f64 {
        t as f64 / self.steps as f64
    }
}

/// Log-density of an isotropic Gaussian with the full normalizing constant:
/// `-|x - mean|^2 / (2 sigma^2) - (d/2) ln(2 pi sigma^2)`.
pub fn gaussian_logprob(x: &[f64], mean: &[f64], sigma: f64) -> f64 {
    debug_assert_eq!(x.len(), mean.len());
    debug_assert!(sigma > 0.0);
    let mut sq = 0.0;
    for (xi, mi) in x.iter().zip(mean) {
        let r = xi - mi;
        sq += r * r;
    }
    let dim = x.len() as f64;
    -sq / (2.0 * sigma * sigma) - 0.5 * dim * (2.0 * PI * sigma * sigma).ln()
}

/// Conditional noise-prediction network: a plain MLP over
/// `[latent | condition | t/T]`, one condition vector per prompt.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    net: Mlp,
    latent_dim: usize,
    cond_dim: usize,
    cond_table: Vec<Vec<f64>>,
}

impl DenoiserModel {
    pub fn new(net: Mlp, latent_dim: usize, cond_table: Vec<Vec<f64>>) -> Result<Self> {
        if cond_table.is_empty() {
            return Err(Error::Config("condition table must be nonempty".into()));
        }
        let cond_dim = cond_table[0].len();
        if cond_table.iter().any(|c| c.len() != cond_dim) {
            return Err(Error::Config(
                "all condition vectors must share one dimension".into(),
            ));
        }
        let expected_in = latent_dim + cond_dim + 1;
        if net.input_dim() != expected_in {
            return Err(Error::DimensionMismatch {
                context: "DenoiserModel input layer",
                expected: expected_in,
                got: net.input_dim(),
            });
        }
        if net.output_dim() != latent_dim {
            return Err(Error::DimensionMismatch {
                context: "DenoiserModel output layer",
                expected: latent_dim,
                got: net.output_dim(),
            });
        }
        Ok(Self {
            net,
            latent_dim,
            cond_dim,
            cond_table,
        })
    }

    /// One-hot conditioning: prompt `i` maps to basis vector `e_i`.
    pub fn with_onehot_conditioning(net: Mlp, latent_dim: usize, n_prompts: usize) -> Result<Self> {
        let mut table = vec![vec![0.0; n_prompts]; n_prompts];
        for (i, row) in table.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self::new(net, latent_dim, table)
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn n_prompts(&self) -> usize {
        self.cond_table.len()
    }

    pub fn cond(&self, prompt_id: usize) -> Result<&[f64]> {
        self.cond_table
            .get(prompt_id)
            .map(|c| c.as_slice())
            .ok_or_else(|| Error::Config(format!("unknown prompt id {prompt_id}")))
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params(params)
    }

    fn assemble_input(&self, z: &[f64], cond: &[f64], t_frac: f64) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                context: "DenoiserModel latent",
                expected: self.latent_dim,
                got: z.len(),
            });
        }
        if cond.len() != self.cond_dim {
            return Err(Error::DimensionMismatch {
                context: "DenoiserModel condition",
                expected: self.cond_dim,
                got: cond.len(),
            });
        }
        let mut input = Vec::with_capacity(self.latent_dim + self.cond_dim + 1);
        input.extend_from_slice(z);
        input.extend_from_slice(cond);
        input.push(t_frac);
        Ok(input)
    }

    /// `eps_theta(z, t, c)` for an explicit condition vector.
    pub fn predict_noise(&self, z: &[f64], cond: &[f64], t_frac: f64) -> Result<Vec<f64>> {
        self.net.forward(&self.assemble_input(z, cond, t_frac)?)
    }

    fn predict_noise_traced(
        &self,
        z: &[f64],
        cond: &[f64],
        t_frac: f64,
    ) -> Result<(Vec<f64>, MlpTrace)> {
        self.net
            .forward_traced(&self.assemble_input(z, cond, t_frac)?)
    }
}

/// Per-step schedule coefficients of the DDIM mean, written as
/// `mu = sqrt(abar_prev) * x0_hat + dir * eps_hat`.
#[derive(Debug, Clone, Copy)]
struct StepCoefficients {
    dir: f64,
    sqrt_abar_prev: f64,
    sqrt_abar_t: f64,
    sqrt_one_minus_abar_t: f64,
}

impl StepCoefficients {
    fn at(schedule: &NoiseSchedule, t: usize) -> Result<Self> {
        if t == 0 || t > schedule.steps() {
            return Err(Error::Config(format!(
                "step index {t} outside 1..={}",
                schedule.steps()
            )));
        }
        let abar_prev = schedule.alpha_bar(t - 1);
        let abar_t = schedule.alpha_bar(t);
        let sigma = schedule.sigma(t);
        let dir_sq = 1.0 - abar_prev - sigma * sigma;
        if dir_sq < -1e-12 {
            return Err(Error::InvalidSchedule { t, value: dir_sq });
        }
        Ok(Self {
            dir: dir_sq.max(0.0).sqrt(),
            sqrt_abar_prev: abar_prev.sqrt(),
            sqrt_abar_t: abar_t.sqrt(),
            sqrt_one_minus_abar_t: (1.0 - abar_t).sqrt(),
        })
    }

    /// d mu / d eps_hat.
    fn eps_coefficient(&self) -> f64 {
        self.dir - self.sqrt_abar_prev * self.sqrt_one_minus_abar_t / self.sqrt_abar_t
    }
}

/// Classifier-free-guided noise estimate. At `w = 1` the unconditional
/// branch cancels and is skipped.
fn guided_noise(
    model: &DenoiserModel,
    z_t: &[f64],
    cond: &[f64],
    t_frac: f64,
    guidance_w: f64,
) -> Result<Vec<f64>> {
    let eps_c = model.predict_noise(z_t, cond, t_frac)?;
    if guidance_w == 1.0 {
        return Ok(eps_c);
    }
    let zero_cond = vec![0.0; cond.len()];
    let eps_u = model.predict_noise(z_t, &zero_cond, t_frac)?;
    Ok(eps_u
        .iter()
        .zip(&eps_c)
        .map(|(u, c)| u + guidance_w * (c - u))
        .collect())
}

/// Deterministic DDIM mean `mu_theta(z_t, t, c)` under guidance weight `w`.
pub fn ddim_mean(
    model: &DenoiserModel,
    z_t: &[f64],
    t: usize,
    cond: &[f64],
    guidance_w: f64,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let coef = StepCoefficients::at(schedule, t)?;
    let eps_hat = guided_noise(model, z_t, cond, schedule.time_input(t), guidance_w)?;
    Ok(mean_from_eps(z_t, &eps_hat, &coef))
}

fn mean_from_eps(z_t: &[f64], eps_hat: &[f64], coef: &StepCoefficients) -> Vec<f64> {
    z_t.iter()
        .zip(eps_hat)
        .map(|(z, e)| {
            let x0 = (z - coef.sqrt_one_minus_abar_t * e) / coef.sqrt_abar_t;
            coef.sqrt_abar_prev * x0 + coef.dir * e
        })
        .collect()
}

/// One sampling transition `z_t -> z_{t-1}` without density bookkeeping.
pub fn ddim_step(
    model: &DenoiserModel,
    z_t: &[f64],
    t: usize,
    cond: &[f64],
    guidance_w: f64,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let mut z = ddim_mean(model, z_t, t, cond, guidance_w, schedule)?;
    let sigma = schedule.sigma(t);
    if sigma > 0.0 {
        for zi in &mut z {
            let noise: f64 = rng.sample(StandardNormal);
            *zi += sigma * noise;
        }
    }
    Ok(z)
}

/// One sampling transition that also returns the transition log-probability.
///
/// Requires a stochastic schedule (`eta > 0`); the lone deterministic step at
/// t = 1 yields log-probability 0.0 by convention.
pub fn ddim_step_with_logprob(
    model: &DenoiserModel,
    z_t: &[f64],
    t: usize,
    cond: &[f64],
    guidance_w: f64,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, f64)> {
    if schedule.eta() == 0.0 {
        return Err(Error::DegenerateDensity { eta: 0.0 });
    }
    let mean = ddim_mean(model, z_t, t, cond, guidance_w, schedule)?;
    let sigma = schedule.sigma(t);
    if sigma == 0.0 {
        return Ok((mean, 0.0));
    }
    let mut z = mean.clone();
    for zi in &mut z {
        let noise: f64 = rng.sample(StandardNormal);
        *zi += sigma * noise;
    }
    let logp = gaussian_logprob(&z, &mean, sigma);
    Ok((z, logp))
}

/// A sampled denoising trajectory with the per-step log-probabilities it was
/// generated under.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub prompt_id: usize,
    /// Chronological states: `states[j] = z_{T-j}`, so `states[0]` is the
    /// initial noise and `states[T]` the final sample.
    states: Vec<Vec<f64>>,
    /// `old_logps[j]` is the log-probability of the transition out of
    /// `states[j]`, i.e. for timestep `t = T - j`.
    old_logps: Vec<f64>,
    pub noise_seed: u64,
}

impl Trajectory {
    pub fn num_steps(&self) -> usize {
        self.old_logps.len()
    }

    /// `z_t`, for t in 0..=T.
    pub fn state_at(&self, t: usize) -> &[f64] {
        let steps = self.num_steps();
        &self.states[steps - t]
    }

    /// The generated sample `z_0` (the identity-decoded "image").
    pub fn final_sample(&self) -> &[f64] {
        self.states.last().expect("trajectory has states")
    }

    /// Rollout-time log-probability of the transition `z_t -> z_{t-1}`.
    pub fn old_logp_at(&self, t: usize) -> f64 {
        self.old_logps[self.num_steps() - t]
    }

    pub fn old_logps(&self) -> &[f64] {
        &self.old_logps
    }

    /// Trajectory log-probability: the plain sum of per-step terms.
    pub fn total_old_logp(&self) -> f64 {
        self.old_logps.iter().sum()
    }
}

/// Draws the shared initial noise `z_T ~ N(0, I)`.
pub fn draw_initial_noise(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Generates `k` trajectories for one prompt, all starting from the same
/// `z_T`, recording per-step log-probabilities under the current parameters.
///
/// Trajectory `i` draws its transition noise from a generator seeded with
/// `mix_seed(noise_seed, i)`, so rollouts are reproducible and
/// order-independent.
pub fn rollout(
    model: &DenoiserModel,
    prompt_id: usize,
    k: usize,
    schedule: &NoiseSchedule,
    guidance_w: f64,
    shared_noise: &[f64],
    noise_seed: u64,
) -> Result<Vec<Trajectory>> {
    if k < 2 {
        return Err(Error::Config(format!(
            "group statistics need k >= 2 trajectories, got {k}"
        )));
    }
    if shared_noise.len() != model.latent_dim() {
        return Err(Error::DimensionMismatch {
            context: "rollout shared noise",
            expected: model.latent_dim(),
            got: shared_noise.len(),
        });
    }
    let cond = model.cond(prompt_id)?.to_vec();
    let steps = schedule.steps();
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let traj_seed = mix_seed(noise_seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(traj_seed);
        let mut states = Vec::with_capacity(steps + 1);
        let mut logps = Vec::with_capacity(steps);
        states.push(shared_noise.to_vec());
        let mut z = shared_noise.to_vec();
        for t in (1..=steps).rev() {
            let (next, logp) = if schedule.eta() > 0.0 {
                ddim_step_with_logprob(model, &z, t, &cond, guidance_w, schedule, &mut rng)?
            } else {
                (
                    ddim_step(model, &z, t, &cond, guidance_w, schedule, &mut rng)?,
                    0.0,
                )
            };
            states.push(next.clone());
            logps.push(logp);
            z = next;
        }
        out.push(Trajectory {
            prompt_id,
            states,
            old_logps: logps,
            noise_seed: traj_seed,
        });
    }
    Ok(out)
}

/// Samples a single `z_0` without bookkeeping (evaluation use).
pub fn sample_final(
    model: &DenoiserModel,
    prompt_id: usize,
    schedule: &NoiseSchedule,
    guidance_w: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let cond = model.cond(prompt_id)?.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z: Vec<f64> = (0..model.latent_dim())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    for t in (1..=schedule.steps()).rev() {
        z = ddim_step(model, &z, t, &cond, guidance_w, schedule, &mut rng)?;
    }
    Ok(z)
}

/// Recomputes per-step log-probabilities of a stored trajectory under the
/// model's *current* parameters. At the rollout parameters this reproduces
/// the stored values through the same arithmetic path.
pub fn logprob_under(
    model: &DenoiserModel,
    trajectory: &Trajectory,
    schedule: &NoiseSchedule,
    guidance_w: f64,
) -> Result<Vec<f64>> {
    if schedule.eta() == 0.0 {
        return Err(Error::DegenerateDensity { eta: 0.0 });
    }
    if trajectory.num_steps() != schedule.steps() {
        return Err(Error::Replay(format!(
            "trajectory has {} steps but schedule has {}",
            trajectory.num_steps(),
            schedule.steps()
        )));
    }
    if trajectory.final_sample().len() != model.latent_dim() {
        return Err(Error::Replay(format!(
            "trajectory latent dim {} does not match model {}",
            trajectory.final_sample().len(),
            model.latent_dim()
        )));
    }
    let cond = model.cond(trajectory.prompt_id)?.to_vec();
    let steps = schedule.steps();
    let mut logps = Vec::with_capacity(steps);
    for t in (1..=steps).rev() {
        let sigma = schedule.sigma(t);
        if sigma == 0.0 {
            logps.push(0.0);
            continue;
        }
        let mean = ddim_mean(
            model,
            trajectory.state_at(t),
            t,
            &cond,
            guidance_w,
            schedule,
        )?;
        logps.push(gaussian_logprob(trajectory.state_at(t - 1), &mean, sigma));
    }
    Ok(logps)
}

/// A single transition's log-probability with everything cached for the
/// reverse pass: used by the policy update, where the upstream scalar
/// depends on the (already computed) log-probability itself.
pub struct StepLogprob {
    pub logp: f64,
    /// (z_{t-1} - mu) / sigma^2
    residual_over_var: Vec<f64>,
    eps_coef: f64,
    guidance_w: f64,
    trace_cond: MlpTrace,
    trace_uncond: Option<MlpTrace>,
}

/// Forward pass of one stored transition under current parameters, traced.
/// The step must be stochastic (`sigma_t > 0`).
pub fn logprob_step_traced(
    model: &DenoiserModel,
    trajectory: &Trajectory,
    t: usize,
    schedule: &NoiseSchedule,
    guidance_w: f64,
) -> Result<StepLogprob> {
    let sigma = schedule.sigma(t);
    if sigma == 0.0 {
        return Err(Error::DegenerateDensity {
            eta: schedule.eta(),
        });
    }
    let cond = model.cond(trajectory.prompt_id)?.to_vec();
    let z_t = trajectory.state_at(t);
    let z_prev = trajectory.state_at(t - 1);
    let t_frac = schedule.time_input(t);
    let coef = StepCoefficients::at(schedule, t)?;

    let (eps_c, trace_cond) = model.predict_noise_traced(z_t, &cond, t_frac)?;
    let (eps_hat, trace_uncond) = if guidance_w == 1.0 {
        (eps_c, None)
    } else {
        let zero_cond = vec![0.0; cond.len()];
        let (eps_u, trace_u) = model.predict_noise_traced(z_t, &zero_cond, t_frac)?;
        let mixed = eps_u
            .iter()
            .zip(&eps_c)
            .map(|(u, c)| u + guidance_w * (c - u))
            .collect();
        (mixed, Some(trace_u))
    };
    let mean = mean_from_eps(z_t, &eps_hat, &coef);
    let logp = gaussian_logprob(z_prev, &mean, sigma);
    let inv_var = 1.0 / (sigma * sigma);
    let residual_over_var = z_prev
        .iter()
        .zip(&mean)
        .map(|(z, m)| (z - m) * inv_var)
        .collect();
    Ok(StepLogprob {
        logp,
        residual_over_var,
        eps_coef: coef.eps_coefficient(),
        guidance_w,
        trace_cond,
        trace_uncond,
    })
}

impl StepLogprob {
    /// Accumulates `upstream * d(logp)/d(params)` into `param_grad`.
    pub fn backward(
        &self,
        model: &DenoiserModel,
        upstream: f64,
        param_grad: &mut [f64],
    ) -> Result<()> {
        // d logp / d mu = (z_prev - mu) / sigma^2; d mu / d eps_hat = eps_coef.
        let cot_eps: Vec<f64> = self
            .residual_over_var
            .iter()
            .map(|r| upstream * self.eps_coef * r)
            .collect();
        match &self.trace_uncond {
            None => {
                model.net.backward(&self.trace_cond, &cot_eps, param_grad)?;
            }
            Some(trace_u) => {
                let w = self.guidance_w;
                let cot_c: Vec<f64> = cot_eps.iter().map(|v| w * v).collect();
                let cot_u: Vec<f64> = cot_eps.iter().map(|v| (1.0 - w) * v).collect();
                model.net.backward(&self.trace_cond, &cot_c, param_grad)?;
                model.net.backward(trace_u, &cot_u, param_grad)?;
            }
        }
        Ok(())
    }
}
