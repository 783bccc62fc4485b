//! Reward functions over (generated sample, prompt): the safety-steered
//! cosine reward plus its ablation variants (plain cosine, positive/negative
//! anchor scoring, negative-only penalty).
//!
//! Steering happens only inside the reward computation. The sampler always
//! receives the original prompt conditioning; an unsafe prompt is scored
//! against a steered target embedding instead of being rewritten.

use serde::{Deserialize, Serialize};

use crate::embedspace::{
    build_safety_direction, steer, text_safety_score, AnchorSet, SafetyDirection,
    SyntheticEncoder, UnitEmbedding,
};
use crate::{Error, Result};

/// Which reward the training loop optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    /// Conditional steering: cosine against a steered prompt embedding for
    /// unsafe prompts, plain cosine otherwise.
    Steered,
    /// Cosine between sample and prompt embeddings, no safety term.
    PlainCosine,
    /// Prompt cosine plus mean positive-anchor bonus minus a weighted
    /// worst-case negative-anchor penalty.
    SafeclipPosneg,
    /// Pure penalty: negated best match against the negative anchors.
    NegOnly,
}

impl RewardVariant {
    pub fn name(&self) -> &'static str {
        match self {
            RewardVariant::Steered => "steered",
            RewardVariant::PlainCosine => "plain_cosine",
            RewardVariant::SafeclipPosneg => "safeclip_posneg",
            RewardVariant::NegOnly => "neg_only",
        }
    }
}

/// Reward selection plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSpec {
    pub variant: RewardVariant,
    /// Steering strength; only read by the steered variant.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Negative-anchor penalty weight; only read by safeclip_posneg.
    #[serde(default = "default_lambda_neg")]
    pub lambda_neg: f64,
}

fn default_alpha() -> f64 {
    0.5
}

fn default_lambda_neg() -> f64 {
    1.0
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            variant: RewardVariant::Steered,
            alpha: default_alpha(),
            lambda_neg: default_lambda_neg(),
        }
    }
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "steering strength must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.lambda_neg >= 0.0) {
            return Err(Error::Config(format!(
                "lambda_neg must be >= 0, got {}",
                self.lambda_neg
            )));
        }
        Ok(())
    }
}

/// Plain cosine alignment between the encoded sample and the encoded prompt.
pub fn plain_cosine(x: &[f64], prompt_point: &[f64], enc: &SyntheticEncoder) -> Result<f64> {
    let z_i = enc.encode(x)?;
    let z_t = enc.encode(prompt_point)?;
    Ok(z_i.dot(&z_t))
}

/// Safety-steered reward: if the prompt scores unsafe against `v_safe`, the
/// target embedding is steered toward safety before the cosine is taken;
/// otherwise this is exactly `plain_cosine`. A zero safety score counts as
/// safe.
pub fn steered_reward(
    x: &[f64],
    prompt_point: &[f64],
    enc: &SyntheticEncoder,
    v_safe: &SafetyDirection,
    alpha: f64,
) -> Result<f64> {
    let z_i = enc.encode(x)?;
    let z_t = enc.encode(prompt_point)?;
    if text_safety_score(&z_t, v_safe) < 0.0 {
        let steered = steer(&z_t, v_safe, alpha)?;
        Ok(z_i.dot(&steered))
    } else {
        Ok(z_i.dot(&z_t))
    }
}

fn mean_alignment(z_i: &UnitEmbedding, anchors: &[UnitEmbedding]) -> f64 {
    if anchors.is_empty() {
        return 0.0;
    }
    anchors.iter().map(|a| z_i.dot(a)).sum::<f64>() / anchors.len() as f64
}

fn max_alignment(z_i: &UnitEmbedding, anchors: &[UnitEmbedding]) -> f64 {
    anchors
        .iter()
        .map(|a| z_i.dot(a))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Prompt cosine + mean positive-anchor bonus - lambda * worst negative
/// match. An empty positive set contributes a zero bonus; an empty negative
/// set contributes no penalty.
pub fn safeclip_posneg(
    x: &[f64],
    prompt_point: &[f64],
    enc: &SyntheticEncoder,
    pos_anchors: &[UnitEmbedding],
    neg_anchors: &[UnitEmbedding],
    lambda_neg: f64,
) -> Result<f64> {
    let z_i = enc.encode(x)?;
    let z_t = enc.encode(prompt_point)?;
    let bonus = mean_alignment(&z_i, pos_anchors);
    let penalty = if neg_anchors.is_empty() {
        0.0
    } else {
        max_alignment(&z_i, neg_anchors)
    };
    Ok(z_i.dot(&z_t) + bonus - lambda_neg * penalty)
}

/// Negative-only penalty: the negated best match against the negative
/// anchors, ignoring the prompt entirely.
pub fn neg_only(x: &[f64], neg_anchors: &[UnitEmbedding], enc: &SyntheticEncoder) -> Result<f64> {
    if neg_anchors.is_empty() {
        return Err(Error::Config(
            "neg_only reward needs at least one negative anchor".into(),
        ));
    }
    let z_i = enc.encode(x)?;
    Ok(-max_alignment(&z_i, neg_anchors))
}

/// Everything needed to score a sample against a prompt: the encoder, the
/// prebuilt safety direction, and the anchor embeddings. Built once per run;
/// pure and shareable across threads afterwards.
#[derive(Debug, Clone)]
pub struct RewardContext {
    spec: RewardSpec,
    encoder: SyntheticEncoder,
    v_safe: SafetyDirection,
    pos_anchors: Vec<UnitEmbedding>,
    neg_anchors: Vec<UnitEmbedding>,
}

impl RewardContext {
    pub fn build(encoder: SyntheticEncoder, anchors: &AnchorSet, spec: RewardSpec) -> Result<Self> {
        spec.validate()?;
        let v_safe = build_safety_direction(&encoder, anchors)?;
        let pos_anchors = anchors
            .safe_points()
            .iter()
            .map(|p| encoder.encode(p))
            .collect::<Result<Vec<_>>>()?;
        let neg_anchors = anchors
            .unsafe_points()
            .iter()
            .map(|p| encoder.encode(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            encoder,
            v_safe,
            pos_anchors,
            neg_anchors,
        })
    }

    pub fn spec(&self) -> &RewardSpec {
        &self.spec
    }

    pub fn encoder(&self) -> &SyntheticEncoder {
        &self.encoder
    }

    pub fn safety_direction(&self) -> &SafetyDirection {
        &self.v_safe
    }

    /// Scores one generated sample against its prompt point.
    pub fn reward(&self, x: &[f64], prompt_point: &[f64]) -> Result<f64> {
        match self.spec.variant {
            RewardVariant::Steered => steered_reward(
                x,
                prompt_point,
                &self.encoder,
                &self.v_safe,
                self.spec.alpha,
            ),
            RewardVariant::PlainCosine => plain_cosine(x, prompt_point, &self.encoder),
            RewardVariant::SafeclipPosneg => safeclip_posneg(
                x,
                prompt_point,
                &self.encoder,
                &self.pos_anchors,
                &self.neg_anchors,
                self.spec.lambda_neg,
            ),
            RewardVariant::NegOnly => neg_only(x, &self.neg_anchors, &self.encoder),
        }
    }
}
