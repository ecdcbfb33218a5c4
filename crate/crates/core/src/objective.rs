//! The SLIME objective and the DPO / SimPO baselines.
//!
//! ```text
//! L      = L_w + L_l + L_dist
//! L_w    = −λ_w · l̄_w
//! L_l    = λ_l · mean_t softplus(−l_t − δ)^p          (rejected tokens)
//! L_dist = λ_d · ReLU(m_h − Δ) · σ(−κ(Δ − m_s))       Δ = l̄_w − l̄_l
//! ```
//!
//! Each component is averaged over tokens within a sequence and then over
//! pairs in the batch, so every pair carries equal weight.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::logprob::{margin, LogProbBatch, SequenceLogProbs};
use crate::math::{neg_log_sigmoid, powf, sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Slime,
    Dpo,
    Simpo,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Slime, Objective::Simpo, Objective::Dpo];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Slime => "slime",
            Objective::Dpo => "dpo",
            Objective::Simpo => "simpo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "slime" => Some(Objective::Slime),
            "dpo" => Some(Objective::Dpo),
            "simpo" => Some(Objective::Simpo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlimeHyperParams {
    pub lambda_w: f64,
    pub lambda_l: f64,
    pub lambda_d: f64,
    /// Threshold shift inside the rejected-token softplus.
    pub delta: f64,
    pub hard_margin: f64,
    pub soft_margin: f64,
    /// Sharpness of the soft-margin sigmoid gate.
    pub kappa: f64,
    /// Exponent of the rejected-token penalty.
    pub p: f64,
    pub enable_chosen: bool,
    pub enable_rejected: bool,
    pub enable_soft: bool,
    pub enable_hard: bool,
    /// Use length-normalized sequence means for `L_w` and `Δ`; raw sums
    /// otherwise.
    pub length_normalize: bool,
}

impl Default for SlimeHyperParams {
    fn default() -> Self {
        Self {
            lambda_w: 0.1,
            lambda_l: 0.1,
            lambda_d: 1.0,
            delta: 1.25,
            hard_margin: 1.5,
            soft_margin: 1.0,
            kappa: 2.5,
            p: 2.5,
            enable_chosen: true,
            enable_rejected: true,
            enable_soft: true,
            enable_hard: true,
            length_normalize: true,
        }
    }
}

impl SlimeHyperParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("lambda_w", self.lambda_w),
            ("lambda_l", self.lambda_l),
            ("lambda_d", self.lambda_d),
            ("delta", self.delta),
            ("m_h", self.hard_margin),
            ("m_s", self.soft_margin),
            ("kappa", self.kappa),
            ("p", self.p),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(Error::invalid(name, format!("{value} is not finite")));
            }
        }
        for (name, value) in [
            ("lambda_w", self.lambda_w),
            ("lambda_l", self.lambda_l),
            ("lambda_d", self.lambda_d),
        ] {
            if value < 0.0 {
                return Err(Error::invalid(name, "must be non-negative"));
            }
        }
        if self.kappa <= 0.0 {
            return Err(Error::invalid("kappa", "must be positive"));
        }
        if self.p < 1.0 {
            return Err(Error::invalid("p", "must be at least 1"));
        }
        Ok(())
    }

    /// The distance term is present while at least one of its gates is.
    pub fn distance_enabled(&self) -> bool {
        self.enable_hard || self.enable_soft
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineHyperParams {
    pub dpo_beta: f64,
    pub simpo_beta: f64,
    /// SimPO target reward margin.
    pub simpo_gamma: f64,
}

impl Default for BaselineHyperParams {
    fn default() -> Self {
        Self {
            dpo_beta: 0.1,
            simpo_beta: 2.0,
            simpo_gamma: 0.2,
        }
    }
}

impl BaselineHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dpo_beta > 0.0 && self.dpo_beta.is_finite()) {
            return Err(Error::invalid("dpo_beta", "must be positive"));
        }
        if !(self.simpo_beta > 0.0 && self.simpo_beta.is_finite()) {
            return Err(Error::invalid("simpo_beta", "must be positive"));
        }
        if !self.simpo_gamma.is_finite() {
            return Err(Error::invalid("simpo_gamma", "must be finite"));
        }
        Ok(())
    }
}

/// Batch-mean SLIME components. `total` is exactly the sum of the three
/// stored components.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub loss_w: f64,
    pub loss_l: f64,
    pub loss_dist: f64,
    pub total: f64,
    pub per_pair_delta: Vec<f64>,
}

/// `−λ_w · l̄_w`, or 0 with the chosen term disabled.
pub fn chosen_loss(lbar_w: f64, hp: &SlimeHyperParams) -> f64 {
    if !hp.enable_chosen {
        return 0.0;
    }
    -hp.lambda_w * lbar_w
}

/// `softplus(−l_t − δ)^p` for one token.
#[inline]
pub fn rejected_token_penalty(l_t: f64, hp: &SlimeHyperParams) -> f64 {
    powf(softplus(-l_t - hp.delta), hp.p)
}

/// `λ_l` times the mean token penalty over the unmasked rejected positions.
pub fn rejected_penalty(rejected: &SequenceLogProbs, hp: &SlimeHyperParams) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for l_t in rejected.valid() {
        sum += rejected_token_penalty(l_t, hp);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptySequence("rejected"));
    }
    if !hp.enable_rejected {
        return Ok(0.0);
    }
    Ok(hp.lambda_l * (sum / count as f64))
}

/// Hard factor of the distance loss as used by the current ablation:
/// `ReLU(m_h − Δ)`, or 1 with the hard margin disabled.
#[inline]
pub fn hard_factor(delta: f64, hp: &SlimeHyperParams) -> f64 {
    if !hp.enable_hard {
        1.0
    } else if delta >= hp.hard_margin {
        0.0
    } else {
        hp.hard_margin - delta
    }
}

/// Soft factor `σ(−κ(Δ − m_s))`, or 1 with the soft margin disabled.
#[inline]
pub fn soft_factor(delta: f64, hp: &SlimeHyperParams) -> f64 {
    if hp.enable_soft {
        sigmoid(-hp.kappa * (delta - hp.soft_margin))
    } else {
        1.0
    }
}

/// `λ_d · ReLU(m_h − Δ) · σ(−κ(Δ − m_s))`. Exactly zero once `Δ ≥ m_h`
/// while the hard margin is active.
pub fn dual_margin_loss(delta: f64, hp: &SlimeHyperParams) -> f64 {
    if !hp.distance_enabled() {
        return 0.0;
    }
    let hard = hard_factor(delta, hp);
    if hard == 0.0 {
        return 0.0;
    }
    hp.lambda_d * hard * soft_factor(delta, hp)
}

pub fn slime_total(batch: &LogProbBatch, hp: &SlimeHyperParams) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (score_w, score_l) = batch.scores(hp.length_normalize);
    let n = batch.len() as f64;

    let mut sum_w = 0.0;
    let mut sum_l = 0.0;
    let mut sum_d = 0.0;
    let mut per_pair_delta = Vec::with_capacity(batch.len());
    for (i, pair) in batch.pairs().iter().enumerate() {
        let delta = margin(score_w[i], score_l[i]);
        sum_w += chosen_loss(score_w[i], hp);
        sum_l += rejected_penalty(&pair.rejected, hp)?;
        sum_d += dual_margin_loss(delta, hp);
        per_pair_delta.push(delta);
    }
    let loss_w = sum_w / n;
    let loss_l = sum_l / n;
    let loss_dist = sum_d / n;
    Ok(LossBreakdown {
        loss_w,
        loss_l,
        loss_dist,
        total: loss_w + loss_l + loss_dist,
        per_pair_delta,
    })
}

/// `−ln σ(β · (policy_logratio − ref_logratio))`.
pub fn dpo_loss(policy_logratio: f64, ref_logratio: f64, hp: &BaselineHyperParams) -> f64 {
    neg_log_sigmoid(hp.dpo_beta * (policy_logratio - ref_logratio))
}

/// `−ln σ(β · (l̄_w − l̄_l) − γ)`.
pub fn simpo_loss(lbar_w: f64, lbar_l: f64, hp: &BaselineHyperParams) -> f64 {
    neg_log_sigmoid(hp.simpo_beta * (lbar_w - lbar_l) - hp.simpo_gamma)
}

/// Mean DPO loss over a batch. Log-ratios use raw sequence sums under the
/// policy and the frozen reference.
pub fn dpo_batch_loss(
    policy: &LogProbBatch,
    reference: &LogProbBatch,
    hp: &BaselineHyperParams,
) -> Result<f64> {
    if policy.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if policy.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            what: "reference batch",
            expected: policy.len(),
            found: reference.len(),
        });
    }
    let mut sum = 0.0;
    for i in 0..policy.len() {
        let pi = policy.seq_sum_chosen()[i] - policy.seq_sum_rejected()[i];
        let rf = reference.seq_sum_chosen()[i] - reference.seq_sum_rejected()[i];
        sum += dpo_loss(pi, rf, hp);
    }
    Ok(sum / policy.len() as f64)
}

/// Mean SimPO loss over a batch (length-normalized rewards).
pub fn simpo_batch_loss(batch: &LogProbBatch, hp: &BaselineHyperParams) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = batch
        .seq_mean_chosen()
        .iter()
        .zip(batch.seq_mean_rejected())
        .map(|(&w, &l)| simpo_loss(w, l, hp))
        .sum();
    Ok(sum / batch.len() as f64)
}
