//! Closed-form gradients of the SLIME components, their assembly into
//! per-token upstream gradients for every objective, and the central
//! finite-difference oracle used to check them.
//!
//! ```text
//! ∂L_w/∂l̄_w = −λ_w
//! ∂L_l/∂l_t = −p·λ_l·softplus(−l_t−δ)^(p−1)·σ(−l_t−δ) / |y_l|
//! ∂L_d/∂Δ   = −λ_d·(v + κ·u·v·(1−v)),  u = m_h − Δ, v = σ(−κ(Δ − m_s))
//!           = 0 for Δ ≥ m_h
//! ∂L_d/∂l̄_w = ∂L_d/∂Δ,  ∂L_d/∂l̄_l = −∂L_d/∂Δ
//! ```
//!
//! At the hinge kink `Δ = m_h` the gradient is taken as 0.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::logprob::{margin, LogProbBatch, SequenceLogProbs};
use crate::math::{powf, sigmoid, softplus};
use crate::objective::{
    chosen_loss, dual_margin_loss, rejected_penalty, BaselineHyperParams, Objective,
    SlimeHyperParams,
};
use crate::policy::{PairTokenGrads, PolicyModel, BLOCK_NAMES};
use crate::prefdata::PreferencePair;
use crate::seed;
use crate::trainer;

pub fn grad_chosen(hp: &SlimeHyperParams) -> f64 {
    if hp.enable_chosen {
        -hp.lambda_w
    } else {
        0.0
    }
}

/// Gradient of the rejected penalty of a sequence with `n_tokens` valid
/// positions with respect to one of its token log-probabilities.
pub fn grad_rejected_token(l_t: f64, n_tokens: usize, hp: &SlimeHyperParams) -> f64 {
    if !hp.enable_rejected || n_tokens == 0 {
        return 0.0;
    }
    let u = -l_t - hp.delta;
    -hp.p * hp.lambda_l * powf(softplus(u), hp.p - 1.0) * sigmoid(u) / n_tokens as f64
}

pub fn grad_dual_margin(delta: f64, hp: &SlimeHyperParams) -> f64 {
    if !hp.distance_enabled() {
        return 0.0;
    }
    if hp.enable_hard && delta >= hp.hard_margin {
        return 0.0;
    }
    match (hp.enable_hard, hp.enable_soft) {
        (true, true) => {
            let u = hp.hard_margin - delta;
            let v = sigmoid(-hp.kappa * (delta - hp.soft_margin));
            -hp.lambda_d * (v + hp.kappa * u * v * (1.0 - v))
        }
        // pure hinge
        (true, false) => -hp.lambda_d,
        // pure soft gate
        (false, true) => {
            let v = sigmoid(-hp.kappa * (delta - hp.soft_margin));
            -hp.lambda_d * hp.kappa * v * (1.0 - v)
        }
        (false, false) => 0.0,
    }
}

/// `(∂/∂l̄_w, ∂/∂l̄_l)` of the distance term.
pub fn chain_to_sequences(d_dist_d_delta: f64) -> (f64, f64) {
    (d_dist_d_delta, -d_dist_d_delta)
}

/// Central difference `(f(x+h) − f(x−h)) / 2h`.
pub fn finite_difference<F: FnMut(f64) -> f64>(mut f: F, point: f64, h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("h", "step must be positive"));
    }
    let hi = f(point + h);
    let lo = f(point - h);
    if !hi.is_finite() || !lo.is_finite() {
        return Err(Error::NonFinite(format!("loss near {point}")));
    }
    Ok((hi - lo) / (2.0 * h))
}

/// `|a − n| / max(|a|, |n|)`, and 0 when the two agree exactly.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic == numeric {
        return 0.0;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs())
}

/// Gradients of one pair's SLIME loss, before batch averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub d_loss_d_lbar_w: f64,
    pub d_loss_d_lbar_l: f64,
    pub d_loss_d_token_l: Vec<f64>,
    pub d_dist_d_delta: f64,
}

impl GradientBundle {
    /// `lbar_w` / `lbar_l` are the sequence scores entering `Δ` (means or
    /// sums depending on `hp.length_normalize`).
    pub fn new(
        lbar_w: f64,
        lbar_l: f64,
        rejected: &SequenceLogProbs,
        hp: &SlimeHyperParams,
    ) -> Self {
        let d_dist_d_delta = grad_dual_margin(margin(lbar_w, lbar_l), hp);
        let (dw, dl) = chain_to_sequences(d_dist_d_delta);
        let n = rejected.valid_count();
        let d_loss_d_token_l = rejected
            .logprobs
            .iter()
            .zip(&rejected.mask)
            .map(|(&l, &m)| if m { grad_rejected_token(l, n, hp) } else { 0.0 })
            .collect();
        Self {
            d_loss_d_lbar_w: grad_chosen(hp) + dw,
            d_loss_d_lbar_l: dl,
            d_loss_d_token_l,
            d_dist_d_delta,
        }
    }
}

/// `∂ l̄ / ∂ l_t` for a valid position.
fn score_weight(seq: &SequenceLogProbs, length_normalize: bool) -> f64 {
    if length_normalize {
        1.0 / seq.valid_count() as f64
    } else {
        1.0
    }
}

fn spread(seq: &SequenceLogProbs, per_token: f64) -> Vec<f64> {
    seq.mask
        .iter()
        .map(|&m| if m { per_token } else { 0.0 })
        .collect()
}

/// Upstream `∂L/∂l_t` of the batch-mean SLIME loss.
pub fn slime_token_gradients(batch: &LogProbBatch, hp: &SlimeHyperParams) -> Vec<PairTokenGrads> {
    let (score_w, score_l) = batch.scores(hp.length_normalize);
    let inv_batch = 1.0 / batch.len() as f64;
    batch
        .pairs()
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            let bundle = GradientBundle::new(score_w[i], score_l[i], &pair.rejected, hp);
            let ww = score_weight(&pair.chosen, hp.length_normalize);
            let wl = score_weight(&pair.rejected, hp.length_normalize);
            let chosen = spread(&pair.chosen, bundle.d_loss_d_lbar_w * ww * inv_batch);
            let rejected = pair
                .rejected
                .mask
                .iter()
                .zip(&bundle.d_loss_d_token_l)
                .map(|(&m, &g_tok)| {
                    if m {
                        (bundle.d_loss_d_lbar_l * wl + g_tok) * inv_batch
                    } else {
                        0.0
                    }
                })
                .collect();
            PairTokenGrads { chosen, rejected }
        })
        .collect()
}

/// Upstream gradients of the batch-mean DPO loss. Only the policy side is
/// differentiated.
pub fn dpo_token_gradients(
    policy: &LogProbBatch,
    reference: &LogProbBatch,
    hp: &BaselineHyperParams,
) -> Vec<PairTokenGrads> {
    let inv_batch = 1.0 / policy.len() as f64;
    policy
        .pairs()
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            let z = (policy.seq_sum_chosen()[i] - policy.seq_sum_rejected()[i])
                - (reference.seq_sum_chosen()[i] - reference.seq_sum_rejected()[i]);
            // d/dz softplus(−βz) = −β σ(−βz)
            let dz = -hp.dpo_beta * sigmoid(-hp.dpo_beta * z) * inv_batch;
            PairTokenGrads {
                chosen: spread(&pair.chosen, dz),
                rejected: spread(&pair.rejected, -dz),
            }
        })
        .collect()
}

/// Upstream gradients of the batch-mean SimPO loss.
pub fn simpo_token_gradients(batch: &LogProbBatch, hp: &BaselineHyperParams) -> Vec<PairTokenGrads> {
    let inv_batch = 1.0 / batch.len() as f64;
    batch
        .pairs()
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            let z = hp.simpo_beta * (batch.seq_mean_chosen()[i] - batch.seq_mean_rejected()[i])
                - hp.simpo_gamma;
            let d_margin = -hp.simpo_beta * sigmoid(-z) * inv_batch;
            PairTokenGrads {
                chosen: spread(&pair.chosen, d_margin * score_weight(&pair.chosen, true)),
                rejected: spread(&pair.rejected, -d_margin * score_weight(&pair.rejected, true)),
            }
        })
        .collect()
}

/// Source of analytic gradients checked by the sweep. The closed forms
/// above implement it through [`ClosedForm`]; tests substitute corrupted
/// versions to confirm the sweep notices.
pub trait AnalyticGradients {
    fn chosen(&self, hp: &SlimeHyperParams) -> f64;
    fn rejected_token(&self, l_t: f64, n_tokens: usize, hp: &SlimeHyperParams) -> f64;
    fn dual_margin(&self, delta: f64, hp: &SlimeHyperParams) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ClosedForm;

impl AnalyticGradients for ClosedForm {
    fn chosen(&self, hp: &SlimeHyperParams) -> f64 {
        grad_chosen(hp)
    }

    fn rejected_token(&self, l_t: f64, n_tokens: usize, hp: &SlimeHyperParams) -> f64 {
        grad_rejected_token(l_t, n_tokens, hp)
    }

    fn dual_margin(&self, delta: f64, hp: &SlimeHyperParams) -> f64 {
        grad_dual_margin(delta, hp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Chosen,
    RejectedToken,
    DualMargin,
}

impl Component {
    pub const ALL: [Component; 3] = [
        Component::Chosen,
        Component::RejectedToken,
        Component::DualMargin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Chosen => "grad_chosen",
            Component::RejectedToken => "grad_rejected_token",
            Component::DualMargin => "grad_dual_margin",
        }
    }
}

/// One sampled evaluation point. The rejected-token check perturbs
/// `rejected[0]` inside the whole sequence so the token-count
/// normalization is exercised.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckPoint {
    pub lbar_w: f64,
    pub rejected: Vec<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckRow {
    pub component: Component,
    pub point: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self, component: Component) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.component == component)
            .map(|r| r.rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradcheckRow> {
        self.rows
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.rows.iter().all(|r| r.rel_error <= tolerance)
    }
}

pub const GRADCHECK_STEP: f64 = 1e-5;
/// Half-width of the neighbourhood around `m_h` excluded from sampling.
pub const KINK_EXCLUSION: f64 = 1e-3;

/// Seeded sample: `Δ ∈ [−5, 5]` away from the kink, `l_t ∈ [−12, 0]`,
/// `l̄_w ∈ [−10, 0]`, rejected sequences of 1 to 8 tokens.
pub fn sample_gradcheck_points(hp: &SlimeHyperParams, n_points: usize, seed: u64) -> Vec<GradcheckPoint> {
    let mut rng = seed::rng(seed);
    (0..n_points)
        .map(|_| {
            let lbar_w = rng.gen_range(-10.0..=0.0);
            let len = rng.gen_range(1..=8usize);
            let rejected = (0..len).map(|_| rng.gen_range(-12.0..=0.0)).collect();
            let delta = loop {
                let d: f64 = rng.gen_range(-5.0..=5.0);
                if (d - hp.hard_margin).abs() >= KINK_EXCLUSION {
                    break d;
                }
            };
            GradcheckPoint {
                lbar_w,
                rejected,
                delta,
            }
        })
        .collect()
}

pub fn gradcheck_at<G: AnalyticGradients>(
    grads: &G,
    hp: &SlimeHyperParams,
    points: &[GradcheckPoint],
    h: f64,
) -> Result<GradcheckReport> {
    let mut rows = Vec::with_capacity(points.len() * Component::ALL.len());
    for point in points {
        let analytic = grads.chosen(hp);
        let numeric = finite_difference(|x| chosen_loss(x, hp), point.lbar_w, h)?;
        rows.push(GradcheckRow {
            component: Component::Chosen,
            point: point.lbar_w,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });

        let l0 = point.rejected[0];
        let analytic = grads.rejected_token(l0, point.rejected.len(), hp);
        let mut seq = SequenceLogProbs::dense(point.rejected.clone());
        let numeric = finite_difference(
            |x| {
                seq.logprobs[0] = x;
                rejected_penalty(&seq, hp).unwrap_or(f64::NAN)
            },
            l0,
            h,
        )?;
        rows.push(GradcheckRow {
            component: Component::RejectedToken,
            point: l0,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });

        let analytic = grads.dual_margin(point.delta, hp);
        let numeric = finite_difference(|x| dual_margin_loss(x, hp), point.delta, h)?;
        rows.push(GradcheckRow {
            component: Component::DualMargin,
            point: point.delta,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    Ok(GradcheckReport { rows })
}

/// Component-wise analytic vs finite-difference comparison at `n_points`
/// seeded points with `h = 1e-5`.
pub fn gradcheck_sweep(hp: &SlimeHyperParams, n_points: usize, seed: u64) -> Result<GradcheckReport> {
    gradcheck_sweep_with(&ClosedForm, hp, n_points, seed)
}

pub fn gradcheck_sweep_with<G: AnalyticGradients>(
    grads: &G,
    hp: &SlimeHyperParams,
    n_points: usize,
    seed: u64,
) -> Result<GradcheckReport> {
    if n_points == 0 {
        return Err(Error::invalid("n_points", "must be at least 1"));
    }
    let points = sample_gradcheck_points(hp, n_points, seed);
    gradcheck_at(grads, hp, &points, GRADCHECK_STEP)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub objective: Objective,
    pub block: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Finite-difference check of the full objective gradient with respect to
/// `n_probes` parameters chosen by picking a block uniformly and then an
/// entry uniformly within it.
#[allow(clippy::too_many_arguments)]
pub fn parameter_probe(
    objective: Objective,
    model: &PolicyModel,
    reference: &PolicyModel,
    pairs: &[PreferencePair],
    hp: &SlimeHyperParams,
    bhp: &BaselineHyperParams,
    n_probes: usize,
    seed: u64,
) -> Result<Vec<ProbeRow>> {
    let (_, grads) = trainer::loss_and_gradients(objective, model, reference, pairs, hp, bhp)?;
    let mut rng = seed::rng(seed);
    let mut probe = model.clone();
    let h = GRADCHECK_STEP;
    let mut rows = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let block = rng.gen_range(0..BLOCK_NAMES.len());
        let index = rng.gen_range(0..model.params().block(block).len());
        let original = model.params().block(block)[index];
        let mut eval = |x: f64| {
            probe.params_mut().block_mut(block)[index] = x;
            let loss = trainer::evaluate_loss(objective, &probe, reference, pairs, hp, bhp);
            loss.unwrap_or(f64::NAN)
        };
        let hi = eval(original + h);
        let lo = eval(original - h);
        probe.params_mut().block_mut(block)[index] = original;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} loss while probing {}[{index}]",
                objective.name(),
                BLOCK_NAMES[block]
            )));
        }
        let numeric = (hi - lo) / (2.0 * h);
        let analytic = grads.grads.block(block)[index];
        rows.push(ProbeRow {
            objective,
            block: BLOCK_NAMES[block],
            index,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    Ok(rows)
}
