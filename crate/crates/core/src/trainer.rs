//! Alignment-stage training loop.
//!
//! AdamW with decoupled weight decay, a learning rate decayed linearly to
//! zero with no warmup, and no gradient clipping. Metrics are evaluated on a
//! seeded held-out slice of the preference split.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::gradient::{dpo_token_gradients, simpo_token_gradients, slime_token_gradients};
use crate::logprob::LogProbBatch;
use crate::math::{powf, sqrt};
use crate::objective::{
    dpo_batch_loss, hard_factor, simpo_batch_loss, slime_total, soft_factor,
    BaselineHyperParams, Objective, SlimeHyperParams,
};
use crate::policy::{ParamSet, ParameterGradients, PolicyModel};
use crate::prefdata::{split_corpus, PreferencePair};
use crate::seed::{self, derive_seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::invalid("beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("beta2", "must lie in [0, 1)"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid("eps", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Initial learning rate. The toy policy default is 5e-3.
    pub lr_init: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Evaluate every this many optimizer steps (plus step 0 and the last).
    pub eval_every: u64,
    /// Master seed; sub-seeds are derived per consumer.
    pub seed: u64,
    pub adam: AdamWConfig,
    /// Share of the corpus set aside for the (unused) SFT stage.
    pub sft_fraction: f64,
    /// Share of the preference split held out for evaluation.
    pub eval_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Slime,
            lr_init: 5e-3,
            epochs: 1,
            batch_size: 16,
            eval_every: 50,
            seed: 0,
            adam: AdamWConfig::default(),
            sft_fraction: 0.33,
            eval_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init >= 0.0 && self.lr_init.is_finite()) {
            return Err(Error::invalid("lr_init", "must be non-negative and finite"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every", "must be at least 1"));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::invalid("eval_fraction", "must lie in (0, 1)"));
        }
        self.adam.validate()
    }
}

/// Held-out metrics at one optimizer step.
///
/// Loss components are those of the SLIME objective and read zero for the
/// baselines. `hard_margin_violation` and `soft_gate` are batch means of the
/// distance-loss factors and read zero when the factor is ablated.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub lr: f64,
    pub objective_loss: f64,
    pub loss_w: f64,
    pub loss_l: f64,
    pub loss_dist: f64,
    pub hard_margin_violation: f64,
    pub soft_gate: f64,
    pub mean_delta: f64,
    pub preference_accuracy: f64,
    pub mean_chosen_loglik: f64,
    pub mean_rejected_loglik: f64,
    pub min_rejected_token_logprob: f64,
}

impl MetricsRow {
    pub fn is_finite(&self) -> bool {
        [
            self.lr,
            self.objective_loss,
            self.loss_w,
            self.loss_l,
            self.loss_dist,
            self.hard_margin_violation,
            self.soft_gate,
            self.mean_delta,
            self.preference_accuracy,
            self.mean_chosen_loglik,
            self.mean_rejected_loglik,
            self.min_rejected_token_logprob,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: ParamSet,
    pub second_moment: ParamSet,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(model: &PolicyModel) -> Self {
        let dims = model.dims();
        Self {
            first_moment: ParamSet::zeros(&dims),
            second_moment: ParamSet::zeros(&dims),
            step: 0,
        }
    }
}

/// One AdamW update:
///
/// ```text
/// m ← β1·m + (1−β1)·g
/// v ← β2·v + (1−β2)·g²
/// θ ← θ·(1 − lr·wd) − lr · (m / (1−β1^t)) / (sqrt(v / (1−β2^t)) + ε)
/// ```
pub fn adamw_step(
    model: &mut PolicyModel,
    grads: &ParameterGradients,
    state: &mut OptimizerState,
    lr: f64,
    config: &AdamWConfig,
) -> Result<()> {
    let shapes = model.params().shapes();
    for (what, other) in [
        ("gradients", grads.grads.shapes()),
        ("first moment", state.first_moment.shapes()),
        ("second moment", state.second_moment.shapes()),
    ] {
        if let Some((i, _)) = shapes.iter().zip(other).enumerate().find(|(_, (a, b))| *a != b) {
            return Err(Error::ShapeMismatch {
                what,
                expected: shapes[i],
                found: other[i],
            });
        }
    }
    if let Some(block) = grads.grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient block {block}")));
    }

    state.step += 1;
    let t = state.step as f64;
    let bias1 = 1.0 - powf(config.beta1, t);
    let bias2 = 1.0 - powf(config.beta2, t);
    let decay = 1.0 - lr * config.weight_decay;

    for block in 0..4 {
        let g = grads.grads.block(block);
        let m = state.first_moment.block_mut(block);
        for (mi, &gi) in m.iter_mut().zip(g) {
            *mi = config.beta1 * *mi + (1.0 - config.beta1) * gi;
        }
        let v = state.second_moment.block_mut(block);
        for (vi, &gi) in v.iter_mut().zip(g) {
            *vi = config.beta2 * *vi + (1.0 - config.beta2) * gi * gi;
        }
        let m = state.first_moment.block(block);
        let v = state.second_moment.block(block);
        let params = model.params_mut().block_mut(block);
        for ((p, &mi), &vi) in params.iter_mut().zip(m).zip(v) {
            let update = (mi / bias1) / (sqrt(vi / bias2) + config.eps);
            *p = *p * decay - lr * update;
        }
    }
    Ok(())
}

/// `lr_init · (1 − step/total)`.
pub fn lr_at(step: u64, total_steps: u64, lr_init: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("total_steps", "must be at least 1"));
    }
    if step > total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: total_steps,
        });
    }
    Ok(lr_init * ((total_steps - step) as f64 / total_steps as f64))
}

/// Batch-mean loss of `objective`. `reference` is only read by DPO.
pub fn evaluate_loss(
    objective: Objective,
    model: &PolicyModel,
    reference: &PolicyModel,
    pairs: &[PreferencePair],
    hp: &SlimeHyperParams,
    bhp: &BaselineHyperParams,
) -> Result<f64> {
    let batch = LogProbBatch::from_policy(model, pairs)?;
    match objective {
        Objective::Slime => Ok(slime_total(&batch, hp)?.total),
        Objective::Simpo => simpo_batch_loss(&batch, bhp),
        Objective::Dpo => {
            let ref_batch = LogProbBatch::from_policy(reference, pairs)?;
            dpo_batch_loss(&batch, &ref_batch, bhp)
        }
    }
}

/// Loss and its exact parameter gradient.
pub fn loss_and_gradients(
    objective: Objective,
    model: &PolicyModel,
    reference: &PolicyModel,
    pairs: &[PreferencePair],
    hp: &SlimeHyperParams,
    bhp: &BaselineHyperParams,
) -> Result<(f64, ParameterGradients)> {
    if pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let batch = LogProbBatch::from_policy(model, pairs)?;
    let (loss, upstream) = match objective {
        Objective::Slime => (slime_total(&batch, hp)?.total, slime_token_gradients(&batch, hp)),
        Objective::Simpo => (
            simpo_batch_loss(&batch, bhp)?,
            simpo_token_gradients(&batch, bhp),
        ),
        Objective::Dpo => {
            let ref_batch = LogProbBatch::from_policy(reference, pairs)?;
            (
                dpo_batch_loss(&batch, &ref_batch, bhp)?,
                dpo_token_gradients(&batch, &ref_batch, bhp),
            )
        }
    };
    let grads = model.backward(pairs, &upstream)?;
    Ok((loss, grads))
}

/// Held-out metrics of `model`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_metrics(
    objective: Objective,
    model: &PolicyModel,
    reference: &PolicyModel,
    pairs: &[PreferencePair],
    hp: &SlimeHyperParams,
    bhp: &BaselineHyperParams,
    step: u64,
    lr: f64,
) -> Result<MetricsRow> {
    if pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let batch = LogProbBatch::from_policy(model, pairs)?;
    let n = batch.len() as f64;
    let deltas = batch.deltas();

    let mut row = MetricsRow {
        step,
        lr,
        objective_loss: 0.0,
        loss_w: 0.0,
        loss_l: 0.0,
        loss_dist: 0.0,
        hard_margin_violation: 0.0,
        soft_gate: 0.0,
        mean_delta: deltas.iter().sum::<f64>() / n,
        preference_accuracy: deltas.iter().filter(|&&d| d > 0.0).count() as f64 / n,
        mean_chosen_loglik: batch.seq_mean_chosen().iter().sum::<f64>() / n,
        mean_rejected_loglik: batch.seq_mean_rejected().iter().sum::<f64>() / n,
        min_rejected_token_logprob: batch
            .pairs()
            .iter()
            .map(|p| p.rejected.min())
            .fold(f64::INFINITY, f64::min),
    };

    match objective {
        Objective::Slime => {
            let breakdown = slime_total(&batch, hp)?;
            row.objective_loss = breakdown.total;
            row.loss_w = breakdown.loss_w;
            row.loss_l = breakdown.loss_l;
            row.loss_dist = breakdown.loss_dist;
            if hp.enable_hard {
                row.hard_margin_violation =
                    breakdown.per_pair_delta.iter().map(|&d| hard_factor(d, hp)).sum::<f64>() / n;
            }
            if hp.enable_soft {
                row.soft_gate =
                    breakdown.per_pair_delta.iter().map(|&d| soft_factor(d, hp)).sum::<f64>() / n;
            }
        }
        Objective::Simpo => row.objective_loss = simpo_batch_loss(&batch, bhp)?,
        Objective::Dpo => {
            let ref_batch = LogProbBatch::from_policy(reference, pairs)?;
            row.objective_loss = dpo_batch_loss(&batch, &ref_batch, bhp)?;
        }
    }
    Ok(row)
}

/// Policy, frozen reference and optimizer state for one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: PolicyModel,
    pub reference: PolicyModel,
    pub state: OptimizerState,
    pub config: TrainConfig,
    pub hp: SlimeHyperParams,
    pub bhp: BaselineHyperParams,
}

impl Trainer {
    /// The reference policy is a snapshot of `initial`.
    pub fn new(
        initial: &PolicyModel,
        config: TrainConfig,
        hp: SlimeHyperParams,
        bhp: BaselineHyperParams,
    ) -> Result<Self> {
        config.validate()?;
        hp.validate()?;
        bhp.validate()?;
        Ok(Self {
            model: initial.snapshot(),
            reference: initial.snapshot(),
            state: OptimizerState::new(initial),
            config,
            hp,
            bhp,
        })
    }

    /// Forward, analytic gradients, backward and one AdamW update on
    /// `batch`. Returns the batch loss before the update.
    pub fn step(&mut self, batch: &[PreferencePair], lr: f64) -> Result<f64> {
        let (loss, grads) = loss_and_gradients(
            self.config.objective,
            &self.model,
            &self.reference,
            batch,
            &self.hp,
            &self.bhp,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.state.step,
                pair_ids: batch.iter().map(|p| p.pair_id).collect(),
            });
        }
        adamw_step(&mut self.model, &grads, &mut self.state, lr, &self.config.adam)?;
        Ok(loss)
    }

    pub fn metrics(&self, pairs: &[PreferencePair], step: u64, lr: f64) -> Result<MetricsRow> {
        evaluate_metrics(
            self.config.objective,
            &self.model,
            &self.reference,
            pairs,
            &self.hp,
            &self.bhp,
            step,
            lr,
        )
    }
}

/// Corpus positions used for optimization and for evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPlan {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Seeded SFT/preference split followed by a held-out slice of the
/// preference side. Both index lists are sorted.
pub fn plan_data(n: usize, config: &TrainConfig) -> Result<DataPlan> {
    let split = split_corpus(n, config.sft_fraction, derive_seed(config.seed, Stream::Split))?;
    let mut pref = split.pref_indices;
    if pref.len() < 2 {
        return Err(Error::invalid(
            "corpus",
            format!("preference split has {} pairs; need at least 2", pref.len()),
        ));
    }
    pref.shuffle(&mut seed::rng(derive_seed(config.seed, Stream::Holdout)));
    let n_eval = (libm::floor(config.eval_fraction * pref.len() as f64 + 0.5) as usize)
        .clamp(1, pref.len() - 1);
    let mut eval = pref[..n_eval].to_vec();
    let mut train = pref[n_eval..].to_vec();
    eval.sort_unstable();
    train.sort_unstable();
    Ok(DataPlan { train, eval })
}

pub fn total_steps(n_train: usize, config: &TrainConfig) -> u64 {
    (config.epochs * n_train.div_ceil(config.batch_size)) as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub objective: Objective,
    pub model: PolicyModel,
    pub history: Vec<MetricsRow>,
    pub plan: DataPlan,
}

impl TrainOutcome {
    pub fn first(&self) -> &MetricsRow {
        &self.history[0]
    }

    pub fn last(&self) -> &MetricsRow {
        self.history.last().expect("history holds the step-0 row")
    }
}

/// Full alignment run from `initial`. Deterministic in
/// `(corpus, initial, config, hp, bhp)`.
pub fn train(
    corpus: &[PreferencePair],
    initial: &PolicyModel,
    config: &TrainConfig,
    hp: &SlimeHyperParams,
    bhp: &BaselineHyperParams,
) -> Result<TrainOutcome> {
    train_with(corpus, initial, config, hp, bhp, |_, _| Ok(()))
}

/// [`train`] with a hook called after every optimizer step with the step
/// number and the updated policy.
pub fn train_with<F>(
    corpus: &[PreferencePair],
    initial: &PolicyModel,
    config: &TrainConfig,
    hp: &SlimeHyperParams,
    bhp: &BaselineHyperParams,
    mut after_step: F,
) -> Result<TrainOutcome>
where
    F: FnMut(u64, &PolicyModel) -> Result<()>,
{
    if corpus.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let vocab = initial.dims().vocab_size;
    for pair in corpus {
        pair.check_vocab(vocab)?;
    }
    let mut trainer = Trainer::new(initial, *config, *hp, *bhp)?;
    let plan = plan_data(corpus.len(), config)?;
    let eval: Vec<PreferencePair> = plan.eval.iter().map(|&i| corpus[i].clone()).collect();
    let total = total_steps(plan.train.len(), config);

    let mut history = Vec::new();
    history.push(trainer.metrics(&eval, 0, lr_at(0, total, config.lr_init)?)?);

    let mut order = plan.train.clone();
    let mut shuffle_rng = seed::rng(derive_seed(config.seed, Stream::Shuffle));
    let mut step = 0u64;
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| corpus[i].clone()));
            let lr = lr_at(step, total, config.lr_init)?;
            trainer.step(&batch, lr)?;
            step += 1;
            after_step(step, &trainer.model)?;
            if step.is_multiple_of(config.eval_every) || step == total {
                history.push(trainer.metrics(&eval, step, lr_at(step, total, config.lr_init)?)?);
            }
        }
    }

    Ok(TrainOutcome {
        objective: config.objective,
        model: trainer.model,
        history,
        plan,
    })
}

/// One run per objective (SLIME, SimPO, DPO) from the same initial policy,
/// corpus and seed.
pub fn compare_objectives(
    corpus: &[PreferencePair],
    initial: &PolicyModel,
    config: &TrainConfig,
    hp: &SlimeHyperParams,
    bhp: &BaselineHyperParams,
) -> Result<Vec<TrainOutcome>> {
    Objective::ALL
        .iter()
        .map(|&objective| {
            let config = TrainConfig { objective, ..*config };
            train(corpus, initial, &config, hp, bhp)
        })
        .collect()
}
