//! Optimizer and training-loop behaviour on small corpora.

use slime_core::ablation::ablation_variants;
use slime_core::prefdata::generate_synthetic;
use slime_core::seed::{derive_seed, Stream};
use slime_core::trainer::{compare_objectives, loss_and_gradients, train, Trainer};
use slime_core::{
    BaselineHyperParams, Objective, PolicyDims, PolicyModel, PreferencePair, SlimeHyperParams,
    SyntheticSpec, TrainConfig,
};

fn corpus(seed: u64) -> Vec<PreferencePair> {
    generate_synthetic(&SyntheticSpec::new(2000, 64, 12, derive_seed(seed, Stream::Data))).unwrap()
}

fn initial(seed: u64) -> PolicyModel {
    PolicyModel::init(PolicyDims::default(), derive_seed(seed, Stream::Init)).unwrap()
}

/// A policy that puts nearly all mass on token 0 whatever the context, and
/// pairs preferring token 0 over token 1, so every margin is far past `m_h`.
fn satiated() -> (PolicyModel, Vec<PreferencePair>) {
    let dims = PolicyDims {
        vocab_size: 8,
        context_window: 2,
        embed_dim: 3,
    };
    let mut m = PolicyModel::init(dims, 1).unwrap();
    m.params_mut().bias[0] = 12.0;
    let pairs = (0..4)
        .map(|i| PreferencePair::new(i, vec![2 + i as u32], vec![0, 0], vec![1, 1], 8).unwrap())
        .collect();
    (m, pairs)
}

#[test]
fn satiated_batch_only_decays() {
    let (m, pairs) = satiated();
    let hp = SlimeHyperParams {
        lambda_w: 0.0,
        lambda_l: 0.0,
        ..SlimeHyperParams::default()
    };
    let bhp = BaselineHyperParams::default();
    let (loss, grads) = loss_and_gradients(Objective::Slime, &m, &m, &pairs, &hp, &bhp).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.is_zero());

    let config = TrainConfig::default();
    let lr = 0.01;
    let mut trainer = Trainer::new(&m, config, hp, bhp).unwrap();
    trainer.step(&pairs, lr).unwrap();
    let decay = 1.0 - lr * config.adam.weight_decay;
    for (after, before) in trainer.model.params().iter().zip(m.params().iter()) {
        assert_eq!(after, before * decay);
    }

    let no_decay = TrainConfig {
        adam: slime_core::AdamWConfig {
            weight_decay: 0.0,
            ..config.adam
        },
        ..config
    };
    let mut trainer = Trainer::new(&m, no_decay, hp, bhp).unwrap();
    trainer.step(&pairs, lr).unwrap();
    assert_eq!(trainer.model, m);
}

#[test]
fn zero_learning_rate_leaves_the_model_unchanged() {
    let pairs = corpus(0);
    let start = initial(0);
    let config = TrainConfig {
        lr_init: 0.0,
        ..TrainConfig::default()
    };
    let outcome = train(&pairs, &start, &config, &SlimeHyperParams::default(), &BaselineHyperParams::default()).unwrap();
    assert_eq!(outcome.model, start);
    let first = outcome.first();
    let last = outcome.last();
    assert_eq!(first.preference_accuracy, last.preference_accuracy);
    assert_eq!(first.mean_chosen_loglik, last.mean_chosen_loglik);
}

#[test]
fn slime_learns_the_planted_preference() {
    let pairs = corpus(0);
    let outcome = train(
        &pairs,
        &initial(0),
        &TrainConfig::default(),
        &SlimeHyperParams::default(),
        &BaselineHyperParams::default(),
    )
    .unwrap();
    assert_eq!(outcome.first().step, 0);
    assert_eq!(outcome.last().step, 76);
    let steps: Vec<u64> = outcome.history.iter().map(|r| r.step).collect();
    assert_eq!(steps, [0, 50, 76]);
    assert!(outcome.last().preference_accuracy >= 0.9);
    assert!(outcome.history.iter().all(|r| r.is_finite()));
    // lr decays linearly to zero
    assert_eq!(outcome.last().lr, 0.0);
}

#[test]
fn training_is_deterministic() {
    let pairs = corpus(1);
    let run = || {
        compare_objectives(
            &pairs,
            &initial(1),
            &TrainConfig { seed: 1, ..TrainConfig::default() },
            &SlimeHyperParams::default(),
            &BaselineHyperParams::default(),
        )
        .unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn slime_keeps_chosen_likelihood_and_rejected_floor_above_simpo() {
    for seed in 0..3 {
        let outcomes = compare_objectives(
            &corpus(seed),
            &initial(seed),
            &TrainConfig { seed, ..TrainConfig::default() },
            &SlimeHyperParams::default(),
            &BaselineHyperParams::default(),
        )
        .unwrap();
        let (slime, simpo) = (outcomes[0].last(), outcomes[1].last());
        assert_eq!(outcomes[0].objective, Objective::Slime);
        assert_eq!(outcomes[1].objective, Objective::Simpo);
        assert!(slime.mean_chosen_loglik > simpo.mean_chosen_loglik, "seed {seed}");
        assert!(
            slime.min_rejected_token_logprob > simpo.min_rejected_token_logprob,
            "seed {seed}"
        );
        assert_eq!(outcomes[1].last().loss_w, 0.0);
    }
}

#[test]
fn ablations_share_their_start_and_zero_disabled_terms() {
    let pairs = corpus(2);
    let config = TrainConfig { seed: 2, epochs: 1, ..TrainConfig::default() };
    let bhp = BaselineHyperParams::default();
    let variants = ablation_variants(&SlimeHyperParams::default());
    let mut step0 = Vec::new();
    for v in &variants[..5] {
        let outcome = train(&pairs, &initial(2), &config, &v.hp, &bhp).unwrap();
        let h = &outcome.history;
        match v.id {
            "no_chosen" => assert!(h.iter().all(|r| r.loss_w == 0.0)),
            "no_rejected" => assert!(h.iter().all(|r| r.loss_l == 0.0)),
            "no_soft_margin" => assert!(h.iter().all(|r| r.soft_gate == 0.0)),
            "no_hard_margin" => assert!(h.iter().all(|r| r.hard_margin_violation == 0.0)),
            _ => assert!(h.iter().all(|r| r.loss_w != 0.0 && r.loss_l != 0.0)),
        }
        let r = outcome.first();
        step0.push((r.preference_accuracy, r.mean_chosen_loglik, r.min_rejected_token_logprob));
    }
    assert!(step0.windows(2).all(|w| w[0] == w[1]));
}
