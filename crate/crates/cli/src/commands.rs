//! Subcommand bodies. Each takes a validated configuration and an existing
//! run directory, writes its artifacts there and prints a short summary.

use std::io::Write;
use std::path::Path;

use anyhow::anyhow;
use slime_core::ablation::ablation_variants;
use slime_core::gradient::{
    gradcheck_sweep_with, grad_chosen, grad_rejected_token, parameter_probe, AnalyticGradients,
    ClosedForm, Component, ProbeRow,
};
use slime_core::prefdata::generate_synthetic;
use slime_core::seed::{derive_seed, Stream};
use slime_core::trainer::{compare_objectives, train, train_with};
use slime_core::{Objective, PolicyModel, PreferencePair, SlimeHyperParams, TrainConfig};

use crate::config::RunConfig;
use crate::report::{self, AblationResult};
use crate::{checkpoint, jsonl, CliError, Outcome};

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const ABORT_DIAGNOSTIC: &str = "abort.txt";

/// Writes the resolved configuration into the run directory.
pub fn write_snapshot(config: &RunConfig, run_dir: &Path) -> Result<(), CliError> {
    std::fs::write(run_dir.join(CONFIG_SNAPSHOT), config.to_toml_string())?;
    Ok(())
}

/// The JSONL corpus at `data.path`, or the synthetic corpus otherwise.
pub fn load_corpus(config: &RunConfig) -> Result<Vec<PreferencePair>, CliError> {
    match &config.data.path {
        Some(path) => Ok(jsonl::load_jsonl(Path::new(path), config.model.vocab_size)?),
        None => generate_synthetic(&config.synthetic_spec()?).map_err(CliError::Invalid),
    }
}

/// Policy every alignment run starts from.
pub fn initial_policy(config: &RunConfig) -> Result<PolicyModel, CliError> {
    PolicyModel::init(config.dims()?, derive_seed(config.train.seed, Stream::Init))
        .map_err(CliError::Invalid)
}

fn abort(run_dir: &Path, context: &str, err: slime_core::Error) -> CliError {
    let mut text = format!("{context}: {err}\n");
    if let slime_core::Error::NonFiniteLoss { step, pair_ids } = &err {
        text.push_str(&format!("step = {step}\npair_ids = {pair_ids:?}\n"));
    }
    if let Err(io) = std::fs::write(run_dir.join(ABORT_DIAGNOSTIC), text) {
        return CliError::Abort(anyhow!("{context}: {err} (diagnostic not written: {io})"));
    }
    CliError::Abort(anyhow!(
        "{context}: {err}; diagnostic written to {}",
        run_dir.join(ABORT_DIAGNOSTIC).display()
    ))
}

pub fn cmd_train(config: &RunConfig, run_dir: &Path) -> Result<Outcome, CliError> {
    config.validate()?;
    write_snapshot(config, run_dir)?;
    let corpus = load_corpus(config)?;
    let initial = initial_policy(config)?;
    let train_config = config.train_config()?;

    let every = config.train.checkpoint_every;
    let ckpt_dir = run_dir.join("checkpoints");
    if every > 0 {
        std::fs::create_dir_all(&ckpt_dir)?;
    }
    let mut io_error = None;
    let result = train_with(
        &corpus,
        &initial,
        &train_config,
        &config.slime_hp()?,
        &config.baseline_hp()?,
        |step, model| {
            if every > 0 && step % every == 0 {
                let path = ckpt_dir.join(format!("step-{step:06}.ckpt"));
                if let Err(e) = checkpoint::save(&path, model) {
                    io_error = Some(e);
                    return Err(slime_core::Error::Checkpoint(path.display().to_string()));
                }
            }
            Ok(())
        },
    );
    if let Some(e) = io_error {
        return Err(CliError::Abort(e));
    }
    let outcome = result.map_err(|e| abort(run_dir, "training aborted", e))?;

    report::write_metrics(&run_dir.join("metrics.csv"), &outcome.history)?;
    checkpoint::save(&run_dir.join("model.ckpt"), &outcome.model).map_err(CliError::Abort)?;

    let (first, last) = (outcome.first(), outcome.last());
    println!(
        "{}: {} steps, held-out accuracy {:.4} -> {:.4}, chosen loglik {:.4} -> {:.4}",
        train_config.objective.name(),
        last.step,
        first.preference_accuracy,
        last.preference_accuracy,
        first.mean_chosen_loglik,
        last.mean_chosen_loglik,
    );
    println!("wrote {}", run_dir.display());
    Ok(Outcome::Success)
}

/// Analytic gradients with the κ term of the dual-margin derivative
/// dropped. Exists so the check can be shown to fail.
#[derive(Debug, Clone, Copy)]
pub struct Corrupted;

impl AnalyticGradients for Corrupted {
    fn chosen(&self, hp: &SlimeHyperParams) -> f64 {
        grad_chosen(hp)
    }

    fn rejected_token(&self, l_t: f64, n_tokens: usize, hp: &SlimeHyperParams) -> f64 {
        grad_rejected_token(l_t, n_tokens, hp)
    }

    fn dual_margin(&self, delta: f64, hp: &SlimeHyperParams) -> f64 {
        if delta >= hp.hard_margin {
            return 0.0;
        }
        let v = slime_core::math::sigmoid(-hp.kappa * (delta - hp.soft_margin));
        -hp.lambda_d * v
    }
}

pub fn cmd_gradcheck(config: &RunConfig, run_dir: &Path, corrupt: bool) -> Result<Outcome, CliError> {
    config.validate()?;
    write_snapshot(config, run_dir)?;
    let hp = config.slime_hp()?;
    let bhp = config.baseline_hp()?;
    let g = &config.gradcheck;
    let seed = config.train.seed;

    let report = if corrupt {
        gradcheck_sweep_with(&Corrupted, &hp, g.n_points, seed)
    } else {
        gradcheck_sweep_with(&ClosedForm, &hp, g.n_points, seed)
    }
    .map_err(CliError::Invalid)?;
    report::write_gradcheck(&run_dir.join("gradcheck.csv"), &report.rows)?;

    // The policy is compared against a differently initialised reference so
    // the DPO log-ratio terms are not identically zero.
    let corpus = load_corpus(config)?;
    let pairs = &corpus[..g.probe_pairs.min(corpus.len())];
    let model = initial_policy(config)?;
    let reference = PolicyModel::init(config.dims()?, derive_seed(seed, Stream::Probe))
        .map_err(CliError::Invalid)?;
    let mut probes: Vec<ProbeRow> = Vec::new();
    for objective in Objective::ALL {
        let rows = parameter_probe(
            objective,
            &model,
            &reference,
            pairs,
            &hp,
            &bhp,
            g.n_probes,
            derive_seed(seed, Stream::Probe),
        )
        .map_err(CliError::Invalid)?;
        probes.extend(rows);
    }
    report::write_probe(&run_dir.join("probe.csv"), &probes)?;

    let mut ok = true;
    for component in Component::ALL {
        let max = report.max_rel_error(component);
        let pass = max <= g.component_tolerance;
        ok &= pass;
        println!(
            "{:<20} max rel error {:.3e} (tol {:.0e}) {}",
            component.name(),
            max,
            g.component_tolerance,
            if pass { "ok" } else { "FAIL" }
        );
    }
    for objective in Objective::ALL {
        let max = probes
            .iter()
            .filter(|r| r.objective == objective)
            .map(|r| r.rel_error)
            .fold(0.0, f64::max);
        let pass = max <= g.probe_tolerance;
        ok &= pass;
        println!(
            "{:<20} max rel error {:.3e} (tol {:.0e}) {}",
            format!("probe/{}", objective.name()),
            max,
            g.probe_tolerance,
            if pass { "ok" } else { "FAIL" }
        );
    }
    if ok {
        return Ok(Outcome::Success);
    }

    let worst_component = report
        .worst()
        .filter(|r| r.rel_error > g.component_tolerance);
    let worst_probe = probes
        .iter()
        .filter(|r| r.rel_error > g.probe_tolerance)
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error));
    let mut err = std::io::stderr().lock();
    if let Some(r) = worst_component {
        let _ = writeln!(
            err,
            "worst offender: {} at {} analytic {} numeric {} rel error {:.3e}",
            r.component.name(),
            r.point,
            r.analytic,
            r.numeric,
            r.rel_error
        );
    }
    if let Some(r) = worst_probe {
        let _ = writeln!(
            err,
            "worst offender: probe/{} {}[{}] analytic {} numeric {} rel error {:.3e}",
            r.objective.name(),
            r.block,
            r.index,
            r.analytic,
            r.numeric,
            r.rel_error
        );
    }
    Ok(Outcome::CheckFailed)
}

pub fn cmd_ablate(config: &RunConfig, run_dir: &Path) -> Result<Outcome, CliError> {
    config.validate()?;
    write_snapshot(config, run_dir)?;
    let corpus = load_corpus(config)?;
    let initial = initial_policy(config)?;
    let train_config = TrainConfig {
        objective: Objective::Slime,
        ..config.train_config()?
    };
    let bhp = config.baseline_hp()?;

    let variants = ablation_variants(&config.slime_hp()?);
    let mut outcomes = Vec::with_capacity(variants.len());
    for variant in &variants {
        let outcome = train(&corpus, &initial, &train_config, &variant.hp, &bhp)
            .map_err(|e| abort(run_dir, &format!("variant {}", variant.id), e))?;
        report::write_metrics(&run_dir.join(format!("metrics_{}.csv", variant.id)), &outcome.history)?;
        let last = outcome.last();
        println!(
            "{:<26} accuracy {:.4}  chosen loglik {:.4}  rejected floor {:.4}",
            variant.label, last.preference_accuracy, last.mean_chosen_loglik, last.min_rejected_token_logprob
        );
        outcomes.push(outcome);
    }
    let results: Vec<AblationResult<'_>> = variants
        .iter()
        .zip(&outcomes)
        .map(|(variant, outcome)| AblationResult { variant, outcome })
        .collect();
    report::write_ablation_summary(&run_dir.join("ablation_summary.csv"), &results)?;
    println!("wrote {}", run_dir.display());
    Ok(Outcome::Success)
}

pub fn cmd_compare(config: &RunConfig, run_dir: &Path) -> Result<Outcome, CliError> {
    config.validate()?;
    write_snapshot(config, run_dir)?;
    let corpus = load_corpus(config)?;
    let initial = initial_policy(config)?;
    let outcomes = compare_objectives(
        &corpus,
        &initial,
        &config.train_config()?,
        &config.slime_hp()?,
        &config.baseline_hp()?,
    )
    .map_err(|e| abort(run_dir, "comparison aborted", e))?;
    for outcome in &outcomes {
        report::write_metrics(
            &run_dir.join(format!("metrics_{}.csv", outcome.objective.name())),
            &outcome.history,
        )?;
    }
    report::write_compare_summary(&run_dir.join("summary.csv"), &outcomes)?;

    println!("{:<34}{:>12}{:>12}{:>12}", "metric", "slime", "simpo", "dpo");
    for metric in report::SUMMARY_METRICS {
        print!("{metric:<34}");
        for outcome in &outcomes {
            print!("{:>12.4}", report::summary_value(metric, outcome));
        }
        println!();
    }
    println!("wrote {}", run_dir.display());
    Ok(Outcome::Success)
}

pub fn cmd_gen_data(config: &RunConfig, run_dir: &Path) -> Result<Outcome, CliError> {
    config.validate()?;
    write_snapshot(config, run_dir)?;
    let pairs = generate_synthetic(&config.synthetic_spec()?).map_err(CliError::Invalid)?;
    let path = run_dir.join("pairs.jsonl");
    jsonl::save_jsonl(&path, &pairs)?;
    println!("wrote {} pairs to {}", pairs.len(), path.display());
    Ok(Outcome::Success)
}
