//! Subcommand bodies. Each writes its outputs into `out` and returns the
//! paths it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use feddrop_core::analysis;
use feddrop_core::data::{self, Batch, FederatedDataset};
use feddrop_core::exec::Executor;
use feddrop_core::feddrop::{self as fd, DropoutConfig, MappingSet};
use feddrop_core::fedsim::{self, RoundOutcome, RoundRecord};
use feddrop_core::nn::Arch;

use crate::checkpoint::Checkpoint;
use crate::config::{Experiment, RunConfig};
use crate::dataset_io;
use crate::error::{Error, Result};
use crate::metrics::{self, AblationReport, SizeReport, SizeRow, SubModelSummary, TrainSummary};

pub const DATASET_FILE: &str = "dataset.data";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const BASELINE_FILE: &str = "baseline.bin";
pub const ABLATION_FILE: &str = "ablation.json";
pub const SUBMODELS_FILE: &str = "submodels.json";
pub const SIZE_REPORT_FILE: &str = "size_report.json";

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

pub fn load_dataset(cfg: &RunConfig, what: &str) -> Result<FederatedDataset> {
    let d = cfg.data(what)?;
    match (&d.path, &d.generator) {
        (Some(p), _) => dataset_io::read(p),
        (None, Some(g)) => Ok(data::generate(g)?),
        (None, None) => unreachable!("checked by RunConfig::data"),
    }
}

fn eval_batch(ds: &FederatedDataset) -> Result<Batch> {
    Ok(Batch::from_examples(&ds.all_eval())?)
}

fn check_data_fits(arch: &Arch, ds: &FederatedDataset) -> Result<()> {
    if ds.config.input_dim != arch.input_dim || ds.config.num_classes != arch.num_classes {
        return Err(Error::Config(format!(
            "dataset has input_dim {} and {} classes but arch expects {} and {}",
            ds.config.input_dim, ds.config.num_classes, arch.input_dim, arch.num_classes
        )));
    }
    Ok(())
}

fn progress(outcome: &RoundOutcome) {
    let r = &outcome.record;
    eprintln!("round {:>4}  eval_error {:.4}  train_loss {:.4}", r.round, r.eval_error, r.train_loss);
}

/// `generate-data`: writes the generator's dataset.
pub fn generate_data(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let generator = cfg
        .data("generate-data")?
        .generator
        .as_ref()
        .ok_or_else(|| Error::Config("generate-data needs [data.generator]".into()))?;
    let ds = data::generate(generator)?;
    prepare_out(out)?;
    let path = out.join(DATASET_FILE);
    dataset_io::write(&ds, &path)?;
    let records: usize = ds.clients.iter().map(|c| c.examples.len()).sum();
    let eval: usize = ds.eval.iter().map(|e| e.examples.len()).sum();
    println!(
        "wrote {}: {} clients, {} client records, {} domains, {} eval records",
        path.display(),
        ds.clients.len(),
        records,
        ds.eval.len(),
        eval
    );
    Ok(path)
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    experiment: Experiment,
    arch: &Arch,
    dropout: &DropoutConfig,
    history: &[RoundRecord],
    target: Option<f64>,
    last: Option<MappingSet>,
    baseline: Option<(f64, f64)>,
) -> Result<TrainSummary> {
    Ok(TrainSummary {
        experiment: experiment.name().into(),
        arch: *arch,
        rounds: history.len(),
        final_error: history.last().map(|r| r.eval_error),
        best_error: history.iter().map(|r| r.eval_error).reduce(f64::min),
        target_error: target,
        rounds_to_target: target.and_then(|t| fedsim::rounds_to_target(history, t)),
        dropout: dropout.clone(),
        size_reduction: fd::size_reduction(arch, &dropout.rates)?,
        full_param_count: arch.param_count(),
        client_param_count: fd::client_param_count(arch, &dropout.rates)?,
        baseline_holdout_error: baseline.map(|b| b.0),
        baseline_seen_error: baseline.map(|b| b.1),
        final_round_mappings: last.map(|m| m.mappings).unwrap_or_default(),
    })
}

/// `train`: from-scratch federated training.
pub fn train<E: Executor>(cfg: &RunConfig, out: &Path, exec: &E) -> Result<Vec<PathBuf>> {
    cfg.check_experiment(Experiment::Scratch)?;
    let arch = cfg.arch("train")?;
    let fed = cfg.federated("train")?;
    fed.validate(&arch)?;
    let ds = load_dataset(cfg, "train")?;
    check_data_fits(&arch, &ds)?;
    let eval = eval_batch(&ds)?;
    prepare_out(out)?;
    let outcome = fedsim::train_with(fed, &arch, &ds.clients, &eval, None, exec, progress)?;
    let summary = summarize(
        Experiment::Scratch,
        &arch,
        &fed.dropout,
        &outcome.history,
        cfg.target_error,
        outcome.last_mappings,
        None,
    )?;
    let paths = [out.join(METRICS_FILE), out.join(SUMMARY_FILE), out.join(CHECKPOINT_FILE)];
    metrics::write_metrics_csv(&outcome.history, &paths[0])?;
    metrics::write_json(&summary, &paths[1])?;
    Checkpoint::new(outcome.params, outcome.init)?.write(&paths[2])?;
    Ok(paths.to_vec())
}

/// `adapt`: pooled pretraining without the held-out domain, then federated
/// fine-tuning on it.
pub fn adapt<E: Executor>(cfg: &RunConfig, out: &Path, exec: &E) -> Result<Vec<PathBuf>> {
    cfg.check_experiment(Experiment::Adapt)?;
    let arch = cfg.arch("adapt")?;
    let fed = cfg.federated("adapt")?;
    fed.validate(&arch)?;
    let section = cfg.adapt()?;
    let ds = load_dataset(cfg, "adapt")?;
    check_data_fits(&arch, &ds)?;
    prepare_out(out)?;
    let outcome = fedsim::domain_adapt(&section.pretrain, fed, &arch, &ds, section.holdout_domain, exec)?;
    let summary = summarize(
        Experiment::Adapt,
        &arch,
        &fed.dropout,
        &outcome.history,
        cfg.target_error,
        outcome.last_mappings,
        Some((outcome.baseline_holdout.error, outcome.baseline_seen.error)),
    )?;
    let paths = [out.join(METRICS_FILE), out.join(SUMMARY_FILE), out.join(CHECKPOINT_FILE), out.join(BASELINE_FILE)];
    metrics::write_metrics_csv(&outcome.history, &paths[0])?;
    metrics::write_json(&summary, &paths[1])?;
    Checkpoint::new(outcome.adapted, outcome.baseline_init.clone())?.write(&paths[2])?;
    Checkpoint::new(outcome.baseline, outcome.baseline_init)?.write(&paths[3])?;
    Ok(paths.to_vec())
}

fn load_checkpoint_for(path: &Path, ds: &FederatedDataset) -> Result<Checkpoint> {
    let ck = Checkpoint::read(path)?;
    check_data_fits(&ck.arch, ds)?;
    Ok(ck)
}

/// `ablate`: ranks blocks by how little resetting them hurts and assigns
/// per-block rates.
pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    cfg.check_experiment(Experiment::Ablate)?;
    let section = cfg.ablate()?;
    let ds = load_dataset(cfg, "ablate")?;
    let ck = load_checkpoint_for(&section.checkpoint, &ds)?;
    let eval = eval_batch(&ds)?;
    let ranking = analysis::ambient_rank(&ck.params, &ck.init, &eval)?;
    let assigned = analysis::assign_rates(section.base_rate, &section.extra, &ranking)?;
    let flat = vec![section.base_rate; ck.arch.num_blocks];
    let report = AblationReport {
        flat_size_reduction: fd::size_reduction(&ck.arch, &flat)?,
        assigned_size_reduction: fd::size_reduction(&ck.arch, &assigned)?,
        ranking,
        base_rate: section.base_rate,
        extra: section.extra.clone(),
        assigned_rates: assigned,
    };
    prepare_out(out)?;
    let path = out.join(ABLATION_FILE);
    metrics::write_json(&report, &path)?;
    Ok(path)
}

/// `submodels`: evaluates sub-models sampled from a trained checkpoint.
pub fn submodels(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    cfg.check_experiment(Experiment::Submodels)?;
    let section = cfg.submodels()?;
    let ds = load_dataset(cfg, "submodels")?;
    let ck = load_checkpoint_for(&section.checkpoint, &ds)?;
    let eval = eval_batch(&ds)?;
    let report = analysis::sample_submodels(&ck.params, section.rate, section.n, section.seed, &eval)?;
    let summary = SubModelSummary { full_model_error: fedsim::evaluate(&ck.params, &eval)?.error, report };
    prepare_out(out)?;
    let path = out.join(SUBMODELS_FILE);
    metrics::write_json(&summary, &path)?;
    Ok(path)
}

/// `size-report`: client-model size reductions on a two-block arch sized to
/// the requested FF share.
pub fn size_report(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    cfg.check_experiment(Experiment::SizeReport)?;
    let report = build_size_report(cfg.size_report()?)?;
    prepare_out(out)?;
    let path = out.join(SIZE_REPORT_FILE);
    metrics::write_json(&report, &path)?;
    Ok(path)
}

pub fn build_size_report(section: &crate::config::SizeReportSection) -> Result<SizeReport> {
    let arch = fd::make_table3_arch(section.ff_fraction, section.total_params)?;
    let rows = section
        .rates
        .iter()
        .map(|&rate| {
            let rates = vec![rate; arch.num_blocks];
            let reduction = fd::size_reduction(&arch, &rates)?;
            Ok(SizeRow {
                rate,
                size_reduction: reduction,
                size_reduction_pct: 100.0 * reduction,
                client_param_count: fd::client_param_count(&arch, &rates)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SizeReport {
        ff_fraction: section.ff_fraction,
        total_params_target: section.total_params,
        arch,
        full_param_count: arch.param_count(),
        ff_share: arch.ff_param_count() as f64 / arch.param_count() as f64,
        rows,
    })
}
