//! The train, sweep, and impute verbs: per-run data preparation,
//! append-only result files with resume, and checkpoint plumbing.

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rdis_core::checkpoint::{ensemble_scalar, load_ensemble, save_ensemble, EnsembleMeta};
use rdis_core::data::{
    inject_missing, load_csv, make_windows, split_chronological, synthetic_table, RawTable,
    Stats, Window,
};
use rdis_core::ensemble::{evaluate, impute, train_rdi, train_reconstruction};
use rdis_core::masking::mask_from_sentinel;
use rdis_core::selftrain::train_rdis;
use rdis_core::{Scalar, Tensor};

use crate::config::{DataSource, ExperimentConfig, Method, ScalarKind};
use crate::report::{self, ResultRow, HEADER};
use crate::{CliError, Result};

/// Distinct injection streams per split, so the validation and test
/// holdouts are independent draws from the training one.
const VAL_SALT: u64 = 0x76616c;
const TEST_SALT: u64 = 0x74657374;

#[derive(Debug, Default, Clone, Copy)]
pub struct RunOutcome {
    pub completed: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Runs every (missing rate, seed) cell of the config, appending one
/// result row per finished run. Cells already present in `out` are
/// skipped, so an interrupted invocation resumes where it stopped.
/// Training failures are reported and counted without stopping the
/// remaining cells.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint_dir: Option<&Path>,
) -> Result<RunOutcome> {
    let hash = cfg.hash();
    let done = completed_keys(out)?;
    let mut outcome = RunOutcome::default();
    for &rate in &cfg.missing_rates {
        for &seed in &cfg.seeds {
            if done.contains(&(hash.clone(), rate.to_bits(), seed)) {
                eprintln!("skipping finished run: p={rate} seed={seed} ({hash})");
                outcome.skipped += 1;
                continue;
            }
            let run_checkpoint =
                checkpoint_dir.map(|dir| dir.join(format!("p{rate}_s{seed}")));
            let started = Instant::now();
            let run = match cfg.scalar {
                ScalarKind::F32 => run_cell::<f32>(cfg, rate, seed, run_checkpoint.as_deref(), &hash),
                ScalarKind::F64 => run_cell::<f64>(cfg, rate, seed, run_checkpoint.as_deref(), &hash),
            };
            match run {
                Ok(mse) => {
                    let row = ResultRow {
                        dataset: cfg.dataset.to_string(),
                        method: cfg.method.as_str().to_string(),
                        model: cfg.model.as_str().to_string(),
                        missing_rate: rate,
                        seed,
                        mse,
                        wall_clock_s: started.elapsed().as_secs_f64(),
                        config_hash: hash.clone(),
                    };
                    append_row(out, &row)?;
                    eprintln!(
                        "done: method={} p={rate} seed={seed} mse={mse:.6} ({:.1}s)",
                        cfg.method.as_str(),
                        started.elapsed().as_secs_f64()
                    );
                    outcome.completed += 1;
                }
                // A diverged run is a data point, not a reason to stop
                // the sweep.
                Err(rdis_core::Error::Training(msg)) => {
                    eprintln!("warning: run p={rate} seed={seed} failed to train: {msg}");
                    outcome.failed += 1;
                }
                Err(other) => return Err(CliError::Runtime(other.to_string())),
            }
        }
    }
    Ok(outcome)
}

/// One (rate, seed) cell: windows, splits, injection, training, and the
/// holdout MSE. Saves the trained ensemble when asked.
fn run_cell<S: Scalar>(
    cfg: &ExperimentConfig,
    rate: f64,
    seed: u64,
    checkpoint: Option<&Path>,
    hash: &str,
) -> rdis_core::Result<f64> {
    let table = load_table(cfg, seed)?;
    let ds = make_windows(&table, cfg.window, cfg.windows, seed)?;
    let splits = split_chronological(ds)?;
    let stats = splits.train.stats.clone();
    let columns = splits.train.columns.clone();

    let train_set = inject_missing(&splits.train, rate, seed)?;
    let test_set = inject_missing(&splits.test, rate, seed ^ TEST_SALT)?;
    let val_set = if cfg.keep_best {
        Some(inject_missing(&splits.val, rate, seed ^ VAL_SALT)?)
    } else {
        None
    };

    let train: Vec<Window> = train_set
        .windows
        .iter()
        .enumerate()
        .map(|(i, w)| Window { start: i, values: w.values.clone(), mask: w.mask.clone() })
        .collect();

    let tc = cfg.train_config(seed);
    let (state, _report) = match cfg.method {
        Method::None => train_reconstruction::<S>(&train, val_set.as_ref(), &tc)?,
        Method::RdiNoEnsemble | Method::Rdi => train_rdi::<S>(&train, val_set.as_ref(), &tc)?,
        Method::Rdis => train_rdis::<S>(&train, val_set.as_ref(), &tc)?,
    };
    let mse = evaluate(&state, &test_set)?;
    if let Some(dir) = checkpoint {
        let meta = EnsembleMeta { columns, stats, config_hash: hash.to_string() };
        save_ensemble(dir, &state, &meta)?;
    }
    Ok(mse)
}

fn load_table(cfg: &ExperimentConfig, seed: u64) -> rdis_core::Result<RawTable> {
    match &cfg.dataset {
        DataSource::Csv(path) => {
            let schema = (!cfg.schema.is_empty()).then_some(cfg.schema.as_slice());
            load_csv(path, schema)
        }
        DataSource::Synthetic { rows, d } => Ok(synthetic_table(*rows, *d, seed)),
    }
}

/// (config hash, rate bits, seed) triples already in the results file.
fn completed_keys(out: &Path) -> Result<HashSet<(String, u64, u64)>> {
    let empty = !out.exists() || fs::metadata(out).map(|m| m.len() == 0).unwrap_or(true);
    if empty {
        return Ok(HashSet::new());
    }
    let rows = report::load_rows(out)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.config_hash, r.missing_rate.to_bits(), r.seed))
        .collect())
}

fn append_row(out: &Path, row: &ResultRow) -> Result<()> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
        }
    }
    let fresh = !out.exists() || fs::metadata(out).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let io = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", out.display()));
    if fresh {
        writeln!(file, "{HEADER}").map_err(io)?;
    }
    writeln!(file, "{}", row.to_line()).map_err(io)?;
    file.sync_data().map_err(io)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    MissingRate,
    DropRate,
    Threshold,
    UpdateEpoch,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::MissingRate => "missing_rate",
            SweepAxis::DropRate => "drop_rate",
            SweepAxis::Threshold => "threshold",
            SweepAxis::UpdateEpoch => "update_epoch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "missing_rate" => Some(SweepAxis::MissingRate),
            "drop_rate" => Some(SweepAxis::DropRate),
            "threshold" => Some(SweepAxis::Threshold),
            "update_epoch" => Some(SweepAxis::UpdateEpoch),
            _ => None,
        }
    }
}

/// Runs the experiment once per axis value and prints the mean MSE per
/// value, aggregated from the results file so resumed cells count too.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    out: &Path,
    checkpoint_dir: Option<&Path>,
) -> Result<RunOutcome> {
    if values.is_empty() {
        return Err(CliError::Config("values: sweep needs at least one value".into()));
    }
    // Materialize every cell first so a bad value fails before any
    // training starts.
    let mut cells = Vec::new();
    for &v in values {
        let mut cell = cfg.clone();
        match axis {
            SweepAxis::MissingRate => cell.missing_rates = vec![v],
            SweepAxis::DropRate => cell.drop_rate = v,
            SweepAxis::Threshold => cell.sigma_threshold = v,
            SweepAxis::UpdateEpoch => {
                if v.fract() != 0.0 || v < 1.0 {
                    return Err(CliError::Config(format!(
                        "values: update_epoch must be a positive integer, got {v}"
                    )));
                }
                cell.update_epoch = v as usize;
            }
        }
        cell.validate().map_err(CliError::Config)?;
        cells.push((v, cell));
    }

    let mut total = RunOutcome::default();
    for (v, cell) in &cells {
        let cell_checkpoint =
            checkpoint_dir.map(|dir| dir.join(format!("{}_{v}", axis.as_str())));
        let outcome = run_experiment(cell, out, cell_checkpoint.as_deref())?;
        total.completed += outcome.completed;
        total.skipped += outcome.skipped;
        total.failed += outcome.failed;
    }

    let rows = report::load_rows(out)?;
    println!("sweep {}", axis.as_str());
    for (v, cell) in &cells {
        let hash = cell.hash();
        let mses: Vec<f64> = rows
            .iter()
            .filter(|r| {
                r.config_hash == hash
                    && cell.missing_rates.iter().any(|&p| p.to_bits() == r.missing_rate.to_bits())
                    && cell.seeds.contains(&r.seed)
            })
            .map(|r| r.mse)
            .collect();
        if mses.is_empty() {
            println!("  {}={v}: no finished runs", axis.as_str());
        } else {
            let mean = mses.iter().sum::<f64>() / mses.len() as f64;
            println!("  {}={v}: mean mse {mean:.6} over {} runs", axis.as_str(), mses.len());
        }
    }
    Ok(total)
}

/// Fills the missing cells of a CSV with a saved ensemble, writing a
/// fully observed copy. Observed cells pass through untouched.
pub fn impute_csv(checkpoint: &Path, data: &Path, out: &Path, window: usize) -> Result<()> {
    if window < 1 {
        return Err(CliError::Config("window: must be at least 1".into()));
    }
    let runtime = |e: rdis_core::Error| CliError::Runtime(e.to_string());
    let tag = ensemble_scalar(checkpoint).map_err(runtime)?;
    match tag.as_str() {
        "f32" => impute_with::<f32>(checkpoint, data, out, window),
        "f64" => impute_with::<f64>(checkpoint, data, out, window),
        other => Err(CliError::Runtime(format!("unsupported checkpoint scalar {other:?}"))),
    }
}

fn impute_with<S: Scalar>(checkpoint: &Path, data: &Path, out: &Path, window: usize) -> Result<()> {
    let runtime = |e: rdis_core::Error| CliError::Runtime(e.to_string());
    let (state, meta) = load_ensemble::<S>(checkpoint).map_err(runtime)?;
    let schema = (!meta.columns.is_empty()).then(|| meta.columns.clone());
    let table = load_csv(data, schema.as_deref()).map_err(runtime)?;
    let d = table.values.cols();
    let d_in = state.members[0].d_in();
    if d != d_in {
        return Err(CliError::Runtime(format!(
            "checkpoint expects {d_in} features, {} has {d}",
            data.display()
        )));
    }
    let stats = meta
        .stats
        .unwrap_or_else(|| Stats { mean: vec![0.0; d], std: vec![1.0; d] });

    let mut writer = csv::Writer::from_path(out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let csv_err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", out.display()));
    writer.write_record(&table.columns).map_err(csv_err)?;

    let rows = table.values.rows();
    let mut start = 0;
    while start < rows {
        let len = window.min(rows - start);
        let mut chunk = Tensor::zeros(len, d);
        for t in 0..len {
            chunk.row_mut(t).copy_from_slice(table.values.row(start + t));
        }
        let (clean, mask) = mask_from_sentinel(&chunk).map_err(runtime)?;
        let merged = if mask.count_ones() == len * d {
            clean
        } else {
            let norm = stats.normalize(&clean, &mask);
            let filled = impute(&state, &norm, &mask).map_err(runtime)?;
            let mut merged = stats.denormalize(&filled);
            for t in 0..len {
                for c in 0..d {
                    if mask.is_observed(t, c) {
                        merged[(t, c)] = clean[(t, c)];
                    }
                }
            }
            merged
        };
        for t in 0..len {
            let record: Vec<String> = merged.row(t).iter().map(|v| v.to_string()).collect();
            writer.write_record(&record).map_err(csv_err)?;
        }
        start += len;
    }
    writer.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    Ok(())
}
