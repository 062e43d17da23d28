//! Dataset ingestion: CSV loading, windowing, chronological splitting,
//! train-fit normalization, and artificial missingness injection.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{contract, Error, Result};
use crate::masking::{mask_from_sentinel, Mask};
use crate::rng;
use crate::tensor::Tensor;

/// Rows straight out of a file; NaN marks missing cells.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub values: Tensor<f64>,
    pub columns: Vec<String>,
}

/// Loads a CSV with a header row. `schema` selects (and orders) the
/// columns to keep; None keeps all. Empty and non-numeric cells become
/// missing markers.
pub fn load_csv(path: &Path, schema: Option<&[String]>) -> Result<RawTable> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    parse_csv(file, schema)
}

fn parse_csv<R: Read>(reader: R, schema: Option<&[String]>) -> Result<RawTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let keep: Vec<usize> = match schema {
        Some(cols) => cols
            .iter()
            .map(|c| {
                headers.iter().position(|h| h == c).ok_or_else(|| {
                    Error::Data(format!("column {c:?} not found in header {headers:?}"))
                })
            })
            .collect::<Result<_>>()?,
        None => (0..headers.len()).collect(),
    };
    let columns: Vec<String> = keep.iter().map(|&i| headers[i].clone()).collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ri, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("row {}: {e}", ri + 2)))?;
        let row = keep
            .iter()
            .map(|&ci| {
                let cell = record.get(ci).unwrap_or("").trim();
                if cell.is_empty() {
                    f64::NAN
                } else {
                    cell.parse::<f64>().unwrap_or(f64::NAN)
                }
            })
            .collect();
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data("file has a header but no data rows".into()));
    }
    Ok(RawTable { values: Tensor::from_rows(&rows)?, columns })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Row offset of this window in the source table.
    pub start: usize,
    pub values: Tensor<f64>,
    pub mask: Mask,
}

/// Per-feature normalization statistics, fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Stats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Stats {
    /// (x − µ)/σ on observed cells; missing cells stay zero-filled.
    pub fn normalize(&self, values: &Tensor<f64>, mask: &Mask) -> Tensor<f64> {
        let mut out = values.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                if mask.is_observed(r, c) {
                    out[(r, c)] = (out[(r, c)] - self.mean[c]) / self.std[c];
                }
            }
        }
        out
    }

    pub fn denormalize(&self, values: &Tensor<f64>) -> Tensor<f64> {
        let mut out = values.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out[(r, c)] = out[(r, c)] * self.std[c] + self.mean[c];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Ordered by window start time.
    pub windows: Vec<Window>,
    pub columns: Vec<String>,
    /// Present once a split has fitted normalization.
    pub stats: Option<Stats>,
}

/// Cuts `count` windows of `len` consecutive rows at distinct start
/// offsets sampled uniformly without replacement (capped at the number
/// of possible offsets), returned in chronological order.
pub fn make_windows(table: &RawTable, len: usize, count: usize, seed: u64) -> Result<Dataset> {
    contract!(len >= 1 && count >= 1, "window length and count must be positive");
    let rows = table.values.rows();
    if rows < len {
        return Err(Error::Data(format!("table has {rows} rows, need at least {len}")));
    }
    let possible = rows - len + 1;
    let take = count.min(possible);

    let mut starts: Vec<usize> = (0..possible).collect();
    let mut r = rng::stream(seed, rng::tag::WINDOWS, 0);
    let (chosen, _) = starts.partial_shuffle(&mut r, take);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();

    let d = table.values.cols();
    let windows = chosen
        .into_iter()
        .map(|start| {
            let mut raw = Tensor::zeros(len, d);
            for t in 0..len {
                raw.row_mut(t).copy_from_slice(table.values.row(start + t));
            }
            let (values, mask) = mask_from_sentinel(&raw)?;
            Ok(Window { start, values, mask })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { windows, columns: table.columns.clone(), stats: None })
}

pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Partitions windows 50/25/25 by start time, fits per-feature mean and
/// population std on the training split's observed cells, and applies
/// the normalization to all three splits.
pub fn split_chronological(mut ds: Dataset) -> Result<Splits> {
    let n = ds.windows.len();
    if n < 4 {
        return Err(Error::Data(format!("need at least 4 windows to split, got {n}")));
    }
    ds.windows.sort_by_key(|w| w.start);
    let n_train = n / 2;
    let n_val = n / 4;

    let rest = ds.windows.split_off(n_train);
    let train_windows = ds.windows;
    let (val_windows, test_windows) = {
        let mut rest = rest;
        let test = rest.split_off(n_val);
        (rest, test)
    };

    let d = train_windows[0].values.cols();
    let mut sum = vec![0.0f64; d];
    let mut count = vec![0usize; d];
    for w in &train_windows {
        for t in 0..w.values.rows() {
            for c in 0..d {
                if w.mask.is_observed(t, c) {
                    sum[c] += w.values[(t, c)];
                    count[c] += 1;
                }
            }
        }
    }
    let mean: Vec<f64> =
        sum.iter().zip(&count).map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 }).collect();
    let mut sq = vec![0.0f64; d];
    for w in &train_windows {
        for t in 0..w.values.rows() {
            for c in 0..d {
                if w.mask.is_observed(t, c) {
                    let dv = w.values[(t, c)] - mean[c];
                    sq[c] += dv * dv;
                }
            }
        }
    }
    let std: Vec<f64> = sq
        .iter()
        .zip(&count)
        .map(|(s, &n)| {
            let v = if n > 0 { (s / n as f64).sqrt() } else { 0.0 };
            if v > 0.0 {
                v
            } else {
                1.0 // constant feature: leave values centered, unscaled
            }
        })
        .collect();
    let stats = Stats { mean, std };

    let normalize_all = |windows: Vec<Window>| -> Dataset {
        let windows = windows
            .into_iter()
            .map(|w| Window {
                start: w.start,
                values: stats.normalize(&w.values, &w.mask),
                mask: w.mask,
            })
            .collect();
        Dataset { windows, columns: ds.columns.clone(), stats: Some(stats.clone()) }
    };

    Ok(Splits {
        train: normalize_all(train_windows),
        val: normalize_all(val_windows),
        test: normalize_all(test_windows),
    })
}

/// One window with part of its observed cells hidden for evaluation.
///
/// `mask` is the training mask (original observed minus holdout);
/// `values` is zero-filled outside it. `truth` keeps the full values so
/// holdout cells can be scored.
#[derive(Debug, Clone)]
pub struct EvalWindow {
    pub values: Tensor<f64>,
    pub mask: Mask,
    pub holdout: Mask,
    pub truth: Tensor<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalSet {
    pub windows: Vec<EvalWindow>,
    pub p: f64,
    pub seed: u64,
    pub stats: Option<Stats>,
}

impl EvalSet {
    pub fn holdout_cells(&self) -> usize {
        self.windows.iter().map(|w| w.holdout.count_ones()).sum()
    }
}

/// Hides floor(p% · observed cells) uniformly across the whole split
/// and records their true values as evaluation ground truth.
pub fn inject_missing(ds: &Dataset, p: f64, seed: u64) -> Result<EvalSet> {
    contract!(0.0 < p && p < 100.0, "missing rate must be in (0,100), got {p}");
    let mut observed: Vec<(usize, usize, usize)> = Vec::new();
    for (wi, w) in ds.windows.iter().enumerate() {
        for t in 0..w.values.rows() {
            for c in 0..w.values.cols() {
                if w.mask.is_observed(t, c) {
                    observed.push((wi, t, c));
                }
            }
        }
    }
    if observed.is_empty() {
        return Err(Error::Contract("no observed cells to hide".into()));
    }
    let k = (p / 100.0 * observed.len() as f64).floor() as usize;
    let mut r = rng::stream(seed, rng::tag::INJECT, 0);
    let (hidden, _) = observed.partial_shuffle(&mut r, k);

    let mut holdouts: Vec<Mask> =
        ds.windows.iter().map(|w| Mask::zeros(w.values.rows(), w.values.cols())).collect();
    let mut holdout_grids: Vec<Vec<(usize, usize)>> = vec![Vec::new(); ds.windows.len()];
    for &(wi, t, c) in hidden.iter() {
        holdout_grids[wi].push((t, c));
    }
    for (wi, cells) in holdout_grids.iter().enumerate() {
        if !cells.is_empty() {
            let w = &ds.windows[wi];
            holdouts[wi] =
                Mask::from_fn(w.values.rows(), w.values.cols(), |t, c| cells.contains(&(t, c)));
        }
    }

    let windows = ds
        .windows
        .iter()
        .zip(holdouts)
        .map(|(w, holdout)| {
            let mask = w.mask.difference(&holdout)?;
            let mut values = w.values.clone();
            for t in 0..values.rows() {
                for c in 0..values.cols() {
                    if !mask.is_observed(t, c) {
                        values[(t, c)] = 0.0;
                    }
                }
            }
            Ok(EvalWindow { values, mask, holdout, truth: w.values.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSet { windows, p, seed, stats: ds.stats.clone() })
}

/// Fully observed table of noisy multi-frequency sinusoids: three
/// shared latent waves mixed per feature, plus Gaussian noise.
pub fn synthetic_table(rows: usize, d: usize, seed: u64) -> RawTable {
    const LATENTS: usize = 3;
    const NOISE: f64 = 0.05;
    let mut r = rng::stream(seed, rng::tag::SYNTH, 0);
    let freqs: Vec<f64> = (0..LATENTS).map(|_| r.random_range(0.05..0.5)).collect();
    let phases: Vec<f64> =
        (0..LATENTS).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
    let weights: Vec<Vec<f64>> =
        (0..d).map(|_| (0..LATENTS).map(|_| r.random_range(-1.0..1.0)).collect()).collect();

    let mut values = Tensor::zeros(rows, d);
    for t in 0..rows {
        for c in 0..d {
            let mut v = 0.0;
            for k in 0..LATENTS {
                v += weights[c][k] * (freqs[k] * t as f64 + phases[k]).sin();
            }
            let eps: f64 = StandardNormal.sample(&mut r);
            values[(t, c)] = v + NOISE * eps;
        }
    }
    RawTable { values, columns: (0..d).map(|c| format!("f{c}")).collect() }
}
