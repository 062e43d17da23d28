//! Results-file parsing and aggregation: the mean/std summary table
//! and the plot-ready series file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::{CliError, Result};

pub const HEADER: &str = "dataset,method,model,missing_rate,seed,mse,wall_clock_s,config_hash";

/// One finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub method: String,
    pub model: String,
    pub missing_rate: f64,
    pub seed: u64,
    pub mse: f64,
    pub wall_clock_s: f64,
    pub config_hash: String,
}

impl ResultRow {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.dataset,
            self.method,
            self.model,
            self.missing_rate,
            self.seed,
            self.mse,
            self.wall_clock_s,
            self.config_hash
        )
    }
}

/// Parses a results file. The header must match exactly; a malformed
/// row reports its 1-based line number. An empty row list is fine here,
/// the report verb rejects it.
pub fn load_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == HEADER => {}
        Some((_, first)) => {
            return Err(CliError::Runtime(format!(
                "{}:1: expected header {HEADER:?}, got {first:?}",
                path.display()
            )))
        }
        None => return Err(CliError::Runtime(format!("{}: empty results file", path.display()))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(line)
            .map_err(|msg| CliError::Runtime(format!("{}:{}: {msg}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

fn parse_row(line: &str) -> std::result::Result<ResultRow, String> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() != 8 {
        return Err(format!("expected 8 fields, got {}", parts.len()));
    }
    let missing_rate: f64 =
        parts[3].parse().map_err(|_| format!("bad missing_rate {:?}", parts[3]))?;
    let seed: u64 = parts[4].parse().map_err(|_| format!("bad seed {:?}", parts[4]))?;
    let mse: f64 = parts[5].parse().map_err(|_| format!("bad mse {:?}", parts[5]))?;
    if !(mse >= 0.0) {
        return Err(format!("mse must be nonnegative, got {mse}"));
    }
    let wall_clock_s: f64 =
        parts[6].parse().map_err(|_| format!("bad wall_clock_s {:?}", parts[6]))?;
    Ok(ResultRow {
        dataset: parts[0].to_string(),
        method: parts[1].to_string(),
        model: parts[2].to_string(),
        missing_rate,
        seed,
        mse,
        wall_clock_s,
        config_hash: parts[7].to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub method: String,
    pub missing_rate: f64,
    pub runs: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
}

/// Mean and population std of MSE per (method, missing rate), ordered
/// by method name then rate.
pub fn aggregate(rows: &[ResultRow]) -> Vec<Aggregate> {
    // Rates are positive, so their bit patterns order like the values.
    let mut groups: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.method.clone(), row.missing_rate.to_bits()))
            .or_default()
            .push(row.mse);
    }
    groups
        .into_iter()
        .map(|((method, bits), mses)| {
            let n = mses.len() as f64;
            let mean = mses.iter().sum::<f64>() / n;
            let var = mses.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
            Aggregate {
                method,
                missing_rate: f64::from_bits(bits),
                runs: mses.len(),
                mean_mse: mean,
                std_mse: var.sqrt(),
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "method,missing_rate,runs,mean_mse,std_mse";

pub fn summary_text(aggs: &[Aggregate]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for a in aggs {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            a.method, a.missing_rate, a.runs, a.mean_mse, a.std_mse
        );
    }
    out
}

/// One mean-MSE column per method over the missing-rate axis, ready for
/// a plotting tool. Cells without runs stay empty.
pub fn plot_text(aggs: &[Aggregate]) -> String {
    let mut methods: Vec<&str> = aggs.iter().map(|a| a.method.as_str()).collect();
    methods.sort_unstable();
    methods.dedup();
    let mut rates: Vec<u64> = aggs.iter().map(|a| a.missing_rate.to_bits()).collect();
    rates.sort_unstable();
    rates.dedup();

    let mut out = String::from("missing_rate");
    for m in &methods {
        out.push(',');
        out.push_str(m);
    }
    out.push('\n');
    for &bits in &rates {
        let _ = write!(out, "{}", f64::from_bits(bits));
        for m in &methods {
            out.push(',');
            let cell = aggs
                .iter()
                .find(|a| a.method == *m && a.missing_rate.to_bits() == bits);
            if let Some(a) = cell {
                let _ = write!(out, "{}", a.mean_mse);
            }
        }
        out.push('\n');
    }
    out
}

/// The report verb: aggregates `results`, writes the summary and plot
/// files (default names derive from the results path), and prints the
/// summary table.
pub fn report_files(
    results: &Path,
    summary: Option<PathBuf>,
    plot: Option<PathBuf>,
) -> Result<(PathBuf, PathBuf)> {
    let rows = load_rows(results)?;
    if rows.is_empty() {
        return Err(CliError::Runtime(format!(
            "{}: no result rows to aggregate",
            results.display()
        )));
    }
    let aggs = aggregate(&rows);
    let text = summary_text(&aggs);
    let summary_path = summary.unwrap_or_else(|| with_suffix(results, "_summary.csv"));
    let plot_path = plot.unwrap_or_else(|| with_suffix(results, "_plot.csv"));
    fs::write(&summary_path, &text)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", summary_path.display())))?;
    fs::write(&plot_path, plot_text(&aggs))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", plot_path.display())))?;
    print!("{text}");
    Ok((summary_path, plot_path))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}{suffix}"))
}
