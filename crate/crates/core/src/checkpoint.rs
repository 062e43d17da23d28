//! Plain-text checkpoints: one parameter file per model, and for an
//! ensemble a directory of member files plus a manifest.
//!
//! Values are written with shortest round-trip formatting and parsed
//! back in the same scalar type, so save/load is bit-exact. Files are
//! versioned by their first line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::data::Stats;
use crate::ensemble::{EnsembleState, TrainConfig};
use crate::error::{contract, Error, Result};
use crate::models::{BiGruParams, GruParams, LinearParams, ModelKind, ModelParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MODEL_MAGIC: &str = "rdis-model v1";
const ENSEMBLE_MAGIC: &str = "rdis-ensemble v1";

/// Run context stored alongside the members: feature names, the
/// normalization fitted at training time, and the caller's config hash
/// (any non-empty token; "-" when unused).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMeta {
    pub columns: Vec<String>,
    pub stats: Option<Stats>,
    pub config_hash: String,
}

pub fn save_model<S: Scalar>(path: &Path, params: &ModelParams<S>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    write_model(&mut out, params)?;
    out.flush()?;
    Ok(())
}

pub fn load_model<S: Scalar>(path: &Path) -> Result<ModelParams<S>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut cur = Cursor::new(&text, path);
    let params = read_model(&mut cur)?;
    cur.expect_eof()?;
    Ok(params)
}

pub fn save_ensemble<S: Scalar>(
    dir: &Path,
    state: &EnsembleState<S>,
    meta: &EnsembleMeta,
) -> Result<()> {
    contract!(!state.members.is_empty(), "refusing to save an empty ensemble");
    contract!(
        !meta.config_hash.is_empty() && !meta.config_hash.contains(char::is_whitespace),
        "config hash must be a single non-empty token"
    );
    if let Some(stats) = &meta.stats {
        contract!(
            stats.mean.len() == meta.columns.len() && stats.std.len() == meta.columns.len(),
            "stats cover {} features, manifest lists {} columns",
            stats.mean.len(),
            meta.columns.len()
        );
    }
    fs::create_dir_all(dir)?;

    let manifest = fs::File::create(dir.join("manifest.txt"))?;
    let mut out = BufWriter::new(manifest);
    writeln!(out, "{ENSEMBLE_MAGIC}")?;
    writeln!(out, "scalar {}", S::TAG)?;
    writeln!(out, "members {}", state.members.len())?;
    writeln!(out, "config_hash {}", meta.config_hash)?;
    let c = &state.config;
    writeln!(out, "model {}", c.model.as_str())?;
    writeln!(out, "hidden {}", c.hidden)?;
    writeln!(out, "n_members {}", c.n_members)?;
    writeln!(out, "drop_rate {}", c.drop_rate)?;
    writeln!(out, "epochs {}", c.epochs)?;
    writeln!(out, "batch_size {}", c.batch_size)?;
    writeln!(out, "lr {}", c.lr)?;
    writeln!(out, "seed {}", c.seed)?;
    writeln!(out, "resample_plans {}", c.resample_plans)?;
    writeln!(out, "val_every {}", c.val_every)?;
    writeln!(out, "keep_best {}", c.keep_best)?;
    writeln!(out, "sigma_threshold {}", c.sigma_threshold)?;
    writeln!(out, "update_epoch {}", c.update_epoch)?;
    writeln!(out, "columns {}", meta.columns.len())?;
    for name in &meta.columns {
        writeln!(out, "column {name}")?;
    }
    match &meta.stats {
        Some(stats) => {
            writeln!(out, "stats present")?;
            writeln!(out, "mean {}", join_floats(&stats.mean))?;
            writeln!(out, "std {}", join_floats(&stats.std))?;
        }
        None => writeln!(out, "stats absent")?,
    }
    out.flush()?;

    for (k, member) in state.members.iter().enumerate() {
        save_model(&member_path(dir, k), member)?;
    }
    Ok(())
}

/// Loads a saved ensemble. Drop plans are a training-time association
/// and are not persisted, so the restored state carries empty plans.
pub fn load_ensemble<S: Scalar>(dir: &Path) -> Result<(EnsembleState<S>, EnsembleMeta)> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut cur = Cursor::new(&text, &path);
    cur.expect_line(ENSEMBLE_MAGIC)?;
    let tag = cur.expect_kv("scalar")?.to_string();
    if tag != S::TAG {
        return Err(Error::Checkpoint(format!(
            "{}: ensemble was saved as {tag}, cannot load as {}",
            path.display(),
            S::TAG
        )));
    }
    let members: usize = cur.parse_kv("members")?;
    let config_hash = cur.expect_kv("config_hash")?.to_string();
    let model_name = cur.expect_kv("model")?;
    let model = ModelKind::parse(model_name)
        .ok_or_else(|| cur.err(format!("unknown model kind {model_name:?}")))?;
    let config = TrainConfig {
        model,
        hidden: cur.parse_kv("hidden")?,
        n_members: cur.parse_kv("n_members")?,
        drop_rate: cur.parse_kv("drop_rate")?,
        epochs: cur.parse_kv("epochs")?,
        batch_size: cur.parse_kv("batch_size")?,
        lr: cur.parse_kv("lr")?,
        seed: cur.parse_kv("seed")?,
        resample_plans: cur.parse_kv("resample_plans")?,
        val_every: cur.parse_kv("val_every")?,
        keep_best: cur.parse_kv("keep_best")?,
        sigma_threshold: cur.parse_kv("sigma_threshold")?,
        update_epoch: cur.parse_kv("update_epoch")?,
    };
    let n_columns: usize = cur.parse_kv("columns")?;
    let columns: Vec<String> = (0..n_columns)
        .map(|_| cur.expect_kv("column").map(str::to_string))
        .collect::<Result<_>>()?;
    let stats = match cur.expect_kv("stats")? {
        "present" => {
            let mean = parse_floats(cur.expect_kv("mean")?, &cur)?;
            let std = parse_floats(cur.expect_kv("std")?, &cur)?;
            if mean.len() != n_columns || std.len() != n_columns {
                return Err(cur.err(format!("stats do not cover all {n_columns} columns")));
            }
            Some(Stats { mean, std })
        }
        "absent" => None,
        other => return Err(cur.err(format!("stats must be present or absent, got {other:?}"))),
    };
    cur.expect_eof()?;

    let member_params: Vec<ModelParams<S>> = (0..members)
        .map(|k| {
            let params = load_model::<S>(&member_path(dir, k))?;
            if params.kind() != config.model {
                return Err(Error::Checkpoint(format!(
                    "member {k} is a {} model but the manifest says {}",
                    params.kind().as_str(),
                    config.model.as_str()
                )));
            }
            Ok(params)
        })
        .collect::<Result<_>>()?;
    let plans = vec![Vec::new(); members];
    Ok((
        EnsembleState { members: member_params, plans, config },
        EnsembleMeta { columns, stats, config_hash },
    ))
}

/// Scalar tag of a saved ensemble, so callers can dispatch the load.
pub fn ensemble_scalar(dir: &Path) -> Result<String> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut cur = Cursor::new(&text, &path);
    cur.expect_line(ENSEMBLE_MAGIC)?;
    Ok(cur.expect_kv("scalar")?.to_string())
}

fn member_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("member_{k:03}.txt"))
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_floats(line: &str, cur: &Cursor) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| cur.err(format!("bad float {tok:?}")))
        })
        .collect()
}

fn write_model<S: Scalar, W: Write>(out: &mut W, params: &ModelParams<S>) -> Result<()> {
    writeln!(out, "{MODEL_MAGIC}")?;
    writeln!(out, "scalar {}", S::TAG)?;
    writeln!(out, "kind {}", params.kind().as_str())?;
    writeln!(out, "d_in {}", params.d_in())?;
    writeln!(out, "hidden {}", params.hidden())?;
    for (name, tensor) in params.tensor_names().iter().zip(params.tensors()) {
        writeln!(out, "tensor {name} {} {}", tensor.rows(), tensor.cols())?;
        for r in 0..tensor.rows() {
            let mut line = String::new();
            for (i, v) in tensor.row(r).iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&v.to_string());
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

fn read_model<S: Scalar>(cur: &mut Cursor) -> Result<ModelParams<S>> {
    cur.expect_line(MODEL_MAGIC)?;
    let tag = cur.expect_kv("scalar")?;
    if tag != S::TAG {
        return Err(cur.err(format!("model was saved as {tag}, cannot load as {}", S::TAG)));
    }
    let kind_name = cur.expect_kv("kind")?;
    let kind = ModelKind::parse(kind_name)
        .ok_or_else(|| cur.err(format!("unknown model kind {kind_name:?}")))?;
    let d_in: usize = cur.parse_kv("d_in")?;
    let hidden: usize = cur.parse_kv("hidden")?;
    if kind != ModelKind::Linear && hidden == 0 {
        return Err(cur.err("recurrent model with hidden 0".into()));
    }

    let mut params: ModelParams<S> = match kind {
        ModelKind::Gru => ModelParams::Gru(GruParams::zeros(d_in, hidden)),
        ModelKind::BiGru => ModelParams::BiGru(BiGruParams::zeros(d_in, hidden)),
        ModelKind::Linear => ModelParams::Linear(LinearParams::zeros(d_in)),
    };
    let names = params.tensor_names();
    for (name, tensor) in names.iter().zip(params.tensors_mut()) {
        read_tensor(cur, name, tensor)?;
    }
    Ok(params)
}

fn read_tensor<S: Scalar>(cur: &mut Cursor, name: &str, out: &mut Tensor<S>) -> Result<()> {
    let header = cur.next_line()?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "tensor" {
        return Err(cur.err(format!("expected a tensor header, got {header:?}")));
    }
    if parts[1] != name {
        return Err(cur.err(format!("expected tensor {name:?}, got {:?}", parts[1])));
    }
    let rows: usize = parts[2].parse().map_err(|_| cur.err("bad row count".into()))?;
    let cols: usize = parts[3].parse().map_err(|_| cur.err("bad column count".into()))?;
    if (rows, cols) != out.shape() {
        return Err(cur.err(format!(
            "tensor {name} is {rows}x{cols}, model shape wants {}x{}",
            out.rows(),
            out.cols()
        )));
    }
    for r in 0..rows {
        let line = cur.next_line()?;
        let mut count = 0usize;
        for (slot, tok) in out.row_mut(r).iter_mut().zip(line.split_whitespace()) {
            *slot = tok
                .parse::<S>()
                .map_err(|_| Error::Checkpoint(format!("bad float {tok:?}")))?;
            count += 1;
        }
        if count != cols || line.split_whitespace().count() != cols {
            return Err(cur.err(format!("tensor {name} row {r} does not have {cols} values")));
        }
    }
    Ok(())
}

/// Line reader that reports the file and 1-based line number on errors.
struct Cursor<'a> {
    lines: Vec<&'a str>,
    pos: usize,
    path: PathBuf,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, path: &Path) -> Self {
        Cursor { lines: text.lines().collect(), pos: 0, path: path.to_path_buf() }
    }

    fn err(&self, msg: String) -> Error {
        Error::Checkpoint(format!("{}:{}: {msg}", self.path.display(), self.pos))
    }

    fn next_line(&mut self) -> Result<&'a str> {
        let line = self
            .lines
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err("unexpected end of file".into()))?;
        self.pos += 1;
        Ok(line)
    }

    fn expect_line(&mut self, expected: &str) -> Result<()> {
        let line = self.next_line()?;
        if line != expected {
            return Err(self.err(format!("expected {expected:?}, got {line:?}")));
        }
        Ok(())
    }

    /// Reads "key rest..." and returns the rest.
    fn expect_kv(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest),
            _ => Err(self.err(format!("expected {key} entry, got {line:?}"))),
        }
    }

    fn parse_kv<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let raw = self.expect_kv(key)?;
        raw.parse::<T>().map_err(|_| self.err(format!("bad {key} value {raw:?}")))
    }

    fn expect_eof(&self) -> Result<()> {
        if self.pos != self.lines.len() {
            return Err(self.err(format!("trailing content: {:?}", self.lines[self.pos])));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::TrainConfig;

    fn temp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("rdis-checkpoint-{name}-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).unwrap();
        }
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn equal_params<S: Scalar>(a: &ModelParams<S>, b: &ModelParams<S>) -> bool {
        a.kind() == b.kind()
            && a.tensors().iter().zip(b.tensors()).all(|(ta, tb)| ta.data() == tb.data())
    }

    #[test]
    fn model_roundtrip_is_exact_in_both_scalars() {
        let dir = temp_dir("model");
        for kind in [ModelKind::Gru, ModelKind::BiGru, ModelKind::Linear] {
            let path = dir.join(format!("{}.txt", kind.as_str()));
            let p64 = ModelParams::<f64>::init(kind, 3, 4, 99);
            save_model(&path, &p64).unwrap();
            let back = load_model::<f64>(&path).unwrap();
            assert!(equal_params(&p64, &back), "{kind:?} f64 roundtrip");

            let p32 = ModelParams::<f32>::init(kind, 3, 4, 99);
            save_model(&path, &p32).unwrap();
            let back = load_model::<f32>(&path).unwrap();
            assert!(equal_params(&p32, &back), "{kind:?} f32 roundtrip");
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn model_load_rejects_other_scalar() {
        let dir = temp_dir("scalar-mismatch");
        let path = dir.join("m.txt");
        save_model(&path, &ModelParams::<f32>::init(ModelKind::Linear, 2, 0, 1)).unwrap();
        let err = load_model::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("f32"), "{err}");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn awkward_floats_survive_the_text_format() {
        let mut p = LinearParams::<f64>::zeros(2);
        p.w[(0, 0)] = 0.1;
        p.w[(0, 1)] = -1.0e-300;
        p.w[(1, 0)] = 9.87654321e290;
        p.w[(1, 1)] = f64::MIN_POSITIVE / 8.0;
        p.b[(0, 1)] = -0.30000000000000004;
        let params = ModelParams::Linear(p);
        let dir = temp_dir("floats");
        let path = dir.join("m.txt");
        save_model(&path, &params).unwrap();
        let back = load_model::<f64>(&path).unwrap();
        assert!(equal_params(&params, &back));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn ensemble_roundtrip_preserves_config_and_meta() {
        let config = TrainConfig {
            model: ModelKind::Gru,
            hidden: 4,
            n_members: 2,
            drop_rate: 0.35,
            epochs: 7,
            lr: 0.00125,
            seed: 42,
            sigma_threshold: 0.003,
            ..TrainConfig::default()
        };
        let state = EnsembleState {
            members: (0..2)
                .map(|k| ModelParams::<f64>::init(ModelKind::Gru, 3, 4, 42 + k))
                .collect(),
            plans: vec![Vec::new(), Vec::new()],
            config: config.clone(),
        };
        let meta = EnsembleMeta {
            columns: vec!["temp".into(), "pm 2.5".into(), "co".into()],
            stats: Some(Stats {
                mean: vec![0.5, -1.25, 3.0],
                std: vec![1.0, 2.5, 0.125],
            }),
            config_hash: "0011aabb".into(),
        };
        let dir = temp_dir("ensemble");
        save_ensemble(&dir, &state, &meta).unwrap();

        assert_eq!(ensemble_scalar(&dir).unwrap(), "f64");
        let (back, back_meta) = load_ensemble::<f64>(&dir).unwrap();
        assert_eq!(back.config, config);
        assert_eq!(back_meta, meta);
        assert_eq!(back.members.len(), 2);
        assert!(back.plans.iter().all(Vec::is_empty));
        for (a, b) in state.members.iter().zip(&back.members) {
            assert!(equal_params(a, b));
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn load_errors_carry_line_numbers() {
        let dir = temp_dir("errors");
        let path = dir.join("bad.txt");

        fs::write(&path, "not a checkpoint\n").unwrap();
        let err = load_model::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");

        let good = ModelParams::<f64>::init(ModelKind::Linear, 2, 0, 3);
        save_model(&path, &good).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let truncated: Vec<&str> = text.lines().take(6).collect();
        fs::write(&path, truncated.join("\n")).unwrap();
        let err = load_model::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("end of file"), "{err}");

        let mangled = text.replace("tensor w 2 2", "tensor w 2 3");
        fs::write(&path, mangled).unwrap();
        assert!(load_model::<f64>(&path).is_err());

        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_member_file_fails_the_ensemble_load() {
        let config = TrainConfig { model: ModelKind::Linear, hidden: 0, ..TrainConfig::default() };
        let state = EnsembleState {
            members: vec![ModelParams::<f64>::init(ModelKind::Linear, 2, 0, 5)],
            plans: vec![Vec::new()],
            config,
        };
        let meta = EnsembleMeta { columns: vec!["a".into(), "b".into()], stats: None, config_hash: "-".into() };
        let dir = temp_dir("missing-member");
        save_ensemble(&dir, &state, &meta).unwrap();
        fs::remove_file(member_path(&dir, 0)).unwrap();
        assert!(load_ensemble::<f64>(&dir).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}
