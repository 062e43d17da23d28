//! Self-training on pseudo values: the ensemble's averaged estimates
//! at missing cells become training targets wherever the members agree
//! closely, and the selection is refreshed every update epoch.

use std::io::Write;
use std::time::Instant;

use crate::data::{EvalSet, Window};
use crate::ensemble::{
    ensemble_predict, train_rdi, EnsembleState, Phase, TrainConfig, TrainReport, Trainer,
};
use crate::error::{contract, Error, Result};
use crate::masking::Mask;
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Differential entropy of a Gaussian with standard deviation sigma:
/// ln σ + (1 + ln 2π)/2. Zero dispersion returns −∞ (maximal
/// confidence); the range is the whole extended real line.
pub fn entropy_of(sigma: f64) -> Result<f64> {
    contract!(sigma >= 0.0, "sigma must be nonnegative, got {sigma}");
    if sigma == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(sigma.ln() + 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln()))
}

/// One generation of pseudo values for a window: per-cell ensemble
/// mean, member dispersion, its entropy, and the reliability gate.
#[derive(Debug, Clone)]
pub struct PseudoSet {
    pub pseudo: Tensor<f64>,
    /// Population (divide-by-N) standard deviation across members.
    pub sigma: Tensor<f64>,
    pub entropy: Tensor<f64>,
    /// 1 exactly at missing cells with sigma ≤ threshold.
    pub reliable: Mask,
    pub threshold: f64,
    /// Self-training epoch this generation was built at; the builder
    /// stamps 0, the training loop overwrites it.
    pub epoch: usize,
}

/// Builds one pseudo generation from a trained ensemble.
pub fn build_pseudo<S: Scalar>(
    state: &EnsembleState<S>,
    series: &Tensor<f64>,
    mask: &Mask,
    threshold: f64,
) -> Result<PseudoSet> {
    if state.n() < 2 {
        return Err(Error::Contract(format!(
            "pseudo dispersion needs at least 2 members, have {}",
            state.n()
        )));
    }
    let (_, member_estimates) = ensemble_predict(state, series, mask)?;
    let refs: Vec<&Tensor<f64>> = member_estimates.iter().collect();
    pseudo_stats(&refs, mask, threshold, 0)
}

/// Per-cell mean, population std, entropy, and gate over member
/// estimates. Shared by the public builder and the training loop so
/// both produce identical floats.
pub(crate) fn pseudo_stats(
    estimates: &[&Tensor<f64>],
    mask: &Mask,
    threshold: f64,
    epoch: usize,
) -> Result<PseudoSet> {
    contract!(estimates.len() >= 2, "need at least 2 member estimates");
    let shape = estimates[0].shape();
    contract!(shape == mask.shape(), "estimates {shape:?} vs mask {:?}", mask.shape());
    for e in estimates {
        contract!(e.shape() == shape, "member estimate shapes differ");
    }
    let (rows, cols) = shape;
    let n = estimates.len() as f64;
    let mut pseudo = Tensor::zeros(rows, cols);
    let mut sigma = Tensor::zeros(rows, cols);
    let mut entropy = Tensor::zeros(rows, cols);
    for i in 0..rows * cols {
        let mut sum = 0.0;
        for e in estimates {
            sum += e.data()[i];
        }
        let mean = sum / n;
        let mut var = 0.0;
        for e in estimates {
            let d = e.data()[i] - mean;
            var += d * d;
        }
        let s = (var / n).sqrt();
        pseudo.data_mut()[i] = mean;
        sigma.data_mut()[i] = s;
        entropy.data_mut()[i] = entropy_of(s)?;
    }
    let reliable =
        Mask::from_fn(rows, cols, |r, c| !mask.is_observed(r, c) && sigma[(r, c)] <= threshold);
    Ok(PseudoSet { pseudo, sigma, entropy, reliable, threshold, epoch })
}

/// Drop-loss pretraining followed by pseudo-value self-training.
///
/// `config.epochs` counts each phase separately: the ensemble pretrains
/// for that many epochs, then self-trains for that many more, so the
/// result equals `train_rdi` + `continue_self_training` exactly.
pub fn train_rdis<S: Scalar>(
    train: &[Window],
    val: Option<&EvalSet>,
    config: &TrainConfig,
) -> Result<(EnsembleState<S>, TrainReport)> {
    let start = Instant::now();
    let (pretrained, mut report) = train_rdi::<S>(train, val, config)?;
    let (state, self_report) = continue_self_training(&pretrained, train, val, config)?;
    report.train_loss.extend(self_report.train_loss);
    report
        .val_mse
        .extend(self_report.val_mse.iter().map(|&(epoch, mse)| (epoch + config.epochs, mse)));
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok((state, report))
}

/// Self-trains an already trained ensemble for `config.epochs` more
/// epochs: every `update_epoch` epochs the pseudo values are rebuilt
/// from the current members, then each member trains against the
/// reliable pseudo cells plus its observed cells, consuming the same
/// dropped inputs it pretrained on. Optimizer state starts fresh.
pub fn continue_self_training<S: Scalar>(
    state: &EnsembleState<S>,
    train: &[Window],
    val: Option<&EvalSet>,
    config: &TrainConfig,
) -> Result<(EnsembleState<S>, TrainReport)> {
    let start = Instant::now();
    if state.n() < 2 {
        return Err(Error::Contract(format!(
            "self-training needs at least 2 members for dispersion, have {}",
            state.n()
        )));
    }
    let mut trainer = Trainer::from_state(state, train, config)?;
    let mut report = TrainReport::new(config.seed);
    trainer.reset_optimizers();

    let mut done = 0usize;
    while done < config.epochs {
        rebuild_pseudo(&mut trainer, done)?;
        let span = config.update_epoch.min(config.epochs - done);
        trainer.run_epochs(
            Phase::Pseudo,
            done..done + span,
            rng::tag::SHUFFLE_SELF,
            val,
            &mut report,
        )?;
        done += span;
    }
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok((trainer.finish(), report))
}

fn rebuild_pseudo<S: Scalar>(trainer: &mut Trainer<S>, epoch: usize) -> Result<()> {
    let n = trainer.members.len();
    let threshold = trainer.config.sigma_threshold;
    let mut per_member: Vec<Vec<Tensor<f64>>> = Vec::with_capacity(n);
    for k in 0..n {
        per_member.push(trainer.member_train_estimates(k)?);
    }
    let sets = (0..trainer.shared.len())
        .map(|w| {
            let estimates: Vec<&Tensor<f64>> = per_member.iter().map(|m| &m[w]).collect();
            let set = pseudo_stats(&estimates, &trainer.shared[w].mask, threshold, epoch)?;
            Ok((set.pseudo, set.reliable))
        })
        .collect::<Result<Vec<_>>>()?;
    trainer.set_pseudo(sets)
}

/// Writes one row per cell: t, d, pseudo, sigma, entropy, reliable.
pub fn dump_pseudo(set: &PseudoSet, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "t,d,pseudo,sigma,entropy,reliable")?;
    let (rows, cols) = set.pseudo.shape();
    for t in 0..rows {
        for d in 0..cols {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                t,
                d,
                set.pseudo[(t, d)],
                set.sigma[(t, d)],
                set.entropy[(t, d)],
                set.reliable.is_observed(t, d) as u8
            )?;
        }
    }
    Ok(())
}
