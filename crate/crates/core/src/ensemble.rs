//! Ensemble training on random-drop inputs and averaged inference.
//!
//! N models of one architecture each train against their own drop
//! plans; at inference the member estimates are averaged. Training
//! batches stack windows row-wise, so every loss is the masked mean
//! over the whole batch.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::adam::Adam;
use crate::data::{EvalSet, Window};
use crate::error::{contract, Error, Result};
use crate::graph::{Graph, NodeId};
use crate::masking::{random_drop, DropPlan, Mask};
use crate::models::{self, fill_inputs, gather_steps, ModelKind, ModelParams};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub hidden: usize,
    pub n_members: usize,
    pub drop_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Redraw drop plans every epoch instead of fixing them per window.
    pub resample_plans: bool,
    /// Validation cadence in epochs; 0 disables validation scoring.
    pub val_every: usize,
    /// Keep the best-validation parameters instead of the final epoch's.
    pub keep_best: bool,
    /// Pseudo values with member std-dev at or below this are trusted;
    /// negative disables gating entirely (no cell is ever reliable).
    pub sigma_threshold: f64,
    /// Epochs between pseudo-value rebuilds during self-training.
    pub update_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::BiGru,
            hidden: 100,
            n_members: 8,
            drop_rate: 0.3,
            epochs: 2000,
            batch_size: 128,
            lr: 0.0005,
            seed: 1,
            resample_plans: false,
            val_every: 0,
            keep_best: false,
            sigma_threshold: 0.03,
            update_epoch: 400,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.n_members >= 1, "n_members must be at least 1");
        contract!(
            self.drop_rate > 0.0 && self.drop_rate < 1.0,
            "drop_rate must be in (0,1), got {}",
            self.drop_rate
        );
        contract!(self.epochs >= 1, "epochs must be at least 1");
        contract!(self.batch_size >= 1, "batch_size must be at least 1");
        contract!(self.lr.is_finite() && self.lr > 0.0, "lr must be positive, got {}", self.lr);
        contract!(
            self.model == ModelKind::Linear || self.hidden >= 1,
            "hidden must be at least 1 for recurrent models"
        );
        contract!(!self.sigma_threshold.is_nan(), "sigma_threshold is NaN");
        contract!(self.update_epoch >= 1, "update_epoch must be at least 1");
        Ok(())
    }
}

/// A trained ensemble: member parameters plus the drop plans they were
/// trained against (empty for plain reconstruction training).
#[derive(Debug, Clone)]
pub struct EnsembleState<S> {
    pub members: Vec<ModelParams<S>>,
    /// plans[k][w] is member k's plan for training window w.
    pub plans: Vec<Vec<DropPlan>>,
    pub config: TrainConfig,
}

impl<S> EnsembleState<S> {
    pub fn n(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Mean batch loss per epoch, indexed by epoch.
    pub train_loss: Vec<f64>,
    /// (epoch, pooled validation MSE) at each validation point.
    pub val_mse: Vec<(usize, f64)>,
    pub wall_clock_s: f64,
    pub seed: u64,
}

impl TrainReport {
    pub fn new(seed: u64) -> Self {
        TrainReport { seed, ..Default::default() }
    }
}

/// Trains N members with the two-term drop loss (hidden cells against
/// truth, visible cells as reconstruction), each on its own plans.
pub fn train_rdi<S: Scalar>(
    train: &[Window],
    val: Option<&EvalSet>,
    config: &TrainConfig,
) -> Result<(EnsembleState<S>, TrainReport)> {
    let start = Instant::now();
    let mut trainer = Trainer::new(train, config, true)?;
    let mut report = TrainReport::new(config.seed);
    trainer.run_epochs(Phase::Drop, 0..config.epochs, rng::tag::SHUFFLE, val, &mut report)?;
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok((trainer.finish(), report))
}

/// Trains with plain reconstruction loss on observed cells only: no
/// drop plans, the degenerate baseline.
pub fn train_reconstruction<S: Scalar>(
    train: &[Window],
    val: Option<&EvalSet>,
    config: &TrainConfig,
) -> Result<(EnsembleState<S>, TrainReport)> {
    let start = Instant::now();
    let mut trainer = Trainer::new(train, config, false)?;
    let mut report = TrainReport::new(config.seed);
    trainer.run_epochs(Phase::Drop, 0..config.epochs, rng::tag::SHUFFLE, val, &mut report)?;
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok((trainer.finish(), report))
}

/// Mean of member estimates plus the per-member estimates themselves.
pub fn ensemble_predict<S: Scalar>(
    state: &EnsembleState<S>,
    series: &Tensor<f64>,
    mask: &Mask,
) -> Result<(Tensor<f64>, Vec<Tensor<f64>>)> {
    if state.members.is_empty() {
        return Err(Error::Contract("ensemble has no members".into()));
    }
    contract!(
        series.cols() == state.members[0].d_in(),
        "series has {} features, ensemble expects {}",
        series.cols(),
        state.members[0].d_in()
    );
    let member_estimates: Vec<Tensor<f64>> = state
        .members
        .iter()
        .map(|m| models::forward(m, series, mask))
        .collect::<Result<_>>()?;
    let mut mean = Tensor::zeros(series.rows(), series.cols());
    for est in &member_estimates {
        for (o, &v) in mean.data_mut().iter_mut().zip(est.data()) {
            *o += v;
        }
    }
    let n = member_estimates.len() as f64;
    for o in mean.data_mut() {
        *o /= n;
    }
    Ok((mean, member_estimates))
}

/// Observed cells pass through; missing cells take ensemble estimates.
pub fn impute<S: Scalar>(
    state: &EnsembleState<S>,
    series: &Tensor<f64>,
    mask: &Mask,
) -> Result<Tensor<f64>> {
    let (estimates, _) = ensemble_predict(state, series, mask)?;
    let mut out = estimates;
    for i in 0..series.len() {
        if mask.tensor().data()[i] == 1.0 {
            out.data_mut()[i] = series.data()[i];
        }
    }
    Ok(out)
}

/// Pooled MSE of the ensemble mean over every holdout cell in the set.
pub fn evaluate<S: Scalar>(state: &EnsembleState<S>, set: &EvalSet) -> Result<f64> {
    if state.members.is_empty() {
        return Err(Error::Contract("ensemble has no members".into()));
    }
    if set.holdout_cells() == 0 {
        return Err(Error::Contract("eval set has no holdout cells".into()));
    }
    let mut g = Graph::new();
    pooled_eval(&mut g, &state.members, set, state.config.batch_size)
}

fn pooled_eval<S: Scalar>(
    g: &mut Graph<S>,
    members: &[ModelParams<S>],
    set: &EvalSet,
    batch: usize,
) -> Result<f64> {
    let pairs: Vec<(Tensor<S>, Tensor<S>)> =
        set.windows.iter().map(|w| fill_inputs::<S>(&w.values, &w.mask)).collect();
    let mx: Vec<&Tensor<S>> = pairs.iter().map(|p| &p.0).collect();
    let hole: Vec<&Tensor<S>> = pairs.iter().map(|p| &p.1).collect();

    let mut sums: Vec<Tensor<f64>> =
        set.windows.iter().map(|w| Tensor::zeros(w.values.rows(), w.values.cols())).collect();
    for params in members {
        let estimates = batched_estimates(g, params, &mx, &hole, batch)?;
        for (sum, est) in sums.iter_mut().zip(&estimates) {
            for (o, &v) in sum.data_mut().iter_mut().zip(est.data()) {
                *o += v;
            }
        }
    }
    let n = members.len() as f64;
    let mut sq = 0.0;
    let mut count = 0usize;
    for (w, sum) in set.windows.iter().zip(&sums) {
        for i in 0..sum.len() {
            if w.holdout.tensor().data()[i] == 1.0 {
                let d = w.truth.data()[i] - sum.data()[i] / n;
                sq += d * d;
                count += 1;
            }
        }
    }
    contract!(count > 0, "eval set has no holdout cells");
    Ok(sq / count as f64)
}

/// Runs one model over many windows in batches; per-window estimates
/// come back in f64. Row-major batching keeps each window's arithmetic
/// identical to a batch of one.
pub(crate) fn batched_estimates<S: Scalar>(
    g: &mut Graph<S>,
    params: &ModelParams<S>,
    mx: &[&Tensor<S>],
    hole: &[&Tensor<S>],
    batch: usize,
) -> Result<Vec<Tensor<f64>>> {
    contract!(batch >= 1, "batch size must be positive");
    let mut out = Vec::with_capacity(mx.len());
    for (mx_chunk, hole_chunk) in mx.chunks(batch).zip(hole.chunks(batch)) {
        g.reset();
        let inputs = gather_steps(g, mx_chunk, hole_chunk)?;
        let unrolled = params.unroll(g, &inputs, false)?;
        let (rows, cols) = mx_chunk[0].shape();
        let mut chunk_out = vec![Tensor::<f64>::zeros(rows, cols); mx_chunk.len()];
        for (t, &pred) in unrolled.preds.iter().enumerate() {
            let value = g.value(pred);
            for (bi, window) in chunk_out.iter_mut().enumerate() {
                for (o, &v) in window.row_mut(t).iter_mut().zip(value.row(bi)) {
                    *o = v.to_f64();
                }
            }
        }
        out.extend(chunk_out);
    }
    Ok(out)
}

// ── training engine ─────────────────────────────────────────────────

/// Which two-term loss the epoch loop assembles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Phase {
    /// Hidden-cell term + visible reconstruction term.
    Drop,
    /// Reliable-pseudo term + observed reconstruction term.
    Pseudo,
}

/// Window tensors shared by every member: the full observed view.
pub(crate) struct SharedWindow<S: Scalar> {
    pub x: Tensor<S>,
    pub m: Tensor<S>,
    pub n_m: usize,
    pub mx_full: Tensor<S>,
    pub hole_full: Tensor<S>,
    pub mask: Mask,
}

/// Per-member, per-window input and loss-mask tensors.
pub(crate) struct PlanData<S: Scalar> {
    pub mx: Tensor<S>,
    pub hole: Tensor<S>,
    pub dropped: Tensor<S>,
    pub n_dropped: usize,
    pub vis: Tensor<S>,
    pub n_vis: usize,
}

pub(crate) struct Member<S: Scalar> {
    pub params: ModelParams<S>,
    pub adam: Adam<S>,
    pub seed: u64,
    pub plans: Vec<DropPlan>,
    pub data: Vec<PlanData<S>>,
}

/// Pseudo targets for one window, pre-cast for training.
pub(crate) struct PseudoData<S: Scalar> {
    pub target: Tensor<S>,
    pub mask: Tensor<S>,
    pub count: usize,
}

pub(crate) struct Trainer<S: Scalar> {
    pub config: TrainConfig,
    pub shared: Vec<SharedWindow<S>>,
    pub members: Vec<Member<S>>,
    pub pseudo: Option<Vec<PseudoData<S>>>,
    pub graph: Graph<S>,
    /// (epoch, mse, params) of the best validation point seen.
    pub best: Option<(usize, f64, Vec<ModelParams<S>>)>,
}

impl<S: Scalar> Trainer<S> {
    pub(crate) fn new(train: &[Window], config: &TrainConfig, with_plans: bool) -> Result<Self> {
        config.validate()?;
        contract!(!train.is_empty(), "no training windows");
        let shape = train[0].values.shape();
        contract!(shape.0 >= 1 && shape.1 >= 1, "degenerate window shape {shape:?}");
        for w in train {
            contract!(
                w.values.shape() == shape,
                "window shapes differ: {:?} vs {shape:?}",
                w.values.shape()
            );
        }
        let d = shape.1;

        let shared: Vec<SharedWindow<S>> = train
            .iter()
            .map(|w| {
                let (mx_full, hole_full) = fill_inputs::<S>(&w.values, &w.mask);
                SharedWindow {
                    x: w.values.cast(),
                    m: w.mask.tensor().cast(),
                    n_m: w.mask.count_ones(),
                    mx_full,
                    hole_full,
                    mask: w.mask.clone(),
                }
            })
            .collect();

        let mut members = Vec::with_capacity(config.n_members);
        for k in 0..config.n_members {
            let seed = rng::member_seed(config.seed, k);
            let params = ModelParams::<S>::init(config.model, d, config.hidden, seed);
            let plans = if with_plans {
                plan_set(train, config.drop_rate, seed)?
            } else {
                Vec::new()
            };
            let data = plan_data(train, &shared, &plans);
            members.push(Member { params, adam: Adam::new(config.lr), seed, plans, data });
        }

        Ok(Trainer {
            config: config.clone(),
            shared,
            members,
            pseudo: None,
            graph: Graph::new(),
            best: None,
        })
    }

    /// Rehydrates a trainer from trained members so self-training can
    /// continue where drop training stopped. Members keep their stored
    /// plans when present; members without plans train on the full
    /// observed view. Optimizer state starts fresh.
    pub(crate) fn from_state(
        state: &EnsembleState<S>,
        train: &[Window],
        config: &TrainConfig,
    ) -> Result<Self> {
        contract!(!state.members.is_empty(), "ensemble has no members");
        contract!(
            state.plans.is_empty() || state.plans.len() == state.members.len(),
            "plan list does not match member count"
        );
        let mut trainer = Trainer::new(train, config, false)?;
        contract!(
            state.members.len() == trainer.members.len(),
            "config asks for {} members but state has {}",
            trainer.members.len(),
            state.members.len()
        );
        for (k, member) in trainer.members.iter_mut().enumerate() {
            contract!(
                state.members[k].d_in() == member.params.d_in(),
                "member {k} feature width does not match the training windows"
            );
            member.params = state.members[k].clone();
            if let Some(plans) = state.plans.get(k) {
                contract!(
                    plans.is_empty() || plans.len() == train.len(),
                    "member {k} has {} plans for {} windows",
                    plans.len(),
                    train.len()
                );
                if !plans.is_empty() {
                    for (plan, w) in plans.iter().zip(train) {
                        contract!(
                            plan.base == w.mask,
                            "member {k} plan mask does not match its training window"
                        );
                    }
                    member.plans = plans.clone();
                    member.data = plan_data(train, &trainer.shared, plans);
                }
            }
        }
        Ok(trainer)
    }

    /// Fresh optimizer state, used at the drop-to-self phase boundary.
    pub(crate) fn reset_optimizers(&mut self) {
        for member in &mut self.members {
            member.adam = Adam::new(self.config.lr);
        }
    }

    /// Installs pseudo targets for the next self-training stretch.
    pub(crate) fn set_pseudo(&mut self, sets: Vec<(Tensor<f64>, Mask)>) -> Result<()> {
        contract!(sets.len() == self.shared.len(), "pseudo sets do not cover training windows");
        let data = sets
            .into_iter()
            .zip(&self.shared)
            .map(|((pseudo, reliable), shared)| {
                contract!(
                    pseudo.shape() == shared.x.shape() && reliable.shape() == shared.x.shape(),
                    "pseudo shape mismatch"
                );
                contract!(
                    reliable.is_subset_of(&shared.mask.complement()),
                    "reliable cells must lie within missing cells"
                );
                Ok(PseudoData {
                    target: pseudo.cast(),
                    mask: reliable.tensor().cast(),
                    count: reliable.count_ones(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.pseudo = Some(data);
        Ok(())
    }

    /// Runs the epoch loop for one phase over global epoch indices.
    /// Members train sequentially from their own RNG streams, so a run
    /// with fewer members replays the surviving ones exactly.
    pub(crate) fn run_epochs(
        &mut self,
        phase: Phase,
        epochs: std::ops::Range<usize>,
        shuffle_tag: u64,
        val: Option<&EvalSet>,
        report: &mut TrainReport,
    ) -> Result<()> {
        if phase == Phase::Pseudo {
            contract!(self.pseudo.is_some(), "self-training phase without pseudo values");
        }
        let n_windows = self.shared.len();
        for epoch in epochs {
            if self.config.resample_plans && phase == Phase::Drop {
                self.resample_plans(epoch)?;
            }
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for k in 0..self.members.len() {
                let mut order: Vec<usize> = (0..n_windows).collect();
                order.shuffle(&mut rng::stream(self.members[k].seed, shuffle_tag, epoch as u64));
                for chunk in order.chunks(self.config.batch_size) {
                    let loss = self.train_batch(k, chunk, phase)?;
                    if !loss.is_finite() {
                        return Err(Error::Training(format!(
                            "member {k} diverged at epoch {epoch}: non-finite loss"
                        )));
                    }
                    epoch_loss += loss;
                    batches += 1;
                }
            }
            report.train_loss.push(epoch_loss / batches as f64);

            let val_due = self.config.val_every > 0 && (epoch + 1) % self.config.val_every == 0;
            if let (true, Some(set)) = (val_due, val) {
                let mse = self.validate(set)?;
                report.val_mse.push((epoch, mse));
                if self.best.as_ref().map_or(true, |(_, best, _)| mse < *best) {
                    let snapshot = self.members.iter().map(|m| m.params.clone()).collect();
                    self.best = Some((epoch, mse, snapshot));
                }
            }
        }
        Ok(())
    }

    fn train_batch(&mut self, k: usize, chunk: &[usize], phase: Phase) -> Result<f64> {
        let g = &mut self.graph;
        g.reset();
        let member = &mut self.members[k];
        let shared = &self.shared;

        let mx: Vec<&Tensor<S>> = chunk.iter().map(|&w| &member.data[w].mx).collect();
        let hole: Vec<&Tensor<S>> = chunk.iter().map(|&w| &member.data[w].hole).collect();
        let inputs = gather_steps(g, &mx, &hole)?;
        let unrolled = member.params.unroll(g, &inputs, true)?;

        let mut terms: Vec<NodeId> = Vec::with_capacity(2);
        match phase {
            Phase::Drop => {
                let targets: Vec<&Tensor<S>> = chunk.iter().map(|&w| &shared[w].x).collect();
                let d_masks: Vec<&Tensor<S>> =
                    chunk.iter().map(|&w| &member.data[w].dropped).collect();
                let d_count: usize = chunk.iter().map(|&w| member.data[w].n_dropped).sum();
                if let Some(t) = loss_term(g, &unrolled.preds, &targets, &d_masks, d_count)? {
                    terms.push(t);
                }
                let v_masks: Vec<&Tensor<S>> = chunk.iter().map(|&w| &member.data[w].vis).collect();
                let v_count: usize = chunk.iter().map(|&w| member.data[w].n_vis).sum();
                if let Some(t) = loss_term(g, &unrolled.preds, &targets, &v_masks, v_count)? {
                    terms.push(t);
                }
            }
            Phase::Pseudo => {
                let pseudo = self.pseudo.as_ref().expect("checked in run_epochs");
                let p_targets: Vec<&Tensor<S>> = chunk.iter().map(|&w| &pseudo[w].target).collect();
                let p_masks: Vec<&Tensor<S>> = chunk.iter().map(|&w| &pseudo[w].mask).collect();
                let p_count: usize = chunk.iter().map(|&w| pseudo[w].count).sum();
                if let Some(t) = loss_term(g, &unrolled.preds, &p_targets, &p_masks, p_count)? {
                    terms.push(t);
                }
                let targets: Vec<&Tensor<S>> = chunk.iter().map(|&w| &shared[w].x).collect();
                let o_masks: Vec<&Tensor<S>> = chunk.iter().map(|&w| &shared[w].m).collect();
                let o_count: usize = chunk.iter().map(|&w| shared[w].n_m).sum();
                if let Some(t) = loss_term(g, &unrolled.preds, &targets, &o_masks, o_count)? {
                    terms.push(t);
                }
            }
        }
        contract!(!terms.is_empty(), "batch has no active loss cells");
        let mut loss = terms[0];
        for &t in &terms[1..] {
            loss = g.add(loss, t)?;
        }
        let value = g.value(loss)[(0, 0)].to_f64();
        g.backward(loss)?;

        let grads: Vec<Option<&Tensor<S>>> = unrolled.leaves.iter().map(|&id| g.grad(id)).collect();
        let mut params = member.params.tensors_mut();
        member.adam.step(&mut params, &grads)?;
        Ok(value)
    }

    fn resample_plans(&mut self, epoch: usize) -> Result<()> {
        // High bits carry the epoch so redrawn rounds never collide
        // with the fixed-plan rounds (plain window indices).
        let round = |w: usize| ((epoch as u64 + 1) << 32) ^ w as u64;
        for member in &mut self.members {
            if member.plans.is_empty() {
                continue;
            }
            for (w, shared) in self.shared.iter().enumerate() {
                let seed = rng::derive(member.seed, rng::tag::PLAN, round(w));
                let plan = random_drop(&shared.mask, self.config.drop_rate, seed)?;
                member.data[w] = plan_window(&shared.x, &plan);
                member.plans[w] = plan;
            }
        }
        Ok(())
    }

    fn validate(&mut self, set: &EvalSet) -> Result<f64> {
        let members: Vec<ModelParams<S>> =
            self.members.iter().map(|m| m.params.clone()).collect();
        pooled_eval(&mut self.graph, &members, set, self.config.batch_size)
    }

    /// Per-window estimates of one member over the full observed view,
    /// used to build pseudo values.
    pub(crate) fn member_train_estimates(&mut self, k: usize) -> Result<Vec<Tensor<f64>>> {
        let mx: Vec<&Tensor<S>> = self.shared.iter().map(|s| &s.mx_full).collect();
        let hole: Vec<&Tensor<S>> = self.shared.iter().map(|s| &s.hole_full).collect();
        batched_estimates(
            &mut self.graph,
            &self.members[k].params,
            &mx,
            &hole,
            self.config.batch_size,
        )
    }

    pub(crate) fn finish(mut self) -> EnsembleState<S> {
        let members: Vec<ModelParams<S>> = if self.config.keep_best && self.best.is_some() {
            self.best.take().map(|(_, _, params)| params).unwrap()
        } else {
            self.members.iter().map(|m| m.params.clone()).collect()
        };
        EnsembleState {
            members,
            plans: self.members.into_iter().map(|m| m.plans).collect(),
            config: self.config,
        }
    }
}

fn plan_set(train: &[Window], drop_rate: f64, member_seed: u64) -> Result<Vec<DropPlan>> {
    train
        .iter()
        .enumerate()
        .map(|(w, window)| {
            let seed = rng::derive(member_seed, rng::tag::PLAN, w as u64);
            random_drop(&window.mask, drop_rate, seed)
        })
        .collect()
}

fn plan_data<S: Scalar>(
    train: &[Window],
    shared: &[SharedWindow<S>],
    plans: &[DropPlan],
) -> Vec<PlanData<S>> {
    if plans.is_empty() {
        // No drops: the model sees everything and reconstructs it.
        return shared
            .iter()
            .map(|s| PlanData {
                mx: s.mx_full.clone(),
                hole: s.hole_full.clone(),
                dropped: Tensor::zeros(s.x.rows(), s.x.cols()),
                n_dropped: 0,
                vis: s.m.clone(),
                n_vis: s.n_m,
            })
            .collect();
    }
    train.iter().zip(shared).zip(plans).map(|((_, s), plan)| plan_window(&s.x, plan)).collect()
}

fn plan_window<S: Scalar>(x: &Tensor<S>, plan: &DropPlan) -> PlanData<S> {
    let (rows, cols) = x.shape();
    let mut mx = Tensor::zeros(rows, cols);
    let mut hole = Tensor::zeros(rows, cols);
    for i in 0..rows * cols {
        let v = plan.visible.tensor().data()[i];
        mx.data_mut()[i] = x.data()[i] * S::from_f64(v);
        hole.data_mut()[i] = S::from_f64(1.0 - v);
    }
    let dropped = plan.dropped();
    PlanData {
        mx,
        hole,
        dropped: dropped.tensor().cast(),
        n_dropped: dropped.count_ones(),
        vis: plan.visible.tensor().cast(),
        n_vis: plan.visible.count_ones(),
    }
}

/// Adds one masked sum-of-squares term, normalized by its cell count,
/// to the graph: mean over mask of (pred − target)². Returns None when
/// the batch has no active cells for this term.
fn loss_term<S: Scalar>(
    g: &mut Graph<S>,
    preds: &[NodeId],
    targets: &[&Tensor<S>],
    masks: &[&Tensor<S>],
    count: usize,
) -> Result<Option<NodeId>> {
    if count == 0 {
        return Ok(None);
    }
    contract!(
        targets.len() == masks.len() && !targets.is_empty(),
        "loss term needs aligned targets and masks"
    );
    let (_, d) = targets[0].shape();
    let b = targets.len();
    let mut acc: Option<NodeId> = None;
    for (t, &pred) in preds.iter().enumerate() {
        let mut tgt = g.fresh(b, d);
        let mut msk = g.fresh(b, d);
        for (bi, (tw, mw)) in targets.iter().zip(masks).enumerate() {
            tgt.row_mut(bi).copy_from_slice(&tw.row(t)[..d]);
            msk.row_mut(bi).copy_from_slice(&mw.row(t)[..d]);
        }
        let tgt = g.constant(tgt);
        let msk = g.constant(msk);
        let diff = g.sub(pred, tgt)?;
        let masked = g.mul(diff, msk)?;
        let ssq = g.sum_sq(masked);
        acc = Some(match acc {
            Some(a) => g.add(a, ssq)?,
            None => ssq,
        });
    }
    let total = acc.expect("preds is never empty");
    Ok(Some(g.scale(total, S::from_f64(1.0 / count as f64))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LinearParams;
    use rand::Rng;

    fn tiny_config(model: ModelKind, n: usize, epochs: usize, lr: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            model,
            hidden: 4,
            n_members: n,
            drop_rate: 0.25,
            epochs,
            batch_size: 8,
            lr,
            seed,
            ..TrainConfig::default()
        }
    }

    fn random_windows(count: usize, t: usize, d: usize, seed: u64, missing: f64) -> Vec<Window> {
        let mut r = rng::stream(seed, rng::tag::SYNTH, 40);
        (0..count)
            .map(|i| {
                let mut values = Tensor::zeros(t, d);
                let mask = Mask::from_fn(t, d, |_, _| r.random::<f64>() >= missing);
                for (j, v) in values.data_mut().iter_mut().enumerate() {
                    let observed = mask.tensor().data()[j] == 1.0;
                    *v = if observed { r.random_range(-1.5..1.5) } else { 0.0 };
                }
                Window { start: i, values, mask }
            })
            .collect()
    }

    fn constant_windows(count: usize, t: usize, d: usize, value: f64) -> Vec<Window> {
        (0..count)
            .map(|i| Window {
                start: i,
                values: Tensor::filled(t, d, value),
                mask: Mask::ones(t, d),
            })
            .collect()
    }

    fn linear_state(members: Vec<LinearParams<f64>>) -> EnsembleState<f64> {
        let config =
            tiny_config(ModelKind::Linear, members.len(), 1, 0.001, 7);
        EnsembleState {
            members: members.into_iter().map(ModelParams::Linear).collect(),
            plans: vec![],
            config,
        }
    }

    #[test]
    fn predict_single_member_is_identity_with_forward() {
        let windows = random_windows(1, 5, 3, 2, 0.3);
        let params = ModelParams::<f64>::init(ModelKind::Gru, 3, 4, 77);
        let state = EnsembleState {
            members: vec![params.clone()],
            plans: vec![],
            config: tiny_config(ModelKind::Gru, 1, 1, 0.001, 77),
        };
        let w = &windows[0];
        let (mean, singles) = ensemble_predict(&state, &w.values, &w.mask).unwrap();
        let direct = models::forward(&params, &w.values, &w.mask).unwrap();
        assert_eq!(mean, direct);
        assert_eq!(singles[0], direct);
    }

    #[test]
    fn predict_opposite_members_cancel() {
        let mut a = LinearParams::<f64>::zeros(2);
        a.w[(0, 0)] = 1.0;
        a.w[(1, 0)] = 0.5;
        a.b[(0, 1)] = 2.0;
        let mut b = LinearParams::<f64>::zeros(2);
        for (bv, av) in b.w.data_mut().iter_mut().zip(a.w.data()) {
            *bv = -av;
        }
        for (bv, av) in b.b.data_mut().iter_mut().zip(a.b.data()) {
            *bv = -av;
        }
        let state = linear_state(vec![a, b]);
        let windows = random_windows(1, 4, 2, 3, 0.2);
        let (mean, _) = ensemble_predict(&state, &windows[0].values, &windows[0].mask).unwrap();
        assert!(mean.data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn predict_rejects_empty_ensemble_and_bad_width() {
        let state = EnsembleState::<f64> {
            members: vec![],
            plans: vec![],
            config: TrainConfig::default(),
        };
        let windows = random_windows(1, 4, 2, 5, 0.2);
        let w = &windows[0];
        assert!(ensemble_predict(&state, &w.values, &w.mask).is_err());

        let state = linear_state(vec![LinearParams::zeros(3)]);
        assert!(ensemble_predict(&state, &w.values, &w.mask).is_err());
    }

    #[test]
    fn impute_passes_observed_through() {
        let params = ModelParams::<f64>::init(ModelKind::Gru, 2, 4, 5);
        let state = EnsembleState {
            members: vec![params],
            plans: vec![],
            config: tiny_config(ModelKind::Gru, 1, 1, 0.001, 5),
        };
        let windows = random_windows(1, 6, 2, 9, 0.4);
        let w = &windows[0];
        let out = impute(&state, &w.values, &w.mask).unwrap();
        for i in 0..w.values.len() {
            if w.mask.tensor().data()[i] == 1.0 {
                assert_eq!(out.data()[i], w.values.data()[i], "observed cell altered");
            }
        }

        let full = Window {
            start: 0,
            values: w.values.clone(),
            mask: Mask::ones(6, 2),
        };
        assert_eq!(impute(&state, &full.values, &full.mask).unwrap(), full.values);

        let none = Mask::zeros(6, 2);
        let est = ensemble_predict(&state, &w.values, &none).unwrap().0;
        assert_eq!(impute(&state, &w.values, &none).unwrap(), est);
    }

    #[test]
    fn batched_estimates_match_single_window_runs() {
        let params = ModelParams::<f64>::init(ModelKind::BiGru, 3, 4, 21);
        let windows = random_windows(7, 5, 3, 22, 0.3);
        let pairs: Vec<(Tensor<f64>, Tensor<f64>)> =
            windows.iter().map(|w| fill_inputs::<f64>(&w.values, &w.mask)).collect();
        let mx: Vec<&Tensor<f64>> = pairs.iter().map(|p| &p.0).collect();
        let hole: Vec<&Tensor<f64>> = pairs.iter().map(|p| &p.1).collect();
        let mut g = Graph::new();
        let batched = batched_estimates(&mut g, &params, &mx, &hole, 3).unwrap();
        for (w, est) in windows.iter().zip(&batched) {
            let single = models::forward(&params, &w.values, &w.mask).unwrap();
            assert_eq!(*est, single, "batched row diverged from a batch of one");
        }
    }

    /// Constant data is exactly representable by the linear imputer
    /// (zero weights, bias = the constant) under every drop pattern.
    #[test]
    fn rdi_linear_converges_on_constant_data() {
        let windows = constant_windows(32, 4, 2, 1.0);
        let mut config = tiny_config(ModelKind::Linear, 1, 200, 0.02, 11);
        config.drop_rate = 0.3;
        let (_, report) = train_rdi::<f64>(&windows, None, &config).unwrap();
        let last = *report.train_loss.last().unwrap();
        assert!(last < 1e-4, "train loss {last} did not approach 0");
        assert_eq!(report.train_loss.len(), 200);
    }

    #[test]
    fn training_is_deterministic() {
        let windows = random_windows(10, 5, 2, 31, 0.2);
        let config = tiny_config(ModelKind::Gru, 2, 3, 0.005, 13);
        let (a, ra) = train_rdi::<f64>(&windows, None, &config).unwrap();
        let (b, rb) = train_rdi::<f64>(&windows, None, &config).unwrap();
        for (ma, mb) in a.members.iter().zip(&b.members) {
            for (ta, tb) in ma.tensors().iter().zip(mb.tensors()) {
                assert_eq!(ta.data(), tb.data(), "same seed produced different parameters");
            }
        }
        assert_eq!(ra.train_loss, rb.train_loss);
    }

    /// Training member k alone (N=1 at seed base+k) replays exactly the
    /// parameters it gets inside the larger ensemble.
    #[test]
    fn members_train_independently() {
        let windows = random_windows(10, 5, 2, 33, 0.2);
        let pair = tiny_config(ModelKind::Gru, 2, 3, 0.005, 40);
        let (both, _) = train_rdi::<f64>(&windows, None, &pair).unwrap();
        let solo_config = tiny_config(ModelKind::Gru, 1, 3, 0.005, rng::member_seed(40, 1));
        let (solo, _) = train_rdi::<f64>(&windows, None, &solo_config).unwrap();
        for (ta, tb) in both.members[1].tensors().iter().zip(solo.members[0].tensors()) {
            assert_eq!(ta.data(), tb.data(), "member 1 was influenced by member 0");
        }
        for (pa, pb) in both.plans[1].iter().zip(&solo.plans[0]) {
            assert_eq!(pa.visible, pb.visible);
        }
    }

    #[test]
    fn train_loss_trends_down() {
        let windows = random_windows(12, 6, 2, 51, 0.25);
        let config = tiny_config(ModelKind::Gru, 1, 40, 0.01, 3);
        let (_, report) = train_rdi::<f64>(&windows, None, &config).unwrap();
        let quarter = report.train_loss.len() / 4;
        let median = |xs: &[f64]| {
            let mut v = xs.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        let early = median(&report.train_loss[..quarter]);
        let late = median(&report.train_loss[report.train_loss.len() - quarter..]);
        assert!(late < early, "loss did not improve: early {early}, late {late}");
    }

    #[test]
    fn reconstruction_training_runs_without_plans() {
        let windows = random_windows(8, 5, 2, 61, 0.3);
        let config = tiny_config(ModelKind::Linear, 1, 5, 0.01, 17);
        let (state, report) = train_reconstruction::<f64>(&windows, None, &config).unwrap();
        assert!(state.plans.iter().all(|p| p.is_empty()));
        assert_eq!(report.train_loss.len(), 5);
    }

    #[test]
    fn validation_is_recorded_and_best_kept() {
        let windows = random_windows(12, 6, 2, 71, 0.25);
        let ds = crate::data::Dataset {
            windows: windows.clone(),
            columns: vec!["a".into(), "b".into()],
            stats: None,
        };
        let eval = crate::data::inject_missing(&ds, 20.0, 5).unwrap();
        let mut config = tiny_config(ModelKind::Gru, 1, 12, 0.01, 19);
        config.val_every = 4;
        config.keep_best = true;
        let (_, report) = train_rdi::<f64>(&windows, Some(&eval), &config).unwrap();
        assert_eq!(report.val_mse.len(), 3);
        assert!(report.val_mse.iter().all(|&(_, mse)| mse.is_finite() && mse >= 0.0));
        let epochs: Vec<usize> = report.val_mse.iter().map(|&(e, _)| e).collect();
        assert_eq!(epochs, vec![3, 7, 11]);
    }

    #[test]
    fn evaluate_scores_holdout_cells_only() {
        // A member that predicts exactly the truth everywhere gives 0.
        let mut w = LinearParams::<f64>::zeros(1);
        w.b[(0, 0)] = 2.0;
        let state = linear_state(vec![w]);
        let truth = Tensor::filled(3, 1, 2.0);
        let mask = Mask::from_fn(3, 1, |t, _| t != 1);
        let mut values = truth.clone();
        values[(1, 0)] = 0.0;
        let eval = EvalSet {
            windows: vec![crate::data::EvalWindow {
                values,
                mask,
                holdout: Mask::from_fn(3, 1, |t, _| t == 1),
                truth,
            }],
            p: 33.0,
            seed: 0,
            stats: None,
        };
        assert!(evaluate(&state, &eval).unwrap() < 1e-28);
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for breaker in [
            |c: &mut TrainConfig| c.n_members = 0,
            |c: &mut TrainConfig| c.drop_rate = 0.0,
            |c: &mut TrainConfig| c.drop_rate = 1.0,
            |c: &mut TrainConfig| c.epochs = 0,
            |c: &mut TrainConfig| c.batch_size = 0,
            |c: &mut TrainConfig| c.lr = 0.0,
            |c: &mut TrainConfig| c.hidden = 0,
            |c: &mut TrainConfig| c.update_epoch = 0,
            |c: &mut TrainConfig| c.sigma_threshold = f64::NAN,
        ] {
            let mut bad = TrainConfig::default();
            breaker(&mut bad);
            assert!(bad.validate().is_err());
        }
        let mut linear = TrainConfig { model: ModelKind::Linear, hidden: 0, ..Default::default() };
        assert!(linear.validate().is_ok());
        linear.update_epoch = 0;
        assert!(linear.validate().is_err());
    }
}
