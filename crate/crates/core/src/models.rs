//! Trainable imputers: unidirectional GRU, bidirectional GRU, and a
//! per-timestep linear map for fast tests.
//!
//! The GRUs are autoregressive: the estimate for step t is produced
//! from hidden state that has never consumed x_t (forward direction
//! uses h_{t-1}, backward uses h_{t+1}), and missing or hidden inputs
//! are replaced by the model's own running estimate. That makes the
//! estimate at t independent of x_t by construction.

use rand::Rng;

use crate::error::{contract, Result};
use crate::graph::{Graph, NodeId};
use crate::masking::Mask;
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gru,
    BiGru,
    Linear,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Gru => "gru",
            ModelKind::BiGru => "bigru",
            ModelKind::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        match s {
            "gru" => Some(ModelKind::Gru),
            "bigru" => Some(ModelKind::BiGru),
            "linear" => Some(ModelKind::Linear),
            _ => None,
        }
    }
}

/// One GRU direction plus its output head.
///
/// Gate weights are stored fused: `w_gates` columns are the [z | r | h]
/// blocks, `u_zr` columns are [z | r]. The candidate's hidden weights
/// `u_h` stay separate because they multiply r ⊙ h, not h.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<S> {
    pub w_gates: Tensor<S>, // D×3H
    pub u_zr: Tensor<S>,    // H×2H
    pub u_h: Tensor<S>,     // H×H
    pub b_gates: Tensor<S>, // 1×3H
    pub w_out: Tensor<S>,   // H×D
    pub b_out: Tensor<S>,   // 1×D
}

impl<S: Scalar> GruParams<S> {
    pub fn zeros(d: usize, h: usize) -> Self {
        GruParams {
            w_gates: Tensor::zeros(d, 3 * h),
            u_zr: Tensor::zeros(h, 2 * h),
            u_h: Tensor::zeros(h, h),
            b_gates: Tensor::zeros(1, 3 * h),
            w_out: Tensor::zeros(h, d),
            b_out: Tensor::zeros(1, d),
        }
    }

    /// Weight matrices uniform in (−1/√H, 1/√H), biases zero.
    pub fn init(d: usize, h: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (h as f64).sqrt();
        let mut p = Self::zeros(d, h);
        for w in [&mut p.w_gates, &mut p.u_zr, &mut p.u_h, &mut p.w_out] {
            fill_uniform(w, bound, rng);
        }
        p
    }

    pub fn d_in(&self) -> usize {
        self.w_gates.rows()
    }

    pub fn hidden(&self) -> usize {
        self.u_h.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiGruParams<S> {
    pub fwd: GruParams<S>,
    pub bwd: GruParams<S>,
    pub head_w: Tensor<S>, // 2H×D
    pub head_b: Tensor<S>, // 1×D
}

impl<S: Scalar> BiGruParams<S> {
    pub fn zeros(d: usize, h: usize) -> Self {
        BiGruParams {
            fwd: GruParams::zeros(d, h),
            bwd: GruParams::zeros(d, h),
            head_w: Tensor::zeros(2 * h, d),
            head_b: Tensor::zeros(1, d),
        }
    }

    pub fn init(d: usize, h: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (h as f64).sqrt();
        let mut p = Self::zeros(d, h);
        p.fwd = GruParams::init(d, h, rng);
        p.bwd = GruParams::init(d, h, rng);
        fill_uniform(&mut p.head_w, bound, rng);
        p
    }
}

/// ŷ_t = W·(m_t ⊙ x_t) + b: an affine map of the zero-filled input row.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<S> {
    pub w: Tensor<S>, // D×D
    pub b: Tensor<S>, // 1×D
}

impl<S: Scalar> LinearParams<S> {
    pub fn zeros(d: usize) -> Self {
        LinearParams { w: Tensor::zeros(d, d), b: Tensor::zeros(1, d) }
    }

    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let mut p = Self::zeros(d);
        fill_uniform(&mut p.w, bound, rng);
        p
    }
}

fn fill_uniform<S: Scalar>(t: &mut Tensor<S>, bound: f64, rng: &mut impl Rng) {
    for v in t.data_mut() {
        *v = S::from_f64(rng.random_range(-bound..bound));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams<S> {
    Gru(GruParams<S>),
    BiGru(BiGruParams<S>),
    Linear(LinearParams<S>),
}

impl<S: Scalar> ModelParams<S> {
    pub fn init(kind: ModelKind, d: usize, hidden: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, rng::tag::INIT, 0);
        match kind {
            ModelKind::Gru => ModelParams::Gru(GruParams::init(d, hidden, &mut r)),
            ModelKind::BiGru => ModelParams::BiGru(BiGruParams::init(d, hidden, &mut r)),
            ModelKind::Linear => ModelParams::Linear(LinearParams::init(d, &mut r)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Gru(_) => ModelKind::Gru,
            ModelParams::BiGru(_) => ModelKind::BiGru,
            ModelParams::Linear(_) => ModelKind::Linear,
        }
    }

    pub fn d_in(&self) -> usize {
        match self {
            ModelParams::Gru(p) => p.d_in(),
            ModelParams::BiGru(p) => p.fwd.d_in(),
            ModelParams::Linear(p) => p.w.rows(),
        }
    }

    /// Hidden width; 0 for the linear model.
    pub fn hidden(&self) -> usize {
        match self {
            ModelParams::Gru(p) => p.hidden(),
            ModelParams::BiGru(p) => p.fwd.hidden(),
            ModelParams::Linear(_) => 0,
        }
    }

    pub fn tensor_names(&self) -> Vec<&'static str> {
        match self {
            ModelParams::Gru(_) => GRU_NAMES.to_vec(),
            ModelParams::BiGru(_) => {
                let mut names: Vec<&'static str> = BIGRU_FWD_NAMES.to_vec();
                names.extend_from_slice(&BIGRU_BWD_NAMES);
                names.extend_from_slice(&["head_w", "head_b"]);
                names
            }
            ModelParams::Linear(_) => vec!["w", "b"],
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor<S>> {
        match self {
            ModelParams::Gru(p) => gru_tensors(p),
            ModelParams::BiGru(p) => {
                let mut ts = gru_tensors(&p.fwd);
                ts.extend(gru_tensors(&p.bwd));
                ts.push(&p.head_w);
                ts.push(&p.head_b);
                ts
            }
            ModelParams::Linear(p) => vec![&p.w, &p.b],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        match self {
            ModelParams::Gru(p) => gru_tensors_mut(p),
            ModelParams::BiGru(p) => {
                let mut ts = gru_tensors_mut(&mut p.fwd);
                ts.extend(gru_tensors_mut(&mut p.bwd));
                ts.push(&mut p.head_w);
                ts.push(&mut p.head_b);
                ts
            }
            ModelParams::Linear(p) => vec![&mut p.w, &mut p.b],
        }
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        match self {
            ModelParams::Gru(p) => ModelParams::Gru(cast_gru(p)),
            ModelParams::BiGru(p) => ModelParams::BiGru(BiGruParams {
                fwd: cast_gru(&p.fwd),
                bwd: cast_gru(&p.bwd),
                head_w: p.head_w.cast(),
                head_b: p.head_b.cast(),
            }),
            ModelParams::Linear(p) => {
                ModelParams::Linear(LinearParams { w: p.w.cast(), b: p.b.cast() })
            }
        }
    }
}

const GRU_NAMES: [&str; 6] = ["w_gates", "u_zr", "u_h", "b_gates", "w_out", "b_out"];
const BIGRU_FWD_NAMES: [&str; 6] =
    ["f_w_gates", "f_u_zr", "f_u_h", "f_b_gates", "f_w_out", "f_b_out"];
const BIGRU_BWD_NAMES: [&str; 6] =
    ["b_w_gates", "b_u_zr", "b_u_h", "b_b_gates", "b_w_out", "b_b_out"];

fn gru_tensors<S>(p: &GruParams<S>) -> Vec<&Tensor<S>> {
    vec![&p.w_gates, &p.u_zr, &p.u_h, &p.b_gates, &p.w_out, &p.b_out]
}

fn gru_tensors_mut<S>(p: &mut GruParams<S>) -> Vec<&mut Tensor<S>> {
    vec![
        &mut p.w_gates,
        &mut p.u_zr,
        &mut p.u_h,
        &mut p.b_gates,
        &mut p.w_out,
        &mut p.b_out,
    ]
}

fn cast_gru<S: Scalar, T: Scalar>(p: &GruParams<S>) -> GruParams<T> {
    GruParams {
        w_gates: p.w_gates.cast(),
        u_zr: p.u_zr.cast(),
        u_h: p.u_h.cast(),
        b_gates: p.b_gates.cast(),
        w_out: p.w_out.cast(),
        b_out: p.b_out.cast(),
    }
}

/// One GRU step on plain vectors; the reference the graph unroll is
/// checked against.
///
/// z = σ(W_z x + U_z h + b_z), r = σ(W_r x + U_r h + b_r),
/// h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h), h' = (1−z) ⊙ h + z ⊙ h̃.
pub fn gru_cell<S: Scalar>(x: &[S], h_prev: &[S], p: &GruParams<S>) -> Result<Vec<S>> {
    let (d, h) = (p.d_in(), p.hidden());
    contract!(x.len() == d, "x has {} features, params expect {d}", x.len());
    contract!(h_prev.len() == h, "h_prev has {} units, params expect {h}", h_prev.len());

    let mut pre: Vec<S> = p.b_gates.data().to_vec(); // [z | r | cand] pre-activations
    for (dd, &xv) in x.iter().enumerate() {
        for (acc, &w) in pre.iter_mut().zip(p.w_gates.row(dd)) {
            *acc += xv * w;
        }
    }
    for (k, &hv) in h_prev.iter().enumerate() {
        for (acc, &u) in pre[..2 * h].iter_mut().zip(p.u_zr.row(k)) {
            *acc += hv * u;
        }
    }
    let z: Vec<S> = pre[..h].iter().map(|&v| v.sigmoid_act()).collect();
    let r: Vec<S> = pre[h..2 * h].iter().map(|&v| v.sigmoid_act()).collect();
    for (k, (&rv, &hv)) in r.iter().zip(h_prev).enumerate() {
        let rh = rv * hv;
        for (acc, &u) in pre[2 * h..].iter_mut().zip(p.u_h.row(k)) {
            *acc += rh * u;
        }
    }
    Ok((0..h)
        .map(|j| {
            let cand = pre[2 * h + j].tanh_act();
            (S::one() - z[j]) * h_prev[j] + z[j] * cand
        })
        .collect())
}

// ── graph unroll ────────────────────────────────────────────────────

/// Per-step constant inputs for a batch: `mx[t]` is the B×D zero-filled
/// visible row (m ⊙ x), `hole[t]` is B×D with 1 where the model must
/// substitute its own estimate (1 − m).
pub struct StepInputs {
    pub mx: Vec<NodeId>,
    pub hole: Vec<NodeId>,
}

/// Builds `StepInputs` by gathering row t of every window into one
/// B×D constant per step.
pub fn gather_steps<S: Scalar>(
    g: &mut Graph<S>,
    mx_windows: &[&Tensor<S>],
    hole_windows: &[&Tensor<S>],
) -> Result<StepInputs> {
    contract!(!mx_windows.is_empty(), "empty batch");
    contract!(mx_windows.len() == hole_windows.len(), "mx/hole window counts differ");
    let shape = mx_windows[0].shape();
    contract!(shape.0 > 0, "zero-length windows");
    for w in mx_windows.iter().chain(hole_windows.iter()) {
        contract!(w.shape() == shape, "window shapes differ: {:?} vs {shape:?}", w.shape());
    }
    let (t_len, d) = shape;
    let b = mx_windows.len();
    let mut mx = Vec::with_capacity(t_len);
    let mut hole = Vec::with_capacity(t_len);
    for t in 0..t_len {
        for (source, out) in [(mx_windows, &mut mx), (hole_windows, &mut hole)] {
            let mut step = g.fresh(b, d);
            for (bi, w) in source.iter().enumerate() {
                step.row_mut(bi).copy_from_slice(w.row(t));
            }
            out.push(g.constant(step));
        }
    }
    Ok(StepInputs { mx, hole })
}

/// Splits a series into the (m ⊙ x, 1 − m) pair `gather_steps` consumes.
pub fn fill_inputs<S: Scalar>(series: &Tensor<f64>, visible: &Mask) -> (Tensor<S>, Tensor<S>) {
    let (rows, cols) = series.shape();
    let mut mx = Tensor::zeros(rows, cols);
    let mut hole = Tensor::zeros(rows, cols);
    for i in 0..rows * cols {
        let m = visible.tensor().data()[i];
        mx.data_mut()[i] = S::from_f64(series.data()[i] * m);
        hole.data_mut()[i] = S::from_f64(1.0 - m);
    }
    (mx, hole)
}

/// A built model graph: `preds[t]` is the B×D estimate for step t, and
/// `leaves` aligns with `ModelParams::tensors()` (empty when the model
/// was unrolled as constants).
pub struct Unrolled {
    pub preds: Vec<NodeId>,
    pub leaves: Vec<NodeId>,
}

struct GruIds {
    w_gates: NodeId,
    u_zr: NodeId,
    u_h: NodeId,
    b_gates: NodeId,
    w_out: NodeId,
    b_out: NodeId,
}

impl<S: Scalar> ModelParams<S> {
    /// Unrolls the model over the batch. `trainable` decides whether
    /// parameters enter as leaves (gradients kept) or constants.
    pub fn unroll(
        &self,
        g: &mut Graph<S>,
        inputs: &StepInputs,
        trainable: bool,
    ) -> Result<Unrolled> {
        contract!(!inputs.mx.is_empty(), "zero-length unroll");
        contract!(inputs.mx.len() == inputs.hole.len(), "mx/hole step counts differ");
        let (batch, d) = g.value(inputs.mx[0]).shape();
        contract!(d == self.d_in(), "input has {d} features, model expects {}", self.d_in());

        let push = |g: &mut Graph<S>, t: &Tensor<S>| -> NodeId {
            if trainable {
                g.leaf(t)
            } else {
                g.constant(t.clone())
            }
        };

        match self {
            ModelParams::Gru(p) => {
                let ids = push_gru(g, p, &push);
                let h = p.hidden();
                let (_, preds) = unroll_direction(g, &ids, h, batch, &inputs.mx, &inputs.hole)?;
                let leaves = gru_leaf_list(&ids);
                Ok(Unrolled { preds, leaves: if trainable { leaves } else { vec![] } })
            }
            ModelParams::BiGru(p) => {
                let h = p.fwd.hidden();
                let f_ids = push_gru(g, &p.fwd, &push);
                let b_ids = push_gru(g, &p.bwd, &push);
                let head_w = push(g, &p.head_w);
                let head_b = push(g, &p.head_b);

                let (hf, _) = unroll_direction(g, &f_ids, h, batch, &inputs.mx, &inputs.hole)?;
                let t_len = inputs.mx.len();
                let mx_rev: Vec<NodeId> = inputs.mx.iter().rev().copied().collect();
                let hole_rev: Vec<NodeId> = inputs.hole.iter().rev().copied().collect();
                let (hb_rev, _) = unroll_direction(g, &b_ids, h, batch, &mx_rev, &hole_rev)?;

                // hf[t] never consumed x_t; hb_rev[T−1−t] never consumed x_t.
                let mut preds = Vec::with_capacity(t_len);
                for t in 0..t_len {
                    let cat = g.concat_cols(hf[t], hb_rev[t_len - 1 - t])?;
                    let proj = g.matmul(cat, head_w)?;
                    preds.push(g.add_bias(proj, head_b)?);
                }
                let mut leaves = gru_leaf_list(&f_ids);
                leaves.extend(gru_leaf_list(&b_ids));
                leaves.push(head_w);
                leaves.push(head_b);
                Ok(Unrolled { preds, leaves: if trainable { leaves } else { vec![] } })
            }
            ModelParams::Linear(p) => {
                let w = push(g, &p.w);
                let b = push(g, &p.b);
                let mut preds = Vec::with_capacity(inputs.mx.len());
                for &mx_t in &inputs.mx {
                    let proj = g.matmul(mx_t, w)?;
                    preds.push(g.add_bias(proj, b)?);
                }
                Ok(Unrolled { preds, leaves: if trainable { vec![w, b] } else { vec![] } })
            }
        }
    }
}

fn push_gru<S: Scalar>(
    g: &mut Graph<S>,
    p: &GruParams<S>,
    push: &impl Fn(&mut Graph<S>, &Tensor<S>) -> NodeId,
) -> GruIds {
    GruIds {
        w_gates: push(g, &p.w_gates),
        u_zr: push(g, &p.u_zr),
        u_h: push(g, &p.u_h),
        b_gates: push(g, &p.b_gates),
        w_out: push(g, &p.w_out),
        b_out: push(g, &p.b_out),
    }
}

fn gru_leaf_list(ids: &GruIds) -> Vec<NodeId> {
    vec![ids.w_gates, ids.u_zr, ids.u_h, ids.b_gates, ids.w_out, ids.b_out]
}

/// Unrolls one direction over the inputs in processing order.
///
/// Returns per-step (h_prev, ŷ) where h_prev is the state before the
/// step's input is consumed and ŷ = W_out h_prev + b_out is the
/// direction's own estimate, both of which therefore predate x_t.
fn unroll_direction<S: Scalar>(
    g: &mut Graph<S>,
    ids: &GruIds,
    hidden: usize,
    batch: usize,
    mx: &[NodeId],
    hole: &[NodeId],
) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
    let h = hidden;
    let zeros = g.alloc(batch, h);
    let mut h_prev = g.constant(zeros);
    let mut ones_t = g.alloc(batch, h);
    ones_t.fill(S::one());
    let ones = g.constant(ones_t);

    let mut h_prevs = Vec::with_capacity(mx.len());
    let mut preds = Vec::with_capacity(mx.len());
    for (&mx_t, &hole_t) in mx.iter().zip(hole) {
        h_prevs.push(h_prev);
        // Estimate first, from state that has not seen this step.
        let proj = g.matmul(h_prev, ids.w_out)?;
        let pred = g.add_bias(proj, ids.b_out)?;
        preds.push(pred);

        // Cell input: observed values, own estimate at the holes.
        let filled = g.mul(hole_t, pred)?;
        let u = g.add(mx_t, filled)?;

        let xw = g.matmul(u, ids.w_gates)?;
        let gates = g.add_bias(xw, ids.b_gates)?;
        let p_zr = g.matmul(h_prev, ids.u_zr)?;

        let gz = g.slice_cols(gates, 0, h)?;
        let pz = g.slice_cols(p_zr, 0, h)?;
        let z_pre = g.add(gz, pz)?;
        let z = g.sigmoid(z_pre);

        let gr = g.slice_cols(gates, h, h)?;
        let pr = g.slice_cols(p_zr, h, h)?;
        let r_pre = g.add(gr, pr)?;
        let r = g.sigmoid(r_pre);

        let rh = g.mul(r, h_prev)?;
        let rh_u = g.matmul(rh, ids.u_h)?;
        let gh = g.slice_cols(gates, 2 * h, h)?;
        let cand_pre = g.add(gh, rh_u)?;
        let cand = g.tanh(cand_pre);

        let keep = g.sub(ones, z)?;
        let kept = g.mul(keep, h_prev)?;
        let updated = g.mul(z, cand)?;
        h_prev = g.add(kept, updated)?;
    }
    Ok((h_prevs, preds))
}

// ── single-series inference ─────────────────────────────────────────

fn forward_any<S: Scalar>(
    params: &ModelParams<S>,
    series: &Tensor<f64>,
    mask: &Mask,
) -> Result<Tensor<f64>> {
    contract!(
        series.shape() == mask.shape(),
        "series {:?} vs mask {:?}",
        series.shape(),
        mask.shape()
    );
    contract!(series.rows() > 0, "empty series");
    let (mx, hole) = fill_inputs::<S>(series, mask);
    let mut g = Graph::new();
    let inputs = gather_steps(&mut g, &[&mx], &[&hole])?;
    let unrolled = params.unroll(&mut g, &inputs, false)?;
    let mut out = Tensor::zeros(series.rows(), series.cols());
    for (t, &pred) in unrolled.preds.iter().enumerate() {
        for (o, &v) in out.row_mut(t).iter_mut().zip(g.value(pred).row(0)) {
            *o = v.to_f64();
        }
    }
    Ok(out)
}

/// Estimates every cell of the series with a unidirectional GRU.
pub fn forward_uni<S: Scalar>(
    series: &Tensor<f64>,
    mask: &Mask,
    params: &GruParams<S>,
) -> Result<Tensor<f64>> {
    forward_any(&ModelParams::Gru(params.clone()), series, mask)
}

/// Estimates every cell of the series with a bidirectional GRU.
pub fn forward_bi<S: Scalar>(
    series: &Tensor<f64>,
    mask: &Mask,
    params: &BiGruParams<S>,
) -> Result<Tensor<f64>> {
    forward_any(&ModelParams::BiGru(params.clone()), series, mask)
}

/// Estimates every cell with the per-timestep linear map.
pub fn forward_linear<S: Scalar>(
    series: &Tensor<f64>,
    mask: &Mask,
    params: &LinearParams<S>,
) -> Result<Tensor<f64>> {
    forward_any(&ModelParams::Linear(params.clone()), series, mask)
}

/// Dispatching forward over any model kind.
pub fn forward<S: Scalar>(
    params: &ModelParams<S>,
    series: &Tensor<f64>,
    mask: &Mask,
) -> Result<Tensor<f64>> {
    forward_any(params, series, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_series(t: usize, d: usize, seed: u64, missing: f64) -> (Tensor<f64>, Mask) {
        let mut r = rng::stream(seed, rng::tag::SYNTH, 0);
        let mut values = Tensor::zeros(t, d);
        for v in values.data_mut() {
            *v = r.random_range(-2.0..2.0);
        }
        let mask = Mask::from_fn(t, d, |_, _| r.random::<f64>() >= missing);
        (values, mask)
    }

    #[test]
    fn gru_cell_zero_params() {
        let p = GruParams::<f64>::zeros(3, 4);
        let h = gru_cell(&[1.0, -2.0, 0.5], &[0.0; 4], &p).unwrap();
        // z = σ(0) = 0.5, h̃ = tanh(0) = 0, so h' = 0.5·0 + 0.5·0 = 0.
        assert_eq!(h, vec![0.0; 4]);
    }

    #[test]
    fn gru_cell_ignores_x_with_zero_input_weights() {
        let mut r = rng::stream(11, rng::tag::INIT, 0);
        let mut p = GruParams::<f64>::init(3, 4, &mut r);
        p.w_gates.fill(0.0);
        let h_prev: Vec<f64> = (0..4).map(|i| 0.1 * i as f64).collect();
        let a = gru_cell(&[5.0, -3.0, 2.0], &h_prev, &p).unwrap();
        let b = gru_cell(&[0.0, 0.0, 0.0], &h_prev, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gru_cell_rejects_bad_shapes() {
        let p = GruParams::<f64>::zeros(3, 4);
        assert!(gru_cell(&[1.0], &[0.0; 4], &p).is_err());
        assert!(gru_cell(&[1.0; 3], &[0.0; 5], &p).is_err());
    }

    /// The batched graph unroll must agree with a plain gru_cell loop.
    #[test]
    fn unroll_matches_cell_chain() {
        let (t_len, d, h) = (6, 3, 4);
        let mut r = rng::stream(42, rng::tag::INIT, 0);
        let p = GruParams::<f64>::init(d, h, &mut r);
        let (series, mask) = random_series(t_len, d, 7, 0.3);

        let graph_preds = forward_uni(&series, &mask, &p).unwrap();

        let mut h_state = vec![0.0f64; h];
        for t in 0..t_len {
            // ŷ_t = W_out h_{t−1} + b_out
            let mut pred: Vec<f64> = p.b_out.data().to_vec();
            for (k, &hv) in h_state.iter().enumerate() {
                for (pv, &w) in pred.iter_mut().zip(p.w_out.row(k)) {
                    *pv += hv * w;
                }
            }
            for (dd, &pv) in pred.iter().enumerate() {
                let got = graph_preds[(t, dd)];
                assert!((got - pv).abs() < 1e-12, "t={t} d={dd}: {got} vs {pv}");
            }
            let x: Vec<f64> = (0..d)
                .map(|dd| {
                    if mask.is_observed(t, dd) {
                        series[(t, dd)]
                    } else {
                        pred[dd]
                    }
                })
                .collect();
            h_state = gru_cell(&x, &h_state, &p).unwrap();
        }
    }

    #[test]
    fn uni_zero_params_predicts_zero() {
        let p = GruParams::<f64>::zeros(2, 3);
        let (series, mask) = random_series(5, 2, 1, 0.2);
        let out = forward_uni(&series, &mask, &p).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uni_estimates_are_causal() {
        let mut r = rng::stream(3, rng::tag::INIT, 0);
        let p = GruParams::<f64>::init(3, 5, &mut r);
        let (series, mask) = random_series(7, 3, 9, 0.3);
        let base = forward_uni(&series, &mask, &p).unwrap();
        let mut bumped = series.clone();
        let t_hit = 3;
        bumped[(t_hit, 1)] += 1.0;
        let out = forward_uni(&bumped, &mask, &p).unwrap();
        for t in 0..=t_hit {
            assert_eq!(out.row(t), base.row(t), "estimate at t={t} depends on x_{t_hit}");
        }
    }

    #[test]
    fn bi_zero_params_predicts_head_bias() {
        let mut p = BiGruParams::<f64>::zeros(2, 3);
        p.head_b = Tensor::from_rows(&[vec![0.7, -0.2]]).unwrap();
        let (series, mask) = random_series(4, 2, 2, 0.3);
        let out = forward_bi(&series, &mask, &p).unwrap();
        for t in 0..4 {
            assert_eq!(out.row(t), &[0.7, -0.2]);
        }
        let (one_step, one_mask) = random_series(1, 2, 5, 0.0);
        let out1 = forward_bi(&one_step, &one_mask, &p).unwrap();
        assert_eq!(out1.row(0), &[0.7, -0.2]);
    }

    #[test]
    fn bi_estimate_ignores_own_cell() {
        let mut r = rng::stream(8, rng::tag::INIT, 0);
        let p = BiGruParams::<f64>::init(3, 4, &mut r);
        let (series, mask) = random_series(8, 3, 13, 0.3);
        let base = forward_bi(&series, &mask, &p).unwrap();
        for t in [0, 3, 7] {
            let mut bumped = series.clone();
            for dd in 0..3 {
                bumped[(t, dd)] += 1.0;
            }
            let out = forward_bi(&bumped, &mask, &p).unwrap();
            assert_eq!(out.row(t), base.row(t), "ŷ_{t} changed with x_{t}");
        }
    }

    /// Zeroed backward direction reduces the bi model to a uni
    /// predictor whose head is the top block of head_w.
    #[test]
    fn bi_degenerates_without_backward_weights() {
        let (d, h) = (3, 4);
        let mut r = rng::stream(21, rng::tag::INIT, 0);
        let uni = GruParams::<f64>::init(d, h, &mut r);
        let mut bi = BiGruParams::<f64>::zeros(d, h);
        bi.fwd = uni.clone();
        for k in 0..h {
            for dd in 0..d {
                bi.head_w[(k, dd)] = uni.w_out[(k, dd)];
            }
        }
        let (series, mask) = random_series(6, d, 17, 0.4);
        let from_uni = forward_uni(&series, &mask, &uni).unwrap();
        let from_bi = forward_bi(&series, &mask, &bi).unwrap();
        for (a, b) in from_uni.data().iter().zip(from_bi.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_identity_and_zero() {
        let d = 3;
        let mut p = LinearParams::<f64>::zeros(d);
        for i in 0..d {
            p.w[(i, i)] = 1.0;
        }
        let (series, _) = random_series(4, d, 30, 0.0);
        let mask = Mask::ones(4, d);
        let out = forward_linear(&series, &mask, &p).unwrap();
        for (a, b) in out.data().iter().zip(series.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let zero = LinearParams::<f64>::zeros(d);
        let out = forward_linear(&series, &mask, &zero).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = ModelParams::<f64>::init(ModelKind::BiGru, 3, 8, 99);
        let b = ModelParams::<f64>::init(ModelKind::BiGru, 3, 8, 99);
        let c = ModelParams::<f64>::init(ModelKind::BiGru, 3, 8, 100);
        assert_eq!(a, b);
        assert_ne!(a, c);
        // Weight bound 1/√H, biases zero.
        if let ModelParams::BiGru(p) = &a {
            let bound = 1.0 / (8.0f64).sqrt();
            assert!(p.fwd.w_gates.data().iter().all(|v| v.abs() < bound));
            assert!(p.fwd.b_gates.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn f32_forward_tracks_f64() {
        let (series, mask) = random_series(6, 3, 77, 0.3);
        let p64 = ModelParams::<f64>::init(ModelKind::Gru, 3, 8, 5);
        let p32: ModelParams<f32> = p64.cast();
        let out64 = forward(&p64, &series, &mask).unwrap();
        let out32 = forward(&p32, &series, &mask).unwrap();
        for (a, b) in out64.data().iter().zip(out32.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }
}
