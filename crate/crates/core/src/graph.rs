//! Tape-based reverse-mode autodiff over 2-D tensors.
//!
//! A `Graph` is rebuilt for every batch: forward values are computed
//! eagerly as nodes are pushed, `backward` walks the tape in reverse,
//! and `reset` recycles every buffer into an internal pool so steady
//! state training does no allocation.

use std::collections::HashMap;

use crate::error::{contract, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_acc, matmul_at_b_acc, matmul_at_b_set, matmul_set, transposed, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy)]
enum Op<S> {
    Leaf,
    Const,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Row-broadcast add of a 1xC bias onto a BxC matrix. The only
    /// broadcast in the graph; gradient of the bias is a column sum.
    AddBias(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Scale(NodeId, S),
    /// Sum of squared elements, reduced to a 1x1 tensor.
    SumSq(NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
}

struct Pool<S> {
    free: HashMap<usize, Vec<Vec<S>>>,
}

impl<S: Scalar> Pool<S> {
    fn new() -> Self {
        Pool { free: HashMap::new() }
    }

    /// Returns a buffer of exactly `len` elements with stale contents.
    fn take(&mut self, len: usize) -> Vec<S> {
        match self.free.get_mut(&len).and_then(Vec::pop) {
            Some(buf) => buf,
            None => vec![S::zero(); len],
        }
    }

    fn put(&mut self, buf: Vec<S>) {
        self.free.entry(buf.len()).or_default().push(buf);
    }
}

pub struct Graph<S: Scalar> {
    values: Vec<Tensor<S>>,
    grads: Vec<Option<Tensor<S>>>,
    ops: Vec<Op<S>>,
    needs: Vec<bool>,
    pool: Pool<S>,
    backward_ran: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            grads: Vec::new(),
            ops: Vec::new(),
            needs: Vec::new(),
            pool: Pool::new(),
            backward_ran: false,
        }
    }

    /// Pooled zeroed tensor for callers assembling constant inputs.
    pub fn alloc(&mut self, rows: usize, cols: usize) -> Tensor<S> {
        let mut buf = self.pool.take(rows * cols);
        buf.fill(S::zero());
        Tensor::from_vec(rows, cols, buf).expect("pool buffer length")
    }

    /// Pooled tensor with stale contents, for callers that overwrite
    /// every element before use.
    pub fn fresh(&mut self, rows: usize, cols: usize) -> Tensor<S> {
        let buf = self.pool.take(rows * cols);
        Tensor::from_vec(rows, cols, buf).expect("pool buffer length")
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs: bool) -> NodeId {
        self.values.push(value);
        self.grads.push(None);
        self.ops.push(op);
        self.needs.push(needs);
        NodeId(self.values.len() - 1)
    }

    /// Trainable parameter; its value is copied in and its gradient
    /// survives `backward` for the optimizer to read.
    pub fn leaf(&mut self, t: &Tensor<S>) -> NodeId {
        let mut value = self.fresh(t.rows(), t.cols());
        value.data_mut().copy_from_slice(t.data());
        self.push(value, Op::Leaf, true)
    }

    /// Input the tape does not differentiate through.
    pub fn constant(&mut self, t: Tensor<S>) -> NodeId {
        self.push(t, Op::Const, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads[id.0].as_ref()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.values[a.0].shape();
        let (br, bc) = self.values[b.0].shape();
        contract!(ac == br, "matmul {ar}x{ac} @ {br}x{bc}");
        let mut out = self.fresh(ar, bc);
        matmul_set(&self.values[a.0], &self.values[b.0], &mut out);
        let needs = self.needs[a.0] || self.needs[b.0];
        Ok(self.push(out, Op::Matmul(a, b), needs))
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op<S>,
        f: impl Fn(S, S) -> S,
        name: &str,
    ) -> Result<NodeId> {
        let sa = self.values[a.0].shape();
        let sb = self.values[b.0].shape();
        contract!(sa == sb, "{name} shape mismatch: {sa:?} vs {sb:?}");
        let mut out = self.fresh(sa.0, sa.1);
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        for ((o, &x), &y) in out.data_mut().iter_mut().zip(va.data()).zip(vb.data()) {
            *o = f(x, y);
        }
        let needs = self.needs[a.0] || self.needs[b.0];
        Ok(self.push(out, op, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y, "mul")
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.values[x.0].shape();
        let bs = self.values[bias.0].shape();
        contract!(bs == (1, cols), "bias must be 1x{cols}, got {bs:?}");
        let mut out = self.fresh(rows, cols);
        let (vx, vb) = (&self.values[x.0], &self.values[bias.0]);
        for r in 0..rows {
            let x_row = vx.row(r);
            for ((o, &xv), &bv) in out.row_mut(r).iter_mut().zip(x_row).zip(vb.data()) {
                *o = xv + bv;
            }
        }
        let needs = self.needs[x.0] || self.needs[bias.0];
        Ok(self.push(out, Op::AddBias(x, bias), needs))
    }

    fn unary(&mut self, a: NodeId, op: Op<S>, f: impl Fn(S) -> S) -> NodeId {
        let (rows, cols) = self.values[a.0].shape();
        let mut out = self.fresh(rows, cols);
        for (o, &x) in out.data_mut().iter_mut().zip(self.values[a.0].data()) {
            *o = f(x);
        }
        let needs = self.needs[a.0];
        self.push(out, op, needs)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), Scalar::sigmoid_act)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), Scalar::tanh_act)
    }

    pub fn scale(&mut self, a: NodeId, c: S) -> NodeId {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn sum_sq(&mut self, a: NodeId) -> NodeId {
        let total: S = self.values[a.0].data().iter().map(|&x| x * x).sum();
        let mut out = self.fresh(1, 1);
        out.data_mut()[0] = total;
        let needs = self.needs[a.0];
        self.push(out, Op::SumSq(a), needs)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.values[a.0].shape();
        let (br, bc) = self.values[b.0].shape();
        contract!(ar == br, "concat_cols row mismatch: {ar} vs {br}");
        let mut out = self.fresh(ar, ac + bc);
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        for r in 0..ar {
            out.row_mut(r)[..ac].copy_from_slice(va.row(r));
            out.row_mut(r)[ac..].copy_from_slice(vb.row(r));
        }
        let needs = self.needs[a.0] || self.needs[b.0];
        Ok(self.push(out, Op::ConcatCols(a, b), needs))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (rows, cols) = self.values[a.0].shape();
        contract!(start + len <= cols, "slice_cols {start}..{} out of {cols}", start + len);
        let mut out = self.fresh(rows, len);
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(&self.values[a.0].row(r)[start..start + len]);
        }
        let needs = self.needs[a.0];
        Ok(self.push(out, Op::SliceCols(a, start, len), needs))
    }

    /// Accumulates dloss/dnode into every leaf reachable from `loss`,
    /// which must be 1x1. One backward per graph build.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        contract!(!self.backward_ran, "backward already ran; reset the graph first");
        let shape = self.values[loss.0].shape();
        contract!(shape == (1, 1), "backward needs a 1x1 loss, got {shape:?}");
        self.backward_ran = true;
        if !self.needs[loss.0] {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::filled(1, 1, S::one()));
        // Weight operands recur across the unrolled steps, so their
        // transposes are built once per backward and shared.
        let mut tcache: HashMap<usize, Tensor<S>> = HashMap::new();

        for idx in (0..=loss.0).rev() {
            if !self.needs[idx] {
                continue;
            }
            let Some(go) = self.grads[idx].take() else { continue };
            let op = self.ops[idx];
            if matches!(op, Op::Leaf) {
                self.grads[idx] = Some(go);
                continue;
            }
            // Arms below that end in `donate` hand the dead `go` buffer
            // itself to the input on first touch instead of copying it;
            // every other arm falls through to the pool return.
            match op {
                Op::Leaf | Op::Const => unreachable!("handled above / needs[..] is false"),
                Op::Matmul(a, b) => {
                    if self.needs[a.0] {
                        let tb = tcache
                            .entry(b.0)
                            .or_insert_with(|| transposed(&self.values[b.0]));
                        let (ga, fresh) =
                            ensure(&mut self.grads, &mut self.pool, &self.values, a.0);
                        if fresh {
                            matmul_set(&go, tb, ga);
                        } else {
                            matmul_acc(&go, tb, ga);
                        }
                    }
                    if self.needs[b.0] {
                        let (gb, fresh) =
                            ensure(&mut self.grads, &mut self.pool, &self.values, b.0);
                        if fresh {
                            matmul_at_b_set(&self.values[a.0], &go, gb);
                        } else {
                            matmul_at_b_acc(&self.values[a.0], &go, gb);
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.needs[a.0] && self.needs[b.0] {
                        let (gb, fresh) =
                            ensure(&mut self.grads, &mut self.pool, &self.values, b.0);
                        if fresh {
                            gb.data_mut().copy_from_slice(go.data());
                        } else {
                            for (gv, &ov) in gb.data_mut().iter_mut().zip(go.data()) {
                                *gv += ov;
                            }
                        }
                    }
                    let id = if self.needs[a.0] { a.0 } else { b.0 };
                    donate(&mut self.grads, &mut self.pool, id, go);
                    continue;
                }
                Op::Sub(a, b) => {
                    if self.needs[b.0] {
                        let (gb, fresh) =
                            ensure(&mut self.grads, &mut self.pool, &self.values, b.0);
                        if fresh {
                            for (gv, &ov) in gb.data_mut().iter_mut().zip(go.data()) {
                                *gv = -ov;
                            }
                        } else {
                            for (gv, &ov) in gb.data_mut().iter_mut().zip(go.data()) {
                                *gv -= ov;
                            }
                        }
                    }
                    if self.needs[a.0] {
                        donate(&mut self.grads, &mut self.pool, a.0, go);
                        continue;
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs[b.0] {
                        let (gb, fresh) =
                            ensure(&mut self.grads, &mut self.pool, &self.values, b.0);
                        let va = self.values[a.0].data();
                        if fresh {
                            for ((gv, &ov), &av) in
                                gb.data_mut().iter_mut().zip(go.data()).zip(va)
                            {
                                *gv = ov * av;
                            }
                        } else {
                            for ((gv, &ov), &av) in
                                gb.data_mut().iter_mut().zip(go.data()).zip(va)
                            {
                                *gv = ov.mul_add(av, *gv);
                            }
                        }
                    }
                    if self.needs[a.0] {
                        if self.grads[a.0].is_none() {
                            let mut ga = go;
                            let vb = self.values[b.0].data();
                            for (gv, &bv) in ga.data_mut().iter_mut().zip(vb) {
                                *gv = *gv * bv;
                            }
                            self.grads[a.0] = Some(ga);
                            continue;
                        }
                        let (ga, _) = ensure(&mut self.grads, &mut self.pool, &self.values, a.0);
                        for ((gv, &ov), &bv) in
                            ga.data_mut().iter_mut().zip(go.data()).zip(self.values[b.0].data())
                        {
                            *gv = ov.mul_add(bv, *gv);
                        }
                    }
                }
                Op::AddBias(x, bias) => {
                    if self.needs[bias.0] {
                        let (gb, fresh) =
                            ensure(&mut self.grads, &mut self.pool, &self.values, bias.0);
                        let mut from = 0;
                        if fresh {
                            gb.data_mut().copy_from_slice(go.row(0));
                            from = 1;
                        }
                        for r in from..go.rows() {
                            for (gv, &ov) in gb.data_mut().iter_mut().zip(go.row(r)) {
                                *gv += ov;
                            }
                        }
                    }
                    if self.needs[x.0] {
                        donate(&mut self.grads, &mut self.pool, x.0, go);
                        continue;
                    }
                }
                Op::Sigmoid(a) => {
                    if self.needs[a.0] {
                        if self.grads[a.0].is_none() {
                            let mut ga = go;
                            let s = self.values[idx].data();
                            for (gv, &sv) in ga.data_mut().iter_mut().zip(s) {
                                *gv = *gv * sv * (S::one() - sv);
                            }
                            self.grads[a.0] = Some(ga);
                            continue;
                        }
                        let s = &self.values[idx];
                        let (ga, _) = ensure(&mut self.grads, &mut self.pool, &self.values, a.0);
                        for ((gv, &ov), &sv) in
                            ga.data_mut().iter_mut().zip(go.data()).zip(s.data())
                        {
                            *gv += ov * sv * (S::one() - sv);
                        }
                    }
                }
                Op::Tanh(a) => {
                    if self.needs[a.0] {
                        if self.grads[a.0].is_none() {
                            let mut ga = go;
                            let th = self.values[idx].data();
                            for (gv, &tv) in ga.data_mut().iter_mut().zip(th) {
                                *gv = *gv * (S::one() - tv * tv);
                            }
                            self.grads[a.0] = Some(ga);
                            continue;
                        }
                        let th = &self.values[idx];
                        let (ga, _) = ensure(&mut self.grads, &mut self.pool, &self.values, a.0);
                        for ((gv, &ov), &tv) in
                            ga.data_mut().iter_mut().zip(go.data()).zip(th.data())
                        {
                            *gv += ov * (S::one() - tv * tv);
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if self.needs[a.0] {
                        if self.grads[a.0].is_none() {
                            let mut ga = go;
                            for gv in ga.data_mut().iter_mut() {
                                *gv = c * *gv;
                            }
                            self.grads[a.0] = Some(ga);
                            continue;
                        }
                        let (ga, _) = ensure(&mut self.grads, &mut self.pool, &self.values, a.0);
                        for (gv, &ov) in ga.data_mut().iter_mut().zip(go.data()) {
                            *gv = c.mul_add(ov, *gv);
                        }
                    }
                }
                Op::SumSq(a) => {
                    if self.needs[a.0] {
                        let seed = S::TWO * go.data()[0];
                        let va = &self.values[a.0];
                        let (ga, fresh) =
                            ensure(&mut self.grads, &mut self.pool, &self.values, a.0);
                        if fresh {
                            for (gv, &av) in ga.data_mut().iter_mut().zip(va.data()) {
                                *gv = seed * av;
                            }
                        } else {
                            for (gv, &av) in ga.data_mut().iter_mut().zip(va.data()) {
                                *gv = seed.mul_add(av, *gv);
                            }
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ac = self.values[a.0].cols();
                    if self.needs[a.0] {
                        let (ga, fresh) =
                            ensure(&mut self.grads, &mut self.pool, &self.values, a.0);
                        for r in 0..go.rows() {
                            let src = &go.row(r)[..ac];
                            if fresh {
                                ga.row_mut(r).copy_from_slice(src);
                            } else {
                                for (gv, &ov) in ga.row_mut(r).iter_mut().zip(src) {
                                    *gv += ov;
                                }
                            }
                        }
                    }
                    if self.needs[b.0] {
                        let (gb, fresh) =
                            ensure(&mut self.grads, &mut self.pool, &self.values, b.0);
                        for r in 0..go.rows() {
                            let src = &go.row(r)[ac..];
                            if fresh {
                                gb.row_mut(r).copy_from_slice(src);
                            } else {
                                for (gv, &ov) in gb.row_mut(r).iter_mut().zip(src) {
                                    *gv += ov;
                                }
                            }
                        }
                    }
                }
                Op::SliceCols(a, start, len) => {
                    if self.needs[a.0] {
                        let (ga, fresh) =
                            ensure(&mut self.grads, &mut self.pool, &self.values, a.0);
                        if fresh {
                            // The slice covers only part of the source, so
                            // the first touch zeroes the uncovered columns.
                            for r in 0..go.rows() {
                                let row = ga.row_mut(r);
                                row[..start].fill(S::zero());
                                row[start..start + len].copy_from_slice(go.row(r));
                                row[start + len..].fill(S::zero());
                            }
                        } else {
                            for r in 0..go.rows() {
                                let dst = &mut ga.row_mut(r)[start..start + len];
                                for (gv, &ov) in dst.iter_mut().zip(go.row(r)) {
                                    *gv += ov;
                                }
                            }
                        }
                    }
                }
            }
            // Intermediate gradients are dead once their node is processed.
            self.pool.put(go.into_data());
        }
        for (_, t) in tcache.drain() {
            self.pool.put(t.into_data());
        }
        Ok(())
    }

    /// Clears the tape and recycles every buffer for the next batch.
    pub fn reset(&mut self) {
        for t in self.values.drain(..) {
            self.pool.put(t.into_data());
        }
        for g in self.grads.drain(..).flatten() {
            self.pool.put(g.into_data());
        }
        self.ops.clear();
        self.needs.clear();
        self.backward_ran = false;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Folds `go` into the gradient of `id`, keeping the buffer itself as
/// the gradient when this is the first contribution.
fn donate<S: Scalar>(
    grads: &mut [Option<Tensor<S>>],
    pool: &mut Pool<S>,
    id: usize,
    go: Tensor<S>,
) {
    match &mut grads[id] {
        Some(g) => {
            for (gv, &ov) in g.data_mut().iter_mut().zip(go.data()) {
                *gv += ov;
            }
            pool.put(go.into_data());
        }
        slot => *slot = Some(go),
    }
}

/// Hands out the gradient buffer for `id`. A first touch comes from the
/// pool with stale contents and `true`: the caller must overwrite it.
fn ensure<'g, S: Scalar>(
    grads: &'g mut [Option<Tensor<S>>],
    pool: &mut Pool<S>,
    values: &[Tensor<S>],
    id: usize,
) -> (&'g mut Tensor<S>, bool) {
    let fresh = grads[id].is_none();
    if fresh {
        let (rows, cols) = values[id].shape();
        let buf = pool.take(rows * cols);
        grads[id] = Some(Tensor::from_vec(rows, cols, buf).expect("pool buffer length"));
    }
    (grads[id].as_mut().expect("just ensured"), fresh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn forward_matmul() {
        let mut g = Graph::new();
        let a = g.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = g.constant(t(&[vec![1.0], vec![1.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut g = Graph::new();
        let p = g.leaf(&t(&[vec![1.0, 2.0]]));
        let loss = g.sum_sq(p);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(p).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_product_rule() {
        let mut g = Graph::new();
        let a = g.leaf(&t(&[vec![1.0, 2.0]]));
        let b = g.leaf(&t(&[vec![3.0, 4.0]]));
        let c = g.mul(a, b).unwrap();
        let loss = g.sum_sq(c);
        g.backward(loss).unwrap();
        // d/da sum((ab)^2) = 2ab^2, d/db = 2a^2 b
        assert_eq!(g.grad(a).unwrap().data(), &[18.0, 64.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[6.0, 32.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::<f64>::new();
        let p = g.leaf(&t(&[vec![1.0, 2.0]]));
        assert!(g.backward(p).is_err());
    }

    #[test]
    fn backward_runs_once_per_build() {
        let mut g = Graph::new();
        let p = g.leaf(&t(&[vec![1.0]]));
        let loss = g.sum_sq(p);
        g.backward(loss).unwrap();
        assert!(g.backward(loss).is_err());
        g.reset();
        assert!(g.is_empty());
        let p = g.leaf(&t(&[vec![3.0]]));
        let loss = g.sum_sq(p);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(p).unwrap().data(), &[6.0]);
    }

    #[test]
    fn shape_mismatches_are_contract_errors() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[vec![1.0, 2.0]]));
        let b = g.constant(t(&[vec![1.0]]));
        assert!(g.add(a, b).is_err());
        assert!(g.matmul(b, a).is_ok());
        assert!(g.matmul(a, a).is_err());
        assert!(g.add_bias(a, b).is_err());
        assert!(g.slice_cols(a, 1, 2).is_err());
    }

    #[test]
    fn constant_only_loss_has_no_gradients() {
        let mut g = Graph::new();
        let a = g.constant(t(&[vec![1.0, 2.0]]));
        let loss = g.sum_sq(a);
        g.backward(loss).unwrap();
        assert!(g.grad(a).is_none());
    }

    /// Finite differences over an expression that exercises every op.
    #[test]
    fn finite_difference_agreement() {
        let w0 = t(&[vec![0.3, -0.2, 0.5], vec![0.1, 0.4, -0.6]]);
        let b0 = t(&[vec![0.05, -0.1, 0.2]]);

        let eval = |w: &Tensor<f64>, b: &Tensor<f64>| -> (f64, Tensor<f64>, Tensor<f64>) {
            let mut g = Graph::new();
            let x = g.constant(t(&[vec![1.0, -0.5], vec![0.25, 2.0]]));
            let w_id = g.leaf(w);
            let b_id = g.leaf(b);
            let xw = g.matmul(x, w_id).unwrap();
            let pre = g.add_bias(xw, b_id).unwrap();
            let s = g.sigmoid(pre);
            let th = g.tanh(pre);
            let prod = g.mul(s, th).unwrap();
            let diff = g.sub(prod, s).unwrap();
            let left = g.slice_cols(diff, 0, 1).unwrap();
            let right = g.slice_cols(diff, 1, 2).unwrap();
            let cat = g.concat_cols(left, right).unwrap();
            let scaled = g.scale(cat, 0.7);
            let summed = g.add(scaled, prod).unwrap();
            let loss = g.sum_sq(summed);
            g.backward(loss).unwrap();
            (
                g.value(loss).data()[0],
                g.grad(w_id).unwrap().clone(),
                g.grad(b_id).unwrap().clone(),
            )
        };

        let (_, gw, gb) = eval(&w0, &b0);
        let h = 1e-6;
        for (tensor, grad, which) in [(&w0, &gw, 0), (&b0, &gb, 1)] {
            for i in 0..tensor.len() {
                let mut plus = tensor.clone();
                plus.data_mut()[i] += h;
                let mut minus = tensor.clone();
                minus.data_mut()[i] -= h;
                let (lp, lm) = if which == 0 {
                    (eval(&plus, &b0).0, eval(&minus, &b0).0)
                } else {
                    (eval(&w0, &plus).0, eval(&w0, &minus).0)
                };
                let fd = (lp - lm) / (2.0 * h);
                let an = grad.data()[i];
                assert!(
                    (fd - an).abs() <= 1e-6 * fd.abs().max(an.abs()).max(1.0),
                    "coord {i} of tensor {which}: fd={fd}, analytic={an}"
                );
            }
        }
    }
}
