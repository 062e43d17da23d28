//! Dense row-major matrices and the handful of matmul kernels the
//! training loop spends its time in.

use std::ops::{Index, IndexMut};

use crate::error::{contract, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        contract!(
            data.len() == rows * cols,
            "tensor {rows}x{cols} needs {} elements, got {}",
            rows * cols,
            data.len()
        );
        Ok(Tensor { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        contract!(!rows.is_empty(), "tensor needs at least one row");
        let cols = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            contract!(row.len() == cols, "row {i} has {} columns, expected {cols}", row.len());
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            data.extend_from_slice(row);
        }
        Ok(Tensor { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, value: S) {
        self.data.fill(value);
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Converts element-wise; used to run evaluation in f64 on f32 models.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| T::from_f64(Scalar::to_f64(v))).collect(),
        }
    }
}

impl<S: Scalar> Index<(usize, usize)> for Tensor<S> {
    type Output = S;

    fn index(&self, (r, c): (usize, usize)) -> &S {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<S: Scalar> IndexMut<(usize, usize)> for Tensor<S> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut S {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

// ── matmul kernels ──────────────────────────────────────────────────
//
// Each product comes in two flavors: `_acc` adds into `out` so backward
// passes can fold gradient contributions together, `_set` overwrites so
// callers writing a fresh buffer skip zeroing it first. The ikj order
// keeps the inner loop running over contiguous rows, a CHUNK-wide slab
// of each out row rides in registers across the whole k loop, and out
// rows are tiled four at a time so every b slab loaded into registers
// feeds four fma lanes. aᵀb streams both operands untransposed with
// the same tiling; abᵀ flips b into a scratch and reuses the plain
// kernel, and b is parameter-sized in every caller, so the copy costs
// a sliver of the product.

const CHUNK: usize = 32;

/// out += a @ b
pub fn matmul_acc<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, out: &mut Tensor<S>) {
    assert_eq!(a.cols, b.rows, "matmul inner dims");
    assert_eq!((out.rows, out.cols), (a.rows, b.cols), "matmul out shape");
    blocked::<true, S>(a, b, out);
}

/// out = a @ b
pub fn matmul_set<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, out: &mut Tensor<S>) {
    assert_eq!(a.cols, b.rows, "matmul inner dims");
    assert_eq!((out.rows, out.cols), (a.rows, b.cols), "matmul out shape");
    blocked::<false, S>(a, b, out);
}

/// out += aᵀ @ b  (a: i×k, b: i×j, out: k×j)
pub fn matmul_at_b_acc<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, out: &mut Tensor<S>) {
    assert_eq!(a.rows, b.rows, "matmul_at_b inner dims");
    assert_eq!((out.rows, out.cols), (a.cols, b.cols), "matmul_at_b out shape");
    at_b::<true, S>(a, b, out);
}

/// out = aᵀ @ b  (a: i×k, b: i×j, out: k×j)
pub fn matmul_at_b_set<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, out: &mut Tensor<S>) {
    assert_eq!(a.rows, b.rows, "matmul_at_b inner dims");
    assert_eq!((out.rows, out.cols), (a.cols, b.cols), "matmul_at_b out shape");
    at_b::<false, S>(a, b, out);
}

/// out += a @ bᵀ  (a: i×k, b: j×k, out: i×j)
pub fn matmul_a_bt_acc<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, out: &mut Tensor<S>) {
    assert_eq!(a.cols, b.cols, "matmul_a_bt inner dims");
    assert_eq!((out.rows, out.cols), (a.rows, b.rows), "matmul_a_bt out shape");
    blocked::<true, S>(a, &transposed(b), out);
}

/// out = a @ bᵀ  (a: i×k, b: j×k, out: i×j)
pub fn matmul_a_bt_set<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, out: &mut Tensor<S>) {
    assert_eq!(a.cols, b.cols, "matmul_a_bt inner dims");
    assert_eq!((out.rows, out.cols), (a.rows, b.rows), "matmul_a_bt out shape");
    blocked::<false, S>(a, &transposed(b), out);
}

pub(crate) fn transposed<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    let mut data = Vec::with_capacity(t.data.len());
    for c in 0..t.cols {
        data.extend((0..t.rows).map(|r| t.data[r * t.cols + c]));
    }
    Tensor { rows: t.cols, cols: t.rows, data }
}

fn blocked<const LOAD: bool, S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, out: &mut Tensor<S>) {
    let n = b.cols;
    match n {
        1 => return narrow::<1, LOAD, S>(a, b, out),
        2 => return narrow::<2, LOAD, S>(a, b, out),
        3 => return narrow::<3, LOAD, S>(a, b, out),
        4 => return narrow::<4, LOAD, S>(a, b, out),
        5 => return narrow::<5, LOAD, S>(a, b, out),
        6 => return narrow::<6, LOAD, S>(a, b, out),
        7 => return narrow::<7, LOAD, S>(a, b, out),
        8 => return narrow::<8, LOAD, S>(a, b, out),
        _ => {}
    }
    #[cfg(target_arch = "x86_64")]
    {
        if is_f32::<S>() && avx::available() {
            // SAFETY: S was just checked to be exactly f32.
            unsafe { avx::blocked::<LOAD>(f32_ref(a), f32_ref(b), f32_mut(out)) };
            return;
        }
    }
    blocked_portable::<LOAD, S>(a, b, out)
}

fn blocked_portable<const LOAD: bool, S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, out: &mut Tensor<S>) {
    let n = b.cols;
    let whole = n - n % CHUNK;
    let mut i = 0;
    while i + 4 <= a.rows {
        let rows = [a.row(i), a.row(i + 1), a.row(i + 2), a.row(i + 3)];
        let mut j = 0;
        while j < whole {
            let mut acc = [[S::zero(); CHUNK]; 4];
            if LOAD {
                for (r, slab) in acc.iter_mut().enumerate() {
                    slab.copy_from_slice(&out.row(i + r)[j..j + CHUNK]);
                }
            }
            for k in 0..b.rows {
                let b_row = &b.row(k)[j..j + CHUNK];
                for (r, slab) in acc.iter_mut().enumerate() {
                    let aik = rows[r][k];
                    for (o, &bv) in slab.iter_mut().zip(b_row) {
                        *o = aik.mul_add(bv, *o);
                    }
                }
            }
            for (r, slab) in acc.iter().enumerate() {
                out.row_mut(i + r)[j..j + CHUNK].copy_from_slice(slab);
            }
            j += CHUNK;
        }
        if j < n {
            for (r, &a_row) in rows.iter().enumerate() {
                row_tail::<LOAD, S>(a_row, b, &mut out.row_mut(i + r)[j..], j);
            }
        }
        i += 4;
    }
    while i < a.rows {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        let mut j = 0;
        while j < whole {
            let mut acc = [S::zero(); CHUNK];
            if LOAD {
                acc.copy_from_slice(&out_row[j..j + CHUNK]);
            }
            for (k, &aik) in a_row.iter().enumerate() {
                let b_row = &b.row(k)[j..j + CHUNK];
                for (o, &bv) in acc.iter_mut().zip(b_row) {
                    *o = aik.mul_add(bv, *o);
                }
            }
            out_row[j..j + CHUNK].copy_from_slice(&acc);
            j += CHUNK;
        }
        if j < n {
            row_tail::<LOAD, S>(a_row, b, &mut out_row[j..], j);
        }
        i += 1;
    }
}

/// Sub-CHUNK column remainder of one out row, starting at column `j`.
fn row_tail<const LOAD: bool, S: Scalar>(a_row: &[S], b: &Tensor<S>, out: &mut [S], j: usize) {
    let rem = out.len();
    let mut acc = [S::zero(); CHUNK];
    if LOAD {
        acc[..rem].copy_from_slice(out);
    }
    for (k, &aik) in a_row.iter().enumerate() {
        let b_row = &b.row(k)[j..j + rem];
        for (o, &bv) in acc[..rem].iter_mut().zip(b_row) {
            *o = aik.mul_add(bv, *o);
        }
    }
    out.copy_from_slice(&acc[..rem]);
}

/// aᵀ @ b without materializing aᵀ: out rows index columns of `a`, so
/// a four-row out tile broadcasts four `a` entries per streamed b slab
/// and the summation over i runs ascending just like the plain kernel.
fn at_b<const LOAD: bool, S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, out: &mut Tensor<S>) {
    let n = b.cols;
    if n <= 8 {
        // Too few columns to fill a slab; flip the whole product into
        // (bᵀ a)ᵀ so the wide a side runs through the chunked kernel,
        // then fold the small scratch back into out.
        let mut tmp = Tensor::zeros(n, a.cols);
        blocked::<false, S>(&transposed(b), a, &mut tmp);
        for k in 0..out.rows {
            for (j, ov) in out.row_mut(k).iter_mut().enumerate() {
                let tv = tmp[(j, k)];
                *ov = if LOAD { *ov + tv } else { tv };
            }
        }
        return;
    }
    #[cfg(target_arch = "x86_64")]
    {
        if is_f32::<S>() && avx::available() {
            // SAFETY: S was just checked to be exactly f32.
            unsafe { avx::at_b::<LOAD>(f32_ref(a), f32_ref(b), f32_mut(out)) };
            return;
        }
    }
    at_b_portable::<LOAD, S>(a, b, out)
}

fn at_b_portable<const LOAD: bool, S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, out: &mut Tensor<S>) {
    let n = b.cols;
    let whole = n - n % CHUNK;
    let mut k = 0;
    while k + 4 <= out.rows {
        let mut j = 0;
        while j < whole {
            let mut acc = [[S::zero(); CHUNK]; 4];
            if LOAD {
                for (r, slab) in acc.iter_mut().enumerate() {
                    slab.copy_from_slice(&out.row(k + r)[j..j + CHUNK]);
                }
            }
            for i in 0..a.rows {
                let a_row = &a.row(i)[k..k + 4];
                let b_row = &b.row(i)[j..j + CHUNK];
                for (r, slab) in acc.iter_mut().enumerate() {
                    let aik = a_row[r];
                    for (o, &bv) in slab.iter_mut().zip(b_row) {
                        *o = aik.mul_add(bv, *o);
                    }
                }
            }
            for (r, slab) in acc.iter().enumerate() {
                out.row_mut(k + r)[j..j + CHUNK].copy_from_slice(slab);
            }
            j += CHUNK;
        }
        if j < n {
            for r in 0..4 {
                at_b_tail::<LOAD, S>(a, b, k + r, &mut out.row_mut(k + r)[j..], j);
            }
        }
        k += 4;
    }
    while k < out.rows {
        let out_row = out.row_mut(k);
        let mut j = 0;
        while j < whole {
            let mut acc = [S::zero(); CHUNK];
            if LOAD {
                acc.copy_from_slice(&out_row[j..j + CHUNK]);
            }
            for i in 0..a.rows {
                let aik = a.row(i)[k];
                let b_row = &b.row(i)[j..j + CHUNK];
                for (o, &bv) in acc.iter_mut().zip(b_row) {
                    *o = aik.mul_add(bv, *o);
                }
            }
            out_row[j..j + CHUNK].copy_from_slice(&acc);
            j += CHUNK;
        }
        if j < n {
            at_b_tail::<LOAD, S>(a, b, k, &mut out_row[j..], j);
        }
        k += 1;
    }
}

/// Sub-CHUNK column remainder of one aᵀb out row, starting at column `j`.
fn at_b_tail<const LOAD: bool, S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    k: usize,
    out: &mut [S],
    j: usize,
) {
    let rem = out.len();
    let mut acc = [S::zero(); CHUNK];
    if LOAD {
        acc[..rem].copy_from_slice(out);
    }
    for i in 0..a.rows {
        let aik = a.row(i)[k];
        let b_row = &b.row(i)[j..j + rem];
        for (o, &bv) in acc[..rem].iter_mut().zip(b_row) {
            *o = aik.mul_add(bv, *o);
        }
    }
    out.copy_from_slice(&acc[..rem]);
}

/// Fixed-width variant of `blocked` for outputs at most 8 columns
/// wide. The constant width fully unrolls the row update and four
/// k-interleaved accumulator banks hide the fma latency chain.
fn narrow<const N: usize, const LOAD: bool, S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    out: &mut Tensor<S>,
) {
    #[cfg(target_arch = "x86_64")]
    {
        if (N == 4 || N == 8) && is_f32::<S>() && avx::available() {
            // SAFETY: S was just checked to be exactly f32.
            unsafe {
                let (a, b, out) = (f32_ref(a), f32_ref(b), f32_mut(out));
                if N == 4 {
                    avx::narrow4::<LOAD>(a, b, out);
                } else {
                    avx::narrow8::<LOAD>(a, b, out);
                }
            }
            return;
        }
    }
    narrow_portable::<N, LOAD, S>(a, b, out)
}

fn narrow_portable<const N: usize, const LOAD: bool, S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    out: &mut Tensor<S>,
) {
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        let mut acc = [[S::zero(); N]; 4];
        if LOAD {
            acc[0].copy_from_slice(out_row);
        }
        let quads = a_row.len() / 4;
        for q in 0..quads {
            for lane in 0..4 {
                let k = q * 4 + lane;
                let aik = a_row[k];
                for (o, &bv) in acc[lane].iter_mut().zip(b.row(k)) {
                    *o = aik.mul_add(bv, *o);
                }
            }
        }
        for k in quads * 4..a_row.len() {
            let aik = a_row[k];
            for (o, &bv) in acc[0].iter_mut().zip(b.row(k)) {
                *o = aik.mul_add(bv, *o);
            }
        }
        for (o, out_v) in out_row.iter_mut().enumerate() {
            *out_v = (acc[0][o] + acc[1][o]) + (acc[2][o] + acc[3][o]);
        }
    }
}

#[cfg(target_arch = "x86_64")]
fn is_f32<S: Scalar>() -> bool {
    std::any::TypeId::of::<S>() == std::any::TypeId::of::<f32>()
}

/// # Safety
/// Only valid after `is_f32::<S>()` returned true.
#[cfg(target_arch = "x86_64")]
unsafe fn f32_ref<S: Scalar>(t: &Tensor<S>) -> &Tensor<f32> {
    &*(t as *const Tensor<S>).cast::<Tensor<f32>>()
}

/// # Safety
/// Only valid after `is_f32::<S>()` returned true.
#[cfg(target_arch = "x86_64")]
unsafe fn f32_mut<S: Scalar>(t: &mut Tensor<S>) -> &mut Tensor<f32> {
    &mut *(t as *mut Tensor<S>).cast::<Tensor<f32>>()
}

/// Hand-written AVX2+FMA tiles for the f32 instantiations. The generic
/// kernels above stay the reference implementation, but leaving them to
/// the auto-vectorizer made training throughput swing by 3x between
/// otherwise equivalent builds, so the hot shapes are pinned here.
/// Vector lanes only spread independent output columns; every output
/// element accumulates along the same index order as the portable code,
/// and the two paths agree bit for bit (checked in the tests below).
#[cfg(target_arch = "x86_64")]
mod avx {
    use core::arch::x86_64::*;
    use std::sync::OnceLock;

    use super::Tensor;

    pub fn available() -> bool {
        static OK: OnceLock<bool> = OnceLock::new();
        *OK.get_or_init(|| {
            std::arch::is_x86_feature_detected!("avx2")
                && std::arch::is_x86_feature_detected!("fma")
        })
    }

    /// f32 `blocked`: 4x16 register tiles over the whole columns,
    /// portable tails for the rest.
    ///
    /// # Safety
    /// Caller upholds the matmul shape contracts and AVX2+FMA support.
    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn blocked<const LOAD: bool>(
        a: &Tensor<f32>,
        b: &Tensor<f32>,
        out: &mut Tensor<f32>,
    ) {
        let n = b.cols;
        let whole = n - n % 16;
        let mut i = 0;
        while i + 4 <= a.rows {
            let mut j = 0;
            while j < whole {
                dot4x16::<LOAD>(a, b, out, i, j);
                j += 16;
            }
            if j < n {
                for r in 0..4 {
                    super::row_tail::<LOAD, f32>(a.row(i + r), b, &mut out.row_mut(i + r)[j..], j);
                }
            }
            i += 4;
        }
        while i < a.rows {
            let mut j = 0;
            while j < whole {
                dot1x16::<LOAD>(a, b, out, i, j);
                j += 16;
            }
            if j < n {
                super::row_tail::<LOAD, f32>(a.row(i), b, &mut out.row_mut(i)[j..], j);
            }
            i += 1;
        }
    }

    /// One 4-row, 16-column tile of a @ b, k ascending.
    #[target_feature(enable = "avx2", enable = "fma")]
    unsafe fn dot4x16<const LOAD: bool>(
        a: &Tensor<f32>,
        b: &Tensor<f32>,
        out: &mut Tensor<f32>,
        i: usize,
        j: usize,
    ) {
        let (ka, n) = (a.cols, b.cols);
        let mut a0l = _mm256_setzero_ps();
        let mut a0h = _mm256_setzero_ps();
        let mut a1l = _mm256_setzero_ps();
        let mut a1h = _mm256_setzero_ps();
        let mut a2l = _mm256_setzero_ps();
        let mut a2h = _mm256_setzero_ps();
        let mut a3l = _mm256_setzero_ps();
        let mut a3h = _mm256_setzero_ps();
        if LOAD {
            let p0 = out.data.as_ptr().add(i * n + j);
            let p1 = p0.add(n);
            let p2 = p1.add(n);
            let p3 = p2.add(n);
            a0l = _mm256_loadu_ps(p0);
            a0h = _mm256_loadu_ps(p0.add(8));
            a1l = _mm256_loadu_ps(p1);
            a1h = _mm256_loadu_ps(p1.add(8));
            a2l = _mm256_loadu_ps(p2);
            a2h = _mm256_loadu_ps(p2.add(8));
            a3l = _mm256_loadu_ps(p3);
            a3h = _mm256_loadu_ps(p3.add(8));
        }
        let ap = a.data.as_ptr().add(i * ka);
        let mut bp = b.data.as_ptr().add(j);
        for k in 0..b.rows {
            let b0 = _mm256_loadu_ps(bp);
            let b1 = _mm256_loadu_ps(bp.add(8));
            let v0 = _mm256_set1_ps(*ap.add(k));
            a0l = _mm256_fmadd_ps(v0, b0, a0l);
            a0h = _mm256_fmadd_ps(v0, b1, a0h);
            let v1 = _mm256_set1_ps(*ap.add(ka + k));
            a1l = _mm256_fmadd_ps(v1, b0, a1l);
            a1h = _mm256_fmadd_ps(v1, b1, a1h);
            let v2 = _mm256_set1_ps(*ap.add(2 * ka + k));
            a2l = _mm256_fmadd_ps(v2, b0, a2l);
            a2h = _mm256_fmadd_ps(v2, b1, a2h);
            let v3 = _mm256_set1_ps(*ap.add(3 * ka + k));
            a3l = _mm256_fmadd_ps(v3, b0, a3l);
            a3h = _mm256_fmadd_ps(v3, b1, a3h);
            bp = bp.add(n);
        }
        let p0 = out.data.as_mut_ptr().add(i * n + j);
        let p1 = p0.add(n);
        let p2 = p1.add(n);
        let p3 = p2.add(n);
        _mm256_storeu_ps(p0, a0l);
        _mm256_storeu_ps(p0.add(8), a0h);
        _mm256_storeu_ps(p1, a1l);
        _mm256_storeu_ps(p1.add(8), a1h);
        _mm256_storeu_ps(p2, a2l);
        _mm256_storeu_ps(p2.add(8), a2h);
        _mm256_storeu_ps(p3, a3l);
        _mm256_storeu_ps(p3.add(8), a3h);
    }

    /// One 16-column slab of a single a @ b out row, k ascending.
    #[target_feature(enable = "avx2", enable = "fma")]
    unsafe fn dot1x16<const LOAD: bool>(
        a: &Tensor<f32>,
        b: &Tensor<f32>,
        out: &mut Tensor<f32>,
        i: usize,
        j: usize,
    ) {
        let n = b.cols;
        let mut lo = _mm256_setzero_ps();
        let mut hi = _mm256_setzero_ps();
        if LOAD {
            let p = out.data.as_ptr().add(i * n + j);
            lo = _mm256_loadu_ps(p);
            hi = _mm256_loadu_ps(p.add(8));
        }
        let ap = a.data.as_ptr().add(i * a.cols);
        let mut bp = b.data.as_ptr().add(j);
        for k in 0..b.rows {
            let av = _mm256_set1_ps(*ap.add(k));
            lo = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp), lo);
            hi = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp.add(8)), hi);
            bp = bp.add(n);
        }
        let p = out.data.as_mut_ptr().add(i * n + j);
        _mm256_storeu_ps(p, lo);
        _mm256_storeu_ps(p.add(8), hi);
    }

    /// f32 `at_b`: same tiling, out rows walk columns of a and the
    /// summation over i runs ascending.
    ///
    /// # Safety
    /// Caller upholds the matmul shape contracts and AVX2+FMA support.
    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn at_b<const LOAD: bool>(
        a: &Tensor<f32>,
        b: &Tensor<f32>,
        out: &mut Tensor<f32>,
    ) {
        let n = b.cols;
        let whole = n - n % 16;
        let mut k = 0;
        while k + 4 <= out.rows {
            let mut j = 0;
            while j < whole {
                dot_t4x16::<LOAD>(a, b, out, k, j);
                j += 16;
            }
            if j < n {
                for r in 0..4 {
                    super::at_b_tail::<LOAD, f32>(a, b, k + r, &mut out.row_mut(k + r)[j..], j);
                }
            }
            k += 4;
        }
        while k < out.rows {
            let mut j = 0;
            while j < whole {
                dot_t1x16::<LOAD>(a, b, out, k, j);
                j += 16;
            }
            if j < n {
                super::at_b_tail::<LOAD, f32>(a, b, k, &mut out.row_mut(k)[j..], j);
            }
            k += 1;
        }
    }

    /// One 4-row, 16-column tile of aᵀ @ b, i ascending.
    #[target_feature(enable = "avx2", enable = "fma")]
    unsafe fn dot_t4x16<const LOAD: bool>(
        a: &Tensor<f32>,
        b: &Tensor<f32>,
        out: &mut Tensor<f32>,
        k: usize,
        j: usize,
    ) {
        let (ka, n) = (a.cols, b.cols);
        let mut a0l = _mm256_setzero_ps();
        let mut a0h = _mm256_setzero_ps();
        let mut a1l = _mm256_setzero_ps();
        let mut a1h = _mm256_setzero_ps();
        let mut a2l = _mm256_setzero_ps();
        let mut a2h = _mm256_setzero_ps();
        let mut a3l = _mm256_setzero_ps();
        let mut a3h = _mm256_setzero_ps();
        if LOAD {
            let p0 = out.data.as_ptr().add(k * n + j);
            let p1 = p0.add(n);
            let p2 = p1.add(n);
            let p3 = p2.add(n);
            a0l = _mm256_loadu_ps(p0);
            a0h = _mm256_loadu_ps(p0.add(8));
            a1l = _mm256_loadu_ps(p1);
            a1h = _mm256_loadu_ps(p1.add(8));
            a2l = _mm256_loadu_ps(p2);
            a2h = _mm256_loadu_ps(p2.add(8));
            a3l = _mm256_loadu_ps(p3);
            a3h = _mm256_loadu_ps(p3.add(8));
        }
        let mut ap = a.data.as_ptr().add(k);
        let mut bp = b.data.as_ptr().add(j);
        for _ in 0..a.rows {
            let b0 = _mm256_loadu_ps(bp);
            let b1 = _mm256_loadu_ps(bp.add(8));
            let v0 = _mm256_set1_ps(*ap);
            a0l = _mm256_fmadd_ps(v0, b0, a0l);
            a0h = _mm256_fmadd_ps(v0, b1, a0h);
            let v1 = _mm256_set1_ps(*ap.add(1));
            a1l = _mm256_fmadd_ps(v1, b0, a1l);
            a1h = _mm256_fmadd_ps(v1, b1, a1h);
            let v2 = _mm256_set1_ps(*ap.add(2));
            a2l = _mm256_fmadd_ps(v2, b0, a2l);
            a2h = _mm256_fmadd_ps(v2, b1, a2h);
            let v3 = _mm256_set1_ps(*ap.add(3));
            a3l = _mm256_fmadd_ps(v3, b0, a3l);
            a3h = _mm256_fmadd_ps(v3, b1, a3h);
            ap = ap.add(ka);
            bp = bp.add(n);
        }
        let p0 = out.data.as_mut_ptr().add(k * n + j);
        let p1 = p0.add(n);
        let p2 = p1.add(n);
        let p3 = p2.add(n);
        _mm256_storeu_ps(p0, a0l);
        _mm256_storeu_ps(p0.add(8), a0h);
        _mm256_storeu_ps(p1, a1l);
        _mm256_storeu_ps(p1.add(8), a1h);
        _mm256_storeu_ps(p2, a2l);
        _mm256_storeu_ps(p2.add(8), a2h);
        _mm256_storeu_ps(p3, a3l);
        _mm256_storeu_ps(p3.add(8), a3h);
    }

    /// One 16-column slab of a single aᵀ @ b out row, i ascending.
    #[target_feature(enable = "avx2", enable = "fma")]
    unsafe fn dot_t1x16<const LOAD: bool>(
        a: &Tensor<f32>,
        b: &Tensor<f32>,
        out: &mut Tensor<f32>,
        k: usize,
        j: usize,
    ) {
        let n = b.cols;
        let mut lo = _mm256_setzero_ps();
        let mut hi = _mm256_setzero_ps();
        if LOAD {
            let p = out.data.as_ptr().add(k * n + j);
            lo = _mm256_loadu_ps(p);
            hi = _mm256_loadu_ps(p.add(8));
        }
        let mut ap = a.data.as_ptr().add(k);
        let mut bp = b.data.as_ptr().add(j);
        for _ in 0..a.rows {
            let av = _mm256_set1_ps(*ap);
            lo = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp), lo);
            hi = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp.add(8)), hi);
            ap = ap.add(a.cols);
            bp = bp.add(n);
        }
        let p = out.data.as_mut_ptr().add(k * n + j);
        _mm256_storeu_ps(p, lo);
        _mm256_storeu_ps(p.add(8), hi);
    }

    /// f32 `narrow` at N = 8: one ymm per k-interleaved bank, same
    /// bank layout and (b0+b1)+(b2+b3) combine as the portable code.
    ///
    /// # Safety
    /// Caller upholds the matmul shape contracts and AVX2+FMA support.
    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn narrow8<const LOAD: bool>(
        a: &Tensor<f32>,
        b: &Tensor<f32>,
        out: &mut Tensor<f32>,
    ) {
        let bd = b.data.as_ptr();
        for i in 0..a.rows {
            let a_row = a.row(i);
            let mut b0 = _mm256_setzero_ps();
            let mut b1 = _mm256_setzero_ps();
            let mut b2 = _mm256_setzero_ps();
            let mut b3 = _mm256_setzero_ps();
            if LOAD {
                b0 = _mm256_loadu_ps(out.data.as_ptr().add(i * 8));
            }
            let quads = a_row.len() / 4;
            for q in 0..quads {
                let k = q * 4;
                let ap = a_row.as_ptr().add(k);
                b0 = _mm256_fmadd_ps(_mm256_set1_ps(*ap), _mm256_loadu_ps(bd.add(k * 8)), b0);
                b1 = _mm256_fmadd_ps(
                    _mm256_set1_ps(*ap.add(1)),
                    _mm256_loadu_ps(bd.add((k + 1) * 8)),
                    b1,
                );
                b2 = _mm256_fmadd_ps(
                    _mm256_set1_ps(*ap.add(2)),
                    _mm256_loadu_ps(bd.add((k + 2) * 8)),
                    b2,
                );
                b3 = _mm256_fmadd_ps(
                    _mm256_set1_ps(*ap.add(3)),
                    _mm256_loadu_ps(bd.add((k + 3) * 8)),
                    b3,
                );
            }
            for k in quads * 4..a_row.len() {
                let av = _mm256_set1_ps(*a_row.as_ptr().add(k));
                b0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bd.add(k * 8)), b0);
            }
            let sum = _mm256_add_ps(_mm256_add_ps(b0, b1), _mm256_add_ps(b2, b3));
            _mm256_storeu_ps(out.data.as_mut_ptr().add(i * 8), sum);
        }
    }

    /// f32 `narrow` at N = 4: as `narrow8` but one xmm per bank.
    ///
    /// # Safety
    /// Caller upholds the matmul shape contracts and AVX2+FMA support.
    #[target_feature(enable = "avx2", enable = "fma")]
    pub unsafe fn narrow4<const LOAD: bool>(
        a: &Tensor<f32>,
        b: &Tensor<f32>,
        out: &mut Tensor<f32>,
    ) {
        let bd = b.data.as_ptr();
        for i in 0..a.rows {
            let a_row = a.row(i);
            let mut b0 = _mm_setzero_ps();
            let mut b1 = _mm_setzero_ps();
            let mut b2 = _mm_setzero_ps();
            let mut b3 = _mm_setzero_ps();
            if LOAD {
                b0 = _mm_loadu_ps(out.data.as_ptr().add(i * 4));
            }
            let quads = a_row.len() / 4;
            for q in 0..quads {
                let k = q * 4;
                let ap = a_row.as_ptr().add(k);
                b0 = _mm_fmadd_ps(_mm_set1_ps(*ap), _mm_loadu_ps(bd.add(k * 4)), b0);
                b1 = _mm_fmadd_ps(_mm_set1_ps(*ap.add(1)), _mm_loadu_ps(bd.add((k + 1) * 4)), b1);
                b2 = _mm_fmadd_ps(_mm_set1_ps(*ap.add(2)), _mm_loadu_ps(bd.add((k + 2) * 4)), b2);
                b3 = _mm_fmadd_ps(_mm_set1_ps(*ap.add(3)), _mm_loadu_ps(bd.add((k + 3) * 4)), b3);
            }
            for k in quads * 4..a_row.len() {
                let av = _mm_set1_ps(*a_row.as_ptr().add(k));
                b0 = _mm_fmadd_ps(av, _mm_loadu_ps(bd.add(k * 4)), b0);
            }
            let sum = _mm_add_ps(_mm_add_ps(b0, b1), _mm_add_ps(b2, b3));
            _mm_storeu_ps(out.data.as_mut_ptr().add(i * 4), sum);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn from_vec_checks_len() {
        assert!(Tensor::<f64>::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::from_vec(2, 2, vec![1.0; 4]).is_ok());
    }

    #[test]
    fn from_rows_rejects_ragged() {
        assert!(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn matmul_example() {
        let a = t(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = t(&[vec![1.0], vec![1.0]]);
        let mut out = Tensor::zeros(2, 1);
        matmul_acc(&a, &b, &mut out);
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_acc_accumulates() {
        let a = t(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = t(&[vec![1.0], vec![1.0]]);
        let mut out = Tensor::filled(2, 1, 10.0);
        matmul_acc(&a, &b, &mut out);
        assert_eq!(out.data(), &[13.0, 17.0]);
    }

    /// Transposed kernels must agree with explicit transposition + matmul.
    #[test]
    fn transposed_kernels_match_naive() {
        let a = t(&[vec![1.0, -2.0, 0.5], vec![3.0, 4.0, -1.0]]); // 2x3
        let b = t(&[vec![2.0, 1.0], vec![0.0, -1.0]]); // 2x2
        let at = t(&[vec![1.0, 3.0], vec![-2.0, 4.0], vec![0.5, -1.0]]); // 3x2

        let mut via_at_b = Tensor::zeros(3, 2);
        matmul_at_b_acc(&a, &b, &mut via_at_b);
        let mut naive = Tensor::zeros(3, 2);
        matmul_acc(&at, &b, &mut naive);
        assert_eq!(via_at_b, naive);

        let bt = t(&[vec![2.0, 0.0], vec![1.0, -1.0]]); // 2x2 transposed
        let mut via_a_bt = Tensor::zeros(3, 2);
        matmul_a_bt_acc(&at, &bt, &mut via_a_bt);
        let mut naive2 = Tensor::zeros(3, 2);
        matmul_acc(&at, &b, &mut naive2);
        assert_eq!(via_a_bt, naive2);
    }

    #[test]
    fn set_variants_overwrite_stale_contents() {
        // Odd sizes push every path: n=37 crosses a chunk boundary with
        // a remainder, n=5 takes the narrow kernel, k=9 leaves a lane
        // remainder in the bank loop.
        for (m, k, n) in [(5, 9, 37), (4, 9, 5), (3, 2, 33)] {
            let a = Tensor::from_vec(m, k, (0..m * k).map(|i| i as f64 * 0.37 - 1.0).collect())
                .unwrap();
            let b = Tensor::from_vec(k, n, (0..k * n).map(|i| 0.9 - i as f64 * 0.11).collect())
                .unwrap();
            let mut clean = Tensor::zeros(m, n);
            matmul_acc(&a, &b, &mut clean);
            let mut stale = Tensor::filled(m, n, f64::NAN);
            matmul_set(&a, &b, &mut stale);
            assert_eq!(clean, stale);

            let b2 = Tensor::from_vec(m, n, (0..m * n).map(|i| 0.4 - i as f64 * 0.07).collect())
                .unwrap();
            let mut at_clean = Tensor::zeros(k, n);
            matmul_at_b_acc(&a, &b2, &mut at_clean);
            let mut at_stale = Tensor::filled(k, n, f64::NAN);
            matmul_at_b_set(&a, &b2, &mut at_stale);
            assert_eq!(at_clean, at_stale);

            let mut bt_clean = Tensor::zeros(m, n);
            matmul_a_bt_acc(&a, &transposed(&b), &mut bt_clean);
            let mut bt_stale = Tensor::filled(m, n, f64::NAN);
            matmul_a_bt_set(&a, &transposed(&b), &mut bt_stale);
            assert_eq!(bt_clean, bt_stale);
        }
    }

    #[test]
    fn cast_roundtrip() {
        let a = t(&[vec![1.25, -0.5]]);
        let b: Tensor<f32> = a.cast();
        assert_eq!(b.data(), &[1.25f32, -0.5]);
    }
}
