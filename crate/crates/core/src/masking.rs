//! Missingness masks and random-drop plans.
//!
//! A mask marks observed cells with 1 and missing cells with 0. A drop
//! plan additionally hides an exact fraction of the observed cells so
//! the hidden values can serve as training targets.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    t: Tensor<f64>,
}

impl Mask {
    /// Validates that every entry is exactly 0 or 1.
    pub fn from_tensor(t: Tensor<f64>) -> Result<Mask> {
        for (i, &v) in t.data().iter().enumerate() {
            contract!(v == 0.0 || v == 1.0, "mask entry {i} is {v}, not 0/1");
        }
        Ok(Mask { t })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Mask {
        let mut t = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                if f(r, c) {
                    t[(r, c)] = 1.0;
                }
            }
        }
        Mask { t }
    }

    pub fn ones(rows: usize, cols: usize) -> Mask {
        Mask { t: Tensor::filled(rows, cols, 1.0) }
    }

    pub fn zeros(rows: usize, cols: usize) -> Mask {
        Mask { t: Tensor::zeros(rows, cols) }
    }

    pub fn tensor(&self) -> &Tensor<f64> {
        &self.t
    }

    pub fn shape(&self) -> (usize, usize) {
        self.t.shape()
    }

    pub fn is_observed(&self, r: usize, c: usize) -> bool {
        self.t[(r, c)] == 1.0
    }

    pub fn count_ones(&self) -> usize {
        self.t.data().iter().filter(|&&v| v == 1.0).count()
    }

    /// 1 − M.
    pub fn complement(&self) -> Mask {
        let mut t = self.t.clone();
        for v in t.data_mut() {
            *v = 1.0 - *v;
        }
        Mask { t }
    }

    /// Elementwise AND.
    pub fn intersect(&self, other: &Mask) -> Result<Mask> {
        contract!(
            self.shape() == other.shape(),
            "mask shapes differ: {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        let mut t = self.t.clone();
        for (v, &o) in t.data_mut().iter_mut().zip(other.t.data()) {
            *v *= o;
        }
        Ok(Mask { t })
    }

    /// Self minus `other`; requires other ≤ self elementwise.
    pub fn difference(&self, other: &Mask) -> Result<Mask> {
        contract!(
            self.shape() == other.shape(),
            "mask shapes differ: {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        let mut t = self.t.clone();
        for (i, (v, &o)) in t.data_mut().iter_mut().zip(other.t.data()).enumerate() {
            contract!(o <= *v, "mask difference would be negative at cell {i}");
            *v -= o;
        }
        Ok(Mask { t })
    }

    /// True if every observed cell of self is also observed in `outer`.
    pub fn is_subset_of(&self, outer: &Mask) -> bool {
        self.shape() == outer.shape()
            && self.t.data().iter().zip(outer.t.data()).all(|(&a, &b)| a <= b)
    }
}

/// Splits raw values into (zero-filled values, mask); a cell is missing
/// iff it is non-finite (NaN is the in-memory missing marker).
pub fn mask_from_sentinel(raw: &Tensor<f64>) -> Result<(Tensor<f64>, Mask)> {
    contract!(!raw.is_empty(), "empty input");
    let mut values = raw.clone();
    let mut mask = Tensor::zeros(raw.rows(), raw.cols());
    for (i, v) in values.data_mut().iter_mut().enumerate() {
        if v.is_finite() {
            mask.data_mut()[i] = 1.0;
        } else {
            *v = 0.0;
        }
    }
    Ok((values, Mask { t: mask }))
}

/// An exact-count random hiding of observed cells.
///
/// `visible` is the post-drop mask: visible ≤ base, and
/// count(base − visible) = floor(drop_rate · count(base)).
#[derive(Debug, Clone)]
pub struct DropPlan {
    pub base: Mask,
    pub visible: Mask,
    pub drop_rate: f64,
    pub seed: u64,
}

impl DropPlan {
    /// Cells hidden by this plan: base − visible.
    pub fn dropped(&self) -> Mask {
        self.base.difference(&self.visible).expect("visible ≤ base by construction")
    }
}

/// Hides floor(r · count(mask)) observed cells, chosen uniformly
/// without replacement by a seeded shuffle.
pub fn random_drop(mask: &Mask, r: f64, seed: u64) -> Result<DropPlan> {
    contract!(0.0 < r && r < 1.0, "drop rate must be in (0,1), got {r}");
    let observed: Vec<usize> = mask
        .tensor()
        .data()
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| (v == 1.0).then_some(i))
        .collect();
    if observed.is_empty() {
        return Err(Error::Contract("cannot drop from a mask with no observed cells".into()));
    }
    let drop_count = (r * observed.len() as f64).floor() as usize;

    let mut cells = observed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dropped, _) = cells.partial_shuffle(&mut rng, drop_count);

    let mut visible = mask.tensor().clone();
    for &i in dropped.iter() {
        visible.data_mut()[i] = 0.0;
    }
    Ok(DropPlan { base: mask.clone(), visible: Mask { t: visible }, drop_rate: r, seed })
}

/// N independent plans over the same mask, seeded base_seed..base_seed+N−1.
pub fn augment(mask: &Mask, r: f64, n: usize, base_seed: u64) -> Result<Vec<DropPlan>> {
    contract!(n >= 1, "need at least one plan, got {n}");
    (0..n)
        .map(|k| random_drop(mask, r, base_seed.wrapping_add(k as u64)))
        .collect()
}
