//! Masked L2 losses and the held-out evaluation metric.
//!
//! Every loss is a mean over its active cells, so magnitudes stay
//! comparable across masks of different sizes; an empty mask yields 0.

use crate::error::{contract, Error, Result};
use crate::masking::{DropPlan, Mask};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedLoss {
    pub value: f64,
    /// Cells contributing to the mean; 0 means the value is 0 by convention.
    pub active_count: usize,
}

/// Mean of (target − pred)² over cells with mask = 1.
pub fn masked_mse(target: &Tensor<f64>, pred: &Tensor<f64>, mask: &Mask) -> Result<MaskedLoss> {
    contract!(
        target.shape() == pred.shape() && target.shape() == mask.shape(),
        "masked_mse shapes: target {:?}, pred {:?}, mask {:?}",
        target.shape(),
        pred.shape(),
        mask.shape()
    );
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((&t, &p), &m) in target.data().iter().zip(pred.data()).zip(mask.tensor().data()) {
        if m == 1.0 {
            let d = t - p;
            sum += d * d;
            count += 1;
        }
    }
    let value = if count == 0 { 0.0 } else { sum / count as f64 };
    Ok(MaskedLoss { value, active_count: count })
}

/// Imputation loss: mean error on deliberately dropped cells plus mean
/// reconstruction error on the cells left visible.
///
/// The dropped term is what trains the model to impute explicitly: the
/// true values there are known but hidden from the input.
pub fn rdi_loss(series: &Tensor<f64>, plan: &DropPlan, pred: &Tensor<f64>) -> Result<MaskedLoss> {
    contract!(
        series.shape() == plan.base.shape(),
        "series {:?} vs plan {:?}",
        series.shape(),
        plan.base.shape()
    );
    let dropped = masked_mse(series, pred, &plan.dropped())?;
    let visible = masked_mse(series, pred, &plan.visible)?;
    Ok(MaskedLoss {
        value: dropped.value + visible.value,
        active_count: dropped.active_count + visible.active_count,
    })
}

/// Self-training loss: mean error against pseudo values on reliable
/// missing cells plus mean reconstruction error on observed cells.
pub fn self_loss(
    series: &Tensor<f64>,
    mask: &Mask,
    pseudo: &Tensor<f64>,
    reliable: &Mask,
    plan: &DropPlan,
    pred: &Tensor<f64>,
) -> Result<MaskedLoss> {
    contract!(
        reliable.is_subset_of(&mask.complement()),
        "reliable cells must lie within missing cells"
    );
    contract!(
        plan.base == *mask,
        "plan was built for a different mask than the series being trained"
    );
    let pseudo_mask = mask.complement().intersect(reliable)?;
    let pseudo_term = masked_mse(pseudo, pred, &pseudo_mask)?;
    let observed_term = masked_mse(series, pred, mask)?;
    Ok(MaskedLoss {
        value: pseudo_term.value + observed_term.value,
        active_count: pseudo_term.active_count + observed_term.active_count,
    })
}

/// Mean squared error over the held-out cells; the headline metric.
pub fn eval_mse(truth: &Tensor<f64>, pred: &Tensor<f64>, holdout: &Mask) -> Result<f64> {
    let loss = masked_mse(truth, pred, holdout)?;
    if loss.active_count == 0 {
        return Err(Error::Contract("holdout mask has no cells to evaluate".into()));
    }
    Ok(loss.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::random_drop;

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn masked_mse_hand_example() {
        let target = t(&[vec![1.0, 2.0, 3.0]]);
        let pred = Tensor::zeros(1, 3);
        let mask = Mask::from_tensor(t(&[vec![1.0, 0.0, 1.0]])).unwrap();
        let loss = masked_mse(&target, &pred, &mask).unwrap();
        assert_eq!(loss.value, 5.0);
        assert_eq!(loss.active_count, 2);
    }

    #[test]
    fn masked_mse_edges() {
        let x = t(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
        let all = Mask::ones(2, 2);
        assert_eq!(masked_mse(&x, &x, &all).unwrap().value, 0.0);
        let none = Mask::zeros(2, 2);
        let empty = masked_mse(&x, &Tensor::zeros(2, 2), &none).unwrap();
        assert_eq!((empty.value, empty.active_count), (0.0, 0));
        let bad = Tensor::zeros(1, 2);
        assert!(masked_mse(&x, &bad, &all).is_err());
    }

    #[test]
    fn rdi_loss_hand_example() {
        // X = [4, 6] all observed; cell 0 dropped; pred = [5, 5].
        let x = t(&[vec![4.0, 6.0]]);
        let plan = DropPlan {
            base: Mask::ones(1, 2),
            visible: Mask::from_tensor(t(&[vec![0.0, 1.0]])).unwrap(),
            drop_rate: 0.5,
            seed: 0,
        };
        let pred = t(&[vec![5.0, 5.0]]);
        let loss = rdi_loss(&x, &plan, &pred).unwrap();
        assert_eq!(loss.value, 2.0);
        assert_eq!(loss.active_count, 2);
    }

    #[test]
    fn rdi_loss_degenerates_to_reconstruction() {
        let x = t(&[vec![1.0, 2.0, f64::NAN, 4.0]]);
        let (values, mask) = crate::masking::mask_from_sentinel(&x).unwrap();
        let plan = DropPlan {
            base: mask.clone(),
            visible: mask.clone(),
            drop_rate: 0.3,
            seed: 0,
        };
        let pred = t(&[vec![0.0, 0.0, 0.0, 0.0]]);
        let loss = rdi_loss(&values, &plan, &pred).unwrap();
        let plain = masked_mse(&values, &pred, &mask).unwrap();
        assert_eq!(loss.value, plain.value);
        assert_eq!(rdi_loss(&values, &plan, &values).unwrap().value, 0.0);
    }

    #[test]
    fn self_loss_hand_example() {
        // X = [1, missing]; pseudo 3 at the missing cell, selected; pred = [1, 2].
        let x = t(&[vec![1.0, 0.0]]);
        let mask = Mask::from_tensor(t(&[vec![1.0, 0.0]])).unwrap();
        let pseudo = t(&[vec![0.0, 3.0]]);
        let reliable = Mask::from_tensor(t(&[vec![0.0, 1.0]])).unwrap();
        let plan = random_drop(&mask, 0.5, 1).unwrap();
        let pred = t(&[vec![1.0, 2.0]]);
        let loss = self_loss(&x, &mask, &pseudo, &reliable, &plan, &pred).unwrap();
        assert_eq!(loss.value, 1.0);
        assert_eq!(loss.active_count, 2);
    }

    #[test]
    fn self_loss_with_no_reliable_cells_is_reconstruction() {
        let x = t(&[vec![1.0, 0.0, 2.0]]);
        let mask = Mask::from_tensor(t(&[vec![1.0, 0.0, 1.0]])).unwrap();
        let plan = random_drop(&mask, 0.5, 9).unwrap();
        let pred = t(&[vec![0.5, 9.0, 2.5]]);
        let none = Mask::zeros(1, 3);
        let loss = self_loss(&x, &mask, &Tensor::zeros(1, 3), &none, &plan, &pred).unwrap();
        let plain = masked_mse(&x, &pred, &mask).unwrap();
        assert_eq!(loss.value, plain.value);
    }

    #[test]
    fn self_loss_rejects_reliable_on_observed() {
        let x = t(&[vec![1.0, 2.0]]);
        let mask = Mask::ones(1, 2);
        let reliable = Mask::from_tensor(t(&[vec![1.0, 0.0]])).unwrap();
        let plan = random_drop(&mask, 0.5, 1).unwrap();
        let err = self_loss(&x, &mask, &x, &reliable, &plan, &x);
        assert!(err.is_err());
    }

    #[test]
    fn eval_mse_examples() {
        let truth = t(&[vec![2.0, 0.0]]);
        let pred = t(&[vec![0.0, 5.0]]);
        let holdout = Mask::from_tensor(t(&[vec![1.0, 0.0]])).unwrap();
        assert_eq!(eval_mse(&truth, &pred, &holdout).unwrap(), 4.0);
        assert_eq!(eval_mse(&truth, &truth, &holdout).unwrap(), 0.0);
        assert!(eval_mse(&truth, &pred, &Mask::zeros(1, 2)).is_err());
    }

    /// Count-weighted recombination over disjoint masks.
    #[test]
    fn masked_mse_is_additive_over_disjoint_masks() {
        let target = t(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let pred = t(&[vec![0.0, 1.0, 5.0, 2.0]]);
        let a = Mask::from_tensor(t(&[vec![1.0, 1.0, 0.0, 0.0]])).unwrap();
        let b = Mask::from_tensor(t(&[vec![0.0, 0.0, 1.0, 1.0]])).unwrap();
        let both = Mask::ones(1, 4);
        let la = masked_mse(&target, &pred, &a).unwrap();
        let lb = masked_mse(&target, &pred, &b).unwrap();
        let lab = masked_mse(&target, &pred, &both).unwrap();
        let recombined = (la.value * la.active_count as f64 + lb.value * lb.active_count as f64)
            / (la.active_count + lb.active_count) as f64;
        assert!((recombined - lab.value).abs() < 1e-15);
    }
}
