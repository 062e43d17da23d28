//! Non-learned reference imputers: forward fill, backward fill, mean
//! fill, and weighted KNN over whole windows.

use crate::error::{contract, Error, Result};
use crate::masking::Mask;
use crate::tensor::Tensor;

fn check_shapes(series: &Tensor<f64>, mask: &Mask) -> Result<()> {
    contract!(
        series.shape() == mask.shape(),
        "series {:?} vs mask {:?}",
        series.shape(),
        mask.shape()
    );
    Ok(())
}

/// Each missing cell takes the most recent observed value in its
/// feature; leading gaps take the first observed value; an all-missing
/// feature becomes 0 (the normalized mean).
pub fn forward_fill(series: &Tensor<f64>, mask: &Mask) -> Result<Tensor<f64>> {
    check_shapes(series, mask)?;
    let (rows, cols) = series.shape();
    let mut out = series.clone();
    for c in 0..cols {
        let first = (0..rows).find(|&t| mask.is_observed(t, c));
        let mut last = match first {
            Some(t) => series[(t, c)],
            None => 0.0,
        };
        for t in 0..rows {
            if mask.is_observed(t, c) {
                last = series[(t, c)];
            } else {
                out[(t, c)] = last;
            }
        }
    }
    Ok(out)
}

/// Time-mirror of forward_fill.
pub fn backward_fill(series: &Tensor<f64>, mask: &Mask) -> Result<Tensor<f64>> {
    check_shapes(series, mask)?;
    let (rows, cols) = series.shape();
    let mut out = series.clone();
    for c in 0..cols {
        let last_obs = (0..rows).rev().find(|&t| mask.is_observed(t, c));
        let mut next = match last_obs {
            Some(t) => series[(t, c)],
            None => 0.0,
        };
        for t in (0..rows).rev() {
            if mask.is_observed(t, c) {
                next = series[(t, c)];
            } else {
                out[(t, c)] = next;
            }
        }
    }
    Ok(out)
}

/// Missing cells take their feature's observed mean (0 if none).
pub fn mean_fill(series: &Tensor<f64>, mask: &Mask) -> Result<Tensor<f64>> {
    check_shapes(series, mask)?;
    let (rows, cols) = series.shape();
    let mut out = series.clone();
    for c in 0..cols {
        let mut sum = 0.0;
        let mut n = 0usize;
        for t in 0..rows {
            if mask.is_observed(t, c) {
                sum += series[(t, c)];
                n += 1;
            }
        }
        let mean = if n > 0 { sum / n as f64 } else { 0.0 };
        for t in 0..rows {
            if !mask.is_observed(t, c) {
                out[(t, c)] = mean;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct KnnConfig {
    pub k: usize,
    /// Weight-smoothing constant in w = 1/(d + ε).
    pub epsilon: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig { k: 5, epsilon: 1e-8 }
    }
}

/// Imputes missing cells from the k nearest corpus windows.
///
/// Distance is the mean squared difference over cells observed in both
/// windows (∞ when none overlap); ties break by corpus order. A missing
/// cell takes the 1/(d+ε)-weighted average of the neighbors observing
/// it, falling back to the target's own mean fill when none do.
pub fn knn_impute(
    series: &Tensor<f64>,
    mask: &Mask,
    corpus: &[(&Tensor<f64>, &Mask)],
    cfg: &KnnConfig,
) -> Result<Tensor<f64>> {
    check_shapes(series, mask)?;
    contract!(cfg.k >= 1, "k must be at least 1");
    if corpus.is_empty() {
        return Err(Error::Contract("knn corpus is empty".into()));
    }
    contract!(cfg.k <= corpus.len(), "k={} exceeds corpus size {}", cfg.k, corpus.len());
    for (i, (cs, cm)) in corpus.iter().enumerate() {
        check_shapes(cs, cm)?;
        contract!(
            cs.shape() == series.shape(),
            "corpus window {i} is {:?}, target is {:?}",
            cs.shape(),
            series.shape()
        );
    }

    let mut scored: Vec<(f64, usize)> = corpus
        .iter()
        .enumerate()
        .map(|(i, (cs, cm))| {
            let mut sum = 0.0;
            let mut n = 0usize;
            for ((&a, &b), (&ma, &mb)) in series
                .data()
                .iter()
                .zip(cs.data())
                .zip(mask.tensor().data().iter().zip(cm.tensor().data()))
            {
                if ma == 1.0 && mb == 1.0 {
                    let d = a - b;
                    sum += d * d;
                    n += 1;
                }
            }
            let dist = if n > 0 { sum / n as f64 } else { f64::INFINITY };
            (dist, i)
        })
        .collect();
    scored.sort_by(|a, b| a.partial_cmp(b).expect("distances are not NaN"));
    let neighbors = &scored[..cfg.k];

    let fallback = mean_fill(series, mask)?;
    let mut out = series.clone();
    for t in 0..series.rows() {
        for c in 0..series.cols() {
            if mask.is_observed(t, c) {
                continue;
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for &(dist, i) in neighbors {
                let (cs, cm) = corpus[i];
                if cm.is_observed(t, c) && dist.is_finite() {
                    let w = 1.0 / (dist + cfg.epsilon);
                    num += w * cs[(t, c)];
                    den += w;
                }
            }
            out[(t, c)] = if den > 0.0 { num / den } else { fallback[(t, c)] };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn masked(values: Vec<Vec<f64>>) -> (Tensor<f64>, Mask) {
        let raw = Tensor::from_rows(&values).unwrap();
        crate::masking::mask_from_sentinel(&raw).unwrap()
    }

    const NA: f64 = f64::NAN;

    #[test]
    fn forward_fill_example() {
        let (s, m) = masked(vec![vec![NA], vec![5.0], vec![NA], vec![NA], vec![7.0]]);
        let out = forward_fill(&s, &m).unwrap();
        assert_eq!(out.data(), &[5.0, 5.0, 5.0, 5.0, 7.0]);
    }

    #[test]
    fn backward_fill_example() {
        let (s, m) = masked(vec![vec![NA], vec![5.0], vec![NA], vec![NA], vec![7.0]]);
        let out = backward_fill(&s, &m).unwrap();
        assert_eq!(out.data(), &[5.0, 5.0, 7.0, 7.0, 7.0]);
    }

    #[test]
    fn fills_pass_observed_through_and_complete() {
        let (s, m) = masked(vec![vec![1.0, NA], vec![NA, NA], vec![3.0, 2.0]]);
        for out in [
            forward_fill(&s, &m).unwrap(),
            backward_fill(&s, &m).unwrap(),
            mean_fill(&s, &m).unwrap(),
        ] {
            assert_eq!(out[(0, 0)], 1.0);
            assert_eq!(out[(2, 0)], 3.0);
            assert_eq!(out[(2, 1)], 2.0);
            assert!(out.data().iter().all(|v| v.is_finite()));
        }
        let fully = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let ones = Mask::ones(1, 2);
        assert_eq!(forward_fill(&fully, &ones).unwrap(), fully);
        assert_eq!(backward_fill(&fully, &ones).unwrap(), fully);
    }

    #[test]
    fn all_missing_becomes_zero() {
        let (s, m) = masked(vec![vec![NA], vec![NA]]);
        assert_eq!(forward_fill(&s, &m).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(backward_fill(&s, &m).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(mean_fill(&s, &m).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn mean_fill_uses_feature_mean() {
        let (s, m) = masked(vec![vec![2.0], vec![NA], vec![4.0]]);
        assert_eq!(mean_fill(&s, &m).unwrap().data(), &[2.0, 3.0, 4.0]);
    }

    /// backward_fill(x) = reverse(forward_fill(reverse(x))).
    #[test]
    fn fill_duality() {
        let mut rng = crate::rng::stream(5, crate::rng::tag::SYNTH, 1);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..6)
                .map(|_| {
                    (0..3)
                        .map(|_| {
                            if rng.random::<f64>() < 0.4 {
                                NA
                            } else {
                                rng.random_range(-5.0..5.0)
                            }
                        })
                        .collect()
                })
                .collect();
            let (s, m) = masked(rows.clone());
            let reversed: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
            let (rs, rm) = masked(reversed);
            let via_reverse = forward_fill(&rs, &rm).unwrap();
            let direct = backward_fill(&s, &m).unwrap();
            for t in 0..6 {
                assert_eq!(direct.row(t), via_reverse.row(5 - t));
            }
        }
    }

    #[test]
    fn knn_copies_identical_neighbor() {
        let (target, tm) = masked(vec![vec![1.0, NA], vec![3.0, 4.0]]);
        let full = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let fm = Mask::ones(2, 2);
        let far = Tensor::from_rows(&[vec![9.0, 9.0], vec![9.0, 9.0]]).unwrap();
        let out = knn_impute(
            &target,
            &tm,
            &[(&far, &fm), (&full, &fm)],
            &KnnConfig { k: 1, epsilon: 1e-8 },
        )
        .unwrap();
        assert_eq!(out[(0, 1)], 2.0);
        assert_eq!(out[(0, 0)], 1.0, "observed cells untouched");
    }

    #[test]
    fn knn_equidistant_neighbors_average() {
        // Both neighbors differ from the target by 1 at the observed cell.
        let (target, tm) = masked(vec![vec![0.0, NA]]);
        let above = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let below = Tensor::from_rows(&[vec![-1.0, 4.0]]).unwrap();
        let fm = Mask::ones(1, 2);
        let out = knn_impute(
            &target,
            &tm,
            &[(&above, &fm), (&below, &fm)],
            &KnnConfig { k: 2, epsilon: 1e-8 },
        )
        .unwrap();
        assert!((out[(0, 1)] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn knn_uniform_weights_give_plain_mean() {
        let (target, tm) = masked(vec![vec![0.0, NA]]);
        let fm = Mask::ones(1, 2);
        let n1 = Tensor::from_rows(&[vec![2.0, 10.0]]).unwrap();
        let n2 = Tensor::from_rows(&[vec![-2.0, 20.0]]).unwrap();
        let n3 = Tensor::from_rows(&[vec![2.0, 30.0]]).unwrap();
        let corpus: Vec<(&Tensor<f64>, &Mask)> = vec![(&n1, &fm), (&n2, &fm), (&n3, &fm)];
        let out = knn_impute(&target, &tm, &corpus, &KnnConfig { k: 3, epsilon: 1e-8 }).unwrap();
        assert!((out[(0, 1)] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn knn_falls_back_to_mean_fill() {
        let (target, tm) = masked(vec![vec![4.0, NA], vec![6.0, NA]]);
        // Neighbor never observes feature 1 either.
        let (n, nm) = masked(vec![vec![4.0, NA], vec![6.0, NA]]);
        let out =
            knn_impute(&target, &tm, &[(&n, &nm)], &KnnConfig { k: 1, epsilon: 1e-8 }).unwrap();
        assert_eq!(out[(0, 1)], 0.0, "no observations anywhere: normalized mean");

        let (t2, t2m) = masked(vec![vec![4.0, 8.0], vec![6.0, NA]]);
        let out2 =
            knn_impute(&t2, &t2m, &[(&n, &nm)], &KnnConfig { k: 1, epsilon: 1e-8 }).unwrap();
        assert_eq!(out2[(1, 1)], 8.0, "falls back to the target's own feature mean");
    }

    #[test]
    fn knn_rejects_bad_inputs() {
        let (target, tm) = masked(vec![vec![1.0, NA]]);
        assert!(knn_impute(&target, &tm, &[], &KnnConfig::default()).is_err());
        let n = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let nm = Mask::ones(1, 2);
        let cfg = KnnConfig { k: 2, epsilon: 1e-8 };
        assert!(knn_impute(&target, &tm, &[(&n, &nm)], &cfg).is_err(), "k > corpus");
    }
}
