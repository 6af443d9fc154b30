use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{row_softmax, Mask, Matrix};
use crate::rope::HeadTensor;

/// `softmax(QKᵀ/√d_h + M)` with the causal mask `M`.
pub fn causal_attention(q: &HeadTensor, k: &HeadTensor) -> Result<Matrix> {
    causal_attention_matrix(&q.values, &k.values)
}

pub fn causal_attention_matrix(q: &Matrix, k: &Matrix) -> Result<Matrix> {
    if q.shape() != k.shape() {
        return Err(Error::Dimension(format!(
            "query {:?} and key {:?} shapes differ",
            q.shape(),
            k.shape()
        )));
    }
    if q.is_empty() {
        return Err(Error::Dimension("attention over an empty sequence".into()));
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let scores = q.matmul_transposed(k)?.scale(scale);
    row_softmax(&scores, &Mask::causal(q.rows()))
}

/// Mean attention mass on `target_cols`, over rows that can see all of them.
pub fn sink_score(a: &Matrix, target_cols: &[usize]) -> Result<f64> {
    let last = *target_cols
        .iter()
        .max()
        .ok_or_else(|| Error::Config("sink score needs at least one target column".into()))?;
    if !a.is_square() || last >= a.cols() {
        return Err(Error::Dimension(format!(
            "target column {last} outside a {:?} attention matrix",
            a.shape()
        )));
    }
    let mut cols = target_cols.to_vec();
    cols.sort_unstable();
    cols.dedup();
    let rows = last..a.rows();
    let count = rows.len() as f64;
    let total: f64 = rows.map(|i| cols.iter().map(|&j| a[(i, j)]).sum::<f64>()).sum();
    Ok(total / count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionEntropy {
    pub per_row: Vec<f64>,
    pub mean: f64,
}

/// Shannon entropy (nats) of each attention row and their mean.
pub fn attention_entropy(a: &Matrix) -> Result<AttentionEntropy> {
    if a.is_empty() {
        return Err(Error::Dimension("entropy of an empty attention matrix".into()));
    }
    let per_row: Vec<f64> = (0..a.rows())
        .map(|i| a.row(i).iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum())
        .collect();
    let mean = per_row.iter().sum::<f64>() / per_row.len() as f64;
    Ok(AttentionEntropy { per_row, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope::{Indicator, Stage};
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn uniform_causal(n: usize) -> Matrix {
        Matrix::from_fn(n, n, |i, j| if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 })
    }

    #[test]
    fn zero_queries_give_uniform_rows() {
        let q = HeadTensor::new(Matrix::zeros(4, 2), Stage::PostRope, Indicator::Query, 0, 0).unwrap();
        let k = HeadTensor::new(Matrix::from_fn(4, 2, |i, j| (i + j) as f64), Stage::PostRope, Indicator::Key, 0, 0)
            .unwrap();
        let a = causal_attention(&q, &k).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 };
                assert!((a[(i, j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_by_two_matches_hand_softmax() {
        let q = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5, -1.0]]).unwrap();
        let k = Matrix::from_rows(&[vec![2.0, 1.0], vec![-1.0, 3.0]]).unwrap();
        let a = causal_attention_matrix(&q, &k).unwrap();
        let s10 = (0.5 * 2.0 - 1.0) / 2f64.sqrt();
        let s11 = (-0.5 - 3.0) / 2f64.sqrt();
        let p0 = s10.exp() / (s10.exp() + s11.exp());
        assert!((a[(1, 0)] - p0).abs() < 1e-15);
        assert!((a[(1, 1)] - (1.0 - p0)).abs() < 1e-15);
        assert_eq!(a[(0, 1)], 0.0);
        assert!(causal_attention_matrix(&q, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn sink_score_examples() {
        let all_first = Matrix::from_fn(4, 4, |_, j| if j == 0 { 1.0 } else { 0.0 });
        assert_eq!(sink_score(&all_first, &[0]).unwrap(), 1.0);
        let got = sink_score(&uniform_causal(4), &[0]).unwrap();
        assert!((got - 25.0 / 48.0).abs() < 1e-15);
        assert!(matches!(sink_score(&all_first, &[]), Err(Error::Config(_))));
        assert!(sink_score(&all_first, &[4]).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(attention_entropy(&Matrix::identity(3)).unwrap().mean, 0.0);
        let e = attention_entropy(&uniform_causal(5)).unwrap();
        for (t, h) in e.per_row.iter().enumerate() {
            assert!((h - ((t + 1) as f64).ln()).abs() < 1e-14);
        }
        let mixed = Matrix::from_rows(&[vec![0.5, 0.25, 0.25]]).unwrap();
        assert!((attention_entropy(&mixed).unwrap().mean - 1.5 * LN_2).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn attention_is_causal_and_stochastic(
            vals in prop::collection::vec(-3.0..3.0f64, 2 * 6 * 4),
            targets in prop::collection::vec(0usize..6, 1..3),
        ) {
            let q = Matrix::new(6, 4, vals[..24].to_vec()).unwrap();
            let k = Matrix::new(6, 4, vals[24..].to_vec()).unwrap();
            let a = causal_attention_matrix(&q, &k).unwrap();
            let ent = attention_entropy(&a).unwrap();
            for i in 0..6 {
                prop_assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for j in i + 1..6 {
                    prop_assert_eq!(a[(i, j)], 0.0);
                }
                prop_assert!(ent.per_row[i] >= 0.0 && ent.per_row[i] <= ((i + 1) as f64).ln() + 1e-12);
            }
            let s = sink_score(&a, &targets).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        }
    }
}
