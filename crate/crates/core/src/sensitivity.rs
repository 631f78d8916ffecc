//! Generalized global sensitivity: the change in a query answer between two
//! histograms that differ by one record moved from bin `i` to bin `j`.

use crate::error::{Error, Result};
use crate::types::QueryMatrix;

/// Norm order used for multi-output sensitivities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Norm {
    #[default]
    L1,
    L2,
    LInf,
}

impl Norm {
    pub fn of<I: IntoIterator<Item = f64>>(self, v: I) -> f64 {
        let it = v.into_iter().map(f64::abs);
        match self {
            Norm::L1 => it.sum(),
            Norm::L2 => it.map(|x| x * x).sum::<f64>().sqrt(),
            Norm::LInf => it.fold(0.0, f64::max),
        }
    }
}

fn check_index(i: usize, n: usize) -> Result<()> {
    if i < n {
        Ok(())
    } else {
        Err(Error::Index { index: i, size: n })
    }
}

/// `|q_i − q_j|` for a single linear query.
pub fn pair_sensitivity_linear(q: &[f64], i: usize, j: usize) -> Result<f64> {
    check_index(i, q.len())?;
    check_index(j, q.len())?;
    Ok((q[i] - q[j]).abs())
}

/// `‖Q_{:,i} − Q_{:,j}‖_p`.
pub fn pair_sensitivity_multi(q: &QueryMatrix, i: usize, j: usize, p: Norm) -> Result<f64> {
    let n = q.universe_size();
    check_index(i, n)?;
    check_index(j, n)?;
    Ok(p.of(q.rows().map(|r| r[i] - r[j])))
}

/// Max of [`pair_sensitivity_multi`] over all pairs.
pub fn global_sensitivity(q: &QueryMatrix, p: Norm) -> f64 {
    let n = q.universe_size();
    let mut best = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            best = best.max(p.of(q.rows().map(|r| r[i] - r[j])));
        }
    }
    best
}

/// Row-wise global ℓ₁ sensitivity `max_{i,j} |Q_{k,i} − Q_{k,j}|`, i.e. the
/// coefficient range of each row.
pub fn row_sensitivities(q: &QueryMatrix) -> Vec<f64> {
    q.rows()
        .map(|r| {
            let (lo, hi) = r
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            hi - lo
        })
        .collect()
}

/// Statistical-query sensitivity `‖q(u) − q(v)‖_p / n`, where `qu` and `qv`
/// are the per-row images of universe elements `u` and `v`.
pub fn pair_sensitivity_statistical(qu: &[f64], qv: &[f64], n: usize, p: Norm) -> Result<f64> {
    if n == 0 {
        return Err(Error::Invalid("database size n must be >= 1".into()));
    }
    if qu.len() != qv.len() {
        return Err(Error::Dimension {
            what: "query image length",
            expected: qu.len(),
            got: qv.len(),
        });
    }
    Ok(p.of(qu.iter().zip(qv).map(|(a, b)| a - b)) / n as f64)
}

/// `max_k |Q′_{k,i} − Q′_{k,j}|`; callers multiply by `c` to bound the change of
/// the SmallDB utility.
pub fn utility_sensitivity_bound(qp: &QueryMatrix, i: usize, j: usize) -> Result<f64> {
    pair_sensitivity_multi(qp, i, j, Norm::LInf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Histogram;
    use proptest::prelude::*;

    fn q2() -> QueryMatrix {
        QueryMatrix::from_rows(&[vec![1.0, 2.0, 4.0], vec![0.0, 1.0, 1.0]]).unwrap()
    }

    #[test]
    fn linear_pairs() {
        let q = [1.0, 2.0, 4.0];
        assert_eq!(pair_sensitivity_linear(&q, 0, 2).unwrap(), 3.0);
        assert_eq!(pair_sensitivity_linear(&q, 1, 1).unwrap(), 0.0);
        assert_eq!(pair_sensitivity_linear(&[7.0; 4], 0, 3).unwrap(), 0.0);
        assert!(matches!(
            pair_sensitivity_linear(&q, 0, 3),
            Err(Error::Index { index: 3, size: 3 })
        ));
    }

    #[test]
    fn multi_pairs() {
        assert_eq!(pair_sensitivity_multi(&q2(), 0, 1, Norm::L1).unwrap(), 2.0);
        assert_eq!(pair_sensitivity_multi(&q2(), 2, 2, Norm::L1).unwrap(), 0.0);
        let same = QueryMatrix::from_rows(&[vec![1.0, 1.0, 3.0], vec![2.0, 2.0, 0.0]]).unwrap();
        assert_eq!(pair_sensitivity_multi(&same, 0, 1, Norm::L2).unwrap(), 0.0);
        assert!(pair_sensitivity_multi(&q2(), 5, 0, Norm::L1).is_err());
    }

    #[test]
    fn global() {
        let q = QueryMatrix::single(&[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(global_sensitivity(&q, Norm::L1), 3.0);
        assert_eq!(global_sensitivity(&QueryMatrix::single(&[2.0; 5]).unwrap(), Norm::L1), 0.0);
        assert_eq!(global_sensitivity(&q2(), Norm::L1), 4.0);
        assert_eq!(row_sensitivities(&q2()), vec![3.0, 1.0]);
    }

    #[test]
    fn statistical() {
        let s = pair_sensitivity_statistical(&[1.0, 1.0], &[1.0, -1.0], 10, Norm::L1).unwrap();
        assert!((s - 0.2).abs() < 1e-15);
        let s = pair_sensitivity_statistical(&[1.0, 1.0], &[1.0, -1.0], 20, Norm::L1).unwrap();
        assert!((s - 0.1).abs() < 1e-15);
        assert_eq!(
            pair_sensitivity_statistical(&[1.0, 1.0], &[1.0, 1.0], 3, Norm::L1).unwrap(),
            0.0
        );
        assert!(pair_sensitivity_statistical(&[1.0], &[2.0], 0, Norm::L1).is_err());
    }

    #[test]
    fn utility_bound() {
        assert_eq!(utility_sensitivity_bound(&q2(), 0, 2).unwrap(), 3.0);
        assert_eq!(utility_sensitivity_bound(&q2(), 1, 1).unwrap(), 0.0);
        let q = QueryMatrix::single(&[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(
            utility_sensitivity_bound(&q, 0, 1).unwrap(),
            pair_sensitivity_linear(q.row(0), 0, 1).unwrap()
        );
    }

    fn arb_matrix() -> impl Strategy<Value = QueryMatrix> {
        (1usize..4, 2usize..6).prop_flat_map(|(k, n)| {
            proptest::collection::vec(-3i32..4, k * n)
                .prop_map(move |v| QueryMatrix::new(k, n, v.into_iter().map(f64::from).collect()).unwrap())
        })
    }

    fn arb_norm() -> impl Strategy<Value = Norm> {
        prop_oneof![Just(Norm::L1), Just(Norm::L2), Just(Norm::LInf)]
    }

    proptest! {
        #[test]
        fn symmetric_and_triangle(q in arb_matrix(), p in arb_norm()) {
            let n = q.universe_size();
            for i in 0..n {
                for j in 0..n {
                    let sij = pair_sensitivity_multi(&q, i, j, p).unwrap();
                    prop_assert_eq!(sij, pair_sensitivity_multi(&q, j, i, p).unwrap());
                    for k in 0..n {
                        let via = pair_sensitivity_multi(&q, i, k, p).unwrap()
                            + pair_sensitivity_multi(&q, k, j, p).unwrap();
                        prop_assert!(sij <= via + 1e-12);
                    }
                }
            }
        }

        // Brute force over all neighbours of small histograms.
        #[test]
        fn matches_neighbouring_histograms(
            q in arb_matrix(),
            p in arb_norm(),
            counts in proptest::collection::vec(0u64..3, 6),
        ) {
            let n = q.universe_size();
            let x = Histogram::new(counts[..n].to_vec());
            let qx = q.answer(&x).unwrap();
            for i in 0..n {
                for j in 0..n {
                    if let Some(y) = x.move_one(i, j) {
                        let qy = q.answer(&y).unwrap();
                        let diff = p.of(qx.iter().zip(&qy).map(|(a, b)| a - b));
                        let s = pair_sensitivity_multi(&q, i, j, p).unwrap();
                        prop_assert!((diff - s).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}
