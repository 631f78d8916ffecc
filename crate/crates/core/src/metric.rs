//! Builders and transformations for privacy metrics, plus the metric CSV format.
//!
//! The CSV layout is a first line holding `N` followed by `N` comma-separated
//! rows. Unbounded budgets are written as `inf`.

use std::io::{BufRead, BufReader, Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{PrivacyMetric, UniversePoints, DEFAULT_TOL};

/// Largest universe for which [`metric_closure`] runs (cubic time).
pub const MAX_CLOSURE_SIZE: usize = 512;

/// ℓ₂ distance between points. The result satisfies the triangle inequality
/// and is marked validated.
pub fn euclidean_metric(u: &UniversePoints) -> Result<PrivacyMetric> {
    let n = u.len();
    if n == 0 {
        return Err(Error::Invalid("empty point set".into()));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        l2(&u.points[i], &u.points[j])
                    }
                })
                .collect()
        })
        .collect();
    for (i, row) in rows.iter().enumerate() {
        if let Some(j) = row.iter().enumerate().position(|(j, d)| j != i && *d == 0.0) {
            return Err(Error::Invalid(format!("points {i} and {j} coincide")));
        }
    }
    Ok(PrivacyMetric::from_rows(&rows)?.mark_validated())
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Standard ε-DP as a metric: every distinct pair gets budget `eps`.
pub fn uniform_metric(n: usize, eps: f64) -> Result<PrivacyMetric> {
    if n == 0 {
        return Err(Error::Invalid("universe size must be >= 1".into()));
    }
    check_positive("eps", eps)?;
    Ok(PrivacyMetric::from_pair_fn(n, |_, _| eps)?.mark_validated())
}

/// Distance-threshold policy: budget `eps` for pairs within `threshold` in the
/// base metric, unbounded otherwise. The result is not validated since the
/// triangle inequality generally fails.
pub fn blowfish_metric(base: &PrivacyMetric, threshold: f64, eps: f64) -> Result<PrivacyMetric> {
    check_positive("threshold", threshold)?;
    check_positive("eps", eps)?;
    require_validated(base)?;
    PrivacyMetric::from_pair_fn(base.size(), |i, j| {
        if base.get(i, j) <= threshold {
            eps
        } else {
            f64::INFINITY
        }
    })
}

/// Like [`blowfish_metric`] but grows linearly (`eps · d / threshold`) beyond
/// the threshold instead of jumping to ∞.
pub fn smooth_metric(base: &PrivacyMetric, threshold: f64, eps: f64) -> Result<PrivacyMetric> {
    check_positive("threshold", threshold)?;
    check_positive("eps", eps)?;
    require_validated(base)?;
    PrivacyMetric::from_pair_fn(base.size(), |i, j| {
        let d = base.get(i, j);
        if d <= threshold {
            eps
        } else {
            eps * d / threshold
        }
    })
}

/// Shortest-path closure (Floyd–Warshall). Output satisfies the triangle
/// inequality and is entrywise no larger than the input.
pub fn metric_closure(m: &PrivacyMetric) -> Result<PrivacyMetric> {
    let n = m.size();
    if n > MAX_CLOSURE_SIZE {
        return Err(Error::Invalid(format!(
            "closure limited to N <= {MAX_CLOSURE_SIZE}, got {n}"
        )));
    }
    let report = crate::types::validate_metric(m, DEFAULT_TOL);
    if !report.symmetric || !report.zero_diagonal {
        return Err(Error::Structure(
            "closure needs a symmetric metric with zero diagonal".into(),
        ));
    }
    let mut dist = m.entries().to_vec();
    for k in 0..n {
        for i in 0..n {
            let ik = dist[i * n + k];
            if ik.is_infinite() {
                continue;
            }
            for j in 0..n {
                let through = ik + dist[k * n + j];
                if through < dist[i * n + j] {
                    dist[i * n + j] = through;
                }
            }
        }
    }
    // keep exact symmetry despite rounding order
    for i in 0..n {
        for j in (i + 1)..n {
            let v = dist[i * n + j].min(dist[j * n + i]);
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }
    Ok(PrivacyMetric::from_entries(n, dist)?.mark_validated())
}

/// Entrywise sum, the budget of running two mechanisms on the same data.
pub fn sum_metrics(a: &PrivacyMetric, b: &PrivacyMetric) -> Result<PrivacyMetric> {
    if a.size() != b.size() {
        return Err(Error::Dimension {
            what: "metric size",
            expected: a.size(),
            got: b.size(),
        });
    }
    let entries = a.entries().iter().zip(b.entries()).map(|(x, y)| x + y).collect();
    let out = PrivacyMetric::from_entries(a.size(), entries)?;
    if a.is_validated() && b.is_validated() {
        Ok(out.mark_validated())
    } else {
        Ok(out)
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn require_validated(base: &PrivacyMetric) -> Result<()> {
    if base.is_validated() {
        Ok(())
    } else {
        Err(Error::Invalid("base metric must be validated".into()))
    }
}

fn format_budget(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

fn parse_budget(tok: &str, line: usize) -> Result<f64> {
    let t = tok.trim();
    match t.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        _ => t.parse::<f64>().map_err(|e| Error::Parse {
            line,
            msg: format!("bad budget {t:?}: {e}"),
        }),
    }
}

pub fn write_metric_csv<W: Write>(m: &PrivacyMetric, mut w: W) -> Result<()> {
    writeln!(w, "{}", m.size())?;
    for i in 0..m.size() {
        let row: Vec<String> = m.row(i).iter().copied().map(format_budget).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Parses the metric CSV format. The result is not validated.
pub fn read_metric_csv<R: Read>(r: R) -> Result<PrivacyMetric> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing size header".into(),
    })??;
    let n: usize = header.trim().parse().map_err(|e| Error::Parse {
        line: 1,
        msg: format!("bad size header {header:?}: {e}"),
    })?;
    let mut entries = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| parse_budget(t, line_no))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != n {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {n} entries, found {}", row.len()),
            });
        }
        entries.extend(row);
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse {
            line: rows + 2,
            msg: format!("expected {n} rows, found {rows}"),
        });
    }
    PrivacyMetric::from_entries(n, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_metric;

    fn pts(p: &[&[f64]]) -> UniversePoints {
        UniversePoints::new(p.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn triangle345() -> PrivacyMetric {
        euclidean_metric(&pts(&[&[0.0, 0.0], &[3.0, 0.0], &[0.0, 4.0]])).unwrap()
    }

    #[test]
    fn euclidean_345() {
        let m = triangle345();
        assert_eq!(
            m.to_rows(),
            vec![
                vec![0.0, 3.0, 4.0],
                vec![3.0, 0.0, 5.0],
                vec![4.0, 5.0, 0.0]
            ]
        );
        assert!(m.is_validated());
    }

    #[test]
    fn euclidean_one_dimensional() {
        let m = euclidean_metric(&pts(&[&[0.0], &[1.0]])).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
    }

    #[test]
    fn euclidean_rejects_duplicates() {
        assert!(euclidean_metric(&pts(&[&[1.0, 2.0], &[1.0, 2.0]])).is_err());
    }

    #[test]
    fn uniform_cases() {
        let m = uniform_metric(3, 1.0).unwrap();
        assert!(m.pairs().all(|(_, _, d)| d == 1.0));
        let m = uniform_metric(1, 1.0).unwrap();
        assert_eq!(m.entries(), &[0.0]);
        let m = uniform_metric(50, 0.5).unwrap();
        assert_eq!(m.min_finite_off_diagonal(), Some(0.5));
        assert!(uniform_metric(3, 0.0).is_err());
    }

    #[test]
    fn blowfish_thresholding() {
        let inf = f64::INFINITY;
        let b = blowfish_metric(&triangle345(), 4.0, 1.0).unwrap();
        assert_eq!(
            b.to_rows(),
            vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, inf], vec![1.0, inf, 0.0]]
        );
        assert!(!b.is_validated());
        assert_eq!(
            blowfish_metric(&triangle345(), 5.0, 1.0).unwrap().entries(),
            uniform_metric(3, 1.0).unwrap().entries()
        );
        let far = blowfish_metric(&triangle345(), 2.0, 1.0).unwrap();
        assert!(far.pairs().all(|(_, _, d)| d.is_infinite()));
    }

    #[test]
    fn smooth_values() {
        let s = smooth_metric(&triangle345(), 4.0, 1.0).unwrap();
        assert_eq!(s.get(1, 2), 1.25);
        assert_eq!(s.get(0, 1), 1.0);
        assert_eq!(
            smooth_metric(&triangle345(), 10.0, 1.0).unwrap().entries(),
            uniform_metric(3, 1.0).unwrap().entries()
        );
    }

    #[test]
    fn unvalidated_base_rejected() {
        let raw = PrivacyMetric::from_pair_fn(3, |_, _| 1.0).unwrap();
        assert!(blowfish_metric(&raw, 1.0, 1.0).is_err());
    }

    #[test]
    fn closure_shortest_path() {
        let inf = f64::INFINITY;
        let m = PrivacyMetric::from_rows(&[
            vec![0.0, 1.0, inf],
            vec![1.0, 0.0, 1.0],
            vec![inf, 1.0, 0.0],
        ])
        .unwrap();
        let c = metric_closure(&m).unwrap();
        assert_eq!(
            c.to_rows(),
            vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]]
        );
        assert_eq!(metric_closure(&triangle345()).unwrap().entries(), triangle345().entries());
        let all_inf = PrivacyMetric::from_pair_fn(3, |_, _| inf).unwrap();
        assert_eq!(metric_closure(&all_inf).unwrap().entries(), all_inf.entries());
    }

    #[test]
    fn closure_size_cap() {
        let m = uniform_metric(MAX_CLOSURE_SIZE + 1, 1.0).unwrap();
        assert!(metric_closure(&m).is_err());
    }

    #[test]
    fn sums() {
        let s = sum_metrics(&uniform_metric(3, 1.0).unwrap(), &uniform_metric(3, 2.0).unwrap())
            .unwrap();
        assert_eq!(s.entries(), uniform_metric(3, 3.0).unwrap().entries());
        assert!(s.is_validated());

        let zero = PrivacyMetric::from_pair_fn(3, |_, _| 0.0).unwrap();
        let z = sum_metrics(&zero, &zero).unwrap();
        assert!(z.has_zero_budget());

        let e = sum_metrics(&triangle345(), &uniform_metric(3, 1.0).unwrap()).unwrap();
        assert_eq!(e.get(1, 2), 6.0);
        assert!(validate_metric(&e, 0.0).is_valid());

        assert!(sum_metrics(&zero, &uniform_metric(2, 1.0).unwrap()).is_err());
    }

    #[test]
    fn csv_round_trip_with_inf() {
        let b = blowfish_metric(&triangle345(), 4.0, 0.5).unwrap();
        let mut buf = Vec::new();
        write_metric_csv(&b, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("3\n"));
        assert!(text.contains("inf"));
        let back = read_metric_csv(buf.as_slice()).unwrap();
        assert_eq!(back.entries(), b.entries());
    }

    #[test]
    fn csv_errors_carry_line() {
        let err = read_metric_csv("2\n0,1\n1,x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = read_metric_csv("2\n0,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_points() -> impl Strategy<Value = Vec<Vec<f64>>> {
            proptest::collection::vec(proptest::collection::vec(0.0f64..100.0, 2), 2..12)
        }

        fn arb_graph() -> impl Strategy<Value = PrivacyMetric> {
            (2usize..9).prop_flat_map(|n| {
                proptest::collection::vec(prop_oneof![Just(f64::INFINITY), 0.1f64..10.0], n * n)
                    .prop_map(move |v| PrivacyMetric::from_pair_fn(n, |i, j| v[i * n + j]).unwrap())
            })
        }

        proptest! {
            #[test]
            fn euclidean_always_valid(p in arb_points()) {
                if let Ok(m) = euclidean_metric(&UniversePoints::new(p).unwrap()) {
                    prop_assert!(validate_metric(&m, 1e-12).is_valid());
                }
            }

            #[test]
            fn closure_idempotent_and_shrinking(m in arb_graph()) {
                let c = metric_closure(&m).unwrap();
                let cc = metric_closure(&c).unwrap();
                for (a, b) in c.entries().iter().zip(cc.entries()) {
                    prop_assert!(a == b || (a - b).abs() <= 1e-12);
                }
                for (a, b) in c.entries().iter().zip(m.entries()) {
                    prop_assert!(a <= b);
                }
                prop_assert!(validate_metric(&c, 1e-12).is_valid());
            }

            #[test]
            fn policy_metric_ranges(p in arb_points(), t in 1.0f64..80.0, eps in 0.1f64..3.0) {
                if let Ok(base) = euclidean_metric(&UniversePoints::new(p).unwrap()) {
                    let b = blowfish_metric(&base, t, eps).unwrap();
                    let s = smooth_metric(&base, t, eps).unwrap();
                    for ((_, _, bd), (_, _, sd)) in b.pairs().zip(s.pairs()) {
                        prop_assert!(bd == eps || bd.is_infinite());
                        prop_assert!(sd.is_finite() && sd >= eps);
                    }
                }
            }
        }
    }
}
