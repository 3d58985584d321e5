//! Cost curves, AUCC and empirical conformal coverage.
//!
//! The cost curve ranks samples by a score and, for each top segment,
//! estimates the incremental value and cost of treating that segment as the
//! treated-minus-control difference in mean outcomes times the segment size.
//! Both axes are normalized by the whole-population totals.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::RctDataset;
use crate::error::{RdrpError, Result};

pub const DEFAULT_BUCKETS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    /// `(normalized cost, normalized value)`, starting at `(0, 0)`.
    pub points: Vec<(f64, f64)>,
    pub buckets: usize,
}

impl CostCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => RdrpError::io(path, io),
            other => RdrpError::Format(format!("{other:?}")),
        })?;
        w.write_record(["bucket", "norm_cost", "norm_value"])?;
        for (k, (c, v)) in self.points.iter().enumerate() {
            w.write_record([k.to_string(), c.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| RdrpError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuccReport {
    pub aucc: f64,
    pub buckets: usize,
    pub n: usize,
}

/// Sample indices sorted by descending score, ties by ascending index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order
}

pub fn cost_curve(scores: &[f64], ds: &RctDataset, buckets: usize) -> Result<CostCurve> {
    if scores.len() != ds.len() {
        return Err(RdrpError::Shape {
            expected: ds.len(),
            got: scores.len(),
        });
    }
    if buckets < 2 {
        return Err(RdrpError::InvalidArgument(format!("buckets = {buckets}, need at least 2")));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(RdrpError::InvalidArgument(format!("score {i} is NaN")));
    }
    if !ds.has_both_arms() {
        return Err(RdrpError::DegenerateDataset(format!(
            "cost curve needs both arms (treated={}, control={})",
            ds.n_treated(),
            ds.n_control()
        )));
    }

    let n = ds.len();
    let order = rank_descending(scores);
    let samples = ds.samples();

    let mut raw = Vec::with_capacity(buckets + 1);
    raw.push((0.0, 0.0));
    let (mut n1, mut n0) = (0usize, 0usize);
    let (mut r1, mut c1, mut r0, mut c0) = (0.0, 0.0, 0.0, 0.0);
    let mut taken = 0;
    for k in 1..=buckets {
        let end = k * n / buckets;
        for &i in &order[taken..end] {
            let s = &samples[i];
            if s.t {
                n1 += 1;
                r1 += s.y_r;
                c1 += s.y_c;
            } else {
                n0 += 1;
                r0 += s.y_r;
                c0 += s.y_c;
            }
        }
        taken = end;
        let point = if n1 > 0 && n0 > 0 {
            let m = end as f64;
            let (n1f, n0f) = (n1 as f64, n0 as f64);
            ((c1 / n1f - c0 / n0f) * m, (r1 / n1f - r0 / n0f) * m)
        } else {
            *raw.last().unwrap()
        };
        raw.push(point);
    }

    let (c_total, v_total) = *raw.last().unwrap();
    if c_total == 0.0 || !c_total.is_finite() {
        return Err(RdrpError::DegenerateNormalization(format!(
            "total incremental cost is {c_total}"
        )));
    }
    if v_total == 0.0 || !v_total.is_finite() {
        return Err(RdrpError::DegenerateNormalization(format!(
            "total incremental value is {v_total}"
        )));
    }
    let points = raw
        .into_iter()
        .map(|(c, v)| (c / c_total, v / v_total))
        .collect();
    Ok(CostCurve { points, buckets })
}

/// Trapezoid area under the curve over the normalized-cost axis.
pub fn aucc(curve: &CostCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

pub fn aucc_report(scores: &[f64], ds: &RctDataset, buckets: usize) -> Result<AuccReport> {
    let curve = cost_curve(scores, ds, buckets)?;
    Ok(AuccReport {
        aucc: aucc(&curve),
        buckets,
        n: ds.len(),
    })
}

/// Fraction of intervals `[lo, hi]` containing `target`.
pub fn empirical_coverage(intervals: &[(f64, f64)], target: f64) -> Result<f64> {
    if intervals.is_empty() {
        return Err(RdrpError::InvalidArgument("no intervals".into()));
    }
    let hits = intervals
        .iter()
        .filter(|(lo, hi)| *lo <= target && target <= *hi)
        .count();
    Ok(hits as f64 / intervals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, OutcomeModel, RctSample, ShiftSpec, SyntheticConfig};

    fn curve(points: &[(f64, f64)]) -> CostCurve {
        CostCurve {
            points: points.to_vec(),
            buckets: points.len() - 1,
        }
    }

    #[test]
    fn aucc_of_reference_polylines() {
        assert_eq!(aucc(&curve(&[(0.0, 0.0), (1.0, 1.0)])), 0.5);
        assert_eq!(aucc(&curve(&[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)])), 1.0);
        assert_eq!(aucc(&curve(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)])), 0.0);
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(empirical_coverage(&[(0.0, 1.0); 5], 0.3).unwrap(), 1.0);
        assert_eq!(empirical_coverage(&[(0.6, 0.6); 5], 0.3).unwrap(), 0.0);
        assert_eq!(empirical_coverage(&[(0.0, 0.5), (0.4, 0.9)], 0.45).unwrap(), 1.0);
        assert_eq!(empirical_coverage(&[(0.0, 0.5), (0.4, 0.9)], 0.8).unwrap(), 0.5);
        assert!(empirical_coverage(&[], 0.3).is_err());
    }

    fn small() -> RctDataset {
        let s = |x: f64, t: bool, y_r: f64, y_c: f64| RctSample {
            x: vec![x],
            t,
            y_r,
            y_c,
        };
        RctDataset::new(vec![
            s(0.0, true, 1.0, 1.0),
            s(1.0, false, 0.0, 0.0),
            s(2.0, true, 0.0, 1.0),
            s(3.0, false, 0.0, 0.0),
        ])
        .unwrap()
    }

    #[test]
    fn curve_endpoints_and_errors() {
        let ds = small();
        let c = cost_curve(&[4.0, 3.0, 2.0, 1.0], &ds, 2).unwrap();
        assert_eq!(c.points[0], (0.0, 0.0));
        assert_eq!(*c.points.last().unwrap(), (1.0, 1.0));
        // top half {0, 1}: value 1 * 2 = 2, cost 1 * 2 = 2; totals value 0.5*4, cost 1*4
        assert_eq!(c.points[1], (0.5, 1.0));

        assert!(matches!(cost_curve(&[1.0], &ds, 2), Err(RdrpError::Shape { .. })));
        assert!(cost_curve(&[1.0; 4], &ds, 1).is_err());
        let treated = ds.select(&[0, 2]);
        assert!(matches!(
            cost_curve(&[1.0, 2.0], &treated, 2),
            Err(RdrpError::DegenerateDataset(_))
        ));
        let flat = ds.select(&[1, 3, 1, 3]);
        let flat = RctDataset::new(
            flat.samples()
                .iter()
                .enumerate()
                .map(|(i, s)| RctSample { t: i % 2 == 0, ..s.clone() })
                .collect(),
        )
        .unwrap();
        assert!(matches!(
            cost_curve(&[1.0; 4], &flat, 2),
            Err(RdrpError::DegenerateNormalization(_))
        ));
    }

    #[test]
    fn empty_arm_segments_carry_the_previous_point() {
        let ds = small();
        // Top quarter is a single treated sample: no control mean yet.
        let c = cost_curve(&[4.0, 3.0, 2.0, 1.0], &ds, 4).unwrap();
        assert_eq!(c.points[1], (0.0, 0.0));
        assert!(c.points.iter().all(|(a, b)| a.is_finite() && b.is_finite()));
    }

    #[test]
    fn aucc_depends_only_on_ranking() {
        let cfg = SyntheticConfig {
            n: 4000,
            d: 3,
            outcome_model: OutcomeModel::Bernoulli,
            noise: 0.1,
            seed: 3,
        };
        let (ds, gt) = generate_synthetic(&cfg, &ShiftSpec::NONE).unwrap();
        let a = aucc(&cost_curve(&gt.roi, &ds, 50).unwrap());
        let transformed: Vec<f64> = gt.roi.iter().map(|r| (5.0 * r).exp() - 3.0).collect();
        let b = aucc(&cost_curve(&transformed, &ds, 50).unwrap());
        assert_eq!(a, b);
    }
}
