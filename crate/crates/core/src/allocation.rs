//! Budgeted binary treatment assignment.
//!
//! Maximize `sum z_i tau_r[i]` subject to `sum z_i tau_c[i] <= budget`.
//! The greedy solver treats individuals in descending ROI order and stops at
//! the first one that does not fit; the exhaustive solver is the oracle for
//! small instances.

use std::cmp::Ordering;
use std::path::Path;

use crate::error::{RdrpError, Result};
use crate::evaluation::rank_descending;

pub const BRUTE_FORCE_MAX: usize = 22;

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationInstance {
    pub tau_r: Vec<f64>,
    pub tau_c: Vec<f64>,
    pub budget: f64,
}

impl AllocationInstance {
    pub fn new(tau_r: Vec<f64>, tau_c: Vec<f64>, budget: f64) -> Result<Self> {
        let inst = AllocationInstance {
            tau_r,
            tau_c,
            budget,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn len(&self) -> usize {
        self.tau_r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_r.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau_r.len() != self.tau_c.len() {
            return Err(RdrpError::Shape {
                expected: self.tau_r.len(),
                got: self.tau_c.len(),
            });
        }
        if !(self.budget >= 0.0) {
            return Err(RdrpError::InvalidArgument(format!("budget = {}", self.budget)));
        }
        for (i, (r, c)) in self.tau_r.iter().zip(&self.tau_c).enumerate() {
            if !(*r > 0.0 && *c > 0.0 && r.is_finite() && c.is_finite()) {
                return Err(RdrpError::AssumptionViolation(format!(
                    "individual {i} has non-positive uplift (tau_r={r}, tau_c={c})"
                )));
            }
        }
        Ok(())
    }

    pub fn roi(&self) -> Vec<f64> {
        self.tau_r.iter().zip(&self.tau_c).map(|(r, c)| r / c).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub z: Vec<bool>,
    pub total_revenue: f64,
    pub total_cost: f64,
}

impl Allocation {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => RdrpError::io(path, io),
            other => RdrpError::Format(format!("{other:?}")),
        })?;
        w.write_record(["index", "z"])?;
        for (i, z) in self.z.iter().enumerate() {
            w.write_record([i.to_string(), u8::from(*z).to_string()])?;
        }
        w.flush().map_err(|e| RdrpError::io(path, e))
    }
}

/// Greedy assignment by true ROI `tau_r / tau_c`.
pub fn greedy_allocate(instance: &AllocationInstance) -> Result<Allocation> {
    instance.validate()?;
    greedy_by_order(instance, &rank_descending(&instance.roi()))
}

/// Greedy assignment ranked by an external score (e.g. a predicted ROI),
/// charged and credited with the instance's uplifts.
pub fn greedy_allocate_by_score(scores: &[f64], instance: &AllocationInstance) -> Result<Allocation> {
    instance.validate()?;
    if scores.len() != instance.len() {
        return Err(RdrpError::Shape {
            expected: instance.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(RdrpError::InvalidArgument("NaN score".into()));
    }
    greedy_by_order(instance, &rank_descending(scores))
}

fn greedy_by_order(instance: &AllocationInstance, order: &[usize]) -> Result<Allocation> {
    let mut z = vec![false; instance.len()];
    let (mut revenue, mut cost) = (0.0, 0.0);
    for &i in order {
        let next = cost + instance.tau_c[i];
        if next > instance.budget {
            break;
        }
        z[i] = true;
        cost = next;
        revenue += instance.tau_r[i];
    }
    Ok(Allocation {
        z,
        total_revenue: revenue,
        total_cost: cost,
    })
}

/// Exact optimum by enumeration; ties go to the lexicographically smallest
/// decision vector.
pub fn brute_force_allocate(instance: &AllocationInstance) -> Result<Allocation> {
    instance.validate()?;
    let n = instance.len();
    if n > BRUTE_FORCE_MAX {
        return Err(RdrpError::SizeLimit {
            n,
            max: BRUTE_FORCE_MAX,
        });
    }
    let mut best: Option<(f64, f64, Vec<bool>)> = None;
    for mask in 0u32..(1u32 << n) {
        let z: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        let (mut revenue, mut cost) = (0.0, 0.0);
        for i in (0..n).filter(|&i| z[i]) {
            revenue += instance.tau_r[i];
            cost += instance.tau_c[i];
        }
        if cost > instance.budget {
            continue;
        }
        let better = match &best {
            None => true,
            Some((r, _, bz)) => match revenue.total_cmp(r) {
                Ordering::Greater => true,
                Ordering::Equal => z < *bz,
                Ordering::Less => false,
            },
        };
        if better {
            best = Some((revenue, cost, z));
        }
    }
    let (total_revenue, total_cost, z) = best.expect("the empty assignment is always feasible");
    Ok(Allocation {
        z,
        total_revenue,
        total_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_item_example() {
        let inst = AllocationInstance::new(vec![0.3, 0.2, 0.1], vec![0.3, 0.4, 0.5], 0.7).unwrap();
        let g = greedy_allocate(&inst).unwrap();
        assert_eq!(g.z, vec![true, true, false]);
        assert!((g.total_revenue - 0.5).abs() < 1e-12);
        assert!((g.total_cost - 0.7).abs() < 1e-12);
        let opt = brute_force_allocate(&inst).unwrap();
        assert!((opt.total_revenue - 0.5).abs() < 1e-12);
    }

    #[test]
    fn budget_extremes() {
        let inst = AllocationInstance::new(vec![0.3, 0.2, 0.1], vec![0.3, 0.4, 0.5], 0.0).unwrap();
        assert!(greedy_allocate(&inst).unwrap().z.iter().all(|z| !z));
        let rich = AllocationInstance { budget: 1.2, ..inst };
        assert!(greedy_allocate(&rich).unwrap().z.iter().all(|&z| z));
    }

    #[test]
    fn greedy_can_be_suboptimal_within_bound() {
        let inst = AllocationInstance::new(vec![0.11, 0.5], vec![0.1, 0.5], 0.5).unwrap();
        let g = greedy_allocate(&inst).unwrap();
        let opt = brute_force_allocate(&inst).unwrap();
        assert!((g.total_revenue - 0.11).abs() < 1e-12);
        assert!((opt.total_revenue - 0.5).abs() < 1e-12);
        assert!(g.total_revenue >= opt.total_revenue - 0.5);
    }

    #[test]
    fn single_affordable_item_is_taken() {
        let inst = AllocationInstance::new(vec![0.2], vec![0.4], 0.4).unwrap();
        assert_eq!(brute_force_allocate(&inst).unwrap().z, vec![true]);
    }

    #[test]
    fn brute_force_tie_break_prefers_lexicographically_smallest() {
        let inst = AllocationInstance::new(vec![0.2, 0.2], vec![0.5, 0.5], 0.5).unwrap();
        assert_eq!(brute_force_allocate(&inst).unwrap().z, vec![false, true]);
    }

    #[test]
    fn rejects_invalid_instances() {
        assert!(matches!(
            AllocationInstance::new(vec![0.1, -0.2], vec![0.1, 0.1], 1.0),
            Err(RdrpError::AssumptionViolation(_))
        ));
        assert!(matches!(
            AllocationInstance::new(vec![0.1], vec![0.0], 1.0),
            Err(RdrpError::AssumptionViolation(_))
        ));
        let big = AllocationInstance::new(vec![0.1; 23], vec![0.1; 23], 1.0).unwrap();
        assert!(matches!(
            brute_force_allocate(&big),
            Err(RdrpError::SizeLimit { n: 23, max: 22 })
        ));
    }

    #[test]
    fn ties_in_roi_follow_index_order() {
        let inst = AllocationInstance::new(vec![0.1, 0.1, 0.1], vec![0.2, 0.2, 0.2], 0.4).unwrap();
        assert_eq!(greedy_allocate(&inst).unwrap().z, vec![true, true, false]);
    }

    #[test]
    fn score_ranking_uses_true_uplifts_for_totals() {
        let inst = AllocationInstance::new(vec![0.3, 0.2, 0.1], vec![0.3, 0.4, 0.5], 0.5).unwrap();
        let a = greedy_allocate_by_score(&[0.0, 0.1, 0.9], &inst).unwrap();
        assert_eq!(a.z, vec![false, false, true]);
        assert_eq!(a.total_revenue, 0.1);
        assert!(greedy_allocate_by_score(&[0.0], &inst).is_err());
    }
}
