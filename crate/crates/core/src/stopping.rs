//! First-passage stopping rules with a cap, on lattices and on sampled paths.
//!
//! All rules use the strict convention `x(t) > a`: touching the barrier
//! does not stop.

use crate::error::{BsdeError, Result};
use crate::paths::{clock_steps, resolve_subdivision, FinePath, WalkPath};

/// `tau = inf{t in (0, cap] : |x(t)| > barrier_an} ^ cap` (or `x(t) >
/// barrier_an` when one-sided). `barrier_a` is the continuous-limit level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    pub barrier_a: f64,
    pub barrier_an: f64,
    pub cap: f64,
    pub two_sided: bool,
}

impl StoppingRule {
    pub fn new(barrier_a: f64, barrier_an: f64, cap: f64, two_sided: bool) -> Result<Self> {
        if !(barrier_a > 0.0) {
            return Err(BsdeError::Domain(format!("barrier a must be > 0, got {barrier_a}")));
        }
        if !(barrier_an > 0.0) {
            return Err(BsdeError::Domain(format!("barrier a^n must be > 0, got {barrier_an}")));
        }
        if !(cap > 0.0) || !cap.is_finite() {
            return Err(BsdeError::Domain(format!("cap must be finite and > 0, got {cap}")));
        }
        Ok(Self {
            barrier_a,
            barrier_an,
            cap,
            two_sided,
        })
    }

    /// Lattice-aligned level `a^n = (floor(a sqrt(n)) + 1/2) / sqrt(n)`: no
    /// lattice point sits on it.
    pub fn aligned(barrier_a: f64, n: u32, cap: f64, two_sided: bool) -> Result<Self> {
        Self::new(barrier_a, aligned_level(barrier_a, n), cap, two_sided)
    }

    /// No barrier: `tau = cap` always.
    pub fn deterministic(cap: f64) -> Result<Self> {
        Self::new(f64::INFINITY, f64::INFINITY, cap, true)
    }

    pub fn exceeds(&self, x: f64) -> bool {
        if self.two_sided {
            x.abs() > self.barrier_an
        } else {
            x > self.barrier_an
        }
    }

    /// Smallest lattice index `m >= 0` with `m / sqrt(n) > a^n`, or `None`
    /// when the barrier is infinite.
    pub fn exit_level(&self, n: u32) -> Option<i64> {
        if !self.barrier_an.is_finite() {
            return None;
        }
        let sqrt_n = (n as f64).sqrt();
        let mut m = (self.barrier_an * sqrt_n).floor().max(0.0) as i64;
        while m > 0 && (m - 1) as f64 / sqrt_n > self.barrier_an {
            m -= 1;
        }
        while !(m as f64 / sqrt_n > self.barrier_an) {
            m += 1;
        }
        Some(m)
    }

    /// Whether lattice index `j` is beyond the barrier.
    pub fn exceeds_index(&self, j: i64, n: u32) -> bool {
        match self.exit_level(n) {
            None => false,
            Some(m) if self.two_sided => j.abs() >= m,
            Some(m) => j >= m,
        }
    }

    /// Number of lattice steps in `[0, cap]`.
    pub fn cap_steps(&self, n: u32) -> Result<usize> {
        clock_steps(self.cap, n)
    }
}

pub fn aligned_level(barrier_a: f64, n: u32) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    ((barrier_a * sqrt_n).floor() + 0.5) / sqrt_n
}

/// A realized stopping time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingSample {
    pub tau: f64,
    /// Lattice step, or subdivision index, at which the path stopped.
    pub exit_index: usize,
    /// Path value at `tau`.
    pub exit_value: f64,
    pub capped: bool,
}

/// `inf{t in (0, cap] : x(t) > level} ^ cap` for a path sampled on `grid`
/// (right-continuous between grid points).
pub fn first_passage_functional(grid: &[f64], values: &[f64], level: f64, cap: f64) -> Result<f64> {
    if grid.is_empty() {
        return Err(BsdeError::Domain("first passage over an empty grid".into()));
    }
    if grid.len() != values.len() {
        return Err(BsdeError::Input("grid and values differ in length".into()));
    }
    if !(cap > 0.0) {
        return Err(BsdeError::Domain(format!("cap must be > 0, got {cap}")));
    }
    Ok(grid
        .iter()
        .zip(values)
        .take_while(|(t, _)| **t <= cap)
        .find(|(t, x)| **t > 0.0 && **x > level)
        .map(|(t, _)| *t)
        .unwrap_or(cap))
}

/// `tau^n` of a walk. Depends only on the increments up to the stopping step.
pub fn hitting_time_lattice(walk: &WalkPath, rule: &StoppingRule) -> Result<StoppingSample> {
    let n = walk.n();
    let cap_steps = rule.cap_steps(n)?;
    if cap_steps > walk.steps() {
        return Err(BsdeError::InsufficientPath {
            cap: rule.cap,
            horizon: walk.params.horizon as f64,
        });
    }
    let exit = (1..=cap_steps).find(|&k| rule.exceeds_index(walk.positions[k], n));
    let (k, capped) = match exit {
        Some(k) => (k, false),
        None => (cap_steps, true),
    };
    Ok(StoppingSample {
        tau: k as f64 / n as f64,
        exit_index: k,
        exit_value: walk.values[k],
        capped,
    })
}

/// `tau^n` of the fine path frozen on `subdivision`; the discretized path
/// only moves at subdivision points, so only those are scanned.
pub fn hitting_time_discretized(
    path: &FinePath,
    subdivision: &[f64],
    rule: &StoppingRule,
) -> Result<StoppingSample> {
    let knots = resolve_subdivision(path, subdivision)?;
    hitting_time_knots(path, subdivision, &knots, rule)
}

/// As [`hitting_time_discretized`], with the subdivision already resolved
/// to fine-grid indices.
pub fn hitting_time_knots(
    path: &FinePath,
    subdivision: &[f64],
    knots: &[usize],
    rule: &StoppingRule,
) -> Result<StoppingSample> {
    if rule.cap > path.end_time() * (1.0 + 1e-12) {
        return Err(BsdeError::InsufficientPath {
            cap: rule.cap,
            horizon: path.end_time(),
        });
    }
    for (k, (&t, &i)) in subdivision.iter().zip(knots).enumerate() {
        if t > rule.cap {
            break;
        }
        if t > 0.0 && rule.exceeds(path.values[i]) {
            return Ok(StoppingSample {
                tau: t,
                exit_index: k,
                exit_value: path.values[i],
                capped: false,
            });
        }
    }
    let k = match subdivision.partition_point(|&s| s <= rule.cap) {
        0 => 0,
        p => p - 1,
    };
    Ok(StoppingSample {
        tau: rule.cap,
        exit_index: k,
        exit_value: path.values[knots[k]],
        capped: true,
    })
}

/// Outcome of [`monotone_limit_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneDiagnostic {
    /// Fraction of paths whose `tau^n` is nonincreasing along the levels.
    pub monotone_fraction: f64,
    /// Per level, mean `|tau^n - tau_fine|`.
    pub mean_gaps: Vec<f64>,
}

/// `levels[l][p]` is the stopping time of path `p` at refinement level `l`
/// (coarse to fine); `fine[p]` the same path's stopping time on the fine grid.
pub fn monotone_limit_check(
    levels: &[Vec<StoppingSample>],
    fine: &[StoppingSample],
) -> Result<MonotoneDiagnostic> {
    if levels.is_empty() || fine.is_empty() {
        return Err(BsdeError::Input("no stopping samples".into()));
    }
    if let Some(bad) = levels.iter().find(|l| l.len() != fine.len()) {
        return Err(BsdeError::Input(format!(
            "path sets differ: {} samples at a level vs {} fine",
            bad.len(),
            fine.len()
        )));
    }
    let paths = fine.len();
    let monotone = (0..paths)
        .filter(|&p| levels.windows(2).all(|w| w[1][p].tau <= w[0][p].tau))
        .count();
    let mean_gaps = levels
        .iter()
        .map(|l| {
            l.iter()
                .zip(fine)
                .map(|(s, f)| (s.tau - f.tau).abs())
                .sum::<f64>()
                / paths as f64
        })
        .collect();
    Ok(MonotoneDiagnostic {
        monotone_fraction: monotone as f64 / paths as f64,
        mean_gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{build_walk_indexed, discretize, WalkParams};
    use proptest::prelude::*;

    #[test]
    fn first_passage_examples() {
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.25).collect();
        let zeros = vec![0.0; grid.len()];
        assert_eq!(first_passage_functional(&grid, &zeros, 1.0, 5.0).unwrap(), 5.0);
        assert_eq!(first_passage_functional(&grid, &grid, 0.5, 2.0).unwrap(), 0.75);
        let step: Vec<f64> = grid.iter().map(|&t| if t >= 0.5 { 2.0 } else { 0.0 }).collect();
        assert_eq!(first_passage_functional(&grid, &step, 1.0, 2.0).unwrap(), 0.5);
        assert!(matches!(
            first_passage_functional(&[], &[], 1.0, 2.0),
            Err(BsdeError::Domain(_))
        ));
    }

    #[test]
    fn touching_the_level_does_not_stop() {
        let grid = [0.0, 1.0, 2.0, 3.0];
        let x = [0.0, 1.0, 1.0, 1.5];
        assert_eq!(first_passage_functional(&grid, &x, 1.0, 10.0).unwrap(), 3.0);
    }

    #[test]
    fn aligned_levels() {
        assert_eq!(aligned_level(0.5, 4), 0.75);
        assert_eq!(aligned_level(0.5, 16), 0.625);
        let r = StoppingRule::new(0.5, 0.5, 2.0, true).unwrap();
        assert_eq!(r.exit_level(4), Some(2));
        let r = StoppingRule::aligned(0.5, 4, 2.0, true).unwrap();
        assert_eq!(r.exit_level(4), Some(2));
        assert_eq!(StoppingRule::deterministic(1.0).unwrap().exit_level(4), None);
    }

    #[test]
    fn lattice_examples() {
        for seed in 0..10 {
            let w = build_walk_indexed(WalkParams::new(1, 3, seed).unwrap(), 0).unwrap();
            let s = hitting_time_lattice(&w, &StoppingRule::new(0.5, 0.5, 3.0, true).unwrap()).unwrap();
            assert_eq!(s.tau, 1.0);
            assert!(!s.capped);

            let w = build_walk_indexed(WalkParams::new(4, 1, seed).unwrap(), 0).unwrap();
            let s = hitting_time_lattice(&w, &StoppingRule::new(10.0, 10.0, 1.0, true).unwrap()).unwrap();
            assert_eq!(s.tau, 1.0);
            assert!(s.capped);
        }
    }

    #[test]
    fn lattice_cap_beyond_horizon() {
        let w = build_walk_indexed(WalkParams::new(4, 1, 0).unwrap(), 0).unwrap();
        let err = hitting_time_lattice(&w, &StoppingRule::new(1.0, 1.0, 2.0, true).unwrap()).unwrap_err();
        assert!(matches!(err, BsdeError::InsufficientPath { .. }));
    }

    #[test]
    fn half_of_all_length_eight_sequences_stop_at_one_half() {
        let params = WalkParams::new(4, 2, 0).unwrap();
        let rule = StoppingRule::new(0.5, 0.5, 2.0, true).unwrap();
        let mut at_half = 0;
        for mask in 0u32..256 {
            let inc = (0..8).map(|i| if mask >> i & 1 == 1 { 1 } else { -1 }).collect();
            let w = WalkPath::from_increments(params, inc).unwrap();
            let s = hitting_time_lattice(&w, &rule).unwrap();
            if s.tau == 0.5 {
                at_half += 1;
            }
            if !s.capped {
                assert!(w.values[s.exit_index].abs() > 0.5);
            }
        }
        assert_eq!(at_half, 128);
    }

    #[test]
    fn discretized_examples() {
        let p = FinePath::brownian(1.0 / 64.0, 256, 11, 0).unwrap();
        let rule = StoppingRule::new(0.5, 0.5, 4.0, true).unwrap();
        let s = hitting_time_discretized(&p, &p.grid, &rule).unwrap();
        let abs: Vec<f64> = p.values.iter().map(|v| v.abs()).collect();
        assert_eq!(s.tau, first_passage_functional(&p.grid, &abs, 0.5, 4.0).unwrap());

        let s = hitting_time_discretized(&p, &[0.0], &rule).unwrap();
        assert!(s.capped);
        assert_eq!(s.tau, 4.0);
    }

    #[test]
    fn nested_subdivisions_give_nonincreasing_tau() {
        let a = 0.5;
        for index in 0..50 {
            let p = FinePath::brownian(1.0 / 256.0, 1024, 5, index).unwrap();
            let mut last = f64::INFINITY;
            for n in [4u32, 16, 64, 256] {
                let sub: Vec<f64> = (0..=4 * n).map(|k| k as f64 / n as f64).collect();
                let rule = StoppingRule::new(a, a + 1.0 / n as f64, 4.0, true).unwrap();
                let s = hitting_time_discretized(&p, &sub, &rule).unwrap();
                let d = discretize(&p, &sub).unwrap();
                if !s.capped {
                    assert!(d.value_at(s.tau).abs() > rule.barrier_an);
                }
                assert!(s.tau <= last);
                last = s.tau;
            }
        }
    }

    #[test]
    fn monotone_check_examples() {
        let s = StoppingSample { tau: 1.0, exit_index: 4, exit_value: 1.0, capped: false };
        let d = monotone_limit_check(&[vec![s], vec![s]], &[s]).unwrap();
        assert_eq!(d.monotone_fraction, 1.0);
        assert_eq!(d.mean_gaps, vec![0.0, 0.0]);
        assert!(monotone_limit_check(&[vec![s, s]], &[s]).is_err());
    }

    #[test]
    fn nested_hitting_times_on_deterministic_family() {
        // y(t) = t crosses a = 0.7 transversally; y^n is a staircase within
        // 1/n of y, a^n = a + 1/n.
        let a = 0.7;
        let mut gaps = Vec::new();
        for n in [4u32, 16, 64, 256, 1024] {
            let grid: Vec<f64> = (0..=n * n).map(|k| k as f64 / n as f64).collect();
            let yn: Vec<f64> = grid.iter().map(|&t| t + 0.5 / n as f64).collect();
            let tn = first_passage_functional(&grid, &yn, a + 1.0 / n as f64, n as f64).unwrap();
            gaps.push((tn - a).abs());
        }
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]));
        assert!(*gaps.last().unwrap() < 2e-3);
    }

    proptest! {
        #[test]
        fn strict_inequality_is_stable_under_small_perturbation(
            values in prop::collection::vec(-3.0f64..3.0, 2..60),
            level in -2.0f64..2.0,
        ) {
            let mut values = values;
            values[0] = 0.0;
            let grid: Vec<f64> = (0..values.len()).map(|i| i as f64 * 0.1).collect();
            let cap = *grid.last().unwrap();
            let min_excess = values
                .iter()
                .map(|v| v - level)
                .filter(|d| *d > 0.0)
                .fold(f64::INFINITY, f64::min);
            let base = first_passage_functional(&grid, &values, level, cap).unwrap();
            if min_excess.is_finite() {
                let delta = min_excess / 2.0;
                prop_assert_eq!(base, first_passage_functional(&grid, &values, level + delta, cap).unwrap());
            }
        }

        #[test]
        fn lattice_stopping_ignores_later_increments(seed in any::<u64>(), flip in 0usize..32) {
            let params = WalkParams::new(8, 4, seed).unwrap();
            let rule = StoppingRule::aligned(0.5, 8, 4.0, true).unwrap();
            let w = build_walk_indexed(params, 0).unwrap();
            let s = hitting_time_lattice(&w, &rule).unwrap();
            let mut inc = w.increments.clone();
            let pos = s.exit_index + flip;
            if pos < inc.len() {
                inc[pos] = -inc[pos];
            }
            let mutated = WalkPath::from_increments(params, inc).unwrap();
            prop_assert_eq!(s, hitting_time_lattice(&mutated, &rule).unwrap());
        }
    }
}
