//! Picard iteration on the stopped lattice: each sweep is a backward pass
//! with the driver frozen at the previous iterate, starting from zero.

use std::sync::Arc;

use crate::error::{BsdeError, Result};
use crate::generators::{Generator, TerminalCondition};
use crate::lattice::{check_contraction, lattice_conditional_z, DiscreteSolution, LatticeLayout};
use crate::stopping::StoppingRule;

#[derive(Debug, Clone)]
pub struct PicardIterate {
    pub p: usize,
    pub layout: Arc<LatticeLayout>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl PicardIterate {
    pub fn zero(layout: Arc<LatticeLayout>) -> Self {
        let len = layout.node_count();
        Self {
            p: 0,
            layout,
            y: vec![0.0; len],
            z: vec![0.0; len],
        }
    }

    pub fn root_y(&self) -> f64 {
        self.y[0]
    }

    /// Sup over all nodes of `|y - other.y|` and `|z - other.z|`.
    pub fn sup_distance(&self, other: &PicardIterate) -> f64 {
        sup_gap(&self.y, &other.y).max(sup_gap(&self.z, &other.z))
    }

    pub fn sup_distance_to(&self, sol: &DiscreteSolution) -> f64 {
        sup_gap(&self.y, &sol.y).max(sup_gap(&self.z, &sol.z))
    }

    pub fn into_solution(self) -> DiscreteSolution {
        DiscreteSolution {
            layout: self.layout,
            y: self.y,
            z: self.z,
        }
    }
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// One sweep: `y^{p+1}_k = E_k[y^{p+1}_{k+1}] + f(t_k, y^p_k, z^p_{k+1}) / n`
/// on active nodes, `xi^n` on stopping nodes.
pub fn picard_step(prev: &PicardIterate, gen: &Generator, terminal: &TerminalCondition) -> Result<PicardIterate> {
    let lay = &prev.layout;
    let inv_n = 1.0 / lay.n as f64;
    let mut next = PicardIterate::zero(Arc::clone(lay));
    next.p = prev.p + 1;
    for k in (0..=lay.depth).rev() {
        let t = lay.time(k);
        for j in lay.nodes(k) {
            let i = lay.index(k, j).expect("stored node");
            if !lay.status(k, j).is_active() {
                next.y[i] = lay.terminal_value(terminal, k, j);
                continue;
            }
            let up = next.y[lay.index(k + 1, j + 1).expect("child")];
            let down = next.y[lay.index(k + 1, j - 1).expect("child")];
            next.z[i] = lattice_conditional_z(up, down, lay.n, true);
            next.y[i] = (up + down) / 2.0 + gen.try_eval(t, prev.y[i], prev.z[i])? * inv_n;
        }
    }
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub iterate: PicardIterate,
    /// Smallest `p` with `|iterate_{p+1} - iterate_p| <= tol`, or `p_max`.
    pub iterations: usize,
    /// `|iterate_{p+1} - iterate_p|` for `p = 0, 1, ...`.
    pub changes: Vec<f64>,
    pub converged: bool,
}

impl PicardOutcome {
    pub fn final_change(&self) -> f64 {
        self.changes.last().copied().unwrap_or(f64::INFINITY)
    }

    /// Successive gap ratios `changes[p] / changes[p - 1]`.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.changes
            .windows(2)
            .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
            .collect()
    }
}

/// Iterates until two consecutive iterates agree to `tol` in sup norm or
/// `p_max` sweeps have run. Reaching `p_max` is reported through
/// `converged = false`, not an error.
pub fn picard_solve(
    n: u32,
    rule: StoppingRule,
    gen: &Generator,
    terminal: &TerminalCondition,
    p_max: usize,
    tol: f64,
) -> Result<PicardOutcome> {
    if p_max == 0 {
        return Err(BsdeError::Input("p_max must be >= 1".into()));
    }
    if !(tol > 0.0) {
        return Err(BsdeError::Input("tol must be > 0".into()));
    }
    check_contraction(gen, 1.0 / n as f64)?;
    let layout = Arc::new(LatticeLayout::new(n, rule)?);
    let mut current = PicardIterate::zero(layout);
    let mut changes = Vec::new();
    for p in 0..p_max {
        let next = picard_step(&current, gen, terminal)?;
        let change = next.sup_distance(&current);
        changes.push(change);
        current = next;
        if p > 0 && change <= tol {
            return Ok(PicardOutcome {
                iterate: current,
                iterations: p,
                changes,
                converged: true,
            });
        }
    }
    Ok(PicardOutcome {
        iterate: current,
        iterations: p_max,
        changes,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{backward_solve, NodeSolveConfig};

    fn rule(n: u32) -> StoppingRule {
        StoppingRule::aligned(0.5, n, 2.0, true).unwrap()
    }

    #[test]
    fn zero_driver_converges_after_one_sweep() {
        let out = picard_solve(8, rule(8), &Generator::zero(), &TerminalCondition::exp(), 50, 1e-14).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        let exact = backward_solve(8, rule(8), &Generator::zero(), &TerminalCondition::exp(), &NodeSolveConfig::default()).unwrap();
        assert!(out.iterate.sup_distance_to(&exact) < 1e-15);
    }

    #[test]
    fn constant_driver_is_exact_after_first_sweep() {
        let gen = Generator::constant(0.4).unwrap();
        let out = picard_solve(8, rule(8), &gen, &TerminalCondition::exp(), 50, 1e-14).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn converges_to_backward_solution() {
        for gen in [Generator::sin_z(), Generator::linear(-1.0, 0.5, 0.2).unwrap()] {
            let exact = backward_solve(16, rule(16), &gen, &TerminalCondition::exp(), &NodeSolveConfig::default()).unwrap();
            let out = picard_solve(16, rule(16), &gen, &TerminalCondition::exp(), 500, 1e-13).unwrap();
            assert!(out.converged);
            assert!(out.iterate.sup_distance_to(&exact) < 1e-11);
        }
    }

    #[test]
    fn iteration_cap_is_a_warning() {
        let out = picard_solve(16, rule(16), &Generator::sin_z(), &TerminalCondition::exp(), 2, 1e-15).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
        assert_eq!(out.iterate.p, 2);
    }

    #[test]
    fn preconditions() {
        let gen = Generator::linear(-3.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            picard_solve(2, rule(2), &gen, &TerminalCondition::exp(), 5, 1e-10),
            Err(BsdeError::ContractionViolation { .. })
        ));
        assert!(picard_solve(8, rule(8), &Generator::zero(), &TerminalCondition::exp(), 0, 1e-10).is_err());
    }
}
