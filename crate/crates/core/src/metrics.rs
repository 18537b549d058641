//! Error functionals of the lattice scheme against the reference solution,
//! and the exact identities it satisfies pathwise.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BsdeError, Result};
use crate::generators::{Generator, TerminalCondition};
use crate::lattice::{backward_solve, martingale_along_path, martingale_identity_residual, DiscreteSolution, NodeSolveConfig};
use crate::oracle::ReferenceSolution;
use crate::paths::{build_walk_indexed, FinePath, WalkParams, WalkPath};
use crate::stopping::StoppingRule;

/// Paths are enumerated exhaustively up to this many; sampled beyond.
pub const ENUMERATION_LIMIT: usize = 1 << 16;

/// Max of `|x - y|` over the common grid points in `[0, l]`.
pub fn sup_process_distance(x: &FinePath, y: &FinePath, l: f64) -> Result<f64> {
    if x.grid.len() != y.grid.len() || x.grid.iter().zip(&y.grid).any(|(a, b)| a != b) {
        return Err(BsdeError::Input("paths are not on a common grid".into()));
    }
    Ok(x.grid
        .iter()
        .zip(x.values.iter().zip(&y.values))
        .take_while(|(t, _)| **t <= l)
        .map(|(_, (a, b))| (a - b).abs())
        .fold(0.0, f64::max))
}

pub fn y0_error(sol: &DiscreteSolution, reference: &ReferenceSolution) -> f64 {
    (sol.root_y() - reference.u0()).abs()
}

/// Max over active nodes with `t <= l` of `|y(k, j) - u(position)|`.
pub fn sup_node_error(sol: &DiscreteSolution, reference: &ReferenceSolution, l: f64) -> f64 {
    let lay = &sol.layout;
    sol.nodes()
        .filter(|v| v.status.is_active() && lay.time(v.k) <= l)
        .map(|v| (v.y - reference.value_at(lay.position(v.j))).abs())
        .fold(0.0, f64::max)
}

/// `E[(1/n) sum |z - u'|^2]` over the steps before the earlier of the
/// lattice stopping time and the first exit of `(-a, a)`, computed exactly
/// by propagating path probabilities through the lattice.
pub fn z_l2_distance(sol: &DiscreteSolution, reference: &ReferenceSolution) -> f64 {
    let lay = &sol.layout;
    let a = reference.a;
    let inv_n = 1.0 / lay.n as f64;
    let mut mass = vec![0.0; lay.node_count()];
    mass[0] = 1.0;
    let mut total = 0.0;
    for k in 0..lay.depth {
        for j in lay.nodes(k) {
            let i = lay.index(k, j).expect("node");
            if mass[i] == 0.0 || !lay.status(k, j).is_active() {
                continue;
            }
            let x = lay.position(j);
            if k > 0 && x.abs() > a {
                continue;
            }
            let gap = sol.z[i] - reference.derivative_at(x);
            total += mass[i] * gap * gap * inv_n;
            for child in [j + 1, j - 1] {
                mass[lay.index(k + 1, child).expect("child")] += mass[i] / 2.0;
            }
        }
    }
    total
}

/// The walks a pathwise diagnostic runs over: every increment sequence up
/// to the cap when there are at most `limit`, otherwise `limit` sampled
/// walks from `seed`.
pub fn diagnostic_walks(sol: &DiscreteSolution, limit: usize, seed: u64) -> Result<Vec<WalkPath>> {
    let lay = &sol.layout;
    let horizon = lay.rule.cap.ceil().max(1.0) as u32;
    let params = WalkParams::new(lay.n, horizon, seed)?;
    let steps = params.steps()?;
    if lay.depth < 63 && (1usize << lay.depth) <= limit {
        (0..1u64 << lay.depth)
            .map(|mask| {
                let inc = (0..steps)
                    .map(|s| if s < lay.depth && mask >> s & 1 == 0 { -1 } else { 1 })
                    .collect();
                WalkPath::from_increments(params, inc)
            })
            .collect()
    } else {
        (0..limit as u64).map(|i| build_walk_indexed(params, i)).collect()
    }
}

/// Max over walks and grid times of `|[M]_t - int |z|^2 dA_t|`; the left
/// side is summed from squared increments of `M`, the right from `z`.
pub fn qv_residual(sol: &DiscreteSolution, gen: &Generator, walks: &[WalkPath]) -> Result<f64> {
    let inv_n = 1.0 / sol.n() as f64;
    let per_path: Vec<f64> = walks
        .par_iter()
        .map(|w| {
            let m = martingale_along_path(sol, gen, w)?;
            let trace = sol.along_path(w)?;
            let (mut bracket, mut integral, mut worst) = (0.0f64, 0.0f64, 0.0f64);
            for k in 0..trace.z.len() {
                bracket += (m[k + 1] - m[k]).powi(2);
                integral += trace.z[k] * trace.z[k] * inv_n;
                worst = worst.max((bracket - integral).abs());
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    Ok(per_path.into_iter().fold(0.0, f64::max))
}

/// For each `n`, with `f = 0`: the mean over sampled walks of
/// `sup_k |E[xi | F_{k ^ tau^n}] - u(W_{k ^ tau^n})|`, where `u` is the
/// reference solution extended linearly outside `(-a, a)`.
pub fn martingale_convergence_diag(
    terminal: &TerminalCondition,
    reference: &ReferenceSolution,
    rules: &[(u32, StoppingRule)],
    walks_per_level: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    rules
        .par_iter()
        .map(|(n, rule)| {
            let sol = backward_solve(*n, *rule, &Generator::zero(), terminal, &NodeSolveConfig::default())?;
            let walks = diagnostic_walks(&sol, walks_per_level, seed)?;
            let mut total = 0.0;
            for w in &walks {
                let trace = sol.along_path(w)?;
                let gap = trace
                    .y
                    .iter()
                    .zip(&trace.j)
                    .map(|(y, j)| (y - reference.value_at(sol.layout.position(*j))).abs())
                    .fold(0.0, f64::max);
                total += gap;
            }
            Ok(total / walks.len() as f64)
        })
        .collect()
}

/// One row of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub n: u32,
    #[serde(rename = "Y0_error")]
    pub y0_error: f64,
    pub sup_node_error: f64,
    pub z_l2_error: f64,
    pub qv_residual: f64,
    pub martingale_residual: f64,
    /// Wall-clock seconds.
    pub runtime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub records: Vec<ConvergenceRecord>,
    /// `u(0)` of the reference solution.
    pub reference_u0: f64,
}

impl ConvergenceReport {
    pub fn column<F: Fn(&ConvergenceRecord) -> f64>(&self, f: F) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r).map_err(|e| BsdeError::Input(format!("csv: {e}")))?;
        }
        w.flush().map_err(|e| BsdeError::Input(format!("csv: {e}")))
    }
}

/// Settings of [`convergence_study`] beyond the solver inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyOptions {
    /// Nodes with `t > sup_horizon` are left out of the sup error.
    pub sup_horizon: f64,
    /// Walks for the pathwise identities.
    pub diagnostic_paths: usize,
    pub seed: u64,
    pub node: NodeSolveConfig,
}

/// Solves every level, in parallel, and returns the records in the order of `ns`.
pub fn convergence_study<R>(
    ns: &[u32],
    rule_for: R,
    gen: &Generator,
    terminal: &TerminalCondition,
    reference: &ReferenceSolution,
    opts: &StudyOptions,
) -> Result<ConvergenceReport>
where
    R: Fn(u32) -> Result<StoppingRule> + Sync,
{
    let records = ns
        .par_iter()
        .map(|&n| {
            let start = Instant::now();
            let sol = backward_solve(n, rule_for(n)?, gen, terminal, &opts.node)?;
            let walks = diagnostic_walks(&sol, opts.diagnostic_paths, opts.seed)?;
            Ok(ConvergenceRecord {
                n,
                y0_error: y0_error(&sol, reference),
                sup_node_error: sup_node_error(&sol, reference, opts.sup_horizon),
                z_l2_error: z_l2_distance(&sol, reference),
                qv_residual: qv_residual(&sol, gen, &walks)?,
                martingale_residual: martingale_identity_residual(&sol, gen),
                runtime: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport {
        records,
        reference_u0: reference.u0(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::solve_bvp;

    fn path(values: Vec<f64>) -> FinePath {
        let grid = (0..values.len()).map(|i| i as f64 * 0.25).collect();
        FinePath::new(grid, values, 0).unwrap()
    }

    #[test]
    fn sup_distance_examples() {
        let x = FinePath::brownian(0.25, 16, 3, 0).unwrap();
        assert_eq!(sup_process_distance(&x, &x, 4.0).unwrap(), 0.0);
        let shifted = path(x.values.iter().map(|v| v + 0.75).collect());
        assert!((sup_process_distance(&x, &shifted, 4.0).unwrap() - 0.75).abs() < 1e-15);
        let y = FinePath::brownian(0.25, 16, 4, 0).unwrap();
        let mut scan: f64 = 0.0;
        for i in 0..=8 {
            scan = scan.max((x.values[i] - y.values[i]).abs());
        }
        assert_eq!(sup_process_distance(&x, &y, 2.0).unwrap(), scan);
        assert_eq!(sup_process_distance(&x, &y, 2.0).unwrap(), sup_process_distance(&y, &x, 2.0).unwrap());
        let short = FinePath::brownian(0.25, 8, 3, 0).unwrap();
        assert!(sup_process_distance(&x, &short, 1.0).is_err());
    }

    #[test]
    fn linear_terminal_gives_zero_z_gap() {
        let g = TerminalCondition::linear(1.5, 0.2);
        let reference = solve_bvp(&Generator::zero(), &g, 0.5, 64).unwrap();
        let rule = StoppingRule::aligned(0.5, 16, 2.0, true).unwrap();
        let sol = backward_solve(16, rule, &Generator::zero(), &g, &NodeSolveConfig::default()).unwrap();
        assert!(z_l2_distance(&sol, &reference) < 1e-12);
    }

    #[test]
    fn qv_identity_small() {
        let rule = StoppingRule::aligned(0.5, 4, 2.0, true).unwrap();
        let gen = Generator::sin_z();
        let sol = backward_solve(4, rule, &gen, &TerminalCondition::exp(), &NodeSolveConfig::default()).unwrap();
        let walks = diagnostic_walks(&sol, ENUMERATION_LIMIT, 0).unwrap();
        assert_eq!(walks.len(), 256);
        assert!(qv_residual(&sol, &gen, &walks).unwrap() < 1e-12);

        let one = StoppingRule::deterministic(1.0).unwrap();
        let single = backward_solve(1, one, &Generator::zero(), &TerminalCondition::exp(), &NodeSolveConfig::default()).unwrap();
        let two = diagnostic_walks(&single, ENUMERATION_LIMIT, 0).unwrap();
        assert_eq!(qv_residual(&single, &Generator::zero(), &two).unwrap(), 0.0);

        let c = TerminalCondition::constant(2.0);
        let sol = backward_solve(4, rule, &Generator::zero(), &c, &NodeSolveConfig::default()).unwrap();
        assert_eq!(qv_residual(&sol, &Generator::zero(), &walks).unwrap(), 0.0);
    }

    #[test]
    fn martingale_diag_trivial_cases() {
        let rules: Vec<(u32, StoppingRule)> = [16u32, 64]
            .iter()
            .map(|&n| (n, StoppingRule::aligned(0.5, n, 2.0, true).unwrap()))
            .collect();
        for g in [TerminalCondition::constant(1.3), TerminalCondition::linear(1.0, 0.0)] {
            let reference = solve_bvp(&Generator::zero(), &g, 0.5, 64).unwrap();
            let gaps = martingale_convergence_diag(&g, &reference, &rules, 200, 1).unwrap();
            assert!(gaps.iter().all(|v| *v < 1e-12), "{gaps:?}");
        }
    }

    #[test]
    fn csv_header_and_rows() {
        let report = ConvergenceReport {
            records: vec![ConvergenceRecord {
                n: 4,
                y0_error: 0.5,
                sup_node_error: 0.25,
                z_l2_error: 0.0,
                qv_residual: 0.0,
                martingale_residual: 1e-17,
                runtime: 0.1,
            }],
            reference_u0: 1.0,
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "n,Y0_error,sup_node_error,z_l2_error,qv_residual,martingale_residual,runtime"
        );
        assert_eq!(text.lines().nth(1).unwrap(), "4,0.5,0.25,0.0,0.0,1e-17,0.1");
    }
}
