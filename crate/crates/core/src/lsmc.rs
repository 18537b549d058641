//! Regression Monte Carlo for the scheme driven by Brownian motion frozen on
//! a subdivision:
//!
//! ```text
//! Y_k = Y_{k+1} + f(t_k, Y_k, Z_k) dt_k - Z_k dW_k - dN_k
//! ```
//!
//! The continuation `Y_{k+1}` is regressed jointly on `phi(W_k)` and
//! `phi(W_k) dW_k`; the first block gives `E_k[Y_{k+1}]`, the second `Z_k`,
//! and the least-squares residual is the orthogonal increment `dN_k`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{BsdeError, Result};
use crate::generators::{Generator, TerminalCondition};
use crate::lattice::{check_contraction, solve_node_fixed_point, NodeSolveConfig};
use crate::paths::{resolve_subdivision, FinePath};
use crate::rng::path_rng;
use crate::stopping::{hitting_time_knots, StoppingRule};

const RANK_TOL: f64 = 1e-10;

/// Stream index for bootstrap resampling, far from the path streams.
const BOOTSTRAP_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// `1, x, ..., x^degree` in `x / scale`.
    Monomial { degree: usize },
    /// Indicators of `bins` equal-width cells over the sample range.
    Indicator { bins: usize },
}

impl Basis {
    fn validate(&self) -> Result<()> {
        match *self {
            Basis::Monomial { degree } if degree > 12 => {
                Err(BsdeError::Input(format!("monomial degree {degree} is above 12")))
            }
            Basis::Indicator { bins: 0 } => Err(BsdeError::Input("indicator basis needs >= 1 bin".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsmcConfig {
    pub path_count: usize,
    /// Regression dates, starting at 0 and ending at the cap.
    pub subdivision: Vec<f64>,
    /// Mesh of the simulated Brownian grid; subdivision points must lie on it.
    pub fine_step: f64,
    pub basis: Basis,
    pub seed: u64,
    pub node: NodeSolveConfig,
    /// Bootstrap resamples for the standard error of `Y_0`; 0 disables it.
    pub bootstrap: usize,
    pub keep_trajectories: bool,
}

impl LsmcConfig {
    /// Uniform subdivision of mesh `1 / steps_per_unit` up to `cap`,
    /// simulated on the same grid.
    pub fn uniform(path_count: usize, steps_per_unit: u32, cap: f64, basis: Basis, seed: u64) -> Self {
        let h = 1.0 / steps_per_unit as f64;
        let count = (cap * steps_per_unit as f64).round() as usize;
        Self {
            path_count,
            subdivision: (0..=count).map(|k| k as f64 * h).collect(),
            fine_step: h,
            basis,
            seed,
            node: NodeSolveConfig::default(),
            bootstrap: 500,
            keep_trajectories: false,
        }
    }
}

/// `Y` and `Z` along one simulated path, up to its stopping index.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub w: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsmcResult {
    pub y0: f64,
    pub z0: f64,
    pub stderr: f64,
    pub path_count: usize,
    /// Paths still running on each step `k -> k + 1`.
    pub active_counts: Vec<usize>,
    /// `|sum dN dW| / (|C| |dW|)` on each step with active paths, `C` the
    /// regressed continuation values.
    pub orthogonality: Vec<f64>,
    /// Root mean square of `dN` over all regressed path-steps.
    pub increment_rms: f64,
    /// Steps regressed on the constant basis only.
    pub constant_fallbacks: usize,
    pub mean_exit_time: f64,
    pub trajectories: Option<Vec<Trajectory>>,
}

struct SimulatedPath {
    w: Vec<f64>,
    exit: usize,
    xi: f64,
}

fn simulate(
    index: usize,
    cfg: &LsmcConfig,
    knots: &[usize],
    steps: usize,
    rule: &StoppingRule,
    terminal: &TerminalCondition,
) -> Result<SimulatedPath> {
    let fine = FinePath::brownian(cfg.fine_step, steps, cfg.seed, index as u64)?;
    let stop = hitting_time_knots(&fine, &cfg.subdivision, knots, rule)?;
    let w: Vec<f64> = knots[..=stop.exit_index].iter().map(|&i| fine.values[i]).collect();
    Ok(SimulatedPath {
        xi: terminal.eval(stop.exit_value, stop.tau),
        exit: stop.exit_index,
        w,
    })
}

/// Column values of `phi` at `x` for the design of one step.
struct Design {
    basis: Basis,
    scale: f64,
    lo: f64,
    width: f64,
    /// Indicator cells kept (nonempty).
    cells: Vec<usize>,
}

impl Design {
    fn new(basis: Basis, xs: &[f64]) -> Self {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
        let degenerate = !(hi - lo > 1e-12 * scale.max(1.0));
        let basis = if degenerate { Basis::Monomial { degree: 0 } } else { basis };
        let mut cells = Vec::new();
        let mut width = 1.0;
        if let Basis::Indicator { bins } = basis {
            width = (hi - lo) / bins as f64;
            let mut used = vec![false; bins];
            for &x in xs {
                used[Self::cell(x, lo, width, bins)] = true;
            }
            cells = (0..bins).filter(|&b| used[b]).collect();
        }
        Self {
            basis,
            scale,
            lo,
            width,
            cells,
        }
    }

    fn constant() -> Self {
        Self {
            basis: Basis::Monomial { degree: 0 },
            scale: 1.0,
            lo: 0.0,
            width: 1.0,
            cells: Vec::new(),
        }
    }

    fn cell(x: f64, lo: f64, width: f64, bins: usize) -> usize {
        (((x - lo) / width).floor().max(0.0) as usize).min(bins - 1)
    }

    fn len(&self) -> usize {
        match self.basis {
            Basis::Monomial { degree } => degree + 1,
            Basis::Indicator { .. } => self.cells.len(),
        }
    }

    fn is_constant(&self) -> bool {
        self.basis == Basis::Monomial { degree: 0 }
    }

    fn eval(&self, x: f64, out: &mut [f64]) {
        match self.basis {
            Basis::Monomial { degree } => {
                let s = x / self.scale;
                let mut p = 1.0;
                for v in out.iter_mut().take(degree + 1) {
                    *v = p;
                    p *= s;
                }
            }
            Basis::Indicator { bins } => {
                let c = Self::cell(x, self.lo, self.width, bins);
                for (v, &cell) in out.iter_mut().zip(&self.cells) {
                    *v = if cell == c { 1.0 } else { 0.0 };
                }
            }
        }
    }
}

/// Least squares by Householder QR; rank below the column count is an error.
fn least_squares(x: DMatrix<f64>, y: DVector<f64>, step: usize) -> Result<DVector<f64>> {
    let columns = x.ncols();
    let qr = x.qr();
    let r = qr.r();
    let diag_max = (0..columns).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let rank = (0..columns)
        .filter(|&i| r[(i, i)].abs() > RANK_TOL * diag_max.max(f64::MIN_POSITIVE))
        .count();
    if rank < columns {
        return Err(BsdeError::Rank { step, rank, columns });
    }
    let mut qty = y;
    qr.q_tr_mul(&mut qty);
    let head = qty.rows(0, columns).into_owned();
    r.solve_upper_triangular(&head)
        .ok_or(BsdeError::Rank { step, rank, columns })
}

/// Coefficients `(beta, gamma)` of the joint regression of `c` on
/// `[phi(x), phi(x) dw]`.
fn regress(design: &Design, xs: &[f64], dws: &[f64], cs: &[f64], step: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = design.len();
    let rows = xs.len();
    let mut m = DMatrix::<f64>::zeros(rows, 2 * p);
    let mut phi = vec![0.0; p];
    for r in 0..rows {
        design.eval(xs[r], &mut phi);
        for c in 0..p {
            m[(r, c)] = phi[c];
            m[(r, p + c)] = phi[c] * dws[r];
        }
    }
    let coef = least_squares(m, DVector::from_column_slice(cs), step)?;
    Ok((coef.as_slice()[..p].to_vec(), coef.as_slice()[p..].to_vec()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs the regression scheme. Paths are simulated in parallel from
/// per-index streams of `cfg.seed`, so the result does not depend on the
/// thread count.
pub fn lsmc_solve(
    cfg: &LsmcConfig,
    gen: &Generator,
    terminal: &TerminalCondition,
    rule: &StoppingRule,
) -> Result<LsmcResult> {
    cfg.basis.validate()?;
    cfg.node.validate()?;
    if cfg.path_count < 2 {
        return Err(BsdeError::Input("path_count must be >= 2".into()));
    }
    let sub = &cfg.subdivision;
    let last = *sub.last().ok_or_else(|| BsdeError::Input("empty subdivision".into()))?;
    if sub.len() < 2 || (last - rule.cap).abs() > 1e-12 * rule.cap.max(1.0) {
        return Err(BsdeError::Input(format!(
            "subdivision must run from 0 to the cap {} (ends at {last})",
            rule.cap
        )));
    }
    let max_dt = sub.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    check_contraction(gen, max_dt)?;
    let steps = (last / cfg.fine_step).round() as usize;
    let probe = FinePath::new(
        (0..=steps).map(|i| i as f64 * cfg.fine_step).collect(),
        vec![0.0; steps + 1],
        cfg.seed,
    )?;
    let knots = resolve_subdivision(&probe, sub)?;

    let paths: Vec<SimulatedPath> = (0..cfg.path_count)
        .into_par_iter()
        .map(|i| simulate(i, cfg, &knots, steps, rule, terminal))
        .collect::<Result<_>>()?;

    let last_step = sub.len() - 1;
    let mut y: Vec<f64> = paths.iter().map(|p| p.xi).collect();
    let mut traj: Option<Vec<Trajectory>> = cfg.keep_trajectories.then(|| {
        paths
            .iter()
            .map(|p| Trajectory {
                w: p.w.clone(),
                y: vec![p.xi; p.w.len()],
                z: vec![0.0; p.exit],
            })
            .collect()
    });
    let mut active_counts = vec![0; last_step];
    let mut orthogonality = Vec::new();
    let mut constant_fallbacks = 0;
    let mut n_sq = 0.0;
    let mut n_count = 0usize;
    let mut root = (0.0, 0.0);
    let mut root_sample: (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());

    for k in (0..last_step).rev() {
        let active: Vec<usize> = (0..paths.len()).filter(|&i| paths[i].exit > k).collect();
        active_counts[k] = active.len();
        if active.is_empty() {
            continue;
        }
        let t = sub[k];
        let dt = sub[k + 1] - sub[k];
        let xs: Vec<f64> = active.iter().map(|&i| paths[i].w[k]).collect();
        let dws: Vec<f64> = active.iter().map(|&i| paths[i].w[k + 1] - paths[i].w[k]).collect();
        let cs: Vec<f64> = active.iter().map(|&i| y[i]).collect();

        let mut design = if k == 0 { Design::constant() } else { Design::new(cfg.basis, &xs) };
        if active.len() < 4 * design.len() {
            design = Design::constant();
        }
        if design.is_constant() {
            constant_fallbacks += 1;
        }
        let (beta, gamma) = if active.len() >= 2 {
            regress(&design, &xs, &dws, &cs, k)?
        } else {
            (vec![cs[0]], vec![0.0])
        };

        let mut phi = vec![0.0; design.len()];
        let mut n_dw = 0.0;
        let mut dw2 = 0.0;
        let mut c2 = 0.0;
        for (r, &i) in active.iter().enumerate() {
            design.eval(xs[r], &mut phi);
            let e = dot(&beta, &phi);
            let z = dot(&gamma, &phi);
            let dn = cs[r] - e - z * dws[r];
            n_dw += dn * dws[r];
            n_sq += dn * dn;
            dw2 += dws[r] * dws[r];
            c2 += cs[r] * cs[r];
            let yk = solve_node_fixed_point(e, z, t, gen, dt, &cfg.node)?;
            y[i] = yk;
            if let Some(tr) = traj.as_mut() {
                tr[i].y[k] = yk;
                tr[i].z[k] = z;
            }
            if k == 0 {
                root = (yk, z);
            }
        }
        n_count += active.len();
        if dw2 > 0.0 && c2 > 0.0 {
            orthogonality.push(n_dw.abs() / (c2 * dw2).sqrt());
        }
        if k == 0 {
            root_sample = (dws, cs);
        }
    }

    let stderr = bootstrap_root(cfg, gen, &root_sample.0, &root_sample.1, sub[1] - sub[0])?;
    let mean_exit_time = paths.iter().map(|p| sub[p.exit]).sum::<f64>() / paths.len() as f64;
    Ok(LsmcResult {
        y0: root.0,
        z0: root.1,
        stderr,
        path_count: cfg.path_count,
        active_counts,
        orthogonality,
        constant_fallbacks,
        increment_rms: (n_sq / n_count.max(1) as f64).sqrt(),
        mean_exit_time,
        trajectories: traj,
    })
}

/// Standard deviation of `Y_0` over resamples of the first-step
/// continuation values.
fn bootstrap_root(cfg: &LsmcConfig, gen: &Generator, dws: &[f64], cs: &[f64], dt: f64) -> Result<f64> {
    if cfg.bootstrap < 2 || cs.len() < 2 {
        return Ok(0.0);
    }
    let mut rng = path_rng(cfg.seed, BOOTSTRAP_STREAM);
    let m = cs.len();
    let design = Design::constant();
    let mut estimates = Vec::with_capacity(cfg.bootstrap);
    let bx = vec![0.0; m];
    let mut bdw = vec![0.0; m];
    let mut bc = vec![0.0; m];
    for _ in 0..cfg.bootstrap {
        for r in 0..m {
            let i = rng.random_range(0..m);
            bdw[r] = dws[i];
            bc[r] = cs[i];
        }
        let (beta, gamma) = regress(&design, &bx, &bdw, &bc, 0)?;
        estimates.push(solve_node_fixed_point(beta[0], gamma[0], 0.0, gen, dt, &cfg.node)?);
    }
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (estimates.len() - 1) as f64;
    Ok(var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(basis: Basis) -> LsmcConfig {
        let mut cfg = LsmcConfig::uniform(4000, 16, 1.0, basis, 5);
        cfg.bootstrap = 50;
        cfg
    }

    #[test]
    fn exact_regression_recovers_coefficients() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 10.0 - 2.5).collect();
        let dws: Vec<f64> = (0..50).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.5).collect();
        let cs: Vec<f64> = xs.iter().zip(&dws).map(|(x, d)| 1.0 + 2.0 * x + (0.5 - x) * d).collect();
        let design = Design::new(Basis::Monomial { degree: 1 }, &xs);
        let (beta, gamma) = regress(&design, &xs, &dws, &cs, 3).unwrap();
        let s = design.scale;
        assert!((beta[0] - 1.0).abs() < 1e-12 && (beta[1] - 2.0 * s).abs() < 1e-12);
        assert!((gamma[0] - 0.5).abs() < 1e-12 && (gamma[1] + s).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let err = least_squares(x, DVector::from_vec(vec![1.0, 2.0, 3.0]), 7).unwrap_err();
        assert_eq!(err, BsdeError::Rank { step: 7, rank: 1, columns: 2 });
    }

    #[test]
    fn empty_indicator_cells_are_dropped() {
        let xs = [0.0, 0.1, 0.9, 1.0];
        let design = Design::new(Basis::Indicator { bins: 5 }, &xs);
        assert_eq!(design.cells, vec![0, 4]);
    }

    #[test]
    fn zero_driver_exit_expectation() {
        let rule = StoppingRule::new(0.5, 0.5, 1.0, true).unwrap();
        let g = TerminalCondition::linear(1.0, 2.0);
        let res = lsmc_solve(&small(Basis::Monomial { degree: 2 }), &Generator::zero(), &g, &rule).unwrap();
        // Optional stopping: E[W_tau + 2] = 2 for any bounded tau.
        assert!((res.y0 - 2.0).abs() < 4.0 * res.stderr.max(1e-3), "{} {}", res.y0, res.stderr);
        assert!(res.orthogonality.iter().all(|o| *o < 1e-10));
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let rule = StoppingRule::new(0.5, 0.5, 1.0, true).unwrap();
        let cfg = small(Basis::Indicator { bins: 6 });
        let a = lsmc_solve(&cfg, &Generator::sin_z(), &TerminalCondition::exp(), &rule).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool
            .install(|| lsmc_solve(&cfg, &Generator::sin_z(), &TerminalCondition::exp(), &rule))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trajectories_are_frozen_after_exit() {
        let rule = StoppingRule::new(0.3, 0.3, 1.0, true).unwrap();
        let mut cfg = small(Basis::Monomial { degree: 2 });
        cfg.path_count = 500;
        cfg.keep_trajectories = true;
        let g = TerminalCondition::exp();
        let res = lsmc_solve(&cfg, &Generator::sin_z(), &g, &rule).unwrap();
        for tr in res.trajectories.unwrap() {
            assert_eq!(tr.y.len(), tr.w.len());
            assert_eq!(tr.z.len(), tr.w.len() - 1);
            assert!((tr.y[0] - res.y0).abs() < 1e-12);
        }
    }

    #[test]
    fn input_checks() {
        let rule = StoppingRule::new(0.5, 0.5, 1.0, true).unwrap();
        let mut cfg = small(Basis::Monomial { degree: 2 });
        cfg.subdivision.pop();
        assert!(lsmc_solve(&cfg, &Generator::zero(), &TerminalCondition::exp(), &rule).is_err());
        let cfg = small(Basis::Indicator { bins: 0 });
        assert!(lsmc_solve(&cfg, &Generator::zero(), &TerminalCondition::exp(), &rule).is_err());
        let cfg = LsmcConfig::uniform(100, 1, 1.0, Basis::Monomial { degree: 1 }, 0);
        let steep = Generator::linear(-2.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            lsmc_solve(&cfg, &steep, &TerminalCondition::exp(), &rule),
            Err(BsdeError::ContractionViolation { .. })
        ));
    }
}
