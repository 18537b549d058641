//! Independent reference values: the two-point boundary value problem
//! `u''/2 + f(u, u') = 0` on `(-a, a)` with `u(+-a) = g(+-a)`, brute-force
//! enumeration of every increment sequence of the walk, and the exit-time
//! moments of the simple random walk.

use crate::error::{BsdeError, Result};
use crate::generators::{Generator, TerminalCondition};
use crate::lattice::{lattice_conditional_z, solve_node_y, NodeSolveConfig};
use crate::stopping::StoppingRule;

/// Largest number of steps [`enumerate_lattice_expectation`] will expand.
pub const MAX_ENUMERATION_STEPS: usize = 24;

const DERIVATIVE_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvpOptions {
    /// Stop Newton once the sup residual of the `h^2`-scaled system is below this.
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for BvpOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-13,
            max_newton: 100,
        }
    }
}

/// Grid values of the boundary value problem solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub a: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub derivative: Vec<f64>,
    pub newton_iterations: usize,
    /// Sup residual of the scaled discrete system at the returned values.
    pub residual: f64,
}

impl ReferenceSolution {
    fn h(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    fn interpolate(&self, data: &[f64], x: f64) -> f64 {
        let last = self.grid.len() - 1;
        let s = ((x + self.a) / self.h()).floor();
        let i = if s < 0.0 { 0 } else { (s as usize).min(last - 1) };
        let w = (x - self.grid[i]) / self.h();
        data[i] + w * (data[i + 1] - data[i])
    }

    /// Piecewise-linear interpolant, extended linearly beyond `+-a`.
    pub fn value_at(&self, x: f64) -> f64 {
        self.interpolate(&self.values, x)
    }

    pub fn derivative_at(&self, x: f64) -> f64 {
        self.interpolate(&self.derivative, x)
    }

    pub fn u0(&self) -> f64 {
        self.value_at(0.0)
    }
}

fn check_bvp_inputs(gen: &Generator, g: &TerminalCondition, a: f64, grid_size: usize) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(BsdeError::Oracle(format!("barrier a = {a} must be positive and finite")));
    }
    if grid_size < 8 {
        return Err(BsdeError::Oracle(format!("grid_size {grid_size} must be >= 8")));
    }
    if gen.time_dependent {
        return Err(BsdeError::Oracle(format!(
            "driver `{}` depends on time; the reference problem is stationary",
            gen.name
        )));
    }
    if g.depends_on_time() {
        return Err(BsdeError::Oracle(format!(
            "terminal `{}` depends on time; the reference problem is stationary",
            g.name
        )));
    }
    Ok(())
}

/// Second-order central differences on `grid_size` intervals, solved by
/// damped Newton with a tridiagonal Jacobian.
pub fn solve_bvp(gen: &Generator, g: &TerminalCondition, a: f64, grid_size: usize) -> Result<ReferenceSolution> {
    solve_bvp_with(gen, g, a, grid_size, &BvpOptions::default())
}

pub fn solve_bvp_with(
    gen: &Generator,
    g: &TerminalCondition,
    a: f64,
    grid_size: usize,
    opts: &BvpOptions,
) -> Result<ReferenceSolution> {
    check_bvp_inputs(gen, g, a, grid_size)?;
    let n = grid_size;
    let h = 2.0 * a / n as f64;
    let grid: Vec<f64> = (0..=n).map(|i| -a + i as f64 * h).collect();
    let left = g.eval(-a, 0.0);
    let right = g.eval(a, 0.0);
    if !left.is_finite() || !right.is_finite() {
        return Err(BsdeError::Oracle("boundary data is not finite".into()));
    }
    let mut u: Vec<f64> = (0..=n).map(|i| left + (right - left) * i as f64 / n as f64).collect();
    let f = |y: f64, z: f64| -> Result<f64> { gen.try_eval(0.0, y, z) };

    let residual = |u: &[f64]| -> Result<Vec<f64>> {
        let mut r = vec![0.0; n - 1];
        for i in 1..n {
            let z = (u[i + 1] - u[i - 1]) / (2.0 * h);
            r[i - 1] = u[i + 1] - 2.0 * u[i] + u[i - 1] + 2.0 * h * h * f(u[i], z)?;
        }
        Ok(r)
    };
    let sup = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut r = residual(&u)?;
    let mut norm = sup(&r);
    let mut iterations = 0;
    while norm > opts.newton_tol {
        if iterations == opts.max_newton {
            return Err(BsdeError::Oracle(format!(
                "Newton did not converge in {} iterations (residual {norm:e})",
                opts.max_newton
            )));
        }
        iterations += 1;
        let mut lower = vec![0.0; n - 1];
        let mut diag = vec![0.0; n - 1];
        let mut upper = vec![0.0; n - 1];
        for i in 1..n {
            let z = (u[i + 1] - u[i - 1]) / (2.0 * h);
            let d = DERIVATIVE_STEP;
            let fy = (f(u[i] + d, z)? - f(u[i] - d, z)?) / (2.0 * d);
            let fz = (f(u[i], z + d)? - f(u[i], z - d)?) / (2.0 * d);
            diag[i - 1] = -2.0 + 2.0 * h * h * fy;
            lower[i - 1] = 1.0 - h * fz;
            upper[i - 1] = 1.0 + h * fz;
        }
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
        let mut lambda = 1.0;
        let (trial, trial_r, trial_norm) = loop {
            let mut trial = u.clone();
            for i in 1..n {
                trial[i] += lambda * delta[i - 1];
            }
            let tr = residual(&trial)?;
            let tn = sup(&tr);
            if tn < norm || lambda < 1.0 / 1024.0 {
                break (trial, tr, tn);
            }
            lambda /= 2.0;
        };
        if trial_norm >= norm {
            if norm > 1e-10 {
                return Err(BsdeError::Oracle(format!("Newton stalled at residual {norm:e}")));
            }
            break;
        }
        u = trial;
        r = trial_r;
        norm = trial_norm;
        if sup(&delta) * lambda <= f64::EPSILON * sup(&u).max(1.0) {
            break;
        }
    }
    let mut derivative = vec![0.0; n + 1];
    derivative[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
    derivative[n] = (3.0 * u[n] - 4.0 * u[n - 1] + u[n - 2]) / (2.0 * h);
    for i in 1..n {
        derivative[i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
    }
    Ok(ReferenceSolution {
        a,
        grid,
        values: u,
        derivative,
        newton_iterations: iterations,
        residual: norm,
    })
}

/// Richardson combination `(4 u_{h/2} - u_h) / 3` of two second-order solves,
/// reported on the coarse grid.
pub fn solve_bvp_extrapolated(
    gen: &Generator,
    g: &TerminalCondition,
    a: f64,
    grid_size: usize,
) -> Result<ReferenceSolution> {
    let coarse = solve_bvp(gen, g, a, grid_size)?;
    let fine = solve_bvp(gen, g, a, 2 * grid_size)?;
    let values: Vec<f64> = coarse
        .values
        .iter()
        .enumerate()
        .map(|(i, c)| (4.0 * fine.values[2 * i] - c) / 3.0)
        .collect();
    let derivative: Vec<f64> = coarse
        .derivative
        .iter()
        .enumerate()
        .map(|(i, c)| (4.0 * fine.derivative[2 * i] - c) / 3.0)
        .collect();
    Ok(ReferenceSolution {
        values,
        derivative,
        newton_iterations: coarse.newton_iterations + fine.newton_iterations,
        residual: coarse.residual.max(fine.residual),
        ..coarse
    })
}

/// Thomas algorithm for `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = diag.len();
    if m == 0 || lower.len() != m || upper.len() != m || rhs.len() != m {
        return Err(BsdeError::Oracle("tridiagonal system has inconsistent sizes".into()));
    }
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut pivot = diag[0];
    if pivot == 0.0 {
        return Err(BsdeError::Oracle("singular tridiagonal system".into()));
    }
    c[0] = upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..m {
        pivot = diag[i] - lower[i] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(BsdeError::Oracle("singular tridiagonal system".into()));
        }
        c[i] = upper[i] / pivot;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / pivot;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = d[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

/// `u(0)` for `f = -mu y + c`, `g = 0`: `(c/mu)(1 - cosh(sqrt(2 mu) x)/cosh(sqrt(2 mu) a))`.
pub fn linear_driver_closed_form(mu: f64, c: f64, a: f64, x: f64) -> f64 {
    let k = (2.0 * mu).sqrt();
    (c / mu) * (1.0 - (k * x).cosh() / (k * a).cosh())
}

/// `E[g(W_tau)]` for the symmetric exit of `(-a, a)` from 0.
pub fn exit_value_expectation(g: &TerminalCondition, a: f64) -> f64 {
    (g.eval(a, 0.0) + g.eval(-a, 0.0)) / 2.0
}

/// Expected number of steps for the simple random walk started at 0 to
/// reach `+-m`, from the absorbing chain's linear system.
pub fn absorption_expected_steps(m: i64) -> Result<f64> {
    if m < 1 {
        return Err(BsdeError::Oracle("exit level must be >= 1".into()));
    }
    // States -m+1 ..= m-1: e_j - (e_{j-1} + e_{j+1})/2 = 1.
    let size = (2 * m - 1) as usize;
    let lower = vec![-0.5; size];
    let upper = vec![-0.5; size];
    let diag = vec![1.0; size];
    let rhs = vec![1.0; size];
    let e = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
    Ok(e[(m - 1) as usize])
}

/// Quantity averaged over all `2^N` increment sequences.
pub enum Functional<'a> {
    /// `xi^n = g(W_tau, tau)` at the stopping node of each sequence.
    TerminalValue(&'a TerminalCondition),
    /// `y_0` by recursion over the full (non-recombining) binary tree.
    BackwardRecursion {
        gen: &'a Generator,
        terminal: &'a TerminalCondition,
        cfg: NodeSolveConfig,
    },
    /// Any function of the increment sequence.
    Custom(&'a (dyn Fn(&[i8]) -> f64 + Sync)),
}

/// Exact expectation over the walk with `N = n * cap` steps, `N <= 24`.
pub fn enumerate_lattice_expectation(n: u32, rule: &StoppingRule, functional: &Functional) -> Result<f64> {
    let steps = rule.cap_steps(n)?;
    if steps > MAX_ENUMERATION_STEPS {
        return Err(BsdeError::Size(format!(
            "enumeration of {steps} steps exceeds {MAX_ENUMERATION_STEPS}"
        )));
    }
    let sqrt_n = (n as f64).sqrt();
    let weight = 0.5f64.powi(steps as i32);
    match functional {
        Functional::TerminalValue(g) => {
            let mut total = 0.0;
            for mask in 0u64..(1u64 << steps) {
                let (k, j) = stop_of_mask(mask, steps, rule, sqrt_n);
                total += g.eval(j as f64 / sqrt_n, k as f64 / n as f64);
            }
            Ok(total * weight)
        }
        Functional::Custom(h) => {
            let mut total = 0.0;
            let mut inc = vec![0i8; steps];
            for mask in 0u64..(1u64 << steps) {
                for (s, e) in inc.iter_mut().enumerate() {
                    *e = if mask >> s & 1 == 1 { 1 } else { -1 };
                }
                total += h(&inc);
            }
            Ok(total * weight)
        }
        Functional::BackwardRecursion { gen, terminal, cfg } => {
            let tree = TreeRecursion {
                n,
                steps,
                sqrt_n,
                rule,
                gen,
                terminal,
                cfg,
            };
            tree.value(0, 0, None)
        }
    }
}

fn stop_of_mask(mask: u64, steps: usize, rule: &StoppingRule, sqrt_n: f64) -> (usize, i64) {
    let mut j = 0i64;
    for s in 0..steps {
        j += if mask >> s & 1 == 1 { 1 } else { -1 };
        if rule.exceeds(j as f64 / sqrt_n) {
            return (s + 1, j);
        }
    }
    (steps, j)
}

struct TreeRecursion<'a> {
    n: u32,
    steps: usize,
    sqrt_n: f64,
    rule: &'a StoppingRule,
    gen: &'a Generator,
    terminal: &'a TerminalCondition,
    cfg: &'a NodeSolveConfig,
}

impl TreeRecursion<'_> {
    /// Value at depth `k`, position `j`; `stopped` is the stopping node once reached.
    fn value(&self, k: usize, j: i64, stopped: Option<(usize, i64)>) -> Result<f64> {
        let here = stopped.or_else(|| {
            let exceeded = k > 0 && self.rule.exceeds(j as f64 / self.sqrt_n);
            (exceeded || k == self.steps).then_some((k, j))
        });
        if k == self.steps {
            let (ks, js) = here.expect("leaf is a stopping node");
            return Ok(self.terminal.eval(js as f64 / self.sqrt_n, ks as f64 / self.n as f64));
        }
        let up = self.value(k + 1, j + 1, here)?;
        let down = self.value(k + 1, j - 1, here)?;
        if here.is_some() {
            return Ok((up + down) / 2.0);
        }
        let z = lattice_conditional_z(up, down, self.n, true);
        solve_node_y((up + down) / 2.0, z, k as f64 / self.n as f64, self.gen, self.n, self.cfg)
    }
}
