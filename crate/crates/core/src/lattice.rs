//! Backward induction for the random-walk BSDE
//!
//! ```text
//! y_k = y_{k+1} + f(k/n, y_k, z_{k+1}) / n - z_{k+1} eps_{k+1} / sqrt(n),   tau^n > k/n
//! y_k = xi^n,  z_{k+1} = 0                                                   otherwise
//! ```
//!
//! on the recombining lattice. With a first-passage rule, `(k, j)` plus the
//! stopped flag is a sufficient state: a path that has stopped sits at the
//! exit index `|j| = m` forever, so only the band `|j| <= m` is stored and
//! the nodes on its edge are exit nodes.

use std::sync::Arc;

use crate::error::{BsdeError, Result};
use crate::generators::{Generator, TerminalCondition};
use crate::paths::WalkPath;
use crate::stopping::{hitting_time_lattice, StoppingRule, StoppingSample};

/// Largest lattice the solvers will allocate.
pub const MAX_NODES: usize = 200_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    /// `tau^n > k/n`: the step from `k` to `k + 1` is taken.
    Active,
    /// The path first exceeded the barrier at this step.
    Exited,
    /// The cap was reached without exceeding the barrier.
    Capped,
}

impl NodeStatus {
    pub fn is_active(self) -> bool {
        self == NodeStatus::Active
    }
}

/// Node set of the stopped lattice for one `(n, rule)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeLayout {
    pub n: u32,
    pub sqrt_n: f64,
    /// Number of steps up to the cap.
    pub depth: usize,
    pub rule: StoppingRule,
    pub exit_level: Option<i64>,
    lo: Vec<i64>,
    hi: Vec<i64>,
    offset: Vec<usize>,
    total: usize,
}

impl LatticeLayout {
    pub fn new(n: u32, rule: StoppingRule) -> Result<Self> {
        if n == 0 {
            return Err(BsdeError::Domain("lattice scale n must be >= 1".into()));
        }
        let depth = rule.cap_steps(n)?;
        if depth == 0 {
            return Err(BsdeError::Domain(format!(
                "cap {} is shorter than one step 1/{n}",
                rule.cap
            )));
        }
        let exit_level = rule.exit_level(n);
        let mut lo = Vec::with_capacity(depth + 1);
        let mut hi = Vec::with_capacity(depth + 1);
        let mut offset = Vec::with_capacity(depth + 2);
        let mut total = 0usize;
        for k in 0..=depth {
            let kk = k as i64;
            let (mut l, mut h) = match exit_level {
                None => (-kk, kk),
                Some(m) if rule.two_sided => (-kk.min(m), kk.min(m)),
                Some(m) => (-kk, kk.min(m)),
            };
            if (l + kk).rem_euclid(2) != 0 {
                l += 1;
            }
            if (h + kk).rem_euclid(2) != 0 {
                h -= 1;
            }
            lo.push(l);
            hi.push(h);
            offset.push(total);
            total += ((h - l) / 2 + 1) as usize;
            if total > MAX_NODES {
                return Err(BsdeError::Size(format!(
                    "lattice with n = {n} and {depth} steps exceeds {MAX_NODES} nodes"
                )));
            }
        }
        offset.push(total);
        Ok(Self {
            n,
            sqrt_n: (n as f64).sqrt(),
            depth,
            rule,
            exit_level,
            lo,
            hi,
            offset,
            total,
        })
    }

    pub fn node_count(&self) -> usize {
        self.total
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.n as f64
    }

    pub fn position(&self, j: i64) -> f64 {
        j as f64 / self.sqrt_n
    }

    /// Stored position indices at step `k`, lowest first.
    pub fn nodes(&self, k: usize) -> impl Iterator<Item = i64> {
        let (l, h) = (self.lo[k], self.hi[k]);
        (0..=((h - l) / 2)).map(move |i| l + 2 * i)
    }

    pub fn contains(&self, k: usize, j: i64) -> bool {
        k <= self.depth && j >= self.lo[k] && j <= self.hi[k] && (j - self.lo[k]) % 2 == 0
    }

    pub fn index(&self, k: usize, j: i64) -> Option<usize> {
        self.contains(k, j)
            .then(|| self.offset[k] + ((j - self.lo[k]) / 2) as usize)
    }

    pub fn status(&self, k: usize, j: i64) -> NodeStatus {
        if k > 0 && self.rule.exceeds_index(j, self.n) {
            NodeStatus::Exited
        } else if k == self.depth {
            NodeStatus::Capped
        } else {
            NodeStatus::Active
        }
    }

    /// `xi^n` at a stopping node: `g` at the node's position and time.
    pub fn terminal_value(&self, terminal: &TerminalCondition, k: usize, j: i64) -> f64 {
        terminal.eval(self.position(j), self.time(k))
    }
}

/// Fixed-point tolerance and iteration cap for the implicit node equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeSolveConfig {
    pub fixed_point_tol: f64,
    pub max_iters: usize,
    /// Starting point is `m + init_offset`.
    pub init_offset: f64,
}

impl Default for NodeSolveConfig {
    fn default() -> Self {
        Self {
            fixed_point_tol: 1e-14,
            max_iters: 200,
            init_offset: 0.0,
        }
    }
}

impl NodeSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fixed_point_tol > 0.0) {
            return Err(BsdeError::Input("fixed_point_tol must be > 0".into()));
        }
        if self.max_iters == 0 {
            return Err(BsdeError::Input("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// `sqrt(n) E[y_{k+1} eps_{k+1} | node]` on active nodes, 0 otherwise.
pub fn lattice_conditional_z(y_up: f64, y_down: f64, n: u32, active: bool) -> f64 {
    if active {
        (n as f64).sqrt() * (y_up - y_down) / 2.0
    } else {
        0.0
    }
}

pub fn check_contraction(gen: &Generator, step: f64) -> Result<()> {
    let factor = gen.lipschitz * step;
    if factor >= 1.0 {
        Err(BsdeError::ContractionViolation { factor })
    } else {
        Ok(())
    }
}

/// Fixed point of `y -> mean + step * f(t, y, z)` by plain Picard iteration
/// from `mean + cfg.init_offset`.
pub fn solve_node_fixed_point(
    mean: f64,
    z: f64,
    t: f64,
    gen: &Generator,
    step: f64,
    cfg: &NodeSolveConfig,
) -> Result<f64> {
    check_contraction(gen, step)?;
    let mut y = mean + cfg.init_offset;
    let mut last_step = f64::INFINITY;
    for _ in 0..cfg.max_iters {
        let next = mean + step * gen.try_eval(t, y, z)?;
        last_step = (next - y).abs();
        y = next;
        if last_step <= cfg.fixed_point_tol * y.abs().max(1.0) {
            return Ok(y);
        }
    }
    Err(BsdeError::NonConvergence {
        iterations: cfg.max_iters,
        last_step,
    })
}

/// Node equation of the lattice: `y = m + f(t, y, z) / n`, with `m` the
/// conditional mean of the two children.
pub fn solve_node_y(
    m: f64,
    z: f64,
    t: f64,
    gen: &Generator,
    n: u32,
    cfg: &NodeSolveConfig,
) -> Result<f64> {
    solve_node_fixed_point(m, z, t, gen, 1.0 / n as f64, cfg)
}

/// Adapted solution on the stopped lattice. `z` at node `(k, j)` is the
/// value on the step `k -> k + 1`; it is 0 on stopping nodes.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    pub layout: Arc<LatticeLayout>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

/// One stored node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeValue {
    pub k: usize,
    pub j: i64,
    pub status: NodeStatus,
    pub y: f64,
    pub z: f64,
}

/// `y` and `z` read along one walk, frozen after `tau^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrace {
    pub stop: StoppingSample,
    /// `y_k` for `k = 0..=depth`.
    pub y: Vec<f64>,
    /// `z` on the step `k -> k + 1`, for `k = 0..depth`.
    pub z: Vec<f64>,
    /// Lattice index visited at each step (frozen after stopping).
    pub j: Vec<i64>,
}

impl DiscreteSolution {
    pub fn n(&self) -> u32 {
        self.layout.n
    }

    pub fn root_y(&self) -> f64 {
        self.y[0]
    }

    pub fn node(&self, k: usize, j: i64) -> Option<NodeValue> {
        let i = self.layout.index(k, j)?;
        Some(NodeValue {
            k,
            j,
            status: self.layout.status(k, j),
            y: self.y[i],
            z: self.z[i],
        })
    }

    /// All stored nodes, step by step.
    pub fn nodes(&self) -> impl Iterator<Item = NodeValue> + '_ {
        (0..=self.layout.depth).flat_map(move |k| {
            self.layout
                .nodes(k)
                .map(move |j| self.node(k, j).expect("stored node"))
        })
    }

    /// `xi^n` at a stopping node.
    pub fn terminal_xi(&self, k: usize, j: i64) -> Option<f64> {
        self.node(k, j).filter(|v| !v.status.is_active()).map(|v| v.y)
    }

    pub fn along_path(&self, walk: &WalkPath) -> Result<PathTrace> {
        let lay = &self.layout;
        if walk.n() != lay.n {
            return Err(BsdeError::Input(format!(
                "walk scale {} differs from lattice scale {}",
                walk.n(),
                lay.n
            )));
        }
        let stop = hitting_time_lattice(walk, &lay.rule)?;
        let mut y = Vec::with_capacity(lay.depth + 1);
        let mut z = Vec::with_capacity(lay.depth);
        let mut js = Vec::with_capacity(lay.depth + 1);
        for k in 0..=lay.depth {
            let kk = k.min(stop.exit_index);
            let j = walk.positions[kk];
            let i = lay.index(kk, j).expect("path stays in the band until it stops");
            y.push(self.y[i]);
            js.push(j);
            if k < lay.depth {
                z.push(if k < stop.exit_index { self.z[i] } else { 0.0 });
            }
        }
        Ok(PathTrace { stop, y, z, j: js })
    }
}

/// Solves the scheme by backward induction. Requires `K / n < 1`.
pub fn backward_solve(
    n: u32,
    rule: StoppingRule,
    gen: &Generator,
    terminal: &TerminalCondition,
    cfg: &NodeSolveConfig,
) -> Result<DiscreteSolution> {
    cfg.validate()?;
    check_contraction(gen, 1.0 / n as f64)?;
    let layout = Arc::new(LatticeLayout::new(n, rule)?);
    let mut y = vec![0.0; layout.node_count()];
    let mut z = vec![0.0; layout.node_count()];
    for k in (0..=layout.depth).rev() {
        let t = layout.time(k);
        for j in layout.nodes(k) {
            let i = layout.index(k, j).expect("stored node");
            if !layout.status(k, j).is_active() {
                y[i] = layout.terminal_value(terminal, k, j);
                continue;
            }
            let up = y[layout.index(k + 1, j + 1).expect("child in band")];
            let down = y[layout.index(k + 1, j - 1).expect("child in band")];
            let zi = lattice_conditional_z(up, down, n, true);
            z[i] = zi;
            y[i] = solve_node_y((up + down) / 2.0, zi, t, gen, n, cfg)?;
        }
    }
    Ok(DiscreteSolution { layout, y, z })
}

/// Largest one-step residual
/// `|y_k - y_{k+1} - f/n + z eps / sqrt(n)|` over active nodes and both
/// branches.
pub fn scheme_residual(sol: &DiscreteSolution, gen: &Generator) -> f64 {
    let lay = &sol.layout;
    let inv_n = 1.0 / lay.n as f64;
    let mut worst: f64 = 0.0;
    for v in sol.nodes().filter(|v| v.status.is_active()) {
        let f = gen.eval(lay.time(v.k), v.y, v.z);
        for eps in [1i64, -1] {
            let child = sol.node(v.k + 1, v.j + eps).expect("child").y;
            let r = v.y - child - f * inv_n + v.z * eps as f64 / lay.sqrt_n;
            worst = worst.max(r.abs());
        }
    }
    worst
}

/// Largest violation of the one-step martingale identity for
/// `M = y + sum f / n`: on an active node both children share the running
/// integral, so the identity reads `y + f(t, y, z)/n = (y_up + y_down)/2`.
pub fn martingale_identity_residual(sol: &DiscreteSolution, gen: &Generator) -> f64 {
    let lay = &sol.layout;
    let inv_n = 1.0 / lay.n as f64;
    sol.nodes()
        .filter(|v| v.status.is_active())
        .map(|v| {
            let up = sol.node(v.k + 1, v.j + 1).expect("child").y;
            let down = sol.node(v.k + 1, v.j - 1).expect("child").y;
            let m_here = v.y - gen.eval(lay.time(v.k), v.y, v.z) * inv_n;
            (m_here - (up + down) / 2.0).abs()
        })
        .fold(0.0, f64::max)
}

/// `M_k = y_k + sum_{i < k, i active} f(i/n, y_i, z_i) / n` along a walk.
pub fn martingale_along_path(sol: &DiscreteSolution, gen: &Generator, walk: &WalkPath) -> Result<Vec<f64>> {
    let trace = sol.along_path(walk)?;
    let inv_n = 1.0 / sol.n() as f64;
    let mut running = 0.0;
    let mut m = Vec::with_capacity(trace.y.len());
    for k in 0..trace.y.len() {
        m.push(trace.y[k] + running);
        if k < trace.stop.exit_index && k < trace.z.len() {
            running += gen.eval(sol.layout.time(k), trace.y[k], trace.z[k]) * inv_n;
        }
    }
    Ok(m)
}

/// Largest path-level martingale defect along `walk`: at every step before
/// stopping, `M_k` against the average of the two one-step continuations
/// sharing the path's history.
#[allow(clippy::needless_range_loop)]
pub fn martingale_path_residual(sol: &DiscreteSolution, gen: &Generator, walk: &WalkPath) -> Result<f64> {
    let trace = sol.along_path(walk)?;
    let m = martingale_along_path(sol, gen, walk)?;
    let lay = &sol.layout;
    let inv_n = 1.0 / lay.n as f64;
    let mut worst: f64 = 0.0;
    let mut running = 0.0;
    for k in 0..trace.stop.exit_index {
        let f = gen.eval(lay.time(k), trace.y[k], trace.z[k]);
        let next_running = running + f * inv_n;
        let j = trace.j[k];
        let up = sol.node(k + 1, j + 1).expect("child").y + next_running;
        let down = sol.node(k + 1, j - 1).expect("child").y + next_running;
        worst = worst.max((m[k] - (up + down) / 2.0).abs());
        running = next_running;
    }
    Ok(worst)
}

/// Node projection of the martingale, `y(k, j) + E[running integral | node]`,
/// from a forward pass over arrival probabilities. Equals `M` itself
/// whenever the running integral is a function of the node (e.g. zero or
/// time-only drivers).
pub fn martingale_m(sol: &DiscreteSolution, gen: &Generator) -> Vec<f64> {
    let lay = &sol.layout;
    let inv_n = 1.0 / lay.n as f64;
    let mut prob = vec![0.0; lay.node_count()];
    let mut weighted = vec![0.0; lay.node_count()];
    prob[0] = 1.0;
    for k in 0..lay.depth {
        for j in lay.nodes(k) {
            let i = lay.index(k, j).expect("node");
            if !lay.status(k, j).is_active() || prob[i] == 0.0 {
                continue;
            }
            let f = gen.eval(lay.time(k), sol.y[i], sol.z[i]) * inv_n;
            for child in [j + 1, j - 1] {
                let c = lay.index(k + 1, child).expect("child");
                prob[c] += prob[i] / 2.0;
                weighted[c] += (weighted[i] + prob[i] * f) / 2.0;
            }
        }
    }
    (0..lay.node_count())
        .map(|i| {
            let running = if prob[i] > 0.0 { weighted[i] / prob[i] } else { 0.0 };
            sol.y[i] + running
        })
        .collect()
}

/// Both sides of
/// `int_0^{t^tau} f ds = int_0^t f(s^tau) ds + (tau^t - t) f(tau)`
/// for an integrand constant on each `[i/n, (i+1)/n)`; `f_samples[i]` is
/// its value there. Each side is integrated separately.
pub fn stopped_integral_identity(f_samples: &[f64], tau: f64, t: f64, n: u32) -> Result<(f64, f64)> {
    if !(tau >= 0.0) || !(t >= 0.0) {
        return Err(BsdeError::Domain("tau and t must be >= 0".into()));
    }
    let h = 1.0 / n as f64;
    let needed = (t.max(tau) * n as f64).ceil() as usize;
    if f_samples.len() < needed.max(1) {
        return Err(BsdeError::Input(format!(
            "integrand has {} cells, {needed} needed",
            f_samples.len()
        )));
    }
    let value_at = |s: f64| f_samples[((s * n as f64).floor() as usize).min(f_samples.len() - 1)];
    let integrate = |g: &dyn Fn(usize) -> f64, upper: f64| -> f64 {
        let mut acc = 0.0;
        let mut i = 0;
        while (i as f64) * h < upper {
            let left = i as f64 * h;
            let right = ((i + 1) as f64 * h).min(upper);
            acc += g(i) * (right - left);
            i += 1;
        }
        acc
    };
    let stopped_at = tau.min(t);
    let lhs = integrate(&|i| f_samples[i], stopped_at);
    let f_tau = value_at(tau);
    // int_0^t f(s ^ tau) ds, splitting each cell at tau.
    let mut rhs_integral = 0.0;
    let mut i = 0;
    while (i as f64) * h < t {
        let left = i as f64 * h;
        let right = ((i + 1) as f64 * h).min(t);
        let mid = tau.clamp(left, right);
        rhs_integral += f_samples[i] * (mid - left) + f_tau * (right - mid);
        i += 1;
    }
    let rhs = rhs_integral + (stopped_at - t) * f_tau;
    Ok((lhs, rhs))
}
