//! Scaled random walks, fine Brownian paths and their discretizations, and
//! the clocks (brackets) that go with them.
//!
//! Walk positions are kept as integer lattice indices `j` and only converted
//! to reals (`j / sqrt(n)`) at evaluation, so barrier comparisons never see
//! accumulated rounding.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{BsdeError, Result};
use crate::rng::path_rng;

/// Scale `n`, integer horizon `T_n` bounding the stopping time, and seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkParams {
    pub n: u32,
    pub horizon: u32,
    pub seed: u64,
}

impl WalkParams {
    pub fn new(n: u32, horizon: u32, seed: u64) -> Result<Self> {
        let params = Self { n, horizon, seed };
        params.steps()?;
        Ok(params)
    }

    /// Total number of walk steps, `n * horizon`.
    pub fn steps(&self) -> Result<usize> {
        if self.n == 0 {
            return Err(BsdeError::Domain("walk scale n must be >= 1".into()));
        }
        if self.horizon == 0 {
            return Err(BsdeError::Domain("walk horizon must be >= 1".into()));
        }
        (self.n as usize)
            .checked_mul(self.horizon as usize)
            .filter(|s| *s < isize::MAX as usize / 16)
            .ok_or_else(|| {
                BsdeError::Size(format!(
                    "step count {} * {} overflows",
                    self.n, self.horizon
                ))
            })
    }
}

/// One realization of the scaled walk `W^n_{k/n} = n^{-1/2} sum_{i<=k} eps_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkPath {
    pub params: WalkParams,
    /// The `eps_k`, each `+1` or `-1`.
    pub increments: Vec<i8>,
    /// Partial sums `j_k`, with `j_0 = 0`.
    pub positions: Vec<i64>,
    /// `values[k] = positions[k] / sqrt(n)`.
    pub values: Vec<f64>,
}

impl WalkPath {
    pub fn from_increments(params: WalkParams, increments: Vec<i8>) -> Result<Self> {
        let steps = params.steps()?;
        if increments.len() != steps {
            return Err(BsdeError::Input(format!(
                "expected {steps} increments, got {}",
                increments.len()
            )));
        }
        if let Some(bad) = increments.iter().find(|e| e.abs() != 1) {
            return Err(BsdeError::Input(format!("increment {bad} is not +-1")));
        }
        let sqrt_n = (params.n as f64).sqrt();
        let mut positions = Vec::with_capacity(steps + 1);
        positions.push(0i64);
        let mut j = 0i64;
        for &e in &increments {
            j += e as i64;
            positions.push(j);
        }
        let values = positions.iter().map(|&j| j as f64 / sqrt_n).collect();
        Ok(Self {
            params,
            increments,
            positions,
            values,
        })
    }

    /// Draws the increments from `rng`.
    pub fn with_rng<R: Rng + ?Sized>(params: WalkParams, rng: &mut R) -> Result<Self> {
        let steps = params.steps()?;
        let increments = (0..steps)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        Self::from_increments(params, increments)
    }

    pub fn n(&self) -> u32 {
        self.params.n
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    /// `W^n_t`, piecewise constant on `[k/n, (k+1)/n)`.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        let k = clock_steps(t, self.params.n)?.min(self.steps());
        Ok(self.values[k])
    }
}

/// Path 0 of the stream for `params.seed`.
pub fn build_walk(params: WalkParams) -> Result<WalkPath> {
    build_walk_indexed(params, 0)
}

/// Path `index` of the batch for `params.seed`; independent of batch size.
pub fn build_walk_indexed(params: WalkParams, index: u64) -> Result<WalkPath> {
    let mut rng = path_rng(params.seed, index);
    WalkPath::with_rng(params, &mut rng)
}

/// Recombining state space of the walk: node `(k, j)` is reachable iff
/// `|j| <= k` and `j = k (mod 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lattice {
    pub n: u32,
    pub depth: usize,
}

impl Lattice {
    pub fn new(n: u32, depth: usize) -> Result<Self> {
        if n == 0 {
            return Err(BsdeError::Domain("lattice scale n must be >= 1".into()));
        }
        Ok(Self { n, depth })
    }

    pub fn position(&self, j: i64) -> f64 {
        j as f64 / (self.n as f64).sqrt()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.n as f64
    }

    pub fn is_reachable(&self, k: usize, j: i64) -> bool {
        k <= self.depth && j.unsigned_abs() as usize <= k && (j - k as i64).rem_euclid(2) == 0
    }

    pub fn node_count(&self, k: usize) -> usize {
        k + 1
    }

    /// Position indices at step `k`, lowest first.
    pub fn nodes(&self, k: usize) -> impl Iterator<Item = i64> {
        let k = k as i64;
        (0..=k).map(move |i| -k + 2 * i)
    }
}

/// `floor(n t)`, with `t` within a few ulps of a grid point `k/n` snapped to
/// `k` (so `(k / n) * n` never floors to `k - 1`).
pub fn clock_steps(t: f64, n: u32) -> Result<usize> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(BsdeError::Domain(format!("clock time must be finite and >= 0, got {t}")));
    }
    if n == 0 {
        return Err(BsdeError::Domain("clock scale n must be >= 1".into()));
    }
    let x = t * n as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 8.0 * f64::EPSILON * r.max(1.0) {
        r
    } else {
        x.floor()
    };
    Ok(k as usize)
}

/// `A^n_t = floor(n t) / n`.
pub fn clock_an(t: f64, n: u32) -> Result<f64> {
    Ok(clock_steps(t, n)? as f64 / n as f64)
}

/// A Brownian sample on an increasing grid starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FinePath {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl FinePath {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, seed: u64) -> Result<Self> {
        if grid.is_empty() || grid.len() != values.len() {
            return Err(BsdeError::Input(format!(
                "grid ({}) and values ({}) must be nonempty and of equal length",
                grid.len(),
                values.len()
            )));
        }
        if grid[0] != 0.0 {
            return Err(BsdeError::Domain("path grid must start at 0".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(BsdeError::Domain("path grid must be strictly increasing".into()));
        }
        Ok(Self { grid, values, seed })
    }

    /// Brownian motion on the uniform grid `{i h : 0 <= i <= steps}`, drawn
    /// from stream `index` of `seed`.
    pub fn brownian(h: f64, steps: usize, seed: u64, index: u64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(BsdeError::Domain(format!("fine mesh must be positive, got {h}")));
        }
        let mut rng = path_rng(seed, index);
        let sd = h.sqrt();
        let mut values = Vec::with_capacity(steps + 1);
        let mut w = 0.0;
        values.push(w);
        for _ in 0..steps {
            let g: f64 = rng.sample(StandardNormal);
            w += sd * g;
            values.push(w);
        }
        let grid = (0..=steps).map(|i| i as f64 * h).collect();
        Ok(Self { grid, values, seed })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        *self.grid.last().expect("nonempty grid")
    }

    /// Index of the largest grid point `<= t`.
    pub fn index_at(&self, t: f64) -> usize {
        match self.grid.partition_point(|&g| g <= t) {
            0 => 0,
            p => p - 1,
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.values[self.index_at(t)]
    }

    /// Grid index of `t`, if `t` is a grid point up to relative rounding.
    pub fn grid_index_of(&self, t: f64) -> Option<usize> {
        let p = self.grid.partition_point(|&g| g < t);
        let tol = 1e-12 * t.abs().max(1.0);
        [p.checked_sub(1), Some(p)]
            .into_iter()
            .flatten()
            .filter(|&i| i < self.grid.len())
            .find(|&i| (self.grid[i] - t).abs() <= tol)
    }
}

/// `W^n`: the fine path frozen at the subdivision points, `W^n_t = W_{t_k}`
/// for `t_k <= t < t_{k+1}`, with bracket `<W^n>_t = t_k` on the same
/// interval.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedPath {
    /// Piecewise-constant values on the original fine grid.
    pub fine: FinePath,
    pub subdivision: Vec<f64>,
    /// Fine-grid index of each subdivision point.
    pub knots: Vec<usize>,
}

impl DiscretizedPath {
    /// Index `k` of the last subdivision point `t_k <= t`.
    pub fn interval_of(&self, t: f64) -> usize {
        match self.subdivision.partition_point(|&s| s <= t) {
            0 => 0,
            p => p - 1,
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.fine.values[self.knots[self.interval_of(t)]]
    }

    /// `W(t_k)` for each subdivision point.
    pub fn knot_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.knots.iter().map(|&i| self.fine.values[i])
    }

    pub fn bracket(&self, t: f64) -> f64 {
        self.subdivision[self.interval_of(t)]
    }
}

/// Freezes `path` on `subdivision`. Every subdivision point must be a point
/// of the fine grid, and the first must be 0.
pub fn discretize(path: &FinePath, subdivision: &[f64]) -> Result<DiscretizedPath> {
    let knots = resolve_subdivision(path, subdivision)?;
    let mut values = Vec::with_capacity(path.len());
    let mut next = 0;
    let mut current = path.values[0];
    for (i, _) in path.grid.iter().enumerate() {
        if next < knots.len() && knots[next] == i {
            current = path.values[i];
            next += 1;
        }
        values.push(current);
    }
    Ok(DiscretizedPath {
        fine: FinePath {
            grid: path.grid.clone(),
            values,
            seed: path.seed,
        },
        subdivision: subdivision.to_vec(),
        knots,
    })
}

/// Maps subdivision points onto fine-grid indices.
pub fn resolve_subdivision(path: &FinePath, subdivision: &[f64]) -> Result<Vec<usize>> {
    if subdivision.is_empty() {
        return Err(BsdeError::Input("subdivision is empty".into()));
    }
    if subdivision[0] != 0.0 {
        return Err(BsdeError::Domain("subdivision must start at 0".into()));
    }
    if subdivision.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(BsdeError::Domain("subdivision must be strictly increasing".into()));
    }
    subdivision
        .iter()
        .map(|&t| path.grid_index_of(t).ok_or(BsdeError::Alignment { point: t }))
        .collect()
}

/// Uniform subdivision `{k / steps_per_unit : 0 <= k <= steps_per_unit * horizon}`.
pub fn uniform_subdivision(steps_per_unit: u32, horizon: f64) -> Vec<f64> {
    let count = (steps_per_unit as f64 * horizon).round() as usize;
    (0..=count)
        .map(|k| k as f64 / steps_per_unit as f64)
        .collect()
}

/// Which clock to read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClockKind<'a> {
    /// Scaled random walk: `[W^n]_t = <W^n>_t = floor(n t) / n`.
    ScaledWalk { n: u32 },
    /// Brownian motion discretized on a subdivision starting at 0.
    Discretized { subdivision: &'a [f64] },
}

/// Predictable bracket of the process at time `t`.
pub fn bracket(kind: ClockKind<'_>, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(BsdeError::Domain(format!("bracket time must be finite and >= 0, got {t}")));
    }
    match kind {
        ClockKind::ScaledWalk { n } => clock_an(t, n),
        ClockKind::Discretized { subdivision } => {
            if subdivision.first() != Some(&0.0) {
                return Err(BsdeError::Domain("subdivision must start at 0".into()));
            }
            let p = subdivision.partition_point(|&s| s <= t);
            Ok(subdivision[p - 1])
        }
    }
}

/// Both sides of `<M>^tau_t = <M^tau>_t` for Brownian motion frozen on
/// `subdivision` and a stopping time `tau` taking subdivision values: the
/// bracket read at `t ^ tau`, and the bracket of the stopped process summed
/// increment by increment.
pub fn stopped_bracket_identity(subdivision: &[f64], tau: f64, t: f64) -> Result<(f64, f64)> {
    if !(tau >= 0.0) {
        return Err(BsdeError::Domain(format!("stopping time must be >= 0, got {tau}")));
    }
    let lhs = bracket(ClockKind::Discretized { subdivision }, t.min(tau))?;
    let rhs = subdivision
        .windows(2)
        .filter(|w| w[1] <= t && tau >= w[1])
        .map(|w| w[1] - w[0])
        .sum();
    Ok((lhs, rhs))
}

/// Modulus `rho` with `rho(0+) = 0` and slack sequence `a_n` decreasing to 0
/// bounding bracket increments: `<W^n>_t - <W^n>_s <= rho(t - s) + a_n`.
#[derive(Clone)]
pub struct BracketModulus {
    rho: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub a_n: Vec<f64>,
}

impl std::fmt::Debug for BracketModulus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BracketModulus").field("a_n", &self.a_n).finish()
    }
}

impl BracketModulus {
    pub fn new(rho: Arc<dyn Fn(f64) -> f64 + Send + Sync>, a_n: Vec<f64>) -> Result<Self> {
        if rho(0.0) != 0.0 {
            return Err(BsdeError::Domain("modulus rho must vanish at 0".into()));
        }
        if a_n.windows(2).any(|w| w[1] > w[0]) {
            return Err(BsdeError::Domain("slack sequence a_n must be nonincreasing".into()));
        }
        Ok(Self { rho, a_n })
    }

    /// `rho = id`.
    pub fn identity(a_n: Vec<f64>) -> Result<Self> {
        Self::new(Arc::new(|d| d), a_n)
    }

    pub fn rho(&self, d: f64) -> f64 {
        (self.rho)(d)
    }

    /// How far `increment` (a bracket increment over a time gap `dt`)
    /// exceeds `rho(dt) + a_n[level]`; nonpositive when the bound holds.
    pub fn excess(&self, level: usize, dt: f64, increment: f64) -> f64 {
        increment - (self.rho(dt) + self.a_n[level])
    }

    /// Largest excess over the sampled `(s, t)` pairs, for a clock at
    /// `level`. Rounding slack of `1e-12` is allowed by callers.
    pub fn max_excess<F>(&self, level: usize, clock: F, pairs: &[(f64, f64)]) -> Result<f64>
    where
        F: Fn(f64) -> Result<f64>,
    {
        let mut worst = f64::NEG_INFINITY;
        for &(s, t) in pairs {
            let (s, t) = if s <= t { (s, t) } else { (t, s) };
            let inc = clock(t)? - clock(s)?;
            worst = worst.max(self.excess(level, t - s, inc));
        }
        Ok(worst)
    }
}
