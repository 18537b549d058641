//! Drivers `f(t, y, z)`, terminal conditions, and sampling validators for
//! the Lipschitz / monotonicity / boundedness hypotheses and the moment
//! bounds on terminal values and stopping times.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{BsdeError, Result};
use crate::rng::path_rng;

pub type DriverFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Tolerance on the monotonicity inequality.
pub const MONOTONICITY_TOL: f64 = 1e-9;

/// A driver with its claimed constants: Lipschitz `K` in `(y, z)` for the
/// norm `|dy| + |dz|`, monotonicity `mu`, and sup bound.
#[derive(Clone)]
pub struct Generator {
    pub name: String,
    eval: DriverFn,
    pub lipschitz: f64,
    pub mu: Option<f64>,
    pub bound: Option<f64>,
    pub time_dependent: bool,
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Generator")
            .field("name", &self.name)
            .field("lipschitz", &self.lipschitz)
            .field("mu", &self.mu)
            .field("bound", &self.bound)
            .field("time_dependent", &self.time_dependent)
            .finish()
    }
}

impl Generator {
    pub fn new(name: impl Into<String>, eval: DriverFn, lipschitz: f64) -> Result<Self> {
        if !(lipschitz >= 0.0) || !lipschitz.is_finite() {
            return Err(BsdeError::Generator(format!(
                "Lipschitz constant must be finite and >= 0, got {lipschitz}"
            )));
        }
        Ok(Self {
            name: name.into(),
            eval,
            lipschitz,
            mu: None,
            bound: None,
            time_dependent: false,
        })
    }

    pub fn from_fn<F>(name: impl Into<String>, lipschitz: f64, f: F) -> Result<Self>
    where
        F: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(name, Arc::new(f), lipschitz)
    }

    pub fn with_mu(mut self, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(BsdeError::Generator(format!("mu must be finite and > 0, got {mu}")));
        }
        self.mu = Some(mu);
        Ok(self)
    }

    pub fn with_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound >= 0.0) || !bound.is_finite() {
            return Err(BsdeError::Generator(format!("bound must be finite and >= 0, got {bound}")));
        }
        self.bound = Some(bound);
        Ok(self)
    }

    pub fn time_dependent(mut self) -> Self {
        self.time_dependent = true;
        self
    }

    #[inline]
    pub fn eval(&self, t: f64, y: f64, z: f64) -> f64 {
        (self.eval)(t, y, z)
    }

    /// [`Self::eval`], rejecting NaN and infinities.
    pub fn try_eval(&self, t: f64, y: f64, z: f64) -> Result<f64> {
        let v = self.eval(t, y, z);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(BsdeError::Generator(format!(
                "driver `{}` returned {v} at (t, y, z) = ({t}, {y}, {z})",
                self.name
            )))
        }
    }

    pub fn zero() -> Self {
        Self::from_fn("zero", 0.0, |_, _, _| 0.0)
            .and_then(|g| g.with_bound(0.0))
            .expect("valid constants")
    }

    pub fn constant(c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(BsdeError::Generator(format!("constant driver value {c} is not finite")));
        }
        Self::from_fn(format!("constant:{c}"), 0.0, move |_, _, _| c)?.with_bound(c.abs())
    }

    /// `alpha y + beta z + c`: `K = max(|alpha|, |beta|)`, `mu = -alpha` when
    /// `alpha < 0`.
    pub fn linear(alpha: f64, beta: f64, c: f64) -> Result<Self> {
        Self::affine_sine(alpha, beta, c, 0.0).map(|mut g| {
            g.name = format!("linear:{alpha},{beta},{c}");
            g
        })
    }

    /// `alpha y + beta z + c + gamma sin(z)`.
    pub fn affine_sine(alpha: f64, beta: f64, c: f64, gamma: f64) -> Result<Self> {
        if ![alpha, beta, c, gamma].iter().all(|v| v.is_finite()) {
            return Err(BsdeError::Generator("driver coefficients must be finite".into()));
        }
        let k = alpha.abs().max(beta.abs() + gamma.abs());
        let mut g = Self::from_fn(
            format!("affine-sine:{alpha},{beta},{c},{gamma}"),
            k,
            move |_, y, z| alpha * y + beta * z + c + gamma * z.sin(),
        )?;
        if alpha < 0.0 {
            g = g.with_mu(-alpha)?;
        }
        if alpha == 0.0 && beta == 0.0 {
            g = g.with_bound(c.abs() + gamma.abs())?;
        }
        Ok(g)
    }

    /// `-y + sin(z)`: `K = 1`, `mu = 1`.
    pub fn sin_z() -> Self {
        let mut g = Self::affine_sine(-1.0, 0.0, 0.0, 1.0).expect("valid constants");
        g.name = "sin-z".into();
        g
    }

    /// Parses a preset: `zero`, `constant:c`, `linear:alpha,beta,c`, `sin-z`,
    /// or `non-finite` (always NaN; exercises driver validation).
    pub fn preset(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (head, args) = match spec.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (spec, None),
        };
        let nums = |expected: usize| -> Result<Vec<f64>> {
            let args = args.ok_or_else(|| {
                BsdeError::Generator(format!("preset `{head}` needs {expected} argument(s)"))
            })?;
            let v = args
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| BsdeError::Generator(format!("bad number in `{spec}`: {e}")))?;
            if v.len() != expected {
                return Err(BsdeError::Generator(format!(
                    "preset `{head}` needs {expected} argument(s), got {}",
                    v.len()
                )));
            }
            Ok(v)
        };
        match head {
            "zero" if args.is_none() => Ok(Self::zero()),
            "constant" => Self::constant(nums(1)?[0]),
            "linear" => {
                let v = nums(3)?;
                Self::linear(v[0], v[1], v[2])
            }
            "sin-z" if args.is_none() => Ok(Self::sin_z()),
            "non-finite" if args.is_none() => Self::from_fn("non-finite", 0.0, |_, _, _| f64::NAN),
            _ => Err(BsdeError::Generator(format!("unknown driver preset `{spec}`"))),
        }
    }
}

/// How the terminal value depends on the stopped state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalKind {
    Constant,
    /// `g(x)` of the exit state.
    ExitState,
    /// `g(x, t)` of the exit state and exit time.
    ExitStateTime,
}

/// `xi^n = g(W^n_{tau^n}, tau^n)`.
#[derive(Clone)]
pub struct TerminalCondition {
    pub name: String,
    pub kind: TerminalKind,
    g: TerminalFn,
    pub bound: Option<f64>,
}

impl fmt::Debug for TerminalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalCondition")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("bound", &self.bound)
            .finish()
    }
}

impl TerminalCondition {
    pub fn constant(c: f64) -> Self {
        Self {
            name: format!("constant:{c}"),
            kind: TerminalKind::Constant,
            g: Arc::new(move |_, _| c),
            bound: Some(c.abs()),
        }
    }

    pub fn exit_state<F>(name: impl Into<String>, g: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            kind: TerminalKind::ExitState,
            g: Arc::new(move |x, _| g(x)),
            bound: None,
        }
    }

    pub fn exit_state_time<F>(name: impl Into<String>, g: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            kind: TerminalKind::ExitStateTime,
            g: Arc::new(g),
            bound: None,
        }
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    /// `s x + c`.
    pub fn linear(s: f64, c: f64) -> Self {
        Self::exit_state(format!("linear:{s},{c}"), move |x| s * x + c)
    }

    pub fn exp() -> Self {
        Self::exit_state("exp", f64::exp)
    }

    #[inline]
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        (self.g)(x, t)
    }

    pub fn depends_on_time(&self) -> bool {
        self.kind == TerminalKind::ExitStateTime
    }

    /// Parses `exp`, `constant:c`, `linear:slope,intercept`, or
    /// `exp-discount:r` (`g(x, t) = exp(x - r t)`).
    pub fn preset(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (head, args) = match spec.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (spec, None),
        };
        let nums: Vec<f64> = match args {
            Some(a) => a
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| BsdeError::Input(format!("bad number in terminal `{spec}`: {e}")))?,
            None => Vec::new(),
        };
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(BsdeError::Input(format!("terminal `{spec}` has non-finite arguments")));
        }
        match (head, nums.as_slice()) {
            ("exp", []) => Ok(Self::exp()),
            ("constant", [c]) => Ok(Self::constant(*c)),
            ("linear", [s, c]) => Ok(Self::linear(*s, *c)),
            ("exp-discount", [r]) => {
                let r = *r;
                Ok(Self::exit_state_time(spec.to_string(), move |x, t| (x - r * t).exp()))
            }
            _ => Err(BsdeError::Input(format!("unknown terminal preset `{spec}`"))),
        }
    }
}

/// Closed box of `(t, y, z)` to sample drivers on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleBox {
    pub t: (f64, f64),
    pub y: (f64, f64),
    pub z: (f64, f64),
}

impl SampleBox {
    pub fn symmetric(t_max: f64, y_max: f64, z_max: f64) -> Self {
        Self {
            t: (0.0, t_max),
            y: (-y_max, y_max),
            z: (-z_max, z_max),
        }
    }
}

/// Outcome of the validators. Fields a validator does not measure stay at
/// their defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssumptionReport {
    pub lipschitz_estimate: f64,
    pub lipschitz_ok: bool,
    pub monotonicity_violations: usize,
    pub bound_estimate: f64,
    pub bound_violations: usize,
    pub pairs_sampled: usize,
    pub moment_delta: Option<f64>,
    /// Per level, `E[|xi^n|^(1+delta)]^(1/(1+delta))`.
    pub xi_moments: Vec<f64>,
    /// Per level, `E[|tau^n|^(1+delta)]^(1/(1+delta))`.
    pub tau_moments: Vec<f64>,
    pub xi_moment_sup: f64,
    pub tau_moment_sup: f64,
    pub unbounded_growth: bool,
}

struct PairCheck {
    quotient: f64,
    violation: bool,
    abs_max: f64,
}

/// Samples `count` base points in `sample_box` and, from each, one random
/// pair, one pair differing in `y` only and one differing in `z` only.
/// Reports the largest Lipschitz quotient, monotonicity violations of
/// `(y - y')(f(y) - f(y')) <= -mu (y - y')^2` (with `mu = 0` when none is
/// claimed), and the largest `|f|`.
pub fn validate_generator(
    gen: &Generator,
    sample_box: SampleBox,
    count: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    if count < 2 {
        return Err(BsdeError::Input("validate_generator needs at least 2 samples".into()));
    }
    let mut rng = path_rng(seed, 0);
    let mut draw = |(lo, hi): (f64, f64)| -> f64 {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    let points: Vec<[f64; 5]> = (0..count)
        .map(|_| [draw(sample_box.t), draw(sample_box.y), draw(sample_box.z), draw(sample_box.y), draw(sample_box.z)])
        .collect();
    let mu = gen.mu.unwrap_or(0.0);

    let checks = points
        .par_iter()
        .map(|&[t, y, z, y2, z2]| -> Result<PairCheck> {
            let f = gen.try_eval(t, y, z)?;
            let f_pair = gen.try_eval(t, y2, z2)?;
            let f_y = gen.try_eval(t, y2, z)?;
            let f_z = gen.try_eval(t, y, z2)?;
            let quotient = |df: f64, d: f64| if d > 0.0 { df.abs() / d } else { 0.0 };
            let q = quotient(f - f_pair, (y - y2).abs() + (z - z2).abs())
                .max(quotient(f - f_y, (y - y2).abs()))
                .max(quotient(f - f_z, (z - z2).abs()));
            let dy = y - y2;
            let violation = dy * (f - f_y) > -mu * dy * dy + MONOTONICITY_TOL;
            let abs_max = f.abs().max(f_pair.abs()).max(f_y.abs()).max(f_z.abs());
            Ok(PairCheck {
                quotient: q,
                violation,
                abs_max,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let lipschitz_estimate = checks.iter().map(|c| c.quotient).fold(0.0, f64::max);
    let bound_estimate = checks.iter().map(|c| c.abs_max).fold(0.0, f64::max);
    let bound_violations = match gen.bound {
        Some(b) => checks.iter().filter(|c| c.abs_max > b + MONOTONICITY_TOL).count(),
        None => 0,
    };
    Ok(AssumptionReport {
        lipschitz_estimate,
        lipschitz_ok: lipschitz_estimate <= gen.lipschitz * (1.0 + 1e-12) + 1e-12,
        monotonicity_violations: checks.iter().filter(|c| c.violation).count(),
        bound_estimate,
        bound_violations,
        pairs_sampled: 3 * count,
        ..Default::default()
    })
}

/// `(1+delta)`-moment of `|x|`, as `E[|x|^(1+delta)]^(1/(1+delta))`.
pub fn moment(values: &[f64], delta: f64) -> f64 {
    let p = 1.0 + delta;
    let mean = values.iter().map(|v| v.abs().powf(p)).sum::<f64>() / values.len() as f64;
    mean.powf(1.0 / p)
}

/// Monte Carlo estimates of `sup_n E[|xi^n|^(1+delta)]^(1/(1+delta))` and
/// the same for `tau^n`. `unbounded_growth` is raised when either moment
/// grows by more than `growth_threshold` (a ratio) from the first level to
/// its maximum.
pub fn validate_terminal_family(
    xi_per_level: &[Vec<f64>],
    tau_per_level: &[Vec<f64>],
    delta: f64,
    growth_threshold: f64,
) -> Result<AssumptionReport> {
    if !(delta > 0.0) {
        return Err(BsdeError::Input(format!("delta must be > 0, got {delta}")));
    }
    if xi_per_level.is_empty()
        || tau_per_level.is_empty()
        || xi_per_level.iter().chain(tau_per_level).any(|v| v.is_empty())
    {
        return Err(BsdeError::Input("terminal family has an empty sample".into()));
    }
    let xi_moments: Vec<f64> = xi_per_level.iter().map(|v| moment(v, delta)).collect();
    let tau_moments: Vec<f64> = tau_per_level.iter().map(|v| moment(v, delta)).collect();
    let sup = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let grows = |v: &[f64]| {
        let first = v[0].max(f64::MIN_POSITIVE);
        sup(v) / first > growth_threshold
    };
    Ok(AssumptionReport {
        moment_delta: Some(delta),
        xi_moment_sup: sup(&xi_moments),
        tau_moment_sup: sup(&tau_moments),
        unbounded_growth: grows(&xi_moments) || grows(&tau_moments),
        xi_moments,
        tau_moments,
        ..Default::default()
    })
}
