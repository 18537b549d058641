//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{BsdeError, Result};
use crate::generators::{Generator, TerminalCondition};
use crate::lattice::NodeSolveConfig;
use crate::lsmc::Basis;
use crate::stopping::{aligned_level, StoppingRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Lattice,
    Picard,
    Lsmc,
    OracleOnly,
}

/// A preset name (`"sin-z"`, `"linear:-1,0,1"`, ...) or the coefficients of
/// `alpha y + beta z + c + gamma sin(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeneratorSpec {
    Preset(String),
    Inline {
        alpha: f64,
        beta: f64,
        c: f64,
        #[serde(default)]
        gamma: f64,
    },
}

impl GeneratorSpec {
    pub fn build(&self) -> Result<Generator> {
        match self {
            GeneratorSpec::Preset(name) => Generator::preset(name),
            GeneratorSpec::Inline { alpha, beta, c, gamma } => Generator::affine_sine(*alpha, *beta, *c, *gamma),
        }
    }
}

/// How the lattice barrier `a^n` is derived from `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierPolicy {
    /// `(floor(a sqrt(n)) + 1/2) / sqrt(n)`, halfway between lattice levels.
    Aligned,
    /// `a^n = a`.
    Same,
    /// `a^n = a + 1/n`.
    OffsetInverseN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BasisSpec {
    Monomial { degree: usize },
    Indicator { bins: usize },
}

impl From<BasisSpec> for Basis {
    fn from(b: BasisSpec) -> Self {
        match b {
            BasisSpec::Monomial { degree } => Basis::Monomial { degree },
            BasisSpec::Indicator { bins } => Basis::Indicator { bins },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub fixed_point: f64,
    pub max_iters: usize,
    pub picard: f64,
    pub p_max: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            fixed_point: 1e-14,
            max_iters: 200,
            picard: 1e-12,
            p_max: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub generator: GeneratorSpec,
    pub terminal: String,
    pub barrier: f64,
    pub two_sided: bool,
    pub barrier_policy: BarrierPolicy,
    pub cap: f64,
    pub n_list: Vec<u32>,
    /// Regression dates per unit time, one run per entry (regression scheme).
    pub subdivision_levels: Vec<u32>,
    pub path_count: usize,
    pub seed: u64,
    pub basis: BasisSpec,
    pub bootstrap: usize,
    pub tolerances: Tolerances,
    /// Intervals of the reference boundary value solve.
    pub grid_size: usize,
    /// Nodes after this time are left out of the sup error; `cap / 2` if unset.
    pub sup_horizon: Option<f64>,
    pub diagnostic_paths: usize,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Lattice,
            generator: GeneratorSpec::Preset("sin-z".into()),
            terminal: "exp".into(),
            barrier: 0.5,
            two_sided: true,
            barrier_policy: BarrierPolicy::Aligned,
            cap: 2.0,
            n_list: vec![4, 8],
            subdivision_levels: vec![16],
            path_count: 10_000,
            seed: 1,
            basis: BasisSpec::Monomial { degree: 3 },
            bootstrap: 500,
            tolerances: Tolerances::default(),
            grid_size: 2048,
            sup_horizon: None,
            diagnostic_paths: 2000,
            output_dir: None,
            threads: None,
        }
    }
}

fn field(name: &str, message: impl Into<String>) -> BsdeError {
    BsdeError::Config {
        field: name.into(),
        message: message.into(),
    }
}

/// Field named in a serde error message, if any.
fn serde_field(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "config".into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            let message = e.to_string();
            field(&serde_field(&message), message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| field("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator
            .build()
            .map_err(|e| field("generator", e.to_string()))?;
        TerminalCondition::preset(&self.terminal).map_err(|e| field("terminal", e.to_string()))?;
        if !(self.barrier > 0.0) {
            return Err(field("barrier", "must be > 0 (use a large value for no barrier)"));
        }
        if !(self.cap > 0.0) || !self.cap.is_finite() {
            return Err(field("cap", "must be positive and finite"));
        }
        let needs_n = matches!(self.scheme, Scheme::Lattice | Scheme::Picard);
        if needs_n && self.n_list.is_empty() {
            return Err(field("n_list", "must not be empty"));
        }
        if self.n_list.contains(&0) {
            return Err(field("n_list", "entries must be >= 1"));
        }
        if self.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(field("n_list", "must be strictly increasing"));
        }
        if self.scheme == Scheme::Lsmc {
            if self.subdivision_levels.is_empty() || self.subdivision_levels.contains(&0) {
                return Err(field("subdivision_levels", "must be nonempty with entries >= 1"));
            }
            if self.path_count < 2 {
                return Err(field("path_count", "must be >= 2"));
            }
        }
        match self.basis {
            BasisSpec::Indicator { bins: 0 } => return Err(field("basis", "bins must be >= 1")),
            BasisSpec::Monomial { degree } if degree > 12 => return Err(field("basis", "degree must be <= 12")),
            _ => {}
        }
        let t = &self.tolerances;
        if !(t.fixed_point > 0.0) || !(t.picard > 0.0) || t.max_iters == 0 || t.p_max == 0 {
            return Err(field("tolerances", "tolerances must be > 0 and iteration caps >= 1"));
        }
        if self.grid_size < 8 {
            return Err(field("grid_size", "must be >= 8"));
        }
        if let Some(h) = self.sup_horizon {
            if !(h >= 0.0) {
                return Err(field("sup_horizon", "must be >= 0"));
            }
        }
        if self.diagnostic_paths == 0 {
            return Err(field("diagnostic_paths", "must be >= 1"));
        }
        if self.threads == Some(0) {
            return Err(field("threads", "must be >= 1"));
        }
        Ok(())
    }

    pub fn build_generator(&self) -> Result<Generator> {
        self.generator.build()
    }

    pub fn build_terminal(&self) -> Result<TerminalCondition> {
        TerminalCondition::preset(&self.terminal)
    }

    pub fn barrier_for(&self, n: u32) -> f64 {
        match self.barrier_policy {
            BarrierPolicy::Aligned => aligned_level(self.barrier, n),
            BarrierPolicy::Same => self.barrier,
            BarrierPolicy::OffsetInverseN => self.barrier + 1.0 / n as f64,
        }
    }

    pub fn rule_for(&self, n: u32) -> Result<StoppingRule> {
        StoppingRule::new(self.barrier, self.barrier_for(n), self.cap, self.two_sided)
    }

    /// Rule for the regression scheme, where the barrier is applied as given.
    pub fn continuous_rule(&self) -> Result<StoppingRule> {
        StoppingRule::new(self.barrier, self.barrier, self.cap, self.two_sided)
    }

    pub fn node_config(&self) -> NodeSolveConfig {
        NodeSolveConfig {
            fixed_point_tol: self.tolerances.fixed_point,
            max_iters: self.tolerances.max_iters,
            init_offset: 0.0,
        }
    }

    pub fn sup_horizon(&self) -> f64 {
        self.sup_horizon.unwrap_or(self.cap / 2.0)
    }
}
