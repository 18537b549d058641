//! Command-line driver: `run`, `verify`, `converge` and `oracle`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use crate::config::{ExperimentConfig, Scheme};
use crate::error::BsdeError;
use crate::lattice::{
    backward_solve, martingale_identity_residual, martingale_m, martingale_path_residual, scheme_residual,
    DiscreteSolution,
};
use crate::lsmc::{lsmc_solve, LsmcConfig};
use crate::metrics::{convergence_study, diagnostic_walks, qv_residual, StudyOptions};
use crate::oracle::{solve_bvp_extrapolated, ReferenceSolution};
use crate::paths::WalkPath;
use crate::picard::picard_solve;

/// Environment variable overriding the output directory of the config.
pub const OUT_DIR_ENV: &str = "BSDE_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "bsde", version, about = "Random-walk BSDE solvers with random terminal time")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured scheme and write its report.
    Run(CommonArgs),
    /// Check the exact identities of the scheme on small instances.
    Verify(CommonArgs),
    /// Lattice refinement study against the reference solution.
    Converge(CommonArgs),
    /// Solve the reference boundary value problem only.
    Oracle(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration; defaults apply to omitted fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the environment and the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed_override: Option<u64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(BsdeError),
    #[error("{0}")]
    Solver(BsdeError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0} verification check(s) failed")]
    Verify(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Verify(_) => 4,
        }
    }
}

impl From<BsdeError> for CliError {
    fn from(e: BsdeError) -> Self {
        match e {
            BsdeError::Config { .. } => CliError::Config(e),
            other => CliError::Solver(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct Context {
    cfg: ExperimentConfig,
    out: PathBuf,
}

impl Context {
    fn new(args: &CommonArgs) -> CliResult<Self> {
        let mut cfg = match &args.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = args.seed_override {
            cfg.seed = seed;
        }
        if args.threads.is_some() {
            cfg.threads = args.threads;
        }
        if cfg.threads == Some(0) {
            return Err(CliError::Config(BsdeError::Config {
                field: "threads".into(),
                message: "must be >= 1".into(),
            }));
        }
        let out = args
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self { cfg, out })
    }

    fn file(&self, name: &str) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.out).map_err(io_err(&self.out))?;
        Ok(self.out.join(name))
    }

    fn write(&self, name: &str, contents: &[u8]) -> CliResult<PathBuf> {
        let path = self.file(name)?;
        fs::write(&path, contents).map_err(io_err(&path))?;
        Ok(path)
    }

    fn reference(&self) -> CliResult<ReferenceSolution> {
        Ok(solve_bvp_extrapolated(
            &self.cfg.build_generator()?,
            &self.cfg.build_terminal()?,
            self.cfg.barrier,
            self.cfg.grid_size,
        )?)
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            if code == 0 {
                let _ = write!(stdout, "{e}");
            } else {
                let _ = write!(stderr, "{e}");
            }
            return code;
        }
    };
    match execute(&cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: &Command, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let args = match command {
        Command::Run(a) | Command::Verify(a) | Command::Converge(a) | Command::Oracle(a) => a,
    };
    let ctx = Context::new(args)?;
    let threads = ctx.cfg.threads;
    let mut body = move || match command {
        Command::Run(_) => run(&ctx, out),
        Command::Verify(_) => verify(&ctx, out),
        Command::Converge(_) => converge(&ctx, out),
        Command::Oracle(_) => oracle(&ctx, out),
    };
    match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| {
                CliError::Config(BsdeError::Config {
                    field: "threads".into(),
                    message: e.to_string(),
                })
            })?
            .install(body),
        None => body(),
    }
}

fn say(out: &mut (dyn Write + Send), line: impl AsRef<str>) {
    let _ = writeln!(out, "{}", line.as_ref());
}

fn oracle(ctx: &Context, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let reference = ctx.reference()?;
    let report = json!({
        "u0": reference.u0(),
        "du0": reference.derivative_at(0.0),
        "barrier": ctx.cfg.barrier,
        "grid_size": ctx.cfg.grid_size,
        "newton_iterations": reference.newton_iterations,
        "residual": reference.residual,
    });
    let path = ctx.write("oracle.json", serde_json::to_string_pretty(&report).expect("json").as_bytes())?;
    say(out, format!("u0 = {:.12}  ({})", reference.u0(), path.display()));
    Ok(())
}

fn solution_csv(sol: &DiscreteSolution, m: &[f64]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Solver(BsdeError::Input(format!("csv: {e}")));
    w.write_record(["k", "j", "position", "active", "y", "z", "M"]).map_err(csv_err)?;
    for (i, v) in sol.nodes().enumerate() {
        w.write_record([
            v.k.to_string(),
            v.j.to_string(),
            sol.layout.position(v.j).to_string(),
            u8::from(v.status.is_active()).to_string(),
            v.y.to_string(),
            v.z.to_string(),
            m[i].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Solver(BsdeError::Input(format!("csv: {e}"))))
}

fn rows_csv(header: &[&str], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Solver(BsdeError::Input(format!("csv: {e}")));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Solver(BsdeError::Input(format!("csv: {e}"))))
}

fn run(ctx: &Context, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let cfg = &ctx.cfg;
    if cfg.scheme == Scheme::OracleOnly {
        return oracle(ctx, out);
    }
    let gen = cfg.build_generator()?;
    let terminal = cfg.build_terminal()?;
    let mut rows = Vec::new();
    let header: &[&str] = match cfg.scheme {
        Scheme::Lattice => {
            for &n in &cfg.n_list {
                let start = Instant::now();
                let sol = backward_solve(n, cfg.rule_for(n)?, &gen, &terminal, &cfg.node_config())?;
                let m = martingale_m(&sol, &gen);
                ctx.write(&format!("solution_n{n}.csv"), &solution_csv(&sol, &m)?)?;
                say(out, format!("n = {n}: Y0 = {:.12}", sol.root_y()));
                rows.push(vec![
                    n.to_string(),
                    sol.root_y().to_string(),
                    sol.layout.node_count().to_string(),
                    start.elapsed().as_secs_f64().to_string(),
                ]);
            }
            &["n", "Y0", "nodes", "runtime"]
        }
        Scheme::Picard => {
            for &n in &cfg.n_list {
                let start = Instant::now();
                let t = &cfg.tolerances;
                let res = picard_solve(n, cfg.rule_for(n)?, &gen, &terminal, t.p_max, t.picard)?;
                if !res.converged {
                    say(
                        out,
                        format!("warning: n = {n}: no convergence in {} iterations (change {:e})", t.p_max, res.final_change()),
                    );
                }
                say(out, format!("n = {n}: Y0 = {:.12} after {} iterations", res.iterate.root_y(), res.iterations));
                rows.push(vec![
                    n.to_string(),
                    res.iterate.root_y().to_string(),
                    res.iterations.to_string(),
                    res.final_change().to_string(),
                    res.converged.to_string(),
                    start.elapsed().as_secs_f64().to_string(),
                ]);
            }
            &["n", "Y0", "iterations", "final_change", "converged", "runtime"]
        }
        Scheme::Lsmc => {
            let rule = cfg.continuous_rule()?;
            for &level in &cfg.subdivision_levels {
                let start = Instant::now();
                let mut lc = LsmcConfig::uniform(cfg.path_count, level, cfg.cap, cfg.basis.into(), cfg.seed);
                lc.node = cfg.node_config();
                lc.bootstrap = cfg.bootstrap;
                let res = lsmc_solve(&lc, &gen, &terminal, &rule)?;
                say(out, format!("mesh 1/{level}: Y0 = {:.8} +- {:.2e}", res.y0, res.stderr));
                rows.push(vec![
                    level.to_string(),
                    res.y0.to_string(),
                    res.z0.to_string(),
                    res.stderr.to_string(),
                    res.path_count.to_string(),
                    start.elapsed().as_secs_f64().to_string(),
                ]);
            }
            &["steps_per_unit", "Y0", "Z0", "stderr", "path_count", "runtime"]
        }
        Scheme::OracleOnly => unreachable!("handled above"),
    };
    let path = ctx.write("run.csv", &rows_csv(header, &rows)?)?;
    let json_rows: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            header
                .iter()
                .zip(r)
                .map(|(h, v)| (h.to_string(), json!(v)))
                .collect::<serde_json::Map<_, _>>()
                .into()
        })
        .collect();
    let summary = json!({ "scheme": cfg.scheme, "config": cfg, "rows": json_rows });
    ctx.write("run.json", serde_json::to_string_pretty(&summary).expect("json").as_bytes())?;
    say(out, format!("wrote {}", path.display()));
    Ok(())
}

fn converge(ctx: &Context, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let cfg = &ctx.cfg;
    if cfg.n_list.is_empty() {
        return Err(CliError::Config(BsdeError::Config {
            field: "n_list".into(),
            message: "must not be empty".into(),
        }));
    }
    let gen = cfg.build_generator()?;
    let terminal = cfg.build_terminal()?;
    let reference = ctx.reference()?;
    let opts = StudyOptions {
        sup_horizon: cfg.sup_horizon(),
        diagnostic_paths: cfg.diagnostic_paths,
        seed: cfg.seed,
        node: cfg.node_config(),
    };
    let report = convergence_study(&cfg.n_list, |n| cfg.rule_for(n), &gen, &terminal, &reference, &opts)?;
    let csv_path = ctx.file("convergence.csv")?;
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    report.write_csv(file)?;
    ctx.write("convergence.json", serde_json::to_string_pretty(&report).expect("json").as_bytes())?;
    say(out, format!("u0 = {:.12}", reference.u0()));
    for r in &report.records {
        say(
            out,
            format!(
                "n = {:>6}  Y0 error {:.3e}  sup error {:.3e}  z L2 {:.3e}",
                r.n, r.y0_error, r.sup_node_error, r.z_l2_error
            ),
        );
    }
    say(out, format!("wrote {}", csv_path.display()));
    Ok(())
}

/// Residual threshold of every exact identity checked by `verify`.
pub const VERIFY_TOL: f64 = 1e-12;

fn verify(ctx: &Context, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let gen = cfg.build_generator()?;
    let terminal = cfg.build_terminal()?;
    let ns: Vec<u32> = {
        let small: Vec<u32> = cfg.n_list.iter().copied().filter(|&n| n <= 16).collect();
        if small.is_empty() { vec![4, 8] } else { small }
    };
    let mut failures = 0;
    let mut check = |out: &mut (dyn Write + Send), name: &str, n: u32, value: f64, tol: f64| {
        let ok = value <= tol;
        failures += usize::from(!ok);
        say(out, format!("[{}] n = {n:<3} {name:<22} {value:.3e}", if ok { "pass" } else { "FAIL" }));
    };
    for &n in &ns {
        let rule = cfg.rule_for(n)?;
        let rule = crate::stopping::StoppingRule { cap: rule.cap.min(2.0), ..rule };
        let sol = backward_solve(n, rule, &gen, &terminal, &cfg.node_config())?;
        check(out, "scheme residual", n, scheme_residual(&sol, &gen), VERIFY_TOL);
        check(out, "martingale identity", n, martingale_identity_residual(&sol, &gen), VERIFY_TOL);

        let walks = diagnostic_walks(&sol, cfg.diagnostic_paths.min(4096), cfg.seed)?;
        check(out, "quadratic variation", n, qv_residual(&sol, &gen, &walks)?, VERIFY_TOL);

        let mut path_mart: f64 = 0.0;
        let mut freeze: f64 = 0.0;
        let mut adapted: f64 = 0.0;
        for w in walks.iter().take(256) {
            path_mart = path_mart.max(martingale_path_residual(&sol, &gen, w)?);
            let trace = sol.along_path(w)?;
            let stop = trace.stop.exit_index;
            let xi = sol.layout.terminal_value(&terminal, stop, trace.j[stop]);
            for k in stop..trace.y.len() {
                freeze = freeze.max((trace.y[k] - xi).abs());
                if k < trace.z.len() {
                    freeze = freeze.max(trace.z[k].abs());
                }
            }
            let cut = w.steps() / 2;
            let mut inc = w.increments.clone();
            for e in inc.iter_mut().skip(cut) {
                *e = -*e;
            }
            let flipped = sol.along_path(&WalkPath::from_increments(w.params, inc)?)?;
            for k in 0..=cut.min(sol.layout.depth) {
                adapted = adapted.max((trace.y[k] - flipped.y[k]).abs());
            }
        }
        check(out, "path martingale", n, path_mart, VERIFY_TOL);
        check(out, "freezing", n, freeze, 0.0);
        check(out, "adaptedness", n, adapted, 0.0);

        let t = &cfg.tolerances;
        let picard = picard_solve(n, rule, &gen, &terminal, t.p_max, t.picard)?;
        let contraction = gen.lipschitz / n as f64;
        let bound = t.picard / (1.0 - contraction) + 1e-13;
        check(out, "picard vs direct", n, picard.iterate.sup_distance_to(&sol), bound.max(10.0 * t.picard));
    }
    if failures > 0 {
        Err(CliError::Verify(failures))
    } else {
        say(out, "all checks passed");
        Ok(())
    }
}
