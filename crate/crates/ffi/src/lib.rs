//! C ABI over `bsde-core`.
//!
//! Objects cross the boundary as opaque handles that the caller frees with the
//! matching `*_free` function. Every fallible call returns a [`BsdeStatus`];
//! the message for the most recent failure on the calling thread is available
//! from [`bsde_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use bsde_core::generators::{Generator, TerminalCondition};
use bsde_core::lattice::{backward_solve, DiscreteSolution, NodeSolveConfig};
use bsde_core::oracle::solve_bvp;
use bsde_core::paths::clock_an;
use bsde_core::picard::picard_solve;
use bsde_core::stopping::StoppingRule;
use bsde_core::BsdeError;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsdeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    ContractionViolation = 4,
    NonConvergence = 5,
    Solver = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// Opaque driver handle.
pub struct BsdeGenerator(Generator);

/// Opaque terminal condition handle.
pub struct BsdeTerminal(TerminalCondition);

/// Opaque lattice solution handle.
pub struct BsdeSolution(DiscreteSolution);

/// Values at a lattice node.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BsdeNode {
    pub y: f64,
    pub z: f64,
    /// 0 active, 1 exited, 2 capped.
    pub status: i32,
}

/// Result of a Picard run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BsdePicardResult {
    pub y0: f64,
    pub iterations: u32,
    pub final_change: f64,
    pub converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl std::fmt::Display) {
    let text = CString::new(msg.to_string().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn status_of(err: &BsdeError) -> BsdeStatus {
    match err {
        BsdeError::Domain(_) | BsdeError::Alignment { .. } => BsdeStatus::Domain,
        BsdeError::ContractionViolation { .. } => BsdeStatus::ContractionViolation,
        BsdeError::NonConvergence { .. } => BsdeStatus::NonConvergence,
        BsdeError::Size(_) | BsdeError::Input(_) | BsdeError::Config { .. } | BsdeError::InsufficientPath { .. } => {
            BsdeStatus::InvalidArgument
        }
        _ => BsdeStatus::Solver,
    }
}

/// Runs `body`, records any error or panic and maps it to a status.
fn guard(body: impl FnOnce() -> Result<(), (BsdeStatus, String)>) -> BsdeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => BsdeStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside bsde");
            BsdeStatus::Panic
        }
    }
}

fn core<T>(r: bsde_core::Result<T>) -> Result<T, (BsdeStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (BsdeStatus, String) {
    (BsdeStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (BsdeStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (BsdeStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (BsdeStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

fn build_rule(n: u32, barrier: f64, cap: f64, two_sided: bool) -> Result<StoppingRule, (BsdeStatus, String)> {
    core(StoppingRule::aligned(barrier, n, cap, two_sided))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bsde_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Builds a driver from a preset name such as `"sin-z"` or `"linear:-1,0,0.5"`.
///
/// # Safety
/// `spec` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bsde_generator_from_preset(spec: *const c_char, out: *mut *mut BsdeGenerator) -> BsdeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let gen = core(Generator::preset(read_str(spec, "spec")?))?;
        *out = Box::into_raw(Box::new(BsdeGenerator(gen)));
        Ok(())
    })
}

/// Lipschitz constant recorded for the driver.
///
/// # Safety
/// `gen` must come from [`bsde_generator_from_preset`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bsde_generator_lipschitz(gen: *const BsdeGenerator, out: *mut f64) -> BsdeStatus {
    guard(|| {
        let gen = handle(gen, "generator")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = gen.0.lipschitz;
        Ok(())
    })
}

/// # Safety
/// `gen` must be null or come from [`bsde_generator_from_preset`], and not be
/// freed twice.
#[no_mangle]
pub unsafe extern "C" fn bsde_generator_free(gen: *mut BsdeGenerator) {
    if !gen.is_null() {
        drop(Box::from_raw(gen));
    }
}

/// Builds a terminal condition from a preset name such as `"exp"` or
/// `"constant:1"`.
///
/// # Safety
/// `spec` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bsde_terminal_from_preset(spec: *const c_char, out: *mut *mut BsdeTerminal) -> BsdeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let g = core(TerminalCondition::preset(read_str(spec, "spec")?))?;
        *out = Box::into_raw(Box::new(BsdeTerminal(g)));
        Ok(())
    })
}

/// # Safety
/// `g` must be null or come from [`bsde_terminal_from_preset`], and not be
/// freed twice.
#[no_mangle]
pub unsafe extern "C" fn bsde_terminal_free(g: *mut BsdeTerminal) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Backward solve on the stopped lattice with the aligned barrier.
///
/// # Safety
/// Handles must be live; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bsde_lattice_solve(
    n: u32,
    barrier: f64,
    cap: f64,
    two_sided: bool,
    gen: *const BsdeGenerator,
    terminal: *const BsdeTerminal,
    out: *mut *mut BsdeSolution,
) -> BsdeStatus {
    guard(|| {
        let gen = handle(gen, "generator")?;
        let terminal = handle(terminal, "terminal")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let rule = build_rule(n, barrier, cap, two_sided)?;
        let sol = core(backward_solve(n, rule, &gen.0, &terminal.0, &NodeSolveConfig::default()))?;
        *out = Box::into_raw(Box::new(BsdeSolution(sol)));
        Ok(())
    })
}

/// Value at the root node.
///
/// # Safety
/// `sol` must be live; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bsde_solution_root_y(sol: *const BsdeSolution, out: *mut f64) -> BsdeStatus {
    guard(|| {
        let sol = handle(sol, "solution")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = sol.0.root_y();
        Ok(())
    })
}

/// Number of time steps in the solution.
///
/// # Safety
/// `sol` must be live; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bsde_solution_depth(sol: *const BsdeSolution, out: *mut usize) -> BsdeStatus {
    guard(|| {
        let sol = handle(sol, "solution")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = sol.0.layout.depth;
        Ok(())
    })
}

/// Values at node `(k, j)`. Returns `OutOfRange` for nodes outside the
/// stopped lattice.
///
/// # Safety
/// `sol` must be live; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bsde_solution_node(sol: *const BsdeSolution, k: usize, j: i64, out: *mut BsdeNode) -> BsdeStatus {
    guard(|| {
        let sol = handle(sol, "solution")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let v = sol
            .0
            .node(k, j)
            .ok_or_else(|| (BsdeStatus::OutOfRange, format!("node ({k}, {j}) is not on the lattice")))?;
        *out = BsdeNode {
            y: v.y,
            z: v.z,
            status: v.status as i32,
        };
        Ok(())
    })
}

/// # Safety
/// `sol` must be null or come from [`bsde_lattice_solve`], and not be freed
/// twice.
#[no_mangle]
pub unsafe extern "C" fn bsde_solution_free(sol: *mut BsdeSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Picard iteration on the stopped lattice, started from zero.
///
/// # Safety
/// Handles must be live; `out` must be a valid pointer.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn bsde_picard_solve(
    n: u32,
    barrier: f64,
    cap: f64,
    two_sided: bool,
    gen: *const BsdeGenerator,
    terminal: *const BsdeTerminal,
    p_max: u32,
    tol: f64,
    out: *mut BsdePicardResult,
) -> BsdeStatus {
    guard(|| {
        let gen = handle(gen, "generator")?;
        let terminal = handle(terminal, "terminal")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let rule = build_rule(n, barrier, cap, two_sided)?;
        let res = core(picard_solve(n, rule, &gen.0, &terminal.0, p_max as usize, tol))?;
        *out = BsdePicardResult {
            y0: res.iterate.root_y(),
            iterations: res.iterations as u32,
            final_change: res.final_change(),
            converged: res.converged,
        };
        Ok(())
    })
}

/// Value at 0 of the boundary value problem on `(-a, a)`.
///
/// # Safety
/// Handles must be live; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bsde_bvp_u0(
    gen: *const BsdeGenerator,
    terminal: *const BsdeTerminal,
    a: f64,
    grid_size: usize,
    out: *mut f64,
) -> BsdeStatus {
    guard(|| {
        let gen = handle(gen, "generator")?;
        let terminal = handle(terminal, "terminal")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = core(solve_bvp(&gen.0, &terminal.0, a, grid_size))?.u0();
        Ok(())
    })
}

/// Lattice clock `floor(n t) / n`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bsde_clock_an(t: f64, n: u32, out: *mut f64) -> BsdeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = core(clock_an(t, n))?;
        Ok(())
    })
}
