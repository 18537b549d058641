use std::ffi::{CStr, CString};
use std::ptr;

use bsde_ffi::*;

fn generator(spec: &str) -> *mut BsdeGenerator {
    let s = CString::new(spec).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { bsde_generator_from_preset(s.as_ptr(), &mut out) }, BsdeStatus::Ok);
    out
}

fn terminal(spec: &str) -> *mut BsdeTerminal {
    let s = CString::new(spec).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { bsde_terminal_from_preset(s.as_ptr(), &mut out) }, BsdeStatus::Ok);
    out
}

fn last_error() -> String {
    let p = bsde_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn lattice_round_trip() {
    let gen = generator("zero");
    let g = terminal("constant:1");
    let mut sol = ptr::null_mut();
    unsafe {
        assert_eq!(bsde_lattice_solve(4, 0.5, 1.0, true, gen, g, &mut sol), BsdeStatus::Ok);
        let mut y0 = 0.0;
        assert_eq!(bsde_solution_root_y(sol, &mut y0), BsdeStatus::Ok);
        assert_eq!(y0, 1.0);
        let mut depth = 0;
        assert_eq!(bsde_solution_depth(sol, &mut depth), BsdeStatus::Ok);
        assert_eq!(depth, 4);
        let mut node = BsdeNode::default();
        assert_eq!(bsde_solution_node(sol, 0, 0, &mut node), BsdeStatus::Ok);
        assert_eq!((node.y, node.z, node.status), (1.0, 0.0, 0));
        assert_eq!(bsde_solution_node(sol, 1, 0, &mut node), BsdeStatus::OutOfRange);
        assert!(last_error().contains("(1, 0)"));
        bsde_solution_free(sol);
        bsde_generator_free(gen);
        bsde_terminal_free(g);
    }
}

#[test]
fn picard_agrees_with_direct_solve() {
    let gen = generator("sin-z");
    let g = terminal("exp");
    unsafe {
        let mut sol = ptr::null_mut();
        assert_eq!(bsde_lattice_solve(8, 0.5, 1.0, true, gen, g, &mut sol), BsdeStatus::Ok);
        let mut direct = 0.0;
        bsde_solution_root_y(sol, &mut direct);
        let mut res = BsdePicardResult::default();
        assert_eq!(bsde_picard_solve(8, 0.5, 1.0, true, gen, g, 200, 1e-13, &mut res), BsdeStatus::Ok);
        assert!(res.converged);
        assert!((res.y0 - direct).abs() < 1e-12);
        bsde_solution_free(sol);
        bsde_generator_free(gen);
        bsde_terminal_free(g);
    }
}

#[test]
fn bvp_and_clock() {
    let gen = generator("zero");
    let g = terminal("exp");
    unsafe {
        let mut u0 = 0.0;
        assert_eq!(bsde_bvp_u0(gen, g, 0.5, 512, &mut u0), BsdeStatus::Ok);
        assert!((u0 - 0.5f64.cosh()).abs() < 1e-6);
        let mut t = 0.0;
        assert_eq!(bsde_clock_an(0.74, 4, &mut t), BsdeStatus::Ok);
        assert_eq!(t, 0.5);
        assert_eq!(bsde_clock_an(-1.0, 4, &mut t), BsdeStatus::Domain);
        bsde_generator_free(gen);
        bsde_terminal_free(g);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(bsde_generator_from_preset(ptr::null(), &mut out), BsdeStatus::NullPointer);
        let bad = CString::new("no-such-driver").unwrap();
        assert_ne!(bsde_generator_from_preset(bad.as_ptr(), &mut out), BsdeStatus::Ok);
        assert!(out.is_null());
        assert!(last_error().contains("no-such-driver"));

        let gen = generator("linear:-5,0,0");
        let g = terminal("exp");
        let mut sol = ptr::null_mut();
        assert_eq!(
            bsde_lattice_solve(4, 0.5, 1.0, true, gen, g, &mut sol),
            BsdeStatus::ContractionViolation
        );
        assert!(sol.is_null());
        assert_eq!(
            bsde_lattice_solve(4, 0.5, 1.0, true, ptr::null(), g, &mut sol),
            BsdeStatus::NullPointer
        );
        bsde_generator_free(gen);
        bsde_terminal_free(g);
        bsde_generator_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/bsde.h")).unwrap();
    for name in [
        "bsde_last_error_message",
        "bsde_generator_from_preset",
        "bsde_generator_lipschitz",
        "bsde_generator_free",
        "bsde_terminal_from_preset",
        "bsde_terminal_free",
        "bsde_lattice_solve",
        "bsde_solution_root_y",
        "bsde_solution_depth",
        "bsde_solution_node",
        "bsde_solution_free",
        "bsde_picard_solve",
        "bsde_bvp_u0",
        "bsde_clock_an",
        "typedef struct BsdeGenerator BsdeGenerator;",
        "BSDE_STATUS_CONTRACTION_VIOLATION = 4",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
