mod common;

use proptest::prelude::*;

use bsde_core::generators::{validate_generator, Generator, SampleBox, TerminalCondition};
use bsde_core::lattice::{
    backward_solve, martingale_identity_residual, scheme_residual, solve_node_y, DiscreteSolution,
    NodeSolveConfig,
};
use bsde_core::lsmc::{lsmc_solve, Basis, LsmcConfig};
use bsde_core::metrics::{diagnostic_walks, qv_residual, sup_process_distance};
use bsde_core::oracle::{enumerate_lattice_expectation, Functional};
use bsde_core::paths::{FinePath, WalkParams, WalkPath};
use bsde_core::picard::picard_solve;
use bsde_core::stopping::StoppingRule;

#[derive(Debug, Clone)]
struct Case {
    n: u32,
    cap: f64,
    a: f64,
    two_sided: bool,
    coef: [f64; 4],
    terminal: u8,
}

impl Case {
    fn rule(&self) -> StoppingRule {
        StoppingRule::aligned(self.a, self.n, self.cap, self.two_sided).unwrap()
    }

    fn generator(&self) -> Generator {
        let [alpha, beta, c, gamma] = self.coef;
        let k = alpha.abs().max(beta.abs() + gamma.abs());
        let s = if k >= 0.5 * self.n as f64 { 0.5 * self.n as f64 / k } else { 1.0 };
        Generator::affine_sine(alpha * s, beta * s, c, gamma * s).unwrap()
    }

    fn terminal(&self) -> TerminalCondition {
        match self.terminal {
            0 => TerminalCondition::exp(),
            1 => TerminalCondition::linear(-1.5, 0.25),
            _ => TerminalCondition::preset("exp-discount:0.5").unwrap(),
        }
    }

    fn solve(&self, cfg: &NodeSolveConfig) -> DiscreteSolution {
        backward_solve(self.n, self.rule(), &self.generator(), &self.terminal(), cfg).unwrap()
    }
}

fn case() -> impl Strategy<Value = Case> {
    (
        1u32..=8,
        1u32..=3,
        0.1f64..1.5,
        any::<bool>(),
        prop::array::uniform4(-1.5f64..1.5),
        0u8..3,
    )
        .prop_map(|(n, cap, a, two_sided, coef, terminal)| Case {
            n,
            cap: cap as f64,
            a,
            two_sided,
            coef,
            terminal,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scheme_and_martingale_identities(c in case()) {
        let sol = c.solve(&NodeSolveConfig::default());
        let gen = c.generator();
        prop_assert!(scheme_residual(&sol, &gen) < 1e-12);
        prop_assert!(martingale_identity_residual(&sol, &gen) < 1e-12);
        let walks = diagnostic_walks(&sol, 256, 3).unwrap();
        let scale = sol.y.iter().fold(1.0f64, |m, y| m.max(y.abs()));
        prop_assert!(qv_residual(&sol, &gen, &walks).unwrap() < 1e-12 * scale * scale);
    }

    #[test]
    fn stopped_nodes_are_frozen(c in case()) {
        let sol = c.solve(&NodeSolveConfig::default());
        let g = c.terminal();
        for v in sol.nodes().filter(|v| !v.status.is_active()) {
            prop_assert_eq!(v.y, g.eval(sol.layout.position(v.j), sol.layout.time(v.k)));
            prop_assert_eq!(v.z, 0.0);
        }
    }

    #[test]
    fn node_fixed_point_ignores_start(
        c in case(),
        mean in -5.0f64..5.0,
        z in -5.0f64..5.0,
        t in 0.0f64..3.0,
        offset in -10.0f64..10.0,
    ) {
        let gen = c.generator();
        let base = NodeSolveConfig::default();
        let a = solve_node_y(mean, z, t, &gen, c.n, &base).unwrap();
        let b = solve_node_y(mean, z, t, &gen, c.n, &NodeSolveConfig { init_offset: offset, ..base }).unwrap();
        let scale = a.abs().max(1.0);
        prop_assert!((a - b).abs() <= 10.0 * base.fixed_point_tol * scale);
        let root = common::bisect_node(mean, z, t, &gen, c.n);
        prop_assert!((a - root).abs() <= 10.0 * base.fixed_point_tol * scale);
    }

    #[test]
    fn solution_is_adapted(c in case(), seed in any::<u64>(), cut_frac in 0.0f64..1.0) {
        let sol = c.solve(&NodeSolveConfig::default());
        let params = WalkParams::new(c.n, c.cap as u32, seed).unwrap();
        let walk = bsde_core::paths::build_walk(params).unwrap();
        let cut = ((walk.steps() as f64) * cut_frac) as usize;
        let mut inc = walk.increments.clone();
        for e in inc.iter_mut().skip(cut) {
            *e = -*e;
        }
        let a = sol.along_path(&walk).unwrap();
        let b = sol.along_path(&WalkPath::from_increments(params, inc).unwrap()).unwrap();
        prop_assert_eq!(&a.y[..=cut], &b.y[..=cut]);
        prop_assert_eq!(&a.z[..cut], &b.z[..cut]);
    }

    #[test]
    fn picard_limit_solves_the_scheme(c in case()) {
        let gen = c.generator();
        let out = picard_solve(c.n, c.rule(), &gen, &c.terminal(), 400, 1e-13).unwrap();
        prop_assume!(out.converged);
        let sol = out.iterate.into_solution();
        prop_assert!(scheme_residual(&sol, &gen) < 1e-11);
    }

    #[test]
    fn zero_driver_matches_enumeration(n in 1u32..=8, cap in 1u32..=2, a in 0.1f64..1.2, two_sided in any::<bool>()) {
        let rule = StoppingRule::aligned(a, n, cap as f64, two_sided).unwrap();
        let g = TerminalCondition::exp();
        let sol = backward_solve(n, rule, &Generator::zero(), &g, &NodeSolveConfig::default()).unwrap();
        let mean = enumerate_lattice_expectation(n, &rule, &Functional::TerminalValue(&g)).unwrap();
        prop_assert!((sol.root_y() - mean).abs() < 1e-12);
    }

    #[test]
    fn dissipative_linear_drivers_pass_validation(mu in 0.01f64..3.0, extra in 0.0f64..2.0, beta in -2.0f64..2.0, c in -1.0f64..1.0, seed in any::<u64>()) {
        let alpha = -(mu + extra);
        let gen = Generator::linear(alpha, beta, c).unwrap();
        let report = validate_generator(&gen, SampleBox::symmetric(2.0, 5.0, 5.0), 500, seed).unwrap();
        prop_assert_eq!(report.monotonicity_violations, 0);
        prop_assert!(report.lipschitz_estimate <= alpha.abs().max(beta.abs()) + 1e-6);
        let again = validate_generator(&gen, SampleBox::symmetric(2.0, 5.0, 5.0), 500, seed).unwrap();
        prop_assert_eq!(report, again);
    }

    #[test]
    fn sup_distance_is_a_distance(s1 in any::<u64>(), s2 in any::<u64>(), l in 0.0f64..4.0) {
        let x = FinePath::brownian(0.125, 32, s1, 0).unwrap();
        let y = FinePath::brownian(0.125, 32, s2, 0).unwrap();
        let d = sup_process_distance(&x, &y, l).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d, sup_process_distance(&y, &x, l).unwrap());
        prop_assert_eq!(sup_process_distance(&x, &x, l).unwrap(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn regression_residuals_are_orthogonal(seed in any::<u64>(), degree in 1usize..5, a in 0.3f64..1.5) {
        let mut cfg = LsmcConfig::uniform(3000, 16, 1.0, Basis::Monomial { degree }, seed);
        cfg.bootstrap = 0;
        cfg.keep_trajectories = true;
        let rule = StoppingRule::new(a, a, 1.0, true).unwrap();
        let g = TerminalCondition::exp();
        let res = lsmc_solve(&cfg, &Generator::sin_z(), &g, &rule).unwrap();
        prop_assert!(res.orthogonality.iter().all(|o| *o < 1e-10));
        for t in res.trajectories.unwrap() {
            let last = t.w.len() - 1;
            prop_assert_eq!(t.y[last], g.eval(t.w[last], last as f64 / 16.0));
            // Stopped paths left the band exactly at their last knot.
            if last < 16 {
                prop_assert!(t.w[last].abs() > a);
                prop_assert!(t.w[..last].iter().all(|w| w.abs() <= a));
            }
        }
    }
}
