//! Reference computations shared by the integration suites. Each is written
//! independently of the library routines it checks.

#![allow(dead_code, clippy::needless_range_loop, clippy::too_many_arguments)]

use bsde_core::generators::{Generator, TerminalCondition};

/// Expected absorption time at `+-m` of the simple random walk from 0, by
/// dense Gaussian elimination on the first-step equations.
pub fn gamblers_ruin_steps(m: i64) -> f64 {
    let size = (2 * m - 1) as usize;
    let mut a = vec![vec![0.0f64; size + 1]; size];
    for (r, row) in a.iter_mut().enumerate() {
        row[r] = 1.0;
        if r > 0 {
            row[r - 1] = -0.5;
        }
        if r + 1 < size {
            row[r + 1] = -0.5;
        }
        row[size] = 1.0;
    }
    for c in 0..size {
        let pivot = (c..size)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, pivot);
        for r in 0..size {
            if r != c {
                let factor = a[r][c] / a[c][c];
                for k in c..=size {
                    a[r][k] -= factor * a[c][k];
                }
            }
        }
    }
    a[(m - 1) as usize][size] / a[(m - 1) as usize][(m - 1) as usize]
}

/// Root of `y - mean - f(t, y, z) / n` by bisection; the map is strictly
/// increasing when `K / n < 1`.
pub fn bisect_node(mean: f64, z: f64, t: f64, gen: &Generator, n: u32) -> f64 {
    let h = |y: f64| y - mean - gen.eval(t, y, z) / n as f64;
    let mut width = 1.0;
    while h(mean - width) > 0.0 || h(mean + width) < 0.0 {
        width *= 2.0;
    }
    let (mut lo, mut hi) = (mean - width, mean + width);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if h(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Root value of the scheme by recursion over every increment sequence,
/// stopping when `|x| > barrier_an` (or `x > barrier_an` one-sided) or at
/// `steps`.
pub fn tree_root(
    n: u32,
    steps: usize,
    barrier_an: f64,
    two_sided: bool,
    gen: &Generator,
    terminal: &TerminalCondition,
) -> f64 {
    fn go(
        k: usize,
        j: i64,
        n: u32,
        steps: usize,
        barrier_an: f64,
        two_sided: bool,
        gen: &Generator,
        terminal: &TerminalCondition,
    ) -> f64 {
        let x = j as f64 / (n as f64).sqrt();
        let out = if two_sided { x.abs() > barrier_an } else { x > barrier_an };
        if (k > 0 && out) || k == steps {
            return terminal.eval(x, k as f64 / n as f64);
        }
        let up = go(k + 1, j + 1, n, steps, barrier_an, two_sided, gen, terminal);
        let down = go(k + 1, j - 1, n, steps, barrier_an, two_sided, gen, terminal);
        let z = (n as f64).sqrt() * (up - down) / 2.0;
        bisect_node((up + down) / 2.0, z, k as f64 / n as f64, gen, n)
    }
    go(0, 0, n, steps, barrier_an, two_sided, gen, terminal)
}

/// `u(0) = cosh(1) / cosh(sqrt 2)` solves `u''/2 - u = 0` with `u(+-1) = e^{+-1}`.
pub fn exp_terminal_minus_y_u0() -> f64 {
    1f64.cosh() / 2f64.sqrt().cosh()
}

#[test]
fn gamblers_ruin_small_cases() {
    assert!((gamblers_ruin_steps(1) - 1.0).abs() < 1e-12);
    assert!((gamblers_ruin_steps(2) - 4.0).abs() < 1e-12);
    assert!((gamblers_ruin_steps(5) - 25.0).abs() < 1e-10);
}
