//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use lyapgen::dynamics::{get_system, DynamicalSystem, PENDULUM_G, PENDULUM_L};
use lyapgen::expr::{parse, Expression};

/// Brute-force verdict on a 400x400 grid: `V - V(0)` is evaluated directly
/// and `LfV` by central differences of `V` against the numeric vector field,
/// so nothing from the symbolic differentiation path is reused.
pub fn grid_verdict(v: &Expression, sys: &DynamicalSystem, tol: f64, origin_radius: f64) -> bool {
    assert_eq!(sys.dim, 2);
    const N: usize = 400;
    let (lo, hi) = (&sys.domain.lower, &sys.domain.upper);
    let v0 = v.eval_unchecked(&[0.0, 0.0]);
    let h = 1e-6;
    for i in 0..N {
        for j in 0..N {
            let x = [
                lo[0] + (hi[0] - lo[0]) * i as f64 / (N - 1) as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / (N - 1) as f64,
            ];
            if (x[0] * x[0] + x[1] * x[1]).sqrt() <= origin_radius {
                continue;
            }
            let vt = v.eval_unchecked(&x) - v0;
            if !vt.is_finite() || -vt > tol {
                return false;
            }
            let f = sys.eval_rhs(&x).unwrap();
            let mut lie = 0.0;
            for k in 0..2 {
                let mut up = x;
                up[k] += h;
                let mut down = x;
                down[k] -= h;
                lie += (v.eval_unchecked(&up) - v.eval_unchecked(&down)) / (2.0 * h) * f[k];
            }
            if !lie.is_finite() || lie > tol {
                return false;
            }
        }
    }
    true
}

pub fn pendulum_exact() -> f64 {
    PENDULUM_L / (2.0 * PENDULUM_G)
}

/// Twenty 2-D candidates: the first ten are Lyapunov functions on their
/// domains, the last ten are corrupted versions.
pub fn corpus() -> Vec<(DynamicalSystem, Expression, bool)> {
    let c = pendulum_exact();
    let items: Vec<(&str, String, bool)> = vec![
        ("van_der_pol", "x1^2 + x2^2".into(), true),
        ("van_der_pol", "2*x1^2 + 2*x2^2".into(), true),
        ("van_der_pol", "x1^2 + x2^2 + 5".into(), true),
        ("van_der_pol", "0.3*x1^2 + 0.3*x2^2 - 1".into(), true),
        ("path_following", "x1^2 + 0.5*x2^2".into(), true),
        ("path_following", "3*x1^2 + 1.5*x2^2".into(), true),
        ("path_following", "(x1^2 + 0.5*x2^2)/4".into(), true),
        ("inverted_pendulum", format!("1 - cos(x1) + {c}*x2^2"), true),
        ("inverted_pendulum", format!("2*omc(x1) + {}*x2^2", 2.0 * c), true),
        ("inverted_pendulum", format!("omc(x1) + {c}*sq(x2) + 1"), true),
        ("van_der_pol", "x1^2 - x2^2".into(), false),
        ("van_der_pol", "-(x1^2 + x2^2)".into(), false),
        ("van_der_pol", "x1^2 + 0.5*x2^2".into(), false),
        ("van_der_pol", "sin(x1) + x2^2".into(), false),
        ("path_following", "x1^2 + x2^2".into(), false),
        ("path_following", "x1^2 + 2*x2^2".into(), false),
        ("inverted_pendulum", "1 - cos(x1) + 0.26*x2^2".into(), false),
        ("inverted_pendulum", "1 - cos(x1) + 0.3*x2^2".into(), false),
        ("inverted_pendulum", "1 - cos(x1) + 0.2*x2^2".into(), false),
        ("inverted_pendulum", "cos(x1) + 0.25*x2^2".into(), false),
    ];
    items.into_iter().map(|(s, e, valid)| (get_system(s).unwrap(), parse(&e).unwrap(), valid)).collect()
}
