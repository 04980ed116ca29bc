use std::time::Instant;

use lyapgen::data::Dataset;
use lyapgen::expr::{mse, Expression};
use lyapgen::symreg::{fit, GpConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn planted(f: impl Fn(&[f64]) -> f64, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let xs: Vec<Vec<f64>> = (0..500).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y = xs.iter().map(|x| f(x)).collect();
    Dataset::from_rows(&xs, y)
}

/// Smallest complexity among front entries reaching `mse_tol`.
fn recovered(data: &Dataset, seed: u64, mse_tol: f64) -> Option<(usize, Expression)> {
    let cfg = GpConfig { seed, ..GpConfig::default() };
    let front = fit(data, &cfg).unwrap();
    front
        .iter()
        .find(|e| e.mse <= mse_tol)
        .map(|e| {
            assert_eq!(mse(&e.expression, data), e.mse);
            (e.complexity, e.expression.clone())
        })
}

#[test]
fn square_of_one_variable() {
    let mut hits = 0;
    for seed in 0..5 {
        let data = planted(|x| x[0] * x[0], 1, seed);
        if let Some((c, e)) = recovered(&data, seed, 1e-8) {
            if c <= 3 {
                hits += 1;
            } else {
                eprintln!("seed {seed}: {e} has complexity {c}");
            }
        }
    }
    assert!(hits >= 4, "{hits}/5");
}

#[test]
fn weighted_sum_of_squares() {
    let mut hits = 0;
    for seed in 0..5 {
        let data = planted(|x| x[0] * x[0] + 0.5 * x[1] * x[1], 2, seed);
        let start = Instant::now();
        let r = recovered(&data, seed, 1e-6);
        eprintln!("seed {seed}: {:?} in {:.1?}", r.as_ref().map(|(c, e)| format!("{e} ({c})")), start.elapsed());
        if r.is_some_and(|(c, _)| c <= 9) {
            hits += 1;
        }
    }
    assert!(hits >= 4, "{hits}/5");
}

#[test]
fn squared_sine() {
    let mut hits = 0;
    for seed in 0..5 {
        let data = planted(|x| x[0].sin().powi(2), 1, seed);
        if recovered(&data, seed, 1e-6).is_some_and(|(c, _)| c <= 9) {
            hits += 1;
        }
    }
    assert!(hits >= 4, "{hits}/5");
}
