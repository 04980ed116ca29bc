//! Multi-start normal-flow Newton for a scalar equation `e(x) = 0` over a
//! box domain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dynamics::{Domain, Manifold};
use crate::expr::{gradient, Expression, Program};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RootFindConfig {
    pub starts: usize,
    pub max_iter: usize,
    /// A point counts as a root when `|e(x)|` is at most this.
    pub residual_tol: f64,
    /// Roots within this distance of the origin are the origin root.
    pub origin_radius: f64,
    /// Roots closer than this are merged.
    pub merge_radius: f64,
    pub seed: u64,
}

impl Default for RootFindConfig {
    fn default() -> Self {
        RootFindConfig { starts: 64, max_iter: 100, residual_tol: 1e-8, origin_radius: 1e-2, merge_radius: 1e-2, seed: 0 }
    }
}

impl RootFindConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.residual_tol > 0.0) || !(self.origin_radius > 0.0) || !(self.merge_radius >= 0.0) {
            return Err(crate::Error::Config("root tolerance and origin radius must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) struct Compiled {
    value: Program,
    grad: Vec<Program>,
}

impl Compiled {
    pub fn new(e: &Expression, dim: usize) -> Self {
        Compiled { value: Program::compile(e), grad: gradient(e, dim).iter().map(Program::compile).collect() }
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.value.eval_point(x)
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.grad.iter().map(|p| p.eval_point(x)).collect()
    }
}

/// Distinct points in `domain` with `|e(x)| <= residual_tol`, in start
/// order. The origin root, when found, is included.
pub fn find_roots(e: &Expression, domain: &Domain, cfg: &RootFindConfig) -> Vec<Vec<f64>> {
    let f = Compiled::new(e, domain.dim());
    let starts = start_points(domain, cfg);
    let found: Vec<Option<Vec<f64>>> = starts.par_iter().map(|x0| newton(&f, domain, x0.clone(), cfg)).collect();
    let mut roots: Vec<Vec<f64>> = Vec::new();
    for r in found.into_iter().flatten() {
        if !roots.iter().any(|q| distance(q, &r) <= cfg.merge_radius) {
            roots.push(r);
        }
    }
    roots
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// One eighth of the starts jitter around the origin, the rest come from a
/// Latin hypercube over the domain.
fn start_points(domain: &Domain, cfg: &RootFindConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let near = cfg.starts.div_ceil(8).min(cfg.starts);
    let mut out = Vec::with_capacity(cfg.starts);
    for _ in 0..near {
        let mut x: Vec<f64> = domain
            .lower
            .iter()
            .zip(&domain.upper)
            .map(|(lo, hi)| {
                let s = 0.05 * (hi - lo).abs().max(1e-12);
                Normal::new(0.0, s).expect("positive scale").sample(&mut rng)
            })
            .collect();
        domain.project(&mut x);
        domain.clamp(&mut x);
        domain.project(&mut x);
        out.push(if domain.contains(&x) { x } else { vec![0.0; domain.dim()] });
    }
    out.extend(domain.latin_hypercube(cfg.starts - near, &mut rng));
    out
}

/// Normal-flow iteration `x <- x - e grad e / |grad e|^2` with step halving,
/// kept feasible by box clamping (full box) or by shrinking the step (on a
/// manifold). Iterates past `residual_tol` so that degenerate roots, like
/// the minimum of a positive definite function, are approached closely.
fn newton(f: &Compiled, domain: &Domain, mut x: Vec<f64>, cfg: &RootFindConfig) -> Option<Vec<f64>> {
    let fine = cfg.residual_tol * 1e-6;
    let mut fx = f.value(&x);
    if !fx.is_finite() {
        return None;
    }
    let on_manifold = domain.manifold != Manifold::Full;
    for _ in 0..cfg.max_iter {
        if fx.abs() <= fine {
            break;
        }
        let mut g = f.grad(&x);
        domain.project(&mut g);
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if !(gg > 0.0) || !gg.is_finite() {
            break;
        }
        let scale = fx / gg;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut y: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - t * scale * gi).collect();
            if on_manifold {
                domain.project(&mut y);
                if !domain.contains(&y) {
                    t *= 0.5;
                    continue;
                }
            } else {
                domain.clamp(&mut y);
            }
            let fy = f.value(&y);
            if fy.is_finite() && fy.abs() < fx.abs() {
                let moved = distance(&x, &y);
                x = y;
                fx = fy;
                accepted = moved > 1e-15 * (1.0 + norm(&x));
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (fx.abs() <= cfg.residual_tol && domain.contains(&x)).then_some(x)
}
