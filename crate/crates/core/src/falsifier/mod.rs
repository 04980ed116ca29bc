//! Numeric falsification of Lyapunov candidates: symbolic Lie derivative,
//! multi-start root finding on `V` and `LfV`, counterexample search around
//! the roots, and a dense domain sample.

mod roots;

use std::collections::HashSet;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub use roots::{find_roots, norm, RootFindConfig};

use crate::data::Dataset;
use crate::dynamics::{Domain, DynamicalSystem};
use crate::expr::{lie_derivative, scale_terms, simplify, Expression, Program};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Allowed violation of either condition.
    pub tol: f64,
    /// Dense uniform domain samples.
    pub n_check: usize,
    pub roots: RootFindConfig,
    /// First perturbation radius around a root of `LfV`.
    pub eps0: f64,
    pub growth: f64,
    /// Random unit directions tried per root.
    pub directions: usize,
    /// Extra uniform probes drawn by the counterexample search.
    pub random_probes: usize,
    pub max_counterexamples: usize,
    /// Report `indeterminate` when the check runs longer than this.
    pub max_seconds: Option<f64>,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            tol: 1e-4,
            n_check: 100_000,
            roots: RootFindConfig::default(),
            eps0: 1e-3,
            growth: 1.5,
            directions: 16,
            random_probes: 2000,
            max_counterexamples: 500,
            max_seconds: None,
            seed: 0,
        }
    }
}

impl CheckConfig {
    pub fn validate(&self) -> Result<()> {
        self.roots.validate()?;
        if !(self.tol >= 0.0) || !(self.eps0 > 0.0) || !(self.growth > 1.0) {
            return Err(Error::Config("tol >= 0, eps0 > 0 and growth > 1 are required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Valid,
    Invalid,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VerificationReport {
    pub status: Status,
    pub reason: Option<String>,
    /// `V - V(0)` over the state variables.
    pub candidate: Expression,
    pub lie_derivative: Expression,
    /// Roots of the candidate outside the origin ball.
    pub roots_v: Vec<Vec<f64>>,
    /// Roots of the Lie derivative outside the origin ball.
    pub roots_lie: Vec<Vec<f64>>,
    /// Largest `-V` over the probes, origin ball excluded.
    pub max_neg_v: Option<f64>,
    /// Largest `LfV` over the probes, origin ball excluded.
    pub max_lie: Option<f64>,
    pub counterexamples: Vec<Vec<f64>>,
    pub probes: usize,
    pub wall_time_ms: f64,
}

impl VerificationReport {
    pub fn is_valid(&self) -> bool {
        self.status == Status::Valid
    }
}

/// `V - V(0)` with auxiliary features expanded, simplified.
pub fn normalize(v: &Expression, sys: &DynamicalSystem) -> Result<Expression> {
    let expanded = sys.expand_auxiliary(v);
    if expanded.arity() > sys.dim {
        return Err(Error::DimensionMismatch { expected: sys.dim, found: expanded.arity() });
    }
    let v0 = expanded.eval_unchecked(&vec![0.0; sys.dim]);
    if !v0.is_finite() {
        return Err(crate::expr::EvalError::NonFinite { point: vec![0.0; sys.dim] }.into());
    }
    Ok(simplify(&(expanded - v0)))
}

/// Positive factor bringing the largest magnitude of `V - V(0)` over `n`
/// seeded domain samples to 1, or 1 when the candidate vanishes on every
/// sample. Validity does not depend on a positive scale, but an absolute
/// tolerance does, and a candidate scaled towards zero would otherwise pass
/// any check.
pub fn peak_scale(v: &Expression, sys: &DynamicalSystem, n: usize, seed: u64) -> Result<f64> {
    let e = normalize(v, sys)?;
    let pts = sys.domain.sample_many(n, &mut ChaCha8Rng::seed_from_u64(seed));
    let peak = Program::compile(&e).eval_rows(&pts).into_iter().map(f64::abs).filter(|v| v.is_finite()).fold(0.0, f64::max);
    Ok(if peak > 0.0 && peak.is_finite() { 1.0 / peak } else { 1.0 })
}

/// `V - V(0)` rescaled by [`peak_scale`].
pub fn unit_peak(v: &Expression, sys: &DynamicalSystem, n: usize, seed: u64) -> Result<Expression> {
    let k = peak_scale(v, sys, n, seed)?;
    Ok(simplify(&scale_terms(&normalize(v, sys)?, k)))
}

pub fn check_candidate(v: &Expression, sys: &DynamicalSystem, cfg: &CheckConfig) -> Result<VerificationReport> {
    cfg.validate()?;
    let start = Instant::now();
    let over_budget = || cfg.max_seconds.is_some_and(|s| start.elapsed().as_secs_f64() > s);
    let r0 = cfg.roots.origin_radius;

    let expanded = sys.expand_auxiliary(v);
    if expanded.arity() > sys.dim {
        return Err(Error::DimensionMismatch { expected: sys.dim, found: expanded.arity() });
    }
    let mut report = VerificationReport {
        status: Status::Invalid,
        reason: None,
        candidate: expanded.clone(),
        lie_derivative: Expression::constant(0.0),
        roots_v: Vec::new(),
        roots_lie: Vec::new(),
        max_neg_v: None,
        max_lie: None,
        counterexamples: Vec::new(),
        probes: 0,
        wall_time_ms: 0.0,
    };
    let finish = |mut r: VerificationReport| {
        r.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(r)
    };

    let vt = match normalize(v, sys) {
        Ok(e) => e,
        Err(Error::Eval(_)) => {
            report.reason = Some("singular in domain".into());
            return finish(report);
        }
        Err(e) => return Err(e),
    };
    let lie = lie_derivative(&vt, &sys.rhs)?;
    report.candidate = vt.clone();
    report.lie_derivative = lie.clone();

    // dense sample
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points = sys.domain.sample_many(cfg.n_check, &mut rng);
    let data = Dataset::from_rows(&points, vec![0.0; points.len()]);
    let v_vals = Program::compile(&vt).eval_columns(&data.columns, data.len());
    let l_vals = Program::compile(&lie).eval_columns(&data.columns, data.len());
    report.probes = points.len();
    if v_vals.iter().chain(&l_vals).any(|x| !x.is_finite()) {
        report.reason = Some("singular in domain".into());
        return finish(report);
    }
    let mut max_neg_v = f64::NEG_INFINITY;
    let mut max_lie = f64::NEG_INFINITY;
    let mut dense_violators = Vec::new();
    for (k, p) in points.iter().enumerate() {
        if norm(p) <= r0 {
            continue;
        }
        max_neg_v = max_neg_v.max(-v_vals[k]);
        max_lie = max_lie.max(l_vals[k]);
        if l_vals[k] > cfg.tol {
            dense_violators.push(p.clone());
        }
    }
    if over_budget() {
        return finish(indeterminate(report, max_neg_v, max_lie));
    }

    // roots of the candidate
    let root_cfg = |salt: u64| RootFindConfig { seed: cfg.roots.seed ^ cfg.seed.wrapping_add(salt), ..cfg.roots.clone() };
    report.roots_v = find_roots(&vt, &sys.domain, &root_cfg(1)).into_iter().filter(|r| norm(r) > r0).collect();
    if over_budget() {
        return finish(indeterminate(report, max_neg_v, max_lie));
    }

    // roots of the Lie derivative and counterexamples around them
    report.roots_lie = find_roots(&lie, &sys.domain, &root_cfg(2)).into_iter().filter(|r| norm(r) > r0).collect();
    let lie_prog = Program::compile(&lie);
    let mut cex = generate_counterexamples(&lie, &report.roots_lie, &sys.domain, cfg);
    cex.extend(dense_violators);
    report.counterexamples = dedupe(cex, cfg.max_counterexamples);
    for p in &report.counterexamples {
        max_lie = max_lie.max(lie_prog.eval_point(p));
    }
    for r in &report.roots_v {
        max_neg_v = max_neg_v.max(-vt.eval_unchecked(r));
    }
    report.probes += cfg.random_probes;
    report.max_neg_v = Some(max_neg_v).filter(|m| m.is_finite());
    report.max_lie = Some(max_lie).filter(|m| m.is_finite());

    let positive = report.roots_v.is_empty() && max_neg_v <= cfg.tol;
    let decreasing = report.counterexamples.is_empty() && max_lie <= cfg.tol;
    report.status = if positive && decreasing {
        if over_budget() {
            Status::Indeterminate
        } else {
            Status::Valid
        }
    } else {
        Status::Invalid
    };
    report.reason = match report.status {
        Status::Valid => None,
        Status::Indeterminate => Some("time budget exhausted".into()),
        Status::Invalid => Some(
            match (positive, decreasing) {
                (false, false) => "not positive definite and Lie derivative positive",
                (false, true) => {
                    if report.roots_v.is_empty() {
                        "candidate negative in domain"
                    } else {
                        "candidate has nonzero roots"
                    }
                }
                _ => "Lie derivative positive",
            }
            .into(),
        ),
    };
    finish(report)
}

fn indeterminate(mut r: VerificationReport, max_neg_v: f64, max_lie: f64) -> VerificationReport {
    r.max_neg_v = Some(max_neg_v).filter(|m| m.is_finite());
    r.max_lie = Some(max_lie).filter(|m| m.is_finite());
    r.status = Status::Indeterminate;
    r.reason = Some("time budget exhausted".into());
    r
}

/// In-domain points with `LfV > tol`: first those found by walking
/// outwards from each nonzero root along random directions with radius
/// `eps0 * growth^k`, then violators among uniform random probes. Points in
/// the origin ball are never returned.
pub fn generate_counterexamples(lie: &Expression, roots: &[Vec<f64>], domain: &Domain, cfg: &CheckConfig) -> Vec<Vec<f64>> {
    let prog = Program::compile(lie);
    let r0 = cfg.roots.origin_radius;
    let violates = |p: &[f64]| norm(p) > r0 && domain.contains(p) && prog.eval_point(p) > cfg.tol;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));

    // directions are drawn up front so the walk can run in parallel
    let mut jobs: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, r) in roots.iter().enumerate() {
        if norm(r) <= r0 {
            continue;
        }
        for _ in 0..cfg.directions {
            let mut d: Vec<f64> = (0..domain.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            domain.project(&mut d);
            let n = norm(&d);
            if n > 0.0 {
                d.iter_mut().for_each(|v| *v /= n);
                jobs.push((i, d));
            }
        }
    }
    let walks: Vec<Vec<Vec<f64>>> = jobs
        .par_iter()
        .map(|(i, d)| {
            let r = &roots[*i];
            let mut out = Vec::new();
            let mut eps = cfg.eps0;
            loop {
                let p: Vec<f64> = r.iter().zip(d).map(|(a, b)| a + eps * b).collect();
                if !domain.contains(&p) {
                    break;
                }
                let val = prog.eval_point(&p);
                if violates(&p) {
                    out.push(p);
                } else if val < 0.0 {
                    break;
                }
                eps *= cfg.growth;
            }
            out
        })
        .collect();
    let mut found: Vec<Vec<f64>> = walks.into_iter().flatten().collect();
    let probes = domain.sample_many(cfg.random_probes, &mut rng);
    found.extend(probes.into_iter().filter(|p| violates(p)));
    dedupe(found, usize::MAX)
}

/// Drops repeated points (to 1e-9 resolution) keeping first occurrences,
/// then truncates.
fn dedupe(points: Vec<Vec<f64>>, cap: usize) -> Vec<Vec<f64>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for p in points {
        if out.len() >= cap {
            break;
        }
        let key: Vec<i64> = p.iter().map(|v| (v * 1e9).round() as i64).collect();
        if seen.insert(key) {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{get_system, inverted_pendulum, van_der_pol, PENDULUM_G, PENDULUM_L};
    use crate::expr::parse;

    fn quick() -> CheckConfig {
        CheckConfig { n_check: 20_000, ..CheckConfig::default() }
    }

    #[test]
    fn van_der_pol_quadratic_is_valid() {
        let r = check_candidate(&parse("x1^2 + x2^2").unwrap(), &van_der_pol(1.0), &quick()).unwrap();
        assert_eq!(r.status, Status::Valid, "{r:?}");
        assert!(r.counterexamples.is_empty());
    }

    #[test]
    fn pendulum_wrong_coefficient_has_sound_counterexamples() {
        let sys = inverted_pendulum();
        let cfg = quick();
        let r = check_candidate(&parse("1 - cos(x1) + 0.26*x2^2").unwrap(), &sys, &cfg).unwrap();
        assert_eq!(r.status, Status::Invalid);
        assert!(!r.counterexamples.is_empty());
        for p in &r.counterexamples {
            assert!(sys.domain.contains(p));
            assert!(r.lie_derivative.eval(p).unwrap() > cfg.tol);
        }
    }

    #[test]
    fn pendulum_exact_constant_is_valid() {
        let c = PENDULUM_L / (2.0 * PENDULUM_G);
        let v = 1.0 - Expression::var(0).cos() + c * Expression::var(1).sq();
        let r = check_candidate(&v, &inverted_pendulum(), &quick()).unwrap();
        assert_eq!(r.status, Status::Valid, "{r:?}");
    }

    #[test]
    fn normalization_removes_offset() {
        let sys = van_der_pol(1.0);
        let r = check_candidate(&parse("x1^2 + x2^2 + 3").unwrap(), &sys, &quick()).unwrap();
        assert_eq!(r.status, Status::Valid);
        assert_eq!(r.candidate.eval(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn indefinite_and_negated_candidates_fail() {
        let sys = van_der_pol(1.0);
        for text in ["x1^2 - x2^2", "-(x1^2 + x2^2)"] {
            let r = check_candidate(&parse(text).unwrap(), &sys, &quick()).unwrap();
            assert_eq!(r.status, Status::Invalid, "{text}");
            assert!(!r.counterexamples.is_empty(), "{text}");
        }
    }

    #[test]
    fn singular_candidate_is_reported() {
        let r = check_candidate(&parse("x1^2/x2").unwrap(), &van_der_pol(1.0), &quick()).unwrap();
        assert_eq!(r.status, Status::Invalid);
        assert_eq!(r.reason.as_deref(), Some("singular in domain"));
    }

    #[test]
    fn reports_are_deterministic() {
        let sys = get_system("inverted_pendulum").unwrap();
        let v = parse("1 - cos(x1) + 0.3*x2^2").unwrap();
        let mut a = check_candidate(&v, &sys, &quick()).unwrap();
        let mut b = check_candidate(&v, &sys, &quick()).unwrap();
        a.wall_time_ms = 0.0;
        b.wall_time_ms = 0.0;
        assert_eq!(a, b);
    }

    #[test]
    fn valid_candidate_yields_no_counterexamples() {
        let sys = van_der_pol(1.0);
        let lie = lie_derivative(&parse("x1^2 + x2^2").unwrap(), &sys.rhs).unwrap();
        let roots = find_roots(&lie, &sys.domain, &RootFindConfig::default());
        assert!(generate_counterexamples(&lie, &roots, &sys.domain, &quick()).is_empty());
    }

    #[test]
    fn unit_peak_removes_scale_loophole() {
        let sys = get_system("path_following").unwrap();
        let tiny = parse("1e-6*(x1^2 + 2*x2^2)").unwrap();
        assert!(check_candidate(&tiny, &sys, &quick()).unwrap().is_valid());
        let scaled = unit_peak(&tiny, &sys, 2000, 0).unwrap();
        assert_eq!(check_candidate(&scaled, &sys, &quick()).unwrap().status, Status::Invalid);
        let good = unit_peak(&parse("3 + 1e-6*(x1^2 + 0.5*x2^2)").unwrap(), &sys, 2000, 0).unwrap();
        assert!(check_candidate(&good, &sys, &quick()).unwrap().is_valid());
        let peak = Program::compile(&good).eval_rows(&sys.domain.sample_many(2000, &mut ChaCha8Rng::seed_from_u64(0)));
        assert!((peak.iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-12);
    }
}
