//! The outer discovery loop: train the certificate on a growing pool,
//! distill it into closed-form candidates, falsify every candidate, and feed
//! counterexamples back until one survives.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compositional::{distill_and_check, joint_points, joint_train_step, CompositionalNet, DistillConfig, JointTrainState};
use crate::dynamics::{lookup, DynamicalSystem, NetworkedSystem, Registered};
use crate::expr::{parse, scale_terms, simplify, Expression};
use crate::falsifier::{check_candidate, unit_peak, CheckConfig, VerificationReport};
use crate::neuralnet::{lie_points, sample_dataset, train_step, LyapunovNet, NetConfig, TrainState};
use crate::symreg::{fit_guarded, FrontEntry, GpConfig, Guard};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: String,
    pub seed: u64,
    /// Optimizer steps per epoch.
    pub inner_steps: usize,
    /// Points sampled from the network for each regression.
    pub regression_samples: usize,
    pub max_complexity: usize,
    pub max_epochs: usize,
    /// Allowed violation of the Lyapunov conditions; overrides `check.tol`.
    pub tol: f64,
    /// Points per optimizer step; `None` trains on the whole pool.
    pub batch_size: Option<usize>,
    pub initial_pool: usize,
    pub pool_cap: usize,
    /// Counterexamples closer than this to a pool point are dropped.
    pub dedupe_radius: f64,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub node_hidden: Vec<usize>,
    pub edge_hidden: Vec<usize>,
    /// Also check each candidate with its constants snapped to nearby
    /// simple fractions.
    pub snap_constants: bool,
    /// Stop with status `indeterminate` once a run exceeds this.
    pub max_seconds: Option<f64>,
    pub net: NetConfig,
    pub gp: GpConfig,
    pub check: CheckConfig,
    pub distill: DistillConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: "van_der_pol".into(),
            seed: 0,
            inner_steps: 300,
            regression_samples: 2000,
            max_complexity: 15,
            max_epochs: 100,
            tol: 1e-4,
            batch_size: None,
            initial_pool: 3000,
            pool_cap: 20_000,
            dedupe_radius: 1e-3,
            learning_rate: 1e-3,
            hidden: vec![128, 128],
            node_hidden: vec![128, 128],
            edge_hidden: vec![32, 32],
            snap_constants: true,
            max_seconds: None,
            net: NetConfig::default(),
            gp: GpConfig::default(),
            check: CheckConfig::default(),
            distill: DistillConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == 0 {
            return Err(Error::Config("inner_steps must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if self.initial_pool == 0 || self.pool_cap == 0 || self.batch_size == Some(0) {
            return Err(Error::Config("pool and batch sizes must be positive".into()));
        }
        if self.regression_samples == 0 || self.max_complexity == 0 {
            return Err(Error::Config("regression_samples and max_complexity must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.dedupe_radius >= 0.0) {
            return Err(Error::Config("learning_rate must be positive and dedupe_radius nonnegative".into()));
        }
        if self.hidden.is_empty() || self.node_hidden.is_empty() || self.edge_hidden.is_empty() {
            return Err(Error::Config("networks need at least one hidden layer".into()));
        }
        self.gp_config(0).validate()?;
        self.check_config().validate()
    }

    fn gp_config(&self, epoch: usize) -> GpConfig {
        GpConfig {
            max_complexity: self.max_complexity,
            seed: self.seed.wrapping_mul(1_000_003).wrapping_add(self.gp.seed).wrapping_add(epoch as u64),
            ..self.gp.clone()
        }
    }

    fn check_config(&self) -> CheckConfig {
        CheckConfig { tol: self.tol, ..self.check.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Found,
    Exhausted,
    Indeterminate,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Found => "found",
            RunStatus::Exhausted => "exhausted",
            RunStatus::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhaseTimes {
    pub train_s: f64,
    pub regress_s: f64,
    pub verify_s: f64,
}

impl PhaseTimes {
    fn add(&mut self, o: &PhaseTimes) {
        self.train_s += o.train_s;
        self.regress_s += o.regress_s;
        self.verify_s += o.verify_s;
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochLog {
    /// Counted from 1.
    pub epoch: usize,
    /// Loss before the last optimizer step of the epoch.
    pub risk: f64,
    pub pool_size: usize,
    pub candidates: usize,
    pub counterexamples: usize,
    /// Smallest violation among the checked candidates.
    pub best_violation: Option<f64>,
    pub front: Vec<FrontEntry>,
    pub times: PhaseTimes,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunResult {
    pub system: String,
    pub status: RunStatus,
    pub expression: Option<Expression>,
    pub complexity: Option<usize>,
    pub report: Option<VerificationReport>,
    pub epochs: usize,
    pub wall_time_s: f64,
    pub times: PhaseTimes,
    pub per_epoch: Vec<EpochLog>,
}

/// Size of the violation a report witnessed; infinite when nothing was
/// measured.
pub fn violation(r: &VerificationReport) -> f64 {
    let v = r.max_lie.unwrap_or(f64::INFINITY).max(r.max_neg_v.unwrap_or(f64::INFINITY));
    if r.roots_v.is_empty() {
        v
    } else {
        v.max(0.0) + 1.0
    }
}

/// Parses `text` and checks it on the registered system `system`.
pub fn verify_expression(system: &str, text: &str, tol: f64) -> Result<VerificationReport> {
    verify_with(system, text, &CheckConfig { tol, ..CheckConfig::default() })
}

pub fn verify_with(system: &str, text: &str, cfg: &CheckConfig) -> Result<VerificationReport> {
    let reg = lookup(system)?;
    let sys = reg.system();
    let e = parse(text)?;
    if e.arity() > sys.dim {
        return Err(Error::DimensionMismatch { expected: sys.dim, found: e.arity() });
    }
    check_candidate(&e, sys, cfg)
}

/// Appends `new` to `pool`, skipping points within `radius` of a pool point
/// or of an earlier new point, then evicts the oldest points beyond `cap`.
/// Returns the number of points added.
pub fn manage_pool(pool: &mut VecDeque<Vec<f64>>, new: &[Vec<f64>], cap: usize, radius: f64) -> usize {
    let r2 = radius * radius;
    let near = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() <= r2;
    let mut added = 0;
    for x in new {
        if pool.iter().any(|p| near(p, x)) {
            continue;
        }
        pool.push_back(x.clone());
        added += 1;
    }
    while pool.len() > cap {
        pool.pop_front();
    }
    added
}

/// Replaces every constant by the simplest fraction `p/q` (`q <= max_den`)
/// within `rel_tol` of it, leaving constants without such a fraction alone.
pub fn snap_constants(e: &Expression, max_den: u32, rel_tol: f64) -> Expression {
    let snapped: Vec<f64> = e
        .constants()
        .into_iter()
        .map(|c| {
            (1..=max_den)
                .map(|q| (c * q as f64).round() / q as f64)
                .find(|s| *s != 0.0 && (s - c).abs() <= rel_tol * c.abs())
                .unwrap_or(c)
        })
        .collect();
    simplify(&e.with_constants(&snapped))
}

/// Snapped versions of `e`, first as is, then rescaled so that each of its
/// constants in turn becomes 1. Positive rescaling leaves the Lyapunov
/// conditions unchanged, and relative coefficients snap more reliably than
/// tiny absolute ones.
pub fn snapped_variants(e: &Expression, max_den: u32, rel_tol: f64) -> Vec<Expression> {
    let mut out = vec![snap_constants(e, max_den, rel_tol)];
    let mut scales: Vec<f64> = e.constants().into_iter().map(f64::abs).filter(|c| *c > 0.0 && c.is_finite()).collect();
    scales.sort_by(f64::total_cmp);
    scales.dedup();
    for c in scales {
        let s = snap_constants(&scale_terms(e, 1.0 / c), max_den, rel_tol);
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// One candidate and its verdict.
struct Checked {
    expression: Expression,
    complexity: usize,
    report: VerificationReport,
}

/// Chooses a valid candidate, lowest complexity first, then smallest
/// violation.
fn pick_valid(checked: &[Checked]) -> Option<&Checked> {
    checked
        .iter()
        .filter(|c| c.report.is_valid())
        .min_by(|a, b| a.complexity.cmp(&b.complexity).then(violation(&a.report).total_cmp(&violation(&b.report))))
}

fn epoch_log(
    epoch: usize,
    risk: f64,
    pool_size: usize,
    checked: &[Checked],
    counterexamples: usize,
    front: Vec<FrontEntry>,
    times: PhaseTimes,
) -> EpochLog {
    let best_violation = checked.iter().map(|c| violation(&c.report)).filter(|v| v.is_finite()).reduce(f64::min);
    EpochLog { epoch, risk, pool_size, candidates: checked.len(), counterexamples, best_violation, front, times }
}

/// A run together with the trained certificate.
#[derive(Debug, Clone)]
pub enum TrainedNet {
    Single(LyapunovNet),
    Compositional(CompositionalNet),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: RunResult,
    pub net: TrainedNet,
}

/// Runs the discovery loop on `cfg.system`, reporting each finished epoch to
/// `on_epoch`.
pub fn run_detailed(cfg: &RunConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<RunOutput> {
    cfg.validate()?;
    match lookup(&cfg.system)? {
        Registered::Single(sys) => run_single(cfg, &sys, &mut on_epoch),
        Registered::Networked(ns) => run_networked(cfg, &ns, &mut on_epoch),
    }
}

pub fn run_with(cfg: &RunConfig, on_epoch: impl FnMut(&EpochLog)) -> Result<RunResult> {
    Ok(run_detailed(cfg, on_epoch)?.result)
}

pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    run_with(cfg, |_| {})
}

struct Clock {
    start: Instant,
    limit: Option<f64>,
}

impl Clock {
    fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn expired(&self) -> bool {
        self.limit.is_some_and(|s| self.elapsed() > s)
    }
}

fn batch_indices(len: usize, batch: Option<usize>, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    match batch {
        Some(b) if b < len => {
            let mut idx = sample(rng, len, b).into_vec();
            idx.sort_unstable();
            Some(idx)
        }
        _ => None,
    }
}

fn finish(
    system: &str,
    status: RunStatus,
    winner: Option<Checked>,
    clock: &Clock,
    per_epoch: Vec<EpochLog>,
) -> RunResult {
    let mut times = PhaseTimes::default();
    for e in &per_epoch {
        times.add(&e.times);
    }
    RunResult {
        system: system.to_string(),
        status,
        complexity: winner.as_ref().map(|w| w.complexity),
        expression: winner.as_ref().map(|w| w.expression.clone()),
        report: winner.map(|w| w.report),
        epochs: per_epoch.len(),
        wall_time_s: clock.elapsed(),
        times,
        per_epoch,
    }
}

fn run_single(cfg: &RunConfig, sys: &DynamicalSystem, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<RunOutput> {
    let clock = Clock { start: Instant::now(), limit: cfg.max_seconds };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = LyapunovNet::for_system(sys, &cfg.hidden, cfg.net, cfg.seed);
    let mut state = TrainState::new(&net, cfg.learning_rate, cfg.seed);
    let mut pool: VecDeque<Vec<f64>> = sys.domain.sample_many(cfg.initial_pool, &mut rng).into();
    let check = cfg.check_config();
    let guard_points: Vec<Vec<f64>> = sys.domain.sample_many(10_000, &mut rng).iter().map(|x| sys.augment(x)).collect();
    let guard = Guard::from_points(&guard_points);
    let mut logs = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        if clock.expired() {
            return Ok(RunOutput { result: finish(&sys.name, RunStatus::Indeterminate, None, &clock, logs), net: TrainedNet::Single(net) });
        }
        let mut times = PhaseTimes::default();

        let t = Instant::now();
        let states: Vec<Vec<f64>> = pool.iter().cloned().collect();
        let points = lie_points(sys, &states)?;
        let mut risk = f64::NAN;
        for _ in 0..cfg.inner_steps {
            risk = match batch_indices(points.len(), cfg.batch_size, &mut rng) {
                Some(idx) => {
                    let batch: Vec<_> = idx.iter().map(|&i| points[i].clone()).collect();
                    train_step(&mut state, &mut net, &batch)?
                }
                None => train_step(&mut state, &mut net, &points)?,
            };
        }
        times.train_s = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let data = sample_dataset(&net, sys, cfg.regression_samples, cfg.seed.wrapping_add(epoch as u64));
        let front = fit_guarded(&data, &cfg.gp_config(epoch), Some(&guard))?;
        times.regress_s = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut seen = std::collections::HashSet::new();
        let mut checked = Vec::new();
        for entry in front.iter() {
            let base = sys.expand_auxiliary(&entry.expression);
            let mut variants = vec![base.clone()];
            if cfg.snap_constants {
                variants.extend(snapped_variants(&base, 8, 0.05));
            }
            for v in variants {
                let v = match unit_peak(&v, sys, 2000, cfg.seed) {
                    Ok(v) => v,
                    Err(Error::Eval(_)) | Err(Error::DimensionMismatch { .. }) => continue,
                    Err(e) => return Err(e),
                };
                if !seen.insert(v.to_string()) {
                    continue;
                }
                match check_candidate(&v, sys, &check) {
                    Ok(report) => checked.push(Checked { complexity: v.complexity(), expression: v, report }),
                    // a candidate the checker cannot handle is skipped, the epoch goes on
                    Err(Error::Eval(_)) | Err(Error::DimensionMismatch { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        times.verify_s = t.elapsed().as_secs_f64();

        let winner = pick_valid(&checked).map(|w| w.expression.clone());
        let mut cex = 0;
        if winner.is_none() {
            for c in &checked {
                cex += manage_pool(&mut pool, &c.report.counterexamples, cfg.pool_cap, cfg.dedupe_radius);
            }
        }
        let log = epoch_log(epoch, risk, pool.len(), &checked, cex, front.entries.clone(), times);
        on_epoch(&log);
        logs.push(log);
        if let Some(w) = winner {
            let idx = checked.iter().position(|c| c.expression == w).expect("winner is among the checked");
            let win = checked.swap_remove(idx);
            return Ok(RunOutput { result: finish(&sys.name, RunStatus::Found, Some(win), &clock, logs), net: TrainedNet::Single(net) });
        }
    }
    Ok(RunOutput { result: finish(&sys.name, RunStatus::Exhausted, None, &clock, logs), net: TrainedNet::Single(net) })
}

fn run_networked(cfg: &RunConfig, ns: &NetworkedSystem, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<RunOutput> {
    let clock = Clock { start: Instant::now(), limit: cfg.max_seconds };
    let sys = &ns.flat;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cnet = CompositionalNet::new(ns, &cfg.node_hidden, &cfg.edge_hidden, cfg.net, cfg.seed);
    let mut state = JointTrainState::new(&cnet, cfg.learning_rate, cfg.seed);
    let mut pool: VecDeque<Vec<f64>> = sys.domain.sample_many(cfg.initial_pool, &mut rng).into();
    let check = cfg.check_config();
    let mut logs = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        if clock.expired() {
            return Ok(RunOutput { result: finish(&sys.name, RunStatus::Indeterminate, None, &clock, logs), net: TrainedNet::Compositional(cnet) });
        }
        let mut times = PhaseTimes::default();

        let t = Instant::now();
        let states: Vec<Vec<f64>> = pool.iter().cloned().collect();
        let points = joint_points(ns, &states)?;
        let mut risk = f64::NAN;
        for _ in 0..cfg.inner_steps {
            risk = match batch_indices(points.len(), cfg.batch_size, &mut rng) {
                Some(idx) => {
                    let batch: Vec<_> = idx.iter().map(|&i| points[i].clone()).collect();
                    joint_train_step(&mut state, &mut cnet, ns, &batch)?
                }
                None => joint_train_step(&mut state, &mut cnet, ns, &points)?,
            };
        }
        times.train_s = t.elapsed().as_secs_f64();

        // regression and falsification are interleaved inside the distillation;
        // its wall time is booked under verification
        let t = Instant::now();
        let distill = DistillConfig {
            samples: cfg.regression_samples,
            seed: cfg.seed.wrapping_add(epoch as u64),
            ..cfg.distill.clone()
        };
        let outcome = distill_and_check(&cnet, ns, &cfg.gp_config(epoch), &check, &distill)?;
        times.verify_s = t.elapsed().as_secs_f64();

        let checked: Vec<Checked> = outcome
            .checked
            .iter()
            .map(|c| Checked {
                expression: c.candidate.expression.clone(),
                complexity: c.candidate.expression.complexity(),
                report: c.report.clone(),
            })
            .collect();
        let winner = pick_valid(&checked).map(|w| w.expression.clone());
        let mut cex = 0;
        if winner.is_none() {
            for c in &checked {
                cex += manage_pool(&mut pool, &c.report.counterexamples, cfg.pool_cap, cfg.dedupe_radius);
            }
        }
        let mut front = outcome.node_front.entries.clone();
        front.extend(outcome.edge_front.entries.iter().cloned());
        let log = epoch_log(epoch, risk, pool.len(), &checked, cex, front, times);
        on_epoch(&log);
        logs.push(log);
        if let Some(w) = winner {
            let win = checked.into_iter().find(|c| c.expression == w).expect("winner is among the checked");
            return Ok(RunOutput { result: finish(&sys.name, RunStatus::Found, Some(win), &clock, logs), net: TrainedNet::Compositional(cnet) });
        }
    }
    Ok(RunOutput { result: finish(&sys.name, RunStatus::Exhausted, None, &clock, logs), net: TrainedNet::Compositional(cnet) })
}

pub const EPOCH_CSV_HEADER: &str = "epoch,risk,pool_size,candidates,counterexamples,best_violation,train_s,regress_s,verify_s";

pub fn write_epoch_csv(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{EPOCH_CSV_HEADER}")?;
    for l in logs {
        let best = l.best_violation.map_or(String::new(), |v| format!("{v:e}"));
        writeln!(
            out,
            "{},{:e},{},{},{},{},{:.3},{:.3},{:.3}",
            l.epoch, l.risk, l.pool_size, l.candidates, l.counterexamples, best, l.times.train_s, l.times.regress_s, l.times.verify_s
        )?;
    }
    out.flush()?;
    Ok(())
}
