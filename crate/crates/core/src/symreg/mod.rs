//! Genetic-programming symbolic regression returning a Pareto front of
//! accuracy against expression size.

mod tree;

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::expr::{mse, refine_constants, simplify, BinaryOp, Expression, Program, RefineConfig, UnaryOp};
use crate::{Error, Result};
use tree::{nth, replace_nth, Grammar};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    /// Relative scale of the Gaussian perturbation applied to constants.
    pub jitter: f64,
    pub unary_ops: Vec<UnaryOp>,
    pub binary_ops: Vec<BinaryOp>,
    /// Largest node count allowed (the front has at most this many levels).
    pub max_complexity: usize,
    /// Penalty per node, as a multiple of the target variance.
    pub parsimony: f64,
    /// Fittest individuals per generation whose constants are refined.
    pub refine_top: usize,
    /// Probability that any other individual gets a short refinement.
    pub refine_fraction: f64,
    pub init_depth: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            population: 2000,
            generations: 40,
            tournament: 5,
            crossover_prob: 0.7,
            mutation_prob: 0.25,
            jitter: 0.05,
            unary_ops: vec![UnaryOp::Sin, UnaryOp::Cos, UnaryOp::Omc, UnaryOp::Sq],
            binary_ops: vec![BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div],
            max_complexity: 15,
            parsimony: 1e-4,
            refine_top: 20,
            refine_fraction: 0.1,
            init_depth: 4,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.crossover_prob) || !prob(self.mutation_prob) || self.crossover_prob + self.mutation_prob > 1.0 {
            return Err(Error::Config("crossover and mutation probabilities must lie in [0, 1] and sum to at most 1".into()));
        }
        if !prob(self.refine_fraction) {
            return Err(Error::Config("refine_fraction must lie in [0, 1]".into()));
        }
        if self.max_complexity == 0 || self.population == 0 || self.tournament == 0 {
            return Err(Error::Config("population, tournament size and max complexity must be positive".into()));
        }
        if self.unary_ops.contains(&UnaryOp::Neg) || self.unary_ops.contains(&UnaryOp::Sinc) {
            return Err(Error::Config("regression operators are limited to sin, cos, omc and sq".into()));
        }
        if !(self.jitter >= 0.0) || !(self.parsimony >= 0.0) {
            return Err(Error::Config("jitter and parsimony must be nonnegative".into()));
        }
        Ok(())
    }

    fn grammar(&self, n_vars: usize) -> Grammar {
        Grammar { n_vars, unary: self.unary_ops.clone(), binary: self.binary_ops.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrontEntry {
    pub complexity: usize,
    pub expression: Expression,
    pub mse: f64,
}

/// Best expression per complexity level, keeping only levels that improve
/// on every smaller one, so the error strictly decreases along the front.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParetoFront {
    pub entries: Vec<FrontEntry>,
}

impl ParetoFront {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FrontEntry> {
        self.entries.iter()
    }

    /// Lowest-error entry.
    pub fn best(&self) -> Option<&FrontEntry> {
        self.entries.last()
    }

    /// The `k` most accurate entries, best first.
    pub fn top(&self, k: usize) -> Vec<&FrontEntry> {
        self.entries.iter().rev().take(k).collect()
    }

    fn from_archive(archive: &[Option<Individual>]) -> Self {
        let mut entries = Vec::new();
        let mut best = f64::INFINITY;
        for ind in archive.iter().flatten() {
            // round-off level gains do not earn a larger expression a place
            if ind.mse < best * (1.0 - 1e-9) && best - ind.mse > 1e-24 {
                best = ind.mse;
                entries.push(FrontEntry { complexity: ind.complexity, expression: ind.expr.clone(), mse: ind.mse });
            }
        }
        ParetoFront { entries }
    }
}

impl<'a> IntoIterator for &'a ParetoFront {
    type Item = &'a FrontEntry;
    type IntoIter = std::slice::Iter<'a, FrontEntry>;
    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

/// Extra points every archived expression must evaluate finitely on,
/// typically a dense sample of the state domain.
#[derive(Debug, Clone)]
pub struct Guard {
    columns: Vec<Vec<f64>>,
    len: usize,
}

impl Guard {
    pub fn from_points(points: &[Vec<f64>]) -> Self {
        let data = Dataset::from_rows(points, vec![0.0; points.len()]);
        Guard { columns: data.columns, len: points.len() }
    }

    pub fn admits(&self, e: &Expression) -> bool {
        Program::compile(e).eval_columns(&self.columns, self.len).iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub expr: Expression,
    pub complexity: usize,
    pub mse: f64,
    pub fitness: f64,
}

impl Individual {
    fn evaluate(expr: Expression, data: &Dataset, penalty: f64) -> Self {
        let complexity = expr.complexity();
        let mse = mse(&expr, data);
        let fitness = if mse.is_finite() { mse + penalty * complexity as f64 } else { f64::INFINITY };
        Individual { expr, complexity, mse, fitness }
    }
}

/// Evolving state: current individuals, the all-time best per complexity,
/// and the coordinator's random stream.
#[derive(Debug, Clone)]
pub struct Population {
    pub individuals: Vec<Individual>,
    archive: Vec<Option<Individual>>,
    rng: ChaCha8Rng,
    n_vars: usize,
    penalty: f64,
    pub generation: usize,
}

impl Population {
    /// Ramped half-and-half initialization plus a few seed trees (each
    /// variable, its square, and the constants 0 and 1).
    pub fn initialize(data: &Dataset, cfg: &GpConfig, guard: Option<&Guard>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n_vars = data.dim();
        let grammar = cfg.grammar(n_vars);
        let mut exprs = vec![Expression::constant(0.0), Expression::constant(1.0)];
        for i in 0..n_vars {
            exprs.push(Expression::var(i));
            if cfg.unary_ops.contains(&UnaryOp::Sq) && cfg.max_complexity >= 2 {
                exprs.push(Expression::var(i).sq());
            }
        }
        exprs.truncate(cfg.population);
        let depths = cfg.init_depth.max(2);
        while exprs.len() < cfg.population {
            let k = exprs.len();
            let depth = 2 + k % (depths - 1);
            let full = k % 2 == 0;
            exprs.push(grammar.random_tree(&mut rng, depth, cfg.max_complexity, full));
        }
        let penalty = cfg.parsimony * data.target_variance();
        let individuals = evaluate_all(exprs, data, penalty);
        let mut pop = Population { individuals, archive: vec![None; cfg.max_complexity + 1], rng, n_vars, penalty, generation: 0 };
        pop.refine_elite(data, cfg);
        pop.update_archive(guard);
        pop
    }

    pub fn front(&self) -> ParetoFront {
        ParetoFront::from_archive(&self.archive)
    }

    /// Refines the constants of the `refine_top` fittest distinct
    /// individuals, plus a random `refine_fraction` of the rest with a
    /// shorter budget so fresh structures get a fair evaluation.
    fn refine_elite(&mut self, data: &Dataset, cfg: &GpConfig) {
        let mut order: Vec<usize> = (0..self.individuals.len()).filter(|&i| self.individuals[i].fitness.is_finite()).collect();
        order.sort_by(|&a, &b| self.individuals[a].fitness.total_cmp(&self.individuals[b].fitness).then(a.cmp(&b)));
        let mut picked: Vec<(usize, bool)> = Vec::new();
        let mut elite = 0;
        for i in order {
            let e = &self.individuals[i].expr;
            if e.constants().is_empty() {
                continue;
            }
            if elite < cfg.refine_top {
                if picked.iter().any(|&(j, _)| self.individuals[j].expr == *e) {
                    continue;
                }
                picked.push((i, true));
                elite += 1;
            } else if self.rng.random_bool(cfg.refine_fraction) {
                picked.push((i, false));
            }
        }
        let penalty = self.penalty;
        let full = RefineConfig::default();
        let quick = RefineConfig { max_iter: 8, ..full };
        let refined: Vec<Individual> = picked
            .par_iter()
            .map(|&(i, is_elite)| {
                let e = refine_constants(&self.individuals[i].expr, data, if is_elite { &full } else { &quick });
                Individual::evaluate(simplify(&e), data, penalty)
            })
            .collect();
        for ((i, _), ind) in picked.into_iter().zip(refined) {
            if ind.fitness <= self.individuals[i].fitness {
                self.individuals[i] = ind;
            }
        }
    }

    fn update_archive(&mut self, guard: Option<&Guard>) {
        for ind in &self.individuals {
            if !ind.mse.is_finite() || ind.complexity >= self.archive.len() {
                continue;
            }
            let better = match &self.archive[ind.complexity] {
                Some(cur) => ind.mse < cur.mse,
                None => true,
            };
            if better && guard.map_or(true, |g| g.admits(&ind.expr)) {
                self.archive[ind.complexity] = Some(ind.clone());
            }
        }
    }

    fn tournament(&mut self, k: usize) -> usize {
        let n = self.individuals.len();
        let mut best = self.rng.random_range(0..n);
        for _ in 1..k {
            let c = self.rng.random_range(0..n);
            if self.individuals[c].fitness < self.individuals[best].fitness {
                best = c;
            }
        }
        best
    }

    fn jitter(&mut self, e: &Expression, scale: f64) -> Expression {
        let cs = e.constants();
        if cs.is_empty() {
            return e.clone();
        }
        let rng = &mut self.rng;
        let moved: Vec<f64> = cs
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(rng);
                c + scale * z * c.abs().max(1.0)
            })
            .collect();
        e.with_constants(&moved)
    }

    fn crossover(&mut self, a: &Expression, b: &Expression) -> Expression {
        let i = self.rng.random_range(0..a.complexity());
        let j = self.rng.random_range(0..b.complexity());
        replace_nth(a, i, &nth(b, j))
    }

    fn mutate(&mut self, e: &Expression, cfg: &GpConfig) -> Expression {
        let grammar = cfg.grammar(self.n_vars);
        let size = e.complexity();
        let at = self.rng.random_range(0..size);
        match self.rng.random_range(0..5) {
            // point mutation: same arity, new symbol
            0 => {
                use crate::expr::Node;
                let sub = nth(e, at);
                let fresh = match sub.node() {
                    Node::Const(_) | Node::Var(_) => grammar.terminal(&mut self.rng),
                    Node::Unary(_, c) if !cfg.unary_ops.is_empty() => {
                        Expression::unary(cfg.unary_ops[self.rng.random_range(0..cfg.unary_ops.len())], c.clone())
                    }
                    Node::Binary(_, l, r) if !cfg.binary_ops.is_empty() => Expression::binary(
                        cfg.binary_ops[self.rng.random_range(0..cfg.binary_ops.len())],
                        l.clone(),
                        r.clone(),
                    ),
                    _ => sub.clone(),
                };
                replace_nth(e, at, &fresh)
            }
            // subtree replacement
            1 => {
                let room = cfg.max_complexity.saturating_sub(size - nth(e, at).complexity()).max(1);
                let fresh = grammar.random_tree(&mut self.rng, 3, room.min(7), false);
                replace_nth(e, at, &fresh)
            }
            // hoist
            2 => nth(e, at),
            // wrap a subtree in a new operator
            3 => {
                let sub = nth(e, at);
                let wrapped = if !cfg.unary_ops.is_empty() && (cfg.binary_ops.is_empty() || self.rng.random_bool(0.5)) {
                    Expression::unary(cfg.unary_ops[self.rng.random_range(0..cfg.unary_ops.len())], sub)
                } else if !cfg.binary_ops.is_empty() {
                    let op = cfg.binary_ops[self.rng.random_range(0..cfg.binary_ops.len())];
                    let t = grammar.terminal(&mut self.rng);
                    if self.rng.random_bool(0.5) {
                        Expression::binary(op, sub, t)
                    } else {
                        Expression::binary(op, t, sub)
                    }
                } else {
                    sub
                };
                replace_nth(e, at, &wrapped)
            }
            _ => self.jitter(e, cfg.jitter),
        }
    }

    fn offspring(&mut self, cfg: &GpConfig) -> Expression {
        for _ in 0..8 {
            let r: f64 = self.rng.random();
            let p = self.tournament(cfg.tournament);
            let parent = self.individuals[p].expr.clone();
            let child = if r < cfg.crossover_prob {
                let q = self.tournament(cfg.tournament);
                let other = self.individuals[q].expr.clone();
                self.crossover(&parent, &other)
            } else if r < cfg.crossover_prob + cfg.mutation_prob {
                self.mutate(&parent, cfg)
            } else {
                self.jitter(&parent, cfg.jitter)
            };
            let child = simplify(&child);
            if child.complexity() <= cfg.max_complexity {
                return child;
            }
        }
        let p = self.tournament(cfg.tournament);
        self.individuals[p].expr.clone()
    }
}

fn evaluate_all(exprs: Vec<Expression>, data: &Dataset, penalty: f64) -> Vec<Individual> {
    exprs.into_par_iter().map(|e| Individual::evaluate(e, data, penalty)).collect()
}

/// One generation: elites carried over from the archive, the rest bred by
/// tournament selection and variation, then constant refinement of the
/// fittest individuals and an archive update.
pub fn evolve_generation(pop: &mut Population, data: &Dataset, cfg: &GpConfig, guard: Option<&Guard>) {
    let target = pop.individuals.len();
    let mut next: Vec<Expression> = pop.archive.iter().flatten().map(|i| i.expr.clone()).collect();
    next.truncate(target);
    let mut seen: HashSet<String> = next.iter().map(|e| e.to_string()).collect();
    while next.len() < target {
        // a few retries keep duplicates from taking over the population
        let mut child = pop.offspring(cfg);
        for _ in 0..3 {
            if seen.insert(child.to_string()) {
                break;
            }
            child = pop.offspring(cfg);
        }
        next.push(child);
    }
    pop.individuals = evaluate_all(next, data, pop.penalty);
    pop.refine_elite(data, cfg);
    pop.update_archive(guard);
    pop.generation += 1;
}

pub fn fit(data: &Dataset, cfg: &GpConfig) -> Result<ParetoFront> {
    fit_guarded(data, cfg, None)
}

/// Runs `cfg.generations` generations and returns the front. Expressions
/// that are non-finite on the data, or on the guard points when given, never
/// enter the front.
pub fn fit_guarded(data: &Dataset, cfg: &GpConfig, guard: Option<&Guard>) -> Result<ParetoFront> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("regression data is empty".into()));
    }
    let mut pop = Population::initialize(data, cfg, guard);
    for _ in 0..cfg.generations {
        evolve_generation(&mut pop, data, cfg, guard);
    }
    let front = pop.front();
    if front.is_empty() {
        return Err(Error::EmptyFront);
    }
    Ok(front)
}
