//! Compositional certificates for networked systems:
//! `V(x) = sum_i c_i V_node(x_i) + sum_(i,j) c_ij V_edge(feature_ij(x))`
//! with one node network shared by every subsystem and one edge network
//! shared by every edge.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::dynamics::NetworkedSystem;
use crate::expr::{lie_derivative, sum, Expression, Program};
use crate::falsifier::{check_candidate, norm, normalize, peak_scale, CheckConfig, VerificationReport};
use crate::neuralnet::{hinge_mean, Adam, LiePoint, LyapunovNet, NetConfig, CHUNK};
use crate::symreg::{fit_guarded, GpConfig, Guard, ParetoFront};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct CompositionalNet {
    pub node: LyapunovNet,
    pub edge: LyapunovNet,
    pub node_coef: Vec<f64>,
    pub edge_coef: Vec<f64>,
    /// Weight of the positivity hinge in the joint loss.
    pub positivity_weight: f64,
}

/// A full state with its vector field value.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPoint {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
}

impl JointPoint {
    pub fn new(netsys: &NetworkedSystem, x: &[f64]) -> Result<Self> {
        Ok(JointPoint { x: x.to_vec(), f: netsys.flat.eval_rhs(x)? })
    }
}

pub fn joint_points(netsys: &NetworkedSystem, states: &[Vec<f64>]) -> Result<Vec<JointPoint>> {
    states.par_iter().map(|s| JointPoint::new(netsys, s)).collect()
}

/// Joint value and Lie derivative with the per-instance pieces behind them.
struct JointEval {
    node_points: Vec<LiePoint>,
    node_evals: Vec<crate::neuralnet::PointEval>,
    edge_points: Vec<LiePoint>,
    edge_evals: Vec<crate::neuralnet::PointEval>,
    value: f64,
    lie: f64,
}

impl CompositionalNet {
    /// Coefficients start at 1.
    pub fn new(netsys: &NetworkedSystem, node_hidden: &[usize], edge_hidden: &[usize], cfg: NetConfig, seed: u64) -> Self {
        let node = LyapunovNet::new(netsys.local_dim, netsys.local_dim, node_hidden, cfg, seed);
        let edge_dim = netsys.edge_dim();
        let edge = LyapunovNet::new(edge_dim, edge_dim, edge_hidden, cfg, seed.wrapping_add(0x9e37_79b9));
        CompositionalNet {
            node,
            edge,
            node_coef: vec![1.0; netsys.subsystems],
            edge_coef: vec![1.0; netsys.edges.len()],
            positivity_weight: 1.0,
        }
    }

    pub fn num_params(&self) -> usize {
        self.node.g.num_params() + self.edge.g.num_params() + self.node_coef.len() + self.edge_coef.len()
    }

    fn check_dim(&self, netsys: &NetworkedSystem, x: &[f64]) -> Result<()> {
        if x.len() != netsys.flat.dim {
            return Err(Error::DimensionMismatch { expected: netsys.flat.dim, found: x.len() });
        }
        if self.node_coef.len() != netsys.subsystems || self.edge_coef.len() != netsys.edges.len() {
            return Err(Error::Config("coefficient count does not match the network topology".into()));
        }
        Ok(())
    }

    pub fn joint_forward(&self, netsys: &NetworkedSystem, x: &[f64]) -> Result<f64> {
        self.check_dim(netsys, x)?;
        let (g0n, g0e) = (self.node.g_origin(), self.edge.g_origin());
        let nodes: f64 =
            (0..netsys.subsystems).map(|i| self.node_coef[i] * self.node.forward_with_origin(&netsys.local(x, i), g0n)).sum();
        let edges: f64 = netsys
            .edges
            .iter()
            .enumerate()
            .map(|(k, &e)| self.edge_coef[k] * self.edge.forward_with_origin(&netsys.edge_input(x, e), g0e))
            .sum();
        Ok(nodes + edges)
    }

    /// Lie derivative of the joint certificate at `x`.
    pub fn joint_lie(&self, netsys: &NetworkedSystem, x: &[f64]) -> Result<f64> {
        self.check_dim(netsys, x)?;
        let p = JointPoint::new(netsys, x)?;
        Ok(self.eval(netsys, &p, self.node.g_origin(), self.edge.g_origin()).lie)
    }

    fn eval(&self, netsys: &NetworkedSystem, p: &JointPoint, g0n: f64, g0e: f64) -> JointEval {
        let node_points: Vec<LiePoint> =
            (0..netsys.subsystems).map(|i| LiePoint { x: netsys.local(&p.x, i), v: netsys.local(&p.f, i) }).collect();
        let edge_points: Vec<LiePoint> =
            netsys.edges.iter().map(|&e| LiePoint { x: netsys.edge_input(&p.x, e), v: netsys.edge_input(&p.f, e) }).collect();
        let node_evals: Vec<_> = node_points.iter().map(|q| self.node.eval_point(q, g0n)).collect();
        let edge_evals: Vec<_> = edge_points.iter().map(|q| self.edge.eval_point(q, g0e)).collect();
        let mut value = 0.0;
        let mut lie = 0.0;
        for (c, e) in self.node_coef.iter().zip(&node_evals) {
            value += c * e.value;
            lie += c * e.lie;
        }
        for (c, e) in self.edge_coef.iter().zip(&edge_evals) {
            value += c * e.value;
            lie += c * e.lie;
        }
        JointEval { node_points, node_evals, edge_points, edge_evals, value, lie }
    }

    fn margin(&self, x: &[f64]) -> f64 {
        self.node.eps * x.iter().map(|v| v * v).sum::<f64>()
    }

    /// `mean(max(0, LfV)) + lambda * mean(max(0, eps |x|^2 - V))`.
    pub fn joint_loss(&self, netsys: &NetworkedSystem, batch: &[JointPoint]) -> f64 {
        let (g0n, g0e) = (self.node.g_origin(), self.edge.g_origin());
        let evals: Vec<(f64, f64)> = batch
            .par_iter()
            .map(|p| {
                let e = self.eval(netsys, p, g0n, g0e);
                (e.lie, self.margin(&p.x) - e.value)
            })
            .collect();
        let lies: Vec<f64> = evals.iter().map(|e| e.0).collect();
        let gaps: Vec<f64> = evals.iter().map(|e| e.1).collect();
        hinge_mean(&lies) + self.positivity_weight * hinge_mean(&gaps)
    }

    /// Joint loss and its gradient in the layout
    /// `[node params, edge params, node coefficients, edge coefficients]`.
    pub fn loss_and_grad(&self, netsys: &NetworkedSystem, batch: &[JointPoint]) -> std::result::Result<(f64, Vec<f64>), usize> {
        let n = batch.len().max(1) as f64;
        let (g0n, g0e) = (self.node.g_origin(), self.edge.g_origin());
        let (pn, pe) = (self.node.g.num_params(), self.edge.g.num_params());
        let (nc, ec) = (self.node_coef.len(), self.edge_coef.len());
        let total = self.num_params();
        let lambda = self.positivity_weight;

        let parts: Vec<std::result::Result<(f64, Vec<f64>, f64, f64), usize>> = batch
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut grad = vec![0.0; total];
                let (mut loss, mut adj_g0n, mut adj_g0e) = (0.0, 0.0, 0.0);
                for (k, p) in chunk.iter().enumerate() {
                    let e = self.eval(netsys, p, g0n, g0e);
                    let gap = self.margin(&p.x) - e.value;
                    if !e.lie.is_finite() || !gap.is_finite() {
                        return Err(c * CHUNK + k);
                    }
                    let adj_lie = if e.lie > 0.0 { 1.0 / n } else { 0.0 };
                    let adj_value = if gap > 0.0 { -lambda / n } else { 0.0 };
                    loss += e.lie.max(0.0) / n + lambda * gap.max(0.0) / n;
                    if adj_lie == 0.0 && adj_value == 0.0 {
                        continue;
                    }
                    let (gn, rest) = grad.split_at_mut(pn);
                    let (ge, gc) = rest.split_at_mut(pe);
                    for (i, (q, ev)) in e.node_points.iter().zip(&e.node_evals).enumerate() {
                        let ci = self.node_coef[i];
                        adj_g0n += self.node.backprop_point(q, ev, ci * adj_value, ci * adj_lie, gn);
                        gc[i] += adj_value * ev.value + adj_lie * ev.lie;
                    }
                    for (j, (q, ev)) in e.edge_points.iter().zip(&e.edge_evals).enumerate() {
                        let cj = self.edge_coef[j];
                        adj_g0e += self.edge.backprop_point(q, ev, cj * adj_value, cj * adj_lie, ge);
                        gc[nc + j] += adj_value * ev.value + adj_lie * ev.lie;
                    }
                }
                if !grad.iter().all(|v| v.is_finite()) {
                    return Err(c * CHUNK);
                }
                Ok((loss, grad, adj_g0n, adj_g0e))
            })
            .collect();

        let mut loss = 0.0;
        let mut grad = vec![0.0; total];
        let (mut adj_g0n, mut adj_g0e) = (0.0, 0.0);
        for part in parts {
            let (l, g, a, b) = part?;
            loss += l;
            adj_g0n += a;
            adj_g0e += b;
            for (t, v) in grad.iter_mut().zip(&g) {
                *t += v;
            }
        }
        let (gn, rest) = grad.split_at_mut(pn);
        self.node.backprop_origin(adj_g0n, gn);
        self.edge.backprop_origin(adj_g0e, &mut rest[..pe]);
        debug_assert_eq!(rest.len(), pe + nc + ec);
        if !loss.is_finite() || !grad.iter().all(|v| v.is_finite()) {
            return Err(0);
        }
        Ok((loss, grad))
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.node.g.params.clone();
        p.extend_from_slice(&self.edge.g.params);
        p.extend_from_slice(&self.node_coef);
        p.extend_from_slice(&self.edge_coef);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params());
        let (pn, pe, nc) = (self.node.g.num_params(), self.edge.g.num_params(), self.node_coef.len());
        self.node.g.params.copy_from_slice(&p[..pn]);
        self.edge.g.params.copy_from_slice(&p[pn..pn + pe]);
        self.node_coef.copy_from_slice(&p[pn + pe..pn + pe + nc]);
        self.edge_coef.copy_from_slice(&p[pn + pe + nc..]);
        self.node.g.project_nonneg();
        self.edge.g.project_nonneg();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointTrainState {
    pub optimizer: Adam,
    pub seed: u64,
}

impl JointTrainState {
    pub fn new(cnet: &CompositionalNet, lr: f64, seed: u64) -> Self {
        JointTrainState { optimizer: Adam::new(cnet.num_params(), lr), seed }
    }
}

/// One optimizer step on the joint loss over both networks and all
/// coefficients, followed by projection of the constrained weights. Returns
/// the loss before the step.
pub fn joint_train_step(
    state: &mut JointTrainState,
    cnet: &mut CompositionalNet,
    netsys: &NetworkedSystem,
    batch: &[JointPoint],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let (loss, grad) = cnet.loss_and_grad(netsys, batch).map_err(|index| Error::NonFiniteStep { index })?;
    let mut p = cnet.params();
    state.optimizer.update(&mut p, &grad);
    cnet.set_params(&p);
    Ok(loss)
}

/// Distilled node and edge expressions with the coefficients that combine
/// them.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JointCandidate {
    /// Over local variables `x1..x{local_dim}`.
    pub node: Expression,
    /// Over edge-feature variables.
    pub edge: Expression,
    pub node_coef: Vec<f64>,
    pub edge_coef: Vec<f64>,
    /// Assembled over the flat state.
    pub expression: Expression,
}

impl JointCandidate {
    pub fn assemble(netsys: &NetworkedSystem, node: Expression, edge: Expression, node_coef: Vec<f64>, edge_coef: Vec<f64>) -> Self {
        let node_terms = (0..netsys.subsystems).map(|i| {
            let local = node.substitute(&|k| Expression::var(netsys.flat_index(i, k)));
            node_coef[i] * local
        });
        let edge_terms = netsys.edges.iter().enumerate().map(|(k, &e)| {
            let inputs = netsys.edge_input_exprs(e);
            let term = edge.substitute(&|v| inputs[v].clone());
            edge_coef[k] * term
        });
        let expression = sum(node_terms.chain(edge_terms));
        JointCandidate { node, edge, node_coef, edge_coef, expression }
    }

    /// Replaces the coefficients by two group-wide values: every node term
    /// gets weight 1 and every edge term weight `b`, where `b` minimizes the
    /// largest Lie derivative over `points` and over copies of them with a
    /// random subset of coordinates shrunk by powers of ten. A wrong ratio
    /// usually shows only where the dissipative part of the Lie derivative is
    /// small, which uniform samples rarely reach. The objective is a maximum
    /// of functions linear in `b`, hence convex, and ternary search applies.
    pub fn calibrated(&self, netsys: &NetworkedSystem, points: &[Vec<f64>], origin_radius: f64) -> Result<Self> {
        let ones_n = vec![1.0; netsys.subsystems];
        let zeros_n = vec![0.0; netsys.subsystems];
        let ones_e = vec![1.0; netsys.edges.len()];
        let zeros_e = vec![0.0; netsys.edges.len()];
        let node_part = Self::assemble(netsys, self.node.clone(), self.edge.clone(), ones_n.clone(), zeros_e).expression;
        let edge_part = Self::assemble(netsys, self.node.clone(), self.edge.clone(), zeros_n, ones_e.clone()).expression;
        let ln = lie_derivative(&normalize(&node_part, &netsys.flat)?, &netsys.flat.rhs)?;
        let le = lie_derivative(&normalize(&edge_part, &netsys.flat)?, &netsys.flat.rhs)?;
        let domain = &netsys.flat.domain;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut kept: Vec<Vec<f64>> = Vec::with_capacity(5 * points.len());
        for p in points {
            kept.push(p.clone());
            for k in 1..=4 {
                let f = 10f64.powi(-k);
                let mut q: Vec<f64> = p.iter().map(|v| if rng.random_bool(0.5) { v * f } else { *v }).collect();
                domain.project(&mut q);
                if domain.contains(&q) {
                    kept.push(q);
                }
            }
        }
        kept.retain(|p| norm(p) > origin_radius);
        let data = Dataset::from_rows(&kept, vec![0.0; kept.len()]);
        let a = Program::compile(&ln).eval_columns(&data.columns, data.len());
        let b = Program::compile(&le).eval_columns(&data.columns, data.len());
        let worst = |t: f64| a.iter().zip(&b).map(|(p, q)| p + t * q).fold(f64::NEG_INFINITY, f64::max);

        let learned = {
            let mn = self.node_coef.iter().sum::<f64>() / self.node_coef.len().max(1) as f64;
            let me = self.edge_coef.iter().sum::<f64>() / self.edge_coef.len().max(1) as f64;
            if mn.abs() > 1e-12 && (me / mn).is_finite() {
                (me / mn).abs()
            } else {
                1.0
            }
        };
        let (mut lo, mut hi) = (0.0, 100.0 * learned.max(1e-3));
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if worst(m1) <= worst(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let t = 0.5 * (lo + hi);
        let edge_coef = vec![t; netsys.edges.len()];
        Ok(Self::assemble(netsys, self.node.clone(), self.edge.clone(), ones_n, edge_coef))
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckedCandidate {
    pub candidate: JointCandidate,
    /// Coefficients were replaced by [`JointCandidate::calibrated`].
    pub calibrated: bool,
    pub report: VerificationReport,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DistillOutcome {
    pub node_front: ParetoFront,
    pub edge_front: ParetoFront,
    /// Index into `checked` of the selected candidate.
    pub best: usize,
    pub checked: Vec<CheckedCandidate>,
}

impl DistillOutcome {
    pub fn best(&self) -> &CheckedCandidate {
        &self.checked[self.best]
    }

    pub fn report(&self) -> &VerificationReport {
        &self.best().report
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Regression samples per network.
    pub samples: usize,
    /// Front entries per network entering the cross product.
    pub top_k: usize,
    /// Also check each pair with calibrated group coefficients.
    pub calibrate: bool,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig { samples: 2000, top_k: 5, calibrate: true, seed: 0 }
    }
}

/// Fits the node and edge networks separately, checks the cross product of
/// the two fronts on the flat system, and selects the first valid candidate,
/// otherwise the one with the smallest violation.
pub fn distill_and_check(
    cnet: &CompositionalNet,
    netsys: &NetworkedSystem,
    gp: &GpConfig,
    check: &CheckConfig,
    cfg: &DistillConfig,
) -> Result<DistillOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fit_net = |net: &LyapunovNet, domain: &crate::dynamics::Domain, ops: &[crate::expr::UnaryOp], rng: &mut ChaCha8Rng, salt: u64| {
        let xs = domain.sample_many(cfg.samples, rng);
        let g0 = net.g_origin();
        let y: Vec<f64> = xs.par_iter().map(|x| net.forward_with_origin(x, g0)).collect();
        let guard = Guard::from_points(&domain.sample_many(10_000, rng));
        let gp = GpConfig { unary_ops: ops.to_vec(), seed: gp.seed.wrapping_add(salt), ..gp.clone() };
        fit_guarded(&Dataset::from_rows(&xs, y), &gp, Some(&guard))
    };
    let node_front = fit_net(&cnet.node, &netsys.node_domain, &netsys.node_ops, &mut rng, 0)?;
    let edge_front = fit_net(&cnet.edge, &netsys.edge_domain, &netsys.edge_ops, &mut rng, 1)?;
    let calib_points = netsys.flat.domain.sample_many(20_000, &mut rng);

    let mut jobs = Vec::new();
    for n in node_front.top(cfg.top_k) {
        for e in edge_front.top(cfg.top_k) {
            let cand = JointCandidate::assemble(
                netsys,
                n.expression.clone(),
                e.expression.clone(),
                cnet.node_coef.clone(),
                cnet.edge_coef.clone(),
            );
            if cfg.calibrate && !netsys.edges.is_empty() {
                // Parts undefined at the origin cannot be normalized; skip them.
                match cand.calibrated(netsys, &calib_points, check.roots.origin_radius) {
                    Ok(c) => jobs.push((c, true)),
                    Err(Error::Eval(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            jobs.push((cand, false));
        }
    }
    let mut checked = Vec::with_capacity(jobs.len());
    for (candidate, calibrated) in jobs {
        let k = match peak_scale(&candidate.expression, &netsys.flat, 2000, cfg.seed) {
            Ok(k) => k,
            Err(Error::Eval(_)) => 1.0,
            Err(e) => return Err(e),
        };
        let candidate = JointCandidate::assemble(
            netsys,
            candidate.node,
            candidate.edge,
            candidate.node_coef.iter().map(|c| c * k).collect(),
            candidate.edge_coef.iter().map(|c| c * k).collect(),
        );
        let report = match check_candidate(&candidate.expression, &netsys.flat, check) {
            Ok(r) => r,
            Err(Error::Eval(_)) => continue,
            Err(e) => return Err(e),
        };
        checked.push(CheckedCandidate { candidate, calibrated, report });
    }
    if checked.is_empty() {
        return Err(Error::EmptyFront);
    }
    let violation = |r: &VerificationReport| {
        r.max_lie.unwrap_or(f64::INFINITY).max(r.max_neg_v.unwrap_or(f64::INFINITY)) + if r.roots_v.is_empty() { 0.0 } else { 1.0 }
    };
    let best = checked.iter().position(|c| c.report.is_valid()).unwrap_or_else(|| {
        (0..checked.len()).min_by(|&a, &b| violation(&checked[a].report).total_cmp(&violation(&checked[b].report))).unwrap_or(0)
    });
    Ok(DistillOutcome { node_front, edge_front, best, checked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{get_networked, power_3bus, Domain, EdgeFeature};
    use crate::expr::parse;

    fn small_net(seed: u64) -> (NetworkedSystem, CompositionalNet) {
        let ns = power_3bus().unwrap();
        let c = CompositionalNet::new(&ns, &[6], &[4], NetConfig::default(), seed);
        (ns, c)
    }

    fn states(ns: &NetworkedSystem, n: usize, seed: u64) -> Vec<Vec<f64>> {
        ns.flat.domain.sample_many(n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn vanishes_at_origin() {
        let (ns, c) = small_net(0);
        assert_eq!(c.joint_forward(&ns, &[0.0; 6]).unwrap(), 0.0);
        assert!(c.joint_forward(&ns, &[0.0; 5]).is_err());
    }

    #[test]
    fn zero_edge_coefficients_leave_node_sum() {
        let (ns, mut c) = small_net(1);
        c.edge_coef = vec![0.0; 3];
        c.node_coef = vec![0.5, 1.5, 2.0];
        let x = [0.1, -0.3, 0.2, 0.7, -1.1, 0.4];
        let want: f64 = (0..3).map(|i| c.node_coef[i] * c.node.forward(&ns.local(&x, i))).sum();
        assert!((c.joint_forward(&ns, &x).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn single_node_without_edges() {
        let base = power_3bus().unwrap();
        let mut flat = base.flat.clone();
        flat.dim = 2;
        flat.domain = Domain::symmetric(&[1.0, 1.0]);
        let ns = NetworkedSystem {
            subsystems: 1,
            edges: vec![],
            edge_feature: EdgeFeature::ComponentDifference { component: 0 },
            flat,
            ..base
        };
        let c = CompositionalNet::new(&ns, &[4], &[4], NetConfig::default(), 2);
        let x = [0.3, -0.2];
        assert_eq!(c.joint_forward(&ns, &x).unwrap(), c.node_coef[0] * c.node.forward(&x));
    }

    #[test]
    fn relabeling_symmetric_topology_is_invariant() {
        // oriented ring, so rotating the labels maps every edge onto an edge
        // with the same orientation
        let (mut ns, mut c) = small_net(3);
        ns.edges = vec![(0, 1), (1, 2), (2, 0)];
        c.node_coef = vec![1.0; 3];
        c.edge_coef = vec![1.0; 3];
        let x = [0.1, -0.3, 0.2, 0.7, -1.1, 0.4];
        let mut y = [0.0; 6];
        for i in 0..3 {
            for k in 0..2 {
                y[ns.flat_index((i + 1) % 3, k)] = x[ns.flat_index(i, k)];
            }
        }
        let a = c.joint_forward(&ns, &x).unwrap();
        let b = c.joint_forward(&ns, &y).unwrap();
        assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let (ns, mut c) = small_net(4);
        c.node_coef = vec![0.9, 1.1, 1.3];
        c.edge_coef = vec![-0.2, 0.7, 0.4];
        let batch = joint_points(&ns, &states(&ns, 30, 4)).unwrap();
        let (_, grad) = c.loss_and_grad(&ns, &batch).unwrap();
        let base = c.params();
        for k in 0..base.len() {
            let h = 1e-6 * base[k].abs().max(1.0);
            let mut p = base.clone();
            p[k] += h;
            let mut up = c.clone();
            up.set_params(&p);
            p[k] -= 2.0 * h;
            let mut down = c.clone();
            down.set_params(&p);
            if up.params()[k] != base[k] + h || down.params()[k] != base[k] - h {
                // a perturbation crossed the nonnegativity projection
                continue;
            }
            let fd = (up.joint_loss(&ns, &batch) - down.joint_loss(&ns, &batch)) / (2.0 * h);
            let scale = fd.abs().max(grad[k].abs()).max(1e-6);
            assert!((fd - grad[k]).abs() <= 1e-4 * scale, "param {k}: fd {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (ns, c0) = small_net(5);
        let batch = joint_points(&ns, &states(&ns, 200, 5)).unwrap();
        let run = || {
            let mut c = c0.clone();
            let mut st = JointTrainState::new(&c, 1e-2, 5);
            let first = joint_train_step(&mut st, &mut c, &ns, &batch).unwrap();
            let mut last = first;
            for _ in 0..40 {
                last = joint_train_step(&mut st, &mut c, &ns, &batch).unwrap();
            }
            (first, last, c.params())
        };
        let (first, last, p1) = run();
        let (_, _, p2) = run();
        assert_eq!(p1, p2);
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn assembly_matches_sum_of_parts() {
        let ns = get_networked("power_3bus").unwrap();
        let node = parse("0.5*x2^2 + 0.1*x1^2").unwrap();
        let edge = parse("0.9*omc(x1)").unwrap();
        let cand = JointCandidate::assemble(&ns, node.clone(), edge.clone(), vec![1.0, 2.0, 3.0], vec![0.5, 0.25, 0.125]);
        for x in states(&ns, 1000, 6) {
            let mut want = 0.0;
            for i in 0..3 {
                want += cand.node_coef[i] * node.eval(&ns.local(&x, i)).unwrap();
            }
            for (k, &e) in ns.edges.iter().enumerate() {
                want += cand.edge_coef[k] * edge.eval(&ns.edge_input(&x, e)).unwrap();
            }
            let got = cand.expression.eval(&x).unwrap();
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn calibration_recovers_the_energy_ratio() {
        let ns = get_networked("power_3bus").unwrap();
        let cand = JointCandidate::assemble(&ns, parse("0.37*x2^2").unwrap(), parse("omc(x1)").unwrap(), vec![1.0; 3], vec![1.0; 3]);
        let pts = states(&ns, 5000, 7);
        let cal = cand.calibrated(&ns, &pts, 1e-2).unwrap();
        assert!((cal.edge_coef[0] - 0.74).abs() < 1e-3, "{:?}", cal.edge_coef);
        let r = check_candidate(&cal.expression, &ns.flat, &CheckConfig { n_check: 20_000, ..CheckConfig::default() }).unwrap();
        assert!(r.is_valid(), "{r:?}");
    }
}
