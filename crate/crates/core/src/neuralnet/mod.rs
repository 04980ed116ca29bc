//! Neural Lyapunov certificate
//! `V(x) = sigma(g(x) - g(0)) + eps * |x_state|^2` with an input-convex `g`.

mod checkpoint;
mod icnn;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use icnn::{Icnn, Tape, TensorSpec};
pub use train::{train_step, Adam, TrainState};

use crate::data::Dataset;
use crate::dynamics::DynamicalSystem;
use crate::Result;

/// Points per parallel work unit. Reductions run in chunk order so results
/// do not depend on the thread count.
pub(crate) const CHUNK: usize = 64;

/// 0 below zero, `x^2 / 2d` on `(0, d)`, `x - d/2` above `d`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SmoothedRelu {
    pub d: f64,
}

impl SmoothedRelu {
    pub fn new(d: f64) -> Self {
        assert!(d > 0.0, "smoothing width must be positive");
        SmoothedRelu { d }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x < self.d {
            x * x / (2.0 * self.d)
        } else {
            x - self.d / 2.0
        }
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x < self.d {
            x / self.d
        } else {
            1.0
        }
    }

    #[inline]
    pub fn second(&self, x: f64) -> f64 {
        if x > 0.0 && x < self.d {
            1.0 / self.d
        } else {
            0.0
        }
    }
}

impl Default for SmoothedRelu {
    fn default() -> Self {
        SmoothedRelu { d: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub smoothing: f64,
    pub margin: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { smoothing: 0.1, margin: 1e-3 }
    }
}

/// Augmented network input together with its time derivative along the
/// flow, i.e. the data needed to evaluate `grad V . f` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct LiePoint {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl LiePoint {
    pub fn new(sys: &DynamicalSystem, state: &[f64]) -> Result<Self> {
        let f = sys.eval_rhs(state)?;
        Ok(LiePoint { x: sys.augment(state), v: sys.augmented_velocity(state, &f) })
    }
}

pub fn lie_points(sys: &DynamicalSystem, states: &[Vec<f64>]) -> Result<Vec<LiePoint>> {
    states.par_iter().map(|s| LiePoint::new(sys, s)).collect()
}

/// Value, Lie derivative and the activations behind them at one point.
#[derive(Debug, Clone)]
pub struct PointEval {
    pub tape: Tape,
    /// `g(x) - g(0)`.
    pub shift: f64,
    pub value: f64,
    pub lie: f64,
}

#[derive(Debug, Clone)]
pub struct LyapunovNet {
    pub g: Icnn,
    pub sigma: SmoothedRelu,
    pub eps: f64,
    /// Leading inputs that are state coordinates; the rest are auxiliary
    /// features and do not enter the quadratic margin.
    pub n_state: usize,
}

impl LyapunovNet {
    pub fn new(n_in: usize, n_state: usize, hidden: &[usize], cfg: NetConfig, seed: u64) -> Self {
        assert!(n_state <= n_in);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = SmoothedRelu::new(cfg.smoothing);
        LyapunovNet { g: Icnn::new(n_in, hidden, sigma, &mut rng), sigma, eps: cfg.margin, n_state }
    }

    /// Network sized for `sys`: inputs are the state plus auxiliary features.
    pub fn for_system(sys: &DynamicalSystem, hidden: &[usize], cfg: NetConfig, seed: u64) -> Self {
        Self::new(sys.input_dim(), sys.dim, hidden, cfg, seed)
    }

    pub fn n_in(&self) -> usize {
        self.g.n_in()
    }

    pub fn g_origin(&self) -> f64 {
        self.g.value(&vec![0.0; self.n_in()])
    }

    fn margin(&self, x: &[f64]) -> f64 {
        self.eps * x[..self.n_state].iter().map(|v| v * v).sum::<f64>()
    }

    pub fn forward(&self, x_aug: &[f64]) -> f64 {
        self.forward_with_origin(x_aug, self.g_origin())
    }

    pub fn forward_with_origin(&self, x_aug: &[f64], g0: f64) -> f64 {
        self.sigma.value(self.g.value(x_aug) - g0) + self.margin(x_aug)
    }

    /// Gradient with respect to the augmented input.
    pub fn grad_input(&self, x_aug: &[f64]) -> Vec<f64> {
        let s = self.g.value(x_aug) - self.g_origin();
        let ds = self.sigma.deriv(s);
        let mut grad: Vec<f64> = self.g.input_gradient(x_aug).into_iter().map(|v| ds * v).collect();
        for i in 0..self.n_state {
            grad[i] += 2.0 * self.eps * x_aug[i];
        }
        grad
    }

    /// Gradient with respect to the state, chaining through auxiliary
    /// features.
    pub fn grad_state(&self, sys: &DynamicalSystem, x: &[f64]) -> Vec<f64> {
        let gi = self.grad_input(&sys.augment(x));
        let mut grad = gi[..sys.dim].to_vec();
        for (k, aux) in sys.auxiliary.iter().enumerate() {
            let w = gi[sys.dim + k];
            for (g, de) in grad.iter_mut().zip(&aux.gradient) {
                *g += w * de.eval_unchecked(x);
            }
        }
        grad
    }

    pub fn eval_point(&self, p: &LiePoint, g0: f64) -> PointEval {
        let tape = self.g.forward_tangent(&p.x, &p.v);
        let shift = tape.g - g0;
        let ds = self.sigma.deriv(shift);
        let margin_dot: f64 = 2.0 * self.eps * p.x[..self.n_state].iter().zip(&p.v).map(|(a, b)| a * b).sum::<f64>();
        let value = self.sigma.value(shift) + self.margin(&p.x);
        let lie = ds * tape.g_dot + margin_dot;
        PointEval { tape, shift, value, lie }
    }

    /// Lie derivative `grad V(x) . f(x)`.
    pub fn lie(&self, p: &LiePoint) -> f64 {
        self.eval_point(p, self.g_origin()).lie
    }

    /// Accumulates the parameter gradient of `adj_value * V + adj_lie * LfV`
    /// at one point. The contribution through `g(0)` is returned rather
    /// than applied so it can be pushed back once per batch with
    /// [`LyapunovNet::backprop_origin`].
    pub fn backprop_point(&self, p: &LiePoint, e: &PointEval, adj_value: f64, adj_lie: f64, grad: &mut [f64]) -> f64 {
        let ds = self.sigma.deriv(e.shift);
        let adj_g = adj_value * ds + adj_lie * self.sigma.second(e.shift) * e.tape.g_dot;
        let adj_g_dot = adj_lie * ds;
        if adj_g != 0.0 || adj_g_dot != 0.0 {
            self.g.backward(&p.x, &p.v, &e.tape, adj_g, adj_g_dot, grad);
        }
        -adj_g
    }

    pub fn backprop_origin(&self, adj_g0: f64, grad: &mut [f64]) {
        if adj_g0 == 0.0 {
            return;
        }
        let zero = vec![0.0; self.n_in()];
        let tape = self.g.forward_tangent(&zero, &zero);
        self.g.backward(&zero, &zero, &tape, adj_g0, 0.0, grad);
    }

    /// Mean hinge `max(0, LfV)` over the batch and its exact parameter
    /// gradient. `Err(index)` names the first point whose contribution is
    /// not finite.
    pub fn risk_and_grad(&self, batch: &[LiePoint]) -> std::result::Result<(f64, Vec<f64>), usize> {
        let n = batch.len().max(1) as f64;
        let g0 = self.g_origin();
        let np = self.g.num_params();
        let parts: Vec<std::result::Result<(f64, Vec<f64>, f64), usize>> = batch
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut grad = vec![0.0; np];
                let mut loss = 0.0;
                let mut adj_g0 = 0.0;
                for (k, p) in chunk.iter().enumerate() {
                    let e = self.eval_point(p, g0);
                    if !e.lie.is_finite() {
                        return Err(c * CHUNK + k);
                    }
                    if e.lie > 0.0 {
                        loss += e.lie / n;
                        adj_g0 += self.backprop_point(p, &e, 0.0, 1.0 / n, &mut grad);
                    }
                }
                if !grad.iter().all(|v| v.is_finite()) {
                    return Err(c * CHUNK + self.first_nonfinite(chunk, g0, n));
                }
                Ok((loss, grad, adj_g0))
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; np];
        let mut adj_g0 = 0.0;
        for part in parts {
            let (l, g, a) = part?;
            loss += l;
            adj_g0 += a;
            for (t, v) in grad.iter_mut().zip(&g) {
                *t += v;
            }
        }
        self.backprop_origin(adj_g0, &mut grad);
        if !loss.is_finite() || !grad.iter().all(|v| v.is_finite()) {
            return Err(0);
        }
        Ok((loss, grad))
    }

    fn first_nonfinite(&self, chunk: &[LiePoint], g0: f64, n: f64) -> usize {
        chunk
            .iter()
            .position(|p| {
                let e = self.eval_point(p, g0);
                let mut grad = vec![0.0; self.g.num_params()];
                let a = self.backprop_point(p, &e, 0.0, 1.0 / n, &mut grad);
                !a.is_finite() || !grad.iter().all(|v| v.is_finite())
            })
            .unwrap_or(0)
    }
}

/// Mean of `max(0, LfV)` over the states in `batch`.
pub fn lyapunov_risk(net: &LyapunovNet, sys: &DynamicalSystem, batch: &[Vec<f64>]) -> Result<f64> {
    let points = lie_points(sys, batch)?;
    let g0 = net.g_origin();
    let lies: Vec<f64> = points.par_iter().map(|p| net.eval_point(p, g0).lie).collect();
    Ok(hinge_mean(&lies))
}

/// `mean(max(0, v))`.
pub fn hinge_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|v| v.max(0.0)).sum::<f64>() / values.len() as f64
}

/// `n` uniform samples from the domain paired with the network output.
/// Columns are the augmented inputs, so auxiliary features appear as extra
/// variables.
pub fn sample_dataset(net: &LyapunovNet, sys: &DynamicalSystem, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = sys.domain.sample_many(n, &mut rng);
    let inputs: Vec<Vec<f64>> = states.iter().map(|s| sys.augment(s)).collect();
    let g0 = net.g_origin();
    let y = inputs.par_iter().map(|x| net.forward_with_origin(x, g0)).collect();
    Dataset::from_rows(&inputs, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{van_der_pol, wheel_pendulum};

    #[test]
    fn smoothed_relu_branches() {
        let s = SmoothedRelu::new(0.1);
        assert_eq!(s.value(-1.0), 0.0);
        assert!((s.value(0.05) - 0.0125).abs() < 1e-15);
        assert!((s.value(0.3) - 0.25).abs() < 1e-15);
        assert_eq!(s.value(0.1), 0.05);
        let below = s.value(0.1 - 1e-12);
        assert!((below - 0.05).abs() < 2e-12);
        assert_eq!(s.deriv(0.1), 1.0);
        assert!((s.deriv(0.1 - 1e-12) - 1.0).abs() < 1e-10);
        assert_eq!(s.deriv(0.0), 0.0);
        assert!(s.deriv(1e-12) < 1e-10);
    }

    #[test]
    fn vanishes_at_origin_and_dominates_margin() {
        let sys = van_der_pol(1.0);
        let net = LyapunovNet::for_system(&sys, &[16, 16], NetConfig::default(), 3);
        assert_eq!(net.forward(&[0.0, 0.0]), 0.0);
        assert!(net.grad_input(&[0.0, 0.0]).iter().all(|v| *v == 0.0));
        let data = sample_dataset(&net, &sys, 500, 1);
        for k in 0..data.len() {
            let x = data.row(k);
            assert!(data.y[k] - net.margin(&x) >= -1e-12);
        }
    }

    #[test]
    fn grad_state_matches_finite_differences_with_auxiliary() {
        let sys = wheel_pendulum();
        let net = LyapunovNet::for_system(&sys, &[8, 8], NetConfig::default(), 11);
        let x = [0.4, -0.3, 0.7, 0.2];
        let g = net.grad_state(&sys, &x);
        for i in 0..4 {
            let h = 1e-6;
            let mut up = x;
            up[i] += h;
            let mut down = x;
            down[i] -= h;
            let fd = (net.forward(&sys.augment(&up)) - net.forward(&sys.augment(&down))) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn lie_matches_gradient_dot_rhs() {
        let sys = wheel_pendulum();
        let net = LyapunovNet::for_system(&sys, &[8, 8], NetConfig::default(), 5);
        let x = [-0.2, 0.5, 0.1, -0.6];
        let f = sys.eval_rhs(&x).unwrap();
        let want: f64 = net.grad_state(&sys, &x).iter().zip(&f).map(|(a, b)| a * b).sum();
        let got = net.lie(&LiePoint::new(&sys, &x).unwrap());
        assert!((want - got).abs() < 1e-10 * (1.0 + want.abs()));
    }

    #[test]
    fn hinge_of_synthetic_values() {
        assert_eq!(hinge_mean(&[1.0, -2.0]), 0.5);
        assert_eq!(hinge_mean(&[-1.0, -2.0]), 0.0);
    }

    #[test]
    fn risk_gradient_matches_finite_differences() {
        // 2-8-1 network, every parameter, ten seeds
        let sys = van_der_pol(1.0);
        for seed in 0..10u64 {
            let mut net = LyapunovNet::for_system(&sys, &[8], NetConfig::default(), seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let states = sys.domain.sample_many(40, &mut rng);
            let batch = lie_points(&sys, &states).unwrap();
            let (_, grad) = net.risk_and_grad(&batch).unwrap();
            let risk = |net: &LyapunovNet| lyapunov_risk(net, &sys, &states).unwrap();
            for p in 0..net.g.num_params() {
                let orig = net.g.params[p];
                let h = 1e-6 * orig.abs().max(1.0);
                net.g.params[p] = orig + h;
                let up = risk(&net);
                net.g.params[p] = orig - h;
                let down = risk(&net);
                net.g.params[p] = orig;
                let fd = (up - down) / (2.0 * h);
                let scale = fd.abs().max(grad[p].abs()).max(1e-6);
                assert!((fd - grad[p]).abs() <= 1e-4 * scale, "seed {seed} param {p}: fd {fd} vs {}", grad[p]);
            }
        }
    }
}
