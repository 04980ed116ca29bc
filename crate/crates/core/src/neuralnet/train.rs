use super::{LiePoint, LyapunovNet};
use crate::{Error, Result};

/// Adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainState {
    pub optimizer: Adam,
    pub seed: u64,
}

impl TrainState {
    pub fn new(net: &LyapunovNet, lr: f64, seed: u64) -> Self {
        TrainState { optimizer: Adam::new(net.g.num_params(), lr), seed }
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }
}

/// One optimizer step on the Lyapunov risk followed by projection of the
/// constrained weights. Returns the risk before the step. A non-finite
/// loss or gradient leaves `net` and `state` untouched.
pub fn train_step(state: &mut TrainState, net: &mut LyapunovNet, batch: &[LiePoint]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let (loss, grad) = net.risk_and_grad(batch).map_err(|index| Error::NonFiniteStep { index })?;
    state.optimizer.update(&mut net.g.params, &grad);
    net.g.project_nonneg();
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::van_der_pol;
    use crate::neuralnet::{lie_points, NetConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (LyapunovNet, Vec<LiePoint>) {
        let sys = van_der_pol(1.0);
        let net = LyapunovNet::for_system(&sys, &[16, 16], NetConfig::default(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states = sys.domain.sample_many(200, &mut rng);
        (net, lie_points(&sys, &states).unwrap())
    }

    #[test]
    fn steps_are_deterministic() {
        let (mut a, batch) = setup(4);
        let mut b = a.clone();
        let mut sa = TrainState::new(&a, 1e-3, 4);
        let mut sb = sa.clone();
        for _ in 0..5 {
            train_step(&mut sa, &mut a, &batch).unwrap();
            train_step(&mut sb, &mut b, &batch).unwrap();
        }
        assert_eq!(a.g.params, b.g.params);
        assert_eq!(sa, sb);
    }

    #[test]
    fn projection_keeps_convexity_weights() {
        let (mut net, batch) = setup(9);
        let mut st = TrainState::new(&net, 5e-2, 9);
        for _ in 0..20 {
            train_step(&mut st, &mut net, &batch).unwrap();
            assert!(net.g.min_constrained_weight() >= 0.0);
        }
        assert_eq!(st.step(), 20);
    }

    #[test]
    fn zero_risk_batch_leaves_parameters() {
        let (mut net, _) = setup(1);
        // the origin has LfV = 0 exactly, so no hinge is active
        let batch = vec![LiePoint { x: vec![0.0, 0.0], v: vec![0.0, 0.0] }];
        let before = net.g.params.clone();
        let mut st = TrainState::new(&net, 1e-3, 0);
        let loss = train_step(&mut st, &mut net, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net.g.params, before);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn non_finite_point_is_reported() {
        let (mut net, mut batch) = setup(2);
        batch[7].v[0] = f64::NAN;
        let before = net.g.params.clone();
        let mut st = TrainState::new(&net, 1e-3, 0);
        let err = train_step(&mut st, &mut net, &batch).unwrap_err();
        assert!(matches!(err, Error::NonFiniteStep { index: 7 }), "{err}");
        assert_eq!(net.g.params, before);
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn training_reduces_risk() {
        let (mut net, batch) = setup(6);
        let mut st = TrainState::new(&net, 1e-2, 6);
        let first = train_step(&mut st, &mut net, &batch).unwrap();
        let mut last = first;
        for _ in 0..60 {
            last = train_step(&mut st, &mut net, &batch).unwrap();
        }
        assert!(last < first, "{first} -> {last}");
    }
}
