//! Benchmark dynamical systems: symbolic and numeric right-hand sides, box
//! domains, parameters and auxiliary input features.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::expr::{gradient, sum, Expression, UnaryOp};
use crate::{Error, Result};

/// Linear constraint the state is known to satisfy.
#[derive(Debug, Clone, PartialEq)]
pub enum Manifold {
    Full,
    /// The listed coordinates sum to zero (center-of-inertia coordinates).
    ZeroMean(Vec<usize>),
}

/// Axis-aligned box, optionally intersected with a linear manifold through
/// the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub manifold: Manifold,
}

impl Domain {
    pub fn symmetric(half_widths: &[f64]) -> Self {
        Domain {
            lower: half_widths.iter().map(|h| -h).collect(),
            upper: half_widths.to_vec(),
            manifold: Manifold::Full,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= lo - SLACK && *v <= hi + SLACK)
            && self.on_manifold(x)
    }

    fn on_manifold(&self, x: &[f64]) -> bool {
        match &self.manifold {
            Manifold::Full => true,
            Manifold::ZeroMean(idx) => idx.iter().map(|&i| x[i]).sum::<f64>().abs() <= 1e-9,
        }
    }

    /// Orthogonal projection onto the manifold (the box is not enforced).
    /// Works for both points and directions since the manifold is linear.
    pub fn project(&self, x: &mut [f64]) {
        if let Manifold::ZeroMean(idx) = &self.manifold {
            let mean = idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64;
            for &i in idx {
                x[i] -= mean;
            }
        }
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Uniform sample from the feasible set (rejection on the projected box).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        for _ in 0..10_000 {
            let mut x: Vec<f64> = self.lower.iter().zip(&self.upper).map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect();
            if self.manifold == Manifold::Full {
                return x;
            }
            self.project(&mut x);
            if self.contains(&x) {
                return x;
            }
        }
        vec![0.0; self.dim()]
    }

    pub fn sample_many<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Latin-hypercube points; infeasible ones (after projection) are replaced
    /// by uniform samples.
    pub fn latin_hypercube<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        if n == 0 {
            return Vec::new();
        }
        let dim = self.dim();
        let mut strata: Vec<Vec<usize>> = Vec::with_capacity(dim);
        for _ in 0..dim {
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            strata.push(perm);
        }
        (0..n)
            .map(|k| {
                let mut x: Vec<f64> = (0..dim)
                    .map(|d| {
                        let u = (strata[d][k] as f64 + rng.random::<f64>()) / n as f64;
                        self.lower[d] + u * (self.upper[d] - self.lower[d])
                    })
                    .collect();
                self.project(&mut x);
                if self.contains(&x) {
                    x
                } else {
                    self.sample(rng)
                }
            })
            .collect()
    }
}

type NumericRhs = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Extra network input computed from the state, e.g. an energy function.
#[derive(Debug, Clone)]
pub struct Auxiliary {
    pub name: String,
    pub expr: Expression,
    /// Symbolic gradient with respect to the state.
    pub gradient: Vec<Expression>,
}

#[derive(Clone)]
pub struct DynamicalSystem {
    pub name: String,
    pub dim: usize,
    pub domain: Domain,
    pub parameters: Vec<(String, f64)>,
    pub state_names: Vec<String>,
    pub rhs: Vec<Expression>,
    pub auxiliary: Vec<Auxiliary>,
    /// Unary operators offered to the regressor.
    pub unary_ops: Vec<UnaryOp>,
    /// Smallest value of a singular denominator over the domain, when the
    /// right-hand side has one.
    pub singularity_margin: Option<f64>,
    numeric: NumericRhs,
}

impl fmt::Debug for DynamicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicalSystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .field("parameters", &self.parameters)
            .finish_non_exhaustive()
    }
}

impl DynamicalSystem {
    /// Numeric right-hand side f(x).
    pub fn eval_rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        let f = (self.numeric)(x);
        if f.iter().all(|v| v.is_finite()) {
            Ok(f)
        } else {
            Err(crate::expr::EvalError::NonFinite { point: x.to_vec() }.into())
        }
    }

    /// f(x) from the symbolic right-hand side.
    pub fn eval_rhs_symbolic(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.rhs.iter().map(|e| e.eval(x).map_err(Error::from)).collect()
    }

    pub fn eval_auxiliary(&self, x: &[f64]) -> Vec<f64> {
        self.auxiliary.iter().map(|a| a.expr.eval_unchecked(x)).collect()
    }

    /// Number of network inputs: state plus auxiliary features.
    pub fn input_dim(&self) -> usize {
        self.dim + self.auxiliary.len()
    }

    /// State followed by auxiliary features.
    pub fn augment(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        out.extend(self.eval_auxiliary(x));
        out
    }

    /// Time derivative of the augmented input along f: `(f(x), dE/dt, ...)`.
    pub fn augmented_velocity(&self, x: &[f64], f: &[f64]) -> Vec<f64> {
        let mut out = f.to_vec();
        for a in &self.auxiliary {
            out.push(a.gradient.iter().zip(f).map(|(g, fi)| g.eval_unchecked(x) * fi).sum());
        }
        out
    }

    /// Rewrites an expression over augmented inputs (`x_{n+1}..` denote the
    /// auxiliary features) into one over the state only.
    pub fn expand_auxiliary(&self, e: &Expression) -> Expression {
        if self.auxiliary.is_empty() {
            return e.clone();
        }
        e.substitute(&|i| {
            if i < self.dim {
                Expression::var(i)
            } else {
                self.auxiliary.get(i - self.dim).map_or_else(|| Expression::var(i), |a| a.expr.clone())
            }
        })
    }

    pub fn variable_names(&self) -> Vec<String> {
        let mut names = self.state_names.clone();
        names.extend(self.auxiliary.iter().map(|a| a.name.clone()));
        names
    }
}

/// How the two endpoint states of an edge are turned into the edge network
/// input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeFeature {
    /// Scalar difference of one local component: `x_i[c] - x_j[c]`.
    ComponentDifference { component: usize },
    /// Concatenated local states `(x_i, x_j)`.
    Concat,
}

/// Network of identical subsystems joined by undirected edges.
#[derive(Debug, Clone)]
pub struct NetworkedSystem {
    pub name: String,
    pub subsystems: usize,
    pub local_dim: usize,
    pub edges: Vec<(usize, usize)>,
    pub edge_feature: EdgeFeature,
    /// The whole network as one system. Local component `k` of subsystem
    /// `i` sits at flat index `k * subsystems + i`.
    pub flat: DynamicalSystem,
    pub node_domain: Domain,
    pub edge_domain: Domain,
    pub node_ops: Vec<UnaryOp>,
    pub edge_ops: Vec<UnaryOp>,
}

impl NetworkedSystem {
    pub fn flat_index(&self, subsystem: usize, component: usize) -> usize {
        component * self.subsystems + subsystem
    }

    pub fn local(&self, x: &[f64], subsystem: usize) -> Vec<f64> {
        (0..self.local_dim).map(|k| x[self.flat_index(subsystem, k)]).collect()
    }

    pub fn edge_dim(&self) -> usize {
        match self.edge_feature {
            EdgeFeature::ComponentDifference { .. } => 1,
            EdgeFeature::Concat => 2 * self.local_dim,
        }
    }

    /// Edge feature; linear in `x`, so it also maps velocities to feature
    /// velocities.
    pub fn edge_input(&self, x: &[f64], edge: (usize, usize)) -> Vec<f64> {
        let (i, j) = edge;
        match self.edge_feature {
            EdgeFeature::ComponentDifference { component } => {
                vec![x[self.flat_index(i, component)] - x[self.flat_index(j, component)]]
            }
            EdgeFeature::Concat => {
                let mut v = self.local(x, i);
                v.extend(self.local(x, j));
                v
            }
        }
    }

    pub fn edge_input_exprs(&self, edge: (usize, usize)) -> Vec<Expression> {
        let (i, j) = edge;
        match self.edge_feature {
            EdgeFeature::ComponentDifference { component } => {
                vec![Expression::var(self.flat_index(i, component)) - Expression::var(self.flat_index(j, component))]
            }
            EdgeFeature::Concat => (0..self.local_dim)
                .map(|k| Expression::var(self.flat_index(i, k)))
                .chain((0..self.local_dim).map(|k| Expression::var(self.flat_index(j, k))))
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        for &(i, j) in &self.edges {
            if i >= self.subsystems || j >= self.subsystems || i == j {
                return Err(Error::Config(format!("edge ({i}, {j}) is invalid for {} subsystems", self.subsystems)));
            }
        }
        if self.flat.dim != self.subsystems * self.local_dim {
            return Err(Error::DimensionMismatch { expected: self.subsystems * self.local_dim, found: self.flat.dim });
        }
        Ok(())
    }
}

/// A registry entry.
#[derive(Debug, Clone)]
pub enum Registered {
    Single(DynamicalSystem),
    Networked(NetworkedSystem),
}

impl Registered {
    /// The system whose state the falsifier checks.
    pub fn system(&self) -> &DynamicalSystem {
        match self {
            Registered::Single(s) => s,
            Registered::Networked(n) => &n.flat,
        }
    }
}

pub const SYSTEM_NAMES: [&str; 7] = [
    "path_following",
    "inverted_pendulum",
    "van_der_pol",
    "trig3d",
    "wheel_pendulum",
    "nonlinear6d",
    "power_3bus",
];

pub fn lookup(name: &str) -> Result<Registered> {
    Ok(match name {
        "path_following" => Registered::Single(path_following(2.0, 6.0)),
        "inverted_pendulum" => Registered::Single(inverted_pendulum()),
        "van_der_pol" => Registered::Single(van_der_pol(1.0)),
        "trig3d" => Registered::Single(trig3d()),
        "wheel_pendulum" => Registered::Single(wheel_pendulum()),
        "nonlinear6d" => Registered::Single(nonlinear6d()),
        "power_3bus" => Registered::Networked(power_3bus()?),
        other => return Err(Error::UnknownSystem(other.to_string())),
    })
}

/// The registered system by name; networked systems are returned flattened.
pub fn get_system(name: &str) -> Result<DynamicalSystem> {
    Ok(match lookup(name)? {
        Registered::Single(s) => s,
        Registered::Networked(n) => n.flat,
    })
}

pub fn get_networked(name: &str) -> Result<NetworkedSystem> {
    match lookup(name)? {
        Registered::Networked(n) => Ok(n),
        Registered::Single(_) => Err(Error::Config(format!("`{name}` is not a networked system"))),
    }
}

fn x(i: usize) -> Expression {
    Expression::var(i)
}

fn names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

const TRIG_OPS: [UnaryOp; 4] = [UnaryOp::Sin, UnaryOp::Cos, UnaryOp::Omc, UnaryOp::Sq];

pub fn path_following(curv: f64, speed: f64) -> DynamicalSystem {
    let rhs = vec![
        speed * x(1).sin(),
        -x(1) - (curv * speed) * x(1).sinc() * x(0),
    ];
    DynamicalSystem {
        name: "path_following".into(),
        dim: 2,
        domain: Domain::symmetric(&[2.0, PI]),
        parameters: vec![("c".into(), curv), ("v".into(), speed)],
        state_names: names(2),
        rhs,
        auxiliary: Vec::new(),
        unary_ops: TRIG_OPS.to_vec(),
        singularity_margin: None,
        numeric: Arc::new(move |s| {
            let sinc = crate::expr::sinc(s[1]);
            vec![speed * s[1].sin(), -s[1] - curv * speed * sinc * s[0]]
        }),
    }
}

pub const PENDULUM_G: f64 = 9.81;
pub const PENDULUM_M: f64 = 2.0;
pub const PENDULUM_L: f64 = 5.0;
pub const PENDULUM_B: f64 = 0.1;

pub fn inverted_pendulum() -> DynamicalSystem {
    let (g, m, l, b) = (PENDULUM_G, PENDULUM_M, PENDULUM_L, PENDULUM_B);
    DynamicalSystem {
        name: "inverted_pendulum".into(),
        dim: 2,
        domain: Domain::symmetric(&[PI, 6.0]),
        parameters: vec![("g".into(), g), ("m".into(), m), ("l".into(), l), ("b".into(), b)],
        state_names: names(2),
        rhs: vec![x(1), -(g / l) * x(0).sin() - (b / m) * x(1)],
        auxiliary: Vec::new(),
        unary_ops: TRIG_OPS.to_vec(),
        singularity_margin: None,
        numeric: Arc::new(move |s| vec![s[1], -(g / l) * s[0].sin() - (b / m) * s[1]]),
    }
}

pub fn van_der_pol(mu: f64) -> DynamicalSystem {
    DynamicalSystem {
        name: "van_der_pol".into(),
        dim: 2,
        domain: Domain::symmetric(&[1.0, 1.0]),
        parameters: vec![("mu".into(), mu)],
        state_names: names(2),
        rhs: vec![x(1), -x(0) - mu * (1.0 - x(0).sq()) * x(1)],
        auxiliary: Vec::new(),
        unary_ops: TRIG_OPS.to_vec(),
        singularity_margin: None,
        numeric: Arc::new(move |s| vec![s[1], -s[0] - mu * (1.0 - s[0] * s[0]) * s[1]]),
    }
}

pub fn trig3d() -> DynamicalSystem {
    let h = |e: Expression| e.clone().sin() * e.cos();
    let hn = |v: f64| v.sin() * v.cos();
    DynamicalSystem {
        name: "trig3d".into(),
        dim: 3,
        domain: Domain::symmetric(&[1.5, 1.5, 1.5]),
        parameters: Vec::new(),
        state_names: names(3),
        rhs: vec![x(1), -2.0 * h(x(0)) - x(1) - 2.0 * h(x(2)), x(1) - x(2)],
        auxiliary: Vec::new(),
        unary_ops: TRIG_OPS.to_vec(),
        singularity_margin: None,
        numeric: Arc::new(move |s| vec![s[1], -2.0 * hn(s[0]) - s[1] - 2.0 * hn(s[2]), s[1] - s[2]]),
    }
}

/// Physical constants of the rotating wheel pendulum.
#[derive(Debug, Clone, Copy)]
pub struct WheelConstants {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub i1: f64,
    pub i2: f64,
    pub g: f64,
}

impl Default for WheelConstants {
    fn default() -> Self {
        WheelConstants {
            m1: 0.1 / 9.81,
            m2: 0.4 / 9.81,
            l1: 1.0,
            l2: 1.0,
            i1: 1.0 - 0.5 / 9.81,
            i2: 1.0,
            g: 9.81,
        }
    }
}

impl WheelConstants {
    /// Inertia matrix `[[d11, d12], [d21, d22]]`.
    pub fn inertia(&self) -> [[f64; 2]; 2] {
        let d11 = self.m1 * self.l2 * self.l2 + self.m2 * self.l1 * self.l1 + self.i1 + self.i2;
        [[d11, self.i2], [self.i2, self.i2]]
    }

    pub fn mbar_g(&self) -> f64 {
        (self.m1 * self.l2 + self.m2 * self.l1) * self.g
    }
}

pub fn wheel_pendulum() -> DynamicalSystem {
    let k = WheelConstants::default();
    let d = k.inertia();
    let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
    let mg = k.mbar_g();
    let k1 = d[1][0] * mg / det;
    let k2 = d[0][0] / det;

    let energy = 0.5 * (d[0][0] * x(1).sq() + (d[0][1] + d[1][0]) * x(1) * x(3) + d[1][1] * x(3).sq())
        + mg * (x(0).cos() - 1.0);
    let tau = (-x(3) - x(2) + k1 * x(0).sin()) / (energy.clone() + k2);
    let rhs = vec![
        x(1),
        (d[1][1] / det * mg) * x(0) + (-d[0][1] / det) * tau.clone(),
        x(3),
        (d[1][0] / det * mg) * x(0) + (d[0][0] / det) * tau,
    ];
    let energy_num = move |s: &[f64]| {
        0.5 * (d[0][0] * s[1] * s[1] + (d[0][1] + d[1][0]) * s[1] * s[3] + d[1][1] * s[3] * s[3]) + mg * (s[0].cos() - 1.0)
    };
    let numeric = move |s: &[f64]| {
        let tau = (-s[3] - s[2] + k1 * s[0].sin()) / (energy_num(s) + k2);
        vec![
            s[1],
            d[1][1] / det * mg * s[0] - d[0][1] / det * tau,
            s[3],
            d[1][0] / det * mg * s[0] + d[0][0] / det * tau,
        ]
    };
    let domain = Domain::symmetric(&[PI / 2.0, 2.0, PI / 2.0, 2.0]);
    let margin = grid_min(&domain, 11, |s| energy_num(s) + k2);
    DynamicalSystem {
        name: "wheel_pendulum".into(),
        dim: 4,
        domain,
        parameters: vec![
            ("m1".into(), k.m1),
            ("m2".into(), k.m2),
            ("l1".into(), k.l1),
            ("l2".into(), k.l2),
            ("I1".into(), k.i1),
            ("I2".into(), k.i2),
            ("g".into(), k.g),
            ("k1".into(), k1),
            ("k2".into(), k2),
        ],
        state_names: names(4),
        auxiliary: vec![Auxiliary { name: "E".into(), gradient: gradient(&energy, 4), expr: energy }],
        rhs,
        unary_ops: TRIG_OPS.to_vec(),
        singularity_margin: Some(margin),
        numeric: Arc::new(numeric),
    }
}

fn grid_min(domain: &Domain, per_axis: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let dim = domain.dim();
    let total = per_axis.pow(dim as u32);
    let mut best = f64::INFINITY;
    let mut p = vec![0.0; dim];
    for mut k in 0..total {
        for (d, v) in p.iter_mut().enumerate() {
            let t = (k % per_axis) as f64 / (per_axis - 1) as f64;
            k /= per_axis;
            *v = domain.lower[d] + t * (domain.upper[d] - domain.lower[d]);
        }
        best = best.min(f(&p));
    }
    best
}

pub fn nonlinear6d() -> DynamicalSystem {
    let rhs = vec![
        -x(0) + 0.5 * x(1) - 0.1 * x(4).sq(),
        -0.5 * x(0) - x(1),
        -x(2) + 0.5 * x(3) - 0.1 * x(0).sq(),
        -0.5 * x(2) - x(3),
        -x(4) + 0.5 * x(5),
        -0.5 * x(4) - x(5) + 0.1 * x(1).sq(),
    ];
    DynamicalSystem {
        name: "nonlinear6d".into(),
        dim: 6,
        domain: Domain::symmetric(&[1.0; 6]),
        parameters: Vec::new(),
        state_names: names(6),
        rhs,
        auxiliary: Vec::new(),
        unary_ops: vec![UnaryOp::Sq],
        singularity_margin: None,
        numeric: Arc::new(|s| {
            vec![
                -s[0] + 0.5 * s[1] - 0.1 * s[4] * s[4],
                -0.5 * s[0] - s[1],
                -s[2] + 0.5 * s[3] - 0.1 * s[0] * s[0],
                -0.5 * s[2] - s[3],
                -s[4] + 0.5 * s[5],
                -0.5 * s[4] - s[5] + 0.1 * s[1] * s[1],
            ]
        }),
    }
}

/// Three-bus power network in center-of-inertia coordinates. Flat state
/// order is `(delta1, delta2, delta3, omega1, omega2, omega3)`.
pub fn power_3bus() -> Result<NetworkedSystem> {
    const BUSES: usize = 3;
    let (inertia, damping, susceptance) = (1.0, 1.0, 1.0);
    let delta = |i: usize| x(i);
    let omega = |i: usize| x(BUSES + i);
    let mean_omega = sum((0..BUSES).map(omega)) * (1.0 / BUSES as f64);

    let mut rhs = Vec::with_capacity(2 * BUSES);
    for i in 0..BUSES {
        rhs.push(omega(i) - mean_omega.clone());
    }
    for i in 0..BUSES {
        // p_i = 0, u_i(omega_i) = omega_i
        let coupling = sum((0..BUSES).filter(|&j| j != i).map(|j| susceptance * (delta(i) - delta(j)).sin()));
        rhs.push((-damping * omega(i) - omega(i) - coupling) * (1.0 / inertia));
    }
    let numeric = move |s: &[f64]| {
        let mean = (s[3] + s[4] + s[5]) / 3.0;
        let mut f = vec![0.0; 2 * BUSES];
        for i in 0..BUSES {
            f[i] = s[BUSES + i] - mean;
            let coupling: f64 = (0..BUSES).filter(|&j| j != i).map(|j| susceptance * (s[i] - s[j]).sin()).sum();
            f[BUSES + i] = (-damping * s[BUSES + i] - s[BUSES + i] - coupling) / inertia;
        }
        f
    };

    let mut domain = Domain::symmetric(&[PI / 4.0, PI / 4.0, PI / 4.0, 2.0, 2.0, 2.0]);
    domain.manifold = Manifold::ZeroMean(vec![0, 1, 2]);
    let flat = DynamicalSystem {
        name: "power_3bus".into(),
        dim: 2 * BUSES,
        domain,
        parameters: vec![
            ("m".into(), inertia),
            ("d".into(), damping),
            ("p".into(), 0.0),
            ("B_offdiag".into(), susceptance),
        ],
        state_names: vec!["d1", "d2", "d3", "w1", "w2", "w3"].into_iter().map(String::from).collect(),
        rhs,
        auxiliary: Vec::new(),
        unary_ops: vec![UnaryOp::Sq, UnaryOp::Cos, UnaryOp::Omc],
        singularity_margin: None,
        numeric: Arc::new(numeric),
    };
    let net = NetworkedSystem {
        name: "power_3bus".into(),
        subsystems: BUSES,
        local_dim: 2,
        edges: vec![(0, 1), (0, 2), (1, 2)],
        edge_feature: EdgeFeature::ComponentDifference { component: 0 },
        flat,
        node_domain: Domain::symmetric(&[PI / 4.0, 2.0]),
        edge_domain: Domain::symmetric(&[PI / 2.0]),
        node_ops: vec![UnaryOp::Sq],
        edge_ops: vec![UnaryOp::Sq, UnaryOp::Cos, UnaryOp::Omc],
    };
    net.validate()?;
    Ok(net)
}
