//! Input-convex network g(x) with a forward-mode tangent channel and the
//! matching reverse pass, enough to differentiate `grad g(x) . v` with
//! respect to the parameters.
//!
//! Layer `0`:      h = Wx x + b
//! Layer `k > 0`:  h = Wz z_{k-1} + Wx x + b,  Wz >= 0
//! Hidden units:   z = act(h)
//! Output:         g = wz . z_last + wx . x + b
//!
//! `act` is convex and nondecreasing and the `Wz` blocks are entrywise
//! nonnegative, so g is convex in x.

use rand::Rng;

use super::SmoothedRelu;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    /// Constrained entrywise nonnegative.
    pub nonneg: bool,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerIdx {
    wz: Option<usize>,
    wx: usize,
    b: usize,
}

#[derive(Debug, Clone)]
pub struct Icnn {
    n_in: usize,
    hidden: Vec<usize>,
    act: SmoothedRelu,
    tensors: Vec<TensorSpec>,
    // hidden layers followed by the output layer
    layers: Vec<LayerIdx>,
    pub params: Vec<f64>,
}

/// Per-point activations kept for the reverse pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    pre: Vec<Vec<f64>>,
    pre_dot: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    post_dot: Vec<Vec<f64>>,
    pub g: f64,
    pub g_dot: f64,
}

impl Icnn {
    /// Random initialization: uniform in +-1/sqrt(fan_in), with the
    /// constrained blocks replaced by their absolute values.
    ///
    /// Panics if `hidden` is empty or `n_in == 0`.
    pub fn new<R: Rng + ?Sized>(n_in: usize, hidden: &[usize], act: SmoothedRelu, rng: &mut R) -> Self {
        assert!(n_in > 0 && !hidden.is_empty(), "ICNN needs inputs and at least one hidden layer");
        let (tensors, layers, total) = layout(n_in, hidden);
        let mut params = vec![0.0; total];
        for (k, layer) in layers.iter().enumerate() {
            let fan_in = n_in + if k > 0 { hidden[k - 1] } else { 0 };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for idx in [layer.wz, Some(layer.wx), Some(layer.b)].into_iter().flatten() {
                let spec = &tensors[idx];
                for p in &mut params[spec.range()] {
                    let v: f64 = rng.random_range(-bound..bound);
                    *p = if spec.nonneg { v.abs() } else { v };
                }
            }
        }
        Icnn { n_in, hidden: hidden.to_vec(), act, tensors, layers, params }
    }

    /// Rebuilds a network from a flat parameter vector in layout order.
    pub fn from_params(n_in: usize, hidden: &[usize], act: SmoothedRelu, params: Vec<f64>) -> crate::Result<Self> {
        if n_in == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(crate::Error::Checkpoint("empty layer".into()));
        }
        let (tensors, layers, total) = layout(n_in, hidden);
        if params.len() != total {
            return Err(crate::Error::DimensionMismatch { expected: total, found: params.len() });
        }
        Ok(Icnn { n_in, hidden: hidden.to_vec(), act, tensors, layers, params })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn activation(&self) -> SmoothedRelu {
        self.act
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Clamp every hidden-to-hidden weight at zero.
    pub fn project_nonneg(&mut self) {
        for spec in self.tensors.iter().filter(|t| t.nonneg) {
            for p in &mut self.params[spec.range()] {
                if *p < 0.0 {
                    *p = 0.0;
                }
            }
        }
    }

    pub fn min_constrained_weight(&self) -> f64 {
        self.tensors
            .iter()
            .filter(|t| t.nonneg)
            .flat_map(|t| self.params[t.range()].iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    fn slice(&self, idx: usize) -> &[f64] {
        &self.params[self.tensors[idx].range()]
    }

    fn width(&self, k: usize) -> usize {
        if k < self.hidden.len() {
            self.hidden[k]
        } else {
            1
        }
    }

    /// g(x).
    pub fn value(&self, x: &[f64]) -> f64 {
        let mut z: Vec<f64> = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            let w = self.width(k);
            let mut h = self.slice(layer.b).to_vec();
            matvec_add(self.slice(layer.wx), w, self.n_in, x, &mut h);
            if let Some(wz) = layer.wz {
                matvec_add(self.slice(wz), w, z.len(), &z, &mut h);
            }
            if k == self.hidden.len() {
                return h[0];
            }
            z = h.iter().map(|&v| self.act.value(v)).collect();
        }
        unreachable!("output layer always present")
    }

    /// Forward pass carrying the tangent `v`: returns g(x) and grad g(x) . v.
    pub fn forward_tangent(&self, x: &[f64], v: &[f64]) -> Tape {
        let n_hidden = self.hidden.len();
        let mut tape = Tape::default();
        for (k, layer) in self.layers.iter().enumerate() {
            let w = self.width(k);
            let mut h = self.slice(layer.b).to_vec();
            let mut hd = vec![0.0; w];
            matvec_add(self.slice(layer.wx), w, self.n_in, x, &mut h);
            matvec_add(self.slice(layer.wx), w, self.n_in, v, &mut hd);
            if let Some(wz) = layer.wz {
                let z = &tape.post[k - 1];
                let zd = &tape.post_dot[k - 1];
                matvec_add2(self.slice(wz), w, z.len(), z, zd, &mut h, &mut hd);
            }
            if k == n_hidden {
                tape.g = h[0];
                tape.g_dot = hd[0];
                break;
            }
            let z: Vec<f64> = h.iter().map(|&a| self.act.value(a)).collect();
            let zd: Vec<f64> = h.iter().zip(&hd).map(|(&a, &ad)| self.act.deriv(a) * ad).collect();
            tape.pre.push(h);
            tape.pre_dot.push(hd);
            tape.post.push(z);
            tape.post_dot.push(zd);
        }
        tape
    }

    /// Accumulates into `grad` the parameter gradient of
    /// `adj_g * g + adj_g_dot * g_dot` for the point recorded in `tape`.
    pub fn backward(&self, x: &[f64], v: &[f64], tape: &Tape, adj_g: f64, adj_g_dot: f64, grad: &mut [f64]) {
        let n_hidden = self.hidden.len();
        let out = self.layers[n_hidden];
        let last = n_hidden - 1;

        let wz_out = self.slice(out.wz.expect("output layer reads hidden units"));
        let spec = &self.tensors[out.wz.unwrap()];
        for (j, g) in grad[spec.range()].iter_mut().enumerate() {
            *g += adj_g * tape.post[last][j] + adj_g_dot * tape.post_dot[last][j];
        }
        let spec = &self.tensors[out.wx];
        for (j, g) in grad[spec.range()].iter_mut().enumerate() {
            *g += adj_g * x[j] + adj_g_dot * v[j];
        }
        grad[self.tensors[out.b].offset] += adj_g;

        let mut adj_z: Vec<f64> = wz_out.iter().map(|w| adj_g * w).collect();
        let mut adj_zd: Vec<f64> = wz_out.iter().map(|w| adj_g_dot * w).collect();

        for k in (0..n_hidden).rev() {
            let layer = self.layers[k];
            let h = &tape.pre[k];
            let hd = &tape.pre_dot[k];
            let w = h.len();
            let mut adj_h = vec![0.0; w];
            let mut adj_hd = vec![0.0; w];
            for i in 0..w {
                let d1 = self.act.deriv(h[i]);
                adj_h[i] = adj_z[i] * d1 + adj_zd[i] * self.act.second(h[i]) * hd[i];
                adj_hd[i] = adj_zd[i] * d1;
            }
            outer_add2(&mut grad[self.tensors[layer.wx].range()], &adj_h, x, &adj_hd, v);
            for (g, a) in grad[self.tensors[layer.b].range()].iter_mut().zip(&adj_h) {
                *g += a;
            }
            if let Some(wz) = layer.wz {
                let z = &tape.post[k - 1];
                let zd = &tape.post_dot[k - 1];
                outer_add2(&mut grad[self.tensors[wz].range()], &adj_h, z, &adj_hd, zd);
                let m = self.slice(wz);
                let (az, azd) = matvec_t2(m, w, z.len(), &adj_h, &adj_hd);
                adj_z = az;
                adj_zd = azd;
            }
        }
    }

    /// grad_x g(x) by a reverse pass.
    pub fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        let zero = vec![0.0; self.n_in];
        let tape = self.forward_tangent(x, &zero);
        let n_hidden = self.hidden.len();
        let out = self.layers[n_hidden];
        let mut gx = self.slice(out.wx).to_vec();
        let mut adj_z = self.slice(out.wz.unwrap()).to_vec();
        for k in (0..n_hidden).rev() {
            let layer = self.layers[k];
            let h = &tape.pre[k];
            let adj_h: Vec<f64> = h.iter().zip(&adj_z).map(|(&a, &az)| az * self.act.deriv(a)).collect();
            let wx = self.slice(layer.wx);
            for (i, a) in adj_h.iter().enumerate() {
                if *a != 0.0 {
                    for (g, w) in gx.iter_mut().zip(&wx[i * self.n_in..(i + 1) * self.n_in]) {
                        *g += a * w;
                    }
                }
            }
            if let Some(wz) = layer.wz {
                let cols = tape.post[k - 1].len();
                let (az, _) = matvec_t2(self.slice(wz), h.len(), cols, &adj_h, &vec![0.0; h.len()]);
                adj_z = az;
            }
        }
        gx
    }
}

fn layout(n_in: usize, hidden: &[usize]) -> (Vec<TensorSpec>, Vec<LayerIdx>, usize) {
    let mut tensors = Vec::new();
    let mut layers = Vec::new();
    let mut offset = 0usize;
    let mut push = |name: String, rows: usize, cols: usize, nonneg: bool| {
        tensors.push(TensorSpec { name, rows, cols, offset, nonneg });
        offset += rows * cols;
        tensors.len() - 1
    };
    let widths: Vec<usize> = hidden.iter().copied().chain(std::iter::once(1)).collect();
    for (k, &w) in widths.iter().enumerate() {
        let label = if k == hidden.len() { "out".to_string() } else { format!("layer{k}") };
        let wz = (k > 0).then(|| push(format!("{label}.wz"), w, widths[k - 1], true));
        let wx = push(format!("{label}.wx"), w, n_in, false);
        let b = push(format!("{label}.b"), w, 1, false);
        layers.push(LayerIdx { wz, wx, b });
    }
    (tensors, layers, offset)
}

/// y += M x, M row-major (rows x cols).
fn matvec_add(m: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    for i in 0..rows {
        y[i] += dot(&m[i * cols..(i + 1) * cols], x);
    }
}

/// y1 += M x1, y2 += M x2 in one sweep over M.
fn matvec_add2(m: &[f64], rows: usize, cols: usize, x1: &[f64], x2: &[f64], y1: &mut [f64], y2: &mut [f64]) {
    for i in 0..rows {
        let row = &m[i * cols..(i + 1) * cols];
        let (mut a, mut b) = (0.0, 0.0);
        for j in 0..cols {
            a += row[j] * x1[j];
            b += row[j] * x2[j];
        }
        y1[i] += a;
        y2[i] += b;
    }
}

/// (M^T a, M^T b).
fn matvec_t2(m: &[f64], rows: usize, cols: usize, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut ya = vec![0.0; cols];
    let mut yb = vec![0.0; cols];
    for i in 0..rows {
        let (ai, bi) = (a[i], b[i]);
        if ai == 0.0 && bi == 0.0 {
            continue;
        }
        let row = &m[i * cols..(i + 1) * cols];
        for j in 0..cols {
            ya[j] += row[j] * ai;
            yb[j] += row[j] * bi;
        }
    }
    (ya, yb)
}

/// G += a u^T + b w^T.
fn outer_add2(g: &mut [f64], a: &[f64], u: &[f64], b: &[f64], w: &[f64]) {
    let cols = u.len();
    for i in 0..a.len() {
        let (ai, bi) = (a[i], b[i]);
        if ai == 0.0 && bi == 0.0 {
            continue;
        }
        let row = &mut g[i * cols..(i + 1) * cols];
        for j in 0..cols {
            row[j] += ai * u[j] + bi * w[j];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
