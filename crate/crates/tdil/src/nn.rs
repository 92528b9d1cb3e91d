//! Minimal dense feed-forward networks with exact gradients.
//!
//! Hidden layers use ReLU; the output head is sigmoid or identity. The
//! backward pass returns analytic parameter gradients that are checked
//! against central finite differences in the test suite. Parameters are
//! updated with Adam, and paired target networks follow the online network
//! through convex soft updates.

use std::path::Path;

use rand::Rng;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("input has dimension {found}, network expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("networks have different architectures ({a} vs {b})")]
    ArchMismatch { a: String, b: String },
    #[error("non-finite gradient in layer {layer} ({kind}[{index}] = {value})")]
    NonFiniteGradient {
        layer: usize,
        kind: &'static str,
        index: usize,
        value: f64,
    },
    #[error("snapshot decode failed: {0}")]
    Decode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

/// One dense layer, weights stored row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Layer {
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// Fully connected network: `dims[0]` inputs through hidden ReLU layers to
/// `dims.last()` outputs under the configured head.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    dims: Vec<usize>,
    layers: Vec<Layer>,
    output_activation: OutputActivation,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl DenseNet {
    /// Seeded init: weights uniform in `±sqrt(6 / (fan_in + fan_out))`,
    /// biases zero.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        output_activation: OutputActivation,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "network needs input and output dims");
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    w: (0..fan_in * fan_out)
                        .map(|_| rng.gen_range(-bound..=bound))
                        .collect(),
                    b: vec![0.0; fan_out],
                    in_dim: fan_in,
                    out_dim: fan_out,
                }
            })
            .collect();
        DenseNet {
            dims: dims.to_vec(),
            layers,
            output_activation,
        }
    }

    /// All-zero parameters (sigmoid head then outputs exactly 0.5).
    pub fn zeros(dims: &[usize], output_activation: OutputActivation) -> Self {
        DenseNet {
            dims: dims.to_vec(),
            layers: dims
                .windows(2)
                .map(|d| Layer {
                    w: vec![0.0; d[0] * d[1]],
                    b: vec![0.0; d[1]],
                    in_dim: d[0],
                    out_dim: d[1],
                })
                .collect(),
            output_activation,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn same_architecture(&self, other: &DenseNet) -> bool {
        self.dims == other.dims && self.output_activation == other.output_activation
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::DimMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Plain forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut scratch = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut scratch);
            if l < last {
                for z in scratch.iter_mut() {
                    *z = z.max(0.0);
                }
            } else {
                match self.output_activation {
                    OutputActivation::Sigmoid => {
                        for z in scratch.iter_mut() {
                            *z = sigmoid(*z);
                        }
                    }
                    OutputActivation::Identity => {}
                }
            }
            std::mem::swap(&mut cur, &mut scratch);
        }
        Ok(cur)
    }

    /// Forward pass that keeps every layer's post-activation for backprop.
    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace, NnError> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let last = self.layers.len() - 1;
        let mut scratch = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(activations.last().unwrap(), &mut scratch);
            if l < last {
                for z in scratch.iter_mut() {
                    *z = z.max(0.0);
                }
            } else if self.output_activation == OutputActivation::Sigmoid {
                for z in scratch.iter_mut() {
                    *z = sigmoid(*z);
                }
            }
            activations.push(scratch.clone());
        }
        Ok(Trace { activations })
    }

    /// Exact analytic gradients of `sum_i upstream[i] * output[i]` with
    /// respect to every parameter, reusing a recorded forward trace.
    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> Result<Gradients, NnError> {
        if upstream.len() != self.output_dim() {
            return Err(NnError::DimMismatch {
                expected: self.output_dim(),
                found: upstream.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let last = self.layers.len() - 1;
        // delta = dL/dz of the current layer.
        let mut delta: Vec<f64> = match self.output_activation {
            OutputActivation::Sigmoid => {
                let y = &trace.activations[last + 1];
                upstream
                    .iter()
                    .zip(y)
                    .map(|(u, y)| u * y * (1.0 - y))
                    .collect()
            }
            OutputActivation::Identity => upstream.to_vec(),
        };
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.activations[l];
            let g = &mut grads.layers[l];
            for o in 0..layer.out_dim {
                let d = delta[o];
                g.db[o] += d;
                let row = &mut g.dw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw += d * xi;
                }
            }
            if l > 0 {
                // Propagate through the previous ReLU: post-activation > 0
                // exactly where the preactivation was positive.
                let mut prev = vec![0.0; layer.in_dim];
                for o in 0..layer.out_dim {
                    let d = delta[o];
                    let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (p, wi) in prev.iter_mut().zip(row) {
                        *p += d * wi;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(grads)
    }
}

/// Recorded activations of a forward pass (`activations[0]` is the input).
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

/// Per-parameter gradients matching a [`DenseNet`]'s layout.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    dw: vec![0.0; l.w.len()],
                    db: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.dw.iter_mut().zip(&b.dw) {
                *x += y;
            }
            for (x, y) in a.db.iter_mut().zip(&b.db) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            for x in &mut l.dw {
                *x *= c;
            }
            for x in &mut l.db {
                *x *= c;
            }
        }
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<LayerGrad>,
    v: Vec<LayerGrad>,
}

impl OptimState {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| LayerGrad {
                    dw: vec![0.0; l.w.len()],
                    db: vec![0.0; l.b.len()],
                })
                .collect()
        };
        OptimState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One Adam step. Non-finite gradients are rejected with their location.
pub fn opt_step(
    net: &mut DenseNet,
    opt: &mut OptimState,
    grads: &Gradients,
) -> Result<(), NnError> {
    for (l, g) in grads.layers.iter().enumerate() {
        for (i, &v) in g.dw.iter().enumerate() {
            if !v.is_finite() {
                return Err(NnError::NonFiniteGradient {
                    layer: l,
                    kind: "dw",
                    index: i,
                    value: v,
                });
            }
        }
        for (i, &v) in g.db.iter().enumerate() {
            if !v.is_finite() {
                return Err(NnError::NonFiniteGradient {
                    layer: l,
                    kind: "db",
                    index: i,
                    value: v,
                });
            }
        }
    }
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    for (l, layer) in net.layers.iter_mut().enumerate() {
        let g = &grads.layers[l];
        let (m, v) = (&mut opt.m[l], &mut opt.v[l]);
        for i in 0..layer.w.len() {
            m.dw[i] = opt.beta1 * m.dw[i] + (1.0 - opt.beta1) * g.dw[i];
            v.dw[i] = opt.beta2 * v.dw[i] + (1.0 - opt.beta2) * g.dw[i] * g.dw[i];
            let mh = m.dw[i] / bc1;
            let vh = v.dw[i] / bc2;
            layer.w[i] -= opt.learning_rate * mh / (vh.sqrt() + opt.epsilon);
        }
        for i in 0..layer.b.len() {
            m.db[i] = opt.beta1 * m.db[i] + (1.0 - opt.beta1) * g.db[i];
            v.db[i] = opt.beta2 * v.db[i] + (1.0 - opt.beta2) * g.db[i] * g.db[i];
            let mh = m.db[i] / bc1;
            let vh = v.db[i] / bc2;
            layer.b[i] -= opt.learning_rate * mh / (vh.sqrt() + opt.epsilon);
        }
    }
    Ok(())
}

/// Target tracking: every target parameter becomes
/// `(1 - lambda) * online + lambda * target`.
///
/// At `lambda = 0` the target becomes a copy of the online network; at
/// `lambda = 1` it is frozen. The updated value always lies on the segment
/// between the two inputs.
pub fn soft_update(target: &mut DenseNet, online: &DenseNet, lambda: f64) -> Result<(), NnError> {
    if !target.same_architecture(online) {
        return Err(NnError::ArchMismatch {
            a: format!("{:?}", target.dims),
            b: format!("{:?}", online.dims),
        });
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        for (tw, ow) in t.w.iter_mut().zip(&o.w) {
            *tw = (1.0 - lambda) * ow + lambda * *tw;
        }
        for (tb, ob) in t.b.iter_mut().zip(&o.b) {
            *tb = (1.0 - lambda) * ob + lambda * *tb;
        }
    }
    Ok(())
}

// Snapshot format: magic, head byte, dims header, then per layer the weight
// matrix and bias vector as little-endian f64. Round-trips bit-exactly.
const SNAPSHOT_MAGIC: &[u8; 4] = b"DNT1";

impl DenseNet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.push(match self.output_activation {
            OutputActivation::Sigmoid => 0,
            OutputActivation::Identity => 1,
        });
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for layer in &self.layers {
            for &x in layer.w.iter().chain(&layer.b) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let err = |msg: &str| NnError::Decode(msg.to_string());
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], NnError> {
            if *pos + n > bytes.len() {
                return Err(err("unexpected end of snapshot"));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != SNAPSHOT_MAGIC {
            return Err(err("bad magic"));
        }
        let output_activation = match take(&mut pos, 1)?[0] {
            0 => OutputActivation::Sigmoid,
            1 => OutputActivation::Identity,
            _ => return Err(err("unknown output activation")),
        };
        let n_dims = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        if n_dims < 2 || n_dims > 64 {
            return Err(err("implausible dims header"));
        }
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let mut net = DenseNet::zeros(&dims, output_activation);
        for layer in &mut net.layers {
            for x in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                *x = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            }
        }
        if pos != bytes.len() {
            return Err(err("trailing bytes in snapshot"));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        DenseNet::from_bytes(&std::fs::read(path)?)
    }
}
