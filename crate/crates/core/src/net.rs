//! Time-conditioned feed-forward regressor with hand-written backprop.
//!
//! The same network type serves as the bridge regressor `ε(x, t)` (with a
//! sinusoidal time embedding appended to the input) and as the mean network
//! `M(x1)` (with `time_embed_dim = 0`).
//!
//! Weights are stored per layer as `out × in` row-major matrices.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rng::{self, StreamRng};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BRLB";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Fixed number of gradient-accumulation chunks per batch. Chunk partials are
/// summed in chunk order, so results do not depend on the worker count.
const GRAD_CHUNKS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `x·sigmoid(x)`.
    Silu,
    Tanh,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Silu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Silu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let th = x.tanh();
                1.0 - th * th
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "silu" => Ok(Activation::Silu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// `dim/2` sine features followed by `dim/2` cosine features at
/// frequencies `2^j·π`.
pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    write_time_embedding(t, &mut out);
    out
}

fn write_time_embedding(t: f64, out: &mut [f64]) {
    let half = out.len() / 2;
    for j in 0..half {
        let freq = (1u64 << j) as f64 * std::f64::consts::PI;
        out[j] = (freq * t).sin();
        out[half + j] = (freq * t).cos();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    #[inline]
    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorParams {
    layer_dims: Vec<usize>,
    time_embed_dim: usize,
    activation: Activation,
    layers: Vec<Layer>,
}

/// Activations recorded by [`RegressorParams::forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// `activations[0]` is the network input, `activations[L]` the output.
    activations: Vec<Vec<f64>>,
    /// Pre-activation values of each hidden layer.
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl RegressorParams {
    /// Zero-initialised network.
    pub fn zeros(layer_dims: &[usize], time_embed_dim: usize, activation: Activation) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer dims {layer_dims:?}")));
        }
        if !time_embed_dim.is_multiple_of(2) || time_embed_dim >= layer_dims[0] {
            return Err(Error::InvalidInput(format!(
                "time embedding width {time_embed_dim} must be even and below the input width {}",
                layer_dims[0]
            )));
        }
        if time_embed_dim / 2 > 62 {
            return Err(Error::InvalidInput("time embedding too wide".into()));
        }
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer {
                in_dim: w[0],
                out_dim: w[1],
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            time_embed_dim,
            activation,
            layers,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(
        layer_dims: &[usize],
        time_embed_dim: usize,
        activation: Activation,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let mut p = Self::zeros(layer_dims, time_embed_dim, activation)?;
        for layer in &mut p.layers {
            let limit = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng::uniform(rng, -limit, limit);
            }
        }
        Ok(p)
    }

    /// `[d + time_embed_dim, hidden × depth, d]`.
    pub fn mlp(
        data_dim: usize,
        hidden: usize,
        depth: usize,
        time_embed_dim: usize,
        activation: Activation,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let mut dims = vec![data_dim + time_embed_dim];
        dims.extend(std::iter::repeat_n(hidden, depth));
        dims.push(data_dim);
        Self::init(&dims, time_embed_dim, activation, rng)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }
    pub fn time_embed_dim(&self) -> usize {
        self.time_embed_dim
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
    pub fn data_dim(&self) -> usize {
        self.layer_dims[0] - self.time_embed_dim
    }
    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn assemble_input(&self, x: &[f64], t: Option<f64>) -> Result<Vec<f64>> {
        let d = self.data_dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let mut input = Vec::with_capacity(self.layer_dims[0]);
        input.extend_from_slice(x);
        match (self.time_embed_dim, t) {
            (0, None) => {}
            (0, Some(_)) => {
                return Err(Error::InvalidInput("network has no time input".into()));
            }
            (_, None) => {
                return Err(Error::InvalidInput("network needs a time input".into()));
            }
            (m, Some(t)) => {
                if !t.is_finite() {
                    return Err(Error::NonFinite("time input"));
                }
                input.resize(d + m, 0.0);
                write_time_embedding(t, &mut input[d..]);
            }
        }
        Ok(input)
    }

    /// Forward pass, recording what [`backward`](Self::backward) needs.
    pub fn forward(&self, x: &[f64], t: Option<f64>) -> Result<(Vec<f64>, Tape)> {
        let input = self.assemble_input(x, t)?;
        let n = self.layers.len();
        let mut activations = Vec::with_capacity(n + 1);
        let mut pre = Vec::with_capacity(n.saturating_sub(1));
        activations.push(input);
        for (li, layer) in self.layers.iter().enumerate() {
            let a_in = &activations[li];
            let mut z: Vec<f64> = (0..layer.out_dim)
                .map(|o| layer.biases[o] + dot(layer.row(o), a_in))
                .collect();
            if li + 1 < n {
                let a: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();
                pre.push(std::mem::take(&mut z));
                activations.push(a);
            } else {
                activations.push(z);
            }
        }
        let out = activations[n].clone();
        Ok((out, Tape { activations, pre }))
    }

    /// Forward pass without keeping the tape.
    pub fn predict(&self, x: &[f64], t: Option<f64>) -> Result<Vec<f64>> {
        let input = self.assemble_input(x, t)?;
        let n = self.layers.len();
        let mut a = input;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z: Vec<f64> = (0..layer.out_dim)
                .map(|o| layer.biases[o] + dot(layer.row(o), &a))
                .collect();
            if li + 1 < n {
                for v in &mut z {
                    *v = self.activation.apply(*v);
                }
            }
            a = z;
        }
        Ok(a)
    }

    /// Reverse-mode gradient of `⟨output_grad, output⟩` with respect to every
    /// parameter.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<GradientBuffer> {
        let mut g = GradientBuffer::zeros_like(self);
        self.backward_into(tape, output_grad, &mut g)?;
        Ok(g)
    }

    /// Like [`backward`](Self::backward) but accumulates into `grads`.
    pub fn backward_into(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        grads: &mut GradientBuffer,
    ) -> Result<()> {
        let n = self.layers.len();
        if tape.activations.len() != n + 1 || tape.pre.len() + 1 != n {
            return Err(Error::TapeMismatch(format!(
                "tape has {} activations for {n} layers",
                tape.activations.len()
            )));
        }
        for (li, layer) in self.layers.iter().enumerate() {
            if tape.activations[li].len() != layer.in_dim {
                return Err(Error::TapeMismatch(format!("layer {li} input width")));
            }
        }
        if output_grad.len() != self.layers[n - 1].out_dim {
            return Err(Error::DimensionMismatch {
                expected: self.layers[n - 1].out_dim,
                got: output_grad.len(),
            });
        }
        if !grads.congruent(self) {
            return Err(Error::TapeMismatch("gradient buffer shape".into()));
        }

        let mut delta = output_grad.to_vec();
        for li in (0..n).rev() {
            let layer = &self.layers[li];
            let a_in = &tape.activations[li];
            let gw = &mut grads.weights[li];
            let gb = &mut grads.biases[li];
            for o in 0..layer.out_dim {
                let d = delta[o];
                gb[o] += d;
                if d != 0.0 {
                    axpy(&mut gw[o * layer.in_dim..(o + 1) * layer.in_dim], d, a_in);
                }
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                if d != 0.0 {
                    axpy(&mut prev, d, layer.row(o));
                }
            }
            let pre = &tape.pre[li - 1];
            for (p, &z) in prev.iter_mut().zip(pre) {
                *p *= self.activation.derivative(z);
            }
            delta = prev;
        }
        Ok(())
    }

    /// Mean-squared-error loss and gradient over a batch.
    ///
    /// Loss per sample is `mean_j (out_j − target_j)²`; the batch loss is the
    /// mean over samples and the returned gradient is its gradient.
    pub fn mse_batch(&self, batch: &[BatchItem<'_>], exec: Execution) -> Result<BatchLoss> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d = self.data_dim();
        let scale = 2.0 / (d as f64 * batch.len() as f64);
        let chunks = par::fixed_chunks(batch.len(), GRAD_CHUNKS);
        let partials = par::try_map_indexed(exec, chunks.len(), |c| -> Result<_> {
            let mut g = GradientBuffer::zeros_like(self);
            let mut losses = Vec::with_capacity(chunks[c].len());
            for item in &batch[chunks[c].clone()] {
                if item.target.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: item.target.len(),
                    });
                }
                let (out, tape) = self.forward(item.x, item.t)?;
                let resid: Vec<f64> = out.iter().zip(item.target).map(|(o, y)| o - y).collect();
                losses.push(resid.iter().map(|r| r * r).sum::<f64>() / d as f64);
                let og: Vec<f64> = resid.iter().map(|r| r * scale).collect();
                self.backward_into(&tape, &og, &mut g)?;
            }
            Ok((g, losses))
        })?;
        let mut iter = partials.into_iter();
        let (mut grads, mut per_sample) = iter.next().expect("at least one chunk");
        for (g, l) in iter {
            grads.add_assign(&g);
            per_sample.extend(l);
        }
        let loss = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        Ok(BatchLoss {
            loss,
            per_sample,
            grads,
        })
    }

    /// Write the versioned binary checkpoint.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.layer_dims.len() as u32).to_le_bytes())?;
        for &d in &self.layer_dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&(self.time_embed_dim as u32).to_le_bytes())?;
        w.write_all(&[self.activation.tag()])?;
        for layer in &self.layers {
            for v in layer.weights.iter().chain(&layer.biases) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.num_params());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R) -> std::result::Result<Self, String> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != CHECKPOINT_MAGIC {
            return Err("bad magic".into());
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let n = read_u32(r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(format!("implausible layer count {n}"));
        }
        let dims = (0..n)
            .map(|_| read_u32(r).map(|v| v as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let ted = read_u32(r)? as usize;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(|e| e.to_string())?;
        let act = Activation::from_tag(tag[0]).ok_or_else(|| format!("bad activation tag {}", tag[0]))?;
        let mut p = Self::zeros(&dims, ted, act).map_err(|e| e.to_string())?;
        for layer in &mut p.layers {
            for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|e| e.to_string())?;
                *v = f64::from_le_bytes(b);
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| e.to_string())? != 0 {
            return Err("trailing bytes".into());
        }
        if !p.is_finite() {
            return Err("non-finite parameters".into());
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingFile(path.to_path_buf()))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        Self::read_from(&mut bytes.as_slice()).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| e.to_string())?;
    Ok(u32::from_le_bytes(b))
}

/// One regression example: input, optional time, target.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub x: &'a [f64],
    pub t: Option<f64>,
    pub target: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    pub per_sample: Vec<f64>,
    pub grads: GradientBuffer,
}

/// Per-layer parameter gradients, congruent with a [`RegressorParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientBuffer {
    pub fn zeros_like(p: &RegressorParams) -> Self {
        Self {
            weights: p.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: p.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn congruent(&self, p: &RegressorParams) -> bool {
        self.weights.len() == p.layers.len()
            && self.biases.len() == p.layers.len()
            && p.layers.iter().enumerate().all(|(i, l)| {
                self.weights[i].len() == l.weights.len() && self.biases[i].len() == l.biases.len()
            })
    }

    pub fn add_assign(&mut self, other: &GradientBuffer) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            axpy(a, 1.0, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            axpy(a, 1.0, b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|&x| x == 0.0))
    }
}

/// Adam moments. Defaults: `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: GradientBuffer,
    pub v: GradientBuffer,
}

impl AdamState {
    pub fn new(p: &RegressorParams) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: GradientBuffer::zeros_like(p),
            v: GradientBuffer::zeros_like(p),
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients reject the step and
/// leave both parameters and moments untouched.
pub fn adam_step(
    params: &mut RegressorParams,
    grads: &GradientBuffer,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidInput(format!("learning rate {lr} must be positive")));
    }
    if !grads.congruent(params) || !state.m.congruent(params) {
        return Err(Error::TapeMismatch("optimizer shapes".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    let step_size = lr / bc1;
    let eps = state.eps;
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= step_size * m[i] / ((v[i] / bc2).sqrt() + eps);
        }
    };
    for (li, layer) in params.layers.iter_mut().enumerate() {
        update(
            &mut layer.weights,
            &grads.weights[li],
            &mut state.m.weights[li],
            &mut state.v.weights[li],
        );
        update(
            &mut layer.biases,
            &grads.biases[li],
            &mut state.m.biases[li],
            &mut state.v.biases[li],
        );
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
