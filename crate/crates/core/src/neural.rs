//! Dense feed-forward networks with hand-written backpropagation, an Adam
//! optimizer and masked categorical distributions.
//!
//! Networks are generic over the scalar so the agents can train in `f32`
//! while gradient checks run in `f64`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
}

/// Fully connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Real> Layer<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            biases: vec![T::zero(); outputs],
        }
    }

    fn affine(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        for (o, row) in self.weights.chunks_exact(self.inputs).enumerate() {
            let mut acc = self.biases[o];
            for (w, xi) in row.iter().zip(x) {
                acc += *w * *xi;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub hidden_gain: f64,
    pub output_gain: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            hidden_gain: 1.0,
            output_gain: 0.01,
        }
    }
}

/// Random matrix with orthonormal rows or columns (whichever is fewer),
/// scaled by `gain`, via modified Gram-Schmidt on Gaussian samples.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (long, short) = (rows.max(cols), rows.min(cols));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut m = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            m[r * cols + c] = if rows >= cols { basis[c][r] } else { basis[r][c] } * gain;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Layer<T>>,
    pub output_activation: Activation,
}

/// Per-layer inputs and post-activation outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    values: Vec<Vec<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.values.last().expect("non-empty cache")
    }

    pub fn input(&self) -> &[T] {
        &self.values[0]
    }
}

/// Gradients shaped like the parameters of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Real> MlpGrads<T> {
    pub fn zero(&mut self) {
        for w in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            w.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn scale(&mut self, s: T) {
        for w in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            w.iter_mut().for_each(|x| *x = *x * s);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flat_map(|w| w.iter())
            .map(|x| {
                let v = x.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum()
    }

    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Scales all gradient sets so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [&mut MlpGrads<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sq_norm()).sum::<f64>().sqrt();
    if norm.is_finite() && norm > max_norm {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale(s);
        }
    }
    norm
}

impl<T: Real> Mlp<T> {
    pub fn zeros(sizes: &[usize], output_activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Mlp {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            output_activation,
        })
    }

    /// Orthogonal init with `hidden_gain` on hidden layers and `output_gain`
    /// on the last layer; biases start at zero.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        output_activation: Activation,
        init: InitConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, output_activation)?;
        let last = net.layers.len() - 1;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let gain = if i == last { init.output_gain } else { init.hidden_gain };
            let w = orthogonal(layer.outputs, layer.inputs, gain, rng);
            layer.weights = w.into_iter().map(T::lit).collect();
        }
        Ok(net)
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_size()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            Activation::Tanh
        }
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            if self.activation(i) == Activation::Tanh {
                next.iter_mut().for_each(|x| *x = x.tanh());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, input: &[T]) -> Result<ForwardCache<T>> {
        self.check_input(input)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.affine(values.last().expect("non-empty"), &mut out);
            if self.activation(i) == Activation::Tanh {
                out.iter_mut().for_each(|x| *x = x.tanh());
            }
            values.push(out);
        }
        Ok(ForwardCache { values })
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.input_size() {
            return Err(Error::Shape(format!(
                "input has {} entries, network expects {}",
                input.len(),
                self.input_size()
            )));
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> MlpGrads<T> {
        MlpGrads {
            weights: self.layers.iter().map(|l| vec![T::zero(); l.weights.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![T::zero(); l.biases.len()]).collect(),
        }
    }

    /// Accumulates parameter gradients of `<output, output_grad>` into `grads`
    /// and returns the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &[T],
        grads: &mut MlpGrads<T>,
    ) -> Result<Vec<T>> {
        if output_grad.len() != self.output_size() {
            return Err(Error::Shape(format!(
                "output gradient has {} entries, network outputs {}",
                output_grad.len(),
                self.output_size()
            )));
        }
        if cache.values.len() != self.layers.len() + 1 || cache.input().len() != self.input_size() {
            return Err(Error::Shape("forward cache does not match network".into()));
        }
        let mut delta = output_grad.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let out = &cache.values[i + 1];
            if self.activation(i) == Activation::Tanh {
                for (d, y) in delta.iter_mut().zip(out) {
                    *d = *d * (T::one() - *y * *y);
                }
            }
            let x = &cache.values[i];
            let gw = &mut grads.weights[i];
            let gb = &mut grads.biases[i];
            let mut dx = vec![T::zero(); layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                if d == T::zero() {
                    continue;
                }
                let row = o * layer.inputs..(o + 1) * layer.inputs;
                for ((g, xi), (w, dxi)) in gw[row.clone()]
                    .iter_mut()
                    .zip(x)
                    .zip(layer.weights[row].iter().zip(dx.iter_mut()))
                {
                    *g += d * *xi;
                    *dxi += d * *w;
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// One-shot gradient of `<f(input), output_grad>` with respect to the
    /// parameters.
    pub fn gradients(&self, input: &[T], output_grad: &[T]) -> Result<MlpGrads<T>> {
        let cache = self.forward_cached(input)?;
        let mut g = self.zero_grads();
        self.backward(&cache, output_grad, &mut g)?;
        Ok(g)
    }

    /// Parameters in checkpoint order: per layer, weights then biases.
    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} parameters supplied, network has {}",
                params.len(),
                self.num_params()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().expect("sized"));
            l.biases.iter_mut().for_each(|b| *b = it.next().expect("sized"));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: MlpGrads<T>,
    pub v: MlpGrads<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(net: &Mlp<T>, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: net.zero_grads(),
            v: net.zero_grads(),
            step: 0,
        }
    }

    /// Bias-corrected Adam update of `net` in place. Rejects non-finite
    /// gradients before touching any parameter.
    pub fn step(&mut self, net: &mut Mlp<T>, grads: &MlpGrads<T>) -> Result<()> {
        if grads.weights.len() != net.layers.len() {
            return Err(Error::Shape("gradient/network layer count mismatch".into()));
        }
        for (i, (gw, gb)) in grads.weights.iter().zip(&grads.biases).enumerate() {
            let l = &net.layers[i];
            if gw.len() != l.weights.len() || gb.len() != l.biases.len() {
                return Err(Error::Shape(format!("gradient shape mismatch in layer {i}")));
            }
            if gw.iter().chain(gb).any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: i });
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let step_size = T::lit(c.lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(c.epsilon);
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let pairs = [
                (&mut layer.weights, &grads.weights[i], &mut self.m.weights[i], &mut self.v.weights[i]),
                (&mut layer.biases, &grads.biases[i], &mut self.m.biases[i], &mut self.v.biases[i]),
            ];
            for (p, g, m, v) in pairs {
                for j in 0..p.len() {
                    let gj = g[j];
                    m[j] = b1 * m[j] + (T::one() - b1) * gj;
                    v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                    p[j] = p[j] - step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
                }
            }
        }
        Ok(())
    }
}

/// Masked categorical distribution over logits; masked entries have
/// probability exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalHead {
    pub logits: Vec<f64>,
    pub mask: Option<Vec<bool>>,
}

impl CategoricalHead {
    pub fn new<T: Real>(logits: &[T], mask: Option<&[bool]>) -> Result<Self> {
        if let Some(m) = mask {
            if m.len() != logits.len() {
                return Err(Error::Shape(format!(
                    "mask has {} entries, logits {}",
                    m.len(),
                    logits.len()
                )));
            }
        }
        Ok(CategoricalHead {
            logits: logits.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect(),
            mask: mask.map(<[bool]>::to_vec),
        })
    }

    fn allowed(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
    }

    /// Softmax over unmasked entries.
    pub fn probs(&self) -> Result<Vec<f64>> {
        let max = (0..self.logits.len())
            .filter(|&i| self.allowed(i))
            .map(|i| self.logits[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::AllMasked);
        }
        if !max.is_finite() {
            return Err(Error::Numerical(format!("non-finite logit {max}")));
        }
        let mut p: Vec<f64> = (0..self.logits.len())
            .map(|i| if self.allowed(i) { (self.logits[i] - max).exp() } else { 0.0 })
            .collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
        Ok(p)
    }

    pub fn log_prob(&self, index: usize) -> Result<f64> {
        if !self.allowed(index) {
            return Ok(f64::NEG_INFINITY);
        }
        let max = (0..self.logits.len())
            .filter(|&i| self.allowed(i))
            .map(|i| self.logits[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + (0..self.logits.len())
                .filter(|&i| self.allowed(i))
                .map(|i| (self.logits[i] - max).exp())
                .sum::<f64>()
                .ln();
        Ok(self.logits[index] - lse)
    }

    pub fn entropy(&self) -> Result<f64> {
        let p = self.probs()?;
        Ok(-p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>())
    }

    pub fn argmax(&self) -> Result<usize> {
        let p = self.probs()?;
        let mut best = 0;
        for i in 0..p.len() {
            if self.allowed(i) && (!self.allowed(best) || self.logits[i] > self.logits[best]) {
                best = i;
            }
        }
        debug_assert!(p[best] > 0.0);
        Ok(best)
    }

    /// d log p(index) / d logits.
    pub fn grad_log_prob(&self, index: usize) -> Result<Vec<f64>> {
        let mut g = self.probs()?;
        g.iter_mut().for_each(|x| *x = -*x);
        g[index] += 1.0;
        Ok(g)
    }

    /// d H / d logits.
    pub fn grad_entropy(&self) -> Result<Vec<f64>> {
        let p = self.probs()?;
        let h = -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
        Ok(p.iter()
            .map(|&pi| if pi > 0.0 { -pi * (pi.ln() + h) } else { 0.0 })
            .collect())
    }
}

/// Draws an index from the masked distribution and returns it with its
/// log-probability.
pub fn masked_sample<R: Rng + ?Sized>(head: &CategoricalHead, rng: &mut R) -> Result<(usize, f64)> {
    let p = head.probs()?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut chosen = None;
    for (i, &pi) in p.iter().enumerate() {
        if pi <= 0.0 {
            continue;
        }
        acc += pi;
        chosen = Some(i);
        if u < acc {
            break;
        }
    }
    let i = chosen.ok_or(Error::AllMasked)?;
    Ok((i, head.log_prob(i)?))
}
