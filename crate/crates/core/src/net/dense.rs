//! Fully connected stacks with hand-written batched forward and backward passes.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Invalid(format!("unknown activation {other:?}"))),
        }
    }
}

/// Dense layers `dims[0] -> dims[1] -> ... -> dims[L]`; every layer but the
/// last applies the hidden activation, the last is affine.
///
/// Parameters live in one flat buffer, layer by layer, each layer stored as
/// its row-major `out x in` weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStack {
    dims: Vec<usize>,
    hidden: Activation,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Activations retained by [`DenseStack::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct StackCache {
    batch: usize,
    // inputs[l]: input to layer l (batch x dims[l]); outputs of hidden layers
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl StackCache {
    /// Input rows fed to layer `l`.
    pub fn layer_input(&self, l: usize) -> &[f64] {
        &self.inputs[l]
    }
}

impl DenseStack {
    pub fn zeros(dims: &[usize], hidden: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Invalid(format!("layer dims {dims:?} need >= 2 non-zero entries")));
        }
        let mut offsets = vec![0];
        for w in dims.windows(2) {
            let last = *offsets.last().unwrap();
            offsets.push(last + w[0] * w[1] + w[1]);
        }
        let params = vec![0.0; *offsets.last().unwrap()];
        Ok(Self { dims: dims.to_vec(), hidden, params, offsets })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng>(dims: &[usize], hidden: Activation, rng: &mut R) -> Result<Self> {
        let mut s = Self::zeros(dims, hidden)?;
        for l in 0..s.n_layers() {
            let (fan_in, fan_out) = (s.dims[l], s.dims[l + 1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let off = s.offsets[l];
            for w in &mut s.params[off..off + fan_in * fan_out] {
                *w = rng.gen_range(-a..a);
            }
        }
        Ok(s)
    }

    pub fn from_params(dims: &[usize], hidden: Activation, params: Vec<f64>) -> Result<Self> {
        let mut s = Self::zeros(dims, hidden)?;
        if params.len() != s.params.len() {
            return Err(Error::Shape(format!(
                "{} parameters for dims {dims:?}, expected {}",
                params.len(),
                s.params.len()
            )));
        }
        s.params = params;
        Ok(s)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }
    pub fn hidden(&self) -> Activation {
        self.hidden
    }
    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }
    pub fn n_inputs(&self) -> usize {
        self.dims[0]
    }
    pub fn n_outputs(&self) -> usize {
        *self.dims.last().unwrap()
    }
    pub fn n_params(&self) -> usize {
        self.params.len()
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight matrix (row-major, out x in) and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let off = self.offsets[l];
        let (w, rest) = self.params[off..off + i * o + o].split_at(i * o);
        (w, rest)
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let off = self.offsets[l];
        self.params[off..off + i * o + o].split_at_mut(i * o)
    }

    fn activation_of(&self, l: usize) -> Activation {
        if l + 1 == self.n_layers() {
            Activation::Identity
        } else {
            self.hidden
        }
    }

    /// Evaluates `batch` input rows (row-major `batch x dims[0]`).
    pub fn forward(&self, inputs: &[f64], batch: usize) -> Result<(Vec<f64>, StackCache)> {
        if inputs.len() != batch * self.n_inputs() {
            return Err(Error::Shape(format!(
                "{} inputs for batch {batch} x {}",
                inputs.len(),
                self.n_inputs()
            )));
        }
        let mut cache = StackCache { batch, inputs: Vec::new(), pre: Vec::new() };
        let mut x = inputs.to_vec();
        for l in 0..self.n_layers() {
            let (ni, no) = (self.dims[l], self.dims[l + 1]);
            let (w, b) = self.layer(l);
            let act = self.activation_of(l);
            let mut z = vec![0.0; batch * no];
            for p in 0..batch {
                let xr = &x[p * ni..(p + 1) * ni];
                for o in 0..no {
                    let wr = &w[o * ni..(o + 1) * ni];
                    z[p * no + o] = b[o] + wr.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
                }
            }
            let a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            cache.inputs.push(std::mem::replace(&mut x, a));
            cache.pre.push(z);
        }
        Ok((x, cache))
    }

    /// Gradients of `Σ d_out ⊙ output` with respect to the parameters and the inputs.
    pub fn backward(&self, cache: &StackCache, d_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let batch = cache.batch;
        if d_out.len() != batch * self.n_outputs() || cache.inputs.len() != self.n_layers() {
            return Err(Error::Shape("upstream gradient does not match cached batch".into()));
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = d_out.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (ni, no) = (self.dims[l], self.dims[l + 1]);
            let act = self.activation_of(l);
            let z = &cache.pre[l];
            if act != Activation::Identity {
                for (k, d) in delta.iter_mut().enumerate() {
                    *d *= act.derivative(z[k], act.apply(z[k]));
                }
            }
            let x = &cache.inputs[l];
            let off = self.offsets[l];
            let (gw, gb) = grad[off..off + ni * no + no].split_at_mut(ni * no);
            for p in 0..batch {
                let xr = &x[p * ni..(p + 1) * ni];
                for o in 0..no {
                    let d = delta[p * no + o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, xv) in gw[o * ni..(o + 1) * ni].iter_mut().zip(xr) {
                        *g += d * xv;
                    }
                }
            }
            let (w, _) = self.layer(l);
            let mut prev = vec![0.0; batch * ni];
            for p in 0..batch {
                for o in 0..no {
                    let d = delta[p * no + o];
                    if d == 0.0 {
                        continue;
                    }
                    for (pv, wv) in prev[p * ni..(p + 1) * ni].iter_mut().zip(&w[o * ni..(o + 1) * ni]) {
                        *pv += d * wv;
                    }
                }
            }
            delta = prev;
        }
        Ok((grad, delta))
    }

    /// Jacobian-free input gradient of a single-output stack at one point.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.n_outputs() != 1 {
            return Err(Error::Shape("input gradient needs a scalar output".into()));
        }
        let (_, cache) = self.forward(x, 1)?;
        Ok(self.backward(&cache, &[1.0])?.1)
    }
}
