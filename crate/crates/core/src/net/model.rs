use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::{Activation, DenseStack, StackCache};
use super::embedding::{embed, EmbeddingConfig};
use crate::beam::{ParameterField, SpatialGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub embedding: EmbeddingConfig,
    /// Dense layers per head, output layer included.
    pub n_layers: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub p_min: f64,
    pub p_max: f64,
    /// Fixed gain on the modulus head's pre-activation.
    pub p_gain: f64,
    /// Fixed gain on the damping head's linear output.
    pub c_scale: f64,
    /// Start both output layers at zero, so training begins from a uniform
    /// P at the range midpoint and zero damping.
    pub zero_output_init: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingConfig::default(),
            n_layers: 5,
            hidden: 32,
            activation: Activation::Tanh,
            p_min: 0.5,
            p_max: 3.0,
            p_gain: 1.0,
            c_scale: 1.0,
            zero_output_init: false,
        }
    }
}

impl ModelConfig {
    pub fn head_dims(&self) -> Vec<usize> {
        let mut d = vec![self.embedding.dim];
        d.extend(std::iter::repeat(self.hidden).take(self.n_layers - 1));
        d.push(1);
        d
    }

    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        if self.n_layers == 0 || self.hidden == 0 {
            return Err(Error::Invalid("network needs at least one layer and one hidden unit".into()));
        }
        if !(self.p_min > 0.0 && self.p_max > self.p_min) {
            return Err(Error::Invalid(format!("bad P range [{}, {}]", self.p_min, self.p_max)));
        }
        if !(self.p_gain > 0.0 && self.p_gain.is_finite() && self.c_scale > 0.0 && self.c_scale.is_finite()) {
            return Err(Error::Invalid(format!("output gains must be positive, got {} and {}", self.p_gain, self.c_scale)));
        }
        Ok(())
    }
}

/// Two independent heads over positional features: one emits the modulus
/// coefficient through a sigmoid scaled to `(p_min, p_max)`, the other emits
/// damping with no output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    config: ModelConfig,
    p_head: DenseStack,
    c_head: DenseStack,
}

/// Activations of one [`MlpModel::forward_fields`] call.
#[derive(Debug, Clone)]
pub struct FieldTape {
    n: usize,
    p_cache: StackCache,
    c_cache: StackCache,
    p_pre: Vec<f64>,
    fingerprint: u64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn params_fingerprint<'a>(vals: impl Iterator<Item = &'a f64>) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for v in vals {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

impl MlpModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = config.head_dims();
        let p_head = DenseStack::glorot(&dims, config.activation, &mut rng)?;
        let c_head = DenseStack::glorot(&dims, config.activation, &mut rng)?;
        let mut model = Self { config, p_head, c_head };
        if config.zero_output_init {
            for head in [&mut model.p_head, &mut model.c_head] {
                let last = head.n_layers() - 1;
                let (w, b) = head.layer_mut(last);
                w.fill(0.0);
                b.fill(0.0);
            }
        }
        Ok(model)
    }

    pub fn from_heads(config: ModelConfig, p_head: DenseStack, c_head: DenseStack) -> Result<Self> {
        config.validate()?;
        let dims = config.head_dims();
        if p_head.dims() != dims.as_slice() || c_head.dims() != dims.as_slice() {
            return Err(Error::Shape(format!("head dims do not match {dims:?}")));
        }
        Ok(Self { config, p_head, c_head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }
    pub fn p_head(&self) -> &DenseStack {
        &self.p_head
    }
    pub fn c_head(&self) -> &DenseStack {
        &self.c_head
    }
    pub fn p_head_mut(&mut self) -> &mut DenseStack {
        &mut self.p_head
    }
    pub fn c_head_mut(&mut self) -> &mut DenseStack {
        &mut self.c_head
    }

    pub fn n_params(&self) -> usize {
        self.p_head.n_params() + self.c_head.n_params()
    }

    /// All parameters, P head first.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.p_head.params().to_vec();
        v.extend_from_slice(self.c_head.params());
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.n_params())));
        }
        let (a, b) = flat.split_at(self.p_head.n_params());
        self.p_head.params_mut().copy_from_slice(a);
        self.c_head.params_mut().copy_from_slice(b);
        Ok(())
    }

    pub fn fingerprint(&self) -> u64 {
        params_fingerprint(self.p_head.params().iter().chain(self.c_head.params()))
    }

    fn features(&self, coords: &[f64], length: f64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(coords.len() * self.config.embedding.dim);
        for &x in coords {
            // clamp round-off at the far support
            out.extend(embed(x.min(length), length, &self.config.embedding)?);
        }
        Ok(out)
    }

    fn p_from_pre(&self, z: f64) -> f64 {
        self.config.p_min + (self.config.p_max - self.config.p_min) * sigmoid(self.config.p_gain * z)
    }

    /// P at every node (supports included) and C at interior nodes.
    pub fn forward_fields(&self, grid: &SpatialGrid) -> Result<(ParameterField, FieldTape)> {
        let n = grid.n_interior();
        let all = grid.all_coords();
        let inner = grid.interior_coords();
        let (zp, p_cache) = self.p_head.forward(&self.features(&all, grid.length())?, n + 2)?;
        let (zc, c_cache) = self.c_head.forward(&self.features(&inner, grid.length())?, n)?;
        let c: Vec<f64> = zc.iter().map(|z| self.config.c_scale * z).collect();
        let p: Vec<f64> = zp.iter().map(|&z| self.p_from_pre(z)).collect();
        if let Some(i) = p.iter().chain(&c).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i, context: "network output".into() });
        }
        // saturated sigmoid can round to exactly p_min; nudge into the open range
        let p = p.into_iter().map(|v| v.max(self.config.p_min * (1.0 + f64::EPSILON))).collect();
        let fields = ParameterField::new(p, c)?;
        let tape = FieldTape { n, p_cache, c_cache, p_pre: zp, fingerprint: self.fingerprint() };
        Ok((fields, tape))
    }

    /// Flat parameter gradient (P head first) given upstream field gradients.
    pub fn backward_fields(&self, tape: &FieldTape, d_p: &[f64], d_c: &[f64]) -> Result<Vec<f64>> {
        if tape.fingerprint != self.fingerprint() {
            return Err(Error::StaleTape("field tape was recorded with different weights".into()));
        }
        if d_p.len() != tape.n + 2 || d_c.len() != tape.n {
            return Err(Error::Shape(format!(
                "field gradients of length {} and {} for n = {}",
                d_p.len(),
                d_c.len(),
                tape.n
            )));
        }
        let span = self.config.p_max - self.config.p_min;
        let d_zp: Vec<f64> = tape
            .p_pre
            .iter()
            .zip(d_p)
            .map(|(&z, &g)| {
                let s = sigmoid(self.config.p_gain * z);
                g * span * s * (1.0 - s) * self.config.p_gain
            })
            .collect();
        let (mut gp, _) = self.p_head.backward(&tape.p_cache, &d_zp)?;
        let d_zc: Vec<f64> = d_c.iter().map(|g| g * self.config.c_scale).collect();
        let (gc, _) = self.c_head.backward(&tape.c_cache, &d_zc)?;
        gp.extend(gc);
        Ok(gp)
    }

    /// Re-solves both output layers by least squares so the heads reproduce
    /// `target` at the grid nodes, keeping all hidden layers fixed.
    pub fn fit_output_layers(&mut self, grid: &SpatialGrid, target: &ParameterField) -> Result<()> {
        let n = grid.n_interior();
        if target.n() != n {
            return Err(Error::Shape("target fields do not match grid".into()));
        }
        let (lo, hi) = (self.config.p_min, self.config.p_max);
        let mut zp = Vec::with_capacity(n + 2);
        for &p in target.p() {
            if !(p > lo && p < hi) {
                return Err(Error::Domain(format!("target P {p} outside ({lo}, {hi})")));
            }
            let s = (p - lo) / (hi - lo);
            zp.push((s / (1.0 - s)).ln() / self.config.p_gain);
        }
        let all = grid.all_coords();
        let inner = grid.interior_coords();
        let fp = self.features(&all, grid.length())?;
        let fc = self.features(&inner, grid.length())?;
        fit_last_layer(&mut self.p_head, &fp, &zp)?;
        let zc: Vec<f64> = target.c().iter().map(|c| c / self.config.c_scale).collect();
        fit_last_layer(&mut self.c_head, &fc, &zc)?;
        Ok(())
    }
}

fn fit_last_layer(stack: &mut DenseStack, inputs: &[f64], target: &[f64]) -> Result<()> {
    let m = target.len();
    let last = stack.n_layers() - 1;
    // hidden features feeding the output layer
    let hidden = {
        let (_, cache) = stack.forward(inputs, m)?;
        let width = stack.dims()[last];
        let mut h = nalgebra::DMatrix::<f64>::zeros(m, width + 1);
        let x = cache.layer_input(last);
        for p in 0..m {
            for j in 0..width {
                h[(p, j)] = x[p * width + j];
            }
            h[(p, width)] = 1.0;
        }
        h
    };
    let b = nalgebra::DVector::from_column_slice(target);
    let sol = hidden
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Invalid(format!("least squares failed: {e}")))?;
    let width = stack.dims()[last];
    let (w, bias) = stack.layer_mut(last);
    w.copy_from_slice(&sol.as_slice()[..width]);
    bias[0] = sol[width];
    Ok(())
}
