use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Sinusoidal positional features of a normalised coordinate x̂ = x/L:
/// `[sin(2π f_k x̂), cos(2π f_k x̂)]` for `f_k = lowest_frequency · base^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub base: f64,
    pub lowest_frequency: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { dim: 16, base: 2.0, lowest_frequency: 1.0 }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::Invalid(format!("embedding dimension must be even and positive, got {}", self.dim)));
        }
        if !(self.base > 0.0 && self.lowest_frequency > 0.0) {
            return Err(Error::Invalid("embedding frequencies must be positive".into()));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.dim / 2).map(|k| self.lowest_frequency * self.base.powi(k as i32)).collect()
    }
}

pub fn embed(x: f64, length: f64, cfg: &EmbeddingConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(x >= 0.0 && x <= length) {
        return Err(Error::Domain(format!("coordinate {x} outside [0, {length}]")));
    }
    let xh = x / length;
    Ok(cfg
        .frequencies()
        .iter()
        .flat_map(|f| {
            let a = 2.0 * PI * f * xh;
            [a.sin(), a.cos()]
        })
        .collect())
}
