//! Limited-memory BFGS with a halving line search.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    /// Initial trial step along the search direction.
    pub step: f64,
    pub max_halvings: usize,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { memory: 10, step: 1.0, max_halvings: 20, c1: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// Step accepted after `halvings` reductions of the trial length.
    Accepted { halvings: usize },
    /// No decrease found; parameters unchanged and history cleared.
    Rejected,
}

#[derive(Debug, Clone)]
pub struct Lbfgs {
    config: LbfgsConfig,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Lbfgs {
    pub fn new(config: LbfgsConfig) -> Result<Self> {
        if config.memory == 0 || !(config.step > 0.0) {
            return Err(Error::Invalid("L-BFGS needs memory >= 1 and a positive step".into()));
        }
        Ok(Self { config, pairs: VecDeque::new(), iterations: 0 })
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn history_len(&self) -> usize {
        self.pairs.len()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Two-loop recursion. With no curvature pairs the result is the
    /// steepest-descent direction scaled to at most unit length.
    pub fn direction(&self, grad: &[f64]) -> Vec<f64> {
        let mut q = grad.to_vec();
        if self.pairs.is_empty() {
            let norm = dot(grad, grad).sqrt();
            let scale = if norm > 1.0 { 1.0 / norm } else { 1.0 };
            return q.iter().map(|g| -scale * g).collect();
        }
        let mut alpha = vec![0.0; self.pairs.len()];
        for (k, (s, y, rho)) in self.pairs.iter().enumerate().rev() {
            alpha[k] = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= alpha[k] * yi);
        }
        let (s, y, _) = self.pairs.back().unwrap();
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
        for (k, (s, y, rho)) in self.pairs.iter().enumerate() {
            let beta = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (alpha[k] - beta) * si);
        }
        q.iter().map(|v| -v).collect()
    }

    /// One iteration from `x` with loss `f` and gradient `g`. On acceptance
    /// `x`, `f` and `g` hold the new point.
    pub fn step<F>(&mut self, x: &mut Vec<f64>, f: &mut f64, g: &mut Vec<f64>, mut eval: F) -> Result<StepOutcome>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i, context: "L-BFGS gradient".into() });
        }
        self.iterations += 1;
        let mut d = self.direction(g);
        let mut slope = dot(g, &d);
        if !(slope < 0.0) {
            self.pairs.clear();
            d = self.direction(g);
            slope = dot(g, &d);
            if !(slope < 0.0) {
                return Ok(StepOutcome::Rejected);
            }
        }
        let mut t = self.config.step;
        for halvings in 0..=self.config.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            let (ft, gt) = eval(&trial)?;
            if ft.is_finite() && ft <= *f + self.config.c1 * t * slope && gt.iter().all(|v| v.is_finite()) {
                let s: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = gt.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 0.0 {
                    if self.pairs.len() == self.config.memory {
                        self.pairs.pop_front();
                    }
                    self.pairs.push_back((s, y, 1.0 / sy));
                }
                *x = trial;
                *f = ft;
                *g = gt;
                return Ok(StepOutcome::Accepted { halvings });
            }
            t *= 0.5;
        }
        self.pairs.clear();
        Ok(StepOutcome::Rejected)
    }
}

/// Runs up to `iterations` steps; a rejected step after a cleared history
/// is retried once as steepest descent before stopping.
pub fn minimize<F>(x: &mut Vec<f64>, config: LbfgsConfig, iterations: usize, mut eval: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut opt = Lbfgs::new(config)?;
    let (mut f, mut g) = eval(x)?;
    let mut history = vec![f];
    for it in 0..iterations {
        let had_history = opt.history_len() > 0;
        match opt.step(x, &mut f, &mut g, &mut eval)? {
            StepOutcome::Accepted { .. } => history.push(f),
            StepOutcome::Rejected if had_history => {
                log::warn!("iteration {}: line search failed, falling back to a gradient step", it + 1);
                match opt.step(x, &mut f, &mut g, &mut eval)? {
                    StepOutcome::Accepted { .. } => history.push(f),
                    StepOutcome::Rejected => break,
                }
            }
            StepOutcome::Rejected => break,
        }
        if (it + 1) % 100 == 0 {
            log::info!("iteration {:>5}  loss {:.6e}", it + 1, f);
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(p: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (x, y) = (p[0], p[1]);
        let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
        let g = vec![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)];
        Ok((f, g))
    }

    #[test]
    fn quadratic_bowl_converges_fast() {
        let mut x = vec![3.0, -4.0, 1.5, 0.25];
        let mut opt = Lbfgs::new(LbfgsConfig::default()).unwrap();
        let eval = |p: &[f64]| Ok((0.5 * dot(p, p), p.to_vec()));
        let (mut f, mut g) = eval(&x).unwrap();
        let mut iters = 0;
        while dot(&x, &x).sqrt() > 1e-10 {
            opt.step(&mut x, &mut f, &mut g, eval).unwrap();
            iters += 1;
            assert!(iters <= 10);
        }
    }

    #[test]
    fn first_direction_is_scaled_steepest_descent() {
        let opt = Lbfgs::new(LbfgsConfig::default()).unwrap();
        let d = opt.direction(&[3.0, 4.0]);
        assert!((d[0] + 0.6).abs() < 1e-15 && (d[1] + 0.8).abs() < 1e-15);
        assert_eq!(opt.direction(&[0.3, -0.4]), vec![-0.3, 0.4]);
    }

    #[test]
    fn rosenbrock_beats_gradient_descent() {
        let mut x = vec![-1.2, 1.0];
        let hist = minimize(&mut x, LbfgsConfig::default(), 200, rosenbrock).unwrap();
        let hit = hist.iter().position(|f| *f < 1e-6).expect("L-BFGS did not reach 1e-6 in 200 iterations");

        // backtracking gradient descent with the same acceptance rule
        let mut y = vec![-1.2, 1.0];
        let (mut f, mut g) = rosenbrock(&y).unwrap();
        let mut gd_iters = 0;
        while f >= 1e-6 && gd_iters < 100 * hit.max(1) {
            let d: Vec<f64> = g.iter().map(|v| -v).collect();
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                let (ft, gt) = rosenbrock(&trial).unwrap();
                if ft <= f - 1e-4 * t * dot(&g, &g) {
                    y = trial;
                    f = ft;
                    g = gt;
                    break;
                }
                t *= 0.5;
            }
            gd_iters += 1;
        }
        assert!(gd_iters >= 10 * hit, "gradient descent {gd_iters} vs L-BFGS {hit}");
    }

    #[test]
    fn failed_search_clears_history() {
        let mut opt = Lbfgs::new(LbfgsConfig { max_halvings: 2, ..Default::default() }).unwrap();
        let mut x = vec![1.0];
        let (mut f, mut g) = (0.5, vec![1.0]);
        let eval = |p: &[f64]| Ok((0.5 * p[0] * p[0], vec![p[0]]));
        opt.step(&mut x, &mut f, &mut g, eval).unwrap();
        assert!(opt.history_len() > 0 || x[0] == 0.0);
        let before = x.clone();
        let out = opt.step(&mut x, &mut f, &mut g, |_| Ok((f64::INFINITY, vec![0.0]))).unwrap();
        assert_eq!(out, StepOutcome::Rejected);
        assert_eq!(x, before);
        assert_eq!(opt.history_len(), 0);
    }
}
