//! A dense network u(x, t) on normalised inputs, fitted to displacement
//! samples alone (DNN) or with added PDE-residual and boundary terms (PINN).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::jet::{jet_backward, jet_forward, StarLayout};
use super::lbfgs::{minimize, LbfgsConfig};
use crate::beam::{BeamSpec, LoadModel, TruthProfile};
use crate::error::{Error, Result};
use crate::field::DisplacementField;
use crate::net::{Activation, DenseStack};
use crate::problem::BeamProblem;
use crate::trainer::{subgradient_at_ties, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataLoss {
    Mae,
    Mse,
}

impl DataLoss {
    pub fn name(self) -> &'static str {
        match self {
            DataLoss::Mae => "mae",
            DataLoss::Mse => "mse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(DataLoss::Mae),
            "mse" => Ok(DataLoss::Mse),
            _ => Err(Error::Invalid(format!("unknown data loss {s:?} (expected mae or mse)"))),
        }
    }
}

/// Stiffness and damping assumed by the PINN residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualFields {
    Truth(TruthProfile),
    Constant { p: f64, c: f64 },
}

impl ResidualFields {
    /// (P, P', P'', C) at `x`.
    fn at(&self, x: f64, length: f64) -> (f64, f64, f64, f64) {
        match *self {
            ResidualFields::Truth(t) => (t.p(x, length), t.dp_dx(x, length), t.d2p_dx2(x, length), t.c(x, length)),
            ResidualFields::Constant { p, c } => (p, 0.0, 0.0, c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinnLoss {
    pub w_data: f64,
    pub w_pde: f64,
    pub w_bc: f64,
    /// Residual lattice size along x and t.
    pub n_x: usize,
    pub n_t: usize,
    pub fields: ResidualFields,
}

impl Default for PinnLoss {
    fn default() -> Self {
        Self { w_data: 1.0, w_pde: 1.0, w_bc: 1.0, n_x: 32, n_t: 64, fields: ResidualFields::Truth(TruthProfile::default()) }
    }
}

impl PinnLoss {
    pub fn data_only() -> Self {
        Self { w_pde: 0.0, w_bc: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.w_data, self.w_pde, self.w_bc];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Invalid(format!("loss weights must be finite and non-negative, got {w:?}")));
        }
        if self.n_x == 0 || self.n_t == 0 {
            return Err(Error::Invalid("collocation lattice must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub width: usize,
    pub n_layers: usize,
    /// Multiply the output by x̂(1 - x̂) so u vanishes at the supports.
    pub hard_boundary: bool,
    pub data_loss: DataLoss,
    pub lbfgs: LbfgsConfig,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { width: 20, n_layers: 5, hard_boundary: false, data_loss: DataLoss::Mae, lbfgs: LbfgsConfig::default(), seed: 0 }
    }
}

/// u(x, t) = U·N(x/L, t/T), optionally times x̂(1 - x̂).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    stack: DenseStack,
    length: f64,
    t_scale: f64,
    u_scale: f64,
    hard_boundary: bool,
}

/// Loss terms of one evaluation, before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub data: f64,
    pub pde: f64,
    pub bc: f64,
}

impl RegressorModel {
    pub fn new(cfg: &BaselineConfig, length: f64, t_scale: f64, u_scale: f64) -> Result<Self> {
        if cfg.n_layers < 2 || cfg.width == 0 {
            return Err(Error::Invalid("regressor needs at least 2 layers and a positive width".into()));
        }
        if ![length, t_scale, u_scale].iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::Invalid(format!("scales must be positive: L {length}, T {t_scale}, U {u_scale}")));
        }
        let mut dims = vec![2];
        dims.extend(std::iter::repeat(cfg.width).take(cfg.n_layers - 1));
        dims.push(1);
        let stack = DenseStack::glorot(&dims, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
        Ok(Self { stack, length, t_scale, u_scale, hard_boundary: cfg.hard_boundary })
    }

    pub fn from_parts(stack: DenseStack, length: f64, t_scale: f64, u_scale: f64, hard_boundary: bool) -> Result<Self> {
        if stack.n_inputs() != 2 || stack.n_outputs() != 1 {
            return Err(Error::Shape(format!("regressor needs dims 2 -> .. -> 1, got {:?}", stack.dims())));
        }
        Ok(Self { stack, length, t_scale, u_scale, hard_boundary })
    }

    pub fn stack(&self) -> &DenseStack {
        &self.stack
    }
    pub fn stack_mut(&mut self) -> &mut DenseStack {
        &mut self.stack
    }
    pub fn length(&self) -> f64 {
        self.length
    }
    pub fn t_scale(&self) -> f64 {
        self.t_scale
    }
    pub fn u_scale(&self) -> f64 {
        self.u_scale
    }
    pub fn hard_boundary(&self) -> bool {
        self.hard_boundary
    }

    fn normalise(&self, x: f64, t: f64) -> [f64; 2] {
        [x / self.length, t / self.t_scale]
    }

    /// Jets of the normalised output O (u = U·O) at normalised points.
    fn output_jets(&self, pts: &[[f64; 2]], layout: StarLayout) -> Result<(Vec<f64>, super::jet::JetTape)> {
        let (mut out, tape) = jet_forward(&self.stack, pts, layout)?;
        if self.hard_boundary {
            let nc = layout.len();
            for (p, pt) in pts.iter().enumerate() {
                let o = boundary_product(layout, pt[0], &out[p * nc..(p + 1) * nc]);
                out[p * nc..(p + 1) * nc].copy_from_slice(&o);
            }
        }
        Ok((out, tape))
    }

    fn output_backward(&self, pts: &[[f64; 2]], tape: &super::jet::JetTape, out_bar: &[f64]) -> Result<Vec<f64>> {
        if !self.hard_boundary {
            return jet_backward(&self.stack, tape, out_bar);
        }
        let layout = tape.layout();
        let nc = layout.len();
        let mut nbar = vec![0.0; out_bar.len()];
        for (p, pt) in pts.iter().enumerate() {
            let b = boundary_product_backward(layout, pt[0], &out_bar[p * nc..(p + 1) * nc]);
            nbar[p * nc..(p + 1) * nc].copy_from_slice(&b);
        }
        jet_backward(&self.stack, tape, &nbar)
    }

    /// Displacement (m) at physical coordinates.
    pub fn predict(&self, x: f64, t: f64) -> Result<f64> {
        let (o, _) = self.output_jets(&[self.normalise(x, t)], StarLayout::VALUE)?;
        Ok(self.u_scale * o[0])
    }

    /// Field on the given nodes and times, rows are times.
    pub fn predict_field(&self, xs: &[f64], times: &[f64]) -> Result<DisplacementField> {
        let pts: Vec<[f64; 2]> = times.iter().flat_map(|&t| xs.iter().map(move |&x| (x, t))).map(|(x, t)| self.normalise(x, t)).collect();
        let (o, _) = self.output_jets(&pts, StarLayout::VALUE)?;
        DisplacementField::new(times.to_vec(), xs.len(), o.iter().map(|v| self.u_scale * v).collect())
    }

    /// x- and t-derivatives of u (m, s) up to orders 4 and 2:
    /// `[u, u_x, u_xx, u_xxx, u_xxxx, u_t, u_tt]`.
    pub fn derivatives(&self, x: f64, t: f64) -> Result<[f64; 7]> {
        let layout = StarLayout::new(4, 2)?;
        let (o, _) = self.output_jets(&[self.normalise(x, t)], layout)?;
        let mut d = [0.0; 7];
        d[0] = self.u_scale * o[0];
        for k in 1..=4 {
            d[k] = self.u_scale * o[layout.x(k)] * super::jet::factorial(k) / self.length.powi(k as i32);
        }
        for k in 1..=2 {
            d[4 + k] = self.u_scale * o[layout.t(k)] * super::jet::factorial(k) / self.t_scale.powi(k as i32);
        }
        Ok(d)
    }
}

/// Star-jet product with g(x̂) = x̂(1 - x̂), whose x-jet is [g, 1 - 2x̂, -1].
fn boundary_product(layout: StarLayout, xh: f64, n: &[f64]) -> Vec<f64> {
    let g = [xh * (1.0 - xh), 1.0 - 2.0 * xh, -1.0];
    let mut o = vec![0.0; n.len()];
    o[0] = g[0] * n[0];
    for j in 1..=layout.x_order {
        o[layout.x(j)] = (0..=j.min(2)).map(|i| g[i] * n[layout.x(j - i)]).sum();
    }
    for j in 1..=layout.t_order {
        o[layout.t(j)] = g[0] * n[layout.t(j)];
    }
    o
}

fn boundary_product_backward(layout: StarLayout, xh: f64, obar: &[f64]) -> Vec<f64> {
    let g = [xh * (1.0 - xh), 1.0 - 2.0 * xh, -1.0];
    let mut nb = vec![0.0; obar.len()];
    nb[0] += g[0] * obar[0];
    for j in 1..=layout.x_order {
        for i in 0..=j.min(2) {
            nb[layout.x(j - i)] += g[i] * obar[layout.x(j)];
        }
    }
    for j in 1..=layout.t_order {
        nb[layout.t(j)] += g[0] * obar[layout.t(j)];
    }
    nb
}

/// Residual of the beam equation at (x, t) for the model's field, in N/m:
/// E0·I·(P''·u_xx + 2P'·u_xxx + P·u_xxxx) + ρA·u_tt + C·u_t - F(t).
pub fn pinn_residual(model: &RegressorModel, x: f64, t: f64, fields: &ResidualFields, spec: &BeamSpec, load: &LoadModel) -> Result<f64> {
    let d = model.derivatives(x, t)?;
    let (p, dp, d2p, c) = fields.at(x, spec.length());
    let ei = spec.flexural_rigidity();
    Ok(ei * (d2p * d[2] + 2.0 * dp * d[3] + p * d[4]) + spec.mass_per_length() * d[6] + c * d[5] - load.force_at(t)?)
}

/// Everything a loss evaluation needs besides the parameters.
struct Objective<'a> {
    model: &'a RegressorModel,
    loss: PinnLoss,
    data_loss: DataLoss,
    data_pts: Vec<[f64; 2]>,
    data_targets: Vec<f64>,
    pde_pts: Vec<[f64; 2]>,
    /// Per residual point: coefficients of (O_x2, O_x3, O_x4, O_t1, O_t2) and the forcing, all over q0.
    pde_coef: Vec<([f64; 5], f64)>,
    bc_pts: Vec<[f64; 2]>,
}

impl<'a> Objective<'a> {
    fn new(model: &'a RegressorModel, problem: &BeamProblem, samples: &SampleSet, loss: PinnLoss, data_loss: DataLoss) -> Result<Self> {
        loss.validate()?;
        let spec = *problem.spec();
        let load = *problem.load();
        let xs = problem.grid().interior_coords();
        let times = problem.time_grid().save_times();
        if samples.n_nodes() != xs.len() || samples.n_save() + 1 != times.len() {
            return Err(Error::Shape("sample grid does not match the problem".into()));
        }
        let data_pts = samples.samples().iter().map(|s| model.normalise(xs[s.node], times[s.save])).collect();
        let data_targets = samples.samples().iter().map(|s| s.value / model.u_scale).collect();

        let mut pde_pts = Vec::new();
        let mut pde_coef = Vec::new();
        if loss.w_pde > 0.0 {
            let q0 = load.amplitude.abs();
            if q0 == 0.0 {
                return Err(Error::Invalid("the residual is normalised by the load amplitude, which is zero".into()));
            }
            let (l, tt, u) = (model.length, model.t_scale, model.u_scale);
            let ei = spec.flexural_rigidity();
            let rho_a = spec.mass_per_length();
            for i in 0..loss.n_x {
                for j in 0..loss.n_t {
                    let xh = (i as f64 + 0.5) / loss.n_x as f64;
                    let th = (j as f64 + 0.5) / loss.n_t as f64;
                    let (x, t) = (xh * l, th * tt);
                    let (p, dp, d2p, c) = loss.fields.at(x, l);
                    let k = [
                        ei * d2p * u * 2.0 / l.powi(2) / q0,
                        ei * 2.0 * dp * u * 6.0 / l.powi(3) / q0,
                        ei * p * u * 24.0 / l.powi(4) / q0,
                        c * u / tt / q0,
                        rho_a * u * 2.0 / tt.powi(2) / q0,
                    ];
                    pde_pts.push([xh, th]);
                    pde_coef.push((k, load.force_at(t)? / q0));
                }
            }
        }
        let mut bc_pts = Vec::new();
        if loss.w_bc > 0.0 {
            for j in 0..loss.n_t {
                let th = (j as f64 + 0.5) / loss.n_t as f64;
                bc_pts.push([0.0, th]);
                bc_pts.push([1.0, th]);
            }
        }
        Ok(Self { model, loss, data_loss, data_pts, data_targets, pde_pts, pde_coef, bc_pts })
    }

    /// Weighted loss, its terms and the flat gradient at `params`.
    fn eval(&self, params: &[f64]) -> Result<(f64, LossTerms, Vec<f64>)> {
        let mut m = self.model.clone();
        m.stack.params_mut().copy_from_slice(params);
        let mut grad = vec![0.0; params.len()];
        let mut terms = LossTerms { data: 0.0, pde: 0.0, bc: 0.0 };
        let mut total = 0.0;

        let (o, tape) = m.output_jets(&self.data_pts, StarLayout::VALUE)?;
        let n = o.len() as f64;
        let mut ob = vec![0.0; o.len()];
        for (k, (oi, ti)) in o.iter().zip(&self.data_targets).enumerate() {
            let r = oi - ti;
            match self.data_loss {
                DataLoss::Mae => {
                    terms.data += r.abs() / n;
                    ob[k] = self.loss.w_data * subgradient_at_ties(*oi, *ti) / n;
                }
                DataLoss::Mse => {
                    terms.data += r * r / n;
                    ob[k] = self.loss.w_data * 2.0 * r / n;
                }
            }
        }
        total += self.loss.w_data * terms.data;
        accumulate(&mut grad, &m.output_backward(&self.data_pts, &tape, &ob)?);

        if self.loss.w_pde > 0.0 {
            let layout = StarLayout::new(4, 2)?;
            let nc = layout.len();
            let (o, tape) = m.output_jets(&self.pde_pts, layout)?;
            let n = self.pde_pts.len() as f64;
            let mut ob = vec![0.0; o.len()];
            let slots = [layout.x(2), layout.x(3), layout.x(4), layout.t(1), layout.t(2)];
            for (p, (k, f)) in self.pde_coef.iter().enumerate() {
                let jet = &o[p * nc..(p + 1) * nc];
                let r: f64 = slots.iter().zip(k).map(|(s, c)| c * jet[*s]).sum::<f64>() - f;
                terms.pde += r * r / n;
                let rb = self.loss.w_pde * 2.0 * r / n;
                for (s, c) in slots.iter().zip(k) {
                    ob[p * nc + s] = rb * c;
                }
            }
            total += self.loss.w_pde * terms.pde;
            accumulate(&mut grad, &m.output_backward(&self.pde_pts, &tape, &ob)?);
        }

        if self.loss.w_bc > 0.0 {
            let layout = StarLayout::new(2, 0)?;
            let nc = layout.len();
            let (o, tape) = m.output_jets(&self.bc_pts, layout)?;
            let n = self.bc_pts.len() as f64;
            let mut ob = vec![0.0; o.len()];
            for p in 0..self.bc_pts.len() {
                let v = o[p * nc];
                let curv = 2.0 * o[p * nc + layout.x(2)];
                terms.bc += (v * v + curv * curv) / n;
                ob[p * nc] = self.loss.w_bc * 2.0 * v / n;
                ob[p * nc + layout.x(2)] = self.loss.w_bc * 4.0 * curv / n;
            }
            total += self.loss.w_bc * terms.bc;
            accumulate(&mut grad, &m.output_backward(&self.bc_pts, &tape, &ob)?);
        }
        Ok((total, terms, grad))
    }
}

fn accumulate(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

/// Unweighted loss terms of `model` under `loss`.
pub fn loss_terms(model: &RegressorModel, problem: &BeamProblem, samples: &SampleSet, loss: PinnLoss, data_loss: DataLoss) -> Result<LossTerms> {
    let all = PinnLoss { w_data: 1.0, w_pde: 1.0, w_bc: 1.0, ..loss };
    let obj = Objective::new(model, problem, samples, all, data_loss)?;
    Ok(obj.eval(model.stack.params())?.1)
}

/// Fits `model` with L-BFGS, one iteration per epoch. Returns the loss after
/// each accepted iteration, starting with the initial loss.
pub fn train_pinn(
    model: &mut RegressorModel,
    problem: &BeamProblem,
    samples: &SampleSet,
    loss: PinnLoss,
    cfg: &BaselineConfig,
    iterations: usize,
) -> Result<Vec<f64>> {
    let obj = Objective::new(model, problem, samples, loss, cfg.data_loss)?;
    let mut params = model.stack.params().to_vec();
    let mut evals = 0usize;
    let history = minimize(&mut params, cfg.lbfgs, iterations, |p| {
        evals += 1;
        let (f, _, g) = obj.eval(p)?;
        Ok((f, g))
    })?;
    if history.len() < iterations + 1 {
        log::info!("L-BFGS stopped after {} of {iterations} iterations", history.len() - 1);
    }
    log::debug!("{evals} loss evaluations");
    model.stack.params_mut().copy_from_slice(&params);
    Ok(history)
}

/// Data-only fit: [`train_pinn`] with zero physics weights.
pub fn train_dnn(model: &mut RegressorModel, problem: &BeamProblem, samples: &SampleSet, cfg: &BaselineConfig, iterations: usize) -> Result<Vec<f64>> {
    train_pinn(model, problem, samples, PinnLoss::data_only(), cfg, iterations)
}
