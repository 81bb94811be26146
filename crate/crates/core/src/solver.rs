//! Fixed-step RK4 integration with dense save points and a discrete adjoint
//! of the unrolled scheme.
//!
//! The forward pass records every stage state on a [`Tape`]. The reverse
//! pass walks the tape backwards and propagates cotangents through the exact
//! arithmetic of each RK4 step, so gradients are those of the implemented
//! map (up to round-off) and agree with finite differences of it.

use crate::beam::BeamSystem;
use crate::error::{Error, Result};
use crate::field::DisplacementField;

/// Time interval covered by one integrator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInterval {
    pub start: f64,
    pub end: f64,
}

impl StepInterval {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

/// A first-order system `dy/dt = f(t, y)`.
///
/// `step` is the integrator step the stage belongs to; systems with
/// piecewise-constant forcing use it to pick the one-sided value.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn eval(&self, step: StepInterval, t: f64, y: &[f64], dy: &mut [f64]);
    /// Times at which the forcing is discontinuous; steps never straddle them.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// A system whose right-hand side admits vector-Jacobian products with
/// respect to both the state and a flat parameter vector.
pub trait AdjointSystem: OdeSystem {
    fn n_params(&self) -> usize;
    /// Identifies the parameter values a tape was recorded with.
    fn fingerprint(&self) -> u64;
    /// Accumulates `(∂f/∂y)ᵀ·cot` into `y_bar` and `(∂f/∂θ)ᵀ·cot` into `p_bar`.
    fn vjp(&self, step: StepInterval, t: f64, y: &[f64], cot: &[f64], y_bar: &mut [f64], p_bar: &mut [f64]);
}

/// How the internal step is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepControl {
    /// Stability-bound step scaled by `safety`.
    Auto { safety: f64 },
    /// Requested maximum step; rounded down so it divides each save interval.
    Fixed(f64),
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl::Auto { safety: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub t_end: f64,
    pub n_save: usize,
    pub step: StepControl,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { t_end: 0.045, n_save: 160, step: StepControl::default() }
    }
}

impl SolverConfig {
    pub fn save_spacing(&self) -> f64 {
        self.t_end / self.n_save as f64
    }

    /// Same save spacing over `multiplier` times the window.
    pub fn extended(&self, multiplier: usize) -> Self {
        Self { t_end: self.t_end * multiplier as f64, n_save: self.n_save * multiplier, step: self.step }
    }

    /// Resolves the step size for `system` and lays out the step schedule.
    pub fn time_grid(&self, system: &BeamSystem) -> Result<TimeGrid> {
        let h = match self.step {
            StepControl::Auto { safety } => estimate_stable_step(system, safety)?,
            StepControl::Fixed(h) => h,
        };
        TimeGrid::new(self.t_end, self.n_save, h, &system.breakpoints())
    }
}

/// RK4 stability limit on the imaginary axis.
pub const RK4_IMAGINARY_STABILITY: f64 = 2.8;

const POWER_MIN_ITERS: usize = 50;
const POWER_MAX_ITERS: usize = 20_000;
const POWER_TOL: f64 = 1e-9;

/// Dominant eigenvalue of the stiffness operator by power iteration.
pub fn dominant_stiffness_eigenvalue(system: &BeamSystem) -> Result<f64> {
    let k = system.stiffness();
    let n = k.dim();
    // start near the highest-frequency mode
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            s * (std::f64::consts::PI * (i + 1) as f64 / (n + 1) as f64).sin() + 1e-3 * i as f64
        })
        .collect();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nx = norm(&x);
    x.iter_mut().for_each(|a| *a /= nx);
    let mut y = vec![0.0; n];
    let mut prev = 0.0;
    for it in 0..POWER_MAX_ITERS {
        k.matvec(&x, &mut y);
        // Rayleigh-type estimate with sign, robust to slowly rotating vectors
        let lambda: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ny = norm(&y);
        if !(ny.is_finite() && ny > 0.0) {
            return Err(Error::Estimation(format!("operator iterate became {ny}")));
        }
        for (a, b) in x.iter_mut().zip(&y) {
            *a = b / ny;
        }
        if it >= POWER_MIN_ITERS && (lambda - prev).abs() <= POWER_TOL * lambda.abs() {
            return Ok(lambda.max(ny));
        }
        prev = lambda;
    }
    Err(Error::Estimation(format!(
        "power iteration did not converge in {POWER_MAX_ITERS} iterations; supply a fixed step"
    )))
}

/// Largest RK4 step that keeps the undamped spectrum inside the stability
/// region, scaled by `safety`.
pub fn estimate_stable_step(system: &BeamSystem, safety: f64) -> Result<f64> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::Invalid(format!("safety factor must be in (0, 1], got {safety}")));
    }
    let lambda = dominant_stiffness_eigenvalue(system)?;
    if lambda <= 0.0 {
        return Err(Error::Estimation(format!("non-positive dominant eigenvalue {lambda}")));
    }
    Ok(safety * RK4_IMAGINARY_STABILITY / lambda.sqrt())
}

/// Step schedule: save times are hit exactly and no step straddles a breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    steps: Vec<StepInterval>,
    save_times: Vec<f64>,
    // number of completed steps when save point s is reached
    save_steps: Vec<usize>,
    h_max: f64,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_save: usize, h_max: f64, breakpoints: &[f64]) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::Invalid(format!("t_end must be positive, got {t_end}")));
        }
        if n_save == 0 {
            return Err(Error::Invalid("need at least one save point".into()));
        }
        if !(h_max.is_finite() && h_max > 0.0) {
            return Err(Error::Invalid(format!("step must be positive, got {h_max}")));
        }
        let save_times: Vec<f64> = (0..=n_save).map(|s| s as f64 * t_end / n_save as f64).collect();
        let spacing = t_end / n_save as f64;
        let per_interval = ((spacing / h_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        if per_interval > 10_000_000 {
            return Err(Error::Invalid(format!("step {h_max} too small for save spacing {spacing}")));
        }

        let mut steps = Vec::with_capacity(n_save * per_interval + 2);
        let mut save_steps = vec![0];
        for s in 0..n_save {
            let (a, b) = (save_times[s], save_times[s + 1]);
            let tol = 1e-9 * (b - a);
            let mut cuts: Vec<f64> = breakpoints
                .iter()
                .copied()
                .filter(|&t| t > a + tol && t < b - tol)
                .collect();
            cuts.sort_by(f64::total_cmp);
            let mut edges = vec![a];
            edges.extend(cuts);
            edges.push(b);
            for piece in edges.windows(2) {
                let len = piece[1] - piece[0];
                let m = if edges.len() == 2 {
                    per_interval
                } else {
                    ((len / h_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize
                };
                let h = len / m as f64;
                for k in 0..m {
                    let start = piece[0] + k as f64 * h;
                    let end = if k + 1 == m { piece[1] } else { piece[0] + (k + 1) as f64 * h };
                    steps.push(StepInterval { start, end });
                }
            }
            save_steps.push(steps.len());
        }
        Ok(Self { steps, save_times, save_steps, h_max })
    }

    pub fn steps(&self) -> &[StepInterval] {
        &self.steps
    }
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }
    pub fn save_times(&self) -> &[f64] {
        &self.save_times
    }
    pub fn n_save(&self) -> usize {
        self.save_times.len() - 1
    }
    pub fn t_end(&self) -> f64 {
        *self.save_times.last().unwrap()
    }
    /// Step bound the schedule was laid out with.
    pub fn step_bound(&self) -> f64 {
        self.h_max
    }
    /// Largest step in the schedule.
    pub fn max_step(&self) -> f64 {
        self.steps.iter().map(StepInterval::len).fold(0.0, f64::max)
    }
}

/// Saved states at the save times, row `s` holding the full state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }
    pub fn state(&self, s: usize) -> &[f64] {
        &self.states[s]
    }
    pub fn dim(&self) -> usize {
        self.states[0].len()
    }
    pub fn n_save(&self) -> usize {
        self.times.len() - 1
    }

    /// Displacement half of the state (first `dim/2` components) at every save point.
    pub fn displacement(&self) -> DisplacementField {
        let n = self.dim() / 2;
        let values = self.states.iter().flat_map(|s| s[..n].iter().copied()).collect();
        DisplacementField::new(self.times.clone(), n, values).expect("consistent trajectory")
    }
}

/// Everything the reverse sweep needs from a forward solve.
#[derive(Debug, Clone)]
pub struct Tape {
    grid: TimeGrid,
    dim: usize,
    // stage states Y1..Y4 of every step, step-major
    stages: Vec<f64>,
    final_state: Vec<f64>,
    fingerprint: u64,
}

impl Tape {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn stage(&self, step: usize, i: usize) -> &[f64] {
        let off = (step * 4 + i) * self.dim;
        &self.stages[off..off + self.dim]
    }

    /// Recomputes the saved states from the recorded stage states.
    pub fn replay<S: OdeSystem + ?Sized>(&self, system: &S) -> Result<Vec<Vec<f64>>> {
        if system.dim() != self.dim {
            return Err(Error::StaleTape("dimension differs from recorded system".into()));
        }
        let d = self.dim;
        let mut k = vec![vec![0.0; d]; 4];
        let mut out = vec![self.stage(0, 0).to_vec()];
        let mut next_save = 1;
        for (m, step) in self.grid.steps.iter().enumerate() {
            let h = step.len();
            let times = [step.start, step.start + 0.5 * h, step.start + 0.5 * h, step.end];
            for i in 0..4 {
                system.eval(*step, times[i], self.stage(m, i), &mut k[i]);
            }
            let y = self.stage(m, 0);
            let y_next: Vec<f64> = (0..d)
                .map(|j| y[j] + h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]))
                .collect();
            while next_save < self.grid.save_steps.len() && self.grid.save_steps[next_save] == m + 1 {
                out.push(y_next.clone());
                next_save += 1;
            }
        }
        Ok(out)
    }
}

/// Integrates from `y0` over `grid` with classical RK4, recording a tape.
pub fn integrate<S: AdjointSystem + ?Sized>(system: &S, y0: &[f64], grid: &TimeGrid) -> Result<(Trajectory, Tape)> {
    let mut stages = Vec::with_capacity(grid.n_steps() * 4 * system.dim());
    let traj = run_rk4(system, y0, grid, Some(&mut stages))?;
    let tape = Tape {
        grid: grid.clone(),
        dim: system.dim(),
        stages,
        final_state: traj.states.last().unwrap().clone(),
        fingerprint: system.fingerprint(),
    };
    Ok((traj, tape))
}

/// Forward solve without recording a tape.
pub fn solve<S: OdeSystem + ?Sized>(system: &S, y0: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
    run_rk4(system, y0, grid, None)
}

fn run_rk4<S: OdeSystem + ?Sized>(
    system: &S,
    y0: &[f64],
    grid: &TimeGrid,
    mut record: Option<&mut Vec<f64>>,
) -> Result<Trajectory> {
    let d = system.dim();
    if y0.len() != d {
        return Err(Error::Shape(format!("initial state has {} entries, system has {d}", y0.len())));
    }
    if let Some(i) = y0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: i, context: "initial state".into() });
    }
    let mut y = y0.to_vec();
    let mut tmp = vec![0.0; d];
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut states = Vec::with_capacity(grid.n_save() + 1);
    states.push(y.clone());
    let mut next_save = 1;

    for (m, step) in grid.steps.iter().enumerate() {
        let h = step.len();
        let t = step.start;
        let th = t + 0.5 * h;
        if let Some(rec) = record.as_deref_mut() {
            rec.extend_from_slice(&y);
        }
        system.eval(*step, t, &y, &mut k1);
        for j in 0..d {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.extend_from_slice(&tmp);
        }
        system.eval(*step, th, &tmp, &mut k2);
        for j in 0..d {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.extend_from_slice(&tmp);
        }
        system.eval(*step, th, &tmp, &mut k3);
        for j in 0..d {
            tmp[j] = y[j] + h * k3[j];
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.extend_from_slice(&tmp);
        }
        system.eval(*step, step.end, &tmp, &mut k4);
        for j in 0..d {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: m, time: step.end });
        }
        while next_save < grid.save_steps.len() && grid.save_steps[next_save] == m + 1 {
            states.push(y.clone());
            next_save += 1;
        }
    }
    Ok(Trajectory { times: grid.save_times.clone(), states })
}

/// Weight on one saved state component: the loss is Σ weight·y_component(save).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleCotangent {
    pub component: usize,
    pub save: usize,
    pub weight: f64,
}

/// Gradient of `Σ weight·y[component](save)` with respect to the system
/// parameters, by reverse sweep over the recorded RK4 stages.
pub fn adjoint_gradients<S: AdjointSystem + ?Sized>(
    tape: &Tape,
    system: &S,
    cotangents: &[SampleCotangent],
) -> Result<Vec<f64>> {
    if system.fingerprint() != tape.fingerprint || system.dim() != tape.dim {
        return Err(Error::StaleTape("tape was recorded with different parameters".into()));
    }
    let d = tape.dim;
    let grid = &tape.grid;
    let n_save = grid.n_save();
    let mut seeds: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_save + 1];
    for c in cotangents {
        if c.save > n_save || c.component >= d {
            return Err(Error::Shape(format!(
                "cotangent at (component {}, save {}) outside {d} x {n_save}",
                c.component, c.save
            )));
        }
        if !c.weight.is_finite() {
            return Err(Error::NonFinite { index: c.component, context: "cotangent weight".into() });
        }
        seeds[c.save].push((c.component, c.weight));
    }

    let mut p_bar = vec![0.0; system.n_params()];
    let mut lam = vec![0.0; d];
    let mut kbar = vec![0.0; d];
    let mut ybar = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut save = n_save;

    for m in (0..grid.n_steps()).rev() {
        while save > 0 && grid.save_steps[save] == m + 1 {
            for &(j, w) in &seeds[save] {
                lam[j] += w;
            }
            save -= 1;
        }
        let step = grid.steps[m];
        let h = step.len();
        let t = step.start;
        let th = t + 0.5 * h;

        // k4 = f(Y4), Y4 = y + h k3
        for j in 0..d {
            kbar[j] = h / 6.0 * lam[j];
        }
        ybar[3].iter_mut().for_each(|v| *v = 0.0);
        system.vjp(step, step.end, tape.stage(m, 3), &kbar, &mut ybar[3], &mut p_bar);
        // k3 = f(Y3), Y3 = y + h/2 k2
        for j in 0..d {
            kbar[j] = h / 3.0 * lam[j] + h * ybar[3][j];
        }
        ybar[2].iter_mut().for_each(|v| *v = 0.0);
        system.vjp(step, th, tape.stage(m, 2), &kbar, &mut ybar[2], &mut p_bar);
        // k2 = f(Y2), Y2 = y + h/2 k1
        for j in 0..d {
            kbar[j] = h / 3.0 * lam[j] + 0.5 * h * ybar[2][j];
        }
        ybar[1].iter_mut().for_each(|v| *v = 0.0);
        system.vjp(step, th, tape.stage(m, 1), &kbar, &mut ybar[1], &mut p_bar);
        // k1 = f(Y1), Y1 = y
        for j in 0..d {
            kbar[j] = h / 6.0 * lam[j] + 0.5 * h * ybar[1][j];
        }
        ybar[0].iter_mut().for_each(|v| *v = 0.0);
        system.vjp(step, t, tape.stage(m, 0), &kbar, &mut ybar[0], &mut p_bar);

        for j in 0..d {
            lam[j] += ybar[0][j] + ybar[1][j] + ybar[2][j] + ybar[3][j];
        }
    }
    Ok(p_bar)
}

/// Beam-specific split of the adjoint gradient into (dL/dP, dL/dC).
pub fn beam_adjoint_gradients(
    tape: &Tape,
    system: &BeamSystem,
    cotangents: &[SampleCotangent],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = system.n();
    if let Some(c) = cotangents.iter().find(|c| c.component >= n) {
        return Err(Error::Shape(format!("cotangent component {} is not a displacement", c.component)));
    }
    let mut g = adjoint_gradients(tape, system, cotangents)?;
    let dc = g.split_off(n + 2);
    Ok((g, dc))
}

impl Tape {
    pub fn final_state(&self) -> &[f64] {
        &self.final_state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beam::{build_operators, ground_truth_fields, BeamSpec, LoadModel, ParameterField, SpatialGrid};
    use approx::assert_relative_eq;

    /// y' = -θ y
    struct Decay {
        theta: f64,
    }

    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, _: StepInterval, _: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -self.theta * y[0];
        }
    }

    impl AdjointSystem for Decay {
        fn n_params(&self) -> usize {
            1
        }
        fn fingerprint(&self) -> u64 {
            self.theta.to_bits()
        }
        fn vjp(&self, _: StepInterval, _: f64, y: &[f64], cot: &[f64], yb: &mut [f64], pb: &mut [f64]) {
            yb[0] += -self.theta * cot[0];
            pb[0] += -y[0] * cot[0];
        }
    }

    #[test]
    fn single_rk4_step_matches_taylor_polynomial() {
        let grid = TimeGrid::new(0.1, 1, 0.1, &[]).unwrap();
        let traj = solve(&Decay { theta: 1.0 }, &[1.0], &grid).unwrap();
        let y = traj.state(1)[0];
        // 1 - h + h²/2 - h³/6 + h⁴/24
        assert_relative_eq!(y, 0.904_837_5, max_relative = 1e-12);
        assert!((y - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn time_grid_hits_saves_and_breakpoints() {
        let g = TimeGrid::new(0.045, 160, 3e-5, &[0.02]).unwrap();
        assert_eq!(g.n_save(), 160);
        assert_relative_eq!(g.save_times()[1], 2.8125e-4, max_relative = 1e-15);
        assert!(g.steps().iter().any(|s| s.end == 0.02));
        assert!(g.steps().iter().all(|s| !(s.start < 0.02 && s.end > 0.02)));
        assert!(g.max_step() <= 3e-5 * (1.0 + 1e-12));
        for (s, &k) in g.save_steps.iter().enumerate().skip(1) {
            assert_eq!(g.steps()[k - 1].end, g.save_times()[s]);
        }
        for w in g.steps().windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
    }

    #[test]
    fn scalar_adjoint_matches_closed_form() {
        // y(T) for RK4 with N steps is R(-θh)^N; d/dθ via finite differences
        let grid = TimeGrid::new(1.0, 4, 0.05, &[]).unwrap();
        let sys = Decay { theta: 0.7 };
        let (_, tape) = integrate(&sys, &[1.0], &grid).unwrap();
        let cot = [SampleCotangent { component: 0, save: 4, weight: 1.0 }, SampleCotangent { component: 0, save: 2, weight: -0.5 }];
        let g = adjoint_gradients(&tape, &sys, &cot).unwrap()[0];
        let f = |th: f64| {
            let tr = solve(&Decay { theta: th }, &[1.0], &grid).unwrap();
            tr.state(4)[0] - 0.5 * tr.state(2)[0]
        };
        let eps = 1e-6;
        let fd = (f(0.7 + eps) - f(0.7 - eps)) / (2.0 * eps);
        assert_relative_eq!(g, fd, max_relative = 1e-8);
    }

    #[test]
    fn stale_tape_is_rejected() {
        let grid = TimeGrid::new(1.0, 2, 0.1, &[]).unwrap();
        let (_, tape) = integrate(&Decay { theta: 1.0 }, &[1.0], &grid).unwrap();
        let err = adjoint_gradients(&tape, &Decay { theta: 1.1 }, &[]).unwrap_err();
        assert!(matches!(err, Error::StaleTape(_)));
    }

    fn beam(n: usize, fields: Option<ParameterField>, load: LoadModel) -> BeamSystem {
        let spec = BeamSpec::default();
        let grid = SpatialGrid::for_beam(&spec, n).unwrap();
        let ops = build_operators(&grid).unwrap();
        let f = fields.unwrap_or_else(|| ground_truth_fields(&spec, &grid).unwrap());
        BeamSystem::new(spec, ops, f, load).unwrap()
    }

    #[test]
    fn zero_load_stays_at_rest() {
        let sys = beam(16, None, LoadModel { amplitude: 0.0, cutoff: 0.02 });
        let grid = SolverConfig::default().time_grid(&sys).unwrap();
        let traj = solve(&sys, &[0.0; 32], &grid).unwrap();
        assert!(traj.states().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn tape_replay_is_bit_exact() {
        let sys = beam(8, None, LoadModel::default());
        let cfg = SolverConfig { t_end: 0.03, n_save: 20, step: StepControl::default() };
        let grid = cfg.time_grid(&sys).unwrap();
        let (traj, tape) = integrate(&sys, &[0.0; 16], &grid).unwrap();
        let replayed = tape.replay(&sys).unwrap();
        assert_eq!(replayed.len(), traj.states().len());
        for (a, b) in replayed.iter().zip(traj.states()) {
            assert_eq!(a, b);
        }
        assert_eq!(tape.final_state(), traj.states().last().unwrap().as_slice());
    }

    #[test]
    fn divergence_is_reported() {
        let sys = beam(16, None, LoadModel::default());
        let h = estimate_stable_step(&sys, 1.0).unwrap();
        let grid = TimeGrid::new(0.045, 160, 1.6 * h, &[0.02]).unwrap();
        match solve(&sys, &[0.0; 32], &grid) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn stable_step_scales_with_p() {
        let a = beam(16, Some(ParameterField::uniform(16, 1.0, 0.0).unwrap()), LoadModel::default());
        let b = beam(16, Some(ParameterField::uniform(16, 4.0, 0.0).unwrap()), LoadModel::default());
        let ha = estimate_stable_step(&a, 0.5).unwrap();
        let hb = estimate_stable_step(&b, 0.5).unwrap();
        assert_relative_eq!(ha / hb, 2.0, max_relative = 1e-6);
        assert!(estimate_stable_step(&a, 0.0).is_err());
    }

    #[test]
    fn eigenvalue_scales_with_grid_refinement() {
        let one = ParameterField::uniform(16, 1.0, 0.0).unwrap();
        let l16 = dominant_stiffness_eigenvalue(&beam(16, Some(one), LoadModel::default())).unwrap();
        let one = ParameterField::uniform(32, 1.0, 0.0).unwrap();
        let l32 = dominant_stiffness_eigenvalue(&beam(32, Some(one), LoadModel::default())).unwrap();
        // dx ratio 17/33 -> (33/17)^4 ≈ 14.2; symbol max moves closer to 16
        let ratio = l32 / l16;
        assert!(ratio > 14.0 && ratio < 16.5, "ratio {ratio}");
    }

    #[test]
    fn cotangent_bounds_are_checked() {
        let sys = beam(8, None, LoadModel::default());
        let cfg = SolverConfig { t_end: 0.005, n_save: 4, step: StepControl::default() };
        let grid = cfg.time_grid(&sys).unwrap();
        let (_, tape) = integrate(&sys, &[0.0; 16], &grid).unwrap();
        let bad = [SampleCotangent { component: 0, save: 5, weight: 1.0 }];
        assert!(adjoint_gradients(&tape, &sys, &bad).is_err());
        let velocity = [SampleCotangent { component: 9, save: 1, weight: 1.0 }];
        assert!(beam_adjoint_gradients(&tape, &sys, &velocity).is_err());
        let (dp, dc) = beam_adjoint_gradients(&tape, &sys, &[]).unwrap();
        assert!(dp.iter().chain(&dc).all(|v| *v == 0.0));
    }
}
