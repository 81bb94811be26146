//! Beam problem definition: constants, parameter fields, load, the
//! boundary-closed finite-difference operators and the semi-discrete
//! right-hand side of the variable-stiffness Euler–Bernoulli equation.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::solver::{AdjointSystem, OdeSystem, StepInterval};

/// Geometry and material constants of a rectangular beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamSpec {
    length: f64,
    width: f64,
    thickness: f64,
    density: f64,
    modulus: f64,
    second_moment: f64,
    area: f64,
}

impl BeamSpec {
    pub fn new(length: f64, width: f64, thickness: f64, density: f64, modulus: f64) -> Result<Self> {
        for (name, v) in [
            ("length", length),
            ("width", width),
            ("thickness", thickness),
            ("density", density),
            ("modulus", modulus),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Invalid(format!("beam {name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            length,
            width,
            thickness,
            density,
            modulus,
            second_moment: width * thickness.powi(3) / 12.0,
            area: width * thickness,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }
    pub fn width(&self) -> f64 {
        self.width
    }
    pub fn thickness(&self) -> f64 {
        self.thickness
    }
    pub fn density(&self) -> f64 {
        self.density
    }
    /// Reference Young's modulus E0 (Pa).
    pub fn modulus(&self) -> f64 {
        self.modulus
    }
    /// Second moment of area b·h³/12 (m⁴).
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }
    /// Cross-section area b·h (m²).
    pub fn area(&self) -> f64 {
        self.area
    }
    /// E0·I (N·m²).
    pub fn flexural_rigidity(&self) -> f64 {
        self.modulus * self.second_moment
    }
    /// ρ·A (kg/m).
    pub fn mass_per_length(&self) -> f64 {
        self.density * self.area
    }
}

impl Default for BeamSpec {
    /// 40 cm × 5 cm × 0.5 cm aluminium strip, E0 = 70 GPa.
    fn default() -> Self {
        Self::new(0.40, 0.05, 0.005, 2700.0, 70.0e9).expect("default beam is valid")
    }
}

/// Uniform grid of interior nodes; the supports at x = 0 and x = L are excluded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    length: f64,
    n_interior: usize,
}

impl SpatialGrid {
    pub fn new(length: f64, n_interior: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::Invalid(format!("grid length must be positive, got {length}")));
        }
        if n_interior == 0 {
            return Err(Error::GridTooSmall { got: 0, min: 1 });
        }
        Ok(Self { length, n_interior })
    }

    pub fn for_beam(spec: &BeamSpec, n_interior: usize) -> Result<Self> {
        Self::new(spec.length(), n_interior)
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }
    pub fn length(&self) -> f64 {
        self.length
    }
    pub fn dx(&self) -> f64 {
        self.length / (self.n_interior + 1) as f64
    }

    /// Coordinate of node `i`, where 0 and n+1 are the supports.
    pub fn node_x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    /// Interior node coordinates x_1..x_n.
    pub fn interior_coords(&self) -> Vec<f64> {
        (1..=self.n_interior).map(|i| self.node_x(i)).collect()
    }

    /// All node coordinates x_0..x_{n+1}, supports included.
    pub fn all_coords(&self) -> Vec<f64> {
        (0..=self.n_interior + 1).map(|i| self.node_x(i)).collect()
    }
}

/// Square matrix with at most two sub- and super-diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    // data[i][k] holds entry (i, i + k - 2)
    data: Vec<[f64; 5]>,
}

impl BandMatrix {
    pub const HALF_BANDWIDTH: usize = 2;

    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![[0.0; 5]; n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let k = j as isize - i as isize + 2;
        if (0..5).contains(&k) {
            self.data[i][k as usize]
        } else {
            0.0
        }
    }

    fn add(&mut self, i: usize, j: usize, value: f64) {
        let k = j as isize - i as isize + 2;
        debug_assert!((0..5).contains(&k));
        self.data[i][k as usize] += value;
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (i, row) in self.data.iter().enumerate() {
            let mut acc = 0.0;
            for (k, a) in row.iter().enumerate() {
                let j = i as isize + k as isize - 2;
                if j >= 0 && (j as usize) < n {
                    acc += a * x[j as usize];
                }
            }
            out[i] = acc;
        }
    }

    pub fn matvec_transpose(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        out[..n].iter_mut().for_each(|o| *o = 0.0);
        for (i, row) in self.data.iter().enumerate() {
            for (k, a) in row.iter().enumerate() {
                let j = i as isize + k as isize - 2;
                if j >= 0 && (j as usize) < n {
                    out[j as usize] += a * x[i];
                }
            }
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Builds the operator for a centred stencil (offsets -2..=2), closing the
    /// boundary rows with the simply supported ghost rule: u_0 = u_{n+1} = 0,
    /// u_{-1} = -u_1 and u_{n+2} = -u_n.
    fn from_stencil(n: usize, stencil: [f64; 5]) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            // node number of this row is i + 1
            for (k, &c) in stencil.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let node = i as isize + 1 + k as isize - 2;
                let last = n as isize;
                if node >= 1 && node <= last {
                    m.add(i, (node - 1) as usize, c);
                } else if node == -1 {
                    m.add(i, 0, -c);
                } else if node == last + 2 {
                    m.add(i, n - 1, -c);
                }
                // node 0 and n+1 carry zero displacement
            }
        }
        m
    }
}

pub const STENCIL_D1: [f64; 5] = [0.0, -0.5, 0.0, 0.5, 0.0];
pub const STENCIL_D2: [f64; 5] = [0.0, 1.0, -2.0, 1.0, 0.0];
pub const STENCIL_D3: [f64; 5] = [-0.5, 1.0, 0.0, -1.0, 0.5];
pub const STENCIL_D4: [f64; 5] = [1.0, -4.0, 6.0, -4.0, 1.0];

/// Boundary-modified difference matrices A1*..A4* (unscaled; divide by dx^k).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialOperators {
    pub a1: BandMatrix,
    pub a2: BandMatrix,
    pub a3: BandMatrix,
    pub a4: BandMatrix,
    pub dx: f64,
}

/// The 5-point stencils need five interior nodes.
pub const MIN_INTERIOR_NODES: usize = 5;

pub fn build_operators(grid: &SpatialGrid) -> Result<SpatialOperators> {
    let n = grid.n_interior();
    if n < MIN_INTERIOR_NODES {
        return Err(Error::GridTooSmall { got: n, min: MIN_INTERIOR_NODES });
    }
    Ok(SpatialOperators {
        a1: BandMatrix::from_stencil(n, STENCIL_D1),
        a2: BandMatrix::from_stencil(n, STENCIL_D2),
        a3: BandMatrix::from_stencil(n, STENCIL_D3),
        a4: BandMatrix::from_stencil(n, STENCIL_D4),
        dx: grid.dx(),
    })
}

impl SpatialOperators {
    pub fn n(&self) -> usize {
        self.a4.dim()
    }
}

/// Central first difference of a support-inclusive sequence, evaluated at
/// the interior nodes. `p` has n+2 entries; returns n entries (unscaled).
pub fn interior_first_difference(p: &[f64]) -> Vec<f64> {
    (1..p.len() - 1).map(|i| 0.5 * (p[i + 1] - p[i - 1])).collect()
}

/// Central second difference of a support-inclusive sequence (unscaled).
pub fn interior_second_difference(p: &[f64]) -> Vec<f64> {
    (1..p.len() - 1).map(|i| p[i + 1] - 2.0 * p[i] + p[i - 1]).collect()
}

/// Modulus coefficient P (supports included) and damping C (interior only).
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterField {
    p: Vec<f64>,
    c: Vec<f64>,
}

impl ParameterField {
    pub fn new(p: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if p.len() != c.len() + 2 {
            return Err(Error::Shape(format!(
                "P needs n+2 = {} entries, got {}",
                c.len() + 2,
                p.len()
            )));
        }
        if let Some(i) = p.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Invalid(format!("P[{i}] = {} is not strictly positive", p[i])));
        }
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i, context: "damping field".into() });
        }
        Ok(Self { p, c })
    }

    pub fn uniform(n: usize, p: f64, c: f64) -> Result<Self> {
        Self::new(vec![p; n + 2], vec![c; n])
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }
    /// Modulus coefficients at nodes 0..=n+1.
    pub fn p(&self) -> &[f64] {
        &self.p
    }
    /// Modulus coefficients at interior nodes only.
    pub fn p_interior(&self) -> &[f64] {
        &self.p[1..self.p.len() - 1]
    }
    /// Damping at interior nodes (N·s/m²).
    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// Hash of the exact bit patterns, used to detect stale solver tapes.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for v in self.p.iter().chain(&self.c) {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Closed-form parameter profiles used to synthesise ground truth:
/// P0(x) = offset + amplitude·sin(2π·periods·x/L), C0(x) = c_max·x/L.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthProfile {
    pub p_offset: f64,
    pub p_amplitude: f64,
    pub p_periods: f64,
    pub c_max: f64,
}

impl Default for TruthProfile {
    fn default() -> Self {
        Self { p_offset: 1.5, p_amplitude: 0.5, p_periods: 1.0, c_max: 5.0 }
    }
}

impl TruthProfile {
    fn wavenumber(&self, length: f64) -> f64 {
        2.0 * PI * self.p_periods / length
    }

    pub fn p(&self, x: f64, length: f64) -> f64 {
        self.p_offset + self.p_amplitude * (self.wavenumber(length) * x).sin()
    }

    pub fn dp_dx(&self, x: f64, length: f64) -> f64 {
        let k = self.wavenumber(length);
        self.p_amplitude * k * (k * x).cos()
    }

    pub fn d2p_dx2(&self, x: f64, length: f64) -> f64 {
        let k = self.wavenumber(length);
        -self.p_amplitude * k * k * (k * x).sin()
    }

    pub fn c(&self, x: f64, length: f64) -> f64 {
        self.c_max * x / length
    }

    pub fn fields(&self, grid: &SpatialGrid) -> Result<ParameterField> {
        let l = grid.length();
        let p = grid.all_coords().iter().map(|&x| self.p(x, l)).collect();
        let c = grid.interior_coords().iter().map(|&x| self.c(x, l)).collect();
        ParameterField::new(p, c)
    }
}

/// Default ground-truth fields: one-period sinusoidal modulus coefficient
/// spanning [1, 2] and a damping ramp from 0 to 5 N·s/m².
pub fn ground_truth_fields(spec: &BeamSpec, grid: &SpatialGrid) -> Result<ParameterField> {
    if (spec.length() - grid.length()).abs() > 1e-12 * spec.length() {
        return Err(Error::Shape("grid length differs from beam length".into()));
    }
    TruthProfile::default().fields(grid)
}

/// Uniform step load: q0 up to and including the cutoff time, zero after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadModel {
    pub amplitude: f64,
    pub cutoff: f64,
}

impl Default for LoadModel {
    fn default() -> Self {
        Self { amplitude: 1000.0, cutoff: 0.02 }
    }
}

impl LoadModel {
    /// Load density (N/m) at time `t`.
    pub fn force_at(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("time must be non-negative, got {t}")));
        }
        Ok(self.force(t))
    }

    fn force(&self, t: f64) -> f64 {
        if t <= self.cutoff {
            self.amplitude
        } else {
            0.0
        }
    }

    /// Load seen by every stage of a step. Steps never straddle the cutoff,
    /// so the midpoint picks the correct one-sided value.
    pub fn force_over(&self, step: StepInterval) -> f64 {
        self.force(0.5 * (step.start + step.end))
    }
}

/// Semi-discrete beam dynamics for a fixed set of parameter fields.
///
/// State layout is `[u_1..u_n, v_1..v_n]`. The acceleration is
/// `(F - E0·I·(P''·u'' + 2P'·u''' + P·u'''') - C·v) / (ρA)`, which is affine
/// in the state; the stiffness part is assembled once as a band matrix.
#[derive(Debug, Clone)]
pub struct BeamSystem {
    spec: BeamSpec,
    ops: SpatialOperators,
    fields: ParameterField,
    load: LoadModel,
    stiffness: BandMatrix,
    damping: Vec<f64>,
    // scaled dP/dx and d²P/dx² at interior nodes
    dp: Vec<f64>,
    d2p: Vec<f64>,
    fingerprint: u64,
}

impl BeamSystem {
    pub fn new(
        spec: BeamSpec,
        ops: SpatialOperators,
        fields: ParameterField,
        load: LoadModel,
    ) -> Result<Self> {
        let n = ops.n();
        if fields.n() != n {
            return Err(Error::Shape(format!(
                "fields have {} interior nodes, operators have {n}",
                fields.n()
            )));
        }
        let dx = ops.dx;
        let rho_a = spec.mass_per_length();
        let scale = spec.flexural_rigidity() / rho_a;
        let dp: Vec<f64> = interior_first_difference(fields.p()).iter().map(|d| d / dx).collect();
        let d2p: Vec<f64> =
            interior_second_difference(fields.p()).iter().map(|d| d / (dx * dx)).collect();
        let p_int = fields.p_interior();

        let mut stiffness = BandMatrix::zeros(n);
        for i in 0..n {
            let w2 = scale * d2p[i] / (dx * dx);
            let w3 = scale * 2.0 * dp[i] / dx.powi(3);
            let w4 = scale * p_int[i] / dx.powi(4);
            for k in 0..5 {
                stiffness.data[i][k] =
                    w2 * ops.a2.data[i][k] + w3 * ops.a3.data[i][k] + w4 * ops.a4.data[i][k];
            }
        }
        let damping = fields.c().iter().map(|c| c / rho_a).collect();
        let fingerprint = fields.fingerprint();
        Ok(Self { spec, ops, fields, load, stiffness, damping, dp, d2p, fingerprint })
    }

    pub fn spec(&self) -> &BeamSpec {
        &self.spec
    }
    pub fn ops(&self) -> &SpatialOperators {
        &self.ops
    }
    pub fn fields(&self) -> &ParameterField {
        &self.fields
    }
    pub fn load(&self) -> &LoadModel {
        &self.load
    }
    pub fn n(&self) -> usize {
        self.ops.n()
    }

    /// Undamped stiffness operator K with `dv/dt = F/(ρA) - K·u - (C/ρA)·v`.
    pub fn stiffness(&self) -> &BandMatrix {
        &self.stiffness
    }

    /// Checked right-hand side at time `t` (load evaluated at `t`, inclusive cutoff).
    pub fn rhs(&self, t: f64, u: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        if u.len() != n || v.len() != n {
            return Err(Error::Shape(format!(
                "state halves must have {n} entries, got {} and {}",
                u.len(),
                v.len()
            )));
        }
        if let Some(i) = u.iter().chain(v).position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index: i, context: "rhs state".into() });
        }
        let f = self.load.force_at(t)?;
        let mut y = u.to_vec();
        y.extend_from_slice(v);
        let mut dy = vec![0.0; 2 * n];
        self.eval_with_force(f, &y, &mut dy);
        let dv = dy.split_off(n);
        Ok((dy, dv))
    }

    fn eval_with_force(&self, force: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n();
        let (u, v) = y.split_at(n);
        let (du, dv) = dy.split_at_mut(n);
        du.copy_from_slice(v);
        self.stiffness.matvec(u, dv);
        let f = force / self.spec.mass_per_length();
        for i in 0..n {
            dv[i] = f - dv[i] - self.damping[i] * v[i];
        }
    }
}

impl OdeSystem for BeamSystem {
    fn dim(&self) -> usize {
        2 * self.n()
    }

    fn eval(&self, step: StepInterval, _t: f64, y: &[f64], dy: &mut [f64]) {
        self.eval_with_force(self.load.force_over(step), y, dy);
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.load.cutoff]
    }
}

impl AdjointSystem for BeamSystem {
    /// Parameters are laid out as `[P_0..P_{n+1}, C_1..C_n]`.
    fn n_params(&self) -> usize {
        2 * self.n() + 2
    }

    fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn vjp(&self, _step: StepInterval, _t: f64, y: &[f64], cot: &[f64], y_bar: &mut [f64], p_bar: &mut [f64]) {
        let n = self.n();
        let dx = self.ops.dx;
        let rho_a = self.spec.mass_per_length();
        let scale = self.spec.flexural_rigidity() / rho_a;
        let (u, v) = y.split_at(n);
        let (cu, cv) = cot.split_at(n);

        // state: d(du)/dv = I, d(dv)/du = -K, d(dv)/dv = -D
        let mut ktc = vec![0.0; n];
        self.stiffness.matvec_transpose(cv, &mut ktc);
        for i in 0..n {
            y_bar[i] += -ktc[i];
            y_bar[n + i] += cu[i] - self.damping[i] * cv[i];
        }

        // parameters
        let mut a2u = vec![0.0; n];
        let mut a3u = vec![0.0; n];
        let mut a4u = vec![0.0; n];
        self.ops.a2.matvec(u, &mut a2u);
        self.ops.a3.matvec(u, &mut a3u);
        self.ops.a4.matvec(u, &mut a4u);
        let (pb, cb) = p_bar.split_at_mut(n + 2);
        let dx2 = dx * dx;
        let dx3 = dx2 * dx;
        let dx4 = dx2 * dx2;
        for i in 0..n {
            let w = -scale * cv[i];
            if w == 0.0 {
                continue;
            }
            // node i+1 in support-inclusive indexing
            let s2 = w * a2u[i] / dx2 / dx2;
            pb[i] += s2;
            pb[i + 1] -= 2.0 * s2;
            pb[i + 2] += s2;
            let s3 = w * 2.0 * a3u[i] / dx3 / (2.0 * dx);
            pb[i + 2] += s3;
            pb[i] -= s3;
            pb[i + 1] += w * a4u[i] / dx4;
            cb[i] += -cv[i] * v[i] / rho_a;
        }
    }
}

impl BeamSystem {
    /// Scaled dP/dx at interior nodes.
    pub fn p_slope(&self) -> &[f64] {
        &self.dp
    }
    /// Scaled d²P/dx² at interior nodes.
    pub fn p_curvature(&self) -> &[f64] {
        &self.d2p
    }
}
