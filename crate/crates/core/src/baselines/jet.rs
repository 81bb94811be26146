//! Truncated Taylor arithmetic for dense tanh networks of two inputs.
//!
//! Coefficient `j` of a jet is `(1/j!)·d^j f/dξ^j` along one input axis. A
//! star jet shares the value between an x-branch and a t-branch, so one
//! pass yields both axes' derivatives at a point.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::net::{Activation, DenseStack};

pub const MAX_ORDER: usize = 4;

/// Coefficient layout of a star jet: the value, then x-branch orders
/// `1..=x_order`, then t-branch orders `1..=t_order`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StarLayout {
    pub x_order: usize,
    pub t_order: usize,
}

impl StarLayout {
    pub const VALUE: Self = Self { x_order: 0, t_order: 0 };

    pub fn new(x_order: usize, t_order: usize) -> Result<Self> {
        if x_order > MAX_ORDER || t_order > MAX_ORDER {
            return Err(Error::Unsupported(format!("jet order above {MAX_ORDER} (x {x_order}, t {t_order})")));
        }
        Ok(Self { x_order, t_order })
    }

    pub fn len(&self) -> usize {
        1 + self.x_order + self.t_order
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Slot of x-branch coefficient `j` (0 is the shared value).
    pub fn x(&self, j: usize) -> usize {
        if j == 0 {
            0
        } else {
            j
        }
    }

    pub fn t(&self, j: usize) -> usize {
        if j == 0 {
            0
        } else {
            self.x_order + j
        }
    }

    fn branches(&self) -> [(usize, usize); 2] {
        [(0, self.x_order), (self.x_order, self.t_order)]
    }
}

type Branch = [f64; MAX_ORDER + 1];

fn gather(v: &[f64], off: usize, k: usize) -> Branch {
    let mut b = [0.0; MAX_ORDER + 1];
    b[0] = v[0];
    b[1..=k].copy_from_slice(&v[off + 1..off + 1 + k]);
    b
}

/// Univariate tanh recurrence on `x[0..=k]`, given `y[0]` and `s[0]`.
///
/// With `s = 1 - y²`, `y' = s·x'` gives `j·y_j = Σ_{i=1..j} i·x_i·s_{j-i}`
/// and `s_j = -Σ_{i=0..j} y_i·y_{j-i}` for `j >= 1`.
#[inline(always)]
fn tanh_branch_k<const K: usize>(x: &Branch, y: &mut Branch, s: &mut Branch) {
    for j in 1..=K {
        let mut acc = 0.0;
        for i in 1..=j {
            acc += i as f64 * x[i] * s[j - i];
        }
        y[j] = acc / j as f64;
        let mut ss = 0.0;
        for i in 0..=j {
            ss += y[i] * y[j - i];
        }
        s[j] = -ss;
    }
}

fn tanh_branch(k: usize, x: &Branch, y: &mut Branch, s: &mut Branch) {
    match k {
        1 => tanh_branch_k::<1>(x, y, s),
        2 => tanh_branch_k::<2>(x, y, s),
        3 => tanh_branch_k::<3>(x, y, s),
        _ => tanh_branch_k::<4>(x, y, s),
    }
}

/// Reverse of [`tanh_branch`]; `yb` enters holding ȳ and leaves holding the
/// contributions to ȳ_0, `sb[0]` receives s̄_0.
#[inline(always)]
fn tanh_branch_back_k<const K: usize>(x: &Branch, y: &Branch, s: &Branch, yb: &mut Branch, sb: &mut Branch, xb: &mut Branch) {
    for j in (1..=K).rev() {
        let sbj = sb[j];
        for m in 0..=j {
            yb[m] -= 2.0 * sbj * y[j - m];
        }
        let g = yb[j] / j as f64;
        for i in 1..=j {
            xb[i] += g * i as f64 * s[j - i];
            sb[j - i] += g * i as f64 * x[i];
        }
    }
}

fn tanh_branch_back(k: usize, x: &Branch, y: &Branch, s: &Branch, yb: &mut Branch, sb: &mut Branch, xb: &mut Branch) {
    match k {
        1 => tanh_branch_back_k::<1>(x, y, s, yb, sb, xb),
        2 => tanh_branch_back_k::<2>(x, y, s, yb, sb, xb),
        3 => tanh_branch_back_k::<3>(x, y, s, yb, sb, xb),
        _ => tanh_branch_back_k::<4>(x, y, s, yb, sb, xb),
    }
}

/// Tanh of a star jet. `s` receives the coefficients of `1 - y²`, which the
/// reverse pass needs.
pub fn star_tanh(layout: StarLayout, x: &[f64], y: &mut [f64], s: &mut [f64]) {
    y[0] = x[0].tanh();
    s[0] = 1.0 - y[0] * y[0];
    for (off, k) in layout.branches() {
        if k == 0 {
            continue;
        }
        let xb = gather(x, off, k);
        let mut yb = [0.0; MAX_ORDER + 1];
        let mut sb = [0.0; MAX_ORDER + 1];
        yb[0] = y[0];
        sb[0] = s[0];
        tanh_branch(k, &xb, &mut yb, &mut sb);
        y[off + 1..off + 1 + k].copy_from_slice(&yb[1..=k]);
        s[off + 1..off + 1 + k].copy_from_slice(&sb[1..=k]);
    }
}

/// Reverse pass of [`star_tanh`]: accumulates `x̄` from `ȳ`.
pub fn star_tanh_backward(layout: StarLayout, x: &[f64], y: &[f64], s: &[f64], ybar: &[f64], xbar: &mut [f64]) {
    let (mut y0bar, mut s0bar) = (ybar[0], 0.0);
    for (off, k) in layout.branches() {
        if k == 0 {
            continue;
        }
        let (xb, yv, sv) = (gather(x, off, k), gather(y, off, k), gather(s, off, k));
        let mut yb = gather(ybar, off, k);
        yb[0] = 0.0;
        let mut sb = [0.0; MAX_ORDER + 1];
        let mut xbb = [0.0; MAX_ORDER + 1];
        tanh_branch_back(k, &xb, &yv, &sv, &mut yb, &mut sb, &mut xbb);
        y0bar += yb[0];
        s0bar += sb[0];
        for j in 1..=k {
            xbar[off + j] += xbb[j];
        }
    }
    y0bar -= 2.0 * y[0] * s0bar;
    xbar[0] += y0bar * s[0];
}

/// Univariate truncated Taylor series.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorJet {
    pub coeffs: Vec<f64>,
}

impl TaylorJet {
    pub fn constant(v: f64, order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = v;
        Self { coeffs }
    }

    /// The identity function expanded at `v`.
    pub fn variable(v: f64, order: usize) -> Self {
        let mut j = Self::constant(v, order);
        if order > 0 {
            j.coeffs[1] = 1.0;
        }
        j
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// The `k`-th derivative, `k!·c_k`.
    pub fn derivative(&self, k: usize) -> f64 {
        self.coeffs[k] * factorial(k)
    }

    pub fn affine(&self, a: f64, b: f64) -> Self {
        let mut coeffs: Vec<f64> = self.coeffs.iter().map(|c| a * c).collect();
        coeffs[0] += b;
        Self { coeffs }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect() }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let coeffs = (0..=self.order())
            .map(|j| (0..=j).map(|i| self.coeffs[i] * other.coeffs[j - i]).sum())
            .collect();
        Self { coeffs }
    }

    pub fn tanh(&self) -> Self {
        let layout = StarLayout { x_order: self.order(), t_order: 0 };
        let mut y = vec![0.0; self.coeffs.len()];
        let mut s = vec![0.0; self.coeffs.len()];
        star_tanh(layout, &self.coeffs, &mut y, &mut s);
        Self { coeffs: y }
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Activations of a jet forward pass. Matrices have one row per
/// (coefficient slot, point), slot-major, so each slot of a neuron is a
/// contiguous run over points.
#[derive(Debug, Clone)]
pub struct JetTape {
    layout: StarLayout,
    n_points: usize,
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
    s: Vec<DMatrix<f64>>,
}

impl JetTape {
    pub fn layout(&self) -> StarLayout {
        self.layout
    }
    pub fn n_points(&self) -> usize {
        self.n_points
    }
}

fn weights(stack: &DenseStack, l: usize) -> (DMatrix<f64>, &[f64]) {
    let (w, b) = stack.layer(l);
    let (i, o) = (stack.dims()[l], stack.dims()[l + 1]);
    (DMatrix::from_row_slice(o, i, w), b)
}

fn branch_slots(off: usize, k: usize) -> [usize; MAX_ORDER + 1] {
    let mut idx = [0; MAX_ORDER + 1];
    for (j, v) in idx.iter_mut().enumerate().take(k + 1).skip(1) {
        *v = off + j;
    }
    idx
}

/// Column form of [`star_tanh`] over `np` points.
fn tanh_column(layout: StarLayout, np: usize, x: &[f64], y: &mut [f64], s: &mut [f64]) {
    let seg = |c: usize| c * np..(c + 1) * np;
    for p in 0..np {
        let v = x[p].tanh();
        y[p] = v;
        s[p] = 1.0 - v * v;
    }
    for (off, k) in layout.branches() {
        let idx = branch_slots(off, k);
        for j in 1..=k {
            let (y_lo, y_hi) = y.split_at_mut(idx[j] * np);
            let yj = &mut y_hi[..np];
            yj.iter_mut().for_each(|v| *v = 0.0);
            for i in 1..=j {
                let c = i as f64 / j as f64;
                let (xi, sji) = (&x[seg(idx[i])], &s[seg(idx[j - i])]);
                for ((o, a), b) in yj.iter_mut().zip(xi).zip(sji) {
                    *o += c * a * b;
                }
            }
            let sj = &mut s[seg(idx[j])];
            for (p, o) in sj.iter_mut().enumerate() {
                let mut acc = 2.0 * y_lo[p] * yj[p];
                for i in 1..j {
                    acc += y_lo[idx[i] * np + p] * y_lo[idx[j - i] * np + p];
                }
                *o = -acc;
            }
        }
    }
}

/// Column form of [`star_tanh_backward`]; overwrites `xbar`. `sbar` and
/// `g` are scratch of lengths `len·np` and `np`.
#[allow(clippy::too_many_arguments)]
fn tanh_column_backward(
    layout: StarLayout,
    np: usize,
    x: &[f64],
    y: &[f64],
    s: &[f64],
    yb: &mut [f64],
    xbar: &mut [f64],
    sbar: &mut [f64],
    g: &mut [f64],
) {
    let seg = |c: usize| c * np..(c + 1) * np;
    xbar.iter_mut().for_each(|v| *v = 0.0);
    sbar.iter_mut().for_each(|v| *v = 0.0);
    for (off, k) in layout.branches() {
        let idx = branch_slots(off, k);
        for j in (1..=k).rev() {
            g.copy_from_slice(&sbar[seg(idx[j])]);
            for m in 0..=j {
                let yjm = &y[seg(idx[j - m])];
                for ((o, a), b) in yb[seg(idx[m])].iter_mut().zip(g.iter()).zip(yjm) {
                    *o -= 2.0 * a * b;
                }
            }
            for (o, a) in g.iter_mut().zip(&yb[seg(idx[j])]) {
                *o = a / j as f64;
            }
            for i in 1..=j {
                let c = i as f64;
                let sji = &s[seg(idx[j - i])];
                for ((o, a), b) in xbar[seg(idx[i])].iter_mut().zip(g.iter()).zip(sji) {
                    *o += c * a * b;
                }
                let xi = &x[seg(idx[i])];
                for ((o, a), b) in sbar[seg(idx[j - i])].iter_mut().zip(g.iter()).zip(xi) {
                    *o += c * a * b;
                }
            }
        }
    }
    for p in 0..np {
        let y0b = yb[p] - 2.0 * y[p] * sbar[p];
        xbar[p] = y0b * s[p];
    }
}

/// Star jets of a scalar-output network over 2-D inputs.
///
/// Returns the output coefficients (`points x len`, row-major) and the tape.
pub fn jet_forward(stack: &DenseStack, points: &[[f64; 2]], layout: StarLayout) -> Result<(Vec<f64>, JetTape)> {
    if stack.n_inputs() != 2 || stack.n_outputs() != 1 {
        return Err(Error::Shape(format!("jets need a 2-input scalar network, got dims {:?}", stack.dims())));
    }
    if !matches!(stack.hidden(), Activation::Tanh | Activation::Identity) {
        return Err(Error::Unsupported(format!("no jet rule for {} activations", stack.hidden().name())));
    }
    let (nc, np) = (layout.len(), points.len());
    let rows = np * nc;
    let mut a = DMatrix::zeros(rows, 2);
    for (p, pt) in points.iter().enumerate() {
        a[(p, 0)] = pt[0];
        a[(p, 1)] = pt[1];
        if layout.x_order > 0 {
            a[(layout.x(1) * np + p, 0)] = 1.0;
        }
        if layout.t_order > 0 {
            a[(layout.t(1) * np + p, 1)] = 1.0;
        }
    }
    let n_layers = stack.n_layers();
    let mut tape = JetTape { layout, n_points: np, inputs: Vec::new(), pre: Vec::new(), s: Vec::new() };
    for l in 0..n_layers {
        let (w, b) = weights(stack, l);
        let mut z = &a * w.transpose();
        for (k, bk) in b.iter().enumerate() {
            z.column_mut(k).rows_mut(0, np).add_scalar_mut(*bk);
        }
        tape.inputs.push(a);
        let tanh = l + 1 < n_layers && stack.hidden() == Activation::Tanh;
        if !tanh {
            a = z;
            continue;
        }
        let mut y = DMatrix::zeros(rows, z.ncols());
        let mut s = DMatrix::zeros(rows, z.ncols());
        {
            let (zs, ys, ss) = (z.as_slice(), y.as_mut_slice(), s.as_mut_slice());
            for k in 0..z.ncols() {
                let r = k * rows..(k + 1) * rows;
                tanh_column(layout, np, &zs[r.clone()], &mut ys[r.clone()], &mut ss[r]);
            }
        }
        tape.pre.push(z);
        tape.s.push(s);
        a = y;
    }
    let mut out = vec![0.0; rows];
    for c in 0..nc {
        for p in 0..np {
            out[p * nc + c] = a[(c * np + p, 0)];
        }
    }
    Ok((out, tape))
}

/// Parameter gradient (flat, in [`DenseStack::params`] order) given the
/// cotangent of every output coefficient (`points x len`, row-major).
pub fn jet_backward(stack: &DenseStack, tape: &JetTape, out_bar: &[f64]) -> Result<Vec<f64>> {
    let (nc, np) = (tape.layout.len(), tape.n_points);
    let rows = np * nc;
    if out_bar.len() != rows {
        return Err(Error::Shape(format!("{} output cotangents, expected {rows}", out_bar.len())));
    }
    let n_layers = stack.n_layers();
    let mut grad = vec![0.0; stack.n_params()];
    let mut offsets = Vec::with_capacity(n_layers);
    let mut off = 0;
    for l in 0..n_layers {
        offsets.push(off);
        off += stack.dims()[l] * stack.dims()[l + 1] + stack.dims()[l + 1];
    }
    let mut zbar = DMatrix::zeros(rows, 1);
    for c in 0..nc {
        for p in 0..np {
            zbar[(c * np + p, 0)] = out_bar[p * nc + c];
        }
    }
    let mut sbar = vec![0.0; rows];
    let mut g = vec![0.0; np];
    for l in (0..n_layers).rev() {
        let (w, _) = weights(stack, l);
        let (i, o) = (stack.dims()[l], stack.dims()[l + 1]);
        let wbar = zbar.transpose() * &tape.inputs[l];
        let gl = &mut grad[offsets[l]..offsets[l] + i * o + o];
        for r in 0..o {
            for c in 0..i {
                gl[r * i + c] = wbar[(r, c)];
            }
            gl[i * o + r] = zbar.column(r).rows(0, np).sum();
        }
        if l == 0 {
            break;
        }
        let mut abar = &zbar * w;
        let tanh_layer = l - 1;
        if tanh_layer < tape.pre.len() {
            let (z, s) = (&tape.pre[tanh_layer], &tape.s[tanh_layer]);
            let y = &tape.inputs[l];
            let mut zb = DMatrix::zeros(rows, abar.ncols());
            let (zs, ys, ss) = (z.as_slice(), y.as_slice(), s.as_slice());
            let ab = abar.as_mut_slice();
            let ob = zb.as_mut_slice();
            for k in 0..i {
                let r = k * rows..(k + 1) * rows;
                tanh_column_backward(
                    tape.layout,
                    np,
                    &zs[r.clone()],
                    &ys[r.clone()],
                    &ss[r.clone()],
                    &mut ab[r.clone()],
                    &mut ob[r],
                    &mut sbar,
                    &mut g,
                );
            }
            zbar = zb;
        } else {
            zbar = abar;
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net(dims: &[usize], act: Activation, seed: u64) -> DenseStack {
        DenseStack::glorot(dims, act, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn tanh_of_single_neuron_matches_closed_forms() {
        let (w, b, x) = (1.3, -0.4, 0.7);
        let jet = TaylorJet::variable(x, 4).affine(w, b).tanh();
        let y = (w * x + b).tanh();
        let s = 1.0 - y * y;
        let d = [
            y,
            w * s,
            w * w * (-2.0 * y * s),
            w.powi(3) * (-2.0 * s * s + 4.0 * y * y * s),
            w.powi(4) * (16.0 * y * s * s - 8.0 * y.powi(3) * s),
        ];
        for k in 0..=4 {
            assert_relative_eq!(jet.derivative(k), d[k], max_relative = 1e-10);
        }
    }

    #[test]
    fn affine_network_has_no_curvature() {
        let s = net(&[2, 5, 3, 1], Activation::Identity, 2);
        let layout = StarLayout::new(4, 2).unwrap();
        let (out, _) = jet_forward(&s, &[[0.3, 0.8]], layout).unwrap();
        for j in 2..=4 {
            assert!(out[layout.x(j)].abs() < 1e-14);
        }
        assert!(out[layout.t(2)].abs() < 1e-14);
    }

    #[test]
    fn product_and_sum_rules() {
        let a = TaylorJet::variable(0.5, 4).tanh();
        let b = TaylorJet::variable(0.5, 4).affine(2.0, 1.0);
        let p = a.mul(&b);
        let direct = |x: f64| x.tanh() * (2.0 * x + 1.0);
        let h = 1e-3;
        let fd1 = (direct(0.5 + h) - direct(0.5 - h)) / (2.0 * h);
        assert_relative_eq!(p.derivative(1), fd1, max_relative = 1e-6);
        assert_relative_eq!(a.add(&b).coeffs[1], a.coeffs[1] + 2.0);
    }

    #[test]
    fn backward_matches_finite_differences_of_a_jet_functional() {
        let s = net(&[2, 6, 6, 1], Activation::Tanh, 7);
        let layout = StarLayout::new(4, 2).unwrap();
        let pts = [[0.2, 0.9], [0.75, 0.1], [0.5, 0.5]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let weights: Vec<f64> = (0..pts.len() * layout.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let functional = |st: &DenseStack| {
            let (o, _) = jet_forward(st, &pts, layout).unwrap();
            o.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, tape) = jet_forward(&s, &pts, layout).unwrap();
        let g = jet_backward(&s, &tape, &weights).unwrap();
        let base = s.params().to_vec();
        for k in 0..base.len() {
            let h = 1e-6;
            let mut plus = s.clone();
            plus.params_mut()[k] = base[k] + h;
            let mut minus = s.clone();
            minus.params_mut()[k] = base[k] - h;
            let fd = (functional(&plus) - functional(&minus)) / (2.0 * h);
            assert!((g[k] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "param {k}: {} vs {fd}", g[k]);
        }
    }

    #[test]
    fn orders_above_four_are_refused() {
        assert!(matches!(StarLayout::new(5, 0), Err(Error::Unsupported(_))));
    }
}
