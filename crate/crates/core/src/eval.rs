//! Response and parameter metrics: field MAE, peak error, discrete Fréchet
//! distance and the extended-horizon extrapolation harness.

use std::io::Write;

use crate::beam::{BeamSystem, ParameterField, SpatialGrid};
use crate::error::{Error, Result};
use crate::field::{fmt_f64, DisplacementField};
use crate::solver::{solve, TimeGrid, Trajectory};

fn check_shapes(a: &DisplacementField, b: &DisplacementField) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "fields of {}x{} and {}x{}",
            a.n_times(),
            a.n_nodes(),
            b.n_times(),
            b.n_nodes()
        )));
    }
    Ok(())
}

/// Mean absolute difference over every entry.
pub fn field_mae(a: &DisplacementField, b: &DisplacementField) -> Result<f64> {
    check_shapes(a, b)?;
    let s: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum();
    Ok(s / a.values().len() as f64)
}

pub fn max_abs_difference(a: &DisplacementField, b: &DisplacementField) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(a.values().iter().zip(b.values()).fold(0.0, |m, (x, y)| m.max((x - y).abs())))
}

/// `max|a - b| / max|a|`, with `a` the reference field.
pub fn peak_error_ratio(reference: &DisplacementField, other: &DisplacementField) -> Result<f64> {
    let peak = reference.max_abs();
    if peak == 0.0 {
        return Err(Error::Domain("peak error ratio is undefined for an all-zero reference".into()));
    }
    Ok(max_abs_difference(reference, other)? / peak)
}

/// Discrete Fréchet distance between two polylines (Euclidean point metric).
pub fn discrete_frechet(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("Fréchet distance needs two non-empty curves".into()));
    }
    let d = |i: usize, j: usize| (a[i].0 - b[j].0).hypot(a[i].1 - b[j].1);
    let m = b.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for i in 0..a.len() {
        for j in 0..m {
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]),
            };
            cur[j] = d(i, j).max(best);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// `(x_i, values_i)` polyline over the interior nodes.
pub fn parameter_curve(grid: &SpatialGrid, values: &[f64]) -> Vec<(f64, f64)> {
    grid.interior_coords().into_iter().zip(values.iter().copied()).collect()
}

/// Rescales both axes so the reference curve spans `[0, 1]` in x and y; the
/// same map is applied to `other`.
pub fn normalize_against(reference: &[(f64, f64)], other: &[(f64, f64)], length: f64) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let (lo, hi) = reference.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.1), h.max(p.1)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let map = |c: &[(f64, f64)]| c.iter().map(|&(x, y)| (x / length, (y - lo) / span)).collect::<Vec<_>>();
    (map(reference), map(other))
}

/// Fréchet distance on the normalised axes of [`normalize_against`].
pub fn normalized_frechet(reference: &[(f64, f64)], other: &[(f64, f64)], length: f64) -> Result<f64> {
    let (r, o) = normalize_against(reference, other, length);
    discrete_frechet(&r, &o)
}

/// Fréchet distances of identified P and C against the ground truth, on
/// raw (metres vs coefficient) and normalised axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterDistances {
    pub p: f64,
    pub c: f64,
    pub p_normalized: f64,
    pub c_normalized: f64,
}

pub fn parameter_distances(grid: &SpatialGrid, truth: &ParameterField, found: &ParameterField) -> Result<ParameterDistances> {
    let (tp, fp) = (parameter_curve(grid, truth.p_interior()), parameter_curve(grid, found.p_interior()));
    let (tc, fc) = (parameter_curve(grid, truth.c()), parameter_curve(grid, found.c()));
    Ok(ParameterDistances {
        p: discrete_frechet(&tp, &fp)?,
        c: discrete_frechet(&tc, &fc)?,
        p_normalized: normalized_frechet(&tp, &fp, grid.length())?,
        c_normalized: normalized_frechet(&tc, &fc, grid.length())?,
    })
}

/// Least-squares slope of `values` against `xs`.
pub fn trend_slope(xs: &[f64], values: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = values.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(values).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Re-solves `system` from rest over `multiplier` times the grid's window,
/// keeping the save spacing and step bound, so the first window is
/// reproduced step for step.
pub fn extrapolate(system: &BeamSystem, grid: &TimeGrid, multiplier: usize) -> Result<Trajectory> {
    if multiplier == 0 {
        return Err(Error::Invalid("horizon multiplier must be at least 1".into()));
    }
    let long = TimeGrid::new(
        grid.t_end() * multiplier as f64,
        grid.n_save() * multiplier,
        grid.step_bound(),
        &crate::solver::OdeSystem::breakpoints(system),
    )?;
    solve(system, &vec![0.0; 2 * system.n()], &long)
}

/// Displacement history of one interior node (0-based).
pub fn elemental_response(field: &DisplacementField, node: usize) -> Result<Vec<f64>> {
    if node >= field.n_nodes() {
        return Err(Error::Shape(format!("node {node} outside {} interior nodes", field.n_nodes())));
    }
    Ok(field.node_series(node))
}

/// Midspan and quarter-span node indices (0-based) used for response plots.
pub fn reference_nodes(n: usize) -> (usize, usize) {
    (n / 2, n / 4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    NeuralSi,
    Dnn,
    Pinn,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::NeuralSi => "neuralsi",
            Method::Dnn => "dnn",
            Method::Pinn => "pinn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "neuralsi" => Ok(Method::NeuralSi),
            "dnn" => Ok(Method::Dnn),
            "pinn" => Ok(Method::Pinn),
            other => Err(Error::Invalid(format!("unknown method {other:?} (neuralsi, dnn, pinn)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: Method,
    pub interpolation_mae: f64,
    pub extrapolation_mae: f64,
    pub peak_error_ratio: f64,
    pub extrapolation_peak_error_ratio: f64,
    /// Parameter distances; only NeuralSI identifies fields.
    pub parameters: Option<ParameterDistances>,
    pub inference_seconds: f64,
}

impl MetricsReport {
    /// Compares predictions against the truth over `[0, T]` and `(T, 2T]`.
    pub fn from_fields(
        method: Method,
        truth_long: &DisplacementField,
        pred_long: &DisplacementField,
        t_end: f64,
        parameters: Option<ParameterDistances>,
        inference_seconds: f64,
    ) -> Result<Self> {
        let ti = truth_long.window(0.0, t_end)?;
        let pi = pred_long.window(0.0, t_end)?;
        let te = truth_long.window(t_end, 2.0 * t_end)?;
        let pe = pred_long.window(t_end, 2.0 * t_end)?;
        let r = Self {
            method,
            interpolation_mae: field_mae(&ti, &pi)?,
            extrapolation_mae: field_mae(&te, &pe)?,
            peak_error_ratio: peak_error_ratio(&ti, &pi)?,
            extrapolation_peak_error_ratio: peak_error_ratio(&te, &pe)?,
            parameters,
            inference_seconds,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let mut vals = vec![
            self.interpolation_mae,
            self.extrapolation_mae,
            self.peak_error_ratio,
            self.extrapolation_peak_error_ratio,
            self.inference_seconds,
        ];
        if let Some(p) = self.parameters {
            vals.extend([p.p, p.c, p.p_normalized, p.c_normalized]);
        }
        match vals.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            Some(i) => Err(Error::NonFinite { index: i, context: format!("{} metrics", self.method) }),
            None => Ok(()),
        }
    }

    pub const CSV_HEADER: [&'static str; 9] = [
        "method",
        "interp_mae",
        "extrap_mae",
        "interp_peak_error_ratio",
        "extrap_peak_error_ratio",
        "frechet_p",
        "frechet_c",
        "frechet_p_normalized",
        "frechet_c_normalized",
    ];

    /// CSV row without the wall-clock column, so reports of identical runs are byte-identical.
    pub fn csv_record(&self) -> Vec<String> {
        let opt = |f: fn(&ParameterDistances) -> f64| self.parameters.as_ref().map(f).map(fmt_f64).unwrap_or_default();
        vec![
            self.method.tag().to_string(),
            fmt_f64(self.interpolation_mae),
            fmt_f64(self.extrapolation_mae),
            fmt_f64(self.peak_error_ratio),
            fmt_f64(self.extrapolation_peak_error_ratio),
            opt(|p| p.p),
            opt(|p| p.c),
            opt(|p| p.p_normalized),
            opt(|p| p.c_normalized),
        ]
    }
}

pub fn write_metrics_csv<W: Write>(reports: &[MetricsReport], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(MetricsReport::CSV_HEADER).map_err(crate::field::csv_err)?;
    for r in reports {
        wr.write_record(r.csv_record()).map_err(crate::field::csv_err)?;
    }
    wr.flush()?;
    Ok(())
}
