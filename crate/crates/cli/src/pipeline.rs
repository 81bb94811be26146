//! The four commands. Each reads and writes artifacts under the config's
//! output directory and checks provenance on everything it consumes.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use beamid::baselines::{train_dnn, train_pinn, RegressorModel};
use beamid::beam::{ParameterField, SpatialGrid};
use beamid::checkpoint::{model_checkpoint, regressor_checkpoint, restore_model, restore_regressor, Checkpoint};
use beamid::eval::{
    elemental_response, parameter_curve, parameter_distances, reference_nodes, write_metrics_csv, Method, MetricsReport,
};
use beamid::field::{fmt_f64, DisplacementField};
use beamid::net::MlpModel;
use beamid::trainer::{draw_samples, identified_fields, train, write_history_csv, SampleSet};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::provenance::{check, write_artifact, Provenance};
use crate::svg::{heatmap, line_plot, Series};

/// File names under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn root(&self) -> &Path {
        &self.root
    }
    pub fn truth(&self) -> PathBuf {
        self.root.join("truth.csv")
    }
    pub fn truth_extended(&self) -> PathBuf {
        self.root.join("truth_extended.csv")
    }
    pub fn truth_fields(&self) -> PathBuf {
        self.root.join("fields_truth.csv")
    }
    pub fn samples(&self) -> PathBuf {
        self.root.join("samples.csv")
    }
    pub fn checkpoint(&self, m: Method) -> PathBuf {
        self.root.join(format!("{m}.ckpt"))
    }
    pub fn history(&self, m: Method) -> PathBuf {
        self.root.join(format!("{m}_history.csv"))
    }
    pub fn identified_fields(&self) -> PathBuf {
        self.root.join("fields_neuralsi.csv")
    }
    pub fn prediction(&self, m: Method) -> PathBuf {
        self.root.join(format!("{m}_prediction.csv"))
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn timing(&self) -> PathBuf {
        self.root.join("timing.csv")
    }
    pub fn plot(&self, name: &str) -> PathBuf {
        self.root.join("plots").join(format!("{name}.svg"))
    }
    pub fn sweep(&self, axis: SweepAxis) -> PathBuf {
        self.root.join(format!("sweep_{}.csv", axis.name()))
    }
}

pub const METHODS: [Method; 3] = [Method::NeuralSi, Method::Dnn, Method::Pinn];

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub rows: usize,
    pub columns: usize,
    pub samples: usize,
    pub save_spacing: f64,
}

fn write_field(path: &Path, prov: &Provenance, field: &DisplacementField) -> CliResult<()> {
    write_artifact(path, prov, |w| Ok(field.write_csv(w)?))
}

fn write_svg(path: &Path, prov: &Provenance, svg: &str) -> CliResult<()> {
    write_artifact(path, prov, |w| Ok(w.write_all(svg.as_bytes())?))
}

/// Node index (0 and n+1 are the supports), x, P and C; C is blank at the supports.
fn write_parameter_csv(path: &Path, prov: &Provenance, grid: &SpatialGrid, fields: &ParameterField) -> CliResult<()> {
    write_artifact(path, prov, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["node", "x", "p", "c"])?;
        let n = grid.n_interior();
        for (i, (x, p)) in grid.all_coords().iter().zip(fields.p()).enumerate() {
            let c = if i == 0 || i == n + 1 { String::new() } else { fmt_f64(fields.c()[i - 1]) };
            wr.write_record([i.to_string(), fmt_f64(*x), fmt_f64(*p), c])?;
        }
        wr.flush()?;
        Ok(())
    })
}

/// Solves the true system and writes the trajectory, its extension over
/// the evaluation horizon, the parameter fields and the sample set.
pub fn generate(cfg: &RunConfig) -> CliResult<GenerateSummary> {
    let layout = Layout::new(&cfg.out_dir);
    let prov = Provenance::of(cfg);
    let problem = cfg.problem()?;
    let fields = problem.truth_fields(&cfg.truth_profile())?;
    let truth = problem.solve(fields.clone())?.displacement();
    let long = problem.solve_extended(fields.clone(), cfg.eval.horizon)?.displacement();
    let samples = draw_samples(&truth, cfg.training.ratio, cfg.seed)?;

    write_field(&layout.truth(), &prov, &truth)?;
    write_field(&layout.truth_extended(), &prov, &long)?;
    write_parameter_csv(&layout.truth_fields(), &prov, problem.grid(), &fields)?;
    write_artifact(&layout.samples(), &prov, |w| Ok(samples.write_csv(w)?))?;
    log::info!(
        "ground truth: {} x {} field, {} samples (digest {}) in {}",
        truth.n_times(),
        truth.n_nodes() + 1,
        samples.len(),
        &samples.digest()[..12],
        layout.root().display()
    );
    Ok(GenerateSummary {
        rows: truth.n_times(),
        columns: truth.n_nodes() + 1,
        samples: samples.len(),
        save_spacing: cfg.solver_config().save_spacing(),
    })
}

struct GroundTruth {
    long: DisplacementField,
    samples: SampleSet,
}

fn read_truth(cfg: &RunConfig, layout: &Layout, prov: &Provenance) -> CliResult<GroundTruth> {
    for p in [layout.truth(), layout.truth_extended(), layout.samples()] {
        check(&p, prov, "generate")?;
    }
    let long = DisplacementField::read_csv(std::fs::File::open(layout.truth_extended())?)?;
    let samples = SampleSet::read_csv(std::fs::File::open(layout.samples())?)?;
    if long.n_nodes() != cfg.grid.n_interior || long.n_times() != cfg.grid.n_save * cfg.eval.horizon + 1 {
        return Err(CliError::Provenance(format!(
            "{} has shape {} x {}, the config expects {} x {}",
            layout.truth_extended().display(),
            long.n_times(),
            long.n_nodes(),
            cfg.grid.n_save * cfg.eval.horizon + 1,
            cfg.grid.n_interior
        )));
    }
    Ok(GroundTruth { long, samples })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub method: Method,
    pub final_loss: f64,
    pub epochs: usize,
    pub seconds: f64,
}

/// Trains `method` on the generated samples and writes its checkpoint and history.
pub fn train_method(cfg: &RunConfig, method: Method) -> CliResult<TrainSummary> {
    let layout = Layout::new(&cfg.out_dir);
    let prov = Provenance::of(cfg);
    let truth = read_truth(cfg, &layout, &prov)?;
    let problem = cfg.problem()?;
    let start = Instant::now();
    let (final_loss, epochs) = match method {
        Method::NeuralSi => {
            let truth_fields = problem.truth_fields(&cfg.truth_profile())?;
            let mut model = MlpModel::new(cfg.model_config(), cfg.seed)?;
            let (opt, history) = train(&problem, &truth.samples, &mut model, &cfg.train_config(), Some(&truth_fields))?;
            let ck = model_checkpoint(&model, &opt);
            write_artifact(&layout.checkpoint(method), &prov, |w| Ok(ck.write(w)?))?;
            write_artifact(&layout.history(method), &prov, |w| Ok(write_history_csv(&history, w)?))?;
            let found = identified_fields(&problem, &model)?;
            write_parameter_csv(&layout.identified_fields(), &prov, problem.grid(), &found)?;
            (history.last().map_or(f64::NAN, |r| r.mean_loss), history.len())
        }
        Method::Dnn | Method::Pinn => {
            let u = truth.samples.samples().iter().fold(0.0f64, |m, s| m.max(s.value.abs()));
            if u == 0.0 {
                return Err(CliError::Core(beamid::Error::Invalid("all samples are zero; nothing to regress".into())));
            }
            let (bcfg, epochs) = if method == Method::Dnn {
                (cfg.dnn_config()?, cfg.dnn.epochs)
            } else {
                (cfg.pinn_config()?, cfg.pinn.epochs)
            };
            let mut model = RegressorModel::new(&bcfg, cfg.beam.length, cfg.grid.t_end, u)?;
            let history = if method == Method::Dnn {
                train_dnn(&mut model, &problem, &truth.samples, &bcfg, epochs)?
            } else {
                train_pinn(&mut model, &problem, &truth.samples, cfg.pinn_loss()?, &bcfg, epochs)?
            };
            let last = *history.last().expect("history holds the initial loss");
            if !last.is_finite() {
                return Err(CliError::Core(beamid::Error::TrainingAborted(format!("{method} loss became {last}"))));
            }
            let ck = regressor_checkpoint(&model, method.tag())?;
            write_artifact(&layout.checkpoint(method), &prov, |w| Ok(ck.write(w)?))?;
            write_artifact(&layout.history(method), &prov, |w| {
                let mut wr = csv::Writer::from_writer(w);
                wr.write_record(["iteration", "loss"])?;
                for (i, l) in history.iter().enumerate() {
                    wr.write_record([i.to_string(), fmt_f64(*l)])?;
                }
                wr.flush()?;
                Ok(())
            })?;
            (last, history.len() - 1)
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    log::info!("{method}: final loss {final_loss:.6e} after {epochs} epochs, {seconds:.1} s");
    Ok(TrainSummary { method, final_loss, epochs, seconds })
}

struct Prediction {
    report: MetricsReport,
    field: DisplacementField,
    fields: Option<ParameterField>,
}

fn predict(cfg: &RunConfig, layout: &Layout, prov: &Provenance, method: Method, truth: &GroundTruth) -> CliResult<Prediction> {
    let path = layout.checkpoint(method);
    check(&path, prov, &format!("train --method {method}"))?;
    let ck = Checkpoint::load(&path)?;
    let problem = cfg.problem()?;
    let start = Instant::now();
    let (field, fields) = match method {
        Method::NeuralSi => {
            let (model, _) = restore_model(&ck)?;
            let found = identified_fields(&problem, &model)?;
            let field = problem.solve_extended(found.clone(), cfg.eval.horizon)?.displacement();
            (field, Some(found))
        }
        Method::Dnn | Method::Pinn => {
            let (model, kind) = restore_regressor(&ck)?;
            if kind != method.tag() {
                return Err(CliError::Provenance(format!("{} holds a {kind} model", path.display())));
            }
            (model.predict_field(&problem.grid().interior_coords(), truth.long.times())?, None)
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    if !field.same_shape(&truth.long) {
        return Err(CliError::Provenance(format!("{method} prediction does not match the truth grid")));
    }
    let params = match &fields {
        Some(f) => Some(parameter_distances(problem.grid(), &problem.truth_fields(&cfg.truth_profile())?, f)?),
        None => None,
    };
    let report = MetricsReport::from_fields(method, &truth.long, &field, cfg.grid.t_end, params, seconds)?;
    Ok(Prediction { report, field, fields })
}

/// Evaluates `only`, or every method with a checkpoint, and writes metrics,
/// timings, predictions and plots.
pub fn eval(cfg: &RunConfig, only: Option<Method>) -> CliResult<Vec<MetricsReport>> {
    let layout = Layout::new(&cfg.out_dir);
    let prov = Provenance::of(cfg);
    let truth = read_truth(cfg, &layout, &prov)?;
    let methods: Vec<Method> = match only {
        Some(m) => vec![m],
        None => METHODS.iter().copied().filter(|m| layout.checkpoint(*m).exists()).collect(),
    };
    if methods.is_empty() {
        return Err(CliError::Missing(format!(
            "no checkpoints in {}; run `beamid train --method <neuralsi|dnn|pinn>` first",
            layout.root().display()
        )));
    }
    let mut preds = Vec::new();
    for m in methods {
        let p = predict(cfg, &layout, &prov, m, &truth)?;
        log::info!(
            "{m}: interp MAE {:.3e} m, extrap MAE {:.3e} m, peak error ratio {:.3e}",
            p.report.interpolation_mae,
            p.report.extrapolation_mae,
            p.report.peak_error_ratio
        );
        preds.push(p);
    }
    let reports: Vec<MetricsReport> = preds.iter().map(|p| p.report.clone()).collect();
    write_artifact(&layout.metrics(), &prov, |w| Ok(write_metrics_csv(&reports, w)?))?;
    write_artifact(&layout.timing(), &prov, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["method", "inference_seconds"])?;
        for r in &reports {
            wr.write_record([r.method.tag().to_string(), format!("{:.6}", r.inference_seconds)])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    write_plots(cfg, &layout, &prov, &truth, &preds)?;
    Ok(reports)
}

fn write_plots(cfg: &RunConfig, layout: &Layout, prov: &Provenance, truth: &GroundTruth, preds: &[Prediction]) -> CliResult<()> {
    write_svg(&layout.plot("field_truth"), prov, &heatmap(&truth.long, "ground truth displacement (m)"))?;
    for p in preds {
        let m = p.report.method;
        write_field(&layout.prediction(m), prov, &p.field)?;
        write_svg(&layout.plot(&format!("field_{m}")), prov, &heatmap(&p.field, &format!("{m} displacement (m)")))?;
        let err: Vec<f64> = p.field.values().iter().zip(truth.long.values()).map(|(a, b)| (a - b).abs()).collect();
        let err = DisplacementField::new(truth.long.times().to_vec(), truth.long.n_nodes(), err)?;
        write_svg(&layout.plot(&format!("error_{m}")), prov, &heatmap(&err, &format!("{m} absolute error (m)")))?;
    }

    let times = truth.long.times();
    let (mid, quarter) = reference_nodes(cfg.grid.n_interior);
    for (name, node) in [("midspan", mid), ("quarter", quarter)] {
        let series_of = |f: &DisplacementField| -> CliResult<Vec<(f64, f64)>> {
            Ok(times.iter().copied().zip(elemental_response(f, node)?).collect())
        };
        let mut series = vec![Series { name: "truth", points: series_of(&truth.long)?, dashed: false }];
        for p in preds {
            series.push(Series { name: p.report.method.tag(), points: series_of(&p.field)?, dashed: true });
        }
        let title = format!("{name} response (node {})", node + 1);
        let svg = line_plot(&title, "time (s)", "displacement (m)", &series, Some(cfg.grid.t_end));
        write_svg(&layout.plot(&format!("response_{name}")), prov, &svg)?;
    }

    if let Some(found) = preds.iter().find_map(|p| p.fields.as_ref()) {
        let problem = cfg.problem()?;
        let grid = problem.grid();
        let truth_fields = problem.truth_fields(&cfg.truth_profile())?;
        let xs = grid.all_coords();
        let p_curve = |f: &ParameterField| xs.iter().copied().zip(f.p().iter().copied()).collect::<Vec<_>>();
        let p_series = [
            Series { name: "truth", points: p_curve(&truth_fields), dashed: false },
            Series { name: "neuralsi", points: p_curve(found), dashed: true },
        ];
        write_svg(&layout.plot("parameter_p"), prov, &line_plot("stiffness factor P", "x (m)", "P", &p_series, None))?;
        let c_series = [
            Series { name: "truth", points: parameter_curve(grid, truth_fields.c()), dashed: false },
            Series { name: "neuralsi", points: parameter_curve(grid, found.c()), dashed: true },
        ];
        write_svg(&layout.plot("parameter_c"), prov, &line_plot("damping C", "x (m)", "C (N s/m^2)", &c_series, None))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepAxis {
    Layers,
    Ratio,
    Batch,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Layers => "layers",
            SweepAxis::Ratio => "ratio",
            SweepAxis::Batch => "batch",
        }
    }

    fn apply(self, cfg: &mut RunConfig, value: &str) -> CliResult<()> {
        let bad = || CliError::Config(format!("sweep value {value:?} is not valid for {}", self.name()));
        match self {
            SweepAxis::Layers => cfg.model.n_layers = value.trim().parse().map_err(|_| bad())?,
            SweepAxis::Ratio => cfg.training.ratio = value.trim().parse().map_err(|_| bad())?,
            SweepAxis::Batch => cfg.training.batch_size = value.trim().parse().map_err(|_| bad())?,
        }
        Ok(())
    }
}

pub const SWEEP_HEADER: [&str; 12] = [
    "axis",
    "value",
    "status",
    "final_loss",
    "interp_mae",
    "extrap_mae",
    "interp_peak_error_ratio",
    "frechet_p",
    "frechet_c",
    "frechet_p_normalized",
    "frechet_c_normalized",
    "message",
];

fn run_cell(cell: &RunConfig) -> CliResult<(TrainSummary, MetricsReport)> {
    cell.validate()?;
    generate(cell)?;
    let summary = train_method(cell, Method::NeuralSi)?;
    let report = eval(cell, Some(Method::NeuralSi))?.remove(0);
    Ok((summary, report))
}

/// Runs generate, train and eval for NeuralSI at each value, each cell in
/// its own subdirectory. A failing cell is recorded and the sweep continues.
pub fn sweep(cfg: &RunConfig, axis: SweepAxis, values: &[String]) -> CliResult<PathBuf> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let layout = Layout::new(&cfg.out_dir);
    let mut cells = Vec::new();
    for v in values {
        let mut cell = cfg.clone();
        axis.apply(&mut cell, v)?;
        cell.out_dir = cfg.out_dir.join(format!("sweep_{}", axis.name())).join(format!("{}_{}", axis.name(), v.trim()));
        cells.push((v.trim().to_string(), cell));
    }
    let mut rows = Vec::new();
    for (v, cell) in &cells {
        log::info!("sweep {} = {v}", axis.name());
        let mut row = vec![axis.name().to_string(), v.clone()];
        match run_cell(cell) {
            Ok((s, r)) => {
                let p = r.parameters.expect("NeuralSI reports parameter distances");
                row.push("ok".into());
                row.extend(
                    [s.final_loss, r.interpolation_mae, r.extrapolation_mae, r.peak_error_ratio, p.p, p.c, p.p_normalized, p.c_normalized]
                        .map(fmt_f64),
                );
                row.push(String::new());
            }
            Err(e) => {
                log::warn!("sweep {} = {v} failed: {e}", axis.name());
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), 8));
                row.push(e.to_string().replace(['\n', '\r'], " "));
            }
        }
        rows.push(row);
    }
    let path = layout.sweep(axis);
    write_artifact(&path, &Provenance::of(cfg), |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(SWEEP_HEADER)?;
        for r in &rows {
            wr.write_record(r)?;
        }
        wr.flush()?;
        Ok(())
    })?;
    Ok(path)
}
