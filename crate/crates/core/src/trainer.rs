//! Identification loop: sparse displacement samples, minibatched MAE through
//! the solver adjoint, AdamW on the parameter network.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::beam::ParameterField;
use crate::error::{Error, Result};
use crate::eval::parameter_distances;
use crate::field::{csv_err, fmt_f64, parse_f64, DisplacementField};
use crate::net::{AdamWConfig, AdamWState, MlpModel};
use crate::problem::BeamProblem;
use crate::solver::{beam_adjoint_gradients, SampleCotangent};

/// One observed displacement: interior node (0-based), save index (1-based,
/// row of the trajectory) and value in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub node: usize,
    pub save: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    samples: Vec<Sample>,
    n_nodes: usize,
    n_save: usize,
    seed: u64,
    ratio: f64,
}

/// Number of samples a ratio selects from an `n_nodes x n_save` grid.
pub fn sample_count(ratio: f64, n_nodes: usize, n_save: usize) -> usize {
    (ratio * (n_nodes * n_save) as f64).round() as usize
}

/// Uniform random subset without replacement of the entries at save
/// indices `1..=n_save` (the resting initial row carries no information).
pub fn draw_samples(truth: &DisplacementField, ratio: f64, seed: u64) -> Result<SampleSet> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Invalid(format!("sample ratio must be in (0, 1], got {ratio}")));
    }
    let n_nodes = truth.n_nodes();
    let n_save = truth.n_times() - 1;
    let count = sample_count(ratio, n_nodes, n_save);
    if count == 0 {
        return Err(Error::Empty(format!("ratio {ratio} selects no samples from {n_nodes}x{n_save}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, n_nodes * n_save, count).into_vec();
    picks.sort_unstable();
    let samples = picks
        .into_iter()
        .map(|k| {
            let (save, node) = (k / n_nodes + 1, k % n_nodes);
            Sample { node, save, value: truth.get(save, node) }
        })
        .collect();
    Ok(SampleSet { samples, n_nodes, n_save, seed, ratio })
}

impl SampleSet {
    pub fn new(samples: Vec<Sample>, n_nodes: usize, n_save: usize, seed: u64, ratio: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("sample set".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &samples {
            if s.node >= n_nodes || s.save == 0 || s.save > n_save {
                return Err(Error::Shape(format!("sample at node {} save {} outside {n_nodes}x{n_save}", s.node, s.save)));
            }
            if !seen.insert((s.node, s.save)) {
                return Err(Error::Invalid(format!("duplicate sample at node {} save {}", s.node, s.save)));
            }
            if !s.value.is_finite() {
                return Err(Error::NonFinite { index: s.node, context: "sample value".into() });
            }
        }
        Ok(Self { samples, n_nodes, n_save, seed, ratio })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }
    pub fn n_save(&self) -> usize {
        self.n_save
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// SHA-256 over the grid shape and every sample's bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_nodes as u64).to_le_bytes());
        h.update((self.n_save as u64).to_le_bytes());
        for s in &self.samples {
            h.update((s.node as u64).to_le_bytes());
            h.update((s.save as u64).to_le_bytes());
            h.update(s.value.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// CSV with a `# key=value` preamble line carrying shape, seed and ratio.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# n_nodes={} n_save={} seed={} ratio={}",
            self.n_nodes,
            self.n_save,
            self.seed,
            fmt_f64(self.ratio)
        )?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["node", "save", "value"]).map_err(csv_err)?;
        for s in &self.samples {
            wr.write_record([s.node.to_string(), s.save.to_string(), fmt_f64(s.value)]).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut text = String::new();
        std::io::BufReader::new(r).read_to_string(&mut text)?;
        let (pre, body) = text.split_once('\n').ok_or_else(|| Error::Csv("empty sample file".into()))?;
        let meta: std::collections::HashMap<&str, &str> = pre
            .strip_prefix("# ")
            .ok_or_else(|| Error::Csv("missing sample preamble".into()))?
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let get = |k: &str| meta.get(k).copied().ok_or_else(|| Error::Csv(format!("preamble lacks {k}")));
        let int = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| Error::Csv(format!("bad {k}"))) };
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let mut samples = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let idx = |i: usize| -> Result<usize> { rec[i].parse().map_err(|_| Error::Csv(format!("bad index {:?}", &rec[i]))) };
            samples.push(Sample { node: idx(0)?, save: idx(1)?, value: parse_f64(&rec[2])? });
        }
        Self::new(samples, int("n_nodes")? as usize, int("n_save")? as usize, int("seed")?, parse_f64(get("ratio")?)?)
    }
}

/// MAE subgradient of `|pred - obs|` with respect to `pred`: the sign of the
/// residual, and 0 at an exact tie.
pub fn subgradient_at_ties(pred: f64, obs: f64) -> f64 {
    if pred > obs {
        1.0
    } else if pred < obs {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error over the samples at `subset`, and the matching
/// displacement cotangents (`±1/|subset|`).
pub fn mae_loss(pred: &DisplacementField, samples: &SampleSet, subset: &[usize]) -> Result<(f64, Vec<SampleCotangent>)> {
    if subset.is_empty() {
        return Err(Error::Empty("minibatch".into()));
    }
    if pred.n_nodes() != samples.n_nodes || pred.n_times() != samples.n_save + 1 {
        return Err(Error::Shape(format!(
            "prediction of {}x{} rows for samples on {}x{}",
            pred.n_times(),
            pred.n_nodes(),
            samples.n_save + 1,
            samples.n_nodes
        )));
    }
    let w = 1.0 / subset.len() as f64;
    let mut loss = 0.0;
    let mut cots = Vec::with_capacity(subset.len());
    for &k in subset {
        let s = samples
            .samples
            .get(k)
            .ok_or_else(|| Error::Shape(format!("minibatch index {k} outside {} samples", samples.len())))?;
        let u = pred.get(s.save, s.node);
        loss += (u - s.value).abs();
        cots.push(SampleCotangent { component: s.node, save: s.save, weight: w * subgradient_at_ties(u, s.value) });
    }
    Ok((loss * w, cots))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs (1-based, inclusive) trained at `lr`; later epochs use `late_lr`.
    pub lr_epochs: usize,
    pub late_lr: f64,
    pub ratio: f64,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    /// Fraction of skipped minibatches in one epoch that aborts training.
    pub max_skip_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr: 0.01,
            lr_epochs: 10,
            late_lr: 0.001,
            ratio: 0.2,
            seed: 0,
            optimizer: AdamWConfig::default(),
            max_skip_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > n_samples {
            return Err(Error::Invalid(format!("minibatch size {} must be in 1..={n_samples}", self.batch_size)));
        }
        if !(self.lr > 0.0 && self.late_lr > 0.0) {
            return Err(Error::Invalid("learning rates must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate of a 1-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch <= self.lr_epochs {
            self.lr
        } else {
            self.late_lr
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub frechet_p: f64,
    pub frechet_c: f64,
    pub skipped: usize,
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["epoch", "mean_loss", "lr", "frechet_P", "frechet_C"]).map_err(csv_err)?;
    for r in history {
        wr.write_record([r.epoch.to_string(), fmt_f64(r.mean_loss), fmt_f64(r.lr), fmt_f64(r.frechet_p), fmt_f64(r.frechet_c)])
            .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Shuffled partition of `0..n` into consecutive minibatches; the last may be short.
pub fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Loss and flat network gradient of one minibatch: one PDE solve, one
/// reverse sweep, one network backward pass.
pub fn minibatch_gradient(
    problem: &BeamProblem,
    model: &MlpModel,
    samples: &SampleSet,
    batch: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let (fields, tape) = model.forward_fields(problem.grid())?;
    let sys = problem.system(fields)?;
    let (traj, solver_tape) = problem.integrate(&sys)?;
    let (loss, cots) = mae_loss(&traj.displacement(), samples, batch)?;
    let (dp, dc) = beam_adjoint_gradients(&solver_tape, &sys, &cots)?;
    let grad = model.backward_fields(&tape, &dp, &dc)?;
    Ok((loss, grad))
}

/// Fields the model currently predicts.
pub fn identified_fields(problem: &BeamProblem, model: &MlpModel) -> Result<ParameterField> {
    Ok(model.forward_fields(problem.grid())?.0)
}

/// Trains `model` in place. `truth_fields`, when given, only feeds the
/// Fréchet columns of the history.
pub fn train(
    problem: &BeamProblem,
    samples: &SampleSet,
    model: &mut MlpModel,
    cfg: &TrainConfig,
    truth_fields: Option<&ParameterField>,
) -> Result<(AdamWState, Vec<EpochRecord>)> {
    cfg.validate(samples.len())?;
    let mut opt = AdamWState::new(model.n_params(), cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        opt.set_lr(lr);
        let batches = epoch_batches(samples.len(), cfg.batch_size, &mut rng);
        let (mut total, mut counted, mut skipped) = (0.0, 0usize, 0usize);
        for (b, batch) in batches.iter().enumerate() {
            let step = minibatch_gradient(problem, model, samples, batch).and_then(|(loss, grad)| {
                let mut params = model.to_flat();
                opt.update(&mut params, &grad)?;
                model.load_flat(&params)?;
                Ok(loss)
            });
            match step {
                Ok(loss) => {
                    total += loss * batch.len() as f64;
                    counted += batch.len();
                }
                Err(e) if e.is_numerical() => {
                    log::warn!("epoch {epoch}, minibatch {b}: skipped ({e})");
                    skipped += 1;
                    if skipped as f64 > cfg.max_skip_fraction * batches.len() as f64 {
                        return Err(Error::TrainingAborted(format!(
                            "{skipped} of {} minibatches failed in epoch {epoch}; last error: {e}",
                            batches.len()
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        let mean_loss = if counted > 0 { total / counted as f64 } else { f64::NAN };
        let (frechet_p, frechet_c) = match truth_fields {
            Some(t) => {
                let d = parameter_distances(problem.grid(), t, &identified_fields(problem, model)?)?;
                (d.p, d.c)
            }
            None => (f64::NAN, f64::NAN),
        };
        log::info!("epoch {epoch:>3}  loss {mean_loss:.6e}  lr {lr:.1e}  frechet P {frechet_p:.4e}  C {frechet_c:.4e}");
        history.push(EpochRecord { epoch, mean_loss, lr, frechet_p, frechet_c, skipped });
    }
    Ok((opt, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_field(n_nodes: usize, n_save: usize) -> DisplacementField {
        let times = (0..=n_save).map(|s| s as f64).collect();
        let vals = (0..(n_save + 1) * n_nodes).map(|k| (k as f64 * 0.7).sin()).collect();
        DisplacementField::new(times, n_nodes, vals).unwrap()
    }

    #[test]
    fn sample_counts_follow_ratio() {
        let f = grid_field(16, 160);
        assert_eq!(draw_samples(&f, 1.0, 1).unwrap().len(), 2560);
        assert_eq!(draw_samples(&f, 0.2, 1).unwrap().len(), 512);
        assert!(draw_samples(&f, 1e-5, 1).is_err());
        assert!(draw_samples(&f, 1.5, 1).is_err());
    }

    #[test]
    fn samples_are_unique_seeded_and_in_bounds() {
        let f = grid_field(16, 160);
        let a = draw_samples(&f, 0.2, 9).unwrap();
        let b = draw_samples(&f, 0.2, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), draw_samples(&f, 0.2, 10).unwrap().digest());
        let mut keys: Vec<_> = a.samples().iter().map(|s| (s.save, s.node)).collect();
        keys.dedup();
        assert_eq!(keys.len(), 512);
        assert!(a.samples().iter().all(|s| s.save >= 1 && s.save <= 160 && s.node < 16));
        assert!(a.samples().iter().all(|s| s.value == f.get(s.save, s.node)));
    }

    #[test]
    fn sample_csv_round_trip() {
        let a = draw_samples(&grid_field(4, 10), 0.5, 3).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(SampleSet::read_csv(buf.as_slice()).unwrap(), a);
    }

    #[test]
    fn mae_examples() {
        let f = grid_field(16, 160);
        let s = draw_samples(&f, 0.2, 4).unwrap();
        let batch: Vec<usize> = (0..16).collect();
        let (l, cots) = mae_loss(&f, &s, &batch).unwrap();
        assert_eq!(l, 0.0);
        assert!(cots.iter().all(|c| c.weight == 0.0));
        let shifted = DisplacementField::new(f.times().to_vec(), 16, f.values().iter().map(|v| v + 1e-3).collect()).unwrap();
        let (l, cots) = mae_loss(&shifted, &s, &batch).unwrap();
        assert!((l - 1e-3).abs() < 1e-15);
        assert!(cots.iter().all(|c| c.weight == 1.0 / 16.0));
        assert!(mae_loss(&f, &s, &[]).is_err());
    }

    #[test]
    fn ties_have_zero_subgradient() {
        assert_eq!(subgradient_at_ties(0.25, 0.25), 0.0);
        let up = f64::from_bits(0.25f64.to_bits() + 1);
        let down = f64::from_bits(0.25f64.to_bits() - 1);
        assert_eq!(subgradient_at_ties(up, 0.25), 1.0);
        assert_eq!(subgradient_at_ties(down, 0.25), -1.0);
    }

    #[test]
    fn epoch_visits_every_sample_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = epoch_batches(50, 16, &mut rng);
        assert_eq!(batches.len(), 4);
        assert_eq!(batches[3].len(), 2);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(1), 0.01);
        assert_eq!(c.lr_at(10), 0.01);
        assert_eq!(c.lr_at(11), 0.001);
        assert!(c.validate(8).is_err());
        assert!(TrainConfig { epochs: 0, ..c }.validate(100).is_err());
    }
}
