//! Run configuration: one TOML file covering the beam, grid, load, ground
//! truth, NeuralSI training and both baselines.

use std::path::{Path, PathBuf};

use beamid::baselines::{BaselineConfig, DataLoss, LbfgsConfig, PinnLoss, ResidualFields};
use beamid::beam::{BeamSpec, LoadModel, TruthProfile};
use beamid::net::{Activation, AdamWConfig, EmbeddingConfig, ModelConfig};
use beamid::problem::BeamProblem;
use beamid::solver::{SolverConfig, StepControl};
use beamid::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub beam: BeamBlock,
    pub grid: GridBlock,
    pub load: LoadBlock,
    pub truth: TruthBlock,
    pub model: ModelBlock,
    pub training: TrainingBlock,
    pub dnn: BaselineBlock,
    pub pinn: PinnBlock,
    pub eval: EvalBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamBlock {
    pub length: f64,
    pub width: f64,
    pub thickness: f64,
    pub density: f64,
    pub modulus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridBlock {
    pub n_interior: usize,
    pub n_save: usize,
    pub t_end: f64,
    /// Internal RK4 step in seconds; 0 picks the stability-bound step.
    pub step: f64,
    pub step_safety: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadBlock {
    pub amplitude: f64,
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthBlock {
    pub p_offset: f64,
    pub p_amplitude: f64,
    pub p_periods: f64,
    pub c_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub embedding_dim: usize,
    pub embedding_base: f64,
    pub lowest_frequency: f64,
    pub n_layers: usize,
    pub hidden: usize,
    pub activation: String,
    pub p_min: f64,
    pub p_max: f64,
    pub p_gain: f64,
    pub c_scale: f64,
    pub zero_output_init: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingBlock {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_epochs: usize,
    pub late_lr: f64,
    pub ratio: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_skip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineBlock {
    pub epochs: usize,
    pub width: usize,
    pub n_layers: usize,
    pub hard_boundary: bool,
    pub data_loss: String,
    pub lbfgs_memory: usize,
    pub lbfgs_step: f64,
    pub max_halvings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PinnBlock {
    pub epochs: usize,
    pub width: usize,
    pub n_layers: usize,
    pub hard_boundary: bool,
    pub data_loss: String,
    pub lbfgs_memory: usize,
    pub lbfgs_step: f64,
    pub max_halvings: usize,
    pub w_data: f64,
    pub w_pde: f64,
    pub w_bc: f64,
    pub n_x: usize,
    pub n_t: usize,
    /// `truth` uses P0 and C0 in the residual, `constant` uses the values below.
    pub residual_fields: String,
    pub constant_p: f64,
    pub constant_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBlock {
    pub horizon: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            beam: BeamBlock::default(),
            grid: GridBlock::default(),
            load: LoadBlock::default(),
            truth: TruthBlock::default(),
            model: ModelBlock::default(),
            training: TrainingBlock::default(),
            dnn: BaselineBlock::default(),
            pinn: PinnBlock::default(),
            eval: EvalBlock::default(),
        }
    }
}

impl Default for BeamBlock {
    fn default() -> Self {
        let b = BeamSpec::default();
        Self { length: b.length(), width: b.width(), thickness: b.thickness(), density: b.density(), modulus: b.modulus() }
    }
}

impl Default for GridBlock {
    fn default() -> Self {
        let s = SolverConfig::default();
        let safety = match s.step {
            StepControl::Auto { safety } => safety,
            StepControl::Fixed(_) => 0.5,
        };
        Self { n_interior: 16, n_save: s.n_save, t_end: s.t_end, step: 0.0, step_safety: safety }
    }
}

impl Default for LoadBlock {
    fn default() -> Self {
        let l = LoadModel::default();
        Self { amplitude: l.amplitude, cutoff: l.cutoff }
    }
}

impl Default for TruthBlock {
    fn default() -> Self {
        let t = TruthProfile::default();
        Self { p_offset: t.p_offset, p_amplitude: t.p_amplitude, p_periods: t.p_periods, c_max: t.c_max }
    }
}

impl Default for ModelBlock {
    /// Library defaults except for the tuned embedding width, damping scale
    /// and zero-initialised output layers.
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            embedding_dim: 8,
            embedding_base: m.embedding.base,
            lowest_frequency: m.embedding.lowest_frequency,
            n_layers: m.n_layers,
            hidden: m.hidden,
            activation: m.activation.name().to_string(),
            p_min: m.p_min,
            p_max: m.p_max,
            p_gain: m.p_gain,
            c_scale: 0.03,
            zero_output_init: true,
        }
    }
}

impl Default for TrainingBlock {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            lr_epochs: t.lr_epochs,
            late_lr: t.late_lr,
            ratio: t.ratio,
            weight_decay: t.optimizer.weight_decay,
            beta1: t.optimizer.beta1,
            beta2: t.optimizer.beta2,
            eps: t.optimizer.eps,
            max_skip_fraction: t.max_skip_fraction,
        }
    }
}

impl Default for BaselineBlock {
    fn default() -> Self {
        let b = BaselineConfig::default();
        Self {
            epochs: 500,
            width: b.width,
            n_layers: b.n_layers,
            hard_boundary: b.hard_boundary,
            data_loss: b.data_loss.name().to_string(),
            lbfgs_memory: b.lbfgs.memory,
            lbfgs_step: b.lbfgs.step,
            max_halvings: b.lbfgs.max_halvings,
        }
    }
}

impl Default for PinnBlock {
    fn default() -> Self {
        let l = PinnLoss::default();
        let b = BaselineBlock::default();
        Self {
            epochs: 3700,
            width: b.width,
            n_layers: b.n_layers,
            hard_boundary: b.hard_boundary,
            data_loss: b.data_loss,
            lbfgs_memory: b.lbfgs_memory,
            lbfgs_step: b.lbfgs_step,
            max_halvings: b.max_halvings,
            w_data: l.w_data,
            w_pde: l.w_pde,
            w_bc: l.w_bc,
            n_x: l.n_x,
            n_t: l.n_t,
            residual_fields: "truth".into(),
            constant_p: 1.0,
            constant_c: 0.0,
        }
    }
}

impl PinnBlock {
    pub fn net(&self) -> BaselineBlock {
        BaselineBlock {
            epochs: self.epochs,
            width: self.width,
            n_layers: self.n_layers,
            hard_boundary: self.hard_boundary,
            data_loss: self.data_loss.clone(),
            lbfgs_memory: self.lbfgs_memory,
            lbfgs_step: self.lbfgs_step,
            max_halvings: self.max_halvings,
        }
    }
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self { horizon: 2 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.message().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; a relative `out_dir` is kept relative to the working directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    /// SHA-256 of the canonical serialisation, so formatting and comments
    /// in the source file do not change it. The output directory is excluded.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out_dir = PathBuf::new();
        hex::encode(Sha256::digest(canon.to_toml().as_bytes()))
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.beam_spec()?;
        if self.grid.n_save == 0 || !(self.grid.t_end > 0.0) {
            return bad("grid.n_save and grid.t_end must be positive".into());
        }
        if self.grid.step < 0.0 || !(self.grid.step_safety > 0.0) {
            return bad("grid.step must be >= 0 and grid.step_safety > 0".into());
        }
        if self.eval.horizon < 2 {
            return bad("eval.horizon must be at least 2 so there is an extrapolation window".into());
        }
        if !(self.training.ratio > 0.0 && self.training.ratio <= 1.0) {
            return bad(format!("training.ratio must lie in (0, 1], got {}", self.training.ratio));
        }
        Activation::parse(&self.model.activation).map_err(config_err)?;
        self.model_config().validate().map_err(config_err)?;
        self.dnn_config()?;
        self.pinn_config()?;
        self.pinn_loss()?.validate().map_err(config_err)?;
        Ok(())
    }

    pub fn beam_spec(&self) -> CliResult<BeamSpec> {
        let b = &self.beam;
        BeamSpec::new(b.length, b.width, b.thickness, b.density, b.modulus).map_err(config_err)
    }

    pub fn solver_config(&self) -> SolverConfig {
        let step = if self.grid.step > 0.0 {
            StepControl::Fixed(self.grid.step)
        } else {
            StepControl::Auto { safety: self.grid.step_safety }
        };
        SolverConfig { t_end: self.grid.t_end, n_save: self.grid.n_save, step }
    }

    pub fn load_model(&self) -> LoadModel {
        LoadModel { amplitude: self.load.amplitude, cutoff: self.load.cutoff }
    }

    pub fn truth_profile(&self) -> TruthProfile {
        let t = &self.truth;
        TruthProfile { p_offset: t.p_offset, p_amplitude: t.p_amplitude, p_periods: t.p_periods, c_max: t.c_max }
    }

    /// The step schedule is sized for the stiffest field the network can emit.
    pub fn problem(&self) -> CliResult<BeamProblem> {
        BeamProblem::new(self.beam_spec()?, self.grid.n_interior, self.load_model(), self.solver_config(), self.model.p_max)
            .map_err(CliError::from)
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            embedding: EmbeddingConfig { dim: m.embedding_dim, base: m.embedding_base, lowest_frequency: m.lowest_frequency },
            n_layers: m.n_layers,
            hidden: m.hidden,
            activation: Activation::parse(&m.activation).unwrap_or(Activation::Tanh),
            p_min: m.p_min,
            p_max: m.p_max,
            p_gain: m.p_gain,
            c_scale: m.c_scale,
            zero_output_init: m.zero_output_init,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            lr_epochs: t.lr_epochs,
            late_lr: t.late_lr,
            ratio: t.ratio,
            seed: self.seed,
            optimizer: AdamWConfig { lr: t.lr, beta1: t.beta1, beta2: t.beta2, eps: t.eps, weight_decay: t.weight_decay },
            max_skip_fraction: t.max_skip_fraction,
        }
    }

    fn baseline(&self, b: &BaselineBlock) -> CliResult<BaselineConfig> {
        let cfg = BaselineConfig {
            width: b.width,
            n_layers: b.n_layers,
            hard_boundary: b.hard_boundary,
            data_loss: DataLoss::parse(&b.data_loss).map_err(config_err)?,
            lbfgs: LbfgsConfig { memory: b.lbfgs_memory, step: b.lbfgs_step, max_halvings: b.max_halvings, ..Default::default() },
            seed: self.seed,
        };
        if cfg.width == 0 || cfg.n_layers < 2 || cfg.lbfgs.memory == 0 || !(cfg.lbfgs.step > 0.0) {
            return Err(CliError::Config("baseline width, layers (>= 2), L-BFGS memory and step must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn dnn_config(&self) -> CliResult<BaselineConfig> {
        self.baseline(&self.dnn)
    }

    pub fn pinn_config(&self) -> CliResult<BaselineConfig> {
        self.baseline(&self.pinn.net())
    }

    pub fn pinn_loss(&self) -> CliResult<PinnLoss> {
        let p = &self.pinn;
        let fields = match p.residual_fields.as_str() {
            "truth" => ResidualFields::Truth(self.truth_profile()),
            "constant" => ResidualFields::Constant { p: p.constant_p, c: p.constant_c },
            other => return Err(CliError::Config(format!("pinn.residual_fields must be truth or constant, got {other:?}"))),
        };
        Ok(PinnLoss { w_data: p.w_data, w_pde: p.w_pde, w_bc: p.w_bc, n_x: p.n_x, n_t: p.n_t, fields })
    }
}

fn config_err(e: beamid::Error) -> CliError {
    CliError::Config(e.to_string())
}
