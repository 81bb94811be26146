//! A beam, its discretisation and a fixed step schedule, shared by data
//! generation, training and evaluation so every solve uses identical steps.

use crate::beam::{build_operators, BeamSpec, BeamSystem, LoadModel, ParameterField, SpatialGrid, SpatialOperators, TruthProfile};
use crate::error::{Error, Result};
use crate::solver::{estimate_stable_step, integrate, solve, OdeSystem, SolverConfig, StepControl, Tape, TimeGrid, Trajectory};

#[derive(Debug, Clone)]
pub struct BeamProblem {
    spec: BeamSpec,
    grid: SpatialGrid,
    ops: SpatialOperators,
    load: LoadModel,
    solver: SolverConfig,
    time_grid: TimeGrid,
}

impl BeamProblem {
    /// With `StepControl::Auto`, the step is the stable step of a uniform
    /// beam with coefficient `p_bound`, so any field bounded by it shares
    /// one schedule.
    pub fn new(spec: BeamSpec, n_interior: usize, load: LoadModel, solver: SolverConfig, p_bound: f64) -> Result<Self> {
        if !(p_bound > 0.0 && p_bound.is_finite()) {
            return Err(Error::Invalid(format!("step reference coefficient must be positive, got {p_bound}")));
        }
        let grid = SpatialGrid::for_beam(&spec, n_interior)?;
        let ops = build_operators(&grid)?;
        let h = match solver.step {
            StepControl::Auto { safety } => {
                let reference = BeamSystem::new(spec, ops.clone(), ParameterField::uniform(n_interior, p_bound, 0.0)?, load)?;
                estimate_stable_step(&reference, safety)?
            }
            StepControl::Fixed(h) => h,
        };
        let time_grid = TimeGrid::new(solver.t_end, solver.n_save, h, &[load.cutoff])?;
        Ok(Self { spec, grid, ops, load, solver, time_grid })
    }

    pub fn spec(&self) -> &BeamSpec {
        &self.spec
    }
    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }
    pub fn ops(&self) -> &SpatialOperators {
        &self.ops
    }
    pub fn load(&self) -> &LoadModel {
        &self.load
    }
    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }
    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }
    pub fn n(&self) -> usize {
        self.grid.n_interior()
    }

    pub fn system(&self, fields: ParameterField) -> Result<BeamSystem> {
        BeamSystem::new(self.spec, self.ops.clone(), fields, self.load)
    }

    pub fn truth_fields(&self, profile: &TruthProfile) -> Result<ParameterField> {
        profile.fields(&self.grid)
    }

    pub fn solve(&self, fields: ParameterField) -> Result<Trajectory> {
        let sys = self.system(fields)?;
        solve(&sys, &vec![0.0; sys.dim()], &self.time_grid)
    }

    pub fn integrate(&self, sys: &BeamSystem) -> Result<(Trajectory, Tape)> {
        integrate(sys, &vec![0.0; sys.dim()], &self.time_grid)
    }

    /// Solves over `multiplier` windows with the same spacing and step.
    pub fn solve_extended(&self, fields: ParameterField, multiplier: usize) -> Result<Trajectory> {
        crate::eval::extrapolate(&self.system(fields)?, &self.time_grid, multiplier)
    }
}
