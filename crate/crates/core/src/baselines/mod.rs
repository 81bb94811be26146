//! Comparison models that regress the displacement field directly: a
//! data-only network and a physics-informed one, both trained with L-BFGS.

pub mod jet;
pub mod lbfgs;
pub mod regressor;

pub use jet::{jet_backward, jet_forward, JetTape, StarLayout, TaylorJet};
pub use lbfgs::{Lbfgs, LbfgsConfig, StepOutcome};
pub use regressor::{pinn_residual, train_dnn, train_pinn, BaselineConfig, DataLoss, PinnLoss, RegressorModel, ResidualFields};
