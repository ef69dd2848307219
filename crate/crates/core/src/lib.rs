//! Regression under a count constraint.
//!
//! Fits a neural network so that a prescribed number of training points lie
//! at or above the fitted curve, by alternating a loss-minimization projection
//! `P_M` with a constraint projection `P_C`.

pub mod alternation;
pub mod analytic;
pub mod constraint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod numeric;
pub mod optim;
pub mod selfcheck;

pub use alternation::{
    alternate, run_alternation, AlternationConfig, AlternationOutcome, AlternationRecord, AlternationStop,
    AlternationTrace, ModelProjections, Projections, Schedule, StopAt,
};
pub use constraint::{count_above, project_c, Comparator, CountConstraint, PcConfig, PcOptimizer, PcReport};
pub use data::{DataSet, Normalization, NoiseProfile};
pub use error::{Error, Result};
pub use experiment::{RunConfig, RunArtifacts};
pub use loss::LossKind;
pub use metrics::{RunReport, Table};
pub use network::{Activation, Checkpoint, ConstantModel, Model, Network, NetworkSpec};
pub use numeric::{l2_distance, Matrix, ParamVector, Rng, Vector};
pub use optim::{project_m, AdamConfig, AdamState, PmConfig, PmReport, PmStop};
