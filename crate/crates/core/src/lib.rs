//! RobustBoost, a boosting algorithm with a non-convex, time-dependent
//! potential that tolerates label noise, alongside AdaBoost and LogitBoost
//! baselines, synthetic label-noise benchmarks and an experiment harness.

pub mod base_learners;
pub mod boosters;
pub mod data;
pub mod harness;
pub mod numerics;
pub mod potential;

pub use base_learners::{BaseHypothesis, LearnError, Learner, LearnerKind, Stump, WeightedData};
pub use boosters::{
    error_rates, margins, robustboost_step, train_adaboost, train_logitboost, train_robustboost, BoostError,
    BoostTrace, Ensemble, ErrorRates, LogitStep, Margins, StepSettings, StopReason, TrainOptions, Trained,
};
pub use data::{gen_long_servedio, gen_mease_wyner, load_csv, save_csv, Dataset, ExampleKind, Generator};
pub use numerics::{erf_half, solve_2d, solve_scalar, SolveError, SolverSettings};
pub use potential::{PotentialKind, RobustBoostParams};
