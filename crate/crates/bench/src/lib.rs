//! Shared fixtures for the criterion benches.

use robustboost::{gen_long_servedio, gen_mease_wyner, Dataset, RobustBoostParams};

/// Long/Servedio training set at the scale used in the experiments.
pub fn long_servedio_fixture() -> Dataset {
    gen_long_servedio(800, 0.1, 1).expect("valid generator arguments")
}

pub fn mease_wyner_fixture() -> Dataset {
    gen_mease_wyner(2000, 0.1, 1).expect("valid generator arguments")
}

pub fn long_servedio_params() -> RobustBoostParams {
    RobustBoostParams::new(0.14, 0.2, 0.1).expect("valid parameters")
}
