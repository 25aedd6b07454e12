//! Potential and weight functions.
//!
//! RobustBoost uses a time-dependent, non-convex potential
//! `Φ(m, t) = 1 - erf_half((m - μ(t)) / σ(t))` whose Gaussian centre `μ(t)`
//! and width `σ(t)` shrink towards the goal margin `θ` and the final slope
//! `σ_f` as `t → 1`. The baselines use the convex potentials `e^{-m}` and
//! `ln(1 + e^{-m})`.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{erf_half, erf_half_complement, solve_scalar, SolveError, SolverSettings};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PotentialError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("could not solve for rho: {0}")]
    Rho(#[from] SolveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKind {
    Adaboost,
    Logitboost,
    Robustboost,
}

impl PotentialKind {
    pub fn name(self) -> &'static str {
        match self {
            PotentialKind::Adaboost => "adaboost",
            PotentialKind::Logitboost => "logitboost",
            PotentialKind::Robustboost => "robustboost",
        }
    }
}

fn check_time(t: f64) -> Result<(), PotentialError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(PotentialError::Domain(format!("time {t} outside [0, 1]")))
    }
}

/// `σ²(t) = (σ_f² + 1) e^{2(1-t)} - 1`.
pub fn sigma_sq(t: f64, sigma_f: f64) -> Result<f64, PotentialError> {
    check_time(t)?;
    Ok(sigma_sq_unchecked(t, sigma_f))
}

fn sigma_sq_unchecked(t: f64, sigma_f: f64) -> f64 {
    (sigma_f * sigma_f + 1.0) * (2.0 * (1.0 - t)).exp() - 1.0
}

/// `μ(t) = (θ - 2ρ) e^{1-t} + 2ρ`.
pub fn mu(t: f64, theta: f64, rho: f64) -> Result<f64, PotentialError> {
    check_time(t)?;
    Ok(mu_unchecked(t, theta, rho))
}

// Rearranged as θe^{1-t} + 2ρ(1 - e^{1-t}) so that μ(1) = θ exactly.
fn mu_unchecked(t: f64, theta: f64, rho: f64) -> f64 {
    let growth = 1.0 - t;
    theta * growth.exp() - 2.0 * rho * growth.exp_m1()
}

/// Parameters of the RobustBoost potential. `rho` is derived so that the
/// initial average potential `Φ(0, 0)` equals the error goal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustBoostParams {
    pub epsilon: f64,
    pub theta: f64,
    pub sigma_f: f64,
    pub rho: f64,
}

pub const DEFAULT_SIGMA_F: f64 = 0.1;

impl RobustBoostParams {
    pub fn new(epsilon: f64, theta: f64, sigma_f: f64) -> Result<Self, PotentialError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(PotentialError::Domain(format!("epsilon {epsilon} outside (0, 1)")));
        }
        if !(theta >= 0.0) || !theta.is_finite() {
            return Err(PotentialError::Domain(format!("theta {theta} must be >= 0")));
        }
        if !(sigma_f > 0.0) || !sigma_f.is_finite() {
            return Err(PotentialError::Domain(format!("sigma_f {sigma_f} must be > 0")));
        }
        let rho = solve_rho(epsilon, theta, sigma_f)?;
        Ok(RobustBoostParams { epsilon, theta, sigma_f, rho })
    }

    pub fn sigma_sq(&self, t: f64) -> Result<f64, PotentialError> {
        sigma_sq(t, self.sigma_f)
    }

    pub fn mu(&self, t: f64) -> Result<f64, PotentialError> {
        mu(t, self.theta, self.rho)
    }

    /// The potential's shape frozen at time `t`.
    pub fn at(&self, t: f64) -> Result<TimeSlice, PotentialError> {
        check_time(t)?;
        Ok(self.at_unchecked(t))
    }

    pub(crate) fn at_unchecked(&self, t: f64) -> TimeSlice {
        TimeSlice::new(t, mu_unchecked(t, self.theta, self.rho), sigma_sq_unchecked(t, self.sigma_f).sqrt())
    }

    pub fn potential(&self, m: f64, t: f64) -> Result<f64, PotentialError> {
        Ok(self.at(t)?.potential(m))
    }

    pub fn weight(&self, m: f64, t: f64) -> Result<f64, PotentialError> {
        Ok(self.at(t)?.weight(m))
    }
}

/// `μ(t)` and `σ(t)` for a fixed time, for evaluating many margins at once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSlice {
    pub t: f64,
    pub mu: f64,
    pub sigma: f64,
    inv_sigma: f64,
}

impl TimeSlice {
    fn new(t: f64, mu: f64, sigma: f64) -> Self {
        TimeSlice { t, mu, sigma, inv_sigma: 1.0 / sigma }
    }

    #[inline]
    pub fn potential(&self, m: f64) -> f64 {
        erf_half_complement((m - self.mu) * self.inv_sigma)
    }

    /// Gaussian kernel `exp(-((m - μ)/σ)²)`, equal to `-∂Φ/∂m` up to the
    /// constant `σ√π`.
    #[inline]
    pub fn weight(&self, m: f64) -> f64 {
        let z = (m - self.mu) * self.inv_sigma;
        (-z * z).exp()
    }
}

/// `Φ(0, 0)` written out in closed form.
pub fn initial_potential(rho: f64, theta: f64, sigma_f: f64) -> f64 {
    let arg = (2.0 * (E - 1.0) * rho - E * theta) / (E * E * (sigma_f * sigma_f + 1.0) - 1.0).sqrt();
    1.0 - erf_half(arg)
}

/// Solves `Φ(0, 0) = ε` for the drift parameter ρ.
///
/// The residual is strictly decreasing in ρ, so bisection on a bracket
/// grown from `[-10, 10]` always succeeds for `0 < ε < 1`.
pub fn solve_rho(epsilon: f64, theta: f64, sigma_f: f64) -> Result<f64, PotentialError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(PotentialError::Domain(format!("epsilon {epsilon} outside (0, 1)")));
    }
    let residual = |rho: f64| {
        let slice = TimeSlice::new(0.0, mu_unchecked(0.0, theta, rho), sigma_sq_unchecked(0.0, sigma_f).sqrt());
        slice.potential(0.0) - epsilon
    };
    let settings = SolverSettings::default().with_tol(1e-13);
    match solve_scalar(residual, -10.0, 10.0, &settings) {
        Ok(rho) => Ok(rho),
        // The bracket collapsed to adjacent floats; accept if within the contract.
        Err(SolveError::NoConvergence { best, residual: r }) if r.0.abs() <= 1e-9 => Ok(best.0),
        Err(e) => Err(e.into()),
    }
}

/// Baseline potential: `e^{-m}` or `ln(1 + e^{-m})`.
pub fn baseline_potential(kind: PotentialKind, m: f64) -> Result<f64, PotentialError> {
    match kind {
        PotentialKind::Adaboost => Ok((-m).exp()),
        PotentialKind::Logitboost => Ok(softplus(-m)),
        PotentialKind::Robustboost => Err(PotentialError::Domain("robustboost potential is time dependent".into())),
    }
}

/// Baseline weight: `e^{-m}` or `1 / (1 + e^{m})`.
pub fn baseline_weight(kind: PotentialKind, m: f64) -> Result<f64, PotentialError> {
    match kind {
        PotentialKind::Adaboost => Ok((-m).exp()),
        PotentialKind::Logitboost => Ok(logistic(-m)),
        PotentialKind::Robustboost => Err(PotentialError::Domain("robustboost weight is time dependent".into())),
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `1 / (1 + e^{-x})`.
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
