//! Training drivers for AdaBoost, LogitBoost and RobustBoost, plus margin
//! accounting and error rates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base_learners::{BaseHypothesis, LearnError, Learner, WeightedData};
use crate::data::Dataset;
use crate::numerics::{nested_search, newton_2d, solve_scalar, Box2, SolveError, SolverSettings};
use crate::potential::{logistic, softplus, PotentialKind, RobustBoostParams, TimeSlice};

#[derive(Debug, Error)]
pub enum BoostError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("robustboost step stalled at t = {t}: {message}")]
    StepStall { t: f64, message: String },
    #[error("robustboost stopped at t = {t} after {iterations} iterations ({reason:?})")]
    NonTermination { t: f64, iterations: usize, reason: StopReason, partial: Box<Trained> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub hypothesis: BaseHypothesis,
    pub coefficient: f64,
}

/// Weighted vote `s(x) = Σ_k coeff_k h_k(x)`. RobustBoost coefficients are
/// stored fully decayed, so `s` equals the final `f_K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub kind: PotentialKind,
    pub terms: Vec<Term>,
}

impl Ensemble {
    pub fn new(kind: PotentialKind) -> Self {
        Ensemble { kind, terms: Vec::new() }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|term| term.coefficient * f64::from(term.hypothesis.eval(x))).sum()
    }

    pub fn scores(&self, ds: &Dataset) -> Vec<f64> {
        ds.rows().map(|x| self.score(x)).collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.terms.iter().map(|t| t.coefficient.abs()).sum()
    }

    pub fn classify(&self, x: &[f64]) -> i8 {
        if self.score(x) > 0.0 {
            1
        } else {
            -1
        }
    }
}

/// Unnormalized margins `m(j) = y_j s(x_j)` with the ensemble's L1 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Margins {
    pub raw: Vec<f64>,
    pub l1: f64,
}

impl Margins {
    /// `m / Σ|coeff|`, or all zeros for an empty ensemble.
    pub fn normalized(&self) -> Vec<f64> {
        if self.l1 > 0.0 {
            self.raw.iter().map(|m| m / self.l1).collect()
        } else {
            vec![0.0; self.raw.len()]
        }
    }
}

pub fn margins(e: &Ensemble, ds: &Dataset) -> Margins {
    let raw = ds.rows().zip(ds.labels()).map(|(x, &y)| f64::from(y) * e.score(x)).collect();
    Margins { raw, l1: e.l1_norm() }
}

/// Error rates of an ensemble. A score of exactly zero counts as an error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub noisy_error: f64,
    pub clean_error: f64,
    /// Fraction of examples with `|s(x)| < θ`, measured on the scale of the
    /// ensemble's own score.
    pub below_theta_fraction: f64,
    /// Clean-label error among the examples with `|s(x)| ≥ θ`.
    pub clean_error_above_theta: f64,
}

impl ErrorRates {
    pub fn from_scores(scores: &[f64], ds: &Dataset, theta: f64) -> ErrorRates {
        let n = ds.len();
        if n == 0 {
            return ErrorRates {
                noisy_error: 0.0,
                clean_error: 0.0,
                below_theta_fraction: 0.0,
                clean_error_above_theta: 0.0,
            };
        }
        let wrong = |s: f64, y: i8| f64::from(y) * s <= 0.0;
        let mut noisy = 0usize;
        let mut clean = 0usize;
        let mut below = 0usize;
        let mut clean_above = 0usize;
        for j in 0..n {
            let s = scores[j];
            noisy += usize::from(wrong(s, ds.labels()[j]));
            let clean_wrong = wrong(s, ds.clean_labels()[j]);
            clean += usize::from(clean_wrong);
            if s.abs() < theta {
                below += 1;
            } else {
                clean_above += usize::from(clean_wrong);
            }
        }
        let above = n - below;
        ErrorRates {
            noisy_error: noisy as f64 / n as f64,
            clean_error: clean as f64 / n as f64,
            below_theta_fraction: below as f64 / n as f64,
            clean_error_above_theta: if above > 0 { clean_above as f64 / above as f64 } else { 0.0 },
        }
    }
}

pub fn error_rates(e: &Ensemble, ds: &Dataset, theta: f64) -> ErrorRates {
    ErrorRates::from_scores(&e.scores(ds), ds, theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Baselines: the iteration budget was used up.
    BudgetExhausted,
    /// RobustBoost reached `t = 1`.
    Terminated,
    /// A hypothesis with zero weighted error was found and added.
    PerfectHypothesis,
    NoWeakLearner,
    StepStall,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// RobustBoost time before the step.
    pub t: Option<f64>,
    pub dt: Option<f64>,
    /// `Δm` for RobustBoost, `α` for the baselines.
    pub step: f64,
    pub correlation: f64,
    pub weighted_error: f64,
    pub avg_potential_before: f64,
    pub avg_potential_after: f64,
    /// `Σ y h w(m', t + Δt)` at the accepted point (RobustBoost).
    pub decorrelation: Option<f64>,
    /// `Σ Φ(m', t + Δt) - Σ Φ(m, t)` at the accepted point (RobustBoost).
    pub conservation: Option<f64>,
    pub boundary: bool,
    /// Newton was rejected and the nested search produced the step.
    pub fallback: bool,
    /// Final step that lowered the potential because conservation had no
    /// positive root.
    #[serde(default)]
    pub slack: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: usize,
    pub t: Option<f64>,
    pub margins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostTrace {
    pub kind: PotentialKind,
    pub records: Vec<IterationRecord>,
    pub snapshots: Vec<Snapshot>,
    pub stop: StopReason,
    /// Step attempts whose Newton solution was rejected before the fallback.
    pub rejected_attempts: usize,
}

impl BoostTrace {
    fn new(kind: PotentialKind) -> Self {
        BoostTrace {
            kind,
            records: Vec::new(),
            snapshots: Vec::new(),
            stop: StopReason::BudgetExhausted,
            rejected_attempts: 0,
        }
    }

    pub fn snapshot(&self, iteration: usize) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.iteration == iteration)
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_t(&self) -> Option<f64> {
        self.records.last().and_then(|r| Some(r.t? + r.dt?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub ensemble: Ensemble,
    pub trace: BoostTrace,
    /// Margins tracked incrementally during training.
    pub margins: Vec<f64>,
}

impl Trained {
    pub fn terminated(&self) -> bool {
        self.trace.stop == StopReason::Terminated
    }
}

/// Step rule for LogitBoost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogitStep {
    /// `α = ½ ln(W₊/W₋)` under the logistic weights: minimizes the standard
    /// exponential upper bound on the change in logistic loss.
    #[default]
    Bound,
    /// Exact minimization of the logistic loss along the new coordinate.
    LineSearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub max_iters: usize,
    /// Iterations after which the margins are recorded (0 = untrained).
    pub snapshots: Vec<usize>,
    pub logit_step: LogitStep,
}

impl TrainOptions {
    pub fn new(max_iters: usize) -> Self {
        TrainOptions { max_iters, snapshots: Vec::new(), logit_step: LogitStep::default() }
    }

    pub fn with_logit_step(mut self, step: LogitStep) -> Self {
        self.logit_step = step;
        self
    }

    pub fn with_snapshots(mut self, snapshots: &[usize]) -> Self {
        self.snapshots = snapshots.to_vec();
        self
    }

    fn validate(&self) -> Result<(), BoostError> {
        if self.max_iters == 0 {
            return Err(BoostError::InvalidInput("iteration budget must be at least 1".into()));
        }
        Ok(())
    }
}

/// Knobs of the RobustBoost step solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSettings {
    /// Upper bound on `Δm`.
    pub dm_max: f64,
    /// Steps with `Δt` below this count as stalled.
    pub min_dt: f64,
    /// Consecutive stalled steps before giving up.
    pub stall_limit: usize,
    /// Residual tolerance per example; scaled by N.
    pub tol_per_example: f64,
    pub max_solver_iters: usize,
}

impl Default for StepSettings {
    fn default() -> Self {
        StepSettings { dm_max: 10.0, min_dt: 1e-9, stall_limit: 5, tol_per_example: 1e-9, max_solver_iters: 200 }
    }
}

impl StepSettings {
    pub fn solver(&self, n: usize) -> SolverSettings {
        SolverSettings {
            max_iters: self.max_solver_iters,
            ..SolverSettings::for_system(n).with_tol(self.tol_per_example * n.max(1) as f64)
        }
    }
}

fn agreement(h: &BaseHypothesis, ds: &Dataset) -> Vec<f64> {
    ds.rows().zip(ds.labels()).map(|(x, &y)| f64::from(y * h.eval(x))).collect()
}

/// Normalizes non-negative raw weights into a distribution.
fn normalize(raw: Vec<f64>) -> Option<Vec<f64>> {
    let z: f64 = raw.iter().sum();
    if !(z > 0.0) || !z.is_finite() {
        return None;
    }
    Some(raw.into_iter().map(|w| w / z).collect())
}

fn snapshot_if_requested(trace: &mut BoostTrace, opts: &TrainOptions, iteration: usize, t: Option<f64>, m: &[f64]) {
    if opts.snapshots.contains(&iteration) && trace.snapshot(iteration).is_none() {
        trace.snapshots.push(Snapshot { iteration, t, margins: m.to_vec() });
    }
}

/// Baseline loss `Σ e^{-m}` or `Σ ln(1 + e^{-m})`, averaged.
pub fn average_loss(kind: PotentialKind, m: &[f64]) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let total: f64 = match kind {
        PotentialKind::Adaboost => m.iter().map(|&v| (-v).exp()).sum(),
        PotentialKind::Logitboost => m.iter().map(|&v| softplus(-v)).sum(),
        PotentialKind::Robustboost => panic!("robustboost has no time-free loss"),
    };
    total / m.len() as f64
}

fn check_dataset(ds: &Dataset) -> Result<(), BoostError> {
    if ds.is_empty() {
        return Err(BoostError::InvalidInput("empty training set".into()));
    }
    Ok(())
}

fn baseline_weights(kind: PotentialKind, m: &[f64]) -> Option<Vec<f64>> {
    let raw = match kind {
        PotentialKind::Adaboost => {
            // Shift by the smallest margin; the distribution is unchanged.
            let lowest = m.iter().copied().fold(f64::INFINITY, f64::min);
            m.iter().map(|&v| (lowest - v).exp()).collect()
        }
        PotentialKind::Logitboost => m.iter().map(|&v| logistic(-v)).collect(),
        PotentialKind::Robustboost => unreachable!(),
    };
    normalize(raw)
}

/// Minimizer over `α ≥ 0` of `Σ ln(1 + e^{-(m_j + α b_j)})`.
fn logistic_line_search(m: &[f64], b: &[f64]) -> f64 {
    let slope = |alpha: f64| -> f64 { m.iter().zip(b).map(|(&mj, &bj)| -bj * logistic(-(mj + alpha * bj))).sum() };
    let settings = SolverSettings::default();
    match solve_scalar(slope, 0.0, 1.0, &settings) {
        Ok(alpha) => alpha,
        // Convex objective: a collapsed bracket already pins the minimizer.
        Err(SolveError::NoConvergence { best, .. }) => best.0,
        Err(e) => panic!("logistic line search failed: {e}"),
    }
}

fn train_baseline(
    kind: PotentialKind,
    ds: &Dataset,
    learner: &Learner,
    opts: &TrainOptions,
) -> Result<Trained, BoostError> {
    opts.validate()?;
    check_dataset(ds)?;
    let n = ds.len();
    let mut m = vec![0.0; n];
    let mut ensemble = Ensemble::new(kind);
    let mut trace = BoostTrace::new(kind);
    snapshot_if_requested(&mut trace, opts, 0, None, &m);

    for iteration in 1..=opts.max_iters {
        let d =
            baseline_weights(kind, &m).ok_or_else(|| BoostError::InvalidInput("weights do not normalize".into()))?;
        let wd = WeightedData { data: ds, weights: &d };
        let fitted = match learner.fit(&wd) {
            Ok(f) => f,
            Err(LearnError::NoWeakLearner { .. }) => {
                trace.stop = StopReason::NoWeakLearner;
                break;
            }
            Err(e) => return Err(BoostError::InvalidInput(e.to_string())),
        };
        let b = agreement(&fitted.hypothesis, ds);
        let err: f64 = d.iter().zip(&b).filter(|(_, &bj)| bj < 0.0).map(|(w, _)| w).sum();
        let before = average_loss(kind, &m);

        let perfect = err == 0.0;
        let alpha = if perfect {
            // Infinite step in the limit; any weight above the current L1 norm
            // makes this hypothesis decide every example.
            ensemble.l1_norm() + 1.0
        } else {
            match (kind, opts.logit_step) {
                (PotentialKind::Logitboost, LogitStep::LineSearch) => logistic_line_search(&m, &b),
                _ => 0.5 * ((1.0 - err) / err).ln(),
            }
        };
        for (mj, bj) in m.iter_mut().zip(&b) {
            *mj += alpha * bj;
        }
        ensemble.terms.push(Term { hypothesis: fitted.hypothesis, coefficient: alpha });
        trace.records.push(IterationRecord {
            iteration,
            t: None,
            dt: None,
            step: alpha,
            correlation: fitted.correlation,
            weighted_error: err,
            avg_potential_before: before,
            avg_potential_after: average_loss(kind, &m),
            decorrelation: None,
            conservation: None,
            boundary: false,
            fallback: false,
            slack: false,
        });
        snapshot_if_requested(&mut trace, opts, iteration, None, &m);
        if perfect {
            trace.stop = StopReason::PerfectHypothesis;
            break;
        }
    }
    Ok(Trained { ensemble, trace, margins: m })
}

/// AdaBoost: `D(j) ∝ e^{-m(j)}`, step `α = ½ ln((1 - err)/err)`.
pub fn train_adaboost(ds: &Dataset, learner: &Learner, opts: &TrainOptions) -> Result<Trained, BoostError> {
    train_baseline(PotentialKind::Adaboost, ds, learner, opts)
}

/// LogitBoost as coordinate descent on the logistic loss: `D(j) ∝ 1/(1 + e^{m(j)})`,
/// step chosen by [`TrainOptions::logit_step`].
pub fn train_logitboost(ds: &Dataset, learner: &Learner, opts: &TrainOptions) -> Result<Trained, BoostError> {
    train_baseline(PotentialKind::Logitboost, ds, learner, opts)
}

/// The two residuals of one RobustBoost step as a function of `(Δt, Δm)`.
pub struct StepSystem<'a> {
    margins: &'a [f64],
    agreement: &'a [f64],
    params: &'a RobustBoostParams,
    t: f64,
    potential_before: f64,
}

impl<'a> StepSystem<'a> {
    pub fn new(margins: &'a [f64], agreement: &'a [f64], t: f64, params: &'a RobustBoostParams) -> Self {
        assert_eq!(margins.len(), agreement.len());
        let slice = params.at_unchecked(t);
        let potential_before = margins.iter().map(|&m| slice.potential(m)).sum();
        StepSystem { margins, agreement, params, t, potential_before }
    }

    pub fn potential_before(&self) -> f64 {
        self.potential_before
    }

    fn slice(&self, dt: f64) -> TimeSlice {
        self.params.at_unchecked((self.t + dt).min(1.0))
    }

    /// `(Σ b_j w(m'_j, t + Δt), Σ Φ(m'_j, t + Δt) - Σ Φ(m_j, t))` with
    /// `m'_j = m_j e^{-Δt} + b_j Δm`.
    pub fn residuals(&self, dt: f64, dm: f64) -> (f64, f64) {
        let slice = self.slice(dt);
        let decay = (-dt).exp();
        let mut r1 = 0.0;
        let mut total = 0.0;
        for (&m, &b) in self.margins.iter().zip(self.agreement) {
            let next = m * decay + b * dm;
            r1 += b * slice.weight(next);
            total += slice.potential(next);
        }
        (r1, total - self.potential_before)
    }

    pub fn updated_margins(&self, dt: f64, dm: f64) -> Vec<f64> {
        let decay = (-dt).exp();
        self.margins.iter().zip(self.agreement).map(|(&m, &b)| m * decay + b * dm).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub dt: f64,
    pub dm: f64,
    /// `Δt = 1 - t`; the de-correlation equation was waived.
    pub boundary: bool,
    /// Newton's answer was rejected and the nested search produced the step.
    pub fallback: bool,
    /// Boundary step that lowers the total potential instead of conserving it.
    pub slack: bool,
    pub margins: Vec<f64>,
    pub residuals: (f64, f64),
}

/// Solves one RobustBoost step for `(Δt, Δm)` in `(0, 1 - t] × (0, dm_max]`.
///
/// `agreement[j] = y_j h(x_j)`. `init` warm-starts Newton; on rejection the
/// nested search runs. If the conserving `Δt` would exceed `1 - t`, the step
/// is clamped to the horizon and only the conservation equation is solved.
pub fn robustboost_step(
    margins: &[f64],
    agreement: &[f64],
    t: f64,
    params: &RobustBoostParams,
    settings: &StepSettings,
    init: Option<(f64, f64)>,
) -> Result<StepOutcome, BoostError> {
    if !(0.0..1.0).contains(&t) {
        return Err(BoostError::InvalidInput(format!("time {t} outside [0, 1)")));
    }
    let n = margins.len();
    let sys = StepSystem::new(margins, agreement, t, params);
    let room = 1.0 - t;
    let bounds = Box2::new((0.0, room), (0.0, settings.dm_max));
    let solver = settings.solver(n);
    let f = |dt: f64, dm: f64| sys.residuals(dt, dm);
    let stall = |message: String| BoostError::StepStall { t, message };

    let corr0: f64 = {
        let slice = params.at_unchecked(t);
        let z: f64 = margins.iter().map(|&m| slice.weight(m)).sum();
        let num: f64 = margins.iter().zip(agreement).map(|(&m, &b)| b * slice.weight(m)).sum();
        if z > 0.0 {
            num / z
        } else {
            0.0
        }
    };
    if !(corr0 > 0.0) {
        return Err(stall(format!("hypothesis correlation {corr0} is not positive")));
    }
    let init = init.unwrap_or((0.01f64.min(room), 0.5 * corr0));
    let init = (init.0.min(room), init.1.min(settings.dm_max));

    // Interior solutions sit at a minimum of the potential in Δm.
    let acceptable = |p: (f64, f64)| {
        let (dt, dm) = p;
        if !(dt > 0.0 && dm > 0.0 && dt <= room) {
            return false;
        }
        let h = 1e-6f64.max(1e-6 * dm);
        f(dt, dm + h).0 < f(dt, (dm - h).max(0.0)).0
    };

    if let Some(p) = newton_2d(&f, init, &bounds, &solver) {
        if acceptable(p) {
            return Ok(finish(&sys, p, p.0 >= room, false));
        }
    }

    match nested_search(&f, &bounds, &solver) {
        Ok(p) if acceptable(p) => Ok(finish(&sys, p, p.0 >= room, true)),
        Ok(p) => Err(stall(format!("nested search returned a degenerate point {p:?}"))),
        Err(SolveError::BoundaryHit { point, .. }) => {
            let dm_star = point.1;
            let conserve = |dm: f64| f(room, dm).1;
            let tol = solver.abs_tol;
            let scalar = SolverSettings { bracket_expansion_limit: 0, ..solver };
            let eps = 1e-12;
            let solve_on = |lo: f64, hi: f64| match solve_scalar(conserve, lo, hi, &scalar) {
                Ok(dm) => Some(dm),
                Err(SolveError::NoConvergence { best, residual }) if residual.0.abs() <= tol => Some(best.0),
                Err(_) => None,
            };
            let lower = if conserve(eps) > 0.0 && conserve(dm_star) < 0.0 { solve_on(eps, dm_star) } else { None };
            let dm = lower.or_else(|| {
                if conserve(dm_star) < 0.0 && conserve(settings.dm_max) > 0.0 {
                    solve_on(dm_star, settings.dm_max)
                } else {
                    None
                }
            });
            match dm {
                Some(dm) if dm > 0.0 => Ok(finish(&sys, (room, dm), true, true)),
                // The potential at the horizon is below the current total for
                // every Δm: the goal is already met, take the best step.
                _ if conserve(settings.dm_max) < 0.0 && dm_star > 0.0 => {
                    let mut o = finish(&sys, (room, dm_star), true, true);
                    o.slack = true;
                    Ok(o)
                }
                _ => Err(stall("no positive Δm conserves the potential at the horizon".into())),
            }
        }
        Err(e) => Err(stall(e.to_string())),
    }
}

fn finish(sys: &StepSystem, p: (f64, f64), boundary: bool, fallback: bool) -> StepOutcome {
    StepOutcome {
        dt: p.0,
        dm: p.1,
        boundary,
        fallback,
        slack: false,
        margins: sys.updated_margins(p.0, p.1),
        residuals: sys.residuals(p.0, p.1),
    }
}

/// RobustBoost: repeat weak learning and potential-conserving steps until
/// the clock reaches `t = 1`.
///
/// Stops with [`BoostError::NonTermination`] (carrying the partial
/// ensemble) when the budget runs out, the weak learner fails, or the step
/// solver stalls.
pub fn train_robustboost(
    ds: &Dataset,
    learner: &Learner,
    params: &RobustBoostParams,
    opts: &TrainOptions,
    settings: &StepSettings,
) -> Result<Trained, BoostError> {
    opts.validate()?;
    check_dataset(ds)?;
    let n = ds.len();
    let mut m = vec![0.0; n];
    let mut t = 0.0f64;
    let mut ensemble = Ensemble::new(PotentialKind::Robustboost);
    let mut trace = BoostTrace::new(PotentialKind::Robustboost);
    snapshot_if_requested(&mut trace, opts, 0, Some(t), &m);
    let mut warm: Option<(f64, f64)> = None;
    let mut small_steps = 0;
    let mut stop = StopReason::IterationLimit;

    for iteration in 1..=opts.max_iters {
        let slice = params.at_unchecked(t);
        let Some(d) = normalize(m.iter().map(|&v| slice.weight(v)).collect()) else {
            stop = StopReason::StepStall;
            break;
        };
        let wd = WeightedData { data: ds, weights: &d };
        let fitted = match learner.fit(&wd) {
            Ok(f) => f,
            Err(LearnError::NoWeakLearner { .. }) => {
                stop = StopReason::NoWeakLearner;
                break;
            }
            Err(e) => return Err(BoostError::InvalidInput(e.to_string())),
        };
        let b = agreement(&fitted.hypothesis, ds);
        let err: f64 = d.iter().zip(&b).filter(|(_, &bj)| bj < 0.0).map(|(w, _)| w).sum();
        let outcome = match robustboost_step(&m, &b, t, params, settings, warm) {
            Ok(o) => o,
            Err(BoostError::StepStall { .. }) => {
                stop = StopReason::StepStall;
                break;
            }
            Err(e) => return Err(e),
        };
        if outcome.fallback {
            trace.rejected_attempts += 1;
        }

        let decay = (-outcome.dt).exp();
        for term in &mut ensemble.terms {
            term.coefficient *= decay;
        }
        ensemble.terms.push(Term { hypothesis: fitted.hypothesis, coefficient: outcome.dm });
        let before = StepSystem::new(&m, &b, t, params).potential_before() / n as f64;
        let t_next = if outcome.boundary { 1.0 } else { t + outcome.dt };
        let after_slice = params.at_unchecked(t_next.min(1.0));
        let after = outcome.margins.iter().map(|&v| after_slice.potential(v)).sum::<f64>() / n as f64;
        trace.records.push(IterationRecord {
            iteration,
            t: Some(t),
            dt: Some(t_next - t),
            step: outcome.dm,
            correlation: fitted.correlation,
            weighted_error: err,
            avg_potential_before: before,
            avg_potential_after: after,
            decorrelation: Some(outcome.residuals.0),
            conservation: Some(outcome.residuals.1),
            boundary: outcome.boundary,
            fallback: outcome.fallback,
            slack: outcome.slack,
        });
        m = outcome.margins;
        t = t_next;
        warm = if outcome.boundary { None } else { Some((outcome.dt, outcome.dm)) };
        snapshot_if_requested(&mut trace, opts, iteration, Some(t), &m);

        if t >= 1.0 {
            stop = StopReason::Terminated;
            break;
        }
        if outcome.dt < settings.min_dt {
            small_steps += 1;
            if small_steps >= settings.stall_limit {
                stop = StopReason::StepStall;
                break;
            }
        } else {
            small_steps = 0;
        }
    }

    trace.stop = stop;
    let iterations = trace.records.len();
    let trained = Trained { ensemble, trace, margins: m };
    if stop == StopReason::Terminated {
        Ok(trained)
    } else {
        Err(BoostError::NonTermination { t, iterations, reason: stop, partial: Box::new(trained) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_learners::LearnerKind;
    use crate::data::{gen_long_servedio, gen_mease_wyner};

    #[test]
    fn margins_basic() {
        let ds = Dataset::new(vec![1.0, -1.0], 1, vec![1, -1]).unwrap();
        let h = BaseHypothesis::SignedCoordinate { index: 0, sign: 1 };
        let e =
            Ensemble { kind: PotentialKind::Adaboost, terms: vec![Term { hypothesis: h.clone(), coefficient: 1.0 }] };
        let m = margins(&e, &ds);
        assert_eq!(m.raw, vec![1.0, 1.0]);
        assert_eq!(m.normalized(), vec![1.0, 1.0]);

        let e2 = Ensemble {
            kind: PotentialKind::Adaboost,
            terms: vec![Term { hypothesis: h.clone(), coefficient: 0.7 }, Term { hypothesis: h, coefficient: -0.7 }],
        };
        assert_eq!(margins(&e2, &ds).raw, vec![0.0, 0.0]);
        assert_eq!(margins(&Ensemble::new(PotentialKind::Adaboost), &ds).normalized(), vec![0.0, 0.0]);
    }

    #[test]
    fn error_rates_perfect_and_flipped() {
        let ds = gen_long_servedio(200, 0.0, 3).unwrap();
        let vote = |sign: i8| Ensemble {
            kind: PotentialKind::Adaboost,
            terms: (0..21)
                .map(|index| Term { hypothesis: BaseHypothesis::SignedCoordinate { index, sign }, coefficient: 1.0 })
                .collect(),
        };
        let r = error_rates(&vote(1), &ds, 0.0);
        assert_eq!(
            (r.noisy_error, r.clean_error, r.below_theta_fraction, r.clean_error_above_theta),
            (0.0, 0.0, 0.0, 0.0)
        );
        let r = error_rates(&vote(-1), &ds, 0.0);
        assert_eq!(r.noisy_error, 1.0);
    }

    #[test]
    fn adaboost_first_step_closed_form() {
        // Coordinate 0 wrong on one of four uniformly weighted examples.
        let feats = vec![1., 1., -1., 1., 1., -1., 1., -1.];
        let ds = Dataset::new(feats, 2, vec![1, -1, 1, -1]).unwrap();
        let learner = Learner::new(LearnerKind::Coordinate, &ds);
        let tr = train_adaboost(&ds, &learner, &TrainOptions::new(1)).unwrap();
        let r = &tr.trace.records[0];
        assert!((r.weighted_error - 0.25).abs() < 1e-15);
        assert!((r.step - 0.5 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn adaboost_separable_long_servedio_reaches_zero() {
        let ds = gen_long_servedio(400, 0.0, 21).unwrap();
        let learner = Learner::new(LearnerKind::Coordinate, &ds);
        let tr = train_adaboost(&ds, &learner, &TrainOptions::new(300)).unwrap();
        assert_eq!(error_rates(&tr.ensemble, &ds, 0.0).noisy_error, 0.0);
        for w in tr.trace.records.windows(2) {
            assert!(w[1].avg_potential_after <= w[0].avg_potential_after * (1.0 + 1e-12));
        }
    }

    #[test]
    fn perfect_hypothesis_stops_early() {
        let ds = Dataset::new(vec![1., -1., 1., -1., 1., -1.], 2, vec![1, 1, 1]).unwrap();
        let learner = Learner::new(LearnerKind::Coordinate, &ds);
        for tr in [
            train_adaboost(&ds, &learner, &TrainOptions::new(10)).unwrap(),
            train_logitboost(&ds, &learner, &TrainOptions::new(10)).unwrap(),
        ] {
            assert_eq!(tr.trace.stop, StopReason::PerfectHypothesis);
            assert_eq!(tr.ensemble.terms.len(), 1);
            assert_eq!(error_rates(&tr.ensemble, &ds, 0.0).noisy_error, 0.0);
        }
    }

    #[test]
    fn logitboost_weights_and_loss() {
        let ds = gen_mease_wyner(300, 0.1, 5).unwrap();
        let learner = Learner::new(LearnerKind::Stump, &ds);
        let init = baseline_weights(PotentialKind::Logitboost, &vec![0.0; 300]).unwrap();
        assert!(init.iter().all(|&w| (w - 1.0 / 300.0).abs() < 1e-15));
        for step in [LogitStep::Bound, LogitStep::LineSearch] {
            let tr = train_logitboost(&ds, &learner, &TrainOptions::new(40).with_logit_step(step)).unwrap();
            for w in tr.trace.records.windows(2) {
                assert!(w[1].avg_potential_after <= w[0].avg_potential_after + 1e-15, "{step:?}");
            }
        }
    }

    #[test]
    fn line_search_beats_bound_step_in_one_round() {
        let ds = gen_mease_wyner(200, 0.2, 9).unwrap();
        let learner = Learner::new(LearnerKind::Stump, &ds);
        let loss = |step| {
            let tr = train_logitboost(&ds, &learner, &TrainOptions::new(1).with_logit_step(step)).unwrap();
            tr.trace.records[0].avg_potential_after
        };
        assert!(loss(LogitStep::LineSearch) <= loss(LogitStep::Bound) + 1e-15);
        assert!(loss(LogitStep::Bound) < std::f64::consts::LN_2);
    }

    #[test]
    fn robustboost_step_satisfies_both_equations() {
        let ds = gen_long_servedio(300, 0.1, 4).unwrap();
        let params = RobustBoostParams::new(0.14, 0.2, 0.1).unwrap();
        let learner = Learner::new(LearnerKind::Coordinate, &ds);
        let tr = match train_robustboost(&ds, &learner, &params, &TrainOptions::new(60), &StepSettings::default()) {
            Ok(t) => t,
            Err(BoostError::NonTermination { partial, .. }) => *partial,
            Err(e) => panic!("{e}"),
        };
        let tol = 300.0 * 1e-8;
        for r in &tr.trace.records {
            assert!(r.conservation.unwrap().abs() <= tol);
            if !r.boundary {
                assert!(r.decorrelation.unwrap().abs() <= tol);
            }
            assert!(r.dt.unwrap() > 0.0 && r.step > 0.0);
        }
        let recomputed = margins(&tr.ensemble, &ds).raw;
        for (a, b) in recomputed.iter().zip(&tr.margins) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn robustboost_rejects_uncorrelated_hypothesis() {
        let params = RobustBoostParams::new(0.2, 0.0, 0.1).unwrap();
        let m = vec![0.0; 4];
        let b = vec![1.0, -1.0, 1.0, -1.0];
        assert!(matches!(
            robustboost_step(&m, &b, 0.0, &params, &StepSettings::default(), None),
            Err(BoostError::StepStall { .. })
        ));
    }

    #[test]
    fn zero_budget_is_rejected() {
        let ds = gen_mease_wyner(10, 0.0, 1).unwrap();
        let learner = Learner::new(LearnerKind::Stump, &ds);
        assert!(matches!(train_adaboost(&ds, &learner, &TrainOptions::new(0)), Err(BoostError::InvalidInput(_))));
    }
}
