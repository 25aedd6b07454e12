//! Experiment runner: seeded repetitions, aggregation, ε search and score
//! export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::base_learners::{Learner, LearnerKind};
use crate::boosters::{
    error_rates, train_adaboost, train_logitboost, train_robustboost, BoostError, BoostTrace, Ensemble, ErrorRates,
    LogitStep, StepSettings, StopReason, TrainOptions, Trained,
};
use crate::data::{gen_long_servedio, gen_mease_wyner, DataError, Dataset, RNG_NAME};
use crate::potential::{baseline_potential, baseline_weight, PotentialError, PotentialKind, RobustBoostParams};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "ROBUSTBOOST_WORKERS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error("no candidate epsilon terminated within {budget} iterations")]
    AllInfeasible { budget: usize, outcomes: Vec<EpsilonOutcome> },
    #[error("iteration {0} was not snapshotted")]
    MissingSnapshot(usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    LongServedio,
    MeaseWyner,
}

impl Problem {
    pub fn generate(self, n: usize, q: f64, seed: u64) -> Result<Dataset, DataError> {
        match self {
            Problem::LongServedio => gen_long_servedio(n, q, seed),
            Problem::MeaseWyner => gen_mease_wyner(n, q, seed),
        }
    }
}

/// One booster in an experiment. RobustBoost needs `epsilon`; `theta`
/// defaults to 0 and `sigma_f` to 0.1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub label: String,
    pub kind: PotentialKind,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_f: Option<f64>,
}

impl AlgorithmSpec {
    pub fn adaboost(iterations: usize) -> Self {
        AlgorithmSpec {
            label: "Ada".into(),
            kind: PotentialKind::Adaboost,
            iterations,
            epsilon: None,
            theta: None,
            sigma_f: None,
        }
    }

    pub fn logitboost(iterations: usize) -> Self {
        AlgorithmSpec {
            label: "Logit".into(),
            kind: PotentialKind::Logitboost,
            iterations,
            epsilon: None,
            theta: None,
            sigma_f: None,
        }
    }

    pub fn robustboost(label: &str, iterations: usize, epsilon: f64, theta: f64, sigma_f: f64) -> Self {
        AlgorithmSpec {
            label: label.into(),
            kind: PotentialKind::Robustboost,
            iterations,
            epsilon: Some(epsilon),
            theta: Some(theta),
            sigma_f: Some(sigma_f),
        }
    }

    /// Margin threshold used for the low-margin statistics.
    pub fn theta(&self) -> f64 {
        self.theta.unwrap_or(0.0)
    }

    pub fn params(&self) -> Result<Option<RobustBoostParams>, HarnessError> {
        if self.kind != PotentialKind::Robustboost {
            return Ok(None);
        }
        let eps =
            self.epsilon.ok_or_else(|| HarnessError::Config(format!("algorithm {} needs epsilon", self.label)))?;
        Ok(Some(RobustBoostParams::new(eps, self.theta(), self.sigma_f.unwrap_or(crate::potential::DEFAULT_SIGMA_F))?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub n_train: usize,
    /// Held-out examples per repetition; 0 evaluates on the training set only.
    #[serde(default)]
    pub n_test: usize,
    pub q: f64,
    pub learner: LearnerKind,
    pub algorithms: Vec<AlgorithmSpec>,
    pub repetitions: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub snapshot_iterations: Vec<usize>,
    #[serde(default)]
    pub logit_step: LogitStep,
    /// Count non-terminated RobustBoost runs in the means.
    #[serde(default)]
    pub include_nonterminated: bool,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_csv: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    /// 800 training examples, q = 0.1, ten repetitions, 300 rounds of signed
    /// coordinates; RobustBoost with ε = 0.14 and θ ∈ {0, 0.2}.
    pub fn long_servedio() -> Self {
        ExperimentConfig {
            problem: Problem::LongServedio,
            n_train: 800,
            n_test: 0,
            q: 0.1,
            learner: LearnerKind::Coordinate,
            algorithms: vec![
                AlgorithmSpec::adaboost(300),
                AlgorithmSpec::logitboost(300),
                AlgorithmSpec::robustboost("Robust θ=0", 300, 0.14, 0.0, 0.1),
                AlgorithmSpec::robustboost("Robust θ=0.2", 300, 0.14, 0.2, 0.1),
            ],
            repetitions: 10,
            base_seed: 0,
            snapshot_iterations: Vec::new(),
            logit_step: LogitStep::default(),
            include_nonterminated: false,
            workers: 1,
            report: None,
            raw_csv: None,
        }
    }

    /// 2000 train / 2000 test examples, fifteen repetitions, at most 500
    /// rounds; RobustBoost with θ = 1 and ε = 0.15 (q = 0.1) or 0.25 (q = 0.2).
    pub fn mease_wyner(q: f64, learner: LearnerKind) -> Self {
        let epsilon = if q > 0.15 { 0.25 } else { 0.15 };
        ExperimentConfig {
            problem: Problem::MeaseWyner,
            n_train: 2000,
            n_test: 2000,
            q,
            learner,
            algorithms: vec![
                AlgorithmSpec::adaboost(500),
                AlgorithmSpec::logitboost(500),
                AlgorithmSpec::robustboost("Robust", 500, epsilon, 1.0, 0.1),
            ],
            repetitions: 15,
            base_seed: 0,
            snapshot_iterations: Vec::new(),
            logit_step: LogitStep::default(),
            include_nonterminated: false,
            workers: 1,
            report: None,
            raw_csv: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.n_train == 0 {
            return bad("n_train must be at least 1".into());
        }
        if !(0.0..0.5).contains(&self.q) {
            return bad(format!("noise rate {} outside [0, 0.5)", self.q));
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms configured".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        let mut labels = std::collections::BTreeSet::new();
        for a in &self.algorithms {
            if !labels.insert(a.label.as_str()) {
                return bad(format!("duplicate algorithm label {}", a.label));
            }
            if a.iterations == 0 {
                return bad(format!("algorithm {} has no iterations", a.label));
            }
            a.params()?;
        }
        if self.learner == LearnerKind::Coordinate && self.problem != Problem::LongServedio {
            return bad("the coordinate learner needs ±1 features".into());
        }
        Ok(())
    }

    /// Sets one top-level key from a command-line style `value`. The value is
    /// read as JSON when it parses, else as a string. `epsilon`, `theta` and
    /// `sigma_f` apply to every RobustBoost entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let parsed: serde_json::Value =
            serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        if matches!(key, "epsilon" | "theta" | "sigma_f") {
            let v =
                parsed.as_f64().ok_or_else(|| HarnessError::Config(format!("{key} needs a number, got {value}")))?;
            for a in self.algorithms.iter_mut().filter(|a| a.kind == PotentialKind::Robustboost) {
                match key {
                    "epsilon" => a.epsilon = Some(v),
                    "theta" => a.theta = Some(v),
                    _ => a.sigma_f = Some(v),
                }
            }
            return Ok(());
        }
        if key == "iterations" {
            let v = parsed
                .as_u64()
                .ok_or_else(|| HarnessError::Config(format!("iterations needs an integer, got {value}")))?;
            for a in &mut self.algorithms {
                a.iterations = v as usize;
            }
            return Ok(());
        }
        let mut json = serde_json::to_value(&*self)?;
        let obj = json.as_object_mut().expect("config serializes to an object");
        obj.insert(key.replace('-', "_"), parsed);
        *self = serde_json::from_value(json).map_err(|e| HarnessError::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn seeds(&self, repetition: usize) -> RepetitionSeeds {
        let seed = self.base_seed + repetition as u64;
        RepetitionSeeds { seed, train: 2 * seed, test: 2 * seed + 1 }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Reads [`WORKERS_ENV`], if set.
pub fn workers_from_env() -> Result<Option<usize>, HarnessError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .ok()
            .filter(|&n: &usize| n > 0)
            .map(Some)
            .ok_or_else(|| HarnessError::Config(format!("{WORKERS_ENV}={v} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepetitionSeeds {
    pub seed: u64,
    pub train: u64,
    pub test: u64,
}

/// Result of training one configured booster.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trained: Trained,
    pub terminated: bool,
}

/// Trains `spec` on `ds`. A RobustBoost run that does not reach `t = 1`
/// yields its partial ensemble with `terminated = false`.
pub fn train_algorithm(
    spec: &AlgorithmSpec,
    ds: &Dataset,
    learner: &Learner,
    logit_step: LogitStep,
    snapshots: &[usize],
) -> Result<RunOutcome, HarnessError> {
    let opts = TrainOptions::new(spec.iterations).with_snapshots(snapshots).with_logit_step(logit_step);
    let trained = match spec.kind {
        PotentialKind::Adaboost => train_adaboost(ds, learner, &opts)?,
        PotentialKind::Logitboost => train_logitboost(ds, learner, &opts)?,
        PotentialKind::Robustboost => {
            let params = spec.params()?.expect("robustboost has parameters");
            match train_robustboost(ds, learner, &params, &opts, &StepSettings::default()) {
                Ok(t) => t,
                Err(BoostError::NonTermination { partial, .. }) => {
                    return Ok(RunOutcome { trained: *partial, terminated: false })
                }
                Err(e) => return Err(e.into()),
            }
        }
    };
    Ok(RunOutcome { trained, terminated: true })
}

/// A trained booster as written by the command line `train` step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub algorithm: AlgorithmSpec,
    pub learner: LearnerKind,
    pub logit_step: LogitStep,
    pub terminated: bool,
    pub ensemble: Ensemble,
    pub trace: BoostTrace,
}

impl SavedModel {
    pub fn new(algorithm: AlgorithmSpec, learner: LearnerKind, logit_step: LogitStep, run: RunOutcome) -> Self {
        SavedModel {
            algorithm,
            learner,
            logit_step,
            terminated: run.terminated,
            ensemble: run.trained.ensemble,
            trace: run.trained.trace,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn error_rates(&self, ds: &Dataset, theta: Option<f64>) -> ErrorRates {
        error_rates(&self.ensemble, ds, theta.unwrap_or_else(|| self.algorithm.theta()))
    }

    pub fn export_scores(&self, ds: &Dataset, iteration: usize, out: &mut impl Write) -> Result<(), HarnessError> {
        let params = self.algorithm.params()?;
        export_score_distribution(&self.trace, params.as_ref(), ds, iteration, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmResult {
    pub label: String,
    pub iterations: usize,
    pub terminated: bool,
    pub stop: StopReason,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_t: Option<f64>,
    pub rejected_attempts: usize,
    pub train: ErrorRates,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<ErrorRates>,
}

impl AlgorithmResult {
    /// The figure used for orderings: test error when a test set exists,
    /// else noisy training error.
    pub fn primary_error(&self) -> f64 {
        self.test.map_or(self.train.noisy_error, |t| t.noisy_error)
    }

    fn metrics(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("train_error", self.train.noisy_error),
            ("train_clean_error", self.train.clean_error),
            ("train_below_theta", self.train.below_theta_fraction),
            ("train_clean_error_above_theta", self.train.clean_error_above_theta),
        ];
        if let Some(t) = &self.test {
            v.extend([
                ("test_error", t.noisy_error),
                ("test_clean_error", t.clean_error),
                ("test_below_theta", t.below_theta_fraction),
                ("test_clean_error_above_theta", t.clean_error_above_theta),
            ]);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub repetition: usize,
    pub seeds: RepetitionSeeds,
    pub results: Vec<AlgorithmResult>,
}

impl RepetitionResult {
    pub fn result(&self, label: &str) -> Option<&AlgorithmResult> {
        self.results.iter().find(|r| r.label == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std =
            if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Summary { n, mean: mean.clamp(min, max), std, min, max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmAggregate {
    pub runs: usize,
    pub terminated: usize,
    /// Runs left out of the summaries.
    pub excluded: usize,
    pub metrics: BTreeMap<String, Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub rng: String,
    pub seeds: Vec<RepetitionSeeds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub per_repetition: Vec<RepetitionResult>,
    pub aggregate: BTreeMap<String, AlgorithmAggregate>,
    /// `"A < B"` → repetitions in which A's primary error is strictly lower.
    pub orderings: BTreeMap<String, usize>,
    pub provenance: Provenance,
}

impl ExperimentReport {
    pub fn summary(&self, label: &str, metric: &str) -> Option<&Summary> {
        self.aggregate.get(label)?.metrics.get(metric)
    }

    /// Repetitions whose primary errors are strictly increasing along `chain`.
    pub fn chain_count(&self, chain: &[&str]) -> usize {
        self.per_repetition
            .iter()
            .filter(|rep| {
                let errs: Option<Vec<f64>> = chain.iter().map(|l| rep.result(l).map(|r| r.primary_error())).collect();
                errs.is_some_and(|e| e.windows(2).all(|w| w[0] < w[1]))
            })
            .count()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn write_raw_csv(&self, out: &mut impl Write) -> Result<(), HarnessError> {
        writeln!(
            out,
            "repetition,seed,algorithm,iterations,terminated,stop,final_t,train_error,train_clean_error,\
             train_below_theta,train_clean_error_above_theta,test_error,test_clean_error,test_below_theta,\
             test_clean_error_above_theta"
        )?;
        for rep in &self.per_repetition {
            for r in &rep.results {
                let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
                let stop = serde_json::to_value(r.stop)?;
                write!(
                    out,
                    "{},{},{},{},{},{},{},{:?},{:?},{:?},{:?}",
                    rep.repetition,
                    rep.seeds.seed,
                    csv_field(&r.label),
                    r.iterations,
                    r.terminated,
                    stop.as_str().unwrap_or_default(),
                    opt(r.final_t),
                    r.train.noisy_error,
                    r.train.clean_error,
                    r.train.below_theta_fraction,
                    r.train.clean_error_above_theta,
                )?;
                match &r.test {
                    Some(t) => writeln!(
                        out,
                        ",{:?},{:?},{:?},{:?}",
                        t.noisy_error, t.clean_error, t.below_theta_fraction, t.clean_error_above_theta
                    )?,
                    None => writeln!(out, ",,,,")?,
                }
            }
        }
        Ok(())
    }

    /// Percent table, one column per algorithm.
    pub fn table(&self) -> String {
        let labels: Vec<&str> = self.config.algorithms.iter().map(|a| a.label.as_str()).collect();
        let has_test = self.config.n_test > 0;
        let mut rows: Vec<(&str, &str)> = Vec::new();
        if has_test {
            rows.extend([
                ("test error", "test_error"),
                ("clean test error", "test_clean_error"),
                ("low margin (test)", "test_below_theta"),
                ("clean err above θ", "test_clean_error_above_theta"),
            ]);
        }
        rows.extend([("training error", "train_error"), ("clean training error", "train_clean_error")]);

        let mut cells: Vec<Vec<String>> = Vec::new();
        let mut header = vec![String::new()];
        header.extend(labels.iter().map(|l| l.to_string()));
        cells.push(header);
        for (name, key) in rows {
            let mut row = vec![name.to_string()];
            for l in &labels {
                row.push(match self.summary(l, key) {
                    Some(s) => format!("{:.1} ± {:.1}", 100.0 * s.mean, 100.0 * s.std),
                    None => "n/a".into(),
                });
            }
            cells.push(row);
        }
        let mut term = vec!["terminated".to_string()];
        for l in &labels {
            let a = &self.aggregate[*l];
            term.push(format!("{}/{}", a.terminated, a.runs));
        }
        cells.push(term);

        let widths: Vec<usize> =
            (0..cells[0].len()).map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    let pad = widths[c] - s.chars().count();
                    if c == 0 {
                        format!("{s}{}", " ".repeat(pad))
                    } else {
                        format!("{}{s}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn run_repetition(cfg: &ExperimentConfig, repetition: usize) -> Result<RepetitionResult, HarnessError> {
    let seeds = cfg.seeds(repetition);
    let train = cfg.problem.generate(cfg.n_train, cfg.q, seeds.train)?;
    let test = if cfg.n_test > 0 { Some(cfg.problem.generate(cfg.n_test, cfg.q, seeds.test)?) } else { None };
    let learner = Learner::new(cfg.learner, &train);
    let mut results = Vec::with_capacity(cfg.algorithms.len());
    for spec in &cfg.algorithms {
        let run = train_algorithm(spec, &train, &learner, cfg.logit_step, &[])?;
        let trace = &run.trained.trace;
        let theta = spec.theta();
        results.push(AlgorithmResult {
            label: spec.label.clone(),
            iterations: trace.iterations(),
            terminated: run.terminated,
            stop: trace.stop,
            final_t: trace.final_t(),
            rejected_attempts: trace.rejected_attempts,
            train: error_rates(&run.trained.ensemble, &train, theta),
            test: test.as_ref().map(|t| error_rates(&run.trained.ensemble, t, theta)),
        });
    }
    Ok(RepetitionResult { repetition, seeds, results })
}

fn aggregate(cfg: &ExperimentConfig, reps: &[RepetitionResult]) -> BTreeMap<String, AlgorithmAggregate> {
    let mut out = BTreeMap::new();
    for spec in &cfg.algorithms {
        let runs: Vec<&AlgorithmResult> = reps.iter().filter_map(|r| r.result(&spec.label)).collect();
        let kept: Vec<&&AlgorithmResult> = runs.iter().filter(|r| r.terminated || cfg.include_nonterminated).collect();
        let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &kept {
            for (k, v) in r.metrics() {
                values.entry(k).or_default().push(v);
            }
        }
        let metrics = values.into_iter().filter_map(|(k, v)| Summary::of(&v).map(|s| (k.to_string(), s))).collect();
        out.insert(
            spec.label.clone(),
            AlgorithmAggregate {
                runs: runs.len(),
                terminated: runs.iter().filter(|r| r.terminated).count(),
                excluded: runs.len() - kept.len(),
                metrics,
            },
        );
    }
    out
}

fn orderings(cfg: &ExperimentConfig, reps: &[RepetitionResult]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for a in &cfg.algorithms {
        for b in &cfg.algorithms {
            if a.label == b.label {
                continue;
            }
            let count = reps
                .iter()
                .filter(|r| match (r.result(&a.label), r.result(&b.label)) {
                    (Some(x), Some(y)) => x.primary_error() < y.primary_error(),
                    _ => false,
                })
                .count();
            out.insert(format!("{} < {}", a.label, b.label), count);
        }
    }
    out
}

/// Runs every repetition and aggregates. Non-terminated RobustBoost runs stay
/// in `per_repetition` and the orderings but are left out of the summaries
/// unless `include_nonterminated` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let reps: Vec<RepetitionResult> = if cfg.workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        pool.install(|| (0..cfg.repetitions).into_par_iter().map(|r| run_repetition(cfg, r)).collect::<Result<_, _>>())?
    } else {
        (0..cfg.repetitions).map(|r| run_repetition(cfg, r)).collect::<Result<_, _>>()?
    };

    // Worker count and output paths do not change the results.
    let mut recorded = cfg.clone();
    recorded.workers = 1;
    recorded.report = None;
    recorded.raw_csv = None;
    Ok(ExperimentReport {
        aggregate: aggregate(cfg, &reps),
        orderings: orderings(cfg, &reps),
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: recorded.hash(),
            rng: RNG_NAME.to_string(),
            seeds: (0..cfg.repetitions).map(|r| cfg.seeds(r)).collect(),
        },
        config: recorded,
        per_repetition: reps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonOutcome {
    pub epsilon: f64,
    pub terminated: bool,
    pub iterations: usize,
    pub final_t: Option<f64>,
    pub train_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSearch {
    pub seed: u64,
    pub budget: usize,
    /// Sorted by decreasing ε.
    pub outcomes: Vec<EpsilonOutcome>,
    pub minimal_feasible: f64,
    /// `(ε₁, ε₂)` with ε₁ < ε₂ where ε₁ terminated but ε₂ did not.
    pub anomalies: Vec<(f64, f64)>,
}

pub const DEFAULT_EPSILON_GRID: [f64; 7] = [0.30, 0.25, 0.20, 0.16, 0.14, 0.12, 0.10];

/// Trains the first RobustBoost entry of `cfg` on the training set of
/// repetition 0 for every ε in `grid` and reports the smallest ε that
/// terminates within `budget` iterations.
pub fn epsilon_search(cfg: &ExperimentConfig, grid: &[f64], budget: usize) -> Result<EpsilonSearch, HarnessError> {
    if budget == 0 {
        return Err(HarnessError::Config("budget must be at least 1".into()));
    }
    if grid.is_empty() {
        return Err(HarnessError::Config("empty epsilon grid".into()));
    }
    let base = cfg
        .algorithms
        .iter()
        .find(|a| a.kind == PotentialKind::Robustboost)
        .cloned()
        .unwrap_or_else(|| AlgorithmSpec::robustboost("Robust", budget, 0.5, 0.0, 0.1));
    let seeds = cfg.seeds(0);
    let ds = cfg.problem.generate(cfg.n_train, cfg.q, seeds.train)?;
    let learner = Learner::new(cfg.learner, &ds);
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();

    let mut outcomes = Vec::with_capacity(grid.len());
    for &eps in &grid {
        let spec = AlgorithmSpec { epsilon: Some(eps), iterations: budget, ..base.clone() };
        let run = train_algorithm(&spec, &ds, &learner, cfg.logit_step, &[])?;
        outcomes.push(EpsilonOutcome {
            epsilon: eps,
            terminated: run.terminated,
            iterations: run.trained.trace.iterations(),
            final_t: run.trained.trace.final_t(),
            train_error: error_rates(&run.trained.ensemble, &ds, spec.theta()).noisy_error,
        });
    }
    let mut anomalies = Vec::new();
    for (i, hi) in outcomes.iter().enumerate() {
        for lo in &outcomes[i + 1..] {
            if lo.terminated && !hi.terminated {
                anomalies.push((lo.epsilon, hi.epsilon));
            }
        }
    }
    match outcomes.iter().filter(|o| o.terminated).map(|o| o.epsilon).reduce(f64::min) {
        Some(minimal_feasible) => {
            Ok(EpsilonSearch { seed: seeds.train, budget, outcomes, minimal_feasible, anomalies })
        }
        None => Err(HarnessError::AllInfeasible { budget, outcomes }),
    }
}

/// Number of margin grid points in the exported potential curve.
pub const CURVE_POINTS: usize = 201;

/// Writes the margins recorded at `iteration` together with a sampled
/// potential curve.
///
/// Columns: `row_type,margin,weight,potential,clean_correct,kind`. Example
/// rows carry the unnormalized weight at the snapshot time; curve rows span
/// the observed margins (and `μ(t)` for RobustBoost) with one point at `μ(t)`.
pub fn export_score_distribution(
    trace: &BoostTrace,
    params: Option<&RobustBoostParams>,
    ds: &Dataset,
    iteration: usize,
    out: &mut impl Write,
) -> Result<(), HarnessError> {
    let snap = trace.snapshot(iteration).ok_or(HarnessError::MissingSnapshot(iteration))?;
    if snap.margins.len() != ds.len() {
        return Err(HarnessError::Config(format!(
            "snapshot has {} margins but the dataset has {} examples",
            snap.margins.len(),
            ds.len()
        )));
    }
    let eval: Box<dyn Fn(f64) -> (f64, f64)> = match (trace.kind, params) {
        (PotentialKind::Robustboost, Some(p)) => {
            let slice = p.at(snap.t.unwrap_or(0.0).min(1.0))?;
            Box::new(move |m| (slice.weight(m), slice.potential(m)))
        }
        (PotentialKind::Robustboost, None) => {
            return Err(HarnessError::Config("robustboost export needs its parameters".into()))
        }
        (kind, _) => Box::new(move |m| {
            (baseline_weight(kind, m).expect("baseline"), baseline_potential(kind, m).expect("baseline"))
        }),
    };

    writeln!(out, "row_type,margin,weight,potential,clean_correct,kind")?;
    let kinds = ds.kinds();
    for (j, &m) in snap.margins.iter().enumerate() {
        let (w, phi) = eval(m);
        // m = y s(x), so the clean margin is m y y_clean.
        let clean = m * f64::from(ds.labels()[j]) * f64::from(ds.clean_labels()[j]) > 0.0;
        let kind = kinds.map(|k| k[j].code().to_string()).unwrap_or_default();
        writeln!(out, "example,{m:?},{w:?},{phi:?},{},{kind}", u8::from(clean))?;
    }

    let centre = match (trace.kind, params) {
        (PotentialKind::Robustboost, Some(p)) => Some(p.mu(snap.t.unwrap_or(0.0).min(1.0))?),
        _ => None,
    };
    let mut lo = snap.margins.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = snap.margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if let Some(c) = centre {
        lo = lo.min(c);
        hi = hi.max(c);
    }
    let pad = 0.1 * (hi - lo).max(1.0);
    let (lo, hi) = (lo - pad, hi + pad);
    let mut grid: Vec<f64> = (0..CURVE_POINTS).map(|k| lo + (hi - lo) * k as f64 / (CURVE_POINTS - 1) as f64).collect();
    if let Some(c) = centre {
        grid.push(c);
        grid.sort_by(f64::total_cmp);
    }
    for m in grid {
        let (w, phi) = eval(m);
        writeln!(out, "curve,{m:?},{w:?},{phi:?},,")?;
    }
    Ok(())
}
