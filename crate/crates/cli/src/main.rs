use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{CommandFactory, Parser, Subcommand};
use serde::de::DeserializeOwned;

use robustboost::harness::{
    epsilon_search, run_experiment, train_algorithm, workers_from_env, AlgorithmSpec, EpsilonOutcome, ExperimentConfig,
    HarnessError, Problem, SavedModel, DEFAULT_EPSILON_GRID,
};
use robustboost::{load_csv, save_csv, Learner, LearnerKind, LogitStep, PotentialKind};

#[derive(Parser)]
#[command(
    name = "robustboost",
    version,
    about = "RobustBoost, AdaBoost and LogitBoost on synthetic label-noise benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and write it as CSV.
    Generate {
        #[arg(long, value_parser = parse_enum::<Problem>)]
        problem: Problem,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        q: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one booster on a CSV dataset and save the model as JSON.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_enum::<PotentialKind>)]
        algorithm: PotentialKind,
        #[arg(long, value_parser = parse_enum::<LearnerKind>, default_value = "stump")]
        learner: LearnerKind,
        #[arg(long, default_value_t = 300)]
        iterations: usize,
        /// RobustBoost error goal.
        #[arg(long)]
        epsilon: Option<f64>,
        /// RobustBoost goal margin.
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        sigma_f: Option<f64>,
        #[arg(long, value_parser = parse_enum::<LogitStep>, default_value = "bound")]
        logit_step: LogitStep,
        /// Iterations at which to record margins, comma separated.
        #[arg(long, value_delimiter = ',')]
        snapshots: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Error rates of a saved model on a CSV dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Margin threshold for the low-margin columns; defaults to the model's θ.
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Run a repeated experiment, print the table and write the reports.
    ///
    /// Any further `--key value` pair overrides the config field `key`.
    Experiment {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        workers: Option<usize>,
        /// Report JSON path [default: report.json].
        #[arg(long)]
        report: Option<PathBuf>,
        /// Raw per-repetition CSV [default: report path with a .csv extension].
        #[arg(long)]
        raw_csv: Option<PathBuf>,
    },
    /// Smallest ε on a grid for which RobustBoost terminates within the budget.
    EpsilonSearch {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 300)]
        budget: usize,
        #[arg(long)]
        json: bool,
    },
    /// Write margins, weights and a potential curve for one snapshot.
    ExportScores {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        iteration: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct ConfigSource {
    /// Experiment config JSON.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config: long_servedio or mease_wyner.
    #[arg(long)]
    preset: Option<String>,
    /// Config override, repeatable. `--key value` is shorthand for `--set key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(m) => Failure::Usage(m),
            e => Failure::Runtime(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

/// Rewrites unknown `--key value` (or `--key=value`) pairs after an
/// `experiment` or `epsilon-search` subcommand into `--set key=value`.
fn expand_overrides(args: Vec<String>) -> Vec<String> {
    let cmd = Cli::command();
    let pos = 1;
    if !args.get(pos).is_some_and(|a| matches!(a.as_str(), "experiment" | "epsilon-search")) {
        return args;
    }
    let sub = cmd.find_subcommand(&args[pos]).expect("subcommand exists");
    let known: Vec<&str> = sub.get_arguments().filter_map(|a| a.get_long()).chain(["help"]).collect();

    let mut out = args[..=pos].to_vec();
    let mut rest = args[pos + 1..].iter();
    while let Some(a) = rest.next() {
        let Some(flag) = a.strip_prefix("--") else {
            out.push(a.clone());
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (flag, None),
        };
        if key.is_empty() || known.contains(&key) {
            out.push(a.clone());
            continue;
        }
        let Some(value) = inline.or_else(|| rest.next().cloned()) else {
            out.push(a.clone());
            continue;
        };
        out.push("--set".into());
        out.push(format!("{key}={value}"));
    }
    out
}

fn load_config(source: &ConfigSource) -> Result<ExperimentConfig, Failure> {
    let mut overrides = Vec::with_capacity(source.set.len());
    for s in &source.set {
        let (k, v) =
            s.split_once('=').ok_or_else(|| Failure::Usage(format!("override {s} is not of the form key=value")))?;
        overrides.push((k.replace('-', "_"), v.to_string()));
    }
    let mut cfg = match (&source.config, source.preset.as_deref()) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        (None, None | Some("long_servedio")) => ExperimentConfig::long_servedio(),
        (None, Some("mease_wyner")) => {
            // q and the learner shape the preset's defaults, so read them first.
            let lookup = |key: &str| overrides.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
            let q = match lookup("q") {
                Some(v) => v.parse().map_err(|_| Failure::Usage(format!("q needs a number, got {v}")))?,
                None => 0.1,
            };
            let learner = match lookup("learner") {
                Some(v) => parse_enum(v).map_err(Failure::Usage)?,
                None => LearnerKind::Stump,
            };
            ExperimentConfig::mease_wyner(q, learner)
        }
        (None, Some(other)) => return Err(Failure::Usage(format!("unknown preset {other}"))),
    };
    for (k, v) in &overrides {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { problem, n, q, seed, out } => {
            let ds = problem.generate(n, q, seed).map_err(|e| Failure::Usage(e.to_string()))?;
            save_csv(&ds, &out).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Train {
            data,
            algorithm,
            learner,
            iterations,
            epsilon,
            theta,
            sigma_f,
            logit_step,
            snapshots,
            out,
        } => {
            let spec = match algorithm {
                PotentialKind::Adaboost => AlgorithmSpec::adaboost(iterations),
                PotentialKind::Logitboost => AlgorithmSpec::logitboost(iterations),
                PotentialKind::Robustboost => {
                    let epsilon = epsilon.ok_or_else(|| Failure::Usage("robustboost needs --epsilon".into()))?;
                    AlgorithmSpec::robustboost(
                        "Robust",
                        iterations,
                        epsilon,
                        theta.unwrap_or(0.0),
                        sigma_f.unwrap_or(0.1),
                    )
                }
            };
            if algorithm != PotentialKind::Robustboost && (epsilon.is_some() || theta.is_some() || sigma_f.is_some()) {
                return Err(Failure::Usage("--epsilon, --theta and --sigma-f apply to robustboost only".into()));
            }
            spec.params()?;
            let ds = load_csv(&data).with_context(|| format!("reading {}", data.display()))?;
            if learner == LearnerKind::Coordinate && ds.rows().flatten().any(|&v| v != 1.0 && v != -1.0) {
                return Err(Failure::Usage("the coordinate learner needs ±1 features".into()));
            }
            let run = train_algorithm(&spec, &ds, &Learner::new(learner, &ds), logit_step, &snapshots)?;
            let model = SavedModel::new(spec, learner, logit_step, run);
            model.save(&out)?;
            let rates = model.error_rates(&ds, None);
            eprintln!(
                "{} rounds, training error {}%, written to {}",
                model.trace.iterations(),
                pct(rates.noisy_error),
                out.display()
            );
            if !model.terminated {
                return Err(Failure::Runtime(anyhow::anyhow!(
                    "robustboost did not reach t = 1 within {iterations} iterations (final t = {:.4}); partial model saved",
                    model.trace.final_t().unwrap_or(0.0)
                )));
            }
        }
        Command::Evaluate { model, data, theta, json } => {
            let model = SavedModel::load(&model)?;
            let ds = load_csv(&data).with_context(|| format!("reading {}", data.display()))?;
            let rates = model.error_rates(&ds, theta);
            if json {
                println!("{}", serde_json::to_string_pretty(&rates).expect("rates serialize"));
            } else {
                let theta = theta.unwrap_or_else(|| model.algorithm.theta());
                println!("error                   {:>7}%", pct(rates.noisy_error));
                println!("clean error             {:>7}%", pct(rates.clean_error));
                println!("|score| < {theta:<13} {:>7}%", pct(rates.below_theta_fraction));
                println!("clean error above θ     {:>7}%", pct(rates.clean_error_above_theta));
            }
        }
        Command::Experiment { source, workers, report, raw_csv } => {
            let mut cfg = load_config(&source)?;
            if let Some(w) = workers.or(workers_from_env()?) {
                cfg.workers = w;
            }
            let report_path = report.or(cfg.report.clone()).unwrap_or_else(|| PathBuf::from("report.json"));
            let csv_path = raw_csv.or(cfg.raw_csv.clone()).unwrap_or_else(|| report_path.with_extension("csv"));
            cfg.validate()?;
            let rep = run_experiment(&cfg)?;
            print!("{}", rep.table());
            rep.write_json(&report_path)?;
            let mut w = create(&csv_path)?;
            rep.write_raw_csv(&mut w)?;
            w.flush().context("writing raw csv")?;
            eprintln!("report written to {} and {}", report_path.display(), csv_path.display());
        }
        Command::EpsilonSearch { source, grid, budget, json } => {
            let cfg = load_config(&source)?;
            cfg.validate()?;
            let grid = if grid.is_empty() { DEFAULT_EPSILON_GRID.to_vec() } else { grid };
            match epsilon_search(&cfg, &grid, budget) {
                Ok(found) if json => println!("{}", serde_json::to_string_pretty(&found).expect("search serializes")),
                Ok(found) => {
                    print_outcomes(&found.outcomes);
                    for (lo, hi) in &found.anomalies {
                        println!("anomaly: ε={lo} terminated but ε={hi} did not");
                    }
                    println!("minimal feasible ε: {}", found.minimal_feasible);
                }
                Err(HarnessError::AllInfeasible { budget, outcomes }) => {
                    print_outcomes(&outcomes);
                    return Err(Failure::Runtime(anyhow::anyhow!(
                        "no candidate epsilon terminated within {budget} iterations"
                    )));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::ExportScores { model, data, iteration, out } => {
            let model = SavedModel::load(&model)?;
            let ds = load_csv(&data).with_context(|| format!("reading {}", data.display()))?;
            let mut w = create(&out)?;
            model.export_scores(&ds, iteration, &mut w)?;
            w.flush().context("writing scores")?;
        }
    }
    Ok(())
}

fn print_outcomes(outcomes: &[EpsilonOutcome]) {
    println!("{:>8} {:>10} {:>10} {:>8} {:>9}", "epsilon", "terminated", "iterations", "final t", "error %");
    for o in outcomes {
        let t = o.final_t.map_or("-".to_string(), |t| format!("{t:.4}"));
        println!(
            "{:>8} {:>10} {:>10} {:>8} {:>9}",
            o.epsilon,
            if o.terminated { "yes" } else { "no" },
            o.iterations,
            t,
            pct(o.train_error)
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(expand_overrides(std::env::args().collect()));
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
