//! Command-line front end: `fit`, `patterns` and `simulate`.
//!
//! Exit codes: 0 on success, 1 on user or data errors, 2 when an internal
//! invariant is broken.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;

use crate::averaging::{CriterionProblem, OptimizerOptions, DEFAULT_LAMBDA};
use crate::baselines::{fit_cc, fit_mim};
use crate::data::{load_csv, zero_fill, DEFAULT_NA_TOKEN};
use crate::error::{Error, Result};
use crate::evalsim::{render_csv, render_table, run_grid, EvaluationDesign, SimConfig};
use crate::glm::{fit_all, FamilyKind, GlmFamily};
use crate::patterns::{build_candidates, detect_column_groups, CandidateKind};

pub const THREADS_ENV: &str = "MCAR_AVG_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mcar-avg", version, about = "Model averaging for GLMs with covariates missing completely at random")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the averaged estimator (plus CC and MIM baselines) on a CSV file
    Fit(FitArgs),
    /// Print column groups and candidate models for a CSV file
    Patterns(InputArgs),
    /// Run the Monte Carlo comparison
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Token marking a missing covariate cell
    #[arg(long = "na", default_value = DEFAULT_NA_TOKEN)]
    pub na_token: String,
    #[arg(long, default_value = "y")]
    pub response: String,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "bernoulli")]
    pub family: String,
    /// Dispersion; only meaningful for the gaussian family
    #[arg(long, default_value_t = 1.0)]
    pub phi: f64,
    #[arg(long = "lambda", default_value_t = DEFAULT_LAMBDA)]
    pub lambda_n: f64,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvaluationArg {
    Observed,
    Complete,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "bernoulli")]
    pub family: String,
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 200])]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [-0.3f64, 0.0, 0.5])]
    pub a: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = SimConfig::default().seed)]
    pub seed: u64,
    #[arg(long = "lambda", default_value_t = DEFAULT_LAMBDA)]
    pub lambda_n: f64,
    /// Output file; format follows --format, else the extension (.csv), else JSON
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Shorthand for --format table
    #[arg(long)]
    pub table: bool,
    /// Include per-replication values in JSON output
    #[arg(long)]
    pub values: bool,
    /// Covariates used to score each estimator's linear predictor
    #[arg(long, value_enum, default_value = "complete")]
    pub evaluation: EvaluationArg,
    /// Worker threads (falls back to MCAR_AVG_THREADS, then all cores)
    #[arg(long)]
    pub threads: Option<usize>,
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(&args),
        Command::Patterns(args) => cmd_patterns(&args),
        Command::Simulate(args) => cmd_simulate(&args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_internal() {
                2
            } else {
                1
            }
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct CandidateSummary {
    id: usize,
    kind: CandidateKind,
    k_s: usize,
    n_s: usize,
    columns: Vec<usize>,
    converged: bool,
    iterations: usize,
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let d = load_csv(&args.input.input, &args.input.na_token, &args.input.response)?;
    let kind: FamilyKind = args.family.parse()?;
    let family = GlmFamily { kind, phi: args.phi };
    if !(family.phi > 0.0) {
        return Err(Error::Config("phi must be positive".into()));
    }
    let candidates = build_candidates(&d)?;
    let xt = zero_fill(&d)?;
    let fits = fit_all(&family, &candidates, &d)?;
    let problem = CriterionProblem::from_fits(family, &fits, xt.matrix(), d.y(), args.lambda_n)?;
    let est = problem.estimate(&problem.minimize(&OptimizerOptions::default())?)?;

    let cc = fit_cc(&family, &d)?;
    let mim = fit_mim(&family, &d)?;
    let vec = |v: &DVector<f64>| v.iter().copied().collect::<Vec<f64>>();
    let candidates: Vec<CandidateSummary> = fits
        .iter()
        .map(|f| CandidateSummary {
            id: f.candidate.id,
            kind: f.candidate.kind,
            k_s: f.candidate.k_s(),
            n_s: f.candidate.n_s(),
            columns: f.candidate.columns.clone(),
            converged: f.converged,
            iterations: f.iterations,
        })
        .collect();
    let out = json!({
        "family": family.kind,
        "lambda": args.lambda_n,
        "column_names": d.column_names(),
        "weights": est.weights.as_slice(),
        "beta": vec(&est.beta),
        "criterion": est.criterion_value,
        "optimizer": {
            "iterations": est.iterations,
            "projected_gradient_norm": est.projected_gradient_norm,
            "warning": est.warning,
        },
        "candidates": candidates,
        "baselines": {
            "CC": vec(&cc.beta_full),
            "MIM": vec(&mim),
        },
    });
    emit(args.out.as_deref(), &to_json(&out))
}

pub fn cmd_patterns(args: &InputArgs) -> Result<()> {
    let d = load_csv(&args.input, &args.na_token, &args.response)?;
    let groups = detect_column_groups(&d);
    let candidates = build_candidates(&d)?;
    let cands: Vec<_> = candidates
        .iter()
        .map(|c| json!({"id": c.id, "kind": c.kind, "rows_count": c.n_s(), "columns": c.columns}))
        .collect();
    emit(None, &to_json(&json!({"groups": groups, "candidates": cands})))
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(t) = flag {
        return Ok(Some(t));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let family: FamilyKind = args.family.parse()?;
    let base = SimConfig {
        family,
        replications: args.reps,
        seed: args.seed,
        lambda_n: args.lambda_n,
        evaluation: match args.evaluation {
            EvaluationArg::Observed => EvaluationDesign::Observed,
            EvaluationArg::Complete => EvaluationDesign::Complete,
        },
        ..SimConfig::default()
    };
    if args.n.is_empty() || args.a.is_empty() {
        return Err(Error::Config("need at least one n and one a".into()));
    }
    let format = if args.table {
        OutputFormat::Table
    } else if let Some(f) = args.format {
        f
    } else if args.out.as_deref().and_then(Path::extension).is_some_and(|e| e == "csv") {
        OutputFormat::Csv
    } else {
        OutputFormat::Json
    };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = thread_count(args.threads)? {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results = pool.install(|| run_grid(&base, &args.n, &args.a))?;

    let text = match format {
        OutputFormat::Table => render_table(&results),
        OutputFormat::Csv => render_csv(&results)?,
        OutputFormat::Json => {
            let cells: Vec<_> = results.iter().map(|r| r.report(args.values)).collect();
            to_json(&json!({ "cells": cells }))
        }
    };
    emit(args.out.as_deref(), &text)
}
