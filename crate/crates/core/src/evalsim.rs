//! Monte Carlo comparison of the averaged estimator (MOPT) with the CC, MIM
//! and MIMA baselines under covariates missing completely at random.
//!
//! Each replication draws equicorrelated Gaussian covariates, a response from
//! the chosen family, and independent standard-normal noise that masks a
//! covariate cell whenever it falls below the threshold `a`. Estimators are
//! scored by the KL loss of their linear predictor against the truth.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{CriterionProblem, OptimizerOptions, DEFAULT_LAMBDA};
use crate::baselines::{fit_cc, fit_mim, fit_mima_with, mean_impute};
use crate::data::{zero_fill, ObservedDataset};
use crate::error::{Error, Result};
use crate::glm::{fit_all, FamilyKind, GlmFamily};
use crate::patterns::build_candidates;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub family: FamilyKind,
    pub n: usize,
    pub a: f64,
    pub replications: usize,
    pub seed: u64,
    pub beta_true: Vec<f64>,
    pub correlation: f64,
    pub drop_last_covariate: bool,
    /// Columns (0-based, in the full covariate vector) subject to masking;
    /// the k-th listed column is masked when the k-th noise draw is below `a`.
    pub missing_columns: Vec<usize>,
    pub lambda_n: f64,
    #[serde(default)]
    pub evaluation: EvaluationDesign,
}

/// Which covariate values turn estimated coefficients into the linear
/// predictor that is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvaluationDesign {
    /// Each method's own feasible design: `X̃` for MOPT and CC, the
    /// mean-imputed matrix for MIM and MIMA.
    Observed,
    /// The covariates before masking (the dropped column stays dropped).
    /// This is the scoring that reproduces the published comparison table.
    #[default]
    Complete,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            family: FamilyKind::Bernoulli,
            n: 100,
            a: 0.0,
            replications: 1000,
            seed: 20_240_101,
            beta_true: vec![1.0, 0.2, -1.2, -1.0, 0.1],
            correlation: 0.75,
            drop_last_covariate: true,
            missing_columns: vec![2, 3],
            lambda_n: DEFAULT_LAMBDA,
            evaluation: EvaluationDesign::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.beta_true.len();
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if !(self.correlation > -1.0 && self.correlation < 1.0) {
            return Err(Error::Config(format!("correlation {} outside (-1, 1)", self.correlation)));
        }
        if p == 0 || (self.drop_last_covariate && p < 2) {
            return Err(Error::Config("too few true coefficients".into()));
        }
        let visible = self.visible_columns();
        if let Some(c) = self.missing_columns.iter().find(|&&c| c >= visible) {
            return Err(Error::Config(format!("missing column {c} is not visible to the estimators")));
        }
        if !self.a.is_finite() || !self.lambda_n.is_finite() {
            return Err(Error::Config("a and lambda must be finite".into()));
        }
        Ok(())
    }

    /// Number of covariates handed to the estimators.
    pub fn visible_columns(&self) -> usize {
        self.beta_true.len() - usize::from(self.drop_last_covariate)
    }

    pub fn family(&self) -> GlmFamily {
        GlmFamily::from_kind(self.family)
    }

    fn covariate_factor(&self) -> Result<DMatrix<f64>> {
        let p = self.beta_true.len();
        let corr = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { self.correlation });
        corr.cholesky()
            .map(|c| c.unpack())
            .ok_or_else(|| Error::Config(format!("correlation {} is not positive definite", self.correlation)))
    }
}

/// True canonical parameter and mean for every row, using all covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub mu: DVector<f64>,
    pub theta0: DVector<f64>,
    /// visible covariates before masking
    pub x_complete: DMatrix<f64>,
}

/// Independent generator for replication `rep`: one ChaCha stream per index
/// under the master seed.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

pub fn generate_replication(cfg: &SimConfig, rep: usize) -> Result<(ObservedDataset, Truth)> {
    cfg.validate()?;
    let factor = cfg.covariate_factor()?;
    let family = cfg.family();
    let p = cfg.beta_true.len();
    let beta = DVector::from_column_slice(&cfg.beta_true);
    let m = cfg.missing_columns.len();
    let mut rng = replication_rng(cfg.seed, rep);

    let mut x = DMatrix::zeros(cfg.n, p);
    let mut mask = DMatrix::from_element(cfg.n, cfg.visible_columns(), true);
    let mut theta0 = DVector::zeros(cfg.n);
    let mut mu = DVector::zeros(cfg.n);
    let mut y = DVector::zeros(cfg.n);
    for i in 0..cfg.n {
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let xi = &factor * z;
        for k in 0..m {
            let e: f64 = rng.sample(StandardNormal);
            if e < cfg.a {
                mask[(i, cfg.missing_columns[k])] = false;
            }
        }
        let t = xi.dot(&beta);
        let mean = family.b_prime(t);
        y[i] = match cfg.family {
            FamilyKind::Bernoulli => f64::from(u8::from(rng.random::<f64>() < mean)),
            FamilyKind::Poisson => Poisson::new(mean)
                .map_err(|e| Error::Config(format!("poisson mean {mean}: {e}")))?
                .sample(&mut rng),
            FamilyKind::Gaussian => mean + family.phi.sqrt() * rng.sample::<f64, _>(StandardNormal),
        };
        x.set_row(i, &xi.transpose());
        theta0[i] = t;
        mu[i] = mean;
    }

    let visible = x.columns(0, cfg.visible_columns()).into_owned();
    let names = (1..=visible.ncols()).map(|j| format!("x{j}")).collect();
    let d = ObservedDataset::new(y, visible.clone(), mask, names)?;
    Ok((d, Truth { mu, theta0, x_complete: visible }))
}

/// `2/φ · [B(θ̂) − B(θ₀) − μᵀ(θ̂ − θ₀)]` summed over rows.
pub fn kl_loss(f: &GlmFamily, theta_hat: &DVector<f64>, truth: &Truth) -> Result<f64> {
    let n = theta_hat.len();
    if truth.theta0.len() != n || truth.mu.len() != n {
        return Err(Error::Dimension(format!(
            "θ̂ has length {n}, truth has {} / {}",
            truth.theta0.len(),
            truth.mu.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        let (th, t0, mu) = (theta_hat[i], truth.theta0[i], truth.mu[i]);
        total += f.b(th) - f.b(t0) - mu * (th - t0);
    }
    Ok(2.0 / f.phi * total)
}

pub fn kl_loss_per_obs(f: &GlmFamily, theta_hat: &DVector<f64>, truth: &Truth) -> Result<f64> {
    Ok(kl_loss(f, theta_hat, truth)? / theta_hat.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MOPT")]
    Mopt,
    #[serde(rename = "CC")]
    Cc,
    #[serde(rename = "MIM")]
    Mim,
    #[serde(rename = "MIMA")]
    Mima,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Mopt, Method::Cc, Method::Mim, Method::Mima];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mopt => "MOPT",
            Method::Cc => "CC",
            Method::Mim => "MIM",
            Method::Mima => "MIMA",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-observation KL loss of each method on one replication; `None` marks a
/// method that could not be fitted (e.g. no complete cases).
pub fn run_replication(cfg: &SimConfig, rep: usize) -> Result<[Option<f64>; 4]> {
    let (d, truth) = generate_replication(cfg, rep)?;
    let f = cfg.family();
    let opts = OptimizerOptions::default();
    let xt = zero_filled(&d);
    let score = |own: &DMatrix<f64>, beta: &DVector<f64>| {
        let design = match cfg.evaluation {
            EvaluationDesign::Observed => own,
            EvaluationDesign::Complete => &truth.x_complete,
        };
        kl_loss_per_obs(&f, &(design * beta), &truth)
    };

    let mopt = (|| {
        let candidates = build_candidates(&d)?;
        let fits = fit_all(&f, &candidates, &d)?;
        let xt = zero_fill(&d)?;
        let problem = CriterionProblem::from_fits(f, &fits, xt.matrix(), d.y(), cfg.lambda_n)?;
        let est = problem.estimate(&problem.minimize(&opts)?)?;
        score(xt.matrix(), &est.beta)
    })();
    let cc = fit_cc(&f, &d).and_then(|fit| score(&xt, &fit.beta_full));
    let mim = (|| score(&mean_impute(&d)?.x_imputed, &fit_mim(&f, &d)?))();
    let mima = (|| {
        let est = fit_mima_with(&f, &d, cfg.lambda_n, &opts)?;
        score(&mean_impute(&d)?.x_imputed, &est.beta)
    })();

    Ok([mopt.ok(), cc.ok(), mim.ok(), mima.ok()])
}

fn zero_filled(d: &ObservedDataset) -> DMatrix<f64> {
    DMatrix::from_fn(d.n(), d.k(), |i, j| d.value(i, j).unwrap_or(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    /// sample standard deviation (n − 1 denominator)
    pub sd: f64,
    pub count: usize,
}

impl Summary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, median, sd, count: n })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    /// raw per-replication KL/n; `None` for failed replications
    pub values: Vec<Option<f64>>,
    pub summary: Option<Summary>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub config: SimConfig,
    pub methods: Vec<MethodResult>,
}

impl SimResult {
    pub fn method(&self, m: Method) -> &MethodResult {
        self.methods.iter().find(|r| r.method == m).expect("all methods present")
    }

    pub fn mean(&self, m: Method) -> Option<f64> {
        self.method(m).summary.map(|s| s.mean)
    }

    pub fn report(&self, include_values: bool) -> StudyReport {
        let mut methods = BTreeMap::new();
        let mut failures = BTreeMap::new();
        for r in &self.methods {
            methods.insert(
                r.method.name().to_string(),
                MethodReport {
                    mean: r.summary.map(|s| s.mean),
                    median: r.summary.map(|s| s.median),
                    sd: r.summary.map(|s| s.sd),
                    count: r.summary.map_or(0, |s| s.count),
                    values: include_values.then(|| r.values.clone()),
                },
            );
            failures.insert(r.method.name().to_string(), r.failures);
        }
        StudyReport {
            config: self.config.clone(),
            methods,
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub sd: Option<f64>,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub values: Option<Vec<Option<f64>>>,
}

/// JSON shape of one study cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: SimConfig,
    pub methods: BTreeMap<String, MethodReport>,
    pub failures: BTreeMap<String, usize>,
}

/// Runs all replications (in parallel on the current rayon pool) and
/// summarizes each method. Output does not depend on scheduling.
pub fn run_study(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let per_rep: Vec<[Option<f64>; 4]> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_replication(cfg, rep))
        .collect::<Result<_>>()?;

    let methods = Method::ALL
        .iter()
        .enumerate()
        .map(|(idx, &method)| {
            let values: Vec<Option<f64>> = per_rep.iter().map(|r| r[idx]).collect();
            let ok: Vec<f64> = values.iter().flatten().copied().collect();
            MethodResult {
                method,
                failures: values.len() - ok.len(),
                summary: Summary::from_values(&ok),
                values,
            }
        })
        .collect();
    Ok(SimResult {
        config: cfg.clone(),
        methods,
    })
}

/// One study per `(a, n)` pair, `a` varying slowest.
pub fn run_grid(base: &SimConfig, ns: &[usize], avals: &[f64]) -> Result<Vec<SimResult>> {
    let mut out = Vec::with_capacity(ns.len() * avals.len());
    for &a in avals {
        for &n in ns {
            out.push(run_study(&SimConfig { n, a, ..base.clone() })?);
        }
    }
    Ok(out)
}

/// Aligned text in the layout of the published table: values ×10.
pub fn render_table(results: &[SimResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "KL loss / n (x10^-1)");
    let _ = writeln!(
        s,
        "{:>6} {:>6}  {:<7}{:>12}{:>12}{:>12}{:>12}",
        "a", "n", "", "MOPT", "CC", "MIM", "MIMA"
    );
    let mut last_a: Option<f64> = None;
    for r in results {
        let a_label = if last_a == Some(r.config.a) { String::new() } else { format!("{}", r.config.a) };
        last_a = Some(r.config.a);
        let stats: [(&str, fn(&Summary) -> f64); 3] =
            [("mean", |s| s.mean), ("median", |s| s.median), ("SD", |s| s.sd)];
        for (row, (label, get)) in stats.iter().enumerate() {
            let (a_col, n_col) = if row == 0 { (a_label.clone(), r.config.n.to_string()) } else { (String::new(), String::new()) };
            let _ = write!(s, "{a_col:>6} {n_col:>6}  {label:<7}");
            for m in Method::ALL {
                match r.method(m).summary {
                    Some(sm) => {
                        let _ = write!(s, "{:>12.3}", 10.0 * get(&sm));
                    }
                    None => {
                        let _ = write!(s, "{:>12}", "-");
                    }
                }
            }
            s.push('\n');
        }
        let fails: Vec<String> = r
            .methods
            .iter()
            .filter(|m| m.failures > 0)
            .map(|m| format!("{}={}", m.method, m.failures))
            .collect();
        if !fails.is_empty() {
            let _ = writeln!(s, "{:>15}failed replications: {}", "", fails.join(", "));
        }
    }
    s
}

/// Long-format CSV: one row per (a, n, method).
pub fn render_csv(results: &[SimResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["family", "a", "n", "replications", "seed", "method", "mean", "median", "sd", "count", "failures"])?;
    for r in results {
        for m in &r.methods {
            let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
            w.write_record([
                r.config.family.name().to_string(),
                format!("{:?}", r.config.a),
                r.config.n.to_string(),
                r.config.replications.to_string(),
                r.config.seed.to_string(),
                m.method.name().to_string(),
                fmt(m.summary.map(|s| s.mean)),
                fmt(m.summary.map(|s| s.median)),
                fmt(m.summary.map(|s| s.sd)),
                m.summary.map_or(0, |s| s.count).to_string(),
                m.failures.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// All points of the simplex grid `{w : wₛ ∈ {0, 1/m, …, 1}, Σ wₛ = 1}`.
pub fn simplex_grid(s: usize, m: usize) -> Vec<DVector<f64>> {
    fn rec(s: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() + 1 == s {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for v in 0..=left {
            prefix.push(v);
            rec(s, left - v, prefix, out);
            prefix.pop();
        }
    }
    if s == 0 {
        return Vec::new();
    }
    let mut counts = Vec::new();
    rec(s, m, &mut Vec::with_capacity(s), &mut counts);
    counts
        .into_iter()
        .map(|c| DVector::from_iterator(s, c.into_iter().map(|v| v as f64 / m as f64)))
        .collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

const MAX_GRID_POINTS: f64 = 5e6;

/// Per replication, `KL(ŵ) / min_grid KL(w)` where the minimum runs over the
/// simplex grid of the given resolution. Replications where the candidate
/// set cannot be built are skipped.
pub fn optimality_ratio_experiment(cfg: &SimConfig, grid_resolution: f64) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(grid_resolution > 0.0 && grid_resolution <= 1.0) {
        return Err(Error::Config(format!("grid resolution {grid_resolution} outside (0, 1]")));
    }
    let m = (1.0 / grid_resolution).round().max(1.0) as usize;
    let ratios: Vec<Option<f64>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| optimality_ratio(cfg, rep, m))
        .collect::<Result<_>>()?;
    Ok(ratios.into_iter().flatten().collect())
}

fn optimality_ratio(cfg: &SimConfig, rep: usize, m: usize) -> Result<Option<f64>> {
    let (d, truth) = generate_replication(cfg, rep)?;
    let f = cfg.family();
    let Ok(candidates) = build_candidates(&d) else {
        return Ok(None);
    };
    let s = candidates.len();
    if binomial(m + s - 1, s - 1) > MAX_GRID_POINTS {
        return Err(Error::Config(format!("S = {s} is too large for a grid of step 1/{m}")));
    }
    let fits = fit_all(&f, &candidates, &d)?;
    let Ok(xt) = zero_fill(&d) else {
        return Ok(None);
    };
    let problem = CriterionProblem::from_fits(f, &fits, xt.matrix(), d.y(), cfg.lambda_n)?;
    let sol = problem.minimize(&OptimizerOptions::default())?;
    let thetas = problem.candidate_thetas();
    let kl_at = |w: &DVector<f64>| kl_loss(&f, &(thetas * w), &truth);
    let chosen = kl_at(sol.weights.as_vector())?;
    let mut best = f64::INFINITY;
    for w in simplex_grid(s, m) {
        best = best.min(kl_at(&w)?);
    }
    Ok(Some(chosen / best))
}
