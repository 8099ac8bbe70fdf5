//! Canonical-link exponential families and per-candidate maximum likelihood.
//!
//! A family is described by its cumulant function `b(θ)`; with the canonical
//! link `θ = xᵀβ`, the mean is `b′(θ)` and the variance function is `b″(θ)`.
//! The normalizing term `c(y, φ)` never depends on `β` and is not modelled.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ObservedDataset;
use crate::error::{Error, Result};
use crate::patterns::CandidateModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyKind {
    #[serde(rename = "bernoulli-logit")]
    Bernoulli,
    #[serde(rename = "poisson-log")]
    Poisson,
    #[serde(rename = "gaussian-identity")]
    Gaussian,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Bernoulli => "bernoulli-logit",
            FamilyKind::Poisson => "poisson-log",
            FamilyKind::Gaussian => "gaussian-identity",
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bernoulli" | "bernoulli-logit" | "binomial" | "logistic" | "logit" => Ok(FamilyKind::Bernoulli),
            "poisson" | "poisson-log" => Ok(FamilyKind::Poisson),
            "gaussian" | "gaussian-identity" | "normal" => Ok(FamilyKind::Gaussian),
            other => Err(Error::Config(format!("unknown family `{other}`"))),
        }
    }
}

/// A canonical exponential family with known dispersion `φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmFamily {
    pub kind: FamilyKind,
    pub phi: f64,
}

impl GlmFamily {
    pub fn bernoulli() -> Self {
        Self { kind: FamilyKind::Bernoulli, phi: 1.0 }
    }

    pub fn poisson() -> Self {
        Self { kind: FamilyKind::Poisson, phi: 1.0 }
    }

    pub fn gaussian(phi: f64) -> Self {
        Self { kind: FamilyKind::Gaussian, phi }
    }

    /// Default dispersion for the family (1 for all three).
    pub fn from_kind(kind: FamilyKind) -> Self {
        Self { kind, phi: 1.0 }
    }

    /// Cumulant function `b(θ)`.
    #[inline]
    pub fn b(&self, theta: f64) -> f64 {
        match self.kind {
            // log(1 + e^θ) without overflow
            FamilyKind::Bernoulli => theta.max(0.0) + (-theta.abs()).exp().ln_1p(),
            FamilyKind::Poisson => theta.exp(),
            FamilyKind::Gaussian => 0.5 * theta * theta,
        }
    }

    /// Mean map `b′(θ)`.
    #[inline]
    pub fn b_prime(&self, theta: f64) -> f64 {
        match self.kind {
            FamilyKind::Bernoulli => logistic(theta),
            FamilyKind::Poisson => theta.exp(),
            FamilyKind::Gaussian => theta,
        }
    }

    /// Variance function `b″(θ)`.
    #[inline]
    pub fn b_double_prime(&self, theta: f64) -> f64 {
        match self.kind {
            FamilyKind::Bernoulli => {
                let p = logistic(theta);
                p * (1.0 - p)
            }
            FamilyKind::Poisson => theta.exp(),
            FamilyKind::Gaussian => 1.0,
        }
    }

    pub fn b_eval(&self, theta: f64) -> Result<f64> {
        check_finite(theta)?;
        Ok(self.b(theta))
    }

    pub fn b_prime_eval(&self, theta: f64) -> Result<f64> {
        check_finite(theta)?;
        Ok(self.b_prime(theta))
    }

    pub fn b_double_prime_eval(&self, theta: f64) -> Result<f64> {
        check_finite(theta)?;
        Ok(self.b_double_prime(theta))
    }
}

fn check_finite(theta: f64) -> Result<()> {
    if theta.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what: "canonical parameter", index: 0 })
    }
}

#[inline]
fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `φ⁻¹ Σ [yᵢθᵢ − b(θᵢ)]`, the β-dependent part of the log-likelihood.
pub fn log_likelihood_kernel(f: &GlmFamily, y: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
    if y.len() != theta.len() {
        return Err(Error::Dimension(format!(
            "y has length {} but θ has length {}",
            y.len(),
            theta.len()
        )));
    }
    Ok(kernel_unchecked(f, y, theta))
}

fn kernel_unchecked(f: &GlmFamily, y: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    y.iter()
        .zip(theta.iter())
        .map(|(&yi, &ti)| yi * ti - f.b(ti))
        .sum::<f64>()
        / f.phi
}

/// Score `φ⁻¹ Xᵀ(y − b′(Xβ))`.
pub fn score(f: &GlmFamily, x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
    let eta = x * beta;
    let resid = DVector::from_iterator(y.len(), y.iter().zip(eta.iter()).map(|(&yi, &e)| yi - f.b_prime(e)));
    x.tr_mul(&resid) / f.phi
}

/// Fisher information `φ⁻¹ Σ b″(θᵢ) xᵢxᵢᵀ`, the negative Hessian of the kernel.
pub fn information(f: &GlmFamily, x: &DMatrix<f64>, beta: &DVector<f64>) -> DMatrix<f64> {
    let eta = x * beta;
    let mut wx = x.clone();
    for (i, &e) in eta.iter().enumerate() {
        let w = f.b_double_prime(e);
        wx.row_mut(i).scale_mut(w);
    }
    x.tr_mul(&wx) / f.phi
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub score_tol: f64,
    pub rel_kernel_tol: f64,
    pub max_halvings: usize,
    pub coef_bound: f64,
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            score_tol: 1e-8,
            rel_kernel_tol: 1e-12,
            max_halvings: 60,
            coef_bound: 1e4,
            ridge: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub beta: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_abs_score: f64,
    pub kernel: f64,
}

/// Newton–Raphson with step halving, started at zero.
///
/// Never fails: separation, a singular information matrix or coefficient
/// blow-up end the iteration with `converged = false` and the last iterate.
pub fn fit_glm(f: &GlmFamily, x: &DMatrix<f64>, y: &DVector<f64>, opts: &FitOptions) -> GlmFit {
    let k = x.ncols();
    let mut beta = DVector::zeros(k);
    let mut kernel = kernel_unchecked(f, y, &(x * &beta));
    let mut iterations = 0;
    let mut diverged = false;

    while iterations < opts.max_iter {
        let g = score(f, x, y, &beta);
        if g.amax() <= opts.score_tol {
            break;
        }
        let Some(step) = newton_direction(f, x, &beta, &g, opts.ridge) else {
            break;
        };

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = &beta + &step * t;
            let kc = kernel_unchecked(f, y, &(x * &cand));
            if kc.is_finite() && kc >= kernel {
                accepted = Some((cand, kc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, kc)) = accepted else {
            break;
        };
        iterations += 1;
        let change = (kc - kernel).abs();
        beta = cand;
        kernel = kc;

        if beta.amax() > opts.coef_bound {
            beta.apply(|b| *b = b.clamp(-opts.coef_bound, opts.coef_bound));
            kernel = kernel_unchecked(f, y, &(x * &beta));
            diverged = true;
            break;
        }
        if change <= opts.rel_kernel_tol * kernel.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    let max_abs_score = score(f, x, y, &beta).amax();
    GlmFit {
        converged: !diverged && max_abs_score <= opts.score_tol,
        beta,
        iterations,
        max_abs_score,
        kernel,
    }
}

fn newton_direction(
    f: &GlmFamily,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    g: &DVector<f64>,
    ridge: f64,
) -> Option<DVector<f64>> {
    let info = information(f, x, beta);
    if let Some(ch) = Cholesky::new(info.clone()) {
        let d = ch.solve(g);
        if d.iter().all(|v| v.is_finite()) {
            return Some(d);
        }
    }
    let k = info.nrows();
    let shift = ridge * info.trace() / k as f64;
    if !(shift > 0.0) {
        return None;
    }
    let ridged = info + DMatrix::identity(k, k) * shift;
    let d = Cholesky::new(ridged)?.solve(g);
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// A fitted candidate: the `k_s`-dimensional MLE and its zero-padded `K`-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedCandidate {
    pub candidate: CandidateModel,
    pub beta_sub: DVector<f64>,
    pub beta_full: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_abs_score: f64,
}

pub fn fit_mle(f: &GlmFamily, c: &CandidateModel, d: &ObservedDataset) -> Result<FittedCandidate> {
    fit_mle_with(f, c, d, &FitOptions::default())
}

pub fn fit_mle_with(f: &GlmFamily, c: &CandidateModel, d: &ObservedDataset, opts: &FitOptions) -> Result<FittedCandidate> {
    let x = d.submatrix(&c.rows, &c.columns)?;
    let y = d.subvector(&c.rows);
    let fit = fit_glm(f, &x, &y, opts);
    let beta_full = c.projection(d.k()).expand(&fit.beta)?;
    Ok(FittedCandidate {
        candidate: c.clone(),
        beta_sub: fit.beta,
        beta_full,
        converged: fit.converged,
        iterations: fit.iterations,
        max_abs_score: fit.max_abs_score,
    })
}

/// Fits every candidate; order is preserved.
pub fn fit_all(f: &GlmFamily, candidates: &[CandidateModel], d: &ObservedDataset) -> Result<Vec<FittedCandidate>> {
    candidates.iter().map(|c| fit_mle(f, c, d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn family_values_at_known_points() {
        let b = GlmFamily::bernoulli();
        assert!((b.b(0.0) - LN2).abs() < 1e-15);
        assert_eq!(b.b_prime(0.0), 0.5);
        assert_eq!(b.b_double_prime(0.0), 0.25);
        let p = GlmFamily::poisson();
        assert!((p.b(1.0) - std::f64::consts::E).abs() < 1e-15);
        let v = b.b(700.0);
        assert!(v.is_finite());
        assert!((v - 700.0).abs() < 1e-12);
        assert!(b.b(-700.0) >= 0.0 && b.b(-700.0) < 1e-300);
        assert!(b.b_eval(f64::NAN).is_err());
        assert!(p.b_prime_eval(f64::INFINITY).is_err());
        assert_eq!(GlmFamily::gaussian(1.0).b(3.0), 4.5);
    }

    #[test]
    fn kernel_examples() {
        let b = GlmFamily::bernoulli();
        let k = log_likelihood_kernel(&b, &DVector::from_vec(vec![1.0, 0.0]), &DVector::zeros(2)).unwrap();
        assert!((k + 2.0 * LN2).abs() < 1e-15);
        let p = GlmFamily::poisson();
        let k = log_likelihood_kernel(&p, &DVector::from_vec(vec![2.0]), &DVector::zeros(1)).unwrap();
        assert_eq!(k, -1.0);
        assert!(log_likelihood_kernel(&p, &DVector::zeros(2), &DVector::zeros(3)).is_err());
    }

    #[test]
    fn family_parse() {
        assert_eq!("binomial".parse::<FamilyKind>().unwrap(), FamilyKind::Bernoulli);
        assert_eq!("poisson-log".parse::<FamilyKind>().unwrap(), FamilyKind::Poisson);
        assert!("gamma".parse::<FamilyKind>().is_err());
    }

    #[test]
    fn intercept_only_closed_forms() {
        let x = DMatrix::from_element(8, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let fit = fit_glm(&GlmFamily::bernoulli(), &x, &y, &FitOptions::default());
        assert!(fit.converged);
        assert!((fit.beta[0] - (0.25f64 / 0.75).ln()).abs() < 1e-10);

        let y = DVector::from_vec(vec![1.0, 3.0, 2.0, 0.0, 4.0, 2.0, 1.0, 3.0]);
        let fit = fit_glm(&GlmFamily::poisson(), &x, &y, &FitOptions::default());
        assert!(fit.converged);
        assert!((fit.beta[0] - 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn separation_is_flagged_or_score_vanishes_not_dropped() {
        // perfectly separated: y = 1 iff x > 0
        let x = DMatrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let fit = fit_glm(&GlmFamily::bernoulli(), &x, &y, &FitOptions::default());
        assert!(fit.beta[0] > 5.0);
        assert!(fit.beta.iter().all(|b| b.is_finite()));
        assert!(fit.beta.amax() <= 1e4);
    }

    #[test]
    fn divergence_is_truncated() {
        let x = DMatrix::from_column_slice(4, 1, &[-1e-3, -1e-3, 1e-3, 1e-3]);
        let y = DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0]);
        let opts = FitOptions { coef_bound: 50.0, ..FitOptions::default() };
        let fit = fit_glm(&GlmFamily::bernoulli(), &x, &y, &opts);
        assert!(!fit.converged);
        assert_eq!(fit.beta[0], 50.0);
    }

    #[test]
    fn gaussian_matches_least_squares() {
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        let y = DVector::from_vec(vec![1.0, 2.9, 5.1, 7.0, 9.2]);
        let fit = fit_glm(&GlmFamily::gaussian(1.0), &x, &y, &FitOptions::default());
        let ols = (x.tr_mul(&x)).cholesky().unwrap().solve(&x.tr_mul(&y));
        assert!((fit.beta - ols).amax() < 1e-10);
        assert!(fit.converged);
    }
}
