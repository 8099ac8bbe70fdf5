//! Weight choice over the probability simplex.
//!
//! For candidate coefficient vectors `β̂⁽ˢ⁾` (zero-padded to `K`) and the
//! zero-filled design `X̃`, the averaged linear predictor is
//! `θ(w) = X̃ Σₛ wₛ β̂⁽ˢ⁾ = Σₛ wₛ θ⁽ˢ⁾`, and the criterion is
//!
//! ```text
//! G(w) = 2/φ · Σᵢ [ b(θᵢ(w)) − yᵢ θᵢ(w) ] + λₙ · Σₛ wₛ kₛ
//! ```
//!
//! `θ` is affine in `w` and `b` is convex, so `G` is convex on the simplex
//! and projected gradient descent reaches a global minimizer.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::glm::{FittedCandidate, GlmFamily};

/// AIC-style penalty multiplier.
pub const DEFAULT_LAMBDA: f64 = 2.0;

const SIMPLEX_SUM_TOL: f64 = 1e-12;

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(DVector<f64>);

impl WeightVector {
    pub fn new(w: DVector<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Dimension("empty weight vector".into()));
        }
        if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Dimension(format!("weights outside [0, 1]: {:?}", w.as_slice())));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::Dimension(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(w))
    }

    pub fn uniform(s: usize) -> Self {
        Self(DVector::from_element(s, 1.0 / s as f64))
    }

    /// The vertex `e_s`.
    pub fn unit(s: usize, index: usize) -> Self {
        let mut w = DVector::zeros(s);
        w[index] = 1.0;
        Self(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Euclidean projection onto `{w ≥ 0, Σ w = 1}` by sorting.
pub fn project_to_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        }
    }
    let mut w = v.map(|x| (x - tau).max(0.0));
    // renormalize the rounding residue onto the support
    let sum: f64 = w.iter().sum();
    if sum > 0.0 {
        w /= sum;
    }
    w
}

/// The criterion for a fixed set of candidates, with each candidate's linear
/// predictor precomputed.
#[derive(Debug, Clone)]
pub struct CriterionProblem {
    family: GlmFamily,
    /// n × S; column s is `X̃ β̂⁽ˢ⁾`
    thetas: DMatrix<f64>,
    /// K × S; column s is `β̂⁽ˢ⁾`
    betas: DMatrix<f64>,
    design: DMatrix<f64>,
    y: DVector<f64>,
    penalty: Vec<usize>,
    lambda_n: f64,
}

impl CriterionProblem {
    pub fn new(
        family: GlmFamily,
        design: &DMatrix<f64>,
        betas: &[DVector<f64>],
        penalty: Vec<usize>,
        y: &DVector<f64>,
        lambda_n: f64,
    ) -> Result<Self> {
        let s = betas.len();
        if s == 0 {
            return Err(Error::Dimension("no candidates".into()));
        }
        if penalty.len() != s {
            return Err(Error::Dimension(format!("{} penalties for {s} candidates", penalty.len())));
        }
        if design.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "design has {} rows, y has {}",
                design.nrows(),
                y.len()
            )));
        }
        if let Some(b) = betas.iter().find(|b| b.len() != design.ncols()) {
            return Err(Error::Dimension(format!(
                "coefficient vector of length {} for {} columns",
                b.len(),
                design.ncols()
            )));
        }
        let betas = DMatrix::from_columns(betas);
        let thetas = design * &betas;
        Ok(Self {
            family,
            thetas,
            betas,
            design: design.clone(),
            y: y.clone(),
            penalty,
            lambda_n,
        })
    }

    pub fn from_fits(
        family: GlmFamily,
        fits: &[FittedCandidate],
        design: &DMatrix<f64>,
        y: &DVector<f64>,
        lambda_n: f64,
    ) -> Result<Self> {
        let betas: Vec<DVector<f64>> = fits.iter().map(|f| f.beta_full.clone()).collect();
        let penalty = fits.iter().map(|f| f.candidate.k_s()).collect();
        Self::new(family, design, &betas, penalty, y, lambda_n)
    }

    pub fn num_candidates(&self) -> usize {
        self.betas.ncols()
    }

    pub fn family(&self) -> &GlmFamily {
        &self.family
    }

    pub fn penalty(&self) -> &[usize] {
        &self.penalty
    }

    pub fn lambda_n(&self) -> f64 {
        self.lambda_n
    }

    /// `θ⁽ˢ⁾ = X̃ β̂⁽ˢ⁾` as the columns of an n × S matrix.
    pub fn candidate_thetas(&self) -> &DMatrix<f64> {
        &self.thetas
    }

    fn check_len(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.num_candidates() {
            return Err(Error::Dimension(format!(
                "{} weights for {} candidates",
                w.len(),
                self.num_candidates()
            )));
        }
        Ok(())
    }

    fn theta(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let theta = &self.thetas * w;
        if let Some(i) = theta.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite { what: "linear predictor", index: i });
        }
        Ok(theta)
    }

    fn penalty_term(&self, w: &DVector<f64>) -> f64 {
        self.lambda_n * w.iter().zip(&self.penalty).map(|(wi, &k)| wi * k as f64).sum::<f64>()
    }

    /// `G(w)`. Accepts any `w` of the right length so that finite differences
    /// can step off the simplex.
    pub fn value(&self, w: &DVector<f64>) -> Result<f64> {
        self.check_len(w)?;
        let theta = self.theta(w)?;
        let fit: f64 = theta
            .iter()
            .zip(self.y.iter())
            .map(|(&t, &yi)| self.family.b(t) - yi * t)
            .sum();
        Ok(2.0 / self.family.phi * fit + self.penalty_term(w))
    }

    /// `∂G/∂wₛ = 2/φ · (b′(θ(w)) − y)ᵀ θ⁽ˢ⁾ + λₙ kₛ`.
    pub fn gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(w)?;
        let theta = self.theta(w)?;
        let resid = DVector::from_iterator(
            theta.len(),
            theta.iter().zip(self.y.iter()).map(|(&t, &yi)| self.family.b_prime(t) - yi),
        );
        let mut g = self.thetas.tr_mul(&resid) * (2.0 / self.family.phi);
        for (gs, &k) in g.iter_mut().zip(&self.penalty) {
            *gs += self.lambda_n * k as f64;
        }
        Ok(g)
    }

    /// `Σₛ wₛ β̂⁽ˢ⁾`, skipping zero weights so that a vertex reproduces its
    /// candidate's coefficients bit for bit.
    pub fn combined_beta(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut acc: Option<DVector<f64>> = None;
        for (s, &ws) in w.iter().enumerate() {
            if ws == 0.0 {
                continue;
            }
            let term = self.betas.column(s) * ws;
            acc = Some(match acc {
                None => term,
                Some(a) => a + term,
            });
        }
        acc.unwrap_or_else(|| DVector::zeros(self.betas.nrows()))
    }

    /// Smallest directional derivative of `G` at `w` along any simplex
    /// direction `e_s − w`. Nonnegative (up to rounding) at a minimizer.
    pub fn kkt_gap(&self, w: &DVector<f64>) -> Result<f64> {
        let g = self.gradient(w)?;
        let gw = g.dot(w);
        Ok(g.iter().fold(f64::INFINITY, |m, &gs| m.min(gs - gw)))
    }

    pub fn minimize(&self, opts: &OptimizerOptions) -> Result<WeightSolution> {
        minimize_on_simplex(self, opts)
    }

    pub fn estimate(&self, sol: &WeightSolution) -> Result<AveragedEstimate> {
        let beta = self.combined_beta(sol.weights.as_vector());
        let theta = &self.design * &beta;
        Ok(AveragedEstimate {
            weights: sol.weights.clone(),
            beta,
            theta,
            criterion_value: sol.value,
            penalty_vector: self.penalty.clone(),
            lambda_n: self.lambda_n,
            iterations: sol.iterations,
            projected_gradient_norm: sol.projected_gradient_norm,
            warning: sol.warning,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    pub max_iter: usize,
    /// stop once `‖w − P(w − ∇G)‖₂` falls below this
    pub pg_tol: f64,
    /// flag the result when the cap is hit above this
    pub warn_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            pg_tol: 1e-8,
            warn_tol: 1e-6,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSolution {
    pub weights: WeightVector,
    pub value: f64,
    pub iterations: usize,
    pub projected_gradient_norm: f64,
    pub warning: bool,
}

fn projected_gradient_norm(w: &DVector<f64>, g: &DVector<f64>) -> f64 {
    (w - project_to_simplex(&(w - g))).norm()
}

/// Projected gradient with Barzilai–Borwein step lengths and backtracking.
///
/// A trial point is accepted on the Armijo condition, or when the directional
/// derivative there is still nonpositive: by convexity the function has then
/// not increased, which keeps progress going once value differences drop
/// below rounding.
fn minimize_on_simplex(p: &CriterionProblem, opts: &OptimizerOptions) -> Result<WeightSolution> {
    let s = p.num_candidates();
    let mut w = WeightVector::uniform(s).0;
    let mut value = p.value(&w)?;
    if s == 1 {
        return Ok(WeightSolution {
            weights: WeightVector(w),
            value,
            iterations: 0,
            projected_gradient_norm: 0.0,
            warning: false,
        });
    }
    let mut g = p.gradient(&w)?;
    let mut pg = projected_gradient_norm(&w, &g);
    let mut alpha = 1.0 / g.amax().max(1.0);
    let mut iterations = 0;

    while pg > opts.pg_tol && iterations < opts.max_iter {
        let d = project_to_simplex(&(&w - &g * alpha)) - &w;
        let slope = g.dot(&d);
        if !(slope < 0.0) {
            // BB step too short to move off the current point: fall back to a unit step
            if alpha >= 1.0 {
                break;
            }
            alpha = 1.0;
            continue;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial = &w + &d * t;
            if let Ok(v) = p.value(&trial) {
                if v <= value + opts.armijo * t * slope {
                    accepted = Some((trial, v));
                    break;
                }
                let gt = p.gradient(&trial)?;
                if gt.dot(&d) <= 0.0 && v <= value + 1e-12 * (1.0 + value.abs()) {
                    accepted = Some((trial, v.min(value)));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((trial, v)) = accepted else {
            break;
        };
        iterations += 1;
        // snap tiny negatives and renormalize onto the simplex
        let trial = project_to_simplex(&trial);
        let g_new = p.gradient(&trial)?;
        let step = &trial - &w;
        let dg = &g_new - &g;
        let sy = step.dot(&dg);
        alpha = if sy > 0.0 { (step.dot(&step) / sy).clamp(1e-12, 1e12) } else { 1e12f64.min(alpha * 4.0) };
        w = trial;
        value = p.value(&w).unwrap_or(v);
        g = g_new;
        pg = projected_gradient_norm(&w, &g);
    }

    Ok(WeightSolution {
        warning: pg > opts.warn_tol,
        weights: WeightVector::new(w)?,
        value,
        iterations,
        projected_gradient_norm: pg,
    })
}

/// The averaged estimator at the chosen weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedEstimate {
    pub weights: WeightVector,
    /// `β̂(w) = Σ wₛ β̂⁽ˢ⁾`
    pub beta: DVector<f64>,
    /// `θ = X̃ β̂(w)`
    pub theta: DVector<f64>,
    pub criterion_value: f64,
    pub penalty_vector: Vec<usize>,
    pub lambda_n: f64,
    pub iterations: usize,
    pub projected_gradient_norm: f64,
    /// iteration cap reached short of the tolerance
    pub warning: bool,
}

pub fn criterion(
    f: &GlmFamily,
    fits: &[FittedCandidate],
    xt: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &WeightVector,
    lambda_n: f64,
) -> Result<f64> {
    CriterionProblem::from_fits(*f, fits, xt, y, lambda_n)?.value(w.as_vector())
}

pub fn criterion_gradient(
    f: &GlmFamily,
    fits: &[FittedCandidate],
    xt: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &WeightVector,
    lambda_n: f64,
) -> Result<DVector<f64>> {
    CriterionProblem::from_fits(*f, fits, xt, y, lambda_n)?.gradient(w.as_vector())
}

pub fn minimize_weights(
    f: &GlmFamily,
    fits: &[FittedCandidate],
    xt: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda_n: f64,
    opts: &OptimizerOptions,
) -> Result<AveragedEstimate> {
    let p = CriterionProblem::from_fits(*f, fits, xt, y, lambda_n)?;
    let sol = p.minimize(opts)?;
    p.estimate(&sol)
}

/// Mean response `b′(θ)` at the averaged linear predictor.
pub fn predict(est: &AveragedEstimate, f: &GlmFamily) -> Result<DVector<f64>> {
    if let Some(i) = est.theta.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFinite { what: "linear predictor", index: i });
    }
    Ok(est.theta.map(|t| f.b_prime(t)))
}
