//! Comparison estimators: complete-case (CC), mean imputation (MIM), and
//! model averaging over every column subset after mean imputation (MIMA).

use nalgebra::{DMatrix, DVector};

use crate::averaging::{AveragedEstimate, CriterionProblem, OptimizerOptions};
use crate::data::ObservedDataset;
use crate::error::{Error, Result};
use crate::glm::{fit_glm, fit_mle, FitOptions, FittedCandidate, GlmFamily};
use crate::patterns::{check_feasible, CandidateKind, CandidateModel, Projection};

/// Largest MIMA candidate count accepted (`2^K − 1 ≤ 2^20`).
pub const MAX_SUBSETS: u128 = 1 << 20;

/// Dataset with every missing cell replaced by its column's observed mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedDataset {
    pub x_imputed: DMatrix<f64>,
    pub provenance_mask: DMatrix<bool>,
}

pub fn mean_impute(d: &ObservedDataset) -> Result<ImputedDataset> {
    let mut x = DMatrix::zeros(d.n(), d.k());
    for j in 0..d.k() {
        let observed: Vec<f64> = (0..d.n()).filter_map(|i| d.value(i, j)).collect();
        if observed.is_empty() {
            return Err(Error::FullyMissingColumn(j));
        }
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        for i in 0..d.n() {
            x[(i, j)] = d.value(i, j).unwrap_or(mean);
        }
    }
    Ok(ImputedDataset {
        x_imputed: x,
        provenance_mask: d.mask().clone(),
    })
}

/// The CC model (candidate 1) fitted by maximum likelihood.
pub fn fit_cc(f: &GlmFamily, d: &ObservedDataset) -> Result<FittedCandidate> {
    let rows = d.complete_rows();
    if rows.is_empty() {
        return Err(Error::NoCompleteCases);
    }
    let cc = CandidateModel {
        id: 1,
        kind: CandidateKind::CompleteCase,
        rows,
        columns: (0..d.k()).collect(),
    };
    check_feasible(d, &cc)?;
    fit_mle(f, &cc, d)
}

/// Full-model MLE on the mean-imputed design over all rows.
pub fn fit_mim(f: &GlmFamily, d: &ObservedDataset) -> Result<DVector<f64>> {
    let imp = mean_impute(d)?;
    Ok(fit_glm(f, &imp.x_imputed, d.y(), &FitOptions::default()).beta)
}

/// Every nonempty column subset, in binary counting order over column bits.
pub fn all_subsets(k: usize) -> Result<Vec<Vec<usize>>> {
    let count = if k >= 128 { u128::MAX } else { (1u128 << k) - 1 };
    if count > MAX_SUBSETS {
        return Err(Error::TooManySubsets(count));
    }
    Ok((1..=count as usize)
        .map(|bits| (0..k).filter(|j| bits >> j & 1 == 1).collect())
        .collect())
}

/// Model averaging after mean imputation: each nonempty column subset is
/// fitted on all rows of the imputed design, and weights minimize the same
/// criterion as the main estimator with the imputed design in place of `X̃`.
pub fn fit_mima(f: &GlmFamily, d: &ObservedDataset, lambda_n: f64) -> Result<AveragedEstimate> {
    fit_mima_with(f, d, lambda_n, &OptimizerOptions::default())
}

pub fn fit_mima_with(
    f: &GlmFamily,
    d: &ObservedDataset,
    lambda_n: f64,
    opts: &OptimizerOptions,
) -> Result<AveragedEstimate> {
    let imp = mean_impute(d)?;
    let subsets = all_subsets(d.k())?;
    let fit_opts = FitOptions::default();
    let mut betas = Vec::with_capacity(subsets.len());
    let mut penalty = Vec::with_capacity(subsets.len());
    for cols in subsets {
        let sub = imp.x_imputed.select_columns(&cols);
        let fit = fit_glm(f, &sub, d.y(), &fit_opts);
        penalty.push(cols.len());
        betas.push(Projection::new(cols, d.k())?.expand(&fit.beta)?);
    }
    let problem = CriterionProblem::new(*f, &imp.x_imputed, &betas, penalty, d.y(), lambda_n)?;
    let sol = problem.minimize(opts)?;
    problem.estimate(&sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impute_column_mean() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 0.0, 6.0, 3.0, 7.0]);
        let mask = DMatrix::from_row_slice(3, 2, &[true, true, false, true, true, true]);
        let d = ObservedDataset::new(DVector::zeros(3), x, mask, vec!["a".into(), "b".into()]).unwrap();
        let imp = mean_impute(&d).unwrap();
        assert_eq!(imp.x_imputed.column(0).as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(imp.x_imputed.column(1).as_slice(), &[5.0, 6.0, 7.0]);
    }

    #[test]
    fn fully_missing_column_is_error() {
        let x = DMatrix::zeros(2, 1);
        let mask = DMatrix::from_element(2, 1, false);
        let d = ObservedDataset::new(DVector::zeros(2), x, mask, vec!["a".into()]).unwrap();
        assert!(matches!(mean_impute(&d), Err(Error::FullyMissingColumn(0))));
    }

    #[test]
    fn subset_enumeration() {
        assert_eq!(all_subsets(4).unwrap().len(), 15);
        assert_eq!(all_subsets(1).unwrap(), vec![vec![0]]);
        assert_eq!(all_subsets(2).unwrap(), vec![vec![0], vec![1], vec![0, 1]]);
        assert!(all_subsets(20).is_ok());
        assert!(matches!(all_subsets(21), Err(Error::TooManySubsets(_))));
    }

    #[test]
    fn single_column_mima_is_singleton() {
        let x = DMatrix::from_column_slice(5, 1, &[0.3, -1.0, 0.8, 1.5, -0.2]);
        let d = ObservedDataset::complete(DVector::from_vec(vec![1.0, 0.0, 1.0, 1.0, 0.0]), x).unwrap();
        let est = fit_mima(&GlmFamily::bernoulli(), &d, 2.0).unwrap();
        assert_eq!(est.weights.as_slice(), &[1.0]);
    }
}
