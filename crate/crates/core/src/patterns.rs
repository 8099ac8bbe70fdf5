//! Missingness patterns and candidate-model construction.
//!
//! Columns that are missing in exactly the same rows form a [`ColumnGroup`].
//! Candidate 1 is the complete-case (CC) model over all columns; each group
//! then contributes one sufficient-sample-information (SSI) model that uses
//! the group's columns on every row where they are observed.
//!
//! All indices are 0-based.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;

use crate::data::{has_full_column_rank, ObservedDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnGroup {
    pub columns: Vec<usize>,
    pub missing_rows: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CandidateKind {
    #[serde(rename = "CC")]
    CompleteCase,
    #[serde(rename = "SSI")]
    SufficientSample,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CandidateModel {
    /// 1-based position in the candidate list; CC is always 1.
    pub id: usize,
    pub kind: CandidateKind,
    pub rows: Vec<usize>,
    pub columns: Vec<usize>,
}

impl CandidateModel {
    pub fn n_s(&self) -> usize {
        self.rows.len()
    }

    pub fn k_s(&self) -> usize {
        self.columns.len()
    }

    pub fn projection(&self, k: usize) -> Projection {
        Projection::new(self.columns.clone(), k).expect("candidate columns are within 0..K")
    }
}

/// Maps a full `K`-vector to the coordinates in `zeta` and back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Projection {
    zeta: Vec<usize>,
    k: usize,
}

impl Projection {
    pub fn new(zeta: Vec<usize>, k: usize) -> Result<Self> {
        if zeta.iter().any(|&j| j >= k) {
            return Err(Error::Dimension(format!("column index out of range for K = {k}")));
        }
        if zeta.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Dimension("projection columns must be strictly increasing".into()));
        }
        Ok(Self { zeta, k })
    }

    pub fn zeta(&self) -> &[usize] {
        &self.zeta
    }

    /// Zero-pads a `k_s`-vector into `K` coordinates.
    pub fn expand(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.zeta.len() {
            return Err(Error::Dimension(format!(
                "expand: got {} coefficients for {} columns",
                b.len(),
                self.zeta.len()
            )));
        }
        let mut out = DVector::zeros(self.k);
        for (v, &j) in b.iter().zip(&self.zeta) {
            out[j] = *v;
        }
        Ok(out)
    }

    pub fn compress(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        if beta.len() != self.k {
            return Err(Error::Dimension(format!("compress: got {} coefficients, K = {}", beta.len(), self.k)));
        }
        Ok(DVector::from_iterator(self.zeta.len(), self.zeta.iter().map(|&j| beta[j])))
    }
}

/// Partitions columns by their exact set of missing rows, ordered by smallest
/// member column.
pub fn detect_column_groups(d: &ObservedDataset) -> Vec<ColumnGroup> {
    // keyed by missing rows; the first column seen for a key is its smallest
    let mut by_pattern: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut groups: Vec<ColumnGroup> = Vec::new();
    for j in 0..d.k() {
        let missing: Vec<usize> = (0..d.n()).filter(|&i| !d.is_observed(i, j)).collect();
        match by_pattern.get(&missing) {
            Some(&g) => groups[g].columns.push(j),
            None => {
                by_pattern.insert(missing.clone(), groups.len());
                groups.push(ColumnGroup {
                    columns: vec![j],
                    missing_rows: missing,
                });
            }
        }
    }
    groups
}

/// CC model followed by one SSI model per column group.
pub fn build_candidates(d: &ObservedDataset) -> Result<Vec<CandidateModel>> {
    let groups = detect_column_groups(d);
    candidates_from_groups(d, &groups)
}

pub fn candidates_from_groups(d: &ObservedDataset, groups: &[ColumnGroup]) -> Result<Vec<CandidateModel>> {
    let cc_rows = d.complete_rows();
    if cc_rows.is_empty() {
        return Err(Error::NoCompleteCases);
    }
    let mut out = Vec::with_capacity(groups.len() + 1);
    out.push(CandidateModel {
        id: 1,
        kind: CandidateKind::CompleteCase,
        rows: cc_rows,
        columns: (0..d.k()).collect(),
    });
    for g in groups {
        let mut missing = g.missing_rows.iter().peekable();
        let rows = (0..d.n())
            .filter(|i| {
                if missing.peek() == Some(&i) {
                    missing.next();
                    false
                } else {
                    true
                }
            })
            .collect();
        out.push(CandidateModel {
            id: out.len() + 1,
            kind: CandidateKind::SufficientSample,
            rows,
            columns: g.columns.clone(),
        });
    }
    for c in &out {
        check_feasible(d, c)?;
    }
    Ok(out)
}

pub(crate) fn check_feasible(d: &ObservedDataset, c: &CandidateModel) -> Result<()> {
    if c.n_s() < c.k_s() + 1 {
        return Err(Error::InfeasibleCandidate {
            id: c.id,
            n_s: c.n_s(),
            k_s: c.k_s(),
        });
    }
    let sub = d.submatrix(&c.rows, &c.columns)?;
    if !has_full_column_rank(&sub) {
        return Err(Error::RankDeficient(format!("X^({}) of candidate {}", c.id, c.id)));
    }
    Ok(())
}
