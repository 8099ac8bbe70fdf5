//! Frequentist model averaging for generalized linear models whose covariates
//! are missing completely at random (MCAR).
//!
//! The pipeline is:
//!
//! 1. [`data`]: load a response vector and a covariate matrix with an explicit
//!    observed/missing mask, and build the zero-filled design `X̃`.
//! 2. [`patterns`]: group covariate columns by identical missing-row sets and
//!    build the complete-case (CC) model plus one sufficient-sample-information
//!    (SSI) model per group.
//! 3. [`glm`]: fit every candidate by maximum likelihood under a canonical-link
//!    exponential family.
//! 4. [`averaging`]: choose simplex weights by minimizing the penalized
//!    KL-based criterion and form `θ = X̃ β̂(w)`.
//!
//! [`baselines`] provides the CC, mean-imputation (MIM) and mean-imputation
//! model averaging (MIMA) comparators, and [`evalsim`] runs the Monte Carlo
//! study that compares all four by KL loss.

pub mod averaging;
pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod evalsim;
pub mod glm;
pub mod patterns;

pub use averaging::{minimize_weights, AveragedEstimate, OptimizerOptions, WeightVector};
pub use data::{load_csv, zero_fill, ObservedDataset, ZeroFilledMatrix};
pub use error::{Error, Result};
pub use glm::{fit_mle, FamilyKind, FittedCandidate, GlmFamily};
pub use patterns::{build_candidates, detect_column_groups, CandidateKind, CandidateModel, ColumnGroup, Projection};
