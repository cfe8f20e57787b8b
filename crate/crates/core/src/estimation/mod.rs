//! Multivariate S-, MM- and MCD estimators of location and scatter.
//!
//! All three share the same start machinery ([`Starts`]): either a fixed
//! [`SubsetPool`] of index subsets, or explicit initial estimates such as the
//! ones produced by [`deterministic_starts`]. Candidate selection is
//! deterministic: the lowest objective wins and ties go to the lowest start
//! index, independently of the order in which parallel work completes.

mod det_starts;
pub(crate) mod linalg;
mod mcd;
mod mm;
mod s;
mod subsets;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub use det_starts::deterministic_starts;
pub use linalg::statistical_distances;
pub use mcd::{cstep, h_for_bdp, h_range, mcd_estimate, CStep, McdConfig, McdRaw};
pub use mm::{mm_estimate, MmConfig};
pub use s::{constraint_residual, s_estimate, SConfig};
pub use subsets::{generate_elemental_subsets, SubsetPool};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    S,
    MM,
    MCD,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::S => "S",
            Method::MM => "MM",
            Method::MCD => "MCD",
        })
    }
}

/// Bookkeeping from a fit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub starts_total: usize,
    pub starts_discarded: usize,
    /// Index of the start that produced the returned solution.
    pub best_start: Option<usize>,
    /// [`Starts::fingerprint`] of the starts consumed by the fit.
    pub starts_fingerprint: u64,
    /// One line per discarded start or notable event.
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult<T: Real> {
    pub method: Method,
    pub location: DVector<T>,
    pub scatter: DMatrix<T>,
    pub distances: DVector<T>,
    /// ρ-weights for S/MM; hard 0/1 membership for MCD.
    pub weights: DVector<T>,
    /// `Det(C)` for S/MM; determinant of the raw h-subset covariance for MCD.
    pub objective: T,
    pub log_det: T,
    pub converged: bool,
    pub iterations: usize,
    pub diagnostics: Diagnostics,
    /// Raw (pre-reweighting) solution, MCD only.
    pub mcd: Option<McdRaw<T>>,
}

impl<T: Real> FitResult<T> {
    pub fn dim(&self) -> usize {
        self.location.len()
    }
}

/// An explicit starting pair `(T, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialEstimate<T: Real> {
    pub location: DVector<T>,
    pub scatter: DMatrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Starts<T: Real> {
    Subsets(SubsetPool),
    Estimates(Vec<InitialEstimate<T>>),
}

impl<T: Real> Starts<T> {
    pub fn len(&self) -> usize {
        match self {
            Starts::Subsets(pool) => pool.len(),
            Starts::Estimates(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fingerprint(&self) -> u64 {
        match self {
            Starts::Subsets(pool) => pool.fingerprint(),
            Starts::Estimates(list) => {
                let mut h = DefaultHasher::new();
                for e in list {
                    for v in e.location.iter().chain(e.scatter.iter()) {
                        v.as_f64().to_bits().hash(&mut h);
                    }
                }
                h.finish()
            }
        }
    }

    pub(crate) fn check(&self, data: &DataMatrix<T>) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("no starts supplied".into()));
        }
        match self {
            Starts::Subsets(pool) if pool.n() != data.n() || pool.p() != data.p() => {
                Err(Error::Size(format!(
                    "subset pool built for n = {}, p = {} but data has n = {}, p = {}",
                    pool.n(),
                    pool.p(),
                    data.n(),
                    data.p()
                )))
            }
            Starts::Estimates(list)
                if list
                    .iter()
                    .any(|e| e.location.len() != data.p() || e.scatter.shape() != (data.p(), data.p())) =>
            {
                Err(Error::Size("initial estimate dimension mismatch".into()))
            }
            _ => Ok(()),
        }
    }

    /// Initial `(T, C)` for start `k`: mean and covariance of the subset, or
    /// the explicit estimate.
    pub(crate) fn initial(&self, data: &DataMatrix<T>, k: usize) -> (DVector<T>, DMatrix<T>) {
        match self {
            Starts::Subsets(pool) => linalg::mean_cov(data.values(), &pool.subsets()[k]),
            Starts::Estimates(list) => (list[k].location.clone(), list[k].scatter.clone()),
        }
    }

    pub(crate) fn subset(&self, k: usize) -> Option<&[usize]> {
        match self {
            Starts::Subsets(pool) => Some(&pool.subsets()[k]),
            Starts::Estimates(_) => None,
        }
    }
}

/// Indices of the `keep` smallest objectives, ties broken by index.
pub(crate) fn best_indices<T: Real>(objectives: &[(usize, T)], keep: usize) -> Vec<usize> {
    let mut order: Vec<(usize, T)> = objectives.to_vec();
    order.sort_by(|a, b| a.1.as_f64().total_cmp(&b.1.as_f64()).then(a.0.cmp(&b.0)));
    order.into_iter().take(keep).map(|(i, _)| i).collect()
}
