//! Deterministic initial estimates.
//!
//! A reduced set of three starts computed without randomness:
//!
//! 1. coordinatewise median with `diag(MAD²)`;
//! 2. spatial-sign covariance of the standardized data;
//! 3. Spearman rank correlation of the standardized data.
//!
//! Starts 2 and 3 only supply eigenvectors; eigenvalues are replaced by squared
//! MADs of the projected data and the location by the coordinatewise median
//! in that eigenbasis. None of them is affine equivariant.

use nalgebra::{DMatrix, DVector};

use super::InitialEstimate;
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stats::{mad, median, ranks};

fn spatial_sign_cov<T: Real>(z: &DMatrix<T>) -> DMatrix<T> {
    let (n, p) = z.shape();
    let mut s = DMatrix::zeros(p, p);
    for row in z.row_iter() {
        let norm = row.norm();
        if norm > T::zero() {
            let u = row.transpose() / norm;
            s += &u * u.transpose();
        }
    }
    s / T::from_count(n)
}

fn rank_corr<T: Real>(z: &DMatrix<T>) -> DMatrix<T> {
    let (n, p) = z.shape();
    let mut r = DMatrix::zeros(n, p);
    for j in 0..p {
        let col: Vec<T> = z.column(j).iter().copied().collect();
        let rk = ranks(&col);
        let mean = T::lit((n as f64 + 1.0) / 2.0);
        for i in 0..n {
            r[(i, j)] = rk[i] - mean;
        }
    }
    let cov = r.transpose() * &r;
    let sd = cov.diagonal().map(|v| v.sqrt());
    DMatrix::from_fn(p, p, |i, j| cov[(i, j)] / (sd[i] * sd[j]))
}

/// Turns a symmetric matrix into a start in standardized coordinates: its
/// eigenvectors with robust eigenvalues and center.
fn eigen_start<T: Real>(z: &DMatrix<T>, s: DMatrix<T>) -> Result<(DVector<T>, DMatrix<T>)> {
    let p = z.ncols();
    let eig = s.symmetric_eigen();
    let vectors = eig.eigenvectors;
    let projected = z * &vectors;
    let mut lambda = DVector::zeros(p);
    let mut center = DVector::zeros(p);
    for j in 0..p {
        let col: Vec<T> = projected.column(j).iter().copied().collect();
        let scale = mad(&col);
        if !(scale > T::zero()) {
            return Err(Error::RankDeficient(
                "projected data has zero robust scale".into(),
            ));
        }
        lambda[j] = scale * scale;
        center[j] = median(&col);
    }
    let scatter = &vectors * DMatrix::from_diagonal(&lambda) * vectors.transpose();
    Ok((&vectors * center, scatter))
}

/// Up to six deterministic `(T, C)` starts; currently three.
///
/// Fails when a column has zero MAD (e.g. all rows identical).
pub fn deterministic_starts<T: Real>(data: &DataMatrix<T>) -> Result<Vec<InitialEstimate<T>>> {
    let (n, p) = (data.n(), data.p());
    let values = data.values();
    let mut med = DVector::zeros(p);
    let mut scale = DVector::zeros(p);
    for j in 0..p {
        let col: Vec<T> = values.column(j).iter().copied().collect();
        med[j] = median(&col);
        scale[j] = mad(&col);
        if !(scale[j] > T::zero()) {
            return Err(Error::RankDeficient(format!(
                "column {} ({}) has zero robust scale",
                j + 1,
                data.column_names()[j]
            )));
        }
    }
    let z = DMatrix::from_fn(n, p, |i, j| (values[(i, j)] - med[j]) / scale[j]);
    let d = DMatrix::from_diagonal(&scale);

    let mut starts = vec![InitialEstimate {
        location: med.clone(),
        scatter: DMatrix::from_diagonal(&scale.map(|s| s * s)),
    }];
    for s in [spatial_sign_cov(&z), rank_corr(&z)] {
        let (center_z, scatter_z) = eigen_start(&z, s)?;
        starts.push(InitialEstimate {
            location: &med + &d * center_z,
            scatter: &d * scatter_z * &d,
        });
    }
    Ok(starts)
}
