use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub(crate) type Chol<T> = Cholesky<T, Dyn>;

/// Cholesky factor of a symmetric positive definite matrix.
pub(crate) fn factor<T: Real>(scatter: &DMatrix<T>) -> Result<Chol<T>> {
    if !scatter.is_square() {
        return Err(Error::NotPositiveDefinite);
    }
    let chol = Cholesky::new(scatter.clone()).ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l_dirty();
    if (0..l.nrows()).any(|i| !(l[(i, i)] > T::zero()) || !l[(i, i)].is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(chol)
}

pub(crate) fn log_det<T: Real>(chol: &Chol<T>) -> T {
    let l = chol.l_dirty();
    (0..l.nrows()).fold(T::zero(), |acc, i| acc + l[(i, i)].ln()) * T::lit(2.0)
}

/// Distances of every row of `values` from `location` in the metric of the
/// factored scatter.
pub(crate) fn distances_chol<T: Real>(
    values: &DMatrix<T>,
    location: &DVector<T>,
    chol: &Chol<T>,
) -> DVector<T> {
    let mut resid = values.transpose();
    for mut col in resid.column_iter_mut() {
        col -= location;
    }
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&resid)
        .expect("Cholesky factor has a positive diagonal");
    DVector::from_iterator(z.ncols(), z.column_iter().map(|c| c.norm()))
}

/// Statistical distances `dᵢ = √((yᵢ − T)' C⁻¹ (yᵢ − T))` of every observation,
/// computed through a Cholesky factorization of `C`.
pub fn statistical_distances<T: Real>(
    data: &DataMatrix<T>,
    location: &DVector<T>,
    scatter: &DMatrix<T>,
) -> Result<DVector<T>> {
    let p = data.p();
    if location.len() != p || scatter.shape() != (p, p) {
        return Err(Error::Size(format!(
            "location/scatter do not match dimension p = {p}"
        )));
    }
    let chol = factor(scatter)?;
    Ok(distances_chol(data.values(), location, &chol))
}

/// Mean and unbiased covariance (divisor `m − 1`) of the selected rows.
pub(crate) fn mean_cov<T: Real>(values: &DMatrix<T>, rows: &[usize]) -> (DVector<T>, DMatrix<T>) {
    let p = values.ncols();
    let m = T::from_count(rows.len());
    let mut mean = DVector::zeros(p);
    for &i in rows {
        mean += values.row(i).transpose();
    }
    mean /= m;
    let mut cov = DMatrix::zeros(p, p);
    for &i in rows {
        let r = values.row(i).transpose() - &mean;
        cov.syger(T::one(), &r, &r, T::one());
    }
    cov.fill_upper_triangle_with_lower_triangle();
    cov /= m - T::one();
    (mean, cov)
}

/// Weighted mean and weighted scatter `Σ wᵢ (yᵢ − T)(yᵢ − T)' / Σ wᵢ`.
///
/// Fails when fewer than `p + 1` weights are positive, since the scatter
/// would then be singular.
pub(crate) fn weighted_mean_scatter<T: Real>(
    values: &DMatrix<T>,
    weights: &DVector<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let p = values.ncols();
    let support = weights.iter().filter(|w| **w > T::zero()).count();
    if support < p + 1 {
        return Err(Error::RankDeficient(format!(
            "only {support} observations carry positive weight, need {}",
            p + 1
        )));
    }
    let total = weights.sum();
    let mut mean = DVector::zeros(p);
    for (i, &w) in weights.iter().enumerate() {
        if w > T::zero() {
            mean.axpy(w, &values.row(i).transpose(), T::one());
        }
    }
    mean /= total;
    let mut scatter = DMatrix::zeros(p, p);
    for (i, &w) in weights.iter().enumerate() {
        if w > T::zero() {
            let r = values.row(i).transpose() - &mean;
            scatter.syger(w, &r, &r, T::one());
        }
    }
    scatter.fill_upper_triangle_with_lower_triangle();
    scatter /= total;
    Ok((mean, scatter))
}

/// Rescales an SPD matrix to unit determinant. Returns the shape matrix and
/// its factorization.
pub(crate) fn unit_det_shape<T: Real>(scatter: &DMatrix<T>) -> Result<(DMatrix<T>, Chol<T>)> {
    let chol = factor(scatter)?;
    let p = T::from_count(scatter.nrows());
    let factor_ = (-log_det(&chol) / p).exp();
    let shape = scatter * factor_;
    let chol = factor(&shape)?;
    Ok((shape, chol))
}

/// Size of a parameter update measured in the metric of the old scatter:
/// `max(‖L⁻¹ΔT‖, max|L⁻¹ C_new L⁻ᵀ − I|)`. Invariant under affine maps.
pub(crate) fn affine_step_size<T: Real>(
    old_chol: &Chol<T>,
    old_location: &DVector<T>,
    new_location: &DVector<T>,
    new_scatter: &DMatrix<T>,
) -> T {
    let l = old_chol.l_dirty();
    let dt = l
        .solve_lower_triangular(&(new_location - old_location))
        .expect("positive diagonal")
        .norm();
    let half = l
        .solve_lower_triangular(new_scatter)
        .expect("positive diagonal")
        .transpose();
    let mut m = l.solve_lower_triangular(&half).expect("positive diagonal");
    for i in 0..m.nrows() {
        m[(i, i)] -= T::one();
    }
    let dc = m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    dt.max(dc)
}
