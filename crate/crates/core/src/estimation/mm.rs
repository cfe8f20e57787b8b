use super::linalg;
use super::{FitResult, Method};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::rho::RhoSpec;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmConfig {
    /// Threshold on the affine-invariant parameter step.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1000,
        }
    }
}

/// MM-estimator started from an S fit.
///
/// The S scale `σ = Det(C_S)^(1/2p)` is held fixed while location and
/// unit-determinant shape are re-estimated by IRLS with the weights of
/// `spec_eff`; the returned scatter is `σ²·shape`, so its determinant equals
/// `Det(C_S)`.
pub fn mm_estimate<T: Real>(
    data: &DataMatrix<T>,
    s_fit: &FitResult<T>,
    spec_eff: &RhoSpec<T>,
    config: &MmConfig,
) -> Result<FitResult<T>> {
    if s_fit.method != Method::S {
        return Err(Error::InvalidArgument(format!(
            "MM step needs an S fit as its start, got {}",
            s_fit.method
        )));
    }
    let p = data.p();
    if spec_eff.dim() != p || s_fit.dim() != p {
        return Err(Error::UnsupportedDimension {
            expected: p,
            got: spec_eff.dim(),
        });
    }
    let s_chol = linalg::factor(&s_fit.scatter)?;
    let s_log_det = linalg::log_det(&s_chol);
    let sigma2 = (s_log_det / T::from_count(p)).exp();

    let tol = T::lit(config.tol);
    let mut location = s_fit.location.clone();
    let mut scatter = s_fit.scatter.clone();
    let mut chol = s_chol;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=config.max_iter {
        iterations = it;
        let d = linalg::distances_chol(data.values(), &location, &chol);
        let w = d.map(|v| spec_eff.weight_unchecked(v));
        let (next_loc, raw) = linalg::weighted_mean_scatter(data.values(), &w)?;
        let (shape, _) = linalg::unit_det_shape(&raw)?;
        let next_scatter = shape * sigma2;
        let step = linalg::affine_step_size(&chol, &location, &next_loc, &next_scatter);
        location = next_loc;
        scatter = next_scatter;
        chol = linalg::factor(&scatter)?;
        if step < tol {
            converged = true;
            break;
        }
    }

    let distances = linalg::distances_chol(data.values(), &location, &chol);
    let weights = distances.map(|v| spec_eff.weight_unchecked(v));
    let log_det = linalg::log_det(&chol);
    let mut diagnostics = s_fit.diagnostics.clone();
    if !converged {
        diagnostics.notes.push(format!(
            "MM iteration stopped after {} steps without converging",
            config.max_iter
        ));
    }
    Ok(FitResult {
        method: Method::MM,
        location,
        scatter,
        distances,
        weights,
        objective: log_det.exp(),
        log_det,
        converged,
        iterations,
        diagnostics,
        mcd: None,
    })
}
