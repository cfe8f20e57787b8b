use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::linalg::{self, Chol};
use super::{best_indices, Diagnostics, FitResult, Method, Starts};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::rho::RhoSpec;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SConfig {
    /// IRLS steps applied to every start before candidate selection.
    pub max_csteps: usize,
    /// Candidates refined to convergence.
    pub n_best_kept: usize,
    /// Convergence threshold on the change of `log Det(C)` and on the
    /// (affine invariant) parameter step.
    pub refine_tol: f64,
    pub max_refine_iter: usize,
}

impl Default for SConfig {
    fn default() -> Self {
        Self {
            max_csteps: 2,
            n_best_kept: 10,
            refine_tol: 1e-10,
            max_refine_iter: 1000,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct SState<T: Real> {
    pub location: DVector<T>,
    pub scatter: DMatrix<T>,
    pub chol: Chol<T>,
    pub distances: DVector<T>,
    pub log_det: T,
}

/// Solves `(1/n) Σ ρ(dᵢ/s) = K` for `s > 0` by bisection on `log s`.
pub(crate) fn solve_scale<T: Real>(spec: &RhoSpec<T>, d: &DVector<T>) -> Result<T> {
    let n = T::from_count(d.len());
    let k = spec.k_const();
    let excess = |s: T| d.iter().fold(T::zero(), |acc, &di| acc + spec.rho_unchecked(di / s)) / n - k;
    let two = T::lit(2.0);
    let mut lo = T::one();
    let mut hi = T::one();
    let mut f_hi = excess(hi);
    let mut guard = 0;
    while f_hi > T::zero() {
        lo = hi;
        hi *= two;
        f_hi = excess(hi);
        guard += 1;
        if guard > 400 {
            return Err(Error::Numeric("scale root not bracketed from above".into()));
        }
    }
    let mut f_lo = excess(lo);
    guard = 0;
    while f_lo < T::zero() {
        hi = lo;
        lo /= two;
        f_lo = excess(lo);
        guard += 1;
        if guard > 400 || lo == T::zero() {
            return Err(Error::Numeric(
                "scale root not bracketed from below: too few observations away from the center"
                    .into(),
            ));
        }
    }
    if f_lo == T::zero() {
        return Ok(lo);
    }
    let tol = T::lit(4.0) * T::machine_eps();
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if hi / lo - T::one() <= tol || mid <= lo || mid >= hi {
            break;
        }
        let f_mid = excess(mid);
        if f_mid == T::zero() {
            return Ok(mid);
        }
        if f_mid > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Rescales `(T, C)` so that the ρ-constraint holds.
pub(crate) fn constrained_state<T: Real>(
    data: &DataMatrix<T>,
    spec: &RhoSpec<T>,
    location: DVector<T>,
    scatter: DMatrix<T>,
) -> Result<SState<T>> {
    let chol = linalg::factor(&scatter)?;
    let d = linalg::distances_chol(data.values(), &location, &chol);
    let s = solve_scale(spec, &d)?;
    let scatter = scatter * (s * s);
    let chol = linalg::factor(&scatter)?;
    let distances = linalg::distances_chol(data.values(), &location, &chol);
    let log_det = linalg::log_det(&chol);
    Ok(SState {
        location,
        scatter,
        chol,
        distances,
        log_det,
    })
}

/// One reweighting step: weighted mean and unit-determinant weighted scatter,
/// then the scale that restores the constraint.
pub(crate) fn irls_step<T: Real>(
    data: &DataMatrix<T>,
    spec: &RhoSpec<T>,
    state: &SState<T>,
) -> Result<SState<T>> {
    let w = state.distances.map(|d| spec.weight_unchecked(d));
    let (location, scatter) = linalg::weighted_mean_scatter(data.values(), &w)?;
    let (shape, _) = linalg::unit_det_shape(&scatter)?;
    constrained_state(data, spec, location, shape)
}

pub(crate) fn refine<T: Real>(
    data: &DataMatrix<T>,
    spec: &RhoSpec<T>,
    mut state: SState<T>,
    tol: f64,
    max_iter: usize,
) -> Result<(SState<T>, usize, bool)> {
    let tol = T::lit(tol);
    for it in 1..=max_iter {
        let next = irls_step(data, spec, &state)?;
        let step = linalg::affine_step_size(
            &state.chol,
            &state.location,
            &next.location,
            &next.scatter,
        )
        .max((next.log_det - state.log_det).abs());
        state = next;
        if step < tol {
            return Ok((state, it, true));
        }
    }
    Ok((state, max_iter, false))
}

/// Multivariate S-estimator: the `(T, C)` minimizing `Det(C)` subject to
/// `(1/n) Σ ρ(dᵢ(T, C)) = K`.
///
/// Every start is rescaled onto the constraint and improved by
/// `max_csteps` IRLS steps; the `n_best_kept` lowest determinants are then
/// iterated to convergence and the best one returned.
pub fn s_estimate<T: Real>(
    data: &DataMatrix<T>,
    spec: &RhoSpec<T>,
    starts: &Starts<T>,
    config: &SConfig,
) -> Result<FitResult<T>> {
    if spec.dim() != data.p() {
        return Err(Error::UnsupportedDimension {
            expected: data.p(),
            got: spec.dim(),
        });
    }
    starts.check(data)?;

    let phase1: Vec<Result<SState<T>>> = (0..starts.len())
        .into_par_iter()
        .map(|k| {
            let (t0, c0) = starts.initial(data, k);
            let mut st = constrained_state(data, spec, t0, c0)?;
            for _ in 0..config.max_csteps {
                st = irls_step(data, spec, &st)?;
            }
            Ok(st)
        })
        .collect();

    let mut notes = Vec::new();
    let mut ranked = Vec::new();
    for (k, r) in phase1.iter().enumerate() {
        match r {
            Ok(st) => ranked.push((k, st.log_det)),
            Err(e) => notes.push(format!("start {k}: {e}")),
        }
    }
    let mut discarded = notes.len();
    if ranked.is_empty() {
        return Err(Error::EstimationFailed {
            reason: format!("all {} starts were degenerate", starts.len()),
            diagnostics: notes,
        });
    }

    let keep = best_indices(&ranked, config.n_best_kept.max(1));
    let refined: Vec<(usize, Result<(SState<T>, usize, bool)>)> = keep
        .par_iter()
        .map(|&k| {
            let st = phase1[k].as_ref().expect("ranked starts are Ok").clone();
            (
                k,
                refine(data, spec, st, config.refine_tol, config.max_refine_iter),
            )
        })
        .collect();

    let mut best: Option<(usize, SState<T>, usize, bool)> = None;
    for (k, r) in refined {
        match r {
            Ok((st, iters, conv)) => {
                let better = match &best {
                    None => true,
                    Some((bk, b, _, _)) => {
                        st.log_det < b.log_det || (st.log_det == b.log_det && k < *bk)
                    }
                };
                if better {
                    best = Some((k, st, iters, conv));
                }
            }
            Err(e) => {
                discarded += 1;
                notes.push(format!("start {k} during refinement: {e}"));
            }
        }
    }
    let (k, st, iters, converged) = best.ok_or_else(|| Error::EstimationFailed {
        reason: "every refined candidate degenerated".into(),
        diagnostics: notes.clone(),
    })?;

    let weights = st.distances.map(|d| spec.weight_unchecked(d));
    Ok(FitResult {
        method: Method::S,
        objective: st.log_det.exp(),
        log_det: st.log_det,
        location: st.location,
        scatter: st.scatter,
        distances: st.distances,
        weights,
        converged,
        iterations: config.max_csteps + iters,
        diagnostics: Diagnostics {
            starts_total: starts.len(),
            starts_discarded: discarded,
            best_start: Some(k),
            starts_fingerprint: starts.fingerprint(),
            notes,
        },
        mcd: None,
    })
}

/// `(1/n) Σ ρ(dᵢ) − K` at the given distances.
pub fn constraint_residual<T: Real>(spec: &RhoSpec<T>, distances: &DVector<T>) -> T {
    let n = T::from_count(distances.len());
    distances
        .iter()
        .fold(T::zero(), |acc, &d| acc + spec.rho_unchecked(d))
        / n
        - spec.k_const()
}
