use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::linalg;
use super::{best_indices, Diagnostics, FitResult, Method, Starts};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::numeric;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McdConfig {
    /// C-steps applied to every start before candidate selection.
    pub max_csteps: usize,
    pub n_best_kept: usize,
    /// Cap on C-steps while refining a candidate.
    pub max_iter: usize,
    /// One-step reweighting with hard weights `d² ≤ χ²_{p, cutoff_quantile}`.
    pub reweight: bool,
    pub cutoff_quantile: f64,
}

impl Default for McdConfig {
    fn default() -> Self {
        Self {
            max_csteps: 2,
            n_best_kept: 10,
            max_iter: 500,
            reweight: true,
            cutoff_quantile: 0.975,
        }
    }
}

/// The raw MCD solution before reweighting.
#[derive(Clone, Debug, PartialEq)]
pub struct McdRaw<T: Real> {
    pub h: usize,
    /// Sorted indices of the optimal h-subset.
    pub subset: Vec<usize>,
    pub location: DVector<T>,
    /// Subset covariance multiplied by `consistency_factor`.
    pub scatter: DMatrix<T>,
    /// Determinant of the uncorrected subset covariance.
    pub raw_det: T,
    pub consistency_factor: T,
    pub distances: DVector<T>,
    /// 1 for members of the h-subset, 0 otherwise.
    pub weights: DVector<T>,
}

/// Output of one concentration step.
#[derive(Clone, Debug, PartialEq)]
pub struct CStep<T: Real> {
    pub location: DVector<T>,
    pub scatter: DMatrix<T>,
    /// The `h` observations closest to `(location, scatter)`, sorted.
    pub subset: Vec<usize>,
}

/// Legal range `⌈(n+p+1)/2⌉ ..= n` of the subset size.
pub fn h_range(n: usize, p: usize) -> (usize, usize) {
    ((n + p + 2) / 2, n)
}

/// `h = ⌈n(1 − bdp)⌉` clipped to [`h_range`].
pub fn h_for_bdp(n: usize, p: usize, bdp: f64) -> usize {
    let (lo, hi) = h_range(n, p);
    let raw = (n as f64 * (1.0 - bdp) - 1e-9).ceil();
    (raw.max(0.0) as usize).clamp(lo, hi)
}

fn smallest(distances: &DVector<impl Real>, h: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| {
        distances[a]
            .as_f64()
            .total_cmp(&distances[b].as_f64())
            .then(a.cmp(&b))
    });
    order.truncate(h);
    order.sort_unstable();
    order
}

/// Mean and covariance of `subset`, followed by the `h = |subset|`
/// observations with the smallest distances to them.
///
/// The covariance determinant of the returned subset never exceeds that of
/// the input subset.
pub fn cstep<T: Real>(data: &DataMatrix<T>, subset: &[usize]) -> Result<CStep<T>> {
    let h = subset.len();
    if h <= data.p() || subset.iter().any(|&i| i >= data.n()) {
        return Err(Error::Size(format!(
            "C-step subset must hold between p + 1 = {} and n = {} valid indices",
            data.p() + 1,
            data.n()
        )));
    }
    let (location, scatter) = linalg::mean_cov(data.values(), subset);
    let chol = linalg::factor(&scatter).map_err(|_| {
        Error::RankDeficient(format!("covariance of the {h}-subset is singular"))
    })?;
    let d = linalg::distances_chol(data.values(), &location, &chol);
    Ok(CStep {
        location,
        scatter,
        subset: smallest(&d, h),
    })
}

fn subset_log_det<T: Real>(data: &DataMatrix<T>, subset: &[usize]) -> Result<T> {
    let (_, cov) = linalg::mean_cov(data.values(), subset);
    let chol = linalg::factor(&cov)
        .map_err(|_| Error::RankDeficient("h-subset covariance is singular".into()))?;
    Ok(linalg::log_det(&chol))
}

#[derive(Clone, Debug)]
struct Candidate<T: Real> {
    subset: Vec<usize>,
    log_det: T,
    stable: bool,
    steps: usize,
}

fn concentrate<T: Real>(
    data: &DataMatrix<T>,
    mut subset: Vec<usize>,
    max_steps: usize,
) -> Result<Candidate<T>> {
    let mut steps = 0;
    let mut stable = false;
    while steps < max_steps {
        let next = cstep(data, &subset)?;
        steps += 1;
        if next.subset == subset {
            stable = true;
            break;
        }
        subset = next.subset;
    }
    let log_det = subset_log_det(data, &subset)?;
    Ok(Candidate {
        subset,
        log_det,
        stable,
        steps,
    })
}

/// `(h/n) / P(χ²_{p+2} ≤ χ²_{p, h/n})`, equal to 1 at `h = n`.
fn consistency_factor(p: usize, fraction: f64) -> f64 {
    if fraction >= 1.0 {
        return 1.0;
    }
    let q = numeric::chi2_quantile(p as f64, fraction);
    fraction / numeric::chi2_cdf(p as f64 + 2.0, q)
}

/// Minimum covariance determinant estimator with subset size `h`.
///
/// Each start `(T₀, C₀)` seeds the h-subset of its closest observations,
/// which is concentrated by C-steps; the `n_best_kept` lowest determinants
/// are iterated until the subset is stable. The raw covariance is made
/// consistent with the `h/n` χ²-quantile factor. With `reweight`, points
/// with `d² ≤ χ²_{p, cutoff_quantile}` form the reweighted estimate.
pub fn mcd_estimate<T: Real>(
    data: &DataMatrix<T>,
    h: usize,
    starts: &Starts<T>,
    config: &McdConfig,
) -> Result<FitResult<T>> {
    let (n, p) = (data.n(), data.p());
    let (h_lo, h_hi) = h_range(n, p);
    if h < h_lo || h > h_hi {
        return Err(Error::InvalidArgument(format!(
            "h = {h} outside the legal range [{h_lo}, {h_hi}]"
        )));
    }
    if !(config.cutoff_quantile > 0.0 && config.cutoff_quantile < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cutoff quantile must lie in (0, 1), got {}",
            config.cutoff_quantile
        )));
    }
    starts.check(data)?;

    let phase1: Vec<Result<Candidate<T>>> = (0..starts.len())
        .into_par_iter()
        .map(|k| {
            let initial = match starts.subset(k) {
                Some(s) if s.len() == h => s.to_vec(),
                _ => {
                    let (t0, c0) = starts.initial(data, k);
                    let chol = linalg::factor(&c0).map_err(|_| {
                        Error::RankDeficient("initial scatter is singular".into())
                    })?;
                    smallest(&linalg::distances_chol(data.values(), &t0, &chol), h)
                }
            };
            concentrate(data, initial, config.max_csteps)
        })
        .collect();

    let mut notes = Vec::new();
    let mut ranked = Vec::new();
    for (k, r) in phase1.iter().enumerate() {
        match r {
            Ok(c) => ranked.push((k, c.log_det)),
            Err(e) => notes.push(format!("start {k}: {e}")),
        }
    }
    let mut discarded = notes.len();
    if ranked.is_empty() {
        return Err(Error::EstimationFailed {
            reason: format!("all {} starts gave singular h-subsets", starts.len()),
            diagnostics: notes,
        });
    }

    let keep = best_indices(&ranked, config.n_best_kept.max(1));
    let refined: Vec<(usize, Result<Candidate<T>>)> = keep
        .par_iter()
        .map(|&k| {
            let c = phase1[k].as_ref().expect("ranked starts are Ok");
            if c.stable {
                return (k, Ok(c.clone()));
            }
            let more = concentrate(data, c.subset.clone(), config.max_iter).map(|mut m| {
                m.steps += c.steps;
                m
            });
            (k, more)
        })
        .collect();

    let mut best: Option<(usize, Candidate<T>)> = None;
    for (k, r) in refined {
        match r {
            Ok(c) => {
                let better = match &best {
                    None => true,
                    Some((bk, b)) => c.log_det < b.log_det || (c.log_det == b.log_det && k < *bk),
                };
                if better {
                    best = Some((k, c));
                }
            }
            Err(e) => {
                discarded += 1;
                notes.push(format!("start {k} during refinement: {e}"));
            }
        }
    }
    let (best_k, cand) = best.ok_or_else(|| Error::EstimationFailed {
        reason: "every refined candidate became singular".into(),
        diagnostics: notes.clone(),
    })?;

    let (raw_loc, raw_cov) = linalg::mean_cov(data.values(), &cand.subset);
    let factor = T::lit(consistency_factor(p, h as f64 / n as f64));
    let raw_scatter = raw_cov * factor;
    let raw_chol = linalg::factor(&raw_scatter)?;
    let raw_distances = linalg::distances_chol(data.values(), &raw_loc, &raw_chol);
    let mut raw_weights = DVector::zeros(n);
    for &i in &cand.subset {
        raw_weights[i] = T::one();
    }
    let raw = McdRaw {
        h,
        subset: cand.subset.clone(),
        location: raw_loc.clone(),
        scatter: raw_scatter.clone(),
        raw_det: cand.log_det.exp(),
        consistency_factor: factor,
        distances: raw_distances.clone(),
        weights: raw_weights.clone(),
    };

    let (location, scatter, weights) = if config.reweight {
        let cutoff = numeric::chi2_quantile(p as f64, config.cutoff_quantile);
        let cutoff_t = T::lit(cutoff);
        let kept: Vec<usize> = (0..n)
            .filter(|&i| raw_distances[i] * raw_distances[i] <= cutoff_t)
            .collect();
        let reweighted = if kept.len() > p {
            let (loc, cov) = linalg::mean_cov(data.values(), &kept);
            let rw_factor = config.cutoff_quantile / numeric::chi2_cdf(p as f64 + 2.0, cutoff);
            let cov = cov * T::lit(rw_factor);
            linalg::factor(&cov).ok().map(|_| (loc, cov))
        } else {
            None
        };
        match reweighted {
            Some((loc, cov)) => {
                let mut w = DVector::zeros(n);
                for &i in &kept {
                    w[i] = T::one();
                }
                (loc, cov, w)
            }
            None => {
                notes.push("reweighting subset singular; returning raw estimate".into());
                (raw_loc, raw_scatter, raw_weights)
            }
        }
    } else {
        (raw_loc, raw_scatter, raw_weights)
    };
    let chol = linalg::factor(&scatter)?;
    let distances = linalg::distances_chol(data.values(), &location, &chol);

    Ok(FitResult {
        method: Method::MCD,
        location,
        scatter,
        distances,
        weights,
        objective: cand.log_det.exp(),
        log_det: cand.log_det,
        converged: cand.stable,
        iterations: cand.steps,
        diagnostics: Diagnostics {
            starts_total: starts.len(),
            starts_discarded: discarded,
            best_start: Some(best_k),
            starts_fingerprint: starts.fingerprint(),
            notes,
        },
        mcd: Some(raw),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::SubsetPool;

    fn toy() -> DataMatrix<f64> {
        DataMatrix::from_rows(
            &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 100.0]
                .iter()
                .map(|&v| vec![v])
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    /// Exhaustive oracle: minimal variance over all h-subsets.
    fn brute_force_1d(values: &[f64], h: usize) -> (Vec<usize>, f64) {
        let pool = SubsetPool::exhaustive(values.len(), 1, h).unwrap();
        let mut best = (Vec::new(), f64::INFINITY);
        for s in pool.subsets() {
            let m = s.iter().map(|&i| values[i]).sum::<f64>() / h as f64;
            let v = s.iter().map(|&i| (values[i] - m).powi(2)).sum::<f64>() / (h - 1) as f64;
            if v < best.1 {
                best = (s.clone(), v);
            }
        }
        best
    }

    #[test]
    fn h_mapping() {
        assert_eq!(h_range(272, 2), (138, 272));
        assert_eq!(h_for_bdp(272, 2, 0.5), 138);
        assert_eq!(h_for_bdp(200, 2, 0.25), 150);
        assert_eq!(h_for_bdp(100, 2, 0.0), 100);
    }

    #[test]
    fn toy_matches_brute_force() {
        let data = toy();
        let values: Vec<f64> = data.values().iter().copied().collect();
        // h must be at least ⌈(8+1+1)/2⌉ = 5 for the estimator, but the oracle
        // window property holds for any h; check h = 4 through cstep as well.
        let (oracle, oracle_var) = brute_force_1d(&values, 5);
        let pool = SubsetPool::exhaustive(8, 1, 5).unwrap();
        let fit = mcd_estimate(&data, 5, &Starts::Subsets(pool), &McdConfig::default()).unwrap();
        let raw = fit.mcd.unwrap();
        assert!((raw.raw_det - oracle_var).abs() < 1e-12);
        assert!(!raw.subset.contains(&7));
        assert_eq!(raw.subset.len(), oracle.len());
    }

    #[test]
    fn h_four_window_via_csteps() {
        let data = toy();
        let values: Vec<f64> = data.values().iter().copied().collect();
        let (oracle, _) = brute_force_1d(&values, 4);
        // A contaminated start converges to an all-inlier window.
        let mut subset = vec![0, 1, 2, 7];
        for _ in 0..8 {
            let next = cstep(&data, &subset).unwrap();
            if next.subset == subset {
                break;
            }
            subset = next.subset;
        }
        assert!(!subset.contains(&7));
        assert!(subset.windows(2).all(|w| w[1] == w[0] + 1));
        // every 4-window of consecutive integers has the same variance as the oracle
        let v = |s: &[usize]| {
            let m = s.iter().map(|&i| values[i]).sum::<f64>() / 4.0;
            s.iter().map(|&i| (values[i] - m).powi(2)).sum::<f64>() / 3.0
        };
        assert!((v(&subset) - v(&oracle)).abs() < 1e-12);
    }

    #[test]
    fn cstep_fixed_point() {
        let data = toy();
        let s = cstep(&data, &[1, 2, 3, 4]).unwrap();
        assert_eq!(s.subset, vec![1, 2, 3, 4]);
    }

    #[test]
    fn cstep_singular() {
        let data = DataMatrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(cstep(&data, &[0, 1, 2]), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn full_h_is_classical() {
        let data = DataMatrix::from_rows(&[
            vec![1.0, 2.0],
            vec![2.0, 1.0],
            vec![4.0, 3.0],
            vec![0.0, 5.0],
            vec![3.0, 3.0],
        ])
        .unwrap();
        let pool = SubsetPool::elemental(5, 2, 5, 1).unwrap();
        let cfg = McdConfig {
            reweight: false,
            ..Default::default()
        };
        let fit = mcd_estimate(&data, 5, &Starts::Subsets(pool), &cfg).unwrap();
        let (m, c) = linalg::mean_cov(data.values(), &[0, 1, 2, 3, 4]);
        assert!((&fit.location - m).amax() < 1e-14);
        assert!((&fit.scatter - c).amax() < 1e-14);
        assert_eq!(fit.mcd.unwrap().consistency_factor, 1.0);
    }

    #[test]
    fn h_out_of_range() {
        let data = toy();
        let pool = SubsetPool::elemental(8, 1, 5, 1).unwrap();
        let starts = Starts::Subsets(pool);
        assert!(mcd_estimate(&data, 4, &starts, &McdConfig::default()).is_err());
        assert!(mcd_estimate(&data, 9, &starts, &McdConfig::default()).is_err());
    }

    #[test]
    fn consistency_factor_exceeds_one() {
        let f = consistency_factor(2, 0.5);
        assert!(f > 1.0 && f < 5.0, "{f}");
        assert_eq!(consistency_factor(2, 1.0), 1.0);
    }
}
