//! Tuning-parameter sweeps with a fixed set of starts.
//!
//! [`monitor`] refits one estimator at every value of a grid, always
//! consuming the same [`Starts`], and records the robust distances of every
//! observation. A jump in these trajectories marks a switch between a fit
//! to the main cloud and a fit that also covers a nearby cluster.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::estimation::{
    h_for_bdp, mcd_estimate, mm_estimate, s_estimate, FitResult, McdConfig, Method, MmConfig,
    SConfig, Starts,
};
use crate::rho::{RhoFamily, RhoSpec};
use crate::scalar::Real;

/// Relative drop of the largest distance that [`detect_transition`] treats
/// as a regime switch by default.
pub const DEFAULT_TRANSITION_THRESHOLD: f64 = 0.12;

/// Breakdown value of the bisquare S-estimator that starts an MM sweep.
pub const DEFAULT_MM_START_BDP: f64 = 0.5;

/// What the grid of an MM sweep tunes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmTuning {
    /// Gaussian location efficiency of the bisquare.
    Efficiency,
    /// Breakdown value the bisquare would have as an S-estimator.
    Bdp,
}

/// The estimator swept by [`monitor`] and the meaning of its grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EstimatorKind {
    /// Bisquare S-estimator; grid of breakdown values.
    SBisquare,
    /// S-estimator with the custom ρ_a; grid of `a` values.
    SCustom,
    /// MM-estimator from a bisquare S start of breakdown value `start_bdp`,
    /// which is computed once and shared by all grid points.
    MM { start_bdp: f64, tuning: MmTuning },
    /// Reweighted MCD; grid of breakdown values mapped to `h = ⌈n(1 − bdp)⌉`.
    Mcd,
}

impl EstimatorKind {
    pub fn method(&self) -> Method {
        match self {
            Self::SBisquare | Self::SCustom => Method::S,
            Self::MM { .. } => Method::MM,
            Self::Mcd => Method::MCD,
        }
    }

    pub fn rho_family(&self) -> Option<RhoFamily> {
        match self {
            Self::SBisquare | Self::MM { .. } => Some(RhoFamily::Bisquare),
            Self::SCustom => Some(RhoFamily::CustomA),
            Self::Mcd => None,
        }
    }

    /// Name of the swept quantity.
    pub fn parameter(&self) -> &'static str {
        match self {
            Self::SBisquare | Self::Mcd => "bdp",
            Self::SCustom => "a",
            Self::MM {
                tuning: MmTuning::Efficiency,
                ..
            } => "efficiency",
            Self::MM {
                tuning: MmTuning::Bdp, ..
            } => "bdp",
        }
    }

    fn check_value(&self, v: f64) -> Result<()> {
        let ok = match self {
            Self::SBisquare | Self::MM {
                tuning: MmTuning::Bdp, ..
            } => v > 0.0 && v <= 0.5,
            Self::Mcd => (0.0..=0.5).contains(&v),
            Self::SCustom => v >= 0.0 && v.is_finite(),
            Self::MM {
                tuning: MmTuning::Efficiency,
                ..
            } => v > 0.0 && v < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{} = {v} is outside its admissible range",
                self.parameter()
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MonitorConfig {
    pub s: SConfig,
    pub mm: MmConfig,
    pub mcd: McdConfig,
}

/// Fit summary at one grid value.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSummary<T: Real> {
    pub location: Option<DVector<T>>,
    pub log_det: Option<T>,
    pub converged: bool,
    pub iterations: usize,
    pub starts_fingerprint: u64,
    /// Why the fit failed, when it did.
    pub error: Option<String>,
}

/// Per-observation distances along a tuning grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MonitoringTrace<T: Real> {
    pub estimator: Method,
    pub rho_family: Option<RhoFamily>,
    pub parameter: String,
    pub grid: Vec<f64>,
    /// `None` where the fit failed.
    pub distances: Vec<Option<DVector<T>>>,
    pub weights: Vec<Option<DVector<T>>>,
    pub summaries: Vec<GridSummary<T>>,
    /// Seed of the subset pool, when the starts are a seeded pool.
    pub pool_seed: Option<u64>,
    pub starts_fingerprint: u64,
    /// Breakdown value of the shared S start, MM sweeps only.
    pub mm_start_bdp: Option<f64>,
}

impl<T: Real> MonitoringTrace<T> {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Largest distance at every grid point.
    pub fn max_distances(&self) -> Vec<Option<f64>> {
        self.distances
            .iter()
            .map(|d| d.as_ref().map(|d| d.max().as_f64()))
            .collect()
    }

    /// Long format: `grid_value,obs_index,distance`, grid-major, observations
    /// numbered from 0. Failed grid points contribute no rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io {
            path: "<trace output>".into(),
            source: e,
        };
        writeln!(out, "grid_value,obs_index,distance").map_err(io)?;
        for (g, d) in self.grid.iter().zip(&self.distances) {
            if let Some(d) = d {
                for (i, v) in d.iter().enumerate() {
                    writeln!(out, "{g},{i},{v}").map_err(io)?;
                }
            }
        }
        Ok(())
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("monitoring grid is empty".into()));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("monitoring grid has a non-finite value".into()));
    }
    let up = grid.windows(2).all(|w| w[0] < w[1]);
    let down = grid.windows(2).all(|w| w[0] > w[1]);
    if !(up || down) {
        return Err(Error::InvalidArgument(
            "monitoring grid must be strictly monotone".into(),
        ));
    }
    Ok(())
}

fn fit_at<T: Real>(
    data: &DataMatrix<T>,
    kind: &EstimatorKind,
    value: f64,
    starts: &Starts<T>,
    s_start: Option<&Result<FitResult<T>>>,
    config: &MonitorConfig,
) -> Result<FitResult<T>> {
    let p = data.p();
    match kind {
        EstimatorKind::SBisquare => {
            let spec = RhoSpec::bisquare_for_bdp(p, T::lit(value))?;
            s_estimate(data, &spec, starts, &config.s)
        }
        EstimatorKind::SCustom => {
            let spec = RhoSpec::custom(p, T::lit(value))?;
            s_estimate(data, &spec, starts, &config.s)
        }
        EstimatorKind::MM { tuning, .. } => {
            let start = match s_start.expect("MM sweeps compute their S start") {
                Ok(f) => f,
                Err(e) => {
                    return Err(Error::EstimationFailed {
                        reason: format!("S start failed: {e}"),
                        diagnostics: Vec::new(),
                    })
                }
            };
            let spec = match tuning {
                MmTuning::Efficiency => RhoSpec::bisquare_for_efficiency(p, T::lit(value))?,
                MmTuning::Bdp => RhoSpec::bisquare_for_bdp(p, T::lit(value))?,
            };
            mm_estimate(data, start, &spec, &config.mm)
        }
        EstimatorKind::Mcd => {
            let h = h_for_bdp(data.n(), p, value);
            mcd_estimate(data, h, starts, &config.mcd)
        }
    }
}

/// Fits `kind` at every grid value with the same `starts`.
///
/// A failed fit is recorded in its [`GridSummary`] and does not stop the
/// sweep. Grid points are fitted in parallel and assembled in grid order.
pub fn monitor<T: Real>(
    data: &DataMatrix<T>,
    kind: &EstimatorKind,
    grid: &[f64],
    starts: &Starts<T>,
    config: &MonitorConfig,
) -> Result<MonitoringTrace<T>> {
    check_grid(grid)?;
    for &v in grid {
        kind.check_value(v)?;
    }
    starts.check(data)?;
    let s_start = match kind {
        EstimatorKind::MM { start_bdp, .. } => {
            let spec = RhoSpec::bisquare_for_bdp(data.p(), T::lit(*start_bdp))?;
            Some(s_estimate(data, &spec, starts, &config.s))
        }
        _ => None,
    };
    let fits: Vec<Result<FitResult<T>>> = grid
        .par_iter()
        .map(|&v| fit_at(data, kind, v, starts, s_start.as_ref(), config))
        .collect();

    let fingerprint = starts.fingerprint();
    let mut distances = Vec::with_capacity(grid.len());
    let mut weights = Vec::with_capacity(grid.len());
    let mut summaries = Vec::with_capacity(grid.len());
    for fit in fits {
        match fit {
            Ok(f) => {
                summaries.push(GridSummary {
                    location: Some(f.location),
                    log_det: Some(f.log_det),
                    converged: f.converged,
                    iterations: f.iterations,
                    starts_fingerprint: f.diagnostics.starts_fingerprint,
                    error: None,
                });
                distances.push(Some(f.distances));
                weights.push(Some(f.weights));
            }
            Err(e) => {
                summaries.push(GridSummary {
                    location: None,
                    log_det: None,
                    converged: false,
                    iterations: 0,
                    starts_fingerprint: fingerprint,
                    error: Some(e.to_string()),
                });
                distances.push(None);
                weights.push(None);
            }
        }
    }
    Ok(MonitoringTrace {
        estimator: kind.method(),
        rho_family: kind.rho_family(),
        parameter: kind.parameter().to_owned(),
        grid: grid.to_vec(),
        distances,
        weights,
        summaries,
        pool_seed: match starts {
            Starts::Subsets(pool) => pool.seed(),
            Starts::Estimates(_) => None,
        },
        starts_fingerprint: fingerprint,
        mm_start_bdp: match kind {
            EstimatorKind::MM { start_bdp, .. } => Some(*start_bdp),
            _ => None,
        },
    })
}

/// First grid index whose largest distance is more than `threshold` (as a
/// fraction) below the largest distance at the previous grid point.
///
/// This is one operational reading of "the monitoring plot shows a
/// switch": `None` means the trajectories are flat. Pairs involving a failed
/// fit are skipped. The result does not change when all distances are
/// multiplied by a common positive factor.
pub fn detect_transition<T: Real>(trace: &MonitoringTrace<T>, threshold: f64) -> Option<usize> {
    let maxima = trace.max_distances();
    (1..maxima.len()).find(|&k| match (maxima[k - 1], maxima[k]) {
        (Some(prev), Some(cur)) if prev > 0.0 => (prev - cur) / prev > threshold,
        _ => false,
    })
}

/// Outcome of one shift in [`shift_experiment`].
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftPoint {
    pub delta: f64,
    /// Result of [`detect_transition`] on the shifted data.
    pub transition: Option<usize>,
    /// Grid value at the transition.
    pub transition_value: Option<f64>,
    /// Mean weight of the shifted points at each grid value.
    pub minority_mean_weight: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftReport {
    pub points: Vec<ShiftPoint>,
    /// Largest shift at which a transition was still detected.
    pub largest_detected: Option<f64>,
}

/// Translates the rows flagged in `minority_mask` by `δ · direction`.
pub fn shift_rows<T: Real>(
    data: &DataMatrix<T>,
    minority_mask: &[bool],
    direction: &[f64],
    delta: f64,
) -> Result<DataMatrix<T>> {
    let mut values = data.values().clone();
    for (i, _) in minority_mask.iter().enumerate().filter(|(_, &m)| m) {
        for (j, &u) in direction.iter().enumerate() {
            values[(i, j)] += T::lit(delta * u);
        }
    }
    DataMatrix::new(values, data.column_names().to_vec())
}

/// Moves the flagged cluster by `δ · direction` for each `δ`, monitors the
/// shifted data and records whether a transition is still detected.
#[allow(clippy::too_many_arguments)]
pub fn shift_experiment<T: Real>(
    data: &DataMatrix<T>,
    minority_mask: &[bool],
    direction: &[f64],
    deltas: &[f64],
    kind: &EstimatorKind,
    grid: &[f64],
    starts: &Starts<T>,
    config: &MonitorConfig,
    threshold: f64,
) -> Result<ShiftReport> {
    if minority_mask.len() != data.n() {
        return Err(Error::Size(format!(
            "mask has {} entries for {} observations",
            minority_mask.len(),
            data.n()
        )));
    }
    let flagged = minority_mask.iter().filter(|&&m| m).count();
    if flagged == 0 || flagged == data.n() {
        return Err(Error::InvalidArgument(
            "the minority mask must flag a nonempty proper subset".into(),
        ));
    }
    if direction.len() != data.p() {
        return Err(Error::Size(format!(
            "direction has length {}, data has p = {}",
            direction.len(),
            data.p()
        )));
    }
    let norm = DVector::from_column_slice(direction).norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidArgument("shift direction must be a nonzero vector".into()));
    }
    let mut points = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let shifted = shift_rows(data, minority_mask, direction, delta)?;
        let trace = monitor(&shifted, kind, grid, starts, config)?;
        let transition = detect_transition(&trace, threshold);
        let minority_mean_weight = trace
            .weights
            .iter()
            .map(|w| {
                w.as_ref().map(|w| {
                    let total: f64 = (0..w.len())
                        .filter(|&i| minority_mask[i])
                        .map(|i| w[i].as_f64())
                        .sum();
                    total / flagged as f64
                })
            })
            .collect();
        points.push(ShiftPoint {
            delta,
            transition,
            transition_value: transition.map(|k| grid[k]),
            minority_mean_weight,
        });
    }
    let largest_detected = points
        .iter()
        .filter(|p| p.transition.is_some())
        .map(|p| p.delta)
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
    Ok(ShiftReport {
        points,
        largest_detected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_two_cluster, ContaminationSpec};
    use crate::estimation::SubsetPool;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> DataMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DataMatrix::from_matrix(DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng)))
            .unwrap()
    }

    fn pool(n: usize, p: usize, seed: u64) -> Starts<f64> {
        Starts::Subsets(SubsetPool::elemental(n, p, 200, seed).unwrap())
    }

    fn bdp_grid() -> Vec<f64> {
        vec![0.5, 0.45, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15, 0.1]
    }

    fn correlation(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let (ma, mb) = (a.mean(), b.mean());
        let (ca, cb) = (a.add_scalar(-ma), b.add_scalar(-mb));
        ca.dot(&cb) / (ca.norm() * cb.norm())
    }

    fn synthetic_trace(distances: &[f64]) -> MonitoringTrace<f64> {
        MonitoringTrace {
            estimator: Method::S,
            rho_family: Some(RhoFamily::Bisquare),
            parameter: "bdp".into(),
            grid: (0..distances.len()).map(|i| 0.5 - 0.01 * i as f64).collect(),
            distances: distances
                .iter()
                .map(|&m| Some(DVector::from_vec(vec![0.5, 1.0, m])))
                .collect(),
            weights: vec![None; distances.len()],
            summaries: Vec::new(),
            pool_seed: None,
            starts_fingerprint: 0,
            mm_start_bdp: None,
        }
    }

    #[test]
    fn single_point_trace_matches_fit() {
        let data = gaussian(80, 2, 1);
        let starts = pool(80, 2, 2);
        let trace = monitor(&data, &EstimatorKind::SBisquare, &[0.5], &starts, &Default::default())
            .unwrap();
        let spec = RhoSpec::bisquare_for_bdp(2, 0.5).unwrap();
        let fit = s_estimate(&data, &spec, &starts, &SConfig::default()).unwrap();
        assert_eq!(trace.distances[0].as_ref().unwrap(), &fit.distances);
        assert_eq!(trace.pool_seed, Some(2));
    }

    #[test]
    fn mcd_clean_data_is_stable_along_grid() {
        let data = gaussian(200, 2, 4);
        let trace = monitor(&data, &EstimatorKind::Mcd, &bdp_grid(), &pool(200, 2, 5), &Default::default())
            .unwrap();
        let d: Vec<&DVector<f64>> = trace.distances.iter().map(|d| d.as_ref().unwrap()).collect();
        let mut worst: f64 = 1.0;
        for i in 0..d.len() {
            for j in i + 1..d.len() {
                worst = worst.min(correlation(d[i], d[j]));
            }
        }
        assert!(worst > 0.99, "{worst}");
        assert_eq!(detect_transition(&trace, DEFAULT_TRANSITION_THRESHOLD), None);
    }

    #[test]
    fn mcd_flips_at_contamination_fraction() {
        let spec = ContaminationSpec::geyser_like(200, 0.35, 1.5, 9);
        let (data, _) = generate_two_cluster::<f64>(&spec).unwrap();
        let grid = bdp_grid();
        let trace =
            monitor(&data, &EstimatorKind::Mcd, &grid, &pool(200, 2, 9), &Default::default()).unwrap();
        let k = detect_transition(&trace, DEFAULT_TRANSITION_THRESHOLD).expect("a transition");
        assert!(grid[k - 1] >= 0.3 && grid[k] <= 0.35, "{}", grid[k]);
    }

    #[test]
    fn pool_fixity_and_reproducibility() {
        let spec = ContaminationSpec::geyser_like(120, 0.3, 1.0, 3);
        let (data, _) = generate_two_cluster::<f64>(&spec).unwrap();
        let starts = pool(120, 2, 3);
        let kind = EstimatorKind::SBisquare;
        let grid = [0.5, 0.4, 0.3];
        let a = monitor(&data, &kind, &grid, &starts, &Default::default()).unwrap();
        assert!(a
            .summaries
            .iter()
            .all(|s| s.starts_fingerprint == starts.fingerprint()));
        let b = monitor(&data, &kind, &grid, &starts, &Default::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_order_does_not_leak_state() {
        let data = gaussian(90, 2, 8);
        let starts = pool(90, 2, 8);
        let kind = EstimatorKind::MM {
            start_bdp: 0.5,
            tuning: MmTuning::Efficiency,
        };
        let grid = [0.6, 0.8, 0.95];
        let fwd = monitor(&data, &kind, &grid, &starts, &Default::default()).unwrap();
        let rev_grid: Vec<f64> = grid.iter().rev().copied().collect();
        let mut rev = monitor(&data, &kind, &rev_grid, &starts, &Default::default()).unwrap();
        rev.grid.reverse();
        rev.distances.reverse();
        rev.weights.reverse();
        rev.summaries.reverse();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn failures_are_recorded() {
        // Most rows coincide, so elemental starts are singular.
        let mut rows = vec![vec![1.0, 1.0]; 30];
        rows.extend((0..5).map(|i| vec![i as f64, (i * i) as f64]));
        let data = DataMatrix::from_rows(&rows).unwrap();
        let starts = Starts::Subsets(SubsetPool::from_subsets(35, 2, vec![vec![0, 1, 2]]).unwrap());
        let trace =
            monitor(&data, &EstimatorKind::SBisquare, &[0.5, 0.4], &starts, &Default::default())
                .unwrap();
        assert!(trace.summaries.iter().all(|s| !s.converged && s.error.is_some()));
        assert!(trace.distances.iter().all(Option::is_none));
    }

    #[test]
    fn invalid_grids() {
        let data = gaussian(40, 2, 1);
        let starts = pool(40, 2, 1);
        let cfg = MonitorConfig::default();
        assert!(monitor(&data, &EstimatorKind::Mcd, &[], &starts, &cfg).is_err());
        assert!(monitor(&data, &EstimatorKind::Mcd, &[0.5, 0.5], &starts, &cfg).is_err());
        assert!(monitor(&data, &EstimatorKind::Mcd, &[0.5, 0.3, 0.4], &starts, &cfg).is_err());
        assert!(monitor(&data, &EstimatorKind::SBisquare, &[0.6], &starts, &cfg).is_err());
    }

    #[test]
    fn transition_on_constructed_traces() {
        assert_eq!(detect_transition(&synthetic_trace(&[5.0; 6]), 0.12), None);
        assert_eq!(detect_transition(&synthetic_trace(&[5.0, 5.1, 4.9, 2.0, 2.0]), 0.12), Some(3));
        assert_eq!(detect_transition(&synthetic_trace(&[5.0]), 0.12), None);
        // An increase is not a transition.
        assert_eq!(detect_transition(&synthetic_trace(&[2.0, 8.0, 8.0]), 0.12), None);
    }

    #[test]
    fn trace_csv_layout() {
        let t = synthetic_trace(&[4.0, 2.0]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "grid_value,obs_index,distance");
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[3], "0.5,2,4");
    }

    #[test]
    fn shift_experiment_contract() {
        let spec = ContaminationSpec::geyser_like(100, 0.3, 1.0, 5);
        let (data, mask) = generate_two_cluster::<f64>(&spec).unwrap();
        let starts = pool(100, 2, 5);
        let kind = EstimatorKind::Mcd;
        let grid = [0.5, 0.4];
        let cfg = MonitorConfig::default();
        let dir = spec.shift_direction();
        assert!(shift_experiment(&data, &mask, &[0.0, 0.0], &[0.0], &kind, &grid, &starts, &cfg, 0.12)
            .is_err());
        assert!(shift_experiment(&data, &[false; 100], &dir, &[0.0], &kind, &grid, &starts, &cfg, 0.12)
            .is_err());
        let report =
            shift_experiment(&data, &mask, &dir, &[0.0], &kind, &grid, &starts, &cfg, 0.12).unwrap();
        let direct = monitor(&data, &kind, &grid, &starts, &cfg).unwrap();
        assert_eq!(report.points[0].transition, detect_transition(&direct, 0.12));
    }

    #[test]
    fn shifted_rows_move_exactly() {
        let data = gaussian(10, 2, 3);
        let mut mask = vec![false; 10];
        mask[4] = true;
        let moved = shift_rows(&data, &mask, &[1.0, -2.0], 0.5).unwrap();
        assert_eq!(moved.values()[(4, 0)], data.values()[(4, 0)] + 0.5);
        assert_eq!(moved.values()[(4, 1)], data.values()[(4, 1)] - 1.0);
        assert_eq!(moved.values()[(3, 0)], data.values()[(3, 0)]);
    }

    proptest! {
        #[test]
        fn transition_is_scale_invariant(
            maxima in prop::collection::vec(1.0f64..10.0, 2..12),
            scale in 1e-3f64..1e3,
        ) {
            let t = synthetic_trace(&maxima);
            let scaled = MonitoringTrace {
                distances: t.distances.iter().map(|d| d.as_ref().map(|d| d * scale)).collect(),
                ..t.clone()
            };
            prop_assert_eq!(detect_transition(&t, 0.12), detect_transition(&scaled, 0.12));
        }
    }
}
