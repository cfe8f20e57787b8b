//! Principal components, tolerance ellipses and weight tables: the point
//! sets behind the usual diagnostic plots.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::estimation::{linalg, FitResult, Method};
use crate::numeric;
use crate::rho::RhoSpec;
use crate::scalar::Real;

/// Default coverage of [`tolerance_ellipse`].
pub const DEFAULT_ELLIPSE_LEVEL: f64 = 0.975;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult<T: Real> {
    pub mean: DVector<T>,
    /// `p × k`, orthonormal columns in decreasing order of variance.
    pub loadings: DMatrix<T>,
    /// `n × k` coordinates of the centered data.
    pub scores: DMatrix<T>,
    /// Variances of the first `k` components.
    pub variances: DVector<T>,
    /// Share of the total variance carried by each component.
    pub explained_variance_ratio: DVector<T>,
}

/// Classical PCA from the eigendecomposition of the sample covariance.
///
/// Each loading vector is signed so that its entry of largest magnitude is
/// positive. Fails when `k` exceeds the numerical rank of the centered data.
pub fn classical_pca<T: Real>(data: &DataMatrix<T>, k: usize) -> Result<PcaResult<T>> {
    let (n, p) = (data.n(), data.p());
    if k == 0 || k > p {
        return Err(Error::InvalidArgument(format!(
            "number of components must lie in [1, {p}], got {k}"
        )));
    }
    let all: Vec<usize> = (0..n).collect();
    let (mean, cov) = linalg::mean_cov(data.values(), &all);
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .as_f64()
            .total_cmp(&eig.eigenvalues[a].as_f64())
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]].max(T::zero());
    let tol = top * T::from_count(n.max(p)) * T::machine_eps() * T::lit(10.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > tol)
        .count();
    if k > rank {
        return Err(Error::RankDeficient(format!(
            "requested {k} components but the data have rank {rank}"
        )));
    }
    let total = (0..p).fold(T::zero(), |acc, i| acc + eig.eigenvalues[i].max(T::zero()));
    let mut loadings = DMatrix::zeros(p, k);
    let mut variances = DVector::zeros(k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let lead = v
            .iter()
            .fold(T::zero(), |best, &x| if x.abs() > best.abs() { x } else { best });
        if lead < T::zero() {
            v = -v;
        }
        loadings.set_column(c, &v);
        variances[c] = eig.eigenvalues[i];
    }
    let mut centered = data.values().clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let scores = &centered * &loadings;
    let explained_variance_ratio = variances.map(|v| v / total);
    Ok(PcaResult {
        mean,
        loadings,
        scores,
        variances,
        explained_variance_ratio,
    })
}

/// Boundary of `{y : (y − T)' C⁻¹ (y − T) = χ²_{2, level}}` at `n_points`
/// angles spaced uniformly over a full turn (the first point is not
/// repeated at the end).
pub fn tolerance_ellipse<T: Real>(
    location: &DVector<T>,
    scatter: &DMatrix<T>,
    level: f64,
    n_points: usize,
) -> Result<Vec<[T; 2]>> {
    if location.len() != 2 || scatter.shape() != (2, 2) {
        return Err(Error::UnsupportedDimension {
            expected: 2,
            got: location.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "ellipse level must lie in (0, 1), got {level}"
        )));
    }
    if n_points < 3 {
        return Err(Error::InvalidArgument(format!(
            "an ellipse needs at least 3 points, got {n_points}"
        )));
    }
    let chol = linalg::factor(scatter)?;
    let l = chol.l();
    let r = T::lit(numeric::chi2_quantile(2.0, level).sqrt());
    let step = T::two_pi() / T::from_count(n_points);
    Ok((0..n_points)
        .map(|k| {
            let theta = step * T::from_count(k);
            let u = DVector::from_vec(vec![theta.cos() * r, theta.sin() * r]);
            let y = location + &l * u;
            [y[0], y[1]]
        })
        .collect())
}

/// [`tolerance_ellipse`] around a fitted location and scatter.
pub fn fit_ellipse<T: Real>(fit: &FitResult<T>, level: f64, n_points: usize) -> Result<Vec<[T; 2]>> {
    tolerance_ellipse(&fit.location, &fit.scatter, level, n_points)
}

/// Per-observation MCD distance and weight next to the weights that each
/// ρ-function would assign at that distance.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTable<T: Real> {
    pub labels: Vec<String>,
    pub mcd_distance: DVector<T>,
    pub mcd_weight: DVector<T>,
    /// One column per label.
    pub weights: DMatrix<T>,
}

impl<T: Real> WeightTable<T> {
    /// Columns `obs_index,mcd_distance,mcd_weight,<labels…>`, observations
    /// numbered from 0.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io {
            path: "<weight table output>".into(),
            source: e,
        };
        write!(out, "obs_index,mcd_distance,mcd_weight").map_err(io)?;
        for l in &self.labels {
            write!(out, ",{l}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
        for i in 0..self.mcd_distance.len() {
            write!(out, "{i},{},{}", self.mcd_distance[i], self.mcd_weight[i]).map_err(io)?;
            for j in 0..self.labels.len() {
                write!(out, ",{}", self.weights[(i, j)]).map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
        Ok(())
    }
}

/// Evaluates `w(d)` of every spec at the distances of an MCD fit.
pub fn weight_comparison<T: Real>(
    data: &DataMatrix<T>,
    mcd_fit: &FitResult<T>,
    specs: &[(String, RhoSpec<T>)],
) -> Result<WeightTable<T>> {
    if mcd_fit.method != Method::MCD {
        return Err(Error::InvalidArgument(format!(
            "weight comparison needs an MCD fit, got {}",
            mcd_fit.method
        )));
    }
    let p = data.p();
    if mcd_fit.dim() != p || mcd_fit.distances.len() != data.n() {
        return Err(Error::Size("MCD fit does not match the data".into()));
    }
    if let Some((label, s)) = specs.iter().find(|(_, s)| s.dim() != p) {
        return Err(Error::InvalidArgument(format!(
            "{label} is defined for p = {}, the data have p = {p}",
            s.dim()
        )));
    }
    let n = data.n();
    let d = &mcd_fit.distances;
    let weights = DMatrix::from_fn(n, specs.len(), |i, j| specs[j].1.weight_unchecked(d[i]));
    Ok(WeightTable {
        labels: specs.iter().map(|(l, _)| l.clone()).collect(),
        mcd_distance: d.clone(),
        mcd_weight: mcd_fit.weights.clone(),
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{geyser_minority_mask, load_geyser};
    use crate::estimation::{h_for_bdp, mcd_estimate, McdConfig, Starts, SubsetPool};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> DataMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DataMatrix::from_matrix(DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng)))
            .unwrap()
    }

    fn shoelace(points: &[[f64; 2]]) -> f64 {
        let m = points.len();
        (0..m)
            .map(|i| {
                let (a, b) = (points[i], points[(i + 1) % m]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            / 2.0
    }

    #[test]
    fn pca_on_a_line() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0]).collect();
        let pca = classical_pca(&DataMatrix::from_rows(&rows).unwrap(), 1).unwrap();
        assert!((pca.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        assert!(pca.loadings[(1, 0)] > 0.0);
        assert!(classical_pca(&DataMatrix::from_rows(&rows).unwrap(), 2).is_err());
    }

    #[test]
    fn pca_isotropic() {
        let pca = classical_pca(&gaussian(2000, 2, 17), 2).unwrap();
        for r in pca.explained_variance_ratio.iter() {
            assert!((r - 0.5).abs() < 0.1, "{r}");
        }
    }

    #[test]
    fn pca_known_spectrum() {
        // Covariance eigenvalues 4, 1, 0 in a rotated frame.
        let a = 3f64.sqrt();
        let b = a / 2.0;
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 2.0, 2.0, 1.0, -2.0, 2.0, -2.0, 1.0]) / 3.0;
        let rows: Vec<Vec<f64>> = [[a, b], [a, -b], [-a, b], [-a, -b]]
            .iter()
            .map(|&[u, v]| (&r * DVector::from_vec(vec![u, v, 0.0])).as_slice().to_vec())
            .collect();
        let data = DataMatrix::from_rows(&rows).unwrap();
        let pca = classical_pca(&data, 2).unwrap();
        assert!((pca.explained_variance_ratio[0] - 0.8).abs() < 1e-12);
        assert!((pca.explained_variance_ratio[1] - 0.2).abs() < 1e-12);
        assert!((pca.variances[0] - 4.0).abs() < 1e-12);
        assert!(classical_pca(&data, 3).is_err());
    }

    #[test]
    fn pca_reconstruction_and_orthonormality() {
        let data = gaussian(50, 4, 2);
        let pca = classical_pca(&data, 4).unwrap();
        let gram = pca.loadings.transpose() * &pca.loadings;
        assert!((gram - DMatrix::identity(4, 4)).amax() < 1e-10);
        let mut back = &pca.scores * pca.loadings.transpose();
        for mut row in back.row_iter_mut() {
            row += pca.mean.transpose();
        }
        assert!((back - data.values()).amax() < 1e-8);
        let r = &pca.explained_variance_ratio;
        assert!(r.iter().zip(r.iter().skip(1)).all(|(a, b)| a >= b));
        assert!(r.sum() <= 1.0 + 1e-12);
    }

    #[test]
    fn unit_circle() {
        let level = numeric::chi2_cdf(2.0, 1.0);
        let pts = tolerance_ellipse::<f64>(&DVector::zeros(2), &DMatrix::identity(2, 2), level, 64)
            .unwrap();
        assert_eq!(pts.len(), 64);
        for [x, y] in pts {
            assert!(((x * x + y * y).sqrt() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn ellipse_points_lie_on_the_level_set() {
        let t = DVector::from_vec(vec![1.0, -2.0]);
        let c = DMatrix::from_row_slice(2, 2, &[3.0, 1.2, 1.2, 2.0]);
        let pts = tolerance_ellipse(&t, &c, 0.9, 100).unwrap();
        let rows: Vec<Vec<f64>> = pts.iter().map(|p| p.to_vec()).collect();
        let d = linalg::statistical_distances(&DataMatrix::from_rows(&rows).unwrap(), &t, &c).unwrap();
        let r = numeric::chi2_quantile(2.0, 0.9).sqrt();
        assert!(d.iter().all(|v| (v - r).abs() < 1e-10));
    }

    #[test]
    fn ellipse_area() {
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let chi = numeric::chi2_quantile(2.0, DEFAULT_ELLIPSE_LEVEL);
        let m = 20_000;
        let pts = tolerance_ellipse(&DVector::zeros(2), &c, DEFAULT_ELLIPSE_LEVEL, m).unwrap();
        let exact = std::f64::consts::PI * 2.0 * chi;
        let polygon = 2.0 * chi * m as f64 / 2.0 * (std::f64::consts::TAU / m as f64).sin();
        assert!((shoelace(&pts) - polygon).abs() < 1e-9 * exact);
        assert!((shoelace(&pts) - exact).abs() < 1e-7 * exact);
    }

    #[test]
    fn ellipse_rejects_other_dimensions() {
        assert!(matches!(
            tolerance_ellipse(&DVector::<f64>::zeros(3), &DMatrix::identity(3, 3), 0.5, 10),
            Err(Error::UnsupportedDimension { expected: 2, got: 3 })
        ));
        assert!(tolerance_ellipse(&DVector::<f64>::zeros(2), &DMatrix::identity(2, 2), 1.0, 10).is_err());
    }

    fn geyser_mcd() -> (DataMatrix<f64>, FitResult<f64>) {
        let g = load_geyser::<f64>();
        let starts = Starts::Subsets(SubsetPool::elemental(g.n(), 2, 300, 1).unwrap());
        let fit = mcd_estimate(&g, h_for_bdp(g.n(), 2, 0.5), &starts, &McdConfig::default()).unwrap();
        (g, fit)
    }

    #[test]
    fn weight_table_extremes_and_layout() {
        let (g, fit) = geyser_mcd();
        let specs = vec![
            ("bisquare".to_string(), RhoSpec::bisquare_for_bdp(2, 0.5).unwrap()),
            ("custom".to_string(), RhoSpec::custom(2, 0.2).unwrap()),
        ];
        let mut fit = fit;
        fit.distances[0] = 0.0;
        fit.distances[1] = 100.0;
        let table = weight_comparison(&g, &fit, &specs).unwrap();
        assert!(table.weights.row(0).iter().all(|&w| w == 1.0));
        assert!(table.weights.row(1).iter().all(|&w| w == 0.0));
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("obs_index,mcd_distance,mcd_weight,bisquare,custom\n"));
        assert_eq!(text.lines().count(), g.n() + 1);
    }

    #[test]
    fn custom_weights_redescend_faster_between_clusters() {
        let (g, fit) = geyser_mcd();
        let specs = vec![
            ("bisquare".to_string(), RhoSpec::bisquare_for_bdp(2, 0.5).unwrap()),
            ("custom".to_string(), RhoSpec::custom(2, 0.2).unwrap()),
        ];
        let table = weight_comparison(&g, &fit, &specs).unwrap();
        // Eruptions between the two modes.
        let between: Vec<usize> = (0..g.n())
            .filter(|&i| (2.5..=3.5).contains(&g.values()[(i, 0)]))
            .collect();
        assert!(between.len() >= 5);
        let mean = |j: usize| between.iter().map(|&i| table.weights[(i, j)]).sum::<f64>() / between.len() as f64;
        assert!(mean(0) > mean(1), "{} vs {}", mean(0), mean(1));
        let minority = geyser_minority_mask(&g);
        assert!((0..g.n()).filter(|&i| minority[i]).all(|i| table.mcd_weight[i] == 0.0));
    }

    #[test]
    fn weight_comparison_validates() {
        let (g, fit) = geyser_mcd();
        let bad = vec![("p3".to_string(), RhoSpec::custom(3, 0.2).unwrap())];
        assert!(weight_comparison(&g, &fit, &bad).is_err());
        let mut not_mcd = fit.clone();
        not_mcd.method = Method::S;
        assert!(weight_comparison(&g, &not_mcd, &[]).is_err());
    }

    proptest! {
        #[test]
        fn pca_ratios_rotation_invariant(angle in 0.0f64..std::f64::consts::TAU, seed in 0u64..50) {
            let data = gaussian(40, 2, seed);
            let (s, c) = angle.sin_cos();
            let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            let turned = data.affine_map(&rot, &DVector::zeros(2)).unwrap();
            let a = classical_pca(&data, 2).unwrap().explained_variance_ratio;
            let b = classical_pca(&turned, 2).unwrap().explained_variance_ratio;
            prop_assert!((a - b).amax() < 1e-10);
        }
    }
}
