//! Bundled and synthetic datasets, and CSV input/output.
//!
//! Two Old Faithful records are bundled, both as (eruption duration,
//! waiting time) in minutes: the 272-row record that is the default, and
//! the 299-row Azzalini and Bowman (1990) record of August 1985.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::data::{default_names, DataMatrix};
use crate::error::{Error, Result};
use crate::scalar::Real;

const FAITHFUL_CSV: &str = include_str!("../data/faithful.csv");
const GEYSER_AB_CSV: &str = include_str!("../data/geyser_ab.csv");

/// Eruption durations below this many minutes form the minority cluster.
pub const GEYSER_SPLIT_MINUTES: f64 = 3.0;

/// Which bundled Old Faithful record to load.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum GeyserVariant {
    /// 272 rows.
    #[default]
    Faithful,
    /// 299 rows, continuous measurement from August 1 to 15, 1985. Some
    /// nocturnal durations are coded as 2, 3 or 4 minutes.
    AzzaliniBowman,
}

/// The default Old Faithful geyser data, 272 × 2.
pub fn load_geyser<T: Real>() -> DataMatrix<T> {
    load_geyser_variant(GeyserVariant::Faithful)
}

pub fn load_geyser_variant<T: Real>(variant: GeyserVariant) -> DataMatrix<T> {
    let text = match variant {
        GeyserVariant::Faithful => FAITHFUL_CSV,
        GeyserVariant::AzzaliniBowman => GEYSER_AB_CSV,
    };
    read_csv(text.as_bytes(), true).expect("bundled geyser data parses")
}

/// `true` for short eruptions (below [`GEYSER_SPLIT_MINUTES`]).
pub fn geyser_minority_mask<T: Real>(data: &DataMatrix<T>) -> Vec<bool> {
    let split = T::lit(GEYSER_SPLIT_MINUTES);
    data.values().column(0).iter().map(|&e| e < split).collect()
}

/// Parameters of a two-component Gaussian mixture with exact counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ContaminationSpec {
    pub n: usize,
    /// Minority fraction in `[0, 0.5)`.
    pub epsilon: f64,
    pub majority_mean: DVector<f64>,
    pub majority_cov: DMatrix<f64>,
    pub minority_mean: DVector<f64>,
    pub minority_cov: DMatrix<f64>,
    pub seed: u64,
}

impl ContaminationSpec {
    /// Number of majority rows, `⌈(1 − ε) n⌉`.
    pub fn majority_count(&self) -> usize {
        ((1.0 - self.epsilon) * self.n as f64 - 1e-9).ceil() as usize
    }

    pub fn minority_count(&self) -> usize {
        self.n - self.majority_count()
    }

    /// Bivariate layout with the cluster means and covariances of the
    /// default geyser record split at [`GEYSER_SPLIT_MINUTES`]. The minority
    /// mean sits at `majority + separation · (minority − majority)`, so
    /// `separation = 1` matches the real data and smaller values move the
    /// small cluster toward the large one.
    pub fn geyser_like(n: usize, epsilon: f64, separation: f64, seed: u64) -> Self {
        let majority_mean = DVector::from_vec(vec![4.2913, 79.9886]);
        let minority_center = DVector::from_vec(vec![2.0381, 54.4948]);
        let minority_mean = &majority_mean + (minority_center - &majority_mean) * separation;
        Self {
            n,
            epsilon,
            majority_mean,
            majority_cov: DMatrix::from_row_slice(2, 2, &[0.1688, 0.9181, 0.9181, 35.9309]),
            minority_mean,
            minority_cov: DMatrix::from_row_slice(2, 2, &[0.0712, 0.4523, 0.4523, 34.1067]),
            seed,
        }
    }

    /// Direction from the minority mean to the majority mean.
    pub fn shift_direction(&self) -> Vec<f64> {
        (&self.majority_mean - &self.minority_mean).as_slice().to_vec()
    }

    fn validate(&self) -> Result<usize> {
        let p = self.majority_mean.len();
        if p == 0
            || self.minority_mean.len() != p
            || self.majority_cov.shape() != (p, p)
            || self.minority_cov.shape() != (p, p)
        {
            return Err(Error::Size("inconsistent mixture dimensions".into()));
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(Error::InvalidArgument(format!(
                "contamination fraction must lie in [0, 0.5), got {}",
                self.epsilon
            )));
        }
        if self.epsilon > 0.0 && self.minority_count() == 0 {
            return Err(Error::InvalidArgument(format!(
                "epsilon = {} yields no minority rows for n = {}",
                self.epsilon, self.n
            )));
        }
        Ok(p)
    }
}

fn cholesky_lower(cov: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (cov - cov.transpose()).amax() <= 1e-12 * cov.amax().max(1.0);
    match cov.clone().cholesky() {
        Some(c) if sym => Ok(c.l()),
        _ => Err(Error::InvalidArgument(format!(
            "{what} covariance is not symmetric positive definite"
        ))),
    }
}

/// Samples the mixture: majority rows first, then minority rows. The mask is
/// `true` on minority rows.
pub fn generate_two_cluster<T: Real>(spec: &ContaminationSpec) -> Result<(DataMatrix<T>, Vec<bool>)> {
    let p = spec.validate()?;
    let l_major = cholesky_lower(&spec.majority_cov, "majority")?;
    let l_minor = cholesky_lower(&spec.minority_cov, "minority")?;
    let n_major = spec.majority_count();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = DMatrix::<T>::zeros(spec.n, p);
    let mut mask = vec![false; spec.n];
    for i in 0..spec.n {
        let (mean, l) = if i < n_major {
            (&spec.majority_mean, &l_major)
        } else {
            mask[i] = true;
            (&spec.minority_mean, &l_minor)
        };
        let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let y: DVector<f64> = mean + l * z;
        for j in 0..p {
            values[(i, j)] = T::lit(y[j]);
        }
    }
    Ok((DataMatrix::from_matrix(values)?, mask))
}

/// Unimodal right-skewed cloud: standard normal noise orthogonal to
/// `skew_direction` and a centered unit exponential along it (skewness 2).
pub fn generate_skewed<T: Real>(
    n: usize,
    p: usize,
    skew_direction: &[f64],
    seed: u64,
) -> Result<DataMatrix<T>> {
    if p < 2 || skew_direction.len() != p {
        return Err(Error::Size(format!(
            "need p ≥ 2 and a length-p direction, got p = {p}, direction of length {}",
            skew_direction.len()
        )));
    }
    let u = DVector::from_column_slice(skew_direction);
    let norm = u.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidArgument("skew direction must be a nonzero vector".into()));
    }
    let u = u / norm;
    let projector = DMatrix::identity(p, p) - &u * u.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = DMatrix::<T>::zeros(n, p);
    for i in 0..n {
        let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let e: f64 = Exp1.sample(&mut rng);
        let y = &projector * z + &u * (e - 1.0);
        for j in 0..p {
            values[(i, j)] = T::lit(y[j]);
        }
    }
    DataMatrix::from_matrix(values)
}

/// Parses comma-separated numeric data. With `has_header` the first row
/// supplies column names, otherwise columns are named `x1..xp`. Error
/// positions are 1-based file lines and columns.
pub fn read_csv<T: Real, R: Read>(reader: R, has_header: bool) -> Result<DataMatrix<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut names: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<T>> = Vec::new();
    let mut width: Option<usize> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            column: 0,
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if has_header && names.is_none() {
            names = Some(rec.iter().map(str::to_owned).collect());
            width = Some(rec.len());
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Parse {
                line,
                column: rec.len().min(w) + 1,
                message: format!("expected {w} fields, found {}", rec.len()),
            });
        }
        let mut row = Vec::with_capacity(w);
        for (j, cell) in rec.iter().enumerate() {
            let v: T = cell.parse().map_err(|_| Error::Parse {
                line,
                column: j + 1,
                message: format!("non-numeric value {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: j + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 0,
            message: "no data rows".into(),
        });
    }
    let p = rows[0].len();
    let values = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    DataMatrix::new(values, names.unwrap_or_else(|| default_names(p)))
}

pub fn load_csv<T: Real>(path: &Path, has_header: bool) -> Result<DataMatrix<T>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, has_header)
}

/// Writes the data with a header row. Values use the shortest
/// representation that parses back to the same number.
pub fn write_csv<T: Real, W: Write>(data: &DataMatrix<T>, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io {
        path: "<csv output>".into(),
        source: std::io::Error::other(e),
    };
    wtr.write_record(data.column_names()).map_err(io)?;
    for i in 0..data.n() {
        wtr.write_record(data.values().row(i).iter().map(|v| v.to_string()))
            .map_err(io)?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "<csv output>".into(),
        source,
    })
}
