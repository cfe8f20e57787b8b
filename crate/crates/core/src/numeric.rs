//! Special functions, quadrature and one-dimensional root finding (all `f64`).

use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

fn chi_squared(dof: f64) -> ChiSquared {
    ChiSquared::new(dof).expect("positive degrees of freedom")
}

/// P(χ²_dof ≤ x).
pub fn chi2_cdf(dof: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    chi_squared(dof).cdf(x)
}

/// P(χ²_dof > x), computed without cancellation.
pub fn chi2_sf(dof: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    chi_squared(dof).sf(x)
}

/// Quantile of χ²_dof at probability `q` in (0, 1).
pub fn chi2_quantile(dof: f64, q: f64) -> f64 {
    let dist = chi_squared(dof);
    let mut x = dist.inverse_cdf(q);
    // Newton polish; the library inverse is only accurate to ~1e-9.
    for _ in 0..4 {
        let density = dist.pdf(x);
        if !(density > 0.0) {
            break;
        }
        let next = x - (dist.cdf(x) - q) / density;
        if !(next > 0.0) || next == x {
            break;
        }
        x = next;
    }
    x
}

/// Density of the χ distribution with `dof` degrees of freedom, i.e. of ‖Z‖
/// for a standard `dof`-variate normal Z.
pub fn chi_density(dof: f64, r: f64) -> f64 {
    if r < 0.0 {
        return 0.0;
    }
    if r == 0.0 {
        return if dof == 1.0 {
            (2.0 / std::f64::consts::PI).sqrt()
        } else if dof < 1.0 {
            f64::INFINITY
        } else {
            0.0
        };
    }
    let half = dof / 2.0;
    let log_norm = (half - 1.0) * std::f64::consts::LN_2 + ln_gamma(half);
    ((dof - 1.0) * r.ln() - r * r / 2.0 - log_norm).exp()
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Result of an adaptive integration.
#[derive(Clone, Copy, Debug)]
pub struct Quadrature {
    pub value: f64,
    pub abs_error: f64,
    pub intervals: usize,
}

/// Globally adaptive Gauss-Kronrod integration of `f` over the finite interval
/// `[a, b]`. Fails when the error estimate does not fall below
/// `max(abs_tol, rel_tol·|I|)` within `max_intervals` subdivisions.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Result<Quadrature> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numeric(format!(
            "integration bounds must be finite, got [{a}, {b}]"
        )));
    }
    if a == b {
        return Ok(Quadrature {
            value: 0.0,
            abs_error: 0.0,
            intervals: 0,
        });
    }
    let (v, e) = gk15(&f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    loop {
        let total: f64 = pieces.iter().map(|s| s.2).sum();
        let err: f64 = pieces.iter().map(|s| s.3).sum();
        if !total.is_finite() {
            return Err(Error::Numeric(format!(
                "integrand produced a non-finite value on [{a}, {b}]"
            )));
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(Quadrature {
                value: total,
                abs_error: err,
                intervals: pieces.len(),
            });
        }
        if pieces.len() >= max_intervals {
            return Err(Error::Numeric(format!(
                "quadrature on [{a}, {b}] did not converge: estimate {total:e}, \
                 error {err:e} after {} intervals",
                pieces.len()
            )));
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .expect("nonempty");
        let (lo, hi, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
}

/// Bisection for a root of `f` on `[lo, hi]`, where `f(lo)` and `f(hi)` have
/// opposite signs. Stops once the bracket is narrower than `x_tol`.
pub fn bisect<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    x_tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Numeric(format!(
            "root not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}"
        )));
    }
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= x_tol || mid == lo || mid == hi {
            return Ok(mid);
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
