//! ρ-function families, their derivatives and weights, consistency
//! constants, breakdown values and the bisquare tuning solver.
//!
//! Every function takes the *unsquared* statistical distance `d`.
//!
//! * Bisquare with cutoff `c`:
//!   `ρ(d) = d²/2 − d⁴/(2c²) + d⁶/(6c⁴)` for `d ≤ c`, `c²/6` beyond.
//! * Custom hard-redescending family with flatness `a ≥ 0` in dimension `p`:
//!   quadratic `d²/2` up to `√p`, a concave quadratic bridge up to
//!   `(1+a)√p`, and the constant `p(1+a)/2` beyond.
//!
//! With `a = 0` the custom family degenerates to the truncated quadratic
//! `min(d²/2, p/2)`; its ψ jumps from `√p` to `0` at `d = √p`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoFamily {
    Bisquare,
    CustomA,
}

impl std::fmt::Display for RhoFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RhoFamily::Bisquare => f.write_str("bisquare"),
            RhoFamily::CustomA => f.write_str("custom"),
        }
    }
}

/// How to evaluate `K = E[ρ(‖Z‖)]` for standard normal `Z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KMethod {
    Quadrature,
    MonteCarlo { n_samples: usize, seed: u64 },
}

/// Minimum sample count accepted by [`KMethod::MonteCarlo`].
pub const MIN_MONTE_CARLO_SAMPLES: usize = 10_000;

/// A ρ-family instance bound to a dimension, carrying the constant `K` of
/// the S-estimator constraint `(1/n) Σ ρ(dᵢ) = K`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RhoSpec<T> {
    family: RhoFamily,
    p: usize,
    param: T,
    k_const: T,
}

fn validate_param<T: Real>(family: RhoFamily, p: usize, param: T) -> Result<()> {
    if p == 0 {
        return Err(Error::InvalidSpec("dimension p must be at least 1".into()));
    }
    if !param.is_finite() {
        return Err(Error::InvalidSpec(format!("non-finite parameter {param}")));
    }
    match family {
        RhoFamily::Bisquare if param <= T::zero() => Err(Error::InvalidSpec(format!(
            "bisquare cutoff must be positive, got {param}"
        ))),
        RhoFamily::CustomA if param < T::zero() => Err(Error::InvalidSpec(format!(
            "custom flatness parameter a must be nonnegative, got {param}"
        ))),
        _ => Ok(()),
    }
}

fn rho_max_of<T: Real>(family: RhoFamily, p: usize, param: T) -> T {
    match family {
        RhoFamily::Bisquare => param * param / T::lit(6.0),
        RhoFamily::CustomA => T::from_count(p) * (T::one() + param) / T::lit(2.0),
    }
}

fn endpoint_of<T: Real>(family: RhoFamily, p: usize, param: T) -> T {
    match family {
        RhoFamily::Bisquare => param,
        RhoFamily::CustomA => (T::one() + param) * T::from_count(p).sqrt(),
    }
}

fn rho_raw<T: Real>(family: RhoFamily, p: usize, param: T, d: T) -> T {
    let half = T::lit(0.5);
    match family {
        RhoFamily::Bisquare => {
            let c = param;
            if d <= c {
                let u = (d / c) * (d / c);
                // d²/2 (1 − u + u²/3)
                half * d * d * (T::one() - u + u * u / T::lit(3.0))
            } else {
                c * c / T::lit(6.0)
            }
        }
        RhoFamily::CustomA => {
            let a = param;
            let pf = T::from_count(p);
            let s = pf.sqrt();
            if d <= s {
                half * d * d
            } else if d <= (T::one() + a) * s {
                // Clamped: rounding can push the end of this branch a few ulps past the maximum.
                (((T::one() + a) * (T::lit(2.0) * s * d - pf) - d * d) / (T::lit(2.0) * a))
                    .min(pf * (T::one() + a) * half)
            } else {
                pf * (T::one() + a) * half
            }
        }
    }
}

// Defined through the weight so that ψ(d) = d·w(d) holds exactly in floating point.
fn psi_raw<T: Real>(family: RhoFamily, p: usize, param: T, d: T) -> T {
    d * weight_raw(family, p, param, d)
}

fn weight_raw<T: Real>(family: RhoFamily, p: usize, param: T, d: T) -> T {
    match family {
        RhoFamily::Bisquare => {
            if d <= param {
                let v = T::one() - (d / param) * (d / param);
                v * v
            } else {
                T::zero()
            }
        }
        RhoFamily::CustomA => {
            let a = param;
            let s = T::from_count(p).sqrt();
            if d <= s {
                T::one()
            } else if d <= (T::one() + a) * s {
                (s * (T::one() + a) - d) / (a * d)
            } else {
                T::zero()
            }
        }
    }
}

fn check_distance<T: Real>(d: T) -> Result<()> {
    if d >= T::zero() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "distance must be nonnegative, got {d}"
        )))
    }
}

impl<T: Real> RhoSpec<T> {
    /// Builds a spec with an explicit constant `K`, which must satisfy
    /// `0 < K < ρ_max`.
    pub fn new(family: RhoFamily, p: usize, param: T, k_const: T) -> Result<Self> {
        validate_param(family, p, param)?;
        let max = rho_max_of(family, p, param);
        if !(k_const > T::zero() && k_const < max) {
            return Err(Error::InvalidSpec(format!(
                "constant K = {k_const} must lie in (0, {max})"
            )));
        }
        Ok(Self {
            family,
            p,
            param,
            k_const,
        })
    }

    /// Spec with the Gaussian-consistent constant `K = E[ρ(‖Z‖)]`.
    pub fn consistent(family: RhoFamily, p: usize, param: T) -> Result<Self> {
        let k = consistency_constant(family, p, param, KMethod::Quadrature)?;
        Self::new(family, p, param, k)
    }

    /// Custom ρ with flatness `a` and consistent `K`.
    pub fn custom(p: usize, a: T) -> Result<Self> {
        Self::consistent(RhoFamily::CustomA, p, a)
    }

    /// Bisquare tuned to breakdown value `bdp`. `K` is consistent, which for
    /// the tuned cutoff equals `bdp · ρ_max`.
    pub fn bisquare_for_bdp(p: usize, bdp: T) -> Result<Self> {
        let c = tune_bisquare_for_bdp(p, bdp)?;
        let k = T::lit(bdp.as_f64() * c.as_f64() * c.as_f64() / 6.0);
        Self::new(RhoFamily::Bisquare, p, c, k)
    }

    /// Bisquare tuned for Gaussian location efficiency `eff`, with a
    /// consistent `K`.
    pub fn bisquare_for_efficiency(p: usize, eff: T) -> Result<Self> {
        let c = tune_bisquare_for_efficiency(p, eff)?;
        Self::consistent(RhoFamily::Bisquare, p, c)
    }

    /// The inconsistent alternative `K = ρ_max / 2` (breakdown value 1/2).
    pub fn half_max(family: RhoFamily, p: usize, param: T) -> Result<Self> {
        validate_param(family, p, param)?;
        Self::new(family, p, param, rho_max_of(family, p, param) / T::lit(2.0))
    }

    /// Same family, dimension and parameter with a different `K`.
    pub fn with_k(&self, k_const: T) -> Result<Self> {
        Self::new(self.family, self.p, self.param, k_const)
    }

    pub fn family(&self) -> RhoFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    /// Cutoff `c` (bisquare) or flatness `a` (custom).
    pub fn param(&self) -> T {
        self.param
    }

    pub fn k_const(&self) -> T {
        self.k_const
    }

    /// Supremum of ρ.
    pub fn rho_max(&self) -> T {
        rho_max_of(self.family, self.p, self.param)
    }

    /// Distance beyond which ρ is constant and ψ, w vanish.
    pub fn rejection_point(&self) -> T {
        endpoint_of(self.family, self.p, self.param)
    }

    pub fn rho(&self, d: T) -> Result<T> {
        check_distance(d)?;
        Ok(self.rho_unchecked(d))
    }

    pub fn psi(&self, d: T) -> Result<T> {
        check_distance(d)?;
        Ok(self.psi_unchecked(d))
    }

    /// `w(d) = ψ(d)/d`, with `w(0) = 1`.
    pub fn weight(&self, d: T) -> Result<T> {
        check_distance(d)?;
        Ok(self.weight_unchecked(d))
    }

    #[inline]
    pub(crate) fn rho_unchecked(&self, d: T) -> T {
        rho_raw(self.family, self.p, self.param, d)
    }

    #[inline]
    pub(crate) fn psi_unchecked(&self, d: T) -> T {
        psi_raw(self.family, self.p, self.param, d)
    }

    #[inline]
    pub(crate) fn weight_unchecked(&self, d: T) -> T {
        weight_raw(self.family, self.p, self.param, d)
    }

    /// `min(K/ρ_max, 1 − K/ρ_max)`.
    pub fn breakdown_value(&self) -> Result<T> {
        let max = self.rho_max();
        if !(self.k_const > T::zero() && self.k_const < max) {
            return Err(Error::InvalidSpec(format!(
                "constant K = {} must lie in (0, {max})",
                self.k_const
            )));
        }
        let r = self.k_const / max;
        Ok(r.min(T::one() - r))
    }

    /// Short human-readable label, e.g. `bisquare_c2.6608` or `custom_a0.2`.
    pub fn label(&self) -> String {
        match self.family {
            RhoFamily::Bisquare => format!("bisquare_c{:.4}", self.param.as_f64()),
            RhoFamily::CustomA => format!("custom_a{}", self.param.as_f64()),
        }
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of `E[ρ(‖Z‖)]` from `n_samples` standard normal
/// `p`-vectors drawn from a ChaCha8 stream seeded with `seed`.
pub fn monte_carlo_expectation(
    family: RhoFamily,
    p: usize,
    param: f64,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    validate_param(family, p, param)?;
    if n_samples < MIN_MONTE_CARLO_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "Monte Carlo needs at least {MIN_MONTE_CARLO_SAMPLES} samples, got {n_samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let r2: f64 = (0..p)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * z
            })
            .sum();
        let v = rho_raw(family, p, param, r2.sqrt());
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}

fn quadrature_expectation(family: RhoFamily, p: usize, param: f64) -> Result<f64> {
    let pf = p as f64;
    let endpoint = endpoint_of(family, p, param);
    let max = rho_max_of(family, p, param);
    // The χ_p density is below 1e-300 beyond this radius.
    let horizon = pf.sqrt() + 40.0;
    let mut knots = vec![0.0];
    if family == RhoFamily::CustomA && pf.sqrt() < horizon {
        knots.push(pf.sqrt());
    }
    if endpoint > *knots.last().expect("nonempty") {
        knots.push(endpoint.min(horizon));
    }
    let integrand = |r: f64| rho_raw(family, p, param, r) * numeric::chi_density(pf, r);
    let mut body = 0.0;
    for w in knots.windows(2) {
        // Pre-split each segment so the first Kronrod pass sees the bulk.
        let pieces = 8;
        let step = (w[1] - w[0]) / pieces as f64;
        for i in 0..pieces {
            let lo = w[0] + step * i as f64;
            let hi = if i + 1 == pieces { w[1] } else { lo + step };
            body += numeric::integrate(integrand, lo, hi, 1e-15, 1e-13, 400)?.value;
        }
    }
    let tail = max * numeric::chi2_sf(pf, endpoint * endpoint);
    Ok(body + tail)
}

/// `K = E[ρ(‖Z‖)]` for `Z ~ N(0, I_p)`.
///
/// Quadrature integrates ρ against the χ_p density on `[0, endpoint]` and adds
/// the exact tail `ρ_max · P(χ²_p > endpoint²)`.
pub fn consistency_constant<T: Real>(
    family: RhoFamily,
    p: usize,
    param: T,
    method: KMethod,
) -> Result<T> {
    validate_param(family, p, param)?;
    let param = param.as_f64();
    let k = match method {
        KMethod::Quadrature => quadrature_expectation(family, p, param)?,
        KMethod::MonteCarlo { n_samples, seed } => {
            monte_carlo_expectation(family, p, param, n_samples, seed)?.mean
        }
    };
    Ok(T::lit(k))
}

/// Bisquare cutoff `c` such that `E[ρ_c(‖Z‖)] = bdp · c²/6` in dimension `p`.
/// Larger `bdp` gives smaller `c`.
pub fn tune_bisquare_for_bdp<T: Real>(p: usize, bdp: T) -> Result<T> {
    if p == 0 {
        return Err(Error::InvalidSpec("dimension p must be at least 1".into()));
    }
    let bdp = bdp.as_f64();
    if !(bdp > 0.0 && bdp <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "breakdown value must lie in (0, 0.5], got {bdp}"
        )));
    }
    let mut failure = None;
    let mut excess = |c: f64| match quadrature_expectation(RhoFamily::Bisquare, p, c) {
        Ok(k) => k / (c * c / 6.0) - bdp,
        Err(e) => {
            failure.get_or_insert(e);
            f64::NAN
        }
    };
    // excess is decreasing in c: → 1 − bdp as c → 0, → −bdp as c → ∞.
    let mut lo = 1.0;
    let mut hi = 1.0;
    let mut tries = 0;
    while excess(lo) <= 0.0 {
        lo /= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::Numeric(format!(
                "could not bracket bisquare cutoff for p = {p}, bdp = {bdp} from below"
            )));
        }
    }
    tries = 0;
    while excess(hi) >= 0.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::Numeric(format!(
                "could not bracket bisquare cutoff for p = {p}, bdp = {bdp} from above"
            )));
        }
    }
    let c = numeric::bisect(&mut excess, lo, hi, 1e-14, 200)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(T::lit(c))
}

/// Gaussian efficiency of the bisquare location M-estimator with cutoff `c`
/// in dimension `p`: `β² / α` with `α = E[ψ²]/p` and
/// `β = E[(1 − 1/p) w + ψ'/p]`, expectations over `‖Z‖ ~ χ_p`.
pub fn bisquare_location_efficiency(p: usize, c: f64) -> Result<f64> {
    validate_param(RhoFamily::Bisquare, p, c)?;
    let pf = p as f64;
    let alpha_f = |r: f64| {
        let u = (r / c) * (r / c);
        let psi = r * (1.0 - u) * (1.0 - u);
        psi * psi * numeric::chi_density(pf, r)
    };
    let beta_f = |r: f64| {
        let u = (r / c) * (r / c);
        let w = (1.0 - u) * (1.0 - u);
        let dpsi = (1.0 - u) * (1.0 - 5.0 * u);
        ((1.0 - 1.0 / pf) * w + dpsi / pf) * numeric::chi_density(pf, r)
    };
    let upper = c.min(pf.sqrt() + 40.0);
    let alpha = numeric::integrate(alpha_f, 0.0, upper, 1e-15, 1e-13, 400)?.value / pf;
    let beta = numeric::integrate(beta_f, 0.0, upper, 1e-15, 1e-13, 400)?.value;
    Ok(beta * beta / alpha)
}

/// Bisquare cutoff giving Gaussian location efficiency `eff` in dimension `p`.
/// Larger `eff` gives larger `c`.
pub fn tune_bisquare_for_efficiency<T: Real>(p: usize, eff: T) -> Result<T> {
    if p == 0 {
        return Err(Error::InvalidSpec("dimension p must be at least 1".into()));
    }
    let eff = eff.as_f64();
    if !(eff > 0.0 && eff < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "efficiency must lie in (0, 1), got {eff}"
        )));
    }
    let mut failure = None;
    let mut excess = |c: f64| match bisquare_location_efficiency(p, c) {
        Ok(e) => e - eff,
        Err(e) => {
            failure.get_or_insert(e);
            f64::NAN
        }
    };
    let mut lo = 1.0;
    let mut hi = 1.0;
    let mut tries = 0;
    while excess(lo) >= 0.0 {
        lo /= 2.0;
        tries += 1;
        if tries > 30 {
            return Err(Error::Numeric(format!(
                "could not bracket bisquare cutoff for p = {p}, efficiency = {eff} from below"
            )));
        }
    }
    tries = 0;
    while excess(hi) <= 0.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 30 {
            return Err(Error::Numeric(format!(
                "could not bracket bisquare cutoff for p = {p}, efficiency = {eff} from above"
            )));
        }
    }
    let c = numeric::bisect(&mut excess, lo, hi, 1e-14, 200)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(T::lit(c))
}
