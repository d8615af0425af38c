//! Error distributions and the simulation truths.
//!
//! The estimator only touches an error distribution through its iterated
//! CDF integrals `H_k(v) = E[(v - e)_+^k] / k!`: `H_0` is the CDF, `H_1` is the
//! integrated CDF `H`, and the higher orders turn inner products against
//! hinge functions and monomials into closed forms.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use rand::Rng;
use rand_distr::{Beta, Cauchy, Distribution, Gamma, Normal, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{ensure_finite, PmleError, Result};
use crate::quadrature::{gauss, GL5};
use crate::rng::Stream;

/// Highest order of [`ErrorModel::cdf_integral`] the basis code needs.
pub const MAX_ORDER: usize = 4;

const FACTORIAL: [f64; 6] = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0];
const BINOMIAL: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

/// Scale that gives `Beta(2, 5)` unit variance.
pub fn beta_unit_scale() -> f64 {
    39.2_f64.sqrt()
}

pub(crate) fn std_normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t * FRAC_1_SQRT_2)
}

pub(crate) fn std_normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// Pure-error sample stored sorted, with prefix power sums so every
/// `H_k` evaluation is a binary search plus a handful of flops.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalErrors {
    sorted: Vec<f64>,
    center: f64,
    // prefix[m][i] = sum_{j < i} (e_j - center)^m
    prefix: Vec<Vec<f64>>,
}

impl EmpiricalErrors {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(PmleError::InvalidArgument("empty error sample".into()));
        }
        for &v in values {
            ensure_finite("empirical error sample", v)?;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let center = sorted.iter().sum::<f64>() / sorted.len() as f64;
        let mut prefix = vec![vec![0.0; sorted.len() + 1]; MAX_ORDER + 1];
        for (i, &e) in sorted.iter().enumerate() {
            let d = e - center;
            let mut p = 1.0;
            for row in prefix.iter_mut() {
                row[i + 1] = row[i] + p;
                p *= d;
            }
        }
        Ok(Self {
            sorted,
            center,
            prefix,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    fn cdf_integral(&self, order: usize, v: f64) -> f64 {
        let m = self.sorted.len() as f64;
        if order == 0 {
            return self.sorted.partition_point(|&e| e <= v) as f64 / m;
        }
        let count = self.sorted.partition_point(|&e| e < v);
        if count == 0 {
            return 0.0;
        }
        let w = v - self.center;
        // sum_j (w - d_j)^k = sum_m C(k, m) w^(k-m) (-1)^m P_m
        let mut total = 0.0;
        let mut sign = 1.0;
        for j in 0..=order {
            total += sign * BINOMIAL[order][j] * w.powi((order - j) as i32) * self.prefix[j][count];
            sign = -sign;
        }
        (total / (m * FACTORIAL[order])).max(0.0)
    }
}

/// Distribution of the additive measurement error.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorModel {
    /// Centred normal with standard deviation `sd`.
    Normal { sd: f64 },
    /// Density `exp(-|e| / scale) / (2 scale)`.
    Laplace { scale: f64 },
    /// `factor * sqrt(39.2) * Beta(2, 5)`, i.e. unit variance at `factor = 1`.
    ScaledBeta { factor: f64 },
    PointMass { at: f64 },
    /// Test-only uniform model on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    Empirical(EmpiricalErrors),
}

/// The parametric error families used in the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorFamily {
    Normal,
    Laplace,
    Beta,
}

impl ErrorFamily {
    pub const ALL: [ErrorFamily; 3] = [ErrorFamily::Normal, ErrorFamily::Laplace, ErrorFamily::Beta];

    pub fn name(self) -> &'static str {
        match self {
            ErrorFamily::Normal => "normal",
            ErrorFamily::Laplace => "laplace",
            ErrorFamily::Beta => "beta",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(name.trim()))
            .ok_or_else(|| {
                PmleError::InvalidArgument(format!(
                    "unknown error family '{name}' (valid: normal, laplace, beta)"
                ))
            })
    }

    /// Unit-variance member of the family multiplied by `c`.
    pub fn scaled(self, c: f64) -> ErrorModel {
        match self {
            ErrorFamily::Normal => ErrorModel::Normal { sd: c },
            ErrorFamily::Laplace => ErrorModel::Laplace {
                scale: c * FRAC_1_SQRT_2,
            },
            ErrorFamily::Beta => ErrorModel::ScaledBeta { factor: c },
        }
    }
}

impl ErrorModel {
    pub fn empirical(values: &[f64]) -> Result<Self> {
        Ok(ErrorModel::Empirical(EmpiricalErrors::new(values)?))
    }

    /// Distribution of `c * e`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(PmleError::InvalidArgument(format!("scale factor {c} must be positive")));
        }
        Ok(match self {
            ErrorModel::Normal { sd } => ErrorModel::Normal { sd: sd * c },
            ErrorModel::Laplace { scale } => ErrorModel::Laplace { scale: scale * c },
            ErrorModel::ScaledBeta { factor } => ErrorModel::ScaledBeta { factor: factor * c },
            ErrorModel::PointMass { at } => ErrorModel::PointMass { at: at * c },
            ErrorModel::Uniform { lo, hi } => ErrorModel::Uniform {
                lo: lo * c,
                hi: hi * c,
            },
            ErrorModel::Empirical(e) => {
                let v: Vec<f64> = e.values().iter().map(|x| x * c).collect();
                ErrorModel::empirical(&v)?
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            ErrorModel::Normal { sd } => *sd > 0.0 && sd.is_finite(),
            ErrorModel::Laplace { scale } => *scale > 0.0 && scale.is_finite(),
            ErrorModel::ScaledBeta { factor } => *factor > 0.0 && factor.is_finite(),
            ErrorModel::PointMass { at } => at.is_finite(),
            ErrorModel::Uniform { lo, hi } => lo < hi && lo.is_finite() && hi.is_finite(),
            ErrorModel::Empirical(e) => !e.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(PmleError::InvalidArgument(format!("invalid error model {self:?}")))
        }
    }

    pub fn cdf(&self, v: f64) -> f64 {
        self.cdf_integral(0, v)
    }

    /// `H(v) = ∫_{-∞}^v F(u) du`.
    pub fn h_integral(&self, v: f64) -> Result<f64> {
        ensure_finite("h_integral", v)?;
        Ok(self.cdf_integral(1, v))
    }

    /// `E[(v - e)_+^order] / order!` for `order <= MAX_ORDER`.
    pub fn cdf_integral(&self, order: usize, v: f64) -> f64 {
        debug_assert!(order <= MAX_ORDER);
        match self {
            ErrorModel::Normal { sd } => sd.powi(order as i32) * normal_partial(order, v / sd),
            ErrorModel::Laplace { scale } => scale.powi(order as i32) * laplace_partial(order, v / scale),
            ErrorModel::ScaledBeta { factor } => {
                let s = factor * beta_unit_scale();
                s.powi(order as i32) * beta25_partial(order, v / s)
            }
            ErrorModel::PointMass { at } => hinge_power(order, v - at),
            ErrorModel::Uniform { lo, hi } => {
                (hinge_power(order + 1, v - lo) - hinge_power(order + 1, v - hi)) / (hi - lo)
            }
            ErrorModel::Empirical(e) => e.cdf_integral(order, v),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            ErrorModel::Normal { .. } | ErrorModel::Laplace { .. } => 0.0,
            ErrorModel::ScaledBeta { factor } => factor * beta_unit_scale() * 2.0 / 7.0,
            ErrorModel::PointMass { at } => *at,
            ErrorModel::Uniform { lo, hi } => 0.5 * (lo + hi),
            ErrorModel::Empirical(e) => e.center,
        }
    }

    /// Density for absolutely continuous models, `None` otherwise.
    pub fn pdf(&self, x: f64) -> Option<f64> {
        match self {
            ErrorModel::Normal { sd } => Some(std_normal_pdf(x / sd) / sd),
            ErrorModel::Laplace { scale } => Some((-x.abs() / scale).exp() / (2.0 * scale)),
            ErrorModel::ScaledBeta { factor } => {
                let s = factor * beta_unit_scale();
                let t = x / s;
                Some(if (0.0..=1.0).contains(&t) {
                    30.0 * t * (1.0 - t).powi(4) / s
                } else {
                    0.0
                })
            }
            ErrorModel::Uniform { lo, hi } => Some(if x >= *lo && x <= *hi { 1.0 / (hi - lo) } else { 0.0 }),
            ErrorModel::PointMass { .. } | ErrorModel::Empirical(_) => None,
        }
    }

    /// Smallest `v` with `F(v) >= p`.
    pub fn quantile(&self, p: f64) -> f64 {
        match self {
            ErrorModel::PointMass { at } => *at,
            ErrorModel::Empirical(e) => {
                let n = e.len();
                let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
                e.sorted[idx]
            }
            _ => bisect_quantile(|v| self.cdf(v), p),
        }
    }

    /// `(l_e, u_e)` used to initialise the support of the latent density.
    pub fn spread(&self) -> (f64, f64) {
        match self {
            ErrorModel::Empirical(e) => (e.sorted[0], e.sorted[e.len() - 1]),
            ErrorModel::PointMass { at } => (*at, *at),
            _ => (self.quantile(1e-4), self.quantile(1.0 - 1e-4)),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut Stream) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(PmleError::InvalidArgument("sample size must be at least 1".into()));
        }
        Ok((0..n).map(|_| self.draw(rng)).collect())
    }

    fn draw(&self, rng: &mut Stream) -> f64 {
        match self {
            ErrorModel::Normal { sd } => sd * rng.sample::<f64, _>(StandardNormal),
            ErrorModel::Laplace { scale } => scale * laplace_unit_draw(rng),
            ErrorModel::ScaledBeta { factor } => {
                let b = Beta::new(2.0, 5.0).expect("valid beta parameters");
                factor * beta_unit_scale() * b.sample(rng)
            }
            ErrorModel::PointMass { at } => *at,
            ErrorModel::Uniform { lo, hi } => rng.random_range(*lo..*hi),
            ErrorModel::Empirical(e) => e.sorted[rng.random_range(0..e.len())],
        }
    }
}

/// `(x)_+^k / k!`, with the right-continuous step for `k = 0`.
pub(crate) fn hinge_power(order: usize, x: f64) -> f64 {
    if order == 0 {
        if x >= 0.0 {
            1.0
        } else {
            0.0
        }
    } else if x > 0.0 {
        x.powi(order as i32) / FACTORIAL[order]
    } else {
        0.0
    }
}

// E[(t - Z)_+^k] / k! for standard normal Z, via J_k = t J_{k-1} + (k-1) J_{k-2}.
fn normal_partial(order: usize, t: f64) -> f64 {
    let cdf = std_normal_cdf(t);
    let pdf = std_normal_pdf(t);
    let mut prev = cdf;
    if order == 0 {
        return prev;
    }
    let mut cur = t * cdf + pdf;
    for k in 2..=order {
        let next = t * cur + (k - 1) as f64 * prev;
        prev = cur;
        cur = next;
    }
    (cur / FACTORIAL[order]).max(0.0)
}

// Same for the unit-scale Laplace density exp(-|x|)/2.
fn laplace_partial(order: usize, t: f64) -> f64 {
    if t < 0.0 {
        return 0.5 * t.exp();
    }
    // E[(t - e)^k] with E[e^m] = m! for even m, then remove the part with e > t.
    let mut full = 0.0;
    for m in (0..=order).step_by(2) {
        full += BINOMIAL[order][m] * t.powi((order - m) as i32) * FACTORIAL[m];
    }
    let tail = if order % 2 == 0 { 1.0 } else { -1.0 } * 0.5 * (-t).exp() * FACTORIAL[order];
    ((full - tail) / FACTORIAL[order]).max(0.0)
}

// Same for Beta(2, 5) on [0, 1]; the integrand is a polynomial of degree <= 9.
fn beta25_partial(order: usize, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if order == 0 {
        if t >= 1.0 {
            return 1.0;
        }
        let s = 1.0 - t;
        return 1.0 - s.powi(6) - 6.0 * t * s.powi(5);
    }
    let upper = t.min(1.0);
    gauss(&GL5, 0.0, upper, |w| (t - w).powi(order as i32) * 30.0 * w * (1.0 - w).powi(4)) / FACTORIAL[order]
}

fn laplace_unit_draw(rng: &mut Stream) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

fn bisect_quantile<F: Fn(f64) -> f64>(cdf: F, p: f64) -> f64 {
    let (mut lo, mut hi) = (-1.0, 1.0);
    while cdf(lo) > p {
        lo *= 2.0;
    }
    while cdf(hi) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// The latent densities of the simulation study, standardised to unit
/// variance (except Cauchy).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrueDistribution {
    Normal,
    ChiSq4,
    Beta25,
    Laplace,
    MixNormal,
    MixGamma,
    Cauchy,
}

const MIXNORMAL_SCALE: f64 = 29.0;
const MIXGAMMA_VARIANCE: f64 = 25.16;

impl TrueDistribution {
    pub const ALL: [TrueDistribution; 7] = [
        TrueDistribution::Normal,
        TrueDistribution::ChiSq4,
        TrueDistribution::Beta25,
        TrueDistribution::Laplace,
        TrueDistribution::MixNormal,
        TrueDistribution::MixGamma,
        TrueDistribution::Cauchy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrueDistribution::Normal => "normal",
            TrueDistribution::ChiSq4 => "chisq",
            TrueDistribution::Beta25 => "beta",
            TrueDistribution::Laplace => "laplace",
            TrueDistribution::MixNormal => "mixnormal",
            TrueDistribution::MixGamma => "mixgamma",
            TrueDistribution::Cauchy => "cauchy",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(name.trim()))
            .ok_or_else(|| {
                let valid: Vec<&str> = Self::ALL.iter().map(|t| t.name()).collect();
                PmleError::InvalidArgument(format!(
                    "unknown true distribution '{name}' (valid: {})",
                    valid.join(", ")
                ))
            })
    }

    fn mixnormal_factor() -> f64 {
        2.0 / MIXNORMAL_SCALE.sqrt()
    }

    pub fn pdf(self, x: f64) -> f64 {
        match self {
            TrueDistribution::Normal => std_normal_pdf(x),
            TrueDistribution::ChiSq4 => {
                let s = 8f64.sqrt();
                let y = s * x;
                if y > 0.0 {
                    s * y * (-0.5 * y).exp() / 4.0
                } else {
                    0.0
                }
            }
            TrueDistribution::Beta25 => {
                let s = beta_unit_scale();
                let t = x / s;
                if (0.0..=1.0).contains(&t) {
                    30.0 * t * (1.0 - t).powi(4) / s
                } else {
                    0.0
                }
            }
            TrueDistribution::Laplace => (-SQRT_2 * x.abs()).exp() / SQRT_2,
            TrueDistribution::MixNormal => {
                let a = Self::mixnormal_factor();
                let z = x / a;
                0.5 * (std_normal_pdf(z + 3.0) + std_normal_pdf(z - 2.0)) / a
            }
            TrueDistribution::MixGamma => {
                let s = MIXGAMMA_VARIANCE.sqrt();
                let g = s * x;
                s * (0.4 * gamma_int_pdf(5, g) + 0.6 * gamma_int_pdf(13, g))
            }
            TrueDistribution::Cauchy => 1.0 / (PI * (1.0 + x * x)),
        }
    }

    pub fn cdf(self, x: f64) -> f64 {
        match self {
            TrueDistribution::Normal => std_normal_cdf(x),
            TrueDistribution::ChiSq4 => {
                let y = 8f64.sqrt() * x;
                if y > 0.0 {
                    1.0 - (-0.5 * y).exp() * (1.0 + 0.5 * y)
                } else {
                    0.0
                }
            }
            TrueDistribution::Beta25 => beta25_partial(0, x / beta_unit_scale()),
            TrueDistribution::Laplace => {
                if x < 0.0 {
                    0.5 * (SQRT_2 * x).exp()
                } else {
                    1.0 - 0.5 * (-SQRT_2 * x).exp()
                }
            }
            TrueDistribution::MixNormal => {
                let z = x / Self::mixnormal_factor();
                0.5 * (std_normal_cdf(z + 3.0) + std_normal_cdf(z - 2.0))
            }
            TrueDistribution::MixGamma => {
                let g = MIXGAMMA_VARIANCE.sqrt() * x;
                0.4 * gamma_int_cdf(5, g) + 0.6 * gamma_int_cdf(13, g)
            }
            TrueDistribution::Cauchy => 0.5 + x.atan() / PI,
        }
    }

    pub fn quantile(self, p: f64) -> f64 {
        match self {
            TrueDistribution::Normal => {
                use statrs::distribution::{ContinuousCDF, Normal as StNormal};
                StNormal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
            }
            TrueDistribution::Laplace => {
                if p < 0.5 {
                    (2.0 * p).ln() / SQRT_2
                } else {
                    -(2.0 * (1.0 - p)).ln() / SQRT_2
                }
            }
            TrueDistribution::Cauchy => (PI * (p - 0.5)).tan(),
            _ => bisect_quantile(|x| self.cdf(x), p),
        }
    }

    /// The 0.01% to 99.99% quantile range.
    pub fn central_range(self) -> (f64, f64) {
        (self.quantile(1e-4), self.quantile(1.0 - 1e-4))
    }

    pub fn sample(self, n: usize, rng: &mut Stream) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(PmleError::InvalidArgument("sample size must be at least 1".into()));
        }
        Ok((0..n).map(|_| self.draw(rng)).collect())
    }

    fn draw(self, rng: &mut Stream) -> f64 {
        match self {
            TrueDistribution::Normal => rng.sample(StandardNormal),
            TrueDistribution::ChiSq4 => {
                let g = Gamma::new(2.0, 2.0).expect("valid gamma");
                g.sample(rng) / 8f64.sqrt()
            }
            TrueDistribution::Beta25 => {
                let b = Beta::new(2.0, 5.0).expect("valid beta");
                beta_unit_scale() * b.sample(rng)
            }
            TrueDistribution::Laplace => FRAC_1_SQRT_2 * laplace_unit_draw(rng),
            TrueDistribution::MixNormal => {
                let mu = if rng.random::<f64>() < 0.5 { -3.0 } else { 2.0 };
                let z: f64 = Normal::new(mu, 1.0).expect("valid normal").sample(rng);
                Self::mixnormal_factor() * z
            }
            TrueDistribution::MixGamma => {
                let shape = if rng.random::<f64>() < 0.4 { 5.0 } else { 13.0 };
                let g: f64 = Gamma::new(shape, 1.0).expect("valid gamma").sample(rng);
                g / MIXGAMMA_VARIANCE.sqrt()
            }
            TrueDistribution::Cauchy => Cauchy::new(0.0, 1.0).expect("valid cauchy").sample(rng),
        }
    }
}

fn gamma_int_pdf(shape: u32, g: f64) -> f64 {
    if g <= 0.0 {
        return 0.0;
    }
    let log = (shape - 1) as f64 * g.ln() - g - ln_factorial(shape - 1);
    log.exp()
}

fn gamma_int_cdf(shape: u32, g: f64) -> f64 {
    if g <= 0.0 {
        return 0.0;
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for i in 1..shape {
        term *= g / i as f64;
        sum += term;
    }
    (1.0 - (-g).exp() * sum).clamp(0.0, 1.0)
}

fn ln_factorial(k: u32) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_simpson;
    use crate::rng;
    use approx::assert_abs_diff_eq;

    fn parametric_models() -> Vec<ErrorModel> {
        vec![
            ErrorModel::Normal { sd: 1.0 },
            ErrorModel::Normal { sd: 0.3 },
            ErrorFamily::Laplace.scaled(1.0),
            ErrorFamily::Laplace.scaled(2.0),
            ErrorFamily::Beta.scaled(1.0),
            ErrorFamily::Beta.scaled(0.5),
            ErrorModel::Uniform { lo: 0.0, hi: 1.0 },
        ]
    }

    #[test]
    fn cdf_examples() {
        assert_abs_diff_eq!(ErrorModel::Normal { sd: 1.0 }.cdf(0.0), 0.5, epsilon = 1e-15);
        let emp = ErrorModel::empirical(&[-1.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(emp.cdf(0.0), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ErrorFamily::Laplace.scaled(1.0).cdf(0.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn h_integral_examples() {
        let pm = ErrorModel::PointMass { at: 0.0 };
        assert_abs_diff_eq!(pm.h_integral(2.0).unwrap(), 2.0, epsilon = 1e-15);
        let uni = ErrorModel::Uniform { lo: 0.0, hi: 1.0 };
        assert_abs_diff_eq!(uni.h_integral(1.0).unwrap(), 0.5, epsilon = 1e-15);
        let emp = ErrorModel::empirical(&[-1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(emp.h_integral(0.0).unwrap(), 0.5, epsilon = 1e-15);
        assert!(emp.h_integral(f64::NAN).is_err());
        assert!(emp.h_integral(f64::INFINITY).is_err());
    }

    #[test]
    fn normal_h_matches_quadrature_oracle() {
        let m = ErrorModel::Normal { sd: 1.0 };
        let oracle = adaptive_simpson(&std_normal_cdf, -8.0, 3.0, 1e-13);
        assert_abs_diff_eq!(m.h_integral(3.0).unwrap(), oracle, epsilon = 1e-8);
    }

    #[test]
    fn higher_orders_are_integrals_of_lower_orders() {
        // H_k(v) = ∫_{lo}^{v} H_{k-1}(u) du, checked by adaptive quadrature.
        for m in parametric_models() {
            let (lo, hi) = (m.quantile(1e-12) - 1.0, m.quantile(1.0 - 1e-9) + 1.5);
            for order in 1..=MAX_ORDER {
                for &v in &[lo + 0.3 * (hi - lo), lo + 0.7 * (hi - lo), hi] {
                    let oracle = adaptive_simpson(&|u| m.cdf_integral(order - 1, u), lo, v, 1e-13);
                    let got = m.cdf_integral(order, v);
                    assert!(
                        (got - oracle).abs() <= 1e-8 * (1.0 + oracle.abs()),
                        "{m:?} order {order} at {v}: {got} vs {oracle}"
                    );
                }
            }
        }
    }

    #[test]
    fn empirical_orders_match_direct_sums() {
        let values = [0.3, -1.2, 2.5, 0.3, 4.0, -0.7];
        let emp = EmpiricalErrors::new(&values).unwrap();
        for &v in &[-2.0, -0.7, 0.0, 0.31, 3.9, 10.0] {
            for order in 0..=MAX_ORDER {
                let direct = values.iter().map(|&e| hinge_power(order, v - e)).sum::<f64>() / values.len() as f64;
                assert_abs_diff_eq!(emp.cdf_integral(order, v), direct, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn h_minus_shifted_identity_vanishes_in_the_tail() {
        for m in parametric_models() {
            let v = m.quantile(1.0 - 1e-12) + 5.0;
            assert_abs_diff_eq!(m.h_integral(v).unwrap() - (v - m.mean()), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn h_is_convex_and_nondecreasing() {
        let mut models = parametric_models();
        models.push(ErrorModel::empirical(&[-1.0, 0.2, 0.25, 3.0]).unwrap());
        models.push(ErrorModel::PointMass { at: 0.5 });
        for m in models {
            let (lo, hi) = (m.spread().0 - 2.0, m.spread().1 + 2.0);
            let h: Vec<f64> = (0..1000)
                .map(|i| m.h_integral(lo + (hi - lo) * i as f64 / 999.0).unwrap())
                .collect();
            for w in h.windows(3) {
                assert!(w[1] - w[0] >= -1e-12, "{m:?} decreasing");
                assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-9, "{m:?} not convex");
            }
        }
    }

    #[test]
    fn empirical_h_derivative_is_cdf() {
        let m = ErrorModel::empirical(&[-1.0, 0.0, 0.5, 2.0]).unwrap();
        for &v in &[-3.0, -0.5, 0.25, 1.0, 3.0] {
            let d = (m.h_integral(v + 1e-6).unwrap() - m.h_integral(v - 1e-6).unwrap()) / 2e-6;
            assert_abs_diff_eq!(d, m.cdf(v), epsilon = 1e-6);
        }
    }

    #[test]
    fn sampling_examples() {
        let mut s = rng::master(1);
        assert_eq!(ErrorModel::PointMass { at: 3.0 }.sample(5, &mut s).unwrap(), vec![3.0; 5]);
        assert!(ErrorModel::Normal { sd: 1.0 }.sample(0, &mut s).is_err());
    }

    #[test]
    fn parametric_cdf_tails_and_monotonicity() {
        for m in parametric_models() {
            assert!(m.cdf(-1e6) < 1e-12);
            assert!((m.cdf(1e6) - 1.0).abs() < 1e-12);
            let mut prev = 0.0;
            for i in 0..500 {
                let v = -10.0 + 20.0 * i as f64 / 499.0;
                let c = m.cdf(v);
                assert!(c >= prev - 1e-15);
                prev = c;
            }
        }
    }

    #[test]
    fn true_densities_integrate_to_one() {
        for t in TrueDistribution::ALL {
            let (lo, hi) = t.central_range();
            let mass = adaptive_simpson(&|x| t.pdf(x), lo, hi, 1e-11);
            assert_abs_diff_eq!(mass, 1.0 - 2e-4, epsilon = 1e-6);
        }
    }

    #[test]
    fn true_cdfs_match_integrated_densities() {
        for t in TrueDistribution::ALL {
            let (lo, hi) = t.central_range();
            for &p in &[0.2, 0.5, 0.8] {
                let x = lo + p * (hi - lo);
                let integral = adaptive_simpson(&|u| t.pdf(u), lo, x, 1e-12);
                assert_abs_diff_eq!(integral + 1e-4, t.cdf(x), epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn true_variances_are_one() {
        for t in TrueDistribution::ALL.into_iter().filter(|t| *t != TrueDistribution::Cauchy) {
            let (lo, hi) = (t.quantile(1e-14) - 1.0, t.quantile(1.0 - 1e-14) + 1.0);
            let mean = adaptive_simpson(&|x| x * t.pdf(x), lo, hi, 1e-12);
            let var = adaptive_simpson(&|x| (x - mean).powi(2) * t.pdf(x), lo, hi, 1e-12);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-3);
        }
    }
}
