//! Numerical validators for the smoothness-penalty inequalities, the
//! Kullback-Leibler lower bounds and the consistency-rate constants.

use rand::Rng;
use rayon::prelude::*;

use crate::distributions::{std_normal_pdf, ErrorModel, EmpiricalErrors};
use crate::error::{PmleError, Result};
use crate::rng::{self, Stream};

/// Default grid resolution of the validators.
pub const GRID_POINTS: usize = 10_000;
/// Tolerance on the integral of a sampled density.
pub const DENSITY_TOLERANCE: f64 = 1e-4;
/// Differences below this magnitude do not change the sign in mode detection.
pub const MODE_NOISE_FLOOR: f64 = 1e-10;

/// `5⁴ / (3·2¹²)`.
const SUPNORM_FACTOR: f64 = 625.0 / 12_288.0;

/// A function sampled with its first two derivatives on an even grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledDensity {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub is_density: bool,
}

fn even_grid(a: f64, b: f64, points: usize) -> Result<Vec<f64>> {
    if !(a.is_finite() && b.is_finite() && a < b) || points < 5 {
        return Err(PmleError::InvalidArgument(format!(
            "grid needs a < b and at least 5 points, got [{a}, {b}] with {points}"
        )));
    }
    let h = (b - a) / (points - 1) as f64;
    Ok((0..points).map(|i| if i == points - 1 { b } else { a + i as f64 * h }).collect())
}

/// Derivative by five-point central differences, three-point near the ends.
fn differentiate(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            if i >= 2 && i + 2 < n {
                (values[i - 2] - 8.0 * values[i - 1] + 8.0 * values[i + 1] - values[i + 2]) / (12.0 * h)
            } else if i == 0 {
                (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h)
            } else {
                (values[i + 1] - values[i - 1]) / (2.0 * h)
            }
        })
        .collect()
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1]))
}

impl SampledDensity {
    /// Samples `f`, `f'` and `f''` from closed forms.
    pub fn from_fns(
        a: f64,
        b: f64,
        points: usize,
        f: impl Fn(f64) -> f64,
        f1: impl Fn(f64) -> f64,
        f2: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let grid = even_grid(a, b, points)?;
        let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
        let first = grid.iter().map(|&x| f1(x)).collect();
        let second = grid.iter().map(|&x| f2(x)).collect();
        Self::assemble(grid, values, first, second)
    }

    /// Samples `f` and obtains both derivatives by finite differences.
    pub fn from_values(a: f64, b: f64, values: Vec<f64>) -> Result<Self> {
        let grid = even_grid(a, b, values.len())?;
        let h = grid[1] - grid[0];
        let first = differentiate(&values, h);
        let second = differentiate(&first, h);
        Self::assemble(grid, values, first, second)
    }

    fn assemble(grid: Vec<f64>, values: Vec<f64>, first: Vec<f64>, second: Vec<f64>) -> Result<Self> {
        let arrays: [(&'static str, &[f64]); 3] = [
            ("sampled density values", &values),
            ("sampled density first derivative", &first),
            ("sampled density second derivative", &second),
        ];
        for (context, v) in arrays {
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(PmleError::NonFinite {
                    context,
                    value: *bad,
                });
            }
        }
        let mut d = SampledDensity {
            grid,
            values,
            first,
            second,
            is_density: false,
        };
        d.is_density = d.values.iter().all(|&v| v >= 0.0) && (d.integral() - 1.0).abs() <= DENSITY_TOLERANCE;
        Ok(d)
    }

    pub fn step(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.values, self.step())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn lipschitz(&self) -> f64 {
        self.first.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `h(x) = c g(cx)`, which preserves the integral.
    pub fn rescaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(PmleError::InvalidArgument(format!("scale {c} must be positive")));
        }
        Self::assemble(
            self.grid.iter().map(|x| x / c).collect(),
            self.values.iter().map(|v| c * v).collect(),
            self.first.iter().map(|v| c * c * v).collect(),
            self.second.iter().map(|v| c * c * c * v).collect(),
        )
    }

    /// Number of local maxima, from sign changes of the first differences.
    pub fn local_maxima(&self) -> usize {
        let mut count = 0;
        let mut last = 0i8;
        for w in self.values.windows(2) {
            let d = w[1] - w[0];
            let s = if d > MODE_NOISE_FLOOR {
                1
            } else if d < -MODE_NOISE_FLOOR {
                -1
            } else {
                0
            };
            if s != 0 {
                if last == 1 && s == -1 {
                    count += 1;
                }
                last = s;
            }
        }
        count
    }

    fn require_density(&self, what: &str) -> Result<()> {
        if self.is_density {
            Ok(())
        } else {
            Err(PmleError::HypothesisViolated(format!("{what} requires a sampled density")))
        }
    }
}

/// `ψ = ∫ f''²` by the trapezoid rule.
pub fn smoothness(d: &SampledDensity) -> f64 {
    let sq: Vec<f64> = d.second.iter().map(|v| v * v).collect();
    trapezoid(&sq, d.step())
}

/// The piecewise-cubic kernel `k_δ` on `[-δ, δ]` with analytic derivatives.
pub fn bump_kernel(delta: f64) -> Result<SampledDensity> {
    bump_kernel_with(delta, GRID_POINTS)
}

pub fn bump_kernel_with(delta: f64, points: usize) -> Result<SampledDensity> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(PmleError::InvalidArgument(format!("kernel width {delta} must be positive")));
    }
    let k = kernel_fns(delta);
    SampledDensity::from_fns(-delta, delta, points, k.0, k.1, k.2)
}

type Fns = (
    Box<dyn Fn(f64) -> f64 + Send + Sync>,
    Box<dyn Fn(f64) -> f64 + Send + Sync>,
    Box<dyn Fn(f64) -> f64 + Send + Sync>,
);

fn kernel_fns(delta: f64) -> Fns {
    let s = delta.powi(-4);
    let f = move |x: f64| {
        if x < -delta || x > delta {
            0.0
        } else if x <= 0.0 {
            let t = x + delta;
            s * (3.0 * delta * t * t - 2.0 * t * t * t)
        } else {
            let t = x - delta;
            s * (3.0 * delta * t * t + 2.0 * t * t * t)
        }
    };
    let f1 = move |x: f64| {
        if x < -delta || x > delta {
            0.0
        } else if x <= 0.0 {
            let t = x + delta;
            s * (6.0 * delta * t - 6.0 * t * t)
        } else {
            let t = x - delta;
            s * (6.0 * delta * t + 6.0 * t * t)
        }
    };
    let f2 = move |x: f64| {
        if x < -delta || x > delta {
            0.0
        } else if x <= 0.0 {
            s * (6.0 * delta - 12.0 * (x + delta))
        } else {
            s * (6.0 * delta + 12.0 * (x - delta))
        }
    };
    (Box::new(f), Box::new(f1), Box::new(f2))
}

/// Outcome of one inequality check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundCheck {
    /// Relative slack `(rhs - lhs) / |rhs|`; negative when violated.
    pub fn margin(&self) -> f64 {
        (self.rhs - self.lhs) / self.rhs.abs().max(f64::MIN_POSITIVE)
    }
}

/// `max f ≤ (5⁴ψ/(3·2¹²))^{1/5}`.
pub fn check_supnorm_bound(d: &SampledDensity) -> Result<BoundCheck> {
    d.require_density("the sup-norm bound")?;
    let lhs = d.sup_norm();
    let rhs = (SUPNORM_FACTOR * smoothness(d)).powf(0.2);
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-6),
    })
}

/// `max |f'| ≤ (125ψ²/144)^{1/5}` for densities vanishing at the grid ends.
pub fn check_lipschitz_bound(d: &SampledDensity) -> Result<BoundCheck> {
    d.require_density("the Lipschitz bound")?;
    let lhs = d.lipschitz();
    let psi = smoothness(d);
    let rhs = (125.0 * psi * psi / 144.0).powf(0.2);
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-6),
    })
}

/// Result of [`check_convolution_smoothing`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvolutionCheck {
    pub psi_conv: f64,
    pub psi_f: f64,
    pub holds: bool,
}

impl ConvolutionCheck {
    pub fn margin(&self) -> f64 {
        (self.psi_f - self.psi_conv) / self.psi_f
    }
}

/// Tail mass dropped when discretising a continuous error distribution.
const CONVOLUTION_TAIL: f64 = 1e-7;

/// `ψ(f * g) ≤ ψ(f)`: the error law is discretised into cells of the grid
/// step centred on multiples of it, and `f''` is convolved with the cell
/// masses, `f` being taken as zero off its grid.
pub fn check_convolution_smoothing(f: &SampledDensity, g: &ErrorModel) -> Result<ConvolutionCheck> {
    g.validate()?;
    let h = f.step();
    let (lo, hi) = match g {
        ErrorModel::PointMass { .. } | ErrorModel::Empirical(_) => g.spread(),
        _ => (g.quantile(CONVOLUTION_TAIL), g.quantile(1.0 - CONVOLUTION_TAIL)),
    };
    let j_lo = (lo / h).floor() as i64 - 1;
    let j_hi = (hi / h).ceil() as i64 + 1;
    let mut masses: Vec<f64> = (j_lo..=j_hi)
        .map(|j| {
            let t = j as f64 * h;
            (g.cdf(t + 0.5 * h) - g.cdf(t - 0.5 * h)).max(0.0)
        })
        .collect();
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(PmleError::InvalidArgument("error distribution has no mass on the grid".into()));
    }
    masses.iter_mut().for_each(|m| *m /= total);

    let n = f.second.len();
    let mut conv = vec![0.0; n + masses.len() - 1];
    for (j, &m) in masses.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for (c, &v) in conv[j..j + n].iter_mut().zip(&f.second) {
            *c += m * v;
        }
    }
    let sq: Vec<f64> = conv.iter().map(|v| v * v).collect();
    let psi_conv = trapezoid(&sq, h);
    let psi_f = smoothness(f);
    Ok(ConvolutionCheck {
        psi_conv,
        psi_f,
        holds: psi_conv <= psi_f * (1.0 + 1e-4),
    })
}

/// Which Kullback-Leibler lower bound to check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlBound {
    /// `h > g + ε` on `[x0 - δ, x0 + δ]`; bound `2δ²ε²`.
    Above { x0: f64, delta: f64, eps: f64 },
    /// `h < g - ε` on `[x0 - δ, x0 + δ]`; bound `2δ²ε² - (8/3)δ³ε³`.
    Below { x0: f64, delta: f64, eps: f64 },
    /// Both `L`-Lipschitz, `‖h - g‖_∞ > ρ`, `ρ < √(2L)`; bound `ρ⁴/(48L²)`.
    Linfty { rho: f64, lipschitz: f64 },
}

/// `∫ g log(g/h)` by the trapezoid rule; infinite when `h` vanishes where `g` does not.
pub fn kl_divergence(g: &SampledDensity, h: &SampledDensity) -> Result<f64> {
    if g.grid.len() != h.grid.len() || (g.grid[0] - h.grid[0]).abs() > 1e-12 || (g.step() - h.step()).abs() > 1e-12
    {
        return Err(PmleError::DimensionMismatch {
            expected: g.grid.len(),
            found: h.grid.len(),
        });
    }
    let terms: Vec<f64> = g
        .values
        .iter()
        .zip(&h.values)
        .map(|(&a, &b)| {
            if a <= 0.0 {
                0.0
            } else if b <= 0.0 {
                f64::INFINITY
            } else {
                a * (a.ln() - b.ln())
            }
        })
        .collect();
    if terms.iter().any(|t| t.is_infinite()) {
        return Ok(f64::INFINITY);
    }
    Ok(trapezoid(&terms, g.step()))
}

fn window_gap(g: &SampledDensity, h: &SampledDensity, x0: f64, delta: f64, sign: f64) -> Option<f64> {
    g.grid
        .iter()
        .zip(g.values.iter().zip(&h.values))
        .filter(|(x, _)| (**x - x0).abs() <= delta)
        .map(|(_, (a, b))| sign * (b - a))
        .reduce(f64::min)
}

/// Checks `∫ g log(g/h) > bound` after verifying the chosen hypothesis on the grid.
pub fn check_kl_bounds(g: &SampledDensity, h: &SampledDensity, which: KlBound) -> Result<BoundCheck> {
    g.require_density("the divergence bounds")?;
    h.require_density("the divergence bounds")?;
    let violated = |msg: String| Err(PmleError::HypothesisViolated(msg));
    let bound = match which {
        KlBound::Above { x0, delta, eps } | KlBound::Below { x0, delta, eps } => {
            if !(delta > 0.0 && eps > 0.0) {
                return Err(PmleError::InvalidArgument("δ and ε must be positive".into()));
            }
            let above = matches!(which, KlBound::Above { .. });
            let gap = window_gap(g, h, x0, delta, if above { 1.0 } else { -1.0 });
            match gap {
                Some(gap) if gap > eps => {}
                Some(gap) => return violated(format!("window gap {gap} does not exceed ε = {eps}")),
                None => return violated("window contains no grid points".into()),
            }
            let de = delta * eps;
            if above {
                2.0 * de * de
            } else {
                2.0 * de * de - 8.0 / 3.0 * de * de * de
            }
        }
        KlBound::Linfty { rho, lipschitz } => {
            if !(rho > 0.0 && lipschitz > 0.0) {
                return Err(PmleError::InvalidArgument("ρ and L must be positive".into()));
            }
            let lip = g.lipschitz().max(h.lipschitz());
            if lip > lipschitz {
                return violated(format!("Lipschitz constant {lip} exceeds L = {lipschitz}"));
            }
            if rho >= (2.0 * lipschitz).sqrt() {
                return violated(format!("ρ = {rho} is not below √(2L)"));
            }
            let gap = g.values.iter().zip(&h.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if gap <= rho {
                return violated(format!("sup-norm gap {gap} does not exceed ρ = {rho}"));
            }
            rho.powi(4) / (48.0 * lipschitz * lipschitz)
        }
    };
    let kl = kl_divergence(g, h)?;
    Ok(BoundCheck {
        lhs: kl,
        rhs: bound,
        holds: kl > bound,
    })
}

/// `∫ |b'/b| ≤ (2M/5) log(5⁴ψ/(3·2¹²r⁵))` with `b = max(g, r)`. The left side
/// is the total variation of `log b` on the grid.
pub fn check_logratio_integral(g: &SampledDensity, r: f64, modes: usize) -> Result<BoundCheck> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(PmleError::InvalidArgument(format!("floor r = {r} must be positive")));
    }
    let found = g.local_maxima();
    if found > modes {
        return Err(PmleError::HypothesisViolated(format!("{found} local maxima exceed M = {modes}")));
    }
    let psi = smoothness(g);
    let ceiling = (SUPNORM_FACTOR * psi).powf(0.2);
    if r > ceiling {
        return Err(PmleError::HypothesisViolated(format!(
            "floor r = {r} exceeds the sup-norm bound {ceiling}"
        )));
    }
    let lhs: f64 = g
        .values
        .windows(2)
        .map(|w| (w[1].max(r).ln() - w[0].max(r).ln()).abs())
        .sum();
    let rhs = 2.0 * modes as f64 / 5.0 * (SUPNORM_FACTOR * psi / r.powi(5)).ln();
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-4),
    })
}

/// The penalty rate `λ_n` and the constants of the consistency theorem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants {
    pub lambda: f64,
    pub c1: f64,
    pub c2: f64,
}

pub fn theoretical_lambda(n: usize, support_width: f64, psi_fx: f64, psi_fy: f64) -> Result<TheoryConstants> {
    for (name, v) in [("support width", support_width), ("ψ(f_x)", psi_fx), ("ψ(f_y)", psi_fy)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(PmleError::InvalidArgument(format!("{name} = {v} must be positive")));
        }
    }
    if n < 2 {
        return Err(PmleError::InvalidArgument(format!("sample size {n} must be at least 2")));
    }
    let c1 = 2f64.powf(31.0 / 20.0) * 3f64.powf(-0.1) * 5f64.powf(3.0 / 20.0) / (psi_fx.powf(0.8) * psi_fy.powf(0.1));
    let c2 = (1.0 + (1.0 + 3f64.powf(0.4) / 16.0).sqrt()).powf(0.25)
        * 2f64.powf(179.0 / 80.0)
        * 3f64.powf(9.0 / 40.0)
        * 5f64.powf(27.0 / 80.0)
        * psi_fx.powf(0.25)
        * psi_fy.powf(-1.0 / 40.0);
    let nf = n as f64;
    let lambda = c1 * nf.powf(7.0 / 8.0) * nf.ln().powf(1.0 / 8.0) * support_width.sqrt();
    Ok(TheoryConstants { lambda, c1, c2 })
}

/// A finite Gaussian mixture with closed-form derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    /// `(weight, mean, sd)` with weights summing to one.
    pub components: Vec<(f64, f64, f64)>,
}

impl GaussianMixture {
    pub fn random(rng: &mut Stream) -> Self {
        let k = rng.random_range(1..=3);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        GaussianMixture {
            components: raw
                .iter()
                .map(|w| (w / total, rng.random_range(-3.0..3.0), rng.random_range(0.3..2.0)))
                .collect(),
        }
    }

    fn terms(&self, x: f64) -> (f64, f64, f64) {
        self.components.iter().fold((0.0, 0.0, 0.0), |acc, &(w, m, s)| {
            let z = (x - m) / s;
            let p = w * std_normal_pdf(z) / s;
            (acc.0 + p, acc.1 - p * z / s, acc.2 + p * (z * z - 1.0) / (s * s))
        })
    }

    /// The interval extending `reach` standard deviations past every component.
    pub fn range(&self, reach: f64) -> (f64, f64) {
        self.components.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, m, s)| {
            (lo.min(m - reach * s), hi.max(m + reach * s))
        })
    }

    pub fn sample_on(&self, a: f64, b: f64, points: usize) -> Result<SampledDensity> {
        SampledDensity::from_fns(a, b, points, |x| self.terms(x).0, |x| self.terms(x).1, |x| self.terms(x).2)
    }

    pub fn sampled(&self, points: usize) -> Result<SampledDensity> {
        let (a, b) = self.range(12.0);
        self.sample_on(a, b, points)
    }
}

/// A mixture of normalised polynomial bumps `140 (x-a)³(b-x)³ / (b-a)⁷`,
/// twice continuously differentiable with compact support.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpMixture {
    /// `(weight, a, b)` with weights summing to one.
    pub components: Vec<(f64, f64, f64)>,
}

impl BumpMixture {
    pub fn random(rng: &mut Stream) -> Self {
        let k = rng.random_range(1..=3);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        BumpMixture {
            components: raw
                .iter()
                .map(|w| {
                    let a = rng.random_range(-3.0..3.0);
                    (w / total, a, a + rng.random_range(0.5..4.0))
                })
                .collect(),
        }
    }

    fn terms(&self, x: f64) -> (f64, f64, f64) {
        self.components.iter().fold((0.0, 0.0, 0.0), |acc, &(wt, a, b)| {
            if x <= a || x >= b {
                return acc;
            }
            let c = wt * 140.0 / (b - a).powi(7);
            let (u, u1, u2) = ((x - a).powi(3), 3.0 * (x - a).powi(2), 6.0 * (x - a));
            let (v, v1, v2) = ((b - x).powi(3), -3.0 * (b - x).powi(2), 6.0 * (b - x));
            (
                acc.0 + c * u * v,
                acc.1 + c * (u1 * v + u * v1),
                acc.2 + c * (u2 * v + 2.0 * u1 * v1 + u * v2),
            )
        })
    }

    pub fn support(&self) -> (f64, f64) {
        self.components
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, a, b)| (lo.min(a), hi.max(b)))
    }

    pub fn sampled(&self, points: usize) -> Result<SampledDensity> {
        let (a, b) = self.support();
        SampledDensity::from_fns(a, b, points, |x| self.terms(x).0, |x| self.terms(x).1, |x| self.terms(x).2)
    }
}

/// Summary of one randomized sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub name: &'static str,
    pub instances: usize,
    pub passed: usize,
    /// Smallest relative slack over all instances.
    pub worst_margin: f64,
}

impl SweepReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.instances
    }

    fn collect(name: &'static str, outcomes: Vec<Result<(bool, f64)>>) -> Result<Self> {
        let mut passed = 0;
        let mut worst = f64::INFINITY;
        let instances = outcomes.len();
        for o in outcomes {
            let (holds, margin) = o?;
            passed += holds as usize;
            worst = worst.min(margin);
        }
        Ok(SweepReport {
            name,
            instances,
            passed,
            worst_margin: worst,
        })
    }
}

fn sweep<F>(name: &'static str, id: u64, size: usize, seed: u64, check: F) -> Result<SweepReport>
where
    F: Fn(&mut Stream) -> Result<(bool, f64)> + Sync,
{
    let outcomes = (0..size)
        .into_par_iter()
        .map(|i| check(&mut rng::child(seed, &[id, i as u64])))
        .collect();
    SweepReport::collect(name, outcomes)
}

pub fn sweep_kernel(size: usize, seed: u64) -> Result<SweepReport> {
    sweep("bump_kernel", 0, size, seed, |rng| {
        let delta: f64 = 10f64.powf(rng.random_range(-1.0..0.7));
        let k = bump_kernel(delta)?;
        let psi_err = (smoothness(&k) * delta.powi(5) / 24.0 - 1.0).abs();
        let int_err = (k.integral() - 1.0).abs();
        let peak_err = (kernel_fns(delta).0(0.0) * delta - 1.0).abs();
        let err = psi_err.max(int_err).max(peak_err);
        Ok((err <= 1e-6, 1.0 - err / 1e-6))
    })
}

pub fn sweep_supnorm(size: usize, seed: u64) -> Result<SweepReport> {
    sweep("supnorm_bound", 1, size, seed, |rng| {
        let c = check_supnorm_bound(&GaussianMixture::random(rng).sampled(GRID_POINTS)?)?;
        Ok((c.holds, c.margin()))
    })
}

pub fn sweep_lipschitz(size: usize, seed: u64) -> Result<SweepReport> {
    sweep("lipschitz_bound", 2, size, seed, |rng| {
        let c = check_lipschitz_bound(&BumpMixture::random(rng).sampled(GRID_POINTS)?)?;
        Ok((c.holds, c.margin()))
    })
}

fn random_error(rng: &mut Stream) -> Result<ErrorModel> {
    let scale = rng.random_range(0.1..1.0);
    Ok(match rng.random_range(0..4) {
        0 => ErrorModel::Normal { sd: scale },
        1 => ErrorModel::Laplace { scale: scale / 2f64.sqrt() },
        2 => ErrorModel::ScaledBeta { factor: scale },
        _ => {
            let draws: Vec<f64> = (0..20).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            ErrorModel::Empirical(EmpiricalErrors::new(&draws)?)
        }
    })
}

pub fn sweep_convolution(size: usize, seed: u64) -> Result<SweepReport> {
    sweep("convolution_smoothing", 3, size, seed, |rng| {
        let f = GaussianMixture::random(rng).sampled(GRID_POINTS)?;
        let c = check_convolution_smoothing(&f, &random_error(rng)?)?;
        Ok((c.holds, c.margin()))
    })
}

/// `g` and its perturbation by a bump near `x0` that lifts (or lowers) it on
/// a window of half-width `delta`.
fn perturbed_pair(rng: &mut Stream, above: bool) -> Result<(SampledDensity, SampledDensity, KlBound)> {
    let mix = GaussianMixture::random(rng);
    let (a, b) = mix.range(12.0);
    let g = mix.sample_on(a, b, GRID_POINTS)?;
    let &(_, centre, sd) = &mix.components[0];
    let x0 = centre + rng.random_range(-0.5..0.5) * sd;
    let eta: f64 = rng.random_range(0.05..0.5);
    let mut delta: f64 = rng.random_range(0.05..0.5);
    loop {
        let (k, _, _) = kernel_fns(2.0 * delta);
        let values: Vec<f64> = if above {
            g.grid.iter().zip(&g.values).map(|(&x, &v)| (v + eta * k(x - x0)) / (1.0 + eta)).collect()
        } else {
            let shape = |x: f64| 2.0 * delta * k(x - x0);
            let lost: f64 = trapezoid(
                &g.grid.iter().zip(&g.values).map(|(&x, &v)| v * shape(x)).collect::<Vec<_>>(),
                g.step(),
            );
            let z = 1.0 - eta * lost;
            g.grid.iter().zip(&g.values).map(|(&x, &v)| v * (1.0 - eta * shape(x)) / z).collect()
        };
        let h = SampledDensity::from_values(a, b, values)?;
        let gap = window_gap(&g, &h, x0, delta, if above { 1.0 } else { -1.0 }).unwrap_or(0.0);
        if gap > 0.0 {
            let eps = 0.999 * gap;
            let which = if above {
                KlBound::Above { x0, delta, eps }
            } else {
                KlBound::Below { x0, delta, eps }
            };
            return Ok((g, h, which));
        }
        delta *= 0.5;
    }
}

pub fn sweep_kl_above(size: usize, seed: u64) -> Result<SweepReport> {
    sweep("kl_bound_above", 4, size, seed, |rng| {
        let (g, h, which) = perturbed_pair(rng, true)?;
        let c = check_kl_bounds(&g, &h, which)?;
        Ok((c.holds, (c.lhs - c.rhs) / c.rhs))
    })
}

pub fn sweep_kl_below(size: usize, seed: u64) -> Result<SweepReport> {
    sweep("kl_bound_below", 5, size, seed, |rng| {
        let (g, h, which) = perturbed_pair(rng, false)?;
        let c = check_kl_bounds(&g, &h, which)?;
        Ok((c.holds, (c.lhs - c.rhs) / c.rhs))
    })
}

pub fn sweep_kl_linfty(size: usize, seed: u64) -> Result<SweepReport> {
    sweep("kl_bound_linfty", 6, size, seed, |rng| {
        let mg = GaussianMixture::random(rng);
        let other = GaussianMixture::random(rng);
        // mixing in g keeps the divergence finite
        let t: f64 = rng.random_range(0.3..0.95);
        let mh = GaussianMixture {
            components: mg
                .components
                .iter()
                .map(|&(w, m, s)| ((1.0 - t) * w, m, s))
                .chain(other.components.iter().map(|&(w, m, s)| (t * w, m, s)))
                .collect(),
        };
        let (ga, gb) = mg.range(12.0);
        let (ha, hb) = mh.range(12.0);
        let (a, b) = (ga.min(ha), gb.max(hb));
        let g = mg.sample_on(a, b, GRID_POINTS)?;
        let h = mh.sample_on(a, b, GRID_POINTS)?;
        let lipschitz = g.lipschitz().max(h.lipschitz());
        let gap = g.values.iter().zip(&h.values).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let rho = 0.999 * gap.min((2.0 * lipschitz).sqrt());
        let c = check_kl_bounds(&g, &h, KlBound::Linfty { rho, lipschitz })?;
        Ok((c.holds, (c.lhs - c.rhs) / c.rhs))
    })
}

pub fn sweep_logratio(size: usize, seed: u64) -> Result<SweepReport> {
    sweep("logratio_integral", 7, size, seed, |rng| {
        let g = BumpMixture::random(rng).sampled(GRID_POINTS)?;
        let r = g.sup_norm() * rng.random_range(0.01..1.0);
        let c = check_logratio_integral(&g, r, g.local_maxima())?;
        Ok((c.holds, c.margin()))
    })
}

/// Runs every sweep with `size` instances each.
pub fn run_sweeps(size: usize, seed: u64) -> Result<Vec<SweepReport>> {
    if size == 0 {
        return Err(PmleError::InvalidArgument("sweep size must be at least 1".into()));
    }
    Ok(vec![
        sweep_kernel(size, seed)?,
        sweep_supnorm(size, seed)?,
        sweep_lipschitz(size, seed)?,
        sweep_convolution(size, seed)?,
        sweep_kl_above(size, seed)?,
        sweep_kl_below(size, seed)?,
        sweep_kl_linfty(size, seed)?,
        sweep_logratio(size, seed)?,
    ])
}
