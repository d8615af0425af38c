//! The fitting procedure: support choice and shrinking, KDE initialisation,
//! stratified basis subsampling, λ selection and averaging.
//!
//! For each candidate support one "full" basis is built with every
//! observation as an anchor. Its Gram matrix already contains every inner
//! product a subsample fit needs, so a subsample fit only selects columns.

use std::collections::HashMap;
use std::sync::Arc;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::basis::{BasisSet, CoefficientVector, ErrorKernel, GramMatrix, DEFAULT_CONSTRAINT_POINTS, DEFAULT_QUADRATURE_NODES};
use crate::distributions::{std_normal_pdf, ErrorModel};
use crate::error::{PmleError, Result};
use crate::quadrature::trapezoid;
use crate::rng::{self, Stream};
use crate::solver::{solve, Objective, SimplexOptions};

/// Default initial support widening per side, relative to the support width.
pub const DEFAULT_SUPPORT_WIDENING: f64 = 1.5;
/// Grid values below this count as negative when deciding to shrink.
pub const SHRINK_THRESHOLD: f64 = -1e-4;
/// Largest constraint violation accepted from a subsample solve.
pub const ACCEPTED_VIOLATION: f64 = 1e-4;
/// Points of the least-squares grid used for initialisation.
pub const INIT_GRID_POINTS: usize = 500;
/// Floor applied to validation densities before taking logs.
pub const CV_DENSITY_FLOOR: f64 = 1e-12;
const MAX_HALVINGS: usize = 30;
// relative singular-value cutoff of the initial projection
const INIT_SVD_CUTOFF: f64 = 1e-8;
const CV_STREAM: u64 = u64::MAX;

/// How the smoothing parameter is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaMode {
    Fixed(f64),
    /// Gradient-balance heuristic; `None` takes `R` from the sample size.
    Heuristic(Option<f64>),
    /// K-fold likelihood cross-validation over a log grid around the heuristic.
    CrossValidated { grid_size: usize, folds: usize },
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub lambda_mode: LambdaMode,
    pub subsample_size: usize,
    /// `None` means `max(10, ceil(2n / S))`.
    pub n_subsamples: Option<usize>,
    pub constraint_points: usize,
    /// A fixed support disables both the data-driven choice and shrinking.
    pub support: Option<(f64, f64)>,
    /// Initial support widening per side, as a multiple of its width.
    pub support_widening: f64,
    pub max_shrink_rounds: usize,
    pub quadrature_nodes: usize,
    pub grid_points: usize,
    pub max_redraws: usize,
    pub simplex: SimplexOptions,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda_mode: LambdaMode::Heuristic(None),
            subsample_size: 30,
            n_subsamples: None,
            constraint_points: DEFAULT_CONSTRAINT_POINTS,
            support: None,
            support_widening: DEFAULT_SUPPORT_WIDENING,
            max_shrink_rounds: 10,
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
            grid_points: 1000,
            max_redraws: 3,
            simplex: SimplexOptions::default(),
            seed: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PmleError::InvalidArgument(msg));
        if self.subsample_size < 4 {
            return bad(format!("subsample size {} must be at least 4", self.subsample_size));
        }
        if self.n_subsamples == Some(0) {
            return bad("at least one subsample is required".into());
        }
        if self.grid_points < 2 {
            return bad("the evaluation grid needs at least 2 points".into());
        }
        if self.constraint_points == 0 {
            return bad("at least one constraint point is required".into());
        }
        match self.lambda_mode {
            LambdaMode::Fixed(l) if !(l >= 0.0 && l.is_finite()) => bad(format!("lambda {l} must be non-negative")),
            LambdaMode::Heuristic(Some(r)) if !(r > 0.0 && r.is_finite()) => bad(format!("R {r} must be positive")),
            LambdaMode::CrossValidated { folds, .. } if folds < 2 => bad("cross-validation needs at least 2 folds".into()),
            LambdaMode::CrossValidated { grid_size: 0, .. } => bad("cross-validation grid is empty".into()),
            _ => Ok(()),
        }?;
        if !(self.support_widening >= 0.0 && self.support_widening.is_finite()) {
            return bad(format!("support widening {} must be non-negative", self.support_widening));
        }
        if let Some((l, u)) = self.support {
            if !(l < u) || !l.is_finite() || !u.is_finite() {
                return bad(format!("support [{l}, {u}] is empty"));
            }
        }
        self.simplex.validate()
    }

    pub fn subsample_count(&self, n: usize) -> usize {
        self.n_subsamples
            .unwrap_or_else(|| 10.max((2 * n).div_ceil(self.subsample_size)))
    }
}

/// `R` for the heuristic: `10⁴, 10⁵, 10⁶` at `n = 30, 100, 300`, linear in
/// `log10 n` between and beyond those sizes.
pub fn default_r(n: usize) -> f64 {
    let x = (n.max(2) as f64).log10();
    let (x30, x100, x300) = (30f64.log10(), 2.0, 300f64.log10());
    let e = if x <= x100 {
        4.0 + (x - x30) / (x100 - x30)
    } else {
        5.0 + (x - x100) / (x300 - x100)
    };
    10f64.powf(e)
}

/// One subsample solution.
#[derive(Debug, Clone)]
pub struct SubsampleFit {
    /// Indices into the ascending-sorted observations.
    pub indices: Vec<usize>,
    pub coefficients: CoefficientVector,
    pub lambda: f64,
    pub converged: bool,
    pub violation_max: f64,
    pub iterations: usize,
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Mean λ over the subsample fits of the final support.
    pub lambda: f64,
    /// Every support tried, in order; the last one is final.
    pub shrink_history: Vec<(f64, f64)>,
    pub shrink_limit_reached: bool,
    /// Integral of the averaged density before clipping and renormalising.
    pub raw_integral: f64,
    /// Minimum of the averaged density before clipping.
    pub raw_minimum: f64,
    pub failed_attempts: usize,
}

/// The averaged density on an evenly spaced grid over the support.
#[derive(Debug, Clone)]
pub struct DensityEstimate {
    pub support: (f64, f64),
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub per_subsample: Vec<SubsampleFit>,
    pub diagnostics: Diagnostics,
}

impl DensityEstimate {
    /// Linear interpolation on the grid, zero outside the support.
    pub fn eval(&self, x: f64) -> f64 {
        let (l, u) = self.support;
        if !(x >= l && x <= u) {
            return 0.0;
        }
        let m = self.grid.len() - 1;
        let pos = (x - l) / (u - l) * m as f64;
        let i = (pos.floor() as usize).min(m - 1);
        let t = pos - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.values, self.step())
    }

    pub fn step(&self) -> f64 {
        (self.support.1 - self.support.0) / (self.grid.len() - 1) as f64
    }

    /// Convolved density `(f̂ * f_e)(y)`, averaged over the subsample fits.
    pub fn convolved_at(&self, y: f64) -> f64 {
        let k = self.per_subsample.len().max(1) as f64;
        self.per_subsample.iter().map(|s| s.coefficients.convolved_at(y)).sum::<f64>() / k
    }
}

/// `n` evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let h = (b - a) / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { b } else { a + i as f64 * h }).collect()
}

fn min_max(y: &[f64]) -> Result<(f64, f64)> {
    if y.is_empty() {
        return Err(PmleError::InvalidArgument("sample is empty".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in y {
        if !v.is_finite() {
            return Err(PmleError::NonFinite { context: "sample", value: v });
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((lo, hi))
}

/// `(l_Y - l_e, u_Y - u_e)` widened by `widening` times its width on each side.
pub fn initial_support(y: &[f64], error: &ErrorModel, widening: f64) -> Result<(f64, f64)> {
    if !(widening >= 0.0 && widening.is_finite()) {
        return Err(PmleError::InvalidArgument(format!("widening {widening} must be non-negative")));
    }
    let (ly, uy) = min_max(y)?;
    let (le, ue) = error.spread();
    let (l, u) = (ly - le, uy - ue);
    if !(u > l) {
        return Err(PmleError::InvertedSupport { lower: l, upper: u });
    }
    let w = widening * (u - l);
    Ok((l - w, u + w))
}

/// The support a fit starts from: the hull of [`initial_support`] (skipped
/// when inverted) and the data range shifted by the error mean.
pub fn starting_support(y: &[f64], error: &ErrorModel, widening: f64) -> Result<(f64, f64)> {
    let (ly, uy) = min_max(y)?;
    if !(uy > ly) {
        return Err(PmleError::InvalidArgument("observations have zero spread".into()));
    }
    let m = error.mean();
    let shifted = (ly - m, uy - m);
    match initial_support(y, error, widening) {
        Ok((l, u)) => Ok((l.min(shifted.0), u.max(shifted.1))),
        Err(PmleError::InvertedSupport { .. }) => Ok(shifted),
        Err(e) => Err(e),
    }
}

/// Moves each endpoint next to a negative boundary region halfway towards
/// the region's minimum. Returns `None` when neither side needs to move.
pub fn shrink_support(grid: &[f64], values: &[f64]) -> Option<(f64, f64)> {
    let m = grid.len();
    if m < 3 || values.len() != m {
        return None;
    }
    let side = |order: &mut dyn Iterator<Item = usize>| -> Option<usize> {
        let mut best: Option<usize> = None;
        for i in order {
            if values[i] > 0.0 {
                break;
            }
            if best.is_none_or(|b| values[i] < values[b]) {
                best = Some(i);
            }
        }
        best.filter(|&b| values[b] < SHRINK_THRESHOLD)
    };
    let left = side(&mut (1..m - 1));
    let right = side(&mut (1..m - 1).rev());
    if left.is_none() && right.is_none() {
        return None;
    }
    let (l, u) = (grid[0], grid[m - 1]);
    let nl = left.map_or(l, |i| 0.5 * (l + grid[i]));
    let nu = right.map_or(u, |i| 0.5 * (grid[i] + u));
    if nl < nu {
        Some((nl, nu))
    } else {
        None
    }
}

fn mean_sd(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let i = h.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (h - i as f64) * (sorted[j] - sorted[i])
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) n^{-1/5}`; falls back to `sd`
/// when the interquartile range is zero.
pub fn silverman_bandwidth(y: &[f64]) -> Result<f64> {
    if y.len() < 2 {
        return Err(PmleError::InvalidArgument("bandwidth needs at least 2 observations".into()));
    }
    min_max(y)?;
    let (_, sd) = mean_sd(y);
    if !(sd > 0.0) {
        return Err(PmleError::InvalidArgument("sample has zero spread".into()));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * (y.len() as f64).powf(-0.2))
}

/// Gaussian-kernel density estimate at `x`.
pub fn kde(y: &[f64], bandwidth: f64, x: f64) -> f64 {
    y.iter().map(|&v| std_normal_pdf((x - v) / bandwidth)).sum::<f64>() / (y.len() as f64 * bandwidth)
}

fn kde_target(y: &[f64], support: (f64, f64)) -> Result<(Vec<f64>, DVector<f64>)> {
    let bw = silverman_bandwidth(y)?;
    let grid = linspace(support.0, support.1, INIT_GRID_POINTS);
    let target = DVector::from_iterator(grid.len(), grid.iter().map(|&z| kde(y, bw, z)));
    Ok((grid, target))
}

/// Least-squares projection of the KDE of `y` onto the densities the basis
/// can represent, over the support and restricted to the equality-feasible
/// set, then halved towards `β = 0` until the objective is finite.
pub fn initialize_coeffs(y: &[f64], basis: &BasisSet, obj: &Objective) -> Result<DVector<f64>> {
    let (grid, target) = kde_target(y, basis.support())?;
    let design = rows_matrix(grid.iter().map(|&x| basis.hinge_left_row(x)).collect());
    init_from_design(&design, &target, obj)
}

fn init_from_design(design: &DMatrix<f64>, target: &DVector<f64>, obj: &Objective) -> Result<DVector<f64>> {
    let space = obj.nullspace();
    let reduced = design * &space.basis;
    let rhs = target - design * &space.alpha0;
    let svd = reduced.svd(true, true);
    let tol = INIT_SVD_CUTOFF * svd.singular_values.max();
    let mut beta = svd
        .solve(&rhs, tol)
        .map_err(|e| PmleError::InvalidArgument(format!("initial projection failed: {e}")))?;
    for _ in 0..=MAX_HALVINGS {
        if obj.negative_log_likelihood(&beta)?.is_finite() {
            return Ok(beta);
        }
        beta *= 0.5;
    }
    Err(PmleError::InitializationFailed { halvings: MAX_HALVINGS })
}

/// One index per equal-width stratum of `[min y, max y]`; empty strata are
/// replaced by extra draws from the stratum with the most unused points.
/// Returned indices are sorted.
pub fn stratified_subsample(y: &[f64], s: usize, stream: &mut Stream) -> Result<Vec<usize>> {
    let n = y.len();
    if s == 0 || s > n {
        return Err(PmleError::InvalidArgument(format!("subsample size {s} must lie in 1..={n}")));
    }
    let (lo, hi) = min_max(y)?;
    let width = (hi - lo) / s as f64;
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); s];
    for (i, &v) in y.iter().enumerate() {
        let k = if width > 0.0 { (((v - lo) / width) as usize).min(s - 1) } else { 0 };
        strata[k].push(i);
    }
    let mut chosen = Vec::with_capacity(s);
    for stratum in strata.iter_mut().filter(|st| !st.is_empty()) {
        let j = stream.random_range(0..stratum.len());
        chosen.push(stratum.swap_remove(j));
    }
    while chosen.len() < s {
        let (k, _) = strata
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
            .expect("at least one stratum");
        let j = stream.random_range(0..strata[k].len());
        chosen.push(strata[k].swap_remove(j));
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// `λ = (1/R) Σ|∂ℓ/∂α_i| / Σ|∂ψ/∂α_i|` at `α = α₀ + N β₀`.
pub fn heuristic_lambda(obj: &Objective, beta0: &DVector<f64>, r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(PmleError::InvalidArgument(format!("R {r} must be positive")));
    }
    let alpha = obj.alpha(beta0);
    let dl = obj.loglik_gradient(&alpha)?;
    let dp = obj.penalty_gradient(&alpha);
    let den = dp.iter().map(|v| v.abs()).sum::<f64>();
    if !(den > 0.0) {
        return Err(PmleError::ZeroDenominator("heuristic lambda"));
    }
    Ok(dl.iter().map(|v| v.abs()).sum::<f64>() / den / r)
}

// Everything a subsample fit on one support needs.
struct SupportContext {
    support: (f64, f64),
    y: Vec<f64>,
    kernel: Arc<ErrorKernel>,
    constraint_points: Vec<f64>,
    full_gram: DMatrix<f64>,
    init_design: DMatrix<f64>,
    init_target: DVector<f64>,
    grid: Vec<f64>,
    grid_hinge: DMatrix<f64>,
}

impl SupportContext {
    fn new(y: &[f64], error: &Arc<ErrorModel>, support: (f64, f64), config: &FitConfig) -> Result<Self> {
        let constraint_points = BasisSet::even_constraint_points(support, config.constraint_points);
        let full = BasisSet::new(
            support,
            y.to_vec(),
            constraint_points.clone(),
            error.clone(),
            config.quadrature_nodes,
        )?;
        let full_gram = full.gram_matrix()?.matrix().clone();
        let (init_grid, init_target) = kde_target(y, support)?;
        let init_design = rows_matrix(init_grid.par_iter().map(|&x| full.hinge_left_row(x)).collect());
        let grid = linspace(support.0, support.1, config.grid_points);
        let grid_hinge = rows_matrix(grid.par_iter().map(|&x| full.hinge_left_row(x)).collect());
        Ok(Self {
            support,
            y: y.to_vec(),
            kernel: full.kernel().clone(),
            constraint_points,
            full_gram,
            init_design,
            init_target,
            grid,
            grid_hinge,
        })
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn columns(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().copied().chain(self.n()..self.full_gram.ncols()).collect()
    }

    // Basis, objective (λ unset) and KDE start for one subsample.
    fn prepare(&self, idx: &[usize]) -> Result<(Arc<BasisSet>, Objective, DVector<f64>)> {
        let cols = self.columns(idx);
        let anchors = idx.iter().map(|&i| self.y[i]).collect();
        let basis = Arc::new(BasisSet::with_kernel(
            self.kernel.clone(),
            anchors,
            self.constraint_points.clone(),
        )?);
        let gram = GramMatrix::from_matrix(self.full_gram.select_rows(&cols).select_columns(&cols));
        let lik = self.full_gram.rows(0, self.n()).select_columns(&cols);
        let obj = Objective::new(&basis, gram, lik, 0.0, 0.0)?;
        let design = self.init_design.select_columns(&cols);
        let beta0 = init_from_design(&design, &self.init_target, &obj)?;
        Ok((basis, obj, beta0))
    }

    fn lambda_for(&self, obj: &Objective, beta0: &DVector<f64>, mode: &LambdaMode) -> Result<f64> {
        match *mode {
            LambdaMode::Fixed(l) => Ok(l),
            LambdaMode::Heuristic(r) => heuristic_lambda(obj, beta0, r.unwrap_or_else(|| default_r(self.n()))),
            LambdaMode::CrossValidated { .. } => Err(PmleError::InvalidArgument(
                "cross-validated lambda must be resolved before subsample fits".into(),
            )),
        }
    }

    fn fit_subsample(&self, idx: &[usize], mode: &LambdaMode, opts: &SimplexOptions) -> Result<(SubsampleFit, Vec<f64>)> {
        let (basis, obj, beta0) = self.prepare(idx)?;
        let lambda = self.lambda_for(&obj, &beta0, mode)?;
        let obj = obj.with_lambda(lambda);
        let out = solve(&obj, &beta0, opts)?;
        if !out.value.is_finite() {
            return Err(PmleError::InfeasibleStart);
        }
        if out.max_violation > ACCEPTED_VIOLATION {
            return Err(PmleError::InvalidArgument(format!(
                "constraint violation {} after barrier escalation",
                out.max_violation
            )));
        }
        let alpha = obj.alpha(&out.beta);
        let values = (self.grid_hinge.select_columns(&self.columns(idx)) * &alpha)
            .iter()
            .copied()
            .collect();
        let fit = SubsampleFit {
            indices: idx.to_vec(),
            coefficients: CoefficientVector::new(basis, alpha)?,
            lambda,
            converged: out.converged,
            violation_max: out.max_violation,
            iterations: out.iterations,
            attempts: 1,
        };
        Ok((fit, values))
    }
}

fn rows_matrix(rows: Vec<Vec<f64>>) -> DMatrix<f64> {
    let ncols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

struct RoundResult {
    fits: Vec<SubsampleFit>,
    raw: Vec<f64>,
    failed_attempts: usize,
}

fn subsample_units(
    ctx: &SupportContext,
    s: usize,
    count: usize,
    mode: &LambdaMode,
    config: &FitConfig,
    round: u64,
) -> Result<RoundResult> {
    let first: Vec<Vec<usize>> = (0..count)
        .map(|k| stratified_subsample(&ctx.y, s, &mut rng::child(config.seed, &[round, k as u64, 0])))
        .collect::<Result<_>>()?;
    // identical index sets give identical fits; solve each distinct one once
    let mut distinct: Vec<&Vec<usize>> = Vec::new();
    let mut slot: HashMap<&Vec<usize>, usize> = HashMap::new();
    for idx in &first {
        slot.entry(idx).or_insert_with(|| {
            distinct.push(idx);
            distinct.len() - 1
        });
    }
    let solved: Vec<Result<(SubsampleFit, Vec<f64>)>> = distinct
        .par_iter()
        .map(|idx| ctx.fit_subsample(idx, mode, &config.simplex))
        .collect();

    let outcomes: Vec<(Option<(SubsampleFit, Vec<f64>)>, usize, Vec<String>)> = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut errors = Vec::new();
            match &solved[slot[&first[k]]] {
                Ok(fit) => return (Some(fit.clone()), 0, errors),
                Err(e) => errors.push(e.to_string()),
            }
            for attempt in 1..=config.max_redraws {
                let stream = &mut rng::child(config.seed, &[round, k as u64, attempt as u64]);
                let res = stratified_subsample(&ctx.y, s, stream)
                    .and_then(|idx| ctx.fit_subsample(&idx, mode, &config.simplex));
                match res {
                    Ok((mut fit, vals)) => {
                        fit.attempts = attempt + 1;
                        return (Some((fit, vals)), attempt, errors);
                    }
                    Err(e) => errors.push(e.to_string()),
                }
            }
            let failed = errors.len();
            (None, failed, errors)
        })
        .collect();

    let mut fits = Vec::new();
    let mut sum = vec![0.0; ctx.grid.len()];
    let mut failed_attempts = 0;
    let mut messages = Vec::new();
    for (k, (fit, failed, errors)) in outcomes.into_iter().enumerate() {
        failed_attempts += failed;
        match fit {
            Some((fit, vals)) => {
                for (acc, v) in sum.iter_mut().zip(vals) {
                    *acc += v;
                }
                fits.push(fit);
            }
            None => messages.push(format!("subsample {k}: {}", errors.join("; "))),
        }
    }
    if fits.is_empty() {
        return Err(PmleError::AllSubsamplesFailed(messages.join(" | ")));
    }
    let k = fits.len() as f64;
    let raw = sum.into_iter().map(|v| v / k).collect();
    Ok(RoundResult {
        fits,
        raw,
        failed_attempts,
    })
}

fn sorted_sample(y: &[f64]) -> Result<Vec<f64>> {
    min_max(y)?;
    let mut v = y.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn resolve_lambda(ctx: &SupportContext, error: &Arc<ErrorModel>, config: &FitConfig) -> Result<LambdaMode> {
    match config.lambda_mode {
        LambdaMode::CrossValidated { grid_size, folds } => {
            let l = cv_on_support(ctx, error, config, grid_size, folds)?;
            Ok(LambdaMode::Fixed(l))
        }
        ref m => Ok(m.clone()),
    }
}

/// Fits the averaged P-MLE density of `y` under `error`.
pub fn fit(y: &[f64], error: &ErrorModel, config: &FitConfig) -> Result<DensityEstimate> {
    config.validate()?;
    let y = sorted_sample(y)?;
    let n = y.len();
    if n < config.subsample_size {
        return Err(PmleError::InvalidArgument(format!(
            "sample size {n} is smaller than the subsample size {}",
            config.subsample_size
        )));
    }
    let error = Arc::new(error.clone());
    let mut support = match config.support {
        Some(s) => s,
        None => starting_support(&y, &error, config.support_widening)?,
    };
    let mut history = Vec::new();
    let mut best: Option<(SupportContext, RoundResult)> = None;
    let mut limit_reached = false;
    let count = config.subsample_count(n);
    for round in 0..=config.max_shrink_rounds {
        history.push(support);
        let attempt = SupportContext::new(&y, &error, support, config).and_then(|ctx| {
            let mode = resolve_lambda(&ctx, &error, config)?;
            let res = subsample_units(&ctx, config.subsample_size, count, &mode, config, round as u64)?;
            Ok((ctx, res))
        });
        let (ctx, res) = match attempt {
            Ok(v) => v,
            Err(e) => match best {
                Some(_) => {
                    warn!("refit on shrunken support {support:?} failed ({e}); keeping the previous support");
                    history.pop();
                    break;
                }
                None => return Err(e),
            },
        };
        let next = if config.support.is_none() {
            shrink_support(&ctx.grid, &res.raw)
        } else {
            None
        };
        best = Some((ctx, res));
        match next {
            Some(s) if round < config.max_shrink_rounds => {
                debug!("shrinking support {support:?} -> {s:?}");
                support = s;
            }
            Some(_) => {
                warn!("support still shows boundary negativity after {} shrink rounds", config.max_shrink_rounds);
                limit_reached = true;
            }
            None => break,
        }
    }
    let (ctx, res) = best.expect("first round either succeeds or returns");
    Ok(finalize(ctx, res, history, limit_reached))
}

fn finalize(ctx: SupportContext, res: RoundResult, history: Vec<(f64, f64)>, limit_reached: bool) -> DensityEstimate {
    let step = (ctx.support.1 - ctx.support.0) / (ctx.grid.len() - 1) as f64;
    let raw_integral = trapezoid(&res.raw, step);
    let raw_minimum = res.raw.iter().copied().fold(f64::INFINITY, f64::min);
    let mut values: Vec<f64> = res.raw.iter().map(|&v| v.max(0.0)).collect();
    let total = trapezoid(&values, step);
    if total > 0.0 {
        values.iter_mut().for_each(|v| *v /= total);
    }
    let lambda = res.fits.iter().map(|f| f.lambda).sum::<f64>() / res.fits.len() as f64;
    DensityEstimate {
        support: ctx.support,
        grid: ctx.grid,
        values,
        per_subsample: res.fits,
        diagnostics: Diagnostics {
            lambda,
            shrink_history: history,
            shrink_limit_reached: limit_reached,
            raw_integral,
            raw_minimum,
            failed_attempts: res.failed_attempts,
        },
    }
}

/// Log grid of `size` values spanning `[center/100, center·100]`.
pub fn cv_grid(center: f64, size: usize) -> Vec<f64> {
    if size == 1 {
        return vec![center];
    }
    (0..size)
        .map(|i| center * 10f64.powf(-2.0 + 4.0 * i as f64 / (size - 1) as f64))
        .collect()
}

/// Picks the highest-scoring λ; ties go to the larger λ.
pub fn select_lambda(grid: &[f64], scores: &[f64]) -> Option<f64> {
    grid.iter()
        .zip(scores)
        .filter(|(_, s)| !s.is_nan())
        .fold(None, |best: Option<(f64, f64)>, (&l, &s)| match best {
            Some((bl, bs)) if s < bs || (s == bs && l < bl) => Some((bl, bs)),
            _ => Some((l, s)),
        })
        .map(|(l, _)| l)
}

/// K-fold likelihood cross-validation of λ on the data-driven (or fixed)
/// initial support.
pub fn cv_lambda(y: &[f64], error: &ErrorModel, config: &FitConfig) -> Result<f64> {
    config.validate()?;
    let (grid_size, folds) = match config.lambda_mode {
        LambdaMode::CrossValidated { grid_size, folds } => (grid_size, folds),
        _ => (7, 5),
    };
    let y = sorted_sample(y)?;
    let error = Arc::new(error.clone());
    let support = match config.support {
        Some(s) => s,
        None => starting_support(&y, &error, config.support_widening)?,
    };
    let ctx = SupportContext::new(&y, &error, support, config)?;
    cv_on_support(&ctx, &error, config, grid_size, folds)
}

fn cv_on_support(ctx: &SupportContext, error: &Arc<ErrorModel>, config: &FitConfig, grid_size: usize, folds: usize) -> Result<f64> {
    let n = ctx.n();
    if folds < 2 || 2 * folds > n {
        return Err(PmleError::InvalidArgument(format!("{folds} folds need at least {} observations", 2 * folds)));
    }
    let s = config.subsample_size.min(n);
    let first = stratified_subsample(&ctx.y, s, &mut rng::child(config.seed, &[CV_STREAM, 0]))?;
    let (_, obj, beta0) = ctx.prepare(&first)?;
    let r = match config.lambda_mode {
        LambdaMode::Heuristic(Some(r)) => r,
        _ => default_r(n),
    };
    let center = heuristic_lambda(&obj, &beta0, r)?;
    let grid = cv_grid(center, grid_size);
    if grid.len() == 1 {
        return Ok(grid[0]);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::child(config.seed, &[CV_STREAM, 1]));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let units: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..folds).map(move |f| (g, f))).collect();
    let scores: Vec<Option<f64>> = units
        .par_iter()
        .map(|&(g, f)| {
            let train: Vec<f64> = (0..n).filter(|&i| fold_of[i] != f).map(|i| ctx.y[i]).collect();
            let valid: Vec<f64> = (0..n).filter(|&i| fold_of[i] == f).map(|i| ctx.y[i]).collect();
            let sub = FitConfig {
                lambda_mode: LambdaMode::Fixed(grid[g]),
                subsample_size: config.subsample_size.min(train.len()),
                support: Some(ctx.support),
                max_shrink_rounds: 0,
                seed: rng::child_seed(config.seed, &[CV_STREAM, 2, g as u64, f as u64]),
                ..config.clone()
            };
            let tctx = SupportContext::new(&train, error, ctx.support, &sub).ok()?;
            let count = sub.subsample_count(train.len());
            let res = subsample_units(&tctx, sub.subsample_size, count, &sub.lambda_mode, &sub, 0).ok()?;
            let k = res.fits.len() as f64;
            Some(
                valid
                    .iter()
                    .map(|&v| {
                        let d = res.fits.iter().map(|fit| fit.coefficients.convolved_at(v)).sum::<f64>() / k;
                        d.max(CV_DENSITY_FLOOR).ln()
                    })
                    .sum(),
            )
        })
        .collect();
    let mut totals = vec![0.0; grid.len()];
    let mut ok = vec![0usize; grid.len()];
    for (&(g, _), s) in units.iter().zip(&scores) {
        if let Some(s) = s {
            totals[g] += s;
            ok[g] += 1;
        }
    }
    if ok.iter().all(|&c| c == 0) {
        return Err(PmleError::AllSubsamplesFailed("every cross-validation fold failed to fit".into()));
    }
    // a λ whose folds failed scores as if each failed point sat at the floor
    let per_fold = (n as f64 / folds as f64) * CV_DENSITY_FLOOR.ln();
    let adjusted: Vec<f64> = totals
        .iter()
        .zip(&ok)
        .map(|(&t, &c)| t + (folds - c) as f64 * per_fold)
        .collect();
    Ok(select_lambda(&grid, &adjusted).expect("grid is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::TrueDistribution;
    use approx::assert_abs_diff_eq;

    fn normal_sample(n: usize, seed: u64) -> Vec<f64> {
        TrueDistribution::Normal.sample(n, &mut rng::master(seed)).unwrap()
    }

    fn quick_config() -> FitConfig {
        FitConfig {
            quadrature_nodes: 1024,
            grid_points: 200,
            ..FitConfig::default()
        }
    }

    #[test]
    fn initial_support_examples() {
        let y = [0.0, 3.0, 10.0];
        let e = ErrorModel::empirical(&[-1.0, 1.0]).unwrap();
        let (l, u) = initial_support(&y, &e, 0.0).unwrap();
        assert_abs_diff_eq!(l, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(u, 9.0, epsilon = 1e-12);
        let (l, u) = initial_support(&y, &e, 0.1).unwrap();
        assert_abs_diff_eq!(l, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(u, 9.8, epsilon = 1e-12);

        let pm = ErrorModel::PointMass { at: 0.0 };
        assert_eq!(initial_support(&y, &pm, 0.0).unwrap(), (0.0, 10.0));

        let wide = ErrorModel::empirical(&[-3.0, 3.0]).unwrap();
        assert!(matches!(
            initial_support(&[0.0, 2.0], &wide, 0.1),
            Err(PmleError::InvertedSupport { .. })
        ));
        // the fit falls back to the data range shifted by the error mean
        assert_eq!(starting_support(&[0.0, 2.0], &wide, 0.1).unwrap(), (0.0, 2.0));
    }

    #[test]
    fn shrink_support_examples() {
        let grid = linspace(0.0, 4.0, 9);
        assert_eq!(shrink_support(&grid, &[0.0, 0.1, 0.2, 0.3, 0.3, 0.3, 0.2, 0.1, 0.0]), None);

        let left = [0.0, -0.2, 0.1, 0.3, 0.3, 0.3, 0.2, 0.1, 0.0];
        let (l, u) = shrink_support(&grid, &left).unwrap();
        assert_abs_diff_eq!(l, 0.25, epsilon = 1e-12);
        assert_eq!(u, 4.0);

        let both = [0.0, -0.01, -0.3, 0.3, 0.3, 0.3, -0.2, -0.01, 0.0];
        let (l, u) = shrink_support(&grid, &both).unwrap();
        assert_abs_diff_eq!(l, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(u, 3.5, epsilon = 1e-12);

        // tiny negatives below the threshold are ignored
        let tiny = [0.0, -1e-6, 0.1, 0.3, 0.3, 0.3, 0.2, 0.1, 0.0];
        assert_eq!(shrink_support(&grid, &tiny), None);
    }

    #[test]
    fn silverman_examples() {
        // two clusters: IQR/1.34 exceeds the standard deviation
        let raw: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 } + 1e-3 * i as f64).collect();
        let (mean, sd) = mean_sd(&raw);
        let y: Vec<f64> = raw.iter().map(|v| (v - mean) / sd).collect();
        let h = silverman_bandwidth(&y).unwrap();
        assert_abs_diff_eq!(h, 0.9 * 100f64.powf(-0.2), epsilon = 1e-12);
        assert!((h - 0.3586).abs() < 5e-4);

        let scaled: Vec<f64> = y.iter().map(|v| 3.5 * v).collect();
        assert_abs_diff_eq!(silverman_bandwidth(&scaled).unwrap(), 3.5 * h, epsilon = 1e-12);

        let small = normal_sample(100, 3);
        let big: Vec<f64> = (0..32).flat_map(|_| small.iter().copied()).collect();
        let ratio = silverman_bandwidth(&big).unwrap() / silverman_bandwidth(&small).unwrap();
        // same sd and IQR up to the n-1 correction; only n^{-1/5} changes
        assert!((ratio / 32f64.powf(-0.2) - 1.0).abs() < 0.01);

        assert!(silverman_bandwidth(&[2.0, 2.0, 2.0]).is_err());
        assert!(silverman_bandwidth(&[1.0]).is_err());
    }

    #[test]
    fn stratified_subsample_contract() {
        let y: Vec<f64> = {
            let mut v = normal_sample(40, 2);
            v.sort_by(f64::total_cmp);
            v
        };
        let all = stratified_subsample(&y, y.len(), &mut rng::master(1)).unwrap();
        assert_eq!(all, (0..y.len()).collect::<Vec<_>>());

        let s = 10;
        let idx = stratified_subsample(&y, s, &mut rng::master(4)).unwrap();
        assert_eq!(idx.len(), s);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        let (lo, hi) = (y[0], y[y.len() - 1]);
        let width = (hi - lo) / s as f64;
        let strata: std::collections::BTreeSet<usize> =
            idx.iter().map(|&i| (((y[i] - lo) / width) as usize).min(s - 1)).collect();
        let span = strata.iter().max().unwrap() - strata.iter().min().unwrap() + 1;
        assert!(span >= s - 2);

        assert!(stratified_subsample(&y, y.len() + 1, &mut rng::master(1)).is_err());
        let a = stratified_subsample(&y, s, &mut rng::master(9)).unwrap();
        let b = stratified_subsample(&y, s, &mut rng::master(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stratified_subsamples_cover_the_data() {
        let mut stream = rng::master(1);
        let y: Vec<f64> = (0..100).map(|_| stream.random::<f64>()).collect();
        let (n, s): (usize, usize) = (100, 30);
        let reps = (2 * n).div_ceil(s) * 2;
        let mut seen = vec![false; n];
        for k in 0..reps {
            for i in stratified_subsample(&y, s, &mut rng::child(1, &[k as u64])).unwrap() {
                seen[i] = true;
            }
        }
        let covered = seen.iter().filter(|&&b| b).count();
        assert!(covered >= 90, "covered {covered}");
    }

    #[test]
    fn default_r_matches_table() {
        assert_abs_diff_eq!(default_r(30), 1e4, epsilon = 1e-6);
        assert_abs_diff_eq!(default_r(100), 1e5, epsilon = 1e-5);
        assert_abs_diff_eq!(default_r(300), 1e6, epsilon = 1e-4);
        assert!(default_r(50) > 1e4 && default_r(50) < 1e5);
    }

    fn small_problem(error: ErrorModel) -> (Vec<f64>, BasisSet, Objective) {
        let mut y = normal_sample(60, 11);
        y.sort_by(f64::total_cmp);
        let support = starting_support(&y, &error, DEFAULT_SUPPORT_WIDENING).unwrap();
        let anchors: Vec<f64> = y.iter().step_by(6).copied().collect();
        let cps = BasisSet::even_constraint_points(support, 30);
        let basis = BasisSet::new(support, anchors, cps, Arc::new(error), 1024).unwrap();
        let gram = basis.gram_matrix().unwrap();
        let lik = rows_matrix(y.iter().map(|&v| basis.response(v)).collect());
        let obj = Objective::new(&basis, gram, lik, 0.0, 0.0).unwrap();
        (y, basis, obj)
    }

    #[test]
    fn initialization_is_feasible_and_tracks_the_kde() {
        let (y, basis, obj) = small_problem(ErrorModel::Normal { sd: 0.5 });
        let beta = initialize_coeffs(&y, &basis, &obj).unwrap();
        assert!(obj.penalized_nll(&beta).unwrap().is_finite());
        let alpha = obj.alpha(&beta);
        let res = CoefficientVector::new(Arc::new(basis.clone()), alpha).unwrap().equality_residuals(obj.gram());
        for (got, want) in res.iter().zip([0.0, 0.0, 2.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-8);
        }

        // with no noise the convolved curve is the density itself
        let y = normal_sample(100, 1);
        let pm = ErrorModel::PointMass { at: 0.0 };
        let support = starting_support(&y, &pm, DEFAULT_SUPPORT_WIDENING).unwrap();
        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        let anchors: Vec<f64> = sorted.iter().step_by(4).copied().collect();
        let basis = Arc::new(
            BasisSet::new(support, anchors, BasisSet::even_constraint_points(support, 30), Arc::new(pm), 1024).unwrap(),
        );
        let gram = basis.gram_matrix().unwrap();
        let lik = rows_matrix(y.iter().map(|&v| basis.response(v)).collect());
        let obj = Objective::new(&basis, gram, lik, 0.0, 0.0).unwrap();
        let beta = initialize_coeffs(&y, &basis, &obj).unwrap();
        let coeffs = CoefficientVector::new(basis, obj.alpha(&beta)).unwrap();
        let bw = silverman_bandwidth(&y).unwrap();
        let grid = linspace(sorted[0], sorted[99], 400);
        let (mut num, mut den) = (0.0, 0.0);
        for &z in &grid {
            let k = kde(&y, bw, z);
            num += (coeffs.convolved_at(z) - k).powi(2);
            den += k * k;
        }
        assert!((num / den).sqrt() < 0.2);
    }

    #[test]
    fn heuristic_lambda_properties() {
        let (y, basis, obj) = small_problem(ErrorModel::Normal { sd: 0.5 });
        let beta = initialize_coeffs(&y, &basis, &obj).unwrap();
        let l1 = heuristic_lambda(&obj, &beta, 1e5).unwrap();
        let l2 = heuristic_lambda(&obj, &beta, 2e5).unwrap();
        assert!(l1 > 0.0);
        assert_abs_diff_eq!(l2, l1 / 2.0, epsilon = 1e-12 * l1);
        assert!(heuristic_lambda(&obj, &beta, 0.0).is_err());
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let (y, basis, obj) = small_problem(ErrorModel::Normal { sd: 0.5 });
        let beta = initialize_coeffs(&y, &basis, &obj).unwrap();
        let alpha = obj.alpha(&beta);
        let lik = obj.likelihood_matrix();
        let loglik = |a: &DVector<f64>| (lik * a).iter().map(|d| d.ln()).sum::<f64>();
        let psi = |a: &DVector<f64>| obj.gram().quadratic_form(a);
        let dl = obj.loglik_gradient(&alpha).unwrap();
        let dp = obj.penalty_gradient(&alpha);
        let min_dens = (lik * &alpha).min();
        for i in 0..alpha.len() {
            // convolved densities move by ~1e-3 relative; the five-point
            // stencil keeps truncation error far below cancellation noise in Lα
            let col = lik.column(i).amax().max(1e-300);
            let h = 1e-3 * min_dens / col;
            let hp = 1e-4 * alpha[i].abs().max(1.0);
            let bump = |h: f64, f: &dyn Fn(&DVector<f64>) -> f64| {
                let at = |t: f64| {
                    let mut a = alpha.clone();
                    a[i] += t;
                    f(&a)
                };
                (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
            };
            let fl = bump(h, &loglik);
            let fp = bump(hp, &psi);
            assert!((fl - dl[i]).abs() <= 1e-5 * dl[i].abs().max(1.0), "loglik {i}: {fl} vs {}", dl[i]);
            assert!((fp - dp[i]).abs() <= 1e-5 * dp[i].abs().max(1.0), "penalty {i}: {fp} vs {}", dp[i]);
        }
    }

    #[test]
    fn cv_helpers() {
        assert_eq!(cv_grid(0.5, 1), vec![0.5]);
        let g = cv_grid(2.0, 7);
        assert_eq!(g.len(), 7);
        assert_abs_diff_eq!(g[0], 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(g[3], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[6], 200.0, epsilon = 1e-10);
        assert_eq!(select_lambda(&[1.0, 2.0, 3.0], &[-5.0, -4.0, -4.0]), Some(3.0));
        assert_eq!(select_lambda(&[1.0, 2.0, 3.0], &[-3.0, -4.0, -5.0]), Some(1.0));
        assert_eq!(select_lambda(&[], &[]), None);
    }

    #[test]
    fn cv_with_a_single_grid_point_returns_it() {
        let y = normal_sample(40, 1);
        let cfg = FitConfig {
            lambda_mode: LambdaMode::CrossValidated { grid_size: 1, folds: 5 },
            ..quick_config()
        };
        let lam = cv_lambda(&y, &ErrorModel::Normal { sd: 0.5 }, &cfg).unwrap();
        // the single point is the heuristic centre
        assert!(lam > 0.0 && lam.is_finite());
        let too_many = FitConfig {
            lambda_mode: LambdaMode::CrossValidated { grid_size: 3, folds: 30 },
            ..quick_config()
        };
        assert!(cv_lambda(&y, &ErrorModel::Normal { sd: 0.5 }, &too_many).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        let bad = [
            FitConfig { subsample_size: 3, ..FitConfig::default() },
            FitConfig { n_subsamples: Some(0), ..FitConfig::default() },
            FitConfig { lambda_mode: LambdaMode::Fixed(-1.0), ..FitConfig::default() },
            FitConfig { lambda_mode: LambdaMode::CrossValidated { grid_size: 7, folds: 1 }, ..FitConfig::default() },
            FitConfig { support: Some((1.0, 1.0)), ..FitConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert_eq!(FitConfig::default().subsample_count(100), 10);
        assert_eq!(FitConfig::default().subsample_count(300), 20);
    }

    #[test]
    fn estimate_interpolates_its_grid() {
        let est = DensityEstimate {
            support: (0.0, 2.0),
            grid: linspace(0.0, 2.0, 3),
            values: vec![0.0, 1.0, 0.0],
            per_subsample: Vec::new(),
            diagnostics: Diagnostics {
                lambda: 0.0,
                shrink_history: vec![(0.0, 2.0)],
                shrink_limit_reached: false,
                raw_integral: 1.0,
                raw_minimum: 0.0,
                failed_attempts: 0,
            },
        };
        assert_abs_diff_eq!(est.eval(0.5), 0.5, epsilon = 1e-15);
        assert_eq!(est.eval(2.0), 0.0);
        assert_eq!(est.eval(-0.1), 0.0);
        assert_abs_diff_eq!(est.integral(), 1.0, epsilon = 1e-15);
    }
}
