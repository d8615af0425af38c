//! Penalized negative log-likelihood and the simplex minimizer.
//!
//! The three equality rows are eliminated exactly: coefficients are written
//! `α = α₀ + N β` with `N` an orthonormal basis of their null space, so every
//! iterate the simplex visits already satisfies them. Non-negativity at the
//! constraint points is a one-sided linear penalty.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisSet, GramMatrix};
use crate::error::{PmleError, Result};

/// Equality right-hand side: `⟨f'', 1⟩ = 0`, `⟨f'', r⟩ = 0`, `⟨f'', r²⟩ = 2`.
pub const EQUALITY_RHS: [f64; 3] = [0.0, 0.0, 2.0];

/// Particular solution and orthonormal null space of the equality rows.
#[derive(Debug, Clone)]
pub struct EqualityNullspace {
    pub alpha0: DVector<f64>,
    pub basis: DMatrix<f64>,
}

/// Eliminates the equality rows `A[off..off+3, :] α = (0, 0, 2)`.
///
/// `α₀` is the minimum-penalty solution: it lives on the three monomial
/// coefficients only and makes `f` the quartic bump `30 (x-l)²(u-x)² / (u-l)⁵`.
pub fn equality_nullspace(gram: &GramMatrix, monomial_offset: usize) -> Result<EqualityNullspace> {
    let a = gram.matrix();
    let m = a.nrows();
    if monomial_offset + 3 > m {
        return Err(PmleError::IndexOutOfRange {
            index: monomial_offset + 2,
            len: m,
        });
    }
    let rows = a.rows(monomial_offset, 3).into_owned();
    let qr = rows.transpose().qr();
    let r = qr.r();
    let degenerate: Vec<usize> = (0..3)
        .filter(|&i| r[(i, i)].abs() <= 1e-10 * rows.row(i).norm().max(f64::MIN_POSITIVE))
        .map(|i| monomial_offset + i)
        .collect();
    if !degenerate.is_empty() {
        return Err(PmleError::RankDeficient { rows: degenerate });
    }
    let mut q_t = DMatrix::identity(m, m);
    qr.q_tr_mul(&mut q_t);
    let basis = q_t.rows(3, m - 3).transpose();

    let block = a.view((monomial_offset, monomial_offset), (3, 3)).into_owned();
    let rhs = DVector::from_row_slice(&EQUALITY_RHS);
    let coef = block
        .lu()
        .solve(&rhs)
        .ok_or_else(|| PmleError::RankDeficient {
            rows: (monomial_offset..monomial_offset + 3).collect(),
        })?;
    let mut alpha0 = DVector::zeros(m);
    alpha0.rows_mut(monomial_offset, 3).copy_from(&coef);
    Ok(EqualityNullspace { alpha0, basis })
}

/// `J(β) = -Σ log(L α)_i + λ αᵀAα + w Σ_m max(-(Aα)_m, 0)` with `α = α₀ + Nβ`.
#[derive(Debug, Clone)]
pub struct Objective {
    lambda: f64,
    barrier_weight: f64,
    space: EqualityNullspace,
    nonneg_rows: Range<usize>,
    gram: GramMatrix,
    likelihood: DMatrix<f64>,
    // reduced-coordinate pieces
    lik_offset: DVector<f64>,
    lik_reduced: DMatrix<f64>,
    pen_quad: DMatrix<f64>,
    pen_lin: DVector<f64>,
    pen_const: f64,
    cons_offset: DVector<f64>,
    cons_reduced: DMatrix<f64>,
}

impl Objective {
    /// `likelihood` has one row per observation: the response row mapping
    /// coefficients to the convolved density at that observation.
    pub fn new(
        basis: &BasisSet,
        gram: GramMatrix,
        likelihood: DMatrix<f64>,
        lambda: f64,
        barrier_weight: f64,
    ) -> Result<Self> {
        if likelihood.ncols() != gram.dim() {
            return Err(PmleError::DimensionMismatch {
                expected: gram.dim(),
                found: likelihood.ncols(),
            });
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(PmleError::InvalidArgument(format!("lambda {lambda} must be non-negative")));
        }
        let space = equality_nullspace(&gram, basis.monomial_offset())?;
        let nonneg_rows = basis.point_eval_offset()..basis.len();
        let a = gram.matrix();
        let n = &space.basis;
        let a0 = &space.alpha0;
        let lik_offset = &likelihood * a0;
        let lik_reduced = &likelihood * n;
        let an = a * n;
        let pen_quad = n.transpose() * &an;
        let pen_lin = 2.0 * (an.transpose() * a0);
        let pen_const = a0.dot(&(a * a0));
        let cons = a.rows(nonneg_rows.start, nonneg_rows.len()).into_owned();
        let cons_offset = &cons * a0;
        let cons_reduced = &cons * n;
        Ok(Self {
            lambda,
            barrier_weight,
            space,
            nonneg_rows,
            gram,
            likelihood,
            lik_offset,
            lik_reduced,
            pen_quad,
            pen_lin,
            pen_const,
            cons_offset,
            cons_reduced,
        })
    }

    pub fn dim(&self) -> usize {
        self.space.basis.ncols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn barrier_weight(&self) -> f64 {
        self.barrier_weight
    }

    pub fn with_barrier_weight(mut self, weight: f64) -> Self {
        self.barrier_weight = weight;
        self
    }

    pub fn nullspace(&self) -> &EqualityNullspace {
        &self.space
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn likelihood_matrix(&self) -> &DMatrix<f64> {
        &self.likelihood
    }

    pub fn nonneg_rows(&self) -> Range<usize> {
        self.nonneg_rows.clone()
    }

    pub fn alpha(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.space.alpha0 + &self.space.basis * beta
    }

    fn check_dim(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.dim() {
            return Err(PmleError::DimensionMismatch {
                expected: self.dim(),
                found: beta.len(),
            });
        }
        Ok(())
    }

    /// `-Σ log (Lα)_i`, or `+∞` when any convolved density is non-positive.
    pub fn negative_log_likelihood(&self, beta: &DVector<f64>) -> Result<f64> {
        self.check_dim(beta)?;
        Ok(self.nll_unchecked(beta))
    }

    fn nll_unchecked(&self, beta: &DVector<f64>) -> f64 {
        let dens = &self.lik_offset + &self.lik_reduced * beta;
        let mut total = 0.0;
        for &d in dens.iter() {
            if !(d > 0.0) {
                return f64::INFINITY;
            }
            total -= d.ln();
        }
        total
    }

    /// `αᵀAα`.
    pub fn penalty(&self, beta: &DVector<f64>) -> Result<f64> {
        self.check_dim(beta)?;
        Ok(self.penalty_unchecked(beta))
    }

    fn penalty_unchecked(&self, beta: &DVector<f64>) -> f64 {
        (beta.dot(&(&self.pen_quad * beta)) + self.pen_lin.dot(beta) + self.pen_const).max(0.0)
    }

    /// Largest `max(-f(x_m), 0)` over the constraint points.
    pub fn max_violation(&self, beta: &DVector<f64>) -> Result<f64> {
        self.check_dim(beta)?;
        Ok(self.violations(beta).fold(0.0, f64::max))
    }

    fn violations<'a>(&'a self, beta: &DVector<f64>) -> impl Iterator<Item = f64> + 'a {
        let vals = &self.cons_offset + &self.cons_reduced * beta;
        (0..vals.len()).map(move |i| (-vals[i]).max(0.0))
    }

    /// `J(β)`; `+∞` when the log-likelihood is undefined.
    pub fn penalized_nll(&self, beta: &DVector<f64>) -> Result<f64> {
        self.check_dim(beta)?;
        Ok(self.value(beta))
    }

    pub(crate) fn value(&self, beta: &DVector<f64>) -> f64 {
        let nll = self.nll_unchecked(beta);
        if !nll.is_finite() {
            return f64::INFINITY;
        }
        let barrier: f64 = if self.barrier_weight > 0.0 {
            self.barrier_weight * self.violations(beta).sum::<f64>()
        } else {
            0.0
        };
        nll + self.lambda * self.penalty_unchecked(beta) + barrier
    }

    /// Gradient of the log-likelihood `Σ log (Lα)_i` with respect to the full `α`.
    pub fn loglik_gradient(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        let dens = &self.likelihood * alpha;
        if dens.iter().any(|&d| !(d > 0.0)) {
            return Err(PmleError::InvalidArgument(
                "log-likelihood gradient undefined at a non-positive convolved density".into(),
            ));
        }
        let inv = dens.map(|d| 1.0 / d);
        Ok(self.likelihood.transpose() * inv)
    }

    /// Gradient of `αᵀAα` with respect to `α`.
    pub fn penalty_gradient(&self, alpha: &DVector<f64>) -> DVector<f64> {
        2.0 * (self.gram.matrix() * alpha)
    }
}

/// Tuning of the simplex search.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOptions {
    /// `None` means `200 · dim`.
    pub max_iterations: Option<usize>,
    /// Absolute spread of vertex values at which the search stops; `None`
    /// means `1e-8 (1 + |f(x0)|)`.
    pub f_tolerance: Option<f64>,
    /// Optional bound on the simplex diameter, checked together with the
    /// value spread.
    pub x_tolerance: Option<f64>,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Rebuild the simplex around the best point this many times after
    /// convergence.
    pub restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iterations: None,
            f_tolerance: None,
            x_tolerance: None,
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            restarts: 0,
        }
    }
}

impl SimplexOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.reflection > 0.0
            && self.expansion > 1.0
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0;
        if ok {
            Ok(())
        } else {
            Err(PmleError::InvalidArgument(format!("invalid simplex coefficients {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best vertex value after each iteration.
    pub history: Vec<f64>,
}

/// Nelder-Mead minimisation of `f` from `x0`. `+∞` values are ordered worst.
pub fn nelder_mead<F>(f: F, x0: &DVector<f64>, opts: &SimplexOptions) -> Result<SimplexResult>
where
    F: Fn(&DVector<f64>) -> f64,
{
    opts.validate()?;
    let dim = x0.len();
    let f0 = f(x0);
    if f0.is_nan() || f0 == f64::INFINITY {
        return Err(PmleError::InfeasibleStart);
    }
    let max_iter = opts.max_iterations.unwrap_or(200 * dim.max(1));
    let f_tol = opts.f_tolerance.unwrap_or(1e-8 * (1.0 + f0.abs()));
    let mut evaluations = 1;
    let mut iterations = 0;
    let mut history = Vec::new();
    let mut best = (x0.clone(), f0);
    let mut converged = false;

    for round in 0..=opts.restarts {
        let (x_start, f_start) = best.clone();
        let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(dim + 1);
        simplex.push((x_start.clone(), f_start));
        for d in 0..dim {
            let mut x = x_start.clone();
            x[d] += (0.05 * x_start[d].abs()).max(0.00025);
            let fx = eval(&f, &x);
            evaluations += 1;
            simplex.push((x, fx));
        }
        converged = false;
        while iterations < max_iter {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[dim].1 - simplex[0].1;
            let small_x = opts.x_tolerance.is_none_or(|tol| {
                simplex[1..]
                    .iter()
                    .all(|(x, _)| (x - &simplex[0].0).amax() <= tol)
            });
            iterations += 1;
            if spread <= f_tol && small_x {
                // equal values on a straddling simplex: probe the centroid
                let centroid = simplex.iter().fold(DVector::zeros(dim), |acc, v| acc + &v.0) / (dim + 1) as f64;
                let fc = eval(&f, &centroid);
                evaluations += 1;
                if fc < simplex[0].1 - f_tol {
                    simplex[dim] = (centroid, fc);
                } else {
                    iterations -= 1;
                    converged = true;
                    break;
                }
            } else {
                evaluations += step(&f, &mut simplex, opts);
            }
            history.push(simplex.iter().map(|v| v.1).fold(f64::INFINITY, f64::min));
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let improved = simplex[0].1 < best.1;
        if simplex[0].1 <= best.1 {
            best = simplex.swap_remove(0);
        }
        if !converged || (round > 0 && !improved) {
            break;
        }
    }
    Ok(SimplexResult {
        x: best.0,
        value: best.1,
        iterations,
        evaluations,
        converged,
        history,
    })
}

fn eval<F: Fn(&DVector<f64>) -> f64>(f: &F, x: &DVector<f64>) -> f64 {
    let v = f(x);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

// One Nelder-Mead step on a simplex sorted best-first; returns evaluations used.
fn step<F: Fn(&DVector<f64>) -> f64>(f: &F, simplex: &mut [(DVector<f64>, f64)], opts: &SimplexOptions) -> usize {
    let n = simplex.len() - 1;
    let mut centroid = DVector::zeros(simplex[0].0.len());
    for (x, _) in &simplex[..n] {
        centroid += x;
    }
    centroid /= n as f64;
    let worst = simplex[n].0.clone();
    let (f_best, f_second, f_worst) = (simplex[0].1, simplex[n - 1].1, simplex[n].1);

    let xr = &centroid + opts.reflection * (&centroid - &worst);
    let fr = eval(f, &xr);
    if fr < f_best {
        let xe = &centroid + opts.expansion * (&xr - &centroid);
        let fe = eval(f, &xe);
        simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        return 2;
    }
    if fr < f_second {
        simplex[n] = (xr, fr);
        return 1;
    }
    let (xc, fc) = if fr < f_worst {
        let xc = &centroid + opts.contraction * (&xr - &centroid);
        let fc = eval(f, &xc);
        (xc, if fc <= fr { fc } else { f64::NAN })
    } else {
        let xc = &centroid + opts.contraction * (&worst - &centroid);
        let fc = eval(f, &xc);
        (xc, if fc < f_worst { fc } else { f64::NAN })
    };
    if !fc.is_nan() {
        simplex[n] = (xc, fc);
        return 2;
    }
    let best = simplex[0].0.clone();
    for v in simplex[1..].iter_mut() {
        let x = &best + opts.shrink * (&v.0 - &best);
        let fx = eval(f, &x);
        *v = (x, fx);
    }
    2 + n
}

/// Outcome of a constrained solve with barrier escalation.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub beta: DVector<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_violation: f64,
    pub barrier_weight: f64,
}

/// Violation level above which the barrier is escalated.
pub const VIOLATION_TOLERANCE: f64 = 1e-6;
const MAX_ESCALATIONS: usize = 3;

/// Minimises `obj` from `beta0`; if the non-negativity violation stays above
/// [`VIOLATION_TOLERANCE`] the barrier weight is raised tenfold and the solve
/// repeated from the same start.
///
/// When `obj` carries a zero barrier weight the default
/// `1e6 (|J(β₀)| + 1)` is used.
pub fn solve(obj: &Objective, beta0: &DVector<f64>, opts: &SimplexOptions) -> Result<SolveOutcome> {
    let mut current = obj.clone();
    if current.barrier_weight <= 0.0 {
        let start = current.clone().with_barrier_weight(0.0).value(beta0);
        if !start.is_finite() {
            return Err(PmleError::InfeasibleStart);
        }
        current.barrier_weight = 1e6 * (start.abs() + 1.0);
    }
    let mut outcome = None;
    for _ in 0..=MAX_ESCALATIONS {
        let res = nelder_mead(|b| current.value(b), beta0, opts)?;
        let violation = current.violations(&res.x).fold(0.0, f64::max);
        let done = violation <= VIOLATION_TOLERANCE;
        outcome = Some(SolveOutcome {
            beta: res.x,
            value: res.value,
            converged: res.converged,
            iterations: res.iterations,
            max_violation: violation,
            barrier_weight: current.barrier_weight,
        });
        if done {
            break;
        }
        current.barrier_weight *= 10.0;
    }
    Ok(outcome.expect("at least one solve runs"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_minimum() {
        let x0 = DVector::from_element(1, 0.0);
        let opts = SimplexOptions {
            f_tolerance: Some(1e-16),
            ..Default::default()
        };
        let res = nelder_mead(|x| (x[0] - 3.0).powi(2), &x0, &opts).unwrap();
        assert_abs_diff_eq!(res.x[0], 3.0, epsilon = 1e-6);
        assert!(res.converged);
    }

    #[test]
    fn rosenbrock_minimum() {
        let rosen = |x: &DVector<f64>| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let x0 = DVector::from_vec(vec![-1.2, 1.0]);
        let opts = SimplexOptions {
            max_iterations: Some(5000),
            f_tolerance: Some(1e-16),
            ..Default::default()
        };
        let res = nelder_mead(rosen, &x0, &opts).unwrap();
        assert_abs_diff_eq!(res.x[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(res.x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn iteration_budget_is_respected() {
        let x0 = DVector::from_vec(vec![5.0, -4.0]);
        let opts = SimplexOptions {
            max_iterations: Some(5),
            ..Default::default()
        };
        let res = nelder_mead(|x| x.norm_squared(), &x0, &opts).unwrap();
        assert_eq!(res.iterations, 5);
        assert!(!res.converged);
    }

    #[test]
    fn infinite_start_is_rejected() {
        let x0 = DVector::from_element(2, 1.0);
        let err = nelder_mead(|_| f64::INFINITY, &x0, &SimplexOptions::default()).unwrap_err();
        assert!(matches!(err, PmleError::InfeasibleStart));
    }

    #[test]
    fn infinite_values_are_treated_as_worst() {
        // Feasible region x > 1; minimum of (x-2)² there.
        let f = |x: &DVector<f64>| if x[0] <= 1.0 { f64::INFINITY } else { (x[0] - 2.0).powi(2) };
        let opts = SimplexOptions {
            f_tolerance: Some(1e-16),
            ..Default::default()
        };
        let res = nelder_mead(f, &DVector::from_element(1, 1.5), &opts).unwrap();
        assert_abs_diff_eq!(res.x[0], 2.0, epsilon = 1e-5);
    }

    #[test]
    fn best_value_never_increases() {
        let f = |x: &DVector<f64>| x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * (v - 1.0).powi(2)).sum();
        let res = nelder_mead(f, &DVector::zeros(6), &SimplexOptions::default()).unwrap();
        for w in res.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn invalid_coefficients_are_rejected() {
        let opts = SimplexOptions {
            contraction: 1.5,
            ..Default::default()
        };
        assert!(opts.validate().is_err());
    }
    use crate::basis::BasisSet;
    use crate::distributions::ErrorModel;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn objective(lambda: f64) -> (BasisSet, Objective) {
        let support = (-3.0, 3.0);
        let anchors = vec![-1.5, -0.7, 0.0, 0.4, 1.1, 1.9];
        let cps = BasisSet::even_constraint_points(support, 30);
        let basis = BasisSet::new(support, anchors.clone(), cps, Arc::new(ErrorModel::Normal { sd: 0.5 }), 1024).unwrap();
        let gram = basis.gram_matrix().unwrap();
        let lik = DMatrix::from_fn(anchors.len(), basis.len(), |i, j| gram.get(i, j));
        let obj = Objective::new(&basis, gram, lik, lambda, 0.0).unwrap();
        (basis, obj)
    }

    fn residuals(obj: &Objective, alpha: &DVector<f64>, off: usize) -> [f64; 3] {
        let a = obj.gram().matrix();
        [0, 1, 2].map(|i| a.row(off + i).dot(&alpha.transpose()))
    }

    #[test]
    fn nullspace_particular_solution_and_basis() {
        let (basis, obj) = objective(0.0);
        let off = basis.monomial_offset();
        let space = obj.nullspace();
        let r = residuals(&obj, &space.alpha0, off);
        for (got, want) in r.iter().zip(EQUALITY_RHS) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-10);
        }
        assert_eq!(space.basis.ncols(), basis.len() - 3);
        let gram = space.basis.transpose() * &space.basis;
        assert!((gram - DMatrix::identity(basis.len() - 3, basis.len() - 3)).amax() < 1e-10);
        let rows = obj.gram().matrix().rows(off, 3).into_owned();
        let scale = rows.amax();
        assert!((rows * &space.basis).amax() < 1e-10 * scale.max(1.0));

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let beta = DVector::from_fn(obj.dim(), |_, _| rng.random_range(-1.0..1.0));
            let r = residuals(&obj, &obj.alpha(&beta), off);
            for (got, want) in r.iter().zip(EQUALITY_RHS) {
                assert_abs_diff_eq!(*got, want, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn rank_deficient_rows_are_named() {
        let gram = GramMatrix::from_matrix(DMatrix::from_fn(5, 5, |i, j| if i == 3 || j == 3 { 0.0 } else { (i + j) as f64 }));
        match equality_nullspace(&gram, 2) {
            Err(PmleError::RankDeficient { rows }) => assert!(!rows.is_empty()),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn penalized_nll_examples() {
        let (_, obj) = objective(0.0);
        let beta = DVector::zeros(obj.dim());
        let alpha = obj.alpha(&beta);
        // rescale the likelihood rows so every convolved density is 1
        let dens = obj.likelihood_matrix() * &alpha;
        assert!(dens.iter().all(|&d| d > 0.0));
        let mut lik = obj.likelihood_matrix().clone();
        for i in 0..lik.nrows() {
            let s = dens[i];
            lik.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
        let (basis, base) = objective(0.0);
        let unit = Objective::new(&basis, base.gram().clone(), lik, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(unit.penalized_nll(&beta).unwrap(), 0.0, epsilon = 1e-12);

        let lam = 0.37;
        let pen = obj.clone().with_lambda(lam);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let beta = DVector::from_fn(obj.dim(), |_, _| rng.random_range(-1e-3..1e-3));
        let j0 = obj.penalized_nll(&beta).unwrap();
        let j1 = pen.penalized_nll(&beta).unwrap();
        let alpha = obj.alpha(&beta);
        assert!(j0.is_finite());
        assert_abs_diff_eq!(j1 - j0, lam * obj.gram().quadratic_form(&alpha), epsilon = 1e-10);

        let mut lik = obj.likelihood_matrix().clone();
        let d0 = (&lik * &obj.alpha(&DVector::zeros(obj.dim())))[0];
        lik.row_mut(0).iter_mut().for_each(|v| *v *= -0.1 / d0);
        let bad = Objective::new(&basis, base.gram().clone(), lik, 0.0, 0.0).unwrap();
        assert_eq!(bad.penalized_nll(&DVector::zeros(obj.dim())).unwrap(), f64::INFINITY);
        assert!(obj.penalized_nll(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn solve_never_increases_the_objective() {
        let (_, obj) = objective(1e-3);
        let beta0 = DVector::zeros(obj.dim());
        let out = solve(&obj, &beta0, &SimplexOptions::default()).unwrap();
        let weighted = obj.clone().with_barrier_weight(out.barrier_weight);
        assert!(weighted.penalized_nll(&out.beta).unwrap() <= weighted.penalized_nll(&beta0).unwrap());
    }
}
