//! The finite basis for `f''`, its Gram matrix, and density evaluation.
//!
//! Basis order: one smoothed hinge `h_i(r) = H(y_i - r)` per anchor, then
//! `1, r, r²`, then one point-evaluation function `b_x` per constraint point.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::distributions::ErrorModel;
use crate::error::{ensure_finite, PmleError, Result};
use crate::quadrature::{piecewise_gauss, CompositeRule};

/// Default number of non-negativity constraint points.
pub const DEFAULT_CONSTRAINT_POINTS: usize = 30;
/// Default minimum quadrature node count for smooth error models.
pub const DEFAULT_QUADRATURE_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisFn {
    /// `H(anchor - r)`.
    Smoothed { anchor: f64 },
    /// `r^p`, `p ∈ {0, 1, 2}`.
    Monomial(u32),
    /// `b_x`, whose inner product with `f''` is `f(x)`.
    PointEval { at: f64 },
}

/// Weights `(left, right, constant)` of `b_x = left (x-r)_+ + right (r-x)_+ + constant`.
pub fn point_eval_weights(lower: f64, upper: f64, x: f64) -> (f64, f64, f64) {
    let (a, b) = (x - lower, upper - x);
    let w3 = (upper - lower).powi(3);
    (b * b * (b + 3.0 * a) / w3, a * a * (a + 3.0 * b) / w3, -2.0 * a * a * b * b / w3)
}

/// Inner products on `[l, u]` involving smoothed hinges `H(y - r)`.
///
/// Everything except smoothed-by-smoothed products is closed form in the
/// iterated CDF integrals. Smoothed-by-smoothed products are exact for
/// point-mass and empirical errors (hinge decomposition) and use composite
/// Gauss-Legendre quadrature otherwise.
#[derive(Debug)]
pub struct ErrorKernel {
    lower: f64,
    upper: f64,
    error: Arc<ErrorModel>,
    rule: Option<CompositeRule>,
}

impl ErrorKernel {
    pub fn new(lower: f64, upper: f64, error: Arc<ErrorModel>, quadrature_nodes: usize) -> Self {
        let rule = match *error {
            ErrorModel::PointMass { .. } | ErrorModel::Empirical(_) => None,
            _ => Some(CompositeRule::gauss3(lower, upper, quadrature_nodes, &[])),
        };
        Self {
            lower,
            upper,
            error,
            rule,
        }
    }

    pub fn error(&self) -> &ErrorModel {
        &self.error
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn uses_quadrature(&self) -> bool {
        self.rule.is_some()
    }

    fn hk(&self, order: usize, v: f64) -> f64 {
        self.error.cdf_integral(order, v)
    }

    /// `∫_l^u H(y - r) r^p dr`.
    pub fn smoothed_monomial(&self, y: f64, p: u32) -> f64 {
        // I(k, p) = H_{k+1}(y-l) l^p - H_{k+1}(y-u) u^p + p I(k+1, p-1)
        fn rec(k: &ErrorKernel, order: usize, p: u32, y: f64) -> f64 {
            let (l, u) = (k.lower, k.upper);
            let boundary =
                k.hk(order + 1, y - l) * l.powi(p as i32) - k.hk(order + 1, y - u) * u.powi(p as i32);
            if p == 0 {
                boundary
            } else {
                boundary + p as f64 * rec(k, order + 1, p - 1, y)
            }
        }
        rec(self, 1, p, y)
    }

    /// `∫_l^u H(y - r) (x - r)_+ dr` for any real `x`.
    pub fn smoothed_hinge_left(&self, y: f64, x: f64) -> f64 {
        let (l, u) = (self.lower, self.upper);
        if x <= l {
            return 0.0;
        }
        let c = x.min(u);
        self.hk(2, y - l) * (x - l) - self.hk(2, y - c) * (x - c) - self.hk(3, y - l) + self.hk(3, y - c)
    }

    /// `∫_l^u H(y - r) (r - x)_+ dr` for any real `x`.
    pub fn smoothed_hinge_right(&self, y: f64, x: f64) -> f64 {
        let (l, u) = (self.lower, self.upper);
        if x >= u {
            return 0.0;
        }
        let c = x.max(l);
        -self.hk(2, y - u) * (u - x) + self.hk(2, y - c) * (c - x) + self.hk(3, y - c) - self.hk(3, y - u)
    }

    /// `⟨h_y, b_x⟩`, i.e. the convolved response of a point evaluation.
    pub fn smoothed_point_eval(&self, y: f64, x: f64) -> f64 {
        let (wl, wr, w0) = point_eval_weights(self.lower, self.upper, x);
        wl * self.smoothed_hinge_left(y, x)
            + wr * self.smoothed_hinge_right(y, x)
            + w0 * self.smoothed_monomial(y, 0)
    }

    /// `H(y - r)` at every quadrature node (smooth models only).
    pub fn smoothed_on_nodes(&self, y: f64) -> Option<Vec<f64>> {
        self.rule
            .as_ref()
            .map(|rule| rule.nodes.iter().map(|&r| self.hk(1, y - r)).collect())
    }

    /// Quadrature-weighted node values; `⟨h_y, h_a⟩ = weighted(y) · on_nodes(a)`.
    pub fn weighted_on_nodes(&self, y: f64) -> Option<Vec<f64>> {
        self.rule.as_ref().map(|rule| {
            rule.nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&r, &w)| w * self.hk(1, y - r))
                .collect()
        })
    }

    /// `⟨h_y, h_a⟩`.
    pub fn smoothed_smoothed(&self, y: f64, a: f64) -> f64 {
        match &*self.error {
            ErrorModel::PointMass { at } => self.smoothed_hinge_left(y, a - at),
            ErrorModel::Empirical(e) => {
                let vals = e.values();
                vals.iter().map(|&ej| self.smoothed_hinge_left(y, a - ej)).sum::<f64>() / vals.len() as f64
            }
            _ => {
                let rule = self.rule.as_ref().expect("smooth models carry a rule");
                rule.nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&r, &w)| w * self.hk(1, y - r) * self.hk(1, a - r))
                    .sum()
            }
        }
    }
}

/// Support, anchors, constraint points and error model defining `k_1..k_{n+k}`.
#[derive(Debug, Clone)]
pub struct BasisSet {
    anchors: Vec<f64>,
    constraint_points: Vec<f64>,
    kernel: Arc<ErrorKernel>,
    // H(anchor - r) on the quadrature nodes, smooth models only
    anchor_nodes: Option<Vec<Vec<f64>>>,
}

impl BasisSet {
    pub fn new(
        support: (f64, f64),
        anchors: Vec<f64>,
        constraint_points: Vec<f64>,
        error: Arc<ErrorModel>,
        quadrature_nodes: usize,
    ) -> Result<Self> {
        let (l, u) = support;
        ensure_finite("support lower bound", l)?;
        ensure_finite("support upper bound", u)?;
        if l >= u {
            return Err(PmleError::InvalidArgument(format!("support [{l}, {u}] is empty")));
        }
        error.validate()?;
        let kernel = Arc::new(ErrorKernel::new(l, u, error, quadrature_nodes));
        Self::with_kernel(kernel, anchors, constraint_points)
    }

    /// Constraint points `l + m (u - l) / (count + 1)`, `m = 1..=count`.
    pub fn even_constraint_points(support: (f64, f64), count: usize) -> Vec<f64> {
        let (l, u) = support;
        (1..=count)
            .map(|m| l + m as f64 * (u - l) / (count + 1) as f64)
            .collect()
    }

    /// Builds a basis sharing an existing kernel (and its quadrature rule).
    pub fn with_kernel(kernel: Arc<ErrorKernel>, anchors: Vec<f64>, constraint_points: Vec<f64>) -> Result<Self> {
        let (l, u) = kernel.support();
        for &a in &anchors {
            ensure_finite("anchor", a)?;
        }
        for w in constraint_points.windows(2) {
            if w[1] <= w[0] {
                return Err(PmleError::InvalidArgument(
                    "constraint points must be strictly increasing".into(),
                ));
            }
        }
        if constraint_points.iter().any(|&x| x <= l || x >= u) {
            return Err(PmleError::InvalidArgument(format!(
                "constraint points must lie strictly inside ({l}, {u})"
            )));
        }
        let anchor_nodes = if kernel.uses_quadrature() {
            Some(anchors.iter().map(|&a| kernel.smoothed_on_nodes(a).unwrap()).collect())
        } else {
            None
        };
        Ok(Self {
            anchors,
            constraint_points,
            kernel,
            anchor_nodes,
        })
    }

    pub fn support(&self) -> (f64, f64) {
        self.kernel.support()
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    pub fn constraint_points(&self) -> &[f64] {
        &self.constraint_points
    }

    pub fn error(&self) -> &ErrorModel {
        self.kernel.error()
    }

    pub fn kernel(&self) -> &Arc<ErrorKernel> {
        &self.kernel
    }

    pub fn n_anchors(&self) -> usize {
        self.anchors.len()
    }

    /// Index of the constant monomial; `1, r, r²` follow at `+0, +1, +2`.
    pub fn monomial_offset(&self) -> usize {
        self.anchors.len()
    }

    /// Index of the first point-evaluation function.
    pub fn point_eval_offset(&self) -> usize {
        self.anchors.len() + 3
    }

    /// Total basis size `n + k`.
    pub fn len(&self) -> usize {
        self.anchors.len() + 3 + self.constraint_points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn function(&self, i: usize) -> Result<BasisFn> {
        let n = self.anchors.len();
        if i < n {
            Ok(BasisFn::Smoothed { anchor: self.anchors[i] })
        } else if i < n + 3 {
            Ok(BasisFn::Monomial((i - n) as u32))
        } else if i < self.len() {
            Ok(BasisFn::PointEval {
                at: self.constraint_points[i - n - 3],
            })
        } else {
            Err(PmleError::IndexOutOfRange { index: i, len: self.len() })
        }
    }

    fn functions(&self) -> impl Iterator<Item = BasisFn> + '_ {
        (0..self.len()).map(|i| self.function(i).unwrap())
    }

    fn eval_fn(&self, f: BasisFn, r: f64) -> f64 {
        let (l, u) = self.support();
        match f {
            BasisFn::Smoothed { anchor } => self.kernel.hk(1, anchor - r),
            BasisFn::Monomial(p) => r.powi(p as i32),
            BasisFn::PointEval { at } => {
                let (wl, wr, w0) = point_eval_weights(l, u, at);
                wl * (at - r).max(0.0) + wr * (r - at).max(0.0) + w0
            }
        }
    }

    /// `k_i(r)`.
    pub fn eval_basis(&self, i: usize, r: f64) -> Result<f64> {
        let f = self.function(i)?;
        ensure_finite("eval_basis", r)?;
        Ok(self.eval_fn(f, r))
    }

    // Exact inner product of two functions that are quadratic between kinks.
    fn piecewise_inner(&self, a: BasisFn, b: BasisFn) -> f64 {
        let (l, u) = self.support();
        let mut breaks = Vec::with_capacity(2);
        for f in [a, b] {
            if let BasisFn::PointEval { at } = f {
                breaks.push(at);
            }
        }
        breaks.sort_by(f64::total_cmp);
        piecewise_gauss(l, u, &breaks, |r| self.eval_fn(a, r) * self.eval_fn(b, r))
    }

    fn smoothed_with(&self, y: f64, f: BasisFn) -> f64 {
        match f {
            BasisFn::Smoothed { anchor } => self.kernel.smoothed_smoothed(y, anchor),
            BasisFn::Monomial(p) => self.kernel.smoothed_monomial(y, p),
            BasisFn::PointEval { at } => self.kernel.smoothed_point_eval(y, at),
        }
    }

    /// `⟨h_y, k_j⟩` for every basis index: the row that turns coefficients
    /// into the convolved density at `y`.
    pub fn response(&self, y: f64) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.len());
        match (&self.anchor_nodes, self.kernel.weighted_on_nodes(y)) {
            (Some(nodes), Some(weighted)) => {
                row.extend(nodes.iter().map(|a| dot(a, &weighted)));
            }
            _ => row.extend(self.anchors.iter().map(|&a| self.kernel.smoothed_smoothed(y, a))),
        }
        row.extend(
            self.functions()
                .skip(self.anchors.len())
                .map(|f| self.smoothed_with(y, f)),
        );
        row
    }

    /// The Gram matrix `A_ij = ⟨k_i, k_j⟩` on `[l, u]`.
    pub fn gram_matrix(&self) -> Result<GramMatrix> {
        let m = self.len();
        let n = self.anchors.len();
        let mut a = DMatrix::zeros(m, m);
        for i in 0..n {
            let row = self.response(self.anchors[i]);
            for (j, v) in row.into_iter().enumerate().skip(i) {
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let (l, u) = self.support();
        for i in n..m {
            for j in i..m {
                let v = match (self.function(i)?, self.function(j)?) {
                    (BasisFn::Monomial(p), BasisFn::Monomial(q)) => {
                        let d = (p + q + 1) as i32;
                        (u.powi(d) - l.powi(d)) / d as f64
                    }
                    (fi, fj) => self.piecewise_inner(fi, fj),
                };
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        if let Some(bad) = a.iter().find(|v| !v.is_finite()) {
            return Err(PmleError::NonFinite {
                context: "gram_matrix",
                value: *bad,
            });
        }
        Ok(GramMatrix { entries: a })
    }

    /// `⟨k_j, (x - r)_+⟩` for every `j`; dotted with `α` gives `f(x)`.
    pub fn hinge_left_row(&self, x: f64) -> Vec<f64> {
        self.hinge_row(x, true)
    }

    /// `⟨k_j, (r - x)_+⟩`; the right-hand evaluation route.
    pub fn hinge_right_row(&self, x: f64) -> Vec<f64> {
        self.hinge_row(x, false)
    }

    fn hinge_row(&self, x: f64, left: bool) -> Vec<f64> {
        let (l, u) = self.support();
        self.functions()
            .map(|f| match f {
                BasisFn::Smoothed { anchor } => {
                    if left {
                        self.kernel.smoothed_hinge_left(anchor, x)
                    } else {
                        self.kernel.smoothed_hinge_right(anchor, x)
                    }
                }
                _ => {
                    let mut breaks = vec![x];
                    if let BasisFn::PointEval { at } = f {
                        breaks.push(at);
                        breaks.sort_by(f64::total_cmp);
                    }
                    let hinge = |r: f64| if left { (x - r).max(0.0) } else { (r - x).max(0.0) };
                    piecewise_gauss(l, u, &breaks, |r| self.eval_fn(f, r) * hinge(r))
                }
            })
            .collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric positive semidefinite matrix of basis inner products.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
}

impl GramMatrix {
    pub fn from_matrix(entries: DMatrix<f64>) -> Self {
        Self { entries }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn max_asymmetry(&self) -> f64 {
        let m = &self.entries;
        let mut worst: f64 = 0.0;
        for i in 0..m.nrows() {
            for j in 0..i {
                let scale = m[(i, j)].abs().max(m[(j, i)].abs()).max(1e-300);
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs() / scale);
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// `αᵀ A α`, the smoothness penalty `∫ f''²`.
    pub fn quadratic_form(&self, alpha: &DVector<f64>) -> f64 {
        alpha.dot(&(&self.entries * alpha))
    }
}

/// Coefficients of `f'' = Σ α_j k_j` over a particular basis.
#[derive(Debug, Clone)]
pub struct CoefficientVector {
    basis: Arc<BasisSet>,
    values: DVector<f64>,
}

impl CoefficientVector {
    pub fn new(basis: Arc<BasisSet>, values: DVector<f64>) -> Result<Self> {
        if values.len() != basis.len() {
            return Err(PmleError::DimensionMismatch {
                expected: basis.len(),
                found: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(PmleError::NonFinite {
                context: "coefficient vector",
                value: *bad,
            });
        }
        Ok(Self { basis, values })
    }

    pub fn basis(&self) -> &Arc<BasisSet> {
        &self.basis
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    /// `f(x)` via the left hinge form; zero outside the support.
    pub fn eval_density(&self, x: f64) -> f64 {
        let (l, u) = self.basis.support();
        if !(x >= l && x <= u) {
            return 0.0;
        }
        dot(&self.basis.hinge_left_row(x), self.values.as_slice())
    }

    /// `f(x)` via the right hinge form.
    pub fn eval_density_right(&self, x: f64) -> f64 {
        let (l, u) = self.basis.support();
        if !(x >= l && x <= u) {
            return 0.0;
        }
        dot(&self.basis.hinge_right_row(x), self.values.as_slice())
    }

    /// `f''(r)`.
    pub fn second_derivative(&self, r: f64) -> f64 {
        (0..self.basis.len())
            .map(|j| self.values[j] * self.basis.eval_fn(self.basis.function(j).unwrap(), r))
            .sum()
    }

    /// Convolved density `(f * f_e)(y)` at an arbitrary point.
    pub fn convolved_at(&self, y: f64) -> f64 {
        dot(&self.basis.response(y), self.values.as_slice())
    }

    /// Residuals of the three equality rows `⟨f'', 1⟩, ⟨f'', r⟩, ⟨f'', r²⟩`.
    pub fn equality_residuals(&self, gram: &GramMatrix) -> [f64; 3] {
        let off = self.basis.monomial_offset();
        let row = |i: usize| gram.matrix().row(off + i).dot(&self.values.transpose());
        [row(0), row(1), row(2)]
    }

    /// Values `f(x_m)` at the constraint points, read off the Gram rows.
    pub fn constraint_values(&self, gram: &GramMatrix) -> Vec<f64> {
        let off = self.basis.point_eval_offset();
        (off..self.basis.len())
            .map(|i| gram.matrix().row(i).dot(&self.values.transpose()))
            .collect()
    }
}

/// `Σ_j A_ij α_j`: the convolved density at anchor `i`.
pub fn convolved_density(coeffs: &CoefficientVector, gram: &GramMatrix, i: usize) -> Result<f64> {
    if i >= coeffs.basis().n_anchors() {
        return Err(PmleError::IndexOutOfRange {
            index: i,
            len: coeffs.basis().n_anchors(),
        });
    }
    Ok(gram.matrix().row(i).dot(&coeffs.values().transpose()))
}
