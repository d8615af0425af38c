//! Fixed-order Gauss-Legendre rules and composite helpers.

/// Three-point rule on [-1, 1]; exact for polynomials up to degree 5.
pub const GL3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// Five-point rule on [-1, 1]; exact for polynomials up to degree 9.
pub const GL5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Integrates `f` over `[a, b]` with a single application of `rule`.
pub fn gauss<F: FnMut(f64) -> f64>(rule: &[(f64, f64)], a: f64, b: f64, mut f: F) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.iter().map(|&(t, w)| w * f(mid + half * t)).sum::<f64>() * half
}

/// Integrates a function that is polynomial between consecutive `breaks`.
///
/// `breaks` must be sorted; pieces outside `[a, b]` are ignored. Exact up to
/// rounding when every piece has degree at most 5.
pub fn piecewise_gauss<F: FnMut(f64) -> f64>(a: f64, b: f64, breaks: &[f64], mut f: F) -> f64 {
    let mut total = 0.0;
    let mut left = a;
    for &x in breaks.iter().filter(|&&x| x > a && x < b) {
        if x > left {
            total += gauss(&GL3, left, x, &mut f);
            left = x;
        }
    }
    total + gauss(&GL3, left, b, &mut f)
}

/// Nodes and weights of a composite rule on a fixed interval.
#[derive(Debug, Clone)]
pub struct CompositeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CompositeRule {
    /// Composite three-point Gauss-Legendre with at least `min_nodes` nodes,
    /// with panel boundaries forced at each of `breaks` inside `(a, b)`.
    pub fn gauss3(a: f64, b: f64, min_nodes: usize, breaks: &[f64]) -> Self {
        let mut edges: Vec<f64> = std::iter::once(a)
            .chain(breaks.iter().copied().filter(|&x| x > a && x < b))
            .chain(std::iter::once(b))
            .collect();
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        let panels = min_nodes.div_ceil(3).max(1);
        let target = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(3 * panels + 3 * edges.len());
        let mut weights = Vec::with_capacity(nodes.capacity());
        for pair in edges.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let pieces = ((hi - lo) / target).ceil().max(1.0) as usize;
            let h = (hi - lo) / pieces as f64;
            for p in 0..pieces {
                let pa = lo + p as f64 * h;
                let mid = pa + 0.5 * h;
                for &(t, w) in &GL3 {
                    nodes.push(mid + 0.5 * h * t);
                    weights.push(0.5 * h * w);
                }
            }
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Trapezoid rule on an evenly spaced grid with spacing `step`.
pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => step * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

/// Simple adaptive Simpson integration, used for test oracles and for CDFs
/// that lack a closed form.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol.max(1e-15 * (left + right).abs()) {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 40)
}
