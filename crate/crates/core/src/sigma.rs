//! Sigma-point and quadrature rules for Gaussian expectations, and the
//! moment-matching transform built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Default refusal threshold for tensor-product Gauss-Hermite rules.
pub const GH_MAX_POINTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Unscented,
    Cubature,
    GaussHermite,
}

/// Rule selection plus its spread parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformParams {
    pub rule: Rule,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gh_order: usize,
    pub max_points: usize,
}

impl Default for TransformParams {
    fn default() -> Self {
        Self {
            rule: Rule::Unscented,
            alpha: 0.0,
            beta: 1.0,
            lambda: 0.0,
            gh_order: 3,
            max_points: GH_MAX_POINTS,
        }
    }
}

impl TransformParams {
    pub fn unscented(alpha: f64, beta: f64, lambda: f64) -> Self {
        Self {
            rule: Rule::Unscented,
            alpha,
            beta,
            lambda,
            ..Self::default()
        }
    }

    pub fn cubature() -> Self {
        Self {
            rule: Rule::Cubature,
            ..Self::default()
        }
    }

    pub fn gauss_hermite(order: usize) -> Self {
        Self {
            rule: Rule::GaussHermite,
            gh_order: order,
            ..Self::default()
        }
    }

    /// Builds the point set of the configured rule for `N(mu, sigma)`.
    pub fn points(&self, mu: &Vector, sigma: &Matrix) -> Result<SigmaPointSet> {
        match self.rule {
            Rule::Unscented => unscented_points(mu, sigma, self),
            Rule::Cubature => cubature_points(mu, sigma),
            Rule::GaussHermite => gauss_hermite_points_capped(mu, sigma, self.gh_order, self.max_points),
        }
    }
}

/// Collocation points with mean and covariance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPointSet {
    points: Vec<Vector>,
    mean_weights: Vec<f64>,
    cov_weights: Vec<f64>,
}

fn factor(mu: &Vector, sigma: &Matrix, scale: f64) -> Result<Matrix> {
    linalg::check_dim("sigma-point covariance", mu.len(), sigma.nrows())?;
    linalg::check_dim("sigma-point covariance", mu.len(), sigma.ncols())?;
    Ok(linalg::cholesky(&(sigma * scale), "sigma-point covariance")?.unpack())
}

/// `2n + 1` unscented points from the lower Cholesky factor of `(n+λ)Σ`.
pub fn unscented_points(mu: &Vector, sigma: &Matrix, params: &TransformParams) -> Result<SigmaPointSet> {
    let n = mu.len();
    let spread = n as f64 + params.lambda;
    if !(spread > 0.0) {
        return Err(Error::InvalidParameter(format!("n + lambda must be positive, got {spread}")));
    }
    let l = factor(mu, sigma, spread)?;
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(mu.clone());
    for i in 0..n {
        points.push(mu + l.column(i));
    }
    for i in 0..n {
        points.push(mu - l.column(i));
    }
    let w0 = params.lambda / spread;
    let wi = 1.0 / (2.0 * spread);
    let mut mean_weights = vec![wi; 2 * n + 1];
    mean_weights[0] = w0;
    let mut cov_weights = mean_weights.clone();
    cov_weights[0] = w0 + (1.0 - params.alpha * params.alpha + params.beta);
    Ok(SigmaPointSet {
        points,
        mean_weights,
        cov_weights,
    })
}

/// Third-degree spherical-radial cubature: `2n` points `μ ± √n Lᵢ`.
pub fn cubature_points(mu: &Vector, sigma: &Matrix) -> Result<SigmaPointSet> {
    let n = mu.len();
    if n == 0 {
        return Err(Error::InvalidParameter("cubature rule needs n ≥ 1".into()));
    }
    let l = factor(mu, sigma, n as f64)?;
    let mut points = Vec::with_capacity(2 * n);
    for i in 0..n {
        points.push(mu + l.column(i));
    }
    for i in 0..n {
        points.push(mu - l.column(i));
    }
    let w = vec![1.0 / (2 * n) as f64; 2 * n];
    Ok(SigmaPointSet {
        points,
        mean_weights: w.clone(),
        cov_weights: w,
    })
}

/// Tensor-product probabilists' Gauss-Hermite rule mapped through `μ + L ξ`.
pub fn gauss_hermite_points(mu: &Vector, sigma: &Matrix, order: usize) -> Result<SigmaPointSet> {
    gauss_hermite_points_capped(mu, sigma, order, GH_MAX_POINTS)
}

pub fn gauss_hermite_points_capped(
    mu: &Vector,
    sigma: &Matrix,
    order: usize,
    max_points: usize,
) -> Result<SigmaPointSet> {
    if order == 0 {
        return Err(Error::InvalidParameter("Gauss-Hermite order must be ≥ 1".into()));
    }
    let n = mu.len();
    let count = (order as f64).powi(n as i32);
    if count > max_points as f64 {
        return Err(Error::TooManyPoints { count, cap: max_points });
    }
    let l = factor(mu, sigma, 1.0)?;
    let (nodes, weights) = hermite_rule(order);
    let total = count as usize;
    let mut points = Vec::with_capacity(total);
    let mut mean_weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let xi = Vector::from_iterator(n, idx.iter().map(|&k| nodes[k]));
        points.push(mu + &l * xi);
        mean_weights.push(idx.iter().map(|&k| weights[k]).product());
        for d in idx.iter_mut() {
            *d += 1;
            if *d < order {
                break;
            }
            *d = 0;
        }
    }
    Ok(SigmaPointSet {
        points,
        cov_weights: mean_weights.clone(),
        mean_weights,
    })
}

/// Nodes and normalized weights of the `order`-point probabilists'
/// Gauss-Hermite rule (weight function: the standard normal density).
pub fn hermite_rule(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    if order == 1 {
        return (vec![0.0], vec![1.0]);
    }
    // Golub-Welsch seed, then Newton polish on He_order.
    let mut jacobi = Matrix::zeros(order, order);
    for k in 1..order {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));
    let mut weights = Vec::with_capacity(order);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = hermite_eval(order, *x);
            if dp != 0.0 {
                *x -= p / dp;
            }
        }
        let (prev, _) = hermite_eval(order - 1, *x);
        // w = n! / (n² He_{n-1}(x)²) computed as a running product to avoid overflow.
        let mut w = 1.0 / (order as f64 * order as f64 * prev * prev);
        for k in 1..=order {
            w *= k as f64;
        }
        weights.push(w);
    }
    // Symmetrize exactly.
    for i in 0..order / 2 {
        let j = order - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -x;
        nodes[j] = x;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

/// `(He_n(x), He_n'(x))` via the three-term recurrence.
fn hermite_eval(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 1..n {
        let p2 = x * p1 - k as f64 * p0;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * p0)
}

/// Values that can be averaged with sigma-point weights.
pub trait Expectable: Sized {
    fn scaled(&self, w: f64) -> Self;
    fn accumulate(&mut self, other: &Self, w: f64);
    fn all_finite(&self) -> bool;
}

impl Expectable for f64 {
    fn scaled(&self, w: f64) -> Self {
        self * w
    }
    fn accumulate(&mut self, other: &Self, w: f64) {
        *self += w * other;
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl Expectable for Vector {
    fn scaled(&self, w: f64) -> Self {
        self * w
    }
    fn accumulate(&mut self, other: &Self, w: f64) {
        self.axpy(w, other, 1.0);
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl Expectable for Matrix {
    fn scaled(&self, w: f64) -> Self {
        self * w
    }
    fn accumulate(&mut self, other: &Self, w: f64) {
        self.zip_apply(other, |a, b| *a += w * b);
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl<A: Expectable, B: Expectable> Expectable for (A, B) {
    fn scaled(&self, w: f64) -> Self {
        (self.0.scaled(w), self.1.scaled(w))
    }
    fn accumulate(&mut self, other: &Self, w: f64) {
        self.0.accumulate(&other.0, w);
        self.1.accumulate(&other.1, w);
    }
    fn all_finite(&self) -> bool {
        self.0.all_finite() && self.1.all_finite()
    }
}

impl<A: Expectable, B: Expectable, C: Expectable> Expectable for (A, B, C) {
    fn scaled(&self, w: f64) -> Self {
        (self.0.scaled(w), self.1.scaled(w), self.2.scaled(w))
    }
    fn accumulate(&mut self, other: &Self, w: f64) {
        self.0.accumulate(&other.0, w);
        self.1.accumulate(&other.1, w);
        self.2.accumulate(&other.2, w);
    }
    fn all_finite(&self) -> bool {
        self.0.all_finite() && self.1.all_finite() && self.2.all_finite()
    }
}

impl SigmaPointSet {
    /// Builds a set from explicit points and weights.
    pub fn new(points: Vec<Vector>, mean_weights: Vec<f64>, cov_weights: Vec<f64>) -> Result<Self> {
        linalg::check_dim("sigma mean weights", points.len(), mean_weights.len())?;
        linalg::check_dim("sigma covariance weights", points.len(), cov_weights.len())?;
        if points.is_empty() {
            return Err(Error::InvalidParameter("empty sigma-point set".into()));
        }
        let sum: f64 = mean_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("mean weights sum to {sum}")));
        }
        Ok(Self {
            points,
            mean_weights,
            cov_weights,
        })
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn mean_weights(&self) -> &[f64] {
        &self.mean_weights
    }

    pub fn cov_weights(&self) -> &[f64] {
        &self.cov_weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Weighted mean of the points themselves.
    pub fn mean(&self) -> Vector {
        let mut m = self.points[0].scaled(self.mean_weights[0]);
        for (p, &w) in self.points.iter().zip(&self.mean_weights).skip(1) {
            m.accumulate(p, w);
        }
        m
    }

    /// `Σ wₘⁱ fn(χᵢ)`; non-finite results are reported as errors.
    pub fn expect<T, F>(&self, f: F) -> Result<T>
    where
        T: Expectable,
        F: Fn(&Vector) -> T,
    {
        let mut acc: Option<T> = None;
        for (p, &w) in self.points.iter().zip(&self.mean_weights) {
            let v = f(p);
            if !v.all_finite() {
                return Err(Error::NonFinite("integrand at a sigma point"));
            }
            match acc.as_mut() {
                Some(a) => a.accumulate(&v, w),
                None => acc = Some(v.scaled(w)),
            }
        }
        acc.ok_or(Error::InvalidParameter("empty sigma-point set".into()))
    }

    fn propagate<F>(&self, f: F) -> Result<Vec<Vector>>
    where
        F: Fn(&Vector) -> Vector,
    {
        self.points
            .iter()
            .map(|p| {
                let v = f(p);
                linalg::check_finite_vec(&v, "propagated sigma point")?;
                Ok(v)
            })
            .collect()
    }

    fn weighted_mean(&self, values: &[Vector]) -> Vector {
        let mut m = values[0].scaled(self.mean_weights[0]);
        for (v, &w) in values.iter().zip(&self.mean_weights).skip(1) {
            m.accumulate(v, w);
        }
        m
    }

    /// Moment matching: mean and (re-symmetrized) covariance of `f(x)`.
    pub fn moment_match<F>(&self, f: F) -> Result<(Vector, Matrix)>
    where
        F: Fn(&Vector) -> Vector,
    {
        let values = self.propagate(f)?;
        let mean = self.weighted_mean(&values);
        let m = mean.len();
        let mut cov = Matrix::zeros(m, m);
        for (v, &w) in values.iter().zip(&self.cov_weights) {
            let d = v - &mean;
            cov.ger(w, &d, &d, 1.0);
        }
        Ok((mean, linalg::symmetrize(&cov)))
    }

    /// `Σ w_cⁱ (χᵢ − μ)(f(χᵢ) − ȳ)ᵀ`.
    pub fn cross_covariance<F>(&self, f: F) -> Result<Matrix>
    where
        F: Fn(&Vector) -> Vector,
    {
        let values = self.propagate(f)?;
        let y_mean = self.weighted_mean(&values);
        let x_mean = self.mean();
        let mut cross = Matrix::zeros(x_mean.len(), y_mean.len());
        for ((p, v), &w) in self.points.iter().zip(&values).zip(&self.cov_weights) {
            cross.ger(w, &(p - &x_mean), &(v - &y_mean), 1.0);
        }
        Ok(cross)
    }
}
