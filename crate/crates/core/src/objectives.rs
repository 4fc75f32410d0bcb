//! Local function oracles: gradients, Fenchel-conjugate gradients and the
//! convexity constants α_i, β_i, plus the averaged global objective
//! f̄ = (1/n)·Σ f_i and its minimizer.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::block::ParameterBlock;
use crate::error::{check_dim, Error, Result};
use crate::topology::symmetric_eigenvalues;

/// Inner Newton iterations allowed for a conjugate-gradient evaluation.
pub const CONJ_MAX_ITERATIONS: usize = 100;
/// Relative tolerance ‖∇f(θ) − x‖ ≤ tol·max(1, ‖x‖) of the conjugate solver.
pub const CONJ_TOLERANCE: f64 = 1e-10;
/// Gradient-norm target of [`reference_solution`].
pub const REFERENCE_TOLERANCE: f64 = 1e-13;

/// Oracle for one node's α-strongly convex, β-smooth function f_i.
pub trait LocalObjective: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, theta: &DVector<f64>) -> f64;
    fn grad(&self, theta: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64>;

    /// ∇f*(x) = argmin_θ f(θ) − xᵀθ. `warm` seeds iterative solvers.
    fn conj_grad(&self, x: &DVector<f64>, warm: Option<&DVector<f64>>) -> Result<DVector<f64>>;

    fn alpha(&self) -> f64;
    fn beta(&self) -> f64;

    /// Constant matrices bracketing the Hessian everywhere.
    fn hessian_bounds(&self) -> (DMatrix<f64>, DMatrix<f64>);

    /// `(H, b, constant)` when f(θ) = ½θᵀHθ − bᵀθ + constant.
    fn as_quadratic(&self) -> Option<(DMatrix<f64>, DVector<f64>, f64)> {
        None
    }

    /// g(θ) = f(θ) − (s/2)‖θ‖², requiring s < α.
    fn shifted(&self, s: f64) -> Result<Arc<dyn LocalObjective>>;
}

fn extreme_eigenvalues(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    if m.nrows() == 0 {
        return Ok((0.0, 0.0));
    }
    let ev = symmetric_eigenvalues(m)?;
    Ok((ev[ev.len() - 1], ev[0]))
}

fn check_shift(alpha: f64, s: f64) -> Result<()> {
    if s < alpha && s.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "shift {s} would remove all strong convexity (alpha = {alpha})"
        )))
    }
}

/// f(θ) = ½θᵀHθ − bᵀθ + constant with H ≻ 0.
#[derive(Clone)]
pub struct Quadratic {
    h: DMatrix<f64>,
    b: DVector<f64>,
    constant: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: f64,
    beta: f64,
}

impl fmt::Debug for Quadratic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Quadratic")
            .field("dim", &self.b.len())
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .finish()
    }
}

impl Quadratic {
    pub fn new(h: DMatrix<f64>, b: DVector<f64>, constant: f64) -> Result<Self> {
        check_dim(h.nrows(), b.len())?;
        check_dim(h.nrows(), h.ncols())?;
        let (alpha, beta) = extreme_eigenvalues(&h)?;
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "quadratic is not strongly convex (smallest Hessian eigenvalue {alpha:e})"
            )));
        }
        let chol = Cholesky::new(h.clone())
            .ok_or_else(|| Error::InvalidParameter("Hessian is not positive definite".into()))?;
        Ok(Self {
            h,
            b,
            constant,
            chol,
            alpha,
            beta,
        })
    }

    pub fn hessian_matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn linear_term(&self) -> &DVector<f64> {
        &self.b
    }
}

impl LocalObjective for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        0.5 * theta.dot(&(&self.h * theta)) - self.b.dot(theta) + self.constant
    }

    fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.h * theta - &self.b
    }

    fn hessian(&self, _theta: &DVector<f64>) -> DMatrix<f64> {
        self.h.clone()
    }

    fn conj_grad(&self, x: &DVector<f64>, _warm: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.chol.solve(&(x + &self.b)))
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn hessian_bounds(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.h.clone(), self.h.clone())
    }

    fn as_quadratic(&self) -> Option<(DMatrix<f64>, DVector<f64>, f64)> {
        Some((self.h.clone(), self.b.clone(), self.constant))
    }

    fn shifted(&self, s: f64) -> Result<Arc<dyn LocalObjective>> {
        check_shift(self.alpha, s)?;
        let d = self.dim();
        let h = &self.h - DMatrix::identity(d, d) * s;
        Ok(Arc::new(Quadratic::new(h, self.b.clone(), self.constant)?))
    }
}

/// Regularized least squares on one shard, f(θ) = (1/m)‖y − Xᵀθ‖² + c‖θ‖².
///
/// `x` is d×m with one sample per column. An empty shard leaves the ridge term.
pub fn make_least_squares(x: &DMatrix<f64>, y: &DVector<f64>, c: f64) -> Result<Quadratic> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ridge coefficient c = {c} must be positive"
        )));
    }
    check_dim(x.ncols(), y.len())?;
    let d = x.nrows();
    let m = x.ncols();
    let mut h = DMatrix::identity(d, d) * (2.0 * c);
    let mut b = DVector::zeros(d);
    let mut constant = 0.0;
    if m > 0 {
        let scale = 2.0 / m as f64;
        h += x * x.transpose() * scale;
        b = x * y * scale;
        constant = y.norm_squared() / m as f64;
    }
    Quadratic::new(h, b, constant)
}

/// f(θ) = (1/m)Σ_j ln(1 + exp(−y_j x_jᵀθ)) + c‖θ‖², labels in {−1, 1}.
#[derive(Clone)]
pub struct Logistic {
    x: DMatrix<f64>,
    y: DVector<f64>,
    c: f64,
    alpha: f64,
    beta: f64,
    /// λ_max(X Xᵀ)/(4m), cached for the Hessian bound.
    curvature: DMatrix<f64>,
}

impl fmt::Debug for Logistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Logistic")
            .field("dim", &self.x.nrows())
            .field("samples", &self.x.ncols())
            .field("c", &self.c)
            .field("beta", &self.beta)
            .finish()
    }
}

pub fn make_logistic(x: &DMatrix<f64>, y: &DVector<f64>, c: f64) -> Result<Logistic> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ridge coefficient c = {c} must be positive"
        )));
    }
    check_dim(x.ncols(), y.len())?;
    if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidParameter(format!("label {bad} not in {{-1, 1}}")));
    }
    let d = x.nrows();
    let m = x.ncols();
    let curvature = if m > 0 {
        x * x.transpose() / (4.0 * m as f64)
    } else {
        DMatrix::zeros(d, d)
    };
    let (_, top) = extreme_eigenvalues(&curvature)?;
    Ok(Logistic {
        x: x.clone(),
        y: y.clone(),
        c,
        alpha: 2.0 * c,
        beta: 2.0 * c + top.max(0.0),
        curvature,
    })
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl Logistic {
    pub fn samples(&self) -> usize {
        self.x.ncols()
    }

    pub fn ridge(&self) -> f64 {
        self.c
    }

    /// Margins y_j x_jᵀθ.
    fn margins(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.x.tr_mul(theta).component_mul(&self.y)
    }
}

impl LocalObjective for Logistic {
    fn dim(&self) -> usize {
        self.x.nrows()
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        let m = self.samples();
        let loss = if m > 0 {
            self.margins(theta).iter().map(|&z| softplus(-z)).sum::<f64>() / m as f64
        } else {
            0.0
        };
        loss + self.c * theta.norm_squared()
    }

    fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        let m = self.samples();
        let mut g = theta * (2.0 * self.c);
        if m > 0 {
            let z = self.margins(theta);
            let coef = DVector::from_fn(m, |j, _| -self.y[j] * sigmoid(-z[j]) / m as f64);
            g += &self.x * coef;
        }
        g
    }

    fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let m = self.samples();
        let mut h = DMatrix::identity(d, d) * (2.0 * self.c);
        if m > 0 {
            let z = self.margins(theta);
            let mut weighted = self.x.clone();
            for (j, mut col) in weighted.column_iter_mut().enumerate() {
                let s = sigmoid(z[j]);
                col *= s * (1.0 - s) / m as f64;
            }
            h += weighted * self.x.transpose();
        }
        h
    }

    fn conj_grad(&self, x: &DVector<f64>, warm: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        if self.samples() == 0 {
            return Ok(x / (2.0 * self.c));
        }
        newton_conjugate(self, x, warm)
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn hessian_bounds(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.dim();
        let ridge = DMatrix::identity(d, d) * (2.0 * self.c);
        (ridge.clone(), ridge + &self.curvature)
    }

    fn shifted(&self, s: f64) -> Result<Arc<dyn LocalObjective>> {
        check_shift(self.alpha, s)?;
        Ok(Arc::new(make_logistic(&self.x, &self.y, self.c - s / 2.0)?))
    }
}

/// Damped Newton on θ ↦ f(θ) − xᵀθ.
///
/// A step is accepted on sufficient decrease of the objective or, near the
/// optimum where function values stop resolving, on a drop of the gradient norm.
pub fn newton_conjugate(
    f: &dyn LocalObjective,
    x: &DVector<f64>,
    warm: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let tol = CONJ_TOLERANCE * x.norm().max(1.0);
    let mut theta = warm.cloned().unwrap_or_else(|| DVector::zeros(f.dim()));
    let mut residual = f.grad(&theta) - x;
    let mut phi = f.value(&theta) - x.dot(&theta);
    for _ in 0..CONJ_MAX_ITERATIONS {
        let rnorm = residual.norm();
        if rnorm <= tol {
            return Ok(theta);
        }
        let h = f.hessian(&theta);
        let step = Cholesky::new(h)
            .ok_or_else(|| Error::Convergence {
                what: "conjugate Newton solve",
                iterations: 0,
                residual: rnorm,
            })?
            .solve(&residual);
        let slope = residual.dot(&step);
        let mut t = 1.0;
        loop {
            let cand = &theta - &step * t;
            let cand_res = f.grad(&cand) - x;
            let cand_phi = f.value(&cand) - x.dot(&cand);
            if cand_phi <= phi - 1e-4 * t * slope || cand_res.norm() < rnorm {
                theta = cand;
                residual = cand_res;
                phi = cand_phi;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(Error::Convergence {
                    what: "conjugate line search",
                    iterations: CONJ_MAX_ITERATIONS,
                    residual: rnorm,
                });
            }
        }
    }
    let residual = residual.norm();
    if residual <= tol {
        Ok(theta)
    } else {
        Err(Error::Convergence {
            what: "conjugate Newton solve",
            iterations: CONJ_MAX_ITERATIONS,
            residual,
        })
    }
}

/// The averaged function f̄ = (1/n)Σ f_i with its constants α_g, β_g.
#[derive(Debug, Clone)]
pub struct GlobalObjective {
    locals: Vec<Arc<dyn LocalObjective>>,
    alpha_g: f64,
    beta_g: f64,
    /// Mean (H, b, constant) when every local is quadratic.
    aggregate: Option<(DMatrix<f64>, DVector<f64>, f64)>,
}

impl GlobalObjective {
    /// α_g and β_g are the extreme eigenvalues of the averaged Hessian bounds:
    /// exact for quadratics, the sigmoid-curvature bound for logistic losses.
    pub fn new(locals: Vec<Arc<dyn LocalObjective>>) -> Result<Self> {
        let first = locals
            .first()
            .ok_or_else(|| Error::InvalidParameter("no local objectives".into()))?;
        let d = first.dim();
        for f in &locals {
            check_dim(d, f.dim())?;
        }
        let n = locals.len() as f64;
        let mut lower = DMatrix::zeros(d, d);
        let mut upper = DMatrix::zeros(d, d);
        for f in &locals {
            let (lo, hi) = f.hessian_bounds();
            lower += lo;
            upper += hi;
        }
        let (alpha_g, _) = extreme_eigenvalues(&(lower / n))?;
        let (_, beta_g) = extreme_eigenvalues(&(upper / n))?;
        let aggregate = locals
            .iter()
            .map(|f| f.as_quadratic())
            .collect::<Option<Vec<_>>>()
            .map(|qs| {
                let mut h = DMatrix::zeros(d, d);
                let mut b = DVector::zeros(d);
                let mut c = 0.0;
                for (hi, bi, ci) in qs {
                    h += hi;
                    b += bi;
                    c += ci;
                }
                (h / n, b / n, c / n)
            });
        Ok(Self {
            locals,
            alpha_g,
            beta_g,
            aggregate,
        })
    }

    pub fn locals(&self) -> &[Arc<dyn LocalObjective>] {
        &self.locals
    }

    pub fn n(&self) -> usize {
        self.locals.len()
    }

    pub fn dim(&self) -> usize {
        self.locals[0].dim()
    }

    pub fn alpha_g(&self) -> f64 {
        self.alpha_g
    }

    pub fn beta_g(&self) -> f64 {
        self.beta_g
    }

    pub fn kappa_g(&self) -> f64 {
        self.beta_g / self.alpha_g
    }

    /// min_i α_i.
    pub fn alpha_local(&self) -> f64 {
        self.locals.iter().map(|f| f.alpha()).fold(f64::INFINITY, f64::min)
    }

    /// max_i β_i.
    pub fn beta_local(&self) -> f64 {
        self.locals.iter().map(|f| f.beta()).fold(0.0, f64::max)
    }

    /// κ_l = max_i β_i / min_i α_i.
    pub fn kappa_l(&self) -> f64 {
        self.beta_local() / self.alpha_local()
    }

    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        match &self.aggregate {
            Some((h, b, c)) => 0.5 * theta.dot(&(h * theta)) - b.dot(theta) + c,
            None => self.locals.iter().map(|f| f.value(theta)).sum::<f64>() / self.n() as f64,
        }
    }

    pub fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        match &self.aggregate {
            Some((h, b, _)) => h * theta - b,
            None => {
                let mut g = DVector::zeros(self.dim());
                for f in &self.locals {
                    g += f.grad(theta);
                }
                g / self.n() as f64
            }
        }
    }

    pub fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        match &self.aggregate {
            Some((h, _, _)) => h.clone(),
            None => {
                let d = self.dim();
                let mut h = DMatrix::zeros(d, d);
                for f in &self.locals {
                    h += f.hessian(theta);
                }
                h / self.n() as f64
            }
        }
    }

    /// f̄ evaluated at every column of `block`.
    pub fn values(&self, block: &ParameterBlock) -> Vec<f64> {
        (0..block.nodes())
            .into_par_iter()
            .map(|i| self.value(&block.column(i)))
            .collect()
    }
}

/// Minimizer of f̄ by full-batch damped Newton, to gradient norm ≤ 1e−13.
pub fn reference_solution(global: &GlobalObjective) -> Result<DVector<f64>> {
    let mut theta = DVector::zeros(global.dim());
    let mut grad = global.grad(&theta);
    let mut value = global.value(&theta);
    let max_iter = 200;
    for _ in 0..max_iter {
        let gnorm = grad.norm();
        if gnorm <= REFERENCE_TOLERANCE {
            return Ok(theta);
        }
        let step = Cholesky::new(global.hessian(&theta))
            .ok_or_else(|| Error::Convergence {
                what: "reference Newton solve",
                iterations: 0,
                residual: gnorm,
            })?
            .solve(&grad);
        let slope = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let cand = &theta - &step * t;
            let cand_grad = global.grad(&cand);
            let cand_value = global.value(&cand);
            if cand_value <= value - 1e-4 * t * slope || cand_grad.norm() < gnorm {
                theta = cand;
                grad = cand_grad;
                value = cand_value;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(Error::Convergence {
                    what: "reference line search",
                    iterations: max_iter,
                    residual: gnorm,
                });
            }
        }
    }
    Err(Error::Convergence {
        what: "reference Newton solve",
        iterations: max_iter,
        residual: grad.norm(),
    })
}

/// Proxies g_i = f_i − ((α_i − ᾱ)/2)‖θ‖², each with strong convexity ᾱ.
#[derive(Debug, Clone)]
pub struct Rescaled {
    pub objectives: Vec<Arc<dyn LocalObjective>>,
    pub alpha_bar: f64,
    /// max_i(β_i − α_i)/ᾱ − 1, the displayed improved condition number.
    pub kappa_formula: f64,
}

impl Rescaled {
    /// max_i β(g_i) / ᾱ measured on the proxies themselves.
    pub fn kappa_measured(&self) -> f64 {
        let beta = self.objectives.iter().map(|g| g.beta()).fold(0.0, f64::max);
        beta / self.alpha_bar
    }
}

/// Average-strong-convexity rescaling. Σ g_i = Σ f_i, so f̄ is unchanged.
pub fn rescale_average_strong_convexity(locals: &[Arc<dyn LocalObjective>]) -> Result<Rescaled> {
    if locals.is_empty() {
        return Err(Error::InvalidParameter("no local objectives".into()));
    }
    let alpha_bar = locals.iter().map(|f| f.alpha()).sum::<f64>() / locals.len() as f64;
    if !(alpha_bar > 0.0) {
        return Err(Error::InvalidParameter(format!("average strong convexity {alpha_bar} <= 0")));
    }
    let kappa_formula = locals
        .iter()
        .map(|f| f.beta() - f.alpha())
        .fold(f64::NEG_INFINITY, f64::max)
        / alpha_bar
        - 1.0;
    let objectives = locals
        .iter()
        .map(|f| f.shifted(f.alpha() - alpha_bar))
        .collect::<Result<Vec<_>>>()?;
    Ok(Rescaled {
        objectives,
        alpha_bar,
        kappa_formula,
    })
}
