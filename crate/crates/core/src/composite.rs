//! Dual method for composite objectives f_i(θ) = g_i(B_iθ) + c‖θ‖², where
//! only the proximal operator of g_i* is available.
//!
//! The dual variables are ν_i ∈ R^{m_i} and λ ∈ R^{d×n}; the iteration works
//! with z = λ√W and so only ever multiplies by W. The function minimized is
//!
//! Φ(ν, λ) = Σ_i g_i*(ν_i) + (1/4c) Σ_i ‖B_iᵀν_i + ρ(λ√W)_i‖².
//!
//! Each g_i* is (1/μ)-strongly convex when g_i is μ-smooth. That quadratic
//! part is moved into the smooth term, which makes the smooth term strongly
//! convex and lets the accelerated proximal gradient method use constant
//! momentum.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::block::ParameterBlock;
use crate::error::{check_dim, Error, Result};
use crate::objectives::{make_least_squares, make_logistic, LocalObjective};
use crate::solvers::{Solver, TimeModel};
use crate::topology::{symmetric_eigenvalues, GossipMatrix};

pub const PROX_TOLERANCE: f64 = 1e-12;
const PROX_MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
enum Loss {
    /// g(v) = (1/m)‖y − v‖²
    Squared { y: DVector<f64> },
    /// g(v) = (1/m) Σ_j ln(1 + e^{−v_j}); labels are folded into B.
    Logistic,
}

#[derive(Debug, Clone)]
pub struct CompositeObjective {
    b: DMatrix<f64>,
    loss: Loss,
    c: f64,
    mu: f64,
    singular_bound: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

impl CompositeObjective {
    fn new(b: DMatrix<f64>, loss: Loss, c: f64, mu: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("c = {c} must be positive")));
        }
        if b.nrows() == 0 {
            return Err(Error::InvalidParameter("composite objective needs at least one sample".into()));
        }
        let gram = b.transpose() * &b;
        let top = symmetric_eigenvalues(&gram)?[0].max(0.0);
        Ok(Self {
            b,
            loss,
            c,
            mu,
            singular_bound: top.sqrt(),
        })
    }

    /// Least squares (1/m)‖y − Xᵀθ‖² + c‖θ‖² with samples as columns of `x`.
    pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>, c: f64) -> Result<Self> {
        check_dim(x.ncols(), y.len())?;
        let m = x.ncols() as f64;
        Self::new(x.transpose(), Loss::Squared { y: y.clone() }, c, 2.0 / m)
    }

    /// Logistic loss (1/m) Σ_j ln(1 + exp(−y_j x_jᵀθ)) + c‖θ‖², labels ±1.
    pub fn logistic(x: &DMatrix<f64>, y: &DVector<f64>, c: f64) -> Result<Self> {
        check_dim(x.ncols(), y.len())?;
        if y.iter().any(|&l| l != 1.0 && l != -1.0) {
            return Err(Error::InvalidParameter("logistic labels must be +1 or -1".into()));
        }
        let mut b = x.transpose();
        for (j, &l) in y.iter().enumerate() {
            b.row_mut(j).scale_mut(l);
        }
        let m = x.ncols() as f64;
        Self::new(b, Loss::Logistic, c, 1.0 / (4.0 * m))
    }

    pub fn dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn samples(&self) -> usize {
        self.b.nrows()
    }

    /// The linear map B_i (m_i × d).
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Smoothness constant of g_i.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Largest singular value of B_i.
    pub fn singular_bound(&self) -> f64 {
        self.singular_bound
    }

    fn scale(&self) -> f64 {
        1.0 / self.samples() as f64
    }

    pub fn g(&self, v: &DVector<f64>) -> f64 {
        let s = self.scale();
        match &self.loss {
            Loss::Squared { y } => s * (y - v).norm_squared(),
            Loss::Logistic => s * v.iter().map(|&vj| softplus(-vj)).sum::<f64>(),
        }
    }

    /// Convex conjugate g_i*(u); +∞ outside the domain.
    pub fn g_star(&self, u: &DVector<f64>) -> f64 {
        let s = self.scale();
        match &self.loss {
            Loss::Squared { y } => y.dot(u) + u.norm_squared() / (4.0 * s),
            Loss::Logistic => u
                .iter()
                .map(|&uj| {
                    let p = -uj / s;
                    if (0.0..=1.0).contains(&p) {
                        s * (xlogx(p) + xlogx(1.0 - p))
                    } else {
                        f64::INFINITY
                    }
                })
                .sum(),
        }
    }

    /// f_i(θ) = g_i(B_iθ) + c‖θ‖².
    pub fn primal_value(&self, theta: &DVector<f64>) -> f64 {
        self.g(&(&self.b * theta)) + self.c * theta.norm_squared()
    }

    /// argmin_u g_i*(u) + (1/(2·step))‖u − v‖².
    pub fn prox_g_star(&self, v: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
        if !(step > 0.0) {
            return Err(Error::InvalidParameter(format!("prox step {step} must be positive")));
        }
        self.tilted_prox(&(v / step), 1.0 / step)
    }

    /// argmin_u g_i*(u) + (a/2)‖u‖² − bᵀu for a ≥ 0 (a = 0 allowed when the
    /// conjugate is strongly convex on its own).
    fn tilted_prox(&self, b: &DVector<f64>, a: f64) -> Result<DVector<f64>> {
        let s = self.scale();
        match &self.loss {
            Loss::Squared { y } => Ok((b - y) / (1.0 / (2.0 * s) + a)),
            Loss::Logistic => {
                let mut u = DVector::zeros(b.len());
                for (j, &bj) in b.iter().enumerate() {
                    u[j] = logistic_prox_1d(bj, a, s)?;
                }
                Ok(u)
            }
        }
    }

    /// The same function as a generic local objective.
    pub fn to_local(&self) -> Result<Arc<dyn LocalObjective>> {
        let x = self.b.transpose();
        Ok(match &self.loss {
            Loss::Squared { y } => Arc::new(make_least_squares(&x, y, self.c)?),
            Loss::Logistic => Arc::new(make_logistic(&x, &DVector::from_element(self.samples(), 1.0), self.c)?),
        })
    }
}

/// One coordinate of the logistic prox. With φ(w) = s·ln(1 + e^{−w}), the
/// minimizer of φ*(u) + (a/2)u² − bu is u = φ'(w) where w solves
/// w = b + a·s·σ(−w). The left side minus the right is increasing, with its
/// root in [b, b + a·s].
fn logistic_prox_1d(b: f64, a: f64, s: f64) -> Result<f64> {
    let f = |w: f64| w - b - a * s * sigmoid(-w);
    let (mut lo, mut hi) = (b, b + a * s);
    let mut w = 0.5 * (lo + hi);
    for _ in 0..PROX_MAX_ITERATIONS {
        let fw = f(w);
        if fw.abs() <= PROX_TOLERANCE * (1.0 + w.abs()) || hi - lo <= PROX_TOLERANCE * (1.0 + w.abs()) {
            return Ok(-s * sigmoid(-w));
        }
        let width = hi - lo;
        if fw > 0.0 {
            hi = w;
        } else {
            lo = w;
        }
        let sg = sigmoid(w);
        let slope = 1.0 + a * s * sg * (1.0 - sg);
        let newton = w - fw / slope;
        // Newton can cycle across a steep sigmoid; bisect unless the bracket halved.
        w = if newton > lo && newton < hi && hi - lo <= 0.5 * width {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::Convergence {
        what: "logistic prox",
        iterations: PROX_MAX_ITERATIONS,
        residual: f(w).abs(),
    })
}

/// ρ = sqrt((c/μ + M²)/λ_max(W)).
pub fn choose_rho(c: f64, mu_g: f64, m: f64, lambda_max: f64) -> Result<f64> {
    if !(c > 0.0 && mu_g > 0.0 && m >= 0.0 && lambda_max > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "choose_rho needs c, mu, lambda_max > 0 and M >= 0 (got {c}, {mu_g}, {m}, {lambda_max})"
        )));
    }
    Ok(((c / mu_g + m * m) / lambda_max).sqrt())
}

/// Working condition-number estimate (1 + μM²/c)·4/γ.
pub fn condition_estimate(c: f64, mu_g: f64, m: f64, gamma: f64) -> f64 {
    (1.0 + mu_g * m * m / c) * 4.0 / gamma
}

/// Step size, momentum and bounds of the composite dual iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeConstants {
    pub c: f64,
    pub mu: f64,
    pub m: f64,
    pub rho: f64,
    /// Smoothness bound max(1/μ + M²/c, ρ²λ_max/c).
    pub smoothness: f64,
    /// Strong convexity bound min(1/(2μ), ρ²λ_{n−1}/(2c(1 + μM²/c))).
    pub strong_convexity: f64,
    pub eta: f64,
    pub momentum: f64,
}

impl CompositeConstants {
    pub fn new(objs: &[CompositeObjective], w: &GossipMatrix) -> Result<Self> {
        let first = objs
            .first()
            .ok_or_else(|| Error::InvalidParameter("no composite objectives".into()))?;
        let c = first.c;
        if objs.iter().any(|o| o.c != c) {
            return Err(Error::InvalidParameter("all nodes must share the coefficient c".into()));
        }
        let mu = objs.iter().map(|o| o.mu).fold(0.0, f64::max);
        let m = objs.iter().map(|o| o.singular_bound).fold(0.0, f64::max);
        let rho = if w.n() == 1 { 0.0 } else { choose_rho(c, mu, m, w.lambda_max())? };
        let coupling = rho * rho / c;
        let smoothness = (1.0 / mu + m * m / c).max(coupling * w.lambda_max());
        let nu_part = 1.0 / (2.0 * mu);
        let strong_convexity = if w.n() == 1 {
            nu_part
        } else {
            nu_part.min(coupling * w.lambda_second_smallest() / (2.0 * (1.0 + m * m * mu / c)))
        };
        let kappa = smoothness / strong_convexity;
        Ok(Self {
            c,
            mu,
            m,
            rho,
            smoothness,
            strong_convexity,
            eta: 1.0 / smoothness,
            momentum: (kappa.sqrt() - 1.0) / (kappa.sqrt() + 1.0),
        })
    }

    pub fn kappa(&self) -> f64 {
        self.smoothness / self.strong_convexity
    }
}

/// Dual iterate (ν, z) with z = λ√W.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeDualState {
    pub nu: Vec<DVector<f64>>,
    pub z: ParameterBlock,
}

impl CompositeDualState {
    pub fn zeros(objs: &[CompositeObjective]) -> Self {
        let d = objs.first().map_or(0, |o| o.dim());
        Self {
            nu: objs.iter().map(|o| DVector::zeros(o.samples())).collect(),
            z: ParameterBlock::zeros(d, objs.len()),
        }
    }

    fn check(&self, objs: &[CompositeObjective], w: &GossipMatrix) -> Result<()> {
        check_dim(objs.len(), self.nu.len())?;
        check_dim(w.n(), self.z.nodes())?;
        for (o, nu) in objs.iter().zip(&self.nu) {
            check_dim(o.samples(), nu.len())?;
            check_dim(o.dim(), self.z.dim())?;
        }
        Ok(())
    }

    /// (1 + t)·self − t·other
    fn extrapolate(&self, other: &Self, t: f64) -> Self {
        Self {
            nu: self.nu.iter().zip(&other.nu).map(|(a, b)| a * (1.0 + t) - b * t).collect(),
            z: ParameterBlock::from_matrix(self.z.matrix() * (1.0 + t) - other.z.matrix() * t),
        }
    }
}

/// Columns r_i = B_iᵀν_i + ρz_i.
fn residual_block(state: &CompositeDualState, objs: &[CompositeObjective], rho: f64) -> ParameterBlock {
    let cols: Vec<DVector<f64>> = objs
        .iter()
        .enumerate()
        .map(|(i, o)| o.b.transpose() * &state.nu[i] + state.z.column(i) * rho)
        .collect();
    ParameterBlock::from_columns(&cols)
}

/// Dual objective Φ evaluated through z.
pub fn composite_dual_value(state: &CompositeDualState, objs: &[CompositeObjective], rho: f64) -> f64 {
    let c = objs[0].c;
    let conj: f64 = objs.iter().zip(&state.nu).map(|(o, nu)| o.g_star(nu)).sum();
    conj + residual_block(state, objs, rho).norm().powi(2) / (4.0 * c)
}

/// One proximal gradient step from `state` (no momentum). The z-update is
/// one gossip round.
pub fn composite_dual_step(
    state: &CompositeDualState,
    objs: &[CompositeObjective],
    w: &GossipMatrix,
    k: &CompositeConstants,
) -> Result<CompositeDualState> {
    state.check(objs, w)?;
    let r = residual_block(state, objs, k.rho);
    let eta = k.eta;
    let curvature = 1.0 / k.mu;
    let nu = objs
        .par_iter()
        .enumerate()
        .map(|(i, o)| {
            let nu_i = &state.nu[i];
            let grad = o.b() * r.column(i) / (2.0 * k.c) + nu_i * curvature;
            let point = nu_i - grad * eta;
            o.tilted_prox(&(point / eta), 1.0 / eta - curvature)
        })
        .collect::<Result<Vec<_>>>()?;
    let rw = w.apply(&r)?;
    let z = ParameterBlock::from_matrix(state.z.matrix() - rw.matrix() * (eta * k.rho / (2.0 * k.c)));
    Ok(CompositeDualState { nu, z })
}

/// θ_i = −(1/2c)(B_iᵀν_i + ρz_i).
pub fn composite_primal_recover(state: &CompositeDualState, objs: &[CompositeObjective], rho: f64) -> ParameterBlock {
    let c = objs[0].c;
    ParameterBlock::from_matrix(residual_block(state, objs, rho).into_matrix() / (-2.0 * c))
}

/// Accelerated proximal gradient on the composite dual, one gossip round per
/// iteration.
pub struct CompositeDual {
    objs: Vec<CompositeObjective>,
    w: GossipMatrix,
    constants: CompositeConstants,
    tau: f64,
    accelerated: bool,
    /// Extrapolated point where the gradient is taken.
    x: CompositeDualState,
    /// Proximal gradient iterates.
    y: CompositeDualState,
    theta: ParameterBlock,
    t: usize,
}

impl CompositeDual {
    pub fn new(objs: Vec<CompositeObjective>, w: GossipMatrix, tm: TimeModel) -> Result<Self> {
        check_dim(w.n(), objs.len())?;
        let constants = CompositeConstants::new(&objs, &w)?;
        let d = objs[0].dim();
        for o in &objs {
            check_dim(d, o.dim())?;
        }
        let zero = CompositeDualState::zeros(&objs);
        let theta = composite_primal_recover(&zero, &objs, constants.rho);
        Ok(Self {
            objs,
            w,
            constants,
            tau: tm.tau,
            accelerated: true,
            x: zero.clone(),
            y: zero,
            theta,
            t: 0,
        })
    }

    /// Plain proximal gradient, without momentum.
    pub fn without_momentum(mut self) -> Self {
        self.accelerated = false;
        self
    }

    pub fn constants(&self) -> &CompositeConstants {
        &self.constants
    }

    pub fn state(&self) -> &CompositeDualState {
        &self.y
    }

    pub fn dual_value(&self) -> f64 {
        composite_dual_value(&self.y, &self.objs, self.constants.rho)
    }

    pub fn locals(&self) -> Result<Vec<Arc<dyn LocalObjective>>> {
        self.objs.iter().map(|o| o.to_local()).collect()
    }
}

impl Solver for CompositeDual {
    fn name(&self) -> &str {
        "composite_dual"
    }

    fn step(&mut self) -> Result<()> {
        let y_next = composite_dual_step(&self.x, &self.objs, &self.w, &self.constants)?;
        let momentum = if self.accelerated { self.constants.momentum } else { 0.0 };
        self.x = y_next.extrapolate(&self.y, momentum);
        self.y = y_next;
        self.theta = composite_primal_recover(&self.y, &self.objs, self.constants.rho);
        self.t += 1;
        Ok(())
    }

    fn theta(&self) -> &ParameterBlock {
        &self.theta
    }

    fn iteration(&self) -> usize {
        self.t
    }

    fn iteration_cost(&self) -> f64 {
        1.0 + self.tau
    }

    fn parameters(&self) -> BTreeMap<String, f64> {
        let k = &self.constants;
        BTreeMap::from([
            ("rho".to_string(), k.rho),
            ("eta".to_string(), k.eta),
            ("momentum".to_string(), if self.accelerated { k.momentum } else { 0.0 }),
            ("mu".to_string(), k.mu),
            ("singular_bound".to_string(), k.m),
            ("kappa".to_string(), k.kappa()),
            (
                "condition_estimate".to_string(),
                condition_estimate(k.c, k.mu, k.m, self.w.gamma()),
            ),
            ("tau".to_string(), self.tau),
        ])
    }

    fn memory(&self) -> Vec<&ParameterBlock> {
        vec![&self.theta, &self.x.z, &self.y.z]
    }
}
