//! The algorithm zoo behind one stepping interface, and the simulated-time
//! run loop that turns a solver into a [`Trace`].
//!
//! Time is accounted per iteration: one unit for the local gradient or
//! conjugate computation plus `tau` for every communication round.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::ParameterBlock;
use crate::error::{check_dim, Error, Result};
use crate::gossip::{accelerated_gossip_observed, chebyshev_params, ChebyshevParams};
use crate::objectives::{GlobalObjective, LocalObjective};
use crate::topology::GossipMatrix;

/// Errors above this abort the run as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// MSDA falls back to single-step gossip above this eigengap.
pub const MSDA_GAMMA_CUTOFF: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeModel {
    /// Duration of one communication round; a local computation takes 1.
    pub tau: f64,
}

impl TimeModel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Self { tau })
        } else {
            Err(Error::InvalidParameter(format!("tau = {tau} must be positive")))
        }
    }
}

/// Receives memory snapshots: the simulated time at which the listed blocks
/// became available to their nodes.
pub type MemoryObserver<'a> = dyn FnMut(f64, &[&ParameterBlock]) + 'a;

/// One distributed algorithm, advanced one iteration at a time.
pub trait Solver: Send {
    fn name(&self) -> &str;

    fn step(&mut self) -> Result<()>;

    /// Output vectors θ_{i,t}, one column per node.
    fn theta(&self) -> &ParameterBlock;

    fn iteration(&self) -> usize;

    /// Simulated time of one iteration.
    fn iteration_cost(&self) -> f64;

    fn clock(&self) -> f64 {
        self.iteration() as f64 * self.iteration_cost()
    }

    /// Tuned constants, reported in trace metadata.
    fn parameters(&self) -> BTreeMap<String, f64>;

    /// Every block currently held in node memory.
    fn memory(&self) -> Vec<&ParameterBlock>;

    /// Like [`Solver::step`], reporting memory as it is produced. The default
    /// reports everything at the end of the iteration.
    fn step_observed(&mut self, observer: &mut MemoryObserver<'_>) -> Result<()> {
        self.step()?;
        let t = self.clock();
        observer(t, &self.memory());
        Ok(())
    }
}

/// Per-node conjugate gradients θ_i = ∇f_i*(x_i), warm-started from `warm`.
fn conjugate_block(
    locals: &[Arc<dyn LocalObjective>],
    x: &ParameterBlock,
    warm: Option<&ParameterBlock>,
) -> Result<ParameterBlock> {
    let cols = (0..locals.len())
        .into_par_iter()
        .map(|i| {
            let w = warm.map(|w| w.column(i));
            locals[i].conj_grad(&x.column(i), w.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParameterBlock::from_columns(&cols))
}

fn gradient_block(locals: &[Arc<dyn LocalObjective>], x: &ParameterBlock) -> ParameterBlock {
    let cols: Vec<DVector<f64>> = (0..locals.len())
        .into_par_iter()
        .map(|i| locals[i].grad(&x.column(i)))
        .collect();
    ParameterBlock::from_columns(&cols)
}

fn check_locals(locals: &[Arc<dyn LocalObjective>], w: &GossipMatrix) -> Result<usize> {
    check_dim(w.n(), locals.len())?;
    let d = locals
        .first()
        .ok_or_else(|| Error::InvalidParameter("no local objectives".into()))?
        .dim();
    for f in locals {
        check_dim(d, f.dim())?;
    }
    Ok(d)
}

fn local_constants(locals: &[Arc<dyn LocalObjective>]) -> (f64, f64) {
    let alpha = locals.iter().map(|f| f.alpha()).fold(f64::INFINITY, f64::min);
    let beta = locals.iter().map(|f| f.beta()).fold(0.0, f64::max);
    (alpha, beta)
}

#[derive(Debug, Clone)]
enum Communication {
    Single,
    Chebyshev(ChebyshevParams),
}

/// Nesterov-accelerated gradient ascent on the dual, communicating either by
/// one gossip round (SSDA) or by K Chebyshev-combined rounds (MSDA).
pub struct DualAccelerated {
    name: String,
    locals: Vec<Arc<dyn LocalObjective>>,
    w: GossipMatrix,
    comm: Communication,
    eta: f64,
    momentum: f64,
    kappa_l: f64,
    tau: f64,
    x: ParameterBlock,
    y: ParameterBlock,
    theta: ParameterBlock,
    t: usize,
    warm_start: bool,
}

impl DualAccelerated {
    /// Single-step dual accelerated method: η = α/λ₁(W),
    /// μ = (√κ_l − √γ)/(√κ_l + √γ), x₀ = y₀ = 0.
    pub fn ssda(locals: Vec<Arc<dyn LocalObjective>>, w: GossipMatrix, tm: TimeModel) -> Result<Self> {
        let d = check_locals(&locals, &w)?;
        let (alpha, beta) = local_constants(&locals);
        let kappa_l = beta / alpha;
        let sg = w.gamma().sqrt();
        let sk = kappa_l.sqrt();
        let n = w.n();
        Self {
            name: "ssda".into(),
            eta: alpha / w.lambda_max(),
            momentum: (sk - sg) / (sk + sg),
            kappa_l,
            locals,
            w,
            comm: Communication::Single,
            tau: tm.tau,
            x: ParameterBlock::zeros(d, n),
            y: ParameterBlock::zeros(d, n),
            theta: ParameterBlock::zeros(d, n),
            t: 0,
            warm_start: true,
        }
        .primed()
    }

    /// Multi-step dual accelerated method with K = ⌊1/√γ⌋ rounds of
    /// Chebyshev gossip per iteration. Delegates to SSDA when γ > 0.9.
    pub fn msda(locals: Vec<Arc<dyn LocalObjective>>, w: GossipMatrix, tm: TimeModel) -> Result<Self> {
        if w.gamma() > MSDA_GAMMA_CUTOFF {
            let mut s = Self::ssda(locals, w, tm)?;
            s.name = "msda".into();
            return Ok(s);
        }
        let params = chebyshev_params(w.gamma(), w.lambda_max())?;
        Self::msda_with_params(locals, w, tm, params)
    }

    /// MSDA with explicit Chebyshev constants (e.g. a non-default K).
    pub fn msda_with_params(
        locals: Vec<Arc<dyn LocalObjective>>,
        w: GossipMatrix,
        tm: TimeModel,
        params: ChebyshevParams,
    ) -> Result<Self> {
        let d = check_locals(&locals, &w)?;
        let (alpha, beta) = local_constants(&locals);
        let kappa_l = beta / alpha;
        let ck = params.c1.powi(params.k as i32);
        let sk = kappa_l.sqrt();
        let n = w.n();
        Self {
            name: "msda".into(),
            eta: alpha * (1.0 + ck * ck) / (1.0 + ck).powi(2),
            momentum: ((1.0 + ck) * sk - 1.0 + ck) / ((1.0 + ck) * sk + 1.0 - ck),
            kappa_l,
            locals,
            w,
            comm: Communication::Chebyshev(params),
            tau: tm.tau,
            x: ParameterBlock::zeros(d, n),
            y: ParameterBlock::zeros(d, n),
            theta: ParameterBlock::zeros(d, n),
            t: 0,
            warm_start: true,
        }
        .primed()
    }

    /// Computes θ₀ = ∇f*(x₀) so that θ_t always matches the current x_t.
    fn primed(mut self) -> Result<Self> {
        self.theta = conjugate_block(&self.locals, &self.x, None)?;
        Ok(self)
    }

    /// Disables warm starts of the inner conjugate solver.
    pub fn without_warm_start(mut self) -> Self {
        self.warm_start = false;
        self
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn rounds_per_iteration(&self) -> usize {
        match &self.comm {
            Communication::Single => 1,
            Communication::Chebyshev(p) => p.k,
        }
    }

    /// Dual iterates (x_t, y_t).
    pub fn dual(&self) -> (&ParameterBlock, &ParameterBlock) {
        (&self.x, &self.y)
    }

    /// One iteration: gossip θ_t, update the dual pair, then compute
    /// θ_{t+1} = ∇f*(x_{t+1}). The clock charges the conjugate computation
    /// to the iteration that communicates its result, so θ_t is reported at
    /// t(1 + Kτ) and the observer sees it at its physical time start + 1.
    fn advance(&mut self, observer: Option<&mut MemoryObserver<'_>>) -> Result<()> {
        let start = self.clock();
        let mut observer = observer;
        if let Some(obs) = observer.as_deref_mut() {
            obs(start + 1.0, &[&self.theta]);
        }
        let tau = self.tau;
        let mixed = match &self.comm {
            Communication::Single => {
                let out = self.w.apply(&self.theta)?;
                if let Some(obs) = observer.as_deref_mut() {
                    obs(start + 1.0 + tau, &[&out]);
                }
                out
            }
            Communication::Chebyshev(params) => {
                let mut round = |k: usize, b: &ParameterBlock| {
                    if let Some(obs) = observer.as_deref_mut() {
                        obs(start + 1.0 + k as f64 * tau, &[b]);
                    }
                };
                accelerated_gossip_observed(&self.theta, &self.w, params, &mut round)?
            }
        };
        let y_next = ParameterBlock::from_matrix(self.x.matrix() - mixed.matrix() * self.eta);
        let x_next = ParameterBlock::from_matrix(
            y_next.matrix() * (1.0 + self.momentum) - self.y.matrix() * self.momentum,
        );
        let warm = self.warm_start.then_some(&self.theta);
        let theta_next = conjugate_block(&self.locals, &x_next, warm)?;
        self.y = y_next;
        self.x = x_next;
        self.theta = theta_next;
        self.t += 1;
        if let Some(obs) = observer {
            let end = self.clock();
            obs(end, &[&self.x, &self.y]);
        }
        Ok(())
    }
}

impl Solver for DualAccelerated {
    fn name(&self) -> &str {
        &self.name
    }

    fn step(&mut self) -> Result<()> {
        self.advance(None)
    }

    fn step_observed(&mut self, observer: &mut MemoryObserver<'_>) -> Result<()> {
        self.advance(Some(observer))
    }

    fn theta(&self) -> &ParameterBlock {
        &self.theta
    }

    fn iteration(&self) -> usize {
        self.t
    }

    fn iteration_cost(&self) -> f64 {
        1.0 + self.rounds_per_iteration() as f64 * self.tau
    }

    fn parameters(&self) -> BTreeMap<String, f64> {
        let mut p = BTreeMap::from([
            ("eta".to_string(), self.eta),
            ("momentum".to_string(), self.momentum),
            ("kappa_l".to_string(), self.kappa_l),
            ("gamma".to_string(), self.w.gamma()),
            ("lambda_max".to_string(), self.w.lambda_max()),
            ("tau".to_string(), self.tau),
            ("rounds_per_iteration".to_string(), self.rounds_per_iteration() as f64),
        ]);
        if let Communication::Chebyshev(c) = &self.comm {
            p.insert("c1".into(), c.c1);
            p.insert("c2".into(), c.c2);
            p.insert("c3".into(), c.c3);
        }
        p
    }

    fn memory(&self) -> Vec<&ParameterBlock> {
        vec![&self.theta, &self.x, &self.y]
    }
}

/// Nesterov's accelerated gradient on f̄ through a master node: every
/// iteration gathers the local gradients (Δ rounds) and broadcasts the new
/// iterate (Δ rounds).
pub struct Dagd {
    global: GlobalObjective,
    diameter: usize,
    tau: f64,
    step: f64,
    momentum: f64,
    x: DVector<f64>,
    y: DVector<f64>,
    theta: ParameterBlock,
    t: usize,
}

impl Dagd {
    pub fn new(global: GlobalObjective, diameter: usize, tm: TimeModel) -> Result<Self> {
        let d = global.dim();
        let n = global.n();
        let sk = global.kappa_g().sqrt();
        Ok(Self {
            step: 1.0 / global.beta_g(),
            momentum: (sk - 1.0) / (sk + 1.0),
            diameter,
            tau: tm.tau,
            x: DVector::zeros(d),
            y: DVector::zeros(d),
            theta: ParameterBlock::zeros(d, n),
            t: 0,
            global,
        })
    }
}

impl Solver for Dagd {
    fn name(&self) -> &str {
        "dagd"
    }

    fn step(&mut self) -> Result<()> {
        let locals = self.global.locals();
        let grads: Vec<DVector<f64>> = locals.par_iter().map(|f| f.grad(&self.y)).collect();
        let mut g = DVector::zeros(self.y.len());
        for gi in &grads {
            g += gi;
        }
        g /= locals.len() as f64;
        let x_next = &self.y - g * self.step;
        self.y = &x_next + (&x_next - &self.x) * self.momentum;
        self.x = x_next;
        self.theta = ParameterBlock::replicated(&self.x, self.global.n());
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
        1.0 + 2.0 * self.diameter as f64 * self.tau
    }

    fn parameters(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("step".to_string(), self.step),
            ("momentum".to_string(), self.momentum),
            ("kappa_g".to_string(), self.global.kappa_g()),
            ("diameter".to_string(), self.diameter as f64),
            ("tau".to_string(), self.tau),
        ])
    }

    fn memory(&self) -> Vec<&ParameterBlock> {
        vec![&self.theta]
    }
}

/// Doubly stochastic mixing M = I − W/λ₁(W) applied on the right.
fn mix(x: &ParameterBlock, w: &GossipMatrix) -> Result<ParameterBlock> {
    let xw = w.apply(x)?;
    Ok(ParameterBlock::from_matrix(x.matrix() - xw.matrix() / w.lambda_max()))
}

/// EXTRA with mixing M = I − W/λ₁(W) and M̃ = (I + M)/2.
pub struct Extra {
    locals: Vec<Arc<dyn LocalObjective>>,
    w: GossipMatrix,
    step: f64,
    tau: f64,
    x_prev: ParameterBlock,
    x_prev_mixed: ParameterBlock,
    grad_prev: ParameterBlock,
    x: ParameterBlock,
    t: usize,
}

impl Extra {
    pub fn new(locals: Vec<Arc<dyn LocalObjective>>, w: GossipMatrix, tm: TimeModel, step: f64) -> Result<Self> {
        let d = check_locals(&locals, &w)?;
        if !(step > 0.0) {
            return Err(Error::InvalidParameter(format!("step {step} must be positive")));
        }
        let n = w.n();
        Ok(Self {
            locals,
            w,
            step,
            tau: tm.tau,
            x_prev: ParameterBlock::zeros(d, n),
            x_prev_mixed: ParameterBlock::zeros(d, n),
            grad_prev: ParameterBlock::zeros(d, n),
            x: ParameterBlock::zeros(d, n),
            t: 0,
        })
    }
}

impl Solver for Extra {
    fn name(&self) -> &str {
        "extra"
    }

    fn step(&mut self) -> Result<()> {
        let grad = gradient_block(&self.locals, &self.x);
        let mixed = mix(&self.x, &self.w)?;
        let next = if self.t == 0 {
            mixed.matrix() - grad.matrix() * self.step
        } else {
            // x_{k+2} = (I + M)x_{k+1} − M̃x_k − s(∇f(x_{k+1}) − ∇f(x_k))
            self.x.matrix() + mixed.matrix()
                - (self.x_prev.matrix() + self.x_prev_mixed.matrix()) * 0.5
                - (grad.matrix() - self.grad_prev.matrix()) * self.step
        };
        self.x_prev = std::mem::replace(&mut self.x, ParameterBlock::from_matrix(next));
        self.x_prev_mixed = mixed;
        self.grad_prev = grad;
        self.t += 1;
        Ok(())
    }

    fn theta(&self) -> &ParameterBlock {
        &self.x
    }

    fn iteration(&self) -> usize {
        self.t
    }

    fn iteration_cost(&self) -> f64 {
        1.0 + self.tau
    }

    fn parameters(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("step".to_string(), self.step), ("tau".to_string(), self.tau)])
    }

    fn memory(&self) -> Vec<&ParameterBlock> {
        vec![&self.x, &self.x_prev, &self.x_prev_mixed, &self.grad_prev]
    }
}

/// DIGing gradient tracking: x ← xM − s·y, y ← yM + ∇f(x_new) − ∇f(x_old).
pub struct Diging {
    locals: Vec<Arc<dyn LocalObjective>>,
    w: GossipMatrix,
    step: f64,
    tau: f64,
    x: ParameterBlock,
    tracker: ParameterBlock,
    grad: ParameterBlock,
    t: usize,
}

impl Diging {
    pub fn new(locals: Vec<Arc<dyn LocalObjective>>, w: GossipMatrix, tm: TimeModel, step: f64) -> Result<Self> {
        let d = check_locals(&locals, &w)?;
        if !(step > 0.0) {
            return Err(Error::InvalidParameter(format!("step {step} must be positive")));
        }
        let x = ParameterBlock::zeros(d, w.n());
        let grad = gradient_block(&locals, &x);
        Ok(Self {
            tracker: grad.clone(),
            grad,
            x,
            locals,
            w,
            step,
            tau: tm.tau,
            t: 0,
        })
    }

    /// Gradient tracker y_t.
    pub fn tracker(&self) -> &ParameterBlock {
        &self.tracker
    }

    /// Local gradients at the current iterate.
    pub fn local_gradients(&self) -> &ParameterBlock {
        &self.grad
    }
}

impl Solver for Diging {
    fn name(&self) -> &str {
        "diging"
    }

    fn step(&mut self) -> Result<()> {
        let x_next = mix(&self.x, &self.w)?.into_matrix() - self.tracker.matrix() * self.step;
        let x_next = ParameterBlock::from_matrix(x_next);
        let grad_next = gradient_block(&self.locals, &x_next);
        let tracker = mix(&self.tracker, &self.w)?.into_matrix() + grad_next.matrix() - self.grad.matrix();
        self.tracker = ParameterBlock::from_matrix(tracker);
        self.grad = grad_next;
        self.x = x_next;
        self.t += 1;
        Ok(())
    }

    fn theta(&self) -> &ParameterBlock {
        &self.x
    }

    fn iteration(&self) -> usize {
        self.t
    }

    fn iteration_cost(&self) -> f64 {
        1.0 + 2.0 * self.tau
    }

    fn parameters(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("step".to_string(), self.step), ("tau".to_string(), self.tau)])
    }

    fn memory(&self) -> Vec<&ParameterBlock> {
        vec![&self.x, &self.tracker, &self.grad]
    }
}

/// Evaluates e_t = max_i f̄(θ_{i,t}) − f̄(θ*) and the consensus residual.
#[derive(Debug, Clone)]
pub struct Metric {
    global: GlobalObjective,
    theta_star: DVector<f64>,
    f_star: f64,
    consensus: Option<GossipMatrix>,
}

impl Metric {
    /// `consensus` is the matrix used for ‖Θ√W‖_F; pass the network Laplacian.
    pub fn new(global: GlobalObjective, theta_star: DVector<f64>, consensus: Option<GossipMatrix>) -> Self {
        let f_star = global.value(&theta_star);
        Self {
            global,
            theta_star,
            f_star,
            consensus,
        }
    }

    pub fn global(&self) -> &GlobalObjective {
        &self.global
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    pub fn error(&self, theta: &ParameterBlock) -> f64 {
        max_suboptimality(theta, &self.global, self.f_star)
    }

    /// ‖Θ√W‖_F = sqrt(⟨Θ, ΘW⟩), without forming √W.
    pub fn consensus_residual(&self, theta: &ParameterBlock) -> Result<f64> {
        match &self.consensus {
            Some(w) => Ok(theta.dot(&w.apply(theta)?).max(0.0).sqrt()),
            None => Ok(0.0),
        }
    }
}

/// max_i f̄(θ_i) − f̄*, clamped at zero against round-off below the optimum.
pub fn max_suboptimality(theta: &ParameterBlock, global: &GlobalObjective, f_star: f64) -> f64 {
    global
        .values(theta)
        .into_iter()
        .map(|v| v - f_star)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub clock: f64,
    pub error: f64,
    pub consensus_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub algorithm: String,
    pub parameters: BTreeMap<String, f64>,
    pub seeds: BTreeMap<String, u64>,
    pub target_error: Option<f64>,
    pub max_iterations: usize,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub metadata: TraceMetadata,
}

pub const CSV_HEADER: &str = "algorithm,iteration,clock,error,consensus_residual";

impl Trace {
    pub fn algorithm(&self) -> &str {
        &self.metadata.algorithm
    }

    /// First simulated time at which e_t ≤ `target`.
    pub fn time_to(&self, target: f64) -> Option<f64> {
        self.records.iter().find(|r| r.error <= target).map(|r| r.clock)
    }

    pub fn iterations_to(&self, target: f64) -> Option<usize> {
        self.records.iter().find(|r| r.error <= target).map(|r| r.iteration)
    }

    pub fn initial_error(&self) -> f64 {
        self.records[0].error
    }

    pub fn final_record(&self) -> &TraceRecord {
        self.records.last().expect("traces start with the initial record")
    }

    pub fn write_csv(&self, out: &mut impl Write, with_header: bool) -> std::io::Result<()> {
        if with_header {
            writeln!(out, "{CSV_HEADER}")?;
        }
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{:e},{:e}",
                self.metadata.algorithm, r.iteration, r.clock, r.error, r.consensus_residual
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub max_iterations: usize,
    pub target_error: Option<f64>,
    /// Evaluate the metric every this many iterations (and at the end).
    pub record_every: usize,
}

impl RunOptions {
    pub fn new(max_iterations: usize, target_error: Option<f64>) -> Self {
        Self {
            max_iterations,
            target_error,
            record_every: 1,
        }
    }
}

fn parameter_dump(p: &BTreeMap<String, f64>) -> String {
    p.iter().map(|(k, v)| format!("{k}={v:e}")).collect::<Vec<_>>().join(", ")
}

/// Runs `solver` until the target error or the iteration cap, recording
/// the initial state and every `record_every`-th iteration.
pub fn run(solver: &mut dyn Solver, metric: &Metric, opts: &RunOptions) -> Result<Trace> {
    let record = |s: &dyn Solver| -> Result<TraceRecord> {
        let theta = s.theta();
        Ok(TraceRecord {
            iteration: s.iteration(),
            clock: s.clock(),
            error: metric.error(theta),
            consensus_residual: metric.consensus_residual(theta)?,
        })
    };
    let every = opts.record_every.max(1);
    let mut records = vec![record(&*solver)?];
    let mut stop = StopReason::MaxIterations;
    while solver.iteration() < opts.max_iterations {
        solver.step()?;
        let t = solver.iteration();
        let finite = solver.theta().is_finite();
        if t % every != 0 && t != opts.max_iterations && finite {
            continue;
        }
        let r = if finite {
            record(&*solver)?
        } else {
            TraceRecord {
                iteration: t,
                clock: solver.clock(),
                error: f64::INFINITY,
                consensus_residual: f64::INFINITY,
            }
        };
        if !(r.error <= DIVERGENCE_THRESHOLD) {
            return Err(Error::Divergence {
                algorithm: solver.name().to_string(),
                iteration: t,
                error: r.error,
                params: parameter_dump(&solver.parameters()),
            });
        }
        records.push(r);
        if opts.target_error.is_some_and(|target| r.error <= target) {
            stop = StopReason::TargetReached;
            break;
        }
    }
    Ok(Trace {
        records,
        metadata: TraceMetadata {
            algorithm: solver.name().to_string(),
            parameters: solver.parameters(),
            seeds: BTreeMap::new(),
            target_error: opts.target_error,
            max_iterations: opts.max_iterations,
            stop_reason: stop,
        },
    })
}

/// Candidate steps `base·2^(k/2)` for k from `hi` down to `lo`.
pub fn step_grid(base: f64, hi: i32, lo: i32) -> Vec<f64> {
    (lo..=hi).rev().map(|k| base * 2f64.powf(k as f64 / 2.0)).collect()
}

/// Picks the step whose short pilot run ends with the smallest error.
/// Diverging or failing candidates are discarded.
pub fn tune_step<F>(candidates: &[f64], pilot_iterations: usize, metric: &Metric, mut build: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<Box<dyn Solver>>,
{
    let opts = RunOptions {
        max_iterations: pilot_iterations,
        target_error: None,
        record_every: pilot_iterations.max(1),
    };
    let mut best: Option<(f64, f64)> = None;
    for &step in candidates {
        let mut solver = build(step)?;
        let Ok(trace) = run(solver.as_mut(), metric, &opts) else {
            continue;
        };
        let err = trace.final_record().error;
        if best.is_none_or(|(_, e)| err < e) {
            best = Some((step, err));
        }
    }
    best.map(|(s, _)| s)
        .ok_or_else(|| Error::InvalidParameter("every candidate step diverged".into()))
}

/// Default step grid for EXTRA and DIGing around 1/max_i β_i.
pub fn baseline_step_candidates(locals: &[Arc<dyn LocalObjective>]) -> Vec<f64> {
    let (_, beta) = local_constants(locals);
    step_grid(1.0 / beta, 4, -12)
}

pub fn ssda(
    locals: Vec<Arc<dyn LocalObjective>>,
    w: GossipMatrix,
    tm: TimeModel,
    metric: &Metric,
    opts: &RunOptions,
) -> Result<Trace> {
    run(&mut DualAccelerated::ssda(locals, w, tm)?, metric, opts)
}

pub fn msda(
    locals: Vec<Arc<dyn LocalObjective>>,
    w: GossipMatrix,
    tm: TimeModel,
    metric: &Metric,
    opts: &RunOptions,
) -> Result<Trace> {
    run(&mut DualAccelerated::msda(locals, w, tm)?, metric, opts)
}

pub fn dagd(global: GlobalObjective, diameter: usize, tm: TimeModel, metric: &Metric, opts: &RunOptions) -> Result<Trace> {
    run(&mut Dagd::new(global, diameter, tm)?, metric, opts)
}

/// EXTRA with an explicit step, or a grid-searched one when `step` is `None`.
pub fn extra(
    locals: Vec<Arc<dyn LocalObjective>>,
    w: GossipMatrix,
    tm: TimeModel,
    step: Option<f64>,
    metric: &Metric,
    opts: &RunOptions,
) -> Result<Trace> {
    let step = match step {
        Some(s) => s,
        None => tune_step(&baseline_step_candidates(&locals), pilot_length(opts), metric, |s| {
            Ok(Box::new(Extra::new(locals.clone(), w.clone(), tm, s)?))
        })?,
    };
    run(&mut Extra::new(locals, w, tm, step)?, metric, opts)
}

/// DIGing with an explicit step, or a grid-searched one when `step` is `None`.
pub fn diging(
    locals: Vec<Arc<dyn LocalObjective>>,
    w: GossipMatrix,
    tm: TimeModel,
    step: Option<f64>,
    metric: &Metric,
    opts: &RunOptions,
) -> Result<Trace> {
    let step = match step {
        Some(s) => s,
        None => tune_step(&baseline_step_candidates(&locals), pilot_length(opts), metric, |s| {
            Ok(Box::new(Diging::new(locals.clone(), w.clone(), tm, s)?))
        })?,
    };
    run(&mut Diging::new(locals, w, tm, step)?, metric, opts)
}

fn pilot_length(opts: &RunOptions) -> usize {
    opts.max_iterations.clamp(1, 300)
}
