//! Worst-case instances behind the lower bounds, the bound curves
//! themselves, and a tracker for how far non-zero coordinates have spread.
//!
//! The hard instance splits Nesterov's chain quadratic over R^D between a
//! node set A and the nodes at distance at least d from A. Node functions are
//! block diagonal with 1×1 and 2×2 blocks, so every oracle call keeps exact
//! zeros and the coordinate support can only grow one step at a time.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::block::ParameterBlock;
use crate::error::{check_dim, Error, Result};
use crate::objectives::{GlobalObjective, LocalObjective};
use crate::solvers::Solver;
use crate::topology::{laplacian, path_gamma, symmetric_eigenvalues, GossipMatrix, Graph};

pub const DEFAULT_TRUNCATION: usize = 200;
/// Target accuracy of [`hard_gossip_matrix`].
pub const GAMMA_TOLERANCE: f64 = 1e-9;
const MAX_HARD_NODES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Block {
    One { i: usize, h: f64 },
    /// Symmetric [[a, o], [o, a]] on coordinates (i, i + 1).
    Two { i: usize, a: f64, o: f64 },
}

/// f(θ) = ½θᵀHθ − bᵀθ with H block diagonal in 1×1 and 2×2 blocks.
#[derive(Clone, PartialEq)]
pub struct BlockQuadratic {
    dim: usize,
    blocks: Vec<Block>,
    b: DVector<f64>,
    alpha: f64,
    beta: f64,
}

impl fmt::Debug for BlockQuadratic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlockQuadratic")
            .field("dim", &self.dim)
            .field("blocks", &self.blocks.len())
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .finish()
    }
}

/// Which coupling a node of the hard instance carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Coordinate 1 alone, then pairs (2,3), (4,5), …; the last coordinate alone.
    Leading,
    /// Pairs (1,2), (3,4), …
    Paired,
    None,
}

impl BlockQuadratic {
    /// ridge/2·‖θ‖² + w·(θᵀMθ − 2·lin·θ₁) with M given by `coupling`.
    pub fn chain(dim: usize, ridge: f64, w: f64, coupling: Coupling, lin: bool) -> Result<Self> {
        if dim < 2 || dim % 2 != 0 {
            return Err(Error::InvalidParameter(format!("dimension {dim} must be even and >= 2")));
        }
        if !(ridge > 0.0) || w < 0.0 {
            return Err(Error::InvalidParameter("ridge must be positive and weight non-negative".into()));
        }
        let pair = |i| Block::Two { i, a: ridge + 2.0 * w, o: -2.0 * w };
        let single = |i, coupled: bool| Block::One {
            i,
            h: ridge + if coupled { 2.0 * w } else { 0.0 },
        };
        let blocks: Vec<Block> = match coupling {
            Coupling::Leading => std::iter::once(single(0, true))
                .chain((1..dim - 1).step_by(2).map(pair))
                .chain(std::iter::once(single(dim - 1, true)))
                .collect(),
            Coupling::Paired => (0..dim).step_by(2).map(pair).collect(),
            Coupling::None => (0..dim).map(|i| single(i, false)).collect(),
        };
        let mut b = DVector::zeros(dim);
        if lin {
            b[0] = 2.0 * w;
        }
        let (mut alpha, mut beta) = (f64::INFINITY, 0.0f64);
        for blk in &blocks {
            let (lo, hi) = match *blk {
                Block::One { h, .. } => (h, h),
                Block::Two { a, o, .. } => (a - o.abs(), a + o.abs()),
            };
            alpha = alpha.min(lo);
            beta = beta.max(hi);
        }
        Ok(Self {
            dim,
            blocks,
            b,
            alpha,
            beta,
        })
    }

    pub fn linear_term(&self) -> &DVector<f64> {
        &self.b
    }

    fn apply(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for blk in &self.blocks {
            match *blk {
                Block::One { i, h } => out[i] = h * theta[i],
                Block::Two { i, a, o } => {
                    out[i] = a * theta[i] + o * theta[i + 1];
                    out[i + 1] = o * theta[i] + a * theta[i + 1];
                }
            }
        }
        out
    }

    fn dense(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for blk in &self.blocks {
            match *blk {
                Block::One { i, h: v } => h[(i, i)] = v,
                Block::Two { i, a, o } => {
                    h[(i, i)] = a;
                    h[(i + 1, i + 1)] = a;
                    h[(i, i + 1)] = o;
                    h[(i + 1, i)] = o;
                }
            }
        }
        h
    }
}

impl LocalObjective for BlockQuadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        0.5 * theta.dot(&self.apply(theta)) - self.b.dot(theta)
    }

    fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.apply(theta) - &self.b
    }

    fn hessian(&self, _theta: &DVector<f64>) -> DMatrix<f64> {
        self.dense()
    }

    fn conj_grad(&self, x: &DVector<f64>, _warm: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        check_dim(self.dim, x.len())?;
        let v = x + &self.b;
        let mut out = DVector::zeros(self.dim);
        for blk in &self.blocks {
            match *blk {
                Block::One { i, h } => out[i] = v[i] / h,
                Block::Two { i, a, o } => {
                    let det = a * a - o * o;
                    out[i] = (a * v[i] - o * v[i + 1]) / det;
                    out[i + 1] = (a * v[i + 1] - o * v[i]) / det;
                }
            }
        }
        Ok(out)
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn hessian_bounds(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let h = self.dense();
        (h.clone(), h)
    }

    fn as_quadratic(&self) -> Option<(DMatrix<f64>, DVector<f64>, f64)> {
        Some((self.dense(), self.b.clone(), 0.0))
    }

    fn shifted(&self, s: f64) -> Result<Arc<dyn LocalObjective>> {
        if !(s < self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "shift {s} would remove all strong convexity (alpha = {})",
                self.alpha
            )));
        }
        let mut out = self.clone();
        for blk in &mut out.blocks {
            match blk {
                Block::One { h, .. } => *h -= s,
                Block::Two { a, .. } => *a -= s,
            }
        }
        out.alpha -= s;
        out.beta -= s;
        Ok(Arc::new(out))
    }
}

/// Serializable description of a hard instance, enough to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardInstanceSpec {
    pub graph: Graph,
    pub set_a: Vec<usize>,
    pub d_split: usize,
    pub alpha: f64,
    pub beta: f64,
    pub dim: usize,
}

impl HardInstanceSpec {
    pub fn build(&self) -> Result<HardInstance> {
        build_hard_instance(&self.graph, &self.set_a, self.d_split, self.alpha, self.beta, self.dim)
    }
}

#[derive(Debug, Clone)]
pub struct HardInstance {
    spec: HardInstanceSpec,
    far: Vec<usize>,
    objectives: Vec<Arc<dyn LocalObjective>>,
    theta_star: DVector<f64>,
}

/// Splits the chain quadratic over the nodes of `g` so that the average is
/// α/2·‖θ‖² + (β−α)/8·(θᵀTθ − 2θ₁), T = tridiag(−1, 2, −1) truncated to D:
/// A-nodes carry the [`Coupling::Leading`] blocks and the linear term, nodes
/// at distance ≥ `d_split` from A carry the [`Coupling::Paired`] blocks.
pub fn build_hard_instance(
    g: &Graph,
    set_a: &[usize],
    d_split: usize,
    alpha: f64,
    beta: f64,
    dim: usize,
) -> Result<HardInstance> {
    let n = g.n();
    let a: BTreeSet<usize> = set_a.iter().copied().collect();
    if a.is_empty() || a.len() != set_a.len() || a.iter().any(|&i| i >= n) {
        return Err(Error::InvalidParameter("A must be a non-empty set of distinct nodes".into()));
    }
    if !(alpha > 0.0 && beta >= alpha && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("need beta >= alpha > 0 (got {alpha}, {beta})")));
    }
    if dim < 4 || dim % 2 != 0 {
        return Err(Error::InvalidParameter(format!("truncation D = {dim} must be even and >= 4")));
    }
    if d_split == 0 {
        return Err(Error::InvalidParameter("split distance must be positive".into()));
    }
    let dist = g.hop_distances(set_a);
    if dist.iter().any(Option::is_none) {
        return Err(Error::Disconnected {
            components: g.component_count(),
        });
    }
    let far: Vec<usize> = (0..n).filter(|&i| dist[i].unwrap() >= d_split).collect();
    if far.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no node is at distance >= {d_split} from A"
        )));
    }
    let spread = n as f64 * (beta - alpha) / 8.0;
    let w_a = spread / a.len() as f64;
    let w_far = spread / far.len() as f64;
    let objectives = (0..n)
        .map(|i| {
            let f = if a.contains(&i) {
                BlockQuadratic::chain(dim, alpha, w_a, Coupling::Leading, true)?
            } else if dist[i].unwrap() >= d_split {
                BlockQuadratic::chain(dim, alpha, w_far, Coupling::Paired, false)?
            } else {
                BlockQuadratic::chain(dim, alpha, 0.0, Coupling::None, false)?
            };
            Ok(Arc::new(f) as Arc<dyn LocalObjective>)
        })
        .collect::<Result<Vec<_>>>()?;
    let q = chain_ratio(alpha, beta);
    let theta_star = DVector::from_fn(dim, |k, _| q.powi(k as i32 + 1));
    Ok(HardInstance {
        spec: HardInstanceSpec {
            graph: g.clone(),
            set_a: a.into_iter().collect(),
            d_split,
            alpha,
            beta,
            dim,
        },
        far,
        objectives,
        theta_star,
    })
}

/// (√β − √α)/(√β + √α)
pub fn chain_ratio(alpha: f64, beta: f64) -> f64 {
    (beta.sqrt() - alpha.sqrt()) / (beta.sqrt() + alpha.sqrt())
}

/// The construction used for the decentralized bound on a path of `n`
/// nodes: A = first ⌈n/32⌉ nodes, d = ⌈15n/16 − 1⌉, α = 1 and β chosen so
/// that the worst local condition number is `kappa_l`.
pub fn faithful_instance(n: usize, kappa_l: f64, dim: usize) -> Result<HardInstance> {
    if n < 2 {
        return Err(Error::InvalidParameter("the path needs at least two nodes".into()));
    }
    if !(kappa_l >= 1.0) {
        return Err(Error::InvalidParameter(format!("kappa_l = {kappa_l} must be >= 1")));
    }
    let edges = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
    let g = Graph::new(n, edges, format!("path-{n}"))?;
    let a_size = n.div_ceil(32);
    let d_split = ((15.0 * n as f64 / 16.0 - 1.0).ceil() as usize).max(1);
    let beta = 1.0 + (kappa_l - 1.0) * 2.0 * a_size as f64 / n as f64;
    build_hard_instance(&g, &(0..a_size).collect::<Vec<_>>(), d_split, 1.0, beta, dim)
}

impl HardInstance {
    pub fn spec(&self) -> &HardInstanceSpec {
        &self.spec
    }

    pub fn graph(&self) -> &Graph {
        &self.spec.graph
    }

    pub fn set_a(&self) -> &[usize] {
        &self.spec.set_a
    }

    /// A_d^c, the nodes at distance at least d from A.
    pub fn far_set(&self) -> &[usize] {
        &self.far
    }

    pub fn d_split(&self) -> usize {
        self.spec.d_split
    }

    pub fn alpha(&self) -> f64 {
        self.spec.alpha
    }

    pub fn beta(&self) -> f64 {
        self.spec.beta
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn objectives(&self) -> &[Arc<dyn LocalObjective>] {
        &self.objectives
    }

    pub fn global(&self) -> Result<GlobalObjective> {
        GlobalObjective::new(self.objectives.clone())
    }

    /// Closed-form minimizer of the untruncated problem, θ*_k = q^k.
    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn q(&self) -> f64 {
        chain_ratio(self.alpha(), self.beta())
    }

    pub fn kappa_g(&self) -> f64 {
        self.beta() / self.alpha()
    }

    /// max_i β_i / min_i α_i over the node functions.
    pub fn kappa_l(&self) -> f64 {
        let beta = self.objectives.iter().map(|f| f.beta()).fold(0.0, f64::max);
        let alpha = self.objectives.iter().map(|f| f.alpha()).fold(f64::INFINITY, f64::min);
        beta / alpha
    }

    /// ‖θ₀ − θ*‖² for θ₀ = 0 over the D kept coordinates.
    pub fn r0(&self) -> f64 {
        self.theta_star.norm_squared()
    }

    /// β·Σ_{k>D} q^{2k}: how much the dropped coordinates can move f̄.
    pub fn truncation_tail(&self) -> f64 {
        let q2 = self.q().powi(2);
        self.beta() * q2.powi(self.dim() as i32) * q2 / (1.0 - q2)
    }
}

fn weighted_gamma(n: usize, edges: &[(usize, usize, f64)]) -> Result<f64> {
    let mut l = DMatrix::zeros(n, n);
    for &(i, j, w) in edges {
        l[(i, j)] -= w;
        l[(j, i)] -= w;
        l[(i, i)] += w;
        l[(j, j)] += w;
    }
    let ev = symmetric_eigenvalues(&l)?;
    Ok((ev[n - 2] / ev[0]).max(0.0))
}

/// Path on `n` nodes whose first edge has weight 1 − a.
pub fn weighted_path_edges(n: usize, a: f64) -> Vec<(usize, usize, f64)> {
    (0..n - 1)
        .map(|i| (i, i + 1, if i == 0 { 1.0 - a } else { 1.0 }))
        .collect()
}

/// Triangle whose edge (0, 2) has weight a.
pub fn weighted_triangle_edges(a: f64) -> Vec<(usize, usize, f64)> {
    vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, a)]
}

#[derive(Debug, Clone)]
pub struct HardGossip {
    pub graph: Graph,
    pub matrix: GossipMatrix,
    /// Size of the path (2 means the weighted triangle).
    pub n: usize,
    pub a: f64,
}

/// Network with eigengap `gamma_target`: the smallest path whose eigengap
/// is at least the target, with its first edge weakened; for targets above
/// 1/3 a triangle with one weakened edge.
pub fn hard_gossip_matrix(gamma_target: f64) -> Result<HardGossip> {
    if !(gamma_target > 0.0 && gamma_target <= 1.0) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma_target} must be in (0, 1]")));
    }
    let mut n = 2;
    // γ_3 = 1/3 exactly but evaluates a rounding error below it.
    while path_gamma(n + 1) >= gamma_target - 1e-14 {
        n += 1;
        if n > MAX_HARD_NODES {
            return Err(Error::InvalidParameter(format!("gamma = {gamma_target:e} needs too many nodes")));
        }
    }
    let edges_for = |a: f64| -> Vec<(usize, usize, f64)> {
        let e = if n == 2 { weighted_triangle_edges(a) } else { weighted_path_edges(n, a) };
        e.into_iter().filter(|&(_, _, w)| w > 0.0).collect()
    };
    let nodes = n.max(3);
    let gap = |a: f64| -> Result<f64> { Ok(weighted_gamma(nodes, &edges_for(a))? - gamma_target) };
    // On the path γ falls from γ_n to 0 as a grows; on the triangle it rises
    // from 1/3 to 1.
    let (mut at_or_above, mut below) = if n == 2 { (1.0, 0.0) } else { (0.0, 1.0) };
    let mut a = at_or_above;
    let mut residual = gap(a)?;
    if residual < -GAMMA_TOLERANCE || gap(below)? > GAMMA_TOLERANCE {
        return Err(Error::Convergence {
            what: "eigengap bisection bracket",
            iterations: 0,
            residual,
        });
    }
    let mut iterations = 0;
    while residual.abs() > GAMMA_TOLERANCE {
        iterations += 1;
        if iterations > 200 {
            return Err(Error::Convergence {
                what: "eigengap bisection",
                iterations,
                residual,
            });
        }
        a = 0.5 * (at_or_above + below);
        residual = gap(a)?;
        if residual >= 0.0 {
            at_or_above = a;
        } else {
            below = a;
        }
    }
    let kind = if n == 2 { format!("triangle-a{a}") } else { format!("weighted-path-{n}-a{a}") };
    let graph = Graph::new(nodes, edges_for(a), kind)?;
    let matrix = laplacian(&graph)?;
    Ok(HardGossip { graph, matrix, n, a })
}

/// (α_g/2)(1 − 4/√κ_g)^{1 + t/(1+Δτ)}·R0, or 0 when κ_g ≤ 16.
pub fn lb_curve_centralized(t: f64, kappa_g: f64, delta: usize, tau: f64, r0: f64, alpha_g: f64) -> f64 {
    if kappa_g <= 16.0 {
        return 0.0;
    }
    let base = 1.0 - 4.0 / kappa_g.sqrt();
    0.5 * alpha_g * base.powf(1.0 + t / (1.0 + delta as f64 * tau)) * r0
}

/// (3α/2)(1 − 16/√κ_l)^{1 + t/(1 + τ/(5√γ))}·R0, or 0 when κ_l ≤ 256.
pub fn lb_curve_decentralized(t: f64, kappa_l: f64, gamma: f64, tau: f64, r0: f64, alpha: f64) -> f64 {
    if kappa_l <= 256.0 {
        return 0.0;
    }
    let base = 1.0 - 16.0 / kappa_l.sqrt();
    1.5 * alpha * base.powf(1.0 + t / (1.0 + tau / (5.0 * gamma.sqrt()))) * r0
}

/// Last non-zero coordinate (1-based, 0 for none) held in each node's
/// memory, as a step function of simulated time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportProfile {
    /// Per node, (time, k) at each increase of k.
    events: Vec<Vec<(f64, usize)>>,
}

impl SupportProfile {
    pub fn new(n: usize) -> Self {
        Self {
            events: vec![vec![(0.0, 0)]; n],
        }
    }

    pub fn nodes(&self) -> usize {
        self.events.len()
    }

    pub fn observe(&mut self, time: f64, blocks: &[&ParameterBlock]) {
        for (i, ev) in self.events.iter_mut().enumerate() {
            let k = blocks.iter().map(|b| b.last_nonzero(i)).max().unwrap_or(0);
            let &(_, current) = ev.last().expect("profiles start with an entry");
            if k > current {
                ev.push((time, k));
            }
        }
    }

    pub fn events(&self, node: usize) -> &[(f64, usize)] {
        &self.events[node]
    }

    /// k_{i,t}
    pub fn k_at(&self, node: usize, time: f64) -> usize {
        self.events[node]
            .iter()
            .take_while(|&&(t, _)| t <= time)
            .last()
            .map_or(0, |&(_, k)| k)
    }

    pub fn max_k(&self) -> usize {
        self.events.iter().map(|e| e.last().unwrap().1).max().unwrap_or(0)
    }

    /// First event with k > ⌊(t−1)/(1+dτ)⌋ + 1.
    pub fn first_violation(&self, d: usize, tau: f64) -> Option<(usize, f64, usize)> {
        self.find(|t, k| k as f64 > ((t - 1.0) / (1.0 + d as f64 * tau) + 1e-9).floor() + 1.0)
    }

    /// First event with k > t/(1+dτ) + 1.
    pub fn first_weak_violation(&self, d: usize, tau: f64) -> Option<(usize, f64, usize)> {
        self.find(|t, k| k as f64 > t / (1.0 + d as f64 * tau) + 1.0 + 1e-9)
    }

    fn find(&self, bad: impl Fn(f64, usize) -> bool) -> Option<(usize, f64, usize)> {
        self.events.iter().enumerate().find_map(|(i, ev)| {
            ev.iter().find(|&&(t, k)| bad(t, k)).map(|&(t, k)| (i, t, k))
        })
    }
}

/// Runs `iterations` steps of `solver`, recording the support of every block
/// at the simulated time it enters node memory.
pub fn track_support(solver: &mut dyn Solver, iterations: usize) -> Result<SupportProfile> {
    // Every method starts from zero memory; anything already held at t = 0
    // (such as θ₀ of the dual methods) is reported by the first step.
    let mut profile = SupportProfile::new(solver.theta().nodes());
    for _ in 0..iterations {
        solver.step_observed(&mut |t, blocks| profile.observe(t, blocks))?;
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::reference_solution;
    use crate::solvers::{DualAccelerated, TimeModel};
    use crate::topology::{build_graph, Topology};

    fn path(n: usize) -> Graph {
        build_graph(&Topology::Path { n }, 0).unwrap().graph
    }

    #[test]
    fn block_conjugate_inverts_gradient_and_keeps_zeros() {
        for coupling in [Coupling::Leading, Coupling::Paired, Coupling::None] {
            let f = BlockQuadratic::chain(8, 0.5, 2.0, coupling, coupling == Coupling::Leading).unwrap();
            let x = DVector::from_fn(8, |i, _| (i as f64 * 0.7).sin());
            let th = f.conj_grad(&x, None).unwrap();
            assert!((f.grad(&th) - &x).amax() < 1e-12);
            let dense = f.hessian(&th);
            let ev = symmetric_eigenvalues(&dense).unwrap();
            assert!((ev[0] - f.beta()).abs() < 1e-12 && (ev[7] - f.alpha()).abs() < 1e-12);
        }
        let f = BlockQuadratic::chain(8, 1.0, 1.0, Coupling::Paired, false).unwrap();
        let mut x = DVector::zeros(8);
        x[2] = 1.0;
        let th = f.conj_grad(&x, None).unwrap();
        assert!(th[3] != 0.0);
        assert!(th.iter().skip(4).all(|&v| v == 0.0));
    }

    #[test]
    fn chain_solution_halves_for_kappa_nine() {
        let inst = build_hard_instance(&path(6), &[0], 4, 1.0, 9.0, 40).unwrap();
        assert_eq!(inst.q(), 0.5);
        for k in 0..40 {
            assert_eq!(inst.theta_star()[k], 0.5f64.powi(k as i32 + 1));
        }
        let global = inst.global().unwrap();
        // Truncating the chain lifts its bottom eigenvalue to 2 − 2cos(π/(D+1)).
        let floor = 1.0 + 8.0 / 4.0 * (2.0 - 2.0 * (std::f64::consts::PI / 41.0).cos());
        assert!((global.alpha_g() - floor).abs() < 1e-9);
        assert!(global.beta_g() <= 9.0 + 1e-9);
        let exact = reference_solution(&global).unwrap();
        assert!((exact - inst.theta_star()).rows(0, 20).amax() < 1e-9);
    }

    #[test]
    fn gradient_vanishes_at_closed_form_up_to_truncation() {
        let inst = faithful_instance(16, 1024.0, 200).unwrap();
        let g = inst.global().unwrap().grad(inst.theta_star());
        let tail = 2.0 * inst.q().powi(199);
        for k in 0..199 {
            assert!(g[k].abs() <= tail + 1e-13, "coordinate {k}: {}", g[k]);
        }
    }

    #[test]
    fn equal_moduli_give_pure_ridge() {
        let inst = build_hard_instance(&path(5), &[0], 3, 2.0, 2.0, 10).unwrap();
        assert!(inst.theta_star().iter().all(|&v| v == 0.0));
        for f in inst.objectives() {
            let th = DVector::from_element(10, 1.5);
            assert!((f.value(&th) - th.norm_squared()).abs() < 1e-12);
        }
    }

    #[test]
    fn faithful_preset_constants() {
        let inst = faithful_instance(16, 1024.0, 200).unwrap();
        assert_eq!(inst.set_a(), &[0]);
        assert_eq!(inst.d_split(), 14);
        assert_eq!(inst.far_set(), &[14, 15]);
        assert!((inst.kappa_g() - 128.875).abs() < 1e-12);
        assert!((inst.kappa_l() - 1024.0).abs() < 1e-9);
        let global = inst.global().unwrap();
        assert!(global.alpha_g() >= 1.0 - 1e-9);
        assert!(global.beta_g() <= inst.beta() + 1e-9);
        assert!(inst.truncation_tail() < 1e-26);
    }

    #[test]
    fn rejects_invalid_instances() {
        assert!(build_hard_instance(&path(4), &[0], 5, 1.0, 4.0, 10).is_err());
        assert!(build_hard_instance(&path(4), &[], 2, 1.0, 4.0, 10).is_err());
        assert!(build_hard_instance(&path(4), &[0], 2, 1.0, 4.0, 9).is_err());
        assert!(build_hard_instance(&path(4), &[0], 2, 2.0, 1.0, 10).is_err());
    }

    #[test]
    fn path_eigengaps_decrease() {
        assert!((path_gamma(2) - 1.0).abs() < 1e-15);
        for n in 2..50 {
            assert!(path_gamma(n) > path_gamma(n + 1));
        }
    }

    #[test]
    fn hard_gossip_hits_one_third_without_moving() {
        let h = hard_gossip_matrix(1.0 / 3.0).unwrap();
        assert_eq!(h.n, 3);
        assert_eq!(h.a, 0.0);
        assert!((h.matrix.gamma() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn hard_gossip_hits_targets() {
        for &g in &[0.05, 1.0, 0.6, 0.34, 0.2, 0.01, 0.0031] {
            let h = hard_gossip_matrix(g).unwrap();
            assert!((h.matrix.gamma() - g).abs() <= 1e-9, "{g}: {}", h.matrix.gamma());
        }
    }

    #[test]
    fn fully_weakened_path_is_rejected() {
        let n = 6;
        let mut l = DMatrix::zeros(n, n);
        for (i, j, w) in weighted_path_edges(n, 1.0) {
            l[(i, j)] -= w;
            l[(j, i)] -= w;
            l[(i, i)] += w;
            l[(j, j)] += w;
        }
        assert!((weighted_gamma(n, &weighted_path_edges(n, 1.0)).unwrap()).abs() < 1e-12);
        assert!(matches!(
            GossipMatrix::new(l, |i, j| i.abs_diff(j) == 1),
            Err(Error::GossipCondition(_))
        ));
    }

    #[test]
    fn bound_curve_examples() {
        assert!((lb_curve_centralized(0.0, 64.0, 3, 0.0, 2.0, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(lb_curve_centralized(5.0, 16.0, 3, 1.0, 2.0, 1.0), 0.0);
        let slope = |dt: f64| {
            let a = lb_curve_centralized(0.0, 100.0, 1, dt, 1.0, 1.0).ln();
            let b = lb_curve_centralized(10.0, 100.0, 1, dt, 1.0, 1.0).ln();
            (b - a) / 10.0
        };
        assert!((slope(3.0) / slope(7.0) - 2.0).abs() < 1e-12);

        assert!((lb_curve_decentralized(0.0, 1024.0, 0.1, 1.0, 2.0, 1.0) - 1.5).abs() < 1e-15);
        assert_eq!(lb_curve_decentralized(0.0, 256.0, 0.1, 1.0, 2.0, 1.0), 0.0);
        let base: f64 = 0.5;
        let tiny = lb_curve_decentralized(4.0, 1024.0, 0.1, 1e-14, 1.0, 1.0);
        assert!((tiny - 1.5 * base.powi(5)).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for t in 0..100 {
            let v = lb_curve_decentralized(t as f64, 2000.0, 0.05, 2.0, 1.0, 1.0);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn first_computation_reaches_only_first_coordinate() {
        let inst = faithful_instance(16, 1024.0, 20).unwrap();
        let zero = DVector::zeros(20);
        let cols: Vec<_> = inst.objectives().iter().map(|f| f.conj_grad(&zero, None).unwrap()).collect();
        let theta = ParameterBlock::from_columns(&cols);
        let mut p = SupportProfile::new(16);
        assert_eq!(p.max_k(), 0);
        p.observe(1.0, &[&theta]);
        assert_eq!(p.max_k(), 1);
        assert_eq!(p.k_at(0, 1.0), 1);
        assert_eq!(p.k_at(5, 1.0), 0);
        assert_eq!(p.k_at(0, 0.5), 0);
    }

    #[test]
    fn dual_methods_respect_propagation_ceiling() {
        let inst = build_hard_instance(&path(5), &[0], 3, 1.0, 400.0, 40).unwrap();
        let w = laplacian(inst.graph()).unwrap();
        let tm = TimeModel::new(1.0).unwrap();
        for mut solver in [
            DualAccelerated::ssda(inst.objectives().to_vec(), w.clone(), tm).unwrap(),
            DualAccelerated::msda(inst.objectives().to_vec(), w.clone(), tm).unwrap(),
        ] {
            let profile = track_support(&mut solver, 150).unwrap();
            assert!(profile.max_k() >= 3);
            assert_eq!(profile.first_violation(3, 1.0), None);
            assert_eq!(profile.first_weak_violation(3, 1.0), None);
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let inst = faithful_instance(8, 600.0, 20).unwrap();
        let json = serde_json::to_string(inst.spec()).unwrap();
        let back: HardInstanceSpec = serde_json::from_str(&json).unwrap();
        let rebuilt = back.build().unwrap();
        assert_eq!(rebuilt.spec(), inst.spec());
        assert_eq!(rebuilt.far_set(), inst.far_set());
    }
}
