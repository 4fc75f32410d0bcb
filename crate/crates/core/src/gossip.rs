//! Synchronous gossip and its Chebyshev-accelerated multi-round variant.
//!
//! All operators act on the right of a d×n [`ParameterBlock`]: one round is
//! `X ↦ X·W`. The accelerated procedure applies `X ↦ X·P_K(c₃W)` with
//! `P_K(x) = 1 − T_K(c₂(1 − x)) / T_K(c₂)` using K rounds.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::block::ParameterBlock;
use crate::error::{check_dim, Error, Result};
use crate::topology::GossipMatrix;

/// Above this c₂ the recursion runs on the normalized iterates x_k / a_k.
pub const NORMALIZED_RECURSION_THRESHOLD: f64 = 1e6;

/// One communication round, `X·W`.
pub fn gossip_round(x: &ParameterBlock, w: &GossipMatrix) -> Result<ParameterBlock> {
    w.apply(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub k: usize,
    /// Eigengap the constants were derived from.
    pub gamma: f64,
}

impl ChebyshevParams {
    /// Lower bound ((1 − c₁ᴷ)/(1 + c₁ᴷ))² on the eigengap of P_K(c₃W).
    pub fn poly_gamma_lower_bound(&self) -> f64 {
        let ck = self.c1.powi(self.k as i32);
        ((1.0 - ck) / (1.0 + ck)).powi(2)
    }

    /// Upper bound 1 + 1/T_K(c₂) = (1 + c₁ᴷ)²/(1 + c₁²ᴷ) on λ₁(P_K(c₃W)).
    pub fn poly_lambda_max(&self) -> f64 {
        let ck = self.c1.powi(self.k as i32);
        (1.0 + ck).powi(2) / (1.0 + ck * ck)
    }
}

/// Constants of the accelerated gossip for a matrix with eigengap `gamma` and
/// largest eigenvalue `lambda_max`.
pub fn chebyshev_params(gamma: f64, lambda_max: f64) -> Result<ChebyshevParams> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eigengap {gamma} must be positive for a valid gossip matrix"
        )));
    }
    if gamma >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "eigengap {gamma} >= 1 leaves c2 undefined; use single-step gossip (SSDA)"
        )));
    }
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda_max {lambda_max} must be positive"
        )));
    }
    let sg = gamma.sqrt();
    Ok(ChebyshevParams {
        c1: (1.0 - sg) / (1.0 + sg),
        c2: (1.0 + gamma) / (1.0 - gamma),
        c3: 2.0 / ((1.0 + gamma) * lambda_max),
        k: ((1.0 / sg).floor() as usize).max(1),
        gamma,
    })
}

/// Chebyshev polynomial of the first kind by the three-term recursion.
pub fn chebyshev_t(k: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return prev;
    }
    for _ in 1..k {
        let next = 2.0 * x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `x − c₃·x·W`, i.e. `x(I − c₃W)`.
fn shifted(x: &ParameterBlock, w: &GossipMatrix, c3: f64) -> Result<ParameterBlock> {
    let xw = w.apply(x)?;
    Ok(ParameterBlock::from_matrix(x.matrix() - xw.matrix() * c3))
}

/// K rounds of Chebyshev-accelerated gossip: returns `X·P_K(c₃W)`.
pub fn accelerated_gossip(
    x: &ParameterBlock,
    w: &GossipMatrix,
    params: &ChebyshevParams,
) -> Result<ParameterBlock> {
    accelerated_gossip_observed(x, w, params, &mut |_, _| {})
}

/// [`accelerated_gossip`], calling `round(k, x_k)` after the k-th
/// communication round.
pub fn accelerated_gossip_observed(
    x: &ParameterBlock,
    w: &GossipMatrix,
    params: &ChebyshevParams,
    round: &mut dyn FnMut(usize, &ParameterBlock),
) -> Result<ParameterBlock> {
    check_dim(w.n(), x.nodes())?;
    let k_max = params.k;
    if k_max < 1 {
        return Err(Error::InvalidParameter("accelerated gossip needs K >= 1".into()));
    }
    let c2 = params.c2;
    if c2 > NORMALIZED_RECURSION_THRESHOLD {
        return accelerated_gossip_normalized(x, w, params, round);
    }

    let (mut a_prev, mut a_cur) = (1.0, c2);
    let mut x_prev = x.clone();
    let mut x_cur = ParameterBlock::from_matrix(shifted(x, w, params.c3)?.into_matrix() * c2);
    round(1, &x_cur);
    for k in 1..k_max {
        let a_next = 2.0 * c2 * a_cur - a_prev;
        let s = shifted(&x_cur, w, params.c3)?;
        let x_next = ParameterBlock::from_matrix(s.matrix() * (2.0 * c2) - x_prev.matrix());
        a_prev = a_cur;
        a_cur = a_next;
        x_prev = x_cur;
        x_cur = x_next;
        round(k + 1, &x_cur);
    }
    if !a_cur.is_finite() || !x_cur.is_finite() {
        return Err(Error::Overflow(format!(
            "a_K overflowed (c2 = {c2:e}, K = {k_max}); the eigengap is close to 1, use SSDA"
        )));
    }
    Ok(ParameterBlock::from_matrix(x.matrix() - x_cur.matrix() / a_cur))
}

/// Same polynomial, carried on x̂_k = x_k / a_k so that a_k never materializes.
fn accelerated_gossip_normalized(
    x: &ParameterBlock,
    w: &GossipMatrix,
    params: &ChebyshevParams,
    round: &mut dyn FnMut(usize, &ParameterBlock),
) -> Result<ParameterBlock> {
    let c2 = params.c2;
    let mut x_prev = x.clone();
    let mut x_cur = shifted(x, w, params.c3)?;
    round(1, &x_cur);
    // ratio = a_{k-1} / a_k
    let mut ratio = 1.0 / c2;
    for k in 1..params.k {
        let growth = 2.0 * c2 - ratio; // a_{k+1} / a_k
        let s = shifted(&x_cur, w, params.c3)?;
        let x_next = (s.matrix() * (2.0 * c2) - x_prev.matrix() * ratio) / growth;
        ratio = 1.0 / growth;
        x_prev = x_cur;
        x_cur = ParameterBlock::from_matrix(x_next);
        round(k + 1, &x_cur);
    }
    if !x_cur.is_finite() {
        return Err(Error::Overflow(format!(
            "normalized Chebyshev recursion produced non-finite values (c2 = {c2:e}); use SSDA"
        )));
    }
    Ok(ParameterBlock::from_matrix(x.matrix() - x_cur.matrix()))
}

/// Dense P_K(c₃W), validated as a gossip matrix on the K-hop support of W.
///
/// O(n³); meant for diagnostics and theory checks, not for the solver path.
pub fn poly_gossip_matrix(w: &GossipMatrix, params: &ChebyshevParams) -> Result<GossipMatrix> {
    let n = w.n();
    let identity = ParameterBlock::from_matrix(DMatrix::identity(n, n));
    let p = accelerated_gossip(&identity, w, params)?.into_matrix();
    let hops = hop_matrix(w);
    GossipMatrix::new(p, |i, j| hops[i][j].is_some_and(|h| h <= params.k)).map_err(|e| match e {
        Error::GossipCondition(msg) => {
            Error::GossipCondition(format!("P_K(c3 W) failed validation: {msg}"))
        }
        other => other,
    })
}

/// All-pairs hop distances in the support graph of W.
fn hop_matrix(w: &GossipMatrix) -> Vec<Vec<Option<usize>>> {
    let n = w.n();
    let d = w.dense();
    (0..n)
        .map(|s| {
            let mut dist = vec![None; n];
            dist[s] = Some(0);
            let mut frontier = vec![s];
            let mut level = 0;
            while !frontier.is_empty() {
                level += 1;
                let mut next = Vec::new();
                for &u in &frontier {
                    for v in 0..n {
                        if dist[v].is_none() && d[(u, v)] != 0.0 {
                            dist[v] = Some(level);
                            next.push(v);
                        }
                    }
                }
                frontier = next;
            }
            dist
        })
        .collect()
}
