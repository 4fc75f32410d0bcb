//! Network topologies, graph Laplacians and the spectral quantities that
//! parameterize every algorithm: λ₁(W), λ_{n−1}(W), the eigengap γ(W) and
//! the hop diameter Δ.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::ParameterBlock;
use crate::error::{check_dim, Error, Result};

/// Relative slack for the PSD and kernel checks, as a multiple of λ₁.
pub const SPECTRAL_TOL: f64 = 1e-9;

/// Erdős–Rényi sampling gives up after this many disconnected draws.
pub const MAX_RESAMPLES: u64 = 10_000;

/// Seeded generator used everywhere randomness enters (ChaCha8, fixed stream).
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Deserialize)]
struct RawGraph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    #[serde(default)]
    kind: String,
}

/// Undirected weighted simple graph with 0-based node indices.
///
/// Serializes as `{"n": int, "edges": [[i, j, w], ...], "kind": string}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph")]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    kind: String,
}

impl TryFrom<RawGraph> for Graph {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Self> {
        Graph::new(raw.n, raw.edges, raw.kind)
    }
}

impl Graph {
    /// Builds a graph, rejecting self-loops, duplicate pairs, out-of-range
    /// endpoints and non-positive weights. Edges are stored with `i < j`.
    pub fn new(n: usize, edges: Vec<(usize, usize, f64)>, kind: impl Into<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut normalized = Vec::with_capacity(edges.len());
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({i}, {j}) out of range for n = {n}"
                )));
            }
            if i == j {
                return Err(Error::InvalidParameter(format!("self-loop at node {i}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "edge ({i}, {j}) has non-positive weight {w}"
                )));
            }
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            if !seen.insert((a, b)) {
                return Err(Error::InvalidParameter(format!("duplicate edge ({a}, {b})")));
            }
            normalized.push((a, b, w));
        }
        Ok(Self {
            n,
            edges: normalized,
            kind: kind.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j, _) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Hop distances from a set of sources; `None` for unreachable nodes.
    pub fn hop_distances(&self, sources: &[usize]) -> Vec<Option<usize>> {
        let adj = self.adjacency_lists();
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s].is_none() {
                dist[s] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued nodes have a distance");
            for &v in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            count += 1;
            for (v, d) in self.hop_distances(&[s]).into_iter().enumerate() {
                if d.is_some() {
                    seen[v] = true;
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }

    pub fn average_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.n as f64
    }
}

/// Topologies used by the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    Path { n: usize },
    Grid { rows: usize, cols: usize },
    Star { n: usize },
    Complete { n: usize },
    ErdosRenyi { n: usize, p: f64 },
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Path { n } => write!(f, "path-{n}"),
            Topology::Grid { rows, cols } => write!(f, "grid-{rows}x{cols}"),
            Topology::Star { n } => write!(f, "star-{n}"),
            Topology::Complete { n } => write!(f, "complete-{n}"),
            Topology::ErdosRenyi { n, p } => write!(f, "erdos_renyi-{n}-{p}"),
        }
    }
}

/// A generated graph together with the number of rejected Erdős–Rényi draws.
#[derive(Debug, Clone)]
pub struct BuiltGraph {
    pub graph: Graph,
    pub resamples: u64,
}

/// Generates a connected graph of the requested topology.
///
/// Erdős–Rényi draws that come out disconnected are redrawn with seed
/// `seed + 1`, `seed + 2`, ...; the number of rejected draws is reported.
pub fn build_graph(topology: &Topology, seed: u64) -> Result<BuiltGraph> {
    let label = topology.to_string();
    let fixed = |n: usize, edges: Vec<(usize, usize, f64)>| -> Result<BuiltGraph> {
        Ok(BuiltGraph {
            graph: Graph::new(n, edges, label.clone())?,
            resamples: 0,
        })
    };
    match *topology {
        Topology::Path { n } => {
            require_nodes(n)?;
            fixed(n, (0..n - 1).map(|i| (i, i + 1, 1.0)).collect())
        }
        Topology::Grid { rows, cols } => {
            if rows == 0 || cols == 0 || rows * cols < 2 {
                return Err(Error::InvalidParameter(format!(
                    "grid {rows}x{cols} needs at least two nodes"
                )));
            }
            let id = |r: usize, c: usize| r * cols + c;
            let mut edges = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    if c + 1 < cols {
                        edges.push((id(r, c), id(r, c + 1), 1.0));
                    }
                    if r + 1 < rows {
                        edges.push((id(r, c), id(r + 1, c), 1.0));
                    }
                }
            }
            fixed(rows * cols, edges)
        }
        Topology::Star { n } => {
            require_nodes(n)?;
            fixed(n, (1..n).map(|i| (0, i, 1.0)).collect())
        }
        Topology::Complete { n } => {
            require_nodes(n)?;
            let edges = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j, 1.0)))
                .collect();
            fixed(n, edges)
        }
        Topology::ErdosRenyi { n, p } => {
            require_nodes(n)?;
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "edge probability p = {p} outside (0, 1]"
                )));
            }
            for attempt in 0..MAX_RESAMPLES {
                let mut rng = rng_from_seed(seed.wrapping_add(attempt));
                let mut edges = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.random::<f64>() < p {
                            edges.push((i, j, 1.0));
                        }
                    }
                }
                let graph = Graph::new(n, edges, label.clone())?;
                if graph.is_connected() {
                    return Ok(BuiltGraph {
                        graph,
                        resamples: attempt,
                    });
                }
            }
            Err(Error::InvalidParameter(format!(
                "no connected Erdős–Rényi graph with n = {n}, p = {p} after {MAX_RESAMPLES} draws"
            )))
        }
    }
}

fn require_nodes(n: usize) -> Result<()> {
    if n < 2 {
        Err(Error::InvalidParameter(format!("need n >= 2, got {n}")))
    } else {
        Ok(())
    }
}

/// Exact hop diameter by all-pairs BFS.
pub fn diameter(g: &Graph) -> Result<usize> {
    let mut diam = 0;
    for s in 0..g.n() {
        for d in g.hop_distances(&[s]) {
            match d {
                Some(d) => diam = diam.max(d),
                None => {
                    return Err(Error::Disconnected {
                        components: g.component_count(),
                    })
                }
            }
        }
    }
    Ok(diam)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralInfo {
    pub lambda_max: f64,
    pub lambda_second_smallest: f64,
    pub gamma: f64,
    /// Eigenvalues sorted in decreasing order.
    pub full_spectrum: Option<Vec<f64>>,
}

/// Eigenvalues of a symmetric matrix, sorted in decreasing order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 100 * n.max(10))
        .ok_or_else(|| Error::Eigensolve(format!("no convergence on a {n}x{n} matrix")))?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigensolve("non-finite eigenvalue".into()));
    }
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// An n×n gossip matrix: symmetric, PSD, kernel spanned by 𝟙 and supported on
/// the communication pattern it was validated against.
#[derive(Debug, Clone)]
pub struct GossipMatrix {
    dense: DMatrix<f64>,
    /// Non-zeros of each column as (row, value).
    columns: Vec<Vec<(usize, f64)>>,
    spectral: SpectralInfo,
}

impl GossipMatrix {
    /// Validates `entries` against the four gossip-matrix conditions, where
    /// `allowed(i, j)` says whether an off-diagonal entry may be non-zero.
    ///
    /// A 1×1 matrix must be zero; its spectrum is reported with λ₁ = 0 and
    /// γ = 1 since there is no consensus constraint to enforce.
    pub fn new(entries: DMatrix<f64>, allowed: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let n = entries.nrows();
        check_dim(n, entries.ncols())?;
        if n == 0 {
            return Err(Error::InvalidParameter("empty gossip matrix".into()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::GossipCondition("non-finite entry".into()));
        }
        let scale = entries.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                if (entries[(i, j)] - entries[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::GossipCondition(format!(
                        "not symmetric at ({i}, {j})"
                    )));
                }
                if entries[(i, j)] != 0.0 && !allowed(i, j) {
                    return Err(Error::GossipCondition(format!(
                        "entry ({i}, {j}) is non-zero but not a network edge"
                    )));
                }
            }
        }
        if n == 1 {
            if entries[(0, 0)] != 0.0 {
                return Err(Error::GossipCondition("1x1 gossip matrix must be zero".into()));
            }
            return Ok(Self {
                columns: vec![Vec::new()],
                dense: entries,
                spectral: SpectralInfo {
                    lambda_max: 0.0,
                    lambda_second_smallest: 0.0,
                    gamma: 1.0,
                    full_spectrum: Some(vec![0.0]),
                },
            });
        }
        let spectrum = symmetric_eigenvalues(&entries)?;
        let lambda_max = spectrum[0];
        let smallest = spectrum[n - 1];
        let second = spectrum[n - 2];
        if !(lambda_max > 0.0) {
            return Err(Error::GossipCondition("largest eigenvalue is not positive".into()));
        }
        let tol = SPECTRAL_TOL * lambda_max;
        if smallest < -tol {
            return Err(Error::GossipCondition(format!(
                "not positive semi-definite (eigenvalue {smallest:e})"
            )));
        }
        let row_sum_residual = entries.column_sum().amax();
        if row_sum_residual > tol {
            return Err(Error::GossipCondition(format!(
                "W·1 != 0 (residual {row_sum_residual:e})"
            )));
        }
        if second <= tol {
            let components = spectrum.iter().filter(|&&v| v <= tol).count();
            return Err(Error::GossipCondition(format!(
                "kernel dimension {components} > 1 (disconnected support)"
            )));
        }
        let columns = (0..n)
            .map(|j| {
                (0..n)
                    .filter(|&i| entries[(i, j)] != 0.0)
                    .map(|i| (i, entries[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(Self {
            dense: entries,
            columns,
            spectral: SpectralInfo {
                lambda_max,
                lambda_second_smallest: second,
                gamma: second / lambda_max,
                full_spectrum: Some(spectrum),
            },
        })
    }

    pub fn n(&self) -> usize {
        self.dense.nrows()
    }

    pub fn dense(&self) -> &DMatrix<f64> {
        &self.dense
    }

    pub fn lambda_max(&self) -> f64 {
        self.spectral.lambda_max
    }

    pub fn lambda_second_smallest(&self) -> f64 {
        self.spectral.lambda_second_smallest
    }

    pub fn gamma(&self) -> f64 {
        self.spectral.gamma
    }

    pub fn spectral(&self) -> &SpectralInfo {
        &self.spectral
    }

    /// `s·W` for `s > 0`; the spectrum scales and γ is unchanged.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale {s} must be positive")));
        }
        let dense = &self.dense * s;
        let columns = self
            .columns
            .iter()
            .map(|col| col.iter().map(|&(i, w)| (i, w * s)).collect())
            .collect();
        let spectral = SpectralInfo {
            lambda_max: self.spectral.lambda_max * s,
            lambda_second_smallest: self.spectral.lambda_second_smallest * s,
            gamma: self.spectral.gamma,
            full_spectrum: self
                .spectral
                .full_spectrum
                .as_ref()
                .map(|v| v.iter().map(|x| x * s).collect()),
        };
        Ok(Self {
            dense,
            columns,
            spectral,
        })
    }

    /// One synchronous gossip round: `X·W`, touching only the non-zeros of W.
    pub fn apply(&self, x: &ParameterBlock) -> Result<ParameterBlock> {
        check_dim(self.n(), x.nodes())?;
        let src = x.matrix();
        let mut out = DMatrix::zeros(x.dim(), self.n());
        for (j, col) in self.columns.iter().enumerate() {
            let mut target = out.column_mut(j);
            for &(i, w) in col {
                target.axpy(w, &src.column(i), 1.0);
            }
        }
        Ok(ParameterBlock::from_matrix(out))
    }
}

/// Weighted Laplacian L = D − A of a connected graph.
pub fn laplacian(g: &Graph) -> Result<GossipMatrix> {
    let n = g.n();
    let mut l = DMatrix::zeros(n, n);
    for &(i, j, w) in g.edges() {
        l[(i, j)] -= w;
        l[(j, i)] -= w;
        l[(i, i)] += w;
        l[(j, j)] += w;
    }
    let components = g.component_count();
    if components > 1 {
        return Err(Error::Disconnected { components });
    }
    let adj: BTreeSet<(usize, usize)> = g.edges().iter().map(|&(i, j, _)| (i, j)).collect();
    GossipMatrix::new(l, |i, j| adj.contains(&(i.min(j), i.max(j))))
}

/// Spectral summary of a gossip matrix (computed once at validation).
pub fn spectral_info(w: &GossipMatrix) -> SpectralInfo {
    w.spectral().clone()
}

/// Closed-form eigengap of the unweighted path on `n` nodes.
pub fn path_gamma(n: usize) -> f64 {
    let c = (std::f64::consts::PI / n as f64).cos();
    (1.0 - c) / (1.0 + c)
}
