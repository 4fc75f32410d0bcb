//! Synthetic datasets, sharding, and the experiment runner that turns one
//! JSON config into per-algorithm CSV traces and a ranked summary.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::ParameterBlock;
use crate::composite::{CompositeDual, CompositeObjective};
use crate::error::{Error, Result};
use crate::lower_bounds::{faithful_instance, HardInstance, DEFAULT_TRUNCATION};
use crate::objectives::{make_least_squares, make_logistic, reference_solution, GlobalObjective, LocalObjective};
use crate::solvers::{
    baseline_step_candidates, max_suboptimality, run, tune_step, Dagd, Diging, DualAccelerated, Extra, Metric,
    RunOptions, Solver, TimeModel, Trace,
};
use crate::topology::{build_graph, diameter, laplacian, rng_from_seed, GossipMatrix, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    LeastSquares,
    Logistic,
    HardInstance,
}

/// Samples as columns of `x` (d×m) with targets or ±1 labels in `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub task: Task,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    task: Task,
    d: usize,
    m: usize,
    /// One row per sample.
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DatasetFile {
            task: self.task,
            d: self.dim(),
            m: self.len(),
            x: self.x.column_iter().map(|c| c.iter().copied().collect()).collect(),
            y: self.y.iter().copied().collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(s)?;
        if file.x.len() != file.m || file.y.len() != file.m || file.x.iter().any(|r| r.len() != file.d) {
            return Err(Error::Config("dataset dimensions do not match its header".into()));
        }
        Ok(Self {
            x: DMatrix::from_fn(file.d, file.m, |i, j| file.x[j][i]),
            y: DVector::from_vec(file.y),
            task: file.task,
        })
    }
}

/// y_j = x_jᵀ𝟙 + cos(x_jᵀ𝟙) + ξ_j with x_j ~ N(0, I) and ξ_j ~ N(0, 1/4).
pub fn gen_regression_dataset(m: usize, d: usize, seed: u64) -> Result<Dataset> {
    gen_regression_with_noise(m, d, 0.5, seed)
}

pub fn gen_regression_with_noise(m: usize, d: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidParameter("dataset needs m, d >= 1".into()));
    }
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    let mut x = DMatrix::<f64>::zeros(d, m);
    let mut y = DVector::zeros(m);
    for j in 0..m {
        for i in 0..d {
            x[(i, j)] = StandardNormal.sample(&mut rng);
        }
        let s = x.column(j).sum();
        y[j] = s + s.cos() + noise.sample(&mut rng);
    }
    Ok(Dataset {
        x,
        y,
        task: Task::LeastSquares,
    })
}

/// First m/2 samples labelled +1, the rest −1, with x_j ~ N(y_j𝟙, I).
pub fn gen_classification_dataset(m: usize, d: usize, seed: u64) -> Result<Dataset> {
    if m == 0 || d == 0 || m % 2 != 0 {
        return Err(Error::InvalidParameter(format!("classification needs even m >= 2 and d >= 1 (got m = {m})")));
    }
    let mut rng = rng_from_seed(seed);
    let y = DVector::from_fn(m, |j, _| if j < m / 2 { 1.0 } else { -1.0 });
    let mut x = DMatrix::zeros(d, m);
    for j in 0..m {
        for i in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[(i, j)] = y[j] + z;
        }
    }
    Ok(Dataset {
        x,
        y,
        task: Task::Logistic,
    })
}

/// Random permutation, then `n` equal contiguous blocks. Uses its own RNG
/// stream so sharing a seed with the generator is safe.
pub fn shard(ds: &Dataset, n: usize, seed: u64) -> Result<Vec<Dataset>> {
    let m = ds.len();
    if n == 0 || m % n != 0 {
        return Err(Error::InvalidParameter(format!("{m} samples cannot be split evenly over {n} nodes")));
    }
    let mut rng = rng_from_seed(seed);
    rng.set_stream(1);
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut rng);
    let size = m / n;
    Ok(perm
        .chunks(size)
        .map(|idx| Dataset {
            x: ds.x.select_columns(idx),
            y: DVector::from_iterator(size, idx.iter().map(|&j| ds.y[j])),
            task: ds.task,
        })
        .collect())
}

/// e_t = max_i f̄(θ_i) − f̄(θ*).
pub fn error_metric(theta: &ParameterBlock, global: &GlobalObjective, theta_star: &DVector<f64>) -> f64 {
    max_suboptimality(theta, global, global.value(theta_star))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ssda,
    Msda,
    Dagd,
    Extra,
    Diging,
    CompositeDual,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ssda => "ssda",
            Algorithm::Msda => "msda",
            Algorithm::Dagd => "dagd",
            Algorithm::Extra => "extra",
            Algorithm::Diging => "diging",
            Algorithm::CompositeDual => "composite_dual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlgorithmSpec {
    Name(Algorithm),
    Detailed {
        name: Algorithm,
        /// Fixed step for EXTRA/DIGing; tuned when absent.
        #[serde(default)]
        step: Option<f64>,
        /// Output name; defaults to the algorithm name.
        #[serde(default)]
        label: Option<String>,
    },
}

impl AlgorithmSpec {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            AlgorithmSpec::Name(a) => *a,
            AlgorithmSpec::Detailed { name, .. } => *name,
        }
    }

    pub fn step(&self) -> Option<f64> {
        match self {
            AlgorithmSpec::Name(_) => None,
            AlgorithmSpec::Detailed { step, .. } => *step,
        }
    }

    pub fn label(&self) -> String {
        match self {
            AlgorithmSpec::Detailed { label: Some(l), .. } => l.clone(),
            _ => self.algorithm().name().to_string(),
        }
    }
}

/// Parameters of the hard-instance task (the network must be a path).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardConfig {
    pub kappa_l: f64,
    #[serde(default = "default_truncation")]
    pub dim: usize,
}

fn default_truncation() -> usize {
    DEFAULT_TRUNCATION
}
fn default_m() -> usize {
    10_000
}
fn default_d() -> usize {
    10
}
fn default_c() -> f64 {
    0.1
}
fn default_noise() -> f64 {
    0.5
}
fn default_iterations() -> usize {
    10_000
}
fn default_record_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub network: Topology,
    pub tau: f64,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_c")]
    pub c: f64,
    /// Standard deviation of the regression noise ξ.
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    /// Drives data generation, sharding and random networks.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub target_error: Option<f64>,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub hard: Option<HardConfig>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau = {} must be positive", self.tau));
        }
        if !(self.c > 0.0) {
            return fail(format!("c = {} must be positive", self.c));
        }
        if self.algorithms.is_empty() {
            return fail("no algorithms configured".into());
        }
        let mut labels: Vec<String> = self.algorithms.iter().map(|a| a.label()).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.algorithms.len() {
            return fail("algorithm labels must be unique".into());
        }
        if self.record_every == 0 {
            return fail("record_every must be positive".into());
        }
        let n = node_count(&self.network);
        match self.task {
            Task::LeastSquares | Task::Logistic => {
                if n == 0 || self.m % n != 0 {
                    return fail(format!("m = {} is not divisible by n = {n}", self.m));
                }
                if self.task == Task::Logistic && self.m % 2 != 0 {
                    return fail("logistic data needs an even m".into());
                }
            }
            Task::HardInstance => {
                if self.hard.is_none() {
                    return fail("hard_instance task needs a \"hard\" section".into());
                }
                if !matches!(self.network, Topology::Path { .. }) {
                    return fail("hard_instance task runs on a path network".into());
                }
                if self.algorithms.iter().any(|a| a.algorithm() == Algorithm::CompositeDual) {
                    return fail("composite_dual needs a data task".into());
                }
            }
        }
        Ok(())
    }
}

fn node_count(t: &Topology) -> usize {
    match *t {
        Topology::Path { n } | Topology::Star { n } | Topology::Complete { n } | Topology::ErdosRenyi { n, .. } => n,
        Topology::Grid { rows, cols } => rows * cols,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub time_to_target: Option<f64>,
    pub iterations: usize,
    pub final_error: Option<f64>,
    pub parameters: BTreeMap<String, f64>,
    pub rank: Option<usize>,
    pub error: Option<String>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: Task,
    pub network: String,
    pub tau: f64,
    pub target_error: Option<f64>,
    pub kappa_l: f64,
    pub kappa_g: f64,
    pub gamma: f64,
    pub diameter: usize,
    pub algorithms: BTreeMap<String, AlgorithmSummary>,
    /// Labels by increasing time to target; runs that never reached it last.
    pub ranking: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// In config order.
    pub traces: Vec<(String, std::result::Result<Trace, String>)>,
    pub summary: Summary,
}

impl ExperimentOutput {
    pub fn trace(&self, label: &str) -> Option<&Trace> {
        self.traces
            .iter()
            .find(|(l, _)| l == label)
            .and_then(|(_, t)| t.as_ref().ok())
    }

    pub fn any_diverged(&self) -> bool {
        self.summary.algorithms.values().any(|a| a.diverged)
    }

    /// Writes `<label>.csv`, `<label>.meta.json` and `summary.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (label, trace) in &self.traces {
            if let Ok(trace) = trace {
                let mut out = BufWriter::new(fs::File::create(dir.join(format!("{label}.csv")))?);
                trace.write_csv(&mut out, true)?;
                fs::write(
                    dir.join(format!("{label}.meta.json")),
                    serde_json::to_string_pretty(&trace.metadata)?,
                )?;
            }
        }
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary)?)?;
        Ok(())
    }
}

/// Everything the algorithms of one experiment share.
pub struct Problem {
    pub w: GossipMatrix,
    pub diameter: usize,
    pub locals: Vec<Arc<dyn LocalObjective>>,
    pub composite: Option<Vec<CompositeObjective>>,
    pub metric: Metric,
    pub hard: Option<HardInstance>,
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    cfg.validate()?;
    let graph = build_graph(&cfg.network, cfg.seed)?.graph;
    let w = laplacian(&graph)?;
    let delta = diameter(&graph)?;
    let n = graph.n();
    let (locals, composite, hard): (Vec<Arc<dyn LocalObjective>>, _, _) = match cfg.task {
        Task::LeastSquares | Task::Logistic => {
            let ds = if cfg.task == Task::LeastSquares {
                gen_regression_with_noise(cfg.m, cfg.d, cfg.noise_std, cfg.seed)?
            } else {
                gen_classification_dataset(cfg.m, cfg.d, cfg.seed)?
            };
            let shards = shard(&ds, n, cfg.seed)?;
            let mut locals: Vec<Arc<dyn LocalObjective>> = Vec::with_capacity(n);
            let mut comp = Vec::with_capacity(n);
            for s in &shards {
                if cfg.task == Task::LeastSquares {
                    locals.push(Arc::new(make_least_squares(&s.x, &s.y, cfg.c)?));
                    comp.push(CompositeObjective::least_squares(&s.x, &s.y, cfg.c)?);
                } else {
                    locals.push(Arc::new(make_logistic(&s.x, &s.y, cfg.c)?));
                    comp.push(CompositeObjective::logistic(&s.x, &s.y, cfg.c)?);
                }
            }
            (locals, Some(comp), None)
        }
        Task::HardInstance => {
            let h = cfg.hard.expect("validated");
            let inst = faithful_instance(n, h.kappa_l, h.dim)?;
            (inst.objectives().to_vec(), None, Some(inst))
        }
    };
    let global = GlobalObjective::new(locals.clone())?;
    let star = reference_solution(&global)?;
    let metric = Metric::new(global, star, Some(w.clone()));
    Ok(Problem {
        w,
        diameter: delta,
        locals,
        composite,
        metric,
        hard,
    })
}

/// Builds the solver for `spec`, tuning the baseline steps when needed.
pub fn build_solver(spec: &AlgorithmSpec, problem: &Problem, tm: TimeModel, opts: &RunOptions) -> Result<Box<dyn Solver>> {
    let locals = problem.locals.clone();
    let w = problem.w.clone();
    let pilot = opts.max_iterations.clamp(1, 300);
    Ok(match spec.algorithm() {
        Algorithm::Ssda => Box::new(DualAccelerated::ssda(locals, w, tm)?),
        Algorithm::Msda => Box::new(DualAccelerated::msda(locals, w, tm)?),
        Algorithm::Dagd => Box::new(Dagd::new(problem.metric.global().clone(), problem.diameter, tm)?),
        Algorithm::Extra => {
            let step = match spec.step() {
                Some(s) => s,
                None => tune_step(&baseline_step_candidates(&locals), pilot, &problem.metric, |s| {
                    Ok(Box::new(Extra::new(locals.clone(), w.clone(), tm, s)?))
                })?,
            };
            Box::new(Extra::new(locals, w, tm, step)?)
        }
        Algorithm::Diging => {
            let step = match spec.step() {
                Some(s) => s,
                None => tune_step(&baseline_step_candidates(&locals), pilot, &problem.metric, |s| {
                    Ok(Box::new(Diging::new(locals.clone(), w.clone(), tm, s)?))
                })?,
            };
            Box::new(Diging::new(locals, w, tm, step)?)
        }
        Algorithm::CompositeDual => {
            let objs = problem
                .composite
                .clone()
                .ok_or_else(|| Error::Config("composite_dual needs a data task".into()))?;
            Box::new(CompositeDual::new(objs, w, tm)?)
        }
    })
}

/// Runs every configured algorithm (in parallel) on one shared problem.
/// A failing algorithm is recorded in the summary; the others still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let problem = build_problem(cfg)?;
    let tm = TimeModel::new(cfg.tau)?;
    let opts = RunOptions {
        max_iterations: cfg.max_iterations,
        target_error: cfg.target_error,
        record_every: cfg.record_every,
    };
    let seeds = BTreeMap::from([("seed".to_string(), cfg.seed)]);
    let traces: Vec<(String, std::result::Result<Trace, Error>)> = cfg
        .algorithms
        .par_iter()
        .map(|spec| {
            let result = build_solver(spec, &problem, tm, &opts).and_then(|mut s| {
                let mut trace = run(s.as_mut(), &problem.metric, &opts)?;
                trace.metadata.algorithm = spec.label();
                trace.metadata.seeds = seeds.clone();
                Ok(trace)
            });
            (spec.label(), result)
        })
        .collect();

    let global = problem.metric.global();
    let mut algorithms = BTreeMap::new();
    for (label, result) in &traces {
        let entry = match result {
            Ok(t) => AlgorithmSummary {
                time_to_target: cfg.target_error.and_then(|e| t.time_to(e)),
                iterations: t.final_record().iteration,
                final_error: Some(t.final_record().error),
                parameters: t.metadata.parameters.clone(),
                rank: None,
                error: None,
                diverged: false,
            },
            Err(e) => AlgorithmSummary {
                time_to_target: None,
                iterations: match e {
                    Error::Divergence { iteration, .. } => *iteration,
                    _ => 0,
                },
                final_error: None,
                parameters: BTreeMap::new(),
                rank: None,
                error: Some(e.to_string()),
                diverged: matches!(e, Error::Divergence { .. }),
            },
        };
        algorithms.insert(label.clone(), entry);
    }
    let ranking = rank(&mut algorithms);
    let summary = Summary {
        task: cfg.task,
        network: cfg.network.to_string(),
        tau: cfg.tau,
        target_error: cfg.target_error,
        kappa_l: global.kappa_l(),
        kappa_g: global.kappa_g(),
        gamma: problem.w.gamma(),
        diameter: problem.diameter,
        algorithms,
        ranking,
    };
    Ok(ExperimentOutput {
        traces: traces
            .into_iter()
            .map(|(l, r)| (l, r.map_err(|e| e.to_string())))
            .collect(),
        summary,
    })
}

/// Orders labels by time to target (then final error, then name) and
/// fills in the ranks of the runs that reached the target.
pub fn rank(algorithms: &mut BTreeMap<String, AlgorithmSummary>) -> Vec<String> {
    let key = |a: &AlgorithmSummary| {
        (
            a.time_to_target.unwrap_or(f64::INFINITY),
            a.final_error.unwrap_or(f64::INFINITY),
        )
    };
    let mut labels: Vec<String> = algorithms.keys().cloned().collect();
    labels.sort_by(|a, b| {
        let (ka, kb) = (key(&algorithms[a]), key(&algorithms[b]));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(b))
    });
    for (i, l) in labels.iter().enumerate() {
        let a = algorithms.get_mut(l).expect("label from map");
        a.rank = a.time_to_target.map(|_| i + 1);
    }
    labels
}
