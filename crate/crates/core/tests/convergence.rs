use gossipopt::bench::{
    build_problem, build_solver, rank, run_experiment, Algorithm, AlgorithmSpec, ExperimentConfig, Problem, Task,
};
use gossipopt::gossip::chebyshev_params;
use gossipopt::solvers::{run, RunOptions, Trace, TimeModel};
use gossipopt::topology::Topology;

const ALL: [Algorithm; 6] = [
    Algorithm::Ssda,
    Algorithm::Msda,
    Algorithm::Dagd,
    Algorithm::Extra,
    Algorithm::Diging,
    Algorithm::CompositeDual,
];

fn config(task: Task, network: Topology, tau: f64, m: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig::from_json(
        &serde_json::json!({
            "task": task,
            "network": network,
            "tau": tau,
            "algorithms": ["ssda"],
            "m": m,
            "d": 4,
            "seed": seed,
        })
        .to_string(),
    )
    .unwrap()
}

fn solve(problem: &Problem, alg: Algorithm, tau: f64, opts: &RunOptions) -> Trace {
    let tm = TimeModel::new(tau).unwrap();
    let mut s = build_solver(&AlgorithmSpec::Name(alg), problem, tm, opts).unwrap();
    run(s.as_mut(), &problem.metric, opts).unwrap()
}

/// Least-squares slope and R² of ln e against clock.
fn log_linear_fit(trace: &Trace) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = trace
        .records
        .iter()
        .filter(|r| r.error > 0.0)
        .map(|r| (r.clock, r.error.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    (sxy / sxx, sxy * sxy / (sxx * syy))
}

#[test]
fn every_solver_reaches_the_reference_solution() {
    for task in [Task::LeastSquares, Task::Logistic] {
        let problem = build_problem(&config(task, Topology::ErdosRenyi { n: 12, p: 0.4 }, 1.0, 240, 2)).unwrap();
        let star = problem.metric.theta_star().clone();
        let opts = RunOptions::new(20_000, Some(1e-13));
        for alg in ALL {
            let trace = solve(&problem, alg, 1.0, &opts);
            let tm = TimeModel::new(1.0).unwrap();
            let mut s = build_solver(&AlgorithmSpec::Name(alg), &problem, tm, &opts).unwrap();
            for _ in 0..trace.final_record().iteration {
                s.step().unwrap();
            }
            let theta = s.theta();
            let gap = (0..theta.nodes()).map(|i| (theta.column(i) - &star).amax()).fold(0.0, f64::max);
            assert!(gap <= 2e-5, "{task:?} {}: {gap:e}", alg.name());
        }
    }
}

#[test]
fn clocks_follow_the_stated_iteration_costs() {
    let tau = 0.7;
    let problem = build_problem(&config(Task::Logistic, Topology::Grid { rows: 3, cols: 4 }, tau, 240, 1)).unwrap();
    let k = chebyshev_params(problem.w.gamma(), problem.w.lambda_max()).unwrap().k as f64;
    let delta = problem.diameter as f64;
    let opts = RunOptions::new(60, None);
    for alg in ALL {
        let cost = match alg {
            Algorithm::Ssda | Algorithm::Extra | Algorithm::CompositeDual => 1.0 + tau,
            Algorithm::Msda => 1.0 + k * tau,
            Algorithm::Dagd => 1.0 + 2.0 * delta * tau,
            Algorithm::Diging => 1.0 + 2.0 * tau,
        };
        let trace = solve(&problem, alg, tau, &opts);
        assert_eq!(trace.records.len(), 61);
        for (t, r) in trace.records.iter().enumerate() {
            assert_eq!(r.iteration, t);
            assert_eq!(r.clock, t as f64 * cost, "{}", alg.name());
            assert!(r.error >= 0.0 && r.consensus_residual >= 0.0);
        }
    }
}

/// e_t must be nonincreasing over the last 80% of the trace.
fn assert_monotone_after_transient(alg: Algorithm) {
    for (task, network) in [
        (Task::LeastSquares, Topology::Grid { rows: 5, cols: 5 }),
        (Task::Logistic, Topology::ErdosRenyi { n: 30, p: 0.15 }),
    ] {
        let problem = build_problem(&config(task, network, 1.0, 600, 4)).unwrap();
        let trace = solve(&problem, alg, 1.0, &RunOptions::new(20_000, Some(1e-10)));
        let errors: Vec<f64> = trace.records.iter().map(|r| r.error).collect();
        let start = errors.len() / 5;
        for (i, w) in errors[start..].windows(2).enumerate() {
            assert!(w[1] <= w[0], "{task:?} {} at {}: {} -> {}", alg.name(), start + i, w[0], w[1]);
        }
    }
}

#[test]
fn msda_error_is_nonincreasing_after_transient() {
    assert_monotone_after_transient(Algorithm::Msda);
}

#[test]
fn ssda_error_is_nonincreasing_after_transient() {
    assert_monotone_after_transient(Algorithm::Ssda);
}

#[test]
fn composite_dual_error_is_nonincreasing_after_transient() {
    assert_monotone_after_transient(Algorithm::CompositeDual);
}

#[test]
fn extra_converges_linearly_on_grid_quadratic() {
    let problem = build_problem(&config(Task::LeastSquares, Topology::Grid { rows: 10, cols: 10 }, 1.0, 2000, 0)).unwrap();
    let trace = solve(&problem, Algorithm::Extra, 1.0, &RunOptions::new(20_000, Some(1e-10)));
    let (slope, r2) = log_linear_fit(&trace);
    assert!(slope < 0.0 && r2 >= 0.98, "slope {slope:e}, R² {r2}");
}

#[test]
fn diging_converges_linearly_on_random_network_logistic() {
    let cfg = config(Task::Logistic, Topology::ErdosRenyi { n: 100, p: 0.06 }, 1.0, 10_000, 0);
    let problem = build_problem(&cfg).unwrap();
    let trace = solve(&problem, Algorithm::Diging, 1.0, &RunOptions::new(3000, Some(1e-8)));
    let (slope, _) = log_linear_fit(&trace);
    assert!(slope < 0.0, "slope {slope:e}");
    assert!(trace.final_record().error < 1e-3 * trace.initial_error());
}

#[test]
fn msda_beats_extra_on_grid_quadratic_with_slow_links() {
    let mut cfg = config(Task::LeastSquares, Topology::Grid { rows: 10, cols: 10 }, 10.0, 10_000, 0);
    cfg.d = 10;
    cfg.algorithms = vec![AlgorithmSpec::Name(Algorithm::Msda), AlgorithmSpec::Name(Algorithm::Extra)];
    cfg.target_error = Some(1e-6);
    let out = run_experiment(&cfg).unwrap();
    let t = |l: &str| out.summary.algorithms[l].time_to_target.unwrap();
    assert!(t("msda") < t("extra"), "msda {} extra {}", t("msda"), t("extra"));
}

#[test]
fn msda_beats_ssda_on_random_network_with_fast_links() {
    let mut cfg = config(Task::LeastSquares, Topology::ErdosRenyi { n: 100, p: 0.06 }, 0.1, 10_000, 0);
    cfg.d = 10;
    cfg.algorithms = vec![AlgorithmSpec::Name(Algorithm::Msda), AlgorithmSpec::Name(Algorithm::Ssda)];
    cfg.target_error = Some(1e-6);
    let out = run_experiment(&cfg).unwrap();
    let t = |l: &str| out.summary.algorithms[l].time_to_target.unwrap();
    assert!(t("msda") < t("ssda"), "msda {} ssda {}", t("msda"), t("ssda"));
}

#[test]
fn ranking_is_a_function_of_the_traces() {
    let mut cfg = config(Task::LeastSquares, Topology::Path { n: 8 }, 2.0, 160, 3);
    cfg.algorithms = ALL.iter().map(|&a| AlgorithmSpec::Name(a)).collect();
    cfg.target_error = Some(1e-8);
    cfg.max_iterations = 3000;
    let out = run_experiment(&cfg).unwrap();
    let mut recomputed = out.summary.algorithms.clone();
    for a in recomputed.values_mut() {
        a.rank = None;
    }
    for (label, trace) in &out.traces {
        let t = trace.as_ref().unwrap();
        assert_eq!(recomputed[label].time_to_target, t.time_to(1e-8));
    }
    assert_eq!(rank(&mut recomputed), out.summary.ranking);
    assert_eq!(recomputed, out.summary.algorithms);
}
