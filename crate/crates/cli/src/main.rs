use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gossipopt::bench::{gen_classification_dataset, gen_regression_with_noise, run_experiment, ExperimentConfig};
use gossipopt::gossip::chebyshev_params;
use gossipopt::lower_bounds::{faithful_instance, lb_curve_centralized, lb_curve_decentralized};
use gossipopt::topology::{build_graph, diameter, laplacian, Graph, Topology};
use gossipopt::Error;
use serde_json::json;

#[derive(Parser)]
#[command(name = "gossipopt", version, about = "Decentralized optimization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataTask {
    LeastSquares,
    Logistic,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        target_error: Option<f64>,
        #[arg(long)]
        max_iterations: Option<usize>,
    },
    /// Generate a synthetic dataset as JSON.
    GenData {
        #[arg(long, value_enum)]
        task: DataTask,
        #[arg(long, default_value_t = 10_000)]
        m: usize,
        #[arg(long, default_value_t = 10)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        noise_std: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a graph from a topology spec such as '{"kind":"grid","rows":10,"cols":10}'.
    GenGraph {
        topology: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the Laplacian spectrum summary of a graph file.
    Spectra { graph: PathBuf },
    /// Export the hard instance on a path and sample its lower-bound curves.
    LowerBound {
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 1024.0)]
        kappa_l: f64,
        #[arg(long, default_value_t = 200)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 300.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn execute(command: Command) -> gossipopt::Result<ExitCode> {
    match command {
        Command::Run {
            config,
            seed,
            out_dir,
            target_error,
            max_iterations,
        } => {
            let mut cfg = ExperimentConfig::from_json(&fs::read_to_string(&config)?)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = target_error {
                cfg.target_error = Some(t);
            }
            if let Some(m) = max_iterations {
                cfg.max_iterations = m;
            }
            let dir = out_dir
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            let output = run_experiment(&cfg)?;
            output.write(&dir)?;
            for label in &output.summary.ranking {
                let a = &output.summary.algorithms[label];
                match (&a.error, a.time_to_target) {
                    (Some(err), _) => println!("{label}: failed: {err}"),
                    (None, Some(t)) => println!("{label}: target reached at time {t} ({} iterations)", a.iterations),
                    (None, None) => println!(
                        "{label}: final error {:e} after {} iterations",
                        a.final_error.unwrap_or(f64::NAN),
                        a.iterations
                    ),
                }
            }
            Ok(if output.any_diverged() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::GenData {
            task,
            m,
            d,
            seed,
            noise_std,
            out,
        } => {
            let ds = match task {
                DataTask::LeastSquares => gen_regression_with_noise(m, d, noise_std, seed)?,
                DataTask::Logistic => gen_classification_dataset(m, d, seed)?,
            };
            fs::write(out, ds.to_json()?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::GenGraph { topology, seed, out } => {
            let t: Topology = serde_json::from_str(&topology).map_err(|e| Error::Config(e.to_string()))?;
            let built = build_graph(&t, seed)?;
            fs::write(out, serde_json::to_string_pretty(&built.graph)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Spectra { graph } => {
            let g: Graph = serde_json::from_str(&fs::read_to_string(graph)?)?;
            let w = laplacian(&g)?;
            let info = w.spectral();
            let cheb = chebyshev_params(info.gamma, info.lambda_max).ok();
            let report = json!({
                "n": g.n(),
                "edges": g.edges().len(),
                "diameter": diameter(&g)?,
                "lambda_max": info.lambda_max,
                "lambda_second_smallest": info.lambda_second_smallest,
                "gamma": info.gamma,
                "chebyshev": cheb,
                "spectrum": info.full_spectrum,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::LowerBound {
            n,
            kappa_l,
            dim,
            tau,
            horizon,
            step,
            out,
        } => {
            if !(step > 0.0 && horizon >= 0.0) {
                return Err(Error::Config("need step > 0 and horizon >= 0".into()));
            }
            let inst = faithful_instance(n, kappa_l, dim)?;
            let w = laplacian(inst.graph())?;
            let delta = diameter(inst.graph())?;
            let r0 = inst.r0();
            let samples = (0..=(horizon / step).floor() as usize)
                .map(|k| {
                    let t = k as f64 * step;
                    json!({
                        "t": t,
                        "decentralized": lb_curve_decentralized(t, inst.kappa_l(), w.gamma(), tau, r0, inst.alpha()),
                        "centralized": lb_curve_centralized(t, inst.kappa_g(), delta, tau, r0, inst.alpha()),
                    })
                })
                .collect::<Vec<_>>();
            let report = json!({
                "instance": inst.spec(),
                "kappa_l": inst.kappa_l(),
                "kappa_g": inst.kappa_g(),
                "gamma": w.gamma(),
                "r0": r0,
                "truncation_tail": inst.truncation_tail(),
                "curves": samples,
            });
            fs::write(out, serde_json::to_string_pretty(&report)?)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
