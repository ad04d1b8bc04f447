use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use iccs::offload::Scheme;
use iccs::orchestrator::{
    brute_force_oracle, emit_csv, emit_trace_csv, monte_carlo, run_schemes, Axis, RunConfig, TrialResult,
};
use iccs::{Error, Result};

#[derive(Parser)]
#[command(name = "iccs", about = "Min-max latency offloading, ISAC beamforming and resource allocation")]
struct Cli {
    /// TOML run configuration; defaults to the desk-scale network.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// proposed, local, mec, cc or all
    #[arg(long, global = true)]
    scheme: Option<String>,
    /// L, F_CC_max, R_f_max, SINR_req_dB or N_t
    #[arg(long, global = true)]
    axis: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One trial; prints the latency report.
    Run,
    /// Monte-Carlo sweep over one axis.
    Sweep,
    /// Outer objective traces of the proposed scheme.
    Convergence,
    /// Brute-force oracle next to the algorithm on a tiny network.
    Oracle,
}

fn schemes(cli: &Cli, cfg: &RunConfig) -> Result<Vec<Scheme>> {
    match cli.scheme.as_deref() {
        Some("all") => Ok(Scheme::ALL.to_vec()),
        _ => Ok(vec![cfg.scheme()?]),
    }
}

fn out_file(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.run.out).map_err(|source| Error::Io { path: cfg.run.out.clone(), source })?;
    Ok(cfg.run.out.join(name))
}

fn print_trial(r: &TrialResult) {
    println!("scheme {} seed {} start {}", r.scheme.name(), r.seed, r.start);
    println!("  converged {} after {} outer iterations, {:.2} s", r.converged, r.iterations(), r.wall_time_s);
    if let Some(rep) = &r.report {
        println!("  max latency {:.6e} s", rep.max_latency);
        for k in 0..rep.total.len() {
            println!(
                "  vehicle {k}: total {:.4e}  local {:.4e}  mec {:.4e}  cc {:.4e}",
                rep.total[k], rep.local[k], rep.mec[k], rep.cc[k]
            );
        }
    }
    let worst = r.slacks.iter().min_by(|a, b| a.relative.total_cmp(&b.relative));
    if let Some(s) = worst {
        println!("  tightest constraint {:?}[{}] relative slack {:.3e}", s.kind, s.index, s.relative);
    }
    for w in &r.warnings {
        println!("  warning: {w}");
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(t) = cli.trials {
        cfg.run.trials = t;
    }
    if let Some(s) = &cli.scheme {
        if s != "all" {
            cfg.run.scheme = s.clone();
        }
    }
    if let Some(a) = &cli.axis {
        cfg.run.axis = Some(a.clone());
    }
    if let Some(o) = &cli.out {
        cfg.run.out = o.clone();
    }
    cfg.validate()?;

    match cli.cmd {
        Cmd::Run => {
            for r in run_schemes(&cfg, cfg.run.seed, &schemes(&cli, &cfg)?) {
                print_trial(&r);
            }
        }
        Cmd::Sweep => {
            let axis = cfg.axis()?.unwrap_or(Axis::FccMax);
            let values = cfg.run.values.clone().unwrap_or_else(|| axis.default_values(&cfg));
            let list = match cli.scheme.as_deref() {
                None | Some("all") => Scheme::ALL.to_vec(),
                _ => vec![cfg.scheme()?],
            };
            let out = monte_carlo(&cfg, axis, &values, &list, cfg.run.trials)?;
            let path = out_file(&cfg, &format!("sweep_{}.csv", axis.name()))?;
            emit_csv(&out.rows, &path)?;
            for r in &out.rows {
                println!(
                    "{}={:<10} {:<9} mean {:.4e} s  stderr {:.2e}  failed {}/{}",
                    axis.name(),
                    r.sweep_value,
                    r.scheme,
                    r.mean_latency_s,
                    r.stderr_s,
                    r.n_failed,
                    r.n_trials
                );
            }
            println!("wrote {}", path.display());
        }
        Cmd::Convergence => {
            let results: Vec<TrialResult> = (0..cfg.run.trials as u64)
                .map(|t| run_schemes(&cfg, cfg.run.seed + t, &[Scheme::Proposed]).remove(0))
                .collect();
            let path = out_file(&cfg, "convergence.csv")?;
            emit_trace_csv(&results.iter().collect::<Vec<_>>(), &path)?;
            for r in &results {
                println!("seed {:<4} iterations {:<3} final {:.6e} s", r.seed, r.iterations(), r.max_latency());
            }
            println!("wrote {}", path.display());
        }
        Cmd::Oracle => {
            for t in 0..cfg.run.trials as u64 {
                let seed = cfg.run.seed + t;
                let o = brute_force_oracle(&cfg, seed)?;
                let rs = run_schemes(&cfg, seed, &Scheme::ALL);
                let best_bench = rs[1..].iter().map(TrialResult::max_latency).fold(f64::INFINITY, f64::min);
                println!(
                    "seed {seed:<4} oracle {:.6e}  proposed {:.6e}  best benchmark {:.6e}  ({} patterns)",
                    o.latency,
                    rs[0].max_latency(),
                    best_bench,
                    o.evaluated
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
