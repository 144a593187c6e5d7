use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use doormpc::constraints::LABELS;
use doormpc::model::idx;
use doormpc::scenario::{emit_plots, load_config, run_scenario, write_log, ExecutionMode, LogFormat, ScenarioConfig};
use doormpc::Error;

#[derive(Parser)]
#[command(name = "doormpc", version, about = "Closed-loop door-opening MPC scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its log.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = LogFormat::Csv)]
        format: LogFormat,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Also write SVG state histories and a top view.
        #[arg(long)]
        plots: bool,
        /// Run the planner on its own thread.
        #[arg(long)]
        threaded: bool,
        /// Record wall-clock solve latency (makes logs non-reproducible).
        #[arg(long)]
        latency: bool,
    },
    /// Validate a scenario file without running it.
    Check { config: PathBuf },
    /// Measure warm-started solve latency over a scenario.
    Bench {
        config: PathBuf,
        #[arg(long)]
        duration: Option<f64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. }
        | Error::AttachmentLost { .. }
        | Error::IllConditioned { .. }
        | Error::EulerSingularity { .. } => 2,
        _ => 1,
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[i]
}

fn load(path: &PathBuf) -> Result<ScenarioConfig, Error> {
    let cfg = load_config(path)?;
    if !cfg.applied_defaults.is_empty() {
        eprintln!("defaults applied: {}", cfg.applied_defaults.join(", "));
    }
    Ok(cfg)
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Check { config } => {
            let cfg = load(&config)?;
            println!(
                "{}: ok (horizon {}, dt {} s, duration {} s)",
                config.display(),
                cfg.mpc.horizon,
                cfg.mpc.dt,
                cfg.sim.duration
            );
        }
        Command::Run { config, out, format, seed, duration, plots, threaded, latency } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.sim.seed = s;
            }
            if let Some(d) = duration {
                cfg.sim.duration = d;
            }
            if threaded {
                cfg.sim.mode = ExecutionMode::Threaded;
            }
            cfg.sim.record_latency |= latency;
            cfg.validate()?;
            let log = run_scenario(&cfg)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("run.{}", format.extension()));
            write_log(&log, &path, format)?;
            println!("wrote {} ({} records)", path.display(), log.records.len());
            if plots {
                let files = emit_plots(&log, &cfg, out.join("plots"))?;
                println!("wrote {} plots to {}", files.len(), out.join("plots").display());
            }
            if let Some(last) = log.records.last() {
                let xf = &cfg.target.final_state;
                println!(
                    "final alpha {:.2} deg (target {:.2}), psi {:.2} deg (target {:.2})",
                    last.plant[3].to_degrees(),
                    xf[idx::ALPHA].to_degrees(),
                    last.plant[2].to_degrees(),
                    xf[idx::YAW].to_degrees()
                );
            }
            for (label, peak) in LABELS.iter().zip(log.constraint_peaks()) {
                println!("  max {label:<18} {peak:+.4} m");
            }
            let degraded = log.records.iter().filter(|r| r.degraded).count();
            if degraded > 0 {
                println!("{degraded} ticks reused the previous plan");
            }
        }
        Command::Bench { config, duration } => {
            let mut cfg = load(&config)?;
            if let Some(d) = duration {
                cfg.sim.duration = d;
            }
            cfg.sim.record_latency = true;
            let log = run_scenario(&cfg)?;
            let mut lat: Vec<f64> = log.latencies_ms().into_iter().skip(1).collect();
            if lat.is_empty() {
                println!("no warm-started ticks to measure");
                return Ok(());
            }
            lat.sort_by(f64::total_cmp);
            let mut iters: Vec<u32> = log.records.iter().skip(1).map(|r| r.iterations).collect();
            iters.sort_unstable();
            println!("warm-started solves: {}", lat.len());
            println!(
                "latency ms: median {:.3}  p95 {:.3}  max {:.3}",
                percentile(&lat, 0.5),
                percentile(&lat, 0.95),
                lat[lat.len() - 1]
            );
            println!("iterations: median {}  max {}", iters[iters.len() / 2], iters[iters.len() - 1]);
            println!("rate at median latency: {:.0} Hz", 1e3 / percentile(&lat, 0.5));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
