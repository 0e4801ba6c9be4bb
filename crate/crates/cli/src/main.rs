use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cyclicity_cli::commands;
use cyclicity_cli::config::Stage;
use cyclicity_cli::CliError;

#[derive(Parser)]
#[command(name = "cyclicity", version, about = "Periodic orbits of x'(t) = r f(x(t), x(t-1))")]
struct Cli {
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true, env = "CYCLICITY_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate from a history segment and write t, x, x_delayed, residual.
    Simulate {
        #[arg(long)]
        model_config: PathBuf,
        #[arg(long)]
        r: f64,
        /// `const:<value>` or `expr:<expression in t>`.
        #[arg(long)]
        history: String,
        #[arg(long)]
        t_end: f64,
        #[arg(long, default_value_t = 128)]
        steps_per_delay: usize,
        #[arg(long, default_value = "traj.csv")]
        out: PathBuf,
    },
    /// Solve one periodic orbit at a prescribed amplitude.
    Orbit {
        #[arg(long)]
        model_config: PathBuf,
        #[arg(long)]
        amplitude: f64,
        /// `hopf`, `hamiltonian`, or an orbit JSON file.
        #[arg(long, default_value = "hopf")]
        seed: String,
        #[arg(long, default_value_t = 128)]
        n_modes: usize,
        /// Equilibrium for the `hopf` seed (default: nearest below the amplitude).
        #[arg(long, allow_negative_numbers = true)]
        equilibrium: Option<f64>,
        #[arg(long, default_value = "orbit.json")]
        out: PathBuf,
    },
    /// Trace the configured branches and write branch.csv.
    Branch {
        #[arg(long)]
        config: PathBuf,
        /// Also fill the mu_c column.
        #[arg(long)]
        floquet: bool,
    },
    /// Floquet multipliers of an orbit JSON file.
    Floquet {
        #[arg(long)]
        model_config: PathBuf,
        #[arg(long)]
        orbit: PathBuf,
        #[arg(long, default_value_t = 64)]
        basis: usize,
        #[arg(long, default_value = "floquet.json")]
        out: PathBuf,
    },
    /// Branches, charts and projected curves (chart.csv, curves.csv).
    Chart {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the acceptance table of a run directory.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Fail instead of running the pipeline when artifacts are missing.
        #[arg(long)]
        no_regen: bool,
        #[arg(long)]
        json: bool,
    },
    /// Write the figure specification for the plotting scripts.
    ExportFigureData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Leave out curves at or above this amplitude.
        #[arg(long)]
        amplitude_cap: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("worker pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate {
            model_config,
            r,
            history,
            t_end,
            steps_per_delay,
            out,
        } => commands::simulate(&model_config, r, &history, t_end, steps_per_delay, &out),
        Command::Orbit {
            model_config,
            amplitude,
            seed,
            n_modes,
            equilibrium,
            out,
        } => {
            let rec = commands::orbit(&model_config, amplitude, &seed, n_modes, equilibrium, &out)?;
            println!("a = {}, p = {}, r = {}, q = {}, residual = {:e}", rec.a, rec.p, rec.r, rec.q, rec.residual);
            Ok(())
        }
        Command::Branch { config, floquet } => {
            let stages = if floquet {
                vec![Stage::Branch, Stage::Floquet]
            } else {
                vec![Stage::Branch]
            };
            report(commands::run_stages(&config, Some(stages))?)
        }
        Command::Floquet {
            model_config,
            orbit,
            basis,
            out,
        } => {
            let rep = commands::floquet(&model_config, &orbit, basis, &out)?;
            println!("mu_c = {}, trivial error = {:e}, hyperbolic = {}", rep.mu_c, rep.trivial_error, rep.hyperbolic);
            Ok(())
        }
        Command::Chart { config } => report(commands::run_stages(&config, Some(vec![Stage::Branch, Stage::Chart]))?),
        Command::Verify { config, no_regen, json } => {
            let table = commands::verify(&config, no_regen)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&table).expect("table serializes"));
            } else {
                for line in table.lines() {
                    println!("{line}");
                }
            }
            if table.passed() {
                Ok(())
            } else {
                Err(CliError::Verification("see the table above".into()))
            }
        }
        Command::ExportFigureData {
            config,
            out,
            amplitude_cap,
        } => {
            let path = commands::export_figure_data(&config, out.as_deref(), amplitude_cap)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn report(manifest: cyclicity_cli::RunManifest) -> Result<(), CliError> {
    for s in &manifest.stages {
        println!("{:<8} {:>8.2}s", s.name, s.seconds);
    }
    if let Some(table) = &manifest.verification {
        for line in table.lines() {
            println!("{line}");
        }
        if !table.passed() {
            return Err(CliError::Verification("see the table above".into()));
        }
    }
    Ok(())
}

/// OpenBLAS reads its kernel choice when the library loads, so the only way
/// to pin it from here is to start over with the variable set.
#[cfg(all(unix, target_arch = "x86_64"))]
fn pin_blas_kernels() {
    use std::os::unix::process::CommandExt;
    if std::env::var_os("OPENBLAS_CORETYPE").is_some() || !std::arch::is_x86_feature_detected!("avx2") {
        return;
    }
    if let Ok(exe) = std::env::current_exe() {
        let err = std::process::Command::new(exe)
            .args(std::env::args_os().skip(1))
            .env("OPENBLAS_CORETYPE", "Haswell")
            .exec();
        eprintln!("warning: could not restart with OPENBLAS_CORETYPE=Haswell: {err}");
    }
}

#[cfg(not(all(unix, target_arch = "x86_64")))]
fn pin_blas_kernels() {}

fn main() -> ExitCode {
    pin_blas_kernels();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
