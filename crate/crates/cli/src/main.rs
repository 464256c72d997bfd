//! `sor`: command-line driver for the SOR solvers, the batch harness and the
//! cycle model.
//!
//! Exit status is 1 when any requested run diverged or hit its sweep cap and
//! 2 on usage or I/O errors.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sor_core::bench::{
    fmt_float, run_bench, run_omega_sweep, solve_case, OmegaSpec, RunConfig, DEFAULT_SIZES,
    FULL_SIZES,
};
use sor_core::cycle::{cycles, model_time, to_text, ClockSpec, ScheduleBuilder, ScheduleVariant};
use sor_core::{manufactured_error, PoissonProblem};

#[derive(Parser)]
#[command(
    name = "sor",
    version,
    about = "Successive over-relaxation on the 2-D Poisson model problem"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one or more meshes and report iterations and discretization error.
    Solve(RunArgs),
    /// Run a mesh-size progression and write the benchmark CSV.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Extend the default sizes with 1024 and 2048.
        #[arg(long)]
        full_range: bool,
    },
    /// Count iterations over a range of relaxation factors.
    OmegaSweep(RunArgs),
    /// Print cycle-model counts for the sequential and red-black schedules.
    Cycles {
        #[command(flatten)]
        run: RunArgs,
        /// Sweeps per schedule.
        #[arg(long, default_value_t = 1)]
        sweeps: u64,
        /// Print the schedule trees in their text form.
        #[arg(long)]
        dump: bool,
    },
}

/// Options shared by every subcommand. Each one may also be given in the
/// `--config` file under the same name; flags win.
#[derive(Args, Default)]
struct RunArgs {
    /// `key = value` file with defaults for the options below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Interior points per side; comma-separated for several meshes.
    #[arg(long)]
    size: Option<String>,
    /// Relaxation factor, or `start:stop:step`.
    #[arg(long)]
    omega: Option<String>,
    /// Relative residual tolerance.
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    max_sweeps: Option<String>,
    /// `lex` or `rb`.
    #[arg(long)]
    ordering: Option<String>,
    /// `float` or `fixed:<fractional bits>`.
    #[arg(long)]
    arith: Option<String>,
    /// Clock frequency for model times.
    #[arg(long)]
    freq_hz: Option<String>,
    /// Seed of the random initial guess.
    #[arg(long)]
    seed: Option<String>,
    /// Assignments charged per cell update in the cycle model.
    #[arg(long)]
    assigns_per_update: Option<String>,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    /// Config file (if any) over `base`, then flags over that.
    fn resolve(&self, base: RunConfig) -> Result<RunConfig> {
        let mut config = base;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            config
                .apply_kv_text(&text)
                .with_context(|| format!("in {}", path.display()))?;
        }
        let flags = [
            ("size", &self.size),
            ("omega", &self.omega),
            ("tol", &self.tol),
            ("max-sweeps", &self.max_sweeps),
            ("ordering", &self.ordering),
            ("arith", &self.arith),
            ("freq-hz", &self.freq_hz),
            ("seed", &self.seed),
            ("assigns-per-update", &self.assigns_per_update),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                config.set(key, value).with_context(|| format!("--{key}"))?;
            }
        }
        if let Some(out) = &self.out {
            config.output = Some(out.clone());
        }
        config.validate()?;
        Ok(config)
    }
}

fn output(config: &RunConfig) -> Result<Box<dyn Write>> {
    Ok(match &config.output {
        Some(path) => {
            Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?)
        }
        None => Box::new(io::stdout().lock()),
    })
}

/// Returns whether every run converged.
fn solve(args: &RunArgs) -> Result<bool> {
    let base = RunConfig {
        sizes: vec![32],
        ..RunConfig::default()
    };
    let config = args.resolve(base)?;
    let mut out = output(&config)?;
    writeln!(
        out,
        "size,omega,arithmetic,ordering,iterations,final_residual,max_error,termination"
    )?;
    let mut all_ok = true;
    for &size in &config.sizes {
        for omega in config.omega.values() {
            let report = solve_case(&config, size, omega)?;
            let problem = PoissonProblem::manufactured_sine(size)?;
            let mut mesh = problem.mesh();
            mesh.set_interior(&report.final_iterate)?;
            let exact = problem
                .exact()
                .expect("the sine problem carries its exact solution");
            let error = manufactured_error(&mesh, |x, y| exact(x, y));
            all_ok &= report.converged();
            writeln!(
                out,
                "{size},{},{},{},{},{},{},{:?}",
                fmt_float(omega),
                config.arithmetic,
                config.ordering,
                report.iterations,
                fmt_float(report.final_residual()),
                fmt_float(error),
                report.termination,
            )?;
        }
    }
    Ok(all_ok)
}

fn bench(args: &RunArgs, full_range: bool) -> Result<bool> {
    let base = RunConfig {
        sizes: if full_range {
            FULL_SIZES.to_vec()
        } else {
            DEFAULT_SIZES.to_vec()
        },
        ..RunConfig::default()
    };
    let mut config = args.resolve(base)?;
    let path = config.output.take();
    let report = run_bench(&config)?;
    config.output = path;
    report.write_csv(output(&config)?)?;
    Ok(!report.any_failed())
}

fn omega_sweep(args: &RunArgs) -> Result<bool> {
    let base = RunConfig {
        sizes: vec![64],
        omega: OmegaSpec::Range {
            start: 1.0,
            stop: 1.95,
            step: 0.05,
        },
        ..RunConfig::default()
    };
    let mut config = args.resolve(base)?;
    let path = config.output.take();
    let report = run_omega_sweep(&config)?;
    config.output = path;
    report.write_csv(output(&config)?)?;
    for &size in &config.sizes {
        match report.best_omega(size) {
            Some(w) => eprintln!("size {size}: fewest iterations at omega = {w}"),
            None => eprintln!("size {size}: no relaxation factor converged"),
        }
    }
    Ok(!report.any_failed())
}

fn cycle_table(args: &RunArgs, sweeps: u64, dump: bool) -> Result<bool> {
    let base = RunConfig {
        sizes: vec![2, 4, 8, 16],
        ..RunConfig::default()
    };
    let config = args.resolve(base)?;
    let clock = ClockSpec::new(config.frequency_hz)?;
    let builder = ScheduleBuilder::new(config.assigns_per_update);
    let mut out = output(&config)?;
    writeln!(out, "size,sweeps,model_cycles_seq,model_cycles_par,model_speedup,model_time_seq_s,model_time_par_s")?;
    for &size in &config.sizes {
        let seq = builder.build(size, ScheduleVariant::Sequential, sweeps)?;
        let par = builder.build(size, ScheduleVariant::RedBlack, sweeps)?;
        let (cs, cp) = (cycles(&seq), cycles(&par));
        writeln!(
            out,
            "{size},{sweeps},{cs},{cp},{},{},{}",
            fmt_float(cs as f64 / cp as f64),
            fmt_float(model_time(&seq, clock)),
            fmt_float(model_time(&par, clock)),
        )?;
        if dump {
            eprintln!("# size {size}, sequential\n{}", to_text(&seq));
            eprintln!("# size {size}, red-black\n{}", to_text(&par));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(args) => solve(args),
        Command::Bench { run, full_range } => bench(run, *full_range),
        Command::OmegaSweep(args) => omega_sweep(args),
        Command::Cycles { run, sweeps, dump } => cycle_table(run, *sweeps, *dump),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
