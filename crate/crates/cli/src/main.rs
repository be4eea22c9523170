//! `chaoslab`: experiment runner over the chaos, diffusion, local-time and
//! Monte Carlo modules. Exit status: 0 success, 1 failed gate or numerical
//! failure, 2 usage error.

mod commands;
mod config;
mod report;
mod selftest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::commands::CliError;
use crate::config::{ExperimentConfig, Format};
use crate::report::ExperimentReport;

/// Environment variable naming the default report directory.
const OUT_DIR_VAR: &str = "CHAOSLAB_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "chaoslab", version, about = "Wiener chaos and Sobolev-Watanabe norm experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config file; command-line flags override its values.
    #[arg(long = "config", global = true)]
    config_file: Option<PathBuf>,

    /// Run the closed-form examples of the subcommand's module instead.
    #[arg(long, global = true)]
    selftest: bool,

    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(flatten)]
    config: ExperimentConfig,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Hermite polynomials H_k(x) and H_k(0).
    Hermite,
    /// Chaos pairings of Λ(√(T/t) w(t)).
    Chaos,
    /// Truncated Sobolev norm ‖Λ(w(t))‖_{2,s}.
    Norm,
    /// Both sides of the time-integral smoothing identity.
    Smoothing,
    /// Critical Sobolev index from the chaos tail.
    Index,
    /// Transition kernel derivatives Aⁿp_t(x, a).
    KvKernel,
    /// Scale/speed densities and the fundamental solution.
    ScaleSpeed,
    /// Hölder difference norms of local times against the explicit bound.
    Holder,
    /// Hölder ratios of the occupation density.
    DensityHolder,
    /// L^p trend of the Bessel-potential kernel of δ_y.
    BesselKernel,
    /// Monte Carlo check of the distributional Itô formula.
    ItoVerify,
    /// Monte Carlo local time against its exact mean.
    LocalTimeMc,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Hermite => "hermite",
            Command::Chaos => "chaos",
            Command::Norm => "norm",
            Command::Smoothing => "smoothing",
            Command::Index => "index",
            Command::KvKernel => "kv-kernel",
            Command::ScaleSpeed => "scale-speed",
            Command::Holder => "holder",
            Command::DensityHolder => "density-holder",
            Command::BesselKernel => "bessel-kernel",
            Command::ItoVerify => "ito-verify",
            Command::LocalTimeMc => "local-time-mc",
        }
    }

    fn run(self, c: &mut ExperimentConfig) -> Result<report::Outcome, CliError> {
        match self {
            Command::Hermite => commands::hermite(c),
            Command::Chaos => commands::chaos(c),
            Command::Norm => commands::norm(c),
            Command::Smoothing => commands::smoothing(c),
            Command::Index => commands::index(c),
            Command::KvKernel => commands::kv_kernel(c),
            Command::ScaleSpeed => commands::scale_speed(c),
            Command::Holder => commands::holder(c),
            Command::DensityHolder => commands::density_holder(c),
            Command::BesselKernel => commands::bessel_kernel(c),
            Command::ItoVerify => commands::ito(c),
            Command::LocalTimeMc => commands::local_time(c),
        }
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("chaoslab: {msg}");
    ExitCode::from(code)
}

fn run_selftest(command: &str) -> ExitCode {
    let checks = selftest::checks(command).expect("every subcommand has a selftest");
    let mut failed = 0;
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.pass);
    }
    println!("{command} selftest: {}/{} passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn output_path(config: &ExperimentConfig, command: &str, format: Format) -> Option<PathBuf> {
    match config.output.as_deref() {
        Some("-") => None,
        Some(p) => Some(PathBuf::from(p)),
        None => {
            let dir = std::env::var_os(OUT_DIR_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
            Some(dir.join(format!("{command}.{}", format.extension())))
        }
    }
}

fn write_report(path: Option<&Path>, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    match path {
        None => std::io::stdout().write_all(bytes),
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, bytes)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    if cli.selftest {
        return run_selftest(name);
    }
    let file = match cli.config_file.as_deref().map(ExperimentConfig::load).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => return fail(2, e),
    };
    if file.command.as_deref().is_some_and(|c| c != name) {
        return fail(2, format!("config file is for '{}', not '{name}'", file.command.as_deref().unwrap_or_default()));
    }
    let mut config = cli.config.over(file);
    config.command = Some(name.to_string());
    let format = *config.format.get_or_insert(Format::Json);

    let start = Instant::now();
    let outcome = match cli.command.run(&mut config) {
        Ok(o) => o,
        Err(CliError::Usage(m)) => return fail(2, m),
        Err(CliError::Failure(m)) => return fail(1, m),
    };
    let wall = start.elapsed().as_secs_f64();
    if cli.print_config {
        print!("{}", config.canonical());
        return ExitCode::SUCCESS;
    }

    let path = output_path(&config, name, format);
    let (report, table) = ExperimentReport::new(config, outcome, wall);
    if let Err(e) = write_report(path.as_deref(), &report.render(&table, format)) {
        return fail(2, format!("cannot write report: {e}"));
    }
    if let Some(p) = &path {
        eprintln!("chaoslab: wrote {}", p.display());
    }
    let failed: Vec<_> = report.gates.iter().filter(|g| !g.pass).collect();
    if failed.is_empty() {
        return ExitCode::SUCCESS;
    }
    for g in failed {
        eprintln!("chaoslab: gate failed: {} ({})", g.name, g.detail);
    }
    ExitCode::from(1)
}
