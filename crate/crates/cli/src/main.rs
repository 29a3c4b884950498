use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stochmor::pipeline::{plot, run_pipeline_with, RunConfig, RunOutcome, BUNDLED, OUTPUT_ROOT_VAR};
use stochmor::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_WARNINGS: u8 = 10;

/// Polynomial-chaos UQ with POD model order reduction.
///
/// CONFIG is a path to a TOML run configuration or the name of a bundled one.
/// Exit status: 0 success, 2 configuration error, 3 numerical failure,
/// 10 success with warnings or failed reduced dimensions.
#[derive(Parser)]
#[command(name = "stochmor", version, after_help = bundled_help())]
struct Cli {
    /// Only print errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline of a configuration.
    Run {
        config: String,
        /// Output root, overriding the configuration and the environment.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the pipeline for a different list of reduced dimensions.
    Sweep {
        config: String,
        /// Dimensions as a list of values and ranges, e.g. `2-20,25`.
        #[arg(short, long)]
        r: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluate reduced models on a horizon longer than the snapshot interval.
    Reuse {
        config: String,
        #[arg(short, long)]
        r: String,
        /// Evaluation horizon as a multiple of the snapshot interval.
        #[arg(short, long, default_value_t = 2.0)]
        multiplier: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Re-render the figures of an existing run directory from its CSV files.
    Plot { run_dir: PathBuf },
    /// Check a configuration and print its canonical form and hash.
    ValidateConfig { config: String },
}

fn bundled_help() -> String {
    format!(
        "Bundled configurations: {}\nThe output root can also be set with {OUTPUT_ROOT_VAR}.",
        BUNDLED.join(", ")
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.quiet;
    match dispatch(cli.command, quiet) {
        Ok(code) => ExitCode::from(code),
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

type CliResult = Result<u8, (u8, String)>;

fn config_error(e: Error) -> (u8, String) {
    (EXIT_CONFIG, e.to_string())
}

fn load(config: &str, output: Option<PathBuf>) -> Result<RunConfig, (u8, String)> {
    let mut cfg = RunConfig::load(config).map_err(config_error)?;
    if let Some(dir) = output {
        cfg.outputs.directory = std::path::absolute(&dir).unwrap_or(dir);
    }
    Ok(cfg)
}

fn dispatch(command: Command, quiet: bool) -> CliResult {
    match command {
        Command::Run { config, output } => execute(&load(&config, output)?, quiet),
        Command::Sweep { config, r, output } => {
            let mut cfg = load(&config, output)?;
            cfg.mor.r = parse_dims(&r).map_err(|m| (EXIT_CONFIG, m))?;
            cfg.validate().map_err(config_error)?;
            execute(&cfg, quiet)
        }
        Command::Reuse {
            config,
            r,
            multiplier,
            output,
        } => {
            let mut cfg = load(&config, output)?;
            cfg.mor.r = parse_dims(&r).map_err(|m| (EXIT_CONFIG, m))?;
            cfg.mor.reuse_multiplier = multiplier;
            cfg.name = format!("{}-reuse-x{multiplier}", cfg.name);
            cfg.validate().map_err(config_error)?;
            execute(&cfg, quiet)
        }
        Command::Plot { run_dir } => {
            if !run_dir.is_dir() {
                return Err((EXIT_CONFIG, format!("{} is not a directory", run_dir.display())));
            }
            let n = plot::render_run(&run_dir).map_err(|e| (EXIT_NUMERIC, e.to_string()))?;
            if !quiet {
                println!("{n} figures written to {}", run_dir.join("plots").display());
            }
            Ok(0)
        }
        Command::ValidateConfig { config } => {
            let cfg = RunConfig::load(&config).map_err(config_error)?;
            let text = cfg.to_toml().map_err(config_error)?;
            let hash = cfg.hash().map_err(config_error)?;
            if !quiet {
                print!("{text}");
                println!("# hash {hash}");
                println!("# output {}", cfg.run_dir().display());
            }
            Ok(0)
        }
    }
}

fn execute(cfg: &RunConfig, quiet: bool) -> CliResult {
    let mut progress = |msg: &str| {
        if !quiet {
            eprintln!("[{}] {msg}", cfg.name);
        }
    };
    match run_pipeline_with(cfg, &mut progress) {
        Ok(outcome) => Ok(report(&outcome, quiet)),
        Err(e) => {
            let code = if matches!(e.source, Error::Config(_) | Error::Model(_)) {
                EXIT_CONFIG
            } else {
                EXIT_NUMERIC
            };
            let place = e
                .dir
                .as_ref()
                .map(|d| format!(" (see {})", d.display()))
                .unwrap_or_default();
            Err((code, format!("{e}{place}")))
        }
    }
}

fn report(outcome: &RunOutcome, quiet: bool) -> u8 {
    for f in &outcome.failures {
        let at = f.r.map(|r| format!(" r={r}")).unwrap_or_default();
        eprintln!("failed: {}{at}: {}", f.stage, f.message);
    }
    if !quiet {
        for w in &outcome.warnings {
            eprintln!("warning: {w}");
        }
        println!("{}", outcome.dir.display());
    }
    if outcome.failures.is_empty() && outcome.warnings.is_empty() {
        0
    } else {
        EXIT_WARNINGS
    }
}

/// Parses `2-5,8,10-12` into a sorted list without duplicates.
fn parse_dims(text: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("invalid dimension list '{text}'");
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_lists() {
        assert_eq!(parse_dims("2-4,8").unwrap(), vec![2, 3, 4, 8]);
        assert_eq!(parse_dims("5, 3,3").unwrap(), vec![3, 5]);
        assert!(parse_dims("4-2").is_err());
        assert!(parse_dims("x").is_err());
        assert!(parse_dims("").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
