//! Command-line front end. `pifl <run|shapley-check|theory-check|report>`.
//!
//! Exit codes: 0 success, 1 runtime failure or unmet threshold, 2 invalid
//! configuration or missing inputs, 3 underpowered or unbracketed theory
//! check.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::orchestrator::{self, config::apply_override, RunConfig};
use crate::properties;
use crate::report;
use crate::shapley_check::{self, ShapleyCheckConfig};
use crate::theory::{self, TheoryCheckConfig};

/// Like `println!`, but a closed stdout (say, piped into `head`) is not an
/// error worth dying for.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

macro_rules! say_raw {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GUARD: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pifl", version, about = "Tiered federated learning simulator with a token incentive layer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation and write its trace.
    Run(Common),
    /// Compare estimated against exactly enumerated Shapley values.
    ShapleyCheck(Common),
    /// Check closed-form estimator errors by Monte Carlo.
    TheoryCheck(Common),
    /// Derive comparison tables from finished runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long, env = "PIFL_OUT_DIR", default_value = "pifl-out")]
    pub out: PathBuf,
    /// Override a config value by dotted path, e.g. `run.rounds=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Root seed, taking precedence over the file and overrides.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directory to summarize.
    #[arg(long)]
    pub run: PathBuf,
    /// Second run directory; produces an ablation delta table against `run`.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Output directory; defaults to the run directory.
    #[arg(short, long, env = "PIFL_OUT_DIR")]
    pub out: Option<PathBuf>,
}

fn read_text(path: Option<&Path>) -> Result<String> {
    match path {
        None => Ok(String::new()),
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
    }
}

/// Parses a TOML document with overrides applied, for the check configs.
fn load_check_config<T: DeserializeOwned>(c: &Common) -> Result<T> {
    let text = read_text(c.config.as_deref())?;
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    for o in &c.overrides {
        apply_override(&mut table, o)?;
    }
    if let Some(seed) = c.seed {
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

pub fn load_run_config(c: &Common) -> Result<RunConfig> {
    let text = read_text(c.config.as_deref())?;
    let mut overrides = c.overrides.clone();
    if let Some(seed) = c.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    RunConfig::from_toml_with_overrides(&text, &overrides)
}

fn config_error(e: Error) -> i32 {
    eprintln!("error: {e}");
    EXIT_CONFIG
}

fn runtime_error(e: Error) -> i32 {
    eprintln!("error: {e}");
    EXIT_RUNTIME
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

fn cmd_run(c: &Common) -> i32 {
    let config = match load_run_config(c) {
        Ok(cfg) => cfg,
        Err(e) => return config_error(e),
    };
    let out = match orchestrator::run(&config) {
        Ok(o) => o,
        Err(e) => return runtime_error(e),
    };
    if let Err(e) = out.write_dir(&c.out) {
        return runtime_error(e);
    }
    let s = &out.summary;
    say!(
        "rounds {}/{}  mean personalized accuracy {:.4}  purity {:.3}",
        s.completed_rounds, s.round_count, s.final_mean_personalized_accuracy, s.purity
    );
    for (name, acc) in &s.baselines {
        say!("baseline {name}: {acc:.4}");
    }
    say_raw!("{}", properties::format_table(&s.properties));
    say!("wrote {}", c.out.display());
    match &s.error {
        Some(msg) => {
            eprintln!("error: run aborted at {msg}; partial trace kept");
            EXIT_RUNTIME
        }
        None => EXIT_OK,
    }
}

fn cmd_shapley_check(c: &Common) -> i32 {
    let config: ShapleyCheckConfig = match load_check_config(c).and_then(|cfg: ShapleyCheckConfig| {
        cfg.validate()?;
        Ok(cfg)
    }) {
        Ok(cfg) => cfg,
        Err(e) => return config_error(e),
    };
    let report = match shapley_check::run_shapley_check(&config) {
        Ok(r) => r,
        Err(e) => return runtime_error(e),
    };
    if let Err(e) = std::fs::create_dir_all(&c.out).map_err(Error::from).and_then(|_| {
        write_json(&c.out.join("shapley_report.json"), &report)
    }) {
        return runtime_error(e);
    }
    say!(
        "kendall tau {:.4} (>= {})  identity max error {:.2e} (<= {:.0e})",
        report.aggregate_kendall_tau, config.kendall_threshold, report.identity_max_error, config.identity_tolerance
    );
    let fo = &report.first_order;
    say!(
        "first-order gaps {:?} at scales {:?}, ratio {:.2} (in {:?})",
        fo.mean_abs_gap, fo.scales, fo.overall_ratio, config.gap_ratio_range
    );
    say!("{}", if report.pass { "PASS" } else { "FAIL" });
    if report.pass {
        EXIT_OK
    } else {
        EXIT_RUNTIME
    }
}

fn cmd_theory_check(c: &Common) -> i32 {
    let config: TheoryCheckConfig = match load_check_config(c) {
        Ok(cfg) => cfg,
        Err(e) => return config_error(e),
    };
    let report = match theory::run_theory_check(&config) {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    if let Err(e) = std::fs::create_dir_all(&c.out)
        .map_err(Error::from)
        .and_then(|_| write_json(&c.out.join("theory_report.json"), &report))
    {
        return runtime_error(e);
    }
    say!(
        "{} scenarios, {} checks, {} outside {} SE",
        report.scenarios.len(),
        report.checks,
        report.failures,
        config.tolerance_se
    );
    let x = &report.crossover;
    say!(
        "crossover: critical tau2 {:.4}, cell {:?}, closed flip {:?}, monte carlo flip {:?}, {}",
        x.tau2_critical,
        x.critical_cell,
        x.closed_flip,
        x.mc_flip,
        if x.bracketed { "bracketed" } else { "not bracketed" }
    );
    if report.underpowered {
        say!("underpowered: fewer than {} replications", theory::MIN_REPLICATIONS);
    }
    say!("{}", if report.pass { "PASS" } else { "FAIL" });
    if report.underpowered || !x.bracketed {
        EXIT_GUARD
    } else if report.pass {
        EXIT_OK
    } else {
        EXIT_RUNTIME
    }
}

fn cmd_report(a: &ReportArgs) -> i32 {
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    match report::write_report(&a.run, a.compare.as_deref(), &out) {
        Ok(paths) => {
            for p in paths {
                say!("wrote {}", p.display());
            }
            EXIT_OK
        }
        Err(e @ (Error::Trace(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_))) => config_error(e),
        Err(e) => runtime_error(e),
    }
}

pub fn execute(cli: &Cli) -> i32 {
    match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::ShapleyCheck(c) => cmd_shapley_check(c),
        Command::TheoryCheck(c) => cmd_theory_check(c),
        Command::Report(a) => cmd_report(a),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Usage errors exit with code 2 like configuration errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_flag_overrides_file() {
        let c = Common {
            config: None,
            out: PathBuf::new(),
            overrides: vec!["run.seed=3".into()],
            seed: Some(9),
        };
        assert_eq!(load_run_config(&c).unwrap().run.seed, 9);
    }

    #[test]
    fn check_configs_take_overrides() {
        let c = Common {
            config: None,
            out: PathBuf::new(),
            overrides: vec!["replications=10".into(), "crossover.points=4".into()],
            seed: None,
        };
        let cfg: TheoryCheckConfig = load_check_config(&c).unwrap();
        assert_eq!(cfg.replications, 10);
        assert_eq!(cfg.crossover.points, 4);
    }
}
