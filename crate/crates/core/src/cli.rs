//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiment::{aggregate_bias, run_grid, Truth};
use crate::io::{
    bias_report_to_csv, parse_config, read_records, write_bias_report, write_manifest, write_records,
    RunManifest, ScenarioManifest,
};
use crate::model::{true_subset_effect, EffectSetting};

pub const THREADS_ENV: &str = "CUTOFF_BIAS_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "cutoff-bias",
    version,
    about = "Selection bias and bias correction after data-driven biomarker cutoff selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every scenario in a config file and write records, bias reports and a manifest.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: $CUTOFF_BIAS_THREADS, else all cores). Never changes output.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        quiet: bool,
    },
    /// Print true subset effects as CSV.
    Truth {
        /// more_or_less_1, more_or_less_2, or four comma-separated coefficients.
        #[arg(long, allow_hyphen_values = true)]
        effect: String,
        /// Comma-separated cutoffs in [0, 1).
        #[arg(long, allow_hyphen_values = true)]
        cutoffs: String,
    },
    /// Re-aggregate a records CSV into a bias report.
    Report {
        #[arg(long)]
        records: PathBuf,
        /// Recompute the truth from this effect setting instead of the recorded values.
        #[arg(long, allow_hyphen_values = true)]
        effect: Option<String>,
        /// Candidate cutoffs (default: the distinct selected cutoffs in the records).
        #[arg(long)]
        cutoffs: Option<String>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Runs the CLI and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            out,
            threads,
            quiet,
        } => cmd_run(&config, &out, threads, quiet),
        Command::Truth { effect, cutoffs } => cmd_truth(&effect, &cutoffs),
        Command::Report {
            records,
            effect,
            cutoffs,
            out,
        } => cmd_report(&records, effect.as_deref(), cutoffs.as_deref(), out.as_deref()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Schema { .. }
        | Error::InvalidConfig(_)
        | Error::InvalidCoefficients(_)
        | Error::InvalidCutoffs(_)
        | Error::EmptySubset(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn parse_cutoff_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidCutoffs(format!("`{v}` is not a number")))
        })
        .collect()
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn cmd_run(config_path: &Path, out: &Path, threads: Option<usize>, quiet: bool) -> Result<()> {
    // parse before touching the output directory
    let configs = parse_config(config_path).map_err(|e| match e {
        Error::Io { .. } => Error::InvalidConfig(e.to_string()),
        other => other,
    })?;
    let threads = resolve_threads(threads)?;
    if threads == Some(0) {
        return Err(Error::InvalidConfig("--threads must be positive".into()));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Parse(format!("cannot start worker pool: {e}")))?;

    if !quiet {
        eprintln!("running {} scenario(s) from {}", configs.len(), config_path.display());
    }
    let entries = pool.install(|| run_grid(&configs))?;

    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let mut scenarios = Vec::with_capacity(entries.len());
    let mut failures = 0;
    for (index, entry) in entries.into_iter().enumerate() {
        let mut manifest = ScenarioManifest {
            index,
            config_hash: entry.config_hash.clone(),
            master_seed: entry.config.master_seed,
            config: serde_json::to_value(&entry.config).expect("config serializes"),
            outputs: Vec::new(),
            abc_prior_substitutions: 0,
            bootstrap_fallbacks: 0,
            abc_failures: 0,
            error: None,
        };
        match entry.outcome {
            Ok((run, report)) => {
                let stem = format!("scenario_{index:03}_{}", &entry.config_hash[..12]);
                manifest.outputs.push(write_records(&run.records, &out.join(format!("{stem}_records.csv")))?);
                manifest.outputs.push(write_bias_report(&report, &out.join(format!("{stem}_bias.csv")))?);
                manifest.abc_prior_substitutions = run.abc_prior_substitutions;
                manifest.bootstrap_fallbacks = run.records.iter().filter(|r| r.bootstrap_fallback == Some(true)).count();
                manifest.abc_failures = run.records.iter().filter(|r| r.abc_failed == Some(true)).count();
                if !quiet {
                    eprintln!(
                        "scenario {index} ({}): {} simulations, P(no selection) = {:.4}",
                        &entry.config_hash[..12],
                        report.n_simulations,
                        report.none_probability
                    );
                }
            }
            Err(e) => {
                failures += 1;
                eprintln!("scenario {index} failed: {e}");
                manifest.error = Some(e.to_string());
            }
        }
        scenarios.push(manifest);
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        config_path: config_path.to_path_buf(),
        scenarios,
    };
    write_manifest(&manifest, &out.join("manifest.json"))?;
    if failures > 0 {
        return Err(Error::Parse(format!("{failures} scenario(s) failed; see manifest.json")));
    }
    Ok(())
}

fn cmd_truth(effect: &str, cutoffs: &str) -> Result<()> {
    let coef = EffectSetting::parse(effect)?.coefficients();
    let cutoffs = parse_cutoff_list(cutoffs)?;
    let mut out = String::from("cutoff,true_effect\n");
    for c in cutoffs {
        out.push_str(&format!("{c},{:.16e}\n", true_subset_effect(&coef, c)?));
    }
    print_stdout(&out)
}

fn cmd_report(records: &Path, effect: Option<&str>, cutoffs: Option<&str>, out: Option<&Path>) -> Result<()> {
    let records = read_records(records)?;
    let cutoffs = match cutoffs {
        Some(list) => parse_cutoff_list(list)?,
        None => {
            let mut seen: Vec<f64> = records.iter().filter_map(|r| r.selected_cutoff).collect();
            seen.sort_by(f64::total_cmp);
            seen.dedup();
            seen
        }
    };
    let report = match effect {
        Some(name) => {
            let coef = EffectSetting::parse(name)?.coefficients();
            let oracle = move |c: f64| true_subset_effect(&coef, c);
            aggregate_bias(&records, &cutoffs, Truth::Oracle(&oracle))?
        }
        None => aggregate_bias(&records, &cutoffs, Truth::Recorded)?,
    };
    match out {
        Some(path) => write_bias_report(&report, path).map(|_| ()),
        None => print_stdout(&bias_report_to_csv(&report)),
    }
}

fn print_stdout(text: &str) -> Result<()> {
    std::io::stdout()
        .write_all(text.as_bytes())
        .map_err(|e| Error::io("writing standard output", e))
}
