//! Command-line front end: simulate datasets, fit models, re-run
//! diagnostics on stored draws.
//!
//! Exit codes are part of the interface: 0 success, 2 configuration error,
//! 3 data error, 4 convergence flag (outputs still written), 5 sampler
//! failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use jointfuse::config::{self, RunConfig};
use jointfuse::diagnostics::{max_rhat, summarize, ParameterSummary};
use jointfuse::io::{
    read_draws, sha256_file, summary_table, write_draws, write_json, write_plot_data, Manifest,
};
use jointfuse::model::{prepare, Dataset, ModelError};
use jointfuse::sampler::{self, ChainOutput, SamplerError};
use jointfuse::simulate::simulate_dataset;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_RHAT: u8 = 4;
const EXIT_SAMPLER: u8 = 5;

#[derive(Parser)]
#[command(name = "jointfuse", version, about = "Joint longitudinal and time-to-event modeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset from the config's [scenario] section.
    Simulate {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the configured model to a dataset and write draws + summaries.
    Fit {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Directory holding long.csv and surv.csv.
        #[arg(long)]
        data_dir: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config chain count.
        #[arg(long)]
        chains: Option<usize>,
        /// Overrides the config iteration count.
        #[arg(long)]
        iters: Option<usize>,
        /// Overrides the config burn-in length.
        #[arg(long)]
        burnin: Option<usize>,
        /// Overrides the config thinning stride.
        #[arg(long)]
        thin: Option<usize>,
        /// Convergence gate on the largest monitored Rhat.
        #[arg(long, default_value_t = 1.1)]
        rhat_threshold: f64,
        /// Compute Rhat on half-chains to also catch within-chain drift.
        #[arg(long)]
        split_rhat: bool,
    },
    /// Recompute summaries and plot data from a fit's draw files.
    Diagnose {
        /// Directory holding draws_chain*.csv (summaries are rewritten there).
        #[arg(long)]
        out: PathBuf,
        /// Convergence gate on the largest monitored Rhat.
        #[arg(long, default_value_t = 1.1)]
        rhat_threshold: f64,
        /// Compute Rhat on half-chains to also catch within-chain drift.
        #[arg(long)]
        split_rhat: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate { config, out, seed } => cmd_simulate(&config, &out, seed),
        Command::Fit {
            config,
            data_dir,
            out,
            seed,
            chains,
            iters,
            burnin,
            thin,
            rhat_threshold,
            split_rhat,
        } => cmd_fit(
            &config,
            &data_dir,
            &out,
            FitOverrides {
                seed,
                chains,
                iters,
                burnin,
                thin,
            },
            rhat_threshold,
            split_rhat,
        ),
        Command::Diagnose {
            out,
            rhat_threshold,
            split_rhat,
        } => cmd_diagnose(&out, rhat_threshold, split_rhat),
    };
    ExitCode::from(code)
}

fn fail(code: u8, message: impl std::fmt::Display) -> u8 {
    eprintln!("error: {message}");
    code
}

fn load_config(path: &Path) -> Result<RunConfig, u8> {
    config::load(path).map_err(|e| fail(EXIT_CONFIG, e))
}

fn ensure_dir(dir: &Path) -> Result<(), u8> {
    std::fs::create_dir_all(dir).map_err(|e| fail(EXIT_DATA, format!("{}: {e}", dir.display())))
}

fn cmd_simulate(config_path: &Path, out: &Path, seed: Option<u64>) -> u8 {
    let started = Instant::now();
    let cfg = match load_config(config_path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let Some(scenario) = cfg.scenario else {
        return fail(
            EXIT_CONFIG,
            "config has no [scenario] section, nothing to simulate",
        );
    };
    let seed = seed.unwrap_or(cfg.mcmc.seed);
    let (data, truth) = match simulate_dataset(&scenario, seed) {
        Ok(pair) => pair,
        Err(e) => return fail(EXIT_DATA, e),
    };
    if let Err(code) = ensure_dir(out) {
        return code;
    }
    if let Err(e) = data.write_dir(out) {
        return fail(EXIT_DATA, e);
    }
    if let Err(e) = write_json(&out.join("truth.json"), &truth) {
        return fail(EXIT_DATA, e);
    }
    let manifest = match build_manifest(
        "simulate",
        config_path,
        seed,
        out,
        &["long.csv", "surv.csv"],
        vec!["long.csv".into(), "surv.csv".into(), "truth.json".into()],
        started.elapsed().as_millis() as u64,
    ) {
        Ok(m) => m,
        Err(code) => return code,
    };
    if let Err(e) = write_json(&out.join("manifest.json"), &manifest) {
        return fail(EXIT_DATA, e);
    }
    let events = data.subjects.iter().filter(|s| s.status > 0).count();
    println!(
        "wrote {} subjects ({} events, {} censored) to {}",
        data.n_subjects(),
        events,
        data.n_subjects() - events,
        out.display()
    );
    0
}

struct FitOverrides {
    seed: Option<u64>,
    chains: Option<usize>,
    iters: Option<usize>,
    burnin: Option<usize>,
    thin: Option<usize>,
}

fn cmd_fit(
    config_path: &Path,
    data_dir: &Path,
    out: &Path,
    overrides: FitOverrides,
    rhat_threshold: f64,
    split_rhat: bool,
) -> u8 {
    let started = Instant::now();
    let mut cfg = match load_config(config_path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(v) = overrides.seed {
        cfg.mcmc.seed = v;
    }
    if let Some(v) = overrides.chains {
        cfg.mcmc.chains = v;
    }
    if let Some(v) = overrides.iters {
        cfg.mcmc.iterations = v;
    }
    if let Some(v) = overrides.burnin {
        cfg.mcmc.burnin = v;
    }
    if let Some(v) = overrides.thin {
        cfg.mcmc.thin = v;
    }
    if let Err(e) = cfg.mcmc.validate() {
        return fail(EXIT_CONFIG, e);
    }

    let marker_names: Vec<String> = cfg.spec.markers.iter().map(|m| m.name.clone()).collect();
    let data = match Dataset::from_dir(data_dir, &marker_names) {
        Ok(d) => d,
        Err(e) => return fail(EXIT_DATA, e),
    };
    if data.n_subjects() == 0 {
        return fail(EXIT_DATA, "surv.csv: no subjects");
    }
    let prepared = match prepare(&cfg.spec, &data, &cfg.rule) {
        Ok(p) => p,
        // A spec that fails validation against real data is a config
        // problem; anything else the preparer reports is bad data.
        Err(e @ ModelError::Invalid(_)) => return fail(EXIT_CONFIG, e),
        Err(e) => return fail(EXIT_DATA, e),
    };

    let chains = match sampler::run(&prepared, &cfg.mcmc) {
        Ok(c) => c,
        Err(e @ (SamplerError::BadConfig(_) | SamplerError::UnknownMonitor(_))) => {
            return fail(EXIT_CONFIG, e)
        }
        Err(e) => return fail(EXIT_SAMPLER, e),
    };
    let summaries = match summarize(&chains, split_rhat) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_SAMPLER, e),
    };

    if let Err(code) = ensure_dir(out) {
        return code;
    }
    let mut outputs = match write_draws(out, &chains) {
        Ok(o) => o,
        Err(e) => return fail(EXIT_DATA, e),
    };
    if let Err(code) = write_summaries(out, &chains, &summaries, &mut outputs) {
        return code;
    }
    let manifest = match build_manifest(
        "fit",
        config_path,
        cfg.mcmc.seed,
        data_dir,
        &["long.csv", "surv.csv"],
        outputs,
        started.elapsed().as_millis() as u64,
    ) {
        Ok(m) => m,
        Err(code) => return code,
    };
    if let Err(e) = write_json(&out.join("manifest.json"), &manifest) {
        return fail(EXIT_DATA, e);
    }

    print!("{}", summary_table(&summaries));
    finish_with_gate(&summaries, rhat_threshold)
}

fn cmd_diagnose(out: &Path, rhat_threshold: f64, split_rhat: bool) -> u8 {
    let chains = match read_draws(out) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_DATA, e),
    };
    let summaries = match summarize(&chains, split_rhat) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_DATA, e),
    };
    let mut outputs = Vec::new();
    if let Err(code) = write_summaries(out, &chains, &summaries, &mut outputs) {
        return code;
    }
    print!("{}", summary_table(&summaries));
    finish_with_gate(&summaries, rhat_threshold)
}

/// summary.json, summary.txt, and the plot-data CSVs, shared by fit and
/// diagnose so the two commands produce identical bytes from equal draws.
fn write_summaries(
    out: &Path,
    chains: &[ChainOutput],
    summaries: &[ParameterSummary],
    outputs: &mut Vec<String>,
) -> Result<(), u8> {
    write_json(&out.join("summary.json"), &summaries).map_err(|e| fail(EXIT_DATA, e))?;
    outputs.push("summary.json".into());
    std::fs::write(out.join("summary.txt"), summary_table(summaries))
        .map_err(|e| fail(EXIT_DATA, format!("{}: {e}", out.join("summary.txt").display())))?;
    outputs.push("summary.txt".into());
    let plots = write_plot_data(out, chains, summaries).map_err(|e| fail(EXIT_DATA, e))?;
    outputs.extend(plots);
    Ok(())
}

fn finish_with_gate(summaries: &[ParameterSummary], threshold: f64) -> u8 {
    let worst = max_rhat(summaries);
    if worst > threshold {
        let offenders: Vec<&str> = summaries
            .iter()
            .filter(|s| s.rhat > threshold)
            .map(|s| s.name.as_str())
            .collect();
        eprintln!(
            "warning: Rhat above {threshold} for {} parameter(s): {}",
            offenders.len(),
            offenders.join(", ")
        );
        return EXIT_RHAT;
    }
    0
}

#[allow(clippy::too_many_arguments)]
fn build_manifest(
    command: &str,
    config_path: &Path,
    seed: u64,
    data_dir: &Path,
    data_files: &[&str],
    outputs: Vec<String>,
    elapsed_ms: u64,
) -> Result<Manifest, u8> {
    let config_sha256 = sha256_file(config_path).map_err(|e| fail(EXIT_CONFIG, e))?;
    let mut data_sha256 = BTreeMap::new();
    for name in data_files {
        let hash = sha256_file(&data_dir.join(name)).map_err(|e| fail(EXIT_DATA, e))?;
        data_sha256.insert(name.to_string(), hash);
    }
    Ok(Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config_sha256,
        data_sha256,
        elapsed_ms,
        outputs,
    })
}
