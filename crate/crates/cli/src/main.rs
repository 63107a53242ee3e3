use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use cellsleep_core::loadaware::Mode;
use cellsleep_core::scenario::ScenarioDocument;
use cellsleep_cli::compare::{compare, write_summary};
use cellsleep_cli::experiment::{run_world, ResultWriter, World};
use cellsleep_cli::stats::BootstrapOptions;
use cellsleep_cli::{preset, run_experiment, Algorithm, ExperimentConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cellsleep", version, about = "Energy-minimal cell activation and TP assignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded scenario as JSON.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Solve one scenario and print its result row.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Scenario document from `generate` instead of a fresh draw.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Run every sweep value and repeat, one CSV row each.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Summarize result files with bootstrap intervals.
    Compare {
        files: Vec<PathBuf>,
        /// Algorithm whose rows are the denominator of the ratio columns.
        #[arg(long)]
        reference: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration name.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long = "eps-star")]
    eps_star: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            (None, Some(name)) => preset(name)?,
            (None, None) => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.sweep.seed_base = seed;
        }
        if let Some(algo) = &self.algo {
            cfg.algorithm.algorithm = algo.parse()?;
        }
        if let Some(mode) = &self.mode {
            cfg.algorithm.mode = mode.parse::<Mode>()?;
        }
        if let Some(eps) = self.eps {
            cfg.algorithm.eps = eps;
        }
        if let Some(eps_star) = self.eps_star {
            cfg.algorithm.eps_star = eps_star;
        }
        if let Some(out) = &self.out {
            cfg.sweep.output = Some(out.clone());
        }
        Ok(cfg)
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = common.config()?;
            cfg.validate()?;
            let cfg = cfg.at(cfg.points()[0]);
            let world = World::generate(&cfg, cfg.sweep.seed_base)?;
            let doc = ScenarioDocument::new(&world.scenario, &cfg.propagation);
            let mut out = output(cfg.sweep.output.as_deref())?;
            writeln!(out, "{}", doc.to_json())?;
            out.flush()?;
            Ok(true)
        }
        Command::Solve { common, scenario } => {
            let cfg = common.config()?;
            cfg.validate()?;
            let value = cfg.points()[0];
            let cfg = cfg.at(value);
            let world = match scenario {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    let (sc, prop) = ScenarioDocument::from_json(&text)?.into_parts()?;
                    World::from_scenario(&cfg, sc, &prop)?
                }
                None => World::generate(&cfg, cfg.sweep.seed_base)?,
            };
            let row = run_world(&world, &cfg, value);
            let mut w = ResultWriter::new(output(cfg.sweep.output.as_deref())?)?;
            w.write(&row)?;
            w.flush()?;
            Ok(row.feasible)
        }
        Command::Sweep { common, repeats } => {
            let mut cfg = common.config()?;
            if let Some(r) = repeats {
                cfg.sweep.repeats = r;
            }
            let summary = run_experiment(&cfg, output(cfg.sweep.output.as_deref())?)?;
            if summary.failed > 0 {
                eprintln!("{} of {} runs failed", summary.failed, summary.rows);
            }
            Ok(summary.failed == 0)
        }
        Command::Compare {
            files,
            reference,
            seed,
            out,
        } => {
            if files.is_empty() {
                bail!("compare needs at least one result file");
            }
            let reference = reference.map(|r| r.parse::<Algorithm>()).transpose()?;
            let paths: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
            let boot = BootstrapOptions {
                seed,
                ..Default::default()
            };
            let rows = compare(&paths, reference, &boot)?;
            write_summary(&rows, output(out.as_deref())?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
