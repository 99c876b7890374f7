//! `curvreg`: phantom generation, feature detection, registration,
//! evaluation and batch sweeps over files.
//!
//! Set `CURVREG_LOG` (e.g. `info`, `debug`) for log output. On failure the
//! process exits nonzero and prints a JSON error object to stderr.

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use curvreg::cases::Scenario;
use curvreg::io::read_json;
use curvreg::Modality;

use config::RunConfig;
use stages::Stage;

#[derive(Parser, Debug)]
#[command(name = "curvreg", version, about = "Classifier-guided centerline-to-pullback registration")]
struct Cli {
    /// Run configuration (JSON); missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Case seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel cases for `sweep`, overriding the config.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory, or output file for `features`, `eval` and `report`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Scenario to draw cases from, overriding the config.
    #[arg(long, global = true, value_parser = parse_scenario)]
    scenario: Option<Scenario>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a phantom, its simulated pullback and the ground truth.
    Phantom {
        /// Case description (JSON) instead of a scenario draw.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Detect landmark and guidewire probability maps on a polar image.
    Features {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "ivus")]
        modality: ModalityArg,
        /// Reference labels (ground-truth or label-map JSON) for the oracle
        /// detector.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Register a moving phantom directory to a fixed pullback directory.
    Register {
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        /// Fixed feature map; defaults to `<fixed>/features.json` or a fresh
        /// detection.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Score a registration result against ground truth.
    Eval {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Aggregate per-case reports into a CSV and a JSON summary.
    Report {
        #[arg(long)]
        glob: String,
    },
    /// Run the full pipeline over consecutive seeds and summarize.
    Sweep {
        /// Number of seeds, starting at `--seed` (default 0).
        #[arg(long, default_value_t = 20)]
        count: u64,
    },
    /// Run selected pipeline stages for one case.
    Run {
        /// Comma-separated subset of phantom,features,register,eval, or `all`.
        #[arg(long, default_value = "all")]
        stages: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModalityArg {
    Ivus,
    Mpr,
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: curvreg::Error| e.to_string())
}

/// Config validation failure carrying every problem found.
#[derive(Debug)]
struct ConfigProblems(Vec<String>);

impl std::fmt::Display for ConfigProblems {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0.join("; "))
    }
}

impl std::error::Error for ConfigProblems {}

fn effective_config(cli: &Cli, needs_case: bool) -> Result<RunConfig> {
    let mut cfg: RunConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(s) = cli.scenario {
        cfg.scenario = s;
    }
    let problems = cfg.problems(needs_case);
    if !problems.is_empty() {
        return Err(ConfigProblems(problems).into());
    }
    Ok(cfg)
}

fn required_out(cli: &Cli, what: &str) -> Result<PathBuf> {
    match &cli.out {
        Some(p) => Ok(p.clone()),
        None => bail!("--out <{what}> is required"),
    }
}

fn sweep(cfg: &RunConfig, count: u64) -> Result<()> {
    let start = cfg.seed.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build()?;
    let failures: Vec<String> = pool.install(|| {
        (start..start + count)
            .into_par_iter()
            .filter_map(|seed| {
                let case_cfg = RunConfig { seed: Some(seed), ..cfg.clone() };
                let dir = cfg.out.join(format!("{}_{seed:03}", cfg.scenario.as_str()));
                stages::run_pipeline(&case_cfg, &Stage::ALL, &dir).err().map(|e| format!("seed {seed}: {e:#}"))
            })
            .collect()
    });
    let pattern = cfg.out.join("*").join(stages::REPORT_FILE);
    if let Ok(n) = stages::report(&pattern.to_string_lossy(), &cfg.out.join("summary.csv")) {
        log::info!("summarized {n} cases");
    }
    if !failures.is_empty() {
        bail!("{} of {count} cases failed: {}", failures.len(), failures.join("; "));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Phantom { spec } => {
            let mut cfg = effective_config(cli, spec.is_none())?;
            if spec.is_some() {
                cfg.case_spec = spec.clone();
            }
            stages::phantom(stages::load_case_spec(&cfg)?, &cfg.out)
        }
        Command::Features { input, modality, labels } => {
            let cfg = effective_config(cli, false)?;
            let modality = match modality {
                ModalityArg::Ivus => Modality::Ivus,
                ModalityArg::Mpr => Modality::Mpr,
            };
            stages::features(input, modality, labels.as_deref(), &cfg.detector, &required_out(cli, "file")?)
        }
        Command::Register { fixed, moving, features } => {
            let cfg = effective_config(cli, false)?;
            stages::register_case(fixed, moving, features.as_deref(), &cfg.detector, &cfg.optimizer, &cfg.out)
                .map(|_| ())
        }
        Command::Eval { result, gt } => {
            let cfg = effective_config(cli, false)?;
            stages::evaluate(result, gt, &cfg.eval, &required_out(cli, "file")?).map(|_| ())
        }
        Command::Report { glob } => stages::report(glob, &required_out(cli, "file")?).map(|_| ()),
        Command::Sweep { count } => sweep(&effective_config(cli, false)?, *count),
        Command::Run { stages: list } => {
            let list = Stage::parse_list(list)?;
            let cfg = effective_config(cli, list.contains(&Stage::Phantom))?;
            stages::run_pipeline(&cfg, &list, &cfg.out).map(|_| ())
        }
    }
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let (kind, problems) = if let Some(e) = err.downcast_ref::<curvreg::Error>() {
        (e.kind(), Vec::new())
    } else if let Some(p) = err.downcast_ref::<ConfigProblems>() {
        ("config", p.0.clone())
    } else {
        ("error", Vec::new())
    };
    let mut obj = serde_json::json!({ "error": { "kind": kind, "message": format!("{err:#}") } });
    if !problems.is_empty() {
        obj["error"]["problems"] = serde_json::json!(problems);
    }
    obj
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CURVREG_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
