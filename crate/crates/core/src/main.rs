use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use antmute::complexity::fpo_report;
use antmute::experiment::{
    evaluate_split, generate_dataset, run_heuristics, train_asymmetric, train_symmetric, write_report, Dataset,
    ExperimentConfig, HeuristicRun, MetricsArtifact, ReportInputs,
};
use antmute::nam::{NamModel, Split};
use antmute::{Error, Result};

#[derive(Parser)]
#[command(name = "antmute", version, about = "Transmit antenna muting experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON). Overrides --profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in profile used when no --config is given.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// Base seed; derives every seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Symmetric,
    Asymmetric,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the effective configuration as JSON.
    Config {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the labeled dataset.
    GenData {
        #[arg(long, default_value = "dataset.bin")]
        out: PathBuf,
    },
    /// Train one phase of the classifier.
    Train {
        #[arg(long, value_enum)]
        phase: PhaseArg,
        #[arg(long, default_value = "dataset.bin")]
        data: PathBuf,
        /// Symmetric checkpoint to start the asymmetric phase from.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy and QoS guarantee of a checkpoint on one split.
    Eval {
        #[arg(long, default_value = "dataset.bin")]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Label used in the report; defaults to the checkpoint file stem.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy, sequential and fixed-configuration search per slot, plus the
    /// classifier when a checkpoint is given.
    RunHeuristics {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "heuristics.json")]
        out: PathBuf,
    },
    /// Analytic FPO comparison.
    ComplexityReport {
        /// Directory for fpo.json, fpo.txt and fpo.csv; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tables and CDFs from the artifacts of the previous steps.
    Report {
        #[arg(long, default_value = "heuristics.json")]
        heuristics: PathBuf,
        /// Metrics files written by `eval`.
        #[arg(long, num_args = 1..)]
        metrics: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::profile(&c.profile)?,
    };
    if let Some(s) = c.seed {
        cfg.reseed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(serde_json::from_str(&s)?)
}

fn load_dataset(path: &Path, cfg: &ExperimentConfig) -> Result<Dataset> {
    let d = Dataset::read(path)?;
    d.check_config(cfg)?;
    Ok(d)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.cmd {
        Cmd::Config { out } => match out {
            Some(p) => cfg.save(&p)?,
            None => println!("{}", serde_json::to_string_pretty(&cfg)?),
        },
        Cmd::GenData { out } => {
            let d = generate_dataset(&cfg)?;
            d.write(&out)?;
            println!(
                "{} samples, infeasible fraction {:.4}, class histogram {:?} -> {}",
                d.samples.len(),
                d.infeasible_fraction(),
                d.class_histogram(),
                out.display()
            );
        }
        Cmd::Train { phase, data, init, out } => {
            let d = load_dataset(&data, &cfg)?;
            let (model, hist) = match phase {
                PhaseArg::Symmetric => {
                    if init.is_some() {
                        return Err(Error::InvalidArgument("--init applies to the asymmetric phase only".into()));
                    }
                    train_symmetric(&cfg, &d)?
                }
                PhaseArg::Asymmetric => {
                    let p = init.ok_or_else(|| Error::Missing("--init checkpoint for the asymmetric phase".into()))?;
                    let base = NamModel::load(&p)?;
                    train_asymmetric(&cfg, &d, &base, &cfg.nam.loss)?
                }
            };
            model.save(&out)?;
            let last = hist.validation_loss.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained {} epochs, kept epoch {:?}, final validation loss {last:.5} -> {}",
                hist.train_loss.len(),
                hist.best_epoch,
                out.display()
            );
        }
        Cmd::Eval {
            data,
            model,
            split,
            name,
            out,
        } => {
            let d = load_dataset(&data, &cfg)?;
            let m = NamModel::load(&model)?;
            let split = Split::from(split);
            let metrics = evaluate_split(&cfg, &d, &m, split)?;
            println!(
                "{:?}: {} samples, accuracy {:.4}, qos guarantee {:.4}",
                split, metrics.samples, metrics.accuracy, metrics.qos_guarantee
            );
            let name = name.unwrap_or_else(|| {
                model
                    .file_stem()
                    .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
            });
            let artifact = MetricsArtifact {
                config_hash: cfg.hash(),
                seeds: cfg.seeds.clone(),
                model: name,
                split,
                metrics,
            };
            write_json(&out, &artifact)?;
        }
        Cmd::RunHeuristics { model, out } => {
            let m = model.as_deref().map(NamModel::load).transpose()?;
            let run = run_heuristics(&cfg, m.as_ref())?;
            for &s in &run.solvers {
                let outs = run.outcomes(s);
                let mean = outs.iter().map(|o| o.active_elements as f64).sum::<f64>() / outs.len().max(1) as f64;
                println!("{:<14} mean active {mean:.2} over {} slots", s.name(), outs.len());
            }
            write_json(&out, &run)?;
        }
        Cmd::ComplexityReport { out } => {
            let r = fpo_report(&cfg.fpo_params(), &cfg.nam.architecture, cfg.fpo_mode)?;
            match out {
                Some(dir) => {
                    write_json(&dir.join("fpo.json"), &r)?;
                    for (name, body) in [("fpo.txt", r.to_text()), ("fpo.csv", r.to_csv())] {
                        let p = dir.join(name);
                        fs::write(&p, body).map_err(|e| Error::Io { path: p, source: e })?;
                    }
                }
                None => print!("{}", r.to_text()),
            }
        }
        Cmd::Report {
            heuristics,
            metrics,
            out,
        } => {
            let run: HeuristicRun = read_json(&heuristics)?;
            let metrics: Vec<MetricsArtifact> = metrics.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
            let hash = cfg.hash();
            if let Some(m) = metrics.iter().find(|m| m.config_hash != hash) {
                return Err(Error::Invariant(format!("metrics for {} come from a different config", m.model)));
            }
            let inputs = ReportInputs {
                config: &cfg,
                heuristics: Some(&run),
                metrics: &metrics,
            };
            for p in write_report(&out, &inputs)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Invariant(_) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
