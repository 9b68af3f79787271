//! Command-line surface: `generate`, `train`, `eval`, `predict`, `serve-sim`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::data::{build_samples, generate, read_dataset, read_events, write_dataset, write_events, DatasetSplit, GeneratorSpec, Sample};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::{evaluate, score_samples, train, Coupa, RunConfig, ScoreMode};
use crate::serving::{serve, ChannelAggregate, ServeConfig, ServeRequest, TierPolicies, TierStore};

#[derive(Debug, Parser)]
#[command(name = "coupa", version, about = "Continuous-time, position-aware CTR prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationArg {
    TimeEncoding,
    PositionModule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PositionArg {
    /// Score at the logged display position.
    Logged,
    /// Score at position 0, as served.
    Zero,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic event log.
    Generate {
        /// Generator settings (TOML); defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        users: Option<u32>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the planted ground truth as JSON.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Build samples from an event log and train a model.
    Train {
        #[arg(long)]
        events: PathBuf,
        /// Run configuration (TOML); defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_enum)]
        ablate: Vec<AblationArg>,
        /// Output directory for model.ckpt, dataset.tsv, train.jsonl and
        /// per-epoch checkpoints.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a dataset split and report AUC and GAUC.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum)]
        ablate: Vec<AblationArg>,
        #[arg(long, value_enum, default_value = "logged")]
        positions: PositionArg,
        /// Earlier report to compute the relative improvement against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write position-0 scores for a dataset split.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay serving requests against a fused tier store.
    ServeSim {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        requests: PathBuf,
        #[arg(long, default_value_t = crate::serving::DEFAULT_TOP_CHANNELS)]
        top: usize,
        #[arg(long, default_value = "max")]
        aggregate: ChannelAggregate,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn pick_split(data: DatasetSplit, split: SplitArg) -> Vec<Sample> {
    match split {
        SplitArg::Train => data.train,
        SplitArg::Validation => data.validation,
        SplitArg::Test => data.test,
    }
}

/// Reads the `gauc:` line of a rendered report.
pub fn report_gauc(text: &str) -> Option<f64> {
    text.lines()
        .find_map(|l| l.strip_prefix("gauc:"))
        .and_then(|v| v.trim().parse().ok())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            config,
            seed,
            users,
            out,
            truth,
        } => {
            let mut spec: GeneratorSpec = match config {
                Some(p) => toml::from_str(&read_text(&p)?).map_err(|e| Error::Config(e.to_string()))?,
                None => GeneratorSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(u) = users {
                spec.users = u;
            }
            let log = generate(&spec)?;
            write_events(&out, &log.events)?;
            if let Some(t) = truth {
                write_text(&t, &serde_json::to_string(&log.truth).expect("truth serialises"))?;
            }
            Ok(())
        }
        Command::Train {
            events,
            config,
            seed,
            epochs,
            ablate,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                cfg.train.seed = s;
                cfg.protocol.seed = s;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            for a in ablate {
                match a {
                    AblationArg::TimeEncoding => cfg.model.ablation.time_encoding = true,
                    AblationArg::PositionModule => cfg.model.ablation.position_module = true,
                }
            }
            let ckpt_dir = out.join("checkpoints");
            fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(format!("creating {}", ckpt_dir.display()), e))?;
            let events = read_events(&events)?;
            let data = build_samples(&events, &cfg.protocol)?;
            write_dataset(&out.join("dataset.tsv"), &data)?;
            write_text(&out.join("config.toml"), &cfg.to_toml())?;

            let log_path = out.join("train.jsonl");
            let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(format!("creating {}", log_path.display()), e))?);
            let mut model = Coupa::new(cfg.model.clone(), data.vocab.clone(), cfg.train.seed)?;
            train(&mut model, &data, &cfg.train, |rec, m| {
                let line = serde_json::to_string(rec).expect("record serialises");
                writeln!(log, "{line}")
                    .and_then(|_| log.flush())
                    .map_err(|e| Error::io(format!("writing {}", log_path.display()), e))?;
                m.save(&ckpt_dir.join(format!("epoch-{:03}.ckpt", rec.epoch)))
            })?;
            model.save(&out.join("model.ckpt"))
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            ablate,
            positions,
            baseline,
            out,
        } => {
            let mut model = Coupa::load(&checkpoint)?;
            for a in ablate {
                match a {
                    AblationArg::TimeEncoding => model.disable_time_encoding(),
                    AblationArg::PositionModule if !model.config().ablation.position_module => {
                        return Err(Error::Config(
                            "checkpoint has a position module; train with --ablate position-module".into(),
                        ))
                    }
                    AblationArg::PositionModule => {}
                }
            }
            let samples = pick_split(read_dataset(&dataset)?, split);
            let mode = match positions {
                PositionArg::Logged => ScoreMode::Logged,
                PositionArg::Zero => ScoreMode::PositionZero,
            };
            let mut report: MetricReport = evaluate(&model, &samples, mode)?;
            if let Some(b) = baseline {
                let g = report_gauc(&read_text(&b)?)
                    .ok_or_else(|| Error::Config(format!("{} has no gauc line", b.display())))?;
                report = report.with_baseline(b.display().to_string(), g);
            }
            let text = report.render();
            match out {
                Some(p) => write_text(&p, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Predict {
            checkpoint,
            dataset,
            split,
            out,
        } => {
            let model = Coupa::load(&checkpoint)?;
            let samples = pick_split(read_dataset(&dataset)?, split);
            let scores = score_samples(&model, &samples, ScoreMode::PositionZero)?;
            let mut text = String::from("group_key\tscore\tlabel\n");
            for s in scores {
                text.push_str(&format!("{}\t{}\t{}\n", s.group, s.score, s.label));
            }
            write_text(&out, &text)
        }
        Command::ServeSim {
            events,
            checkpoint,
            requests,
            top,
            aggregate,
            out,
        } => {
            let model = Coupa::load(&checkpoint)?;
            let store = TierStore::from_events(&read_events(&events)?, TierPolicies::default());
            let cfg = ServeConfig {
                top_channels: top,
                aggregate,
            };
            let file = File::open(&requests).map_err(|e| Error::io(format!("opening {}", requests.display()), e))?;
            let mut text = String::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(format!("reading {}", requests.display()), e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let req: ServeRequest = line.parse().map_err(|message| Error::Parse {
                    path: requests.clone(),
                    line: i + 1,
                    message,
                })?;
                let mut contents = req.contents.clone();
                let result = serve(&model, &store, &req, &mut contents, &cfg)?;
                text.push_str(&serde_json::to_string(&result).expect("result serialises"));
                text.push('\n');
            }
            write_text(&out, &text)
        }
    }
}
