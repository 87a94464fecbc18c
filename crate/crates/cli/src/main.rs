use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use longtail_cli::commands::{self, AugmentArgs, GreDemoArgs};
use longtail_cli::config::RunConfig;
use longtail_cli::{exit, CliError, CliResult, Outcome};
use longtail_core::tta::FusionMode;

/// Long-tail detection data tools: statistics, augmentation, sampling,
/// checkpoint averaging, test-time fusion and RoI-extractor checks.
#[derive(Parser, Debug)]
#[command(name = "longtail", version)]
struct Cli {
    /// Run configuration (JSON, one section per command).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the machine-readable report instead of the summary.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SampleMode {
    /// Class-balanced image weights and draws.
    Balance,
    /// Anchor labels and negative batches against synthetic targets.
    Anchors,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FuseMode {
    Nms,
    Avg,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Class counts, few/many-shot split and the staged training plan.
    Stats {
        dataset: PathBuf,
        #[arg(long)]
        threshold: Option<usize>,
    },
    /// Duck-fill and mix-up a dataset into a new output directory.
    Augment {
        dataset: PathBuf,
        /// Directory the dataset's file names are relative to.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<usize>,
        /// Inclusive paste count range, e.g. `1,3`.
        #[arg(long, value_parser = parse_range)]
        pastes: Option<(usize, usize)>,
        #[arg(long)]
        no_mixup: bool,
    },
    /// Class-balanced image sampling or anchor batch sampling.
    Sample {
        /// Dataset (balance) or target file (anchors).
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: SampleMode,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        batches: Option<usize>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average parameter snapshots.
    Swa {
        #[arg(required = true)]
        snapshots: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write values inline instead of manifest plus payload.
        #[arg(long)]
        inline: bool,
    },
    /// Fuse detection sets sharing one frame.
    Fuse {
        #[arg(required = true)]
        detections: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iou: Option<f64>,
        #[arg(long, value_enum)]
        mode: Option<FuseMode>,
    },
    /// GRE extraction, selector reduction and gradient check on snapshot files.
    GreDemo {
        #[arg(long)]
        pyramid: PathBuf,
        #[arg(long)]
        rois: PathBuf,
        #[arg(long)]
        params: PathBuf,
        /// Write the extracted features to this snapshot file.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Learning-rate schedule change points.
    Lr {
        #[arg(long)]
        iters_per_epoch: u64,
        /// Iterations to evaluate in addition to the change points.
        #[arg(long = "at", value_delimiter = ',')]
        at: Vec<u64>,
    },
    /// Print the default run configuration.
    Defaults,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected MIN,MAX")?;
    let lo = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let hi = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    Ok((lo, hi))
}

fn run(cli: Cli) -> CliResult<Outcome> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = cfg.seed(cli.seed);
    match cli.command {
        Command::Stats { dataset, threshold } => {
            if let Some(t) = threshold {
                cfg.stats.shot_threshold = t;
            }
            commands::stats(&dataset, &cfg.stats)
        }
        Command::Augment {
            dataset,
            images,
            out,
            threshold,
            pastes,
            no_mixup,
        } => {
            if let Some(t) = threshold {
                cfg.augment.shot_threshold = t;
            }
            if let Some(p) = pastes {
                cfg.augment.duck_fill.pastes_per_image = p;
            }
            if no_mixup {
                cfg.augment.mixup = false;
            }
            let args = AugmentArgs {
                dataset,
                images,
                out,
            };
            commands::augment(&args, &cfg.augment, seed)
        }
        Command::Sample {
            input,
            mode,
            draws,
            batches,
            out,
        } => {
            if let Some(d) = draws {
                cfg.sample.draws = d;
            }
            if let Some(b) = batches {
                cfg.sample.batches = b;
            }
            match mode {
                SampleMode::Balance => {
                    commands::sample_balance(&input, &cfg.sample, seed, out.as_deref())
                }
                SampleMode::Anchors => {
                    commands::sample_anchors(&input, &cfg.sample, seed, out.as_deref())
                }
            }
        }
        Command::Swa {
            snapshots,
            out,
            inline,
        } => {
            cfg.swa.inline |= inline;
            commands::swa(&snapshots, &out, &cfg.swa)
        }
        Command::Fuse {
            detections,
            out,
            iou,
            mode,
        } => {
            if let Some(t) = iou {
                cfg.fuse.iou_thresh = t;
            }
            if let Some(m) = mode {
                cfg.fuse.mode = match m {
                    FuseMode::Nms => FusionMode::Nms,
                    FuseMode::Avg => FusionMode::Avg,
                };
            }
            commands::fuse(&detections, &out, &cfg.fuse)
        }
        Command::GreDemo {
            pyramid,
            rois,
            params,
            dump,
            tolerance,
        } => {
            if let Some(t) = tolerance {
                cfg.gre_demo.tolerance = t;
            }
            let args = GreDemoArgs {
                pyramid,
                rois,
                params,
                dump,
            };
            commands::gre_demo(&args, &cfg.gre_demo, seed)
        }
        Command::Lr {
            iters_per_epoch,
            at,
        } => commands::lr_schedule(iters_per_epoch, &at, &cfg.lr),
        Command::Defaults => {
            let text = serde_json::to_string_pretty(&cfg).expect("config serializes");
            Ok(Outcome::new(&cfg, text))
        }
    }
}

fn report_error(err: &CliError, json: bool) -> ExitCode {
    let code = err.exit_code();
    eprintln!("error: {err}");
    if json {
        let v = serde_json::json!({ "error": err.to_string(), "exit_code": code });
        println!(
            "{}",
            serde_json::to_string_pretty(&v).expect("error serializes")
        );
    }
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LONGTAIL_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::VALIDATION
            } else {
                exit::OK
            });
        }
    };
    let json = cli.json;
    match run(cli) {
        Ok(outcome) => {
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&outcome.report).expect("report serializes")
                );
            } else {
                println!("{}", outcome.summary);
            }
            match outcome.deferred {
                Some(err) => {
                    eprintln!("error: {err}");
                    ExitCode::from(err.exit_code())
                }
                None => ExitCode::from(exit::OK),
            }
        }
        Err(err) => report_error(&err, json),
    }
}
