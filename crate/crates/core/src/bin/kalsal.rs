use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kalsal::channels::Variant;
use kalsal::dataset::build_index;
use kalsal::harness::{self, exit, RunConfig};
use kalsal::Result;

#[derive(Parser)]
#[command(name = "kalsal", version, about = "Kalman-filter visual saliency")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a saliency map for one image.
    Saliency {
        image: PathBuf,
        /// Output PNG; raw floats go next to it with a `.f32` extension.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score every image of a dataset and write a JSON report.
    Evaluate {
        dataset: PathBuf,
        #[arg(short, long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        dataset_opts: DatasetOpts,
        #[command(flatten)]
        common: Common,
    },
    /// Pooled ROC curve over a dataset, written as CSV.
    Roc {
        dataset: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Number of thresholds in the sweep.
        #[arg(long)]
        thresholds: Option<usize>,
        #[command(flatten)]
        dataset_opts: DatasetOpts,
        #[command(flatten)]
        common: Common,
    },
    /// Print the effective configuration as TOML.
    PrintConfig {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct DatasetOpts {
    /// JSON manifest listing id/image/fixations/density, relative to the dataset root.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

/// Flags shared by every subcommand. Anything set here overrides the config file.
#[derive(Args)]
struct Common {
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    /// Prediction error above which the filter trusts the measurement.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, env = "KALSAL_THREADS")]
    threads: Option<usize>,
    /// Dump intermediate maps as raw floats into this directory.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.variant {
            cfg.pipeline.variant = v;
        }
        if let Some(s) = self.seed {
            cfg.pipeline.seed = s;
        }
        if let Some(t) = self.threshold {
            cfg.pipeline.kalman.error_threshold = t;
        }
        if let Some(n) = self.threads {
            cfg.threads = n;
        }
        if let Some(d) = &self.dump_dir {
            cfg.debug.dump_dir = Some(d.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| kalsal::Error::Argument(format!("no {what} given (flag or `output` in config)")))
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::PrintConfig { common } => {
            print!("{}", common.resolve()?.to_toml());
            Ok(exit::OK)
        }
        Command::Saliency { image, output, common } => {
            let cfg = common.resolve()?;
            eprintln!("{}", cfg.banner());
            let output = required(output, &cfg.output, "output path")?;
            let out = harness::cmd_saliency(&image, &cfg, &output)?;
            eprintln!("wrote {} and {}", out.png.display(), out.raw.display());
            Ok(exit::OK)
        }
        Command::Evaluate {
            dataset,
            report,
            dataset_opts,
            common,
        } => {
            let cfg = common.resolve()?;
            eprintln!("{}", cfg.banner());
            let report = required(report, &cfg.output, "report path")?;
            let index = build_index(&dataset, dataset_opts.manifest.as_deref())?;
            let rep = harness::cmd_evaluate(&index, &cfg, &report)?;
            for r in rep.images.iter().filter(|r| r.error.is_some()) {
                eprintln!("failed {}: {}", r.id, r.error.as_deref().unwrap_or_default());
            }
            if let Some(m) = &rep.mean {
                eprintln!(
                    "{} images: AUC-Judd {:.4} AUC-Borji {:.4} CC {:.4} SIM {:.4} NSS {:.4}",
                    rep.evaluated, m.auc_judd, m.auc_borji, m.cc, m.sim, m.nss
                );
            }
            Ok(if rep.failed > 0 { exit::PARTIAL } else { exit::OK })
        }
        Command::Roc {
            dataset,
            output,
            thresholds,
            dataset_opts,
            common,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(n) = thresholds {
                cfg.metrics.roc_thresholds = n;
                cfg.validate()?;
            }
            eprintln!("{}", cfg.banner());
            let output = required(output, &cfg.output, "output path")?;
            let index = build_index(&dataset, dataset_opts.manifest.as_deref())?;
            let out = harness::cmd_roc(&index, &cfg, &output)?;
            for (id, e) in &out.failed {
                eprintln!("failed {id}: {e}");
            }
            eprintln!("pooled ROC area {:.4}", out.area);
            Ok(if out.failed.is_empty() { exit::OK } else { exit::PARTIAL })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e))
        }
    }
}
