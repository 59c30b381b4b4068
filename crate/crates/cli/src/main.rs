//! `kgin`: phantom generation, acquisition simulation, prior training,
//! reconstruction and evaluation from the command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data or format, 3 numerical failure.
//! Failures print one `kgin: error code=N kind=K: reason` line on stderr.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Lib(kgin::Error),
}

impl From<kgin::Error> for CliError {
    fn from(e: kgin::Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(kgin::Error::Numerical(_) | kgin::Error::GradCheck(_)) => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        use kgin::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Lib(e) => match e {
                E::Shape(_) => "shape",
                E::Domain(_) => "domain",
                E::Contract(_) => "contract",
                E::Unsupported(_) => "unsupported",
                E::Format { .. } => "format",
                E::Numerical(_) => "numerical",
                E::GradCheck(_) => "gradcheck",
                E::Io { .. } => "io",
            },
        }
    }

    fn reason(&self) -> String {
        let text = match self {
            CliError::Usage(m) | CliError::Data(m) => m.clone(),
            CliError::Lib(e) => e.to_string(),
        };
        text.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

#[derive(Parser, Debug)]
#[command(name = "kgin", version, about = "Radial MRI reconstruction with k-space implicit neural representations")]
struct Cli {
    /// `key = value` config file; repeat to layer several (later files win)
    #[arg(long = "config", global = true, value_name = "FILE")]
    configs: Vec<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
pub struct ReconIo {
    /// Input `.kgd` dataset
    #[arg(long)]
    input: PathBuf,
    /// Output image (16-bit PGM)
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth PGM; enables the metrics row
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Metrics CSV to append to (created with a header if missing)
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Case label for the metrics row; defaults to the input file stem
    #[arg(long)]
    case: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the ground-truth phantom of case `case_seed` as a PGM
    GenPhantom {
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a jittered cohort: one .kgd and truth PGM per case plus a manifest
    MakeCohort {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Simulate a fully sampled scan of case `case_seed` (or of a given image)
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Also write the ground truth as a PGM
        #[arg(long)]
        truth_out: Option<PathBuf>,
        /// Scan this PGM instead of a generated phantom
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Keep the first floor(n/R) spokes of a dataset, R = `accel`
    Undersample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the cohort prior; with validation scans, also tune stopping thresholds
    TrainPrior {
        /// Manifest listing the cohort's .kgd files
        #[arg(long)]
        manifest: PathBuf,
        /// Output weights (.kgw)
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV; defaults to OUT with extension .trace.csv
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Fully sampled validation scan; writes OUT.tau-xR.cfg for each R in `accels`
        #[arg(long = "validation")]
        validation: Vec<PathBuf>,
    },
    /// Fine-tune the prior on a scan and grid the predicted k-space
    ReconInr {
        #[command(flatten)]
        io: ReconIo,
        /// Prior weights (.kgw)
        #[arg(long)]
        prior: PathBuf,
        /// Save the fine-tuned weights here
        #[arg(long)]
        weights_out: Option<PathBuf>,
        /// Save the fine-tuning trace here
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Total-variation compressed-sensing reconstruction
    ReconCs {
        #[command(flatten)]
        io: ReconIo,
    },
    /// Density-compensated zero-filled gridding reconstruction
    ReconZf {
        #[command(flatten)]
        io: ReconIo,
    },
    /// SSIM / RMSE / PSNR of an image against ground truth
    Evaluate {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Write the result line here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean ± std per method and acceleration, plus horizontal line profiles
    Report {
        /// Metrics CSV files
        #[arg(long = "metrics", required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        /// Summary CSV
        #[arg(long)]
        out: PathBuf,
        /// Images to take line profiles from
        #[arg(long = "image", num_args = 1..)]
        images: Vec<PathBuf>,
        /// Line-profile CSV (required with --image)
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Profile row; defaults to the middle row
        #[arg(long)]
        row: Option<usize>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    for path in &cli.configs {
        cfg.apply_file(path)?;
    }
    cfg.apply_env_seed(std::env::var("KGIN_SEED").ok().as_deref())?;
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    log::debug!("config:\n{}", cfg.to_text());
    use commands as c;
    match cli.command {
        Command::GenPhantom { out } => c::gen_phantom(&cfg, &out),
        Command::MakeCohort { out_dir } => c::make_cohort(&cfg, &out_dir),
        Command::Simulate { out, truth_out, image } => c::simulate(&cfg, &out, truth_out.as_deref(), image.as_deref()),
        Command::Undersample { input, out } => c::undersample(&cfg, &input, &out),
        Command::TrainPrior {
            manifest,
            out,
            trace,
            validation,
        } => c::train_prior(&cfg, &manifest, &out, trace.as_deref(), &validation),
        Command::ReconInr {
            io,
            prior,
            weights_out,
            trace,
        } => c::recon_inr(&cfg, &io, &prior, weights_out.as_deref(), trace.as_deref()),
        Command::ReconCs { io } => c::recon_cs(&cfg, &io),
        Command::ReconZf { io } => c::recon_zf(&cfg, &io),
        Command::Evaluate { image, truth, out } => c::evaluate(&cfg, &image, &truth, out.as_deref()),
        Command::Report {
            metrics,
            out,
            images,
            profiles,
            row,
        } => c::report(&metrics, &out, &images, profiles.as_deref(), row),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("kgin: error code=1 kind=usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kgin: error code={} kind={}: {}", e.code(), e.kind(), e.reason());
            ExitCode::from(e.code())
        }
    }
}
