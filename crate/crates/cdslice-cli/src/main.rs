//! `cdslice`: the command-line surface of the slice-sequence drag
//! surrogate. Nine batch subcommands cover the pipeline — dataset synthesis
//! and inspection, tensor preprocessing, training, evaluation, single-cloud
//! prediction and attribution, report rendering, and gradient verification.
//!
//! Every command is non-interactive and exit-code disciplined: 0 on
//! success, 1 with a message on stderr otherwise. `--json` switches stdout
//! to a single machine-parsable document. Results go to stdout, progress
//! and warnings to stderr.

mod config;
mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cdslice::dataio::Split;
use cdslice::model::ModelConfig;

use config::{MaxPoints, Overrides, Precision, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Flags every subcommand honors. Precedence: built-in defaults, then the
/// config file, then flags. `CDSLICE_CACHE_DIR` overrides any configured
/// slice-cache location.
#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON config file; any subset of the run configuration keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Emit one machine-parsable JSON document on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Run seed: dataset synthesis, shuffling, dropout, probe inputs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the per-sample parallel stages (preprocess,
    /// synth). Training is single-stream by design.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Scalar width for the numeric pipeline (gradcheck defaults to f64,
    /// everything else to f32).
    #[arg(long, global = true, value_enum)]
    precision: Option<Precision>,
}

#[derive(Debug, Parser)]
#[command(
    name = "cdslice",
    version,
    about = "Drag-coefficient surrogate over sliced point clouds: data tooling, training, evaluation, reports"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Summarize a manifest: required point capacity and per-split label stats.
    Scan {
        /// Dataset manifest CSV (id, path, cd, split).
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Slice count to measure occupancy against.
        #[arg(long, value_name = "N")]
        slices: Option<usize>,
        /// Optional directory for stats.json plus the archived config.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Slice every sample into cache tensors, one file per manifest id.
    Preprocess {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Cache directory (CDSLICE_CACHE_DIR overrides; default ./slice_cache).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        slices: Option<usize>,
        /// Per-slice point capacity, or "auto" to scan the dataset.
        #[arg(long, value_name = "N|auto")]
        max_points: Option<MaxPoints>,
    },
    /// Generate a labeled synthetic dataset and its manifest.
    Synth {
        /// Number of bodies (at least 3).
        #[arg(long, value_name = "N")]
        bodies: usize,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Surface points per body.
        #[arg(long, value_name = "N")]
        points: Option<usize>,
    },
    /// Fit the model on the train split; best/final checkpoints + epoch log.
    Train {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Read tensors from this slice cache instead of slicing clouds.
        #[arg(long, value_name = "DIR")]
        cache: Option<PathBuf>,
        /// Continue from a checkpoint (architecture must match exactly).
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
        #[arg(long, value_name = "RATE")]
        lr: Option<f64>,
        #[arg(long, value_name = "N")]
        batch_size: Option<usize>,
        /// Global L2 gradient-norm ceiling.
        #[arg(long, value_name = "NORM")]
        grad_clip: Option<f64>,
        #[arg(long, value_name = "N")]
        slices: Option<usize>,
        #[arg(long, value_name = "N|auto")]
        max_points: Option<MaxPoints>,
    },
    /// Metrics plus a per-sample prediction table for one split.
    Eval {
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Which split to evaluate.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Output directory for eval_<split>.csv and metrics.json.
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
    },
    /// Predict one cloud's drag coefficient; reports stage latencies.
    Predict {
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        /// Point cloud file (.pcld binary, anything else text).
        #[arg(long, value_name = "PATH")]
        cloud: PathBuf,
    },
    /// Leave-one-slice-out attribution for one cloud: CSV + bar chart.
    Sensitivity {
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        cloud: PathBuf,
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
    },
    /// Render the four report figures from a train log and an eval table.
    Report {
        #[arg(long, value_name = "CSV")]
        train_log: PathBuf,
        #[arg(long, value_name = "CSV")]
        eval_csv: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Residual histogram bin width.
        #[arg(long, value_name = "WIDTH")]
        bin_width: Option<f64>,
    },
    /// Verify model gradients against finite differences; nonzero on failure.
    Gradcheck {
        #[arg(long, value_name = "N")]
        slices: Option<usize>,
        #[arg(long, value_name = "N|auto")]
        max_points: Option<MaxPoints>,
    },
}

fn dispatch(cli: Cli) -> cdslice::Result<()> {
    let g = &cli.global;
    let base_overrides = Overrides {
        seed: g.seed,
        threads: g.threads,
        precision: g.precision,
        ..Overrides::default()
    };
    let config_file = g.config.as_deref();

    match cli.command {
        Command::Scan { manifest, slices, out } => {
            let o = Overrides { slice_count: slices, ..base_overrides };
            let run = config::resolve(config_file, &o, Precision::F32)?;
            init_threads(&run)?;
            commands::scan::run(&manifest, out.as_deref(), run, g.json)
        }
        Command::Preprocess { manifest, out, slices, max_points } => {
            let o = Overrides { slice_count: slices, max_points, ..base_overrides };
            let run = config::resolve(config_file, &o, Precision::F32)?;
            init_threads(&run)?;
            let out_dir = commands::cache_dir_for_reading(out.as_deref(), &run)
                .unwrap_or_else(|| PathBuf::from("slice_cache"));
            commands::preprocess::run(&manifest, &out_dir, run, g.json)
        }
        Command::Synth { bodies, out, points } => {
            let o = Overrides { points_per_body: points, ..base_overrides };
            let run = config::resolve(config_file, &o, Precision::F32)?;
            init_threads(&run)?;
            commands::synth::run(bodies, &out, run, g.json)
        }
        Command::Train {
            manifest,
            out,
            cache,
            resume,
            epochs,
            lr,
            batch_size,
            grad_clip,
            slices,
            max_points,
        } => {
            let o = Overrides {
                slice_count: slices,
                max_points,
                epochs,
                learning_rate: lr,
                batch_size,
                grad_clip,
                ..base_overrides
            };
            let run = config::resolve(config_file, &o, Precision::F32)?;
            init_threads(&run)?;
            let paths = commands::train::Paths {
                manifest: &manifest,
                out_dir: &out,
                cache_flag: cache.as_deref(),
                resume: resume.as_deref(),
            };
            commands::train::run(paths, run, g.json)
        }
        Command::Eval { checkpoint, manifest, split, out } => {
            let run = config::resolve(config_file, &base_overrides, Precision::F32)?;
            init_threads(&run)?;
            commands::eval::run(&checkpoint, &manifest, split.into(), &out, run, g.json)
        }
        Command::Predict { checkpoint, cloud } => {
            let run = config::resolve(config_file, &base_overrides, Precision::F32)?;
            init_threads(&run)?;
            commands::predict::run(&checkpoint, &cloud, run, g.json)
        }
        Command::Sensitivity { checkpoint, cloud, out } => {
            let run = config::resolve(config_file, &base_overrides, Precision::F32)?;
            init_threads(&run)?;
            commands::sensitivity::run(&checkpoint, &cloud, &out, run, g.json)
        }
        Command::Report { train_log, eval_csv, out, bin_width } => {
            let o = Overrides { histogram_bin_width: bin_width, ..base_overrides };
            let run = config::resolve(config_file, &o, Precision::F32)?;
            init_threads(&run)?;
            commands::report::run(&train_log, &eval_csv, &out, run, g.json)
        }
        Command::Gradcheck { slices, max_points } => {
            let o = Overrides { slice_count: slices, max_points, ..base_overrides };
            let mut base = RunConfig { precision: Precision::F64, ..RunConfig::default() };
            base.adopt_model_dims(&ModelConfig::tiny());
            let run = config::resolve_from(base, config_file, &o)?;
            init_threads(&run)?;
            commands::gradcheck::run(run, g.json)
        }
    }
}

/// Sizes the global worker pool once, before any parallel stage runs. A
/// pool that is already initialized (only possible in-process, e.g. tests)
/// is left as is.
fn init_threads(run: &RunConfig) -> cdslice::Result<()> {
    if let Some(n) = run.threads {
        if n == 0 {
            return Err(cdslice::Error::InvalidParameter {
                name: "threads",
                message: "must be at least 1".into(),
            });
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
