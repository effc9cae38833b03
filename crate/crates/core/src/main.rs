use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use streetloc::cli::{
    cmd_build, cmd_eval, cmd_localize, cmd_prepare, cmd_train, CliError, PipelineConfig,
};
use streetloc::ingest::generate_synthetic_street;

#[derive(Parser)]
#[command(
    name = "streetloc",
    version,
    about = "Metric localization against a geotagged panorama database"
)]
struct Args {
    /// Pipeline configuration (JSON). Defaults apply to anything omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic street dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the rectilinear view store of a dataset.
    Prepare {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both dictionaries on a view store.
    Train {
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the retrieval database (trains first if needed).
    Build {
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize the query frames of a dataset.
    Localize {
        dataset: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also run the full search per frame and record agreement.
        #[arg(long)]
        oracle_full_search: bool,
    },
    /// Score localization records against ground truth.
    Eval {
        records: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

#[derive(Serialize)]
struct LocalizeSummary {
    frames: usize,
    localized: usize,
    mean_comparisons: f64,
    oracle_agreement: Option<f64>,
    records: String,
}

fn run(args: Args) -> Result<(), CliError> {
    let mut config = PipelineConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    match args.command {
        Command::Synth { out } => {
            let ds = generate_synthetic_street(&config.synthetic, config.seed, &out)?;
            println!(
                "wrote {} panoramas and {} query frames to {}",
                ds.panoramas.len(),
                ds.queries.len(),
                out.display()
            );
        }
        Command::Prepare { dataset, out } => print(&cmd_prepare(&dataset, &config, &out)?),
        Command::Train { store, out } => {
            let v = cmd_train(&store, &config, &out)?;
            println!(
                "trained {} local and {} region words",
                v.local.word_count(),
                v.region.word_count()
            );
        }
        Command::Build { store, out } => print(&cmd_build(&store, &config, &out)?),
        Command::Localize {
            dataset,
            store,
            db,
            out,
            oracle_full_search,
        } => {
            let records = cmd_localize(&dataset, &store, &db, &config, oracle_full_search, &out)?;
            let searches: Vec<_> = records.iter().filter_map(|r| r.search.as_ref()).collect();
            let agree: Vec<bool> = searches
                .iter()
                .filter_map(|s| s.oracle_top1_agrees)
                .collect();
            print(&LocalizeSummary {
                frames: records.len(),
                localized: records.iter().filter(|r| r.is_localized()).count(),
                mean_comparisons: searches.iter().map(|s| s.comparisons as f64).sum::<f64>()
                    / searches.len().max(1) as f64,
                oracle_agreement: (!agree.is_empty())
                    .then(|| agree.iter().filter(|&&a| a).count() as f64 / agree.len() as f64),
                records: out.join(streetloc::cli::RECORDS_FILE).display().to_string(),
            });
        }
        Command::Eval {
            records,
            dataset,
            out,
        } => {
            let records = if records.is_dir() {
                records.join(streetloc::cli::RECORDS_FILE)
            } else {
                records
            };
            let mut report = cmd_eval(&records, &dataset, &config, &out)?;
            report.per_frame.clear();
            print(&report);
            println!(
                "per-frame errors in {}",
                Path::new(&out).join("trajectory.csv").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
