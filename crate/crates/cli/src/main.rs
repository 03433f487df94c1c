//! `stembed` command-line entry point.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;

use clap::{Args, Parser, Subcommand};
use stembed::analysis::{Axis, GroundTruth};
use stembed::data::{Grouping, Timeslot, WordKind};
use stembed::embed::SoftmaxMode;
use stembed::profiles::{CheckInVectorMode, SlotFilter};
use stembed::stes::Variant;

const FORMAT_VERSION: u32 = 1;

fn fingerprint() -> &'static str {
    static FP: OnceLock<String> = OnceLock::new();
    FP.get_or_init(|| {
        let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
        format!(
            "{} (model format {FORMAT_VERSION}, {profile}, {}-{})",
            env!("CARGO_PKG_VERSION"),
            std::env::consts::ARCH,
            std::env::consts::OS
        )
    })
}

#[derive(Parser)]
#[command(name = "stembed", version = fingerprint(), about = "Spatio-temporal check-in embeddings")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command that reads an app config.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML app config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// IANA time zone for timeslots and months, or `recorded`.
    #[arg(long)]
    pub time_zone: Option<String>,
    #[arg(long)]
    pub checkins: Option<PathBuf>,
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// Drop users and venues with fewer check-ins than this.
    #[arg(long)]
    pub min_posts: Option<usize>,
}

/// Where the trained word vectors live.
#[derive(Args, Debug, Clone)]
pub struct Models {
    #[arg(long)]
    pub feature_model: Option<PathBuf>,
    #[arg(long)]
    pub location_model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Clean a check-in file and optionally export vocabularies.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Writes `feature.vocab` and `location.vocab` here.
        #[arg(long)]
        vocab_dir: Option<PathBuf>,
    },
    /// Train word vectors and save a model file.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "feature")]
        kind: WordKind,
        /// Predict this kind of word instead of `--kind` itself.
        #[arg(long)]
        output_kind: Option<WordKind>,
        /// Feature words: train on themselves, then refine against location words.
        #[arg(long)]
        two_round: bool,
        #[arg(long)]
        softmax: Option<SoftmaxMode>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        window_before: Option<usize>,
        #[arg(long)]
        window_after: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long, default_value = "user")]
        grouping: Grouping,
        /// Needed for neighborhood grouping.
        #[arg(long)]
        polygons: Option<PathBuf>,
        /// Defaults to `<paths.models>/<kind>.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the per-epoch log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Export user, venue or neighborhood profiles.
    Profiles {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: Models,
        #[arg(long, default_value = "user")]
        entity: Entity,
        #[arg(long, default_value = "sum")]
        mode: CheckInVectorMode,
        /// Neighborhood profiles per month.
        #[arg(long)]
        monthly: bool,
        #[arg(long, default_value = "all")]
        filter: SlotFilter,
        #[arg(long)]
        polygons: Option<PathBuf>,
        /// Standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recommend venues for a user in a timeslot.
    Recommend {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: Models,
        #[arg(long, required_unless_present = "queries")]
        user: Option<String>,
        #[arg(long, required_unless_present = "queries")]
        slot: Option<Timeslot>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Batch mode: `user_id <TAB> timeslot` per line.
        #[arg(long, conflicts_with_all = ["user", "slot"])]
        queries: Option<PathBuf>,
        #[arg(long, default_value = "stes")]
        variant: Variant,
    },
    /// Cluster neighborhoods into functional zones.
    Zones {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        polygons: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value = "sum")]
        mode: CheckInVectorMode,
        #[arg(long, default_value = "all")]
        filter: SlotFilter,
        /// Cluster count vectors instead of embeddings (`feature` or `category`).
        #[arg(long)]
        ground_truth: Option<GroundTruth>,
        /// GeoJSON with a `cluster` property per neighborhood.
        #[arg(long)]
        geojson: Option<PathBuf>,
        /// Category share per cluster.
        #[arg(long)]
        composition: Option<PathBuf>,
    },
    /// Predict next-month crime levels per neighborhood.
    Crime {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        polygons: Option<PathBuf>,
        #[arg(long)]
        crimes: Option<PathBuf>,
        /// Predict occurrence of this offense instead of the rate level.
        #[arg(long)]
        offense: Option<String>,
        #[arg(long, default_value = "feature_only")]
        mode: CheckInVectorMode,
        /// Trailing months held out for testing.
        #[arg(long, default_value_t = 2)]
        test_months: usize,
        #[command(flatten)]
        report: ReportOut,
    },
    /// Relate geographic distance to vector similarity.
    Correlate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: Models,
        /// Segment means of the distance-sorted pairs.
        #[arg(long)]
        segments: Option<PathBuf>,
        /// Feature-word heatmap of mean cosine similarity.
        #[arg(long)]
        heatmap: Option<PathBuf>,
        #[arg(long, default_value = "category")]
        axis: Axis,
    },
    /// Generate a synthetic city.
    Generate {
        /// TOML synthetic config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        polygons: Option<PathBuf>,
        #[arg(long)]
        crimes: Option<PathBuf>,
        #[arg(long)]
        hierarchy: Option<PathBuf>,
        /// Planted zone type per neighborhood.
        #[arg(long)]
        zones: Option<PathBuf>,
    },
    /// Run an experiment pipeline on a synthetic city or on supplied data.
    Experiment {
        /// TOML experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pipeline: Option<stembed::synth::Pipeline>,
        /// Use these check-ins instead of a synthetic city.
        #[arg(long)]
        checkins: Option<PathBuf>,
        #[arg(long)]
        polygons: Option<PathBuf>,
        #[arg(long)]
        crimes: Option<PathBuf>,
        #[arg(long)]
        hierarchy: Option<PathBuf>,
        #[arg(long, default_value = "recorded")]
        time_zone: String,
        #[arg(long, default_value = "GEOID")]
        polygon_id_key: String,
        /// Train the transferred feature words on these check-ins.
        #[arg(long)]
        transfer_from: Option<PathBuf>,
        #[command(flatten)]
        report: ReportOut,
    },
}

#[derive(Args, Debug, Clone)]
pub struct ReportOut {
    /// Human-readable report; standard output when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// `key=value` metrics file.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Entity {
    User,
    Venue,
    Neighborhood,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}

/// Output piped into `head` and friends closes early; that is not an error.
fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        let io = c.downcast_ref::<std::io::Error>().or(match c.downcast_ref::<stembed::Error>() {
            Some(stembed::Error::Io(io)) => Some(io),
            _ => None,
        });
        io.is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

/// The error chain on one line, skipping causes a wrapper already printed.
fn one_line(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg.replace('\n', " ")
}
