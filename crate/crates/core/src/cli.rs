//! The `bdnn` command-line tool.
//!
//! Exit status is 0 on success, 1 on internal errors and 2 on usage or input
//! errors (bad flags, unreadable or malformed files, invalid parameters).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{self, Model};
use crate::network::{encode, Mode};
use crate::numerics::Standardizer;
use crate::search::{self, euclidean_ground_truth, label_ground_truth, PackedCodes};
use crate::sh::train_sh;
use crate::synth::{generate, SynthSpec};
use crate::uh::train_uh;

#[derive(Debug, Parser)]
#[command(name = "bdnn", version, about = "Train binary hashing networks and evaluate Hamming retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network and write the model file and objective trace.
    Train(TrainArgs),
    /// Encode a dataset into packed binary codes with a trained model.
    Encode(EncodeArgs),
    /// Compute ground-truth neighbors of each query.
    Groundtruth(GroundTruthArgs),
    /// Evaluate Hamming ranking (mAP and precision within a radius).
    Eval(EvalArgs),
    /// Generate a Gaussian-mixture dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Training data (BHDM).
    #[arg(long)]
    data: PathBuf,
    /// Class labels, required for supervised mode.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Objective trace CSV. Defaults to `<out>.trace.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also write the final binary codes of the training samples (BHCB).
    #[arg(long)]
    codes_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GroundTruthArgs {
    /// Database points (BHDM).
    #[arg(long)]
    db: PathBuf,
    /// Query points (BHDM).
    #[arg(long)]
    queries: PathBuf,
    /// Number of Euclidean neighbors per query.
    #[arg(long, default_value_t = 50)]
    k: usize,
    /// Use class labels instead of Euclidean neighbors; needs --query-labels.
    #[arg(long, requires = "query_labels")]
    db_labels: Option<PathBuf>,
    #[arg(long, requires = "db_labels")]
    query_labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    db_codes: PathBuf,
    #[arg(long)]
    query_codes: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Only the first K ranked items count towards mAP.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, default_value_t = 2)]
    radius: u32,
    /// Per-query CSV report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    #[arg(long, default_value_t = 16)]
    dims: usize,
    /// Samples per cluster.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Held-out query samples per cluster.
    #[arg(long, default_value_t = 0)]
    queries: usize,
    /// Minimum distance between cluster means, in units of sigma.
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    labels_out: Option<PathBuf>,
    #[arg(long)]
    query_out: Option<PathBuf>,
    #[arg(long)]
    query_labels_out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Encode(a) => cmd_encode(&a),
        Command::Groundtruth(a) => cmd_groundtruth(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidStart | Error::Contract(_) => 1,
        Error::InvalidArgument(_)
        | Error::Dimension(_)
        | Error::InsufficientSamples { .. }
        | Error::Parameter(_)
        | Error::Format(_)
        | Error::Io(_) => 2,
    }
}

fn with_path<T>(r: Result<T>, path: &Path) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::InvalidArgument(format!("{}: {io}", path.display())),
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn default_trace_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".trace.csv");
    PathBuf::from(s)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = with_path(RunConfig::from_file(&a.config), &a.config)?;
    let labels = match (&a.labels, cfg.mode) {
        (Some(p), Mode::Supervised) => Some(with_path(io::read_labels(p), p)?),
        (None, Mode::Supervised) => {
            return Err(Error::InvalidArgument("supervised training needs --labels".into()))
        }
        (Some(_), Mode::Unsupervised) => {
            return Err(Error::InvalidArgument("--labels is only used in supervised mode".into()))
        }
        (None, Mode::Unsupervised) => None,
    };
    let raw = with_path(io::read_dataset(&a.data), &a.data)?;
    let standardizer = if cfg.standardize {
        Some(Standardizer::fit(&raw)?)
    } else {
        None
    };
    let x = match &standardizer {
        Some(s) => s.apply(&raw)?,
        None => raw,
    };
    let trained = match &labels {
        Some(labels) => train_sh(&x, labels, &cfg.sh_config(x.nrows())?)?,
        None => train_uh(&x, &cfg.uh_config(x.nrows())?)?,
    };
    let model = Model {
        params: trained.params,
        standardizer,
    };
    io::write_model(&a.out, &model)?;
    let header = format!("mode={} seed={} bits={}", cfg.mode.as_str(), cfg.seed, cfg.code_length);
    let trace = a.trace.clone().unwrap_or_else(|| default_trace_path(&a.out));
    io::write_trace(&trace, &header, &trained.history)?;
    if let Some(path) = &a.codes_out {
        io::write_codes(path, &PackedCodes::pack(&trained.codes))?;
    }
    let last = trained.history.last().map_or(f64::NAN, |e| e.objective);
    println!(
        "trained {} model ({header}) on {} samples, final objective {last:e}",
        cfg.mode.as_str(),
        trained.samples.len()
    );
    Ok(())
}

fn cmd_encode(a: &EncodeArgs) -> Result<()> {
    let model = with_path(io::read_model(&a.model), &a.model)?;
    let x = with_path(io::read_dataset(&a.data), &a.data)?;
    let codes = encode(&model.params, &model.prepare(&x)?)?;
    io::write_codes(&a.out, &PackedCodes::pack(&codes))?;
    println!("encoded {} samples into {}-bit codes", codes.samples(), codes.bits());
    Ok(())
}

fn cmd_groundtruth(a: &GroundTruthArgs) -> Result<()> {
    let gt = match (&a.db_labels, &a.query_labels) {
        (Some(dl), Some(ql)) => {
            let db = with_path(io::read_labels(dl), dl)?;
            let q = with_path(io::read_labels(ql), ql)?;
            label_ground_truth(&db, &q)
        }
        _ => {
            let db = with_path(io::read_dataset(&a.db), &a.db)?;
            let q = with_path(io::read_dataset(&a.queries), &a.queries)?;
            euclidean_ground_truth(&db, &q, a.k)?
        }
    };
    io::write_ground_truth(&a.out, &gt)?;
    println!("wrote ground truth for {} queries", gt.queries());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let db = with_path(io::read_codes(&a.db_codes), &a.db_codes)?;
    let q = with_path(io::read_codes(&a.query_codes), &a.query_codes)?;
    let gt = with_path(io::read_ground_truth(&a.gt, db.len()), &a.gt)?;
    let report = search::evaluate(&db, &q, &gt, a.top_k, a.radius)?;
    if let Some(path) = &a.out {
        report.write_csv(std::io::BufWriter::new(fs::File::create(path)?))?;
    }
    println!(
        "bits={} queries={} map={:.6} precision@{}={:.6}",
        report.bits,
        q.len(),
        report.map,
        report.radius,
        report.precision_at_radius
    );
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        clusters: a.clusters,
        dims: a.dims,
        samples_per_cluster: a.samples,
        queries_per_cluster: a.queries,
        separation: a.separation,
        sigma: a.sigma,
        seed: a.seed,
    };
    let data = generate(&spec)?;
    io::write_dataset(&a.out, &data.x)?;
    if let Some(p) = &a.labels_out {
        io::write_labels(p, &data.labels)?;
    }
    if let Some(p) = &a.query_out {
        io::write_dataset(p, &data.queries)?;
    }
    if let Some(p) = &a.query_labels_out {
        io::write_labels(p, &data.query_labels)?;
    }
    println!(
        "seed={} generated {} samples and {} queries in {} dimensions",
        a.seed,
        data.x.ncols(),
        data.queries.ncols(),
        a.dims
    );
    Ok(())
}
