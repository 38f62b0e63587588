//! The `hdgcn` command line: graph export, dataset generation and
//! conversion, training, evaluation, ensembling, gradient checks and
//! complexity reports.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or config error, 3
//! numerical failure.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hdgcn::data::Stream;
use hdgcn::topology::ComRole;
use serde::{Deserialize, Serialize};

pub use config::{merge, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "hdgcn", version, about = "Hierarchically decomposed graph convolutions for skeleton action recognition")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(next_help_heading = "Global options")]
pub struct GlobalArgs {
    /// Seed for data generation, initialization and shuffling; overrides config files
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Numeric precision for training and evaluation [default: f32]
    #[arg(long, global = true, value_enum)]
    pub precision: Option<Precision>,
    /// Suppress progress messages on standard error
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Print the resolved configuration as JSON on standard output before running
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build, inspect and export skeleton graphs
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Generate synthetic datasets and convert sequence files
    #[command(subcommand)]
    Data(DataCommand),
    /// Train a model on a dataset manifest
    Train(TrainArgs),
    /// Evaluate one checkpoint on a dataset manifest
    Eval(EvalArgs),
    /// Fuse the scores of several checkpoints
    Ensemble(EnsembleArgs),
    /// Run the finite-difference gradient suites
    Gradcheck(GradcheckArgs),
    /// Report parameter and FLOP counts of a model configuration
    Flops(FlopsArgs),
}

#[derive(Subcommand, Debug)]
pub enum GraphCommand {
    /// Decompose a skeleton and build its adjacency tensor
    Build(GraphBuildArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Conventional,
    Pc,
    Fc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormArg {
    PerSubset,
    Pooled,
}

#[derive(Args, Debug, Serialize)]
pub struct GraphBuildArgs {
    /// Builtin topology (ntu25, kinetics18, kinetics20, micro5) or a JSON file
    #[arg(long, default_value = "ntu25")]
    pub topology: String,
    /// CoM joint role the hierarchy is rooted at: chest, belly or hip
    #[arg(long, default_value = "belly", value_parser = parse_com)]
    pub com: ComRole,
    /// Edge set: conventional, pc (physical edges per layer) or fc (all pairs between adjacent sets)
    #[arg(long, value_enum, default_value = "fc")]
    pub variant: Variant,
    /// Degree normalization: per subset matrix or pooled over the three subsets
    #[arg(long, value_enum, default_value = "per-subset")]
    pub norm: NormArg,
    /// Write the hierarchy sets and layer edges as a DOT graph
    #[arg(long, value_name = "FILE")]
    pub export_dot: Option<PathBuf>,
    /// Write the decomposition sets as JSON
    #[arg(long, value_name = "FILE")]
    pub export_json: Option<PathBuf>,
    /// Write the normalized adjacency tensor [layers, 3, V, V] as an HDT1 checkpoint
    #[arg(long, value_name = "FILE")]
    pub export_adjacency: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum DataCommand {
    /// Write the seeded synthetic action set with train and test manifests
    Generate(GenerateArgs),
    /// Convert a sequence between the JSON and HDS1 formats, optionally deriving a stream
    Convert(ConvertArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// JSON file of generator settings; flags override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Number of classes, 2 to 8
    #[arg(long)]
    pub classes: Option<usize>,
    /// Training samples per class
    #[arg(long)]
    pub train_per_class: Option<usize>,
    /// Test samples per class
    #[arg(long)]
    pub test_per_class: Option<usize>,
    /// Standard deviation of the coordinate noise in metres
    #[arg(long)]
    pub noise: Option<f64>,
    /// Frames per sequence
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct ConvertArgs {
    /// Input sequence (.json or .hds)
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Output sequence; a .json extension selects JSON, anything else HDS1
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Derive this stream from a joint sequence: joint, bone, joint_motion or bone_motion
    #[arg(long, value_parser = parse_stream)]
    pub stream: Option<Stream>,
    /// Topology for bone derivation; defaults to the sequence's own
    #[arg(long)]
    pub topology: Option<String>,
    /// CoM role whose tree orients the bones: chest, belly or hip
    #[arg(long, default_value = "belly", value_parser = parse_com)]
    pub com: ComRole,
}

#[derive(Args, Debug, Default, Serialize)]
pub struct TrainArgs {
    /// JSON run configuration (preset, data, eval, stream, model, train); flags override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Training set manifest
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Evaluation set manifest, scored after every epoch
    #[arg(long, value_name = "FILE")]
    pub eval: Option<PathBuf>,
    /// Run directory for checkpoints, metrics and the resolved config
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Base model: ntu60-joint, ntu120-joint, kinetics-joint (and -bone), toy or micro
    #[arg(long)]
    pub preset: Option<String>,
    /// Input stream: joint, bone, joint_motion or bone_motion
    #[arg(long, value_parser = parse_stream)]
    pub stream: Option<Stream>,
    /// CoM role of the hierarchy and of centering: chest, belly or hip
    #[arg(long, value_parser = parse_com)]
    pub com: Option<ComRole>,
    /// Total epochs of the schedule
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Warmup epochs of the schedule
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    /// Batch size
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate
    #[arg(long)]
    pub lr_max: Option<f64>,
    /// Stop after this many completed epochs; the run can be resumed later
    #[arg(long, value_name = "N")]
    pub stop_after: Option<usize>,
    /// Continue the run in --out from its last checkpoint and stored config
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Checkpoint (.hdt with its .hdt.json config)
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Dataset manifest
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Input stream the checkpoint was trained on: joint, bone, joint_motion or bone_motion
    #[arg(long, default_value = "joint", value_parser = parse_stream)]
    pub stream: Stream,
    /// Batch size
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Write the report JSON here instead of standard output
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Write attention scores as CSV (sample, person, block, layer, channel-mean score)
    #[arg(long, value_name = "FILE")]
    pub dump_attention: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EnsembleArgs {
    /// JSON ensemble spec: members (checkpoint, stream, com) and optional weights; relative paths are resolved against its directory
    #[arg(long, value_name = "FILE")]
    pub spec: PathBuf,
    /// Dataset manifest
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Batch size
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Write the report JSON here instead of standard output
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Write per-class accuracy of the ensemble and each member as CSV
    #[arg(long, value_name = "FILE")]
    pub per_class_csv: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct GradcheckArgs {
    /// Suite to run: ops, hdgc, aha, network or all
    #[arg(long, default_value = "all")]
    pub module: String,
    /// Random instances per check
    #[arg(long, default_value_t = 20)]
    pub instances: u64,
}

#[derive(Args, Debug, Serialize)]
#[group(required = true, multiple = false)]
pub struct FlopsArgs {
    /// Named model configuration, e.g. ntu120-joint
    #[arg(long)]
    pub preset: Option<String>,
    /// Model configuration JSON file (a checkpoint's .hdt.json works)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

fn parse_named<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("`{s}` is not one of the accepted names"))
}

fn parse_com(s: &str) -> Result<ComRole, String> {
    parse_named(s)
}

fn parse_stream(s: &str) -> Result<Stream, String> {
    parse_named(s)
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
