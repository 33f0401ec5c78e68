//! `wavecomm` command line.
//!
//! Exit codes: 0 success, 1 a pipeline stage failed, 2 bad input or
//! configuration.

pub mod report;
pub mod stages;

use std::fmt;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wavecomm::affinity::{Kernel, Metric};
use wavecomm::dataset::{ColorMode, LoadOptions};
use wavecomm::feature_select::{Bandwidth, ScoreConfig, Threshold};
use wavecomm::pipeline::PipelineConfig;
use wavecomm::spectral::{CountMethod, DetectConfig};
use wavecomm::spectrum::{SpectrumConfig, DEFAULT_ISOLATED_QUANTILE};
use wavecomm::wavelet::BasisName;

pub const EXIT_OK: i32 = 0;
pub const EXIT_STAGE_FAILURE: i32 = 1;
pub const EXIT_INPUT_ERROR: i32 = 2;
pub const THREADS_ENV: &str = "WAVECOMM_THREADS";

/// A pipeline error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: wavecomm::Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        if self.source.is_input_error() {
            EXIT_INPUT_ERROR
        } else {
            EXIT_STAGE_FAILURE
        }
    }

    pub fn hint(&self) -> &'static str {
        use wavecomm::Error::*;
        match &self.source {
            EmptyDataset { .. } => {
                "point the command at a directory of PNG/JPEG/BMP files or an id,path[,label] manifest"
            }
            DecompositionDepth { .. } => "lower --levels or increase --size",
            HeterogeneousDataset { .. } => "decompose every image at the same --size",
            ThresholdTooAggressive { .. } => "raise --keep-top or lower --threshold",
            DegenerateFeature { .. } => "remove blank images or use --metric euclidean",
            DegenerateGeometry(_) => "the selected features do not separate any images; keep more features",
            Convergence { .. } => "the affinity matrix may contain extreme values; check the graph stage output",
            MissingArtifact(_) => "run the earlier stage first (decompose, graph, cluster) or use `detect`",
            VersionMismatch { .. } | CorruptArtifact { .. } => "re-run the stage that produced this file",
            InsufficientClass(_) => "the labels need two classes with at least two labeled images each",
            Config(_) => "check the command-line flags",
            _ => "re-run with -v for details",
        }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T> StageContext<T> for wavecomm::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "wavecomm",
    version,
    about = "Wavelet and spectral-graph community detection for image datasets"
)]
pub struct Cli {
    /// -v for progress, -vv for debugging output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every stage and write a complete run directory.
    Detect(DetectArgs),
    /// Load and decompose images (writes manifest.csv, coeffs.wcm).
    Decompose(DecomposeArgs),
    /// Score and select features, build distances and affinities.
    Graph(GraphArgs),
    /// Estimate the community count and cluster the affinity graph.
    Cluster(ClusterArgs),
    /// Place labeled images on the in-class/out-class spectrum.
    Spectrum(SpectrumArgs),
    /// Render heatmaps, eigenvalue tables and an HTML summary.
    Report(ReportArgs),
    /// Generate a planted-template synthetic dataset.
    Synth(SynthArgs),
    /// Serve a run over HTTP for labeling.
    Serve(ServeArgs),
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let r: usize = r.trim().parse().map_err(|e| format!("rows in {s:?}: {e}"))?;
    let c: usize = c.trim().parse().map_err(|e| format!("cols in {s:?}: {e}"))?;
    if r == 0 || c == 0 {
        return Err(format!("size must be positive, got {s:?}"));
    }
    Ok((r, c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ColorArg {
    Luma,
    Channels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Gaussian,
    /// Reproduces the printed exp(D∘D)/σ formula; not usable for clustering.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Eigengap,
    NearZero,
}

#[derive(Debug, Clone, Args)]
pub struct LoadArgs {
    /// Image directory or CSV manifest (id,path[,label][,sha256]).
    pub dataset: PathBuf,
    /// Common image size as ROWSxCOLS.
    #[arg(long, default_value = "256x256", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, value_enum, default_value_t = ColorArg::Luma)]
    pub color: ColorArg,
}

impl LoadArgs {
    pub fn options(&self) -> LoadOptions {
        LoadOptions {
            target_size: self.size,
            color: match self.color {
                ColorArg::Luma => ColorMode::Luma,
                ColorArg::Channels => ColorMode::Channels,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct WaveletArgs {
    /// db1 (haar) through db5.
    #[arg(long, default_value = "db3")]
    pub basis: BasisName,
    #[arg(long, default_value_t = wavecomm::wavelet::DEFAULT_LEVELS)]
    pub levels: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GraphOpts {
    /// Keep this fraction of features, most important first.
    #[arg(long, default_value_t = 0.2, conflicts_with = "threshold")]
    pub keep_top: f64,
    /// Keep features with importance at or above this value instead.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Neighbours in the feature-scoring graph (default min(5, n-1)).
    #[arg(long)]
    pub score_k: Option<usize>,
    #[arg(long, default_value = "correlation")]
    pub metric: Metric,
    #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
    pub kernel: KernelArg,
    /// Keep only each image's k strongest affinities (symmetrized).
    #[arg(long)]
    pub knn: Option<usize>,
}

impl GraphOpts {
    pub fn threshold(&self) -> Threshold {
        match self.threshold {
            Some(t) => Threshold::Absolute(t),
            None => Threshold::KeepTop(self.keep_top),
        }
    }

    pub fn kernel(&self) -> Kernel {
        match self.kernel {
            KernelArg::Gaussian => Kernel::Gaussian,
            KernelArg::Literal => Kernel::Literal,
        }
    }

    pub fn score(&self) -> ScoreConfig {
        ScoreConfig {
            k_neighbors: self.score_k,
            bandwidth: Bandwidth::Auto,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ClusterOpts {
    /// Largest community count considered (default min(50, n/4)).
    #[arg(long)]
    pub max_k: Option<usize>,
    /// Eigenvalue cutoff for the near-zero count (default 1e-8·max(1, λmax)).
    #[arg(long)]
    pub tau_c: Option<f64>,
    /// Skip estimation and use this many communities.
    #[arg(long)]
    pub n_c: Option<usize>,
    #[arg(long, value_enum, default_value_t = MethodArg::Eigengap)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

impl ClusterOpts {
    pub fn detect_config(&self) -> DetectConfig {
        DetectConfig {
            max_k: self.max_k,
            tau_c: self.tau_c,
            method: match self.method {
                MethodArg::Eigengap => CountMethod::Eigengap,
                MethodArg::NearZero => CountMethod::NearZero,
            },
            n_c_override: self.n_c,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub load: LoadArgs,
    #[command(flatten)]
    pub wavelet: WaveletArgs,
    #[command(flatten)]
    pub graph: GraphOpts,
    #[command(flatten)]
    pub cluster: ClusterOpts,
    /// Run directory to create or overwrite.
    #[arg(long)]
    pub out: PathBuf,
}

impl DetectArgs {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            basis: self.wavelet.basis,
            levels: self.wavelet.levels,
            threshold: self.graph.threshold(),
            score: self.graph.score(),
            metric: self.graph.metric,
            kernel: self.graph.kernel(),
            knn: self.graph.knn,
            detect: self.cluster.detect_config(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub load: LoadArgs,
    #[command(flatten)]
    pub wavelet: WaveletArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GraphArgs {
    /// Run directory produced by `decompose`.
    #[arg(long)]
    pub run: PathBuf,
    #[command(flatten)]
    pub graph: GraphOpts,
}

#[derive(Debug, Clone, Args)]
pub struct ClusterArgs {
    /// Run directory produced by `graph`.
    #[arg(long)]
    pub run: PathBuf,
    #[command(flatten)]
    pub cluster: ClusterOpts,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// CSV with `id` and `label` columns; defaults to the labels in the
    /// run's manifest.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Class placed on the positive side (default: last label in sorted order).
    #[arg(long)]
    pub positive: Option<String>,
    /// In-class similarity quantile below which images count as isolated.
    #[arg(long, default_value_t = DEFAULT_ISOLATED_QUANTILE)]
    pub quantile: f64,
    /// Borderline half-width (default: 10th percentile of |position|).
    #[arg(long)]
    pub band: Option<f64>,
}

impl SpectrumArgs {
    pub fn config(&self) -> SpectrumConfig {
        SpectrumConfig {
            positive_class: self.positive.clone(),
            isolated_quantile: self.quantile,
            borderline_band: self.band,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub templates: usize,
    #[arg(long, default_value_t = 15)]
    pub per_template: usize,
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    /// Noise standard deviation as a fraction of 255.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Two labeled classes sharing one blended image instead of planted templates.
    #[arg(long)]
    pub two_class: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Static bearer token required on every API request.
    #[arg(long, env = "WAVECOMM_TOKEN")]
    pub token: Option<String>,
    /// Allowed CORS origin (default: any).
    #[arg(long)]
    pub cors_origin: Option<String>,
}

fn init_threads() -> Result<(), StageError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| StageError {
        stage: "setup",
        source: wavecomm::Error::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")),
    })?;
    // A second initialisation in the same process (tests) is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Prints to stdout, ignoring a closed pipe (`wavecomm ... | head`).
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

pub fn execute(cli: Cli) -> Result<(), StageError> {
    init_threads()?;
    let text = match cli.command {
        Command::Detect(a) => stages::cmd_detect(&a)?.describe() + "\n",
        Command::Decompose(a) => {
            let n = stages::cmd_decompose(&a)?;
            format!("decomposed {n} images into {}\n", a.out.display())
        }
        Command::Graph(a) => {
            let (kept, total) = stages::cmd_graph(&a)?;
            format!(
                "kept {kept} of {total} features; affinity written to {}\n",
                a.run.display()
            )
        }
        Command::Cluster(a) => stages::cmd_cluster(&a)?.describe() + "\n",
        Command::Spectrum(a) => stages::describe_spectrum(&stages::cmd_spectrum(&a)?),
        Command::Report(a) => format!("report written to {}\n", report::cmd_report(&a.run)?.display()),
        Command::Synth(a) => format!("wrote {}\n", stages::cmd_synth(&a)?.display()),
        Command::Serve(a) => {
            cmd_serve(&a)?;
            String::new()
        }
    };
    emit(&text);
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> Result<(), StageError> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| StageError {
        stage: "serve",
        source: wavecomm::Error::Config(format!("cannot start runtime: {e}")),
    })?;
    let config = wavecomm_service::ServiceConfig {
        token: a.token.clone(),
        cors_origin: a.cors_origin.clone(),
    };
    let addr = SocketAddr::new(a.host, a.port);
    rt.block_on(wavecomm_service::serve(&a.run, addr, config))
        .map_err(|e| StageError {
            stage: "serve",
            source: match e {
                wavecomm_service::ServiceError::Pipeline(p) => p,
                other => wavecomm::Error::Config(other.to_string()),
            },
        })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT_ERROR } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("hint: {}", e.hint());
            e.exit_code()
        }
    }
}
