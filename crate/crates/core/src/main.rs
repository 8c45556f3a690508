use clap::{Args, Parser, Subcommand};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use hemosynth::commands::{
    cmd_eval, cmd_phantom, cmd_score, cmd_segment, cmd_synth, write_json, PhantomOptions,
    ScoreFile,
};
use hemosynth::pipeline::HeatmapProvider;
use hemosynth::stats::{BootstrapParams, ReportParams};
use hemosynth::synthesis::SynthesisConfig;
use hemosynth::volume_io::Manifest;
use hemosynth::{service, Error, Result};

/// Pseudo-hemorrhage synthesis, heatmap scoring, segmentation and
/// diagnostic statistics for fetal brain MRI.
#[derive(Parser)]
#[command(name = "hemosynth", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SourceArg {
    /// Heatmap source: `reference` or `dir:PATH`.
    #[arg(long, default_value = "reference")]
    source: HeatmapProvider,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic phantom cases and their manifest.
    Phantom {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Fraction of cases that receive a lesion.
        #[arg(long, default_value_t = 0.0)]
        with_lesions: f64,
        /// Edge length of the cubic phantom grid.
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
    /// Export a pseudo-hemorrhage training set from normal cases.
    Synth {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// JSON file overriding synthesis parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fail if any slice could not be synthesized.
        #[arg(long)]
        strict: bool,
    },
    /// Case and slice anomaly scores as JSON.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        source: SourceArg,
        #[arg(long)]
        out: PathBuf,
        /// Stop at the first case that fails instead of recording it.
        #[arg(long)]
        strict: bool,
    },
    /// Diagnostic statistics for a scores file.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed for bootstrap resampling.
        #[arg(long)]
        seed: u64,
        /// Second scores file to compare against.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
    },
    /// Segment one case by thresholding its heatmap.
    Segment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        case: String,
        #[arg(long)]
        threshold: f64,
        /// Refine each slice by region growing from its heat maximum.
        #[arg(long)]
        refine: bool,
        #[command(flatten)]
        source: SourceArg,
        /// Output mask (NIfTI).
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the viewer API.
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        source: SourceArg,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn read_config(path: Option<&Path>) -> Result<SynthesisConfig> {
    let Some(path) = path else {
        return Ok(SynthesisConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    serde_json::from_str(&text).map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))
}

/// Ok(false) means the command finished but recorded failures.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Phantom { count, out, seed, with_lesions, size } => {
            let opts = PhantomOptions { count, seed, with_lesions, dims: [size; 3] };
            let manifest = cmd_phantom(&out, &opts)?;
            let lesioned = manifest.cases.iter().filter(|c| c.lesion_mask.is_some()).count();
            println!("wrote {} cases ({lesioned} lesioned) to {}", manifest.cases.len(), out.display());
            Ok(true)
        }
        Command::Synth { manifest, out, seed, config, strict } => {
            let mut config = read_config(config.as_deref())?;
            config.seed = seed;
            let s = cmd_synth(&manifest, &config, &out, strict)?;
            println!("samples: {}", s.samples);
            println!("lesioned: {}", s.lesioned);
            println!("failed slices: {}", s.failures);
            for (i, n) in s.scenario_histogram.iter().enumerate() {
                println!("scenario {}: {n}", i + 1);
            }
            println!("manifest: {}", s.manifest.display());
            Ok(true)
        }
        Command::Score { manifest, source, out, strict } => {
            let manifest = Manifest::load(&manifest)?;
            let file = cmd_score(&manifest, &source.source);
            if strict {
                if let Some(e) = file.errors.first() {
                    return Err(Error::Input(format!("case {}: {}", e.case, e.error)));
                }
            }
            file.save(&out)?;
            Ok(file.errors.is_empty())
        }
        Command::Eval { scores, manifest, out, seed, compare, resamples } => {
            let scores = ScoreFile::load(&scores)?;
            let manifest = Manifest::load(&manifest)?;
            let other = compare.as_deref().map(ScoreFile::load).transpose()?;
            let params = ReportParams {
                bootstrap: BootstrapParams { resamples, seed, ..Default::default() },
                ..Default::default()
            };
            let report = cmd_eval(&scores, &manifest, other.as_ref(), &params)?;
            write_json(&out, &report)?;
            Ok(true)
        }
        Command::Segment { manifest, case, threshold, refine, source, out } => {
            let manifest = Manifest::load(&manifest)?;
            let o = cmd_segment(&manifest, &case, &source.source, threshold, refine, &out)?;
            println!("volume_mm3: {}", o.volume_mm3);
            if let Some(d) = o.mean_slice_dsc {
                println!("mean_slice_dsc: {d:.4}");
            }
            Ok(true)
        }
        Command::Serve { manifest, source, addr } => {
            let manifest = Manifest::load(&manifest)?;
            let index = service::index_cases(&manifest, &source.source)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io { path: "tokio".into(), source: e })?;
            rt.block_on(service::serve(index, addr))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HEMOSYNTH_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool set once");
    }
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
