use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use maptag::decoder::TagDictionary;
use maptag::filter::BufferMode;
use maptag::pcd::{save_pcd, PcdEncoding};
use maptag::pipeline::{detect_tags, detect_tags_baseline, PipelineConfig};
use maptag::report::DetectionReport;
use maptag::synth::{evaluate, synth_scene, SceneSpec, SceneTruth};

#[derive(Parser)]
#[command(
    name = "maptag",
    version,
    about = "Fiducial tag localization on LiDAR intensity maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BufferKind {
    Floor,
    Scale,
}

#[derive(clap::Args)]
struct DetectArgs {
    /// Key-value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Point-cloud map (PCD with x y z intensity).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Tag side length in meters, white margin included.
    #[arg(long)]
    tag_size: Option<f64>,
    /// Thickness allowance in meters.
    #[arg(long)]
    thickness: Option<f64>,
    /// Codebook file, or "builtin".
    #[arg(long)]
    dict: Option<String>,
    /// Neighborhood size of the gradient fit.
    #[arg(long)]
    gradient_n: Option<usize>,
    /// Keep points above this quantile of the gradient norm.
    #[arg(long)]
    gradient_quantile: Option<f64>,
    #[arg(long)]
    cluster_tol: Option<f64>,
    #[arg(long)]
    min_cluster: Option<usize>,
    #[arg(long, value_enum)]
    buffer_mode: Option<BufferKind>,
    /// Factor of the buffer mode (default 2 for floor).
    #[arg(long)]
    buffer_factor: Option<f64>,
    /// Report path; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Directory for the downsampled cloud, box manifest and candidate images.
    #[arg(long)]
    debug_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Decode one global projection of the map instead.
    #[arg(long)]
    baseline: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Detect and localize tags in a map.
    Detect(DetectArgs),
    /// Generate a synthetic map and its ground truth.
    Synth {
        /// Scene file; the two-board occlusion scene when absent.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        ascii: bool,
    },
    /// Score a detection report against ground truth.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the builtin dictionary.
    Dictionary {
        #[arg(long)]
        output: PathBuf,
    },
}

fn build_config(a: &DetectArgs) -> Result<PipelineConfig> {
    let mut c = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &a.input {
        c.input = Some(v.clone());
    }
    if let Some(v) = a.tag_size {
        c.tag_size = v;
    }
    if let Some(v) = a.thickness {
        c.thickness = v;
    }
    if let Some(v) = &a.dict {
        c.dictionary = v.clone();
    }
    if let Some(v) = a.gradient_n {
        c.gradient_neighbors = v;
    }
    if let Some(v) = a.gradient_quantile {
        c.gradient_quantile = v;
        c.gradient_tau = None;
    }
    if let Some(v) = a.cluster_tol {
        c.cluster_tolerance = Some(v);
    }
    if let Some(v) = a.min_cluster {
        c.min_cluster = v;
    }
    let factor = a.buffer_factor;
    c.buffer = match (a.buffer_mode, c.buffer) {
        (Some(BufferKind::Floor), _) => BufferMode::Floor {
            factor: factor.unwrap_or(2.0),
        },
        (Some(BufferKind::Scale), _) => BufferMode::Scale {
            factor: factor.unwrap_or(2.0),
        },
        (None, BufferMode::Floor { factor: f }) => BufferMode::Floor {
            factor: factor.unwrap_or(f),
        },
        (None, BufferMode::Scale { factor: f }) => BufferMode::Scale {
            factor: factor.unwrap_or(f),
        },
    };
    if let Some(v) = &a.output {
        c.output = Some(v.clone());
    }
    if let Some(v) = &a.debug_dir {
        c.debug_dir = Some(v.clone());
    }
    if let Some(v) = a.threads {
        c.threads = v;
    }
    if c.input.is_none() {
        bail!("no input map given (--input or `input` in the config)");
    }
    c.validate()?;
    Ok(c)
}

fn write_or_print(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn detect(args: DetectArgs) -> Result<()> {
    let config = build_config(&args)?;
    let cloud = maptag::pcd::load_pcd(config.input.as_ref().expect("checked"))?;
    let report = if args.baseline {
        detect_tags_baseline(&cloud, &config)?
    } else {
        detect_tags(&cloud, &config)?
    };
    write_or_print(config.output.as_ref(), &report.to_json())?;
    eprintln!("{} tag(s) detected", report.tags.len());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Detect(args) => detect(args),
        Command::Synth {
            scene,
            seed,
            output,
            truth,
            ascii,
        } => {
            let spec = match scene {
                Some(p) => SceneSpec::load(&p)?,
                None => SceneSpec::occlusion_scene(),
            };
            let (cloud, t) = synth_scene(&spec, seed)?;
            let encoding = if ascii { PcdEncoding::Ascii } else { PcdEncoding::Binary };
            save_pcd(&cloud, &output, encoding)?;
            std::fs::write(&truth, serde_json::to_string_pretty(&t)? + "\n")
                .with_context(|| format!("writing {}", truth.display()))?;
            eprintln!("{} points, {} tag(s)", cloud.len(), t.tags.len());
            Ok(())
        }
        Command::Evaluate { report, truth, output } => {
            let text = std::fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let report = DetectionReport::from_json(&text).context("parsing report")?;
            let truth = SceneTruth::load(&truth)?;
            let eval = evaluate(&report.detections(), &truth);
            write_or_print(output.as_ref(), &(serde_json::to_string_pretty(&eval)? + "\n"))?;
            eprintln!("{}", eval.count);
            Ok(())
        }
        Command::Dictionary { output } => {
            std::fs::write(&output, TagDictionary::builtin().to_text())
                .with_context(|| format!("writing {}", output.display()))?;
            Ok(())
        }
    }
}
