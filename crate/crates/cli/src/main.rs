//! Command line front end: frame-error sweeps, code construction, and
//! single-frame decoding for polar-coded MIMO links.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pcmimo::config::{parse_detector, parse_metric, ConfigError, ConstructionMethod, SimConfig};
use pcmimo::presets::{builtin_preset, PRESET_NAMES};
use pcmimo::sweep::{build_code, noise_variance, run_point, run_trial, SimResult};
use pcmimo_core::channel::derive_seed;
use pcmimo_core::detect::Detector;
use pcmimo_core::joint::MetricVariant;

#[derive(Parser)]
#[command(name = "pcmimo", version, about = "Polar-coded MIMO link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a frame-error-rate sweep and write it as CSV.
    Simulate(SimulateArgs),
    /// Construct the code of the first SNR point and print its text form.
    Construct(ConstructArgs),
    /// Decode one seeded frame of the first SNR point and print diagnostics.
    DecodeOne(DecodeOneArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Built-in configuration; one of vblast-256, mmse-256, vblast-desk,
    /// mmse-desk.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,

    /// Configuration file in key=value form.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the SNR points (dB, comma separated).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    snr_db: Option<Vec<f64>>,

    /// Override the decoder list size.
    #[arg(long)]
    list_size: Option<usize>,

    /// Override the detector (vblast or mmse).
    #[arg(long, value_parser = parse_detector)]
    detector: Option<Detector>,

    /// Override the path metric (exact or approx).
    #[arg(long, value_parser = parse_metric)]
    metric: Option<MetricVariant>,

    /// Override the construction method (dfs or crc).
    #[arg(long, value_parser = parse_construction)]
    construction: Option<ConstructionMethod>,

    /// Override the frame budget per SNR point.
    #[arg(long)]
    frames: Option<u64>,

    /// Override the frame-error target per SNR point.
    #[arg(long)]
    min_errors: Option<u64>,

    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Directory holding constructed-code cache files.
    #[arg(long, default_value = ".pcmimo-cache")]
    cache_dir: PathBuf,

    /// Construct from scratch and leave the cache untouched.
    #[arg(long)]
    no_cache: bool,
}

fn parse_construction(s: &str) -> Result<ConstructionMethod, ConfigError> {
    s.parse()
}

impl CommonArgs {
    fn resolve(&self) -> Result<SimConfig> {
        let mut cfg = match (&self.preset, &self.config) {
            (Some(name), None) => builtin_preset(name).with_context(|| {
                format!("unknown preset {name:?}; available: {}", PRESET_NAMES.join(", "))
            })?,
            (None, Some(path)) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                SimConfig::parse(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            _ => bail!("exactly one of --preset and --config is required"),
        };
        if let Some(snr) = &self.snr_db {
            cfg.snr_db = snr.clone();
        }
        if let Some(l) = self.list_size {
            cfg.list_size = l;
        }
        if let Some(d) = self.detector {
            cfg.detector = d;
        }
        if let Some(m) = self.metric {
            cfg.metric = m;
        }
        if let Some(c) = self.construction {
            cfg.construction = c;
        }
        if let Some(f) = self.frames {
            cfg.max_frames = f;
        }
        if let Some(e) = self.min_errors {
            cfg.min_frame_errors = e;
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn cache(&self) -> Option<&Path> {
        (!self.no_cache).then_some(self.cache_dir.as_path())
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// CSV output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Run the trial loop on one thread. Results are identical either
    /// way; this only trades speed for a quiet machine.
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct ConstructArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Code spec output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeOneArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Which seeded frame of the first SNR point to decode.
    #[arg(long, default_value_t = 0)]
    trial: u64,
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let mut result = SimResult::default();
    for (snr_index, &snr_db) in cfg.snr_db.iter().enumerate() {
        let built = build_code(&cfg, snr_db, snr_index, args.common.cache())?;
        let point = run_point(&cfg, &built, snr_db, snr_index, !args.serial)?;
        let (lo, hi) = point.ci95();
        eprintln!(
            "snr {snr_db} dB: fer {:.3e} [{:.3e}, {:.3e}] from {} frames, {} errors, {:.1}s",
            point.fer(),
            lo,
            hi,
            point.frames,
            point.frame_errors,
            point.seconds,
        );
        result.points.push(point);
    }
    let csv = result.to_csv();
    match &args.out {
        Some(path) => fs::write(path, &csv)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn construct(args: &ConstructArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let snr_db = cfg.snr_db[0];
    let built = build_code(&cfg, snr_db, 0, args.common.cache())?;
    eprintln!(
        "constructed at {snr_db} dB, dimension distribution {:?}",
        built.spec.dimension_distribution(),
    );
    let text = built.spec.to_text();
    match &args.out {
        Some(path) => fs::write(path, &text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn decode_one(args: &DecodeOneArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let snr_db = cfg.snr_db[0];
    let built = build_code(&cfg, snr_db, 0, args.common.cache())?;
    let seed = derive_seed(cfg.master_seed, 0, args.trial);
    let report = run_trial(&cfg, &built, noise_variance(snr_db), seed)?;
    println!(
        "trial {} at {snr_db} dB: {}",
        args.trial,
        if report.frame_error { "frame error" } else { "ok" },
    );
    println!("bit errors: {}", report.bit_errors);
    println!("selected rank: {}", report.selected_rank);
    if let Some(passed) = report.crc_passed {
        println!("crc passed: {passed}");
    }
    println!("path score: {}", report.score);
    let segments: Vec<String> =
        report.segment_scores.iter().map(|s| format!("{s:.4}")).collect();
    println!("segment penalties: [{}]", segments.join(", "));
    Ok(())
}

fn main() -> Result<()> {
    match &Cli::parse().command {
        Command::Simulate(args) => simulate(args),
        Command::Construct(args) => construct(args),
        Command::DecodeOne(args) => decode_one(args),
    }
}
