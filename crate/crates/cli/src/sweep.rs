//! Deterministic Monte-Carlo frame-error sweeps.
//!
//! Every frame trial owns a generator seeded from
//! `(master_seed, snr_index, trial)`, and the stopping rule is evaluated
//! only at fixed batch boundaries, so serial and parallel execution run
//! exactly the same trials and produce identical counts. Constructed codes
//! are cached on disk per (configuration, SNR) since the genie reliability
//! estimation dominates startup time.

use std::fs;
use std::path::Path;
use std::time::Instant;

use pcmimo_core::channel::{derive_seed, transmit, ChannelRealization, TransmitFrame};
use pcmimo_core::construction::{
    allocate_rates, construct_crc, construct_dfs_with_dimensions, estimate_reliability,
    ConstructionError, GlobalCodeSpec,
};
use pcmimo_core::crc::Crc;
use pcmimo_core::joint::{joint_decode, FinalSelection, JointError, MetricConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ConstructionMethod, SimConfig};

/// Trials per scheduling batch; the stopping rule only fires between
/// batches so the trial set is independent of the execution mode.
pub const TRIAL_BATCH: u64 = 128;

/// Substream tag for the constraint-sampling generator, disjoint from the
/// reliability stream and from the small snr-index trial streams.
const CONSTRUCTION_STREAM: u64 = 0x636f_6e73_7472;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Construction(#[from] ConstructionError),
    #[error(transparent)]
    Decode(#[from] JointError),
    #[error("code cache: {0}")]
    Cache(#[from] std::io::Error),
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

/// 95% Wilson score interval for `errors` successes in `trials` draws.
pub fn wilson_interval(errors: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    const Z: f64 = 1.959963984540054;
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Measured counts of one SNR point.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrPoint {
    pub snr_db: f64,
    pub frames: u64,
    pub frame_errors: u64,
    pub bit_errors: u64,
    /// Wall time of the point; informational only.
    pub seconds: f64,
}

impl SnrPoint {
    pub fn fer(&self) -> f64 {
        self.frame_errors as f64 / self.frames as f64
    }

    pub fn ci95(&self) -> (f64, f64) {
        wilson_interval(self.frame_errors, self.frames)
    }

    fn csv_row(&self) -> String {
        let (lo, hi) = self.ci95();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.snr_db,
            self.frames,
            self.frame_errors,
            self.bit_errors,
            self.fer(),
            lo,
            hi,
            self.seconds
        )
    }
}

pub const CSV_HEADER: &str =
    "snr_db,frames,frame_errors,bit_errors,fer,fer_ci95_lo,fer_ci95_hi,seconds";

/// One sweep's results, in the order of the configured SNR points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimResult {
    pub points: Vec<SnrPoint>,
}

impl SimResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for point in &self.points {
            out.push_str(&point.csv_row());
            out.push('\n');
        }
        out
    }

    /// Parses a file produced by [`to_csv`]; the derived columns must
    /// match the raw counts exactly, so a round trip is lossless.
    pub fn from_csv(text: &str) -> Result<Self, SweepError> {
        let bad = |line: usize, reason: &str| SweepError::Csv { line, reason: reason.into() };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header == CSV_HEADER => {}
            _ => return Err(bad(1, "missing header")),
        }
        let mut points = Vec::new();
        for (idx, line) in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(bad(idx + 1, "expected 8 columns"));
            }
            let parse = |f: &str| f.parse().map_err(|_| bad(idx + 1, "bad number"));
            let point = SnrPoint {
                snr_db: fields[0].parse().map_err(|_| bad(idx + 1, "bad snr"))?,
                frames: parse(fields[1])?,
                frame_errors: parse(fields[2])?,
                bit_errors: parse(fields[3])?,
                seconds: fields[7].parse().map_err(|_| bad(idx + 1, "bad seconds"))?,
            };
            if point.csv_row() != line {
                return Err(bad(idx + 1, "derived columns disagree with the counts"));
            }
            points.push(point);
        }
        Ok(Self { points })
    }
}

/// A constructed code ready to simulate: the spec plus the checksum the
/// final selection uses under the crc construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltCode {
    pub spec: GlobalCodeSpec,
    pub crc: Option<Crc>,
}

pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Builds (or loads from `cache_dir`) the code for one SNR point. The
/// reliability profile is estimated at the operating noise level; the
/// constraint generator is derived from the master seed and the point's
/// index, so the whole construction is reproducible.
pub fn build_code(
    cfg: &SimConfig,
    snr_db: f64,
    snr_index: usize,
    cache_dir: Option<&Path>,
) -> Result<BuiltCode, SweepError> {
    let crc = match cfg.construction {
        ConstructionMethod::Crc => Some(Crc::new(cfg.crc_len, cfg.crc_poly, 0)),
        ConstructionMethod::Dfs => None,
    };
    let cache_path = cache_dir.map(|dir| {
        dir.join(format!("{:016x}.code", fnv1a64(cfg.construction_key(snr_db).as_bytes())))
    });
    if let Some(path) = &cache_path {
        if let Ok(text) = fs::read_to_string(path) {
            return Ok(BuiltCode { spec: GlobalCodeSpec::parse(&text)?, crc });
        }
    }

    let sys = cfg.system(noise_variance(snr_db));
    let profile = estimate_reliability(&sys, cfg.reliability_trials, cfg.master_seed)?;
    let spec = match cfg.construction {
        ConstructionMethod::Dfs => {
            let dims = match &cfg.dimension_distribution {
                Some(dims) => dims.clone(),
                None => allocate_rates(&profile, cfg.n_t, cfg.k_total())?,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.master_seed,
                CONSTRUCTION_STREAM,
                snr_index as u64,
            ));
            construct_dfs_with_dimensions(&profile, &dims, cfg.n_dfs_a, cfg.n_dfs_b, &mut rng)?
        }
        // The checksum buys its path discrimination with extra info
        // positions: the inner code carries payload plus check bits, so
        // both constructions deliver the same payload rate.
        ConstructionMethod::Crc => {
            construct_crc(&profile, cfg.n_t, cfg.k_total() + cfg.crc_len, cfg.crc_len)?
        }
    };

    if let Some(path) = &cache_path {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, spec.to_text())?;
    }
    Ok(BuiltCode { spec, crc })
}

/// Everything a single frame trial reports.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub frame_error: bool,
    pub bit_errors: u64,
    pub selected_rank: usize,
    pub crc_passed: Option<bool>,
    pub score: f64,
    pub segment_scores: Vec<f64>,
}

/// Runs one seeded frame: draw info bits, encode, cross the fading
/// channel, decode, compare.
pub fn run_trial(
    cfg: &SimConfig,
    built: &BuiltCode,
    n0: f64,
    seed: u64,
) -> Result<TrialReport, SweepError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = &built.spec;
    let k = spec.dimension();
    let info: Vec<bool> = match &built.crc {
        None => (0..k).map(|_| rng.gen()).collect(),
        Some(crc) => {
            let payload: Vec<bool> = (0..k - crc.width()).map(|_| rng.gen()).collect();
            crc.attach(&payload)
        }
    };
    let coded = spec.encode_frame(&info)?;
    let frame = TransmitFrame::from_codewords(vec![Vec::new(); cfg.n_t], coded, cfg.modulation());
    let chan = ChannelRealization::sample(&mut rng, cfg.n, cfg.n_r, cfg.n_t, n0);
    let received = transmit(&frame, &chan, &mut rng);

    let decode = MetricConfig {
        detector: cfg.detector,
        variant: cfg.metric,
        list_size: cfg.list_size,
        final_selection: match &built.crc {
            Some(crc) => FinalSelection::Crc(*crc),
            None => FinalSelection::BestScore,
        },
    };
    let out = joint_decode(&received, &chan, spec, &decode)?;
    let bit_errors = out.info.iter().zip(&info).filter(|(got, sent)| got != sent).count() as u64;
    Ok(TrialReport {
        frame_error: bit_errors > 0,
        bit_errors,
        selected_rank: out.diagnostics.selected_rank,
        crc_passed: out.diagnostics.crc_passed,
        score: out.score,
        segment_scores: out.diagnostics.segment_scores,
    })
}

/// Simulates one SNR point until `min_frame_errors` or `max_frames`,
/// whichever a batch boundary reaches first.
pub fn run_point(
    cfg: &SimConfig,
    built: &BuiltCode,
    snr_db: f64,
    snr_index: usize,
    parallel: bool,
) -> Result<SnrPoint, SweepError> {
    let n0 = noise_variance(snr_db);
    let start = Instant::now();
    let mut frames = 0u64;
    let mut frame_errors = 0u64;
    let mut bit_errors = 0u64;
    while frames < cfg.max_frames && frame_errors < cfg.min_frame_errors {
        let batch = TRIAL_BATCH.min(cfg.max_frames - frames);
        let trials: Vec<u64> = (frames..frames + batch).collect();
        let trial = |&t: &u64| {
            run_trial(cfg, built, n0, derive_seed(cfg.master_seed, snr_index as u64, t))
        };
        let reports: Vec<TrialReport> = if parallel {
            trials.par_iter().map(trial).collect::<Result<_, _>>()?
        } else {
            trials.iter().map(trial).collect::<Result<_, _>>()?
        };
        for report in reports {
            frame_errors += u64::from(report.frame_error);
            bit_errors += report.bit_errors;
        }
        frames += batch;
    }
    Ok(SnrPoint { snr_db, frames, frame_errors, bit_errors, seconds: start.elapsed().as_secs_f64() })
}

/// Full sweep: per SNR point, construct (or load) the code, then run the
/// trial loop.
pub fn run_sweep(
    cfg: &SimConfig,
    cache_dir: Option<&Path>,
    parallel: bool,
) -> Result<SimResult, SweepError> {
    cfg.validate()?;
    let mut points = Vec::with_capacity(cfg.snr_db.len());
    for (snr_index, &snr_db) in cfg.snr_db.iter().enumerate() {
        let built = build_code(cfg, snr_db, snr_index, cache_dir)?;
        points.push(run_point(cfg, &built, snr_db, snr_index, parallel)?);
    }
    Ok(SimResult { points })
}
