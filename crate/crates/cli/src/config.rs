//! Experiment configuration: a flat `key=value` text format whose keys
//! name the `SimConfig` fields one to one.

use std::fmt;
use std::str::FromStr;

use pcmimo_core::channel::Modulation;
use pcmimo_core::construction::SystemConfig;
use pcmimo_core::detect::Detector;
use pcmimo_core::joint::MetricVariant;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {0}: expected key=value")]
    BadLine(usize),
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("bad value {value:?} for {key}")]
    BadValue { key: &'static str, value: String },
    #[error("missing required key {0:?}")]
    MissingKey(&'static str),
    #[error("{0}")]
    Invalid(&'static str),
}

/// How the frozen structure is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstructionMethod {
    /// Polar subcode with dynamic frozen symbols, best-score selection.
    Dfs,
    /// Static frozen set with an appended checksum, checksum selection.
    Crc,
}

impl fmt::Display for ConstructionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dfs => "dfs",
            Self::Crc => "crc",
        })
    }
}

impl FromStr for ConstructionMethod {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "dfs" => Ok(Self::Dfs),
            "crc" => Ok(Self::Crc),
            other => Err(ConfigError::BadValue { key: "construction", value: other.into() }),
        }
    }
}

pub fn parse_detector(s: &str) -> Result<Detector, ConfigError> {
    match s {
        "vblast" => Ok(Detector::VBlast),
        "mmse" => Ok(Detector::Mmse),
        other => Err(ConfigError::BadValue { key: "detector", value: other.into() }),
    }
}

pub fn detector_name(d: Detector) -> &'static str {
    match d {
        Detector::VBlast => "vblast",
        Detector::Mmse => "mmse",
    }
}

pub fn parse_metric(s: &str) -> Result<MetricVariant, ConfigError> {
    match s {
        "exact" => Ok(MetricVariant::Exact),
        "approx" => Ok(MetricVariant::Approximate),
        other => Err(ConfigError::BadValue { key: "metric", value: other.into() }),
    }
}

pub fn metric_name(m: MetricVariant) -> &'static str {
    match m {
        MetricVariant::Exact => "exact",
        MetricVariant::Approximate => "approx",
    }
}

/// One experiment: system geometry, code rate, decoder settings and the
/// sweep's stopping and seeding parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Transmit antennas.
    pub n_t: usize,
    /// Receive antennas.
    pub n_r: usize,
    /// Bits per symbol (1 = BPSK, 2 = QPSK).
    pub m: usize,
    /// Channel uses per frame, so each antenna carries `m * n` coded bits.
    pub n: usize,
    /// Payload bits per frame; exclusive with `dimension_distribution`.
    /// Under the crc construction the inner code additionally carries
    /// `crc_len` check bits, keeping the payload rate comparable with the
    /// dfs construction, whose checks live inside frozen positions.
    pub k: Option<usize>,
    /// Per-antenna payload bits (antenna 1 first); exclusive with `k`.
    pub dimension_distribution: Option<Vec<usize>>,
    pub detector: Detector,
    pub metric: MetricVariant,
    pub list_size: usize,
    pub construction: ConstructionMethod,
    pub n_dfs_a: usize,
    pub n_dfs_b: usize,
    pub crc_poly: u64,
    pub crc_len: usize,
    /// Sweep points in dB.
    pub snr_db: Vec<f64>,
    pub max_frames: u64,
    pub min_frame_errors: u64,
    pub master_seed: u64,
    /// Genie trials behind each reliability profile.
    pub reliability_trials: u64,
}

/// Everything except the experiment geometry and rate has a conventional
/// default; `parse` starts from here.
struct Defaults;

impl Defaults {
    const METRIC: MetricVariant = MetricVariant::Exact;
    const LIST_SIZE: usize = 32;
    const CONSTRUCTION: ConstructionMethod = ConstructionMethod::Dfs;
    const N_DFS_A: usize = 8;
    const N_DFS_B: usize = 24;
    const CRC_POLY: u64 = 0x1021;
    const CRC_LEN: usize = 16;
    const MAX_FRAMES: u64 = 1_000_000;
    const MIN_FRAME_ERRORS: u64 = 100;
    const MASTER_SEED: u64 = 1;
    const RELIABILITY_TRIALS: u64 = 20_000;
}

fn parse_scalar<T: FromStr>(key: &'static str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue { key, value: value.into() })
}

fn parse_list<T: FromStr>(key: &'static str, value: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(|tok| tok.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| ConfigError::BadValue { key, value: value.into() })
}

fn parse_seed(key: &'static str, value: &str) -> Result<u64, ConfigError> {
    let parsed = match value.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => value.parse(),
    };
    parsed.map_err(|_| ConfigError::BadValue { key, value: value.into() })
}

impl SimConfig {
    /// Parses the flat `key=value` format. Lines starting with `#` and
    /// blank lines are ignored; each key may appear at most once.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut n_t = None;
        let mut n_r = None;
        let mut m = None;
        let mut n = None;
        let mut k = None;
        let mut dims = None;
        let mut detector = None;
        let mut metric = Defaults::METRIC;
        let mut list_size = Defaults::LIST_SIZE;
        let mut construction = Defaults::CONSTRUCTION;
        let mut n_dfs_a = Defaults::N_DFS_A;
        let mut n_dfs_b = Defaults::N_DFS_B;
        let mut crc_poly = Defaults::CRC_POLY;
        let mut crc_len = Defaults::CRC_LEN;
        let mut snr_db = None;
        let mut max_frames = Defaults::MAX_FRAMES;
        let mut min_frame_errors = Defaults::MIN_FRAME_ERRORS;
        let mut master_seed = Defaults::MASTER_SEED;
        let mut reliability_trials = Defaults::RELIABILITY_TRIALS;

        let mut seen: Vec<String> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or(ConfigError::BadLine(idx + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|s| s == key) {
                return Err(ConfigError::DuplicateKey(key.into()));
            }
            seen.push(key.into());
            match key {
                "n_t" => n_t = Some(parse_scalar("n_t", value)?),
                "n_r" => n_r = Some(parse_scalar("n_r", value)?),
                "m" => m = Some(parse_scalar("m", value)?),
                "n" => n = Some(parse_scalar("n", value)?),
                "k" => k = Some(parse_scalar("k", value)?),
                "dimension_distribution" => {
                    dims = Some(parse_list("dimension_distribution", value)?)
                }
                "detector" => detector = Some(parse_detector(value)?),
                "metric" => metric = parse_metric(value)?,
                "list_size" => list_size = parse_scalar("list_size", value)?,
                "construction" => construction = value.parse()?,
                "n_dfs_a" => n_dfs_a = parse_scalar("n_dfs_a", value)?,
                "n_dfs_b" => n_dfs_b = parse_scalar("n_dfs_b", value)?,
                "crc_poly" => crc_poly = parse_seed("crc_poly", value)?,
                "crc_len" => crc_len = parse_scalar("crc_len", value)?,
                "snr_db" => snr_db = Some(parse_list("snr_db", value)?),
                "max_frames" => max_frames = parse_scalar("max_frames", value)?,
                "min_frame_errors" => {
                    min_frame_errors = parse_scalar("min_frame_errors", value)?
                }
                "master_seed" => master_seed = parse_seed("master_seed", value)?,
                "reliability_trials" => {
                    reliability_trials = parse_scalar("reliability_trials", value)?
                }
                other => return Err(ConfigError::UnknownKey(other.into())),
            }
        }

        let cfg = Self {
            n_t: n_t.ok_or(ConfigError::MissingKey("n_t"))?,
            n_r: n_r.ok_or(ConfigError::MissingKey("n_r"))?,
            m: m.ok_or(ConfigError::MissingKey("m"))?,
            n: n.ok_or(ConfigError::MissingKey("n"))?,
            k,
            dimension_distribution: dims,
            detector: detector.ok_or(ConfigError::MissingKey("detector"))?,
            metric,
            list_size,
            construction,
            n_dfs_a,
            n_dfs_b,
            crc_poly,
            crc_len,
            snr_db: snr_db.ok_or(ConfigError::MissingKey("snr_db"))?,
            max_frames,
            min_frame_errors,
            master_seed,
            reliability_trials,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serializes back to the `key=value` format (omitting whichever of
    /// `k` / `dimension_distribution` is unset).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut push = |key: &str, value: String| {
            out.push_str(key);
            out.push('=');
            out.push_str(&value);
            out.push('\n');
        };
        push("n_t", self.n_t.to_string());
        push("n_r", self.n_r.to_string());
        push("m", self.m.to_string());
        push("n", self.n.to_string());
        if let Some(k) = self.k {
            push("k", k.to_string());
        }
        if let Some(dims) = &self.dimension_distribution {
            let list: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            push("dimension_distribution", list.join(","));
        }
        push("detector", detector_name(self.detector).into());
        push("metric", metric_name(self.metric).into());
        push("list_size", self.list_size.to_string());
        push("construction", self.construction.to_string());
        push("n_dfs_a", self.n_dfs_a.to_string());
        push("n_dfs_b", self.n_dfs_b.to_string());
        push("crc_poly", format!("0x{:x}", self.crc_poly));
        push("crc_len", self.crc_len.to_string());
        let snr: Vec<String> = self.snr_db.iter().map(|s| s.to_string()).collect();
        push("snr_db", snr.join(","));
        push("max_frames", self.max_frames.to_string());
        push("min_frame_errors", self.min_frame_errors.to_string());
        push("master_seed", self.master_seed.to_string());
        push("reliability_trials", self.reliability_trials.to_string());
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_t == 0 {
            return Err(ConfigError::Invalid("n_t must be at least 1"));
        }
        if self.n_r < self.n_t {
            return Err(ConfigError::Invalid("n_r must be at least n_t"));
        }
        if Modulation::from_bits_per_symbol(self.m).is_none() {
            return Err(ConfigError::Invalid("m must be 1 (BPSK) or 2 (QPSK)"));
        }
        let seg = self.m * self.n;
        if !seg.is_power_of_two() || seg < 2 {
            return Err(ConfigError::Invalid("m*n must be a power of two of at least 2"));
        }
        match (&self.k, &self.dimension_distribution) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(ConfigError::Invalid(
                    "exactly one of k and dimension_distribution must be set",
                ));
            }
            (None, Some(dims)) => {
                if dims.len() != self.n_t {
                    return Err(ConfigError::Invalid(
                        "dimension_distribution needs one entry per transmit antenna",
                    ));
                }
                if dims.iter().any(|&d| d > seg) {
                    return Err(ConfigError::Invalid(
                        "a per-antenna dimension exceeds the codeword length",
                    ));
                }
            }
            (Some(k), None) => {
                if *k == 0 || *k > self.n_t * seg {
                    return Err(ConfigError::Invalid("k must be in 1..=n_t*m*n"));
                }
            }
        }
        if self.list_size == 0 {
            return Err(ConfigError::Invalid("list_size must be at least 1"));
        }
        if self.construction == ConstructionMethod::Crc {
            if self.crc_len == 0 || self.crc_len > 64 {
                return Err(ConfigError::Invalid("crc_len must be in 1..=64"));
            }
            if self.k_total() + self.crc_len > self.n_t * seg {
                return Err(ConfigError::Invalid("k plus crc_len must fit in n_t*m*n"));
            }
        }
        if self.snr_db.is_empty() {
            return Err(ConfigError::Invalid("snr_db must list at least one point"));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(ConfigError::Invalid("snr_db points must be finite"));
        }
        if self.max_frames == 0 {
            return Err(ConfigError::Invalid("max_frames must be at least 1"));
        }
        if self.min_frame_errors == 0 {
            return Err(ConfigError::Invalid("min_frame_errors must be at least 1"));
        }
        if self.reliability_trials == 0 {
            return Err(ConfigError::Invalid("reliability_trials must be at least 1"));
        }
        Ok(())
    }

    /// Coded bits per antenna.
    pub fn seg_len(&self) -> usize {
        self.m * self.n
    }

    /// Total information bits per frame.
    pub fn k_total(&self) -> usize {
        match (&self.k, &self.dimension_distribution) {
            (Some(k), _) => *k,
            (None, Some(dims)) => dims.iter().sum(),
            (None, None) => unreachable!("validate enforces a rate"),
        }
    }

    pub fn modulation(&self) -> Modulation {
        Modulation::from_bits_per_symbol(self.m).expect("validate checked m")
    }

    pub fn system(&self, n0: f64) -> SystemConfig {
        SystemConfig {
            n_t: self.n_t,
            n_r: self.n_r,
            modulation: self.modulation(),
            slots: self.n,
            detector: self.detector,
            n0,
        }
    }

    /// Canonical description of everything the constructed code depends
    /// on, used as the cache key. Sweep-only settings (list size, metric,
    /// stopping rule) are deliberately absent.
    pub fn construction_key(&self, snr_db: f64) -> String {
        let rate = match (&self.k, &self.dimension_distribution) {
            (Some(k), _) => format!("k={k}"),
            (None, Some(dims)) => {
                let list: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
                format!("dims={}", list.join(","))
            }
            (None, None) => unreachable!("validate enforces a rate"),
        };
        format!(
            "n_t={} n_r={} m={} n={} {rate} detector={} construction={} n_dfs_a={} \
             n_dfs_b={} crc=0x{:x}/{} seed={} trials={} snr_mdb={}",
            self.n_t,
            self.n_r,
            self.m,
            self.n,
            detector_name(self.detector),
            self.construction,
            self.n_dfs_a,
            self.n_dfs_b,
            self.crc_poly,
            self.crc_len,
            self.master_seed,
            self.reliability_trials,
            (snr_db * 1000.0).round() as i64,
        )
    }
}
