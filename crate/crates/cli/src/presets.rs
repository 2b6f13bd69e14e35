//! Canned experiment configurations.
//!
//! The `*-256` presets reproduce the reference setup: four antennas each
//! side, QPSK, 256 coded bits per antenna, list size 32, and per-detector
//! dimension distributions summing to 512 (rate 1/2). The `*-desk` presets
//! shrink the frame to 64 coded bits per antenna at the same rate so a
//! full sweep finishes in minutes on one core; their per-antenna
//! dimensions are left to the rate allocator at construction time.
//!
//! Each preset's default SNR grid brackets its measured waterfall, so a
//! sweep without `--snr-db` lands on the interesting part of the curve;
//! the desk grids cover frame error rates from roughly 1e-1 down to a few
//! 1e-3.

use pcmimo_core::detect::Detector;
use pcmimo_core::joint::MetricVariant;

use crate::config::{ConstructionMethod, SimConfig};

pub const PRESET_NAMES: [&str; 4] = ["vblast-256", "mmse-256", "vblast-desk", "mmse-desk"];

pub fn builtin_preset(name: &str) -> Option<SimConfig> {
    let base = SimConfig {
        n_t: 4,
        n_r: 4,
        m: 2,
        n: 128,
        k: None,
        dimension_distribution: None,
        detector: Detector::VBlast,
        metric: MetricVariant::Exact,
        list_size: 32,
        construction: ConstructionMethod::Dfs,
        n_dfs_a: 8,
        n_dfs_b: 24,
        crc_poly: 0x1021,
        crc_len: 16,
        snr_db: Vec::new(),
        max_frames: 1_000_000,
        min_frame_errors: 100,
        master_seed: 1,
        reliability_trials: 20_000,
    };
    let cfg = match name {
        "vblast-256" => SimConfig {
            dimension_distribution: Some(vec![180, 154, 115, 63]),
            snr_db: vec![-1.0, -0.5, 0.0, 0.5],
            reliability_trials: 50_000,
            ..base
        },
        "mmse-256" => SimConfig {
            dimension_distribution: Some(vec![159, 138, 118, 97]),
            detector: Detector::Mmse,
            snr_db: vec![-2.0, -1.5, -1.0, -0.5],
            reliability_trials: 50_000,
            ..base
        },
        "vblast-desk" => SimConfig {
            n: 32,
            k: Some(128),
            snr_db: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            ..base
        },
        "mmse-desk" => SimConfig {
            n: 32,
            k: Some(128),
            detector: Detector::Mmse,
            snr_db: vec![-2.5, -2.0, -1.5, -1.0, -0.5],
            ..base
        },
        _ => return None,
    };
    Some(cfg)
}
