//! Code construction across the antenna array: reliability estimation,
//! frozen-set selection, the two flavors of dynamically frozen symbols,
//! the checksum-aided baseline, and rate allocation.
//!
//! Two index spaces appear here. The canonical one is *decoding order*:
//! stage `s` of the receiver processes physical antenna `N_t - s` (1-based),
//! and the global index `d = s * seg_len + phase` runs over all
//! `N_t * seg_len` bit subchannels in the order the joint decoder visits
//! them. Reliability profiles, constraint rows and the serialized format
//! all use decoding order. The type-A selection scan instead walks
//! *antenna blocks*: antenna `j` (1-based) owns `[(j-1)*seg_len,
//! j*seg_len)`. [`mirror_block`] converts between the two.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{derive_seed, transmit, ChannelRealization, Modulation, TransmitFrame};
use crate::crc::Crc;
use crate::detect::{
    cancel_in_place, mmse_bit_statistics, mmse_sic_filter, qr_decompose, vblast_bit_statistics,
    vblast_project, Detector,
};
use crate::polar::{polar_transform, sc_genie_mismatches, CodeError, CodeSpec};

#[derive(Debug, Error, PartialEq)]
pub enum ConstructionError {
    #[error("error probability {value} at index {index} is outside [0, 1]")]
    BadProbability { index: usize, value: f64 },
    #[error("at least one Monte-Carlo trial is required")]
    NoTrials,
    #[error("profile length {len} does not split into {n_t} power-of-two antenna blocks")]
    BadProfileShape { len: usize, n_t: usize },
    #[error("{requested} indices requested but only {available} are available")]
    InsufficientCandidates { requested: usize, available: usize },
    #[error("per-antenna dimension {k} does not fit a block of {seg_len} subchannels")]
    DimensionTooLarge { k: usize, seg_len: usize },
    #[error("type-A allocation did not converge after {0} rounds")]
    NonConvergence(usize),
    #[error("checksum needs {crc_len} info positions on the last-decoded antenna, found {available}")]
    CrcDoesNotFit { crc_len: usize, available: usize },
    #[error("invalid system parameters: {0}")]
    BadSystem(&'static str),
    #[error(transparent)]
    Code(#[from] CodeError),
}

/// Per-subchannel first-error frequencies in global decoding order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityProfile {
    error_prob: Vec<f64>,
    trials: u64,
}

impl ReliabilityProfile {
    pub fn new(error_prob: Vec<f64>, trials: u64) -> Result<Self, ConstructionError> {
        if trials == 0 {
            return Err(ConstructionError::NoTrials);
        }
        for (index, &value) in error_prob.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConstructionError::BadProbability { index, value });
            }
        }
        Ok(Self { error_prob, trials })
    }

    pub fn error_prob(&self) -> &[f64] {
        &self.error_prob
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn len(&self) -> usize {
        self.error_prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.error_prob.is_empty()
    }
}

/// Weight of one global index: the popcount of its within-block part.
pub fn index_weight(i: usize, seg_len: usize) -> u32 {
    (i % seg_len).count_ones()
}

/// Precomputed index weights for all `n_t * seg_len` subchannels.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexWeightTable {
    weights: Vec<u32>,
}

impl IndexWeightTable {
    pub fn new(n_t: usize, seg_len: usize) -> Self {
        Self { weights: (0..n_t * seg_len).map(|i| index_weight(i, seg_len)).collect() }
    }

    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> Result<u32, CodeError> {
        self.weights
            .get(i)
            .copied()
            .ok_or(CodeError::IndexOutOfRange { index: i, n: self.weights.len() })
    }
}

/// Converts a global index between decoding order and antenna-block order
/// by mirroring the block: stage `s` holds antenna `N_t - s` (1-based).
/// The map is its own inverse.
pub fn mirror_block(i: usize, n_t: usize, seg_len: usize) -> usize {
    let block = i / seg_len;
    (n_t - 1 - block) * seg_len + i % seg_len
}

/// Selects the type-A dynamic frozen indices from the non-frozen set.
///
/// Indices live in antenna-block order here. The scan starts at the
/// smallest weight present in `nonfrozen` and walks weights upward; within
/// one weight it walks antennas from `N_t` down to 1 and indices downward
/// inside each block, collecting matching non-frozen indices until
/// `n_dfs_a` are gathered. The output keeps the exact scan order.
pub fn set_dfs_a(
    n_t: usize,
    seg_len: usize,
    nonfrozen: &BTreeSet<usize>,
    n_dfs_a: usize,
) -> Result<Vec<usize>, ConstructionError> {
    if n_dfs_a > nonfrozen.len() {
        return Err(ConstructionError::InsufficientCandidates {
            requested: n_dfs_a,
            available: nonfrozen.len(),
        });
    }
    if let Some(&worst) = nonfrozen.iter().next_back() {
        if worst >= n_t * seg_len {
            return Err(CodeError::IndexOutOfRange { index: worst, n: n_t * seg_len }.into());
        }
    }
    let mut out = Vec::with_capacity(n_dfs_a);
    if n_dfs_a == 0 {
        return Ok(out);
    }
    let start_w = nonfrozen.iter().map(|&i| index_weight(i, seg_len)).min().unwrap();
    let max_w = seg_len.trailing_zeros();
    'scan: for w in start_w..=max_w {
        for j in (1..=n_t).rev() {
            for i in ((j - 1) * seg_len..j * seg_len).rev() {
                if index_weight(i, seg_len) == w && nonfrozen.contains(&i) {
                    out.push(i);
                    if out.len() == n_dfs_a {
                        break 'scan;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Result of splitting the frozen set into static and type-B parts.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenSelection {
    /// Statically frozen (all-zero) indices, ascending decoding order.
    pub static_frozen: Vec<usize>,
    /// Type-B dynamic frozen indices, ascending decoding order.
    pub dfs_b: Vec<usize>,
}

impl FrozenSelection {
    /// The full frozen set, ascending.
    pub fn all_frozen(&self) -> Vec<usize> {
        let mut all: Vec<usize> =
            self.static_frozen.iter().chain(&self.dfs_b).copied().collect();
        all.sort_unstable();
        all
    }
}

/// Freezes the least reliable subchannels and marks the most reliable of
/// those as type-B dynamic.
///
/// The frozen set holds the `len - k - n_dfs_a` largest error
/// probabilities; equal probabilities freeze the lower index first. The
/// type-B set holds the `n_dfs_b` frozen indices with the smallest error
/// probability, again breaking ties toward the lower index.
pub fn select_frozen_and_dfs_b(
    profile: &ReliabilityProfile,
    k: usize,
    n_dfs_a: usize,
    n_dfs_b: usize,
) -> Result<FrozenSelection, ConstructionError> {
    let total = profile.len();
    let f_size = total.checked_sub(k + n_dfs_a).ok_or(
        ConstructionError::InsufficientCandidates { requested: k + n_dfs_a, available: total },
    )?;
    if n_dfs_b > f_size {
        return Err(ConstructionError::InsufficientCandidates {
            requested: n_dfs_b,
            available: f_size,
        });
    }
    let prob = profile.error_prob();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| {
        prob[b].partial_cmp(&prob[a]).expect("probabilities are finite").then(a.cmp(&b))
    });
    let mut frozen = order;
    frozen.truncate(f_size);
    let mut by_reliability = frozen.clone();
    by_reliability.sort_by(|&a, &b| {
        prob[a].partial_cmp(&prob[b]).expect("probabilities are finite").then(a.cmp(&b))
    });
    let dfs_b: BTreeSet<usize> = by_reliability[..n_dfs_b].iter().copied().collect();
    let mut static_frozen: Vec<usize> =
        frozen.into_iter().filter(|i| !dfs_b.contains(i)).collect();
    static_frozen.sort_unstable();
    Ok(FrozenSelection { static_frozen, dfs_b: dfs_b.into_iter().collect() })
}

/// Parity rows drawn for the dynamic frozen symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    /// Target index (decoding order) to its sorted source indices.
    pub rows: BTreeMap<usize, Vec<usize>>,
    /// Dynamic targets with no preceding info position; these degrade to
    /// static zeros.
    pub degraded: Vec<usize>,
}

/// Draws one parity row per dynamic frozen index: a uniformly random
/// nonempty subset of the info positions strictly preceding the target in
/// decoding order. Targets are visited in ascending order, so a fixed seed
/// reproduces identical rows.
pub fn build_constraints(
    dfs_a: &[usize],
    dfs_b: &[usize],
    info: &BTreeSet<usize>,
    rng: &mut impl Rng,
) -> ConstraintSet {
    let targets: BTreeSet<usize> = dfs_a.iter().chain(dfs_b).copied().collect();
    let mut rows = BTreeMap::new();
    let mut degraded = Vec::new();
    for &target in &targets {
        let candidates: Vec<usize> = info.range(..target).copied().collect();
        if candidates.is_empty() {
            degraded.push(target);
            continue;
        }
        let sources = loop {
            let picked: Vec<usize> =
                candidates.iter().copied().filter(|_| rng.gen::<bool>()).collect();
            if !picked.is_empty() {
                break picked;
            }
        };
        rows.insert(target, sources);
    }
    ConstraintSet { rows, degraded }
}

/// Frozen structure of the whole antenna array in decoding order.
///
/// Stage `s` (processed `s`-th by the receiver) carries physical antenna
/// `n_t - 1 - s` (0-based) and owns global indices `[s * seg_len,
/// (s+1) * seg_len)`. Constraint sources may reach into earlier stages;
/// each stage's in-block rows live in its [`CodeSpec`] and the cross-stage
/// parts are kept separately for the decoder to resolve against its own
/// history.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalCodeSpec {
    n_t: usize,
    seg_len: usize,
    phases: Vec<GlobalPhase>,
    segments: Vec<CodeSpec>,
    cross: Vec<Vec<(usize, Vec<usize>)>>,
    n_dfs_a: usize,
    n_dfs_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum GlobalPhase {
    Info,
    Frozen(Vec<usize>),
}

impl GlobalCodeSpec {
    /// Builds the array spec from `(global frozen index, sources)` rows.
    pub fn new(
        n_t: usize,
        seg_len: usize,
        frozen: impl IntoIterator<Item = (usize, Vec<usize>)>,
    ) -> Result<Self, ConstructionError> {
        if n_t == 0 {
            return Err(ConstructionError::BadSystem("at least one antenna is required"));
        }
        if !seg_len.is_power_of_two() || seg_len < 2 {
            return Err(CodeError::LengthNotPowerOfTwo(seg_len).into());
        }
        let total = n_t * seg_len;
        let mut phases = vec![GlobalPhase::Info; total];
        for (j, mut sources) in frozen {
            if j >= total {
                return Err(CodeError::IndexOutOfRange { index: j, n: total }.into());
            }
            sources.sort_unstable();
            sources.dedup();
            if let Some(&worst) = sources.last() {
                if worst >= j {
                    return Err(
                        CodeError::SourceNotBeforeTarget { source_index: worst, target: j }.into()
                    );
                }
            }
            phases[j] = GlobalPhase::Frozen(sources);
        }
        let mut segments = Vec::with_capacity(n_t);
        let mut cross = Vec::with_capacity(n_t);
        for s in 0..n_t {
            let base = s * seg_len;
            let mut rows = Vec::new();
            let mut outside_rows = Vec::new();
            for phase in 0..seg_len {
                if let GlobalPhase::Frozen(sources) = &phases[base + phase] {
                    let local: Vec<usize> =
                        sources.iter().filter(|&&z| z >= base).map(|&z| z - base).collect();
                    let outside: Vec<usize> =
                        sources.iter().filter(|&&z| z < base).copied().collect();
                    rows.push((phase, local));
                    if !outside.is_empty() {
                        outside_rows.push((phase, outside));
                    }
                }
            }
            segments.push(CodeSpec::new(seg_len, rows)?);
            cross.push(outside_rows);
        }
        Ok(Self { n_t, seg_len, phases, segments, cross, n_dfs_a: 0, n_dfs_b: 0 })
    }

    /// Annotates the spec with its construction counts.
    pub fn with_dfs_counts(mut self, n_dfs_a: usize, n_dfs_b: usize) -> Self {
        self.n_dfs_a = n_dfs_a;
        self.n_dfs_b = n_dfs_b;
        self
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    /// Bits per antenna codeword.
    pub fn seg_len(&self) -> usize {
        self.seg_len
    }

    pub fn total_len(&self) -> usize {
        self.n_t * self.seg_len
    }

    /// Counts set at construction time; zero on parsed specs (the text
    /// format does not carry them).
    pub fn n_dfs_a(&self) -> usize {
        self.n_dfs_a
    }

    pub fn n_dfs_b(&self) -> usize {
        self.n_dfs_b
    }

    /// Total information symbols.
    pub fn dimension(&self) -> usize {
        self.segments.iter().map(CodeSpec::dimension).sum()
    }

    /// Information symbols per physical antenna, antenna 1 first (the
    /// antenna decoded last).
    pub fn dimension_distribution(&self) -> Vec<usize> {
        (0..self.n_t).rev().map(|s| self.segments[s].dimension()).collect()
    }

    pub fn is_frozen(&self, d: usize) -> bool {
        matches!(self.phases[d], GlobalPhase::Frozen(_))
    }

    /// Constraint sources (global indices) of a frozen position.
    pub fn constraint(&self, d: usize) -> Option<&[usize]> {
        match &self.phases[d] {
            GlobalPhase::Frozen(src) => Some(src),
            GlobalPhase::Info => None,
        }
    }

    /// Global info positions, ascending decoding order.
    pub fn info_positions(&self) -> Vec<usize> {
        (0..self.total_len()).filter(|&d| !self.is_frozen(d)).collect()
    }

    /// The per-stage code with in-block constraint parts only.
    pub fn segment(&self, stage: usize) -> &CodeSpec {
        &self.segments[stage]
    }

    /// Cross-stage constraint parts of one stage: `(local phase, global
    /// sources in earlier stages)`.
    pub fn cross_sources(&self, stage: usize) -> &[(usize, Vec<usize>)] {
        &self.cross[stage]
    }

    /// Fills the global symbol vector in decoding order: info bits
    /// ascending, frozen symbols from their constraints.
    pub fn assemble_symbols(&self, info: &[bool]) -> Result<Vec<bool>, ConstructionError> {
        let k = self.dimension();
        if info.len() != k {
            return Err(CodeError::DimensionMismatch { expected: k, got: info.len() }.into());
        }
        let mut u = vec![false; self.total_len()];
        let mut next = 0;
        for d in 0..self.total_len() {
            match &self.phases[d] {
                GlobalPhase::Info => {
                    u[d] = info[next];
                    next += 1;
                }
                GlobalPhase::Frozen(sources) => {
                    u[d] = sources.iter().fold(false, |acc, &z| acc ^ u[z]);
                }
            }
        }
        Ok(u)
    }

    /// Encodes a frame: info bits in decoding order in, per-antenna
    /// codewords out, indexed by physical antenna (0-based).
    pub fn encode_frame(&self, info: &[bool]) -> Result<Vec<Vec<bool>>, ConstructionError> {
        let u = self.assemble_symbols(info)?;
        let mut coded = vec![Vec::new(); self.n_t];
        for s in 0..self.n_t {
            let seg = &u[s * self.seg_len..(s + 1) * self.seg_len];
            coded[self.n_t - 1 - s] = polar_transform(seg)?;
        }
        Ok(coded)
    }

    /// Reads the info bits back out of a global symbol vector.
    pub fn extract_info(&self, u: &[bool]) -> Vec<bool> {
        (0..self.total_len()).filter(|&d| !self.is_frozen(d)).map(|d| u[d]).collect()
    }

    /// Serializes to the code-spec text format with an `antennas` header
    /// and global decoding-order indices.
    pub fn to_text(&self) -> String {
        let mut out = format!("antennas {}\nn {}\n", self.n_t, self.total_len());
        for d in 0..self.total_len() {
            if let GlobalPhase::Frozen(sources) = &self.phases[d] {
                if sources.is_empty() {
                    out.push_str(&format!("frozen {d}\n"));
                } else {
                    let list: Vec<String> = sources.iter().map(usize::to_string).collect();
                    out.push_str(&format!("frozen {d} = {}\n", list.join(" ")));
                }
            }
        }
        out
    }

    /// Parses the text format. Construction counts are not part of the
    /// format and come back as zero.
    pub fn parse(text: &str) -> Result<Self, ConstructionError> {
        let mut n_t = None;
        let mut total = None;
        let mut rows: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let mut words = content.split_whitespace();
            let parse_err = |msg: &str| CodeError::Parse { line, msg: msg.to_string() };
            match words.next() {
                Some("antennas") if n_t.is_none() && total.is_none() => {
                    let value: usize = words
                        .next()
                        .ok_or_else(|| parse_err("missing antenna count"))?
                        .parse()
                        .map_err(|_| parse_err("bad antenna count"))?;
                    if words.next().is_some() {
                        return Err(parse_err("trailing tokens after antenna count").into());
                    }
                    n_t = Some(value);
                }
                Some("n") if n_t.is_some() && total.is_none() => {
                    let value: usize = words
                        .next()
                        .ok_or_else(|| parse_err("missing length"))?
                        .parse()
                        .map_err(|_| parse_err("bad length"))?;
                    if words.next().is_some() {
                        return Err(parse_err("trailing tokens after length").into());
                    }
                    total = Some(value);
                }
                Some("frozen") if total.is_some() => {
                    let target: usize = words
                        .next()
                        .ok_or_else(|| parse_err("missing frozen index"))?
                        .parse()
                        .map_err(|_| parse_err("bad frozen index"))?;
                    let rest: Vec<&str> = words.collect();
                    let sources = match rest.split_first() {
                        None => Vec::new(),
                        Some((&"=", tail)) => tail
                            .iter()
                            .map(|w| w.parse().map_err(|_| parse_err("bad source index")))
                            .collect::<Result<Vec<usize>, _>>()?,
                        Some(_) => return Err(parse_err("expected '=' before sources").into()),
                    };
                    rows.insert(target, sources);
                }
                _ => return Err(parse_err("unrecognized line").into()),
            }
        }
        let n_t = n_t.ok_or(CodeError::Parse { line: 0, msg: "missing antennas header".into() })?;
        let total = total.ok_or(CodeError::Parse { line: 0, msg: "missing length line".into() })?;
        if n_t == 0 || total % n_t != 0 {
            return Err(ConstructionError::BadProfileShape { len: total, n_t });
        }
        Self::new(n_t, total / n_t, rows)
    }
}

/// Physical link parameters shared by construction and simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub modulation: Modulation,
    /// Channel uses per frame.
    pub slots: usize,
    pub detector: Detector,
    /// Noise variance per receive component pair.
    pub n0: f64,
}

impl SystemConfig {
    /// Bits per antenna codeword.
    pub fn seg_len(&self) -> usize {
        self.modulation.bits_per_symbol() * self.slots
    }

    pub fn total_len(&self) -> usize {
        self.n_t * self.seg_len()
    }

    pub fn validate(&self) -> Result<(), ConstructionError> {
        if self.n_t == 0 {
            return Err(ConstructionError::BadSystem("at least one transmit antenna is required"));
        }
        if self.n_r < self.n_t {
            return Err(ConstructionError::BadSystem(
                "receive antennas must be at least the transmit antennas",
            ));
        }
        let seg = self.seg_len();
        if !seg.is_power_of_two() || seg < 2 {
            return Err(ConstructionError::BadSystem(
                "bits per codeword must be a power of two of at least 2",
            ));
        }
        if !(self.n0 > 0.0) || !self.n0.is_finite() {
            return Err(ConstructionError::BadSystem("noise variance must be positive and finite"));
        }
        Ok(())
    }
}

/// Substream tag separating reliability trials from simulation trials that
/// share a master seed.
const RELIABILITY_STREAM: u64 = 0x7265_6c69_6162;

/// Estimates per-subchannel error probabilities by genie-aided successive
/// cancellation: random frames cross the fading channel, the detector chain
/// runs with every cancellation fed the true symbols, and each subchannel
/// counts how often its decision statistic contradicts the true value given
/// a correct past. Trials parallelize over a deterministic per-trial seed,
/// so the profile does not depend on the thread count.
pub fn estimate_reliability(
    sys: &SystemConfig,
    trials: u64,
    master_seed: u64,
) -> Result<ReliabilityProfile, ConstructionError> {
    sys.validate()?;
    if trials == 0 {
        return Err(ConstructionError::NoTrials);
    }
    let total = sys.total_len();
    let counts = (0..trials)
        .into_par_iter()
        .fold(
            || vec![0u64; total],
            |mut acc, trial| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(master_seed, RELIABILITY_STREAM, trial));
                genie_trial(sys, &mut rng, &mut acc);
                acc
            },
        )
        .reduce(
            || vec![0u64; total],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    ReliabilityProfile::new(
        counts.into_iter().map(|c| c as f64 / trials as f64).collect(),
        trials,
    )
}

/// One genie-aided frame; bumps `counts` at every erring subchannel.
fn genie_trial(sys: &SystemConfig, rng: &mut ChaCha8Rng, counts: &mut [u64]) {
    let seg_len = sys.seg_len();
    let m = sys.modulation.bits_per_symbol();
    // Transform-domain symbols drawn uniformly; the frozen structure plays
    // no role when every decision is forced correct.
    let u_phys: Vec<Vec<bool>> =
        (0..sys.n_t).map(|_| (0..seg_len).map(|_| rng.gen()).collect()).collect();
    let coded: Vec<Vec<bool>> = u_phys
        .iter()
        .map(|u| polar_transform(u).expect("segment length is a power of two"))
        .collect();
    let frame =
        TransmitFrame::from_codewords(vec![Vec::new(); sys.n_t], coded, sys.modulation);
    let chan = ChannelRealization::<f64>::sample(rng, sys.slots, sys.n_r, sys.n_t, sys.n0);
    let received = transmit(&frame, &chan, rng);

    match sys.detector {
        Detector::VBlast => {
            let qrs: Vec<_> = chan.matrices.iter().map(qr_decompose).collect();
            let mut residuals: Vec<Vec<_>> =
                (0..sys.slots).map(|i| vblast_project(&qrs[i], &received[i])).collect();
            for s in 0..sys.n_t {
                let a = sys.n_t - 1 - s;
                let mut stats = Vec::with_capacity(seg_len);
                for i in 0..sys.slots {
                    let pair = vblast_bit_statistics(&qrs[i], &residuals[i], a);
                    stats.extend_from_slice(&pair[..m]);
                }
                let flags =
                    sc_genie_mismatches(&stats, &u_phys[a]).expect("statistic lengths agree");
                for (phase, &erred) in flags.iter().enumerate() {
                    counts[s * seg_len + phase] += erred as u64;
                }
                for i in 0..sys.slots {
                    let col = qrs[i].r.col(a);
                    cancel_in_place(&mut residuals[i], &col, frame.symbols[a][i]);
                }
            }
        }
        Detector::Mmse => {
            let filters: Vec<_> = chan
                .matrices
                .iter()
                .map(|h| {
                    mmse_sic_filter(h, chan.snr_linear())
                        .expect("regularized Gram is positive definite")
                })
                .collect();
            let mut residuals = received;
            for s in 0..sys.n_t {
                let a = sys.n_t - 1 - s;
                let mut stats = Vec::with_capacity(seg_len);
                for i in 0..sys.slots {
                    let pair = mmse_bit_statistics(&filters[i], &residuals[i], a);
                    stats.extend_from_slice(&pair[..m]);
                }
                let flags =
                    sc_genie_mismatches(&stats, &u_phys[a]).expect("statistic lengths agree");
                for (phase, &erred) in flags.iter().enumerate() {
                    counts[s * seg_len + phase] += erred as u64;
                }
                for i in 0..sys.slots {
                    let col = chan.matrices[i].col(a);
                    cancel_in_place(&mut residuals[i], &col, frame.symbols[a][i]);
                }
            }
        }
    }
}

/// Appends a `crc_len`-bit checksum (zero initial register) to the payload.
pub fn attach_crc(payload: &[bool], poly: u64, crc_len: usize) -> Vec<bool> {
    Crc::new(crc_len, poly, 0).attach(payload)
}

/// Greedy rate allocation: counts how many of the `k_total` globally most
/// reliable subchannels fall in each antenna's block. Returned in physical
/// antenna order, antenna 1 (decoded last) first.
pub fn allocate_rates(
    profile: &ReliabilityProfile,
    n_t: usize,
    k_total: usize,
) -> Result<Vec<usize>, ConstructionError> {
    let total = profile.len();
    if n_t == 0 || total % n_t != 0 {
        return Err(ConstructionError::BadProfileShape { len: total, n_t });
    }
    if k_total > total {
        return Err(ConstructionError::InsufficientCandidates {
            requested: k_total,
            available: total,
        });
    }
    let seg_len = total / n_t;
    let prob = profile.error_prob();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| {
        prob[a].partial_cmp(&prob[b]).expect("probabilities are finite").then(a.cmp(&b))
    });
    let mut per_stage = vec![0usize; n_t];
    for &d in &order[..k_total] {
        per_stage[d / seg_len] += 1;
    }
    per_stage.reverse();
    Ok(per_stage)
}

fn spec_from_parts(
    n_t: usize,
    seg_len: usize,
    static_frozen: &[usize],
    dfs_a: &[usize],
    dfs_b: &[usize],
    info: &BTreeSet<usize>,
    rng: &mut impl Rng,
) -> Result<GlobalCodeSpec, ConstructionError> {
    let constraints = build_constraints(dfs_a, dfs_b, info, rng);
    let mut rows: Vec<(usize, Vec<usize>)> =
        static_frozen.iter().map(|&j| (j, Vec::new())).collect();
    rows.extend(constraints.degraded.iter().map(|&j| (j, Vec::new())));
    rows.extend(constraints.rows.into_iter());
    Ok(GlobalCodeSpec::new(n_t, seg_len, rows)?.with_dfs_counts(dfs_a.len(), dfs_b.len()))
}

/// Builds a code with dynamically frozen symbols, choosing the frozen set
/// globally: the `len - k - n_dfs_a` least reliable subchannels freeze,
/// type-A symbols come from the weight scan over the remainder, and type-B
/// symbols revive the most reliable frozen positions.
pub fn construct_dfs(
    profile: &ReliabilityProfile,
    n_t: usize,
    k: usize,
    n_dfs_a: usize,
    n_dfs_b: usize,
    rng: &mut impl Rng,
) -> Result<GlobalCodeSpec, ConstructionError> {
    let total = profile.len();
    if n_t == 0 || total % n_t != 0 || !(total / n_t).is_power_of_two() || total / n_t < 2 {
        return Err(ConstructionError::BadProfileShape { len: total, n_t });
    }
    let seg_len = total / n_t;
    let selection = select_frozen_and_dfs_b(profile, k, n_dfs_a, n_dfs_b)?;
    let frozen: BTreeSet<usize> = selection.all_frozen().into_iter().collect();
    let nonfrozen_blocks: BTreeSet<usize> = (0..total)
        .filter(|d| !frozen.contains(d))
        .map(|d| mirror_block(d, n_t, seg_len))
        .collect();
    let dfs_a: Vec<usize> = set_dfs_a(n_t, seg_len, &nonfrozen_blocks, n_dfs_a)?
        .into_iter()
        .map(|b| mirror_block(b, n_t, seg_len))
        .collect();
    let dfs_a_set: BTreeSet<usize> = dfs_a.iter().copied().collect();
    let info: BTreeSet<usize> =
        (0..total).filter(|d| !frozen.contains(d) && !dfs_a_set.contains(d)).collect();
    spec_from_parts(n_t, seg_len, &selection.static_frozen, &dfs_a, &selection.dfs_b, &info, rng)
}

const DFS_A_ROUNDS: usize = 16;

/// Builds a code with dynamically frozen symbols under a pinned per-antenna
/// dimension distribution (`dims`, physical order, antenna 1 first).
///
/// Each antenna freezes its own least reliable subchannels, but how many
/// depends on how many type-A symbols the global weight scan lands in that
/// block, which in turn depends on the frozen sets. The per-block type-A
/// counts are iterated to a fixed point; the scan is monotone enough in
/// practice that a handful of rounds settle it.
pub fn construct_dfs_with_dimensions(
    profile: &ReliabilityProfile,
    dims: &[usize],
    n_dfs_a: usize,
    n_dfs_b: usize,
    rng: &mut impl Rng,
) -> Result<GlobalCodeSpec, ConstructionError> {
    let n_t = dims.len();
    let total = profile.len();
    if n_t == 0 || total % n_t != 0 || !(total / n_t).is_power_of_two() || total / n_t < 2 {
        return Err(ConstructionError::BadProfileShape { len: total, n_t });
    }
    let seg_len = total / n_t;
    let k_stage: Vec<usize> = dims.iter().rev().copied().collect();
    for &k in &k_stage {
        if k > seg_len {
            return Err(ConstructionError::DimensionTooLarge { k, seg_len });
        }
    }
    let k: usize = dims.iter().sum();
    if k + n_dfs_a > total {
        return Err(ConstructionError::InsufficientCandidates {
            requested: k + n_dfs_a,
            available: total,
        });
    }
    let prob = profile.error_prob();

    let mut a_counts = vec![0usize; n_t];
    for round in 0..DFS_A_ROUNDS {
        // Freeze each block's least reliable subchannels given the current
        // type-A budget.
        let mut frozen: BTreeSet<usize> = BTreeSet::new();
        for s in 0..n_t {
            let need = k_stage[s] + a_counts[s];
            if need > seg_len {
                return Err(ConstructionError::DimensionTooLarge { k: need, seg_len });
            }
            let base = s * seg_len;
            let mut block: Vec<usize> = (base..base + seg_len).collect();
            block.sort_by(|&a, &b| {
                prob[b].partial_cmp(&prob[a]).expect("probabilities are finite").then(a.cmp(&b))
            });
            frozen.extend(block.into_iter().take(seg_len - need));
        }
        let nonfrozen_blocks: BTreeSet<usize> = (0..total)
            .filter(|d| !frozen.contains(d))
            .map(|d| mirror_block(d, n_t, seg_len))
            .collect();
        let dfs_a: Vec<usize> = set_dfs_a(n_t, seg_len, &nonfrozen_blocks, n_dfs_a)?
            .into_iter()
            .map(|b| mirror_block(b, n_t, seg_len))
            .collect();
        let mut new_counts = vec![0usize; n_t];
        for &d in &dfs_a {
            new_counts[d / seg_len] += 1;
        }
        if new_counts == a_counts {
            // Converged: assemble the final selection from this frozen set.
            let dfs_a_set: BTreeSet<usize> = dfs_a.iter().copied().collect();
            let mut by_reliability: Vec<usize> = frozen.iter().copied().collect();
            by_reliability.sort_by(|&a, &b| {
                prob[a].partial_cmp(&prob[b]).expect("probabilities are finite").then(a.cmp(&b))
            });
            if n_dfs_b > by_reliability.len() {
                return Err(ConstructionError::InsufficientCandidates {
                    requested: n_dfs_b,
                    available: by_reliability.len(),
                });
            }
            let dfs_b: Vec<usize> = {
                let mut picked: Vec<usize> = by_reliability[..n_dfs_b].to_vec();
                picked.sort_unstable();
                picked
            };
            let dfs_b_set: BTreeSet<usize> = dfs_b.iter().copied().collect();
            let static_frozen: Vec<usize> =
                frozen.iter().copied().filter(|d| !dfs_b_set.contains(d)).collect();
            let info: BTreeSet<usize> = (0..total)
                .filter(|d| !frozen.contains(d) && !dfs_a_set.contains(d))
                .collect();
            let spec = spec_from_parts(n_t, seg_len, &static_frozen, &dfs_a, &dfs_b, &info, rng)?;
            debug_assert_eq!(spec.dimension_distribution(), dims, "round {round}");
            return Ok(spec);
        }
        a_counts = new_counts;
    }
    Err(ConstructionError::NonConvergence(DFS_A_ROUNDS))
}

/// Builds the all-static baseline: the `len - k` least reliable subchannels
/// freeze to zero and nothing is dynamic.
pub fn construct_static(
    profile: &ReliabilityProfile,
    n_t: usize,
    k: usize,
) -> Result<GlobalCodeSpec, ConstructionError> {
    let total = profile.len();
    if n_t == 0 || total % n_t != 0 || !(total / n_t).is_power_of_two() || total / n_t < 2 {
        return Err(ConstructionError::BadProfileShape { len: total, n_t });
    }
    let selection = select_frozen_and_dfs_b(profile, k, 0, 0)?;
    let rows: Vec<(usize, Vec<usize>)> =
        selection.static_frozen.iter().map(|&j| (j, Vec::new())).collect();
    GlobalCodeSpec::new(n_t, total / n_t, rows)
}

/// Builds the checksum-aided baseline: an all-static code whose last
/// `crc_len` info positions (the checksum carriers) must sit on the
/// last-decoded antenna so the check happens after the final segment.
pub fn construct_crc(
    profile: &ReliabilityProfile,
    n_t: usize,
    k: usize,
    crc_len: usize,
) -> Result<GlobalCodeSpec, ConstructionError> {
    if crc_len >= k {
        return Err(ConstructionError::CrcDoesNotFit { crc_len, available: k });
    }
    let spec = construct_static(profile, n_t, k)?;
    let last_stage_info = spec.segment(n_t - 1).dimension();
    if last_stage_info < crc_len {
        return Err(ConstructionError::CrcDoesNotFit { crc_len, available: last_stage_info });
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;

    fn profile_of(values: &[f64]) -> ReliabilityProfile {
        ReliabilityProfile::new(values.to_vec(), 1000).unwrap()
    }

    #[test]
    fn index_weight_examples() {
        assert_eq!(index_weight(5, 4), 1);
        assert_eq!(index_weight(0, 4), 0);
        assert_eq!(index_weight(7, 8), 3);
    }

    #[test]
    fn weight_table_repeats_per_block() {
        let table = IndexWeightTable::new(3, 8);
        for k in 0..16 {
            assert_eq!(table.weight(k).unwrap(), table.weight(k + 8).unwrap());
        }
        assert!(matches!(table.weight(24), Err(CodeError::IndexOutOfRange { index: 24, n: 24 })));
    }

    #[test]
    fn mirror_block_is_an_involution() {
        assert_eq!(mirror_block(1, 3, 4), 9);
        assert_eq!(mirror_block(9, 3, 4), 1);
        for i in 0..12 {
            assert_eq!(mirror_block(mirror_block(i, 3, 4), 3, 4), i);
        }
    }

    #[test]
    fn type_a_scan_matches_worked_example() {
        let nonfrozen: BTreeSet<usize> = [3, 5, 6, 7].into_iter().collect();
        assert_eq!(set_dfs_a(2, 4, &nonfrozen, 2).unwrap(), vec![6, 5]);
        assert_eq!(set_dfs_a(2, 4, &nonfrozen, 0).unwrap(), Vec::<usize>::new());
        let single: BTreeSet<usize> = [3].into_iter().collect();
        assert_eq!(set_dfs_a(2, 4, &single, 1).unwrap(), vec![3]);
        assert_eq!(
            set_dfs_a(2, 4, &single, 2),
            Err(ConstructionError::InsufficientCandidates { requested: 2, available: 1 })
        );
    }

    #[test]
    fn type_a_scan_order_is_weight_then_antenna_then_index() {
        // Weights over blocks of 4: 0 and 4 weigh 0; 1, 2, 5, 6 weigh 1.
        let nonfrozen: BTreeSet<usize> = [0, 1, 2, 4, 5, 6].into_iter().collect();
        assert_eq!(set_dfs_a(2, 4, &nonfrozen, 4).unwrap(), vec![4, 0, 6, 5]);
    }

    #[test]
    fn type_a_scan_ignores_input_order() {
        let mut items = vec![3usize, 5, 6, 7, 1, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let reference: Vec<usize> =
            set_dfs_a(2, 4, &items.iter().copied().collect(), 3).unwrap();
        for _ in 0..5 {
            items.shuffle(&mut rng);
            let set: BTreeSet<usize> = items.iter().copied().collect();
            assert_eq!(set_dfs_a(2, 4, &set, 3).unwrap(), reference);
        }
        // Output is a duplicate-free subset of the input.
        let set: BTreeSet<usize> = items.iter().copied().collect();
        let out = set_dfs_a(2, 4, &set, 5).unwrap();
        let unique: BTreeSet<usize> = out.iter().copied().collect();
        assert_eq!(unique.len(), out.len());
        assert!(unique.is_subset(&set));
    }

    #[test]
    fn frozen_selection_matches_worked_example() {
        let profile = profile_of(&[0.9, 0.5, 0.1, 0.01]);
        let sel = select_frozen_and_dfs_b(&profile, 2, 0, 1).unwrap();
        assert_eq!(sel.all_frozen(), vec![0, 1]);
        assert_eq!(sel.dfs_b, vec![1]);
        assert_eq!(sel.static_frozen, vec![0]);
    }

    #[test]
    fn frozen_selection_partitions_and_breaks_ties_low() {
        // All equal: the lowest indices freeze.
        let profile = profile_of(&[0.3; 8]);
        let sel = select_frozen_and_dfs_b(&profile, 4, 1, 2).unwrap();
        assert_eq!(sel.all_frozen(), vec![0, 1, 2]);
        assert_eq!(sel.dfs_b, vec![0, 1]);
        assert_eq!(sel.static_frozen, vec![2]);
        assert_eq!(
            select_frozen_and_dfs_b(&profile, 8, 1, 0),
            Err(ConstructionError::InsufficientCandidates { requested: 9, available: 8 })
        );
    }

    #[test]
    fn constraints_are_causal_and_reproducible() {
        let info: BTreeSet<usize> = [1, 3, 7].into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = build_constraints(&[5], &[6], &info, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = build_constraints(&[5], &[6], &info, &mut rng);
        assert_eq!(a, b);
        for (&target, sources) in &a.rows {
            assert!(!sources.is_empty());
            for &z in sources {
                assert!(z < target, "source {z} does not precede target {target}");
                assert!(info.contains(&z));
            }
        }
    }

    #[test]
    fn constraint_without_predecessors_degrades() {
        let info: BTreeSet<usize> = [4, 5].into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = build_constraints(&[0], &[6], &info, &mut rng);
        assert_eq!(set.degraded, vec![0]);
        assert!(set.rows.contains_key(&6));
    }

    #[test]
    fn global_spec_encodes_across_stages() {
        // Stage 0 (antenna index 1): frozen 0; stage 1 (antenna index 0):
        // frozen 4 copying global symbol 1.
        let spec = GlobalCodeSpec::new(2, 4, [(0, vec![]), (4, vec![1])]).unwrap();
        assert_eq!(spec.dimension(), 6);
        assert_eq!(spec.dimension_distribution(), vec![3, 3]);
        assert_eq!(spec.cross_sources(0), &[]);
        assert_eq!(spec.cross_sources(1), &[(0, vec![1])]);
        let coded = spec.encode_frame(&[true, false, true, true, false, false]).unwrap();
        // u = [0,1,0,1 | 1,1,0,0] in decoding order; stage 0 feeds antenna 1.
        assert_eq!(coded[1], vec![false, false, true, true]);
        assert_eq!(coded[0], vec![false, true, false, false]);
    }

    #[test]
    fn global_spec_text_roundtrip() {
        let spec = GlobalCodeSpec::new(2, 4, [(0, vec![]), (2, vec![1]), (4, vec![1, 3])])
            .unwrap();
        let text = spec.to_text();
        assert_eq!(text, "antennas 2\nn 8\nfrozen 0\nfrozen 2 = 1\nfrozen 4 = 1 3\n");
        let parsed = GlobalCodeSpec::parse(&text).unwrap();
        assert_eq!(parsed.to_text(), text);
        assert!(GlobalCodeSpec::parse("n 8\nfrozen 0").is_err());
        assert!(GlobalCodeSpec::parse("antennas 2\nn 8\nfrozen 8").is_err());
    }

    #[test]
    fn global_spec_rejects_acausal_sources() {
        assert_eq!(
            GlobalCodeSpec::new(2, 4, [(2, vec![5])]),
            Err(CodeError::SourceNotBeforeTarget { source_index: 5, target: 2 }.into())
        );
    }

    #[test]
    fn allocate_rates_counts_most_reliable_per_antenna() {
        let profile = profile_of(&[0.5, 0.4, 0.3, 0.2, 0.1, 0.2, 0.35, 0.45]);
        assert_eq!(allocate_rates(&profile, 2, 3).unwrap(), vec![2, 1]);
        let alloc = allocate_rates(&profile, 2, 7).unwrap();
        assert_eq!(alloc.iter().sum::<usize>(), 7);
        // A flat profile splits evenly by the index tie-break.
        let flat = profile_of(&[0.2; 8]);
        assert_eq!(allocate_rates(&flat, 2, 4).unwrap(), vec![0, 4]);
    }

    #[test]
    fn dfs_construction_has_requested_shape() {
        let values: Vec<f64> =
            (0..16).map(|i| 0.9 / (1.0 + i as f64) + 0.001 * (i % 5) as f64).collect();
        let profile = profile_of(&values);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = construct_dfs(&profile, 2, 6, 2, 3, &mut rng).unwrap();
        assert_eq!(spec.dimension(), 6);
        assert_eq!(spec.total_len(), 16);
        assert_eq!(spec.n_dfs_a(), 2);
        assert_eq!(spec.n_dfs_b(), 3);
        // Frozen count: 16 - 6 = 10 positions are non-info.
        assert_eq!(spec.info_positions().len(), 6);
        for d in 0..16 {
            if let Some(sources) = spec.constraint(d) {
                for &z in sources {
                    assert!(z < d);
                    assert!(!spec.is_frozen(z), "constraint source {z} must carry info");
                }
            }
        }
        // Same seed, same spec.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let again = construct_dfs(&profile, 2, 6, 2, 3, &mut rng).unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn pinned_dimensions_are_hit_exactly() {
        let values: Vec<f64> = (0..16)
            .map(|i| if i < 8 { 0.4 + 0.01 * i as f64 } else { 0.1 + 0.01 * i as f64 })
            .collect();
        let profile = profile_of(&values);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = construct_dfs_with_dimensions(&profile, &[5, 3], 2, 2, &mut rng).unwrap();
        assert_eq!(spec.dimension_distribution(), vec![5, 3]);
        assert_eq!(spec.dimension(), 8);
        for d in 0..16 {
            if let Some(sources) = spec.constraint(d) {
                for &z in sources {
                    assert!(z < d);
                }
            }
        }
    }

    #[test]
    fn static_and_crc_constructions() {
        let values: Vec<f64> = (0..8).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let profile = profile_of(&values);
        let spec = construct_static(&profile, 2, 4).unwrap();
        assert_eq!(spec.dimension(), 4);
        assert!((0..8).all(|d| spec.constraint(d).map_or(true, |s| s.is_empty())));
        // Reliability grows with the index here, so all four info positions
        // sit on the last-decoded stage and a 2-bit checksum fits.
        assert!(construct_crc(&profile, 2, 4, 2).is_ok());
        // An inverted profile concentrates info on the first stage.
        let inverted: Vec<f64> = (0..8).map(|i| (1.0 + i as f64) / 10.0).collect();
        let profile = profile_of(&inverted);
        assert_eq!(
            construct_crc(&profile, 2, 4, 2),
            Err(ConstructionError::CrcDoesNotFit { crc_len: 2, available: 0 })
        );
        assert_eq!(
            construct_crc(&profile, 2, 2, 2),
            Err(ConstructionError::CrcDoesNotFit { crc_len: 2, available: 2 })
        );
    }

    #[test]
    fn reliability_runs_are_deterministic() {
        let sys = SystemConfig {
            n_t: 2,
            n_r: 2,
            modulation: Modulation::Qpsk,
            slots: 4,
            detector: Detector::VBlast,
            n0: 0.5,
        };
        let a = estimate_reliability(&sys, 50, 99).unwrap();
        let b = estimate_reliability(&sys, 50, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);
        assert_eq!(a.trials(), 50);
    }

    #[test]
    fn reliability_vanishes_without_noise() {
        let sys = SystemConfig {
            n_t: 2,
            n_r: 3,
            modulation: Modulation::Qpsk,
            slots: 4,
            detector: Detector::Mmse,
            n0: 1e-12,
        };
        let profile = estimate_reliability(&sys, 40, 7).unwrap();
        assert!(profile.error_prob().iter().all(|&p| p == 0.0), "{:?}", profile.error_prob());
    }

    #[test]
    fn earlier_stages_err_at_least_as_often() {
        let sys = SystemConfig {
            n_t: 2,
            n_r: 2,
            modulation: Modulation::Qpsk,
            slots: 8,
            detector: Detector::VBlast,
            n0: 0.5,
        };
        let profile = estimate_reliability(&sys, 600, 1234).unwrap();
        let seg = sys.seg_len();
        let mean = |s: usize| -> f64 {
            profile.error_prob()[s * seg..(s + 1) * seg].iter().sum::<f64>() / seg as f64
        };
        assert!(
            mean(0) + 0.02 >= mean(1),
            "stage means must not increase: {} vs {}",
            mean(0),
            mean(1)
        );
    }

    #[test]
    fn system_validation_rejects_bad_shapes() {
        let mut sys = SystemConfig {
            n_t: 4,
            n_r: 2,
            modulation: Modulation::Qpsk,
            slots: 4,
            detector: Detector::VBlast,
            n0: 1.0,
        };
        assert!(sys.validate().is_err());
        sys.n_r = 4;
        assert!(sys.validate().is_ok());
        sys.slots = 3;
        assert!(sys.validate().is_err(), "6 bits per codeword is not a power of two");
        sys.slots = 4;
        sys.n0 = 0.0;
        assert!(sys.validate().is_err());
    }

    #[test]
    fn checksum_attaches_and_verifies() {
        let payload = vec![true, false, true, true, false];
        let extended = attach_crc(&payload, 0x1021, 16);
        assert_eq!(extended.len(), payload.len() + 16);
        assert!(Crc::ccitt16().check(&extended));
    }
}
