//! Polar codes with dynamic frozen symbols and min-sum list decoding.
//!
//! A code of length `n = 2^t` is defined by its frozen set and, for each
//! frozen phase, an optional parity constraint over earlier phases: a
//! dynamic frozen symbol takes the XOR of its source symbols instead of a
//! static zero. Decoding is successive cancellation over the min-sum
//! statistic recursion, with list management that keeps at most `L` paths
//! ranked by correlation discrepancy.
//!
//! Path scores are zero for a path that agrees with every hard decision and
//! strictly more negative with every disagreement, so scores never increase
//! along a path.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::rc::Rc;

use thiserror::Error;

use crate::real::{is_nonnegative, Real};

#[derive(Debug, Error, PartialEq)]
pub enum CodeError {
    #[error("code length {0} is not a power of two")]
    LengthNotPowerOfTwo(usize),
    #[error("index {index} out of range for code length {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("constraint source {source_index} does not precede its target {target}")]
    SourceNotBeforeTarget { source_index: usize, target: usize },
    #[error("expected {expected} information bits, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("statistics vector has length {got}, expected {expected}")]
    StatsLengthMismatch { expected: usize, got: usize },
    #[error("list size must be at least 1")]
    EmptyList,
    #[error("decoder needs at least one input path, at most the list size")]
    BadPathCount,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Multiplies a word by the polar transform kernel, in place.
///
/// The transform is its own inverse, so the same butterfly maps symbol
/// vectors to codewords and back.
pub fn polar_transform_in_place(bits: &mut [bool]) {
    let n = bits.len();
    debug_assert!(n.is_power_of_two());
    let mut step = 1;
    while step < n {
        let mut base = 0;
        while base < n {
            for j in base..base + step {
                bits[j] ^= bits[j + step];
            }
            base += 2 * step;
        }
        step *= 2;
    }
}

/// Polar transform of a word whose length must be a power of two.
pub fn polar_transform(bits: &[bool]) -> Result<Vec<bool>, CodeError> {
    if !bits.len().is_power_of_two() {
        return Err(CodeError::LengthNotPowerOfTwo(bits.len()));
    }
    let mut out = bits.to_vec();
    polar_transform_in_place(&mut out);
    Ok(out)
}

/// Hard decision for a bit statistic: nonnegative means bit 0.
#[inline]
pub fn hard_decision<T: Real>(s: T) -> bool {
    !is_nonnegative(s)
}

/// Reverses the lowest `bits` bits of `i`.
///
/// The statistic recursion pairs adjacent observations at the innermost
/// level, which matches the bit-reversed column order of the transform.
/// Permuting the statistics once at the segment boundary keeps the public
/// codeword convention in natural order.
fn bit_reverse(i: usize, bits: u32) -> usize {
    let mut out = 0;
    for k in 0..bits {
        out |= ((i >> k) & 1) << (bits - 1 - k);
    }
    out
}

/// Min-sum statistic of the even branch: `sgn(a) sgn(b) min(|a|, |b|)`.
#[inline]
pub fn llr_even<T: Real>(a: T, b: T) -> T {
    let mag = a.abs().min(b.abs());
    if is_nonnegative(a) == is_nonnegative(b) {
        mag
    } else {
        -mag
    }
}

/// Min-sum statistic of the odd branch: `(-1)^u a + b`.
#[inline]
pub fn llr_odd<T: Real>(a: T, b: T, u_even: bool) -> T {
    if u_even {
        b - a
    } else {
        a + b
    }
}

/// Score penalty for deciding symbol `u` against statistic `s`: zero when
/// the signs agree, `-|s|` when they disagree. An erased statistic (exact
/// zero) penalizes neither decision.
#[inline]
pub fn penalty<T: Real>(u: bool, s: T) -> T {
    if u == hard_decision(s) {
        T::zero()
    } else {
        -s.abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum PhaseKind {
    Info,
    /// Frozen symbol whose value is the XOR of the listed earlier phases;
    /// an empty list is a static zero.
    Frozen(Vec<usize>),
}

/// Length, frozen set and dynamic freezing constraints of one polar code.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSpec {
    n: usize,
    stages: u32,
    phases: Vec<PhaseKind>,
}

impl CodeSpec {
    /// Builds a spec from `(frozen index, constraint sources)` rows.
    /// Sources must precede their target; an empty source list freezes the
    /// phase to a static zero.
    pub fn new(
        n: usize,
        frozen: impl IntoIterator<Item = (usize, Vec<usize>)>,
    ) -> Result<Self, CodeError> {
        if !n.is_power_of_two() || n == 0 {
            return Err(CodeError::LengthNotPowerOfTwo(n));
        }
        let mut phases = vec![PhaseKind::Info; n];
        for (j, mut sources) in frozen {
            if j >= n {
                return Err(CodeError::IndexOutOfRange { index: j, n });
            }
            sources.sort_unstable();
            sources.dedup();
            if let Some(&worst) = sources.last() {
                if worst >= j {
                    return Err(CodeError::SourceNotBeforeTarget { source_index: worst, target: j });
                }
            }
            phases[j] = PhaseKind::Frozen(sources);
        }
        Ok(Self { n, stages: n.trailing_zeros(), phases })
    }

    /// Spec with static (all-zero) frozen symbols only.
    pub fn with_static_frozen(
        n: usize,
        frozen: impl IntoIterator<Item = usize>,
    ) -> Result<Self, CodeError> {
        Self::new(n, frozen.into_iter().map(|j| (j, Vec::new())))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn stages(&self) -> u32 {
        self.stages
    }

    /// Number of information symbols.
    pub fn dimension(&self) -> usize {
        self.phases.iter().filter(|p| matches!(p, PhaseKind::Info)).count()
    }

    pub fn is_frozen(&self, j: usize) -> bool {
        matches!(self.phases[j], PhaseKind::Frozen(_))
    }

    /// Constraint sources of a frozen phase; `None` for info phases.
    pub fn constraint(&self, j: usize) -> Option<&[usize]> {
        match &self.phases[j] {
            PhaseKind::Frozen(src) => Some(src),
            PhaseKind::Info => None,
        }
    }

    pub fn frozen_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(|&j| self.is_frozen(j))
    }

    pub fn info_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(|&j| !self.is_frozen(j))
    }

    /// Fills the symbol vector: info bits in ascending phase order, frozen
    /// phases from their constraints.
    pub fn assemble_symbols(&self, info: &[bool]) -> Result<Vec<bool>, CodeError> {
        if info.len() != self.dimension() {
            return Err(CodeError::DimensionMismatch {
                expected: self.dimension(),
                got: info.len(),
            });
        }
        let mut u = vec![false; self.n];
        let mut next = 0;
        for j in 0..self.n {
            match &self.phases[j] {
                PhaseKind::Info => {
                    u[j] = info[next];
                    next += 1;
                }
                PhaseKind::Frozen(sources) => {
                    u[j] = sources.iter().fold(false, |acc, &z| acc ^ u[z]);
                }
            }
        }
        Ok(u)
    }

    /// Encodes information bits to a codeword.
    pub fn encode(&self, info: &[bool]) -> Result<Vec<bool>, CodeError> {
        let mut u = self.assemble_symbols(info)?;
        polar_transform_in_place(&mut u);
        Ok(u)
    }

    /// Reads the information bits back out of a symbol vector.
    pub fn extract_info(&self, u: &[bool]) -> Vec<bool> {
        self.info_positions().map(|j| u[j]).collect()
    }

    /// Serializes to the code-spec text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "n {}", self.n).unwrap();
        for j in self.frozen_indices() {
            let sources = self.constraint(j).unwrap();
            if sources.is_empty() {
                writeln!(out, "frozen {j}").unwrap();
            } else {
                let list: Vec<String> = sources.iter().map(|z| z.to_string()).collect();
                writeln!(out, "frozen {j} = {}", list.join(" ")).unwrap();
            }
        }
        out
    }

    /// Parses the code-spec text format: a `n <length>` header followed by
    /// one `frozen <j>` or `frozen <j> = <z...>` line per frozen phase.
    pub fn parse(text: &str) -> Result<Self, CodeError> {
        let mut n = None;
        let mut rows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tokens = line.split_whitespace();
            match tokens.next() {
                Some("n") => {
                    let value = parse_field(tokens.next(), line_no, "code length")?;
                    if tokens.next().is_some() {
                        return Err(CodeError::Parse {
                            line: line_no,
                            msg: "trailing tokens after code length".into(),
                        });
                    }
                    n = Some(value);
                }
                Some("frozen") => {
                    let j = parse_field(tokens.next(), line_no, "frozen index")?;
                    let mut sources = Vec::new();
                    match tokens.next() {
                        None => {}
                        Some("=") => {
                            for tok in tokens {
                                sources.push(parse_token(tok, line_no)?);
                            }
                            if sources.is_empty() {
                                return Err(CodeError::Parse {
                                    line: line_no,
                                    msg: "constraint list after '=' is empty".into(),
                                });
                            }
                        }
                        Some(other) => {
                            return Err(CodeError::Parse {
                                line: line_no,
                                msg: format!("expected '=' before sources, got '{other}'"),
                            });
                        }
                    }
                    rows.push((j, sources));
                }
                Some(other) => {
                    return Err(CodeError::Parse {
                        line: line_no,
                        msg: format!("unknown directive '{other}'"),
                    });
                }
                None => unreachable!("blank lines are skipped"),
            }
        }
        let n = n.ok_or(CodeError::Parse { line: 1, msg: "missing 'n <length>' header".into() })?;
        let mut dedup = BTreeMap::new();
        for (j, sources) in rows {
            dedup.insert(j, sources);
        }
        Self::new(n, dedup)
    }
}

fn parse_field(tok: Option<&str>, line: usize, what: &str) -> Result<usize, CodeError> {
    match tok {
        Some(t) => parse_token(t, line),
        None => Err(CodeError::Parse { line, msg: format!("missing {what}") }),
    }
}

fn parse_token(tok: &str, line: usize) -> Result<usize, CodeError> {
    tok.parse().map_err(|_| CodeError::Parse {
        line,
        msg: format!("'{tok}' is not a nonnegative integer"),
    })
}

/// Per-path input to a list-decoding segment.
///
/// `stats` holds one real statistic per code bit: the sign is the hard
/// decision, the magnitude its reliability, and an exact zero an erasure.
/// `external` is the XOR contribution of symbols decided outside this
/// segment to each frozen phase (all-false when the code stands alone).
#[derive(Debug, Clone)]
pub struct SegmentInput<T> {
    pub stats: Vec<T>,
    pub external: Vec<bool>,
    pub base_score: T,
}

impl<T: Real> SegmentInput<T> {
    pub fn new(stats: Vec<T>) -> Self {
        let n = stats.len();
        Self { stats, external: vec![false; n], base_score: T::zero() }
    }
}

/// Surviving path after a list-decoding segment, best scores first.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPath<T> {
    /// Index of the [`SegmentInput`] this path descended from.
    pub parent: usize,
    /// Decided symbols, one per phase.
    pub u: Vec<bool>,
    /// Polar transform of `u`.
    pub codeword: Vec<bool>,
    /// Carried-in score plus this segment's penalties.
    pub score: T,
    /// Sum of penalties accrued in this segment alone (never positive).
    pub penalty_sum: T,
}

/// One decoding path inside the segment loop. Statistic and partial-sum
/// memory is shared with the path's ancestors until written, so a fork
/// costs two reference bumps plus the decision history.
struct Path<T> {
    parent: usize,
    score: T,
    penalty_sum: T,
    u: Vec<bool>,
    stats: Rc<Vec<T>>,
    external: Rc<Vec<bool>>,
    /// levels[lev - 1] holds the `n >> lev` statistics of level `lev`.
    levels: Vec<Rc<Vec<T>>>,
    /// psums[lev - 1] holds two partial-sum banks per block of level
    /// `lev`, indexed `2 * block + bank`.
    psums: Vec<Rc<Vec<u8>>>,
}

impl<T: Real> Path<T> {
    fn fork(&self) -> Self {
        Self {
            parent: self.parent,
            score: self.score,
            penalty_sum: self.penalty_sum,
            u: self.u.clone(),
            stats: Rc::clone(&self.stats),
            external: Rc::clone(&self.external),
            levels: self.levels.iter().map(Rc::clone).collect(),
            psums: self.psums.iter().map(Rc::clone).collect(),
        }
    }

    /// Refreshes the statistic recursion for `phase` and returns the
    /// decision statistic. Only levels whose local phase changed are
    /// recomputed, lowest first.
    fn advance(&mut self, phase: usize, n: usize, stages: u32) -> T {
        let top = stages as usize;
        let first = if phase == 0 {
            1
        } else {
            (top - (phase.trailing_zeros() as usize).min(top - 1)).max(1)
        };
        for lev in first..=top {
            let local_phase = phase >> (top - lev);
            let blocks = n >> lev;
            let src: Rc<Vec<T>> = if lev == 1 {
                Rc::clone(&self.stats)
            } else {
                Rc::clone(&self.levels[lev - 2])
            };
            if local_phase % 2 == 0 {
                let dst = Rc::make_mut(&mut self.levels[lev - 1]);
                for beta in 0..blocks {
                    dst[beta] = llr_even(src[2 * beta], src[2 * beta + 1]);
                }
            } else {
                let banks = Rc::clone(&self.psums[lev - 1]);
                let dst = Rc::make_mut(&mut self.levels[lev - 1]);
                for beta in 0..blocks {
                    let u_even = banks[2 * beta] != 0;
                    dst[beta] = llr_odd(src[2 * beta], src[2 * beta + 1], u_even);
                }
            }
        }
        self.levels[top - 1][0]
    }

    /// Records the decided symbol and pushes completed partial-sum pairs
    /// down the butterfly.
    fn set_decision(&mut self, phase: usize, value: bool, n: usize, stages: u32) {
        self.u.push(value);
        let top = stages as usize;
        Rc::make_mut(&mut self.psums[top - 1])[phase & 1] = value as u8;
        let mut local = phase;
        let mut lev = top;
        while local & 1 == 1 && lev > 1 {
            let parent_bank = (local >> 1) & 1;
            let src = Rc::clone(&self.psums[lev - 1]);
            let dst = Rc::make_mut(&mut self.psums[lev - 2]);
            for beta in 0..(n >> lev) {
                let left = src[2 * beta] ^ src[2 * beta + 1];
                let right = src[2 * beta + 1];
                dst[2 * (2 * beta) + parent_bank] = left;
                dst[2 * (2 * beta + 1) + parent_bank] = right;
            }
            local >>= 1;
            lev -= 1;
        }
    }
}

/// Runs one successive-cancellation list segment over `spec`.
///
/// Every input path is extended through all `n` phases. Frozen phases take
/// the XOR of their constraint sources inside the segment plus the path's
/// external contribution; info phases fork each path both ways. Whenever
/// more than `list_size` candidates exist, the best `list_size` by score
/// survive; equal scores keep the lower path index, and within one path the
/// zero branch precedes the one branch.
///
/// Survivors return sorted best-first, each linked to its input path.
pub fn scl_decode_segment<T: Real>(
    spec: &CodeSpec,
    inputs: &[SegmentInput<T>],
    list_size: usize,
) -> Result<Vec<SegmentPath<T>>, CodeError> {
    if list_size == 0 {
        return Err(CodeError::EmptyList);
    }
    if inputs.is_empty() || inputs.len() > list_size {
        return Err(CodeError::BadPathCount);
    }
    let n = spec.len();
    let stages = spec.stages();
    for input in inputs {
        if input.stats.len() != n {
            return Err(CodeError::StatsLengthMismatch { expected: n, got: input.stats.len() });
        }
        if input.external.len() != n {
            return Err(CodeError::StatsLengthMismatch { expected: n, got: input.external.len() });
        }
    }

    let mut paths: Vec<Path<T>> = inputs
        .iter()
        .enumerate()
        .map(|(idx, input)| Path {
            parent: idx,
            score: input.base_score,
            penalty_sum: T::zero(),
            u: Vec::with_capacity(n),
            stats: Rc::new((0..n).map(|i| input.stats[bit_reverse(i, stages)]).collect()),
            external: Rc::new(input.external.clone()),
            levels: (1..=stages).map(|lev| Rc::new(vec![T::zero(); n >> lev])).collect(),
            psums: (1..=stages).map(|lev| Rc::new(vec![0u8; 2 * (n >> lev)])).collect(),
        })
        .collect();

    for phase in 0..n {
        let decision_stats: Vec<T> =
            paths.iter_mut().map(|p| p.advance(phase, n, stages)).collect();

        if let Some(sources) = spec.constraint(phase) {
            for (path, &s) in paths.iter_mut().zip(&decision_stats) {
                let mut value = path.external[phase];
                for &z in sources {
                    value ^= path.u[z];
                }
                let pen = penalty(value, s);
                path.score += pen;
                path.penalty_sum += pen;
                path.set_decision(phase, value, n, stages);
            }
        } else {
            // Candidate order encodes the tie-breaking rule: ascending path
            // index, zero branch first. The stable sort keeps that order
            // among equal scores.
            let mut candidates: Vec<(usize, bool, T)> = Vec::with_capacity(2 * paths.len());
            for (idx, (path, &s)) in paths.iter().zip(&decision_stats).enumerate() {
                candidates.push((idx, false, path.score + penalty(false, s)));
                candidates.push((idx, true, path.score + penalty(true, s)));
            }
            if candidates.len() > list_size {
                candidates.sort_by(|a, b| {
                    b.2.partial_cmp(&a.2).expect("path scores must stay finite")
                });
                candidates.truncate(list_size);
            }
            let mut next: Vec<Path<T>> = Vec::with_capacity(candidates.len());
            for &(idx, bit, _) in &candidates {
                let mut child = paths[idx].fork();
                let pen = penalty(bit, decision_stats[idx]);
                child.score += pen;
                child.penalty_sum += pen;
                child.set_decision(phase, bit, n, stages);
                next.push(child);
            }
            paths = next;
        }
    }

    let mut order: Vec<usize> = (0..paths.len()).collect();
    order.sort_by(|&a, &b| {
        paths[b].score.partial_cmp(&paths[a].score).expect("path scores must stay finite")
    });
    Ok(order
        .into_iter()
        .map(|idx| {
            let path = &paths[idx];
            let mut codeword = path.u.clone();
            polar_transform_in_place(&mut codeword);
            SegmentPath {
                parent: path.parent,
                u: path.u.clone(),
                codeword,
                score: path.score,
                penalty_sum: path.penalty_sum,
            }
        })
        .collect())
}

/// Convenience entry for a standalone code: one path, no external symbols.
pub fn scl_decode<T: Real>(
    spec: &CodeSpec,
    stats: Vec<T>,
    list_size: usize,
) -> Result<Vec<SegmentPath<T>>, CodeError> {
    scl_decode_segment(spec, &[SegmentInput::new(stats)], list_size)
}

/// Genie-aided successive cancellation pass: every decision is forced to
/// the true transform-domain symbol, and the sign agreement of each
/// decision statistic is recorded instead. Used by reliability estimation,
/// where flag `i` means "phase `i` would have erred given a correct past".
pub fn sc_genie_mismatches<T: Real>(stats: &[T], symbols: &[bool]) -> Result<Vec<bool>, CodeError> {
    let n = stats.len();
    if !n.is_power_of_two() || n < 2 {
        return Err(CodeError::LengthNotPowerOfTwo(n));
    }
    if symbols.len() != n {
        return Err(CodeError::StatsLengthMismatch { expected: n, got: symbols.len() });
    }
    let stages = n.trailing_zeros();
    let mut path = Path {
        parent: 0,
        score: T::zero(),
        penalty_sum: T::zero(),
        u: Vec::with_capacity(n),
        stats: Rc::new((0..n).map(|i| stats[bit_reverse(i, stages)]).collect()),
        external: Rc::new(vec![false; n]),
        levels: (1..=stages).map(|lev| Rc::new(vec![T::zero(); n >> lev])).collect(),
        psums: (1..=stages).map(|lev| Rc::new(vec![0u8; 2 * (n >> lev)])).collect(),
    };
    let mut flags = Vec::with_capacity(n);
    for phase in 0..n {
        let s = path.advance(phase, n, stages);
        flags.push(hard_decision(s) != symbols[phase]);
        path.set_decision(phase, symbols[phase], n, stages);
    }
    Ok(flags)
}
