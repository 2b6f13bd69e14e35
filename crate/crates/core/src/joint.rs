//! Joint list decoding across the antenna array.
//!
//! The receiver runs one successive-cancellation list over all antennas:
//! stage `s` decodes the segment of physical antenna `n_t - 1 - s` for
//! every live path, with the paths' scores carried from stage to stage so
//! pruning always compares full-frame hypotheses. Each path owns its view
//! of the per-slot residuals; interference from an antenna is removed with
//! that path's own decisions, so diverging hypotheses see diverging
//! observations, exactly as ordered interference cancellation would with
//! the decisions taken as true.
//!
//! Under the exact metric, every stage adds the residual-dependent
//! adjustment `A - B` on top of the segment penalties (`E`); the
//! adjustment is the same for every fork inside a stage, so it only moves
//! paths relative to each other across stages. The approximate metric
//! skips the adjustments and ranks by the penalties alone.

use std::rc::Rc;

use num_complex::Complex;
use thiserror::Error;

use crate::channel::{ChannelRealization, Modulation};
use crate::construction::GlobalCodeSpec;
use crate::crc::Crc;
use crate::detect::{
    cancel_in_place, mmse_bit_statistics, mmse_filtered_output, mmse_sic_filter, qr_decompose,
    vblast_bit_statistics, vblast_project, DetectError, Detector, MmseFilter,
};
use crate::linalg::QrFactors;
use crate::polar::{scl_decode_segment, CodeError, SegmentInput};
use crate::real::Real;

#[derive(Debug, Error, PartialEq)]
pub enum JointError {
    #[error("received frame does not match the configuration: {0}")]
    Frame(&'static str),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Code(#[from] CodeError),
}

/// Which path metric the decoder accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricVariant {
    /// Segment penalties plus the per-stage `A - B` adjustments; maximizing
    /// this metric is maximum-likelihood over the listed candidates.
    Exact,
    /// Segment penalties only. Cheaper bookkeeping, same penalties.
    Approximate,
}

/// How the final path is picked from the surviving list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalSelection {
    /// Highest metric wins.
    BestScore,
    /// Best-scored path whose decoded info sequence passes the checksum;
    /// falls back to the best score (flagged) when none does.
    Crc(Crc),
}

/// Decoder configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    pub detector: Detector,
    pub variant: MetricVariant,
    pub list_size: usize,
    pub final_selection: FinalSelection,
}

/// One fully decoded hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalPath<T> {
    /// Transform-domain symbols in global decoding order.
    pub u: Vec<bool>,
    /// Final path metric.
    pub score: T,
    /// Penalty sum of each stage's segment, decoding order.
    pub segment_scores: Vec<T>,
}

/// Per-frame decoding record.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics<T> {
    /// Rank of the returned path in the final ordering (0 = best score).
    pub selected_rank: usize,
    /// Checksum verdict of the returned path; `None` under best-score
    /// selection.
    pub crc_passed: Option<bool>,
    /// Segment penalty sums of the returned path, one per stage.
    pub segment_scores: Vec<T>,
}

/// Decoder output: the selected info bits plus the whole surviving list,
/// best score first.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput<T> {
    /// Info bits of the selected path, global decoding order.
    pub info: Vec<bool>,
    /// Metric of the selected path.
    pub score: T,
    pub diagnostics: Diagnostics<T>,
    pub paths: Vec<FinalPath<T>>,
}

/// Detector state shared by every path: the per-slot factorizations or
/// filters never depend on decisions.
struct FrontEnd<'a, T: Real> {
    chan: &'a ChannelRealization<T>,
    qrs: Vec<QrFactors<T>>,
    filters: Vec<MmseFilter<T>>,
}

impl<'a, T: Real> FrontEnd<'a, T> {
    fn prepare(
        chan: &'a ChannelRealization<T>,
        detector: Detector,
    ) -> Result<Self, JointError> {
        match detector {
            Detector::VBlast => Ok(Self {
                chan,
                qrs: chan.matrices.iter().map(qr_decompose).collect(),
                filters: Vec::new(),
            }),
            Detector::Mmse => {
                let filters = chan
                    .matrices
                    .iter()
                    .map(|h| mmse_sic_filter(h, chan.snr_linear()))
                    .collect::<Result<_, _>>()?;
                Ok(Self { chan, qrs: Vec::new(), filters })
            }
        }
    }

    fn initial_residuals(&self, received: &[Vec<Complex<T>>]) -> Vec<Vec<Complex<T>>> {
        if self.qrs.is_empty() {
            received.to_vec()
        } else {
            received.iter().zip(&self.qrs).map(|(y, qr)| vblast_project(qr, y)).collect()
        }
    }

    /// Raw bit statistics of one antenna over all slots, plus the metric
    /// term `B = sum |w'|^2 / 2` of the same residuals.
    fn statistics(
        &self,
        residuals: &[Vec<Complex<T>>],
        antenna: usize,
        m: usize,
    ) -> (Vec<T>, T) {
        let mut stats = Vec::with_capacity(m * residuals.len());
        let mut b_term = T::zero();
        let half = T::of(0.5);
        if self.qrs.is_empty() {
            for (slot, residual) in residuals.iter().enumerate() {
                let pair = mmse_bit_statistics(&self.filters[slot], residual, antenna);
                stats.extend_from_slice(&pair[..m]);
                let z = mmse_filtered_output(&self.filters[slot], residual, antenna);
                b_term += half * z.norm_sqr();
            }
        } else {
            for (slot, residual) in residuals.iter().enumerate() {
                let pair = vblast_bit_statistics(&self.qrs[slot], residual, antenna);
                stats.extend_from_slice(&pair[..m]);
                b_term += half * residual[antenna].norm_sqr();
            }
        }
        (stats, b_term)
    }

    /// Removes one antenna's decided codeword from a residual set.
    fn cancel(
        &self,
        residuals: &mut [Vec<Complex<T>>],
        antenna: usize,
        codeword: &[bool],
        modulation: Modulation,
    ) {
        let m = modulation.bits_per_symbol();
        for (slot, residual) in residuals.iter_mut().enumerate() {
            let symbol = modulation.map(&codeword[slot * m..(slot + 1) * m]);
            let column = if self.qrs.is_empty() {
                self.chan.matrices[slot].col(antenna)
            } else {
                self.qrs[slot].r.col(antenna)
            };
            cancel_in_place(residual, &column, symbol);
        }
    }
}

struct JointPath<T> {
    u: Vec<bool>,
    score: T,
    segment_scores: Vec<T>,
    residuals: Rc<Vec<Vec<Complex<T>>>>,
}

/// Decodes one received frame.
///
/// `received` holds the per-slot observations `y_i`. The soft inputs f
/// handed to each segment are the detector statistics under one uniform
/// positive scale (twice the component amplitude), shared by all antennas
/// of the frame so penalties stay comparable across stages.
pub fn joint_decode<T: Real>(
    received: &[Vec<Complex<T>>],
    chan: &ChannelRealization<T>,
    spec: &GlobalCodeSpec,
    cfg: &MetricConfig,
) -> Result<DecodeOutput<T>, JointError> {
    let n_t = spec.n_t();
    let slots = chan.slots();
    if received.len() != slots || slots == 0 {
        return Err(JointError::Frame("slot count"));
    }
    for (h, y) in chan.matrices.iter().zip(received) {
        if h.cols() != n_t {
            return Err(JointError::Frame("transmit antenna count"));
        }
        if h.rows() != y.len() {
            return Err(JointError::Frame("receive vector length"));
        }
    }
    let m = spec.seg_len() / slots;
    let modulation = Modulation::from_bits_per_symbol(m)
        .filter(|_| m * slots == spec.seg_len())
        .ok_or(JointError::Frame("bits per slot"))?;
    let amp: T = modulation.component_amplitude();
    let soft_scale = T::of(2.0) * amp;

    let front = FrontEnd::prepare(chan, cfg.detector)?;
    let mut paths = vec![JointPath {
        u: Vec::new(),
        score: T::zero(),
        segment_scores: Vec::new(),
        residuals: Rc::new(front.initial_residuals(received)),
    }];

    for s in 0..n_t {
        let antenna = n_t - 1 - s;
        let mut inputs = Vec::with_capacity(paths.len());
        let mut adjustments = Vec::with_capacity(paths.len());
        for path in &paths {
            let (raw, b_term) = front.statistics(&path.residuals, antenna, m);
            let soft: Vec<T> = raw.into_iter().map(|x| soft_scale * x).collect();
            let a_term = soft.iter().map(|x| x.abs()).sum::<T>() * T::of(0.5);
            adjustments.push(match cfg.variant {
                MetricVariant::Exact => a_term - b_term,
                MetricVariant::Approximate => T::zero(),
            });
            let mut input = SegmentInput::new(soft);
            input.base_score = path.score;
            for (phase, sources) in spec.cross_sources(s) {
                input.external[*phase] =
                    sources.iter().fold(false, |acc, &z| acc ^ path.u[z]);
            }
            inputs.push(input);
        }
        let survivors = scl_decode_segment(spec.segment(s), &inputs, cfg.list_size)?;
        let final_stage = s + 1 == n_t;
        let mut next = Vec::with_capacity(survivors.len());
        for hypothesis in survivors {
            let parent = &paths[hypothesis.parent];
            let mut u = parent.u.clone();
            u.extend_from_slice(&hypothesis.u);
            let mut segment_scores = parent.segment_scores.clone();
            segment_scores.push(hypothesis.penalty_sum);
            let residuals = if final_stage {
                Rc::clone(&parent.residuals)
            } else {
                let mut shared = Rc::clone(&parent.residuals);
                let owned = Rc::make_mut(&mut shared);
                front.cancel(owned, antenna, &hypothesis.codeword, modulation);
                shared
            };
            next.push(JointPath {
                u,
                score: hypothesis.score + adjustments[hypothesis.parent],
                segment_scores,
                residuals,
            });
        }
        // The adjustments can reorder parents; the stable sort keeps the
        // segment's deterministic order among equal scores.
        next.sort_by(|x, y| y.score.partial_cmp(&x.score).expect("scores stay finite"));
        paths = next;
    }

    let ranked: Vec<FinalPath<T>> = paths
        .into_iter()
        .map(|p| FinalPath { u: p.u, score: p.score, segment_scores: p.segment_scores })
        .collect();
    let (selected_rank, crc_passed) = match &cfg.final_selection {
        FinalSelection::BestScore => (0, None),
        FinalSelection::Crc(crc) => {
            match ranked.iter().position(|p| crc.check(&spec.extract_info(&p.u))) {
                Some(rank) => (rank, Some(true)),
                None => (0, Some(false)),
            }
        }
    };
    let chosen = &ranked[selected_rank];
    Ok(DecodeOutput {
        info: spec.extract_info(&chosen.u),
        score: chosen.score,
        diagnostics: Diagnostics {
            selected_rank,
            crc_passed,
            segment_scores: chosen.segment_scores.clone(),
        },
        paths: ranked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{transmit, TransmitFrame};
    use crate::linalg::CMat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixed_channel(slots: usize, n_r: usize, n_t: usize, n0: f64) -> ChannelRealization<f64> {
        // Deterministic well-conditioned matrices.
        let matrices = (0..slots)
            .map(|i| {
                CMat::from_fn(n_r, n_t, |r, c| {
                    let phase = 0.7 * (1.0 + i as f64) * (1.0 + r as f64 + 2.0 * c as f64);
                    let gain = 1.0 + 0.3 * ((r + 2 * c + i) % 3) as f64;
                    Complex::from_polar(gain, phase)
                })
            })
            .collect();
        ChannelRealization { matrices, n0 }
    }

    fn noiseless_received(
        chan: &ChannelRealization<f64>,
        frame: &TransmitFrame<f64>,
    ) -> Vec<Vec<Complex<f64>>> {
        chan.matrices
            .iter()
            .enumerate()
            .map(|(slot, h)| h.mul_vec(&frame.slot_vector(slot)))
            .collect()
    }

    fn cfg(detector: Detector, variant: MetricVariant, list_size: usize) -> MetricConfig {
        MetricConfig { detector, variant, list_size, final_selection: FinalSelection::BestScore }
    }

    #[test]
    fn noiseless_frames_decode_exactly() {
        let spec = GlobalCodeSpec::new(2, 8, [(0, vec![]), (8, vec![2, 3]), (9, vec![])])
            .unwrap();
        let chan = fixed_channel(4, 2, 2, 0.1);
        let info: Vec<bool> = (0..spec.dimension()).map(|i| i % 3 == 1).collect();
        let coded = spec.encode_frame(&info).unwrap();
        let frame = TransmitFrame::from_codewords(vec![Vec::new(); 2], coded, Modulation::Qpsk);
        let received = noiseless_received(&chan, &frame);
        for detector in [Detector::VBlast, Detector::Mmse] {
            let out =
                joint_decode(&received, &chan, &spec, &cfg(detector, MetricVariant::Approximate, 4))
                    .unwrap();
            assert_eq!(out.info, info, "{detector:?}");
        }
        // The QR projection is interference-free, so the clean frame incurs
        // no penalty at all. (The regularized linear filter is not, so the
        // same cannot be asserted of it.)
        let out = joint_decode(
            &received,
            &chan,
            &spec,
            &cfg(Detector::VBlast, MetricVariant::Approximate, 4),
        )
        .unwrap();
        assert_eq!(out.score, 0.0, "clean penalties");
        assert_eq!(out.diagnostics.segment_scores, vec![0.0, 0.0]);
    }

    #[test]
    fn cross_constraints_resolve_from_the_decoded_path() {
        // Stage 1's first symbol copies global symbol 0; check both values.
        let spec = GlobalCodeSpec::new(2, 4, [(4, vec![0])]).unwrap();
        let chan = fixed_channel(2, 2, 2, 0.1);
        for first in [false, true] {
            let mut info = vec![first, true, false, true, false, true, true];
            info[0] = first;
            let coded = spec.encode_frame(&info).unwrap();
            let frame =
                TransmitFrame::from_codewords(vec![Vec::new(); 2], coded, Modulation::Qpsk);
            let received = noiseless_received(&chan, &frame);
            let out = joint_decode(
                &received,
                &chan,
                &spec,
                &cfg(Detector::VBlast, MetricVariant::Exact, 8),
            )
            .unwrap();
            assert_eq!(out.info, info, "first info bit {first}");
            // The constrained symbol must follow its source on the winner.
            let winner = &out.paths[0];
            assert_eq!(winner.u[4], winner.u[0]);
        }
    }

    #[test]
    fn exact_and_approximate_share_segment_penalties() {
        let spec = GlobalCodeSpec::new(2, 8, [(0, vec![]), (1, vec![]), (8, vec![4])])
            .unwrap();
        let chan = fixed_channel(4, 3, 2, 0.4);
        let info: Vec<bool> = (0..spec.dimension()).map(|i| i % 2 == 0).collect();
        let coded = spec.encode_frame(&info).unwrap();
        let frame = TransmitFrame::from_codewords(vec![Vec::new(); 2], coded, Modulation::Qpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let received = transmit(&frame, &chan, &mut rng);
        let exact = joint_decode(
            &received,
            &chan,
            &spec,
            &cfg(Detector::Mmse, MetricVariant::Exact, 1),
        )
        .unwrap();
        let approx = joint_decode(
            &received,
            &chan,
            &spec,
            &cfg(Detector::Mmse, MetricVariant::Approximate, 1),
        )
        .unwrap();
        // With a single path the decisions coincide, so the penalty terms
        // must too; only the adjustments differ.
        assert_eq!(exact.info, approx.info);
        assert_eq!(exact.diagnostics.segment_scores, approx.diagnostics.segment_scores);
        assert_eq!(
            approx.score,
            approx.diagnostics.segment_scores.iter().sum::<f64>(),
            "approximate metric is the penalty sum"
        );
        assert_ne!(exact.score, approx.score, "adjustments must enter the exact metric");
    }

    #[test]
    fn checksum_selection_falls_back_when_nothing_passes() {
        let spec = GlobalCodeSpec::new(2, 4, []).unwrap();
        let chan = fixed_channel(2, 2, 2, 0.1);
        let crc = Crc::new(2, 0b11, 0);
        let payload: Vec<bool> = vec![true, false, true, true, false, true];
        let info = crc.attach(&payload);
        assert_eq!(info.len(), spec.dimension());
        let coded = spec.encode_frame(&info).unwrap();
        let frame = TransmitFrame::from_codewords(vec![Vec::new(); 2], coded, Modulation::Qpsk);
        let received = noiseless_received(&chan, &frame);
        let mut config = cfg(Detector::VBlast, MetricVariant::Exact, 4);
        config.final_selection = FinalSelection::Crc(crc);
        let out = joint_decode(&received, &chan, &spec, &config).unwrap();
        assert_eq!(out.diagnostics.crc_passed, Some(true));
        assert_eq!(out.info, info);

        // A checksum no codeword can satisfy: flag and fall back to rank 0.
        let impossible = Crc::new(63, u64::MAX >> 1, u64::MAX >> 1);
        config.final_selection = FinalSelection::Crc(impossible);
        let out = joint_decode(&received, &chan, &spec, &config).unwrap();
        assert_eq!(out.diagnostics.crc_passed, Some(false));
        assert_eq!(out.diagnostics.selected_rank, 0);
    }

    #[test]
    fn rejects_mismatched_frames() {
        let spec = GlobalCodeSpec::new(2, 4, []).unwrap();
        let chan = fixed_channel(2, 2, 2, 0.1);
        let config = cfg(Detector::VBlast, MetricVariant::Exact, 2);
        let short = vec![vec![Complex::new(0.0, 0.0); 2]];
        assert_eq!(
            joint_decode(&short, &chan, &spec, &config),
            Err(JointError::Frame("slot count"))
        );
        let bad_dim = vec![vec![Complex::new(0.0, 0.0); 3]; 2];
        assert_eq!(
            joint_decode(&bad_dim, &chan, &spec, &config),
            Err(JointError::Frame("receive vector length"))
        );
        // 3 slots cannot carry an 8-bit segment at any supported order.
        let chan3 = fixed_channel(3, 2, 2, 0.1);
        let y3 = vec![vec![Complex::new(0.0, 0.0); 2]; 3];
        assert_eq!(
            joint_decode(&y3, &chan3, &spec, &config),
            Err(JointError::Frame("bits per slot"))
        );
    }
}
