//! Brute-force oracles for the joint decoder at small frame sizes: with a
//! list wide enough to keep every candidate alive, the exact metric must
//! rank codewords exactly as the detector's own squared-error objective
//! does, for both front-ends. Also property checks on the factorization
//! and cancellation primitives the decoder is built from.

use num_complex::Complex;
use pcmimo_core::channel::{transmit, ChannelRealization, Modulation, TransmitFrame};
use pcmimo_core::construction::GlobalCodeSpec;
use pcmimo_core::detect::{
    cancel_in_place, mmse_filtered_output, mmse_sic_filter, qr_decompose, vblast_project, Detector,
};
use pcmimo_core::joint::{
    joint_decode, FinalSelection, MetricConfig, MetricVariant,
};
use pcmimo_core::linalg::CMat;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_channel(rng: &mut impl Rng, slots: usize, n_r: usize, n_t: usize, n0: f64) -> ChannelRealization<f64> {
    let matrices = (0..slots)
        .map(|_| {
            CMat::from_fn(n_r, n_t, |_, _| {
                Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            })
        })
        .collect();
    ChannelRealization { matrices, n0 }
}

fn test_spec() -> GlobalCodeSpec {
    // Two antennas, four symbols each; one static, one dynamic and one
    // cross-antenna frozen symbol leave five information bits.
    GlobalCodeSpec::new(2, 4, [(0, vec![]), (2, vec![1]), (4, vec![1, 3])]).unwrap()
}

/// All info words of the spec's dimension, lowest bit = first info phase.
fn enumerate_info(k: usize) -> impl Iterator<Item = Vec<bool>> {
    (0..(1u32 << k)).map(move |w| (0..k).map(|b| (w >> b) & 1 == 1).collect())
}

fn candidate_frame(spec: &GlobalCodeSpec, info: &[bool]) -> TransmitFrame<f64> {
    let coded = spec.encode_frame(info).unwrap();
    TransmitFrame::from_codewords(vec![Vec::new(); spec.n_t()], coded, Modulation::Qpsk)
}

/// `-1/2 sum_slots ||Q^H y - R x||^2`: the detection objective the exact
/// metric must reproduce up to a candidate-independent constant.
fn vblast_objective(
    chan: &ChannelRealization<f64>,
    received: &[Vec<Complex<f64>>],
    frame: &TransmitFrame<f64>,
) -> f64 {
    let mut total = 0.0;
    for (slot, h) in chan.matrices.iter().enumerate() {
        let qr = qr_decompose(h);
        let projected = vblast_project(&qr, &received[slot]);
        let modeled = qr.r.mul_vec(&frame.slot_vector(slot));
        total -= 0.5
            * projected
                .iter()
                .zip(&modeled)
                .map(|(y, m)| (y - m).norm_sqr())
                .sum::<f64>();
    }
    total
}

/// `-1/2 sum |z_a - g_a x_a|^2` over the cancellation order, with each
/// stage's residual cleaned by the candidate's own symbols.
fn mmse_objective(
    chan: &ChannelRealization<f64>,
    received: &[Vec<Complex<f64>>],
    frame: &TransmitFrame<f64>,
) -> f64 {
    let n_t = chan.matrices[0].cols();
    let mut total = 0.0;
    for (slot, h) in chan.matrices.iter().enumerate() {
        let filter = mmse_sic_filter(h, chan.snr_linear()).unwrap();
        let mut residual = received[slot].clone();
        let x = frame.slot_vector(slot);
        for a in (0..n_t).rev() {
            let z = mmse_filtered_output(&filter, &residual, a);
            total -= 0.5 * (z - x[a] * filter.gains[a]).norm_sqr();
            cancel_in_place(&mut residual, &h.col(a), x[a]);
        }
    }
    total
}

/// Decodes with every candidate kept alive and checks the final list
/// against the brute-force objective: same winner, and pairwise score
/// differences equal to objective differences.
fn assert_matches_exhaustive_search(
    detector: Detector,
    objective: impl Fn(&ChannelRealization<f64>, &[Vec<Complex<f64>>], &TransmitFrame<f64>) -> f64,
    seed: u64,
) {
    let spec = test_spec();
    let k = spec.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..20 {
        let chan = random_channel(&mut rng, 2, 3, 2, 0.5);
        let info: Vec<bool> = (0..k).map(|_| rng.gen()).collect();
        let received = transmit(&candidate_frame(&spec, &info), &chan, &mut rng);

        let cfg = MetricConfig {
            detector,
            variant: MetricVariant::Exact,
            list_size: 1 << k,
            final_selection: FinalSelection::BestScore,
        };
        let out = joint_decode(&received, &chan, &spec, &cfg).unwrap();
        assert!(out.paths.len() == 1 << k, "trial {trial}: every candidate must survive");

        let mut best_obj = f64::NEG_INFINITY;
        let mut best_info = Vec::new();
        let mut objectives = Vec::with_capacity(1 << k);
        for candidate in enumerate_info(k) {
            let frame = candidate_frame(&spec, &candidate);
            let value = objective(&chan, &received, &frame);
            if value > best_obj {
                best_obj = value;
                best_info = candidate.clone();
            }
            objectives.push((candidate, value));
        }
        assert!(
            out.info == best_info,
            "trial {trial}: decoder picked a non-optimal candidate"
        );

        // The metric and the objective must agree up to one shared offset.
        let offset = out.paths[0].score - best_obj;
        for path in &out.paths {
            let decoded = spec.extract_info(&path.u);
            let value = objectives
                .iter()
                .find(|(c, _)| *c == decoded)
                .map(|(_, v)| *v)
                .expect("every path decodes to an enumerated candidate");
            assert!(
                (path.score - value - offset).abs() < 1e-9,
                "trial {trial}: score {} vs objective {value} (offset {offset})",
                path.score
            );
        }
    }
}

#[test]
fn vblast_exact_metric_is_exhaustive_detection() {
    assert_matches_exhaustive_search(Detector::VBlast, vblast_objective, 0x0b1a);
}

#[test]
fn mmse_exact_metric_is_exhaustive_filtered_detection() {
    assert_matches_exhaustive_search(Detector::Mmse, mmse_objective, 0x303e);
}

fn complex_entries(n: usize) -> impl Strategy<Value = Vec<Complex<f64>>> {
    prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), n)
        .prop_map(|v| v.into_iter().map(|(re, im)| Complex::new(re, im)).collect())
}

proptest! {
    #[test]
    fn qr_reconstructs_and_orthonormalizes(
        (n_r, n_t, entries) in (1usize..=4).prop_flat_map(|n_t| {
            (n_t..=4).prop_flat_map(move |n_r| {
                complex_entries(n_r * n_t).prop_map(move |e| (n_r, n_t, e))
            })
        })
    ) {
        let h = CMat::from_fn(n_r, n_t, |i, j| entries[i * n_t + j]);
        let qr = qr_decompose(&h);
        let gram = qr.q.hermitian().mul(&qr.q);
        for i in 0..n_t {
            for j in 0..n_t {
                let expected = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram[(i, j)].re - expected).abs() < 1e-10);
                prop_assert!(gram[(i, j)].im.abs() < 1e-10);
            }
        }
        for i in 0..n_t {
            prop_assert!(qr.r[(i, i)].im == 0.0);
            prop_assert!(qr.r[(i, i)].re >= 0.0);
            for j in 0..i {
                prop_assert!(qr.r[(i, j)].norm() == 0.0);
            }
        }
        let back = qr.q.mul(&qr.r);
        for i in 0..n_r {
            for j in 0..n_t {
                prop_assert!((back[(i, j)] - h[(i, j)]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn stepwise_cancellation_equals_direct_subtraction(
        (n_r, n_t, entries, sym) in (1usize..=4).prop_flat_map(|n_t| {
            (n_t..=4).prop_flat_map(move |n_r| {
                (complex_entries(n_r * n_t), complex_entries(n_t))
                    .prop_map(move |(e, s)| (n_r, n_t, e, s))
            })
        }),
        y in complex_entries(4),
    ) {
        let h = CMat::from_fn(n_r, n_t, |i, j| entries[i * n_t + j]);
        let mut residual = y[..n_r].to_vec();
        for a in (0..n_t).rev() {
            cancel_in_place(&mut residual, &h.col(a), sym[a]);
        }
        let direct: Vec<Complex<f64>> = (0..n_r)
            .map(|i| y[i] - (0..n_t).map(|a| h[(i, a)] * sym[a]).sum::<Complex<f64>>())
            .collect();
        for (got, want) in residual.iter().zip(&direct) {
            prop_assert!((got - want).norm() < 1e-12);
        }
    }
}
