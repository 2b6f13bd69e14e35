//! Flat Rayleigh MIMO channel with per-slot fading and Gray-mapped
//! constellations.
//!
//! Every slot gets an independent channel matrix (fast fading) and additive
//! complex Gaussian noise of total variance `N_0` per receive antenna. The
//! constellations are unit power, so the linear SNR is simply `1 / N_0`.

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::CMat;
use crate::real::Real;

/// Gray-mapped constellation, unit average power.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modulation {
    /// One bit per symbol on the real axis: 0 -> +1, 1 -> -1.
    Bpsk,
    /// Two bits per symbol: first bit on I, second on Q, each component
    /// `(1 - 2b) / sqrt(2)`.
    Qpsk,
}

impl Modulation {
    pub fn from_bits_per_symbol(m: usize) -> Option<Self> {
        match m {
            1 => Some(Self::Bpsk),
            2 => Some(Self::Qpsk),
            _ => None,
        }
    }

    pub fn bits_per_symbol(self) -> usize {
        match self {
            Self::Bpsk => 1,
            Self::Qpsk => 2,
        }
    }

    /// Amplitude of one real signal component.
    pub fn component_amplitude<T: Real>(self) -> T {
        match self {
            Self::Bpsk => T::one(),
            Self::Qpsk => T::one() / T::of(2.0).sqrt(),
        }
    }

    /// Maps `bits_per_symbol` bits to one constellation point.
    pub fn map<T: Real>(self, bits: &[bool]) -> Complex<T> {
        let a = self.component_amplitude::<T>();
        let level = |b: bool| if b { -a } else { a };
        match self {
            Self::Bpsk => {
                debug_assert_eq!(bits.len(), 1);
                Complex::new(level(bits[0]), T::zero())
            }
            Self::Qpsk => {
                debug_assert_eq!(bits.len(), 2);
                Complex::new(level(bits[0]), level(bits[1]))
            }
        }
    }

    /// Maps a codeword of `m * N` bits to `N` symbols, consecutive bits
    /// per symbol (I component first).
    pub fn map_word<T: Real>(self, bits: &[bool]) -> Vec<Complex<T>> {
        let m = self.bits_per_symbol();
        assert_eq!(bits.len() % m, 0, "codeword length must be a multiple of {m}");
        bits.chunks(m).map(|chunk| self.map(chunk)).collect()
    }
}

/// Channel matrices and noise level for one frame of `N` slots.
#[derive(Debug, Clone)]
pub struct ChannelRealization<T> {
    /// One `N_r x N_t` matrix per slot.
    pub matrices: Vec<CMat<T>>,
    /// Total noise variance per receive antenna.
    pub n0: T,
}

impl<T: Real> ChannelRealization<T>
where
    StandardNormal: Distribution<T>,
{
    /// Draws i.i.d. CN(0, 1) entries for every slot.
    pub fn sample<R: Rng>(rng: &mut R, slots: usize, n_r: usize, n_t: usize, n0: T) -> Self {
        assert!(n0 > T::zero(), "noise variance must be positive");
        let matrices = (0..slots)
            .map(|_| CMat::from_fn(n_r, n_t, |_, _| complex_gaussian(rng, T::one())))
            .collect();
        Self { matrices, n0 }
    }
}

impl<T: Real> ChannelRealization<T> {
    pub fn slots(&self) -> usize {
        self.matrices.len()
    }

    pub fn snr_linear(&self) -> T {
        T::one() / self.n0
    }
}

/// Everything the transmitter emits for one frame.
#[derive(Debug, Clone)]
pub struct TransmitFrame<T> {
    /// Information bits carried on each antenna's info positions,
    /// ascending phase order; outer index is the antenna (0-based).
    pub info: Vec<Vec<bool>>,
    /// Codeword of each antenna, `m * N` bits.
    pub coded: Vec<Vec<bool>>,
    /// Symbols of each antenna, `N` per frame.
    pub symbols: Vec<Vec<Complex<T>>>,
}

impl<T: Real> TransmitFrame<T> {
    /// Modulates per-antenna codewords.
    pub fn from_codewords(info: Vec<Vec<bool>>, coded: Vec<Vec<bool>>, modulation: Modulation) -> Self {
        let symbols = coded.iter().map(|bits| modulation.map_word(bits)).collect();
        Self { info, coded, symbols }
    }

    /// Transmit vector of one slot, component `a` from antenna `a`.
    pub fn slot_vector(&self, slot: usize) -> Vec<Complex<T>> {
        self.symbols.iter().map(|per_antenna| per_antenna[slot]).collect()
    }
}

/// Passes one frame of symbols through the fading channel and adds noise:
/// `y_i = H_i x_i + nu_i` with `nu ~ CN(0, N_0)` per component.
pub fn transmit<T: Real, R: Rng>(
    frame: &TransmitFrame<T>,
    channel: &ChannelRealization<T>,
    rng: &mut R,
) -> Vec<Vec<Complex<T>>>
where
    StandardNormal: Distribution<T>,
{
    channel
        .matrices
        .iter()
        .enumerate()
        .map(|(slot, h)| {
            let mut y = h.mul_vec(&frame.slot_vector(slot));
            for entry in &mut y {
                *entry += complex_gaussian(rng, channel.n0);
            }
            y
        })
        .collect()
}

/// Mixes a master seed with two substream identifiers into an independent
/// generator seed. Three SplitMix64 rounds give full avalanche per
/// identifier, so trial streams never overlap however the caller nests
/// loops; the same triple always yields the same seed.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(master) ^ stream) ^ index)
}

/// One draw of CN(0, `variance`): independent real and imaginary parts of
/// variance `variance / 2` each.
pub fn complex_gaussian<T: Real, R: Rng>(rng: &mut R, variance: T) -> Complex<T>
where
    StandardNormal: Distribution<T>,
{
    let scale = (variance / T::of(2.0)).sqrt();
    let re: T = StandardNormal.sample(rng);
    let im: T = StandardNormal.sample(rng);
    Complex::new(re * scale, im * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn qpsk_map_matches_convention() {
        let s = 1.0 / 2.0f64.sqrt();
        let cases = [
            ([false, false], Complex::new(s, s)),
            ([false, true], Complex::new(s, -s)),
            ([true, false], Complex::new(-s, s)),
            ([true, true], Complex::new(-s, -s)),
        ];
        for (bits, expected) in cases {
            let x: Complex<f64> = Modulation::Qpsk.map(&bits);
            assert!((x - expected).norm() < 1e-15);
            assert!((x.norm() - 1.0).abs() < 1e-15, "unit power per symbol");
        }
    }

    #[test]
    fn bpsk_map_matches_convention() {
        assert_eq!(Modulation::Bpsk.map::<f64>(&[false]), Complex::new(1.0, 0.0));
        assert_eq!(Modulation::Bpsk.map::<f64>(&[true]), Complex::new(-1.0, 0.0));
    }

    #[test]
    fn map_word_orders_i_before_q() {
        let s = 1.0 / 2.0f64.sqrt();
        let symbols: Vec<Complex<f64>> = Modulation::Qpsk.map_word(&[true, false, false, true]);
        assert_eq!(symbols.len(), 2);
        assert!((symbols[0] - Complex::new(-s, s)).norm() < 1e-15);
        assert!((symbols[1] - Complex::new(s, -s)).norm() < 1e-15);
    }

    #[test]
    fn channel_statistics_are_plausible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let chan: ChannelRealization<f64> = ChannelRealization::sample(&mut rng, 4000, 2, 2, 0.5);
        let mut sum = Complex::new(0.0, 0.0);
        let mut power = 0.0;
        let mut count = 0.0;
        for h in &chan.matrices {
            for i in 0..2 {
                for j in 0..2 {
                    sum += h[(i, j)];
                    power += h[(i, j)].norm_sqr();
                    count += 1.0;
                }
            }
        }
        assert!((sum / count).norm() < 0.02, "entries should have zero mean");
        assert!((power / count - 1.0).abs() < 0.05, "entries should have unit variance");
        assert!((chan.snr_linear() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fading_changes_every_slot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chan: ChannelRealization<f64> = ChannelRealization::sample(&mut rng, 2, 2, 2, 1.0);
        assert!(chan.matrices[0].max_abs_diff(&chan.matrices[1]) > 1e-6);
    }

    #[test]
    fn noise_variance_tracks_n0() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n0 = 0.25;
        let frame = TransmitFrame::from_codewords(
            vec![vec![], vec![]],
            vec![vec![false; 2000], vec![true; 2000]],
            Modulation::Bpsk,
        );
        // Identity-free check: use a zero channel so y is pure noise.
        let chan = ChannelRealization {
            matrices: vec![CMat::<f64>::zeros(2, 2); 2000],
            n0,
        };
        let y = transmit(&frame, &chan, &mut rng);
        let mut power = 0.0;
        let mut count = 0.0;
        for slot in &y {
            for v in slot {
                power += v.norm_sqr();
                count += 1.0;
            }
        }
        assert!((power / count - n0).abs() < 0.02);
    }

    #[test]
    fn transmit_applies_channel_matrix() {
        let frame = TransmitFrame::from_codewords(
            vec![vec![], vec![]],
            vec![vec![false], vec![true]],
            Modulation::Bpsk,
        );
        let mut h = CMat::<f64>::zeros(2, 2);
        h[(0, 0)] = Complex::new(1.0, 0.0);
        h[(0, 1)] = Complex::new(2.0, 0.0);
        h[(1, 0)] = Complex::new(0.0, 1.0);
        h[(1, 1)] = Complex::new(0.0, -1.0);
        let chan = ChannelRealization { matrices: vec![h], n0: 1e-30 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = transmit(&frame, &chan, &mut rng);
        // x = (+1, -1): y0 = 1 - 2 = -1, y1 = i + i = 2i.
        assert!((y[0][0] - Complex::new(-1.0, 0.0)).norm() < 1e-9);
        assert!((y[0][1] - Complex::new(0.0, 2.0)).norm() < 1e-9);
    }
}
