//! Bit-level cyclic redundancy checks.
//!
//! The checksum is the polynomial remainder of the message, computed MSB
//! first with no reflection and no output XOR, so appending the checksum
//! to its message always leaves a zero residue (for a zero initial
//! register). The outer code attaches one checksum across a whole frame's
//! payload and uses it to pick the decoded path.

/// CRC register description: `width` bits, feedback taps in `poly` (the
/// leading `x^width` term is implicit), starting register value `init`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crc {
    width: usize,
    poly: u64,
    init: u64,
}

impl Crc {
    pub fn new(width: usize, poly: u64, init: u64) -> Self {
        assert!(width >= 1 && width <= 64, "CRC width {width} out of range");
        Self { width, poly, init }
    }

    /// CRC-16 with generator x^16 + x^12 + x^5 + 1 and zero start value.
    pub fn ccitt16() -> Self {
        Self::new(16, 0x1021, 0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Runs the message through the shift register and returns the final
    /// register contents, MSB first.
    pub fn compute(&self, bits: &[bool]) -> Vec<bool> {
        let mask = if self.width == 64 { u64::MAX } else { (1 << self.width) - 1 };
        let top = 1u64 << (self.width - 1);
        let mut reg = self.init & mask;
        for &bit in bits {
            let feedback = ((reg & top) != 0) ^ bit;
            reg = (reg << 1) & mask;
            if feedback {
                reg ^= self.poly & mask;
            }
        }
        (0..self.width).rev().map(|k| (reg >> k) & 1 == 1).collect()
    }

    /// Appends the checksum of `payload` to a copy of it.
    pub fn attach(&self, payload: &[bool]) -> Vec<bool> {
        let mut out = payload.to_vec();
        out.extend(self.compute(payload));
        out
    }

    /// True when `bits` ends in the checksum of everything before it,
    /// which for a zero `init` is the same as a zero residue.
    pub fn check(&self, bits: &[bool]) -> bool {
        if bits.len() < self.width {
            return false;
        }
        let (payload, tail) = bits.split_at(bits.len() - self.width);
        self.compute(payload) == tail
    }
}
