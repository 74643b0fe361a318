//! Run-length codec for binary masks.
//!
//! Runs are taken in row-major order and alternate zero-run, one-run,
//! zero-run, ... The first count is always the leading zero-run, which may
//! be 0 when the first pixel is set.

use serde::{Deserialize, Serialize};

use super::{Mask, SegmentationError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[H, W]`
    pub size: [u32; 2],
    pub counts: Vec<u64>,
}

pub fn rle_encode(mask: &Mask) -> Rle {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for &bit in mask.bits() {
        if bit == current {
            run += 1;
        } else {
            counts.push(run);
            current = bit;
            run = 1;
        }
    }
    counts.push(run);
    Rle {
        size: [mask.height(), mask.width()],
        counts,
    }
}

pub fn rle_decode(rle: &Rle) -> Result<Mask, SegmentationError> {
    let [height, width] = rle.size;
    let total = u64::from(height) * u64::from(width);
    let sum = rle
        .counts
        .iter()
        .try_fold(0u64, |acc, c| acc.checked_add(*c))
        .ok_or(SegmentationError::RleCountMismatch { expected: total, found: u64::MAX })?;
    if sum != total {
        return Err(SegmentationError::RleCountMismatch { expected: total, found: sum });
    }
    let mut bits = Vec::with_capacity(total as usize);
    let mut value = false;
    for &count in &rle.counts {
        bits.extend(std::iter::repeat_n(value, count as usize));
        value = !value;
    }
    Mask::from_bits(height, width, bits)
}

impl Mask {
    pub fn to_rle(&self) -> Rle {
        rle_encode(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_zero_is_single_run() {
        let m = Mask::empty(3, 5);
        assert_eq!(rle_encode(&m).counts, vec![15]);
    }

    #[test]
    fn all_one_starts_with_empty_zero_run() {
        let m = Mask::full(3, 5);
        assert_eq!(rle_encode(&m).counts, vec![0, 15]);
    }

    #[test]
    fn decode_rejects_bad_sum() {
        let rle = Rle { size: [2, 2], counts: vec![1, 2] };
        assert!(matches!(
            rle_decode(&rle),
            Err(SegmentationError::RleCountMismatch { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn decode_handles_zero_length_runs_mid_stream() {
        let rle = Rle { size: [1, 4], counts: vec![1, 0, 2, 1] };
        let m = rle_decode(&rle).unwrap();
        assert_eq!(m.bits(), &[false, false, false, true]);
    }

    #[test]
    fn five_hundred_random_masks_roundtrip() {
        let mut rng = crate::seed::rng(500);
        use rand::Rng;
        for _ in 0..500 {
            let h = rng.random_range(1..24);
            let w = rng.random_range(1..24);
            let density: f64 = rng.random();
            let m = Mask::from_fn(h, w, |_, _| rng.random_bool(density));
            let rle = rle_encode(&m);
            assert!(rle.counts.len() as u64 <= u64::from(h * w) + 1);
            let back = rle_decode(&rle).unwrap();
            assert_eq!(back.bits(), m.bits());
        }
    }

    proptest! {
        #[test]
        fn roundtrip_identity(h in 1u32..16, w in 1u32..16, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::seed::rng(seed);
            let m = Mask::from_fn(h, w, |_, _| rng.random_bool(0.5));
            let rle = rle_encode(&m);
            prop_assert!(rle.counts.len() as u64 <= u64::from(h * w) + 1);
            prop_assert_eq!(rle_decode(&rle).unwrap(), m);
        }
    }
}
