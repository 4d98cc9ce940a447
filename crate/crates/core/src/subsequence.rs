//! Pilot sub-sequence windows `ŷ_w ⊂ y_w`, `ŷ_l ⊂ y_l`.
//!
//! Both windows are contiguous. With `l_c = min(|y_w|, |y_l|)` the window
//! lengths are `max(1, ⌊r1·l_c⌋)` and `max(1, ⌊r2·l_c⌋)`; the start indices
//! are uniform over every position that keeps the window inside its
//! sequence.

use alloc::format;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::policy::{span_logprob, SequenceTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpanMode {
    /// One shared start index for both windows.
    SameIndex,
    /// Independent start indices.
    #[default]
    DifferentIndex,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanSpec {
    pub start_w: usize,
    pub len_w: usize,
    pub start_l: usize,
    pub len_l: usize,
    pub mode: SpanMode,
    pub r1: f64,
    pub r2: f64,
}

impl SpanSpec {
    pub fn chosen(&self) -> (usize, usize) {
        (self.start_w, self.len_w)
    }

    pub fn rejected(&self) -> (usize, usize) {
        (self.start_l, self.len_l)
    }
}

pub fn check_ratio(name: &str, r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must lie in (0, 1], got {r}")))
    }
}

/// `max(1, ⌊r·l_c⌋)`. The `1e-9` guard keeps products such as `0.7·10`
/// from flooring to 6 through representation error.
pub fn span_len(r: f64, l_c: usize) -> usize {
    let raw = libm::floor(r * l_c as f64 + 1e-9) as usize;
    raw.clamp(1, l_c.max(1))
}

pub fn build_spans(
    chosen_len: usize,
    rejected_len: usize,
    r1: f64,
    r2: f64,
    mode: SpanMode,
    rng_seed: u64,
) -> Result<SpanSpec> {
    check_ratio("r1", r1)?;
    check_ratio("r2", r2)?;
    if chosen_len == 0 || rejected_len == 0 {
        return Err(Error::Empty("response"));
    }
    let l_c = chosen_len.min(rejected_len);
    let len_w = span_len(r1, l_c);
    let len_l = span_len(r2, l_c);
    let max_w = chosen_len - len_w;
    let max_l = rejected_len - len_l;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (start_w, start_l) = match mode {
        SpanMode::SameIndex => {
            let s = rng.gen_range(0..=max_w.min(max_l));
            (s, s)
        }
        SpanMode::DifferentIndex => (rng.gen_range(0..=max_w), rng.gen_range(0..=max_l)),
    };
    Ok(SpanSpec {
        start_w,
        len_w,
        start_l,
        len_l,
        mode,
        r1,
        r2,
    })
}

/// Per-example span seed from the run seed, the example index and the
/// epoch; windows are redrawn every epoch.
pub fn span_seed(global_seed: u64, example: usize, epoch: usize) -> u64 {
    let mut x = global_seed ^ 0x5350_414e_5345_4544;
    for v in [example as u64, epoch as u64] {
        x = splitmix64(x ^ splitmix64(v));
    }
    x
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `log(π_pilot(ŷ|x) / π_ref(ŷ|x))` over one window.
pub fn pilot_trace(
    policy_trace: &SequenceTrace,
    ref_trace: &SequenceTrace,
    start: usize,
    len: usize,
) -> Result<f64> {
    if policy_trace.len() != ref_trace.len() {
        return Err(Error::TraceMismatch(policy_trace.len(), ref_trace.len()));
    }
    Ok(span_logprob(policy_trace, start, len)? - span_logprob(ref_trace, start, len)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn lengths_follow_shorter_sequence() {
        let s = build_spans(10, 8, 0.6, 0.6, SpanMode::DifferentIndex, 1).unwrap();
        assert_eq!((s.len_w, s.len_l), (4, 4));
        assert!(s.start_w <= 6 && s.start_l <= 4);
    }

    #[test]
    fn full_ratio_on_unequal_lengths() {
        for seed in 0..50 {
            for mode in [SpanMode::SameIndex, SpanMode::DifferentIndex] {
                let s = build_spans(10, 8, 1.0, 1.0, mode, seed).unwrap();
                assert_eq!((s.len_w, s.len_l), (8, 8));
                assert!(s.start_w <= 2);
                assert_eq!(s.start_l, 0);
            }
        }
    }

    #[test]
    fn full_ratio_equal_lengths_covers_everything() {
        let s = build_spans(7, 7, 1.0, 1.0, SpanMode::SameIndex, 9).unwrap();
        assert_eq!((s.start_w, s.len_w, s.start_l, s.len_l), (0, 7, 0, 7));
    }

    #[test]
    fn rounding_and_clamping() {
        assert_eq!(span_len(0.7, 10), 7);
        assert_eq!(span_len(0.6, 8), 4);
        assert_eq!(span_len(0.01, 3), 1);
        assert_eq!(span_len(1.0, 1), 1);
    }

    #[test]
    fn ratio_outside_unit_interval_is_config_error() {
        for r in [0.0, -0.5, 1.01, f64::NAN] {
            assert!(matches!(
                build_spans(5, 5, r, 0.5, SpanMode::SameIndex, 0),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn same_index_shares_start() {
        for seed in 0..200 {
            let s = build_spans(12, 9, 0.9, 0.6, SpanMode::SameIndex, seed).unwrap();
            assert_eq!(s.start_w, s.start_l);
            assert!(s.start_w + s.len_w <= 12 && s.start_l + s.len_l <= 9);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = build_spans(30, 25, 0.7, 0.8, SpanMode::DifferentIndex, 42).unwrap();
        let b = build_spans(30, 25, 0.7, 0.8, SpanMode::DifferentIndex, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn span_seeds_differ() {
        let seeds: Vec<u64> = (0..4)
            .flat_map(|e| (0..4).map(move |i| span_seed(7, i, e)))
            .collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), seeds.len());
    }

    #[test]
    fn pilot_ratio_identities() {
        let pol = SequenceTrace::new(vec![1, 2, 3, 4], vec![-0.5, -1.0, -0.25, -2.0]).unwrap();
        let rf = SequenceTrace::new(vec![1, 2, 3, 4], vec![-0.7, -0.9, -0.5, -1.0]).unwrap();
        let full = pilot_trace(&pol, &rf, 0, 4).unwrap();
        assert!((full - (pol.total_logprob - rf.total_logprob)).abs() < 1e-15);
        assert_eq!(pilot_trace(&pol, &pol, 1, 2).unwrap(), 0.0);
        let span = pilot_trace(&pol, &rf, 1, 2).unwrap();
        let comp = pilot_trace(&pol, &rf, 0, 1).unwrap() + pilot_trace(&pol, &rf, 3, 1).unwrap();
        assert!((full - span - comp).abs() < 1e-10);
        let short = SequenceTrace::new(vec![1], vec![-0.1]).unwrap();
        assert!(matches!(
            pilot_trace(&pol, &short, 0, 1),
            Err(Error::TraceMismatch(4, 1))
        ));
    }
}
