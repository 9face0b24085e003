//! Speed buckets: equal-count duration tertiles via nearest-rank percentiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpeedTag {
    Fast = 0,
    Medium = 1,
    Slow = 2,
}

impl SpeedTag {
    pub const ALL: [SpeedTag; 3] = [SpeedTag::Fast, SpeedTag::Medium, SpeedTag::Slow];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SpeedTag::Fast => "fast",
            SpeedTag::Medium => "medium",
            SpeedTag::Slow => "slow",
        }
    }
}

/// The two duration thresholds splitting phoneme durations into fast/medium/
/// slow tertiles. Small durations are fast speech.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeedBucketBoundaries {
    pub t1: u32,
    pub t2: u32,
}

/// Nearest-rank 33.33rd / 66.67th percentiles of the duration multiset.
/// Order-insensitive; equal-count tertiles up to ties.
pub fn compute_speed_buckets(durations: &[u32]) -> Result<SpeedBucketBoundaries> {
    if durations.is_empty() {
        return Err(Error::Data(
            "cannot compute speed buckets from an empty duration list".into(),
        ));
    }
    let mut sorted = durations.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let rank1 = n.div_ceil(3);
    let rank2 = (2 * n).div_ceil(3);
    let t1 = sorted[rank1 - 1];
    let t2 = sorted[rank2 - 1];
    Ok(SpeedBucketBoundaries { t1, t2 })
}

/// Left-inclusive upper edges: d ≤ t1 is FAST, t1 < d ≤ t2 is MEDIUM, else
/// SLOW. When t1 == t2 the boundary value itself is MEDIUM, so an all-equal
/// fitting set lands entirely in MEDIUM.
pub fn assign_speed_tag(duration: u32, b: SpeedBucketBoundaries) -> SpeedTag {
    if b.t1 == b.t2 {
        if duration < b.t1 {
            SpeedTag::Fast
        } else if duration == b.t2 {
            SpeedTag::Medium
        } else {
            SpeedTag::Slow
        }
    } else if duration <= b.t1 {
        SpeedTag::Fast
    } else if duration <= b.t2 {
        SpeedTag::Medium
    } else {
        SpeedTag::Slow
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_distinct_values_split_evenly() {
        let d: Vec<u32> = (1..=9).collect();
        let b = compute_speed_buckets(&d).unwrap();
        assert_eq!(b, SpeedBucketBoundaries { t1: 3, t2: 6 });
        let counts = count_tags(&d, b);
        assert_eq!(counts, [3, 3, 3]);
    }

    #[test]
    fn all_equal_is_all_medium() {
        let d = vec![7u32; 20];
        let b = compute_speed_buckets(&d).unwrap();
        assert_eq!(b.t1, b.t2);
        let counts = count_tags(&d, b);
        assert_eq!(counts, [0, 20, 0]);
    }

    #[test]
    fn empty_is_error() {
        assert!(compute_speed_buckets(&[]).is_err());
    }

    #[test]
    fn assignment_boundary_rules() {
        let b = SpeedBucketBoundaries { t1: 3, t2: 6 };
        assert_eq!(assign_speed_tag(2, b), SpeedTag::Fast);
        assert_eq!(assign_speed_tag(3, b), SpeedTag::Fast);
        assert_eq!(assign_speed_tag(6, b), SpeedTag::Medium);
        assert_eq!(assign_speed_tag(40, b), SpeedTag::Slow);
    }

    #[test]
    fn permutation_invariant() {
        let a = vec![9u32, 1, 5, 3, 7, 2, 8, 4, 6];
        let mut bvec = a.clone();
        bvec.reverse();
        assert_eq!(
            compute_speed_buckets(&a).unwrap(),
            compute_speed_buckets(&bvec).unwrap()
        );
    }

    fn count_tags(d: &[u32], b: SpeedBucketBoundaries) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for &x in d {
            counts[assign_speed_tag(x, b).index()] += 1;
        }
        counts
    }
}
