//! T5-style relative distance bucketing.

use crate::{Error, Result};

/// Checks that `boundaries` starts at 0 and is strictly increasing.
pub fn validate_boundaries(boundaries: &[usize]) -> Result<()> {
    match boundaries.first() {
        None => {
            return Err(Error::InvalidParameter(
                "bucket boundaries must not be empty".into(),
            ))
        }
        Some(&first) if first != 0 => {
            return Err(Error::InvalidParameter(format!(
                "first bucket boundary must be 0, got {first}"
            )))
        }
        _ => {}
    }
    if let Some(w) = boundaries.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(format!(
            "bucket boundaries must be strictly increasing ({} >= {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Bucket index of distance `d` for boundaries `s_0 = 0 < s_1 < ... < s_K`.
///
/// Returns `k` with `s_k <= d < s_{k+1}`, or `K` once `d >= s_K`.
pub fn t5_bucket_general(d: usize, boundaries: &[usize]) -> Result<usize> {
    validate_boundaries(boundaries)?;
    // partition_point gives the number of boundaries <= d, which is >= 1 since s_0 = 0.
    Ok(boundaries.partition_point(|&s| s <= d) - 1)
}

/// Checks the log-binning configuration: an even bucket count of at least two
/// and a max distance beyond the exact-distance region.
pub fn validate_logbin(num_buckets: usize, max_distance: usize) -> Result<()> {
    if num_buckets < 2 || num_buckets % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "log-binning needs an even bucket count >= 2, got {num_buckets}"
        )));
    }
    if max_distance <= num_buckets / 2 {
        return Err(Error::InvalidParameter(format!(
            "log-binning max distance {max_distance} must exceed num_buckets/2 = {}",
            num_buckets / 2
        )));
    }
    Ok(())
}

/// Log-binned bucket index with `num_buckets = K + 1` buckets and max distance `L1`.
///
/// Distances below `(K+1)/2` get their own bucket, distances in
/// `[(K+1)/2, L1)` are binned logarithmically, everything at or beyond `L1`
/// falls into bucket `K`.
pub fn t5_bucket_logbin(d: usize, num_buckets: usize, max_distance: usize) -> Result<usize> {
    validate_logbin(num_buckets, max_distance)?;
    Ok(logbin_unchecked(d, num_buckets, max_distance))
}

pub(crate) fn logbin_unchecked(d: usize, num_buckets: usize, max_distance: usize) -> usize {
    let half = num_buckets / 2;
    if d < half {
        d
    } else if d < max_distance {
        let halff = half as f64;
        let nb = num_buckets as f64;
        let scaled = halff * (2.0 * d as f64 / nb).ln() / (2.0 * max_distance as f64 / nb).ln();
        half + scaled.floor() as usize
    } else {
        num_buckets - 1
    }
}

/// Materializes the log-binning rule as explicit boundaries.
///
/// Returns `(boundaries, bucket_ids)` where `bucket_ids[m]` is the log-bin
/// index covering `[boundaries[m], boundaries[m+1])`. Buckets the log rule
/// never reaches (possible when `L1` is close to `(K+1)/2`) are dropped so the
/// boundaries stay strictly increasing.
pub fn logbin_boundaries(num_buckets: usize, max_distance: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    validate_logbin(num_buckets, max_distance)?;
    let mut boundaries = vec![0];
    let mut ids = vec![logbin_unchecked(0, num_buckets, max_distance)];
    for d in 1..=max_distance {
        let b = logbin_unchecked(d, num_buckets, max_distance);
        if b != *ids.last().unwrap() {
            boundaries.push(d);
            ids.push(b);
        }
    }
    Ok((boundaries, ids))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn general_examples() {
        let s = [0, 4, 16];
        assert_eq!(t5_bucket_general(0, &s).unwrap(), 0);
        assert_eq!(t5_bucket_general(16, &s).unwrap(), 2);
        assert_eq!(t5_bucket_general(5, &s).unwrap(), 1);
        assert_eq!(t5_bucket_general(3, &s).unwrap(), 0);
        assert_eq!(t5_bucket_general(1000, &s).unwrap(), 2);
    }

    #[test]
    fn malformed_boundaries_rejected() {
        assert!(t5_bucket_general(1, &[]).is_err());
        assert!(t5_bucket_general(1, &[1, 2]).is_err());
        assert!(t5_bucket_general(1, &[0, 4, 4]).is_err());
        assert!(t5_bucket_general(1, &[0, 5, 3]).is_err());
    }

    #[test]
    fn logbin_examples() {
        assert_eq!(t5_bucket_logbin(5, 32, 128).unwrap(), 5);
        assert_eq!(t5_bucket_logbin(128, 32, 128).unwrap(), 31);
        assert_eq!(t5_bucket_logbin(64, 32, 128).unwrap(), 26);
        assert_eq!(t5_bucket_logbin(16, 32, 128).unwrap(), 16);
        assert_eq!(t5_bucket_logbin(127, 32, 128).unwrap(), 31);
    }

    #[test]
    fn logbin_invalid_configs() {
        assert!(t5_bucket_logbin(0, 31, 128).is_err());
        assert!(t5_bucket_logbin(0, 0, 128).is_err());
        assert!(t5_bucket_logbin(0, 32, 16).is_err());
    }

    #[test]
    fn materialized_boundaries_match_closed_form() {
        for (nb, l1) in [(32, 128), (8, 20), (4, 3), (16, 9), (2, 2)] {
            let (s, ids) = logbin_boundaries(nb, l1).unwrap();
            validate_boundaries(&s).unwrap();
            for d in 0..4 * l1 {
                let m = t5_bucket_general(d, &s).unwrap();
                assert_eq!(ids[m], t5_bucket_logbin(d, nb, l1).unwrap(), "nb={nb} l1={l1} d={d}");
            }
        }
    }
}
