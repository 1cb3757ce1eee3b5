use crate::error::{PadError, Result};

/// Equal-count frequency buckets, 0-based (`0` warmest, `b − 1` coldest).
///
/// Items are ordered by (frequency desc, id asc); rank `r` of `n` goes to
/// bucket `⌊r·b/n⌋`. Items never seen in training go to the coldest bucket.
pub fn bucketize(freq: &[u32], b: usize) -> Result<Vec<usize>> {
    let n = freq.len();
    if b == 0 || b > n {
        return Err(PadError::InvalidArgument(format!(
            "cannot split {n} items into {b} buckets"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| freq[y].cmp(&freq[x]).then(x.cmp(&y)));
    let mut out = vec![0; n];
    for (rank, &item) in order.iter().enumerate() {
        out[item] = if freq[item] == 0 { b - 1 } else { rank * b / n };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_bucket() {
        assert_eq!(bucketize(&[3, 0, 9], 1).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn distinct_frequencies() {
        let freq: Vec<u32> = (1..=10).rev().collect();
        assert_eq!(bucketize(&freq, 10).unwrap(), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn ties_favour_lower_id() {
        assert_eq!(bucketize(&[4, 4], 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn zero_frequency_is_coldest() {
        assert_eq!(bucketize(&[0, 5, 4, 3], 2).unwrap(), vec![1, 0, 0, 1]);
    }

    #[test]
    fn too_many_buckets() {
        assert!(bucketize(&[1, 2], 3).is_err());
    }
}
