//! Kendall's tau-a in O(n log n).

use crate::error::{PadError, Result};

/// Tau-a: `(concordant − discordant) / C(n, 2)`, ties counting as neither.
///
/// Knight's method: sort by `(a, b)`, then count the inversions a merge sort
/// of `b` performs. With `t_a`, `t_b`, `t_ab` the tied-pair counts in `a`, in
/// `b` and in both, `C − D = C(n,2) − t_a − t_b + t_ab − 2·swaps`. All counts
/// are exact integers.
pub fn kendalls_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(PadError::InvalidArgument(format!(
            "kendall tau length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(PadError::InvalidArgument("kendall tau needs at least 2 values".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(PadError::domain("kendall_tau", "NaN input"));
    }
    // -0.0 and 0.0 compare equal but sort apart under total_cmp
    let canon = |v: &[f64]| -> Vec<f64> { v.iter().map(|&x| if x == 0.0 { 0.0 } else { x }).collect() };
    let (ca, cb) = (canon(a), canon(b));
    let (a, b) = (&ca[..], &cb[..]);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));

    let ties = |eq: &dyn Fn(usize, usize) -> bool| -> i64 {
        let mut total = 0i64;
        let mut run = 1i64;
        for k in 1..n {
            if eq(idx[k - 1], idx[k]) {
                run += 1;
            } else {
                total += run * (run - 1) / 2;
                run = 1;
            }
        }
        total + run * (run - 1) / 2
    };
    let t_a = ties(&|i, j| a[i] == a[j]);
    let t_ab = ties(&|i, j| a[i] == a[j] && b[i] == b[j]);

    let mut ys: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    let swaps = merge_count(&mut ys);
    // ys is now sorted, so ties in b are runs
    let mut t_b = 0i64;
    let mut run = 1i64;
    for k in 1..n {
        if ys[k - 1] == ys[k] {
            run += 1;
        } else {
            t_b += run * (run - 1) / 2;
            run = 1;
        }
    }
    t_b += run * (run - 1) / 2;

    let pairs = (n as i64) * (n as i64 - 1) / 2;
    let diff = pairs - t_a - t_b + t_ab - 2 * swaps;
    Ok(diff as f64 / pairs as f64)
}

/// Sort ascending, returning the number of strictly inverted pairs.
fn merge_count(v: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as i64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}
