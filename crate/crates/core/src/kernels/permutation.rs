use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::kernel::MultiKernel;
use crate::error::{PadError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize)]
pub struct PermutationResult {
    /// Biased MMD² of the observed split.
    pub statistic: f64,
    /// `(1 + #{permuted ≥ observed}) / (1 + permutations)`.
    pub p_value: f64,
    pub permutations: usize,
}

/// Two-sample permutation test with the biased MMD² statistic.
///
/// The pooled Gram matrix is built once; each permutation only reweights it.
pub fn permutation_test<R: Rng + ?Sized>(
    x: &Tensor,
    y: &Tensor,
    mk: &MultiKernel,
    permutations: usize,
    rng: &mut R,
) -> Result<PermutationResult> {
    if x.rank() != 2 || y.rank() != 2 || x.shape()[1] != y.shape()[1] {
        return Err(PadError::shape(
            "permutation_test",
            format!("{:?} vs {:?}", x.shape(), y.shape()),
        ));
    }
    let (n, m) = (x.shape()[0], y.shape()[0]);
    if n == 0 || m == 0 {
        return Err(PadError::InvalidArgument("permutation_test: empty sample".into()));
    }
    let total = n + m;
    let rows: Vec<&[f64]> = (0..n).map(|i| x.row(i)).chain((0..m).map(|j| y.row(j))).collect();
    let mut gram = vec![0.0; total * total];
    for i in 0..total {
        for j in i..total {
            let k = mk.eval(rows[i], rows[j])?;
            gram[i * total + j] = k;
            gram[j * total + i] = k;
        }
    }
    let (wx, wy) = (1.0 / n as f64, -1.0 / m as f64);
    let stat = |labels: &[usize]| {
        let mut w = vec![wy; total];
        for &i in &labels[..n] {
            w[i] = wx;
        }
        let mut s = 0.0;
        for i in 0..total {
            let row = &gram[i * total..(i + 1) * total];
            s += w[i] * crate::tensor::dot(row, &w);
        }
        s
    };
    let mut order: Vec<usize> = (0..total).collect();
    let observed = stat(&order);
    let mut exceed = 0usize;
    for _ in 0..permutations {
        order.shuffle(rng);
        if stat(&order) >= observed {
            exceed += 1;
        }
    }
    Ok(PermutationResult {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        permutations,
    })
}
