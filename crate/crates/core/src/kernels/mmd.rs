use std::cmp::Ordering;

use super::kernel::{gaussian_from_sq_dist, gram_var, KernelSpec, MultiKernel};
use crate::error::{PadError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Total order on tensors so that `(X, Y)` and `(Y, X)` are evaluated in the
/// same summation order and the estimators are exactly symmetric.
fn canonical(tape: &Tape, x: Var, y: Var) -> (Var, Var) {
    let (a, b) = (tape.value(x), tape.value(y));
    let ord = a.shape().cmp(b.shape()).then_with(|| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    if ord == Ordering::Greater {
        (y, x)
    } else {
        (x, y)
    }
}

fn check_samples(op: &'static str, tape: &Tape, x: Var, y: Var) -> Result<(usize, usize)> {
    let (a, b) = (tape.value(x), tape.value(y));
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(PadError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.shape()[0] == 0 || b.shape()[0] == 0 {
        return Err(PadError::InvalidArgument(format!("{op}: empty sample set")));
    }
    Ok((a.shape()[0], b.shape()[0]))
}

/// The three Gram blocks for one kernel, sharing pairwise distances across
/// Gaussian bandwidths.
struct Blocks {
    sq: Option<(Var, Var, Var)>,
}

impl Blocks {
    fn grams(&mut self, tape: &mut Tape, spec: &KernelSpec, x: Var, y: Var) -> Result<(Var, Var, Var)> {
        match *spec {
            KernelSpec::Gaussian { sigma } => {
                if self.sq.is_none() {
                    let dxx = tape.pairwise_sq_dist(x, x)?;
                    let dyy = tape.pairwise_sq_dist(y, y)?;
                    let dxy = tape.pairwise_sq_dist(x, y)?;
                    self.sq = Some((dxx, dyy, dxy));
                }
                let (dxx, dyy, dxy) = self.sq.unwrap();
                Ok((
                    gaussian_from_sq_dist(tape, dxx, sigma)?,
                    gaussian_from_sq_dist(tape, dyy, sigma)?,
                    gaussian_from_sq_dist(tape, dxy, sigma)?,
                ))
            }
            _ => Ok((
                gram_var(tape, spec, x, x)?,
                gram_var(tape, spec, y, y)?,
                gram_var(tape, spec, x, y)?,
            )),
        }
    }
}

fn accumulate(tape: &mut Tape, acc: Option<Var>, term: Var) -> Result<Var> {
    match acc {
        None => Ok(term),
        Some(a) => tape.add(a, term),
    }
}

/// Biased (V-statistic) MMD² under `Σ β_u k_u`, for any kernel list including cosine.
pub fn weighted_mmd2_biased(tape: &mut Tape, x: Var, y: Var, entries: &[(f64, KernelSpec)]) -> Result<Var> {
    check_samples("mmd2_biased", tape, x, y)?;
    if entries.is_empty() {
        return Err(PadError::InvalidArgument("mmd2_biased: no kernels".into()));
    }
    let (x, y) = canonical(tape, x, y);
    let mut blocks = Blocks { sq: None };
    let mut total = None;
    for (beta, spec) in entries {
        let (kxx, kyy, kxy) = blocks.grams(tape, spec, x, y)?;
        let mxx = tape.mean(kxx)?;
        let myy = tape.mean(kyy)?;
        let mxy = tape.mean(kxy)?;
        let within = tape.add(mxx, myy)?;
        let cross = tape.scale(mxy, -2.0)?;
        let term = tape.add(within, cross)?;
        let term = tape.scale(term, *beta)?;
        total = Some(accumulate(tape, total, term)?);
    }
    Ok(total.expect("non-empty"))
}

/// `mean K_XX + mean K_YY − 2 mean K_XY`, summed over the bank with weights β.
pub fn mmd2_biased(tape: &mut Tape, x: Var, y: Var, mk: &MultiKernel) -> Result<Var> {
    weighted_mmd2_biased(tape, x, y, mk.entries())
}

/// Unbiased U-statistic over `i ≠ j`:
/// `Σ_{i≠j} [k(x_i,x_j) + k(y_i,y_j) − k(x_i,y_j) − k(x_j,y_i)] / n(n−1)`.
pub fn mmd2_unbiased(tape: &mut Tape, x: Var, y: Var, mk: &MultiKernel) -> Result<Var> {
    let (n, m) = check_samples("mmd2_unbiased", tape, x, y)?;
    if n != m || n < 2 {
        return Err(PadError::InvalidArgument(format!(
            "mmd2_unbiased needs equal sample sizes >= 2, got {n} and {m}"
        )));
    }
    let (x, y) = canonical(tape, x, y);
    let off_diag = tape.constant(Tensor::from_fn(&[n, n], |k| if k / n == k % n { 0.0 } else { 1.0 }));
    let norm = 1.0 / (n * (n - 1)) as f64;
    let mut blocks = Blocks { sq: None };
    let mut total = None;
    for (beta, spec) in mk.entries() {
        let (kxx, kyy, kxy) = blocks.grams(tape, spec, x, y)?;
        let mut sums = [kxx, kyy, kxy];
        for s in sums.iter_mut() {
            let masked = tape.mul(*s, off_diag)?;
            *s = tape.sum(masked)?;
        }
        let within = tape.add(sums[0], sums[1])?;
        let cross = tape.scale(sums[2], -2.0)?;
        let term = tape.add(within, cross)?;
        let term = tape.scale(term, beta * norm)?;
        total = Some(accumulate(tape, total, term)?);
    }
    Ok(total.expect("non-empty"))
}

pub fn mmd2_biased_value(x: &Tensor, y: &Tensor, mk: &MultiKernel) -> Result<f64> {
    let mut tape = Tape::new();
    let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
    let v = mmd2_biased(&mut tape, xv, yv, mk)?;
    Ok(tape.scalar(v))
}

pub fn mmd2_unbiased_value(x: &Tensor, y: &Tensor, mk: &MultiKernel) -> Result<f64> {
    let mut tape = Tape::new();
    let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
    let v = mmd2_unbiased(&mut tape, xv, yv, mk)?;
    Ok(tape.scalar(v))
}
