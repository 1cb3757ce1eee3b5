use crate::error::{PadError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `−Σ_i log( exp(s_ii/τ) / Σ_j exp(s_ij/τ) )` with cosine similarity `s`.
///
/// Row `i` of `x` and row `i` of `x_pos` form the positive pair; every other
/// row of `x_pos` is a negative for row `i`.
pub fn infonce_loss(tape: &mut Tape, x: Var, x_pos: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(PadError::InvalidArgument(format!(
            "infonce temperature must be > 0, got {temperature}"
        )));
    }
    let (a, b) = (tape.shape(x).to_vec(), tape.shape(x_pos).to_vec());
    if a.len() != 2 || a != b {
        return Err(PadError::shape("infonce_loss", format!("{a:?} vs {b:?}")));
    }
    let n = a[0];
    if n < 2 {
        return Err(PadError::InvalidArgument(format!("infonce_loss needs n >= 2, got {n}")));
    }
    let xn = tape.normalize_rows(x)?;
    let pn = tape.normalize_rows(x_pos)?;
    let pt = tape.transpose(pn)?;
    let sim = tape.matmul(xn, pt)?;
    let z = tape.scale(sim, 1.0 / temperature)?;
    // Cosine similarity is at most 1, so shifting by 1/τ keeps exp in range.
    let shift = 1.0 / temperature;
    let shifted = tape.add_scalar(z, -shift)?;
    let e = tape.exp(shifted)?;
    let row_sums = tape.sum_axis(e, 1)?;
    let lse = tape.log(row_sums)?;
    let lse_total = tape.sum(lse)?;
    let eye = tape.constant(Tensor::identity(n));
    let diag = tape.mul(z, eye)?;
    let diag_total = tape.sum(diag)?;
    let neg_diag = tape.scale(diag_total, -1.0)?;
    let loss = tape.add(lse_total, neg_diag)?;
    tape.add_scalar(loss, n as f64 * shift)
}

pub fn infonce_value(x: &Tensor, x_pos: &Tensor, temperature: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(x.clone()), tape.constant(x_pos.clone()));
    let l = infonce_loss(&mut tape, a, b, temperature)?;
    Ok(tape.scalar(l))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_pair() {
        let x = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = infonce_value(&x, &x, 1.0).unwrap();
        let expect = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
    }

    #[test]
    fn hot_temperature_is_uniform() {
        let x = Tensor::from_fn(&[5, 3], |k| (k as f64 * 0.77).sin() + 0.1);
        let y = Tensor::from_fn(&[5, 3], |k| (k as f64 * 0.31).cos());
        let v = infonce_value(&x, &y, 1e6).unwrap();
        assert!((v - 5.0 * 5f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_input() {
        let x = Tensor::from_fn(&[3, 2], |k| k as f64 + 1.0);
        assert!(infonce_value(&x, &x, 0.0).is_err());
        let z = Tensor::zeros(&[3, 2]);
        assert!(infonce_value(&x, &z, 1.0).is_err());
        let one = Tensor::from_fn(&[1, 2], |_| 1.0);
        assert!(infonce_value(&one, &one, 1.0).is_err());
    }
}
