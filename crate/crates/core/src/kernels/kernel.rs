use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{dot, sq_dist, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `exp(−‖x−y‖² / 2σ²)`
    Gaussian { sigma: f64 },
    /// `exp(−‖x−y‖₁ / σ²)`
    Laplacian { sigma: f64 },
    /// `⟨x, y⟩`
    Linear,
    /// `1 − ⟨x/‖x‖, y/‖y‖⟩`; a distance rather than a positive-definite kernel.
    Cosine,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { sigma } | KernelSpec::Laplacian { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(PadError::InvalidArgument(format!(
                        "kernel bandwidth must be > 0, got {sigma}"
                    )));
                }
            }
            KernelSpec::Linear | KernelSpec::Cosine => {}
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Laplacian { .. } => "laplacian",
            KernelSpec::Linear => "linear",
            KernelSpec::Cosine => "cosine",
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.validate()?;
    if x.len() != y.len() {
        return Err(PadError::shape(
            "kernel_eval",
            format!("dim {} vs {}", x.len(), y.len()),
        ));
    }
    Ok(match *spec {
        KernelSpec::Gaussian { sigma } => (-sq_dist(x, y) / (2.0 * sigma * sigma)).exp(),
        KernelSpec::Laplacian { sigma } => {
            let l1: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
            (-l1 / (sigma * sigma)).exp()
        }
        KernelSpec::Linear => dot(x, y),
        KernelSpec::Cosine => {
            let (nx, ny) = (dot(x, x).sqrt(), dot(y, y).sqrt());
            if nx == 0.0 || ny == 0.0 {
                return Err(PadError::domain("kernel_eval", "cosine kernel on a zero-norm vector"));
            }
            1.0 - dot(x, y) / (nx * ny)
        }
    })
}

fn check_pair(op: &'static str, x: &Tensor, y: &Tensor) -> Result<()> {
    if x.rank() != 2 || y.rank() != 2 || x.shape()[1] != y.shape()[1] {
        return Err(PadError::shape(op, format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(())
}

/// Entry `(i, j)` is `kernel_eval(spec, X_i, Y_j)`.
pub fn gram_matrix(spec: &KernelSpec, x: &Tensor, y: &Tensor) -> Result<Tensor> {
    check_pair("gram_matrix", x, y)?;
    let (n, m) = (x.shape()[0], y.shape()[0]);
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            out.push(kernel_eval(spec, x.row(i), y.row(j))?);
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Differentiable Gram matrix on the tape.
pub fn gram_var(tape: &mut Tape, spec: &KernelSpec, x: Var, y: Var) -> Result<Var> {
    spec.validate()?;
    check_pair("gram_var", tape.value(x), tape.value(y))?;
    match *spec {
        KernelSpec::Gaussian { sigma } => {
            let d = tape.pairwise_sq_dist(x, y)?;
            gaussian_from_sq_dist(tape, d, sigma)
        }
        KernelSpec::Laplacian { sigma } => {
            let d = tape.pairwise_l1(x, y)?;
            let s = tape.scale(d, -1.0 / (sigma * sigma))?;
            tape.exp(s)
        }
        KernelSpec::Linear => {
            let yt = tape.transpose(y)?;
            tape.matmul(x, yt)
        }
        KernelSpec::Cosine => {
            let xn = tape.normalize_rows(x)?;
            let yn = tape.normalize_rows(y)?;
            let yt = tape.transpose(yn)?;
            let sim = tape.matmul(xn, yt)?;
            let neg = tape.scale(sim, -1.0)?;
            tape.add_scalar(neg, 1.0)
        }
    }
}

pub(crate) fn gaussian_from_sq_dist(tape: &mut Tape, d: Var, sigma: f64) -> Result<Var> {
    let s = tape.scale(d, -1.0 / (2.0 * sigma * sigma))?;
    tape.exp(s)
}

/// Non-negative combination `Σ β_u k_u` of kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiKernel {
    entries: Vec<(f64, KernelSpec)>,
}

impl MultiKernel {
    /// Cosine is rejected: it is not a positive-definite kernel.
    pub fn new(entries: Vec<(f64, KernelSpec)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(PadError::InvalidArgument(
                "multi-kernel needs at least one kernel".into(),
            ));
        }
        for (beta, spec) in &entries {
            spec.validate()?;
            if !(*beta >= 0.0 && beta.is_finite()) {
                return Err(PadError::InvalidArgument(format!(
                    "kernel weight must be >= 0, got {beta}"
                )));
            }
            if matches!(spec, KernelSpec::Cosine) {
                return Err(PadError::InvalidArgument(
                    "cosine is a distance, not admissible in a multi-kernel bank".into(),
                ));
            }
        }
        Ok(MultiKernel { entries })
    }

    /// Uniform weights scaled so that `Σ β = total`.
    pub fn uniform(specs: Vec<KernelSpec>, total: f64) -> Result<Self> {
        if !(total > 0.0) {
            return Err(PadError::InvalidArgument(format!(
                "kernel weight total must be > 0, got {total}"
            )));
        }
        let beta = total / specs.len().max(1) as f64;
        Self::new(specs.into_iter().map(|s| (beta, s)).collect())
    }

    /// Five Gaussians with `σ = 2^s`, `s ∈ {−3, −2, −1, 0, 1}`, unit weights.
    pub fn default_gaussian_bank() -> Self {
        let entries = (-3..=1)
            .map(|s| (1.0, KernelSpec::Gaussian { sigma: 2f64.powi(s) }))
            .collect();
        MultiKernel { entries }
    }

    pub fn single(spec: KernelSpec) -> Result<Self> {
        Self::new(vec![(1.0, spec)])
    }

    pub fn entries(&self) -> &[(f64, KernelSpec)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn beta_sum(&self) -> f64 {
        self.entries.iter().map(|(b, _)| b).sum()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for (beta, spec) in &self.entries {
            s += beta * kernel_eval(spec, x, y)?;
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        let g = KernelSpec::Gaussian { sigma: 1.0 };
        assert_eq!(kernel_eval(&g, &[0.3, 0.1], &[0.3, 0.1]).unwrap(), 1.0);
        assert_eq!(
            kernel_eval(&KernelSpec::Linear, &[1.0, 2.0], &[3.0, 4.0]).unwrap(),
            11.0
        );
        let v = kernel_eval(&g, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        let l = kernel_eval(&KernelSpec::Laplacian { sigma: 2.0 }, &[0.0], &[2.0]).unwrap();
        assert!((l - (-0.5f64).exp()).abs() < 1e-15);
        let c = kernel_eval(&KernelSpec::Cosine, &[1.0, 0.0], &[0.0, 3.0]).unwrap();
        assert_eq!(c, 1.0);
    }

    #[test]
    fn errors() {
        assert!(kernel_eval(&KernelSpec::Linear, &[1.0], &[1.0, 2.0]).is_err());
        assert!(kernel_eval(&KernelSpec::Cosine, &[0.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(kernel_eval(&KernelSpec::Gaussian { sigma: 0.0 }, &[1.0], &[1.0]).is_err());
        assert!(MultiKernel::new(vec![(1.0, KernelSpec::Cosine)]).is_err());
        assert!(MultiKernel::new(vec![(-1.0, KernelSpec::Linear)]).is_err());
        assert!(MultiKernel::new(vec![]).is_err());
    }

    #[test]
    fn default_bank() {
        let mk = MultiKernel::default_gaussian_bank();
        assert_eq!(mk.len(), 5);
        assert_eq!(mk.beta_sum(), 5.0);
        let sigmas: Vec<f64> = mk
            .entries()
            .iter()
            .map(|(_, s)| match s {
                KernelSpec::Gaussian { sigma } => *sigma,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(sigmas, vec![0.125, 0.25, 0.5, 1.0, 2.0]);
    }

    #[test]
    fn gram_var_matches_elementwise() {
        let x = Tensor::from_fn(&[3, 2], |k| (k as f64 * 0.7).sin());
        let y = Tensor::from_fn(&[2, 2], |k| (k as f64 * 1.3).cos() + 0.2);
        for spec in [
            KernelSpec::Gaussian { sigma: 0.5 },
            KernelSpec::Laplacian { sigma: 1.5 },
            KernelSpec::Linear,
            KernelSpec::Cosine,
        ] {
            let mut tape = Tape::new();
            let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
            let g = gram_var(&mut tape, &spec, xv, yv).unwrap();
            let oracle = gram_matrix(&spec, &x, &y).unwrap();
            for (a, b) in tape.value(g).data().iter().zip(oracle.data()) {
                assert!((a - b).abs() < 1e-12, "{spec:?}");
            }
        }
    }
}
