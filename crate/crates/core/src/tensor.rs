//! Dense row-major `f64` tensors and the raw numeric kernels the tape is built on.

use crate::error::{PadError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(PadError::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |k| if k / n == k % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `[numel / last_dim, last_dim]`.
    pub fn outer(&self) -> usize {
        self.numel().checked_div(self.last_dim()).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.last_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn item(&self) -> Option<f64> {
        if self.data.len() == 1 {
            Some(self.data[0])
        } else {
            None
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// FNV-1a over the raw bit patterns; used to check frozen tensors stay untouched.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for d in &self.shape {
            h = fnv_step(h, *d as u64);
        }
        for v in &self.data {
            h = fnv_step(h, v.to_bits());
        }
        h
    }
}

fn fnv_step(mut h: u64, word: u64) -> u64 {
    for b in word.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// `c[n×m] += a[n×k] · b[k×m]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    // four output rows per pass share each `b` row; per-element order is unchanged
    let mut i = 0;
    while i + 4 <= n {
        let (c0, rest) = c[i * m..(i + 4) * m].split_at_mut(m);
        let (c1, rest) = rest.split_at_mut(m);
        let (c2, c3) = rest.split_at_mut(m);
        for p in 0..k {
            let (a0, a1, a2, a3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
            let brow = &b[p * m..(p + 1) * m];
            for j in 0..m {
                let bv = brow[j];
                c0[j] += a0 * bv;
                c1[j] += a1 * bv;
                c2[j] += a2 * bv;
                c3[j] += a3 * bv;
            }
        }
        i += 4;
    }
    for i in i..n {
        let crow = &mut c[i * m..(i + 1) * m];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * m..(p + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[n×m] += a[n×k] · b[m×k]ᵀ`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * m..(i + 1) * m];
        let mut j = 0;
        while j + 4 <= m {
            let d = dot4(arow, &b[j * k..(j + 4) * k], k);
            for (cv, dv) in crow[j..j + 4].iter_mut().zip(d) {
                *cv += dv;
            }
            j += 4;
        }
        for j in j..m {
            crow[j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[k×m] += a[n×k]ᵀ · b[n×m]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    // four output rows per pass; each element still accumulates over `i` ascending
    let mut p = 0;
    while p + 4 <= k {
        let (c0, rest) = c[p * m..(p + 4) * m].split_at_mut(m);
        let (c1, rest) = rest.split_at_mut(m);
        let (c2, c3) = rest.split_at_mut(m);
        for i in 0..n {
            let ar = &a[i * k + p..i * k + p + 4];
            let (a0, a1, a2, a3) = (ar[0], ar[1], ar[2], ar[3]);
            let brow = &b[i * m..(i + 1) * m];
            for j in 0..m {
                let bv = brow[j];
                c0[j] += a0 * bv;
                c1[j] += a1 * bv;
                c2[j] += a2 * bv;
                c3[j] += a3 * bv;
            }
        }
        p += 4;
    }
    for p in p..k {
        let crow = &mut c[p * m..(p + 1) * m];
        for i in 0..n {
            let av = a[i * k + p];
            let brow = &b[i * m..(i + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Four dot products of `a` with consecutive length-`k` rows of `b`, each
/// bit-identical to [`dot`].
#[inline]
fn dot4(a: &[f64], b: &[f64], k: usize) -> [f64; 4] {
    let (b0, b1, b2, b3) = (&b[..k], &b[k..2 * k], &b[2 * k..3 * k], &b[3 * k..4 * k]);
    let mut acc = [[0.0f64; 4]; 4];
    let chunks = k / 4;
    for c in 0..chunks {
        let o = c * 4;
        for l in 0..4 {
            let av = a[o + l];
            acc[0][l] += av * b0[o + l];
            acc[1][l] += av * b1[o + l];
            acc[2][l] += av * b2[o + l];
            acc[3][l] += av * b3[o + l];
        }
    }
    let mut out = [0.0; 4];
    for (r, (s, row)) in out.iter_mut().zip([b0, b1, b2, b3]).enumerate() {
        let acc = acc[r];
        *s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for o in chunks * 4..k {
            *s += a[o] * row[o];
        }
    }
    out
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let o = c * 4;
        acc[0] += a[o] * b[o];
        acc[1] += a[o + 1] * b[o + 1];
        acc[2] += a[o + 2] * b[o + 2];
        acc[3] += a[o + 3] * b[o + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for o in chunks * 4..a.len() {
        s += a[o] * b[o];
    }
    s
}

/// Plain matrix product of two rank-2 tensors, outside any tape.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(PadError::shape("matmul", format!("{:?} x {:?}", a.shape, b.shape)));
    }
    let (n, k, m) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; n * m];
    gemm_nn(&a.data, &b.data, &mut out, n, k, m);
    Tensor::new(vec![n, m], out)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Squared Euclidean distance.
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn identity_matmul() {
        let a = Tensor::from_fn(&[3, 4], |k| k as f64 * 0.5 - 1.0);
        let out = matmul(&Tensor::identity(3), &a).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn gemm_variants_agree() {
        let a = Tensor::from_fn(&[3, 5], |k| (k as f64).sin());
        let b = Tensor::from_fn(&[5, 2], |k| (k as f64).cos());
        let mut bt = vec![0.0; 10];
        for i in 0..5 {
            for j in 0..2 {
                bt[j * 5 + i] = b.data[i * 2 + j];
            }
        }
        let mut c1 = vec![0.0; 6];
        let mut c2 = vec![0.0; 6];
        gemm_nn(&a.data, &b.data, &mut c1, 3, 5, 2);
        gemm_nt(&a.data, &bt, &mut c2, 3, 5, 2);
        for (x, y) in c1.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-12);
        }
        // aᵀ·a via tn against the nn product with an explicit transpose
        let mut at = vec![0.0; 15];
        for i in 0..3 {
            for j in 0..5 {
                at[j * 3 + i] = a.data[i * 5 + j];
            }
        }
        let mut c3 = vec![0.0; 25];
        let mut c4 = vec![0.0; 25];
        gemm_tn(&a.data, &a.data, &mut c3, 3, 5, 5);
        gemm_nn(&at, &a.data, &mut c4, 5, 3, 5);
        for (x, y) in c3.iter().zip(&c4) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn checksum_sees_single_bit() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let mut b = a.clone();
        b.data_mut()[1] = f64::from_bits(2.0f64.to_bits() + 1);
        assert_ne!(a.checksum(), b.checksum());
    }

    #[test]
    fn stable_sigmoid_softplus() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }
}
