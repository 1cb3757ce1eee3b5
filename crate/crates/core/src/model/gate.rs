use rand::Rng;
use serde::Serialize;

use super::layers::normal_tensor;
use crate::error::Result;
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Per-expert gate scorer:
/// `relu(e_b W_b + pooled W_p + target W_t + b₁) · w₂ + b₂`.
#[derive(Clone, Debug)]
pub(crate) struct GateNet {
    pub wb: ParamId,
    pub wp: ParamId,
    pub wt: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl GateNet {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_b: usize,
        d: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut mk = |t: &str, shape: &[usize], fan_in: usize| {
            store.add(
                &format!("{name}.{t}"),
                normal_tensor(rng, shape, (1.0 / fan_in as f64).sqrt()),
            )
        };
        let wb = mk("wb", &[d_b, hidden], d_b)?;
        let wp = mk("wp", &[d, hidden], d)?;
        let wt = mk("wt", &[d, hidden], d)?;
        let w2 = mk("w2", &[hidden, 1], hidden)?;
        let b1 = store.add(&format!("{name}.b1"), Tensor::zeros(&[hidden]))?;
        let b2 = store.add(&format!("{name}.b2"), Tensor::zeros(&[1]))?;
        Ok(GateNet { wb, wp, wt, b1, w2, b2 })
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.wb, self.wp, self.wt, self.b1, self.w2, self.b2]
    }

    /// `[N, 1]` gate logits.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bucket_emb: Var,
        pooled: Var,
        target: Var,
    ) -> Result<Var> {
        let p = |tape: &mut Tape, id| tape.param(store, id);
        let (wb, wp, wt, b1, w2, b2) = (
            p(tape, self.wb),
            p(tape, self.wp),
            p(tape, self.wt),
            p(tape, self.b1),
            p(tape, self.w2),
            p(tape, self.b2),
        );
        let a = tape.matmul(bucket_emb, wb)?;
        let bp = tape.matmul(pooled, wp)?;
        let c = tape.matmul(target, wt)?;
        let h = tape.add(a, bp)?;
        let h = tape.add(h, c)?;
        let h = tape.add(h, b1)?;
        let h = tape.relu(h)?;
        let o = tape.matmul(h, w2)?;
        tape.add(o, b2)
    }
}

/// Running summary of emitted gate-weight rows.
#[derive(Clone, Debug, Serialize)]
pub struct GateStats {
    pub experts: Vec<String>,
    pub rows: u64,
    pub min_weight: f64,
    pub max_sum_error: f64,
    /// Per bucket: mean weight of each expert.
    pub bucket_mean_weights: Vec<Vec<f64>>,
    pub bucket_rows: Vec<u64>,
    #[serde(skip)]
    sums: Vec<Vec<f64>>,
}

impl GateStats {
    pub fn new(experts: &[super::Expert], buckets: usize) -> Self {
        GateStats {
            experts: experts.iter().map(|e| e.name().to_string()).collect(),
            rows: 0,
            min_weight: f64::INFINITY,
            max_sum_error: 0.0,
            bucket_mean_weights: vec![vec![0.0; experts.len()]; buckets],
            bucket_rows: vec![0; buckets],
            sums: vec![vec![0.0; experts.len()]; buckets],
        }
    }

    /// `weights` is row-major `[rows, E]`; `buckets[r]` is the bucket of row `r`'s target.
    pub fn observe(&mut self, weights: &[f64], buckets: &[usize]) {
        let e = self.experts.len();
        for (row, &b) in weights.chunks(e).zip(buckets) {
            self.rows += 1;
            let mut s = 0.0;
            for (k, &w) in row.iter().enumerate() {
                self.min_weight = self.min_weight.min(w);
                s += w;
                self.sums[b][k] += w;
            }
            self.max_sum_error = self.max_sum_error.max((s - 1.0).abs());
            self.bucket_rows[b] += 1;
        }
        for (b, sums) in self.sums.iter().enumerate() {
            let n = self.bucket_rows[b].max(1) as f64;
            self.bucket_mean_weights[b] = sums.iter().map(|v| v / n).collect();
        }
    }

    pub fn merge(&mut self, other: &GateStats) {
        self.rows += other.rows;
        self.min_weight = self.min_weight.min(other.min_weight);
        self.max_sum_error = self.max_sum_error.max(other.max_sum_error);
        for b in 0..self.sums.len() {
            self.bucket_rows[b] += other.bucket_rows[b];
            for k in 0..self.sums[b].len() {
                self.sums[b][k] += other.sums[b][k];
            }
            let n = self.bucket_rows[b].max(1) as f64;
            self.bucket_mean_weights[b] = self.sums[b].iter().map(|v| v / n).collect();
        }
    }

    /// Every observed row lies on the simplex within `tol`.
    pub fn on_simplex(&self, tol: f64) -> bool {
        self.rows > 0 && self.min_weight >= 0.0 && self.max_sum_error < tol
    }
}
