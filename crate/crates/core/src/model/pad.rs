//! The three-expert model.
//!
//! Item representations per expert:
//! - id: `collab_rec[i]`
//! - align: `fuse([mlp_align(SG(text[i])) ‖ collab_align[i]])`
//! - llm: `mlp_llm(SG(text[i]))`
//!
//! Each expert runs its own encoder over its representations of the behavior
//! sequence and scores a target by dot product. The fused logit is a
//! softmax-gated sum of the expert logits, with gate inputs built from the
//! target's frequency bucket, the expert's mean-pooled behaviors and the
//! expert's target representation.

use rand_chacha::ChaCha8Rng;

use super::batch::Batch;
use super::config::{Expert, GateMode, ModelConfig};
use super::encoder::Encoder;
use super::gate::GateNet;
use super::layers::{normal_tensor, Linear, Mlp};
use crate::error::{PadError, Result};
use crate::param::{ParamId, ParamStore};
use crate::seed;
use crate::tape::{Tape, Var};
use crate::tensor::{dot, Tensor};

pub const TEXT_PARAM: &str = "text";

/// How expert logits become the model logit.
#[derive(Clone, Debug, PartialEq)]
pub enum Fusion {
    Single(Expert),
    Gated { experts: Vec<Expert>, mode: GateMode },
}

impl Fusion {
    pub fn experts(&self) -> Vec<Expert> {
        match self {
            Fusion::Single(e) => vec![*e],
            Fusion::Gated { experts, .. } => experts.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Fusion::Gated { experts, .. } = self {
            if experts.is_empty() {
                return Err(PadError::Config("expert mask must not be empty".into()));
            }
            let mut sorted = experts.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != experts.len() {
                return Err(PadError::Config("expert mask lists an expert twice".into()));
            }
        }
        Ok(())
    }
}

/// Parameter groups; each phase trains a subset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    IdTable,
    IdEncoder,
    AlignTable,
    AlignMlp,
    AlignFuse,
    AlignEncoder,
    LlmMlp,
    LlmEncoder,
    Gate,
}

pub struct BatchOutput {
    /// `[2n]`: positive logits then negative logits.
    pub logits: Var,
    pub labels: Vec<f64>,
    /// `[2n, E]` gate weights when gated.
    pub gate_weights: Option<Var>,
    /// Target bucket of each logit row.
    pub row_buckets: Vec<usize>,
}

pub struct PadModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    text: ParamId,
    collab_rec: ParamId,
    collab_align: ParamId,
    mlp_align: Mlp,
    fuse: Linear,
    mlp_llm: Mlp,
    encoders: [Encoder; 3],
    gate_bucket: ParamId,
    gates: [GateNet; 3],
    gate_global: ParamId,
    buckets: Vec<usize>,
}

impl PadModel {
    /// Fresh model; all learnable tensors drawn from the `init` stream of `master_seed`.
    pub fn new(config: ModelConfig, text: Tensor, buckets: Vec<usize>, master_seed: u64) -> Result<Self> {
        config.validate()?;
        if text.shape() != [config.n_items, config.d_t] {
            return Err(PadError::shape(
                "model",
                format!(
                    "text matrix {:?}, expected [{}, {}]",
                    text.shape(),
                    config.n_items,
                    config.d_t
                ),
            ));
        }
        if buckets.len() != config.n_items || buckets.iter().any(|&b| b >= config.buckets) {
            return Err(PadError::InvalidArgument(
                "bucket map does not cover the catalog".into(),
            ));
        }
        // Each component draws from its own stream, so the presence or shape of
        // one component never shifts another's initial values.
        let init = seed::derive(master_seed, seed::INIT);
        let rng = |name: &str| -> ChaCha8Rng { seed::rng(init, name) };
        let mut store = ParamStore::new();
        let (v, d) = (config.n_items, config.d_c);
        let text = store.add_frozen(TEXT_PARAM, text)?;
        let collab_rec = store.add(
            "collab_rec",
            normal_tensor(&mut rng("collab_rec"), &[v, d], config.init_std),
        )?;
        let collab_align = store.add(
            "collab_align",
            normal_tensor(&mut rng("collab_align"), &[v, d], config.init_std),
        )?;
        let mlp_align = Mlp::new(&mut store, "mlp_align", config.d_t, d, d, &mut rng("mlp_align"))?;
        let mut fuse_rng = rng("fuse");
        let fuse = Linear::new(&mut store, "fuse", 2 * d, d, &mut fuse_rng)?;
        // Text half starts small, collaborative half starts as the identity.
        let small = normal_tensor(&mut fuse_rng, &[d, d], 0.01);
        let w = Tensor::from_fn(&[2 * d, d], |k| {
            let (r, c) = (k / d, k % d);
            if r < d {
                small.data()[r * d + c]
            } else if r - d == c {
                1.0
            } else {
                0.0
            }
        });
        store.assign(fuse.w, &w)?;
        let mlp_llm = Mlp::new(&mut store, "mlp_llm", config.d_t, d, d, &mut rng("mlp_llm"))?;
        let encoders = [
            Encoder::new(&mut store, "enc_id", &config, &mut rng("enc_id"))?,
            Encoder::new(&mut store, "enc_align", &config, &mut rng("enc_align"))?,
            Encoder::new(&mut store, "enc_llm", &config, &mut rng("enc_llm"))?,
        ];
        let mut gate_rng = rng("gate");
        let gate_bucket = store.add_no_decay(
            "gate.bucket",
            normal_tensor(&mut gate_rng, &[config.buckets, config.d_b], 0.1),
        )?;
        let gates = [
            GateNet::new(&mut store, "gate.id", config.d_b, d, config.gate_hidden, &mut gate_rng)?,
            GateNet::new(
                &mut store,
                "gate.align",
                config.d_b,
                d,
                config.gate_hidden,
                &mut gate_rng,
            )?,
            GateNet::new(&mut store, "gate.llm", config.d_b, d, config.gate_hidden, &mut gate_rng)?,
        ];
        let gate_global = store.add("gate.global", Tensor::zeros(&[3, 1]))?;
        Ok(PadModel {
            config,
            store,
            text,
            collab_rec,
            collab_align,
            mlp_align,
            fuse,
            mlp_llm,
            encoders,
            gate_bucket,
            gates,
            gate_global,
            buckets,
        })
    }

    pub fn buckets(&self) -> &[usize] {
        &self.buckets
    }

    pub fn text_id(&self) -> ParamId {
        self.text
    }

    pub fn collab_rec_id(&self) -> ParamId {
        self.collab_rec
    }

    pub fn collab_align_id(&self) -> ParamId {
        self.collab_align
    }

    pub fn encoder(&self, e: Expert) -> &Encoder {
        &self.encoders[e.index()]
    }

    pub fn text_checksum(&self) -> u64 {
        self.store.value(self.text).checksum()
    }

    pub fn group(&self, g: ParamGroup) -> Vec<ParamId> {
        match g {
            ParamGroup::IdTable => vec![self.collab_rec],
            ParamGroup::IdEncoder => self.encoders[0].params(),
            ParamGroup::AlignTable => vec![self.collab_align],
            ParamGroup::AlignMlp => self.mlp_align.params(),
            ParamGroup::AlignFuse => self.fuse.params(),
            ParamGroup::AlignEncoder => self.encoders[1].params(),
            ParamGroup::LlmMlp => self.mlp_llm.params(),
            ParamGroup::LlmEncoder => self.encoders[2].params(),
            ParamGroup::Gate => {
                let mut p = vec![self.gate_bucket, self.gate_global];
                for g in &self.gates {
                    p.extend(g.params());
                }
                p
            }
        }
    }

    pub fn groups(&self, gs: &[ParamGroup]) -> Vec<ParamId> {
        gs.iter().flat_map(|&g| self.group(g)).collect()
    }

    /// Gate parameters that influence the fused logit for this expert set.
    pub fn gate_params(&self, experts: &[Expert], mode: GateMode) -> Vec<ParamId> {
        match mode {
            GateMode::FrequencyAware => {
                let mut p = vec![self.gate_bucket];
                for e in experts {
                    p.extend(self.gates[e.index()].params());
                }
                p
            }
            GateMode::GlobalLearned => vec![self.gate_global],
        }
    }

    /// Parameters of one expert (table/projection, encoder).
    pub fn expert_params(&self, e: Expert) -> Vec<ParamId> {
        match e {
            Expert::Id => self.groups(&[ParamGroup::IdTable, ParamGroup::IdEncoder]),
            Expert::Align => self.groups(&[
                ParamGroup::AlignTable,
                ParamGroup::AlignMlp,
                ParamGroup::AlignFuse,
                ParamGroup::AlignEncoder,
            ]),
            Expert::Llm => self.groups(&[ParamGroup::LlmMlp, ParamGroup::LlmEncoder]),
        }
    }

    /// Start the alignment expert from the recommendation expert.
    pub fn copy_id_into_align(&mut self) -> Result<()> {
        let v = self.store.value(self.collab_rec).clone();
        self.store.assign(self.collab_align, &v)?;
        let (dst, src) = (self.encoders[1].clone(), self.encoders[0].clone());
        dst.copy_from(&mut self.store, &src)
    }

    /// Frozen text rows behind a stop-gradient.
    pub fn text_rows(&self, tape: &mut Tape, items: &[usize]) -> Result<Var> {
        let t = tape.embed(&self.store, self.text, items)?;
        tape.detach(t)
    }

    /// `(mlp_align(SG(text[items])), collab_align[items])`.
    pub fn align_parts(&self, tape: &mut Tape, items: &[usize]) -> Result<(Var, Var)> {
        let t = self.text_rows(tape, items)?;
        let proj = self.mlp_align.forward(tape, &self.store, t)?;
        let collab = tape.embed(&self.store, self.collab_align, items)?;
        Ok((proj, collab))
    }

    fn fuse_align(&self, tape: &mut Tape, proj: Var, collab: Var) -> Result<Var> {
        let cat = tape.concat(&[proj, collab], 1)?;
        self.fuse.forward(tape, &self.store, cat)
    }

    /// `[items, d_c]` representations under expert `e`.
    pub fn item_reps(&self, tape: &mut Tape, e: Expert, items: &[usize]) -> Result<Var> {
        match e {
            Expert::Id => tape.embed(&self.store, self.collab_rec, items),
            Expert::Align => {
                let (p, c) = self.align_parts(tape, items)?;
                self.fuse_align(tape, p, c)
            }
            Expert::Llm => {
                let t = self.text_rows(tape, items)?;
                self.mlp_llm.forward(tape, &self.store, t)
            }
        }
    }

    /// Logits for every (position, positive) and (position, negative) pair in `batch`.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch, fusion: &Fusion) -> Result<BatchOutput> {
        fusion.validate()?;
        let n = batch.n_targets();
        if n == 0 {
            return Err(PadError::InvalidArgument("batch has no targets".into()));
        }
        let d = self.config.d_c;
        let rows: Vec<usize> = batch.positions.iter().chain(&batch.positions).copied().collect();
        let target_slots: Vec<usize> = batch.pos_slots.iter().chain(&batch.neg_slots).copied().collect();
        let target_items: Vec<usize> = batch.pos_items.iter().chain(&batch.neg_items).copied().collect();
        let row_buckets: Vec<usize> = target_items.iter().map(|&i| self.buckets[i]).collect();
        let mut labels = vec![1.0; n];
        labels.extend(std::iter::repeat_n(0.0, n));

        let experts = fusion.experts();
        let gated = matches!(
            fusion,
            Fusion::Gated {
                mode: GateMode::FrequencyAware,
                ..
            }
        );
        let bucket_emb = if gated {
            Some(tape.embed(&self.store, self.gate_bucket, &row_buckets)?)
        } else {
            None
        };
        let mut logits = Vec::with_capacity(experts.len());
        let mut gate_logits = Vec::with_capacity(experts.len());
        for &e in &experts {
            let reps = self.item_reps(tape, e, &batch.items)?;
            let x = tape.gather_rows(reps, &batch.input_slots)?;
            let x = tape.reshape(x, &[batch.b, batch.t, d])?;
            let h = self.encoders[e.index()].forward(tape, &self.store, x)?;
            let h = tape.reshape(h, &[batch.b * batch.t, d])?;
            let user = tape.gather_rows(h, &rows)?;
            let target = tape.gather_rows(reps, &target_slots)?;
            let prod = tape.mul(user, target)?;
            let o = tape.sum_axis(prod, 1)?;
            logits.push(tape.reshape(o, &[2 * n, 1])?);
            if let Some(eb) = bucket_emb {
                let pooled = tape.prefix_mean(x)?;
                let pooled = tape.reshape(pooled, &[batch.b * batch.t, d])?;
                let pooled = tape.gather_rows(pooled, &rows)?;
                gate_logits.push(self.gates[e.index()].forward(tape, &self.store, eb, pooled, target)?);
            }
        }

        let (logits, gate_weights) = match fusion {
            Fusion::Single(_) => (tape.reshape(logits[0], &[2 * n])?, None),
            Fusion::Gated { mode, .. } => {
                let o = concat_or_single(tape, &logits, 1)?;
                let w = match mode {
                    GateMode::FrequencyAware => {
                        let g = concat_or_single(tape, &gate_logits, 1)?;
                        tape.softmax(g)?
                    }
                    GateMode::GlobalLearned => {
                        let idx: Vec<usize> = experts.iter().map(|e| e.index()).collect();
                        let g = tape.embed(&self.store, self.gate_global, &idx)?;
                        let g = tape.reshape(g, &[1, experts.len()])?;
                        let w = tape.softmax(g)?;
                        // Broadcast the shared weights to every row for uniform handling.
                        let ones = tape.constant(Tensor::from_fn(&[2 * n, experts.len()], |_| 1.0));
                        let w = tape.reshape(w, &[experts.len()])?;
                        tape.mul(ones, w)?
                    }
                };
                let fused = tape.mul(w, o)?;
                (tape.sum_axis(fused, 1)?, Some(w))
            }
        };
        Ok(BatchOutput {
            logits,
            labels,
            gate_weights,
            row_buckets,
        })
    }

    /// Whole-catalog tables for fast scoring.
    pub fn item_tables(&self, fusion: &Fusion) -> Result<ItemTables> {
        fusion.validate()?;
        let experts = fusion.experts();
        let all: Vec<usize> = (0..self.config.n_items).collect();
        let mut reps = Vec::with_capacity(experts.len());
        let mut gate_item = Vec::with_capacity(experts.len());
        let mode = match fusion {
            Fusion::Single(_) => None,
            Fusion::Gated { mode, .. } => Some(*mode),
        };
        let h = self.config.gate_hidden;
        for &e in &experts {
            let mut tape = Tape::new();
            let r = self.item_reps(&mut tape, e, &all)?;
            let r = tape.value(r).clone();
            if mode == Some(GateMode::FrequencyAware) {
                let gate = &self.gates[e.index()];
                let eb = tape.embed(&self.store, self.gate_bucket, &self.buckets)?;
                let wb = tape.param(&self.store, gate.wb);
                let a = tape.matmul(eb, wb)?;
                let rv = tape.constant(r.clone());
                let wt = tape.param(&self.store, gate.wt);
                let c = tape.matmul(rv, wt)?;
                let s = tape.add(a, c)?;
                let b1 = tape.param(&self.store, gate.b1);
                let s = tape.add(s, b1)?;
                gate_item.push(tape.value(s).clone());
                debug_assert_eq!(gate_item.last().map(|t| t.shape()[1]), Some(h));
            }
            reps.push(r);
        }
        let global = if mode == Some(GateMode::GlobalLearned) {
            let logits: Vec<f64> = experts
                .iter()
                .map(|e| self.store.value(self.gate_global).data()[e.index()])
                .collect();
            let mut w = logits;
            softmax_in_place(&mut w);
            Some(w)
        } else {
            None
        };
        Ok(ItemTables {
            experts,
            mode,
            reps,
            gate_item,
            global,
        })
    }

    /// Encode a group of behavior sequences for whole-catalog scoring.
    pub fn score_users<'a>(&self, tables: &'a ItemTables, behaviors: &[&[usize]]) -> Result<UserScorer<'a>> {
        let batch = Batch::last_position(behaviors, self.config.max_len)?;
        let d = self.config.d_c;
        let mut user = Vec::with_capacity(tables.experts.len());
        let mut gate_user = Vec::with_capacity(tables.experts.len());
        for (k, &e) in tables.experts.iter().enumerate() {
            let mut tape = Tape::new();
            let reps = tape.constant(gather(&tables.reps[k], &batch.items));
            let x = tape.gather_rows(reps, &batch.input_slots)?;
            let x = tape.reshape(x, &[batch.b, batch.t, d])?;
            let s = self.encoders[e.index()].encode_last(&mut tape, &self.store, x, &batch.lengths)?;
            user.push(tape.value(s).clone());
            if tables.mode == Some(GateMode::FrequencyAware) {
                let wp = self.store.value(self.gates[e.index()].wp);
                let h = self.config.gate_hidden;
                let mut terms = Vec::with_capacity(batch.b * h);
                for (b, &len) in batch.lengths.iter().enumerate() {
                    let mut pooled = vec![0.0; d];
                    for t in 0..len {
                        let row = tables.reps[k].row(batch.items[batch.input_slots[b * batch.t + t]]);
                        pooled.iter_mut().zip(row).for_each(|(p, v)| *p += v);
                    }
                    pooled.iter_mut().for_each(|p| *p /= len as f64);
                    for j in 0..h {
                        terms.push((0..d).map(|i| pooled[i] * wp.data()[i * h + j]).sum::<f64>());
                    }
                }
                gate_user.push(Tensor::new(vec![batch.b, h], terms)?);
            }
        }
        let gate_out: Vec<(Vec<f64>, f64)> = tables
            .experts
            .iter()
            .map(|&e| {
                let g = &self.gates[e.index()];
                (self.store.value(g.w2).data().to_vec(), self.store.value(g.b2).data()[0])
            })
            .collect();
        Ok(UserScorer {
            tables,
            user,
            gate_user,
            gate_out,
            n_users: batch.b,
        })
    }
}

fn concat_or_single(tape: &mut Tape, vs: &[Var], axis: usize) -> Result<Var> {
    if vs.len() == 1 {
        Ok(vs[0])
    } else {
        tape.concat(vs, axis)
    }
}

fn gather(t: &Tensor, rows: &[usize]) -> Tensor {
    let d = t.last_dim();
    let mut out = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        out.extend_from_slice(t.row(r));
    }
    Tensor::new(vec![rows.len(), d], out).expect("consistent shape")
}

fn softmax_in_place(x: &mut [f64]) {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    x.iter_mut().for_each(|v| *v = (*v - m).exp());
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= s);
}

/// Per-item quantities that do not depend on the user.
pub struct ItemTables {
    pub experts: Vec<Expert>,
    mode: Option<GateMode>,
    /// `[V, d_c]` per expert.
    pub reps: Vec<Tensor>,
    /// `[V, h]` per expert: `e_b(i) W_b + rep(i) W_t + b₁`.
    gate_item: Vec<Tensor>,
    global: Option<Vec<f64>>,
}

/// Encoded users ready to be scored against the whole catalog.
pub struct UserScorer<'a> {
    tables: &'a ItemTables,
    user: Vec<Tensor>,
    gate_user: Vec<Tensor>,
    gate_out: Vec<(Vec<f64>, f64)>,
    n_users: usize,
}

impl UserScorer<'_> {
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    /// Gate weights of user `b` for `item`, or `None` without gating.
    pub fn gate_weights(&self, b: usize, item: usize) -> Option<Vec<f64>> {
        self.tables.mode?;
        let mut w = vec![0.0; self.tables.experts.len()];
        self.fill_gate_weights(b, item, &mut w);
        Some(w)
    }

    fn fill_gate_weights(&self, b: usize, item: usize, out: &mut [f64]) {
        match self.tables.mode {
            None => {}
            Some(GateMode::GlobalLearned) => {
                out.copy_from_slice(self.tables.global.as_deref().expect("global weights"))
            }
            Some(GateMode::FrequencyAware) => {
                for (k, o) in out.iter_mut().enumerate() {
                    let a = self.tables.gate_item[k].row(item);
                    let u = self.gate_user[k].row(b);
                    let (w2, b2) = &self.gate_out[k];
                    let mut s = *b2;
                    for j in 0..a.len() {
                        let h = a[j] + u[j];
                        if h > 0.0 {
                            s += h * w2[j];
                        }
                    }
                    *o = s;
                }
                softmax_in_place(out);
            }
        }
    }

    /// Model logit of user `b` for every catalog item.
    pub fn scores(&self, b: usize) -> Vec<f64> {
        self.scores_and_weights(b).0
    }

    /// Logits plus, when gated, the `[V, E]` row-major gate weights behind them.
    pub fn scores_and_weights(&self, b: usize) -> (Vec<f64>, Option<Vec<f64>>) {
        let v = self.tables.reps[0].shape()[0];
        let e = self.tables.experts.len();
        let expert_scores: Vec<Vec<f64>> = (0..e)
            .map(|k| {
                let u = self.user[k].row(b);
                (0..v).map(|i| dot(u, self.tables.reps[k].row(i))).collect()
            })
            .collect();
        if self.tables.mode.is_none() {
            return (expert_scores.into_iter().next().expect("one expert"), None);
        }
        let mut weights = vec![0.0; v * e];
        let mut scores = vec![0.0; v];
        for (i, (w, s)) in weights.chunks_exact_mut(e).zip(&mut scores).enumerate() {
            self.fill_gate_weights(b, i, w);
            *s = w.iter().zip(&expert_scores).map(|(w, es)| w * es[i]).sum();
        }
        (scores, Some(weights))
    }
}
