//! Causal sequence encoders: a pre-norm self-attention stack and a GRU.
//!
//! Both map `[B, T, d]` item embeddings to `[B, T, d]` states where the state
//! at position `t` depends only on positions `0..=t`. Sequences are
//! right-padded, so padding never influences a valid position.

use rand::Rng;

use super::config::{EncoderKind, ModelConfig};
use super::layers::{normal_tensor, on_rows, LayerNorm, Linear, Mlp};
use crate::error::{PadError, Result};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const MASKED: f64 = -1e9;

#[derive(Clone, Debug)]
struct Head {
    q: ParamId,
    k: ParamId,
    v: ParamId,
}

#[derive(Clone, Debug)]
struct AttnLayer {
    ln1: LayerNorm,
    heads: Vec<Head>,
    wo: Linear,
    ln2: LayerNorm,
    ffn: Mlp,
}

#[derive(Clone, Debug)]
struct GruLayer {
    wz: Linear,
    wr: Linear,
    wh: Linear,
    uz: ParamId,
    ur: ParamId,
    uh: ParamId,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    kind: EncoderKind,
    d: usize,
    max_len: usize,
    dropout: f64,
    pos: Option<ParamId>,
    attn: Vec<AttnLayer>,
    final_ln: Option<LayerNorm>,
    gru: Vec<GruLayer>,
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.d_c;
        let mut enc = Encoder {
            kind: cfg.encoder,
            d,
            max_len: cfg.max_len,
            dropout: cfg.dropout,
            pos: None,
            attn: Vec::new(),
            final_ln: None,
            gru: Vec::new(),
        };
        let w_std = (1.0 / d as f64).sqrt();
        match cfg.encoder {
            EncoderKind::Attention => {
                enc.pos = Some(store.add(
                    &format!("{prefix}.pos"),
                    normal_tensor(rng, &[cfg.max_len, d], cfg.init_std),
                )?);
                let dh = d / cfg.heads;
                for l in 0..cfg.layers {
                    let name = format!("{prefix}.l{l}");
                    let ln1 = LayerNorm::new(store, &format!("{name}.ln1"), d)?;
                    let mut heads = Vec::with_capacity(cfg.heads);
                    for h in 0..cfg.heads {
                        let mut mk =
                            |t: &str| store.add(&format!("{name}.h{h}.{t}"), normal_tensor(rng, &[d, dh], w_std));
                        heads.push(Head {
                            q: mk("wq")?,
                            k: mk("wk")?,
                            v: mk("wv")?,
                        });
                    }
                    let wo = Linear::new(store, &format!("{name}.wo"), d, d, rng)?;
                    let ln2 = LayerNorm::new(store, &format!("{name}.ln2"), d)?;
                    let ffn = Mlp::new(store, &format!("{name}.ffn"), d, d, d, rng)?;
                    enc.attn.push(AttnLayer {
                        ln1,
                        heads,
                        wo,
                        ln2,
                        ffn,
                    });
                }
                enc.final_ln = Some(LayerNorm::new(store, &format!("{prefix}.ln_f"), d)?);
            }
            EncoderKind::Gru => {
                for l in 0..cfg.layers {
                    let name = format!("{prefix}.gru{l}");
                    let wz = Linear::new(store, &format!("{name}.wz"), d, d, rng)?;
                    let wr = Linear::new(store, &format!("{name}.wr"), d, d, rng)?;
                    let wh = Linear::new(store, &format!("{name}.wh"), d, d, rng)?;
                    let uz = store.add(&format!("{name}.uz"), normal_tensor(rng, &[d, d], w_std))?;
                    let ur = store.add(&format!("{name}.ur"), normal_tensor(rng, &[d, d], w_std))?;
                    let uh = store.add(&format!("{name}.uh"), normal_tensor(rng, &[d, d], w_std))?;
                    enc.gru.push(GruLayer { wz, wr, wh, uz, ur, uh });
                }
            }
        }
        Ok(enc)
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    /// Every parameter, in a fixed structural order.
    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.pos.into_iter().collect();
        for l in &self.attn {
            p.extend(l.ln1.params());
            for h in &l.heads {
                p.extend([h.q, h.k, h.v]);
            }
            p.extend(l.wo.params());
            p.extend(l.ln2.params());
            p.extend(l.ffn.params());
        }
        if let Some(ln) = &self.final_ln {
            p.extend(ln.params());
        }
        for g in &self.gru {
            p.extend(g.wz.params());
            p.extend(g.wr.params());
            p.extend(g.wh.params());
            p.extend([g.uz, g.ur, g.uh]);
        }
        p
    }

    /// Overwrite this encoder's values with those of a structurally identical one.
    pub fn copy_from(&self, store: &mut ParamStore, other: &Encoder) -> Result<()> {
        let (dst, src) = (self.params(), other.params());
        if dst.len() != src.len() {
            return Err(PadError::InvalidArgument("encoders differ in structure".into()));
        }
        for (d, s) in dst.into_iter().zip(src) {
            let v = store.value(s).clone();
            store.assign(d, &v)?;
        }
        Ok(())
    }

    /// States for every position of `x: [B, T, d]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.d {
            return Err(PadError::shape(
                "encode",
                format!("{shape:?}, expected [B, T, {}]", self.d),
            ));
        }
        let t = shape[1];
        if t == 0 || t > self.max_len {
            return Err(PadError::InvalidArgument(format!(
                "sequence length {t} outside 1..={}",
                self.max_len
            )));
        }
        match self.kind {
            EncoderKind::Attention => self.forward_attention(tape, store, x, t),
            EncoderKind::Gru => self.forward_gru(tape, store, x, shape[0], t),
        }
    }

    /// State at the last valid position of each sequence: `[B, d]`.
    pub fn encode_last(&self, tape: &mut Tape, store: &ParamStore, x: Var, lengths: &[usize]) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || lengths.len() != shape[0] {
            return Err(PadError::shape(
                "encode_last",
                format!("{shape:?} with {} lengths", lengths.len()),
            ));
        }
        let t = shape[1];
        for &l in lengths {
            if l == 0 || l > t {
                return Err(PadError::InvalidArgument(format!("length {l} outside 1..={t}")));
            }
        }
        let h = self.forward(tape, store, x)?;
        let flat = tape.reshape(h, &[shape[0] * t, self.d])?;
        let rows: Vec<usize> = lengths.iter().enumerate().map(|(b, &l)| b * t + l - 1).collect();
        tape.gather_rows(flat, &rows)
    }

    fn forward_attention(&self, tape: &mut Tape, store: &ParamStore, x: Var, t: usize) -> Result<Var> {
        let pos_ids: Vec<usize> = (0..t).collect();
        let pos = tape.embed(store, self.pos.expect("attention encoder has positions"), &pos_ids)?;
        let h = tape.add(x, pos)?;
        let mut h = tape.dropout(h, self.dropout)?;
        let mask = tape.constant(Tensor::from_fn(&[t, t], |k| if k % t > k / t { MASKED } else { 0.0 }));
        for layer in &self.attn {
            let a = layer.ln1.forward(tape, store, h)?;
            let dh = self.d / layer.heads.len();
            let inv = 1.0 / (dh as f64).sqrt();
            let mut outs = Vec::with_capacity(layer.heads.len());
            for head in &layer.heads {
                let proj = |tape: &mut Tape, w: ParamId| -> Result<Var> {
                    let wv = tape.param(store, w);
                    on_rows(tape, a, |tape, rows| tape.matmul(rows, wv))
                };
                let q = proj(tape, head.q)?;
                let k = proj(tape, head.k)?;
                let v = proj(tape, head.v)?;
                let s = tape.batch_matmul(q, k, true)?;
                let s = tape.scale(s, inv)?;
                let s = tape.add(s, mask)?;
                let p = tape.softmax(s)?;
                outs.push(tape.batch_matmul(p, v, false)?);
            }
            let cat = if outs.len() == 1 {
                outs[0]
            } else {
                tape.concat(&outs, 2)?
            };
            let o = layer.wo.forward(tape, store, cat)?;
            let o = tape.dropout(o, self.dropout)?;
            h = tape.add(h, o)?;
            let f = layer.ln2.forward(tape, store, h)?;
            let f = layer.ffn.forward(tape, store, f)?;
            let f = tape.dropout(f, self.dropout)?;
            h = tape.add(h, f)?;
        }
        self.final_ln
            .as_ref()
            .expect("attention encoder has final norm")
            .forward(tape, store, h)
    }

    fn forward_gru(&self, tape: &mut Tape, store: &ParamStore, x: Var, b: usize, t: usize) -> Result<Var> {
        let d = self.d;
        let mut input = tape.dropout(x, self.dropout)?;
        // Rows of the time-major stack back to batch-major order.
        let to_batch_major: Vec<usize> = (0..b * t).map(|k| (k % t) * b + k / t).collect();
        for layer in &self.gru {
            let xz = layer.wz.forward(tape, store, input)?;
            let xr = layer.wr.forward(tape, store, input)?;
            let xh = layer.wh.forward(tape, store, input)?;
            let (xz, xr, xh) = (
                tape.reshape(xz, &[b * t, d])?,
                tape.reshape(xr, &[b * t, d])?,
                tape.reshape(xh, &[b * t, d])?,
            );
            let uz = tape.param(store, layer.uz);
            let ur = tape.param(store, layer.ur);
            let uh = tape.param(store, layer.uh);
            let mut h = tape.constant(Tensor::zeros(&[b, d]));
            let mut states = Vec::with_capacity(t);
            for step in 0..t {
                let rows: Vec<usize> = (0..b).map(|s| s * t + step).collect();
                let hz = tape.matmul(h, uz)?;
                let xz_t = tape.gather_rows(xz, &rows)?;
                let z = tape.add(xz_t, hz)?;
                let z = tape.sigmoid(z)?;
                let hr = tape.matmul(h, ur)?;
                let xr_t = tape.gather_rows(xr, &rows)?;
                let r = tape.add(xr_t, hr)?;
                let r = tape.sigmoid(r)?;
                let rh = tape.mul(r, h)?;
                let rh = tape.matmul(rh, uh)?;
                let xh_t = tape.gather_rows(xh, &rows)?;
                let cand = tape.add(xh_t, rh)?;
                let cand = tape.tanh(cand)?;
                // h ← h + z ⊙ (cand − h)
                let delta = tape.sub(cand, h)?;
                let delta = tape.mul(z, delta)?;
                h = tape.add(h, delta)?;
                states.push(h);
            }
            let stacked = if states.len() == 1 {
                states[0]
            } else {
                tape.concat(&states, 0)?
            };
            let ordered = tape.gather_rows(stacked, &to_batch_major)?;
            input = tape.reshape(ordered, &[b, t, d])?;
        }
        Ok(input)
    }
}
