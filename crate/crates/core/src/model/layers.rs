use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub(crate) fn normal_tensor<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

/// Apply `f` to a `[.., d]` tensor viewed as `[rows, d]`, restoring leading axes.
pub(crate) fn on_rows(tape: &mut Tape, x: Var, f: impl FnOnce(&mut Tape, Var) -> Result<Var>) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() == 2 {
        return f(tape, x);
    }
    let d = *shape.last().unwrap_or(&1);
    let flat = tape.reshape(x, &[shape.iter().product::<usize>() / d.max(1), d])?;
    let y = f(tape, flat)?;
    let mut out_shape = shape;
    *out_shape.last_mut().expect("rank >= 1") = tape.shape(y)[1];
    tape.reshape(y, &out_shape)
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<Self> {
        let w = store.add(
            &format!("{name}.w"),
            normal_tensor(rng, &[fan_in, fan_out], (1.0 / fan_in as f64).sqrt()),
        )?;
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
        Ok(Linear { w, b })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        on_rows(tape, x, |tape, x| {
            let y = tape.matmul(x, w)?;
            tape.add(y, b)
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    pub g: ParamId,
    pub b: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        let g = store.add(&format!("{name}.g"), Tensor::from_fn(&[d], |_| 1.0))?;
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[d]))?;
        Ok(LayerNorm { g, b })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let n = tape.layer_norm(x)?;
        let g = tape.param(store, self.g);
        let b = tape.param(store, self.b);
        let y = tape.mul(n, g)?;
        tape.add(y, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.g, self.b]
    }
}

/// `relu(x W₁ + b₁) W₂ + b₂`
#[derive(Clone, Debug)]
pub(crate) struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Mlp {
            l1: Linear::new(store, &format!("{name}.l1"), d_in, d_hidden, rng)?,
            l2: Linear::new(store, &format!("{name}.l2"), d_hidden, d_out, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.l1.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        self.l2.forward(tape, store, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.l1.params();
        p.extend(self.l2.params());
        p
    }
}
