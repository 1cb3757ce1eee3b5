use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Attention,
    Gru,
}

impl FromStr for EncoderKind {
    type Err = PadError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(EncoderKind::Attention),
            "gru" => Ok(EncoderKind::Gru),
            _ => Err(PadError::Config(format!("unknown encoder {s:?} (attention | gru)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expert {
    Id,
    Align,
    Llm,
}

impl Expert {
    pub const ALL: [Expert; 3] = [Expert::Id, Expert::Align, Expert::Llm];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Expert::Id => "id",
            Expert::Align => "align",
            Expert::Llm => "llm",
        }
    }
}

impl fmt::Display for Expert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Expert {
    type Err = PadError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "id" => Ok(Expert::Id),
            "align" => Ok(Expert::Align),
            "llm" => Ok(Expert::Llm),
            _ => Err(PadError::Config(format!("unknown expert {s:?} (id | align | llm)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    FrequencyAware,
    /// One learned weight vector shared by every item.
    GlobalLearned,
}

impl FromStr for GateMode {
    type Err = PadError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frequency_aware" => Ok(GateMode::FrequencyAware),
            "global_learned" => Ok(GateMode::GlobalLearned),
            _ => Err(PadError::Config(format!(
                "unknown gating {s:?} (frequency_aware | global_learned)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_items: usize,
    pub d_c: usize,
    pub d_t: usize,
    pub max_len: usize,
    pub encoder: EncoderKind,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub buckets: usize,
    pub d_b: usize,
    pub gate_hidden: usize,
    /// Standard deviation of item-table initialization.
    pub init_std: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PadError::Config(m));
        if self.n_items < 2 {
            return fail(format!("need at least 2 items, got {}", self.n_items));
        }
        if self.d_c == 0 || self.d_t == 0 || self.d_b == 0 || self.gate_hidden == 0 {
            return fail("model dimensions must be positive".into());
        }
        if self.max_len == 0 {
            return fail("model.max_len must be >= 1".into());
        }
        if self.layers == 0 {
            return fail("model.layers must be >= 1".into());
        }
        if self.encoder == EncoderKind::Attention && (self.heads == 0 || !self.d_c.is_multiple_of(self.heads)) {
            return fail(format!("d_c = {} is not divisible by heads = {}", self.d_c, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.buckets == 0 || self.buckets > self.n_items {
            return fail(format!("buckets = {} must be in 1..={}", self.buckets, self.n_items));
        }
        if !(self.init_std > 0.0) {
            return fail("init_std must be positive".into());
        }
        Ok(())
    }
}
