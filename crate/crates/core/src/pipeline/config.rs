use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};
use crate::kernels::{KernelSpec, MultiKernel};
use crate::model::{EncoderKind, Expert, GateMode, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Align,
    Finetune,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Align => "align",
            Phase::Finetune => "finetune",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Phase-2 objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignVariant {
    /// Recommendation loss of the alignment expert only.
    None,
    /// Alignment loss only.
    NonAnchored,
    /// Recommendation loss plus weighted alignment loss.
    RecAnchored,
    /// As `RecAnchored`, with both collaborative tables frozen and detached.
    RecAnchoredFrozen,
}

impl AlignVariant {
    pub const ALL: [AlignVariant; 4] = [
        AlignVariant::None,
        AlignVariant::NonAnchored,
        AlignVariant::RecAnchored,
        AlignVariant::RecAnchoredFrozen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlignVariant::None => "none",
            AlignVariant::NonAnchored => "non_anchored",
            AlignVariant::RecAnchored => "rec_anchored",
            AlignVariant::RecAnchoredFrozen => "rec_anchored_frozen",
        }
    }

    pub fn uses_rec_loss(self) -> bool {
        self != AlignVariant::NonAnchored
    }

    pub fn uses_align_loss(self) -> bool {
        self != AlignVariant::None
    }
}

impl FromStr for AlignVariant {
    type Err = PadError;
    fn from_str(s: &str) -> Result<Self> {
        AlignVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| PadError::Config(format!("unknown alignment variant '{s}'")))
    }
}

/// Which discrepancy the alignment loss measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignKernel {
    /// MMD over a bank of Gaussians, one per bandwidth.
    Gaussian,
    /// MMD over a bank of Laplacians, one per bandwidth.
    Laplacian,
    Linear,
    /// Mean cosine distance between matched text/collaborative rows.
    Cosine,
    InfoNce,
}

impl AlignKernel {
    pub const ALL: [AlignKernel; 5] = [
        AlignKernel::Gaussian,
        AlignKernel::Laplacian,
        AlignKernel::Linear,
        AlignKernel::Cosine,
        AlignKernel::InfoNce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlignKernel::Gaussian => "gaussian",
            AlignKernel::Laplacian => "laplacian",
            AlignKernel::Linear => "linear",
            AlignKernel::Cosine => "cosine",
            AlignKernel::InfoNce => "infonce",
        }
    }
}

impl FromStr for AlignKernel {
    type Err = PadError;
    fn from_str(s: &str) -> Result<Self> {
        AlignKernel::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| PadError::Config(format!("unknown alignment kernel '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Biased,
    Unbiased,
}

impl FromStr for Estimator {
    type Err = PadError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biased" => Ok(Estimator::Biased),
            "unbiased" => Ok(Estimator::Unbiased),
            _ => Err(PadError::Config(format!("unknown estimator '{s}'"))),
        }
    }
}

/// `σ = 2^s` for `s ∈ {−3, …, 1}`.
pub fn default_bandwidths() -> Vec<f64> {
    (-3..=1).map(|s| 2f64.powi(s)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignLossConfig {
    pub kernel: AlignKernel,
    /// Bank bandwidths for the Gaussian/Laplacian kinds.
    pub bandwidths: Vec<f64>,
    /// Bank weights; empty means 1 for every bandwidth.
    pub betas: Vec<f64>,
    pub temperature: f64,
    pub estimator: Estimator,
}

impl Default for AlignLossConfig {
    fn default() -> Self {
        AlignLossConfig {
            kernel: AlignKernel::Gaussian,
            bandwidths: default_bandwidths(),
            betas: Vec::new(),
            temperature: 0.1,
            estimator: Estimator::Biased,
        }
    }
}

impl AlignLossConfig {
    /// Kernel bank for the MMD choices; `None` for InfoNCE and cosine.
    pub fn multi_kernel(&self) -> Result<Option<MultiKernel>> {
        let bank = |make: fn(f64) -> KernelSpec| {
            let entries = self
                .bandwidths
                .iter()
                .enumerate()
                .map(|(i, &s)| (self.betas.get(i).copied().unwrap_or(1.0), make(s)))
                .collect();
            MultiKernel::new(entries).map_err(|e| PadError::Config(e.to_string()))
        };
        Ok(match self.kernel {
            AlignKernel::Gaussian => Some(bank(|sigma| KernelSpec::Gaussian { sigma })?),
            AlignKernel::Laplacian => Some(bank(|sigma| KernelSpec::Laplacian { sigma })?),
            AlignKernel::Linear => Some(MultiKernel::single(KernelSpec::Linear)?),
            AlignKernel::Cosine | AlignKernel::InfoNce => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.bandwidths.is_empty() {
            return Err(PadError::Config("kernel.bandwidths must not be empty".into()));
        }
        if let Some(s) = self.bandwidths.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(PadError::Config(format!("kernel.bandwidths must be positive, got {s}")));
        }
        if !self.betas.is_empty() && self.betas.len() != self.bandwidths.len() {
            return Err(PadError::Config(format!(
                "kernel.betas has {} entries but kernel.bandwidths has {}",
                self.betas.len(),
                self.bandwidths.len()
            )));
        }
        if let Some(b) = self.betas.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return Err(PadError::Config(format!("kernel.betas must be >= 0, got {b}")));
        }
        if !self.betas.is_empty() && self.betas.iter().sum::<f64>() <= 0.0 {
            return Err(PadError::Config("kernel.betas must not all be zero".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(PadError::Config(format!(
                "infonce.temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Storage precision. Arithmetic is always 64-bit; `F32` rounds parameters
/// to single precision after every update and writes 32-bit checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = PadError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(PadError::Config(format!("precision must be f32 or f64, got '{s}'"))),
        }
    }
}

/// Architecture hyperparameters; catalog size and text width come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHyper {
    pub d_c: usize,
    pub encoder: EncoderKind,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub buckets: usize,
    pub d_b: usize,
    pub gate_hidden: usize,
    pub init_std: f64,
}

impl Default for ModelHyper {
    fn default() -> Self {
        ModelHyper {
            d_c: 64,
            encoder: EncoderKind::Attention,
            layers: 2,
            heads: 2,
            dropout: 0.1,
            max_len: 23,
            buckets: 10,
            d_b: 8,
            gate_hidden: 16,
            init_std: 0.1,
        }
    }
}

impl ModelHyper {
    pub fn model_config(&self, n_items: usize, d_t: usize) -> ModelConfig {
        ModelConfig {
            n_items,
            d_c: self.d_c,
            d_t,
            max_len: self.max_len,
            encoder: self.encoder,
            layers: self.layers,
            heads: self.heads,
            dropout: self.dropout,
            buckets: self.buckets,
            d_b: self.d_b,
            gate_hidden: self.gate_hidden,
            init_std: self.init_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub patience: usize,
    pub pretrain_epochs: usize,
    pub align_epochs: usize,
    pub finetune_epochs: usize,
    pub variant: AlignVariant,
    pub align_loss: AlignLossConfig,
    pub experts: Vec<Expert>,
    pub gating: GateMode,
    pub model: ModelHyper,
    pub eval_k: usize,
    pub precision: Precision,
    /// Evaluation workers. Not serialized: it never changes results, so
    /// checkpoints stay byte-identical across thread counts.
    #[serde(skip_serializing, default = "one")]
    pub threads: usize,
}

fn one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 16,
            lr: 1e-3,
            weight_decay: 0.1,
            gamma: 0.2,
            patience: 10,
            pretrain_epochs: 50,
            align_epochs: 50,
            finetune_epochs: 50,
            variant: AlignVariant::RecAnchored,
            align_loss: AlignLossConfig::default(),
            experts: Expert::ALL.to_vec(),
            gating: GateMode::FrequencyAware,
            model: ModelHyper::default(),
            eval_k: 10,
            precision: Precision::F64,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn max_epochs(&self, phase: Phase) -> usize {
        match phase {
            Phase::Pretrain => self.pretrain_epochs,
            Phase::Align => self.align_epochs,
            Phase::Finetune => self.finetune_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PadError::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.experts.is_empty() {
            return bad("expert mask must not be empty".into());
        }
        let mut e = self.experts.clone();
        e.sort();
        e.dedup();
        if e.len() != self.experts.len() {
            return bad("expert mask lists an expert twice".into());
        }
        if self.eval_k == 0 {
            return bad("eval_k must be at least 1".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        self.align_loss.validate()?;
        // catalog and text sizes are placeholders here; they are checked again with real data
        self.model.model_config(self.model.buckets.max(2), 1).validate()
    }

    /// Experts in canonical order.
    pub fn expert_mask(&self) -> Vec<Expert> {
        let mut e = self.experts.clone();
        e.sort();
        e
    }
}
