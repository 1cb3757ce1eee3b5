//! Flat key-value run configuration.
//!
//! A config file is TOML whose keys are dotted names such as `model.d_c`
//! (written either as `model.d_c = 32` or inside a `[model]` table), or the
//! equivalent flat JSON object, which is what `resolved_config.json` holds.
//! Every key in [`KEYS`] has a default; anything else is rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::data::{MissingPolicy, SplitConfig};
use crate::error::{PadError, Result};
use crate::model::Expert;
use crate::pipeline::{Split, TrainConfig};

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    (
        "seed",
        "master seed; init, dropout, negatives and shuffling derive from it",
    ),
    ("threads", "evaluation worker threads; results do not depend on it"),
    ("precision", "f32 | f64 parameter storage"),
    ("train.batch_size", "training sequences per step"),
    ("train.lr", "AdamW learning rate"),
    ("train.weight_decay", "AdamW decoupled weight decay"),
    ("train.gamma", "weight of the alignment loss"),
    (
        "train.patience",
        "epochs without validation nDCG@10 improvement before stopping",
    ),
    ("train.pretrain_epochs", "epoch cap for phase 1"),
    ("train.align_epochs", "epoch cap for phase 2"),
    ("train.finetune_epochs", "epoch cap for phase 3"),
    (
        "align.variant",
        "none | non_anchored | rec_anchored | rec_anchored_frozen",
    ),
    ("align.estimator", "biased | unbiased MMD² estimator"),
    ("kernel.kind", "gaussian | laplacian | linear | cosine | infonce"),
    ("kernel.bandwidths", "list of bank bandwidths for gaussian / laplacian"),
    ("kernel.betas", "list of non-negative bank weights (empty = all 1)"),
    ("infonce.temperature", "InfoNCE temperature"),
    ("model.d_c", "collaborative embedding width"),
    ("model.encoder", "attention | gru"),
    ("model.layers", "encoder layers"),
    ("model.heads", "attention heads"),
    ("model.dropout", "dropout rate"),
    (
        "model.max_len",
        "most recent items kept per user and encoder input length",
    ),
    ("model.buckets", "item frequency buckets for the gate and diagnostics"),
    ("model.d_b", "bucket embedding width"),
    ("model.gate_hidden", "gate MLP hidden width"),
    ("model.init_std", "embedding init standard deviation"),
    ("model.experts", "comma-separated subset of id,align,llm"),
    ("model.gating", "frequency_aware | global_learned"),
    ("data.log", "interaction log TSV"),
    (
        "data.dataset",
        "preprocessed dataset JSON; default <run-dir>/dataset.json",
    ),
    ("data.text", "PADV1 text embedding file"),
    (
        "data.text_index",
        "item id index for data.text; default <data.text>.index",
    ),
    ("data.min_interactions", "users with fewer positives are dropped"),
    ("data.missing_text", "strict | zero_fill for items without a text row"),
    ("eval.k", "cutoff for HR@k and nDCG@k"),
    ("eval.split", "val | test"),
    (
        "eval.pair_fraction",
        "share of pairs in each top/bottom group of the pair analysis",
    ),
];

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub log: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub text: Option<PathBuf>,
    pub text_index: Option<PathBuf>,
    pub min_interactions: usize,
    pub missing_text: MissingPolicy,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            log: None,
            dataset: None,
            text: None,
            text_index: None,
            min_interactions: SplitConfig::default().min_interactions,
            missing_text: MissingPolicy::Strict,
        }
    }
}

impl DataConfig {
    /// Index path, defaulting to the text path with `.index` appended.
    pub fn text_index_path(&self) -> Option<PathBuf> {
        self.text_index.clone().or_else(|| {
            self.text.as_ref().map(|t| {
                let mut s = t.clone().into_os_string();
                s.push(".index");
                PathBuf::from(s)
            })
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub split: Split,
    pub pair_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: Split::Test,
            pair_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.trim()
        .parse()
        .map_err(|e| PadError::Config(format!("{key}: cannot parse {v:?}: {e}")))
}

/// Comma-separated numbers, optionally wrapped in brackets; empty gives an empty list.
fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    let v = v.trim();
    let v = v.strip_prefix('[').and_then(|x| x.strip_suffix(']')).unwrap_or(v);
    v.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| parse(key, x))
        .collect()
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn path_value(p: &Option<PathBuf>) -> Value {
    p.as_ref()
        .map_or(Value::Null, |p| Value::String(p.to_string_lossy().into_owned()))
}

impl RunConfig {
    /// Set one key from its textual form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "seed" => t.seed = parse(key, v)?,
            "threads" => t.threads = parse(key, v)?,
            "precision" => t.precision = v.parse()?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.weight_decay" => t.weight_decay = parse(key, v)?,
            "train.gamma" => t.gamma = parse(key, v)?,
            "train.patience" => t.patience = parse(key, v)?,
            "train.pretrain_epochs" => t.pretrain_epochs = parse(key, v)?,
            "train.align_epochs" => t.align_epochs = parse(key, v)?,
            "train.finetune_epochs" => t.finetune_epochs = parse(key, v)?,
            "align.variant" => t.variant = v.parse()?,
            "align.estimator" => t.align_loss.estimator = v.parse()?,
            "kernel.kind" => t.align_loss.kernel = v.parse()?,
            "kernel.bandwidths" => t.align_loss.bandwidths = parse_list(key, v)?,
            "kernel.betas" => t.align_loss.betas = parse_list(key, v)?,
            "infonce.temperature" => t.align_loss.temperature = parse(key, v)?,
            "model.d_c" => t.model.d_c = parse(key, v)?,
            "model.encoder" => t.model.encoder = v.parse()?,
            "model.layers" => t.model.layers = parse(key, v)?,
            "model.heads" => t.model.heads = parse(key, v)?,
            "model.dropout" => t.model.dropout = parse(key, v)?,
            "model.max_len" => t.model.max_len = parse(key, v)?,
            "model.buckets" => t.model.buckets = parse(key, v)?,
            "model.d_b" => t.model.d_b = parse(key, v)?,
            "model.gate_hidden" => t.model.gate_hidden = parse(key, v)?,
            "model.init_std" => t.model.init_std = parse(key, v)?,
            "model.experts" => t.experts = parse_experts(v)?,
            "model.gating" => t.gating = v.parse()?,
            "data.log" => self.data.log = path(v),
            "data.dataset" => self.data.dataset = path(v),
            "data.text" => self.data.text = path(v),
            "data.text_index" => self.data.text_index = path(v),
            "data.min_interactions" => self.data.min_interactions = parse(key, v)?,
            "data.missing_text" => {
                self.data.missing_text = match v {
                    "strict" => MissingPolicy::Strict,
                    "zero_fill" => MissingPolicy::ZeroFill,
                    _ => {
                        return Err(PadError::Config(format!(
                            "data.missing_text: expected strict | zero_fill, got {v:?}"
                        )))
                    }
                }
            }
            "eval.k" => t.eval_k = parse(key, v)?,
            "eval.split" => {
                self.eval.split = match v {
                    "val" => Split::Val,
                    "test" => Split::Test,
                    _ => return Err(PadError::Config(format!("eval.split: expected val | test, got {v:?}"))),
                }
            }
            "eval.pair_fraction" => self.eval.pair_fraction = parse(key, v)?,
            _ => return Err(PadError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Current value of a key as JSON; `null` for unset paths.
    pub fn get(&self, key: &str) -> Result<Value> {
        let t = &self.train;
        let s = |x: &str| Value::String(x.to_string());
        Ok(match key {
            "seed" => t.seed.into(),
            "threads" => t.threads.into(),
            "precision" => s(match t.precision {
                crate::pipeline::Precision::F32 => "f32",
                crate::pipeline::Precision::F64 => "f64",
            }),
            "train.batch_size" => t.batch_size.into(),
            "train.lr" => t.lr.into(),
            "train.weight_decay" => t.weight_decay.into(),
            "train.gamma" => t.gamma.into(),
            "train.patience" => t.patience.into(),
            "train.pretrain_epochs" => t.pretrain_epochs.into(),
            "train.align_epochs" => t.align_epochs.into(),
            "train.finetune_epochs" => t.finetune_epochs.into(),
            "align.variant" => s(t.variant.name()),
            "align.estimator" => serde_json::to_value(t.align_loss.estimator)?,
            "kernel.kind" => s(t.align_loss.kernel.name()),
            "kernel.bandwidths" => t.align_loss.bandwidths.clone().into(),
            "kernel.betas" => t.align_loss.betas.clone().into(),
            "infonce.temperature" => t.align_loss.temperature.into(),
            "model.d_c" => t.model.d_c.into(),
            "model.encoder" => serde_json::to_value(t.model.encoder)?,
            "model.layers" => t.model.layers.into(),
            "model.heads" => t.model.heads.into(),
            "model.dropout" => t.model.dropout.into(),
            "model.max_len" => t.model.max_len.into(),
            "model.buckets" => t.model.buckets.into(),
            "model.d_b" => t.model.d_b.into(),
            "model.gate_hidden" => t.model.gate_hidden.into(),
            "model.init_std" => t.model.init_std.into(),
            "model.experts" => s(&t.experts.iter().map(|e| e.name()).collect::<Vec<_>>().join(",")),
            "model.gating" => serde_json::to_value(t.gating)?,
            "data.log" => path_value(&self.data.log),
            "data.dataset" => path_value(&self.data.dataset),
            "data.text" => path_value(&self.data.text),
            "data.text_index" => path_value(&self.data.text_index),
            "data.min_interactions" => self.data.min_interactions.into(),
            "data.missing_text" => s(match self.data.missing_text {
                MissingPolicy::Strict => "strict",
                MissingPolicy::ZeroFill => "zero_fill",
            }),
            "eval.k" => t.eval_k.into(),
            "eval.split" => s(match self.eval.split {
                Split::Val => "val",
                Split::Test => "test",
            }),
            "eval.pair_fraction" => self.eval.pair_fraction.into(),
            _ => return Err(PadError::Config(format!("unknown config key '{key}'"))),
        })
    }

    /// Set a key from a JSON/TOML scalar (arrays join with commas).
    pub fn set_value(&mut self, key: &str, v: &Value) -> Result<()> {
        let text = match v {
            Value::Null => String::new(),
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Array(items) => items
                .iter()
                .map(|x| match x {
                    Value::String(s) => Ok(s.clone()),
                    Value::Number(n) => Ok(n.to_string()),
                    other => Err(PadError::Config(format!(
                        "{key}: list entries must be scalars, got {other}"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?
                .join(","),
            Value::Object(_) => return Err(PadError::Config(format!("{key}: nested tables are not allowed here"))),
        };
        self.set(key, &text)
    }

    /// Apply a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| PadError::Config(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Merge a flat map of keys into the defaults.
    pub fn from_flat(map: &BTreeMap<String, Value>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in map {
            cfg.set_value(k, v)?;
        }
        Ok(cfg)
    }

    /// Parse a TOML or JSON config document; `json` picks the syntax.
    pub fn parse_str(text: &str, json: bool) -> Result<Self> {
        let root: Value = if json {
            serde_json::from_str(text).map_err(|e| PadError::Config(format!("bad JSON config: {e}")))?
        } else {
            let table: toml::Table =
                toml::from_str(text).map_err(|e| PadError::Config(format!("bad TOML config: {e}")))?;
            serde_json::to_value(table)?
        };
        let Value::Object(obj) = root else {
            return Err(PadError::Config("config must be a key-value document".into()));
        };
        let mut flat = BTreeMap::new();
        flatten("", &obj, &mut flat)?;
        Self::from_flat(&flat)
    }

    /// Load a config file; `.json` files are read as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PadError::io(path, e))?;
        let json = path.extension().is_some_and(|e| e == "json");
        Self::parse_str(&text, json).map_err(|e| match e {
            PadError::Config(m) => PadError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Every key with its resolved value.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        KEYS.iter()
            .map(|(k, _)| (k.to_string(), self.get(k).expect("every listed key is readable")))
            .collect()
    }

    /// Pretty JSON of [`Self::to_flat`], newline-terminated.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.to_flat())?;
        s.push('\n');
        Ok(s)
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            min_interactions: self.data.min_interactions,
            max_len: self.train.model.max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.eval.pair_fraction > 0.0 && self.eval.pair_fraction <= 0.5) {
            return Err(PadError::Config(format!(
                "eval.pair_fraction must lie in (0, 0.5], got {}",
                self.eval.pair_fraction
            )));
        }
        if self.data.min_interactions < 3 {
            return Err(PadError::Config(format!(
                "data.min_interactions must be at least 3, got {}",
                self.data.min_interactions
            )));
        }
        Ok(())
    }
}

fn parse_experts(v: &str) -> Result<Vec<Expert>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

fn flatten(prefix: &str, obj: &serde_json::Map<String, Value>, out: &mut BTreeMap<String, Value>) -> Result<()> {
    for (k, v) in obj {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Object(inner) => flatten(&key, inner, out)?,
            _ => {
                if out.insert(key.clone(), v.clone()).is_some() {
                    return Err(PadError::Config(format!("key '{key}' given twice")));
                }
            }
        }
    }
    Ok(())
}
