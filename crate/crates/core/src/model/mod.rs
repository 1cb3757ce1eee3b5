//! Embedding tables, sequence encoders, the three experts and the gate.

mod batch;
mod buckets;
mod config;
mod encoder;
mod gate;
mod layers;
mod pad;

pub use batch::Batch;
pub use buckets::bucketize;
pub use config::{EncoderKind, Expert, GateMode, ModelConfig};
pub use encoder::Encoder;
pub use gate::GateStats;
pub use pad::{BatchOutput, Fusion, ItemTables, PadModel, ParamGroup, UserScorer, TEXT_PARAM};
