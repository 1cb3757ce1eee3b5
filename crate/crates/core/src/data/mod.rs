//! Interaction logs, the leave-last-out split, text embedding files and a
//! synthetic world generator.

mod log;
mod split;
mod synth;
mod text;

pub use log::{load_tsv, parse_tsv, write_tsv, Interaction, InteractionLog, Label};
pub use split::{preprocess_split, SplitConfig, SplitDataset};
pub use synth::{gen_synthetic, SynthConfig, SynthWorld};
pub use text::{load_text_embeddings, read_text_file, write_text_file, MissingPolicy, TextEmbeddings, TEXT_MAGIC};
