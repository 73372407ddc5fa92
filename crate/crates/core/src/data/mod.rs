//! Corpus cleaning, BPE tokenization, sequence packing and a synthetic
//! grammar corpus for experiments.

mod bpe;
mod pack;
mod preprocess;
pub mod synthetic;

pub use bpe::{train_bpe, Encoding, Tokenizer, WORD_MARK};
pub use pack::{pack_sequences, PackedDataset};
pub use preprocess::{decode_utf8, documents, Preprocessor};

/// Reserved token ids shared by every tokenizer.
pub mod special {
    pub const PAD: u32 = 0;
    pub const DOC: u32 = 1;
    pub const MASK: u32 = 2;
    pub const UNK: u32 = 3;
    pub const ALL: [u32; 4] = [PAD, DOC, MASK, UNK];
    pub const NAMES: [&str; 4] = ["[PAD]", "[DOC]", "[MASK]", "[UNK]"];
}

/// Cleans one corpus string. See [`Preprocessor`] for cleaning several
/// files with shared deduplication.
pub fn preprocess_text(raw: &str) -> String {
    let mut p = Preprocessor::new();
    p.push(raw);
    p.finish()
}
