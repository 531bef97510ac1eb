//! Corpus ingestion, text encoding and batching.

mod batch;
mod corpus;
mod text;

pub use batch::{make_batch, Batch};
pub use corpus::{
    extract_features, load_metadata, parse_metadata, Corpus, CorpusOptions, Utterance,
};
pub use text::{decode_text, encode_text, normalize_text, CharVocab, EOS_ID, PAD_ID};
