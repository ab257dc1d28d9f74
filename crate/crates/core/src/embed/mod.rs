//! Contextual token matrices: layout, the toy embedder and the interchange file.

pub mod interchange;
pub mod layout;
pub mod toy;

pub use interchange::{read_interchange, reasoner_slot, selector_slot, write_interchange, Interchange};
pub use layout::{decode_span, layout_tokens, Segment, SentenceSpan, TokenLayout, TokenMatrix};
pub use toy::{ToyConfig, ToyEmbedder};

use crate::data::Example;
use crate::error::EmbedError;

/// Provider of token matrices for selector and reasoner inputs.
pub trait EmbeddingSource: Send + Sync {
    fn dim(&self) -> usize;

    /// `[CLS] question [SEP] document [SEP]` for one document.
    fn selector_input(&self, ex: &Example, doc: usize) -> Result<TokenMatrix, EmbedError>;

    /// `[CLS] question [SEP] docs... [SEP]`, documents in the given order.
    fn reasoner_input(&self, ex: &Example, docs: &[usize]) -> Result<TokenMatrix, EmbedError>;
}
