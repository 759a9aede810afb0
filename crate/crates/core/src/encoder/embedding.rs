use ndarray::{Array1, Array2};

use super::vocab::Vocab;
use crate::corpus::text::{slot_name_tokens, tokenize};
use crate::error::{DstError, Result};
use crate::nn::Real;

/// Word vectors shared by the encoder input layer and the slot / value
/// representations.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingTable<'a, F> {
    pub vocab: &'a Vocab,
    pub vectors: &'a Array2<F>,
    pub frozen: bool,
}

impl<'a, F: Real> EmbeddingTable<'a, F> {
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Mean of the token vectors (unknown tokens use the unknown bucket).
    pub fn embed_text<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Array1<F>> {
        embed_text(tokens, self)
    }

    /// Representation of a slot from its name tokens.
    pub fn slot_representation(&self, slot_name: &str) -> Result<Array1<F>> {
        self.embed_text(&slot_name_tokens(slot_name))
    }

    /// Representation of a value string.
    pub fn value_representation(&self, value: &str) -> Result<Array1<F>> {
        self.embed_text(&tokenize(value))
    }
}

pub fn embed_text<F: Real, S: AsRef<str>>(
    tokens: &[S],
    table: &EmbeddingTable<'_, F>,
) -> Result<Array1<F>> {
    if tokens.is_empty() {
        return Err(DstError::EmptyTokens);
    }
    let mut acc = Array1::zeros(table.dim());
    for t in tokens {
        acc += &table.vectors.row(table.vocab.id(t.as_ref()));
    }
    Ok(acc / F::of(tokens.len() as f64))
}
