//! Context encoding: tokenization with speaker markers and truncation, the
//! reference transformer encoder, and mean-of-embeddings text vectors.

mod context;
mod embedding;
mod transformer;
mod vocab;

pub use context::{
    context_utterances, segment, tokenize_context, tokenize_context_with_state, Speaker,
    TokenizedContext, TurnBoundary, Utterance,
};
pub use embedding::{embed_text, EmbeddingTable};
pub use transformer::{
    ContextEncoder, ContextEncoding, EncodedVars, EncoderConfig, TransformerEncoder,
};
pub use vocab::{Vocab, AGENT, CLS, SEP, STATE, UNK, USER};
