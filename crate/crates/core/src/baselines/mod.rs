//! Comparison temporal heads: a two-layer LSTM and a small transformer
//! encoder, both emitting full sequences into the shared pooled tail.

pub mod layers;
mod lstm;
mod transformer;

pub use layers::{scaled_dot_attention, LayerNorm, Linear};
pub use lstm::{LstmHead, LstmHeadCache, LstmLayer, LstmStepCache};
pub use transformer::{
    EncoderLayer, MultiHeadAttention, TransformerCache, TransformerConfig, TransformerHead,
};
