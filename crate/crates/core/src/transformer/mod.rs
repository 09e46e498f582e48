//! Transformer encoder/decoder building blocks.

pub mod attention;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod layers;
pub mod search;

pub use attention::MultiHeadAttention;
pub use config::{FusionScheme, GateMode, ModelConfig, SecondEncoderSource};
pub use decoder::Decoder;
pub use encoder::{EncodedBatch, Encoder, EncoderOutput};
pub use layers::{sinusoidal_positions, Embedding, FeedForward, LayerNorm, Linear};
pub use search::Strategy;
