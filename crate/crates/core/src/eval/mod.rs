//! Scoring: BLEU, homograph sense accuracy, and representation inspection.

pub mod bleu;
pub mod inspect;
pub mod prf;

pub use bleu::{bleu, tokenize_13a, BleuReport};
pub use inspect::{
    export_token_vectors, homograph_states, pca_2d, similarity_heatmap, Heatmap, TokenVector,
    TokenVectors,
};
pub use prf::{contains_lexeme, homograph_prf, DisambiguationReport, SenseCounts};
