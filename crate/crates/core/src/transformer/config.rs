use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the decoder combines the two encoders' cross-attention outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionScheme {
    Baseline,
    Add,
    Gate,
    Cascade,
    Selection,
}

impl FusionScheme {
    pub const ALL: [FusionScheme; 5] = [
        FusionScheme::Baseline,
        FusionScheme::Add,
        FusionScheme::Gate,
        FusionScheme::Cascade,
        FusionScheme::Selection,
    ];

    pub fn uses_second_encoder(self) -> bool {
        self != FusionScheme::Baseline
    }
}

impl FromStr for FusionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "baseline" => FusionScheme::Baseline,
            "add" => FusionScheme::Add,
            "gate" => FusionScheme::Gate,
            "cascade" => FusionScheme::Cascade,
            "selection" => FusionScheme::Selection,
            other => return Err(Error::Config(format!("unknown fusion scheme {other:?}"))),
        })
    }
}

impl fmt::Display for FusionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FusionScheme::Baseline => "baseline",
            FusionScheme::Add => "add",
            FusionScheme::Gate => "gate",
            FusionScheme::Cascade => "cascade",
            FusionScheme::Selection => "selection",
        };
        f.write_str(s)
    }
}

/// Gate used by the gate scheme: a fixed mixing weight or a learned
/// per-position sigmoid over `[s_H ; s_N]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    Fixed(f32),
    Sigmoid,
}

impl Default for GateMode {
    fn default() -> Self {
        GateMode::Fixed(0.5)
    }
}

impl FromStr for GateMode {
    type Err = Error;

    /// `fixed:<g>` or `sigmoid`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "sigmoid" {
            return Ok(GateMode::Sigmoid);
        }
        let g = s
            .strip_prefix("fixed:")
            .and_then(|v| v.parse::<f32>().ok())
            .ok_or_else(|| {
                Error::Config(format!(
                    "bad gate mode {s:?}; expected fixed:<g> or sigmoid"
                ))
            })?;
        if !(0.0..=1.0).contains(&g) {
            return Err(Error::Config(format!("fixed gate {g} outside [0, 1]")));
        }
        Ok(GateMode::Fixed(g))
    }
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GateMode::Fixed(g) => write!(f, "fixed:{g}"),
            GateMode::Sigmoid => f.write_str("sigmoid"),
        }
    }
}

/// Where the decoder's second encoder comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondEncoderSource {
    /// Frozen encoder loaded from a pre-training checkpoint.
    HdrPretrained,
    /// Frozen, randomly initialized encoder.
    Random,
    /// A second trainable NMT encoder starting from a copy of the first.
    NmtCopy,
}

impl FromStr for SecondEncoderSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "hdr_pretrained" | "hdr" => SecondEncoderSource::HdrPretrained,
            "random" => SecondEncoderSource::Random,
            "nmt_copy" => SecondEncoderSource::NmtCopy,
            other => {
                return Err(Error::Config(format!(
                    "unknown second encoder source {other:?}"
                )))
            }
        })
    }
}

impl fmt::Display for SecondEncoderSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SecondEncoderSource::HdrPretrained => "hdr_pretrained",
            SecondEncoderSource::Random => "random",
            SecondEncoderSource::NmtCopy => "nmt_copy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub max_len: usize,
    pub dropout: f32,
    pub fusion_scheme: FusionScheme,
    pub gate_mode: GateMode,
    pub second_encoder_source: SecondEncoderSource,
    /// Test-only: layer norm and feed-forward blocks become identity maps
    /// and dropout is disabled.
    #[serde(default)]
    pub identity_mode: bool,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f32,
}

fn default_ln_eps() -> f32 {
    1e-5
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 256,
            src_vocab: 0,
            tgt_vocab: 0,
            max_len: 64,
            dropout: 0.1,
            fusion_scheme: FusionScheme::Baseline,
            gate_mode: GateMode::default(),
            second_encoder_source: SecondEncoderSource::HdrPretrained,
            identity_mode: false,
            ln_eps: default_ln_eps(),
        }
    }
}

impl ModelConfig {
    /// The six-layer, 512-wide configuration of the original transformer.
    pub fn vanilla(src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            d_model: 512,
            n_heads: 8,
            n_enc_layers: 6,
            n_dec_layers: 6,
            d_ff: 2048,
            src_vocab,
            tgt_vocab,
            max_len: 256,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return bad(format!(
                "d_model must be positive and even, got {}",
                self.d_model
            ));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "n_heads {} does not divide d_model {}",
                self.n_heads, self.d_model
            ));
        }
        if self.n_enc_layers == 0 || self.n_dec_layers == 0 || self.d_ff == 0 || self.max_len == 0 {
            return bad("layer counts, d_ff and max_len must be positive".into());
        }
        if self.src_vocab == 0 || self.tgt_vocab == 0 {
            return bad("vocabulary sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if let GateMode::Fixed(g) = self.gate_mode {
            if !(0.0..=1.0).contains(&g) {
                return bad(format!("fixed gate {g} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Dropout probability actually applied.
    pub fn effective_dropout(&self) -> f32 {
        if self.identity_mode {
            0.0
        } else {
            self.dropout
        }
    }
}
