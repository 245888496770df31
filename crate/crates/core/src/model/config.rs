use std::fmt;
use std::str::FromStr;

use crate::config::{parse_bool, parse_value, ConfigError, Result};
use crate::model::distill::DistillRegistry;

/// Whether decoders feed each other (`explicit`) or only share the encoder (`implicit`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InteractionMode {
    Implicit,
    #[default]
    Explicit,
}

impl FromStr for InteractionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "implicit" => Ok(Self::Implicit),
            "explicit" => Ok(Self::Explicit),
            other => Err(format!("expected implicit|explicit, got `{other}`")),
        }
    }
}

impl fmt::Display for InteractionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Implicit => "implicit",
            Self::Explicit => "explicit",
        })
    }
}

/// How initial slot predictions enter the intent decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SlotFeedback {
    /// Probability-weighted slot-label embedding; differentiable.
    #[default]
    Soft,
    /// Embedding of the argmax label; blocks the gradient into the initial decoder.
    Hard,
}

impl FromStr for SlotFeedback {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "soft" => Ok(Self::Soft),
            "hard" => Ok(Self::Hard),
            other => Err(format!("expected soft|hard, got `{other}`")),
        }
    }
}

impl fmt::Display for SlotFeedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Soft => "soft",
            Self::Hard => "hard",
        })
    }
}

/// Architectural hyperparameters. Vocabulary sizes are filled in from data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub word_vocab: usize,
    pub num_slots: usize,
    pub num_intents: usize,
    pub emb_dim: usize,
    /// Per direction.
    pub encoder_hidden: usize,
    pub attn_dim: usize,
    pub decoder_hidden: usize,
    pub slot_emb_dim: usize,
    pub gat_layers: usize,
    /// Must equal `decoder_hidden`: graph outputs are distilled into decoder states.
    pub gat_dim: usize,
    pub gat_slope: f64,
    pub intent_threshold: f64,
    pub dropout: f64,
    pub interaction: InteractionMode,
    /// `false` drops the final slot decoder (two-decoder ablations).
    pub final_decoder: bool,
    /// Name of a registered distillation strategy.
    pub distill: String,
    pub teacher_forcing: bool,
    pub slot_feedback: SlotFeedback,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            word_vocab: 0,
            num_slots: 0,
            num_intents: 0,
            emb_dim: 128,
            encoder_hidden: 128,
            attn_dim: 128,
            decoder_hidden: 64,
            slot_emb_dim: 32,
            gat_layers: 2,
            gat_dim: 64,
            gat_slope: 0.2,
            intent_threshold: 0.5,
            dropout: 0.4,
            interaction: InteractionMode::Explicit,
            final_decoder: true,
            distill: "hint".into(),
            teacher_forcing: true,
            slot_feedback: SlotFeedback::Soft,
        }
    }
}

impl ModelConfig {
    /// Width of the encoder output: both BiLSTM directions plus self-attention.
    pub fn encoder_dim(&self) -> usize {
        2 * self.encoder_hidden + self.attn_dim
    }

    pub fn with_vocab_sizes(mut self, words: usize, slots: usize, intents: usize) -> Self {
        self.word_vocab = words;
        self.num_slots = slots;
        self.num_intents = intents;
        self
    }

    /// Sets the same width on every hidden layer (handy for small experiments).
    pub fn with_width(mut self, width: usize) -> Self {
        self.emb_dim = width;
        self.encoder_hidden = width;
        self.attn_dim = width;
        self.decoder_hidden = width;
        self.gat_dim = width;
        self.slot_emb_dim = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("word_vocab", self.word_vocab),
            ("num_slots", self.num_slots),
            ("num_intents", self.num_intents),
            ("emb_dim", self.emb_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("attn_dim", self.attn_dim),
            ("decoder_hidden", self.decoder_hidden),
            ("slot_emb_dim", self.slot_emb_dim),
            ("gat_layers", self.gat_layers),
            ("gat_dim", self.gat_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if !(self.intent_threshold > 0.0 && self.intent_threshold < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "intent_threshold must lie in (0, 1), got {}",
                self.intent_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Invalid(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.gat_slope <= 0.0 {
            return Err(ConfigError::Invalid("gat_slope must be positive".into()));
        }
        if self.gat_dim != self.decoder_hidden {
            return Err(ConfigError::Invalid(format!(
                "gat_dim ({}) must equal decoder_hidden ({})",
                self.gat_dim, self.decoder_hidden
            )));
        }
        let registry = DistillRegistry::default();
        if !registry.contains(&self.distill) {
            return Err(ConfigError::Invalid(format!(
                "unknown distillation strategy `{}` (known: {})",
                self.distill,
                registry.names().join(", ")
            )));
        }
        if !self.final_decoder && self.distill != "none" {
            return Err(ConfigError::Invalid(
                "distillation needs the final slot decoder as teacher (set decoders = 3 or distill = none)".into(),
            ));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "word_vocab" => self.word_vocab = parse_value(key, value)?,
            "num_slots" => self.num_slots = parse_value(key, value)?,
            "num_intents" => self.num_intents = parse_value(key, value)?,
            "emb_dim" => self.emb_dim = parse_value(key, value)?,
            "encoder_hidden" => self.encoder_hidden = parse_value(key, value)?,
            "attn_dim" => self.attn_dim = parse_value(key, value)?,
            "decoder_hidden" => self.decoder_hidden = parse_value(key, value)?,
            "slot_emb_dim" => self.slot_emb_dim = parse_value(key, value)?,
            "gat_layers" => self.gat_layers = parse_value(key, value)?,
            "gat_dim" => self.gat_dim = parse_value(key, value)?,
            "gat_slope" => self.gat_slope = parse_value(key, value)?,
            "intent_threshold" => self.intent_threshold = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "interaction" => self.interaction = parse_value(key, value)?,
            "decoders" => {
                self.final_decoder = match value {
                    "2" => false,
                    "3" => true,
                    _ => {
                        return Err(ConfigError::InvalidValue {
                            key: key.into(),
                            value: value.into(),
                            msg: "expected 2 or 3".into(),
                        })
                    }
                }
            }
            "distill" => self.distill = value.to_string(),
            "teacher_forcing" => self.teacher_forcing = parse_bool(key, value)?,
            "slot_feedback" => self.slot_feedback = parse_value(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        let p = |k: &str, v: String| (k.to_string(), v);
        vec![
            p("word_vocab", self.word_vocab.to_string()),
            p("num_slots", self.num_slots.to_string()),
            p("num_intents", self.num_intents.to_string()),
            p("emb_dim", self.emb_dim.to_string()),
            p("encoder_hidden", self.encoder_hidden.to_string()),
            p("attn_dim", self.attn_dim.to_string()),
            p("decoder_hidden", self.decoder_hidden.to_string()),
            p("slot_emb_dim", self.slot_emb_dim.to_string()),
            p("gat_layers", self.gat_layers.to_string()),
            p("gat_dim", self.gat_dim.to_string()),
            p("gat_slope", format!("{:?}", self.gat_slope)),
            p("intent_threshold", format!("{:?}", self.intent_threshold)),
            p("dropout", format!("{:?}", self.dropout)),
            p("interaction", self.interaction.to_string()),
            p("decoders", if self.final_decoder { "3" } else { "2" }.to_string()),
            p("distill", self.distill.clone()),
            p("teacher_forcing", self.teacher_forcing.to_string()),
            p("slot_feedback", self.slot_feedback.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid() -> ModelConfig {
        ModelConfig::default().with_vocab_sizes(10, 4, 3)
    }

    #[test]
    fn default_with_sizes_is_valid() {
        valid().validate().unwrap();
        assert_eq!(valid().encoder_dim(), 384);
    }

    #[test]
    fn threshold_must_be_open_unit_interval() {
        for t in [0.0, 1.0, -0.2, 1.5] {
            let mut c = valid();
            c.intent_threshold = t;
            assert!(c.validate().is_err(), "{t}");
        }
    }

    #[test]
    fn rejects_inconsistent_settings() {
        let mut c = valid();
        c.gat_layers = 0;
        assert!(c.validate().is_err());
        let mut c = valid();
        c.gat_dim = 7;
        assert!(c.validate().is_err());
        let mut c = valid();
        c.final_decoder = false;
        assert!(c.validate().is_err());
        c.distill = "none".into();
        c.validate().unwrap();
        let mut c = valid();
        c.distill = "soft0".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn set_parses_enums() {
        let mut c = valid();
        c.set("interaction", "implicit").unwrap();
        c.set("decoders", "2").unwrap();
        c.set("slot_feedback", "hard").unwrap();
        assert_eq!(c.interaction, InteractionMode::Implicit);
        assert!(!c.final_decoder);
        assert_eq!(c.slot_feedback, SlotFeedback::Hard);
        assert!(c.set("decoders", "4").is_err());
        assert!(c.set("interaction", "sideways").is_err());
    }
}
