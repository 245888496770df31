//! Flat `key = value` configuration shared by the CLI config file and checkpoints.

use std::str::FromStr;

use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {msg}")]
    InvalidValue {
        key: String,
        value: String,
        msg: String,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        msg: e.to_string(),
    })
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            msg: "expected a boolean".into(),
        }),
    }
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Everything a training run needs, in one flat namespace.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.model.set(key, value) {
            Err(ConfigError::UnknownKey(_)) => self.train.set(key, value),
            other => other,
        }
    }

    pub fn apply_pairs(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Self::default();
        s.apply_pairs(&parse_pairs(text)?)?;
        Ok(s)
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut p = self.model.pairs();
        p.extend(self.train.pairs());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_with_comments() {
        let s = Settings::from_text(
            "# loss weights\nalpha = 1.25\nbeta=1  # slot\n\nbatch_size = 64\ndistill = soft4\ninteraction = implicit\n",
        )
        .unwrap();
        assert_eq!(s.train.alpha, 1.25);
        assert_eq!(s.train.batch_size, 64);
        assert_eq!(s.model.distill, "soft4");
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        assert_eq!(
            Settings::from_text("nope = 1"),
            Err(ConfigError::UnknownKey("nope".into()))
        );
        assert!(matches!(
            Settings::from_text("epochs = many"),
            Err(ConfigError::InvalidValue { .. })
        ));
        assert_eq!(
            Settings::from_text("epochs 3"),
            Err(ConfigError::Syntax { line: 1 })
        );
    }

    #[test]
    fn pairs_round_trip() {
        let mut s = Settings::default();
        s.set("decoder_hidden", "12").unwrap();
        s.set("gat_dim", "12").unwrap();
        s.set("learning_rate", "0.003").unwrap();
        let mut t = Settings::default();
        t.apply_pairs(&s.pairs()).unwrap();
        assert_eq!(s, t);
    }
}
