//! Plain-text model archive.
//!
//! ```text
//! SDJN1
//! # key value            (settings, vocabularies, optimizer step, best dev score, epoch)
//! name ndim d1 d2 ...    (one header per tensor, names in lexicographic order)
//! v1 v2 v3 ...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::{ConfigError, Settings};
use crate::data::{Vocabularies, Vocabulary};
use crate::model::{ModelError, Sdjn};
use crate::tensor::Tensor;
use crate::trainer::Adam;

pub const MAGIC: &str = "SDJN1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: expected `{MAGIC}` on the first line, found `{0}`")]
    BadMagic(String),
    #[error("tensor `{0}` is truncated")]
    Truncated(String),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// Everything needed to resume training or to serve predictions.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub settings: Settings,
    pub vocabs: Vocabularies,
    pub model: Sdjn,
    pub optimizer: Option<Adam>,
    pub best_dev: f64,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        let mut settings = self.settings.clone();
        settings.model = self.model.config().clone();
        for (k, v) in settings.pairs() {
            let _ = writeln!(out, "# {k} {v}");
        }
        for (k, vocab) in [
            ("vocab.words", &self.vocabs.words),
            ("vocab.slots", &self.vocabs.slots),
            ("vocab.intents", &self.vocabs.intents),
        ] {
            let _ = writeln!(out, "# {k} {}", vocab.entries().join(" "));
        }
        let _ = writeln!(out, "# best_dev {:?}", self.best_dev);
        let _ = writeln!(out, "# epoch {}", self.epoch);

        let mut tensors: BTreeMap<String, &Tensor> = BTreeMap::new();
        let params = self.model.params();
        for (_, name, t) in params.iter() {
            tensors.insert(name.to_string(), t);
        }
        if let Some(adam) = &self.optimizer {
            let _ = writeln!(out, "# adam.step {}", adam.step_count());
            for (id, name, _) in params.iter() {
                tensors.insert(format!("adam.m.{name}"), &adam.first_moments()[id.0]);
                tensors.insert(format!("adam.v.{name}"), &adam.second_moments()[id.0]);
            }
        }
        for (name, t) in tensors {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{name} {} {}", t.rank(), dims.join(" "));
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        let first = lines.next().map(|(_, l)| l.trim_end()).unwrap_or("");
        if first != MAGIC {
            return Err(CheckpointError::BadMagic(first.chars().take(40).collect()));
        }

        let mut settings = Settings::default();
        let mut vocab_lines: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut best_dev = f64::NEG_INFINITY;
        let mut epoch = 0usize;
        let mut adam_step: Option<u64> = None;
        while let Some((i, line)) = lines.peek().copied() {
            let Some(rest) = line.strip_prefix('#') else { break };
            lines.next();
            let rest = rest.trim();
            let (key, value) = rest.split_once(' ').unwrap_or((rest, ""));
            let bad = |msg: String| CheckpointError::Malformed { line: i + 1, msg };
            match key {
                "vocab.words" | "vocab.slots" | "vocab.intents" => {
                    vocab_lines.insert(key.to_string(), value.split_whitespace().map(String::from).collect());
                }
                "best_dev" => best_dev = value.parse().map_err(|e| bad(format!("best_dev: {e}")))?,
                "epoch" => epoch = value.parse().map_err(|e| bad(format!("epoch: {e}")))?,
                "adam.step" => adam_step = Some(value.parse().map_err(|e| bad(format!("adam.step: {e}")))?),
                _ => settings.set(key, value)?,
            }
        }

        let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
        while let Some((i, header)) = lines.next() {
            if header.trim().is_empty() {
                continue;
            }
            let mut fields = header.split_whitespace();
            let name = fields.next().unwrap_or_default().to_string();
            let bad = |msg: &str| CheckpointError::Malformed {
                line: i + 1,
                msg: format!("tensor `{name}`: {msg}"),
            };
            let ndim: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad("missing rank"))?;
            let shape = fields
                .map(|f| f.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("bad dimension"))?;
            if shape.len() != ndim {
                return Err(bad("rank does not match dimensions"));
            }
            let numel: usize = shape.iter().product();
            let values = match lines.next() {
                Some((_, data)) => data
                    .split_whitespace()
                    .map(|f| f.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("bad value"))?,
                None if numel == 0 => Vec::new(),
                None => return Err(CheckpointError::Truncated(name)),
            };
            if values.len() != numel {
                return Err(CheckpointError::Truncated(name));
            }
            let t = Tensor::new(shape, values).map_err(|e| bad(&e.to_string()))?;
            tensors.insert(name, t);
        }

        let mut vocab = |key: &str, reserved: bool| -> Result<Vocabulary> {
            let entries = vocab_lines.remove(key).ok_or_else(|| CheckpointError::Malformed {
                line: 0,
                msg: format!("missing `{key}`"),
            })?;
            Ok(Vocabulary::from_entries(entries, reserved))
        };
        let vocabs = Vocabularies {
            words: vocab("vocab.words", true)?,
            slots: vocab("vocab.slots", false)?,
            intents: vocab("vocab.intents", false)?,
        };

        let mut m_moments = BTreeMap::new();
        let mut v_moments = BTreeMap::new();
        let mut params = BTreeMap::new();
        for (name, t) in tensors {
            if let Some(p) = name.strip_prefix("adam.m.") {
                m_moments.insert(p.to_string(), t);
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                v_moments.insert(p.to_string(), t);
            } else {
                params.insert(name, t);
            }
        }
        let model = Sdjn::from_params(settings.model.clone(), &params)?;
        let optimizer = match adam_step {
            None => None,
            Some(step) => {
                let mut ms = Vec::new();
                let mut vs = Vec::new();
                for (_, name, t) in model.params().iter() {
                    let lookup = |map: &mut BTreeMap<String, Tensor>, prefix: &str| {
                        map.remove(name)
                            .filter(|m| m.shape() == t.shape())
                            .ok_or_else(|| CheckpointError::Truncated(format!("{prefix}{name}")))
                    };
                    ms.push(lookup(&mut m_moments, "adam.m.")?);
                    vs.push(lookup(&mut v_moments, "adam.v.")?);
                }
                Some(Adam::from_state(&settings.train, step, ms, vs))
            }
        };
        Ok(Self {
            settings,
            vocabs,
            model,
            optimizer,
            best_dev,
            epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }
}
