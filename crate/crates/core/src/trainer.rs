//! Adam training loop with dev-set model selection.

use std::collections::BTreeSet;
use std::fmt;

use crate::checkpoint::Checkpoint;
use crate::config::{parse_bool, parse_value, ConfigError, Result as ConfigResult, Settings};
use crate::data::{batch_encoded, build_vocabularies, DataError, Example, Vocabularies};
use crate::metrics::{MetricsError, MetricsReport, SemanticFrame};
use crate::model::{LossBreakdown, LossWeights, ModelError, Sdjn};
use crate::tensor::{Mode, ParamStore, Session, Tensor, Var};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch}: mse={} soft={} nll={} bce={} total={}",
        .losses.mse, .losses.soft_distill, .losses.nll_slot, .losses.bce_intent, .losses.total
    )]
    NumericAbort {
        epoch: usize,
        batch: usize,
        losses: LossBreakdown,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Stop after this many epochs without a dev improvement; 0 disables.
    pub patience: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Stop as soon as dev overall accuracy reaches 1.0.
    pub stop_at_perfect: bool,
    pub train_path: String,
    pub dev_path: String,
    pub test_path: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            alpha: 1.0,
            beta: 0.7,
            lambda: 0.6,
            seed: 1,
            patience: 0,
            clip_norm: 5.0,
            stop_at_perfect: true,
            train_path: String::new(),
            dev_path: String::new(),
            test_path: String::new(),
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
        }
    }

    pub fn validate(&self) -> ConfigResult<()> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (k, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda)] {
            if !(v >= 0.0) {
                return fail(format!("{k} must be non-negative, got {v}"));
            }
        }
        for (k, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return fail(format!("{k} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.adam_eps > 0.0) || !(self.clip_norm >= 0.0) {
            return fail("adam_eps must be positive and clip_norm non-negative".into());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> ConfigResult<()> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse_value(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "stop_at_perfect" => self.stop_at_perfect = parse_bool(key, value)?,
            "train_path" => self.train_path = value.to_string(),
            "dev_path" => self.dev_path = value.to_string(),
            "test_path" => self.test_path = value.to_string(),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        let p = |k: &str, v: String| (k.to_string(), v);
        let mut out = vec![
            p("epochs", self.epochs.to_string()),
            p("batch_size", self.batch_size.to_string()),
            p("learning_rate", format!("{:?}", self.learning_rate)),
            p("adam_beta1", format!("{:?}", self.adam_beta1)),
            p("adam_beta2", format!("{:?}", self.adam_beta2)),
            p("adam_eps", format!("{:?}", self.adam_eps)),
            p("alpha", format!("{:?}", self.alpha)),
            p("beta", format!("{:?}", self.beta)),
            p("lambda", format!("{:?}", self.lambda)),
            p("seed", self.seed.to_string()),
            p("patience", self.patience.to_string()),
            p("clip_norm", format!("{:?}", self.clip_norm)),
            p("stop_at_perfect", self.stop_at_perfect.to_string()),
        ];
        // Empty paths would not survive a `key = value` round trip, so they are left out.
        for (k, v) in [
            ("train_path", &self.train_path),
            ("dev_path", &self.dev_path),
            ("test_path", &self.test_path),
        ] {
            if !v.is_empty() {
                out.push(p(k, v.clone()));
            }
        }
        out
    }
}

/// Adam with bias correction. Moments are indexed like the parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self::from_state(cfg, 0, zeros.clone(), zeros)
    }

    pub fn from_state(cfg: &TrainConfig, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            step,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// One update; parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let i = id.0;
            let p = params.get_mut(id);
            let g = grads.get(i).and_then(Option::as_ref);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, x) in p.data_mut().iter_mut().enumerate() {
                let gk = g.map_or(0.0, |g| g.data()[k]);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                *x -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mse: f64,
    pub soft_distill: f64,
    pub nll: f64,
    pub bce: f64,
    pub total: f64,
    pub dev: MetricsReport,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} mse={:.6} nll={:.6} bce={:.6} total={:.6} dev_slot_f1={:.4} dev_intent_acc={:.4} dev_overall={:.4}",
            self.epoch,
            self.mse + self.soft_distill,
            self.nll,
            self.bce,
            self.total,
            self.dev.slot_f1,
            self.dev.intent_accuracy,
            self.dev.overall_accuracy
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Builds vocabularies from `train` and fills the vocabulary sizes into the model config.
pub fn prepare(settings: &Settings, train: &[Example]) -> Result<(Settings, Vocabularies)> {
    let vocabs = build_vocabularies(train)?;
    let mut settings = settings.clone();
    settings.model.word_vocab = vocabs.words.len();
    settings.model.num_slots = vocabs.slots.len();
    settings.model.num_intents = vocabs.intents.len();
    settings.model.validate()?;
    settings.train.validate()?;
    Ok((settings, vocabs))
}

/// Seed for the dropout masks of one batch.
fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (batch as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Trains from scratch. `on_epoch` sees every epoch log, and the model as it stands
/// after that epoch, as soon as the log is computed.
pub fn train(
    settings: &Settings,
    train_set: &[Example],
    dev_set: &[Example],
    mut on_epoch: impl FnMut(&EpochLog, &Sdjn),
) -> Result<TrainOutcome> {
    let (settings, vocabs) = prepare(settings, train_set)?;
    let cfg = &settings.train;
    let mut model = Sdjn::new(settings.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg, model.params());
    let encoded = vocabs.encode_all(train_set)?;
    // Dev labels unseen in training are scored as errors rather than rejected.
    let weights = cfg.weights();

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Checkpoint> = None;
    let mut since_best = 0usize;
    for epoch in 1..=cfg.epochs {
        let batches = batch_encoded(
            &encoded,
            vocabs.intents.len(),
            cfg.batch_size,
            cfg.seed.wrapping_add(epoch as u64),
            true,
        )?;
        let mut sums = LossBreakdown::default();
        let mut count = 0usize;
        for (b, batch) in batches.iter().enumerate() {
            let s = Session::new(model.params(), Mode::Train {
                seed: batch_seed(cfg.seed, epoch, b),
            });
            let mut losses: Vec<Var> = Vec::with_capacity(batch.len());
            for i in 0..batch.len() {
                let (tokens, slots, intents) = batch.row(i);
                let (loss, parts) = model.example_loss(&s, tokens, slots, intents, weights)?;
                if !parts.is_finite() {
                    return Err(TrainError::NumericAbort {
                        epoch,
                        batch: b,
                        losses: parts,
                    });
                }
                sums.mse += parts.mse;
                sums.soft_distill += parts.soft_distill;
                sums.nll_slot += parts.nll_slot;
                sums.bce_intent += parts.bce_intent;
                sums.total += parts.total;
                count += 1;
                losses.push(loss);
            }
            let refs: Vec<&Var> = losses.iter().collect();
            let loss = Var::concat(&refs, 1)
                .and_then(|l| l.mean())
                .map_err(ModelError::from)?;
            let grads = loss.backward().map_err(ModelError::from)?;
            let mut grads = s.param_grads(&grads);
            drop(s);
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(model.params_mut(), &grads);
        }
        let n = count.max(1) as f64;
        let dev = evaluate(&model, &vocabs, dev_set)?;
        let entry = EpochLog {
            epoch,
            mse: sums.mse / n,
            soft_distill: sums.soft_distill / n,
            nll: sums.nll_slot / n,
            bce: sums.bce_intent / n,
            total: sums.total / n,
            dev,
        };
        log::debug!("{entry}");
        on_epoch(&entry, &model);
        let score = entry.dev.overall_accuracy;
        log.push(entry);

        if best.as_ref().map_or(true, |b| score > b.best_dev) {
            best = Some(Checkpoint {
                settings: settings.clone(),
                vocabs: vocabs.clone(),
                model: model.clone(),
                optimizer: Some(adam.clone()),
                best_dev: score,
                epoch,
            });
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cfg.stop_at_perfect && score >= 1.0 {
            log::info!("dev overall accuracy reached 1.0 at epoch {epoch}");
            break;
        }
        if cfg.patience > 0 && since_best >= cfg.patience {
            log::info!("no dev improvement for {since_best} epochs, stopping");
            break;
        }
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        log,
    })
}

/// Predicted frames for every example, in corpus order.
pub fn predict_frames<U, S>(model: &Sdjn, vocabs: &Vocabularies, utterances: &[U]) -> Result<Vec<SemanticFrame>>
where
    U: AsRef<[S]>,
    S: AsRef<str>,
{
    utterances
        .iter()
        .map(|tokens| {
            let ids = vocabs.encode_tokens(tokens.as_ref());
            let p = model.predict(&ids)?;
            Ok(SemanticFrame {
                intents: p.intents.iter().map(|&i| vocabs.intents.token(i).to_string()).collect::<BTreeSet<_>>(),
                slots: p.slots.iter().map(|&i| vocabs.slots.token(i).to_string()).collect(),
            })
        })
        .collect()
}

/// Mean loss components over a labelled corpus with dropout off and gold
/// previous labels fed to the initial decoder, as in training.
pub fn corpus_loss(model: &Sdjn, vocabs: &Vocabularies, corpus: &[Example], weights: LossWeights) -> Result<LossBreakdown> {
    let encoded = vocabs.encode_all(corpus)?;
    let batches = batch_encoded(&encoded, vocabs.intents.len(), encoded.len().max(1), 0, false)?;
    let s = model.session(Mode::Eval);
    let mut sums = LossBreakdown::default();
    let mut count = 0usize;
    for batch in &batches {
        for i in 0..batch.len() {
            let (tokens, slots, intents) = batch.row(i);
            let (_, parts) = model.example_loss(&s, tokens, slots, intents, weights)?;
            sums.mse += parts.mse;
            sums.soft_distill += parts.soft_distill;
            sums.nll_slot += parts.nll_slot;
            sums.bce_intent += parts.bce_intent;
            sums.total += parts.total;
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    Ok(LossBreakdown {
        mse: sums.mse / n,
        soft_distill: sums.soft_distill / n,
        nll_slot: sums.nll_slot / n,
        bce_intent: sums.bce_intent / n,
        total: sums.total / n,
        weights,
    })
}

/// Eval-mode metrics over a labelled corpus.
pub fn evaluate(model: &Sdjn, vocabs: &Vocabularies, corpus: &[Example]) -> Result<MetricsReport> {
    let utterances: Vec<&[String]> = corpus.iter().map(|e| e.tokens.as_slice()).collect();
    let pred = predict_frames(model, vocabs, &utterances)?;
    let gold: Vec<SemanticFrame> = corpus
        .iter()
        .map(|e| SemanticFrame {
            intents: e.intents.clone(),
            slots: e.slots.clone(),
        })
        .collect();
    Ok(MetricsReport::compute(&gold, &pred, vocabs.intents.entries())?)
}

/// Evaluation that rejects labels missing from the checkpoint's vocabularies.
pub fn evaluate_checkpoint(cp: &Checkpoint, corpus: &[Example]) -> Result<MetricsReport> {
    cp.vocabs.encode_all(corpus)?;
    evaluate(&cp.model, &cp.vocabs, corpus)
}
