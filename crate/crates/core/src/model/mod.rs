//! The joint multi-intent model: a shared encoder and three ordered decoders
//! (initial slots, MIL intents, graph-refined final slots).

mod config;
pub mod distill;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{InteractionMode, ModelConfig, SlotFeedback};
pub use distill::DecoderView;
use distill::{DistillRegistry, DistillStrategy, DistillTerm};

use crate::config::ConfigError;
use crate::nn::{BiLstm, Embedding, GatLayer, GruCell, Linear, SelfAttention};
use crate::tensor::{sigmoid_scalar, Mode, ParamId, ParamStore, Session, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("empty utterance")]
    EmptyUtterance,
    #[error("{what}: expected {expected}, got {got}")]
    GoldMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("parameter `{0}` missing")]
    MissingParam(String),
    #[error("parameter `{name}`: expected shape {expected:?}, got {got:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("unexpected parameter `{0}`")]
    ExtraParam(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Loss weights α (distillation), β (slot NLL), λ (intent BCE).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.7,
            lambda: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub mse: f64,
    pub soft_distill: f64,
    pub nll_slot: f64,
    pub bce_intent: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn from_components(mse: f64, soft_distill: f64, nll_slot: f64, bce_intent: f64, weights: LossWeights) -> Self {
        Self {
            mse,
            soft_distill,
            nll_slot,
            bce_intent,
            total: weights.alpha * (mse + soft_distill) + weights.beta * nll_slot + weights.lambda * bce_intent,
            weights,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.mse, self.soft_distill, self.nll_slot, self.bce_intent, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct InitialSlots {
    pub hidden: Var,
    pub logits: Var,
    pub probs: Var,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MilIntents {
    pub hidden: Var,
    /// `1 × n`.
    pub token_weights: Var,
    /// `1 × decoder_hidden`.
    pub context: Var,
    /// `1 × num_intents`.
    pub logits: Var,
    pub probs: Vec<f64>,
    pub intents: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct FinalSlots {
    pub hidden: Var,
    /// Slot-node output of the last graph layer, one row per token.
    pub graph_hidden: Var,
    pub logits: Var,
    pub probs: Var,
    pub labels: Vec<usize>,
    /// `[token][layer][node][neighbor]` graph attention weights.
    pub attention: Vec<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub encoding: Var,
    pub initial: InitialSlots,
    pub slot_reinforce: Var,
    pub mil: MilIntents,
    pub intent_reinforce: Option<Var>,
    pub final_slots: Option<FinalSlots>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.initial.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Final-decoder labels when that decoder exists, otherwise the initial ones.
    pub fn slot_labels(&self) -> &[usize] {
        match &self.final_slots {
            Some(f) => &f.labels,
            None => &self.initial.labels,
        }
    }

    pub fn intents(&self) -> &[usize] {
        &self.mil.intents
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub intents: Vec<usize>,
    pub slots: Vec<usize>,
}

/// `{i : p_i > threshold}`, or the single argmax when that set is empty.
pub fn decode_intents(probs: &[f64], threshold: f64) -> Vec<usize> {
    let picked: Vec<usize> = probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > threshold)
        .map(|(i, _)| i)
        .collect();
    if picked.is_empty() && !probs.is_empty() {
        vec![argmax(probs)]
    } else {
        picked
    }
}

/// First index of the maximum.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn row_argmax(t: &Tensor) -> Vec<usize> {
    (0..t.rows()).map(|r| argmax(t.row_slice(r))).collect()
}

#[derive(Debug, Clone)]
struct FinalLayers {
    gru: GruCell,
    intent_emb: Embedding,
    gat: Vec<GatLayer>,
    out: Linear,
}

#[derive(Debug, Clone)]
struct Layers {
    word_emb: Embedding,
    encoder: BiLstm,
    attention: SelfAttention,
    /// `num_slots + 1` rows; the last is the start symbol.
    slot_emb: Embedding,
    initial_gru: GruCell,
    initial_out: Linear,
    mil_gru: GruCell,
    mil_score: Linear,
    intent_out: Linear,
    final_layers: Option<FinalLayers>,
}

impl Layers {
    fn build(c: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let enc = c.encoder_dim();
        let dh = c.decoder_hidden;
        let explicit = c.interaction == InteractionMode::Explicit;
        let word_emb = Embedding::new(store, "encoder.word_emb", c.word_vocab, c.emb_dim, rng);
        let encoder = BiLstm::new(store, "encoder.bilstm", c.emb_dim, c.encoder_hidden, rng);
        let attention = SelfAttention::new(store, "encoder.attention", c.emb_dim, c.attn_dim, rng);
        let slot_emb = Embedding::new(store, "initial.slot_emb", c.num_slots + 1, c.slot_emb_dim, rng);
        let initial_gru = GruCell::new(store, "initial.gru", c.slot_emb_dim + enc, dh, rng);
        let initial_out = Linear::new(store, "initial.out", dh, c.num_slots, true, rng);
        let mil_in = if explicit { enc + c.slot_emb_dim } else { enc };
        let mil_gru = GruCell::new(store, "mil.gru", mil_in, dh, rng);
        // A bias here would shift every token score equally and cancel in the softmax.
        let mil_score = Linear::new(store, "mil.score", dh, 1, false, rng);
        let intent_out = Linear::new(store, "mil.intent_out", dh, c.num_intents, true, rng);
        let final_layers = c.final_decoder.then(|| {
            let gru_in = if explicit { enc + dh } else { enc };
            let gru = GruCell::new(store, "final.gru", gru_in, dh, rng);
            let intent_emb = Embedding::new(store, "final.intent_emb", c.num_intents, dh, rng);
            let gat = (0..c.gat_layers)
                .map(|l| GatLayer::new(store, &format!("final.gat{l}"), dh, c.gat_dim, c.gat_slope, rng))
                .collect();
            let out = Linear::new(store, "final.out", c.gat_dim, c.num_slots, true, rng);
            FinalLayers {
                gru,
                intent_emb,
                gat,
                out,
            }
        });
        Self {
            word_emb,
            encoder,
            attention,
            slot_emb,
            initial_gru,
            initial_out,
            mil_gru,
            mil_score,
            intent_out,
            final_layers,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sdjn {
    config: ModelConfig,
    params: ParamStore,
    layers: Layers,
    distill: Box<dyn DistillStrategy>,
}

impl Sdjn {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = Layers::build(&config, &mut params, &mut rng);
        let distill = DistillRegistry::default()
            .create(&config.distill)
            .expect("validated names are registered");
        Ok(Self {
            config,
            params,
            layers,
            distill,
        })
    }

    /// Rebuilds a model around saved weights; names and shapes must match the layout exactly.
    pub fn from_params(config: ModelConfig, named: &BTreeMap<String, Tensor>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if let Some(extra) = named.keys().find(|k| model.params.find(k).is_none()) {
            return Err(ModelError::ExtraParam(extra.clone()));
        }
        let ids: Vec<ParamId> = model.params.ids().collect();
        for id in ids {
            let name = model.params.name(id).to_string();
            let t = named.get(&name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            let slot = model.params.get_mut(id);
            if slot.shape() != t.shape() {
                return Err(ModelError::ParamShape {
                    name,
                    expected: slot.shape().to_vec(),
                    got: t.shape().to_vec(),
                });
            }
            *slot = t.clone();
        }
        Ok(model)
    }

    /// Replaces the distillation strategy (for strategies registered outside the defaults).
    pub fn set_distill(&mut self, strategy: Box<dyn DistillStrategy>) {
        self.distill = strategy;
    }

    pub fn distill(&self) -> &dyn DistillStrategy {
        self.distill.as_ref()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn named_params(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(_, name, t)| (name.to_string(), t.clone()))
            .collect()
    }

    /// Parameters owned by the final slot decoder and its graph layers (the distillation teacher).
    pub fn teacher_params(&self) -> Vec<ParamId> {
        self.params
            .iter()
            .filter(|(_, name, _)| name.starts_with("final."))
            .map(|(id, _, _)| id)
            .collect()
    }

    pub fn session(&self, mode: Mode) -> Session<'_> {
        Session::new(&self.params, mode)
    }

    /// `n × (2·encoder_hidden + attn_dim)`: BiLSTM states beside self-attention outputs.
    pub fn encode(&self, s: &Session, token_ids: &[usize], mask: &[bool]) -> Result<Var> {
        if token_ids.is_empty() {
            return Err(ModelError::EmptyUtterance);
        }
        if mask.len() != token_ids.len() {
            return Err(ModelError::GoldMismatch {
                what: "mask length",
                expected: token_ids.len(),
                got: mask.len(),
            });
        }
        let l = &self.layers;
        let length = mask.iter().take_while(|&&m| m).count();
        let x = l.word_emb.forward(s, token_ids)?;
        let h = l.encoder.forward(s, &x, length)?;
        let a = l.attention.forward(s, &x, mask)?;
        let e = Var::concat(&[&h, &a], 1)?;
        Ok(s.dropout(&e, self.config.dropout)?)
    }

    /// Left-to-right GRU fed the previous slot label; teacher-forced when `gold` is given.
    pub fn initial_slot_decode(&self, s: &Session, e: &Var, gold: Option<&[usize]>) -> Result<InitialSlots> {
        let l = &self.layers;
        let n = e.shape()[0];
        let start = self.config.num_slots;
        let (hidden, logits) = match gold {
            Some(gold) => {
                check_len("gold slots", n, gold.len())?;
                let mut prev = Vec::with_capacity(n);
                prev.push(start);
                prev.extend_from_slice(&gold[..n - 1]);
                let inputs = Var::concat(&[&l.slot_emb.forward(s, &prev)?, e], 1)?;
                let hidden = l.initial_gru.run(s, &inputs)?;
                let logits = l.initial_out.forward(s, &hidden)?;
                (hidden, logits)
            }
            None => {
                let mut h = s.constant(Tensor::zeros(&[1, self.config.decoder_hidden]));
                let mut prev = start;
                let mut hs = Vec::with_capacity(n);
                let mut ls = Vec::with_capacity(n);
                for t in 0..n {
                    let x = Var::concat(&[&l.slot_emb.forward(s, &[prev])?, &e.row(t)?], 1)?;
                    h = l.initial_gru.step(s, &h, &x)?;
                    let logit = l.initial_out.forward(s, &h)?;
                    prev = argmax(logit.value().data());
                    hs.push(h.clone());
                    ls.push(logit);
                }
                let hs: Vec<&Var> = hs.iter().collect();
                let ls: Vec<&Var> = ls.iter().collect();
                (Var::concat(&hs, 0)?, Var::concat(&ls, 0)?)
            }
        };
        let probs = logits.softmax(1, None)?;
        let labels = row_argmax(&logits.value());
        Ok(InitialSlots {
            hidden,
            logits,
            probs,
            labels,
        })
    }

    /// Slot information appended to the encoding in explicit mode.
    pub fn slot_reinforce(&self, s: &Session, e: &Var, initial: &InitialSlots) -> Result<Var> {
        if self.config.interaction == InteractionMode::Implicit {
            return Ok(e.clone());
        }
        let l = &self.layers;
        let info = match self.config.slot_feedback {
            SlotFeedback::Soft => {
                let table = s.param(l.slot_emb.table()).narrow(0, 0, self.config.num_slots)?;
                initial.probs.matmul(&table)?
            }
            SlotFeedback::Hard => l.slot_emb.forward(s, &initial.labels)?,
        };
        Ok(Var::concat(&[e, &info], 1)?)
    }

    /// Treats the utterance as a bag of tokens: attention-pooled GRU states give intent logits.
    pub fn mil_intent_decode(&self, s: &Session, reinforce: &Var, mask: &[bool]) -> Result<MilIntents> {
        let l = &self.layers;
        let n = reinforce.shape()[0];
        check_len("mask length", n, mask.len())?;
        let hidden = l.mil_gru.run(s, reinforce)?;
        let scores = l.mil_score.forward(s, &hidden)?.transpose()?;
        let token_weights = scores.softmax(1, Some(mask.to_vec()))?;
        let context = token_weights.matmul(&hidden)?;
        let logits = l.intent_out.forward(s, &context)?;
        let probs: Vec<f64> = logits.value().data().iter().map(|&z| sigmoid_scalar(z)).collect();
        let intents = decode_intents(&probs, self.config.intent_threshold);
        Ok(MilIntents {
            hidden,
            token_weights,
            context,
            logits,
            probs,
            intents,
        })
    }

    /// GRU over the intent-reinforced encoding, then per token a graph over the slot
    /// state (node 0) and one node per predicted intent.
    pub fn final_slot_decode(&self, s: &Session, e: &Var, mil_hidden: &Var, intents: &[usize]) -> Result<(Var, FinalSlots)> {
        let f = self
            .layers
            .final_layers
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("model has no final slot decoder".into()))?;
        if intents.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "final_slot_decode",
                msg: "no intent nodes".into(),
            }
            .into());
        }
        let reinforce = match self.config.interaction {
            InteractionMode::Explicit => Var::concat(&[e, mil_hidden], 1)?,
            InteractionMode::Implicit => e.clone(),
        };
        let hidden = f.gru.run(s, &reinforce)?;
        let intent_nodes = f.intent_emb.forward(s, intents)?;
        let m = intents.len() + 1;
        let graph: Vec<Vec<usize>> = vec![(0..m).collect(); m];
        let n = hidden.shape()[0];
        let last = f.gat.len() - 1;
        let mut outs = Vec::with_capacity(n);
        let mut attention = Vec::with_capacity(n);
        for t in 0..n {
            let mut nodes = Var::concat(&[&hidden.row(t)?, &intent_nodes], 0)?;
            let mut per_layer = Vec::with_capacity(f.gat.len());
            for (i, layer) in f.gat.iter().enumerate() {
                let out = if i == last {
                    layer.forward_rows(s, &nodes, &graph, &[0])?
                } else {
                    layer.forward(s, &nodes, &graph)?
                };
                per_layer.push(out.attention);
                nodes = out.nodes;
            }
            outs.push(nodes);
            attention.push(per_layer);
        }
        let refs: Vec<&Var> = outs.iter().collect();
        let graph_hidden = Var::concat(&refs, 0)?;
        let logits = f.out.forward(s, &graph_hidden)?;
        let probs = logits.softmax(1, None)?;
        let labels = row_argmax(&logits.value());
        Ok((
            reinforce,
            FinalSlots {
                hidden,
                graph_hidden,
                logits,
                probs,
                labels,
                attention,
            },
        ))
    }

    /// Full pipeline. `gold_slots` drives teacher forcing when that is enabled.
    pub fn forward(&self, s: &Session, token_ids: &[usize], gold_slots: Option<&[usize]>) -> Result<ForwardTrace> {
        let mask = vec![true; token_ids.len()];
        let encoding = self.encode(s, token_ids, &mask)?;
        let forced = gold_slots.filter(|_| self.config.teacher_forcing);
        let initial = self.initial_slot_decode(s, &encoding, forced)?;
        let slot_reinforce = self.slot_reinforce(s, &encoding, &initial)?;
        let mil = self.mil_intent_decode(s, &slot_reinforce, &mask)?;
        let (intent_reinforce, final_slots) = if self.config.final_decoder {
            let (r, f) = self.final_slot_decode(s, &encoding, &mil.hidden, &mil.intents)?;
            (Some(r), Some(f))
        } else {
            (None, None)
        };
        Ok(ForwardTrace {
            encoding,
            initial,
            slot_reinforce,
            mil,
            intent_reinforce,
            final_slots,
        })
    }

    /// Weighted joint loss for one utterance; `gold_intents` is multi-hot.
    pub fn compute_loss(
        &self,
        trace: &ForwardTrace,
        gold_slots: &[usize],
        gold_intents: &[f64],
        weights: LossWeights,
    ) -> Result<(Var, LossBreakdown)> {
        let teacher = trace.final_slots.as_ref().map(|f| DecoderView {
            hidden: &f.graph_hidden,
            logits: &f.logits,
        });
        self.compute_loss_with_teacher(trace, teacher, gold_slots, gold_intents, weights)
    }

    /// Like [`compute_loss`](Self::compute_loss) but distils from the given teacher view.
    /// Passing constants taken from an earlier pass freezes the teacher, which is what the
    /// stop-gradient means; gradient checks rely on this.
    pub fn compute_loss_with_teacher(
        &self,
        trace: &ForwardTrace,
        teacher: Option<DecoderView<'_>>,
        gold_slots: &[usize],
        gold_intents: &[f64],
        weights: LossWeights,
    ) -> Result<(Var, LossBreakdown)> {
        check_len("gold slots", trace.len(), gold_slots.len())?;
        check_len("gold intents", self.config.num_intents, gold_intents.len())?;
        let targets: Vec<Option<usize>> = gold_slots.iter().map(|&t| Some(t)).collect();
        let nll_initial = trace.initial.logits.log_softmax(1)?.nll(&targets)?;
        let nll = match &trace.final_slots {
            Some(f) => f.logits.log_softmax(1)?.nll(&targets)?.add(&nll_initial)?.scale(0.5)?,
            None => nll_initial,
        };
        let bce = trace.mil.logits.bce_with_logits(gold_intents)?;
        let student = DecoderView {
            hidden: &trace.initial.hidden,
            logits: &trace.initial.logits,
        };
        let term = match teacher {
            Some(teacher) => self.distill.loss(student, teacher)?,
            None => None,
        };
        let mut total = nll.scale(weights.beta)?.add(&bce.scale(weights.lambda)?)?;
        let (mut mse, mut soft) = (0.0, 0.0);
        if let Some(term) = &term {
            total = total.add(&term.var().scale(weights.alpha)?)?;
            match term {
                DistillTerm::Hint(v) => mse = v.value().item(),
                DistillTerm::Soft(v) => soft = v.value().item(),
            }
        }
        let mut breakdown = LossBreakdown::from_components(mse, soft, nll.value().item(), bce.value().item(), weights);
        breakdown.total = total.value().item();
        Ok((total, breakdown))
    }

    /// Forward plus loss for one training example.
    pub fn example_loss(
        &self,
        s: &Session,
        token_ids: &[usize],
        gold_slots: &[usize],
        gold_intents: &[f64],
        weights: LossWeights,
    ) -> Result<(Var, LossBreakdown)> {
        let trace = self.forward(s, token_ids, Some(gold_slots))?;
        self.compute_loss(&trace, gold_slots, gold_intents, weights)
    }

    /// Eval-mode decoding of one utterance.
    pub fn predict(&self, token_ids: &[usize]) -> Result<Prediction> {
        let s = self.session(Mode::Eval);
        let trace = self.forward(&s, token_ids, None)?;
        Ok(Prediction {
            intents: trace.intents().to_vec(),
            slots: trace.slot_labels().to_vec(),
        })
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(ModelError::GoldMismatch { what, expected, got });
    }
    Ok(())
}
