use std::cell::{Cell, RefCell};

use super::{Gradients, Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named learnable tensors. Every parameter is registered exactly once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name, which is a layout bug.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "parameter `{name}` registered twice"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active; masks derive from `seed` and a per-session call counter.
    Train { seed: u64 },
    Eval,
}

/// One forward pass: a fresh tape plus lazily bound parameter leaves.
pub struct Session<'p> {
    tape: Tape,
    store: &'p ParamStore,
    bound: RefCell<Vec<Option<Var>>>,
    mode: Mode,
    dropout_calls: Cell<u64>,
}

impl<'p> Session<'p> {
    pub fn new(store: &'p ParamStore, mode: Mode) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: RefCell::new(vec![None; store.len()]),
            mode,
            dropout_calls: Cell::new(0),
        }
    }

    /// Uses caller-provided vars (one per parameter, in id order) instead of
    /// fresh leaves; lets a whole model be treated as a function of its weights.
    pub fn with_params(store: &'p ParamStore, params: &[Var], mode: Mode) -> Result<Self> {
        if params.len() != store.len() {
            return Err(TensorError::InvalidArgument {
                op: "session",
                msg: format!("expected {} parameter vars, got {}", store.len(), params.len()),
            });
        }
        let tape = params
            .first()
            .map(|v| v.tape().clone())
            .unwrap_or_default();
        Ok(Self {
            tape,
            store,
            bound: RefCell::new(params.iter().cloned().map(Some).collect()),
            mode,
            dropout_calls: Cell::new(0),
        })
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        matches!(self.mode, Mode::Train { .. })
    }

    pub fn param(&self, id: ParamId) -> Var {
        let mut bound = self.bound.borrow_mut();
        bound[id.0]
            .get_or_insert_with(|| self.tape.var(self.store.get(id).clone()))
            .clone()
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.tape.constant(value)
    }

    /// Dropout with a fresh deterministic mask per call; identity in eval mode.
    pub fn dropout(&self, x: &Var, rate: f64) -> Result<Var> {
        match self.mode {
            Mode::Eval => Ok(x.clone()),
            Mode::Train { seed } => {
                let call = self.dropout_calls.get();
                self.dropout_calls.set(call + 1);
                let mixed = seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(call.wrapping_mul(0xBF58_476D_1CE4_E5B9));
                x.dropout(rate, true, mixed)
            }
        }
    }

    /// Per-parameter gradients in id order; `None` for parameters the loss never touched.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Option<Tensor>> {
        self.bound
            .borrow()
            .iter()
            .map(|b| b.as_ref().and_then(|v| grads.get(v).cloned()))
            .collect()
    }
}
