//! Distillation from the final slot decoder (teacher) into the initial one (student).

use std::collections::BTreeMap;
use std::fmt::Debug;

use crate::tensor::{Result, Var};

/// One decoder's contribution to distillation: its per-token hidden states and logits.
#[derive(Debug, Clone, Copy)]
pub struct DecoderView<'a> {
    pub hidden: &'a Var,
    pub logits: &'a Var,
}

/// The scalar a strategy adds to the loss, tagged so the breakdown can report it.
#[derive(Debug, Clone)]
pub enum DistillTerm {
    Hint(Var),
    Soft(Var),
}

impl DistillTerm {
    pub fn var(&self) -> &Var {
        match self {
            DistillTerm::Hint(v) | DistillTerm::Soft(v) => v,
        }
    }
}

pub trait DistillStrategy: Send + Sync + Debug {
    fn name(&self) -> &str;

    /// Builds the distillation term; the teacher side must not receive gradient.
    fn loss(&self, student: DecoderView<'_>, teacher: DecoderView<'_>) -> Result<Option<DistillTerm>>;

    fn clone_box(&self) -> Box<dyn DistillStrategy>;
}

impl Clone for Box<dyn DistillStrategy> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoDistill;

impl DistillStrategy for NoDistill {
    fn clone_box(&self) -> Box<dyn DistillStrategy> {
        Box::new(*self)
    }

    fn name(&self) -> &str {
        "none"
    }

    fn loss(&self, _: DecoderView<'_>, _: DecoderView<'_>) -> Result<Option<DistillTerm>> {
        Ok(None)
    }
}

/// Mean squared distance between student hiddens and detached graph outputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct HintDistill;

impl DistillStrategy for HintDistill {
    fn clone_box(&self) -> Box<dyn DistillStrategy> {
        Box::new(*self)
    }

    fn name(&self) -> &str {
        "hint"
    }

    fn loss(&self, student: DecoderView<'_>, teacher: DecoderView<'_>) -> Result<Option<DistillTerm>> {
        let target = teacher.hidden.detach()?;
        Ok(Some(DistillTerm::Hint(student.hidden.mse(&target)?)))
    }
}

/// Token-averaged cross-entropy between temperature-softened distributions, times T².
#[derive(Debug, Clone)]
pub struct SoftTargetDistill {
    name: String,
    temperature: f64,
}

impl SoftTargetDistill {
    pub fn new(temperature: f64) -> Self {
        assert!(temperature > 0.0, "temperature must be positive");
        Self {
            name: format!("soft{temperature}"),
            temperature,
        }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

impl DistillStrategy for SoftTargetDistill {
    fn clone_box(&self) -> Box<dyn DistillStrategy> {
        Box::new(self.clone())
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn loss(&self, student: DecoderView<'_>, teacher: DecoderView<'_>) -> Result<Option<DistillTerm>> {
        let t = self.temperature;
        let target = teacher.logits.detach()?.scale(1.0 / t)?.softmax(1, None)?.detach()?;
        let log_q = student.logits.scale(1.0 / t)?.log_softmax(1)?;
        let n = student.logits.shape()[0] as f64;
        let ce = log_q.mul(&target)?.sum(None)?.scale(-t * t / n)?;
        Ok(Some(DistillTerm::Soft(ce)))
    }
}

type Factory = Box<dyn Fn() -> Box<dyn DistillStrategy> + Send + Sync>;

/// Strategies by name, instantiated on demand.
pub struct DistillRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Debug for DistillRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DistillRegistry")
            .field("names", &self.names())
            .finish()
    }
}

impl DistillRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> Box<dyn DistillStrategy> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str) -> Option<Box<dyn DistillStrategy>> {
        self.factories.get(name).map(|f| f())
    }
}

impl Default for DistillRegistry {
    /// `none`, `hint`, `soft2` and `soft4`.
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("none", || Box::new(NoDistill));
        r.register("hint", || Box::new(HintDistill));
        r.register("soft2", || Box::new(SoftTargetDistill::new(2.0)));
        r.register("soft4", || Box::new(SoftTargetDistill::new(4.0)));
        r
    }
}
