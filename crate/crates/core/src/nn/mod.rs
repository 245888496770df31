//! Parameterized layers. Each layer holds [`ParamId`]s into a shared
//! [`ParamStore`] and runs against a [`Session`].

mod attention;
mod gat;
mod recurrent;

pub use attention::SelfAttention;
pub use gat::{GatLayer, GatOutput};
pub use recurrent::{BiLstm, GruCell, LstmCell};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{ParamId, ParamStore, Result, Session, Tensor, TensorError, Var};

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-bound..=bound)).collect(),
    )
    .expect("init shape")
}

#[derive(Debug, Clone)]
pub struct Embedding {
    table: ParamId,
    rows: usize,
    dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let table = store.add(name, init_uniform(rng, &[rows, dim], dim));
        Self { table, rows, dim }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn table(&self) -> ParamId {
        self.table
    }

    /// `len(ids) × dim`; gradients scatter back into the table rows.
    pub fn forward(&self, s: &Session, ids: &[usize]) -> Result<Var> {
        s.param(self.table).gather_rows(ids)
    }
}

/// `x W + b` over rows of `x`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init_uniform(rng, &[in_dim, out_dim], in_dim));
        let bias = bias.then(|| store.add(format!("{name}.bias"), init_uniform(rng, &[1, out_dim], in_dim)));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.bias
    }

    pub fn forward(&self, s: &Session, x: &Var) -> Result<Var> {
        let y = x.matmul(&s.param(self.weight))?;
        match self.bias {
            Some(b) => y.add(&s.param(b)),
            None => Ok(y),
        }
    }
}

pub(crate) fn expect_cols(op: &'static str, x: &Var, cols: usize) -> Result<()> {
    let shape = x.shape();
    if shape.len() != 2 || shape[1] != cols {
        return Err(TensorError::ShapeMismatch {
            op,
            left: shape,
            right: vec![cols],
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradient_check, Mode};
    use rand::SeedableRng;

    fn identity_table() -> (ParamStore, Embedding) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = Embedding::new(&mut store, "emb", 3, 3, &mut rng);
        *store.get_mut(emb.table()) = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        (store, emb)
    }

    #[test]
    fn embed_identity_row() {
        let (store, emb) = identity_table();
        let s = Session::new(&store, Mode::Eval);
        assert_eq!(emb.forward(&s, &[2]).unwrap().value().data(), &[0., 0., 1.]);
    }

    #[test]
    fn embed_empty_ids() {
        let (store, emb) = identity_table();
        let s = Session::new(&store, Mode::Eval);
        assert_eq!(emb.forward(&s, &[]).unwrap().shape(), vec![0, 3]);
    }

    #[test]
    fn embed_out_of_range_names_position() {
        let (store, emb) = identity_table();
        let s = Session::new(&store, Mode::Eval);
        let err = emb.forward(&s, &[0, 1, 5]).unwrap_err();
        assert!(matches!(err, TensorError::IndexOutOfRange { position: 2, index: 5, .. }));
    }

    #[test]
    fn embed_gradient_counts_rows() {
        let (store, emb) = identity_table();
        let s = Session::new(&store, Mode::Eval);
        let loss = emb.forward(&s, &[0, 2, 2]).unwrap().sum(None).unwrap();
        let grads = s.param_grads(&loss.backward().unwrap());
        let g = grads[emb.table().0].as_ref().unwrap();
        assert_eq!(g.data(), &[1., 1., 1., 0., 0., 0., 2., 2., 2.]);
        // finite-difference oracle
        let err = gradient_check(
            |v| v[0].gather_rows(&[0, 2, 2])?.sum(None),
            &[store.get(emb.table()).clone()],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn linear_gradient_check() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lin = Linear::new(&mut store, "lin", 4, 3, true, &mut rng);
        let x = init_uniform(&mut rng, &[2, 4], 1);
        let mut inputs = store.values().to_vec();
        inputs.push(x);
        let err = gradient_check(
            |v| {
                let s = Session::with_params(&store, &v[..2], Mode::Eval)?;
                lin.forward(&s, &v[2])?.tanh()?.sum(None)
            },
            &inputs,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
