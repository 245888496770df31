use rand_chacha::ChaCha8Rng;

use super::{expect_cols, init_uniform};
use crate::tensor::{ParamId, ParamStore, Result, Session, Tensor, TensorError, Var};

/// Single-head scaled dot-product self-attention.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    query: ParamId,
    key: ParamId,
    value: ParamId,
    input_dim: usize,
    attn_dim: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, attn_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut proj = |suffix: &str| {
            store.add(
                format!("{name}.{suffix}"),
                init_uniform(rng, &[input_dim, attn_dim], input_dim),
            )
        };
        let query = proj("query");
        let key = proj("key");
        let value = proj("value");
        Self {
            query,
            key,
            value,
            input_dim,
            attn_dim,
        }
    }

    pub fn attn_dim(&self) -> usize {
        self.attn_dim
    }

    pub fn value_proj(&self) -> ParamId {
        self.value
    }

    /// Attention probabilities `n × n` (row = query) and the attended output `n × attn_dim`.
    /// `mask[t]` marks real tokens; padded keys get zero weight and padded query rows are zeroed.
    pub fn forward_with_weights(&self, s: &Session, x: &Var, mask: &[bool]) -> Result<(Var, Var)> {
        expect_cols("self_attention", x, self.input_dim)?;
        let n = x.shape()[0];
        if mask.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "self_attention",
                left: x.shape(),
                right: vec![mask.len()],
            });
        }
        let q = x.matmul(&s.param(self.query))?;
        let k = x.matmul(&s.param(self.key))?;
        let v = x.matmul(&s.param(self.value))?;
        let scores = q
            .matmul(&k.transpose()?)?
            .scale(1.0 / (self.attn_dim as f64).sqrt())?;
        let key_mask: Vec<bool> = (0..n * n).map(|i| mask[i % n]).collect();
        let probs = scores.softmax(1, Some(key_mask))?;
        let mut out = probs.matmul(&v)?;
        if mask.iter().any(|m| !m) {
            let rows = Tensor::matrix(
                n,
                self.attn_dim,
                (0..n * self.attn_dim)
                    .map(|i| if mask[i / self.attn_dim] { 1.0 } else { 0.0 })
                    .collect(),
            );
            out = out.mul(&s.constant(rows))?;
        }
        Ok((probs, out))
    }

    pub fn forward(&self, s: &Session, x: &Var, mask: &[bool]) -> Result<Var> {
        Ok(self.forward_with_weights(s, x, mask)?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradient_check, Mode};
    use rand::SeedableRng;

    fn layer(seed: u64) -> (ParamStore, SelfAttention, ChaCha8Rng) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let att = SelfAttention::new(&mut store, "att", 3, 3, &mut rng);
        (store, att, rng)
    }

    #[test]
    fn single_token_is_value_projection() {
        let (store, att, mut rng) = layer(0);
        let s = Session::new(&store, Mode::Eval);
        let x = s.constant(init_uniform(&mut rng, &[1, 3], 1));
        let out = att.forward(&s, &x, &[true]).unwrap().value();
        let expect = x.matmul(&s.param(att.value)).unwrap().value();
        assert!(out.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn identical_tokens_give_identical_rows() {
        let (store, att, _) = layer(1);
        let s = Session::new(&store, Mode::Eval);
        let x = s.constant(Tensor::from_rows(&vec![vec![0.2, -0.5, 0.9]; 4]));
        let out = att.forward(&s, &x, &[true; 4]).unwrap().value();
        for r in 1..4 {
            assert_eq!(out.row_slice(r), out.row_slice(0));
        }
    }

    #[test]
    fn matches_direct_formula() {
        let (store, att, mut rng) = layer(2);
        let s = Session::new(&store, Mode::Eval);
        let xt = init_uniform(&mut rng, &[4, 3], 1);
        let out = att.forward(&s, &s.constant(xt.clone()), &[true; 4]).unwrap().value();
        let (wq, wk, wv) = (store.get(att.query), store.get(att.key), store.get(att.value));
        let proj = |w: &Tensor, r: usize| -> Vec<f64> {
            (0..3)
                .map(|j| (0..3).map(|i| xt.get(r, i) * w.get(i, j)).sum())
                .collect()
        };
        for r in 0..4 {
            let q = proj(wq, r);
            let scores: Vec<f64> = (0..4)
                .map(|c| {
                    let k = proj(wk, c);
                    q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / 3f64.sqrt()
                })
                .collect();
            let z: f64 = scores.iter().map(|v| v.exp()).sum();
            for j in 0..3 {
                let expect: f64 = (0..4).map(|c| scores[c].exp() / z * proj(wv, c)[j]).sum();
                assert!((out.get(r, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn padded_keys_get_zero_weight() {
        let (store, att, mut rng) = layer(3);
        let s = Session::new(&store, Mode::Eval);
        let x = s.constant(init_uniform(&mut rng, &[4, 3], 1));
        let (probs, out) = att.forward_with_weights(&s, &x, &[true, true, false, false]).unwrap();
        let probs = probs.value();
        for r in 0..4 {
            assert_eq!(probs.get(r, 2), 0.0);
            assert_eq!(probs.get(r, 3), 0.0);
            assert!((probs.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(out.value().row_slice(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_masked_is_an_error() {
        let (store, att, mut rng) = layer(4);
        let s = Session::new(&store, Mode::Eval);
        let x = s.constant(init_uniform(&mut rng, &[2, 3], 1));
        assert!(matches!(
            att.forward(&s, &x, &[false, false]),
            Err(TensorError::AllMasked { .. })
        ));
    }

    #[test]
    fn gradient_check_attention() {
        let (store, att, mut rng) = layer(5);
        let x = init_uniform(&mut rng, &[4, 3], 1);
        let mut inputs = store.values().to_vec();
        inputs.push(x);
        let err = gradient_check(
            |v| {
                let s = Session::with_params(&store, &v[..3], Mode::Eval)?;
                att.forward(&s, &v[3], &[true, true, true, false])?.tanh()?.sum(None)
            },
            &inputs,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
