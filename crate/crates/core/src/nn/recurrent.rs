use rand_chacha::ChaCha8Rng;

use super::{expect_cols, init_uniform};
use crate::tensor::{ParamId, ParamStore, Result, Session, Tensor, TensorError, Var};

/// LSTM cell with fused gates in `[input, forget, cell, output]` order.
#[derive(Debug, Clone)]
pub struct LstmCell {
    w_x: ParamId,
    w_h: ParamId,
    bias: ParamId,
    input_dim: usize,
    hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_x = store.add(format!("{name}.w_x"), init_uniform(rng, &[input_dim, 4 * hidden], hidden));
        let w_h = store.add(format!("{name}.w_h"), init_uniform(rng, &[hidden, 4 * hidden], hidden));
        let bias = store.add(format!("{name}.bias"), init_uniform(rng, &[1, 4 * hidden], hidden));
        Self {
            w_x,
            w_h,
            bias,
            input_dim,
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.w_x, self.w_h, self.bias]
    }

    /// Input contribution to all gates for every row of `x`.
    pub fn project(&self, s: &Session, x: &Var) -> Result<Var> {
        expect_cols("lstm", x, self.input_dim)?;
        x.matmul(&s.param(self.w_x))?.add(&s.param(self.bias))
    }

    /// One step from a projected input row; returns `(h, c)`.
    pub fn step(&self, s: &Session, x_proj: &Var, h: &Var, c: &Var) -> Result<(Var, Var)> {
        let hd = self.hidden;
        let gates = x_proj.add(&h.matmul(&s.param(self.w_h))?)?;
        let i = gates.narrow(1, 0, hd)?.sigmoid()?;
        let f = gates.narrow(1, hd, hd)?.sigmoid()?;
        let g = gates.narrow(1, 2 * hd, hd)?.tanh()?;
        let o = gates.narrow(1, 3 * hd, hd)?.sigmoid()?;
        let c_next = f.mul(c)?.add(&i.mul(&g)?)?;
        let h_next = o.mul(&c_next.tanh()?)?;
        Ok((h_next, c_next))
    }
}

/// Single-layer bidirectional LSTM; output rows are `forward ⊕ backward`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    forward: LstmCell,
    backward: LstmCell,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            forward: LstmCell::new(store, &format!("{name}.fwd"), input_dim, hidden, rng),
            backward: LstmCell::new(store, &format!("{name}.bwd"), input_dim, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    pub fn cells(&self) -> (&LstmCell, &LstmCell) {
        (&self.forward, &self.backward)
    }

    /// `n × 2h`. Only the first `length` rows are processed; later rows are zero.
    pub fn forward(&self, s: &Session, x: &Var, length: usize) -> Result<Var> {
        let n = x.shape()[0];
        if n == 0 || length > n {
            return Err(TensorError::InvalidArgument {
                op: "bilstm",
                msg: format!("length {length} invalid for a sequence of {n} rows"),
            });
        }
        let h = self.hidden();
        let xf = self.forward.project(s, x)?;
        let xb = self.backward.project(s, x)?;
        let zero = s.constant(Tensor::zeros(&[1, h]));

        let mut fwd = Vec::with_capacity(length);
        let (mut hs, mut cs) = (zero.clone(), zero.clone());
        for t in 0..length {
            (hs, cs) = self.forward.step(s, &xf.row(t)?, &hs, &cs)?;
            fwd.push(hs.clone());
        }
        let mut bwd = vec![zero.clone(); length];
        let (mut hs, mut cs) = (zero.clone(), zero);
        for t in (0..length).rev() {
            (hs, cs) = self.backward.step(s, &xb.row(t)?, &hs, &cs)?;
            bwd[t] = hs.clone();
        }

        let mut rows = Vec::with_capacity(n);
        for t in 0..length {
            rows.push(Var::concat(&[&fwd[t], &bwd[t]], 1)?);
        }
        if length < n {
            rows.push(s.constant(Tensor::zeros(&[n - length, 2 * h])));
        }
        let refs: Vec<&Var> = rows.iter().collect();
        Var::concat(&refs, 0)
    }
}

/// GRU cell, gates in `[reset, update, candidate]` order:
/// `r = σ(x W_r + h U_r)`, `z = σ(x W_z + h U_z)`, `n = tanh(x W_n + r ⊙ (h U_n))`,
/// `h' = (1 - z) ⊙ n + z ⊙ h` (biases on both paths).
#[derive(Debug, Clone)]
pub struct GruCell {
    w_x: ParamId,
    w_h: ParamId,
    b_x: ParamId,
    b_h: ParamId,
    input_dim: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_x = store.add(format!("{name}.w_x"), init_uniform(rng, &[input_dim, 3 * hidden], hidden));
        let w_h = store.add(format!("{name}.w_h"), init_uniform(rng, &[hidden, 3 * hidden], hidden));
        let b_x = store.add(format!("{name}.b_x"), init_uniform(rng, &[1, 3 * hidden], hidden));
        let b_h = store.add(format!("{name}.b_h"), init_uniform(rng, &[1, 3 * hidden], hidden));
        Self {
            w_x,
            w_h,
            b_x,
            b_h,
            input_dim,
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.w_x, self.w_h, self.b_x, self.b_h]
    }

    pub fn project(&self, s: &Session, x: &Var) -> Result<Var> {
        expect_cols("gru", x, self.input_dim)?;
        x.matmul(&s.param(self.w_x))?.add(&s.param(self.b_x))
    }

    pub fn step(&self, s: &Session, prev: &Var, input: &Var) -> Result<Var> {
        expect_cols("gru", prev, self.hidden)?;
        let xp = self.project(s, input)?;
        self.step_projected(s, prev, &xp)
    }

    pub fn step_projected(&self, s: &Session, prev: &Var, x_proj: &Var) -> Result<Var> {
        let hd = self.hidden;
        let hp = prev.matmul(&s.param(self.w_h))?.add(&s.param(self.b_h))?;
        let r = x_proj.narrow(1, 0, hd)?.add(&hp.narrow(1, 0, hd)?)?.sigmoid()?;
        let z = x_proj.narrow(1, hd, hd)?.add(&hp.narrow(1, hd, hd)?)?.sigmoid()?;
        let n = x_proj
            .narrow(1, 2 * hd, hd)?
            .add(&r.mul(&hp.narrow(1, 2 * hd, hd)?)?)?
            .tanh()?;
        // h' = n + z ⊙ (h - n)
        n.add(&z.mul(&prev.sub(&n)?)?)
    }

    /// Runs over every row of `inputs` from a zero state; returns `n × h`.
    pub fn run(&self, s: &Session, inputs: &Var) -> Result<Var> {
        let n = inputs.shape()[0];
        let xp = self.project(s, inputs)?;
        let mut h = s.constant(Tensor::zeros(&[1, self.hidden]));
        let mut rows = Vec::with_capacity(n);
        for t in 0..n {
            h = self.step_projected(s, &h, &xp.row(t)?)?;
            rows.push(h.clone());
        }
        let refs: Vec<&Var> = rows.iter().collect();
        Var::concat(&refs, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradient_check, Mode};
    use rand::{Rng, SeedableRng};

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn zero_all(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            let t = store.get_mut(id);
            t.data_mut().fill(0.0);
        }
    }

    /// Scalar re-implementation of one GRU step.
    fn gru_oracle(store: &ParamStore, cell: &GruCell, prev: &[f64], x: &[f64]) -> Vec<f64> {
        let [w_x, w_h, b_x, b_h] = cell.params();
        let (w_x, w_h, b_x, b_h) = (store.get(w_x), store.get(w_h), store.get(b_x), store.get(b_h));
        let h = cell.hidden;
        let lin = |j: usize| -> (f64, f64) {
            let xs: f64 = x.iter().enumerate().map(|(i, xi)| xi * w_x.get(i, j)).sum::<f64>() + b_x.get(0, j);
            let hs: f64 = prev.iter().enumerate().map(|(i, hi)| hi * w_h.get(i, j)).sum::<f64>() + b_h.get(0, j);
            (xs, hs)
        };
        (0..h)
            .map(|k| {
                let (rx, rh) = lin(k);
                let (zx, zh) = lin(h + k);
                let (nx, nh) = lin(2 * h + k);
                let r = sig(rx + rh);
                let z = sig(zx + zh);
                let n = (nx + r * nh).tanh();
                (1.0 - z) * n + z * prev[k]
            })
            .collect()
    }

    #[test]
    fn gru_zero_weights_halves_previous_state() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = GruCell::new(&mut store, "gru", 3, 2, &mut rng);
        zero_all(&mut store);
        let s = Session::new(&store, Mode::Eval);
        let prev = s.constant(Tensor::row(&[0.8, -0.4]));
        let x = s.constant(Tensor::row(&[1.0, 2.0, 3.0]));
        let h = cell.step(&s, &prev, &x).unwrap();
        assert_eq!(h.value().data(), &[0.4, -0.2]);
    }

    #[test]
    fn gru_zero_prev_zero_recurrent_depends_on_input_only() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cell = GruCell::new(&mut store, "gru", 3, 2, &mut rng);
        store.get_mut(cell.w_h).data_mut().fill(0.0);
        let s = Session::new(&store, Mode::Eval);
        let prev = s.constant(Tensor::zeros(&[1, 2]));
        let x1 = s.constant(Tensor::row(&[0.1, 0.2, 0.3]));
        let a = cell.step(&s, &prev, &x1).unwrap().value();
        let b = cell.step(&s, &prev, &x1).unwrap().value();
        assert_eq!(a, b);
        let expect = gru_oracle(&store, &cell, &[0.0, 0.0], &[0.1, 0.2, 0.3]);
        for (p, q) in a.data().iter().zip(&expect) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn gru_matches_scalar_oracle() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cell = GruCell::new(&mut store, "gru", 4, 3, &mut rng);
        let prev: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = Session::new(&store, Mode::Eval);
        let h = cell
            .step(&s, &s.constant(Tensor::row(&prev)), &s.constant(Tensor::row(&x)))
            .unwrap();
        let expect = gru_oracle(&store, &cell, &prev, &x);
        for (p, q) in h.value().data().iter().zip(&expect) {
            assert!((p - q).abs() < 1e-12, "{p} vs {q}");
        }
    }

    #[test]
    fn gru_dim_mismatch() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cell = GruCell::new(&mut store, "gru", 4, 3, &mut rng);
        let s = Session::new(&store, Mode::Eval);
        let err = cell
            .step(&s, &s.constant(Tensor::zeros(&[1, 3])), &s.constant(Tensor::zeros(&[1, 5])))
            .unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { op: "gru", .. }));
    }

    #[test]
    fn bilstm_zero_weights_gives_zero_output() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lstm = BiLstm::new(&mut store, "enc", 3, 2, &mut rng);
        zero_all(&mut store);
        let s = Session::new(&store, Mode::Eval);
        let x = s.constant(init_uniform(&mut rng, &[4, 3], 1));
        let h = lstm.forward(&s, &x, 4).unwrap();
        assert_eq!(h.shape(), vec![4, 4]);
        assert!(h.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bilstm_single_step_equals_one_cell_step_each_way() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lstm = BiLstm::new(&mut store, "enc", 3, 2, &mut rng);
        let s = Session::new(&store, Mode::Eval);
        let x = s.constant(init_uniform(&mut rng, &[1, 3], 1));
        let out = lstm.forward(&s, &x, 1).unwrap().value();
        let zero = s.constant(Tensor::zeros(&[1, 2]));
        let (f, b) = lstm.cells();
        let (hf, _) = f.step(&s, &f.project(&s, &x).unwrap(), &zero, &zero).unwrap();
        let (hb, _) = b.step(&s, &b.project(&s, &x).unwrap(), &zero, &zero).unwrap();
        assert_eq!(&out.data()[..2], hf.value().data());
        assert_eq!(&out.data()[2..], hb.value().data());
    }

    #[test]
    fn bilstm_reversal_swaps_directions() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lstm = BiLstm::new(&mut store, "enc", 3, 2, &mut rng);
        // Use the same weights for both directions so that reversal is a pure swap.
        let (f, b) = lstm.cells();
        for (pf, pb) in f.params().into_iter().zip(b.params()) {
            let v = store.get(pf).clone();
            *store.get_mut(pb) = v;
        }
        let s = Session::new(&store, Mode::Eval);
        let x = init_uniform(&mut rng, &[3, 3], 1);
        let mut rev_rows: Vec<Vec<f64>> = (0..3).map(|r| x.row_slice(r).to_vec()).collect();
        rev_rows.reverse();
        let out = lstm.forward(&s, &s.constant(x), 3).unwrap().value();
        let out_rev = lstm
            .forward(&s, &s.constant(Tensor::from_rows(&rev_rows)), 3)
            .unwrap()
            .value();
        for t in 0..3 {
            let a = out.row_slice(t);
            let b = out_rev.row_slice(2 - t);
            for k in 0..2 {
                assert!((a[k] - b[2 + k]).abs() < 1e-14);
                assert!((a[2 + k] - b[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bilstm_padding_matches_unpadded() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let lstm = BiLstm::new(&mut store, "enc", 3, 2, &mut rng);
        let s = Session::new(&store, Mode::Eval);
        let x = init_uniform(&mut rng, &[5, 3], 1);
        let short = Tensor::from_rows(&(0..3).map(|r| x.row_slice(r).to_vec()).collect::<Vec<_>>());
        let padded = lstm.forward(&s, &s.constant(x), 3).unwrap().value();
        let plain = lstm.forward(&s, &s.constant(short), 3).unwrap().value();
        assert_eq!(&padded.data()[..12], plain.data());
        assert!(padded.data()[12..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recurrent_gradient_checks() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lstm = BiLstm::new(&mut store, "enc", 3, 2, &mut rng);
        let gru = GruCell::new(&mut store, "gru", 4, 3, &mut rng);
        let x = init_uniform(&mut rng, &[4, 3], 1);
        let mut inputs = store.values().to_vec();
        inputs.push(x);
        let np = store.len();
        let err = gradient_check(
            |v| {
                let s = Session::with_params(&store, &v[..np], Mode::Eval)?;
                let h = lstm.forward(&s, &v[np], 3)?;
                gru.run(&s, &h)?.tanh()?.sum(None)
            },
            &inputs,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
