use rand_chacha::ChaCha8Rng;

use super::{expect_cols, init_uniform};
use crate::tensor::{ParamId, ParamStore, Result, Session, TensorError, Var};

/// Single-head graph attention layer with a tanh output nonlinearity:
///
/// `h'_i = tanh(Σ_{j∈N(i)} α_ij W h_j)`,
/// `α_ij = softmax_j(leaky_relu(a_src·W h_i + a_dst·W h_j))`.
#[derive(Debug, Clone)]
pub struct GatLayer {
    weight: ParamId,
    attn: ParamId,
    in_dim: usize,
    out_dim: usize,
    slope: f64,
}

#[derive(Debug, Clone)]
pub struct GatOutput {
    /// One row per requested node.
    pub nodes: Var,
    /// Attention weights of each requested node over its neighbors, in neighbor order.
    pub attention: Vec<Vec<f64>>,
}

impl GatLayer {
    pub const DEFAULT_SLOPE: f64 = 0.2;

    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        slope: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(slope > 0.0, "leaky-relu slope must be positive");
        let weight = store.add(format!("{name}.weight"), init_uniform(rng, &[in_dim, out_dim], in_dim));
        let attn = store.add(format!("{name}.attn"), init_uniform(rng, &[1, 2 * out_dim], 2 * out_dim));
        Self {
            weight,
            attn,
            in_dim,
            out_dim,
            slope,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.attn]
    }

    /// Updates every node.
    pub fn forward(&self, s: &Session, nodes: &Var, neighbors: &[Vec<usize>]) -> Result<GatOutput> {
        let all: Vec<usize> = (0..neighbors.len()).collect();
        self.forward_rows(s, nodes, neighbors, &all)
    }

    /// Updates only the nodes listed in `rows`.
    pub fn forward_rows(
        &self,
        s: &Session,
        nodes: &Var,
        neighbors: &[Vec<usize>],
        rows: &[usize],
    ) -> Result<GatOutput> {
        expect_cols("gat_layer", nodes, self.in_dim)?;
        let m = nodes.shape()[0];
        if neighbors.len() != m {
            return Err(TensorError::InvalidArgument {
                op: "gat_layer",
                msg: format!("{} adjacency lists for {m} nodes", neighbors.len()),
            });
        }
        for (i, list) in neighbors.iter().enumerate() {
            if list.is_empty() {
                return Err(TensorError::InvalidArgument {
                    op: "gat_layer",
                    msg: format!("node {i} has no neighbors"),
                });
            }
            if let Some((position, &index)) = list.iter().enumerate().find(|(_, &j)| j >= m) {
                return Err(TensorError::IndexOutOfRange {
                    op: "gat_layer",
                    position,
                    index,
                    bound: m,
                });
            }
        }

        let wh = nodes.matmul(&s.param(self.weight))?;
        let a = s.param(self.attn);
        let src = wh.matmul(&a.narrow(1, 0, self.out_dim)?.transpose()?)?;
        let dst = wh.matmul(&a.narrow(1, self.out_dim, self.out_dim)?.transpose()?)?;

        let mut outs = Vec::with_capacity(rows.len());
        let mut attention = Vec::with_capacity(rows.len());
        for &i in rows {
            let list = neighbors.get(i).ok_or(TensorError::IndexOutOfRange {
                op: "gat_layer",
                position: 0,
                index: i,
                bound: m,
            })?;
            let e = src
                .gather_rows(&vec![i; list.len()])?
                .add(&dst.gather_rows(list)?)?
                .leaky_relu(self.slope)?;
            let alpha = e.transpose()?.softmax(1, None)?;
            attention.push(alpha.value().data().to_vec());
            outs.push(alpha.matmul(&wh.gather_rows(list)?)?.tanh()?);
        }
        let refs: Vec<&Var> = outs.iter().collect();
        Ok(GatOutput {
            nodes: Var::concat(&refs, 0)?,
            attention,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradient_check, Mode, Tensor};
    use rand::SeedableRng;

    fn layer(seed: u64, d: usize) -> (ParamStore, GatLayer, ChaCha8Rng) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gat = GatLayer::new(&mut store, "gat", d, d, 0.2, &mut rng);
        (store, gat, rng)
    }

    #[test]
    fn single_self_loop() {
        let (store, gat, mut rng) = layer(0, 3);
        let s = Session::new(&store, Mode::Eval);
        let h = s.constant(init_uniform(&mut rng, &[1, 3], 1));
        let out = gat.forward(&s, &h, &[vec![0]]).unwrap();
        assert_eq!(out.attention, vec![vec![1.0]]);
        let expect = h.matmul(&s.param(gat.weight)).unwrap().tanh().unwrap().value();
        assert!(out.nodes.value().max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn identical_neighbors_get_uniform_weights() {
        let (store, gat, _) = layer(1, 3);
        let s = Session::new(&store, Mode::Eval);
        let h = s.constant(Tensor::from_rows(&vec![vec![0.3, -0.1, 0.7]; 3]));
        let full = vec![vec![0, 1, 2]; 3];
        let out = gat.forward(&s, &h, &full).unwrap();
        for row in &out.attention {
            for &a in row {
                assert!((a - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn star_graph_matches_per_edge_formula() {
        let (store, gat, mut rng) = layer(2, 3);
        let s = Session::new(&store, Mode::Eval);
        let ht = init_uniform(&mut rng, &[3, 3], 1);
        let star = vec![vec![0, 1, 2], vec![1, 0], vec![2, 0]];
        let out = gat.forward(&s, &s.constant(ht.clone()), &star).unwrap();
        let w = store.get(gat.weight);
        let a = store.get(gat.attn);
        let wh: Vec<Vec<f64>> = (0..3)
            .map(|r| (0..3).map(|j| (0..3).map(|i| ht.get(r, i) * w.get(i, j)).sum()).collect())
            .collect();
        for (i, list) in star.iter().enumerate() {
            let e: Vec<f64> = list
                .iter()
                .map(|&j| {
                    let raw: f64 = (0..3).map(|k| a.get(0, k) * wh[i][k] + a.get(0, 3 + k) * wh[j][k]).sum();
                    if raw > 0.0 {
                        raw
                    } else {
                        0.2 * raw
                    }
                })
                .collect();
            let z: f64 = e.iter().map(|v| v.exp()).sum();
            let alpha: Vec<f64> = e.iter().map(|v| v.exp() / z).collect();
            for (got, want) in out.attention[i].iter().zip(&alpha) {
                assert!((got - want).abs() < 1e-12);
            }
            assert!((out.attention[i].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..3 {
                let v: f64 = list.iter().zip(&alpha).map(|(&j, al)| al * wh[j][k]).sum();
                assert!((out.nodes.value().get(i, k) - v.tanh()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_neighbor_set_is_an_error() {
        let (store, gat, mut rng) = layer(3, 2);
        let s = Session::new(&store, Mode::Eval);
        let h = s.constant(init_uniform(&mut rng, &[2, 2], 1));
        assert!(gat.forward(&s, &h, &[vec![0, 1], vec![]]).is_err());
        assert!(gat.forward(&s, &h, &[vec![0, 4], vec![1]]).is_err());
    }

    #[test]
    fn gradient_check_gat() {
        let (store, gat, mut rng) = layer(4, 3);
        let h = init_uniform(&mut rng, &[3, 3], 1);
        let mut inputs = store.values().to_vec();
        inputs.push(h);
        let graph = vec![vec![0, 1, 2], vec![0, 1], vec![2, 0, 1]];
        let err = gradient_check(
            |v| {
                let s = Session::with_params(&store, &v[..2], Mode::Eval)?;
                let out = gat.forward(&s, &v[2], &graph)?;
                gat.forward(&s, &out.nodes, &graph)?.nodes.sum(None)
            },
            &inputs,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
