use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::orthogonal;
use super::tape::{Edges, Segments, Tape, Var};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), orthogonal(in_dim, out_dim, gain, rng))?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Fully connected stack with an activation between layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        activation: Activation,
        out_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape("an MLP needs at least input and output widths".into()));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i == last { out_gain } else { std::f64::consts::SQRT_2 };
                Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, gain, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers, activation })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i + 1 < self.layers.len() {
                h = self.activation.apply(tape, h);
            }
        }
        Ok(h)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionShape {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
}

impl AttentionShape {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model width {} must be a positive multiple of the head count {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// One residual self-attention block: `x + σ(⊕_h Σ_v softmax(q·k/√d_h) W_V x_v)` where σ is
/// a two-layer ReLU feedforward network applied per node.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub shape: AttentionShape,
}

impl AttentionLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        shape: AttentionShape,
        rng: &mut R,
    ) -> Result<Self> {
        shape.validate()?;
        let d = shape.d_model;
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), d, d, false, 1.0, rng)?,
            key: Linear::new(store, &format!("{name}.key"), d, d, false, 1.0, rng)?,
            value: Linear::new(store, &format!("{name}.value"), d, d, false, 1.0, rng)?,
            ff_in: Linear::new(
                store,
                &format!("{name}.ff_in"),
                d,
                shape.d_ff,
                true,
                std::f64::consts::SQRT_2,
                rng,
            )?,
            ff_out: Linear::new(store, &format!("{name}.ff_out"), shape.d_ff, d, true, 0.5, rng)?,
            shape,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, segments: &Segments) -> Result<Var> {
        let width = tape.value(x).cols();
        if width != self.shape.d_model {
            return Err(Error::Shape(format!(
                "attention layer expects width {}, got {width}",
                self.shape.d_model
            )));
        }
        let q = self.query.forward(tape, store, x)?;
        let k = self.key.forward(tape, store, x)?;
        let v = self.value.forward(tape, store, x)?;
        let mixed = tape.attention(q, k, v, segments, self.shape.heads)?;
        let h = self.ff_in.forward(tape, store, mixed)?;
        let h = tape.relu(h);
        let h = self.ff_out.forward(tape, store, h)?;
        tape.add(x, h)
    }
}

/// Embeds one role bucket, runs the attention stack and mean-pools each graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphEncoder {
    pub embed: Linear,
    pub layers: Vec<AttentionLayer>,
}

impl GraphEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        shape: AttentionShape,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let embed = Linear::new(store, &format!("{name}.embed"), in_dim, shape.d_model, true, 1.0, rng)?;
        let layers = (0..depth)
            .map(|l| AttentionLayer::new(store, &format!("{name}.layer{l}"), shape, rng))
            .collect::<Result<_>>()?;
        Ok(Self { embed, layers })
    }

    /// Node embeddings after the attention stack, before pooling.
    pub fn encode_nodes(&self, tape: &mut Tape, store: &ParamStore, nodes: Var, segments: &Segments) -> Result<Var> {
        let mut x = self.embed.forward(tape, store, nodes)?;
        for layer in &self.layers {
            x = layer.forward(tape, store, x, segments)?;
        }
        Ok(x)
    }

    /// `[graphs × d_model]`, zero rows for empty graphs.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, nodes: Var, segments: &Segments) -> Result<Var> {
        let x = self.encode_nodes(tape, store, nodes, segments)?;
        tape.segment_mean(x, segments)
    }
}

/// Graph convolution with row-normalised aggregation: `relu(D⁻¹A x W + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayer {
    pub linear: Linear,
}

impl GcnLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            linear: Linear::new(store, name, in_dim, out_dim, true, std::f64::consts::SQRT_2, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, edges: &Edges) -> Result<Var> {
        let rows = tape.value(x).rows();
        let agg = tape.aggregate(x, edges, rows)?;
        let h = self.linear.forward(tape, store, agg)?;
        Ok(tape.relu(h))
    }
}

/// Row-normalised edge list of a dense 0/1 adjacency matrix, with rows shifted by `offset`.
pub fn mean_adjacency_edges(adjacency: &Tensor, offset: usize) -> Result<Vec<(usize, usize, f64)>> {
    let n = adjacency.rows();
    if adjacency.rank() != 2 || adjacency.cols() != n {
        return Err(Error::Shape(format!(
            "adjacency must be square, got {:?}",
            adjacency.shape()
        )));
    }
    let mut edges = Vec::new();
    for r in 0..n {
        let deg: f64 = adjacency.row(r).iter().sum();
        if deg == 0.0 {
            continue;
        }
        for c in 0..n {
            let a = adjacency.get(r, c);
            if a != 0.0 {
                edges.push((offset + r, offset + c, a / deg));
            }
        }
    }
    Ok(edges)
}

/// Complete graph with self-loops over each segment, row-normalised.
pub fn dense_segment_edges(segments: &[(usize, usize)]) -> Vec<(usize, usize, f64)> {
    let mut edges = Vec::new();
    for &(s, e) in segments {
        let w = 1.0 / (e - s).max(1) as f64;
        for dst in s..e {
            for src in s..e {
                edges.push((dst, src, w));
            }
        }
    }
    edges
}

/// One attention layer on a single dense graph, outside any larger computation.
pub fn attention_layer_forward(x: &Tensor, layer: &AttentionLayer, store: &ParamStore) -> Result<Tensor> {
    if x.rows() == 0 {
        return Err(Error::Shape("attention needs at least one node".into()));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let seg: Segments = Rc::new(vec![(0, x.rows())]);
    let out = layer.forward(&mut tape, store, xv, &seg)?;
    Ok(tape.value(out).clone())
}

/// One graph convolution on a single graph given by a dense adjacency matrix.
pub fn gcn_layer_forward(x: &Tensor, adjacency: &Tensor, layer: &GcnLayer, store: &ParamStore) -> Result<Tensor> {
    if adjacency.rows() != x.rows() {
        return Err(Error::Shape(format!(
            "{} nodes but adjacency is {:?}",
            x.rows(),
            adjacency.shape()
        )));
    }
    let edges: Edges = Rc::new(mean_adjacency_edges(adjacency, 0)?);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = layer.forward(&mut tape, store, xv, &edges)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(d: usize, heads: usize) -> (ParamStore, AttentionLayer) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = AttentionLayer::new(
            &mut store,
            "att",
            AttentionShape {
                d_model: d,
                heads,
                d_ff: 2 * d,
            },
            &mut rng,
        )
        .unwrap();
        (store, l)
    }

    #[test]
    fn identical_rows_stay_identical() {
        let (store, l) = layer(8, 2);
        let row: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
        let x = Tensor::from_rows(&[row.clone(), row.clone(), row]).unwrap();
        let y = attention_layer_forward(&x, &l, &store).unwrap();
        for r in 1..3 {
            for c in 0..8 {
                assert!((y.get(r, c) - y.get(0, c)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_output_weights_give_identity() {
        let (mut store, l) = layer(8, 4);
        for id in [l.ff_out.weight, l.ff_out.bias.unwrap()] {
            store.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let x = Tensor::matrix(3, 8, (0..24).map(|i| (i as f64).sin()).collect()).unwrap();
        let y = attention_layer_forward(&x, &l, &store).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let (store, l) = layer(8, 2);
        let x = Tensor::matrix(4, 8, (0..32).map(|i| ((i * 7) % 13) as f64 * 0.1).collect()).unwrap();
        let perm = [2usize, 0, 3, 1];
        let px = Tensor::from_rows(&perm.iter().map(|&p| x.row(p).to_vec()).collect::<Vec<_>>()).unwrap();
        let y = attention_layer_forward(&x, &l, &store).unwrap();
        let py = attention_layer_forward(&px, &l, &store).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..8 {
                assert!((py.get(i, c) - y.get(p, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_width_is_rejected() {
        let (store, l) = layer(8, 2);
        let x = Tensor::zeros(&[2, 6]);
        assert!(matches!(attention_layer_forward(&x, &l, &store), Err(Error::Shape(_))));
    }

    #[test]
    fn gcn_self_loops_act_per_node() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GcnLayer::new(&mut store, "gcn", 3, 2, &mut rng).unwrap();
        let x = Tensor::from_rows(&[[1.0, 0.0, -1.0], [0.5, 2.0, 0.1]]).unwrap();
        let eye = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let y = gcn_layer_forward(&x, &eye, &g, &store).unwrap();
        let w = store.get(g.linear.weight);
        for r in 0..2 {
            for c in 0..2 {
                let pre: f64 = (0..3).map(|k| x.get(r, k) * w.get(k, c)).sum();
                assert!((y.get(r, c) - pre.max(0.0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gcn_complete_graph_identical_rows() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GcnLayer::new(&mut store, "gcn", 2, 4, &mut rng).unwrap();
        let x = Tensor::from_rows(&[[0.3, -0.7]; 3]).unwrap();
        let full = Tensor::from_rows(&[[1.0; 3]; 3]).unwrap();
        let y = gcn_layer_forward(&x, &full, &g, &store).unwrap();
        assert_eq!(y.row(0), y.row(1));
        assert_eq!(y.row(1), y.row(2));
    }

    #[test]
    fn gcn_adjacency_shape_checked() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GcnLayer::new(&mut store, "gcn", 2, 4, &mut rng).unwrap();
        let x = Tensor::zeros(&[3, 2]);
        let a = Tensor::zeros(&[2, 2]);
        assert!(gcn_layer_forward(&x, &a, &g, &store).is_err());
    }
}
