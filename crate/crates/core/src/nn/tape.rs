//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value; `backward` walks the tape in
//! reverse and accumulates adjoints. Parameters enter through [`Tape::param`] and their
//! gradients are collected per [`ParamId`].

use std::collections::HashMap;
use std::rc::Rc;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Half-open row ranges, one per independent graph in a batch.
pub type Segments = Rc<Vec<(usize, usize)>>;

/// `(destination row, source row, weight)` triples of a sparse aggregation.
pub type Edges = Rc<Vec<(usize, usize, f64)>>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    Maximum(Var, Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        segments: Segments,
        heads: usize,
        probs: Vec<f64>,
    },
    SegmentMean {
        x: Var,
        segments: Segments,
    },
    Aggregate {
        x: Var,
        edges: Edges,
    },
    GaussianLogProb {
        mean: Var,
        log_std: Var,
        actions: Rc<Tensor>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to a tape variable; `None` if it does not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].as_deref()
    }

    /// One tensor per parameter in `store`, zero for parameters the loss does not touch.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        for &(id, var) in &self.params {
            if let Some(g) = &self.nodes[var.0] {
                out[id.0].data_mut().copy_from_slice(g);
            }
        }
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_trans: bool, b: &[f64], b_trans: bool, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides above address exactly m*k, k*n and m*n elements of the slices,
    // whose lengths are checked by the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf that is not a stored parameter (used by gradient checks).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same variable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    fn check_same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows() {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", av.shape(), bv.shape())));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, 0.0);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), ng))
    }

    /// Adds the vector `b` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rank() != 1 || av.cols() != bv.len() || av.rank() != 2 {
            return Err(Error::Shape(format!("add_bias {:?} + {:?}", av.shape(), bv.shape())));
        }
        let n = bv.len();
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(n) {
            row.iter_mut().zip(bv.data()).for_each(|(x, y)| *x += y);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::AddBias(a, b), ng))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.check_same_shape(a, b, "elementwise")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, op, ng))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Minimum(a, b), f64::min)
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Maximum(a, b), f64::max)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = if v.is_empty() {
            0.0
        } else {
            v.data().iter().sum::<f64>() / v.len() as f64
        };
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        if parts
            .iter()
            .any(|&p| self.value(p).rows() != rows || self.value(p).rank() != 2)
        {
            return Err(Error::Shape("concat_cols needs matrices with equal rows".into()));
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(rows, total, out)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Multi-head scaled dot-product attention restricted to dense blocks.
    ///
    /// `q`, `k`, `v` are `n × d`; rows in the same segment attend to each other (including
    /// themselves) and to nothing else. Heads split the `d` columns evenly.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segments: &Segments, heads: usize) -> Result<Var> {
        self.check_same_shape(q, k, "attention q/k")?;
        self.check_same_shape(q, v, "attention q/v")?;
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = (qv.rows(), qv.cols());
        if qv.rank() != 2 || heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!(
                "attention over {:?} with {heads} heads",
                qv.shape()
            )));
        }
        if let Some(&(s, e)) = segments.iter().find(|&&(s, e)| s > e || e > n) {
            return Err(Error::Shape(format!("segment {s}..{e} outside {n} rows")));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut out = vec![0.0; n * d];
        let mut probs = Vec::new();
        let mut logits = Vec::new();
        for &(s, e) in segments.iter() {
            for h in 0..heads {
                let c0 = h * dh;
                for u in s..e {
                    logits.clear();
                    let qu = &qd[u * d + c0..u * d + c0 + dh];
                    for w in s..e {
                        let kw = &kd[w * d + c0..w * d + c0 + dh];
                        logits.push(qu.iter().zip(kw).map(|(a, b)| a * b).sum::<f64>() * scale);
                    }
                    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for l in logits.iter_mut() {
                        *l = (*l - max).exp();
                        z += *l;
                    }
                    let out_u = &mut out[u * d + c0..u * d + c0 + dh];
                    for (idx, w) in (s..e).enumerate() {
                        let p = logits[idx] / z;
                        probs.push(p);
                        let vw = &vd[w * d + c0..w * d + c0 + dh];
                        out_u.iter_mut().zip(vw).for_each(|(o, x)| *o += p * x);
                    }
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            Tensor::matrix(n, d, out)?,
            Op::Attention {
                q,
                k,
                v,
                segments: Rc::clone(segments),
                heads,
                probs,
            },
            ng,
        ))
    }

    /// Softmax weights saved by an attention node, laid out segment → head → query → key.
    pub fn attention_weights(&self, node: Var) -> Option<&[f64]> {
        match &self.nodes[node.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Mean of the rows in each segment; empty segments give a zero row.
    pub fn segment_mean(&mut self, x: Var, segments: &Segments) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; segments.len() * d];
        for (i, &(s, e)) in segments.iter().enumerate() {
            if s > e || e > n {
                return Err(Error::Shape(format!("segment {s}..{e} outside {n} rows")));
            }
            if e == s {
                continue;
            }
            let inv = 1.0 / (e - s) as f64;
            let dst = &mut out[i * d..(i + 1) * d];
            for r in s..e {
                dst.iter_mut().zip(xv.row(r)).for_each(|(o, v)| *o += v * inv);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::matrix(segments.len(), d, out)?,
            Op::SegmentMean {
                x,
                segments: Rc::clone(segments),
            },
            ng,
        ))
    }

    /// `out[dst] = Σ w · x[src]` over `edges`, producing `rows_out` rows.
    pub fn aggregate(&mut self, x: Var, edges: &Edges, rows_out: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; rows_out * d];
        for &(dst, src, w) in edges.iter() {
            if dst >= rows_out || src >= n {
                return Err(Error::Shape(format!("edge {dst}<-{src} out of range")));
            }
            let srow = xv.row(src);
            out[dst * d..(dst + 1) * d]
                .iter_mut()
                .zip(srow)
                .for_each(|(o, v)| *o += w * v);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::matrix(rows_out, d, out)?,
            Op::Aggregate {
                x,
                edges: Rc::clone(edges),
            },
            ng,
        ))
    }

    /// Row-wise log-density of `actions` under `N(mean, diag(exp(log_std))²)`.
    pub fn gaussian_log_prob(&mut self, mean: Var, log_std: Var, actions: Rc<Tensor>) -> Result<Var> {
        let (mv, lv) = (self.value(mean), self.value(log_std));
        if mv.shape() != actions.shape() || mv.rank() != 2 || lv.rank() != 1 || lv.len() != mv.cols() {
            return Err(Error::Shape(format!(
                "log_prob mean {:?}, log_std {:?}, actions {:?}",
                mv.shape(),
                lv.shape(),
                actions.shape()
            )));
        }
        let (b, dim) = (mv.rows(), mv.cols());
        let log_norm = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let mut out = vec![0.0; b];
        for (r, o) in out.iter_mut().enumerate() {
            for c in 0..dim {
                let ls = lv.data()[c];
                let z = (actions.get(r, c) - mv.get(r, c)) * (-ls).exp();
                *o += -0.5 * z * z - ls - log_norm;
            }
        }
        let ng = self.ng(mean) || self.ng(log_std);
        Ok(self.push(Tensor::vector(out), Op::GaussianLogProb { mean, log_std, actions }, ng))
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if want(a) {
                    let ga = accumulate(&mut grads[a.0], m * k);
                    gemm(m, n, k, g, false, bv.data(), true, ga, 1.0);
                }
                if want(b) {
                    let gb = accumulate(&mut grads[b.0], k * n);
                    gemm(k, m, n, av.data(), true, g, false, gb, 1.0);
                }
            }
            &Op::AddBias(a, b) => {
                if want(a) {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if want(b) {
                    let n = val(b).len();
                    let gb = accumulate(&mut grads[b.0], n);
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
            }
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if want(a) {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if want(b) {
                    let gb = accumulate(&mut grads[b.0], g.len());
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x += sign * y);
                }
            }
            &Op::Mul(a, b) => {
                if want(a) {
                    let bv = val(b).data();
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(bv) {
                        *x += y * z;
                    }
                }
                if want(b) {
                    let av = val(a).data();
                    let gb = accumulate(&mut grads[b.0], g.len());
                    for ((x, y), z) in gb.iter_mut().zip(g).zip(av) {
                        *x += y * z;
                    }
                }
            }
            &Op::Scale(a, c) => {
                let ga = accumulate(&mut grads[a.0], g.len());
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
            }
            &Op::AddScalar(a) => {
                let ga = accumulate(&mut grads[a.0], g.len());
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            &Op::Relu(a) => {
                let av = val(a).data();
                let ga = accumulate(&mut grads[a.0], g.len());
                for ((x, y), z) in ga.iter_mut().zip(g).zip(av) {
                    if *z > 0.0 {
                        *x += y;
                    }
                }
            }
            &Op::Tanh(a) => {
                let out = node.value.data();
                let ga = accumulate(&mut grads[a.0], g.len());
                for ((x, y), t) in ga.iter_mut().zip(g).zip(out) {
                    *x += y * (1.0 - t * t);
                }
            }
            &Op::Exp(a) => {
                let out = node.value.data();
                let ga = accumulate(&mut grads[a.0], g.len());
                for ((x, y), e) in ga.iter_mut().zip(g).zip(out) {
                    *x += y * e;
                }
            }
            &Op::Clamp(a, lo, hi) => {
                let av = val(a).data();
                let ga = accumulate(&mut grads[a.0], g.len());
                for ((x, y), z) in ga.iter_mut().zip(g).zip(av) {
                    if *z >= lo && *z <= hi {
                        *x += y;
                    }
                }
            }
            &Op::Minimum(a, b) | &Op::Maximum(a, b) => {
                let is_min = matches!(node.op, Op::Minimum(..));
                let (av, bv) = (val(a).data(), val(b).data());
                // Ties route the gradient to `a`.
                let pick_a: Vec<bool> = av
                    .iter()
                    .zip(bv)
                    .map(|(x, y)| if is_min { x <= y } else { x >= y })
                    .collect();
                if want(a) {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for ((x, y), &p) in ga.iter_mut().zip(g).zip(&pick_a) {
                        if p {
                            *x += y;
                        }
                    }
                }
                if want(b) {
                    let gb = accumulate(&mut grads[b.0], g.len());
                    for ((x, y), &p) in gb.iter_mut().zip(g).zip(&pick_a) {
                        if !p {
                            *x += y;
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                let n = val(a).len();
                let ga = accumulate(&mut grads[a.0], n);
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
            &Op::Mean(a) => {
                let n = val(a).len();
                if n > 0 {
                    let ga = accumulate(&mut grads[a.0], n);
                    let s = g[0] / n as f64;
                    ga.iter_mut().for_each(|x| *x += s);
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if want(p) {
                        let gp = accumulate(&mut grads[p.0], rows * w);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            gp[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += w;
                }
            }
            Op::Attention {
                q,
                k,
                v,
                segments,
                heads,
                probs,
            } => self.attention_backward(*q, *k, *v, segments, *heads, probs, g, grads),
            Op::SegmentMean { x, segments } => {
                let xv = val(*x);
                let d = xv.cols();
                let gx = accumulate(&mut grads[x.0], xv.len());
                for (i, &(s, e)) in segments.iter().enumerate() {
                    if e == s {
                        continue;
                    }
                    let inv = 1.0 / (e - s) as f64;
                    let gi = &g[i * d..(i + 1) * d];
                    for r in s..e {
                        gx[r * d..(r + 1) * d]
                            .iter_mut()
                            .zip(gi)
                            .for_each(|(a, b)| *a += b * inv);
                    }
                }
            }
            Op::Aggregate { x, edges } => {
                let xv = val(*x);
                let d = xv.cols();
                let gx = accumulate(&mut grads[x.0], xv.len());
                for &(dst, src, w) in edges.iter() {
                    let gd = &g[dst * d..(dst + 1) * d];
                    gx[src * d..(src + 1) * d]
                        .iter_mut()
                        .zip(gd)
                        .for_each(|(a, b)| *a += w * b);
                }
            }
            Op::GaussianLogProb { mean, log_std, actions } => {
                let (mv, lv) = (val(*mean), val(*log_std));
                let (b, dim) = (mv.rows(), mv.cols());
                let mut gm = vec![0.0; b * dim];
                let mut gl = vec![0.0; dim];
                for r in 0..b {
                    for c in 0..dim {
                        let inv_std = (-lv.data()[c]).exp();
                        let z = (actions.get(r, c) - mv.get(r, c)) * inv_std;
                        gm[r * dim + c] = g[r] * z * inv_std;
                        gl[c] += g[r] * (z * z - 1.0);
                    }
                }
                if want(*mean) {
                    let gmean = accumulate(&mut grads[mean.0], b * dim);
                    gmean.iter_mut().zip(&gm).for_each(|(x, y)| *x += y);
                }
                if want(*log_std) {
                    let gls = accumulate(&mut grads[log_std.0], dim);
                    gls.iter_mut().zip(&gl).for_each(|(x, y)| *x += y);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        segments: &Segments,
        heads: usize,
        probs: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (qv, kv, vv) = (&self.nodes[q.0].value, &self.nodes[k.0].value, &self.nodes[v.0].value);
        let (n, d) = (qv.rows(), qv.cols());
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut gq = vec![0.0; n * d];
        let mut gk = vec![0.0; n * d];
        let mut gv = vec![0.0; n * d];
        let mut dp = Vec::new();
        let mut cursor = 0;
        for &(s, e) in segments.iter() {
            let len = e - s;
            for h in 0..heads {
                let c0 = h * dh;
                for u in s..e {
                    let p_row = &probs[cursor..cursor + len];
                    cursor += len;
                    let gu = &g[u * d + c0..u * d + c0 + dh];
                    dp.clear();
                    for (idx, w) in (s..e).enumerate() {
                        let vw = &vd[w * d + c0..w * d + c0 + dh];
                        dp.push(gu.iter().zip(vw).map(|(a, b)| a * b).sum::<f64>());
                        let p = p_row[idx];
                        gv[w * d + c0..w * d + c0 + dh]
                            .iter_mut()
                            .zip(gu)
                            .for_each(|(x, y)| *x += p * y);
                    }
                    let weighted: f64 = p_row.iter().zip(&dp).map(|(p, x)| p * x).sum();
                    for (idx, w) in (s..e).enumerate() {
                        let dlogit = p_row[idx] * (dp[idx] - weighted) * scale;
                        if dlogit == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            gq[u * d + c0 + c] += dlogit * kd[w * d + c0 + c];
                            gk[w * d + c0 + c] += dlogit * qd[u * d + c0 + c];
                        }
                    }
                }
            }
        }
        for (var, local) in [(q, gq), (k, gk), (v, gv)] {
            if self.nodes[var.0].needs_grad {
                let slot = accumulate(&mut grads[var.0], n * d);
                slot.iter_mut().zip(&local).for_each(|(x, y)| *x += y);
            }
        }
    }
}
