//! Reverse-mode gradient tape.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value. [`Tape::backward`] walks the nodes in reverse and returns the
//! gradient of a scalar output with respect to every parameter that was
//! pulled onto the tape with [`Tape::param`].
//!
//! ```
//! use moedep::tensor::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! let theta = store.add("theta", Tensor::scalar(3.0));
//! let mut tape = Tape::new(&store);
//! let t = tape.param(theta);
//! let sq = tape.mul(t, t).unwrap();
//! let grads = tape.backward(sq).unwrap();
//! assert_eq!(grads.get(theta).unwrap().item(), 6.0);
//! ```

use std::borrow::Cow;
use std::collections::HashMap;

use super::ops::{self, ContractPlan, ConvGeom};
use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Pointwise or row-wise activation selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softmax,
    Softplus,
    SignedSqrt,
    L2Normalize,
}

enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    SumRows(Var),
    Reshape(Var),
    Contract(Var, Var, Box<ContractPlan>),
    Bmm(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    Softplus(Var),
    SignedSqrt(Var),
    L2Normalize(Var),
    Softmax(Var),
    Entmax15(Var),
    NormalCdf(Var),
    KeepTopK {
        x: Var,
        kept: Vec<bool>,
    },
    KthExcluding {
        x: Var,
        src: Vec<usize>,
    },
    CvSquared(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    SliceLast {
        x: Var,
        start: usize,
    },
    ConcatLast(Vec<Var>),
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    ScatterRows {
        x: Var,
        rows: Vec<usize>,
    },
    ScaleRows {
        x: Var,
        s: Var,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records one forward pass over parameters borrowed from a [`ParamStore`].
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node<'a>>,
    params: HashMap<ParamId, Var>,
    pattern: u64,
}

const FNV_PRIME: u64 = 0x0100_0000_01b3;

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
            pattern: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every discrete branch taken so far (ReLU signs, pooling
    /// winners, top-k selections, entmax supports). Two forward passes with
    /// equal patterns went through the same smooth piece of the model.
    pub fn pattern(&self) -> u64 {
        self.pattern
    }

    fn mix(&mut self, v: u64) {
        self.pattern = (self.pattern ^ v).wrapping_mul(FNV_PRIME);
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// Pulls a parameter onto the tape. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(self.store.value(id)),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let v = self.value(a).zip_map(self.value(b), f)?;
        Ok(self.push(v, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    /// Sum over the leading axis: `[B, ...] -> [...]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.is_empty() {
            return Err(Error::shape("sum_rows", "rank-0 input"));
        }
        let inner: usize = shape[1..].iter().product();
        let mut out = vec![0.0; inner];
        for row in self.value(a).data().chunks(inner) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let v = Tensor::from_parts(shape[1..].to_vec(), out);
        Ok(self.push(v, Op::SumRows(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    /// Tensor contraction over paired axes; see [`ops::contract`].
    pub fn contract(&mut self, a: Var, b: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let plan = ContractPlan::new(self.shape(a), self.shape(b), pairs)?;
        let v = plan.forward(self.value(a), self.value(b));
        Ok(self.push(v, Op::Contract(a, b, Box::new(plan)), &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} × {:?}", self.shape(a), self.shape(b)),
            ));
        }
        self.contract(a, b, &[(1, 0)])
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::bmm(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Bmm(a, b), &[a, b]))
    }

    /// Affine map `x·W + b` over the last axis of `x`, with `W: [in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(Error::shape(
                "linear",
                format!("input {xs:?}, weight {ws:?}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[1]] {
                return Err(Error::shape(
                    "linear",
                    format!("bias {:?} for weight {ws:?}", self.shape(b)),
                ));
            }
        }
        let m = self.value(x).len() / ws[0];
        let mut out = vec![0.0; m * ws[1]];
        let beta = if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(ws[1]) {
                row.copy_from_slice(bias);
            }
            1.0
        } else {
            0.0
        };
        ops::gemm(
            m,
            ws[0],
            ws[1],
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            beta,
            &mut out,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = ws[1];
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Linear { x, w, b },
            &inputs,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(ops::relu);
        let h = sign_hash(self.value(a).data());
        self.mix(h);
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(ops::softplus);
        self.push(v, Op::Softplus(a), &[a])
    }

    pub fn signed_sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(ops::signed_sqrt);
        let h = sign_hash(self.value(a).data());
        self.mix(h);
        self.push(v, Op::SignedSqrt(a), &[a])
    }

    /// L2 normalization along the last axis.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let v = ops::map_rows(self.value(a), ops::l2_normalize_row);
        self.push(v, Op::L2Normalize(a), &[a])
    }

    /// Softmax along the last axis; `-inf` inputs give exact zeros.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = ops::softmax(self.value(a));
        self.push(v, Op::Softmax(a), &[a])
    }

    /// Exact 1.5-entmax along the last axis.
    pub fn entmax15(&mut self, a: Var) -> Var {
        let v = ops::entmax15(self.value(a));
        let h = v
            .data()
            .iter()
            .fold(0u64, |h, &p| h.wrapping_mul(31) ^ (p > 0.0) as u64);
        self.mix(h);
        self.push(v, Op::Entmax15(a), &[a])
    }

    pub fn normal_cdf(&mut self, a: Var) -> Var {
        let v = self.value(a).map(ops::std_normal_cdf);
        self.push(v, Op::NormalCdf(a), &[a])
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        match kind {
            Activation::Relu => self.relu(a),
            Activation::Softmax => self.softmax(a),
            Activation::Softplus => self.softplus(a),
            Activation::SignedSqrt => self.signed_sqrt(a),
            Activation::L2Normalize => self.l2_normalize(a),
        }
    }

    /// Keeps the `k` largest entries of each row (lower index wins ties) and
    /// replaces the rest with `-inf`.
    pub fn keep_topk(&mut self, a: Var, k: usize) -> Result<Var> {
        let t = self.value(a);
        let n = *t
            .shape()
            .last()
            .ok_or_else(|| Error::shape("keep_topk", "rank-0 input"))?;
        if k == 0 {
            return Err(Error::InvalidArgument("keep_topk needs k >= 1".into()));
        }
        let mut kept = vec![false; t.len()];
        let mut out = t.data().to_vec();
        for (r, row) in t.data().chunks(n).enumerate() {
            for i in top_k_indices(row, k) {
                kept[r * n + i] = true;
            }
        }
        for (o, &keep) in out.iter_mut().zip(&kept) {
            if !keep {
                *o = f64::NEG_INFINITY;
            }
        }
        let h = kept
            .iter()
            .fold(0u64, |h, &b| h.wrapping_mul(31) ^ b as u64);
        let v = Tensor::from_parts(t.shape().to_vec(), out);
        self.mix(h);
        Ok(self.push(v, Op::KeepTopK { x: a, kept }, &[a]))
    }

    /// For each entry `i` of each row, the `k`-th largest value of the row
    /// with entry `i` removed. Needs `k < row length`.
    pub fn kth_excluding(&mut self, a: Var, k: usize) -> Result<Var> {
        let t = self.value(a);
        let n = *t
            .shape()
            .last()
            .ok_or_else(|| Error::shape("kth_excluding", "rank-0 input"))?;
        if k == 0 || k >= n {
            return Err(Error::InvalidArgument(format!(
                "kth_excluding needs 1 <= k < {n}, got k = {k}"
            )));
        }
        let mut out = Vec::with_capacity(t.len());
        let mut src = Vec::with_capacity(t.len());
        for (r, row) in t.data().chunks(n).enumerate() {
            let order = top_k_indices(row, k + 1);
            for i in 0..n {
                // The k-th largest excluding i is order[k-1] unless i sits in
                // the first k positions, in which case it shifts to order[k].
                let j = if order[..k].contains(&i) {
                    order[k]
                } else {
                    order[k - 1]
                };
                out.push(row[j]);
                src.push(r * n + j);
            }
        }
        let h = src.iter().fold(0u64, |h, &s| h.wrapping_mul(31) ^ s as u64);
        let v = Tensor::from_parts(t.shape().to_vec(), out);
        self.mix(h);
        Ok(self.push(v, Op::KthExcluding { x: a, src }, &[a]))
    }

    /// Squared coefficient of variation of a vector, using the population
    /// standard deviation and a `1e-10` guard on the mean.
    pub fn cv_squared(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(cv_squared_value(self.value(a).data()));
        self.push(v, Op::CvSquared(a), &[a])
    }

    /// Mean cross-entropy of `[B, C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() || labels.iter().any(|&l| l >= s[1]) {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {s:?} with {} labels", labels.len()),
            ));
        }
        let c = s[1];
        let mut total = 0.0;
        for (row, &y) in self.value(logits).data().chunks(c).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let loss = total / labels.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("cross_entropy".into()));
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    /// 2-d cross-correlation over `[N, C, H, W]` input with `[O, C, KH, KW]` kernels.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, pad)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.out_c] {
                return Err(Error::shape("conv2d", format!("bias {:?}", self.shape(b))));
            }
        }
        let v = ops::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(v, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    pub fn maxpool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let (v, argmax) = ops::maxpool2d(self.value(x), window, stride)?;
        let h = argmax
            .iter()
            .fold(0u64, |h, &s| h.wrapping_mul(31) ^ s as u64);
        self.mix(h);
        Ok(self.push(v, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape
            .last()
            .ok_or_else(|| Error::shape("slice_last", "rank-0 input"))?;
        if len == 0 || start + len > n {
            return Err(Error::shape(
                "slice_last",
                format!("{start}..{} of {n}", start + len),
            ));
        }
        let mut out = Vec::with_capacity(self.value(x).len() / n * len);
        for row in self.value(x).data().chunks(n) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut s = shape;
        *s.last_mut().unwrap() = len;
        Ok(self.push(Tensor::from_parts(s, out), Op::SliceLast { x, start }, &[x]))
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self
            .shape(
                *xs.first()
                    .ok_or_else(|| Error::shape("concat_last", "no inputs"))?,
            )
            .to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::shape("concat_last", format!("{first:?} vs {s:?}")));
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = first.clone();
        *shape.last_mut().unwrap() = total;
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::ConcatLast(xs.to_vec()),
            xs,
        ))
    }

    /// Gathers rows of a rank-2 tensor.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || rows.is_empty() || rows.iter().any(|&r| r >= s[0]) {
            return Err(Error::shape(
                "select_rows",
                format!("rows {rows:?} of {s:?}"),
            ));
        }
        let t = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * s[1]);
        for &r in rows {
            out.extend_from_slice(t.row(r));
        }
        let v = Tensor::from_parts(vec![rows.len(), s[1]], out);
        Ok(self.push(
            v,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        ))
    }

    /// Places the rows of `x` at positions `rows` of a zero `[n_rows, D]` tensor.
    pub fn scatter_rows(&mut self, x: Var, rows: &[usize], n_rows: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != rows.len() || rows.iter().any(|&r| r >= n_rows) {
            return Err(Error::shape(
                "scatter_rows",
                format!("{s:?} into {n_rows} rows at {rows:?}"),
            ));
        }
        let mut out = vec![0.0; n_rows * s[1]];
        for (i, &r) in rows.iter().enumerate() {
            for (o, v) in out[r * s[1]..(r + 1) * s[1]]
                .iter_mut()
                .zip(self.value(x).row(i))
            {
                *o += v;
            }
        }
        let v = Tensor::from_parts(vec![n_rows, s[1]], out);
        Ok(self.push(
            v,
            Op::ScatterRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        ))
    }

    /// Multiplies row `i` of `x: [M, D]` by `s[i]` where `s` has `M` entries.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || self.value(s).len() != xs[0] {
            return Err(Error::shape(
                "scale_rows",
                format!("{xs:?} by {:?}", self.shape(s)),
            ));
        }
        let sv = self.value(s).data();
        let mut out = self.value(x).data().to_vec();
        for (row, &c) in out.chunks_mut(xs[1]).zip(sv) {
            row.iter_mut().for_each(|v| *v *= c);
        }
        Ok(self.push(Tensor::from_parts(xs, out), Op::ScaleRows { x, s }, &[x, s]))
    }

    /// Gradients of the scalar `output` with respect to every parameter on the tape.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut result = Gradients::new(self.store.len());
        if !self.nodes[output.0].requires_grad {
            return Ok(result);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(self.shape(output), 1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, g, &mut grads, &mut result);
        }
        Ok(result)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(
        &self,
        node: &Node<'a>,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        result: &mut Gradients,
    ) {
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let val = |v: Var| self.value(v);
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => match &mut result.grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            },
            Op::Add(a, b) => {
                if self.needs(*b) {
                    acc(*b, g.clone());
                }
                acc(*a, g);
            }
            Op::Sub(a, b) => {
                if self.needs(*b) {
                    acc(*b, g.scale(-1.0));
                }
                acc(*a, g);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.zip_map(val(*b), |x, y| x * y).unwrap());
                }
                if self.needs(*b) {
                    acc(*b, g.zip_map(val(*a), |x, y| x * y).unwrap());
                }
            }
            Op::Div(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.zip_map(val(*b), |x, y| x / y).unwrap());
                }
                if self.needs(*b) {
                    let t = Tensor::from_parts(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(val(*a).data())
                            .zip(val(*b).data())
                            .map(|((&gv, &x), &y)| -gv * x / (y * y))
                            .collect(),
                    );
                    acc(*b, t);
                }
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c)),
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), g.item())),
            Op::SumRows(a) => {
                let shape = val(*a).shape().to_vec();
                let mut out = Vec::with_capacity(val(*a).len());
                for _ in 0..shape[0] {
                    out.extend_from_slice(g.data());
                }
                acc(*a, Tensor::from_parts(shape, out));
            }
            Op::Reshape(a) => acc(
                *a,
                Tensor::from_parts(val(*a).shape().to_vec(), g.into_data()),
            ),
            Op::Contract(a, b, plan) => {
                if self.needs(*a) {
                    acc(*a, plan.grad_a(&g, val(*b)));
                }
                if self.needs(*b) {
                    acc(*b, plan.grad_b(&g, val(*a)));
                }
            }
            Op::Bmm(a, b) => {
                let (bt, m, k, n) = ops::bmm_dims(val(*a).shape(), val(*b).shape()).unwrap();
                if self.needs(*a) {
                    let mut ga = vec![0.0; bt * m * k];
                    for t in 0..bt {
                        ops::gemm(
                            m,
                            n,
                            k,
                            &g.data()[t * m * n..(t + 1) * m * n],
                            false,
                            &val(*b).data()[t * k * n..(t + 1) * k * n],
                            true,
                            0.0,
                            &mut ga[t * m * k..(t + 1) * m * k],
                        );
                    }
                    acc(*a, Tensor::from_parts(vec![bt, m, k], ga));
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; bt * k * n];
                    for t in 0..bt {
                        ops::gemm(
                            k,
                            m,
                            n,
                            &val(*a).data()[t * m * k..(t + 1) * m * k],
                            true,
                            &g.data()[t * m * n..(t + 1) * m * n],
                            false,
                            0.0,
                            &mut gb[t * k * n..(t + 1) * k * n],
                        );
                    }
                    acc(*b, Tensor::from_parts(vec![bt, k, n], gb));
                }
            }
            Op::Linear { x, w, b } => {
                let ws = val(*w).shape();
                let (din, dout) = (ws[0], ws[1]);
                let m = val(*x).len() / din;
                if self.needs(*x) {
                    let mut gx = vec![0.0; m * din];
                    ops::gemm(
                        m,
                        dout,
                        din,
                        g.data(),
                        false,
                        val(*w).data(),
                        true,
                        0.0,
                        &mut gx,
                    );
                    acc(*x, Tensor::from_parts(val(*x).shape().to_vec(), gx));
                }
                if self.needs(*w) {
                    let mut gw = vec![0.0; din * dout];
                    ops::gemm(
                        din,
                        m,
                        dout,
                        val(*x).data(),
                        true,
                        g.data(),
                        false,
                        0.0,
                        &mut gw,
                    );
                    acc(*w, Tensor::from_parts(vec![din, dout], gw));
                }
                if let Some(b) = b {
                    let mut gb = vec![0.0; dout];
                    for row in g.data().chunks(dout) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    acc(*b, Tensor::vector(gb));
                }
            }
            Op::Relu(a) => acc(
                *a,
                g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })
                    .unwrap(),
            ),
            Op::Softplus(a) => acc(
                *a,
                g.zip_map(val(*a), |gv, x| gv * ops::sigmoid(x)).unwrap(),
            ),
            Op::SignedSqrt(a) => acc(
                *a,
                g.zip_map(val(*a), |gv, x| {
                    if x == 0.0 {
                        0.0
                    } else {
                        gv * 0.5 / x.abs().sqrt()
                    }
                })
                .unwrap(),
            ),
            Op::L2Normalize(a) => {
                let x = val(*a);
                let n = *x.shape().last().unwrap();
                let mut out = Vec::with_capacity(x.len());
                for (row, grow) in x.data().chunks(n).zip(g.data().chunks(n)) {
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm < ops::L2_NORM_FLOOR {
                        out.extend_from_slice(grow);
                        continue;
                    }
                    let dot: f64 = row.iter().zip(grow).map(|(y, g)| y * g).sum::<f64>() / norm;
                    out.extend(
                        row.iter()
                            .zip(grow)
                            .map(|(&xv, &gv)| (gv - xv / norm * dot) / norm),
                    );
                }
                acc(*a, Tensor::from_parts(x.shape().to_vec(), out));
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let n = *y.shape().last().unwrap();
                let mut out = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, g)| p * g).sum();
                    out.extend(yr.iter().zip(gr).map(|(&p, &gv)| p * (gv - dot)));
                }
                acc(*a, Tensor::from_parts(y.shape().to_vec(), out));
            }
            Op::Entmax15(a) => {
                let y = &node.value;
                let n = *y.shape().last().unwrap();
                let mut out = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                    let s: Vec<f64> = yr.iter().map(|p| p.sqrt()).collect();
                    let num: f64 = s.iter().zip(gr).map(|(s, g)| s * g).sum();
                    let den: f64 = s.iter().sum();
                    out.extend(s.iter().zip(gr).map(|(&sv, &gv)| sv * gv - sv * num / den));
                }
                acc(*a, Tensor::from_parts(y.shape().to_vec(), out));
            }
            Op::NormalCdf(a) => acc(
                *a,
                g.zip_map(val(*a), |gv, x| gv * ops::std_normal_pdf(x))
                    .unwrap(),
            ),
            Op::KeepTopK { x, kept } => {
                let data = g
                    .data()
                    .iter()
                    .zip(kept)
                    .map(|(&gv, &k)| if k { gv } else { 0.0 })
                    .collect();
                acc(*x, Tensor::from_parts(g.shape().to_vec(), data));
            }
            Op::KthExcluding { x, src } => {
                let mut out = vec![0.0; g.len()];
                for (&s, &gv) in src.iter().zip(g.data()) {
                    out[s] += gv;
                }
                acc(*x, Tensor::from_parts(g.shape().to_vec(), out));
            }
            Op::CvSquared(a) => acc(*a, cv_squared_grad(val(*a), g.item())),
            Op::CrossEntropy { logits, labels } => {
                let l = val(*logits);
                let c = l.shape()[1];
                let scale = g.item() / labels.len() as f64;
                let mut out = Vec::with_capacity(l.len());
                for (row, &y) in l.data().chunks(c).zip(labels) {
                    let p = ops::softmax_row(row);
                    out.extend(
                        p.iter()
                            .enumerate()
                            .map(|(j, &pj)| scale * (pj - if j == y { 1.0 } else { 0.0 })),
                    );
                }
                acc(*logits, Tensor::from_parts(l.shape().to_vec(), out));
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = ops::conv2d_backward(
                    geom,
                    val(*x).data(),
                    val(*w).data(),
                    g.data(),
                    self.needs(*x),
                );
                if let Some(dx) = dx {
                    acc(*x, Tensor::from_parts(val(*x).shape().to_vec(), dx));
                }
                acc(*w, Tensor::from_parts(val(*w).shape().to_vec(), dw));
                if let Some(b) = b {
                    acc(*b, Tensor::vector(db));
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut out = vec![0.0; val(*x).len()];
                for (&i, &gv) in argmax.iter().zip(g.data()) {
                    out[i] += gv;
                }
                acc(*x, Tensor::from_parts(val(*x).shape().to_vec(), out));
            }
            Op::SliceLast { x, start } => {
                let xs = val(*x).shape();
                let n = *xs.last().unwrap();
                let len = *g.shape().last().unwrap();
                let mut out = vec![0.0; val(*x).len()];
                for (orow, grow) in out.chunks_mut(n).zip(g.data().chunks(len)) {
                    orow[*start..start + len].copy_from_slice(grow);
                }
                acc(*x, Tensor::from_parts(xs.to_vec(), out));
            }
            Op::ConcatLast(xs) => {
                let total = *g.shape().last().unwrap();
                let rows = g.len() / total;
                let mut offset = 0;
                for &x in xs {
                    let w = *val(x).shape().last().unwrap();
                    if self.needs(x) {
                        let mut out = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            out.extend_from_slice(
                                &g.data()[r * total + offset..r * total + offset + w],
                            );
                        }
                        acc(x, Tensor::from_parts(val(x).shape().to_vec(), out));
                    }
                    offset += w;
                }
            }
            Op::SelectRows { x, rows } => {
                let xs = val(*x).shape();
                let d = xs[1];
                let mut out = vec![0.0; val(*x).len()];
                for (i, &r) in rows.iter().enumerate() {
                    for (o, v) in out[r * d..(r + 1) * d]
                        .iter_mut()
                        .zip(&g.data()[i * d..(i + 1) * d])
                    {
                        *o += v;
                    }
                }
                acc(*x, Tensor::from_parts(xs.to_vec(), out));
            }
            Op::ScatterRows { x, rows } => {
                let d = g.shape()[1];
                let mut out = Vec::with_capacity(rows.len() * d);
                for &r in rows {
                    out.extend_from_slice(g.row(r));
                }
                acc(*x, Tensor::from_parts(vec![rows.len(), d], out));
            }
            Op::ScaleRows { x, s } => {
                let xv = val(*x);
                let d = xv.shape()[1];
                let sv = val(*s);
                if self.needs(*x) {
                    let mut out = g.data().to_vec();
                    for (row, &c) in out.chunks_mut(d).zip(sv.data()) {
                        row.iter_mut().for_each(|v| *v *= c);
                    }
                    acc(*x, Tensor::from_parts(xv.shape().to_vec(), out));
                }
                if self.needs(*s) {
                    let gs: Vec<f64> = g
                        .data()
                        .chunks(d)
                        .zip(xv.data().chunks(d))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(*s, Tensor::from_parts(sv.shape().to_vec(), gs));
                }
            }
        }
    }
}

/// Indices of the `k` largest entries in descending order; ties go to the lower index.
pub(crate) fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k.min(row.len()));
    idx
}

pub(crate) const CV_MEAN_GUARD: f64 = 1e-10;

pub(crate) fn cv_squared_value(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var / (mean + CV_MEAN_GUARD).powi(2)
}

fn cv_squared_grad(v: &Tensor, g: f64) -> Tensor {
    let x = v.data();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|xi| (xi - mean).powi(2)).sum::<f64>() / n;
    let d = mean + CV_MEAN_GUARD;
    Tensor::from_parts(
        v.shape().to_vec(),
        x.iter()
            .map(|&xi| g * (2.0 * (xi - mean) / (n * d * d) - 2.0 * var / (n * d * d * d)))
            .collect(),
    )
}

fn sign_hash(data: &[f64]) -> u64 {
    let mut h = 0u64;
    for chunk in data.chunks(64) {
        let mut word = 0u64;
        for (i, &v) in chunk.iter().enumerate() {
            word |= ((v > 0.0) as u64) << i;
        }
        h = (h ^ word).wrapping_mul(FNV_PRIME);
    }
    h
}
