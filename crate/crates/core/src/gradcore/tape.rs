use std::sync::Arc;

use super::ops::{self, axpy, dot};
use super::{Real, Tensor2};
use crate::error::{invalid, shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor2<T>,
    /// Frozen tensors always receive an exactly-zero gradient.
    pub frozen: bool,
}

/// Ordered collection of parameters. The insertion order is the canonical
/// layout used for serialization and optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor2<T>, frozen: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            frozen,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor2<T> {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters, frozen ones included.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    frozen: p.frozen,
                })
                .collect(),
        }
    }
}

/// Gradients for every parameter of a store, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Tensor2<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: store
                .params
                .iter()
                .map(|p| Tensor2::zeros(p.value.rows(), p.value.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor2<T> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor2<T> {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor2<T>)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.grads.len() != other.grads.len() {
            return shape_err("gradient sets cover different parameter stores");
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        self.grads.iter_mut().for_each(|g| g.scale(s));
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor2::is_finite)
    }
}

struct Node<T> {
    value: Tensor2<T>,
    requires_grad: bool,
}

enum Op<T> {
    Param {
        id: ParamId,
    },
    Dense {
        x: NodeId,
        w: ParamId,
        b: ParamId,
    },
    LeakyRelu {
        x: NodeId,
        slope: T,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    AppendCols {
        x: NodeId,
    },
    ConcatCols {
        a: NodeId,
        b: NodeId,
    },
    FramedTransform {
        signal: NodeId,
        w: ParamId,
        hop: usize,
    },
    OverlapAdd {
        frames: NodeId,
        w: ParamId,
        hop: usize,
        counts: Vec<T>,
    },
    WeightedSum {
        x: NodeId,
        weights: Vec<T>,
    },
    LogCosh {
        pred: NodeId,
        target: Vec<T>,
    },
    LogSnr {
        pred: NodeId,
        target: Vec<T>,
        err_power: T,
    },
    SpecLogCosh {
        pred: NodeId,
        basis: Arc<SpectralBasis<T>>,
        re: Tensor2<T>,
        im: Tensor2<T>,
        mag_diff: Tensor2<T>,
    },
}

struct Record<T> {
    op: Op<T>,
    out: NodeId,
}

/// Fixed real/imaginary DFT rows used by the spectral loss.
#[derive(Clone, Debug)]
pub struct SpectralBasis<T> {
    pub cos: Tensor2<T>,
    pub sin: Tensor2<T>,
    pub hop: usize,
}

/// Floor added to both powers in the log-SNR loss.
pub const LOGSNR_EPS: f64 = 1e-12;

/// Define-by-run record of one forward pass.
///
/// Every op evaluates eagerly and appends a record holding whatever backward
/// needs. [`Tape::backward`] replays the records in reverse.
pub struct Tape<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    records: Vec<Record<T>>,
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor2<T> {
        &self.nodes[id.0].value
    }

    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn trainable(&self, id: ParamId) -> bool {
        !self.params.get(id).frozen
    }

    fn push(&mut self, value: Tensor2<T>, requires_grad: bool, op: Option<Op<T>>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            requires_grad,
        });
        if let Some(op) = op {
            if requires_grad {
                self.records.push(Record { op, out: id });
            }
        }
        id
    }

    /// Input value that receives no gradient.
    pub fn constant(&mut self, value: Tensor2<T>) -> NodeId {
        self.push(value, false, None)
    }

    /// A parameter used directly as an activation.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        let value = self.params.value(id).clone();
        let rg = self.trainable(id);
        self.push(value, rg, Some(Op::Param { id }))
    }

    /// Row-wise `y[t] = W x[t] + b`; `b` must be `1 × W.rows()`.
    pub fn dense(&mut self, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
        let bias = self.params.value(b);
        if bias.rows() != 1 {
            return shape_err(format!("bias must be a row vector, got {:?}", bias.shape()));
        }
        let y = ops::dense_rows(self.value(x), self.params.value(w), bias.data())?;
        let rg = self.needs(x) || self.trainable(w) || self.trainable(b);
        Ok(self.push(y, rg, Some(Op::Dense { x, w, b })))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: T) -> NodeId {
        let v = self.value(x);
        let y = Tensor2::new(v.rows(), v.cols(), ops::leaky_relu(v.data(), slope))
            .expect("shape preserved");
        let rg = self.needs(x);
        self.push(y, rg, Some(Op::LeakyRelu { x, slope }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(y, rg, Some(Op::Add { a, b })))
    }

    /// Appends the constant vector `extra` to every row of `x`.
    pub fn append_cols(&mut self, x: NodeId, extra: &[T]) -> NodeId {
        let v = self.value(x);
        let cols = v.cols() + extra.len();
        let mut y = Tensor2::zeros(v.rows(), cols);
        for t in 0..v.rows() {
            let row = y.row_mut(t);
            row[..v.cols()].copy_from_slice(v.row(t));
            row[v.cols()..].copy_from_slice(extra);
        }
        let rg = self.needs(x);
        self.push(y, rg, Some(Op::AppendCols { x }))
    }

    /// Joins two frame-aligned tensors feature-wise.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return shape_err(format!(
                "cannot concatenate {:?} and {:?}",
                va.shape(),
                vb.shape()
            ));
        }
        let mut y = Tensor2::zeros(va.rows(), va.cols() + vb.cols());
        for t in 0..va.rows() {
            let row = y.row_mut(t);
            row[..va.cols()].copy_from_slice(va.row(t));
            row[va.cols()..].copy_from_slice(vb.row(t));
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(y, rg, Some(Op::ConcatCols { a, b })))
    }

    /// Strided framing of a `1 × L` signal through `w`; one output row per frame.
    pub fn framed_transform(&mut self, signal: NodeId, w: ParamId, hop: usize) -> Result<NodeId> {
        let s = self.value(signal);
        if s.rows() != 1 {
            return shape_err(format!("signal must be 1 x L, got {:?}", s.shape()));
        }
        let y = ops::framed_transform_forward(s.data(), self.params.value(w), hop)?;
        let rg = self.needs(signal) || self.trainable(w);
        Ok(self.push(y, rg, Some(Op::FramedTransform { signal, w, hop })))
    }

    /// Overlap-add synthesis of per-frame features into a `1 × L` signal.
    pub fn overlap_add(&mut self, frames: NodeId, w: ParamId, hop: usize) -> Result<NodeId> {
        let wv = self.params.value(w);
        let fv = self.value(frames);
        let y = ops::overlap_add_synthesis(fv, wv, hop)?;
        let counts = ops::overlap_counts(fv.rows(), wv.rows(), hop);
        let rg = self.needs(frames) || self.trainable(w);
        Ok(self.push(
            Tensor2::row_vector(y),
            rg,
            Some(Op::OverlapAdd {
                frames,
                w,
                hop,
                counts,
            }),
        ))
    }

    /// Scalar `Σ weights ⊙ x`.
    pub fn weighted_sum(&mut self, x: NodeId, weights: Vec<T>) -> Result<NodeId> {
        let v = self.value(x);
        if v.len() != weights.len() {
            return shape_err(format!(
                "weighted sum over {} values with {} weights",
                v.len(),
                weights.len()
            ));
        }
        let s = dot(v.data(), &weights);
        let rg = self.needs(x);
        Ok(self.push(Tensor2::scalar(s), rg, Some(Op::WeightedSum { x, weights })))
    }

    /// Mean log-cosh of `pred - target`.
    pub fn logcosh_loss(&mut self, pred: NodeId, target: &[T]) -> Result<NodeId> {
        let p = self.value(pred);
        if p.len() != target.len() || target.is_empty() {
            return shape_err(format!(
                "loss over {} predictions and {} targets",
                p.len(),
                target.len()
            ));
        }
        let n = T::from_usize(target.len()).unwrap();
        let s: T = p
            .data()
            .iter()
            .zip(target)
            .map(|(&a, &b)| ops::logcosh(a - b))
            .sum();
        let rg = self.needs(pred);
        Ok(self.push(
            Tensor2::scalar(s / n),
            rg,
            Some(Op::LogCosh {
                pred,
                target: target.to_vec(),
            }),
        ))
    }

    /// `-10 log10((Σ target² + ε) / (Σ (pred-target)² + ε))`.
    pub fn logsnr_loss(&mut self, pred: NodeId, target: &[T]) -> Result<NodeId> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return shape_err(format!(
                "loss over {} predictions and {} targets",
                p.len(),
                target.len()
            ));
        }
        let eps = T::lit(LOGSNR_EPS);
        let sig: T = target.iter().map(|&t| t * t).sum();
        let err: T = p
            .data()
            .iter()
            .zip(target)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let loss = T::lit(-10.0) * ((sig + eps) / (err + eps)).log10();
        let rg = self.needs(pred);
        Ok(self.push(
            Tensor2::scalar(loss),
            rg,
            Some(Op::LogSnr {
                pred,
                target: target.to_vec(),
                err_power: err,
            }),
        ))
    }

    /// Mean log-cosh between magnitude spectrograms of `pred` and `target`,
    /// framed with rectangular windows at the basis hop.
    pub fn spectral_logcosh_loss(
        &mut self,
        pred: NodeId,
        target: &[T],
        basis: Arc<SpectralBasis<T>>,
    ) -> Result<NodeId> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return shape_err(format!(
                "loss over {} predictions and {} targets",
                p.len(),
                target.len()
            ));
        }
        if basis.cos.shape() != basis.sin.shape() {
            return shape_err("spectral basis halves differ in shape");
        }
        let re = ops::framed_transform_forward(p.data(), &basis.cos, basis.hop)?;
        let im = ops::framed_transform_forward(p.data(), &basis.sin, basis.hop)?;
        let tre = ops::framed_transform_forward(target, &basis.cos, basis.hop)?;
        let tim = ops::framed_transform_forward(target, &basis.sin, basis.hop)?;
        let mut mag_diff = Tensor2::zeros(re.rows(), re.cols());
        for (i, d) in mag_diff.data_mut().iter_mut().enumerate() {
            let mp = re.data()[i].hypot(im.data()[i]);
            let mt = tre.data()[i].hypot(tim.data()[i]);
            *d = mp - mt;
        }
        let n = T::from_usize(mag_diff.len()).unwrap();
        let loss = mag_diff.data().iter().map(|&d| ops::logcosh(d)).sum::<T>() / n;
        let rg = self.needs(pred);
        Ok(self.push(
            Tensor2::scalar(loss),
            rg,
            Some(Op::SpecLogCosh {
                pred,
                basis,
                re,
                im,
                mag_diff,
            }),
        ))
    }

    /// Reverse-mode sweep from the last node, which must be a scalar.
    ///
    /// Returns one gradient tensor per parameter of the store; frozen
    /// parameters get exact zeros.
    pub fn backward(&self, seed: T) -> Result<Gradients<T>> {
        let Some(last) = self.nodes.last() else {
            return invalid("backward on an empty tape");
        };
        if last.value.shape() != (1, 1) {
            return invalid(format!(
                "backward needs a scalar final node, got {:?}",
                last.value.shape()
            ));
        }
        let mut grads = Gradients::zeros_like(self.params);
        let mut adj: Vec<Option<Tensor2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[self.nodes.len() - 1] = Some(Tensor2::scalar(seed));

        for rec in self.records.iter().rev() {
            let Some(dy) = adj[rec.out.0].take() else {
                continue;
            };
            self.backprop(rec, &dy, &mut adj, &mut grads)?;
        }
        Ok(grads)
    }

    fn accumulate(&self, adj: &mut [Option<Tensor2<T>>], id: NodeId, g: Tensor2<T>) -> Result<()> {
        if !self.needs(id) {
            return Ok(());
        }
        match &mut adj[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn backprop(
        &self,
        rec: &Record<T>,
        dy: &Tensor2<T>,
        adj: &mut [Option<Tensor2<T>>],
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        match &rec.op {
            Op::Param { id } => {
                if self.trainable(*id) {
                    grads.get_mut(*id).add_assign(dy)?;
                }
            }
            Op::Dense { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.params.value(*w);
                if self.trainable(*w) {
                    let gw = grads.get_mut(*w);
                    for i in 0..wv.rows() {
                        let row = gw.row_mut(i);
                        for t in 0..xv.rows() {
                            axpy(row, dy.get(t, i), xv.row(t));
                        }
                    }
                }
                if self.trainable(*b) {
                    let gb = grads.get_mut(*b).data_mut();
                    for t in 0..dy.rows() {
                        axpy(gb, T::one(), dy.row(t));
                    }
                }
                if self.needs(*x) {
                    let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                    for t in 0..xv.rows() {
                        let row = dx.row_mut(t);
                        for i in 0..wv.rows() {
                            axpy(row, dy.get(t, i), wv.row(i));
                        }
                    }
                    self.accumulate(adj, *x, dx)?;
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x);
                let mut dx = dy.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    if v < T::zero() {
                        *d *= *slope;
                    }
                }
                self.accumulate(adj, *x, dx)?;
            }
            Op::Add { a, b } => {
                self.accumulate(adj, *a, dy.clone())?;
                self.accumulate(adj, *b, dy.clone())?;
            }
            Op::AppendCols { x } => {
                let cols = self.value(*x).cols();
                let dx = Tensor2::from_fn(dy.rows(), cols, |r, c| dy.get(r, c));
                self.accumulate(adj, *x, dx)?;
            }
            Op::ConcatCols { a, b } => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let da = Tensor2::from_fn(dy.rows(), ca, |r, c| dy.get(r, c));
                let db = Tensor2::from_fn(dy.rows(), cb, |r, c| dy.get(r, ca + c));
                self.accumulate(adj, *a, da)?;
                self.accumulate(adj, *b, db)?;
            }
            Op::FramedTransform { signal, w, hop } => {
                let s = self.value(*signal).data();
                let wv = self.params.value(*w);
                let n = wv.cols();
                if self.trainable(*w) {
                    let gw = grads.get_mut(*w);
                    for k in 0..wv.rows() {
                        let row = gw.row_mut(k);
                        for t in 0..dy.rows() {
                            axpy(row, dy.get(t, k), &s[t * hop..t * hop + n]);
                        }
                    }
                }
                if self.needs(*signal) {
                    let mut ds = vec![T::zero(); s.len()];
                    for t in 0..dy.rows() {
                        let seg = &mut ds[t * hop..t * hop + n];
                        for k in 0..wv.rows() {
                            axpy(seg, dy.get(t, k), wv.row(k));
                        }
                    }
                    self.accumulate(adj, *signal, Tensor2::row_vector(ds))?;
                }
            }
            Op::OverlapAdd {
                frames,
                w,
                hop,
                counts,
            } => {
                let fv = self.value(*frames);
                let wv = self.params.value(*w);
                let n = wv.rows();
                let g: Vec<T> = dy
                    .data()
                    .iter()
                    .zip(counts)
                    .map(|(&d, &c)| if c > T::zero() { d / c } else { T::zero() })
                    .collect();
                if self.trainable(*w) {
                    let gw = grads.get_mut(*w);
                    for t in 0..fv.rows() {
                        let seg = &g[t * hop..t * hop + n];
                        for (i, &gi) in seg.iter().enumerate() {
                            axpy(gw.row_mut(i), gi, fv.row(t));
                        }
                    }
                }
                if self.needs(*frames) {
                    let mut df = Tensor2::zeros(fv.rows(), fv.cols());
                    for t in 0..fv.rows() {
                        let seg = &g[t * hop..t * hop + n];
                        let row = df.row_mut(t);
                        for (i, &gi) in seg.iter().enumerate() {
                            axpy(row, gi, wv.row(i));
                        }
                    }
                    self.accumulate(adj, *frames, df)?;
                }
            }
            Op::WeightedSum { x, weights } => {
                let xv = self.value(*x);
                let s = dy.data()[0];
                let dx = Tensor2::new(
                    xv.rows(),
                    xv.cols(),
                    weights.iter().map(|&w| w * s).collect(),
                )?;
                self.accumulate(adj, *x, dx)?;
            }
            Op::LogCosh { pred, target } => {
                let pv = self.value(*pred);
                let scale = dy.data()[0] / T::from_usize(target.len()).unwrap();
                let dp = pv
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| (p - t).tanh() * scale)
                    .collect();
                self.accumulate(adj, *pred, Tensor2::new(pv.rows(), pv.cols(), dp)?)?;
            }
            Op::LogSnr {
                pred,
                target,
                err_power,
            } => {
                let pv = self.value(*pred);
                let c = T::lit(20.0 / std::f64::consts::LN_10) * dy.data()[0]
                    / (*err_power + T::lit(LOGSNR_EPS));
                let dp = pv
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| c * (p - t))
                    .collect();
                self.accumulate(adj, *pred, Tensor2::new(pv.rows(), pv.cols(), dp)?)?;
            }
            Op::SpecLogCosh {
                pred,
                basis,
                re,
                im,
                mag_diff,
            } => {
                let pv = self.value(*pred);
                let scale = dy.data()[0] / T::from_usize(mag_diff.len()).unwrap();
                let n = basis.cos.cols();
                let mut dp = vec![T::zero(); pv.len()];
                let mut dre = vec![T::zero(); re.cols()];
                let mut dim = vec![T::zero(); re.cols()];
                for t in 0..re.rows() {
                    for k in 0..re.cols() {
                        let (r, i) = (re.get(t, k), im.get(t, k));
                        let mag = r.hypot(i);
                        let dmag = mag_diff.get(t, k).tanh() * scale;
                        if mag > T::zero() {
                            dre[k] = dmag * r / mag;
                            dim[k] = dmag * i / mag;
                        } else {
                            dre[k] = T::zero();
                            dim[k] = T::zero();
                        }
                    }
                    let seg = &mut dp[t * basis.hop..t * basis.hop + n];
                    for k in 0..re.cols() {
                        axpy(seg, dre[k], basis.cos.row(k));
                        axpy(seg, dim[k], basis.sin.row(k));
                    }
                }
                self.accumulate(adj, *pred, Tensor2::new(pv.rows(), pv.cols(), dp)?)?;
            }
        }
        Ok(())
    }
}
