//! Reverse-mode automatic differentiation on a per-step tape.
//!
//! A [`Tape`] records every tensor operation of one forward pass as a node;
//! [`Tape::backward`] walks the nodes in reverse insertion order and
//! accumulates gradients. Nodes only ever reference earlier nodes, so the
//! insertion order is already a topological order. The tape is built,
//! differentiated and dropped within a single training step.

use std::collections::HashMap;

use crate::encoding::RotationBlock3;
use crate::error::{Error, Result};
use crate::optim::{ParamId, ParamStore};
use crate::tensor::{self, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

enum Op {
    Leaf {
        param: Option<ParamId>,
    },
    Matmul(VarId, VarId),
    /// `A · Bᵀ`, with B stored untransposed.
    MatmulNt(VarId, VarId),
    Add(VarId, VarId),
    /// `[m×n] + [n]`, the bias broadcast over rows.
    AddRowBias(VarId, VarId),
    Scale(VarId, f64),
    Relu(VarId),
    SoftmaxRows(VarId),
    LayerNormRows {
        x: VarId,
        gain: VarId,
        shift: VarId,
    },
    /// Row gather: `out[r, :] = table[ids[r], :]`.
    Embed {
        table: VarId,
        ids: Vec<usize>,
    },
    /// Per-row spherical rotation with a fixed block per row.
    GeoRotateRows {
        x: VarId,
        blocks: Vec<RotationBlock3>,
    },
    /// Mean of `−log softmax(logits)[target]` over non-ignored rows.
    CrossEntropy {
        logits: VarId,
        targets: Vec<usize>,
        ignore: Vec<bool>,
    },
    MeanScalars(Vec<VarId>),
    /// Constant-weighted sum reducing a tensor to a scalar.
    DotConst(VarId, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
}

const LAYER_NORM_EPS: f64 = 1e-5;

/// Computation tape for one forward/backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    param_leaves: HashMap<ParamId, VarId>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_leaves: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> VarId {
        self.nodes.push(Node { value, op });
        VarId(self.nodes.len() - 1)
    }

    pub fn value(&self, v: VarId) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` root with respect to node `v`.
    pub fn grad(&self, v: VarId) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Inserts a constant leaf (no gradient tracked back to a parameter).
    pub fn constant(&mut self, value: Tensor) -> VarId {
        self.push(value, Op::Leaf { param: None })
    }

    /// Inserts a parameter leaf, reusing the node if the parameter already
    /// appears on this tape so its gradient accumulates in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> VarId {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf { param: Some(id) });
        self.param_leaves.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    pub fn matmul_nt(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = tensor::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatmulNt(a, b)))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut value = ta.clone();
        value.add_assign(tb);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn add_row_bias(&mut self, x: VarId, bias: VarId) -> Result<VarId> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape().len() != 2 || tb.shape() != [tx.cols()] {
            return Err(Error::ShapeMismatch(format!(
                "add_row_bias: {:?} vs {:?}",
                tx.shape(),
                tb.shape()
            )));
        }
        let cols = tx.cols();
        let mut value = tx.clone();
        for row in value.data_mut().chunks_exact_mut(cols) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRowBias(x, bias)))
    }

    pub fn scale(&mut self, x: VarId, c: f64) -> VarId {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v *= c);
        self.push(value, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn softmax_rows(&mut self, x: VarId) -> Result<VarId> {
        if self.value(x).shape().len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "softmax_rows needs rank 2, got {:?}",
                self.value(x).shape()
            )));
        }
        let value = tensor::softmax_rows(self.value(x));
        Ok(self.push(value, Op::SoftmaxRows(x)))
    }

    /// Row layer norm with learned per-column gain and shift.
    pub fn layer_norm_rows(&mut self, x: VarId, gain: VarId, shift: VarId) -> Result<VarId> {
        let (tx, tg, ts) = (self.value(x), self.value(gain), self.value(shift));
        if tx.shape().len() != 2 || tg.shape() != [tx.cols()] || ts.shape() != [tx.cols()] {
            return Err(Error::ShapeMismatch(format!(
                "layer_norm_rows: x {:?}, gain {:?}, shift {:?}",
                tx.shape(),
                tg.shape(),
                ts.shape()
            )));
        }
        let n = tx.cols();
        let mut value = tx.clone();
        for row in value.data_mut().chunks_exact_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv_sigma = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (c, v) in row.iter_mut().enumerate() {
                *v = tg.data()[c] * (*v - mean) * inv_sigma + ts.data()[c];
            }
        }
        Ok(self.push(value, Op::LayerNormRows { x, gain, shift }))
    }

    pub fn embed(&mut self, table: VarId, ids: &[usize]) -> Result<VarId> {
        let tt = self.value(table);
        if tt.shape().len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "embedding table must be rank 2, got {:?}",
                tt.shape()
            )));
        }
        let (rows, d) = (tt.rows(), tt.cols());
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Index(format!(
                "token id {bad} outside embedding table of {rows} rows"
            )));
        }
        let mut value = Tensor::zeros(&[ids.len(), d]);
        for (r, &id) in ids.iter().enumerate() {
            value.data_mut()[r * d..(r + 1) * d].copy_from_slice(tt.row(id));
        }
        Ok(self.push(
            value,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Rotates row `r` of `x` blockwise by `blocks[r]`.
    pub fn geo_rotate_rows(&mut self, x: VarId, blocks: Vec<RotationBlock3>) -> Result<VarId> {
        let tx = self.value(x);
        if tx.shape().len() != 2 || tx.rows() != blocks.len() {
            return Err(Error::ShapeMismatch(format!(
                "geo_rotate_rows: {} blocks for shape {:?}",
                blocks.len(),
                tx.shape()
            )));
        }
        if tx.cols() % 3 != 0 {
            return Err(Error::InvalidDimension(format!(
                "geo_rotate_rows needs a column count divisible by 3, got {}",
                tx.cols()
            )));
        }
        let cols = tx.cols();
        let mut value = tx.clone();
        for (row, block) in value.data_mut().chunks_exact_mut(cols).zip(&blocks) {
            block.apply_blockwise(row);
        }
        Ok(self.push(value, Op::GeoRotateRows { x, blocks }))
    }

    /// Mean of per-position negative log-likelihood over rows whose
    /// `ignore` flag is false.
    pub fn cross_entropy(
        &mut self,
        logits: VarId,
        targets: &[usize],
        ignore: &[bool],
    ) -> Result<VarId> {
        let tl = self.value(logits);
        if tl.shape().len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "cross_entropy logits must be rank 2, got {:?}",
                tl.shape()
            )));
        }
        let (rows, vocab) = (tl.rows(), tl.cols());
        if targets.len() != rows || ignore.len() != rows {
            return Err(Error::ShapeMismatch(format!(
                "cross_entropy: {} logit rows, {} targets, {} mask flags",
                rows,
                targets.len(),
                ignore.len()
            )));
        }
        let mut count = 0usize;
        for r in 0..rows {
            if ignore[r] {
                continue;
            }
            if targets[r] >= vocab {
                return Err(Error::Index(format!(
                    "target id {} at position {} outside vocabulary of {}",
                    targets[r], r, vocab
                )));
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let lse = tensor::log_sum_exp_rows(tl);
        let mut total = 0.0;
        for r in 0..rows {
            if !ignore[r] {
                total += lse[r] - tl.get2(r, targets[r]);
            }
        }
        let value = Tensor::scalar(total / count as f64);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore: ignore.to_vec(),
            },
        ))
    }

    pub fn mean_scalars(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(Error::EmptyLoss);
        }
        for &p in parts {
            if self.value(p).shape() != [1] {
                return Err(Error::ShapeMismatch(format!(
                    "mean_scalars expects [1] tensors, got {:?}",
                    self.value(p).shape()
                )));
            }
        }
        let total: f64 = parts.iter().map(|&p| self.value(p).item()).sum();
        let value = Tensor::scalar(total / parts.len() as f64);
        Ok(self.push(value, Op::MeanScalars(parts.to_vec())))
    }

    /// `Σ x ⊙ w` against constant weights; reduces any tensor to a scalar.
    pub fn dot_const(&mut self, x: VarId, weights: Tensor) -> Result<VarId> {
        let tx = self.value(x);
        if tx.shape() != weights.shape() {
            return Err(Error::ShapeMismatch(format!(
                "dot_const: {:?} vs {:?}",
                tx.shape(),
                weights.shape()
            )));
        }
        let total: f64 = tx.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(total), Op::DotConst(x, weights)))
    }

    fn add_grad(grads: &mut [Option<Tensor>], v: VarId, delta: &Tensor) {
        match &mut grads[v.0] {
            Some(g) => g.add_assign(delta),
            slot @ None => *slot = Some(delta.clone()),
        }
    }

    /// Accumulates `d root / d node` into every node reachable from `root`.
    /// The root must be a `[1]` scalar.
    pub fn backward(&mut self, root: VarId) -> Result<()> {
        if self.value(root).shape() != [1] {
            return Err(Error::ShapeMismatch(format!(
                "backward root must be a [1] scalar, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..self.nodes.len()).rev() {
            let upstream = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf { .. } => {}
                Op::Matmul(a, b) => {
                    let da = tensor::matmul_nt(&upstream, &self.nodes[b.0].value)?;
                    let db = tensor::matmul_tn(&self.nodes[a.0].value, &upstream)?;
                    Self::add_grad(&mut grads, *a, &da);
                    Self::add_grad(&mut grads, *b, &db);
                }
                Op::MatmulNt(a, b) => {
                    // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A.
                    let da = tensor::matmul(&upstream, &self.nodes[b.0].value)?;
                    let db = tensor::matmul_tn(&upstream, &self.nodes[a.0].value)?;
                    Self::add_grad(&mut grads, *a, &da);
                    Self::add_grad(&mut grads, *b, &db);
                }
                Op::Add(a, b) => {
                    Self::add_grad(&mut grads, *a, &upstream);
                    Self::add_grad(&mut grads, *b, &upstream);
                }
                Op::AddRowBias(x, bias) => {
                    let cols = self.nodes[x.0].value.cols();
                    let mut dbias = Tensor::zeros(&[cols]);
                    for row in upstream.data().chunks_exact(cols) {
                        for (g, &u) in dbias.data_mut().iter_mut().zip(row) {
                            *g += u;
                        }
                    }
                    Self::add_grad(&mut grads, *x, &upstream);
                    Self::add_grad(&mut grads, *bias, &dbias);
                }
                Op::Scale(x, c) => {
                    let mut dx = upstream.clone();
                    dx.data_mut().iter_mut().for_each(|v| *v *= c);
                    Self::add_grad(&mut grads, *x, &dx);
                }
                Op::Relu(x) => {
                    let mut dx = upstream.clone();
                    for (g, &v) in dx.data_mut().iter_mut().zip(self.nodes[x.0].value.data()) {
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    Self::add_grad(&mut grads, *x, &dx);
                }
                Op::SoftmaxRows(x) => {
                    // dx_i = s_i (du_i − Σ_j du_j s_j), per row.
                    let s = &self.nodes[idx].value;
                    let n = s.cols();
                    let mut dx = Tensor::zeros(s.shape());
                    for r in 0..s.rows() {
                        let srow = s.row(r);
                        let urow = &upstream.data()[r * n..(r + 1) * n];
                        let dot: f64 = srow.iter().zip(urow).map(|(a, b)| a * b).sum();
                        let drow = &mut dx.data_mut()[r * n..(r + 1) * n];
                        for ((d, &sv), &uv) in drow.iter_mut().zip(srow).zip(urow) {
                            *d = sv * (uv - dot);
                        }
                    }
                    Self::add_grad(&mut grads, *x, &dx);
                }
                Op::LayerNormRows { x, gain, shift } => {
                    let tx = &self.nodes[x.0].value;
                    let tg = &self.nodes[gain.0].value;
                    let n = tx.cols();
                    let nf = n as f64;
                    let mut dx = Tensor::zeros(tx.shape());
                    let mut dgain = Tensor::zeros(&[n]);
                    let mut dshift = Tensor::zeros(&[n]);
                    for r in 0..tx.rows() {
                        let xrow = tx.row(r);
                        let urow = &upstream.data()[r * n..(r + 1) * n];
                        let mean = xrow.iter().sum::<f64>() / nf;
                        let var =
                            xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                        let inv_sigma = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let xhat: Vec<f64> =
                            xrow.iter().map(|v| (v - mean) * inv_sigma).collect();
                        // dxhat = du ⊙ gain
                        let dxhat: Vec<f64> = urow
                            .iter()
                            .zip(tg.data())
                            .map(|(&u, &g)| u * g)
                            .collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / nf;
                        let mean_dxhat_xhat =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / nf;
                        for c in 0..n {
                            dgain.data_mut()[c] += urow[c] * xhat[c];
                            dshift.data_mut()[c] += urow[c];
                            dx.data_mut()[r * n + c] = inv_sigma
                                * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
                        }
                    }
                    Self::add_grad(&mut grads, *x, &dx);
                    Self::add_grad(&mut grads, *gain, &dgain);
                    Self::add_grad(&mut grads, *shift, &dshift);
                }
                Op::Embed { table, ids } => {
                    let d = self.nodes[table.0].value.cols();
                    let mut dtable = Tensor::zeros(self.nodes[table.0].value.shape());
                    for (r, &id) in ids.iter().enumerate() {
                        let urow = &upstream.data()[r * d..(r + 1) * d];
                        let trow = &mut dtable.data_mut()[id * d..(id + 1) * d];
                        for (t, &u) in trow.iter_mut().zip(urow) {
                            *t += u;
                        }
                    }
                    Self::add_grad(&mut grads, *table, &dtable);
                }
                Op::GeoRotateRows { x, blocks } => {
                    // The blocks are orthogonal, so the adjoint is the
                    // transposed block applied to the upstream rows.
                    let cols = self.nodes[x.0].value.cols();
                    let mut dx = upstream.clone();
                    for (row, block) in dx.data_mut().chunks_exact_mut(cols).zip(blocks) {
                        block.transpose().apply_blockwise(row);
                    }
                    Self::add_grad(&mut grads, *x, &dx);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    ignore,
                } => {
                    let tl = &self.nodes[logits.0].value;
                    let probs = tensor::softmax_rows(tl);
                    let count = ignore.iter().filter(|&&m| !m).count() as f64;
                    let g = upstream.item() / count;
                    let n = tl.cols();
                    let mut dl = Tensor::zeros(tl.shape());
                    for r in 0..tl.rows() {
                        if ignore[r] {
                            continue;
                        }
                        let prow = probs.row(r);
                        let drow = &mut dl.data_mut()[r * n..(r + 1) * n];
                        for (d, &p) in drow.iter_mut().zip(prow) {
                            *d = g * p;
                        }
                        drow[targets[r]] -= g;
                    }
                    Self::add_grad(&mut grads, *logits, &dl);
                }
                Op::MeanScalars(parts) => {
                    let share = Tensor::scalar(upstream.item() / parts.len() as f64);
                    for &p in parts {
                        Self::add_grad(&mut grads, p, &share);
                    }
                }
                Op::DotConst(x, weights) => {
                    let mut dx = weights.clone();
                    let g = upstream.item();
                    dx.data_mut().iter_mut().for_each(|v| *v *= g);
                    Self::add_grad(&mut grads, *x, &dx);
                }
            }
            // Keep the node's own gradient available to callers.
            grads[idx] = Some(upstream);
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds every parameter leaf's gradient into the store. Iterates the
    /// tape (not the hash map) so accumulation order is deterministic.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(Some(g)) = self.grads.get(idx) {
                    store.grad_mut(id).add_assign(g);
                }
            }
        }
    }
}
