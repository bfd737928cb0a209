//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! A `Tape` is built fresh for every forward pass: leaves are lifted onto it,
//! each operation appends one node holding the computed value and the ids of
//! its inputs, and `backward` walks the nodes in reverse accumulating adjoints.
//! Nothing survives the pass; parameters live outside the tape and are lifted
//! again next time. Inputs always precede outputs in the node list, so the
//! reverse walk is a valid topological order by construction.

use crate::error::{Error, Result};

use super::array::DenseArray;

const GELU_COEFF: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Handle to a value recorded on a `Tape`. Only meaningful for the tape that
/// issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Scale(ValueId, f64),
    AddScalar(ValueId),
    MatMul(ValueId, ValueId),
    Transpose(ValueId),
    Reshape(ValueId),
    SoftmaxLast(ValueId),
    LayerNorm {
        x: ValueId,
        gain: ValueId,
        bias: ValueId,
        eps: f64,
    },
    Conv1dSame {
        x: ValueId,
        kernel: ValueId,
    },
    Gelu(ValueId),
    MeanAll(ValueId),
    MeanRows(ValueId),
    AddLast(ValueId, ValueId),
    MulLast(ValueId, ValueId),
    ConcatRows(Vec<ValueId>),
    SliceRows {
        x: ValueId,
        start: usize,
    },
    ConcatCols(Vec<ValueId>),
    SliceCols {
        x: ValueId,
        start: usize,
    },
}

struct Node {
    value: DenseArray,
    op: Op,
    requires: bool,
}

/// Gradients produced by one `Tape::backward` call, addressed by the ids of
/// the leaf nodes they belong to.
pub struct Gradients {
    grads: Vec<Option<DenseArray>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&DenseArray> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: ValueId) -> Option<DenseArray> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The value held by a node. Panics on a foreign id, which is always a
    /// programming error.
    pub fn value(&self, id: ValueId) -> &DenseArray {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: DenseArray, op: Op, requires: bool) -> ValueId {
        self.nodes.push(Node { value, op, requires });
        ValueId(self.nodes.len() - 1)
    }

    fn requires(&self, id: ValueId) -> bool {
        self.nodes[id.0].requires
    }

    /// Lift an external array; differentiation follows its `requires_grad`.
    pub fn leaf(&mut self, arr: &DenseArray) -> ValueId {
        let requires = arr.requires_grad();
        self.push(arr.clone(), Op::Leaf, requires)
    }

    /// Lift a parameter: always a differentiation target.
    pub fn param(&mut self, arr: &DenseArray) -> ValueId {
        self.push(arr.clone(), Op::Leaf, true)
    }

    /// Lift a constant: never differentiated through.
    pub fn constant(&mut self, arr: DenseArray) -> ValueId {
        self.push(arr, Op::Leaf, false)
    }

    // ── elementwise ─────────────────────────────────────────────────────

    fn zip_same_shape(
        &mut self,
        op_name: &'static str,
        a: ValueId,
        b: ValueId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<ValueId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data: Vec<f64> = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = DenseArray::new(va.shape().to_vec(), data)?;
        let requires = self.requires(a) || self.requires(b);
        Ok(self.push(value, op, requires))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> ValueId {
        let v = &self.nodes[x.0].value;
        let data: Vec<f64> = v.data().iter().map(|&t| t * c).collect();
        let value = DenseArray::new(v.shape().to_vec(), data).expect("same shape");
        let requires = self.requires(x);
        self.push(value, Op::Scale(x, c), requires)
    }

    pub fn add_scalar(&mut self, x: ValueId, c: f64) -> ValueId {
        let v = &self.nodes[x.0].value;
        let data: Vec<f64> = v.data().iter().map(|&t| t + c).collect();
        let value = DenseArray::new(v.shape().to_vec(), data).expect("same shape");
        let requires = self.requires(x);
        self.push(value, Op::AddScalar(x), requires)
    }

    pub fn gelu(&mut self, x: ValueId) -> ValueId {
        let v = &self.nodes[x.0].value;
        let data: Vec<f64> = v.data().iter().map(|&t| gelu(t)).collect();
        let value = DenseArray::new(v.shape().to_vec(), data).expect("same shape");
        let requires = self.requires(x);
        self.push(value, Op::Gelu(x), requires)
    }

    // ── linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, ka) = va.dims2("matmul")?;
        let (kb, n) = vb.dims2("matmul")?;
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (ad, bd) = (va.data(), vb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..ka {
                let ail = ad[i * ka + l];
                if ail == 0.0 {
                    continue;
                }
                let brow = &bd[l * n..(l + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += ail * brow[j];
                }
            }
        }
        let value = DenseArray::new(vec![m, n], out)?;
        let requires = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::MatMul(a, b), requires))
    }

    pub fn transpose(&mut self, x: ValueId) -> Result<ValueId> {
        let v = &self.nodes[x.0].value;
        let (r, c) = v.dims2("transpose")?;
        let d = v.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let value = DenseArray::new(vec![c, r], out)?;
        let requires = self.requires(x);
        Ok(self.push(value, Op::Transpose(x), requires))
    }

    pub fn reshape(&mut self, x: ValueId, shape: &[usize]) -> Result<ValueId> {
        let v = self.nodes[x.0].value.reshaped(shape)?;
        let requires = self.requires(x);
        Ok(self.push(v, Op::Reshape(x), requires))
    }

    // ── normalization and attention ─────────────────────────────────────

    /// Softmax over the last axis, computed with the usual max shift so large
    /// logits cannot overflow.
    pub fn softmax(&mut self, x: ValueId) -> ValueId {
        let v = &self.nodes[x.0].value;
        let d = v.last_dim();
        let mut out = Vec::with_capacity(v.numel());
        for slice in v.data().chunks_exact(d) {
            let m = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = slice.iter().map(|&t| (t - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            out.extend(exps.iter().map(|e| e / sum));
        }
        let value = DenseArray::new(v.shape().to_vec(), out).expect("same shape");
        let requires = self.requires(x);
        self.push(value, Op::SoftmaxLast(x), requires)
    }

    /// Layer normalization over the last axis with learned gain and bias:
    /// `y = gain * (x - mean) / sqrt(var + eps) + bias`, variance taken with
    /// the 1/d convention.
    pub fn layer_norm(
        &mut self,
        x: ValueId,
        gain: ValueId,
        bias: ValueId,
        eps: f64,
    ) -> Result<ValueId> {
        let v = &self.nodes[x.0].value;
        let d = v.last_dim();
        let (vg, vb) = (&self.nodes[gain.0].value, &self.nodes[bias.0].value);
        if vg.numel() != d || vb.numel() != d {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: v.shape().to_vec(),
                rhs: if vg.numel() != d {
                    vg.shape().to_vec()
                } else {
                    vb.shape().to_vec()
                },
            });
        }
        if eps < 0.0 || !eps.is_finite() {
            return Err(Error::invalid("layer_norm", format!("eps must be finite and >= 0, got {eps}")));
        }
        let (g, b) = (vg.data(), vb.data());
        let mut out = Vec::with_capacity(v.numel());
        for slice in v.data().chunks_exact(d) {
            let mean = slice.iter().sum::<f64>() / d as f64;
            let var = slice.iter().map(|&t| (t - mean) * (t - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                out.push(g[j] * (slice[j] - mean) * inv + b[j]);
            }
        }
        let value = DenseArray::new(v.shape().to_vec(), out)?;
        let requires = self.requires(x) || self.requires(gain) || self.requires(bias);
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, eps }, requires))
    }

    /// Multi-head scaled dot-product attention. Heads are contiguous column
    /// slices; each head scales its logits by 1/sqrt(d/heads). With a single
    /// head this is exactly softmax(q kᵀ / sqrt(d)) v.
    pub fn scaled_dot_attention(
        &mut self,
        q: ValueId,
        k: ValueId,
        v: ValueId,
        heads: usize,
    ) -> Result<ValueId> {
        let (out, _probs) = self.attention_with_probs(q, k, v, heads)?;
        Ok(out)
    }

    /// Attention that also returns the per-head probability nodes, so callers
    /// can inspect the materialized weight matrices.
    pub fn attention_with_probs(
        &mut self,
        q: ValueId,
        k: ValueId,
        v: ValueId,
        heads: usize,
    ) -> Result<(ValueId, Vec<ValueId>)> {
        let (_, dq) = self.nodes[q.0].value.dims2("scaled_dot_attention")?;
        let (lk, dk) = self.nodes[k.0].value.dims2("scaled_dot_attention")?;
        let (lv, dv) = self.nodes[v.0].value.dims2("scaled_dot_attention")?;
        if dq != dk {
            return Err(Error::ShapeMismatch {
                op: "scaled_dot_attention",
                lhs: self.nodes[q.0].value.shape().to_vec(),
                rhs: self.nodes[k.0].value.shape().to_vec(),
            });
        }
        if lk != lv {
            return Err(Error::ShapeMismatch {
                op: "scaled_dot_attention",
                lhs: self.nodes[k.0].value.shape().to_vec(),
                rhs: self.nodes[v.0].value.shape().to_vec(),
            });
        }
        if heads == 0 || dq % heads != 0 || dv % heads != 0 {
            return Err(Error::invalid(
                "scaled_dot_attention",
                format!("key dim {dq} and value dim {dv} must both divide by heads {heads}"),
            ));
        }
        let dh = dq / heads;
        let dvh = dv / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.slice_cols(q, h * dh, dh)?;
            let kh = self.slice_cols(k, h * dh, dh)?;
            let vh = self.slice_cols(v, h * dvh, dvh)?;
            let kt = self.transpose(kh)?;
            let logits = self.matmul(qh, kt)?;
            let scaled = self.scale(logits, scale);
            let p = self.softmax(scaled);
            probs.push(p);
            outs.push(self.matmul(p, vh)?);
        }
        let out = self.concat_cols(&outs)?;
        Ok((out, probs))
    }

    /// 1D convolution over the row axis with zero padding and odd kernel
    /// width, preserving length. `x` is `[len, c_in]`, `kernel` is
    /// `[width, c_in, c_out]`.
    pub fn conv1d_same(&mut self, x: ValueId, kernel: ValueId) -> Result<ValueId> {
        let v = &self.nodes[x.0].value;
        let kv = &self.nodes[kernel.0].value;
        let (len, c_in) = v.dims2("conv1d_same")?;
        if kv.rank() != 3 {
            return Err(Error::invalid(
                "conv1d_same",
                format!("kernel must be [width, c_in, c_out], got shape {:?}", kv.shape()),
            ));
        }
        let (width, kc_in, c_out) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
        if width % 2 == 0 {
            return Err(Error::invalid(
                "conv1d_same",
                format!("kernel width must be odd for same padding, got {width}"),
            ));
        }
        if kc_in != c_in {
            return Err(Error::ShapeMismatch {
                op: "conv1d_same",
                lhs: v.shape().to_vec(),
                rhs: kv.shape().to_vec(),
            });
        }
        let half = width / 2;
        let (xd, kd) = (v.data(), kv.data());
        let mut out = vec![0.0; len * c_out];
        for t in 0..len {
            for dt in 0..width {
                let s = t as isize + dt as isize - half as isize;
                if s < 0 || s >= len as isize {
                    continue;
                }
                let s = s as usize;
                for ci in 0..c_in {
                    let xv = xd[s * c_in + ci];
                    if xv == 0.0 {
                        continue;
                    }
                    let krow = &kd[(dt * c_in + ci) * c_out..(dt * c_in + ci + 1) * c_out];
                    let orow = &mut out[t * c_out..(t + 1) * c_out];
                    for co in 0..c_out {
                        orow[co] += xv * krow[co];
                    }
                }
            }
        }
        let value = DenseArray::new(vec![len, c_out], out)?;
        let requires = self.requires(x) || self.requires(kernel);
        Ok(self.push(value, Op::Conv1dSame { x, kernel }, requires))
    }

    // ── reductions and broadcasts ───────────────────────────────────────

    /// Mean over every entry, producing a `[1]` scalar.
    pub fn mean_all(&mut self, x: ValueId) -> ValueId {
        let v = &self.nodes[x.0].value;
        let mean = v.data().iter().sum::<f64>() / v.numel() as f64;
        let requires = self.requires(x);
        self.push(DenseArray::scalar(mean), Op::MeanAll(x), requires)
    }

    /// Mean squared error between two same-shaped values, as a `[1]` scalar.
    pub fn mse(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean_all(sq))
    }

    /// Column-wise mean of a rank-2 array: `[rows, d] -> [d]`.
    pub fn mean_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let v = &self.nodes[x.0].value;
        let (rows, d) = v.dims2("mean_rows")?;
        let mut out = vec![0.0; d];
        for row in v.data().chunks_exact(d) {
            for j in 0..d {
                out[j] += row[j];
            }
        }
        for o in out.iter_mut() {
            *o /= rows as f64;
        }
        let value = DenseArray::new(vec![d], out)?;
        let requires = self.requires(x);
        Ok(self.push(value, Op::MeanRows(x), requires))
    }

    fn last_axis_broadcast(
        &mut self,
        op_name: &'static str,
        x: ValueId,
        vec_id: ValueId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<ValueId> {
        let v = &self.nodes[x.0].value;
        let w = &self.nodes[vec_id.0].value;
        let d = v.last_dim();
        if w.numel() != d {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: v.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        let wd = w.data();
        let mut out = Vec::with_capacity(v.numel());
        for row in v.data().chunks_exact(d) {
            for j in 0..d {
                out.push(f(row[j], wd[j]));
            }
        }
        let value = DenseArray::new(v.shape().to_vec(), out)?;
        let requires = self.requires(x) || self.requires(vec_id);
        Ok(self.push(value, op, requires))
    }

    /// Adds a length-d vector to every slice along the last axis (bias add).
    pub fn add_last(&mut self, x: ValueId, v: ValueId) -> Result<ValueId> {
        self.last_axis_broadcast("add_last", x, v, |a, b| a + b, Op::AddLast(x, v))
    }

    /// Multiplies every slice along the last axis by a length-d vector
    /// (per-channel gain or gate).
    pub fn mul_last(&mut self, x: ValueId, v: ValueId) -> Result<ValueId> {
        self.last_axis_broadcast("mul_last", x, v, |a, b| a * b, Op::MulLast(x, v))
    }

    // ── concatenation and slicing ───────────────────────────────────────

    pub fn concat_rows(&mut self, ids: &[ValueId]) -> Result<ValueId> {
        if ids.is_empty() {
            return Err(Error::invalid("concat_rows", "no inputs"));
        }
        let (_, cols) = self.nodes[ids[0].0].value.dims2("concat_rows")?;
        let mut total_rows = 0;
        for &id in ids {
            let (r, c) = self.nodes[id.0].value.dims2("concat_rows")?;
            if c != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.nodes[ids[0].0].value.shape().to_vec(),
                    rhs: self.nodes[id.0].value.shape().to_vec(),
                });
            }
            total_rows += r;
        }
        let mut out = Vec::with_capacity(total_rows * cols);
        for &id in ids {
            out.extend_from_slice(self.nodes[id.0].value.data());
        }
        let value = DenseArray::new(vec![total_rows, cols], out)?;
        let requires = ids.iter().any(|&id| self.requires(id));
        Ok(self.push(value, Op::ConcatRows(ids.to_vec()), requires))
    }

    pub fn slice_rows(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let v = &self.nodes[x.0].value;
        let (rows, cols) = v.dims2("slice_rows")?;
        if len == 0 || start + len > rows {
            return Err(Error::invalid(
                "slice_rows",
                format!("rows {start}..{} out of bounds for {rows} rows", start + len),
            ));
        }
        let out = v.data()[start * cols..(start + len) * cols].to_vec();
        let value = DenseArray::new(vec![len, cols], out)?;
        let requires = self.requires(x);
        Ok(self.push(value, Op::SliceRows { x, start }, requires))
    }

    pub fn concat_cols(&mut self, ids: &[ValueId]) -> Result<ValueId> {
        if ids.is_empty() {
            return Err(Error::invalid("concat_cols", "no inputs"));
        }
        let (rows, _) = self.nodes[ids[0].0].value.dims2("concat_cols")?;
        let mut total_cols = 0;
        for &id in ids {
            let (r, c) = self.nodes[id.0].value.dims2("concat_cols")?;
            if r != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.nodes[ids[0].0].value.shape().to_vec(),
                    rhs: self.nodes[id.0].value.shape().to_vec(),
                });
            }
            total_cols += c;
        }
        let mut out = Vec::with_capacity(rows * total_cols);
        for i in 0..rows {
            for &id in ids {
                let v = &self.nodes[id.0].value;
                let c = v.shape()[1];
                out.extend_from_slice(&v.data()[i * c..(i + 1) * c]);
            }
        }
        let value = DenseArray::new(vec![rows, total_cols], out)?;
        let requires = ids.iter().any(|&id| self.requires(id));
        Ok(self.push(value, Op::ConcatCols(ids.to_vec()), requires))
    }

    pub fn slice_cols(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let v = &self.nodes[x.0].value;
        let (rows, cols) = v.dims2("slice_cols")?;
        if len == 0 || start + len > cols {
            return Err(Error::invalid(
                "slice_cols",
                format!("cols {start}..{} out of bounds for {cols} cols", start + len),
            ));
        }
        let d = v.data();
        let mut out = Vec::with_capacity(rows * len);
        for i in 0..rows {
            out.extend_from_slice(&d[i * cols + start..i * cols + start + len]);
        }
        let value = DenseArray::new(vec![rows, len], out)?;
        let requires = self.requires(x);
        Ok(self.push(value, Op::SliceCols { x, start }, requires))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Accumulates adjoints from `loss` (which must be a `[1]` scalar) back to
    /// every leaf reachable from it, and returns the leaf gradients. The tape
    /// is meant to be dropped afterwards.
    pub fn backward(&mut self, loss: ValueId) -> Result<Gradients> {
        let n = self.nodes.len();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!(
                    "loss must be a scalar, got shape {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            // Leaf gradients are kept; interior ones are consumed here.
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        let out = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| {
                    DenseArray::new(self.nodes[i].value.shape().to_vec(), data)
                        .expect("gradient shaped like its node")
                })
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        // Borrow rule: `grads` buffers for inputs are distinct from `g`, which
        // was taken out of the slot for node i before this call.
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, a, |ga| add_assign(ga, g));
                self.accumulate(grads, b, |gb| add_assign(gb, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, |ga| add_assign(ga, g));
                self.accumulate(grads, b, |gb| {
                    for (t, &s) in gb.iter_mut().zip(g) {
                        *t -= s;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                self.accumulate(grads, a, |ga| {
                    for ((t, &s), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *t += s * y;
                    }
                });
                self.accumulate(grads, b, |gb| {
                    for ((t, &s), &x) in gb.iter_mut().zip(g).zip(va) {
                        *t += s * x;
                    }
                });
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, x, |gx| {
                    for (t, &s) in gx.iter_mut().zip(g) {
                        *t += s * c;
                    }
                });
            }
            Op::AddScalar(x) => {
                self.accumulate(grads, x, |gx| add_assign(gx, g));
            }
            Op::MatMul(a, b) => {
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                let (ad, bd) = (va.data(), vb.data());
                self.accumulate(grads, a, |ga| {
                    // dA = dC Bᵀ
                    for i in 0..m {
                        for l in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bd[l * n + j];
                            }
                            ga[i * k + l] += acc;
                        }
                    }
                });
                self.accumulate(grads, b, |gb| {
                    // dB = Aᵀ dC
                    for l in 0..k {
                        for i in 0..m {
                            let ail = ad[i * k + l];
                            if ail == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[l * n + j] += ail * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let (c, r) = (self.nodes[i].value.shape()[0], self.nodes[i].value.shape()[1]);
                self.accumulate(grads, x, |gx| {
                    for j in 0..c {
                        for t in 0..r {
                            gx[t * c + j] += g[j * r + t];
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                self.accumulate(grads, x, |gx| add_assign(gx, g));
            }
            Op::SoftmaxLast(x) => {
                let y = self.nodes[i].value.data();
                let d = self.nodes[i].value.last_dim();
                self.accumulate(grads, x, |gx| {
                    for (slice_idx, (ys, gs)) in y.chunks_exact(d).zip(g.chunks_exact(d)).enumerate() {
                        let dot: f64 = ys.iter().zip(gs).map(|(&yv, &gv)| yv * gv).sum();
                        let base = slice_idx * d;
                        for j in 0..d {
                            gx[base + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let vx = self.nodes[x.0].value.data();
                let vg = self.nodes[gain.0].value.data();
                let d = self.nodes[x.0].value.last_dim();
                let slices = vx.len() / d;
                // Recompute per-slice statistics; cheaper than caching them on
                // the node for tensors of this size.
                let mut stats = Vec::with_capacity(slices);
                for slice in vx.chunks_exact(d) {
                    let mean = slice.iter().sum::<f64>() / d as f64;
                    let var = slice.iter().map(|&t| (t - mean) * (t - mean)).sum::<f64>() / d as f64;
                    stats.push((mean, 1.0 / (var + eps).sqrt()));
                }
                self.accumulate(grads, gain, |gg| {
                    for s in 0..slices {
                        let (mean, inv) = stats[s];
                        for j in 0..d {
                            gg[j] += g[s * d + j] * (vx[s * d + j] - mean) * inv;
                        }
                    }
                });
                self.accumulate(grads, bias, |gb| {
                    for s in 0..slices {
                        for j in 0..d {
                            gb[j] += g[s * d + j];
                        }
                    }
                });
                self.accumulate(grads, x, |gx| {
                    for s in 0..slices {
                        let (mean, inv) = stats[s];
                        let base = s * d;
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for j in 0..d {
                            let xh = (vx[base + j] - mean) * inv;
                            let dxh = g[base + j] * vg[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh;
                        }
                        let m1 = sum_dxh / d as f64;
                        let m2 = sum_dxh_xh / d as f64;
                        for j in 0..d {
                            let xh = (vx[base + j] - mean) * inv;
                            let dxh = g[base + j] * vg[j];
                            gx[base + j] += inv * (dxh - m1 - xh * m2);
                        }
                    }
                });
            }
            Op::Conv1dSame { x, kernel } => {
                let vx = &self.nodes[x.0].value;
                let vk = &self.nodes[kernel.0].value;
                let (len, c_in) = (vx.shape()[0], vx.shape()[1]);
                let (width, _, c_out) = (vk.shape()[0], vk.shape()[1], vk.shape()[2]);
                let half = width / 2;
                let (xd, kd) = (vx.data(), vk.data());
                self.accumulate(grads, x, |gx| {
                    for t in 0..len {
                        for dt in 0..width {
                            let s = t as isize + dt as isize - half as isize;
                            if s < 0 || s >= len as isize {
                                continue;
                            }
                            let s = s as usize;
                            for ci in 0..c_in {
                                let krow = &kd[(dt * c_in + ci) * c_out..(dt * c_in + ci + 1) * c_out];
                                let mut acc = 0.0;
                                for co in 0..c_out {
                                    acc += g[t * c_out + co] * krow[co];
                                }
                                gx[s * c_in + ci] += acc;
                            }
                        }
                    }
                });
                self.accumulate(grads, kernel, |gk| {
                    for t in 0..len {
                        for dt in 0..width {
                            let s = t as isize + dt as isize - half as isize;
                            if s < 0 || s >= len as isize {
                                continue;
                            }
                            let s = s as usize;
                            for ci in 0..c_in {
                                let xv = xd[s * c_in + ci];
                                if xv == 0.0 {
                                    continue;
                                }
                                for co in 0..c_out {
                                    gk[(dt * c_in + ci) * c_out + co] += xv * g[t * c_out + co];
                                }
                            }
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let vx = self.nodes[x.0].value.data();
                self.accumulate(grads, x, |gx| {
                    for (j, (&t, &s)) in vx.iter().zip(g).enumerate() {
                        gx[j] += s * gelu_prime(t);
                    }
                });
            }
            Op::MeanAll(x) => {
                let n = self.nodes[x.0].value.numel() as f64;
                let gv = g[0] / n;
                self.accumulate(grads, x, |gx| {
                    for t in gx.iter_mut() {
                        *t += gv;
                    }
                });
            }
            Op::MeanRows(x) => {
                let (rows, d) = (self.nodes[x.0].value.shape()[0], self.nodes[x.0].value.shape()[1]);
                self.accumulate(grads, x, |gx| {
                    for r in 0..rows {
                        for j in 0..d {
                            gx[r * d + j] += g[j] / rows as f64;
                        }
                    }
                });
            }
            Op::AddLast(x, v) => {
                let d = self.nodes[x.0].value.last_dim();
                self.accumulate(grads, x, |gx| add_assign(gx, g));
                self.accumulate(grads, v, |gv| {
                    for row in g.chunks_exact(d) {
                        for j in 0..d {
                            gv[j] += row[j];
                        }
                    }
                });
            }
            Op::MulLast(x, v) => {
                let d = self.nodes[x.0].value.last_dim();
                let xd = self.nodes[x.0].value.data();
                let vd = self.nodes[v.0].value.data();
                self.accumulate(grads, x, |gx| {
                    for (r, row) in g.chunks_exact(d).enumerate() {
                        for j in 0..d {
                            gx[r * d + j] += row[j] * vd[j];
                        }
                    }
                });
                self.accumulate(grads, v, |gv| {
                    for (r, row) in g.chunks_exact(d).enumerate() {
                        for j in 0..d {
                            gv[j] += row[j] * xd[r * d + j];
                        }
                    }
                });
            }
            Op::ConcatRows(ids) => {
                let cols = self.nodes[i].value.shape()[1];
                let mut offset = 0;
                for id in ids {
                    let r = self.nodes[id.0].value.shape()[0];
                    let block = &g[offset * cols..(offset + r) * cols];
                    self.accumulate(grads, id, |gi| add_assign(gi, block));
                    offset += r;
                }
            }
            Op::SliceRows { x, start } => {
                let cols = self.nodes[i].value.shape()[1];
                let len = self.nodes[i].value.shape()[0];
                self.accumulate(grads, x, |gx| {
                    let dst = &mut gx[start * cols..(start + len) * cols];
                    add_assign(dst, g);
                });
            }
            Op::ConcatCols(ids) => {
                let rows = self.nodes[i].value.shape()[0];
                let total = self.nodes[i].value.shape()[1];
                let mut offset = 0;
                for id in ids {
                    let c = self.nodes[id.0].value.shape()[1];
                    self.accumulate(grads, id, |gi| {
                        for r in 0..rows {
                            for j in 0..c {
                                gi[r * c + j] += g[r * total + offset + j];
                            }
                        }
                    });
                    offset += c;
                }
            }
            Op::SliceCols { x, start } => {
                let rows = self.nodes[i].value.shape()[0];
                let len = self.nodes[i].value.shape()[1];
                let cols = self.nodes[x.0].value.shape()[1];
                self.accumulate(grads, x, |gx| {
                    for r in 0..rows {
                        for j in 0..len {
                            gx[r * cols + start + j] += g[r * len + j];
                        }
                    }
                });
            }
        }
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Vec<f64>>],
        id: ValueId,
        add: impl FnOnce(&mut Vec<f64>),
    ) {
        if !self.nodes[id.0].requires {
            return;
        }
        let buf = grads[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].value.numel()]);
        add(buf);
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (t, &s) in dst.iter_mut().zip(src) {
        *t += s;
    }
}

/// Tanh-form GELU: 0.5 x (1 + tanh(sqrt(2/π) (x + 0.044715 x³))).
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * x * x)
}
