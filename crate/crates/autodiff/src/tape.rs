use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{broadcast_index, broadcast_shape};
use crate::{AutodiffError, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add {
        a: Var,
        b: Var,
        ia: Vec<usize>,
        ib: Vec<usize>,
    },
    Mul {
        a: Var,
        b: Var,
        ia: Vec<usize>,
        ib: Vec<usize>,
    },
    Scale {
        a: Var,
        c: f64,
    },
    AddScalar {
        a: Var,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Transpose {
        a: Var,
    },
    Reshape {
        a: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Slice {
        a: Var,
        start: usize,
    },
    Relu {
        a: Var,
    },
    Sigmoid {
        a: Var,
    },
    Softmax {
        a: Var,
    },
    Dropout {
        a: Var,
        factors: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Mean {
        a: Var,
        axis: usize,
    },
    Sum {
        a: Var,
    },
    Max {
        a: Var,
        argmax: Vec<usize>,
    },
    Unfold {
        a: Var,
        width: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of tensor operations, replayed in reverse by [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

/// Split a shape into (outer, axis, inner) extents around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_dims(op: &'static str, a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    let mismatch = || AutodiffError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(mismatch());
    }
    let batch: usize = a[..a.len() - 2].iter().product();
    let shared = b.len() == 2;
    if !shared && b[..b.len() - 2] != a[..a.len() - 2] {
        return Err(mismatch());
    }
    Ok((batch, m, k, n, shared))
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

    /// Drop every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf with no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v).to_vec(), g.clone()).expect("grad matches value shape"))
    }

    fn elementwise(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, Vec<usize>, Vec<usize>)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = broadcast_shape(sa, sb).ok_or_else(|| AutodiffError::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let ia = broadcast_index(sa, &out);
        let ib = broadcast_index(sb, &out);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data = ia.iter().zip(&ib).map(|(&i, &j)| f(da[i], db[j])).collect();
        Ok((Tensor::new(out, data)?, ia, ib))
    }

    /// Elementwise sum with right-aligned broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, ia, ib) = self.elementwise("add", a, b, |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add { a, b, ia, ib }, rg))
    }

    /// Elementwise product with right-aligned broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, ia, ib) = self.elementwise("mul", a, b, |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b, ia, ib }, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|x| *x *= c);
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale { a, c }, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|x| *x += c);
        let rg = self.needs(&[a]);
        self.push(value, Op::AddScalar { a }, rg)
    }

    /// `c - a`, elementwise.
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, c)
    }

    /// Batched matrix product. `a` is `[.., m, k]`; `b` is either `[k, n]`
    /// (shared across the batch) or `[.., k, n]` with the same batch dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (batch, m, k, n, shared) = matmul_dims("matmul", sa, sb)?;
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([m, n]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let ao = bi * m * k;
            let bo = if shared { 0 } else { bi * k * n };
            let co = bi * m * n;
            for i in 0..m {
                let crow = &mut out[co + i * n..co + (i + 1) * n];
                for p in 0..k {
                    let av = da[ao + i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &db[bo + p * n..bo + (p + 1) * n];
                    for (c, &bv) in crow.iter_mut().zip(brow) {
                        *c += av * bv;
                    }
                }
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b }, rg))
    }

    /// Swap the last two dimensions.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() < 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "transpose",
                lhs: sa,
                rhs: vec![],
            });
        }
        let r = sa.len();
        let (m, n) = (sa[r - 2], sa[r - 1]);
        let batch = sa[..r - 2].iter().product::<usize>();
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        transpose_into(src, &mut out, batch, m, n);
        let mut shape = sa;
        shape.swap(r - 2, r - 1);
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Transpose { a }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Reshape { a }, rg))
    }

    /// Concatenate along the last dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let rg = self.needs(parts);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Columns `start..start + len` of the last dimension.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let w = *sa.last().unwrap();
        if len == 0 || start + len > w {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice",
                lhs: sa,
                rhs: vec![start, len],
            });
        }
        let rows = self.value(a).len() / w;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * w + start..r * w + start + len]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = len;
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { a, start }, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
        let rg = self.needs(&[a]);
        self.push(value, Op::Relu { a }, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|x| *x = sigmoid(*x));
        let rg = self.needs(&[a]);
        self.push(value, Op::Sigmoid { a }, rg)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, None)
    }

    /// Softmax over the last dimension where `allowed[i] == false` entries are
    /// treated as `-inf` logits. A row with no allowed entry is an error.
    pub fn masked_softmax(&mut self, a: Var, allowed: &[bool]) -> Result<Var> {
        if allowed.len() != self.value(a).len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "masked_softmax",
                lhs: self.shape(a).to_vec(),
                rhs: vec![allowed.len()],
            });
        }
        self.softmax_impl(a, Some(allowed))
    }

    fn softmax_impl(&mut self, a: Var, allowed: Option<&[bool]>) -> Result<Var> {
        let x = self.value(a);
        let w = x.last_dim();
        let mut out = vec![0.0; x.len()];
        for (r, (xr, yr)) in x.data().chunks(w).zip(out.chunks_mut(w)).enumerate() {
            let ok = |j: usize| allowed.is_none_or(|m| m[r * w + j]);
            if !(0..w).any(ok) {
                return Err(AutodiffError::AllMasked { row: r });
            }
            if (0..w).any(|j| ok(j) && !xr[j].is_finite()) {
                return Err(AutodiffError::NonFinite { op: "softmax" });
            }
            let max = (0..w)
                .filter(|&j| ok(j))
                .map(|j| xr[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..w {
                if ok(j) {
                    yr[j] = (xr[j] - max).exp();
                    z += yr[j];
                }
            }
            yr.iter_mut().for_each(|y| *y /= z);
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Softmax { a }, rg))
    }

    /// Inverted dropout. Identity when `train` is false or `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, seed: u64, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - p);
        let factors: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut value = self.value(a).clone();
        value
            .data_mut()
            .iter_mut()
            .zip(&factors)
            .for_each(|(x, f)| *x *= f);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Dropout { a, factors }, rg))
    }

    /// Gather rows of a `[V, d]` table; output shape is `ids_shape ++ [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 || ids.len() != ids_shape.iter().product::<usize>() {
            return Err(AutodiffError::ShapeMismatch {
                op: "embedding",
                lhs: st,
                rhs: ids_shape.to_vec(),
            });
        }
        let (rows, d) = (st[0], st[1]);
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(AutodiffError::IndexOutOfRange { index: id, bound: rows });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let rg = self.needs(&[table]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Mean over `axis`; the axis is removed from the shape (rank-1 inputs
    /// reduce to shape `[1]`).
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(AutodiffError::InvalidArgument(format!(
                "mean axis {axis} out of range for shape {sa:?}"
            )));
        }
        let (outer, n, inner) = split_axis(&sa, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += src[(o * n + k) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|x| *x /= n as f64);
        let mut shape = sa;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mean { a, axis }, rg))
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum { a }, rg)
    }

    /// Max over `axis` (first index wins ties); the axis is removed.
    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(AutodiffError::InvalidArgument(format!(
                "max axis {axis} out of range for shape {sa:?}"
            )));
        }
        let (outer, n, inner) = split_axis(&sa, axis);
        let src = self.value(a).data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let slot = o * inner + i;
                for k in 0..n {
                    let idx = (o * n + k) * inner + i;
                    if src[idx] > out[slot] || k == 0 {
                        out[slot] = src[idx];
                        argmax[slot] = idx;
                    }
                }
            }
        }
        let mut shape = sa;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Max { a, argmax }, rg))
    }

    /// Sliding windows over a `[B, L, d]` sequence: output `[B, L - w + 1, w * d]`
    /// where row `t` is the concatenation of positions `t..t + w`.
    pub fn unfold(&mut self, a: Var, width: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 3 || width == 0 || sa[1] < width {
            return Err(AutodiffError::ShapeMismatch {
                op: "unfold",
                lhs: sa,
                rhs: vec![width],
            });
        }
        let (b, l, d) = (sa[0], sa[1], sa[2]);
        let t = l - width + 1;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(b * t * width * d);
        for bi in 0..b {
            for ti in 0..t {
                let start = (bi * l + ti) * d;
                out.extend_from_slice(&src[start..start + width * d]);
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(
            Tensor::new(vec![b, t, width * d], out)?,
            Op::Unfold { a, width },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits)`;
    /// logits are `[B, C]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross_entropy",
                lhs: s,
                rhs: vec![targets.len()],
            });
        }
        let (b, c) = (s[0], s[1]);
        let x = self.value(logits).data();
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(AutodiffError::IndexOutOfRange { index: t, bound: c });
            }
            let row = &x[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + z.ln();
            loss += lse - row[t];
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(AutodiffError::NonFinite { op: "cross_entropy" });
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`, populating gradients of every node
    /// that depends on a tracked leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarBackward {
                shape: self.shape(loss).to_vec(),
            });
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add { a, b, ia, ib } => {
                acc(*a, &mut |ga| ia.iter().zip(g).for_each(|(&k, &gv)| ga[k] += gv));
                acc(*b, &mut |gb| ib.iter().zip(g).for_each(|(&k, &gv)| gb[k] += gv));
            }
            Op::Mul { a, b, ia, ib } => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for (j, &gv) in g.iter().enumerate() {
                        ga[ia[j]] += gv * db[ib[j]];
                    }
                });
                acc(*b, &mut |gb| {
                    for (j, &gv) in g.iter().enumerate() {
                        gb[ib[j]] += gv * da[ia[j]];
                    }
                });
            }
            Op::Scale { a, c } => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, gv)| *x += c * gv)),
            Op::AddScalar { a } | Op::Reshape { a } => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, gv)| *x += gv))
            }
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (batch, m, k, n, shared) = matmul_dims("matmul", sa, sb).expect("checked in forward");
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                // dA = dC · Bᵀ
                acc(*a, &mut |ga| {
                    for bi in 0..batch {
                        let bo = if shared { 0 } else { bi * k * n };
                        for r in 0..m {
                            let grow = &g[bi * m * n + r * n..bi * m * n + (r + 1) * n];
                            for p in 0..k {
                                let brow = &db[bo + p * n..bo + (p + 1) * n];
                                let dot: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                                ga[bi * m * k + r * k + p] += dot;
                            }
                        }
                    }
                });
                // dB = Aᵀ · dC
                acc(*b, &mut |gb| {
                    for bi in 0..batch {
                        let bo = if shared { 0 } else { bi * k * n };
                        for r in 0..m {
                            let grow = &g[bi * m * n + r * n..bi * m * n + (r + 1) * n];
                            for p in 0..k {
                                let av = da[bi * m * k + r * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                let gbrow = &mut gb[bo + p * n..bo + (p + 1) * n];
                                gbrow.iter_mut().zip(grow).for_each(|(x, gv)| *x += av * gv);
                            }
                        }
                    }
                });
            }
            Op::Transpose { a } => {
                let s = node.value.shape();
                let r = s.len();
                // output is [.., n, m]; the gradient goes back through the inverse swap
                let (n, m) = (s[r - 2], s[r - 1]);
                let batch = s[..r - 2].iter().product::<usize>();
                let mut back = vec![0.0; g.len()];
                transpose_into(g, &mut back, batch, n, m);
                acc(*a, &mut |ga| ga.iter_mut().zip(&back).for_each(|(x, gv)| *x += gv));
            }
            Op::Concat { parts } => {
                let total = node.value.last_dim();
                let rows = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    acc(p, &mut |gp| {
                        for r in 0..rows {
                            for j in 0..w {
                                gp[r * w + j] += g[r * total + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::Slice { a, start } => {
                let len = node.value.last_dim();
                let w = self.value(*a).last_dim();
                let rows = g.len() / len;
                acc(*a, &mut |ga| {
                    for r in 0..rows {
                        for j in 0..len {
                            ga[r * w + start + j] += g[r * len + j];
                        }
                    }
                });
            }
            Op::Relu { a } => {
                let x = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for j in 0..g.len() {
                        if x[j] > 0.0 {
                            ga[j] += g[j];
                        }
                    }
                });
            }
            Op::Sigmoid { a } => acc(*a, &mut |ga| {
                for j in 0..g.len() {
                    ga[j] += g[j] * y[j] * (1.0 - y[j]);
                }
            }),
            Op::Softmax { a } => {
                let w = node.value.last_dim();
                acc(*a, &mut |ga| {
                    for ((gr, yr), gar) in g.chunks(w).zip(y.chunks(w)).zip(ga.chunks_mut(w)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for j in 0..w {
                            gar[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Dropout { a, factors } => acc(*a, &mut |ga| {
                for j in 0..g.len() {
                    ga[j] += g[j] * factors[j];
                }
            }),
            Op::Embedding { table, ids } => {
                let d = self.value(*table).last_dim();
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += g[r * d + j];
                        }
                    }
                });
            }
            Op::Mean { a, axis } => {
                let (outer, n, inner) = split_axis(self.shape(*a), *axis);
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        for k in 0..n {
                            for i in 0..inner {
                                ga[(o * n + k) * inner + i] += g[o * inner + i] / n as f64;
                            }
                        }
                    }
                });
            }
            Op::Sum { a } => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Max { a, argmax } => acc(*a, &mut |ga| {
                for (j, &src) in argmax.iter().enumerate() {
                    ga[src] += g[j];
                }
            }),
            Op::Unfold { a, width } => {
                let s = self.shape(*a);
                let (b, l, d) = (s[0], s[1], s[2]);
                let t = l - width + 1;
                let row = width * d;
                acc(*a, &mut |ga| {
                    for bi in 0..b {
                        for ti in 0..t {
                            let start = (bi * l + ti) * d;
                            let grow = &g[(bi * t + ti) * row..(bi * t + ti + 1) * row];
                            ga[start..start + row]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(x, gv)| *x += gv);
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = self.value(*logits).last_dim();
                let scale = g[0] / targets.len() as f64;
                acc(*logits, &mut |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
        }
    }
}

fn transpose_into(src: &[f64], dst: &mut [f64], batch: usize, m: usize, n: usize) {
    for bi in 0..batch {
        let o = bi * m * n;
        for i in 0..m {
            for j in 0..n {
                dst[o + j * m + i] = src[o + i * n + j];
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_uniform_and_overflow() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = tape.constant(t(&[2], &[1000.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0]);
    }

    #[test]
    fn masked_softmax_all_masked_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let err = tape.masked_softmax(x, &[true, false, false, false]).unwrap_err();
        assert!(matches!(err, AutodiffError::AllMasked { row: 1 }));
    }

    #[test]
    fn nan_logits_are_non_finite_not_masked() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[f64::NAN, f64::NAN]));
        let err = tape.masked_softmax(x, &[true, true]).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFinite { op: "softmax" }));
    }

    #[test]
    fn matmul_hand_fixture() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.constant(t(&[3, 2], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 4]);

        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0, 6.0, 1.0]);
    }

    #[test]
    fn backward_rules() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(
            tape.backward(x),
            Err(AutodiffError::NonScalarBackward { .. })
        ));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(AutodiffError::BackwardTwice)));
        tape.reset();
        assert!(tape.is_empty());
    }

    #[test]
    fn dropout_identity_cases() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(tape.dropout(x, 0.5, 1, false).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.0, 1, true).unwrap(), x);
        let y = tape.dropout(x, 0.5, 1, true).unwrap();
        for (a, b) in tape.value(x).data().iter().zip(tape.value(y).data()) {
            assert!(*b == 0.0 || *b == 2.0 * a);
        }
        assert!(tape.dropout(x, 1.0, 1, true).is_err());
    }

    #[test]
    fn embedding_out_of_range() {
        let mut tape = Tape::new();
        let table = tape.param(Tensor::zeros(&[3, 2]));
        assert!(matches!(
            tape.embedding(table, &[0, 3], &[2]),
            Err(AutodiffError::IndexOutOfRange { index: 3, bound: 3 })
        ));
    }

    #[test]
    fn max_ties_take_first_index() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 3, 1], &[2.0, 2.0, 1.0]));
        let m = tape.max(x, 1).unwrap();
        let s = tape.sum(m);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }
}
