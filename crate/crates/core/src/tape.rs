//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends a node holding its forward value. When at least
//! one input needs a gradient the node also keeps its backward rule, and
//! [`Tape::backward`] replays those rules from the loss towards the leaves.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use crate::error::{contract, Error, Result};
use crate::kernels;
use crate::tensor::{as_matrix, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

/// Primitive kinds, mirrored one-to-one by the `Tape` methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    MatMul,
    Add,
    Mul,
    Scale,
    Sum,
    SoftmaxRows,
    LayerNorm,
    Gelu,
    Sigmoid,
    EmbedLookup,
    ConcatRows,
    SliceRows,
    CrossEntropyRows,
    Mse,
    CausalAttention,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize, broadcast: bool },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: f32 },
    Sum { x: usize },
    SoftmaxRows { x: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, stats: Vec<(f32, f32)> },
    Gelu { x: usize },
    Sigmoid { x: usize },
    EmbedLookup { table: usize, ids: Vec<usize> },
    ConcatRows { a: usize, b: usize },
    SliceRows { x: usize, start: usize },
    CrossEntropyRows { logits: usize, targets: Vec<usize> },
    Mse { pred: usize, target: Vec<f32> },
    CausalAttention { qkv: usize, heads: usize, probs: Vec<f32> },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f32>,
    needs_grad: bool,
    op: Op,
}

/// Ordered record of primitive applications.
#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    grad_enabled: bool,
    #[cfg(test)]
    corrupt_gelu: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Vec<f32>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient for `var`; zeros when `var` has no path to the loss.
    pub fn wrt(&self, var: Var) -> Vec<f32> {
        assert_eq!(var.tape, self.tape, "variable from a different tape");
        match &self.grads[var.index()] {
            Some(g) => g.clone(),
            None => vec![0.0; self.lens[var.index()]],
        }
    }

    pub fn get(&self, var: Var) -> Option<&[f32]> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index()).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `var` into `tensor.grad`.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor) {
        let Some(g) = self.get(var) else {
            if tensor.grad.is_none() {
                tensor.zero_grad();
            }
            return;
        };
        let dst = tensor.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (d, s) in dst.iter_mut().zip(g) {
            *d += s;
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, len: usize) -> &mut Vec<f32> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grad_enabled: true,
            #[cfg(test)]
            corrupt_gelu: false,
        }
    }

    /// A tape that never records backward rules, whatever its leaves say.
    pub fn inference() -> Self {
        let mut t = Self::new();
        t.grad_enabled = false;
        t
    }

    #[cfg(test)]
    pub(crate) fn with_corrupted_gelu() -> Self {
        let mut t = Self::new();
        t.corrupt_gelu = true;
        t
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes carrying a backward rule.
    pub fn recorded_len(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.needs_grad && !matches!(n.op, Op::Leaf))
            .count()
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn scalar(&self, v: Var) -> f32 {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.clone()).expect("node shape matches value")
    }

    pub fn owns(&self, v: Var) -> bool {
        v.tape == self.id && v.index() < self.nodes.len()
    }

    fn node(&self, v: Var) -> &Node {
        assert!(self.owns(v), "variable does not belong to this tape");
        &self.nodes[v.index()]
    }

    fn check(&self, v: Var) -> Result<usize> {
        if self.owns(v) {
            Ok(v.index())
        } else {
            Err(contract!("variable does not belong to this tape"))
        }
    }

    fn dims(&self, i: usize) -> (usize, usize) {
        as_matrix(&self.nodes[i].shape)
    }

    fn push(
        &mut self,
        kind: PrimitiveKind,
        shape: Vec<usize>,
        value: Vec<f32>,
        inputs: &[usize],
        op: Op,
    ) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow(kind_name(kind)));
        }
        let needs_grad = self.grad_enabled && inputs.iter().any(|&i| self.nodes[i].needs_grad);
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            shape,
            value,
            needs_grad,
            op,
        });
        Ok(Var {
            tape: self.id,
            idx: (self.nodes.len() - 1) as u32,
        })
    }

    /// Records a tensor as a leaf; it needs a gradient iff `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.leaf_as(t, t.shape()).expect("own shape always fits")
    }

    /// Records a tensor as a leaf viewed with a different shape.
    pub fn leaf_as(&mut self, t: &Tensor, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != t.numel() {
            return Err(contract!("cannot view {:?} as {:?}", t.shape(), shape));
        }
        self.nodes.push(Node {
            shape: shape.to_vec(),
            value: t.data.clone(),
            needs_grad: self.grad_enabled && t.requires_grad,
            op: Op::Leaf,
        });
        Ok(Var {
            tape: self.id,
            idx: (self.nodes.len() - 1) as u32,
        })
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f32>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    /// `[m × k] · [k × n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.dims(ai);
        let (k2, n) = self.dims(bi);
        if k != k2 || self.nodes[bi].shape.len() != 2 {
            return Err(contract!(
                "matmul {:?} x {:?}",
                self.nodes[ai].shape,
                self.nodes[bi].shape
            ));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(&self.nodes[ai].value, m, k, &self.nodes[bi].value, n, &mut out);
        self.push(
            PrimitiveKind::MatMul,
            vec![m, n],
            out,
            &[ai, bi],
            Op::MatMul { a: ai, b: bi },
        )
    }

    /// Elementwise sum; `b` may also be a single row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (m, n) = self.dims(ai);
        let (bm, bn) = self.dims(bi);
        let broadcast = if self.nodes[ai].shape == self.nodes[bi].shape {
            false
        } else if bm == 1 && bn == n && self.nodes[bi].shape.len() == 1 {
            true
        } else {
            return Err(contract!(
                "add {:?} + {:?}",
                self.nodes[ai].shape,
                self.nodes[bi].shape
            ));
        };
        let av = &self.nodes[ai].value;
        let bv = &self.nodes[bi].value;
        let out: Vec<f32> = if broadcast {
            (0..m * n).map(|i| av[i] + bv[i % n]).collect()
        } else {
            av.iter().zip(bv).map(|(x, y)| x + y).collect()
        };
        let shape = self.nodes[ai].shape.clone();
        self.push(
            PrimitiveKind::Add,
            shape,
            out,
            &[ai, bi],
            Op::Add { a: ai, b: bi, broadcast },
        )
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        if self.nodes[ai].shape != self.nodes[bi].shape {
            return Err(contract!(
                "mul {:?} * {:?}",
                self.nodes[ai].shape,
                self.nodes[bi].shape
            ));
        }
        let out = self.nodes[ai]
            .value
            .iter()
            .zip(&self.nodes[bi].value)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[ai].shape.clone();
        self.push(PrimitiveKind::Mul, shape, out, &[ai, bi], Op::Mul { a: ai, b: bi })
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Result<Var> {
        let xi = self.check(x)?;
        let out = self.nodes[xi].value.iter().map(|v| v * c).collect();
        let shape = self.nodes[xi].shape.clone();
        self.push(PrimitiveKind::Scale, shape, out, &[xi], Op::Scale { x: xi, c })
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let s: f32 = self.nodes[xi].value.iter().sum();
        self.push(PrimitiveKind::Sum, vec![1], vec![s], &[xi], Op::Sum { x: xi })
    }

    /// `Σ w_i x_i` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f32]) -> Result<Var> {
        let xi = self.check(x)?;
        let shape = self.nodes[xi].shape.clone();
        let w = self.constant(&shape, weights.to_vec())?;
        let p = self.mul(x, w)?;
        self.sum(p)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let (_, n) = self.dims(xi);
        let mut out = self.nodes[xi].value.clone();
        if n > 0 {
            for row in out.chunks_mut(n) {
                kernels::softmax_in_place(row);
            }
        }
        let shape = self.nodes[xi].shape.clone();
        self.push(PrimitiveKind::SoftmaxRows, shape, out, &[xi], Op::SoftmaxRows { x: xi })
    }

    /// Row-wise layer normalization with learned `gamma`, `beta` of width `n`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xi, gi, bi) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let (m, n) = self.dims(xi);
        if self.nodes[gi].value.len() != n || self.nodes[bi].value.len() != n || n == 0 {
            return Err(contract!(
                "layer_norm over width {} with gamma {:?} beta {:?}",
                n,
                self.nodes[gi].shape,
                self.nodes[bi].shape
            ));
        }
        let mut out = vec![0.0; m * n];
        let mut stats = Vec::with_capacity(m);
        {
            let (xv, gv, bv) = (
                &self.nodes[xi].value,
                &self.nodes[gi].value,
                &self.nodes[bi].value,
            );
            for r in 0..m {
                stats.push(kernels::layer_norm_row(
                    &xv[r * n..(r + 1) * n],
                    gv,
                    bv,
                    &mut out[r * n..(r + 1) * n],
                ));
            }
        }
        let shape = self.nodes[xi].shape.clone();
        self.push(
            PrimitiveKind::LayerNorm,
            shape,
            out,
            &[xi, gi, bi],
            Op::LayerNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                stats,
            },
        )
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let out = self.nodes[xi].value.iter().map(|&v| kernels::gelu(v)).collect();
        let shape = self.nodes[xi].shape.clone();
        self.push(PrimitiveKind::Gelu, shape, out, &[xi], Op::Gelu { x: xi })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let out = self.nodes[xi].value.iter().map(|&v| kernels::sigmoid(v)).collect();
        let shape = self.nodes[xi].shape.clone();
        self.push(PrimitiveKind::Sigmoid, shape, out, &[xi], Op::Sigmoid { x: xi })
    }

    /// Gathers rows of `table` (`[V × d]`) for each id.
    pub fn embed_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let ti = self.check(table)?;
        let (v, d) = self.dims(ti);
        if self.nodes[ti].shape.len() != 2 {
            return Err(contract!("embedding table must be rank 2"));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    what: "embedding row",
                    index: id,
                    bound: v,
                });
            }
            out.extend_from_slice(&self.nodes[ti].value[id * d..(id + 1) * d]);
        }
        self.push(
            PrimitiveKind::EmbedLookup,
            vec![ids.len(), d],
            out,
            &[ti],
            Op::EmbedLookup {
                table: ti,
                ids: ids.to_vec(),
            },
        )
    }

    /// Stacks `b` below `a`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (am, an) = self.dims(ai);
        let (bm, bn) = self.dims(bi);
        if an != bn {
            return Err(contract!("concat_rows width {} vs {}", an, bn));
        }
        let mut out = self.nodes[ai].value.clone();
        out.extend_from_slice(&self.nodes[bi].value);
        self.push(
            PrimitiveKind::ConcatRows,
            vec![am + bm, an],
            out,
            &[ai, bi],
            Op::ConcatRows { a: ai, b: bi },
        )
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let (m, n) = self.dims(xi);
        if start > end || end > m {
            return Err(contract!("slice_rows {}..{} of {} rows", start, end, m));
        }
        let out = self.nodes[xi].value[start * n..end * n].to_vec();
        self.push(
            PrimitiveKind::SliceRows,
            vec![end - start, n],
            out,
            &[xi],
            Op::SliceRows { x: xi, start },
        )
    }

    /// Per-row `-log softmax(logits)[target]`, shape `[rows]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let li = self.check(logits)?;
        let (m, n) = self.dims(li);
        if targets.len() != m {
            return Err(contract!("{} targets for {} rows", targets.len(), m));
        }
        let mut out = Vec::with_capacity(m);
        for (r, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(Error::Index {
                    what: "cross-entropy target",
                    index: t,
                    bound: n,
                });
            }
            let row = &self.nodes[li].value[r * n..(r + 1) * n];
            out.push(kernels::log_sum_exp(row) - row[t]);
        }
        self.push(
            PrimitiveKind::CrossEntropyRows,
            vec![m],
            out,
            &[li],
            Op::CrossEntropyRows {
                logits: li,
                targets: targets.to_vec(),
            },
        )
    }

    /// Mean squared error against constant targets, shape `[1]`.
    pub fn mse(&mut self, pred: Var, target: &[f32]) -> Result<Var> {
        let pi = self.check(pred)?;
        let p = &self.nodes[pi].value;
        if p.len() != target.len() || p.is_empty() {
            return Err(contract!("mse over {} predictions and {} targets", p.len(), target.len()));
        }
        let n = p.len() as f32;
        let s = p
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f32>()
            / n;
        self.push(
            PrimitiveKind::Mse,
            vec![1],
            vec![s],
            &[pi],
            Op::Mse {
                pred: pi,
                target: target.to_vec(),
            },
        )
    }

    /// Multi-head causal self-attention over packed `[T × 3d]` projections.
    pub fn causal_attention(&mut self, qkv: Var, heads: usize) -> Result<Var> {
        let qi = self.check(qkv)?;
        let (t, w) = self.dims(qi);
        if heads == 0 || w % 3 != 0 || (w / 3) % heads != 0 {
            return Err(contract!("attention width {} with {} heads", w, heads));
        }
        let d = w / 3;
        let mut out = vec![0.0; t * d];
        let mut probs = vec![0.0; heads * t * (t + 1) / 2];
        let mut off = 0;
        for i in 0..t {
            let len = heads * (i + 1);
            kernels::attend_row(
                &self.nodes[qi].value,
                d,
                heads,
                i,
                &mut probs[off..off + len],
                &mut out[i * d..(i + 1) * d],
            );
            off += len;
        }
        self.push(
            PrimitiveKind::CausalAttention,
            vec![t, d],
            out,
            &[qi],
            Op::CausalAttention {
                qkv: qi,
                heads,
                probs,
            },
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.owns(loss) {
            return Err(contract!("loss was not produced on this tape"));
        }
        let li = loss.index();
        if self.nodes[li].value.len() != 1 {
            return Err(contract!(
                "loss must be scalar, got shape {:?}",
                self.nodes[li].shape
            ));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        let lens: Vec<usize> = self.nodes.iter().map(|n| n.value.len()).collect();
        if self.nodes[li].needs_grad {
            grads[li] = Some(vec![1.0]);
        }
        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads, &lens);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            lens,
        })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn backward_node(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>], lens: &[usize]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.dims(*a);
                let (_, n) = self.dims(*b);
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                if self.wants(*a) {
                    let da = accumulate(&mut grads[*a], lens[*a]);
                    for r in 0..m {
                        let g_row = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            da[r * k + p] += kernels::dot(g_row, &bv[p * n..(p + 1) * n]);
                        }
                    }
                }
                if self.wants(*b) {
                    let db = accumulate(&mut grads[*b], lens[*b]);
                    for r in 0..m {
                        let g_row = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let a_rp = av[r * k + p];
                            if a_rp == 0.0 {
                                continue;
                            }
                            for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                                *d += a_rp * gv;
                            }
                        }
                    }
                }
            }
            Op::Add { a, b, broadcast } => {
                if self.wants(*a) {
                    let da = accumulate(&mut grads[*a], lens[*a]);
                    for (d, gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if self.wants(*b) {
                    let db = accumulate(&mut grads[*b], lens[*b]);
                    if *broadcast {
                        let n = db.len();
                        for row in g.chunks(n) {
                            for (d, gv) in db.iter_mut().zip(row) {
                                *d += gv;
                            }
                        }
                    } else {
                        for (d, gv) in db.iter_mut().zip(g) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                if self.wants(*a) {
                    let da = accumulate(&mut grads[*a], lens[*a]);
                    for ((d, gv), y) in da.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                }
                if self.wants(*b) {
                    let db = accumulate(&mut grads[*b], lens[*b]);
                    for ((d, gv), x) in db.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                }
            }
            Op::Scale { x, c } => {
                let dx = accumulate(&mut grads[*x], lens[*x]);
                for (d, gv) in dx.iter_mut().zip(g) {
                    *d += c * gv;
                }
            }
            Op::Sum { x } => {
                let dx = accumulate(&mut grads[*x], lens[*x]);
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }
            Op::SoftmaxRows { x } => {
                let (_, n) = self.dims(*x);
                let y = &node.value;
                let dx = accumulate(&mut grads[*x], lens[*x]);
                for ((dr, yr), gr) in dx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                    let s = kernels::dot(gr, yr);
                    for j in 0..n {
                        dr[j] += yr[j] * (gr[j] - s);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            } => {
                let (m, n) = self.dims(*x);
                let xv = &self.nodes[*x].value;
                let gv = &self.nodes[*gamma].value;
                let mut xhat = vec![0.0f32; n];
                let mut dxhat = vec![0.0f32; n];
                for r in 0..m {
                    let (mean, rstd) = stats[r];
                    let xr = &xv[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    for j in 0..n {
                        xhat[j] = (xr[j] - mean) * rstd;
                        dxhat[j] = gr[j] * gv[j];
                    }
                    if self.wants(*gamma) {
                        let dg = accumulate(&mut grads[*gamma], lens[*gamma]);
                        for j in 0..n {
                            dg[j] += gr[j] * xhat[j];
                        }
                    }
                    if self.wants(*beta) {
                        let db = accumulate(&mut grads[*beta], lens[*beta]);
                        for j in 0..n {
                            db[j] += gr[j];
                        }
                    }
                    if self.wants(*x) {
                        let sum_d: f32 = dxhat.iter().sum();
                        let sum_dx: f32 = kernels::dot(&dxhat, &xhat);
                        let nf = n as f32;
                        let dx = accumulate(&mut grads[*x], lens[*x]);
                        for j in 0..n {
                            dx[r * n + j] +=
                                rstd / nf * (nf * dxhat[j] - sum_d - xhat[j] * sum_dx);
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                let xv = &self.nodes[*x].value;
                #[cfg(test)]
                let corrupt = self.corrupt_gelu;
                #[cfg(not(test))]
                let corrupt = false;
                let dx = accumulate(&mut grads[*x], lens[*x]);
                for ((d, gv), &xx) in dx.iter_mut().zip(g).zip(xv) {
                    let local = if corrupt {
                        kernels::gelu_grad(xx) * 1.5 + 0.1
                    } else {
                        kernels::gelu_grad(xx)
                    };
                    *d += gv * local;
                }
            }
            Op::Sigmoid { x } => {
                let y = &node.value;
                let dx = accumulate(&mut grads[*x], lens[*x]);
                for ((d, gv), yy) in dx.iter_mut().zip(g).zip(y) {
                    *d += gv * yy * (1.0 - yy);
                }
            }
            Op::EmbedLookup { table, ids } => {
                let (_, d) = self.dims(*table);
                let dt = accumulate(&mut grads[*table], lens[*table]);
                for (r, &id) in ids.iter().enumerate() {
                    for (dd, gv) in dt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *dd += gv;
                    }
                }
            }
            Op::ConcatRows { a, b } => {
                let split = lens[*a];
                if self.wants(*a) {
                    let da = accumulate(&mut grads[*a], lens[*a]);
                    for (d, gv) in da.iter_mut().zip(&g[..split]) {
                        *d += gv;
                    }
                }
                if self.wants(*b) {
                    let db = accumulate(&mut grads[*b], lens[*b]);
                    for (d, gv) in db.iter_mut().zip(&g[split..]) {
                        *d += gv;
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let (_, n) = self.dims(*x);
                let dx = accumulate(&mut grads[*x], lens[*x]);
                for (d, gv) in dx[start * n..start * n + g.len()].iter_mut().zip(g) {
                    *d += gv;
                }
            }
            Op::CrossEntropyRows { logits, targets } => {
                let (_, n) = self.dims(*logits);
                let lv = &self.nodes[*logits].value;
                let dl = accumulate(&mut grads[*logits], lens[*logits]);
                let mut p = vec![0.0f32; n];
                for (r, &t) in targets.iter().enumerate() {
                    if g[r] == 0.0 {
                        continue;
                    }
                    p.copy_from_slice(&lv[r * n..(r + 1) * n]);
                    kernels::softmax_in_place(&mut p);
                    p[t] -= 1.0;
                    for (d, pv) in dl[r * n..(r + 1) * n].iter_mut().zip(&p) {
                        *d += g[r] * pv;
                    }
                }
            }
            Op::Mse { pred, target } => {
                let pv = &self.nodes[*pred].value;
                let n = pv.len() as f32;
                let dp = accumulate(&mut grads[*pred], lens[*pred]);
                for ((d, p), t) in dp.iter_mut().zip(pv).zip(target) {
                    *d += g[0] * 2.0 * (p - t) / n;
                }
            }
            Op::CausalAttention { qkv, heads, probs } => {
                self.attention_backward(*qkv, *heads, probs, g, accumulate(&mut grads[*qkv], lens[*qkv]));
            }
        }
    }

    fn attention_backward(&self, qi: usize, heads: usize, probs: &[f32], g: &[f32], dqkv: &mut [f32]) {
        let (t, w) = self.dims(qi);
        let d = w / 3;
        let dh = d / heads;
        let scale = 1.0 / libm::sqrtf(dh as f32);
        let qkv = &self.nodes[qi].value;
        let mut dp = vec![0.0f32; t];
        let mut off = 0;
        for i in 0..t {
            let n = i + 1;
            for h in 0..heads {
                let p = &probs[off + h * n..off + (h + 1) * n];
                let go = &g[i * d + h * dh..i * d + (h + 1) * dh];
                for j in 0..n {
                    let vj = 2 * d + h * dh;
                    let v = &qkv[j * w + vj..j * w + vj + dh];
                    dp[j] = kernels::dot(go, v);
                    for (dv, gv) in dqkv[j * w + vj..j * w + vj + dh].iter_mut().zip(go) {
                        *dv += p[j] * gv;
                    }
                }
                let s = kernels::dot(&dp[..n], p);
                let qo = i * w + h * dh;
                for j in 0..n {
                    let ds = p[j] * (dp[j] - s) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let ko = j * w + d + h * dh;
                    for c in 0..dh {
                        dqkv[qo + c] += ds * qkv[ko + c];
                        dqkv[ko + c] += ds * qkv[qo + c];
                    }
                }
            }
            off += heads * n;
        }
    }
}

fn kind_name(kind: PrimitiveKind) -> &'static str {
    match kind {
        PrimitiveKind::MatMul => "matmul",
        PrimitiveKind::Add => "add",
        PrimitiveKind::Mul => "mul",
        PrimitiveKind::Scale => "scale",
        PrimitiveKind::Sum => "sum",
        PrimitiveKind::SoftmaxRows => "softmax_rows",
        PrimitiveKind::LayerNorm => "layer_norm",
        PrimitiveKind::Gelu => "gelu",
        PrimitiveKind::Sigmoid => "sigmoid",
        PrimitiveKind::EmbedLookup => "embed_lookup",
        PrimitiveKind::ConcatRows => "concat_rows",
        PrimitiveKind::SliceRows => "slice_rows",
        PrimitiveKind::CrossEntropyRows => "cross_entropy_rows",
        PrimitiveKind::Mse => "mse",
        PrimitiveKind::CausalAttention => "causal_attention",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, data: &[f32]) -> Tensor {
        Tensor::new(&[rows, cols], data.to_vec()).unwrap().with_grad()
    }

    fn naive_matmul(a: &[f32], m: usize, k: usize, b: &[f32], n: usize) -> Vec<f32> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(&t2(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let c = tape.matmul(a, b).unwrap();
        let oracle = naive_matmul(&[1.0, 2.0, 3.0, 4.0], 2, 2, &[5.0, 6.0, 7.0, 8.0], 2);
        assert_eq!(oracle, vec![19.0, 22.0, 43.0, 50.0]);
        assert_eq!(tape.value(c), &oracle[..]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(&[1, 2], vec![0.0, 0.0]).unwrap();
        let y = tape.softmax_rows(x).unwrap();
        assert_eq!(tape.value(y), &[0.5, 0.5]);
    }

    #[test]
    fn mse_example() {
        let mut tape = Tape::new();
        let p = tape.constant(&[1], vec![0.5]).unwrap();
        let l = tape.mse(p, &[0.7]).unwrap();
        assert!((tape.scalar(l) - 0.04).abs() < 1e-6);
    }

    #[test]
    fn square_has_derivative_six_at_three() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(3.0).with_grad());
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x), vec![6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(1.5).with_grad());
        let y = tape.add(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x), vec![2.0]);
    }

    #[test]
    fn disconnected_leaf_gets_exact_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(2.0).with_grad());
        let unused = tape.leaf(&t2(2, 2, &[1.0; 4]));
        let y = tape.scale(x, 3.0).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(unused), vec![0.0; 4]);
        assert!(g.get(unused).is_none());
    }

    #[test]
    fn loss_from_another_tape_is_rejected() {
        let mut other = Tape::new();
        let x = other.leaf(&Tensor::scalar(1.0).with_grad());
        let tape = Tape::new();
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t2(1, 2, &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_and_bad_index() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t2(2, 3, &[1.0; 6]));
        let b = tape.leaf(&t2(2, 3, &[1.0; 6]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Contract(_))));
        assert!(matches!(
            tape.embed_lookup(a, &[2]),
            Err(Error::Index { index: 2, bound: 2, .. })
        ));
    }

    #[test]
    fn overflow_is_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1], vec![f32::MAX]).unwrap();
        assert!(matches!(tape.scale(a, 10.0), Err(Error::NumericOverflow("scale"))));
    }

    #[test]
    fn nothing_recorded_without_grad() {
        let mut tape = Tape::new();
        let a = tape.constant(&[2, 2], vec![1.0; 4]).unwrap();
        let b = tape.matmul(a, a).unwrap();
        let _ = tape.gelu(b).unwrap();
        assert_eq!(tape.recorded_len(), 0);
        let w = tape.leaf(&t2(2, 2, &[1.0; 4]));
        let _ = tape.matmul(a, w).unwrap();
        assert_eq!(tape.recorded_len(), 1);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut tape = Tape::new();
        let x = tape
            .constant(&[2, 4], vec![1.0, 2.0, 3.0, 10.0, -4.0, 0.5, 0.25, 8.0])
            .unwrap();
        let g = tape.constant(&[4], vec![1.0; 4]).unwrap();
        let b = tape.constant(&[4], vec![0.0; 4]).unwrap();
        let y = tape.layer_norm(x, g, b).unwrap();
        for row in tape.value(y).chunks(4) {
            let mean: f32 = row.iter().sum::<f32>() / 4.0;
            let var: f32 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 4.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
