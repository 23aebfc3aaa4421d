//! Reverse-mode differentiation over a closed set of primitives.
//!
//! A [`Graph`] is an append-only tape. Nodes only reference earlier nodes, so
//! reverse insertion order is a valid topological order for [`Graph::backward`].
//! All arithmetic is `f64`.

use std::fmt;

use crate::embedding::norm;
use crate::error::{Error, Result};

/// Dense row-major tensor of rank 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 || shape.contains(&0) {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} must have rank 1 or 2 with positive extents"),
            });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} needs {n} values, got {}", data.len()),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {i} is {}", data[i])));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::new(vec![1], vec![v])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    // Internal constructor for values already known to be well formed.
    fn raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count; a rank-1 tensor counts as a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor has rank >= 1")
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Linear,
    Tanh,
    Concat,
    MeanPoolRows,
    Cosine,
    L1Mean,
    L2Mean,
    ScaleAdd,
    GatherRows,
    Reshape,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { w: NodeId, x: NodeId, b: NodeId },
    Tanh(NodeId),
    Concat(Vec<NodeId>),
    MeanPoolRows(NodeId),
    Cosine { a: NodeId, b: NodeId },
    L1Mean { a: NodeId, b: NodeId },
    L2Mean { a: NodeId, b: NodeId },
    ScaleAdd { a: NodeId, c: f64, b: NodeId },
    GatherRows { x: NodeId, idx: Vec<usize> },
    Reshape(NodeId),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Linear { .. } => OpKind::Linear,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Concat(_) => OpKind::Concat,
            Op::MeanPoolRows(_) => OpKind::MeanPoolRows,
            Op::Cosine { .. } => OpKind::Cosine,
            Op::L1Mean { .. } => OpKind::L1Mean,
            Op::L2Mean { .. } => OpKind::L2Mean,
            Op::ScaleAdd { .. } => OpKind::ScaleAdd,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::Reshape(_) => OpKind::Reshape,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    /// Number of nodes of the given kind constructed so far.
    pub fn count(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        if value.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} produced a non-finite value", op.kind())));
        }
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value });
        NodeId(self.nodes.len() - 1)
    }

    /// `x W^T + b` for `W: [O, I]`, `b: [O]` and `x: [I]` or `[R, I]`.
    pub fn linear(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (wv, xv, bv) = (self.value(w), self.value(x), self.value(b));
        if wv.shape.len() != 2 {
            return Err(shape_err(
                "linear",
                format!("weight must be rank 2, got {:?}", wv.shape),
            ));
        }
        let (o, i) = (wv.shape[0], wv.shape[1]);
        if xv.cols() != i {
            return Err(shape_err(
                "linear",
                format!("input {:?} incompatible with weight {:?}", xv.shape, wv.shape),
            ));
        }
        if bv.shape != [o] {
            return Err(shape_err("linear", format!("bias {:?} must be [{o}]", bv.shape)));
        }
        let r = xv.rows();
        let mut out = Vec::with_capacity(r * o);
        for row in 0..r {
            let xr = xv.row(row);
            for oo in 0..o {
                let wr = &wv.data[oo * i..(oo + 1) * i];
                let dot: f64 = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
                out.push(dot + bv.data[oo]);
            }
        }
        let shape = if xv.shape.len() == 1 { vec![o] } else { vec![r, o] };
        self.push(Op::Linear { w, x, b }, Tensor::raw(shape, out))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let out = Tensor::raw(xv.shape.clone(), xv.data.iter().map(|v| v.tanh()).collect());
        self.push(Op::Tanh(x), out)
    }

    /// Concatenates along the last axis. Inputs are all rank 1, or all rank 2 with equal row counts.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let rank = self.value(xs[0]).shape.len();
        let rows = self.value(xs[0]).rows();
        for &x in xs {
            let v = self.value(x);
            if v.shape.len() != rank || v.rows() != rows {
                return Err(shape_err(
                    "concat",
                    format!("input {:?} incompatible with {:?}", v.shape, self.value(xs[0]).shape),
                ));
            }
        }
        let total: usize = xs.iter().map(|&x| self.value(x).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                out.extend_from_slice(self.value(x).row(r));
            }
        }
        let shape = if rank == 1 { vec![total] } else { vec![rows, total] };
        self.push(Op::Concat(xs.to_vec()), Tensor::raw(shape, out))
    }

    /// Column means of a `[T, F]` matrix, giving `[F]`.
    pub fn mean_pool_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape.len() != 2 {
            return Err(shape_err(
                "mean_pool_rows",
                format!("input must be rank 2, got {:?}", xv.shape),
            ));
        }
        let (t, f) = (xv.shape[0], xv.shape[1]);
        let mut out = vec![0.0; f];
        for r in 0..t {
            for (o, v) in out.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        let inv = 1.0 / t as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        self.push(Op::MeanPoolRows(x), Tensor::raw(vec![f], out))
    }

    /// Cosine similarity of two equal-length tensors, clamped to `[-1, 1]`.
    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let c = crate::embedding::cosine_slices(&self.value(a).data, &self.value(b).data).map_err(|e| match e {
            Error::DimensionMismatch { expected, actual, .. } => {
                shape_err("cosine", format!("operand lengths {expected} and {actual} differ"))
            }
            other => other,
        })?;
        self.push(Op::Cosine { a, b }, Tensor::raw(vec![1], vec![c]))
    }

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape != self.value(b).shape {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape, self.value(b).shape),
            ));
        }
        Ok(())
    }

    /// Mean absolute difference.
    pub fn l1_mean(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("l1_mean", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let s: f64 = av.data.iter().zip(&bv.data).map(|(x, y)| (x - y).abs()).sum();
        let v = s / av.len() as f64;
        self.push(Op::L1Mean { a, b }, Tensor::raw(vec![1], vec![v]))
    }

    /// Mean squared difference.
    pub fn l2_mean(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("l2_mean", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let s: f64 = av.data.iter().zip(&bv.data).map(|(x, y)| (x - y) * (x - y)).sum();
        let v = s / av.len() as f64;
        self.push(Op::L2Mean { a, b }, Tensor::raw(vec![1], vec![v]))
    }

    /// `a + c * b`.
    pub fn scale_add(&mut self, a: NodeId, c: f64, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("scale_add", a, b)?;
        if !c.is_finite() {
            return Err(Error::NonFinite(format!("scale_add coefficient {c}")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<f64> = av.data.iter().zip(&bv.data).map(|(x, y)| x + c * y).collect();
        let shape = av.shape.clone();
        self.push(Op::ScaleAdd { a, c, b }, Tensor::raw(shape, out))
    }

    /// Selects rows of `x` (a rank-1 input is one row), repeats allowed. Output is `[idx.len(), C]`.
    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        if idx.is_empty() {
            return Err(shape_err("gather_rows", "empty index list".into()));
        }
        let rows = xv.rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(shape_err(
                "gather_rows",
                format!("row {bad} out of range for {rows} rows"),
            ));
        }
        let c = xv.cols();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(xv.row(i));
        }
        self.push(
            Op::GatherRows { x, idx: idx.to_vec() },
            Tensor::raw(vec![idx.len(), c], out),
        )
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        let t = Tensor::new(shape.to_vec(), xv.data.clone())
            .map_err(|_| shape_err("reshape", format!("{:?} -> {shape:?}", xv.shape)))?;
        self.push(Op::Reshape(x), t)
    }

    /// Gradients of the scalar `root` with respect to every node.
    ///
    /// Nodes that `root` does not depend on get zero gradients. The graph is
    /// not modified, so repeated calls return identical results.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(shape_err(
                "backward",
                format!("root must be scalar, got shape {:?}", rv.shape),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        fn acc(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
            slot.get_or_insert_with(|| vec![0.0; len])
        }

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Linear { w, x, b } => {
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    let (o, i) = (wv.shape[0], wv.shape[1]);
                    let r = xv.rows();
                    {
                        let gx = acc(&mut grads[x.0], xv.len());
                        for row in 0..r {
                            for oo in 0..o {
                                let go = g[row * o + oo];
                                if go == 0.0 {
                                    continue;
                                }
                                let wr = &wv.data[oo * i..(oo + 1) * i];
                                for (gxi, wi) in gx[row * i..(row + 1) * i].iter_mut().zip(wr) {
                                    *gxi += go * wi;
                                }
                            }
                        }
                    }
                    {
                        let gw = acc(&mut grads[w.0], wv.len());
                        for row in 0..r {
                            let xr = xv.row(row);
                            for oo in 0..o {
                                let go = g[row * o + oo];
                                if go == 0.0 {
                                    continue;
                                }
                                for (gwi, xi) in gw[oo * i..(oo + 1) * i].iter_mut().zip(xr) {
                                    *gwi += go * xi;
                                }
                            }
                        }
                    }
                    let gb = acc(&mut grads[b.0], o);
                    for row in 0..r {
                        for oo in 0..o {
                            gb[oo] += g[row * o + oo];
                        }
                    }
                }
                Op::Tanh(x) => {
                    let gx = acc(&mut grads[x.0], g.len());
                    for ((gxi, gi), yi) in gx.iter_mut().zip(&g).zip(&node.value.data) {
                        *gxi += gi * (1.0 - yi * yi);
                    }
                }
                Op::Concat(xs) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for x in xs {
                        let c = self.value(*x).cols();
                        let gx = acc(&mut grads[x.0], rows * c);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + c];
                            for (d, s) in gx[r * c..(r + 1) * c].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        offset += c;
                    }
                }
                Op::MeanPoolRows(x) => {
                    let xv = self.value(*x);
                    let (t, f) = (xv.shape[0], xv.shape[1]);
                    let inv = 1.0 / t as f64;
                    let gx = acc(&mut grads[x.0], t * f);
                    for r in 0..t {
                        for (d, s) in gx[r * f..(r + 1) * f].iter_mut().zip(&g) {
                            *d += s * inv;
                        }
                    }
                }
                Op::Cosine { a, b } => {
                    let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                    let (na, nb) = (norm(av), norm(bv));
                    let dot: f64 = av.iter().zip(bv).map(|(x, y)| x * y).sum();
                    let cos = dot / (na * nb);
                    let g0 = g[0];
                    let inv_ab = 1.0 / (na * nb);
                    {
                        let ga = acc(&mut grads[a.0], av.len());
                        for k in 0..av.len() {
                            ga[k] += g0 * (bv[k] * inv_ab - cos * av[k] / (na * na));
                        }
                    }
                    let gb = acc(&mut grads[b.0], bv.len());
                    for k in 0..bv.len() {
                        gb[k] += g0 * (av[k] * inv_ab - cos * bv[k] / (nb * nb));
                    }
                }
                Op::L1Mean { a, b } => {
                    let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                    let scale = g[0] / av.len() as f64;
                    let signs: Vec<f64> = av
                        .iter()
                        .zip(bv)
                        .map(|(x, y)| {
                            let d = x - y;
                            if d > 0.0 {
                                1.0
                            } else if d < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let ga = acc(&mut grads[a.0], av.len());
                    for (d, s) in ga.iter_mut().zip(&signs) {
                        *d += scale * s;
                    }
                    let gb = acc(&mut grads[b.0], bv.len());
                    for (d, s) in gb.iter_mut().zip(&signs) {
                        *d -= scale * s;
                    }
                }
                Op::L2Mean { a, b } => {
                    let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                    let scale = 2.0 * g[0] / av.len() as f64;
                    let diffs: Vec<f64> = av.iter().zip(bv).map(|(x, y)| x - y).collect();
                    let ga = acc(&mut grads[a.0], av.len());
                    for (d, s) in ga.iter_mut().zip(&diffs) {
                        *d += scale * s;
                    }
                    let gb = acc(&mut grads[b.0], bv.len());
                    for (d, s) in gb.iter_mut().zip(&diffs) {
                        *d -= scale * s;
                    }
                }
                Op::ScaleAdd { a, c, b } => {
                    {
                        let ga = acc(&mut grads[a.0], g.len());
                        for (d, s) in ga.iter_mut().zip(&g) {
                            *d += s;
                        }
                    }
                    let gb = acc(&mut grads[b.0], g.len());
                    for (d, s) in gb.iter_mut().zip(&g) {
                        *d += c * s;
                    }
                }
                Op::GatherRows { x, idx } => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let gx = acc(&mut grads[x.0], xv.len());
                    for (r, &src) in idx.iter().enumerate() {
                        for (d, s) in gx[src * c..(src + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                            *d += s;
                        }
                    }
                }
                Op::Reshape(x) => {
                    let gx = acc(&mut grads[x.0], g.len());
                    for (d, s) in gx.iter_mut().zip(&g) {
                        *d += s;
                    }
                }
            }
            grads[id] = Some(g);
        }

        let out = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| match grads.get_mut(i).and_then(Option::take) {
                Some(g) => Tensor::raw(n.value.shape.clone(), g),
                None => Tensor::zeros(&n.value.shape),
            })
            .collect();
        Ok(Gradients(out))
    }
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(Vec<Tensor>);

impl Gradients {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.0[id.0]
    }
}

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub components: usize,
    pub tol: f64,
    pub passed: bool,
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Checks the gradient of `builder` at `point` componentwise using
/// `(f(x + h) - f(x - h)) / 2h`. The builder receives one leaf per tensor in
/// `point` and returns a scalar node.
pub fn grad_check<F>(builder: F, point: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    let eval = |pt: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = pt.iter().map(|t| g.leaf(t.clone())).collect();
        let root = builder(&mut g, &leaves)?;
        Ok(g.value(root).item())
    };

    let mut g = Graph::new();
    let leaves: Vec<NodeId> = point.iter().map(|t| g.leaf(t.clone())).collect();
    let root = builder(&mut g, &leaves)?;
    let grads = g.backward(root)?;

    let mut max_rel: f64 = 0.0;
    let mut components = 0;
    let mut work = point.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(*leaf).data().to_vec();
        for (k, &a) in analytic.iter().enumerate() {
            let x0 = point[li].data[k];
            work[li].data[k] = x0 + h;
            let fp = eval(&work)?;
            work[li].data[k] = x0 - h;
            let fm = eval(&work)?;
            work[li].data[k] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            max_rel = max_rel.max(relative_error(a, numeric));
            components += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        components,
        tol,
        passed: max_rel < tol,
    })
}
