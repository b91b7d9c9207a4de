use std::borrow::Cow;

use super::array::{Array, Real};
use super::GraphError;

/// Handle to a node of a [`DiffGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The closed primitive set. Every differentiable computation in the crate
/// lowers to these.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Leaf bound by name at forward time.
    Input(String),
    /// Trainable leaf whose value lives in the graph.
    Param,
    /// Fixed leaf whose value lives in the graph.
    Constant,
    /// `x·w + b`, with `b` a `[1, n]` row broadcast over rows.
    Affine { x: NodeId, w: NodeId, b: Option<NodeId> },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Tanh(NodeId),
    /// `x·sigmoid(x)`.
    Silu(NodeId),
    /// `ln(1 + e^x)`.
    Softplus(NodeId),
    /// Sum of all elements, `[1, 1]`.
    Sum(NodeId),
    /// Elementwise maximum; ties select the first argument.
    Max(NodeId, NodeId),
    /// Elementwise minimum; ties select the first argument.
    Min(NodeId, NodeId),
    /// Repeat `a` along its unit axes to the shape of `like`.
    Broadcast { a: NodeId, like: NodeId },
    /// Column `index` of `a`, shape `[rows, 1]`.
    Column { a: NodeId, index: usize },
}

impl Op {
    pub fn is_leaf(&self) -> bool {
        matches!(self, Op::Input(_) | Op::Param | Op::Constant)
    }

    fn operands(&self) -> Vec<NodeId> {
        match *self {
            Op::Input(_) | Op::Param | Op::Constant => vec![],
            Op::Affine { x, w, b } => {
                let mut v = vec![x, w];
                v.extend(b);
                v
            }
            Op::Add(a, b) | Op::Mul(a, b) | Op::Max(a, b) | Op::Min(a, b) => vec![a, b],
            Op::Neg(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Tanh(a)
            | Op::Silu(a)
            | Op::Softplus(a)
            | Op::Sum(a)
            | Op::Column { a, .. } => vec![a],
            Op::Broadcast { a, like } => vec![a, like],
        }
    }
}

/// Reverse-mode differentiable computation record.
///
/// Nodes are appended in topological order: an operation may only reference
/// nodes created before it. The graph holds parameter and constant values;
/// per-evaluation state lives in a [`Session`], so one graph can be evaluated
/// from several threads at once.
#[derive(Clone, Debug, Default)]
pub struct DiffGraph<T: Real = f64> {
    ops: Vec<Op>,
    leaf_values: Vec<Option<Array<T>>>,
}

impl<T: Real> DiffGraph<T> {
    pub fn new() -> Self {
        Self {
            ops: Vec::new(),
            leaf_values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.ops[id.0]
    }

    fn push(&mut self, op: Op, value: Option<Array<T>>) -> NodeId {
        for operand in op.operands() {
            assert!(operand.0 < self.ops.len(), "operand {operand:?} not yet defined");
        }
        self.ops.push(op);
        self.leaf_values.push(value);
        NodeId(self.ops.len() - 1)
    }

    pub fn input(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Input(name.into()), None)
    }

    pub fn param(&mut self, value: Array<T>) -> NodeId {
        self.push(Op::Param, Some(value))
    }

    pub fn constant(&mut self, value: Array<T>) -> NodeId {
        self.push(Op::Constant, Some(value))
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Array::scalar(T::of(value)))
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        self.push(Op::Affine { x, w, b }, None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b), None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b), None)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Neg(a), None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a), None)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Ln(a), None)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a), None)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Silu(a), None)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softplus(a), None)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), None)
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Max(a, b), None)
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Min(a, b), None)
    }

    pub fn broadcast(&mut self, a: NodeId, like: NodeId) -> NodeId {
        self.push(Op::Broadcast { a, like }, None)
    }

    pub fn column(&mut self, a: NodeId, index: usize) -> NodeId {
        self.push(Op::Column { a, index }, None)
    }

    /// `c·a`, lowered to a broadcast constant and a multiply.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let k = self.scalar(c);
        let kb = self.broadcast(k, a);
        self.mul(a, kb)
    }

    /// `a + c`, lowered to a broadcast constant and an add.
    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let k = self.scalar(c);
        let kb = self.broadcast(k, a);
        self.add(a, kb)
    }

    pub fn leaf_value(&self, id: NodeId) -> Option<&Array<T>> {
        self.leaf_values[id.0].as_ref()
    }

    /// Mutable access to a parameter or constant value, for optimizers.
    pub fn leaf_value_mut(&mut self, id: NodeId) -> Option<&mut Array<T>> {
        self.leaf_values[id.0].as_mut()
    }

    pub fn params(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ops
            .iter()
            .enumerate()
            .filter(|(_, op)| matches!(op, Op::Param))
            .map(|(i, _)| NodeId(i))
    }

    pub fn inputs(&self) -> impl Iterator<Item = (NodeId, &str)> + '_ {
        self.ops.iter().enumerate().filter_map(|(i, op)| match op {
            Op::Input(name) => Some((NodeId(i), name.as_str())),
            _ => None,
        })
    }

    pub fn session(&self) -> Session<'_, T> {
        Session {
            graph: self,
            values: Vec::new(),
            root: None,
        }
    }

    /// Evaluate `root` once and return its value.
    pub fn forward(&self, root: NodeId, inputs: &[(&str, &Array<T>)]) -> Result<Array<T>, GraphError> {
        let mut s = self.session();
        Ok(s.forward(root, inputs)?.clone())
    }

    fn ancestors(&self, root: NodeId) -> Vec<bool> {
        let mut needed = vec![false; root.0 + 1];
        needed[root.0] = true;
        for i in (0..=root.0).rev() {
            if needed[i] {
                for operand in self.ops[i].operands() {
                    needed[operand.0] = true;
                }
            }
        }
        needed
    }
}

/// Cached forward values for one evaluation of a graph.
pub struct Session<'a, T: Real> {
    graph: &'a DiffGraph<T>,
    values: Vec<Option<Cow<'a, Array<T>>>>,
    root: Option<NodeId>,
}

/// Adjoints produced by [`Session::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T: Real> {
    adjoints: Vec<Option<Array<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Adjoint of `id`; `None` if the node was not evaluated.
    pub fn get(&self, id: NodeId) -> Option<&Array<T>> {
        self.adjoints.get(id.0).and_then(|a| a.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array<T>> {
        self.adjoints.get_mut(id.0).and_then(|a| a.take())
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<'a, T: Real> Session<'a, T> {
    fn value(&self, id: NodeId) -> &Array<T> {
        self.values[id.0]
            .as_deref()
            .expect("operands are evaluated before their consumers")
    }

    pub fn value_of(&self, id: NodeId) -> Option<&Array<T>> {
        self.values.get(id.0).and_then(|v| v.as_deref())
    }

    /// Evaluate every ancestor of `root`, caching intermediate values.
    pub fn forward(
        &mut self,
        root: NodeId,
        inputs: &[(&str, &'a Array<T>)],
    ) -> Result<&Array<T>, GraphError> {
        let graph = self.graph;
        if root.0 >= graph.ops.len() {
            return Err(GraphError::UnknownNode(root.0));
        }
        let needed = graph.ancestors(root);
        self.values = (0..=root.0).map(|_| None).collect();
        self.root = None;
        for i in 0..=root.0 {
            if !needed[i] {
                continue;
            }
            let value: Cow<'a, Array<T>> = match &graph.ops[i] {
                Op::Input(name) => {
                    let bound = inputs
                        .iter()
                        .find(|(n, _)| n == name)
                        .ok_or_else(|| GraphError::UnboundInput(name.clone()))?;
                    Cow::Borrowed(bound.1)
                }
                Op::Param | Op::Constant => Cow::Borrowed(
                    graph.leaf_values[i]
                        .as_ref()
                        .expect("param and constant nodes carry values"),
                ),
                op => Cow::Owned(self.eval_op(op)?),
            };
            self.values[i] = Some(value);
        }
        self.root = Some(root);
        Ok(self.value(root))
    }

    fn eval_op(&self, op: &Op) -> Result<Array<T>, GraphError> {
        Ok(match *op {
            Op::Input(_) | Op::Param | Op::Constant => unreachable!("leaves handled by caller"),
            Op::Affine { x, w, b } => {
                let xv = self.value(x);
                let wv = self.value(w);
                let mut out = xv.matmul(wv)?;
                if let Some(b) = b {
                    let bv = self.value(b);
                    let (br, bc) = bv.expect_rank2("affine bias")?;
                    if br != 1 || bc != out.cols() {
                        return Err(GraphError::ShapeMismatch {
                            op: "affine bias",
                            left: out.shape().to_vec(),
                            right: bv.shape().to_vec(),
                        });
                    }
                    let n = out.cols();
                    for chunk in out.data_mut().chunks_mut(n) {
                        for (o, &bb) in chunk.iter_mut().zip(bv.data()) {
                            *o = *o + bb;
                        }
                    }
                }
                out
            }
            Op::Add(a, b) => self.value(a).zip_map(self.value(b), |x, y| x + y)?,
            Op::Mul(a, b) => self.value(a).zip_map(self.value(b), |x, y| x * y)?,
            Op::Neg(a) => self.value(a).map(|x| -x),
            Op::Exp(a) => self.value(a).map(|x| x.exp()),
            Op::Ln(a) => self.value(a).map(|x| x.ln()),
            Op::Tanh(a) => self.value(a).map(|x| x.tanh()),
            Op::Silu(a) => self.value(a).map(|x| x * sigmoid(x)),
            Op::Softplus(a) => self.value(a).map(softplus),
            Op::Sum(a) => Array::scalar(self.value(a).sum()),
            Op::Max(a, b) => self
                .value(a)
                .zip_map(self.value(b), |x, y| if x >= y { x } else { y })?,
            Op::Min(a, b) => self
                .value(a)
                .zip_map(self.value(b), |x, y| if x <= y { x } else { y })?,
            Op::Broadcast { a, like } => {
                let av = self.value(a);
                let (r, c) = av.expect_rank2("broadcast")?;
                let (rr, cc) = self.value(like).expect_rank2("broadcast")?;
                if (r != 1 && r != rr) || (c != 1 && c != cc) {
                    return Err(GraphError::ShapeMismatch {
                        op: "broadcast",
                        left: av.shape().to_vec(),
                        right: vec![rr, cc],
                    });
                }
                Array::from_fn(rr, cc, |i, j| {
                    av.get(if r == 1 { 0 } else { i }, if c == 1 { 0 } else { j })
                })
            }
            Op::Column { a, index } => {
                let av = self.value(a);
                let (r, c) = av.expect_rank2("column")?;
                if index >= c {
                    return Err(GraphError::ColumnOutOfRange { index, cols: c });
                }
                Array::from_fn(r, 1, |i, _| av.get(i, index))
            }
        })
    }

    /// Propagate `seed` (shaped like the root) back to every evaluated node.
    /// The adjoint of a leaf equals ∂(seed·root)/∂leaf.
    pub fn backward(&self, seed: &Array<T>) -> Result<Gradients<T>, GraphError> {
        let root = self.root.ok_or(GraphError::BackwardBeforeForward)?;
        let graph = self.graph;
        let root_value = self.value(root);
        if seed.shape() != root_value.shape() {
            return Err(GraphError::ShapeMismatch {
                op: "backward seed",
                left: root_value.shape().to_vec(),
                right: seed.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Array<T>>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(seed.clone());

        fn accumulate<T: Real>(slot: &mut Option<Array<T>>, delta: Array<T>) {
            match slot {
                Some(acc) => {
                    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                        *a = *a + *d;
                    }
                }
                None => *slot = Some(delta),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let op = &graph.ops[i];
            match *op {
                Op::Input(_) | Op::Param | Op::Constant => {
                    adj[i] = Some(g);
                    continue;
                }
                Op::Affine { x, w, b } => {
                    let xv = self.value(x);
                    let wv = self.value(w);
                    let (m, k) = (xv.rows(), xv.cols());
                    let n = wv.cols();
                    let mut dx = Array::zeros(m, k);
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g.data(),
                        (n as isize, 1),
                        wv.data(),
                        (1, n as isize),
                        T::zero(),
                        dx.data_mut(),
                        (k as isize, 1),
                    );
                    let mut dw = Array::zeros(k, n);
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        xv.data(),
                        (1, k as isize),
                        g.data(),
                        (n as isize, 1),
                        T::zero(),
                        dw.data_mut(),
                        (n as isize, 1),
                    );
                    if let Some(b) = b {
                        let mut db = Array::zeros(1, n);
                        for chunk in g.data().chunks(n) {
                            for (d, &v) in db.data_mut().iter_mut().zip(chunk) {
                                *d = *d + v;
                            }
                        }
                        accumulate(&mut adj[b.0], db);
                    }
                    accumulate(&mut adj[x.0], dx);
                    accumulate(&mut adj[w.0], dw);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[b.0], g.clone());
                    accumulate(&mut adj[a.0], g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(b), |gv, bv| gv * bv)?;
                    let db = g.zip_map(self.value(a), |gv, av| gv * av)?;
                    accumulate(&mut adj[a.0], da);
                    accumulate(&mut adj[b.0], db);
                }
                Op::Neg(a) => accumulate(&mut adj[a.0], g.map(|v| -v)),
                Op::Exp(a) => {
                    let y = self.value(NodeId(i));
                    accumulate(&mut adj[a.0], g.zip_map(y, |gv, yv| gv * yv)?);
                }
                Op::Ln(a) => {
                    let x = self.value(a);
                    accumulate(&mut adj[a.0], g.zip_map(x, |gv, xv| gv / xv)?);
                }
                Op::Tanh(a) => {
                    let y = self.value(NodeId(i));
                    accumulate(
                        &mut adj[a.0],
                        g.zip_map(y, |gv, yv| gv * (T::one() - yv * yv))?,
                    );
                }
                Op::Silu(a) => {
                    let x = self.value(a);
                    accumulate(
                        &mut adj[a.0],
                        g.zip_map(x, |gv, xv| {
                            let s = sigmoid(xv);
                            gv * (s + xv * s * (T::one() - s))
                        })?,
                    );
                }
                Op::Softplus(a) => {
                    let x = self.value(a);
                    accumulate(&mut adj[a.0], g.zip_map(x, |gv, xv| gv * sigmoid(xv))?);
                }
                Op::Sum(a) => {
                    let shape = self.value(a).shape().to_vec();
                    let gv = g.data()[0];
                    let n: usize = shape.iter().product();
                    accumulate(&mut adj[a.0], Array::new(shape, vec![gv; n])?);
                }
                Op::Max(a, b) | Op::Min(a, b) => {
                    let av = self.value(a);
                    let bv = self.value(b);
                    let is_max = matches!(op, Op::Max(..));
                    let mut da = Array::new(av.shape().to_vec(), vec![T::zero(); av.len()])?;
                    let mut db = da.clone();
                    for (idx, (&x, &y)) in av.data().iter().zip(bv.data()).enumerate() {
                        let first = if is_max { x >= y } else { x <= y };
                        if first {
                            da.data_mut()[idx] = g.data()[idx];
                        } else {
                            db.data_mut()[idx] = g.data()[idx];
                        }
                    }
                    accumulate(&mut adj[a.0], da);
                    accumulate(&mut adj[b.0], db);
                }
                Op::Broadcast { a, .. } => {
                    let av = self.value(a);
                    let (r, c) = (av.rows(), av.cols());
                    let mut da = Array::zeros(r, c);
                    let cols = g.cols();
                    for (idx, &gv) in g.data().iter().enumerate() {
                        let (gi, gj) = (idx / cols, idx % cols);
                        let ti = if r == 1 { 0 } else { gi };
                        let tj = if c == 1 { 0 } else { gj };
                        let cur = da.get(ti, tj);
                        da.set(ti, tj, cur + gv);
                    }
                    accumulate(&mut adj[a.0], da);
                }
                Op::Column { a, index } => {
                    // scatter in place; many columns of one input share a buffer
                    let av = self.value(a);
                    let slot =
                        adj[a.0].get_or_insert_with(|| Array::zeros(av.rows(), av.cols()));
                    for r in 0..av.rows() {
                        let cur = slot.get(r, index);
                        slot.set(r, index, cur + g.data()[r]);
                    }
                }
            }
        }

        // Leaves that did not influence the root still get a zero adjoint of
        // their own shape.
        for i in 0..=root.0 {
            if graph.ops[i].is_leaf() && adj[i].is_none() {
                if let Some(v) = self.values[i].as_deref() {
                    adj[i] = Some(Array::new(v.shape().to_vec(), vec![T::zero(); v.len()])?);
                }
            }
        }
        Ok(Gradients { adjoints: adj })
    }
}
