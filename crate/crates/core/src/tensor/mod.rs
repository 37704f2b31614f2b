//! Dense-tensor computation tape with reverse-mode differentiation.
//!
//! Every trainable loss in the crate is expressed through [`DiffTensor`]
//! handles recorded on a [`Tape`]. The tape is a Wengert list: operations are
//! appended during the forward pass and replayed once, in reverse, by
//! [`Tape::backward`]. Values are immutable after creation; a training step
//! builds a fresh tape, so tape lifetime is one forward/backward pair.

pub mod check;
pub mod kernels;

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnKind {
    Exp,
    Log,
    Relu,
    Tanh,
    Sqrt,
    Softplus,
    Neg,
}

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    Transpose {
        a: NodeId,
    },
    Binary {
        kind: BinKind,
        a: NodeId,
        b: NodeId,
    },
    /// vec (length N) applied across the rows of mat (N×D).
    RowBroadcast {
        kind: BinKind,
        mat: NodeId,
        vec: NodeId,
    },
    Unary {
        kind: UnKind,
        a: NodeId,
    },
    Scale {
        a: NodeId,
        c: T,
    },
    AddScalar {
        a: NodeId,
    },
    SumAll {
        a: NodeId,
    },
    RowSum {
        a: NodeId,
    },
    /// Mean over rows of -log softmax(logits)[i, target[i]]; saves the row
    /// softmax for the backward rule.
    SoftmaxXent {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    Upsample {
        x: NodeId,
        factor: usize,
    },
    /// C×H×W feature map gathered at flat spatial indices → N×C rows.
    GatherSpatial {
        x: NodeId,
        idx: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    op: Op<T>,
    shape: Vec<usize>,
    values: Vec<T>,
    trainable: bool,
}

#[derive(Debug)]
struct TapeInner<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

/// Statistics from a backward pass; `rules_executed` counts recorded nodes
/// whose backward rule ran (each runs exactly once).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardReport {
    pub rules_executed: usize,
    pub nodes_total: usize,
}

/// Shared handle to a computation tape.
#[derive(Debug, Clone)]
pub struct Tape<T: Scalar> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                grads: Vec::new(),
                backward_done: false,
            })),
        }
    }

    fn same_tape(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn push(&self, op: Op<T>, shape: Vec<usize>, values: Vec<T>, trainable: bool) -> DiffTensor<T> {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            shape: shape.clone(),
            values,
            trainable,
        });
        inner.grads.push(None);
        DiffTensor {
            tape: self.clone(),
            id,
            shape,
        }
    }

    /// New leaf tensor. Trainable leaves receive gradients from backward().
    pub fn leaf(&self, values: Vec<T>, shape: Vec<usize>, trainable: bool) -> Result<DiffTensor<T>> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(CoreError::Shape {
                op: "leaf",
                detail: format!("shape {:?} does not hold {} values", shape, values.len()),
            });
        }
        Ok(self.push(Op::Leaf, shape, values, trainable))
    }

    /// Non-trainable leaf.
    pub fn constant(&self, values: Vec<T>, shape: Vec<usize>) -> Result<DiffTensor<T>> {
        self.leaf(values, shape, false)
    }

    pub fn constant_matrix(&self, m: &Matrix<T>) -> Result<DiffTensor<T>> {
        self.constant(m.data().to_vec(), vec![m.rows(), m.cols()])
    }

    pub fn scalar(&self, v: T) -> Result<DiffTensor<T>> {
        self.constant(vec![v], vec![])
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// Clear gradient state so backward() may run again on the same graph.
    pub fn reset_grads(&self) {
        let mut inner = self.inner.borrow_mut();
        for g in inner.grads.iter_mut() {
            *g = None;
        }
        inner.backward_done = false;
    }

    /// Reverse replay from a scalar loss. Populates gradients for every
    /// trainable leaf (zeros if the loss does not depend on it).
    pub fn backward(&self, loss: &DiffTensor<T>) -> Result<BackwardReport> {
        if !self.same_tape(&loss.tape) {
            return Err(CoreError::Tape("loss recorded on a different tape".into()));
        }
        let mut inner = self.inner.borrow_mut();
        if inner.backward_done {
            return Err(CoreError::Tape(
                "backward already ran on this tape; call reset_grads() first".into(),
            ));
        }
        if inner.nodes[loss.id].values.len() != 1 {
            return Err(CoreError::Shape {
                op: "backward",
                detail: format!(
                    "loss must be scalar, got shape {:?}",
                    inner.nodes[loss.id].shape
                ),
            });
        }
        inner.backward_done = true;
        inner.grads[loss.id] = Some(vec![T::one()]);

        let TapeInner { nodes, grads, .. } = &mut *inner;
        let mut rules_executed = 0usize;
        for id in (0..nodes.len()).rev() {
            let g = match &grads[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            if matches!(nodes[id].op, Op::Leaf) {
                continue;
            }
            rules_executed += 1;
            backward_op(nodes, grads, id, &g);
        }

        for (id, node) in nodes.iter().enumerate() {
            if node.trainable && grads[id].is_none() {
                grads[id] = Some(vec![T::zero(); node.values.len()]);
            }
        }

        Ok(BackwardReport {
            rules_executed,
            nodes_total: nodes.len(),
        })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], id: NodeId, delta: &[T]) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e = *e + *d;
            }
        }
        None => grads[id] = Some(delta.to_vec()),
    }
}

fn backward_op<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    id: NodeId,
    g: &[T],
) {
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Matmul { a, b } => {
            let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            let n = nodes[*b].shape[1];
            // dL/da = g · bᵀ
            let mut da = vec![T::zero(); m * k];
            let bv = &nodes[*b].values;
            for i in 0..m {
                for p in 0..k {
                    let mut acc = T::zero();
                    for j in 0..n {
                        acc = acc + g[i * n + j] * bv[p * n + j];
                    }
                    da[i * k + p] = acc;
                }
            }
            accumulate(grads, *a, &da);
            // dL/db = aᵀ · g
            let mut db = vec![T::zero(); k * n];
            let av = &nodes[*a].values;
            for p in 0..k {
                for i in 0..m {
                    let apk = av[i * k + p];
                    if apk == T::zero() {
                        continue;
                    }
                    for j in 0..n {
                        db[p * n + j] = db[p * n + j] + apk * g[i * n + j];
                    }
                }
            }
            accumulate(grads, *b, &db);
        }
        Op::Transpose { a } => {
            let (r, c) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            let mut da = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    da[i * c + j] = g[j * r + i];
                }
            }
            accumulate(grads, *a, &da);
        }
        Op::Binary { kind, a, b } => {
            let av = &nodes[*a].values;
            let bv = &nodes[*b].values;
            match kind {
                BinKind::Add => {
                    accumulate(grads, *a, g);
                    accumulate(grads, *b, g);
                }
                BinKind::Sub => {
                    accumulate(grads, *a, g);
                    let nb: Vec<T> = g.iter().map(|&v| -v).collect();
                    accumulate(grads, *b, &nb);
                }
                BinKind::Mul => {
                    let da: Vec<T> = g.iter().zip(bv).map(|(&gv, &b)| gv * b).collect();
                    accumulate(grads, *a, &da);
                    let db: Vec<T> = g.iter().zip(av).map(|(&gv, &a)| gv * a).collect();
                    accumulate(grads, *b, &db);
                }
                BinKind::Div => {
                    let da: Vec<T> = g.iter().zip(bv).map(|(&gv, &b)| gv / b).collect();
                    accumulate(grads, *a, &da);
                    let db: Vec<T> = g
                        .iter()
                        .zip(av.iter().zip(bv))
                        .map(|(&gv, (&a, &b))| -gv * a / (b * b))
                        .collect();
                    accumulate(grads, *b, &db);
                }
            }
        }
        Op::RowBroadcast { kind, mat, vec } => {
            let (n, d) = (nodes[*mat].shape[0], nodes[*mat].shape[1]);
            let mv = &nodes[*mat].values;
            let vv = &nodes[*vec].values;
            let mut dmat = vec![T::zero(); n * d];
            let mut dvec = vec![T::zero(); n];
            for i in 0..n {
                for j in 0..d {
                    let gij = g[i * d + j];
                    match kind {
                        BinKind::Add => {
                            dmat[i * d + j] = gij;
                            dvec[i] = dvec[i] + gij;
                        }
                        BinKind::Sub => {
                            dmat[i * d + j] = gij;
                            dvec[i] = dvec[i] - gij;
                        }
                        BinKind::Mul => {
                            dmat[i * d + j] = gij * vv[i];
                            dvec[i] = dvec[i] + gij * mv[i * d + j];
                        }
                        BinKind::Div => {
                            dmat[i * d + j] = gij / vv[i];
                            dvec[i] = dvec[i] - gij * mv[i * d + j] / (vv[i] * vv[i]);
                        }
                    }
                }
            }
            accumulate(grads, *mat, &dmat);
            accumulate(grads, *vec, &dvec);
        }
        Op::Unary { kind, a } => {
            let av = &nodes[*a].values;
            let ov = &nodes[id].values;
            let da: Vec<T> = match kind {
                UnKind::Exp => g.iter().zip(ov).map(|(&gv, &o)| gv * o).collect(),
                UnKind::Log => g.iter().zip(av).map(|(&gv, &a)| gv / a).collect(),
                // Subgradient at the kink is 0.
                UnKind::Relu => g
                    .iter()
                    .zip(av)
                    .map(|(&gv, &a)| if a > T::zero() { gv } else { T::zero() })
                    .collect(),
                UnKind::Tanh => g
                    .iter()
                    .zip(ov)
                    .map(|(&gv, &o)| gv * (T::one() - o * o))
                    .collect(),
                // d sqrt = 1/(2 sqrt); take 0 at sqrt(0) (one-sided subgradient).
                UnKind::Sqrt => g
                    .iter()
                    .zip(ov)
                    .map(|(&gv, &o)| {
                        if o == T::zero() {
                            T::zero()
                        } else {
                            gv / (o + o)
                        }
                    })
                    .collect(),
                UnKind::Softplus => g
                    .iter()
                    .zip(av)
                    .map(|(&gv, &a)| gv * kernels::sigmoid(a))
                    .collect(),
                UnKind::Neg => g.iter().map(|&gv| -gv).collect(),
            };
            accumulate(grads, *a, &da);
        }
        Op::Scale { a, c } => {
            let da: Vec<T> = g.iter().map(|&gv| gv * *c).collect();
            accumulate(grads, *a, &da);
        }
        Op::AddScalar { a } => {
            accumulate(grads, *a, g);
        }
        Op::SumAll { a } => {
            let da = vec![g[0]; nodes[*a].values.len()];
            accumulate(grads, *a, &da);
        }
        Op::RowSum { a } => {
            let (n, d) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            let mut da = vec![T::zero(); n * d];
            for i in 0..n {
                for j in 0..d {
                    da[i * d + j] = g[i];
                }
            }
            accumulate(grads, *a, &da);
        }
        Op::SoftmaxXent {
            logits,
            targets,
            probs,
        } => {
            let (n, m) = (nodes[*logits].shape[0], nodes[*logits].shape[1]);
            let inv_n = T::one() / T::from_usize(n);
            let mut dl = vec![T::zero(); n * m];
            for i in 0..n {
                for j in 0..m {
                    let indicator = if j == targets[i] { T::one() } else { T::zero() };
                    dl[i * m + j] = g[0] * inv_n * (probs[i * m + j] - indicator);
                }
            }
            accumulate(grads, *logits, &dl);
        }
        Op::Conv2d { x, w, b, stride, pad } => {
            let (c, h, wdt) = (
                nodes[*x].shape[0],
                nodes[*x].shape[1],
                nodes[*x].shape[2],
            );
            let (o, k) = (nodes[*w].shape[0], nodes[*w].shape[2]);
            let (oh, ow) = (nodes[id].shape[1], nodes[id].shape[2]);
            let mut dx = vec![T::zero(); c * h * wdt];
            let mut dw = vec![T::zero(); o * c * k * k];
            let mut db = vec![T::zero(); o];
            kernels::conv2d_backward(
                &nodes[*x].values,
                c,
                h,
                wdt,
                &nodes[*w].values,
                o,
                k,
                *stride,
                *pad,
                g,
                oh,
                ow,
                &mut dx,
                &mut dw,
                &mut db,
            );
            accumulate(grads, *x, &dx);
            accumulate(grads, *w, &dw);
            accumulate(grads, *b, &db);
        }
        Op::Upsample { x, factor } => {
            let (c, h, w) = (
                nodes[*x].shape[0],
                nodes[*x].shape[1],
                nodes[*x].shape[2],
            );
            let mut dx = vec![T::zero(); c * h * w];
            kernels::upsample_nearest_backward(g, c, h, w, *factor, &mut dx);
            accumulate(grads, *x, &dx);
        }
        Op::GatherSpatial { x, idx } => {
            let (c, h, w) = (
                nodes[*x].shape[0],
                nodes[*x].shape[1],
                nodes[*x].shape[2],
            );
            let mut dx = vec![T::zero(); c * h * w];
            for (row, &pos) in idx.iter().enumerate() {
                for ch in 0..c {
                    let di = ch * h * w + pos;
                    dx[di] = dx[di] + g[row * c + ch];
                }
            }
            accumulate(grads, *x, &dx);
        }
    }
}

fn row_broadcast<T: Scalar>(
    kind: BinKind,
    mat: &DiffTensor<T>,
    vec: &DiffTensor<T>,
) -> Result<DiffTensor<T>> {
    let (n, d) = (mat.shape[0], mat.shape[1]);
    let mut out = vec![T::zero(); n * d];
    {
        let inner = mat.tape.inner.borrow();
        let mv = &inner.nodes[mat.id].values;
        let vv = &inner.nodes[vec.id].values;
        if kind == BinKind::Div && vv.iter().any(|&v| v == T::zero()) {
            return Err(CoreError::Domain {
                op: "div",
                detail: "zero divisor".into(),
            });
        }
        for i in 0..n {
            for j in 0..d {
                let m = mv[i * d + j];
                out[i * d + j] = match kind {
                    BinKind::Add => m + vv[i],
                    BinKind::Sub => m - vv[i],
                    BinKind::Mul => m * vv[i],
                    BinKind::Div => m / vv[i],
                };
            }
        }
    }
    Ok(mat.tape.push(
        Op::RowBroadcast {
            kind,
            mat: mat.id,
            vec: vec.id,
        },
        vec![n, d],
        out,
        false,
    ))
}

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone)]
pub struct DiffTensor<T: Scalar> {
    tape: Tape<T>,
    id: NodeId,
    shape: Vec<usize>,
}

impl<T: Scalar> DiffTensor<T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn values(&self) -> Vec<T> {
        self.tape.inner.borrow().nodes[self.id].values.clone()
    }

    pub fn value_scalar(&self) -> T {
        let inner = self.tape.inner.borrow();
        debug_assert_eq!(inner.nodes[self.id].values.len(), 1);
        inner.nodes[self.id].values[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.tape.inner.borrow().grads[self.id].clone()
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        assert_eq!(self.shape.len(), 2, "to_matrix needs a rank-2 tensor");
        Matrix::from_vec(self.shape[0], self.shape[1], self.values())
    }

    /// Same values, new constant leaf: cuts the gradient chain.
    pub fn detach(&self) -> DiffTensor<T> {
        self.tape
            .constant(self.values(), self.shape.clone())
            .expect("detach preserves shape")
    }

    fn guard_same_tape(&self, other: &DiffTensor<T>, op: &'static str) -> Result<()> {
        if !self.tape.same_tape(&other.tape) {
            return Err(CoreError::Tape(format!("{op}: operands on different tapes")));
        }
        Ok(())
    }

    pub fn matmul(&self, other: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        self.guard_same_tape(other, "matmul")?;
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(CoreError::DimensionMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        {
            let inner = self.tape.inner.borrow();
            kernels::matmul_into(
                &inner.nodes[self.id].values,
                &inner.nodes[other.id].values,
                &mut out,
                m,
                k,
                n,
            );
        }
        Ok(self.tape.push(
            Op::Matmul {
                a: self.id,
                b: other.id,
            },
            vec![m, n],
            out,
            false,
        ))
    }

    pub fn t(&self) -> Result<DiffTensor<T>> {
        if self.shape.len() != 2 {
            return Err(CoreError::Shape {
                op: "transpose",
                detail: format!("rank-2 required, got {:?}", self.shape),
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![T::zero(); r * c];
        {
            let inner = self.tape.inner.borrow();
            let v = &inner.nodes[self.id].values;
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = v[i * c + j];
                }
            }
        }
        Ok(self
            .tape
            .push(Op::Transpose { a: self.id }, vec![c, r], out, false))
    }

    fn binary(&self, kind: BinKind, other: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        let name = match kind {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
            BinKind::Div => "div",
        };
        self.guard_same_tape(other, name)?;
        if self.shape == other.shape {
            let out: Vec<T> = {
                let inner = self.tape.inner.borrow();
                let av = &inner.nodes[self.id].values;
                let bv = &inner.nodes[other.id].values;
                if kind == BinKind::Div && bv.iter().any(|&v| v == T::zero()) {
                    return Err(CoreError::Domain {
                        op: "div",
                        detail: "zero divisor".into(),
                    });
                }
                av.iter()
                    .zip(bv)
                    .map(|(&a, &b)| match kind {
                        BinKind::Add => a + b,
                        BinKind::Sub => a - b,
                        BinKind::Mul => a * b,
                        BinKind::Div => a / b,
                    })
                    .collect()
            };
            return Ok(self.tape.push(
                Op::Binary {
                    kind,
                    a: self.id,
                    b: other.id,
                },
                self.shape.clone(),
                out,
                false,
            ));
        }
        // N×D against length-N vector, broadcast across rows.
        if self.shape.len() == 2 && other.shape.len() == 1 && other.shape[0] == self.shape[0] {
            return row_broadcast(kind, self, other);
        }
        if self.shape.len() == 1
            && other.shape.len() == 2
            && self.shape[0] == other.shape[0]
            && matches!(kind, BinKind::Add | BinKind::Mul)
        {
            return row_broadcast(kind, other, self);
        }
        Err(CoreError::DimensionMismatch {
            op: name,
            lhs: self.shape.clone(),
            rhs: other.shape.clone(),
        })
    }

    pub fn add(&self, other: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        self.binary(BinKind::Add, other)
    }

    pub fn sub(&self, other: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        self.binary(BinKind::Sub, other)
    }

    pub fn mul(&self, other: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        self.binary(BinKind::Mul, other)
    }

    pub fn div(&self, other: &DiffTensor<T>) -> Result<DiffTensor<T>> {
        self.binary(BinKind::Div, other)
    }

    fn unary(&self, kind: UnKind) -> Result<DiffTensor<T>> {
        let inner = self.tape.inner.borrow();
        let av = &inner.nodes[self.id].values;
        let out: Vec<T> = match kind {
            UnKind::Exp => av.iter().map(|&a| a.exp()).collect(),
            UnKind::Log => {
                if av.iter().any(|&a| a <= T::zero()) {
                    return Err(CoreError::Domain {
                        op: "log",
                        detail: "nonpositive operand".into(),
                    });
                }
                av.iter().map(|&a| a.ln()).collect()
            }
            UnKind::Relu => av.iter().map(|&a| a.max(T::zero())).collect(),
            UnKind::Tanh => av.iter().map(|&a| a.tanh()).collect(),
            UnKind::Sqrt => {
                if av.iter().any(|&a| a < T::zero()) {
                    return Err(CoreError::Domain {
                        op: "sqrt",
                        detail: "negative operand".into(),
                    });
                }
                av.iter().map(|&a| a.sqrt()).collect()
            }
            UnKind::Softplus => av.iter().map(|&a| kernels::softplus(a)).collect(),
            UnKind::Neg => av.iter().map(|&a| -a).collect(),
        };
        drop(inner);
        Ok(self.tape.push(
            Op::Unary { kind, a: self.id },
            self.shape.clone(),
            out,
            false,
        ))
    }

    pub fn exp(&self) -> Result<DiffTensor<T>> {
        self.unary(UnKind::Exp)
    }

    pub fn log(&self) -> Result<DiffTensor<T>> {
        self.unary(UnKind::Log)
    }

    pub fn relu(&self) -> Result<DiffTensor<T>> {
        self.unary(UnKind::Relu)
    }

    pub fn tanh(&self) -> Result<DiffTensor<T>> {
        self.unary(UnKind::Tanh)
    }

    pub fn sqrt(&self) -> Result<DiffTensor<T>> {
        self.unary(UnKind::Sqrt)
    }

    pub fn softplus(&self) -> Result<DiffTensor<T>> {
        self.unary(UnKind::Softplus)
    }

    pub fn neg(&self) -> Result<DiffTensor<T>> {
        self.unary(UnKind::Neg)
    }

    pub fn scale(&self, c: T) -> Result<DiffTensor<T>> {
        let out: Vec<T> = {
            let inner = self.tape.inner.borrow();
            inner.nodes[self.id].values.iter().map(|&v| v * c).collect()
        };
        Ok(self
            .tape
            .push(Op::Scale { a: self.id, c }, self.shape.clone(), out, false))
    }

    pub fn add_scalar(&self, c: T) -> Result<DiffTensor<T>> {
        let out: Vec<T> = {
            let inner = self.tape.inner.borrow();
            inner.nodes[self.id].values.iter().map(|&v| v + c).collect()
        };
        Ok(self
            .tape
            .push(Op::AddScalar { a: self.id }, self.shape.clone(), out, false))
    }

    pub fn sum_all(&self) -> Result<DiffTensor<T>> {
        let s: T = {
            let inner = self.tape.inner.borrow();
            inner.nodes[self.id].values.iter().copied().sum()
        };
        Ok(self
            .tape
            .push(Op::SumAll { a: self.id }, vec![], vec![s], false))
    }

    pub fn mean_all(&self) -> Result<DiffTensor<T>> {
        let n = self.len();
        self.sum_all()?.scale(T::one() / T::from_usize(n))
    }

    /// N×D → length-N vector of row sums.
    pub fn row_sum(&self) -> Result<DiffTensor<T>> {
        if self.shape.len() != 2 {
            return Err(CoreError::Shape {
                op: "row_sum",
                detail: format!("rank-2 required, got {:?}", self.shape),
            });
        }
        let (n, d) = (self.shape[0], self.shape[1]);
        let out: Vec<T> = {
            let inner = self.tape.inner.borrow();
            let v = &inner.nodes[self.id].values;
            (0..n)
                .map(|i| v[i * d..(i + 1) * d].iter().copied().sum())
                .collect()
        };
        Ok(self
            .tape
            .push(Op::RowSum { a: self.id }, vec![n], out, false))
    }

    /// Mean over rows of -log softmax(row) at the target index;
    /// max-subtracted for
    /// stability.
    pub fn softmax_xent_rows(&self, targets: &[usize]) -> Result<DiffTensor<T>> {
        if self.shape.len() != 2 {
            return Err(CoreError::Shape {
                op: "softmax_xent_rows",
                detail: format!("rank-2 required, got {:?}", self.shape),
            });
        }
        let (n, m) = (self.shape[0], self.shape[1]);
        if targets.len() != n {
            return Err(CoreError::Shape {
                op: "softmax_xent_rows",
                detail: format!("{} targets for {} rows", targets.len(), n),
            });
        }
        for &t in targets {
            if t >= m {
                return Err(CoreError::IndexOutOfBounds {
                    op: "softmax_xent_rows",
                    index: t,
                    bound: m,
                });
            }
        }
        let inner = self.tape.inner.borrow();
        let v = &inner.nodes[self.id].values;
        let mut probs = vec![T::zero(); n * m];
        let mut loss = T::zero();
        for i in 0..n {
            let row = &v[i * m..(i + 1) * m];
            let mx = row.iter().copied().fold(row[0], T::max);
            let mut denom = T::zero();
            for j in 0..m {
                let e = (row[j] - mx).exp();
                probs[i * m + j] = e;
                denom = denom + e;
            }
            for j in 0..m {
                probs[i * m + j] = probs[i * m + j] / denom;
            }
            // -log softmax[t] = log(denom) - (row[t] - mx)
            loss = loss + denom.ln() - (row[targets[i]] - mx);
        }
        loss = loss / T::from_usize(n);
        drop(inner);
        Ok(self.tape.push(
            Op::SoftmaxXent {
                logits: self.id,
                targets: targets.to_vec(),
                probs,
            },
            vec![],
            vec![loss],
            false,
        ))
    }

    /// Cross-correlation: self C×H×W, weight O×C×k×k, bias O.
    pub fn conv2d(
        &self,
        weight: &DiffTensor<T>,
        bias: &DiffTensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<DiffTensor<T>> {
        self.guard_same_tape(weight, "conv2d")?;
        self.guard_same_tape(bias, "conv2d")?;
        if self.shape.len() != 3 || weight.shape.len() != 4 {
            return Err(CoreError::Shape {
                op: "conv2d",
                detail: format!(
                    "need C×H×W input and O×C×k×k kernel, got {:?} and {:?}",
                    self.shape, weight.shape
                ),
            });
        }
        let (c, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        let (o, ck, k1, k2) = (
            weight.shape[0],
            weight.shape[1],
            weight.shape[2],
            weight.shape[3],
        );
        if ck != c || k1 != k2 {
            return Err(CoreError::DimensionMismatch {
                op: "conv2d",
                lhs: self.shape.clone(),
                rhs: weight.shape.clone(),
            });
        }
        let k = k1;
        if k % 2 == 0 {
            return Err(CoreError::Shape {
                op: "conv2d",
                detail: format!("kernel size must be odd, got {k}"),
            });
        }
        if bias.shape != [o] {
            return Err(CoreError::DimensionMismatch {
                op: "conv2d",
                lhs: weight.shape.clone(),
                rhs: bias.shape.clone(),
            });
        }
        if stride == 0 {
            return Err(CoreError::Shape {
                op: "conv2d",
                detail: "stride must be positive".into(),
            });
        }
        let oh = kernels::conv_out_len(h, k, stride, pad);
        let ow = kernels::conv_out_len(w, k, stride, pad);
        if oh < 1 || ow < 1 {
            return Err(CoreError::Shape {
                op: "conv2d",
                detail: format!(
                    "output extent {oh}×{ow} < 1 for input {h}×{w}, k={k}, stride={stride}, pad={pad}"
                ),
            });
        }
        let (oh, ow) = (oh as usize, ow as usize);
        let mut out = vec![T::zero(); o * oh * ow];
        {
            let inner = self.tape.inner.borrow();
            kernels::conv2d_forward(
                &inner.nodes[self.id].values,
                c,
                h,
                w,
                &inner.nodes[weight.id].values,
                o,
                k,
                stride,
                pad,
                &inner.nodes[bias.id].values,
                &mut out,
                oh,
                ow,
            );
        }
        Ok(self.tape.push(
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                b: bias.id,
                stride,
                pad,
            },
            vec![o, oh, ow],
            out,
            false,
        ))
    }

    pub fn upsample_nearest(&self, factor: usize) -> Result<DiffTensor<T>> {
        if self.shape.len() != 3 {
            return Err(CoreError::Shape {
                op: "upsample_nearest",
                detail: format!("rank-3 required, got {:?}", self.shape),
            });
        }
        let (c, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        let mut out = vec![T::zero(); c * h * factor * w * factor];
        {
            let inner = self.tape.inner.borrow();
            kernels::upsample_nearest_forward(
                &inner.nodes[self.id].values,
                c,
                h,
                w,
                factor,
                &mut out,
            );
        }
        Ok(self.tape.push(
            Op::Upsample {
                x: self.id,
                factor,
            },
            vec![c, h * factor, w * factor],
            out,
            false,
        ))
    }

    /// Gather rows from a C×H×W map at flat spatial indices → N×C.
    pub fn gather_spatial(&self, idx: &[usize]) -> Result<DiffTensor<T>> {
        if self.shape.len() != 3 {
            return Err(CoreError::Shape {
                op: "gather_spatial",
                detail: format!("rank-3 required, got {:?}", self.shape),
            });
        }
        let (c, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        for &p in idx {
            if p >= h * w {
                return Err(CoreError::IndexOutOfBounds {
                    op: "gather_spatial",
                    index: p,
                    bound: h * w,
                });
            }
        }
        let n = idx.len();
        let mut out = vec![T::zero(); n * c];
        {
            let inner = self.tape.inner.borrow();
            let v = &inner.nodes[self.id].values;
            for (row, &pos) in idx.iter().enumerate() {
                for ch in 0..c {
                    out[row * c + ch] = v[ch * h * w + pos];
                }
            }
        }
        Ok(self.tape.push(
            Op::GatherSpatial {
                x: self.id,
                idx: idx.to_vec(),
            },
            vec![n, c],
            out,
            false,
        ))
    }
}

#[cfg(test)]
mod tests;
