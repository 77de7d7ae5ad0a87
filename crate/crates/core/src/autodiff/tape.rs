//! Define-by-run reverse-mode tape.
//!
//! Every op takes tensors, computes the forward value eagerly and, when at
//! least one input is tracked and recording is on, appends a node holding
//! whatever the backward rule needs. Node ids increase monotonically, so a
//! single reverse sweep over the node list is a valid topological order.

use std::sync::Arc;

use super::tensor::{NodeId, Tensor};
use crate::error::{Error, Result};

/// Layer-norm variance epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Backward rule for an op defined outside this module.
///
/// `backward` receives the upstream gradient of the op output and returns one
/// gradient buffer per input (same order as given to [`Tape::custom`]), or
/// `None` for inputs that do not need one.
pub trait CustomBackward: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, grad_out: &[f64]) -> Vec<Option<Vec<f64>>>;
}

type Buf = Arc<Vec<f64>>;

enum Op {
    Leaf,
    Add { a_shape: Vec<usize>, b_shape: Vec<usize>, out_shape: Vec<usize> },
    Sub { a_shape: Vec<usize>, b_shape: Vec<usize>, out_shape: Vec<usize> },
    Mul { a: Buf, b: Buf, a_shape: Vec<usize>, b_shape: Vec<usize>, out_shape: Vec<usize> },
    MatMul { a: Buf, b: Buf, m: usize, k: usize, n: usize },
    Sum,
    SumLast { width: usize },
    Mean { len: usize },
    Square { x: Buf },
    Sqrt { y: Buf },
    Abs { x: Buf },
    Hinge { x: Buf, c: f64 },
    Relu { x: Buf },
    Softplus { x: Buf },
    Sigmoid { y: Buf },
    Tanh { y: Buf },
    Sin { x: Buf },
    Cos { x: Buf },
    Concat { widths: Vec<usize> },
    Slice { width: usize, start: usize, len: usize },
    LayerNorm { xhat: Vec<f64>, rstd: Vec<f64>, gain: Option<Buf>, width: usize },
    Scale(f64),
    Reshape,
    Custom(Box<dyn CustomBackward>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::MatMul { .. } => "matmul",
            Op::Sum => "sum",
            Op::SumLast { .. } => "sum_last",
            Op::Mean { .. } => "mean",
            Op::Square { .. } => "square",
            Op::Sqrt { .. } => "sqrt",
            Op::Abs { .. } => "abs",
            Op::Hinge { .. } => "hinge",
            Op::Relu { .. } => "relu",
            Op::Softplus { .. } => "softplus",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Tanh { .. } => "tanh",
            Op::Sin { .. } => "sin",
            Op::Cos { .. } => "cos",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Scale(_) => "scale",
            Op::Reshape => "reshape",
            Op::Custom(c) => c.name(),
        }
    }
}

struct Node {
    op: Op,
    parents: Vec<Option<NodeId>>,
    len: usize,
}

/// Append-only computation record.
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `t`; zeros when `t` was unreachable or untracked.
    pub fn wrt(&self, t: &Tensor) -> Vec<f64> {
        match t.node().and_then(|id| self.grads.get(id)).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => vec![0.0; t.len()],
        }
    }

    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        t.node()
            .and_then(|id| self.grads.get(id))
            .and_then(|g| g.as_deref())
    }
}

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
}

/// Numpy-style broadcast of two shapes aligned on trailing dimensions.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out` (zero on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let off = rank - shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + off] = if shape[i] == 1 && out[i + off] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// How operand `s` maps onto `out`.
enum BMap {
    Same,
    /// Operand repeats every `period` output elements (trailing suffix).
    Cycle(usize),
    General(Vec<usize>),
}

fn bmap(s: &[usize], out: &[usize]) -> BMap {
    let n: usize = s.iter().product();
    let total: usize = out.iter().product();
    if n == total {
        return BMap::Same;
    }
    // trailing suffix (ignoring leading 1s) matches output's trailing dims
    let trimmed: Vec<usize> = s.iter().copied().skip_while(|&d| d == 1).collect();
    if out.len() >= trimmed.len() && out[out.len() - trimmed.len()..] == trimmed[..] {
        return BMap::Cycle(n.max(1));
    }
    BMap::General(broadcast_strides(s, out))
}

fn index_of(map: &BMap, out_idx: usize, out_shape: &[usize]) -> usize {
    match map {
        BMap::Same => out_idx,
        BMap::Cycle(p) => out_idx % p,
        BMap::General(strides) => {
            let mut rem = out_idx;
            let mut idx = 0;
            for d in (0..out_shape.len()).rev() {
                let e = out_shape[d];
                let c = rem % e;
                rem /= e;
                idx += c * strides[d];
            }
            idx
        }
    }
}

fn binary_broadcast(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let total: usize = out_shape.iter().product();
    let ma = bmap(a_shape, out_shape);
    let mb = bmap(b_shape, out_shape);
    match (&ma, &mb) {
        (BMap::Same, BMap::Same) => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
        (BMap::Same, BMap::Cycle(p)) => {
            let mut out = Vec::with_capacity(total);
            for chunk in a.chunks(*p) {
                out.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
            }
            out
        }
        _ => (0..total)
            .map(|i| f(a[index_of(&ma, i, out_shape)], b[index_of(&mb, i, out_shape)]))
            .collect(),
    }
}

/// Sum `g` (laid out over `out_shape`) down to `shape`.
fn reduce_to(g: &[f64], shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    let n: usize = shape.iter().product();
    match bmap(shape, out_shape) {
        BMap::Same => g.to_vec(),
        BMap::Cycle(p) => {
            let mut acc = vec![0.0; n];
            for chunk in g.chunks(p) {
                for (a, &v) in acc.iter_mut().zip(chunk) {
                    *a += v;
                }
            }
            acc
        }
        m @ BMap::General(_) => {
            let mut acc = vec![0.0; n];
            for (i, &v) in g.iter().enumerate() {
                acc[index_of(&m, i, out_shape)] += v;
            }
            acc
        }
    }
}

/// `c = a·b` for row-major `a: m×k`, `b: k×n` (optionally transposed views).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    // strides: logical a is m×k; stored as m×k (rsa=k, csa=1) or as k×m (rsa=1, csa=m)
    let (rsa, csa) = if a_t { (1isize, m as isize) } else { (k as isize, 1isize) };
    let (rsb, csb) = if b_t { (1isize, k as isize) } else { (n as isize, 1isize) };
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: slices cover m*k, k*n and m*n elements with the given strides.
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

fn add_into(dst: &mut Option<Vec<f64>>, src: Vec<f64>) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(src) {
                *a += b;
            }
        }
        None => *dst = Some(src),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that never records; ops only compute forward values.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register `value` as a differentiable leaf.
    pub fn leaf(&mut self, value: &Tensor) -> Tensor {
        if !self.recording {
            return value.detach();
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            parents: Vec::new(),
            len: value.len(),
        });
        Tensor::from_parts(value.shape().to_vec(), Arc::clone(value.data_arc()), Some(id))
    }

    fn push(&mut self, op: Op, parents: Vec<Option<NodeId>>, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        let data = Arc::new(data);
        if !self.recording || parents.iter().all(|p| p.is_none()) {
            return Tensor::from_parts(shape, data, None);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            parents,
            len: data.len(),
        });
        Tensor::from_parts(shape, data, Some(id))
    }

    fn tracking(&self, ts: &[&Tensor]) -> bool {
        self.recording && ts.iter().any(|t| t.is_tracked())
    }

    // ---- binary elementwise ------------------------------------------------

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let out_shape = broadcast_shape(a.shape(), b.shape())
            .ok_or_else(|| Error::shape("add", shape_str(a.shape()), shape_str(b.shape())))?;
        let data = binary_broadcast(a.data(), a.shape(), b.data(), b.shape(), &out_shape, |x, y| x + y);
        let op = Op::Add {
            a_shape: a.shape().to_vec(),
            b_shape: b.shape().to_vec(),
            out_shape: out_shape.clone(),
        };
        Ok(self.push(op, vec![a.node(), b.node()], out_shape, data))
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let out_shape = broadcast_shape(a.shape(), b.shape())
            .ok_or_else(|| Error::shape("sub", shape_str(a.shape()), shape_str(b.shape())))?;
        let data = binary_broadcast(a.data(), a.shape(), b.data(), b.shape(), &out_shape, |x, y| x - y);
        let op = Op::Sub {
            a_shape: a.shape().to_vec(),
            b_shape: b.shape().to_vec(),
            out_shape: out_shape.clone(),
        };
        Ok(self.push(op, vec![a.node(), b.node()], out_shape, data))
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let out_shape = broadcast_shape(a.shape(), b.shape())
            .ok_or_else(|| Error::shape("mul", shape_str(a.shape()), shape_str(b.shape())))?;
        let data = binary_broadcast(a.data(), a.shape(), b.data(), b.shape(), &out_shape, |x, y| x * y);
        let op = if self.tracking(&[a, b]) {
            Op::Mul {
                a: Arc::clone(a.data_arc()),
                b: Arc::clone(b.data_arc()),
                a_shape: a.shape().to_vec(),
                b_shape: b.shape().to_vec(),
                out_shape: out_shape.clone(),
            }
        } else {
            Op::Reshape
        };
        Ok(self.push(op, vec![a.node(), b.node()], out_shape, data))
    }

    /// `[m,k] · [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("[m,k]·[k,n], lhs {:?}", a.shape()),
                shape_str(b.shape()),
            ));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut c, 0.0);
        let op = if self.tracking(&[a, b]) {
            Op::MatMul {
                a: Arc::clone(a.data_arc()),
                b: Arc::clone(b.data_arc()),
                m,
                k,
                n,
            }
        } else {
            Op::Reshape
        };
        Ok(self.push(op, vec![a.node(), b.node()], vec![m, n], c))
    }

    // ---- reductions ----------------------------------------------------------

    pub fn sum(&mut self, x: &Tensor) -> Tensor {
        let s: f64 = x.data().iter().sum();
        self.push(Op::Sum, vec![x.node()], vec![1], vec![s])
    }

    /// Sum over the last axis, keeping it with extent 1.
    pub fn sum_last(&mut self, x: &Tensor) -> Tensor {
        let w = x.last_dim();
        let data: Vec<f64> = x.data().chunks(w.max(1)).map(|c| c.iter().sum()).collect();
        let mut shape = x.shape().to_vec();
        if let Some(last) = shape.last_mut() {
            *last = 1;
        }
        self.push(Op::SumLast { width: w }, vec![x.node()], shape, data)
    }

    pub fn mean(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.is_empty() {
            return Err(Error::shape("mean", "non-empty tensor", "0 elements"));
        }
        let len = x.len();
        let s: f64 = x.data().iter().sum::<f64>() / len as f64;
        Ok(self.push(Op::Mean { len }, vec![x.node()], vec![1], vec![s]))
    }

    // ---- unary elementwise --------------------------------------------------

    fn unary(&mut self, x: &Tensor, f: impl Fn(f64) -> f64, make: impl FnOnce(Buf, Buf) -> Op) -> Tensor {
        let data: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
        if !self.tracking(&[x]) {
            return Tensor::from_parts(x.shape().to_vec(), Arc::new(data), None);
        }
        let data = Arc::new(data);
        let op = make(Arc::clone(x.data_arc()), Arc::clone(&data));
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            parents: vec![x.node()],
            len: data.len(),
        });
        Tensor::from_parts(x.shape().to_vec(), data, Some(id))
    }

    pub fn square(&mut self, x: &Tensor) -> Tensor {
        self.unary(x, |v| v * v, |x, _| Op::Square { x })
    }

    pub fn sqrt(&mut self, x: &Tensor) -> Tensor {
        self.unary(x, |v| v.sqrt(), |_, y| Op::Sqrt { y })
    }

    pub fn abs(&mut self, x: &Tensor) -> Tensor {
        self.unary(x, |v| v.abs(), |x, _| Op::Abs { x })
    }

    /// `max(x, c)` elementwise.
    pub fn hinge(&mut self, x: &Tensor, c: f64) -> Tensor {
        self.unary(x, |v| v.max(c), |x, _| Op::Hinge { x, c })
    }

    pub fn relu(&mut self, x: &Tensor) -> Tensor {
        self.unary(x, |v| v.max(0.0), |x, _| Op::Relu { x })
    }

    pub fn softplus(&mut self, x: &Tensor) -> Tensor {
        self.unary(x, softplus, |x, _| Op::Softplus { x })
    }

    pub fn sigmoid(&mut self, x: &Tensor) -> Tensor {
        self.unary(x, sigmoid, |_, y| Op::Sigmoid { y })
    }

    pub fn tanh(&mut self, x: &Tensor) -> Tensor {
        self.unary(x, f64::tanh, |_, y| Op::Tanh { y })
    }

    pub fn sin(&mut self, x: &Tensor) -> Tensor {
        self.unary(x, f64::sin, |x, _| Op::Sin { x })
    }

    pub fn cos(&mut self, x: &Tensor) -> Tensor {
        self.unary(x, f64::cos, |x, _| Op::Cos { x })
    }

    pub fn scale(&mut self, x: &Tensor, s: f64) -> Tensor {
        let data: Vec<f64> = x.data().iter().map(|&v| v * s).collect();
        self.push(Op::Scale(s), vec![x.node()], x.shape().to_vec(), data)
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&mut self, x: &Tensor, c: f64) -> Tensor {
        let data: Vec<f64> = x.data().iter().map(|&v| v + c).collect();
        self.push(Op::Scale(1.0), vec![x.node()], x.shape().to_vec(), data)
    }

    // ---- structural ---------------------------------------------------------

    /// Concatenate along the last axis; all leading dims must agree.
    pub fn concat(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "at least one input", "none"))?;
        let lead = &first.shape()[..first.shape().len() - 1];
        let rows = first.rows();
        for p in parts {
            if p.shape().len() != first.shape().len() || &p.shape()[..p.shape().len() - 1] != lead {
                return Err(Error::shape(
                    "concat",
                    format!("leading dims {lead:?}"),
                    shape_str(p.shape()),
                ));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| p.last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let parents = parts.iter().map(|p| p.node()).collect();
        Ok(self.push(Op::Concat { widths }, parents, shape, data))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice(&mut self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let w = x.last_dim();
        if start + len > w {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} within last axis", start + len),
                shape_str(x.shape()),
            ));
        }
        let rows = x.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&x.data()[r * w + start..r * w + start + len]);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Ok(self.push(Op::Slice { width: w, start, len }, vec![x.node()], shape, data))
    }

    /// Same buffer, new shape.
    pub fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != x.len() {
            return Err(Error::shape("reshape", format!("{} elements", x.len()), shape_str(shape)));
        }
        if !self.tracking(&[x]) {
            return Ok(Tensor::from_parts(shape.to_vec(), Arc::clone(x.data_arc()), None));
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Reshape,
            parents: vec![x.node()],
            len: n,
        });
        Ok(Tensor::from_parts(shape.to_vec(), Arc::clone(x.data_arc()), Some(id)))
    }

    /// Normalize over the last axis, then apply optional gain and bias.
    pub fn layer_norm(&mut self, x: &Tensor, gain: Option<&Tensor>, bias: Option<&Tensor>) -> Result<Tensor> {
        let w = x.last_dim();
        if w == 0 {
            return Err(Error::shape("layer_norm", "last axis ≥ 1", shape_str(x.shape())));
        }
        for t in [gain, bias].into_iter().flatten() {
            if t.len() != w {
                return Err(Error::shape("layer_norm", format!("affine of length {w}"), shape_str(t.shape())));
            }
        }
        let rows = x.rows();
        let mut xhat = Vec::with_capacity(x.len());
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x.data()[r * w..(r + 1) * w];
            let mu = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / w as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(rs);
            xhat.extend(row.iter().map(|v| (v - mu) * rs));
        }
        let mut out = xhat.clone();
        if let Some(g) = gain {
            for (i, v) in out.iter_mut().enumerate() {
                *v *= g.data()[i % w];
            }
        }
        if let Some(b) = bias {
            for (i, v) in out.iter_mut().enumerate() {
                *v += b.data()[i % w];
            }
        }
        let parents = vec![x.node(), gain.and_then(|g| g.node()), bias.and_then(|b| b.node())];
        let tracked = self.recording && parents.iter().any(|p| p.is_some());
        let op = if tracked {
            Op::LayerNorm {
                xhat,
                rstd,
                gain: gain.map(|g| Arc::clone(g.data_arc())),
                width: w,
            }
        } else {
            Op::Reshape
        };
        Ok(self.push(op, parents, x.shape().to_vec(), out))
    }

    /// Record an op whose forward value was computed by the caller.
    pub fn custom(
        &mut self,
        inputs: &[&Tensor],
        shape: Vec<usize>,
        data: Vec<f64>,
        backward: Box<dyn CustomBackward>,
    ) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(backward.name(), format!("{n} elements"), format!("{}", data.len())));
        }
        let parents = inputs.iter().map(|t| t.node()).collect();
        Ok(self.push(Op::Custom(backward), parents, shape, data))
    }

    // ---- backward -------------------------------------------------------------

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: &Tensor) -> Result<Gradients> {
        if root.len() != 1 {
            return Err(Error::NonScalarRoot(root.shape().to_vec()));
        }
        let root_id = root.node().ok_or(Error::DetachedRoot)?;
        if root_id >= self.nodes.len() {
            return Err(Error::DetachedRoot);
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root_id] = Some(vec![1.0]);
        for id in (0..=root_id).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            debug_assert_eq!(g.len(), node.len, "gradient length for {}", node.op.name());
            let pg = self.node_backward(node, &g);
            for (parent, grad) in node.parents.iter().zip(pg) {
                if let (Some(p), Some(gr)) = (parent, grad) {
                    add_into(&mut grads[*p], gr);
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, node: &Node, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let want = |i: usize| node.parents.get(i).copied().flatten().is_some();
        let map1 = |f: &dyn Fn(usize) -> f64| -> Vec<Option<Vec<f64>>> { vec![Some((0..g.len()).map(f).collect())] };
        match &node.op {
            Op::Leaf => vec![],
            Op::Add { a_shape, b_shape, out_shape } => vec![
                want(0).then(|| reduce_to(g, a_shape, out_shape)),
                want(1).then(|| reduce_to(g, b_shape, out_shape)),
            ],
            Op::Sub { a_shape, b_shape, out_shape } => vec![
                want(0).then(|| reduce_to(g, a_shape, out_shape)),
                want(1).then(|| {
                    let mut r = reduce_to(g, b_shape, out_shape);
                    r.iter_mut().for_each(|v| *v = -*v);
                    r
                }),
            ],
            Op::Mul { a, b, a_shape, b_shape, out_shape } => {
                let ga = want(0).then(|| {
                    let prod = binary_broadcast(g, out_shape, b, b_shape, out_shape, |x, y| x * y);
                    reduce_to(&prod, a_shape, out_shape)
                });
                let gb = want(1).then(|| {
                    let prod = binary_broadcast(g, out_shape, a, a_shape, out_shape, |x, y| x * y);
                    reduce_to(&prod, b_shape, out_shape)
                });
                vec![ga, gb]
            }
            Op::MatMul { a, b, m, k, n } => {
                let ga = want(0).then(|| {
                    let mut out = vec![0.0; m * k];
                    gemm(*m, *n, *k, g, false, b, true, &mut out, 0.0);
                    out
                });
                let gb = want(1).then(|| {
                    let mut out = vec![0.0; k * n];
                    gemm(*k, *m, *n, a, true, g, false, &mut out, 0.0);
                    out
                });
                vec![ga, gb]
            }
            Op::Sum => {
                let p = node.parents[0].map(|p| self.nodes[p].len).unwrap_or(0);
                vec![Some(vec![g[0]; p])]
            }
            Op::SumLast { width } => {
                let mut out = Vec::with_capacity(g.len() * width);
                for &v in g {
                    out.extend(std::iter::repeat(v).take(*width));
                }
                vec![Some(out)]
            }
            Op::Mean { len } => vec![Some(vec![g[0] / *len as f64; *len])],
            Op::Square { x } => map1(&|i| 2.0 * x[i] * g[i]),
            Op::Sqrt { y } => map1(&|i| if y[i] > 0.0 { 0.5 * g[i] / y[i] } else { 0.0 }),
            Op::Abs { x } => map1(&|i| {
                if x[i] > 0.0 {
                    g[i]
                } else if x[i] < 0.0 {
                    -g[i]
                } else {
                    0.0
                }
            }),
            Op::Hinge { x, c } => map1(&|i| if x[i] > *c { g[i] } else { 0.0 }),
            Op::Relu { x } => map1(&|i| if x[i] > 0.0 { g[i] } else { 0.0 }),
            Op::Softplus { x } => map1(&|i| sigmoid(x[i]) * g[i]),
            Op::Sigmoid { y } => map1(&|i| y[i] * (1.0 - y[i]) * g[i]),
            Op::Tanh { y } => map1(&|i| (1.0 - y[i] * y[i]) * g[i]),
            Op::Sin { x } => map1(&|i| x[i].cos() * g[i]),
            Op::Cos { x } => map1(&|i| -x[i].sin() * g[i]),
            Op::Scale(s) => map1(&|i| s * g[i]),
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Concat { widths } => {
                let total: usize = widths.iter().sum();
                let rows = g.len() / total.max(1);
                let mut out: Vec<Option<Vec<f64>>> = widths
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| want(i).then(|| Vec::with_capacity(rows * w)))
                    .collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for (slot, &w) in out.iter_mut().zip(widths) {
                        if let Some(v) = slot {
                            v.extend_from_slice(&g[off..off + w]);
                        }
                        off += w;
                    }
                }
                out
            }
            Op::Slice { width, start, len } => {
                let rows = g.len() / (*len).max(1);
                let mut out = vec![0.0; rows * width];
                for r in 0..rows {
                    out[r * width + start..r * width + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![Some(out)]
            }
            Op::LayerNorm { xhat, rstd, gain, width } => {
                let w = *width;
                let rows = rstd.len();
                let gx = want(0).then(|| {
                    let mut out = vec![0.0; g.len()];
                    for r in 0..rows {
                        let gr = &g[r * w..(r + 1) * w];
                        let xr = &xhat[r * w..(r + 1) * w];
                        let dxhat: Vec<f64> = match gain {
                            Some(gn) => gr.iter().zip(gn.iter()).map(|(a, b)| a * b).collect(),
                            None => gr.to_vec(),
                        };
                        let m1 = dxhat.iter().sum::<f64>() / w as f64;
                        let m2 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / w as f64;
                        for j in 0..w {
                            out[r * w + j] = rstd[r] * (dxhat[j] - m1 - xr[j] * m2);
                        }
                    }
                    out
                });
                let ggain = want(1).then(|| {
                    let mut out = vec![0.0; w];
                    for (i, (&gi, &xi)) in g.iter().zip(xhat).enumerate() {
                        out[i % w] += gi * xi;
                    }
                    out
                });
                let gbias = want(2).then(|| {
                    let mut out = vec![0.0; w];
                    for (i, &gi) in g.iter().enumerate() {
                        out[i % w] += gi;
                    }
                    out
                });
                vec![gx, ggain, gbias]
            }
            Op::Custom(c) => c.backward(g),
        }
    }

    /// Parent ids of node `id` (for structural checks).
    pub fn parents_of(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id].parents.iter().flatten().copied().collect()
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id].op.name()
    }
}
