//! The recording tape: every op evaluates eagerly and appends a node.

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Result, TensorError};
use crate::kernels::{self, ConvGeom, MatGeom};
use crate::tensor::{numel, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Conv2d { stride: usize, pad: usize },
    /// inputs: (output adjoint, kernel)
    Conv2dInputGrad { stride: usize, pad: usize, input_shape: Vec<usize> },
    /// inputs: (input, output adjoint)
    Conv2dWeightGrad { stride: usize, pad: usize, weight_shape: Vec<usize> },
    MatMul { ta: bool, tb: bool },
    Add,
    Mul,
    Scale(T),
    AddScalar(T),
    LeakyRelu(T),
    Tanh,
    Sigmoid,
    Abs,
    Square,
    Sqrt,
    Recip,
    Clamp { lo: T, hi: T },
    BatchNorm { eps: T, inv_std: Vec<T> },
    /// inputs: (output adjoint, normalised output)
    BatchNormGrad { inv_std: Vec<T> },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Embed { axis: usize, start: usize, full: usize },
    Reshape { shape: Vec<usize> },
    SumTo { shape: Vec<usize> },
    BroadcastTo { shape: Vec<usize> },
    Upsample { factor: usize },
    SumPool { factor: usize },
}

impl<T> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Conv2dInputGrad { .. } => "conv2d_input_grad",
            Op::Conv2dWeightGrad { .. } => "conv2d_weight_grad",
            Op::MatMul { .. } => "matmul",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Abs => "abs",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::Recip => "recip",
            Op::Clamp { .. } => "clamp",
            Op::BatchNorm { .. } => "batch_norm",
            Op::BatchNormGrad { .. } => "batch_norm_grad",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Embed { .. } => "embed",
            Op::Reshape { .. } => "reshape",
            Op::SumTo { .. } => "sum_to",
            Op::BroadcastTo { .. } => "broadcast_to",
            Op::Upsample { .. } => "upsample",
            Op::SumPool { .. } => "sum_pool",
        }
    }
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub inputs: Vec<NodeId>,
}

/// Records eagerly evaluated operations so they can be differentiated in
/// reverse. Nodes are append-only, so inputs always precede their users.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Batch statistics produced by a training-mode [`Tape::batch_norm`].
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: Vec::new(),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>, value: Tensor<T>) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node { value, op, inputs });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records `op` after evaluating it on the current input values.
    pub(crate) fn apply(&mut self, op: Op<T>, inputs: Vec<NodeId>) -> Result<NodeId> {
        let value = {
            let vals: Vec<&Tensor<T>> = inputs.iter().map(|&i| self.value(i)).collect();
            eval(&op, &vals)?
        };
        self.push(op, inputs, value)
    }

    /// Re-evaluates every recorded op from its recorded inputs.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                _ => {
                    let vals: Vec<&Tensor<T>> = node.inputs.iter().map(|i| &values[i.0]).collect();
                    eval(&node.op, &vals)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        self.apply(Op::Conv2d { stride, pad }, vec![x, w])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, false)
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        self.apply(Op::MatMul { ta, tb }, vec![a, b])
    }

    /// Fully connected layer: `x [N, in] · w [in, out] + b [out]`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, vec![a, b])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let r = self.recip(b)?;
        self.mul(a, r)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::Scale(T::lit(c)), vec![x])
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::AddScalar(T::lit(c)), vec![x])
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.apply(Op::LeakyRelu(T::lit(slope)), vec![x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Tanh, vec![x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Sigmoid, vec![x])
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Abs, vec![x])
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Square, vec![x])
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Sqrt, vec![x])
    }

    pub fn recip(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Recip, vec![x])
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if lo > hi {
            return Err(TensorError::InvalidArgument(format!("clamp bounds {lo} > {hi}")));
        }
        self.apply(
            Op::Clamp {
                lo: T::lit(lo),
                hi: T::lit(hi),
            },
            vec![x],
        )
    }

    /// Training-mode batch normalisation (no affine terms) over every axis
    /// except the channel axis 1.
    pub fn batch_norm(&mut self, x: NodeId, eps: f64) -> Result<(NodeId, BatchStats<T>)> {
        let shape = self.shape(x);
        if shape.len() < 2 || shape[0] * numel(&shape[2..]) < 2 {
            return Err(shape_err("batch_norm", format!("needs >= 2 values per channel, got {shape:?}")));
        }
        let eps = T::lit(eps);
        let (value, stats) = kernels::batch_norm(self.value(x), eps);
        let id = self.push(
            Op::BatchNorm {
                eps,
                inv_std: stats.inv_std,
            },
            vec![x],
            value,
        )?;
        Ok((
            id,
            BatchStats {
                mean: stats.mean,
                var: stats.var,
            },
        ))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        self.apply(Op::Concat { axis }, parts.to_vec())
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        self.apply(Op::Slice { axis, start, len }, vec![x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.apply(Op::Reshape { shape: shape.to_vec() }, vec![x])
    }

    pub fn sum_to(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        self.apply(Op::SumTo { shape: shape.to_vec() }, vec![x])
    }

    pub fn broadcast_to(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        self.apply(Op::BroadcastTo { shape: shape.to_vec() }, vec![x])
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::SumTo { shape: Vec::new() }, vec![x])
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Mean over `axes`, which are kept with extent 1.
    pub fn mean_axes(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let mut shape = self.shape(x).to_vec();
        let mut count = 1;
        for &a in axes {
            if a >= shape.len() {
                return Err(shape_err("mean", format!("axis {a} out of range for {shape:?}")));
            }
            count *= shape[a];
            shape[a] = 1;
        }
        let s = self.sum_to(x, &shape)?;
        self.scale(s, 1.0 / count as f64)
    }

    pub fn upsample_nearest(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        self.apply(Op::Upsample { factor }, vec![x])
    }

    /// Generic entry point keyed by [`OpKind`], mainly for table-driven
    /// checks. Model code calls the typed methods directly.
    pub fn record(&mut self, kind: OpKind, inputs: &[NodeId], attrs: &Attrs) -> Result<NodeId> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(shape_err(kind.name(), format!("expected {n} inputs, got {}", inputs.len())))
            }
        };
        let need = |v: Option<usize>, attr: &'static str| {
            v.ok_or(TensorError::MissingAttr { op: kind.name(), attr })
        };
        match kind {
            OpKind::Conv2d => {
                arity(2)?;
                self.conv2d(inputs[0], inputs[1], attrs.stride.unwrap_or(1), attrs.pad.unwrap_or(0))
            }
            OpKind::Conv2dTransposeOrUpsample => {
                let f = attrs.factor.unwrap_or(2);
                match inputs.len() {
                    1 => self.upsample_nearest(inputs[0], f),
                    2 => {
                        let up = self.upsample_nearest(inputs[0], f)?;
                        self.conv2d(up, inputs[1], attrs.stride.unwrap_or(1), attrs.pad.unwrap_or(0))
                    }
                    n => Err(shape_err(kind.name(), format!("expected 1 or 2 inputs, got {n}"))),
                }
            }
            OpKind::Dense => match inputs.len() {
                2 => self.dense(inputs[0], inputs[1], None),
                3 => self.dense(inputs[0], inputs[1], Some(inputs[2])),
                n => Err(shape_err(kind.name(), format!("expected 2 or 3 inputs, got {n}"))),
            },
            OpKind::LeakyRelu => {
                arity(1)?;
                self.leaky_relu(inputs[0], attrs.slope.unwrap_or(0.2))
            }
            OpKind::Relu => {
                arity(1)?;
                self.relu(inputs[0])
            }
            OpKind::Tanh => {
                arity(1)?;
                self.tanh(inputs[0])
            }
            OpKind::Sigmoid => {
                arity(1)?;
                self.sigmoid(inputs[0])
            }
            OpKind::BatchNorm => {
                arity(1)?;
                Ok(self.batch_norm(inputs[0], attrs.eps.unwrap_or(1e-5))?.0)
            }
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Concat => self.concat(inputs, attrs.axis.unwrap_or(1)),
            OpKind::Reshape => {
                arity(1)?;
                let shape = attrs.shape.clone().ok_or(TensorError::MissingAttr {
                    op: kind.name(),
                    attr: "shape",
                })?;
                self.reshape(inputs[0], &shape)
            }
            OpKind::Mean => {
                arity(1)?;
                match &attrs.axes {
                    Some(axes) => self.mean_axes(inputs[0], axes),
                    None => self.mean(inputs[0]),
                }
            }
            OpKind::Sum => {
                arity(1)?;
                match &attrs.axes {
                    Some(axes) => {
                        let mut shape = self.shape(inputs[0]).to_vec();
                        for &a in axes {
                            need((a < shape.len()).then_some(a), "axes")?;
                            shape[a] = 1;
                        }
                        self.sum_to(inputs[0], &shape)
                    }
                    None => self.sum(inputs[0]),
                }
            }
            OpKind::Abs => {
                arity(1)?;
                self.abs(inputs[0])
            }
            OpKind::Square => {
                arity(1)?;
                self.square(inputs[0])
            }
            OpKind::Sqrt => {
                arity(1)?;
                self.sqrt(inputs[0])
            }
            OpKind::Clamp => {
                arity(1)?;
                self.clamp(inputs[0], attrs.lo.unwrap_or(0.0), attrs.hi.unwrap_or(1.0))
            }
        }
    }
}

/// Named primitive kinds accepted by [`Tape::record`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv2d,
    Conv2dTransposeOrUpsample,
    Dense,
    LeakyRelu,
    Relu,
    Tanh,
    Sigmoid,
    BatchNorm,
    Add,
    Mul,
    Concat,
    Reshape,
    Mean,
    Sum,
    Abs,
    Square,
    Sqrt,
    Clamp,
}

impl OpKind {
    pub const ALL: [OpKind; 18] = [
        OpKind::Conv2d,
        OpKind::Conv2dTransposeOrUpsample,
        OpKind::Dense,
        OpKind::LeakyRelu,
        OpKind::Relu,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::BatchNorm,
        OpKind::Add,
        OpKind::Mul,
        OpKind::Concat,
        OpKind::Reshape,
        OpKind::Mean,
        OpKind::Sum,
        OpKind::Abs,
        OpKind::Square,
        OpKind::Sqrt,
        OpKind::Clamp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::Conv2dTransposeOrUpsample => "conv2d_transpose_or_upsample",
            OpKind::Dense => "dense",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::BatchNorm => "batch_norm",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Concat => "concat",
            OpKind::Reshape => "reshape",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::Abs => "abs",
            OpKind::Square => "square",
            OpKind::Sqrt => "sqrt",
            OpKind::Clamp => "clamp",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TensorError::UnknownOp(s.to_string()))
    }
}

/// Optional attributes for [`Tape::record`]; unset fields take the op's
/// default.
#[derive(Clone, Debug, Default)]
pub struct Attrs {
    pub stride: Option<usize>,
    pub pad: Option<usize>,
    pub factor: Option<usize>,
    pub axis: Option<usize>,
    pub axes: Option<Vec<usize>>,
    pub shape: Option<Vec<usize>>,
    pub slope: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub eps: Option<f64>,
}

fn unary<T: Real>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    x.map(f)
}

/// Forward evaluation of a single op.
pub(crate) fn eval<T: Real>(op: &Op<T>, xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let name = op.name();
    let arity = |n: usize| -> Result<()> {
        if xs.len() == n {
            Ok(())
        } else {
            Err(shape_err(name, format!("expected {n} inputs, got {}", xs.len())))
        }
    };
    let out = match op {
        Op::Leaf => return Err(TensorError::InvalidArgument("leaf has no forward rule".into())),
        Op::Conv2d { stride, pad } => {
            arity(2)?;
            let g = ConvGeom::new(xs[0].shape(), xs[1].shape(), *stride, *pad).ok_or_else(|| {
                shape_err(name, format!("input {:?} kernel {:?}", xs[0].shape(), xs[1].shape()))
            })?;
            kernels::conv2d(xs[0].data(), xs[1].data(), &g)
        }
        Op::Conv2dInputGrad { stride, pad, input_shape } => {
            arity(2)?;
            let g = ConvGeom::new(input_shape, xs[1].shape(), *stride, *pad)
                .filter(|g| g.output_shape() == xs[0].shape())
                .ok_or_else(|| shape_err(name, format!("adjoint {:?} kernel {:?}", xs[0].shape(), xs[1].shape())))?;
            kernels::conv2d_input_grad(xs[0].data(), xs[1].data(), &g)
        }
        Op::Conv2dWeightGrad { stride, pad, weight_shape } => {
            arity(2)?;
            let g = ConvGeom::new(xs[0].shape(), weight_shape, *stride, *pad)
                .filter(|g| g.output_shape() == xs[1].shape())
                .ok_or_else(|| shape_err(name, format!("input {:?} adjoint {:?}", xs[0].shape(), xs[1].shape())))?;
            kernels::conv2d_weight_grad(xs[0].data(), xs[1].data(), &g)
        }
        Op::MatMul { ta, tb } => {
            arity(2)?;
            let g = MatGeom::new(xs[0].shape(), xs[1].shape(), *ta, *tb)
                .ok_or_else(|| shape_err(name, format!("{:?} x {:?}", xs[0].shape(), xs[1].shape())))?;
            kernels::matmul(xs[0].data(), xs[1].data(), &g)
        }
        Op::Add | Op::Mul => {
            arity(2)?;
            let shape = kernels::broadcast_shape(xs[0].shape(), xs[1].shape())
                .ok_or_else(|| shape_err(name, format!("{:?} vs {:?}", xs[0].shape(), xs[1].shape())))?;
            if matches!(op, Op::Add) {
                kernels::broadcast_binary(xs[0], xs[1], &shape, |a, b| a + b)
            } else {
                kernels::broadcast_binary(xs[0], xs[1], &shape, |a, b| a * b)
            }
        }
        Op::Scale(c) => {
            arity(1)?;
            unary(xs[0], |v| v * *c)
        }
        Op::AddScalar(c) => {
            arity(1)?;
            unary(xs[0], |v| v + *c)
        }
        Op::LeakyRelu(s) => {
            arity(1)?;
            unary(xs[0], |v| if v > T::zero() { v } else { v * *s })
        }
        Op::Tanh => {
            arity(1)?;
            unary(xs[0], |v| v.tanh())
        }
        Op::Sigmoid => {
            arity(1)?;
            unary(xs[0], |v| T::one() / (T::one() + (-v).exp()))
        }
        Op::Abs => {
            arity(1)?;
            unary(xs[0], |v| v.abs())
        }
        Op::Square => {
            arity(1)?;
            unary(xs[0], |v| v * v)
        }
        Op::Sqrt => {
            arity(1)?;
            unary(xs[0], |v| v.sqrt())
        }
        Op::Recip => {
            arity(1)?;
            unary(xs[0], |v| T::one() / v)
        }
        Op::Clamp { lo, hi } => {
            arity(1)?;
            unary(xs[0], |v| v.max(*lo).min(*hi))
        }
        Op::BatchNorm { eps, .. } => {
            arity(1)?;
            kernels::batch_norm(xs[0], *eps).0
        }
        Op::BatchNormGrad { inv_std } => {
            arity(2)?;
            kernels::batch_norm_grad(xs[0], xs[1], inv_std)
        }
        Op::Concat { axis } => {
            if xs.is_empty() {
                return Err(shape_err(name, "no inputs"));
            }
            let first = xs[0].shape();
            if *axis >= first.len() {
                return Err(shape_err(name, format!("axis {axis} out of range for {first:?}")));
            }
            let mut shape = first.to_vec();
            shape[*axis] = 0;
            for x in xs {
                let s = x.shape();
                let compatible = s.len() == first.len()
                    && s.iter().zip(first).enumerate().all(|(i, (a, b))| i == *axis || a == b);
                if !compatible {
                    return Err(shape_err(name, format!("{first:?} vs {s:?} on axis {axis}")));
                }
                shape[*axis] += s[*axis];
            }
            kernels::concat(xs, *axis, &shape)
        }
        Op::Slice { axis, start, len } => {
            arity(1)?;
            let s = xs[0].shape();
            if *axis >= s.len() || *len == 0 || start + len > s[*axis] {
                return Err(shape_err(name, format!("[{start}, {}) on axis {axis} of {s:?}", start + len)));
            }
            kernels::slice(xs[0], *axis, *start, *len)
        }
        Op::Embed { axis, start, full } => {
            arity(1)?;
            let s = xs[0].shape();
            if *axis >= s.len() || start + s[*axis] > *full {
                return Err(shape_err(name, format!("{s:?} into extent {full} at {start}")));
            }
            kernels::embed(xs[0], *axis, *start, *full)
        }
        Op::Reshape { shape } => {
            arity(1)?;
            if numel(shape) != xs[0].numel() || shape.iter().any(|&d| d == 0) {
                return Err(shape_err(name, format!("{:?} -> {shape:?}", xs[0].shape())));
            }
            Tensor::from_parts(shape.clone(), xs[0].data().to_vec())
        }
        Op::SumTo { shape } => {
            arity(1)?;
            if kernels::broadcast_shape(shape, xs[0].shape()).as_deref() != Some(xs[0].shape()) {
                return Err(shape_err(name, format!("{:?} -> {shape:?}", xs[0].shape())));
            }
            kernels::sum_to(xs[0], shape)
        }
        Op::BroadcastTo { shape } => {
            arity(1)?;
            if kernels::broadcast_shape(xs[0].shape(), shape).as_deref() != Some(shape.as_slice()) {
                return Err(shape_err(name, format!("{:?} -> {shape:?}", xs[0].shape())));
            }
            kernels::broadcast_to(xs[0], shape)
        }
        Op::Upsample { factor } | Op::SumPool { factor } => {
            arity(1)?;
            let s = xs[0].shape();
            let pool = matches!(op, Op::SumPool { .. });
            let ok = s.len() >= 2
                && *factor >= 1
                && (!pool || (s[s.len() - 1] % factor == 0 && s[s.len() - 2] % factor == 0));
            if !ok {
                return Err(shape_err(name, format!("factor {factor} on {s:?}")));
            }
            if pool {
                kernels::sum_pool(xs[0], *factor)
            } else {
                kernels::upsample(xs[0], *factor)
            }
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn identity_pointwise_conv() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(vec![1, 1, 3, 3]));
        let w = tape.leaf(Tensor::ones(vec![1, 1, 1, 1]));
        let y = tape.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(tape.value(y), &Tensor::ones(vec![1, 1, 3, 3]));
    }

    #[test]
    fn conv_dot_product() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.leaf(Tensor::ones(vec![1, 1, 2, 2]));
        let y = tape.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).item(), 10.0);
    }

    #[test]
    fn channel_concat_shape() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(vec![1, 8, 4, 4]));
        let b = tape.leaf(Tensor::zeros(vec![1, 16, 4, 4]));
        let c = tape.record(OpKind::Concat, &[a, b], &Attrs::default()).unwrap();
        assert_eq!(tape.shape(c), &[1, 24, 4, 4]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![4, 5]));
        assert!(matches!(tape.add(a, b), Err(TensorError::ShapeMismatch { .. })));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
        assert!(matches!(tape.reshape(a, &[7]), Err(TensorError::ShapeMismatch { .. })));
        assert!(matches!(tape.conv2d(a, b, 1, 0), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!(matches!("softmax".parse::<OpKind>(), Err(TensorError::UnknownOp(_))));
        for k in OpKind::ALL {
            assert_eq!(k.name().parse::<OpKind>().unwrap(), k);
        }
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[0.0, 1.0]));
        assert!(matches!(tape.recip(x), Err(TensorError::NonFinite(_))));
        let y = tape.leaf(t(&[1], &[-1.0]));
        assert!(matches!(tape.sqrt(y), Err(TensorError::NonFinite(_))));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_fn(vec![2, 3, 6, 6], |i| (i as f32 * 0.173).sin()));
        let w = tape.leaf(Tensor::from_fn(vec![4, 3, 3, 3], |i| (i as f32 * 0.07).cos()));
        let y = tape.conv2d(x, w, 2, 1).unwrap();
        let (y, _) = tape.batch_norm(y, 1e-5).unwrap();
        let y = tape.leaky_relu(y, 0.2).unwrap();
        let y = tape.upsample_nearest(y, 2).unwrap();
        let s = tape.mean(y).unwrap();
        let replayed = tape.replay().unwrap();
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v, tape.value(NodeId(i)));
        }
        assert_eq!(replayed[s.0].item(), tape.value(s).item());
    }
}
