use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use super::kernels::{self, ConvGeometry};
use super::{ensure_same_shape, Tensor};
use crate::error::{DdsError, Result};

type NodeId = usize;

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Conv2d { input: NodeId, weight: Arc<Tensor>, geom: ConvGeometry },
    Linear { input: NodeId, weight: Arc<Tensor> },
    LeakyRelu { input: NodeId, slope: f64 },
    Tanh { input: NodeId },
    Sqrt { input: NodeId },
    Affine { input: NodeId, scale: f64 },
    Upsample2x { input: NodeId, chw: [usize; 3] },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    MulConst { input: NodeId, factor: Tensor },
    AddConst { input: NodeId },
    Sum { input: NodeId },
    MeanSquare { input: NodeId },
    WeightedSum { terms: Vec<(NodeId, f64)> },
    Broadcast { input: NodeId },
    Reshape { input: NodeId },
    BlobField { input: NodeId, n: usize },
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records evaluated operations in topological order.
///
/// A tape supports a single backward pass; record a fresh tape for every
/// evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: RefCell<bool>,
}

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

/// Gradients produced by [`Tape::backward`], indexed by the node they belong to.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; zeros when `var` does not
    /// influence the root.
    pub fn get(&self, var: &Var<'_>) -> Tensor {
        match &self.grads[var.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.id]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(DdsError::NonFinite { context: "tape leaf" });
        }
        Ok(self.push(value, Op::Leaf, true))
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(DdsError::NonFinite { context: "tape constant" });
        }
        Ok(self.push(value, Op::Constant, false))
    }

    /// `Σ w_i x_i` over equal-shaped values.
    pub fn weighted_sum<'t>(&'t self, terms: &[(Var<'t>, f64)]) -> Result<Var<'t>> {
        let first = terms
            .first()
            .ok_or_else(|| DdsError::InvalidArgument("weighted_sum of no terms".into()))?;
        let shape = first.0.shape();
        let mut acc = vec![0.0; shape.iter().product()];
        for (v, w) in terms {
            let val = v.value();
            ensure_same_shape("weighted_sum", &shape, val.shape())?;
            for (a, x) in acc.iter_mut().zip(val.data()) {
                *a += w * x;
            }
        }
        let needs = terms.iter().any(|(v, _)| self.needs_grad(v.id));
        Ok(self.push(
            Tensor::new(&shape, acc)?,
            Op::WeightedSum {
                terms: terms.iter().map(|(v, w)| (v.id, *w)).collect(),
            },
            needs,
        ))
    }

    /// Reverse pass from a scalar root. Consumes the tape.
    pub fn backward(&self, root: &Var<'_>) -> Result<Gradients> {
        {
            let mut consumed = self.consumed.borrow_mut();
            if *consumed {
                return Err(DdsError::TapeConsumed);
            }
            let nodes = self.nodes.borrow();
            let rv = &nodes[root.id].value;
            if !rv.is_scalar() {
                return Err(DdsError::NotScalar(rv.shape().to_vec()));
            }
            *consumed = true;
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].as_ref() else { continue };
            let g = g.clone();
            let mut accumulate = |target: NodeId, contrib: Vec<f64>| {
                if !nodes[target].needs_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(existing) => {
                        for (e, c) in existing.iter_mut().zip(contrib) {
                            *e += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            };
            let val = |i: NodeId| nodes[i].value.data();
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::Conv2d { input, weight, geom } => {
                    accumulate(*input, kernels::conv2d_backward_input(geom, &g, weight.data()));
                }
                Op::Linear { input, weight } => {
                    let [rows, cols] = [weight.shape()[0], weight.shape()[1]];
                    accumulate(*input, kernels::linear_backward(rows, cols, weight.data(), &g));
                }
                Op::LeakyRelu { input, slope } => {
                    let c = val(*input)
                        .iter()
                        .zip(&g)
                        .map(|(&x, &gy)| if x > 0.0 { gy } else { slope * gy })
                        .collect();
                    accumulate(*input, c);
                }
                Op::Tanh { input } => {
                    let c = node.value.data().iter().zip(&g).map(|(&y, &gy)| gy * (1.0 - y * y)).collect();
                    accumulate(*input, c);
                }
                Op::Sqrt { input } => {
                    let c = node
                        .value
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&y, &gy)| if y > 0.0 { gy * 0.5 / y } else { 0.0 })
                        .collect();
                    accumulate(*input, c);
                }
                Op::Affine { input, scale } => {
                    accumulate(*input, g.iter().map(|gy| gy * scale).collect());
                }
                Op::Upsample2x { input, chw } => {
                    let [c, h, w] = *chw;
                    accumulate(*input, kernels::upsample2x_backward(c, h, w, &g));
                }
                Op::Add { a, b } => {
                    accumulate(*a, g.clone());
                    accumulate(*b, g);
                }
                Op::Mul { a, b } => {
                    let ga = g.iter().zip(val(*b)).map(|(gy, y)| gy * y).collect();
                    let gb = g.iter().zip(val(*a)).map(|(gy, x)| gy * x).collect();
                    accumulate(*a, ga);
                    accumulate(*b, gb);
                }
                Op::MulConst { input, factor } => {
                    accumulate(*input, g.iter().zip(factor.data()).map(|(gy, f)| gy * f).collect());
                }
                Op::AddConst { input } | Op::Reshape { input } => accumulate(*input, g),
                Op::Sum { input } => {
                    accumulate(*input, vec![g[0]; nodes[*input].value.len()]);
                }
                Op::MeanSquare { input } => {
                    let x = val(*input);
                    let k = 2.0 * g[0] / x.len() as f64;
                    accumulate(*input, x.iter().map(|v| k * v).collect());
                }
                Op::WeightedSum { terms } => {
                    for (t, w) in terms {
                        accumulate(*t, g.iter().map(|gy| gy * w).collect());
                    }
                }
                Op::Broadcast { input } => {
                    let from = nodes[*input].value.shape();
                    let map = broadcast_index_map(from, node.value.shape());
                    let mut c = vec![0.0; nodes[*input].value.len()];
                    for (gy, &src) in g.iter().zip(&map) {
                        c[src] += gy;
                    }
                    accumulate(*input, c);
                }
                Op::BlobField { input, n } => {
                    let p = val(*input);
                    let [gx, gy, gr] = kernels::blob_field_backward(*n, p[0], p[1], p[2], node.value.data(), &g);
                    accumulate(*input, vec![gx, gy, gr]);
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| g.map(|g| Tensor::new(n.value.shape(), g).expect("gradient shape")))
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    fn value_of(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }
}

/// For each output element of a broadcast, the flat index of its source.
fn broadcast_index_map(from: &[usize], to: &[usize]) -> Vec<usize> {
    let pad = to.len() - from.len();
    let padded: Vec<usize> = std::iter::repeat_n(1, pad).chain(from.iter().copied()).collect();
    let mut src_strides = vec![0usize; to.len()];
    let mut stride = 1;
    for axis in (0..to.len()).rev() {
        src_strides[axis] = if padded[axis] == 1 { 0 } else { stride };
        stride *= padded[axis];
    }
    let total: usize = to.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; to.len()];
    for _ in 0..total {
        map.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for axis in (0..to.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < to[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    map
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a scalar-shaped var.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let needs = self.tape.needs_grad(self.id);
        self.tape.push(value, op, needs)
    }

    fn binary(&self, other: &Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let needs = self.tape.needs_grad(self.id) || self.tape.needs_grad(other.id);
        self.tape.push(value, op, needs)
    }

    /// Zero-padded 2-D convolution with a `[out, in, k, k]` kernel. The
    /// kernel and bias are constants.
    pub fn conv2d(&self, weight: &Arc<Tensor>, bias: &Tensor, stride: usize, pad: usize) -> Result<Var<'t>> {
        let x = self.value();
        let [c, h, w] = x.chw()?;
        let ws = weight.shape();
        if ws.len() != 4 || ws[1] != c || ws[2] != ws[3] {
            return Err(DdsError::ShapeMismatch {
                op: "conv2d",
                left: x.shape().to_vec(),
                right: ws.to_vec(),
            });
        }
        if bias.len() != ws[0] {
            return Err(DdsError::ShapeMismatch {
                op: "conv2d bias",
                left: ws.to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        if stride == 0 || h + 2 * pad < ws[2] || w + 2 * pad < ws[2] {
            return Err(DdsError::InvalidArgument(format!(
                "conv2d: kernel {} stride {stride} pad {pad} does not fit {h}x{w}",
                ws[2]
            )));
        }
        let geom = ConvGeometry {
            in_channels: c,
            out_channels: ws[0],
            height: h,
            width: w,
            kernel: ws[2],
            stride,
            pad,
        };
        let out = kernels::conv2d_forward(&geom, x.data(), weight.data(), bias.data());
        let value = Tensor::new(&[geom.out_channels, geom.out_height(), geom.out_width()], out)?;
        Ok(self.unary(
            value,
            Op::Conv2d {
                input: self.id,
                weight: Arc::clone(weight),
                geom,
            },
        ))
    }

    /// Dense map `W x + b` for a `[rows, cols]` constant matrix and a
    /// length-`cols` input of any shape.
    pub fn linear(&self, weight: &Arc<Tensor>, bias: &Tensor) -> Result<Var<'t>> {
        let x = self.value();
        let ws = weight.shape();
        if ws.len() != 2 || ws[1] != x.len() || bias.len() != ws[0] {
            return Err(DdsError::ShapeMismatch {
                op: "linear",
                left: x.shape().to_vec(),
                right: ws.to_vec(),
            });
        }
        let out = kernels::linear_forward(ws[0], ws[1], weight.data(), bias.data(), x.data());
        Ok(self.unary(
            Tensor::new(&[ws[0]], out)?,
            Op::Linear {
                input: self.id,
                weight: Arc::clone(weight),
            },
        ))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        let value = self.value().map(|v| if v > 0.0 { v } else { slope * v });
        self.unary(value, Op::LeakyRelu { input: self.id, slope })
    }

    pub fn tanh(&self) -> Var<'t> {
        let value = self.value().map(f64::tanh);
        self.unary(value, Op::Tanh { input: self.id })
    }

    /// Logistic sigmoid, composed as `0.5 + 0.5 tanh(x / 2)`.
    pub fn sigmoid(&self) -> Var<'t> {
        self.affine(0.5, 0.0).tanh().affine(0.5, 0.5)
    }

    /// Square root of a nonnegative value; the derivative at 0 is taken as 0.
    pub fn sqrt(&self) -> Var<'t> {
        let value = self.value().map(|v| v.max(0.0).sqrt());
        self.unary(value, Op::Sqrt { input: self.id })
    }

    /// `scale * x + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> Var<'t> {
        let value = self.value().map(|v| scale * v + shift);
        self.unary(value, Op::Affine { input: self.id, scale })
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.affine(s, 0.0)
    }

    /// Nearest-neighbour 2x upsampling of a `[C, H, W]` value.
    pub fn upsample2x(&self) -> Result<Var<'t>> {
        let x = self.value();
        let chw = x.chw()?;
        let [c, h, w] = chw;
        let mut shape = x.shape().to_vec();
        let n = shape.len();
        shape[n - 2] = 2 * h;
        shape[n - 1] = 2 * w;
        let value = Tensor::new(&shape, kernels::upsample2x_forward(c, h, w, x.data()))?;
        Ok(self.unary(value, Op::Upsample2x { input: self.id, chw }))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let value = self.value().zip_with(&other.value(), "add", |a, b| a + b)?;
        Ok(self.binary(other, value, Op::Add { a: self.id, b: other.id }))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.tape.weighted_sum(&[(*self, 1.0), (*other, -1.0)])
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let value = self.value().zip_with(&other.value(), "mul", |a, b| a * b)?;
        Ok(self.binary(other, value, Op::Mul { a: self.id, b: other.id }))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&self, factor: &Tensor) -> Result<Var<'t>> {
        let value = self.value().zip_with(factor, "mul_const", |a, b| a * b)?;
        Ok(self.unary(
            value,
            Op::MulConst {
                input: self.id,
                factor: factor.clone(),
            },
        ))
    }

    pub fn add_const(&self, offset: &Tensor) -> Result<Var<'t>> {
        let value = self.value().zip_with(offset, "add_const", |a, b| a + b)?;
        Ok(self.unary(value, Op::AddConst { input: self.id }))
    }

    pub fn sub_const(&self, offset: &Tensor) -> Result<Var<'t>> {
        let value = self.value().zip_with(offset, "sub_const", |a, b| a - b)?;
        Ok(self.unary(value, Op::AddConst { input: self.id }))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().sum();
        self.unary(Tensor::scalar(s), Op::Sum { input: self.id })
    }

    /// `mean(x^2)` over all elements.
    pub fn mean_square(&self) -> Var<'t> {
        let x = self.value();
        let ms = x.data().iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        self.unary(Tensor::scalar(ms), Op::MeanSquare { input: self.id })
    }

    /// Broadcast with trailing-axis alignment; every source axis must be 1
    /// or equal to the target axis.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let from = x.shape();
        let compatible = from.len() <= shape.len()
            && from
                .iter()
                .rev()
                .zip(shape.iter().rev())
                .all(|(&f, &t)| f == 1 || f == t);
        if !compatible {
            return Err(DdsError::ShapeMismatch {
                op: "broadcast",
                left: from.to_vec(),
                right: shape.to_vec(),
            });
        }
        let map = broadcast_index_map(from, shape);
        let data = map.iter().map(|&i| x.data()[i]).collect();
        Ok(self.unary(Tensor::new(shape, data)?, Op::Broadcast { input: self.id }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.value().reshape(shape)?;
        Ok(self.unary(value, Op::Reshape { input: self.id }))
    }

    /// Renders `[cx, cy, r]` (pixel units) into a `[1, n, n]` soft blob
    /// field `2^(-d^2/r^2)`.
    pub fn blob_field(&self, n: usize) -> Result<Var<'t>> {
        let p = self.value();
        if p.len() != 3 {
            return Err(DdsError::ShapeMismatch {
                op: "blob_field",
                left: p.shape().to_vec(),
                right: vec![3],
            });
        }
        let d = p.data();
        if d[2] <= 0.0 {
            return Err(DdsError::InvalidArgument(format!("blob radius {} must be positive", d[2])));
        }
        let value = Tensor::new(&[1, n, n], kernels::blob_field_forward(n, d[0], d[1], d[2]))?;
        Ok(self.unary(value, Op::BlobField { input: self.id, n }))
    }
}
