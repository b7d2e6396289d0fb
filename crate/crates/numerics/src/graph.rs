//! Reverse-mode automatic differentiation over a closed set of primitives.
//!
//! A [`Graph`] is an append-only tape: every operation evaluates eagerly,
//! stores its result, and records which nodes it read. [`Graph::backward`]
//! walks the tape once in reverse, accumulating gradients for every node that
//! (transitively) depends on a differentiable leaf.
//!
//! The primitive set is closed by construction: elementwise arithmetic and
//! activations, matmul / batched matmul, conv2d, pooling, nearest upsampling,
//! reductions, reshape / permute / slice / concat, and (log-)softmax. The few
//! intentionally non-differentiable primitives (`sign`) raise
//! [`NumericsError::NonDifferentiable`] when backprop reaches them.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::array::Array;
use crate::error::{NumericsError, Result};
use crate::kernels::{self, Conv2dSpec};
use crate::param::ParamStore;
use crate::scalar::Scalar;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddScalar,
    MulScalar(T),
    PowScalar(T),
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Sigmoid,
    Relu,
    Gelu,
    Softmax { axis: usize },
    LogSoftmax { axis: usize },
    MatMul,
    BatchMatMul,
    Conv2d(Conv2dSpec),
    AvgPool2d(usize),
    UpsampleNearest2,
    Sum { axes: Vec<usize>, keepdims: bool },
    Mean { axes: Vec<usize>, keepdims: bool },
    Reshape,
    Permute(Vec<usize>),
    Slice { axis: usize, start: usize },
    Concat { axis: usize },
    NonDiff(&'static str),
}

struct Node<T> {
    value: Array<T>,
    op: Op<T>,
    parents: Vec<Var>,
    requires_grad: bool,
}

/// Gradients produced by one [`Graph::backward`] call, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. `v`, or `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Array<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Append-only autodiff tape.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    /// Parameter leaves in registration order: (name, leaf var, scaled var).
    bound: RefCell<Vec<(String, Var, Var)>>,
    by_name: RefCell<HashMap<String, Var>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(Vec::new()),
            by_name: RefCell::new(HashMap::new()),
        }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array<T>, op: Op<T>, parents: Vec<Var>) -> Var {
        let requires_grad = match op {
            Op::Constant => false,
            Op::Leaf => true,
            _ => {
                let nodes = self.nodes.borrow();
                parents.iter().any(|p| nodes[p.0].requires_grad)
            }
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            parents,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Insert a value the loss is not differentiated against.
    pub fn constant(&self, value: Array<T>) -> Var {
        self.push(value, Op::Constant, vec![])
    }

    /// Insert a differentiable leaf (an input whose gradient is wanted).
    pub fn leaf(&self, value: Array<T>) -> Var {
        self.push(value, Op::Leaf, vec![])
    }

    /// Bind a named parameter from `store` as a differentiable leaf.
    ///
    /// Repeated binds of the same name return the same node, so weight
    /// sharing (e.g. two forward passes through one network) accumulates
    /// gradients naturally. A parameter's stored forward scale is applied
    /// here, which is what makes learning-rate-equalized weights transparent
    /// to model code.
    pub fn param(&self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.by_name.borrow().get(name) {
            return Ok(v);
        }
        let entry = store.entry(name)?;
        let leaf = self.leaf(entry.value.clone());
        let scaled = if entry.forward_scale == 1.0 {
            leaf
        } else {
            self.mul_scalar(leaf, T::of(entry.forward_scale))
        };
        self.bound.borrow_mut().push((name.to_string(), leaf, scaled));
        self.by_name.borrow_mut().insert(name.to_string(), scaled);
        Ok(scaled)
    }

    /// Clone of a node's value.
    pub fn value(&self, v: Var) -> Array<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    /// Shape of a node's value.
    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn val<R>(&self, v: Var, f: impl FnOnce(&Array<T>) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    // ---- elementwise -----------------------------------------------------

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a, |x| self.val(b, |y| x.add(y)))?;
        Ok(self.push(value, Op::Add, vec![a, b]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a, |x| self.val(b, |y| x.sub(y)))?;
        Ok(self.push(value, Op::Sub, vec![a, b]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a, |x| self.val(b, |y| x.mul(y)))?;
        Ok(self.push(value, Op::Mul, vec![a, b]))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a, |x| self.val(b, |y| x.div(y)))?;
        Ok(self.push(value, Op::Div, vec![a, b]))
    }

    pub fn neg(&self, a: Var) -> Var {
        let value = self.val(a, |x| x.map(|v| -v));
        self.push(value, Op::Neg, vec![a])
    }

    pub fn add_scalar(&self, a: Var, s: T) -> Var {
        let value = self.val(a, |x| x.add_scalar(s));
        self.push(value, Op::AddScalar, vec![a])
    }

    pub fn mul_scalar(&self, a: Var, s: T) -> Var {
        let value = self.val(a, |x| x.scale(s));
        self.push(value, Op::MulScalar(s), vec![a])
    }

    /// Elementwise `x^p` for a fixed exponent.
    pub fn powf_scalar(&self, a: Var, p: T) -> Var {
        let value = self.val(a, |x| x.map(|v| v.powf(p)));
        self.push(value, Op::PowScalar(p), vec![a])
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn exp(&self, a: Var) -> Var {
        let value = self.val(a, |x| x.map(|v| v.exp()));
        self.push(value, Op::Exp, vec![a])
    }

    pub fn ln(&self, a: Var) -> Var {
        let value = self.val(a, |x| x.map(|v| v.ln()));
        self.push(value, Op::Ln, vec![a])
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let value = self.val(a, |x| x.map(|v| v.sqrt()));
        self.push(value, Op::Sqrt, vec![a])
    }

    pub fn tanh(&self, a: Var) -> Var {
        let value = self.val(a, |x| x.map(|v| v.tanh()));
        self.push(value, Op::Tanh, vec![a])
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let one = T::one();
        let value = self.val(a, |x| x.map(|v| one / (one + (-v).exp())));
        self.push(value, Op::Sigmoid, vec![a])
    }

    pub fn relu(&self, a: Var) -> Var {
        let value = self.val(a, |x| x.map(|v| if v > T::zero() { v } else { T::zero() }));
        self.push(value, Op::Relu, vec![a])
    }

    /// GeLU, tanh form: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&self, a: Var) -> Var {
        let value = self.val(a, |x| x.map(gelu_fwd));
        self.push(value, Op::Gelu, vec![a])
    }

    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let value = self.val(a, |x| kernels::softmax_axis(x, axis))?;
        Ok(self.push(value, Op::Softmax { axis }, vec![a]))
    }

    pub fn log_softmax(&self, a: Var, axis: usize) -> Result<Var> {
        // log softmax = log(softmax) computed through the stable softmax.
        let value = self.val(a, |x| kernels::softmax_axis(x, axis))?.map(|v| v.ln());
        Ok(self.push(value, Op::LogSoftmax { axis }, vec![a]))
    }

    // ---- linear algebra / convolution ------------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a, |x| self.val(b, |y| kernels::matmul(x, false, y, false)))?;
        Ok(self.push(value, Op::MatMul, vec![a, b]))
    }

    pub fn batch_matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a, |x| self.val(b, |y| kernels::batch_matmul(x, false, y, false)))?;
        Ok(self.push(value, Op::BatchMatMul, vec![a, b]))
    }

    pub fn conv2d(&self, x: Var, w: Var, spec: Conv2dSpec) -> Result<Var> {
        let value = self.val(x, |xv| self.val(w, |wv| kernels::conv2d(xv, wv, spec)))?;
        Ok(self.push(value, Op::Conv2d(spec), vec![x, w]))
    }

    pub fn avg_pool2d(&self, x: Var, k: usize) -> Result<Var> {
        let value = self.val(x, |xv| kernels::avg_pool2d(xv, k))?;
        Ok(self.push(value, Op::AvgPool2d(k), vec![x]))
    }

    pub fn upsample_nearest2(&self, x: Var) -> Result<Var> {
        let value = self.val(x, |xv| kernels::upsample_nearest2(xv))?;
        Ok(self.push(value, Op::UpsampleNearest2, vec![x]))
    }

    // ---- reductions / shape ----------------------------------------------

    pub fn sum_axes(&self, a: Var, axes: &[usize], keepdims: bool) -> Result<Var> {
        let value = self.val(a, |x| x.sum_axes(axes, keepdims))?;
        Ok(self.push(
            value,
            Op::Sum {
                axes: axes.to_vec(),
                keepdims,
            },
            vec![a],
        ))
    }

    pub fn mean_axes(&self, a: Var, axes: &[usize], keepdims: bool) -> Result<Var> {
        let value = self.val(a, |x| x.mean_axes(axes, keepdims))?;
        Ok(self.push(
            value,
            Op::Mean {
                axes: axes.to_vec(),
                keepdims,
            },
            vec![a],
        ))
    }

    /// Sum of every element, as a rank-0 node.
    pub fn sum_all(&self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.sum_axes(a, &axes, false)
    }

    /// Mean of every element, as a rank-0 node.
    pub fn mean_all(&self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.mean_axes(a, &axes, false)
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.val(a, |x| x.reshape(shape))?;
        Ok(self.push(value, Op::Reshape, vec![a]))
    }

    pub fn permute(&self, a: Var, perm: &[usize]) -> Result<Var> {
        let value = self.val(a, |x| x.permute(perm))?;
        Ok(self.push(value, Op::Permute(perm.to_vec()), vec![a]))
    }

    pub fn slice(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = self.val(a, |x| x.slice_axis(axis, start, len))?;
        Ok(self.push(value, Op::Slice { axis, start }, vec![a]))
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let arrays: Vec<&Array<T>> = parts.iter().map(|v| &nodes[v.0].value).collect();
        let value = Array::concat(&arrays, axis)?;
        drop(nodes);
        Ok(self.push(value, Op::Concat { axis }, parts.to_vec()))
    }

    /// Pass the value through while blocking gradient flow.
    pub fn detach(&self, a: Var) -> Var {
        let value = self.value(a);
        self.push(value, Op::Constant, vec![])
    }

    /// Elementwise sign. Deliberately non-differentiable: backprop through it
    /// reports an error naming the primitive.
    pub fn sign(&self, a: Var) -> Var {
        let value = self.val(a, |x| {
            x.map(|v| {
                if v > T::zero() {
                    T::one()
                } else if v < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            })
        });
        self.push(value, Op::NonDiff("sign"), vec![a])
    }

    // ---- backward --------------------------------------------------------

    /// Reverse pass from a scalar `loss`. Returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: nodes[loss.0].value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Array<T>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Array::ones(nodes[loss.0].value.shape()));
        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].clone() else { continue };
            let push_to = |grads: &mut Vec<Option<Array<T>>>, parent: Var, contrib: Array<T>| {
                if !nodes[parent.0].requires_grad {
                    return;
                }
                match &mut grads[parent.0] {
                    Some(acc) => {
                        *acc = acc.add(&contrib).expect("gradient shape agreement");
                    }
                    slot => *slot = Some(contrib),
                }
            };
            let p = |i: usize| -> &Array<T> { &nodes[node.parents[i].0].value };
            match &node.op {
                Op::Constant | Op::Leaf => {}
                Op::Add => {
                    push_to(&mut grads, node.parents[0], g.reduce_to_shape(p(0).shape())?);
                    push_to(&mut grads, node.parents[1], g.reduce_to_shape(p(1).shape())?);
                }
                Op::Sub => {
                    push_to(&mut grads, node.parents[0], g.reduce_to_shape(p(0).shape())?);
                    push_to(&mut grads, node.parents[1], g.scale(-T::one()).reduce_to_shape(p(1).shape())?);
                }
                Op::Mul => {
                    push_to(&mut grads, node.parents[0], g.mul(p(1))?.reduce_to_shape(p(0).shape())?);
                    push_to(&mut grads, node.parents[1], g.mul(p(0))?.reduce_to_shape(p(1).shape())?);
                }
                Op::Div => {
                    let ga = g.div(p(1))?;
                    push_to(&mut grads, node.parents[0], ga.reduce_to_shape(p(0).shape())?);
                    let gb = g.mul(&node.value)?.div(p(1))?.scale(-T::one());
                    push_to(&mut grads, node.parents[1], gb.reduce_to_shape(p(1).shape())?);
                }
                Op::Neg => push_to(&mut grads, node.parents[0], g.scale(-T::one())),
                Op::AddScalar => push_to(&mut grads, node.parents[0], g.clone()),
                Op::MulScalar(s) => push_to(&mut grads, node.parents[0], g.scale(*s)),
                Op::PowScalar(pw) => {
                    let x = p(0);
                    let d = x.map(|v| *pw * v.powf(*pw - T::one()));
                    push_to(&mut grads, node.parents[0], g.mul(&d)?);
                }
                Op::Exp => push_to(&mut grads, node.parents[0], g.mul(&node.value)?),
                Op::Ln => push_to(&mut grads, node.parents[0], g.div(p(0))?),
                Op::Sqrt => {
                    let d = node.value.map(|y| T::one() / (T::of(2.0) * y));
                    push_to(&mut grads, node.parents[0], g.mul(&d)?);
                }
                Op::Tanh => {
                    let d = node.value.map(|y| T::one() - y * y);
                    push_to(&mut grads, node.parents[0], g.mul(&d)?);
                }
                Op::Sigmoid => {
                    let d = node.value.map(|y| y * (T::one() - y));
                    push_to(&mut grads, node.parents[0], g.mul(&d)?);
                }
                Op::Relu => {
                    let d = p(0).map(|x| if x > T::zero() { T::one() } else { T::zero() });
                    push_to(&mut grads, node.parents[0], g.mul(&d)?);
                }
                Op::Gelu => {
                    let d = p(0).map(gelu_bwd);
                    push_to(&mut grads, node.parents[0], g.mul(&d)?);
                }
                Op::Softmax { axis } => {
                    let dx = kernels::softmax_axis_grad(&node.value, &g, *axis);
                    push_to(&mut grads, node.parents[0], dx);
                }
                Op::LogSoftmax { axis } => {
                    // dx = g - softmax * sum(g, axis); node.value is log-probs.
                    let probs = node.value.map(|v| v.exp());
                    let gsum = g.sum_axes(&[*axis], true)?;
                    let dx = g.sub(&probs.mul(&gsum.broadcast_to(probs.shape())?)?)?;
                    push_to(&mut grads, node.parents[0], dx);
                }
                Op::MatMul => {
                    let ga = kernels::matmul(&g, false, p(1), true)?;
                    let gb = kernels::matmul(p(0), true, &g, false)?;
                    push_to(&mut grads, node.parents[0], ga);
                    push_to(&mut grads, node.parents[1], gb);
                }
                Op::BatchMatMul => {
                    let ga = kernels::batch_matmul(&g, false, p(1), true)?;
                    let gb = kernels::batch_matmul(p(0), true, &g, false)?;
                    push_to(&mut grads, node.parents[0], ga);
                    push_to(&mut grads, node.parents[1], gb);
                }
                Op::Conv2d(spec) => {
                    let gx = kernels::conv2d_input_grad(&g, p(0).shape(), p(1), *spec)?;
                    let gw = kernels::conv2d_weight_grad(&g, p(0), p(1).shape(), *spec)?;
                    push_to(&mut grads, node.parents[0], gx);
                    push_to(&mut grads, node.parents[1], gw);
                }
                Op::AvgPool2d(k) => {
                    push_to(&mut grads, node.parents[0], kernels::avg_pool2d_grad(&g, p(0).shape(), *k));
                }
                Op::UpsampleNearest2 => {
                    push_to(&mut grads, node.parents[0], kernels::upsample_nearest2_grad(&g, p(0).shape()));
                }
                Op::Sum { axes, keepdims } => {
                    let gk = restore_kept(&g, p(0).shape(), axes, *keepdims)?;
                    push_to(&mut grads, node.parents[0], gk.broadcast_to(p(0).shape())?);
                }
                Op::Mean { axes, keepdims } => {
                    let count: usize = axes.iter().map(|&a| p(0).shape()[a]).product();
                    let gk = restore_kept(&g, p(0).shape(), axes, *keepdims)?;
                    let gb = gk.broadcast_to(p(0).shape())?.scale(T::one() / T::of(count as f64));
                    push_to(&mut grads, node.parents[0], gb);
                }
                Op::Reshape => {
                    push_to(&mut grads, node.parents[0], g.reshape(p(0).shape())?);
                }
                Op::Permute(perm) => {
                    let mut inv = vec![0usize; perm.len()];
                    for (i, &pi) in perm.iter().enumerate() {
                        inv[pi] = i;
                    }
                    push_to(&mut grads, node.parents[0], g.permute(&inv)?);
                }
                Op::Slice { axis, start } => {
                    let mut gx = Array::zeros(p(0).shape());
                    gx.add_slice_axis(*axis, *start, &g)?;
                    push_to(&mut grads, node.parents[0], gx);
                }
                Op::Concat { axis } => {
                    let mut offset = 0;
                    for (i, parent) in node.parents.iter().enumerate() {
                        let len = p(i).shape()[*axis];
                        let part = g.slice_axis(*axis, offset, len)?;
                        offset += len;
                        push_to(&mut grads, *parent, part);
                    }
                }
                Op::NonDiff(name) => {
                    return Err(NumericsError::NonDifferentiable { op: name });
                }
            }
            // Free interior gradients we no longer need; keep leaves.
            if !matches!(node.op, Op::Leaf) {
                grads[id] = None;
            } else {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    /// Gradients of all bound parameters in registration order.
    ///
    /// Parameters the loss never touched get zero gradients of the right
    /// shape, so optimizer steps stay well-defined.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<(String, Array<T>)> {
        let nodes = self.nodes.borrow();
        self.bound
            .borrow()
            .iter()
            .map(|(name, leaf, _)| {
                let g = grads
                    .wrt(*leaf)
                    .cloned()
                    .unwrap_or_else(|| Array::zeros(nodes[leaf.0].value.shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// Reshape a reduced gradient back to its keepdims form.
fn restore_kept<T: Scalar>(
    g: &Array<T>,
    in_shape: &[usize],
    axes: &[usize],
    keepdims: bool,
) -> Result<Array<T>> {
    if keepdims {
        return Ok(g.clone());
    }
    let mut kept = in_shape.to_vec();
    for &a in axes {
        kept[a] = 1;
    }
    g.reshape(&kept)
}

fn gelu_fwd<T: Scalar>(x: T) -> T {
    let c = T::of(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = T::of(0.044715);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_bwd<T: Scalar>(x: T) -> T {
    let c = T::of(0.797_884_560_802_865_4);
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let three = T::of(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_mul_chain_gradients() {
        // loss = sum((a + 2b) * a); d/da = 2a + 2b, d/db = 2a.
        let g = Graph::<f64>::new();
        let a = g.leaf(Array::from_vec(&[2], vec![1.0, 3.0]).unwrap());
        let b = g.leaf(Array::from_vec(&[2], vec![-1.0, 0.5]).unwrap());
        let two_b = g.mul_scalar(b, 2.0);
        let s = g.add(a, two_b).unwrap();
        let prod = g.mul(s, a).unwrap();
        let loss = g.sum_all(prod).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[0.0, 7.0]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[2.0, 6.0]);
    }

    #[test]
    fn matmul_gradient_known() {
        // loss = sum(A @ B): dA = row sums of B^T pattern, dB = col pattern.
        let g = Graph::<f64>::new();
        let a = g.leaf(Array::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.leaf(Array::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        let loss = g.sum_all(c).unwrap();
        let grads = g.backward(loss).unwrap();
        // d loss / dA_ij = sum_k B_jk
        assert_eq!(grads.wrt(a).unwrap().data(), &[11.0, 15.0, 11.0, 15.0]);
        // d loss / dB_jk = sum_i A_ij
        assert_eq!(grads.wrt(b).unwrap().data(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn shared_leaf_accumulates() {
        // loss = sum(x * x) with x used twice: gradient 2x.
        let g = Graph::<f64>::new();
        let x = g.leaf(Array::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let y = g.mul(x, x).unwrap();
        let loss = g.sum_all(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Array::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let c = g.constant(Array::from_vec(&[2], vec![3.0, 4.0]).unwrap());
        let y = g.mul(x, c).unwrap();
        let loss = g.sum_all(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[3.0, 4.0]);
        assert!(grads.wrt(c).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Array::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let err = g.backward(x).unwrap_err();
        assert!(matches!(err, NumericsError::NonScalarLoss { .. }));
    }

    #[test]
    fn non_differentiable_primitive_is_named() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Array::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        let s = g.sign(x);
        let loss = g.sum_all(s).unwrap();
        let err = g.backward(loss).unwrap_err();
        match err {
            NumericsError::NonDifferentiable { op } => assert_eq!(op, "sign"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn detach_blocks_gradient() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Array::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let d = g.detach(x);
        let y = g.mul(x, d).unwrap();
        let loss = g.sum_all(y).unwrap();
        let grads = g.backward(loss).unwrap();
        // Only the live branch contributes: d loss/dx = detached value.
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Array::<f64>::zeros(&[2, 3]));
        let b = g.leaf(Array::<f64>::zeros(&[1, 3]));
        let y = g.add(x, b).unwrap();
        let loss = g.sum_all(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(b).unwrap().shape(), &[1, 3]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn softmax_gradient_sums_to_zero() {
        // Softmax output sums to 1, so gradients along the axis sum to ~0
        // when the upstream gradient hits a single component.
        let g = Graph::<f64>::new();
        let x = g.leaf(Array::from_vec(&[1, 3], vec![0.3, -1.0, 2.0]).unwrap());
        let y = g.softmax(x, 1).unwrap();
        let first = g.slice(y, 1, 0, 1).unwrap();
        let loss = g.sum_all(first).unwrap();
        let grads = g.backward(loss).unwrap();
        let s: f64 = grads.wrt(x).unwrap().data().iter().sum();
        assert!(s.abs() < 1e-12);
    }
}
