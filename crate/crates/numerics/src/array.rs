//! Dense row-major n-dimensional arrays.
//!
//! [`Array`] is the storage type shared by the graph, the optimizer and the
//! model code: a shape vector plus a contiguous `Vec<T>` in row-major order.
//! Elementwise arithmetic follows the usual broadcasting rule (dimensions are
//! right-aligned; each pair must be equal or one of them 1).

use crate::error::{NumericsError, Result};
use crate::scalar::Scalar;
use rand::Rng;

/// Dense row-major array of `T` with runtime shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// Row-major strides for `shape` (innermost dimension has stride 1).
pub fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Number of elements implied by `shape`.
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Broadcast two shapes together (right-aligned, dims equal or 1).
pub fn broadcast_shapes(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Vec<usize>> {
    let rank = lhs.len().max(rhs.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let l = if i < rank - lhs.len() { 1 } else { lhs[i - (rank - lhs.len())] };
        let r = if i < rank - rhs.len() { 1 } else { rhs[i - (rank - rhs.len())] };
        out[i] = if l == r || r == 1 {
            l
        } else if l == 1 {
            r
        } else {
            return Err(NumericsError::ShapeMismatch {
                op,
                lhs: lhs.to_vec(),
                rhs: rhs.to_vec(),
            });
        };
    }
    Ok(out)
}

impl<T: Scalar> Array<T> {
    /// Array of zeros.
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel(shape)],
        }
    }

    /// Array filled with `value`.
    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    /// Array of ones.
    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Rank-0 array holding a single value.
    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Build from an existing buffer; `data.len()` must equal the product of
    /// `shape`.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(NumericsError::InvalidShape {
                op: "from_vec",
                msg: format!("buffer of {} elements for shape {:?}", data.len(), shape),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Build by evaluating `f` at every linear (row-major) index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = numel(shape);
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// I.i.d. draws from N(0, 1).
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        Self::from_fn(shape, |_| T::standard_normal(rng))
    }

    /// I.i.d. draws from U[lo, hi).
    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: T, hi: T, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| lo + T::uniform(rng) * (hi - lo))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value of a rank-0 or single-element array.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on array of {} elements", self.data.len());
        self.data[0]
    }

    /// Linear offset of a multi-index.
    pub fn offset(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.shape.len());
        let strides = strides_for(&self.shape);
        coords.iter().zip(&strides).map(|(c, s)| c * s).sum()
    }

    /// Element at a multi-index.
    pub fn at(&self, coords: &[usize]) -> T {
        self.data[self.offset(coords)]
    }

    /// Mutable element at a multi-index.
    pub fn at_mut(&mut self, coords: &[usize]) -> &mut T {
        let off = self.offset(coords);
        &mut self.data[off]
    }

    /// Same buffer under a new shape with identical element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(NumericsError::InvalidShape {
                op: "reshape",
                msg: format!("{:?} -> {:?}", self.shape, shape),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Elementwise map.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise map in place.
    pub fn map_inplace(&mut self, f: impl Fn(T) -> T) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    /// Elementwise combination with broadcasting.
    pub fn zip_broadcast(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape == other.shape {
            // Fast path: identical shapes.
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Self {
                shape: self.shape.clone(),
                data,
            });
        }
        let out_shape = broadcast_shapes(op, &self.shape, &other.shape)?;
        let out_n = numel(&out_shape);
        let sa = broadcast_strides(&self.shape, &out_shape);
        let sb = broadcast_strides(&other.shape, &out_shape);
        let mut data = Vec::with_capacity(out_n);
        let mut coords = vec![0usize; out_shape.len()];
        let mut off_a = 0usize;
        let mut off_b = 0usize;
        for _ in 0..out_n {
            data.push(f(self.data[off_a], other.data[off_b]));
            // Advance the multi-index and the two offsets together.
            for d in (0..out_shape.len()).rev() {
                coords[d] += 1;
                off_a += sa[d];
                off_b += sb[d];
                if coords[d] < out_shape[d] {
                    break;
                }
                off_a -= sa[d] * out_shape[d];
                off_b -= sb[d] * out_shape[d];
                coords[d] = 0;
            }
        }
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_broadcast(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_broadcast(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_broadcast(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.zip_broadcast(other, "div", |a, b| a / b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_scalar(&self, s: T) -> Self {
        self.map(|v| v + s)
    }

    /// Sum of all elements.
    pub fn sum_all(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    /// Mean of all elements.
    pub fn mean_all(&self) -> T {
        self.sum_all() / T::of(self.data.len() as f64)
    }

    /// Sum over the given axes. With `keepdims`, reduced axes stay as size 1.
    pub fn sum_axes(&self, axes: &[usize], keepdims: bool) -> Result<Self> {
        for &ax in axes {
            if ax >= self.shape.len() {
                return Err(NumericsError::InvalidShape {
                    op: "sum_axes",
                    msg: format!("axis {ax} out of range for shape {:?}", self.shape),
                });
            }
        }
        let mut reduced = vec![false; self.shape.len()];
        for &ax in axes {
            reduced[ax] = true;
        }
        let kept_shape: Vec<usize> = self
            .shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if reduced[i] { 1 } else { d })
            .collect();
        let mut out = Array::zeros(&kept_shape);
        let out_strides = strides_for(&kept_shape);
        let mut coords = vec![0usize; self.shape.len()];
        let mut out_off = 0usize;
        let eff: Vec<usize> = out_strides
            .iter()
            .enumerate()
            .map(|(i, &s)| if reduced[i] { 0 } else { s })
            .collect();
        for &v in &self.data {
            out.data[out_off] = out.data[out_off] + v;
            for d in (0..self.shape.len()).rev() {
                coords[d] += 1;
                out_off += eff[d];
                if coords[d] < self.shape[d] {
                    break;
                }
                out_off -= eff[d] * self.shape[d];
                coords[d] = 0;
            }
        }
        if keepdims {
            Ok(out)
        } else {
            let final_shape: Vec<usize> = self
                .shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !reduced[*i])
                .map(|(_, &d)| d)
                .collect();
            out.reshape(&final_shape)
        }
    }

    /// Mean over the given axes.
    pub fn mean_axes(&self, axes: &[usize], keepdims: bool) -> Result<Self> {
        let count: usize = axes.iter().map(|&a| self.shape[a]).product();
        Ok(self.sum_axes(axes, keepdims)?.scale(T::one() / T::of(count as f64)))
    }

    /// Materialize this array broadcast to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        let out_shape = broadcast_shapes("broadcast_to", &self.shape, shape)?;
        if out_shape != shape {
            return Err(NumericsError::ShapeMismatch {
                op: "broadcast_to",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        if self.shape == shape {
            return Ok(self.clone());
        }
        let ones = Array::ones(shape);
        self.zip_broadcast(&ones, "broadcast_to", |a, _| a)
    }

    /// Sum a gradient that was broadcast up from `shape` back down to it.
    pub fn reduce_to_shape(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let extra = self.shape.len() - shape.len();
        let mut axes: Vec<usize> = (0..extra).collect();
        for (i, &d) in shape.iter().enumerate() {
            if d == 1 && self.shape[extra + i] != 1 {
                axes.push(extra + i);
            }
        }
        let summed = self.sum_axes(&axes, true)?;
        summed.reshape(shape)
    }

    /// Permute axes; `perm` must be a permutation of `0..rank`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.shape.len() {
            return Err(NumericsError::InvalidShape {
                op: "permute",
                msg: format!("perm {:?} for shape {:?}", perm, self.shape),
            });
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || seen[p] {
                return Err(NumericsError::InvalidShape {
                    op: "permute",
                    msg: format!("perm {:?} is not a permutation", perm),
                });
            }
            seen[p] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = strides_for(&self.shape);
        let perm_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = Array::zeros(&out_shape);
        let n = out.data.len();
        let mut coords = vec![0usize; out_shape.len()];
        let mut src = 0usize;
        for i in 0..n {
            out.data[i] = self.data[src];
            for d in (0..out_shape.len()).rev() {
                coords[d] += 1;
                src += perm_strides[d];
                if coords[d] < out_shape[d] {
                    break;
                }
                src -= perm_strides[d] * out_shape[d];
                coords[d] = 0;
            }
        }
        Ok(out)
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.shape.len() || start + len > self.shape[axis] {
            return Err(NumericsError::InvalidShape {
                op: "slice_axis",
                msg: format!("axis {axis} range {start}..{} of shape {:?}", start + len, self.shape),
            });
        }
        let mut out_shape = self.shape.clone();
        out_shape[axis] = len;
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            let base = (o * self.shape[axis] + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        Array::from_vec(&out_shape, data)
    }

    /// Write `part` into `[start, start+len)` along `axis` by accumulation.
    pub fn add_slice_axis(&mut self, axis: usize, start: usize, part: &Self) -> Result<()> {
        if axis >= self.shape.len()
            || part.shape.len() != self.shape.len()
            || start + part.shape[axis] > self.shape[axis]
        {
            return Err(NumericsError::InvalidShape {
                op: "add_slice_axis",
                msg: format!("part {:?} at {start} along axis {axis} of {:?}", part.shape, self.shape),
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let len = part.shape[axis];
        for o in 0..outer {
            let dst_base = (o * self.shape[axis] + start) * inner;
            let src_base = o * len * inner;
            for i in 0..len * inner {
                self.data[dst_base + i] = self.data[dst_base + i] + part.data[src_base + i];
            }
        }
        Ok(())
    }

    /// Concatenate arrays along `axis`; all other dims must match.
    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| NumericsError::InvalidShape {
            op: "concat",
            msg: "no parts".into(),
        })?;
        if axis >= first.shape.len() {
            return Err(NumericsError::InvalidShape {
                op: "concat",
                msg: format!("axis {axis} for shape {:?}", first.shape),
            });
        }
        let mut out_shape = first.shape.clone();
        let mut total = 0;
        for p in parts {
            if p.shape.len() != first.shape.len()
                || p.shape
                    .iter()
                    .enumerate()
                    .any(|(i, &d)| i != axis && d != first.shape[i])
            {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            total += p.shape[axis];
        }
        out_shape[axis] = total;
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for p in parts {
                let len = p.shape[axis];
                let base = o * len * inner;
                data.extend_from_slice(&p.data[base..base + len * inner]);
            }
        }
        Array::from_vec(&out_shape, data)
    }

    /// Cast element type (used to lift f32 parameters into f64 gradient checks).
    pub fn cast<U: Scalar>(&self) -> Array<U> {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.to_f64_exact())).collect(),
        }
    }

    /// Squared L2 norm of all elements, accumulated in f64.
    pub fn sq_norm_f64(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| {
                let x = v.to_f64_exact();
                x * x
            })
            .sum()
    }

    /// Largest absolute difference against another array of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64_exact() - b.to_f64_exact()).abs())
            .fold(0.0, f64::max)
    }
}

/// Strides of `shape` viewed under `out_shape`, with 0 on broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let strides = strides_for(shape);
    let offset = out_shape.len() - shape.len();
    let mut out = vec![0usize; out_shape.len()];
    for i in 0..shape.len() {
        out[offset + i] = if shape[i] == 1 && out_shape[offset + i] != 1 {
            0
        } else {
            strides[i]
        };
    }
    out
}
