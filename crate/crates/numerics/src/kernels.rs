//! Raw compute kernels behind the graph primitives.
//!
//! These are plain array-in/array-out functions with no autodiff bookkeeping;
//! the graph layer pairs each forward kernel with its gradient kernel(s).
//! Convolution is im2col + gemm; the backward pass recomputes the column
//! buffer instead of storing it, trading a little compute for memory.

use crate::array::Array;
use crate::error::{NumericsError, Result};
use crate::scalar::Scalar;

/// `A @ B` for 2-D operands with optional logical transposes.
pub fn matmul<T: Scalar>(a: &Array<T>, ta: bool, b: &Array<T>, tb: bool) -> Result<Array<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(NumericsError::InvalidShape {
            op: "matmul",
            msg: format!("need rank-2 operands, got {:?} and {:?}", a.shape(), b.shape()),
        });
    }
    let (am, ak) = (a.shape()[0], a.shape()[1]);
    let (bm, bk) = (b.shape()[0], b.shape()[1]);
    let (m, k1) = if ta { (ak, am) } else { (am, ak) };
    let (k2, n) = if tb { (bk, bm) } else { (bm, bk) };
    if k1 != k2 {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = Array::zeros(&[m, n]);
    gemm_into(a, ta, b, tb, T::zero(), &mut out);
    Ok(out)
}

/// `C = A @ B + beta * C` on 2-D arrays, with logical transposes.
pub fn gemm_into<T: Scalar>(a: &Array<T>, ta: bool, b: &Array<T>, tb: bool, beta: T, c: &mut Array<T>) {
    let (am, ak) = (a.shape()[0], a.shape()[1]);
    let (bm, _) = (b.shape()[0], b.shape()[1]);
    let (m, k) = if ta { (ak, am) } else { (am, ak) };
    let n = c.shape()[1];
    debug_assert_eq!(c.shape()[0], m);
    let (rsa, csa) = if ta { (1, ak as isize) } else { (ak as isize, 1) };
    let (rsb, csb) = if tb { (1, b.shape()[1] as isize) } else { (b.shape()[1] as isize, 1) };
    let _ = bm;
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a.data(),
        rsa,
        csa,
        b.data(),
        rsb,
        csb,
        beta,
        c.data_mut(),
        n as isize,
        1,
    );
}

/// Batched `A @ B`: `(B, m, k) @ (B, k, n) -> (B, m, n)` with logical transposes
/// applied to the trailing two axes.
pub fn batch_matmul<T: Scalar>(a: &Array<T>, ta: bool, b: &Array<T>, tb: bool) -> Result<Array<T>> {
    if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] {
        return Err(NumericsError::ShapeMismatch {
            op: "batch_matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let batch = a.shape()[0];
    let (am, ak) = (a.shape()[1], a.shape()[2]);
    let (bm, bk) = (b.shape()[1], b.shape()[2]);
    let (m, k1) = if ta { (ak, am) } else { (am, ak) };
    let (k2, n) = if tb { (bk, bm) } else { (bm, bk) };
    if k1 != k2 {
        return Err(NumericsError::ShapeMismatch {
            op: "batch_matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = Array::zeros(&[batch, m, n]);
    let (rsa, csa) = if ta { (1, ak as isize) } else { (ak as isize, 1) };
    let (rsb, csb) = if tb { (1, bk as isize) } else { (bk as isize, 1) };
    for i in 0..batch {
        let a_sl = &a.data()[i * am * ak..(i + 1) * am * ak];
        let b_sl = &b.data()[i * bm * bk..(i + 1) * bm * bk];
        let c_sl = &mut out.data_mut()[i * m * n..(i + 1) * m * n];
        T::gemm(
            m,
            k1,
            n,
            T::one(),
            a_sl,
            rsa,
            csa,
            b_sl,
            rsb,
            csb,
            T::zero(),
            c_sl,
            n as isize,
            1,
        );
    }
    Ok(out)
}

/// Geometry of one conv2d application.
#[derive(Debug, Clone, Copy)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: usize,
}

fn conv_out_dim(image: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = image + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Validate conv operand shapes and return `(h_out, w_out)`.
pub fn conv2d_out_shape<T: Scalar>(x: &Array<T>, w: &Array<T>, spec: Conv2dSpec) -> Result<(usize, usize)> {
    if x.rank() != 4 || w.rank() != 4 {
        return Err(NumericsError::InvalidShape {
            op: "conv2d",
            msg: format!("need NCHW input and OIHW weight, got {:?} / {:?}", x.shape(), w.shape()),
        });
    }
    if x.shape()[1] != w.shape()[1] {
        return Err(NumericsError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let ho = conv_out_dim(x.shape()[2], w.shape()[2], spec.stride, spec.pad);
    let wo = conv_out_dim(x.shape()[3], w.shape()[3], spec.stride, spec.pad);
    match (ho, wo) {
        (Some(h), Some(w2)) => Ok((h, w2)),
        _ => Err(NumericsError::InvalidShape {
            op: "conv2d",
            msg: format!("kernel {:?} does not fit input {:?} at {:?}", w.shape(), x.shape(), spec),
        }),
    }
}

/// Unpack one image into the `(C*kh*kw, Ho*Wo)` column buffer.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    spec: Conv2dSpec,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let patch = ho * wo;
    for c in 0..c_in {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        for v in &mut dst[oy * wo..(oy + 1) * wo] {
                            *v = T::zero();
                        }
                        continue;
                    }
                    let src_row = (c * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        dst[oy * wo + ox] = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            x[src_row + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add a column buffer back onto an image (adjoint of `im2col`).
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    spec: Conv2dSpec,
    ho: usize,
    wo: usize,
    x: &mut [T],
) {
    let patch = ho * wo;
    for c in 0..c_in {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let src = &cols[row * patch..(row + 1) * patch];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (c * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            let d = dst_row + ix as usize;
                            x[d] = x[d] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution, NCHW input against OIHW weights.
pub fn conv2d<T: Scalar>(x: &Array<T>, w: &Array<T>, spec: Conv2dSpec) -> Result<Array<T>> {
    let (ho, wo) = conv2d_out_shape(x, w, spec)?;
    let (b, c_in, h, wi) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let ckk = c_in * kh * kw;
    let patch = ho * wo;
    let mut out = Array::zeros(&[b, c_out, ho, wo]);
    let mut cols = vec![T::zero(); ckk * patch];
    for i in 0..b {
        im2col(&x.data()[i * c_in * h * wi..], c_in, h, wi, kh, kw, spec, ho, wo, &mut cols);
        let out_sl = &mut out.data_mut()[i * c_out * patch..(i + 1) * c_out * patch];
        T::gemm(
            c_out,
            ckk,
            patch,
            T::one(),
            w.data(),
            ckk as isize,
            1,
            &cols,
            patch as isize,
            1,
            T::zero(),
            out_sl,
            patch as isize,
            1,
        );
    }
    Ok(out)
}

/// Gradient of `conv2d` w.r.t. its input.
pub fn conv2d_input_grad<T: Scalar>(
    grad_out: &Array<T>,
    x_shape: &[usize],
    w: &Array<T>,
    spec: Conv2dSpec,
) -> Result<Array<T>> {
    let (b, c_in, h, wi) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (c_out, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (ho, wo) = (grad_out.shape()[2], grad_out.shape()[3]);
    let ckk = c_in * kh * kw;
    let patch = ho * wo;
    let mut dx = Array::zeros(x_shape);
    let mut cols = vec![T::zero(); ckk * patch];
    for i in 0..b {
        // dCols = W^T @ dOut_i
        let go = &grad_out.data()[i * c_out * patch..(i + 1) * c_out * patch];
        T::gemm(
            ckk,
            c_out,
            patch,
            T::one(),
            w.data(),
            1,
            ckk as isize,
            go,
            patch as isize,
            1,
            T::zero(),
            &mut cols,
            patch as isize,
            1,
        );
        col2im(
            &cols,
            c_in,
            h,
            wi,
            kh,
            kw,
            spec,
            ho,
            wo,
            &mut dx.data_mut()[i * c_in * h * wi..(i + 1) * c_in * h * wi],
        );
    }
    Ok(dx)
}

/// Gradient of `conv2d` w.r.t. its weights.
pub fn conv2d_weight_grad<T: Scalar>(
    grad_out: &Array<T>,
    x: &Array<T>,
    w_shape: &[usize],
    spec: Conv2dSpec,
) -> Result<Array<T>> {
    let (b, c_in, h, wi) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, kh, kw) = (w_shape[0], w_shape[2], w_shape[3]);
    let (ho, wo) = (grad_out.shape()[2], grad_out.shape()[3]);
    let ckk = c_in * kh * kw;
    let patch = ho * wo;
    let mut dw = Array::zeros(w_shape);
    let mut cols = vec![T::zero(); ckk * patch];
    for i in 0..b {
        im2col(&x.data()[i * c_in * h * wi..], c_in, h, wi, kh, kw, spec, ho, wo, &mut cols);
        let go = &grad_out.data()[i * c_out * patch..(i + 1) * c_out * patch];
        // dW += dOut_i @ cols^T
        T::gemm(
            c_out,
            patch,
            ckk,
            T::one(),
            go,
            patch as isize,
            1,
            &cols,
            1,
            patch as isize,
            T::one(),
            dw.data_mut(),
            ckk as isize,
            1,
        );
    }
    Ok(dw)
}

/// Non-overlapping `k x k` average pooling.
pub fn avg_pool2d<T: Scalar>(x: &Array<T>, k: usize) -> Result<Array<T>> {
    if x.rank() != 4 || k == 0 || x.shape()[2] % k != 0 || x.shape()[3] % k != 0 {
        return Err(NumericsError::InvalidShape {
            op: "avg_pool2d",
            msg: format!("window {k} on shape {:?}", x.shape()),
        });
    }
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (h / k, w / k);
    let inv = T::one() / T::of((k * k) as f64);
    let mut out = Array::zeros(&[b, c, ho, wo]);
    for bc in 0..b * c {
        let src = &x.data()[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out.data_mut()[bc * ho * wo..(bc + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for dy in 0..k {
                    for dx in 0..k {
                        acc = acc + src[(oy * k + dy) * w + ox * k + dx];
                    }
                }
                dst[oy * wo + ox] = acc * inv;
            }
        }
    }
    Ok(out)
}

/// Gradient of `avg_pool2d`.
pub fn avg_pool2d_grad<T: Scalar>(grad_out: &Array<T>, x_shape: &[usize], k: usize) -> Array<T> {
    let (b, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (ho, wo) = (h / k, w / k);
    let inv = T::one() / T::of((k * k) as f64);
    let mut dx = Array::zeros(x_shape);
    for bc in 0..b * c {
        let src = &grad_out.data()[bc * ho * wo..(bc + 1) * ho * wo];
        let dst = &mut dx.data_mut()[bc * h * w..(bc + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let g = src[oy * wo + ox] * inv;
                for dy in 0..k {
                    for dx2 in 0..k {
                        dst[(oy * k + dy) * w + ox * k + dx2] = g;
                    }
                }
            }
        }
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample_nearest2<T: Scalar>(x: &Array<T>) -> Result<Array<T>> {
    if x.rank() != 4 {
        return Err(NumericsError::InvalidShape {
            op: "upsample_nearest2",
            msg: format!("need NCHW, got {:?}", x.shape()),
        });
    }
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = Array::zeros(&[b, c, 2 * h, 2 * w]);
    for bc in 0..b * c {
        let src = &x.data()[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out.data_mut()[bc * 4 * h * w..(bc + 1) * 4 * h * w];
        for y in 0..h {
            for x2 in 0..w {
                let v = src[y * w + x2];
                let base = 2 * y * 2 * w + 2 * x2;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + 2 * w] = v;
                dst[base + 2 * w + 1] = v;
            }
        }
    }
    Ok(out)
}

/// Gradient of `upsample_nearest2`: sum over each 2x2 block.
pub fn upsample_nearest2_grad<T: Scalar>(grad_out: &Array<T>, x_shape: &[usize]) -> Array<T> {
    let (b, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let mut dx = Array::zeros(x_shape);
    for bc in 0..b * c {
        let src = &grad_out.data()[bc * 4 * h * w..(bc + 1) * 4 * h * w];
        let dst = &mut dx.data_mut()[bc * h * w..(bc + 1) * h * w];
        for y in 0..h {
            for x2 in 0..w {
                let base = 2 * y * 2 * w + 2 * x2;
                dst[y * w + x2] = src[base] + src[base + 1] + src[base + 2 * w] + src[base + 2 * w + 1];
            }
        }
    }
    dx
}

/// Numerically stable softmax along `axis`.
pub fn softmax_axis<T: Scalar>(x: &Array<T>, axis: usize) -> Result<Array<T>> {
    if axis >= x.rank() {
        return Err(NumericsError::InvalidShape {
            op: "softmax",
            msg: format!("axis {axis} for shape {:?}", x.shape()),
        });
    }
    let len = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer: usize = x.shape()[..axis].iter().product();
    let mut out = x.clone();
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut mx = data[base];
            for j in 1..len {
                let v = data[base + j * inner];
                if v > mx {
                    mx = v;
                }
            }
            let mut sum = T::zero();
            for j in 0..len {
                let e = (data[base + j * inner] - mx).exp();
                data[base + j * inner] = e;
                sum = sum + e;
            }
            for j in 0..len {
                data[base + j * inner] = data[base + j * inner] / sum;
            }
        }
    }
    Ok(out)
}

/// Backward of softmax given its output `y` and upstream gradient `dy`:
/// `dx = y * (dy - sum(y * dy, axis))`.
pub fn softmax_axis_grad<T: Scalar>(y: &Array<T>, dy: &Array<T>, axis: usize) -> Array<T> {
    let len = y.shape()[axis];
    let inner: usize = y.shape()[axis + 1..].iter().product();
    let outer: usize = y.shape()[..axis].iter().product();
    let mut dx = Array::zeros(y.shape());
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                dot = dot + y.data()[base + j * inner] * dy.data()[base + j * inner];
            }
            for j in 0..len {
                let idx = base + j * inner;
                dx.data_mut()[idx] = y.data()[idx] * (dy.data()[idx] - dot);
            }
        }
    }
    dx
}
