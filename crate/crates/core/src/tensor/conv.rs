//! Valid-padding 2-D convolution lowered to GEMM through im2col.
//!
//! Column matrices are laid out `K × (nb·P)` with `K = C_in·kh·kw` in kernel
//! row-major order `(c, i, j)` and `P = H'·W'`. Batches are processed in
//! chunks so the column buffer stays a few megabytes regardless of batch size.

use super::{expect_dim, Result, Scalar, Tensor, TensorError};

const OP_FWD: &str = "conv2d_forward";
const OP_BWD: &str = "conv2d_backward";

/// Column-buffer budget in elements per chunk.
const CHUNK_ELEMS: usize = 1 << 21;

/// Output spatial size of a valid-padding convolution, `None` if the kernel
/// does not fit.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input < kernel {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
    fn p(&self) -> usize {
        self.ho * self.wo
    }
    fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }
    fn out_len(&self) -> usize {
        self.c_out * self.p()
    }
    fn chunk(&self) -> usize {
        (CHUNK_ELEMS / (self.k() * self.p()).max(1)).clamp(1, self.batch)
    }
    fn out_shape(&self, batched: bool) -> Vec<usize> {
        if batched {
            vec![self.batch, self.c_out, self.ho, self.wo]
        } else {
            vec![self.c_out, self.ho, self.wo]
        }
    }
}

fn geometry<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<(Geometry, bool)> {
    if stride == 0 {
        return Err(TensorError::ZeroStride { op });
    }
    let (batch, c_in, h, w, batched) = match *input.shape() {
        [c, h, w] => (1, c, h, w, false),
        [b, c, h, w] => (b, c, h, w, true),
        _ => {
            return Err(TensorError::RankMismatch {
                op,
                expected: 4,
                found: input.rank(),
            })
        }
    };
    let [c_out, k_in, kh, kw] = *kernels.shape() else {
        return Err(TensorError::RankMismatch {
            op,
            expected: 4,
            found: kernels.rank(),
        });
    };
    expect_dim(op, "input channels", k_in, c_in)?;
    if let Some(bias) = bias {
        expect_dim(op, "bias length", c_out, bias.numel())?;
    }
    let ho = conv_output_dim(h, kh, stride).ok_or(TensorError::KernelTooLarge {
        op,
        dim: "height",
        kernel: kh,
        input: h,
    })?;
    let wo = conv_output_dim(w, kw, stride).ok_or(TensorError::KernelTooLarge {
        op,
        dim: "width",
        kernel: kw,
        input: w,
    })?;
    Ok((
        Geometry {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            ho,
            wo,
        },
        batched,
    ))
}

/// Writes one sample's columns into `cols` (row stride `ld`, column offset `off`).
fn im2col<T: Scalar>(g: &Geometry, x: &[T], cols: &mut [T], ld: usize, off: usize) {
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let dst = &mut cols[row * ld + off..row * ld + off + g.p()];
                for oy in 0..g.ho {
                    let src = &plane[(oy * g.stride + i) * g.w + j..];
                    let d = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        d.copy_from_slice(&src[..g.wo]);
                    } else {
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = src[ox * g.stride];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds one sample's column gradients back into the input gradient.
fn col2im<T: Scalar>(g: &Geometry, cols: &[T], ld: usize, off: usize, dx: &mut [T]) {
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let src = &cols[row * ld + off..row * ld + off + g.p()];
                for oy in 0..g.ho {
                    let base = (oy * g.stride + i) * g.w + j;
                    let s = &src[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, &v) in s.iter().enumerate() {
                        plane[base + ox * g.stride] += v;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Valid-padding convolution. `input` is `C_in×H×W` or `B×C_in×H×W`,
/// `kernels` is `C_out×C_in×kh×kw`, `bias` has `C_out` elements. The output
/// keeps the input's rank.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (g, batched) = geometry(OP_FWD, input, kernels, Some(bias), stride)?;
    let (k, p) = (g.k(), g.p());
    let chunk = g.chunk();
    let mut out = vec![T::zero(); g.batch * g.out_len()];
    let mut cols = vec![T::zero(); k * chunk * p];
    let mut res = vec![T::zero(); g.c_out * chunk * p];
    let x = input.data();

    for start in (0..g.batch).step_by(chunk) {
        let nb = chunk.min(g.batch - start);
        let ld = nb * p;
        for b in 0..nb {
            let xb = &x[(start + b) * g.in_len()..(start + b + 1) * g.in_len()];
            im2col(&g, xb, &mut cols, ld, b * p);
        }
        T::gemm(g.c_out, k, ld, kernels.data(), false, &cols, false, T::zero(), &mut res);
        for b in 0..nb {
            let ob = &mut out[(start + b) * g.out_len()..(start + b + 1) * g.out_len()];
            for co in 0..g.c_out {
                let bias_v = bias.data()[co];
                let src = &res[co * ld + b * p..co * ld + (b + 1) * p];
                for (o, &r) in ob[co * p..(co + 1) * p].iter_mut().zip(src) {
                    *o = r + bias_v;
                }
            }
        }
    }
    Tensor::new(&g.out_shape(batched), out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dGrads<T = f32> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of a convolution given the saved forward input and the
/// upstream gradient (which must have the forward output's shape).
pub fn conv2d_backward<T: Scalar>(
    saved_input: &Tensor<T>,
    kernels: &Tensor<T>,
    upstream: &Tensor<T>,
    stride: usize,
) -> Result<Conv2dGrads<T>> {
    let (dx, dw, db) = backward_impl(saved_input, kernels, upstream, stride, true)?;
    Ok(Conv2dGrads {
        input: dx.expect("requested"),
        kernels: dw,
        bias: db,
    })
}

/// Kernel and bias gradients only, skipping the input gradient (used for a
/// network's first layer, whose input needs no gradient).
pub fn conv2d_param_grads<T: Scalar>(
    saved_input: &Tensor<T>,
    kernels: &Tensor<T>,
    upstream: &Tensor<T>,
    stride: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (_, dw, db) = backward_impl(saved_input, kernels, upstream, stride, false)?;
    Ok((dw, db))
}

type BackwardParts<T> = (Option<Tensor<T>>, Tensor<T>, Tensor<T>);

fn backward_impl<T: Scalar>(
    saved_input: &Tensor<T>,
    kernels: &Tensor<T>,
    upstream: &Tensor<T>,
    stride: usize,
    need_input: bool,
) -> Result<BackwardParts<T>> {
    let (g, batched) = geometry(OP_BWD, saved_input, kernels, None, stride)?;
    let want = g.out_shape(batched);
    if upstream.rank() != want.len() {
        return Err(TensorError::RankMismatch {
            op: OP_BWD,
            expected: want.len(),
            found: upstream.rank(),
        });
    }
    for (i, (&e, &f)) in want.iter().zip(upstream.shape()).enumerate() {
        let dim = ["batch", "output channels", "output height", "output width"]
            [i + 4 - want.len()];
        expect_dim(OP_BWD, dim, e, f)?;
    }

    let (k, p) = (g.k(), g.p());
    let chunk = g.chunk();
    let mut dx = if need_input { vec![T::zero(); g.batch * g.in_len()] } else { Vec::new() };
    let mut dw = vec![T::zero(); g.c_out * k];
    let mut db = vec![T::zero(); g.c_out];
    let mut cols = vec![T::zero(); k * chunk * p];
    let mut gcat = vec![T::zero(); g.c_out * chunk * p];
    let mut dcols = if need_input { vec![T::zero(); k * chunk * p] } else { Vec::new() };
    let x = saved_input.data();
    let up = upstream.data();

    for start in (0..g.batch).step_by(chunk) {
        let nb = chunk.min(g.batch - start);
        let ld = nb * p;
        for b in 0..nb {
            let xb = &x[(start + b) * g.in_len()..(start + b + 1) * g.in_len()];
            im2col(&g, xb, &mut cols, ld, b * p);
            let gb = &up[(start + b) * g.out_len()..(start + b + 1) * g.out_len()];
            for co in 0..g.c_out {
                let src = &gb[co * p..(co + 1) * p];
                gcat[co * ld + b * p..co * ld + (b + 1) * p].copy_from_slice(src);
                let mut s = T::zero();
                for &v in src {
                    s += v;
                }
                db[co] += s;
            }
        }
        // dW += G · colsᵀ
        T::gemm(g.c_out, ld, k, &gcat, false, &cols, true, T::one(), &mut dw);
        if !need_input {
            continue;
        }
        // dcols = Wᵀ · G
        T::gemm(k, g.c_out, ld, kernels.data(), true, &gcat, false, T::zero(), &mut dcols);
        for b in 0..nb {
            let dxb = &mut dx[(start + b) * g.in_len()..(start + b + 1) * g.in_len()];
            col2im(&g, &dcols, ld, b * p, dxb);
        }
    }

    let dx = if need_input { Some(Tensor::new(saved_input.shape(), dx)?) } else { None };
    Ok((dx, Tensor::new(kernels.shape(), dw)?, Tensor::new(&[g.c_out], db)?))
}
