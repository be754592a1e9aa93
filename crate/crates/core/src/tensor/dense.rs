use super::{expect_dim, expect_rank, Result, Scalar, Tensor};

const OP_FWD: &str = "dense_forward";
const OP_BWD: &str = "dense_backward";

/// Affine map `y = x·Wᵀ + b` for `x: B×N`, `W: M×N`, `b: M`.
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    expect_rank(OP_FWD, input, 2)?;
    expect_rank(OP_FWD, weights, 2)?;
    let (b, n) = (input.shape()[0], input.shape()[1]);
    let m = weights.shape()[0];
    expect_dim(OP_FWD, "input features", weights.shape()[1], n)?;
    expect_dim(OP_FWD, "bias length", m, bias.numel())?;

    let mut out = Vec::with_capacity(b * m);
    for _ in 0..b {
        out.extend_from_slice(bias.data());
    }
    T::gemm(b, n, m, input.data(), false, weights.data(), true, T::one(), &mut out);
    Tensor::new(&[b, m], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    saved_input: &Tensor<T>,
    weights: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    expect_rank(OP_BWD, saved_input, 2)?;
    expect_rank(OP_BWD, weights, 2)?;
    expect_rank(OP_BWD, upstream, 2)?;
    let (b, n) = (saved_input.shape()[0], saved_input.shape()[1]);
    let m = weights.shape()[0];
    expect_dim(OP_BWD, "input features", weights.shape()[1], n)?;
    expect_dim(OP_BWD, "upstream batch", b, upstream.shape()[0])?;
    expect_dim(OP_BWD, "upstream features", m, upstream.shape()[1])?;

    let g = upstream.data();
    let mut dx = vec![T::zero(); b * n];
    T::gemm(b, m, n, g, false, weights.data(), false, T::zero(), &mut dx);
    let mut dw = vec![T::zero(); m * n];
    T::gemm(m, b, n, g, true, saved_input.data(), false, T::zero(), &mut dw);
    let mut db = vec![T::zero(); m];
    for row in g.chunks_exact(m) {
        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
    }
    Ok(DenseGrads {
        input: Tensor::new(&[b, n], dx)?,
        weights: Tensor::new(&[m, n], dw)?,
        bias: Tensor::new(&[m], db)?,
    })
}
