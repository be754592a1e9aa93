use super::{expect_dim, Result, Scalar, Tensor, TensorError};

fn check(op: &'static str, pred: &Tensor<impl Scalar>, target: &Tensor<impl Scalar>) -> Result<()> {
    if pred.rank() != target.rank() {
        return Err(TensorError::RankMismatch {
            op,
            expected: pred.rank(),
            found: target.rank(),
        });
    }
    const DIMS: [&str; 4] = ["dim 0", "dim 1", "dim 2", "dim 3"];
    for (i, (&p, &t)) in pred.shape().iter().zip(target.shape()).enumerate() {
        expect_dim(op, DIMS.get(i).copied().unwrap_or("dim"), p, t)?;
    }
    Ok(())
}

/// Mean over every element of the squared difference.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    check("mse_loss", pred, target)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = (p - t).to_f64();
            d * d
        })
        .sum();
    Ok(T::from_f64(sum / pred.numel() as f64))
}

/// `2 (pred − target) / numel`.
pub fn mse_loss_backward<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check("mse_loss_backward", pred, target)?;
    let scale = T::from_f64(2.0 / pred.numel() as f64);
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t) * scale)
        .collect();
    Tensor::new(pred.shape(), data)
}
