use super::{expect_dim, Result, Scalar, Tensor};

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .map(|&x| if x > T::zero() { x } else { T::zero() })
        .collect();
    Tensor::new(input.shape(), data).expect("shape preserved")
}

/// Passes `upstream` where the saved forward input was strictly positive.
pub fn relu_backward<T: Scalar>(saved_input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    expect_dim("relu_backward", "element count", saved_input.numel(), upstream.numel())?;
    let data = saved_input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(saved_input.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives() {
        let x = Tensor::<f32>::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn positive_region_is_identity() {
        let x = Tensor::<f32>::new(&[2, 2], vec![0.1, 5.0, 3.0, 1e-6]).unwrap();
        assert_eq!(relu_forward(&x).data(), x.data());
    }

    #[test]
    fn backward_masks_non_positive_inputs() {
        let x = Tensor::<f32>::new(&[3], vec![-0.5, 0.0, 0.7]).unwrap();
        let up = Tensor::<f32>::new(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(relu_backward(&x, &up).unwrap().data(), &[0.0, 0.0, 1.0]);
    }
}
