//! Dense row-major tensors and the handful of differentiable kernels the
//! driving network needs: valid-padding 2-D convolution, fully connected
//! layers, ReLU, mean-squared error and the Adam optimizer.
//!
//! Every kernel comes as a forward/backward pair of free functions. Backward
//! functions take the tensors saved during the forward pass explicitly, so a
//! caller that wants reverse-mode differentiation through a stack of layers
//! records the inputs on the way forward and replays the stack in reverse.
//!
//! Kernels are generic over [`Scalar`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference reference evaluation.

mod activation;
mod adam;
mod conv;
mod dense;
pub mod gradcheck;
mod loss;
mod scalar;

pub use activation::{relu_backward, relu_forward};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{conv2d_backward, conv2d_forward, conv2d_param_grads, conv_output_dim, Conv2dGrads};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use loss::{mse_loss, mse_loss_backward};
pub use scalar::Scalar;

use rand::Rng;
use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: {dim} is {found}, expected {expected}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: expected rank {expected}, found rank {found}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: kernel {dim} {kernel} exceeds input {dim} {input}")]
    KernelTooLarge {
        op: &'static str,
        dim: &'static str,
        kernel: usize,
        input: usize,
    },
    #[error("data length {found} does not match shape {shape:?} (expected {expected})")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("invalid shape {0:?}: every dimension must be positive")]
    InvalidShape(Vec<usize>),
    #[error("{op}: stride must be positive")]
    ZeroStride { op: &'static str },
    #[error("{op}: missing saved forward context")]
    MissingContext { op: &'static str },
    #[error("parameter {param_index} has a non-finite gradient at element {element}")]
    NonFiniteGradient { param_index: usize, element: usize },
    #[error("parameter {param_index} has no gradient buffer")]
    MissingGradient { param_index: usize },
    #[error("optimizer state tracks {expected} parameters, got {found}")]
    ParamCountMismatch { expected: usize, found: usize },
}

/// Row-major dense tensor with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected = checked_numel(shape)?;
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = checked_numel(shape)?;
        Self::new(shape, vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    /// Uniform samples in `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Result<Self> {
        let n = checked_numel(shape)?;
        let data = (0..n)
            .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        Self::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    /// Replaces the gradient buffer. The buffer must match the data length.
    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(TensorError::DataLength {
                shape: self.shape.clone(),
                expected: self.data.len(),
                found: grad.len(),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(TensorError::DataLength {
                shape: self.shape.clone(),
                expected: self.data.len(),
                found: delta.len(),
            });
        }
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(g, &d)| *g += d),
            None => self.grad = Some(delta.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|g| *g = T::zero()),
            None => self.grad = Some(vec![T::zero(); self.data.len()]),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected = checked_numel(shape)?;
        if expected != self.data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                found: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Converts element type; the gradient buffer is carried over.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|&x| U::from_f64(x.to_f64())).collect()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub(crate) fn expect_rank<T>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.shape.len() != rank {
        return Err(TensorError::RankMismatch {
            op,
            expected: rank,
            found: t.shape.len(),
        });
    }
    Ok(())
}

pub(crate) fn expect_dim(
    op: &'static str,
    dim: &'static str,
    expected: usize,
    found: usize,
) -> Result<()> {
    if expected != found {
        return Err(TensorError::ShapeMismatch {
            op,
            dim,
            expected,
            found,
        });
    }
    Ok(())
}
