use super::NumericsError;
use crate::numerics::RngState;

/// An n-dimensional float64 array in row-major order.
///
/// Tensors are plain values: model parameters, inputs, and results. They
/// participate in differentiation by being registered on a [`super::Tape`],
/// which hands back a lightweight [`super::Var`] handle. After a backward
/// pass the training loop copies gradients back into `grad`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, validating that `data` fills `shape` exactly and
    /// every extent is positive.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(NumericsError::EmptyDimension {
                op: "tensor",
                shape,
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::DataLength {
                op: "tensor",
                len: data.len(),
                shape,
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        Tensor::filled(shape, 1.0)
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    /// Rank-0 scalar.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Truncated-normal initialization: samples N(0, std²) rejected outside
    /// ±2·std. The convention used for all weight matrices in this project.
    pub fn randn_truncated(shape: Vec<usize>, std: f64, rng: &mut RngState) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.normal_truncated(std)).collect();
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn requires_grad(mut self, yes: bool) -> Self {
        self.requires_grad = yes;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Single stored value of a rank-0 or one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Stored gradient, or zeros when no gradient has flowed to this tensor.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        match &self.grad {
            Some(g) => g.clone(),
            None => vec![0.0; self.data.len()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let err = Tensor::from_vec(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, NumericsError::DataLength { len: 5, .. }));
        let t = Tensor::from_vec(vec![2, 3], vec![0.5; 6]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.len(), 6);
    }

    #[test]
    fn zero_extent_rejected() {
        let err = Tensor::from_vec(vec![2, 0], vec![]).unwrap_err();
        assert!(matches!(err, NumericsError::EmptyDimension { .. }));
    }

    #[test]
    fn scalar_has_empty_shape() {
        let s = Tensor::scalar(3.5);
        assert!(s.shape().is_empty());
        assert_eq!(s.item(), 3.5);
    }

    #[test]
    fn truncated_normal_is_seeded_and_bounded() {
        let mut r1 = RngState::new(7);
        let mut r2 = RngState::new(7);
        let a = Tensor::randn_truncated(vec![64, 4], 0.02, &mut r1);
        let b = Tensor::randn_truncated(vec![64, 4], 0.02, &mut r2);
        assert_eq!(a.data(), b.data(), "same seed must give identical weights");
        assert!(a.data().iter().all(|v| v.abs() <= 0.04 + 1e-12));
        assert!(a.data().iter().any(|v| *v != 0.0));
    }
}
