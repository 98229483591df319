use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum and L2 weight decay folded into the velocity:
/// `v <- momentum * v + g + weight_decay * theta`, `theta <- theta - lr * v`.
#[derive(Clone, Debug)]
pub struct SgdState<T> {
    pub momentum: T,
    pub weight_decay: T,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(
        shapes: impl IntoIterator<Item = (usize, usize)>,
        momentum: T,
        weight_decay: T,
    ) -> Self {
        SgdState {
            momentum,
            weight_decay,
            velocity: shapes
                .into_iter()
                .map(|(r, c)| Tensor::zeros(r, c))
                .collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    /// One update. Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: T) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != params.len() {
            return Err(NnError::ShapeMismatch {
                op: "sgd_step",
                lhs: (params.len(), self.velocity.len()),
                rhs: (grads.len(), 1),
            });
        }
        for (i, ((p, g), v)) in params.iter().zip(grads).zip(&self.velocity).enumerate() {
            if p.shape() != g.shape() || v.shape() != p.shape() {
                return Err(NnError::ShapeMismatch {
                    op: "sgd_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(NnError::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            for ((pp, &gg), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv + gg + self.weight_decay * *pp;
                *pp -= lr * *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut sgd = SgdState::new([(1, 3)], 0.9, 0.0);
        let mut p = [Tensor::row_vector(vec![1.0, -2.0, 3.0])];
        let before = p[0].clone();
        sgd.step(&mut p, &[Tensor::zeros(1, 3)], 0.02).unwrap();
        assert_eq!(p[0], before);
    }

    #[test]
    fn hand_computed_momentum_steps() {
        let mut sgd = SgdState::new([(1, 1)], 0.9, 0.0);
        let mut p = [one(1.0)];
        sgd.step(&mut p, &[one(1.0)], 0.02).unwrap();
        assert!((sgd.velocity()[0].item() - 1.0).abs() < 1e-12);
        assert!((p[0].item() - 0.98).abs() < 1e-12);
        sgd.step(&mut p, &[one(1.0)], 0.02).unwrap();
        assert!((sgd.velocity()[0].item() - 1.9).abs() < 1e-12);
        assert!((p[0].item() - 0.942).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_enters_velocity() {
        let mut sgd = SgdState::new([(1, 1)], 0.9, 1e-5);
        let mut p = [one(2.0)];
        sgd.step(&mut p, &[one(0.0)], 1.0).unwrap();
        assert!((p[0].item() - (2.0 - 2e-5)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut sgd = SgdState::new([(1, 2), (1, 1)], 0.9, 1e-5);
        let mut p = [Tensor::row_vector(vec![1.0, 2.0]), one(3.0)];
        let grads = [Tensor::row_vector(vec![0.5, 0.5]), one(f64::NAN)];
        let err = sgd.step(&mut p, &grads, 0.1).unwrap_err();
        assert!(matches!(err, NnError::NonFinite(_)));
        assert_eq!(p[0].data(), &[1.0, 2.0]);
        assert_eq!(sgd.velocity()[0].data(), &[0.0, 0.0]);
    }
}
