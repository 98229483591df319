use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Normal(0, std) samples truncated to `[-2 std, 2 std]` by rejection.
pub fn trunc_normal<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut R,
) -> Tensor<T> {
    Tensor::from_fn(rows, cols, |_, _| loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            break T::lit(z * std);
        }
    })
}
