//! Central finite-difference oracle for graph gradients (f64 only).

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2, ABS_FLOOR)` per input.
    pub relative_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Gradient norm below which errors are measured in absolute terms.
pub const ABS_FLOOR: f64 = 1e-6;

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `eps`, for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let mut grads = g.backward(out)?;

    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads
            .take(v)
            .unwrap_or_else(|| Tensor::zeros(inputs[i].rows(), inputs[i].cols()));
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for k in 0..inputs[i].len() {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + eps;
            let up = eval(&work)?;
            work[i].data_mut()[k] = orig - eps;
            let down = eval(&work)?;
            work[i].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[k];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        // Some gradients vanish exactly, e.g. a bias added to every softmax
        // logit; there the differences are pure rounding noise.
        let denom = a2.sqrt().max(n2.sqrt()).max(ABS_FLOOR);
        relative_errors.push(diff2.sqrt() / denom);
    }
    Ok(GradCheckReport { relative_errors })
}
