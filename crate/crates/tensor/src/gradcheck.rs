//! Central finite-difference gradient checking.

use crate::{Tensor, Var};

/// Result of comparing analytic and numerical gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` over all inputs.
    pub relative_error: f64,
    /// Largest element-wise absolute difference.
    pub max_abs_diff: f64,
    pub numeric_norm: f64,
}

/// Compares reverse-mode gradients of the scalar function `f` with central
/// differences of step `h`, perturbing every element of every input.
pub fn compare_gradients<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> GradCheck
where
    F: Fn(&[Var<f64>]) -> Var<f64>,
{
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| Var::leaf(t.clone(), true)).collect();
    let out = f(&vars);
    assert_eq!(out.value().numel(), 1, "gradient check needs a scalar output");
    let grads = out.backward();

    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let vs: Vec<Var<f64>> = xs.iter().map(|t| Var::constant(t.clone())).collect();
        f(&vs).value().data()[0]
    };

    let (mut diff2, mut an2, mut nu2, mut max_abs) = (0.0, 0.0, 0.0, 0.0f64);
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.shape().to_vec()));
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let fp = eval(&work);
            work[i].data_mut()[j] = x0 - h;
            let fm = eval(&work);
            work[i].data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[j];
            diff2 += (a - numeric).powi(2);
            an2 += a * a;
            nu2 += numeric * numeric;
            max_abs = max_abs.max((a - numeric).abs());
        }
    }
    let denom = an2.sqrt().max(nu2.sqrt());
    GradCheck {
        relative_error: if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom },
        max_abs_diff: max_abs,
        numeric_norm: nu2.sqrt(),
    }
}

/// Shorthand returning only the relative error.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> f64
where
    F: Fn(&[Var<f64>]) -> Var<f64>,
{
    compare_gradients(inputs, h, f).relative_error
}
