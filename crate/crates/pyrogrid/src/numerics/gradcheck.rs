//! Central finite-difference gradient checking.

use super::Param;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Checks analytic gradients of `loss_fn` against central finite
/// differences for every element of every listed parameter.
///
/// `loss_fn(true)` must build a fresh tape, run backward, and return the
/// loss value (accumulating into param grads); `loss_fn(false)` must only
/// evaluate the loss. Gradients are zeroed here before the analytic pass.
pub fn check_params(
    params: &[(&str, Param)],
    mut loss_fn: impl FnMut(bool) -> f64,
    eps: f64,
    tol: f64,
) -> Result<(), String> {
    for (_, p) in params {
        p.zero_grad();
    }
    let _ = loss_fn(true);
    let analytic: Vec<Vec<f64>> = params.iter().map(|(_, p)| p.grad().data().to_vec()).collect();
    for (pi, (name, p)) in params.iter().enumerate() {
        let n = p.numel();
        for i in 0..n {
            let orig = p.borrow().value.data()[i];
            p.borrow_mut().value.data_mut()[i] = orig + eps;
            let lp = loss_fn(false);
            p.borrow_mut().value.data_mut()[i] = orig - eps;
            let lm = loss_fn(false);
            p.borrow_mut().value.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let a = analytic[pi][i];
            let denom = a.abs().max(fd.abs()).max(1e-6);
            let rel = (a - fd).abs() / denom;
            if rel >= tol {
                return Err(format!(
                    "{name}[{i}]: analytic {a:.3e} vs finite-diff {fd:.3e} (rel {rel:.3e})"
                ));
            }
        }
    }
    for (_, p) in params {
        p.zero_grad();
    }
    Ok(())
}
