//! Finite-difference gradient verification.

use super::{Elem, Tensor};
use crate::error::Result;

/// Compare autodiff gradients of `f` at `point` against central finite
/// differences. Returns the max over coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// `f` must be deterministic and must build its output from the tensor it is
/// handed (not a captured clone), otherwise the probe perturbations are
/// invisible to it.
pub fn grad_check<F>(f: F, point: &Tensor, eps: Elem) -> Result<Elem>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    assert!(eps > 0.0, "grad_check eps must be positive");
    let shape = point.shape();
    let base = point.data();

    let x = Tensor::param(&shape, base.clone())?;
    let loss = f(&x)?;
    loss.backward()?;
    let analytic = x.grad().expect("grad_check: no gradient reached the probe point");

    let mut max_err: Elem = 0.0;
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + eps;
        let xp = Tensor::new(&shape, probe.clone())?;
        let fp = f(&xp)?.item();
        probe[i] = base[i] - eps;
        let xm = Tensor::new(&shape, probe.clone())?;
        let fm = f(&xm)?.item();
        probe[i] = base[i];
        let numeric = (fp - fm) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let err = (analytic[i] - numeric).abs() / denom;
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}
