//! Central finite differences, the reference oracle for every gradient in
//! the crate.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` of a scalar
/// function at `x`.
pub fn fd_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::usage(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "function value at coordinate {i} is not finite"
            )));
        }
        out.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), out)
}
