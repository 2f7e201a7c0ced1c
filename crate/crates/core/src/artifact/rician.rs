//! Rician noise: magnitude of the image plus complex Gaussian noise.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `|x + N₁(0, σ) + i·N₂(0, σ)|` with `σ = max(x) / snr`.
///
/// An image whose maximum is not positive gets `σ = 0` and is returned as is.
pub fn apply_rician(x: &Tensor<f64>, snr: f64, rng: &mut Rng) -> Result<Tensor<f64>> {
    if !(snr > 0.0) {
        return Err(Error::InvalidParam(format!("snr must be > 0, got {snr}")));
    }
    let peak = x.max();
    if !(peak > 0.0) {
        return Ok(x.clone());
    }
    Ok(apply_rician_sigma(x, peak / snr, rng))
}

/// [`apply_rician`] with an explicit noise scale.
pub fn apply_rician_sigma(x: &Tensor<f64>, sigma: f64, rng: &mut Rng) -> Tensor<f64> {
    x.map(|v| {
        let re = v + sigma * rng.normal();
        let im = sigma * rng.normal();
        re.hypot(im)
    })
}
