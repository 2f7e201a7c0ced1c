//! Spike (herringbone) artifact: spurious high-magnitude k-space bins.

use crate::error::{Error, Result};
use crate::kspace::{max_spectrum_magnitude, to_image, to_kspace, KSpace, PhaseAxis};
use crate::rng::Rng;
use crate::tensor::{Complex64, Tensor};

/// Inserts between 1 and `max_spikes` spikes at random non-DC bins of the
/// centered spectrum. Each spike bin is set to `intensity` times the clean
/// spectrum maximum, with zero phase.
pub fn apply_spike(
    x: &Tensor<f64>,
    intensity: f64,
    max_spikes: usize,
    rng: &mut Rng,
) -> Result<Tensor<f64>> {
    if !(intensity > 0.0) {
        return Err(Error::InvalidParam(format!(
            "spike intensity must be > 0, got {intensity}"
        )));
    }
    if max_spikes < 1 {
        return Err(Error::InvalidParam("max_spikes must be >= 1".into()));
    }
    let (h, w) = x.shape2()?;
    let candidates = h * w - 1;
    let n = rng.int_inclusive(1, max_spikes).min(candidates);
    let dc = (h / 2) * w + w / 2;
    let mut picked: Vec<usize> = Vec::with_capacity(n);
    while picked.len() < n {
        let mut idx = rng.below(candidates as u64) as usize;
        if idx >= dc {
            idx += 1;
        }
        if !picked.contains(&idx) {
            picked.push(idx);
        }
    }
    let locations: Vec<(usize, usize)> = picked.into_iter().map(|i| (i / w, i % w)).collect();
    apply_spike_at(x, intensity, &locations)
}

/// Deterministic core of [`apply_spike`]: spikes at the given centered-spectrum bins.
pub fn apply_spike_at(
    x: &Tensor<f64>,
    intensity: f64,
    locations: &[(usize, usize)],
) -> Result<Tensor<f64>> {
    to_image(&spike_kspace(x, intensity, locations)?)
}

/// The corrupted k-space that [`apply_spike_at`] reconstructs its output from.
pub fn spike_kspace(
    x: &Tensor<f64>,
    intensity: f64,
    locations: &[(usize, usize)],
) -> Result<KSpace> {
    let (h, w) = x.shape2()?;
    let mut k = to_kspace(x, PhaseAxis::Rows)?;
    let value = Complex64::new(intensity * max_spectrum_magnitude(&k), 0.0);
    for &(u, v) in locations {
        if u >= h || v >= w {
            return Err(Error::InvalidParam(format!(
                "spike location ({u}, {v}) outside {h}x{w}"
            )));
        }
        k.spectrum_mut()[[u, v]] = value;
    }
    Ok(k)
}
