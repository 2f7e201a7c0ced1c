//! Ghosting: periodic attenuation of phase-encoding planes.
//!
//! Planes whose offset from the DC plane is a non-zero multiple of
//! `num_ghosts` are scaled by `max(0, 1 - s)` with `s ~ Uniform(0, strength)`,
//! so any `s >= 1` zeroes them outright.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::{to_image, to_kspace, KSpace, PhaseAxis};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GhostAxis {
    Rows,
    Cols,
    #[default]
    Random,
}

pub fn apply_ghosting(
    x: &Tensor<f64>,
    num_ghosts: usize,
    strength: f64,
    axis: GhostAxis,
    rng: &mut Rng,
) -> Result<Tensor<f64>> {
    if num_ghosts < 2 {
        return Err(Error::InvalidParam(format!(
            "num_ghosts must be >= 2, got {num_ghosts}"
        )));
    }
    if !(strength >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "ghost strength must be >= 0, got {strength}"
        )));
    }
    let axis = match axis {
        GhostAxis::Rows => PhaseAxis::Rows,
        GhostAxis::Cols => PhaseAxis::Cols,
        GhostAxis::Random if rng.below(2) == 0 => PhaseAxis::Rows,
        GhostAxis::Random => PhaseAxis::Cols,
    };
    let s = rng.uniform(0.0, strength)?;
    to_image(&ghosting_kspace(x, num_ghosts, s, axis)?)
}

/// Planes attenuated for a given plane count, DC plane and period.
pub fn ghost_planes(
    num_planes: usize,
    dc_plane: usize,
    num_ghosts: usize,
) -> impl Iterator<Item = usize> {
    (0..num_planes).filter(move |&p| p != dc_plane && p.abs_diff(dc_plane) % num_ghosts == 0)
}

/// Deterministic core: attenuates with a fixed `s` along `axis`.
pub fn ghosting_kspace(
    x: &Tensor<f64>,
    num_ghosts: usize,
    s: f64,
    axis: PhaseAxis,
) -> Result<KSpace> {
    if num_ghosts < 2 {
        return Err(Error::InvalidParam(format!(
            "num_ghosts must be >= 2, got {num_ghosts}"
        )));
    }
    let mut k = to_kspace(x, axis)?;
    if s == 0.0 {
        return Ok(k);
    }
    let factor = (1.0 - s).max(0.0);
    let planes: Vec<usize> = ghost_planes(k.num_planes(), k.dc_plane(), num_ghosts).collect();
    for p in planes {
        k.for_plane_mut(p, |z| *z *= factor);
    }
    Ok(k)
}

pub fn apply_ghosting_with_strength(
    x: &Tensor<f64>,
    num_ghosts: usize,
    s: f64,
    axis: PhaseAxis,
) -> Result<Tensor<f64>> {
    to_image(&ghosting_kspace(x, num_ghosts, s, axis)?)
}
