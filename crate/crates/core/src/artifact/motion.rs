//! Rigid in-plane motion by segmented k-space compositing.
//!
//! The acquisition is split into `T + 1` contiguous blocks of phase-encoding
//! planes. Block 0 is read from the unmoved image; block `b` from the image
//! under the `b`-th sampled rigid transform. One pixel is one millimetre.

use crate::error::{Error, Result};
use crate::kspace::{to_image, to_kspace, KSpace, PhaseAxis};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Translation in pixels and rotation in degrees about the image center.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidTransform {
    pub shift_rows: f64,
    pub shift_cols: f64,
    pub rotation_deg: f64,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        shift_rows: 0.0,
        shift_cols: 0.0,
        rotation_deg: 0.0,
    };

    pub fn sample(translation: f64, rotation: f64, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            shift_rows: rng.uniform(-translation, translation)?,
            shift_cols: rng.uniform(-translation, translation)?,
            rotation_deg: rng.uniform(-rotation, rotation)?,
        })
    }

    /// Resamples `x` under this transform: bilinear, zero outside the image.
    pub fn warp(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (h, w) = x.shape2()?;
        if *self == Self::IDENTITY {
            return Ok(x.clone());
        }
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let src = x.data();
        let at = |r: isize, c: isize| -> f64 {
            if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                0.0
            } else {
                src[r as usize * w + c as usize]
            }
        };
        Ok(Tensor::from_fn(&[h, w], |i| {
            // Inverse map: rotate the de-translated output coordinate by -θ.
            let dy = (i / w) as f64 - cy - self.shift_rows;
            let dx = (i % w) as f64 - cx - self.shift_cols;
            let sy = cos * dy - sin * dx + cy;
            let sx = sin * dy + cos * dx + cx;
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let mut v = (1.0 - fy) * (1.0 - fx) * at(y0, x0);
            if fx != 0.0 {
                v += (1.0 - fy) * fx * at(y0, x0 + 1);
            }
            if fy != 0.0 {
                v += fy * (1.0 - fx) * at(y0 + 1, x0);
                if fx != 0.0 {
                    v += fy * fx * at(y0 + 1, x0 + 1);
                }
            }
            v
        }))
    }
}

/// Start plane of each of `blocks` contiguous segments over `num_planes`.
pub fn segment_starts(num_planes: usize, blocks: usize) -> Vec<usize> {
    (0..blocks).map(|b| b * num_planes / blocks).collect()
}

pub fn apply_rigid_motion(
    x: &Tensor<f64>,
    translation_mm: f64,
    rotation_deg: f64,
    num_movements: usize,
    rng: &mut Rng,
) -> Result<Tensor<f64>> {
    if !(translation_mm >= 0.0) || !(rotation_deg >= 0.0) {
        return Err(Error::InvalidParam("motion ranges must be >= 0".into()));
    }
    if num_movements < 1 {
        return Err(Error::InvalidParam("num_movements must be >= 1".into()));
    }
    let (h, _) = x.shape2()?;
    let mut segments = vec![RigidTransform::IDENTITY];
    for _ in 0..num_movements {
        segments.push(RigidTransform::sample(translation_mm, rotation_deg, rng)?);
    }
    let starts = segment_starts(h, num_movements + 1);
    let plan: Vec<(usize, RigidTransform)> = starts.into_iter().zip(segments).collect();
    to_image(&motion_kspace(x, &plan, PhaseAxis::Rows)?)
}

/// Composite spectrum from `(start_plane, transform)` segments.
///
/// Segment `i` covers planes from its start up to the next segment's start.
/// The first segment must start at plane 0.
pub fn motion_kspace(
    x: &Tensor<f64>,
    segments: &[(usize, RigidTransform)],
    axis: PhaseAxis,
) -> Result<KSpace> {
    let base = to_kspace(x, axis)?;
    let n = base.num_planes();
    match segments.first() {
        Some(&(0, _)) => {}
        _ => {
            return Err(Error::InvalidParam(
                "first motion segment must start at plane 0".into(),
            ))
        }
    }
    if segments.windows(2).any(|p| p[0].0 > p[1].0) || segments.iter().any(|s| s.0 > n) {
        return Err(Error::InvalidParam(
            "motion segments must be ordered within the plane range".into(),
        ));
    }
    let mut out = base.clone();
    for (i, &(start, t)) in segments.iter().enumerate() {
        let end = segments.get(i + 1).map_or(n, |s| s.0);
        if start == end {
            continue;
        }
        let moved = if t == RigidTransform::IDENTITY {
            base.clone()
        } else {
            to_kspace(&t.warp(x)?, axis)?
        };
        for p in start..end {
            out.copy_plane_from(&moved, p);
        }
    }
    Ok(out)
}
