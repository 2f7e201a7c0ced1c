//! Image ⇄ k-space conventions.
//!
//! Spectra are stored centered: the DC bin sits at `(H/2, W/2)` with floor
//! division. A phase-encoding *plane* is one line of the spectrum at a fixed
//! index along [`PhaseAxis`]: a whole row for `Rows`, a whole column for `Cols`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft2, fftshift, ifft2, ifftshift};
use crate::io;
use crate::tensor::{magnitude, CTensor, Complex64, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseAxis {
    #[default]
    Rows,
    Cols,
}

impl PhaseAxis {
    pub fn index(self) -> usize {
        match self {
            PhaseAxis::Rows => 0,
            PhaseAxis::Cols => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSpace {
    spectrum: CTensor,
    centered: bool,
    phase_axis: PhaseAxis,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Sidecar {
    centered: bool,
    phase_axis: PhaseAxis,
}

impl KSpace {
    pub fn from_parts(spectrum: CTensor, centered: bool, phase_axis: PhaseAxis) -> Result<Self> {
        spectrum.shape2()?;
        Ok(Self {
            spectrum,
            centered,
            phase_axis,
        })
    }

    pub fn spectrum(&self) -> &CTensor {
        &self.spectrum
    }

    pub fn spectrum_mut(&mut self) -> &mut CTensor {
        &mut self.spectrum
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn phase_axis(&self) -> PhaseAxis {
        self.phase_axis
    }

    pub fn dims(&self) -> (usize, usize) {
        let d = self.spectrum.dims();
        (d[0], d[1])
    }

    /// DC location in the current layout.
    pub fn dc(&self) -> (usize, usize) {
        let (h, w) = self.dims();
        if self.centered {
            (h / 2, w / 2)
        } else {
            (0, 0)
        }
    }

    /// Number of planes along the phase-encoding axis.
    pub fn num_planes(&self) -> usize {
        let (h, w) = self.dims();
        match self.phase_axis {
            PhaseAxis::Rows => h,
            PhaseAxis::Cols => w,
        }
    }

    /// Index of the plane through DC along the phase axis.
    pub fn dc_plane(&self) -> usize {
        let (r, c) = self.dc();
        match self.phase_axis {
            PhaseAxis::Rows => r,
            PhaseAxis::Cols => c,
        }
    }

    /// Visits every bin of plane `p` mutably.
    pub fn for_plane_mut(&mut self, p: usize, mut f: impl FnMut(&mut Complex64)) {
        let (h, w) = self.dims();
        let data = self.spectrum.data_mut();
        match self.phase_axis {
            PhaseAxis::Rows => data[p * w..(p + 1) * w].iter_mut().for_each(f),
            PhaseAxis::Cols => (0..h).for_each(|y| f(&mut data[y * w + p])),
        }
    }

    /// Copies plane `p` from `other`, which must share dims and layout.
    pub fn copy_plane_from(&mut self, other: &KSpace, p: usize) {
        let (h, w) = self.dims();
        let src = other.spectrum.data();
        let dst = self.spectrum.data_mut();
        match self.phase_axis {
            PhaseAxis::Rows => dst[p * w..(p + 1) * w].copy_from_slice(&src[p * w..(p + 1) * w]),
            PhaseAxis::Cols => (0..h).for_each(|y| dst[y * w + p] = src[y * w + p]),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        io::write_complex(path, &self.spectrum)?;
        let sidecar = serde_json::to_string(&Sidecar {
            centered: self.centered,
            phase_axis: self.phase_axis,
        })?;
        let side = sidecar_path(path);
        fs::write(&side, sidecar + "\n").map_err(|e| Error::io(side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let spectrum = io::read_tensor(path)?.into_complex()?;
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sc: Sidecar = serde_json::from_str(text.trim())?;
        Self::from_parts(spectrum, sc.centered, sc.phase_axis)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Centered spectrum of a real image.
pub fn to_kspace(image: &Tensor<f64>, phase_axis: PhaseAxis) -> Result<KSpace> {
    image.shape2()?;
    let spectrum = fftshift(&fft2(image)?)?;
    Ok(KSpace {
        spectrum,
        centered: true,
        phase_axis,
    })
}

/// Magnitude image of the (uncentered) inverse transform.
pub fn to_image(k: &KSpace) -> Result<Tensor<f64>> {
    let img = if k.centered {
        ifft2(&ifftshift(&k.spectrum)?)?
    } else {
        ifft2(&k.spectrum)?
    };
    Ok(magnitude(&img))
}

pub fn max_spectrum_magnitude(k: &KSpace) -> f64 {
    k.spectrum
        .data()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}
