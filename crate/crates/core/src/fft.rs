//! Orthonormal 2-D discrete Fourier transform.
//!
//! Both directions are scaled by `1/√(HW)`, so the transform is unitary.
//! Any size is accepted; `rustfft` picks mixed-radix or Bluestein plans.

use std::cell::RefCell;

use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::{CTensor, Complex64, Element, Tensor};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn check_shape<T: Element>(t: &Tensor<T>) -> Result<(usize, usize)> {
    let (h, w) = t.shape2()?;
    if h < 2 || w < 2 {
        return Err(Error::InvalidShape(format!(
            "2-D FFT needs both sides >= 2, got {h}x{w}"
        )));
    }
    Ok((h, w))
}

fn transform(data: &mut [Complex64], h: usize, w: usize, direction: FftDirection) {
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let row_fft = planner.plan_fft(w, direction);
        row_fft.process(data);

        let col_fft = planner.plan_fft(h, direction);
        let mut col = vec![Complex64::default(); h];
        for x in 0..w {
            for y in 0..h {
                col[y] = data[y * w + x];
            }
            col_fft.process(&mut col);
            for y in 0..h {
                data[y * w + x] = col[y];
            }
        }
    });
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Forward orthonormal 2-D DFT of a real or complex `H×W` tensor.
pub fn fft2<T: Element + Into<Complex64>>(image: &Tensor<T>) -> Result<CTensor> {
    let (h, w) = check_shape(image)?;
    let mut out = image.map(|v| v.into());
    transform(out.data_mut(), h, w, FftDirection::Forward);
    Ok(out)
}

/// Inverse of [`fft2`].
pub fn ifft2(spectrum: &CTensor) -> Result<CTensor> {
    let (h, w) = check_shape(spectrum)?;
    let mut out = spectrum.clone();
    transform(out.data_mut(), h, w, FftDirection::Inverse);
    Ok(out)
}

/// Moves the DC bin from `(0, 0)` to `(H/2, W/2)` (floor division).
pub fn fftshift<T: Element>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = t.shape2()?;
    Ok(roll(t, h / 2, w / 2, h, w))
}

/// Inverse of [`fftshift`]; differs from it for odd sizes.
pub fn ifftshift<T: Element>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = t.shape2()?;
    Ok(roll(t, h - h / 2, w - w / 2, h, w))
}

/// Circular shift by `(dy, dx)`: `out[(y + dy) % h][(x + dx) % w] = t[y][x]`.
pub fn roll<T: Element>(t: &Tensor<T>, dy: usize, dx: usize, h: usize, w: usize) -> Tensor<T> {
    let src = t.data();
    let mut out = Tensor::zeros(&[h, w]);
    let dst = out.data_mut();
    for y in 0..h {
        let ny = (y + dy) % h;
        for x in 0..w {
            dst[ny * w + (x + dx) % w] = src[y * w + x];
        }
    }
    out
}
