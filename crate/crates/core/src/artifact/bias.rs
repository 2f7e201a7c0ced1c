//! Smooth multiplicative intensity inhomogeneity.
//!
//! The field is `exp(P(u, v))` where `P` is a 2-D polynomial of total degree
//! `order` over coordinates normalized to `[-1, 1]` (`u` along rows, `v`
//! along columns).

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Coefficients `c_ij` for `u^i v^j`, `i + j <= order`, ordered by `i` then `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasPolynomial {
    pub order: usize,
    pub coeffs: Vec<f64>,
}

impl BiasPolynomial {
    pub fn num_terms(order: usize) -> usize {
        (order + 1) * (order + 2) / 2
    }

    /// Exponent pairs `(i, j)` in coefficient order.
    pub fn exponents(order: usize) -> impl Iterator<Item = (usize, usize)> {
        (0..=order).flat_map(move |i| (0..=order - i).map(move |j| (i, j)))
    }

    /// Draws every coefficient from `Uniform(-max_coeff, max_coeff)`.
    pub fn sample(order: usize, max_coeff: f64, rng: &mut Rng) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidParam("bias field order must be >= 1".into()));
        }
        if !(max_coeff >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "max_coeff must be >= 0, got {max_coeff}"
            )));
        }
        let coeffs = (0..Self::num_terms(order))
            .map(|_| rng.uniform(-max_coeff, max_coeff))
            .collect::<Result<_>>()?;
        Ok(Self { order, coeffs })
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        Self::exponents(self.order)
            .zip(&self.coeffs)
            .map(|((i, j), c)| c * u.powi(i as i32) * v.powi(j as i32))
            .sum()
    }

    /// Multiplicative field `exp(P)` on an `h×w` grid.
    pub fn field(&self, h: usize, w: usize) -> Tensor<f64> {
        let (us, vs) = (grid_coords(h), grid_coords(w));
        Tensor::from_fn(&[h, w], |i| self.eval(us[i / w], vs[i % w]).exp())
    }
}

/// `n` evenly spaced points from -1 to 1 inclusive.
pub fn grid_coords(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn apply_bias_field(
    x: &Tensor<f64>,
    order: usize,
    max_coeff: f64,
    rng: &mut Rng,
) -> Result<Tensor<f64>> {
    let poly = BiasPolynomial::sample(order, max_coeff, rng)?;
    apply_bias_polynomial(x, &poly)
}

/// Deterministic core of [`apply_bias_field`].
pub fn apply_bias_polynomial(x: &Tensor<f64>, poly: &BiasPolynomial) -> Result<Tensor<f64>> {
    let (h, w) = x.shape2()?;
    x.zip_map(&poly.field(h, w), |a, f| a * f)
}
