//! Layers with hand-written reverse passes.
//!
//! Every layer keeps what its backward pass needs from the most recent
//! forward call made with caching on. Gradients are overwritten, not
//! accumulated, by each backward call.

use crate::error::{Error, Result};
use crate::norm::{self, NormCache, NormMode, NormScheme, NormState};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Receives the input of every normalization layer, numbered in forward order.
pub type NormHook<'a> = dyn FnMut(usize, &Tensor<f64>) + 'a;

/// Forward-pass context threaded through the layers.
pub struct Pass<'a, 'h> {
    pub mode: NormMode,
    pub cache: bool,
    pub(crate) next_norm: usize,
    pub(crate) hook: Option<&'a mut NormHook<'h>>,
    /// When set, every ReLU appends its active set here.
    pub(crate) relu_pattern: Option<Vec<bool>>,
}

impl<'a, 'h> Pass<'a, 'h> {
    pub fn new(mode: NormMode, cache: bool) -> Self {
        Self {
            mode,
            cache,
            next_norm: 0,
            hook: None,
            relu_pattern: None,
        }
    }

    pub fn with_hook(mut self, hook: &'a mut NormHook<'h>) -> Self {
        self.hook = Some(hook);
        self
    }
}

/// `C[m×n] = A[m×k]·B[k×n] + beta·C` with `(row, col)` strides for A and B;
/// C is dense row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= (m - 1) * sa.0 + (k - 1) * sa.1 + 1);
    assert!(b.len() >= (k - 1) * sb.0 + (n - 1) * sb.1 + 1);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn no_cache() -> Error {
    Error::InvalidState("backward called without a cached forward pass".into())
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Tensor<f64>,
    pub bias: Option<Tensor<f64>>,
    pub grad_weight: Tensor<f64>,
    pub grad_bias: Option<Tensor<f64>>,
    input: Option<Tensor<f64>>,
    /// Per-image patch columns from the cached forward pass.
    cols: Vec<Vec<f64>>,
}

impl Conv2d {
    /// Square `kernel` (1 or 3) with "same" padding `kernel / 2`.
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, bias: bool) -> Result<Self> {
        if cin == 0 || cout == 0 || stride == 0 || kernel % 2 == 0 {
            return Err(Error::InvalidParam(format!(
                "conv needs cin, cout, stride >= 1 and an odd kernel, got {cin}, {cout}, {stride}, {kernel}"
            )));
        }
        let dims = [cout, cin, kernel, kernel];
        Ok(Self {
            cin,
            cout,
            kernel,
            stride,
            weight: Tensor::zeros(&dims),
            bias: bias.then(|| Tensor::zeros(&[cout])),
            grad_weight: Tensor::zeros(&dims),
            grad_bias: bias.then(|| Tensor::zeros(&[cout])),
            input: None,
            cols: Vec::new(),
        })
    }

    /// Weights `U(-√(6/fan_in), √(6/fan_in))`, bias zero.
    pub fn init(&mut self, rng: &mut Rng) {
        let bound = (6.0 / (self.cin * self.kernel * self.kernel) as f64).sqrt();
        self.weight
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = (2.0 * rng.next_f64() - 1.0) * bound);
        if let Some(b) = &mut self.bias {
            b.data_mut().fill(0.0);
        }
    }

    pub fn kind(&self) -> &'static str {
        if self.kernel == 1 {
            "conv1x1"
        } else {
            "conv3x3"
        }
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        (
            (h + 2 * p - self.kernel) / self.stride + 1,
            (w + 2 * p - self.kernel) / self.stride + 1,
        )
    }

    /// Output columns `x` with `x·stride + kx - pad` inside `[0, w)`.
    fn col_range(&self, kx: usize, w: usize, wo: usize) -> (usize, usize) {
        let (p, s) = (self.pad(), self.stride);
        let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
        let hi = if w + p > kx {
            ((w + p - kx - 1) / s + 1).min(wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Unfolds one `[cin, h, w]` image into `[cin·k·k, ho·wo]` patch columns.
    fn im2col(&self, x: &[f64], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad());
        let np = ho * wo;
        cols.fill(0.0);
        for ci in 0..self.cin {
            let xin = &x[ci * h * w..][..h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut cols[((ci * k + ky) * k + kx) * np..][..np];
                    let (x_lo, x_hi) = self.col_range(kx, w, wo);
                    for y in 0..ho {
                        let iy = (y * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let irow = &xin[iy as usize * w..][..w];
                        let drow = &mut dst[y * wo + x_lo..y * wo + x_hi];
                        if s == 1 {
                            drow.copy_from_slice(&irow[x_lo + kx - p..x_hi + kx - p]);
                        } else {
                            for (j, d) in drow.iter_mut().enumerate() {
                                *d = irow[(x_lo + j) * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Conv2d::im2col`]: scatters column gradients back.
    fn col2im(&self, cols: &[f64], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad());
        let np = ho * wo;
        for ci in 0..self.cin {
            let dxi = &mut dx[ci * h * w..][..h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[((ci * k + ky) * k + kx) * np..][..np];
                    let (x_lo, x_hi) = self.col_range(kx, w, wo);
                    for y in 0..ho {
                        let iy = (y * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut dxi[iy as usize * w..][..w];
                        let srow = &src[y * wo + x_lo..y * wo + x_hi];
                        if s == 1 {
                            drow[x_lo + kx - p..x_hi + kx - p]
                                .iter_mut()
                                .zip(srow)
                                .for_each(|(d, v)| *d += v);
                        } else {
                            for (j, v) in srow.iter().enumerate() {
                                drow[(x_lo + j) * s + kx - p] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor<f64>, cache: bool) -> Result<Tensor<f64>> {
        let (n, c, h, w) = x.shape4()?;
        if c != self.cin {
            return Err(Error::InvalidShape(format!(
                "expected {} input channels, got {c}",
                self.cin
            )));
        }
        if h + 2 * self.pad() < self.kernel || w + 2 * self.pad() < self.kernel {
            return Err(Error::InvalidShape(format!(
                "{h}×{w} input is smaller than the kernel"
            )));
        }
        let (ho, wo) = self.output_hw(h, w);
        let (kk, np) = (self.cin * self.kernel * self.kernel, ho * wo);
        let mut out = Tensor::zeros(&[n, self.cout, ho, wo]);
        let mut cols = vec![0.0; kk * np];
        let mut kept = Vec::with_capacity(if cache { n } else { 0 });
        for b in 0..n {
            self.im2col(
                &x.data()[b * c * h * w..][..c * h * w],
                h,
                w,
                ho,
                wo,
                &mut cols,
            );
            let o = &mut out.data_mut()[b * self.cout * np..][..self.cout * np];
            gemm(
                self.cout,
                kk,
                np,
                self.weight.data(),
                (kk, 1),
                &cols,
                (np, 1),
                0.0,
                o,
            );
            if let Some(bias) = &self.bias {
                for (row, &bv) in o.chunks_mut(np).zip(bias.data()) {
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
            if cache {
                kept.push(cols.clone());
            }
        }
        if cache {
            self.input = Some(x.clone());
            self.cols = kept;
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor<f64>) -> Result<Tensor<f64>> {
        let x = self.input.as_ref().ok_or_else(no_cache)?;
        let (n, c, h, w) = x.shape4()?;
        let (ho, wo) = self.output_hw(h, w);
        dy.expect_dims(&[n, self.cout, ho, wo])?;
        let (kk, np) = (self.cin * self.kernel * self.kernel, ho * wo);
        let mut dx = Tensor::zeros(x.dims());
        let mut dw = Tensor::zeros(self.weight.dims());
        let mut dcols = vec![0.0; kk * np];
        if self.cols.len() != n {
            return Err(no_cache());
        }
        for b in 0..n {
            let g = &dy.data()[b * self.cout * np..][..self.cout * np];
            // dW += dY · colsᵀ
            gemm(
                self.cout,
                np,
                kk,
                g,
                (np, 1),
                &self.cols[b],
                (1, np),
                1.0,
                dw.data_mut(),
            );
            // dcols = Wᵀ · dY
            gemm(
                kk,
                self.cout,
                np,
                self.weight.data(),
                (1, kk),
                g,
                (np, 1),
                0.0,
                &mut dcols,
            );
            self.col2im(
                &dcols,
                h,
                w,
                ho,
                wo,
                &mut dx.data_mut()[b * c * h * w..][..c * h * w],
            );
        }
        self.grad_weight = dw;
        if let Some(gb) = &mut self.grad_bias {
            let gbd = gb.data_mut();
            gbd.fill(0.0);
            for (i, chunk) in dy.data().chunks(np).enumerate() {
                gbd[i % self.cout] += chunk.iter().sum::<f64>();
            }
        }
        Ok(dx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(
            &format!("{prefix}.weight"),
            &mut self.weight,
            &mut self.grad_weight,
        );
        if let (Some(b), Some(g)) = (&mut self.bias, &mut self.grad_bias) {
            f(&format!("{prefix}.bias"), b, g);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub fin: usize,
    pub fout: usize,
    /// `[fout, fin]`.
    pub weight: Tensor<f64>,
    pub bias: Tensor<f64>,
    pub grad_weight: Tensor<f64>,
    pub grad_bias: Tensor<f64>,
    input: Option<Tensor<f64>>,
}

impl Linear {
    pub fn new(fin: usize, fout: usize) -> Result<Self> {
        if fin == 0 || fout == 0 {
            return Err(Error::InvalidParam(
                "linear layer needs fin, fout >= 1".into(),
            ));
        }
        Ok(Self {
            fin,
            fout,
            weight: Tensor::zeros(&[fout, fin]),
            bias: Tensor::zeros(&[fout]),
            grad_weight: Tensor::zeros(&[fout, fin]),
            grad_bias: Tensor::zeros(&[fout]),
            input: None,
        })
    }

    /// Weights `U(-1/√fin, 1/√fin)`, bias zero.
    pub fn init(&mut self, rng: &mut Rng) {
        let bound = 1.0 / (self.fin as f64).sqrt();
        self.weight
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = (2.0 * rng.next_f64() - 1.0) * bound);
        self.bias.data_mut().fill(0.0);
    }

    /// Accepts `[N, fin]` or any `[N, …]` whose trailing size is `fin`.
    pub fn forward(&mut self, x: &Tensor<f64>, cache: bool) -> Result<Tensor<f64>> {
        let n = *x
            .dims()
            .first()
            .ok_or_else(|| Error::InvalidShape("scalar input to linear".into()))?;
        let f = if n == 0 { 0 } else { x.len() / n };
        if f != self.fin || x.ndim() < 2 {
            return Err(Error::InvalidShape(format!(
                "expected {} features per sample, got dims {:?}",
                self.fin,
                x.dims()
            )));
        }
        let (w, b) = (self.weight.data(), self.bias.data());
        let mut out = Tensor::zeros(&[n, self.fout]);
        for (row, o) in x
            .data()
            .chunks(self.fin)
            .zip(out.data_mut().chunks_mut(self.fout))
        {
            for (j, o) in o.iter_mut().enumerate() {
                *o = b[j]
                    + w[j * self.fin..(j + 1) * self.fin]
                        .iter()
                        .zip(row)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
            }
        }
        if cache {
            self.input = Some(x.clone());
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor<f64>) -> Result<Tensor<f64>> {
        let x = self.input.as_ref().ok_or_else(no_cache)?;
        let n = x.dims()[0];
        dy.expect_dims(&[n, self.fout])?;
        let w = self.weight.data();
        let mut dx = Tensor::zeros(x.dims());
        let mut dw = vec![0.0; self.fout * self.fin];
        let mut db = vec![0.0; self.fout];
        for ((row, g), d) in x
            .data()
            .chunks(self.fin)
            .zip(dy.data().chunks(self.fout))
            .zip(dx.data_mut().chunks_mut(self.fin))
        {
            for (j, &gj) in g.iter().enumerate() {
                db[j] += gj;
                let wj = &w[j * self.fin..(j + 1) * self.fin];
                for i in 0..self.fin {
                    dw[j * self.fin + i] += gj * row[i];
                    d[i] += gj * wj[i];
                }
            }
        }
        self.grad_weight = Tensor::new(vec![self.fout, self.fin], dw)?;
        self.grad_bias = Tensor::new(vec![self.fout], db)?;
        Ok(dx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(
            &format!("{prefix}.weight"),
            &mut self.weight,
            &mut self.grad_weight,
        );
        f(
            &format!("{prefix}.bias"),
            &mut self.bias,
            &mut self.grad_bias,
        );
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor<f64>, pass: &mut Pass) -> Tensor<f64> {
        if pass.cache {
            self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        }
        if let Some(p) = &mut pass.relu_pattern {
            p.extend(x.data().iter().map(|&v| v > 0.0));
        }
        x.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn backward(&mut self, dy: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mask = self.mask.as_ref().ok_or_else(no_cache)?;
        if mask.len() != dy.len() {
            return Err(Error::InvalidShape("relu gradient size mismatch".into()));
        }
        let mut dx = dy.clone();
        dx.data_mut().iter_mut().zip(mask).for_each(|(d, &m)| {
            if !m {
                *d = 0.0
            }
        });
        Ok(dx)
    }
}

/// 2×2 average pooling with stride 2; a trailing odd row or column is dropped.
#[derive(Debug, Clone, Default)]
pub struct AvgPool2 {
    input_dims: Option<Vec<usize>>,
}

impl AvgPool2 {
    pub fn forward(&mut self, x: &Tensor<f64>, cache: bool) -> Result<Tensor<f64>> {
        let (n, c, h, w) = x.shape4()?;
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(Error::InvalidShape(format!(
                "{h}×{w} input too small for 2×2 pooling"
            )));
        }
        let xd = x.data();
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        for (p, o) in out.data_mut().chunks_mut(ho * wo).enumerate() {
            let src = &xd[p * h * w..][..h * w];
            for y in 0..ho {
                for xx in 0..wo {
                    let i = 2 * y * w + 2 * xx;
                    o[y * wo + xx] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                }
            }
        }
        if cache {
            self.input_dims = Some(x.dims().to_vec());
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor<f64>) -> Result<Tensor<f64>> {
        let dims = self.input_dims.as_ref().ok_or_else(no_cache)?;
        let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
        let (ho, wo) = (h / 2, w / 2);
        dy.expect_dims(&[n, c, ho, wo])?;
        let mut dx = Tensor::zeros(dims);
        for (p, g) in dy.data().chunks(ho * wo).enumerate() {
            let d = &mut dx.data_mut()[p * h * w..][..h * w];
            for y in 0..ho {
                for xx in 0..wo {
                    let v = 0.25 * g[y * wo + xx];
                    let i = 2 * y * w + 2 * xx;
                    d[i] = v;
                    d[i + 1] = v;
                    d[i + w] = v;
                    d[i + w + 1] = v;
                }
            }
        }
        Ok(dx)
    }
}

/// Mean over `(H, W)`: `[N, C, H, W] → [N, C]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_dims: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn forward(&mut self, x: &Tensor<f64>, cache: bool) -> Result<Tensor<f64>> {
        let (n, c, h, w) = x.shape4()?;
        let hw = (h * w).max(1) as f64;
        let data: Vec<f64> = x
            .data()
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / hw)
            .collect();
        if cache {
            self.input_dims = Some(x.dims().to_vec());
        }
        Tensor::new(vec![n, c], data)
    }

    pub fn backward(&mut self, dy: &Tensor<f64>) -> Result<Tensor<f64>> {
        let dims = self.input_dims.as_ref().ok_or_else(no_cache)?;
        dy.expect_dims(&dims[..2])?;
        let hw = dims[2] * dims[3];
        let mut dx = Tensor::zeros(dims);
        for (d, &g) in dx.data_mut().chunks_mut(hw).zip(dy.data()) {
            d.fill(g / hw as f64);
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub struct NormLayer {
    pub scheme: NormScheme,
    pub state: NormState,
    pub grad_gamma: Option<Tensor<f64>>,
    pub grad_beta: Option<Tensor<f64>>,
    cache: Option<NormCache>,
}

impl NormLayer {
    pub fn new(scheme: NormScheme, channels: usize) -> Result<Self> {
        scheme.validate(channels)?;
        let affine = scheme.affine && scheme.kind != norm::NormKind::None;
        let scheme = NormScheme { affine, ..scheme };
        Ok(Self {
            scheme,
            state: NormState::for_scheme(&scheme, channels),
            grad_gamma: affine.then(|| Tensor::zeros(&[channels])),
            grad_beta: affine.then(|| Tensor::zeros(&[channels])),
            cache: None,
        })
    }

    pub fn forward(&mut self, x: &Tensor<f64>, pass: &mut Pass) -> Result<Tensor<f64>> {
        if let Some(hook) = pass.hook.as_mut() {
            hook(pass.next_norm, x);
        }
        pass.next_norm += 1;
        let (out, cache) = norm::forward(x, &self.scheme, &mut self.state, pass.mode)?;
        if pass.cache {
            self.cache = Some(cache);
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor<f64>) -> Result<Tensor<f64>> {
        let cache = self.cache.as_ref().ok_or_else(no_cache)?;
        let g = norm::backward(dy, cache, &self.scheme, &self.state)?;
        self.grad_gamma = g.gamma;
        self.grad_beta = g.beta;
        Ok(g.input)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        if let (Some(p), Some(g)) = (&mut self.state.gamma, &mut self.grad_gamma) {
            f(&format!("{prefix}.gamma"), p, g);
        }
        if let (Some(p), Some(g)) = (&mut self.state.beta, &mut self.grad_beta) {
            f(&format!("{prefix}.beta"), p, g);
        }
    }
}

/// Pre-activation residual block:
/// `y = conv2(relu(norm2(conv1(r)))) + shortcut`, with `r = relu(norm1(x))`
/// and `shortcut = x`, or a 1×1 conv of `r` when channels or stride change.
#[derive(Debug, Clone)]
pub struct PreactBlock {
    pub norm1: NormLayer,
    pub relu1: Relu,
    pub conv1: Conv2d,
    pub norm2: NormLayer,
    pub relu2: Relu,
    pub conv2: Conv2d,
    pub shortcut: Option<Conv2d>,
}

impl PreactBlock {
    pub fn new(cin: usize, cout: usize, stride: usize, scheme: NormScheme) -> Result<Self> {
        let shortcut = (cin != cout || stride != 1)
            .then(|| Conv2d::new(cin, cout, 1, stride, false))
            .transpose()?;
        Ok(Self {
            norm1: NormLayer::new(scheme, cin)?,
            relu1: Relu::default(),
            conv1: Conv2d::new(cin, cout, 3, stride, false)?,
            norm2: NormLayer::new(scheme, cout)?,
            relu2: Relu::default(),
            conv2: Conv2d::new(cout, cout, 3, 1, false)?,
            shortcut,
        })
    }

    pub fn init(&mut self, rng: &mut Rng) {
        self.conv1.init(&mut rng.child(0));
        self.conv2.init(&mut rng.child(1));
        if let Some(s) = &mut self.shortcut {
            s.init(&mut rng.child(2));
        }
    }

    pub fn forward(&mut self, x: &Tensor<f64>, pass: &mut Pass) -> Result<Tensor<f64>> {
        let a = self.norm1.forward(x, pass)?;
        let r = self.relu1.forward(&a, pass);
        let h = self.conv1.forward(&r, pass.cache)?;
        let a2 = self.norm2.forward(&h, pass)?;
        let r2 = self.relu2.forward(&a2, pass);
        let mut y = self.conv2.forward(&r2, pass.cache)?;
        let sc = match &mut self.shortcut {
            Some(s) => s.forward(&r, pass.cache)?,
            None => x.clone(),
        };
        y.expect_dims(sc.dims())?;
        y.data_mut()
            .iter_mut()
            .zip(sc.data())
            .for_each(|(y, s)| *y += s);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<f64>) -> Result<Tensor<f64>> {
        let dr2 = self.conv2.backward(dy)?;
        let da2 = self.relu2.backward(&dr2)?;
        let dh = self.norm2.backward(&da2)?;
        let mut dr = self.conv1.backward(&dh)?;
        match &mut self.shortcut {
            Some(s) => {
                let ds = s.backward(dy)?;
                dr.data_mut()
                    .iter_mut()
                    .zip(ds.data())
                    .for_each(|(a, b)| *a += b);
                let da = self.relu1.backward(&dr)?;
                self.norm1.backward(&da)
            }
            None => {
                let da = self.relu1.backward(&dr)?;
                let mut dx = self.norm1.backward(&da)?;
                dx.data_mut()
                    .iter_mut()
                    .zip(dy.data())
                    .for_each(|(a, b)| *a += b);
                Ok(dx)
            }
        }
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        self.norm1.visit_params(&format!("{prefix}.norm1"), f);
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.norm2.visit_params(&format!("{prefix}.norm2"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
        if let Some(s) = &mut self.shortcut {
            s.visit_params(&format!("{prefix}.shortcut"), f);
        }
    }

    fn visit_norms(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut NormLayer)) {
        f(&format!("{prefix}.norm1"), &mut self.norm1);
        f(&format!("{prefix}.norm2"), &mut self.norm2);
    }
}

/// `(name, value, gradient)` for every trainable tensor.
pub type ParamVisitor<'a> = dyn FnMut(&str, &mut Tensor<f64>, &mut Tensor<f64>) + 'a;

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    Relu(Relu),
    Norm(NormLayer),
    AvgPool2(AvgPool2),
    GlobalAvgPool(GlobalAvgPool),
    Linear(Linear),
    Preact(Box<PreactBlock>),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(c) => c.kind(),
            Layer::Relu(_) => "relu",
            Layer::Norm(_) => "norm",
            Layer::AvgPool2(_) => "avgpool2",
            Layer::GlobalAvgPool(_) => "global_avgpool",
            Layer::Linear(_) => "linear",
            Layer::Preact(_) => "preact_block",
        }
    }

    pub fn forward(&mut self, x: &Tensor<f64>, pass: &mut Pass) -> Result<Tensor<f64>> {
        match self {
            Layer::Conv(l) => l.forward(x, pass.cache),
            Layer::Relu(l) => Ok(l.forward(x, pass)),
            Layer::Norm(l) => l.forward(x, pass),
            Layer::AvgPool2(l) => l.forward(x, pass.cache),
            Layer::GlobalAvgPool(l) => l.forward(x, pass.cache),
            Layer::Linear(l) => l.forward(x, pass.cache),
            Layer::Preact(l) => l.forward(x, pass),
        }
    }

    pub fn backward(&mut self, dy: &Tensor<f64>) -> Result<Tensor<f64>> {
        match self {
            Layer::Conv(l) => l.backward(dy),
            Layer::Relu(l) => l.backward(dy),
            Layer::Norm(l) => l.backward(dy),
            Layer::AvgPool2(l) => l.backward(dy),
            Layer::GlobalAvgPool(l) => l.backward(dy),
            Layer::Linear(l) => l.backward(dy),
            Layer::Preact(l) => l.backward(dy),
        }
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        match self {
            Layer::Conv(l) => l.visit_params(&format!("{prefix}.conv"), f),
            Layer::Norm(l) => l.visit_params(&format!("{prefix}.norm"), f),
            Layer::Linear(l) => l.visit_params(&format!("{prefix}.linear"), f),
            Layer::Preact(l) => l.visit_params(prefix, f),
            Layer::Relu(_) | Layer::AvgPool2(_) | Layer::GlobalAvgPool(_) => {}
        }
    }

    pub fn visit_norms(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut NormLayer)) {
        match self {
            Layer::Norm(l) => f(&format!("{prefix}.norm"), l),
            Layer::Preact(l) => l.visit_norms(prefix, f),
            _ => {}
        }
    }
}
