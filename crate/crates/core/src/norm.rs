//! Feature normalization over index sets.
//!
//! Every scheme computes `â = (a - μ) / √(σ² + ε)` where `μ` and `σ²` are the
//! mean and biased (1/m) variance over the set of positions that share
//! statistics with `a`:
//!
//! | kind       | set for element `(n, c, h, w)`                  |
//! |------------|--------------------------------------------------|
//! | `batch`    | all `(n', c, h', w')`: one set per channel       |
//! | `layer`    | all `(n, c', h', w')`: one set per sample        |
//! | `group`    | `(n, c', h', w')` with `c'` in the same group    |
//! | `instance` | `(n, c, h', w')`: one set per sample and channel |
//!
//! then applies the per-channel affine map `γ·â + β` when enabled. `layer`
//! and `instance` are `group` with one group and with `C` groups.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Batch,
    Layer,
    Group,
    Instance,
    None,
}

impl NormKind {
    pub fn name(self) -> &'static str {
        match self {
            NormKind::Batch => "batch",
            NormKind::Layer => "layer",
            NormKind::Group => "group",
            NormKind::Instance => "instance",
            NormKind::None => "none",
        }
    }
}

/// Which running statistics an adaptation pass may overwrite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptStats {
    Both,
    MeanOnly,
    VarOnly,
}

impl AdaptStats {
    fn mean(self) -> bool {
        matches!(self, AdaptStats::Both | AdaptStats::MeanOnly)
    }
    fn var(self) -> bool {
        matches!(self, AdaptStats::Both | AdaptStats::VarOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormMode {
    /// Batch statistics; batch kind updates running statistics with `m_r`.
    Train,
    /// Running statistics for batch kind, no updates.
    Eval,
    /// Batch statistics; batch kind re-estimates the selected running
    /// statistics with momentum `momentum`.
    Adapt { momentum: f64, which: AdaptStats },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormScheme {
    pub kind: NormKind,
    /// Group count; only read for `group`.
    pub groups: usize,
    pub eps: f64,
    pub affine: bool,
    /// Running-statistic momentum `m_r`; only read for `batch`.
    pub momentum: f64,
}

impl NormScheme {
    pub fn new(kind: NormKind) -> Self {
        Self {
            kind,
            groups: 1,
            eps: DEFAULT_EPS,
            affine: true,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn batch() -> Self {
        Self::new(NormKind::Batch)
    }

    pub fn layer() -> Self {
        Self::new(NormKind::Layer)
    }

    pub fn instance() -> Self {
        Self::new(NormKind::Instance)
    }

    pub fn group(groups: usize) -> Self {
        Self {
            groups,
            ..Self::new(NormKind::Group)
        }
    }

    pub fn none() -> Self {
        Self {
            affine: false,
            ..Self::new(NormKind::None)
        }
    }

    pub fn with_affine(mut self, affine: bool) -> Self {
        self.affine = affine;
        self
    }

    /// Number of channel groups sharing statistics within one sample.
    pub fn effective_groups(&self, channels: usize) -> usize {
        match self.kind {
            NormKind::Layer => 1,
            NormKind::Instance => channels,
            NormKind::Group => self.groups,
            NormKind::Batch | NormKind::None => channels,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParam(format!(
                "eps must be > 0, got {}",
                self.eps
            )));
        }
        if self.kind == NormKind::Group {
            let g = self.groups;
            if g < 1 || g > channels || channels % g != 0 {
                return Err(Error::InvalidParam(format!(
                    "group norm needs 1 <= G <= C with C % G == 0, got G = {g}, C = {channels}"
                )));
            }
        }
        if self.kind == NormKind::Batch && !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "momentum must be in (0, 1], got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Running statistics and affine parameters of one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormState {
    pub running_mean: Tensor<f64>,
    pub running_var: Tensor<f64>,
    pub gamma: Option<Tensor<f64>>,
    pub beta: Option<Tensor<f64>>,
    pub batches_seen: u64,
}

impl NormState {
    pub fn new(channels: usize, affine: bool) -> Self {
        Self {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            gamma: affine.then(|| Tensor::full(&[channels], 1.0)),
            beta: affine.then(|| Tensor::zeros(&[channels])),
            batches_seen: 0,
        }
    }

    pub fn for_scheme(scheme: &NormScheme, channels: usize) -> Self {
        Self::new(channels, scheme.affine)
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Values kept from the forward pass for [`backward`].
#[derive(Debug, Clone)]
pub struct NormCache {
    xhat: Tensor<f64>,
    /// `1/σ` per statistics set.
    inv_std: Vec<f64>,
    /// Whether the statistics came from the batch being normalized.
    batch_stats: bool,
}

/// Gradients produced by [`backward`].
#[derive(Debug, Clone)]
pub struct NormGrads {
    pub input: Tensor<f64>,
    pub gamma: Option<Tensor<f64>>,
    pub beta: Option<Tensor<f64>>,
}

fn mean_var(values: impl Iterator<Item = f64> + Clone, m: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / m as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
    (mean, var)
}

/// Per-channel mean and biased variance over `(N, H, W)`.
pub fn channel_stats(a: &Tensor<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, c, h, w) = a.shape4()?;
    if n == 0 {
        return Err(Error::InvalidShape("batch statistics need N >= 1".into()));
    }
    let hw = h * w;
    let data = a.data();
    let mut means = Vec::with_capacity(c);
    let mut vars = Vec::with_capacity(c);
    for ch in 0..c {
        let it = (0..n).flat_map(|s| {
            data[(s * c + ch) * hw..(s * c + ch + 1) * hw]
                .iter()
                .copied()
        });
        let (m, v) = mean_var(it, n * hw);
        means.push(m);
        vars.push(v);
    }
    Ok((means, vars))
}

fn check_input(
    a: &Tensor<f64>,
    scheme: &NormScheme,
    state: &NormState,
) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = a.shape4()?;
    if c != state.channels() {
        return Err(Error::InvalidShape(format!(
            "input has {c} channels, normalization state has {}",
            state.channels()
        )));
    }
    scheme.validate(c)?;
    Ok((n, c, h * w))
}

fn apply_affine(out: &mut Tensor<f64>, state: &NormState, c: usize, hw: usize) {
    if let (Some(g), Some(b)) = (&state.gamma, &state.beta) {
        let (g, b) = (g.data(), b.data());
        for (i, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
            let ch = i % c;
            chunk.iter_mut().for_each(|v| *v = g[ch] * *v + b[ch]);
        }
    }
}

/// Forward pass that also returns what [`backward`] needs.
pub fn forward(
    a: &Tensor<f64>,
    scheme: &NormScheme,
    state: &mut NormState,
    mode: NormMode,
) -> Result<(Tensor<f64>, NormCache)> {
    let (n, c, hw) = check_input(a, scheme, state)?;
    let data = a.data();
    let mut xhat = Tensor::zeros(a.dims());

    if scheme.kind == NormKind::None {
        let out = a.clone();
        return Ok((
            out.clone(),
            NormCache {
                xhat: out,
                inv_std: Vec::new(),
                batch_stats: false,
            },
        ));
    }

    let inv_std;
    let mut batch_stats = true;
    if scheme.kind == NormKind::Batch {
        if n == 0 {
            return Err(Error::InvalidShape(
                "batch normalization needs N >= 1".into(),
            ));
        }
        let (means, vars) = match mode {
            NormMode::Eval => {
                if state.batches_seen == 0 {
                    return Err(Error::InvalidState(
                        "batch norm evaluated before any training batch".into(),
                    ));
                }
                batch_stats = false;
                (
                    state.running_mean.data().to_vec(),
                    state.running_var.data().to_vec(),
                )
            }
            NormMode::Train => {
                let (m, v) = channel_stats(a)?;
                update_running(state, &m, &v, scheme.momentum, AdaptStats::Both);
                (m, v)
            }
            NormMode::Adapt { momentum, which } => {
                let (m, v) = channel_stats(a)?;
                update_running(state, &m, &v, momentum, which);
                (m, v)
            }
        };
        inv_std = vars
            .iter()
            .map(|v| 1.0 / (v + scheme.eps).sqrt())
            .collect::<Vec<_>>();
        let out = xhat.data_mut();
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                let (mu, is) = (means[ch], inv_std[ch]);
                for i in base..base + hw {
                    out[i] = (data[i] - mu) * is;
                }
            }
        }
    } else {
        let g = scheme.effective_groups(c);
        let len = (c / g) * hw;
        let mut stds = Vec::with_capacity(n * g);
        for (src, dst) in data.chunks(len).zip(xhat.data_mut().chunks_mut(len)) {
            let (mu, var) = mean_var(src.iter().copied(), len);
            let is = 1.0 / (var + scheme.eps).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mu) * is;
            }
            stds.push(is);
        }
        inv_std = stds;
    }

    let mut out = xhat.clone();
    apply_affine(&mut out, state, c, hw);
    Ok((
        out,
        NormCache {
            xhat,
            inv_std,
            batch_stats,
        },
    ))
}

/// Normalizes `a`; in train or adapt mode a batch-kind state is updated.
pub fn normalize(
    a: &Tensor<f64>,
    scheme: &NormScheme,
    state: &mut NormState,
    mode: NormMode,
) -> Result<Tensor<f64>> {
    forward(a, scheme, state, mode).map(|(out, _)| out)
}

fn update_running(state: &mut NormState, means: &[f64], vars: &[f64], m: f64, which: AdaptStats) {
    if which.mean() {
        for (r, &b) in state.running_mean.data_mut().iter_mut().zip(means) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
    if which.var() {
        for (r, &b) in state.running_var.data_mut().iter_mut().zip(vars) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
    state.batches_seen += 1;
}

/// Reverse pass given the upstream gradient `dy`.
pub fn backward(
    dy: &Tensor<f64>,
    cache: &NormCache,
    scheme: &NormScheme,
    state: &NormState,
) -> Result<NormGrads> {
    dy.expect_dims(cache.xhat.dims())?;
    let (n, c, h, w) = dy.shape4()?;
    let hw = h * w;
    if scheme.kind == NormKind::None {
        return Ok(NormGrads {
            input: dy.clone(),
            gamma: None,
            beta: None,
        });
    }
    let xhat = cache.xhat.data();
    let dyd = dy.data();

    let (mut dgamma, mut dbeta) = (vec![0.0; c], vec![0.0; c]);
    let mut dxhat = dy.clone();
    if let Some(g) = &state.gamma {
        let g = g.data();
        for (i, chunk) in dxhat.data_mut().chunks_mut(hw).enumerate() {
            let ch = i % c;
            let base = i * hw;
            let mut sg = 0.0;
            let mut sb = 0.0;
            for (j, v) in chunk.iter_mut().enumerate() {
                sg += dyd[base + j] * xhat[base + j];
                sb += dyd[base + j];
                *v *= g[ch];
            }
            dgamma[ch] += sg;
            dbeta[ch] += sb;
        }
    }
    let dxh = dxhat.data();
    let mut dx = Tensor::zeros(dy.dims());
    let out = dx.data_mut();

    if scheme.kind == NormKind::Batch {
        let m = (n * hw) as f64;
        for ch in 0..c {
            let is = cache.inv_std[ch];
            let idx = || (0..n).flat_map(move |s| (s * c + ch) * hw..(s * c + ch + 1) * hw);
            if cache.batch_stats {
                let mean_d = idx().map(|i| dxh[i]).sum::<f64>() / m;
                let mean_dx = idx().map(|i| dxh[i] * xhat[i]).sum::<f64>() / m;
                for i in idx() {
                    out[i] = is * (dxh[i] - mean_d - xhat[i] * mean_dx);
                }
            } else {
                for i in idx() {
                    out[i] = is * dxh[i];
                }
            }
        }
    } else {
        let g = scheme.effective_groups(c);
        let len = (c / g) * hw;
        for (k, ((o, d), x)) in out
            .chunks_mut(len)
            .zip(dxh.chunks(len))
            .zip(xhat.chunks(len))
            .enumerate()
        {
            let is = cache.inv_std[k];
            let mean_d = d.iter().sum::<f64>() / len as f64;
            let mean_dx = d.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / len as f64;
            for ((o, &d), &x) in o.iter_mut().zip(d).zip(x) {
                *o = is * (d - mean_d - x * mean_dx);
            }
        }
    }

    let affine = state.gamma.is_some();
    Ok(NormGrads {
        input: dx,
        gamma: affine.then(|| Tensor::new(vec![c], dgamma).expect("channel vector")),
        beta: affine.then(|| Tensor::new(vec![c], dbeta).expect("channel vector")),
    })
}

/// Result of re-estimating batch-norm statistics on a feature stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapted {
    pub state: NormState,
    /// Number of batches consumed. Zero flags an empty stream, in which case
    /// `state` is the input state unchanged.
    pub batches: usize,
}

impl Adapted {
    pub fn is_empty_stream(&self) -> bool {
        self.batches == 0
    }
}

/// AdaBN: exponential moving average of batch statistics over `stream`.
pub fn adapt_bn<'a>(
    state: &NormState,
    stream: impl IntoIterator<Item = &'a Tensor<f64>>,
    momentum: f64,
) -> Result<Adapted> {
    adapt_bn_partial(state, stream, momentum, AdaptStats::Both)
}

/// [`adapt_bn`] restricted to the mean, the variance, or both.
pub fn adapt_bn_partial<'a>(
    state: &NormState,
    stream: impl IntoIterator<Item = &'a Tensor<f64>>,
    momentum: f64,
    which: AdaptStats,
) -> Result<Adapted> {
    if !(momentum > 0.0 && momentum <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "adaptation momentum must be in (0, 1], got {momentum}"
        )));
    }
    let mut out = state.clone();
    let mut batches = 0;
    for a in stream {
        let (_, c, _, _) = a.shape4()?;
        if c != out.channels() {
            return Err(Error::InvalidShape(format!(
                "feature batch has {c} channels, state has {}",
                out.channels()
            )));
        }
        let (m, v) = channel_stats(a)?;
        update_running(&mut out, &m, &v, momentum, which);
        batches += 1;
    }
    Ok(Adapted {
        state: out,
        batches,
    })
}

/// Exact pooled per-channel moments, merged batch by batch (Chan et al.).
#[derive(Debug, Clone)]
pub struct ChannelMoments {
    count: Vec<f64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl ChannelMoments {
    pub fn new(channels: usize) -> Self {
        Self {
            count: vec![0.0; channels],
            mean: vec![0.0; channels],
            m2: vec![0.0; channels],
        }
    }

    pub fn push(&mut self, a: &Tensor<f64>) -> Result<()> {
        let (n, c, h, w) = a.shape4()?;
        if c != self.mean.len() {
            return Err(Error::InvalidShape(format!(
                "expected {} channels, got {c}",
                self.mean.len()
            )));
        }
        if n * h * w == 0 {
            return Ok(());
        }
        let (means, vars) = channel_stats(a)?;
        let nb = (n * h * w) as f64;
        for ch in 0..c {
            let na = self.count[ch];
            let tot = na + nb;
            let delta = means[ch] - self.mean[ch];
            self.mean[ch] += delta * nb / tot;
            self.m2[ch] += vars[ch] * nb + delta * delta * na * nb / tot;
            self.count[ch] = tot;
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.count.iter().all(|&c| c == 0.0)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Biased (1/m) pooled variance.
    pub fn var(&self) -> Vec<f64> {
        self.m2
            .iter()
            .zip(&self.count)
            .map(|(m2, n)| m2 / n)
            .collect()
    }
}

/// Squared ℓ2 distances between stored batch-norm statistics and the pooled
/// statistics of a feature stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub d_mean: f64,
    pub d_var: f64,
    /// `d_mean / C`.
    pub d_mean_avg: f64,
    /// `d_var / C`.
    pub d_var_avg: f64,
}

pub fn bn_drift<'a>(
    state: &NormState,
    stream: impl IntoIterator<Item = &'a Tensor<f64>>,
) -> Result<Drift> {
    if state.batches_seen == 0 {
        return Err(Error::InvalidState(
            "drift needs trained batch-norm statistics".into(),
        ));
    }
    let mut acc = ChannelMoments::new(state.channels());
    for a in stream {
        acc.push(a)?;
    }
    if acc.is_empty() {
        return Err(Error::InvalidState(
            "drift needs a non-empty feature stream".into(),
        ));
    }
    Ok(drift_from_moments(state, &acc))
}

pub fn drift_from_moments(state: &NormState, acc: &ChannelMoments) -> Drift {
    let c = state.channels() as f64;
    let d_mean: f64 = state
        .running_mean
        .data()
        .iter()
        .zip(acc.mean())
        .map(|(r, s)| (r - s) * (r - s))
        .sum();
    let d_var: f64 = state
        .running_var
        .data()
        .iter()
        .zip(acc.var())
        .map(|(r, s)| (r - s) * (r - s))
        .sum();
    Drift {
        d_mean,
        d_var,
        d_mean_avg: d_mean / c,
        d_var_avg: d_var / c,
    }
}
