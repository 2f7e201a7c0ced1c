//! A small convolutional classifier with reverse-mode gradients.

mod checkpoint;
pub mod layers;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_model, save_model, CHECKPOINT_FORMAT};
pub use layers::{
    AvgPool2, Conv2d, GlobalAvgPool, Layer, Linear, NormHook, NormLayer, Pass, PreactBlock, Relu,
};
pub use train::{
    evaluate, grid_search, predict_proba, train, EpochRecord, Evaluation, GridPoint, History,
    TrainConfig,
};

use crate::error::{Error, Result};
use crate::norm::{AdaptStats, NormKind, NormMode, NormScheme};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Named architectures that can be rebuilt from a checkpoint manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Topology {
    /// conv3x3(1→w) → preact(w→w) → preact(w→2w, stride 2) → GAP → linear(2w→K).
    TinyPreact { width: usize },
    /// A single linear layer on the flattened input.
    Linear { features: usize },
}

impl Topology {
    pub fn tiny_preact() -> Self {
        Topology::TinyPreact { width: 8 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Topology::TinyPreact { .. } => "tiny-preact",
            Topology::Linear { .. } => "linear",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub topology: Topology,
    pub scheme: NormScheme,
    pub classes: usize,
    pub layers: Vec<Layer>,
}

impl Model {
    /// Builds and initializes `topology`; parameter draws come from `seed`.
    pub fn new(topology: Topology, scheme: NormScheme, classes: usize, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidParam(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        let root = Rng::new(seed);
        let layers = match topology {
            Topology::TinyPreact { width } => {
                if width == 0 {
                    return Err(Error::InvalidParam("width must be >= 1".into()));
                }
                let mut stem = Conv2d::new(1, width, 3, 1, false)?;
                stem.init(&mut root.child(0));
                let mut b1 = PreactBlock::new(width, width, 1, scheme)?;
                b1.init(&mut root.child(1));
                let mut b2 = PreactBlock::new(width, 2 * width, 2, scheme)?;
                b2.init(&mut root.child(2));
                let mut fc = Linear::new(2 * width, classes)?;
                fc.init(&mut root.child(3));
                vec![
                    Layer::Conv(stem),
                    Layer::Preact(Box::new(b1)),
                    Layer::Preact(Box::new(b2)),
                    Layer::GlobalAvgPool(GlobalAvgPool::default()),
                    Layer::Linear(fc),
                ]
            }
            Topology::Linear { features } => {
                let mut fc = Linear::new(features, classes)?;
                fc.init(&mut root.child(0));
                vec![Layer::Linear(fc)]
            }
        };
        Ok(Self {
            topology,
            scheme,
            classes,
            layers,
        })
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p, _| n += p.len());
        n
    }

    pub fn visit_params(&mut self, f: &mut layers::ParamVisitor) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params(&format!("l{i}"), f);
        }
    }

    pub fn visit_norms(&mut self, f: &mut dyn FnMut(&str, &mut NormLayer)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_norms(&format!("l{i}"), f);
        }
    }

    /// Parameter values by name, in visiting order.
    pub fn params(&mut self) -> Vec<(String, Tensor<f64>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |n, p, _| out.push((n.to_string(), p.clone())));
        out
    }

    pub fn grads(&mut self) -> Vec<(String, Tensor<f64>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |n, _, g| out.push((n.to_string(), g.clone())));
        out
    }

    /// Runs the layers in order. Errors carry the failing layer's index.
    pub fn forward_pass(&mut self, x: &Tensor<f64>, pass: &mut Pass) -> Result<Tensor<f64>> {
        let mut h = x.clone();
        for (index, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h, pass).map_err(|e| match e {
                Error::Layer { .. } => e,
                other => Error::Layer {
                    index,
                    kind: layer.kind(),
                    message: other.to_string(),
                },
            })?;
        }
        Ok(h)
    }

    /// Logits `[N, K]` for an `[N, 1, H, W]` batch. Train mode caches for
    /// [`Model::backward`] and updates batch-norm running statistics.
    pub fn forward(&mut self, x: &Tensor<f64>, mode: NormMode) -> Result<Tensor<f64>> {
        let mut pass = Pass::new(mode, mode == NormMode::Train);
        self.forward_pass(x, &mut pass)
    }

    pub fn backward(&mut self, dlogits: &Tensor<f64>) -> Result<()> {
        let mut g = dlogits.clone();
        for (index, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer.backward(&g).map_err(|e| Error::Layer {
                index,
                kind: layer.kind(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Mean softmax cross-entropy in train mode; leaves gradients in the layers.
    pub fn loss_and_grad(&mut self, x: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
        let logits = self.forward(x, NormMode::Train)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
        self.backward(&dlogits)?;
        Ok(loss)
    }

    /// Loss without touching gradients, caches or running statistics.
    pub fn loss(&self, x: &Tensor<f64>, labels: &[usize], mode: NormMode) -> Result<f64> {
        let mut m = self.clone();
        let mut pass = Pass::new(mode, false);
        let logits = m.forward_pass(x, &mut pass)?;
        Ok(softmax_cross_entropy(&logits, labels)?.0)
    }

    /// AdaBN over a stream of input batches: each forward normalizes with
    /// batch statistics and moves every batch-norm layer's running
    /// statistics towards them with `momentum`.
    pub fn adapt(
        &mut self,
        batches: &[Tensor<f64>],
        momentum: f64,
        which: AdaptStats,
    ) -> Result<usize> {
        if self.scheme.kind != NormKind::Batch {
            return Err(Error::InvalidState(format!(
                "adaptation needs batch norm, model uses {}",
                self.scheme.kind.name()
            )));
        }
        if !(momentum > 0.0 && momentum <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "adaptation momentum must be in (0, 1], got {momentum}"
            )));
        }
        for b in batches {
            let mut pass = Pass::new(NormMode::Adapt { momentum, which }, false);
            self.forward_pass(b, &mut pass)?;
        }
        Ok(batches.len())
    }

    /// Number of normalization layers, in forward order.
    pub fn num_norm_layers(&mut self) -> usize {
        let mut n = 0;
        self.visit_norms(&mut |_, _| n += 1);
        n
    }
}

/// Mean cross-entropy of `softmax(logits)` and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor<f64>, labels: &[usize]) -> Result<(f64, Tensor<f64>)> {
    let (n, k) = match logits.dims() {
        &[n, k] => (n, k),
        d => {
            return Err(Error::InvalidShape(format!(
                "logits must be [N, K], got {d:?}"
            )))
        }
    };
    if labels.len() != n || n == 0 {
        return Err(Error::InvalidShape(format!(
            "{} labels for {n} logits rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidLabel {
            value: bad.to_string(),
            context: format!("classifier with {k} classes"),
        });
    }
    let mut grad = Tensor::zeros(&[n, k]);
    let mut loss = 0.0;
    for ((row, g), &y) in logits
        .data()
        .chunks(k)
        .zip(grad.data_mut().chunks_mut(k))
        .zip(labels)
    {
        let p = softmax(row);
        loss -= p[y].ln();
        for (j, (g, p)) in g.iter_mut().zip(&p).enumerate() {
            *g = (p - f64::from(j == y)) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Stacks `[H, W]` images into an `[N, 1, H, W]` batch.
pub fn stack_images(images: &[&Tensor<f64>]) -> Result<Tensor<f64>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidShape("empty batch".into()))?;
    let (h, w) = first.shape2()?;
    let mut data = Vec::with_capacity(images.len() * h * w);
    for im in images {
        im.expect_dims(&[h, w])?;
        data.extend_from_slice(im.data());
    }
    Tensor::new(vec![images.len(), 1, h, w], data)
}

/// Compares analytic gradients with central finite differences of the
/// train-mode loss, over every parameter entry.
///
/// Relative error is `|a - f| / max(|a|, |f|, floor)`. An entry whose `±h`
/// probes change which ReLUs are active straddles a kink of the piecewise
/// linear loss, where the difference quotient is not a derivative estimate;
/// such entries are counted in `kinked` and kept out of `max_rel_err`.
pub fn gradient_check(
    model: &Model,
    x: &Tensor<f64>,
    labels: &[usize],
    h: f64,
    floor: f64,
) -> Result<GradCheck> {
    let mut m = model.clone();
    m.loss_and_grad(x, labels)?;
    let analytic = m.grads();
    let mut report = GradCheck::default();
    let mut probe = model.clone();
    let (_, base_pattern) = probe_loss(&probe, x, labels)?;
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let original = param_entry(&mut probe, pi, i, None);
            let mut eval = |value: f64| -> Result<(f64, Vec<bool>)> {
                param_entry(&mut probe, pi, i, Some(value));
                let r = probe_loss(&probe, x, labels);
                param_entry(&mut probe, pi, i, Some(original));
                r
            };
            let (lp, pp) = eval(original + h)?;
            let (lm, pm) = eval(original - h)?;
            let fd = (lp - lm) / (2.0 * h);
            let a = grad.data()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
            report.checked += 1;
            if pp != base_pattern || pm != base_pattern {
                report.kinked += 1;
                continue;
            }
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = format!("{name}[{i}]");
                report.analytic = a;
                report.numeric = fd;
            }
        }
    }
    Ok(report)
}

fn probe_loss(model: &Model, x: &Tensor<f64>, labels: &[usize]) -> Result<(f64, Vec<bool>)> {
    let mut m = model.clone();
    let mut pass = Pass::new(NormMode::Train, false);
    pass.relu_pattern = Some(Vec::new());
    let logits = m.forward_pass(x, &mut pass)?;
    let loss = softmax_cross_entropy(&logits, labels)?.0;
    Ok((loss, pass.relu_pattern.unwrap_or_default()))
}

/// Reads entry `entry` of the `param`-th parameter, optionally overwriting it.
fn param_entry(model: &mut Model, param: usize, entry: usize, set: Option<f64>) -> f64 {
    let mut k = 0;
    let mut old = f64::NAN;
    model.visit_params(&mut |_, p, _| {
        if k == param {
            old = p.data()[entry];
            if let Some(v) = set {
                p.data_mut()[entry] = v;
            }
        }
        k += 1;
    });
    old
}

#[derive(Debug, Clone, Default)]
pub struct GradCheck {
    pub checked: usize,
    /// Entries skipped because a probe crossed a ReLU kink.
    pub kinked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
}
