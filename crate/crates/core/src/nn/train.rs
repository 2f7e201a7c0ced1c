use serde::{Deserialize, Serialize};

use super::{softmax, stack_images, Model, Topology};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::{auroc, balanced_accuracy, mean_metric_over_pathologies};
use crate::norm::{NormMode, NormScheme};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub lr_grid: Vec<f64>,
    pub wd_grid: Vec<f64>,
    /// Which label column the binary classifier is trained on.
    pub pathology: usize,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            weight_decay: 1e-4,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            lr_grid: vec![1e-5, 1e-4, 1e-3, 1e-2],
            wd_grid: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
            pathology: 0,
            eval_batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auroc: f64,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_auroc\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_auroc));
        }
        s
    }
}

/// Positive-class probability for every image, in eval mode.
pub fn predict_proba(model: &Model, images: &[Tensor<f64>], batch_size: usize) -> Result<Vec<f64>> {
    let mut m = model.clone();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let refs: Vec<&Tensor<f64>> = chunk.iter().collect();
        let logits = m.forward(&stack_images(&refs)?, NormMode::Eval)?;
        let k = model.classes;
        out.extend(logits.data().chunks(k).map(|row| softmax(row)[1]));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub auroc: f64,
    pub balanced_accuracy: f64,
}

pub fn evaluate(
    model: &Model,
    ds: &LabeledDataset,
    pathology: usize,
    batch_size: usize,
    threshold: f64,
) -> Result<Evaluation> {
    let scores = predict_proba(model, &ds.images, batch_size)?;
    let labels = ds.class_labels(pathology);
    Ok(Evaluation {
        auroc: mean_metric_over_pathologies(&[auroc(&scores, &labels)?])?,
        balanced_accuracy: balanced_accuracy(&scores, &labels, threshold)?,
    })
}

fn sgd_step(model: &mut Model, lr: f64, wd: f64) {
    model.visit_params(&mut |_, p, g| {
        for (p, g) in p.data_mut().iter_mut().zip(g.data()) {
            *p -= lr * (g + wd * *p);
        }
    });
}

/// Minibatch SGD with early stopping on validation AUROC.
///
/// Returns the parameters of the best epoch.
pub fn train(
    mut model: Model,
    train_ds: &LabeledDataset,
    val_ds: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(Model, History)> {
    cfg.validate()?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::InvalidState(
            "training needs non-empty train and validation sets".into(),
        ));
    }
    if cfg.pathology >= train_ds.num_pathologies {
        return Err(Error::Config(format!(
            "pathology {} out of range for {} label columns",
            cfg.pathology, train_ds.num_pathologies
        )));
    }
    let labels = train_ds.class_labels(cfg.pathology);
    let mut rng = Rng::new(cfg.seed).child(0x5eed);
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut history = History {
        best_val_auroc: f64::NEG_INFINITY,
        ..History::default()
    };
    let mut best = model.clone();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let imgs: Vec<&Tensor<f64>> = idx.iter().map(|&i| &train_ds.images[i]).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let loss = model.loss_and_grad(&stack_images(&imgs)?, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss {loss} at epoch {epoch}, lr {}",
                    cfg.lr
                )));
            }
            total += loss * idx.len() as f64;
            sgd_step(&mut model, cfg.lr, cfg.weight_decay);
        }
        let val_auroc = evaluate(&model, val_ds, cfg.pathology, cfg.eval_batch_size, 0.5)?.auroc;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / train_ds.len() as f64,
            val_auroc,
        });
        if val_auroc > history.best_val_auroc {
            history.best_val_auroc = val_auroc;
            history.best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((best, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr: f64,
    pub weight_decay: f64,
    pub val_auroc: f64,
}

/// Trains one model per `(lr, wd)` pair from `cfg`'s grids and keeps the best
/// validation AUROC; ties go to the smaller lr, then the smaller wd.
pub fn grid_search(
    cfg: &TrainConfig,
    topology: Topology,
    scheme: NormScheme,
    train_ds: &LabeledDataset,
    val_ds: &LabeledDataset,
) -> Result<(GridPoint, Model, History)> {
    let mut lrs = cfg.lr_grid.clone();
    let mut wds = cfg.wd_grid.clone();
    if lrs.is_empty() || wds.is_empty() {
        return Err(Error::Config(
            "grid search needs non-empty lr and wd grids".into(),
        ));
    }
    lrs.sort_by(f64::total_cmp);
    wds.sort_by(f64::total_cmp);
    let mut best: Option<(GridPoint, Model, History)> = None;
    for &lr in &lrs {
        for &wd in &wds {
            let point_cfg = TrainConfig {
                lr,
                weight_decay: wd,
                ..cfg.clone()
            };
            let model = Model::new(topology, scheme, 2, cfg.seed)?;
            let (model, history) = train(model, train_ds, val_ds, &point_cfg)?;
            let point = GridPoint {
                lr,
                weight_decay: wd,
                val_auroc: history.best_val_auroc,
            };
            if best
                .as_ref()
                .is_none_or(|(b, _, _)| point.val_auroc > b.val_auroc)
            {
                best = Some((point, model, history));
            }
        }
    }
    Ok(best.expect("non-empty grid"))
}
