//! Experiment harness behind the CLI: corrupt, train, sweep, drift, adapt
//! and batch-size studies.
//!
//! Every job derives its randomness from the config seed, so results do not
//! depend on scheduling; rows are merged by sort key before writing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{compose_indexed, ArtifactKind, ArtifactParams, ArtifactSpec, IntensityGrid};
use crate::data::{
    generate_phantoms, load_dataset_dir, read_labels_csv, split_holdout, LabeledDataset,
    PhantomConfig, LABELS_FILE,
};
use crate::error::{Error, Result};
use crate::io::{read_real, write_real};
use crate::metrics::{auroc, balanced_accuracy};
use crate::nn::{
    load_model, save_model, softmax, stack_images, train, History, Model, Pass, Topology,
    TrainConfig,
};
use crate::norm::{
    drift_from_moments, AdaptStats, ChannelMoments, Drift, NormKind, NormMode, NormScheme,
};
use crate::rng::{Rng, ALGORITHM_ID};
use crate::tensor::Tensor;

pub const CSV_SCHEMA: &str = "# schema=1";

/// A normalization strategy as named in configs and CSV rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Batch,
    Group,
    Layer,
    Instance,
    None,
    /// A batch-norm model whose statistics are re-estimated on the test stream.
    Adabn,
}

impl SchemeName {
    pub fn name(self) -> &'static str {
        match self {
            SchemeName::Batch => "batch",
            SchemeName::Group => "group",
            SchemeName::Layer => "layer",
            SchemeName::Instance => "instance",
            SchemeName::None => "none",
            SchemeName::Adabn => "adabn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .map_err(|_| Error::Config(format!("unknown scheme {s:?}")))
    }

    /// The scheme the underlying model is trained with.
    pub fn trained_as(self) -> SchemeName {
        match self {
            SchemeName::Adabn => SchemeName::Batch,
            s => s,
        }
    }

    pub fn has_bn_stats(self) -> bool {
        matches!(self, SchemeName::Batch | SchemeName::Adabn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Phantom(PhantomConfig),
    /// A directory of MRT1 images plus `labels.csv`.
    Dir(PathBuf),
}

/// One artifact kind to sweep; `levels` are level values from the standard
/// grid (all five when absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactSweep {
    pub kind: ArtifactKind,
    #[serde(default)]
    pub levels: Option<Vec<f64>>,
}

impl ArtifactSweep {
    /// `(1-based position in the standard grid, params)` per selected level.
    pub fn resolve(&self) -> Result<Vec<(usize, ArtifactParams)>> {
        let grid = IntensityGrid::standard(self.kind);
        match &self.levels {
            None => Ok(grid
                .levels
                .iter()
                .cloned()
                .enumerate()
                .map(|(i, p)| (i + 1, p))
                .collect()),
            Some(values) => values
                .iter()
                .map(|&v| {
                    grid.find(v)
                        .map(|i| (i + 1, grid.levels[i].clone()))
                        .ok_or_else(|| {
                            Error::Config(format!("level {v} is outside the {} grid", self.kind))
                        })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointPolicy {
    /// Always train and overwrite.
    Train,
    /// Load an existing checkpoint, train when missing.
    Reuse,
    /// Load; a missing checkpoint is an error.
    Require,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub val_frac: f64,
    pub test_frac: f64,
    pub split_seed: u64,
    pub topology: Topology,
    pub schemes: Vec<SchemeName>,
    pub groups: usize,
    pub eps: f64,
    pub affine: bool,
    pub bn_momentum: f64,
    pub adapt_momentum: f64,
    /// Adaptation batches per evaluation; `None` is one full pass.
    pub adapt_batches: Option<usize>,
    pub train: TrainConfig,
    pub sweep: Vec<ArtifactSweep>,
    pub n_seeds: usize,
    pub seed: u64,
    pub threshold: f64,
    pub checkpoints: CheckpointPolicy,
    pub save_adapted: bool,
    pub batch_sizes: Vec<usize>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Phantom(PhantomConfig {
                size: 32,
                n: 2000,
                ..PhantomConfig::default()
            }),
            val_frac: 0.15,
            test_frac: 0.15,
            split_seed: 0,
            topology: Topology::tiny_preact(),
            schemes: vec![
                SchemeName::Batch,
                SchemeName::Group,
                SchemeName::Layer,
                SchemeName::Adabn,
            ],
            groups: 4,
            eps: crate::norm::DEFAULT_EPS,
            affine: true,
            bn_momentum: crate::norm::DEFAULT_MOMENTUM,
            adapt_momentum: 0.1,
            adapt_batches: None,
            train: TrainConfig {
                lr: 0.1,
                max_epochs: 12,
                patience: 4,
                ..TrainConfig::default()
            },
            sweep: ArtifactKind::ALL
                .iter()
                .map(|&kind| ArtifactSweep { kind, levels: None })
                .collect(),
            n_seeds: 5,
            seed: 0,
            threshold: 0.5,
            checkpoints: CheckpointPolicy::Train,
            save_adapted: false,
            batch_sizes: vec![8, 16, 32, 64, 128],
            output_dir: PathBuf::from("kshift-out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_json(&text)
    }

    /// Replaces top-level keys with `overrides` (each value parsed as JSON,
    /// falling back to a JSON string).
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        let obj = v.as_object_mut().expect("config serializes to an object");
        for (key, raw) in overrides {
            if !obj.contains_key(key) {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
            let value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
            obj.insert(key.clone(), value);
        }
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be >= 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one scheme is required".into()));
        }
        if !(self.adapt_momentum > 0.0 && self.adapt_momentum <= 1.0) {
            return Err(Error::Config(format!(
                "adapt_momentum must be in (0, 1], got {}",
                self.adapt_momentum
            )));
        }
        self.train.validate()?;
        for s in &self.sweep {
            s.resolve()?;
        }
        if let DataSource::Dir(d) = &self.data {
            if !d.is_dir() {
                return Err(Error::MissingFile(d.clone()));
            }
        }
        Ok(())
    }

    pub fn norm_scheme(&self, scheme: SchemeName) -> NormScheme {
        let kind = match scheme.trained_as() {
            SchemeName::Batch | SchemeName::Adabn => NormKind::Batch,
            SchemeName::Group => NormKind::Group,
            SchemeName::Layer => NormKind::Layer,
            SchemeName::Instance => NormKind::Instance,
            SchemeName::None => NormKind::None,
        };
        NormScheme {
            kind,
            groups: self.groups,
            eps: self.eps,
            affine: self.affine && kind != NormKind::None,
            momentum: self.bn_momentum,
        }
    }

    /// Model-init and shuffling seed of run `index`; shared by all schemes.
    pub fn run_seed(&self, index: usize) -> u64 {
        Rng::new(self.seed).child_seed(index as u64)
    }

    /// Corruption seed for `(kind, level position, run)`; shared by all schemes.
    pub fn artifact_seed(&self, kind: ArtifactKind, level_index: usize, run: usize) -> u64 {
        let k = ArtifactKind::ALL
            .iter()
            .position(|&x| x == kind)
            .unwrap_or(0) as u64;
        Rng::new(self.seed)
            .child(0xA000 + k)
            .child(level_index as u64)
            .child_seed(run as u64)
    }

    fn checkpoint_dir(&self, scheme: SchemeName, run: usize) -> PathBuf {
        self.output_dir
            .join("checkpoints")
            .join(format!("{}-seed{run}", scheme.name()))
    }
}

/// Train, validation and test splits of the configured data.
pub fn load_splits(
    cfg: &ExperimentConfig,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let ds = match &cfg.data {
        DataSource::Phantom(p) => generate_phantoms(p)?,
        DataSource::Dir(d) => load_dataset_dir(d)?,
    };
    split_holdout(&ds, cfg.val_frac, cfg.test_frac, cfg.split_seed)
}

/// One sweep measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: String,
    /// Artifact kind, or `none` for the clean baseline.
    pub kind: String,
    /// 0 for clean, else the 1-based position in the standard grid.
    pub level_index: usize,
    /// `clean` or the grid's level value.
    pub level: String,
    pub seed: usize,
    pub auroc: f64,
    pub balanced_accuracy: f64,
    pub d_mean: Option<f64>,
    pub d_var: Option<f64>,
}

impl SweepRow {
    fn key(&self) -> (String, String, usize, usize) {
        (
            self.scheme.clone(),
            self.kind.clone(),
            self.level_index,
            self.seed,
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Seconds per `(scheme, seed)` job, kept apart from the rows so the
    /// result CSV is reproducible byte for byte.
    pub wall_time: BTreeMap<(String, usize), f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepResult {
    pub fn sort(&mut self) {
        self.rows.sort_by_key(SweepRow::key);
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_SCHEMA}\nscheme,kind,level_index,level,seed,auroc,balanced_accuracy,d_mean,d_var\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.scheme,
                r.kind,
                r.level_index,
                r.level,
                r.seed,
                r.auroc,
                r.balanced_accuracy,
                opt(r.d_mean),
                opt(r.d_var)
            ));
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("scheme,seed,wall_time_s\n");
        for ((scheme, seed), t) in &self.wall_time {
            s.push_str(&format!("{scheme},{seed},{t:.3}\n"));
        }
        s
    }

    /// Mean AUROC over seeds for one `(scheme, kind, level_index)` cell.
    pub fn mean_auroc(&self, scheme: &str, kind: &str, level_index: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.scheme == scheme && r.kind == kind && r.level_index == level_index)
            .map(|r| r.auroc)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Positive-class scores in eval mode, plus pooled moments of the input to
/// normalization layer `capture` when requested.
pub fn score_and_capture(
    model: &Model,
    images: &[Tensor<f64>],
    batch_size: usize,
    capture: Option<usize>,
) -> Result<(Vec<f64>, Option<ChannelMoments>)> {
    let mut m = model.clone();
    let mut scores = Vec::with_capacity(images.len());
    let mut moments: Option<ChannelMoments> = None;
    let mut failure: Option<Error> = None;
    for chunk in images.chunks(batch_size.max(1)) {
        let refs: Vec<&Tensor<f64>> = chunk.iter().collect();
        let x = stack_images(&refs)?;
        let mut hook = |i: usize, a: &Tensor<f64>| {
            if Some(i) == capture {
                let c = a.dims()[1];
                let acc = moments.get_or_insert_with(|| ChannelMoments::new(c));
                if let Err(e) = acc.push(a) {
                    failure.get_or_insert(e);
                }
            }
        };
        let mut pass = Pass::new(NormMode::Eval, false).with_hook(&mut hook);
        let logits = m.forward_pass(&x, &mut pass)?;
        scores.extend(logits.data().chunks(model.classes).map(|r| softmax(r)[1]));
    }
    if let Some(e) = failure {
        return Err(e);
    }
    if capture.is_some() && moments.is_none() {
        return Err(Error::InvalidParam(
            "requested normalization layer does not exist".into(),
        ));
    }
    Ok((scores, moments))
}

/// Drift of normalization layer `layer` against the features `images` induce.
pub fn model_drift(
    model: &Model,
    images: &[Tensor<f64>],
    layer: usize,
    batch_size: usize,
) -> Result<Drift> {
    let (_, moments) = score_and_capture(model, images, batch_size, Some(layer))?;
    let state = norm_state(model, layer)?;
    if state.batches_seen == 0 {
        return Err(Error::InvalidState(
            "drift needs trained batch-norm statistics".into(),
        ));
    }
    Ok(drift_from_moments(&state, &moments.expect("captured")))
}

fn norm_state(model: &Model, layer: usize) -> Result<crate::norm::NormState> {
    let mut m = model.clone();
    let mut k = 0;
    let mut found = None;
    m.visit_norms(&mut |_, l| {
        if k == layer {
            found = Some(l.state.clone());
        }
        k += 1;
    });
    found.ok_or_else(|| {
        Error::InvalidParam(format!(
            "model has {k} normalization layers, asked for {layer}"
        ))
    })
}

/// Adapted copy of a batch-norm model: one adapt-mode pass over `images`
/// in batches of `batch_size`, limited to `max_batches` when given.
pub fn adapt_model(
    model: &Model,
    images: &[Tensor<f64>],
    batch_size: usize,
    momentum: f64,
    which: AdaptStats,
    max_batches: Option<usize>,
) -> Result<Model> {
    let batches: Vec<Tensor<f64>> = images
        .chunks(batch_size.max(1))
        .take(max_batches.unwrap_or(usize::MAX))
        .map(|c| stack_images(&c.iter().collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let mut m = model.clone();
    m.adapt(&batches, momentum, which)?;
    Ok(m)
}

/// Model for `(scheme, run)` according to the checkpoint policy.
fn obtain_model(
    cfg: &ExperimentConfig,
    scheme: SchemeName,
    run: usize,
    train_cfg: &TrainConfig,
    splits: &(LabeledDataset, LabeledDataset, LabeledDataset),
) -> Result<Model> {
    let dir = cfg.checkpoint_dir(scheme, run);
    let exists = dir.join("manifest.json").is_file();
    match cfg.checkpoints {
        CheckpointPolicy::Require if !exists => {
            return Err(Error::MissingFile(dir.join("manifest.json")))
        }
        CheckpointPolicy::Require | CheckpointPolicy::Reuse if exists => return load_model(&dir),
        _ => {}
    }
    let (model, history) = train_one(cfg, scheme, run, train_cfg, splits)?;
    save_model(&model, &dir)?;
    write_text(&dir.join("history.csv"), &history.to_csv())?;
    Ok(model)
}

pub fn train_one(
    cfg: &ExperimentConfig,
    scheme: SchemeName,
    run: usize,
    train_cfg: &TrainConfig,
    splits: &(LabeledDataset, LabeledDataset, LabeledDataset),
) -> Result<(Model, History)> {
    let seed = cfg.run_seed(run);
    let model = Model::new(cfg.topology, cfg.norm_scheme(scheme), 2, seed)?;
    let tc = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    train(model, &splits.0, &splits.1, &tc)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Evaluates one model under every sweep level, plus the clean baseline.
fn evaluate_scheme(
    cfg: &ExperimentConfig,
    scheme: SchemeName,
    run: usize,
    model: &Model,
    test: &LabeledDataset,
) -> Result<Vec<SweepRow>> {
    let labels = test.class_labels(cfg.train.pathology);
    let bs = cfg.train.eval_batch_size;
    let mut conditions: Vec<(String, usize, String, Option<ArtifactSpec>)> =
        vec![("none".into(), 0, "clean".into(), None)];
    for sw in &cfg.sweep {
        for (li, params) in sw.resolve()? {
            let spec = ArtifactSpec::new(params.clone(), cfg.artifact_seed(sw.kind, li, run))?;
            conditions.push((
                sw.kind.name().into(),
                li,
                params.level_value().to_string(),
                Some(spec),
            ));
        }
    }
    let mut rows = Vec::new();
    for (kind, level_index, level, spec) in conditions {
        let images: Vec<Tensor<f64>> = match &spec {
            None => test.images.clone(),
            Some(s) => test
                .images
                .iter()
                .enumerate()
                .map(|(i, x)| s.apply_indexed(x, i as u64))
                .collect::<Result<_>>()?,
        };
        let m = if scheme == SchemeName::Adabn {
            let adapted = adapt_model(
                model,
                &images,
                cfg.train.batch_size,
                cfg.adapt_momentum,
                AdaptStats::Both,
                cfg.adapt_batches,
            )?;
            if cfg.save_adapted {
                let dir = cfg
                    .output_dir
                    .join("checkpoints")
                    .join(format!("adabn-{kind}-L{level_index}-seed{run}"));
                save_model(&adapted, dir)?;
            }
            adapted
        } else {
            model.clone()
        };
        let capture = scheme.has_bn_stats().then_some(0);
        let (scores, moments) = score_and_capture(&m, &images, bs, capture)?;
        let drift = match moments {
            Some(acc) => Some(drift_from_moments(&norm_state(&m, 0)?, &acc)),
            None => None,
        };
        rows.push(SweepRow {
            scheme: scheme.name().into(),
            kind,
            level_index,
            level,
            seed: run,
            auroc: auroc(&scores, &labels)?,
            balanced_accuracy: balanced_accuracy(&scores, &labels, cfg.threshold)?,
            d_mean: drift.map(|d| d.d_mean),
            d_var: drift.map(|d| d.d_var),
        });
    }
    Ok(rows)
}

/// Trains (or loads) one model per trained scheme and run, then evaluates
/// every scheme on the clean and corrupted test split.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<SweepResult> {
    run_sweep_with(cfg, &cfg.train, jobs)
}

fn run_sweep_with(
    cfg: &ExperimentConfig,
    train_cfg: &TrainConfig,
    jobs: usize,
) -> Result<SweepResult> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    let mut trained: Vec<SchemeName> = cfg.schemes.iter().map(|s| s.trained_as()).collect();
    trained.sort();
    trained.dedup();
    let train_jobs: Vec<(SchemeName, usize)> = trained
        .iter()
        .flat_map(|&s| (0..cfg.n_seeds).map(move |r| (s, r)))
        .collect();
    let pool = pool(jobs)?;
    let models: Vec<((SchemeName, usize), Model, f64)> = pool.install(|| {
        train_jobs
            .par_iter()
            .map(|&(s, r)| {
                let t = Instant::now();
                let m = obtain_model(cfg, s, r, train_cfg, &splits)?;
                Ok(((s, r), m, t.elapsed().as_secs_f64()))
            })
            .collect::<Result<_>>()
    })?;
    let lookup: BTreeMap<(SchemeName, usize), (&Model, f64)> =
        models.iter().map(|(k, m, t)| (*k, (m, *t))).collect();

    let mut schemes = cfg.schemes.clone();
    schemes.sort();
    schemes.dedup();
    let eval_jobs: Vec<(SchemeName, usize)> = schemes
        .iter()
        .flat_map(|&s| (0..cfg.n_seeds).map(move |r| (s, r)))
        .collect();
    let results: Vec<(Vec<SweepRow>, (String, usize), f64)> = pool.install(|| {
        eval_jobs
            .par_iter()
            .map(|&(s, r)| {
                let t = Instant::now();
                let (model, train_time) = lookup[&(s.trained_as(), r)];
                let rows = evaluate_scheme(cfg, s, r, model, &splits.2)?;
                Ok((
                    rows,
                    (s.name().to_string(), r),
                    train_time + t.elapsed().as_secs_f64(),
                ))
            })
            .collect::<Result<_>>()
    })?;
    let mut out = SweepResult::default();
    for (rows, key, t) in results {
        out.rows.extend(rows);
        out.wall_time.insert(key, t);
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Serialize)]
struct SweepManifest<'a> {
    config: &'a ExperimentConfig,
    rng: &'static str,
    run_seeds: Vec<u64>,
    artifact_seeds: Vec<ArtifactSeed>,
}

#[derive(Debug, Serialize)]
struct ArtifactSeed {
    kind: ArtifactKind,
    level_index: usize,
    run: usize,
    seed: u64,
}

fn write_sweep_outputs(
    cfg: &ExperimentConfig,
    result: &SweepResult,
    stem: &str,
) -> Result<PathBuf> {
    let csv = cfg.output_dir.join(format!("{stem}.csv"));
    write_text(&csv, &result.to_csv())?;
    write_text(
        &cfg.output_dir.join(format!("{stem}_timing.csv")),
        &result.timing_csv(),
    )?;
    let mut artifact_seeds = Vec::new();
    for sw in &cfg.sweep {
        for (li, _) in sw.resolve()? {
            for run in 0..cfg.n_seeds {
                artifact_seeds.push(ArtifactSeed {
                    kind: sw.kind,
                    level_index: li,
                    run,
                    seed: cfg.artifact_seed(sw.kind, li, run),
                });
            }
        }
    }
    let manifest = SweepManifest {
        config: cfg,
        rng: ALGORITHM_ID,
        run_seeds: (0..cfg.n_seeds).map(|r| cfg.run_seed(r)).collect(),
        artifact_seeds,
    };
    write_text(
        &cfg.output_dir.join(format!("{stem}_manifest.json")),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;
    Ok(csv)
}

/// `sweep` command: runs and writes `sweep.csv`, `sweep_timing.csv` and
/// `sweep_manifest.json` under the output directory.
pub fn cmd_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<(SweepResult, PathBuf)> {
    let result = run_sweep(cfg, jobs)?;
    let path = write_sweep_outputs(cfg, &result, "sweep")?;
    Ok((result, path))
}

/// `train` command: trains every configured scheme for every run and writes
/// checkpoints (with `history.csv`) under `<output>/checkpoints`.
pub fn cmd_train(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    let mut trained: Vec<SchemeName> = cfg.schemes.iter().map(|s| s.trained_as()).collect();
    trained.sort();
    trained.dedup();
    let runs: Vec<(SchemeName, usize)> = trained
        .iter()
        .flat_map(|&s| (0..cfg.n_seeds).map(move |r| (s, r)))
        .collect();
    pool(jobs)?.install(|| {
        runs.par_iter()
            .map(|&(s, r)| {
                let (model, history) = train_one(cfg, s, r, &cfg.train, &splits)?;
                let dir = cfg.checkpoint_dir(s, r);
                save_model(&model, &dir)?;
                write_text(&dir.join("history.csv"), &history.to_csv())?;
                Ok(dir)
            })
            .collect()
    })
}

/// `batch-study` command: batch-norm models trained per batch size, each
/// swept like [`cmd_sweep`]. Rows gain a leading `batch_size` column.
pub fn cmd_batch_study(cfg: &ExperimentConfig, jobs: usize) -> Result<PathBuf> {
    if cfg.batch_sizes.is_empty() || cfg.batch_sizes.contains(&0) {
        return Err(Error::Config(
            "batch_sizes must be non-empty and >= 1".into(),
        ));
    }
    let mut csv = format!("{CSV_SCHEMA}\nbatch_size,scheme,kind,level_index,level,seed,auroc,balanced_accuracy,d_mean,d_var\n");
    for &bs in &cfg.batch_sizes {
        let sub = ExperimentConfig {
            schemes: vec![SchemeName::Batch],
            output_dir: cfg.output_dir.join(format!("bs{bs}")),
            ..cfg.clone()
        };
        let tc = TrainConfig {
            batch_size: bs,
            ..cfg.train.clone()
        };
        let result = run_sweep_with(&sub, &tc, jobs)?;
        for line in result.to_csv().lines().skip(2) {
            csv.push_str(&format!("{bs},{line}\n"));
        }
    }
    let path = cfg.output_dir.join("batch_study.csv");
    write_text(&path, &csv)?;
    Ok(path)
}

/// `drift` command: one CSV row per requested normalization layer.
pub fn cmd_drift(
    checkpoint: &Path,
    data_dir: &Path,
    layers: &[usize],
    batch_size: usize,
) -> Result<String> {
    let model = load_model(checkpoint)?;
    let ds = load_dataset_dir(data_dir)?;
    let mut csv = format!("{CSV_SCHEMA}\nlayer,kind,d_mean,d_var,d_mean_avg,d_var_avg\n");
    for &layer in layers {
        let d = model_drift(&model, &ds.images, layer, batch_size)?;
        csv.push_str(&format!(
            "{layer},{},{},{},{},{}\n",
            model.scheme.kind.name(),
            d.d_mean,
            d.d_var,
            d.d_mean_avg,
            d.d_var_avg
        ));
    }
    Ok(csv)
}

/// `adapt` command: AUROC before and after adapting the selected statistics
/// on `data_dir`; optionally writes the adapted checkpoint to `save_to`.
#[allow(clippy::too_many_arguments)]
pub fn cmd_adapt(
    checkpoint: &Path,
    data_dir: &Path,
    which: &[AdaptStats],
    momentum: f64,
    batch_size: usize,
    pathology: usize,
    threshold: f64,
    save_to: Option<&Path>,
) -> Result<String> {
    let model = load_model(checkpoint)?;
    let ds = load_dataset_dir(data_dir)?;
    let labels = ds.class_labels(pathology);
    let mut csv = format!("{CSV_SCHEMA}\nadapt,auroc,balanced_accuracy,d_mean,d_var\n");
    let mut row = |name: &str, m: &Model| -> Result<()> {
        let (scores, acc) = score_and_capture(m, &ds.images, batch_size, Some(0))?;
        let d = drift_from_moments(&norm_state(m, 0)?, &acc.expect("captured"));
        csv.push_str(&format!(
            "{name},{},{},{},{}\n",
            auroc(&scores, &labels)?,
            balanced_accuracy(&scores, &labels, threshold)?,
            d.d_mean,
            d.d_var
        ));
        Ok(())
    };
    row("none", &model)?;
    for &w in which {
        let adapted = adapt_model(&model, &ds.images, batch_size, momentum, w, None)?;
        let name = match w {
            AdaptStats::Both => "both",
            AdaptStats::MeanOnly => "mean_only",
            AdaptStats::VarOnly => "var_only",
        };
        row(name, &adapted)?;
        if let Some(dir) = save_to {
            save_model(&adapted, dir.join(format!("adapted-{name}")))?;
        }
    }
    Ok(csv)
}

/// Provenance written next to corrupted images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptManifest {
    pub input_dir: PathBuf,
    pub rng: String,
    pub specs: Vec<ArtifactSpec>,
    pub items: Vec<CorruptItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptItem {
    pub file: String,
    /// Per-image seed used for each spec, in application order.
    pub seeds: Vec<u64>,
}

pub const CORRUPT_MANIFEST: &str = "corrupt_manifest.json";

/// `corrupt` command: applies `specs` in order to every image of `in_dir`.
/// With no specs the files are copied byte for byte.
pub fn cmd_corrupt(
    in_dir: &Path,
    specs: &[ArtifactSpec],
    out_dir: &Path,
) -> Result<CorruptManifest> {
    let labels_path = in_dir.join(LABELS_FILE);
    let (files, _, _) = read_labels_csv(&labels_path)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut items = Vec::with_capacity(files.len());
    for (i, file) in files.iter().enumerate() {
        let src = in_dir.join(file);
        let dst = out_dir.join(file);
        if specs.is_empty() {
            if !src.is_file() {
                return Err(Error::MissingFile(src));
            }
            fs::copy(&src, &dst).map_err(|e| Error::io(&dst, e))?;
        } else {
            let x = read_real(&src)?;
            write_real(&dst, &compose_indexed(specs, &x, i as u64)?)?;
        }
        items.push(CorruptItem {
            file: file.clone(),
            seeds: specs.iter().map(|s| s.item_seed(i as u64)).collect(),
        });
    }
    let out_labels = out_dir.join(LABELS_FILE);
    fs::copy(&labels_path, &out_labels).map_err(|e| Error::io(&out_labels, e))?;
    let manifest = CorruptManifest {
        input_dir: in_dir.to_path_buf(),
        rng: ALGORITHM_ID.into(),
        specs: specs.to_vec(),
        items,
    };
    write_text(
        &out_dir.join(CORRUPT_MANIFEST),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            data: DataSource::Phantom(PhantomConfig {
                size: 16,
                n: 80,
                lesion_radius: (2.0, 3.0),
                ..PhantomConfig::default()
            }),
            schemes: vec![SchemeName::Batch, SchemeName::Group, SchemeName::Adabn],
            train: TrainConfig {
                max_epochs: 2,
                batch_size: 16,
                ..TrainConfig::default()
            },
            sweep: vec![ArtifactSweep {
                kind: ArtifactKind::Rician,
                levels: Some(vec![10.0, 4.0]),
            }],
            n_seeds: 2,
            output_dir: dir.to_path_buf(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn sweep_shape_and_reproducibility() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(dir.path());
        let (res, path) = cmd_sweep(&cfg, 1).unwrap();
        // 3 schemes × 2 seeds × (1 clean + 2 levels).
        assert_eq!(res.rows.len(), 18);
        assert!(res.rows.iter().filter(|r| r.level == "clean").count() == 6);
        let first = fs::read(&path).unwrap();
        assert!(first.starts_with(b"# schema=1\n"));
        for r in &res.rows {
            assert_eq!(r.d_mean.is_some(), r.scheme != "group");
        }
        let other = tempfile::tempdir().unwrap();
        let cfg2 = ExperimentConfig {
            output_dir: other.path().to_path_buf(),
            ..cfg
        };
        let (_, path2) = cmd_sweep(&cfg2, 2).unwrap();
        assert_eq!(first, fs::read(path2).unwrap());
    }

    #[test]
    fn adabn_differs_from_bn_only_in_norm_state() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(dir.path());
        let splits = load_splits(&cfg).unwrap();
        let (bn, _) = train_one(&cfg, SchemeName::Batch, 0, &cfg.train, &splits).unwrap();
        let mut ad = adapt_model(&bn, &splits.2.images, 16, 0.1, AdaptStats::Both, None).unwrap();
        let mut bn2 = bn.clone();
        assert_eq!(ad.params(), bn2.params());
        let mut sa = Vec::new();
        ad.visit_norms(&mut |_, l| sa.push(l.state.running_mean.clone()));
        let mut sb = Vec::new();
        bn2.visit_norms(&mut |_, l| sb.push(l.state.running_mean.clone()));
        assert_ne!(sa, sb);
    }

    #[test]
    fn level_outside_grid_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(dir.path());
        cfg.sweep[0].levels = Some(vec![7.0]);
        let err = run_sweep(&cfg, 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn required_checkpoint_missing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            checkpoints: CheckpointPolicy::Require,
            ..tiny_cfg(dir.path())
        };
        assert!(matches!(run_sweep(&cfg, 1), Err(Error::MissingFile(_))));
    }

    #[test]
    fn overrides_replace_top_level_keys() {
        let cfg = ExperimentConfig::default();
        let o = cfg
            .with_overrides(&[
                ("n_seeds".into(), "3".into()),
                ("output_dir".into(), "elsewhere".into()),
            ])
            .unwrap();
        assert_eq!(o.n_seeds, 3);
        assert_eq!(o.output_dir, PathBuf::from("elsewhere"));
        assert!(cfg.with_overrides(&[("bogus".into(), "1".into())]).is_err());
        let round = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn shipped_configs_parse() {
        let r = ExperimentConfig::from_json(include_str!("../configs/reference.json")).unwrap();
        assert_eq!(r.schemes, [SchemeName::Batch, SchemeName::Group, SchemeName::Adabn]);
        assert_eq!(r.sweep.len(), 2);
        assert!(r.sweep.iter().all(|s| s.levels.is_none()));
        r.validate().unwrap();
        ExperimentConfig::from_json(include_str!("../configs/full.json")).unwrap().validate().unwrap();
    }

    #[test]
    fn corrupt_round_trip_and_provenance() {
        let src = tempfile::tempdir().unwrap();
        let ds = generate_phantoms(&PhantomConfig {
            size: 16,
            n: 4,
            lesion_radius: (2.0, 3.0),
            ..PhantomConfig::default()
        })
        .unwrap();
        ds.save(src.path()).unwrap();

        let copy = tempfile::tempdir().unwrap();
        cmd_corrupt(src.path(), &[], copy.path()).unwrap();
        for f in ["00000.mrt1", "00003.mrt1", LABELS_FILE] {
            assert_eq!(
                fs::read(src.path().join(f)).unwrap(),
                fs::read(copy.path().join(f)).unwrap()
            );
        }

        let specs = vec![
            ArtifactSpec::new(ArtifactParams::Rician { snr: 5.0 }, 11).unwrap(),
            ArtifactSpec::new(
                ArtifactParams::Spike {
                    intensity: 1.0,
                    max_spikes: 3,
                },
                12,
            )
            .unwrap(),
        ];
        let a = tempfile::tempdir().unwrap();
        let m = cmd_corrupt(src.path(), &specs, a.path()).unwrap();
        assert_eq!(m.items.len(), 4);
        assert!(m.items.iter().all(|it| it.seeds.len() == 2));
        // Re-run from the written manifest alone.
        let text = fs::read_to_string(a.path().join(CORRUPT_MANIFEST)).unwrap();
        let back: CorruptManifest = serde_json::from_str(&text).unwrap();
        let b = tempfile::tempdir().unwrap();
        cmd_corrupt(&back.input_dir, &back.specs, b.path()).unwrap();
        for it in &m.items {
            assert_eq!(
                fs::read(a.path().join(&it.file)).unwrap(),
                fs::read(b.path().join(&it.file)).unwrap()
            );
        }
    }
}
