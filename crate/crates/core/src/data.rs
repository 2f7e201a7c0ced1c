//! Labeled image datasets: synthetic phantoms, on-disk MRT1 + CSV sets and
//! stratified hold-out splitting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    All,
    Train,
    Val,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::All => 0,
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

/// Images with `K` binary labels each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Vec<Tensor<f64>>,
    pub labels: Vec<Vec<u8>>,
    pub num_pathologies: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(
        images: Vec<Tensor<f64>>,
        labels: Vec<Vec<u8>>,
        num_pathologies: usize,
        split: Split,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::InvalidShape(format!(
                "{} images but {} label rows",
                images.len(),
                labels.len()
            )));
        }
        if let Some(first) = images.first() {
            first.shape2()?;
            if let Some(bad) = images.iter().find(|t| t.dims() != first.dims()) {
                return Err(Error::InvalidShape(format!(
                    "image dims {:?} differ from {:?}",
                    bad.dims(),
                    first.dims()
                )));
            }
        }
        for row in &labels {
            if row.len() != num_pathologies || row.iter().any(|&l| l > 1) {
                return Err(Error::InvalidLabel {
                    value: format!("{row:?}"),
                    context: format!("dataset with K = {num_pathologies}"),
                });
            }
        }
        Ok(Self {
            images,
            labels,
            num_pathologies,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_dims(&self) -> Option<(usize, usize)> {
        self.images.first().map(|t| (t.dims()[0], t.dims()[1]))
    }

    /// Labels of one pathology as class indices.
    pub fn class_labels(&self, pathology: usize) -> Vec<usize> {
        self.labels.iter().map(|r| r[pathology] as usize).collect()
    }

    pub fn subset(&self, indices: &[usize], split: Split) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            num_pathologies: self.num_pathologies,
            split,
        }
    }

    /// Same labels, images replaced by `f(index, image)`.
    pub fn map_images(
        &self,
        mut f: impl FnMut(usize, &Tensor<f64>) -> Result<Tensor<f64>>,
    ) -> Result<Self> {
        let images = self
            .images
            .iter()
            .enumerate()
            .map(|(i, t)| f(i, t))
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            images,
            self.labels.clone(),
            self.num_pathologies,
            self.split,
        )
    }

    /// Writes `NNNNN.mrt1` files and `labels.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<String>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let names: Vec<String> = (0..self.len()).map(|i| format!("{i:05}.mrt1")).collect();
        for (name, img) in names.iter().zip(&self.images) {
            io::write_real(dir.join(name), img)?;
        }
        write_labels_csv(
            dir.join(LABELS_FILE),
            &names,
            &self.labels,
            self.num_pathologies,
        )?;
        Ok(names)
    }
}

pub const LABELS_FILE: &str = "labels.csv";

pub fn write_labels_csv(
    path: impl AsRef<Path>,
    files: &[String],
    labels: &[Vec<u8>],
    k: usize,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["file".to_string()];
    header.extend((0..k).map(|i| format!("label_{i}")));
    w.write_record(&header)?;
    for (f, row) in files.iter().zip(labels) {
        let mut rec = vec![f.clone()];
        rec.extend(row.iter().map(|l| l.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `labels_csv` (header `file,label_0,…`) and the MRT1 tensors it names,
/// resolved relative to `tensor_dir`, in file order.
pub fn load_dataset(
    tensor_dir: impl AsRef<Path>,
    labels_csv: impl AsRef<Path>,
) -> Result<LabeledDataset> {
    let (dir, csv_path) = (tensor_dir.as_ref(), labels_csv.as_ref());
    let (files, labels, k) = read_labels_csv(csv_path)?;
    let mut images = Vec::with_capacity(files.len());
    for f in &files {
        let path = dir.join(f);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        images.push(io::read_real(&path)?);
    }
    LabeledDataset::new(images, labels, k, Split::All)
}

/// Loads a directory written by [`LabeledDataset::save`].
pub fn load_dataset_dir(dir: impl AsRef<Path>) -> Result<LabeledDataset> {
    let dir = dir.as_ref();
    load_dataset(dir, dir.join(LABELS_FILE))
}

pub fn read_labels_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<u8>>, usize)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("file") || header.len() < 2 {
        return Err(Error::Format(format!(
            "{}: header must be file,label_0,…",
            path.display()
        )));
    }
    for (i, h) in header.iter().skip(1).enumerate() {
        if h != format!("label_{i}") {
            return Err(Error::Format(format!(
                "{}: unexpected column {h:?}",
                path.display()
            )));
        }
    }
    let k = header.len() - 1;
    let (mut files, mut labels) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        files.push(rec[0].to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|v| match v.trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(Error::InvalidLabel {
                    value: other.to_string(),
                    context: format!("{} row {}", path.display(), line + 1),
                }),
            })
            .collect::<Result<Vec<u8>>>()?;
        labels.push(row);
    }
    Ok((files, labels, k))
}

/// Synthetic "lesion present / absent" phantom task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub size: usize,
    pub n: usize,
    pub lesion_prob: f64,
    /// Lesion disc radius range in pixels.
    pub lesion_radius: (f64, f64),
    /// Intensity added inside the lesion, before normalization.
    pub lesion_contrast: (f64, f64),
    pub ellipse_count: (usize, usize),
    /// Semi-axis range as a fraction of the half-width.
    pub ellipse_axes: (f64, f64),
    pub ellipse_intensity: (f64, f64),
    /// Amplitude of the smooth background texture.
    pub texture: f64,
    pub seed: u64,
    pub split: Split,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: 64,
            n: 1000,
            lesion_prob: 0.5,
            lesion_radius: (2.0, 4.0),
            lesion_contrast: (0.5, 0.7),
            ellipse_count: (2, 4),
            ellipse_axes: (0.3, 0.8),
            ellipse_intensity: (0.2, 0.6),
            texture: 0.08,
            seed: 0,
            split: Split::All,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.size < 16 {
            return bad(format!("phantom size must be >= 16, got {}", self.size));
        }
        if !(self.lesion_prob > 0.0 && self.lesion_prob < 1.0) {
            return bad(format!(
                "lesion_prob must be in (0, 1), got {}",
                self.lesion_prob
            ));
        }
        let (r0, r1) = self.lesion_radius;
        if !(r0 > 0.0 && r0 <= r1) || 2.0 * (r1 + 1.0) >= self.size as f64 {
            return bad(format!(
                "lesion radius range {:?} does not fit a {}px image",
                self.lesion_radius, self.size
            ));
        }
        let (c0, c1) = self.lesion_contrast;
        if !(c0 > 0.0 && c0 <= c1) {
            return bad(format!(
                "bad lesion contrast range {:?}",
                self.lesion_contrast
            ));
        }
        let (e0, e1) = self.ellipse_count;
        if e0 < 1 || e0 > e1 {
            return bad(format!("bad ellipse count range {:?}", self.ellipse_count));
        }
        let (a0, a1) = self.ellipse_axes;
        if !(a0 > 0.0 && a0 <= a1) {
            return bad(format!("bad ellipse axis range {:?}", self.ellipse_axes));
        }
        let (i0, i1) = self.ellipse_intensity;
        if !(i0 > 0.0 && i0 <= i1) {
            return bad(format!(
                "bad ellipse intensity range {:?}",
                self.ellipse_intensity
            ));
        }
        if !(self.texture >= 0.0) {
            return bad("texture must be >= 0".into());
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    intensity: f64,
}

impl Ellipse {
    /// Soft indicator with an edge width of about one pixel.
    fn value(&self, y: f64, x: f64, px: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = self.cos * dx + self.sin * dy;
        let v = -self.sin * dx + self.cos * dy;
        let r = ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt();
        let scale = self.a.min(self.b);
        self.intensity * sigmoid((1.0 - r) * scale / px)
    }
}

fn phantom_image(cfg: &PhantomConfig, lesion: bool, rng: &mut Rng) -> Result<Tensor<f64>> {
    let s = cfg.size;
    let px = 2.0 / s as f64;
    let coord = |i: usize| -1.0 + (i as f64 + 0.5) * px;

    let count = rng.int_inclusive(cfg.ellipse_count.0, cfg.ellipse_count.1);
    let mut ellipses = Vec::with_capacity(count);
    for _ in 0..count {
        let angle = rng.uniform(0.0, std::f64::consts::PI)?;
        ellipses.push(Ellipse {
            cy: rng.uniform(-0.25, 0.25)?,
            cx: rng.uniform(-0.25, 0.25)?,
            a: rng.uniform(cfg.ellipse_axes.0, cfg.ellipse_axes.1)?,
            b: rng.uniform(cfg.ellipse_axes.0, cfg.ellipse_axes.1)?,
            cos: angle.cos(),
            sin: angle.sin(),
            intensity: rng.uniform(cfg.ellipse_intensity.0, cfg.ellipse_intensity.1)?,
        });
    }

    // Smooth texture: a few random low-frequency cosines.
    let mut waves = Vec::with_capacity(4);
    for _ in 0..4 {
        waves.push((
            rng.uniform(-3.0, 3.0)?,
            rng.uniform(-3.0, 3.0)?,
            rng.uniform(0.0, 2.0 * std::f64::consts::PI)?,
        ));
    }

    let mut img = Tensor::from_fn(&[s, s], |i| {
        let (y, x) = (coord(i / s), coord(i % s));
        let body: f64 = ellipses.iter().map(|e| e.value(y, x, px)).sum();
        let tex: f64 = waves
            .iter()
            .map(|&(fy, fx, ph)| (std::f64::consts::PI * (fy * y + fx * x) + ph).cos())
            .sum::<f64>()
            / waves.len() as f64;
        body * (1.0 + cfg.texture * tex)
    });

    if lesion {
        let radius = rng.uniform(cfg.lesion_radius.0, cfg.lesion_radius.1)?;
        let contrast = rng.uniform(cfg.lesion_contrast.0, cfg.lesion_contrast.1)?;
        let margin = cfg.lesion_radius.1 + 1.0;
        let cy = rng.uniform(margin, s as f64 - 1.0 - margin)?;
        let cx = rng.uniform(margin, s as f64 - 1.0 - margin)?;
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            let d = (((i / s) as f64 - cy).powi(2) + ((i % s) as f64 - cx).powi(2)).sqrt();
            *v += contrast * sigmoid(2.0 * (radius - d));
        }
    }

    let peak = img.max();
    if peak > 0.0 {
        img.data_mut()
            .iter_mut()
            .for_each(|v| *v = (*v / peak).clamp(0.0, 1.0));
    }
    Ok(img)
}

/// Generates `cfg.n` phantoms for `cfg.split` from that split's own stream.
pub fn generate_phantoms(cfg: &PhantomConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed).child(cfg.split.stream());
    let mut images = Vec::with_capacity(cfg.n);
    let mut labels = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let lesion = rng.next_f64() < cfg.lesion_prob;
        images.push(phantom_image(cfg, lesion, &mut rng)?);
        labels.push(vec![lesion as u8]);
    }
    LabeledDataset::new(images, labels, 1, cfg.split)
}

/// Index lists for a stratified train/val/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder apportionment of `total` items over `counts`.
fn apportion(total: usize, counts: &[usize]) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return vec![0; counts.len()];
    }
    let mut alloc: Vec<usize> = counts.iter().map(|&c| total * c / n).collect();
    let mut rema: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| ((total * c) % n, i))
        .collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let left = total - alloc.iter().sum::<usize>();
    for &(_, i) in rema.iter().take(left) {
        alloc[i] += 1;
    }
    alloc
}

pub fn split_holdout_indices(
    labels: &[Vec<u8>],
    val_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<SplitIndices> {
    if !(val_frac >= 0.0 && test_frac >= 0.0 && val_frac + test_frac < 1.0) {
        return Err(Error::InvalidParam(format!(
            "split fractions must be >= 0 with sum < 1, got {val_frac} and {test_frac}"
        )));
    }
    let n = labels.len();
    let n_val = (n as f64 * val_frac).round() as usize;
    let n_test = (n as f64 * test_frac).round() as usize;

    let mut classes: BTreeMap<&[u8], Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        classes.entry(l.as_slice()).or_default().push(i);
    }
    let mut rng = Rng::new(seed);
    let groups: Vec<Vec<usize>> = classes
        .into_values()
        .map(|mut g| {
            rng.shuffle(&mut g);
            g
        })
        .collect();
    let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
    let val_alloc = apportion(n_val, &counts);
    let test_alloc = apportion(n_test, &counts);

    for (name, want, alloc) in [
        ("validation", n_val, &val_alloc),
        ("test", n_test, &test_alloc),
    ] {
        if want > 0 && alloc.iter().any(|&a| a == 0) {
            return Err(Error::InvalidParam(format!(
                "{name} split of {want} would miss a class; need at least one example per class"
            )));
        }
    }

    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for ((g, &v), &t) in groups.iter().zip(&val_alloc).zip(&test_alloc) {
        out.val.extend_from_slice(&g[..v]);
        out.test.extend_from_slice(&g[v..v + t]);
        out.train.extend_from_slice(&g[v + t..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Stratified, seeded train/val/test partition.
pub fn split_holdout(
    ds: &LabeledDataset,
    val_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let idx = split_holdout_indices(&ds.labels, val_frac, test_frac, seed)?;
    Ok((
        ds.subset(&idx.train, Split::Train),
        ds.subset(&idx.val, Split::Val),
        ds.subset(&idx.test, Split::Test),
    ))
}

/// Manifest written next to a generated phantom directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomManifest {
    pub config: PhantomConfig,
    pub files: Vec<String>,
    pub positives: usize,
    pub rng: String,
}

pub fn write_phantom_dir(cfg: &PhantomConfig, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let ds = generate_phantoms(cfg)?;
    let files = ds.save(dir)?;
    let manifest = PhantomManifest {
        config: cfg.clone(),
        files,
        positives: ds.labels.iter().filter(|r| r[0] == 1).count(),
        rng: crate::rng::ALGORITHM_ID.to_string(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_cfg(n: usize) -> PhantomConfig {
        PhantomConfig {
            size: 32,
            n,
            lesion_radius: (1.5, 3.0),
            seed: 5,
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn positive_rate_within_three_sigma() {
        let ds = generate_phantoms(&small_cfg(1000)).unwrap();
        let pos = ds.labels.iter().filter(|r| r[0] == 1).count();
        assert!((440..=560).contains(&pos), "{pos}");
    }

    #[test]
    fn deterministic_and_normalized() {
        let a = generate_phantoms(&small_cfg(20)).unwrap();
        let b = generate_phantoms(&small_cfg(20)).unwrap();
        assert_eq!(a, b);
        for img in &a.images {
            assert!(img.min() >= 0.0 && img.max() <= 1.0);
        }
    }

    #[test]
    fn splits_use_distinct_streams() {
        let train = generate_phantoms(&PhantomConfig {
            split: Split::Train,
            ..small_cfg(3)
        })
        .unwrap();
        let test = generate_phantoms(&PhantomConfig {
            split: Split::Test,
            ..small_cfg(3)
        })
        .unwrap();
        assert_ne!(train.images, test.images);
    }

    #[test]
    fn degenerate_configs_rejected() {
        assert!(generate_phantoms(&PhantomConfig {
            size: 8,
            ..small_cfg(1)
        })
        .is_err());
        assert!(generate_phantoms(&PhantomConfig {
            lesion_prob: 1.0,
            ..small_cfg(1)
        })
        .is_err());
        assert!(generate_phantoms(&PhantomConfig {
            lesion_radius: (2.0, 20.0),
            ..small_cfg(1)
        })
        .is_err());
    }

    #[test]
    fn holdout_sizes() {
        let labels: Vec<Vec<u8>> = (0..100).map(|i| vec![(i % 2) as u8]).collect();
        let s = split_holdout_indices(&labels, 0.15, 0.15, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
        let s = split_holdout_indices(&labels, 0.0, 0.0, 1).unwrap();
        assert_eq!(s.train.len(), 100);
    }

    #[test]
    fn holdout_stratifies() {
        let labels: Vec<Vec<u8>> = (0..100).map(|i| vec![(i < 30) as u8]).collect();
        let s = split_holdout_indices(&labels, 0.15, 0.15, 9).unwrap();
        for (part, expected) in [
            (&s.train, 0.3 * 70.0),
            (&s.val, 0.3 * 15.0),
            (&s.test, 0.3 * 15.0),
        ] {
            let pos = part.iter().filter(|&&i| labels[i][0] == 1).count() as f64;
            assert!((pos - expected).abs() <= 1.0, "{pos} vs {expected}");
        }
    }

    #[test]
    fn holdout_rejects_classless_split() {
        let labels: Vec<Vec<u8>> = (0..10).map(|i| vec![(i == 0) as u8]).collect();
        assert!(split_holdout_indices(&labels, 0.2, 0.2, 0).is_err());
        assert!(split_holdout_indices(&labels, 0.6, 0.5, 0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_phantoms(&small_cfg(4)).unwrap();
        ds.save(dir.path()).unwrap();
        let back = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(back.images, ds.images);
        assert_eq!(back.labels, ds.labels);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::full(&[32, 32], 0.5);
        let b = Tensor::full(&[64, 64], 0.5);
        io::write_real(dir.path().join("a.mrt1"), &a).unwrap();
        io::write_real(dir.path().join("b.mrt1"), &b).unwrap();

        let csv = dir.path().join("ok.csv");
        fs::write(&csv, "file,label_0\na.mrt1,1\na.mrt1,0\n").unwrap();
        assert_eq!(load_dataset(dir.path(), &csv).unwrap().len(), 2);

        fs::write(&csv, "file,label_0\na.mrt1,1\nmissing.mrt1,0\n").unwrap();
        assert!(matches!(
            load_dataset(dir.path(), &csv),
            Err(Error::MissingFile(_))
        ));

        fs::write(&csv, "file,label_0\na.mrt1,1\nb.mrt1,0\n").unwrap();
        assert!(matches!(
            load_dataset(dir.path(), &csv),
            Err(Error::InvalidShape(_))
        ));

        fs::write(&csv, "file,label_0\na.mrt1,2\n").unwrap();
        assert!(matches!(
            load_dataset(dir.path(), &csv),
            Err(Error::InvalidLabel { .. })
        ));
    }

    proptest! {
        #[test]
        fn holdout_partitions_indices(n in 20usize..200, pos_pct in 20usize..80, seed in any::<u64>()) {
            let labels: Vec<Vec<u8>> = (0..n).map(|i| vec![(i * 100 < n * pos_pct) as u8]).collect();
            let s = split_holdout_indices(&labels, 0.15, 0.15, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
