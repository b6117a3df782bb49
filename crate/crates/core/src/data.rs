//! Multi-view datasets: manifest + CSV storage, stratified splits,
//! standardization, Gaussian noise injection and a synthetic generator.
//!
//! On disk a dataset is a JSON manifest
//!
//! ```json
//! {"name": "toy", "class_count": 3, "labels": "labels.csv",
//!  "views": ["view0.csv", "view1.csv"]}
//! ```
//!
//! with paths relative to the manifest. View files are headerless CSV rows of
//! decimal floats; the label file holds one integer per line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TmcError};
use crate::seeding::{rng_for, Stream};

/// Aligned feature matrices for `V` views plus integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    name: String,
    views: Vec<Array2<f64>>,
    labels: Vec<usize>,
    class_count: usize,
}

impl MultiViewDataset {
    pub fn new(
        name: impl Into<String>,
        views: Vec<Array2<f64>>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(TmcError::InvalidDataset("no views".into()));
        }
        if class_count < 2 {
            return Err(TmcError::InvalidDataset(format!(
                "class_count must be at least 2, got {class_count}"
            )));
        }
        let n = labels.len();
        for (v, m) in views.iter().enumerate() {
            if m.nrows() != n {
                return Err(TmcError::InvalidDataset(format!(
                    "row-count mismatch: view {v} has {} rows, labels have {n}",
                    m.nrows()
                )));
            }
            if m.ncols() == 0 {
                return Err(TmcError::InvalidDataset(format!("view {v} has no features")));
            }
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(TmcError::InvalidDataset(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(MultiViewDataset {
            name: name.into(),
            views,
            labels,
            class_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn views(&self) -> &[Array2<f64>] {
        &self.views
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.ncols()).collect()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn view_refs(&self) -> Vec<ArrayView2<'_, f64>> {
        self.views.iter().map(|v| v.view()).collect()
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(TmcError::InvalidDataset(format!(
                "index {bad} out of range for {} samples",
                self.len()
            )));
        }
        Ok(MultiViewDataset {
            name: self.name.clone(),
            views: self.views.iter().map(|v| v.select(Axis(0), indices)).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        })
    }

    /// Keeps only the listed views.
    pub fn select_views(&self, views: &[usize]) -> Result<Self> {
        let picked = views
            .iter()
            .map(|&v| {
                self.views.get(v).cloned().ok_or_else(|| {
                    TmcError::InvalidDataset(format!(
                        "view {v} out of range for {} views",
                        self.views.len()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MultiViewDataset::new(self.name.clone(), picked, self.labels.clone(), self.class_count)
    }

    /// All views side by side, for single-view baselines.
    pub fn concatenated(&self) -> Array2<f64> {
        let refs = self.view_refs();
        ndarray::concatenate(Axis(1), &refs).expect("views share the row count")
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub class_count: usize,
    pub labels: String,
    pub views: Vec<String>,
    /// Free-form record of how the files were produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| TmcError::io(path, e))
}

fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| TmcError::parse(path, e.to_string()))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| TmcError::parse(path, e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(TmcError::parse(
                    path,
                    format!("row {} has {} columns, expected {c}", line + 1, record.len()),
                ))
            }
            _ => {}
        }
        for field in record.iter() {
            let value: f64 = field.parse().map_err(|_| {
                TmcError::parse(path, format!("row {}: not a number: {field:?}", line + 1))
            })?;
            data.push(value);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| TmcError::parse(path, "empty view file"))?;
    Array2::from_shape_vec((rows, cols), data).map_err(|e| TmcError::parse(path, e.to_string()))
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|_| {
                TmcError::parse(path, format!("line {}: not a class index: {l:?}", i + 1))
            })
        })
        .collect()
}

fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut out = String::with_capacity(m.len() * 20);
    for row in m.outer_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| TmcError::io(path, e))
}

/// Reads a manifest and every file it references.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<MultiViewDataset> {
    let path = path.as_ref();
    let manifest: Manifest = serde_json::from_str(&read_text(path)?)
        .map_err(|e| TmcError::parse(path, e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let labels = read_labels(&base.join(&manifest.labels))?;
    let views = manifest
        .views
        .iter()
        .map(|v| read_matrix(&base.join(v)))
        .collect::<Result<Vec<_>>>()?;
    MultiViewDataset::new(manifest.name, views, labels, manifest.class_count)
}

/// Writes `manifest.json`, `labels.csv` and `view{i}.csv` into `dir` and
/// returns the manifest path. Values are written in shortest round-trip form
/// so that loading gives back identical bits.
pub fn save_dataset(
    ds: &MultiViewDataset,
    dir: impl AsRef<Path>,
    provenance: Option<serde_json::Value>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| TmcError::io(dir, e))?;
    let mut view_names = Vec::new();
    for (i, view) in ds.views.iter().enumerate() {
        let name = format!("view{i}.csv");
        write_matrix(&dir.join(&name), view)?;
        view_names.push(name);
    }
    let labels: String = ds.labels.iter().map(|l| format!("{l}\n")).collect();
    let labels_path = dir.join("labels.csv");
    fs::write(&labels_path, labels).map_err(|e| TmcError::io(&labels_path, e))?;
    let manifest = Manifest {
        name: ds.name.clone(),
        class_count: ds.class_count,
        labels: "labels.csv".into(),
        views: view_names,
        provenance,
    };
    let manifest_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text + "\n").map_err(|e| TmcError::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Train/test index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub stratified: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Seeded split holding out `test_fraction` of the samples, stratified by
/// class when every class has at least two samples.
pub fn split(ds: &MultiViewDataset, test_fraction: f64, seed: u64) -> Result<Split> {
    split_labels(ds.labels(), ds.class_count(), test_fraction, seed)
}

pub(crate) fn split_labels(
    labels: &[usize],
    class_count: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(TmcError::InvalidConfig(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = labels.len();
    if n < 2 {
        return Err(TmcError::InvalidDataset("need at least 2 samples to split".into()));
    }
    let mut rng = rng_for(seed, Stream::Split);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let singletons: Vec<usize> = (0..class_count).filter(|&c| by_class[c].len() == 1).collect();

    let mut test = Vec::new();
    let mut train = Vec::new();
    let mut warnings = Vec::new();
    let stratified = singletons.is_empty();
    if stratified {
        // Largest-remainder apportionment of the test budget across classes.
        let target = ((n as f64) * test_fraction).round() as usize;
        let mut quota: Vec<usize> = by_class
            .iter()
            .map(|m| (m.len() as f64 * test_fraction).floor() as usize)
            .collect();
        let mut order: Vec<usize> = (0..class_count).filter(|&c| !by_class[c].is_empty()).collect();
        order.sort_by(|&a, &b| {
            let ra = by_class[a].len() as f64 * test_fraction - quota[a] as f64;
            let rb = by_class[b].len() as f64 * test_fraction - quota[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let assigned: usize = quota.iter().sum();
        for &c in order.iter().take(target.saturating_sub(assigned)) {
            quota[c] += 1;
        }
        for (c, members) in by_class.iter_mut().enumerate() {
            if members.is_empty() {
                continue;
            }
            // Both sides get at least one sample of every class.
            let q = quota[c].clamp(1, members.len() - 1);
            members.shuffle(&mut rng);
            test.extend_from_slice(&members[..q]);
            train.extend_from_slice(&members[q..]);
        }
    } else {
        let msg = format!(
            "classes {singletons:?} have a single sample; falling back to an unstratified split"
        );
        warn!("{msg}");
        warnings.push(msg);
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        let q = (((n as f64) * test_fraction).round() as usize).clamp(1, n - 1);
        test.extend_from_slice(&all[..q]);
        train.extend_from_slice(&all[q..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        test,
        stratified,
        warnings,
    })
}

/// Per-feature standardization fitted on one subset and applied to any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<Vec<f64>>,
    pub scales: Vec<Vec<f64>>,
}

/// Variances below this are floored, which maps constant features to 0.
pub const VARIANCE_FLOOR: f64 = 1e-8;

impl Standardizer {
    /// Fits means and standard deviations on the rows in `indices`.
    pub fn fit(ds: &MultiViewDataset, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(TmcError::Empty("standardizer needs at least one sample"));
        }
        let fitted = ds.subset(indices)?;
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for view in &fitted.views {
            let mean = view.mean_axis(Axis(0)).expect("non-empty");
            let var = view.var_axis(Axis(0), 0.0);
            scales.push(var.iter().map(|v| v.max(VARIANCE_FLOOR).sqrt()).collect());
            means.push(mean.to_vec());
        }
        Ok(Standardizer { means, scales })
    }

    fn check(&self, ds: &MultiViewDataset) -> Result<()> {
        if self.means.len() != ds.view_count() {
            return Err(TmcError::DimensionMismatch {
                context: "standardizer views",
                expected: self.means.len(),
                found: ds.view_count(),
            });
        }
        for (m, dim) in self.means.iter().zip(ds.view_dims()) {
            if m.len() != dim {
                return Err(TmcError::DimensionMismatch {
                    context: "standardizer features",
                    expected: m.len(),
                    found: dim,
                });
            }
        }
        Ok(())
    }

    pub fn transform(&self, ds: &MultiViewDataset) -> Result<MultiViewDataset> {
        self.check(ds)?;
        let mut out = ds.clone();
        for ((view, mean), scale) in out.views.iter_mut().zip(&self.means).zip(&self.scales) {
            let mean = Array1::from(mean.clone());
            let scale = Array1::from(scale.clone());
            *view -= &mean;
            *view /= &scale;
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, ds: &MultiViewDataset) -> Result<MultiViewDataset> {
        self.check(ds)?;
        let mut out = ds.clone();
        for ((view, mean), scale) in out.views.iter_mut().zip(&self.means).zip(&self.scales) {
            let mean = Array1::from(mean.clone());
            let scale = Array1::from(scale.clone());
            *view *= &scale;
            *view += &mean;
        }
        Ok(out)
    }
}

/// Where and how strongly to corrupt samples with Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    /// Defaults to the first `⌈V/2⌉` views.
    #[serde(default)]
    pub affected_views: Option<Vec<usize>>,
    pub affected_fraction: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Self {
        NoiseSpec {
            sigma,
            affected_views: None,
            affected_fraction: 0.5,
            seed,
        }
    }

    pub fn resolved_views(&self, view_count: usize) -> Vec<usize> {
        self.affected_views
            .clone()
            .unwrap_or_else(|| (0..view_count.div_ceil(2)).collect())
    }

    pub fn validate(&self, view_count: usize) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(TmcError::InvalidConfig(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.affected_fraction) {
            return Err(TmcError::InvalidConfig(format!(
                "noise fraction must lie in [0, 1], got {}",
                self.affected_fraction
            )));
        }
        if let Some(&bad) = self.resolved_views(view_count).iter().find(|&&v| v >= view_count) {
            return Err(TmcError::InvalidConfig(format!(
                "noise view {bad} out of range for {view_count} views"
            )));
        }
        Ok(())
    }
}

/// Adds `N(0, σ²)` noise to the chosen views of a seeded random subset of
/// samples. Returns the corrupted copy and a per-sample mask of the
/// affected (out-of-distribution) rows.
pub fn inject_noise(ds: &MultiViewDataset, spec: &NoiseSpec) -> Result<(MultiViewDataset, Vec<bool>)> {
    spec.validate(ds.view_count())?;
    let n = ds.len();
    let mut rng = rng_for(spec.seed, Stream::Noise);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let affected = ((n as f64) * spec.affected_fraction).round() as usize;
    let mut mask = vec![false; n];
    for &i in &order[..affected.min(n)] {
        mask[i] = true;
    }
    let mut out = ds.clone();
    if spec.sigma > 0.0 {
        let normal = Normal::new(0.0, spec.sigma).expect("validated sigma");
        for v in spec.resolved_views(ds.view_count()) {
            let view = &mut out.views[v];
            for (i, mut row) in view.outer_iter_mut().enumerate() {
                if mask[i] {
                    row.mapv_inplace(|x| x + normal.sample(&mut rng));
                }
            }
        }
    }
    Ok((out, mask))
}

/// Parameters of the Gaussian-blob generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub views: usize,
    pub samples: usize,
    pub informative_views: Vec<usize>,
    pub feature_dim: usize,
    /// Distance between class means in informative views, in units of the
    /// blob standard deviation.
    pub separation: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(classes: usize, views: usize, samples: usize, seed: u64) -> Self {
        SynthConfig {
            classes,
            views,
            samples,
            informative_views: (0..views).collect(),
            feature_dim: 8,
            separation: 5.0,
            seed,
        }
    }
}

/// Class-conditional unit-variance Gaussian blobs. In informative views the
/// class means sit on scaled orthogonal axes, pairwise `separation` apart;
/// in the other views every class shares the same mean, so those views carry
/// no label information.
pub fn synthesize(config: &SynthConfig) -> Result<MultiViewDataset> {
    if config.classes < 2 || config.views == 0 || config.samples == 0 {
        return Err(TmcError::InvalidConfig(format!(
            "synthesize needs classes >= 2, views >= 1, samples >= 1 (got {}, {}, {})",
            config.classes, config.views, config.samples
        )));
    }
    if config.separation < 4.0 {
        return Err(TmcError::InvalidConfig(format!(
            "separation must be at least 4 blob deviations, got {}",
            config.separation
        )));
    }
    if let Some(&bad) = config.informative_views.iter().find(|&&v| v >= config.views) {
        return Err(TmcError::InvalidConfig(format!(
            "informative view {bad} out of range for {} views",
            config.views
        )));
    }
    let dim = config.feature_dim.max(config.classes);
    let offset = config.separation / std::f64::consts::SQRT_2;
    let labels: Vec<usize> = (0..config.samples).map(|i| i % config.classes).collect();
    let mut rng = rng_for(config.seed, Stream::Synth);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let views = (0..config.views)
        .map(|v| {
            let informative = config.informative_views.contains(&v);
            Array2::from_shape_fn((config.samples, dim), |(i, j)| {
                let mean = if informative && j == labels[i] { offset } else { 0.0 };
                mean + normal.sample(&mut rng)
            })
        })
        .collect();
    MultiViewDataset::new(
        format!("synthetic-k{}-v{}-n{}", config.classes, config.views, config.samples),
        views,
        labels,
        config.classes,
    )
}

/// Counts per label, used in reports.
pub fn label_histogram(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for &l in labels {
        *h.entry(l).or_insert(0) += 1;
    }
    h
}

/// File names of the six UCI "Multiple Features" views, in manifest order.
pub const MFEAT_VIEWS: [&str; 6] = [
    "mfeat-fou", "mfeat-fac", "mfeat-kar", "mfeat-pix", "mfeat-zer", "mfeat-mor",
];

fn read_whitespace_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let (mut rows, mut cols) = (0, None);
    for (line_no, line) in read_text(path)?.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if *cols.get_or_insert(fields.len()) != fields.len() {
            return Err(TmcError::parse(path, format!("line {} has {} columns", line_no + 1, fields.len())));
        }
        for f in fields {
            data.push(f.parse::<f64>().map_err(|_| {
                TmcError::parse(path, format!("line {}: not a number: {f:?}", line_no + 1))
            })?);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| TmcError::parse(path, "empty file"))?;
    Array2::from_shape_vec((rows, cols), data).map_err(|e| TmcError::parse(path, e.to_string()))
}

/// Reads the UCI handwritten-digit "Multiple Features" files from `dir`.
/// Rows are ordered by digit, 200 per class, so labels are `row / 200`.
pub fn import_mfeat(dir: impl AsRef<Path>) -> Result<MultiViewDataset> {
    let dir = dir.as_ref();
    let views = MFEAT_VIEWS
        .iter()
        .map(|name| read_whitespace_matrix(&dir.join(name)))
        .collect::<Result<Vec<_>>>()?;
    let n = views[0].nrows();
    if n % 10 != 0 {
        return Err(TmcError::InvalidDataset(format!(
            "expected 10 equally sized digit blocks, got {n} rows"
        )));
    }
    let labels = (0..n).map(|i| i / (n / 10)).collect();
    MultiViewDataset::new("handwritten", views, labels, 10)
}
