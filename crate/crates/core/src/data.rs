//! Long-tailed synthetic datasets, augmentation views and CSV persistence.
//!
//! Per-class counts follow an exponential profile
//! `N_c = floor(n_max * gamma^(-c / (C - 1)))`, so class 0 is the head and
//! class `C - 1` the tail. Features are drawn from a per-class isotropic
//! Gaussian. Unlabeled examples carry their ground-truth class in a private
//! field; training code only ever sees [`UnlabeledInput`], which has no label.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::HiddenLabels;
use crate::rng::{self, streams, Rng};

/// Shape of the labeled class histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabeledShape {
    LongTailed,
    Arbitrary,
}

/// Shape of the unlabeled class histogram relative to the long-tailed profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlabeledShape {
    Consistent,
    Inverse,
    Uniform,
    Arbitrary,
}

impl UnlabeledShape {
    pub fn name(self) -> &'static str {
        match self {
            UnlabeledShape::Consistent => "consistent",
            UnlabeledShape::Inverse => "inverse",
            UnlabeledShape::Uniform => "uniform",
            UnlabeledShape::Arbitrary => "arbitrary",
        }
    }
}

/// Per-class Gaussian means and the shared isotropic standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub means: Vec<Vec<f64>>,
    pub scale: f64,
}

impl MixtureParams {
    /// Means evenly spaced on a circle of `radius` in the first two
    /// coordinates; remaining coordinates are pure noise.
    pub fn circle(num_classes: usize, feature_dim: usize, radius: f64, scale: f64) -> Self {
        let means = (0..num_classes)
            .map(|c| {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
                let mut mean = vec![0.0; feature_dim];
                mean[0] = radius * angle.cos();
                if feature_dim > 1 {
                    mean[1] = radius * angle.sin();
                }
                mean
            })
            .collect();
        MixtureParams { means, scale }
    }
}

pub const DEFAULT_MIXTURE_RADIUS: f64 = 3.0;
pub const DEFAULT_MIXTURE_SCALE: f64 = 1.0;

fn default_test_per_class() -> usize {
    200
}

/// Everything needed to regenerate a split bundle bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub n_max: usize,
    pub m_max: usize,
    pub gamma_l: f64,
    pub gamma_u: f64,
    pub labeled_shape: LabeledShape,
    pub unlabeled_shape: UnlabeledShape,
    pub feature_dim: usize,
    /// `None` resolves to [`MixtureParams::circle`] with the default radius and scale.
    #[serde(default)]
    pub mixture: Option<MixtureParams>,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSpec {
    /// The desk-scale suite: 5 classes, 16 features, gamma 10 on both splits.
    pub fn desk_scale(unlabeled_shape: UnlabeledShape, seed: u64) -> Self {
        DatasetSpec {
            num_classes: 5,
            n_max: 100,
            m_max: 900,
            gamma_l: 10.0,
            gamma_u: 10.0,
            labeled_shape: LabeledShape::LongTailed,
            unlabeled_shape,
            feature_dim: 16,
            mixture: None,
            test_per_class: default_test_per_class(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.feature_dim < 1 {
            return bad("feature_dim must be >= 1".into());
        }
        if self.test_per_class < 1 {
            return bad("test_per_class must be >= 1".into());
        }
        check_profile("labeled", self.n_max, self.gamma_l)?;
        check_profile("unlabeled", self.m_max, self.gamma_u)?;
        if let Some(mix) = &self.mixture {
            if mix.means.len() != self.num_classes {
                return bad(format!(
                    "mixture has {} means for {} classes",
                    mix.means.len(),
                    self.num_classes
                ));
            }
            if mix.means.iter().any(|m| m.len() != self.feature_dim) {
                return bad("mixture mean length differs from feature_dim".into());
            }
            if !(mix.scale.is_finite() && mix.scale >= 0.0) {
                return bad("mixture scale must be finite and >= 0".into());
            }
        }
        Ok(())
    }

    /// The mixture actually used for generation.
    pub fn resolved_mixture(&self) -> MixtureParams {
        self.mixture.clone().unwrap_or_else(|| {
            MixtureParams::circle(
                self.num_classes,
                self.feature_dim,
                DEFAULT_MIXTURE_RADIUS,
                DEFAULT_MIXTURE_SCALE,
            )
        })
    }

    pub fn labeled_counts(&self) -> Result<Vec<usize>> {
        let base = long_tailed_counts(self.n_max, self.gamma_l, self.num_classes)?;
        Ok(match self.labeled_shape {
            LabeledShape::LongTailed => base,
            LabeledShape::Arbitrary => {
                let mut counts = base;
                counts.shuffle(&mut rng::stream(self.seed, streams::LABELED_SHAPE));
                counts
            }
        })
    }

    pub fn unlabeled_counts(&self) -> Result<Vec<usize>> {
        let base = long_tailed_counts(self.m_max, self.gamma_u, self.num_classes)?;
        shape_counts(&base, self.unlabeled_shape, self.seed)
    }
}

fn check_profile(which: &str, max: usize, gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma >= 1.0) {
        return Err(Error::InvalidSpec(format!(
            "{which} imbalance ratio must be >= 1, got {gamma}"
        )));
    }
    if max == 0 || (max as f64) < gamma {
        return Err(Error::InvalidSpec(format!(
            "{which} head count {max} is smaller than imbalance ratio {gamma}; tail class would be empty"
        )));
    }
    Ok(())
}

/// Exponential long-tailed profile with `counts[0] = n_max`.
pub fn long_tailed_counts(n_max: usize, gamma: f64, num_classes: usize) -> Result<Vec<usize>> {
    check_profile("profile", n_max, gamma)?;
    if num_classes == 0 {
        return Err(Error::InvalidSpec("num_classes must be positive".into()));
    }
    if num_classes == 1 {
        return Ok(vec![n_max]);
    }
    let last = (num_classes - 1) as f64;
    Ok((0..num_classes)
        .map(|c| {
            let exact = n_max as f64 * gamma.powf(-(c as f64) / last);
            // powf can land a hair below an exact integer (e.g. 100 * 10^-1)
            let count = (exact + 1e-9).floor() as usize;
            count.max(1)
        })
        .collect())
}

/// Reshape a long-tailed count profile into the requested unlabeled shape.
pub fn shape_counts(base: &[usize], shape: UnlabeledShape, seed: u64) -> Result<Vec<usize>> {
    if base.is_empty() || base.contains(&0) {
        return Err(Error::InvalidInput(
            "count vector must be non-empty with positive entries".into(),
        ));
    }
    Ok(match shape {
        UnlabeledShape::Consistent => base.to_vec(),
        UnlabeledShape::Inverse => base.iter().rev().copied().collect(),
        UnlabeledShape::Uniform => {
            let mean = base.iter().sum::<usize>() as f64 / base.len() as f64;
            vec![(mean.round() as usize).max(1); base.len()]
        }
        UnlabeledShape::Arbitrary => {
            let mut counts = base.to_vec();
            counts.shuffle(&mut rng::stream(seed, streams::UNLABELED_SHAPE));
            counts
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
}

/// An unlabeled example together with its ground-truth class.
///
/// The class is private: it can only leave this type as part of a
/// [`HiddenLabels`] table, which nothing outside the metrics module can read.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledExample {
    pub id: u64,
    pub features: Vec<f64>,
    hidden_label: usize,
}

/// The projection of an unlabeled example that training code receives.
///
/// There is no way to recover the ground-truth class from this type:
///
/// ```compile_fail
/// let u = cpg::data::UnlabeledInput { id: 0, features: vec![0.0] };
/// let _ = u.hidden_label;
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledInput {
    pub id: u64,
    pub features: Vec<f64>,
}

impl UnlabeledExample {
    pub fn new(id: u64, features: Vec<f64>, hidden_label: usize) -> Self {
        UnlabeledExample {
            id,
            features,
            hidden_label,
        }
    }

    pub fn input(&self) -> UnlabeledInput {
        UnlabeledInput {
            id: self.id,
            features: self.features.clone(),
        }
    }
}

/// Ground truth of an unlabeled set, sealed for evaluation use.
pub fn hidden_labels(unlabeled: &[UnlabeledExample], num_classes: usize) -> HiddenLabels {
    HiddenLabels::new(
        unlabeled.iter().map(|u| (u.id, u.hidden_label)).collect(),
        num_classes,
    )
}

/// Labeled, unlabeled and test splits generated from one spec.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub spec: DatasetSpec,
    pub labeled: Vec<LabeledExample>,
    pub unlabeled: Vec<UnlabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl SplitBundle {
    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    pub fn unlabeled_inputs(&self) -> Vec<UnlabeledInput> {
        self.unlabeled.iter().map(UnlabeledExample::input).collect()
    }

    pub fn hidden_labels(&self) -> HiddenLabels {
        hidden_labels(&self.unlabeled, self.spec.num_classes)
    }

    /// Mean over coordinates of the per-feature standard deviation of the
    /// labeled and unlabeled features.
    pub fn mean_feature_std(&self) -> f64 {
        let rows: Vec<&[f64]> = self
            .labeled
            .iter()
            .map(|e| e.features.as_slice())
            .chain(self.unlabeled.iter().map(|e| e.features.as_slice()))
            .collect();
        mean_feature_std(&rows)
    }

    /// Writes `labeled.csv`, `unlabeled.csv`, `test.csv` and `split.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let d = self.feature_dim();
        write_csv(
            &dir.join("labeled.csv"),
            d,
            self.labeled.iter().map(|e| (&e.features[..], e.label)),
        )?;
        write_csv(
            &dir.join("unlabeled.csv"),
            d,
            self.unlabeled.iter().map(|e| (&e.features[..], e.hidden_label)),
        )?;
        write_csv(
            &dir.join("test.csv"),
            d,
            self.test.iter().map(|e| (&e.features[..], e.label)),
        )?;
        let sidecar = SplitSidecar {
            spec: self.spec.clone(),
            seed: self.spec.seed,
            mixture: self.spec.resolved_mixture(),
        };
        let path = dir.join("split.json");
        let json = serde_json::to_string_pretty(&sidecar)?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    /// Reads a directory written by [`SplitBundle::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("split.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: SplitSidecar = serde_json::from_str(&text)?;
        let c = sidecar.spec.num_classes;
        let labeled = load_labeled(&dir.join("labeled.csv"), c, 0)?;
        let unlabeled = load_unlabeled(&dir.join("unlabeled.csv"), c, labeled.len() as u64)?;
        let test = load_labeled(
            &dir.join("test.csv"),
            c,
            (labeled.len() + unlabeled.len()) as u64,
        )?;
        Ok(SplitBundle {
            spec: sidecar.spec,
            labeled,
            unlabeled,
            test,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitSidecar {
    spec: DatasetSpec,
    seed: u64,
    mixture: MixtureParams,
}

pub(crate) fn mean_feature_std(rows: &[&[f64]]) -> f64 {
    if rows.len() < 2 {
        return 0.0;
    }
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut total = 0.0;
    for k in 0..d {
        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        total += var.sqrt();
    }
    total / d as f64
}

/// Deterministic generation of all three splits.
///
/// Labeled ids come first, then unlabeled, then test; ids are consecutive.
pub fn generate_splits(spec: &DatasetSpec) -> Result<SplitBundle> {
    spec.validate()?;
    let mixture = spec.resolved_mixture();
    let labeled_counts = spec.labeled_counts()?;
    let unlabeled_counts = spec.unlabeled_counts()?;
    let mut rng = rng::stream(spec.seed, streams::FEATURES);
    let mut next_id = 0u64;

    let draw = |class: usize, rng: &mut Rng| -> Vec<f64> {
        mixture.means[class]
            .iter()
            .map(|&mu| {
                let z: f64 = StandardNormal.sample(rng);
                mu + mixture.scale * z
            })
            .collect()
    };

    let mut labeled = Vec::new();
    for (class, &count) in labeled_counts.iter().enumerate() {
        for _ in 0..count {
            labeled.push(LabeledExample {
                id: next_id,
                features: draw(class, &mut rng),
                label: class,
            });
            next_id += 1;
        }
    }
    let mut unlabeled = Vec::new();
    for (class, &count) in unlabeled_counts.iter().enumerate() {
        for _ in 0..count {
            unlabeled.push(UnlabeledExample::new(next_id, draw(class, &mut rng), class));
            next_id += 1;
        }
    }
    let mut test = Vec::new();
    for class in 0..spec.num_classes {
        for _ in 0..spec.test_per_class {
            test.push(LabeledExample {
                id: next_id,
                features: draw(class, &mut rng),
                label: class,
            });
            next_id += 1;
        }
    }
    Ok(SplitBundle {
        spec: spec.clone(),
        labeled,
        unlabeled,
        test,
    })
}

/// Noise levels of the weak and strong augmentation views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub weak_noise_sigma: f64,
    pub strong_noise_sigma: f64,
    pub strong_mask_rate: f64,
}

impl AugmentationPolicy {
    pub const WEAK_FACTOR: f64 = 0.05;
    pub const STRONG_FACTOR: f64 = 0.15;
    pub const MASK_RATE: f64 = 0.3;

    /// Default policy for data whose features have typical std `feature_std`.
    pub fn relative_to(feature_std: f64) -> Self {
        AugmentationPolicy {
            weak_noise_sigma: Self::WEAK_FACTOR * feature_std,
            strong_noise_sigma: Self::STRONG_FACTOR * feature_std,
            strong_mask_rate: Self::MASK_RATE,
        }
    }

    /// No perturbation at all: both views equal the input.
    pub fn identity() -> Self {
        AugmentationPolicy {
            weak_noise_sigma: 0.0,
            strong_noise_sigma: 0.0,
            strong_mask_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.weak_noise_sigma.is_finite()
            && self.weak_noise_sigma >= 0.0
            && self.strong_noise_sigma.is_finite()
            && self.strong_noise_sigma >= self.weak_noise_sigma
            && (0.0..=1.0).contains(&self.strong_mask_rate);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "augmentation policy requires 0 <= weak sigma <= strong sigma and mask rate in [0, 1], got {self:?}"
            )))
        }
    }
}

/// `x` plus i.i.d. Gaussian noise of std `weak_noise_sigma`.
pub fn weak_view(x: &[f64], policy: &AugmentationPolicy, rng: &mut Rng) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            v + policy.weak_noise_sigma * z
        })
        .collect()
}

/// `x` plus Gaussian noise of std `strong_noise_sigma`, then
/// `round(strong_mask_rate * d)` coordinates chosen uniformly are zeroed.
pub fn strong_view(x: &[f64], policy: &AugmentationPolicy, rng: &mut Rng) -> Vec<f64> {
    let mut out: Vec<f64> = x
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            v + policy.strong_noise_sigma * z
        })
        .collect();
    let masked = (policy.strong_mask_rate * x.len() as f64).round() as usize;
    if masked > 0 {
        for k in rand::seq::index::sample(rng, x.len(), masked.min(x.len())) {
            out[k] = 0.0;
        }
    }
    out
}

/// Which split a CSV file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Labeled,
    Unlabeled,
    Test,
}

/// Parsed CSV contents.
#[derive(Debug, Clone, PartialEq)]
pub enum Examples {
    Labeled(Vec<LabeledExample>),
    Unlabeled(Vec<UnlabeledExample>),
}

/// Reads a `f0,...,f{d-1},label` file; ids are assigned 0, 1, ... in file order.
pub fn load_csv(path: &Path, role: Role, num_classes: usize) -> Result<Examples> {
    Ok(match role {
        Role::Labeled | Role::Test => Examples::Labeled(load_labeled(path, num_classes, 0)?),
        Role::Unlabeled => Examples::Unlabeled(load_unlabeled(path, num_classes, 0)?),
    })
}

fn load_labeled(path: &Path, num_classes: usize, first_id: u64) -> Result<Vec<LabeledExample>> {
    Ok(read_rows(path, num_classes)?
        .into_iter()
        .enumerate()
        .map(|(i, (features, label))| LabeledExample {
            id: first_id + i as u64,
            features,
            label,
        })
        .collect())
}

fn load_unlabeled(
    path: &Path,
    num_classes: usize,
    first_id: u64,
) -> Result<Vec<UnlabeledExample>> {
    Ok(read_rows(path, num_classes)?
        .into_iter()
        .enumerate()
        .map(|(i, (features, label))| UnlabeledExample::new(first_id + i as u64, features, label))
        .collect())
}

fn read_rows(path: &Path, num_classes: usize) -> Result<Vec<(Vec<f64>, usize)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let csv_err = |row: usize, message: String| Error::Csv {
        path: PathBuf::from(path),
        row,
        message,
    };
    let header = reader
        .headers()
        .map_err(|e| csv_err(0, e.to_string()))?
        .clone();
    if header.len() < 2 || header.get(header.len() - 1) != Some("label") {
        return Err(csv_err(
            0,
            "header must list feature columns followed by `label`".into(),
        ));
    }
    let width = header.len();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // row numbers are 1-based data rows; the header is row 0
        let row = i + 1;
        let record = record.map_err(|e| csv_err(row, e.to_string()))?;
        if record.len() != width {
            return Err(csv_err(
                row,
                format!("expected {width} columns, found {}", record.len()),
            ));
        }
        let mut features = Vec::with_capacity(width - 1);
        for (k, field) in record.iter().take(width - 1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                csv_err(row, format!("non-numeric value {field:?} in column f{k}"))
            })?;
            if !v.is_finite() {
                return Err(csv_err(row, format!("non-finite value in column f{k}")));
            }
            features.push(v);
        }
        let raw = record.get(width - 1).unwrap_or_default().trim();
        let label: usize = raw
            .parse()
            .map_err(|_| csv_err(row, format!("invalid label {raw:?}")))?;
        if label >= num_classes {
            return Err(csv_err(
                row,
                format!("label {label} outside [0, {num_classes})"),
            ));
        }
        rows.push((features, label));
    }
    Ok(rows)
}

fn write_csv<'a>(
    path: &Path,
    dim: usize,
    rows: impl Iterator<Item = (&'a [f64], usize)>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    let mut header: Vec<String> = (0..dim).map(|k| format!("f{k}")).collect();
    header.push("label".into());
    writer
        .write_record(&header)
        .map_err(|e| Error::Serde(e.to_string()))?;
    for (features, label) in rows {
        let mut record: Vec<String> = features.iter().map(|v| v.to_string()).collect();
        record.push(label.to_string());
        writer
            .write_record(&record)
            .map_err(|e| Error::Serde(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Uniform index in `[0, n)`.
pub(crate) fn draw_index(rng: &mut Rng, n: usize) -> usize {
    rng.random_range(0..n)
}
