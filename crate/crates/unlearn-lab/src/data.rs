//! Dataset plumbing: synthetic Gaussian-blob classification sets, per-row
//! forget/retain/test partitions, and IDX image/label file I/O.

use std::io::{Read as _, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;

/// Per-row partition tag.
///
/// Freshly generated training rows are tagged [`RowTag::Retain`] until
/// [`split_forget`] moves a subset to [`RowTag::Forget`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowTag {
    Forget,
    Retain,
    Test,
}

/// A labeled dataset with a per-row forget/retain/test partition.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    /// Feature matrix `(n_samples, dim)`.
    pub features: Tensor,
    /// Integer class labels, one per row, each `< num_classes`.
    pub labels: Vec<usize>,
    /// Partition tag per row.
    pub tags: Vec<RowTag>,
    pub num_classes: usize,
}

impl DatasetSplit {
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        tags: Vec<RowTag>,
        num_classes: usize,
    ) -> Result<DatasetSplit> {
        let n = features.rows();
        if labels.len() != n || tags.len() != n {
            return Err(Error::Dimension(format!(
                "{} rows but {} labels and {} tags",
                n,
                labels.len(),
                tags.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(DatasetSplit { features, labels, tags, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Row indices carrying the given tag, in row order.
    pub fn indices(&self, tag: RowTag) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| (t == tag).then_some(i))
            .collect()
    }

    /// Training rows: forget and retain rows, in row order.
    pub fn train_indices(&self) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| (t != RowTag::Test).then_some(i))
            .collect()
    }

    /// Materialize features and labels for the given row indices.
    pub fn gather(&self, idxs: &[usize]) -> (Tensor, Vec<usize>) {
        let x = self.features.gather_rows(idxs);
        let y = idxs.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }

    /// Materialize the subset carrying the given tag.
    pub fn subset(&self, tag: RowTag) -> (Tensor, Vec<usize>) {
        self.gather(&self.indices(tag))
    }

    pub fn count(&self, tag: RowTag) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }
}

/// Specification of a Gaussian-blob classification problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// Training samples per class; the test set adds `ceil(0.2 * n)` more
    /// per class.
    pub n_per_class: usize,
    /// Class centers, flattened row-major `(num_classes, dim)`. May be
    /// left empty when `center_spread` is set, in which case
    /// [`gen_blobs`] draws them from the dataset seed.
    #[serde(default)]
    pub centers: Vec<f64>,
    /// Isotropic per-coordinate standard deviation around each center.
    pub cluster_stddev: f64,
    /// Half-width of the uniform box random centers are drawn from when
    /// `centers` is empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_spread: Option<f64>,
}

impl BlobSpec {
    /// Spec with centers drawn uniformly from `[-spread, spread]^dim`.
    pub fn with_random_centers(
        num_classes: usize,
        dim: usize,
        n_per_class: usize,
        cluster_stddev: f64,
        spread: f64,
        seed: u64,
    ) -> BlobSpec {
        let mut rng = SplitMix64::new(derive_seed(seed, "blob-centers"));
        let centers = (0..num_classes * dim).map(|_| rng.uniform(-spread, spread)).collect();
        BlobSpec { num_classes, dim, n_per_class, centers, cluster_stddev, center_spread: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.dim == 0 || self.n_per_class == 0 {
            return Err(Error::Config("dim and n_per_class must be positive".into()));
        }
        if self.centers.is_empty() {
            match self.center_spread {
                Some(s) if s.is_finite() && s > 0.0 => {}
                Some(s) => {
                    return Err(Error::Config(format!(
                        "center_spread must be positive, got {s}"
                    )))
                }
                None => {
                    return Err(Error::Config(
                        "either centers or center_spread must be given".into(),
                    ))
                }
            }
        } else if self.centers.len() != self.num_classes * self.dim {
            return Err(Error::Dimension(format!(
                "{} center coordinates for {} classes of dim {}",
                self.centers.len(),
                self.num_classes,
                self.dim
            )));
        }
        if !(self.cluster_stddev.is_finite() && self.cluster_stddev > 0.0) {
            return Err(Error::Config(format!(
                "cluster_stddev must be positive, got {}",
                self.cluster_stddev
            )));
        }
        if !self.centers.is_empty() {
            for a in 0..self.num_classes {
                for b in a + 1..self.num_classes {
                    let ca = &self.centers[a * self.dim..(a + 1) * self.dim];
                    let cb = &self.centers[b * self.dim..(b + 1) * self.dim];
                    if ca == cb {
                        return Err(Error::Config(format!("classes {a} and {b} share a center")));
                    }
                }
            }
        }
        Ok(())
    }

    fn n_test_per_class(&self) -> usize {
        // ceil(0.2 * n_per_class)
        self.n_per_class.div_ceil(5)
    }
}

/// Generate a blob dataset: per class, `n_per_class` training rows followed
/// (after all training rows) by `ceil(0.2 * n_per_class)` test rows, each
/// drawn i.i.d. from an isotropic Gaussian around the class center.
///
/// Row order is deterministic: training rows class-major first, then test
/// rows class-major. Training rows start tagged [`RowTag::Retain`]; use
/// [`split_forget`] to designate a forget subset.
pub fn gen_blobs(spec: &BlobSpec, seed: u64) -> Result<DatasetSplit> {
    spec.validate()?;
    let resolved;
    let spec = if spec.centers.is_empty() {
        // validate() guarantees center_spread is a positive finite value.
        let spread = spec.center_spread.expect("validated spread");
        let mut rng = SplitMix64::new(derive_seed(seed, "blob-centers"));
        let centers =
            (0..spec.num_classes * spec.dim).map(|_| rng.uniform(-spread, spread)).collect();
        resolved = BlobSpec { centers, ..spec.clone() };
        &resolved
    } else {
        spec
    };
    let mut rng = SplitMix64::new(derive_seed(seed, "blob-samples"));
    let n_train = spec.num_classes * spec.n_per_class;
    let n_test = spec.num_classes * spec.n_test_per_class();
    let mut features = Vec::with_capacity((n_train + n_test) * spec.dim);
    let mut labels = Vec::with_capacity(n_train + n_test);
    let mut tags = Vec::with_capacity(n_train + n_test);
    for (count, tag) in [(spec.n_per_class, RowTag::Retain), (spec.n_test_per_class(), RowTag::Test)]
    {
        for class in 0..spec.num_classes {
            let center = &spec.centers[class * spec.dim..(class + 1) * spec.dim];
            for _ in 0..count {
                for &c in center {
                    features.push(c + spec.cluster_stddev * rng.next_gaussian());
                }
                labels.push(class);
                tags.push(tag);
            }
        }
    }
    let features = Tensor::from_vec(&[n_train + n_test, spec.dim], features)?;
    DatasetSplit::new(features, labels, tags, spec.num_classes)
}

/// Re-partition the training rows: a uniformly random subset of
/// `floor(fraction * n_train)` rows becomes the forget set, the rest the
/// retain set. Test rows are untouched. Distinct `trial_seed`s give
/// independent subsets.
pub fn split_forget(data: &DatasetSplit, fraction: f64, trial_seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("forget fraction must lie in (0, 1), got {fraction}")));
    }
    let mut train = data.train_indices();
    let n_forget = (fraction * train.len() as f64).floor() as usize;
    if n_forget == 0 {
        return Err(Error::Config(format!(
            "forget fraction {fraction} of {} training rows selects no rows",
            train.len()
        )));
    }
    let mut rng = SplitMix64::new(derive_seed(trial_seed, "forget-split"));
    rng.shuffle(&mut train);
    let mut out = data.clone();
    for &i in &train {
        out.tags[i] = RowTag::Retain;
    }
    for &i in &train[..n_forget] {
        out.tags[i] = RowTag::Forget;
    }
    Ok(out)
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803; // 2051
const IDX_LABEL_MAGIC: u32 = 0x0000_0801; // 2049

fn read_be_u32(bytes: &[u8], off: usize, what: &str) -> Result<u32> {
    if bytes.len() < off + 4 {
        return Err(Error::Format(format!(
            "truncated {what}: expected at least {} bytes, found {}",
            off + 4,
            bytes.len()
        )));
    }
    Ok(u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap()))
}

/// Load an IDX image file (magic 2051, big-endian header) into a
/// `(count, rows*cols)` feature tensor with pixels scaled to `[0, 1]`
/// by division by 255.
pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let magic = read_be_u32(&bytes, 0, "image file header")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "bad magic at offset 0: expected {IDX_IMAGE_MAGIC} (images), found {magic}"
        )));
    }
    let n = read_be_u32(&bytes, 4, "image file header")? as usize;
    let rows = read_be_u32(&bytes, 8, "image file header")? as usize;
    let cols = read_be_u32(&bytes, 12, "image file header")? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "image payload length mismatch: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let data = bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_vec(&[n, rows * cols], data)
}

/// Load an IDX label file (magic 2049, big-endian header).
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let magic = read_be_u32(&bytes, 0, "label file header")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "bad magic at offset 0: expected {IDX_LABEL_MAGIC} (labels), found {magic}"
        )));
    }
    let n = read_be_u32(&bytes, 4, "label file header")? as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "label payload length mismatch: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    Ok(bytes[8..].to_vec())
}

/// Load a train/test IDX quadruple into one tagged dataset. Training rows
/// are tagged [`RowTag::Retain`] (pre-split), test rows [`RowTag::Test`].
pub fn load_idx(
    train_images: &Path,
    train_labels: &Path,
    test_images: &Path,
    test_labels: &Path,
) -> Result<DatasetSplit> {
    let xtr = load_idx_images(train_images)?;
    let ytr = load_idx_labels(train_labels)?;
    if xtr.rows() != ytr.len() {
        return Err(Error::Consistency(format!(
            "train images hold {} samples but labels hold {}",
            xtr.rows(),
            ytr.len()
        )));
    }
    let xte = load_idx_images(test_images)?;
    let yte = load_idx_labels(test_labels)?;
    if xte.rows() != yte.len() {
        return Err(Error::Consistency(format!(
            "test images hold {} samples but labels hold {}",
            xte.rows(),
            yte.len()
        )));
    }
    if xtr.cols() != xte.cols() {
        return Err(Error::Consistency(format!(
            "train images have {} pixels per sample, test images {}",
            xtr.cols(),
            xte.cols()
        )));
    }
    let n_train = xtr.rows();
    let mut features = xtr.into_vec();
    features.extend_from_slice(xte.data());
    let n_total = n_train + xte.rows();
    let dim = xte.cols();
    let mut labels: Vec<usize> = ytr.iter().map(|&y| y as usize).collect();
    labels.extend(yte.iter().map(|&y| y as usize));
    let mut tags = vec![RowTag::Retain; n_train];
    tags.extend(vec![RowTag::Test; n_total - n_train]);
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    DatasetSplit::new(Tensor::from_vec(&[n_total, dim], features)?, labels, tags, num_classes)
}

/// Write an IDX image file from raw `u8` pixels (row-major per image).
pub fn write_idx_images(path: &Path, n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != n * rows * cols {
        return Err(Error::Dimension(format!(
            "{} pixels for {n} images of {rows}x{cols}",
            pixels.len()
        )));
    }
    let mut buf = Vec::with_capacity(16 + pixels.len());
    buf.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(n as u32).to_be_bytes());
    buf.extend_from_slice(&(rows as u32).to_be_bytes());
    buf.extend_from_slice(&(cols as u32).to_be_bytes());
    buf.extend_from_slice(pixels);
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Write an IDX label file.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    buf.extend_from_slice(labels);
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Provenance record for a generated or loaded dataset, written alongside
/// run outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source: String,
    pub seed: u64,
    pub n_forget: usize,
    pub n_retain: usize,
    pub n_test: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub forget_fraction: Option<f64>,
}

impl DatasetManifest {
    pub fn describe(data: &DatasetSplit, source: &str, seed: u64, fraction: Option<f64>) -> Self {
        DatasetManifest {
            source: source.to_string(),
            seed,
            n_forget: data.count(RowTag::Forget),
            n_retain: data.count(RowTag::Retain),
            n_test: data.count(RowTag::Test),
            num_classes: data.num_classes,
            dim: data.dim(),
            forget_fraction: fraction,
        }
    }
}
