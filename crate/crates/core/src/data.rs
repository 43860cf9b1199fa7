//! Datasets: a seeded rotated/translated Gaussian domain pair, IDX files,
//! and pairing of source and target samples into mini-batches.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::random_orthogonal;
use crate::Matrix;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Samples as columns of a `features × samples` matrix, with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl LabeledSet {
    pub fn new(x: Matrix, y: Vec<usize>, classes: usize) -> Result<Self> {
        if x.cols() != y.len() {
            return Err(Error::invalid(format!("{} samples but {} labels", x.cols(), y.len())));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self { x, y, classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.rows()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_cols(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes,
        }
    }
}

/// One step's worth of paired data. `target_y` rides along for evaluation
/// and is never read by the training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBatch {
    pub source_x: Matrix,
    pub source_y: Vec<usize>,
    pub target_x: Matrix,
    pub target_y: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPairSpec {
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    /// Rotation of the target domain in the plane of the first two features.
    #[serde(default)]
    pub rotation_deg: f64,
    /// Target shift; empty means none, otherwise one entry per feature.
    #[serde(default)]
    pub translation: Vec<f64>,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    /// Distance between any two class means (vertices of a regular simplex).
    #[serde(default = "default_class_separation")]
    pub class_separation: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise_sigma() -> f64 {
    1.0
}

pub const DEFAULT_CLASS_SEPARATION: f64 = 4.0;

fn default_class_separation() -> f64 {
    DEFAULT_CLASS_SEPARATION
}

impl SyntheticPairSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("data.classes", "need at least 2 classes"));
        }
        if self.dim < 2 || self.dim < self.classes {
            return Err(Error::config("data.dim", "dim must be >= 2 and >= classes"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::config("data.samples_per_class", "must be >= 1"));
        }
        if !self.rotation_deg.is_finite() {
            return Err(Error::config("data.rotation_deg", "must be finite"));
        }
        if !self.translation.is_empty() && self.translation.len() != self.dim {
            return Err(Error::config("data.translation", format!("needs {} entries or none", self.dim)));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("data.translation", "entries must be finite"));
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::config("data.noise_sigma", "must be > 0"));
        }
        if !(self.class_separation >= 0.0) || !self.class_separation.is_finite() {
            return Err(Error::config("data.class_separation", "must be >= 0"));
        }
        Ok(())
    }

    /// Translation of the given Euclidean norm spread evenly over all features.
    pub fn even_translation(dim: usize, norm: f64) -> Vec<f64> {
        vec![norm / (dim as f64).sqrt(); dim]
    }
}

/// Source: class-conditional Gaussians around simplex vertices, covariance
/// `noise_sigma²·I`. Target: independent draws from the same distribution,
/// rotated in the first two features and then translated.
pub fn gen_synthetic_pair(spec: &SyntheticPairSpec) -> Result<(LabeledSet, LabeledSet)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let basis: Matrix = random_orthogonal(spec.dim, &mut rng);

    // first `classes` orthonormal directions, centered: a regular simplex
    // with edge √2, rescaled to the requested separation
    let k = spec.classes;
    let scale = spec.class_separation / 2f64.sqrt();
    let means: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            (0..spec.dim)
                .map(|d| {
                    let centroid = (0..k).map(|j| basis[(d, j)]).sum::<f64>() / k as f64;
                    (basis[(d, c)] - centroid) * scale
                })
                .collect()
        })
        .collect();

    let draw = |rng: &mut ChaCha8Rng| -> Result<LabeledSet> {
        let n = k * spec.samples_per_class;
        let mut x = Matrix::zeros(spec.dim, n);
        let mut y = Vec::with_capacity(n);
        for (c, mean) in means.iter().enumerate() {
            for i in 0..spec.samples_per_class {
                let col = c * spec.samples_per_class + i;
                for (d, &mu) in mean.iter().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    x[(d, col)] = mu + spec.noise_sigma * z;
                }
                y.push(c);
            }
        }
        LabeledSet::new(x, y, k)
    };

    let source = draw(&mut rng)?;
    let mut target = draw(&mut rng)?;
    let (sin, cos) = spec.rotation_deg.to_radians().sin_cos();
    for col in 0..target.len() {
        let (a, b) = (target.x[(0, col)], target.x[(1, col)]);
        target.x[(0, col)] = cos * a - sin * b;
        target.x[(1, col)] = sin * a + cos * b;
        for (d, &t) in spec.translation.iter().enumerate() {
            target.x[(d, col)] += t;
        }
    }
    Ok((source, target))
}

/// Shuffles each domain independently, then zips them into batches of
/// `batch_size / 2` source plus `batch_size / 2` target samples. The ragged
/// tail and any surplus of the longer domain are dropped.
pub fn make_domain_batches(
    source: &LabeledSet,
    target: &LabeledSet,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<DomainBatch>> {
    if !batch_size.is_multiple_of(2) {
        return Err(Error::config("train.batch_size", "batch_size must be even"));
    }
    if batch_size == 0 {
        return Err(Error::config("train.batch_size", "batch_size must be positive"));
    }
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("both domains need at least one sample"));
    }
    if source.dim() != target.dim() {
        return Err(Error::Shape { op: "make_domain_batches", left: source.x.shape(), right: target.x.shape() });
    }
    let half = batch_size / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut src: Vec<usize> = (0..source.len()).collect();
    src.shuffle(&mut rng);
    let mut tgt: Vec<usize> = (0..target.len()).collect();
    tgt.shuffle(&mut rng);

    let count = source.len().min(target.len()) / half;
    Ok((0..count)
        .map(|b| {
            let s = source.select(&src[b * half..(b + 1) * half]);
            let t = target.select(&tgt[b * half..(b + 1) * half]);
            DomainBatch { source_x: s.x, source_y: s.y, target_x: t.x, target_y: t.y }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxKind {
    Images,
    Labels,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    /// `(rows·cols) × count`, pixels scaled to `[0, 1]`.
    Images(Matrix),
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Decodes an in-memory IDX file.
pub fn parse_idx(bytes: &[u8], kind: IdxKind) -> Result<IdxData> {
    if bytes.len() < 4 {
        return Err(Error::Truncated { expected: 4, actual: bytes.len() });
    }
    let magic = be_u32(bytes, 0);
    let (want, ndims) = match kind {
        IdxKind::Images => (IDX_IMAGES_MAGIC, 3),
        IdxKind::Labels => (IDX_LABELS_MAGIC, 1),
    };
    if magic != want {
        return Err(Error::BadMagic { observed: bytes[..4].try_into().unwrap() });
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::Truncated { expected: header, actual: bytes.len() });
    }
    let dims: Vec<usize> = (0..ndims).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect();
    let payload: usize = dims.iter().product();
    if bytes.len() < header + payload {
        return Err(Error::Truncated { expected: header + payload, actual: bytes.len() });
    }
    let body = &bytes[header..header + payload];
    match kind {
        IdxKind::Labels => Ok(IdxData::Labels(body.to_vec())),
        IdxKind::Images => {
            let (count, pixels) = (dims[0], dims[1] * dims[2]);
            if count == 0 || pixels == 0 {
                return Err(Error::invalid("IDX image file holds no pixels"));
            }
            let x = Matrix::from_fn(pixels, count, |p, i| body[i * pixels + p] as f64 / 255.0);
            Ok(IdxData::Images(x))
        }
    }
}

pub fn read_idx(path: impl AsRef<Path>, kind: IdxKind) -> Result<IdxData> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_idx(&fs::read(path)?, kind)
}

/// IDX image bytes for `count` images of `rows × cols` pixels, image-major.
pub fn encode_idx_images(pixels: &[u8], count: usize, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if pixels.len() != count * rows * cols {
        return Err(Error::invalid(format!(
            "{} pixels for {count} images of {rows}x{cols}",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [count, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_images(path: impl AsRef<Path>, pixels: &[u8], count: usize, rows: usize, cols: usize) -> Result<()> {
    fs::write(path, encode_idx_images(pixels, count, rows, cols)?)?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    fs::write(path, encode_idx_labels(labels))?;
    Ok(())
}

/// Smallest and largest entry over several matrices.
pub fn value_range(parts: &[&Matrix]) -> (f64, f64) {
    parts
        .iter()
        .flat_map(|m| m.data().iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Linear quantization of `[lo, hi]` to bytes, sample-major, so the matrix
/// can be stored as `count` images of `1 × features`. Share one range
/// across domains to keep their relative offset.
pub fn quantize_features(x: &Matrix, (lo, hi): (f64, f64)) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = Vec::with_capacity(x.rows() * x.cols());
    for c in 0..x.cols() {
        for r in 0..x.rows() {
            out.push(((x[(r, c)] - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Loads an image file and its label file into a labeled set.
pub fn load_idx_set(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledSet> {
    let IdxData::Images(x) = read_idx(images, IdxKind::Images)? else { unreachable!() };
    let IdxData::Labels(y) = read_idx(labels, IdxKind::Labels)? else { unreachable!() };
    let y: Vec<usize> = y.into_iter().map(usize::from).collect();
    let classes = y.iter().max().map_or(0, |&m| m + 1).max(2);
    LabeledSet::new(x, y, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticPairSpec {
        SyntheticPairSpec {
            classes: 3,
            dim: 4,
            samples_per_class: 10,
            rotation_deg: 30.0,
            translation: vec![1.0, 0.0, -1.0, 0.5],
            noise_sigma: 0.5,
            class_separation: 4.0,
            seed: 5,
        }
    }

    #[test]
    fn synthetic_pair_is_deterministic() {
        let a = gen_synthetic_pair(&spec()).unwrap();
        let b = gen_synthetic_pair(&spec()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 30);
        assert_eq!(a.1.dim(), 4);
        let c = gen_synthetic_pair(&SyntheticPairSpec { seed: 6, ..spec() }).unwrap();
        assert_ne!(a.0.x, c.0.x);
    }

    #[test]
    fn synthetic_spec_validation() {
        assert!(gen_synthetic_pair(&SyntheticPairSpec { noise_sigma: 0.0, ..spec() }).is_err());
        assert!(gen_synthetic_pair(&SyntheticPairSpec { translation: vec![1.0], ..spec() }).is_err());
        assert!(gen_synthetic_pair(&SyntheticPairSpec { classes: 5, ..spec() }).is_err());
    }

    #[test]
    fn class_means_sit_at_requested_separation() {
        let s = SyntheticPairSpec { samples_per_class: 4000, noise_sigma: 0.1, ..spec() };
        let (src, _) = gen_synthetic_pair(&s).unwrap();
        let mean = |c: usize| -> Vec<f64> {
            let idx: Vec<usize> = (0..src.len()).filter(|&i| src.y[i] == c).collect();
            src.select(&idx).x.row_means().into_vec()
        };
        let (m0, m1) = (mean(0), mean(1));
        let d: f64 = m0.iter().zip(&m1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!((d - 4.0).abs() < 0.02, "{d}");
    }

    #[test]
    fn batches_arithmetic_and_determinism() {
        let set = |n: usize| LabeledSet::new(Matrix::from_fn(2, n, |r, c| (r * 100 + c) as f64), vec![0; n], 2).unwrap();
        let b = make_domain_batches(&set(10), &set(10), 4, 1).unwrap();
        assert_eq!(b.len(), 5);
        assert!(b.iter().all(|b| b.source_x.cols() == 2 && b.target_x.cols() == 2));
        assert_eq!(make_domain_batches(&set(10), &set(6), 4, 1).unwrap().len(), 3);
        assert_eq!(b, make_domain_batches(&set(10), &set(10), 4, 1).unwrap());

        // each sample at most once per domain
        let mut seen: Vec<f64> = b.iter().flat_map(|b| b.source_x.row(0).to_vec()).collect();
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        assert_eq!(seen.len(), 10);

        let err = make_domain_batches(&set(10), &set(10), 5, 1).unwrap_err();
        assert!(err.to_string().contains("batch_size must be even"));
    }

    #[test]
    fn idx_images_and_labels() {
        let bytes = encode_idx_images(&[0, 255, 0, 255, 255, 0, 255, 0], 2, 2, 2).unwrap();
        let IdxData::Images(x) = parse_idx(&bytes, IdxKind::Images).unwrap() else { panic!() };
        assert_eq!(x.shape(), (4, 2));
        assert_eq!(x.col(0), vec![0.0, 1.0, 0.0, 1.0]);
        assert!(x.data().iter().all(|&v| v == 0.0 || v == 1.0));

        let bytes = encode_idx_labels(&[3, 7]);
        assert_eq!(parse_idx(&bytes, IdxKind::Labels).unwrap(), IdxData::Labels(vec![3, 7]));
    }

    #[test]
    fn idx_errors() {
        let err = parse_idx(&[0, 0, 0, 0, 0, 0, 0, 1, 9], IdxKind::Labels).unwrap_err();
        assert!(err.to_string().starts_with("bad magic"), "{err}");
        let mut bytes = encode_idx_labels(&[1, 2, 3]);
        bytes.pop();
        assert!(matches!(
            parse_idx(&bytes, IdxKind::Labels),
            Err(Error::Truncated { expected: 11, actual: 10 })
        ));
        // a label file is not an image file
        assert!(matches!(parse_idx(&encode_idx_labels(&[1]), IdxKind::Images), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn quantized_features_span_byte_range() {
        let x = Matrix::from_rows(&[[-1.0, 3.0], [1.0, 0.0]]);
        assert_eq!(value_range(&[&x]), (-1.0, 3.0));
        assert_eq!(quantize_features(&x, (-1.0, 3.0)), vec![0, 128, 255, 64]);
        assert_eq!(quantize_features(&x, (0.0, 1.0)), vec![0, 255, 255, 0]);
    }
}
