//! Feature-redundancy instruments: spectrum uniformity, mean pairwise
//! channel similarity, and the proxy A-distance from a linear domain probe.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::normalization::sample_covariance;
use crate::tensor::{sym_eig, Mat};
use crate::{Matrix, Scalar};

pub const PROBE_STEPS: usize = 500;
pub const PROBE_LEARNING_RATE: f64 = 0.1;
pub const PROBE_TRAIN_FRACTION: f64 = 0.7;

/// Which activations a report was measured on.
pub const FEATURE_TAP: &str = "post-gate";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub layer: usize,
    pub tap: &'static str,
    /// Singular values of the centered features over the largest, descending.
    pub values: Vec<f64>,
    pub uniformity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub layer: usize,
    pub tap: &'static str,
    pub mean_abs_cosine: f64,
    pub pairs: usize,
}

pub fn feature_spectrum<T: Scalar>(features: &Mat<T>, layer: usize) -> Result<SpectrumReport> {
    let (c, m) = features.shape();
    if m < c {
        return Err(Error::invalid(format!("spectrum needs at least as many samples as channels ({m} < {c})")));
    }
    let eig = sym_eig(&sample_covariance(features)?)?;
    let sv: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.to_f64_lossy().max(0.0).sqrt()).collect();
    let top = sv[0];
    if !(top > 0.0) {
        return Err(Error::invalid("features have zero variance"));
    }
    let values: Vec<f64> = sv.iter().map(|v| v / top).collect();
    let uniformity = *values.last().unwrap();
    Ok(SpectrumReport { layer, tap: FEATURE_TAP, values, uniformity })
}

pub fn feature_similarity<T: Scalar>(features: &Mat<T>, layer: usize) -> Result<SimilarityReport> {
    let c = features.rows();
    if c < 2 {
        return Err(Error::invalid("similarity needs at least 2 channels"));
    }
    let centered = features.sub_column(features.row_means().data())?;
    let rows: Vec<Vec<f64>> = (0..c).map(|r| centered.row(r).iter().map(|v| v.to_f64_lossy()).collect()).collect();
    let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();

    let (mut total, mut pairs) = (0.0, 0);
    for i in 0..c {
        for j in i + 1..c {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            total += (dot / (norms[i] * norms[j])).abs().min(1.0);
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::invalid("every channel pair has a zero-norm row"));
    }
    Ok(SimilarityReport { layer, tap: FEATURE_TAP, mean_abs_cosine: total / pairs as f64, pairs })
}

/// Held-out error of a logistic source-vs-target probe. Both domains are
/// truncated to the same size after a seeded shuffle, split 70/30, and
/// standardized with training-split statistics.
pub fn domain_classifier_error(source: &Matrix, target: &Matrix, seed: u64) -> Result<f64> {
    if source.rows() != target.rows() {
        return Err(Error::Shape { op: "domain_classifier_error", left: source.shape(), right: target.shape() });
    }
    let per_domain = source.cols().min(target.cols());
    let n_train = (per_domain as f64 * PROBE_TRAIN_FRACTION).round() as usize;
    if n_train == 0 || n_train == per_domain {
        return Err(Error::invalid(format!("degenerate probe split for {per_domain} samples per domain")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = |x: &Matrix| {
        let mut idx: Vec<usize> = (0..x.cols()).collect();
        idx.shuffle(&mut rng);
        (x.select_cols(&idx[..n_train]), x.select_cols(&idx[n_train..per_domain]))
    };
    let (s_train, s_test) = split(source);
    let (t_train, t_test) = split(target);
    let train = Matrix::hstack(&[&s_train, &t_train])?;
    let test = Matrix::hstack(&[&s_test, &t_test])?;
    let label = |n_src: usize, n: usize| (0..n).map(move |i| if i < n_src { 0.0 } else { 1.0 });
    let y_train: Vec<f64> = label(n_train, train.cols()).collect();
    let y_test: Vec<f64> = label(per_domain - n_train, test.cols()).collect();

    let mean = train.row_means();
    let centered = train.sub_column(mean.data())?;
    let scale: Vec<f64> = (0..train.rows())
        .map(|r| {
            let sd = (centered.row(r).iter().map(|v| v * v).sum::<f64>() / train.cols() as f64).sqrt();
            if sd > 0.0 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    let standardize = |x: &Matrix| Matrix::from_fn(x.rows(), x.cols(), |r, c| (x[(r, c)] - mean.data()[r]) * scale[r]);
    let (xtr, xte) = (standardize(&train), standardize(&test));

    let d = xtr.rows();
    let n = xtr.cols() as f64;
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let logit = |w: &[f64], b: f64, x: &Matrix, c: usize| b + (0..d).map(|r| w[r] * x[(r, c)]).sum::<f64>();
    for _ in 0..PROBE_STEPS {
        let (mut gw, mut gb) = (vec![0.0; d], 0.0);
        for c in 0..xtr.cols() {
            let p = 1.0 / (1.0 + (-logit(&w, b, &xtr, c)).exp());
            let r = p - y_train[c];
            for (g, k) in gw.iter_mut().zip(0..d) {
                *g += r * xtr[(k, c)];
            }
            gb += r;
        }
        for (wk, g) in w.iter_mut().zip(&gw) {
            *wk -= PROBE_LEARNING_RATE * g / n;
        }
        b -= PROBE_LEARNING_RATE * gb / n;
    }

    let wrong = (0..xte.cols())
        .filter(|&c| {
            let predicted = if logit(&w, b, &xte, c) >= 0.0 { 1.0 } else { 0.0 };
            predicted != y_test[c]
        })
        .count();
    Ok(wrong as f64 / xte.cols() as f64)
}

/// Proxy A-distance `2(1 − 2ε)`, clamped to `[0, 2]`.
pub fn a_distance(epsilon: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("probe error {epsilon} outside [0, 1]")));
    }
    Ok((2.0 * (1.0 - 2.0 * epsilon)).clamp(0.0, 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gaussian_matrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn white_features_have_flat_spectrum() {
        // rows ±1 patterns that are exactly orthogonal with equal norms
        let x = Matrix::from_rows(&[[1.0, -1.0, 1.0, -1.0], [1.0, 1.0, -1.0, -1.0]]);
        let r = feature_spectrum(&x, 1).unwrap();
        assert!((r.uniformity - 1.0).abs() < 1e-12);
        assert_eq!(r.values[0], 1.0);
    }

    #[test]
    fn rank_one_features_collapse() {
        let x = Matrix::from_fn(3, 20, |r, c| (r as f64 + 1.0) * (c as f64).sin());
        let r = feature_spectrum(&x, 0).unwrap();
        assert!(r.uniformity < 1e-6, "{}", r.uniformity);
        assert!(feature_spectrum(&Matrix::filled(2, 5, 3.0), 0).is_err());
        assert!(feature_spectrum(&Matrix::zeros(4, 3), 0).is_err());
    }

    #[test]
    fn sampled_spectrum_matches_population() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z: Matrix = gaussian_matrix(2, 10_000, &mut rng);
        let x = Matrix::from_fn(2, 10_000, |r, c| if r == 0 { 2.0 * z[(r, c)] } else { z[(r, c)] });
        let r = feature_spectrum(&x, 0).unwrap();
        assert!((r.values[1] - 0.5).abs() < 0.05, "{:?}", r.values);
        assert!(r.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn similarity_examples() {
        let dup = Matrix::from_rows(&[[1.0, 2.0, 4.0], [1.0, 2.0, 4.0]]);
        assert!((feature_similarity(&dup, 0).unwrap().mean_abs_cosine - 1.0).abs() < 1e-12);
        let orth = Matrix::from_rows(&[[1.0, -1.0, 1.0, -1.0], [1.0, 1.0, -1.0, -1.0]]);
        assert!(feature_similarity(&orth, 0).unwrap().mean_abs_cosine < 1e-10);

        let with_constant = Matrix::from_rows(&[[1.0, 2.0, 3.0], [5.0, 5.0, 5.0], [3.0, 2.0, 1.0]]);
        let r = feature_similarity(&with_constant, 0).unwrap();
        assert_eq!(r.pairs, 1);
        assert!((r.mean_abs_cosine - 1.0).abs() < 1e-12);
        assert!(feature_similarity(&Matrix::filled(3, 4, 1.0), 0).is_err());
    }

    #[test]
    fn probe_sees_separated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cloud = |shift: f64| Matrix::from_fn(4, 200, |_, _| shift + rng.sample::<f64, _>(StandardNormal));
        let (s, t) = (cloud(-10.0), cloud(10.0));
        assert!(domain_classifier_error(&s, &t, 0).unwrap() <= 0.05);
    }

    #[test]
    fn probe_is_chance_on_identical_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Matrix = gaussian_matrix(4, 200, &mut rng);
        let errs: Vec<f64> = (0..10).map(|s| domain_classifier_error(&x, &x, s).unwrap()).collect();
        let mean = errs.iter().sum::<f64>() / 10.0;
        assert!((mean - 0.5).abs() <= 0.1, "{errs:?}");
        assert_eq!(domain_classifier_error(&x, &x, 4).unwrap(), errs[4]);
        assert!(domain_classifier_error(&x.select_cols(&[0]), &x, 0).is_err());
    }

    #[test]
    fn a_distance_examples() {
        assert_eq!(a_distance(0.5).unwrap(), 0.0);
        assert_eq!(a_distance(0.0).unwrap(), 2.0);
        assert_eq!(a_distance(0.25).unwrap(), 1.0);
        assert_eq!(a_distance(0.8).unwrap(), 0.0);
        assert!(a_distance(-0.1).is_err());
        assert!(a_distance(f64::NAN).is_err());
    }
}
