//! Trace/determinant orthogonality penalty on a classifier weight matrix.
//!
//! For `W ∈ R^{n×m}` and `G = WWᵀ`, the penalty
//! `(det G − 1)² + (tr G − n)²` vanishes exactly when every eigenvalue of `G`
//! is one (arithmetic and geometric means of the eigenvalues coincide), i.e.
//! when the rows of `W` are orthonormal.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gaussian_matrix, gemm, sym_eig, Lu, Mat};

pub const DEFAULT_LAMBDA_ORTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthPenaltyConfig {
    /// Row count of `W` (number of classes).
    pub n: usize,
    /// Weight of the penalty in the total loss.
    pub lambda_orth: f64,
}

impl OrthPenaltyConfig {
    pub fn new(n: usize) -> Self {
        Self { n, lambda_orth: DEFAULT_LAMBDA_ORTH }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("orthogonality penalty needs n >= 1"));
        }
        if !self.lambda_orth.is_finite() || self.lambda_orth < 0.0 {
            return Err(Error::invalid(format!("lambda_orth must be finite and >= 0, got {}", self.lambda_orth)));
        }
        Ok(())
    }

    fn check<T: Scalar>(&self, w: &Mat<T>) -> Result<()> {
        self.validate()?;
        if w.rows() != self.n {
            return Err(Error::Shape { op: "orth_penalty", left: w.shape(), right: (self.n, w.cols()) });
        }
        Ok(())
    }
}

/// Which penalty terms are active. Both in production; the split exists so
/// each term's gradient can be checked on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PenaltyTerms {
    pub det: bool,
    pub trace: bool,
}

impl PenaltyTerms {
    pub const BOTH: Self = Self { det: true, trace: true };
}

/// `G = WWᵀ`
pub fn gram<T: Scalar>(w: &Mat<T>) -> Mat<T> {
    gemm(w, &w.transpose()).expect("conforming by construction")
}

pub fn orth_penalty<T: Scalar>(w: &Mat<T>, cfg: &OrthPenaltyConfig) -> Result<T> {
    orth_penalty_terms(w, cfg, PenaltyTerms::BOTH)
}

pub fn orth_penalty_terms<T: Scalar>(w: &Mat<T>, cfg: &OrthPenaltyConfig, terms: PenaltyTerms) -> Result<T> {
    cfg.check(w)?;
    let g = gram(w);
    let mut total = T::zero();
    if terms.det {
        let d = Lu::new(&g)?.det() - T::one();
        total += d * d;
    }
    if terms.trace {
        let t = g.trace() - T::from_usize(cfg.n).unwrap();
        total += t * t;
    }
    Ok(total)
}

/// Closed-form gradient `4(det G − 1)·det G·G⁻¹W + 4(tr G − n)·W`.
pub fn orth_penalty_grad<T: Scalar>(w: &Mat<T>, cfg: &OrthPenaltyConfig) -> Result<Mat<T>> {
    orth_penalty_grad_terms(w, cfg, PenaltyTerms::BOTH)
}

pub fn orth_penalty_grad_terms<T: Scalar>(w: &Mat<T>, cfg: &OrthPenaltyConfig, terms: PenaltyTerms) -> Result<Mat<T>> {
    cfg.check(w)?;
    let g = gram(w);
    let four = T::lit(4.0);
    let mut grad = Mat::zeros(w.rows(), w.cols());
    if terms.det {
        let lu = Lu::new(&g)?;
        if lu.is_singular() {
            return Err(Error::GramSingular);
        }
        let det = lu.det();
        let ginv_w = lu.solve(w).map_err(|_| Error::GramSingular)?;
        grad.add_assign(&ginv_w.scale(four * (det - T::one()) * det))?;
    }
    if terms.trace {
        let t = g.trace() - T::from_usize(cfg.n).unwrap();
        grad.add_assign(&w.scale(four * t))?;
    }
    Ok(grad)
}

/// Records the unweighted penalty on a tape.
pub fn record_orth_penalty<T: Scalar>(tape: &mut Tape<T>, w: NodeId, n: usize) -> Result<NodeId> {
    let rows = tape.value(w).rows();
    if rows != n {
        return Err(Error::Shape { op: "orth_penalty", left: tape.value(w).shape(), right: (n, tape.value(w).cols()) });
    }
    let wt = tape.transpose(w)?;
    let g = tape.gemm(w, wt)?;
    let det = tape.det(g)?;
    let one = tape.constant_scalar(T::one());
    let det_gap = tape.sub(det, one)?;
    let det_sq = tape.square(det_gap)?;
    let tr = tape.trace(g)?;
    let n_const = tape.constant_scalar(T::from_usize(n).unwrap());
    let tr_gap = tape.sub(tr, n_const)?;
    let tr_sq = tape.square(tr_gap)?;
    tape.add(det_sq, tr_sq)
}

/// `maxᵢ |√λᵢ(WWᵀ) − 1|`: how far the singular values of `W` are from one.
pub fn singular_value_gap<T: Scalar>(w: &Mat<T>) -> Result<T> {
    let eig = sym_eig(&gram(w))?;
    Ok(eig
        .eigenvalues
        .iter()
        .map(|&l| (l.max(T::zero()).sqrt() - T::one()).abs())
        .fold(T::zero(), T::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmGm<T> {
    pub mean: T,
    pub geomean: T,
    /// `mean ≥ geomean − 1e-12`
    pub holds: bool,
    /// `mean − geomean ≤ 1e-9·mean`
    pub equality: bool,
}

/// Arithmetic versus geometric mean of positive values.
pub fn amgm_check<T: Scalar>(values: &[T]) -> Result<AmGm<T>> {
    if values.is_empty() {
        return Err(Error::invalid("amgm_check needs at least one value"));
    }
    if let Some(bad) = values.iter().find(|&&v| !(v > T::zero()) || !v.is_finite()) {
        return Err(Error::invalid(format!("amgm_check needs positive finite values, got {bad}")));
    }
    let n = T::from_usize(values.len()).unwrap();
    let mean = values.iter().copied().sum::<T>() / n;
    // Logs of ratios to the largest value keep constant inputs exact.
    let top = values.iter().copied().fold(T::zero(), T::max);
    let geomean = top * (values.iter().map(|&v| (v / top).ln()).sum::<T>() / n).exp();
    Ok(AmGm {
        mean,
        geomean,
        holds: mean >= geomean - T::lit(1e-12),
        equality: mean - geomean <= T::lit(1e-9) * mean,
    })
}

/// Gaussian rows scaled to unit length, so `tr(WWᵀ) = n` at the start.
pub fn init_unit_rows<T: Scalar>(n: usize, m: usize, seed: u64) -> Mat<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    normalize_rows(gaussian_matrix(n, m, &mut rng))
}

pub(crate) fn normalize_rows<T: Scalar>(mut w: Mat<T>) -> Mat<T> {
    let cols = w.cols();
    for r in 0..w.rows() {
        let norm = w.row(r).iter().map(|&v| v * v).sum::<T>().sqrt();
        for c in 0..cols {
            let v = w.get(r, c) / norm;
            w.set(r, c, v);
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentPoint {
    pub step: usize,
    pub penalty: f64,
    pub sv_gap: f64,
}

/// Minimizes the penalty alone with heavy-ball gradient descent,
/// `v ← μv − η∇`, `W ← W + v`. `momentum = 0` is plain gradient descent.
/// Records a trace point every `record_every` steps plus the final step.
pub fn penalty_descent<T: Scalar>(
    w0: &Mat<T>,
    cfg: &OrthPenaltyConfig,
    learning_rate: T,
    momentum: T,
    steps: usize,
    record_every: usize,
) -> Result<(Mat<T>, Vec<DescentPoint>)> {
    let mut w = w0.clone();
    let mut velocity = Mat::zeros(w.rows(), w.cols());
    let mut trace = Vec::new();
    let mut record = |step: usize, w: &Mat<T>| -> Result<()> {
        trace.push(DescentPoint {
            step,
            penalty: orth_penalty(w, cfg)?.to_f64_lossy(),
            sv_gap: singular_value_gap(w)?.to_f64_lossy(),
        });
        Ok(())
    };
    record(0, &w)?;
    for step in 1..=steps {
        let grad = orth_penalty_grad(&w, cfg)?;
        if !grad.is_finite() {
            return Err(Error::NonFinite("penalty gradient"));
        }
        velocity = velocity.scale(momentum).sub(&grad.scale(learning_rate))?;
        w.add_assign(&velocity)?;
        if (record_every > 0 && step % record_every == 0) || step == steps {
            record(step, &w)?;
        }
    }
    Ok((w, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::tensor::{frobenius_distance, random_orthogonal};

    fn cfg(n: usize) -> OrthPenaltyConfig {
        OrthPenaltyConfig::new(n)
    }

    fn orthonormal_rows(n: usize, m: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Mat<f64> = random_orthogonal(m, &mut rng);
        q.select_rows(&(0..n).collect::<Vec<_>>())
    }

    #[test]
    fn gram_examples() {
        assert_eq!(gram(&Mat::<f64>::identity(2)), Mat::identity(2));
        assert_eq!(gram(&Mat::from_rows(&[[1.0, 1.0], [1.0, -1.0]])), Mat::diag(&[2.0, 2.0]));
        let w = init_unit_rows::<f64>(3, 8, 4);
        assert_eq!(gram(&w), gemm(&w, &w.transpose()).unwrap());
    }

    #[test]
    fn penalty_examples() {
        let w = orthonormal_rows(3, 10, 1);
        assert!(orth_penalty(&w, &cfg(3)).unwrap() < 1e-24);
        assert_eq!(orth_penalty(&Mat::<f64>::zeros(3, 5), &cfg(3)).unwrap(), 10.0);
        assert_eq!(orth_penalty(&Mat::diag(&[2.0, 2.0]), &cfg(2)).unwrap(), 261.0);
        assert!(orth_penalty(&Mat::<f64>::zeros(3, 5), &cfg(2)).is_err());
    }

    #[test]
    fn gradient_zero_at_minimum_and_singular_error() {
        let w = orthonormal_rows(3, 9, 2);
        assert!(orth_penalty_grad(&w, &cfg(3)).unwrap().max_abs() < 1e-12);
        let err = orth_penalty_grad(&Mat::<f64>::zeros(2, 4), &cfg(2)).unwrap_err();
        assert_eq!(err.to_string(), "gram singular: reinitialize or perturb W");
    }

    #[test]
    fn trace_term_gradient_matches_finite_differences() {
        let w = Mat::from_rows(&[[1.0f64, 2.0], [3.0, 4.0]]);
        let only_trace = PenaltyTerms { det: false, trace: true };
        let g = orth_penalty_grad_terms(&w, &cfg(2), only_trace).unwrap();
        assert_eq!(g, w.scale(4.0 * (30.0 - 2.0)));
        let h = 1e-6;
        for i in 0..4 {
            let mut p = w.clone();
            p.data_mut()[i] += h;
            let mut m = w.clone();
            m.data_mut()[i] -= h;
            let fd = (orth_penalty_terms(&p, &cfg(2), only_trace).unwrap()
                - orth_penalty_terms(&m, &cfg(2), only_trace).unwrap())
                / (2.0 * h);
            assert!((fd - g.data()[i]).abs() <= 1e-6 * g.data()[i].abs());
        }
    }

    #[test]
    fn analytic_gradient_agrees_with_tape() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Mat<f64> = gaussian_matrix(3, 12, &mut rng).scale(0.3);
            let analytic = orth_penalty_grad(&w, &cfg(3)).unwrap();
            let mut tape = Tape::new();
            let wn = tape.variable(w.clone());
            let p = record_orth_penalty(&mut tape, wn, 3).unwrap();
            assert_eq!(tape.scalar_value(p).unwrap(), orth_penalty(&w, &cfg(3)).unwrap());
            let taped = tape.backward(p).unwrap().wrt(wn).unwrap().clone();
            let rel = frobenius_distance(&analytic, &taped).unwrap() / analytic.frobenius_norm();
            assert!(rel <= 1e-8, "{rel}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let w: Mat<f64> = gaussian_matrix(3, 8, &mut rng).scale(0.4);
        let err = grad_check(|t, x| record_orth_penalty(t, x, 3), &w, 1e-5).unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn sv_gap_examples() {
        assert!(singular_value_gap(&orthonormal_rows(4, 12, 3)).unwrap() <= 1e-8);
        let w = Mat::from_rows(&[[2.0f64, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0]]);
        assert!((singular_value_gap(&w).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn amgm_examples() {
        let r = amgm_check(&[1.0f64, 1.0, 1.0]).unwrap();
        assert_eq!((r.mean, r.geomean, r.equality), (1.0, 1.0, true));
        let r = amgm_check(&[1.0f64, 4.0]).unwrap();
        assert_eq!(r.mean, 2.5);
        assert!((r.geomean - 2.0).abs() < 1e-15);
        assert!(r.holds && !r.equality);
        assert!(amgm_check(&[1.0, 0.0]).is_err());
        assert!(amgm_check(&[1.0, -3.0]).is_err());
    }

    #[test]
    fn init_rows_have_unit_norm() {
        let w = init_unit_rows::<f64>(4, 64, 9);
        assert!((gram(&w).trace() - 4.0).abs() < 1e-12);
    }
}
