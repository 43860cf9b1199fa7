//! Batch standardization, ZCA whitening through a trace-normalized
//! Newton–Schulz iteration, and the transferable decorrelated layer that
//! whitens each domain with its own statistics before a shared
//! channel-transferability gate.
//!
//! Activations are `channels × samples`. Each operation exists twice: a plain
//! matrix version, and a `record_*` version that writes the same arithmetic
//! onto an autodiff [`Tape`] so gradients flow through the iteration itself.

use std::ops::Range;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm, is_positive_definite, sym_eig, Mat};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_NEWTON_STEPS: usize = 5;
pub const DEFAULT_RUNNING_MOMENTUM: f64 = 0.9;
pub const EPSILON_RANGE: (f64, f64) = (1e-8, 1e-2);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

/// Per-channel scale and shift plus the stabilizing ε.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub epsilon: T,
}

impl<T: Scalar> BnParams<T> {
    /// `γ = 1`, `β = 0`, default ε.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            epsilon: T::lit(DEFAULT_EPSILON),
        }
    }

    pub fn with_epsilon(channels: usize, epsilon: T) -> Result<Self> {
        let p = Self { epsilon, ..Self::new(channels) };
        p.validate()?;
        Ok(p)
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.is_empty() || self.gamma.len() != self.beta.len() {
            return Err(Error::invalid(format!(
                "gamma/beta lengths must match and be non-zero ({} vs {})",
                self.gamma.len(),
                self.beta.len()
            )));
        }
        let eps = self.epsilon.to_f64_lossy();
        if !(EPSILON_RANGE.0..=EPSILON_RANGE.1).contains(&eps) {
            return Err(Error::invalid(format!("epsilon {eps} outside [1e-8, 1e-2]")));
        }
        Ok(())
    }
}

/// First and second moments of one domain's activations.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainStats<T> {
    pub mean: Vec<T>,
    /// Biased per-channel variance, without ε.
    pub var: Vec<T>,
    /// `(1/m)·Xc·Xcᵀ + εI`.
    pub cov: Mat<T>,
    pub count: usize,
}

impl<T: Scalar> DomainStats<T> {
    /// Zero mean, unit variance, identity covariance. Initial running statistics.
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            cov: Mat::identity(channels),
            count: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

fn check_channels<T: Scalar>(x: &Mat<T>, channels: usize, op: &'static str) -> Result<()> {
    if x.rows() != channels {
        return Err(Error::Shape { op, left: x.shape(), right: (channels, x.cols()) });
    }
    Ok(())
}

/// Mini-batch mean, biased variance and ε-regularized covariance of a
/// `c × m` batch.
pub fn batch_stats<T: Scalar>(x: &Mat<T>, epsilon: T) -> Result<DomainStats<T>> {
    let m = x.cols();
    if m < 2 {
        return Err(Error::DegenerateBatch(m));
    }
    let mean = x.row_means().into_vec();
    let centered = x.sub_column(&mean)?;
    let inv_m = T::one() / T::from_usize(m).unwrap();
    let var = (0..x.rows())
        .map(|r| centered.row(r).iter().map(|&v| v * v).sum::<T>() * inv_m)
        .collect();
    let cov = regularized_covariance(&centered, epsilon)?;
    Ok(DomainStats { mean, var, cov, count: m })
}

fn regularized_covariance<T: Scalar>(centered: &Mat<T>, epsilon: T) -> Result<Mat<T>> {
    let inv_m = T::one() / T::from_usize(centered.cols()).unwrap();
    let outer = gemm(centered, &centered.transpose())?.scale(inv_m);
    outer.add(&Mat::identity(centered.rows()).scale(epsilon))
}

/// Biased sample covariance of the rows, no regularization.
pub fn sample_covariance<T: Scalar>(x: &Mat<T>) -> Result<Mat<T>> {
    let mean = x.row_means().into_vec();
    let centered = x.sub_column(&mean)?;
    let inv_m = T::one() / T::from_usize(x.cols()).unwrap();
    Ok(gemm(&centered, &centered.transpose())?.scale(inv_m))
}

/// `‖cov(X̂) − I‖_F / √c`, the distance of a batch from being white.
pub fn whitening_residual<T: Scalar>(xhat: &Mat<T>) -> Result<T> {
    let c = xhat.rows();
    let cov = sample_covariance(xhat)?;
    Ok(cov.sub(&Mat::identity(c))?.frobenius_norm() / T::from_usize(c).unwrap().sqrt())
}

/// Standard batch normalization: `γ_j·(x − μ_j)/√(σ²_j + ε) + β_j`.
pub fn bn_forward<T: Scalar>(x: &Mat<T>, stats: &DomainStats<T>, params: &BnParams<T>) -> Result<Mat<T>> {
    let c = params.channels();
    check_channels(x, c, "bn_forward")?;
    if stats.channels() != c {
        return Err(Error::Shape { op: "bn_forward", left: (stats.channels(), 1), right: (c, 1) });
    }
    let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + params.epsilon).sqrt()).collect();
    Ok(Mat::from_fn(x.rows(), x.cols(), |r, k| {
        params.gamma[r] * ((x.get(r, k) - stats.mean[r]) * inv_std[r]) + params.beta[r]
    }))
}

/// Eigenvalues of the trace-normalized covariance lie in `(0, 1]` and sum to
/// one; that is what makes the iteration converge.
fn newton_precondition_holds<T: Scalar>(sigma_n: &Mat<T>) -> bool {
    let Ok(eig) = sym_eig(sigma_n) else { return false };
    let tol = T::tol(1e-9);
    let total: T = eig.eigenvalues.iter().copied().sum();
    eig.eigenvalues.iter().all(|&l| l > -tol && l <= T::one() + tol) && (total - T::one()).abs() <= tol
}

fn check_spd<T: Scalar>(sigma: &Mat<T>) -> Result<()> {
    if !sigma.is_square() {
        return Err(Error::Shape { op: "newton_inv_sqrt", left: sigma.shape(), right: sigma.shape() });
    }
    if !sigma.is_finite() {
        return Err(Error::NonFinite("covariance"));
    }
    if !is_positive_definite(sigma) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(())
}

/// Approximations of `Σ^{-1/2}` after 1, 2, …, `steps` Newton–Schulz steps.
///
/// `Σ_N = Σ/tr(Σ)`, `P₀ = I`, `P_{k+1} = ½(3P_k − P_k³Σ_N)`, and the k-th
/// entry is `P_k/√tr(Σ)`.
///
/// Evaluated in coupled form: `Y₀ = Σ_N`, `Z₀ = I`, `T = ½(3I − Z_kY_k)`,
/// `Y_{k+1} = Y_kT`, `Z_{k+1} = TZ_k`. In exact arithmetic `Z_k = P_k` and
/// `Y_k = Σ_N P_k`; in floating point the uncoupled recursion amplifies
/// rounding error by about `λ_max/λ_min` per step and diverges once
/// converged, while this form stays put. Once `Z_kY_k` equals `I` to
/// rounding precision the iterate is held fixed.
pub fn newton_iterates<T: Scalar>(sigma: &Mat<T>, steps: usize) -> Result<Vec<Mat<T>>> {
    if steps == 0 {
        return Err(Error::invalid("newton iteration needs at least one step"));
    }
    check_spd(sigma)?;
    let inv_sqrt_tr = T::one() / sigma.trace().sqrt();
    let sigma_n = sigma.scale(inv_sqrt_tr * inv_sqrt_tr);
    debug_assert!(newton_precondition_holds(&sigma_n), "trace-normalized spectrum outside (0, 1]");

    let three_i = Mat::identity(sigma.rows()).scale(T::lit(3.0));
    let half = T::lit(0.5);
    let mut y = sigma_n;
    let mut z = Mat::identity(sigma.rows());
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let zy = gemm(&z, &y)?;
        if newton_converged(&zy) {
            out.push(out.last().cloned().unwrap_or_else(|| z.scale(inv_sqrt_tr)));
            continue;
        }
        let t = three_i.sub(&zy)?.scale(half);
        y = gemm(&y, &t)?;
        z = gemm(&t, &z)?;
        out.push(z.scale(inv_sqrt_tr));
    }
    Ok(out)
}

/// `max|ZY − I| ≤ 16·c·ε`: further steps only add rounding noise.
fn newton_converged<T: Scalar>(zy: &Mat<T>) -> bool {
    let c = zy.rows();
    let tol = T::lit(16.0) * T::from_usize(c).unwrap() * T::epsilon();
    (0..c).all(|i| (0..c).all(|j| (zy.get(i, j) - if i == j { T::one() } else { T::zero() }).abs() <= tol))
}

/// `Σ^{-1/2}` after `steps` Newton–Schulz steps.
pub fn newton_inv_sqrt<T: Scalar>(sigma: &Mat<T>, steps: usize) -> Result<Mat<T>> {
    Ok(newton_iterates(sigma, steps)?.pop().expect("steps >= 1"))
}

/// Consecutive channel blocks of at most `group_size` channels.
pub fn channel_groups(channels: usize, group_size: Option<usize>) -> Vec<Range<usize>> {
    let g = group_size.filter(|&g| g > 0).unwrap_or(channels).min(channels).max(1);
    (0..channels).step_by(g).map(|s| s..(s + g).min(channels)).collect()
}

/// Block-diagonal whitening matrix, one Newton inverse square root per group.
pub fn whitening_matrix<T: Scalar>(cov: &Mat<T>, steps: usize, group_size: Option<usize>) -> Result<Mat<T>> {
    let c = cov.rows();
    let groups = channel_groups(c, group_size);
    if groups.len() == 1 {
        return newton_inv_sqrt(cov, steps);
    }
    let mut out = Mat::zeros(c, c);
    for g in groups {
        let idx: Vec<usize> = g.clone().collect();
        let block = newton_inv_sqrt(&cov.select_rows(&idx).select_cols(&idx), steps)?;
        for (i, &r) in idx.iter().enumerate() {
            for (j, &k) in idx.iter().enumerate() {
                out.set(r, k, block.get(i, j));
            }
        }
    }
    Ok(out)
}

fn affine<T: Scalar>(xhat: &Mat<T>, params: &BnParams<T>) -> Mat<T> {
    Mat::from_fn(xhat.rows(), xhat.cols(), |r, k| params.gamma[r] * xhat.get(r, k) + params.beta[r])
}

/// `X̂ = Σ^{-1/2}(X − μ·1ᵀ)` without the affine step.
pub fn whiten<T: Scalar>(x: &Mat<T>, stats: &DomainStats<T>, steps: usize, group_size: Option<usize>) -> Result<Mat<T>> {
    check_channels(x, stats.channels(), "whiten")?;
    let w = whitening_matrix(&stats.cov, steps, group_size)?;
    gemm(&w, &x.sub_column(&stats.mean)?)
}

/// Whitening followed by the per-channel affine map `γ⊙X̂ + β`.
pub fn whiten_forward<T: Scalar>(
    x: &Mat<T>,
    stats: &DomainStats<T>,
    params: &BnParams<T>,
    steps: usize,
) -> Result<Mat<T>> {
    check_channels(x, params.channels(), "whiten_forward")?;
    Ok(affine(&whiten(x, stats, steps, None)?, params))
}

/// Per-channel similarity of standardized domain means,
/// `d_j = |μ_s/√(σ²_s+ε) · μ_t/√(σ²_t+ε)|`.
pub fn channel_similarity<T: Scalar>(source: &DomainStats<T>, target: &DomainStats<T>, eps: T) -> Result<Vec<T>> {
    if source.channels() != target.channels() {
        return Err(Error::Shape {
            op: "transferability_alpha",
            left: (source.channels(), 1),
            right: (target.channels(), 1),
        });
    }
    Ok((0..source.channels())
        .map(|j| {
            let s = source.mean[j] / (source.var[j] + eps).sqrt();
            let t = target.mean[j] / (target.var[j] + eps).sqrt();
            (s * t).abs()
        })
        .collect())
}

/// `α_j = c(1 + d_j) / Σ_k (1 + d_k)`; sums to `c`, every entry positive,
/// and exactly one everywhere when all `d_j` are equal.
pub fn gate_from_similarity<T: Scalar>(d: &[T]) -> Vec<T> {
    if d.windows(2).all(|w| w[0] == w[1]) {
        return vec![T::one(); d.len()];
    }
    let c = T::from_usize(d.len()).unwrap();
    let total: T = d.iter().map(|&v| T::one() + v).sum();
    d.iter().map(|&v| c * (T::one() + v) / total).collect()
}

pub fn transferability_alpha<T: Scalar>(source: &DomainStats<T>, target: &DomainStats<T>, eps: T) -> Result<Vec<T>> {
    Ok(gate_from_similarity(&channel_similarity(source, target, eps)?))
}

fn gate<T: Scalar>(y: &Mat<T>, alpha: &[T]) -> Mat<T> {
    Mat::from_fn(y.rows(), y.cols(), |r, k| (T::one() + alpha[r]) * y.get(r, k))
}

/// Learnable and running state of one transferable decorrelated layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TdbnState<T> {
    pub params: BnParams<T>,
    pub running_source: DomainStats<T>,
    pub running_target: DomainStats<T>,
    pub momentum: T,
    pub newton_steps: usize,
    /// Whiten channels in blocks of this size; `None` whitens all channels jointly.
    pub group_size: Option<usize>,
    /// Gate from the most recent training batch.
    pub alpha: Option<Vec<T>>,
}

impl<T: Scalar> TdbnState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            params: BnParams::new(channels),
            running_source: DomainStats::identity(channels),
            running_target: DomainStats::identity(channels),
            momentum: T::lit(DEFAULT_RUNNING_MOMENTUM),
            newton_steps: DEFAULT_NEWTON_STEPS,
            group_size: None,
            alpha: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.params.channels()
    }

    pub fn running(&self, domain: Domain) -> &DomainStats<T> {
        match domain {
            Domain::Source => &self.running_source,
            Domain::Target => &self.running_target,
        }
    }

    /// Gate computed from the running statistics of both domains.
    pub fn inference_alpha(&self) -> Result<Vec<T>> {
        transferability_alpha(&self.running_source, &self.running_target, self.params.epsilon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdbnOutput<T> {
    pub source: Option<Mat<T>>,
    pub target: Option<Mat<T>>,
    pub alpha: Vec<T>,
}

/// Forward pass of the transferable decorrelated layer.
///
/// Each domain is whitened with its own statistics (batch statistics when
/// training, running ones otherwise), then both go through
/// `(1 + α)(γ x̂ + β)` with a single shared gate α. Training requires both
/// domains and updates the running statistics.
pub fn tdbn_forward<T: Scalar>(
    source: Option<&Mat<T>>,
    target: Option<&Mat<T>>,
    state: &mut TdbnState<T>,
    mode: Mode,
) -> Result<TdbnOutput<T>> {
    let c = state.channels();
    for x in [source, target].into_iter().flatten() {
        check_channels(x, c, "tdbn_forward")?;
    }
    match mode {
        Mode::Eval => tdbn_eval(source, target, state),
        Mode::Train => {
            let (Some(xs), Some(xt)) = (source, target) else {
                return Err(Error::invalid("training requires both source and target batches"));
            };
            let eps = state.params.epsilon;
            let fresh_s = batch_stats(xs, eps)?;
            let fresh_t = batch_stats(xt, eps)?;
            let alpha = transferability_alpha(&fresh_s, &fresh_t, eps)?;
            let steps = state.newton_steps;
            let ys = gate(&affine(&whiten(xs, &fresh_s, steps, state.group_size)?, &state.params), &alpha);
            let yt = gate(&affine(&whiten(xt, &fresh_t, steps, state.group_size)?, &state.params), &alpha);
            tdbn_update_running(state, &fresh_s, &fresh_t)?;
            state.alpha = Some(alpha.clone());
            Ok(TdbnOutput { source: Some(ys), target: Some(yt), alpha })
        }
    }
}

/// Inference pass: running statistics, no state change.
pub fn tdbn_eval<T: Scalar>(source: Option<&Mat<T>>, target: Option<&Mat<T>>, state: &TdbnState<T>) -> Result<TdbnOutput<T>> {
    let alpha = state.inference_alpha()?;
    let run = |x: Option<&Mat<T>>, domain| -> Result<Option<Mat<T>>> {
        x.map(|x| {
            let xhat = whiten(x, state.running(domain), state.newton_steps, state.group_size)?;
            Ok(gate(&affine(&xhat, &state.params), &alpha))
        })
        .transpose()
    };
    Ok(TdbnOutput { source: run(source, Domain::Source)?, target: run(target, Domain::Target)?, alpha })
}

fn blend<T: Scalar>(running: &mut [T], fresh: &[T], momentum: T) {
    let keep = T::one() - momentum;
    for (r, &f) in running.iter_mut().zip(fresh) {
        *r = momentum * *r + keep * f;
    }
}

/// `running ← momentum·running + (1 − momentum)·fresh` for mean, variance
/// and covariance of both domains.
pub fn tdbn_update_running<T: Scalar>(
    state: &mut TdbnState<T>,
    fresh_source: &DomainStats<T>,
    fresh_target: &DomainStats<T>,
) -> Result<()> {
    let c = state.channels();
    for fresh in [fresh_source, fresh_target] {
        if fresh.channels() != c || fresh.cov.shape() != (c, c) {
            return Err(Error::Shape { op: "tdbn_update_running", left: (c, c), right: fresh.cov.shape() });
        }
    }
    let m = state.momentum;
    for (running, fresh) in [
        (&mut state.running_source, fresh_source),
        (&mut state.running_target, fresh_target),
    ] {
        update_running_stats(running, fresh, m);
    }
    Ok(())
}

pub(crate) fn update_running_stats<T: Scalar>(running: &mut DomainStats<T>, fresh: &DomainStats<T>, momentum: T) {
    blend(&mut running.mean, &fresh.mean, momentum);
    blend(&mut running.var, &fresh.var, momentum);
    blend(running.cov.data_mut(), fresh.cov.data(), momentum);
    running.count += fresh.count;
}

// ---------------------------------------------------------------------------
// Tape recording

/// Records `(mean, X − mean·1ᵀ)`.
pub fn record_center<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> Result<(NodeId, NodeId)> {
    let m = tape.value(x).cols();
    let mean = tape.mean_rows(x)?;
    let wide = tape.broadcast_column(mean, m)?;
    let centered = tape.sub(x, wide)?;
    Ok((mean, centered))
}

/// Records `(1/m)·Xc·Xcᵀ + εI`.
pub fn record_covariance<T: Scalar>(tape: &mut Tape<T>, centered: NodeId, eps: T) -> Result<NodeId> {
    let (c, m) = tape.value(centered).shape();
    let ct = tape.transpose(centered)?;
    let outer = tape.gemm(centered, ct)?;
    let scaled = tape.scale_by(outer, T::one() / T::from_usize(m).unwrap())?;
    let ridge = tape.constant(Mat::identity(c).scale(eps));
    tape.add(scaled, ridge)
}

/// Records the Newton–Schulz inverse square root, same arithmetic as
/// [`newton_inv_sqrt`].
pub fn record_newton_inv_sqrt<T: Scalar>(tape: &mut Tape<T>, sigma: NodeId, steps: usize) -> Result<NodeId> {
    if steps == 0 {
        return Err(Error::invalid("newton iteration needs at least one step"));
    }
    check_spd(tape.value(sigma))?;
    let c = tape.value(sigma).rows();
    let tr = tape.trace(sigma)?;
    let inv_sqrt_tr = tape.recip_sqrt(tr)?;
    let inv_tr = tape.hadamard(inv_sqrt_tr, inv_sqrt_tr)?;
    let sigma_n = tape.scale(sigma, inv_tr)?;
    debug_assert!(newton_precondition_holds(tape.value(sigma_n)), "trace-normalized spectrum outside (0, 1]");

    let three_i = tape.constant(Mat::identity(c).scale(T::lit(3.0)));
    let mut y = sigma_n;
    let mut z = tape.constant(Mat::identity(c));
    for _ in 0..steps {
        let zy = tape.gemm(z, y)?;
        if newton_converged(tape.value(zy)) {
            break;
        }
        let diff = tape.sub(three_i, zy)?;
        let t = tape.scale_by(diff, T::lit(0.5))?;
        y = tape.gemm(y, t)?;
        z = tape.gemm(t, z)?;
    }
    tape.scale(z, inv_sqrt_tr)
}

/// Records batch whitening `X̂ = Σ^{-1/2}(X − μ·1ᵀ)` using the batch's own
/// statistics, group by group.
pub fn record_whiten<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    eps: T,
    steps: usize,
    group_size: Option<usize>,
) -> Result<NodeId> {
    let (c, m) = tape.value(x).shape();
    if m < 2 {
        return Err(Error::DegenerateBatch(m));
    }
    let (_, centered) = record_center(tape, x)?;
    let groups = channel_groups(c, group_size);
    if groups.len() == 1 {
        let cov = record_covariance(tape, centered, eps)?;
        let w = record_newton_inv_sqrt(tape, cov, steps)?;
        return tape.gemm(w, centered);
    }
    let mut out: Option<NodeId> = None;
    for g in groups {
        let select = Mat::from_fn(g.len(), c, |i, j| if g.start + i == j { T::one() } else { T::zero() });
        let scatter = tape.constant(select.transpose());
        let select = tape.constant(select);
        let part = tape.gemm(select, centered)?;
        let cov = record_covariance(tape, part, eps)?;
        let w = record_newton_inv_sqrt(tape, cov, steps)?;
        let white = tape.gemm(w, part)?;
        let placed = tape.gemm(scatter, white)?;
        out = Some(match out {
            None => placed,
            Some(acc) => tape.add(acc, placed)?,
        });
    }
    Ok(out.expect("at least one group"))
}

/// Records batch standardization `(X − μ)/√(σ² + ε)` with batch moments.
pub fn record_standardize<T: Scalar>(tape: &mut Tape<T>, x: NodeId, eps: T) -> Result<NodeId> {
    let (c, m) = tape.value(x).shape();
    if m < 2 {
        return Err(Error::DegenerateBatch(m));
    }
    let (_, centered) = record_center(tape, x)?;
    let sq = tape.square(centered)?;
    let var = tape.mean_rows(sq)?;
    let ridge = tape.constant(Mat::filled(c, 1, eps));
    let shifted = tape.add(var, ridge)?;
    let inv_std = tape.recip_sqrt(shifted)?;
    let wide = tape.broadcast_column(inv_std, m)?;
    tape.hadamard(centered, wide)
}

/// Records `γ⊙X̂ + β` for `c × 1` nodes `gamma` and `beta`.
pub fn record_affine<T: Scalar>(tape: &mut Tape<T>, xhat: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
    let m = tape.value(xhat).cols();
    let g = tape.broadcast_column(gamma, m)?;
    let b = tape.broadcast_column(beta, m)?;
    let scaled = tape.hadamard(xhat, g)?;
    tape.add(scaled, b)
}

/// Records `(1 + α)⊙Y` with α held constant.
pub fn record_gate<T: Scalar>(tape: &mut Tape<T>, y: NodeId, alpha: &[T]) -> Result<NodeId> {
    let m = tape.value(y).cols();
    let factor: Vec<T> = alpha.iter().map(|&a| T::one() + a).collect();
    let factor = tape.constant(Mat::column(&factor).broadcast_column(m)?);
    tape.hadamard(y, factor)
}
