//! A small MLP for unsupervised domain adaptation: affine → normalization →
//! relu per hidden layer, then an unnormalized classifier whose weights carry
//! the orthogonality penalty. Only source labels enter the loss; target
//! batches pass through for their statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::NodeId;
use crate::data::{make_domain_batches, DomainBatch, LabeledSet};
use crate::error::{Error, Result};
use crate::normalization::{
    batch_stats, record_affine, record_center, record_gate, record_whiten, tdbn_update_running,
    transferability_alpha, update_running_stats, whitening_matrix, Domain, Mode, DEFAULT_EPSILON,
    DEFAULT_NEWTON_STEPS, DEFAULT_RUNNING_MOMENTUM, EPSILON_RANGE,
};
use crate::orthogonality::{
    init_unit_rows, orth_penalty, record_orth_penalty, singular_value_gap, OrthPenaltyConfig, DEFAULT_LAMBDA_ORTH,
};
use crate::tensor::{gemm, random_orthogonal};
use crate::{BnParams, DomainStats, Matrix, Tape, TdbnState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    None,
    Bn,
    Tdbn,
}

impl NormKind {
    pub fn name(self) -> &'static str {
        match self {
            NormKind::None => "none",
            NormKind::Bn => "bn",
            NormKind::Tdbn => "tdbn",
        }
    }
}

/// Layer widths from input to classes, and one normalization kind per
/// hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layer_sizes: Vec<usize>,
    pub norm_kinds: Vec<NormKind>,
}

impl ModelSpec {
    /// Same normalization on every hidden layer.
    pub fn uniform(layer_sizes: Vec<usize>, norm: NormKind) -> Result<Self> {
        let hidden = layer_sizes.len().saturating_sub(2);
        let spec = Self { layer_sizes, norm_kinds: vec![norm; hidden] };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 3 {
            return Err(Error::config("model.layer_sizes", "need input, at least one hidden layer, and classes"));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::config("model.layer_sizes", "layer sizes must be positive"));
        }
        if self.classes() < 2 {
            return Err(Error::config("model.layer_sizes", "need at least 2 classes"));
        }
        if self.norm_kinds.len() != self.hidden_layers() {
            return Err(Error::config(
                "model.norm",
                format!("{} norm kinds for {} hidden layers", self.norm_kinds.len(), self.hidden_layers()),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn hidden_layers(&self) -> usize {
        self.layer_sizes.len() - 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_orth: f64,
    pub newton_steps: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub running_momentum: f64,
    pub group_size: Option<usize>,
}

/// Largest default step that keeps heavy-ball descent on the orthogonality
/// penalty stable: its curvature at the optimum is `16n` along the scaling
/// direction and grows with `det(WWᵀ)` (degree `2n`) away from it.
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: 0.9,
            epochs: 50,
            batch_size: 24,
            lambda_orth: DEFAULT_LAMBDA_ORTH,
            newton_steps: DEFAULT_NEWTON_STEPS,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            running_momentum: DEFAULT_RUNNING_MOMENTUM,
            group_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("train.{k}");
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(key("learning_rate"), "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(key("momentum"), "must lie in [0, 1)"));
        }
        if !self.batch_size.is_multiple_of(2) {
            return Err(Error::config(key("batch_size"), "batch_size must be even"));
        }
        if self.batch_size < 4 {
            return Err(Error::config(key("batch_size"), "must be >= 4 (two samples per domain)"));
        }
        if !(self.lambda_orth >= 0.0) || !self.lambda_orth.is_finite() {
            return Err(Error::config(key("lambda_orth"), "must be finite and >= 0"));
        }
        if self.newton_steps == 0 {
            return Err(Error::config(key("newton_steps"), "must be >= 1"));
        }
        if !(EPSILON_RANGE.0..=EPSILON_RANGE.1).contains(&self.epsilon) {
            return Err(Error::config(key("epsilon"), "must lie in [1e-8, 1e-2]"));
        }
        if !(0.0..=1.0).contains(&self.running_momentum) {
            return Err(Error::config(key("running_momentum"), "must lie in [0, 1]"));
        }
        if self.group_size == Some(0) {
            return Err(Error::config(key("group_size"), "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`.
    pub weight: Matrix,
    /// `out × 1`.
    pub bias: Matrix,
}

/// Standard batch normalization; running statistics come from the source
/// domain and serve both domains at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct BnLayer {
    pub params: BnParams,
    pub running: DomainStats,
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NormLayer {
    None,
    Bn(BnLayer),
    Tdbn(TdbnState),
}

impl NormLayer {
    pub fn kind(&self) -> NormKind {
        match self {
            NormLayer::None => NormKind::None,
            NormLayer::Bn(_) => NormKind::Bn,
            NormLayer::Tdbn(_) => NormKind::Tdbn,
        }
    }

    fn params_mut(&mut self) -> Option<&mut BnParams> {
        match self {
            NormLayer::None => None,
            NormLayer::Bn(l) => Some(&mut l.params),
            NormLayer::Tdbn(s) => Some(&mut s.params),
        }
    }

    fn params(&self) -> Option<&BnParams> {
        match self {
            NormLayer::None => None,
            NormLayer::Bn(l) => Some(&l.params),
            NormLayer::Tdbn(s) => Some(&s.params),
        }
    }
}

/// Parameters, optimizer velocity and normalization state.
///
/// Parameter order (shared by [`ModelState::param_values`], gradients and
/// velocity): per hidden layer `W, b` then `γ, β` when normalized; finally
/// the classifier `W, b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub layers: Vec<Dense>,
    pub norms: Vec<NormLayer>,
    pub velocity: Vec<Matrix>,
    pub step: u64,
}

/// Fresh batch statistics awaiting a running-average update.
#[derive(Debug, Clone)]
enum Fresh {
    None,
    Bn(DomainStats),
    Tdbn(DomainStats, DomainStats, Vec<f64>),
}

/// Node ids of one recorded forward pass. Index 0 is the source domain,
/// index 1 the target.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub logits: [Option<NodeId>; 2],
    pub penultimate: [Option<NodeId>; 2],
    /// Normalized (post-gate, pre-activation) outputs per hidden layer.
    pub normalized: Vec<[Option<NodeId>; 2]>,
    pub alphas: Vec<Option<Vec<f64>>>,
    fresh: Vec<Fresh>,
}

#[derive(Debug, Clone)]
pub struct LossNodes {
    pub loss: NodeId,
    pub cross_entropy: NodeId,
    pub penalty: Option<NodeId>,
    pub recorded: Recorded,
}

/// Plain values of an inference pass on one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub logits: Matrix,
    pub penultimate: Matrix,
    pub normalized: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub cross_entropy: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub source_loss: f64,
    pub orth_penalty: f64,
    pub sv_gap: f64,
    pub steps: usize,
}

fn domain_index(d: Domain) -> usize {
    match d {
        Domain::Source => 0,
        Domain::Target => 1,
    }
}

pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

/// Shuffle seed of a given epoch.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl ModelState {
    /// Hidden weights: a block of a random orthogonal matrix times the relu
    /// gain `√2`, so the hidden covariance starts as well conditioned as the
    /// input's. Classifier: unit-norm rows. Zero biases, `γ = 1`, `β = 0`,
    /// identity running statistics.
    pub fn init(spec: &ModelSpec, cfg: &TrainConfig) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let sizes = &spec.layer_sizes;
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let weight = if l + 2 == sizes.len() {
                init_unit_rows(fan_out, fan_in, rng.random())
            } else {
                let q: Matrix = random_orthogonal(fan_in.max(fan_out), &mut rng);
                Matrix::from_fn(fan_out, fan_in, |r, c| RELU_GAIN * q[(r, c)])
            };
            layers.push(Dense { weight, bias: Matrix::zeros(fan_out, 1) });
        }
        let norms = spec
            .norm_kinds
            .iter()
            .zip(&sizes[1..])
            .map(|(kind, &c)| -> Result<NormLayer> {
                let params = BnParams::with_epsilon(c, cfg.epsilon)?;
                Ok(match kind {
                    NormKind::None => NormLayer::None,
                    NormKind::Bn => NormLayer::Bn(BnLayer {
                        params,
                        running: DomainStats::identity(c),
                        momentum: cfg.running_momentum,
                    }),
                    NormKind::Tdbn => NormLayer::Tdbn(TdbnState {
                        params,
                        momentum: cfg.running_momentum,
                        newton_steps: cfg.newton_steps,
                        group_size: cfg.group_size,
                        ..TdbnState::new(c)
                    }),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut state = Self { spec: spec.clone(), layers, norms, velocity: Vec::new(), step: 0 };
        state.velocity = state.param_values().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Ok(state)
    }

    pub fn classifier(&self) -> &Matrix {
        &self.layers.last().unwrap().weight
    }

    pub fn param_values(&self) -> Vec<Matrix> {
        let mut out = Vec::new();
        for (l, dense) in self.layers.iter().enumerate() {
            out.push(dense.weight.clone());
            out.push(dense.bias.clone());
            if let Some(p) = self.norms.get(l).and_then(NormLayer::params) {
                out.push(Matrix::column(&p.gamma));
                out.push(Matrix::column(&p.beta));
            }
        }
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter_mut();
        for dense in &mut self.layers {
            out.push(dense.weight.data_mut());
            out.push(dense.bias.data_mut());
            if let Some(p) = norms.next().and_then(NormLayer::params_mut) {
                out.push(p.gamma.as_mut_slice());
                out.push(p.beta.as_mut_slice());
            }
        }
        out
    }

    pub fn params_finite(&self) -> bool {
        self.param_values().iter().all(Matrix::is_finite)
    }

    /// Overwrites every parameter, in parameter order.
    pub fn set_params(&mut self, values: &[Matrix]) -> Result<()> {
        let current = self.param_values();
        if values.len() != current.len() {
            return Err(Error::invalid(format!("{} values for {} parameters", values.len(), current.len())));
        }
        if let Some((have, want)) = current.iter().zip(values).find(|(c, v)| c.shape() != v.shape()) {
            return Err(Error::Shape { op: "set_params", left: have.shape(), right: want.shape() });
        }
        for (slot, v) in self.param_slices_mut().into_iter().zip(values) {
            slot.copy_from_slice(v.data());
        }
        Ok(())
    }

    /// Registers every parameter as a variable leaf, in parameter order.
    pub fn register_params(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.param_values().into_iter().map(|p| tape.variable(p)).collect()
    }

    /// Records a forward pass over one or both domains.
    ///
    /// Training mode uses batch statistics and needs a source batch; TDBN
    /// layers also need a target batch. `frozen_alpha` overrides the gate of
    /// each TDBN layer (indexed by hidden layer).
    pub fn record_forward(
        &self,
        tape: &mut Tape,
        params: &[NodeId],
        source: Option<&Matrix>,
        target: Option<&Matrix>,
        mode: Mode,
        frozen_alpha: Option<&[Vec<f64>]>,
    ) -> Result<Recorded> {
        let input = self.spec.input_dim();
        for x in [source, target].into_iter().flatten() {
            if x.rows() != input {
                return Err(Error::Shape { op: "forward", left: x.shape(), right: (input, x.cols()) });
            }
        }
        if mode == Mode::Train && source.is_none() {
            return Err(Error::invalid("training forward needs a source batch"));
        }
        let mut h: [Option<NodeId>; 2] = [source.map(|x| tape.constant(x.clone())), target.map(|x| tape.constant(x.clone()))];
        let mut cursor = params.iter().copied();
        let mut next = || cursor.next().ok_or_else(|| Error::invalid("parameter list too short"));

        let mut normalized = Vec::new();
        let mut alphas = Vec::new();
        let mut fresh = Vec::new();
        for (l, norm) in self.norms.iter().enumerate() {
            let (w, b) = (next()?, next()?);
            let mut z = [None, None];
            for d in 0..2 {
                if let Some(x) = h[d] {
                    z[d] = Some(self.record_affine_layer(tape, w, b, x)?);
                }
            }
            let (y, alpha, update) = match norm {
                NormLayer::None => (z, None, Fresh::None),
                NormLayer::Bn(bn) => {
                    let (gamma, beta) = (next()?, next()?);
                    let (y, update) = record_bn(tape, bn, z, gamma, beta, mode)?;
                    (y, None, update)
                }
                NormLayer::Tdbn(state) => {
                    let (gamma, beta) = (next()?, next()?);
                    let frozen = frozen_alpha.and_then(|a| a.get(l)).filter(|a| !a.is_empty());
                    let (y, alpha, update) = record_tdbn(tape, state, z, gamma, beta, mode, frozen)?;
                    (y, Some(alpha), update)
                }
            };
            for d in 0..2 {
                h[d] = y[d].map(|v| tape.relu(v)).transpose()?;
            }
            normalized.push(y);
            alphas.push(alpha);
            fresh.push(update);
        }
        let penultimate = h;
        let (w, b) = (next()?, next()?);
        let mut logits = [None, None];
        for d in 0..2 {
            if let Some(x) = h[d] {
                logits[d] = Some(self.record_affine_layer(tape, w, b, x)?);
            }
        }
        Ok(Recorded { logits, penultimate, normalized, alphas, fresh })
    }

    fn record_affine_layer(&self, tape: &mut Tape, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let m = tape.value(x).cols();
        let wx = tape.gemm(w, x)?;
        let bias = tape.broadcast_column(b, m)?;
        tape.add(wx, bias)
    }

    /// Records `cross_entropy(source) + λ·penalty(classifier W)`. The penalty
    /// is left off the tape entirely when `λ = 0`. Target labels are not read.
    pub fn record_loss(
        &self,
        tape: &mut Tape,
        params: &[NodeId],
        batch: &DomainBatch,
        cfg: &TrainConfig,
        mode: Mode,
        frozen_alpha: Option<&[Vec<f64>]>,
    ) -> Result<LossNodes> {
        let recorded = self.record_forward(tape, params, Some(&batch.source_x), Some(&batch.target_x), mode, frozen_alpha)?;
        let logits = recorded.logits[0].expect("source logits");
        let ce = record_cross_entropy(tape, logits, &batch.source_y)?;
        if cfg.lambda_orth == 0.0 {
            return Ok(LossNodes { loss: ce, cross_entropy: ce, penalty: None, recorded });
        }
        let w = params[params.len() - 2];
        let penalty = record_orth_penalty(tape, w, self.spec.classes())?;
        let weighted = tape.scale_by(penalty, cfg.lambda_orth)?;
        let loss = tape.add(ce, weighted)?;
        Ok(LossNodes { loss, cross_entropy: ce, penalty: Some(penalty), recorded })
    }

    /// Training-mode loss value without touching any state.
    pub fn total_loss(&self, batch: &DomainBatch, cfg: &TrainConfig) -> Result<f64> {
        let mut tape = Tape::new();
        let params = self.register_params(&mut tape);
        let nodes = self.record_loss(&mut tape, &params, batch, cfg, Mode::Train, None)?;
        Ok(tape.value(nodes.loss)[(0, 0)])
    }

    /// Loss gradients in parameter order, plus the tape that produced them.
    pub fn loss_gradients(&self, batch: &DomainBatch, cfg: &TrainConfig) -> Result<(Vec<Matrix>, Tape, LossNodes)> {
        let mut tape = Tape::new();
        let params = self.register_params(&mut tape);
        let nodes = self.record_loss(&mut tape, &params, batch, cfg, Mode::Train, None)?;
        let grads = tape.backward(nodes.loss)?;
        let ordered = params.iter().map(|&p| grads.wrt(p).cloned()).collect::<Result<Vec<_>>>()?;
        Ok((ordered, tape, nodes))
    }

    /// `velocity ← momentum·velocity − lr·grad`, `param ← param + velocity`.
    pub fn sgd_step(&mut self, grads: &[Matrix], cfg: &TrainConfig) -> Result<()> {
        if grads.len() != self.velocity.len() {
            return Err(Error::invalid(format!("{} gradients for {} parameters", grads.len(), self.velocity.len())));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged(self.step as usize));
        }
        let mut velocity = std::mem::take(&mut self.velocity);
        for ((param, v), g) in self.param_slices_mut().into_iter().zip(&mut velocity).zip(grads) {
            if v.data().len() != g.data().len() || param.len() != g.data().len() {
                return Err(Error::Shape { op: "sgd_step", left: v.shape(), right: g.shape() });
            }
            sgd_update(param, v.data_mut(), g.data(), cfg.learning_rate, cfg.momentum);
        }
        self.velocity = velocity;
        self.step += 1;
        if !self.params_finite() {
            return Err(Error::Diverged(self.step as usize));
        }
        Ok(())
    }

    fn apply_running(&mut self, fresh: Vec<Fresh>) -> Result<()> {
        for (norm, update) in self.norms.iter_mut().zip(fresh) {
            match (norm, update) {
                (NormLayer::Bn(bn), Fresh::Bn(stats)) => update_running_stats(&mut bn.running, &stats, bn.momentum),
                (NormLayer::Tdbn(state), Fresh::Tdbn(s, t, alpha)) => {
                    tdbn_update_running(state, &s, &t)?;
                    state.alpha = Some(alpha);
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// One optimizer step on one batch, including the running-statistics
    /// update of every normalization layer.
    pub fn train_step(&mut self, batch: &DomainBatch, cfg: &TrainConfig) -> Result<StepStats> {
        let (grads, tape, nodes) = self.loss_gradients(batch, cfg)?;
        let stats = StepStats {
            loss: tape.value(nodes.loss)[(0, 0)],
            cross_entropy: tape.value(nodes.cross_entropy)[(0, 0)],
            penalty: match nodes.penalty {
                Some(p) => tape.value(p)[(0, 0)],
                None => orth_penalty(self.classifier(), &OrthPenaltyConfig::new(self.spec.classes()))?,
            },
        };
        if !stats.loss.is_finite() {
            return Err(Error::Diverged(self.step as usize));
        }
        self.sgd_step(&grads, cfg)?;
        self.apply_running(nodes.recorded.fresh)?;
        Ok(stats)
    }

    /// One pass over freshly shuffled paired batches.
    pub fn train_epoch(&mut self, source: &LabeledSet, target: &LabeledSet, cfg: &TrainConfig, epoch: usize) -> Result<EpochSummary> {
        let batches = make_domain_batches(source, target, cfg.batch_size, epoch_seed(cfg.seed, epoch))?;
        let (mut loss, mut penalty) = (0.0, 0.0);
        for batch in &batches {
            let s = self.train_step(batch, cfg)?;
            loss += s.cross_entropy;
            penalty += s.penalty;
        }
        let n = batches.len().max(1) as f64;
        Ok(EpochSummary {
            epoch,
            source_loss: loss / n,
            orth_penalty: penalty / n,
            sv_gap: singular_value_gap(self.classifier())?,
            steps: batches.len(),
        })
    }

    /// Inference-mode pass over one domain with that domain's running statistics.
    pub fn infer(&self, x: &Matrix, domain: Domain) -> Result<Inference> {
        let mut tape = Tape::new();
        let params: Vec<NodeId> = self.param_values().into_iter().map(|p| tape.constant(p)).collect();
        let (s, t) = match domain {
            Domain::Source => (Some(x), None),
            Domain::Target => (None, Some(x)),
        };
        let rec = self.record_forward(&mut tape, &params, s, t, Mode::Eval, None)?;
        let d = domain_index(domain);
        let get = |id: Option<NodeId>| tape.value(id.expect("domain recorded")).clone();
        Ok(Inference {
            logits: get(rec.logits[d]),
            penultimate: get(rec.penultimate[d]),
            normalized: rec.normalized.iter().map(|pair| get(pair[d])).collect(),
        })
    }

    /// Both domains through the layers with batch statistics, as in
    /// training, but without touching running statistics or parameters.
    pub fn batch_features(&self, source: &Matrix, target: &Matrix) -> Result<[Inference; 2]> {
        let mut tape = Tape::new();
        let params: Vec<NodeId> = self.param_values().into_iter().map(|p| tape.constant(p)).collect();
        let rec = self.record_forward(&mut tape, &params, Some(source), Some(target), Mode::Train, None)?;
        let get = |id: Option<NodeId>| tape.value(id.expect("domain recorded")).clone();
        let side = |d: usize| Inference {
            logits: get(rec.logits[d]),
            penultimate: get(rec.penultimate[d]),
            normalized: rec.normalized.iter().map(|pair| get(pair[d])).collect(),
        };
        Ok([side(0), side(1)])
    }

    pub fn predict(&self, x: &Matrix, domain: Domain) -> Result<Vec<usize>> {
        Ok(argmax_columns(&self.infer(x, domain)?.logits))
    }

    /// Fraction of samples whose arg-max logit is the true label.
    pub fn evaluate(&self, x: &Matrix, labels: &[usize], domain: Domain) -> Result<f64> {
        if labels.len() != x.cols() {
            return Err(Error::invalid(format!("{} labels for {} samples", labels.len(), x.cols())));
        }
        if labels.is_empty() {
            return Err(Error::invalid("cannot evaluate an empty set"));
        }
        let hits = self.predict(x, domain)?.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

fn record_bn(
    tape: &mut Tape,
    bn: &BnLayer,
    z: [Option<NodeId>; 2],
    gamma: NodeId,
    beta: NodeId,
    mode: Mode,
) -> Result<([Option<NodeId>; 2], Fresh)> {
    let eps = bn.params.epsilon;
    let mut xhat = [None, None];
    let update = match mode {
        Mode::Train => {
            let zs = z[0].expect("source batch");
            let c = tape.value(zs).rows();
            let (mean, centered) = record_center(tape, zs)?;
            let sq = tape.square(centered)?;
            let var = tape.mean_rows(sq)?;
            let ridge = tape.constant(Matrix::filled(c, 1, eps));
            let shifted = tape.add(var, ridge)?;
            let inv_std = tape.recip_sqrt(shifted)?;
            for d in 0..2 {
                let Some(x) = z[d] else { continue };
                let m = tape.value(x).cols();
                let centered = if d == 0 {
                    centered
                } else {
                    let wide = tape.broadcast_column(mean, m)?;
                    tape.sub(x, wide)?
                };
                let scale = tape.broadcast_column(inv_std, m)?;
                xhat[d] = Some(tape.hadamard(centered, scale)?);
            }
            Fresh::Bn(batch_stats(tape.value(zs), eps)?)
        }
        Mode::Eval => {
            let mean = Matrix::column(&bn.running.mean);
            let inv: Vec<f64> = bn.running.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let inv = Matrix::column(&inv);
            for d in 0..2 {
                let Some(x) = z[d] else { continue };
                let m = tape.value(x).cols();
                let mean = tape.constant(mean.broadcast_column(m)?);
                let inv = tape.constant(inv.broadcast_column(m)?);
                let centered = tape.sub(x, mean)?;
                xhat[d] = Some(tape.hadamard(centered, inv)?);
            }
            Fresh::None
        }
    };
    let mut y = [None, None];
    for d in 0..2 {
        if let Some(x) = xhat[d] {
            y[d] = Some(record_affine(tape, x, gamma, beta)?);
        }
    }
    Ok((y, update))
}

fn record_tdbn(
    tape: &mut Tape,
    state: &TdbnState,
    z: [Option<NodeId>; 2],
    gamma: NodeId,
    beta: NodeId,
    mode: Mode,
    frozen: Option<&Vec<f64>>,
) -> Result<([Option<NodeId>; 2], Vec<f64>, Fresh)> {
    let eps = state.params.epsilon;
    let (steps, group) = (state.newton_steps, state.group_size);
    let mut xhat = [None, None];
    let (alpha, update) = match mode {
        Mode::Train => {
            let (Some(zs), Some(zt)) = (z[0], z[1]) else {
                return Err(Error::invalid("training requires both source and target batches"));
            };
            let fresh_s = batch_stats(tape.value(zs), eps)?;
            let fresh_t = batch_stats(tape.value(zt), eps)?;
            let alpha = match frozen {
                Some(a) => a.clone(),
                None => transferability_alpha(&fresh_s, &fresh_t, eps)?,
            };
            xhat[0] = Some(record_whiten(tape, zs, eps, steps, group)?);
            xhat[1] = Some(record_whiten(tape, zt, eps, steps, group)?);
            (alpha.clone(), Fresh::Tdbn(fresh_s, fresh_t, alpha))
        }
        Mode::Eval => {
            let alpha = match frozen {
                Some(a) => a.clone(),
                None => state.inference_alpha()?,
            };
            for (d, domain) in [Domain::Source, Domain::Target].into_iter().enumerate() {
                let Some(x) = z[d] else { continue };
                let running = state.running(domain);
                let m = tape.value(x).cols();
                let w = tape.constant(whitening_matrix(&running.cov, steps, group)?);
                let mean = tape.constant(Matrix::column(&running.mean).broadcast_column(m)?);
                let centered = tape.sub(x, mean)?;
                xhat[d] = Some(tape.gemm(w, centered)?);
            }
            (alpha, Fresh::None)
        }
    };
    if alpha.len() != state.channels() {
        return Err(Error::invalid(format!("gate has {} entries for {} channels", alpha.len(), state.channels())));
    }
    let mut y = [None, None];
    for d in 0..2 {
        if let Some(x) = xhat[d] {
            let affine = record_affine(tape, x, gamma, beta)?;
            y[d] = Some(record_gate(tape, affine, &alpha)?);
        }
    }
    Ok((y, alpha, update))
}

fn check_labels(labels: &[usize], classes: usize, m: usize) -> Result<()> {
    if labels.len() != m {
        return Err(Error::invalid(format!("{} labels for {m} samples", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean negative log-softmax of the true class, max-shifted per column.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    let (k, m) = logits.shape();
    check_labels(labels, k, m)?;
    let mut total = 0.0;
    for (c, &y) in labels.iter().enumerate() {
        let top = (0..k).map(|r| logits[(r, c)]).fold(f64::NEG_INFINITY, f64::max);
        let lse = top + (0..k).map(|r| (logits[(r, c)] - top).exp()).sum::<f64>().ln();
        total += lse - logits[(y, c)];
    }
    Ok(total / m as f64)
}

/// Records [`cross_entropy`] on the tape.
pub fn record_cross_entropy(tape: &mut Tape, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let (k, m) = tape.value(logits).shape();
    check_labels(labels, k, m)?;
    let w = -1.0 / m as f64;
    let mut pick = Matrix::zeros(k, m);
    for (c, &y) in labels.iter().enumerate() {
        pick[(y, c)] = w;
    }
    let ls = tape.log_softmax(logits)?;
    let pick = tape.constant(pick);
    let picked = tape.hadamard(ls, pick)?;
    tape.sum_all(picked)
}

/// Heavy-ball update on flat slices.
pub fn sgd_update(param: &mut [f64], velocity: &mut [f64], grad: &[f64], learning_rate: f64, momentum: f64) {
    for ((p, v), g) in param.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - learning_rate * g;
        *p += *v;
    }
}

/// Arg-max row of each column; ties go to the lower index.
pub fn argmax_columns(x: &Matrix) -> Vec<usize> {
    (0..x.cols())
        .map(|c| (0..x.rows()).fold(0, |best, r| if x[(r, c)] > x[(best, c)] { r } else { best }))
        .collect()
}

/// Forward pass of one hidden affine-plus-relu layer with no normalization,
/// composed from plain matrix operations.
pub fn dense_relu(w: &Matrix, b: &Matrix, x: &Matrix) -> Result<Matrix> {
    Ok(gemm(w, x)?.add(&b.broadcast_column(x.cols())?)?.map(|v| v.max(0.0)))
}
