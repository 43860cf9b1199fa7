#![allow(dead_code)]

use biredux::autodiff::{grad_check, NodeId, Primitive};
use biredux::cli::config::{DataConfig, EvalConfig, ModelConfig, NormSetting, RunConfig};
use biredux::data::{DomainBatch, SyntheticPairSpec};
use biredux::model::{ModelSpec, ModelState, NormKind, TrainConfig};
use biredux::normalization::{record_affine, record_gate, record_whiten, Mode};
use biredux::tensor::{gaussian_matrix, Mat};
use biredux::{Matrix, Result, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

pub const FD_STEP: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    gaussian_matrix(rows, cols, &mut rng(seed))
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Matrix {
    let mut r = rng(seed);
    let u = Uniform::new(lo, hi).unwrap();
    Mat::from_fn(rows, cols, |_, _| u.sample(&mut r))
}

/// `Σ wᵢⱼ·yᵢⱼ` with fixed weights, so every output entry reaches the loss
/// with a distinct coefficient.
pub fn weighted_sum(t: &mut Tape, y: NodeId, seed: u64) -> Result<NodeId> {
    let (r, c) = t.value(y).shape();
    let w = t.constant(gaussian(r, c, seed ^ 0xA5A5));
    let p = t.hadamard(y, w)?;
    t.sum_all(p)
}

pub const PRIMITIVES: [Primitive; 13] = [
    Primitive::Gemm,
    Primitive::Transpose,
    Primitive::Add,
    Primitive::Subtract,
    Primitive::Scale,
    Primitive::Hadamard,
    Primitive::BroadcastColumn { width: 5 },
    Primitive::ReduceMeanRows,
    Primitive::Trace,
    Primitive::LuDet,
    Primitive::RecipSqrt,
    Primitive::Relu,
    Primitive::LogSoftmaxColumns,
];

/// Input for a primitive's gradient check, kept inside its smooth domain.
pub fn primitive_input(p: Primitive, seed: u64) -> Matrix {
    match p {
        Primitive::Scale | Primitive::Trace => gaussian(3, 3, seed),
        Primitive::LuDet => gaussian(3, 3, seed).add(&Mat::identity(3).scale(3.0)).unwrap(),
        Primitive::BroadcastColumn { .. } => gaussian(4, 1, seed),
        Primitive::RecipSqrt => uniform(3, 4, 0.5, 2.0, seed),
        Primitive::Relu => {
            let mut r = rng(seed);
            let mag = Uniform::new(0.05, 2.0).unwrap();
            Mat::from_fn(3, 4, |_, _| if r.random::<bool>() { mag.sample(&mut r) } else { -mag.sample(&mut r) })
        }
        _ => gaussian(3, 4, seed),
    }
}

/// Scalar objective exercising `p` with the leaf in every operand slot.
pub fn primitive_objective(p: Primitive, seed: u64) -> impl Fn(&mut Tape, NodeId) -> Result<NodeId> {
    move |t: &mut Tape, x: NodeId| {
        let (r, c) = t.value(x).shape();
        let y = match p {
            Primitive::Gemm => {
                let right = t.constant(gaussian(c, 2, seed ^ 1));
                let left = t.constant(gaussian(2, r, seed ^ 2));
                let a = t.gemm(x, right)?;
                let b = t.gemm(left, x)?;
                let a = weighted_sum(t, a, seed)?;
                let b = weighted_sum(t, b, seed ^ 3)?;
                t.add(a, b)?
            }
            Primitive::Add | Primitive::Subtract | Primitive::Hadamard => {
                let k = t.constant(gaussian(r, c, seed ^ 1));
                let (a, b) = match p {
                    Primitive::Add => (t.add(x, k)?, t.add(k, x)?),
                    Primitive::Subtract => (t.sub(x, k)?, t.sub(k, x)?),
                    _ => (t.hadamard(x, k)?, t.hadamard(x, x)?),
                };
                let a = weighted_sum(t, a, seed)?;
                let b = weighted_sum(t, b, seed ^ 3)?;
                t.add(a, b)?
            }
            Primitive::Scale => {
                let s = t.trace(x)?;
                let k = t.constant(gaussian(r, c, seed ^ 1));
                let half = t.constant_scalar(0.5);
                let a = t.scale(x, half)?;
                let b = t.scale(k, s)?;
                let a = weighted_sum(t, a, seed)?;
                let b = weighted_sum(t, b, seed ^ 3)?;
                t.add(a, b)?
            }
            Primitive::Trace | Primitive::LuDet => {
                let y = t.record(p, &[x])?;
                let s = t.constant_scalar(1.5);
                t.scale(y, s)?
            }
            _ => {
                let y = t.record(p, &[x])?;
                weighted_sum(t, y, seed)?
            }
        };
        Ok(y)
    }
}

pub fn primitive_grad_error(p: Primitive, seed: u64) -> Result<f64> {
    grad_check(primitive_objective(p, seed), &primitive_input(p, seed), FD_STEP)
}

/// Worst relative error of whitening + affine + constant gate, checked
/// with respect to the batch, `γ` and `β` in turn.
pub fn whiten_forward_grad_error(seed: u64) -> Result<f64> {
    let (c, m, steps, eps) = (4, 16, 5, 1e-5);
    let mix = gaussian(c, c, seed ^ 7).add(&Mat::identity(c).scale(2.0))?;
    let x = biredux::tensor::gemm(&mix, &gaussian(c, m, seed))?;
    let gamma = uniform(c, 1, 0.5, 1.5, seed ^ 11);
    let beta = gaussian(c, 1, seed ^ 13);
    let alpha: Vec<f64> = uniform(c, 1, 0.5, 1.5, seed ^ 17).into_vec();
    let build = |t: &mut Tape, leaf: NodeId, slot: usize| -> Result<NodeId> {
        let xs = if slot == 0 { leaf } else { t.constant(x.clone()) };
        let g = if slot == 1 { leaf } else { t.constant(gamma.clone()) };
        let b = if slot == 2 { leaf } else { t.constant(beta.clone()) };
        let white = record_whiten(t, xs, eps, steps, None)?;
        let y = record_affine(t, white, g, b)?;
        let y = record_gate(t, y, &alpha)?;
        weighted_sum(t, y, seed)
    };
    let mut worst: f64 = 0.0;
    for (slot, at) in [&x, &gamma, &beta].into_iter().enumerate() {
        worst = worst.max(grad_check(|t, leaf| build(t, leaf, slot), at, FD_STEP)?);
    }
    Ok(worst)
}

/// A two-sample-per-domain batch for full-model gradient checks.
pub fn tiny_batch(input: usize, classes: usize, seed: u64) -> DomainBatch {
    let mut r = rng(seed);
    DomainBatch {
        source_x: gaussian(input, 2, seed),
        source_y: (0..2).map(|_| r.random_range(0..classes)).collect(),
        target_x: gaussian(input, 2, seed ^ 0x5EED).add(&Mat::filled(input, 2, 0.5)).unwrap(),
        target_y: (0..2).map(|_| r.random_range(0..classes)).collect(),
    }
}

/// Worst relative error over every parameter of a one-hidden-layer model,
/// with the transferability gate frozen at its value for the batch.
pub fn full_model_grad_error(norm: NormKind, seed: u64) -> Result<f64> {
    let spec = ModelSpec::uniform(vec![5, 4, 3], norm)?;
    let cfg = TrainConfig { seed, batch_size: 4, ..TrainConfig::default() };
    let model = ModelState::init(&spec, &cfg)?;
    let batch = tiny_batch(5, 3, seed);

    let mut probe = Tape::new();
    let ids = model.register_params(&mut probe);
    let rec = model.record_forward(&mut probe, &ids, Some(&batch.source_x), Some(&batch.target_x), Mode::Train, None)?;
    let frozen: Vec<Vec<f64>> = rec.alphas.into_iter().map(Option::unwrap_or_default).collect();

    let values = model.param_values();
    let mut worst: f64 = 0.0;
    for i in 0..values.len() {
        let objective = |t: &mut Tape, leaf: NodeId| -> Result<NodeId> {
            let ids: Vec<NodeId> = values
                .iter()
                .enumerate()
                .map(|(j, v)| if j == i { leaf } else { t.constant(v.clone()) })
                .collect();
            Ok(model.record_loss(t, &ids, &batch, &cfg, Mode::Train, Some(&frozen))?.loss)
        };
        worst = worst.max(grad_check(objective, &values[i], FD_STEP)?);
    }
    Ok(worst)
}

pub const DESK_CLASSES: usize = 4;
pub const DESK_DIM: usize = 16;
pub const DESK_HIDDEN: usize = 8;

/// The rotated-Gaussian comparison setup: 4 classes in 16 dimensions,
/// 45° rotation, translation of norm 3, unit noise, one hidden layer of 8.
pub fn desk_config(norm: NormKind, lambda_orth: f64, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        model: Some(ModelConfig {
            layer_sizes: vec![DESK_DIM, DESK_HIDDEN, DESK_CLASSES],
            norm_kind: NormSetting::Uniform(norm),
        }),
        train: TrainConfig { newton_steps: 10, lambda_orth, ..TrainConfig::default() },
        data: Some(DataConfig::Synthetic(SyntheticPairSpec {
            classes: DESK_CLASSES,
            dim: DESK_DIM,
            samples_per_class: 100,
            rotation_deg: 45.0,
            translation: SyntheticPairSpec::even_translation(DESK_DIM, 3.0),
            noise_sigma: 1.0,
            class_separation: biredux::data::DEFAULT_CLASS_SEPARATION,
            seed,
        })),
        output_dir: "out".into(),
        eval: EvalConfig::default(),
        ortho_demo: Default::default(),
        whiten_check: Default::default(),
    };
    cfg.override_seed(seed);
    cfg
}
