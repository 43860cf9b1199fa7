use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{
    encode_idx_images, encode_idx_labels, gen_synthetic_pair, load_idx_set, quantize_features, value_range, LabeledSet,
};
use crate::diagnostics::{a_distance, domain_classifier_error, feature_similarity, feature_spectrum, SimilarityReport, SpectrumReport};
use crate::error::{Error, Result};
use crate::model::{EpochSummary, ModelState};
use crate::normalization::{batch_stats, newton_inv_sqrt, whiten, whitening_residual, Domain};
use crate::orthogonality::{amgm_check, gram, init_unit_rows, penalty_descent, AmGm, DescentPoint, OrthPenaltyConfig};
use crate::tensor::{frobenius_distance, gaussian_matrix, gemm, random_spd, sym_eig};
use crate::Matrix;

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::{DataConfig, OrthoDemoConfig, RunConfig, WhitenCheckConfig};
use super::metrics::{write_atomic, write_metrics_csv, MetricsRecord};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const RESOLVED_CONFIG_FILE: &str = "config.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const WHITEN_CHECK_FILE: &str = "whiten_check.csv";
pub const ORTHO_DEMO_FILE: &str = "ortho_demo.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Train,
    Diagnose,
    WhitenCheck,
    OrthoDemo,
    GenData,
}

impl Subcommand {
    pub const ALL: [Subcommand; 5] =
        [Subcommand::Train, Subcommand::Diagnose, Subcommand::WhitenCheck, Subcommand::OrthoDemo, Subcommand::GenData];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Train => "train",
            Subcommand::Diagnose => "diagnose",
            Subcommand::WhitenCheck => "whiten-check",
            Subcommand::OrthoDemo => "ortho-demo",
            Subcommand::GenData => "gen-data",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown subcommand `{s}`")))
    }
}

/// Training and held-out samples of both domains.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub source_train: LabeledSet,
    pub source_test: LabeledSet,
    pub target_train: LabeledSet,
    pub target_test: LabeledSet,
}

/// Every `stride`-th sample (offset `stride − 1`) goes to the second set;
/// `stride = 0` returns the full set twice.
pub fn holdout_split(set: &LabeledSet, stride: usize) -> (LabeledSet, LabeledSet) {
    if stride == 0 {
        return (set.clone(), set.clone());
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..set.len()).partition(|i| i % stride == stride - 1);
    (set.select(&train), set.select(&test))
}

pub fn load_data(cfg: &RunConfig) -> Result<(LabeledSet, LabeledSet)> {
    match cfg.data.as_ref().ok_or_else(|| Error::config("data", "missing section"))? {
        DataConfig::Synthetic(spec) => gen_synthetic_pair(spec),
        DataConfig::Idx(p) => Ok((
            load_idx_set(&p.source_images, &p.source_labels)?,
            load_idx_set(&p.target_images, &p.target_labels)?,
        )),
    }
}

pub fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let (source, target) = load_data(cfg)?;
    let spec = cfg.model_spec()?;
    for set in [&source, &target] {
        if set.dim() != spec.input_dim() {
            return Err(Error::config(
                "model.layer_sizes",
                format!("input width {} does not match data dimension {}", spec.input_dim(), set.dim()),
            ));
        }
        if let Some(&bad) = set.y.iter().find(|&&y| y >= spec.classes()) {
            return Err(Error::config("model.layer_sizes", format!("label {bad} exceeds the output width")));
        }
    }
    let stride = cfg.eval.holdout_stride;
    let (source_train, source_test) = holdout_split(&source, stride);
    let (target_train, target_test) = holdout_split(&target, stride);
    Ok(Splits { source_train, source_test, target_train, target_test })
}

/// Proxy A-distance between the held-out penultimate features of both
/// domains, each computed in inference mode with its own running statistics.
pub fn penultimate_a_distance(model: &ModelState, splits: &Splits, seed: u64) -> Result<(f64, f64)> {
    let fs = model.infer(&splits.source_test.x, Domain::Source)?.penultimate;
    let ft = model.infer(&splits.target_test.x, Domain::Target)?.penultimate;
    let err = domain_classifier_error(&fs, &ft, seed)?;
    Ok((err, a_distance(err)?))
}

/// Post-normalization target features of each hidden layer on the held-out
/// batch, normalized with batch statistics.
pub fn heldout_layer_features(model: &ModelState, splits: &Splits) -> Result<[Vec<Matrix>; 2]> {
    let [s, t] = model.batch_features(&splits.source_test.x, &splits.target_test.x)?;
    Ok([s.normalized, t.normalized])
}

fn epoch_record(model: &ModelState, summary: &EpochSummary, splits: &Splits, seed: u64) -> Result<MetricsRecord> {
    let [_, target_layers] = heldout_layer_features(model, splits)?;
    Ok(MetricsRecord {
        epoch: summary.epoch + 1,
        source_loss: summary.source_loss,
        orth_penalty: summary.orth_penalty,
        sv_gap: summary.sv_gap,
        source_acc: model.evaluate(&splits.source_test.x, &splits.source_test.y, Domain::Source)?,
        target_acc: model.evaluate(&splits.target_test.x, &splits.target_test.y, Domain::Target)?,
        a_distance: penultimate_a_distance(model, splits, seed).map_or(f64::NAN, |(_, d)| d),
        spectrum_uniformity: target_layers
            .iter()
            .enumerate()
            .map(|(l, f)| feature_spectrum(f, l + 1).map_or(f64::NAN, |r| r.uniformity))
            .collect(),
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub records: Vec<MetricsRecord>,
    pub splits: Splits,
}

/// Full training run with one metrics record per epoch.
pub fn run_training(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    let mut model = ModelState::init(&cfg.model_spec()?, &cfg.train)?;
    let mut records = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        let summary = model.train_epoch(&splits.source_train, &splits.target_train, &cfg.train, epoch)?;
        records.push(epoch_record(&model, &summary, &splits, cfg.train.seed)?);
    }
    Ok(TrainOutcome { model, records, splits })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    pub source_spectrum: SpectrumReport,
    pub target_spectrum: SpectrumReport,
    pub source_similarity: SimilarityReport,
    pub target_similarity: SimilarityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub step: u64,
    pub source_acc: f64,
    pub target_acc: f64,
    pub domain_classifier_error: f64,
    pub a_distance: f64,
    pub layers: Vec<LayerDiagnostics>,
}

pub fn diagnose(model: &ModelState, splits: &Splits, seed: u64) -> Result<DiagnosticsReport> {
    let [source_layers, target_layers] = heldout_layer_features(model, splits)?;
    let layers = source_layers
        .iter()
        .zip(&target_layers)
        .enumerate()
        .map(|(l, (s, t))| {
            Ok(LayerDiagnostics {
                layer: l + 1,
                source_spectrum: feature_spectrum(s, l + 1)?,
                target_spectrum: feature_spectrum(t, l + 1)?,
                source_similarity: feature_similarity(s, l + 1)?,
                target_similarity: feature_similarity(t, l + 1)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (err, d_a) = penultimate_a_distance(model, splits, seed)?;
    Ok(DiagnosticsReport {
        step: model.step,
        source_acc: model.evaluate(&splits.source_test.x, &splits.source_test.y, Domain::Source)?,
        target_acc: model.evaluate(&splits.target_test.x, &splits.target_test.y, Domain::Target)?,
        domain_classifier_error: err,
        a_distance: d_a,
        layers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhitenRow {
    pub newton_steps: usize,
    /// `‖cov(X̂) − I‖_F / √c` on the sampled batch.
    pub residual: f64,
    /// Relative Frobenius error of the Newton inverse square root of the
    /// population covariance against the eigendecomposition.
    pub inv_sqrt_error: f64,
}

/// Samples a batch with covariance `random_spd(dim, cond, seed)` and whitens
/// it with `T = 1..=max_steps` Newton steps.
pub fn whiten_check(cfg: &WhitenCheckConfig) -> Result<Vec<WhitenRow>> {
    let sigma: Matrix = random_spd(cfg.dim, cfg.condition_number, cfg.seed)?;
    let eig = sym_eig(&sigma)?;
    let root = eig.reconstruct_with(f64::sqrt);
    let oracle = eig.reconstruct_with(|l| 1.0 / l.sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let x = gemm(&root, &gaussian_matrix(cfg.dim, cfg.samples, &mut rng))?;
    let stats = batch_stats(&x, cfg.epsilon)?;
    (1..=cfg.max_steps)
        .map(|t| {
            Ok(WhitenRow {
                newton_steps: t,
                residual: whitening_residual(&whiten(&x, &stats, t, None)?)?,
                inv_sqrt_error: frobenius_distance(&newton_inv_sqrt(&sigma, t)?, &oracle)? / oracle.frobenius_norm(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthoDemoOutcome {
    pub weights: Matrix,
    pub trace: Vec<DescentPoint>,
    pub amgm: AmGm<f64>,
}

/// Penalty-only descent from unit-norm random rows.
pub fn ortho_demo(cfg: &OrthoDemoConfig) -> Result<OrthoDemoOutcome> {
    let w0: Matrix = init_unit_rows(cfg.n, cfg.m, cfg.seed);
    let (weights, trace) = penalty_descent(
        &w0,
        &OrthPenaltyConfig::new(cfg.n),
        cfg.learning_rate,
        cfg.momentum,
        cfg.steps,
        cfg.record_every,
    )?;
    let eig = sym_eig(&gram(&weights))?;
    let amgm = amgm_check(&eig.eigenvalues)?;
    Ok(OrthoDemoOutcome { weights, trace, amgm })
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

/// Runs one subcommand, writing its artifacts under `cfg.output_dir`.
pub fn run_subcommand(cmd: Subcommand, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    match cmd {
        Subcommand::Train => {
            let resolved = cfg.to_json();
            println!("{resolved}");
            write_text(&out_path(cfg, RESOLVED_CONFIG_FILE), &(resolved + "\n"))?;
            let outcome = run_training(cfg)?;
            let hidden = outcome.model.spec.hidden_layers();
            write_metrics_csv(&outcome.records, hidden, out_path(cfg, METRICS_FILE))?;
            save_checkpoint(&outcome.model, out_path(cfg, CHECKPOINT_FILE))?;
            for r in &outcome.records {
                println!(
                    "epoch {:>3}  loss {:.4}  penalty {:.3e}  sv_gap {:.4}  src {:.3}  tgt {:.3}  d_A {:.3}",
                    r.epoch, r.source_loss, r.orth_penalty, r.sv_gap, r.source_acc, r.target_acc, r.a_distance
                );
            }
            println!("wrote {}", cfg.output_dir.display());
        }
        Subcommand::Diagnose => {
            let model = load_checkpoint(out_path(cfg, CHECKPOINT_FILE))?;
            if model.spec != cfg.model_spec()? {
                return Err(Error::config("model", "checkpoint layout differs from the configured model"));
            }
            let report = diagnose(&model, &load_splits(cfg)?, cfg.train.seed)?;
            write_text(&out_path(cfg, DIAGNOSTICS_FILE), &(serde_json::to_string_pretty(&report)? + "\n"))?;
            println!("source_acc {:.4}  target_acc {:.4}  a_distance {:.4}", report.source_acc, report.target_acc, report.a_distance);
            for l in &report.layers {
                println!(
                    "L{}  uniformity src {:.4} tgt {:.4}  mean|cos| src {:.4} tgt {:.4}",
                    l.layer,
                    l.source_spectrum.uniformity,
                    l.target_spectrum.uniformity,
                    l.source_similarity.mean_abs_cosine,
                    l.target_similarity.mean_abs_cosine
                );
            }
        }
        Subcommand::WhitenCheck => {
            let rows = whiten_check(&cfg.whiten_check)?;
            let mut csv = String::from("newton_steps,whitening_residual,inv_sqrt_rel_error\n");
            println!("{:>5}  {:>14}  {:>14}", "T", "residual", "inv_sqrt_err");
            for r in &rows {
                csv += &format!("{},{:e},{:e}\n", r.newton_steps, r.residual, r.inv_sqrt_error);
                println!("{:>5}  {:>14.6e}  {:>14.6e}", r.newton_steps, r.residual, r.inv_sqrt_error);
            }
            write_text(&out_path(cfg, WHITEN_CHECK_FILE), &csv)?;
        }
        Subcommand::OrthoDemo => {
            let outcome = ortho_demo(&cfg.ortho_demo)?;
            let mut csv = String::from("step,penalty,sv_gap\n");
            for p in &outcome.trace {
                csv += &format!("{},{:e},{:e}\n", p.step, p.penalty, p.sv_gap);
            }
            write_text(&out_path(cfg, ORTHO_DEMO_FILE), &csv)?;
            let last = outcome.trace.last().expect("trace has the initial point");
            println!(
                "step {}  penalty {:.3e}  sv_gap {:.3e}  am {:.12}  gm {:.12}  equality {}",
                last.step, last.penalty, last.sv_gap, outcome.amgm.mean, outcome.amgm.geomean, outcome.amgm.equality
            );
        }
        Subcommand::GenData => {
            let (source, target) = load_data(cfg)?;
            let range = value_range(&[&source.x, &target.x]);
            for (name, set) in [("source", &source), ("target", &target)] {
                let pixels = quantize_features(&set.x, range);
                let images = encode_idx_images(&pixels, set.len(), 1, set.dim())?;
                let labels: Vec<u8> = set
                    .y
                    .iter()
                    .map(|&y| u8::try_from(y).map_err(|_| Error::invalid("IDX labels hold at most 256 classes")))
                    .collect::<Result<_>>()?;
                write_atomic(&out_path(cfg, &format!("{name}_images.idx")), &images)?;
                write_atomic(&out_path(cfg, &format!("{name}_labels.idx")), &encode_idx_labels(&labels))?;
                println!("{name}: {} samples x {} features", set.len(), set.dim());
            }
            println!("wrote {}", cfg.output_dir.display());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subcommand_names_round_trip() {
        for c in Subcommand::ALL {
            assert_eq!(c.name().parse::<Subcommand>().unwrap(), c);
        }
        assert!("fit".parse::<Subcommand>().is_err());
    }

    #[test]
    fn holdout_split_partitions() {
        let set = LabeledSet::new(Matrix::from_fn(1, 10, |_, c| c as f64), vec![0; 10], 2).unwrap();
        let (train, test) = holdout_split(&set, 4);
        assert_eq!(test.x.row(0), &[3.0, 7.0]);
        assert_eq!(train.len(), 8);
        let (a, b) = holdout_split(&set, 0);
        assert_eq!((a.len(), b.len()), (10, 10));
    }

    #[test]
    fn whiten_check_residuals_fall() {
        let rows = whiten_check(&WhitenCheckConfig::default()).unwrap();
        assert_eq!(rows.len(), 10);
        assert!(rows.windows(2).all(|w| w[1].residual < w[0].residual), "{rows:?}");
        assert!(rows[..9].windows(2).all(|w| w[1].inv_sqrt_error < w[0].inv_sqrt_error), "{rows:?}");
        assert!(rows[9].residual < 1e-4 && rows[9].inv_sqrt_error < 1e-10, "{rows:?}");
    }
}
