use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// One epoch of a training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub source_loss: f64,
    pub orth_penalty: f64,
    pub sv_gap: f64,
    pub source_acc: f64,
    pub target_acc: f64,
    pub a_distance: f64,
    /// One entry per hidden layer.
    pub spectrum_uniformity: Vec<f64>,
}

pub fn metrics_header(hidden_layers: usize) -> String {
    let mut h = String::from("epoch,source_loss,orth_penalty,sv_gap,source_acc,target_acc,a_distance");
    for l in 1..=hidden_layers {
        write!(h, ",spectrum_uniformity_L{l}").unwrap();
    }
    h
}

fn render(records: &[MetricsRecord], hidden_layers: usize) -> String {
    let mut out = metrics_header(hidden_layers);
    out.push('\n');
    for r in records {
        write!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.source_loss, r.orth_penalty, r.sv_gap, r.source_acc, r.target_acc, r.a_distance
        )
        .unwrap();
        for l in 0..hidden_layers {
            write!(out, ",{:.6}", r.spectrum_uniformity.get(l).copied().unwrap_or(f64::NAN)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Writes `contents` next to `path` and renames it into place.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Header plus one row per record, reals at six decimals.
pub fn write_metrics_csv(records: &[MetricsRecord], hidden_layers: usize, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), render(records, hidden_layers).as_bytes())
}
