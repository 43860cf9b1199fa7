//! Binary checkpoint: `BRDX`, a little-endian `u32` version, then the model
//! layout and every payload as little-endian `u64` dimensions followed by
//! little-endian `f64` values.
//!
//! ```text
//! magic "BRDX" | version u32
//! layer_sizes: u64 len, u64...      norm kinds: u8 per hidden layer (0 none, 1 bn, 2 tdbn)
//! step u64
//! params: u64 count, matrix...      velocity: u64 count, matrix...
//! per normalized layer:
//!   bn:   eps f64, momentum f64, stats
//!   tdbn: eps f64, momentum f64, newton_steps u64, group_size u64 (0 = none),
//!         stats (source), stats (target), has_alpha u8, [vector]
//! matrix = rows u64, cols u64, f64...    vector = len u64, f64...
//! stats  = mean vector, var vector, cov matrix, count u64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ModelState, NormKind, NormLayer, TrainConfig};
use crate::{DomainStats, Matrix};

use super::metrics::write_atomic;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"BRDX";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn vector(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn matrix(&mut self, m: &Matrix) {
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        m.data().iter().for_each(|&x| self.f64(x));
    }
    fn stats(&mut self, s: &DomainStats) {
        self.vector(&s.mean);
        self.vector(&s.var);
        self.matrix(&s.cov);
        self.u64(s.count as u64);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated { expected: self.pos.saturating_add(n), actual: self.bytes.len() });
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("dimension overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("payload too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn vector(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        self.values(n)
    }
    fn matrix(&mut self) -> Result<Matrix> {
        let (r, c) = (self.usize()?, self.usize()?);
        let n = r.checked_mul(c).ok_or_else(|| Error::Checkpoint("matrix too large".into()))?;
        Matrix::from_vec(r, c, self.values(n)?)
    }
    fn stats(&mut self, channels: usize) -> Result<DomainStats> {
        let s = DomainStats { mean: self.vector()?, var: self.vector()?, cov: self.matrix()?, count: self.usize()? };
        if s.mean.len() != channels || s.var.len() != channels || s.cov.shape() != (channels, channels) {
            return Err(Error::Checkpoint(format!("statistics do not match {channels} channels")));
        }
        Ok(s)
    }
}

fn kind_code(kind: NormKind) -> u8 {
    match kind {
        NormKind::None => 0,
        NormKind::Bn => 1,
        NormKind::Tdbn => 2,
    }
}

pub fn encode_checkpoint(model: &ModelState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&CHECKPOINT_MAGIC);
    w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    w.u64(model.spec.layer_sizes.len() as u64);
    model.spec.layer_sizes.iter().for_each(|&s| w.u64(s as u64));
    model.spec.norm_kinds.iter().for_each(|&k| w.u8(kind_code(k)));
    w.u64(model.step);
    let params = model.param_values();
    w.u64(params.len() as u64);
    params.iter().for_each(|p| w.matrix(p));
    w.u64(model.velocity.len() as u64);
    model.velocity.iter().for_each(|v| w.matrix(v));
    for norm in &model.norms {
        match norm {
            NormLayer::None => {}
            NormLayer::Bn(bn) => {
                w.f64(bn.params.epsilon);
                w.f64(bn.momentum);
                w.stats(&bn.running);
            }
            NormLayer::Tdbn(t) => {
                w.f64(t.params.epsilon);
                w.f64(t.momentum);
                w.u64(t.newton_steps as u64);
                w.u64(t.group_size.unwrap_or(0) as u64);
                w.stats(&t.running_source);
                w.stats(&t.running_target);
                match &t.alpha {
                    None => w.u8(0),
                    Some(a) => {
                        w.u8(1);
                        w.vector(a);
                    }
                }
            }
        }
    }
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { observed: magic });
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.usize()?;
    if n > bytes.len() {
        return Err(Error::Checkpoint("implausible layer count".into()));
    }
    let layer_sizes = (0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let hidden = n.saturating_sub(2);
    let norm_kinds = (0..hidden)
        .map(|_| match r.u8()? {
            0 => Ok(NormKind::None),
            1 => Ok(NormKind::Bn),
            2 => Ok(NormKind::Tdbn),
            k => Err(Error::Checkpoint(format!("unknown norm kind {k}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = ModelSpec { layer_sizes, norm_kinds };
    spec.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut model = ModelState::init(&spec, &TrainConfig::default())?;
    model.step = r.u64()?;

    let count = r.usize()?;
    let params = (0..count.min(bytes.len())).map(|_| r.matrix()).collect::<Result<Vec<_>>>()?;
    model.set_params(&params)?;
    let count = r.usize()?;
    let velocity = (0..count.min(bytes.len())).map(|_| r.matrix()).collect::<Result<Vec<_>>>()?;
    if velocity.len() != model.velocity.len() || velocity.iter().zip(&params).any(|(v, p)| v.shape() != p.shape()) {
        return Err(Error::Checkpoint("velocity does not match parameters".into()));
    }
    model.velocity = velocity;

    for (norm, &c) in model.norms.iter_mut().zip(&spec.layer_sizes[1..]) {
        match norm {
            NormLayer::None => {}
            NormLayer::Bn(bn) => {
                bn.params.epsilon = r.f64()?;
                bn.momentum = r.f64()?;
                bn.running = r.stats(c)?;
            }
            NormLayer::Tdbn(t) => {
                t.params.epsilon = r.f64()?;
                t.momentum = r.f64()?;
                t.newton_steps = r.usize()?;
                t.group_size = Some(r.usize()?).filter(|&g| g > 0);
                t.running_source = r.stats(c)?;
                t.running_target = r.stats(c)?;
                t.alpha = match r.u8()? {
                    0 => None,
                    _ => Some(r.vector()?),
                };
                if t.alpha.as_ref().is_some_and(|a| a.len() != c) {
                    return Err(Error::Checkpoint("gate length does not match channels".into()));
                }
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(model))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_pair, SyntheticPairSpec};
    use crate::normalization::Domain;

    fn trained(norms: Vec<NormKind>) -> (ModelState, crate::data::LabeledSet) {
        let spec = SyntheticPairSpec {
            classes: 3,
            dim: 4,
            samples_per_class: 12,
            rotation_deg: 30.0,
            translation: vec![],
            noise_sigma: 1.0,
            class_separation: 4.0,
            seed: 2,
        };
        let (s, t) = gen_synthetic_pair(&spec).unwrap();
        let cfg = TrainConfig { batch_size: 8, learning_rate: 0.01, group_size: Some(3), ..TrainConfig::default() };
        let mspec = ModelSpec { layer_sizes: vec![4, 6, 5, 3], norm_kinds: norms };
        let mut m = ModelState::init(&mspec, &cfg).unwrap();
        m.train_epoch(&s, &t, &cfg, 0).unwrap();
        (m, t)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for norms in [vec![NormKind::Tdbn, NormKind::Bn], vec![NormKind::None, NormKind::Tdbn]] {
            let (m, t) = trained(norms);
            let bytes = encode_checkpoint(&m);
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode_checkpoint(&back), bytes);
            assert_eq!(
                back.evaluate(&t.x, &t.y, Domain::Target).unwrap(),
                m.evaluate(&t.x, &t.y, Domain::Target).unwrap()
            );
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let (m, _) = trained(vec![NormKind::Tdbn, NormKind::Tdbn]);
        let bytes = encode_checkpoint(&m);
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::BadMagic { .. })));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(decode_checkpoint(&version), Err(Error::Checkpoint(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode_checkpoint(&extra), Err(Error::Checkpoint(_))));
        assert!(matches!(load_checkpoint("/nonexistent/ckpt.bin"), Err(Error::MissingFile(_))));
    }
}
