//! Binary checkpoints: model parameters plus loss state.
//!
//! Layout (all little-endian): magic "MGTSCKPT", format version, an
//! architecture digest, length-prefixed named parameter blocks, the
//! instance-matching state (centers, queue, head, tau, eta), and a trailing
//! FNV-1a checksum over everything before it. Loading verifies the magic,
//! version, digest and checksum before touching any values.

use super::{fnv1a, MgtsModel, ModelCfg};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::oimloss::OimState;
use std::path::Path;

const MAGIC: &[u8; 8] = b"MGTSCKPT";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }

    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn save_checkpoint(path: &Path, model: &MgtsModel, state: &OimState) -> Result<()> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(model.cfg.digest());

    let params = model.named_params();
    w.u32(params.len() as u32);
    for (name, p) in &params {
        w.bytes(name.as_bytes());
        w.u32(p.value.shape().len() as u32);
        for &d in p.value.shape() {
            w.u32(d as u32);
        }
        w.f64s(p.value.data());
    }

    w.f64(state.tau);
    w.f64(state.eta);
    w.u32(state.capacity() as u32);
    w.u32(state.head() as u32);
    w.u32(state.num_classes() as u32);
    w.u32(state.dim() as u32);
    for row in state.lut_rows() {
        w.f64s(row);
    }
    w.u32(state.raw_queue().len() as u32);
    for q in state.raw_queue() {
        w.f64s(q);
    }

    let sum = fnv1a(&w.buf);
    w.u64(sum);
    std::fs::write(path, &w.buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, cfg: &ModelCfg) -> Result<(MgtsModel, OimState)> {
    let buf = std::fs::read(path)?;
    if buf.len() < MAGIC.len() + 4 + 8 + 8 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, tail) = buf.split_at(buf.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if fnv1a(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let digest = r.u64()?;
    if digest != cfg.digest() {
        return Err(Error::Checkpoint(
            "architecture digest mismatch: checkpoint was written by a different config".into(),
        ));
    }

    let mut model = MgtsModel::new(cfg.clone(), 0)?;
    let n_params = r.u32()? as usize;
    if n_params != model.named_params().len() {
        return Err(Error::Checkpoint(format!(
            "parameter count {} vs expected {}",
            n_params,
            model.named_params().len()
        )));
    }
    for _ in 0..n_params {
        let name = String::from_utf8(r.bytes()?.to_vec())
            .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let data = r.f64s(n)?;
        let t = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("parameter '{name}': {e}")))?;
        model.set_param(&name, t)?;
    }

    let tau = r.f64()?;
    let eta = r.f64()?;
    let capacity = r.u32()? as usize;
    let head = r.u32()? as usize;
    let l = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim != cfg.embed_dim {
        return Err(Error::Checkpoint(format!(
            "state dim {} vs embed_dim {}",
            dim, cfg.embed_dim
        )));
    }
    let mut lut = Vec::with_capacity(l);
    for _ in 0..l {
        lut.push(r.f64s(dim)?);
    }
    let n_queue = r.u32()? as usize;
    if n_queue > capacity || (n_queue < capacity && head != 0) || head >= capacity.max(1) {
        return Err(Error::Checkpoint("inconsistent queue state".into()));
    }
    let mut queue = Vec::with_capacity(n_queue);
    for _ in 0..n_queue {
        queue.push(r.f64s(dim)?);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after state".into()));
    }
    if l == 0 || capacity == 0 {
        return Err(Error::Checkpoint("empty state".into()));
    }
    let state = OimState::restore(lut, queue, head, capacity, tau, eta);
    Ok((model, state))
}

#[cfg(test)]
mod tests {
    use super::super::{MgtsModel, ModelCfg, Variant};
    use super::*;
    use crate::oimloss::{lut_update, queue_push};
    use crate::rng::Rng;

    fn cfg() -> ModelCfg {
        ModelCfg {
            channel_plan: vec![4, 8],
            embed_dim: 8,
            se_reduction: 4,
            input_h: 16,
            input_w: 8,
            ..ModelCfg::default()
        }
    }

    fn sample_state() -> OimState {
        let mut state = OimState::new(3, 8, 5, 1.0 / 30.0, 0.5).unwrap();
        let mut rng = Rng::new(7);
        for t in 1..=3 {
            let v: Vec<f64> = (0..8).map(|_| rng.gaussian()).collect();
            lut_update(&mut state, &v, t).unwrap();
        }
        for _ in 0..7 {
            let u: Vec<f64> = (0..8).map(|_| rng.gaussian()).collect();
            queue_push(&mut state, &u).unwrap();
        }
        state
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let model = MgtsModel::new(cfg(), 11).unwrap();
        let state = sample_state();
        save_checkpoint(&p1, &model, &state).unwrap();
        let (m2, s2) = load_checkpoint(&p1, &cfg()).unwrap();
        save_checkpoint(&p2, &m2, &s2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(state, s2);
        for ((n1, a), (n2, b)) in model.named_params().iter().zip(m2.named_params()) {
            assert_eq!(*n1, n2);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn any_flipped_byte_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let model = MgtsModel::new(cfg(), 3).unwrap();
        save_checkpoint(&p, &model, &sample_state()).unwrap();
        let orig = std::fs::read(&p).unwrap();
        let mut rng = Rng::new(0);
        for _ in 0..20 {
            let mut bad = orig.clone();
            let i = rng.below(bad.len());
            bad[i] ^= 0x40;
            std::fs::write(&p, &bad).unwrap();
            assert!(load_checkpoint(&p, &cfg()).is_err(), "byte {i}");
        }
    }

    #[test]
    fn wrong_architecture_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ckpt");
        let model = MgtsModel::new(cfg(), 3).unwrap();
        save_checkpoint(&p, &model, &sample_state()).unwrap();
        let other = ModelCfg {
            variant: Variant::SingleO,
            ..cfg()
        };
        assert!(matches!(
            load_checkpoint(&p, &other),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.ckpt");
        let model = MgtsModel::new(cfg(), 3).unwrap();
        save_checkpoint(&p, &model, &sample_state()).unwrap();
        let orig = std::fs::read(&p).unwrap();
        std::fs::write(&p, &orig[..orig.len() / 2]).unwrap();
        assert!(load_checkpoint(&p, &cfg()).is_err());
    }
}
