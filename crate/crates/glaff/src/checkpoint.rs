//! Checkpoint serialization: a binary manifest of named parameter tensors
//! followed by flat little-endian IEEE-754 f32 arrays. save→load→save is
//! byte-idempotent; the manifest validates shapes before any data loads.

use std::path::Path;

use crate::backbone::BackboneKind;
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::plugin::{BackboneSpec, GlaffConfig, GlaffModel, ModelSpec};
use crate::tensor::Tensor;
use crate::timefeat::FeatureMode;

const MAGIC: &[u8; 4] = b"GLFC";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn encode_spec(w: &mut Writer, spec: &ModelSpec) {
    w.u32(spec.history as u32);
    w.u32(spec.horizon as u32);
    w.u32(spec.channels as u32);
    w.u8(match spec.feature_mode {
        FeatureMode::Raw => 0,
        FeatureMode::Scaled => 1,
    });
    w.u8(u8::from(spec.freeze_backbone));
    match &spec.plugin {
        None => w.u8(0),
        Some(cfg) => {
            w.u8(1);
            w.u32(cfg.dim as u32);
            w.u32(cfg.dff as u32);
            w.u32(cfg.heads as u32);
            w.u32(cfg.layers as u32);
            w.f64(cfg.dropout);
            w.f64(cfg.quantile);
            let bits = u8::from(cfg.no_attention)
                | u8::from(cfg.no_quantile) << 1
                | u8::from(cfg.no_adaptive) << 2
                | u8::from(cfg.no_backbone) << 3;
            w.u8(bits);
        }
    }
    match &spec.backbone {
        None => w.u8(0),
        Some(bb) => {
            w.u8(match bb.kind {
                BackboneKind::DLinear => 1,
                BackboneKind::SeasonalNaive => 2,
            });
            w.u32(bb.kernel as u32);
            w.u32(bb.period as u32);
        }
    }
}

fn decode_spec(r: &mut Reader) -> Result<ModelSpec> {
    let history = r.u32()? as usize;
    let horizon = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let feature_mode = match r.u8()? {
        0 => FeatureMode::Raw,
        1 => FeatureMode::Scaled,
        v => return Err(Error::Checkpoint(format!("unknown feature mode tag {v}"))),
    };
    let freeze_backbone = r.u8()? != 0;
    let plugin = match r.u8()? {
        0 => None,
        1 => {
            let dim = r.u32()? as usize;
            let dff = r.u32()? as usize;
            let heads = r.u32()? as usize;
            let layers = r.u32()? as usize;
            let dropout = r.f64()?;
            let quantile = r.f64()?;
            let bits = r.u8()?;
            Some(GlaffConfig {
                dim,
                dff,
                heads,
                layers,
                dropout,
                quantile,
                feature_mode,
                no_attention: bits & 1 != 0,
                no_quantile: bits & 2 != 0,
                no_adaptive: bits & 4 != 0,
                no_backbone: bits & 8 != 0,
            })
        }
        v => return Err(Error::Checkpoint(format!("unknown plugin tag {v}"))),
    };
    let backbone = match r.u8()? {
        0 => None,
        tag => {
            let kind = match tag {
                1 => BackboneKind::DLinear,
                2 => BackboneKind::SeasonalNaive,
                v => return Err(Error::Checkpoint(format!("unknown backbone tag {v}"))),
            };
            let kernel = r.u32()? as usize;
            let period = r.u32()? as usize;
            Some(BackboneSpec {
                kind,
                kernel,
                period,
            })
        }
    };
    Ok(ModelSpec {
        history,
        horizon,
        channels,
        feature_mode,
        plugin,
        backbone,
        freeze_backbone,
    })
}

/// Serialize the model to bytes (spec header + tensor manifest + f32 data).
pub fn encode_checkpoint(model: &mut GlaffModel, spec: &ModelSpec) -> Vec<u8> {
    let mut w = Writer {
        buf: Vec::with_capacity(1 << 16),
    };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    encode_spec(&mut w, spec);

    let mut entries: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    model.visit_params("", &mut |name, t| {
        let data: Vec<f32> = t.data().iter().map(|&v| v as f32).collect();
        entries.push((name, t.shape().to_vec(), data));
    });
    w.u32(entries.len() as u32);
    for (name, shape, data) in &entries {
        w.u16(name.len() as u16);
        w.buf.extend_from_slice(name.as_bytes());
        w.u8(DTYPE_F32);
        w.u8(shape.len() as u8);
        for &d in shape {
            w.u32(d as u32);
        }
        for &v in data {
            w.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.buf
}

/// Write atomically: to a temp file in the same directory, then rename.
pub fn save_checkpoint(model: &mut GlaffModel, spec: &ModelSpec, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, spec);
    crate::ioutil::write_atomic(path, &bytes)
}

/// Rebuild the model from bytes, validating the manifest as it goes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(GlaffModel, ModelSpec)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic (not a checkpoint)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let spec = decode_spec(&mut r)?;
    let count = r.u32()? as usize;
    let mut entries: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("non-utf8 tensor name".into()))?
            .to_string();
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Checkpoint(format!(
                "unsupported dtype {dtype} for '{name}'"
            )));
        }
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        entries.push((name, shape, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after manifest",
            bytes.len() - r.pos
        )));
    }

    let mut model = spec.build(0)?;
    let mut idx = 0usize;
    let mut failure: Option<Error> = None;
    model.visit_params("", &mut |name, t| {
        if failure.is_some() {
            return;
        }
        let Some((e_name, e_shape, e_data)) = entries.get(idx) else {
            failure = Some(Error::Checkpoint(format!(
                "manifest ends early: missing tensor '{name}'"
            )));
            return;
        };
        if *e_name != name {
            failure = Some(Error::Checkpoint(format!(
                "manifest order mismatch: expected '{name}', found '{e_name}'"
            )));
            return;
        }
        if e_shape != t.shape() {
            failure = Some(Error::Checkpoint(format!(
                "shape mismatch for '{name}': file {e_shape:?}, model {:?}",
                t.shape()
            )));
            return;
        }
        *t = Tensor::param(e_shape.clone(), e_data.clone());
        idx += 1;
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if idx != entries.len() {
        return Err(Error::Checkpoint(format!(
            "{} extra tensors in manifest",
            entries.len() - idx
        )));
    }
    Ok((model, spec))
}

pub fn load_checkpoint(path: &Path) -> Result<(GlaffModel, ModelSpec)> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_spec() -> ModelSpec {
        ModelSpec {
            history: 8,
            horizon: 4,
            channels: 2,
            feature_mode: FeatureMode::Raw,
            plugin: Some(GlaffConfig {
                dim: 8,
                dff: 16,
                heads: 2,
                layers: 1,
                dropout: 0.0,
                quantile: 0.75,
                ..GlaffConfig::default()
            }),
            backbone: Some(BackboneSpec::default().with_kernel(3)),
            freeze_backbone: false,
        }
    }

    impl BackboneSpec {
        fn with_kernel(mut self, k: usize) -> Self {
            self.kernel = k;
            self
        }
    }

    #[test]
    fn roundtrip_is_byte_idempotent() {
        let spec = toy_spec();
        let mut model = spec.build(42).unwrap();
        let bytes1 = encode_checkpoint(&mut model, &spec);
        let (mut loaded, spec2) = decode_checkpoint(&bytes1).unwrap();
        let bytes2 = encode_checkpoint(&mut loaded, &spec2);
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn parameters_survive_at_f32_precision() {
        let spec = toy_spec();
        let mut model = spec.build(7).unwrap();
        let bytes = encode_checkpoint(&mut model, &spec);
        let (mut loaded, _) = decode_checkpoint(&bytes).unwrap();
        let mut originals = Vec::new();
        model.visit_params("", &mut |_, t| originals.push(t.data().to_vec()));
        let mut idx = 0;
        loaded.visit_params("", &mut |_, t| {
            for (a, b) in t.data().iter().zip(&originals[idx]) {
                assert_eq!(*a, *b as f32 as f64);
            }
            idx += 1;
        });
    }

    #[test]
    fn truncated_and_corrupt_files_are_rejected() {
        let spec = toy_spec();
        let mut model = spec.build(1).unwrap();
        let bytes = encode_checkpoint(&mut model, &spec);
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() / 2]),
            Err(Error::Checkpoint(_))
        ));
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bad_magic),
            Err(Error::Checkpoint(_))
        ));
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(
            decode_checkpoint(&trailing),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let spec = toy_spec();
        let mut model = spec.build(1).unwrap();
        let mut bytes = encode_checkpoint(&mut model, &spec);
        // corrupt the first tensor's first dim (right after its name/dtype)
        // header layout: magic(4)+version(4)+spec; find the tensor count and
        // walk to the first shape field instead of hardcoding offsets
        let mut r = Reader {
            buf: &bytes,
            pos: 0,
        };
        r.take(4).unwrap();
        r.u32().unwrap();
        decode_spec(&mut r).unwrap();
        r.u32().unwrap(); // count
        let name_len = r.u16().unwrap() as usize;
        r.take(name_len).unwrap();
        r.u8().unwrap(); // dtype
        r.u8().unwrap(); // ndim
        let dim_pos = r.pos;
        bytes[dim_pos..dim_pos + 4].copy_from_slice(&999u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::Checkpoint(m)) if m.contains("mismatch") || m.contains("truncated")
        ));
    }

    #[test]
    fn save_and_load_via_files(){
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let spec = toy_spec();
        let mut model = spec.build(3).unwrap();
        save_checkpoint(&mut model, &spec, &path).unwrap();
        let (_loaded, spec2) = load_checkpoint(&path).unwrap();
        assert_eq!(spec2.channels, 2);
        assert_eq!(spec2.history, 8);
        // save→load→save produces identical files
        let b1 = std::fs::read(&path).unwrap();
        let (mut again, spec3) = decode_checkpoint(&b1).unwrap();
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&mut again, &spec3, &path2).unwrap();
        assert_eq!(b1, std::fs::read(&path2).unwrap());
    }
}
