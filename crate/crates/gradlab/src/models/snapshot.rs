//! Bit-exact binary serialization for model snapshots and gradient
//! bundles (little-endian f64 payloads, shape headers per tensor).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{BundleScope, DenseModel, GradientBundle, LeNetModel, Model};
use crate::numerics::Tensor;

const MODEL_MAGIC: &[u8; 4] = b"GLSN";
const BUNDLE_MAGIC: &[u8; 4] = b"GLGB";
const VERSION: u32 = 1;

pub(crate) fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn push_tensor(out: &mut Vec<u8>, t: &Tensor) {
    push_u32(out, t.ndim() as u32);
    for &d in t.shape() {
        push_u32(out, d as u32);
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
    pub(crate) path: String,
}

impl<'a> Reader<'a> {
    pub(crate) fn fail(&self, reason: &str) -> Error {
        Error::BadSnapshot {
            path: self.path.clone(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| self.fail("unexpected end of file"))?;
        self.pos += n;
        Ok(slice)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(self.fail("implausible tensor rank"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = self.take(len * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        Tensor::from_vec(&shape, data)
            .map_err(|e| self.fail(&format!("invalid tensor payload: {e}")))
    }

    pub(crate) fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Serializes a model to its snapshot byte form.
pub(crate) fn model_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    push_u32(&mut out, VERSION);
    match model {
        Model::Dense(d) => {
            out.push(0);
            push_tensor(&mut out, &d.weights);
            push_tensor(&mut out, &d.bias);
        }
        Model::Lenet(l) => {
            out.push(1);
            push_u32(&mut out, l.input_h() as u32);
            push_u32(&mut out, l.input_w() as u32);
            push_u32(&mut out, l.kernel() as u32);
            push_u32(&mut out, l.channels() as u32);
            push_u32(&mut out, l.num_classes() as u32);
            for t in model.params() {
                push_tensor(&mut out, t);
            }
        }
    }
    out
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&model_bytes(model))?;
    Ok(())
}

pub(crate) fn read_model(r: &mut Reader<'_>) -> Result<Model> {
    if r.take(4)? != MODEL_MAGIC {
        return Err(r.fail("bad magic"));
    }
    if r.u32()? != VERSION {
        return Err(r.fail("unsupported version"));
    }
    let model = match r.u8()? {
        0 => {
            let weights = r.tensor()?;
            let bias = r.tensor()?;
            Model::Dense(DenseModel::new(weights, bias)?)
        }
        1 => {
            let input_h = r.u32()? as usize;
            let input_w = r.u32()? as usize;
            let kernel = r.u32()? as usize;
            let channels = r.u32()? as usize;
            let num_classes = r.u32()? as usize;
            let tensors: Vec<Tensor> = (0..6).map(|_| r.tensor()).collect::<Result<_>>()?;
            Model::Lenet(LeNetModel::from_parts(
                tensors, input_h, input_w, kernel, channels, num_classes,
            )?)
        }
        k => return Err(r.fail(&format!("unknown model kind {k}"))),
    };
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    let model = read_model(&mut r)?;
    if !r.done() {
        return Err(r.fail("trailing bytes"));
    }
    Ok(model)
}

pub(crate) fn bundle_bytes(bundle: &GradientBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BUNDLE_MAGIC);
    push_u32(&mut out, VERSION);
    match bundle.scope {
        BundleScope::Averaged => {
            out.push(0);
            push_u32(&mut out, 0);
        }
        BundleScope::PerSample(b) => {
            out.push(1);
            push_u32(&mut out, b as u32);
        }
    }
    push_u32(&mut out, bundle.grads.len() as u32);
    for t in &bundle.grads {
        push_tensor(&mut out, t);
    }
    out
}

pub fn save_bundle(path: &Path, bundle: &GradientBundle) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&bundle_bytes(bundle))?;
    Ok(())
}

pub(crate) fn read_bundle(r: &mut Reader<'_>) -> Result<GradientBundle> {
    if r.take(4)? != BUNDLE_MAGIC {
        return Err(r.fail("bad magic"));
    }
    if r.u32()? != VERSION {
        return Err(r.fail("unsupported version"));
    }
    let scope = match (r.u8()?, r.u32()? as usize) {
        (0, _) => BundleScope::Averaged,
        (1, b) => BundleScope::PerSample(b),
        (k, _) => return Err(r.fail(&format!("unknown scope {k}"))),
    };
    let count = r.u32()? as usize;
    let grads: Vec<Tensor> = (0..count).map(|_| r.tensor()).collect::<Result<_>>()?;
    Ok(GradientBundle { grads, scope })
}

pub fn load_bundle(path: &Path) -> Result<GradientBundle> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    let bundle = read_bundle(&mut r)?;
    if !r.done() {
        return Err(r.fail("trailing bytes"));
    }
    Ok(bundle)
}
