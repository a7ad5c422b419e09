//! `dsse-model/1` checkpoint: a little-endian binary file.
//!
//! ```text
//! b"dsse-model/1\n"
//! u32 feature layout version, u32 update order (1 = vertices first)
//! u64 d, u64 T, u64 mlp_layers, u64 mlp_hidden, f64 dropout
//! f64[10] weight scales, then bus mean/std and branch mean/std as
//!   u64 length + f64 values
//! u64 mlp count, per MLP: u8 tanh output, u64 layers, per layer:
//!   u64 rows, u64 cols, f64 weights (row-major), f64 biases
//! ```

use std::path::Path;

use super::{Dense, FeatureNormalizer, Mlp, Model, ModelConfig, ModelParams, FEATURE_LAYOUT_VERSION};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MODEL_SCHEMA: &str = "dsse-model/1";
const UPDATE_ORDER_VERTEX_FIRST: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: usize) {
        self.0.extend_from_slice(&(x as u64).to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn vec(&mut self, v: &[f64]) {
        self.u64(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<usize> {
        let x = u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes"));
        usize::try_from(x).map_err(|_| Error::Checkpoint("size overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }
    fn vec(&mut self, expected: usize) -> Result<Vec<f64>> {
        let n = self.u64()?;
        if n != expected {
            return Err(Error::Checkpoint(format!("vector of length {n}, expected {expected}")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn tensor(&mut self, rows: usize, cols: usize) -> Result<Tensor> {
        let len = rows.checked_mul(cols).filter(|&l| l <= self.buf.len() / 8);
        let len = len.ok_or_else(|| Error::Checkpoint("implausible tensor size".into()))?;
        Ok(Tensor::new(rows, cols, (0..len).map(|_| self.f64()).collect::<Result<_>>()?))
    }
}

pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MODEL_SCHEMA.as_bytes());
    w.0.push(b'\n');
    w.u32(FEATURE_LAYOUT_VERSION);
    w.u32(UPDATE_ORDER_VERTEX_FIRST);
    let c = &model.config;
    [c.d, c.t_iters, c.mlp_layers, c.mlp_hidden].iter().for_each(|&x| w.u64(x));
    w.f64(c.dropout);
    let nz = &model.normalizer;
    nz.kind_max.iter().for_each(|&x| w.f64(x));
    for v in [&nz.bus_mean, &nz.bus_std, &nz.branch_mean, &nz.branch_std] {
        w.vec(v);
    }
    let mlps = model.params.mlps();
    w.u64(mlps.len());
    for m in mlps {
        w.0.push(u8::from(m.tanh_output));
        w.u64(m.layers.len());
        for l in &m.layers {
            w.u64(l.w.rows());
            w.u64(l.w.cols());
            l.w.data().iter().chain(l.b.data()).for_each(|&x| w.f64(x));
        }
    }
    w.0
}

pub fn model_from_bytes(buf: &[u8]) -> Result<Model> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.bytes(MODEL_SCHEMA.len() + 1)?;
    if &magic[..MODEL_SCHEMA.len()] != MODEL_SCHEMA.as_bytes() || magic[MODEL_SCHEMA.len()] != b'\n' {
        return Err(Error::Checkpoint(format!("not a {MODEL_SCHEMA} file")));
    }
    let layout = r.u32()?;
    if layout != FEATURE_LAYOUT_VERSION {
        return Err(Error::Checkpoint(format!("feature layout {layout}, expected {FEATURE_LAYOUT_VERSION}")));
    }
    if r.u32()? != UPDATE_ORDER_VERTEX_FIRST {
        return Err(Error::Checkpoint("unsupported update order".into()));
    }
    let config = ModelConfig {
        d: r.u64()?,
        t_iters: r.u64()?,
        mlp_layers: r.u64()?,
        mlp_hidden: r.u64()?,
        dropout: r.f64()?,
    };
    config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut kind_max = [0.0; 10];
    for k in &mut kind_max {
        *k = r.f64()?;
    }
    let normalizer = FeatureNormalizer {
        kind_max,
        bus_mean: r.vec(super::BUS_FEATURES)?,
        bus_std: r.vec(super::BUS_FEATURES)?,
        branch_mean: r.vec(super::BRANCH_FEATURES)?,
        branch_std: r.vec(super::BRANCH_FEATURES)?,
    };
    let shapes = config.mlp_shapes();
    if r.u64()? != shapes.len() {
        return Err(Error::Checkpoint("unexpected number of MLPs".into()));
    }
    let mut mlps = Vec::with_capacity(shapes.len());
    for &(input, output) in &shapes {
        let tanh_output = r.u8()? == 1;
        let sizes = config.layer_sizes(input, output);
        if r.u64()? != sizes.len() - 1 {
            return Err(Error::Checkpoint("unexpected MLP depth".into()));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for pair in sizes.windows(2) {
            let (rows, cols) = (r.u64()?, r.u64()?);
            if (rows, cols) != (pair[0], pair[1]) {
                return Err(Error::Checkpoint(format!("layer {rows}x{cols}, expected {}x{}", pair[0], pair[1])));
            }
            layers.push(Dense { w: r.tensor(rows, cols)?, b: r.tensor(1, cols)? });
        }
        mlps.push(Mlp { layers, tanh_output });
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let mut it = mlps.into_iter();
    let mut next = || it.next().expect("six MLPs");
    let params = ModelParams {
        bus_message: next(),
        branch_message: [next(), next()],
        bus_latent: next(),
        bus_decoder: next(),
        branch_latent: next(),
    };
    Ok(Model { config, normalizer, params })
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&buf)
}
