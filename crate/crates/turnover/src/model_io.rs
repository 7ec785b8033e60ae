//! Binary model checkpoints: config + parameters, little-endian, with a trailing
//! FNV-1a digest. The parser is bounds-checked throughout and never trusts counts
//! before verifying them against the remaining payload.

use std::path::Path;

use crate::data::idx::fnv1a64 as fnv;
use crate::error::{Error, Result};
use crate::nn::{init_params, LayerParams, LayerSpec, ModelConfig, Network, Precision};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TOVR";
const FORMAT_VERSION: u32 = 1;

pub enum LoadedModel {
    F32(Network<f32>),
    F64(Network<f64>),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.pos, "truncated model file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn model_to_bytes<S: Scalar>(net: &Network<S>) -> Vec<u8> {
    let cfg = net.config();
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u8(match cfg.precision {
        Precision::F32 => 0,
        Precision::F64 => 1,
    });
    w.u64(cfg.init_seed);
    w.u32(cfg.input_shape.len() as u32);
    for &d in &cfg.input_shape {
        w.u32(d as u32);
    }
    w.u32(cfg.layers.len() as u32);
    for layer in &cfg.layers {
        match layer {
            LayerSpec::Dense { input, output } => {
                w.u8(0);
                w.u32(*input as u32);
                w.u32(*output as u32);
            }
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } => {
                w.u8(1);
                w.u32(*in_ch as u32);
                w.u32(*out_ch as u32);
                w.u32(*kernel as u32);
                w.u32(*stride as u32);
                w.u32(*pad as u32);
            }
            LayerSpec::Relu => w.u8(2),
            LayerSpec::MaxPool2d { k } => {
                w.u8(3);
                w.u32(*k as u32);
            }
            LayerSpec::Flatten => w.u8(4),
            LayerSpec::SoftmaxHead { classes } => {
                w.u8(5);
                w.u32(*classes as u32);
            }
        }
    }
    let wide = matches!(cfg.precision, Precision::F64);
    for p in net.params().iter().flatten() {
        w.u64(p.weight.len() as u64);
        for v in p.weight.data() {
            push_value(&mut w.buf, v.to_f64(), wide);
        }
        w.u64(p.bias.len() as u64);
        for v in &p.bias {
            push_value(&mut w.buf, v.to_f64(), wide);
        }
    }
    let digest = fnv(&w.buf);
    w.u64(digest);
    w.buf
}

fn push_value(buf: &mut Vec<u8>, v: f64, wide: bool) {
    if wide {
        buf.extend_from_slice(&v.to_le_bytes());
    } else {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn parse_model(bytes: &[u8]) -> Result<LoadedModel> {
    if bytes.len() < 8 {
        return Err(Error::format(0, "file too short for header"));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    if fnv(body) != stored {
        return Err(Error::format(bytes.len() - 8, "model digest mismatch"));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format(0, "bad model magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(4, format!("unsupported model version {version}")));
    }
    let precision = match r.u8()? {
        0 => Precision::F32,
        1 => Precision::F64,
        other => return Err(Error::format(r.pos - 1, format!("bad precision byte {other}"))),
    };
    let init_seed = r.u64()?;
    let shape_len = r.u32()? as usize;
    if shape_len > 8 {
        return Err(Error::format(r.pos - 4, "implausible input rank"));
    }
    let mut input_shape = Vec::with_capacity(shape_len);
    for _ in 0..shape_len {
        input_shape.push(r.u32()? as usize);
    }
    let n_layers = r.u32()? as usize;
    if n_layers > 256 {
        return Err(Error::format(r.pos - 4, "implausible layer count"));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tag = r.u8()?;
        layers.push(match tag {
            0 => LayerSpec::Dense {
                input: r.u32()? as usize,
                output: r.u32()? as usize,
            },
            1 => LayerSpec::Conv2d {
                in_ch: r.u32()? as usize,
                out_ch: r.u32()? as usize,
                kernel: r.u32()? as usize,
                stride: r.u32()? as usize,
                pad: r.u32()? as usize,
            },
            2 => LayerSpec::Relu,
            3 => LayerSpec::MaxPool2d { k: r.u32()? as usize },
            4 => LayerSpec::Flatten,
            5 => LayerSpec::SoftmaxHead { classes: r.u32()? as usize },
            other => return Err(Error::format(r.pos - 1, format!("bad layer tag {other}"))),
        });
    }
    let config = ModelConfig {
        input_shape,
        layers,
        init_seed,
        precision,
    };
    config
        .validate()
        .map_err(|e| Error::format(r.pos, format!("invalid model config: {e}")))?;
    match precision {
        Precision::F32 => Ok(LoadedModel::F32(read_params::<f32>(&config, &mut r)?)),
        Precision::F64 => Ok(LoadedModel::F64(read_params::<f64>(&config, &mut r)?)),
    }
}

fn read_params<S: Scalar>(config: &ModelConfig, r: &mut Reader<'_>) -> Result<Network<S>> {
    let wide = matches!(config.precision, Precision::F64);
    let value_size = if wide { 8 } else { 4 };
    let mut net: Network<S> = init_params(config)?;
    let mut params: Vec<Option<LayerParams<S>>> = Vec::with_capacity(config.layers.len());
    for template in net.params().iter() {
        match template {
            None => params.push(None),
            Some(t) => {
                let w_len = r.u64()? as usize;
                if w_len != t.weight.len() {
                    return Err(Error::format(
                        r.pos - 8,
                        format!("weight count {w_len} does not match config ({})", t.weight.len()),
                    ));
                }
                let w_bytes = r.take(w_len * value_size)?;
                let weight_data = read_values::<S>(w_bytes, wide);
                let b_len = r.u64()? as usize;
                if b_len != t.bias.len() {
                    return Err(Error::format(
                        r.pos - 8,
                        format!("bias count {b_len} does not match config ({})", t.bias.len()),
                    ));
                }
                let b_bytes = r.take(b_len * value_size)?;
                let bias = read_values::<S>(b_bytes, wide);
                params.push(Some(LayerParams {
                    weight: Tensor::from_vec(t.weight.shape(), weight_data)?,
                    bias,
                }));
            }
        }
    }
    if r.pos != r.bytes.len() {
        return Err(Error::format(r.pos, "trailing bytes after parameters"));
    }
    net.set_params(params)?;
    Ok(net)
}

fn read_values<S: Scalar>(bytes: &[u8], wide: bool) -> Vec<S> {
    if wide {
        bytes
            .chunks_exact(8)
            .map(|c| S::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
            .collect()
    } else {
        bytes
            .chunks_exact(4)
            .map(|c| S::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect()
    }
}

pub fn save_model<S: Scalar>(net: &Network<S>, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(net))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let bytes = std::fs::read(path)?;
    parse_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_f64() {
        let cfg = ModelConfig::mlp(6, 12, 4, 11, Precision::F64);
        let net = init_params::<f64>(&cfg).unwrap();
        let bytes = model_to_bytes(&net);
        match parse_model(&bytes).unwrap() {
            LoadedModel::F64(loaded) => {
                assert_eq!(loaded.config(), net.config());
                assert_eq!(loaded.params(), net.params());
            }
            _ => panic!("expected f64 model"),
        }
    }

    #[test]
    fn round_trip_f32_cnn() {
        let cfg = ModelConfig::small_cnn(3, 8, 16, 10, 5, Precision::F32);
        let net = init_params::<f32>(&cfg).unwrap();
        let bytes = model_to_bytes(&net);
        match parse_model(&bytes).unwrap() {
            LoadedModel::F32(loaded) => assert_eq!(loaded.params(), net.params()),
            _ => panic!("expected f32 model"),
        }
    }

    #[test]
    fn corruption_detected() {
        let cfg = ModelConfig::mlp(4, 6, 3, 2, Precision::F32);
        let net = init_params::<f32>(&cfg).unwrap();
        let mut bytes = model_to_bytes(&net);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        assert!(matches!(parse_model(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn truncation_detected() {
        let cfg = ModelConfig::mlp(4, 6, 3, 2, Precision::F32);
        let net = init_params::<f32>(&cfg).unwrap();
        let mut bytes = model_to_bytes(&net);
        bytes.truncate(bytes.len() - 20);
        assert!(parse_model(&bytes).is_err());
    }
}
