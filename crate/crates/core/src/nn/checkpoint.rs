//! Versioned binary parameter checkpoint.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"GCNN"
//! version  u32
//! layers   u32
//! per layer:
//!   kind        u8   0 = dense, 1 = conv
//!   activation  u8   0 = relu, 1 = linear
//!   dense: fan_in u32, fan_out u32
//!   conv:  kernel u32, in_channels u32, out_channels u32
//!   weights     f64 x rows*cols, row-major
//!   bias        f64 x rows
//! ```

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{Activation, LayerParams, LayerSpec, NnError, Parameters};

pub const MAGIC: &[u8; 4] = b"GCNN";
pub const VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<(), NnError> {
    let v = u32::try_from(v).map_err(|_| NnError::Checkpoint(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_u8<R: Read>(r: &mut R) -> Result<u8, NnError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, NnError> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_network<W: Write>(mut w: W, specs: &[LayerSpec], params: &Parameters) -> Result<(), NnError> {
    if !params.matches(specs) {
        return Err(NnError::Checkpoint("parameters do not match layer specs".into()));
    }
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION as usize)?;
    put_u32(&mut w, specs.len())?;
    for (spec, layer) in specs.iter().zip(&params.layers) {
        let act = match spec.activation() {
            Activation::Relu => 0u8,
            Activation::Linear => 1u8,
        };
        match *spec {
            LayerSpec::Dense { fan_in, fan_out, .. } => {
                w.write_all(&[0, act])?;
                put_u32(&mut w, fan_in)?;
                put_u32(&mut w, fan_out)?;
            }
            LayerSpec::Conv {
                kernel,
                in_channels,
                out_channels,
                ..
            } => {
                w.write_all(&[1, act])?;
                put_u32(&mut w, kernel)?;
                put_u32(&mut w, in_channels)?;
                put_u32(&mut w, out_channels)?;
            }
        }
        let mut buf = Vec::with_capacity((layer.weights.len() + layer.bias.len()) * 8);
        for v in layer.weights.iter().chain(layer.bias.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_network<R: Read>(mut r: R) -> Result<(Vec<LayerSpec>, Parameters), NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION as usize {
        return Err(NnError::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = get_u32(&mut r)?;
    let mut specs = Vec::with_capacity(count);
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = get_u8(&mut r)?;
        let activation = match get_u8(&mut r)? {
            0 => Activation::Relu,
            1 => Activation::Linear,
            a => return Err(NnError::Checkpoint(format!("unknown activation {a}"))),
        };
        let spec = match kind {
            0 => LayerSpec::dense(get_u32(&mut r)?, get_u32(&mut r)?, activation),
            1 => LayerSpec::conv(get_u32(&mut r)?, get_u32(&mut r)?, get_u32(&mut r)?, activation),
            k => return Err(NnError::Checkpoint(format!("unknown layer kind {k}"))),
        };
        spec.validate()?;
        let (rows, cols) = spec.weight_shape();
        let weights = Array2::from_shape_vec((rows, cols), get_f64s(&mut r, rows * cols)?)
            .map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let bias = Array1::from(get_f64s(&mut r, rows)?);
        specs.push(spec);
        layers.push(LayerParams { weights, bias });
    }
    Ok((specs, Parameters { layers }))
}
