//! `CPACNET1` network checkpoints.
//!
//! Layout (little-endian): the 8-byte magic, `u32` layer count (encoder
//! layers then decoder layers), and per layer `u32` rows, `u32` cols followed
//! by the row-major `f64` weights and then the `cols` bias values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::net::{Activation, Dense, MlpAutoencoder};
use crate::binio::*;
use crate::error::{Error, Result};

pub const NET_MAGIC: &[u8; 8] = b"CPACNET1";

pub fn write_net<W: Write>(w: &mut W, net: &MlpAutoencoder) -> Result<()> {
    w.write_all(NET_MAGIC)?;
    let layers: Vec<&Dense> = net
        .encoder_layers()
        .iter()
        .chain(net.decoder_layers())
        .collect();
    write_len(w, layers.len(), "layer count")?;
    for layer in layers {
        write_len(w, layer.weights.nrows(), "rows")?;
        write_len(w, layer.weights.ncols(), "cols")?;
        write_f64s(w, layer.weights.as_slice().expect("standard layout"))?;
        write_f64s(w, layer.bias.as_slice().expect("contiguous"))?;
    }
    Ok(())
}

pub fn read_net<R: Read>(r: &mut R, dropout_rate: f64) -> Result<MlpAutoencoder> {
    read_magic(r, NET_MAGIC)?;
    let count = read_u32(r, "layer count")? as usize;
    if count == 0 || count % 2 != 0 {
        return Err(Error::Format(format!(
            "layer count {count} is not a positive even number"
        )));
    }
    let mut layers = Vec::with_capacity(count);
    for l in 0..count {
        let rows = read_u32(r, "rows")? as usize;
        let cols = read_u32(r, "cols")? as usize;
        let weights = read_f64s(r, rows * cols, "weights")?;
        let bias = read_f64s(r, cols, "biases")?;
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "layer {l} holds non-finite parameters"
            )));
        }
        let weights = Array2::from_shape_vec((rows, cols), weights)
            .map_err(|e| Error::Format(e.to_string()))?;
        layers.push(Dense::new(weights, Array1::from(bias), Activation::Relu)?);
    }
    expect_eof(r)?;
    let decoder = layers.split_off(count / 2);
    MlpAutoencoder::from_layers(layers, decoder, dropout_rate)
}

pub fn save_net(path: &Path, net: &MlpAutoencoder) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_net(&mut w, net)?;
    w.flush()?;
    Ok(())
}

pub fn load_net(path: &Path, dropout_rate: f64) -> Result<MlpAutoencoder> {
    let mut r = BufReader::new(File::open(path)?);
    read_net(&mut r, dropout_rate)
}
