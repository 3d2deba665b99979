//! Greedy layerwise pretraining followed by end-to-end fine-tuning.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{backward_layers, forward_layers, Dense, MlpAutoencoder};
use super::optim::Optimizer;
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    /// Hidden sizes after the input layer; the last entry is dim(Z).
    pub hidden: Vec<usize>,
    pub dropout_rate: f64,
    pub layerwise_epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            hidden: MlpAutoencoder::DEFAULT_HIDDEN.to_vec(),
            dropout_rate: MlpAutoencoder::DEFAULT_DROPOUT,
            layerwise_epochs: 50,
            finetune_epochs: 50,
            batch_size: 256,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    /// Full-data reconstruction MSE of the freshly initialized net.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Mean squared reconstruction error per entry, evaluation mode.
pub fn reconstruction_mse(net: &MlpAutoencoder, data: &Array2<f64>) -> Result<f64> {
    let recon = net.reconstruct(data)?;
    Ok((&recon - data).mapv(|v| v * v).sum() / data.len() as f64)
}

fn mse_grad(out: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let diff = out - target;
    let scale = 1.0 / target.len() as f64;
    let loss = diff.mapv(|v| v * v).sum() * scale;
    (loss, diff * (2.0 * scale))
}

fn layer_params(layers: &mut [Dense]) -> Vec<&mut [f64]> {
    layers
        .iter_mut()
        .flat_map(|l| {
            [
                l.weights.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("contiguous"),
            ]
        })
        .collect()
}

/// Trains an autoencoder from scratch: for each encoder layer, the pair
/// (encoder layer, mirrored decoder layer) learns to reconstruct the frozen
/// output of the layers below it; then the whole stack is fine-tuned.
/// Dropout follows every layer except the one producing the reconstruction.
pub fn layerwise_pretrain(
    data: &Array2<f64>,
    config: &PretrainConfig,
    seed: u64,
) -> Result<(MlpAutoencoder, PretrainReport)> {
    if data.nrows() == 0 || data.ncols() == 0 {
        return Err(Error::Input("pretraining data is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    let mut init_rng = substream(seed, Stream::Init);
    let mut net = MlpAutoencoder::new(
        data.ncols(),
        &config.hidden,
        config.dropout_rate,
        &mut init_rng,
    )?;
    let initial_loss = reconstruction_mse(&net, data)?;

    let mut shuffle_rng = substream(seed, Stream::PretrainShuffle);
    let mut drop_rng = substream(seed, Stream::Dropout);
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let depth = net.depth();

    let mut features = data.clone();
    for i in 0..depth {
        if config.layerwise_epochs > 0 {
            let mut pair = vec![
                net.encoder_layers()[i].clone(),
                net.decoder_layers()[depth - 1 - i].clone(),
            ];
            let mut adam = Optimizer::adam(config.learning_rate, config.beta1, config.beta2);
            for epoch in 0..config.layerwise_epochs {
                order.shuffle(&mut shuffle_rng);
                for (b, idx) in order.chunks(config.batch_size).enumerate() {
                    let batch = features.select(Axis(0), idx);
                    let (out, traces) = forward_layers(
                        &pair,
                        &batch,
                        &[true, false],
                        config.dropout_rate,
                        Some(&mut drop_rng),
                    );
                    let (loss, grad) = mse_grad(&out, &batch);
                    if !loss.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "layerwise loss at layer {i}, epoch {epoch}, batch {b}"
                        )));
                    }
                    let (grads, _) = backward_layers(&pair, &traces, grad);
                    let slices: Vec<&[f64]> = grads
                        .iter()
                        .flat_map(|g| {
                            [
                                g.weights.as_slice().expect("standard layout"),
                                g.bias.as_slice().expect("contiguous"),
                            ]
                        })
                        .collect();
                    adam.step(&mut layer_params(&mut pair), &slices)?;
                }
            }
            let dec = pair.pop().expect("pair");
            let enc = pair.pop().expect("pair");
            net.encoder_layers_mut()[i] = enc;
            net.decoder_layers_mut()[depth - 1 - i] = dec;
        }
        if i + 1 < depth {
            let (next, _) =
                forward_layers(&net.encoder_layers()[i..=i], &features, &[false], 0.0, None);
            features = next;
        }
    }

    let mut adam = Optimizer::adam(config.learning_rate, config.beta1, config.beta2);
    for epoch in 0..config.finetune_epochs {
        order.shuffle(&mut shuffle_rng);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch = data.select(Axis(0), idx);
            let trace = net.forward_trace(&batch, true, Some(&mut drop_rng))?;
            let out = trace.output.as_ref().expect("decoder pass requested");
            let (loss, grad) = mse_grad(out, &batch);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "fine-tuning loss at epoch {epoch}, batch {b}"
                )));
            }
            let grads = net.backprop(&trace, Some(&grad), None)?;
            adam.step(&mut net.params_mut(), &grads.slices())?;
        }
    }

    let final_loss = reconstruction_mse(&net, data)?;
    Ok((
        net,
        PretrainReport {
            initial_loss,
            final_loss,
        },
    ))
}
