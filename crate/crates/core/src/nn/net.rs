use ndarray::{Array1, Array2, Axis};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

/// Fully connected layer computing `act(x · W + b)` with `W` stored as
/// `input_dim × output_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.ncols() != bias.len() {
            return Err(Error::dim("dense bias", weights.ncols(), bias.len()));
        }
        // Parameter slices are handed to optimizers, so keep both in standard layout.
        let weights = weights.as_standard_layout().into_owned();
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (input_dim as f64).sqrt();
        let weights = Array2::from_shape_fn((input_dim, output_dim), |_| {
            rng.random_range(-bound..=bound)
        });
        Self {
            weights,
            bias: Array1::zeros(output_dim),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn forward(
        &self,
        x: &Array2<f64>,
        dropout: Option<(f64, &mut dyn RngCore)>,
    ) -> (Array2<f64>, LayerTrace) {
        let mut out = x.dot(&self.weights) + &self.bias;
        let mut gate = match self.activation {
            Activation::Relu => {
                let g = out.mapv(|a| if a > 0.0 { 1.0 } else { 0.0 });
                out.mapv_inplace(|a| a.max(0.0));
                Some(g)
            }
            Activation::Linear => None,
        };
        if let Some((rate, rng)) = dropout {
            if rate > 0.0 {
                let keep = 1.0 / (1.0 - rate);
                let mask = Array2::from_shape_fn(out.raw_dim(), |_| {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                });
                out *= &mask;
                gate = Some(match gate {
                    Some(g) => g * &mask,
                    None => mask,
                });
            }
        }
        (
            out,
            LayerTrace {
                input: x.clone(),
                gate,
            },
        )
    }
}

/// What one layer saw during a forward pass: its input and the elementwise
/// derivative of its output with respect to the pre-activation (ReLU mask
/// times dropout scale), `None` meaning identity.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    input: Array2<f64>,
    gate: Option<Array2<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Forward pass through a stack of layers. `dropout_after[l]` selects whether
/// dropout follows layer `l` when a dropout generator is supplied.
pub(crate) fn forward_layers(
    layers: &[Dense],
    x: &Array2<f64>,
    dropout_after: &[bool],
    rate: f64,
    mut rng: Option<&mut dyn RngCore>,
) -> (Array2<f64>, Vec<LayerTrace>) {
    let mut traces = Vec::with_capacity(layers.len());
    let mut h = x.clone();
    for (l, layer) in layers.iter().enumerate() {
        let drop: Option<(f64, &mut dyn RngCore)> = match rng {
            Some(ref mut r) if dropout_after[l] => Some((rate, &mut **r)),
            _ => None,
        };
        let (out, trace) = layer.forward(&h, drop);
        traces.push(trace);
        h = out;
    }
    (h, traces)
}

pub(crate) fn backward_layers(
    layers: &[Dense],
    traces: &[LayerTrace],
    grad_out: Array2<f64>,
) -> (Vec<LayerGrad>, Array2<f64>) {
    let mut grads = Vec::with_capacity(layers.len());
    let mut grad = grad_out;
    for (layer, trace) in layers.iter().zip(traces).rev() {
        let grad_pre = match &trace.gate {
            Some(g) => grad * g,
            None => grad,
        };
        grads.push(LayerGrad {
            weights: trace
                .input
                .t()
                .dot(&grad_pre)
                .as_standard_layout()
                .into_owned(),
            bias: grad_pre.sum_axis(Axis(0)),
        });
        grad = grad_pre.dot(&layer.weights.t());
    }
    grads.reverse();
    (grads, grad)
}

/// Mirrored encoder/decoder MLP. Every layer is rectified except the final
/// decoder layer, which is linear so reconstructions can be negative.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpAutoencoder {
    encoder: Vec<Dense>,
    decoder: Vec<Dense>,
    dropout_rate: f64,
}

/// Forward-pass record needed by [`MlpAutoencoder::backprop`].
#[derive(Clone, Debug)]
pub struct Trace {
    encoder: Vec<LayerTrace>,
    decoder: Option<Vec<LayerTrace>>,
    pub code: Array2<f64>,
    pub output: Option<Array2<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<LayerGrad>,
    pub decoder: Vec<LayerGrad>,
    /// Gradient with respect to the input batch.
    pub input: Array2<f64>,
}

impl Gradients {
    /// Flattened views in the same order as [`MlpAutoencoder::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|g| {
                [
                    g.weights.as_slice().expect("standard layout"),
                    g.bias.as_slice().expect("contiguous"),
                ]
            })
            .collect()
    }
}

impl MlpAutoencoder {
    pub const DEFAULT_HIDDEN: [usize; 4] = [500, 500, 2000, 10];
    pub const DEFAULT_DROPOUT: f64 = 0.2;

    /// Builds `input_dim - hidden[0] - ... - hidden[L-1]` and its mirror.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Parameter(format!(
                "layer sizes must be positive and non-empty (input {input_dim}, hidden {hidden:?})"
            )));
        }
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        let encoder = sizes
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], Activation::Relu, rng))
            .collect();
        let depth = hidden.len();
        let decoder = (0..depth)
            .map(|j| {
                let (from, to) = (sizes[depth - j], sizes[depth - j - 1]);
                let act = if j + 1 == depth {
                    Activation::Linear
                } else {
                    Activation::Relu
                };
                Dense::init(from, to, act, rng)
            })
            .collect();
        Self::from_layers(encoder, decoder, dropout_rate)
    }

    pub fn from_layers(
        encoder: Vec<Dense>,
        decoder: Vec<Dense>,
        dropout_rate: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Parameter(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        if encoder.is_empty() || encoder.len() != decoder.len() {
            return Err(Error::Parameter(format!(
                "encoder has {} layers but decoder has {}",
                encoder.len(),
                decoder.len()
            )));
        }
        for pair in encoder.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::dim(
                    "encoder chain",
                    pair[0].output_dim(),
                    pair[1].input_dim(),
                ));
            }
        }
        let depth = encoder.len();
        for (j, layer) in decoder.iter().enumerate() {
            let mirror = &encoder[depth - 1 - j];
            if layer.input_dim() != mirror.output_dim() || layer.output_dim() != mirror.input_dim()
            {
                return Err(Error::Parameter(format!(
                    "decoder layer {j} is {}x{}, expected mirror {}x{}",
                    layer.input_dim(),
                    layer.output_dim(),
                    mirror.output_dim(),
                    mirror.input_dim()
                )));
            }
        }
        let mut net = Self {
            encoder,
            decoder,
            dropout_rate,
        };
        for layer in &mut net.encoder {
            layer.activation = Activation::Relu;
        }
        for (j, layer) in net.decoder.iter_mut().enumerate() {
            layer.activation = if j + 1 == depth {
                Activation::Linear
            } else {
                Activation::Relu
            };
        }
        Ok(net)
    }

    /// `[dim(X), hidden..., dim(Z)]`; the decoder is the reverse.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.encoder.iter().map(Dense::output_dim));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].input_dim()
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.last().expect("non-empty encoder").output_dim()
    }

    pub fn depth(&self) -> usize {
        self.encoder.len()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn encoder_layers(&self) -> &[Dense] {
        &self.encoder
    }

    pub fn decoder_layers(&self) -> &[Dense] {
        &self.decoder
    }

    pub(crate) fn encoder_layers_mut(&mut self) -> &mut [Dense] {
        &mut self.encoder
    }

    pub(crate) fn decoder_layers_mut(&mut self) -> &mut [Dense] {
        &mut self.decoder
    }

    fn check_input(&self, batch: &Array2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::dim("encoder input", self.input_dim(), batch.ncols()));
        }
        Ok(())
    }

    /// `Z = Enc(X)`. Dropout is applied only when a generator is given.
    pub fn encode(
        &self,
        batch: &Array2<f64>,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<Array2<f64>> {
        self.check_input(batch)?;
        let after = vec![true; self.depth()];
        let (code, _) = forward_layers(&self.encoder, batch, &after, self.dropout_rate, dropout);
        Ok(code)
    }

    /// `X' = Dec(Z)` in evaluation mode.
    pub fn decode(&self, codes: &Array2<f64>) -> Result<Array2<f64>> {
        if codes.ncols() != self.code_dim() {
            return Err(Error::dim("decoder input", self.code_dim(), codes.ncols()));
        }
        let after = vec![false; self.depth()];
        let (out, _) = forward_layers(&self.decoder, codes, &after, 0.0, None);
        Ok(out)
    }

    pub fn reconstruct(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        self.decode(&self.encode(batch, None)?)
    }

    /// Forward pass that keeps what backprop needs. With `through_decoder`
    /// unset only the encoder runs.
    pub fn forward_trace(
        &self,
        batch: &Array2<f64>,
        through_decoder: bool,
        mut dropout: Option<&mut dyn RngCore>,
    ) -> Result<Trace> {
        self.check_input(batch)?;
        let depth = self.depth();
        let enc_after = vec![true; depth];
        let (code, encoder) = forward_layers(
            &self.encoder,
            batch,
            &enc_after,
            self.dropout_rate,
            match dropout {
                Some(ref mut r) => Some(&mut **r),
                None => None,
            },
        );
        let (decoder, output) = if through_decoder {
            let mut dec_after = vec![true; depth];
            dec_after[depth - 1] = false;
            let (out, traces) =
                forward_layers(&self.decoder, &code, &dec_after, self.dropout_rate, dropout);
            (Some(traces), Some(out))
        } else {
            (None, None)
        };
        Ok(Trace {
            encoder,
            decoder,
            code,
            output,
        })
    }

    /// Exact gradients of a loss given its gradient at the reconstruction
    /// and/or at the code layer.
    pub fn backprop(
        &self,
        trace: &Trace,
        grad_output: Option<&Array2<f64>>,
        grad_code: Option<&Array2<f64>>,
    ) -> Result<Gradients> {
        let rows = trace.code.nrows();
        let mut code_grad = Array2::<f64>::zeros((rows, self.code_dim()));
        let decoder = match grad_output {
            Some(g) => {
                let traces = trace.decoder.as_ref().ok_or_else(|| {
                    Error::State("forward trace does not include the decoder pass".into())
                })?;
                if g.dim() != (rows, self.input_dim()) {
                    return Err(Error::dim(
                        "reconstruction gradient",
                        rows * self.input_dim(),
                        g.len(),
                    ));
                }
                let (grads, into_code) = backward_layers(&self.decoder, traces, g.to_owned());
                code_grad += &into_code;
                grads
            }
            None => self
                .decoder
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        };
        if let Some(g) = grad_code {
            if g.dim() != code_grad.dim() {
                return Err(Error::dim("code gradient", code_grad.len(), g.len()));
            }
            code_grad += g;
        }
        let (encoder, input) = backward_layers(&self.encoder, &trace.encoder, code_grad);
        Ok(Gradients {
            encoder,
            decoder,
            input,
        })
    }

    /// Mutable parameter slices: encoder (W, b) per layer, then decoder.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}
