//! Dense autoencoder with exact backpropagation and first-order optimizers.

pub mod checkpoint;
pub mod net;
pub mod optim;
pub mod pretrain;

pub use checkpoint::{load_net, read_net, save_net, write_net};
pub use net::{Activation, Dense, Gradients, LayerGrad, MlpAutoencoder, Trace};
pub use optim::{Optimizer, OptimizerKind};
pub use pretrain::{layerwise_pretrain, reconstruction_mse, PretrainConfig, PretrainReport};
