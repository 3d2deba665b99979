use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{compute_lambda, MknnGraph};
use crate::nn::{MlpAutoencoder, Optimizer};
use crate::penalty::{compute_deltas, init_mus, select_interval, PenaltySchedule};

/// Which objective the clustering stage optimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Reconstruction plus pairwise loss directly on `Z`; no `U`, no dual.
    #[serde(rename = "i")]
    SingleRepresentation,
    /// Pairwise loss on `Z` alone.
    #[serde(rename = "ii")]
    ClusteringOnly,
    /// Alternating `U` step, network step and dual update.
    #[default]
    #[serde(rename = "iii")]
    Admm,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" | "1" | "single" => Ok(Mode::SingleRepresentation),
            "ii" | "2" | "clustering" => Ok(Mode::ClusteringOnly),
            "iii" | "3" | "admm" => Ok(Mode::Admm),
            other => Err(Error::Parameter(format!(
                "unknown mode '{other}' (expected i, ii or iii)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::SingleRepresentation => "i",
            Mode::ClusteringOnly => "ii",
            Mode::Admm => "iii",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub epochs: usize,
    pub mode: Mode,
    pub u_learning_rate: f64,
    pub net_learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    /// Items (edges or standalone unary terms) per batch.
    pub pair_batch_size: usize,
    /// Dual ascent step `a`.
    pub dual_step: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval_override: Option<usize>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            mode: Mode::Admm,
            u_learning_rate: 0.04,
            net_learning_rate: 1e-4,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            pair_batch_size: 256,
            dual_step: 1.0,
            interval_override: None,
        }
    }
}

/// Everything the clustering stage carries between epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    /// Clustering representation, n × dim(Z).
    pub u: Array2<f64>,
    /// Lagrange multiplier, n × dim(Z).
    pub dual: Array2<f64>,
    pub dual_step: f64,
    pub schedule: PenaltySchedule,
    pub lambda: f64,
    /// Completed clustering epochs.
    pub epoch: usize,
    pub u_optimizer: Optimizer,
    pub net_optimizer: Optimizer,
    pub seed: u64,
}

impl AdmmState {
    /// Sets up λ, the penalty scales and `U = Enc(X)` from the pretrained
    /// network and the graph.
    pub fn initialize(
        net: &MlpAutoencoder,
        x: &Array2<f64>,
        graph: &MknnGraph,
        config: &ClusterConfig,
        seed: u64,
    ) -> Result<Self> {
        if x.nrows() != graph.n() {
            return Err(Error::dim("data rows vs graph size", graph.n(), x.nrows()));
        }
        if config.pair_batch_size == 0 {
            return Err(Error::Parameter("pair batch size must be positive".into()));
        }
        let z = net.encode(x, None)?;
        let lambda = compute_lambda(&z, graph)?;
        let deltas = compute_deltas(&z, graph)?;
        let (mu1, mu2) = init_mus(&z, graph, deltas);
        let interval = config
            .interval_override
            .unwrap_or_else(|| select_interval(graph.edges().len(), graph.n()));
        let schedule = PenaltySchedule::new(mu1, mu2, deltas, interval)?;
        Ok(Self {
            dual: Array2::zeros(z.raw_dim()),
            u: z,
            dual_step: config.dual_step,
            schedule,
            lambda,
            epoch: 0,
            u_optimizer: Optimizer::rmsprop(
                config.u_learning_rate,
                config.rmsprop_decay,
                config.rmsprop_epsilon,
            ),
            net_optimizer: Optimizer::rmsprop(
                config.net_learning_rate,
                config.rmsprop_decay,
                config.rmsprop_epsilon,
            ),
            seed,
        })
    }

    /// Mean row norm of `Z - U`.
    pub fn residual(&self, z: &Array2<f64>) -> f64 {
        let diff = z - &self.u;
        diff.rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .sum::<f64>()
            / diff.nrows().max(1) as f64
    }
}
