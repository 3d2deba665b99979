use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::losses::{evaluate_with, LossBreakdown};
use super::state::{AdmmState, ClusterConfig, Mode};
use super::steps::{dual_update, net_step, shuffled_items, u_step};
use crate::error::{Error, Result};
use crate::graph::MknnGraph;
use crate::nn::MlpAutoencoder;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number across resumptions.
    pub epoch: usize,
    pub losses: LossBreakdown,
    /// Mean `||z_i - u_i||` after the epoch.
    pub residual: f64,
    /// Scales in effect during the epoch.
    pub mu1: f64,
    pub mu2: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, other: History) {
        self.records.extend(other.records);
    }

    /// `epoch,rec,pair,rep,dual,residual,mu1,mu2`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "epoch,rec,pair,rep,dual,residual,mu1,mu2")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.epoch,
                r.losses.reconstruction,
                r.losses.pairwise,
                r.losses.representation,
                r.losses.dual_term,
                r.residual,
                r.mu1,
                r.mu2
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The representation clusters are read from: `U` after ADMM, `Z` otherwise
/// (the single-representation modes keep `U` synchronized with `Z`).
pub fn clustering_representation(state: &AdmmState) -> &Array2<f64> {
    &state.u
}

/// Runs `config.epochs` clustering epochs, continuing from `state.epoch`.
///
/// ADMM epochs run the U step, the network step and the dual update; the
/// single-representation modes train the network on `Z` directly and copy
/// `Z` into `U`. Every epoch ends with a schedule step.
pub fn train_clustering_stage(
    net: &mut MlpAutoencoder,
    x: &Array2<f64>,
    graph: &MknnGraph,
    state: &mut AdmmState,
    config: &ClusterConfig,
) -> Result<History> {
    if x.nrows() != graph.n() || state.u.nrows() != graph.n() {
        return Err(Error::dim("data rows vs graph size", graph.n(), x.nrows()));
    }
    let mut history = History::default();
    for _ in 0..config.epochs {
        let epoch = state.epoch;
        let (mu1, mu2) = (state.schedule.mu1, state.schedule.mu2);
        let items = shuffled_items(graph, state.seed, epoch);
        let tag = |e: Error| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("clustering epoch {}: {m}", epoch + 1)),
            other => other,
        };
        match config.mode {
            Mode::Admm => {
                let z = net.encode(x, None)?;
                u_step(state, &z, graph, &items, config.pair_batch_size).map_err(tag)?;
                net_step(
                    net,
                    x,
                    state,
                    graph,
                    &items,
                    config.pair_batch_size,
                    config.mode,
                )
                .map_err(tag)?;
                let z = net.encode(x, None)?;
                dual_update(state, &z)?;
            }
            Mode::SingleRepresentation | Mode::ClusteringOnly => {
                net_step(
                    net,
                    x,
                    state,
                    graph,
                    &items,
                    config.pair_batch_size,
                    config.mode,
                )
                .map_err(tag)?;
                state.u = net.encode(x, None)?;
            }
        }
        let z = net.encode(x, None)?;
        let recon = net.decode(&z)?;
        let losses = evaluate_with(&z, &recon, x, state, graph, config.mode).map_err(tag)?;
        let residual = state.residual(&z);
        state.schedule.step();
        state.epoch += 1;
        log::debug!(
            "epoch {} objective {:.6} residual {:.6}",
            state.epoch,
            losses.objective(config.mode),
            residual
        );
        history.records.push(EpochRecord {
            epoch: state.epoch,
            losses,
            residual,
            mu1,
            mu2,
        });
    }
    Ok(history)
}
