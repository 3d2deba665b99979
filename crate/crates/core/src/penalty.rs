//! Geman-McClure penalty on squared distances and its graduated schedule.
//!
//! The penalty takes the squared distance `s` directly:
//! `ρ(s) = μ s / (μ + s)`, so `μ` carries squared-distance units.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MknnGraph;

pub const DELTA_FLOOR: f64 = 1e-12;
/// Upper bound on the number of edges averaged for the nearest-edge scale.
pub const NEAREST_EDGE_CAP: usize = 250;

#[inline]
pub(crate) fn rho(s: f64, mu: f64) -> f64 {
    mu * s / (mu + s)
}

#[inline]
pub(crate) fn rho_grad(s: f64, mu: f64) -> f64 {
    let t = mu / (mu + s);
    t * t
}

fn check(s: f64, mu: f64) -> Result<()> {
    if !(s >= 0.0) {
        return Err(Error::Domain(format!(
            "squared distance must be >= 0, got {s}"
        )));
    }
    if !(mu > 0.0) {
        return Err(Error::Domain(format!("scale mu must be > 0, got {mu}")));
    }
    Ok(())
}

pub fn geman_mcclure(s: f64, mu: f64) -> Result<f64> {
    check(s, mu)?;
    Ok(rho(s, mu))
}

/// `dρ/ds = μ² / (μ + s)²`.
pub fn geman_mcclure_grad(s: f64, mu: f64) -> Result<f64> {
    check(s, mu)?;
    Ok(rho_grad(s, mu))
}

/// Number of edges forming the "nearest 1%": `max(1, floor(0.01 m))`.
pub fn nearest_percent_count(edge_count: usize) -> usize {
    (edge_count / 100).max(1)
}

/// Mean of the `count` smallest values.
pub fn mean_of_smallest(values: &[f64], count: usize) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let take = count.min(sorted.len());
    sorted[..take].iter().sum::<f64>() / take as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Deltas {
    pub delta1: f64,
    pub delta2: f64,
}

/// `δ1` = twice the mean distance of the embedding from its centroid;
/// `δ2` = mean length of the nearest 1% of graph edges (at most 250).
pub fn compute_deltas(z: &Array2<f64>, graph: &MknnGraph) -> Result<Deltas> {
    if graph.is_empty() {
        return Err(Error::DegenerateGraph(
            "cannot derive scales from an edgeless graph".into(),
        ));
    }
    if z.nrows() != graph.n() {
        return Err(Error::dim(
            "embedding rows vs graph size",
            graph.n(),
            z.nrows(),
        ));
    }
    let centroid = z.mean_axis(Axis(0)).expect("non-empty embedding");
    let mean_dist = z
        .rows()
        .into_iter()
        .map(|r| (&r - &centroid).mapv(|v| v * v).sum().sqrt())
        .sum::<f64>()
        / z.nrows() as f64;
    let lengths = graph.edge_lengths(z);
    let count = nearest_percent_count(lengths.len()).min(NEAREST_EDGE_CAP);
    let raw = Deltas {
        delta1: 2.0 * mean_dist,
        delta2: mean_of_smallest(&lengths, count),
    };
    if raw.delta1 < DELTA_FLOOR || raw.delta2 < DELTA_FLOOR {
        log::warn!(
            "degenerate embedding scales (delta1 = {}, delta2 = {}); flooring at {DELTA_FLOOR}",
            raw.delta1,
            raw.delta2
        );
    }
    Ok(Deltas {
        delta1: raw.delta1.max(DELTA_FLOOR),
        delta2: raw.delta2.max(DELTA_FLOOR),
    })
}

/// `μ1 = 8 δ1`, `μ2 = 3 max ||u_p - u_q||²` over the graph (floored at `δ2`).
pub fn init_mus(u0: &Array2<f64>, graph: &MknnGraph, deltas: Deltas) -> (f64, f64) {
    let max_sq = graph
        .edge_lengths(u0)
        .into_iter()
        .map(|l| l * l)
        .fold(0.0, f64::max);
    let mu1 = (8.0 * deltas.delta1).max(deltas.delta1);
    let mu2 = (3.0 * max_sq).max(deltas.delta2);
    (mu1, mu2)
}

/// Halving interval: 60 epochs when edges are under 0.2% of all n×n
/// connections, else 10.
pub fn select_interval(edge_count: usize, n: usize) -> usize {
    let density = edge_count as f64 / (n as f64 * n as f64);
    if density < 0.002 {
        60
    } else {
        10
    }
}

/// Graduated non-convexity state: both scales halve every
/// `update_interval` epochs until they reach their lower bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    pub mu1: f64,
    pub mu2: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub update_interval: usize,
    pub epoch: usize,
}

impl PenaltySchedule {
    pub fn new(mu1: f64, mu2: f64, deltas: Deltas, update_interval: usize) -> Result<Self> {
        if update_interval == 0 {
            return Err(Error::Parameter("update interval must be positive".into()));
        }
        Ok(Self {
            mu1: mu1.max(deltas.delta1),
            mu2: mu2.max(deltas.delta2),
            delta1: deltas.delta1,
            delta2: deltas.delta2,
            update_interval,
            epoch: 0,
        })
    }

    /// Marks one more completed epoch and halves at interval boundaries.
    pub fn step(&mut self) {
        self.epoch += 1;
        if self.epoch % self.update_interval == 0 {
            self.mu1 = (self.mu1 / 2.0).max(self.delta1);
            self.mu2 = (self.mu2 / 2.0).max(self.delta2);
        }
    }

    /// Closed-form scale after `halvings` halvings from `start`.
    pub fn halved(start: f64, floor: f64, halvings: usize) -> f64 {
        (start / 2f64.powi(halvings.min(2000) as i32)).max(floor)
    }
}
