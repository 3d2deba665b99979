use ndarray::Array2;

use super::state::{AdmmState, Mode};
use crate::error::{Error, Result};
use crate::graph::MknnGraph;
use crate::nn::MlpAutoencoder;
use crate::penalty::rho;

/// Objective terms evaluated on the whole dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    /// `1/dim(X) Σ ||x'_i - x_i||²`
    pub reconstruction: f64,
    /// `λ/dim(Z) Σ w_pq ρ2(||r_p - r_q||²)` with `r = U` in ADMM mode, else `Z`.
    pub pairwise: f64,
    /// `1/dim(Z) Σ ρ1(||z_i - u_i||²)`
    pub representation: f64,
    /// `⟨ϑ, Z - U⟩`
    pub dual_term: f64,
    /// `w_pq ρ2(·)` per graph edge, in edge order.
    pub per_edge_loss: Vec<f64>,
}

impl LossBreakdown {
    /// Sum of the terms the given mode optimizes.
    pub fn objective(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Admm => {
                self.reconstruction + self.pairwise + self.representation + self.dual_term
            }
            Mode::SingleRepresentation => self.reconstruction + self.pairwise,
            Mode::ClusteringOnly => self.pairwise,
        }
    }
}

fn sq_norm_diff(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Evaluates every term in evaluation mode (no dropout).
pub fn evaluate_losses(
    net: &MlpAutoencoder,
    x: &Array2<f64>,
    state: &AdmmState,
    graph: &MknnGraph,
    mode: Mode,
) -> Result<LossBreakdown> {
    let z = net.encode(x, None)?;
    let recon = net.decode(&z)?;
    evaluate_with(&z, &recon, x, state, graph, mode)
}

pub(crate) fn evaluate_with(
    z: &Array2<f64>,
    recon: &Array2<f64>,
    x: &Array2<f64>,
    state: &AdmmState,
    graph: &MknnGraph,
    mode: Mode,
) -> Result<LossBreakdown> {
    if state.u.dim() != z.dim() || state.dual.dim() != z.dim() {
        return Err(Error::dim("U / dual shape vs Z", z.len(), state.u.len()));
    }
    if z.nrows() != graph.n() {
        return Err(Error::dim(
            "embedding rows vs graph size",
            graph.n(),
            z.nrows(),
        ));
    }
    let dim_x = x.ncols() as f64;
    let dim_z = z.ncols() as f64;
    let reconstruction = (recon - x).mapv(|v| v * v).sum() / dim_x;

    let space = match mode {
        Mode::Admm => &state.u,
        _ => z,
    };
    let mu2 = state.schedule.mu2;
    let per_edge_loss: Vec<f64> = graph
        .edges()
        .iter()
        .map(|e| e.weight * rho(sq_norm_diff(space.row(e.p), space.row(e.q)), mu2))
        .collect();
    let pairwise = state.lambda / dim_z * per_edge_loss.iter().sum::<f64>();

    let mu1 = state.schedule.mu1;
    let representation = z
        .rows()
        .into_iter()
        .zip(state.u.rows())
        .map(|(zi, ui)| rho(sq_norm_diff(zi, ui), mu1))
        .sum::<f64>()
        / dim_z;
    let dual_term = (z - &state.u)
        .iter()
        .zip(state.dual.iter())
        .map(|(d, t)| d * t)
        .sum();

    for (name, v) in [
        ("reconstruction", reconstruction),
        ("pairwise", pairwise),
        ("representation", representation),
        ("dual", dual_term),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss term is {v}")));
        }
    }
    Ok(LossBreakdown {
        reconstruction,
        pairwise,
        representation,
        dual_term,
        per_edge_loss,
    })
}
