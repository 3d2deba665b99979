//! Per-batch gradients and the three alternating updates.
//!
//! An epoch visits every graph edge once, in shuffled batches. Visiting an
//! edge also visits the unary terms of both endpoints, each scaled by the
//! point's unary weight `1/N_i`. Points whose edge visits add up to less
//! than one full unary weight (isolated points, or points that lost edges to
//! cannot-link constraints) receive a standalone unary item carrying the
//! remainder, so every point's unary term is counted once per epoch.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::state::{AdmmState, Mode};
use crate::error::{Error, Result};
use crate::graph::MknnGraph;
use crate::nn::{Gradients, MlpAutoencoder};
use crate::penalty::{rho, rho_grad};
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BatchItem {
    /// Index into `graph.edges()`.
    Edge(usize),
    /// Unary term of one point with an explicit weight.
    Unary { point: usize, weight: f64 },
}

const FILLER_EPS: f64 = 1e-9;

/// All items of one epoch, unshuffled: edges in order, then unary fillers.
pub fn epoch_items(graph: &MknnGraph) -> Vec<BatchItem> {
    let uw = graph.unary_weights();
    let mut visited = vec![0.0; graph.n()];
    for e in graph.edges() {
        visited[e.p] += uw[e.p];
        visited[e.q] += uw[e.q];
    }
    let mut items: Vec<BatchItem> = (0..graph.edges().len()).map(BatchItem::Edge).collect();
    for (point, v) in visited.into_iter().enumerate() {
        let weight = 1.0 - v;
        if weight > FILLER_EPS {
            items.push(BatchItem::Unary { point, weight });
        }
    }
    items
}

/// Shuffle generator for a given epoch, independent of how many epochs ran
/// before in this process (so resumed runs see the same order).
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mixed = seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(Stream::PairShuffle as u64);
    rng
}

pub fn shuffled_items(graph: &MknnGraph, seed: u64, epoch: usize) -> Vec<BatchItem> {
    let mut items = epoch_items(graph);
    items.shuffle(&mut epoch_rng(seed, epoch));
    items
}

/// Unary visits `(point, weight)` contributed by a batch.
fn unary_visits(graph: &MknnGraph, items: &[BatchItem]) -> Vec<(usize, f64)> {
    let uw = graph.unary_weights();
    let mut out = Vec::with_capacity(items.len() * 2);
    for item in items {
        match *item {
            BatchItem::Edge(idx) => {
                let e = &graph.edges()[idx];
                out.push((e.p, uw[e.p]));
                out.push((e.q, uw[e.q]));
            }
            BatchItem::Unary { point, weight } => out.push((point, weight)),
        }
    }
    out
}

fn check_edge(graph: &MknnGraph, idx: usize) -> Result<()> {
    if idx >= graph.edges().len() {
        return Err(Error::Input(format!(
            "batch references edge {idx} beyond the graph"
        )));
    }
    Ok(())
}

/// Batch objective of the U-minimization and its gradient (full n × dim(Z),
/// zero outside the batch):
/// `λ/dim(Z) Σ_e w ρ2(||u_p-u_q||²) + Σ_visits ω [1/dim(Z) ρ1(||z_i-u_i||²) + ⟨ϑ_i, z_i-u_i⟩]`.
pub fn u_batch_gradient(
    state: &AdmmState,
    z: &Array2<f64>,
    graph: &MknnGraph,
    items: &[BatchItem],
) -> Result<(f64, Array2<f64>)> {
    let dim_z = z.ncols() as f64;
    let (mu1, mu2) = (state.schedule.mu1, state.schedule.mu2);
    let u = &state.u;
    let mut grad = Array2::<f64>::zeros(u.raw_dim());
    let mut loss = 0.0;
    for item in items {
        if let BatchItem::Edge(idx) = *item {
            check_edge(graph, idx)?;
            let e = &graph.edges()[idx];
            let diff = &u.row(e.p) - &u.row(e.q);
            let s = diff.dot(&diff);
            let c = state.lambda / dim_z * e.weight;
            loss += c * rho(s, mu2);
            let g = diff * (2.0 * c * rho_grad(s, mu2));
            grad.row_mut(e.p).scaled_add(1.0, &g);
            grad.row_mut(e.q).scaled_add(-1.0, &g);
        }
    }
    for (i, w) in unary_visits(graph, items) {
        if w == 0.0 {
            continue;
        }
        let diff = &z.row(i) - &u.row(i);
        let s = diff.dot(&diff);
        let dual = state.dual.row(i);
        loss += w * (rho(s, mu1) / dim_z + dual.dot(&diff));
        // d/du of ρ1(||z-u||²) is -2 ρ1' (z-u); d/du ⟨ϑ, z-u⟩ is -ϑ.
        let g = &diff * (-2.0 * rho_grad(s, mu1) / dim_z) - &dual;
        grad.row_mut(i).scaled_add(w, &g);
    }
    Ok((loss, grad))
}

/// One epoch of RMSProp updates on `U` with `Z` frozen.
pub fn u_step(
    state: &mut AdmmState,
    z: &Array2<f64>,
    graph: &MknnGraph,
    items: &[BatchItem],
    batch_size: usize,
) -> Result<()> {
    if z.dim() != state.u.dim() {
        return Err(Error::dim("Z shape vs U", state.u.len(), z.len()));
    }
    for (b, batch) in items.chunks(batch_size.max(1)).enumerate() {
        let (loss, grad) = u_batch_gradient(state, z, graph, batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("U-step loss at batch {b}")));
        }
        let grad = grad.as_standard_layout().into_owned();
        let AdmmState { u, u_optimizer, .. } = state;
        u_optimizer
            .step(
                &mut [u.as_slice_mut().expect("standard layout")],
                &[grad.as_slice().expect("standard layout")],
            )
            .map_err(|e| Error::NonFinite(format!("U-step batch {b}: {e}")))?;
    }
    Ok(())
}

/// Batch points with accumulated unary weights, in ascending point order.
fn batch_points(graph: &MknnGraph, items: &[BatchItem]) -> BTreeMap<usize, f64> {
    let mut points = BTreeMap::new();
    for item in items {
        if let BatchItem::Edge(idx) = *item {
            let e = &graph.edges()[idx];
            points.entry(e.p).or_insert(0.0);
            points.entry(e.q).or_insert(0.0);
        }
    }
    for (i, w) in unary_visits(graph, items) {
        *points.entry(i).or_insert(0.0) += w;
    }
    points
}

/// Batch objective of the network step for `mode` and its exact gradient.
///
/// * ADMM: `Σ ω [1/dim(X) ||x'-x||² + 1/dim(Z) ρ1(||z-u||²) + ⟨ϑ, z-u⟩]`
/// * single representation: `Σ ω 1/dim(X) ||x'-x||² + λ/dim(Z) Σ_e w ρ2(||z_p-z_q||²)`
/// * clustering only: the pairwise sum alone.
///
/// Both members of a pair share one forward pass through the network.
pub fn net_batch_gradient(
    net: &MlpAutoencoder,
    x: &Array2<f64>,
    state: &AdmmState,
    graph: &MknnGraph,
    items: &[BatchItem],
    mode: Mode,
) -> Result<(f64, Gradients)> {
    for item in items {
        if let BatchItem::Edge(idx) = *item {
            check_edge(graph, idx)?;
        }
    }
    let points = batch_points(graph, items);
    let index: Vec<usize> = points.keys().copied().collect();
    let row_of: BTreeMap<usize, usize> = index.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let xb = x.select(Axis(0), &index);
    let with_recon = mode != Mode::ClusteringOnly;
    let trace = net.forward_trace(&xb, with_recon, None)?;
    let zb = &trace.code;
    let dim_x = x.ncols() as f64;
    let dim_z = zb.ncols() as f64;
    let (mu1, mu2) = (state.schedule.mu1, state.schedule.mu2);

    let mut loss = 0.0;
    let mut grad_code = Array2::<f64>::zeros(zb.raw_dim());
    let mut grad_out = with_recon.then(|| Array2::<f64>::zeros(xb.raw_dim()));

    if let (Some(g_out), Some(out)) = (grad_out.as_mut(), trace.output.as_ref()) {
        for (r, &w) in points.values().enumerate() {
            let diff = &out.row(r) - &xb.row(r);
            loss += w * diff.dot(&diff) / dim_x;
            g_out.row_mut(r).assign(&(diff * (2.0 * w / dim_x)));
        }
    }
    match mode {
        Mode::Admm => {
            for (r, (&i, &w)) in points.iter().enumerate() {
                let diff: Array1<f64> = &zb.row(r) - &state.u.row(i);
                let s = diff.dot(&diff);
                let dual = state.dual.row(i);
                loss += w * (rho(s, mu1) / dim_z + dual.dot(&diff));
                let g = &diff * (2.0 * rho_grad(s, mu1) / dim_z) + &dual;
                grad_code.row_mut(r).scaled_add(w, &g);
            }
        }
        Mode::SingleRepresentation | Mode::ClusteringOnly => {
            for item in items {
                if let BatchItem::Edge(idx) = *item {
                    let e = &graph.edges()[idx];
                    let (rp, rq) = (row_of[&e.p], row_of[&e.q]);
                    let diff = &zb.row(rp) - &zb.row(rq);
                    let s = diff.dot(&diff);
                    let c = state.lambda / dim_z * e.weight;
                    loss += c * rho(s, mu2);
                    let g = diff * (2.0 * c * rho_grad(s, mu2));
                    grad_code.row_mut(rp).scaled_add(1.0, &g);
                    grad_code.row_mut(rq).scaled_add(-1.0, &g);
                }
            }
        }
    }
    let grads = net.backprop(&trace, grad_out.as_ref(), Some(&grad_code))?;
    Ok((loss, grads))
}

/// One epoch of RMSProp updates on the network weights with `U` frozen.
pub fn net_step(
    net: &mut MlpAutoencoder,
    x: &Array2<f64>,
    state: &mut AdmmState,
    graph: &MknnGraph,
    items: &[BatchItem],
    batch_size: usize,
    mode: Mode,
) -> Result<()> {
    for (b, batch) in items.chunks(batch_size.max(1)).enumerate() {
        if mode == Mode::ClusteringOnly && !batch.iter().any(|i| matches!(i, BatchItem::Edge(_))) {
            continue;
        }
        let (loss, grads) = net_batch_gradient(net, x, state, graph, batch, mode)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("network-step loss at batch {b}")));
        }
        state
            .net_optimizer
            .step(&mut net.params_mut(), &grads.slices())
            .map_err(|e| Error::NonFinite(format!("network-step batch {b}: {e}")))?;
    }
    Ok(())
}

/// `ϑ ← ϑ + a (Z - U)`.
pub fn dual_update(state: &mut AdmmState, z: &Array2<f64>) -> Result<()> {
    if z.dim() != state.dual.dim() {
        return Err(Error::dim("Z shape vs dual", state.dual.len(), z.len()));
    }
    let residual = z - &state.u;
    state.dual.scaled_add(state.dual_step, &residual);
    Ok(())
}
