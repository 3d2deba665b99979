//! Spectral norms by Lanczos iteration and the pairwise-loss normalizer.

use ndarray::Array2;
use rand::Rng;

use super::mknn::MknnGraph;
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Upper bound on Krylov steps; far more than a well-separated top
/// eigenvalue needs, and the basis is kept for reorthogonalization.
pub const MAX_STEPS: usize = 200;
pub const TOLERANCE: f64 = 1e-13;

const START_NOISE_SEED: u64 = 0x5eed;

/// Largest eigenvalue of a symmetric positive semi-definite operator given
/// by `apply(v, out)`, by Lanczos with full reorthogonalization. Stops when
/// the top Ritz value changes by at most `tol` relative, when the Krylov
/// space becomes invariant, or after `max_steps` steps.
pub fn largest_eigenvalue<F>(dim: usize, mut apply: F, max_steps: usize, tol: f64) -> f64
where
    F: FnMut(&[f64], &mut [f64]),
{
    if dim == 0 {
        return 0.0;
    }
    let mut rng = substream(START_NOISE_SEED, Stream::SpectralStart);
    let mut q: Vec<f64> = (0..dim)
        .map(|_| 1.0 + rng.random_range(-1e-3..1e-3))
        .collect();
    normalize(&mut q);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; dim];
    let mut theta = 0.0;
    for step in 0..max_steps.min(dim).max(1) {
        apply(&q, &mut w);
        let a = dot(&q, &w);
        basis.push(q);
        // Two passes of Gram-Schmidt against the whole basis keep the
        // tridiagonal projection accurate in floating point.
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= c * bi);
            }
        }
        alpha.push(a);
        let next = tridiagonal_max_eigenvalue(&alpha, &beta);
        let converged = step > 0 && (next - theta).abs() <= tol * next.abs();
        theta = next;
        let b = dot(&w, &w).sqrt();
        if converged || b <= f64::EPSILON * theta.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        beta.push(b);
        q = w.iter().map(|x| x / b).collect();
    }
    theta
}

/// Top eigenvalue of the symmetric tridiagonal matrix with diagonal
/// `alpha` and off-diagonal `beta`, by Sturm-count bisection.
fn tridiagonal_max_eigenvalue(alpha: &[f64], beta: &[f64]) -> f64 {
    let k = alpha.len();
    let radius = |i: usize| {
        let left = if i > 0 { beta[i - 1].abs() } else { 0.0 };
        let right = if i + 1 < k { beta[i].abs() } else { 0.0 };
        left + right
    };
    let mut lo = (0..k)
        .map(|i| alpha[i] - radius(i))
        .fold(f64::INFINITY, f64::min);
    let mut hi = (0..k)
        .map(|i| alpha[i] + radius(i))
        .fold(f64::NEG_INFINITY, f64::max);
    // Number of eigenvalues strictly below x.
    let below = |x: f64| {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..k {
            let off = if i > 0 {
                beta[i - 1] * beta[i - 1] / d
            } else {
                0.0
            };
            d = alpha[i] - x - off;
            if d == 0.0 {
                d = -f64::MIN_POSITIVE;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid) == k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Largest singular value of a dense matrix, from the top eigenvalue of `MᵀM`.
pub fn spectral_norm(m: &Array2<f64>) -> f64 {
    let (rows, cols) = m.dim();
    let mut tmp = vec![0.0; rows];
    let eig = largest_eigenvalue(
        cols,
        |v, out| {
            for (i, t) in tmp.iter_mut().enumerate() {
                *t = m.row(i).iter().zip(v).map(|(a, b)| a * b).sum();
            }
            out.iter_mut().for_each(|o| *o = 0.0);
            for (i, t) in tmp.iter().enumerate() {
                for (o, a) in out.iter_mut().zip(m.row(i)) {
                    *o += a * t;
                }
            }
        },
        MAX_STEPS,
        TOLERANCE,
    );
    eig.max(0.0).sqrt()
}

/// Spectral norm of the weighted graph Laplacian `D - R`, applied sparsely.
pub fn laplacian_spectral_norm(graph: &MknnGraph) -> f64 {
    let n = graph.n();
    let mut diag = vec![0.0; n];
    for e in graph.edges() {
        diag[e.p] += e.weight;
        diag[e.q] += e.weight;
    }
    largest_eigenvalue(
        n,
        |v, out| {
            for i in 0..n {
                out[i] = diag[i] * v[i];
            }
            for e in graph.edges() {
                out[e.p] -= e.weight * v[e.q];
                out[e.q] -= e.weight * v[e.p];
            }
        },
        MAX_STEPS,
        TOLERANCE,
    )
}

/// `λ = ||Z||₂ / ||D - R||₂`, computed once from the initial embedding.
pub fn compute_lambda(z: &Array2<f64>, graph: &MknnGraph) -> Result<f64> {
    if z.nrows() != graph.n() {
        return Err(Error::dim(
            "embedding rows vs graph size",
            graph.n(),
            z.nrows(),
        ));
    }
    if graph.is_empty() {
        return Err(Error::DegenerateGraph(
            "graph has no edges, so ||D - R|| is zero".into(),
        ));
    }
    let denom = laplacian_spectral_norm(graph);
    if denom <= 0.0 {
        return Err(Error::DegenerateGraph(
            "Laplacian spectral norm is zero".into(),
        ));
    }
    let numer = spectral_norm(z);
    if numer == 0.0 {
        log::warn!("embedding is the zero matrix; lambda = 0");
    }
    Ok(numer / denom)
}
