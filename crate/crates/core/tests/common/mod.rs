//! Independent reference implementations and fixtures shared by the
//! integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use cpac::admm::{AdmmState, BatchItem, ClusterConfig, Mode};
use cpac::config::RunConfig;
use cpac::data::{corrupt_graph, synth_blobs, DataMatrix};
use cpac::graph::{build_graph, DegreeMean, DistanceSpace, EdgeKind, MknnGraph};
use cpac::nn::{Activation, MlpAutoencoder};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.sample(StandardNormal))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

// ---------------------------------------------------------------------------
// Straight-line network evaluation and objectives.

/// `act(x W + b)` layer by layer, with the pre-activations of every
/// rectified layer collected in `pre`.
fn run_layers(layers: &[cpac::nn::Dense], x: &Array2<f64>, pre: &mut Vec<f64>) -> Array2<f64> {
    let mut h = x.clone();
    for layer in layers {
        let mut out = Array2::<f64>::zeros((h.nrows(), layer.output_dim()));
        for r in 0..h.nrows() {
            for c in 0..layer.output_dim() {
                let mut a = layer.bias[c];
                for k in 0..layer.input_dim() {
                    a += h[[r, k]] * layer.weights[[k, c]];
                }
                out[[r, c]] = match layer.activation {
                    Activation::Relu => {
                        pre.push(a);
                        a.max(0.0)
                    }
                    Activation::Linear => a,
                };
            }
        }
        h = out;
    }
    h
}

pub fn forward(net: &MlpAutoencoder, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut pre = Vec::new();
    let z = run_layers(net.encoder_layers(), x, &mut pre);
    let xr = run_layers(net.decoder_layers(), &z, &mut pre);
    (z, xr)
}

fn min_abs_preactivation(net: &MlpAutoencoder, x: &Array2<f64>) -> f64 {
    let mut pre = Vec::new();
    let z = run_layers(net.encoder_layers(), x, &mut pre);
    run_layers(net.decoder_layers(), &z, &mut pre);
    pre.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

fn gm(s: f64, mu: f64) -> f64 {
    mu * s / (mu + s)
}

fn sq(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-point weight of the unary terms visited by `items`.
pub fn visit_weights(graph: &MknnGraph, items: &[BatchItem]) -> BTreeMap<usize, f64> {
    let uw = graph.unary_weights();
    let mut w = BTreeMap::new();
    for item in items {
        match *item {
            BatchItem::Edge(i) => {
                let e = &graph.edges()[i];
                *w.entry(e.p).or_insert(0.0) += uw[e.p];
                *w.entry(e.q).or_insert(0.0) += uw[e.q];
            }
            BatchItem::Unary { point, weight } => *w.entry(point).or_insert(0.0) += weight,
        }
    }
    w
}

fn pair_sum(r: &Array2<f64>, graph: &MknnGraph, items: &[BatchItem], mu2: f64) -> f64 {
    items
        .iter()
        .filter_map(|item| match *item {
            BatchItem::Edge(i) => {
                let e = &graph.edges()[i];
                Some(e.weight * gm(sq(r.row(e.p), r.row(e.q)), mu2))
            }
            BatchItem::Unary { .. } => None,
        })
        .sum()
}

/// Network-step batch objective for `mode`, evaluated from scratch with
/// `input` fed through the network and `target` as the reconstruction
/// target.
pub fn net_objective(
    net: &MlpAutoencoder,
    input: &Array2<f64>,
    target: &Array2<f64>,
    state: &AdmmState,
    graph: &MknnGraph,
    items: &[BatchItem],
    mode: Mode,
) -> f64 {
    let x = target;
    let (z, xr) = forward(net, input);
    let (dx, dz) = (x.ncols() as f64, z.ncols() as f64);
    let (mu1, mu2) = (state.schedule.mu1, state.schedule.mu2);
    let weights = visit_weights(graph, items);
    let mut total = 0.0;
    if mode != Mode::ClusteringOnly {
        for (&i, &w) in &weights {
            total += w * sq(xr.row(i), x.row(i)) / dx;
        }
    }
    match mode {
        Mode::Admm => {
            for (&i, &w) in &weights {
                let diff = &z.row(i) - &state.u.row(i);
                total += w * (gm(diff.dot(&diff), mu1) / dz + state.dual.row(i).dot(&diff));
            }
        }
        _ => total += state.lambda / dz * pair_sum(&z, graph, items, mu2),
    }
    total
}

/// U-step batch objective with `Z` fixed.
pub fn u_objective(
    u: &Array2<f64>,
    z: &Array2<f64>,
    state: &AdmmState,
    graph: &MknnGraph,
    items: &[BatchItem],
) -> f64 {
    let dz = z.ncols() as f64;
    let (mu1, mu2) = (state.schedule.mu1, state.schedule.mu2);
    let mut total = state.lambda / dz * pair_sum(u, graph, items, mu2);
    for (&i, &w) in &visit_weights(graph, items) {
        let diff = &z.row(i) - &u.row(i);
        total += w * (gm(diff.dot(&diff), mu1) / dz + state.dual.row(i).dot(&diff));
    }
    total
}

// ---------------------------------------------------------------------------
// Random gradient-check instances.

pub struct GradInstance {
    pub net: MlpAutoencoder,
    pub x: Array2<f64>,
    pub graph: MknnGraph,
    pub state: AdmmState,
    pub items: Vec<BatchItem>,
}

/// Smallest allowed |pre-activation|; finite differences are only
/// meaningful away from the rectifier's kink.
const KINK_MARGIN: f64 = 1e-3;

/// A random instance with n ≤ 10 points, 1 or 2 hidden layers (so up to 4
/// layers in total) of width ≤ 32, random biases, a random graph, and
/// random U, dual, λ and penalty scales. `None` when the draw lands too
/// close to a rectifier kink.
pub fn gradient_instance(seed: u64) -> Option<GradInstance> {
    let mut r = rng(seed);
    let n = r.random_range(3..=10);
    let dx = r.random_range(2..=8);
    let depth = r.random_range(1..=2);
    let mut hidden: Vec<usize> = (0..depth - 1).map(|_| r.random_range(2..=32)).collect();
    hidden.push(r.random_range(2..=6));
    let mut net = MlpAutoencoder::new(dx, &hidden, 0.0, &mut r).ok()?;
    for (j, slice) in net.params_mut().into_iter().enumerate() {
        if j % 2 == 1 {
            for b in slice.iter_mut() {
                *b = r.random_range(-0.5..0.5);
            }
        }
    }
    let x = normal_matrix(n, dx, &mut r);
    if min_abs_preactivation(&net, &x) < KINK_MARGIN {
        return None;
    }

    let mut pairs = Vec::new();
    for p in 0..n {
        for q in p + 1..n {
            if r.random_bool(0.45) {
                pairs.push((p, q, EdgeKind::Mutual));
            }
        }
    }
    if pairs.is_empty() {
        pairs.push((0, 1, EdgeKind::Mutual));
    }
    let graph =
        MknnGraph::from_pairs(n, 3, pairs, DistanceSpace::Loaded, DegreeMean::AllPoints).ok()?;
    let mut state =
        AdmmState::initialize(&net, &x, &graph, &ClusterConfig::default(), seed).ok()?;
    let (z, _) = forward(&net, &x);
    let dz = z.ncols();
    state.u = &z + &(normal_matrix(n, dz, &mut r) * 0.5);
    state.dual = normal_matrix(n, dz, &mut r) * 0.3;
    state.lambda = r.random_range(0.5..3.0);
    let rep_scale = (0..n).map(|i| sq(z.row(i), state.u.row(i))).sum::<f64>() / n as f64;
    let edge_scale = graph
        .edges()
        .iter()
        .map(|e| sq(z.row(e.p), z.row(e.q)))
        .sum::<f64>()
        / graph.edges().len() as f64;
    state.schedule.mu1 = r.random_range(0.5..2.0) * rep_scale.max(1e-3);
    state.schedule.mu2 = r.random_range(0.5..2.0) * edge_scale.max(1e-3);
    let items = cpac::admm::epoch_items(&graph);
    Some(GradInstance {
        net,
        x,
        graph,
        state,
        items,
    })
}

/// First `count` usable instances starting from seed 0.
pub fn gradient_instances(count: usize) -> Vec<GradInstance> {
    (0u64..)
        .take(count * 20)
        .filter_map(gradient_instance)
        .take(count)
        .collect()
}

/// `max |a - f| / max(|a|, |f|)` over a gradient vector, i.e. the error
/// relative to the gradient's largest entry.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, f)| m.max((a - f).abs()))
        / scale
}

pub const FD_STEP: f64 = 1e-5;

pub fn central_difference(mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub params: f64,
    pub input: f64,
    /// Relative mismatch between the reported batch loss and the
    /// from-scratch objective.
    pub loss: f64,
}

pub fn check_net_gradient(inst: &GradInstance, mode: Mode) -> GradCheck {
    let (loss, grads) = cpac::admm::net_batch_gradient(
        &inst.net,
        &inst.x,
        &inst.state,
        &inst.graph,
        &inst.items,
        mode,
    )
    .unwrap();
    let reference = net_objective(
        &inst.net,
        &inst.x,
        &inst.x,
        &inst.state,
        &inst.graph,
        &inst.items,
        mode,
    );

    let analytic: Vec<f64> = grads.slices().concat();
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut net = inst.net.clone();
    let groups: Vec<usize> = net.params_mut().iter().map(|s| s.len()).collect();
    for (g, len) in groups.into_iter().enumerate() {
        for k in 0..len {
            let orig = net.params_mut()[g][k];
            numeric.push(central_difference(|h| {
                net.params_mut()[g][k] = orig + h;
                let v = net_objective(
                    &net,
                    &inst.x,
                    &inst.x,
                    &inst.state,
                    &inst.graph,
                    &inst.items,
                    mode,
                );
                net.params_mut()[g][k] = orig;
                v
            }));
        }
    }

    // Input rows of the gradient follow ascending point order; only the
    // path through the encoder is differentiated, not the target.
    let points: BTreeSet<usize> = visit_weights(&inst.graph, &inst.items)
        .keys()
        .copied()
        .collect();
    let mut x = inst.x.clone();
    let mut a_in = Vec::new();
    let mut n_in = Vec::new();
    for (row, &i) in points.iter().enumerate() {
        for c in 0..x.ncols() {
            a_in.push(grads.input[[row, c]]);
            let orig = x[[i, c]];
            n_in.push(central_difference(|h| {
                x[[i, c]] = orig + h;
                let v = net_objective(
                    &inst.net,
                    &x,
                    &inst.x,
                    &inst.state,
                    &inst.graph,
                    &inst.items,
                    mode,
                );
                x[[i, c]] = orig;
                v
            }));
        }
    }
    GradCheck {
        params: relative_error(&analytic, &numeric),
        input: relative_error(&a_in, &n_in),
        loss: (loss - reference).abs() / reference.abs().max(f64::MIN_POSITIVE),
    }
}

pub fn check_u_gradient(inst: &GradInstance) -> GradCheck {
    let (z, _) = forward(&inst.net, &inst.x);
    let (loss, grad) =
        cpac::admm::u_batch_gradient(&inst.state, &z, &inst.graph, &inst.items).unwrap();
    let reference = u_objective(&inst.state.u, &z, &inst.state, &inst.graph, &inst.items);
    let mut u = inst.state.u.clone();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for i in 0..u.nrows() {
        for c in 0..u.ncols() {
            analytic.push(grad[[i, c]]);
            let orig = u[[i, c]];
            numeric.push(central_difference(|h| {
                u[[i, c]] = orig + h;
                let v = u_objective(&u, &z, &inst.state, &inst.graph, &inst.items);
                u[[i, c]] = orig;
                v
            }));
        }
    }
    GradCheck {
        params: relative_error(&analytic, &numeric),
        input: 0.0,
        loss: (loss - reference).abs() / reference.abs().max(f64::MIN_POSITIVE),
    }
}

// ---------------------------------------------------------------------------
// Graph, spectral, component, assignment and PCA oracles.

/// Mutual kNN by full sort of every distance row.
pub fn brute_mknn(points: &Array2<f64>, k: usize) -> Vec<(usize, usize)> {
    let n = points.nrows();
    let neighbors: Vec<BTreeSet<usize>> = (0..n)
        .map(|p| {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&q| q != p)
                .map(|q| (sq(points.row(p), points.row(q)), q))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, q)| q).collect()
        })
        .collect();
    let mut pairs = Vec::new();
    for p in 0..n {
        for &q in &neighbors[p] {
            if p < q && neighbors[q].contains(&p) {
                pairs.push((p, q));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

fn largest_singular_value(m: DMatrix<f64>) -> f64 {
    m.singular_values().iter().fold(0.0, |a: f64, &b| a.max(b))
}

/// `||Z||₂ / ||D - R||₂` from dense singular value decompositions.
pub fn dense_lambda(z: &Array2<f64>, graph: &MknnGraph) -> f64 {
    let zm = DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| z[[i, j]]);
    let n = graph.n();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for e in graph.edges() {
        l[(e.p, e.q)] -= e.weight;
        l[(e.q, e.p)] -= e.weight;
        l[(e.p, e.p)] += e.weight;
        l[(e.q, e.q)] += e.weight;
    }
    largest_singular_value(zm) / largest_singular_value(l)
}

/// Component labels by breadth-first search, numbered in order of the
/// smallest member.
pub fn bfs_components(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = next;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if label[w] == usize::MAX {
                    label[w] = next;
                    queue.push_back(w);
                }
            }
        }
        next += 1;
    }
    label
}

/// Whether two labelings induce the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut ab = BTreeMap::new();
    let mut ba = BTreeMap::new();
    a.iter()
        .zip(b)
        .all(|(x, y)| *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x)
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let ids: BTreeMap<usize, usize> = labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Best one-to-one cluster-to-class matching by trying every permutation.
pub fn factorial_acc(truth: &[usize], predicted: &[usize]) -> f64 {
    let (t, kt) = compact(truth);
    let (p, kp) = compact(predicted);
    let k = kt.max(kp);
    assert!(k <= 8, "enumeration limited to 8 labels");
    let mut counts = vec![vec![0usize; k]; k];
    for (&a, &b) in p.iter().zip(&t) {
        counts[a][b] += 1;
    }
    let best = permutations(k)
        .into_iter()
        .map(|perm| (0..k).map(|c| counts[c][perm[c]]).sum::<usize>())
        .max()
        .unwrap_or(0);
    best as f64 / truth.len() as f64
}

/// Top `dims` eigenvalues of the biased covariance, descending.
pub fn dense_pca_variances(m: &Array2<f64>, dims: usize) -> Vec<f64> {
    let (n, d) = m.dim();
    let mean: Array1<f64> = m.mean_axis(ndarray::Axis(0)).unwrap();
    let c = m - &mean;
    let cm = DMatrix::from_fn(n, d, |i, j| c[[i, j]]);
    let cov = cm.transpose() * &cm / n as f64;
    let mut ev: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev.truncate(dims);
    ev
}

// ---------------------------------------------------------------------------
// Blob benchmark fixtures.

pub const BLOB_N: usize = 400;
pub const BLOB_DIM: usize = 10;
pub const BLOB_CLUSTERS: usize = 4;
pub const BLOB_SEPARATION: f64 = 10.0;
pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

pub fn blobs(seed: u64) -> DataMatrix {
    synth_blobs(BLOB_N, BLOB_DIM, BLOB_CLUSTERS, BLOB_SEPARATION, seed).unwrap()
}

/// Desk-scale configuration: library defaults except a smaller autoencoder
/// with a matching pretraining batch size and learning rate.
pub fn desk_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.seed = seed;
    c.pretrain.hidden = vec![64, 64, 256, 10];
    c.pretrain.batch_size = 32;
    c.pretrain.learning_rate = 1e-3;
    c.graph.k = 10;
    c.cluster.epochs = 100;
    c
}

/// Blob graph polluted with cross-blob edges at 5% of the points.
pub fn corrupted_blob_graph(data: &DataMatrix, config: &RunConfig, seed: u64) -> MknnGraph {
    let mut graph = build_graph(data.values(), &config.graph).unwrap();
    corrupt_graph(&mut graph, data.labels().unwrap(), 0.05, seed).unwrap();
    graph
}

/// Prints and returns one acceptance line.
pub fn report(name: &str, pass: bool, detail: &str) -> bool {
    println!(
        "ACCEPTANCE {:<34} {}  {detail}",
        name,
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

// ---------------------------------------------------------------------------
// Randomized oracle cases. Each returns the worst discrepancy it found.

/// Points with distinct pairwise distances almost surely.
fn random_points(r: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    normal_matrix(n, d, r)
}

/// Whether the library's mutual kNN equals the brute-force one.
pub fn mknn_case(seed: u64) -> bool {
    let mut r = rng(seed);
    let n = r.random_range(20..=200);
    let k = r.random_range(1..=15);
    let d = r.random_range(2..=6);
    let points = random_points(&mut r, n, d);
    let graph = cpac::graph::build_mknn(&points, k).unwrap();
    let mut got = graph.pairs();
    got.sort_unstable();
    got == brute_mknn(&points, k)
}

/// Relative gap between `compute_lambda` and the dense-SVD ratio.
pub fn lambda_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(20..=120);
    let d = r.random_range(2..=5);
    let points = random_points(&mut r, n, d);
    let config = cpac::graph::GraphConfig {
        k: r.random_range(3..=10),
        ..Default::default()
    };
    let graph = build_graph(&points, &config).unwrap();
    let dz = r.random_range(2..=10);
    let z = normal_matrix(n, dz, &mut r);
    let got = cpac::graph::compute_lambda(&z, &graph).unwrap();
    let want = dense_lambda(&z, &graph);
    (got - want).abs() / want
}

/// Whether union-find components give the BFS partition and numbering.
pub fn components_case(seed: u64) -> bool {
    let mut r = rng(seed);
    let n = r.random_range(1..=80);
    let m = r.random_range(0..=n);
    let edges: Vec<(usize, usize)> = (0..m)
        .map(|_| (r.random_range(0..n), r.random_range(0..n)))
        .collect();
    let got = cpac::graph::connected_components(n, &edges).unwrap();
    let want = bfs_components(n, &edges);
    got.labels == want && got.count == want.iter().max().map_or(0, |m| m + 1)
}

/// Absolute gap between Hungarian ACC and exhaustive search.
pub fn acc_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(1..=40);
    let classes = r.random_range(1..=8);
    let clusters = r.random_range(1..=8);
    let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
    let predicted: Vec<usize> = (0..n)
        .map(|_| r.random_range(0..clusters) * 7 + 3)
        .collect();
    (cpac::metrics::acc(&truth, &predicted).unwrap() - factorial_acc(&truth, &predicted)).abs()
}

/// Worst relative gap between projected variances and dense eigenvalues.
pub fn pca_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, d) = (50, 10);
    // Distinct column scales keep the leading eigenvalues separated.
    let scales: Vec<f64> = (0..d).map(|j| 3.0 / (1.0 + j as f64)).collect();
    let m = Array2::from_shape_fn((n, d), |(_, j)| {
        scales[j] * r.sample::<f64, _>(StandardNormal)
    });
    let dims = r.random_range(2..=3);
    let got = cpac::extract::pca_project(&m, dims).unwrap().variances;
    let want = dense_pca_variances(&m, dims);
    got.iter()
        .zip(&want)
        .fold(0.0, |w: f64, (g, e)| w.max((g - e).abs() / e.abs()))
}
