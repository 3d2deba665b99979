use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::components::UnionFind;
use crate::error::{Error, Result};

/// How an edge entered the connectivity graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    /// p and q are each among the other's k nearest neighbors.
    Mutual,
    /// Added by the kNN spanning forest so no point is left isolated.
    Spanning,
    /// Deliberately wrong edge added by a corruption experiment.
    Injected,
    /// Inserted by a must-link constraint.
    MustLink,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub p: usize,
    pub q: usize,
    pub weight: f64,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn key(&self) -> (usize, usize) {
        (self.p, self.q)
    }
}

/// Space in which pair distances were measured when the graph was built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceSpace {
    Input,
    Latent,
    Loaded,
}

/// Which points enter the mean degree in the edge-weight numerator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegreeMean {
    #[default]
    AllPoints,
    ConnectedOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub k: usize,
    /// Add the minimum spanning forest of the symmetric kNN graph.
    pub spanning_forest: bool,
    pub degree_mean: DegreeMean,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: 10,
            spanning_forest: true,
            degree_mean: DegreeMean::AllPoints,
        }
    }
}

/// Connectivity graph with balanced edge weights.
///
/// `degrees` and `unary_weights` are fixed when the graph is constructed
/// (or re-weighted); constraint edits change `edges` only.
#[derive(Clone, Debug, PartialEq)]
pub struct MknnGraph {
    n: usize,
    k: usize,
    edges: Vec<Edge>,
    degrees: Vec<usize>,
    unary_weights: Vec<f64>,
    origin: DistanceSpace,
    degree_mean: DegreeMean,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// For every point, its `k` nearest neighbors as `(index, squared distance)`
/// sorted by distance, ties by ascending index.
pub fn knn_lists(points: &Array2<f64>, k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::Parameter(format!("need at least 2 points, got {n}")));
    }
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!(
            "k must be in [1, {}), got {k}",
            n
        )));
    }
    let mut lists = Vec::with_capacity(n);
    let mut cand: Vec<(usize, f64)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        let pi = points.row(i);
        cand.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, sq_dist(pi, points.row(j)))),
        );
        let order = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        cand.select_nth_unstable_by(k - 1, order);
        let mut top = cand[..k].to_vec();
        top.sort_by(order);
        lists.push(top);
    }
    Ok(lists)
}

/// Per-edge weights `mean(n_i) / sqrt(n_p n_q)`.
pub fn edge_weights(n: usize, edges: &[(usize, usize)], mean: DegreeMean) -> Vec<f64> {
    let degrees = incidence(n, edges.iter().copied());
    let mean_degree = mean_degree(&degrees, mean);
    edges
        .iter()
        .map(|&(p, q)| mean_degree / ((degrees[p] * degrees[q]) as f64).sqrt())
        .collect()
}

fn incidence(n: usize, pairs: impl Iterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut deg = vec![0usize; n];
    for (p, q) in pairs {
        deg[p] += 1;
        deg[q] += 1;
    }
    deg
}

fn mean_degree(degrees: &[usize], mean: DegreeMean) -> f64 {
    let (sum, count) = match mean {
        DegreeMean::AllPoints => (degrees.iter().sum::<usize>(), degrees.len()),
        DegreeMean::ConnectedOnly => degrees
            .iter()
            .filter(|&&d| d > 0)
            .fold((0, 0), |(s, c), &d| (s + d, c + 1)),
    };
    if count == 0 {
        0.0
    } else {
        sum as f64 / count as f64
    }
}

/// Mutual-kNN graph under Euclidean distance.
pub fn build_mknn(points: &Array2<f64>, k: usize) -> Result<MknnGraph> {
    let lists = knn_lists(points, k)?;
    let pairs = mutual_pairs(&lists);
    MknnGraph::from_pairs(
        points.nrows(),
        k,
        pairs
            .into_iter()
            .map(|(p, q)| (p, q, EdgeKind::Mutual))
            .collect(),
        DistanceSpace::Input,
        DegreeMean::AllPoints,
    )
}

fn mutual_pairs(lists: &[Vec<(usize, f64)>]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (p, list) in lists.iter().enumerate() {
        for &(q, _) in list {
            if p < q && lists[q].iter().any(|&(r, _)| r == p) {
                pairs.push((p, q));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Builds the clustering graph: mutual kNN, optionally joined with the
/// minimum spanning forest of the symmetric kNN graph.
pub fn build_graph(points: &Array2<f64>, config: &GraphConfig) -> Result<MknnGraph> {
    let lists = knn_lists(points, config.k)?;
    let mut edges: Vec<(usize, usize, EdgeKind)> = mutual_pairs(&lists)
        .into_iter()
        .map(|(p, q)| (p, q, EdgeKind::Mutual))
        .collect();
    if config.spanning_forest {
        let present: HashSet<(usize, usize)> = edges.iter().map(|&(p, q, _)| (p, q)).collect();
        let mut candidates: Vec<(f64, usize, usize)> = lists
            .iter()
            .enumerate()
            .flat_map(|(p, list)| list.iter().map(move |&(q, d)| (d, p.min(q), p.max(q))))
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        candidates.dedup_by(|a, b| a.1 == b.1 && a.2 == b.2);
        let mut forest = UnionFind::new(points.nrows());
        for (_, p, q) in candidates {
            if forest.union(p, q) && !present.contains(&(p, q)) {
                edges.push((p, q, EdgeKind::Spanning));
            }
        }
    }
    MknnGraph::from_pairs(
        points.nrows(),
        config.k,
        edges,
        DistanceSpace::Input,
        config.degree_mean,
    )
}

impl MknnGraph {
    /// Canonicalizes (p < q), rejects self-loops and duplicates, then computes
    /// degrees, unary weights and edge weights.
    pub fn from_pairs(
        n: usize,
        k: usize,
        pairs: Vec<(usize, usize, EdgeKind)>,
        origin: DistanceSpace,
        degree_mean: DegreeMean,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        let mut edges = Vec::with_capacity(pairs.len());
        for (a, b, kind) in pairs {
            if a >= n || b >= n {
                return Err(Error::Input(format!(
                    "edge ({a}, {b}) out of range for n = {n}"
                )));
            }
            if a == b {
                return Err(Error::Input(format!("self-loop on point {a}")));
            }
            let (p, q) = (a.min(b), a.max(b));
            if !seen.insert((p, q)) {
                return Err(Error::Input(format!("duplicate edge ({p}, {q})")));
            }
            edges.push(Edge {
                p,
                q,
                weight: 0.0,
                kind,
            });
        }
        edges.sort_by_key(Edge::key);
        let mut graph = Self {
            n,
            k,
            edges,
            degrees: Vec::new(),
            unary_weights: Vec::new(),
            origin,
            degree_mean,
        };
        graph.reweight();
        Ok(graph)
    }

    /// Recomputes degrees, unary weights and edge weights from the current
    /// edge set.
    pub fn reweight(&mut self) {
        self.degrees = incidence(self.n, self.edges.iter().map(Edge::key));
        let mean = mean_degree(&self.degrees, self.degree_mean);
        for e in &mut self.edges {
            e.weight = mean / ((self.degrees[e.p] * self.degrees[e.q]) as f64).sqrt();
        }
        self.unary_weights = self
            .degrees
            .iter()
            .map(|&d| if d > 0 { 1.0 / d as f64 } else { 0.0 })
            .collect();
    }

    /// Replaces the edge list while keeping degrees and unary weights.
    pub(crate) fn set_edges_frozen(&mut self, mut edges: Vec<Edge>) {
        edges.sort_by_key(Edge::key);
        self.edges = edges;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn unary_weights(&self) -> &[f64] {
        &self.unary_weights
    }

    pub fn origin(&self) -> DistanceSpace {
        self.origin
    }

    pub fn degree_mean(&self) -> DegreeMean {
        self.degree_mean
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(Edge::key).collect()
    }

    /// Fraction of the n×n possible connections present as edges.
    pub fn density(&self) -> f64 {
        self.edges.len() as f64 / (self.n as f64 * self.n as f64)
    }

    pub fn max_weight(&self) -> Option<f64> {
        self.edges.iter().map(|e| e.weight).reduce(f64::max)
    }

    /// Euclidean length of every edge measured in `points`.
    pub fn edge_lengths(&self, points: &Array2<f64>) -> Vec<f64> {
        self.edges
            .iter()
            .map(|e| sq_dist(points.row(e.p), points.row(e.q)).sqrt())
            .collect()
    }

    /// Adds edges (kind [`EdgeKind::Injected`]) and recomputes all weights.
    pub fn inject_edges(&mut self, pairs: &[(usize, usize)]) -> Result<usize> {
        let mut present: HashSet<(usize, usize)> = self.edges.iter().map(Edge::key).collect();
        let mut added = 0;
        for &(a, b) in pairs {
            if a >= self.n || b >= self.n || a == b {
                return Err(Error::Input(format!("cannot inject edge ({a}, {b})")));
            }
            let key = (a.min(b), a.max(b));
            if present.insert(key) {
                self.edges.push(Edge {
                    p: key.0,
                    q: key.1,
                    weight: 0.0,
                    kind: EdgeKind::Injected,
                });
                added += 1;
            }
        }
        self.edges.sort_by_key(Edge::key);
        self.reweight();
        Ok(added)
    }

    /// Writes `p,q,w` CSV, one edge per row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "p,q,w")?;
        for e in &self.edges {
            writeln!(w, "{},{},{}", e.p, e.q, e.weight)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a `p,q,w` CSV. Degrees are recomputed from the edges while the
    /// stored weights are kept verbatim.
    pub fn read_csv(path: &Path, n: usize, k: usize, degree_mean: DegreeMean) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut pairs = Vec::new();
        let mut weights = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                location: format!("{}:{}", path.display(), line + 2),
                message: e.to_string(),
            })?;
            let field = |i: usize| -> Result<&str> {
                rec.get(i).ok_or_else(|| Error::Parse {
                    location: format!("{}:{}", path.display(), line + 2),
                    message: "expected 3 fields".into(),
                })
            };
            let parse_err = |m: String| Error::Parse {
                location: format!("{}:{}", path.display(), line + 2),
                message: m,
            };
            let p: usize = field(0)?
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("{e}")))?;
            let q: usize = field(1)?
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("{e}")))?;
            let w: f64 = field(2)?
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("{e}")))?;
            pairs.push((p, q, EdgeKind::Mutual));
            weights.push(((p.min(q), p.max(q)), w));
        }
        let mut graph = Self::from_pairs(n, k, pairs, DistanceSpace::Loaded, degree_mean)?;
        weights.sort_by_key(|&(key, _)| key);
        for (e, (_, w)) in graph.edges.iter_mut().zip(weights) {
            e.weight = w;
        }
        Ok(graph)
    }
}
