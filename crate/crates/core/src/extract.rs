//! Final cluster extraction and PCA projection for plotting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::graph::{connected_components, MknnGraph};
use crate::penalty::{mean_of_smallest, nearest_percent_count};

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub count: usize,
    pub threshold: f64,
}

impl ClusterAssignment {
    /// `index,label`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "index,label")?;
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads the labels of an `index,label` file. Rows must list every index
/// from 0 in order.
pub fn read_assignment(path: &Path) -> Result<Vec<usize>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut labels = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let location = format!("{}:{}", path.display(), i + 2);
        let perr = |message: String| Error::Parse {
            location: location.clone(),
            message,
        };
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        if rec.len() != 2 {
            return Err(perr(format!("expected 2 fields, got {}", rec.len())));
        }
        let index: usize = rec[0]
            .trim()
            .parse()
            .map_err(|e| perr(format!("index: {e}")))?;
        if index != i {
            return Err(perr(format!("expected index {i}, got {index}")));
        }
        labels.push(
            rec[1]
                .trim()
                .parse()
                .map_err(|e| perr(format!("label: {e}")))?,
        );
    }
    Ok(labels)
}

/// Mean length in `u` of the shortest 1% of graph edges (at least one).
pub fn final_threshold(u: &Array2<f64>, graph: &MknnGraph) -> Result<f64> {
    if graph.is_empty() {
        return Err(Error::DegenerateGraph(
            "no edges to derive a threshold from".into(),
        ));
    }
    let lengths = graph.edge_lengths(u);
    Ok(mean_of_smallest(
        &lengths,
        nearest_percent_count(lengths.len()),
    ))
}

/// Keeps graph edges whose length in `u` is at most `threshold` and labels
/// the connected components of what remains.
pub fn extract_clusters(
    u: &Array2<f64>,
    graph: &MknnGraph,
    threshold: f64,
) -> Result<ClusterAssignment> {
    if u.nrows() != graph.n() {
        return Err(Error::dim(
            "representation rows vs graph size",
            graph.n(),
            u.nrows(),
        ));
    }
    let kept: Vec<(usize, usize)> = graph
        .edges()
        .iter()
        .zip(graph.edge_lengths(u))
        .filter(|(_, len)| *len <= threshold)
        .map(|(e, _)| e.key())
        .collect();
    let comps = connected_components(graph.n(), &kept)?;
    Ok(ClusterAssignment {
        labels: comps.labels,
        count: comps.count,
        threshold,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// n × dims projected coordinates.
    pub coords: Array2<f64>,
    /// Variance along each principal direction, non-increasing.
    pub variances: Vec<f64>,
    /// dims × d principal directions.
    pub components: Array2<f64>,
}

impl Projection {
    /// `index,x,y[,z],label`
    pub fn write_csv(&self, path: &Path, labels: &[usize]) -> Result<()> {
        if labels.len() != self.coords.nrows() {
            return Err(Error::dim(
                "labels vs projected points",
                self.coords.nrows(),
                labels.len(),
            ));
        }
        let mut w = BufWriter::new(File::create(path)?);
        let header = ["x", "y", "z"][..self.coords.ncols()].join(",");
        writeln!(w, "index,{header},label")?;
        for (i, row) in self.coords.rows().into_iter().enumerate() {
            let coords: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{i},{},{}", coords.join(","), labels[i])?;
        }
        w.flush()?;
        Ok(())
    }
}

const PCA_MAX_ITER: usize = 10_000;
const PCA_TOL: f64 = 1e-15;

/// Projects centered rows of `m` onto its top `dims` principal directions,
/// found by power iteration on the covariance with deflation.
pub fn pca_project(m: &Array2<f64>, dims: usize) -> Result<Projection> {
    let (n, d) = m.dim();
    if !(1..=3).contains(&dims) {
        return Err(Error::Parameter(format!(
            "projection must be 2-D or 3-D, got {dims}"
        )));
    }
    if dims > d {
        return Err(Error::Parameter(format!(
            "cannot project {d} columns onto {dims} components"
        )));
    }
    if n < dims {
        return Err(Error::Parameter(format!(
            "need at least {dims} points, got {n}"
        )));
    }
    let mean = m.mean_axis(Axis(0)).expect("non-empty");
    let centered = m - &mean;
    let mut cov = centered.t().dot(&centered) / n as f64;
    let mut components = Array2::<f64>::zeros((dims, d));
    let mut variances = Vec::with_capacity(dims);
    for c in 0..dims {
        // Start off-axis so a rotated basis cannot stall the iteration.
        let mut v = Array1::from_shape_fn(d, |i| 1.0 + 0.1 * (i as f64 + 1.0).sqrt());
        v /= v.dot(&v).sqrt();
        let mut theta = 0.0;
        for _ in 0..PCA_MAX_ITER {
            let w = cov.dot(&v);
            let next = v.dot(&w);
            let norm = w.dot(&w).sqrt();
            if norm == 0.0 {
                theta = 0.0;
                break;
            }
            let next_v = w / norm;
            let done = (next - theta).abs() <= PCA_TOL * next.abs().max(f64::MIN_POSITIVE)
                && (&next_v - &v).mapv(f64::abs).sum() < 1e-12;
            theta = next;
            v = next_v;
            if done {
                break;
            }
        }
        let theta = theta.max(0.0);
        // Deflate: cov -= θ v vᵀ
        let vv = v.view().insert_axis(Axis(1));
        cov = cov - vv.dot(&vv.t()) * theta;
        components.row_mut(c).assign(&v);
        variances.push(theta);
    }
    let coords = centered.dot(&components.t());
    Ok(Projection {
        coords,
        variances,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let a = ClusterAssignment {
            labels: vec![1, 0, 1, 2],
            count: 3,
            threshold: 0.5,
        };
        a.write_csv(&path).unwrap();
        assert_eq!(read_assignment(&path).unwrap(), a.labels);
        std::fs::write(&path, "index,label\n0,1\n2,0\n").unwrap();
        assert!(read_assignment(&path).is_err());
    }
    use crate::graph::{DegreeMean, DistanceSpace, EdgeKind};
    use ndarray::array;

    fn path_graph(n: usize) -> MknnGraph {
        let pairs = (0..n - 1).map(|i| (i, i + 1, EdgeKind::Mutual)).collect();
        MknnGraph::from_pairs(n, 1, pairs, DistanceSpace::Input, DegreeMean::AllPoints).unwrap()
    }

    fn line(xs: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).unwrap()
    }

    #[test]
    fn threshold_uniform_edges() {
        let u = line(&[0.0, 0.7, 1.4, 2.1]);
        let t = final_threshold(&u, &path_graph(4)).unwrap();
        assert!((t - 0.7).abs() < 1e-12);
    }

    #[test]
    fn threshold_counts_floor_of_one_percent() {
        // 350 edges: average of the 3 shortest.
        let mut xs = vec![0.0];
        for i in 0..350 {
            let gap = if i < 3 { 0.1 * (i + 1) as f64 } else { 5.0 };
            xs.push(xs[i] + gap);
        }
        let t = final_threshold(&line(&xs), &path_graph(351)).unwrap();
        assert!((t - 0.2).abs() < 1e-12);
    }

    #[test]
    fn empty_graph_threshold_is_error() {
        let g = MknnGraph::from_pairs(2, 1, vec![], DistanceSpace::Input, DegreeMean::AllPoints)
            .unwrap();
        assert!(final_threshold(&line(&[0.0, 1.0]), &g).is_err());
    }

    #[test]
    fn extreme_thresholds() {
        let u = line(&[0.0, 1.0, 3.0, 6.0]);
        let g = path_graph(4);
        assert_eq!(extract_clusters(&u, &g, 0.5).unwrap().count, 4);
        let all = extract_clusters(&u, &g, 100.0).unwrap();
        assert_eq!(all.count, 1);
        assert_eq!(all.labels, vec![0, 0, 0, 0]);
    }

    #[test]
    fn threshold_is_inclusive() {
        let u = line(&[0.0, 1.0]);
        assert_eq!(extract_clusters(&u, &path_graph(2), 1.0).unwrap().count, 1);
    }

    #[test]
    fn pca_rank_one_data() {
        let m = Array2::from_shape_fn((20, 3), |(i, j)| i as f64 * [1.0, 2.0, -1.0][j]);
        let p = pca_project(&m, 2).unwrap();
        assert!(p.variances[1].abs() < 1e-9 * p.variances[0]);
    }

    #[test]
    fn pca_of_axis_aligned_2d_is_isometry() {
        let m = array![[3.0, 0.1], [-3.0, -0.2], [1.0, 0.3], [-1.0, -0.2]];
        let p = pca_project(&m, 2).unwrap();
        let centered = &m - &m.mean_axis(Axis(0)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let a = &centered.row(i) - &centered.row(j);
                let b = &p.coords.row(i) - &p.coords.row(j);
                assert!((a.dot(&a) - b.dot(&b)).abs() < 1e-9);
            }
        }
        assert!(p.variances[0] >= p.variances[1]);
    }

    #[test]
    fn pca_dimension_errors() {
        let m = Array2::<f64>::zeros((5, 2));
        assert!(pca_project(&m, 3).is_err());
        assert!(pca_project(&Array2::<f64>::zeros((1, 4)), 2).is_err());
    }
}
