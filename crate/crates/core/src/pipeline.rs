//! Stage orchestration: load → pretrain → graph → cluster → extract →
//! evaluate, with artifacts written to the run directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::admm::{
    clustering_representation, save_run, train_clustering_stage, AdmmState, History,
};
use crate::config::{RunConfig, RunMetadata, RunStats};
use crate::constraints::{apply_constraints, ConstraintJournal, ConstraintSet};
use crate::data::{load_dataset, load_labels, sibling_labels_path, DataMatrix};
use crate::error::{Error, Result};
use crate::extract::{extract_clusters, final_threshold, pca_project, ClusterAssignment};
use crate::graph::{build_graph, MknnGraph};
use crate::metrics::{acc, nmi};
use crate::nn::{layerwise_pretrain, load_net, save_net, MlpAutoencoder, PretrainReport};

pub const NET_FILE: &str = "net.bin";
pub const RUN_FILE: &str = "run.bin";
pub const GRAPH_FILE: &str = "graph.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const ASSIGNMENT_FILE: &str = "assignment.csv";
pub const PCA_FILE: &str = "pca.csv";
pub const METADATA_FILE: &str = "metadata.toml";
pub const EVALUATION_FILE: &str = "evaluation.csv";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub nmi: f64,
    pub acc: f64,
    pub clusters: usize,
}

impl Evaluation {
    pub fn compute(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        let clusters = predicted
            .iter()
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        Ok(Self {
            nmi: nmi(truth, predicted)?,
            acc: acc(truth, predicted)?,
            clusters,
        })
    }

    /// `metric,value`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "metric,value")?;
        writeln!(w, "nmi,{}", self.nmi)?;
        writeln!(w, "acc,{}", self.acc)?;
        writeln!(w, "clusters,{}", self.clusters)?;
        w.flush()?;
        Ok(())
    }
}

impl std::fmt::Display for Evaluation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "NMI {:.4}  ACC {:.4}  clusters {}",
            self.nmi, self.acc, self.clusters
        )
    }
}

/// Everything a clustering run produces, kept in memory.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub net: MlpAutoencoder,
    pub graph: MknnGraph,
    pub state: AdmmState,
    pub history: History,
    pub assignment: ClusterAssignment,
    pub evaluation: Option<Evaluation>,
    pub stats: RunStats,
}

/// Loads the dataset named in the config with labels, image shape and
/// optional standardization applied.
pub fn prepare_data(config: &RunConfig) -> Result<DataMatrix> {
    let load = || -> Result<DataMatrix> {
        let path = config
            .data
            .as_ref()
            .ok_or_else(|| Error::Parameter("no data path configured".into()))?;
        let mut data = load_dataset(path, config.data_format())?;
        let labels_path = match &config.labels {
            Some(p) => Some(p.clone()),
            None => Some(sibling_labels_path(path)).filter(|p| p.exists()),
        };
        if let Some(p) = labels_path {
            data = data.with_labels(load_labels(&p)?)?;
        }
        if let Some((h, w)) = config.image_shape {
            data = data.with_image_shape(h, w)?;
        }
        if config.standardize {
            data.standardize();
        }
        Ok(data)
    };
    load().map_err(|e| e.in_stage("load"))
}

pub fn pretrain_stage(
    x: &Array2<f64>,
    config: &RunConfig,
) -> Result<(MlpAutoencoder, PretrainReport)> {
    let (net, report) =
        layerwise_pretrain(x, &config.pretrain, config.seed).map_err(|e| e.in_stage("pretrain"))?;
    log::info!(
        "pretraining: reconstruction MSE {:.6} -> {:.6}",
        report.initial_loss,
        report.final_loss
    );
    Ok((net, report))
}

pub fn graph_stage(x: &Array2<f64>, config: &RunConfig) -> Result<MknnGraph> {
    let graph = build_graph(x, &config.graph).map_err(|e| e.in_stage("graph"))?;
    log::info!(
        "graph: {} points, {} edges (k = {})",
        graph.n(),
        graph.edges().len(),
        graph.k()
    );
    Ok(graph)
}

/// Constraint set from the configured journal, empty when none is set.
pub fn configured_constraints(config: &RunConfig) -> Result<ConstraintSet> {
    match &config.constraints {
        Some(p) => ConstraintJournal::replay(p).map_err(|e| e.in_stage("constraints")),
        None => Ok(ConstraintSet::new()),
    }
}

/// Runs the clustering stage on a pretrained network and a (possibly
/// constrained) graph, then extracts clusters and evaluates them when
/// `truth` is given.
pub fn cluster_stage(
    mut net: MlpAutoencoder,
    x: &Array2<f64>,
    graph: MknnGraph,
    truth: Option<&[usize]>,
    config: &RunConfig,
) -> Result<RunOutcome> {
    let mut state = AdmmState::initialize(&net, x, &graph, &config.cluster, config.seed)
        .map_err(|e| e.in_stage("cluster"))?;
    let mut stats = RunStats {
        n: graph.n(),
        dim: x.ncols(),
        edges: graph.edges().len(),
        lambda: state.lambda,
        delta1: state.schedule.delta1,
        delta2: state.schedule.delta2,
        mu1_initial: state.schedule.mu1,
        mu2_initial: state.schedule.mu2,
        update_interval: state.schedule.update_interval,
        ..RunStats::default()
    };
    let history = train_clustering_stage(&mut net, x, &graph, &mut state, &config.cluster)
        .map_err(|e| e.in_stage("cluster"))?;
    let assignment = extract_stage(&state, &graph)?;
    let evaluation = truth
        .map(|t| Evaluation::compute(t, &assignment.labels))
        .transpose()
        .map_err(|e| e.in_stage("evaluate"))?;
    stats.clustering_epochs = state.epoch;
    stats.threshold = assignment.threshold;
    stats.clusters = assignment.count;
    stats.nmi = evaluation.map(|e| e.nmi);
    stats.acc = evaluation.map(|e| e.acc);
    if let Some(e) = &evaluation {
        log::info!("evaluation: {e}");
    }
    Ok(RunOutcome {
        net,
        graph,
        state,
        history,
        assignment,
        evaluation,
        stats,
    })
}

pub fn extract_stage(state: &AdmmState, graph: &MknnGraph) -> Result<ClusterAssignment> {
    let u = clustering_representation(state);
    let extract = || -> Result<ClusterAssignment> {
        let tau = final_threshold(u, graph)?;
        extract_clusters(u, graph, tau)
    };
    extract().map_err(|e| e.in_stage("extract"))
}

/// Pretraining, graph construction, constraints and clustering, all in
/// memory.
pub fn run_on_data(data: &DataMatrix, config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let x = data.values();
    let (net, report) = pretrain_stage(x, config)?;
    let mut outcome = cluster_pretrained(data, net, config)?;
    outcome.stats.pretrain_initial_mse = Some(report.initial_loss);
    outcome.stats.pretrain_final_mse = Some(report.final_loss);
    Ok(outcome)
}

/// Everything after pretraining.
pub fn cluster_pretrained(
    data: &DataMatrix,
    net: MlpAutoencoder,
    config: &RunConfig,
) -> Result<RunOutcome> {
    let x = data.values();
    let base = graph_stage(x, config)?;
    let cs = configured_constraints(config)?;
    let graph = apply_constraints(&base, &cs).map_err(|e| e.in_stage("constraints"))?;
    let mut outcome = cluster_stage(net, x, graph, data.labels(), config)?;
    outcome.stats.constraints = cs.len();
    Ok(outcome)
}

fn out_path(config: &RunConfig, file: &str) -> PathBuf {
    config.output_dir.join(file)
}

/// Writes the net checkpoint, run checkpoint, graph, history, assignment,
/// PCA projection, evaluation (when labels exist) and metadata.
///
/// Files are first written to a staging directory and then renamed into
/// place, so a failure part-way leaves the previous outputs readable.
pub fn write_outputs(outcome: &RunOutcome, config: &RunConfig) -> Result<()> {
    let staging = config.output_dir.join(".staging");
    let write = || -> Result<()> {
        std::fs::create_dir_all(&staging)?;
        let at = |file: &str| staging.join(file);
        outcome.graph.write_csv(&at(GRAPH_FILE))?;
        outcome.history.write_csv(&at(HISTORY_FILE))?;
        outcome.assignment.write_csv(&at(ASSIGNMENT_FILE))?;
        let projection = pca_project(clustering_representation(&outcome.state), config.pca_dims)?;
        projection.write_csv(&at(PCA_FILE), &outcome.assignment.labels)?;
        let mut files = vec![GRAPH_FILE, HISTORY_FILE, ASSIGNMENT_FILE, PCA_FILE];
        if let Some(e) = &outcome.evaluation {
            e.write_csv(&at(EVALUATION_FILE))?;
            files.push(EVALUATION_FILE);
        }
        RunMetadata::new(config.clone(), outcome.stats.clone()).save(&at(METADATA_FILE))?;
        save_net(&at(NET_FILE), &outcome.net)?;
        save_run(&at(RUN_FILE), &outcome.state)?;
        files.extend([METADATA_FILE, NET_FILE, RUN_FILE]);
        for file in files {
            std::fs::rename(at(file), out_path(config, file))?;
        }
        std::fs::remove_dir(&staging)?;
        Ok(())
    };
    write().map_err(|e| e.in_stage("export"))
}

/// `pretrain` subcommand: trains the autoencoder and saves it to the run
/// directory.
pub fn run_pretrain(config: &RunConfig) -> Result<PretrainReport> {
    config.validate()?;
    let data = prepare_data(config)?;
    let (net, report) = pretrain_stage(data.values(), config)?;
    std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::from(e).in_stage("pretrain"))?;
    save_net(&out_path(config, NET_FILE), &net).map_err(|e| e.in_stage("pretrain"))?;
    let stats = RunStats {
        n: data.n(),
        dim: data.dim(),
        pretrain_initial_mse: Some(report.initial_loss),
        pretrain_final_mse: Some(report.final_loss),
        ..RunStats::default()
    };
    RunMetadata::new(config.clone(), stats)
        .save(&out_path(config, METADATA_FILE))
        .map_err(|e| e.in_stage("pretrain"))?;
    Ok(report)
}

/// `cluster` subcommand: loads the pretrained net from the run directory and
/// runs everything after pretraining.
pub fn run_cluster(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let data = prepare_data(config)?;
    let net = load_net(&out_path(config, NET_FILE), config.pretrain.dropout_rate)
        .map_err(|e| e.in_stage("cluster"))?;
    if net.input_dim() != data.dim() {
        return Err(Error::dim(
            "checkpoint input width vs data columns",
            data.dim(),
            net.input_dim(),
        )
        .in_stage("cluster"));
    }
    let previous = RunMetadata::load(&out_path(config, METADATA_FILE)).ok();
    let mut outcome = cluster_pretrained(&data, net, config)?;
    if let Some(m) = previous {
        outcome.stats.pretrain_initial_mse = m.stats.pretrain_initial_mse;
        outcome.stats.pretrain_final_mse = m.stats.pretrain_final_mse;
    }
    write_outputs(&outcome, config)?;
    Ok(outcome)
}

/// Full pipeline; equivalent to `pretrain` followed by `cluster`. The
/// pretrained network is saved before clustering starts so a later failure
/// leaves it behind.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome> {
    run_pretrain(config)?;
    run_cluster(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_csv() {
        let dir = tempfile::tempdir().unwrap();
        let e = Evaluation::compute(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(e.clusters, 2);
        e.write_csv(&dir.path().join("e.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
        assert!(text.starts_with("metric,value\nnmi,1\nacc,1\n"));
    }

    #[test]
    fn missing_data_is_a_load_error() {
        let err = prepare_data(&RunConfig::default()).unwrap_err();
        assert!(err.to_string().starts_with("load stage failed"), "{err}");
    }
}
