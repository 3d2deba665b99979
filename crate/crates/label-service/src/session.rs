//! Labeling session state: the pair queue, the constraint set with its
//! journal, and the retraining worker.
//!
//! All mutations go through one mutex. A round works on clones of the
//! network and ADMM state on a worker thread and commits them back only when
//! it succeeds, so label submission never waits on training and a failed
//! round leaves the previous state in place.

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{SystemTime, UNIX_EPOCH};

use cpac::admm::{clustering_representation, load_run, train_clustering_stage, AdmmState};
use cpac::config::{RunConfig, RunStats};
use cpac::constraints::{
    apply_constraints, latent_edge_losses, rank_edges, ConstraintJournal, ConstraintKind, ConstraintSet, PairQueue,
};
use cpac::data::DataMatrix;
use cpac::extract::{pca_project, ClusterAssignment, Projection};
use cpac::graph::MknnGraph;
use cpac::nn::{load_net, MlpAutoencoder};
use cpac::pipeline::{extract_stage, graph_stage, prepare_data, write_outputs, Evaluation, RunOutcome, NET_FILE, RUN_FILE};
use ndarray::Array2;
use serde::Serialize;
use thiserror::Error;

/// Journal file name used when the config names none.
pub const JOURNAL_FILE: &str = "constraints.csv";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("pair {0} was never served in this session")]
    UnknownPair(u64),
    #[error("a training round is already running")]
    Busy,
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Core(#[from] cpac::Error),
}

pub type SessionResult<T> = Result<T, SessionError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingState {
    Idle,
    Training,
    Error,
}

/// Row-major grayscale pixels, scaled with the dataset's global range.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImagePayload {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointPayload {
    pub index: usize,
    pub features: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<ImagePayload>,
    /// Position in the current 2-D PCA scatter.
    pub pca: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairPayload {
    pub pair_id: u64,
    pub p: usize,
    pub q: usize,
    pub loss: f64,
    pub payload_p: PointPayload,
    pub payload_q: PointPayload,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<PairPayload>,
    /// No unserved pairs remain in the queue.
    pub exhausted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelAck {
    pub pair_id: u64,
    pub p: usize,
    pub q: usize,
    pub kind: &'static str,
    /// False when the pair already carried this label.
    pub changed: bool,
    pub pending: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub nmi: f64,
    pub acc: f64,
    pub clusters: usize,
}

impl From<Evaluation> for Metrics {
    fn from(e: Evaluation) -> Self {
        Self {
            nmi: e.nmi,
            acc: e.acc,
            clusters: e.clusters,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatusSnapshot {
    pub session_id: String,
    pub state: TrainingState,
    pub round: usize,
    pub must_count: usize,
    pub cannot_count: usize,
    pub pending: usize,
    pub served: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmbeddingPoint {
    pub index: usize,
    pub coords: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Embedding {
    pub round: usize,
    pub variances: Vec<f64>,
    pub points: Vec<EmbeddingPoint>,
}

#[derive(Clone, Copy, Debug)]
struct Served {
    p: usize,
    q: usize,
}

struct Inner {
    id: String,
    config: RunConfig,
    data: Arc<DataMatrix>,
    pixel_range: (f64, f64),
    base_graph: MknnGraph,
    net: MlpAutoencoder,
    state: AdmmState,
    queue: PairQueue,
    served: Vec<Served>,
    served_keys: HashSet<(usize, usize)>,
    constraints: ConstraintSet,
    journal: ConstraintJournal,
    next_timestamp: u64,
    round: usize,
    status: TrainingState,
    last_error: Option<String>,
    assignment: Option<ClusterAssignment>,
    evaluation: Option<Evaluation>,
    projection: Projection,
    worker: Option<JoinHandle<()>>,
}

/// Shared handle to one labeling session.
#[derive(Clone)]
pub struct LabelSession {
    inner: Arc<Mutex<Inner>>,
}

fn rank(net: &MlpAutoencoder, x: &Array2<f64>, graph: &MknnGraph, mu2: f64) -> cpac::Result<PairQueue> {
    let z = net.encode(x, None)?;
    rank_edges(&latent_edge_losses(&z, graph, mu2), graph)
}

fn value_range(m: &Array2<f64>) -> (f64, f64) {
    m.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn to_pixel(v: f64, (lo, hi): (f64, f64)) -> u8 {
    if hi <= lo {
        return 0;
    }
    ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
}

struct RoundInput {
    net: MlpAutoencoder,
    state: AdmmState,
    base_graph: MknnGraph,
    constraints: ConstraintSet,
    config: RunConfig,
    data: Arc<DataMatrix>,
    epochs: usize,
    refresh: bool,
}

struct RoundOutput {
    net: MlpAutoencoder,
    state: AdmmState,
    assignment: ClusterAssignment,
    evaluation: Option<Evaluation>,
    projection: Projection,
    queue: Option<PairQueue>,
}

/// Applies the constraints, resumes clustering, extracts clusters and
/// persists the run outputs.
fn run_round(input: RoundInput) -> cpac::Result<RoundOutput> {
    let RoundInput {
        mut net,
        mut state,
        base_graph,
        constraints,
        config,
        data,
        epochs,
        refresh,
    } = input;
    let x = data.values();
    let graph = apply_constraints(&base_graph, &constraints)?;
    let mut cluster = config.cluster.clone();
    cluster.epochs = epochs;
    let history = train_clustering_stage(&mut net, x, &graph, &mut state, &cluster)?;
    let assignment = extract_stage(&state, &graph)?;
    let evaluation = data
        .labels()
        .map(|t| Evaluation::compute(t, &assignment.labels))
        .transpose()?;
    let projection = pca_project(clustering_representation(&state), 2)?;
    let queue = if refresh {
        Some(rank(&net, x, &graph, state.schedule.mu2)?)
    } else {
        None
    };
    let stats = RunStats {
        n: graph.n(),
        dim: x.ncols(),
        edges: graph.edges().len(),
        constraints: constraints.len(),
        lambda: state.lambda,
        delta1: state.schedule.delta1,
        delta2: state.schedule.delta2,
        update_interval: state.schedule.update_interval,
        clustering_epochs: state.epoch,
        threshold: assignment.threshold,
        clusters: assignment.count,
        nmi: evaluation.map(|e| e.nmi),
        acc: evaluation.map(|e| e.acc),
        ..RunStats::default()
    };
    let outcome = RunOutcome {
        net,
        graph,
        state,
        history,
        assignment,
        evaluation,
        stats,
    };
    write_outputs(&outcome, &config)?;
    Ok(RoundOutput {
        net: outcome.net,
        state: outcome.state,
        assignment: outcome.assignment,
        evaluation: outcome.evaluation,
        projection,
        queue,
    })
}

impl Inner {
    fn point(&self, index: usize) -> PointPayload {
        let row = self.data.values().row(index);
        let image = self.data.image_shape().map(|(height, width)| ImagePayload {
            height,
            width,
            pixels: row.iter().map(|&v| to_pixel(v, self.pixel_range)).collect(),
        });
        PointPayload {
            index,
            features: row.to_vec(),
            image,
            pca: self.projection.coords.row(index).to_vec(),
        }
    }
}

impl LabelSession {
    /// Opens a session on the run directory named by `config.output_dir`.
    ///
    /// The pretrained network must exist there. A run checkpoint, when
    /// present, is resumed; otherwise the clustering state is initialized
    /// from the network. The constraint journal is replayed if it exists.
    pub fn open(config: RunConfig) -> SessionResult<Self> {
        config.validate()?;
        let data = prepare_data(&config)?;
        let net = load_net(&config.output_dir.join(NET_FILE), config.pretrain.dropout_rate)?;
        let base_graph = graph_stage(data.values(), &config)?;
        let journal_path = journal_path(&config);
        let constraints = if journal_path.exists() {
            ConstraintJournal::replay(&journal_path)?
        } else {
            ConstraintSet::new()
        };
        let graph = apply_constraints(&base_graph, &constraints)?;
        let run_path = config.output_dir.join(RUN_FILE);
        let state = if run_path.exists() {
            let state = load_run(&run_path)?;
            if state.u.nrows() != data.n() {
                return Err(SessionError::BadRequest(format!(
                    "run checkpoint holds {} points but the data has {}",
                    state.u.nrows(),
                    data.n()
                )));
            }
            state
        } else {
            AdmmState::initialize(&net, data.values(), &graph, &config.cluster, config.seed)?
        };
        let queue = rank(&net, data.values(), &graph, state.schedule.mu2)?;
        let assignment = extract_stage(&state, &graph).ok();
        let evaluation = match (data.labels(), &assignment) {
            (Some(t), Some(a)) => Some(Evaluation::compute(t, &a.labels)?),
            _ => None,
        };
        let projection = pca_project(clustering_representation(&state), 2)?;
        let journal = ConstraintJournal::open(&journal_path)?;
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let inner = Inner {
            id: format!("{:016x}", (nanos as u64) ^ config.seed),
            pixel_range: value_range(data.values()),
            next_timestamp: constraints.next_timestamp(),
            data: Arc::new(data),
            config,
            base_graph,
            net,
            state,
            queue,
            served: Vec::new(),
            served_keys: HashSet::new(),
            constraints,
            journal,
            round: 0,
            status: TrainingState::Idle,
            last_error: None,
            assignment,
            evaluation,
            projection,
            worker: None,
        };
        log::info!("label session {} opened", inner.id);
        Ok(Self {
            inner: Arc::new(Mutex::new(inner)),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // A panic while holding the lock cannot leave the session
        // half-written: every mutation is a single assignment or a
        // journal append followed by one.
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Serves the next `count` queue entries not served before in this
    /// session.
    pub fn get_pairs(&self, count: usize) -> PairBatch {
        let mut guard = self.lock();
        let inner = &mut *guard;
        let mut picked = Vec::new();
        while picked.len() < count {
            let Some(e) = inner.queue.take(1).first().cloned() else {
                break;
            };
            if inner.served_keys.insert((e.p, e.q)) {
                picked.push(e);
            }
        }
        let pairs = picked
            .into_iter()
            .map(|e| {
                let pair_id = inner.served.len() as u64;
                inner.served.push(Served { p: e.p, q: e.q });
                PairPayload {
                    pair_id,
                    p: e.p,
                    q: e.q,
                    loss: e.loss,
                    payload_p: inner.point(e.p),
                    payload_q: inner.point(e.q),
                }
            })
            .collect();
        let exhausted = inner
            .queue
            .remaining()
            .iter()
            .all(|e| inner.served_keys.contains(&(e.p, e.q)));
        PairBatch { pairs, exhausted }
    }

    /// Records a label for a served pair. The journal entry is on disk
    /// before this returns; relabeling with the same kind changes nothing.
    pub fn post_label(&self, pair_id: u64, kind: ConstraintKind) -> SessionResult<LabelAck> {
        let mut guard = self.lock();
        let inner = &mut *guard;
        let served = usize::try_from(pair_id)
            .ok()
            .and_then(|i| inner.served.get(i).copied())
            .ok_or(SessionError::UnknownPair(pair_id))?;
        let (p, q) = (served.p, served.q);
        let changed = inner.constraints.get(p, q).is_none_or(|c| c.kind != kind);
        if changed {
            let ts = inner.next_timestamp;
            inner.journal.append(p, q, kind, ts)?;
            inner.constraints.record(p, q, kind, ts)?;
            inner.next_timestamp += 1;
        }
        Ok(LabelAck {
            pair_id,
            p,
            q,
            kind: kind.as_str(),
            changed,
            pending: inner.constraints.pending(),
        })
    }

    /// Launches a retraining round on a worker thread.
    pub fn start_round(&self, epochs: usize) -> SessionResult<StatusSnapshot> {
        let mut inner = self.lock();
        if inner.status == TrainingState::Training {
            return Err(SessionError::Busy);
        }
        if let Some(done) = inner.worker.take() {
            let _ = done.join();
        }
        let input = RoundInput {
            net: inner.net.clone(),
            state: inner.state.clone(),
            base_graph: inner.base_graph.clone(),
            constraints: inner.constraints.clone(),
            config: inner.config.clone(),
            data: Arc::clone(&inner.data),
            epochs,
            refresh: inner.config.refresh_ranking,
        };
        let applied_before = inner.next_timestamp;
        inner.status = TrainingState::Training;
        inner.last_error = None;
        let session = self.clone();
        inner.worker = Some(std::thread::spawn(move || {
            let result = run_round(input);
            session.finish_round(result, applied_before);
        }));
        Ok(snapshot(&inner))
    }

    fn finish_round(&self, result: cpac::Result<RoundOutput>, applied_before: u64) {
        let mut inner = self.lock();
        match result {
            Ok(out) => {
                inner.net = out.net;
                inner.state = out.state;
                inner.assignment = Some(out.assignment);
                inner.evaluation = out.evaluation;
                inner.projection = out.projection;
                if let Some(queue) = out.queue {
                    inner.queue = queue;
                }
                inner.constraints.mark_applied_before(applied_before);
                inner.round += 1;
                inner.status = TrainingState::Idle;
                log::info!("round {} finished", inner.round);
            }
            Err(e) => {
                log::error!("round failed: {e}");
                inner.status = TrainingState::Error;
                inner.last_error = Some(e.to_string());
            }
        }
    }

    /// Blocks until the running round, if any, has finished.
    pub fn wait_for_round(&self) {
        let worker = self.lock().worker.take();
        if let Some(w) = worker {
            let _ = w.join();
        }
    }

    pub fn status(&self) -> StatusSnapshot {
        snapshot(&self.lock())
    }

    pub fn embedding(&self) -> Embedding {
        let inner = self.lock();
        let labels = inner.assignment.as_ref().map(|a| &a.labels);
        let points = inner
            .projection
            .coords
            .rows()
            .into_iter()
            .enumerate()
            .map(|(index, row)| EmbeddingPoint {
                index,
                coords: row.to_vec(),
                cluster: labels.map(|l| l[index]),
            })
            .collect();
        Embedding {
            round: inner.round,
            variances: inner.projection.variances.clone(),
            points,
        }
    }

    /// Snapshot of the constraint set as held in memory.
    pub fn constraints(&self) -> ConstraintSet {
        self.lock().constraints.clone()
    }

    pub fn journal_path(&self) -> PathBuf {
        self.lock().journal.path().to_path_buf()
    }

    /// The full pair ranking currently used to serve pairs.
    pub fn queue(&self) -> PairQueue {
        self.lock().queue.clone()
    }
}

fn snapshot(inner: &Inner) -> StatusSnapshot {
    StatusSnapshot {
        session_id: inner.id.clone(),
        state: inner.status,
        round: inner.round,
        must_count: inner.constraints.count(ConstraintKind::MustLink),
        cannot_count: inner.constraints.count(ConstraintKind::CannotLink),
        pending: inner.constraints.pending(),
        served: inner.served.len(),
        clusters: inner.assignment.as_ref().map(|a| a.count),
        metrics: inner.evaluation.map(Metrics::from),
        error: inner.last_error.clone(),
    }
}

/// Constraint journal location for a run configuration.
pub fn journal_path(config: &RunConfig) -> PathBuf {
    config
        .constraints
        .clone()
        .unwrap_or_else(|| config.output_dir.join(JOURNAL_FILE))
}
