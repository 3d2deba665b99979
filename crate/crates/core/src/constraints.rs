//! Pair ranking, must-link / cannot-link constraints and graph edits.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::admm::LossBreakdown;
use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeKind, MknnGraph};
use crate::penalty::rho;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    #[serde(alias = "must")]
    MustLink,
    #[serde(alias = "cannot")]
    CannotLink,
}

impl ConstraintKind {
    /// Journal spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintKind::MustLink => "must",
            ConstraintKind::CannotLink => "cannot",
        }
    }
}

impl std::str::FromStr for ConstraintKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "must" | "must_link" => Ok(ConstraintKind::MustLink),
            "cannot" | "cannot_link" => Ok(ConstraintKind::CannotLink),
            other => Err(Error::Parameter(format!(
                "unknown constraint kind '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    /// Smaller endpoint.
    pub p: usize,
    pub q: usize,
    pub kind: ConstraintKind,
    pub timestamp: u64,
    pub applied: bool,
}

/// Effective constraints, one per unordered pair, latest label wins.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintSet {
    entries: Vec<Constraint>,
    index: HashMap<(usize, usize), usize>,
}

fn canonical(a: usize, b: usize) -> Result<(usize, usize)> {
    if a == b {
        return Err(Error::Input(format!("constraint on self-pair ({a}, {a})")));
    }
    Ok((a.min(b), a.max(b)))
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a label. Returns `false` when the pair already carries the
    /// same kind (nothing changes); a different kind replaces the old entry.
    pub fn record(
        &mut self,
        a: usize,
        b: usize,
        kind: ConstraintKind,
        timestamp: u64,
    ) -> Result<bool> {
        let (p, q) = canonical(a, b)?;
        match self.index.get(&(p, q)) {
            Some(&i) if self.entries[i].kind == kind => Ok(false),
            Some(&i) => {
                let e = &mut self.entries[i];
                e.kind = kind;
                e.timestamp = timestamp;
                e.applied = false;
                Ok(true)
            }
            None => {
                self.index.insert((p, q), self.entries.len());
                self.entries.push(Constraint {
                    p,
                    q,
                    kind,
                    timestamp,
                    applied: false,
                });
                Ok(true)
            }
        }
    }

    pub fn get(&self, a: usize, b: usize) -> Option<&Constraint> {
        let key = (a.min(b), a.max(b));
        self.index.get(&key).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[Constraint] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, kind: ConstraintKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    pub fn pending(&self) -> usize {
        self.entries.iter().filter(|e| !e.applied).count()
    }

    pub fn mark_applied(&mut self) {
        for e in &mut self.entries {
            e.applied = true;
        }
    }

    /// Marks only labels older than `timestamp`, leaving later ones pending.
    pub fn mark_applied_before(&mut self, timestamp: u64) {
        for e in self.entries.iter_mut().filter(|e| e.timestamp < timestamp) {
            e.applied = true;
        }
    }

    /// One past the largest timestamp seen, 0 for an empty set.
    pub fn next_timestamp(&self) -> u64 {
        self.entries
            .iter()
            .map(|e| e.timestamp + 1)
            .max()
            .unwrap_or(0)
    }
}

/// Edits the graph: cannot-links drop their edge, must-links get the largest
/// remaining weight (inserted when absent). Degrees and unary weights are
/// left as they were at construction.
///
/// Always apply the full set to the graph the set was collected against;
/// applying it again to the result changes nothing.
pub fn apply_constraints(graph: &MknnGraph, cs: &ConstraintSet) -> Result<MknnGraph> {
    let n = graph.n();
    for c in cs.entries() {
        if c.p >= n || c.q >= n {
            return Err(Error::Input(format!(
                "constraint ({}, {}) out of range for n = {n}",
                c.p, c.q
            )));
        }
    }
    if cs.is_empty() {
        return Ok(graph.clone());
    }
    let mut edges: BTreeMap<(usize, usize), Edge> = graph
        .edges()
        .iter()
        .filter(|e| !matches!(cs.get(e.p, e.q), Some(c) if c.kind == ConstraintKind::CannotLink))
        .map(|e| (e.key(), e.clone()))
        .collect();
    let max_w = edges
        .values()
        .map(|e| e.weight)
        .reduce(f64::max)
        .or_else(|| graph.max_weight())
        .unwrap_or(1.0);
    for c in cs
        .entries()
        .iter()
        .filter(|c| c.kind == ConstraintKind::MustLink)
    {
        edges.insert(
            (c.p, c.q),
            Edge {
                p: c.p,
                q: c.q,
                weight: max_w,
                kind: EdgeKind::MustLink,
            },
        );
    }
    let mut out = graph.clone();
    out.set_edges_frozen(edges.into_values().collect());
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueueEntry {
    pub edge_id: usize,
    pub p: usize,
    pub q: usize,
    pub loss: f64,
}

/// Graph edges in descending loss order with a presentation cursor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairQueue {
    entries: Vec<QueueEntry>,
    cursor: usize,
}

impl PairQueue {
    pub fn entries(&self) -> &[QueueEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn head(&self) -> Option<&QueueEntry> {
        self.entries.first()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> &[QueueEntry] {
        &self.entries[self.cursor..]
    }

    /// Hands out up to `count` entries not presented before.
    pub fn take(&mut self, count: usize) -> &[QueueEntry] {
        let start = self.cursor;
        self.cursor = (start + count).min(self.entries.len());
        &self.entries[start..self.cursor]
    }
}

/// Orders edges by a per-edge loss, largest first; ties by edge id.
pub fn rank_edges(per_edge_loss: &[f64], graph: &MknnGraph) -> Result<PairQueue> {
    if per_edge_loss.len() != graph.edges().len() {
        return Err(Error::dim(
            "per-edge losses vs graph edges",
            graph.edges().len(),
            per_edge_loss.len(),
        ));
    }
    if let Some(bad) = per_edge_loss.iter().find(|l| !l.is_finite()) {
        return Err(Error::NonFinite(format!(
            "edge loss {bad} cannot be ranked"
        )));
    }
    let mut entries: Vec<QueueEntry> = graph
        .edges()
        .iter()
        .zip(per_edge_loss)
        .enumerate()
        .map(|(edge_id, (e, &loss))| QueueEntry {
            edge_id,
            p: e.p,
            q: e.q,
            loss,
        })
        .collect();
    entries.sort_by(|a, b| b.loss.total_cmp(&a.loss).then(a.edge_id.cmp(&b.edge_id)));
    Ok(PairQueue { entries, cursor: 0 })
}

pub fn rank_pairs(breakdown: &LossBreakdown, graph: &MknnGraph) -> Result<PairQueue> {
    rank_edges(&breakdown.per_edge_loss, graph)
}

/// `w_pq ρ2(||z_p - z_q||²)` for every edge, measured in `z`.
pub fn latent_edge_losses(z: &Array2<f64>, graph: &MknnGraph, mu2: f64) -> Vec<f64> {
    graph
        .edges()
        .iter()
        .zip(graph.edge_lengths(z))
        .map(|(e, len)| e.weight * rho(len * len, mu2))
        .collect()
}

/// Labels the top `count` queue entries from ground truth, as a simulated
/// user would. Timestamps are the queue positions.
pub fn simulate_oracle_labels(
    queue: &PairQueue,
    truth: &[usize],
    count: usize,
) -> Result<ConstraintSet> {
    if count > queue.len() {
        log::warn!(
            "asked for {count} labels but the queue holds {}",
            queue.len()
        );
    }
    let mut cs = ConstraintSet::new();
    for (t, e) in queue.entries().iter().take(count).enumerate() {
        if e.p >= truth.len() || e.q >= truth.len() {
            return Err(Error::dim(
                "truth labels vs queue indices",
                e.p.max(e.q) + 1,
                truth.len(),
            ));
        }
        let kind = if truth[e.p] == truth[e.q] {
            ConstraintKind::MustLink
        } else {
            ConstraintKind::CannotLink
        };
        cs.record(e.p, e.q, kind, t as u64)?;
    }
    Ok(cs)
}

/// Append-only `p,q,kind,timestamp` log. Every append is flushed to disk
/// before it returns.
#[derive(Debug)]
pub struct ConstraintJournal {
    path: PathBuf,
    file: File,
}

impl ConstraintJournal {
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            file.write_all(b"p,q,kind,timestamp\n")?;
            file.sync_data()?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(
        &mut self,
        p: usize,
        q: usize,
        kind: ConstraintKind,
        timestamp: u64,
    ) -> Result<()> {
        let line = format!("{p},{q},{},{timestamp}\n", kind.as_str());
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        Ok(())
    }

    /// Rebuilds the constraint set by replaying every line in order.
    pub fn replay(path: &Path) -> Result<ConstraintSet> {
        let mut cs = ConstraintSet::new();
        if !path.exists() {
            return Ok(cs);
        }
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })?;
        for (i, rec) in reader.records().enumerate() {
            let location = format!("{}:{}", path.display(), i + 2);
            let rec = rec.map_err(|e| Error::Parse {
                location: location.clone(),
                message: e.to_string(),
            })?;
            if rec.len() != 4 {
                return Err(Error::Parse {
                    location,
                    message: format!("expected 4 fields, got {}", rec.len()),
                });
            }
            let perr = |m: String| Error::Parse {
                location: location.clone(),
                message: m,
            };
            let p: usize = rec[0].trim().parse().map_err(|e| perr(format!("p: {e}")))?;
            let q: usize = rec[1].trim().parse().map_err(|e| perr(format!("q: {e}")))?;
            let kind: ConstraintKind = rec[2].parse().map_err(|e| perr(format!("{e}")))?;
            let ts: u64 = rec[3]
                .trim()
                .parse()
                .map_err(|e| perr(format!("timestamp: {e}")))?;
            cs.record(p, q, kind, ts).map_err(|e| perr(e.to_string()))?;
        }
        Ok(cs)
    }
}

/// Writes a whole set as a fresh journal (used for exports and tests).
pub fn write_journal(path: &Path, cs: &ConstraintSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "p,q,kind,timestamp")?;
    for c in cs.entries() {
        writeln!(w, "{},{},{},{}", c.p, c.q, c.kind.as_str(), c.timestamp)?;
    }
    w.flush()?;
    Ok(())
}
