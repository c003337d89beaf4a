//! Per-slice workers that swap boundary α/Φ with their chain neighbors at
//! the start of every iteration and otherwise compute independently.
//!
//! Exchange schedule (deadlock-free for any chain length): even workers send
//! then receive, odd workers receive then send. Within each phase the left
//! neighbor goes first, and α precedes Φ. Every boundary frame is answered
//! with Ack, or Nack on a checksum failure; a Nack triggers exactly one
//! retransmit.

pub mod remote;
pub mod topology;
pub mod transport;
pub mod wire;

use std::path::Path;
use std::sync::mpsc;
use std::thread;

use thiserror::Error;

use crate::checkpoint::{self, CheckpointError, SliceCheckpoint};
use crate::corpus::{Corpus, TimeSlice};
use crate::engine::{run_iteration, BoundaryNeighbors, EngineError, MetricRow, TrainConfig};
use crate::model::{init_slice, CountSet, Hyperparams, ModelState, SliceState};
use crate::samplers::NeighborContext;

pub use topology::{one_per_slice, packed, Assignment, Topology};
pub use transport::{ChannelTransport, SocketTransport, Transport, TransportError};
pub use wire::{BoundaryMessage, Frame, FrameType, PayloadKind, WireError};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("worker {worker} (slices {slices}): {source}")]
    Link {
        worker: usize,
        slices: String,
        #[source]
        source: TransportError,
    },
    #[error("worker {worker}: protocol error: {reason}")]
    Protocol { worker: usize, reason: String },
    #[error("worker {worker}: boundary from slice {slice} still corrupt after retransmit")]
    Corrupt { worker: usize, slice: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Topology(#[from] topology::TopologyError),
    #[error("topology checksum rejected: {0}")]
    TopologyMismatch(String),
    #[error("{0}")]
    Setup(String),
}

impl ClusterError {
    /// True when the failure came from a peer or the topology rather than
    /// from this worker's own computation.
    pub fn is_peer_failure(&self) -> bool {
        matches!(
            self,
            ClusterError::Link { .. }
                | ClusterError::Protocol { .. }
                | ClusterError::Corrupt { .. }
                | ClusterError::Topology(_)
                | ClusterError::TopologyMismatch(_)
        )
    }
}

/// Boundary traffic counters for one worker.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExchangeStats {
    /// Boundary messages sent, retransmits excluded.
    pub messages: u64,
    /// f64 values carried by those messages.
    pub values: u64,
    pub bytes: u64,
    pub retransmits: u64,
}

impl std::ops::AddAssign for ExchangeStats {
    fn add_assign(&mut self, o: Self) {
        self.messages += o.messages;
        self.values += o.values;
        self.bytes += o.bytes;
        self.retransmits += o.retransmits;
    }
}

/// α and Φ of one slice as received from a neighbor.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceBoundary {
    pub alpha: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Values received from the adjacent workers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PeerBoundaries {
    pub left: Option<SliceBoundary>,
    pub right: Option<SliceBoundary>,
}

struct Link<'a, T: Transport + ?Sized> {
    transport: &'a mut T,
    worker: usize,
    slices: String,
}

impl<T: Transport + ?Sized> Link<'_, T> {
    fn link_err(&self, source: TransportError) -> ClusterError {
        ClusterError::Link {
            worker: self.worker,
            slices: self.slices.clone(),
            source,
        }
    }

    fn protocol(&self, reason: impl Into<String>) -> ClusterError {
        ClusterError::Protocol {
            worker: self.worker,
            reason: reason.into(),
        }
    }

    fn send(&mut self, to: usize, bytes: &[u8]) -> Result<(), ClusterError> {
        self.transport.send(to, bytes).map_err(|e| self.link_err(e))
    }

    fn recv_frame(&mut self, from: usize) -> Result<Result<Frame, WireError>, ClusterError> {
        let bytes = self.transport.recv(from).map_err(|e| self.link_err(e))?;
        Ok(Frame::decode(&bytes))
    }

    fn send_boundary(&mut self, to: usize, msg: &BoundaryMessage, stats: &mut ExchangeStats) -> Result<(), ClusterError> {
        let bytes = msg.encode();
        stats.messages += 1;
        stats.values += msg.values.len() as u64;
        stats.bytes += bytes.len() as u64;
        for attempt in 0..2 {
            if attempt > 0 {
                stats.retransmits += 1;
            }
            self.send(to, &bytes)?;
            let reply = self.recv_frame(to)?.map_err(|e| self.protocol(format!("bad reply from worker {to}: {e}")))?;
            match reply.frame_type {
                FrameType::Ack if reply.iteration == msg.iteration && reply.kind == msg.kind => return Ok(()),
                FrameType::Nack => continue,
                other => {
                    return Err(self.protocol(format!(
                        "expected Ack for iteration {} from worker {to}, got {other:?} for iteration {}",
                        msg.iteration, reply.iteration
                    )))
                }
            }
        }
        Err(ClusterError::Corrupt {
            worker: self.worker,
            slice: msg.slice_from,
        })
    }

    fn recv_boundary(
        &mut self,
        from: usize,
        kind: PayloadKind,
        slice: usize,
        iteration: u64,
    ) -> Result<Vec<f64>, ClusterError> {
        for attempt in 0..2 {
            match self.recv_frame(from)? {
                Err(WireError::Checksum { .. }) => {
                    let nack = Frame::control(FrameType::Nack, kind, iteration, slice as u32).encode();
                    self.send(from, &nack)?;
                    if attempt == 1 {
                        return Err(ClusterError::Corrupt {
                            worker: self.worker,
                            slice,
                        });
                    }
                }
                Err(e) => return Err(self.protocol(format!("undecodable frame from worker {from}: {e}"))),
                Ok(frame) => {
                    let msg = BoundaryMessage::from_frame(frame).map_err(|e| self.protocol(e.to_string()))?;
                    if msg.iteration != iteration {
                        return Err(self.protocol(format!(
                            "worker {from} is at iteration {}, expected {iteration}",
                            msg.iteration
                        )));
                    }
                    if msg.kind != kind || msg.slice_from != slice {
                        return Err(self.protocol(format!(
                            "expected {kind:?} of slice {slice}, got {:?} of slice {}",
                            msg.kind, msg.slice_from
                        )));
                    }
                    let ack = Frame::control(FrameType::Ack, kind, iteration, slice as u32).encode();
                    self.send(from, &ack)?;
                    return Ok(msg.values);
                }
            }
        }
        unreachable!("loop returns on the second attempt")
    }
}

/// Sends this worker's edge slices to its neighbors and receives theirs.
///
/// `first`/`last` are the worker's lowest and highest slices (the same slice
/// when it owns one). With a single worker nothing is sent.
pub fn exchange_boundaries<T: Transport + ?Sized>(
    transport: &mut T,
    num_workers: usize,
    first: &SliceState,
    last: &SliceState,
    iteration: u64,
    stats: &mut ExchangeStats,
) -> Result<PeerBoundaries, ClusterError> {
    let w = transport.worker_id();
    let mut link = Link {
        worker: w,
        slices: if first.index == last.index {
            first.index.to_string()
        } else {
            format!("{}-{}", first.index, last.index)
        },
        transport,
    };
    let left = w.checked_sub(1);
    let right = (w + 1 < num_workers).then_some(w + 1);
    let (k, v) = (first.num_topics, first.vocab_size);
    let mut out = PeerBoundaries::default();

    let send_phase = |link: &mut Link<'_, T>, stats: &mut ExchangeStats| -> Result<(), ClusterError> {
        for (peer, s) in [(left, first), (right, last)] {
            if let Some(p) = peer {
                link.send_boundary(p, &BoundaryMessage::alpha(iteration, s.index, &s.alpha), stats)?;
                link.send_boundary(p, &BoundaryMessage::phi(iteration, s.index, k, v, &s.phi), stats)?;
            }
        }
        Ok(())
    };
    let recv_phase = |link: &mut Link<'_, T>, out: &mut PeerBoundaries| -> Result<(), ClusterError> {
        if let Some(p) = left {
            let t = first.index - 1;
            out.left = Some(SliceBoundary {
                alpha: link.recv_boundary(p, PayloadKind::Alpha, t, iteration)?,
                phi: link.recv_boundary(p, PayloadKind::Phi, t, iteration)?,
            });
        }
        if let Some(p) = right {
            let t = last.index + 1;
            out.right = Some(SliceBoundary {
                alpha: link.recv_boundary(p, PayloadKind::Alpha, t, iteration)?,
                phi: link.recv_boundary(p, PayloadKind::Phi, t, iteration)?,
            });
        }
        Ok(())
    };

    if w.is_multiple_of(2) {
        send_phase(&mut link, stats)?;
        recv_phase(&mut link, &mut out)?;
    } else {
        recv_phase(&mut link, &mut out)?;
        send_phase(&mut link, stats)?;
    }
    for (b, len) in [(&out.left, k * v), (&out.right, k * v)] {
        if let Some(b) = b {
            if b.alpha.len() != k || b.phi.len() != len {
                return Err(link.protocol("neighbor dimensions differ from ours"));
            }
        }
    }
    Ok(out)
}

/// Slices owned by one worker and the logic to advance them.
pub struct Worker<'a> {
    pub id: usize,
    pub num_workers: usize,
    num_slices: usize,
    data: &'a [TimeSlice],
    hyper: Hyperparams,
    cfg: TrainConfig,
    slices: Vec<SliceState>,
    counts: Vec<CountSet>,
    iteration: u64,
    stats: ExchangeStats,
}

impl<'a> Worker<'a> {
    pub fn new(
        corpus: &'a Corpus,
        hyper: &Hyperparams,
        cfg: &TrainConfig,
        assignment: &Assignment,
        id: usize,
    ) -> Result<Self, ClusterError> {
        topology::validate_assignment(assignment, corpus.num_slices())?;
        let range = assignment
            .get(id)
            .ok_or_else(|| ClusterError::Setup(format!("worker {id} not in a {}-worker layout", assignment.len())))?;
        hyper.validate().map_err(EngineError::from)?;
        cfg.validate()?;
        let data = &corpus.slices[range.start() - 1..*range.end()];
        let (slices, counts) = data
            .iter()
            .map(|s| init_slice(s.index, &s.docs, hyper, corpus.vocab_size(), cfg.seed))
            .unzip();
        Ok(Self {
            id,
            num_workers: assignment.len(),
            num_slices: corpus.num_slices(),
            data,
            hyper: *hyper,
            cfg: cfg.clone(),
            slices,
            counts,
            iteration: 0,
            stats: ExchangeStats::default(),
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn slices(&self) -> &[SliceState] {
        &self.slices
    }

    pub fn stats(&self) -> ExchangeStats {
        self.stats
    }

    /// Exchange, then one iteration of every owned slice.
    pub fn step<T: Transport + ?Sized>(&mut self, transport: &mut T) -> Result<Vec<MetricRow>, ClusterError> {
        let i = self.iteration;
        let n = self.slices.len();
        let peers = exchange_boundaries(
            transport,
            self.num_workers,
            &self.slices[0],
            &self.slices[n - 1],
            i,
            &mut self.stats,
        )?;
        let neighbors: Vec<BoundaryNeighbors> = (0..n)
            .map(|j| {
                let left = if j == 0 {
                    peers.left.clone()
                } else {
                    let s = &self.slices[j - 1];
                    Some(SliceBoundary { alpha: s.alpha.clone(), phi: s.phi.clone() })
                };
                let right = if j + 1 == n {
                    peers.right.clone()
                } else {
                    let s = &self.slices[j + 1];
                    Some(SliceBoundary { alpha: s.alpha.clone(), phi: s.phi.clone() })
                };
                BoundaryNeighbors {
                    alpha: NeighborContext::new(left.as_ref().map(|b| b.alpha.clone()), right.as_ref().map(|b| b.alpha.clone())),
                    phi: NeighborContext::new(left.map(|b| b.phi), right.map(|b| b.phi)),
                }
            })
            .collect();
        let mut rows = Vec::with_capacity(n);
        for (j, nb) in neighbors.iter().enumerate() {
            let out = run_iteration(&mut self.slices[j], &self.data[j].docs, nb, &self.hyper, &self.cfg, i)?;
            self.counts[j] = out.counts;
            rows.push(out.metrics);
        }
        self.iteration += 1;
        Ok(rows)
    }

    pub fn checkpoints(&self) -> Vec<SliceCheckpoint> {
        self.slices
            .iter()
            .map(|s| SliceCheckpoint {
                master_seed: self.cfg.seed,
                iteration: self.iteration,
                num_slices: self.num_slices,
                slice: s.clone(),
            })
            .collect()
    }

    pub fn into_parts(self) -> (Vec<SliceState>, Vec<CountSet>, ExchangeStats) {
        (self.slices, self.counts, self.stats)
    }
}

/// What a worker reports to the coordinator.
#[derive(Clone, Debug)]
pub enum WorkerReport {
    Metrics { worker: usize, row: MetricRow },
    Checkpoint { worker: usize, ckpt: Box<SliceCheckpoint> },
}

pub struct DistributedOutput {
    pub state: ModelState,
    /// Ordered by (iteration, slice).
    pub metrics: Vec<MetricRow>,
    /// Per worker.
    pub stats: Vec<ExchangeStats>,
    /// Metric rows received from each worker.
    pub reports_per_worker: Vec<usize>,
}

/// Runs one thread per worker over the given transports (one per worker, in
/// worker order) and gathers metrics and checkpoints on the calling thread.
pub fn run_distributed<T: Transport>(
    corpus: &Corpus,
    hyper: &Hyperparams,
    cfg: &TrainConfig,
    assignment: &Assignment,
    transports: Vec<T>,
    checkpoint_root: Option<&Path>,
) -> Result<DistributedOutput, ClusterError> {
    topology::validate_assignment(assignment, corpus.num_slices())?;
    if transports.len() != assignment.len() {
        return Err(ClusterError::Setup(format!(
            "{} transports for {} workers",
            transports.len(),
            assignment.len()
        )));
    }
    if let Some(bad) = transports.iter().enumerate().find(|(w, t)| t.worker_id() != *w) {
        return Err(ClusterError::Setup(format!("transport {} claims worker id {}", bad.0, bad.1.worker_id())));
    }
    let workers: Vec<Worker> = (0..assignment.len())
        .map(|w| Worker::new(corpus, hyper, cfg, assignment, w))
        .collect::<Result<_, _>>()?;

    let (tx, rx) = mpsc::channel::<WorkerReport>();
    let mut metrics = Vec::new();
    let mut reports_per_worker = vec![0; assignment.len()];
    let mut write_error = None;
    let results: Vec<Result<Worker, ClusterError>> = thread::scope(|scope| {
        let handles: Vec<_> = workers
            .into_iter()
            .zip(transports)
            .map(|(mut worker, mut transport)| {
                let tx = tx.clone();
                let cfg = cfg.clone();
                let want_ckpt = checkpoint_root.is_some();
                scope.spawn(move || -> Result<Worker, ClusterError> {
                    while worker.iteration() < cfg.iterations {
                        for row in worker.step(&mut transport)? {
                            let _ = tx.send(WorkerReport::Metrics { worker: worker.id, row });
                        }
                        let every = cfg.checkpoint_every;
                        let due = (every > 0 && worker.iteration() % every == 0) || worker.iteration() == cfg.iterations;
                        if want_ckpt && due {
                            for ckpt in worker.checkpoints() {
                                let _ = tx.send(WorkerReport::Checkpoint { worker: worker.id, ckpt: Box::new(ckpt) });
                            }
                        }
                    }
                    Ok(worker)
                })
            })
            .collect();
        drop(tx);
        for report in rx {
            match report {
                WorkerReport::Metrics { worker, row } => {
                    reports_per_worker[worker] += 1;
                    metrics.push(row);
                }
                WorkerReport::Checkpoint { ckpt, .. } => {
                    if let Some(root) = checkpoint_root {
                        let dir = checkpoint::iteration_dir(root, ckpt.iteration);
                        if let Err(e) = checkpoint::write_slice(&dir, &ckpt) {
                            write_error.get_or_insert(e);
                        }
                    }
                }
            }
        }
        handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
    });
    if let Some(e) = write_error {
        return Err(e.into());
    }

    // A failing worker drops its links, so its peers fail with Disconnected;
    // report the root cause.
    let mut first_err = None;
    let mut finished = Vec::new();
    for r in results {
        match r {
            Ok(w) => finished.push(w),
            Err(e) => {
                let secondary = matches!(&e, ClusterError::Link { source: TransportError::Disconnected { .. }, .. });
                match &first_err {
                    None => first_err = Some(e),
                    Some(prev) if !secondary && matches!(prev, ClusterError::Link { source: TransportError::Disconnected { .. }, .. }) => {
                        first_err = Some(e)
                    }
                    _ => {}
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }

    let mut slices = Vec::with_capacity(corpus.num_slices());
    let mut counts = Vec::with_capacity(corpus.num_slices());
    let mut stats = Vec::with_capacity(finished.len());
    for w in finished {
        let (s, c, st) = w.into_parts();
        slices.extend(s);
        counts.extend(c);
        stats.push(st);
    }
    metrics.sort_by_key(|r| (r.iteration, r.slice));
    Ok(DistributedOutput {
        state: ModelState {
            hyper: *hyper,
            vocab_size: corpus.vocab_size(),
            seed: cfg.seed,
            iteration: cfg.iterations,
            slices,
            counts,
        },
        metrics,
        stats,
        reports_per_worker,
    })
}
