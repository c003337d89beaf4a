//! Worker and coordinator processes talking over TCP.
//!
//! A worker dials the coordinator and sends Hello (its id and the topology
//! checksum). After an Ack it joins the worker chain, streams one Metrics
//! frame per slice per iteration, ships Checkpoint frames (each answered by
//! an Ack), and ends with Done.

use std::fs;
use std::io;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use super::topology::Topology;
use super::transport::{dial, read_prefixed, write_prefixed, DialPolicy, SocketTransport, TransportError};
use super::wire::{Frame, FrameType, PayloadKind};
use super::{ClusterError, ExchangeStats, Worker};
use crate::checkpoint::{self, encode_slice};
use crate::corpus::Corpus;
use crate::engine::{MetricRow, TrainConfig};
use crate::model::Hyperparams;

pub const COORDINATOR_ID: usize = usize::MAX;

fn coord_err(source: io::Error) -> ClusterError {
    ClusterError::Link {
        worker: COORDINATOR_ID,
        slices: "coordinator link".into(),
        source: TransportError::Io { peer: COORDINATOR_ID, source },
    }
}

fn send_frame(s: &mut TcpStream, f: &Frame) -> Result<(), ClusterError> {
    write_prefixed(s, &f.encode()).map_err(coord_err)
}

fn recv_frame(s: &mut TcpStream) -> Result<Frame, ClusterError> {
    let bytes = read_prefixed(s).map_err(coord_err)?;
    Frame::decode(&bytes).map_err(|e| ClusterError::Protocol {
        worker: COORDINATOR_ID,
        reason: e.to_string(),
    })
}

fn expect_ack(s: &mut TcpStream, what: &str) -> Result<(), ClusterError> {
    let f = recv_frame(s)?;
    if f.frame_type == FrameType::Ack {
        Ok(())
    } else {
        Err(ClusterError::Protocol {
            worker: COORDINATOR_ID,
            reason: format!("coordinator answered {what} with {:?}", f.frame_type),
        })
    }
}

pub struct RemoteWorkerSummary {
    pub iterations: u64,
    pub stats: ExchangeStats,
}

/// Runs worker `worker_id` of `topology` to completion.
pub fn run_remote_worker(
    corpus: &Corpus,
    hyper: &Hyperparams,
    cfg: &TrainConfig,
    topology: &Topology,
    worker_id: usize,
    policy: DialPolicy,
) -> Result<RemoteWorkerSummary, ClusterError> {
    let assignment = topology.assignment();
    let mut worker = Worker::new(corpus, hyper, cfg, &assignment, worker_id)?;
    let addrs = topology.worker_addrs()?;
    let checksum = topology.checksum();
    let listener = TcpListener::bind(addrs[worker_id]).map_err(|source| ClusterError::Link {
        worker: worker_id,
        slices: format!("{:?}", assignment[worker_id]),
        source: TransportError::Io { peer: worker_id, source },
    })?;

    let mut coord = dial(COORDINATOR_ID, topology.coordinator_addr()?, policy).map_err(|source| ClusterError::Link {
        worker: worker_id,
        slices: "coordinator link".into(),
        source,
    })?;
    send_frame(&mut coord, &Frame::control(FrameType::Hello, PayloadKind::None, checksum, worker_id as u32))?;
    let reply = recv_frame(&mut coord)?;
    if reply.frame_type != FrameType::Ack {
        return Err(ClusterError::TopologyMismatch(format!(
            "coordinator rejected worker {worker_id} with topology checksum {checksum:#010x}"
        )));
    }

    let mut transport = SocketTransport::connect_chain(worker_id, &listener, &addrs, checksum, policy).map_err(|source| {
        match source {
            TransportError::Handshake { reason, .. } => ClusterError::TopologyMismatch(reason),
            source => ClusterError::Link {
                worker: worker_id,
                slices: format!("{:?}", assignment[worker_id]),
                source,
            },
        }
    })?;

    let send_checkpoints = |coord: &mut TcpStream, worker: &Worker| -> Result<(), ClusterError> {
        for ck in worker.checkpoints() {
            let frame = Frame {
                frame_type: FrameType::Checkpoint,
                kind: PayloadKind::None,
                iteration: ck.iteration,
                slice_from: ck.slice.index as u32,
                dim0: ck.slice.num_topics as u32,
                dim1: ck.slice.vocab_size as u32,
                payload: encode_slice(&ck.slice, ck.num_slices, ck.master_seed, ck.iteration),
            };
            send_frame(coord, &frame)?;
            expect_ack(coord, "a checkpoint")?;
        }
        Ok(())
    };

    while worker.iteration() < cfg.iterations {
        for row in worker.step(&mut transport)? {
            let frame = Frame {
                payload: row.to_csv().into_bytes(),
                ..Frame::control(FrameType::Metrics, PayloadKind::None, row.iteration, row.slice as u32)
            };
            send_frame(&mut coord, &frame)?;
        }
        let every = cfg.checkpoint_every;
        if every > 0 && worker.iteration() % every == 0 && worker.iteration() < cfg.iterations {
            send_checkpoints(&mut coord, &worker)?;
        }
    }
    send_checkpoints(&mut coord, &worker)?;
    send_frame(&mut coord, &Frame::control(FrameType::Done, PayloadKind::None, worker.iteration(), worker_id as u32))?;
    expect_ack(&mut coord, "Done")?;
    Ok(RemoteWorkerSummary {
        iterations: worker.iteration(),
        stats: worker.stats(),
    })
}

pub struct CoordinatorSummary {
    pub metrics_path: PathBuf,
    pub checkpoint_root: PathBuf,
    pub rows: usize,
    pub final_iteration: u64,
}

struct Collected {
    rows: Vec<(u64, u32, String)>,
    final_iteration: u64,
}

/// Accepts every worker in `topology`, writes their checkpoints under
/// `out/checkpoints/` and their metrics, ordered by (iteration, slice), to
/// `out/metrics.csv`.
pub fn run_coordinator(topology: &Topology, out: &Path, accept_timeout: Duration) -> Result<CoordinatorSummary, ClusterError> {
    let addr = topology.coordinator_addr()?;
    let listener = TcpListener::bind(addr).map_err(coord_err)?;
    let n = topology.workers.len();
    let checksum = topology.checksum();
    let ckpt_root = out.join("checkpoints");

    listener.set_nonblocking(true).map_err(coord_err)?;
    let deadline = Instant::now() + accept_timeout;
    let mut conns: Vec<Option<TcpStream>> = (0..n).map(|_| None).collect();
    let mut joined = 0;
    while joined < n {
        match listener.accept() {
            Ok((mut s, _)) => {
                s.set_nonblocking(false).map_err(coord_err)?;
                s.set_nodelay(true).map_err(coord_err)?;
                let hello = recv_frame(&mut s)?;
                let id = hello.slice_from as usize;
                let ok = hello.frame_type == FrameType::Hello
                    && hello.iteration == checksum
                    && id < n
                    && conns[id].is_none();
                let reply = if ok { FrameType::Ack } else { FrameType::Nack };
                send_frame(&mut s, &Frame::control(reply, PayloadKind::None, checksum, 0))?;
                if !ok {
                    return Err(ClusterError::TopologyMismatch(format!(
                        "worker {id} joined with topology checksum {:#010x}, coordinator has {checksum:#010x}",
                        hello.iteration
                    )));
                }
                conns[id] = Some(s);
                joined += 1;
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(ClusterError::Setup(format!(
                        "only {joined} of {n} workers joined within {accept_timeout:?}"
                    )));
                }
                thread::sleep(Duration::from_millis(20));
            }
            Err(e) => return Err(coord_err(e)),
        }
    }

    let results: Vec<Result<Collected, ClusterError>> = thread::scope(|scope| {
        let handles: Vec<_> = conns
            .into_iter()
            .map(|c| {
                let mut s = c.expect("all joined");
                let root = &ckpt_root;
                scope.spawn(move || serve_worker(&mut s, root))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("coordinator thread")).collect()
    });
    let mut rows = Vec::new();
    let mut final_iteration = 0;
    for r in results {
        let c = r?;
        rows.extend(c.rows);
        final_iteration = final_iteration.max(c.final_iteration);
    }
    rows.sort_by_key(|(i, t, _)| (*i, *t));

    fs::create_dir_all(out).map_err(|source| ClusterError::Setup(format!("{}: {source}", out.display())))?;
    let metrics_path = out.join("metrics.csv");
    let mut csv = format!("{}\n", MetricRow::CSV_HEADER);
    for (_, _, line) in &rows {
        csv.push_str(line);
        csv.push('\n');
    }
    fs::write(&metrics_path, csv).map_err(|source| ClusterError::Setup(format!("{}: {source}", metrics_path.display())))?;
    Ok(CoordinatorSummary {
        metrics_path,
        checkpoint_root: ckpt_root,
        rows: rows.len(),
        final_iteration,
    })
}

fn serve_worker(s: &mut TcpStream, ckpt_root: &Path) -> Result<Collected, ClusterError> {
    let mut rows = Vec::new();
    loop {
        let f = recv_frame(s)?;
        match f.frame_type {
            FrameType::Metrics => {
                let line = String::from_utf8(f.payload).map_err(|_| ClusterError::Protocol {
                    worker: COORDINATOR_ID,
                    reason: "metrics row is not UTF-8".into(),
                })?;
                rows.push((f.iteration, f.slice_from, line));
            }
            FrameType::Checkpoint => {
                let ck = checkpoint::decode_slice(&f.payload)?;
                checkpoint::write_slice(&checkpoint::iteration_dir(ckpt_root, ck.iteration), &ck)?;
                send_frame(s, &Frame::control(FrameType::Ack, PayloadKind::None, f.iteration, f.slice_from))?;
            }
            FrameType::Done => {
                send_frame(s, &Frame::control(FrameType::Ack, PayloadKind::None, f.iteration, f.slice_from))?;
                return Ok(Collected {
                    rows,
                    final_iteration: f.iteration,
                });
            }
            other => {
                return Err(ClusterError::Protocol {
                    worker: COORDINATOR_ID,
                    reason: format!("unexpected {other:?} frame from a worker"),
                })
            }
        }
    }
}
