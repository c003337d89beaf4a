//! Static worker layout.
//!
//! ```text
//! # comments and blank lines are ignored
//! coordinator 127.0.0.1:7000
//! 0 127.0.0.1:7001 1
//! 1 127.0.0.1:7002 2-3
//! ```
//!
//! Each worker line is `id host:port [slices]`. Ids run 0..n in order;
//! slices are 1-based, contiguous and ascending, defaulting to `id + 1`.
//! `DTM_COORDINATOR` overrides the coordinator address.

use std::fmt::Write as _;
use std::fs;
use std::net::{SocketAddr, ToSocketAddrs};
use std::ops::RangeInclusive;
use std::path::Path;

use thiserror::Error;

pub const COORDINATOR_ENV: &str = "DTM_COORDINATOR";

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("topology line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("cannot resolve {addr}: {reason}")]
    Resolve { addr: String, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkerEntry {
    pub id: usize,
    pub addr: String,
    pub slices: RangeInclusive<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    pub coordinator: Option<String>,
    pub workers: Vec<WorkerEntry>,
}

/// Contiguous slice ranges, one per worker.
pub type Assignment = Vec<RangeInclusive<usize>>;

/// One worker per slice.
pub fn one_per_slice(num_slices: usize) -> Assignment {
    (1..=num_slices).map(|t| t..=t).collect()
}

/// `workers` contiguous blocks of nearly equal size.
pub fn packed(num_slices: usize, workers: usize) -> Assignment {
    let workers = workers.clamp(1, num_slices.max(1));
    (0..workers)
        .map(|w| (w * num_slices / workers + 1)..=((w + 1) * num_slices / workers))
        .collect()
}

pub fn validate_assignment(assignment: &Assignment, num_slices: usize) -> Result<(), TopologyError> {
    let mut next = 1;
    for (w, r) in assignment.iter().enumerate() {
        if *r.start() != next || r.end() < r.start() {
            return Err(TopologyError::Invalid(format!(
                "worker {w} holds slices {}-{}, expected a block starting at {next}",
                r.start(),
                r.end()
            )));
        }
        next = r.end() + 1;
    }
    if next != num_slices + 1 {
        return Err(TopologyError::Invalid(format!(
            "workers cover slices 1-{} but the corpus has {num_slices}",
            next - 1
        )));
    }
    Ok(())
}

impl Topology {
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut coordinator = None;
        let mut workers = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let bad = |reason: String| TopologyError::Malformed { line, reason };
            if fields[0] == "coordinator" {
                if fields.len() != 2 {
                    return Err(bad("expected `coordinator host:port`".into()));
                }
                coordinator = Some(fields[1].to_owned());
                continue;
            }
            if !(2..=3).contains(&fields.len()) {
                return Err(bad("expected `worker_id host:port [slices]`".into()));
            }
            let id: usize = fields[0]
                .parse()
                .map_err(|_| bad(format!("worker id `{}` is not a non-negative integer", fields[0])))?;
            if id != workers.len() {
                return Err(bad(format!("worker ids must run 0, 1, 2, ...; found {id}")));
            }
            let slices = match fields.get(2) {
                None => id + 1..=id + 1,
                Some(spec) => parse_range(spec).ok_or_else(|| bad(format!("bad slice range `{spec}`")))?,
            };
            workers.push(WorkerEntry {
                id,
                addr: fields[1].to_owned(),
                slices,
            });
        }
        if workers.is_empty() {
            return Err(TopologyError::Invalid("no workers listed".into()));
        }
        Ok(Self { coordinator, workers })
    }

    pub fn load(path: &Path) -> Result<Self, TopologyError> {
        let text = fs::read_to_string(path).map_err(|source| TopologyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn assignment(&self) -> Assignment {
        self.workers.iter().map(|w| w.slices.clone()).collect()
    }

    /// Canonical worker layout, the input to [`Topology::checksum`].
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for w in &self.workers {
            let _ = writeln!(out, "{} {} {}-{}", w.id, w.addr, w.slices.start(), w.slices.end());
        }
        out
    }

    /// CRC-32 of the canonical worker layout; the coordinator address is
    /// excluded because it may be overridden per process.
    pub fn checksum(&self) -> u64 {
        crc32fast::hash(self.canonical().as_bytes()) as u64
    }

    /// Coordinator address, with `DTM_COORDINATOR` taking precedence.
    pub fn coordinator_addr(&self) -> Result<SocketAddr, TopologyError> {
        let addr = std::env::var(COORDINATOR_ENV)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .or_else(|| self.coordinator.clone())
            .ok_or_else(|| {
                TopologyError::Invalid(format!("no coordinator line and {COORDINATOR_ENV} is unset"))
            })?;
        resolve(addr.trim())
    }

    pub fn worker_addrs(&self) -> Result<Vec<SocketAddr>, TopologyError> {
        self.workers.iter().map(|w| resolve(&w.addr)).collect()
    }
}

fn parse_range(spec: &str) -> Option<RangeInclusive<usize>> {
    let (a, b) = match spec.split_once('-') {
        Some((a, b)) => (a.parse().ok()?, b.parse().ok()?),
        None => {
            let t = spec.parse().ok()?;
            (t, t)
        }
    };
    (a >= 1 && b >= a).then_some(a..=b)
}

pub fn resolve(addr: &str) -> Result<SocketAddr, TopologyError> {
    addr.to_socket_addrs()
        .map_err(|e| TopologyError::Resolve {
            addr: addr.to_owned(),
            reason: e.to_string(),
        })?
        .next()
        .ok_or_else(|| TopologyError::Resolve {
            addr: addr.to_owned(),
            reason: "no addresses".into(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_defaults_and_ranges() {
        let t = Topology::parse("# layout\ncoordinator 127.0.0.1:9\n0 127.0.0.1:10\n1 127.0.0.1:11 2-4 # packed\n").unwrap();
        assert_eq!(t.coordinator.as_deref(), Some("127.0.0.1:9"));
        assert_eq!(t.assignment(), vec![1..=1, 2..=4]);
        validate_assignment(&t.assignment(), 4).unwrap();
        assert!(validate_assignment(&t.assignment(), 5).is_err());
    }

    #[test]
    fn rejects_gaps_and_bad_lines() {
        assert!(matches!(Topology::parse("1 a:1"), Err(TopologyError::Malformed { line: 1, .. })));
        assert!(matches!(Topology::parse("0 a:1 0"), Err(TopologyError::Malformed { .. })));
        assert!(matches!(Topology::parse("# nothing"), Err(TopologyError::Invalid(_))));
        assert!(validate_assignment(&vec![1..=1, 3..=3], 3).is_err());
    }

    #[test]
    fn checksum_tracks_layout_only() {
        let a = Topology::parse("coordinator x:1\n0 h:1\n1 h:2").unwrap();
        let b = Topology::parse("coordinator y:2\n0 h:1\n1 h:2").unwrap();
        let c = Topology::parse("0 h:1\n1 h:3").unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn packing() {
        assert_eq!(packed(5, 2), vec![1..=2, 3..=5]);
        assert_eq!(packed(3, 8), one_per_slice(3));
        validate_assignment(&packed(29, 4), 29).unwrap();
    }
}
