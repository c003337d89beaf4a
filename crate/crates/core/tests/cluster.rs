use std::sync::{Arc, Mutex};

use dtm::cluster::transport::{CorruptingTransport, Recorded, RecordingTransport};
use dtm::cluster::{
    one_per_slice, packed, run_distributed, BoundaryMessage, ChannelTransport, ClusterError, FrameType,
    SocketTransport, Transport,
};
use dtm::corpus::Corpus;
use dtm::engine::{train, TrainConfig};
use dtm::model::Hyperparams;
use dtm::synthetic::{generate, SyntheticConfig};

fn corpus(slices: usize) -> Corpus {
    generate(&SyntheticConfig { num_slices: slices, docs_per_slice: 40, vocab_size: 30, seed: 21, ..SyntheticConfig::default() })
        .unwrap()
        .corpus
}

fn cfg(iterations: u64) -> TrainConfig {
    TrainConfig { iterations, minibatch_size: 15, threads_per_slice: 2, seed: 5, ..TrainConfig::default() }
}

#[test]
fn boundary_traffic_per_iteration() {
    let c = corpus(3);
    let hyper = Hyperparams::new(4);
    let out = run_distributed(&c, &hyper, &cfg(5), &one_per_slice(3), ChannelTransport::chain(3), None).unwrap();
    let messages: u64 = out.stats.iter().map(|s| s.messages).sum();
    let values: u64 = out.stats.iter().map(|s| s.values).sum();
    // Each of the two links carries α and Φ both ways.
    assert_eq!(messages, 8 * 5);
    assert_eq!(values, 5 * 2 * 2 * (4 + 4 * 30));
    assert_eq!(out.stats.iter().map(|s| s.retransmits).sum::<u64>(), 0);
    assert_eq!(out.reports_per_worker, vec![5, 5, 5]);
}

#[test]
fn single_worker_sends_nothing() {
    let c = corpus(1);
    let hyper = Hyperparams::new(3);
    let out = run_distributed(&c, &hyper, &cfg(3), &one_per_slice(1), ChannelTransport::chain(1), None).unwrap();
    assert_eq!(out.stats[0].messages, 0);
    assert_eq!(out.state, train(&c, &hyper, &cfg(3)).unwrap().state);
}

#[test]
fn packed_workers_match_sequential() {
    let c = corpus(5);
    let hyper = Hyperparams::new(3);
    let expected = train(&c, &hyper, &cfg(4)).unwrap().state;
    for workers in [2, 3] {
        let layout = packed(5, workers);
        let out = run_distributed(&c, &hyper, &cfg(4), &layout, ChannelTransport::chain(workers), None).unwrap();
        assert_eq!(out.state, expected, "{workers} workers");
        assert_eq!(out.metrics.len(), 5 * 4);
    }
}

#[test]
fn one_corrupted_frame_is_retransmitted() {
    let c = corpus(2);
    let hyper = Hyperparams::new(3);
    let mut ends = ChannelTransport::chain(2).into_iter();
    let transports: Vec<Box<dyn Transport>> = vec![
        Box::new(CorruptingTransport::new(ends.next().unwrap(), 1)),
        Box::new(ends.next().unwrap()),
    ];
    let out = run_distributed(&c, &hyper, &cfg(3), &one_per_slice(2), transports, None).unwrap();
    assert_eq!(out.stats[0].retransmits, 1);
    assert_eq!(out.state, train(&c, &hyper, &cfg(3)).unwrap().state);
}

#[test]
fn repeated_corruption_is_a_peer_failure() {
    let c = corpus(2);
    let hyper = Hyperparams::new(3);
    let mut ends = ChannelTransport::chain(2).into_iter();
    let transports: Vec<Box<dyn Transport>> = vec![
        Box::new(CorruptingTransport::new(ends.next().unwrap(), 2)),
        Box::new(ends.next().unwrap()),
    ];
    let err = run_distributed(&c, &hyper, &cfg(3), &one_per_slice(2), transports, None).err().expect("second corruption must fail");
    assert!(err.is_peer_failure(), "{err}");
    assert!(matches!(err, ClusterError::Corrupt { slice: 1, .. }), "{err}");
}

fn recorded<T: Transport>(ends: Vec<T>, c: &Corpus) -> Vec<Recorded> {
    let log = Arc::new(Mutex::new(Vec::new()));
    let transports: Vec<_> = ends.into_iter().map(|t| RecordingTransport::new(t, log.clone())).collect();
    run_distributed(c, &Hyperparams::new(3), &cfg(3), &one_per_slice(3), transports, None).unwrap();
    let mut frames = Arc::try_unwrap(log).unwrap().into_inner().unwrap();
    frames.sort_by_key(|r| (r.from, r.to));
    frames
}

#[test]
fn channel_and_socket_send_identical_bytes() {
    let c = corpus(3);
    let channel = recorded(ChannelTransport::chain(3), &c);
    let socket = recorded(SocketTransport::loopback_chain(3).unwrap(), &c);
    assert_eq!(channel, socket);
    let boundaries: Vec<BoundaryMessage> = channel
        .iter()
        .filter(|r| r.bytes[5] == FrameType::Boundary as u8)
        .map(|r| BoundaryMessage::decode(&r.bytes).unwrap())
        .collect();
    assert_eq!(boundaries.len(), 8 * 3);
    // Every boundary frame is answered by exactly one Ack.
    assert_eq!(channel.len(), 2 * boundaries.len());
}

#[test]
fn checkpoints_land_on_disk() {
    let c = corpus(2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { checkpoint_every: 2, ..cfg(3) };
    let out = run_distributed(&c, &Hyperparams::new(3), &cfg, &one_per_slice(2), ChannelTransport::chain(2), Some(dir.path()))
        .unwrap();
    let loaded = dtm::checkpoint::load_model(&dtm::checkpoint::iteration_dir(dir.path(), 3), &c, &Hyperparams::new(3)).unwrap();
    assert_eq!(loaded.slices, out.state.slices);
    assert!(dtm::checkpoint::iteration_dir(dir.path(), 2).exists());
}

#[test]
fn mismatched_transport_count_is_rejected() {
    let c = corpus(3);
    let err = run_distributed(&c, &Hyperparams::new(3), &cfg(1), &one_per_slice(3), ChannelTransport::chain(2), None);
    assert!(err.is_err());
}
