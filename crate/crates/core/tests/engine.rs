use dtm::checkpoint::{iteration_dir, slice_file};
use dtm::corpus::{split_holdout, Corpus};
use dtm::engine::{train, MetricRow, TrainConfig, Trainer};
use dtm::eval::{perplexity, EvalConfig};
use dtm::model::Hyperparams;
use dtm::synthetic::{generate, SyntheticConfig};

fn corpus(seed: u64) -> Corpus {
    generate(&SyntheticConfig { docs_per_slice: 50, num_slices: 3, seed, ..SyntheticConfig::default() })
        .unwrap()
        .corpus
}

fn cfg(iterations: u64, threads: usize) -> TrainConfig {
    TrainConfig { iterations, minibatch_size: 20, threads_per_slice: threads, seed: 3, ..TrainConfig::default() }
}

#[test]
fn thread_count_does_not_change_the_result() {
    let c = corpus(1);
    let hyper = Hyperparams::new(5);
    let one = train(&c, &hyper, &cfg(8, 1)).unwrap().state;
    for threads in [2, 3, 4, 6] {
        assert_eq!(train(&c, &hyper, &cfg(8, threads)).unwrap().state, one, "threads = {threads}");
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let c = corpus(2);
    let hyper = Hyperparams::new(4);
    let dir = tempfile::tempdir().unwrap();
    let full = train(&c, &hyper, &cfg(10, 3)).unwrap().state;

    let mut first = Trainer::new(&c, &hyper, &cfg(4, 3)).unwrap().with_checkpoints(dir.path());
    first.run().unwrap();
    let mut resumed = Trainer::resume(&c, &hyper, &cfg(10, 3), &iteration_dir(dir.path(), 4)).unwrap();
    resumed.run().unwrap();
    assert_eq!(resumed.state(), &full);
    assert_eq!(resumed.metrics().len(), 6 * 3);
}

#[test]
fn resume_rejects_a_different_seed() {
    let c = corpus(2);
    let hyper = Hyperparams::new(4);
    let dir = tempfile::tempdir().unwrap();
    Trainer::new(&c, &hyper, &cfg(2, 1)).unwrap().with_checkpoints(dir.path()).run().unwrap();
    let other = TrainConfig { seed: 99, ..cfg(4, 1) };
    assert!(Trainer::resume(&c, &hyper, &other, &iteration_dir(dir.path(), 2)).is_err());
}

#[test]
fn resuming_a_finished_run_does_nothing() {
    let c = corpus(4);
    let hyper = Hyperparams::new(3);
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(&c, &hyper, &cfg(3, 1)).unwrap().with_checkpoints(dir.path());
    t.run().unwrap();
    let done = t.state().clone();
    let mut again = Trainer::resume(&c, &hyper, &cfg(3, 1), &iteration_dir(dir.path(), 3)).unwrap();
    again.run().unwrap();
    // Counts are rebuilt over all documents on load; the parameters are not touched.
    assert_eq!(again.state().slices, done.slices);
    assert_eq!(again.state().iteration, 3);
    assert!(again.metrics().is_empty());
}

#[test]
fn periodic_checkpoints_are_written() {
    let c = corpus(5);
    let dir = tempfile::tempdir().unwrap();
    let every = TrainConfig { checkpoint_every: 2, ..cfg(5, 1) };
    Trainer::new(&c, &Hyperparams::new(3), &every).unwrap().with_checkpoints(dir.path()).run().unwrap();
    for i in [2, 4, 5] {
        assert!(slice_file(&iteration_dir(dir.path(), i), 1).exists(), "iteration {i}");
    }
    assert!(!iteration_dir(dir.path(), 3).exists());
}

#[test]
fn one_metric_row_per_slice_and_iteration() {
    let c = corpus(6);
    let out = train(&c, &Hyperparams::new(3), &cfg(4, 2)).unwrap();
    assert_eq!(out.metrics.len(), 12);
    for (i, row) in out.metrics.iter().enumerate() {
        assert_eq!(row.iteration, (i / 3) as u64 + 1);
        assert_eq!(row.slice, i % 3 + 1);
        assert!(row.log_joint.is_finite());
        assert_eq!(row.to_csv().split(',').count(), MetricRow::CSV_HEADER.split(',').count());
    }
}

#[test]
fn single_topic_model_trains() {
    let c = corpus(7);
    let out = train(&c, &Hyperparams::new(1), &cfg(5, 3)).unwrap();
    for s in &out.state.slices {
        assert!(s.z.iter().flatten().all(|&z| z == 0));
        assert!(s.first_non_finite().is_none());
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let c = corpus(8);
    let hyper = Hyperparams::new(3);
    for bad in [cfg(0, 1), TrainConfig { minibatch_size: 0, ..cfg(1, 1) }, cfg(1, 0)] {
        assert!(Trainer::new(&c, &hyper, &bad).is_err());
    }
    assert!(Trainer::new(&c, &Hyperparams::new(0), &cfg(1, 1)).is_err());
}

/// Held-out perplexity after 200 iterations beats that after 10 in at least
/// 95 of 100 seeded runs.
#[test]
fn perplexity_improves_in_most_seeded_runs() {
    let mut improved = 0;
    for seed in 100..200 {
        let data = generate(&SyntheticConfig { seed, ..SyntheticConfig::default() }).unwrap();
        let split = split_holdout(&data.corpus, 0.1, 0.5, seed).unwrap();
        let train_cfg = TrainConfig { iterations: 200, seed, ..TrainConfig::default() };
        let eval_cfg = EvalConfig { seed, ..EvalConfig::default() };
        let mut t = Trainer::new(&split.train, &Hyperparams::new(5), &train_cfg).unwrap();
        t.run_until(10).unwrap();
        let early = perplexity(&split, t.state(), &eval_cfg).unwrap().overall;
        t.run_until(200).unwrap();
        let late = perplexity(&split, t.state(), &eval_cfg).unwrap().overall;
        improved += usize::from(late < early);
    }
    assert!(improved >= 95, "improved in {improved} of 100 runs");
}
