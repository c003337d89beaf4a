use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use dtm::app::{self, AppError, EXIT_CONFIG, MANIFEST_FILE};
use dtm::cluster::transport::DialPolicy;
use dtm::config::{RawConfig, Settings};

/// Dynamic topic model trainer.
///
/// Exit codes: 1 config error, 2 data error, 3 numeric abort, 4 peer or
/// topology failure.
#[derive(Parser)]
#[command(name = "dtm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a corpus, writing manifest, metrics.csv and checkpoints to --out.
    Train(Flags),
    /// Held-out perplexity of a trained run (reads <out>/manifest.cfg).
    Eval(Flags),
    /// Export per-slice top words of topics to <out>/trends.csv.
    Trends(Flags),
    /// Run one per-slice worker from a topology file.
    Worker(Flags),
    /// Collect metrics and checkpoints from all workers.
    Coordinator(Flags),
    /// Write a corpus drawn from the generative model, with its true parameters.
    GenSynthetic(Flags),
}

/// Every flag has a config-file key of the same name.
#[derive(Args)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// slice-per-line or bag-of-words-dir
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    max_terms: Option<usize>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    topics: Option<usize>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    minibatch: Option<usize>,
    /// a,b,c for eps_i = a (b + i)^-c
    #[arg(long)]
    eta_schedule: Option<String>,
    #[arg(long)]
    phi_schedule: Option<String>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    psi2: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    heldout_fraction: Option<f64>,
    #[arg(long)]
    eval_steps: Option<u64>,
    #[arg(long)]
    top_words: Option<usize>,
    /// Comma-separated topic ids; all topics when empty.
    #[arg(long)]
    trend_topics: Option<String>,
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long)]
    worker_id: Option<usize>,
    #[arg(long)]
    slices: Option<usize>,
    #[arg(long)]
    docs_per_slice: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    doc_length: Option<f64>,
    #[arg(long)]
    phi_scale: Option<f64>,
    #[arg(long)]
    alpha_scale: Option<f64>,
    /// Dial attempts for peers and coordinator (100 ms apart).
    #[arg(long, default_value_t = 100)]
    connect_retries: u32,
    /// Seconds the coordinator waits for all workers to join.
    #[arg(long, default_value_t = 120)]
    join_timeout: u64,
}

impl Flags {
    fn overlay(&self, raw: &mut RawConfig) {
        macro_rules! put {
            ($($field:ident => $key:literal),* $(,)?) => {$(
                if let Some(v) = &self.$field {
                    raw.set($key, v.to_string());
                }
            )*};
        }
        macro_rules! put_path {
            ($($field:ident => $key:literal),* $(,)?) => {$(
                if let Some(v) = &self.$field {
                    raw.set($key, v.display());
                }
            )*};
        }
        put_path!(corpus => "corpus", vocab => "vocab", stopwords => "stopwords", out => "out",
            checkpoint => "checkpoint", topology => "topology");
        put!(format => "format", max_terms => "max-terms", seed => "seed", topics => "topics",
            iterations => "iterations", minibatch => "minibatch", eta_schedule => "eta-schedule",
            phi_schedule => "phi-schedule", sigma2 => "sigma2", beta2 => "beta2", psi2 => "psi2",
            threads => "threads", checkpoint_every => "checkpoint-every",
            test_fraction => "test-fraction", heldout_fraction => "heldout-fraction",
            eval_steps => "eval-steps", top_words => "top-words", trend_topics => "trend-topics",
            worker_id => "worker-id", slices => "slices", docs_per_slice => "docs-per-slice",
            vocab_size => "vocab-size", doc_length => "doc-length", phi_scale => "phi-scale",
            alpha_scale => "alpha-scale");
    }

    /// File settings (or the run manifest for commands that read a run),
    /// overridden by flags.
    fn resolve(&self, read_run_manifest: bool) -> Result<(Settings, Option<PathBuf>), AppError> {
        let base = match (&self.config, &self.out) {
            (Some(p), _) => Some(p.clone()),
            (None, Some(out)) if read_run_manifest && out.join(MANIFEST_FILE).exists() => Some(out.join(MANIFEST_FILE)),
            _ => None,
        };
        let mut raw = match &base {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        if read_run_manifest {
            // The newest checkpoint of the run is used unless --checkpoint says otherwise.
            raw.0.remove("checkpoint");
        }
        self.overlay(&mut raw);
        Ok((Settings::from_raw(&raw)?, base))
    }

    fn policy(&self) -> DialPolicy {
        DialPolicy {
            attempts: self.connect_retries.max(1),
            delay: Duration::from_millis(100),
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Train(f) => {
            let (s, base) = f.resolve(false)?;
            app::cmd_train(&s, &app::manifest_info("train", base.as_deref()))
        }
        Command::Eval(f) => {
            let (s, base) = f.resolve(true)?;
            app::cmd_eval(&s, &app::manifest_info("eval", base.as_deref()))
        }
        Command::Trends(f) => {
            let (s, base) = f.resolve(true)?;
            app::cmd_trends(&s, &app::manifest_info("trends", base.as_deref()))
        }
        Command::Worker(f) => {
            let (s, _) = f.resolve(false)?;
            app::cmd_worker(&s, f.policy())
        }
        Command::Coordinator(f) => {
            let (s, base) = f.resolve(false)?;
            app::cmd_coordinator(
                &s,
                &app::manifest_info("coordinator", base.as_deref()),
                Duration::from_secs(f.join_timeout),
            )
        }
        Command::GenSynthetic(f) => {
            let (s, base) = f.resolve(false)?;
            app::cmd_gen_synthetic(&s, &app::manifest_info("gen-synthetic", base.as_deref()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stdout)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
