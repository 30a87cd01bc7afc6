//! Command-line front end. Exit codes: 0 success, 1 usage or config error,
//! 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{
    alpha_beta_csv, generate_dataset, read_spec, replay_episode, run_sweep, train_checkpoints, write_csv,
    write_json, ExperimentSpec, SweepOptions,
};
use crate::world::EpisodeLog;

#[derive(Debug, Parser)]
#[command(name = "swarm-intent", version, about = "Multi-robot human intent prediction experiments")]
pub struct Cli {
    /// Experiment spec (JSON). Defaults to the desk-scale scenario-3 spec.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replaces the spec's seed list with this single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the episode set of every seed and write the logs.
    GenData,
    /// Train all models and save checkpoints under `<out>/checkpoints`.
    Train,
    /// Evaluate saved checkpoints on the test split.
    Eval {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Train (unless checkpoints are given) and evaluate every coordinate.
    Sweep {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Re-run one logged episode with saved checkpoints.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        /// Episode index; parsed from an `ep<N>` file name when omitted.
        #[arg(long)]
        episode: Option<usize>,
        /// Write every delivered message to `<out>/replay/messages.jsonl`.
        #[arg(long)]
        dump_messages: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::Replay { .. } => "replay",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: ExperimentSpec,
    /// SHA-256 of the resolved config's JSON.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub out_dir: PathBuf,
    pub started: String,
    pub finished: String,
}

pub fn config_hash(spec: &ExperimentSpec) -> Result<String> {
    let json = serde_json::to_vec(spec)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

fn resolve_spec(cli: &Cli) -> Result<ExperimentSpec> {
    let mut spec = match &cli.config {
        Some(p) => read_spec(p)?,
        None => ExperimentSpec::desk_scale(3),
    };
    if let Some(s) = cli.seed {
        spec.seeds = vec![s];
    }
    spec.validate()?;
    Ok(spec)
}

fn episode_from_name(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.strip_prefix("ep")?.parse().ok()
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.push(b'\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn execute(cli: &Cli, spec: &ExperimentSpec) -> Result<()> {
    let out = &cli.out;
    match &cli.command {
        Command::GenData => {
            for &seed in &spec.seeds {
                let ds = generate_dataset(spec, seed, spec.dataset.episodes, false)?;
                let dir = out.join("data").join(format!("seed{seed}"));
                for ep in ds.episodes.values() {
                    let mut buf = Vec::new();
                    ep.log.write_jsonl(&mut buf)?;
                    let p = dir.join(format!("ep{:04}.jsonl", ep.index));
                    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    fs::write(&p, buf).map_err(|e| Error::io(&p, e))?;
                }
                let p = dir.join("split.json");
                fs::write(&p, serde_json::to_string_pretty(&ds.split)?).map_err(|e| Error::io(&p, e))?;
                log::info!("seed {seed}: {} episodes in {}", ds.episodes.len(), dir.display());
            }
        }
        Command::Train => train_checkpoints(spec, &out.join("checkpoints"))?,
        Command::Eval { checkpoints } | Command::Sweep { checkpoints } => {
            let is_eval = matches!(cli.command, Command::Eval { .. });
            let ck = match (checkpoints, is_eval) {
                (Some(p), _) => Some(p.clone()),
                (None, true) => Some(out.join("checkpoints")),
                (None, false) => None,
            };
            let opts = SweepOptions {
                save_checkpoints: ck.is_none().then(|| out.join("checkpoints")),
                checkpoints: ck,
                artifacts: Some(out.clone()),
            };
            let res = run_sweep(spec, &opts)?;
            write_csv(&res.rows, &out.join("metrics.csv"))?;
            write_json(&res.rows, &out.join("metrics.json"))?;
            if !res.alpha_beta.is_empty() {
                let p = out.join("alpha_beta.csv");
                fs::write(&p, alpha_beta_csv(&res.alpha_beta)).map_err(|e| Error::io(&p, e))?;
            }
        }
        Command::Replay {
            log: log_path,
            checkpoints,
            episode,
            dump_messages,
        } => {
            let f = fs::File::open(log_path).map_err(|e| Error::io(log_path, e))?;
            let log = EpisodeLog::read_jsonl(std::io::BufReader::new(f))?;
            let seed = spec.seeds[0];
            let idx = episode.or_else(|| episode_from_name(log_path)).unwrap_or(0);
            let (records, deliveries) = replay_episode(spec, seed, log, idx, checkpoints, *dump_messages)?;
            let dir = out.join("replay");
            write_jsonl(&records, &dir.join("predictions.jsonl"))?;
            if *dump_messages {
                write_jsonl(&deliveries, &dir.join("messages.jsonl"))?;
            }
        }
    }
    Ok(())
}

fn write_manifest(cli: &Cli, spec: &ExperimentSpec, started: String) -> Result<()> {
    let manifest = RunManifest {
        command: cli.command.name().into(),
        config: spec.clone(),
        config_hash: config_hash(spec)?,
        seed: cli.seed,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        out_dir: cli.out.clone(),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
    };
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let p = cli.out.join("manifest.json");
    fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))
}

fn exit_code(e: &Error) -> i32 {
    if e.is_config_error() {
        1
    } else {
        2
    }
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let started = chrono::Utc::now().to_rfc3339();
    let spec = match resolve_spec(&cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let result = if cli.deterministic {
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(|| execute(&cli, &spec)),
            Err(e) => Err(Error::InvalidConfig(format!("thread pool: {e}"))),
        }
    } else {
        execute(&cli, &spec)
    };
    let result = result.and_then(|()| write_manifest(&cli, &spec, started));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
