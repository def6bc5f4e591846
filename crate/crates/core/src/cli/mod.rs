//! Command-line surface: `run`, `train`, `eval`, `trace` and `gen`.

pub mod config;
pub mod report;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::engine::trace::{self, TraceEvent};
use crate::engine::{par_map, Engine, EngineError, EpisodeResult, ModeRecord};
use crate::llm::features::{EmbeddingFeaturizer, FeatureProvider, HashFeaturizer};
use crate::llm::http::{HttpBackend, HttpClient};
use crate::llm::oracle::OracleBackend;
use crate::llm::{LlmBackend, LlmError};
use crate::policy::{Checkpoint, Policy};
use crate::prompts::Templates;
use crate::tasks::{self, Manifest, TaskSpec};
use crate::trainer::{self, TrainStats, TrajectoryBuffer};
use config::{BackendConfig, FeatureSource, RunConfig};
use report::EvalReport;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Llm(LlmError::MissingApiKey(v)) => CliError::Usage(format!("environment variable {v} is not set")),
            EngineError::Llm(l) => CliError::Backend(l.to_string()),
            EngineError::Config(c) => CliError::Usage(c),
            other => CliError::Internal(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Internal(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Oracle,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenFamily {
    Game24,
    Latin,
    Knights,
    Creative,
}

#[derive(Debug, Parser)]
#[command(name = "l2t", version, about = "Graph reasoning engine with a learned mode selector")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long, global = true)]
    pub base_url: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Policy checkpoint; without one the selector is freshly initialised.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub features: Option<FeatureSource>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub max_steps: Option<usize>,
    #[arg(long, global = true)]
    pub max_nodes: Option<usize>,
    /// Directory with prompt template overrides.
    #[arg(long, global = true)]
    pub templates: Option<PathBuf>,
    /// Use the most likely mode instead of sampling.
    #[arg(long, global = true)]
    pub greedy: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode on a task file.
    Run {
        #[arg(long)]
        task: Option<PathBuf>,
    },
    /// Alternate episode collection and PPO updates over a manifest.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run every instance of a manifest and report accuracy and cost.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Pretty-print a trace file.
    Trace { file: PathBuf },
    /// Write seeded task instances plus a manifest.
    Gen {
        #[arg(long, value_enum)]
        family: GenFamily,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Grid size or number of characters.
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        givens: usize,
        #[arg(long, default_value_t = 4)]
        words: usize,
    },
}

impl Cli {
    /// Config file (or defaults) with every flag applied on top.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        match self.backend {
            Some(BackendKind::Oracle) if !matches!(cfg.backend, BackendConfig::Oracle(_)) => {
                cfg.backend = BackendConfig::Oracle(Default::default());
            }
            Some(BackendKind::Http) if !matches!(cfg.backend, BackendConfig::Http(_)) => {
                cfg.backend = BackendConfig::Http(Default::default());
            }
            _ => {}
        }
        if let BackendConfig::Http(h) = &mut cfg.backend {
            if let Some(u) = &self.base_url {
                h.base_url = u.clone();
            }
            if let Some(m) = &self.model {
                h.model = m.clone();
            }
        }
        if let Some(c) = &self.checkpoint {
            cfg.policy.checkpoint = Some(c.clone());
        }
        if let Some(f) = self.features {
            cfg.policy.features = f;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if let Some(m) = self.max_steps {
            cfg.episode.max_steps = m;
        }
        if let Some(m) = self.max_nodes {
            cfg.episode.max_nodes = m;
        }
        if let Some(t) = &self.templates {
            cfg.templates = Some(t.clone());
        }
        if self.greedy {
            cfg.episode.greedy = true;
        }
        match &self.command {
            Command::Run { task } => {
                if let Some(t) = task {
                    cfg.task = Some(t.clone());
                }
            }
            Command::Train { manifest, rounds, jobs } => {
                if let Some(m) = manifest {
                    cfg.manifest = Some(m.clone());
                }
                if let Some(r) = rounds {
                    cfg.rounds = *r;
                }
                if let Some(j) = jobs {
                    cfg.jobs = *j;
                }
            }
            Command::Eval { manifest, repeats, jobs } => {
                if let Some(m) = manifest {
                    cfg.manifest = Some(m.clone());
                }
                if let Some(r) = repeats {
                    cfg.repeats = *r;
                }
                if let Some(j) = jobs {
                    cfg.jobs = *j;
                }
            }
            Command::Trace { .. } | Command::Gen { .. } => {}
        }
        cfg.train.seed = cfg.seed;
        cfg.episode.seed = cfg.seed;
        Ok(cfg)
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    if let Command::Trace { file } = &cli.command {
        return cmd_trace(file);
    }
    let cfg = cli.resolve()?;
    match &cli.command {
        Command::Run { .. } => cmd_run(&cfg).map(|r| i32::from(!r.solved())),
        Command::Train { .. } => cmd_train(&cfg).map(|_| 0),
        Command::Eval { .. } => cmd_eval(&cfg).map(|_| 0),
        Command::Gen { family, count, n, givens, words } => cmd_gen(&cfg, *family, *count, *n, *givens, *words).map(|_| 0),
        Command::Trace { .. } => unreachable!("handled above"),
    }
}

// --- shared plumbing ---

/// Distinct per-episode seed for the backend.
pub fn episode_seed(seed: u64, instance: usize, repeat: usize) -> u64 {
    seed ^ (instance as u64 + 1).wrapping_mul(0xa076_1d64_78bd_642f) ^ (repeat as u64 + 1).wrapping_mul(0xe703_7ed1_a0b4_28db)
}

/// Shared pieces built once per command.
pub struct Runtime {
    pub cfg: RunConfig,
    pub templates: Templates,
    pub features: Arc<dyn FeatureProvider>,
    http: Option<Arc<dyn LlmBackend>>,
}

impl Runtime {
    pub fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let templates = match &cfg.templates {
            Some(dir) => Templates::load_dir(dir).map_err(|e| CliError::Usage(e.to_string()))?,
            None => Templates::builtin(),
        };
        let client = |h: &crate::llm::http::HttpConfig| {
            HttpClient::from_env(h.clone()).map_err(|e| match e {
                LlmError::MissingApiKey(v) => CliError::Usage(format!("environment variable {v} is not set")),
                other => CliError::Backend(other.to_string()),
            })
        };
        let http: Option<Arc<dyn LlmBackend>> = match &cfg.backend {
            BackendConfig::Http(h) => Some(Arc::new(HttpBackend::new(client(h)?))),
            BackendConfig::Oracle(_) => None,
        };
        let features: Arc<dyn FeatureProvider> = match (cfg.policy.features, &cfg.backend) {
            (FeatureSource::Hash, _) => Arc::new(HashFeaturizer::new(cfg.policy.feature_dim)),
            (FeatureSource::Embedding, BackendConfig::Http(h)) => {
                Arc::new(EmbeddingFeaturizer::new(client(h)?, cfg.policy.feature_dim, cfg.seed))
            }
            (FeatureSource::Embedding, BackendConfig::Oracle(_)) => {
                return Err(CliError::Usage("embedding features need the http backend".into()))
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            templates,
            features,
            http,
        })
    }

    pub fn engine(&self, task: &TaskSpec, backend_seed: u64) -> Engine {
        let backend: Arc<dyn LlmBackend> = match (&self.cfg.backend, &self.http) {
            (_, Some(h)) => h.clone(),
            (BackendConfig::Oracle(o), None) => Arc::new(OracleBackend::new(task.clone(), backend_seed, *o)),
            (BackendConfig::Http(_), None) => unreachable!("http client built in Runtime::new"),
        };
        Engine::new(backend, self.features.clone(), self.cfg.episode.clone()).with_templates(self.templates.clone())
    }

    /// The configured checkpoint, or a fresh policy. Also returns the
    /// checkpoint's round.
    pub fn policy(&self) -> Result<(Policy, u64), CliError> {
        let p = &self.cfg.policy;
        let (policy, round) = match &p.checkpoint {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read checkpoint {}: {e}", path.display())))?;
                let ck: Checkpoint = serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("bad checkpoint {}: {e}", path.display())))?;
                let round = ck.round;
                let pol = ck
                    .into_policy()
                    .map_err(|e| CliError::Usage(format!("bad checkpoint {}: {e}", path.display())))?;
                (pol, round)
            }
            None => (Policy::init(p.feature_dim, p.hidden, p.b_max, self.cfg.seed), 0),
        };
        if policy.params.d != self.features.dimension() {
            return Err(CliError::Usage(format!(
                "checkpoint expects {}-dim features but the featurizer gives {}",
                policy.params.d,
                self.features.dimension()
            )));
        }
        Ok((policy, round))
    }
}

fn load_task(cfg: &RunConfig) -> Result<TaskSpec, CliError> {
    let path = cfg.task.as_ref().ok_or_else(|| CliError::Usage("no task given (use --task)".into()))?;
    if !path.exists() {
        return Err(CliError::Usage(format!("task file {} does not exist", path.display())));
    }
    TaskSpec::load(path).map_err(|e| CliError::Usage(e.to_string()))
}

fn load_manifest(cfg: &RunConfig) -> Result<(Vec<String>, Vec<TaskSpec>), CliError> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::Usage("no manifest given (use --manifest)".into()))?;
    if !path.exists() {
        return Err(CliError::Usage(format!("manifest {} does not exist", path.display())));
    }
    let (m, tasks) = Manifest::load(path).map_err(|e| CliError::Usage(e.to_string()))?;
    if tasks.is_empty() {
        return Err(CliError::Usage(format!("manifest {} lists no instances", path.display())));
    }
    Ok((m.instances.iter().map(|p| p.display().to_string()).collect(), tasks))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_trace(path: &Path, events: &[TraceEvent]) -> Result<(), CliError> {
    let f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    trace::write_jsonl(std::io::BufWriter::new(f), events).map_err(|e| io_err(path, e))
}

fn write_modes<'a>(path: &Path, modes: impl IntoIterator<Item = &'a ModeRecord>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for m in modes {
        w.serialize(m).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

// --- commands ---

pub fn cmd_run(cfg: &RunConfig) -> Result<EpisodeResult, CliError> {
    let task = load_task(cfg)?;
    let rt = Runtime::new(cfg)?;
    let (policy, _) = rt.policy()?;
    let result = rt.engine(&task, episode_seed(cfg.seed, 0, 0)).run(&task, &policy, 0)?;
    let out = &cfg.output;
    ensure_dir(out)?;
    write_trace(&out.join("trace.jsonl"), &result.trace)?;
    write_json(&out.join("summary.json"), &result.summary())?;
    write_json(&out.join("graph.json"), &result.graph)?;
    write_modes(&out.join("modes.csv"), &result.modes)?;
    println!("{}", serde_json::to_string_pretty(&result.summary()).map_err(|e| CliError::Internal(e.to_string()))?);
    Ok(result)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct TrainLogLine {
    pub round: u64,
    pub episodes: usize,
    pub solved: usize,
    pub mean_generated_nodes: f64,
    pub transitions: usize,
    pub stats: Option<TrainStats>,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Policy, CliError> {
    if cfg.rounds == 0 {
        return Err(CliError::Usage("rounds must be at least 1".into()));
    }
    let (_, tasks) = load_manifest(cfg)?;
    let rt = Runtime::new(cfg)?;
    let (mut policy, start) = rt.policy()?;
    let out = &cfg.output;
    let ck_dir = out.join("checkpoints");
    ensure_dir(&ck_dir)?;
    let log_path = out.join("train_log.jsonl");
    let trace_path = out.join("train_trace.jsonl");
    if cfg.policy.checkpoint.is_none() {
        // a fresh run starts fresh files
        for p in [&log_path, &trace_path] {
            if p.exists() {
                std::fs::remove_file(p).map_err(|e| io_err(p, e))?;
            }
        }
    }
    let jobs = cfg.jobs.max(1);
    for round in start + 1..=start + cfg.rounds as u64 {
        let indexed: Vec<(usize, &TaskSpec)> = tasks.iter().enumerate().collect();
        let results = par_map(&indexed, jobs, |&(i, task)| {
            let seed = episode_seed(cfg.seed, i, round as usize);
            rt.engine(task, seed).run(task, &policy, round * tasks.len() as u64 + i as u64)
        });
        let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        let mut buf = TrajectoryBuffer::default();
        for r in &results {
            buf.push_episode(r.transitions.transitions.clone())
                .map_err(|e| CliError::Internal(e.to_string()))?;
        }
        let stats = if buf.is_empty() {
            log::warn!("round {round}: no decisions were made; skipping the update");
            None
        } else {
            let (next, s) = trainer::update(&policy, &buf, &cfg.train, round).map_err(|e| CliError::Internal(e.to_string()))?;
            policy = next;
            Some(s)
        };
        let line = TrainLogLine {
            round,
            episodes: results.len(),
            solved: results.iter().filter(|r| r.solved()).count(),
            mean_generated_nodes: results.iter().map(|r| r.generated_nodes as f64).sum::<f64>() / results.len() as f64,
            transitions: buf.len(),
            stats,
        };
        let mut log = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| io_err(&log_path, e))?;
        writeln!(log, "{}", serde_json::to_string(&line).map_err(|e| CliError::Internal(e.to_string()))?)
            .map_err(|e| io_err(&log_path, e))?;
        let mut tf = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&trace_path)
            .map_err(|e| io_err(&trace_path, e))?;
        let events: Vec<TraceEvent> = results.iter().flat_map(|r| r.trace.iter().cloned()).collect();
        trace::write_jsonl(&mut tf, &events).map_err(|e| io_err(&trace_path, e))?;
        write_json(
            &ck_dir.join(format!("round_{round:04}.json")),
            &Checkpoint::from_policy(&policy, cfg.seed, round),
        )?;
        println!(
            "round {round}: solved {}/{} mean nodes {:.2} transitions {}",
            line.solved, line.episodes, line.mean_generated_nodes, line.transitions
        );
    }
    Ok(policy)
}

/// Runs every (instance, repeat) pair; `results[i][r]`.
pub fn run_batch(rt: &Runtime, tasks: &[TaskSpec], policy: &Policy, repeats: usize, jobs: usize) -> Result<Vec<Vec<EpisodeResult>>, CliError> {
    let pairs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|i| (0..repeats).map(move |r| (i, r))).collect();
    let flat = par_map(&pairs, jobs.max(1), |&(i, r)| {
        let task = &tasks[i];
        rt.engine(task, episode_seed(rt.cfg.seed, i, r))
            .run(task, policy, (i * repeats + r) as u64)
    });
    let mut flat = flat.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter();
    Ok((0..tasks.len()).map(|_| flat.by_ref().take(repeats).collect()).collect())
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    if cfg.repeats == 0 {
        return Err(CliError::Usage("repeats must be at least 1".into()));
    }
    let (names, tasks) = load_manifest(cfg)?;
    let rt = Runtime::new(cfg)?;
    let (policy, _) = rt.policy()?;
    let results = run_batch(&rt, &tasks, &policy, cfg.repeats, cfg.jobs)?;
    let labels: Vec<(String, String)> = names
        .into_iter()
        .zip(&tasks)
        .map(|(n, t)| (n, t.family().slug().to_string()))
        .collect();
    let report = EvalReport::build(&labels, &results);
    let out = &cfg.output;
    ensure_dir(out)?;
    let events: Vec<TraceEvent> = results.iter().flatten().flat_map(|r| r.trace.iter().cloned()).collect();
    write_trace(&out.join("trace.jsonl"), &events)?;
    write_modes(&out.join("modes.csv"), results.iter().flatten().flat_map(|r| r.modes.iter()))?;
    write_json(&out.join("report.json"), &report)?;
    let table = report.render_table();
    std::fs::write(out.join("report.txt"), &table).map_err(|e| io_err(&out.join("report.txt"), e))?;
    print!("{table}");
    Ok(report)
}

pub fn cmd_trace(path: &Path) -> Result<i32, CliError> {
    let events = trace::read_jsonl(path).map_err(|e| CliError::Usage(format!("cannot read trace {}: {e}", path.display())))?;
    for ev in &events {
        println!("{}", trace::describe(ev));
    }
    let calls = trace::count_llm_calls(&events);
    let total: u64 = calls.values().sum();
    println!("{} events, {} model calls {:?}", events.len(), total, calls);
    Ok(0)
}

pub fn cmd_gen(cfg: &RunConfig, family: GenFamily, count: usize, n: usize, givens: usize, words: usize) -> Result<Vec<PathBuf>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let instances = match family {
        GenFamily::Game24 => tasks::generate_24(&mut rng, count),
        GenFamily::Latin => tasks::generate_latin(&mut rng, n, givens, count),
        GenFamily::Knights => tasks::generate_kk(&mut rng, n, count),
        GenFamily::Creative => tasks::generate_creative(&mut rng, words, count),
    };
    let out = &cfg.output;
    ensure_dir(out)?;
    let mut rel = Vec::with_capacity(instances.len());
    for (k, inst) in instances.iter().enumerate() {
        let name = PathBuf::from(format!("{}_{k:03}.json", inst.family().slug()));
        write_json(&out.join(&name), inst)?;
        rel.push(name);
    }
    write_json(&out.join("manifest.json"), &Manifest { instances: rel.clone() })?;
    println!("wrote {} instances and manifest.json to {}", rel.len(), out.display());
    Ok(rel)
}
