//! The reasoning loop: classify every pending thought, pick a generation
//! mode for each one worth extending, generate, score, repeat.

pub mod trace;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::graph::{GraphError, Label, MembershipEffect, NodeId, ReasoningGraph, Termination, DEFAULT_BETA};
use crate::llm::features::FeatureProvider;
use crate::llm::{Llm, LlmBackend, LlmError, LlmRequest, RequestKind, UsageLedger};
use crate::policy::{Policy, PolicyError};
use crate::prompts::{self, PromptError, Templates};
use crate::tasks::{TaskSpec, Verdict};
use crate::trainer::{StateSnapshot, TrajectoryBuffer, Transition};
use trace::{EventKind, TraceEvent};

/// Sampling settings for the deterministic-answer prompts (format, eval
/// criteria, classification, scoring). The request bounds forbid zero.
pub const PRECISE_TEMPERATURE: f64 = 0.05;
pub const PRECISE_TOP_P: f64 = 1.0;
pub const FINAL_REWARD: f64 = 100.0;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid episode config: {0}")]
    Config(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

impl Aggregation {
    pub fn apply(self, scores: &[f64]) -> f64 {
        if scores.is_empty() {
            return 0.0;
        }
        match self {
            Aggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregation::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub beta: usize,
    pub max_steps: usize,
    pub max_nodes: usize,
    pub regen_limit: usize,
    pub classify_parallelism: usize,
    pub seed: u64,
    pub reward_aggregation: Aggregation,
    /// Take the most likely mode instead of sampling one.
    pub greedy: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            max_steps: 12,
            max_nodes: 64,
            regen_limit: 1,
            classify_parallelism: 4,
            seed: 0,
            reward_aggregation: Aggregation::Max,
            greedy: false,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.beta == 0 || self.max_nodes == 0 || self.classify_parallelism == 0 {
            return Err(EngineError::Config("beta, max_nodes and classify_parallelism must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Solved,
    Exhausted,
    BudgetHit,
}

/// The mode chosen at one expansion, kept for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRecord {
    pub episode: u64,
    pub step: u32,
    pub node: NodeId,
    pub branch_count: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub use_dependency: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: u64,
    pub outcome: Outcome,
    pub final_text: Option<String>,
    pub final_node: Option<NodeId>,
    pub verdict: Option<Verdict>,
    pub steps: u32,
    pub generated_nodes: usize,
    pub graph: ReasoningGraph,
    pub transitions: TrajectoryBuffer,
    pub usage: UsageLedger,
    pub modes: Vec<ModeRecord>,
    pub trace: Vec<TraceEvent>,
}

/// Everything about an episode except the bulky graph, transitions and trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub outcome: Outcome,
    pub final_text: Option<String>,
    pub verdict: Option<Verdict>,
    pub steps: u32,
    pub generated_nodes: usize,
    pub transitions: usize,
    pub usage: UsageLedger,
}

impl EpisodeResult {
    pub fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            episode: self.episode,
            outcome: self.outcome,
            final_text: self.final_text.clone(),
            verdict: self.verdict.clone(),
            steps: self.steps,
            generated_nodes: self.generated_nodes,
            transitions: self.transitions.len(),
            usage: self.usage.clone(),
        }
    }

    pub fn solved(&self) -> bool {
        self.outcome == Outcome::Solved && self.verdict.as_ref().is_some_and(|v| v.accepted)
    }
}

/// Maps `f` over `items` on up to `jobs` scoped threads, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs.min(items.len()))
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break done;
                        }
                        done.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

fn calls(kind: RequestKind, n: u64) -> Value {
    let mut m = BTreeMap::new();
    if n > 0 {
        m.insert(kind, n);
    }
    serde_json::to_value(m).expect("call map serializes")
}

pub struct Engine {
    pub backend: Arc<dyn LlmBackend>,
    pub features: Arc<dyn FeatureProvider>,
    pub templates: Templates,
    pub cfg: EpisodeConfig,
}

struct Classified {
    label: Label,
    raw: String,
    attempts: u64,
    feature: Vec<f64>,
}

struct Episode<'a> {
    engine: &'a Engine,
    task: &'a TaskSpec,
    policy: &'a Policy,
    id: u64,
    llm: Llm,
    rng: ChaCha8Rng,
    graph: ReasoningGraph,
    x_fmt: String,
    x_eva: String,
    transitions: Vec<Transition>,
    modes: Vec<ModeRecord>,
    trace: Vec<TraceEvent>,
    generated: usize,
}

impl Engine {
    pub fn new(backend: Arc<dyn LlmBackend>, features: Arc<dyn FeatureProvider>, cfg: EpisodeConfig) -> Self {
        Self {
            backend,
            features,
            templates: Templates::builtin(),
            cfg,
        }
    }

    pub fn with_templates(mut self, templates: Templates) -> Self {
        self.templates = templates;
        self
    }

    /// Runs one episode on `task`. `episode` tags the trace and salts the
    /// policy's sampling stream.
    pub fn run(&self, task: &TaskSpec, policy: &Policy, episode: u64) -> Result<EpisodeResult, EngineError> {
        self.cfg.validate()?;
        if self.features.dimension() != policy.params.d {
            return Err(EngineError::Config(format!(
                "feature dimension {} does not match policy input {}",
                self.features.dimension(),
                policy.params.d
            )));
        }
        let seed = self.cfg.seed ^ episode.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let ep = Episode {
            engine: self,
            task,
            policy,
            id: episode,
            llm: Llm::new(self.backend.clone()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            graph: ReasoningGraph::new(&task.description)?,
            x_fmt: String::new(),
            x_eva: String::new(),
            transitions: Vec::new(),
            modes: Vec::new(),
            trace: Vec::new(),
            generated: 0,
        };
        ep.run()
    }
}

impl Episode<'_> {
    fn emit(&mut self, event: EventKind, node: Option<NodeId>, payload: Value) {
        self.trace.push(TraceEvent {
            episode: self.id,
            step: self.graph.step(),
            event,
            node,
            payload,
        });
    }

    fn precise(&self, kind: RequestKind, prompt: String) -> Result<String, LlmError> {
        Ok(self
            .llm
            .complete(&LlmRequest::new(kind, prompt, PRECISE_TEMPERATURE, PRECISE_TOP_P))?
            .text)
    }

    fn first_step(&mut self) -> Result<(), EngineError> {
        let t = &self.engine.templates;
        let desc = &self.task.description;
        self.x_fmt = self.precise(RequestKind::Format, t.render_format(desc)?)?;
        self.x_eva = self.precise(RequestKind::EvalInfo, t.render_eval_info(desc)?)?;
        let root = self.graph.root();
        let mut llm = BTreeMap::new();
        llm.insert(RequestKind::Format, 1u64);
        llm.insert(RequestKind::EvalInfo, 1u64);
        self.emit(EventKind::Created, Some(root), json!({"text": desc, "llm_calls": llm}));
        Ok(())
    }

    fn classify_pending(&self, pending: &[NodeId]) -> Result<Vec<Classified>, EngineError> {
        let t = &self.engine.templates;
        let mut jobs = Vec::with_capacity(pending.len());
        for &v in pending {
            let sub = self.graph.ancestor_subgraph(v, self.engine.cfg.beta)?;
            let prompt = t.render_node_class(&self.task.description, &prompts::tau(&self.graph, &sub)?)?;
            jobs.push((prompt, self.graph.node(v)?.text.clone()));
        }
        par_map(&jobs, self.engine.cfg.classify_parallelism, |(prompt, text)| {
            let mut attempts = 0;
            let mut label = None;
            let mut raw = String::new();
            while attempts < 2 && label.is_none() {
                attempts += 1;
                raw = self.precise(RequestKind::Classify, prompt.clone())?;
                label = prompts::parse_label(&raw).ok().and_then(|p| Label::from_code(p.label));
            }
            let label = label.unwrap_or_else(|| {
                log::warn!("unparseable classification {raw:?}; treating as stop");
                Label::Stop
            });
            let feature = self.engine.features.featurize(text)?;
            Ok(Classified {
                label,
                raw,
                attempts,
                feature,
            })
        })
        .into_iter()
        .collect()
    }

    fn evaluate(&self, kids: &[NodeId]) -> Result<Vec<u8>, EngineError> {
        let t = &self.engine.templates;
        let mut jobs = Vec::with_capacity(kids.len());
        for &k in kids {
            jobs.push(t.render_evaluate(&self.task.description, &self.graph.node(k)?.text, &self.x_eva)?);
        }
        par_map(&jobs, self.engine.cfg.classify_parallelism, |prompt| {
            let reply = self.precise(RequestKind::Evaluate, prompt.clone())?;
            Ok(prompts::parse_score(&reply).unwrap_or(0))
        })
        .into_iter()
        .collect()
    }

    /// Sends a Generate request, re-prompting once if nothing parses.
    fn generate(&self, prompt: String, temperature: f64, top_p: f64, n: usize) -> Result<(Vec<String>, u64), EngineError> {
        let req = LlmRequest::new(RequestKind::Generate, prompt, temperature, top_p);
        for attempt in 1..=2u64 {
            let reply = self.llm.complete(&req)?.text;
            match prompts::parse_thoughts(&reply, n) {
                Ok(t) => return Ok((t, attempt)),
                Err(PromptError::EmptyGeneration) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Ok((Vec::new(), 2))
    }

    fn snapshot(&self) -> (Vec<Vec<f64>>, Vec<(usize, usize)>) {
        let features = self.graph.nodes().iter().map(|n| n.feature.clone()).collect();
        let edges = self.graph.edges().iter().map(|&(u, w)| (u.index(), w.index())).collect();
        (features, edges)
    }

    fn run(mut self) -> Result<EpisodeResult, EngineError> {
        let cfg = self.engine.cfg.clone();
        let mut outcome = None;
        let mut final_node = None;
        if cfg.max_steps == 0 {
            outcome = Some(Outcome::BudgetHit);
        } else {
            self.first_step()?;
        }
        // transitions from the previous step awaiting the final-answer check
        let mut pending_rewards: Vec<(usize, Vec<NodeId>)> = Vec::new();
        let mut regen_used = 0;
        let mut steps_done = 0;
        while outcome.is_none() {
            if steps_done == cfg.max_steps {
                outcome = Some(Outcome::BudgetHit);
                break;
            }
            steps_done += 1;
            self.graph.advance_step();

            let pending: Vec<NodeId> = self.graph.present().to_vec();
            let classified = self.classify_pending(&pending)?;
            let mut labels = BTreeMap::new();
            for (&v, c) in pending.iter().zip(classified) {
                self.graph.set_feature(v, c.feature)?;
                labels.insert(v, c.label);
                self.emit(
                    EventKind::Classified,
                    Some(v),
                    json!({"label": c.label, "raw": c.raw, "llm_calls": calls(RequestKind::Classify, c.attempts)}),
                );
            }
            for (ti, kids) in pending_rewards.drain(..) {
                if kids.iter().any(|k| labels.get(k) == Some(&Label::Final)) {
                    self.transitions[ti].reward = FINAL_REWARD;
                    let node = self.modes[ti].node;
                    self.emit(EventKind::Rewarded, Some(node), json!({"reward": FINAL_REWARD, "final_child": true}));
                }
            }

            let mut stopped = Vec::new();
            for &v in &pending {
                let mut label = labels[&v];
                if label == Label::Backtrack && v == self.graph.root() {
                    label = Label::Stop;
                }
                let effect = self.graph.apply_label(v, label)?;
                if label == Label::Stop && v != self.graph.root() {
                    stopped.push(v);
                }
                let parent = match effect {
                    MembershipEffect::Backtracked { parent } => Some(parent),
                    _ => None,
                };
                self.emit(EventKind::Labeled, Some(v), json!({"label": label, "restored_parent": parent}));
            }

            if let Termination::FinalFound(v) = self.graph.termination_state() {
                outcome = Some(Outcome::Solved);
                final_node = Some(v);
                break;
            }

            let expand: Vec<NodeId> = pending
                .iter()
                .copied()
                .filter(|&v| self.graph.is_present(v) && self.graph.node(v).is_ok_and(|n| n.label == Some(Label::Continue)))
                .collect();
            if expand.is_empty() {
                if !self.graph.present().is_empty() {
                    // only restored parents are pending; they are classified next step
                    continue;
                }
                if regen_used < cfg.regen_limit && self.regenerate(&stopped)? > 0 {
                    regen_used += 1;
                    continue;
                }
                outcome = Some(Outcome::Exhausted);
                break;
            }

            let (features, edges) = self.snapshot();
            let reps = self.policy.gcn_forward(&features, &edges)?;
            for v in expand {
                if self.generated >= cfg.max_nodes {
                    outcome = Some(Outcome::BudgetHit);
                    break;
                }
                if let Some(ti) = self.expand(v, &reps[v.index()], &features, &edges)? {
                    let kids = self.graph.children_of(v).to_vec();
                    pending_rewards.push((ti, kids));
                }
            }
        }

        if let Some(last) = self.transitions.last_mut() {
            last.done = true;
        }
        let outcome = outcome.expect("loop exits with an outcome");
        let final_text = final_node.and_then(|v| self.graph.node(v).ok()).map(|n| n.text.clone());
        let verdict = final_node.map(|v| self.task.verify_solution(&self.graph, v));
        self.emit(
            EventKind::Terminated,
            final_node,
            json!({"outcome": outcome, "generated_nodes": self.generated, "accepted": verdict.as_ref().map(|v| v.accepted)}),
        );
        Ok(EpisodeResult {
            episode: self.id,
            outcome,
            final_text,
            final_node,
            verdict,
            steps: self.graph.step(),
            generated_nodes: self.generated,
            usage: self.llm.usage_report(),
            graph: self.graph,
            transitions: TrajectoryBuffer {
                transitions: self.transitions,
            },
            modes: self.modes,
            trace: self.trace,
        })
    }

    /// Picks a mode for `v`, generates, scores the children and records
    /// the decision. Returns the transition index.
    fn expand(&mut self, v: NodeId, rep: &[f64], features: &[Vec<f64>], edges: &[(usize, usize)]) -> Result<Option<usize>, EngineError> {
        let cfg = &self.engine.cfg;
        let dist = self.policy.actor_dist(rep)?;
        let (action, log_prob) = if cfg.greedy {
            let a = dist.mode();
            (a, dist.log_prob(&a))
        } else {
            dist.sample(&mut self.rng)
        };
        let value = self.policy.critic_value(rep);
        let mode = action.mode;
        let subgraph = if mode.use_dependency {
            prompts::tau(&self.graph, &self.graph.ancestor_subgraph(v, cfg.beta)?)?
        } else {
            prompts::tau_texts(&[self.graph.node(v)?.text.as_str()], &[])
        };
        let prompt = self.engine.templates.render_generate(
            &self.task.description,
            &subgraph,
            &self.x_fmt,
            mode.branch_count,
            mode.use_dependency,
        )?;
        let (mut texts, attempts) = self.generate(prompt, mode.temperature, mode.top_p, mode.branch_count)?;
        texts.truncate(cfg.max_nodes - self.generated);
        let mode_json = json!({
            "branch_count": mode.branch_count,
            "temperature": mode.temperature,
            "top_p": mode.top_p,
            "use_dependency": mode.use_dependency,
        });
        let ti = self.transitions.len();
        self.transitions.push(Transition {
            snapshot: StateSnapshot {
                features: features.to_vec(),
                edges: edges.to_vec(),
                node: v.index(),
            },
            action,
            log_prob_old: log_prob,
            reward: 0.0,
            value_old: value,
            done: false,
        });
        self.modes.push(ModeRecord {
            episode: self.id,
            step: self.graph.step(),
            node: v,
            branch_count: mode.branch_count,
            temperature: mode.temperature,
            top_p: mode.top_p,
            use_dependency: mode.use_dependency,
        });
        if texts.is_empty() {
            self.graph.apply_label(v, Label::Stop)?;
            self.emit(
                EventKind::Expanded,
                Some(v),
                json!({"mode": mode_json, "children": [], "llm_calls": calls(RequestKind::Generate, attempts)}),
            );
            self.emit(EventKind::Labeled, Some(v), json!({"label": Label::Stop, "reason": "empty generation"}));
            self.emit(EventKind::Rewarded, Some(v), json!({"reward": 0.0, "scores": []}));
            return Ok(None);
        }
        let kids = self.graph.add_children(v, &texts)?;
        self.generated += kids.len();
        self.emit(
            EventKind::Expanded,
            Some(v),
            json!({"mode": mode_json, "children": kids, "log_prob": log_prob, "value": value, "llm_calls": calls(RequestKind::Generate, attempts)}),
        );
        for (&k, text) in kids.iter().zip(&texts) {
            self.emit(EventKind::Created, Some(k), json!({"text": text, "parent": v}));
        }
        let scores = self.evaluate(&kids)?;
        for (&k, &s) in kids.iter().zip(&scores) {
            self.graph.set_eval_score(k, s)?;
        }
        let as_f64: Vec<f64> = scores.iter().map(|&s| f64::from(s)).collect();
        let reward = cfg.reward_aggregation.apply(&as_f64);
        self.transitions[ti].reward = reward;
        self.emit(
            EventKind::Rewarded,
            Some(v),
            json!({"reward": reward, "scores": scores, "llm_calls": calls(RequestKind::Evaluate, kids.len() as u64)}),
        );
        Ok(Some(ti))
    }

    /// One-shot second chance for thoughts that were all stopped: each is
    /// regenerated in place from its parent with a neutral mode.
    fn regenerate(&mut self, stopped: &[NodeId]) -> Result<usize, EngineError> {
        let mut count = 0;
        for &v in stopped {
            let Some(parent) = self.graph.node(v)?.parent else { continue };
            let subgraph = prompts::tau_texts(&[self.graph.node(parent)?.text.as_str()], &[]);
            let prompt = self
                .engine
                .templates
                .render_generate(&self.task.description, &subgraph, &self.x_fmt, 1, false)?;
            let (texts, attempts) = self.generate(prompt, 1.0, 1.0, 1)?;
            let llm = calls(RequestKind::Generate, attempts);
            match texts.into_iter().next() {
                Some(text) => {
                    self.graph.regenerate(v, text.clone())?;
                    count += 1;
                    self.emit(EventKind::Created, Some(v), json!({"text": text, "parent": parent, "regenerated": true, "llm_calls": llm}));
                }
                None => {
                    self.emit(EventKind::Created, Some(v), json!({"regenerated": false, "llm_calls": llm}));
                }
            }
        }
        Ok(count)
    }
}
