#![allow(dead_code)]

pub mod graphs;
pub mod oracles;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use l2t::engine::trace::{count_llm_calls, EventKind, TraceEvent};
use l2t::engine::{Engine, EpisodeConfig, EpisodeResult};
use l2t::llm::{RequestKind, UsageLedger};
use l2t::llm::features::HashFeaturizer;
use l2t::llm::oracle::{OracleBackend, OracleConfig, OracleScript};
use l2t::policy::{Policy, PolicyParams};
use l2t::tasks::{Instance, TaskSpec};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct Golden {
    pub numbers: Vec<i64>,
    pub root_children: Vec<String>,
    pub generate: BTreeMap<String, Vec<String>>,
    pub classify: BTreeMap<String, u8>,
    pub dead_ends: Vec<String>,
    pub final_text: String,
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden() -> Golden {
    serde_json::from_str(&std::fs::read_to_string(fixture("golden_24.json")).unwrap()).unwrap()
}

pub fn golden_task(g: &Golden) -> TaskSpec {
    TaskSpec::new(Instance::GameOf24 { numbers: g.numbers.clone() }).unwrap()
}

/// The recorded moves and labels, with the root's children keyed by the
/// task description (the root's text).
pub fn golden_script(g: &Golden, task: &TaskSpec) -> OracleScript {
    let mut generate = g.generate.clone();
    generate.insert(task.description.clone(), g.root_children.clone());
    OracleScript {
        generate,
        classify: g.classify.clone(),
    }
}

/// Always asks for five branches with dependency and near-fixed sampling.
pub fn wide_policy(d: usize) -> Policy {
    let mut p = PolicyParams::zeros(d, 64, 5);
    p.branch_b[4] = 50.0;
    p.cont_b = vec![0.0, -50.0, 50.0, -50.0];
    p.dep_b[0] = 50.0;
    Policy::new(p)
}

pub fn oracle_engine(task: &TaskSpec, seed: u64, ocfg: OracleConfig, script: Option<OracleScript>, cfg: EpisodeConfig) -> Engine {
    let mut backend = OracleBackend::new(task.clone(), seed, ocfg);
    if let Some(s) = script {
        backend = backend.with_script(s);
    }
    Engine::new(Arc::new(backend), Arc::new(HashFeaturizer::new(64)), cfg)
}

/// Every backtrack in the episode names the node's parent as restored, and
/// that parent is classified again unless the episode ended on that step.
/// Returns how many backtracks were checked.
pub fn check_backtracks(r: &EpisodeResult) -> Result<usize, String> {
    let end_step = r.trace.iter().rev().find(|e| e.event == EventKind::Terminated).map(|e| e.step);
    let mut seen = 0;
    for ev in &r.trace {
        if ev.event != EventKind::Labeled || ev.payload["label"] != 4 {
            continue;
        }
        seen += 1;
        let v = ev.node.ok_or("backtrack without node")?;
        let parent = r.graph.node(v).map_err(|e| e.to_string())?.parent.ok_or("root backtracked")?;
        if ev.payload["restored_parent"] != parent.0 {
            return Err(format!("node {v}: restored {} but parent is {parent}", ev.payload["restored_parent"]));
        }
        let reclassified = r
            .trace
            .iter()
            .any(|e| e.event == EventKind::Classified && e.node == Some(parent) && e.step > ev.step);
        if !reclassified && end_step != Some(ev.step) {
            return Err(format!("parent {parent} of node {v} was never revisited"));
        }
    }
    Ok(seen)
}

/// Ledger totals equal the per-kind sums, and the per-kind request counts
/// equal the calls recorded in the trace.
pub fn accounting_matches(usage: &UsageLedger, events: &[TraceEvent]) -> bool {
    let from_ledger: BTreeMap<RequestKind, u64> = usage
        .by_kind
        .iter()
        .filter(|(_, u)| u.requests > 0)
        .map(|(k, u)| (*k, u.requests))
        .collect();
    let sum = |f: fn(&l2t::llm::KindUsage) -> u64| usage.by_kind.values().map(f).sum::<u64>();
    sum(|u| u.requests) == usage.total.requests
        && sum(|u| u.prompt_tokens) == usage.total.prompt_tokens
        && sum(|u| u.completion_tokens) == usage.total.completion_tokens
        && from_ledger == count_llm_calls(events)
}
