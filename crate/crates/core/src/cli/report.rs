use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::engine::{EpisodeResult, Outcome};
use crate::llm::{RequestKind, UsageLedger};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub instance: String,
    pub family: String,
    /// One entry per repeat.
    pub outcomes: Vec<Outcome>,
    pub solved: Vec<bool>,
    pub generated_nodes: Vec<usize>,
    pub llm_calls: Vec<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population statistics; zero spread for fewer than two values.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub repeats: usize,
    pub instances: Vec<InstanceReport>,
    /// Percent solved, one sample per repeat.
    pub accuracy: MeanStd,
    /// Generated nodes per episode.
    pub generated_nodes: MeanStd,
    pub prompt_tokens_per_thought: f64,
    pub completion_tokens_per_thought: f64,
    pub tokens_per_case: f64,
    pub llm_calls_per_case: MeanStd,
    pub usage: UsageLedger,
    /// Model calls counted from the trace, for cross-checking `usage`.
    pub trace_llm_calls: BTreeMap<RequestKind, u64>,
}

impl EvalReport {
    /// `results[i][r]` is instance `i`, repeat `r`.
    pub fn build(names: &[(String, String)], results: &[Vec<EpisodeResult>]) -> Self {
        let repeats = results.first().map_or(0, Vec::len);
        let mut usage = UsageLedger::default();
        let mut instances = Vec::with_capacity(results.len());
        let mut nodes = Vec::new();
        let mut calls = Vec::new();
        let mut per_repeat = vec![0usize; repeats];
        for ((name, family), runs) in names.iter().zip(results) {
            for (r, ep) in runs.iter().enumerate() {
                usage.merge(&ep.usage);
                nodes.push(ep.generated_nodes as f64);
                calls.push(ep.usage.total.requests as f64);
                if ep.solved() {
                    per_repeat[r] += 1;
                }
            }
            instances.push(InstanceReport {
                instance: name.clone(),
                family: family.clone(),
                outcomes: runs.iter().map(|e| e.outcome).collect(),
                solved: runs.iter().map(EpisodeResult::solved).collect(),
                generated_nodes: runs.iter().map(|e| e.generated_nodes).collect(),
                llm_calls: runs.iter().map(|e| e.usage.total.requests).collect(),
            });
        }
        let n_inst = results.len().max(1) as f64;
        let acc: Vec<f64> = per_repeat.iter().map(|&s| 100.0 * s as f64 / n_inst).collect();
        let episodes = nodes.len();
        let thoughts = nodes.iter().sum::<f64>() as u64;
        let (pt, ct) = usage.per_thought(thoughts);
        let tokens = (usage.total.prompt_tokens + usage.total.completion_tokens) as f64;
        let trace_llm_calls = crate::engine::trace::count_llm_calls(results.iter().flatten().flat_map(|e| e.trace.iter()));
        Self {
            episodes,
            repeats,
            instances,
            accuracy: MeanStd::of(&acc),
            generated_nodes: MeanStd::of(&nodes),
            prompt_tokens_per_thought: pt,
            completion_tokens_per_thought: ct,
            tokens_per_case: if episodes == 0 { 0.0 } else { tokens / episodes as f64 },
            llm_calls_per_case: MeanStd::of(&calls),
            usage,
            trace_llm_calls,
        }
    }

    /// True when the ledger agrees with itself and with the trace.
    pub fn accounting_consistent(&self) -> bool {
        let from_ledger: BTreeMap<RequestKind, u64> = self
            .usage
            .by_kind
            .iter()
            .filter(|(_, u)| u.requests > 0)
            .map(|(k, u)| (*k, u.requests))
            .collect();
        self.usage.is_consistent() && from_ledger == self.trace_llm_calls
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<32} {:<16} {:>8} {:>10} {:>10}", "instance", "family", "solved", "nodes", "llm calls");
        for inst in &self.instances {
            let solved = inst.solved.iter().filter(|&&x| x).count();
            let nodes = inst.generated_nodes.iter().sum::<usize>() as f64 / inst.generated_nodes.len().max(1) as f64;
            let calls = inst.llm_calls.iter().sum::<u64>() as f64 / inst.llm_calls.len().max(1) as f64;
            let _ = writeln!(
                s,
                "{:<32} {:<16} {:>8} {:>10.2} {:>10.2}",
                inst.instance,
                inst.family,
                format!("{solved}/{}", inst.solved.len()),
                nodes,
                calls
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "episodes                 {} ({} repeats)", self.episodes, self.repeats);
        let _ = writeln!(s, "accuracy (%)             {:.2} ± {:.2}", self.accuracy.mean, self.accuracy.std);
        let _ = writeln!(s, "generated nodes          {:.2} ± {:.2}", self.generated_nodes.mean, self.generated_nodes.std);
        let _ = writeln!(s, "prompt tokens / thought  {:.2}", self.prompt_tokens_per_thought);
        let _ = writeln!(s, "output tokens / thought  {:.2}", self.completion_tokens_per_thought);
        let _ = writeln!(s, "tokens / case            {:.2}", self.tokens_per_case);
        let _ = writeln!(s, "llm calls / case         {:.2} ± {:.2}", self.llm_calls_per_case.mean, self.llm_calls_per_case.std);
        for (k, u) in &self.usage.by_kind {
            let _ = writeln!(s, "  {:<22} {:>6} calls {:>9} in {:>8} out", serde_json::to_value(k).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(), u.requests, u.prompt_tokens, u.completion_tokens);
        }
        s
    }
}
