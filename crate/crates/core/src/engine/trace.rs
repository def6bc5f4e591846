use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::graph::NodeId;
use crate::llm::RequestKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Created,
    Classified,
    Expanded,
    Labeled,
    Rewarded,
    Terminated,
}

/// One JSONL record. Any event that issued model calls lists them under
/// `payload.llm_calls`, keyed by request kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub episode: u64,
    pub step: u32,
    pub event: EventKind,
    pub node: Option<NodeId>,
    pub payload: Value,
}

impl TraceEvent {
    pub fn llm_calls(&self) -> BTreeMap<RequestKind, u64> {
        self.payload
            .get("llm_calls")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .unwrap_or_default()
    }
}

/// Model calls per kind, summed over `events`.
pub fn count_llm_calls<'a>(events: impl IntoIterator<Item = &'a TraceEvent>) -> BTreeMap<RequestKind, u64> {
    let mut out = BTreeMap::new();
    for ev in events {
        for (k, n) in ev.llm_calls() {
            *out.entry(k).or_insert(0) += n;
        }
    }
    out
}

pub fn write_jsonl<W: Write>(mut w: W, events: &[TraceEvent]) -> std::io::Result<()> {
    for ev in events {
        serde_json::to_writer(&mut w, ev)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_jsonl(path: &Path) -> std::io::Result<Vec<TraceEvent>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        out.push(ev);
    }
    Ok(out)
}

/// Human-readable one-liner for `trace` pretty-printing.
pub fn describe(ev: &TraceEvent) -> String {
    let node = ev.node.map_or_else(|| "-".to_string(), |n| n.to_string());
    let p = &ev.payload;
    let detail = match ev.event {
        EventKind::Created => p.get("text").and_then(Value::as_str).unwrap_or("").to_string(),
        EventKind::Classified | EventKind::Labeled => {
            format!("label {}", p.get("label").map_or_else(|| "?".into(), Value::to_string))
        }
        EventKind::Expanded => format!(
            "mode {} -> children {}",
            p.get("mode").map_or_else(String::new, Value::to_string),
            p.get("children").map_or_else(String::new, Value::to_string)
        ),
        EventKind::Rewarded => format!("reward {}", p.get("reward").map_or_else(String::new, Value::to_string)),
        EventKind::Terminated => format!(
            "{} after {} generated nodes",
            p.get("outcome").and_then(Value::as_str).unwrap_or("?"),
            p.get("generated_nodes").map_or_else(String::new, Value::to_string)
        ),
    };
    format!("ep {:>3} step {:>2} {:<10} node {:>4}  {detail}", ev.episode, ev.step, format!("{:?}", ev.event).to_lowercase(), node)
}
