//! Prompt templates, the subgraph-to-text serializer, and reply parsers.
//!
//! Template bodies are plain UTF-8 files with `{name}` placeholders. The
//! built-in copies live under `assets/templates/`; a directory holding any
//! subset of the same file names overrides them per run.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::graph::{AncestorSubgraph, GraphError, ReasoningGraph};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {kind:?} is missing binding for {{{name}}}")]
    MissingPlaceholder { kind: TemplateKind, name: String },
    #[error("template {kind:?} lacks required placeholder {{{name}}}")]
    RequiredPlaceholderAbsent { kind: TemplateKind, name: String },
    #[error("template {kind:?} uses unknown placeholder {{{name}}}")]
    UnknownPlaceholder { kind: TemplateKind, name: String },
    #[error("cannot read template {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("reply holds no usable answer: {0:?}")]
    Unparseable(String),
    #[error("reply holds no thoughts")]
    EmptyGeneration,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateKind {
    Format,
    EvalInfo,
    Evaluate,
    NodeClass,
    Generate,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 5] = [
        TemplateKind::Format,
        TemplateKind::EvalInfo,
        TemplateKind::Evaluate,
        TemplateKind::NodeClass,
        TemplateKind::Generate,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::Format => "format.txt",
            TemplateKind::EvalInfo => "eval_info.txt",
            TemplateKind::Evaluate => "evaluate.txt",
            TemplateKind::NodeClass => "node_class.txt",
            TemplateKind::Generate => "generate.txt",
        }
    }

    /// Placeholders a body of this kind must contain; no others are allowed.
    pub fn required(self) -> &'static [&'static str] {
        match self {
            TemplateKind::Format | TemplateKind::EvalInfo => &["task"],
            TemplateKind::Evaluate => &["task", "results", "eval_info"],
            TemplateKind::NodeClass => &["task", "subgraph"],
            TemplateKind::Generate => &["task", "subgraph", "format_info", "dependency", "branch_number"],
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateKind::Format => include_str!("../assets/templates/format.txt"),
            TemplateKind::EvalInfo => include_str!("../assets/templates/eval_info.txt"),
            TemplateKind::Evaluate => include_str!("../assets/templates/evaluate.txt"),
            TemplateKind::NodeClass => include_str!("../assets/templates/node_class.txt"),
            TemplateKind::Generate => include_str!("../assets/templates/generate.txt"),
        }
    }
}

const DEPENDENCY_FILE: &str = "dependency.txt";
const BUILTIN_DEPENDENCY: &str = include_str!("../assets/templates/dependency.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("static regex"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(kind: TemplateKind, body: &str) -> Result<Self, PromptError> {
        let body = body.trim_end_matches(['\n', '\r']);
        let mut segments = Vec::new();
        let mut seen = BTreeSet::new();
        let mut last = 0;
        for cap in placeholder_re().captures_iter(body) {
            let whole = cap.get(0).expect("match");
            let name = &cap[1];
            if !kind.required().contains(&name) {
                return Err(PromptError::UnknownPlaceholder {
                    kind,
                    name: name.to_string(),
                });
            }
            if whole.start() > last {
                segments.push(Segment::Literal(body[last..whole.start()].to_string()));
            }
            segments.push(Segment::Slot(name.to_string()));
            seen.insert(name.to_string());
            last = whole.end();
        }
        if last < body.len() {
            segments.push(Segment::Literal(body[last..].to_string()));
        }
        if let Some(name) = kind.required().iter().find(|n| !seen.contains(**n)) {
            return Err(PromptError::RequiredPlaceholderAbsent {
                kind,
                name: name.to_string(),
            });
        }
        Ok(Self { kind, segments })
    }

    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(name) => {
                    let value = bindings
                        .iter()
                        .find(|(k, _)| k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| PromptError::MissingPlaceholder {
                            kind: self.kind,
                            name: name.clone(),
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// The full template set used by an episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    format: PromptTemplate,
    eval_info: PromptTemplate,
    evaluate: PromptTemplate,
    node_class: PromptTemplate,
    generate: PromptTemplate,
    dependency: String,
}

impl Templates {
    pub fn builtin() -> Self {
        let t = |k: TemplateKind| PromptTemplate::parse(k, k.builtin()).expect("built-in template");
        Self {
            format: t(TemplateKind::Format),
            eval_info: t(TemplateKind::EvalInfo),
            evaluate: t(TemplateKind::Evaluate),
            node_class: t(TemplateKind::NodeClass),
            generate: t(TemplateKind::Generate),
            dependency: BUILTIN_DEPENDENCY.to_string(),
        }
    }

    /// Built-ins, with any file present in `dir` taking precedence.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| -> Result<Option<String>, PromptError> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(None);
            }
            std::fs::read_to_string(&path).map(Some).map_err(|e| PromptError::Io {
                path: path.display().to_string(),
                reason: e.to_string(),
            })
        };
        let mut out = Self::builtin();
        for kind in TemplateKind::ALL {
            if let Some(body) = read(kind.file_name())? {
                *out.slot_mut(kind) = PromptTemplate::parse(kind, &body)?;
            }
        }
        if let Some(dep) = read(DEPENDENCY_FILE)? {
            out.dependency = dep;
        }
        Ok(out)
    }

    fn slot_mut(&mut self, kind: TemplateKind) -> &mut PromptTemplate {
        match kind {
            TemplateKind::Format => &mut self.format,
            TemplateKind::EvalInfo => &mut self.eval_info,
            TemplateKind::Evaluate => &mut self.evaluate,
            TemplateKind::NodeClass => &mut self.node_class,
            TemplateKind::Generate => &mut self.generate,
        }
    }

    pub fn get(&self, kind: TemplateKind) -> &PromptTemplate {
        match kind {
            TemplateKind::Format => &self.format,
            TemplateKind::EvalInfo => &self.eval_info,
            TemplateKind::Evaluate => &self.evaluate,
            TemplateKind::NodeClass => &self.node_class,
            TemplateKind::Generate => &self.generate,
        }
    }

    pub fn render_format(&self, task: &str) -> Result<String, PromptError> {
        self.format.render(&[("task", task)])
    }

    pub fn render_eval_info(&self, task: &str) -> Result<String, PromptError> {
        self.eval_info.render(&[("task", task)])
    }

    pub fn render_evaluate(&self, task: &str, result: &str, eval_info: &str) -> Result<String, PromptError> {
        self.evaluate
            .render(&[("task", task), ("results", result), ("eval_info", eval_info)])
    }

    pub fn render_node_class(&self, task: &str, subgraph: &str) -> Result<String, PromptError> {
        self.node_class.render(&[("task", task), ("subgraph", subgraph)])
    }

    pub fn render_generate(
        &self,
        task: &str,
        subgraph: &str,
        format_info: &str,
        branches: usize,
        dependency: bool,
    ) -> Result<String, PromptError> {
        let n = branches.to_string();
        let dep = if dependency { self.dependency.as_str() } else { "" };
        self.generate.render(&[
            ("task", task),
            ("subgraph", subgraph),
            ("format_info", format_info),
            ("dependency", dep),
            ("branch_number", &n),
        ])
    }
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

// --- subgraph serialization ---

pub const TAU_MARKER: &str = "The former generated thoughts are: ";

fn escape_braces(s: &str) -> String {
    s.replace('{', "{{").replace('}', "}}")
}

/// Serializes texts listed root-ward first. `edges` are `(parent, child)`
/// positions into `texts` and become a plain-language topology note.
pub fn tau_texts(texts: &[&str], edges: &[(usize, usize)]) -> String {
    let groups: Vec<String> = texts.iter().map(|t| format!("{{{}}}", escape_braces(t))).collect();
    let mut out = format!("{TAU_MARKER}{}", groups.join(", "));
    if texts.len() >= 2 && !edges.is_empty() {
        let notes: Vec<String> = edges
            .iter()
            .map(|(p, c)| format!("thought {} is the former thought of thought {}", p + 1, c + 1))
            .collect();
        out.push_str(". In order, ");
        out.push_str(&notes.join("; "));
    }
    out
}

pub fn tau(graph: &ReasoningGraph, sub: &AncestorSubgraph) -> Result<String, PromptError> {
    let ids = sub.ordered_ids(graph);
    let mut texts = Vec::with_capacity(ids.len());
    for id in &ids {
        texts.push(graph.node(*id)?.text.as_str());
    }
    let pos = |id| ids.iter().position(|x| *x == id);
    let edges: Vec<(usize, usize)> = graph
        .edges()
        .iter()
        .filter_map(|&(u, w)| Some((pos(u)?, pos(w)?)))
        .collect();
    Ok(tau_texts(&texts, &edges))
}

/// Inverse of [`tau_texts`]: recovers the thought texts from the first
/// occurrence of the marker in `s`.
pub fn parse_tau(s: &str) -> Option<Vec<String>> {
    let start = s.find(TAU_MARKER)? + TAU_MARKER.len();
    let chars: Vec<char> = s[start..].chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    loop {
        if chars.get(i) != Some(&'{') {
            return None;
        }
        i += 1;
        let mut cur = String::new();
        loop {
            match (chars.get(i), chars.get(i + 1)) {
                (Some('{'), Some('{')) => {
                    cur.push('{');
                    i += 2;
                }
                (Some('}'), Some('}')) => {
                    cur.push('}');
                    i += 2;
                }
                (Some('}'), _) => {
                    i += 1;
                    break;
                }
                (Some('{'), _) | (None, _) => return None,
                (Some(&c), _) => {
                    cur.push(c);
                    i += 1;
                }
            }
        }
        out.push(cur);
        if chars.get(i) == Some(&',') && chars.get(i + 1) == Some(&' ') && chars.get(i + 2) == Some(&'{') {
            i += 2;
        } else {
            return Some(out);
        }
    }
}

/// Last thought in a serialized subgraph, which is the focus node.
pub fn focus_text(s: &str) -> Option<String> {
    parse_tau(s)?.pop()
}

// --- reply parsers ---

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedClassification {
    pub label: u8,
    pub raw: String,
}

pub fn parse_label(reply: &str) -> Result<ParsedClassification, PromptError> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?:^|[^0-9])([1-4])(?:[^0-9]|$)").expect("static regex"));
    let cap = re
        .captures(reply)
        .ok_or_else(|| PromptError::Unparseable(reply.to_string()))?;
    Ok(ParsedClassification {
        label: cap[1].parse().expect("single digit"),
        raw: reply.to_string(),
    })
}

pub fn parse_score(reply: &str) -> Result<u8, PromptError> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"-?[0-9]+").expect("static regex"));
    let m = re
        .find(reply)
        .ok_or_else(|| PromptError::Unparseable(reply.to_string()))?;
    let s = m.as_str();
    if s.starts_with('-') {
        return Ok(0);
    }
    // Digits only; anything too long for u64 is far above the cap.
    Ok(s.parse::<u64>().map_or(10, |v| v.min(10)) as u8)
}

/// Splits a generation reply into at most `n` thoughts. Numbered items
/// (`1.` or `1)` at line start) win; otherwise blank lines separate blocks.
pub fn parse_thoughts(reply: &str, n: usize) -> Result<Vec<String>, PromptError> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*[0-9]+[.)][ \t]+").expect("static regex"));
    let marks: Vec<(usize, usize)> = re.find_iter(reply).map(|m| (m.start(), m.end())).collect();
    let mut blocks: Vec<String> = if marks.is_empty() {
        static BLANK: OnceLock<Regex> = OnceLock::new();
        BLANK
            .get_or_init(|| Regex::new(r"\n[ \t]*\n").expect("static regex"))
            .split(reply)
            .map(|b| b.trim().to_string())
            .filter(|b| !b.is_empty())
            .collect()
    } else {
        marks
            .iter()
            .enumerate()
            .map(|(k, &(_, body))| {
                let end = marks.get(k + 1).map_or(reply.len(), |m| m.0);
                reply[body..end].trim().to_string()
            })
            .filter(|b| !b.is_empty())
            .collect()
    };
    blocks.truncate(n);
    if blocks.is_empty() {
        return Err(PromptError::EmptyGeneration);
    }
    Ok(blocks)
}
