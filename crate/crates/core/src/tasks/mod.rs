//! Task families, their exact verifiers, and the step-level state machine the
//! oracle backend uses to play them.
//!
//! Every intermediate thought has the shape
//! `Input:<state> Plan:<step> Output:<state>`, where the state notation is
//! family specific (a number list, a grid, a partial assignment, a list of
//! text items).

pub mod creative;
pub mod game24;
pub mod knights;
pub mod latin;

use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{NodeId, ReasoningGraph};
use creative::CreativeVariant;
use game24::Value;
use knights::{Claim, Statement};
use latin::{Given, Grid};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub evidence: String,
}

impl Verdict {
    pub fn accept() -> Self {
        Self {
            accepted: true,
            evidence: String::new(),
        }
    }

    pub fn reject(evidence: impl Into<String>) -> Self {
        Self {
            accepted: false,
            evidence: evidence.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("malformed instance: {0}")]
    Malformed(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[serde(rename = "game_of_24")]
    GameOf24,
    LatinSquare,
    KnightsKnaves,
    CreativeWriting,
}

impl Family {
    pub fn slug(self) -> &'static str {
        match self {
            Family::GameOf24 => "game_of_24",
            Family::LatinSquare => "latin_square",
            Family::KnightsKnaves => "knights_knaves",
            Family::CreativeWriting => "creative_writing",
        }
    }
}

/// Family-specific payload, as stored in instance files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Instance {
    #[serde(rename = "game_of_24")]
    GameOf24 {
        numbers: Vec<i64>,
    },
    LatinSquare {
        n: usize,
        #[serde(default)]
        givens: Vec<Given>,
    },
    KnightsKnaves {
        n_characters: usize,
        statements: Vec<Statement>,
    },
    CreativeWriting {
        variant: CreativeVariant,
        items: Vec<String>,
    },
}

impl Instance {
    pub fn family(&self) -> Family {
        match self {
            Instance::GameOf24 { .. } => Family::GameOf24,
            Instance::LatinSquare { .. } => Family::LatinSquare,
            Instance::KnightsKnaves { .. } => Family::KnightsKnaves,
            Instance::CreativeWriting { .. } => Family::CreativeWriting,
        }
    }

    fn validate(&self) -> Result<(), TaskError> {
        let bad = |m: String| Err(TaskError::Malformed(m));
        match self {
            Instance::GameOf24 { numbers } => {
                if numbers.len() != 4 || numbers.iter().any(|&n| n <= 0) {
                    return bad(format!("game of 24 needs 4 positive integers, got {numbers:?}"));
                }
            }
            Instance::LatinSquare { n, givens } => {
                if *n == 0 || *n > 9 {
                    return bad(format!("grid size {n} outside 1..=9"));
                }
                for g in givens {
                    if g.row >= *n || g.col >= *n || g.value == 0 || g.value as usize > *n {
                        return bad(format!("given {g:?} outside the {n}x{n} grid"));
                    }
                }
            }
            Instance::KnightsKnaves {
                n_characters,
                statements,
            } => {
                if *n_characters == 0 || *n_characters > knights::MAX_CHARACTERS {
                    return bad(format!("{n_characters} characters outside 1..=10"));
                }
                for s in statements {
                    if s.speaker >= *n_characters || s.claim.max_index() >= *n_characters {
                        return bad(format!("statement {} names an unknown character", s.render()));
                    }
                }
            }
            Instance::CreativeWriting { items, .. } => {
                if items.is_empty() || items.iter().any(|i| i.trim().is_empty()) {
                    return bad("creative writing needs nonempty items".into());
                }
            }
        }
        Ok(())
    }

    fn describe(&self) -> String {
        match self {
            Instance::GameOf24 { numbers } => format!(
                "Combine the numbers {} with +, -, * and / to reach exactly 24, using every number exactly once.",
                game24::format_values(&game24::integers(numbers))
            ),
            Instance::LatinSquare { n, givens } => format!(
                "Complete the {n}x{n} grid {} (0 is an empty cell) with the numbers 1 to {n} so that no row or column repeats a number.",
                latin::format_grid(&latin::empty_grid(*n, givens))
            ),
            Instance::KnightsKnaves {
                n_characters,
                statements,
            } => {
                let names: Vec<String> = (0..*n_characters).map(knights::name).collect();
                let said: Vec<String> = statements.iter().map(Statement::render).collect();
                format!(
                    "Characters {} are each a Knight (every statement true) or a Knave (every statement false). {} Decide who is a Knight and who is a Knave.",
                    names.join(", "),
                    said.join(" ")
                )
            }
            Instance::CreativeWriting { variant, items } => {
                let list = serde_json::to_string(items).expect("items serialize");
                match variant {
                    CreativeVariant::Words => format!(
                        "Write one sentence for each word in {list} that uses the word, and join the sentences into a single paragraph."
                    ),
                    CreativeVariant::Sentences => format!(
                        "Turn each sentence in {list} into a short paragraph opening with that sentence, and join the paragraphs into one passage."
                    ),
                }
            }
        }
    }
}

/// The state reached after a sequence of steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskState {
    Numbers(Vec<Value>),
    Grid(Grid),
    Assignment(knights::Partial),
    Items(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateStatus {
    Solved,
    Open,
    DeadEnd,
}

/// One legal step out of a state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Successor {
    pub plan: String,
    pub state: TaskState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub instance: Instance,
    pub description: String,
}

impl TaskSpec {
    pub fn new(instance: Instance) -> Result<Self, TaskError> {
        instance.validate()?;
        let description = instance.describe();
        Ok(Self {
            instance,
            description,
        })
    }

    pub fn family(&self) -> Family {
        self.instance.family()
    }

    pub fn load(path: &Path) -> Result<Self, TaskError> {
        let text = std::fs::read_to_string(path).map_err(|source| TaskError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let instance: Instance = serde_json::from_str(&text).map_err(|source| TaskError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        Self::new(instance)
    }

    pub fn initial_state(&self) -> TaskState {
        match &self.instance {
            Instance::GameOf24 { numbers } => TaskState::Numbers(game24::integers(numbers)),
            Instance::LatinSquare { n, givens } => TaskState::Grid(latin::empty_grid(*n, givens)),
            Instance::KnightsKnaves { n_characters, .. } => {
                TaskState::Assignment(vec![None; *n_characters])
            }
            Instance::CreativeWriting { items, .. } => TaskState::Items(items.clone()),
        }
    }

    pub fn format_state(&self, state: &TaskState) -> String {
        match state {
            TaskState::Numbers(v) => game24::format_values(v),
            TaskState::Grid(g) => latin::format_grid(g),
            TaskState::Assignment(a) => knights::format_partial(a),
            TaskState::Items(items) => serde_json::to_string(items).expect("items serialize"),
        }
    }

    fn parse_state_notation(&self, s: &str) -> Option<TaskState> {
        match &self.instance {
            Instance::GameOf24 { .. } => game24::parse_values(s).map(TaskState::Numbers),
            Instance::LatinSquare { n, .. } => latin::parse_grid(s)
                .filter(|g| g.len() == *n && g.iter().all(|r| r.len() == *n))
                .map(TaskState::Grid),
            Instance::KnightsKnaves { n_characters, .. } => knights::parse_partial(s)
                .filter(|p| p.len() == *n_characters)
                .map(TaskState::Assignment),
            Instance::CreativeWriting { .. } => serde_json::from_str::<Vec<String>>(s.trim())
                .ok()
                .map(TaskState::Items),
        }
    }

    /// Recovers the state a thought ends in. The root's text is the task
    /// description itself.
    pub fn parse_state(&self, thought: &str) -> Option<TaskState> {
        if thought == self.description {
            return Some(self.initial_state());
        }
        let after_plan = thought.find("Plan:").map_or(0, |i| i);
        let out = thought[after_plan..].find("Output:")? + after_plan + "Output:".len();
        self.parse_state_notation(&thought[out..])
    }

    pub fn render_thought(&self, from: &TaskState, step: &Successor) -> String {
        format!(
            "Input:{} Plan:{} Output:{}",
            self.format_state(from),
            step.plan,
            self.format_state(&step.state)
        )
    }

    /// Legal steps out of `state`, in canonical order.
    pub fn successors(&self, state: &TaskState) -> Vec<Successor> {
        match (&self.instance, state) {
            (Instance::GameOf24 { .. }, TaskState::Numbers(v)) => game24::moves(v)
                .into_iter()
                .map(|m| Successor {
                    plan: m.plan(),
                    state: TaskState::Numbers(m.output),
                })
                .collect(),
            (Instance::LatinSquare { .. }, TaskState::Grid(g)) => {
                let Some(r) = latin::next_row(g) else { return Vec::new() };
                latin::row_candidates(g, r)
                    .into_iter()
                    .map(|row| {
                        let plan = format!(
                            "fill row {} with {}",
                            r + 1,
                            serde_json::to_string(&row).expect("row serializes")
                        );
                        let mut next = g.clone();
                        next[r] = row;
                        Successor {
                            plan,
                            state: TaskState::Grid(next),
                        }
                    })
                    .collect()
            }
            (Instance::KnightsKnaves { .. }, TaskState::Assignment(p)) => {
                let mut out = Vec::new();
                for (i, slot) in p.iter().enumerate() {
                    if slot.is_some() {
                        continue;
                    }
                    for knight in [true, false] {
                        let mut next = p.clone();
                        next[i] = Some(knight);
                        let role = if knight { "Knight" } else { "Knave" };
                        out.push(Successor {
                            plan: format!("{} is a {role}", knights::name(i)),
                            state: TaskState::Assignment(next),
                        });
                    }
                }
                out
            }
            (Instance::CreativeWriting { variant, items: raw }, TaskState::Items(items)) => {
                creative_successors(*variant, raw, items)
            }
            _ => Vec::new(),
        }
    }

    pub fn status(&self, state: &TaskState) -> StateStatus {
        match (&self.instance, state) {
            (Instance::GameOf24 { .. }, TaskState::Numbers(v)) => {
                if game24::is_solved(v) {
                    StateStatus::Solved
                } else if game24::solvable(v) {
                    StateStatus::Open
                } else {
                    StateStatus::DeadEnd
                }
            }
            (Instance::LatinSquare { n, givens }, TaskState::Grid(g)) => {
                let respects_givens = givens.iter().all(|c| g[c.row][c.col] == c.value);
                if !respects_givens {
                    StateStatus::DeadEnd
                } else if latin::is_complete(g) {
                    if latin::verify_latin(*n, g, givens).accepted {
                        StateStatus::Solved
                    } else {
                        StateStatus::DeadEnd
                    }
                } else if latin::solvable(g) {
                    StateStatus::Open
                } else {
                    StateStatus::DeadEnd
                }
            }
            (Instance::KnightsKnaves { statements, .. }, TaskState::Assignment(p)) => {
                if p.iter().all(Option::is_some) {
                    if knights::verify_kk(statements, p).accepted {
                        StateStatus::Solved
                    } else {
                        StateStatus::DeadEnd
                    }
                } else if knights::extendable(statements, p) {
                    StateStatus::Open
                } else {
                    StateStatus::DeadEnd
                }
            }
            (Instance::CreativeWriting { items: raw, .. }, TaskState::Items(items)) => {
                if items.len() == 1 && !raw.contains(&items[0]) {
                    StateStatus::Solved
                } else if items.is_empty() {
                    StateStatus::DeadEnd
                } else {
                    StateStatus::Open
                }
            }
            _ => StateStatus::DeadEnd,
        }
    }

    /// Fraction of the work done, in `[0, 1]`.
    pub fn progress(&self, state: &TaskState) -> f64 {
        match (&self.instance, state) {
            (Instance::GameOf24 { numbers }, TaskState::Numbers(v)) => {
                (numbers.len().saturating_sub(v.len())) as f64 / (numbers.len() - 1) as f64
            }
            (Instance::LatinSquare { n, .. }, TaskState::Grid(g)) => {
                g.iter().filter(|r| !r.contains(&0)).count() as f64 / *n as f64
            }
            (Instance::KnightsKnaves { n_characters, .. }, TaskState::Assignment(p)) => {
                p.iter().filter(|a| a.is_some()).count() as f64 / *n_characters as f64
            }
            (Instance::CreativeWriting { items: raw, .. }, TaskState::Items(items)) => {
                let total = raw.len() as f64;
                let merged = (raw.len() + 1).saturating_sub(items.len()) as f64;
                (merged / total).min(1.0)
            }
            _ => 0.0,
        }
    }

    /// Checks the answer held by `node` against this task. For Game of 24
    /// the whole plan chain from the root is replayed.
    pub fn verify_solution(&self, graph: &ReasoningGraph, node: NodeId) -> Verdict {
        let Ok(path) = graph.path_from_root(node) else {
            return Verdict::reject(format!("unknown node {node}"));
        };
        let Ok(text) = graph.node(node).map(|n| n.text.as_str()) else {
            return Verdict::reject(format!("unknown node {node}"));
        };
        match &self.instance {
            Instance::GameOf24 { numbers } => {
                let lines: Vec<&str> = path[1..]
                    .iter()
                    .filter_map(|&id| graph.node(id).ok())
                    .map(|n| n.text.as_str())
                    .collect();
                game24::verify_24(numbers, &lines)
            }
            Instance::LatinSquare { n, givens } => match self.parse_state(text) {
                Some(TaskState::Grid(g)) => latin::verify_latin(*n, &g, givens),
                _ => Verdict::reject("final thought holds no grid"),
            },
            Instance::KnightsKnaves { statements, .. } => match self.parse_state(text) {
                Some(TaskState::Assignment(a)) => knights::verify_kk(statements, &a),
                _ => Verdict::reject("final thought holds no assignment"),
            },
            Instance::CreativeWriting { variant, items } => match self.parse_state(text) {
                Some(TaskState::Items(out)) if out.len() == 1 => {
                    creative::check_creative(*variant, items, &out[0])
                }
                _ => Verdict::reject("final thought is not a single composed text"),
            },
        }
    }
}

const WORD_FRAMES: [&str; 4] = [
    "The {} caught everyone's attention at the market.",
    "Nobody expected the {} to matter so much that evening.",
    "She kept thinking about the {} long after sunset.",
    "A story about the {} spread quickly through town.",
];

const SENTENCE_TAILS: [&str; 3] = [
    "It set the tone for everything that followed.",
    "Nobody who was there would forget it.",
    "The moment stayed with them for years.",
];

fn frame_index(s: &str, modulus: usize) -> usize {
    s.bytes().map(usize::from).sum::<usize>() % modulus
}

fn expand_item(variant: CreativeVariant, raw: &[String], item: &str) -> String {
    if !raw.iter().any(|r| r == item) {
        return item.to_string();
    }
    match variant {
        CreativeVariant::Words => {
            WORD_FRAMES[frame_index(item, WORD_FRAMES.len())].replace("{}", &item.to_lowercase())
        }
        CreativeVariant::Sentences => format!(
            "{} {}",
            item.trim(),
            SENTENCE_TAILS[frame_index(item, SENTENCE_TAILS.len())]
        ),
    }
}

fn creative_successors(variant: CreativeVariant, raw: &[String], items: &[String]) -> Vec<Successor> {
    let sep = match variant {
        CreativeVariant::Words => " ",
        CreativeVariant::Sentences => "\n\n",
    };
    if items.len() == 1 {
        if !raw.contains(&items[0]) {
            return Vec::new();
        }
        return vec![Successor {
            plan: "expand element 0".into(),
            state: TaskState::Items(vec![expand_item(variant, raw, &items[0])]),
        }];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        for j in 0..items.len() {
            if i == j {
                continue;
            }
            let merged = format!(
                "{}{sep}{}",
                expand_item(variant, raw, &items[i]),
                expand_item(variant, raw, &items[j])
            );
            let mut next = vec![merged];
            next.extend(
                items
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != i && k != j)
                    .map(|(_, s)| s.clone()),
            );
            out.push(Successor {
                plan: format!("choose element {i} and element {j}"),
                state: TaskState::Items(next),
            });
        }
    }
    out
}

/// List of instance files for batch runs; paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub instances: Vec<PathBuf>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<(Self, Vec<TaskSpec>), TaskError> {
        let text = std::fs::read_to_string(path).map_err(|source| TaskError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|source| TaskError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let tasks = manifest
            .instances
            .iter()
            .map(|p| TaskSpec::load(&base.join(p)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((manifest, tasks))
    }
}

// --- seeded instance generators ---

pub fn generate_24<R: Rng>(rng: &mut R, count: usize) -> Vec<Instance> {
    let mut out: Vec<Instance> = Vec::with_capacity(count);
    while out.len() < count {
        let mut numbers: Vec<i64> = (0..4).map(|_| rng.random_range(1..=13)).collect();
        numbers.sort_unstable();
        let inst = Instance::GameOf24 { numbers: numbers.clone() };
        if game24::solve_24(&numbers).is_some() && !out.contains(&inst) {
            out.push(inst);
        }
    }
    out
}

pub fn generate_latin<R: Rng>(rng: &mut R, n: usize, givens: usize, count: usize) -> Vec<Instance> {
    (0..count)
        .map(|_| {
            let mut rows: Vec<usize> = (0..n).collect();
            let mut cols: Vec<usize> = (0..n).collect();
            let mut symbols: Vec<u8> = (1..=n as u8).collect();
            rows.shuffle(rng);
            cols.shuffle(rng);
            symbols.shuffle(rng);
            let mut cells: Vec<(usize, usize)> = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).collect();
            cells.shuffle(rng);
            let givens = cells
                .into_iter()
                .take(givens.min(n * n))
                .map(|(r, c)| Given {
                    row: r,
                    col: c,
                    value: symbols[(rows[r] + cols[c]) % n],
                })
                .collect();
            Instance::LatinSquare { n, givens }
        })
        .collect()
}

fn random_atom<R: Rng>(rng: &mut R, n: usize) -> Claim {
    let i = rng.random_range(0..n);
    if rng.random_bool(0.5) {
        Claim::IsKnight(i)
    } else {
        Claim::IsKnave(i)
    }
}

fn random_claim<R: Rng>(rng: &mut R, n: usize) -> Claim {
    let a = Box::new(random_atom(rng, n));
    match rng.random_range(0..5) {
        0 => *a,
        1 => Claim::And(a, Box::new(random_atom(rng, n))),
        2 => Claim::Or(a, Box::new(random_atom(rng, n))),
        3 => Claim::Implies(a, Box::new(random_atom(rng, n))),
        _ => Claim::Not(Box::new(Claim::Or(a, Box::new(random_atom(rng, n))))),
    }
}

/// Puzzles with exactly one consistent assignment; every character speaks once.
pub fn generate_kk<R: Rng>(rng: &mut R, n: usize, count: usize) -> Vec<Instance> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let statements: Vec<Statement> = (0..n)
            .map(|speaker| {
                let mut claim = random_claim(rng, n);
                if claim.eval(&truth) != truth[speaker] {
                    claim = Claim::Not(Box::new(claim));
                }
                Statement { speaker, claim }
            })
            .collect();
        if knights::solve_kk(&statements, n).len() == 1 {
            out.push(Instance::KnightsKnaves {
                n_characters: n,
                statements,
            });
        }
    }
    out
}

const WORD_POOL: [&str; 24] = [
    "Elephant", "Solar", "Lantern", "Velvet", "Harbor", "Comet", "Maple", "Violin", "Glacier",
    "Compass", "Orchid", "Thunder", "Meadow", "Copper", "Falcon", "Ribbon", "Canyon", "Pepper",
    "Marble", "Island", "Feather", "Engine", "Saffron", "Whistle",
];

pub fn generate_creative<R: Rng>(rng: &mut R, words: usize, count: usize) -> Vec<Instance> {
    (0..count)
        .map(|_| {
            let items = WORD_POOL
                .choose_multiple(rng, words.clamp(1, WORD_POOL.len()))
                .map(|w| w.to_string())
                .collect();
            Instance::CreativeWriting {
                variant: CreativeVariant::Words,
                items,
            }
        })
        .collect()
}
