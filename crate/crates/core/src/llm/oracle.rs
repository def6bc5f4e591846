//! Scripted stand-in for a real model. It reads the focus thought out of
//! each prompt, works out the task state with the exact solvers, and answers
//! the way a competent model would. Replies depend only on
//! `(seed, kind, prompt, temperature, top_p)`.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{whitespace_tokens, LlmBackend, LlmError, LlmRequest, LlmResponse, RequestKind};
use crate::prompts::parse_tau;
use crate::tasks::{self, Family, StateStatus, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Chance that a Stop/Continue answer is flipped to the other one.
    pub error_rate: f64,
    /// Chance that a dead end under a still-solvable parent is answered
    /// with Backtrack instead of Stop.
    pub backtrack_rate: f64,
    /// How strongly generation prefers useful steps over sampling noise.
    pub skill: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            error_rate: 0.0,
            backtrack_rate: 0.0,
            skill: 10.0,
        }
    }
}

/// Fixed answers keyed by exact thought text; anything unscripted falls back
/// to the solver-driven behaviour.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleScript {
    pub generate: BTreeMap<String, Vec<String>>,
    pub classify: BTreeMap<String, u8>,
}

pub struct OracleBackend {
    task: TaskSpec,
    seed: u64,
    cfg: OracleConfig,
    script: OracleScript,
}

impl OracleBackend {
    pub fn new(task: TaskSpec, seed: u64, cfg: OracleConfig) -> Self {
        Self {
            task,
            seed,
            cfg,
            script: OracleScript::default(),
        }
    }

    pub fn with_script(mut self, script: OracleScript) -> Self {
        self.script = script;
        self
    }

    fn rng_for(&self, req: &LlmRequest) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update([req.kind as u8]);
        h.update(req.temperature.to_bits().to_le_bytes());
        h.update(req.top_p.to_bits().to_le_bytes());
        h.update(req.prompt.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn classify(&self, prompt: &str, rng: &mut ChaCha8Rng) -> String {
        let Some(texts) = parse_tau(prompt) else { return "1".into() };
        let focus = texts.last().expect("tau has at least one group");
        if let Some(l) = self.script.classify.get(focus) {
            return l.to_string();
        }
        let Some(state) = self.task.parse_state(focus) else { return "1".into() };
        let label = match self.task.status(&state) {
            StateStatus::Solved => 3,
            StateStatus::Open => 2,
            StateStatus::DeadEnd => {
                let parent_open = texts.len() >= 2
                    && self
                        .task
                        .parse_state(&texts[texts.len() - 2])
                        .is_some_and(|p| self.task.status(&p) == StateStatus::Open);
                if parent_open && rng.random::<f64>() < self.cfg.backtrack_rate {
                    4
                } else {
                    1
                }
            }
        };
        let label = match label {
            1 | 2 if rng.random::<f64>() < self.cfg.error_rate => 3 - label,
            l => l,
        };
        label.to_string()
    }

    fn evaluate(&self, prompt: &str) -> String {
        let lead = format!("{}, ", self.task.description);
        let thought = prompt
            .find(&lead)
            .map(|i| &prompt[i + lead.len()..])
            .and_then(|rest| rest.find(" is a step in solving the task").map(|j| &rest[..j]));
        let Some(state) = thought.and_then(|t| self.task.parse_state(t)) else {
            return "0".into();
        };
        let score = match self.task.status(&state) {
            StateStatus::Solved => 10,
            StateStatus::Open => 5 + (4.0 * self.task.progress(&state)).round() as u8,
            StateStatus::DeadEnd => 1,
        };
        score.min(10).to_string()
    }

    fn generate(&self, req: &LlmRequest, rng: &mut ChaCha8Rng) -> String {
        static COUNT: OnceLock<Regex> = OnceLock::new();
        let n: usize = COUNT
            .get_or_init(|| Regex::new(r"Generate ([0-9]+) different thoughts").expect("static regex"))
            .captures(&req.prompt)
            .and_then(|c| c[1].parse().ok())
            .unwrap_or(1)
            .max(1);
        let Some(focus) = parse_tau(&req.prompt).and_then(|mut t| t.pop()) else {
            return "No further step can be taken from here.".into();
        };
        let thoughts: Vec<String> = if let Some(s) = self.script.generate.get(&focus) {
            s.iter().take(n).cloned().collect()
        } else {
            let Some(state) = self.task.parse_state(&focus) else {
                return "No further step can be taken from here.".into();
            };
            let succ = self.task.successors(&state);
            if succ.is_empty() {
                return "No further step can be taken from here.".into();
            }
            let mut keyed: Vec<(f64, usize)> = succ
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let good = f64::from(u8::from(self.task.status(&s.state) != StateStatus::DeadEnd));
                    let u: f64 = rng.random_range(f64::EPSILON..1.0);
                    let gumbel = -(-u.ln()).ln();
                    (good * self.cfg.skill + req.temperature * gumbel, i)
                })
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let keep = ((req.top_p * keyed.len() as f64).ceil() as usize).max(1);
            keyed
                .iter()
                .take(keep.min(n))
                .map(|&(_, i)| self.task.render_thought(&state, &succ[i]))
                .collect()
        };
        if thoughts.is_empty() {
            return "No further step can be taken from here.".into();
        }
        thoughts
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{}. {t}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn format_info(&self) -> String {
        let family = self.task.family();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let samples = match family {
            Family::GameOf24 => tasks::generate_24(&mut rng, 3),
            Family::LatinSquare => tasks::generate_latin(&mut rng, 3, 2, 3),
            Family::KnightsKnaves => tasks::generate_kk(&mut rng, 2, 3),
            Family::CreativeWriting => tasks::generate_creative(&mut rng, 3, 3),
        };
        let step = match family {
            Family::GameOf24 => "pick two of the remaining numbers, combine them with one of + - * /, and replace them by the result",
            Family::LatinSquare => "fill the first incomplete row with numbers that clash with no column",
            Family::KnightsKnaves => "decide whether one undecided character is a Knight or a Knave",
            Family::CreativeWriting => "merge two items into one passage, expanding any bare item first",
        };
        let mut out = format!(
            "Step format: Input:<current state> Plan:<one step> Output:<state after the step>. In each step, {step}. Stop once the state is the finished answer.\n"
        );
        for (k, inst) in samples.into_iter().enumerate() {
            let spec = TaskSpec::new(inst).expect("generated sample is valid");
            out.push_str(&format!("Example {}:\n", k + 1));
            for line in example_chain(&spec) {
                out.push_str(&line);
                out.push('\n');
            }
        }
        out
    }

    fn eval_info(&self) -> &'static str {
        match self.task.family() {
            Family::GameOf24 => "A step is useful when the numbers it leaves can still be combined into 24. It scores highest when it produces 24 and lowest when 24 is out of reach.",
            Family::LatinSquare => "A step is useful when no row or column repeats a number and the empty cells can still be completed.",
            Family::KnightsKnaves => "A step is useful when the identities decided so far agree with every statement that can already be checked.",
            Family::CreativeWriting => "A step is useful when every required item is kept and the merged text reads as one passage.",
        }
    }
}

/// Thoughts of one complete solution, following the first non-dead successor.
fn example_chain(spec: &TaskSpec) -> Vec<String> {
    let mut state = spec.initial_state();
    let mut lines = Vec::new();
    while spec.status(&state) == StateStatus::Open {
        let Some(next) = spec
            .successors(&state)
            .into_iter()
            .find(|s| spec.status(&s.state) != StateStatus::DeadEnd)
        else {
            break;
        };
        lines.push(spec.render_thought(&state, &next));
        state = next.state;
    }
    lines
}

impl LlmBackend for OracleBackend {
    fn call(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let mut rng = self.rng_for(req);
        let text = match req.kind {
            RequestKind::Format => self.format_info(),
            RequestKind::EvalInfo => self.eval_info().to_string(),
            RequestKind::Classify => self.classify(&req.prompt, &mut rng),
            RequestKind::Evaluate => self.evaluate(&req.prompt),
            RequestKind::Generate => self.generate(req, &mut rng),
        };
        Ok(LlmResponse {
            prompt_tokens: whitespace_tokens(&req.prompt),
            completion_tokens: whitespace_tokens(&text),
            text,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{parse_label, parse_score, parse_thoughts, tau_texts, Templates};
    use crate::tasks::Instance;

    fn task24() -> TaskSpec {
        TaskSpec::new(Instance::GameOf24 { numbers: vec![10, 9, 2, 3] }).unwrap()
    }

    fn classify(o: &OracleBackend, texts: &[&str]) -> u8 {
        let t = Templates::builtin();
        let prompt = t.render_node_class(&o.task.description, &tau_texts(texts, &[])).unwrap();
        let r = o.call(&LlmRequest::new(RequestKind::Classify, prompt, 0.05, 1.0)).unwrap();
        parse_label(&r.text).unwrap().label
    }

    #[test]
    fn dead_end_is_stopped_and_solution_completes() {
        let o = OracleBackend::new(task24(), 1, OracleConfig::default());
        let d = o.task.description.clone();
        assert_eq!(classify(&o, &[&d, "Input:[9,3,12] Plan:12 - 9 = 3 Output:[3,3]"]), 1);
        assert_eq!(classify(&o, &["Input:[12,12] Plan:12 + 12 = 24 Output:[24]"]), 3);
        assert_eq!(classify(&o, &[&d, "Input:[10,9,2,3] Plan:10 + 2 = 12 Output:[9,3,12]"]), 2);
        assert_eq!(classify(&o, &[&d]), 2);
        assert_eq!(classify(&o, &["garbage"]), 1);
    }

    #[test]
    fn backtrack_injection() {
        let cfg = OracleConfig {
            backtrack_rate: 1.0,
            ..OracleConfig::default()
        };
        let o = OracleBackend::new(task24(), 1, cfg);
        let parent = "Input:[10,9,2,3] Plan:10 + 2 = 12 Output:[9,3,12]";
        assert_eq!(classify(&o, &[parent, "Input:[9,3,12] Plan:12 - 9 = 3 Output:[3,3]"]), 4);
        // no open parent in view: plain stop
        assert_eq!(classify(&o, &["Input:[9,3,12] Plan:12 - 9 = 3 Output:[3,3]"]), 1);
    }

    #[test]
    fn generation_prefers_useful_steps() {
        let o = OracleBackend::new(task24(), 4, OracleConfig::default());
        let t = Templates::builtin();
        let d = o.task.description.clone();
        let prompt = t.render_generate(&d, &tau_texts(&[&d], &[]), "F", 3, false).unwrap();
        let r = o.call(&LlmRequest::new(RequestKind::Generate, prompt, 0.7, 1.0)).unwrap();
        let thoughts = parse_thoughts(&r.text, 3).unwrap();
        assert_eq!(thoughts.len(), 3);
        for th in &thoughts {
            let s = o.task.parse_state(th).unwrap();
            assert_eq!(o.task.status(&s), StateStatus::Open, "{th}");
            assert!(th.starts_with("Input:[10,9,2,3] Plan:"));
        }
    }

    #[test]
    fn small_top_p_narrows_the_pool() {
        let o = OracleBackend::new(task24(), 4, OracleConfig::default());
        let t = Templates::builtin();
        let d = o.task.description.clone();
        let prompt = t.render_generate(&d, &tau_texts(&[&d], &[]), "F", 5, false).unwrap();
        let r = o.call(&LlmRequest::new(RequestKind::Generate, prompt, 1.0, 0.01)).unwrap();
        assert_eq!(parse_thoughts(&r.text, 5).unwrap().len(), 1);
    }

    #[test]
    fn evaluation_scores_are_in_range() {
        let o = OracleBackend::new(task24(), 1, OracleConfig::default());
        let t = Templates::builtin();
        let d = o.task.description.clone();
        for (thought, want) in [
            ("Input:[12,12] Plan:12 + 12 = 24 Output:[24]", 10),
            ("Input:[9,3,12] Plan:12 - 9 = 3 Output:[3,3]", 1),
            ("Input:[10,9,2,3] Plan:10 + 2 = 12 Output:[9,3,12]", 6),
            ("banana", 0),
        ] {
            let prompt = t.render_evaluate(&d, thought, "E").unwrap();
            let r = o.call(&LlmRequest::new(RequestKind::Evaluate, prompt, 0.05, 1.0)).unwrap();
            assert_eq!(parse_score(&r.text).unwrap(), want, "{thought}");
        }
    }

    #[test]
    fn format_reply_has_schema_and_three_examples() {
        for inst in [
            Instance::GameOf24 { numbers: vec![10, 9, 2, 3] },
            Instance::LatinSquare { n: 3, givens: vec![] },
            Instance::KnightsKnaves { n_characters: 2, statements: vec![] },
            Instance::CreativeWriting {
                variant: tasks::creative::CreativeVariant::Words,
                items: vec!["Apple".into()],
            },
        ] {
            let o = OracleBackend::new(TaskSpec::new(inst).unwrap(), 0, OracleConfig::default());
            let f = o.format_info();
            assert!(f.contains("Input:") && f.contains("Plan:") && f.contains("Output:"));
            assert!(f.contains("Example 3:"));
            assert!(!o.eval_info().is_empty());
        }
    }

    #[test]
    fn replies_are_deterministic() {
        let a = OracleBackend::new(task24(), 9, OracleConfig::default());
        let b = OracleBackend::new(task24(), 9, OracleConfig::default());
        let t = Templates::builtin();
        let d = a.task.description.clone();
        let prompt = t.render_generate(&d, &tau_texts(&[&d], &[]), "F", 5, true).unwrap();
        let req = LlmRequest::new(RequestKind::Generate, prompt, 1.3, 0.9);
        assert_eq!(a.call(&req).unwrap(), b.call(&req).unwrap());
    }
}
