use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RequestKind;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindUsage {
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl KindUsage {
    fn add(&mut self, other: &KindUsage) {
        self.requests += other.requests;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

/// Cumulative token and access counts, split by request kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub by_kind: BTreeMap<RequestKind, KindUsage>,
    pub total: KindUsage,
}

impl UsageLedger {
    pub fn record(&mut self, kind: RequestKind, prompt_tokens: u64, completion_tokens: u64) {
        let one = KindUsage {
            requests: 1,
            prompt_tokens,
            completion_tokens,
        };
        self.by_kind.entry(kind).or_default().add(&one);
        self.total.add(&one);
    }

    pub fn kind(&self, kind: RequestKind) -> KindUsage {
        self.by_kind.get(&kind).copied().unwrap_or_default()
    }

    pub fn sum_over_kinds(&self) -> KindUsage {
        let mut s = KindUsage::default();
        for u in self.by_kind.values() {
            s.add(u);
        }
        s
    }

    pub fn is_consistent(&self) -> bool {
        self.sum_over_kinds() == self.total
    }

    pub fn merge(&mut self, other: &UsageLedger) {
        for (k, u) in &other.by_kind {
            self.by_kind.entry(*k).or_default().add(u);
        }
        self.total.add(&other.total);
    }

    /// Prompt and completion tokens of generation calls per generated thought.
    pub fn per_thought(&self, thoughts: u64) -> (f64, f64) {
        if thoughts == 0 {
            return (0.0, 0.0);
        }
        let g = self.kind(RequestKind::Generate);
        (
            g.prompt_tokens as f64 / thoughts as f64,
            g.completion_tokens as f64 / thoughts as f64,
        )
    }
}
