//! Random graph construction and an op-sequence fuzzer with its own
//! invariant checks (independent of `ReasoningGraph::validate`).

use std::collections::{BTreeSet, VecDeque};

use l2t::graph::{Label, MembershipEffect, NodeId, ReasoningGraph};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random tree of `n` nodes grown through the public API.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> ReasoningGraph {
    let mut g = ReasoningGraph::new("random task").unwrap();
    while g.len() < n {
        let present: Vec<NodeId> = g.present().to_vec();
        let v = *present.choose(rng).unwrap();
        g.apply_label(v, Label::Continue).unwrap();
        let k = rng.random_range(1..=3).min(n - g.len());
        let texts: Vec<String> = (0..k).map(|i| format!("n{}-{i}", g.len())).collect();
        g.add_children(v, &texts).unwrap();
    }
    g
}

pub fn check_invariants(g: &ReasoningGraph) -> Result<(), String> {
    g.validate().map_err(|e| e.to_string())?;
    let n = g.len();
    let present: BTreeSet<NodeId> = g.present().iter().copied().collect();
    if present.len() != g.present().len() {
        return Err("duplicate present entry".into());
    }
    let all: BTreeSet<NodeId> = (0..n as u32).map(NodeId).collect();
    let union: BTreeSet<NodeId> = present.union(g.history()).copied().collect();
    if union != all || present.intersection(g.history()).next().is_some() {
        return Err("present/history is not a partition".into());
    }
    if g.edges().len() + 1 != n {
        return Err(format!("{} edges for {n} nodes", g.edges().len()));
    }
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut q = VecDeque::from([0usize]);
    while let Some(u) = q.pop_front() {
        for &(a, b) in g.edges() {
            if a.index() == u && !seen[b.index()] {
                seen[b.index()] = true;
                q.push_back(b.index());
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err("node unreachable from root".into());
    }
    for id in g.history() {
        if g.node(*id).unwrap().label.is_none() {
            return Err(format!("retired node {id} has no label"));
        }
    }
    Ok(())
}

/// Applies `ops` random legal operations, restarting whenever a final
/// answer locks the episode, and checks every invariant after each one.
/// Returns the number of backtracks exercised.
pub fn fuzz_ops(seed: u64, ops: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = ReasoningGraph::new("fuzz").unwrap();
    let mut backtracks = 0;
    for op in 0..ops {
        let open: Vec<NodeId> = g
            .present()
            .iter()
            .copied()
            .filter(|&v| g.node(v).unwrap().label != Some(Label::Final))
            .collect();
        let stopped: Vec<NodeId> = g
            .history()
            .iter()
            .copied()
            .filter(|&v| v != g.root() && g.node(v).unwrap().label == Some(Label::Stop))
            .collect();
        if open.is_empty() && stopped.is_empty() || g.len() > 200 {
            g = ReasoningGraph::new("fuzz").unwrap();
            continue;
        }
        let choice = rng.random_range(0..10);
        if choice == 0 && !stopped.is_empty() || open.is_empty() {
            let v = *stopped.choose(&mut rng).unwrap();
            g.regenerate(v, format!("re{op}")).map_err(|e| e.to_string())?;
            if !g.is_present(v) || g.node(v).unwrap().label.is_some() {
                return Err("regenerated node not back in present".into());
            }
        } else {
            let v = *open.choose(&mut rng).unwrap();
            let label = g.node(v).unwrap().label;
            if label == Some(Label::Continue) && rng.random_bool(0.7) {
                let k = rng.random_range(1..=5);
                let texts: Vec<String> = (0..k).map(|i| format!("c{op}-{i}")).collect();
                let before = g.len();
                let ids = g.add_children(v, &texts).map_err(|e| e.to_string())?;
                if ids.len() != k || g.len() != before + k || g.is_present(v) {
                    return Err("expansion bookkeeping".into());
                }
            } else {
                let mut pick = [Label::Stop, Label::Continue, Label::Final, Label::Backtrack][rng.random_range(0..4)];
                if pick == Label::Final && rng.random_bool(0.8) {
                    pick = Label::Continue;
                }
                if pick == Label::Backtrack && v == g.root() {
                    pick = Label::Stop;
                }
                let parent = g.node(v).unwrap().parent;
                let parent_was_retired = parent.is_some_and(|p| g.history().contains(&p));
                let effect = g.apply_label(v, pick).map_err(|e| e.to_string())?;
                if pick == Label::Backtrack {
                    backtracks += 1;
                    let p = parent.unwrap();
                    if effect != (MembershipEffect::Backtracked { parent: p }) || !g.is_present(p) || g.is_present(v) {
                        return Err("backtrack did not restore the parent".into());
                    }
                    if parent_was_retired && g.node(p).unwrap().label.is_some() {
                        return Err("restored parent kept its label".into());
                    }
                }
                if pick == Label::Final && g.termination_state() != l2t::graph::Termination::FinalFound(v) {
                    return Err("final not detected".into());
                }
                if pick == Label::Final {
                    check_invariants(&g).map_err(|e| format!("op {op}: {e}"))?;
                    g = ReasoningGraph::new("fuzz").unwrap();
                }
            }
        }
        check_invariants(&g).map_err(|e| format!("op {op}: {e}"))?;
    }
    Ok(backtracks)
}
