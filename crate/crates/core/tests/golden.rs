mod common;

use l2t::engine::{EpisodeConfig, Outcome};
use l2t::graph::Label;
use l2t::llm::oracle::OracleConfig;
use l2t::tasks::game24;

fn run() -> l2t::engine::EpisodeResult {
    let g = common::golden();
    let task = common::golden_task(&g);
    let cfg = EpisodeConfig {
        max_nodes: 256,
        seed: 7,
        ..EpisodeConfig::default()
    };
    let eng = common::oracle_engine(&task, 7, OracleConfig::default(), Some(common::golden_script(&g, &task)), cfg);
    eng.run(&task, &common::wide_policy(64), 0).unwrap()
}

#[test]
fn recorded_trace_structure_is_reproduced() {
    let g = common::golden();
    let r = run();
    let graph = &r.graph;
    let root = graph.root();
    let kids: Vec<&str> = graph
        .children_of(root)
        .iter()
        .map(|&k| graph.node(k).unwrap().text.as_str())
        .collect();
    assert_eq!(kids, g.root_children.iter().map(String::as_str).collect::<Vec<_>>());
    for node in graph.nodes() {
        let state = node.text.rsplit("Output:").next().unwrap_or("");
        if g.dead_ends.iter().any(|d| d == state) && g.classify.contains_key(&node.text) {
            assert_eq!(node.label, Some(Label::Stop), "{}", node.text);
        }
    }
    assert_eq!(r.outcome, Outcome::Solved);
    assert_eq!(r.final_text.as_deref(), Some(g.final_text.as_str()));
    assert!(r.verdict.as_ref().unwrap().accepted);
    let path = graph.path_from_root(r.final_node.unwrap()).unwrap();
    let lines: Vec<&str> = path[1..].iter().map(|&id| graph.node(id).unwrap().text.as_str()).collect();
    assert!(game24::verify_24(&g.numbers, &lines).accepted);
}

#[test]
fn replay_is_bitwise_identical() {
    let a = run();
    let b = run();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
