mod common;

use common::graphs::{fuzz_ops, random_graph};
use l2t::graph::{reverse_bfs_ancestors, NodeId};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn ancestor_subgraph_matches_reverse_bfs(seed in any::<u64>(), n in 1usize..40, beta in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n);
        for v in 0..g.len() as u32 {
            let v = NodeId(v);
            let sub = g.ancestor_subgraph(v, beta).unwrap();
            let mut want = reverse_bfs_ancestors(g.edges(), v, beta);
            // the focus always belongs to its own context
            want.insert(v);
            prop_assert_eq!(&sub.node_ids, &want);
            let edges: std::collections::BTreeSet<_> = g
                .edges()
                .iter()
                .copied()
                .filter(|(a, b)| want.contains(a) && want.contains(b))
                .collect();
            prop_assert_eq!(&sub.edge_ids, &edges);
            let order = sub.ordered_ids(&g);
            prop_assert_eq!(order.last().copied(), Some(v));
        }
    }

    #[test]
    fn legal_op_sequences_keep_invariants(seed in any::<u64>()) {
        prop_assert!(fuzz_ops(seed, 300).is_ok(), "{:?}", fuzz_ops(seed, 300));
    }
}

#[test]
fn fuzzing_exercises_backtracks() {
    assert!(fuzz_ops(1, 2000).unwrap() > 10);
}
