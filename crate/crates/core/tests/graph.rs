use hetquery::hetgraph::{build_graph, degree_centrality, load_graph, save_graph, verify, GraphError, HetGraph};
use hetquery_testkit::{graph_parts, random_graph};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #[test]
    fn build_is_permutation_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (mut c, mut m, mut e) = graph_parts(&mut r, 20);
        let g = build_graph(c.clone(), m.clone(), e.clone()).unwrap();
        c.shuffle(&mut r);
        m.shuffle(&mut r);
        e.shuffle(&mut r);
        prop_assert_eq!(build_graph(c, m, e).unwrap(), g);
    }

    #[test]
    fn degree_sum_and_centrality_bounds(seed in any::<u64>()) {
        let g = random_graph(&mut rng(seed), 20);
        prop_assert!(verify(&g).is_ok());
        let total: usize = g.node_ids().iter().map(|id| g.edge_degree(id)).sum();
        prop_assert_eq!(total, 2 * (g.mentions().len() + g.relations().len()));
        for (_, c) in degree_centrality(&g) {
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }
}

#[test]
fn save_load_round_trips_fifty_node_graphs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.jsonl");
    for seed in 0..100 {
        let g = random_graph(&mut rng(seed), 50);
        save_graph(&g, &path).unwrap();
        let back = load_graph(&path).unwrap();
        assert!(verify(&back).is_ok());
        assert_eq!(back, g, "seed {seed}");
    }
    save_graph(&HetGraph::default(), &path).unwrap();
    assert!(load_graph(&path).unwrap().is_empty());
}

#[test]
fn truncated_files_fail_to_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.jsonl");
    let g = random_graph(&mut rng(7), 30);
    save_graph(&g, &path).unwrap();
    let full = std::fs::read(&path).unwrap();
    for cut in [1, full.len() / 3, full.len() / 2, full.len() - 2] {
        std::fs::write(&path, &full[..cut]).unwrap();
        assert!(load_graph(&path).is_err(), "cut at byte {cut}");
    }
    assert!(matches!(load_graph(&dir.path().join("missing.jsonl")), Err(GraphError::Io { .. })));
}
