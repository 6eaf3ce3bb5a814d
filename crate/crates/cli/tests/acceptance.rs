//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use hetquery::entropy::{
    cluster_answers, entropy_of_sizes, report_from_samples, AnswerSample, EquivalenceOracle, ReviewFlag,
};
use hetquery::extraction::{generate_table, validate_plan, SchemaHint};
use hetquery::gateway::BackendKind;
use hetquery::hetgraph::{build_graph, load_graph, save_graph, verify, HetGraph};
use hetquery::pipeline::{self, Index};
use hetquery::relexec::{execute, oracle_execute};
use hetquery::retrieval::{bfs_expand, score_nodes, ScoreWeights};
use hetquery::text::normalize_answer;
use hetquery::{CliConfig, Gateway, Value};
use hetquery_testkit::{corrupt_plan, graph_parts, random_graph, random_plan, random_tables};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn executor_matches_oracle() -> Outcome {
    let start = Instant::now();
    let (mut cells, mut nulls) = (0usize, 0usize);
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = random_tables(&mut rng);
        for t in tables.tables.values() {
            ensure(t.rows.len() <= 8 && t.schema.columns.len() <= 4, || {
                format!("seed {seed}: table {} too large", t.schema.name)
            })?;
            for row in &t.rows {
                cells += row.len();
                nulls += row.iter().filter(|v| **v == Value::Null).count();
            }
        }
        let plan = random_plan(&mut rng, &tables.catalog());
        let v = validate_plan(&plan, &tables.catalog()).map_err(|e| format!("seed {seed}: {plan} rejected: {e:?}"))?;
        let fast = execute(&v, &tables).map_err(|e| format!("seed {seed}: {e}"))?;
        let slow = oracle_execute(&v, &tables).map_err(|e| format!("seed {seed}: oracle {e}"))?;
        ensure(fast.schema == slow.schema && fast.canonical_rows() == slow.canonical_rows(), || {
            format!("seed {seed}: {plan} disagrees with the oracle")
        })?;
    }
    let elapsed = start.elapsed();
    let null_share = nulls as f64 / cells.max(1) as f64;
    ensure(null_share >= 0.2, || format!("null share {null_share:.3} below 0.2"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("1000/1000 agree, null share {null_share:.3}, {elapsed:.2?}"))
}

fn natural_entropy(texts: &[String]) -> f64 {
    let mut counts: HashMap<String, f64> = HashMap::new();
    for t in texts {
        *counts.entry(normalize_answer(t)).or_default() += 1.0;
    }
    let n = texts.len() as f64;
    counts.values().map(|c| -(c / n) * (c / n).ln()).sum::<f64>() / std::f64::consts::LN_2
}

fn entropy_suite() -> Outcome {
    let gw = Gateway::mock();
    let exact = EquivalenceOracle::ExactNormalized;
    for n in 1..=10 {
        ensure(entropy_of_sizes([n]) == 0.0, || format!("unanimous {n} is not 0"))?;
    }
    for k in 1..=10usize {
        for size in 1..=4 {
            let h = entropy_of_sizes(vec![size; k]);
            ensure((h - (k as f64).log2()).abs() < 1e-9, || format!("{k} clusters of {size}: {h}"))?;
        }
    }
    let h = entropy_of_sizes([3, 1, 1]);
    ensure((h - 1.370951).abs() < 1e-6, || format!("3,1,1 gave {h}"))?;

    const WORDS: &[&str] = &["Yes", "yes.", " YES ", "No", "no!", "Maybe", "It depends", "it  depends"];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..300 {
        let texts: Vec<String> =
            (0..rng.gen_range(2..12)).map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string()).collect();
        let mut shuffled = texts.clone();
        shuffled.shuffle(&mut rng);
        let threshold = rng.gen_range(0.0..3.0);
        let a = report_from_samples("q", &AnswerSample::numbered(texts.clone()), &exact, &gw, threshold)
            .map_err(|e| e.to_string())?;
        let b = report_from_samples("q", &AnswerSample::numbered(shuffled), &exact, &gw, threshold)
            .map_err(|e| e.to_string())?;
        let sizes = |r: &hetquery::entropy::EntropyReport| {
            let mut s: Vec<usize> = r.clusters.iter().map(|c| c.members.len()).collect();
            s.sort_unstable();
            s
        };
        ensure(sizes(&a) == sizes(&b) && a.entropy_bits == b.entropy_bits, || {
            format!("case {case}: order changed the result")
        })?;
        ensure((a.entropy_bits - natural_entropy(&texts)).abs() < 1e-9, || {
            format!("case {case}: entropy {}", a.entropy_bits)
        })?;
        ensure((a.flag == ReviewFlag::Review) == (a.entropy_bits > threshold), || {
            format!("case {case}: flag mismatch")
        })?;
        let relabeled: Vec<String> = texts.iter().map(|t| format!("label {}", normalize_answer(t).len())).collect();
        let c = cluster_answers(&AnswerSample::numbered(relabeled), &exact, &gw).map_err(|e| e.to_string())?;
        let lens: BTreeSet<usize> = texts.iter().map(|t| normalize_answer(t).len()).collect();
        ensure(c.len() == lens.len(), || format!("case {case}: relabeling"))?;
    }
    Ok("unanimity, log2 k, 3/1/1, 300 permutation and flag cases".into())
}

fn all_pairs(graph: &HetGraph) -> BTreeMap<(String, String), usize> {
    let ids = graph.node_ids();
    let n = ids.len();
    let pos: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    const INF: usize = usize::MAX / 4;
    let mut d = vec![vec![INF; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    let edges = graph
        .mentions()
        .iter()
        .map(|m| (m.chunk_id.as_str(), m.entity_id.as_str()))
        .chain(graph.relations().iter().map(|r| (r.src_entity.as_str(), r.dst_entity.as_str())));
    for (a, b) in edges {
        d[pos[a]][pos[b]] = 1;
        d[pos[b]][pos[a]] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
            }
        }
    }
    let mut out = BTreeMap::new();
    for i in 0..n {
        for j in 0..n {
            if d[i][j] < INF {
                out.insert((ids[i].clone(), ids[j].clone()), d[i][j]);
            }
        }
    }
    out
}

fn retrieval_soundness() -> Outcome {
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = random_graph(&mut rng, 20);
        ensure(graph.node_count() <= 20, || format!("seed {seed}: too many nodes"))?;
        let ids = graph.node_ids();
        let anchors: Vec<String> = (0..rng.gen_range(1..=3))
            .map(|_| ids[rng.gen_range(0..ids.len())].clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let dist = all_pairs(&graph);
        let nearest = |id: &str| anchors.iter().filter_map(|a| dist.get(&(a.clone(), id.to_string()))).min().copied();
        let mut previous = BTreeSet::new();
        for hop_limit in 0..5 {
            let budget = rng.gen_range(anchors.len()..=20);
            for (id, hops) in bfs_expand(&graph, &anchors, hop_limit, budget).map_err(|e| e.to_string())? {
                ensure(nearest(&id) == Some(hops) && hops <= hop_limit, || format!("seed {seed}: {id} at {hops}"))?;
            }
            let unlimited: BTreeSet<String> = bfs_expand(&graph, &anchors, hop_limit, usize::MAX)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|(id, _)| id)
                .collect();
            ensure(previous.is_subset(&unlimited), || format!("seed {seed}: hop limit {hop_limit} shrank the set"))?;
            previous = unlimited;
        }
        let expanded = bfs_expand(&graph, &anchors, 2, 64).map_err(|e| e.to_string())?;
        let runs: Vec<String> = (0..5)
            .map(|_| {
                serde_json::to_string(&score_nodes(&expanded, &graph, &anchors, &ScoreWeights::default())).unwrap()
            })
            .collect();
        ensure(runs.windows(2).all(|w| w[0] == w[1]), || format!("seed {seed}: ranking varies"))?;
    }
    Ok("200 graphs hop-sound, monotone, deterministic".into())
}

fn graph_persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("g.jsonl");
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, m, e) = graph_parts(&mut rng, 50);
        let g = build_graph(c, m, e).map_err(|e| format!("seed {seed}: {e}"))?;
        verify(&g).map_err(|e| format!("seed {seed}: built graph {e:?}"))?;
        save_graph(&g, &path).map_err(|e| e.to_string())?;
        let back = load_graph(&path).map_err(|e| format!("seed {seed}: {e}"))?;
        verify(&back).map_err(|e| format!("seed {seed}: loaded graph {e:?}"))?;
        ensure(back == g, || format!("seed {seed}: round trip changed the graph"))?;
    }
    let g = random_graph(&mut ChaCha8Rng::seed_from_u64(7), 30);
    save_graph(&g, &path).map_err(|e| e.to_string())?;
    let full = std::fs::read(&path).map_err(|e| e.to_string())?;
    for cut in [1, full.len() / 3, full.len() / 2, full.len() - 2] {
        std::fs::write(&path, &full[..cut]).map_err(|e| e.to_string())?;
        ensure(load_graph(&path).is_err(), || format!("truncation at {cut} loaded"))?;
    }
    Ok("100 round trips, truncation rejected".into())
}

/// Q3 total computed straight from the demo sales file.
fn q3_sales_total() -> f64 {
    let text = std::fs::read_to_string(demo_corpus().join("tables/sales.json")).unwrap();
    let rows: Vec<serde_json::Value> = serde_json::from_str(&text).unwrap();
    rows.iter().filter(|r| r["quarter"] == "Q3").map(|r| r["sales"].as_f64().unwrap()).sum()
}

fn vignettes() -> Outcome {
    let start = Instant::now();
    let cfg = CliConfig::default();
    let gw = Gateway::mock();
    ensure(gw.kind() == BackendKind::Mock, || "gateway is not the mock".into())?;
    let (index, _): (Index, _) = pipeline::build_index(&demo_corpus(), &cfg, &gw).map_err(|e| e.to_string())?;

    let q2: Vec<_> = index.graph.chunks().filter(|c| c.text.contains("Q2 sales increased 20%")).cloned().collect();
    ensure(!q2.is_empty(), || "no chunk states the Q2 increase".into())?;
    let ex = generate_table(&q2, &SchemaHint::default(), &gw).map_err(|e| e.to_string())?;
    let want = vec![Value::Text("Q2".into()), Value::Text("Sales".into()), Value::Number(20.0)];
    ensure(ex.table.rows.contains(&want), || format!("(a) rows {:?}", ex.table.rows))?;

    let t = pipeline::answer_table(Q3_TOTAL, &index, &cfg, &gw).map_err(|e| format!("(b) {e}"))?;
    let plan = t.plan.to_string();
    let expected_plan =
        "Aggregate(group=[], aggs=[SUM(sales) AS sum_sales], input=Filter(pred=(quarter = \"Q3\"), input=Scan(sales)))";
    ensure(plan == expected_plan, || format!("(b) plan {plan}"))?;
    let total = q3_sales_total();
    ensure(t.result.rows == vec![vec![Value::Number(total)]], || {
        format!("(b) rows {:?}, want {total}", t.result.rows)
    })?;

    let g = pipeline::answer_graph(PRODUCTS_AB, &index, &cfg, &gw).map_err(|e| format!("(c) {e}"))?;
    let chunks = &g.retrieval.bundle.chunks;
    for product in ["Product A", "Product B"] {
        ensure(chunks.iter().any(|c| c.text.contains(product)), || format!("(c) no chunk for {product}"))?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (graph, idx) = index_demo(dir.path());
    ensure(code(&idx) == 0, || format!("(d) index failed: {}", stderr(&idx)))?;
    let o = run(&["ask", LEGAL, "--graph", graph.to_str().unwrap()]);
    ensure(code(&o) == 4, || format!("(d) exit {}", code(&o)))?;
    ensure(stdout(&o).contains("entropy: 1.521928 bits"), || format!("(d) {}", stdout(&o)))?;

    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("Q2 row, Q3 total {total}, both products, 1.521928 bits exit 4, {elapsed:.2?}"))
}

fn validator_soundness() -> Outcome {
    let (mut accepted, mut rejected) = (0, 0);
    for seed in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let tables = random_tables(&mut rng);
        let catalog = tables.catalog();
        let plan = random_plan(&mut rng, &catalog);
        let plan = if rng.gen_bool(0.5) { corrupt_plan(&mut rng, &plan, &catalog).0 } else { plan };
        match validate_plan(&plan, &catalog) {
            Ok(v) => {
                accepted += 1;
                execute(&v, &tables).map_err(|e| format!("seed {seed}: accepted {plan} faulted: {e}"))?;
            }
            Err(_) => rejected += 1,
        }
    }
    Ok(format!("{accepted} accepted plans ran cleanly, {rejected} rejected"))
}

fn full_run(dir: &Path) -> (Vec<u8>, Vec<u8>, String) {
    let (graph, idx) = index_demo(dir);
    let g = graph.to_str().unwrap();
    let mut out = stdout(&idx).replace(g, "GRAPH");
    for q in [Q3_TOTAL, PRODUCTS_AB, SATISFACTION] {
        out.push_str(&stdout(&run(&["query", q, "--graph", g])));
        out.push_str(&stdout(&run(&["query", q, "--graph", g, "--json"])));
    }
    out.push_str(&stdout(&run(&["ask", LEGAL, "--graph", g])));
    let graph_bytes = std::fs::read(&graph).unwrap_or_default();
    let tables = std::fs::read(pipeline::tables_path(&graph)).unwrap_or_default();
    (graph_bytes, tables, out)
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let first = full_run(a.path());
    let second = full_run(b.path());
    ensure(!first.0.is_empty() && !first.1.is_empty(), || "index wrote nothing".into())?;
    ensure(first.0 == second.0, || "graph files differ".into())?;
    ensure(first.1 == second.1, || "table files differ".into())?;
    ensure(first.2 == second.2, || "stdout differs".into())?;
    Ok(format!(
        "graph {} bytes, tables {} bytes, stdout {} bytes identical",
        first.0.len(),
        first.1.len(),
        first.2.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("executor matches oracle", executor_matches_oracle),
        ("entropy invariants", entropy_suite),
        ("retrieval soundness", retrieval_soundness),
        ("graph integrity and persistence", graph_persistence),
        ("end-to-end vignettes", vignettes),
        ("validator soundness", validator_soundness),
        ("mock determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
