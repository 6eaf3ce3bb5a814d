//! Topology-guided retrieval: anchor resolution, bounded multi-source BFS,
//! linear scoring and whole-chunk context packing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::Gateway;
use crate::hetgraph::{degree_centrality, extract_entities, GraphError, HetGraph, NodeKind, TypeTag};
use crate::ingest::TextChunk;
use crate::text::{canonicalize, char_len, char_slice, is_stopword, singularize, tokenize, Span};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("anchor {0} is not a node of the graph")]
    UnknownAnchor(String),
    #[error("node budget {budget} is smaller than the {anchors} anchors")]
    BudgetTooSmall { budget: usize, anchors: usize },
    #[error("character budget must be positive")]
    ZeroCharBudget,
    #[error("weights must be finite and nonnegative")]
    BadWeights,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// `score = alpha * match + beta * centrality + gamma / (1 + hops)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights { alpha: 0.5, beta: 0.3, gamma: 0.2 }
    }
}

impl ScoreWeights {
    pub fn check(&self) -> Result<(), RetrievalError> {
        let ok = [self.alpha, self.beta, self.gamma].iter().all(|w| w.is_finite() && *w >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(RetrievalError::BadWeights)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub hop_limit: usize,
    pub node_budget: usize,
    pub char_budget: usize,
    pub weights: ScoreWeights,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { hop_limit: 2, node_budget: 64, char_budget: 4000, weights: ScoreWeights::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub query: String,
    pub anchors: Vec<String>,
    pub unmatched_terms: Vec<String>,
}

struct Candidate {
    span: Span,
    name: String,
    from_tagger: bool,
}

/// Matches query entities to graph entities by canonical name. Candidates
/// come from the tagger (with `Products A and B` read as `product a`,
/// `product b`) and from a longest-first scan of up to four query words.
/// Metric entities never anchor. Anchors are ordered by query position.
pub fn anchor_entities(query: &str, graph: &HetGraph, gateway: &Gateway) -> Result<AnchorSet, RetrievalError> {
    let mut by_name: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in graph.entities() {
        if e.type_tag != TypeTag::Metric {
            by_name.entry(e.canonical_name.as_str()).or_default().push(e.entity_id.as_str());
        }
    }

    let pseudo = TextChunk {
        chunk_id: "query#0".into(),
        doc_id: "query".into(),
        ordinal: 0,
        span: Span::new(0, char_len(query)),
        text: query.to_string(),
    };
    let tagged = extract_entities(&pseudo, gateway)?.mentions;
    let mut candidates = Vec::new();
    for (i, m) in tagged.iter().enumerate() {
        let words: Vec<&str> = m.surface.split_whitespace().collect();
        let head = words.first().map(|w| w.to_lowercase()).unwrap_or_default();
        let singular = singularize(&head).to_string();
        if words.len() >= 2 && singular != head {
            let rest = canonicalize(&words[1..].join(" "));
            candidates.push(Candidate { span: m.span, name: format!("{singular} {rest}"), from_tagger: true });
            let mut prev_end = m.span.end;
            for next in &tagged[i + 1..] {
                let gap = char_slice(query, Span::new(prev_end, next.span.start)).unwrap_or("").trim().to_lowercase();
                let joins = matches!(gap.as_str(), "and" | "or" | "," | ", and" | ", or");
                if !joins || next.surface.split_whitespace().count() != 1 {
                    break;
                }
                candidates.push(Candidate {
                    span: next.span,
                    name: format!("{singular} {}", canonicalize(&next.surface)),
                    from_tagger: true,
                });
                prev_end = next.span.end;
            }
        }
        candidates.push(Candidate { span: m.span, name: canonicalize(&m.surface), from_tagger: true });
    }
    let tokens = tokenize(query);
    for i in 0..tokens.len() {
        for n in (1..=4).rev() {
            if i + n > tokens.len() || tokens[i..i + n].iter().all(|t| is_stopword(t.text)) {
                continue;
            }
            let span = Span::new(tokens[i].span.start, tokens[i + n - 1].span.end);
            let name = canonicalize(char_slice(query, span).unwrap_or(""));
            if by_name.contains_key(name.as_str()) {
                candidates.push(Candidate { span, name, from_tagger: false });
            }
        }
    }

    // Tagger candidates first, then longer spans; overlapping later ones lose.
    candidates.sort_by_key(|c| (!c.from_tagger, c.span.start, std::cmp::Reverse(c.span.len())));
    let mut accepted: Vec<(Span, &str)> = Vec::new();
    for c in &candidates {
        let Some(ids) = by_name.get(c.name.as_str()) else { continue };
        if accepted.iter().any(|(s, _)| s.start < c.span.end && c.span.start < s.end) {
            continue;
        }
        for id in ids {
            accepted.push((c.span, id));
        }
    }
    accepted.sort_by_key(|(s, id)| (s.start, *id));
    let mut anchors: Vec<String> = Vec::new();
    for (_, id) in &accepted {
        if !anchors.iter().any(|a| a == id) {
            anchors.push(id.to_string());
        }
    }
    let mut unmatched_terms = Vec::new();
    for t in &tokens {
        let covered = accepted.iter().any(|(s, _)| s.start <= t.span.start && t.span.end <= s.end);
        let term = t.text.to_lowercase();
        if !covered && !is_stopword(&term) && !unmatched_terms.contains(&term) {
            unmatched_terms.push(term);
        }
    }
    Ok(AnchorSet { query: query.to_string(), anchors, unmatched_terms })
}

/// Multi-source BFS from the anchors. Returns `(node_id, hops)` sorted by
/// `(hops, node_id)`. When a level would overflow `node_budget`, its nodes
/// are admitted in id order until the budget is met exactly.
pub fn bfs_expand(
    graph: &HetGraph,
    anchors: &[String],
    hop_limit: usize,
    node_budget: usize,
) -> Result<Vec<(String, usize)>, RetrievalError> {
    let mut sources = BTreeSet::new();
    for a in anchors {
        let i = graph.node_index(a).ok_or_else(|| RetrievalError::UnknownAnchor(a.clone()))?;
        sources.insert(i);
    }
    if node_budget < sources.len() {
        return Err(RetrievalError::BudgetTooSmall { budget: node_budget, anchors: sources.len() });
    }
    let mut seen = vec![false; graph.node_count()];
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &s in &sources {
        seen[s] = true;
        out.push((s, 0));
    }
    let mut frontier: Vec<usize> = sources.into_iter().collect();
    let mut hops = 0;
    while hops < hop_limit && !frontier.is_empty() {
        hops += 1;
        let mut next = BTreeSet::new();
        for &u in &frontier {
            for &v in graph.neighbor_indices(u) {
                if !seen[v] {
                    next.insert(v);
                }
            }
        }
        // Node ids are sorted, so index order is id order.
        let room = node_budget - out.len();
        let full = next.len() >= room;
        frontier = next.into_iter().take(room).collect();
        for &v in &frontier {
            seen[v] = true;
            out.push((v, hops));
        }
        if full {
            break;
        }
    }
    Ok(out.into_iter().map(|(i, h)| (graph.node_ids()[i].clone(), h)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedNode {
    pub node_id: String,
    pub hops: usize,
    #[serde(rename = "match")]
    pub anchor_match: u8,
    pub centrality: f64,
    pub score: f64,
}

/// Scores expanded nodes and sorts them by `(-score, node_id)`.
pub fn score_nodes(
    expanded: &[(String, usize)],
    graph: &HetGraph,
    anchors: &[String],
    weights: &ScoreWeights,
) -> Vec<RankedNode> {
    let centrality = degree_centrality(graph);
    let mut ranked: Vec<RankedNode> = expanded
        .iter()
        .map(|(id, hops)| {
            let anchor_match = u8::from(anchors.iter().any(|a| a == id));
            let c = centrality.get(id).copied().unwrap_or(0.0);
            let score =
                weights.alpha * f64::from(anchor_match) + weights.beta * c + weights.gamma / (1.0 + *hops as f64);
            RankedNode { node_id: id.clone(), hops: *hops, anchor_match, centrality: c, score }
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.node_id.cmp(&b.node_id)));
    ranked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextChunk {
    pub chunk_id: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BundleProvenance {
    pub anchors: Vec<String>,
    pub weights: Option<ScoreWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub chunks: Vec<ContextChunk>,
    pub total_chars: usize,
    pub provenance: BundleProvenance,
}

/// Greedy packing in rank order. Entities contribute the chunks that mention
/// them; a chunk that does not fit whole is skipped, never cut.
pub fn assemble_context(
    ranked: &[RankedNode],
    graph: &HetGraph,
    char_budget: usize,
) -> Result<ContextBundle, RetrievalError> {
    if char_budget == 0 {
        return Err(RetrievalError::ZeroCharBudget);
    }
    let mut bundle = ContextBundle { chunks: Vec::new(), total_chars: 0, provenance: BundleProvenance::default() };
    let mut taken = BTreeSet::new();
    'outer: for node in ranked {
        let ids: Vec<&str> = match graph.kind(&node.node_id) {
            Some(NodeKind::Chunk) => vec![node.node_id.as_str()],
            Some(NodeKind::Entity) => graph.chunks_mentioning(&node.node_id),
            None => continue,
        };
        for id in ids {
            if bundle.total_chars == char_budget {
                break 'outer;
            }
            if taken.contains(id) {
                continue;
            }
            let chunk = graph.chunk(id).expect("graph chunks resolve");
            let len = char_len(&chunk.text);
            if bundle.total_chars + len > char_budget {
                continue;
            }
            taken.insert(id.to_string());
            bundle.total_chars += len;
            bundle.chunks.push(ContextChunk { chunk_id: id.to_string(), text: chunk.text.clone(), score: node.score });
        }
    }
    Ok(bundle)
}

/// Result of the whole graph path for one query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieval {
    pub anchors: AnchorSet,
    pub ranked: Vec<RankedNode>,
    pub bundle: ContextBundle,
}

/// Anchors, expansion, scoring and packing with one configuration.
pub fn retrieve(
    query: &str,
    graph: &HetGraph,
    gateway: &Gateway,
    config: &RetrievalConfig,
) -> Result<Retrieval, RetrievalError> {
    config.weights.check()?;
    let anchors = anchor_entities(query, graph, gateway)?;
    let expanded = bfs_expand(graph, &anchors.anchors, config.hop_limit, config.node_budget)?;
    let ranked = score_nodes(&expanded, graph, &anchors.anchors, &config.weights);
    let mut bundle = assemble_context(&ranked, graph, config.char_budget)?;
    bundle.provenance = BundleProvenance { anchors: anchors.anchors.clone(), weights: Some(config.weights) };
    Ok(Retrieval { anchors, ranked, bundle })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{build_graph, EntityMention, EntityNode};

    fn chunk(id: &str, text: &str) -> TextChunk {
        TextChunk {
            chunk_id: id.into(),
            doc_id: id.split('#').next().unwrap().into(),
            ordinal: 0,
            span: Span::new(0, char_len(text)),
            text: text.into(),
        }
    }

    fn mentions_in(c: &TextChunk, surfaces: &[(&str, TypeTag)]) -> Vec<EntityMention> {
        surfaces
            .iter()
            .map(|(s, tag)| {
                let b = c.text.find(s).unwrap();
                let start = char_len(&c.text[..b]);
                EntityMention {
                    chunk_id: c.chunk_id.clone(),
                    surface: s.to_string(),
                    type_tag: *tag,
                    span: Span::new(start, start + char_len(s)),
                }
            })
            .collect()
    }

    fn products_graph() -> HetGraph {
        let a = chunk("a#0", "Product A sales increased 12% in Q2.");
        let b = chunk("b#0", "Product B sales decreased 3% in Q2.");
        let d = chunk("c#0", "Drug A efficacy was compared against Drug Y.");
        let mut ms =
            mentions_in(&a, &[("Product A", TypeTag::Other), ("sales", TypeTag::Metric), ("Q2", TypeTag::Time)]);
        ms.extend(mentions_in(&b, &[("Product B", TypeTag::Other), ("sales", TypeTag::Metric), ("Q2", TypeTag::Time)]));
        ms.extend(mentions_in(&d, &[("Drug A", TypeTag::Other), ("Drug Y", TypeTag::Other)]));
        build_graph(vec![a, b, d], ms, vec![]).unwrap()
    }

    fn id(name: &str, tag: TypeTag) -> String {
        EntityNode::id_for(name, tag)
    }

    #[test]
    fn products_a_and_b_anchor_three_entities() {
        let g = products_graph();
        let set = anchor_entities("Compare sales trends for Products A and B in Q2", &g, &Gateway::mock()).unwrap();
        assert_eq!(
            set.anchors,
            vec![id("product a", TypeTag::Other), id("product b", TypeTag::Other), id("q2", TypeTag::Time)]
        );
        assert_eq!(set.unmatched_terms, vec!["compare", "sales", "trends"]);
    }

    #[test]
    fn lowercase_query_matches_by_case_fold() {
        let g = products_graph();
        let set = anchor_entities("drug a efficacy", &g, &Gateway::mock()).unwrap();
        assert_eq!(set.anchors, vec![id("drug a", TypeTag::Other)]);
    }

    #[test]
    fn nothing_matches() {
        let g = products_graph();
        let set = anchor_entities("zzz qqq", &g, &Gateway::mock()).unwrap();
        assert!(set.anchors.is_empty());
        assert_eq!(set.unmatched_terms, vec!["zzz", "qqq"]);
    }

    #[test]
    fn hop_limits_and_budget() {
        let g = products_graph();
        let pa = id("product a", TypeTag::Other);
        assert_eq!(bfs_expand(&g, std::slice::from_ref(&pa), 0, 64).unwrap(), vec![(pa.clone(), 0)]);
        let one = bfs_expand(&g, std::slice::from_ref(&pa), 1, 64).unwrap();
        assert_eq!(one, vec![(pa.clone(), 0), ("a#0".to_string(), 1)]);
        let two = bfs_expand(&g, std::slice::from_ref(&pa), 2, 64).unwrap();
        assert_eq!(two.len(), 4);
        let capped = bfs_expand(&g, std::slice::from_ref(&pa), 3, 3).unwrap();
        assert_eq!(capped.len(), 3);
        assert_eq!(&capped[..2], &two[..2]);
        assert!(matches!(bfs_expand(&g, &["nope".into()], 1, 5), Err(RetrievalError::UnknownAnchor(_))));
        assert!(matches!(bfs_expand(&g, &[pa], 1, 0), Err(RetrievalError::BudgetTooSmall { .. })));
    }

    #[test]
    fn score_formula() {
        let g = products_graph();
        let w = ScoreWeights::default();
        let expanded = vec![("a#0".to_string(), 2)];
        let r = score_nodes(&expanded, &g, &[], &w);
        let c = degree_centrality(&g)["a#0"];
        assert!((r[0].score - (0.3 * c + 0.2 / 3.0)).abs() < 1e-12);

        let anchor = id("q2", TypeTag::Time);
        let r = score_nodes(&[(anchor.clone(), 0)], &g, &[anchor], &ScoreWeights { alpha: 1.0, beta: 0.0, gamma: 0.0 });
        assert_eq!(r[0].score, 1.0);
    }

    #[test]
    fn ties_break_by_id() {
        let g = products_graph();
        let r = score_nodes(&[("b#0".into(), 1), ("a#0".into(), 1)], &g, &[], &ScoreWeights::default());
        assert_eq!(r[0].node_id, "a#0");
    }

    fn ranked_chunks(sizes: &[usize]) -> (HetGraph, Vec<RankedNode>) {
        let chunks: Vec<TextChunk> =
            sizes.iter().enumerate().map(|(i, n)| chunk(&format!("d{i}#0"), &"x".repeat(*n))).collect();
        let g = build_graph(chunks, vec![], vec![]).unwrap();
        let ranked = (0..sizes.len())
            .map(|i| RankedNode {
                node_id: format!("d{i}#0"),
                hops: 0,
                anchor_match: 0,
                centrality: 0.0,
                score: 1.0 - i as f64 / 10.0,
            })
            .collect();
        (g, ranked)
    }

    #[test]
    fn packing_is_whole_chunk_greedy() {
        let (g, r) = ranked_chunks(&[300, 300, 300]);
        let b = assemble_context(&r, &g, 650).unwrap();
        assert_eq!(b.chunks.len(), 2);
        assert_eq!(b.total_chars, 600);

        let (g, r) = ranked_chunks(&[100]);
        assert_eq!(assemble_context(&r, &g, 4000).unwrap().total_chars, 100);
        assert!(assemble_context(&r, &g, 50).unwrap().chunks.is_empty());
        assert!(assemble_context(&r, &g, 0).is_err());
    }
}
