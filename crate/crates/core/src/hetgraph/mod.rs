//! The heterogeneous graph: text chunks and entities joined by mention edges,
//! entities joined to each other by relation edges.

mod extract;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::ids::stable_hex_id;
use crate::ingest::TextChunk;
use crate::text::{canonicalize, char_slice, Span};

pub use extract::{extract_entities, infer_relations, MentionExtraction, RelationExtraction};
pub use store::{load_graph, save_graph, FORMAT_NAME, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeTag {
    Person,
    Org,
    Product,
    Time,
    Place,
    Metric,
    Other,
}

impl TypeTag {
    pub const ALL: [TypeTag; 7] = [
        TypeTag::Person,
        TypeTag::Org,
        TypeTag::Product,
        TypeTag::Time,
        TypeTag::Place,
        TypeTag::Metric,
        TypeTag::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TypeTag::Person => "person",
            TypeTag::Org => "org",
            TypeTag::Product => "product",
            TypeTag::Time => "time",
            TypeTag::Place => "place",
            TypeTag::Metric => "metric",
            TypeTag::Other => "other",
        }
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TypeTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        TypeTag::ALL.into_iter().find(|t| t.as_str() == lower).ok_or_else(|| format!("unknown type tag {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub entity_id: String,
    pub canonical_name: String,
    pub type_tag: TypeTag,
    pub aliases: BTreeSet<String>,
}

impl EntityNode {
    pub fn id_for(canonical_name: &str, tag: TypeTag) -> String {
        stable_hex_id(format!("{canonical_name}\u{1f}{tag}").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MentionEdge {
    pub chunk_id: String,
    pub entity_id: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub src_entity: String,
    pub predicate: String,
    pub dst_entity: String,
    pub provenance_chunk: String,
    pub confidence: f64,
}

impl RelationEdge {
    fn key(&self) -> (&str, &str, &str, &str) {
        (&self.src_entity, &self.predicate, &self.dst_entity, &self.provenance_chunk)
    }
}

/// One entity mention found in a chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub chunk_id: String,
    pub surface: String,
    pub type_tag: TypeTag,
    pub span: Span,
}

impl EntityMention {
    pub fn entity_id(&self) -> String {
        EntityNode::id_for(&canonicalize(&self.surface), self.type_tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Chunk,
    Entity,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph build failed; offending records: {}", .0.join("; "))]
    Build(Vec<String>),
    #[error("chunk {chunk_id}: {source}")]
    Gateway { chunk_id: String, source: GatewayError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("unsupported graph file: found {found}, expected {expected}")]
    Version { found: String, expected: String },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("line {line}: unknown record kind {kind:?}")]
    UnknownKind { line: usize, kind: String },
    #[error("graph file is truncated: header promises {expected} records, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("graph file fails integrity checks: {}", .0.join("; "))]
    Integrity(Vec<String>),
}

/// Immutable graph. Node and edge collections are sorted by id, so two
/// graphs built from the same inputs compare equal field by field.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HetGraph {
    chunks: BTreeMap<String, TextChunk>,
    entities: BTreeMap<String, EntityNode>,
    mentions: Vec<MentionEdge>,
    relations: Vec<RelationEdge>,
    node_ids: Vec<String>,
    /// Per node index: incident edges as neighbor indices, one entry per edge.
    incidence: Vec<Vec<usize>>,
    /// Per node index: distinct neighbors, ascending.
    neighbors: Vec<Vec<usize>>,
}

impl HetGraph {
    /// Assembles a graph from already-checked parts and builds adjacency.
    fn from_parts(
        chunks: BTreeMap<String, TextChunk>,
        entities: BTreeMap<String, EntityNode>,
        mut mentions: Vec<MentionEdge>,
        mut relations: Vec<RelationEdge>,
    ) -> HetGraph {
        mentions.sort();
        mentions.dedup();
        relations.sort_by(|a, b| a.key().cmp(&b.key()).then(b.confidence.total_cmp(&a.confidence)));
        relations.dedup_by(|later, earlier| later.key() == earlier.key());

        let mut node_ids: Vec<String> = chunks.keys().chain(entities.keys()).cloned().collect();
        node_ids.sort();
        let index: BTreeMap<&str, usize> = node_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut incidence = vec![Vec::new(); node_ids.len()];
        let mut link = |a: &str, b: &str| {
            if let (Some(&x), Some(&y)) = (index.get(a), index.get(b)) {
                incidence[x].push(y);
                incidence[y].push(x);
            }
        };
        for m in &mentions {
            link(&m.chunk_id, &m.entity_id);
        }
        for r in &relations {
            link(&r.src_entity, &r.dst_entity);
        }
        let neighbors = incidence
            .iter()
            .map(|ns| {
                let mut d = ns.clone();
                d.sort_unstable();
                d.dedup();
                d
            })
            .collect();
        HetGraph { chunks, entities, mentions, relations, node_ids, incidence, neighbors }
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.mentions.len() + self.relations.len()
    }

    /// All node ids, ascending.
    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_ids.binary_search_by(|n| n.as_str().cmp(id)).ok()
    }

    pub fn kind(&self, id: &str) -> Option<NodeKind> {
        if self.chunks.contains_key(id) {
            Some(NodeKind::Chunk)
        } else if self.entities.contains_key(id) {
            Some(NodeKind::Entity)
        } else {
            None
        }
    }

    pub fn chunks(&self) -> impl Iterator<Item = &TextChunk> {
        self.chunks.values()
    }

    pub fn chunk(&self, id: &str) -> Option<&TextChunk> {
        self.chunks.get(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityNode> {
        self.entities.values()
    }

    pub fn entity(&self, id: &str) -> Option<&EntityNode> {
        self.entities.get(id)
    }

    pub fn mentions(&self) -> &[MentionEdge] {
        &self.mentions
    }

    pub fn relations(&self) -> &[RelationEdge] {
        &self.relations
    }

    /// Distinct neighbors of node `i` by index, ascending.
    pub fn neighbor_indices(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Distinct neighbor ids, ascending.
    pub fn neighbors(&self, id: &str) -> Vec<&str> {
        match self.node_index(id) {
            Some(i) => self.neighbors[i].iter().map(|&j| self.node_ids[j].as_str()).collect(),
            None => Vec::new(),
        }
    }

    /// Number of edges incident to `id`, counting parallel edges separately.
    pub fn edge_degree(&self, id: &str) -> usize {
        self.node_index(id).map_or(0, |i| self.incidence[i].len())
    }

    /// Chunks that mention an entity, ascending and distinct.
    pub fn chunks_mentioning(&self, entity_id: &str) -> Vec<&str> {
        let set: BTreeSet<&str> =
            self.mentions.iter().filter(|m| m.entity_id == entity_id).map(|m| m.chunk_id.as_str()).collect();
        set.into_iter().collect()
    }

    /// Entities whose canonical name equals `canonical`, in id order.
    pub fn entities_named(&self, canonical: &str) -> Vec<&EntityNode> {
        self.entities.values().filter(|e| e.canonical_name == canonical).collect()
    }
}

/// Merges chunks, mentions and relations into a graph. Entities are keyed by
/// `(canonical name, type tag)`; the result does not depend on input order.
/// Every dangling or malformed record is reported.
pub fn build_graph(
    chunks: Vec<TextChunk>,
    entity_mentions: Vec<EntityMention>,
    relations: Vec<RelationEdge>,
) -> Result<HetGraph, GraphError> {
    let mut offenders = Vec::new();
    let mut chunk_map: BTreeMap<String, TextChunk> = BTreeMap::new();
    for c in chunks {
        match chunk_map.get(&c.chunk_id) {
            Some(existing) if existing != &c => {
                offenders.push(format!("chunk {}: two different chunks share this id", c.chunk_id))
            }
            Some(_) => {}
            None => {
                chunk_map.insert(c.chunk_id.clone(), c);
            }
        }
    }

    let mut entities: BTreeMap<String, EntityNode> = BTreeMap::new();
    let mut mentions = Vec::new();
    for m in entity_mentions {
        let Some(chunk) = chunk_map.get(&m.chunk_id) else {
            offenders.push(format!("mention {:?}: unknown chunk {}", m.surface, m.chunk_id));
            continue;
        };
        if m.span.is_empty() || char_slice(&chunk.text, m.span) != Some(m.surface.as_str()) {
            offenders.push(format!(
                "mention {:?} in chunk {}: span [{}, {}] does not select it",
                m.surface, m.chunk_id, m.span.start, m.span.end
            ));
            continue;
        }
        let canonical = canonicalize(&m.surface);
        let id = EntityNode::id_for(&canonical, m.type_tag);
        entities
            .entry(id.clone())
            .or_insert_with(|| EntityNode {
                entity_id: id.clone(),
                canonical_name: canonical,
                type_tag: m.type_tag,
                aliases: BTreeSet::new(),
            })
            .aliases
            .insert(m.surface.clone());
        mentions.push(MentionEdge { chunk_id: m.chunk_id, entity_id: id, span: m.span });
    }

    for r in &relations {
        let mut problems = Vec::new();
        if !entities.contains_key(&r.src_entity) {
            problems.push(format!("unknown source entity {}", r.src_entity));
        }
        if !entities.contains_key(&r.dst_entity) {
            problems.push(format!("unknown target entity {}", r.dst_entity));
        }
        if r.src_entity == r.dst_entity {
            problems.push("source equals target".to_string());
        }
        if !chunk_map.contains_key(&r.provenance_chunk) {
            problems.push(format!("unknown provenance chunk {}", r.provenance_chunk));
        }
        if !(0.0..=1.0).contains(&r.confidence) {
            problems.push(format!("confidence {} outside [0, 1]", r.confidence));
        }
        if !problems.is_empty() {
            offenders.push(format!(
                "relation {:?} {} -> {}: {}",
                r.predicate,
                r.src_entity,
                r.dst_entity,
                problems.join(", ")
            ));
        }
    }

    if !offenders.is_empty() {
        offenders.sort();
        return Err(GraphError::Build(offenders));
    }
    Ok(HetGraph::from_parts(chunk_map, entities, mentions, relations))
}

/// Checks every structural invariant; returns all failures.
pub fn verify(graph: &HetGraph) -> Result<(), Vec<String>> {
    let mut bad = Vec::new();
    for (id, c) in &graph.chunks {
        if id != &c.chunk_id {
            bad.push(format!("chunk stored under {id} has id {}", c.chunk_id));
        }
    }
    for (id, e) in &graph.entities {
        if id != &e.entity_id {
            bad.push(format!("entity stored under {id} has id {}", e.entity_id));
        }
        if e.entity_id != EntityNode::id_for(&e.canonical_name, e.type_tag) {
            bad.push(format!("entity {id}: id does not match (canonical name, type tag)"));
        }
        if e.canonical_name != canonicalize(&e.canonical_name) {
            bad.push(format!("entity {id}: canonical name {:?} is not canonical", e.canonical_name));
        }
        if e.aliases.is_empty() {
            bad.push(format!("entity {id}: no aliases"));
        }
        for a in &e.aliases {
            if canonicalize(a) != e.canonical_name {
                bad.push(format!("entity {id}: alias {a:?} does not fold to {:?}", e.canonical_name));
            }
        }
    }
    if graph.chunks.keys().any(|k| graph.entities.contains_key(k)) {
        bad.push("a chunk and an entity share an id".to_string());
    }
    let mut mentioned = BTreeSet::new();
    for m in &graph.mentions {
        match (graph.chunks.get(&m.chunk_id), graph.entities.get(&m.entity_id)) {
            (Some(chunk), Some(_)) => {
                if m.span.is_empty() || char_slice(&chunk.text, m.span).is_none() {
                    bad.push(format!("mention {} -> {}: span outside chunk", m.chunk_id, m.entity_id));
                }
                mentioned.insert(m.entity_id.as_str());
            }
            _ => bad.push(format!("mention {} -> {}: endpoint is not a chunk and an entity", m.chunk_id, m.entity_id)),
        }
    }
    for r in &graph.relations {
        if !graph.entities.contains_key(&r.src_entity) || !graph.entities.contains_key(&r.dst_entity) {
            bad.push(format!("relation {} -> {}: endpoint is not an entity", r.src_entity, r.dst_entity));
        }
        if r.src_entity == r.dst_entity {
            bad.push(format!("relation on {}: self loop", r.src_entity));
        }
        if !graph.chunks.contains_key(&r.provenance_chunk) {
            bad.push(format!(
                "relation {} -> {}: unknown provenance {}",
                r.src_entity, r.dst_entity, r.provenance_chunk
            ));
        }
        if !(0.0..=1.0).contains(&r.confidence) {
            bad.push(format!("relation {} -> {}: confidence {}", r.src_entity, r.dst_entity, r.confidence));
        }
    }
    for id in graph.entities.keys() {
        if !mentioned.contains(id.as_str()) {
            bad.push(format!("entity {id} has no mention"));
        }
    }
    if !graph.mentions.windows(2).all(|w| w[0] < w[1]) {
        bad.push("mention edges are not sorted and distinct".to_string());
    }
    if !graph.relations.windows(2).all(|w| w[0].key() < w[1].key()) {
        bad.push("relation edges are not sorted and distinct".to_string());
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(bad)
    }
}

/// Degree centrality: distinct neighbors over `N - 1`. All zero when the
/// graph has fewer than two nodes.
pub fn degree_centrality(graph: &HetGraph) -> BTreeMap<String, f64> {
    let n = graph.node_count();
    graph
        .node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let c = if n < 2 { 0.0 } else { graph.neighbors[i].len() as f64 / (n - 1) as f64 };
            (id.clone(), c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn chunk(id: &str, text: &str) -> TextChunk {
        TextChunk {
            chunk_id: id.into(),
            doc_id: id.split('#').next().unwrap().into(),
            ordinal: 0,
            span: Span::new(0, text.chars().count()),
            text: text.into(),
        }
    }

    fn mention(chunk_id: &str, text: &str, surface: &str, tag: TypeTag) -> EntityMention {
        let start = text.find(surface).unwrap();
        let start = text[..start].chars().count();
        EntityMention {
            chunk_id: chunk_id.into(),
            surface: surface.into(),
            type_tag: tag,
            span: Span::new(start, start + surface.chars().count()),
        }
    }

    #[test]
    fn case_variants_merge() {
        let text = "Drug A helps; drug a costs less.";
        let g = build_graph(
            vec![chunk("d#0", text)],
            vec![mention("d#0", text, "Drug A", TypeTag::Other), mention("d#0", text, "drug a", TypeTag::Other)],
            vec![],
        )
        .unwrap();
        assert_eq!(g.entities().count(), 1);
        assert_eq!(g.entities().next().unwrap().aliases.len(), 2);
        assert_eq!(g.mentions().len(), 2);
        verify(&g).unwrap();
    }

    #[test]
    fn empty_build() {
        let g = build_graph(vec![], vec![], vec![]).unwrap();
        assert!(g.is_empty());
        verify(&g).unwrap();
        assert!(degree_centrality(&g).is_empty());
    }

    #[test]
    fn shared_quarter_has_two_mentions() {
        let g = build_graph(
            vec![chunk("a#0", "Q2 up"), chunk("b#0", "in Q2")],
            vec![mention("a#0", "Q2 up", "Q2", TypeTag::Time), mention("b#0", "in Q2", "Q2", TypeTag::Time)],
            vec![],
        )
        .unwrap();
        let q2 = EntityNode::id_for("q2", TypeTag::Time);
        assert_eq!(g.edge_degree(&q2), 2);
    }

    #[test]
    fn dangling_records_are_all_listed() {
        let rel = |s: &str, d: &str| RelationEdge {
            src_entity: s.into(),
            predicate: "p".into(),
            dst_entity: d.into(),
            provenance_chunk: "zz#0".into(),
            confidence: 1.0,
        };
        let err = build_graph(
            vec![chunk("a#0", "x")],
            vec![mention("missing#0", "Q2", "Q2", TypeTag::Time)],
            vec![rel("e1", "e2"), rel("e3", "e3")],
        )
        .unwrap_err();
        match err {
            GraphError::Build(list) => assert_eq!(list.len(), 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn centrality_closed_forms() {
        // Path C1 - E - C2 plus an isolated chunk: N = 4.
        let text = "Q2";
        let g = build_graph(
            vec![chunk("a#0", text), chunk("b#0", text), chunk("c#0", "none")],
            vec![mention("a#0", text, "Q2", TypeTag::Time), mention("b#0", text, "Q2", TypeTag::Time)],
            vec![],
        )
        .unwrap();
        let c = degree_centrality(&g);
        let q2 = EntityNode::id_for("q2", TypeTag::Time);
        assert!((c[&q2] - 2.0 / 3.0).abs() < 1e-12);
        assert!((c["a#0"] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(c["c#0"], 0.0);

        let single = build_graph(vec![chunk("a#0", "x")], vec![], vec![]).unwrap();
        assert_eq!(degree_centrality(&single)["a#0"], 0.0);
    }

    #[test]
    fn duplicate_relations_collapse() {
        let text = "Customer X purchased Product Y";
        let ms =
            vec![mention("d#0", text, "Customer X", TypeTag::Other), mention("d#0", text, "Product Y", TypeTag::Other)];
        let r = RelationEdge {
            src_entity: ms[0].entity_id(),
            predicate: "purchased".into(),
            dst_entity: ms[1].entity_id(),
            provenance_chunk: "d#0".into(),
            confidence: 0.5,
        };
        let mut r2 = r.clone();
        r2.confidence = 0.9;
        let g = build_graph(vec![chunk("d#0", text)], ms, vec![r, r2]).unwrap();
        assert_eq!(g.relations().len(), 1);
        assert_eq!(g.relations()[0].confidence, 0.9);
        let total: usize = g.node_ids().iter().map(|id| g.edge_degree(id)).sum();
        assert_eq!(total, 2 * g.edge_count());
    }
}
