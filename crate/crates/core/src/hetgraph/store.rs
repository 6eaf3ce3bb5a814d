//! Line-delimited JSON persistence.
//!
//! ```text
//! {"format":"hetgraph","version":1,"counts":{"chunk":2,"entity":3,"mention":4,"relation":1}}
//! {"kind":"chunk","chunk_id":"…","doc_id":"…","ordinal":0,"span":[0,42],"text":"…"}
//! {"kind":"entity","entity_id":"…","canonical_name":"q2","type_tag":"time","aliases":["Q2"]}
//! {"kind":"mention","chunk_id":"…","entity_id":"…","span":[0,2]}
//! {"kind":"relation","src_entity":"…","predicate":"purchased","dst_entity":"…","provenance_chunk":"…","confidence":1.0}
//! ```
//!
//! Records appear in the graph's sorted order, so equal graphs produce equal
//! files. The header counts let a load notice a file cut at a line boundary.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value as Json};

use super::{verify, EntityNode, GraphError, HetGraph, MentionEdge, RelationEdge};
use crate::ingest::TextChunk;

pub const FORMAT_NAME: &str = "hetgraph";
pub const FORMAT_VERSION: u64 = 1;

const KINDS: [&str; 4] = ["chunk", "entity", "mention", "relation"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io { path: path.display().to_string(), source }
}

fn record<T: Serialize>(kind: &str, value: &T) -> String {
    let mut map = Map::new();
    map.insert("kind".into(), Json::String(kind.into()));
    match serde_json::to_value(value).expect("graph records serialize") {
        Json::Object(fields) => map.extend(fields),
        other => unreachable!("graph records are objects, got {other}"),
    }
    Json::Object(map).to_string()
}

/// Serializes the graph to its file text.
pub(crate) fn to_jsonl(graph: &HetGraph) -> String {
    let header = json!({
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "counts": {
            "chunk": graph.chunks.len(),
            "entity": graph.entities.len(),
            "mention": graph.mentions.len(),
            "relation": graph.relations.len(),
        },
    });
    let mut out = header.to_string();
    out.push('\n');
    let lines = graph
        .chunks
        .values()
        .map(|c| record("chunk", c))
        .chain(graph.entities.values().map(|e| record("entity", e)))
        .chain(graph.mentions.iter().map(|m| record("mention", m)))
        .chain(graph.relations.iter().map(|r| record("relation", r)));
    for line in lines {
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Writes the graph, replacing `path` only once the full file is on disk.
pub fn save_graph(graph: &HetGraph, path: &Path) -> Result<(), GraphError> {
    let text = to_jsonl(graph);
    let tmp = path.with_extension("tmp-write");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn parse_fields<T: DeserializeOwned>(line: usize, mut obj: Map<String, Json>) -> Result<T, GraphError> {
    obj.remove("kind");
    serde_json::from_value(Json::Object(obj)).map_err(|e| GraphError::Format { line, message: e.to_string() })
}

pub(crate) fn from_jsonl(text: &str) -> Result<HetGraph, GraphError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
    let Some((hline, header)) = lines.next() else {
        return Err(GraphError::Format { line: 1, message: "empty file, expected a header record".into() });
    };
    let header: Json = serde_json::from_str(header)
        .map_err(|e| GraphError::Format { line: hline, message: format!("header: {e}") })?;
    let format = header.get("format").and_then(Json::as_str).unwrap_or("");
    let version = header.get("version").and_then(Json::as_u64);
    if format != FORMAT_NAME || version != Some(FORMAT_VERSION) {
        let found = format!(
            "format {:?} version {}",
            format,
            header.get("version").map_or_else(|| "none".to_string(), Json::to_string)
        );
        return Err(GraphError::Version {
            found,
            expected: format!("format {FORMAT_NAME:?} version {FORMAT_VERSION}"),
        });
    }
    let counts: Option<BTreeMap<String, usize>> = header
        .get("counts")
        .map(|c| serde_json::from_value(c.clone()))
        .transpose()
        .map_err(|e| GraphError::Format { line: hline, message: format!("header counts: {e}") })?;

    let mut chunks = BTreeMap::new();
    let mut entities = BTreeMap::new();
    let mut mentions: Vec<MentionEdge> = Vec::new();
    let mut relations: Vec<RelationEdge> = Vec::new();
    let mut seen: BTreeMap<&str, usize> = KINDS.iter().map(|k| (*k, 0)).collect();
    let mut duplicates = Vec::new();
    for (line, raw) in lines {
        let obj = match serde_json::from_str::<Json>(raw) {
            Ok(Json::Object(obj)) => obj,
            Ok(_) => return Err(GraphError::Format { line, message: "record is not an object".into() }),
            Err(e) => return Err(GraphError::Format { line, message: e.to_string() }),
        };
        let kind = obj.get("kind").and_then(Json::as_str).unwrap_or("").to_string();
        match kind.as_str() {
            "chunk" => {
                let c: TextChunk = parse_fields(line, obj)?;
                if let Some(old) = chunks.insert(c.chunk_id.clone(), c) {
                    duplicates.push(format!("line {line}: duplicate chunk {}", old.chunk_id));
                }
            }
            "entity" => {
                let e: EntityNode = parse_fields(line, obj)?;
                if let Some(old) = entities.insert(e.entity_id.clone(), e) {
                    duplicates.push(format!("line {line}: duplicate entity {}", old.entity_id));
                }
            }
            "mention" => mentions.push(parse_fields(line, obj)?),
            "relation" => relations.push(parse_fields(line, obj)?),
            _ => return Err(GraphError::UnknownKind { line, kind }),
        }
        *seen.get_mut(kind.as_str()).expect("known kind") += 1;
    }

    if let Some(counts) = counts {
        let expected: usize = KINDS.iter().map(|k| counts.get(*k).copied().unwrap_or(0)).sum();
        let found: usize = seen.values().sum();
        if KINDS.iter().any(|k| counts.get(*k).copied().unwrap_or(0) != seen[k]) {
            return Err(GraphError::Truncated { expected, found });
        }
    }

    let (n_mentions, n_relations) = (mentions.len(), relations.len());
    let graph = HetGraph::from_parts(chunks, entities, mentions, relations);
    if graph.mentions.len() != n_mentions {
        duplicates.push(format!("{} duplicate mention records", n_mentions - graph.mentions.len()));
    }
    if graph.relations.len() != n_relations {
        duplicates.push(format!("{} duplicate relation records", n_relations - graph.relations.len()));
    }
    let mut problems = duplicates;
    if let Err(more) = verify(&graph) {
        problems.extend(more);
    }
    if !problems.is_empty() {
        return Err(GraphError::Integrity(problems));
    }
    Ok(graph)
}

/// Reads a graph file. Any defect fails the whole load.
pub fn load_graph(path: &Path) -> Result<HetGraph, GraphError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    from_jsonl(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{build_graph, EntityMention, TypeTag};
    use crate::text::Span;

    fn sample() -> HetGraph {
        let text = "Customer X purchased Product Y";
        let chunk = TextChunk {
            chunk_id: "d#0".into(),
            doc_id: "d".into(),
            ordinal: 0,
            span: Span::new(0, 30),
            text: text.into(),
        };
        let m = |s: &str, start: usize| EntityMention {
            chunk_id: "d#0".into(),
            surface: s.into(),
            type_tag: TypeTag::Other,
            span: Span::new(start, start + s.len()),
        };
        let ms = vec![m("Customer X", 0), m("Product Y", 21)];
        let rel = RelationEdge {
            src_entity: ms[0].entity_id(),
            predicate: "purchased".into(),
            dst_entity: ms[1].entity_id(),
            provenance_chunk: "d#0".into(),
            confidence: 1.0,
        };
        build_graph(vec![chunk], ms, vec![rel]).unwrap()
    }

    #[test]
    fn round_trip() {
        let g = sample();
        assert_eq!(from_jsonl(&to_jsonl(&g)).unwrap(), g);
        let empty = HetGraph::default();
        assert_eq!(from_jsonl(&to_jsonl(&empty)).unwrap(), empty);
    }

    #[test]
    fn version_mismatch_names_both() {
        let text = to_jsonl(&sample()).replacen("\"version\":1", "\"version\":7", 1);
        let err = from_jsonl(&text).unwrap_err().to_string();
        assert!(err.contains("version 7") && err.contains("version 1"), "{err}");
    }

    #[test]
    fn truncation_is_detected() {
        let text = to_jsonl(&sample());
        let lines: Vec<&str> = text.lines().collect();
        for keep in 1..lines.len() {
            let cut = lines[..keep].join("\n");
            assert!(from_jsonl(&cut).is_err(), "kept {keep} lines");
        }
        let mid = &text[..text.len() - 10];
        assert!(from_jsonl(mid).is_err());
        assert!(from_jsonl("").is_err());
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let mut text = to_jsonl(&sample());
        text.push_str("{\"kind\":\"table\"}\n");
        assert!(matches!(from_jsonl(&text), Err(GraphError::UnknownKind { .. })));
    }

    #[test]
    fn integrity_violations_are_listed() {
        let text = to_jsonl(&sample());
        let kept: Vec<&str> = text.lines().filter(|l| !l.contains("\"kind\":\"mention\"")).collect();
        let text = kept.join("\n").replace("\"mention\":2", "\"mention\":0");
        match from_jsonl(&text) {
            Err(GraphError::Integrity(list)) => assert_eq!(list.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
