//! Text and JSON output for each command.

use std::io::Write;
use std::path::Path;

use hetquery::entropy::{EntropyReport, ReviewFlag};
use hetquery::pipeline::{GraphAnswer, IndexReport, TableAnswer};
use hetquery::retrieval::{AnchorSet, ContextBundle};
use hetquery::HetGraph;
use serde_json::{json, Value as Json};

pub fn json_line(out: &mut dyn Write, value: &Json) -> anyhow::Result<()> {
    writeln!(out, "{value}")?;
    Ok(())
}

fn anchor_names(anchors: &AnchorSet, graph: &HetGraph) -> Vec<String> {
    anchors
        .anchors
        .iter()
        .map(|id| {
            graph.entity(id).map_or_else(|| id.clone(), |e| format!("{} ({})", e.canonical_name, e.type_tag.as_str()))
        })
        .collect()
}

fn anchors_json(anchors: &AnchorSet, graph: &HetGraph) -> Json {
    Json::Array(
        anchors
            .anchors
            .iter()
            .map(|id| {
                let e = graph.entity(id);
                json!({
                    "entity_id": id,
                    "name": e.map(|e| e.canonical_name.as_str()),
                    "type": e.map(|e| e.type_tag.as_str()),
                })
            })
            .collect(),
    )
}

fn context_text(out: &mut dyn Write, bundle: &ContextBundle) -> anyhow::Result<()> {
    writeln!(out, "context ({} chunks, {} chars):", bundle.chunks.len(), bundle.total_chars)?;
    for c in &bundle.chunks {
        writeln!(out, "  [{}] {:.3}  {}", c.chunk_id, c.score, c.text.trim_end().replace('\n', " "))?;
    }
    Ok(())
}

pub fn index_text(out: &mut dyn Write, r: &IndexReport, graph: &HetGraph, dest: &Path) -> anyhow::Result<()> {
    writeln!(out, "documents: {}", r.documents)?;
    writeln!(out, "nodes: {} ({} chunks, {} entities)", graph.node_count(), r.chunks, r.entities)?;
    writeln!(out, "edges: {} ({} mentions, {} relations)", graph.edge_count(), r.mentions, r.relations)?;
    if r.dropped_mentions + r.dropped_relations > 0 {
        writeln!(out, "dropped: {} mentions, {} relations", r.dropped_mentions, r.dropped_relations)?;
    }
    writeln!(out, "tables: {}", if r.tables.is_empty() { "none".to_string() } else { r.tables.join(", ") })?;
    writeln!(out, "wrote {}", dest.display())?;
    Ok(())
}

pub fn graph_text(out: &mut dyn Write, a: &GraphAnswer, graph: &HetGraph) -> anyhow::Result<()> {
    writeln!(out, "mode: graph")?;
    writeln!(out, "anchors: {}", anchor_names(&a.retrieval.anchors, graph).join(", "))?;
    context_text(out, &a.retrieval.bundle)?;
    writeln!(out, "answer: {}", a.answer)?;
    Ok(())
}

pub fn graph_record(question: &str, a: &GraphAnswer, graph: &HetGraph) -> Json {
    json!({
        "question": question,
        "mode": "graph",
        "anchors": anchors_json(&a.retrieval.anchors, graph),
        "unmatched_terms": a.retrieval.anchors.unmatched_terms,
        "ranked": a.retrieval.ranked,
        "context": a.retrieval.bundle,
        "answer": a.answer,
    })
}

pub fn table_text(out: &mut dyn Write, a: &TableAnswer, csv: bool) -> anyhow::Result<()> {
    if csv {
        write!(out, "{}", a.result.to_csv())?;
        return Ok(());
    }
    writeln!(out, "mode: table")?;
    writeln!(out, "plan: {}", a.plan)?;
    write!(out, "{}", a.result.to_aligned_text())?;
    writeln!(out, "({} rows)", a.result.len())?;
    Ok(())
}

pub fn table_record(question: &str, a: &TableAnswer) -> Json {
    json!({
        "question": question,
        "mode": "table",
        "plan": a.plan,
        "raw_outputs": a.raw_outputs,
        "table": a.result.to_json(),
        "context": a.context,
        "extraction": {
            "rows": a.extracted_rows,
            "dropped_rows": a.dropped_rows,
            "warnings": a.warnings,
        },
    })
}

pub fn ask_text(out: &mut dyn Write, r: &EntropyReport) -> anyhow::Result<()> {
    writeln!(out, "answer: {}", r.answer)?;
    writeln!(out, "entropy: {:.6} bits (threshold {:.6}, oracle {})", r.entropy_bits, r.threshold_bits, r.oracle)?;
    if r.failed_samples > 0 {
        writeln!(out, "failed samples: {}", r.failed_samples)?;
    }
    writeln!(out, "clusters:")?;
    for c in &r.clusters {
        let rep = c.members.iter().position(|&m| m == c.representative).map_or("", |i| c.texts[i].as_str());
        writeln!(out, "  {}/{}  {}  samples {:?}", c.members.len(), r.samples, rep, c.members)?;
    }
    if r.flag == ReviewFlag::Review {
        writeln!(out, "REVIEW: answers disagree in meaning; flag for human review")?;
    }
    Ok(())
}
