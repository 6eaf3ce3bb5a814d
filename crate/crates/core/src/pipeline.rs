//! End-to-end flows behind the command line: indexing a corpus, answering
//! over the graph or over tables, and sampling answers for review.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::config::CliConfig;
use crate::entropy::{uncertainty_report, EntropyError, EntropyReport, EquivalenceOracle, OracleMode};
use crate::extraction::{
    generate_table, synthesize_plan, validate_plan, ExtractionError, SchemaHint, SynthesisError, Violation,
};
use crate::gateway::{render_context, Gateway, GatewayError, PromptRequest, SamplingParams, TemplateId};
use crate::hetgraph::{build_graph, extract_entities, infer_relations, load_graph, save_graph, GraphError, HetGraph};
use crate::ingest::{
    chunk_document, load_corpus, parse_structured, CorpusManifest, IngestError, SourceFormat, TextChunk,
};
use crate::relexec::{execute, ExecError, ResultTable};
use crate::retrieval::{retrieve, AnchorSet, BundleProvenance, ContextBundle, ContextChunk, Retrieval, RetrievalError};
use crate::table::{Table, TableSet};
use crate::text::char_len;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error("plan {plan} failed validation: {}", .violations.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; "))]
    Validation { plan: String, violations: Vec<Violation> },
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no anchor entities; try --mode table or refine query")]
    NoAnchors(AnchorSet),
    #[error("{path}: {message}")]
    Tables { path: String, message: String },
}

/// Maps `f` over `items` on up to `workers` threads, keeping input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("workers finished").into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Everything `index` produces.
#[derive(Debug, Clone)]
pub struct Index {
    pub graph: HetGraph,
    pub tables: TableSet,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IndexReport {
    pub documents: usize,
    pub chunks: usize,
    pub entities: usize,
    pub mentions: usize,
    pub relations: usize,
    pub tables: Vec<String>,
    pub dropped_mentions: usize,
    pub dropped_relations: usize,
    pub warnings: Vec<String>,
}

/// Ingests a corpus directory and builds the graph plus the structured tables.
pub fn build_index(corpus: &Path, cfg: &CliConfig, gateway: &Gateway) -> Result<(Index, IndexReport), PipelineError> {
    let manifest: CorpusManifest = load_corpus(corpus)?;
    let mut report = IndexReport { documents: manifest.documents.len(), ..Default::default() };
    for e in &manifest.errors {
        report.warnings.push(format!("{}: {}", e.path, e.message));
    }
    for s in &manifest.skipped {
        report.warnings.push(format!("{s}: skipped, unrecognized extension"));
    }
    if manifest.documents.is_empty() {
        report.warnings.push(format!("corpus {} has no documents", corpus.display()));
    }

    let mut chunks: Vec<TextChunk> = Vec::new();
    let mut tables = TableSet::default();
    for doc in &manifest.documents {
        match doc.format {
            SourceFormat::Text => chunks.extend(chunk_document(doc, &cfg.chunking)?),
            SourceFormat::Csv | SourceFormat::Json => match parse_structured(doc) {
                Ok(t) => {
                    let name = t.name().to_string();
                    if tables.insert(t).is_err() {
                        report.warnings.push(format!("{}: table {name} already loaded, skipped", doc.path));
                    }
                }
                Err(e) => report.warnings.push(e.to_string()),
            },
        }
    }

    let per_chunk = parallel_map(&chunks, cfg.backend.max_in_flight, |chunk| {
        let m = extract_entities(chunk, gateway)?;
        let r = infer_relations(chunk, &m.mentions, gateway)?;
        Ok::<_, GraphError>((m, r))
    });
    let mut mentions = Vec::new();
    let mut relations = Vec::new();
    for outcome in per_chunk {
        let (m, r) = outcome?;
        report.dropped_mentions += m.dropped;
        report.dropped_relations += r.dropped;
        mentions.extend(m.mentions);
        relations.extend(r.relations);
    }
    if report.dropped_mentions + report.dropped_relations > 0 {
        report.warnings.push(format!(
            "dropped {} malformed mentions and {} relations",
            report.dropped_mentions, report.dropped_relations
        ));
    }
    let graph = build_graph(chunks, mentions, relations)?;
    report.chunks = graph.chunks().count();
    report.entities = graph.entities().count();
    report.mentions = graph.mentions().len();
    report.relations = graph.relations().len();
    report.tables = tables.tables.keys().cloned().collect();
    Ok((Index { graph, tables }, report))
}

/// Where the structured tables of a graph file live.
pub fn tables_path(graph_path: &Path) -> PathBuf {
    let mut name = graph_path.as_os_str().to_owned();
    name.push(".tables.json");
    PathBuf::from(name)
}

fn tables_err(path: &Path, message: impl ToString) -> PipelineError {
    PipelineError::Tables { path: path.display().to_string(), message: message.to_string() }
}

/// Writes the graph file and its `.tables.json` sidecar.
pub fn save_index(index: &Index, graph_path: &Path) -> Result<(), PipelineError> {
    save_graph(&index.graph, graph_path)?;
    let path = tables_path(graph_path);
    let doc = json!({
        "format": "hetgraph-tables",
        "version": 1,
        "tables": index.tables.tables.values().map(Table::to_json).collect::<Vec<_>>(),
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("tables serialize");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| tables_err(&path, e))
}

/// Loads a graph file and, when present, its sidecar tables.
pub fn load_index(graph_path: &Path) -> Result<Index, PipelineError> {
    let graph = load_graph(graph_path)?;
    let path = tables_path(graph_path);
    let mut tables = TableSet::default();
    if path.exists() {
        let text = std::fs::read_to_string(&path).map_err(|e| tables_err(&path, e))?;
        let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| tables_err(&path, e))?;
        if doc.get("format").and_then(|f| f.as_str()) != Some("hetgraph-tables")
            || doc.get("version") != Some(&json!(1))
        {
            return Err(tables_err(&path, "not a version 1 tables file"));
        }
        for t in doc.get("tables").and_then(|t| t.as_array()).into_iter().flatten() {
            let table = Table::from_json(t).map_err(|e| tables_err(&path, e))?;
            tables.insert(table).map_err(|e| tables_err(&path, e))?;
        }
    } else {
        log::warn!("{} not found; no structured tables loaded", path.display());
    }
    Ok(Index { graph, tables })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Auto,
    Graph,
    Table,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Mode::Auto),
            "graph" => Ok(Mode::Graph),
            "table" => Ok(Mode::Table),
            other => Err(format!("unknown mode {other:?} (expected auto, graph or table)")),
        }
    }
}

const TABLE_CUES: &[&str] = &["total", "sum", "average", "count", "compare"];

/// `auto` picks the table path when the question carries an aggregate or
/// comparison cue, else the graph path.
pub fn route(question: &str) -> Mode {
    let words: Vec<String> = crate::text::tokenize(question).iter().map(|t| t.text.to_lowercase()).collect();
    let cue = words.iter().any(|w| TABLE_CUES.contains(&w.as_str()))
        || words.windows(2).any(|w| w[0] == "more" && w[1] == "than");
    if cue {
        Mode::Table
    } else {
        Mode::Graph
    }
}

fn answer_request(
    question: &str,
    bundle: &ContextBundle,
    temperature: f64,
    seed: u64,
) -> Result<PromptRequest, GatewayError> {
    let context = render_context(bundle.chunks.iter().map(|c| (c.chunk_id.as_str(), c.text.as_str())));
    PromptRequest::new(
        TemplateId::Answer,
        [("context", context.as_str()), ("question", question)],
        SamplingParams { temperature, seed, ..Default::default() },
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphAnswer {
    pub answer: String,
    pub retrieval: Retrieval,
}

/// Graph path: anchors, expansion, context, answer template.
pub fn answer_graph(
    question: &str,
    index: &Index,
    cfg: &CliConfig,
    gateway: &Gateway,
) -> Result<GraphAnswer, PipelineError> {
    let retrieval = retrieve(question, &index.graph, gateway, &cfg.retrieval)?;
    if retrieval.anchors.anchors.is_empty() {
        return Err(PipelineError::NoAnchors(retrieval.anchors));
    }
    let req = answer_request(question, &retrieval.bundle, 0.0, cfg.entropy.seed)?;
    let answer = gateway.complete(&req)?.text;
    Ok(GraphAnswer { answer, retrieval })
}

#[derive(Debug, Clone, Serialize)]
pub struct TableAnswer {
    pub anchors: AnchorSet,
    pub context: ContextBundle,
    pub extracted_rows: usize,
    pub dropped_rows: usize,
    pub warnings: Vec<String>,
    pub plan: String,
    pub raw_outputs: Vec<String>,
    #[serde(skip)]
    pub result: ResultTable,
}

/// Context in chunk-id order, packed whole into the budget. Used when the
/// question anchors nothing.
fn all_chunks_context(graph: &HetGraph, char_budget: usize) -> ContextBundle {
    let mut bundle = ContextBundle { chunks: Vec::new(), total_chars: 0, provenance: BundleProvenance::default() };
    for c in graph.chunks() {
        let len = char_len(&c.text);
        if bundle.total_chars + len <= char_budget {
            bundle.total_chars += len;
            bundle.chunks.push(ContextChunk { chunk_id: c.chunk_id.clone(), text: c.text.clone(), score: 0.0 });
        }
    }
    bundle
}

/// Table path: context, table generation, plan synthesis, validation and
/// execution over the corpus tables plus the generated one.
pub fn answer_table(
    question: &str,
    index: &Index,
    cfg: &CliConfig,
    gateway: &Gateway,
) -> Result<TableAnswer, PipelineError> {
    let retrieval = retrieve(question, &index.graph, gateway, &cfg.retrieval)?;
    let context = if retrieval.anchors.anchors.is_empty() {
        all_chunks_context(&index.graph, cfg.retrieval.char_budget)
    } else {
        retrieval.bundle
    };
    let mut tables = index.tables.clone();
    let mut warnings = Vec::new();
    let (mut extracted_rows, mut dropped_rows) = (0, 0);
    let context_chunks: Vec<TextChunk> =
        context.chunks.iter().filter_map(|c| index.graph.chunk(&c.chunk_id).cloned()).collect();
    if context_chunks.is_empty() {
        warnings.push("no context chunks; skipped table generation".to_string());
    } else {
        let ex = generate_table(&context_chunks, &SchemaHint::default(), gateway)?;
        extracted_rows = ex.table.rows.len();
        dropped_rows = ex.dropped_rows;
        warnings.extend(ex.warnings);
        let name = ex.table.name().to_string();
        if tables.insert(ex.table).is_err() {
            warnings.push(format!("a corpus table is already named {name}; generated table not added"));
        }
    }

    let catalog = tables.catalog();
    let synthesized = synthesize_plan(question, &catalog, gateway, &cfg.reference_quarter)?;
    let plan_text = synthesized.plan.to_string();
    let validated = validate_plan(&synthesized.plan, &catalog)
        .map_err(|violations| PipelineError::Validation { plan: plan_text.clone(), violations })?;
    let result = execute(&validated, &tables)?;
    Ok(TableAnswer {
        anchors: retrieval.anchors,
        context,
        extracted_rows,
        dropped_rows,
        warnings,
        plan: validated.plan().to_string(),
        raw_outputs: synthesized.raw_outputs,
        result,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AskOutcome {
    pub report: EntropyReport,
    pub context: ContextBundle,
}

pub fn oracle_for(cfg: &CliConfig) -> Result<EquivalenceOracle, EntropyError> {
    match cfg.entropy.oracle {
        OracleMode::ExactNormalized => Ok(EquivalenceOracle::ExactNormalized),
        OracleMode::EmbeddingCosine => EquivalenceOracle::embedding(cfg.entropy.tau),
    }
}

/// Samples the graph path's answer `cfg.entropy.samples` times and reports
/// semantic entropy. Questions without anchors are answered without context.
pub fn ask(question: &str, index: &Index, cfg: &CliConfig, gateway: &Gateway) -> Result<AskOutcome, PipelineError> {
    let retrieval = retrieve(question, &index.graph, gateway, &cfg.retrieval)?;
    let context = retrieval.bundle;
    let req = answer_request(question, &context, cfg.entropy.temperature, cfg.entropy.seed)?;
    let report = uncertainty_report(
        question,
        &req,
        cfg.entropy.samples,
        &oracle_for(cfg)?,
        gateway,
        cfg.entropy.threshold_bits,
    )?;
    Ok(AskOutcome { report, context })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u32> = (0..50).collect();
        assert_eq!(parallel_map(&items, 4, |x| x * 2), items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(parallel_map(&Vec::<u32>::new(), 4, |x| *x).is_empty());
    }

    #[test]
    fn routing_cues() {
        assert_eq!(route("Find the total sales of all products in Q3"), Mode::Table);
        assert_eq!(route("products with more than 15% growth"), Mode::Table);
        assert_eq!(route("Who received Drug Y?"), Mode::Graph);
        assert_eq!(route("zzz qqq"), Mode::Graph);
    }

    #[test]
    fn sidecar_path() {
        assert_eq!(tables_path(Path::new("out/g.jsonl")), PathBuf::from("out/g.jsonl.tables.json"));
    }
}
