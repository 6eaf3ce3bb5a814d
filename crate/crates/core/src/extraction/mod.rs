//! Model-driven table generation and plan synthesis, plus plan validation.

pub mod rules;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, PromptRequest, SamplingParams, TemplateId};
use crate::ingest::TextChunk;
use crate::relexec::{parse_plan, PlanParseError, QueryPlan};
use crate::table::{check_row, Catalog, Column, Table, TableSchema, Value};

pub use validate::{validate_plan, Violation, ViolationKind};

/// Name given to tables generated from text.
pub const EXTRACTED_TABLE: &str = "extracted";

/// Optional target layout for [`generate_table`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaHint {
    pub schema: Option<TableSchema>,
    #[serde(default)]
    pub descriptions: BTreeMap<String, String>,
}

impl SchemaHint {
    pub fn new(schema: TableSchema) -> Self {
        SchemaHint { schema: Some(schema), descriptions: BTreeMap::new() }
    }
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("no chunks to extract from")]
    NoChunks,
    #[error("target schema: {0}")]
    Schema(String),
    #[error("chunk {chunk_id}: {source}")]
    Gateway { chunk_id: String, source: GatewayError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableExtraction {
    pub table: Table,
    pub dropped_rows: usize,
    pub warnings: Vec<String>,
}

/// Asks the backend for rows in every nonblank chunk and keeps only rows that
/// type-check against the schema. Without a hint, the first well-formed
/// column list the backend returns becomes the schema.
pub fn generate_table(
    chunks: &[TextChunk],
    hint: &SchemaHint,
    gateway: &Gateway,
) -> Result<TableExtraction, ExtractionError> {
    if chunks.is_empty() {
        return Err(ExtractionError::NoChunks);
    }
    let mut schema = match &hint.schema {
        Some(s) => {
            s.check().map_err(|e| ExtractionError::Schema(e.to_string()))?;
            Some(s.clone())
        }
        None => None,
    };
    let schema_text = match &schema {
        Some(s) => {
            let mut v = serde_json::to_value(s).expect("schema serializes");
            if !hint.descriptions.is_empty() {
                v["descriptions"] = serde_json::to_value(&hint.descriptions).expect("map serializes");
            }
            v.to_string()
        }
        None => "(none; choose suitable columns)".to_string(),
    };

    let mut rows = Vec::new();
    let mut dropped = 0;
    let mut warnings = Vec::new();
    for chunk in chunks {
        if chunk.text.trim().is_empty() {
            continue;
        }
        let req = PromptRequest::new(
            TemplateId::TableExtract,
            [("schema", schema_text.as_str()), ("text", chunk.text.as_str())],
            SamplingParams::default(),
        )
        .map_err(|source| ExtractionError::Gateway { chunk_id: chunk.chunk_id.clone(), source })?;
        let reply = gateway
            .complete(&req)
            .map_err(|source| ExtractionError::Gateway { chunk_id: chunk.chunk_id.clone(), source })?;
        let parsed = parse_table_reply(&reply.text, schema.as_ref());
        if schema.is_none() {
            schema = parsed.schema;
        }
        dropped += parsed.dropped_rows;
        warnings.extend(parsed.warnings.into_iter().map(|w| format!("chunk {}: {w}", chunk.chunk_id)));
        rows.extend(parsed.rows);
    }
    let schema = match schema {
        Some(s) => s,
        None => TableSchema::new(EXTRACTED_TABLE, rules::default_columns()).expect("default schema is valid"),
    };
    if rows.is_empty() {
        warnings.push("no valid rows extracted".to_string());
    }
    let table = Table::new(schema, rows).expect("rows were checked one by one");
    Ok(TableExtraction { table, dropped_rows: dropped, warnings })
}

/// Rows recovered from one `table_extract` reply.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplyRows {
    /// The schema the rows conform to: the target, or the reply's own column
    /// list when no target was given and that list is well formed.
    pub schema: Option<TableSchema>,
    pub rows: Vec<Vec<Value>>,
    pub dropped_rows: usize,
    pub warnings: Vec<String>,
}

/// Parses and re-validates one backend reply. Total over arbitrary text:
/// every returned row satisfies the returned schema.
pub fn parse_table_reply(reply: &str, target: Option<&TableSchema>) -> ReplyRows {
    let mut out = ReplyRows { schema: target.cloned(), ..Default::default() };
    let parsed: Json = match serde_json::from_str(strip_fence(reply)) {
        Ok(v) => v,
        Err(e) => {
            out.warnings.push(format!("response is not JSON ({e})"));
            return out;
        }
    };
    let returned_columns: Option<Vec<Column>> =
        parsed.get("columns").and_then(|c| serde_json::from_value(c.clone()).ok());
    if out.schema.is_none() {
        match returned_columns.clone().map(|cols| TableSchema::new(EXTRACTED_TABLE, cols)) {
            Some(Ok(s)) => out.schema = Some(s),
            _ => {
                out.warnings.push("no usable column list in response".to_string());
                return out;
            }
        }
    }
    let schema = out.schema.clone().expect("schema set above");
    let Some(raw_rows) = parsed.get("rows").and_then(Json::as_array) else {
        out.warnings.push("response has no rows array".to_string());
        return out;
    };
    for raw in raw_rows {
        let checked = conform_row(raw, returned_columns.as_deref(), &schema)
            .and_then(|row| check_row(&schema, out.rows.len(), &row).map(|_| row).map_err(|e| e.to_string()));
        match checked {
            Ok(row) => out.rows.push(row),
            Err(e) => {
                out.dropped_rows += 1;
                out.warnings.push(format!("dropped row: {e}"));
            }
        }
    }
    out
}

fn strip_fence(s: &str) -> &str {
    let t = s.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.split_once('\n').map_or("", |(_, body)| body);
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

/// Maps one backend row onto the target schema. Array rows are positional
/// unless the backend's own column list names every target column; object
/// rows are keyed by column name.
fn conform_row(raw: &Json, returned: Option<&[Column]>, target: &TableSchema) -> Result<Vec<Value>, String> {
    let cells: Vec<Json> = match raw {
        Json::Array(cells) => match returned {
            Some(cols) if cols.len() == cells.len() => {
                let by_name: Option<Vec<Json>> = target
                    .columns
                    .iter()
                    .map(|t| cols.iter().position(|c| c.name.eq_ignore_ascii_case(&t.name)).map(|i| cells[i].clone()))
                    .collect();
                by_name.unwrap_or_else(|| cells.clone())
            }
            _ => cells.clone(),
        },
        Json::Object(map) => target
            .columns
            .iter()
            .map(|c| map.iter().find(|(k, _)| k.eq_ignore_ascii_case(&c.name)).map_or(Json::Null, |(_, v)| v.clone()))
            .collect(),
        other => return Err(format!("row is not an array or object: {other}")),
    };
    if cells.len() != target.columns.len() {
        return Err(format!("{} cells for {} columns", cells.len(), target.columns.len()));
    }
    cells
        .iter()
        .zip(&target.columns)
        .map(|(cell, col)| Value::from_json(cell, col).map_err(|e| format!("column {}: {e}", col.name)))
        .collect()
}

/// A parsed plan together with the backend text it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedPlan {
    pub plan: QueryPlan,
    pub raw_outputs: Vec<String>,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no parseable plan after retry: {second_error} (first attempt: {first_error})")]
    Unparseable {
        first_output: String,
        first_error: PlanParseError,
        second_output: String,
        second_error: PlanParseError,
    },
}

/// Asks the backend for a plan in the canonical text form. A parse failure
/// is retried once with the error appended to the prompt.
pub fn synthesize_plan(
    nlq: &str,
    catalog: &Catalog,
    gateway: &Gateway,
    reference_quarter: &str,
) -> Result<SynthesizedPlan, SynthesisError> {
    if catalog.is_empty() {
        return Err(SynthesisError::EmptyCatalog);
    }
    let catalog_json = serde_json::to_string(catalog).expect("catalog serializes");
    let ask = |feedback: &str| -> Result<String, GatewayError> {
        let req = PromptRequest::new(
            TemplateId::PlanSynthesis,
            [
                ("reference_quarter", reference_quarter),
                ("catalog", catalog_json.as_str()),
                ("question", nlq),
                ("feedback", feedback),
            ],
            SamplingParams::default(),
        )?;
        Ok(gateway.complete(&req)?.text)
    };
    let first = ask("")?;
    let first_error = match parse_plan(&first) {
        Ok(plan) => return Ok(SynthesizedPlan { plan, raw_outputs: vec![first] }),
        Err(e) => e,
    };
    log::debug!("plan parse failed, retrying: {first_error}");
    let feedback =
        format!("\nYour previous answer did not parse ({first_error}). It was:\n{first}\nReply with only the plan.");
    let second = ask(&feedback)?;
    match parse_plan(&second) {
        Ok(plan) => Ok(SynthesizedPlan { plan, raw_outputs: vec![first, second] }),
        Err(second_error) => {
            Err(SynthesisError::Unparseable { first_output: first, first_error, second_output: second, second_error })
        }
    }
}
