//! Corpus loading, text chunking and structured-file parsing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::stable_hex_id;
use crate::table::{infer_column, typed_cell, Column, Table, TableError, TableSchema};
use crate::text::{char_len, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Text,
    Csv,
    Json,
}

impl SourceFormat {
    /// Classification by extension, case-insensitive.
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "txt" => Some(SourceFormat::Text),
            "csv" => Some(SourceFormat::Csv),
            "json" => Some(SourceFormat::Json),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    /// Corpus-relative, `/`-separated.
    pub path: String,
    pub format: SourceFormat,
    #[serde(skip)]
    pub content: String,
    pub metadata: BTreeMap<String, String>,
}

impl SourceDocument {
    pub fn new(path: impl Into<String>, format: SourceFormat, content: impl Into<String>) -> Self {
        let path = path.into();
        let content = content.into();
        let title = Path::new(&path).file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let mut metadata = BTreeMap::new();
        metadata.insert("chars".to_string(), char_len(&content).to_string());
        metadata.insert("title".to_string(), title);
        SourceDocument { doc_id: doc_id_for(&path), path, format, content, metadata }
    }

    pub fn title(&self) -> &str {
        self.metadata.get("title").map(String::as_str).unwrap_or_default()
    }
}

pub fn doc_id_for(relative_path: &str) -> String {
    stable_hex_id(relative_path.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextChunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub span: Span,
    pub text: String,
}

impl TextChunk {
    pub fn id_for(doc_id: &str, ordinal: usize) -> String {
        format!("{doc_id}#{ordinal}")
    }

    pub fn char_len(&self) -> usize {
        self.span.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkingPolicy {
    pub max_chars: usize,
    pub overlap_chars: usize,
}

impl Default for ChunkingPolicy {
    fn default() -> Self {
        ChunkingPolicy { max_chars: 1000, overlap_chars: 200 }
    }
}

impl ChunkingPolicy {
    pub fn new(max_chars: usize, overlap_chars: usize) -> Result<Self, IngestError> {
        let p = ChunkingPolicy { max_chars, overlap_chars };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), IngestError> {
        if self.max_chars == 0 || self.overlap_chars >= self.max_chars {
            return Err(IngestError::Policy { max_chars: self.max_chars, overlap_chars: self.overlap_chars });
        }
        Ok(())
    }

    fn stride(&self) -> usize {
        self.max_chars - self.overlap_chars
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("corpus root {path} is not a readable directory: {reason}")]
    Root { path: PathBuf, reason: String },
    #[error(
        "invalid chunking policy: overlap_chars ({overlap_chars}) must be < max_chars ({max_chars}) and max_chars > 0"
    )]
    Policy { max_chars: usize, overlap_chars: usize },
    #[error("{path}: document format is {found:?}, expected {expected}")]
    WrongFormat { path: String, found: SourceFormat, expected: &'static str },
    #[error("{path}: malformed CSV at line {line}, byte {byte}: {message}")]
    Csv { path: String, line: u64, byte: u64, message: String },
    #[error("{path}: ragged CSV rows {rows:?} (header has {expected} fields)")]
    RaggedCsv { path: String, rows: Vec<usize>, expected: usize },
    #[error("{path}: malformed JSON at line {line}, column {column}: {message}")]
    Json { path: String, line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Shape { path: String, message: String },
    #[error("{path}: {source}")]
    Table { path: String, source: TableError },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatCounts {
    pub text: usize,
    pub csv: usize,
    pub json: usize,
}

impl FormatCounts {
    pub fn total(&self) -> usize {
        self.text + self.csv + self.json
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileError {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub documents: Vec<SourceDocument>,
    /// Regular files with an unrecognized extension.
    pub skipped: Vec<String>,
    pub errors: Vec<FileError>,
    pub counts: FormatCounts,
}

impl CorpusManifest {
    /// One JSON record per document, then one per skipped file and per error.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for d in &self.documents {
            let rec = serde_json::json!({
                "record": "document",
                "doc_id": d.doc_id,
                "path": d.path,
                "format": d.format,
                "metadata": d.metadata,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        for s in &self.skipped {
            out.push_str(&serde_json::json!({ "record": "skipped", "path": s }).to_string());
            out.push('\n');
        }
        for e in &self.errors {
            out.push_str(&serde_json::json!({ "record": "error", "path": e.path, "message": e.message }).to_string());
            out.push('\n');
        }
        out
    }

    pub fn text_documents(&self) -> impl Iterator<Item = &SourceDocument> {
        self.documents.iter().filter(|d| d.format == SourceFormat::Text)
    }
}

/// Walks `root` and reads every regular file with a recognized extension.
pub fn load_corpus(root: &Path) -> Result<CorpusManifest, IngestError> {
    let meta = fs::metadata(root).map_err(|e| IngestError::Root { path: root.to_path_buf(), reason: e.to_string() })?;
    if !meta.is_dir() {
        return Err(IngestError::Root { path: root.to_path_buf(), reason: "not a directory".into() });
    }
    fs::read_dir(root).map_err(|e| IngestError::Root { path: root.to_path_buf(), reason: e.to_string() })?;

    let mut documents = Vec::new();
    let mut skipped = Vec::new();
    let mut errors = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                let path = e.path().map(|p| relative(root, p)).unwrap_or_default();
                errors.push(FileError { path, message: e.to_string() });
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = relative(root, entry.path());
        let Some(format) = SourceFormat::from_path(entry.path()) else {
            skipped.push(rel);
            continue;
        };
        match fs::read_to_string(entry.path()) {
            Ok(content) => documents.push(SourceDocument::new(rel, format, content)),
            Err(e) => errors.push(FileError { path: rel, message: e.to_string() }),
        }
    }
    documents.sort_by(|a, b| a.path.cmp(&b.path));
    skipped.sort();
    errors.sort_by(|a, b| a.path.cmp(&b.path));

    let mut counts = FormatCounts::default();
    for d in &documents {
        match d.format {
            SourceFormat::Text => counts.text += 1,
            SourceFormat::Csv => counts.csv += 1,
            SourceFormat::Json => counts.json += 1,
        }
    }
    Ok(CorpusManifest { root: root.to_path_buf(), documents, skipped, errors, counts })
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/")
}

/// Sliding-window segmentation over characters.
///
/// Chunk `i` covers `[i*stride, min(i*stride + max_chars, len))` with
/// `stride = max_chars - overlap_chars`; the last chunk ends at the document end.
pub fn chunk_document(doc: &SourceDocument, policy: &ChunkingPolicy) -> Result<Vec<TextChunk>, IngestError> {
    if doc.format != SourceFormat::Text {
        return Err(IngestError::WrongFormat { path: doc.path.clone(), found: doc.format, expected: "text" });
    }
    policy.check()?;
    let offsets: Vec<usize> = doc.content.char_indices().map(|(b, _)| b).chain([doc.content.len()]).collect();
    let len = offsets.len() - 1;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + policy.max_chars).min(len);
        let ordinal = chunks.len();
        chunks.push(TextChunk {
            chunk_id: TextChunk::id_for(&doc.doc_id, ordinal),
            doc_id: doc.doc_id.clone(),
            ordinal,
            span: Span::new(start, end),
            text: doc.content[offsets[start]..offsets[end]].to_string(),
        });
        if end == len {
            break;
        }
        start += policy.stride();
    }
    Ok(chunks)
}

/// Parses a CSV or JSON document into a table named after the file stem.
pub fn parse_structured(doc: &SourceDocument) -> Result<Table, IngestError> {
    let name = doc.title().to_string();
    match doc.format {
        SourceFormat::Csv => parse_csv(&doc.path, &name, &doc.content),
        SourceFormat::Json => parse_json(&doc.path, &name, &doc.content),
        SourceFormat::Text => {
            Err(IngestError::WrongFormat { path: doc.path.clone(), found: doc.format, expected: "csv or json" })
        }
    }
}

/// Line and byte of a quote left open at end of input. The csv reader
/// accepts such input as one long field.
fn unterminated_quote(content: &str) -> Option<(u64, u64)> {
    let (mut line, mut open, mut prev) = (1u64, None, '\n');
    let mut chars = content.char_indices().peekable();
    while let Some((byte, c)) = chars.next() {
        let field_start = matches!(prev, ',' | '\n' | '\r');
        prev = c;
        match (c, open) {
            ('"', None) if field_start => open = Some((line, byte as u64)),
            ('"', Some(_)) if chars.peek().map(|p| p.1) == Some('"') => {
                chars.next();
            }
            ('"', Some(_)) => open = None,
            ('\n', _) => line += 1,
            _ => {}
        }
    }
    open
}

fn parse_csv(path: &str, name: &str, content: &str) -> Result<Table, IngestError> {
    if let Some((line, byte)) = unterminated_quote(content) {
        return Err(IngestError::Csv {
            path: path.to_string(),
            line,
            byte,
            message: "quoted field is never closed".into(),
        });
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(content.as_bytes());
    let csv_err = |e: csv::Error| {
        let (line, byte) = e.position().map(|p| (p.line(), p.byte())).unwrap_or((0, 0));
        IngestError::Csv { path: path.to_string(), line, byte, message: e.to_string() }
    };
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
    if header.iter().any(String::is_empty) {
        return Err(IngestError::Shape { path: path.into(), message: "CSV header has an empty column name".into() });
    }
    let mut records = Vec::new();
    let mut ragged = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        // Row numbers are 1-based data rows (the header is row 0).
        if rec.len() != header.len() {
            ragged.push(i + 1);
            continue;
        }
        records.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    if !ragged.is_empty() {
        return Err(IngestError::RaggedCsv { path: path.into(), rows: ragged, expected: header.len() });
    }
    let raw: Vec<Vec<Option<String>>> = records.into_iter().map(|r| r.into_iter().map(Some).collect()).collect();
    build_table(path, name, header, raw)
}

fn parse_json(path: &str, name: &str, content: &str) -> Result<Table, IngestError> {
    use serde_json::Value as J;
    let root: J = serde_json::from_str(content).map_err(|e| IngestError::Json {
        path: path.into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let objects: Vec<serde_json::Map<String, J>> = match root {
        J::Object(o) => vec![o],
        J::Array(items) => items
            .into_iter()
            .enumerate()
            .map(|(i, item)| match item {
                J::Object(o) => Ok(o),
                other => Err(IngestError::Shape {
                    path: path.into(),
                    message: format!("array element {i} is {}, expected an object", json_kind(&other)),
                }),
            })
            .collect::<Result<_, _>>()?,
        other => {
            return Err(IngestError::Shape {
                path: path.into(),
                message: format!("top-level {} cannot be read as a table", json_kind(&other)),
            })
        }
    };

    let flat: Vec<Vec<(String, Option<String>)>> = objects.iter().map(flatten_object).collect();
    let mut header: Vec<String> = Vec::new();
    for row in &flat {
        for (k, _) in row {
            if !header.contains(k) {
                header.push(k.clone());
            }
        }
    }
    let raw = flat
        .into_iter()
        .map(|row| {
            let mut cells = vec![None; header.len()];
            for (k, v) in row {
                let i = header.iter().position(|h| *h == k).expect("key in header");
                cells[i] = v;
            }
            cells
        })
        .collect();
    build_table(path, name, header, raw)
}

fn json_kind(v: &serde_json::Value) -> &'static str {
    match v {
        serde_json::Value::Null => "null",
        serde_json::Value::Bool(_) => "a boolean",
        serde_json::Value::Number(_) => "a number",
        serde_json::Value::String(_) => "a string",
        serde_json::Value::Array(_) => "an array",
        serde_json::Value::Object(_) => "an object",
    }
}

/// Flattens one level of nesting into dotted keys; anything deeper is kept as
/// JSON text.
fn flatten_object(obj: &serde_json::Map<String, serde_json::Value>) -> Vec<(String, Option<String>)> {
    use serde_json::Value as J;
    let mut out = Vec::new();
    for (k, v) in obj {
        match v {
            J::Object(inner) => {
                for (ik, iv) in inner {
                    out.push((format!("{k}.{ik}"), scalar_text(iv)));
                }
            }
            _ => out.push((k.clone(), scalar_text(v))),
        }
    }
    out
}

fn scalar_text(v: &serde_json::Value) -> Option<String> {
    use serde_json::Value as J;
    match v {
        J::Null => None,
        J::String(s) => Some(s.clone()),
        J::Bool(b) => Some(b.to_string()),
        J::Number(n) => Some(n.to_string()),
        J::Array(_) | J::Object(_) => Some(v.to_string()),
    }
}

fn build_table(
    path: &str,
    name: &str,
    header: Vec<String>,
    raw: Vec<Vec<Option<String>>>,
) -> Result<Table, IngestError> {
    let mut columns = Vec::with_capacity(header.len());
    for (ci, h) in header.iter().enumerate() {
        let cells: Vec<Option<&str>> = raw.iter().map(|r| r[ci].as_deref()).collect();
        let (ty, unit) = infer_column(&cells);
        let mut col = Column::new(h.clone(), ty);
        col.unit = unit;
        columns.push(col);
    }
    let schema = TableSchema::new(name, columns).map_err(|source| IngestError::Table { path: path.into(), source })?;
    let rows = raw
        .iter()
        .map(|r| r.iter().zip(&schema.columns).map(|(cell, col)| typed_cell(cell.as_deref(), col.data_type)).collect())
        .collect();
    Table::new(schema, rows).map_err(|source| IngestError::Table { path: path.into(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{DataType, Unit, Value};
    use crate::text::char_slice;

    fn text_doc(content: &str) -> SourceDocument {
        SourceDocument::new("doc.txt", SourceFormat::Text, content)
    }

    fn spans(chunks: &[TextChunk]) -> Vec<(usize, usize)> {
        chunks.iter().map(|c| (c.span.start, c.span.end)).collect()
    }

    #[test]
    fn empty_document_has_no_chunks() {
        let chunks = chunk_document(&text_doc(""), &ChunkingPolicy::default()).unwrap();
        assert!(chunks.is_empty());
    }

    #[test]
    fn sliding_window_spans() {
        let doc = text_doc(&"x".repeat(2500));
        let chunks = chunk_document(&doc, &ChunkingPolicy::default()).unwrap();
        assert_eq!(spans(&chunks), [(0, 1000), (800, 1800), (1600, 2500)]);
        assert_eq!(chunks[2].ordinal, 2);
        assert_eq!(chunks[2].chunk_id, format!("{}#2", doc.doc_id));
    }

    #[test]
    fn short_document_is_one_chunk() {
        let doc = text_doc(&"y".repeat(500));
        let chunks = chunk_document(&doc, &ChunkingPolicy::default()).unwrap();
        assert_eq!(spans(&chunks), [(0, 500)]);
    }

    #[test]
    fn chunk_text_matches_span_for_multibyte() {
        let doc = text_doc("héllo wörld ünïcode");
        let chunks = chunk_document(&doc, &ChunkingPolicy::new(7, 2).unwrap()).unwrap();
        for c in &chunks {
            assert_eq!(char_slice(&doc.content, c.span), Some(c.text.as_str()));
        }
    }

    #[test]
    fn policy_rejects_overlap_at_or_above_window() {
        assert!(ChunkingPolicy::new(10, 10).is_err());
        assert!(ChunkingPolicy::new(0, 0).is_err());
        assert!(
            chunk_document(&SourceDocument::new("a.csv", SourceFormat::Csv, "a"), &ChunkingPolicy::default()).is_err()
        );
    }

    #[test]
    fn csv_types_by_inference() {
        let doc = SourceDocument::new("t/sales.csv", SourceFormat::Csv, "product,sales\nA,10\nB,20");
        let t = parse_structured(&doc).unwrap();
        assert_eq!(t.name(), "sales");
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.schema.columns[0].data_type, DataType::Text);
        assert_eq!(t.schema.columns[1].data_type, DataType::Number);
        assert_eq!(t.rows[1], vec![Value::Text("B".into()), Value::Number(20.0)]);
    }

    #[test]
    fn csv_percent_unit_and_nulls() {
        let doc = SourceDocument::new("c.csv", SourceFormat::Csv, "q,chg,ok\nQ2,20%,true\nQ3,,FALSE\n");
        let t = parse_structured(&doc).unwrap();
        assert_eq!(t.schema.columns[1].unit, Some(Unit::Percent));
        assert_eq!(t.schema.columns[2].data_type, DataType::Boolean);
        assert_eq!(t.rows[1][1], Value::Null);
        assert_eq!(t.rows[1][2], Value::Bool(false));
    }

    #[test]
    fn ragged_csv_lists_rows() {
        let doc = SourceDocument::new("r.csv", SourceFormat::Csv, "a,b\n1,2\n3\n4,5\n6,7,8\n");
        match parse_structured(&doc) {
            Err(IngestError::RaggedCsv { rows, expected, .. }) => {
                assert_eq!(rows, [2, 4]);
                assert_eq!(expected, 2);
            }
            other => panic!("expected ragged error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_csv_cites_position() {
        let doc = SourceDocument::new("m.csv", SourceFormat::Csv, "a,b\n\"1,2\n");
        let err = parse_structured(&doc).unwrap_err();
        assert!(matches!(err, IngestError::Csv { line: 2, byte: 4, .. }), "{err:?}");
        let inch = SourceDocument::new("i.csv", SourceFormat::Csv, "a,b\n5\" screen,2\n\"x,\"\"y\"\"\",3\n");
        let t = parse_structured(&inch).unwrap();
        assert_eq!(t.rows[1][0], Value::Text("x,\"y\"".into()));
    }

    #[test]
    fn json_single_row() {
        let doc = SourceDocument::new("j.json", SourceFormat::Json, r#"[{"q":"Q2","pct":20}]"#);
        let t = parse_structured(&doc).unwrap();
        let names: Vec<_> = t.schema.columns.iter().map(|c| (c.name.as_str(), c.data_type)).collect();
        assert_eq!(names, [("q", DataType::Text), ("pct", DataType::Number)]);
        assert_eq!(t.rows, vec![vec![Value::Text("Q2".into()), Value::Number(20.0)]]);
    }

    #[test]
    fn json_union_of_keys() {
        let doc = SourceDocument::new("j.json", SourceFormat::Json, r#"[{"a":1},{"b":2}]"#);
        let t = parse_structured(&doc).unwrap();
        assert_eq!(t.rows, vec![vec![Value::Number(1.0), Value::Null], vec![Value::Null, Value::Number(2.0)]]);
    }

    #[test]
    fn json_flattening() {
        let doc = SourceDocument::new(
            "j.json",
            SourceFormat::Json,
            r#"{"id":1,"meta":{"src":"web","deep":{"x":1}},"tags":["a"]}"#,
        );
        let t = parse_structured(&doc).unwrap();
        let names: Vec<_> = t.schema.columns.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["id", "meta.src", "meta.deep", "tags"]);
        assert_eq!(t.rows[0][2], Value::Text(r#"{"x":1}"#.into()));
        assert_eq!(t.rows[0][3], Value::Text(r#"["a"]"#.into()));
    }

    #[test]
    fn json_scalars_and_bad_bytes_fail() {
        let scalar = SourceDocument::new("s.json", SourceFormat::Json, "42");
        assert!(matches!(parse_structured(&scalar), Err(IngestError::Shape { .. })));
        let bad = SourceDocument::new("b.json", SourceFormat::Json, "[{\"a\":1},\n{\"a\":}]");
        match parse_structured(&bad) {
            Err(IngestError::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
