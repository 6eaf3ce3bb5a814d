//! Typed relational tables shared by ingestion, extraction and the executor.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Text,
    Number,
    Boolean,
    Date,
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataType::Text => "text",
            DataType::Number => "number",
            DataType::Boolean => "boolean",
            DataType::Date => "date",
        })
    }
}

/// Unit tag carried by numeric columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Percent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub data_type: DataType,
    #[serde(default = "default_nullable")]
    pub nullable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<Unit>,
}

fn default_nullable() -> bool {
    true
}

impl Column {
    pub fn new(name: impl Into<String>, data_type: DataType) -> Self {
        Column { name: name.into(), data_type, nullable: true, unit: None }
    }

    pub fn with_unit(mut self, unit: Unit) -> Self {
        self.unit = Some(unit);
        self
    }

    pub fn not_null(mut self) -> Self {
        self.nullable = false;
        self
    }
}

/// A single cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Number(f64),
    Text(String),
    Bool(bool),
    Date(NaiveDate),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn data_type(&self) -> Option<DataType> {
        match self {
            Value::Null => None,
            Value::Number(_) => Some(DataType::Number),
            Value::Text(_) => Some(DataType::Text),
            Value::Bool(_) => Some(DataType::Boolean),
            Value::Date(_) => Some(DataType::Date),
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Number(n) => {
                serde_json::Number::from_f64(*n).map(serde_json::Value::Number).unwrap_or(serde_json::Value::Null)
            }
            Value::Text(s) => serde_json::Value::String(s.clone()),
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::Date(d) => serde_json::Value::String(d.format("%Y-%m-%d").to_string()),
        }
    }

    /// Converts a JSON cell into a value of `column`'s type. Strings are
    /// re-inferred, so `"20%"` becomes a percent number.
    pub fn from_json(json: &serde_json::Value, column: &Column) -> Result<Value, String> {
        use serde_json::Value as J;
        let value = match (json, column.data_type) {
            (J::Null, _) => Value::Null,
            (J::Number(n), DataType::Number) => {
                Value::Number(n.as_f64().ok_or_else(|| format!("number {n} out of range"))?)
            }
            (J::Bool(b), DataType::Boolean) => Value::Bool(*b),
            (J::String(s), DataType::Text) => Value::Text(s.clone()),
            (J::String(s), DataType::Date) => Value::Date(parse_date(s).ok_or_else(|| format!("invalid date {s:?}"))?),
            (J::String(s), DataType::Number) => match infer_cell(s) {
                CellGuess::Number { value, percent } => {
                    let unit = percent.then_some(Unit::Percent);
                    if unit != column.unit {
                        return Err(format!("unit mismatch for {s:?} in column {}", column.name));
                    }
                    Value::Number(value)
                }
                CellGuess::Null => Value::Null,
                _ => return Err(format!("{s:?} is not a number")),
            },
            (J::String(s), DataType::Boolean) => match infer_cell(s) {
                CellGuess::Bool(b) => Value::Bool(b),
                CellGuess::Null => Value::Null,
                _ => return Err(format!("{s:?} is not a boolean")),
            },
            (other, ty) => return Err(format!("{other} does not conform to {ty}")),
        };
        if value.is_null() && !column.nullable {
            return Err(format!("null in non-nullable column {}", column.name));
        }
        Ok(value)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            Value::Number(n) => write!(f, "{n}"),
            Value::Text(s) => f.write_str(s),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
        }
    }
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

/// Result of classifying one raw cell. Order of checks: null literal, number,
/// boolean, text.
#[derive(Debug, Clone, PartialEq)]
pub enum CellGuess {
    Null,
    Number { value: f64, percent: bool },
    Bool(bool),
    Text,
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)%?$").expect("number regex"))
}

pub fn infer_cell(raw: &str) -> CellGuess {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("null") {
        return CellGuess::Null;
    }
    if number_re().is_match(s) {
        let (digits, percent) = match s.strip_suffix('%') {
            Some(d) => (d, true),
            None => (s, false),
        };
        if let Ok(value) = digits.parse::<f64>() {
            return CellGuess::Number { value, percent };
        }
    }
    if s.eq_ignore_ascii_case("true") {
        return CellGuess::Bool(true);
    }
    if s.eq_ignore_ascii_case("false") {
        return CellGuess::Bool(false);
    }
    CellGuess::Text
}

/// Column type inferred from raw cells; `None` entries are nulls.
///
/// All non-null cells must agree on kind, otherwise the column is text. A
/// numeric column carries the percent unit only when every number had `%`;
/// a mix of percent and plain numbers falls back to text.
pub fn infer_column(cells: &[Option<&str>]) -> (DataType, Option<Unit>) {
    let mut kind: Option<(DataType, bool)> = None;
    for raw in cells.iter().flatten() {
        let guess = match infer_cell(raw) {
            CellGuess::Null => continue,
            CellGuess::Number { percent, .. } => (DataType::Number, percent),
            CellGuess::Bool(_) => (DataType::Boolean, false),
            CellGuess::Text => return (DataType::Text, None),
        };
        match kind {
            None => kind = Some(guess),
            Some(k) if k == guess => {}
            Some(_) => return (DataType::Text, None),
        }
    }
    match kind {
        Some((DataType::Number, true)) => (DataType::Number, Some(Unit::Percent)),
        Some((ty, _)) => (ty, None),
        None => (DataType::Text, None),
    }
}

/// Typed value for a raw cell in a column whose type came from [`infer_column`].
pub fn typed_cell(raw: Option<&str>, ty: DataType) -> Value {
    let Some(raw) = raw else { return Value::Null };
    match (infer_cell(raw), ty) {
        (CellGuess::Null, _) => Value::Null,
        (CellGuess::Number { value, .. }, DataType::Number) => Value::Number(value),
        (CellGuess::Bool(b), DataType::Boolean) => Value::Bool(b),
        _ => Value::Text(raw.to_string()),
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TableError {
    #[error("table name is empty")]
    EmptyName,
    #[error("duplicate column {0:?} (names are case-insensitive)")]
    DuplicateColumn(String),
    #[error("row {row} has {found} cells, expected {expected}")]
    Arity { row: usize, found: usize, expected: usize },
    #[error("row {row}, column {column}: {message}")]
    Cell { row: usize, column: String, message: String },
    #[error("duplicate table {0:?}")]
    DuplicateTable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<Column>,
}

impl TableSchema {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Self, TableError> {
        let schema = TableSchema { name: name.into(), columns };
        schema.check()?;
        Ok(schema)
    }

    pub fn check(&self) -> Result<(), TableError> {
        if self.name.trim().is_empty() {
            return Err(TableError::EmptyName);
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.to_lowercase()) {
                return Err(TableError::DuplicateColumn(c.name.clone()));
            }
        }
        Ok(())
    }

    /// Case-insensitive column lookup.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.column_index(name).map(|i| &self.columns[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: TableSchema,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(schema: TableSchema, rows: Vec<Vec<Value>>) -> Result<Self, TableError> {
        schema.check()?;
        for (i, row) in rows.iter().enumerate() {
            check_row(&schema, i, row)?;
        }
        Ok(Table { schema, rows })
    }

    pub fn empty(schema: TableSchema) -> Self {
        Table { schema, rows: Vec::new() }
    }

    pub fn name(&self) -> &str {
        &self.schema.name
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema": self.schema,
            "rows": self.rows.iter()
                .map(|r| r.iter().map(Value::to_json).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        })
    }

    pub fn from_json(json: &serde_json::Value) -> Result<Self, String> {
        let schema: TableSchema = serde_json::from_value(json.get("schema").cloned().unwrap_or_default())
            .map_err(|e| format!("bad table schema: {e}"))?;
        let raw_rows = json.get("rows").and_then(|r| r.as_array()).ok_or("table record has no rows array")?;
        let mut rows = Vec::with_capacity(raw_rows.len());
        for (i, raw) in raw_rows.iter().enumerate() {
            let cells = raw.as_array().ok_or_else(|| format!("row {i} is not an array"))?;
            if cells.len() != schema.columns.len() {
                return Err(format!("row {i} has {} cells, expected {}", cells.len(), schema.columns.len()));
            }
            let row = cells
                .iter()
                .zip(&schema.columns)
                .map(|(c, col)| Value::from_json(c, col))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| format!("row {i}: {e}"))?;
            rows.push(row);
        }
        Table::new(schema, rows).map_err(|e| e.to_string())
    }
}

pub(crate) fn check_row(schema: &TableSchema, index: usize, row: &[Value]) -> Result<(), TableError> {
    if row.len() != schema.columns.len() {
        return Err(TableError::Arity { row: index, found: row.len(), expected: schema.columns.len() });
    }
    for (cell, col) in row.iter().zip(&schema.columns) {
        let ok = match cell.data_type() {
            None => col.nullable,
            Some(ty) => ty == col.data_type,
        };
        if !ok {
            return Err(TableError::Cell {
                row: index,
                column: col.name.clone(),
                message: format!("{cell:?} does not conform to {}", col.data_type),
            });
        }
    }
    Ok(())
}

/// Table schemas by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub tables: BTreeMap<String, TableSchema>,
}

impl Catalog {
    pub fn new(schemas: impl IntoIterator<Item = TableSchema>) -> Result<Self, TableError> {
        let mut tables = BTreeMap::new();
        for s in schemas {
            s.check()?;
            if tables.contains_key(&s.name) {
                return Err(TableError::DuplicateTable(s.name));
            }
            tables.insert(s.name.clone(), s);
        }
        Ok(Catalog { tables })
    }

    pub fn get(&self, name: &str) -> Option<&TableSchema> {
        self.tables.get(name)
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

/// Materialized tables by name; the executor's input.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableSet {
    pub tables: BTreeMap<String, Table>,
}

impl TableSet {
    pub fn new(tables: impl IntoIterator<Item = Table>) -> Result<Self, TableError> {
        let mut map = BTreeMap::new();
        for t in tables {
            if map.contains_key(t.name()) {
                return Err(TableError::DuplicateTable(t.name().to_string()));
            }
            map.insert(t.name().to_string(), t);
        }
        Ok(TableSet { tables: map })
    }

    pub fn insert(&mut self, table: Table) -> Result<(), TableError> {
        if self.tables.contains_key(table.name()) {
            return Err(TableError::DuplicateTable(table.name().to_string()));
        }
        self.tables.insert(table.name().to_string(), table);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }

    pub fn catalog(&self) -> Catalog {
        Catalog { tables: self.tables.iter().map(|(k, t)| (k.clone(), t.schema.clone())).collect() }
    }
}
