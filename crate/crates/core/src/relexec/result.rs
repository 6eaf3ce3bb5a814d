use serde::{Deserialize, Serialize};

use crate::table::{Column, TableSchema, Unit, Value};

/// One input row: `(table, row index)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowRef {
    pub table: String,
    pub row: usize,
}

/// Executor output. `provenance[i]` is the sorted multiset of input rows
/// that produced `rows[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub schema: TableSchema,
    pub rows: Vec<Vec<Value>>,
    pub provenance: Vec<Vec<RowRef>>,
}

impl ResultTable {
    pub fn columns(&self) -> &[Column] {
        &self.schema.columns
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn render_cell(v: &Value, col: &Column) -> String {
        match (v, col.unit) {
            (Value::Number(n), Some(Unit::Percent)) => format!("{n}%"),
            _ => v.to_string(),
        }
    }

    /// Aligned plain-text rendering with a header rule.
    pub fn to_aligned_text(&self) -> String {
        let headers: Vec<String> = self.schema.columns.iter().map(|c| c.name.clone()).collect();
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().zip(&self.schema.columns).map(|(v, c)| Self::render_cell(v, c)).collect())
            .collect();
        let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |items: &[String]| -> String {
            items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&headers);
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
        out.push('\n');
        for row in &cells {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    /// RFC 4180 CSV with a header row; nulls are empty fields.
    pub fn to_csv(&self) -> String {
        let escape = |s: &str| {
            if s.contains([',', '"', '\n', '\r']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = self.schema.columns.iter().map(|c| escape(&c.name)).collect::<Vec<_>>().join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row
                .iter()
                .zip(&self.schema.columns)
                .map(|(v, c)| if v.is_null() { String::new() } else { escape(&Self::render_cell(v, c)) })
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "columns": self.schema.columns,
            "rows": self.rows.iter().map(|r| r.iter().map(Value::to_json).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "provenance": self.provenance,
        })
    }

    /// Rows paired with provenance, sorted by a canonical key; two results are
    /// multiset-equal iff their canonical forms are equal.
    pub fn canonical_rows(&self) -> Vec<(Vec<String>, Vec<RowRef>)> {
        let mut rows: Vec<(Vec<String>, Vec<RowRef>)> = self
            .rows
            .iter()
            .zip(&self.provenance)
            .map(|(r, p)| (r.iter().map(canonical_cell).collect(), p.clone()))
            .collect();
        rows.sort();
        rows
    }
}

fn canonical_cell(v: &Value) -> String {
    match v {
        Value::Null => "N".into(),
        Value::Number(n) => format!("F{:016x}", if *n == 0.0 { 0 } else { n.to_bits() }),
        Value::Text(s) => format!("T{s}"),
        Value::Bool(b) => format!("B{b}"),
        Value::Date(d) => format!("D{d}"),
    }
}
