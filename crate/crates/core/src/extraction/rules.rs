//! Keyword rules behind the mock backend's `table_extract` and
//! `plan_synthesis` templates.
//!
//! Table rule, applied once per sentence: a quarter token, then a metric
//! lexeme, then one of `increased`/`decreased`/`was`, then a number. The
//! verb supplies the sign. `Q3 revenue decreased 5%` yields
//! `["Q3", "Revenue", "-5%"]`.
//!
//! Plan rule: see [`mock_plan`].

use serde_json::json;

use crate::gateway::mock::LEXICON;
use crate::relexec::{AggFunc, AggregateExpr, CmpOp, Literal, Predicate, QueryPlan};
use crate::table::{Catalog, Column, DataType, TableSchema, Unit, Value};
use crate::text::{is_quarter, sentence_spans, singularize, tokenize, TokenKind};

/// Column layout the mock extracts when no target schema is given.
pub fn default_columns() -> Vec<Column> {
    vec![
        Column::new("Quarter", DataType::Text),
        Column::new("Sales Metrics", DataType::Text),
        Column::new("Change Percentage", DataType::Number).with_unit(Unit::Percent),
    ]
}

fn capitalize(word: &str) -> String {
    let mut cs = word.chars();
    match cs.next() {
        Some(first) => first.to_uppercase().chain(cs.flat_map(char::to_lowercase)).collect(),
        None => String::new(),
    }
}

/// Rows found in `text` as `(quarter, metric, signed change)` string triples.
pub fn table_rows(text: &str) -> Vec<[String; 3]> {
    let tokens = tokenize(text);
    let mut rows = Vec::new();
    for sentence in sentence_spans(text) {
        let toks: Vec<_> =
            tokens.iter().filter(|t| t.span.start >= sentence.start && t.span.end <= sentence.end).collect();
        let Some(q) = toks.iter().position(|t| t.is_quarter()) else { continue };
        let Some(m) = (q + 1..toks.len()).find(|&i| LEXICON.contains(&toks[i].text.to_lowercase().as_str())) else {
            continue;
        };
        let Some(v) = (m + 1..toks.len()).find(|&i| matches!(toks[i].text, "increased" | "decreased" | "was")) else {
            continue;
        };
        let Some(n) = (v + 1..toks.len()).find(|&i| toks[i].kind == TokenKind::Number) else { continue };
        let sign = match toks[v].text {
            "increased" => "+",
            "decreased" => "-",
            _ => "",
        };
        rows.push([toks[q].text.to_string(), capitalize(toks[m].text), format!("{sign}{}", toks[n].text)]);
    }
    rows
}

/// Mock `table_extract` response. `schema` is the JSON target schema, or
/// anything else for "choose columns".
pub fn mock_table(text: &str, schema: &str) -> String {
    let columns = match serde_json::from_str::<TableSchema>(schema) {
        Ok(s) => s.columns,
        Err(_) => default_columns(),
    };
    json!({ "columns": columns, "rows": table_rows(text) }).to_string()
}

struct Word {
    lower: String,
}

/// Resolves a column name against the words starting at `i`, trying longer
/// phrases first. Returns `(table, column, words consumed)`.
fn column_at(words: &[Word], i: usize, tables: &[&TableSchema]) -> Option<(String, String, usize)> {
    for len in (1..=3).rev() {
        if i + len > words.len() {
            continue;
        }
        let phrase: Vec<&str> = words[i..i + len].iter().map(|w| w.lower.as_str()).collect();
        let exact = phrase.join(" ");
        let mut singular = phrase.clone();
        let last = singular.len() - 1;
        singular[last] = singularize(singular[last]);
        let single = singular.join(" ");
        for t in tables {
            for c in &t.columns {
                let name = c.name.to_lowercase().replace('_', " ");
                if name == exact || name == single || singularize(&name) == single {
                    return Some((t.name.clone(), c.name.clone(), len));
                }
            }
        }
    }
    None
}

fn fail(msg: &str) -> String {
    format!("ERROR: {msg}")
}

/// Mock `plan_synthesis` response in the canonical plan text.
///
/// Keywords, scanned left to right over lowercase words:
/// * table names, singular or plural, unless preceded by `all`;
/// * `total`/`sum` → SUM, `average`/`avg`/`mean` → AVG, `count`/`how many` →
///   COUNT, `max`/`highest` → MAX, `min`/`lowest` → MIN, each applied to the
///   first column named within the next five words;
/// * `in Qn`/`for Qn`, and `last quarter` (the reference quarter), filter the
///   `quarter` column;
/// * `more|greater|less|fewer than N[%]` filters the nearest column named
///   before it;
/// * `different X`, `by X`, `per X`, `each X` group by column X.
///
/// Tables are joined in name order on a shared column, `*_id` first. Filters
/// sit directly on their table's scan. Failures come back as `ERROR: ...`,
/// which never parses.
pub fn mock_plan(question: &str, catalog_json: &str, reference_quarter: &str) -> String {
    let catalog: Catalog = match serde_json::from_str(catalog_json) {
        Ok(c) => c,
        Err(e) => return fail(&format!("catalog is not readable: {e}")),
    };
    let words: Vec<Word> = tokenize(question).iter().map(|t| Word { lower: t.text.to_lowercase() }).collect();
    let all: Vec<&TableSchema> = catalog.tables.values().collect();

    let mut mentioned: Vec<String> = Vec::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 && words[i - 1].lower == "all" {
            continue;
        }
        for t in &all {
            let name = t.name.to_lowercase();
            if (w.lower == name || singularize(&w.lower) == singularize(&name)) && !mentioned.contains(&t.name) {
                mentioned.push(t.name.clone());
            }
        }
    }
    // Mentioned tables take precedence when a column name is shared.
    let mut ordered: Vec<&TableSchema> = all.iter().copied().filter(|t| mentioned.contains(&t.name)).collect();
    ordered.extend(all.iter().copied().filter(|t| !mentioned.contains(&t.name)));

    let mut aggregate: Option<(AggFunc, Option<(String, String)>)> = None;
    let mut filters: Vec<(String, Predicate)> = Vec::new();
    let mut group: Option<(String, String)> = None;

    let mut i = 0;
    while i < words.len() {
        let w = words[i].lower.as_str();
        let next = words.get(i + 1).map(|w| w.lower.as_str());
        let func = match (w, next) {
            ("total" | "sum", _) => Some(AggFunc::Sum),
            ("average" | "avg" | "mean", _) => Some(AggFunc::Avg),
            ("count", _) | ("how", Some("many")) => Some(AggFunc::Count),
            ("max" | "maximum" | "highest", _) => Some(AggFunc::Max),
            ("min" | "minimum" | "lowest", _) => Some(AggFunc::Min),
            _ => None,
        };
        if let (Some(f), None) = (func, &aggregate) {
            let target = (i + 1..(i + 6).min(words.len())).find_map(|j| column_at(&words, j, &ordered));
            aggregate = Some((f, target.map(|(t, c, _)| (t, c))));
        }
        let quarter = match (w, next) {
            ("in" | "for", Some(q)) if is_quarter(&q.to_uppercase()) => Some(q.to_uppercase()),
            ("last", Some("quarter")) => Some(reference_quarter.to_string()),
            _ => None,
        };
        if let Some(q) = quarter {
            // Owner resolved below, once the primary table is known.
            filters.push((String::new(), Predicate::compare("quarter", CmpOp::Eq, Literal::new(Value::Text(q)))));
        }
        if matches!(w, "more" | "greater" | "less" | "fewer") && next == Some("than") {
            let op = if matches!(w, "more" | "greater") { CmpOp::Gt } else { CmpOp::Lt };
            let raw = words.get(i + 2).map(|w| w.lower.clone()).unwrap_or_default();
            let (digits, percent) = match raw.strip_suffix('%') {
                Some(d) => (d.to_string(), true),
                None => (raw.clone(), false),
            };
            let Ok(n) = digits.parse::<f64>() else {
                return fail(&format!("expected a number after \"{w} than\""));
            };
            let literal = if percent { Literal::percent(n) } else { Literal::new(Value::Number(n)) };
            let column = (0..i).rev().find_map(|j| column_at(&words, j, &ordered)).or_else(|| {
                ordered.iter().find_map(|t| {
                    t.columns
                        .iter()
                        .find(|c| c.data_type == DataType::Number && (c.unit == Some(Unit::Percent)) == percent)
                        .map(|c| (t.name.clone(), c.name.clone(), 1))
                })
            });
            let Some((table, column, _)) = column else {
                return fail(&format!("no column to compare with {raw}"));
            };
            filters.push((table, Predicate::compare(column, op, literal)));
        }
        if group.is_none() && matches!(w, "different" | "by" | "per" | "each") {
            if let Some((t, c, _)) = column_at(&words, i + 1, &ordered) {
                group = Some((t, c));
            }
        }
        i += 1;
    }

    let primary = aggregate.as_ref().and_then(|(_, t)| t.as_ref().map(|(t, _)| t.clone()));
    // Quarter filters go to the primary table when it has the column.
    for (table, pred) in filters.iter_mut() {
        if !table.is_empty() {
            continue;
        }
        let owner = primary
            .iter()
            .filter_map(|p| catalog.get(p))
            .chain(ordered.iter().copied())
            .find(|t| t.column("quarter").is_some());
        match owner {
            Some(t) => {
                *table = t.name.clone();
                if let Predicate::Compare { column, .. } = pred {
                    *column = t.column("quarter").expect("checked").name.clone();
                }
            }
            None => return fail("no table has a quarter column"),
        }
    }

    let mut used: Vec<String> = mentioned.clone();
    let referenced = primary.iter().chain(filters.iter().map(|(t, _)| t)).chain(group.iter().map(|(t, _)| t));
    for t in referenced {
        if !used.contains(t) {
            used.push(t.clone());
        }
    }
    used.sort();
    if used.is_empty() {
        return fail("no table or column in the catalog matches the question");
    }

    let scan = |name: &str| -> QueryPlan {
        let mut plan = QueryPlan::scan(name);
        let mut preds = filters.iter().filter(|(t, _)| t == name).map(|(_, p)| p.clone());
        if let Some(first) = preds.next() {
            plan = plan.filter(preds.fold(first, Predicate::and));
        }
        plan
    };
    let mut plan = scan(&used[0]);
    let mut joined: Vec<&TableSchema> = vec![catalog.get(&used[0]).expect("known table")];
    for name in &used[1..] {
        let right = catalog.get(name).expect("known table");
        let mut shared: Vec<&str> = right
            .columns
            .iter()
            .filter(|c| joined.iter().any(|l| l.column(&c.name).is_some()))
            .map(|c| c.name.as_str())
            .collect();
        shared.sort_by_key(|c| (!c.to_lowercase().ends_with("_id"), c.to_lowercase()));
        let Some(key) = shared.first() else {
            return fail(&format!("no shared column to join {name}"));
        };
        plan = plan.join(scan(name), *key);
        joined.push(right);
    }

    if let Some((func, target)) = aggregate {
        let (column, output) = match (&target, func) {
            (Some((_, c)), _) => (Some(c.clone()), format!("{}_{}", func.name().to_lowercase(), c.to_lowercase())),
            (None, AggFunc::Count) => (None, "count_all".to_string()),
            (None, _) => return fail(&format!("no column to {}", func.name())),
        };
        let group_by: Vec<String> = group.map(|(_, c)| c).into_iter().collect();
        plan = plan.aggregate(group_by, vec![AggregateExpr { func, column, output }]);
    } else if let Some((_, c)) = group {
        let aggs = vec![AggregateExpr { func: AggFunc::Count, column: None, output: "count_all".into() }];
        plan = plan.aggregate([c], aggs);
    }
    plan.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> String {
        let products = TableSchema::new(
            "products",
            vec![
                Column::new("product_id", DataType::Text),
                Column::new("name", DataType::Text),
                Column::new("manufacturer", DataType::Text),
                Column::new("rating", DataType::Number),
            ],
        )
        .unwrap();
        let sales = TableSchema::new(
            "sales",
            vec![
                Column::new("product_id", DataType::Text),
                Column::new("quarter", DataType::Text),
                Column::new("sales", DataType::Number),
                Column::new("increase", DataType::Number).with_unit(Unit::Percent),
            ],
        )
        .unwrap();
        serde_json::to_string(&Catalog::new([products, sales]).unwrap()).unwrap()
    }

    #[test]
    fn table_rows_follow_the_verb_sign() {
        assert_eq!(table_rows("Q2 sales increased 20%"), vec![["Q2".to_string(), "Sales".into(), "+20%".into()]]);
        assert_eq!(table_rows("Q3 revenue decreased 5%."), vec![["Q3".to_string(), "Revenue".into(), "-5%".into()]]);
        assert!(table_rows("Product A sales increased 12% in Q2.").is_empty());
        assert!(table_rows("").is_empty());
    }

    #[test]
    fn total_in_quarter() {
        assert_eq!(
            mock_plan("Find the total sales of all products in Q3", &catalog(), "Q4"),
            r#"Aggregate(group=[], aggs=[SUM(sales) AS sum_sales], input=Filter(pred=(quarter = "Q3"), input=Scan(sales)))"#
        );
    }

    #[test]
    fn satisfaction_by_manufacturer() {
        let q = "Compare the average customer satisfaction ratings of products from different manufacturers \
                 that had a sales increase of more than 15% in the last quarter";
        assert_eq!(
            mock_plan(q, &catalog(), "Q4"),
            "Aggregate(group=[manufacturer], aggs=[AVG(rating) AS avg_rating], input=Join(left=Scan(products), \
             right=Filter(pred=((increase > 15%) AND (quarter = \"Q4\")), input=Scan(sales)), key=product_id))"
        );
    }

    #[test]
    fn two_tables_join_on_the_id_column() {
        let plan = mock_plan("sales of specific products", &catalog(), "Q4");
        assert_eq!(plan, "Join(left=Scan(products), right=Scan(sales), key=product_id)");
    }

    #[test]
    fn nothing_recognized_is_an_error() {
        assert!(mock_plan("zzz qqq", &catalog(), "Q4").starts_with("ERROR:"));
        assert!(mock_plan("total sales", "not json", "Q4").starts_with("ERROR:"));
    }
}
