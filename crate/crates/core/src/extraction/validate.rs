//! Static checks that make a plan safe to execute.

use std::fmt;

use serde::Serialize;

use crate::relexec::{aggregate_columns, AggFunc, Operand, Predicate, QueryPlan, ValidatedPlan};
use crate::table::{parse_date, Catalog, Column, DataType, TableSchema, Unit, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UnknownTable,
    UnknownColumn,
    DuplicateColumn,
    Type,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Schema of an intermediate relation plus a label for messages.
struct Scope {
    label: String,
    columns: Vec<Column>,
}

impl Scope {
    fn find(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name.eq_ignore_ascii_case(name))
    }
}

struct Checker<'a> {
    catalog: &'a Catalog,
    violations: Vec<Violation>,
}

impl Checker<'_> {
    fn push(&mut self, kind: ViolationKind, message: String) {
        self.violations.push(Violation { kind, message });
    }

    /// Resolves `name` in scope, recording a violation when absent.
    fn resolve(&mut self, scope: &Scope, name: &str) -> Option<Column> {
        match scope.find(name) {
            Some(c) => Some(c.clone()),
            None => {
                self.push(ViolationKind::UnknownColumn, format!("unknown column {name} in {}", scope.label));
                None
            }
        }
    }

    fn unique(&mut self, columns: &[Column], context: &str) -> bool {
        let mut ok = true;
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|p| p.name.eq_ignore_ascii_case(&c.name)) {
                self.push(
                    ViolationKind::DuplicateColumn,
                    format!("duplicate column {} in output of {context}", c.name),
                );
                ok = false;
            }
        }
        ok
    }

    /// Checks and rewrites a predicate: column names take catalog casing,
    /// text literals against date columns become dates.
    fn predicate(&mut self, p: &Predicate, scope: &Scope) -> Predicate {
        match p {
            Predicate::Compare { column, op, operand } => {
                let left = self.resolve(scope, column);
                let operand = match operand {
                    Operand::Column(other) => {
                        let right = self.resolve(scope, other);
                        if let (Some(l), Some(r)) = (&left, &right) {
                            if l.data_type != r.data_type {
                                self.push(
                                    ViolationKind::Type,
                                    format!(
                                        "cannot compare {} ({}) with {} ({})",
                                        l.name, l.data_type, r.name, r.data_type
                                    ),
                                );
                            } else if l.unit != r.unit {
                                self.push(
                                    ViolationKind::Unit,
                                    format!("{} and {} carry different units", l.name, r.name),
                                );
                            }
                        }
                        Operand::Column(right.map_or_else(|| other.clone(), |c| c.name))
                    }
                    Operand::Literal(lit) => {
                        let mut lit = lit.clone();
                        if let Some(col) = &left {
                            self.literal(col, &mut lit);
                        }
                        Operand::Literal(lit)
                    }
                };
                Predicate::Compare { column: left.map_or_else(|| column.clone(), |c| c.name), op: *op, operand }
            }
            Predicate::And(a, b) => {
                Predicate::And(Box::new(self.predicate(a, scope)), Box::new(self.predicate(b, scope)))
            }
            Predicate::Or(a, b) => {
                Predicate::Or(Box::new(self.predicate(a, scope)), Box::new(self.predicate(b, scope)))
            }
            Predicate::Not(a) => Predicate::Not(Box::new(self.predicate(a, scope))),
        }
    }

    fn literal(&mut self, col: &Column, lit: &mut crate::relexec::Literal) {
        if let (DataType::Date, Value::Text(s)) = (col.data_type, &lit.value) {
            match parse_date(s) {
                Some(d) => lit.value = Value::Date(d),
                None => {
                    self.push(ViolationKind::Type, format!("{s:?} is not a date (column {} is date)", col.name));
                }
            }
            return;
        }
        let Some(ty) = lit.value.data_type() else { return };
        if ty != col.data_type {
            self.push(
                ViolationKind::Type,
                format!("literal {lit} ({ty}) does not match column {} ({})", col.name, col.data_type),
            );
            return;
        }
        let col_percent = col.unit == Some(Unit::Percent);
        if lit.percent && !col_percent {
            self.push(ViolationKind::Unit, format!("percent literal {lit} compared with plain column {}", col.name));
        } else if !lit.percent && col_percent {
            self.push(ViolationKind::Unit, format!("plain literal {lit} compared with percent column {}", col.name));
        }
    }

    /// Returns the rewritten plan and its output scope, or `None` when the
    /// subtree's shape cannot be determined.
    fn plan(&mut self, plan: &QueryPlan) -> Option<(QueryPlan, Scope)> {
        match plan {
            QueryPlan::Scan { table } => match self.catalog.get(table) {
                Some(schema) => Some((
                    QueryPlan::scan(table.clone()),
                    Scope { label: format!("table {table}"), columns: schema.columns.clone() },
                )),
                None => {
                    self.push(ViolationKind::UnknownTable, format!("unknown table {table}"));
                    None
                }
            },
            QueryPlan::Filter { predicate, input } => {
                let (input, scope) = self.plan(input)?;
                let predicate = self.predicate(predicate, &scope);
                Some((input.filter(predicate), scope))
            }
            QueryPlan::Project { columns, input } => {
                let (input, scope) = self.plan(input)?;
                let resolved: Vec<Option<Column>> = columns.iter().map(|c| self.resolve(&scope, c)).collect();
                let out: Vec<Column> = resolved.into_iter().collect::<Option<_>>()?;
                if !self.unique(&out, "Project") {
                    return None;
                }
                let names: Vec<String> = out.iter().map(|c| c.name.clone()).collect();
                Some((input.project(names), Scope { label: scope.label, columns: out }))
            }
            QueryPlan::Join { left, right, key } => {
                let l = self.plan(left);
                let r = self.plan(right);
                let ((lp, ls), (rp, rs)) = (l?, r?);
                let lk = self.resolve(&ls, key);
                let rk = self.resolve(&rs, key);
                let (lk, rk) = (lk?, rk?);
                if lk.data_type != rk.data_type {
                    self.push(
                        ViolationKind::Type,
                        format!("join key {key} is {} on the left and {} on the right", lk.data_type, rk.data_type),
                    );
                    return None;
                }
                let mut columns = ls.columns.clone();
                columns.extend(rs.columns.iter().filter(|c| !c.name.eq_ignore_ascii_case(key)).cloned());
                let label = format!("join of {} and {}", ls.label, rs.label);
                if !self.unique(&columns, &label) {
                    return None;
                }
                Some((lp.join(rp, lk.name), Scope { label, columns }))
            }
            QueryPlan::Aggregate { group_by, aggregates, input } => {
                let (input, scope) = self.plan(input)?;
                let mut ok = true;
                let mut group_idx = Vec::new();
                let mut group_names = Vec::new();
                for g in group_by {
                    match self.resolve(&scope, g) {
                        Some(c) => {
                            group_idx.push(scope.columns.iter().position(|x| x.name == c.name).expect("resolved"));
                            group_names.push(c.name);
                        }
                        None => ok = false,
                    }
                }
                let mut aggs = Vec::new();
                for a in aggregates {
                    let mut a = a.clone();
                    let idx = match &a.column {
                        None if a.func == AggFunc::Count => None,
                        None => {
                            self.push(ViolationKind::Type, format!("{}(*) is not defined", a.func.name()));
                            ok = false;
                            continue;
                        }
                        Some(c) => match self.resolve(&scope, c) {
                            Some(col) => {
                                if a.func.needs_number() && col.data_type != DataType::Number {
                                    self.push(
                                        ViolationKind::Type,
                                        format!("{} over {} column {}", a.func.name(), col.data_type, col.name),
                                    );
                                    ok = false;
                                }
                                let i = scope.columns.iter().position(|x| x.name == col.name).expect("resolved");
                                a.column = Some(col.name);
                                Some(i)
                            }
                            None => {
                                ok = false;
                                continue;
                            }
                        },
                    };
                    aggs.push((a, idx));
                }
                if !ok {
                    return None;
                }
                let columns = aggregate_columns(&scope.columns, &group_idx, &aggs);
                if !self.unique(&columns, "Aggregate") {
                    return None;
                }
                let exprs = aggs.into_iter().map(|(a, _)| a).collect();
                Some((input.aggregate(group_names, exprs), Scope { label: scope.label, columns }))
            }
            QueryPlan::Sort { column, direction, input } => {
                let (input, scope) = self.plan(input)?;
                let col = self.resolve(&scope, column)?;
                Some((input.sort(col.name, *direction), scope))
            }
            QueryPlan::Limit { n, input } => {
                let (input, scope) = self.plan(input)?;
                Some((input.limit(*n), scope))
            }
        }
    }
}

/// Checks a plan against a catalog. Returns every violation found, not just
/// the first. An accepted plan has its column references rewritten to the
/// catalog's spelling and its date literals typed.
pub fn validate_plan(plan: &QueryPlan, catalog: &Catalog) -> Result<ValidatedPlan, Vec<Violation>> {
    let mut checker = Checker { catalog, violations: Vec::new() };
    let checked = checker.plan(plan);
    match checked {
        Some((plan, scope)) if checker.violations.is_empty() => Ok(ValidatedPlan {
            plan,
            output: TableSchema { name: "result".into(), columns: scope.columns },
            catalog: catalog.clone(),
        }),
        _ => {
            debug_assert!(!checker.violations.is_empty(), "rejected plans carry a violation");
            Err(checker.violations)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relexec::{parse_plan, CmpOp, Literal};

    fn catalog() -> Catalog {
        let sales = TableSchema::new(
            "sales",
            vec![
                Column::new("quarter", DataType::Text),
                Column::new("sales", DataType::Number),
                Column::new("increase", DataType::Number).with_unit(Unit::Percent),
                Column::new("day", DataType::Date),
            ],
        )
        .unwrap();
        Catalog::new([sales]).unwrap()
    }

    fn check(src: &str) -> Result<ValidatedPlan, Vec<Violation>> {
        validate_plan(&parse_plan(src).unwrap(), &catalog())
    }

    #[test]
    fn q3_total_is_valid() {
        let v = check(r#"Aggregate(group=[], aggs=[SUM(sales) AS total], input=Filter(pred=(quarter = "Q3"), input=Scan(sales)))"#)
            .unwrap();
        assert_eq!(v.output_schema().columns[0].name, "total");
    }

    #[test]
    fn unknown_column_names_the_table() {
        let errs = check(r#"Filter(pred=(region = "EU"), input=Scan(sales))"#).unwrap_err();
        assert_eq!(errs[0].message, "unknown column region in table sales");
    }

    #[test]
    fn sum_over_text_is_a_type_violation() {
        let errs = check("Aggregate(group=[], aggs=[SUM(quarter) AS s], input=Scan(sales))").unwrap_err();
        assert_eq!(errs[0].kind, ViolationKind::Type);
    }

    #[test]
    fn all_violations_are_reported() {
        let errs =
            check(r#"Filter(pred=((region = 1) AND ((sales = "x") AND (zone = 2))), input=Scan(sales))"#).unwrap_err();
        assert_eq!(errs.len(), 3);
        let errs = check("Join(left=Scan(nope), right=Scan(gone), key=k)").unwrap_err();
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn units_must_agree_both_ways() {
        assert!(check("Filter(pred=(increase > 15%), input=Scan(sales))").is_ok());
        let errs = check("Filter(pred=(increase > 15), input=Scan(sales))").unwrap_err();
        assert_eq!(errs[0].kind, ViolationKind::Unit);
        let errs = check("Filter(pred=(sales > 15%), input=Scan(sales))").unwrap_err();
        assert_eq!(errs[0].kind, ViolationKind::Unit);
    }

    #[test]
    fn rewrites_casing_and_dates() {
        let v = check(r#"Filter(pred=(DAY >= "2024-01-31"), input=Scan(sales))"#).unwrap();
        let expected = QueryPlan::scan("sales").filter(Predicate::compare(
            "day",
            CmpOp::Ge,
            Literal::new(Value::Date(parse_date("2024-01-31").unwrap())),
        ));
        assert_eq!(v.plan(), &expected);
        assert!(check(r#"Filter(pred=(day = "soon"), input=Scan(sales))"#).is_err());
    }

    #[test]
    fn self_join_collisions_are_rejected() {
        let errs = check("Join(left=Scan(sales), right=Scan(sales), key=quarter)").unwrap_err();
        assert!(errs.iter().all(|v| v.kind == ViolationKind::DuplicateColumn));
    }
}
