//! The production executor: hash joins, hash aggregation, compensated sums.

use std::cmp::Ordering;
use std::collections::HashMap;

use thiserror::Error;

use super::plan::{AggFunc, AggregateExpr, Operand, Predicate, QueryPlan, SortDirection, ValidatedPlan};
use super::result::{ResultTable, RowRef};
use crate::table::{Column, DataType, TableSchema, TableSet, Value};

/// Name or type fault during execution. Unreachable for plans that passed
/// validation against the same tables.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("table {0} does not match the schema the plan was validated against")]
    SchemaMismatch(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("duplicate output column {0}")]
    DuplicateColumn(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

#[derive(Debug, Clone)]
pub(crate) struct Relation {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Value>>,
    pub provenance: Vec<Vec<RowRef>>,
}

impl Relation {
    fn index(&self, name: &str) -> Result<usize, ExecError> {
        self.columns
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| ExecError::UnknownColumn(name.to_string()))
    }
}

pub(crate) fn check_tables(plan: &ValidatedPlan, tables: &TableSet) -> Result<(), ExecError> {
    for name in plan.plan().scanned_tables() {
        let t = tables.get(name).ok_or_else(|| ExecError::UnknownTable(name.to_string()))?;
        if plan.catalog().get(name) != Some(&t.schema) {
            return Err(ExecError::SchemaMismatch(name.to_string()));
        }
    }
    Ok(())
}

pub(crate) fn into_result(rel: Relation) -> ResultTable {
    let provenance = rel
        .provenance
        .into_iter()
        .map(|mut p| {
            p.sort();
            p
        })
        .collect();
    ResultTable { schema: TableSchema { name: "result".into(), columns: rel.columns }, rows: rel.rows, provenance }
}

/// Evaluates a validated plan bottom-up.
pub fn execute(plan: &ValidatedPlan, tables: &TableSet) -> Result<ResultTable, ExecError> {
    check_tables(plan, tables)?;
    Ok(into_result(eval(plan.plan(), tables)?))
}

fn eval(plan: &QueryPlan, tables: &TableSet) -> Result<Relation, ExecError> {
    match plan {
        QueryPlan::Scan { table } => {
            let t = tables.get(table).ok_or_else(|| ExecError::UnknownTable(table.clone()))?;
            Ok(Relation {
                columns: t.schema.columns.clone(),
                rows: t.rows.clone(),
                provenance: (0..t.rows.len()).map(|row| vec![RowRef { table: table.clone(), row }]).collect(),
            })
        }
        QueryPlan::Filter { predicate, input } => {
            let rel = eval(input, tables)?;
            let compiled = compile(predicate, &rel)?;
            let mut out = Relation { columns: rel.columns, rows: Vec::new(), provenance: Vec::new() };
            for (row, prov) in rel.rows.into_iter().zip(rel.provenance) {
                if compiled.test(&row)? {
                    out.rows.push(row);
                    out.provenance.push(prov);
                }
            }
            Ok(out)
        }
        QueryPlan::Project { columns, input } => {
            let rel = eval(input, tables)?;
            let idx = columns.iter().map(|c| rel.index(c)).collect::<Result<Vec<_>, _>>()?;
            let out_cols: Vec<Column> = idx.iter().map(|&i| rel.columns[i].clone()).collect();
            ensure_unique(&out_cols)?;
            let rows = rel.rows.into_iter().map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect();
            Ok(Relation { columns: out_cols, rows, provenance: rel.provenance })
        }
        QueryPlan::Join { left, right, key } => {
            let l = eval(left, tables)?;
            let r = eval(right, tables)?;
            hash_join(l, r, key)
        }
        QueryPlan::Aggregate { group_by, aggregates, input } => {
            let rel = eval(input, tables)?;
            hash_aggregate(rel, group_by, aggregates)
        }
        QueryPlan::Sort { column, direction, input } => {
            let rel = eval(input, tables)?;
            let i = rel.index(column)?;
            let mut order: Vec<usize> = (0..rel.rows.len()).collect();
            let mut fault = None;
            order.sort_by(|&a, &b| match compare_for_sort(&rel.rows[a][i], &rel.rows[b][i], *direction) {
                Ok(o) => o,
                Err(e) => {
                    fault.get_or_insert(e);
                    Ordering::Equal
                }
            });
            if let Some(e) = fault {
                return Err(e);
            }
            let mut rows: Vec<Option<Vec<Value>>> = rel.rows.into_iter().map(Some).collect();
            let mut prov: Vec<Option<Vec<RowRef>>> = rel.provenance.into_iter().map(Some).collect();
            Ok(Relation {
                columns: rel.columns,
                rows: order.iter().map(|&k| rows[k].take().expect("each row once")).collect(),
                provenance: order.iter().map(|&k| prov[k].take().expect("each row once")).collect(),
            })
        }
        QueryPlan::Limit { n, input } => {
            let mut rel = eval(input, tables)?;
            rel.rows.truncate(*n);
            rel.provenance.truncate(*n);
            Ok(rel)
        }
    }
}

fn ensure_unique(cols: &[Column]) -> Result<(), ExecError> {
    for (i, c) in cols.iter().enumerate() {
        if cols[..i].iter().any(|p| p.name.eq_ignore_ascii_case(&c.name)) {
            return Err(ExecError::DuplicateColumn(c.name.clone()));
        }
    }
    Ok(())
}

/// Ordering of two non-null values of one type.
fn order_values(a: &Value, b: &Value) -> Result<Ordering, ExecError> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            x.partial_cmp(y).ok_or_else(|| ExecError::TypeMismatch("NaN is not comparable".into()))
        }
        (Value::Text(x), Value::Text(y)) => Ok(x.cmp(y)),
        (Value::Bool(x), Value::Bool(y)) => Ok(x.cmp(y)),
        (Value::Date(x), Value::Date(y)) => Ok(x.cmp(y)),
        _ => Err(ExecError::TypeMismatch(format!("cannot compare {a:?} with {b:?}"))),
    }
}

fn compare_for_sort(a: &Value, b: &Value, dir: SortDirection) -> Result<Ordering, ExecError> {
    Ok(match (a.is_null(), b.is_null()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (false, false) => {
            let o = order_values(a, b)?;
            match dir {
                SortDirection::Asc => o,
                SortDirection::Desc => o.reverse(),
            }
        }
    })
}

enum Compiled {
    Compare { left: usize, op: super::plan::CmpOp, right: CompiledOperand },
    And(Box<Compiled>, Box<Compiled>),
    Or(Box<Compiled>, Box<Compiled>),
    Not(Box<Compiled>),
}

enum CompiledOperand {
    Literal(Value),
    Column(usize),
}

fn compile(p: &Predicate, rel: &Relation) -> Result<Compiled, ExecError> {
    Ok(match p {
        Predicate::Compare { column, op, operand } => {
            let left = rel.index(column)?;
            let right = match operand {
                Operand::Literal(l) => {
                    let ty = rel.columns[left].data_type;
                    if let Some(lt) = l.value.data_type() {
                        if lt != ty {
                            return Err(ExecError::TypeMismatch(format!("{column} is {ty}, literal is {lt}")));
                        }
                    }
                    CompiledOperand::Literal(l.value.clone())
                }
                Operand::Column(c) => {
                    let i = rel.index(c)?;
                    if rel.columns[i].data_type != rel.columns[left].data_type {
                        return Err(ExecError::TypeMismatch(format!("{column} and {c} differ in type")));
                    }
                    CompiledOperand::Column(i)
                }
            };
            Compiled::Compare { left, op: *op, right }
        }
        Predicate::And(a, b) => Compiled::And(Box::new(compile(a, rel)?), Box::new(compile(b, rel)?)),
        Predicate::Or(a, b) => Compiled::Or(Box::new(compile(a, rel)?), Box::new(compile(b, rel)?)),
        Predicate::Not(a) => Compiled::Not(Box::new(compile(a, rel)?)),
    })
}

impl Compiled {
    /// Any comparison involving null is false; NOT applies afterwards.
    fn test(&self, row: &[Value]) -> Result<bool, ExecError> {
        match self {
            Compiled::Compare { left, op, right } => {
                let a = &row[*left];
                let b = match right {
                    CompiledOperand::Literal(v) => v,
                    CompiledOperand::Column(i) => &row[*i],
                };
                if a.is_null() || b.is_null() {
                    return Ok(false);
                }
                Ok(op.holds(order_values(a, b)?))
            }
            Compiled::And(a, b) => Ok(a.test(row)? && b.test(row)?),
            Compiled::Or(a, b) => Ok(a.test(row)? || b.test(row)?),
            Compiled::Not(a) => Ok(!a.test(row)?),
        }
    }
}

/// Hashable identity of a non-float-NaN value; `-0.0` and `0.0` coincide.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Key {
    Null,
    Num(u64),
    Text(String),
    Bool(bool),
    Date(i32),
}

fn key_of(v: &Value) -> Key {
    use chrono::Datelike;
    match v {
        Value::Null => Key::Null,
        Value::Number(n) => Key::Num(if *n == 0.0 { 0 } else { n.to_bits() }),
        Value::Text(s) => Key::Text(s.clone()),
        Value::Bool(b) => Key::Bool(*b),
        Value::Date(d) => Key::Date(d.num_days_from_ce()),
    }
}

fn hash_join(l: Relation, r: Relation, key: &str) -> Result<Relation, ExecError> {
    let li = l.index(key)?;
    let ri = r.index(key)?;
    if l.columns[li].data_type != r.columns[ri].data_type {
        return Err(ExecError::TypeMismatch(format!("join key {key} differs in type across inputs")));
    }
    let mut columns = l.columns.clone();
    columns.extend(r.columns.iter().enumerate().filter(|(i, _)| *i != ri).map(|(_, c)| c.clone()));
    ensure_unique(&columns)?;

    let mut buckets: HashMap<Key, Vec<usize>> = HashMap::new();
    for (j, row) in r.rows.iter().enumerate() {
        if !row[ri].is_null() {
            buckets.entry(key_of(&row[ri])).or_default().push(j);
        }
    }
    let mut out = Relation { columns, rows: Vec::new(), provenance: Vec::new() };
    for (lrow, lprov) in l.rows.iter().zip(&l.provenance) {
        if lrow[li].is_null() {
            continue;
        }
        for &j in buckets.get(&key_of(&lrow[li])).into_iter().flatten() {
            let mut row = lrow.clone();
            row.extend(r.rows[j].iter().enumerate().filter(|(i, _)| *i != ri).map(|(_, v)| v.clone()));
            let mut prov = lprov.clone();
            prov.extend(r.provenance[j].iter().cloned());
            out.rows.push(row);
            out.provenance.push(prov);
        }
    }
    Ok(out)
}

/// Neumaier compensated summation.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Output columns of an aggregate: group columns, then one per expression.
pub(crate) fn aggregate_columns(
    input: &[Column],
    group_idx: &[usize],
    aggs: &[(AggregateExpr, Option<usize>)],
) -> Vec<Column> {
    let mut cols: Vec<Column> = group_idx.iter().map(|&i| input[i].clone()).collect();
    for (a, idx) in aggs {
        let col = match a.func {
            AggFunc::Count => Column::new(a.output.clone(), DataType::Number).not_null(),
            _ => {
                let mut c = Column::new(a.output.clone(), DataType::Number);
                c.unit = idx.and_then(|i| input[i].unit);
                c
            }
        };
        cols.push(col);
    }
    cols
}

fn hash_aggregate(rel: Relation, group_by: &[String], aggregates: &[AggregateExpr]) -> Result<Relation, ExecError> {
    let group_idx = group_by.iter().map(|g| rel.index(g)).collect::<Result<Vec<_>, _>>()?;
    let mut aggs = Vec::with_capacity(aggregates.len());
    for a in aggregates {
        let idx = match &a.column {
            Some(c) => {
                let i = rel.index(c)?;
                if a.func.needs_number() && rel.columns[i].data_type != DataType::Number {
                    return Err(ExecError::TypeMismatch(format!("{}({c}) needs a number column", a.func.name())));
                }
                Some(i)
            }
            None if a.func == AggFunc::Count => None,
            None => return Err(ExecError::TypeMismatch(format!("{}(*) is not defined", a.func.name()))),
        };
        aggs.push((a.clone(), idx));
    }
    let columns = aggregate_columns(&rel.columns, &group_idx, &aggs);
    ensure_unique(&columns)?;

    // Groups in order of first appearance.
    let mut slots: HashMap<Vec<Key>, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, row) in rel.rows.iter().enumerate() {
        let k: Vec<Key> = group_idx.iter().map(|&g| key_of(&row[g])).collect();
        let slot = *slots.entry(k).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(i);
    }

    let mut out = Relation { columns, rows: Vec::new(), provenance: Vec::new() };
    for members in groups {
        let first = &rel.rows[members[0]];
        let mut row: Vec<Value> = group_idx.iter().map(|&g| first[g].clone()).collect();
        for (a, idx) in &aggs {
            let nums = || members.iter().filter_map(|&m| rel.rows[m][idx.expect("column aggregate")].as_number());
            let v = match a.func {
                AggFunc::Count => Value::Number(match idx {
                    None => members.len(),
                    Some(c) => members.iter().filter(|&&m| !rel.rows[m][*c].is_null()).count(),
                } as f64),
                AggFunc::Sum => {
                    let n: Vec<f64> = nums().collect();
                    if n.is_empty() {
                        Value::Null
                    } else {
                        Value::Number(compensated_sum(n))
                    }
                }
                AggFunc::Avg => {
                    let n: Vec<f64> = nums().collect();
                    if n.is_empty() {
                        Value::Null
                    } else {
                        Value::Number(compensated_sum(n.iter().copied()) / n.len() as f64)
                    }
                }
                AggFunc::Min => nums().reduce(f64::min).map_or(Value::Null, Value::Number),
                AggFunc::Max => nums().reduce(f64::max).map_or(Value::Null, Value::Number),
            };
            row.push(v);
        }
        out.rows.push(row);
        out.provenance.push(members.iter().flat_map(|&m| rel.provenance[m].iter().cloned()).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16];
        assert_eq!(compensated_sum(v), 1.0);
        assert_eq!(compensated_sum([]), 0.0);
    }
}
