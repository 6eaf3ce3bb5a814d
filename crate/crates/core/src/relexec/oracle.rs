//! Reference evaluator used to cross-check [`super::execute`].
//!
//! Deliberately naive: every operator materializes its input, joins are
//! nested loops, groups are found by linear search, sums are left folds and
//! sorting is an insertion sort. It shares only the plan and value types with
//! the production executor.

use std::cmp::Ordering;

use super::exec::ExecError;
use super::plan::{AggFunc, CmpOp, Operand, Predicate, QueryPlan, SortDirection, ValidatedPlan};
use super::result::{ResultTable, RowRef};
use crate::table::{Column, DataType, TableSchema, TableSet, Value};

struct Rows {
    columns: Vec<Column>,
    data: Vec<(Vec<Value>, Vec<RowRef>)>,
}

fn find(columns: &[Column], name: &str) -> Result<usize, ExecError> {
    for (i, c) in columns.iter().enumerate() {
        if c.name.eq_ignore_ascii_case(name) {
            return Ok(i);
        }
    }
    Err(ExecError::UnknownColumn(name.to_string()))
}

fn no_duplicates(columns: &[Column]) -> Result<(), ExecError> {
    for i in 0..columns.len() {
        for j in 0..i {
            if columns[i].name.eq_ignore_ascii_case(&columns[j].name) {
                return Err(ExecError::DuplicateColumn(columns[i].name.clone()));
            }
        }
    }
    Ok(())
}

fn same_value(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Null, Value::Null) => true,
        (Value::Number(x), Value::Number(y)) => x == y,
        (Value::Text(x), Value::Text(y)) => x == y,
        (Value::Bool(x), Value::Bool(y)) => x == y,
        (Value::Date(x), Value::Date(y)) => x == y,
        _ => false,
    }
}

fn cmp(a: &Value, b: &Value) -> Result<Ordering, ExecError> {
    let o = match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            if x < y {
                Ordering::Less
            } else if x > y {
                Ordering::Greater
            } else {
                Ordering::Equal
            }
        }
        (Value::Text(x), Value::Text(y)) => x.as_str().cmp(y.as_str()),
        (Value::Bool(x), Value::Bool(y)) => (*x as u8).cmp(&(*y as u8)),
        (Value::Date(x), Value::Date(y)) => x.cmp(y),
        _ => return Err(ExecError::TypeMismatch(format!("{a:?} vs {b:?}"))),
    };
    Ok(o)
}

/// Static type check of a predicate against the columns it reads.
fn typecheck(p: &Predicate, columns: &[Column]) -> Result<(), ExecError> {
    match p {
        Predicate::Compare { column, operand, .. } => {
            let lt = columns[find(columns, column)?].data_type;
            let rt = match operand {
                Operand::Literal(l) => l.value.data_type(),
                Operand::Column(c) => Some(columns[find(columns, c)?].data_type),
            };
            match rt {
                Some(rt) if rt != lt => Err(ExecError::TypeMismatch(format!("{column}: {lt} vs {rt}"))),
                _ => Ok(()),
            }
        }
        Predicate::And(a, b) | Predicate::Or(a, b) => {
            typecheck(a, columns)?;
            typecheck(b, columns)
        }
        Predicate::Not(a) => typecheck(a, columns),
    }
}

fn truth(p: &Predicate, columns: &[Column], row: &[Value]) -> Result<bool, ExecError> {
    match p {
        Predicate::Compare { column, op, operand } => {
            let left = &row[find(columns, column)?];
            let right = match operand {
                Operand::Literal(l) => l.value.clone(),
                Operand::Column(c) => row[find(columns, c)?].clone(),
            };
            if matches!(left, Value::Null) || matches!(right, Value::Null) {
                return Ok(false);
            }
            let o = cmp(left, &right)?;
            Ok(match op {
                CmpOp::Eq => o == Ordering::Equal,
                CmpOp::Ne => o != Ordering::Equal,
                CmpOp::Lt => o == Ordering::Less,
                CmpOp::Le => o == Ordering::Less || o == Ordering::Equal,
                CmpOp::Gt => o == Ordering::Greater,
                CmpOp::Ge => o == Ordering::Greater || o == Ordering::Equal,
            })
        }
        Predicate::And(a, b) => {
            let x = truth(a, columns, row)?;
            let y = truth(b, columns, row)?;
            Ok(x && y)
        }
        Predicate::Or(a, b) => {
            let x = truth(a, columns, row)?;
            let y = truth(b, columns, row)?;
            Ok(x || y)
        }
        Predicate::Not(a) => Ok(!truth(a, columns, row)?),
    }
}

fn run(plan: &QueryPlan, tables: &TableSet) -> Result<Rows, ExecError> {
    match plan {
        QueryPlan::Scan { table } => {
            let t = tables.get(table).ok_or_else(|| ExecError::UnknownTable(table.clone()))?;
            let mut data = Vec::new();
            for i in 0..t.rows.len() {
                data.push((t.rows[i].clone(), vec![RowRef { table: table.clone(), row: i }]));
            }
            Ok(Rows { columns: t.schema.columns.clone(), data })
        }
        QueryPlan::Filter { predicate, input } => {
            let src = run(input, tables)?;
            typecheck(predicate, &src.columns)?;
            let mut data = Vec::new();
            for (row, prov) in &src.data {
                if truth(predicate, &src.columns, row)? {
                    data.push((row.clone(), prov.clone()));
                }
            }
            Ok(Rows { columns: src.columns, data })
        }
        QueryPlan::Project { columns, input } => {
            let src = run(input, tables)?;
            let mut picks = Vec::new();
            for c in columns {
                picks.push(find(&src.columns, c)?);
            }
            let out_cols: Vec<Column> = picks.iter().map(|&i| src.columns[i].clone()).collect();
            no_duplicates(&out_cols)?;
            let mut data = Vec::new();
            for (row, prov) in &src.data {
                let mut r = Vec::new();
                for &i in &picks {
                    r.push(row[i].clone());
                }
                data.push((r, prov.clone()));
            }
            Ok(Rows { columns: out_cols, data })
        }
        QueryPlan::Join { left, right, key } => {
            let l = run(left, tables)?;
            let r = run(right, tables)?;
            let lk = find(&l.columns, key)?;
            let rk = find(&r.columns, key)?;
            if l.columns[lk].data_type != r.columns[rk].data_type {
                return Err(ExecError::TypeMismatch(format!("join key {key}")));
            }
            let mut columns = l.columns.clone();
            for (i, c) in r.columns.iter().enumerate() {
                if i != rk {
                    columns.push(c.clone());
                }
            }
            no_duplicates(&columns)?;
            let mut data = Vec::new();
            for (lrow, lprov) in &l.data {
                for (rrow, rprov) in &r.data {
                    if lrow[lk].is_null() || rrow[rk].is_null() || !same_value(&lrow[lk], &rrow[rk]) {
                        continue;
                    }
                    let mut row = lrow.clone();
                    for (i, v) in rrow.iter().enumerate() {
                        if i != rk {
                            row.push(v.clone());
                        }
                    }
                    let mut prov = lprov.clone();
                    prov.extend(rprov.iter().cloned());
                    data.push((row, prov));
                }
            }
            Ok(Rows { columns, data })
        }
        QueryPlan::Aggregate { group_by, aggregates, input } => {
            let src = run(input, tables)?;
            let mut keys = Vec::new();
            for g in group_by {
                keys.push(find(&src.columns, g)?);
            }
            let mut columns: Vec<Column> = keys.iter().map(|&k| src.columns[k].clone()).collect();
            let mut targets = Vec::new();
            for a in aggregates {
                let target = match &a.column {
                    None => {
                        if a.func != AggFunc::Count {
                            return Err(ExecError::TypeMismatch("only COUNT accepts *".into()));
                        }
                        None
                    }
                    Some(c) => {
                        let i = find(&src.columns, c)?;
                        if a.func != AggFunc::Count && src.columns[i].data_type != DataType::Number {
                            return Err(ExecError::TypeMismatch(format!("aggregate over {c}")));
                        }
                        Some(i)
                    }
                };
                targets.push(target);
                columns.push(Column {
                    name: a.output.clone(),
                    data_type: DataType::Number,
                    nullable: a.func != AggFunc::Count,
                    unit: match (a.func, target) {
                        (AggFunc::Count, _) | (_, None) => None,
                        (_, Some(i)) => src.columns[i].unit,
                    },
                });
            }
            no_duplicates(&columns)?;

            let mut groups: Vec<(Vec<Value>, Vec<usize>)> = Vec::new();
            for (i, (row, _)) in src.data.iter().enumerate() {
                let key: Vec<Value> = keys.iter().map(|&k| row[k].clone()).collect();
                let mut found = false;
                for g in groups.iter_mut() {
                    if g.0.len() == key.len() && g.0.iter().zip(&key).all(|(a, b)| same_value(a, b)) {
                        g.1.push(i);
                        found = true;
                        break;
                    }
                }
                if !found {
                    groups.push((key, vec![i]));
                }
            }

            let mut data = Vec::new();
            for (key, members) in groups {
                let mut row = key;
                for (a, target) in aggregates.iter().zip(&targets) {
                    let mut present: Vec<f64> = Vec::new();
                    let mut non_null = 0usize;
                    if let Some(t) = target {
                        for &m in &members {
                            match &src.data[m].0[*t] {
                                Value::Null => {}
                                Value::Number(x) => {
                                    present.push(*x);
                                    non_null += 1;
                                }
                                _ => non_null += 1,
                            }
                        }
                    }
                    let v = match a.func {
                        AggFunc::Count => Value::Number(if target.is_none() { members.len() } else { non_null } as f64),
                        _ if present.is_empty() => Value::Null,
                        AggFunc::Sum => Value::Number(present.iter().fold(0.0, |acc, x| acc + x)),
                        AggFunc::Avg => {
                            Value::Number(present.iter().fold(0.0, |acc, x| acc + x) / present.len() as f64)
                        }
                        AggFunc::Min => {
                            let mut m = present[0];
                            for x in &present {
                                if *x < m {
                                    m = *x;
                                }
                            }
                            Value::Number(m)
                        }
                        AggFunc::Max => {
                            let mut m = present[0];
                            for x in &present {
                                if *x > m {
                                    m = *x;
                                }
                            }
                            Value::Number(m)
                        }
                    };
                    row.push(v);
                }
                let mut prov = Vec::new();
                for &m in &members {
                    prov.extend(src.data[m].1.iter().cloned());
                }
                data.push((row, prov));
            }
            Ok(Rows { columns, data })
        }
        QueryPlan::Sort { column, direction, input } => {
            let src = run(input, tables)?;
            let k = find(&src.columns, column)?;
            let mut sorted: Vec<(Vec<Value>, Vec<RowRef>)> = Vec::new();
            for item in src.data {
                // Insert after every element that does not sort strictly after `item`.
                let mut pos = sorted.len();
                for (j, existing) in sorted.iter().enumerate() {
                    if sorts_before(&item.0[k], &existing.0[k], *direction)? {
                        pos = j;
                        break;
                    }
                }
                sorted.insert(pos, item);
            }
            Ok(Rows { columns: src.columns, data: sorted })
        }
        QueryPlan::Limit { n, input } => {
            let src = run(input, tables)?;
            Ok(Rows { columns: src.columns, data: src.data.into_iter().take(*n).collect() })
        }
    }
}

/// Strictly-before relation for a stable sort with nulls last.
fn sorts_before(a: &Value, b: &Value, dir: SortDirection) -> Result<bool, ExecError> {
    match (a.is_null(), b.is_null()) {
        (_, true) => Ok(!a.is_null()),
        (true, false) => Ok(false),
        (false, false) => {
            let o = cmp(a, b)?;
            Ok(match dir {
                SortDirection::Asc => o == Ordering::Less,
                SortDirection::Desc => o == Ordering::Greater,
            })
        }
    }
}

/// Same contract as [`super::execute`], computed the slow way.
pub fn oracle_execute(plan: &ValidatedPlan, tables: &TableSet) -> Result<ResultTable, ExecError> {
    for name in plan.plan().scanned_tables() {
        match tables.get(name) {
            None => return Err(ExecError::UnknownTable(name.to_string())),
            Some(t) if plan.catalog().get(name) != Some(&t.schema) => {
                return Err(ExecError::SchemaMismatch(name.to_string()))
            }
            Some(_) => {}
        }
    }
    let out = run(plan.plan(), tables)?;
    let mut rows = Vec::new();
    let mut provenance = Vec::new();
    for (row, mut prov) in out.data {
        prov.sort();
        rows.push(row);
        provenance.push(prov);
    }
    Ok(ResultTable { schema: TableSchema { name: "result".into(), columns: out.columns }, rows, provenance })
}
