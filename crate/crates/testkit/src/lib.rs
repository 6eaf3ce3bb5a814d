//! Seeded generators for graphs, tables and plans used by the test suites.

use chrono::NaiveDate;
use hetquery::hetgraph::{build_graph, EntityMention, HetGraph, RelationEdge, TypeTag};
use hetquery::ingest::TextChunk;
use hetquery::relexec::{AggFunc, AggregateExpr, CmpOp, Literal, Predicate, QueryPlan, SortDirection};
use hetquery::table::Unit;
use hetquery::text::Span;
use hetquery::{Catalog, Column, DataType, Table, TableSchema, TableSet, Value};
use rand::seq::SliceRandom;
use rand::Rng;

const SURFACES: &[(&str, TypeTag)] = &[
    ("Product A", TypeTag::Product),
    ("Product B", TypeTag::Product),
    ("Customer X", TypeTag::Person),
    ("Patient Z", TypeTag::Person),
    ("Acme Corp", TypeTag::Org),
    ("Globex", TypeTag::Org),
    ("Q2", TypeTag::Time),
    ("Q3", TypeTag::Time),
    ("Drug Y", TypeTag::Other),
    ("Online", TypeTag::Other),
    ("sales", TypeTag::Metric),
    ("revenue", TypeTag::Metric),
];

const PREDICATES: &[&str] = &["purchased", "manufactures", "received", "compared_with"];

/// Parts of a random graph: at most `max_nodes` chunk and entity nodes
/// (fewer when drawn entities go unmentioned), every mention span matching
/// its surface. Relations join consecutive mentions within a chunk.
pub fn graph_parts<R: Rng>(rng: &mut R, max_nodes: usize) -> (Vec<TextChunk>, Vec<EntityMention>, Vec<RelationEdge>) {
    let max_nodes = max_nodes.max(2);
    let n_chunks = rng.gen_range(1..=(max_nodes / 2).max(1));
    let n_entities = rng.gen_range(0..=max_nodes - n_chunks);
    let mut vocab: Vec<(String, TypeTag)> = SURFACES.iter().map(|(s, t)| (s.to_string(), *t)).collect();
    vocab.extend((0..n_entities.saturating_sub(SURFACES.len())).map(|i| (format!("Item {i}"), TypeTag::Other)));
    vocab.shuffle(rng);
    vocab.truncate(n_entities);

    let mut chunks = Vec::new();
    let mut mentions = Vec::new();
    let mut relations = Vec::new();
    for ordinal in 0..n_chunks {
        let chunk_id = format!("doc#{ordinal}");
        let mut text = format!("Note {ordinal}:");
        let mut here: Vec<EntityMention> = Vec::new();
        if !vocab.is_empty() {
            for _ in 0..rng.gen_range(0..=4) {
                let (surface, tag) = &vocab[rng.gen_range(0..vocab.len())];
                text.push(' ');
                let start = text.chars().count();
                text.push_str(surface);
                here.push(EntityMention {
                    chunk_id: chunk_id.clone(),
                    surface: surface.clone(),
                    type_tag: *tag,
                    span: Span::new(start, start + surface.chars().count()),
                });
            }
        }
        text.push('.');
        for pair in here.windows(2) {
            if pair[0].surface != pair[1].surface && rng.gen_bool(0.5) {
                relations.push(RelationEdge {
                    src_entity: pair[0].entity_id(),
                    predicate: PREDICATES[rng.gen_range(0..PREDICATES.len())].into(),
                    dst_entity: pair[1].entity_id(),
                    provenance_chunk: chunk_id.clone(),
                    confidence: rng.gen_range(0..=4) as f64 / 4.0,
                });
            }
        }
        let start = ordinal * 1000;
        chunks.push(TextChunk {
            chunk_id,
            doc_id: "doc".into(),
            ordinal,
            span: Span::new(start, start + text.chars().count()),
            text,
        });
        mentions.extend(here);
    }
    (chunks, mentions, relations)
}

pub fn random_graph<R: Rng>(rng: &mut R, max_nodes: usize) -> HetGraph {
    let (c, m, r) = graph_parts(rng, max_nodes);
    build_graph(c, m, r).expect("generated parts are consistent")
}

/// Multiples of 1/4, so sums are exact in any order.
pub fn dyadic<R: Rng>(rng: &mut R) -> f64 {
    rng.gen_range(-40..=40) as f64 / 4.0
}

const KEYS: &[&str] = &["a", "b", "c"];

fn random_cell<R: Rng>(rng: &mut R, col: &Column, null_rate: f64) -> Value {
    if col.nullable && rng.gen_bool(null_rate) {
        return Value::Null;
    }
    match col.data_type {
        DataType::Number => Value::Number(dyadic(rng)),
        DataType::Text => Value::Text(KEYS[rng.gen_range(0..KEYS.len())].into()),
        DataType::Boolean => Value::Bool(rng.gen_bool(0.5)),
        DataType::Date => {
            Value::Date(NaiveDate::from_ymd_opt(2024, rng.gen_range(1..=3), rng.gen_range(1..=3)).expect("valid day"))
        }
    }
}

/// One to three tables `t0..`, each with a text key column `k` plus up to
/// three columns named `t{i}_c{j}`. At most 8 rows; nullable cells are null
/// with probability at least 0.2.
pub fn random_tables<R: Rng>(rng: &mut R) -> TableSet {
    let mut set = TableSet::default();
    for t in 0..rng.gen_range(1..=3) {
        let mut columns = vec![Column::new("k", DataType::Text)];
        for c in 0..rng.gen_range(1..=3) {
            let name = format!("t{t}_c{c}");
            let col = match rng.gen_range(0..5) {
                0 | 1 => Column::new(name, DataType::Number),
                2 => Column::new(name, DataType::Number).with_unit(Unit::Percent),
                3 => Column::new(name, DataType::Boolean),
                _ => Column::new(name, DataType::Date),
            };
            columns.push(if rng.gen_bool(0.2) { col.not_null() } else { col });
        }
        let schema = TableSchema::new(format!("t{t}"), columns).expect("distinct names");
        let null_rate = rng.gen_range(0.2..0.5);
        let rows = (0..rng.gen_range(0..=8))
            .map(|_| schema.columns.iter().map(|c| random_cell(rng, c, null_rate)).collect())
            .collect();
        set.insert(Table::new(schema, rows).expect("cells match schema")).expect("distinct tables");
    }
    set
}

fn literal_for<R: Rng>(rng: &mut R, col: &Column) -> Literal {
    let value = random_cell(rng, &col.clone().not_null(), 0.0);
    match (col.unit, value) {
        (Some(Unit::Percent), Value::Number(n)) => Literal::percent(n),
        (_, v) => Literal::new(v),
    }
}

fn random_predicate<R: Rng>(rng: &mut R, columns: &[Column], depth: usize) -> Predicate {
    if depth == 0 || rng.gen_bool(0.6) {
        let col = &columns[rng.gen_range(0..columns.len())];
        let ops = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge];
        return Predicate::compare(col.name.clone(), ops[rng.gen_range(0..ops.len())], literal_for(rng, col));
    }
    match rng.gen_range(0..3) {
        0 => random_predicate(rng, columns, depth - 1).and(random_predicate(rng, columns, depth - 1)),
        1 => random_predicate(rng, columns, depth - 1).or(random_predicate(rng, columns, depth - 1)),
        _ => random_predicate(rng, columns, depth - 1).not(),
    }
}

/// A plan the validator accepts for `catalog`: a scan or a join on `k`, an
/// optional filter, then one of aggregate or project, then optional sort
/// and limit.
pub fn random_plan<R: Rng>(rng: &mut R, catalog: &Catalog) -> QueryPlan {
    let names: Vec<&String> = catalog.tables.keys().collect();
    let first = catalog.get(names[rng.gen_range(0..names.len())]).expect("listed");
    let mut plan = QueryPlan::scan(first.name.clone());
    let mut columns = first.columns.clone();
    let others: Vec<&&String> = names.iter().filter(|n| ***n != first.name).collect();
    if !others.is_empty() && rng.gen_bool(0.4) {
        let second = catalog.get(others[rng.gen_range(0..others.len())]).expect("listed");
        plan = plan.join(QueryPlan::scan(second.name.clone()), "k");
        columns.extend(second.columns.iter().filter(|c| c.name != "k").cloned());
    }
    if rng.gen_bool(0.7) {
        plan = plan.filter(random_predicate(rng, &columns, 2));
    }

    let mut out: Vec<Column> = columns.clone();
    match rng.gen_range(0..3) {
        0 => {
            let group: Vec<String> = if rng.gen_bool(0.5) { vec!["k".into()] } else { vec![] };
            let mut aggs = vec![];
            if rng.gen_bool(0.5) {
                aggs.push(AggregateExpr { func: AggFunc::Count, column: None, output: "count_all".into() });
            }
            for col in columns.iter().filter(|c| c.name != "k") {
                if !rng.gen_bool(0.6) {
                    continue;
                }
                let funcs: &[AggFunc] = if col.data_type == DataType::Number {
                    &[AggFunc::Sum, AggFunc::Avg, AggFunc::Count, AggFunc::Min, AggFunc::Max]
                } else {
                    &[AggFunc::Count]
                };
                let func = funcs[rng.gen_range(0..funcs.len())];
                aggs.push(AggregateExpr {
                    func,
                    column: Some(col.name.clone()),
                    output: format!("{}_{}", func.name().to_lowercase(), col.name),
                });
            }
            if aggs.is_empty() {
                aggs.push(AggregateExpr { func: AggFunc::Count, column: None, output: "count_all".into() });
            }
            out = group.iter().map(|g| Column::new(g.clone(), DataType::Text)).collect();
            out.extend(aggs.iter().map(|a| Column::new(a.output.clone(), DataType::Number)));
            plan = plan.aggregate(group, aggs);
        }
        1 => {
            let mut keep: Vec<Column> = columns.iter().filter(|_| rng.gen_bool(0.6)).cloned().collect();
            if keep.is_empty() {
                keep.push(columns[0].clone());
            }
            plan = plan.project(keep.iter().map(|c| c.name.clone()));
            out = keep;
        }
        _ => {}
    }
    if rng.gen_bool(0.5) {
        let col = &out[rng.gen_range(0..out.len())];
        let dir = if rng.gen_bool(0.5) { SortDirection::Asc } else { SortDirection::Desc };
        plan = plan.sort(col.name.clone(), dir);
    }
    if rng.gen_bool(0.3) {
        plan = plan.limit(rng.gen_range(0..=5));
    }
    plan
}

/// The defect a plan was given by [`corrupt_plan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Defect {
    UnknownTable,
    UnknownColumn,
    TypeMismatch,
    UnitMismatch,
}

fn scans_mut(plan: &mut QueryPlan) -> &mut QueryPlan {
    match plan {
        QueryPlan::Scan { .. } => plan,
        QueryPlan::Filter { input, .. }
        | QueryPlan::Project { input, .. }
        | QueryPlan::Aggregate { input, .. }
        | QueryPlan::Sort { input, .. }
        | QueryPlan::Limit { input, .. } => scans_mut(input),
        QueryPlan::Join { left, .. } => scans_mut(left),
    }
}

/// Wraps the leftmost scan of `plan` so the result is invalid for `catalog`,
/// or renames that scan to a missing table. Returns the defect planted.
pub fn corrupt_plan<R: Rng>(rng: &mut R, plan: &QueryPlan, catalog: &Catalog) -> (QueryPlan, Defect) {
    let mut bad = plan.clone();
    let leaf = scans_mut(&mut bad);
    let QueryPlan::Scan { table } = leaf.clone() else { unreachable!("leftmost leaf is a scan") };
    let schema = catalog.get(&table).expect("plan scans catalog tables");
    let percent = schema.columns.iter().find(|c| c.unit == Some(Unit::Percent));
    let defect = match rng.gen_range(0..4) {
        3 if percent.is_some() => Defect::UnitMismatch,
        0 => Defect::UnknownTable,
        1 => Defect::UnknownColumn,
        _ => Defect::TypeMismatch,
    };
    *leaf = match defect {
        Defect::UnknownTable => QueryPlan::scan(format!("{table}_missing")),
        Defect::UnknownColumn => QueryPlan::scan(table).filter(Predicate::compare(
            "no_such_column",
            CmpOp::Eq,
            Literal::new(Value::Number(1.0)),
        )),
        Defect::TypeMismatch => {
            QueryPlan::scan(table).filter(Predicate::compare("k", CmpOp::Gt, Literal::new(Value::Bool(true))))
        }
        Defect::UnitMismatch => {
            let col = percent.expect("chosen only when present").name.clone();
            QueryPlan::scan(table).filter(Predicate::compare(col, CmpOp::Gt, Literal::new(Value::Number(dyadic(rng)))))
        }
    };
    (bad, defect)
}
