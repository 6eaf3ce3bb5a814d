//! Operator trees and their canonical text form.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::table::{Catalog, TableSchema, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortDirection {
    Asc,
    Desc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AggFunc {
    Sum,
    Avg,
    Count,
    Min,
    Max,
}

impl AggFunc {
    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Sum => "SUM",
            AggFunc::Avg => "AVG",
            AggFunc::Count => "COUNT",
            AggFunc::Min => "MIN",
            AggFunc::Max => "MAX",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SUM" => Some(AggFunc::Sum),
            "AVG" => Some(AggFunc::Avg),
            "COUNT" => Some(AggFunc::Count),
            "MIN" => Some(AggFunc::Min),
            "MAX" => Some(AggFunc::Max),
            _ => None,
        }
    }

    pub fn needs_number(self) -> bool {
        !matches!(self, AggFunc::Count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateExpr {
    pub func: AggFunc,
    /// `None` is `*`, only meaningful for COUNT.
    pub column: Option<String>,
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

/// Typed literal. `percent` marks a `15%` style literal.
#[derive(Debug, Clone, PartialEq)]
pub struct Literal {
    pub value: Value,
    pub percent: bool,
}

impl Literal {
    pub fn new(value: Value) -> Self {
        Literal { value, percent: false }
    }

    pub fn percent(n: f64) -> Self {
        Literal { value: Value::Number(n), percent: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Literal(Literal),
    Column(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Compare { column: String, op: CmpOp, operand: Operand },
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    pub fn compare(column: impl Into<String>, op: CmpOp, literal: Literal) -> Self {
        Predicate::Compare { column: column.into(), op, operand: Operand::Literal(literal) }
    }

    pub fn and(self, other: Predicate) -> Self {
        Predicate::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Predicate) -> Self {
        Predicate::Or(Box::new(self), Box::new(other))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        Predicate::Not(Box::new(self))
    }

    pub fn depth(&self) -> usize {
        match self {
            Predicate::Compare { .. } => 1,
            Predicate::And(a, b) | Predicate::Or(a, b) => 1 + a.depth().max(b.depth()),
            Predicate::Not(p) => 1 + p.depth(),
        }
    }
}

/// Relational operator tree. Scans are the only leaves; joins are inner
/// equi-joins on one key column.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryPlan {
    Scan { table: String },
    Filter { predicate: Predicate, input: Box<QueryPlan> },
    Project { columns: Vec<String>, input: Box<QueryPlan> },
    Join { left: Box<QueryPlan>, right: Box<QueryPlan>, key: String },
    Aggregate { group_by: Vec<String>, aggregates: Vec<AggregateExpr>, input: Box<QueryPlan> },
    Sort { column: String, direction: SortDirection, input: Box<QueryPlan> },
    Limit { n: usize, input: Box<QueryPlan> },
}

impl QueryPlan {
    pub fn scan(table: impl Into<String>) -> Self {
        QueryPlan::Scan { table: table.into() }
    }

    pub fn filter(self, predicate: Predicate) -> Self {
        QueryPlan::Filter { predicate, input: Box::new(self) }
    }

    pub fn project<S: Into<String>>(self, columns: impl IntoIterator<Item = S>) -> Self {
        QueryPlan::Project { columns: columns.into_iter().map(Into::into).collect(), input: Box::new(self) }
    }

    pub fn join(self, right: QueryPlan, key: impl Into<String>) -> Self {
        QueryPlan::Join { left: Box::new(self), right: Box::new(right), key: key.into() }
    }

    pub fn aggregate<S: Into<String>>(
        self,
        group_by: impl IntoIterator<Item = S>,
        aggregates: Vec<AggregateExpr>,
    ) -> Self {
        QueryPlan::Aggregate {
            group_by: group_by.into_iter().map(Into::into).collect(),
            aggregates,
            input: Box::new(self),
        }
    }

    pub fn sort(self, column: impl Into<String>, direction: SortDirection) -> Self {
        QueryPlan::Sort { column: column.into(), direction, input: Box::new(self) }
    }

    pub fn limit(self, n: usize) -> Self {
        QueryPlan::Limit { n, input: Box::new(self) }
    }

    /// Operator names in pre-order, e.g. `["Aggregate", "Filter", "Scan"]`.
    pub fn operators(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        self.walk(&mut |p| out.push(p.operator_name()));
        out
    }

    pub fn operator_name(&self) -> &'static str {
        match self {
            QueryPlan::Scan { .. } => "Scan",
            QueryPlan::Filter { .. } => "Filter",
            QueryPlan::Project { .. } => "Project",
            QueryPlan::Join { .. } => "Join",
            QueryPlan::Aggregate { .. } => "Aggregate",
            QueryPlan::Sort { .. } => "Sort",
            QueryPlan::Limit { .. } => "Limit",
        }
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a QueryPlan)) {
        f(self);
        match self {
            QueryPlan::Scan { .. } => {}
            QueryPlan::Join { left, right, .. } => {
                left.walk(f);
                right.walk(f);
            }
            QueryPlan::Filter { input, .. }
            | QueryPlan::Project { input, .. }
            | QueryPlan::Aggregate { input, .. }
            | QueryPlan::Sort { input, .. }
            | QueryPlan::Limit { input, .. } => input.walk(f),
        }
    }

    pub fn scanned_tables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |p| {
            if let QueryPlan::Scan { table } = p {
                out.push(table.as_str());
            }
        });
        out
    }
}

/// A plan that passed validation against `catalog`; the only input the
/// executor accepts. Column references are normalized to schema casing and
/// literals are coerced to their column types.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedPlan {
    pub(crate) plan: QueryPlan,
    pub(crate) output: TableSchema,
    pub(crate) catalog: Catalog,
}

impl ValidatedPlan {
    pub fn plan(&self) -> &QueryPlan {
        &self.plan
    }

    pub fn output_schema(&self) -> &TableSchema {
        &self.output
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }
}

const KEYWORDS: &[&str] = &["and", "as", "date", "false", "not", "null", "or", "true"];

pub(crate) fn is_bare_ident(s: &str) -> bool {
    let mut chars = s.chars();
    let first_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
    first_ok
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !KEYWORDS.contains(&s.to_ascii_lowercase().as_str())
}

pub(crate) struct Ident<'a>(pub &'a str);

impl fmt::Display for Ident<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if is_bare_ident(self.0) {
            f.write_str(self.0)
        } else {
            write!(f, "`{}`", self.0.replace('`', "``"))
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.value {
            Value::Null => f.write_str("null"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Number(n) => {
                write!(f, "{n}")?;
                if self.percent {
                    f.write_str("%")?;
                }
                Ok(())
            }
            Value::Text(s) => f.write_str(&serde_json::to_string(s).expect("string serializes")),
            Value::Date(d) => write!(f, "DATE \"{}\"", d.format("%Y-%m-%d")),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Compare { column, op, operand } => {
                write!(f, "({} {} ", Ident(column), op.symbol())?;
                match operand {
                    Operand::Literal(l) => write!(f, "{l})"),
                    Operand::Column(c) => write!(f, "{})", Ident(c)),
                }
            }
            Predicate::And(a, b) => write!(f, "({a} AND {b})"),
            Predicate::Or(a, b) => write!(f, "({a} OR {b})"),
            Predicate::Not(p) => write!(f, "NOT {p}"),
        }
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, items: &[String]) -> fmt::Result {
    f.write_str("[")?;
    for (i, c) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{}", Ident(c))?;
    }
    f.write_str("]")
}

impl fmt::Display for AggregateExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.column {
            Some(c) => write!(f, "{}({}) AS {}", self.func.name(), Ident(c), Ident(&self.output)),
            None => write!(f, "{}(*) AS {}", self.func.name(), Ident(&self.output)),
        }
    }
}

/// Canonical serialization, e.g.
/// `Aggregate(group=[], aggs=[SUM(sales) AS total], input=Filter(pred=(quarter = "Q3"), input=Scan(sales)))`.
impl fmt::Display for QueryPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryPlan::Scan { table } => write!(f, "Scan({})", Ident(table)),
            QueryPlan::Filter { predicate, input } => write!(f, "Filter(pred={predicate}, input={input})"),
            QueryPlan::Project { columns, input } => {
                f.write_str("Project(cols=")?;
                write_list(f, columns)?;
                write!(f, ", input={input})")
            }
            QueryPlan::Join { left, right, key } => {
                write!(f, "Join(left={left}, right={right}, key={})", Ident(key))
            }
            QueryPlan::Aggregate { group_by, aggregates, input } => {
                f.write_str("Aggregate(group=")?;
                write_list(f, group_by)?;
                f.write_str(", aggs=[")?;
                for (i, a) in aggregates.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, "], input={input})")
            }
            QueryPlan::Sort { column, direction, input } => {
                let dir = match direction {
                    SortDirection::Asc => "asc",
                    SortDirection::Desc => "desc",
                };
                write!(f, "Sort(col={}, dir={dir}, input={input})", Ident(column))
            }
            QueryPlan::Limit { n, input } => write!(f, "Limit(n={n}, input={input})"),
        }
    }
}
