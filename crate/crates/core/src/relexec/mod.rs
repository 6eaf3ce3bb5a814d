//! Relational plans over structured tables: the plan tree, its textual
//! grammar, the executor and a reference evaluator for cross-checking.

mod exec;
mod oracle;
mod parse;
mod plan;
mod result;

pub use exec::{execute, ExecError};
pub use oracle::oracle_execute;
pub use parse::{parse_plan, PlanParseError};
pub use plan::{AggFunc, AggregateExpr, CmpOp, Literal, Operand, Predicate, QueryPlan, SortDirection, ValidatedPlan};
pub use result::{ResultTable, RowRef};

pub(crate) use exec::aggregate_columns;
