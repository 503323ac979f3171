//! The query language: algebra tree, surface syntax, type inference and the
//! reference evaluator.

mod ast;
mod eval;
mod infer;
mod parser;
mod render;

pub use ast::{CompareOp, Expr, Predicate, ProjectItem, QualifiedName, Query};
pub use eval::{
    eval_expr, evaluate, evaluate_with, fnv1a64, salted_hash, satisfied, truth, RelationSource, ScanRequest, REDACTED,
};
pub use infer::{check_predicate, infer_expr, infer_schema, ExprType, SchemaCatalog};
pub use parser::{is_reserved, parse_query};
pub use render::{render_expr, render_predicate, render_query};

pub(crate) use parser::Parser;
