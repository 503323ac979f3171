//! Shared model for mask-mediator-wrapper components: the relational
//! metamodel, the query language with its reference evaluator, view
//! declarations with unfolding and planning, and the delimited/JSON-lines
//! data formats.

pub mod error;
pub mod format;
pub mod query;
pub mod schema;
pub mod table;
pub mod value;
pub mod views;

#[cfg(feature = "testkit")]
pub mod testkit;

pub use error::{FormatError, ParseError, QueryError, QueryErrorKind, ValueError, ViewError};
pub use query::{parse_query, render_query, Expr, Predicate, ProjectItem, QualifiedName, Query};
pub use schema::{
    conform, is_identifier, validate_product_schema, Attribute, ProductSchema, RelationSchema, Violation,
};
pub use table::{Table, Tuple};
pub use value::{compare_values, DataType, DataValue, Decimal, Timestamp};
