use std::fmt;

use thiserror::Error;

use crate::value::DataType;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValueError {
    #[error("malformed {kind} value {text:?}")]
    Malformed { kind: DataType, text: String },
    #[error("unknown type name {0:?}")]
    UnknownType(String),
}

/// Syntax error with a 1-based source position.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at {line}:{column}: expected {}, found {found}", expected.join(" | "))]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub expected: Vec<String>,
    pub found: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryErrorKind {
    UnknownRelation,
    UnknownAttribute,
    TypeMismatch,
    DuplicateName,
}

impl fmt::Display for QueryErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryErrorKind::UnknownRelation => "unknown relation",
            QueryErrorKind::UnknownAttribute => "unknown attribute",
            QueryErrorKind::TypeMismatch => "type mismatch",
            QueryErrorKind::DuplicateName => "duplicate name",
        })
    }
}

/// Static checking failure. `path` locates the offending node, root first,
/// e.g. `project/select/scan(hr.people)`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at {path}: {message}")]
pub struct QueryError {
    pub kind: QueryErrorKind,
    pub path: String,
    pub message: String,
}

impl QueryError {
    pub fn new(kind: QueryErrorKind, path: impl Into<String>, message: impl Into<String>) -> Self {
        QueryError {
            kind,
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ViewError {
    #[error(transparent)]
    Syntax(#[from] ParseError),
    #[error("duplicate view {0}")]
    DuplicateView(String),
    #[error("view {view} depends on undeclared view {missing}")]
    UndeclaredView { view: String, missing: String },
    #[error("view cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("view {view}: {source}")]
    Query {
        view: String,
        #[source]
        source: QueryError,
    },
    #[error("view {view} exposes identifying attribute {attribute} without hash() or redact()")]
    IdentifyingLeak { view: String, attribute: String },
    #[error("unknown relation {0}")]
    UnknownRelation(String),
    #[error("no binding for namespace {0}")]
    UnboundNamespace(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("bad header: {0}")]
    Header(String),
}

impl FormatError {
    pub(crate) fn at(line: usize, message: impl Into<String>) -> Self {
        FormatError::Malformed {
            line,
            message: message.into(),
        }
    }
}
