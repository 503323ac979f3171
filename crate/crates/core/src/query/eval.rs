//! Reference evaluator with bag semantics.
//!
//! Sources may opt into scan pushdown: the evaluator then hands a selection
//! predicate and a column list to the source along with the relation name.
//! In-memory maps never do, which keeps [`evaluate`] a plain recursive
//! interpretation of the algebra.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::QueryError;
use crate::schema::RelationSchema;
use crate::table::{Table, Tuple};
use crate::value::{compare_values, DataValue};

use super::ast::{CompareOp, Expr, Predicate, QualifiedName, Query};
use super::infer::{infer_node, infer_schema, node_label, SchemaCatalog};

pub const REDACTED: &str = "REDACTED";

/// A relation fetch handed to a [`RelationSource`].
#[derive(Debug, Clone)]
pub struct ScanRequest<'a> {
    pub relation: &'a QualifiedName,
    /// Rows failing this predicate may be skipped while reading.
    pub filter: Option<&'a Predicate>,
    /// Keep only these attributes, in this order. Applied after `filter`.
    pub columns: Option<Vec<String>>,
}

pub trait RelationSource {
    type Error: From<QueryError>;

    fn schema(&self, name: &QualifiedName) -> Option<RelationSchema>;

    fn scan(&self, request: &ScanRequest<'_>) -> Result<Table, Self::Error>;

    /// Whether `scan` honors `filter` and `columns`.
    fn supports_pushdown(&self) -> bool {
        false
    }
}

macro_rules! map_source {
    ($map:ident) => {
        impl RelationSource for $map<QualifiedName, Table> {
            type Error = QueryError;

            fn schema(&self, name: &QualifiedName) -> Option<RelationSchema> {
                self.get(name).map(|t| t.schema.clone())
            }

            fn scan(&self, request: &ScanRequest<'_>) -> Result<Table, QueryError> {
                Ok(self[request.relation].clone())
            }
        }
    };
}

map_source!(HashMap);
map_source!(BTreeMap);

struct SourceCatalog<'a, S: ?Sized>(&'a S);

impl<S: RelationSource + ?Sized> SchemaCatalog for SourceCatalog<'_, S> {
    fn relation_schema(&self, name: &QualifiedName) -> Option<RelationSchema> {
        self.0.schema(name)
    }
}

/// Evaluates `q` over an in-memory database with an empty hash salt.
pub fn evaluate<S>(q: &Query, db: &S) -> Result<Table, S::Error>
where
    S: RelationSource + ?Sized,
{
    evaluate_with(q, db, "")
}

/// Evaluates `q`, salting `hash()` with `salt`.
pub fn evaluate_with<S>(q: &Query, source: &S, salt: &str) -> Result<Table, S::Error>
where
    S: RelationSource + ?Sized,
{
    infer_schema(q, &SourceCatalog(source))?;
    Evaluator { source, salt }.eval(q, "")
}

struct Evaluator<'a, S: ?Sized> {
    source: &'a S,
    salt: &'a str,
}

impl<S: RelationSource + ?Sized> Evaluator<'_, S> {
    fn eval(&self, q: &Query, parent: &str) -> Result<Table, S::Error> {
        let path = if parent.is_empty() {
            node_label(q)
        } else {
            format!("{parent}/{}", node_label(q))
        };
        if self.source.supports_pushdown() {
            if let Some(t) = self.try_pushed_scan(q)? {
                return Ok(t);
            }
        }
        match q {
            Query::Scan(name) => self.source.scan(&ScanRequest {
                relation: name,
                filter: None,
                columns: None,
            }),
            Query::Select { input, predicate } => {
                let mut t = self.eval(input, &path)?;
                t.rows.retain(|row| satisfied(predicate, &t.schema, row, self.salt));
                Ok(t)
            }
            Query::Project { input, items } => {
                let t = self.eval(input, &path)?;
                let schema = infer_node(q, std::slice::from_ref(&t.schema), &path)?;
                let rows = t
                    .rows
                    .iter()
                    .map(|row| {
                        items
                            .iter()
                            .map(|i| eval_expr(&i.expr, &t.schema, row, self.salt))
                            .collect()
                    })
                    .collect();
                Ok(Table { schema, rows })
            }
            Query::Rename { input, .. } => {
                let t = self.eval(input, &path)?;
                let schema = infer_node(q, &[t.schema], &path)?;
                Ok(Table { schema, rows: t.rows })
            }
            Query::Join { left, right, on } => {
                let l = self.eval(left, &format!("{path}/left"))?;
                let r = self.eval(right, &format!("{path}/right"))?;
                let schema = infer_node(q, &[l.schema.clone(), r.schema.clone()], &path)?;
                Ok(Table {
                    schema,
                    rows: join_rows(&l, &r, on),
                })
            }
            Query::Union { left, right } => {
                let l = self.eval(left, &format!("{path}/left"))?;
                let r = self.eval(right, &format!("{path}/right"))?;
                let schema = infer_node(q, &[l.schema, r.schema], &path)?;
                let mut rows = l.rows;
                rows.extend(r.rows);
                Ok(Table { schema, rows })
            }
        }
    }

    /// `Select(Scan)`, `Project(Scan)` and `Project(Select(Scan))` with plain
    /// column projections go to the source as one scan request.
    fn try_pushed_scan(&self, q: &Query) -> Result<Option<Table>, S::Error> {
        let (items, below) = match q {
            Query::Project { input, items } if items.iter().all(|i| matches!(i.expr, Expr::Attr(_))) => {
                (Some(items), input.as_ref())
            }
            _ => (None, q),
        };
        let (filter, scan) = match below {
            Query::Select { input, predicate } => (Some(predicate), input.as_ref()),
            other => (None, other),
        };
        let Query::Scan(relation) = scan else { return Ok(None) };
        if items.is_none() && filter.is_none() {
            return Ok(None);
        }
        let columns = items.map(|items| {
            let mut cols: Vec<String> = Vec::new();
            for i in items {
                if let Expr::Attr(a) = &i.expr {
                    if !cols.contains(a) {
                        cols.push(a.clone());
                    }
                }
            }
            cols
        });
        let mut t = self.source.scan(&ScanRequest {
            relation,
            filter,
            columns: columns.clone(),
        })?;
        if let Some(items) = items {
            let schema = infer_node(q, &[t.schema.clone()], "project")?;
            t.rows = t
                .rows
                .iter()
                .map(|row| {
                    items
                        .iter()
                        .map(|i| eval_expr(&i.expr, &t.schema, row, self.salt))
                        .collect()
                })
                .collect();
            t.schema = schema;
        }
        Ok(Some(t))
    }
}

fn join_rows(l: &Table, r: &Table, on: &[(String, String)]) -> Vec<Tuple> {
    let pairs: Vec<(usize, usize)> = on
        .iter()
        .map(|(a, b)| (l.schema.position(a).unwrap(), r.schema.position(b).unwrap()))
        .collect();
    let dropped: BTreeSet<usize> = pairs.iter().map(|(_, j)| *j).collect();
    let mut out = Vec::new();
    for lrow in &l.rows {
        for rrow in &r.rows {
            let matches = pairs
                .iter()
                .all(|(i, j)| compare_values(&lrow[*i], &rrow[*j]) == Some(Ordering::Equal));
            if matches {
                let mut row = lrow.clone();
                row.extend(
                    rrow.iter()
                        .enumerate()
                        .filter(|(k, _)| !dropped.contains(k))
                        .map(|(_, v)| v.clone()),
                );
                out.push(row);
            }
        }
    }
    out
}

/// 64-bit FNV-1a over UTF-8 bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

/// `hash()` semantics: null stays null, anything else becomes 16 lowercase
/// hex digits of FNV-1a over `salt` followed by the canonical rendering.
pub fn salted_hash(salt: &str, value: &DataValue) -> DataValue {
    if value.is_null() {
        return DataValue::Null;
    }
    let mut input = salt.as_bytes().to_vec();
    input.extend_from_slice(value.render().as_bytes());
    DataValue::Text(format!("{:016x}", fnv1a64(&input)))
}

pub fn eval_expr(e: &Expr, schema: &RelationSchema, row: &[DataValue], salt: &str) -> DataValue {
    match e {
        Expr::Attr(a) => row[schema.position(a).expect("type-checked attribute")].clone(),
        Expr::Literal(v) => v.clone(),
        Expr::Hash(inner) => salted_hash(salt, &eval_expr(inner, schema, row, salt)),
        Expr::Redact => DataValue::text(REDACTED),
        Expr::Concat(a, b) => match (eval_expr(a, schema, row, salt), eval_expr(b, schema, row, salt)) {
            (DataValue::Text(x), DataValue::Text(y)) => DataValue::Text(x + &y),
            _ => DataValue::Null,
        },
    }
}

/// Kleene three-valued truth; `None` is unknown.
pub fn truth(p: &Predicate, schema: &RelationSchema, row: &[DataValue], salt: &str) -> Option<bool> {
    match p {
        Predicate::Compare(a, op, b) => {
            let ord = compare_values(&eval_expr(a, schema, row, salt), &eval_expr(b, schema, row, salt))?;
            Some(match op {
                CompareOp::Eq => ord == Ordering::Equal,
                CompareOp::Ne => ord != Ordering::Equal,
                CompareOp::Lt => ord == Ordering::Less,
                CompareOp::Le => ord != Ordering::Greater,
                CompareOp::Gt => ord == Ordering::Greater,
                CompareOp::Ge => ord != Ordering::Less,
            })
        }
        Predicate::And(a, b) => match (truth(a, schema, row, salt), truth(b, schema, row, salt)) {
            (Some(false), _) | (_, Some(false)) => Some(false),
            (Some(true), Some(true)) => Some(true),
            _ => None,
        },
        Predicate::Or(a, b) => match (truth(a, schema, row, salt), truth(b, schema, row, salt)) {
            (Some(true), _) | (_, Some(true)) => Some(true),
            (Some(false), Some(false)) => Some(false),
            _ => None,
        },
        Predicate::Not(a) => truth(a, schema, row, salt).map(|t| !t),
    }
}

/// A row is kept only when the predicate is definitely true.
pub fn satisfied(p: &Predicate, schema: &RelationSchema, row: &[DataValue], salt: &str) -> bool {
    truth(p, schema, row, salt) == Some(true)
}
