//! Static schema inference.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{QueryError, QueryErrorKind};
use crate::schema::{Attribute, RelationSchema};
use crate::table::Table;
use crate::value::DataType;

use super::ast::{Expr, Predicate, ProjectItem, QualifiedName, Query};

/// Anything that can resolve a qualified relation name to its schema.
pub trait SchemaCatalog {
    fn relation_schema(&self, name: &QualifiedName) -> Option<RelationSchema>;
}

impl SchemaCatalog for HashMap<QualifiedName, RelationSchema> {
    fn relation_schema(&self, name: &QualifiedName) -> Option<RelationSchema> {
        self.get(name).cloned()
    }
}

impl SchemaCatalog for BTreeMap<QualifiedName, RelationSchema> {
    fn relation_schema(&self, name: &QualifiedName) -> Option<RelationSchema> {
        self.get(name).cloned()
    }
}

impl SchemaCatalog for HashMap<QualifiedName, Table> {
    fn relation_schema(&self, name: &QualifiedName) -> Option<RelationSchema> {
        self.get(name).map(|t| t.schema.clone())
    }
}

impl SchemaCatalog for BTreeMap<QualifiedName, Table> {
    fn relation_schema(&self, name: &QualifiedName) -> Option<RelationSchema> {
        self.get(name).map(|t| t.schema.clone())
    }
}

impl<C: SchemaCatalog + ?Sized> SchemaCatalog for &C {
    fn relation_schema(&self, name: &QualifiedName) -> Option<RelationSchema> {
        (**self).relation_schema(name)
    }
}

/// Output schema of `q` against `env`.
pub fn infer_schema(q: &Query, env: &dyn SchemaCatalog) -> Result<RelationSchema, QueryError> {
    infer_at(q, env, "")
}

fn child_path(path: &str, seg: &str) -> String {
    if path.is_empty() {
        seg.to_string()
    } else {
        format!("{path}/{seg}")
    }
}

pub(crate) fn node_label(q: &Query) -> String {
    match q {
        Query::Scan(n) => format!("scan({n})"),
        Query::Select { .. } => "select".into(),
        Query::Project { .. } => "project".into(),
        Query::Rename { .. } => "rename".into(),
        Query::Join { .. } => "join".into(),
        Query::Union { .. } => "union".into(),
    }
}

fn infer_at(q: &Query, env: &dyn SchemaCatalog, parent: &str) -> Result<RelationSchema, QueryError> {
    let path = child_path(parent, &node_label(q));
    let children: Vec<RelationSchema> = match q {
        Query::Scan(name) => {
            return env
                .relation_schema(name)
                .ok_or_else(|| QueryError::new(QueryErrorKind::UnknownRelation, &path, format!("no relation {name}")))
        }
        Query::Join { left, right, .. } | Query::Union { left, right } => vec![
            infer_at(left, env, &child_path(&path, "left"))?,
            infer_at(right, env, &child_path(&path, "right"))?,
        ],
        Query::Select { input, .. } | Query::Project { input, .. } | Query::Rename { input, .. } => {
            vec![infer_at(input, env, &path)?]
        }
    };
    infer_node(q, &children, &path)
}

/// Type of an expression: `data_type` is `None` only for an untyped NULL literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExprType {
    pub data_type: Option<DataType>,
    pub nullable: bool,
    pub tags: BTreeSet<String>,
}

pub fn infer_expr(e: &Expr, input: &RelationSchema, path: &str) -> Result<ExprType, QueryError> {
    let text = |nullable| ExprType {
        data_type: Some(DataType::Text),
        nullable,
        tags: BTreeSet::new(),
    };
    match e {
        Expr::Attr(name) => {
            let attr = input.attribute(name).ok_or_else(|| {
                QueryError::new(
                    QueryErrorKind::UnknownAttribute,
                    path,
                    format!("no attribute {name} in {}", input.name),
                )
            })?;
            Ok(ExprType {
                data_type: Some(attr.data_type),
                nullable: attr.nullable,
                tags: attr.tags.clone(),
            })
        }
        Expr::Literal(v) => Ok(ExprType {
            data_type: v.data_type(),
            nullable: v.is_null(),
            tags: BTreeSet::new(),
        }),
        Expr::Hash(inner) => Ok(text(infer_expr(inner, input, path)?.nullable)),
        Expr::Redact => Ok(text(false)),
        Expr::Concat(a, b) => {
            let ta = infer_expr(a, input, path)?;
            let tb = infer_expr(b, input, path)?;
            for t in [&ta, &tb] {
                if !matches!(t.data_type, None | Some(DataType::Text)) {
                    return Err(QueryError::new(
                        QueryErrorKind::TypeMismatch,
                        path,
                        format!("concat expects text, got {}", t.data_type.unwrap()),
                    ));
                }
            }
            // concat passes raw content through, so identifying tags survive it
            let mut out = text(ta.nullable || tb.nullable);
            out.tags = ta.tags.union(&tb.tags).cloned().collect();
            Ok(out)
        }
    }
}

pub fn check_predicate(p: &Predicate, input: &RelationSchema, path: &str) -> Result<(), QueryError> {
    match p {
        Predicate::Compare(a, op, b) => {
            let ta = infer_expr(a, input, path)?;
            let tb = infer_expr(b, input, path)?;
            if let (Some(x), Some(y)) = (ta.data_type, tb.data_type) {
                if x != y {
                    return Err(QueryError::new(
                        QueryErrorKind::TypeMismatch,
                        path,
                        format!("cannot compare {x} {} {y}", op.symbol()),
                    ));
                }
            }
            Ok(())
        }
        Predicate::And(a, b) | Predicate::Or(a, b) => {
            check_predicate(a, input, path)?;
            check_predicate(b, input, path)
        }
        Predicate::Not(a) => check_predicate(a, input, path),
    }
}

fn project_schema(items: &[ProjectItem], input: &RelationSchema, path: &str) -> Result<RelationSchema, QueryError> {
    if items.is_empty() {
        return Err(QueryError::new(QueryErrorKind::TypeMismatch, path, "empty projection"));
    }
    let mut attributes: Vec<Attribute> = Vec::with_capacity(items.len());
    for item in items {
        if attributes.iter().any(|a| a.name == item.name) {
            return Err(QueryError::new(
                QueryErrorKind::DuplicateName,
                path,
                format!("output name {} used twice", item.name),
            ));
        }
        let t = infer_expr(&item.expr, input, path)?;
        let data_type = t.data_type.ok_or_else(|| {
            QueryError::new(
                QueryErrorKind::TypeMismatch,
                path,
                format!("untyped NULL for {}", item.name),
            )
        })?;
        attributes.push(Attribute {
            name: item.name.clone(),
            data_type,
            nullable: t.nullable,
            tags: t.tags,
        });
    }
    Ok(RelationSchema::new(input.name.clone(), attributes))
}

/// Output schema of one node given its children's schemas.
pub(crate) fn infer_node(q: &Query, children: &[RelationSchema], path: &str) -> Result<RelationSchema, QueryError> {
    match q {
        Query::Scan(_) => Ok(children[0].clone()),
        Query::Select { predicate, .. } => {
            check_predicate(predicate, &children[0], path)?;
            Ok(children[0].clone())
        }
        Query::Project { items, .. } => project_schema(items, &children[0], path),
        Query::Rename { renames, .. } => {
            let input = &children[0];
            let mut out = input.clone();
            let mut seen_old = BTreeSet::new();
            for (old, new) in renames {
                if !seen_old.insert(old) {
                    return Err(QueryError::new(
                        QueryErrorKind::DuplicateName,
                        path,
                        format!("attribute {old} renamed twice"),
                    ));
                }
                let pos = input.position(old).ok_or_else(|| {
                    QueryError::new(
                        QueryErrorKind::UnknownAttribute,
                        path,
                        format!("no attribute {old} to rename"),
                    )
                })?;
                out.attributes[pos].name = new.clone();
            }
            for (i, a) in out.attributes.iter().enumerate() {
                if out.attributes[..i].iter().any(|b| b.name == a.name) {
                    return Err(QueryError::new(
                        QueryErrorKind::DuplicateName,
                        path,
                        format!("rename produces duplicate attribute {}", a.name),
                    ));
                }
            }
            if let Some(key) = &mut out.key {
                for k in key.iter_mut() {
                    if let Some((_, new)) = renames.iter().find(|(o, _)| o == k) {
                        *k = new.clone();
                    }
                }
            }
            Ok(out)
        }
        Query::Join { on, .. } => {
            let (left, right) = (&children[0], &children[1]);
            for (l, r) in on {
                let la = left.attribute(l).ok_or_else(|| {
                    QueryError::new(
                        QueryErrorKind::UnknownAttribute,
                        child_path(path, "left"),
                        format!("no attribute {l} in {}", left.name),
                    )
                })?;
                let ra = right.attribute(r).ok_or_else(|| {
                    QueryError::new(
                        QueryErrorKind::UnknownAttribute,
                        child_path(path, "right"),
                        format!("no attribute {r} in {}", right.name),
                    )
                })?;
                if la.data_type != ra.data_type {
                    return Err(QueryError::new(
                        QueryErrorKind::TypeMismatch,
                        path,
                        format!("join {l} ({}) = {r} ({})", la.data_type, ra.data_type),
                    ));
                }
            }
            let mut attributes = left.attributes.clone();
            for a in &right.attributes {
                if on.iter().any(|(_, r)| *r == a.name) {
                    continue;
                }
                if attributes.iter().any(|b| b.name == a.name) {
                    return Err(QueryError::new(
                        QueryErrorKind::DuplicateName,
                        path,
                        format!("attribute {} appears on both sides of the join; rename one", a.name),
                    ));
                }
                attributes.push(a.clone());
            }
            Ok(RelationSchema::new(left.name.clone(), attributes))
        }
        Query::Union { .. } => {
            let (left, right) = (&children[0], &children[1]);
            if left.arity() != right.arity() {
                return Err(QueryError::new(
                    QueryErrorKind::TypeMismatch,
                    path,
                    format!("union arity {} vs {}", left.arity(), right.arity()),
                ));
            }
            let mut attributes = Vec::with_capacity(left.arity());
            for (a, b) in left.attributes.iter().zip(&right.attributes) {
                if a.name != b.name || a.data_type != b.data_type {
                    return Err(QueryError::new(
                        QueryErrorKind::TypeMismatch,
                        path,
                        format!("union column {}:{} vs {}:{}", a.name, a.data_type, b.name, b.data_type),
                    ));
                }
                attributes.push(Attribute {
                    nullable: a.nullable || b.nullable,
                    tags: a.tags.union(&b.tags).cloned().collect(),
                    ..a.clone()
                });
            }
            Ok(RelationSchema::new(left.name.clone(), attributes))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse_query;
    use crate::schema::IDENTIFYING;

    fn env() -> HashMap<QualifiedName, RelationSchema> {
        let mut env = HashMap::new();
        env.insert(
            QualifiedName::new("hr", "people"),
            RelationSchema::new(
                "people",
                vec![
                    Attribute::new("id", DataType::Integer),
                    Attribute::new("name", DataType::Text).nullable(),
                    Attribute::new("ssn", DataType::Text).tagged(IDENTIFYING),
                ],
            ),
        );
        env.insert(
            QualifiedName::new("hr", "pay"),
            RelationSchema::new(
                "pay",
                vec![
                    Attribute::new("pid", DataType::Integer),
                    Attribute::new("amount", DataType::Integer),
                ],
            ),
        );
        env.insert(
            QualifiedName::new("hr", "pair"),
            RelationSchema::new("pair", vec![Attribute::new("a", DataType::Integer)]),
        );
        env
    }

    fn infer(text: &str) -> Result<RelationSchema, QueryError> {
        infer_schema(&parse_query(text).unwrap(), &env())
    }

    #[test]
    fn scan_is_identity() {
        assert_eq!(
            infer("SELECT * FROM hr.people").unwrap(),
            env()[&QualifiedName::new("hr", "people")]
        );
    }

    #[test]
    fn hash_yields_untagged_text() {
        let s = infer("SELECT hash(name) AS name_h, hash(ssn) AS ssn_h FROM hr.people").unwrap();
        assert_eq!(s.attributes[0].data_type, DataType::Text);
        assert!(s.attributes[0].nullable);
        assert!(!s.attributes[1].nullable);
        assert!(s.attributes[1].tags.is_empty());
        let s = infer("SELECT ssn, concat(ssn, 'x') AS c FROM hr.people").unwrap();
        assert!(s.attributes.iter().all(|a| a.is_identifying()));
    }

    #[test]
    fn union_arity_mismatch_names_both() {
        let err = infer("SELECT id FROM hr.people UNION SELECT pid, amount FROM hr.pay").unwrap_err();
        assert_eq!(err.kind, QueryErrorKind::TypeMismatch);
        assert!(err.message.contains('1') && err.message.contains('2'), "{err}");
        assert_eq!(err.path, "union");
    }

    #[test]
    fn join_drops_right_keys_and_rejects_collisions() {
        let s = infer("SELECT * FROM hr.people JOIN hr.pay ON id = pid").unwrap();
        assert_eq!(s.names().collect::<Vec<_>>(), ["id", "name", "ssn", "amount"]);
        let err = infer("SELECT * FROM hr.pay JOIN hr.pay ON pid = pid").unwrap_err();
        assert_eq!(err.kind, QueryErrorKind::DuplicateName);
        assert!(infer("SELECT * FROM hr.pay JOIN hr.pay RENAME (amount AS amount2) ON pid = pid").is_ok());
    }

    #[test]
    fn error_kinds_and_paths() {
        let e = infer("SELECT * FROM hr.nope").unwrap_err();
        assert_eq!(
            (e.kind, e.path.as_str()),
            (QueryErrorKind::UnknownRelation, "scan(hr.nope)")
        );
        let e = infer("SELECT nope FROM hr.people WHERE id > 1").unwrap_err();
        assert_eq!((e.kind, e.path.as_str()), (QueryErrorKind::UnknownAttribute, "project"));
        let e = infer("SELECT * FROM hr.people WHERE id = 'x'").unwrap_err();
        assert_eq!((e.kind, e.path.as_str()), (QueryErrorKind::TypeMismatch, "select"));
        let e = infer("SELECT id, name AS id FROM hr.people").unwrap_err();
        assert_eq!(e.kind, QueryErrorKind::DuplicateName);
        let e = infer("SELECT * FROM hr.people JOIN hr.pay ON name = pid").unwrap_err();
        assert_eq!(e.kind, QueryErrorKind::TypeMismatch);
        let e = infer("SELECT * FROM hr.pair UNION SELECT * FROM hr.nope").unwrap_err();
        assert_eq!(e.path, "union/right/scan(hr.nope)");
        let e = infer("SELECT concat(id, 'x') AS c FROM hr.people").unwrap_err();
        assert_eq!(e.kind, QueryErrorKind::TypeMismatch);
        let e = infer("SELECT NULL AS n FROM hr.people").unwrap_err();
        assert_eq!(e.kind, QueryErrorKind::TypeMismatch);
        assert!(infer("SELECT * FROM hr.people WHERE name = NULL").is_ok());
    }
}
