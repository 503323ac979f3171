use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::schema::is_identifier;
use crate::value::DataValue;

/// `namespace.relation`, where the namespace names the serving component
/// (or a mediator's view namespace).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct QualifiedName {
    pub namespace: String,
    pub relation: String,
}

impl QualifiedName {
    pub fn new(namespace: impl Into<String>, relation: impl Into<String>) -> Self {
        QualifiedName {
            namespace: namespace.into(),
            relation: relation.into(),
        }
    }

    pub fn is_valid(&self) -> bool {
        is_identifier(&self.namespace) && is_identifier(&self.relation)
    }
}

impl fmt::Display for QualifiedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.namespace, self.relation)
    }
}

impl FromStr for QualifiedName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (ns, rel) = s
            .split_once('.')
            .ok_or_else(|| format!("expected namespace.relation, got {s:?}"))?;
        let name = QualifiedName::new(ns, rel);
        if name.is_valid() {
            Ok(name)
        } else {
            Err(format!("invalid qualified name {s:?}"))
        }
    }
}

impl TryFrom<String> for QualifiedName {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<QualifiedName> for String {
    fn from(n: QualifiedName) -> Self {
        n.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Attr(String),
    Literal(DataValue),
    /// Salted 64-bit FNV-1a, rendered as 16 lowercase hex digits.
    Hash(Box<Expr>),
    /// Constant `"REDACTED"`.
    Redact,
    Concat(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn attr(name: &str) -> Self {
        Expr::Attr(name.to_string())
    }

    pub fn hash(e: Expr) -> Self {
        Expr::Hash(Box::new(e))
    }

    pub fn concat(a: Expr, b: Expr) -> Self {
        Expr::Concat(Box::new(a), Box::new(b))
    }

    pub fn attributes(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Attr(a) => {
                out.insert(a.clone());
            }
            Expr::Literal(_) | Expr::Redact => {}
            Expr::Hash(e) => e.attributes(out),
            Expr::Concat(a, b) => {
                a.attributes(out);
                b.attributes(out);
            }
        }
    }

    pub fn contains_hash(&self) -> bool {
        match self {
            Expr::Hash(_) => true,
            Expr::Concat(a, b) => a.contains_hash() || b.contains_hash(),
            _ => false,
        }
    }

    pub(crate) fn rename_attrs(&self, f: &impl Fn(&str) -> String) -> Expr {
        match self {
            Expr::Attr(a) => Expr::Attr(f(a)),
            Expr::Literal(_) | Expr::Redact => self.clone(),
            Expr::Hash(e) => Expr::hash(e.rename_attrs(f)),
            Expr::Concat(a, b) => Expr::concat(a.rename_attrs(f), b.rename_attrs(f)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    pub const ALL: [CompareOp; 6] = [
        CompareOp::Eq,
        CompareOp::Ne,
        CompareOp::Lt,
        CompareOp::Le,
        CompareOp::Gt,
        CompareOp::Ge,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "<>",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Predicate {
    Compare(Expr, CompareOp, Expr),
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    pub fn compare(a: Expr, op: CompareOp, b: Expr) -> Self {
        Predicate::Compare(a, op, b)
    }

    pub fn and(a: Predicate, b: Predicate) -> Self {
        Predicate::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Predicate, b: Predicate) -> Self {
        Predicate::Or(Box::new(a), Box::new(b))
    }

    pub fn negate(a: Predicate) -> Self {
        Predicate::Not(Box::new(a))
    }

    pub fn attributes(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_attributes(&mut out);
        out
    }

    fn collect_attributes(&self, out: &mut BTreeSet<String>) {
        match self {
            Predicate::Compare(a, _, b) => {
                a.attributes(out);
                b.attributes(out);
            }
            Predicate::And(a, b) | Predicate::Or(a, b) => {
                a.collect_attributes(out);
                b.collect_attributes(out);
            }
            Predicate::Not(a) => a.collect_attributes(out),
        }
    }

    pub fn contains_hash(&self) -> bool {
        match self {
            Predicate::Compare(a, _, b) => a.contains_hash() || b.contains_hash(),
            Predicate::And(a, b) | Predicate::Or(a, b) => a.contains_hash() || b.contains_hash(),
            Predicate::Not(a) => a.contains_hash(),
        }
    }

    /// Splits nested ANDs into their conjuncts, left to right.
    pub fn conjuncts(self) -> Vec<Predicate> {
        match self {
            Predicate::And(a, b) => {
                let mut out = a.conjuncts();
                out.extend(b.conjuncts());
                out
            }
            p => vec![p],
        }
    }

    /// Left-nested AND of `parts`; `None` when empty.
    pub fn conjoin(parts: Vec<Predicate>) -> Option<Predicate> {
        parts.into_iter().reduce(Predicate::and)
    }

    pub(crate) fn rename_attrs(&self, f: &impl Fn(&str) -> String) -> Predicate {
        match self {
            Predicate::Compare(a, op, b) => Predicate::Compare(a.rename_attrs(f), *op, b.rename_attrs(f)),
            Predicate::And(a, b) => Predicate::and(a.rename_attrs(f), b.rename_attrs(f)),
            Predicate::Or(a, b) => Predicate::or(a.rename_attrs(f), b.rename_attrs(f)),
            Predicate::Not(a) => Predicate::negate(a.rename_attrs(f)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProjectItem {
    pub expr: Expr,
    pub name: String,
}

impl ProjectItem {
    pub fn new(expr: Expr, name: &str) -> Self {
        ProjectItem {
            expr,
            name: name.to_string(),
        }
    }

    /// `attr AS attr`.
    pub fn column(name: &str) -> Self {
        ProjectItem::new(Expr::attr(name), name)
    }
}

/// Relational algebra over bags.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Query {
    Scan(QualifiedName),
    Select {
        input: Box<Query>,
        predicate: Predicate,
    },
    Project {
        input: Box<Query>,
        items: Vec<ProjectItem>,
    },
    Rename {
        input: Box<Query>,
        /// Ordered `old -> new` pairs.
        renames: Vec<(String, String)>,
    },
    /// Inner equi-join; pairs are `(left attribute, right attribute)`.
    /// Right-hand join attributes are dropped from the output.
    Join {
        left: Box<Query>,
        right: Box<Query>,
        on: Vec<(String, String)>,
    },
    /// Bag union (concatenation).
    Union {
        left: Box<Query>,
        right: Box<Query>,
    },
}

impl Query {
    pub fn scan(namespace: &str, relation: &str) -> Self {
        Query::Scan(QualifiedName::new(namespace, relation))
    }

    pub fn select(self, predicate: Predicate) -> Self {
        Query::Select {
            input: Box::new(self),
            predicate,
        }
    }

    pub fn project(self, items: Vec<ProjectItem>) -> Self {
        Query::Project {
            input: Box::new(self),
            items,
        }
    }

    pub fn project_columns(self, names: &[&str]) -> Self {
        self.project(names.iter().map(|n| ProjectItem::column(n)).collect())
    }

    pub fn rename(self, renames: &[(&str, &str)]) -> Self {
        Query::Rename {
            input: Box::new(self),
            renames: renames.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }

    pub fn join(self, right: Query, on: &[(&str, &str)]) -> Self {
        Query::Join {
            left: Box::new(self),
            right: Box::new(right),
            on: on.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }

    pub fn union(self, right: Query) -> Self {
        Query::Union {
            left: Box::new(self),
            right: Box::new(right),
        }
    }

    pub fn children(&self) -> Vec<&Query> {
        match self {
            Query::Scan(_) => vec![],
            Query::Select { input, .. } | Query::Project { input, .. } | Query::Rename { input, .. } => {
                vec![input]
            }
            Query::Join { left, right, .. } | Query::Union { left, right } => vec![left, right],
        }
    }

    /// Every scanned relation, in tree order, with repeats.
    pub fn scans(&self) -> Vec<&QualifiedName> {
        let mut out = Vec::new();
        self.collect_scans(&mut out);
        out
    }

    fn collect_scans<'a>(&'a self, out: &mut Vec<&'a QualifiedName>) {
        if let Query::Scan(n) = self {
            out.push(n);
        }
        for c in self.children() {
            c.collect_scans(out);
        }
    }

    pub fn namespaces(&self) -> BTreeSet<&str> {
        self.scans().into_iter().map(|n| n.namespace.as_str()).collect()
    }

    /// True if any projection or predicate in the tree calls `hash()`.
    pub fn contains_hash(&self) -> bool {
        let here = match self {
            Query::Project { items, .. } => items.iter().any(|i| i.expr.contains_hash()),
            Query::Select { predicate, .. } => predicate.contains_hash(),
            _ => false,
        };
        here || self.children().into_iter().any(Query::contains_hash)
    }

    /// Rewrites every scanned name through `f`.
    pub fn map_scans(&self, f: &mut impl FnMut(&QualifiedName) -> Query) -> Query {
        match self {
            Query::Scan(n) => f(n),
            Query::Select { input, predicate } => input.map_scans(f).select(predicate.clone()),
            Query::Project { input, items } => input.map_scans(f).project(items.clone()),
            Query::Rename { input, renames } => Query::Rename {
                input: Box::new(input.map_scans(f)),
                renames: renames.clone(),
            },
            Query::Join { left, right, on } => Query::Join {
                left: Box::new(left.map_scans(f)),
                right: Box::new(right.map_scans(f)),
                on: on.clone(),
            },
            Query::Union { left, right } => left.map_scans(f).union(right.map_scans(f)),
        }
    }

    /// Merges stacked selections into one conjunctive selection
    /// (inner predicate first), recursively.
    pub fn normalized(&self) -> Query {
        match self {
            Query::Select { input, predicate } => match input.normalized() {
                Query::Select {
                    input: inner,
                    predicate: inner_pred,
                } => inner.select(Predicate::and(inner_pred, predicate.clone())),
                other => other.select(predicate.clone()),
            },
            Query::Scan(_) => self.clone(),
            Query::Project { input, items } => input.normalized().project(items.clone()),
            Query::Rename { input, renames } => Query::Rename {
                input: Box::new(input.normalized()),
                renames: renames.clone(),
            },
            Query::Join { left, right, on } => Query::Join {
                left: Box::new(left.normalized()),
                right: Box::new(right.normalized()),
                on: on.clone(),
            },
            Query::Union { left, right } => left.normalized().union(right.normalized()),
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::render::render_query(self))
    }
}
