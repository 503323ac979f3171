//! Seeded generators for property tests: base schemas, databases, view sets
//! and well-typed queries. Every generated query type-checks by
//! construction (and is checked again before it is returned).

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::query::{infer_schema, CompareOp, Expr, Predicate, ProjectItem, QualifiedName, Query};
use crate::schema::{Attribute, RelationSchema, IDENTIFYING};
use crate::table::{Table, Tuple};
use crate::value::{DataType, DataValue, Timestamp};
use crate::views::{ViewDeclaration, ViewSet};

pub type Catalog = BTreeMap<QualifiedName, RelationSchema>;
pub type Database = BTreeMap<QualifiedName, Table>;

/// Namespace generated views live in.
pub const VIEW_NAMESPACE: &str = "m";

/// A generated mediator scenario.
#[derive(Debug, Clone)]
pub struct Case {
    pub base: Catalog,
    pub db: Database,
    pub views: ViewSet,
    /// Reads only `m.*` views.
    pub query: Query,
}

#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub namespaces: usize,
    pub max_rows: usize,
    pub views: usize,
    pub depth: usize,
}

impl Default for Shape {
    fn default() -> Self {
        Shape {
            namespaces: 3,
            max_rows: 6,
            views: 3,
            depth: 3,
        }
    }
}

pub struct Gen {
    rng: ChaCha8Rng,
    fresh: usize,
}

const TEXTS: [&str; 4] = ["a", "b", "c", ""];
const DECIMALS: [&str; 3] = ["0.5", "1", "-2.25"];
const TIMES: [i64; 3] = [0, 86_400, 1_000_000_000];

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            fresh: 0,
        }
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.rng.random_bool(p)
    }

    fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }

    fn fresh(&mut self, prefix: &str) -> String {
        self.fresh += 1;
        format!("{prefix}{}", self.fresh)
    }

    pub fn data_type(&mut self) -> DataType {
        // integers dominate so joins and comparisons find matches
        *self.pick(&[
            DataType::Integer,
            DataType::Integer,
            DataType::Text,
            DataType::Text,
            DataType::Decimal,
            DataType::Boolean,
            DataType::Timestamp,
        ])
    }

    /// A non-null value from a small per-kind domain.
    pub fn value(&mut self, ty: DataType) -> DataValue {
        match ty {
            DataType::Boolean => DataValue::Boolean(self.chance(0.5)),
            DataType::Integer => DataValue::Integer(self.below(4) as i64),
            DataType::Decimal => DataValue::decimal(self.pick(&DECIMALS)).unwrap(),
            DataType::Text => DataValue::text(*self.pick(&TEXTS)),
            DataType::Timestamp => DataValue::Timestamp(Timestamp::from_unix_seconds(*self.pick(&TIMES)).unwrap()),
        }
    }

    pub fn cell(&mut self, attr: &Attribute) -> DataValue {
        if attr.nullable && self.chance(0.2) {
            DataValue::Null
        } else {
            self.value(attr.data_type)
        }
    }

    /// A relation with a leading non-null integer attribute and 1-2 more.
    pub fn relation(&mut self, name: &str) -> RelationSchema {
        let mut attrs = vec![Attribute::new(self.fresh("k"), DataType::Integer)];
        for _ in 0..1 + self.below(2) {
            let ty = self.data_type();
            let mut a = Attribute::new(self.fresh("c"), ty);
            a.nullable = self.chance(0.5);
            attrs.push(a);
        }
        RelationSchema::new(name, attrs)
    }

    /// Namespaces `w1..wN`, each with one or two relations.
    pub fn base_catalog(&mut self, namespaces: usize) -> Catalog {
        let mut out = Catalog::new();
        for n in 1..=namespaces {
            for r in 0..1 + self.below(2) {
                let rel = format!("r{r}");
                let schema = self.relation(&rel);
                out.insert(QualifiedName::new(format!("w{n}"), rel), schema);
            }
        }
        out
    }

    pub fn rows(&mut self, schema: &RelationSchema, max_rows: usize) -> Vec<Tuple> {
        let n = self.below(max_rows + 1);
        (0..n)
            .map(|_| schema.attributes.iter().map(|a| self.cell(a)).collect())
            .collect()
    }

    pub fn database(&mut self, catalog: &Catalog, max_rows: usize) -> Database {
        catalog
            .iter()
            .map(|(name, schema)| {
                let rows = self.rows(schema, max_rows);
                (name.clone(), Table::new(schema.clone(), rows).unwrap())
            })
            .collect()
    }

    fn literal_for(&mut self, ty: DataType) -> Expr {
        if self.chance(0.1) {
            Expr::Literal(DataValue::Null)
        } else {
            Expr::Literal(self.value(ty))
        }
    }

    pub fn predicate(&mut self, schema: &RelationSchema, depth: usize) -> Predicate {
        if depth > 0 && self.chance(0.35) {
            return match self.below(3) {
                0 => Predicate::and(self.predicate(schema, depth - 1), self.predicate(schema, depth - 1)),
                1 => Predicate::or(self.predicate(schema, depth - 1), self.predicate(schema, depth - 1)),
                _ => Predicate::negate(self.predicate(schema, depth - 1)),
            };
        }
        let attr = self.pick(&schema.attributes).clone();
        let op = *self.pick(&CompareOp::ALL);
        let same_typed: Vec<&Attribute> = schema
            .attributes
            .iter()
            .filter(|a| a.data_type == attr.data_type && a.name != attr.name)
            .collect();
        let rhs = if !same_typed.is_empty() && self.chance(0.3) {
            Expr::Attr(self.pick(&same_typed).name.clone())
        } else {
            self.literal_for(attr.data_type)
        };
        Predicate::compare(Expr::Attr(attr.name), op, rhs)
    }

    fn project_items(&mut self, schema: &RelationSchema) -> Vec<ProjectItem> {
        let mut items: Vec<ProjectItem> = schema
            .attributes
            .iter()
            .filter(|_| self.chance(0.6))
            .map(|a| ProjectItem::column(&a.name))
            .collect();
        if self.chance(0.5) {
            let a = self.pick(&schema.attributes).name.clone();
            items.push(ProjectItem::new(Expr::hash(Expr::Attr(a)), &self.fresh("h")));
        }
        let texts: Vec<String> = schema
            .attributes
            .iter()
            .filter(|a| a.data_type == DataType::Text)
            .map(|a| a.name.clone())
            .collect();
        if !texts.is_empty() && self.chance(0.3) {
            let a = self.pick(&texts).clone();
            let lit = Expr::Literal(DataValue::text(*self.pick(&TEXTS)));
            items.push(ProjectItem::new(Expr::concat(Expr::Attr(a), lit), &self.fresh("t")));
        }
        if self.chance(0.15) {
            items.push(ProjectItem::new(Expr::Redact, &self.fresh("x")));
        }
        if self.chance(0.15) {
            let ty = self.data_type();
            let v = self.value(ty);
            items.push(ProjectItem::new(Expr::Literal(v), &self.fresh("l")));
        }
        if items.is_empty() {
            items.push(ProjectItem::column(&schema.attributes[0].name));
        }
        // shuffle
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
        items
    }

    /// A well-typed query over `env` and its output schema.
    pub fn query(&mut self, env: &Catalog, depth: usize) -> (Query, RelationSchema) {
        let (q, _) = self.query_inner(env, depth);
        let schema = infer_schema(&q, env).unwrap_or_else(|e| panic!("generator produced ill-typed {q}: {e}"));
        (q, schema)
    }

    fn query_inner(&mut self, env: &Catalog, depth: usize) -> (Query, RelationSchema) {
        if depth == 0 || self.chance(0.2) {
            let names: Vec<&QualifiedName> = env.keys().collect();
            let name = (*self.pick(&names)).clone();
            let schema = env[&name].clone();
            return (Query::Scan(name), schema);
        }
        let (q, s) = self.query_inner(env, depth - 1);
        let out = match self.below(5) {
            0 => {
                let p = self.predicate(&s, 2);
                q.select(p)
            }
            1 => {
                let items = self.project_items(&s);
                q.project(items)
            }
            2 => {
                let old = self.pick(&s.attributes).name.clone();
                let new = self.fresh("n");
                q.rename(&[(&old, &new)])
            }
            3 => {
                let (r, rs) = self.query_inner(env, depth - 1);
                let pairs: Vec<(String, String)> = s
                    .attributes
                    .iter()
                    .flat_map(|a| {
                        rs.attributes
                            .iter()
                            .filter(move |b| b.data_type == a.data_type)
                            .map(move |b| (a.name.clone(), b.name.clone()))
                    })
                    .collect();
                if pairs.is_empty() {
                    let p = self.predicate(&s, 1);
                    q.select(p)
                } else {
                    let (lk, rk) = self.pick(&pairs).clone();
                    let collisions: Vec<(String, String)> = rs
                        .attributes
                        .iter()
                        .filter(|b| b.name != rk && s.attribute(&b.name).is_some())
                        .map(|b| (b.name.clone(), self.fresh("n")))
                        .collect();
                    let right = if collisions.is_empty() {
                        r
                    } else {
                        Query::Rename {
                            input: Box::new(r),
                            renames: collisions,
                        }
                    };
                    Query::Join {
                        left: Box::new(q),
                        right: Box::new(right),
                        on: vec![(lk, rk)],
                    }
                }
            }
            _ => {
                let right = if self.chance(0.5) {
                    let p = self.predicate(&s, 1);
                    q.clone().select(p)
                } else {
                    q.clone()
                };
                q.union(right)
            }
        };
        let schema = infer_schema(&out, env).unwrap_or_else(|e| panic!("generator produced ill-typed {out}: {e}"));
        (out, schema)
    }

    /// `count` views in [`VIEW_NAMESPACE`], each over base relations and
    /// earlier views.
    pub fn views(&mut self, base: &Catalog, count: usize, depth: usize) -> (ViewSet, Catalog) {
        let mut env = base.clone();
        let mut view_env = Catalog::new();
        let mut decls = Vec::new();
        for i in 0..count {
            let name = format!("v{i}");
            let (body, mut schema) = self.query(&env, depth);
            schema.name = name.clone();
            schema.key = None;
            let qn = QualifiedName::new(VIEW_NAMESPACE, &name);
            env.insert(qn.clone(), schema.clone());
            view_env.insert(qn, schema);
            decls.push(ViewDeclaration::new(&name, body));
        }
        (
            ViewSet::new(VIEW_NAMESPACE, decls).expect("generated views are acyclic"),
            view_env,
        )
    }

    pub fn case(&mut self, shape: Shape) -> Case {
        let base = self.base_catalog(shape.namespaces.max(1));
        let db = self.database(&base, shape.max_rows);
        let (views, view_env) = self.views(&base, shape.views.max(1), shape.depth);
        let (query, _) = self.query(&view_env, shape.depth);
        Case { base, db, views, query }
    }

    /// Replaces one random relation's rows; returns its name.
    pub fn mutate(&mut self, db: &mut Database, max_rows: usize) -> QualifiedName {
        let names: Vec<QualifiedName> = db.keys().cloned().collect();
        let name = self.pick(&names).clone();
        let schema = db[&name].schema.clone();
        let rows = self.rows(&schema, max_rows);
        db.insert(name.clone(), Table::new(schema, rows).unwrap());
        name
    }

    /// A `people` relation with an identifying `ssn` and `email`.
    pub fn identifying_relation(&mut self, rows: usize) -> Table {
        let schema = RelationSchema::new(
            "people",
            vec![
                Attribute::new("id", DataType::Integer),
                Attribute::new("ssn", DataType::Text).tagged(IDENTIFYING),
                Attribute::new("email", DataType::Text).tagged(IDENTIFYING).nullable(),
                Attribute::new("city", DataType::Text),
            ],
        );
        let rows = (0..rows)
            .map(|i| {
                let ssn = format!(
                    "{:03}-{:02}-{:04}",
                    self.below(1000),
                    self.below(100),
                    self.below(10_000)
                );
                let email = if self.chance(0.2) {
                    DataValue::Null
                } else {
                    DataValue::text(format!("user{}@example.org", self.below(100_000)))
                };
                let city = *self.pick(&["zagreb", "split", "rijeka"]);
                vec![
                    DataValue::Integer(i as i64),
                    DataValue::text(ssn),
                    email,
                    DataValue::text(city),
                ]
            })
            .collect();
        Table::new(schema, rows).unwrap()
    }
}

/// Every multiset of size `0..=max_len` drawn from `items`, as sorted index
/// sequences mapped back to items.
pub fn multisets<T: Clone>(items: &[T], max_len: usize) -> Vec<Vec<T>> {
    fn go<T: Clone>(items: &[T], start: usize, left: usize, cur: &mut Vec<T>, out: &mut Vec<Vec<T>>) {
        out.push(cur.clone());
        if left == 0 {
            return;
        }
        for i in start..items.len() {
            cur.push(items[i].clone());
            go(items, i, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(items, 0, max_len, &mut Vec::new(), &mut out);
    out
}
