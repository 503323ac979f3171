//! View declarations, unfolding, global schema derivation and planning.

mod plan;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{ParseError, ViewError};
use crate::query::{infer_schema, Parser, QualifiedName, Query, SchemaCatalog};
use crate::schema::{ProductSchema, RelationSchema};

pub use plan::{execute_plan, plan, ExecutionPlan, FetchStep, PlanOptions, FETCH_NAMESPACE};

/// `CREATE VIEW name AS <query>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewDeclaration {
    pub name: String,
    pub body: Query,
}

impl ViewDeclaration {
    pub fn new(name: &str, body: Query) -> Self {
        ViewDeclaration {
            name: name.to_string(),
            body,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "CREATE VIEW {} AS {}",
            self.name,
            crate::query::render_query(&self.body)
        )
    }
}

fn parse_decl_from(p: &mut Parser) -> Result<ViewDeclaration, ParseError> {
    p.keyword("create")?;
    p.keyword("view")?;
    let name = p.ident()?;
    p.keyword("as")?;
    let body = p.query()?;
    Ok(ViewDeclaration { name, body })
}

/// Parses a single declaration; a trailing `;` is allowed.
pub fn parse_view_decl(text: &str) -> Result<ViewDeclaration, ParseError> {
    let mut p = Parser::new(text)?;
    let decl = parse_decl_from(&mut p)?;
    p.eat_sym(";");
    p.expect_end()?;
    Ok(decl)
}

/// Parses a view file: `;`-terminated declarations with `--` comments.
pub fn parse_view_file(text: &str) -> Result<Vec<ViewDeclaration>, ParseError> {
    let mut p = Parser::new(text)?;
    let mut out = Vec::new();
    while !p.at_end() {
        out.push(parse_decl_from(&mut p)?);
        if !p.eat_sym(";") {
            return Err(p.error());
        }
    }
    Ok(out)
}

/// The views one mediator exposes under its namespace. Construction checks
/// names and the dependency graph; [`ViewSet::check`] type-checks bodies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewSet {
    namespace: String,
    /// Declaration order.
    views: Vec<ViewDeclaration>,
}

impl ViewSet {
    pub fn new(namespace: &str, views: Vec<ViewDeclaration>) -> Result<Self, ViewError> {
        let mut names = BTreeSet::new();
        for v in &views {
            if !names.insert(v.name.as_str()) {
                return Err(ViewError::DuplicateView(v.name.clone()));
            }
        }
        for v in &views {
            for dep in v.body.scans() {
                if dep.namespace == namespace && !names.contains(dep.relation.as_str()) {
                    return Err(ViewError::UndeclaredView {
                        view: v.name.clone(),
                        missing: dep.relation.clone(),
                    });
                }
            }
        }
        let set = ViewSet {
            namespace: namespace.to_string(),
            views,
        };
        if let Some(cycle) = set.find_cycle() {
            return Err(ViewError::Cycle(cycle));
        }
        Ok(set)
    }

    pub fn empty(namespace: &str) -> Self {
        ViewSet {
            namespace: namespace.to_string(),
            views: Vec::new(),
        }
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    pub fn views(&self) -> &[ViewDeclaration] {
        &self.views
    }

    pub fn get(&self, name: &str) -> Option<&ViewDeclaration> {
        self.views.iter().find(|v| v.name == name)
    }

    fn dependencies(&self, view: &ViewDeclaration) -> Vec<String> {
        let mut deps: Vec<String> = view
            .body
            .scans()
            .into_iter()
            .filter(|n| n.namespace == self.namespace)
            .map(|n| n.relation.clone())
            .collect();
        deps.dedup();
        deps
    }

    fn find_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Open,
            Done,
        }
        fn visit(
            set: &ViewSet,
            name: &str,
            marks: &mut HashMap<String, Mark>,
            stack: &mut Vec<String>,
        ) -> Option<Vec<String>> {
            match marks.get(name) {
                Some(Mark::Done) => return None,
                Some(Mark::Open) => {
                    let start = stack.iter().position(|s| s == name).unwrap();
                    let mut cycle = stack[start..].to_vec();
                    cycle.push(name.to_string());
                    return Some(cycle);
                }
                None => {}
            }
            marks.insert(name.to_string(), Mark::Open);
            stack.push(name.to_string());
            if let Some(view) = set.get(name) {
                for dep in set.dependencies(view) {
                    if let Some(c) = visit(set, &dep, marks, stack) {
                        return Some(c);
                    }
                }
            }
            stack.pop();
            marks.insert(name.to_string(), Mark::Done);
            None
        }
        let mut marks = HashMap::new();
        for v in &self.views {
            if let Some(c) = visit(self, &v.name, &mut marks, &mut Vec::new()) {
                return Some(c);
            }
        }
        None
    }

    /// Type-checks every view in dependency order against `downstream`,
    /// returning each view's output schema (named after the view).
    pub fn check(&self, downstream: &dyn SchemaCatalog) -> Result<BTreeMap<String, RelationSchema>, ViewError> {
        let mut done: BTreeMap<String, RelationSchema> = BTreeMap::new();
        let mut pending: Vec<&ViewDeclaration> = self.views.iter().collect();
        while !pending.is_empty() {
            let before = pending.len();
            let mut rest = Vec::new();
            for v in pending {
                if self.dependencies(v).iter().all(|d| done.contains_key(d)) {
                    let env = Layered {
                        namespace: &self.namespace,
                        views: &done,
                        base: downstream,
                    };
                    let mut schema = infer_schema(&v.body, &env).map_err(|source| ViewError::Query {
                        view: v.name.clone(),
                        source,
                    })?;
                    schema.name = v.name.clone();
                    schema.key = None;
                    done.insert(v.name.clone(), schema);
                } else {
                    rest.push(v);
                }
            }
            if rest.len() == before {
                unreachable!("acyclic by construction");
            }
            pending = rest;
        }
        Ok(done)
    }
}

/// View schemas layered over a downstream catalog.
struct Layered<'a> {
    namespace: &'a str,
    views: &'a BTreeMap<String, RelationSchema>,
    base: &'a dyn SchemaCatalog,
}

impl SchemaCatalog for Layered<'_> {
    fn relation_schema(&self, name: &QualifiedName) -> Option<RelationSchema> {
        if name.namespace == self.namespace {
            self.views.get(&name.relation).cloned()
        } else {
            self.base.relation_schema(name)
        }
    }
}

/// Replaces every scan of a view (from any of `sets`) with the view body,
/// recursively, until only base relations remain.
pub fn unfold(q: &Query, sets: &[&ViewSet]) -> Result<Query, ViewError> {
    unfold_inner(q, sets, &mut Vec::new())
}

fn unfold_inner(q: &Query, sets: &[&ViewSet], stack: &mut Vec<QualifiedName>) -> Result<Query, ViewError> {
    let mut err = None;
    let out = q.map_scans(&mut |name: &QualifiedName| {
        if err.is_some() {
            return Query::Scan(name.clone());
        }
        let Some(set) = sets.iter().find(|s| s.namespace == name.namespace) else {
            return Query::Scan(name.clone());
        };
        let Some(view) = set.get(&name.relation) else {
            err = Some(ViewError::UnknownRelation(name.to_string()));
            return Query::Scan(name.clone());
        };
        if stack.contains(name) {
            let mut cycle: Vec<String> = stack.iter().map(|n| n.to_string()).collect();
            cycle.push(name.to_string());
            err = Some(ViewError::Cycle(cycle));
            return Query::Scan(name.clone());
        }
        stack.push(name.clone());
        let body = unfold_inner(&view.body, sets, stack);
        stack.pop();
        body.unwrap_or_else(|e| {
            err = Some(e);
            Query::Scan(name.clone())
        })
    });
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// One relation per view, typed from its unfolded body; version and
/// metadata are attached as given.
pub fn derive_global_schema(
    views: &ViewSet,
    downstream: &dyn SchemaCatalog,
    product: &str,
    version: u32,
    metadata: BTreeMap<String, String>,
) -> Result<ProductSchema, ViewError> {
    // dependency-order check gives precise per-view errors first
    views.check(downstream)?;
    let mut relations = Vec::with_capacity(views.views.len());
    for v in &views.views {
        let unfolded = unfold(&v.body, &[views])?;
        let mut schema = infer_schema(&unfolded, downstream).map_err(|source| ViewError::Query {
            view: v.name.clone(),
            source,
        })?;
        schema.name = v.name.clone();
        schema.key = None;
        relations.push(schema);
    }
    Ok(ProductSchema {
        product: product.to_string(),
        version,
        relations,
        metadata,
    })
}

/// `(view, attribute)` pairs where a served attribute still carries the
/// identifying tag, i.e. raw identifying data reaches the output without
/// passing through `hash()` or `redact()`.
pub fn identifying_leaks(schema: &ProductSchema) -> Vec<(String, String)> {
    schema
        .relations
        .iter()
        .flat_map(|r| {
            r.attributes
                .iter()
                .filter(|a| a.is_identifying())
                .map(move |a| (r.name.clone(), a.name.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse_query;
    use crate::schema::{Attribute, IDENTIFYING};
    use crate::value::DataType;

    fn env() -> BTreeMap<QualifiedName, RelationSchema> {
        let mut env = BTreeMap::new();
        env.insert(
            QualifiedName::new("s", "r"),
            RelationSchema::new(
                "r",
                vec![
                    Attribute::new("a", DataType::Integer),
                    Attribute::new("ssn", DataType::Text).tagged(IDENTIFYING),
                ],
            ),
        );
        env
    }

    fn views(ns: &str, text: &str) -> Result<ViewSet, ViewError> {
        ViewSet::new(ns, parse_view_file(text)?)
    }

    #[test]
    fn parse_single_decl() {
        let d = parse_view_decl("CREATE VIEW orders AS SELECT * FROM w1.orders").unwrap();
        assert_eq!(d.name, "orders");
        assert_eq!(d.body, Query::scan("w1", "orders"));
        assert_eq!(parse_view_decl(&d.render()).unwrap(), d);
        assert!(parse_view_decl("create view x as select * from a.b;").is_ok());
        assert!(parse_view_decl("CREATE VIEW AS SELECT * FROM a.b").is_err());
    }

    #[test]
    fn view_file_with_comments() {
        let text = "-- people\nCREATE VIEW p AS SELECT a FROM s.r;\n\n-- second\ncreate view q as select * from m.p;\n";
        let decls = parse_view_file(text).unwrap();
        assert_eq!(decls.len(), 2);
        assert!(parse_view_file("CREATE VIEW p AS SELECT a FROM s.r").is_err());
        assert!(parse_view_file("").unwrap().is_empty());
    }

    #[test]
    fn dependency_errors() {
        assert!(matches!(
            views("m", "CREATE VIEW v AS SELECT * FROM m.missing;"),
            Err(ViewError::UndeclaredView { .. })
        ));
        match views("m", "CREATE VIEW v AS SELECT * FROM m.v;") {
            Err(ViewError::Cycle(c)) => assert_eq!(c, ["v", "v"]),
            other => panic!("{other:?}"),
        }
        match views(
            "m",
            "CREATE VIEW a AS SELECT * FROM m.b; CREATE VIEW b AS SELECT * FROM m.a;",
        ) {
            Err(ViewError::Cycle(c)) => assert_eq!(c, ["a", "b", "a"]),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            views(
                "m",
                "CREATE VIEW a AS SELECT * FROM s.r; CREATE VIEW a AS SELECT * FROM s.r;"
            ),
            Err(ViewError::DuplicateView(_))
        ));
    }

    #[test]
    fn unfold_identity_substitution() {
        let set = views("m", "CREATE VIEW v AS SELECT a FROM s.r;").unwrap();
        let q = parse_query("SELECT a FROM m.v").unwrap();
        let u = unfold(&q, &[&set]).unwrap();
        assert_eq!(u, Query::scan("s", "r").project_columns(&["a"]).project_columns(&["a"]));
        assert_eq!(unfold(&u, &[&set]).unwrap(), u);
        assert!(matches!(
            unfold(&parse_query("SELECT * FROM m.nope").unwrap(), &[&set]),
            Err(ViewError::UnknownRelation(_))
        ));
    }

    #[test]
    fn two_tier_unfold_in_one_pass() {
        let lower = views("m1", "CREATE VIEW v1 AS SELECT a FROM s.r WHERE a > 1;").unwrap();
        let upper = views("m2", "CREATE VIEW v2 AS SELECT a AS b FROM m1.v1;").unwrap();
        let u = unfold(&parse_query("SELECT * FROM m2.v2").unwrap(), &[&upper, &lower]).unwrap();
        assert_eq!(u.namespaces().into_iter().collect::<Vec<_>>(), ["s"]);
    }

    #[test]
    fn global_schema_derivation() {
        let empty = derive_global_schema(&ViewSet::empty("m"), &env(), "prod", 1, BTreeMap::new()).unwrap();
        assert!(empty.relations.is_empty());
        assert!(crate::schema::validate_product_schema(&empty).is_empty());

        let set = views("m", "CREATE VIEW p AS SELECT a, hash(ssn) AS ssn_h FROM s.r;").unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("quality.completeness".to_string(), "0.98".to_string());
        let g = derive_global_schema(&set, &env(), "prod", 2, meta.clone()).unwrap();
        assert_eq!(g.version, 2);
        assert_eq!(g.metadata, meta);
        let p = g.relation("p").unwrap();
        assert_eq!(p.attributes[1].data_type, DataType::Text);
        assert!(identifying_leaks(&g).is_empty());

        let leaky = views("m", "CREATE VIEW p AS SELECT a, ssn FROM s.r;").unwrap();
        let g = derive_global_schema(&leaky, &env(), "prod", 1, BTreeMap::new()).unwrap();
        assert_eq!(identifying_leaks(&g), vec![("p".to_string(), "ssn".to_string())]);

        let bad = views("m", "CREATE VIEW p AS SELECT nope FROM s.r;").unwrap();
        match derive_global_schema(&bad, &env(), "prod", 1, BTreeMap::new()) {
            Err(ViewError::Query { view, .. }) => assert_eq!(view, "p"),
            other => panic!("{other:?}"),
        }
    }

    /// Brute-force tag audit: every output attribute computed by hash() or
    /// redact() carries no tags, whatever its input.
    #[test]
    fn tag_audit_for_deidentifying_functions() {
        let set = views(
            "m",
            "CREATE VIEW p AS SELECT hash(ssn) AS x, redact() AS y, hash(concat(ssn, ssn)) AS z, concat(ssn, 'k') AS w FROM s.r;",
        )
        .unwrap();
        let g = derive_global_schema(&set, &env(), "prod", 1, BTreeMap::new()).unwrap();
        let rel = g.relation("p").unwrap();
        for attr in &rel.attributes {
            let deidentified = attr.name != "w";
            assert_eq!(attr.tags.is_empty(), deidentified, "{}", attr.name);
        }
    }
}
