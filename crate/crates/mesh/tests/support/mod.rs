#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use mmw_core::query::evaluate;
use mmw_core::testkit::{Case, Database, VIEW_NAMESPACE};
use mmw_core::views::ViewSet;
use mmw_core::{QualifiedName, Table};
use mmw_mesh::{Component, Mediator, MediatorConfig, Wrapper, WrapperConfig};

/// Reference: each view evaluated in order over the base data.
pub fn materialized(views: &ViewSet, db: &Database) -> Database {
    let mut all = db.clone();
    for v in views.views() {
        let mut t = evaluate(&v.body, &all).expect("view evaluates");
        t.schema.name = v.name.clone();
        all.insert(QualifiedName::new(VIEW_NAMESPACE, &v.name), t);
    }
    all
}

pub fn view_text(views: &ViewSet) -> String {
    views.views().iter().map(|d| format!("{};\n", d.render())).collect()
}

/// Base tables grouped by namespace.
pub fn by_namespace(db: &Database) -> BTreeMap<String, Vec<Table>> {
    let mut out: BTreeMap<String, Vec<Table>> = BTreeMap::new();
    for (name, t) in db {
        let mut t = t.clone();
        t.schema.name = name.relation.clone();
        out.entry(name.namespace.clone()).or_default().push(t);
    }
    out
}

pub struct CaseMesh {
    pub wrappers: BTreeMap<String, Arc<Wrapper>>,
    pub mediator: Mediator,
}

impl CaseMesh {
    /// One memory wrapper per base namespace under a mediator serving the
    /// case's views as product `m`.
    pub fn new(case: &Case, cache_capacity: usize, pushdown: bool) -> CaseMesh {
        let mut wrappers = BTreeMap::new();
        let mut downstream: BTreeMap<String, Arc<dyn Component>> = BTreeMap::new();
        let mut config = MediatorConfig::new("mediator", VIEW_NAMESPACE).with_views(&view_text(&case.views));
        config.cache_capacity = cache_capacity;
        config.pushdown = pushdown;
        for (ns, tables) in by_namespace(&case.db) {
            let id = format!("{ns}_wrapper");
            let w = Arc::new(Wrapper::standalone(WrapperConfig::memory(&id, &ns, &tables)).expect("wrapper"));
            downstream.insert(ns.clone(), w.clone());
            config = config.bind(&ns, &id);
            wrappers.insert(ns, w);
        }
        let mediator = Mediator::standalone(config, downstream).expect("mediator configures");
        CaseMesh { wrappers, mediator }
    }

    /// Replaces one base relation's rows in its wrapper.
    pub fn load(&self, name: &QualifiedName, t: &Table) {
        self.wrappers[&name.namespace]
            .replace_rows(&name.relation, t.rows.clone())
            .expect("replace rows");
    }
}
