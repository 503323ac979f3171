//! Mediators bind downstream components under local aliases, expose declared
//! views as a versioned product, and answer queries by unfolding, planning
//! and fetching from downstream.

use std::collections::{BTreeMap, BTreeSet};
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use lru::LruCache;
use mmw_core::query::{infer_schema, render_query};
use mmw_core::schema::{ProductSchema, RelationSchema};
use mmw_core::views::{
    derive_global_schema, execute_plan, identifying_leaks, parse_view_file, plan, PlanOptions, ViewDeclaration, ViewSet,
};
use mmw_core::{QualifiedName, Query, QueryError, Table, ViewError};
use serde::{Deserialize, Serialize};

use crate::access::{AccessLogEntry, Gate, Governance};
use crate::component::{Component, Kind, Lineage, Stats};
use crate::error::ConfigError;
use crate::protocol::{ComponentError, ErrorCode};

pub const DEFAULT_CACHE_CAPACITY: usize = 64;

fn default_version() -> u32 {
    1
}

fn default_capacity() -> usize {
    DEFAULT_CACHE_CAPACITY
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediatorConfig {
    #[serde(default)]
    pub id: String,
    pub product: String,
    #[serde(default = "default_version")]
    pub version: u32,
    /// Local alias to downstream component id.
    #[serde(default)]
    pub downstream: BTreeMap<String, String>,
    /// Inline view declarations, `;`-terminated.
    #[serde(default)]
    pub views: String,
    /// View declarations read from a file, after any inline ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub views_file: Option<PathBuf>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    /// Zero disables caching.
    #[serde(default = "default_capacity")]
    pub cache_capacity: usize,
    #[serde(default)]
    pub salt: String,
    #[serde(default)]
    pub deny_raw_identifying: bool,
    #[serde(default = "yes")]
    pub pushdown: bool,
}

impl MediatorConfig {
    pub fn new(id: &str, product: &str) -> Self {
        MediatorConfig {
            id: id.to_string(),
            product: product.to_string(),
            version: 1,
            downstream: BTreeMap::new(),
            views: String::new(),
            views_file: None,
            metadata: BTreeMap::new(),
            cache_capacity: DEFAULT_CACHE_CAPACITY,
            salt: String::new(),
            deny_raw_identifying: false,
            pushdown: true,
        }
    }

    pub fn bind(mut self, alias: &str, component: &str) -> Self {
        self.downstream.insert(alias.to_string(), component.to_string());
        self
    }

    pub fn with_views(mut self, text: &str) -> Self {
        self.views = text.to_string();
        self
    }

    pub fn declarations(&self) -> Result<Vec<ViewDeclaration>, ConfigError> {
        let view_err = |source: ViewError| ConfigError::View {
            component: self.id.clone(),
            source,
        };
        let mut decls = if self.views.trim().is_empty() {
            Vec::new()
        } else {
            parse_view_file(&self.views).map_err(|e| view_err(ViewError::Syntax(e)))?
        };
        if let Some(path) = &self.views_file {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Source {
                component: self.id.clone(),
                location: path.display().to_string(),
                message: e.to_string(),
            })?;
            decls.extend(parse_view_file(&text).map_err(|e| view_err(ViewError::Syntax(e)))?);
        }
        Ok(decls)
    }
}

type CacheKey = (String, u64, Vec<u64>);

struct State {
    views: ViewSet,
    /// Downstream relations under `alias.relation`.
    env: BTreeMap<QualifiedName, RelationSchema>,
    /// Served relations under `product.view`.
    served: BTreeMap<QualifiedName, RelationSchema>,
    schema: ProductSchema,
    /// Namespace each alias's component serves.
    namespaces: BTreeMap<String, String>,
    generation: u64,
}

pub struct Mediator {
    id: String,
    config: MediatorConfig,
    downstream: BTreeMap<String, Arc<dyn Component>>,
    state: RwLock<State>,
    cache: Option<Mutex<LruCache<CacheKey, Table>>>,
    gate: Gate,
}

#[derive(Debug)]
enum FetchFailure {
    Query(QueryError),
    Component(ComponentError),
}

impl From<QueryError> for FetchFailure {
    fn from(e: QueryError) -> Self {
        FetchFailure::Query(e)
    }
}

impl Mediator {
    /// Configures against live downstream components. `downstream` must
    /// hold one component per alias in `config.downstream`.
    pub fn new(
        config: MediatorConfig,
        downstream: BTreeMap<String, Arc<dyn Component>>,
        governance: Governance,
    ) -> Result<Mediator, ConfigError> {
        let id = config.id.clone();
        for name in [&config.id, &config.product] {
            if !crate::is_name(name) {
                return Err(ConfigError::Identifier {
                    component: id.clone(),
                    name: name.clone(),
                });
            }
        }
        for alias in config.downstream.keys() {
            if !crate::is_name(alias) {
                return Err(ConfigError::Identifier {
                    component: id.clone(),
                    name: alias.clone(),
                });
            }
            if *alias == config.product {
                return Err(ConfigError::invalid(
                    &id,
                    format!("alias {alias} shadows the product namespace"),
                ));
            }
            if !downstream.contains_key(alias) {
                return Err(ConfigError::invalid(
                    &id,
                    format!("no component bound to alias {alias}"),
                ));
            }
        }
        if let Some(extra) = downstream.keys().find(|a| !config.downstream.contains_key(*a)) {
            return Err(ConfigError::invalid(
                &id,
                format!("component bound to undeclared alias {extra}"),
            ));
        }
        let decls = config.declarations()?;
        let state = Self::configure(&config, &downstream, decls, 0)?;
        let cache = NonZeroUsize::new(config.cache_capacity).map(|n| Mutex::new(LruCache::new(n)));
        Ok(Mediator {
            gate: Gate::new(&id, governance),
            id,
            config,
            downstream,
            state: RwLock::new(state),
            cache,
        })
    }

    pub fn standalone(
        config: MediatorConfig,
        downstream: BTreeMap<String, Arc<dyn Component>>,
    ) -> Result<Mediator, ConfigError> {
        Mediator::new(config, downstream, Governance::default())
    }

    fn configure(
        config: &MediatorConfig,
        downstream: &BTreeMap<String, Arc<dyn Component>>,
        decls: Vec<ViewDeclaration>,
        generation: u64,
    ) -> Result<State, ConfigError> {
        let id = &config.id;
        let mut env = BTreeMap::new();
        let mut namespaces = BTreeMap::new();
        for (alias, component) in downstream {
            let schema = component.get_schema().map_err(|source| ConfigError::Downstream {
                component: id.clone(),
                binding: alias.clone(),
                source,
            })?;
            for r in schema.relations {
                env.insert(QualifiedName::new(alias, &r.name), r);
            }
            namespaces.insert(alias.clone(), component.namespace());
        }
        let view_err = |source: ViewError| ConfigError::View {
            component: id.clone(),
            source,
        };
        let views = ViewSet::new(&config.product, decls).map_err(view_err)?;
        let schema = derive_global_schema(&views, &env, &config.product, config.version, config.metadata.clone())
            .map_err(view_err)?;
        if config.deny_raw_identifying {
            if let Some((view, attribute)) = identifying_leaks(&schema).into_iter().next() {
                return Err(view_err(ViewError::IdentifyingLeak { view, attribute }));
            }
        }
        let served = schema
            .relations
            .iter()
            .map(|r| (QualifiedName::new(&config.product, &r.name), r.clone()))
            .collect();
        Ok(State {
            views,
            env,
            served,
            schema,
            namespaces,
            generation,
        })
    }

    /// Replaces the view declarations, refetches downstream schemas and
    /// bumps the configuration generation. On error nothing changes.
    pub fn reconfigure(&self, views: &str) -> Result<(), ConfigError> {
        let mut config = self.config.clone();
        config.views = views.to_string();
        config.views_file = None;
        let decls = config.declarations()?;
        let mut state = self.state.write().unwrap();
        let next = Self::configure(&config, &self.downstream, decls, state.generation + 1)?;
        *state = next;
        if let Some(cache) = &self.cache {
            cache.lock().unwrap().clear();
        }
        Ok(())
    }

    pub fn product(&self) -> &str {
        &self.config.product
    }

    pub fn version(&self) -> u32 {
        self.config.version
    }

    pub fn generation(&self) -> u64 {
        self.state.read().unwrap().generation
    }

    pub fn downstream(&self) -> &BTreeMap<String, String> {
        &self.config.downstream
    }

    fn downstream_epochs(&self) -> Result<Vec<u64>, ComponentError> {
        self.downstream
            .iter()
            .map(|(alias, c)| c.epoch().map_err(|e| self.downstream_failure(alias, e)))
            .collect()
    }

    /// Unavailability is reported by this mediator; other downstream errors
    /// pass through with their origin.
    fn downstream_failure(&self, alias: &str, e: ComponentError) -> ComponentError {
        if e.code != ErrorCode::Unavailable {
            return e;
        }
        ComponentError::unavailable(
            &self.id,
            format!("downstream unavailable: {alias} ({}): {}", e.origin, e.message),
        )
    }

    fn run(&self, q: &Query, text: &str) -> (Result<Table, ComponentError>, bool) {
        let state = self.state.read().unwrap();
        if let Some(foreign) = q.namespaces().into_iter().find(|ns| *ns != self.config.product) {
            return (
                Err(ComponentError::new(
                    ErrorCode::UnknownRelation,
                    &self.id,
                    format!(
                        "foreign namespace {foreign}; this mediator serves {}",
                        self.config.product
                    ),
                )),
                false,
            );
        }
        if let Err(e) = infer_schema(q, &state.served) {
            return (Err(ComponentError::from_query(&e, &self.id)), false);
        }
        let epochs = match self.downstream_epochs() {
            Ok(e) => e,
            Err(e) => return (Err(e), false),
        };
        let key = (text.to_string(), state.generation, epochs);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.lock().unwrap().get(&key) {
                self.gate.counters.cache(true);
                return (Ok(hit.clone()), true);
            }
            self.gate.counters.cache(false);
        }
        let result = self.fetch_and_evaluate(q, &state);
        if let (Ok(t), Some(cache)) = (&result, &self.cache) {
            cache.lock().unwrap().put(key, t.clone());
        }
        (result, false)
    }

    fn fetch_and_evaluate(&self, q: &Query, state: &State) -> Result<Table, ComponentError> {
        let placement: BTreeMap<String, String> = self.downstream.keys().map(|a| (a.clone(), a.clone())).collect();
        let p = plan(
            q,
            &[&state.views],
            &placement,
            &state.env,
            PlanOptions {
                pushdown: self.config.pushdown,
            },
        )
        .map_err(|e| ComponentError::from_view(&e, &self.id))?;
        let fetch = |step: &mmw_core::views::FetchStep| -> Result<Table, FetchFailure> {
            let target = &self.downstream[&step.binding];
            let ns = &state.namespaces[&step.binding];
            let query = step
                .query
                .map_scans(&mut |n: &QualifiedName| Query::Scan(QualifiedName::new(ns, &n.relation)));
            target
                .execute(&query, &self.id)
                .map_err(|e| FetchFailure::Component(self.downstream_failure(&step.binding, e)))
        };
        execute_plan(&p, fetch, &self.config.salt).map_err(|e| match e {
            FetchFailure::Component(e) => e,
            FetchFailure::Query(e) => ComponentError::from_query(&e, &self.id),
        })
    }
}

impl Component for Mediator {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> Kind {
        Kind::Mediator
    }

    fn namespace(&self) -> String {
        self.config.product.clone()
    }

    fn get_schema(&self) -> Result<ProductSchema, ComponentError> {
        Ok(self.state.read().unwrap().schema.clone())
    }

    fn execute(&self, q: &Query, principal: &str) -> Result<Table, ComponentError> {
        let text = render_query(q);
        self.gate.admit(principal, &self.config.product, &text)?;
        let (result, hit) = self.run(q, &text);
        self.gate.finish(principal, &text, &result, hit);
        result
    }

    /// Sum of downstream epochs plus the configuration generation.
    fn epoch(&self) -> Result<u64, ComponentError> {
        let generation = self.state.read().unwrap().generation;
        Ok(self.downstream_epochs()?.into_iter().sum::<u64>() + generation)
    }

    fn stats(&self) -> Result<Stats, ComponentError> {
        Ok(self.gate.counters.snapshot())
    }

    fn lineage(&self, relation: &str) -> Result<Lineage, ComponentError> {
        let state = self.state.read().unwrap();
        if state.views.get(relation).is_none() {
            return Err(ComponentError::new(
                ErrorCode::UnknownRelation,
                &self.id,
                format!("no view {relation}"),
            ));
        }
        let unfolded = mmw_core::views::unfold(&Query::scan(&self.config.product, relation), &[&state.views])
            .map_err(|e| ComponentError::from_view(&e, &self.id))?;
        let bases: BTreeSet<&QualifiedName> = unfolded.scans().into_iter().collect();
        let mut root = Lineage::leaf(&self.id, relation);
        for base in bases {
            let component = &self.downstream[&base.namespace];
            let mut child = component.lineage(&base.relation)?;
            child.via = Some(relation.to_string());
            root.children.push(child);
        }
        Ok(root)
    }

    fn access_log(&self) -> Vec<AccessLogEntry> {
        self.gate.log.entries()
    }
}

impl Mediator {
    pub(crate) fn gate(&self) -> &Gate {
        &self.gate
    }
}
