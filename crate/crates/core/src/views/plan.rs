//! Splitting an unfolded query into per-component fetches plus a local
//! residual, with selection pushdown.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{QueryError, ViewError};
use crate::query::{evaluate_with, infer_schema, Predicate, QualifiedName, Query, SchemaCatalog};
use crate::table::Table;

use super::{unfold, ViewSet};

/// Namespace of fetched intermediates inside a residual query.
pub const FETCH_NAMESPACE: &str = "fetch";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchStep {
    /// Name the residual uses for this step's result (`fetch.<id>`).
    pub id: String,
    /// Namespace of every relation the pushed query reads.
    pub namespace: String,
    /// Component the namespace is bound to.
    pub binding: String,
    pub query: Query,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionPlan {
    pub fetches: Vec<FetchStep>,
    /// Reads only `fetch.*` relations.
    pub residual: Query,
}

#[derive(Debug, Clone, Copy)]
pub struct PlanOptions {
    pub pushdown: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions { pushdown: true }
    }
}

/// Unfolds `q` through `views` and splits it into fetch steps: maximal
/// subtrees reading a single namespace are pushed to that namespace's
/// binding in `placement`. Subtrees calling `hash()` stay local so the
/// planning component's salt applies. `env` supplies base relation schemas.
pub fn plan(
    q: &Query,
    views: &[&ViewSet],
    placement: &BTreeMap<String, String>,
    env: &dyn SchemaCatalog,
    options: PlanOptions,
) -> Result<ExecutionPlan, ViewError> {
    let unfolded = unfold(q, views)?;
    for ns in unfolded.namespaces() {
        if !placement.contains_key(ns) {
            return Err(ViewError::UnboundNamespace(ns.to_string()));
        }
    }
    let shaped = if options.pushdown {
        push_selections(&unfolded.normalized(), env)
    } else {
        unfolded
    };
    let mut fetches = Vec::new();
    let residual = split(&shaped, placement, &mut fetches);
    Ok(ExecutionPlan { fetches, residual })
}

fn split(q: &Query, placement: &BTreeMap<String, String>, fetches: &mut Vec<FetchStep>) -> Query {
    let namespaces = q.namespaces();
    if namespaces.len() == 1 && !q.contains_hash() {
        let namespace = namespaces.into_iter().next().unwrap().to_string();
        let id = format!("f{}", fetches.len());
        fetches.push(FetchStep {
            id: id.clone(),
            binding: placement[&namespace].clone(),
            namespace,
            query: q.clone(),
        });
        return Query::scan(FETCH_NAMESPACE, &id);
    }
    match q {
        Query::Scan(_) => unreachable!("a scan reads one namespace"),
        Query::Select { input, predicate } => split(input, placement, fetches).select(predicate.clone()),
        Query::Project { input, items } => split(input, placement, fetches).project(items.clone()),
        Query::Rename { input, renames } => Query::Rename {
            input: Box::new(split(input, placement, fetches)),
            renames: renames.clone(),
        },
        Query::Join { left, right, on } => Query::Join {
            left: Box::new(split(left, placement, fetches)),
            right: Box::new(split(right, placement, fetches)),
            on: on.clone(),
        },
        Query::Union { left, right } => split(left, placement, fetches).union(split(right, placement, fetches)),
    }
}

/// Moves selection conjuncts as far down as they stay correct: into the
/// side of a join that owns all their attributes, into both arms of a union,
/// and beneath renames. Conjuncts calling `hash()` are left in place.
fn push_selections(q: &Query, env: &dyn SchemaCatalog) -> Query {
    match q {
        Query::Select { input, predicate } => {
            let input = push_selections(input, env);
            push_into(input, predicate.clone().conjuncts(), env)
        }
        Query::Scan(_) => q.clone(),
        Query::Project { input, items } => push_selections(input, env).project(items.clone()),
        Query::Rename { input, renames } => Query::Rename {
            input: Box::new(push_selections(input, env)),
            renames: renames.clone(),
        },
        Query::Join { left, right, on } => Query::Join {
            left: Box::new(push_selections(left, env)),
            right: Box::new(push_selections(right, env)),
            on: on.clone(),
        },
        Query::Union { left, right } => push_selections(left, env).union(push_selections(right, env)),
    }
}

fn attribute_names(q: &Query, env: &dyn SchemaCatalog) -> Option<BTreeSet<String>> {
    infer_schema(q, env)
        .ok()
        .map(|s| s.attributes.into_iter().map(|a| a.name).collect())
}

fn select_all(q: Query, conjuncts: Vec<Predicate>) -> Query {
    match Predicate::conjoin(conjuncts) {
        Some(p) => q.select(p),
        None => q,
    }
}

/// Places `conjuncts` (a selection over `input`) as deep as possible.
fn push_into(input: Query, conjuncts: Vec<Predicate>, env: &dyn SchemaCatalog) -> Query {
    let (movable, fixed): (Vec<_>, Vec<_>) = conjuncts.into_iter().partition(|c| !c.contains_hash());
    if movable.is_empty() {
        return select_all(input, fixed);
    }
    let pushed = match input {
        Query::Select { input, predicate } => {
            let mut all = predicate.conjuncts();
            all.extend(movable);
            return select_all(push_into(*input, all, env), fixed);
        }
        Query::Join { left, right, on } => {
            let left_names = attribute_names(&left, env);
            let right_names = attribute_names(&right, env).map(|names| {
                names
                    .into_iter()
                    .filter(|n| !on.iter().any(|(_, r)| r == n))
                    .collect::<BTreeSet<_>>()
            });
            let (mut to_left, mut to_right, mut stay) = (Vec::new(), Vec::new(), Vec::new());
            for c in movable {
                let attrs = c.attributes();
                let within = |names: &Option<BTreeSet<String>>| {
                    !attrs.is_empty() && names.as_ref().is_some_and(|n| attrs.is_subset(n))
                };
                if within(&left_names) {
                    to_left.push(c);
                } else if within(&right_names) {
                    to_right.push(c);
                } else {
                    stay.push(c);
                }
            }
            let joined = Query::Join {
                left: Box::new(push_into(*left, to_left, env)),
                right: Box::new(push_into(*right, to_right, env)),
                on,
            };
            select_all(joined, stay)
        }
        Query::Union { left, right } => push_into(*left, movable.clone(), env).union(push_into(*right, movable, env)),
        Query::Rename { input, renames } => {
            let back: BTreeMap<String, String> = renames.iter().map(|(o, n)| (n.clone(), o.clone())).collect();
            let mapped = movable
                .iter()
                .map(|c| c.rename_attrs(&|a: &str| back.get(a).cloned().unwrap_or_else(|| a.to_string())))
                .collect();
            Query::Rename {
                input: Box::new(push_into(*input, mapped, env)),
                renames,
            }
        }
        other => select_all(other, movable),
    };
    select_all(pushed, fixed)
}

/// Runs every fetch (concurrently) through `fetch`, then evaluates the
/// residual over the fetched intermediates with `salt`.
pub fn execute_plan<E, F>(plan: &ExecutionPlan, fetch: F, salt: &str) -> Result<Table, E>
where
    E: From<QueryError> + Send,
    F: Fn(&FetchStep) -> Result<Table, E> + Sync,
{
    let results: Vec<Result<Table, E>> = if plan.fetches.len() <= 1 {
        plan.fetches.iter().map(&fetch).collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = plan
                .fetches
                .iter()
                .map(|step| {
                    let fetch = &fetch;
                    scope.spawn(move || fetch(step))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fetch thread panicked"))
                .collect()
        })
    };
    let mut db: BTreeMap<QualifiedName, Table> = BTreeMap::new();
    for (step, result) in plan.fetches.iter().zip(results) {
        db.insert(QualifiedName::new(FETCH_NAMESPACE, &step.id), result?);
    }
    evaluate_with(&plan.residual, &db, salt).map_err(E::from)
}
