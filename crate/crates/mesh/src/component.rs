use std::fmt;

use mmw_core::format::Format;
use mmw_core::schema::ProductSchema;
use mmw_core::{Query, Table};
use serde::{Deserialize, Serialize};

use crate::access::AccessLogEntry;
use crate::protocol::{ComponentError, ErrorCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Wrapper,
    Mediator,
    Mask,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Wrapper => "wrapper",
            Kind::Mediator => "mediator",
            Kind::Mask => "mask",
        })
    }
}

/// Monotone request counters since start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub queries_served: u64,
    pub rows_returned: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub errors: u64,
}

/// Provenance of one served relation. Children are the relations it was
/// computed from; `via` names the view applied on that edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub component: String,
    pub relation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via: Option<String>,
    /// Physical location for source leaves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Lineage>,
}

impl Lineage {
    pub fn leaf(component: &str, relation: &str) -> Self {
        Lineage {
            component: component.to_string(),
            relation: relation.to_string(),
            via: None,
            source: None,
            children: Vec::new(),
        }
    }

    /// Every component in the tree, root first, depth first.
    pub fn components(&self) -> Vec<&str> {
        let mut out = vec![self.component.as_str()];
        for c in &self.children {
            out.extend(c.components());
        }
        out
    }

    pub fn reaches(&self, component: &str) -> bool {
        self.component == component || self.children.iter().any(|c| c.reaches(component))
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(Lineage::depth).max().unwrap_or(0)
    }

    /// Indented text tree.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(0, &mut out);
        out
    }

    fn render_into(&self, indent: usize, out: &mut String) {
        out.push_str(&"  ".repeat(indent));
        out.push_str(&format!("{}.{}", self.component, self.relation));
        if let Some(v) = &self.via {
            out.push_str(&format!(" <- {v}"));
        }
        if let Some(s) = &self.source {
            out.push_str(&format!(" [{s}]"));
        }
        out.push('\n');
        for c in &self.children {
            c.render_into(indent + 1, out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationReport {
    pub name: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterializeReport {
    pub target: String,
    pub epoch: u64,
    pub relations: Vec<RelationReport>,
}

/// The contract every wrapper, mediator and mask serves, whether called
/// in-process or through a TCP endpoint.
pub trait Component: Send + Sync {
    fn id(&self) -> &str;

    fn kind(&self) -> Kind;

    /// Namespace queries to this component must use.
    fn namespace(&self) -> String;

    fn get_schema(&self) -> Result<ProductSchema, ComponentError>;

    fn execute(&self, q: &Query, principal: &str) -> Result<Table, ComponentError>;

    /// Executes and renders. Only masks render.
    fn serve(&self, _q: &Query, format: Format, _principal: &str) -> Result<String, ComponentError> {
        Err(ComponentError::protocol(
            self.id(),
            format!("{} does not render {format}; request format table", self.kind()),
        ))
    }

    fn epoch(&self) -> Result<u64, ComponentError>;

    fn stats(&self) -> Result<Stats, ComponentError>;

    fn lineage(&self, relation: &str) -> Result<Lineage, ComponentError>;

    fn materialize(&self) -> Result<MaterializeReport, ComponentError> {
        Err(ComponentError::protocol(self.id(), "not a materializing mask"))
    }

    fn access_log(&self) -> Vec<AccessLogEntry> {
        Vec::new()
    }
}

/// Wraps a component so it can be stopped: afterwards every request fails
/// with `unavailable`.
pub struct Hosted {
    id: String,
    inner: std::sync::Arc<dyn Component>,
    alive: std::sync::atomic::AtomicBool,
}

impl Hosted {
    pub fn new(inner: std::sync::Arc<dyn Component>) -> Self {
        Hosted {
            id: inner.id().to_string(),
            inner,
            alive: std::sync::atomic::AtomicBool::new(true),
        }
    }

    pub fn stop(&self) {
        self.alive.store(false, std::sync::atomic::Ordering::SeqCst);
    }

    pub fn is_alive(&self) -> bool {
        self.alive.load(std::sync::atomic::Ordering::SeqCst)
    }

    pub fn inner(&self) -> &dyn Component {
        self.inner.as_ref()
    }

    fn live(&self) -> Result<&dyn Component, ComponentError> {
        if self.is_alive() {
            Ok(self.inner.as_ref())
        } else {
            Err(ComponentError::new(
                ErrorCode::Unavailable,
                &self.id,
                "component stopped",
            ))
        }
    }
}

impl Component for Hosted {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> Kind {
        self.inner.kind()
    }

    fn namespace(&self) -> String {
        self.inner.namespace()
    }

    fn get_schema(&self) -> Result<ProductSchema, ComponentError> {
        self.live()?.get_schema()
    }

    fn execute(&self, q: &Query, principal: &str) -> Result<Table, ComponentError> {
        self.live()?.execute(q, principal)
    }

    fn serve(&self, q: &Query, format: Format, principal: &str) -> Result<String, ComponentError> {
        self.live()?.serve(q, format, principal)
    }

    fn epoch(&self) -> Result<u64, ComponentError> {
        self.live()?.epoch()
    }

    fn stats(&self) -> Result<Stats, ComponentError> {
        // counters stay readable after a stop
        self.inner.stats()
    }

    fn lineage(&self, relation: &str) -> Result<Lineage, ComponentError> {
        self.live()?.lineage(relation)
    }

    fn materialize(&self) -> Result<MaterializeReport, ComponentError> {
        self.live()?.materialize()
    }

    fn access_log(&self) -> Vec<AccessLogEntry> {
        self.inner.access_log()
    }
}
