//! Brings a validated topology up as running components and answers
//! mesh-wide questions: catalog, access checks, stats and lineage.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use mmw_core::format::Format;
use mmw_core::query::parse_query;
use mmw_core::schema::RelationSchema;
use mmw_core::Table;
use serde::Serialize;

use crate::access::{AccessLogEntry, Acl, Decision, Gate, Governance};
use crate::component::{Component, Hosted, Kind, Lineage, Stats};
use crate::error::ConfigError;
use crate::mask::{Mask, MaskMode};
use crate::mediator::Mediator;
use crate::protocol::ComponentError;
use crate::server::{RemoteComponent, TcpServer};
use crate::topology::{validate_topology, ComponentConfig, Endpoint, Finding, MeshTopology, Role};
use crate::wrapper::Wrapper;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("topology has {} violation(s): {}", .0.len(), .0.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
    Violations(Vec<Finding>),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{component}: cannot bind {addr}: {message}")]
    Bind {
        component: String,
        addr: String,
        message: String,
    },
    #[error("{component}: {source}")]
    Start { component: String, source: ComponentError },
    #[error("unknown component {0}")]
    UnknownComponent(String),
    #[error("{component}: access log {path}: {message}")]
    Log {
        component: String,
        path: String,
        message: String,
    },
}

#[derive(Debug, Clone, Default)]
pub struct MeshOptions {
    /// One `<id>.access.jsonl` file per component.
    pub log_dir: Option<PathBuf>,
    /// Also serve in-process components on ephemeral loopback ports.
    pub expose_all: bool,
}

enum Typed {
    Wrapper(Arc<Wrapper>),
    Mediator(Arc<Mediator>),
    Mask(Arc<Mask>),
    Remote,
}

struct Running {
    hosted: Arc<Hosted>,
    typed: Typed,
    server: Option<TcpServer>,
    /// Address of a component served by another process.
    remote: Option<SocketAddr>,
}

impl Running {
    fn addr(&self) -> Option<SocketAddr> {
        self.server.as_ref().map(TcpServer::addr).or(self.remote)
    }

    fn gate(&self) -> Option<&Gate> {
        match &self.typed {
            Typed::Wrapper(w) => Some(w.gate()),
            Typed::Mediator(m) => Some(m.gate()),
            Typed::Mask(m) => Some(m.gate()),
            Typed::Remote => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CatalogEntry {
    pub domain: String,
    pub product: String,
    pub version: u32,
    pub component: String,
    pub endpoint: String,
    /// `ok`, or `unavailable: <reason>`.
    pub status: String,
    pub relations: Vec<RelationSchema>,
    pub metadata: BTreeMap<String, String>,
}

/// A running mesh. Dropping it without [`Mesh::down`] still stops servers.
pub struct Mesh {
    topology: MeshTopology,
    order: Vec<String>,
    running: BTreeMap<String, Running>,
    warnings: Vec<Finding>,
}

fn governance(topology: &MeshTopology, acl: &Arc<Acl>, id: &str) -> Governance {
    let domain = topology.component(id).map(|c| c.domain.as_str()).unwrap_or_default();
    Governance::governed(domain, Arc::clone(acl))
}

/// Validates `topology` and starts every component, producers first. Any
/// failure stops the components already started.
pub fn mesh_up(topology: &MeshTopology, options: &MeshOptions) -> Result<Mesh, MeshError> {
    let findings = validate_topology(topology);
    let (violations, warnings): (Vec<_>, Vec<_>) = findings.into_iter().partition(Finding::is_violation);
    if !violations.is_empty() {
        return Err(MeshError::Violations(violations));
    }
    let order = topology.startup_order().expect("validated topologies are acyclic");
    let mut mesh = Mesh {
        topology: topology.clone(),
        order: Vec::new(),
        running: BTreeMap::new(),
        warnings,
    };
    let acl = Arc::new(topology.acl.clone());
    for id in &order {
        if let Err(e) = mesh.start_one(id, &acl, options) {
            mesh.shutdown();
            return Err(e);
        }
        mesh.order.push(id.clone());
    }
    Ok(mesh)
}

impl Mesh {
    fn start_one(&mut self, id: &str, acl: &Arc<Acl>, options: &MeshOptions) -> Result<(), MeshError> {
        let desc = self.topology.component(id).expect("ordered ids exist").clone();
        let gov = governance(&self.topology, acl, id);
        let producer = |pid: &str| -> Result<Arc<dyn Component>, MeshError> {
            let r = self
                .running
                .get(pid)
                .ok_or_else(|| MeshError::UnknownComponent(pid.to_string()))?;
            // producers with a TCP endpoint are consumed over the wire
            match &r.server {
                Some(s)
                    if matches!(
                        self.topology.component(pid).map(|c| &c.endpoint),
                        Some(Endpoint::Tcp(_))
                    ) =>
                {
                    let remote = RemoteComponent::connect(pid, r.hosted.kind(), s.addr()).map_err(|source| {
                        MeshError::Start {
                            component: id.to_string(),
                            source,
                        }
                    })?;
                    Ok(Arc::new(remote))
                }
                _ => Ok(Arc::clone(&r.hosted) as Arc<dyn Component>),
            }
        };
        let typed = match &desc.config {
            ComponentConfig::Wrapper(cfg) => Typed::Wrapper(Arc::new(Wrapper::new(cfg.clone(), gov)?)),
            ComponentConfig::Mediator(cfg) => {
                let mut downstream = BTreeMap::new();
                for (alias, pid) in &cfg.downstream {
                    downstream.insert(alias.clone(), producer(pid)?);
                }
                Typed::Mediator(Arc::new(Mediator::new(cfg.clone(), downstream, gov)?))
            }
            ComponentConfig::Mask(cfg) => {
                let upstream = cfg.upstream.as_deref().map(producer).transpose()?;
                Typed::Mask(Arc::new(Mask::new(cfg.clone(), upstream, gov)?))
            }
        };
        let inner: Arc<dyn Component> = match &typed {
            Typed::Wrapper(w) => w.clone(),
            Typed::Mediator(m) => m.clone(),
            Typed::Mask(m) => m.clone(),
            Typed::Remote => unreachable!(),
        };
        let hosted = Arc::new(Hosted::new(inner));
        let mut running = Running {
            hosted,
            typed,
            server: None,
            remote: None,
        };
        if let (Some(dir), Some(gate)) = (&options.log_dir, running.gate()) {
            let path = dir.join(format!("{id}.access.jsonl"));
            std::fs::create_dir_all(dir)
                .and_then(|_| gate.log.open_file(&path))
                .map_err(|e| MeshError::Log {
                    component: id.to_string(),
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
        }
        let bind = match &desc.endpoint {
            Endpoint::Tcp(addr) => Some(addr.clone()),
            Endpoint::InProcess if options.expose_all => Some("127.0.0.1:0".to_string()),
            Endpoint::InProcess => None,
        };
        if let Some(addr) = bind {
            let server = TcpServer::start(running.hosted.clone(), &addr).map_err(|e| MeshError::Bind {
                component: id.to_string(),
                addr: addr.clone(),
                message: e.to_string(),
            })?;
            running.server = Some(server);
        }
        if let Typed::Mask(m) = &running.typed {
            if m.mode() == MaskMode::Materializing {
                // storage readers configure against the first snapshot
                m.materialize().map_err(|source| MeshError::Start {
                    component: id.to_string(),
                    source,
                })?;
                m.start_refresher();
            }
        }
        self.running.insert(id.to_string(), running);
        Ok(())
    }

    /// Connects to components already served elsewhere.
    pub fn attach(topology: &MeshTopology, endpoints: &BTreeMap<String, SocketAddr>) -> Result<Mesh, MeshError> {
        let mut running = BTreeMap::new();
        for c in &topology.components {
            let addr = endpoints
                .get(&c.id)
                .ok_or_else(|| MeshError::UnknownComponent(c.id.clone()))?;
            let remote = RemoteComponent::connect(&c.id, c.kind, *addr).map_err(|source| MeshError::Start {
                component: c.id.clone(),
                source,
            })?;
            running.insert(
                c.id.clone(),
                Running {
                    hosted: Arc::new(Hosted::new(Arc::new(remote))),
                    typed: Typed::Remote,
                    server: None,
                    remote: Some(*addr),
                },
            );
        }
        Ok(Mesh {
            topology: topology.clone(),
            order: topology.components.iter().map(|c| c.id.clone()).collect(),
            running,
            warnings: Vec::new(),
        })
    }

    fn shutdown(&mut self) {
        for id in self.order.iter().rev() {
            if let Some(r) = self.running.get_mut(id) {
                if let Some(s) = r.server.as_mut() {
                    s.stop();
                }
                if let Typed::Mask(m) = &r.typed {
                    m.stop_refresher();
                }
                r.hosted.stop();
                if let Some(g) = r.gate() {
                    g.log.flush();
                }
            }
        }
        // components started before a failed start_one are not in order yet
        for r in self.running.values_mut() {
            if let Some(s) = r.server.as_mut() {
                s.stop();
            }
            if let Typed::Mask(m) = &r.typed {
                m.stop_refresher();
            }
            r.hosted.stop();
        }
    }

    /// Stops every component, consumers first, and flushes access logs.
    pub fn down(mut self) {
        self.shutdown();
    }

    pub fn topology(&self) -> &MeshTopology {
        &self.topology
    }

    /// Components in start order.
    pub fn startup_order(&self) -> &[String] {
        &self.order
    }

    pub fn warnings(&self) -> &[Finding] {
        &self.warnings
    }

    fn get(&self, id: &str) -> Result<&Running, MeshError> {
        self.running
            .get(id)
            .ok_or_else(|| MeshError::UnknownComponent(id.to_string()))
    }

    pub fn component(&self, id: &str) -> Option<Arc<dyn Component>> {
        self.running
            .get(id)
            .map(|r| Arc::clone(&r.hosted) as Arc<dyn Component>)
    }

    pub fn wrapper(&self, id: &str) -> Option<Arc<Wrapper>> {
        match &self.running.get(id)?.typed {
            Typed::Wrapper(w) => Some(Arc::clone(w)),
            _ => None,
        }
    }

    pub fn mediator(&self, id: &str) -> Option<Arc<Mediator>> {
        match &self.running.get(id)?.typed {
            Typed::Mediator(m) => Some(Arc::clone(m)),
            _ => None,
        }
    }

    pub fn mask(&self, id: &str) -> Option<Arc<Mask>> {
        match &self.running.get(id)?.typed {
            Typed::Mask(m) => Some(Arc::clone(m)),
            _ => None,
        }
    }

    /// TCP addresses of served components.
    pub fn endpoints(&self) -> BTreeMap<String, SocketAddr> {
        self.running
            .iter()
            .filter_map(|(id, r)| r.addr().map(|a| (id.clone(), a)))
            .collect()
    }

    /// Simulates a crash: the endpoint closes and every later request to the
    /// component fails with `unavailable`.
    pub fn stop_component(&mut self, id: &str) -> Result<(), MeshError> {
        let r = self
            .running
            .get_mut(id)
            .ok_or_else(|| MeshError::UnknownComponent(id.to_string()))?;
        if let Some(s) = r.server.as_mut() {
            s.stop();
        }
        r.hosted.stop();
        Ok(())
    }

    /// One entry per product mediator, ordered by domain, product, version.
    pub fn catalog(&self) -> Vec<CatalogEntry> {
        let mut out: Vec<CatalogEntry> = self
            .topology
            .components
            .iter()
            .filter(|c| c.role == Role::ProductMediator)
            .filter_map(|c| {
                let r = self.running.get(&c.id)?;
                let endpoint = match r.addr() {
                    Some(addr) => format!("tcp:{addr}"),
                    None => c.endpoint.to_string(),
                };
                let (product, version) = match &c.config {
                    ComponentConfig::Mediator(m) => (m.product.clone(), m.version),
                    _ => unreachable!("product mediators are mediators"),
                };
                let mut entry = CatalogEntry {
                    domain: c.domain.clone(),
                    product,
                    version,
                    component: c.id.clone(),
                    endpoint,
                    status: "ok".to_string(),
                    relations: Vec::new(),
                    metadata: BTreeMap::new(),
                };
                match r.hosted.get_schema() {
                    Ok(s) => {
                        entry.product = s.product;
                        entry.version = s.version;
                        entry.relations = s.relations;
                        entry.metadata = s.metadata;
                    }
                    Err(e) => entry.status = format!("unavailable: {}", e.message),
                }
                Some(entry)
            })
            .collect();
        out.sort_by(|a, b| (&a.domain, &a.product, a.version).cmp(&(&b.domain, &b.product, b.version)));
        out
    }

    /// Whether `principal` may read `relation` from `component`, with the
    /// deciding rule.
    pub fn check_access(&self, principal: &str, component: &str, _relation: &str) -> Result<Decision, MeshError> {
        let desc = self
            .topology
            .component(component)
            .ok_or_else(|| MeshError::UnknownComponent(component.to_string()))?;
        let product = self.get(component)?.hosted.namespace();
        Ok(self.topology.acl.check(principal, &desc.domain, &product))
    }

    pub fn stats(&self, component: &str) -> Result<Stats, MeshError> {
        let r = self.get(component)?;
        r.hosted.stats().map_err(|source| MeshError::Start {
            component: component.to_string(),
            source,
        })
    }

    pub fn access_log(&self, component: &str) -> Result<Vec<AccessLogEntry>, MeshError> {
        Ok(self.get(component)?.hosted.access_log())
    }

    /// Lineage with storage hops made explicit: a wrapper reading a
    /// materialized target gains the materializing mask and its upstream as
    /// children.
    pub fn lineage(&self, component: &str, relation: &str) -> Result<Lineage, ComponentError> {
        let r = self.running.get(component).ok_or_else(|| {
            ComponentError::new(
                crate::protocol::ErrorCode::UnknownRelation,
                component,
                "unknown component",
            )
        })?;
        let tree = r.hosted.lineage(relation)?;
        self.splice(tree)
    }

    fn splice(&self, mut node: Lineage) -> Result<Lineage, ComponentError> {
        let links = self.topology.storage_links();
        let mut children = Vec::with_capacity(node.children.len());
        for c in std::mem::take(&mut node.children) {
            children.push(self.splice(c)?);
        }
        node.children = children;
        if node.children.is_empty() {
            for (wrapper, mask) in &links {
                if *wrapper == node.component {
                    if let Some(m) = self.running.get(mask) {
                        let mut hop = m.hosted.lineage(&node.relation)?;
                        hop.via = Some("materialize".to_string());
                        node.children.push(self.splice(hop)?);
                    }
                }
            }
        }
        Ok(node)
    }

    /// Runs a textual query at `component`; masks render `format` themselves,
    /// other components' tables are rendered here.
    pub fn query(
        &self,
        component: &str,
        text: &str,
        principal: &str,
        format: Format,
    ) -> Result<String, ComponentError> {
        let r = self.running.get(component).ok_or_else(|| {
            ComponentError::new(
                crate::protocol::ErrorCode::UnknownRelation,
                component,
                "unknown component",
            )
        })?;
        let q = parse_query(text).map_err(|e| ComponentError::from_parse(&e, component))?;
        if r.hosted.kind() == Kind::Mask {
            r.hosted.serve(&q, format, principal)
        } else {
            let t: Table = r.hosted.execute(&q, principal)?;
            Ok(format.render(&t.sorted()))
        }
    }
}

impl Drop for Mesh {
    fn drop(&mut self) {
        self.shutdown();
    }
}
