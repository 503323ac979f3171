//! Topology documents: components, consumption edges, governance policy
//! flags and the access-control list, plus static validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use mmw_core::schema::is_identifier;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::access::{Acl, AclRule};
use crate::component::Kind;
use crate::mask::{MaskConfig, MaskMode};
use crate::mediator::MediatorConfig;
use crate::wrapper::{AdapterConfig, WrapperConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    OperationalWrapper,
    DipWrapper,
    ProductMediator,
    StagingMediator,
    ServingMask,
    MaterializingMask,
}

impl Role {
    pub fn kind(self) -> Kind {
        match self {
            Role::OperationalWrapper | Role::DipWrapper => Kind::Wrapper,
            Role::ProductMediator | Role::StagingMediator => Kind::Mediator,
            Role::ServingMask | Role::MaterializingMask => Kind::Mask,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::OperationalWrapper => "operational_wrapper",
            Role::DipWrapper => "dip_wrapper",
            Role::ProductMediator => "product_mediator",
            Role::StagingMediator => "staging_mediator",
            Role::ServingMask => "serving_mask",
            Role::MaterializingMask => "materializing_mask",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `in_process`, or `tcp:<host>:<port>` (port 0 picks a free port).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Endpoint {
    #[default]
    InProcess,
    Tcp(String),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::InProcess => f.write_str("in_process"),
            Endpoint::Tcp(addr) => write!(f, "tcp:{addr}"),
        }
    }
}

impl std::str::FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "in_process" {
            return Ok(Endpoint::InProcess);
        }
        match s.strip_prefix("tcp:") {
            Some(addr)
                if addr
                    .rsplit_once(':')
                    .is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok()) =>
            {
                Ok(Endpoint::Tcp(addr.to_string()))
            }
            _ => Err(format!("endpoint {s:?} is neither in_process nor tcp:<host>:<port>")),
        }
    }
}

impl Serialize for Endpoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ComponentConfig {
    Wrapper(WrapperConfig),
    Mediator(MediatorConfig),
    Mask(MaskConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentDescriptor {
    pub id: String,
    pub kind: Kind,
    pub domain: String,
    pub role: Role,
    pub endpoint: Endpoint,
    pub config: ComponentConfig,
}

impl ComponentDescriptor {
    /// Component ids this component binds to as downstream or upstream.
    pub fn bindings(&self) -> Vec<String> {
        match &self.config {
            ComponentConfig::Wrapper(_) => Vec::new(),
            ComponentConfig::Mediator(m) => m.downstream.values().cloned().collect(),
            ComponentConfig::Mask(m) => m.upstream.iter().cloned().collect(),
        }
    }

    /// Directory a file-backed wrapper reads.
    pub fn source_path(&self) -> Option<&Path> {
        match &self.config {
            ComponentConfig::Wrapper(w) => match &w.adapter {
                AdapterConfig::DelimitedDir { path } | AdapterConfig::DocLines { path } => Some(path),
                AdapterConfig::Memory { .. } => None,
            },
            _ => None,
        }
    }

    pub fn materialized_target(&self) -> Option<&Path> {
        match &self.config {
            ComponentConfig::Mask(m) if m.mode == MaskMode::Materializing => m.target.as_deref(),
            _ => None,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernancePolicy {
    /// Wrappers consume only their source; mediators consume wrappers and
    /// mediators; masks consume mediators (or wrappers, with a warning).
    #[serde(default = "yes")]
    pub enforce_kind_rules: bool,
    /// Cross-domain edges must run between mediators and end at a product
    /// mediator; operational wrappers never serve another domain.
    #[serde(default = "yes")]
    pub enforce_product_boundary: bool,
    /// Non-mediators may not consume another domain's mediator.
    #[serde(default = "yes")]
    pub deny_external_mediator_access: bool,
}

impl Default for GovernancePolicy {
    fn default() -> Self {
        GovernancePolicy {
            enforce_kind_rules: true,
            enforce_product_boundary: true,
            deny_external_mediator_access: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshTopology {
    pub domains: Vec<String>,
    pub components: Vec<ComponentDescriptor>,
    /// `(consumer, producer)`.
    pub edges: Vec<(String, String)>,
    pub policies: GovernancePolicy,
    pub acl: Acl,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("duplicate component id {0}")]
    DuplicateId(String),
    #[error("edge {consumer} -> {producer} references unknown component {missing}")]
    DanglingEdge {
        consumer: String,
        producer: String,
        missing: String,
    },
    #[error("{component} binds unknown component {missing}")]
    DanglingBinding { component: String, missing: String },
    #[error("{component}: role {role} requires kind {expected}, not {kind}")]
    KindRole {
        component: String,
        kind: Kind,
        role: Role,
        expected: Kind,
    },
    #[error("{component}: domain {domain} is not declared")]
    UnknownDomain { component: String, domain: String },
    #[error("{path}: invalid identifier {name:?}")]
    Identifier { path: String, name: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawComponent {
    id: String,
    kind: Kind,
    domain: String,
    role: Role,
    #[serde(default)]
    endpoint: Endpoint,
    #[serde(default = "empty_object")]
    config: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    #[serde(default)]
    domains: Vec<String>,
    #[serde(default)]
    components: Vec<RawComponent>,
    #[serde(default)]
    edges: Vec<(String, String)>,
    #[serde(default)]
    policies: GovernancePolicy,
    #[serde(default)]
    acl: Vec<AclRule>,
}

fn parse_at<T: serde::de::DeserializeOwned>(value: Value, prefix: &str) -> Result<T, TopologyError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner.as_str()) {
            (true, _) => inner.clone(),
            (false, ".") => prefix.to_string(),
            (false, _) => format!("{prefix}.{inner}"),
        };
        TopologyError::Parse {
            path,
            message: e.into_inner().to_string(),
        }
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Parses a topology document; relative paths in component configs are
/// resolved against `base_dir`.
pub fn load_topology(text: &str, base_dir: &Path) -> Result<MeshTopology, TopologyError> {
    let value: Value = serde_json::from_str(text).map_err(|e| TopologyError::Parse {
        path: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let raw: RawDocument = parse_at(value, "")?;
    for (i, d) in raw.domains.iter().enumerate() {
        if !is_identifier(d) {
            return Err(TopologyError::Identifier {
                path: format!("domains[{i}]"),
                name: d.clone(),
            });
        }
    }
    let mut components = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, c) in raw.components.into_iter().enumerate() {
        let at = format!("components[{i}]");
        if !is_identifier(&c.id) {
            return Err(TopologyError::Identifier {
                path: format!("{at}.id"),
                name: c.id,
            });
        }
        if !ids.insert(c.id.clone()) {
            return Err(TopologyError::DuplicateId(c.id));
        }
        if c.role.kind() != c.kind {
            return Err(TopologyError::KindRole {
                component: c.id,
                kind: c.kind,
                role: c.role,
                expected: c.role.kind(),
            });
        }
        if !raw.domains.is_empty() && !raw.domains.contains(&c.domain) {
            return Err(TopologyError::UnknownDomain {
                component: c.id,
                domain: c.domain,
            });
        }
        let cfg_at = format!("{at}.config");
        let config = match c.kind {
            Kind::Wrapper => {
                let mut w: WrapperConfig = parse_at(c.config, &cfg_at)?;
                w.id = c.id.clone();
                match &mut w.adapter {
                    AdapterConfig::DelimitedDir { path } | AdapterConfig::DocLines { path } => {
                        *path = resolve(base_dir, path);
                    }
                    AdapterConfig::Memory { .. } => {}
                }
                ComponentConfig::Wrapper(w)
            }
            Kind::Mediator => {
                let mut m: MediatorConfig = parse_at(c.config, &cfg_at)?;
                m.id = c.id.clone();
                if let Some(p) = &m.views_file {
                    m.views_file = Some(resolve(base_dir, p));
                }
                ComponentConfig::Mediator(m)
            }
            Kind::Mask => {
                let mut m: MaskConfig = parse_at(c.config, &cfg_at)?;
                m.id = c.id.clone();
                if let Some(p) = &m.target {
                    m.target = Some(resolve(base_dir, p));
                }
                ComponentConfig::Mask(m)
            }
        };
        components.push(ComponentDescriptor {
            id: c.id,
            kind: c.kind,
            domain: c.domain,
            role: c.role,
            endpoint: c.endpoint,
            config,
        });
    }
    for (consumer, producer) in &raw.edges {
        for end in [consumer, producer] {
            if !ids.contains(end) {
                return Err(TopologyError::DanglingEdge {
                    consumer: consumer.clone(),
                    producer: producer.clone(),
                    missing: end.clone(),
                });
            }
        }
    }
    for c in &components {
        if let Some(missing) = c.bindings().into_iter().find(|b| !ids.contains(b)) {
            return Err(TopologyError::DanglingBinding {
                component: c.id.clone(),
                missing,
            });
        }
    }
    Ok(MeshTopology {
        domains: raw.domains,
        components,
        edges: raw.edges,
        policies: raw.policies,
        acl: Acl::new(raw.acl),
    })
}

pub fn load_topology_file(path: &Path) -> Result<MeshTopology, TopologyError> {
    let text = std::fs::read_to_string(path).map_err(|e| TopologyError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    load_topology(&text, base)
}

impl MeshTopology {
    pub fn component(&self, id: &str) -> Option<&ComponentDescriptor> {
        self.components.iter().find(|c| c.id == id)
    }

    pub fn add_edge(&mut self, consumer: &str, producer: &str) {
        self.edges.push((consumer.to_string(), producer.to_string()));
    }

    /// Storage dependencies: a wrapper reading a materializing mask's target
    /// starts after that mask. `(wrapper, mask)` pairs.
    pub fn storage_links(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for w in &self.components {
            let Some(src) = w.source_path() else { continue };
            for m in &self.components {
                if m.materialized_target() == Some(src) {
                    out.push((w.id.clone(), m.id.clone()));
                }
            }
        }
        out
    }

    /// Producers before consumers; ties keep document order.
    pub fn startup_order(&self) -> Result<Vec<String>, Vec<String>> {
        let mut deps: BTreeMap<&str, BTreeSet<String>> = self
            .components
            .iter()
            .map(|c| (c.id.as_str(), BTreeSet::new()))
            .collect();
        for (c, p) in self.edges.iter().chain(self.storage_links().iter()) {
            if c != p {
                deps.get_mut(c.as_str()).expect("checked at load").insert(p.clone());
            }
        }
        for c in &self.components {
            for b in c.bindings() {
                deps.get_mut(c.id.as_str()).unwrap().insert(b);
            }
        }
        let mut order: Vec<String> = Vec::new();
        let mut placed = BTreeSet::new();
        while order.len() < self.components.len() {
            let next = self
                .components
                .iter()
                .find(|c| !placed.contains(&c.id) && deps[c.id.as_str()].iter().all(|d| placed.contains(d)));
            match next {
                Some(c) => {
                    placed.insert(c.id.clone());
                    order.push(c.id.clone());
                }
                None => {
                    let stuck = self
                        .components
                        .iter()
                        .filter(|c| !placed.contains(&c.id))
                        .map(|c| c.id.clone())
                        .collect();
                    return Err(stuck);
                }
            }
        }
        Ok(order)
    }

    /// The document form, with absolute paths made relative to `base_dir`
    /// where possible.
    pub fn to_document(&self, base_dir: &Path) -> Value {
        let rel = |p: &Path| -> PathBuf {
            p.strip_prefix(base_dir)
                .map(Path::to_path_buf)
                .unwrap_or_else(|_| p.into())
        };
        let components: Vec<Value> = self
            .components
            .iter()
            .map(|c| {
                let mut config = match &c.config {
                    ComponentConfig::Wrapper(w) => {
                        let mut w = w.clone();
                        match &mut w.adapter {
                            AdapterConfig::DelimitedDir { path } | AdapterConfig::DocLines { path } => {
                                *path = rel(path)
                            }
                            AdapterConfig::Memory { .. } => {}
                        }
                        serde_json::to_value(w)
                    }
                    ComponentConfig::Mediator(m) => {
                        let mut m = m.clone();
                        m.views_file = m.views_file.as_deref().map(rel);
                        serde_json::to_value(m)
                    }
                    ComponentConfig::Mask(m) => {
                        let mut m = m.clone();
                        m.target = m.target.as_deref().map(rel);
                        serde_json::to_value(m)
                    }
                }
                .expect("configs serialize");
                if let Value::Object(o) = &mut config {
                    o.remove("id");
                }
                serde_json::json!({
                    "id": c.id,
                    "kind": c.kind,
                    "domain": c.domain,
                    "role": c.role,
                    "endpoint": c.endpoint,
                    "config": config,
                })
            })
            .collect();
        serde_json::json!({
            "domains": self.domains,
            "components": components,
            "edges": self.edges,
            "policies": self.policies,
            "acl": self.acl.rules,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Violation,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    /// Policy flag or structural rule that produced this finding.
    pub rule: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge: Option<(String, String)>,
    pub message: String,
}

impl Finding {
    fn new(severity: Severity, rule: &str, edge: Option<(&str, &str)>, message: String) -> Self {
        Finding {
            severity,
            rule: rule.to_string(),
            edge: edge.map(|(a, b)| (a.to_string(), b.to_string())),
            message,
        }
    }

    pub fn is_violation(&self) -> bool {
        self.severity == Severity::Violation
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Violation => "violation",
            Severity::Warning => "warning",
        };
        write!(f, "{sev} [{}]", self.rule)?;
        if let Some((c, p)) = &self.edge {
            write!(f, " {c} -> {p}")?;
        }
        write!(f, ": {}", self.message)
    }
}

pub const RULE_KIND: &str = "enforce_kind_rules";
pub const RULE_BOUNDARY: &str = "enforce_product_boundary";
pub const RULE_EXTERNAL_MEDIATOR: &str = "deny_external_mediator_access";
pub const RULE_UNDECLARED_BINDING: &str = "binding_without_edge";
pub const RULE_CYCLE: &str = "acyclic_dependencies";
pub const RULE_MASK_ON_WRAPPER: &str = "mask_reads_wrapper";

fn edge_findings(t: &MeshTopology, c: &ComponentDescriptor, p: &ComponentDescriptor, out: &mut Vec<Finding>) {
    let edge = Some((c.id.as_str(), p.id.as_str()));
    let pol = t.policies;
    let violation = |rule: &str, msg: String| Finding::new(Severity::Violation, rule, edge, msg);
    match (c.kind, p.kind) {
        (Kind::Wrapper, _) if pol.enforce_kind_rules => {
            out.push(violation(RULE_KIND, "a wrapper consumes only its data source".into()));
        }
        (Kind::Mediator, Kind::Mask) | (Kind::Mask, Kind::Mask) if pol.enforce_kind_rules => {
            out.push(violation(RULE_KIND, format!("a {} may not consume a mask", c.kind)));
        }
        (Kind::Mask, Kind::Wrapper) => out.push(Finding::new(
            Severity::Warning,
            RULE_MASK_ON_WRAPPER,
            edge,
            "mask connects directly to a wrapper".into(),
        )),
        _ => {}
    }
    if c.domain == p.domain || p.role == Role::DipWrapper {
        return;
    }
    match (c.kind, p.role) {
        (Kind::Mediator, Role::ProductMediator) => {}
        (_, Role::ProductMediator | Role::StagingMediator) if c.kind != Kind::Mediator => {
            if pol.deny_external_mediator_access {
                out.push(violation(
                    RULE_EXTERNAL_MEDIATOR,
                    format!(
                        "{} in domain {} may not access mediator of domain {}",
                        c.kind, c.domain, p.domain
                    ),
                ));
            }
        }
        (_, Role::OperationalWrapper) => {
            if pol.enforce_product_boundary {
                out.push(violation(
                    RULE_BOUNDARY,
                    format!(
                        "domain {} may not depend on operational data of domain {}",
                        c.domain, p.domain
                    ),
                ));
            }
        }
        _ => {
            if pol.enforce_product_boundary {
                out.push(violation(
                    RULE_BOUNDARY,
                    format!("cross-domain edges must end at a product mediator, not a {}", p.role),
                ));
            }
        }
    }
}

/// Governance findings, violations first within each edge, edges in
/// document order.
pub fn validate_topology(t: &MeshTopology) -> Vec<Finding> {
    let mut out = Vec::new();
    let by_id: BTreeMap<&str, &ComponentDescriptor> = t.components.iter().map(|c| (c.id.as_str(), c)).collect();
    for (c, p) in &t.edges {
        let (Some(cd), Some(pd)) = (by_id.get(c.as_str()), by_id.get(p.as_str())) else {
            out.push(Finding::new(
                Severity::Violation,
                RULE_UNDECLARED_BINDING,
                Some((c, p)),
                "edge references an unknown component".into(),
            ));
            continue;
        };
        edge_findings(t, cd, pd, &mut out);
    }
    let edges: BTreeSet<(&str, &str)> = t.edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    for c in &t.components {
        for b in c.bindings() {
            if !edges.contains(&(c.id.as_str(), b.as_str())) {
                out.push(Finding::new(
                    Severity::Violation,
                    RULE_UNDECLARED_BINDING,
                    Some((&c.id, &b)),
                    "binding has no declared edge".into(),
                ));
            }
        }
    }
    if let Err(stuck) = t.startup_order() {
        out.push(Finding::new(
            Severity::Violation,
            RULE_CYCLE,
            None,
            format!("dependency cycle among {}", stuck.join(", ")),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"components":[{"id":"w","kind":"wrapper","domain":"d","role":"operational_wrapper",
        "config":{"alias":"w","adapter":{"kind":"memory"}}}]}"#;

    #[test]
    fn minimal_document() {
        let t = load_topology(MINIMAL, Path::new(".")).unwrap();
        assert_eq!(t.components.len(), 1);
        assert!(validate_topology(&t).is_empty());
        assert_eq!(t.policies, GovernancePolicy::default());
    }

    #[test]
    fn dangling_edge() {
        let doc = format!(
            "{}, \"edges\":[[\"w\",\"ghost\"]]}}",
            MINIMAL.strip_suffix('}').unwrap()
        );
        let e = load_topology(&doc, Path::new(".")).unwrap_err();
        assert!(
            matches!(e, TopologyError::DanglingEdge { missing, .. } if missing == "ghost"),
            "{doc}"
        );
    }

    #[test]
    fn parse_errors_carry_paths() {
        let doc = r#"{"components":[{"id":"w","kind":"wrapper","domain":"d","role":"operational_wrapper",
            "config":{"alias":"w","adapter":{"kind":"floppy"}}}]}"#;
        let e = load_topology(doc, Path::new(".")).unwrap_err();
        let TopologyError::Parse { path, .. } = e else {
            panic!("{e}")
        };
        assert!(path.starts_with("components[0].config"), "{path}");
    }

    #[test]
    fn kind_role_mismatch() {
        let doc = MINIMAL.replace("operational_wrapper", "serving_mask");
        assert!(matches!(
            load_topology(&doc, Path::new(".")),
            Err(TopologyError::KindRole { .. })
        ));
    }

    #[test]
    fn endpoints_parse() {
        assert_eq!("in_process".parse::<Endpoint>().unwrap(), Endpoint::InProcess);
        assert_eq!(
            "tcp:127.0.0.1:0".parse::<Endpoint>().unwrap(),
            Endpoint::Tcp("127.0.0.1:0".into())
        );
        assert!("tcp:nope".parse::<Endpoint>().is_err());
    }
}
