//! Mask, mediator and wrapper components and the runtime that composes them
//! into a governed data mesh.

pub mod access;
pub mod component;
pub mod demo;
pub mod error;
pub mod mask;
pub mod mediator;
pub mod protocol;
pub mod runtime;
pub mod server;
pub mod topology;
pub mod wrapper;

pub use access::{AccessLogEntry, Acl, AclRule, Decision, Governance};
pub use component::{Component, Hosted, Kind, Lineage, MaterializeReport, Stats};
pub use error::ConfigError;
pub use mask::{FaultPoint, Mask, MaskConfig, MaskMode, Refresh};
pub use mediator::{Mediator, MediatorConfig};
pub use protocol::{ComponentError, ErrorCode, Request, Response};
pub use runtime::{mesh_up, CatalogEntry, Mesh, MeshError, MeshOptions};
pub use server::{RemoteComponent, TcpServer};
pub use topology::{
    load_topology, load_topology_file, validate_topology, ComponentDescriptor, Endpoint, Finding, GovernancePolicy,
    MeshTopology, Role, Severity,
};
pub use wrapper::{AdapterConfig, Wrapper, WrapperConfig};

/// A name usable as a namespace or relation in query text.
pub(crate) fn is_name(s: &str) -> bool {
    mmw_core::schema::is_identifier(s) && !mmw_core::query::is_reserved(s)
}
