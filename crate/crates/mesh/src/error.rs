use mmw_core::ViewError;

use crate::protocol::ComponentError;

/// A component could not be configured.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{component}: invalid identifier {name:?}")]
    Identifier { component: String, name: String },
    #[error("{component}: source {location}: {message}")]
    Source {
        component: String,
        location: String,
        message: String,
    },
    #[error("{component}: {source}")]
    View { component: String, source: ViewError },
    #[error("{component}: binding {binding}: {source}")]
    Downstream {
        component: String,
        binding: String,
        source: ComponentError,
    },
    #[error("{component}: {message}")]
    Invalid { component: String, message: String },
}

impl ConfigError {
    pub fn invalid(component: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            component: component.to_string(),
            message: message.into(),
        }
    }

    pub fn component(&self) -> &str {
        match self {
            ConfigError::Identifier { component, .. }
            | ConfigError::Source { component, .. }
            | ConfigError::View { component, .. }
            | ConfigError::Downstream { component, .. }
            | ConfigError::Invalid { component, .. } => component,
        }
    }
}
