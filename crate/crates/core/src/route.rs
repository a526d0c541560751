use thiserror::Error;

use crate::term::Term;
use crate::uri::EndpointUri;

#[derive(Debug, Clone, PartialEq)]
pub enum ProcessorSpec {
    /// Sets a header to a constant value.
    SetHeader { name: String, value: Term },
    /// Applies a transform registered on the bus under this name.
    Transform { name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteDefinitionError {
    #[error("route id must not be empty")]
    EmptyId,
    #[error("route '{0}' has no `to` endpoint")]
    EmptyTo(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteDefinition {
    route_id: String,
    from: EndpointUri,
    processors: Vec<ProcessorSpec>,
    to: Vec<EndpointUri>,
}

impl RouteDefinition {
    pub fn new(
        route_id: impl Into<String>,
        from: EndpointUri,
        processors: Vec<ProcessorSpec>,
        to: Vec<EndpointUri>,
    ) -> Result<RouteDefinition, RouteDefinitionError> {
        let route_id = route_id.into();
        if route_id.is_empty() {
            return Err(RouteDefinitionError::EmptyId);
        }
        if to.is_empty() {
            return Err(RouteDefinitionError::EmptyTo(route_id));
        }
        Ok(RouteDefinition {
            route_id,
            from,
            processors,
            to,
        })
    }

    pub fn route_id(&self) -> &str {
        &self.route_id
    }

    pub fn from(&self) -> &EndpointUri {
        &self.from
    }

    pub fn processors(&self) -> &[ProcessorSpec] {
        &self.processors
    }

    pub fn to(&self) -> &[EndpointUri] {
        &self.to
    }

    /// Every endpoint of the route, consumer first.
    pub fn endpoints(&self) -> impl Iterator<Item = &EndpointUri> {
        std::iter::once(&self.from).chain(self.to.iter())
    }

    pub(crate) fn map_endpoints<E>(
        self,
        mut f: impl FnMut(EndpointUri) -> Result<EndpointUri, E>,
    ) -> Result<RouteDefinition, E> {
        Ok(RouteDefinition {
            route_id: self.route_id,
            from: f(self.from)?,
            processors: self.processors,
            to: self.to.into_iter().map(f).collect::<Result<_, _>>()?,
        })
    }
}
