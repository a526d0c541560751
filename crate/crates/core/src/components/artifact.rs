//! `artifact:<workspace>`: bridges routes and environment artifacts.
//!
//! The producer turns each exchange into an operation request, naming the
//! artifact and operation through the `ArtifactName` / `OperationName`
//! headers (falling back to the `artifactName` / `operationName` uri
//! params). A list body supplies positional parameters; any other body is the
//! single parameter. The consumer, `artifact:<workspace>?artifactName=<a>`,
//! emits one exchange per payload the artifact sends.
//!
//! The workspace `cartago` names the default workspace.

use std::sync::Arc;

use super::required_param;
use crate::bus::{Component, Consumer, EndpointError, ExchangeSink, Producer, RouteContext};
use crate::environment::{
    EnvError, Environment, OperationRequest, Origin, OutboundPayload, DEFAULT_WORKSPACE,
};
use crate::exchange::Exchange;
use crate::term::Term;
use crate::uri::EndpointUri;

pub const HEADER_ARTIFACT_NAME: &str = "ArtifactName";
pub const HEADER_OPERATION_NAME: &str = "OperationName";
pub const DEFAULT_WORKSPACE_ALIAS: &str = "cartago";

#[derive(Debug, Clone)]
pub struct ArtifactComponent {
    env: Arc<Environment>,
}

impl ArtifactComponent {
    pub fn new(env: Arc<Environment>) -> ArtifactComponent {
        ArtifactComponent { env }
    }

    fn workspace(&self, uri: &EndpointUri) -> Result<String, EndpointError> {
        let ws = match uri.path() {
            "" | DEFAULT_WORKSPACE_ALIAS => DEFAULT_WORKSPACE,
            other => other,
        };
        if !self.env.has_workspace(ws) {
            return Err(EndpointError::UnknownWorkspace(ws.to_string()));
        }
        Ok(ws.to_string())
    }
}

pub(crate) fn env_error(e: EnvError) -> EndpointError {
    match e {
        EnvError::UnknownWorkspace(w) => EndpointError::UnknownWorkspace(w),
        EnvError::UnknownArtifact(a) => EndpointError::UnknownArtifact(a),
        EnvError::UnknownOperation {
            artifact,
            operation,
        } => EndpointError::UnknownOperation {
            artifact,
            operation,
        },
        EnvError::OperationFailed(reason) => EndpointError::OperationFailed(reason),
        other => EndpointError::Protocol(other.to_string()),
    }
}

impl Component for ArtifactComponent {
    fn create_consumer(
        &self,
        uri: &EndpointUri,
        _ctx: &RouteContext,
    ) -> Result<Box<dyn Consumer>, EndpointError> {
        let workspace = self.workspace(uri)?;
        let artifact = required_param(uri, "artifactName")?.to_string();
        if !self.env.has_artifact(&workspace, &artifact) {
            return Err(EndpointError::UnknownArtifact(artifact));
        }
        Ok(Box::new(ArtifactConsumer {
            env: self.env.clone(),
            workspace,
            artifact,
            attached: false,
        }))
    }

    fn create_producer(
        &self,
        uri: &EndpointUri,
        ctx: &RouteContext,
    ) -> Result<Box<dyn Producer>, EndpointError> {
        Ok(Box::new(ArtifactProducer {
            env: self.env.clone(),
            workspace: self.workspace(uri)?,
            artifact_param: uri.param("artifactName").map(str::to_string),
            operation_param: uri.param("operationName").map(str::to_string),
            route_id: ctx.route_id.clone(),
        }))
    }
}

struct ArtifactConsumer {
    env: Arc<Environment>,
    workspace: String,
    artifact: String,
    attached: bool,
}

impl Consumer for ArtifactConsumer {
    fn start(&mut self, sink: ExchangeSink) -> Result<(), EndpointError> {
        let source = self.artifact.clone();
        let listener = Arc::new(move |payload: OutboundPayload| {
            let mut headers = payload.headers.clone();
            headers.insert(HEADER_ARTIFACT_NAME.into(), Term::string(source.clone()));
            match sink.submit(headers, payload.body.clone()) {
                Ok(_) => Ok(()),
                Err(_) => Err(payload),
            }
        });
        self.env
            .attach_outbox(&self.workspace, &self.artifact, listener)
            .map_err(env_error)?;
        self.attached = true;
        Ok(())
    }

    fn stop(&mut self) {
        if self.attached {
            let _ = self.env.detach_outbox(&self.workspace, &self.artifact);
            self.attached = false;
        }
    }
}

struct ArtifactProducer {
    env: Arc<Environment>,
    workspace: String,
    artifact_param: Option<String>,
    operation_param: Option<String>,
    route_id: String,
}

fn resolve(exchange: &Exchange, header: &str, param: &Option<String>) -> Option<String> {
    exchange
        .header(header)
        .and_then(Term::as_text)
        .map(str::to_string)
        .or_else(|| param.clone())
        .filter(|s| !s.is_empty())
}

/// Operation parameters carried by a body: list elements, or the body itself.
pub fn body_params(body: &Term) -> Vec<Term> {
    match body {
        Term::List(items) => items.clone(),
        other => vec![other.clone()],
    }
}

impl ArtifactProducer {
    fn request(&self, exchange: &Exchange) -> Result<OperationRequest, EndpointError> {
        let artifact = resolve(exchange, HEADER_ARTIFACT_NAME, &self.artifact_param)
            .ok_or(EndpointError::MissingArtifactName)?;
        let operation = resolve(exchange, HEADER_OPERATION_NAME, &self.operation_param)
            .ok_or(EndpointError::MissingOperationName)?;
        Ok(OperationRequest::new(
            self.workspace.clone(),
            artifact,
            operation,
            body_params(&exchange.body),
            Origin::Route(self.route_id.clone()),
        ))
    }
}

impl Producer for ArtifactProducer {
    fn send(&self, exchange: &Exchange) -> Result<(), EndpointError> {
        let request = self.request(exchange)?;
        self.env.execute_op(&request).map(|_| ()).map_err(env_error)
    }
}
