//! `direct:<name>`: a synchronous in-process hop. The producer runs the
//! consumer's route on the calling thread.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::bus::{Component, Consumer, EndpointError, ExchangeSink, Producer, RouteContext};
use crate::exchange::{Exchange, ExchangeId, Headers};
use crate::term::Term;
use crate::uri::EndpointUri;

#[derive(Debug, Default)]
pub struct DirectRegistry {
    endpoints: Mutex<HashMap<String, ExchangeSink>>,
}

impl DirectRegistry {
    pub fn new() -> DirectRegistry {
        DirectRegistry::default()
    }

    fn bind(&self, name: &str, sink: ExchangeSink) -> Result<(), EndpointError> {
        let mut endpoints = self.endpoints.lock().unwrap();
        if endpoints.contains_key(name) {
            return Err(EndpointError::DuplicateName(format!("direct:{name}")));
        }
        endpoints.insert(name.to_string(), sink);
        Ok(())
    }

    fn unbind(&self, name: &str) {
        self.endpoints.lock().unwrap().remove(name);
    }

    pub fn is_bound(&self, name: &str) -> bool {
        self.endpoints.lock().unwrap().contains_key(name)
    }

    /// Runs a new exchange through the route consuming `direct:<name>`.
    pub fn send(
        &self,
        name: &str,
        headers: Headers,
        body: Term,
    ) -> Result<ExchangeId, EndpointError> {
        let sink = self
            .endpoints
            .lock()
            .unwrap()
            .get(name)
            .cloned()
            .ok_or_else(|| EndpointError::NoConsumer(format!("direct:{name}")))?;
        sink.process_now(headers, body)
    }
}

#[derive(Debug, Clone, Default)]
pub struct DirectComponent {
    registry: Arc<DirectRegistry>,
}

impl DirectComponent {
    pub fn new(registry: Arc<DirectRegistry>) -> DirectComponent {
        DirectComponent { registry }
    }

    pub fn registry(&self) -> &Arc<DirectRegistry> {
        &self.registry
    }
}

struct DirectConsumer {
    name: String,
    registry: Arc<DirectRegistry>,
}

impl Consumer for DirectConsumer {
    fn start(&mut self, sink: ExchangeSink) -> Result<(), EndpointError> {
        self.registry.bind(&self.name, sink)
    }

    fn stop(&mut self) {
        self.registry.unbind(&self.name);
    }
}

struct DirectProducer {
    name: String,
    registry: Arc<DirectRegistry>,
}

impl Producer for DirectProducer {
    fn send(&self, exchange: &Exchange) -> Result<(), EndpointError> {
        self.registry
            .send(&self.name, exchange.headers.clone(), exchange.body.clone())
            .map(|_| ())
    }
}

fn endpoint_name(uri: &EndpointUri) -> Result<String, EndpointError> {
    if uri.path().is_empty() {
        return Err(EndpointError::InvalidParam(
            "direct endpoint needs a name".into(),
        ));
    }
    Ok(uri.path().to_string())
}

impl Component for DirectComponent {
    fn create_consumer(
        &self,
        uri: &EndpointUri,
        _ctx: &RouteContext,
    ) -> Result<Box<dyn Consumer>, EndpointError> {
        Ok(Box::new(DirectConsumer {
            name: endpoint_name(uri)?,
            registry: self.registry.clone(),
        }))
    }

    fn create_producer(
        &self,
        uri: &EndpointUri,
        _ctx: &RouteContext,
    ) -> Result<Box<dyn Producer>, EndpointError> {
        Ok(Box::new(DirectProducer {
            name: endpoint_name(uri)?,
            registry: self.registry.clone(),
        }))
    }
}
