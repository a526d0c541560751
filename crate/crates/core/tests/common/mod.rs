//! Test-only components: `feed:<name>` hands its sink to the test, and
//! `collect:<name>` records every exchange it is given.
#![allow(dead_code)]

pub mod gen;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use masbus::bus::RouteContext;
use masbus::{Component, Consumer, EndpointError, EndpointUri, Exchange, ExchangeSink, Producer};

#[derive(Clone, Default)]
pub struct Feeds {
    sinks: Arc<Mutex<HashMap<String, ExchangeSink>>>,
}

impl Feeds {
    pub fn sink(&self, name: &str) -> ExchangeSink {
        self.sinks
            .lock()
            .unwrap()
            .get(name)
            .cloned()
            .expect("feed not started")
    }
}

impl Component for Feeds {
    fn create_consumer(
        &self,
        uri: &EndpointUri,
        _ctx: &RouteContext,
    ) -> Result<Box<dyn Consumer>, EndpointError> {
        Ok(Box::new(FeedConsumer {
            name: uri.path().to_string(),
            sinks: self.sinks.clone(),
        }))
    }
}

struct FeedConsumer {
    name: String,
    sinks: Arc<Mutex<HashMap<String, ExchangeSink>>>,
}

impl Consumer for FeedConsumer {
    fn start(&mut self, sink: ExchangeSink) -> Result<(), EndpointError> {
        self.sinks.lock().unwrap().insert(self.name.clone(), sink);
        Ok(())
    }

    fn stop(&mut self) {
        self.sinks.lock().unwrap().remove(&self.name);
    }
}

/// Records exchanges per endpoint path. A path starting with `fail` refuses
/// every exchange.
#[derive(Clone, Default)]
pub struct Collector {
    seen: Arc<Mutex<HashMap<String, Vec<Exchange>>>>,
}

impl Collector {
    pub fn get(&self, name: &str) -> Vec<Exchange> {
        self.seen
            .lock()
            .unwrap()
            .get(name)
            .cloned()
            .unwrap_or_default()
    }

    pub fn total(&self) -> usize {
        self.seen.lock().unwrap().values().map(Vec::len).sum()
    }

    pub fn wait_for(&self, name: &str, count: usize, timeout: Duration) -> Vec<Exchange> {
        let deadline = Instant::now() + timeout;
        loop {
            let got = self.get(name);
            if got.len() >= count || Instant::now() >= deadline {
                return got;
            }
            std::thread::sleep(Duration::from_millis(2));
        }
    }
}

impl Component for Collector {
    fn create_producer(
        &self,
        uri: &EndpointUri,
        _ctx: &RouteContext,
    ) -> Result<Box<dyn Producer>, EndpointError> {
        Ok(Box::new(CollectProducer {
            name: uri.path().to_string(),
            seen: self.seen.clone(),
        }))
    }
}

struct CollectProducer {
    name: String,
    seen: Arc<Mutex<HashMap<String, Vec<Exchange>>>>,
}

impl Producer for CollectProducer {
    fn send(&self, exchange: &Exchange) -> Result<(), EndpointError> {
        if self.name.starts_with("fail") {
            return Err(EndpointError::Protocol(format!(
                "{} refuses everything",
                self.name
            )));
        }
        self.seen
            .lock()
            .unwrap()
            .entry(self.name.clone())
            .or_default()
            .push(exchange.clone());
        Ok(())
    }
}

/// Registers `feed` and `collect` on the bus and returns their handles.
pub fn install(bus: &masbus::Bus) -> (Feeds, Collector) {
    let feeds = Feeds::default();
    let collector = Collector::default();
    bus.register_component("feed", Arc::new(feeds.clone()))
        .unwrap();
    bus.register_component("collect", Arc::new(collector.clone()))
        .unwrap();
    (feeds, collector)
}

pub fn route(id: &str, from: &str, to: &[&str]) -> masbus::RouteDefinition {
    let mut b = masbus::RouteBuilder::new(id).from(from);
    for t in to {
        b = b.to(t);
    }
    b.build().unwrap()
}
