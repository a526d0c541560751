//! `mqttlite:<name>?host=<broker>&subscribeTopicName=<t>` /
//! `...&publishTopicName=<t>`: topic pub/sub over in-process brokers keyed by
//! their `host` string.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::required_param;
use crate::bus::{Component, Consumer, EndpointError, ExchangeSink, Producer, RouteContext};
use crate::exchange::{Exchange, Headers};
use crate::term::Term;
use crate::uri::EndpointUri;

pub type Subscriber = Arc<dyn Fn(&str, &str) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubscriptionId(u64);

#[derive(Default)]
pub struct Broker {
    next_id: AtomicU64,
    topics: Mutex<HashMap<String, Vec<(SubscriptionId, Subscriber)>>>,
    retained: Mutex<HashMap<String, String>>,
}

impl std::fmt::Debug for Broker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Broker").finish_non_exhaustive()
    }
}

impl Broker {
    pub fn new() -> Broker {
        Broker::default()
    }

    /// Adds a subscriber. With `want_retained`, the topic's retained payload
    /// (if any) is delivered immediately.
    pub fn subscribe(
        &self,
        topic: &str,
        want_retained: bool,
        subscriber: Subscriber,
    ) -> SubscriptionId {
        let id = SubscriptionId(self.next_id.fetch_add(1, Ordering::SeqCst));
        self.topics
            .lock()
            .unwrap()
            .entry(topic.to_string())
            .or_default()
            .push((id, subscriber.clone()));
        if want_retained {
            let retained = self.retained.lock().unwrap().get(topic).cloned();
            if let Some(payload) = retained {
                subscriber(topic, &payload);
            }
        }
        id
    }

    pub fn unsubscribe(&self, id: SubscriptionId) {
        for subs in self.topics.lock().unwrap().values_mut() {
            subs.retain(|(sid, _)| *sid != id);
        }
    }

    pub fn subscriber_count(&self, topic: &str) -> usize {
        self.topics.lock().unwrap().get(topic).map_or(0, Vec::len)
    }

    /// Delivers `payload` once to every current subscriber of `topic`;
    /// returns how many were reached.
    pub fn publish(&self, topic: &str, payload: &str, retain: bool) -> usize {
        if retain {
            self.retained
                .lock()
                .unwrap()
                .insert(topic.to_string(), payload.to_string());
        }
        let subs: Vec<Subscriber> = self
            .topics
            .lock()
            .unwrap()
            .get(topic)
            .map(|v| v.iter().map(|(_, s)| s.clone()).collect())
            .unwrap_or_default();
        for s in &subs {
            s(topic, payload);
        }
        subs.len()
    }
}

#[derive(Debug, Default)]
pub struct BrokerRegistry {
    brokers: Mutex<HashMap<String, Arc<Broker>>>,
}

impl BrokerRegistry {
    pub fn new() -> BrokerRegistry {
        BrokerRegistry::default()
    }

    pub fn broker(&self, host: &str) -> Arc<Broker> {
        self.brokers
            .lock()
            .unwrap()
            .entry(host.to_string())
            .or_insert_with(|| Arc::new(Broker::new()))
            .clone()
    }
}

#[derive(Debug, Clone, Default)]
pub struct MqttLiteComponent {
    brokers: Arc<BrokerRegistry>,
}

impl MqttLiteComponent {
    pub fn new(brokers: Arc<BrokerRegistry>) -> MqttLiteComponent {
        MqttLiteComponent { brokers }
    }
}

impl Component for MqttLiteComponent {
    fn create_consumer(
        &self,
        uri: &EndpointUri,
        _ctx: &RouteContext,
    ) -> Result<Box<dyn Consumer>, EndpointError> {
        let host = required_param(uri, "host")?;
        let topic = required_param(uri, "subscribeTopicName")?;
        Ok(Box::new(MqttLiteConsumer {
            broker: self.brokers.broker(host),
            topic: topic.to_string(),
            retained: uri.param("retained") == Some("true"),
            subscription: None,
        }))
    }

    fn create_producer(
        &self,
        uri: &EndpointUri,
        _ctx: &RouteContext,
    ) -> Result<Box<dyn Producer>, EndpointError> {
        let host = required_param(uri, "host")?;
        let topic = required_param(uri, "publishTopicName")?;
        Ok(Box::new(MqttLiteProducer {
            broker: self.brokers.broker(host),
            topic: topic.to_string(),
            retain: uri.param("retain") == Some("true"),
        }))
    }
}

struct MqttLiteConsumer {
    broker: Arc<Broker>,
    topic: String,
    retained: bool,
    subscription: Option<SubscriptionId>,
}

impl Consumer for MqttLiteConsumer {
    fn start(&mut self, sink: ExchangeSink) -> Result<(), EndpointError> {
        let subscriber: Subscriber = Arc::new(move |topic, payload| {
            let mut headers = Headers::new();
            headers.insert("MqttTopic".into(), Term::string(topic));
            let _ = sink.submit(headers, Term::parse_or_string(payload));
        });
        self.subscription = Some(
            self.broker
                .subscribe(&self.topic, self.retained, subscriber),
        );
        Ok(())
    }

    fn stop(&mut self) {
        if let Some(id) = self.subscription.take() {
            self.broker.unsubscribe(id);
        }
    }
}

struct MqttLiteProducer {
    broker: Arc<Broker>,
    topic: String,
    retain: bool,
}

impl Producer for MqttLiteProducer {
    fn send(&self, exchange: &Exchange) -> Result<(), EndpointError> {
        self.broker
            .publish(&self.topic, &exchange.body.render(), self.retain);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fan_out_exactly_once_per_subscriber() {
        let broker = Broker::new();
        let hits = Arc::new(AtomicU64::new(0));
        for _ in 0..2 {
            let h = hits.clone();
            broker.subscribe(
                "latLong",
                false,
                Arc::new(move |_, _| {
                    h.fetch_add(1, Ordering::SeqCst);
                }),
            );
        }
        assert_eq!(broker.publish("latLong", "pos(1.0,2.0)", false), 2);
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn publish_without_subscribers_is_noop() {
        let broker = Broker::new();
        assert_eq!(broker.publish("latLong", "x", false), 0);
        let hits = Arc::new(AtomicU64::new(0));
        let h = hits.clone();
        broker.subscribe(
            "latLong",
            true,
            Arc::new(move |_, _| {
                h.fetch_add(1, Ordering::SeqCst);
            }),
        );
        assert_eq!(hits.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn retained_payload_on_request() {
        let broker = Broker::new();
        broker.publish("t", "last", true);
        let got = Arc::new(Mutex::new(Vec::new()));
        let g = got.clone();
        let id = broker.subscribe(
            "t",
            true,
            Arc::new(move |_, p| g.lock().unwrap().push(p.to_string())),
        );
        assert_eq!(got.lock().unwrap().as_slice(), &["last".to_string()]);
        broker.unsubscribe(id);
        assert_eq!(broker.subscriber_count("t"), 0);
    }
}
