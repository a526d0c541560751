//! `jason:<agent>`: bridges ACL messaging and routes.
//!
//! As a consumer, `jason:<name>` registers a dummy agent called `<name>`;
//! messages sent to it become exchanges with headers `performative`,
//! `sender`, `receiver` and `msgId` and the message content as body. As a
//! producer, `jason:<agent>` turns each exchange back into an ACL message for
//! `<agent>` (params: `performative`, default `tell`; `sender`, default the
//! route's consumer endpoint name).

use std::sync::Arc;

use crate::acl::{AclError, AclMessage, AgentRegistry, DummyInbox, Performative};
use crate::bus::{Component, Consumer, EndpointError, ExchangeSink, Producer, RouteContext};
use crate::exchange::{Exchange, Headers};
use crate::term::Term;
use crate::uri::EndpointUri;

pub const HEADER_PERFORMATIVE: &str = "performative";
pub const HEADER_SENDER: &str = "sender";
pub const HEADER_RECEIVER: &str = "receiver";
pub const HEADER_MSG_ID: &str = "msgId";
pub const HEADER_IN_REPLY_TO: &str = "inReplyTo";

#[derive(Debug, Clone)]
pub struct JasonComponent {
    registry: Arc<AgentRegistry>,
}

impl JasonComponent {
    pub fn new(registry: Arc<AgentRegistry>) -> JasonComponent {
        JasonComponent { registry }
    }
}

/// Exchange headers carrying an ACL message's envelope.
pub fn message_headers(message: &AclMessage) -> Headers {
    let mut h = Headers::new();
    h.insert(
        HEADER_PERFORMATIVE.into(),
        Term::atom(message.performative.as_str()),
    );
    h.insert(HEADER_SENDER.into(), Term::atom(message.sender.clone()));
    h.insert(HEADER_RECEIVER.into(), Term::atom(message.receiver.clone()));
    h.insert(HEADER_MSG_ID.into(), Term::string(message.msg_id.clone()));
    if let Some(r) = &message.in_reply_to {
        h.insert(HEADER_IN_REPLY_TO.into(), Term::string(r.clone()));
    }
    h
}

fn agent_name(uri: &EndpointUri) -> Result<String, EndpointError> {
    if uri.path().is_empty() {
        return Err(EndpointError::InvalidParam(
            "jason endpoint needs an agent name".into(),
        ));
    }
    Ok(uri.path().to_string())
}

impl Component for JasonComponent {
    fn create_consumer(
        &self,
        uri: &EndpointUri,
        ctx: &RouteContext,
    ) -> Result<Box<dyn Consumer>, EndpointError> {
        Ok(Box::new(JasonConsumer {
            dummy: agent_name(uri)?,
            route_id: ctx.route_id.clone(),
            registry: self.registry.clone(),
            registered: false,
        }))
    }

    fn create_producer(
        &self,
        uri: &EndpointUri,
        ctx: &RouteContext,
    ) -> Result<Box<dyn Producer>, EndpointError> {
        let default_performative = match uri.param("performative") {
            None => Performative::Tell,
            Some(p) => p.parse().map_err(|e: crate::acl::UnknownPerformative| {
                EndpointError::InvalidParam(e.to_string())
            })?,
        };
        let sender_alias = match uri.param("sender") {
            Some(s) if !s.is_empty() => s.to_string(),
            _ if !ctx.from.path().is_empty() => ctx.from.path().to_string(),
            _ => ctx.route_id.clone(),
        };
        Ok(Box::new(JasonProducer {
            target: agent_name(uri)?,
            default_performative,
            sender_alias,
            registry: self.registry.clone(),
        }))
    }
}

struct JasonConsumer {
    dummy: String,
    route_id: String,
    registry: Arc<AgentRegistry>,
    registered: bool,
}

impl Consumer for JasonConsumer {
    fn start(&mut self, sink: ExchangeSink) -> Result<(), EndpointError> {
        let inbox: DummyInbox =
            Arc::new(move |m: &AclMessage| sink.submit(message_headers(m), m.content.clone()));
        self.registry
            .register_dummy(&self.dummy, &self.route_id, inbox)
            .map_err(|_| EndpointError::DuplicateName(self.dummy.clone()))?;
        self.registered = true;
        Ok(())
    }

    fn stop(&mut self) {
        if self.registered {
            self.registry.unregister_dummy(&self.dummy, &self.route_id);
            self.registered = false;
        }
    }
}

struct JasonProducer {
    target: String,
    default_performative: Performative,
    sender_alias: String,
    registry: Arc<AgentRegistry>,
}

impl JasonProducer {
    fn message(&self, exchange: &Exchange) -> Result<AclMessage, EndpointError> {
        let performative = match exchange.header(HEADER_PERFORMATIVE) {
            None => self.default_performative,
            Some(t) => t
                .as_text()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| EndpointError::InvalidParam(format!("performative header {t}")))?,
        };
        let sender = exchange
            .header(HEADER_SENDER)
            .and_then(Term::as_text)
            .filter(|s| !s.is_empty())
            .unwrap_or(&self.sender_alias)
            .to_string();
        let mut message = self.registry.compose(
            sender,
            self.target.clone(),
            performative,
            exchange.body.clone(),
        );
        message.in_reply_to = exchange
            .header(HEADER_IN_REPLY_TO)
            .and_then(Term::as_text)
            .map(str::to_string);
        Ok(message)
    }
}

impl Producer for JasonProducer {
    fn send(&self, exchange: &Exchange) -> Result<(), EndpointError> {
        let message = self.message(exchange)?;
        match self.registry.send_message(message) {
            Ok(_) => Ok(()),
            Err(AclError::UnknownReceiver(name)) => Err(EndpointError::UnknownReceiver(name)),
            Err(AclError::RouteUnavailable { error, .. }) => Err(error),
            Err(other) => Err(EndpointError::Protocol(other.to_string())),
        }
    }
}
