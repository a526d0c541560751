//! `httplite:<host:port/path>?method=GET|POST[&replyTo=direct:<name>]`.
//!
//! The consumer listens on `host:port` and turns each request for `path` into
//! an exchange, answering `200` with an empty body. The producer sends the
//! rendered body; when `replyTo` names a direct endpoint the response body is
//! run through that endpoint's route as a new exchange, otherwise it is
//! discarded.

use std::sync::Arc;

use super::direct::DirectRegistry;
use super::http::{self, HttpServer, Request, Response};
use crate::bus::{Component, Consumer, EndpointError, ExchangeSink, Producer, RouteContext};
use crate::exchange::{Exchange, Headers};
use crate::term::Term;
use crate::uri::{parse_uri, EndpointUri};

#[derive(Debug, Clone)]
pub struct HttpLiteComponent {
    direct: Arc<DirectRegistry>,
}

impl HttpLiteComponent {
    pub fn new(direct: Arc<DirectRegistry>) -> HttpLiteComponent {
        HttpLiteComponent { direct }
    }
}

fn split_target(uri: &EndpointUri) -> Result<(String, String), EndpointError> {
    let target = uri.path();
    let (authority, path) = match target.find('/') {
        Some(i) => (&target[..i], &target[i..]),
        None => (target, "/"),
    };
    if authority.is_empty() || !authority.contains(':') {
        return Err(EndpointError::InvalidParam(format!(
            "httplite needs host:port/path, got '{target}'"
        )));
    }
    Ok((authority.to_string(), path.to_string()))
}

fn method(uri: &EndpointUri) -> Result<String, EndpointError> {
    match uri.param("method").unwrap_or("POST") {
        m @ ("GET" | "POST") => Ok(m.to_string()),
        other => Err(EndpointError::InvalidParam(format!("method={other}"))),
    }
}

impl Component for HttpLiteComponent {
    fn create_consumer(
        &self,
        uri: &EndpointUri,
        _ctx: &RouteContext,
    ) -> Result<Box<dyn Consumer>, EndpointError> {
        let (authority, path) = split_target(uri)?;
        let method = uri.param("method").map(|_| method(uri)).transpose()?;
        Ok(Box::new(HttpLiteConsumer {
            authority,
            path,
            method,
            server: None,
        }))
    }

    fn create_producer(
        &self,
        uri: &EndpointUri,
        _ctx: &RouteContext,
    ) -> Result<Box<dyn Producer>, EndpointError> {
        let (authority, path) = split_target(uri)?;
        let reply_to = match uri.param("replyTo") {
            None => None,
            Some(text) => {
                let target = parse_uri(text)
                    .map_err(|e| EndpointError::InvalidParam(format!("replyTo: {e}")))?;
                if target.scheme() != "direct" || target.path().is_empty() {
                    return Err(EndpointError::InvalidParam(format!(
                        "replyTo must name a direct endpoint, got '{text}'"
                    )));
                }
                Some(target.path().to_string())
            }
        };
        Ok(Box::new(HttpLiteProducer {
            authority,
            path,
            method: method(uri)?,
            reply_to,
            direct: self.direct.clone(),
        }))
    }
}

struct HttpLiteConsumer {
    authority: String,
    path: String,
    method: Option<String>,
    server: Option<HttpServer>,
}

impl Consumer for HttpLiteConsumer {
    fn start(&mut self, sink: ExchangeSink) -> Result<(), EndpointError> {
        let path = self.path.clone();
        let method = self.method.clone();
        let handler = Arc::new(move |req: Request| {
            if req.path != path {
                return Response::status(404);
            }
            if method.as_deref().is_some_and(|m| m != req.method) {
                return Response::status(405);
            }
            let mut headers = Headers::new();
            headers.insert("HttpMethod".into(), Term::string(req.method.clone()));
            headers.insert("HttpPath".into(), Term::string(req.path.clone()));
            match sink.submit(headers, Term::parse_or_string(&req.body)) {
                Ok(_) => Response::ok(""),
                Err(_) => Response::status(503),
            }
        });
        let server =
            HttpServer::bind(&self.authority, handler).map_err(|e| EndpointError::Bind {
                address: self.authority.clone(),
                reason: e.to_string(),
            })?;
        self.server = Some(server);
        Ok(())
    }

    fn stop(&mut self) {
        if let Some(mut s) = self.server.take() {
            s.shutdown();
        }
    }
}

struct HttpLiteProducer {
    authority: String,
    path: String,
    method: String,
    reply_to: Option<String>,
    direct: Arc<DirectRegistry>,
}

impl Producer for HttpLiteProducer {
    fn send(&self, exchange: &Exchange) -> Result<(), EndpointError> {
        let response = http::send_request(
            &self.authority,
            &self.method,
            &self.path,
            &exchange.body.render(),
        )
        .map_err(|e| EndpointError::Io(e.to_string()))?;
        if !(200..300).contains(&response.status) {
            return Err(EndpointError::Protocol(format!(
                "{} {}{} answered {}",
                self.method, self.authority, self.path, response.status
            )));
        }
        if let Some(reply_to) = &self.reply_to {
            let mut headers = Headers::new();
            headers.insert(
                "HttpStatus".into(),
                Term::number(f64::from(response.status)),
            );
            self.direct
                .send(reply_to, headers, Term::parse_or_string(&response.body))?;
        }
        Ok(())
    }
}
