//! `tcpline:<host:port>`: UTF-8 lines terminated by `\n`.
//!
//! The consumer listens and emits one exchange per received line; the producer
//! connects and writes the rendered body followed by a newline.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::io_error;
use crate::bus::{Component, Consumer, EndpointError, ExchangeSink, Producer, RouteContext};
use crate::exchange::{Exchange, Headers};
use crate::term::Term;
use crate::uri::EndpointUri;

const POLL: Duration = Duration::from_millis(10);
const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, Default)]
pub struct TcpLineComponent;

fn address(uri: &EndpointUri) -> Result<String, EndpointError> {
    if uri.path().is_empty() || !uri.path().contains(':') {
        return Err(EndpointError::InvalidParam(format!(
            "tcpline needs host:port, got '{}'",
            uri.path()
        )));
    }
    Ok(uri.path().to_string())
}

impl Component for TcpLineComponent {
    fn create_consumer(
        &self,
        uri: &EndpointUri,
        _ctx: &RouteContext,
    ) -> Result<Box<dyn Consumer>, EndpointError> {
        Ok(Box::new(TcpLineConsumer {
            address: address(uri)?,
            stop: Arc::new(AtomicBool::new(false)),
            acceptor: None,
        }))
    }

    fn create_producer(
        &self,
        uri: &EndpointUri,
        _ctx: &RouteContext,
    ) -> Result<Box<dyn Producer>, EndpointError> {
        Ok(Box::new(TcpLineProducer {
            address: address(uri)?,
        }))
    }
}

struct TcpLineConsumer {
    address: String,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

fn read_lines(stream: TcpStream, sink: ExchangeSink, stop: Arc<AtomicBool>) {
    let _ = stream.set_read_timeout(Some(POLL * 5));
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        match reader.read_line(&mut line) {
            Ok(0) => return,
            Ok(_) if line.ends_with('\n') => {
                let text = line.trim_end_matches('\n').trim_end_matches('\r');
                let _ = sink.submit(Headers::new(), Term::parse_or_string(text));
                line.clear();
            }
            Ok(_) => {}
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if stop.load(Ordering::Acquire) {
                    return;
                }
            }
            Err(_) => return,
        }
    }
}

impl Consumer for TcpLineConsumer {
    fn start(&mut self, sink: ExchangeSink) -> Result<(), EndpointError> {
        let listener = TcpListener::bind(&self.address).map_err(|e| EndpointError::Bind {
            address: self.address.clone(),
            reason: e.to_string(),
        })?;
        listener.set_nonblocking(true).map_err(io_error)?;
        let stop = self.stop.clone();
        let handle = std::thread::Builder::new()
            .name(format!("tcpline-{}", self.address))
            .spawn(move || {
                while !stop.load(Ordering::Acquire) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let _ = stream.set_nonblocking(false);
                            let (sink, stop) = (sink.clone(), stop.clone());
                            std::thread::spawn(move || read_lines(stream, sink, stop));
                        }
                        Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
                        Err(_) => std::thread::sleep(POLL),
                    }
                }
            })
            .map_err(io_error)?;
        self.acceptor = Some(handle);
        Ok(())
    }

    fn stop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

struct TcpLineProducer {
    address: String,
}

/// Writes one line to a `host:port` peer.
pub fn send_line(address: &str, text: &str) -> Result<(), EndpointError> {
    let addr = address
        .to_socket_addrs()
        .map_err(io_error)?
        .next()
        .ok_or_else(|| EndpointError::Io(format!("cannot resolve {address}")))?;
    let mut stream = TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT).map_err(io_error)?;
    stream.write_all(text.as_bytes()).map_err(io_error)?;
    stream.write_all(b"\n").map_err(io_error)?;
    stream.flush().map_err(io_error)
}

impl Producer for TcpLineProducer {
    fn send(&self, exchange: &Exchange) -> Result<(), EndpointError> {
        send_line(&self.address, &exchange.body.render())
    }
}
