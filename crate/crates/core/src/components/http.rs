//! A small HTTP/1.1 subset: request line, `Host` and `Content-Length`
//! headers, one request per connection, no chunking, no TLS.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

const MAX_BODY: usize = 8 * 1024 * 1024;
const IO_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed message: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub body: String,
}

impl Response {
    pub fn ok(body: impl Into<String>) -> Response {
        Response {
            status: 200,
            body: body.into(),
        }
    }

    pub fn status(status: u16) -> Response {
        Response {
            status,
            body: String::new(),
        }
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Unknown",
    }
}

fn read_head<R: BufRead>(reader: &mut R) -> Result<(String, Vec<(String, String)>), HttpError> {
    let mut start = String::new();
    if reader.read_line(&mut start)? == 0 {
        return Err(HttpError::Malformed(
            "connection closed before start line".into(),
        ));
    }
    let mut headers = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(HttpError::Malformed(
                "connection closed inside headers".into(),
            ));
        }
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            break;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| HttpError::Malformed(format!("bad header line '{line}'")))?;
        headers.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok((start.trim_end_matches(['\r', '\n']).to_string(), headers))
}

fn read_body<R: BufRead>(
    reader: &mut R,
    headers: &[(String, String)],
) -> Result<String, HttpError> {
    let len = match headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
    {
        None => 0,
        Some((_, v)) => v
            .parse::<usize>()
            .map_err(|_| HttpError::Malformed(format!("bad Content-Length '{v}'")))?,
    };
    if len > MAX_BODY {
        return Err(HttpError::Malformed("body too large".into()));
    }
    let mut buf = vec![0; len];
    reader.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| HttpError::Malformed("body is not UTF-8".into()))
}

pub fn read_request(stream: &mut TcpStream) -> Result<Request, HttpError> {
    let mut reader = BufReader::new(stream);
    let (start, headers) = read_head(&mut reader)?;
    let mut parts = start.split_whitespace();
    let (method, path, version) = match (parts.next(), parts.next(), parts.next()) {
        (Some(m), Some(p), Some(v)) => (m, p, v),
        _ => return Err(HttpError::Malformed(format!("bad request line '{start}'"))),
    };
    if version != "HTTP/1.1" && version != "HTTP/1.0" {
        return Err(HttpError::Malformed(format!(
            "unsupported version '{version}'"
        )));
    }
    let body = read_body(&mut reader, &headers)?;
    Ok(Request {
        method: method.to_string(),
        path: path.to_string(),
        headers,
        body,
    })
}

pub fn write_response(stream: &mut TcpStream, response: &Response) -> Result<(), HttpError> {
    let head = format!(
        "HTTP/1.1 {} {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        response.status,
        reason(response.status),
        response.body.len()
    );
    stream.write_all(head.as_bytes())?;
    stream.write_all(response.body.as_bytes())?;
    stream.flush()?;
    Ok(())
}

/// Sends one request to `authority` (`host:port`) and reads the response.
pub fn send_request(
    authority: &str,
    method: &str,
    path: &str,
    body: &str,
) -> Result<Response, HttpError> {
    let addr = authority
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| HttpError::Malformed(format!("cannot resolve {authority}")))?;
    let mut stream = TcpStream::connect_timeout(&addr, IO_TIMEOUT)?;
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    let head = format!(
        "{method} {path} HTTP/1.1\r\nHost: {authority}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    stream.write_all(head.as_bytes())?;
    stream.write_all(body.as_bytes())?;
    stream.flush()?;
    let mut reader = BufReader::new(&mut stream);
    let (status_line, headers) = read_head(&mut reader)?;
    let status = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse::<u16>().ok())
        .ok_or_else(|| HttpError::Malformed(format!("bad status line '{status_line}'")))?;
    let body = read_body(&mut reader, &headers)?;
    Ok(Response { status, body })
}

pub type Handler = Arc<dyn Fn(Request) -> Response + Send + Sync>;

/// A listener answering each connection's single request with `handler`.
pub struct HttpServer {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl HttpServer {
    pub fn bind(address: &str, handler: Handler) -> std::io::Result<HttpServer> {
        let listener = TcpListener::bind(address)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let acceptor = std::thread::Builder::new()
            .name(format!("http-{local_addr}"))
            .spawn(move || {
                while !flag.load(Ordering::Acquire) {
                    match listener.accept() {
                        Ok((mut stream, _)) => {
                            let handler = handler.clone();
                            std::thread::spawn(move || {
                                let _ = stream.set_nonblocking(false);
                                let _ = stream.set_read_timeout(Some(IO_TIMEOUT));
                                let response = match read_request(&mut stream) {
                                    Ok(req) => handler(req),
                                    Err(_) => Response::status(400),
                                };
                                let _ = write_response(&mut stream, &response);
                            });
                        }
                        Err(e) if e.kind() == ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(5))
                        }
                        Err(_) => std::thread::sleep(Duration::from_millis(5)),
                    }
                }
            })?;
        Ok(HttpServer {
            local_addr,
            stop,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Read;

    #[test]
    fn request_response_round_trip() {
        let server = HttpServer::bind(
            "127.0.0.1:0",
            Arc::new(|req: Request| {
                let host = req
                    .headers
                    .iter()
                    .find(|(k, _)| k == "Host")
                    .map(|(_, v)| v.clone())
                    .unwrap_or_default();
                Response::ok(format!(
                    "{} {} {} {}",
                    req.method,
                    req.path,
                    req.body,
                    !host.is_empty()
                ))
            }),
        )
        .unwrap();
        let addr = server.local_addr().to_string();
        let resp = send_request(&addr, "POST", "/checkout", "order(1)").unwrap();
        assert_eq!(resp.status, 200);
        assert_eq!(resp.body, "POST /checkout order(1) true");
    }

    #[test]
    fn garbage_gets_400() {
        let server = HttpServer::bind("127.0.0.1:0", Arc::new(|_| Response::ok(""))).unwrap();
        let mut s = TcpStream::connect(server.local_addr()).unwrap();
        s.write_all(b"NONSENSE\r\n\r\n").unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).unwrap();
        assert!(out.starts_with("HTTP/1.1 400"), "{out}");
    }
}
