//! Endpoint components: the agent (`jason`) and artifact (`artifact`) bridges,
//! plus the protocol components they are routed to and from.

pub mod artifact;
pub mod chatstub;
pub mod direct;
pub mod http;
pub mod httplite;
pub mod jason;
pub mod mqttlite;
pub mod tcpline;
pub mod timer;

use crate::bus::EndpointError;
use crate::uri::EndpointUri;

pub use artifact::ArtifactComponent;
pub use chatstub::{ChatStubComponent, TranscriptRow, TranscriptStore};
pub use direct::{DirectComponent, DirectRegistry};
pub use httplite::HttpLiteComponent;
pub use jason::JasonComponent;
pub use mqttlite::{Broker, BrokerRegistry, MqttLiteComponent};
pub use tcpline::TcpLineComponent;
pub use timer::TimerComponent;

pub(crate) fn required_param<'a>(
    uri: &'a EndpointUri,
    key: &str,
) -> Result<&'a str, EndpointError> {
    match uri.param(key) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(EndpointError::MissingParam(key.to_string())),
    }
}

pub(crate) fn io_error(e: std::io::Error) -> EndpointError {
    EndpointError::Io(e.to_string())
}

/// Asks the OS for a currently unused local TCP port.
pub fn free_local_port() -> std::io::Result<u16> {
    let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
    Ok(listener.local_addr()?.port())
}
