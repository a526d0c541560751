//! Integration bus for multi-agent systems.
//!
//! External entities join a MAS in one of two ways. Autonomous ones are seen
//! by agents as ordinary agents: messages to their dummy counterparts leave
//! through `jason:` routes and inbound traffic arrives as ACL messages.
//! Non-autonomous ones are artifacts in the environment: `artifact:` routes
//! turn inbound traffic into operation requests and carry what artifacts send
//! out to protocol endpoints.

pub mod acl;
pub mod agent;
pub mod bus;
pub mod clock;
pub mod components;
pub mod config;
pub mod environment;
pub mod exchange;
pub mod notify;
pub mod platform;
pub mod route;
pub mod scenario;
pub mod term;
pub mod uri;

pub use acl::{AclError, AclMessage, AgentRegistry, DeliveryOutcome, Performative};
pub use agent::{AgentBehavior, AgentContext, Effect, Outgoing};
pub use bus::{
    Bus, BusConfig, BusError, Component, Consumer, DeadLetter, EndpointError, ExchangeSink,
    Producer,
};
pub use clock::Clock;
pub use config::{
    load_route_file, parse_route_file, parse_routes_xml, render_routes_xml, AliasTable,
    ConfigError, RouteBuilder, RouteFile,
};
pub use environment::{
    ArtifactTemplate, EnvError, Environment, OpResult, OperationRequest, Origin, Percept,
    PerceptKind,
};
pub use exchange::{Exchange, ExchangeId, Headers};
pub use platform::{AgentEvent, AgentEventKind, Platform, PlatformConfig, PlatformError};
pub use route::{ProcessorSpec, RouteDefinition};
pub use scenario::{
    assert_report, run_scenario, ScenarioConfig, ScenarioError, ScenarioReport, Stage, Violation,
};
pub use term::{parse_term, render_term, Term};
pub use uri::{format_uri, parse_uri, EndpointUri};
