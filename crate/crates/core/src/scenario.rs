//! The Industry 4.0 delivery scenario.
//!
//! Five stages run over one platform:
//!
//! 1. a PLC stub reports `done` over `tcpline`; a route turns it into an
//!    operation on the `PLC` artifact, which `production_agent` observes;
//! 2. `production_agent` checks the order out through the `ERP` artifact,
//!    whose outbound request reaches an HTTP ERP stub and whose reply comes
//!    back as a `confirm` operation;
//! 3. `distribution_agent` asks the `Quotes` artifact for freight quotes
//!    (fetched over HTTP), hires the cheapest supplier by telling its dummy
//!    agent, and asks `delivery_agent` to track the delivery;
//! 4. a tracking stub publishes positions on the `latLong` topic; a route
//!    feeds them to `giveDistance` on `TrackedArtifact`;
//! 5. once the artifact signals `near_destination`, `delivery_agent` tells
//!    `DummyCustomerAgent`, whose route posts to the customer chat.

use std::collections::BTreeMap;
use std::fmt;
use std::net::TcpStream;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acl::{AclMessage, Performative};
use crate::agent::{AgentBehavior, AgentContext, Effect};
use crate::bus::DeadLetter;
use crate::clock::Clock;
use crate::components::http::{HttpServer, Request, Response};
use crate::components::{free_local_port, TranscriptRow};
use crate::config::{constant, parse_route_file, AliasTable, RouteBuilder};
use crate::environment::{
    tracker_template, ArtifactTemplate, OpResult, Percept, PerceptKind, DEFAULT_WORKSPACE,
};
use crate::exchange::Headers;
use crate::platform::{AgentEventKind, Platform, PlatformConfig, PlatformError};
use crate::route::RouteDefinition;
use crate::term::Term;

pub const PRODUCTION_AGENT: &str = "production_agent";
pub const DISTRIBUTION_AGENT: &str = "distribution_agent";
pub const DELIVERY_AGENT: &str = "delivery_agent";
pub const CUSTOMER_DUMMY: &str = "DummyCustomerAgent";
pub const TRACKED_ARTIFACT: &str = "TrackedArtifact";
pub const TRACKING_HOST: &str = "tcp://broker";
pub const TRACKING_TOPIC: &str = "latLong";

const PLC_ARTIFACT: &str = "PLC";
const ERP_ARTIFACT: &str = "ERP";
const QUOTES_ARTIFACT: &str = "Quotes";
const PRODUCT: &str = "widget";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplierQuote {
    pub name: String,
    pub price: f64,
}

fn default_chat_id() -> String {
    "-364531".into()
}

fn default_bot_token() -> String {
    "sometoken".into()
}

fn default_stage_timeout_ms() -> u64 {
    10_000
}

fn default_tick_period_ms() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub supplier_quotes: Vec<SupplierQuote>,
    /// `(lat, lon)` positions published in order.
    pub track_waypoints: Vec<(f64, f64)>,
    pub destination: (f64, f64),
    pub near_threshold_km: f64,
    /// Time each stub interaction and each waypoint takes.
    #[serde(default = "default_tick_period_ms")]
    pub tick_period_ms: u64,
    #[serde(default = "default_chat_id")]
    pub customer_chat_id: String,
    #[serde(default = "default_bot_token")]
    pub bot_token: String,
    /// Wall-clock budget for each stage.
    #[serde(default = "default_stage_timeout_ms")]
    pub stage_timeout_ms: u64,
}

impl Default for ScenarioConfig {
    fn default() -> ScenarioConfig {
        ScenarioConfig {
            seed: 7,
            supplier_quotes: vec![
                SupplierQuote {
                    name: "alpha".into(),
                    price: 10.0,
                },
                SupplierQuote {
                    name: "beta".into(),
                    price: 7.5,
                },
                SupplierQuote {
                    name: "gamma".into(),
                    price: 9.0,
                },
            ],
            track_waypoints: vec![
                (-27.60, 48.50),
                (-27.595, 48.53),
                (-27.592, 48.545),
                (-27.5905, 48.5495),
            ],
            destination: (-27.59, 48.55),
            near_threshold_km: 0.5,
            tick_period_ms: default_tick_period_ms(),
            customer_chat_id: default_chat_id(),
            bot_token: default_bot_token(),
            stage_timeout_ms: default_stage_timeout_ms(),
        }
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn valid_position((lat, lon): (f64, f64)) -> bool {
    (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<ScenarioConfig, ScenarioError> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| ScenarioError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::InvalidConfig(m));
        if self.supplier_quotes.len() < 2 {
            return bad(format!(
                "at least 2 suppliers are required, got {}",
                self.supplier_quotes.len()
            ));
        }
        for (i, q) in self.supplier_quotes.iter().enumerate() {
            if !valid_name(&q.name) {
                return bad(format!("supplier name '{}' must be [A-Za-z0-9_-]+", q.name));
            }
            if self.supplier_quotes[..i].iter().any(|o| o.name == q.name) {
                return bad(format!("supplier '{}' is listed twice", q.name));
            }
            if !q.price.is_finite() || q.price < 0.0 {
                return bad(format!(
                    "supplier '{}' has invalid price {}",
                    q.name, q.price
                ));
            }
        }
        if self.track_waypoints.len() < 2 {
            return bad(format!(
                "at least 2 waypoints are required, got {}",
                self.track_waypoints.len()
            ));
        }
        if let Some(p) = self.track_waypoints.iter().find(|p| !valid_position(**p)) {
            return bad(format!("waypoint ({}, {}) is out of range", p.0, p.1));
        }
        if !valid_position(self.destination) {
            return bad("destination is out of range".into());
        }
        if !(self.near_threshold_km.is_finite() && self.near_threshold_km > 0.0) {
            return bad("near_threshold_km must be positive".into());
        }
        if self.customer_chat_id.is_empty() || !valid_name(&self.bot_token) {
            return bad("customer_chat_id and bot_token must be non-empty".into());
        }
        if self.stage_timeout_ms == 0 {
            return bad("stage_timeout_ms must be positive".into());
        }
        Ok(())
    }

    /// Strict minimum price; ties go to the lexicographically smallest name.
    pub fn expected_winner(&self) -> Option<&SupplierQuote> {
        self.supplier_quotes.iter().min_by(|a, b| {
            a.price
                .partial_cmp(&b.price)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.name.cmp(&b.name))
        })
    }

    fn order_id(&self) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        format!("ORD-{:06}", rng.gen_range(0..1_000_000u32))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    I,
    Ii,
    Iii,
    Iv,
    V,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::I, Stage::Ii, Stage::Iii, Stage::Iv, Stage::V];

    pub fn label(self) -> &'static str {
        match self {
            Stage::I => "i",
            Stage::Ii => "ii",
            Stage::Iii => "iii",
            Stage::Iv => "iv",
            Stage::V => "v",
        }
    }

    fn from_label(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.label() == s)
    }

    fn marker(self) -> Term {
        Term::compound("stage", vec![Term::atom(self.label())])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStamp {
    /// Platform clock time in milliseconds.
    pub clock_ms: u64,
    /// Position in the platform's event log.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErpCheckoutRecord {
    pub order_id: String,
    pub request: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub run_id: String,
    pub seed: u64,
    pub simulated_time: bool,
    pub order_id: String,
    pub stage_timestamps: BTreeMap<Stage, StageStamp>,
    pub winner_supplier: Option<String>,
    pub hire_message: Option<AclMessage>,
    pub erp_checkout_record: Option<ErpCheckoutRecord>,
    pub distances_km: Vec<f64>,
    pub chat_transcript: Vec<TranscriptRow>,
    pub messages: Vec<AclMessage>,
    pub dead_letters: Vec<DeadLetter>,
    pub delivery_order_ok: bool,
    /// Wall-clock milliseconds per completed stage, from the start of the run.
    /// The only field that differs between otherwise identical runs.
    pub wall_ms: BTreeMap<Stage, u64>,
}

impl ScenarioReport {
    /// The report without wall-clock measurements.
    pub fn without_wall_clock(&self) -> ScenarioReport {
        ScenarioReport {
            wall_ms: BTreeMap::new(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("scenario setup failed: {0}")]
    Setup(String),
    #[error("stage {stage} did not complete within {elapsed_ms} ms")]
    StageTimeout {
        stage: Stage,
        elapsed_ms: u64,
        partial: Box<ScenarioReport>,
    },
}

impl From<crate::bus::BusError> for ScenarioError {
    fn from(e: crate::bus::BusError) -> ScenarioError {
        ScenarioError::Setup(e.to_string())
    }
}

impl From<PlatformError> for ScenarioError {
    fn from(e: PlatformError) -> ScenarioError {
        ScenarioError::Setup(e.to_string())
    }
}

fn stage_done(stage: Stage) -> Effect {
    Effect::log(stage.marker())
}

fn property_change<'p>(p: &'p Percept, artifact: &str, property: &str) -> Option<&'p Term> {
    match &p.kind {
        PerceptKind::PropertyChanged {
            property: name,
            new,
            ..
        } if p.artifact == artifact && name == property => Some(new),
        _ => None,
    }
}

struct ProductionAgent {
    order_id: String,
    checked_out: bool,
    confirmed: bool,
}

impl AgentBehavior for ProductionAgent {
    fn init(&mut self, _ctx: &AgentContext<'_>) -> Vec<Effect> {
        vec![
            Effect::focus(DEFAULT_WORKSPACE, PLC_ARTIFACT),
            Effect::focus(DEFAULT_WORKSPACE, ERP_ARTIFACT),
        ]
    }

    fn on_message(&mut self, _ctx: &AgentContext<'_>, _message: &AclMessage) -> Vec<Effect> {
        Vec::new()
    }

    fn on_percept(&mut self, _ctx: &AgentContext<'_>, p: &Percept) -> Vec<Effect> {
        if let Some(state) = property_change(p, PLC_ARTIFACT, "product") {
            if !self.checked_out && *state == Term::atom("done") {
                self.checked_out = true;
                return vec![
                    stage_done(Stage::I),
                    Effect::op(
                        DEFAULT_WORKSPACE,
                        ERP_ARTIFACT,
                        "checkout",
                        vec![Term::string(self.order_id.clone()), Term::atom(PRODUCT)],
                    ),
                ];
            }
        }
        if let Some(status) = property_change(p, ERP_ARTIFACT, "erpStatus") {
            if self.checked_out
                && !self.confirmed
                && status.as_struct().is_some_and(|(f, _)| f == "confirmed")
            {
                self.confirmed = true;
                return vec![
                    stage_done(Stage::Ii),
                    Effect::achieve(
                        DISTRIBUTION_AGENT,
                        Term::compound("deliver", vec![Term::string(self.order_id.clone())]),
                    ),
                ];
            }
        }
        Vec::new()
    }
}

fn parse_quotes(list: &Term) -> Vec<(String, f64)> {
    let Term::List(items) = list else {
        return Vec::new();
    };
    items
        .iter()
        .filter_map(|q| match q.as_struct() {
            Some(("quote", [name, price])) => {
                Some((name.as_text()?.to_string(), price.as_number()?))
            }
            _ => None,
        })
        .collect()
}

struct DistributionAgent {
    order_id: Option<String>,
    hired: bool,
}

impl AgentBehavior for DistributionAgent {
    fn on_message(&mut self, _ctx: &AgentContext<'_>, m: &AclMessage) -> Vec<Effect> {
        match (m.performative, m.content.as_struct()) {
            (Performative::Achieve, Some(("deliver", [order]))) if self.order_id.is_none() => {
                self.order_id = order.as_text().map(str::to_string);
                vec![
                    Effect::focus(DEFAULT_WORKSPACE, QUOTES_ARTIFACT),
                    Effect::op(
                        DEFAULT_WORKSPACE,
                        QUOTES_ARTIFACT,
                        "requestQuotes",
                        vec![order.clone()],
                    ),
                ]
            }
            _ => Vec::new(),
        }
    }

    fn on_percept(&mut self, _ctx: &AgentContext<'_>, p: &Percept) -> Vec<Effect> {
        let Some(list) = property_change(p, QUOTES_ARTIFACT, "quotes") else {
            return Vec::new();
        };
        let quotes = parse_quotes(list);
        let (Some(order), false) = (self.order_id.clone(), self.hired) else {
            return Vec::new();
        };
        let Some((winner, price)) = quotes.into_iter().min_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        }) else {
            return Vec::new();
        };
        self.hired = true;
        vec![
            Effect::tell(
                supplier_dummy(&winner),
                Term::compound(
                    "hire",
                    vec![
                        Term::string(order.clone()),
                        Term::atom(PRODUCT),
                        Term::number(price),
                    ],
                ),
            ),
            stage_done(Stage::Iii),
            Effect::achieve(
                DELIVERY_AGENT,
                Term::compound("track", vec![Term::string(order), Term::string(winner)]),
            ),
        ]
    }
}

struct DeliveryAgent {
    order_id: Option<String>,
    tracking: bool,
    notified: bool,
}

impl AgentBehavior for DeliveryAgent {
    fn on_message(&mut self, _ctx: &AgentContext<'_>, m: &AclMessage) -> Vec<Effect> {
        match (m.performative, m.content.as_struct()) {
            (Performative::Achieve, Some(("track", [order, _supplier])))
                if self.order_id.is_none() =>
            {
                self.order_id = order.as_text().map(str::to_string);
                vec![Effect::focus(DEFAULT_WORKSPACE, TRACKED_ARTIFACT)]
            }
            _ => Vec::new(),
        }
    }

    fn on_percept(&mut self, _ctx: &AgentContext<'_>, p: &Percept) -> Vec<Effect> {
        if p.artifact != TRACKED_ARTIFACT {
            return Vec::new();
        }
        match &p.kind {
            PerceptKind::PropertyChanged { property, new, .. } if property == "distanceKm" => {
                let mut out = Vec::new();
                if !self.tracking {
                    self.tracking = true;
                    out.push(stage_done(Stage::Iv));
                }
                out.push(Effect::log(Term::compound("distance", vec![new.clone()])));
                out
            }
            PerceptKind::Signal { label, payload }
                if label == "near_destination" && !self.notified =>
            {
                self.notified = true;
                let order = self.order_id.clone().unwrap_or_default();
                let km = payload.as_number().unwrap_or(0.0);
                vec![
                    Effect::tell(
                        CUSTOMER_DUMMY,
                        Term::string(format!(
                            "Your order {order} is {km:.3} km from its destination"
                        )),
                    ),
                    stage_done(Stage::V),
                ]
            }
            _ => Vec::new(),
        }
    }
}

pub fn supplier_dummy(name: &str) -> String {
    format!("DummySupplier_{name}")
}

fn plc_template() -> ArtifactTemplate {
    ArtifactTemplate::new()
        .property("product", Term::atom("in_production"))
        .operation("productStatus", |params, _| match params {
            [status] => OpResult::ok().update("product", status.clone()),
            _ => OpResult::failed(Term::atom("expected_one_status")),
        })
}

fn erp_template() -> ArtifactTemplate {
    ArtifactTemplate::new()
        .property("erpStatus", Term::atom("idle"))
        .operation("checkout", |params, _| match params {
            [order, product] => OpResult::ok()
                .update("erpStatus", Term::compound("pending", vec![order.clone()]))
                .send(
                    Headers::new(),
                    Term::compound("checkout", vec![order.clone(), product.clone()]),
                ),
            _ => OpResult::failed(Term::atom("expected_order_and_product")),
        })
        .operation("confirm", |params, _| match params {
            [reply] => OpResult::ok().update("erpStatus", reply.clone()),
            _ => OpResult::failed(Term::atom("expected_one_reply")),
        })
}

fn quotes_template() -> ArtifactTemplate {
    ArtifactTemplate::new()
        .property("quotes", Term::list(vec![]))
        .operation("requestQuotes", |params, _| {
            OpResult::ok().send(Headers::new(), Term::compound("quotes", params.to_vec()))
        })
        .operation("updateQuotes", |params, _| {
            OpResult::ok().update("quotes", Term::list(params.to_vec()))
        })
}

/// Advances simulated time by one tick; a no-op on the wall clock.
fn tick(clock: &Clock, period: Duration) {
    if let Some(sim) = clock.sim() {
        sim.advance(period);
    }
}

struct Stubs {
    plc_address: String,
    erp: HttpServer,
    quotes: HttpServer,
    erp_log: Arc<Mutex<Vec<ErpCheckoutRecord>>>,
}

impl Stubs {
    fn start(cfg: &ScenarioConfig, clock: &Clock) -> Result<Stubs, ScenarioError> {
        let setup = |e: std::io::Error| ScenarioError::Setup(e.to_string());
        let period = Duration::from_millis(cfg.tick_period_ms);
        let plc_address = format!("127.0.0.1:{}", free_local_port().map_err(setup)?);

        let erp_log = Arc::new(Mutex::new(Vec::new()));
        let log = erp_log.clone();
        let erp_clock = clock.clone();
        let erp = HttpServer::bind(
            "127.0.0.1:0",
            Arc::new(move |req: Request| {
                tick(&erp_clock, period);
                let request = Term::parse_or_string(&req.body);
                let order = match request.as_struct() {
                    Some(("checkout", [order, _])) => order.clone(),
                    _ => return Response::status(400),
                };
                let response = Term::compound("confirmed", vec![order.clone()]).render();
                log.lock().unwrap().push(ErpCheckoutRecord {
                    order_id: order.as_text().unwrap_or_default().to_string(),
                    request: req.body,
                    response: response.clone(),
                });
                Response::ok(response)
            }),
        )
        .map_err(setup)?;

        let quotes_body = Term::list(
            cfg.supplier_quotes
                .iter()
                .map(|q| {
                    Term::compound(
                        "quote",
                        vec![Term::string(q.name.clone()), Term::number(q.price)],
                    )
                })
                .collect(),
        )
        .render();
        let quotes_clock = clock.clone();
        let quotes = HttpServer::bind(
            "127.0.0.1:0",
            Arc::new(move |_req: Request| {
                tick(&quotes_clock, period);
                Response::ok(quotes_body.clone())
            }),
        )
        .map_err(setup)?;

        Ok(Stubs {
            plc_address,
            erp,
            quotes,
            erp_log,
        })
    }

    fn shutdown(&mut self) {
        self.erp.shutdown();
        self.quotes.shutdown();
    }
}

/// The literal customer route, with the scheme alias it needs.
const CUSTOMER_ROUTE_XML: &str = r#"<routes>
  <aliases>
    <alias scheme="telegram" component="chatstub"/>
  </aliases>
  <route id="customer">
    <from uri="jason:DummyCustomerAgent"/>
    <to uri="telegram:bots/{token}?chatId={chat}"/>
  </route>
</routes>"#;

fn scenario_routes(
    cfg: &ScenarioConfig,
    stubs: &Stubs,
) -> Result<Vec<RouteDefinition>, ScenarioError> {
    let bad = |e: String| ScenarioError::Setup(e);
    let xml = CUSTOMER_ROUTE_XML
        .replace("{token}", &cfg.bot_token)
        .replace("{chat}", &cfg.customer_chat_id);
    let customer = parse_route_file(&xml).map_err(|e| bad(e.to_string()))?;

    let mut aliases = AliasTable::new();
    aliases
        .insert("mqtt", "mqttlite")
        .map_err(|e| bad(e.to_string()))?;
    aliases.merge(&customer.aliases);

    let tracking = RouteBuilder::new("tracking")
        .from(&format!(
            "mqtt : foo? host={TRACKING_HOST} & subscribeTopicName={TRACKING_TOPIC}"
        ))
        .set_header("ArtifactName", constant(TRACKED_ARTIFACT))
        .set_header("OperationName", constant("giveDistance"))
        .to("artifact : cartago");

    let erp_addr = stubs.erp.local_addr();
    let quotes_addr = stubs.quotes.local_addr();
    let mut builders = vec![
        RouteBuilder::new("plc")
            .from(&format!("tcpline:{}", stubs.plc_address))
            .set_header("ArtifactName", constant(PLC_ARTIFACT))
            .set_header("OperationName", constant("productStatus"))
            .to("artifact:cartago"),
        RouteBuilder::new("erp-checkout")
            .from(&format!("artifact:cartago?artifactName={ERP_ARTIFACT}"))
            .to(&format!(
                "httplite:{erp_addr}/checkout?method=POST&replyTo=direct:erpReply"
            )),
        RouteBuilder::new("erp-reply")
            .from("direct:erpReply")
            .set_header("ArtifactName", constant(ERP_ARTIFACT))
            .set_header("OperationName", constant("confirm"))
            .to("artifact:cartago"),
        RouteBuilder::new("quotes-request")
            .from(&format!("artifact:cartago?artifactName={QUOTES_ARTIFACT}"))
            .to(&format!(
                "httplite:{quotes_addr}/quotes?method=POST&replyTo=direct:quotesReply"
            )),
        RouteBuilder::new("quotes-reply")
            .from("direct:quotesReply")
            .set_header("ArtifactName", constant(QUOTES_ARTIFACT))
            .set_header("OperationName", constant("updateQuotes"))
            .to("artifact:cartago"),
        tracking,
    ];
    for q in &cfg.supplier_quotes {
        builders.push(
            RouteBuilder::new(format!("supplier-{}", q.name))
                .from(&format!("jason:{}", supplier_dummy(&q.name)))
                .to(&format!(
                    "chatstub:bots/{}?chatId=supplier-{}",
                    cfg.bot_token, q.name
                )),
        );
    }

    let mut routes = customer.routes;
    for b in builders {
        routes.push(b.build().map_err(|e| bad(e.to_string()))?);
    }
    Ok(routes.into_iter().map(|d| aliases.apply(d)).collect())
}

/// (route id, exchange sequence number) per delivery, in delivery order.
type DeliveryLog = Arc<Mutex<Vec<(String, Option<u64>)>>>;

struct Run<'a> {
    cfg: &'a ScenarioConfig,
    platform: Platform,
    started: Instant,
    wall_ms: BTreeMap<Stage, u64>,
    deliveries: DeliveryLog,
}

const POLL: Duration = Duration::from_millis(1);

impl Run<'_> {
    fn stage_stamps(&self) -> BTreeMap<Stage, StageStamp> {
        let mut out = BTreeMap::new();
        for e in self.platform.events() {
            let AgentEventKind::Log(term) = &e.kind else {
                continue;
            };
            if let Some(("stage", [label])) = term.as_struct() {
                if let Some(stage) = label.as_text().and_then(Stage::from_label) {
                    out.entry(stage).or_insert(StageStamp {
                        clock_ms: e.at_us / 1000,
                        seq: e.seq,
                    });
                }
            }
        }
        out
    }

    fn budget(&self) -> Duration {
        Duration::from_millis(self.cfg.stage_timeout_ms)
    }

    /// Polls until `done` holds or the stage budget runs out.
    fn wait(&self, mut done: impl FnMut(&Run<'_>) -> bool) -> bool {
        let deadline = Instant::now() + self.budget();
        loop {
            if done(self) {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(POLL);
        }
    }

    fn wait_stage(&mut self, stage: Stage) -> Result<(), Stage> {
        if self.wait(|r| r.stage_stamps().contains_key(&stage)) {
            self.wall_ms
                .insert(stage, self.started.elapsed().as_millis() as u64);
            Ok(())
        } else {
            Err(stage)
        }
    }

    fn customer_rows(&self) -> usize {
        self.platform
            .transcripts()
            .rows_for_chat(&self.cfg.customer_chat_id)
            .len()
    }

    fn drive(&mut self, stubs: &Stubs) -> Result<(), Stage> {
        let period = Duration::from_millis(self.cfg.tick_period_ms);
        let clock = self.platform.clock().clone();

        tick(&clock, period);
        let mut plc = TcpStream::connect(&stubs.plc_address).map_err(|_| Stage::I)?;
        std::io::Write::write_all(&mut plc, b"done\n").map_err(|_| Stage::I)?;
        drop(plc);
        self.wait_stage(Stage::I)?;
        self.wait_stage(Stage::Ii)?;
        self.wait_stage(Stage::Iii)?;

        let env = self.platform.environment().clone();
        let focused = self.wait(|_| {
            env.observers(DEFAULT_WORKSPACE, TRACKED_ARTIFACT)
                .is_ok_and(|o| o.iter().any(|a| a == DELIVERY_AGENT))
        });
        if !focused || !self.platform.wait_quiescent(self.budget()) {
            return Err(Stage::Iv);
        }

        let broker = self.platform.brokers().broker(TRACKING_HOST);
        let base_calls = env.call_count(DEFAULT_WORKSPACE, TRACKED_ARTIFACT);
        for (i, (lat, lon)) in self.cfg.track_waypoints.iter().enumerate() {
            tick(&clock, period);
            let payload = Term::list(vec![Term::number(*lat), Term::number(*lon)]).render();
            broker.publish(TRACKING_TOPIC, &payload, false);
            let applied =
                self.wait(|_| env.call_count(DEFAULT_WORKSPACE, TRACKED_ARTIFACT) > base_calls + i);
            if !applied || !self.platform.wait_quiescent(self.budget()) {
                return Err(if self.stage_stamps().contains_key(&Stage::Iv) {
                    Stage::V
                } else {
                    Stage::Iv
                });
            }
            let stamps = self.stage_stamps();
            if i == 0 {
                if !stamps.contains_key(&Stage::Iv) {
                    return Err(Stage::Iv);
                }
                self.wall_ms
                    .insert(Stage::Iv, self.started.elapsed().as_millis() as u64);
            }
            if stamps.contains_key(&Stage::V) {
                if !self.wait(|r| r.customer_rows() > 0) {
                    return Err(Stage::V);
                }
                self.wall_ms
                    .insert(Stage::V, self.started.elapsed().as_millis() as u64);
                return Ok(());
            }
        }
        // Every waypoint was processed and the system is quiescent: no
        // near_destination signal is coming.
        Err(Stage::V)
    }

    fn report(&self, stubs: &Stubs, order_id: String) -> ScenarioReport {
        let registry = self.platform.registry();
        let messages: Vec<AclMessage> = registry
            .delivery_log()
            .into_iter()
            .map(|r| r.message)
            .collect();
        let hire_message = messages
            .iter()
            .find(|m| m.receiver.starts_with("DummySupplier_"))
            .cloned();
        let winner_supplier = hire_message
            .as_ref()
            .and_then(|m| m.receiver.strip_prefix("DummySupplier_"))
            .map(str::to_string);
        let distances_km = self
            .platform
            .log_terms(DELIVERY_AGENT)
            .iter()
            .filter_map(|t| match t.as_struct() {
                Some(("distance", [d])) => d.as_number(),
                _ => None,
            })
            .collect();
        let mut last_seq: BTreeMap<String, u64> = BTreeMap::new();
        let mut delivery_order_ok = true;
        for (route, seq) in self.deliveries.lock().unwrap().iter() {
            let Some(seq) = seq else {
                delivery_order_ok = false;
                continue;
            };
            if last_seq.get(route).is_some_and(|prev| prev >= seq) {
                delivery_order_ok = false;
            }
            last_seq.insert(route.clone(), *seq);
        }
        ScenarioReport {
            run_id: self.platform.bus().run_id().to_string(),
            seed: self.cfg.seed,
            simulated_time: self.platform.clock().is_simulated(),
            order_id,
            stage_timestamps: self.stage_stamps(),
            winner_supplier,
            hire_message,
            erp_checkout_record: stubs.erp_log.lock().unwrap().first().cloned(),
            distances_km,
            chat_transcript: self.platform.transcripts().rows(),
            messages,
            dead_letters: self.platform.bus().dead_letters(),
            delivery_order_ok,
            wall_ms: self.wall_ms.clone(),
        }
    }
}

/// Runs the whole scenario. With `simulated_time` the platform runs on a
/// logical clock that only the scenario advances, which makes the report
/// reproducible apart from its `wall_ms` field.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    simulated_time: bool,
) -> Result<ScenarioReport, ScenarioError> {
    cfg.validate()?;
    let clock = if simulated_time {
        Clock::simulated()
    } else {
        Clock::wall()
    };
    let order_id = cfg.order_id();
    let platform = Platform::new(PlatformConfig {
        run_id: format!("scn{}", cfg.seed),
        clock: clock.clone(),
        ..PlatformConfig::default()
    });

    let env = platform.environment();
    let setup = |e: crate::environment::EnvError| ScenarioError::Setup(e.to_string());
    env.create_artifact(DEFAULT_WORKSPACE, PLC_ARTIFACT, plc_template())
        .map_err(setup)?;
    env.create_artifact(DEFAULT_WORKSPACE, ERP_ARTIFACT, erp_template())
        .map_err(setup)?;
    env.create_artifact(DEFAULT_WORKSPACE, QUOTES_ARTIFACT, quotes_template())
        .map_err(setup)?;
    env.create_artifact(
        DEFAULT_WORKSPACE,
        TRACKED_ARTIFACT,
        tracker_template(cfg.destination, cfg.near_threshold_km),
    )
    .map_err(setup)?;

    let mut stubs = Stubs::start(cfg, &clock)?;
    let deliveries = Arc::new(Mutex::new(Vec::new()));
    let sink = deliveries.clone();
    platform
        .bus()
        .set_delivery_observer(Some(Arc::new(move |d: &crate::bus::DeliveryRecord| {
            sink.lock()
                .unwrap()
                .push((d.route_id.clone(), d.exchange_id.seq()));
        })));
    for route in scenario_routes(cfg, &stubs)? {
        platform.bus().add_route(route)?;
    }

    platform.spawn_agent(
        PRODUCTION_AGENT,
        ProductionAgent {
            order_id: order_id.clone(),
            checked_out: false,
            confirmed: false,
        },
    )?;
    platform.spawn_agent(
        DISTRIBUTION_AGENT,
        DistributionAgent {
            order_id: None,
            hired: false,
        },
    )?;
    platform.spawn_agent(
        DELIVERY_AGENT,
        DeliveryAgent {
            order_id: None,
            tracking: false,
            notified: false,
        },
    )?;

    let started = Instant::now();
    if let Err(e) = platform.start() {
        stubs.shutdown();
        return Err(e.into());
    }
    let mut run = Run {
        cfg,
        platform,
        started,
        wall_ms: BTreeMap::new(),
        deliveries,
    };
    let outcome = run.drive(&stubs);
    let _ = run.platform.stop();
    stubs.shutdown();
    let report = run.report(&stubs, order_id);
    match outcome {
        Ok(()) => Ok(report),
        Err(stage) => Err(ScenarioError::StageTimeout {
            stage,
            elapsed_ms: started.elapsed().as_millis() as u64,
            partial: Box::new(report),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    MissingStage {
        stage: Stage,
    },
    StageOrder {
        earlier: Stage,
        later: Stage,
    },
    WrongWinner {
        expected: String,
        actual: Option<String>,
    },
    HireMessage {
        reason: String,
    },
    CustomerChatMissing {
        chat_id: String,
    },
    CustomerChatCount {
        chat_id: String,
        rows: usize,
    },
    ChatBeforeSignal {
        chat_id: String,
    },
    DeadLetters {
        count: usize,
    },
    DeliveryOrder,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingStage { stage } => write!(f, "stage {stage} has no timestamp"),
            Violation::StageOrder { earlier, later } => {
                write!(f, "stage {later} completed before stage {earlier}")
            }
            Violation::WrongWinner { expected, actual } => write!(
                f,
                "winner is {}, expected {expected}",
                actual.as_deref().unwrap_or("nobody")
            ),
            Violation::HireMessage { reason } => write!(f, "hire message: {reason}"),
            Violation::CustomerChatMissing { chat_id } => {
                write!(f, "no transcript row for chatId {chat_id}")
            }
            Violation::CustomerChatCount { chat_id, rows } => {
                write!(
                    f,
                    "expected one transcript row for chatId {chat_id}, found {rows}"
                )
            }
            Violation::ChatBeforeSignal { chat_id } => {
                write!(
                    f,
                    "transcript row for chatId {chat_id} precedes the near_destination stage"
                )
            }
            Violation::DeadLetters { count } => write!(f, "{count} dead-lettered exchange(s)"),
            Violation::DeliveryOrder => f.write_str("a route delivered exchanges out of order"),
        }
    }
}

/// Checks a report against its config; an empty result means it passed.
pub fn assert_report(report: &ScenarioReport, cfg: &ScenarioConfig) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut previous: Option<(Stage, StageStamp)> = None;
    for stage in Stage::ALL {
        match report.stage_timestamps.get(&stage) {
            None => out.push(Violation::MissingStage { stage }),
            Some(stamp) => {
                if let Some((earlier, prev)) = previous {
                    if stamp.seq <= prev.seq || stamp.clock_ms < prev.clock_ms {
                        out.push(Violation::StageOrder {
                            earlier,
                            later: stage,
                        });
                    }
                }
                previous = Some((stage, *stamp));
            }
        }
    }

    if let Some(expected) = cfg.expected_winner() {
        if report.winner_supplier.as_deref() != Some(expected.name.as_str()) {
            out.push(Violation::WrongWinner {
                expected: expected.name.clone(),
                actual: report.winner_supplier.clone(),
            });
        } else {
            match &report.hire_message {
                None => out.push(Violation::HireMessage {
                    reason: "missing".into(),
                }),
                Some(m) if m.performative != Performative::Tell => {
                    out.push(Violation::HireMessage {
                        reason: format!(
                            "performative is {}, expected tell",
                            m.performative.as_str()
                        ),
                    })
                }
                Some(m) if m.receiver != supplier_dummy(&expected.name) => {
                    out.push(Violation::HireMessage {
                        reason: format!("addressed to {}", m.receiver),
                    })
                }
                Some(_) => {}
            }
        }
    }

    let chat = &cfg.customer_chat_id;
    let rows: Vec<&TranscriptRow> = report
        .chat_transcript
        .iter()
        .filter(|r| &r.chat_id == chat)
        .collect();
    match rows.len() {
        0 => out.push(Violation::CustomerChatMissing {
            chat_id: chat.clone(),
        }),
        1 => {}
        n => out.push(Violation::CustomerChatCount {
            chat_id: chat.clone(),
            rows: n,
        }),
    }
    let signalled_at = report.stage_timestamps.get(&Stage::V).map(|s| s.clock_ms);
    if !rows.is_empty() && rows.iter().any(|r| signalled_at.is_none_or(|t| r.ts < t)) {
        out.push(Violation::ChatBeforeSignal {
            chat_id: chat.clone(),
        });
    }

    if !report.dead_letters.is_empty() {
        out.push(Violation::DeadLetters {
            count: report.dead_letters.len(),
        });
    }
    if !report.delivery_order_ok {
        out.push(Violation::DeliveryOrder);
    }
    out
}
