//! The mediation engine: component registry, route lifecycle, and the delivery
//! loop that carries exchanges from a route's consumer through its processors
//! to each of its producers.
//!
//! Every running route owns a worker thread fed by a FIFO queue, so exchanges
//! from one consumer are delivered in creation order while distinct routes
//! proceed concurrently. Synchronous hops (`direct`) process on the caller's
//! thread under the same per-route lock.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};
use serde::Serialize;
use thiserror::Error;

use crate::clock::Clock;
use crate::exchange::{Exchange, ExchangeId, Headers};
use crate::route::{ProcessorSpec, RouteDefinition};
use crate::term::Term;
use crate::uri::{is_valid_scheme, EndpointUri};

pub const DEFAULT_DRAIN_TIMEOUT: Duration = Duration::from_secs(5);

pub type Transform = Arc<dyn Fn(&mut Exchange) -> Result<(), String> + Send + Sync>;

pub type DeliveryObserver = Arc<dyn Fn(&DeliveryRecord) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BusError {
    #[error("component scheme '{0}' already registered")]
    DuplicateScheme(String),
    #[error("invalid component scheme '{0}'")]
    InvalidScheme(String),
    #[error("operation requires a stopped bus")]
    BusRunning,
    #[error("bus already running")]
    AlreadyRunning,
    #[error("bus already stopped")]
    AlreadyStopped,
    #[error("route id '{0}' already in use")]
    DuplicateRouteId(String),
    #[error("route '{route_id}': no component registered for scheme '{scheme}'")]
    UnknownScheme { route_id: String, scheme: String },
    #[error("route '{route_id}': transform '{name}' is not registered")]
    UnknownTransform { route_id: String, name: String },
    #[error("unknown route '{0}'")]
    UnknownRoute(String),
    #[error("route '{0}' is not running")]
    RouteNotRunning(String),
    #[error("route '{route_id}': endpoint '{endpoint}' failed to start: {error}")]
    EndpointStart {
        route_id: String,
        endpoint: String,
        error: EndpointError,
    },
}

/// Errors raised by component endpoints.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
pub enum EndpointError {
    #[error("missing parameter '{0}'")]
    MissingParam(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("unknown receiver '{0}'")]
    UnknownReceiver(String),
    #[error("name '{0}' already registered")]
    DuplicateName(String),
    #[error("no ArtifactName header or artifactName parameter")]
    MissingArtifactName,
    #[error("no OperationName header or operationName parameter")]
    MissingOperationName,
    #[error("unknown workspace '{0}'")]
    UnknownWorkspace(String),
    #[error("unknown artifact '{0}'")]
    UnknownArtifact(String),
    #[error("artifact '{artifact}' has no operation '{operation}'")]
    UnknownOperation { artifact: String, operation: String },
    #[error("operation failed: {0}")]
    OperationFailed(Term),
    #[error("no consumer for '{0}'")]
    NoConsumer(String),
    #[error("cannot bind {address}: {reason}")]
    Bind { address: String, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("route is not accepting exchanges")]
    Stopped,
}

/// What an endpoint factory sees about the route it serves.
#[derive(Debug, Clone)]
pub struct RouteContext {
    pub route_id: String,
    /// The route's consumer endpoint.
    pub from: EndpointUri,
    pub run_id: String,
    pub clock: Clock,
}

/// A component creates consumers (route inputs) and producers (route outputs)
/// for the endpoint uris of its scheme.
pub trait Component: Send + Sync {
    fn create_consumer(
        &self,
        uri: &EndpointUri,
        _ctx: &RouteContext,
    ) -> Result<Box<dyn Consumer>, EndpointError> {
        Err(EndpointError::Unsupported(format!(
            "'{}' endpoints cannot consume",
            uri.scheme()
        )))
    }

    fn create_producer(
        &self,
        uri: &EndpointUri,
        _ctx: &RouteContext,
    ) -> Result<Box<dyn Producer>, EndpointError> {
        Err(EndpointError::Unsupported(format!(
            "'{}' endpoints cannot produce",
            uri.scheme()
        )))
    }
}

pub trait Consumer: Send {
    fn start(&mut self, sink: ExchangeSink) -> Result<(), EndpointError>;
    fn stop(&mut self);
}

pub trait Producer: Send + Sync {
    fn send(&self, exchange: &Exchange) -> Result<(), EndpointError>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DeadLetterReason {
    TransformFailure {
        transform: String,
        message: String,
    },
    ProducerFailure {
        endpoint: String,
        error: EndpointError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeadLetter {
    pub route_id: String,
    pub reason: DeadLetterReason,
    pub exchange: Exchange,
    pub at_us: u64,
}

/// Emitted once per exchange after every producer of its route was attempted.
#[derive(Debug, Clone)]
pub struct DeliveryRecord {
    pub route_id: String,
    pub exchange_id: ExchangeId,
    pub trace: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BusReport {
    pub delivered: u64,
    pub dead_lettered: u64,
    pub dropped: Vec<ExchangeId>,
}

#[derive(Debug, Clone)]
pub struct BusConfig {
    pub run_id: String,
    pub clock: Clock,
    pub drain_timeout: Duration,
}

impl Default for BusConfig {
    fn default() -> BusConfig {
        BusConfig {
            run_id: "run".into(),
            clock: Clock::wall(),
            drain_timeout: DEFAULT_DRAIN_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusStatus {
    Stopped,
    Running,
}

/// Services shared by every route runtime.
struct Services {
    run_id: String,
    clock: Clock,
    exchange_seq: AtomicU64,
    dead_letters: Mutex<Vec<DeadLetter>>,
    report: Mutex<BusReport>,
    observer: RwLock<Option<DeliveryObserver>>,
}

impl Services {
    fn next_exchange(&self, headers: Headers, body: Term) -> Exchange {
        let seq = self.exchange_seq.fetch_add(1, Ordering::SeqCst) + 1;
        Exchange::new(
            ExchangeId::new(&self.run_id, seq),
            headers,
            body,
            self.clock.now_us(),
        )
    }

    fn dead_letter(&self, route_id: &str, reason: DeadLetterReason, exchange: &Exchange) {
        let entry = DeadLetter {
            route_id: route_id.to_string(),
            reason,
            exchange: exchange.clone(),
            at_us: self.clock.now_us(),
        };
        self.dead_letters.lock().unwrap().push(entry);
        self.report.lock().unwrap().dead_lettered += 1;
    }
}

enum Stage {
    SetHeader(String, Term),
    Transform(String, Transform),
}

struct RouteRuntime {
    route_id: String,
    from: String,
    stages: Vec<Stage>,
    producers: Vec<(String, Box<dyn Producer>)>,
    services: Arc<Services>,
    queue: Mutex<Option<Sender<Exchange>>>,
    /// External (queued) intake open.
    accepting: AtomicBool,
    /// Synchronous intake open.
    inline_open: AtomicBool,
    abandon: AtomicBool,
    pending: AtomicU64,
    process_lock: Mutex<()>,
}

impl RouteRuntime {
    fn create(&self, headers: Headers, body: Term) -> Exchange {
        let mut ex = self.services.next_exchange(headers, body);
        ex.visit(self.from.clone());
        ex
    }

    fn submit(&self, headers: Headers, body: Term) -> Result<ExchangeId, EndpointError> {
        let queue = self.queue.lock().unwrap();
        let tx = match (&*queue, self.accepting.load(Ordering::Acquire)) {
            (Some(tx), true) => tx,
            _ => return Err(EndpointError::Stopped),
        };
        let ex = self.create(headers, body);
        let id = ex.id().clone();
        self.pending.fetch_add(1, Ordering::SeqCst);
        if tx.send(ex).is_err() {
            self.pending.fetch_sub(1, Ordering::SeqCst);
            return Err(EndpointError::Stopped);
        }
        Ok(id)
    }

    fn process_now(&self, mut ex: Exchange) -> Result<ExchangeId, EndpointError> {
        if !self.inline_open.load(Ordering::Acquire) {
            return Err(EndpointError::Stopped);
        }
        if ex.trace().is_empty() {
            ex.visit(self.from.clone());
        }
        let id = ex.id().clone();
        self.pending.fetch_add(1, Ordering::SeqCst);
        self.run(ex);
        self.pending.fetch_sub(1, Ordering::SeqCst);
        Ok(id)
    }

    fn drop_exchange(&self, ex: &Exchange) {
        self.services
            .report
            .lock()
            .unwrap()
            .dropped
            .push(ex.id().clone());
    }

    fn run(&self, mut ex: Exchange) {
        let _serial = self.process_lock.lock().unwrap();
        if self.abandon.load(Ordering::Acquire) {
            self.drop_exchange(&ex);
            return;
        }
        for stage in &self.stages {
            match stage {
                Stage::SetHeader(name, value) => {
                    ex.headers.insert(name.clone(), value.clone());
                }
                Stage::Transform(name, f) => {
                    if let Err(message) = f(&mut ex) {
                        let reason = DeadLetterReason::TransformFailure {
                            transform: name.clone(),
                            message,
                        };
                        self.services.dead_letter(&self.route_id, reason, &ex);
                        return;
                    }
                }
            }
        }
        for (endpoint, producer) in &self.producers {
            if self.abandon.load(Ordering::Acquire) {
                self.drop_exchange(&ex);
                return;
            }
            ex.visit(endpoint.clone());
            if let Err(error) = producer.send(&ex) {
                let reason = DeadLetterReason::ProducerFailure {
                    endpoint: endpoint.clone(),
                    error,
                };
                self.services.dead_letter(&self.route_id, reason, &ex);
            }
        }
        self.services.report.lock().unwrap().delivered += 1;
        let observer = self.services.observer.read().unwrap().clone();
        if let Some(observer) = observer {
            observer(&DeliveryRecord {
                route_id: self.route_id.clone(),
                exchange_id: ex.id().clone(),
                trace: ex.trace().to_vec(),
            });
        }
    }

    fn work(self: Arc<Self>, rx: Receiver<Exchange>) {
        for ex in rx {
            self.run(ex);
            self.pending.fetch_sub(1, Ordering::SeqCst);
        }
    }
}

/// Handle given to a consumer for turning inbound data into exchanges on its
/// route.
#[derive(Clone)]
pub struct ExchangeSink {
    route: Arc<RouteRuntime>,
}

impl std::fmt::Debug for ExchangeSink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExchangeSink")
            .field("route", &self.route.route_id)
            .finish()
    }
}

impl ExchangeSink {
    pub fn route_id(&self) -> &str {
        &self.route.route_id
    }

    /// Queues a new exchange for the route's worker.
    pub fn submit(&self, headers: Headers, body: Term) -> Result<ExchangeId, EndpointError> {
        self.route.submit(headers, body)
    }

    /// Creates an exchange and processes it on the calling thread.
    pub fn process_now(&self, headers: Headers, body: Term) -> Result<ExchangeId, EndpointError> {
        if !self.route.inline_open.load(Ordering::Acquire) {
            return Err(EndpointError::Stopped);
        }
        let ex = self.route.create(headers, body);
        self.route.process_now(ex)
    }
}

struct RunningRoute {
    runtime: Arc<RouteRuntime>,
    consumer: Box<dyn Consumer>,
    worker: Option<JoinHandle<()>>,
}

struct RouteEntry {
    def: RouteDefinition,
    running: Option<RunningRoute>,
}

struct Admin {
    status: BusStatus,
    components: HashMap<String, Arc<dyn Component>>,
    transforms: HashMap<String, Transform>,
    routes: Vec<RouteEntry>,
}

/// The routing engine. Cheap to clone; clones share state.
#[derive(Clone)]
pub struct Bus {
    services: Arc<Services>,
    admin: Arc<Mutex<Admin>>,
    drain_timeout: Duration,
}

impl Default for Bus {
    fn default() -> Bus {
        Bus::new(BusConfig::default())
    }
}

impl Bus {
    pub fn new(config: BusConfig) -> Bus {
        Bus {
            services: Arc::new(Services {
                run_id: config.run_id,
                clock: config.clock,
                exchange_seq: AtomicU64::new(0),
                dead_letters: Mutex::new(Vec::new()),
                report: Mutex::new(BusReport::default()),
                observer: RwLock::new(None),
            }),
            admin: Arc::new(Mutex::new(Admin {
                status: BusStatus::Stopped,
                components: HashMap::new(),
                transforms: HashMap::new(),
                routes: Vec::new(),
            })),
            drain_timeout: config.drain_timeout,
        }
    }

    pub fn run_id(&self) -> &str {
        &self.services.run_id
    }

    pub fn clock(&self) -> &Clock {
        &self.services.clock
    }

    pub fn status(&self) -> BusStatus {
        self.admin.lock().unwrap().status
    }

    pub fn register_component(
        &self,
        scheme: &str,
        component: Arc<dyn Component>,
    ) -> Result<(), BusError> {
        let mut admin = self.admin.lock().unwrap();
        if admin.status == BusStatus::Running {
            return Err(BusError::BusRunning);
        }
        if !is_valid_scheme(scheme) {
            return Err(BusError::InvalidScheme(scheme.to_string()));
        }
        if admin.components.contains_key(scheme) {
            return Err(BusError::DuplicateScheme(scheme.to_string()));
        }
        admin.components.insert(scheme.to_string(), component);
        Ok(())
    }

    pub fn has_component(&self, scheme: &str) -> bool {
        self.admin.lock().unwrap().components.contains_key(scheme)
    }

    pub fn component_schemes(&self) -> Vec<String> {
        let mut schemes: Vec<_> = self
            .admin
            .lock()
            .unwrap()
            .components
            .keys()
            .cloned()
            .collect();
        schemes.sort();
        schemes
    }

    /// Registers (or replaces) a named transform. Routes resolve transforms when
    /// they start.
    pub fn register_transform<F>(&self, name: &str, f: F)
    where
        F: Fn(&mut Exchange) -> Result<(), String> + Send + Sync + 'static,
    {
        self.admin
            .lock()
            .unwrap()
            .transforms
            .insert(name.to_string(), Arc::new(f));
    }

    pub fn set_delivery_observer(&self, observer: Option<DeliveryObserver>) {
        *self.services.observer.write().unwrap() = observer;
    }

    pub fn add_route(&self, def: RouteDefinition) -> Result<String, BusError> {
        let mut admin = self.admin.lock().unwrap();
        let route_id = def.route_id().to_string();
        if admin.routes.iter().any(|r| r.def.route_id() == route_id) {
            return Err(BusError::DuplicateRouteId(route_id));
        }
        let mut entry = RouteEntry { def, running: None };
        if admin.status == BusStatus::Running {
            entry.running = Some(self.start_route(&admin, &entry.def)?);
        }
        admin.routes.push(entry);
        Ok(route_id)
    }

    pub fn route_ids(&self) -> Vec<String> {
        let admin = self.admin.lock().unwrap();
        admin
            .routes
            .iter()
            .map(|r| r.def.route_id().to_string())
            .collect()
    }

    pub fn is_route_running(&self, route_id: &str) -> bool {
        let admin = self.admin.lock().unwrap();
        admin
            .routes
            .iter()
            .any(|r| r.def.route_id() == route_id && r.running.is_some())
    }

    pub fn start(&self) -> Result<(), BusError> {
        let mut admin = self.admin.lock().unwrap();
        if admin.status == BusStatus::Running {
            return Err(BusError::AlreadyRunning);
        }
        let mut started = Vec::with_capacity(admin.routes.len());
        for entry in &admin.routes {
            match self.start_route(&admin, &entry.def) {
                Ok(running) => started.push(running),
                Err(e) => {
                    let deadline = Instant::now() + self.drain_timeout;
                    for running in started.iter() {
                        close_intake(running);
                    }
                    wait_drained(started.iter(), deadline);
                    for running in started {
                        teardown(running);
                    }
                    return Err(e);
                }
            }
        }
        for (entry, running) in admin.routes.iter_mut().zip(started) {
            entry.running = Some(running);
        }
        admin.status = BusStatus::Running;
        Ok(())
    }

    /// Stops intake on every route, waits up to the drain timeout for in-flight
    /// exchanges, then deactivates consumers. Exchanges still pending after the
    /// timeout are recorded as dropped in the bus report.
    pub fn stop(&self) -> Result<(), BusError> {
        let mut admin = self.admin.lock().unwrap();
        if admin.status == BusStatus::Stopped {
            return Err(BusError::AlreadyStopped);
        }
        let running: Vec<RunningRoute> = admin
            .routes
            .iter_mut()
            .filter_map(|r| r.running.take())
            .collect();
        admin.status = BusStatus::Stopped;
        drop(admin);
        let deadline = Instant::now() + self.drain_timeout;
        for r in &running {
            close_intake(r);
        }
        wait_drained(running.iter(), deadline);
        for r in running {
            teardown(r);
        }
        Ok(())
    }

    /// Runs an exchange through a running route on the calling thread.
    pub fn process_exchange(&self, route_id: &str, exchange: Exchange) -> Result<(), BusError> {
        let runtime = {
            let admin = self.admin.lock().unwrap();
            let entry = admin
                .routes
                .iter()
                .find(|r| r.def.route_id() == route_id)
                .ok_or_else(|| BusError::UnknownRoute(route_id.to_string()))?;
            entry
                .running
                .as_ref()
                .map(|r| r.runtime.clone())
                .ok_or_else(|| BusError::RouteNotRunning(route_id.to_string()))?
        };
        runtime
            .process_now(exchange)
            .map(|_| ())
            .map_err(|_| BusError::RouteNotRunning(route_id.to_string()))
    }

    /// Creates a fresh exchange with a bus-unique id and an empty trace.
    pub fn create_exchange(&self, headers: Headers, body: Term) -> Exchange {
        self.services.next_exchange(headers, body)
    }

    pub fn dead_letters(&self) -> Vec<DeadLetter> {
        self.services.dead_letters.lock().unwrap().clone()
    }

    pub fn report(&self) -> BusReport {
        self.services.report.lock().unwrap().clone()
    }

    /// Number of exchanges accepted but not yet fully processed.
    pub fn in_flight(&self) -> u64 {
        let admin = self.admin.lock().unwrap();
        admin
            .routes
            .iter()
            .filter_map(|r| r.running.as_ref())
            .map(|r| r.runtime.pending.load(Ordering::SeqCst))
            .sum()
    }

    fn start_route(&self, admin: &Admin, def: &RouteDefinition) -> Result<RunningRoute, BusError> {
        let route_id = def.route_id().to_string();
        let component = |uri: &EndpointUri| {
            admin
                .components
                .get(uri.scheme())
                .cloned()
                .ok_or_else(|| BusError::UnknownScheme {
                    route_id: route_id.clone(),
                    scheme: uri.scheme().to_string(),
                })
        };
        let from_component = component(def.from())?;
        let to_components = def
            .to()
            .iter()
            .map(&component)
            .collect::<Result<Vec<_>, _>>()?;
        let stages = def
            .processors()
            .iter()
            .map(|p| match p {
                ProcessorSpec::SetHeader { name, value } => {
                    Ok(Stage::SetHeader(name.clone(), value.clone()))
                }
                ProcessorSpec::Transform { name } => admin
                    .transforms
                    .get(name)
                    .map(|f| Stage::Transform(name.clone(), f.clone()))
                    .ok_or_else(|| BusError::UnknownTransform {
                        route_id: route_id.clone(),
                        name: name.clone(),
                    }),
            })
            .collect::<Result<Vec<_>, _>>()?;

        let ctx = RouteContext {
            route_id: route_id.clone(),
            from: def.from().clone(),
            run_id: self.services.run_id.clone(),
            clock: self.services.clock.clone(),
        };
        let start_error = |uri: &EndpointUri, error| BusError::EndpointStart {
            route_id: route_id.clone(),
            endpoint: uri.to_string(),
            error,
        };
        let mut producers = Vec::with_capacity(def.to().len());
        for (uri, comp) in def.to().iter().zip(to_components) {
            let producer = comp
                .create_producer(uri, &ctx)
                .map_err(|e| start_error(uri, e))?;
            producers.push((uri.to_string(), producer));
        }
        let mut consumer = from_component
            .create_consumer(def.from(), &ctx)
            .map_err(|e| start_error(def.from(), e))?;

        let (tx, rx) = crossbeam_channel::unbounded();
        let runtime = Arc::new(RouteRuntime {
            route_id: route_id.clone(),
            from: def.from().to_string(),
            stages,
            producers,
            services: self.services.clone(),
            queue: Mutex::new(Some(tx)),
            accepting: AtomicBool::new(true),
            inline_open: AtomicBool::new(true),
            abandon: AtomicBool::new(false),
            pending: AtomicU64::new(0),
            process_lock: Mutex::new(()),
        });
        let worker_rt = runtime.clone();
        let worker = std::thread::Builder::new()
            .name(format!("route-{route_id}"))
            .spawn(move || worker_rt.work(rx))
            .expect("spawn route worker");
        let sink = ExchangeSink {
            route: runtime.clone(),
        };
        if let Err(e) = consumer.start(sink) {
            runtime.accepting.store(false, Ordering::Release);
            runtime.inline_open.store(false, Ordering::Release);
            runtime.queue.lock().unwrap().take();
            let _ = worker.join();
            return Err(start_error(def.from(), e));
        }
        Ok(RunningRoute {
            runtime,
            consumer,
            worker: Some(worker),
        })
    }
}

fn close_intake(route: &RunningRoute) {
    route.runtime.accepting.store(false, Ordering::Release);
}

fn wait_drained<'a>(routes: impl Iterator<Item = &'a RunningRoute> + Clone, deadline: Instant) {
    loop {
        let busy = routes
            .clone()
            .any(|r| r.runtime.pending.load(Ordering::SeqCst) > 0);
        if !busy || Instant::now() >= deadline {
            return;
        }
        std::thread::sleep(Duration::from_millis(1));
    }
}

fn teardown(mut route: RunningRoute) {
    let rt = &route.runtime;
    rt.inline_open.store(false, Ordering::Release);
    route.consumer.stop();
    let drained = rt.pending.load(Ordering::SeqCst) == 0;
    if !drained {
        rt.abandon.store(true, Ordering::Release);
    }
    rt.queue.lock().unwrap().take();
    if let Some(worker) = route.worker.take() {
        if drained {
            let _ = worker.join();
        }
        // An abandoned worker drops what is left and exits on its own.
    }
}
