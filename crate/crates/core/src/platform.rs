//! A MAS wired to a bus: agent registry, environment, the standard endpoint
//! components and one runner thread per agent.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::acl::{AclError, AgentRegistry};
use crate::agent::{AgentBehavior, AgentContext, Effect};
use crate::bus::{Bus, BusConfig, BusError};
use crate::clock::Clock;
use crate::components::{
    ArtifactComponent, BrokerRegistry, ChatStubComponent, DirectComponent, DirectRegistry,
    HttpLiteComponent, JasonComponent, MqttLiteComponent, TcpLineComponent, TimerComponent,
    TranscriptStore,
};
use crate::environment::{Environment, Origin};
use crate::notify::Doorbell;
use crate::term::Term;

const IDLE_POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Acl(#[from] AclError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("no agent named '{0}'")]
    UnknownAgent(String),
}

#[derive(Debug, Clone)]
pub struct PlatformConfig {
    pub run_id: String,
    pub clock: Clock,
    pub drain_timeout: Duration,
}

impl Default for PlatformConfig {
    fn default() -> PlatformConfig {
        let bus = BusConfig::default();
        PlatformConfig {
            run_id: bus.run_id,
            clock: bus.clock,
            drain_timeout: bus.drain_timeout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum AgentEventKind {
    Log(Term),
    SendFailed {
        receiver: String,
        error: String,
    },
    FocusFailed {
        workspace: String,
        artifact: String,
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentEvent {
    pub seq: u64,
    pub agent: String,
    pub at_us: u64,
    pub kind: AgentEventKind,
}

struct Slot {
    behavior: Mutex<Box<dyn AgentBehavior>>,
    /// Odd while a reaction is running.
    activity: AtomicU64,
}

struct Inner {
    bus: Bus,
    registry: Arc<AgentRegistry>,
    env: Arc<Environment>,
    doorbell: Arc<Doorbell>,
    direct: Arc<DirectRegistry>,
    brokers: Arc<BrokerRegistry>,
    transcripts: Arc<TranscriptStore>,
    agents: Mutex<BTreeMap<String, Arc<Slot>>>,
    events: Mutex<Vec<AgentEvent>>,
    running: AtomicBool,
    runners: Mutex<Vec<(Arc<AtomicBool>, JoinHandle<()>)>>,
}

pub struct Platform {
    inner: Arc<Inner>,
}

impl Default for Platform {
    fn default() -> Platform {
        Platform::new(PlatformConfig::default())
    }
}

impl Platform {
    /// Builds the platform and registers the standard components under their
    /// own scheme names: direct, timer, tcpline, httplite, mqttlite, chatstub,
    /// jason and artifact.
    pub fn new(config: PlatformConfig) -> Platform {
        let doorbell = Arc::new(Doorbell::new());
        let registry =
            Arc::new(AgentRegistry::new(config.run_id.clone()).with_doorbell(doorbell.clone()));
        let env = Arc::new(Environment::new().with_doorbell(doorbell.clone()));
        let bus = Bus::new(BusConfig {
            run_id: config.run_id,
            clock: config.clock,
            drain_timeout: config.drain_timeout,
        });
        let direct = Arc::new(DirectRegistry::new());
        let brokers = Arc::new(BrokerRegistry::new());
        let transcripts = Arc::new(TranscriptStore::new());

        let standard: [(&str, Arc<dyn crate::bus::Component>); 8] = [
            ("direct", Arc::new(DirectComponent::new(direct.clone()))),
            ("timer", Arc::new(TimerComponent)),
            ("tcpline", Arc::new(TcpLineComponent)),
            ("httplite", Arc::new(HttpLiteComponent::new(direct.clone()))),
            (
                "mqttlite",
                Arc::new(MqttLiteComponent::new(brokers.clone())),
            ),
            (
                "chatstub",
                Arc::new(ChatStubComponent::new(transcripts.clone())),
            ),
            ("jason", Arc::new(JasonComponent::new(registry.clone()))),
            ("artifact", Arc::new(ArtifactComponent::new(env.clone()))),
        ];
        for (scheme, component) in standard {
            bus.register_component(scheme, component)
                .expect("standard schemes are distinct");
        }
        register_builtin_transforms(&bus);

        Platform {
            inner: Arc::new(Inner {
                bus,
                registry,
                env,
                doorbell,
                direct,
                brokers,
                transcripts,
                agents: Mutex::new(BTreeMap::new()),
                events: Mutex::new(Vec::new()),
                running: AtomicBool::new(false),
                runners: Mutex::new(Vec::new()),
            }),
        }
    }

    pub fn bus(&self) -> &Bus {
        &self.inner.bus
    }

    pub fn registry(&self) -> &Arc<AgentRegistry> {
        &self.inner.registry
    }

    pub fn environment(&self) -> &Arc<Environment> {
        &self.inner.env
    }

    pub fn direct(&self) -> &Arc<DirectRegistry> {
        &self.inner.direct
    }

    pub fn brokers(&self) -> &Arc<BrokerRegistry> {
        &self.inner.brokers
    }

    pub fn transcripts(&self) -> &Arc<TranscriptStore> {
        &self.inner.transcripts
    }

    pub fn clock(&self) -> &Clock {
        self.inner.bus.clock()
    }

    pub fn doorbell(&self) -> &Arc<Doorbell> {
        &self.inner.doorbell
    }

    /// Registers a local agent and runs its initial effects before returning.
    pub fn spawn_agent<B>(&self, name: &str, behavior: B) -> Result<(), PlatformError>
    where
        B: AgentBehavior + 'static,
    {
        self.inner.registry.add_local(name)?;
        let slot = Arc::new(Slot {
            behavior: Mutex::new(Box::new(behavior)),
            activity: AtomicU64::new(0),
        });
        self.inner
            .agents
            .lock()
            .unwrap()
            .insert(name.to_string(), slot.clone());
        {
            let mut behavior = slot.behavior.lock().unwrap();
            let now_ms = self.inner.bus.clock().now_ms();
            let effects = behavior.init(&AgentContext { name, now_ms });
            self.inner.apply(name, effects);
        }
        if self.inner.running.load(Ordering::SeqCst) {
            Inner::spawn_runner(&self.inner, name.to_string());
        }
        Ok(())
    }

    pub fn agent_names(&self) -> Vec<String> {
        self.inner.agents.lock().unwrap().keys().cloned().collect()
    }

    /// Lets `agent` react to one queued message, or failing that one percept.
    /// Returns whether anything was processed.
    pub fn step(&self, agent: &str) -> Result<bool, PlatformError> {
        self.inner.step(agent)
    }

    /// Steps all agents round-robin in name order until none has work left or
    /// `max_steps` reactions ran. Returns the number of reactions.
    pub fn run_until_idle(&self, max_steps: usize) -> usize {
        let names = self.agent_names();
        let mut done = 0;
        loop {
            let mut progressed = false;
            for name in &names {
                if done >= max_steps {
                    return done;
                }
                if let Ok(true) = self.inner.step(name) {
                    progressed = true;
                    done += 1;
                }
            }
            if !progressed {
                return done;
            }
        }
    }

    /// Starts the bus and one runner thread per agent.
    pub fn start(&self) -> Result<(), PlatformError> {
        self.inner.bus.start()?;
        self.inner.running.store(true, Ordering::SeqCst);
        for name in self.agent_names() {
            Inner::spawn_runner(&self.inner, name);
        }
        Ok(())
    }

    /// Drains and stops the bus, then stops the agent runners.
    pub fn stop(&self) -> Result<(), PlatformError> {
        let bus_result = self.inner.bus.stop();
        self.inner.running.store(false, Ordering::SeqCst);
        let runners = std::mem::take(&mut *self.inner.runners.lock().unwrap());
        for (stop, _) in &runners {
            stop.store(true, Ordering::SeqCst);
        }
        self.inner.doorbell.ring();
        for (_, handle) in runners {
            let _ = handle.join();
        }
        bus_result.map_err(PlatformError::from)
    }

    pub fn is_running(&self) -> bool {
        self.inner.running.load(Ordering::SeqCst)
    }

    /// True when the agent has nothing queued and is not mid-reaction.
    pub fn is_idle(&self, agent: &str) -> bool {
        let slot = match self.inner.agents.lock().unwrap().get(agent) {
            Some(s) => s.clone(),
            None => return true,
        };
        let before = slot.activity.load(Ordering::SeqCst);
        let queued = self.inner.registry.mailbox_len(agent).unwrap_or(0)
            + self.inner.env.pending_percepts(agent);
        let after = slot.activity.load(Ordering::SeqCst);
        before % 2 == 0 && before == after && queued == 0
    }

    /// Waits until every agent is idle and no exchange is in flight, as
    /// observed twice in a row.
    pub fn wait_quiescent(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut stable = 0;
        while Instant::now() < deadline {
            let quiet = self.inner.bus.in_flight() == 0
                && self.agent_names().iter().all(|a| self.is_idle(a));
            if quiet {
                stable += 1;
                if stable >= 2 {
                    return true;
                }
            } else {
                stable = 0;
            }
            std::thread::sleep(Duration::from_millis(2));
        }
        false
    }

    pub fn events(&self) -> Vec<AgentEvent> {
        self.inner.events.lock().unwrap().clone()
    }

    pub fn log_terms(&self, agent: &str) -> Vec<Term> {
        self.events()
            .into_iter()
            .filter(|e| e.agent == agent)
            .filter_map(|e| match e.kind {
                AgentEventKind::Log(t) => Some(t),
                _ => None,
            })
            .collect()
    }
}

/// Names of the transforms every platform bus knows.
pub const BUILTIN_TRANSFORMS: [&str; 4] = ["upper", "lower", "render", "parse"];

/// `upper` / `lower` change the case of a text body, `render` turns any body
/// into the string of its rendering and `parse` reads a string body as a term.
fn register_builtin_transforms(bus: &Bus) {
    fn text_body(ex: &crate::exchange::Exchange) -> Result<&str, String> {
        ex.body
            .as_text()
            .ok_or_else(|| format!("body {} is not text", ex.body))
    }
    bus.register_transform("upper", |ex| {
        ex.body = Term::string(text_body(ex)?.to_uppercase());
        Ok(())
    });
    bus.register_transform("lower", |ex| {
        ex.body = Term::string(text_body(ex)?.to_lowercase());
        Ok(())
    });
    bus.register_transform("render", |ex| {
        ex.body = Term::string(ex.body.render());
        Ok(())
    });
    bus.register_transform("parse", |ex| {
        let parsed = crate::term::parse_term(text_body(ex)?).map_err(|e| e.to_string())?;
        ex.body = parsed;
        Ok(())
    });
}

impl Drop for Platform {
    fn drop(&mut self) {
        if self.is_running() {
            let _ = self.stop();
        }
    }
}

impl Inner {
    fn slot(&self, agent: &str) -> Result<Arc<Slot>, PlatformError> {
        self.agents
            .lock()
            .unwrap()
            .get(agent)
            .cloned()
            .ok_or_else(|| PlatformError::UnknownAgent(agent.to_string()))
    }

    fn step(&self, agent: &str) -> Result<bool, PlatformError> {
        let slot = self.slot(agent)?;
        let mut behavior = slot.behavior.lock().unwrap();
        slot.activity.fetch_add(1, Ordering::SeqCst);
        let ctx = AgentContext {
            name: agent,
            now_ms: self.bus.clock().now_ms(),
        };
        let effects = if let Some(message) = self.registry.receive(agent)? {
            Some(behavior.on_message(&ctx, &message))
        } else {
            self.env
                .take_percept(agent)
                .map(|p| behavior.on_percept(&ctx, &p))
        };
        let processed = effects.is_some();
        if let Some(effects) = effects {
            self.apply(agent, effects);
        }
        slot.activity.fetch_add(1, Ordering::SeqCst);
        Ok(processed)
    }

    fn apply(&self, agent: &str, effects: Vec<Effect>) {
        for effect in effects {
            match effect {
                Effect::Send(out) => {
                    let mut message = self.registry.compose(
                        agent,
                        out.receiver.clone(),
                        out.performative,
                        out.content,
                    );
                    message.in_reply_to = out.in_reply_to;
                    if let Err(e) = self.registry.send_message(message) {
                        self.record(
                            agent,
                            AgentEventKind::SendFailed {
                                receiver: out.receiver,
                                error: e.to_string(),
                            },
                        );
                    }
                }
                Effect::ArtifactOp(mut req) => {
                    req.origin = Origin::Agent(agent.to_string());
                    // Failures reach the agent as an OperationFailed percept.
                    let _ = self.env.execute_op(&req);
                }
                Effect::Focus {
                    workspace,
                    artifact,
                } => {
                    if let Err(e) = self.env.focus(agent, &workspace, &artifact) {
                        self.record(
                            agent,
                            AgentEventKind::FocusFailed {
                                workspace,
                                artifact,
                                error: e.to_string(),
                            },
                        );
                    }
                }
                Effect::Log(term) => self.record(agent, AgentEventKind::Log(term)),
            }
        }
    }

    fn record(&self, agent: &str, kind: AgentEventKind) {
        let mut events = self.events.lock().unwrap();
        let seq = events.len() as u64 + 1;
        events.push(AgentEvent {
            seq,
            agent: agent.to_string(),
            at_us: self.bus.clock().now_us(),
            kind,
        });
    }

    fn spawn_runner(inner: &Arc<Inner>, name: String) {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let me = inner.clone();
        let handle = std::thread::Builder::new()
            .name(format!("agent-{name}"))
            .spawn(move || {
                while !flag.load(Ordering::SeqCst) {
                    let seen = me.doorbell.generation();
                    match me.step(&name) {
                        Ok(true) => {}
                        _ => {
                            me.doorbell.wait_past(seen, IDLE_POLL);
                        }
                    }
                }
            })
            .expect("spawn agent runner");
        inner.runners.lock().unwrap().push((stop, handle));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acl::Performative;
    use crate::agent::reactive;

    #[test]
    fn spawn_runs_initial_effects() {
        let p = Platform::default();
        p.spawn_agent("b", reactive(|_, _| vec![])).unwrap();
        p.spawn_agent(
            "a",
            reactive(|_, _| vec![]).with_init(vec![Effect::tell("b", Term::atom("hi"))]),
        )
        .unwrap();
        assert_eq!(p.registry().mailbox_len("b").unwrap(), 1);
    }

    #[test]
    fn duplicate_agent_is_rejected() {
        let p = Platform::default();
        p.spawn_agent("production_agent", reactive(|_, _| vec![]))
            .unwrap();
        let err = p
            .spawn_agent("production_agent", reactive(|_, _| vec![]))
            .unwrap_err();
        assert!(matches!(
            err,
            PlatformError::Acl(AclError::DuplicateName(_))
        ));
    }

    #[test]
    fn ping_pong_settles_when_stepped() {
        let p = Platform::default();
        p.spawn_agent(
            "pong",
            reactive(|_, m| {
                let n = m.content.as_number().unwrap();
                vec![Effect::reply(m, Performative::Tell, Term::number(n + 1.0))]
            }),
        )
        .unwrap();
        p.spawn_agent(
            "ping",
            reactive(|_, m| match m.content.as_number() {
                Some(n) if n < 10.0 => {
                    vec![Effect::reply(m, Performative::Tell, Term::number(n + 1.0))]
                }
                _ => vec![Effect::log(m.content.clone())],
            })
            .with_init(vec![Effect::tell("pong", Term::number(0.0))]),
        )
        .unwrap();
        let steps = p.run_until_idle(1000);
        assert_eq!(steps, 12);
        assert_eq!(p.log_terms("ping"), vec![Term::number(11.0)]);
    }

    #[test]
    fn runners_process_concurrently_and_stop() {
        let p = Platform::default();
        p.spawn_agent(
            "sink",
            reactive(|_, m| vec![Effect::log(m.content.clone())]),
        )
        .unwrap();
        p.start().unwrap();
        for i in 0..20 {
            let m = p
                .registry()
                .compose("ext", "sink", Performative::Tell, Term::number(i as f64));
            p.registry().send_message(m).unwrap();
        }
        assert!(p.wait_quiescent(Duration::from_secs(5)));
        let seen: Vec<f64> = p
            .log_terms("sink")
            .iter()
            .map(|t| t.as_number().unwrap())
            .collect();
        assert_eq!(seen, (0..20).map(|i| i as f64).collect::<Vec<_>>());
        p.stop().unwrap();
    }

    #[test]
    fn failed_send_is_recorded() {
        let p = Platform::default();
        p.spawn_agent(
            "a",
            reactive(|_, _| vec![]).with_init(vec![Effect::tell("nobody", Term::atom("x"))]),
        )
        .unwrap();
        assert!(matches!(
            p.events()[0].kind,
            AgentEventKind::SendFailed { .. }
        ));
    }
}
