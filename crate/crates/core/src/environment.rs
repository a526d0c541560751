//! Agent-to-environment side: workspaces holding artifacts that expose
//! operations, observable properties and signals.
//!
//! Operations on one artifact run under that artifact's lock, so their effects
//! are serializable. Observers receive percepts through per-agent queues that
//! they poll.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;
use thiserror::Error;

use crate::exchange::Headers;
use crate::notify::Doorbell;
use crate::term::Term;

pub const DEFAULT_WORKSPACE: &str = "main";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("name '{0}' already in use")]
    DuplicateName(String),
    #[error("unknown workspace '{0}'")]
    UnknownWorkspace(String),
    #[error("unknown artifact '{0}'")]
    UnknownArtifact(String),
    #[error("artifact '{artifact}' has no operation '{operation}'")]
    UnknownOperation { artifact: String, operation: String },
    #[error("operation failed: {0}")]
    OperationFailed(Term),
    #[error("artifact '{0}' already has an attached consumer")]
    AlreadyAttached(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Origin {
    Agent(String),
    Route(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperationRequest {
    pub workspace: String,
    pub artifact_name: String,
    pub operation_name: String,
    pub params: Vec<Term>,
    pub origin: Origin,
}

impl OperationRequest {
    pub fn new(
        workspace: impl Into<String>,
        artifact: impl Into<String>,
        operation: impl Into<String>,
        params: Vec<Term>,
        origin: Origin,
    ) -> OperationRequest {
        OperationRequest {
            workspace: workspace.into(),
            artifact_name: artifact.into(),
            operation_name: operation.into(),
            params,
            origin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutboundPayload {
    pub headers: Headers,
    pub body: Term,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum OpStatus {
    Ok,
    Failed(Term),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpResult {
    pub status: OpStatus,
    pub property_updates: Vec<(String, Term)>,
    pub signals: Vec<(String, Term)>,
    pub outbound: Vec<OutboundPayload>,
}

impl OpResult {
    pub fn ok() -> OpResult {
        OpResult {
            status: OpStatus::Ok,
            property_updates: Vec::new(),
            signals: Vec::new(),
            outbound: Vec::new(),
        }
    }

    pub fn failed(reason: Term) -> OpResult {
        OpResult {
            status: OpStatus::Failed(reason),
            ..OpResult::ok()
        }
    }

    pub fn update(mut self, property: impl Into<String>, value: Term) -> OpResult {
        self.property_updates.push((property.into(), value));
        self
    }

    pub fn signal(mut self, label: impl Into<String>, payload: Term) -> OpResult {
        self.signals.push((label.into(), payload));
        self
    }

    pub fn send(mut self, headers: Headers, body: Term) -> OpResult {
        self.outbound.push(OutboundPayload { headers, body });
        self
    }

    pub fn is_ok(&self) -> bool {
        self.status == OpStatus::Ok
    }
}

/// What an operation sees of its artifact: the observable properties (change
/// them through `OpResult::update`) and private state it may edit directly.
pub struct OpState<'a> {
    pub properties: &'a BTreeMap<String, Term>,
    pub private: &'a mut BTreeMap<String, Term>,
}

pub type Operation = Arc<dyn Fn(&[Term], &mut OpState<'_>) -> OpResult + Send + Sync>;

/// Receives outbound payloads. Returning the payload refuses it and leaves it
/// queued.
pub type OutboxListener = Arc<dyn Fn(OutboundPayload) -> Result<(), OutboundPayload> + Send + Sync>;

#[derive(Clone, Default)]
pub struct ArtifactTemplate {
    properties: BTreeMap<String, Term>,
    private: BTreeMap<String, Term>,
    operations: HashMap<String, Operation>,
}

impl fmt::Debug for ArtifactTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ops: Vec<_> = self.operations.keys().collect();
        ops.sort();
        f.debug_struct("ArtifactTemplate")
            .field("properties", &self.properties)
            .field("operations", &ops)
            .finish()
    }
}

impl ArtifactTemplate {
    pub fn new() -> ArtifactTemplate {
        ArtifactTemplate::default()
    }

    pub fn property(mut self, name: impl Into<String>, initial: Term) -> ArtifactTemplate {
        self.properties.insert(name.into(), initial);
        self
    }

    pub fn private(mut self, name: impl Into<String>, value: Term) -> ArtifactTemplate {
        self.private.insert(name.into(), value);
        self
    }

    pub fn operation<F>(mut self, name: impl Into<String>, f: F) -> ArtifactTemplate
    where
        F: Fn(&[Term], &mut OpState<'_>) -> OpResult + Send + Sync + 'static,
    {
        self.operations.insert(name.into(), Arc::new(f));
        self
    }
}

struct Artifact {
    name: String,
    operations: HashMap<String, Operation>,
    properties: BTreeMap<String, Term>,
    private: BTreeMap<String, Term>,
    observers: BTreeSet<String>,
    outbox: VecDeque<OutboundPayload>,
    listener: Option<OutboxListener>,
}

impl Artifact {
    fn flush_outbox(&mut self) {
        let Some(listener) = self.listener.clone() else {
            return;
        };
        while let Some(payload) = self.outbox.pop_front() {
            if let Err(refused) = listener(payload) {
                self.outbox.push_front(refused);
                break;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PerceptKind {
    PropertyChanged {
        property: String,
        old: Option<Term>,
        new: Term,
    },
    Signal {
        label: String,
        payload: Term,
    },
    /// An operation requested by this agent failed.
    OperationFailed {
        operation: String,
        reason: Term,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Percept {
    pub agent: String,
    pub workspace: String,
    pub artifact: String,
    pub kind: PerceptKind,
    pub seq: u64,
}

#[derive(Default)]
struct PerceptQueue {
    queue: VecDeque<Percept>,
    next_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallRecord {
    pub workspace: String,
    pub artifact: String,
    pub operation: String,
    pub params: Vec<Term>,
    pub origin: Origin,
    pub ok: bool,
}

type ArtifactCell = Arc<Mutex<Artifact>>;

/// The shared environment: workspaces, artifacts and percept queues.
pub struct Environment {
    workspaces: RwLock<BTreeMap<String, RwLock<HashMap<String, ArtifactCell>>>>,
    percepts: Mutex<HashMap<String, PerceptQueue>>,
    calls: Mutex<Vec<CallRecord>>,
    doorbell: Option<Arc<Doorbell>>,
}

impl fmt::Debug for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ws: Vec<_> = self.workspaces.read().unwrap().keys().cloned().collect();
        f.debug_struct("Environment")
            .field("workspaces", &ws)
            .finish()
    }
}

impl Default for Environment {
    fn default() -> Environment {
        Environment::new()
    }
}

impl Environment {
    /// Creates an environment holding the default workspace.
    pub fn new() -> Environment {
        let env = Environment {
            workspaces: RwLock::new(BTreeMap::new()),
            percepts: Mutex::new(HashMap::new()),
            calls: Mutex::new(Vec::new()),
            doorbell: None,
        };
        env.create_workspace(DEFAULT_WORKSPACE)
            .expect("fresh environment");
        env
    }

    pub fn with_doorbell(mut self, doorbell: Arc<Doorbell>) -> Environment {
        self.doorbell = Some(doorbell);
        self
    }

    pub fn create_workspace(&self, name: &str) -> Result<(), EnvError> {
        let mut ws = self.workspaces.write().unwrap();
        if ws.contains_key(name) {
            return Err(EnvError::DuplicateName(name.to_string()));
        }
        ws.insert(name.to_string(), RwLock::new(HashMap::new()));
        Ok(())
    }

    pub fn has_workspace(&self, name: &str) -> bool {
        self.workspaces.read().unwrap().contains_key(name)
    }

    pub fn create_artifact(
        &self,
        workspace: &str,
        name: &str,
        template: ArtifactTemplate,
    ) -> Result<(), EnvError> {
        let ws = self.workspaces.read().unwrap();
        let artifacts = ws
            .get(workspace)
            .ok_or_else(|| EnvError::UnknownWorkspace(workspace.to_string()))?;
        let mut artifacts = artifacts.write().unwrap();
        if artifacts.contains_key(name) {
            return Err(EnvError::DuplicateName(name.to_string()));
        }
        let artifact = Artifact {
            name: name.to_string(),
            operations: template.operations,
            properties: template.properties,
            private: template.private,
            observers: BTreeSet::new(),
            outbox: VecDeque::new(),
            listener: None,
        };
        artifacts.insert(name.to_string(), Arc::new(Mutex::new(artifact)));
        Ok(())
    }

    fn artifact(&self, workspace: &str, name: &str) -> Result<ArtifactCell, EnvError> {
        let ws = self.workspaces.read().unwrap();
        let artifacts = ws
            .get(workspace)
            .ok_or_else(|| EnvError::UnknownWorkspace(workspace.to_string()))?;
        let artifacts = artifacts.read().unwrap();
        artifacts
            .get(name)
            .cloned()
            .ok_or_else(|| EnvError::UnknownArtifact(name.to_string()))
    }

    pub fn has_artifact(&self, workspace: &str, name: &str) -> bool {
        self.artifact(workspace, name).is_ok()
    }

    pub fn property(
        &self,
        workspace: &str,
        artifact: &str,
        property: &str,
    ) -> Result<Option<Term>, EnvError> {
        let cell = self.artifact(workspace, artifact)?;
        let a = cell.lock().unwrap();
        Ok(a.properties.get(property).cloned())
    }

    pub fn properties(
        &self,
        workspace: &str,
        artifact: &str,
    ) -> Result<BTreeMap<String, Term>, EnvError> {
        let cell = self.artifact(workspace, artifact)?;
        let a = cell.lock().unwrap();
        Ok(a.properties.clone())
    }

    pub fn observers(&self, workspace: &str, artifact: &str) -> Result<Vec<String>, EnvError> {
        let cell = self.artifact(workspace, artifact)?;
        let a = cell.lock().unwrap();
        Ok(a.observers.iter().cloned().collect())
    }

    fn push_percepts(
        &self,
        agent: &str,
        percepts: impl IntoIterator<Item = (String, String, PerceptKind)>,
    ) -> Vec<Percept> {
        let mut queues = self.percepts.lock().unwrap();
        let q = queues.entry(agent.to_string()).or_default();
        let mut pushed = Vec::new();
        for (workspace, artifact, kind) in percepts {
            q.next_seq += 1;
            let p = Percept {
                agent: agent.to_string(),
                workspace,
                artifact,
                kind,
                seq: q.next_seq,
            };
            q.queue.push_back(p.clone());
            pushed.push(p);
        }
        pushed
    }

    fn ring(&self) {
        if let Some(bell) = &self.doorbell {
            bell.ring();
        }
    }

    /// Adds `agent` to the artifact's observers. Returns, and also queues for
    /// the agent, one snapshot percept per current observable property.
    pub fn focus(
        &self,
        agent: &str,
        workspace: &str,
        artifact: &str,
    ) -> Result<Vec<Percept>, EnvError> {
        let cell = self.artifact(workspace, artifact)?;
        let mut a = cell.lock().unwrap();
        a.observers.insert(agent.to_string());
        let snapshot: Vec<_> = a
            .properties
            .iter()
            .map(|(k, v)| {
                (
                    workspace.to_string(),
                    a.name.clone(),
                    PerceptKind::PropertyChanged {
                        property: k.clone(),
                        old: None,
                        new: v.clone(),
                    },
                )
            })
            .collect();
        let pushed = self.push_percepts(agent, snapshot);
        drop(a);
        self.ring();
        Ok(pushed)
    }

    pub fn stop_focus(&self, agent: &str, workspace: &str, artifact: &str) -> Result<(), EnvError> {
        let cell = self.artifact(workspace, artifact)?;
        cell.lock().unwrap().observers.remove(agent);
        Ok(())
    }

    pub fn take_percept(&self, agent: &str) -> Option<Percept> {
        self.percepts
            .lock()
            .unwrap()
            .get_mut(agent)
            .and_then(|q| q.queue.pop_front())
    }

    pub fn pending_percepts(&self, agent: &str) -> usize {
        self.percepts
            .lock()
            .unwrap()
            .get(agent)
            .map_or(0, |q| q.queue.len())
    }

    /// Runs an operation atomically on its artifact and fans its effects out.
    ///
    /// Failures are also reported to the origin when it is an agent, as an
    /// `OperationFailed` percept.
    pub fn execute_op(&self, req: &OperationRequest) -> Result<OpResult, EnvError> {
        let outcome = self.execute_inner(req);
        if let (Err(e), Origin::Agent(agent)) = (&outcome, &req.origin) {
            let reason = match e {
                EnvError::OperationFailed(reason) => reason.clone(),
                other => Term::string(other.to_string()),
            };
            self.push_percepts(
                agent,
                [(
                    req.workspace.clone(),
                    req.artifact_name.clone(),
                    PerceptKind::OperationFailed {
                        operation: req.operation_name.clone(),
                        reason,
                    },
                )],
            );
            self.ring();
        }
        outcome
    }

    fn execute_inner(&self, req: &OperationRequest) -> Result<OpResult, EnvError> {
        if req.artifact_name.is_empty() || req.operation_name.is_empty() {
            return Err(EnvError::InvalidRequest(
                "artifact and operation names must be non-empty".into(),
            ));
        }
        let cell = self.artifact(&req.workspace, &req.artifact_name)?;
        let mut guard = cell.lock().unwrap();
        let a = &mut *guard;
        let op = a
            .operations
            .get(&req.operation_name)
            .cloned()
            .ok_or_else(|| EnvError::UnknownOperation {
                artifact: req.artifact_name.clone(),
                operation: req.operation_name.clone(),
            })?;
        let mut private = a.private.clone();
        let result = op(
            &req.params,
            &mut OpState {
                properties: &a.properties,
                private: &mut private,
            },
        );
        self.calls.lock().unwrap().push(CallRecord {
            workspace: req.workspace.clone(),
            artifact: req.artifact_name.clone(),
            operation: req.operation_name.clone(),
            params: req.params.clone(),
            origin: req.origin.clone(),
            ok: result.is_ok(),
        });
        if let OpStatus::Failed(reason) = &result.status {
            return Err(EnvError::OperationFailed(reason.clone()));
        }
        a.private = private;

        let mut events = Vec::new();
        for (prop, new) in &result.property_updates {
            let old = a.properties.insert(prop.clone(), new.clone());
            if old.as_ref() != Some(new) {
                events.push(PerceptKind::PropertyChanged {
                    property: prop.clone(),
                    old,
                    new: new.clone(),
                });
            }
        }
        for (label, payload) in &result.signals {
            events.push(PerceptKind::Signal {
                label: label.clone(),
                payload: payload.clone(),
            });
        }
        if !events.is_empty() {
            for observer in &a.observers {
                let batch = events
                    .iter()
                    .map(|k| (req.workspace.clone(), a.name.clone(), k.clone()));
                self.push_percepts(observer, batch);
            }
        }
        a.outbox.extend(result.outbound.iter().cloned());
        a.flush_outbox();
        drop(guard);
        if !events.is_empty() {
            self.ring();
        }
        Ok(result)
    }

    /// Queues a payload for the route consumer attached to the artifact.
    pub fn artifact_send(
        &self,
        workspace: &str,
        artifact: &str,
        headers: Headers,
        body: Term,
    ) -> Result<(), EnvError> {
        let cell = self.artifact(workspace, artifact)?;
        let mut a = cell.lock().unwrap();
        a.outbox.push_back(OutboundPayload { headers, body });
        a.flush_outbox();
        Ok(())
    }

    pub fn outbox_len(&self, workspace: &str, artifact: &str) -> Result<usize, EnvError> {
        let cell = self.artifact(workspace, artifact)?;
        let a = cell.lock().unwrap();
        Ok(a.outbox.len())
    }

    /// Attaches the single consumer of an artifact's outbox and hands it
    /// everything queued so far.
    pub fn attach_outbox(
        &self,
        workspace: &str,
        artifact: &str,
        listener: OutboxListener,
    ) -> Result<(), EnvError> {
        let cell = self.artifact(workspace, artifact)?;
        let mut a = cell.lock().unwrap();
        if a.listener.is_some() {
            return Err(EnvError::AlreadyAttached(artifact.to_string()));
        }
        a.listener = Some(listener);
        a.flush_outbox();
        Ok(())
    }

    pub fn detach_outbox(&self, workspace: &str, artifact: &str) -> Result<(), EnvError> {
        let cell = self.artifact(workspace, artifact)?;
        cell.lock().unwrap().listener = None;
        Ok(())
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self, workspace: &str, artifact: &str) -> usize {
        self.calls
            .lock()
            .unwrap()
            .iter()
            .filter(|c| c.workspace == workspace && c.artifact == artifact)
            .count()
    }
}

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance between two (lat, lon) points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = ((lat2 - lat1) / 2.0).sin();
    let dlon = ((lon2 - lon1) / 2.0).sin();
    let h = dlat * dlat + (lat1.cos() * lat2.cos()) * dlon * dlon;
    2.0 * EARTH_RADIUS_KM * h.sqrt().atan2((1.0 - h).max(0.0).sqrt())
}

fn coordinates(params: &[Term]) -> Option<(f64, f64)> {
    match params {
        [lat, lon] => Some((lat.as_number()?, lon.as_number()?)),
        [Term::List(items)] => coordinates(items),
        [t] => match t.as_struct() {
            Some((_, args)) if args.len() == 2 => coordinates(args),
            _ => None,
        },
        _ => None,
    }
}

/// Tracker artifact: `giveDistance(lat, lon)` updates `distanceKm` and signals
/// `near_destination` once the position is closer than the threshold.
///
/// The position may also be given as a single `[lat, lon]` list or a
/// two-argument structure such as `pos(lat, lon)`.
pub fn tracker_template(destination: (f64, f64), threshold_km: f64) -> ArtifactTemplate {
    ArtifactTemplate::new()
        .property(
            "destination",
            Term::compound(
                "pos",
                vec![Term::number(destination.0), Term::number(destination.1)],
            ),
        )
        .private("lat0", Term::number(destination.0))
        .private("lon0", Term::number(destination.1))
        .private("thresholdKm", Term::number(threshold_km))
        .operation("giveDistance", |params, state| {
            let Some((lat, lon)) = coordinates(params) else {
                return OpResult::failed(Term::atom("bad_coordinates"));
            };
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return OpResult::failed(Term::atom("bad_coordinates"));
            }
            let num = |k: &str| {
                state
                    .private
                    .get(k)
                    .and_then(Term::as_number)
                    .unwrap_or(f64::NAN)
            };
            let dest = (num("lat0"), num("lon0"));
            let threshold = num("thresholdKm");
            let d = haversine_km((lat, lon), dest);
            let result = OpResult::ok().update("distanceKm", Term::number(d));
            if d < threshold {
                result.signal("near_destination", Term::number(d))
            } else {
                result
            }
        })
}
