//! Agent-to-agent messaging: speech-act messages, the agent registry with
//! per-agent mailboxes, and dummy agents standing in for external
//! autonomous entities.
//!
//! Delivery is local-first. A message to a local agent lands in its mailbox;
//! a message to a dummy agent is handed to the route the dummy is bound to.
//! Senders cannot tell the two apart beyond the outcome value.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::EndpointError;
use crate::exchange::ExchangeId;
use crate::notify::Doorbell;
use crate::term::Term;

/// Speech-act type. `tell` is the analogue of FIPA `inform` and `achieve` of
/// FIPA `request`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Performative {
    #[serde(rename = "tell")]
    Tell,
    #[serde(rename = "untell")]
    Untell,
    #[serde(rename = "achieve")]
    Achieve,
    #[serde(rename = "unachieve")]
    Unachieve,
    #[serde(rename = "askOne")]
    AskOne,
    #[serde(rename = "askAll")]
    AskAll,
}

impl Performative {
    pub const ALL: [Performative; 6] = [
        Performative::Tell,
        Performative::Untell,
        Performative::Achieve,
        Performative::Unachieve,
        Performative::AskOne,
        Performative::AskAll,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Performative::Tell => "tell",
            Performative::Untell => "untell",
            Performative::Achieve => "achieve",
            Performative::Unachieve => "unachieve",
            Performative::AskOne => "askOne",
            Performative::AskAll => "askAll",
        }
    }

    /// The closest FIPA-ACL communicative act.
    pub fn fipa_analogue(self) -> &'static str {
        match self {
            Performative::Tell => "inform",
            Performative::Untell => "disconfirm",
            Performative::Achieve => "request",
            Performative::Unachieve => "cancel",
            Performative::AskOne => "query-ref",
            Performative::AskAll => "query-ref",
        }
    }
}

impl fmt::Display for Performative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown performative '{0}'")]
pub struct UnknownPerformative(pub String);

impl FromStr for Performative {
    type Err = UnknownPerformative;

    fn from_str(s: &str) -> Result<Performative, UnknownPerformative> {
        Performative::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownPerformative(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AclMessage {
    pub msg_id: String,
    pub sender: String,
    pub receiver: String,
    pub performative: Performative,
    pub content: Term,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AclError {
    #[error("agent name '{0}' already registered")]
    DuplicateName(String),
    #[error("unknown receiver '{0}'")]
    UnknownReceiver(String),
    #[error("unknown agent '{0}'")]
    UnknownAgent(String),
    #[error("'{0}' is a dummy agent and has no mailbox")]
    NotLocalAgent(String),
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("route '{route_id}' bound to '{receiver}' refused the message: {error}")]
    RouteUnavailable {
        receiver: String,
        route_id: String,
        error: EndpointError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum DeliveryOutcome {
    Local,
    Routed {
        route_id: String,
        exchange_id: ExchangeId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    Local,
    Dummy,
}

/// Hand-off from a dummy agent to the consumer of its bound route.
pub type DummyInbox = Arc<dyn Fn(&AclMessage) -> Result<ExchangeId, EndpointError> + Send + Sync>;

enum Entry {
    Local { mailbox: VecDeque<AclMessage> },
    Dummy { route_id: String, inbox: DummyInbox },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeliveryRecord {
    pub message: AclMessage,
    pub outcome: DeliveryOutcome,
}

/// Directory of local and dummy agents.
pub struct AgentRegistry {
    run_id: String,
    msg_seq: AtomicU64,
    entries: Mutex<HashMap<String, Entry>>,
    log: Mutex<Vec<DeliveryRecord>>,
    doorbell: Option<Arc<Doorbell>>,
}

impl fmt::Debug for AgentRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentRegistry")
            .field("run_id", &self.run_id)
            .finish()
    }
}

impl AgentRegistry {
    pub fn new(run_id: impl Into<String>) -> AgentRegistry {
        AgentRegistry {
            run_id: run_id.into(),
            msg_seq: AtomicU64::new(0),
            entries: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
            doorbell: None,
        }
    }

    pub fn with_doorbell(mut self, doorbell: Arc<Doorbell>) -> AgentRegistry {
        self.doorbell = Some(doorbell);
        self
    }

    pub fn next_msg_id(&self) -> String {
        let n = self.msg_seq.fetch_add(1, Ordering::SeqCst) + 1;
        format!("{}-m{n}", self.run_id)
    }

    /// Builds a message with a fresh id.
    pub fn compose(
        &self,
        sender: impl Into<String>,
        receiver: impl Into<String>,
        performative: Performative,
        content: Term,
    ) -> AclMessage {
        AclMessage {
            msg_id: self.next_msg_id(),
            sender: sender.into(),
            receiver: receiver.into(),
            performative,
            content,
            in_reply_to: None,
        }
    }

    pub fn add_local(&self, name: &str) -> Result<(), AclError> {
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(name) {
            return Err(AclError::DuplicateName(name.to_string()));
        }
        entries.insert(
            name.to_string(),
            Entry::Local {
                mailbox: VecDeque::new(),
            },
        );
        Ok(())
    }

    pub fn register_dummy(
        &self,
        name: &str,
        route_id: &str,
        inbox: DummyInbox,
    ) -> Result<(), AclError> {
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(name) {
            return Err(AclError::DuplicateName(name.to_string()));
        }
        entries.insert(
            name.to_string(),
            Entry::Dummy {
                route_id: route_id.to_string(),
                inbox,
            },
        );
        Ok(())
    }

    /// Removes a dummy registration if it is still bound to `route_id`.
    pub fn unregister_dummy(&self, name: &str, route_id: &str) -> bool {
        let mut entries = self.entries.lock().unwrap();
        match entries.get(name) {
            Some(Entry::Dummy {
                route_id: bound, ..
            }) if bound == route_id => {
                entries.remove(name);
                true
            }
            _ => false,
        }
    }

    pub fn kind(&self, name: &str) -> Option<AgentKind> {
        self.entries.lock().unwrap().get(name).map(|e| match e {
            Entry::Local { .. } => AgentKind::Local,
            Entry::Dummy { .. } => AgentKind::Dummy,
        })
    }

    pub fn bound_route(&self, name: &str) -> Option<String> {
        match self.entries.lock().unwrap().get(name) {
            Some(Entry::Dummy { route_id, .. }) => Some(route_id.clone()),
            _ => None,
        }
    }

    pub fn dummy_names(&self) -> Vec<String> {
        let entries = self.entries.lock().unwrap();
        let mut names: Vec<_> = entries
            .iter()
            .filter(|(_, e)| matches!(e, Entry::Dummy { .. }))
            .map(|(n, _)| n.clone())
            .collect();
        names.sort();
        names
    }

    pub fn local_names(&self) -> Vec<String> {
        let entries = self.entries.lock().unwrap();
        let mut names: Vec<_> = entries
            .iter()
            .filter(|(_, e)| matches!(e, Entry::Local { .. }))
            .map(|(n, _)| n.clone())
            .collect();
        names.sort();
        names
    }

    pub fn send_message(&self, message: AclMessage) -> Result<DeliveryOutcome, AclError> {
        if message.sender.is_empty() || message.receiver.is_empty() {
            return Err(AclError::InvalidMessage(
                "sender and receiver must be non-empty".into(),
            ));
        }
        let mut entries = self.entries.lock().unwrap();
        let (route_id, inbox) = match entries.get_mut(&message.receiver) {
            None => return Err(AclError::UnknownReceiver(message.receiver)),
            Some(Entry::Local { mailbox }) => {
                mailbox.push_back(message.clone());
                // Logged under the registry lock so log order matches mailbox order.
                self.record(message, DeliveryOutcome::Local);
                drop(entries);
                if let Some(bell) = &self.doorbell {
                    bell.ring();
                }
                return Ok(DeliveryOutcome::Local);
            }
            Some(Entry::Dummy { route_id, inbox }) => (route_id.clone(), inbox.clone()),
        };
        drop(entries);
        let exchange_id = inbox(&message).map_err(|error| AclError::RouteUnavailable {
            receiver: message.receiver.clone(),
            route_id: route_id.clone(),
            error,
        })?;
        let outcome = DeliveryOutcome::Routed {
            route_id,
            exchange_id,
        };
        self.record(message, outcome.clone());
        Ok(outcome)
    }

    fn record(&self, message: AclMessage, outcome: DeliveryOutcome) {
        self.log
            .lock()
            .unwrap()
            .push(DeliveryRecord { message, outcome });
    }

    pub fn receive(&self, agent: &str) -> Result<Option<AclMessage>, AclError> {
        let mut entries = self.entries.lock().unwrap();
        match entries.get_mut(agent) {
            None => Err(AclError::UnknownAgent(agent.to_string())),
            Some(Entry::Dummy { .. }) => Err(AclError::NotLocalAgent(agent.to_string())),
            Some(Entry::Local { mailbox }) => Ok(mailbox.pop_front()),
        }
    }

    pub fn mailbox_len(&self, agent: &str) -> Result<usize, AclError> {
        let entries = self.entries.lock().unwrap();
        match entries.get(agent) {
            None => Err(AclError::UnknownAgent(agent.to_string())),
            Some(Entry::Dummy { .. }) => Err(AclError::NotLocalAgent(agent.to_string())),
            Some(Entry::Local { mailbox }) => Ok(mailbox.len()),
        }
    }

    /// Every successful delivery, in delivery order.
    pub fn delivery_log(&self) -> Vec<DeliveryRecord> {
        self.log.lock().unwrap().clone()
    }
}
