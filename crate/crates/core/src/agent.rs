//! Reactive agent behaviors.
//!
//! Agents here are deterministic reaction functions over messages and
//! percepts. A reaction returns effects; the platform carries them out after
//! the reaction returns, so a behavior never touches the registry or the
//! environment directly.

use crate::acl::{AclMessage, Performative};
use crate::environment::{OperationRequest, Origin, Percept};
use crate::term::Term;

/// A message an agent wants sent. The platform fills in id and sender.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub receiver: String,
    pub performative: Performative,
    pub content: Term,
    pub in_reply_to: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Send(Outgoing),
    /// The request's origin is overwritten with the acting agent.
    ArtifactOp(OperationRequest),
    Focus {
        workspace: String,
        artifact: String,
    },
    Log(Term),
}

impl Effect {
    pub fn send(receiver: impl Into<String>, performative: Performative, content: Term) -> Effect {
        Effect::Send(Outgoing {
            receiver: receiver.into(),
            performative,
            content,
            in_reply_to: None,
        })
    }

    pub fn tell(receiver: impl Into<String>, content: Term) -> Effect {
        Effect::send(receiver, Performative::Tell, content)
    }

    pub fn achieve(receiver: impl Into<String>, content: Term) -> Effect {
        Effect::send(receiver, Performative::Achieve, content)
    }

    /// Answers `to`, addressed to its sender.
    pub fn reply(to: &AclMessage, performative: Performative, content: Term) -> Effect {
        Effect::Send(Outgoing {
            receiver: to.sender.clone(),
            performative,
            content,
            in_reply_to: Some(to.msg_id.clone()),
        })
    }

    pub fn op(
        workspace: impl Into<String>,
        artifact: impl Into<String>,
        operation: impl Into<String>,
        params: Vec<Term>,
    ) -> Effect {
        Effect::ArtifactOp(OperationRequest::new(
            workspace,
            artifact,
            operation,
            params,
            Origin::Agent(String::new()),
        ))
    }

    pub fn focus(workspace: impl Into<String>, artifact: impl Into<String>) -> Effect {
        Effect::Focus {
            workspace: workspace.into(),
            artifact: artifact.into(),
        }
    }

    pub fn log(term: Term) -> Effect {
        Effect::Log(term)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AgentContext<'a> {
    pub name: &'a str,
    pub now_ms: u64,
}

pub trait AgentBehavior: Send {
    /// Effects run once, synchronously, when the agent is spawned.
    fn init(&mut self, _ctx: &AgentContext<'_>) -> Vec<Effect> {
        Vec::new()
    }

    fn on_message(&mut self, ctx: &AgentContext<'_>, message: &AclMessage) -> Vec<Effect>;

    fn on_percept(&mut self, _ctx: &AgentContext<'_>, _percept: &Percept) -> Vec<Effect> {
        Vec::new()
    }
}

/// A behavior made from a message-reaction closure.
pub struct Reactive<F> {
    initial: Vec<Effect>,
    react: F,
}

pub fn reactive<F>(react: F) -> Reactive<F>
where
    F: FnMut(&AgentContext<'_>, &AclMessage) -> Vec<Effect> + Send,
{
    Reactive {
        initial: Vec::new(),
        react,
    }
}

impl<F> Reactive<F> {
    pub fn with_init(mut self, effects: Vec<Effect>) -> Reactive<F> {
        self.initial = effects;
        self
    }
}

impl<F> AgentBehavior for Reactive<F>
where
    F: FnMut(&AgentContext<'_>, &AclMessage) -> Vec<Effect> + Send,
{
    fn init(&mut self, _ctx: &AgentContext<'_>) -> Vec<Effect> {
        std::mem::take(&mut self.initial)
    }

    fn on_message(&mut self, ctx: &AgentContext<'_>, message: &AclMessage) -> Vec<Effect> {
        (self.react)(ctx, message)
    }
}
