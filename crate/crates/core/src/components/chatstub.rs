//! `chatstub:bots/<token>?chatId=<id>`: stands in for chat-bot notification
//! services by appending each message to an inspectable transcript.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::required_param;
use crate::bus::{Component, EndpointError, Producer, RouteContext};
use crate::clock::Clock;
use crate::exchange::Exchange;
use crate::term::Term;
use crate::uri::EndpointUri;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRow {
    pub token: String,
    #[serde(rename = "chatId")]
    pub chat_id: String,
    pub text: String,
    /// Bus clock time in milliseconds.
    pub ts: u64,
}

#[derive(Debug, Default)]
pub struct TranscriptStore {
    rows: Mutex<Vec<TranscriptRow>>,
}

impl TranscriptStore {
    pub fn new() -> TranscriptStore {
        TranscriptStore::default()
    }

    pub fn append(&self, row: TranscriptRow) {
        self.rows.lock().unwrap().push(row);
    }

    pub fn rows(&self) -> Vec<TranscriptRow> {
        self.rows.lock().unwrap().clone()
    }

    pub fn rows_for_chat(&self, chat_id: &str) -> Vec<TranscriptRow> {
        self.rows
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.chat_id == chat_id)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.rows.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One JSON object per line.
    pub fn export_jsonl(&self) -> String {
        self.rows
            .lock()
            .unwrap()
            .iter()
            .map(|r| serde_json::to_string(r).expect("transcript rows serialize") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ChatStubComponent {
    store: Arc<TranscriptStore>,
}

impl ChatStubComponent {
    pub fn new(store: Arc<TranscriptStore>) -> ChatStubComponent {
        ChatStubComponent { store }
    }
}

impl Component for ChatStubComponent {
    fn create_producer(
        &self,
        uri: &EndpointUri,
        ctx: &RouteContext,
    ) -> Result<Box<dyn Producer>, EndpointError> {
        let token = match uri.path().strip_prefix("bots/") {
            Some(t) if !t.is_empty() => t.to_string(),
            _ => {
                return Err(EndpointError::InvalidParam(format!(
                    "chatstub path must be bots/<token>, got '{}'",
                    uri.path()
                )))
            }
        };
        Ok(Box::new(ChatStubProducer {
            token,
            chat_id: required_param(uri, "chatId")?.to_string(),
            store: self.store.clone(),
            clock: ctx.clock.clone(),
        }))
    }
}

struct ChatStubProducer {
    token: String,
    chat_id: String,
    store: Arc<TranscriptStore>,
    clock: Clock,
}

impl Producer for ChatStubProducer {
    fn send(&self, exchange: &Exchange) -> Result<(), EndpointError> {
        self.store.append(TranscriptRow {
            token: self.token.clone(),
            chat_id: self.chat_id.clone(),
            text: match &exchange.body {
                Term::Str(text) => text.clone(),
                other => other.render(),
            },
            ts: self.clock.now_ms(),
        });
        Ok(())
    }
}
