use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::term::Term;

pub type Headers = BTreeMap<String, Term>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExchangeId(String);

impl ExchangeId {
    pub(crate) fn new(run_id: &str, seq: u64) -> ExchangeId {
        ExchangeId(format!("{run_id}-x{seq}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The bus-wide sequence number embedded in the id.
    pub fn seq(&self) -> Option<u64> {
        self.0.rsplit_once("-x")?.1.parse().ok()
    }
}

impl fmt::Display for ExchangeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The envelope moved from a route's consumer to its producers.
///
/// Identity and trace are owned by the bus: processors may rewrite headers and
/// body but the trace only ever grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    id: ExchangeId,
    pub headers: Headers,
    pub body: Term,
    created_at_us: u64,
    trace: Vec<String>,
}

impl Exchange {
    pub(crate) fn new(
        id: ExchangeId,
        headers: Headers,
        body: Term,
        created_at_us: u64,
    ) -> Exchange {
        Exchange {
            id,
            headers,
            body,
            created_at_us,
            trace: Vec::new(),
        }
    }

    pub fn id(&self) -> &ExchangeId {
        &self.id
    }

    pub fn created_at_us(&self) -> u64 {
        self.created_at_us
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn header(&self, name: &str) -> Option<&Term> {
        self.headers.get(name)
    }

    pub(crate) fn visit(&mut self, endpoint: String) {
        self.trace.push(endpoint);
    }
}
