use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// Generation counter that wakes agent runners when a mailbox or percept queue
/// receives something.
#[derive(Debug, Default)]
pub struct Doorbell {
    generation: Mutex<u64>,
    rung: Condvar,
}

impl Doorbell {
    pub fn new() -> Doorbell {
        Doorbell::default()
    }

    pub fn ring(&self) {
        *self.generation.lock().unwrap() += 1;
        self.rung.notify_all();
    }

    pub fn generation(&self) -> u64 {
        *self.generation.lock().unwrap()
    }

    /// Waits until the generation moves past `seen` or the timeout expires.
    pub fn wait_past(&self, seen: u64, timeout: Duration) -> u64 {
        let guard = self.generation.lock().unwrap();
        let (guard, _) = self
            .rung
            .wait_timeout_while(guard, timeout, |g| *g == seen)
            .unwrap();
        *guard
    }
}
