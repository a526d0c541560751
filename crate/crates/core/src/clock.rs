//! Wall-clock and logical time sources.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

/// A logical clock advanced explicitly by a driver. Waiters block until the
/// clock reaches their deadline.
#[derive(Debug, Default)]
pub struct SimClock {
    now_us: Mutex<u64>,
    advanced: Condvar,
}

impl SimClock {
    pub fn new() -> SimClock {
        SimClock::default()
    }

    pub fn now_us(&self) -> u64 {
        *self.now_us.lock().unwrap()
    }

    pub fn advance(&self, by: Duration) {
        let mut now = self.now_us.lock().unwrap();
        *now += by.as_micros() as u64;
        self.advanced.notify_all();
    }

    /// Wakes blocked waiters without moving time (used on shutdown).
    pub fn poke(&self) {
        let _guard = self.now_us.lock().unwrap();
        self.advanced.notify_all();
    }

    fn wait_until(&self, deadline_us: u64, stop: &AtomicBool) -> bool {
        let mut now = self.now_us.lock().unwrap();
        while *now < deadline_us {
            if stop.load(Ordering::Acquire) {
                return false;
            }
            now = self
                .advanced
                .wait_timeout(now, Duration::from_millis(50))
                .unwrap()
                .0;
        }
        !stop.load(Ordering::Acquire)
    }
}

#[derive(Debug, Clone)]
pub enum Clock {
    Wall(Instant),
    Simulated(Arc<SimClock>),
}

impl Default for Clock {
    fn default() -> Clock {
        Clock::wall()
    }
}

impl Clock {
    pub fn wall() -> Clock {
        Clock::Wall(Instant::now())
    }

    pub fn simulated() -> Clock {
        Clock::Simulated(Arc::new(SimClock::new()))
    }

    pub fn is_simulated(&self) -> bool {
        matches!(self, Clock::Simulated(_))
    }

    pub fn sim(&self) -> Option<&Arc<SimClock>> {
        match self {
            Clock::Simulated(s) => Some(s),
            Clock::Wall(_) => None,
        }
    }

    /// Microseconds since the clock's origin.
    pub fn now_us(&self) -> u64 {
        match self {
            Clock::Wall(start) => start.elapsed().as_micros() as u64,
            Clock::Simulated(s) => s.now_us(),
        }
    }

    pub fn now_ms(&self) -> u64 {
        self.now_us() / 1000
    }

    /// Blocks until the clock reads at least `deadline_us`. Returns false if
    /// `stop` was raised first.
    pub fn sleep_until(&self, deadline_us: u64, stop: &AtomicBool) -> bool {
        match self {
            Clock::Simulated(s) => s.wait_until(deadline_us, stop),
            Clock::Wall(_) => loop {
                if stop.load(Ordering::Acquire) {
                    return false;
                }
                let now = self.now_us();
                if now >= deadline_us {
                    return true;
                }
                let left = Duration::from_micros(deadline_us - now);
                std::thread::sleep(left.min(Duration::from_millis(20)));
            },
        }
    }
}
