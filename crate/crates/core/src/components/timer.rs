//! `timer:<name>?periodMs=N[&repeatCount=K]`: emits `number(tick_index)` every
//! N milliseconds of bus clock time, forever or K times.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::bus::{Component, Consumer, EndpointError, ExchangeSink, RouteContext};
use crate::clock::Clock;
use crate::exchange::Headers;
use crate::term::Term;
use crate::uri::EndpointUri;

#[derive(Debug, Clone, Copy, Default)]
pub struct TimerComponent;

struct TimerConsumer {
    name: String,
    period_us: u64,
    repeat: u64,
    clock: Clock,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

fn numeric_param(uri: &EndpointUri, key: &str, default: u64) -> Result<u64, EndpointError> {
    match uri.param(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| EndpointError::InvalidParam(format!("{key}={v}"))),
    }
}

impl Component for TimerComponent {
    fn create_consumer(
        &self,
        uri: &EndpointUri,
        ctx: &RouteContext,
    ) -> Result<Box<dyn Consumer>, EndpointError> {
        let period_ms = numeric_param(uri, "periodMs", 1000)?;
        if period_ms == 0 {
            return Err(EndpointError::InvalidParam(
                "periodMs must be positive".into(),
            ));
        }
        Ok(Box::new(TimerConsumer {
            name: uri.path().to_string(),
            period_us: period_ms * 1000,
            repeat: numeric_param(uri, "repeatCount", 0)?,
            clock: ctx.clock.clone(),
            stop: Arc::new(AtomicBool::new(false)),
            thread: None,
        }))
    }
}

impl Consumer for TimerConsumer {
    fn start(&mut self, sink: ExchangeSink) -> Result<(), EndpointError> {
        let clock = self.clock.clone();
        let stop = self.stop.clone();
        let (period, repeat) = (self.period_us, self.repeat);
        let name = self.name.clone();
        let origin = clock.now_us();
        let handle = std::thread::Builder::new()
            .name(format!("timer-{name}"))
            .spawn(move || {
                let mut tick: u64 = 0;
                while repeat == 0 || tick < repeat {
                    if !clock.sleep_until(origin + (tick + 1) * period, &stop) {
                        return;
                    }
                    let mut headers = Headers::new();
                    headers.insert("timerName".into(), Term::string(name.clone()));
                    if sink.submit(headers, Term::number(tick as f64)).is_err() {
                        return;
                    }
                    tick += 1;
                }
            })
            .map_err(|e| EndpointError::Io(e.to_string()))?;
        self.thread = Some(handle);
        Ok(())
    }

    fn stop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(sim) = self.clock.sim() {
            sim.poke();
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
