mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{install, route};
use masbus::components::TimerComponent;
use masbus::{Bus, BusConfig, Clock, Term};

fn timer_bus(clock: Clock) -> (Bus, common::Collector) {
    let bus = Bus::new(BusConfig {
        clock,
        ..BusConfig::default()
    });
    bus.register_component("timer", Arc::new(TimerComponent))
        .unwrap();
    let (_, collected) = install(&bus);
    (bus, collected)
}

#[test]
fn wall_clock_timer_ticks_at_its_period() {
    let (bus, collected) = timer_bus(Clock::wall());
    bus.add_route(route("t", "timer:beat?periodMs=10", &["collect:out"]))
        .unwrap();
    let started = Instant::now();
    bus.start().unwrap();
    std::thread::sleep(Duration::from_millis(100).saturating_sub(started.elapsed()));
    bus.stop().unwrap();
    let got = collected.get("out");
    assert!((8..=12).contains(&got.len()), "{} ticks", got.len());
    for (i, ex) in got.iter().enumerate() {
        assert_eq!(ex.body, Term::number(i as f64));
        assert_eq!(ex.header("timerName"), Some(&Term::string("beat")));
    }
}

#[test]
fn simulated_timer_follows_the_logical_clock() {
    let clock = Clock::simulated();
    let (bus, collected) = timer_bus(clock.clone());
    bus.add_route(route("t", "timer:beat?periodMs=10", &["collect:out"]))
        .unwrap();
    bus.start().unwrap();
    std::thread::sleep(Duration::from_millis(30));
    assert!(collected.get("out").is_empty());
    clock.sim().unwrap().advance(Duration::from_millis(50));
    assert_eq!(
        collected.wait_for("out", 5, Duration::from_secs(5)).len(),
        5
    );
    std::thread::sleep(Duration::from_millis(30));
    bus.stop().unwrap();
    assert_eq!(collected.get("out").len(), 5);
}

#[test]
fn repeat_count_bounds_the_ticks() {
    let clock = Clock::simulated();
    let (bus, collected) = timer_bus(clock.clone());
    bus.add_route(route(
        "t",
        "timer:once?periodMs=10&repeatCount=3",
        &["collect:out"],
    ))
    .unwrap();
    bus.start().unwrap();
    clock.sim().unwrap().advance(Duration::from_secs(1));
    collected.wait_for("out", 3, Duration::from_secs(5));
    std::thread::sleep(Duration::from_millis(30));
    bus.stop().unwrap();
    let bodies: Vec<_> = collected.get("out").into_iter().map(|e| e.body).collect();
    assert_eq!(bodies, [0.0, 1.0, 2.0].map(Term::number));
}

#[test]
fn zero_period_is_rejected() {
    let (bus, _) = timer_bus(Clock::wall());
    bus.add_route(route("t", "timer:x?periodMs=0", &["collect:out"]))
        .unwrap();
    assert!(bus.start().is_err());
}
