mod common;

use std::sync::Arc;
use std::time::Duration;

use common::{install, route};
use masbus::bus::DeadLetterReason;
use masbus::components::DirectComponent;
use masbus::{
    Bus, BusConfig, BusError, EndpointError, Headers, ProcessorSpec, RouteBuilder, RouteDefinition,
    Term,
};

fn bus_with_drain(drain: Duration) -> Bus {
    Bus::new(BusConfig {
        drain_timeout: drain,
        ..BusConfig::default()
    })
}

#[test]
fn injected_exchange_is_delivered_before_stop_returns() {
    let bus = Bus::default();
    let (feeds, collected) = install(&bus);
    bus.add_route(route("r", "feed:in", &["collect:out"]))
        .unwrap();
    bus.start().unwrap();
    feeds
        .sink("in")
        .submit(Headers::new(), Term::atom("x"))
        .unwrap();
    bus.stop().unwrap();
    assert_eq!(collected.get("out").len(), 1);
    assert_eq!(bus.report().delivered, 1);
    assert!(bus.report().dropped.is_empty());
}

#[test]
fn slow_transform_beyond_drain_timeout_is_recorded_as_dropped() {
    let bus = bus_with_drain(Duration::from_millis(50));
    let (feeds, collected) = install(&bus);
    bus.register_transform("slow", |_| {
        std::thread::sleep(Duration::from_millis(200));
        Ok(())
    });
    let def = RouteBuilder::new("r")
        .from("feed:in")
        .transform("slow")
        .to("collect:out")
        .build()
        .unwrap();
    bus.add_route(def).unwrap();
    bus.start().unwrap();
    let sink = feeds.sink("in");
    for i in 0..3 {
        sink.submit(Headers::new(), Term::number(i as f64)).unwrap();
    }
    bus.stop().unwrap();
    std::thread::sleep(Duration::from_millis(300));
    let report = bus.report();
    assert!(!report.dropped.is_empty());
    assert_eq!(collected.get("out").len() + report.dropped.len(), 3);
    assert_eq!(report.delivered as usize, collected.get("out").len());
}

#[test]
fn slow_transform_within_drain_timeout_completes() {
    let bus = bus_with_drain(Duration::from_secs(5));
    let (feeds, collected) = install(&bus);
    bus.register_transform("slow", |_| {
        std::thread::sleep(Duration::from_millis(30));
        Ok(())
    });
    let def = RouteBuilder::new("r")
        .from("feed:in")
        .transform("slow")
        .to("collect:out")
        .build()
        .unwrap();
    bus.add_route(def).unwrap();
    bus.start().unwrap();
    for _ in 0..3 {
        feeds
            .sink("in")
            .submit(Headers::new(), Term::atom("x"))
            .unwrap();
    }
    bus.stop().unwrap();
    assert_eq!(collected.get("out").len(), 3);
    assert!(bus.report().dropped.is_empty());
}

#[test]
fn set_header_reaches_producer() {
    let bus = Bus::default();
    let (feeds, collected) = install(&bus);
    let def = RouteBuilder::new("r")
        .from("feed:in")
        .set_header("OperationName", Term::atom("giveDistance"))
        .to("collect:out")
        .build()
        .unwrap();
    bus.add_route(def).unwrap();
    bus.start().unwrap();
    feeds
        .sink("in")
        .submit(Headers::new(), Term::atom("x"))
        .unwrap();
    bus.stop().unwrap();
    let got = collected.get("out");
    assert_eq!(
        got[0].header("OperationName"),
        Some(&Term::atom("giveDistance"))
    );
}

#[test]
fn identity_pipeline_changes_only_the_trace() {
    let bus = Bus::default();
    let (feeds, collected) = install(&bus);
    bus.add_route(route("r", "feed:in", &["collect:out"]))
        .unwrap();
    bus.start().unwrap();
    let mut headers = Headers::new();
    headers.insert("k".into(), Term::number(1.0));
    let body = Term::compound("f", vec![Term::string("s")]);
    feeds
        .sink("in")
        .submit(headers.clone(), body.clone())
        .unwrap();
    bus.stop().unwrap();
    let got = &collected.get("out")[0];
    assert_eq!(got.headers, headers);
    assert_eq!(got.body, body);
    assert_eq!(got.trace(), ["feed:in", "collect:out"]);
}

#[test]
fn multicast_reaches_every_producer_in_order() {
    let bus = Bus::default();
    let (feeds, collected) = install(&bus);
    bus.add_route(route("r", "feed:in", &["collect:a", "collect:b"]))
        .unwrap();
    let traces = Arc::new(std::sync::Mutex::new(Vec::new()));
    let t = traces.clone();
    bus.set_delivery_observer(Some(Arc::new(move |d| {
        t.lock().unwrap().push(d.trace.clone())
    })));
    bus.start().unwrap();
    feeds
        .sink("in")
        .submit(Headers::new(), Term::atom("x"))
        .unwrap();
    bus.stop().unwrap();
    assert_eq!(collected.get("a").len(), 1);
    assert_eq!(collected.get("b").len(), 1);
    assert_eq!(
        traces.lock().unwrap().as_slice(),
        [vec![
            "feed:in".to_string(),
            "collect:a".into(),
            "collect:b".into()
        ]]
    );
}

#[test]
fn transform_failure_is_dead_lettered() {
    let bus = Bus::default();
    let (feeds, collected) = install(&bus);
    bus.register_transform("boom", |_| Err("no good".into()));
    let def = RouteBuilder::new("r")
        .from("feed:in")
        .transform("boom")
        .to("collect:out")
        .build()
        .unwrap();
    bus.add_route(def).unwrap();
    bus.start().unwrap();
    feeds
        .sink("in")
        .submit(Headers::new(), Term::atom("x"))
        .unwrap();
    bus.stop().unwrap();
    assert!(collected.get("out").is_empty());
    let dead = bus.dead_letters();
    assert_eq!(dead.len(), 1);
    assert_eq!(dead[0].route_id, "r");
    assert_eq!(dead[0].exchange.body, Term::atom("x"));
    assert!(matches!(
        &dead[0].reason,
        DeadLetterReason::TransformFailure { transform, message } if transform == "boom" && message == "no good"
    ));
}

#[test]
fn producer_failure_does_not_stop_later_producers() {
    let bus = Bus::default();
    let (feeds, collected) = install(&bus);
    bus.add_route(route("r", "feed:in", &["collect:failing", "collect:ok"]))
        .unwrap();
    bus.start().unwrap();
    feeds
        .sink("in")
        .submit(Headers::new(), Term::atom("x"))
        .unwrap();
    bus.stop().unwrap();
    assert_eq!(collected.get("ok").len(), 1);
    let dead = bus.dead_letters();
    assert_eq!(dead.len(), 1);
    assert!(matches!(
        &dead[0].reason,
        DeadLetterReason::ProducerFailure { endpoint, error: EndpointError::Protocol(_) } if endpoint == "collect:failing"
    ));
}

#[test]
fn unknown_transform_fails_start() {
    let bus = Bus::default();
    install(&bus);
    let def = RouteBuilder::new("r")
        .from("feed:in")
        .transform("missing")
        .to("collect:out")
        .build()
        .unwrap();
    bus.add_route(def).unwrap();
    assert!(matches!(
        bus.start(),
        Err(BusError::UnknownTransform { .. })
    ));
    assert!(!bus.is_route_running("r"));
}

#[test]
fn registration_is_refused_while_running() {
    let bus = Bus::default();
    install(&bus);
    bus.start().unwrap();
    let direct = Arc::new(DirectComponent::new(Default::default()));
    assert!(matches!(
        bus.register_component("direct", direct),
        Err(BusError::BusRunning)
    ));
    bus.stop().unwrap();
}

#[test]
fn route_added_while_running_starts_immediately() {
    let bus = Bus::default();
    let (feeds, collected) = install(&bus);
    bus.start().unwrap();
    bus.add_route(route("late", "feed:late", &["collect:out"]))
        .unwrap();
    assert!(bus.is_route_running("late"));
    feeds
        .sink("late")
        .submit(Headers::new(), Term::atom("x"))
        .unwrap();
    bus.stop().unwrap();
    assert_eq!(collected.get("out").len(), 1);
}

#[test]
fn route_running_iff_bus_running() {
    let bus = Bus::default();
    install(&bus);
    bus.add_route(route("r", "feed:in", &["collect:out"]))
        .unwrap();
    assert!(!bus.is_route_running("r"));
    bus.start().unwrap();
    assert!(bus.is_route_running("r"));
    bus.stop().unwrap();
    assert!(!bus.is_route_running("r"));
}

#[test]
fn failed_start_rolls_back_started_routes() {
    let bus = Bus::default();
    let (_, _) = install(&bus);
    bus.add_route(route("good", "feed:in", &["collect:out"]))
        .unwrap();
    bus.add_route(route("bad", "nosuch:x", &["collect:out"]))
        .unwrap();
    assert!(matches!(bus.start(), Err(BusError::UnknownScheme { .. })));
    assert!(!bus.is_route_running("good"));
    bus.start().unwrap_err();
}

#[test]
fn direct_hop_runs_the_consumer_route_inline() {
    let bus = Bus::default();
    let (feeds, collected) = install(&bus);
    let registry = Arc::new(masbus::components::DirectRegistry::new());
    bus.register_component("direct", Arc::new(DirectComponent::new(registry)))
        .unwrap();
    bus.add_route(route("a", "feed:in", &["direct:hop"]))
        .unwrap();
    bus.add_route(route("b", "direct:hop", &["collect:out"]))
        .unwrap();
    bus.start().unwrap();
    feeds
        .sink("in")
        .submit(Headers::new(), Term::atom("x"))
        .unwrap();
    bus.stop().unwrap();
    let got = collected.get("out");
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].trace(), ["direct:hop", "collect:out"]);
}

#[test]
fn process_exchange_requires_running_route() {
    let bus = Bus::default();
    install(&bus);
    bus.add_route(route("r", "feed:in", &["collect:out"]))
        .unwrap();
    let ex = bus.create_exchange(Headers::new(), Term::atom("x"));
    assert!(matches!(
        bus.process_exchange("r", ex.clone()),
        Err(BusError::RouteNotRunning(_))
    ));
    assert!(matches!(
        bus.process_exchange("nope", ex),
        Err(BusError::UnknownRoute(_))
    ));
}

#[test]
fn set_header_processor_is_recorded_in_definition() {
    let def: RouteDefinition = RouteBuilder::new("r")
        .from("feed:in")
        .set_header("ArtifactName", Term::string("TrackedArtifact"))
        .to("collect:out")
        .build()
        .unwrap();
    assert_eq!(
        def.processors(),
        [ProcessorSpec::SetHeader {
            name: "ArtifactName".into(),
            value: Term::string("TrackedArtifact")
        }]
    );
}
