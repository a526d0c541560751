//! End-to-end acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::gen::{rebuild, route_definition, term};
use common::{install, route};
use masbus::environment::{haversine_km, tracker_template, DEFAULT_WORKSPACE};
use masbus::{
    format_uri, parse_route_file, parse_uri, render_routes_xml, run_scenario, AliasTable,
    ArtifactTemplate, EndpointUri, Headers, OpResult, Origin, Performative, Platform, RouteBuilder,
    ScenarioConfig, Term,
};

type Outcome = Result<String, String>;
type Golden<'a> = (&'a str, &'a str, &'a str, &'a [(&'a str, &'a str)]);
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("took {elapsed:?}, limit {limit:?}")
    })
}

fn sample<S: Strategy>(runner: &mut TestRunner, s: &S) -> S::Value {
    s.new_tree(runner).expect("generator").current()
}

fn uri_golden_suite() -> Outcome {
    let started = Instant::now();
    let expected: [Golden; 3] = [
        (
            "jason:DummyCustomerAgent",
            "jason",
            "DummyCustomerAgent",
            &[],
        ),
        (
            "telegram:bots/sometoken?chatId=-364531",
            "telegram",
            "bots/sometoken",
            &[("chatId", "-364531")],
        ),
        (
            "mqtt : foo? host=tcp://broker & subscribeTopicName=latLong",
            "mqtt",
            "foo",
            &[("host", "tcp://broker"), ("subscribeTopicName", "latLong")],
        ),
    ];
    let canonical = [
        "jason:DummyCustomerAgent",
        "telegram:bots/sometoken?chatId=-364531",
        "mqtt:foo?host=tcp://broker&subscribeTopicName=latLong",
    ];
    for ((text, scheme, path, params), formatted) in expected.iter().zip(canonical) {
        let mut want = EndpointUri::new(*scheme, *path).map_err(|e| e.to_string())?;
        for (k, v) in params.iter() {
            want = want.with_param(*k, *v).map_err(|e| e.to_string())?;
        }
        let got = parse_uri(text).map_err(|e| format!("{text}: {e}"))?;
        ensure(got == want, || format!("{text}: parsed {got:?}"))?;
        let f = format_uri(&got);
        ensure(f == formatted, || format!("{text}: formatted as {f}"))?;
        let again = parse_uri(&f).map_err(|e| e.to_string())?;
        ensure(again == got, || {
            format!("{text}: parse after format differs")
        })?;
    }
    within(started.elapsed(), Duration::from_secs(1))?;
    Ok("3/3 uris".into())
}

fn wait_mailbox(p: &Platform, agent: &str, n: usize, timeout: Duration) -> Result<(), String> {
    let deadline = Instant::now() + timeout;
    while p.registry().mailbox_len(agent).map_err(|e| e.to_string())? < n {
        if Instant::now() > deadline {
            return Err(format!("{agent} never received message"));
        }
        std::thread::sleep(Duration::from_micros(200));
    }
    Ok(())
}

fn loopback_transparency() -> Outcome {
    let started = Instant::now();
    let p = Platform::default();
    p.bus()
        .add_route(route("out", "jason:DummyBob", &["direct:loop"]))
        .map_err(|e| e.to_string())?;
    p.bus()
        .add_route(route("in", "direct:loop", &["jason:bob"]))
        .map_err(|e| e.to_string())?;
    p.registry().add_local("alice").map_err(|e| e.to_string())?;
    p.registry().add_local("bob").map_err(|e| e.to_string())?;
    p.start().map_err(|e| e.to_string())?;

    let mut runner = TestRunner::deterministic();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = Vec::new();
    for i in 0..100 {
        let performative = Performative::ALL[rng.gen_range(0..Performative::ALL.len())];
        let content = sample(&mut runner, &term());
        let reg = p.registry();
        reg.send_message(reg.compose("alice", "bob", performative, content.clone()))
            .map_err(|e| e.to_string())?;
        let direct = reg
            .receive("bob")
            .map_err(|e| e.to_string())?
            .ok_or("no direct delivery")?;
        reg.send_message(reg.compose("alice", "DummyBob", performative, content.clone()))
            .map_err(|e| e.to_string())?;
        wait_mailbox(&p, "bob", 1, Duration::from_secs(2))?;
        let routed = reg
            .receive("bob")
            .map_err(|e| e.to_string())?
            .ok_or("no routed delivery")?;
        if routed.content != direct.content
            || routed.performative != direct.performative
            || routed.sender != direct.sender
            || routed.receiver != direct.receiver
        {
            mismatches.push(i);
        }
    }
    p.stop().map_err(|e| e.to_string())?;
    ensure(mismatches.is_empty(), || {
        format!("mismatched pairs {mismatches:?}")
    })?;
    ensure(p.bus().dead_letters().is_empty(), || {
        "dead letters recorded".into()
    })?;
    within(started.elapsed(), Duration::from_secs(5))?;
    Ok("100/100 pairs identical".into())
}

fn artifact_dispatch() -> Outcome {
    let p = Platform::default();
    let env = p.environment();
    env.create_artifact(
        DEFAULT_WORKSPACE,
        "TrackedArtifact",
        tracker_template((-27.59, 48.55), 0.5),
    )
    .map_err(|e| e.to_string())?;
    env.create_artifact(
        DEFAULT_WORKSPACE,
        "Decoy",
        tracker_template((0.0, 0.0), 0.5),
    )
    .map_err(|e| e.to_string())?;
    let mut aliases = AliasTable::new();
    aliases
        .insert("mqtt", "mqttlite")
        .map_err(|e| e.to_string())?;
    let def = RouteBuilder::new("tracking")
        .from("mqtt : foo? host=tcp://broker & subscribeTopicName=latLong")
        .set_header("ArtifactName", Term::string("TrackedArtifact"))
        .set_header("OperationName", Term::string("giveDistance"))
        .to("artifact : cartago")
        .build()
        .map_err(|e| e.to_string())?;
    p.bus()
        .add_route(aliases.apply(def))
        .map_err(|e| e.to_string())?;
    p.start().map_err(|e| e.to_string())?;
    p.brokers()
        .broker("tcp://broker")
        .publish("latLong", "[-27.6,48.56]", false);
    p.stop().map_err(|e| e.to_string())?;

    let calls = env.call_log();
    ensure(calls.len() == 1, || {
        format!("{} calls: {calls:?}", calls.len())
    })?;
    let c = &calls[0];
    ensure(
        c.workspace == DEFAULT_WORKSPACE
            && c.artifact == "TrackedArtifact"
            && c.operation == "giveDistance"
            && c.params == [Term::number(-27.6), Term::number(48.56)]
            && c.origin == Origin::Route("tracking".into())
            && c.ok,
        || format!("unexpected call {c:?}"),
    )?;
    let d = env
        .property(DEFAULT_WORKSPACE, "TrackedArtifact", "distanceKm")
        .map_err(|e| e.to_string())?;
    ensure(d.is_some(), || "distanceKm not updated".into())?;
    let decoy = env
        .property(DEFAULT_WORKSPACE, "Decoy", "distanceKm")
        .map_err(|e| e.to_string())?;
    ensure(decoy.is_none(), || "decoy artifact touched".into())?;
    Ok("1 call, TrackedArtifact.giveDistance(-27.6, 48.56)".into())
}

/// Central angle from unit vectors, independent of the haversine form.
fn oracle_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let v = |(lat, lon): (f64, f64)| {
        let (lat, lon) = (lat.to_radians(), lon.to_radians());
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    };
    let (p, q) = (v(a), v(b));
    let cross = [
        p[1] * q[2] - p[2] * q[1],
        p[2] * q[0] - p[0] * q[2],
        p[0] * q[1] - p[1] * q[0],
    ];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let cos = p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
    6371.0 * sin.atan2(cos)
}

fn haversine_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let a = (rng.gen_range(-90.0..=90.0), rng.gen_range(-180.0..=180.0));
        let b = (rng.gen_range(-90.0..=90.0), rng.gen_range(-180.0..=180.0));
        let d = haversine_km(a, b);
        let err = (d - oracle_km(a, b)).abs();
        worst = worst.max(err);
        ensure(err <= 1e-6, || {
            format!("{a:?} {b:?}: {d} vs oracle {}", oracle_km(a, b))
        })?;
        ensure(d == haversine_km(b, a), || {
            format!("asymmetric at {a:?} {b:?}")
        })?;
        ensure(haversine_km(a, a) == 0.0, || {
            format!("nonzero self-distance at {a:?}")
        })?;
    }
    Ok(format!("1000 pairs, max error {worst:.2e} km"))
}

fn delivery_under_load() -> Outcome {
    const ROUTES: usize = 10;
    const PER_ROUTE: usize = 100;
    let started = Instant::now();
    let p = Platform::default();
    let (feeds, collected) = install(p.bus());
    for r in 0..ROUTES {
        p.bus()
            .add_route(route(
                &format!("r{r}"),
                &format!("feed:r{r}"),
                &[&format!("collect:r{r}a"), &format!("collect:r{r}b")],
            ))
            .map_err(|e| e.to_string())?;
    }
    p.start().map_err(|e| e.to_string())?;
    let producers: Vec<_> = (0..ROUTES)
        .map(|r| {
            let sink = feeds.sink(&format!("r{r}"));
            std::thread::spawn(move || {
                (0..PER_ROUTE)
                    .map(|i| {
                        sink.submit(Headers::new(), Term::number(i as f64))
                            .map(|id| id.to_string())
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
        })
        .collect();
    let mut submitted = Vec::new();
    for t in producers {
        submitted.push(
            t.join()
                .map_err(|_| "submitter panicked")?
                .map_err(|e| e.to_string())?,
        );
    }
    p.stop().map_err(|e| e.to_string())?;

    for (r, ids) in submitted.iter().enumerate() {
        for side in ["a", "b"] {
            let got = collected.get(&format!("r{r}{side}"));
            let got_ids: Vec<String> = got.iter().map(|e| e.id().to_string()).collect();
            ensure(&got_ids == ids, || {
                format!(
                    "route r{r} producer {side}: {} of {} exchanges, order or identity differs",
                    got.len(),
                    ids.len()
                )
            })?;
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for id in &got_ids {
                *counts.entry(id).or_default() += 1;
            }
            ensure(counts.values().all(|&c| c == 1), || {
                format!("duplicate delivery on r{r}{side}")
            })?;
            let bodies: Vec<_> = got.iter().map(|e| e.body.clone()).collect();
            ensure(
                bodies
                    == (0..PER_ROUTE)
                        .map(|i| Term::number(i as f64))
                        .collect::<Vec<_>>(),
                || format!("r{r}{side} bodies out of order"),
            )?;
        }
    }
    let dead = p.bus().dead_letters();
    ensure(dead.is_empty(), || format!("{} dead letters", dead.len()))?;
    let report = p.bus().report();
    ensure(report.dropped.is_empty(), || {
        format!("{} dropped", report.dropped.len())
    })?;
    ensure(report.delivered as usize == ROUTES * PER_ROUTE, || {
        format!("delivered {}", report.delivered)
    })?;
    within(started.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "{} exchanges x 2 producers exactly once, in order",
        ROUTES * PER_ROUTE
    ))
}

fn artifact_atomicity() -> Outcome {
    const STREAMS: usize = 8;
    const OPS: usize = 250;
    let p = Platform::default();
    let (feeds, _) = install(p.bus());
    let counter = ArtifactTemplate::new()
        .property("count", Term::number(0.0))
        .operation("inc", |_, state| {
            let n = state
                .properties
                .get("count")
                .and_then(Term::as_number)
                .unwrap_or(0.0);
            OpResult::ok().update("count", Term::number(n + 1.0))
        });
    p.environment()
        .create_artifact(DEFAULT_WORKSPACE, "Counter", counter)
        .map_err(|e| e.to_string())?;
    for s in 0..STREAMS {
        p.bus()
            .add_route(route(
                &format!("s{s}"),
                &format!("feed:s{s}"),
                &["artifact:cartago?artifactName=Counter&operationName=inc"],
            ))
            .map_err(|e| e.to_string())?;
    }
    p.start().map_err(|e| e.to_string())?;
    let threads: Vec<_> = (0..STREAMS)
        .map(|s| {
            let sink = feeds.sink(&format!("s{s}"));
            std::thread::spawn(move || {
                for _ in 0..OPS {
                    sink.submit(Headers::new(), Term::List(Vec::new())).unwrap();
                }
            })
        })
        .collect();
    for t in threads {
        t.join().map_err(|_| "stream panicked")?;
    }
    p.stop().map_err(|e| e.to_string())?;
    let count = p
        .environment()
        .property(DEFAULT_WORKSPACE, "Counter", "count")
        .map_err(|e| e.to_string())?
        .and_then(|t| t.as_number());
    ensure(count == Some((STREAMS * OPS) as f64), || {
        format!("counter is {count:?}")
    })?;
    ensure(p.bus().dead_letters().is_empty(), || {
        "dead letters recorded".into()
    })?;
    Ok(format!("counter = {}", STREAMS * OPS))
}

fn argmin_supplier(cfg: &ScenarioConfig) -> Option<String> {
    let mut best: Option<(f64, &str)> = None;
    for q in &cfg.supplier_quotes {
        let better = match best {
            None => true,
            Some((price, name)) => q.price < price || (q.price == price && q.name.as_str() < name),
        };
        if better {
            best = Some((q.price, &q.name));
        }
    }
    best.map(|(_, n)| n.to_string())
}

fn scenario_end_to_end() -> Outcome {
    let started = Instant::now();
    let cfg = ScenarioConfig::default();
    let first = run_scenario(&cfg, true).map_err(|e| e.to_string())?;
    let second = run_scenario(&cfg, true).map_err(|e| e.to_string())?;

    let violations = masbus::assert_report(&first, &cfg);
    ensure(violations.is_empty(), || {
        format!(
            "violations: {}",
            violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        )
    })?;
    let stamps: Vec<_> = first.stage_timestamps.values().collect();
    ensure(stamps.len() == 5, || {
        format!("{} stages completed", stamps.len())
    })?;
    ensure(
        stamps
            .windows(2)
            .all(|w| (w[0].clock_ms, w[0].seq) < (w[1].clock_ms, w[1].seq)),
        || format!("stages out of order: {stamps:?}"),
    )?;
    let want = argmin_supplier(&cfg);
    ensure(first.winner_supplier == want, || {
        format!("winner {:?}, cheapest {want:?}", first.winner_supplier)
    })?;
    let rows = first
        .chat_transcript
        .iter()
        .filter(|r| r.chat_id == cfg.customer_chat_id)
        .count();
    ensure(rows == 1, || {
        format!("{rows} rows for chat {}", cfg.customer_chat_id)
    })?;
    let (a, b) = (
        serde_json::to_string(&first.without_wall_clock()).map_err(|e| e.to_string())?,
        serde_json::to_string(&second.without_wall_clock()).map_err(|e| e.to_string())?,
    );
    ensure(a == b, || "reports differ between seeded runs".into())?;
    within(started.elapsed(), Duration::from_secs(30))?;
    let order: BTreeMap<_, _> = first
        .stage_timestamps
        .iter()
        .map(|(s, t)| (s.to_string(), t.clock_ms))
        .collect();
    Ok(format!(
        "stages {order:?}, winner {}",
        want.unwrap_or_default()
    ))
}

fn route_config_parity() -> Outcome {
    let mut runner = TestRunner::deterministic();
    let defs: Vec<_> = (0..200)
        .map(|i| sample(&mut runner, &route_definition(format!("route-x{i}"))))
        .collect();
    let xml = render_routes_xml(&defs, &AliasTable::new());
    let parsed =
        parse_route_file(&xml).map_err(|e| format!("rendered file does not parse: {e}"))?;
    ensure(parsed.routes.len() == defs.len(), || {
        format!("{} routes parsed", parsed.routes.len())
    })?;
    let mut failures = Vec::new();
    for (want, got) in defs.iter().zip(&parsed.routes) {
        if want != got {
            failures.push(format!("xml {}", want.route_id()));
        }
        if &rebuild(want) != want {
            failures.push(format!("builder {}", want.route_id()));
        }
        let single = render_routes_xml(std::slice::from_ref(want), &AliasTable::new());
        match parse_route_file(&single) {
            Ok(f) if f.routes.as_slice() == std::slice::from_ref(want) => {}
            _ => failures.push(format!("single {}", want.route_id())),
        }
    }
    ensure(failures.is_empty(), || {
        format!("{} failures: {:?}", failures.len(), failures)
    })?;
    Ok("200/200 definitions".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("uri golden suite", uri_golden_suite),
        ("agent loopback transparency", loopback_transparency),
        ("artifact dispatch fidelity", artifact_dispatch),
        ("distance oracle", haversine_oracle),
        ("delivery invariants under load", delivery_under_load),
        ("per-artifact atomicity", artifact_atomicity),
        ("end-to-end scenario", scenario_end_to_end),
        ("route config parity", route_config_parity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let ms = started.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({ms} ms) {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({ms} ms) {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
