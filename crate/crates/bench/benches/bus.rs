use std::time::{Duration, Instant};

use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use masbus::environment::{haversine_km, DEFAULT_WORKSPACE};
use masbus::{
    parse_route_file, parse_term, parse_uri, ArtifactTemplate, Headers, OpResult, Platform,
    RouteBuilder, Term,
};

const CONTENT: &str = r#"hire("ORD-000123",widget,[quote(alpha,10),quote(beta,7.5),quote(gamma,9)],'Dummy Supplier')"#;
const LISTING_URI: &str = "mqtt : foo? host=tcp://broker & subscribeTopicName=latLong";

fn terms(c: &mut Criterion) {
    let term = parse_term(CONTENT).unwrap();
    c.bench_function("term/parse", |b| {
        b.iter(|| parse_term(black_box(CONTENT)).unwrap())
    });
    c.bench_function("term/render", |b| b.iter(|| black_box(&term).render()));
}

fn uris(c: &mut Criterion) {
    c.bench_function("uri/parse", |b| {
        b.iter(|| parse_uri(black_box(LISTING_URI)).unwrap())
    });
    let xml = include_str!("../../../config/customer-route.xml");
    c.bench_function("config/parse_listing", |b| {
        b.iter(|| parse_route_file(black_box(xml)).unwrap())
    });
}

fn distance(c: &mut Criterion) {
    c.bench_function("haversine", |b| {
        b.iter(|| haversine_km(black_box((-27.5954, 48.548)), black_box((-27.59, 48.55))))
    });
}

fn counter_platform(from: &str) -> Platform {
    let p = Platform::default();
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
        .unwrap();
    let def = RouteBuilder::new("r")
        .from(from)
        .set_header("OperationName", Term::string("inc"))
        .to("artifact:cartago?artifactName=Counter")
        .build()
        .unwrap();
    p.bus().add_route(def).unwrap();
    p.start().unwrap();
    p
}

fn count(p: &Platform) -> f64 {
    p.environment()
        .property(DEFAULT_WORKSPACE, "Counter", "count")
        .unwrap()
        .and_then(|t| t.as_number())
        .unwrap_or(0.0)
}

fn throughput(c: &mut Criterion) {
    const BATCH: u64 = 1000;
    let mut group = c.benchmark_group("bus");
    group.throughput(Throughput::Elements(BATCH));

    let direct = counter_platform("direct:in");
    group.bench_function("direct_inline", |b| {
        b.iter(|| {
            for _ in 0..BATCH {
                direct
                    .direct()
                    .send("in", Headers::new(), Term::atom("x"))
                    .unwrap();
            }
        })
    });
    direct.stop().unwrap();

    let queued = counter_platform("mqttlite:in?host=bench&subscribeTopicName=t");
    let broker = queued.brokers().broker("bench");
    group.bench_function("queued_route", |b| {
        b.iter_batched(
            || count(&queued),
            |before| {
                for _ in 0..BATCH {
                    broker.publish("t", "x", false);
                }
                let target = before + BATCH as f64;
                let deadline = Instant::now() + Duration::from_secs(10);
                while count(&queued) < target {
                    assert!(Instant::now() < deadline, "route stalled");
                    std::hint::spin_loop();
                }
            },
            BatchSize::PerIteration,
        )
    });
    queued.stop().unwrap();
    group.finish();
}

criterion_group!(benches, terms, uris, distance, throughput);
criterion_main!(benches);
