use std::time::Instant;

use masbus::scenario::{supplier_dummy, SupplierQuote};
use masbus::{
    assert_report, run_scenario, Performative, ScenarioConfig, ScenarioError, Stage, Violation,
};

fn quotes(list: &[(&str, f64)]) -> Vec<SupplierQuote> {
    list.iter()
        .map(|(n, p)| SupplierQuote {
            name: n.to_string(),
            price: *p,
        })
        .collect()
}

#[test]
fn nominal_run_passes_its_own_checks() {
    let cfg = ScenarioConfig::default();
    let report = run_scenario(&cfg, true).unwrap();
    assert_eq!(assert_report(&report, &cfg), vec![]);
    assert_eq!(report.winner_supplier.as_deref(), Some("beta"));
    let hire = report.hire_message.as_ref().unwrap();
    assert_eq!(hire.performative, Performative::Tell);
    assert_eq!(hire.receiver, supplier_dummy("beta"));
    assert_eq!(report.stage_timestamps.len(), 5);
    let customer: Vec<_> = report
        .chat_transcript
        .iter()
        .filter(|r| r.chat_id == "-364531")
        .collect();
    assert_eq!(customer.len(), 1);
    assert_eq!(customer[0].token, "sometoken");
    let erp = report.erp_checkout_record.as_ref().unwrap();
    assert_eq!(erp.order_id, report.order_id);
}

#[test]
fn simulated_runs_are_reproducible() {
    let cfg = ScenarioConfig::default();
    let a = run_scenario(&cfg, true).unwrap();
    let b = run_scenario(&cfg, true).unwrap();
    assert_eq!(a.without_wall_clock(), b.without_wall_clock());
}

#[test]
fn stage_clock_times_follow_the_ticks() {
    let cfg = ScenarioConfig::default();
    let report = run_scenario(&cfg, true).unwrap();
    let t = |s| report.stage_timestamps[&s].clock_ms;
    let tick = cfg.tick_period_ms;
    assert_eq!(t(Stage::I), tick);
    assert_eq!(t(Stage::Ii), 2 * tick);
    assert_eq!(t(Stage::Iii), 3 * tick);
    assert_eq!(t(Stage::Iv), 4 * tick);
    assert_eq!(t(Stage::V), (3 + cfg.track_waypoints.len() as u64) * tick);
}

#[test]
fn tie_is_broken_by_name() {
    let cfg = ScenarioConfig {
        supplier_quotes: quotes(&[("zulu", 5.0), ("echo", 5.0), ("kilo", 6.0)]),
        ..ScenarioConfig::default()
    };
    let report = run_scenario(&cfg, true).unwrap();
    assert_eq!(report.winner_supplier.as_deref(), Some("echo"));
    assert!(assert_report(&report, &cfg).is_empty());
}

#[test]
fn first_waypoint_at_destination_fires_immediately() {
    let base = ScenarioConfig::default();
    let cfg = ScenarioConfig {
        track_waypoints: vec![base.destination, (-27.60, 48.50)],
        ..base
    };
    let report = run_scenario(&cfg, true).unwrap();
    assert_eq!(report.distances_km, vec![0.0]);
    assert_eq!(
        report.stage_timestamps[&Stage::V].clock_ms,
        report.stage_timestamps[&Stage::Iv].clock_ms
    );
    assert!(assert_report(&report, &cfg).is_empty());
}

#[test]
fn unreachable_destination_times_out_in_stage_five() {
    let cfg = ScenarioConfig {
        track_waypoints: vec![(0.0, 0.0), (1.0, 1.0)],
        ..ScenarioConfig::default()
    };
    let started = Instant::now();
    match run_scenario(&cfg, true) {
        Err(ScenarioError::StageTimeout { stage, partial, .. }) => {
            assert_eq!(stage, Stage::V);
            assert_eq!(partial.distances_km.len(), 2);
            assert!(partial
                .chat_transcript
                .iter()
                .all(|r| r.chat_id != cfg.customer_chat_id));
        }
        other => panic!("expected a stage v timeout, got {other:?}"),
    }
    assert!(started.elapsed().as_secs() < 10);
}

#[test]
fn wall_clock_run_also_passes() {
    let cfg = ScenarioConfig::default();
    let report = run_scenario(&cfg, false).unwrap();
    assert_eq!(assert_report(&report, &cfg), vec![]);
    assert_eq!(report.wall_ms.len(), 5);
}

#[test]
fn corrupted_stage_order_is_one_violation() {
    let cfg = ScenarioConfig::default();
    let mut report = run_scenario(&cfg, true).unwrap();
    let ii = report.stage_timestamps[&Stage::Ii];
    let iii = report.stage_timestamps[&Stage::Iii];
    report.stage_timestamps.insert(Stage::Ii, iii);
    report.stage_timestamps.insert(Stage::Iii, ii);
    assert_eq!(
        assert_report(&report, &cfg),
        vec![Violation::StageOrder {
            earlier: Stage::Ii,
            later: Stage::Iii
        }]
    );
}

#[test]
fn chat_id_mismatch_is_one_violation_naming_it() {
    let cfg = ScenarioConfig::default();
    let mut report = run_scenario(&cfg, true).unwrap();
    for row in &mut report.chat_transcript {
        if row.chat_id == cfg.customer_chat_id {
            row.chat_id = "999".into();
        }
    }
    let violations = assert_report(&report, &cfg);
    assert_eq!(violations.len(), 1);
    assert!(violations[0].to_string().contains("-364531"));
}

#[test]
fn one_supplier_is_rejected_before_running() {
    let cfg = ScenarioConfig {
        supplier_quotes: quotes(&[("solo", 1.0)]),
        ..ScenarioConfig::default()
    };
    assert!(matches!(
        run_scenario(&cfg, true),
        Err(ScenarioError::InvalidConfig(_))
    ));
}
