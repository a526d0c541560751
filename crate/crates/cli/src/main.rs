use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use masbus::bus::DeliveryRecord;
use masbus::config::{load_route_file, AliasTable, ConfigError, RouteFile};
use masbus::{
    assert_report, run_scenario, Clock, Platform, PlatformConfig, ScenarioConfig, ScenarioError,
};

mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const PARSE: u8 = 2;
    pub const UNRESOLVED_SCHEME: u8 = 3;
    pub const START_FAILURE: u8 = 4;
    pub const VIOLATIONS: u8 = 5;
    pub const STAGE_TIMEOUT: u8 = 6;
}

/// Integration bus for multi-agent systems.
#[derive(Debug, Parser)]
#[command(name = "masbus", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a route file: XML shape, uris, and that every scheme resolves.
    Validate {
        file: PathBuf,
        /// Extra scheme alias, `scheme=component`; repeatable.
        #[arg(long = "alias", value_name = "SCHEME=COMPONENT")]
        aliases: Vec<String>,
    },
    /// Start a bus with the routes of a file and run until interrupted.
    Run {
        file: PathBuf,
        /// Print one line per delivered exchange.
        #[arg(long)]
        trace: bool,
        /// Run on a logical clock that jumps ahead whenever the bus is idle.
        #[arg(long)]
        simulated_time: bool,
        #[arg(long = "alias", value_name = "SCHEME=COMPONENT")]
        aliases: Vec<String>,
    },
    /// Run the delivery scenario and check its report.
    Scenario {
        config: PathBuf,
        /// Where to write the JSON report (default: stdout).
        #[arg(long)]
        report_out: Option<PathBuf>,
        #[arg(long)]
        simulated_time: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Validate { file, aliases } => cmd_validate(&file, &aliases),
        Command::Run {
            file,
            trace,
            simulated_time,
            aliases,
        } => cmd_run(&file, &aliases, trace, simulated_time),
        Command::Scenario {
            config,
            report_out,
            simulated_time,
        } => cmd_scenario(&config, report_out.as_deref(), simulated_time),
    };
    ExitCode::from(code)
}

fn parse_aliases(specs: &[String]) -> Result<AliasTable, String> {
    let mut table = AliasTable::new();
    for spec in specs {
        let (scheme, component) = spec
            .split_once('=')
            .ok_or_else(|| format!("--alias expects scheme=component, got '{spec}'"))?;
        table
            .insert(scheme.trim(), component.trim())
            .map_err(|e| format!("--alias {spec}: {e}"))?;
    }
    Ok(table)
}

/// Loads and checks a route file. Errors carry the exit code to use.
fn load_checked(file: &Path, alias_specs: &[String]) -> Result<RouteFile, u8> {
    let extra = parse_aliases(alias_specs).map_err(|e| {
        eprintln!("error: {e}");
        exit::USAGE
    })?;
    let mut routes = load_route_file(file).map_err(|e| match e {
        ConfigError::Io { .. } => {
            eprintln!("error: {e}");
            exit::USAGE
        }
        e => {
            eprintln!("error: {}: {e}", file.display());
            exit::PARSE
        }
    })?;
    let mut aliases = extra;
    aliases.merge(&routes.aliases);
    routes.aliases = aliases;

    let known = Platform::default().bus().component_schemes();
    let unresolved = routes.unresolved_schemes(&known);
    if !unresolved.is_empty() {
        for (route, scheme) in &unresolved {
            eprintln!(
                "error: {}: route '{route}': scheme '{scheme}' has no component or alias",
                file.display()
            );
        }
        return Err(exit::UNRESOLVED_SCHEME);
    }
    Ok(routes)
}

fn cmd_validate(file: &Path, aliases: &[String]) -> u8 {
    match load_checked(file, aliases) {
        Ok(routes) => {
            println!("{}: {} route(s) ok", file.display(), routes.routes.len());
            exit::OK
        }
        Err(code) => code,
    }
}

fn trace_line(d: &DeliveryRecord) -> String {
    format!(
        "delivery exchange={} route={} endpoints={}",
        d.exchange_id,
        d.route_id,
        d.trace.join(" ")
    )
}

fn cmd_run(file: &Path, aliases: &[String], trace: bool, simulated_time: bool) -> u8 {
    let routes = match load_checked(file, aliases) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let clock = if simulated_time {
        Clock::simulated()
    } else {
        Clock::wall()
    };
    let platform = Platform::new(PlatformConfig {
        clock: clock.clone(),
        ..PlatformConfig::default()
    });
    if trace {
        platform
            .bus()
            .set_delivery_observer(Some(Arc::new(|d: &DeliveryRecord| {
                let mut out = std::io::stdout().lock();
                let _ = writeln!(out, "{}", trace_line(d));
                let _ = out.flush();
            })));
    }
    for def in routes.resolved_routes() {
        if let Err(e) = platform.bus().add_route(def) {
            eprintln!("error: {e}");
            return exit::START_FAILURE;
        }
    }

    let (tx, rx) = mpsc::channel();
    if let Err(e) = ctrlc::set_handler(move || {
        let _ = tx.send(());
    }) {
        eprintln!("error: cannot install interrupt handler: {e}");
        return exit::START_FAILURE;
    }
    if let Err(e) = platform.start() {
        eprintln!("error: {e}");
        return exit::START_FAILURE;
    }
    eprintln!(
        "running {} route(s); interrupt to stop",
        platform.bus().route_ids().len()
    );

    let step = Duration::from_millis(10);
    loop {
        match rx.recv_timeout(step) {
            Ok(()) | Err(mpsc::RecvTimeoutError::Disconnected) => break,
            Err(mpsc::RecvTimeoutError::Timeout) => {
                if let Some(sim) = clock.sim() {
                    if platform.bus().in_flight() == 0 {
                        sim.advance(step);
                    }
                }
            }
        }
    }

    let result = platform.stop();
    let report = platform.bus().report();
    eprintln!(
        "stopped: delivered={} dead_lettered={} dropped={}",
        report.delivered,
        report.dead_lettered,
        report.dropped.len()
    );
    match result {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit::START_FAILURE
        }
    }
}

fn write_report(value: &serde_json::Value, out: Option<&Path>) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    match out {
        Some(path) => {
            std::fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_scenario(config: &Path, report_out: Option<&Path>, simulated_time: bool) -> u8 {
    let text = match std::fs::read_to_string(config) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("error: {}: {e}", config.display());
            return exit::USAGE;
        }
    };
    let cfg = match ScenarioConfig::from_json(&text) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {}: {e}", config.display());
            return exit::PARSE;
        }
    };

    let (code, output) = match run_scenario(&cfg, simulated_time) {
        Ok(report) => {
            let violations = assert_report(&report, &cfg);
            for v in &violations {
                eprintln!("violation: {v}");
            }
            let code = if violations.is_empty() {
                exit::OK
            } else {
                exit::VIOLATIONS
            };
            (
                code,
                serde_json::json!({ "report": report, "violations": violations }),
            )
        }
        Err(ScenarioError::StageTimeout {
            stage,
            elapsed_ms,
            partial,
        }) => {
            eprintln!("error: stage {stage} did not complete ({elapsed_ms} ms)");
            (
                exit::STAGE_TIMEOUT,
                serde_json::json!({
                    "report": partial,
                    "timeout": { "stage": stage, "elapsed_ms": elapsed_ms },
                }),
            )
        }
        Err(e) => {
            eprintln!("error: {e}");
            return exit::START_FAILURE;
        }
    };
    if let Err(e) = write_report(&output, report_out) {
        eprintln!("error: cannot write report: {e}");
        return exit::USAGE;
    }
    code
}
