//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use respec_core::abstraction::{prep_spec, BarrierParams};
use respec_core::clock::Clock;
use respec_core::modify::{ModReport, Op};
use respec_core::monitor::ChoiceMethod;
use respec_core::runner::{run, TraceRecord, SCHEMA_VERSION};
use respec_core::runtime::RuntimeConfig;
use respec_core::spec::{parse_document, AliasTable};
use respec_core::validate::{validate, TimedConjunct, Tolerances};
use respec_core::world::ControlBounds;
use serde::Serialize;

use crate::clock::WallClock;
use crate::io::{load_scenario, read_jsonl, read_text, write_atomic, write_output};
use crate::service::{self, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "respec", version, about = "Event-triggered STL task runtime with live specification edits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Reevaluate,
    Commit,
}

impl From<Method> for ChoiceMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Reevaluate => ChoiceMethod::Reevaluate,
            Method::Commit => ChoiceMethod::Commit,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario headless and write trace.jsonl, modlog.jsonl and
    /// summary.json.
    Run {
        /// Specification document; defaults to the one in the scenario.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Scenario JSON file or packaged scenario name.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate a specification and dump its automaton.
    Compile {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        dot: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Check a recorded trace: control caps, dynamics consistency and a
    /// replay of the obligations of a specification.
    Validate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Modification log whose applied conjunctions join the replay.
        #[arg(long)]
        modlog: Option<PathBuf>,
        /// Extra conjunction as `T:FORMULA`, joined at time T.
        #[arg(long = "conj")]
        conj: Vec<String>,
        /// Also fail on replayed obligation violations.
        #[arg(long)]
        strict: bool,
    },
    /// Serve sessions over websockets.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Persistence root; falls back to RESPEC_DATA_DIR.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory of extra scenario JSON files.
        #[arg(long)]
        scenarios: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Run {
            spec,
            scenario,
            dt,
            method,
            out,
        } => cmd_run(spec.as_deref(), &scenario, dt, method, &out),
        Command::Compile { spec, dot, json } => cmd_compile(&spec, dot.as_deref(), json.as_deref()),
        Command::Validate {
            trace,
            spec,
            modlog,
            conj,
            strict,
        } => cmd_validate(&trace, &spec, modlog.as_deref(), &conj, strict),
        Command::Serve { port, data, scenarios } => {
            let mut config = ServiceConfig::from_env();
            if let Some(d) = data {
                config.data_dir = d;
            }
            config.scenario_dir = scenarios;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(("0.0.0.0", port))
                    .await
                    .with_context(|| format!("bind port {port}"))?;
                eprintln!("listening on {}", listener.local_addr()?);
                service::serve(listener, config).await?;
                Ok::<_, anyhow::Error>(())
            })?;
            Ok(0)
        }
    }
}

fn cmd_run(spec: Option<&Path>, scenario: &str, dt: Option<f64>, method: Option<Method>, out: &Path) -> Result<i32> {
    let mut script = load_scenario(scenario)?;
    if let Some(p) = spec {
        script.spec = read_text(p)?;
    }
    if let Some(dt) = dt {
        script.dt = dt;
    }
    if let Some(m) = method {
        script.method = m.into();
    }
    let clock = WallClock::new();
    let output = run(script, RuntimeConfig::default(), &clock).context("run")?;
    write_output(out, &output)?;
    println!("{}", serde_json::to_string_pretty(&output.summary)?);
    Ok(0)
}

#[derive(Serialize)]
struct CompiledSpec<'a> {
    v: u32,
    gamma: String,
    prep_ms: f64,
    propositions: &'a [respec_core::abstraction::AbstractProposition],
    templates: &'a [respec_core::abstraction::BarrierTemplate],
    automaton: &'a respec_core::buchi::Buchi,
}

fn cmd_compile(spec: &Path, dot: Option<&Path>, json: Option<&Path>) -> Result<i32> {
    let text = read_text(spec)?;
    let doc = parse_document(&text, None, &AliasTable::new()).map_err(|e| anyhow::anyhow!("{}: {e}", spec.display()))?;
    let clock = WallClock::new();
    let r = prep_spec(&doc.formula, "", BarrierParams::default(), &clock);
    let name = spec.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if let Some(p) = dot {
        write_atomic(p, r.buchi.to_dot(&name).as_bytes())?;
    }
    if let Some(p) = json {
        let c = CompiledSpec {
            v: SCHEMA_VERSION,
            gamma: r.gamma.to_string(),
            prep_ms: r.prep_ms,
            propositions: &r.props,
            templates: &r.templates,
            automaton: &r.buchi,
        };
        write_atomic(p, &serde_json::to_vec_pretty(&c)?)?;
    }
    println!(
        "{name}: {} states, {} edges, {} propositions, {:.1} ms",
        r.buchi.len(),
        r.buchi.edges().len(),
        r.buchi.alphabet().len(),
        clock.now_ms()
    );
    Ok(0)
}

fn parse_conj(text: &str) -> Result<TimedConjunct> {
    let Some((t, f)) = text.split_once(':') else {
        bail!("--conj expects T:FORMULA, got `{text}`");
    };
    let t: f64 = t.trim().parse().with_context(|| format!("time in `{text}`"))?;
    Ok(TimedConjunct {
        t,
        formula: f.trim().to_string(),
    })
}

fn cmd_validate(trace: &Path, spec: &Path, modlog: Option<&Path>, conj: &[String], strict: bool) -> Result<i32> {
    let records: Vec<TraceRecord> = read_jsonl(trace)?;
    let text = read_text(spec)?;
    let mut extra = Vec::new();
    if let Some(p) = modlog {
        let log: Vec<ModReport> = read_jsonl(p)?;
        for r in log.iter().filter(|r| r.ok) {
            for (op, f) in &r.additions {
                if *op == Op::And {
                    extra.push(TimedConjunct {
                        t: r.t,
                        formula: f.clone(),
                    });
                }
            }
        }
    }
    for c in conj {
        extra.push(parse_conj(c)?);
    }
    extra.sort_by(|a, b| a.t.total_cmp(&b.t));
    let report = validate(&text, &extra, &records, &ControlBounds::default(), Tolerances::default())
        .map_err(|e| anyhow::anyhow!("{}: {e}", spec.display()))?;
    for e in &report.admissibility {
        eprintln!("admissibility: {e}");
    }
    for v in &report.violations {
        eprintln!("violation: {} at t={:.2}", v.prop, v.t);
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if !report.admissible() || (strict && !report.violations.is_empty()) {
        1
    } else {
        0
    })
}
