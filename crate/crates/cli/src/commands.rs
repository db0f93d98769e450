use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use optflow_core::metrics::{MetricsOptions, MetricsReport};
use optflow_core::scenario::{
    make_counterexample, make_random_feasible, make_random_symmetric, make_reference_ijc_with_rounds,
    make_reference_ujsc, make_single_ball, Scenario, DEFAULT_IJC_ROUNDS,
};
use optflow_core::suite::{self, Suite};
use optflow_core::topology::{certify_ijc, certify_ujsc, min_ujsc_window, CertificationReport, Condition};
use optflow_core::SwitchingTopology;
use serde::Serialize;

use crate::exit::{self, Failure};
use crate::{CertifyArgs, GenArgs, GenKind, Require, RunArgs, SuiteArgs};

/// Containment excess tolerated by the run monitor.
const CONTAINMENT_SLACK: f64 = 1e-4;
/// Roundoff allowed on logged weights.
const WEIGHT_SLACK: f64 = 1e-12;

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    Scenario::from_toml(&text).map_err(Failure::from)
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

// ---- connectivity ----

#[derive(Debug, Serialize)]
struct Connectivity {
    ujsc: CertificationReport,
    /// `given`, `minimal` (smallest passing window) or `horizon` (no
    /// window passes; the whole horizon was checked).
    ujsc_window_source: &'static str,
    ijc: Option<CertificationReport>,
    holds: Vec<Condition>,
}

fn connectivity(topo: &SwitchingTopology, window: Option<f64>) -> Result<Connectivity, Failure> {
    let (ujsc, source) = match window {
        Some(w) => (certify_ujsc(topo, w)?, "given"),
        None => match min_ujsc_window(topo)? {
            Some(w) => (certify_ujsc(topo, w)?, "minimal"),
            None => (certify_ujsc(topo, topo.horizon())?, "horizon"),
        },
    };
    let ijc = if topo.all_bidirectional() { Some(certify_ijc(topo)?) } else { None };
    let mut holds = Vec::new();
    if ujsc.pass {
        holds.push(Condition::Ujsc);
    }
    if ijc.as_ref().is_some_and(|r| r.pass) {
        holds.push(Condition::Ijc);
    }
    Ok(Connectivity {
        ujsc,
        ujsc_window_source: source,
        ijc,
        holds,
    })
}

// ---- run ----

#[derive(Debug, Serialize)]
struct ManifestCheck {
    name: String,
    pass: bool,
    detail: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    scenario: String,
    scenario_hash: Option<String>,
    seed: Option<u64>,
    started_at: String,
    finished_at: String,
    elapsed_seconds: f64,
    exit_code: u8,
    files: Vec<String>,
    checks: Vec<ManifestCheck>,
}

struct RunState<'a> {
    out: &'a Path,
    files: Vec<String>,
    checks: Vec<ManifestCheck>,
    hash: Option<String>,
    seed: Option<u64>,
}

impl RunState<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        fs::write(self.out.join(name), bytes)
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", self.out.join(name).display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) -> bool {
        self.checks.push(ManifestCheck {
            name: name.into(),
            pass,
            detail: detail.into(),
        });
        pass
    }
}

pub fn run(a: &RunArgs) -> Result<u8, Failure> {
    let started = Utc::now();
    let clock = Instant::now();
    fs::create_dir_all(&a.out).map_err(|e| Failure::input(format!("cannot create {}: {e}", a.out.display())))?;
    let mut st = RunState {
        out: &a.out,
        files: Vec::new(),
        checks: Vec::new(),
        hash: None,
        seed: None,
    };
    let outcome = run_pipeline(a, &mut st);
    let exit_code = match &outcome {
        Ok(c) => *c,
        Err(f) => f.code,
    };
    st.files.push("manifest.json".into());
    let manifest = Manifest {
        tool: "optflow",
        version: env!("CARGO_PKG_VERSION"),
        scenario: a.scenario.display().to_string(),
        scenario_hash: st.hash.take(),
        seed: st.seed,
        started_at: started.to_rfc3339_opts(SecondsFormat::Millis, true),
        finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        exit_code,
        files: std::mem::take(&mut st.files),
        checks: std::mem::take(&mut st.checks),
    };
    fs::write(a.out.join("manifest.json"), to_json(&manifest)?)?;
    outcome
}

fn run_pipeline(a: &RunArgs, st: &mut RunState) -> Result<u8, Failure> {
    if a.record_every == 0 || a.metrics_stride == 0 {
        return Err(Failure::input("--record-every and --metrics-stride must be positive"));
    }
    let scenario = load(&a.scenario)?;
    st.hash = Some(scenario.hash()?);
    st.seed = Some(scenario.seed.value);

    let validation = scenario.validate()?;
    st.write("validation.json", to_json(&validation)?.as_bytes())?;
    for c in &validation.checks {
        st.check(&format!("validation/{}", c.name), c.pass, c.detail.clone());
    }
    if !validation.all_pass() {
        let msg = validation
            .failures()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Failure::input(format!("scenario failed validation ({msg})")));
    }

    let compiled = scenario.compile_unchecked()?;
    let conn = connectivity(compiled.topology(), None)?;
    st.write("certification.json", to_json(&conn)?.as_bytes())?;
    let connected = st.check(
        "connectivity",
        !conn.holds.is_empty() || a.allow_disconnected,
        format!("holds: {:?}; allow_disconnected: {}", conn.holds, a.allow_disconnected),
    );
    if !connected {
        return Err(Failure::input(
            "neither UJSC nor IJC holds over the horizon; pass --allow-disconnected to run anyway",
        ));
    }

    let traj = compiled.simulate()?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv, compiled.sets(), &compiled.oracle, a.record_every)?;
    st.write("trajectory.csv", &csv)?;

    let horizon = traj.final_time();
    let opts = MetricsOptions {
        stride: a.metrics_stride,
        convergence_tol: a.convergence_tol,
        containment_every: a.containment_every.unwrap_or((horizon / 50.0).max(5.0)),
        tail_fraction: a.tail_fraction,
        step: scenario.integrator.step,
        lipschitz: compiled.system.lipschitz_bound(),
        symmetric: scenario.is_symmetric_undirected(),
    };
    let metrics = MetricsReport::compute(&traj, compiled.sets(), &compiled.oracle, &opts)?;
    let mut summary = Vec::new();
    metrics.write_summary_csv(&mut summary)?;
    st.write("summary.csv", &summary)?;
    // per-sample rows live in summary.csv
    let mut json = serde_json::to_value(&metrics)?;
    if let Some(obj) = json.as_object_mut() {
        obj.remove("samples");
    }
    st.write("metrics.json", to_json(&json)?.as_bytes())?;

    let mut ok = true;
    ok &= st.check(
        "monitor/monotonicity",
        metrics.monotonicity_violations.is_empty(),
        format!("{} violations, tol {:e}", metrics.monotonicity_violations.len(), metrics.tol_mono),
    );
    ok &= st.check(
        "monitor/sublevel",
        metrics.sublevel_invariant,
        format!("max d {:e}, d(0) {:e}", metrics.max_d, metrics.d0),
    );
    if let Some(excess) = metrics.max_containment_excess {
        ok &= st.check(
            "monitor/containment",
            excess <= CONTAINMENT_SLACK,
            format!("max excess {excess:e}"),
        );
    }
    if let Some((lo, hi)) = metrics.weight_range {
        let w = &scenario.weights;
        ok &= st.check(
            "monitor/weights",
            lo >= w.lower - WEIGHT_SLACK && hi <= w.upper + WEIGHT_SLACK,
            format!("evaluated weights in [{lo}, {hi}]"),
        );
    }
    if metrics.barbalat.guaranteed {
        ok &= st.check(
            "monitor/integral_bound",
            metrics.barbalat.within_bound,
            format!("integral {:e}, bound {:e}", metrics.barbalat.integral, metrics.barbalat.bound),
        );
    }
    st.check(
        "converged",
        metrics.converged_at.is_some(),
        format!("converged_at {:?} (tol {:e})", metrics.converged_at, a.convergence_tol),
    );
    if ok {
        Ok(exit::OK)
    } else {
        let fired: Vec<&str> = st
            .checks
            .iter()
            .filter(|c| c.name.starts_with("monitor/") && !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        Err(Failure::new(
            exit::INVARIANT_VIOLATION,
            anyhow::anyhow!("invariant monitor fired: {}", fired.join(", ")),
        ))
    }
}

// ---- certify ----

pub fn certify(a: &CertifyArgs) -> Result<u8, Failure> {
    let scenario = load(&a.scenario)?;
    scenario.check_structure()?;
    let topo = scenario.topology.signal.realize(scenario.topology.dwell, scenario.horizon())?;
    let conn = connectivity(&topo, a.window)?;
    let json = to_json(&conn)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("certification.json"), &json)?;
    }
    std::io::stdout().write_all(json.as_bytes())?;
    let pass = match a.require {
        Require::Ujsc => conn.ujsc.pass,
        Require::Ijc => conn.ijc.as_ref().is_some_and(|r| r.pass),
        Require::Any => !conn.holds.is_empty(),
    };
    Ok(if pass { exit::OK } else { exit::CHECK_FAILED })
}

// ---- suite ----

pub fn suite(a: &SuiteArgs) -> Result<u8, Failure> {
    let which: Suite = a.name.parse().map_err(|e| {
        let names: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
        Failure::input(format!("{e}; expected one of {}", names.join(", ")))
    })?;
    let dir: PathBuf = a.out.join(which.name());
    fs::create_dir_all(&dir)?;
    let card = suite::run(which, Some(&dir))?;
    let json = to_json(&card)?;
    fs::write(dir.join("scorecard.json"), &json)?;
    std::io::stdout().write_all(json.as_bytes())?;
    for c in card.checks.iter().filter(|c| !c.pass) {
        eprintln!("FAIL {}: value {} limit {} ({})", c.name, c.value, c.limit, c.detail);
    }
    Ok(if card.pass { exit::OK } else { exit::CHECK_FAILED })
}

// ---- gen ----

pub fn gen(a: &GenArgs) -> Result<u8, Failure> {
    if let Some(t) = a.t_end {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::input(format!("--t-end must be positive, got {t}")));
        }
    }
    let mut scenario = match a.kind {
        GenKind::Ujsc => make_reference_ujsc(a.agents, a.dim, a.seed)?,
        GenKind::Ijc => {
            make_reference_ijc_with_rounds(a.agents, a.dim, a.seed, a.growth, a.rounds.unwrap_or(DEFAULT_IJC_ROUNDS))?
        }
        GenKind::Counterexample => make_counterexample(a.seed)?,
        GenKind::Random => make_random_feasible(a.agents, a.dim, a.seed)?,
        GenKind::Symmetric => make_random_symmetric(a.agents, a.dim, a.seed)?,
        GenKind::Single => make_single_ball(a.t_end.unwrap_or(20.0))?,
    };
    if let Some(t) = a.t_end {
        scenario.integrator.t_end = t;
    }
    let text = scenario.to_toml()?;
    match &a.output {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, text)?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(exit::OK)
}
