//! Named verification suites with JSON scorecards.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convexsets::{ConvexSet, ConvexSetSpec, DykstraConfig, HalfspaceSpec, Point};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::metrics::{
    barbalat_integral, check_delta_containment, check_grid, check_monotone_d, d_series, detect_convergence,
    monotonicity_tolerance, spread_of, tail_statistics,
};
use crate::scenario::{
    make_counterexample, make_random_feasible, make_random_symmetric, make_reference_ijc, make_reference_ujsc,
    make_single_ball, CompiledScenario, Scenario,
};
use crate::topology::{certify_ijc, certify_ujsc, Coverage};

pub const SCORECARD_VERSION: u32 = 1;

/// Seed shared by every suite scenario.
pub const SUITE_SEED: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    ProjectorAxioms,
    Lemma41,
    Eq39,
    DeltaContainment,
    Theorem31,
    Theorem32,
    Counterexample,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::ProjectorAxioms,
        Suite::Lemma41,
        Suite::Eq39,
        Suite::DeltaContainment,
        Suite::Theorem31,
        Suite::Theorem32,
        Suite::Counterexample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::ProjectorAxioms => "projector-axioms",
            Suite::Lemma41 => "lemma41",
            Suite::Eq39 => "eq39",
            Suite::DeltaContainment => "delta-containment",
            Suite::Theorem31 => "theorem31",
            Suite::Theorem32 => "theorem32",
            Suite::Counterexample => "counterexample",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Precondition(format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCheck {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub limit: f64,
    pub detail: String,
}

impl SuiteCheck {
    fn at_most(name: &str, value: f64, limit: f64, detail: impl Into<String>) -> Self {
        SuiteCheck {
            name: name.into(),
            pass: value <= limit,
            value,
            limit,
            detail: detail.into(),
        }
    }

    fn flag(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        SuiteCheck {
            name: name.into(),
            pass,
            value: if pass { 1.0 } else { 0.0 },
            limit: 1.0,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorecard {
    pub version: u32,
    pub suite: Suite,
    pub pass: bool,
    pub checks: Vec<SuiteCheck>,
    /// Trajectory files written next to the scorecard.
    pub artifacts: Vec<String>,
}

/// Runs a suite. When `out_dir` is given, the trajectories of its
/// scenarios are written there as CSV.
pub fn run(suite: Suite, out_dir: Option<&Path>) -> Result<Scorecard> {
    let mut artifacts = Vec::new();
    let checks = match suite {
        Suite::ProjectorAxioms => projector_axiom_checks(),
        Suite::Lemma41 => lemma41_checks(out_dir, &mut artifacts)?,
        Suite::Eq39 => eq39_checks(out_dir, &mut artifacts)?,
        Suite::DeltaContainment => containment_checks(out_dir, &mut artifacts)?,
        Suite::Theorem31 => theorem31_checks(out_dir, &mut artifacts)?,
        Suite::Theorem32 => theorem32_checks(out_dir, &mut artifacts)?,
        Suite::Counterexample => counterexample_checks(out_dir, &mut artifacts)?,
    };
    Ok(Scorecard {
        version: SCORECARD_VERSION,
        suite,
        pass: checks.iter().all(|c| c.pass),
        checks,
        artifacts,
    })
}

/// Scenarios simulated by each suite, for reproducibility checks.
pub fn suite_scenarios(suite: Suite) -> Result<Vec<(String, Scenario)>> {
    Ok(match suite {
        Suite::ProjectorAxioms => Vec::new(),
        Suite::Lemma41 => (0..LEMMA41_SCENARIOS)
            .map(|k| {
                let (n, m) = lemma41_shape(k);
                Ok((format!("random-{k}"), make_random_feasible(n, m, SUITE_SEED + k)?))
            })
            .collect::<Result<_>>()?,
        Suite::Eq39 => {
            let mut v = vec![("single".to_string(), make_single_ball(20.0)?)];
            for k in 0..EQ39_SCENARIOS {
                v.push((format!("symmetric-{k}"), make_random_symmetric(2 + (k % 4) as usize, 2, SUITE_SEED + k)?));
            }
            v
        }
        Suite::DeltaContainment | Suite::Theorem31 => vec![("ujsc".into(), make_reference_ujsc(4, 2, SUITE_SEED)?)],
        Suite::Theorem32 => vec![("ijc".into(), make_reference_ijc(4, 2, SUITE_SEED, 2.0)?)],
        Suite::Counterexample => vec![("counterexample".into(), make_counterexample(SUITE_SEED)?)],
    })
}

/// Output stride keeping trajectory files to a few thousand samples.
pub fn csv_stride(traj: &Trajectory) -> usize {
    (traj.len() / 5000).max(1)
}

fn write_artifact(
    out_dir: Option<&Path>,
    name: &str,
    compiled: &CompiledScenario,
    traj: &Trajectory,
    artifacts: &mut Vec<String>,
) -> Result<()> {
    let Some(dir) = out_dir else {
        return Ok(());
    };
    let io = |e: std::io::Error| Error::Precondition(format!("cannot write {name}: {e}"));
    fs::create_dir_all(dir).map_err(io)?;
    let file = format!("{name}.csv");
    let mut buf = Vec::new();
    traj.write_csv(&mut buf, compiled.sets(), &compiled.oracle, csv_stride(traj))?;
    fs::write(dir.join(&file), buf).map_err(io)?;
    artifacts.push(file);
    Ok(())
}

fn simulate(scenario: &Scenario) -> Result<(CompiledScenario, Trajectory)> {
    let compiled = scenario.compile()?;
    let traj = compiled.simulate()?;
    Ok((compiled, traj))
}

// ---- projector axioms ----

/// Settings of the projector axiom sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxiomConfig {
    pub samples: usize,
    pub seed: u64,
    /// Absolute slack on every inequality.
    pub slack: f64,
    /// Relative error allowed between the gradient formula and central
    /// differences.
    pub gradient_rel_tol: f64,
}

impl Default for AxiomConfig {
    fn default() -> Self {
        AxiomConfig {
            samples: 1000,
            seed: SUITE_SEED,
            slack: 1e-9,
            gradient_rel_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomTally {
    pub variant: String,
    pub axiom: String,
    pub samples: usize,
    pub violations: usize,
    /// Largest excess over the bound (negative when always satisfied).
    pub worst: f64,
}

pub const SET_VARIANTS: [&str; 6] = ["halfspace", "ball", "box", "affine", "polyhedron", "intersection"];
pub const AXIOMS: [&str; 4] = ["nonexpansive", "variational", "gradient", "distance_inequality"];

fn uniform_vec(rng: &mut ChaCha8Rng, m: usize, r: f64) -> Vec<f64> {
    (0..m).map(|_| rng.random_range(-r..r)).collect()
}

fn random_halfspace(rng: &mut ChaCha8Rng, m: usize, through: Option<&[f64]>) -> HalfspaceSpec {
    let normal = loop {
        let v = uniform_vec(rng, m, 1.0);
        if v.iter().map(|c| c * c).sum::<f64>() > 1e-2 {
            break v;
        }
    };
    let offset = match through {
        // keep a ball of radius 0.3 around the point inside
        Some(p) => {
            let norm = normal.iter().map(|c| c * c).sum::<f64>().sqrt();
            normal.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() + norm * (0.3 + rng.random_range(0.0..1.0))
        }
        None => rng.random_range(-2.0..2.0),
    };
    HalfspaceSpec { normal, offset }
}

/// Random set of a given variant in dimension `m`.
pub fn random_set(rng: &mut ChaCha8Rng, variant: &str, m: usize) -> ConvexSetSpec {
    match variant {
        "halfspace" => {
            let h = random_halfspace(rng, m, None);
            ConvexSetSpec::Halfspace {
                normal: h.normal,
                offset: h.offset,
            }
        }
        "ball" => ConvexSetSpec::ball(&uniform_vec(rng, m, 2.0), rng.random_range(0.1..3.0)),
        "box" => {
            let a = uniform_vec(rng, m, 2.0);
            let hi: Vec<f64> = a.iter().map(|v| v + rng.random_range(0.0..2.0)).collect();
            ConvexSetSpec::cube(&a, &hi)
        }
        "affine" => {
            let k = rng.random_range(0..=m);
            let mut basis: Vec<Vec<f64>> = Vec::new();
            while basis.len() < k {
                let mut v = uniform_vec(rng, m, 1.0);
                for u in &basis {
                    let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
                }
                let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                if n > 0.1 {
                    basis.push(v.iter().map(|c| c / n).collect());
                }
            }
            // re-orthogonalize so the basis passes the strict check
            for a in 0..basis.len() {
                for b in 0..a {
                    let d: f64 = basis[a].iter().zip(&basis[b]).map(|(x, y)| x * y).sum();
                    let ub = basis[b].clone();
                    basis[a].iter_mut().zip(&ub).for_each(|(x, y)| *x -= d * y);
                }
                let n = basis[a].iter().map(|c| c * c).sum::<f64>().sqrt();
                basis[a].iter_mut().for_each(|x| *x /= n);
            }
            ConvexSetSpec::Affine {
                anchor: uniform_vec(rng, m, 2.0),
                basis,
            }
        }
        "polyhedron" => {
            // halfspaces through a common point so the set is never empty
            let anchor = uniform_vec(rng, m, 2.0);
            let count = rng.random_range(1..=2);
            ConvexSetSpec::Polyhedron {
                halfspaces: (0..count).map(|_| random_halfspace(rng, m, Some(&anchor))).collect(),
            }
        }
        _ => {
            let anchor = uniform_vec(rng, m, 1.0);
            let count = rng.random_range(2..=3);
            let members = (0..count)
                .map(|_| match rng.random_range(0..3) {
                    0 => {
                        let h = random_halfspace(rng, m, Some(&anchor));
                        ConvexSetSpec::Halfspace {
                            normal: h.normal,
                            offset: h.offset,
                        }
                    }
                    1 => {
                        let shift = uniform_vec(rng, m, 1.0);
                        let len = shift.iter().map(|c| c * c).sum::<f64>().sqrt();
                        let center: Vec<f64> = anchor.iter().zip(&shift).map(|(a, s)| a + s).collect();
                        ConvexSetSpec::ball(&center, len + 0.3 + rng.random_range(0.0..1.0))
                    }
                    _ => {
                        let lo: Vec<f64> = anchor.iter().map(|a| a - 0.3 - rng.random_range(0.0..1.0)).collect();
                        let hi: Vec<f64> = anchor.iter().map(|a| a + 0.3 + rng.random_range(0.0..1.0)).collect();
                        ConvexSetSpec::cube(&lo, &hi)
                    }
                })
                .collect();
            ConvexSetSpec::Intersection { members }
        }
    }
}

const GRADIENT_MIN_DISTANCE: f64 = 0.1;
const GRADIENT_DRAWS: usize = 100;

fn sq_dist(set: &ConvexSet, x: &Point) -> Result<f64> {
    Ok(set.distance(x)?.powi(2))
}

/// Checks the four projector properties on random sets and points.
pub fn projector_axioms(cfg: &AxiomConfig) -> Result<Vec<AxiomTally>> {
    let mut out = Vec::new();
    for (vi, variant) in SET_VARIANTS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(31).wrapping_add(vi as u64));
        let mut tallies: Vec<AxiomTally> = AXIOMS
            .iter()
            .map(|a| AxiomTally {
                variant: variant.to_string(),
                axiom: a.to_string(),
                samples: cfg.samples,
                violations: 0,
                worst: f64::NEG_INFINITY,
            })
            .collect();
        for _ in 0..cfg.samples {
            let m = rng.random_range(1..=4);
            let set = ConvexSet::from_spec(&random_set(&mut rng, variant, m), DykstraConfig::default())?;
            let x = Point::from_vec(uniform_vec(&mut rng, m, 5.0));
            let y = Point::from_vec(uniform_vec(&mut rng, m, 5.0));
            let px = set.project(&x)?;
            let py = set.project(&y)?;
            let mut record = |k: usize, excess: f64| {
                let t = &mut tallies[k];
                t.worst = t.worst.max(excess);
                if excess > 0.0 {
                    t.violations += 1;
                }
            };

            record(0, (&px - &py).norm() - (&x - &y).norm() - cfg.slack);

            // y projected is a member of the set
            record(1, (&px - &x).dot(&(&px - &py)) - cfg.slack);

            // the identity is checked away from the boundary
            let mut g = x.clone();
            for _ in 0..GRADIENT_DRAWS {
                if set.distance(&g)? >= GRADIENT_MIN_DISTANCE {
                    break;
                }
                g = Point::from_vec(uniform_vec(&mut rng, m, 5.0));
            }
            let grad = set.sqdist_gradient(&g)?;
            let h = 1e-5 * (1.0 + g.norm());
            let mut fd = Point::zeros(m);
            for c in 0..m {
                let mut a = g.clone();
                let mut b = g.clone();
                a[c] += h;
                b[c] -= h;
                fd[c] = (sq_dist(&set, &a)? - sq_dist(&set, &b)?) / (2.0 * h);
            }
            let rel = (&fd - &grad).norm() / grad.norm().max(1.0);
            record(2, rel - cfg.gradient_rel_tol);

            let (da, db) = ((&x - &px).norm(), (&y - &py).norm());
            let lhs = (&x - &px).dot(&(&y - &x));
            let mut excess = lhs - da * (da - db).abs();
            if da > db {
                excess = excess.max(lhs + da * (da - db));
            }
            record(3, excess - cfg.slack);
        }
        out.extend(tallies);
    }
    Ok(out)
}

fn projector_axiom_checks() -> Vec<SuiteCheck> {
    match projector_axioms(&AxiomConfig::default()) {
        Ok(tallies) => tallies
            .iter()
            .map(|t| {
                SuiteCheck::at_most(
                    &format!("{}/{}", t.variant, t.axiom),
                    t.violations as f64,
                    0.0,
                    format!("{} samples, worst excess {:e}", t.samples, t.worst),
                )
            })
            .collect(),
        Err(e) => vec![SuiteCheck::flag("projector-axioms", false, e.to_string())],
    }
}

// ---- lemma41 ----

const LEMMA41_SCENARIOS: u64 = 50;

/// `(N, m)` for the k-th random scenario: N in 2..=6, m in 1..=3.
fn lemma41_shape(k: u64) -> (usize, usize) {
    (2 + (k % 5) as usize, 1 + (k % 3) as usize)
}

fn lemma41_checks(out_dir: Option<&Path>, artifacts: &mut Vec<String>) -> Result<Vec<SuiteCheck>> {
    let mut violations = 0usize;
    let mut worst_sublevel = f64::NEG_INFINITY;
    for (name, scenario) in suite_scenarios(Suite::Lemma41)? {
        let (compiled, traj) = simulate(&scenario)?;
        let series = d_series(&traj, &compiled.oracle, 1)?;
        let d0 = series[0].1;
        let tol = monotonicity_tolerance(compiled.system.lipschitz_bound(), d0, scenario.integrator.step);
        violations += check_monotone_d(&series, tol).len();
        let max_d = series.iter().map(|s| s.1).fold(0.0, f64::max);
        worst_sublevel = worst_sublevel.max(max_d - d0 - tol);
        write_artifact(out_dir, &name, &compiled, &traj, artifacts)?;
    }
    Ok(vec![
        SuiteCheck::at_most(
            "monotonicity_violations",
            violations as f64,
            0.0,
            format!("{LEMMA41_SCENARIOS} random scenarios"),
        ),
        SuiteCheck::at_most("sublevel_excess", worst_sublevel, 0.0, "max_t d(t) - d(0) - tol"),
    ])
}

// ---- eq39 ----

const EQ39_SCENARIOS: u64 = 10;

fn eq39_checks(out_dir: Option<&Path>, artifacts: &mut Vec<String>) -> Result<Vec<SuiteCheck>> {
    let mut checks = Vec::new();
    for (name, scenario) in suite_scenarios(Suite::Eq39)? {
        let (compiled, traj) = simulate(&scenario)?;
        let integral = barbalat_integral(&traj, compiled.sets())?;
        if name == "single" {
            let exact = 0.5 * (1.0 - (-2.0 * scenario.integrator.t_end).exp());
            checks.push(SuiteCheck::at_most(
                "single_agent_error",
                (integral - exact).abs(),
                1e-4,
                format!("integral {integral}, closed form {exact}"),
            ));
        } else {
            let d0 = d_series(&traj, &compiled.oracle, traj.len())?[0].1;
            let bound = traj.agents() as f64 * d0 / 2.0;
            checks.push(SuiteCheck::at_most(
                &format!("{name}_ratio"),
                integral / bound,
                1.05,
                format!("integral {integral}, N d(0) / 2 = {bound}"),
            ));
        }
        write_artifact(out_dir, &name, &compiled, &traj, artifacts)?;
    }
    Ok(checks)
}

// ---- delta-containment ----

fn containment_checks(out_dir: Option<&Path>, artifacts: &mut Vec<String>) -> Result<Vec<SuiteCheck>> {
    let mut checks = Vec::new();
    for (name, scenario) in suite_scenarios(Suite::DeltaContainment)? {
        let (compiled, traj) = simulate(&scenario)?;
        let times = check_grid(0.0, traj.final_time(), 5.0);
        let recs = check_delta_containment(&traj, &compiled.oracle, &times)?;
        let worst = recs.iter().map(|r| r.excess).fold(f64::NEG_INFINITY, f64::max);
        checks.push(SuiteCheck::at_most(
            "max_excess",
            worst,
            1e-4,
            format!("{} time pairs", recs.len()),
        ));
        write_artifact(out_dir, &name, &compiled, &traj, artifacts)?;
    }
    Ok(checks)
}

// ---- theorem31 ----

fn theorem31_checks(out_dir: Option<&Path>, artifacts: &mut Vec<String>) -> Result<Vec<SuiteCheck>> {
    let mut checks = Vec::new();
    for (name, scenario) in suite_scenarios(Suite::Theorem31)? {
        let (compiled, traj) = simulate(&scenario)?;
        let window = scenario.problem.agents as f64;
        let cert = certify_ujsc(compiled.topology(), window)?;
        checks.push(SuiteCheck::flag("ujsc_certified", cert.pass, format!("window {window}")));
        let conv = detect_convergence(&traj, &compiled.oracle, 1e-3)?;
        checks.push(SuiteCheck::flag(
            "converged",
            conv.is_some(),
            format!("converged_at {conv:?} (tol 1e-3)"),
        ));
        let tail = tail_statistics(&traj, compiled.sets(), &compiled.oracle, 0.25)?;
        checks.push(SuiteCheck::at_most(
            "tail_own_set_distance",
            tail.worst_own_set_distance(),
            1e-3,
            format!("window {:?}", tail.window),
        ));
        write_artifact(out_dir, &name, &compiled, &traj, artifacts)?;
    }
    Ok(checks)
}

// ---- theorem32 ----

fn theorem32_checks(out_dir: Option<&Path>, artifacts: &mut Vec<String>) -> Result<Vec<SuiteCheck>> {
    let mut checks = Vec::new();
    for (name, scenario) in suite_scenarios(Suite::Theorem32)? {
        let (compiled, traj) = simulate(&scenario)?;
        let ijc = certify_ijc(compiled.topology())?;
        let intervals = match &ijc.window_or_partition {
            Coverage::Partition(cuts) => cuts.len().saturating_sub(1),
            Coverage::Window(_) => 0,
        };
        checks.push(SuiteCheck::flag("ijc_certified", ijc.pass, ijc.note.clone()));
        checks.push(SuiteCheck {
            name: "complete_intervals".into(),
            pass: intervals >= 6,
            value: intervals as f64,
            limit: 6.0,
            detail: "at least 6 required".into(),
        });
        let base = scenario.topology.dwell;
        let ujsc = certify_ujsc(compiled.topology(), base)?;
        checks.push(SuiteCheck::flag(
            "ujsc_fails_at_base",
            !ujsc.pass,
            format!("window {base}, first failure {:?}", ujsc.first_failure),
        ));
        let conv = detect_convergence(&traj, &compiled.oracle, 1e-2)?;
        checks.push(SuiteCheck::flag(
            "converged",
            conv.is_some(),
            format!("converged_at {conv:?} (tol 1e-2)"),
        ));
        write_artifact(out_dir, &name, &compiled, &traj, artifacts)?;
    }
    Ok(checks)
}

// ---- counterexample ----

pub const DIAMETER_ROUNDOFF: f64 = 1e-9;

fn counterexample_checks(out_dir: Option<&Path>, artifacts: &mut Vec<String>) -> Result<Vec<SuiteCheck>> {
    let mut checks = Vec::new();
    for (name, scenario) in suite_scenarios(Suite::Counterexample)? {
        let (compiled, traj) = simulate(&scenario)?;
        let conv = detect_convergence(&traj, &compiled.oracle, 0.1)?;
        checks.push(SuiteCheck::flag("not_converged", conv.is_none(), format!("converged_at {conv:?}")));
        let last = traj.final_state();
        let diameter = spread_of(&last).diameter;
        checks.push(SuiteCheck {
            name: "terminal_diameter".into(),
            // the analytic limit is exactly 2, so allow roundoff above it
            pass: (1.9..=2.0 + DIAMETER_ROUNDOFF).contains(&diameter),
            value: diameter,
            limit: 1.9,
            detail: "must lie in [1.9, 2.0]".into(),
        });
        let limits = [Point::from_column_slice(&[1.0, 0.0]), Point::from_column_slice(&[-1.0, 0.0])];
        let err = last
            .states
            .iter()
            .zip(&limits)
            .map(|(x, l)| (x - l).norm())
            .fold(0.0, f64::max);
        checks.push(SuiteCheck::at_most("limit_error", err, 1e-3, "distance to (1, 0) and (-1, 0)"));
        let ujsc = certify_ujsc(compiled.topology(), compiled.topology().horizon())?;
        checks.push(SuiteCheck::flag(
            "ujsc_fails",
            !ujsc.pass,
            format!("first failure {:?}", ujsc.first_failure),
        ));
        let series = d_series(&traj, &compiled.oracle, 1)?;
        let tol = monotonicity_tolerance(compiled.system.lipschitz_bound(), series[0].1, scenario.integrator.step);
        checks.push(SuiteCheck::at_most(
            "monotonicity_violations",
            check_monotone_d(&series, tol).len() as f64,
            0.0,
            "d(t) nonincreasing without connectivity",
        ));
        write_artifact(out_dir, &name, &compiled, &traj, artifacts)?;
    }
    Ok(checks)
}
