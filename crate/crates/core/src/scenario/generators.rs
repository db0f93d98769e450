//! Deterministic scenario generators.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{InitialSection, Problem, Scenario, SeedSection};
use crate::convexsets::{ConvexSetSpec, DykstraConfig, HalfspaceSpec};
use crate::dynamics::{GainSpec, IntegratorConfig, Method, WeightSpec, WeightsSection, STEP_GUARD};
use crate::error::{Error, Result};
use crate::topology::{DigraphSnapshot, TopologySection, TopologySpec};

pub const DEFAULT_DWELL: f64 = 0.5;
pub const DEFAULT_LOWER_WEIGHT: f64 = 0.1;
pub const DEFAULT_UPPER_WEIGHT: f64 = 2.0;
pub const DEFAULT_STEP: f64 = 0.01;
/// Passes through the edge list in the growing-interval reference.
pub const DEFAULT_IJC_ROUNDS: u32 = 12;

const SET_RADIUS: f64 = 2.0;
const INITIAL_RADIUS: f64 = 5.0;
const MAX_ATTEMPTS: usize = 10;

/// Largest upper weight (at most the default, rounded down to 1e-3) that
/// keeps `h L <= 0.1` for `agents` agents with gains up to `max_gain`.
pub fn capped_upper_weight(agents: usize, max_gain: f64, step: f64) -> f64 {
    if agents < 2 {
        return DEFAULT_UPPER_WEIGHT;
    }
    let room = (STEP_GUARD / step - 2.0 * max_gain) / (2.0 * (agents - 1) as f64);
    (room * 1000.0).floor() / 1000.0
}

fn upper_weight(agents: usize) -> f64 {
    capped_upper_weight(agents, 1.0, DEFAULT_STEP).min(DEFAULT_UPPER_WEIGHT)
}

/// Seeds in scenario files must fit a signed 64-bit integer.
fn file_seed(seed: u64) -> u64 {
    seed & (i64::MAX as u64)
}

fn labels(kind: &str, extra: &[(&str, String)]) -> BTreeMap<String, String> {
    let mut m = BTreeMap::from([("generator".to_string(), kind.to_string())]);
    for (k, v) in extra {
        m.insert(k.to_string(), v.clone());
    }
    m
}

/// Unit vectors spread evenly in the plane of the first two coordinates,
/// rotated by a seeded angle. In one dimension, alternating `+1, -1`.
fn ring_directions(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    if m == 1 {
        return (0..n).map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }]).collect();
    }
    let phase = rng.random_range(0.0..TAU);
    (0..n)
        .map(|i| {
            let a = phase + TAU * i as f64 / n as f64;
            let mut v = vec![0.0; m];
            v[0] = a.cos();
            v[1] = a.sin();
            v
        })
        .collect()
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|c| c * s).collect()
}

fn base_scenario(
    problem: Problem,
    topology: TopologySection,
    weights: WeightsSection,
    initial: Vec<Vec<f64>>,
    t_end: f64,
    seed: u64,
    metadata: BTreeMap<String, String>,
) -> Scenario {
    let n = problem.agents;
    Scenario {
        problem,
        topology,
        weights,
        gains: GainSpec::unit(n),
        initial: InitialSection { states: initial },
        integrator: IntegratorConfig {
            method: Method::Rk4,
            step: DEFAULT_STEP,
            t_end,
        },
        seed: SeedSection { value: file_seed(seed) },
        metadata,
    }
}

fn check_agents(n: usize, m: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Generation(format!("need at least 2 agents, got {n}")));
    }
    if m < 1 {
        return Err(Error::Generation("dimension must be at least 1".into()));
    }
    Ok(())
}

/// Balls of radius 2 centered on the unit circle (all contain the origin),
/// a directed ring traced one arc per unit time, and agents starting on a
/// radius-5 circle opposite their centers. Jointly strongly connected over
/// every window of length `n`.
pub fn make_reference_ujsc(n: usize, m: usize, seed: u64) -> Result<Scenario> {
    check_agents(n, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs = ring_directions(n, m, &mut rng);
    let upper = upper_weight(n);
    let graphs = (0..n)
        .map(|i| DigraphSnapshot::new(n, [(i, (i + 1) % n)]))
        .collect::<Result<Vec<_>>>()?;
    Ok(base_scenario(
        Problem {
            dimension: m,
            agents: n,
            oracle: DykstraConfig::default(),
            sets: dirs.iter().map(|d| ConvexSetSpec::ball(d, SET_RADIUS)).collect(),
        },
        TopologySection {
            dwell: DEFAULT_DWELL,
            horizon: None,
            signal: TopologySpec::PeriodicCycle {
                graphs,
                piece_length: 1.0,
            },
        },
        WeightsSection {
            lower: DEFAULT_LOWER_WEIGHT,
            upper,
            rule: WeightSpec::uniform(n, upper.min(1.0)),
        },
        dirs.iter().map(|d| scaled(d, -INITIAL_RADIUS)).collect(),
        200.0,
        seed,
        labels("ujsc", &[("window", format!("{n}"))]),
    ))
}

/// Growing-interval reference with the default number of rounds.
pub fn make_reference_ijc(n: usize, m: usize, seed: u64, growth: f64) -> Result<Scenario> {
    make_reference_ijc_with_rounds(n, m, seed, growth, DEFAULT_IJC_ROUNDS)
}

/// Same sets and starting states as the uniform reference. The edges of a
/// seeded spanning path are shown one at a time, bidirectionally; during
/// the k-th pass through the edges each piece lasts `0.5 growth^k`. The
/// horizon ends after `rounds` passes, so there are `rounds` connected
/// intervals of growing length.
pub fn make_reference_ijc_with_rounds(n: usize, m: usize, seed: u64, growth: f64, rounds: u32) -> Result<Scenario> {
    check_agents(n, m)?;
    if !(growth > 1.0 && growth.is_finite()) {
        return Err(Error::Generation(format!("growth must exceed 1, got {growth}")));
    }
    if rounds == 0 {
        return Err(Error::Generation("need at least one round".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs = ring_directions(n, m, &mut rng);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let graphs = order
        .windows(2)
        .map(|w| DigraphSnapshot::bidirectional(n, [(w[0], w[1])]))
        .collect::<Result<Vec<_>>>()?;
    let base = DEFAULT_DWELL;
    let horizon = (n - 1) as f64 * base * (growth.powi(rounds as i32) - 1.0) / (growth - 1.0);
    let upper = upper_weight(n);
    Ok(base_scenario(
        Problem {
            dimension: m,
            agents: n,
            oracle: DykstraConfig::default(),
            sets: dirs.iter().map(|d| ConvexSetSpec::ball(d, SET_RADIUS)).collect(),
        },
        TopologySection {
            dwell: DEFAULT_DWELL,
            horizon: None,
            signal: TopologySpec::GrowingIntervals { graphs, base, growth },
        },
        WeightsSection {
            lower: DEFAULT_LOWER_WEIGHT,
            upper,
            rule: WeightSpec::uniform(n, upper.min(1.0)),
        },
        dirs.iter().map(|d| scaled(d, -INITIAL_RADIUS)).collect(),
        horizon,
        seed,
        labels("ijc", &[("rounds", rounds.to_string()), ("base", base.to_string())]),
    ))
}

/// One agent, the unit ball in the plane, starting at `(2, 0)`. The exact
/// solution is `(1 + e^{-t}, 0)`.
pub fn make_single_ball(t_end: f64) -> Result<Scenario> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Generation(format!("t_end must be positive, got {t_end}")));
    }
    Ok(base_scenario(
        Problem {
            dimension: 2,
            agents: 1,
            oracle: DykstraConfig::default(),
            sets: vec![ConvexSetSpec::ball(&[0.0, 0.0], 1.0)],
        },
        TopologySection {
            dwell: DEFAULT_DWELL,
            horizon: None,
            signal: TopologySpec::Static {
                graph: DigraphSnapshot::empty(1),
            },
        },
        WeightsSection {
            lower: DEFAULT_LOWER_WEIGHT,
            upper: DEFAULT_UPPER_WEIGHT,
            rule: WeightSpec::uniform(1, 0.0),
        },
        vec![vec![2.0, 0.0]],
        t_end,
        0,
        labels("single", &[]),
    ))
}

/// Two agents sharing the unit ball, never communicating, starting at
/// `(3, 0)` and `(-3, 0)`. Each settles at the nearest point of the ball,
/// so they never agree.
pub fn make_counterexample(seed: u64) -> Result<Scenario> {
    let ball = ConvexSetSpec::ball(&[0.0, 0.0], 1.0);
    Ok(base_scenario(
        Problem {
            dimension: 2,
            agents: 2,
            oracle: DykstraConfig::default(),
            sets: vec![ball.clone(), ball],
        },
        TopologySection {
            dwell: DEFAULT_DWELL,
            horizon: None,
            signal: TopologySpec::Static {
                graph: DigraphSnapshot::empty(2),
            },
        },
        WeightsSection {
            lower: DEFAULT_LOWER_WEIGHT,
            upper: DEFAULT_UPPER_WEIGHT,
            rule: WeightSpec::uniform(2, 1.0),
        },
        vec![vec![3.0, 0.0], vec![-3.0, 0.0]],
        100.0,
        seed,
        labels("counterexample", &[("connectivity", "deficient".into())]),
    ))
}

fn unit_vector(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (1e-3..=1.0).contains(&n) {
            return scaled(&v, 1.0 / n);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Halfspace containing `Ball(anchor, 0.5)` with slack up to 1.5.
fn halfspace_around(rng: &mut ChaCha8Rng, anchor: &[f64]) -> HalfspaceSpec {
    let normal = unit_vector(rng, anchor.len());
    let offset = dot(&normal, anchor) + 0.5 + rng.random_range(0.0..1.5);
    HalfspaceSpec { normal, offset }
}

/// A random set of the given kind containing `Ball(anchor, 0.5)`.
fn set_around(rng: &mut ChaCha8Rng, anchor: &[f64], kind: usize) -> ConvexSetSpec {
    let m = anchor.len();
    match kind {
        0 => {
            let h = halfspace_around(rng, anchor);
            ConvexSetSpec::Halfspace {
                normal: h.normal,
                offset: h.offset,
            }
        }
        1 => {
            let shift = rng.random_range(0.0..2.0);
            let dir = unit_vector(rng, m);
            let center: Vec<f64> = anchor.iter().zip(&dir).map(|(p, d)| p + shift * d).collect();
            ConvexSetSpec::ball(&center, shift + 0.5 + rng.random_range(0.0..1.0))
        }
        2 => {
            let lo: Vec<f64> = anchor.iter().map(|p| p - 0.5 - rng.random_range(0.0..1.5)).collect();
            let hi: Vec<f64> = anchor.iter().map(|p| p + 0.5 + rng.random_range(0.0..1.5)).collect();
            ConvexSetSpec::cube(&lo, &hi)
        }
        _ => {
            let count = rng.random_range(2..=3);
            ConvexSetSpec::Polyhedron {
                halfspaces: (0..count).map(|_| halfspace_around(rng, anchor)).collect(),
            }
        }
    }
}

struct RandomShape {
    bidirectional: bool,
    weights: fn(&mut ChaCha8Rng, usize, f64, f64) -> WeightSpec,
    kind: &'static str,
}

fn state_dependent(_: &mut ChaCha8Rng, _: usize, _: f64, _: f64) -> WeightSpec {
    WeightSpec::StateDependent
}

fn symmetric_constant(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> WeightSpec {
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..i {
            let a = rng.random_range(lo..=hi);
            matrix[i][j] = a;
            matrix[j][i] = a;
        }
    }
    WeightSpec::Constant { matrix }
}

fn random_scenario(n: usize, m: usize, seed: u64, shape: RandomShape) -> Result<Scenario> {
    if n == 0 || n > 10 || m == 0 || m > 4 {
        return Err(Error::Generation(format!(
            "random scenarios need 1 <= N <= 10 and 1 <= m <= 4, got N = {n}, m = {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let upper = upper_weight(n);
    let mut last_failure = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let anchor: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sets: Vec<ConvexSetSpec> = (0..n)
            .map(|i| {
                // the first agent gets a ball or box so the common set is bounded
                let kind = if i == 0 { rng.random_range(1..=2) } else { rng.random_range(0..4) };
                set_around(&mut rng, &anchor, kind)
            })
            .collect();
        let initial: Vec<Vec<f64>> = (0..n)
            .map(|_| anchor.iter().map(|p| p + rng.random_range(-5.0..5.0)).collect())
            .collect();
        let weights = (shape.weights)(&mut rng, n, DEFAULT_LOWER_WEIGHT, upper);
        let topo_seed = file_seed(rng.random());
        let scenario = base_scenario(
            Problem {
                dimension: m,
                agents: n,
                oracle: DykstraConfig::default(),
                sets,
            },
            TopologySection {
                dwell: DEFAULT_DWELL,
                horizon: None,
                signal: TopologySpec::RandomDwell {
                    seed: topo_seed,
                    n,
                    arc_probability: 0.5,
                    palette_size: 4,
                    min_length: DEFAULT_DWELL,
                    max_length: 2.0,
                    bidirectional: shape.bidirectional,
                },
            },
            WeightsSection {
                lower: DEFAULT_LOWER_WEIGHT,
                upper,
                rule: weights,
            },
            initial,
            50.0,
            seed,
            labels(
                shape.kind,
                &[
                    ("anchor", format!("{anchor:?}")),
                    ("attempt", attempt.to_string()),
                ],
            ),
        );
        let report = scenario.validate()?;
        if report.all_pass() {
            return Ok(scenario);
        }
        last_failure = report
            .failures()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; ");
    }
    Err(Error::Generation(format!(
        "no valid scenario after {MAX_ATTEMPTS} attempts (last: {last_failure})"
    )))
}

/// Random sets sharing `Ball(p, 0.5)` for a random anchor `p`, a random
/// directed switching signal over a palette of 4 graphs, and
/// state-dependent weights.
pub fn make_random_feasible(n: usize, m: usize, seed: u64) -> Result<Scenario> {
    random_scenario(
        n,
        m,
        seed,
        RandomShape {
            bidirectional: false,
            weights: state_dependent,
            kind: "random",
        },
    )
}

/// Like [`make_random_feasible`], but every graph is bidirectional and the
/// weights are constant and symmetric.
pub fn make_random_symmetric(n: usize, m: usize, seed: u64) -> Result<Scenario> {
    random_scenario(
        n,
        m,
        seed,
        RandomShape {
            bidirectional: true,
            weights: symmetric_constant,
            kind: "symmetric",
        },
    )
}
