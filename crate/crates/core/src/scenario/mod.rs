//! Scenario files: schema, structural checks, assumption validation and
//! compilation into a runnable system.

mod generators;

pub use generators::{
    capped_upper_weight, make_counterexample, make_random_feasible, make_random_symmetric, make_reference_ijc,
    make_reference_ijc_with_rounds, make_reference_ujsc, make_single_ball, DEFAULT_DWELL, DEFAULT_IJC_ROUNDS, DEFAULT_LOWER_WEIGHT,
    DEFAULT_STEP, DEFAULT_UPPER_WEIGHT,
};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::convexsets::{ConvexSet, ConvexSetSpec, DykstraConfig, IntersectionOracle, Point, FEASIBILITY_TOL};
use crate::dynamics::{lipschitz_bound, FlowSystem, GainSpec, IntegratorConfig, NetworkState, Trajectory, WeightSpec, WeightsSection, STEP_GUARD};
use crate::error::{Error, Result};
use crate::topology::{SwitchingTopology, TopologySection};

/// Number of seeded start points for the feasibility check.
const FEASIBILITY_STARTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub dimension: usize,
    pub agents: usize,
    #[serde(default)]
    pub oracle: DykstraConfig,
    pub sets: Vec<ConvexSetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    pub value: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub problem: Problem,
    pub topology: TopologySection,
    pub weights: WeightsSection,
    pub gains: GainSpec,
    pub initial: InitialSection,
    pub integrator: IntegratorConfig,
    pub seed: SeedSection,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

/// Outcome of one validation check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Largest feasibility residual over the seeded starts, when computed.
    pub feasibility_residual: Option<f64>,
    /// `"structural"` when some set is a ball or box, else
    /// `"unverified (user-asserted)"`.
    pub boundedness: String,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// A validated scenario ready to integrate.
#[derive(Debug, Clone)]
pub struct CompiledScenario {
    pub system: FlowSystem,
    pub oracle: IntersectionOracle,
    pub initial: NetworkState,
    pub integrator: IntegratorConfig,
}

impl CompiledScenario {
    pub fn sets(&self) -> &[ConvexSet] {
        self.system.sets()
    }

    pub fn topology(&self) -> &SwitchingTopology {
        self.system.topology()
    }

    pub fn simulate(&self) -> Result<Trajectory> {
        self.system.simulate(&self.initial, &self.integrator)
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn horizon(&self) -> f64 {
        self.topology.horizon.unwrap_or(self.integrator.t_end)
    }

    pub fn initial_state(&self) -> NetworkState {
        NetworkState::new(
            self.initial.states.iter().map(|v| Point::from_column_slice(v)).collect(),
            0.0,
        )
    }

    /// Every graph the signal can show is bidirectional and the weight rule
    /// is symmetric.
    pub fn is_symmetric_undirected(&self) -> bool {
        self.topology.signal.palette().iter().all(|g| g.is_bidirectional()) && self.weights.rule.is_symmetric()
    }

    /// Shape checks: counts and dimensions agree across sections.
    pub fn check_structure(&self) -> Result<()> {
        let (m, n) = (self.problem.dimension, self.problem.agents);
        if m == 0 {
            return Err(Error::structural("problem.dimension", "must be at least 1"));
        }
        if n == 0 {
            return Err(Error::structural("problem.agents", "must be at least 1"));
        }
        if self.problem.sets.len() != n {
            return Err(Error::structural(
                "problem.sets",
                format!("{} sets for {n} agents", self.problem.sets.len()),
            ));
        }
        for (i, s) in self.problem.sets.iter().enumerate() {
            if let Err(Error::DimensionMismatch { expected, got }) = s.check(m) {
                return Err(Error::structural(
                    format!("problem.sets[{i}]"),
                    format!("dimension {got}, expected {expected}"),
                ));
            }
        }
        match self.topology.signal.node_count() {
            Some(k) if k == n => {}
            Some(k) => {
                return Err(Error::structural("topology.signal", format!("{k} nodes for {n} agents")));
            }
            None => return Err(Error::structural("topology.signal", "no graphs")),
        }
        if self.topology.signal.palette().iter().any(|g| g.n() != n) {
            return Err(Error::structural("topology.signal", "graphs disagree on node count"));
        }
        if let WeightSpec::Constant { matrix } = &self.weights.rule {
            if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                return Err(Error::structural("weights.rule.matrix", format!("must be {n} x {n}")));
            }
        }
        if let WeightSpec::TimeVarying { arcs, .. } = &self.weights.rule {
            if arcs.iter().any(|a| a.from >= n || a.to >= n) {
                return Err(Error::structural("weights.rule.arcs", "node out of range"));
            }
        }
        if self.gains.values.len() != n {
            return Err(Error::structural(
                "gains.values",
                format!("{} gains for {n} agents", self.gains.values.len()),
            ));
        }
        if self.initial.states.len() != n {
            return Err(Error::structural(
                "initial.states",
                format!("{} states for {n} agents", self.initial.states.len()),
            ));
        }
        if let Some(i) = self.initial.states.iter().position(|s| s.len() != m) {
            return Err(Error::structural(format!("initial.states[{i}]"), format!("expected {m} coordinates")));
        }
        Ok(())
    }

    /// Runs every assumption check. Only malformed input is an error.
    pub fn validate(&self) -> Result<ValidationReport> {
        self.check_structure()?;
        let mut checks = Vec::new();
        let mut push = |name: &str, outcome: std::result::Result<String, String>| {
            let (pass, detail) = match outcome {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            checks.push(Check {
                name: name.into(),
                pass,
                detail,
            });
        };

        let horizon = self.horizon();
        push(
            "dwell_time",
            match self.topology.signal.realize(self.topology.dwell, horizon) {
                Ok(t) => Ok(format!("{} pieces, dwell {}", t.piece_count(), t.dwell())),
                Err(e) => Err(e.to_string()),
            },
        );

        let m = self.problem.dimension;
        let mut compiled = Vec::new();
        let mut set_errors = Vec::new();
        for (i, s) in self.problem.sets.iter().enumerate() {
            match s.check(m).and_then(|_| ConvexSet::from_spec(s, self.problem.oracle)) {
                Ok(c) => compiled.push(c),
                Err(e) => set_errors.push(format!("set {i}: {e}")),
            }
        }
        let sets_ok = set_errors.is_empty();
        push(
            "set_validity",
            if sets_ok {
                Ok(format!("{} sets", compiled.len()))
            } else {
                Err(set_errors.join("; "))
            },
        );

        let mut residual = None;
        let feasibility = if sets_ok {
            match self.feasibility_residual(compiled) {
                Ok(r) => {
                    residual = Some(r);
                    if r < FEASIBILITY_TOL {
                        Ok(format!("max residual {r:e} over {FEASIBILITY_STARTS} starts"))
                    } else {
                        Err(format!(
                            "max residual {r:e} over {FEASIBILITY_STARTS} starts; the sets appear to have no common point"
                        ))
                    }
                }
                Err(e) => Err(e.to_string()),
            }
        } else {
            Err("skipped: invalid sets".into())
        };
        push("feasibility", feasibility);

        push("weight_bounds", self.check_weights());

        let g = &self.gains;
        push(
            "gain_bounds",
            if !(g.floor > 0.0 && g.floor.is_finite()) {
                Err(format!("gain floor must be positive, got {}", g.floor))
            } else if let Some(i) = g.values.iter().position(|&b| !(b >= g.floor && b.is_finite())) {
                Err(format!("gain {i} = {} is below floor {}", g.values[i], g.floor))
            } else {
                Ok(format!("gains in [{}, {}]", g.floor, g.max()))
            },
        );

        let cfg = &self.integrator;
        let lip = lipschitz_bound(self.problem.agents, self.weights.upper, g.max());
        push(
            "step_size",
            if !(cfg.step > 0.0 && cfg.step.is_finite()) {
                Err(format!("step must be positive, got {}", cfg.step))
            } else if !(cfg.t_end > 0.0 && cfg.t_end <= horizon) {
                Err(format!("t_end {} must lie in (0, {horizon}]", cfg.t_end))
            } else if cfg.step * lip > STEP_GUARD {
                Err(format!(
                    "h * L = {} * {lip} = {} exceeds {STEP_GUARD}",
                    cfg.step,
                    cfg.step * lip
                ))
            } else {
                Ok(format!("h * L = {}", cfg.step * lip))
            },
        );

        push(
            "initial_state",
            if self.initial.states.iter().flatten().all(|v| v.is_finite()) {
                Ok("finite".into())
            } else {
                Err("non-finite initial coordinate".into())
            },
        );

        let bounded = self.problem.sets.iter().any(ConvexSetSpec::structurally_bounded);
        Ok(ValidationReport {
            checks,
            feasibility_residual: residual,
            boundedness: if bounded {
                "structural".into()
            } else {
                "unverified (user-asserted)".into()
            },
        })
    }

    /// Worst feasibility residual of the intersection oracle from seeded
    /// starts. A certified run also counts the member distances of its
    /// point; an uncertified one counts at least the tolerance itself.
    fn feasibility_residual(&self, sets: Vec<ConvexSet>) -> Result<f64> {
        let oracle = IntersectionOracle::new(sets, self.problem.oracle)?;
        let m = self.problem.dimension;
        let scale = 1.0
            + self
                .initial
                .states
                .iter()
                .flatten()
                .fold(0.0f64, |a, v| a.max(v.abs()));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.value);
        let mut worst: f64 = 0.0;
        for _ in 0..FEASIBILITY_STARTS {
            let x = Point::from_fn(m, |_, _| rng.random_range(-scale..scale));
            let run = oracle.run(&x)?;
            let mut r = run.residual;
            if run.certified() {
                for s in oracle.members() {
                    r = r.max(s.distance(&run.point)?);
                }
            } else {
                r = r.max(FEASIBILITY_TOL);
            }
            worst = worst.max(r);
        }
        Ok(worst)
    }

    fn check_weights(&self) -> std::result::Result<String, String> {
        let w = &self.weights;
        if !(w.lower > 0.0 && w.lower <= w.upper && w.upper.is_finite()) {
            return Err(format!("need 0 < lower <= upper, got [{}, {}]", w.lower, w.upper));
        }
        let inside = |v: f64| v >= w.lower && v <= w.upper;
        match &w.rule {
            WeightSpec::Constant { matrix } => {
                for g in self.topology.signal.palette() {
                    for &(j, i) in g.arcs() {
                        if !inside(matrix[i][j]) {
                            return Err(format!(
                                "weight of arc {j} -> {i} is {}, outside [{}, {}]",
                                matrix[i][j], w.lower, w.upper
                            ));
                        }
                    }
                }
            }
            WeightSpec::TimeVarying { base, arcs } => {
                for (lo, hi) in std::iter::once(base.range()).chain(arcs.iter().map(|a| a.wave.range())) {
                    if !(inside(lo) && inside(hi)) {
                        return Err(format!("oscillation range [{lo}, {hi}] leaves [{}, {}]", w.lower, w.upper));
                    }
                }
            }
            WeightSpec::StateDependent => {}
        }
        Ok(format!("weights in [{}, {}]", w.lower, w.upper))
    }

    /// Validates, then builds the system, oracle and initial state.
    pub fn compile(&self) -> Result<CompiledScenario> {
        let report = self.validate()?;
        if !report.all_pass() {
            let msg = report
                .failures()
                .map(|c| format!("{}: {}", c.name, c.detail))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::Validation(msg));
        }
        self.compile_unchecked()
    }

    /// Builds without running the assumption checks.
    pub fn compile_unchecked(&self) -> Result<CompiledScenario> {
        self.check_structure()?;
        let sets = self
            .problem
            .sets
            .iter()
            .map(|s| ConvexSet::from_spec(s, self.problem.oracle))
            .collect::<Result<Vec<_>>>()?;
        let oracle = IntersectionOracle::new(sets.clone(), self.problem.oracle)?;
        let topology = self.topology.signal.realize(self.topology.dwell, self.horizon())?;
        let system = FlowSystem::new(sets, topology, self.weights.clone(), &self.gains)?;
        Ok(CompiledScenario {
            system,
            oracle,
            initial: self.initial_state(),
            integrator: self.integrator,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Method;
    use crate::topology::{DigraphSnapshot, TopologySpec};

    fn two_agent(sets: Vec<ConvexSetSpec>) -> Scenario {
        Scenario {
            problem: Problem {
                dimension: 2,
                agents: 2,
                oracle: DykstraConfig::default(),
                sets,
            },
            topology: TopologySection {
                dwell: 0.5,
                horizon: None,
                signal: TopologySpec::Static {
                    graph: DigraphSnapshot::bidirectional(2, [(0, 1)]).unwrap(),
                },
            },
            weights: WeightsSection {
                lower: 0.1,
                upper: 2.0,
                rule: WeightSpec::uniform(2, 1.0),
            },
            gains: GainSpec::unit(2),
            initial: InitialSection {
                states: vec![vec![3.0, 0.0], vec![-3.0, 0.0]],
            },
            integrator: IntegratorConfig {
                method: Method::Rk4,
                step: 0.01,
                t_end: 10.0,
            },
            seed: SeedSection { value: 1 },
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn tangent_balls_pass_feasibility() {
        let s = two_agent(vec![ConvexSetSpec::ball(&[0.0, 0.0], 1.0), ConvexSetSpec::ball(&[2.0, 0.0], 1.0)]);
        let r = s.validate().unwrap();
        assert!(r.all_pass(), "{r:?}");
        assert_eq!(r.boundedness, "structural");
    }

    #[test]
    fn disjoint_balls_fail_feasibility() {
        let s = two_agent(vec![ConvexSetSpec::ball(&[0.0, 0.0], 1.0), ConvexSetSpec::ball(&[3.0, 0.0], 1.0)]);
        let r = s.validate().unwrap();
        let c = r.check("feasibility").unwrap();
        assert!(!c.pass);
        let res = r.feasibility_residual.unwrap();
        assert!((res - 0.5).abs() < 1e-3, "{res}");
        assert!(matches!(s.compile(), Err(Error::Validation(_))));
    }

    #[test]
    fn zero_lower_weight_fails() {
        let mut s = two_agent(vec![ConvexSetSpec::ball(&[0.0, 0.0], 1.0); 2]);
        s.weights.lower = 0.0;
        let r = s.validate().unwrap();
        assert!(!r.check("weight_bounds").unwrap().pass);
        assert!(r.check("feasibility").unwrap().pass);
    }

    #[test]
    fn unbounded_sets_are_flagged() {
        let s = two_agent(vec![
            ConvexSetSpec::halfspace(&[1.0, 0.0], 0.0),
            ConvexSetSpec::halfspace(&[0.0, 1.0], 0.0),
        ]);
        let r = s.validate().unwrap();
        assert!(r.all_pass());
        assert_eq!(r.boundedness, "unverified (user-asserted)");
    }

    #[test]
    fn structural_errors_name_the_field() {
        let mut s = two_agent(vec![ConvexSetSpec::ball(&[0.0, 0.0], 1.0); 2]);
        s.initial.states.pop();
        match s.validate() {
            Err(Error::Structural { field, .. }) => assert_eq!(field, "initial.states"),
            other => panic!("{other:?}"),
        }
        let mut s = two_agent(vec![ConvexSetSpec::ball(&[0.0, 0.0], 1.0), ConvexSetSpec::ball(&[0.0], 1.0)]);
        s.problem.dimension = 2;
        assert!(matches!(s.validate(), Err(Error::Structural { .. })));
    }

    #[test]
    fn step_guard_is_a_check() {
        let mut s = two_agent(vec![ConvexSetSpec::ball(&[0.0, 0.0], 1.0); 2]);
        s.integrator.step = 0.05;
        assert!(!s.validate().unwrap().check("step_size").unwrap().pass);
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let s = two_agent(vec![ConvexSetSpec::ball(&[0.0, 0.0], 1.0); 2]);
        let text = s.to_toml().unwrap();
        let back = Scenario::from_toml(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_toml().unwrap(), text);
        let bad = text.replace("[integrator]", "[integrator]\nbogus = 1");
        assert!(matches!(Scenario::from_toml(&bad), Err(Error::Parse(_))));
    }
}
