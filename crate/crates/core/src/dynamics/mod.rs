//! The closed-loop consensus field and its switch-aware integration.

mod trajectory;

pub use trajectory::{NetworkState, Trajectory};

use serde::{Deserialize, Serialize};

use crate::convexsets::{ConvexSet, Point};
use crate::error::{Error, Result};
use crate::topology::{DigraphSnapshot, SwitchingTopology};

/// Largest accepted `h * L`.
pub const STEP_GUARD: f64 = 0.1;

/// Weight bounds plus the rule producing `a_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub lower: f64,
    pub upper: f64,
    pub rule: WeightSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Oscillation {
    pub mean: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl Oscillation {
    fn at(&self, t: f64) -> f64 {
        self.mean + self.amplitude * (self.frequency * t + self.phase).sin()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.mean - self.amplitude.abs(), self.mean + self.amplitude.abs())
    }
}

/// Oscillation for the arc `from -> to`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcOscillation {
    pub from: usize,
    pub to: usize,
    #[serde(flatten)]
    pub wave: Oscillation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    /// `matrix[i][j]` weighs the arc `j -> i`.
    Constant { matrix: Vec<Vec<f64>> },
    /// Arcs listed in `arcs` use their own oscillation, all others `base`.
    TimeVarying {
        base: Oscillation,
        #[serde(default)]
        arcs: Vec<ArcOscillation>,
    },
    /// `1 / (1 + |x_i - x_j|)`.
    StateDependent,
}

impl WeightSpec {
    pub fn uniform(n: usize, value: f64) -> Self {
        let matrix = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { value }).collect())
            .collect();
        WeightSpec::Constant { matrix }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            WeightSpec::Constant { matrix } => matrix
                .iter()
                .enumerate()
                .all(|(i, row)| row.iter().enumerate().all(|(j, &a)| matrix[j][i] == a)),
            WeightSpec::TimeVarying { arcs, .. } => arcs
                .iter()
                .all(|a| arcs.iter().any(|b| b.from == a.to && b.to == a.from && b.wave == a.wave)),
            WeightSpec::StateDependent => true,
        }
    }
}

/// Per-agent projection gains, each at least `floor > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSpec {
    pub floor: f64,
    pub values: Vec<f64>,
}

impl GainSpec {
    pub fn unit(n: usize) -> Self {
        GainSpec {
            floor: 1.0,
            values: vec![1.0; n],
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    pub step: f64,
    pub t_end: f64,
}

/// `L = 2 (N - 1) a_hi + 2 max b_i`, a Lipschitz bound for the field.
pub fn lipschitz_bound(agents: usize, upper_weight: f64, max_gain: f64) -> f64 {
    2.0 * agents.saturating_sub(1) as f64 * upper_weight + 2.0 * max_gain
}

/// Everything needed to evaluate the field, compiled from a scenario.
#[derive(Debug, Clone)]
pub struct FlowSystem {
    sets: Vec<ConvexSet>,
    topology: SwitchingTopology,
    weights: WeightsSection,
    gains: Vec<f64>,
    dim: usize,
}

impl FlowSystem {
    pub fn new(sets: Vec<ConvexSet>, topology: SwitchingTopology, weights: WeightsSection, gains: &GainSpec) -> Result<Self> {
        let n = sets.len();
        let dim = sets
            .first()
            .map(ConvexSet::dim)
            .ok_or_else(|| Error::Precondition("system needs at least one agent".into()))?;
        if let Some(s) = sets.iter().find(|s| s.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: s.dim() });
        }
        if topology.n() != n {
            return Err(Error::Precondition(format!("topology has {} nodes for {n} agents", topology.n())));
        }
        if gains.values.len() != n {
            return Err(Error::Precondition(format!("{} gains for {n} agents", gains.values.len())));
        }
        if let WeightSpec::Constant { matrix } = &weights.rule {
            if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                return Err(Error::Precondition(format!("weight matrix must be {n} x {n}")));
            }
        }
        Ok(FlowSystem {
            sets,
            topology,
            weights,
            gains: gains.values.clone(),
            dim,
        })
    }

    pub fn agents(&self) -> usize {
        self.sets.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sets(&self) -> &[ConvexSet] {
        &self.sets
    }

    pub fn topology(&self) -> &SwitchingTopology {
        &self.topology
    }

    pub fn lipschitz_bound(&self) -> f64 {
        lipschitz_bound(self.agents(), self.weights.upper, self.gains.iter().copied().fold(0.0, f64::max))
    }

    /// `a_ij` for the arc `j -> i`, clamped into the weight bounds.
    fn weight(&self, i: usize, j: usize, xi: &[f64], xj: &[f64], t: f64) -> f64 {
        let raw = match &self.weights.rule {
            WeightSpec::Constant { matrix } => matrix[i][j],
            WeightSpec::TimeVarying { base, arcs } => arcs
                .iter()
                .find(|a| a.from == j && a.to == i)
                .map_or(base, |a| &a.wave)
                .at(t),
            WeightSpec::StateDependent => {
                let dist = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                1.0 / (1.0 + dist)
            }
        };
        raw.clamp(self.weights.lower, self.weights.upper)
    }

    /// Field on the flat state `x` (agent-major) under graph `graph`.
    /// Returns the range of weights evaluated.
    fn field_on(
        &self,
        graph: &DigraphSnapshot,
        t: f64,
        x: &[f64],
        out: &mut [f64],
        scratch: &mut Point,
    ) -> Result<Option<(f64, f64)>> {
        let m = self.dim;
        let mut range: Option<(f64, f64)> = None;
        for (i, set) in self.sets.iter().enumerate() {
            let xi = &x[i * m..(i + 1) * m];
            let oi = &mut out[i * m..(i + 1) * m];
            oi.fill(0.0);
            for &j in graph.in_neighbors(i) {
                let xj = &x[j * m..(j + 1) * m];
                let a = self.weight(i, j, xi, xj, t);
                range = Some(range.map_or((a, a), |(lo, hi)| (lo.min(a), hi.max(a))));
                for c in 0..m {
                    oi[c] += a * (xj[c] - xi[c]);
                }
            }
            scratch.as_mut_slice().copy_from_slice(xi);
            let proj = set.project_unchecked(scratch)?;
            let b = self.gains[i];
            for c in 0..m {
                oi[c] += b * (proj[c] - xi[c]);
            }
        }
        Ok(range)
    }

    /// Field at time `t` using the right-continuous graph.
    pub fn vector_field(&self, t: f64, state: &NetworkState) -> Result<Vec<Point>> {
        let n = self.agents();
        if state.states.len() != n {
            return Err(Error::Precondition(format!("{} states for {n} agents", state.states.len())));
        }
        if let Some(p) = state.states.iter().find(|p| p.len() != self.dim) {
            return Err(Error::DimensionMismatch { expected: self.dim, got: p.len() });
        }
        let graph = self.topology.snapshot_at(t)?;
        let flat: Vec<f64> = state.states.iter().flat_map(|p| p.iter().copied()).collect();
        let mut out = vec![0.0; flat.len()];
        let mut scratch = Point::zeros(self.dim);
        self.field_on(graph, t, &flat, &mut out, &mut scratch)?;
        Ok(out.chunks(self.dim).map(Point::from_column_slice).collect())
    }

    /// Integrates from `initial` at `t = 0` to `config.t_end`, with every
    /// topology switch as a step boundary.
    pub fn simulate(&self, initial: &NetworkState, config: &IntegratorConfig) -> Result<Trajectory> {
        let n = self.agents();
        let m = self.dim;
        let h = config.step;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Precondition(format!("step must be positive, got {h}")));
        }
        let guard = h * self.lipschitz_bound();
        if guard > STEP_GUARD {
            return Err(Error::Precondition(format!(
                "step {h} times Lipschitz bound {} is {guard}, above {STEP_GUARD}",
                self.lipschitz_bound()
            )));
        }
        if !(config.t_end > 0.0 && config.t_end <= self.topology.horizon()) {
            return Err(Error::Precondition(format!(
                "t_end {} must lie in (0, {}]",
                config.t_end,
                self.topology.horizon()
            )));
        }
        if initial.states.len() != n {
            return Err(Error::Precondition(format!("{} initial states for {n} agents", initial.states.len())));
        }
        if let Some(p) = initial.states.iter().find(|p| p.len() != m) {
            return Err(Error::DimensionMismatch { expected: m, got: p.len() });
        }

        let mut x: Vec<f64> = initial.states.iter().flat_map(|p| p.iter().copied()).collect();
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { t: 0.0, agent: k / m });
        }
        let mut traj = Trajectory::with_capacity(n, m, (config.t_end / h) as usize + self.topology.piece_count() + 1);
        traj.push(0.0, &x, None);

        let len = x.len();
        let mut k1 = vec![0.0; len];
        let mut k2 = vec![0.0; len];
        let mut k3 = vec![0.0; len];
        let mut k4 = vec![0.0; len];
        let mut tmp = vec![0.0; len];
        let mut scratch = Point::zeros(m);

        for (start, end, graph) in self.topology.pieces() {
            if start >= config.t_end {
                break;
            }
            let end = end.min(config.t_end);
            // Times are start + j h so rounding does not accumulate; the
            // last step lands on the piece end exactly.
            let steps = (((end - start) / h) - 1e-9).ceil().max(1.0) as usize;
            let mut t = start;
            for j in 1..=steps {
                let t_next = if j == steps { end } else { start + j as f64 * h };
                let dt = t_next - t;
                let range = match config.method {
                    Method::Euler => {
                        let r = self.field_on(graph, t, &x, &mut k1, &mut scratch)?;
                        for c in 0..len {
                            x[c] += dt * k1[c];
                        }
                        r
                    }
                    Method::Rk4 => {
                        let mut r = self.field_on(graph, t, &x, &mut k1, &mut scratch)?;
                        for c in 0..len {
                            tmp[c] = x[c] + 0.5 * dt * k1[c];
                        }
                        r = merge(r, self.field_on(graph, t + 0.5 * dt, &tmp, &mut k2, &mut scratch)?);
                        for c in 0..len {
                            tmp[c] = x[c] + 0.5 * dt * k2[c];
                        }
                        r = merge(r, self.field_on(graph, t + 0.5 * dt, &tmp, &mut k3, &mut scratch)?);
                        for c in 0..len {
                            tmp[c] = x[c] + dt * k3[c];
                        }
                        r = merge(r, self.field_on(graph, t_next, &tmp, &mut k4, &mut scratch)?);
                        for c in 0..len {
                            x[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
                        }
                        r
                    }
                };
                if let Some(c) = x.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteState { t: t_next, agent: c / m });
                }
                traj.push(t_next, &x, range);
                t = t_next;
            }
        }
        Ok(traj)
    }
}

fn merge(a: Option<(f64, f64)>, b: Option<(f64, f64)>) -> Option<(f64, f64)> {
    match (a, b) {
        (Some((l1, h1)), Some((l2, h2))) => Some((l1.min(l2), h1.max(h2))),
        (x, None) | (None, x) => x,
    }
}
