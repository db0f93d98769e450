use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::convexsets::{ConvexSet, IntersectionOracle, Point};
use crate::error::{Error, Result};

/// States of all agents at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub states: Vec<Point>,
    pub time: f64,
}

impl NetworkState {
    pub fn new(states: Vec<Point>, time: f64) -> Self {
        NetworkState { states, time }
    }
}

/// Sampled solution: one record per accepted step, including `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    agents: usize,
    dim: usize,
    times: Vec<f64>,
    /// sample-major, then agent-major
    values: Vec<f64>,
    /// Range of weights evaluated during the step ending at each sample.
    weight_ranges: Vec<Option<(f64, f64)>>,
}

impl Trajectory {
    pub(crate) fn with_capacity(agents: usize, dim: usize, samples: usize) -> Self {
        Trajectory {
            agents,
            dim,
            times: Vec::with_capacity(samples),
            values: Vec::with_capacity(samples * agents * dim),
            weight_ranges: Vec::with_capacity(samples),
        }
    }

    /// Builds a trajectory from explicit samples; used for detector tests
    /// and externally produced data.
    pub fn from_samples(samples: &[NetworkState]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Precondition("trajectory needs at least one sample".into()))?;
        let agents = first.states.len();
        let dim = first.states.first().map_or(0, |p| p.len());
        let mut traj = Trajectory::with_capacity(agents, dim, samples.len());
        for s in samples {
            if s.states.len() != agents || s.states.iter().any(|p| p.len() != dim) {
                return Err(Error::Precondition("samples disagree on shape".into()));
            }
            let flat: Vec<f64> = s.states.iter().flat_map(|p| p.iter().copied()).collect();
            traj.push(s.time, &flat, None);
        }
        Ok(traj)
    }

    pub(crate) fn push(&mut self, t: f64, x: &[f64], weights: Option<(f64, f64)>) {
        self.times.push(t);
        self.values.extend_from_slice(x);
        self.weight_ranges.push(weights);
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    /// Coordinates of agent `i` at sample `k`.
    pub fn agent(&self, k: usize, i: usize) -> &[f64] {
        let base = (k * self.agents + i) * self.dim;
        &self.values[base..base + self.dim]
    }

    pub fn agent_point(&self, k: usize, i: usize) -> Point {
        Point::from_column_slice(self.agent(k, i))
    }

    pub fn state(&self, k: usize) -> NetworkState {
        NetworkState {
            states: (0..self.agents).map(|i| self.agent_point(k, i)).collect(),
            time: self.times[k],
        }
    }

    pub fn final_state(&self) -> NetworkState {
        self.state(self.len() - 1)
    }

    /// Sample index whose time is closest to `t`.
    pub fn index_near(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            0
        } else if k == self.len() || (t - self.times[k - 1]) <= (self.times[k] - t) {
            k - 1
        } else {
            k
        }
    }

    /// Extremes over every weight evaluated during integration.
    pub fn weight_range(&self) -> Option<(f64, f64)> {
        self.weight_ranges
            .iter()
            .flatten()
            .fold(None, |acc: Option<(f64, f64)>, &(lo, hi)| {
                Some(acc.map_or((lo, hi), |(a, b)| (a.min(lo), b.max(hi))))
            })
    }

    pub fn step_weight_ranges(&self) -> &[Option<(f64, f64)>] {
        &self.weight_ranges
    }

    /// CSV with header `t,agent,c0..c{m-1},dist_Xi,dist_X0`, writing every
    /// `stride`-th sample and always the last one.
    pub fn write_csv<W: Write>(
        &self,
        out: &mut W,
        sets: &[ConvexSet],
        oracle: &IntersectionOracle,
        stride: usize,
    ) -> Result<()> {
        let io = |e: std::io::Error| Error::Precondition(format!("write failed: {e}"));
        let mut header = String::from("t,agent");
        for c in 0..self.dim {
            header.push_str(&format!(",c{c}"));
        }
        header.push_str(",dist_Xi,dist_X0\n");
        out.write_all(header.as_bytes()).map_err(io)?;
        let stride = stride.max(1);
        let last = self.len() - 1;
        for k in (0..self.len()).filter(|&k| k % stride == 0 || k == last) {
            for i in 0..self.agents {
                let x = self.agent_point(k, i);
                let mut line = format!("{:.9},{i}", self.times[k]);
                for v in x.iter() {
                    line.push_str(&format!(",{v:e}"));
                }
                let di = sets[i].distance(&x)?;
                let d0 = oracle.distance(&x)?;
                line.push_str(&format!(",{di:e},{d0:e}\n"));
                out.write_all(line.as_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convexsets::{ConvexSetSpec, DykstraConfig};

    #[test]
    fn csv_layout() {
        let s = NetworkState::new(vec![Point::from_column_slice(&[2.0, 0.0])], 0.0);
        let traj = Trajectory::from_samples(&[s.clone(), NetworkState { time: 0.5, ..s }]).unwrap();
        let spec = ConvexSetSpec::ball(&[0.0, 0.0], 1.0);
        let oracle = IntersectionOracle::from_specs(&[spec.clone()], DykstraConfig::default()).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, &[spec.compile().unwrap()], &oracle, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,agent,c0,c1,dist_Xi,dist_X0");
        assert_eq!(lines[2], "0.500000000,0,2e0,0e0,1e0,1e0");
    }

    #[test]
    fn nearest_index() {
        let s = NetworkState::new(vec![Point::zeros(1)], 0.0);
        let samples: Vec<_> = [0.0, 1.0, 2.0].iter().map(|&t| NetworkState { time: t, ..s.clone() }).collect();
        let traj = Trajectory::from_samples(&samples).unwrap();
        assert_eq!(traj.index_near(1.4), 1);
        assert_eq!(traj.index_near(1.6), 2);
        assert_eq!(traj.index_near(9.0), 2);
        assert_eq!(traj.index_near(-1.0), 0);
    }
}
