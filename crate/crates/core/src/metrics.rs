//! Observables over trajectories: the max squared distance to the common
//! set, coordinate spreads, the squared-distance integral, hull containment
//! and convergence detection.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::convexsets::{hull_distance, ConvexSet, IntersectionOracle, Point};
use crate::dynamics::{NetworkState, Trajectory};
use crate::error::{Error, Result};

/// `max_i |x_i|^2` measured against the common set.
pub fn d_of(state: &NetworkState, oracle: &IntersectionOracle) -> Result<f64> {
    state
        .states
        .iter()
        .try_fold(0.0f64, |acc, x| Ok(acc.max(oracle.distance(x)?.powi(2))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    /// `max_i x_il - min_i x_il` per coordinate.
    pub per_coordinate: Vec<f64>,
    pub diameter: f64,
}

impl Spread {
    pub fn max_coordinate(&self) -> f64 {
        self.per_coordinate.iter().copied().fold(0.0, f64::max)
    }
}

pub fn spread_of(state: &NetworkState) -> Spread {
    spread_of_agents(state.states.len(), |i| state.states[i].as_slice())
}

fn spread_of_agents<'a>(n: usize, agent: impl Fn(usize) -> &'a [f64]) -> Spread {
    let m = if n == 0 { 0 } else { agent(0).len() };
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    let mut diameter: f64 = 0.0;
    for i in 0..n {
        let xi = agent(i);
        for c in 0..m {
            lo[c] = lo[c].min(xi[c]);
            hi[c] = hi[c].max(xi[c]);
        }
        for j in 0..i {
            let xj = agent(j);
            let d = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            diameter = diameter.max(d);
        }
    }
    Spread {
        per_coordinate: lo.iter().zip(&hi).map(|(l, h)| h - l).collect(),
        diameter,
    }
}

/// Slack for forward differences of `d`: `1e-6 + 10 L^2 d(0) h^2`.
pub fn monotonicity_tolerance(lipschitz: f64, d0: f64, step: f64) -> f64 {
    1e-6 + 10.0 * lipschitz * lipschitz * d0 * step * step
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub t: f64,
    pub increase: f64,
}

/// `(t_k, d(t_k))` for every `stride`-th sample plus the last.
pub fn d_series(traj: &Trajectory, oracle: &IntersectionOracle, stride: usize) -> Result<Vec<(f64, f64)>> {
    sample_indices(traj, stride)
        .map(|k| Ok((traj.times()[k], d_of(&traj.state(k), oracle)?)))
        .collect()
}

fn sample_indices(traj: &Trajectory, stride: usize) -> impl Iterator<Item = usize> + '_ {
    let stride = stride.max(1);
    let last = traj.len() - 1;
    (0..traj.len()).filter(move |&k| k % stride == 0 || k == last)
}

/// Samples where `d` rises by more than `tol` over one step.
pub fn check_monotone_d(series: &[(f64, f64)], tol: f64) -> Vec<MonotonicityViolation> {
    series
        .windows(2)
        .filter(|w| w[1].1 - w[0].1 > tol)
        .map(|w| MonotonicityViolation {
            t: w[1].0,
            increase: w[1].1 - w[0].1,
        })
        .collect()
}

/// Running trapezoid integral of `sum_i |x_i|^2` measured against each
/// agent's own set. Entry `k` is the integral up to sample `k`.
pub fn barbalat_running(traj: &Trajectory, sets: &[ConvexSet]) -> Result<Vec<f64>> {
    let mut scratch = Point::zeros(traj.dim());
    let mut integrand = |k: usize| -> Result<f64> {
        let mut s = 0.0;
        for (i, set) in sets.iter().enumerate() {
            scratch.as_mut_slice().copy_from_slice(traj.agent(k, i));
            let p = set.project_unchecked(&scratch)?;
            s += (&scratch - p).norm_squared();
        }
        Ok(s)
    };
    let mut out = Vec::with_capacity(traj.len());
    let mut acc = 0.0;
    let mut prev = integrand(0)?;
    out.push(0.0);
    for k in 1..traj.len() {
        let cur = integrand(k)?;
        acc += 0.5 * (prev + cur) * (traj.times()[k] - traj.times()[k - 1]);
        out.push(acc);
        prev = cur;
    }
    Ok(out)
}

pub fn barbalat_integral(traj: &Trajectory, sets: &[ConvexSet]) -> Result<f64> {
    Ok(*barbalat_running(traj, sets)?.last().expect("trajectory is never empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarbalatReport {
    pub integral: f64,
    /// `N d(0) / 2`.
    pub bound: f64,
    /// The bound is a theorem only for undirected graphs with symmetric
    /// weights; otherwise the integral is informational.
    pub guaranteed: bool,
    pub within_bound: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContainmentRecord {
    pub t: f64,
    pub t_hat: f64,
    /// `max_i hull_distance(x(t), x_i(t_hat)) - 2 max_j |x_j(t)|`, with the
    /// last distance measured against the common set.
    pub excess: f64,
}

/// Containment excess for every pair `t < t_hat` of `check_times` (each
/// snapped to the nearest sample).
pub fn check_delta_containment(
    traj: &Trajectory,
    oracle: &IntersectionOracle,
    check_times: &[f64],
) -> Result<Vec<ContainmentRecord>> {
    let (t0, t1) = (traj.times()[0], traj.final_time());
    if let Some(&bad) = check_times.iter().find(|&&t| !(t0..=t1).contains(&t)) {
        return Err(Error::TimeOutOfRange { t: bad, horizon: t1 });
    }
    let idx: Vec<usize> = check_times.iter().map(|&t| traj.index_near(t)).collect();
    let mut out = Vec::new();
    for (a, &ka) in idx.iter().enumerate() {
        let hull: Vec<Point> = (0..traj.agents()).map(|i| traj.agent_point(ka, i)).collect();
        let slack = 2.0 * d_of(&traj.state(ka), oracle)?.sqrt();
        for &kb in &idx[a + 1..] {
            if traj.times()[kb] <= traj.times()[ka] {
                continue;
            }
            let mut worst = f64::NEG_INFINITY;
            for i in 0..traj.agents() {
                worst = worst.max(hull_distance(&hull, &traj.agent_point(kb, i))?);
            }
            out.push(ContainmentRecord {
                t: traj.times()[ka],
                t_hat: traj.times()[kb],
                excess: worst - slack,
            });
        }
    }
    Ok(out)
}

/// Earliest sample time after which every agent stays within `tol` of the
/// common set and the diameter stays within `tol`, through the end.
pub fn detect_convergence(traj: &Trajectory, oracle: &IntersectionOracle, tol: f64) -> Result<Option<f64>> {
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("tolerance must be positive, got {tol}")));
    }
    let mut earliest = None;
    for k in (0..traj.len()).rev() {
        let spread = spread_of_agents(traj.agents(), |i| traj.agent(k, i));
        if spread.diameter > tol {
            break;
        }
        let mut ok = true;
        for i in 0..traj.agents() {
            if oracle.distance(&traj.agent_point(k, i))? > tol {
                ok = false;
                break;
            }
        }
        if !ok {
            break;
        }
        earliest = Some(traj.times()[k]);
    }
    Ok(earliest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailStatistics {
    pub window: (f64, f64),
    /// Per agent, the largest distance to its own set over the window.
    pub max_dist_own_set: Vec<f64>,
    /// Per agent, max minus min over the window of its squared distance to
    /// the common set.
    pub common_sq_dist_range: Vec<f64>,
}

impl TailStatistics {
    pub fn worst_own_set_distance(&self) -> f64 {
        self.max_dist_own_set.iter().copied().fold(0.0, f64::max)
    }
}

pub fn tail_statistics(
    traj: &Trajectory,
    sets: &[ConvexSet],
    oracle: &IntersectionOracle,
    tail_fraction: f64,
) -> Result<TailStatistics> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Precondition(format!("tail fraction must lie in (0, 1], got {tail_fraction}")));
    }
    let (t0, t1) = (traj.times()[0], traj.final_time());
    let start = t1 - tail_fraction * (t1 - t0);
    let first = traj.times().partition_point(|&t| t < start - 1e-12);
    let n = traj.agents();
    let mut max_own = vec![0.0f64; n];
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for k in first..traj.len() {
        for i in 0..n {
            let x = traj.agent_point(k, i);
            max_own[i] = max_own[i].max(sets[i].distance(&x)?);
            let d = oracle.distance(&x)?.powi(2);
            lo[i] = lo[i].min(d);
            hi[i] = hi[i].max(d);
        }
    }
    Ok(TailStatistics {
        window: (traj.times()[first], t1),
        max_dist_own_set: max_own,
        common_sq_dist_range: lo.iter().zip(&hi).map(|(l, h)| h - l).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsOptions {
    /// Evaluate per-sample observables on every `stride`-th sample.
    pub stride: usize,
    pub convergence_tol: f64,
    /// Spacing of containment check times; zero disables the check.
    pub containment_every: f64,
    pub tail_fraction: f64,
    pub step: f64,
    pub lipschitz: f64,
    /// Undirected graphs with symmetric weights.
    pub symmetric: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub t: f64,
    pub d: f64,
    pub h_max: f64,
    pub diameter: f64,
    pub max_dist_own_set: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: Vec<MetricSample>,
    pub d0: f64,
    pub max_d: f64,
    pub tol_mono: f64,
    pub monotonicity_violations: Vec<MonotonicityViolation>,
    /// `max_t d(t) <= d(0) + tol_mono`.
    pub sublevel_invariant: bool,
    pub barbalat: BarbalatReport,
    pub delta_containment: Vec<ContainmentRecord>,
    pub max_containment_excess: Option<f64>,
    pub converged_at: Option<f64>,
    pub tail: TailStatistics,
    pub weight_range: Option<(f64, f64)>,
}

impl MetricsReport {
    pub fn compute(
        traj: &Trajectory,
        sets: &[ConvexSet],
        oracle: &IntersectionOracle,
        opts: &MetricsOptions,
    ) -> Result<Self> {
        let mut samples = Vec::new();
        let mut series = Vec::new();
        for k in sample_indices(traj, opts.stride) {
            let state = traj.state(k);
            let d = d_of(&state, oracle)?;
            let spread = spread_of(&state);
            let mut own: f64 = 0.0;
            for (x, s) in state.states.iter().zip(sets) {
                own = own.max(s.distance(x)?);
            }
            series.push((state.time, d));
            samples.push(MetricSample {
                t: state.time,
                d,
                h_max: spread.max_coordinate(),
                diameter: spread.diameter,
                max_dist_own_set: own,
            });
        }
        let d0 = series[0].1;
        let tol_mono = monotonicity_tolerance(opts.lipschitz, d0, opts.step);
        let max_d = series.iter().map(|s| s.1).fold(0.0, f64::max);

        let integral = barbalat_integral(traj, sets)?;
        let bound = traj.agents() as f64 * d0 / 2.0;

        let delta_containment = if opts.containment_every > 0.0 {
            let times = check_grid(traj.times()[0], traj.final_time(), opts.containment_every);
            check_delta_containment(traj, oracle, &times)?
        } else {
            Vec::new()
        };
        let max_containment_excess = delta_containment.iter().map(|r| r.excess).reduce(f64::max);

        Ok(MetricsReport {
            samples,
            d0,
            max_d,
            tol_mono,
            monotonicity_violations: check_monotone_d(&series, tol_mono),
            sublevel_invariant: max_d <= d0 + tol_mono,
            barbalat: BarbalatReport {
                integral,
                bound,
                guaranteed: opts.symmetric,
                within_bound: integral <= bound * 1.05,
            },
            delta_containment,
            max_containment_excess,
            converged_at: detect_convergence(traj, oracle, opts.convergence_tol)?,
            tail: tail_statistics(traj, sets, oracle, opts.tail_fraction)?,
            weight_range: traj.weight_range(),
        })
    }

    /// `t,d,H_max,diam,max_dist_Xi` per sample.
    pub fn write_summary_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,d,H_max,diam,max_dist_Xi")?;
        for s in &self.samples {
            writeln!(
                out,
                "{:.9},{:e},{:e},{:e},{:e}",
                s.t, s.d, s.h_max, s.diameter, s.max_dist_own_set
            )?;
        }
        Ok(())
    }
}

/// `t0, t0 + every, ...` up to `t1`.
pub fn check_grid(t0: f64, t1: f64, every: f64) -> Vec<f64> {
    let count = ((t1 - t0) / every + 1e-9).floor() as usize;
    (0..=count).map(|k| t0 + k as f64 * every).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convexsets::{ConvexSetSpec, DykstraConfig};

    fn p(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    fn oracle(specs: &[ConvexSetSpec]) -> IntersectionOracle {
        IntersectionOracle::from_specs(specs, DykstraConfig::default()).unwrap()
    }

    fn state(points: &[&[f64]]) -> NetworkState {
        NetworkState::new(points.iter().map(|v| p(v)).collect(), 0.0)
    }

    #[test]
    fn d_examples() {
        let ball = oracle(&[ConvexSetSpec::ball(&[0.0, 0.0], 1.0)]);
        assert_eq!(d_of(&state(&[&[2.0, 0.0], &[0.0, 0.0]]), &ball).unwrap(), 1.0);
        assert_eq!(d_of(&state(&[&[0.5, 0.0]]), &ball).unwrap(), 0.0);
        let orthant = oracle(&[
            ConvexSetSpec::halfspace(&[-1.0, 0.0], 0.0),
            ConvexSetSpec::halfspace(&[0.0, -1.0], 0.0),
        ]);
        let d = d_of(&state(&[&[-1.0, -1.0], &[1.0, 1.0]]), &orthant).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spread_examples() {
        let s = spread_of(&state(&[&[0.0, 0.0], &[3.0, 4.0]]));
        assert_eq!(s.per_coordinate, vec![3.0, 4.0]);
        assert_eq!(s.diameter, 5.0);
        let s = spread_of(&state(&[&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0]]));
        assert_eq!(s.per_coordinate, vec![2.0, 0.0]);
        assert_eq!(s.diameter, 2.0);
        let s = spread_of(&state(&[&[1.0, 1.0], &[1.0, 1.0]]));
        assert_eq!(s.diameter, 0.0);
    }

    #[test]
    fn inflated_sample_is_flagged() {
        let series = vec![(0.0, 1.0), (0.1, 0.9), (0.2, 1.5), (0.3, 0.8)];
        let v = check_monotone_d(&series, 1e-6);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].t, 0.2);
        assert!(check_monotone_d(&[(0.0, 0.0), (1.0, 0.0)], 1e-6).is_empty());
    }

    #[test]
    fn containment_same_time_is_nonpositive() {
        let o = oracle(&[ConvexSetSpec::ball(&[0.0, 0.0], 1.0)]);
        let s0 = state(&[&[3.0, 0.0], &[0.0, 3.0]]);
        let traj = Trajectory::from_samples(&[s0.clone(), NetworkState { time: 1.0, ..s0 }]).unwrap();
        let recs = check_delta_containment(&traj, &o, &[0.0, 1.0]).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].excess <= 0.0);
    }

    #[test]
    fn convergence_of_static_point() {
        let o = oracle(&[ConvexSetSpec::ball(&[0.0, 0.0], 1.0)]);
        let s0 = state(&[&[0.1, 0.0], &[0.1, 0.0]]);
        let traj = Trajectory::from_samples(&[s0.clone(), NetworkState { time: 1.0, ..s0 }]).unwrap();
        assert_eq!(detect_convergence(&traj, &o, 1e-3).unwrap(), Some(0.0));
        let far = state(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let traj = Trajectory::from_samples(&[far.clone(), NetworkState { time: 1.0, ..far }]).unwrap();
        assert_eq!(detect_convergence(&traj, &o, 0.1).unwrap(), None);
    }

    #[test]
    fn grid_includes_end() {
        assert_eq!(check_grid(0.0, 10.0, 5.0), vec![0.0, 5.0, 10.0]);
        assert_eq!(check_grid(0.0, 9.0, 5.0), vec![0.0, 5.0]);
    }
}
