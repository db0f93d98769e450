//! Joint-connectivity certificates for a realized switching signal.

use serde::{Deserialize, Serialize};

use super::{is_connected_bidirectional, is_strongly_connected, SwitchingTopology};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "UJSC")]
    Ujsc,
    #[serde(rename = "IJC")]
    Ijc,
}

/// Window length for the uniform condition, or the cut times of the
/// infinitely-often partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coverage {
    Window(f64),
    Partition(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub condition: Condition,
    pub pass: bool,
    pub window_or_partition: Coverage,
    /// UJSC: start of the first window whose joint graph is not strongly
    /// connected. IJC: start of the trailing interval that never connects.
    pub first_failure: Option<f64>,
    pub horizon: f64,
    pub note: String,
}

/// Checks that every window `[t, t+T)` with `t + T <= horizon` has a
/// strongly connected joint graph.
///
/// The joint graph only changes when a window edge crosses a switch time,
/// and it only grows when the window is widened, so starts at `s_k` and
/// `s_k - T` cover every window.
pub fn certify_ujsc(topo: &SwitchingTopology, window: f64) -> Result<CertificationReport> {
    let horizon = topo.horizon();
    if !(window > 0.0 && window <= horizon) {
        return Err(Error::Precondition(format!(
            "window {window} must lie in (0, {horizon}]"
        )));
    }
    let last_start = horizon - window;
    let mut starts: Vec<f64> = topo
        .pieces()
        .flat_map(|(s, _, _)| [s, s - window])
        .filter(|&t| (0.0..=last_start).contains(&t))
        .chain([0.0, last_start])
        .collect();
    starts.sort_by(f64::total_cmp);
    starts.dedup();

    let mut first_failure = None;
    for &t in &starts {
        let end = (t + window).min(horizon);
        if !is_strongly_connected(&topo.joint_graph(t, end)?) {
            first_failure = Some(t);
            break;
        }
    }
    let pass = first_failure.is_none();
    Ok(CertificationReport {
        condition: Condition::Ujsc,
        pass,
        window_or_partition: Coverage::Window(window),
        first_failure,
        horizon,
        note: format!("{} window starts checked", starts.len()),
    })
}

/// Greedy partition for bidirectional signals: each interval closes at the
/// first piece end where its joint graph becomes connected. Passes when at
/// least one interval completes within the horizon; a non-empty
/// disconnected tail is reported as `first_failure`.
pub fn certify_ijc(topo: &SwitchingTopology) -> Result<CertificationReport> {
    if !topo.all_bidirectional() {
        return Err(Error::Precondition(
            "interval joint connectivity needs bidirectional graphs".into(),
        ));
    }
    let mut cuts = vec![0.0];
    let mut interval_start = 0.0;
    let mut acc: Option<super::DigraphSnapshot> = None;
    for (_, end, g) in topo.pieces() {
        let joint = match acc.take() {
            Some(prev) => prev.union(g),
            None => g.clone(),
        };
        if is_connected_bidirectional(&joint)? {
            cuts.push(end);
            interval_start = end;
        } else {
            acc = Some(joint);
        }
    }
    let complete = cuts.len() - 1;
    let tail = acc.is_some().then_some(interval_start);
    Ok(CertificationReport {
        condition: Condition::Ijc,
        pass: complete >= 1,
        window_or_partition: Coverage::Partition(cuts),
        first_failure: tail,
        horizon: topo.horizon(),
        note: format!("{complete} complete intervals"),
    })
}

const WINDOW_PRECISION: f64 = 1e-9;

/// Smallest window (to within `1e-9 * horizon`) for which the uniform
/// condition holds, or `None` when even `horizon` fails. When every graph
/// is strongly connected on its own, any window passes and the result is
/// close to zero.
pub fn min_ujsc_window(topo: &SwitchingTopology) -> Result<Option<f64>> {
    let horizon = topo.horizon();
    if !certify_ujsc(topo, horizon)?.pass {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, horizon);
    while hi - lo > WINDOW_PRECISION * horizon {
        let mid = 0.5 * (lo + hi);
        if certify_ujsc(topo, mid)?.pass {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{DigraphSnapshot, TopologySpec};

    fn alternating() -> SwitchingTopology {
        let a = DigraphSnapshot::new(2, [(0, 1)]).unwrap();
        let b = DigraphSnapshot::new(2, [(1, 0)]).unwrap();
        TopologySpec::PeriodicCycle {
            graphs: vec![a, b],
            piece_length: 1.0,
        }
        .realize(0.5, 100.0)
        .unwrap()
    }

    #[test]
    fn alternating_pair_window_two() {
        let topo = alternating();
        assert!(certify_ujsc(&topo, 2.0).unwrap().pass);
        let short = certify_ujsc(&topo, 1.0).unwrap();
        assert!(!short.pass);
        assert_eq!(short.first_failure, Some(0.0));
    }

    #[test]
    fn minimal_window_of_static_connected_graph_is_tiny() {
        let topo = SwitchingTopology::static_graph(DigraphSnapshot::directed_ring(3), 0.5, 2.0).unwrap();
        let w = min_ujsc_window(&topo).unwrap().unwrap();
        assert!(w > 0.0 && w < 1e-8, "{w}");
    }

    #[test]
    fn minimal_window_just_above_one_piece() {
        // [t, t+T) meets both arcs as soon as T exceeds one piece length
        let w = min_ujsc_window(&alternating()).unwrap().unwrap();
        assert!(w > 1.0 && w - 1.0 < 1e-4, "{w}");
    }

    #[test]
    fn three_cycle_of_single_arcs() {
        let arcs = [(0, 1), (1, 2), (2, 0)];
        let topo = TopologySpec::PeriodicCycle {
            graphs: arcs.iter().map(|&a| DigraphSnapshot::new(3, [a]).unwrap()).collect(),
            piece_length: 1.0,
        }
        .realize(0.5, 30.0)
        .unwrap();
        assert!(certify_ujsc(&topo, 3.0).unwrap().pass);
        assert!(!certify_ujsc(&topo, 2.0).unwrap().pass);
    }

    #[test]
    fn never_connected_fails_both() {
        let topo = SwitchingTopology::static_graph(DigraphSnapshot::empty(3), 0.5, 10.0).unwrap();
        assert!(!certify_ujsc(&topo, 10.0).unwrap().pass);
        assert_eq!(min_ujsc_window(&topo).unwrap(), None);
        let ijc = certify_ijc(&topo).unwrap();
        assert!(!ijc.pass);
        assert_eq!(ijc.first_failure, Some(0.0));
    }

    #[test]
    fn ijc_partition_on_growing_edges() {
        let e01 = DigraphSnapshot::bidirectional(3, [(0, 1)]).unwrap();
        let e12 = DigraphSnapshot::bidirectional(3, [(1, 2)]).unwrap();
        let topo = TopologySpec::GrowingIntervals {
            graphs: vec![e01, e12],
            base: 1.0,
            growth: 2.0,
        }
        .realize(0.5, 14.0)
        .unwrap();
        let report = certify_ijc(&topo).unwrap();
        assert!(report.pass);
        assert_eq!(report.window_or_partition, Coverage::Partition(vec![0.0, 2.0, 6.0, 14.0]));
        assert_eq!(report.first_failure, None);
    }

    #[test]
    fn ijc_rejects_directed() {
        assert!(certify_ijc(&alternating()).is_err());
    }

    #[test]
    fn report_json_shape() {
        let r = certify_ujsc(&alternating(), 2.0).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["condition"], "UJSC");
        assert_eq!(v["window_or_partition"], 2.0);
    }
}
