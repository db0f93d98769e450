use optflow_core::convexsets::{
    hull_distance, sample_delta_point, ConvexSet, ConvexSetSpec, DykstraConfig, IntersectionOracle, Point,
};
use optflow_core::dynamics::{IntegratorConfig, Method, NetworkState};
use optflow_core::scenario::{make_random_feasible, make_random_symmetric, make_reference_ujsc, Scenario};
use optflow_core::suite::{random_set, SET_VARIANTS};
use optflow_core::topology::{
    certify_ijc, certify_ujsc, is_strongly_connected, DigraphSnapshot, SwitchingTopology, TopologySpec,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn point(v: &[f64]) -> Point {
    Point::from_column_slice(v)
}

fn random_point(rng: &mut ChaCha8Rng, m: usize, r: f64) -> Point {
    Point::from_fn(m, |_, _| rng.random_range(-r..r))
}

fn compiled(seed: u64, variant: usize) -> (ChaCha8Rng, ConvexSet, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=4);
    let spec = random_set(&mut rng, SET_VARIANTS[variant], m);
    (rng, ConvexSet::from_spec(&spec, DykstraConfig::default()).unwrap(), m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_is_nonexpansive(seed in any::<u64>(), variant in 0..SET_VARIANTS.len()) {
        let (mut rng, set, m) = compiled(seed, variant);
        let x = random_point(&mut rng, m, 5.0);
        let y = random_point(&mut rng, m, 5.0);
        let (px, py) = (set.project(&x).unwrap(), set.project(&y).unwrap());
        prop_assert!((px - py).norm() <= (x - y).norm() + 1e-9);
    }

    #[test]
    fn variational_inequality(seed in any::<u64>(), variant in 0..SET_VARIANTS.len()) {
        let (mut rng, set, m) = compiled(seed, variant);
        let x = random_point(&mut rng, m, 5.0);
        let y = set.project(&random_point(&mut rng, m, 5.0)).unwrap();
        let px = set.project(&x).unwrap();
        prop_assert!((&px - &x).dot(&(&px - &y)) <= 1e-9);
    }

    #[test]
    fn projection_lands_in_set(seed in any::<u64>(), variant in 0..SET_VARIANTS.len()) {
        let (mut rng, set, m) = compiled(seed, variant);
        let px = set.project(&random_point(&mut rng, m, 5.0)).unwrap();
        prop_assert!(set.contains(&px).unwrap());
    }

    #[test]
    fn closed_form_projection_is_idempotent(seed in any::<u64>(), variant in 0..4usize) {
        // halfspace, ball, box, affine
        let (mut rng, set, m) = compiled(seed, variant);
        let px = set.project(&random_point(&mut rng, m, 5.0)).unwrap();
        prop_assert!((set.project(&px).unwrap() - &px).norm() <= 1e-12 * (1.0 + px.norm()));
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), variant in 0..SET_VARIANTS.len()) {
        let (mut rng, set, m) = compiled(seed, variant);
        let x = random_point(&mut rng, m, 5.0);
        prop_assume!(set.distance(&x).unwrap() >= 0.1);
        let g = set.sqdist_gradient(&x).unwrap();
        let h = 1e-5 * (1.0 + x.norm());
        let fd = Point::from_fn(m, |c, _| {
            let mut a = x.clone();
            let mut b = x.clone();
            a[c] += h;
            b[c] -= h;
            (set.distance(&a).unwrap().powi(2) - set.distance(&b).unwrap().powi(2)) / (2.0 * h)
        });
        prop_assert!((fd - &g).norm() <= 1e-5 * g.norm().max(1.0));
    }

    #[test]
    fn distance_inequality(seed in any::<u64>(), variant in 0..SET_VARIANTS.len()) {
        let (mut rng, set, m) = compiled(seed, variant);
        let a = random_point(&mut rng, m, 5.0);
        let b = random_point(&mut rng, m, 5.0);
        let pa = set.project(&a).unwrap();
        let (da, db) = (set.distance(&a).unwrap(), set.distance(&b).unwrap());
        let lhs = (&a - &pa).dot(&(&b - &a));
        prop_assert!(lhs <= da * (da - db).abs() + 1e-9);
        if da > db {
            prop_assert!(lhs <= -da * (da - db) + 1e-9);
        }
    }

    #[test]
    fn delta_samples_stay_near_generators(seed in any::<u64>(), n_gen in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..=3);
        let center = random_point(&mut rng, m, 1.0);
        let specs: Vec<ConvexSetSpec> = (0..3)
            .map(|_| {
                let shift = random_point(&mut rng, m, 1.0);
                let c: Vec<f64> = (&center + &shift).iter().copied().collect();
                ConvexSetSpec::ball(&c, shift.norm() + 0.5)
            })
            .collect();
        let sets: Vec<ConvexSet> = specs.iter().map(|s| s.compile().unwrap()).collect();
        let oracle = IntersectionOracle::from_specs(&specs, DykstraConfig::default()).unwrap();
        let gens: Vec<Point> = (0..n_gen).map(|_| random_point(&mut rng, m, 5.0)).collect();
        let bound = 2.0 * gens.iter().map(|g| oracle.distance(g).unwrap()).fold(0.0, f64::max);
        for _ in 0..5 {
            let y = sample_delta_point(&gens, &sets, 4, &mut rng).unwrap();
            prop_assert!(hull_distance(&gens, &y).unwrap() <= bound + 1e-6);
        }
    }
}

// ---- topology ----

fn brute_force_strongly_connected(n: usize, arcs: &[(usize, usize)]) -> bool {
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(a, b) in arcs {
        reach[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    reach.iter().all(|row| row.iter().all(|&r| r))
}

fn all_arcs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b))).collect()
}

fn digraph_from_mask(n: usize, mask: u64) -> (DigraphSnapshot, Vec<(usize, usize)>) {
    let arcs: Vec<_> = all_arcs(n)
        .into_iter()
        .enumerate()
        .filter(|(k, _)| mask >> k & 1 == 1)
        .map(|(_, a)| a)
        .collect();
    (DigraphSnapshot::new(n, arcs.iter().copied()).unwrap(), arcs)
}

#[test]
fn strong_connectivity_exhaustive_up_to_three_nodes() {
    for n in 1..=3 {
        let arc_count = n * (n - 1);
        for mask in 0..(1u64 << arc_count) {
            let (g, arcs) = digraph_from_mask(n, mask);
            assert_eq!(is_strongly_connected(&g), brute_force_strongly_connected(n, &arcs), "n={n} {arcs:?}");
        }
    }
}

proptest! {
    #[test]
    fn strong_connectivity_sampled(n in 4usize..=5, mask in any::<u64>()) {
        let (g, arcs) = digraph_from_mask(n, mask);
        prop_assert_eq!(is_strongly_connected(&g), brute_force_strongly_connected(n, &arcs));
    }

    #[test]
    fn joint_graph_grows_with_interval(seed in 0u64..1_000_000, t1 in 0.0..20.0f64, a in 0.01..20.0f64, b in 0.0..20.0f64) {
        let topo = random_signal(seed, 4, false, 60.0);
        let small = topo.joint_graph(t1, t1 + a).unwrap();
        let large = topo.joint_graph(t1, t1 + a + b).unwrap();
        prop_assert!(small.arcs().is_subset(large.arcs()));
    }

    #[test]
    fn ujsc_pass_is_monotone_in_window(seed in 0u64..1_000_000, w in 0.5..10.0f64, extra in 0.0..10.0f64) {
        let topo = random_signal(seed, 3, false, 40.0);
        if certify_ujsc(&topo, w).unwrap().pass {
            prop_assert!(certify_ujsc(&topo, w + extra).unwrap().pass);
        }
    }

    #[test]
    fn dwell_violations_are_rejected(gap in 0.01..0.49f64) {
        let g = DigraphSnapshot::directed_ring(3);
        prop_assert!(SwitchingTopology::new(vec![(0.0, g.clone()), (gap, g)], 0.5, 10.0).is_err());
    }

    #[test]
    fn realized_signals_respect_dwell(seed in 0u64..1_000_000) {
        let topo = random_signal(seed, 4, true, 30.0);
        for (s, e, _) in topo.pieces() {
            prop_assert!(e - s >= topo.dwell() - 1e-9 || e == topo.horizon());
        }
    }

    #[test]
    fn static_connected_graphs_pass(n in 2usize..6, w in 0.5..20.0f64) {
        let ring = SwitchingTopology::static_graph(DigraphSnapshot::directed_ring(n), 0.5, 20.0).unwrap();
        prop_assert!(certify_ujsc(&ring, w.min(20.0)).unwrap().pass);
        let path = DigraphSnapshot::bidirectional(n, (1..n).map(|i| (i - 1, i))).unwrap();
        let path = SwitchingTopology::static_graph(path, 0.5, 20.0).unwrap();
        prop_assert!(certify_ijc(&path).unwrap().pass);
    }
}

fn random_signal(seed: u64, n: usize, bidirectional: bool, horizon: f64) -> SwitchingTopology {
    TopologySpec::RandomDwell {
        seed,
        n,
        arc_probability: 0.4,
        palette_size: 3,
        min_length: 0.5,
        max_length: 2.0,
        bidirectional,
    }
    .realize(0.5, horizon)
    .unwrap()
}

// ---- dynamics and scenarios ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn common_point_is_preserved(seed in 0u64..10_000, n in 2usize..6, m in 1usize..4) {
        let s = make_random_feasible(n, m, seed).unwrap();
        let c = s.compile().unwrap();
        let anchor = c.oracle.project(&Point::zeros(m)).unwrap();
        let start = NetworkState::new(vec![anchor.clone(); n], 0.0);
        let cfg = IntegratorConfig { method: Method::Rk4, step: 0.01, t_end: 5.0 };
        let traj = c.system.simulate(&start, &cfg).unwrap();
        for k in 0..traj.len() {
            for i in 0..n {
                prop_assert!((traj.agent_point(k, i) - &anchor).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn evaluated_weights_are_clamped(seed in 0u64..10_000) {
        let s = make_random_feasible(4, 2, seed).unwrap();
        let c = s.compile().unwrap();
        let traj = c.simulate().unwrap();
        if let Some((lo, hi)) = traj.weight_range() {
            prop_assert!(lo >= s.weights.lower && hi <= s.weights.upper);
        }
    }

    #[test]
    fn samples_hit_every_switch(seed in 0u64..10_000) {
        let s = make_random_feasible(3, 2, seed).unwrap();
        let c = s.compile().unwrap();
        let traj = c.simulate().unwrap();
        for &t in c.topology().switch_times() {
            prop_assert!(traj.times().contains(&t), "no sample at {}", t);
        }
    }

    #[test]
    fn simulation_is_deterministic(seed in 0u64..10_000) {
        let s = make_random_symmetric(3, 2, seed).unwrap();
        let (a, b) = (s.compile().unwrap().simulate().unwrap(), s.compile().unwrap().simulate().unwrap());
        prop_assert_eq!(a.times(), b.times());
        let bits = |t: &optflow_core::dynamics::Trajectory| -> Vec<u64> {
            (0..t.len()).flat_map(|k| (0..t.agents()).flat_map(move |i| t.agent(k, i).to_vec())).map(f64::to_bits).collect()
        };
        prop_assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn generators_are_deterministic_and_valid(seed in any::<u64>(), n in 2usize..8, m in 1usize..5) {
        let a = make_random_feasible(n, m, seed).unwrap();
        prop_assert_eq!(&a, &make_random_feasible(n, m, seed).unwrap());
        prop_assert!(a.validate().unwrap().all_pass());
        let b = make_random_symmetric(n, m, seed).unwrap();
        prop_assert_eq!(&b, &make_random_symmetric(n, m, seed).unwrap());
        prop_assert!(b.validate().unwrap().all_pass());
    }

    #[test]
    fn scenario_toml_round_trip(seed in any::<u64>(), n in 2usize..8, m in 1usize..5) {
        for s in [make_random_feasible(n, m, seed).unwrap(), make_random_symmetric(n, m, seed).unwrap()] {
            let text = s.to_toml().unwrap();
            let back = Scenario::from_toml(&text).unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(back.to_toml().unwrap(), text);
        }
    }
}

#[test]
fn euler_fine_step_tracks_rk4() {
    let mut s = make_reference_ujsc(4, 2, 7).unwrap();
    s.integrator.t_end = 50.0;
    let h = s.integrator.step;
    let c = s.compile().unwrap();
    let rk4 = c.simulate().unwrap();
    let euler_cfg = IntegratorConfig {
        method: Method::Euler,
        step: h / 16.0,
        t_end: 50.0,
    };
    let euler = c.system.simulate(&s.initial_state(), &euler_cfg).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..rk4.len() {
        let t = rk4.times()[k];
        let j = euler.index_near(t);
        assert!((euler.times()[j] - t).abs() < 1e-9);
        for i in 0..4 {
            worst = worst.max((rk4.agent_point(k, i) - euler.agent_point(j, i)).norm());
        }
    }
    assert!(worst <= 10.0 * h, "max deviation {worst}");
}

#[test]
fn tangent_ball_oracle_matches_closed_form() {
    let oracle = IntersectionOracle::from_specs(
        &[ConvexSetSpec::ball(&[0.0, -1.0], 1.0), ConvexSetSpec::ball(&[0.0, 1.0], 1.0)],
        DykstraConfig::default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let x = random_point(&mut rng, 2, 5.0);
        assert!(oracle.project(&x).unwrap().norm() <= 1e-6);
    }
    assert_eq!(oracle.project(&point(&[0.0, 0.0])).unwrap(), point(&[0.0, 0.0]));
}
