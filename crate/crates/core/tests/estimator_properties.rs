use proptest::prelude::*;

use nspe_core::data::{generate_observation, ObservationSample, StreamSeed};
use nspe_core::estimators::{Simulation, StepSchedule, ThresholdPolicy, Variant};
use nspe_core::network::{GroundTruth, Network, NodeId, NodeSpec, TaskId, TaskSpec, Topology, WEIGHT_SUM_TOLERANCE};

/// Random connected network: a path plus `extra` chords, `tasks[k]` the
/// interest set of node k (indices into a pool of `n_tasks` tasks).
#[derive(Debug, Clone)]
struct Fixture {
    n_tasks: usize,
    dim: usize,
    interests: Vec<Vec<usize>>,
    chords: Vec<(usize, usize)>,
    truth: Vec<Vec<f64>>,
    step: f64,
    seed: u64,
}

impl Fixture {
    fn network(&self) -> Network {
        let k = self.interests.len();
        let tasks: Vec<TaskSpec> = (0..self.n_tasks).map(|t| TaskSpec { id: TaskId(t), dim: self.dim }).collect();
        let nodes = self
            .interests
            .iter()
            .enumerate()
            .map(|(i, ts)| NodeSpec {
                id: NodeId(i),
                tasks: ts.iter().map(|&t| TaskId(t)).collect(),
                obs_rows: 1 + i % 2,
                step_size: self.step,
                noise_var: 1e-2,
                regressor_var: 0.5 + 0.1 * i as f64,
            })
            .collect();
        let mut edges: Vec<(NodeId, NodeId)> = (1..k).map(|i| (NodeId(i - 1), NodeId(i))).collect();
        edges.extend(self.chords.iter().filter(|(a, b)| a != b).map(|&(a, b)| (NodeId(a % k), NodeId(b % k))));
        let edges: Vec<_> = edges.into_iter().filter(|(a, b)| a != b).collect();
        Network::new(tasks, nodes, Topology::from_edges(k, &edges).unwrap()).unwrap()
    }

    fn ground_truth(&self, network: &Network) -> GroundTruth {
        GroundTruth::new(network.tasks(), self.truth.clone()).unwrap()
    }
}

fn fixture(max_nodes: usize, unique_tasks: bool) -> impl Strategy<Value = Fixture> {
    (2..=max_nodes, 1usize..=3, 1usize..=4).prop_flat_map(move |(k, dim, pool)| {
        let n_tasks = if unique_tasks { k } else { pool };
        let interests = if unique_tasks {
            Just((0..k).map(|i| vec![i]).collect::<Vec<_>>()).boxed()
        } else {
            prop::collection::vec(prop::sample::subsequence((0..n_tasks).collect::<Vec<_>>(), 1..=n_tasks), k)
                .prop_shuffle()
                .boxed()
        };
        (
            interests,
            prop::collection::vec((0..k, 0..k), 0..k),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), n_tasks),
            0.01f64..0.2,
            any::<u64>(),
        )
            .prop_map(move |(interests, chords, truth, step, seed)| Fixture {
                n_tasks,
                dim,
                interests,
                chords,
                truth,
                step,
                seed,
            })
    })
}

fn samples(network: &Network, truth: &GroundTruth, seed: u64, i: usize) -> Vec<ObservationSample> {
    network
        .nodes()
        .iter()
        .map(|n| generate_observation(n, truth, StreamSeed::new(seed, 0, n.id), i as u64).unwrap())
        .collect()
}

/// phi after every round for each variant, fed identical samples.
fn trajectories(fx: &Fixture, variants: Vec<Variant>, rounds: usize) -> Vec<Vec<Vec<f64>>> {
    let network = fx.network();
    let truth = fx.ground_truth(&network);
    let mut sims: Vec<Simulation> = variants
        .into_iter()
        .map(|v| Simulation::new(&network, v, StepSchedule::Constant).unwrap())
        .collect();
    let mut out = vec![Vec::new(); sims.len()];
    for i in 0..rounds {
        let s = samples(&network, &truth, fx.seed, i);
        for (sim, traj) in sims.iter_mut().zip(&mut out) {
            sim.run_round(&s, i).unwrap();
            traj.push(sim.phi().to_vec());
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn singleton_oracle_sets_reproduce_non_cooperative(fx in fixture(6, true)) {
        let t = trajectories(&fx, vec![Variant::NonCooperative, Variant::OracleDnspe], 60);
        prop_assert_eq!(&t[0], &t[1]);
    }

    #[test]
    fn vanishing_threshold_reproduces_non_cooperative(fx in fixture(5, false)) {
        let ud = Variant::UdNspe(ThresholdPolicy::new(1e-300).unwrap());
        let t = trajectories(&fx, vec![Variant::NonCooperative, ud], 60);
        prop_assert_eq!(&t[0], &t[1]);
    }

    #[test]
    fn huge_threshold_reproduces_blind_fusion(fx in fixture(5, false)) {
        // the first UD round still uses singleton sets, so align after it
        let network = fx.network();
        let truth = fx.ground_truth(&network);
        let mut blind = Simulation::new(&network, Variant::BlindDnspe, StepSchedule::Constant).unwrap();
        let mut ud = Simulation::new(&network, Variant::UdNspe(ThresholdPolicy::new(1e300).unwrap()), StepSchedule::Constant).unwrap();
        ud.run_round(&samples(&network, &truth, fx.seed, 0), 0).unwrap();
        blind.set_initial(ud.phi(), ud.varsigma()).unwrap();
        for i in 1..60 {
            let s = samples(&network, &truth, fx.seed, i);
            blind.run_round(&s, i).unwrap();
            ud.run_round(&s, i).unwrap();
            prop_assert_eq!(blind.phi(), ud.phi());
        }
    }

    #[test]
    fn applied_weights_stay_on_the_simplex(fx in fixture(5, false), tau in 1e-4f64..2.0) {
        let network = fx.network();
        let truth = fx.ground_truth(&network);
        let mut ud = Simulation::new(&network, Variant::UdNspe(ThresholdPolicy::new(tau).unwrap()), StepSchedule::Constant).unwrap();
        for i in 0..40 {
            ud.run_round(&samples(&network, &truth, fx.seed, i), i).unwrap();
            for &pair in ud.index().pairs() {
                let w = ud.applied_weights(&pair).unwrap();
                prop_assert!((w.sum() - 1.0).abs() <= WEIGHT_SUM_TOLERANCE);
                prop_assert!(w.weights().values().all(|&c| c >= 0.0));
                prop_assert!(w.get(&pair) > 0.0);
                w.check_support(&network).unwrap();
                // only same-dimension pairs of neighbors can ever appear
                for member in w.weights().keys() {
                    prop_assert!(network.topology().is_linked(pair.node, member.node));
                }
            }
        }
    }

    #[test]
    fn stand_alone_chain_ignores_the_diffusion_state(fx in fixture(5, false)) {
        let network = fx.network();
        let truth = fx.ground_truth(&network);
        let policy = ThresholdPolicy::new(0.05).unwrap();
        let mut a = Simulation::new(&network, Variant::UdNspe(policy.clone()), StepSchedule::Constant).unwrap();
        let mut b = Simulation::new(&network, Variant::UdNspe(policy), StepSchedule::Constant).unwrap();
        let dim = a.index().total_dim();
        let shifted: Vec<f64> = (0..dim).map(|j| 5.0 - j as f64).collect();
        b.set_initial(&shifted, &vec![0.0; dim]).unwrap();
        for i in 0..40 {
            let s = samples(&network, &truth, fx.seed, i);
            a.run_round(&s, i).unwrap();
            b.run_round(&s, i).unwrap();
            prop_assert_eq!(a.varsigma(), b.varsigma());
            prop_assert_eq!(a.members(), b.members());
        }
    }
}

#[test]
fn decaying_step_slows_adaptation() {
    let fx = Fixture {
        n_tasks: 1,
        dim: 2,
        interests: vec![vec![0], vec![0]],
        chords: vec![],
        truth: vec![vec![0.5, -0.5]],
        step: 0.1,
        seed: 3,
    };
    let network = fx.network();
    let truth = fx.ground_truth(&network);
    let mut constant = Simulation::new(&network, Variant::NonCooperative, StepSchedule::Constant).unwrap();
    let mut decaying = Simulation::new(&network, Variant::NonCooperative, StepSchedule::Decaying { i0: 10.0 }).unwrap();
    let s = samples(&network, &truth, fx.seed, 0);
    constant.run_round(&s, 0).unwrap();
    decaying.run_round(&s, 0).unwrap();
    // scale is 1 at i = 0
    assert_eq!(constant.phi(), decaying.phi());
    let s = samples(&network, &truth, fx.seed, 10);
    let before = decaying.phi().to_vec();
    let mut reference = decaying.clone();
    decaying.run_round(&s, 10).unwrap();
    reference.run_round(&s, 0).unwrap();
    let moved = |x: &[f64]| x.iter().zip(&before).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!((moved(decaying.phi()) - 0.5 * moved(reference.phi())).abs() < 1e-12);
}
