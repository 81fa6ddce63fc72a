//! Second-order statistics of the synthetic streams, each checked against
//! its theoretical value within three standard errors.

use nspe_core::data::{generate_observation, StreamSeed};
use nspe_core::network::{GroundTruth, NodeId, NodeSpec, TaskId, TaskSpec};

const SAMPLES: usize = 100_000;

fn node(id: usize, regressor_var: f64, noise_var: f64) -> NodeSpec {
    NodeSpec {
        id: NodeId(id),
        tasks: vec![TaskId(0)],
        obs_rows: 1,
        step_size: 0.01,
        noise_var,
        regressor_var,
    }
}

fn truth() -> GroundTruth {
    GroundTruth::new(&[TaskSpec { id: TaskId(0), dim: 2 }], vec![vec![0.3, -0.7]]).unwrap()
}

/// Sample mean of `x * y` and the standard error of that mean.
fn mean_product(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let prods: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x * y).collect();
    let m = prods.iter().sum::<f64>() / n;
    let var = prods.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn within_3se(value: f64, expected: f64, se: f64, what: &str) {
    assert!(
        (value - expected).abs() <= 3.0 * se,
        "{what}: {value} vs {expected} (se {se})"
    );
}

struct Streams {
    u0: Vec<f64>,
    u1: Vec<f64>,
    noise: Vec<f64>,
}

fn draw(n: &NodeSpec, seed: StreamSeed) -> Streams {
    let t = truth();
    let mut s = Streams {
        u0: Vec::with_capacity(SAMPLES),
        u1: Vec::with_capacity(SAMPLES),
        noise: Vec::with_capacity(SAMPLES),
    };
    for i in 0..SAMPLES {
        let o = generate_observation(n, &t, seed, i as u64).unwrap();
        s.u0.push(o.u[0]);
        s.u1.push(o.u[1]);
        s.noise.push(o.noise[0]);
    }
    s
}

#[test]
fn regressor_and_noise_moments() {
    let n = node(0, 0.25, 0.04);
    let s = draw(&n, StreamSeed::new(11, 0, NodeId(0)));
    let ones = vec![1.0; SAMPLES];
    let (m, se) = mean_product(&s.u0, &ones);
    within_3se(m, 0.0, se, "regressor mean");
    let (v, se) = mean_product(&s.u0, &s.u0);
    within_3se(v, 0.25, se, "regressor variance");
    let (v, se) = mean_product(&s.noise, &s.noise);
    within_3se(v, 0.04, se, "noise variance");
}

#[test]
fn regressors_are_white_in_time_and_across_columns() {
    let n = node(0, 1.0, 0.01);
    let s = draw(&n, StreamSeed::new(12, 3, NodeId(0)));
    let (c, se) = mean_product(&s.u0[1..], &s.u0[..SAMPLES - 1]);
    within_3se(c, 0.0, se, "lag-1 autocorrelation");
    let (c, se) = mean_product(&s.u0, &s.u1);
    within_3se(c, 0.0, se, "cross-column correlation");
}

#[test]
fn nodes_are_spatially_independent() {
    let a = draw(&node(0, 1.0, 0.01), StreamSeed::new(13, 0, NodeId(0)));
    let b = draw(&node(1, 1.0, 0.01), StreamSeed::new(13, 0, NodeId(1)));
    let (c, se) = mean_product(&a.u0, &b.u0);
    within_3se(c, 0.0, se, "regressors of two nodes");
    let (c, se) = mean_product(&a.noise, &b.noise);
    within_3se(c, 0.0, se, "noise of two nodes");
}

#[test]
fn noise_is_independent_of_regressors() {
    let s = draw(&node(0, 1.0, 1.0), StreamSeed::new(14, 1, NodeId(0)));
    let (c, se) = mean_product(&s.noise, &s.u0);
    within_3se(c, 0.0, se, "noise-regressor correlation");
    let (c, se) = mean_product(&s.noise[1..], &s.noise[..SAMPLES - 1]);
    within_3se(c, 0.0, se, "noise lag-1 autocorrelation");
}

#[test]
fn runs_are_independent() {
    let n = node(0, 1.0, 0.01);
    let a = draw(&n, StreamSeed::new(15, 0, NodeId(0)));
    let b = draw(&n, StreamSeed::new(15, 1, NodeId(0)));
    let (c, se) = mean_product(&a.u0, &b.u0);
    within_3se(c, 0.0, se, "same node, two runs");
}
