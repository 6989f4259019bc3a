#![allow(dead_code)]

use dissipacert::certify::DissipativityCertificate;
use dissipacert::lti::{self, drss, random_input, StateSpaceModel};
use dissipacert::network::{ChannelPairing, InterconnectionGraph, SubsystemData};
use dissipacert::realization::MinimalRealization;
use dissipacert::signals::Trajectory;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

/// Controllable and observable random model with its observability index.
pub fn random_minimal<R: Rng>(rng: &mut R, n: usize, m: usize, p: usize, radius: f64) -> (StateSpaceModel, usize) {
    loop {
        let sys = drss(rng, n, m, p, radius);
        let s = lti::structural_checks(&sys, 1e-8).unwrap();
        if s.controllable && s.observable {
            return (sys, s.lag.unwrap());
        }
    }
}

/// Open-loop experiment of length `40(ℓ+n)` from a random initial state.
pub fn experiment<R: Rng>(rng: &mut R, sys: &StateSpaceModel, lag: usize) -> (Trajectory, Trajectory) {
    let len = 40 * (lag + sys.order());
    let u = random_input(rng, sys.inputs(), len, 1.0);
    let x0 = DVector::from_fn(sys.order(), |_, _| rng.random_range(-1.0..1.0));
    let sim = lti::simulate(sys, &x0, &u).unwrap();
    (u, sim.y)
}

/// Random perfect matching of all channels across distinct subsystems.
pub fn random_graph<R: Rng>(rng: &mut R, counts: &[usize]) -> InterconnectionGraph {
    let mut channels: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &m)| (0..m).map(move |j| (i, j)))
        .collect();
    assert!(channels.len() % 2 == 0);
    loop {
        channels.shuffle(rng);
        if channels.chunks(2).all(|c| c[0].0 != c[1].0) {
            let pairings = channels
                .chunks(2)
                .map(|c| ChannelPairing { first: c[0], second: c[1] })
                .collect();
            return InterconnectionGraph::new(counts.to_vec(), pairings);
        }
    }
}

pub struct SyntheticNetwork {
    pub truth: Vec<StateSpaceModel>,
    pub data: Vec<SubsystemData>,
    pub graph: InterconnectionGraph,
}

/// 2–5 subsystems with 1–2 channels each and a random output gain, so that
/// closed loops range from comfortably stable to unstable.
pub fn random_network<R: Rng>(rng: &mut R) -> SyntheticNetwork {
    loop {
        let k = rng.random_range(2..=5);
        let counts: Vec<usize> = (0..k).map(|_| rng.random_range(1..=2)).collect();
        if counts.iter().sum::<usize>() % 2 == 1 {
            continue;
        }
        let max_count = *counts.iter().max().unwrap();
        if counts.iter().filter(|&&c| c == max_count).count() == 1 && max_count * 2 > counts.iter().sum::<usize>() {
            continue;
        }
        let mut truth = Vec::new();
        let mut data = Vec::new();
        for (i, &m) in counts.iter().enumerate() {
            let n = rng.random_range(1..=4);
            let (mut sys, lag) = random_minimal(rng, n, m, m, 0.9);
            let gain = rng.random_range(0.05..0.8);
            sys.c *= gain;
            let (u, y) = experiment(rng, &sys, lag);
            data.push(SubsystemData { name: format!("s{}", i + 1), u, y, lag, order: n });
            truth.push(sys);
        }
        let graph = random_graph(rng, &counts);
        return SyntheticNetwork { truth, data, graph };
    }
}

/// Largest per-step dissipation violation over `count` random runs.
pub fn worst_trajectory_violation<R: Rng>(
    rng: &mut R,
    model: &StateSpaceModel,
    cert: &DissipativityCertificate,
    count: usize,
    steps: usize,
) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..count {
        let u = random_input(rng, model.inputs(), steps, 1.0);
        let x0 = DVector::from_fn(model.order(), |_, _| rng.random_range(-1.0..1.0));
        let v = dissipacert::certify::verify_dissipation_on_trajectory(model, &cert.p, &cert.supply, &x0, &u).unwrap();
        worst = worst.max(v);
    }
    worst
}

pub fn minimal_model(m: &MinimalRealization) -> StateSpaceModel {
    m.to_model(1.0).unwrap()
}

pub fn p_norm(p: &DMatrix<f64>) -> f64 {
    p.symmetric_eigenvalues().iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}
