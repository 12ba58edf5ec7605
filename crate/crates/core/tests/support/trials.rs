//! Random tiny instances compared against the oracles. Each check returns the
//! largest absolute deviation seen and the number of scores compared.

use ndarray::Array2;
use neurolens::concept_space::{
    concept_probabilities, ConceptActivationMatrix, ConceptProbabilities,
};
use neurolens::similarity::{is_degenerate, sim_soft_wpmi, sim_wpmi, Membership};
use neurolens::MembershipSchedule;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::oracle;

pub struct Instance {
    pub p: Array2<f32>,
    pub q: Array2<f32>,
}

/// Random P in [-1, 1] and `neurons` activation vectors. Some instances use
/// small integer activations so ties occur.
pub fn instance(rng: &mut ChaCha8Rng, images: usize, concepts: usize, neurons: usize) -> Instance {
    let p = Array2::from_shape_fn((images, concepts), |_| rng.random_range(-1.0f32..1.0));
    let ties = rng.random_bool(0.3);
    let q = Array2::from_shape_fn((neurons, images), |_| {
        if ties {
            rng.random_range(0..3) as f32
        } else {
            rng.random_range(-2.0f32..2.0)
        }
    });
    Instance { p, q }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Deviation {
    pub max: f64,
    pub compared: usize,
}

impl Deviation {
    pub fn add(&mut self, got: f64, want: f64) {
        let d = (got - want).abs();
        self.max = if d.is_nan() {
            f64::INFINITY
        } else {
            self.max.max(d)
        };
        self.compared += 1;
    }

    pub fn merge(&mut self, other: Deviation) {
        self.max = self.max.max(other.max);
        self.compared += other.compared;
    }
}

fn probabilities(inst: &Instance, temperature: f64) -> ConceptProbabilities {
    concept_probabilities(
        &ConceptActivationMatrix::from_values(inst.p.clone()).unwrap(),
        temperature,
    )
    .unwrap()
}

fn live_rows(inst: &Instance) -> Vec<(usize, &[f32])> {
    inst.q
        .outer_iter()
        .enumerate()
        .map(|(k, r)| (k, r.to_slice().unwrap()))
        .filter(|(_, r)| !is_degenerate(r))
        .collect()
}

pub fn wpmi_vs_oracle(inst: &Instance, temperature: f64, bk: usize, lambda: f64) -> Deviation {
    let probs = probabilities(inst, temperature);
    let direct = oracle::softmax(&oracle::rows(inst.p.view()), temperature);
    let q = oracle::rows(inst.q.view());
    let rows = live_rows(inst);
    let context: Vec<Membership> = rows
        .iter()
        .map(|(_, r)| Membership::hard(r, bk).unwrap())
        .collect();
    let mut dev = Deviation::default();
    for &(k, row) in &rows {
        for m in 0..inst.p.ncols() {
            let got = sim_wpmi(row, &probs, m, &context, bk, lambda).unwrap();
            dev.add(got, oracle::wpmi(&q, k, &direct, m, bk, lambda));
        }
    }
    dev
}

pub fn soft_vs_oracle(
    inst: &Instance,
    temperature: f64,
    schedule: &[f64],
    lambda: f64,
) -> Deviation {
    let probs = probabilities(inst, temperature);
    let direct = oracle::softmax(&oracle::rows(inst.p.view()), temperature);
    let q = oracle::rows(inst.q.view());
    let sched = MembershipSchedule::from_probabilities(schedule.to_vec()).unwrap();
    let rows = live_rows(inst);
    let context: Vec<Membership> = rows
        .iter()
        .map(|(_, r)| Membership::soft(r, &sched))
        .collect();
    let mut dev = Deviation::default();
    for &(k, row) in &rows {
        for m in 0..inst.p.ncols() {
            let got = sim_soft_wpmi(row, &probs, m, &context, &sched, lambda).unwrap();
            dev.add(got, oracle::soft_wpmi(&q, k, &direct, m, schedule, lambda));
        }
    }
    dev
}

/// soft wpmi under a 0/1 schedule of length `bk` against hard wpmi.
pub fn binary_soft_vs_hard(inst: &Instance, temperature: f64, bk: usize, lambda: f64) -> Deviation {
    let probs = probabilities(inst, temperature);
    let sched = MembershipSchedule::binary(bk).unwrap();
    let rows = live_rows(inst);
    let hard: Vec<Membership> = rows
        .iter()
        .map(|(_, r)| Membership::hard(r, bk).unwrap())
        .collect();
    let soft: Vec<Membership> = rows
        .iter()
        .map(|(_, r)| Membership::soft(r, &sched))
        .collect();
    let mut dev = Deviation::default();
    for &(_, row) in &rows {
        for m in 0..inst.p.ncols() {
            let a = sim_wpmi(row, &probs, m, &hard, bk, lambda).unwrap();
            let b = sim_soft_wpmi(row, &probs, m, &soft, &sched, lambda).unwrap();
            dev.add(b, a);
        }
    }
    dev
}

pub fn linear(start: f64, end: f64, cutoff: usize) -> Vec<f64> {
    MembershipSchedule::linear(start, end, cutoff)
        .unwrap()
        .probabilities()
        .to_vec()
}

/// The randomized tiny-instance sweep: sizes up to N = 10, M = 5, |C| = 4,
/// both PMI kinds, random temperature, λ, B_k size and schedule.
pub fn random_oracle_sweep(rng: &mut ChaCha8Rng, trials: usize) -> (Deviation, Deviation) {
    let mut hard = Deviation::default();
    let mut soft = Deviation::default();
    for _ in 0..trials {
        let n = rng.random_range(2..=10);
        let m = rng.random_range(1..=5);
        let c = rng.random_range(1..=4);
        let inst = instance(rng, n, m, c);
        let temperature = [2.0, 10.0][rng.random_range(0..2)];
        let lambda = rng.random_range(0.0..1.5);
        let bk = rng.random_range(1..=n);
        hard.merge(wpmi_vs_oracle(&inst, temperature, bk, lambda));
        let cutoff = rng.random_range(1..=n + 2);
        let start = rng.random_range(0.5..1.0);
        let end = rng.random_range(0.0..=start);
        soft.merge(soft_vs_oracle(
            &inst,
            temperature,
            &linear(start, end, cutoff),
            lambda,
        ));
    }
    (hard, soft)
}

/// The reduction sweep: N ≤ 32, M ≤ 8, random B_k size, temperature and λ.
pub fn reduction_sweep(rng: &mut ChaCha8Rng, trials: usize) -> Deviation {
    let mut dev = Deviation::default();
    for _ in 0..trials {
        let n = rng.random_range(2..=32);
        let m = rng.random_range(1..=8);
        let neurons = rng.random_range(1..=6);
        let inst = instance(rng, n, m, neurons);
        let bk = rng.random_range(1..=n);
        let temperature = rng.random_range(0.5..12.0);
        let lambda = rng.random_range(0.0..1.5);
        dev.merge(binary_soft_vs_hard(&inst, temperature, bk, lambda));
    }
    dev
}
