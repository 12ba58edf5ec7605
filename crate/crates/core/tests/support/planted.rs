//! Planted-concept instances: concept embeddings are orthonormal, every probe
//! image is a noisy copy of one concept embedding, and neuron `k` fires on the
//! images of its planted concept.

use ndarray::{Array1, Array2};
use neurolens::{ActivationMatrix, ConceptSet, NeuronLabel, SummaryKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

#[derive(Debug, Clone)]
pub struct PlantedSpec {
    pub concepts: usize,
    pub images: usize,
    pub dim: usize,
    /// Standard deviation of the per-coordinate image noise.
    pub sigma: f64,
    /// Probability that a firing image is swapped for a random image.
    pub label_noise: f64,
    /// Standard deviation of gaussian noise added to every activation.
    pub activation_noise: f64,
    /// Activations are clamped at zero, as after a ReLU.
    pub rectify: bool,
    /// Extra concepts whose embedding is the mean of all planted concepts.
    pub generic_concepts: usize,
    pub seed: u64,
}

impl PlantedSpec {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self {
            concepts: 10,
            images: 200,
            dim: 32,
            sigma,
            label_noise: 0.0,
            activation_noise: 0.0,
            rectify: false,
            generic_concepts: 0,
            seed,
        }
    }
}

/// Noisy planted layer: half of each neuron's firing images are mislabeled,
/// activations are dense and rectified, and two generic concepts sit at the
/// centroid of the planted ones. Fifty images per concept.
pub fn noisy_spec(seed: u64) -> PlantedSpec {
    let mut spec = PlantedSpec::new(0.1, seed);
    spec.images = 500;
    spec.label_noise = 0.5;
    spec.activation_noise = 1.0;
    spec.rectify = true;
    spec.generic_concepts = 2;
    spec
}

pub struct Planted {
    pub acts: ActivationMatrix,
    pub image: Array2<f32>,
    pub text: Array2<f32>,
    pub concepts: ConceptSet,
    /// Planted concept index of every neuron.
    pub truth: Vec<usize>,
    /// Concept of every probe image.
    pub image_concept: Vec<usize>,
}

/// `count` orthonormal rows of length `dim` by Gram-Schmidt on gaussian draws.
pub fn orthonormal(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    assert!(count <= dim);
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Array1<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        for b in &basis {
            let proj = v.dot(b);
            v.scaled_add(-proj, b);
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            basis.push(v / n);
        }
    }
    let mut out = Array2::zeros((count, dim));
    for (r, b) in basis.iter().enumerate() {
        out.row_mut(r).assign(b);
    }
    out
}

pub fn planted(spec: &PlantedSpec) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.concepts;
    let n = spec.images;
    let basis = orthonormal(m, spec.dim, &mut rng);
    let noise = Normal::new(0.0, spec.sigma).unwrap();
    let image_concept: Vec<usize> = (0..n).map(|i| i % m).collect();
    let mut image = Array2::<f32>::zeros((n, spec.dim));
    for i in 0..n {
        for d in 0..spec.dim {
            image[[i, d]] = (basis[[image_concept[i], d]] + noise.sample(&mut rng)) as f32;
        }
    }
    let mut truth: Vec<usize> = (0..m).collect();
    truth.shuffle(&mut rng);
    let act_noise = Normal::new(0.0, spec.activation_noise.max(f64::MIN_POSITIVE)).unwrap();
    let mut q = Array2::<f32>::zeros((m, n));
    for k in 0..m {
        for (i, &c) in image_concept.iter().enumerate() {
            if c == truth[k] {
                let target = if rng.random::<f64>() < spec.label_noise {
                    rng.random_range(0..n)
                } else {
                    i
                };
                q[[k, target]] = 1.0;
            }
        }
        if spec.activation_noise > 0.0 {
            for i in 0..n {
                q[[k, i]] += act_noise.sample(&mut rng) as f32;
            }
        }
        if spec.rectify {
            q.row_mut(k).mapv_inplace(|v| v.max(0.0));
        }
    }
    let generic = spec.generic_concepts;
    let mut text = Array2::<f64>::zeros((m + generic, spec.dim));
    text.slice_mut(ndarray::s![..m, ..]).assign(&basis);
    let mean = basis.mean_axis(ndarray::Axis(0)).unwrap();
    for g in 0..generic {
        for d in 0..spec.dim {
            text[[m + g, d]] = mean[d] + 0.05 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let names = (0..m)
        .map(|c| format!("concept{c}"))
        .chain((0..generic).map(|g| format!("generic{g}")))
        .collect();
    Planted {
        acts: ActivationMatrix::new(q, "planted", SummaryKind::Mean).unwrap(),
        image,
        text: text.mapv(|v| v as f32),
        concepts: ConceptSet::new(names, "planted").unwrap(),
        truth,
        image_concept,
    }
}

/// Number of neurons labeled with their planted concept.
pub fn recovered(labels: &[NeuronLabel], planted: &Planted) -> usize {
    labels
        .iter()
        .zip(&planted.truth)
        .filter(|(l, &t)| l.concept.as_deref() == planted.concepts.get(t))
        .count()
}
