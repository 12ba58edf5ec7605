mod support;

use ndarray::{Array2, Axis};
use neurolens::analysis::{
    compose_candidates, compose_score, pearson, topk_similarity_curve, weight_concept_correlation,
};
use neurolens::{
    ActivationMatrix, ConceptSet, DissectConfig, SimilarityConfig, SimilarityKind, SummaryKind,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use support::oracle;
use support::planted::orthonormal;

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f32> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f32, _>(StandardNormal))
}

/// Mean cosine over the `k` largest weights, ranking every (class, neuron)
/// pair by a stable descending sort of the flattened weights.
fn curve_oracle(w: &Array2<f32>, neurons: &Array2<f32>, classes: &Array2<f32>, k: usize) -> f64 {
    let flat: Vec<f64> = w.iter().map(|&v| f64::from(v)).collect();
    let order = oracle::descending(&flat);
    let nr = oracle::rows(neurons.view());
    let cr = oracle::rows(classes.view());
    let kk = w.ncols();
    order[..k]
        .iter()
        .map(|&f| oracle::cos(&cr[f / kk], &nr[f % kk]))
        .sum::<f64>()
        / k as f64
}

#[test]
fn topk_curve_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let c = rng.random_range(1..8);
        let k = rng.random_range(1..8);
        let d = rng.random_range(2..6);
        let w = gaussian(&mut rng, c, k);
        let ne = gaussian(&mut rng, k, d);
        let ce = gaussian(&mut rng, c, d);
        let ks: Vec<usize> = (1..=c * k).collect();
        let curve = topk_similarity_curve(w.view(), ne.view(), ce.view(), &ks).unwrap();
        for (kv, mean) in curve {
            assert!((mean - curve_oracle(&w, &ne, &ce, kv)).abs() < 1e-6);
        }
    }
}

#[test]
fn full_curve_is_the_mean_of_all_cosines() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let w = gaussian(&mut rng, 6, 9);
    let ne = gaussian(&mut rng, 9, 4);
    let ce = gaussian(&mut rng, 6, 4);
    let (nr, cr) = (oracle::rows(ne.view()), oracle::rows(ce.view()));
    let mut total = 0.0;
    for c in &cr {
        for n in &nr {
            total += oracle::cos(c, n);
        }
    }
    let curve = topk_similarity_curve(w.view(), ne.view(), ce.view(), &[54]).unwrap();
    assert!((curve[0].1 - total / 54.0).abs() < 1e-6);
}

#[test]
fn correlation_matches_direct_pearson() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let w = gaussian(&mut rng, 5, 12);
    let ne = gaussian(&mut rng, 12, 6);
    let ce = gaussian(&mut rng, 5, 6);
    let (nr, cr) = (oracle::rows(ne.view()), oracle::rows(ce.view()));
    let mut x = vec![];
    let mut y = vec![];
    for c in 0..5 {
        for k in 0..12 {
            x.push(f64::from(w[[c, k]]));
            y.push(oracle::cos(&cr[c], &nr[k]));
        }
    }
    let got = weight_concept_correlation(w.view(), ne.view(), ce.view(), None).unwrap();
    assert_eq!(got.samples, 60);
    assert!((got.r - oracle::pearson(&x, &y)).abs() < 1e-6);

    let top = weight_concept_correlation(w.view(), ne.view(), ce.view(), Some(10)).unwrap();
    let order = oracle::descending(&x);
    let xs: Vec<f64> = order[..10].iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = order[..10].iter().map(|&i| y[i]).collect();
    assert_eq!(top.samples, 10);
    assert!((top.r - oracle::pearson(&xs, &ys)).abs() < 1e-6);
}

#[test]
fn independent_weights_are_uncorrelated() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let w = gaussian(&mut rng, 100, 500);
    let ne = gaussian(&mut rng, 500, 16);
    let ce = gaussian(&mut rng, 100, 16);
    let r = weight_concept_correlation(w.view(), ne.view(), ce.view(), None)
        .unwrap()
        .r;
    assert!(r.abs() < 0.05, "{r}");
}

#[test]
fn hundred_concepts_give_4950_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let names = (0..150).map(|i| format!("w{i}")).collect();
    let set = ConceptSet::new(names, "v").unwrap();
    let scores: Vec<f64> = (0..150).map(|_| rng.random()).collect();
    let pairs = compose_candidates(3, &scores, &set, 100).unwrap();
    assert_eq!(pairs.len(), 4950);
    let texts: std::collections::HashSet<_> = pairs.iter().map(|p| p.text.clone()).collect();
    assert_eq!(texts.len(), 4950);
    let index = |name: &str| set.concepts().iter().position(|c| c == name).unwrap();
    let top100 = oracle::descending(&scores)[..100].to_vec();
    for p in &pairs {
        assert_eq!(p.neuron, 3);
        assert_eq!(p.text, format!("{} {}", p.first, p.second));
        let (a, b) = (index(&p.first), index(&p.second));
        assert!(scores[a] >= scores[b]);
        assert!(top100.contains(&a) && top100.contains(&b));
    }
}

#[test]
fn planted_composite_outranks_its_parts_under_cos() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let basis = orthonormal(4, 16, &mut rng).mapv(|v| v as f32);
    let composite = (&basis.row(0) + &basis.row(1)).mapv(|v| v / 2f32.sqrt());
    // Images of "A", "B", "C", "D" and of the composite cluster, 20 each.
    let mut image = Array2::<f32>::zeros((100, 16));
    let mut q = Array2::<f32>::zeros((2, 100));
    for i in 0..100 {
        let cluster = i % 5;
        let center = if cluster == 4 {
            composite.view()
        } else {
            basis.row(cluster)
        };
        for d in 0..16 {
            image[[i, d]] = center[d] + 0.01 * rng.sample::<f32, _>(StandardNormal);
        }
        q[[0, i]] = if cluster == 4 { 1.0 } else { 0.0 };
        q[[1, i]] = if cluster == 2 { 1.0 } else { 0.0 };
    }
    let acts = ActivationMatrix::new(q, "l", SummaryKind::Mean).unwrap();
    let singles =
        ConceptSet::new(vec!["A".into(), "B".into(), "C".into(), "D".into()], "s").unwrap();
    let candidates = vec!["A B".to_string(), "C D".to_string()];
    let cand_emb = ndarray::stack(
        Axis(0),
        &[
            composite.view(),
            ((&basis.row(2) + &basis.row(3)) / 2f32.sqrt()).view(),
        ],
    )
    .unwrap();
    let cfg = DissectConfig::new(SimilarityConfig::new(SimilarityKind::Cos));
    let out = compose_score(
        &acts,
        0,
        image.view(),
        &candidates,
        cand_emb.view(),
        Some((&singles, basis.view())),
        &cfg,
    )
    .unwrap();
    assert_eq!(out.best, "A B");
    assert_eq!(out.beats_single, Some(true));
    let (_, single) = out.best_single.clone().unwrap();
    assert!(out.score > single);
}

proptest! {
    #[test]
    fn pearson_is_one_on_exact_lines(
        xs in prop::collection::vec(-100.0f64..100.0, 3..50),
        slope in 0.1f64..10.0,
        intercept in -5.0f64..5.0,
    ) {
        prop_assume!(xs.iter().any(|&x| (x - xs[0]).abs() > 1e-3));
        let ys: Vec<f64> = xs.iter().map(|x| slope * x + intercept).collect();
        prop_assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-9);
        let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
        prop_assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-9);
    }
}
