//! Studies built on top of neuron labels: how final-layer weights relate to
//! the similarity of the concepts they connect, and two-word compositional
//! descriptions.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::concept_space::normalize_rows;
use crate::dissector::{ActivationMatrix, DissectConfig, Scorer};
use crate::error::{Error, Result};
use crate::numeric::score_order;
use crate::tensorio::ConceptSet;

pub const DEFAULT_COMPOSE_TOP_N: usize = 100;

/// Cosine between every class concept and every neuron concept (C × K).
pub fn concept_cosines(
    neuron_concept_emb: ArrayView2<'_, f32>,
    class_name_emb: ArrayView2<'_, f32>,
) -> Result<Array2<f64>> {
    if neuron_concept_emb.ncols() != class_name_emb.ncols() {
        return Err(Error::Shape(format!(
            "neuron concept embeddings have dimension {} but class embeddings have {}",
            neuron_concept_emb.ncols(),
            class_name_emb.ncols()
        )));
    }
    let neurons = normalize_rows(neuron_concept_emb, "neuron concept embeddings")?.mapv(f64::from);
    let classes = normalize_rows(class_name_emb, "class name embeddings")?.mapv(f64::from);
    Ok(classes.dot(&neurons.t()).mapv(|c| c.clamp(-1.0, 1.0)))
}

fn check_weights(
    weights: ArrayView2<'_, f32>,
    neuron_concept_emb: ArrayView2<'_, f32>,
    class_name_emb: ArrayView2<'_, f32>,
) -> Result<()> {
    let (classes, neurons) = weights.dim();
    if class_name_emb.nrows() != classes || neuron_concept_emb.nrows() != neurons {
        return Err(Error::Shape(format!(
            "weights are {classes}x{neurons} but there are {} class and {} neuron embeddings",
            class_name_emb.nrows(),
            neuron_concept_emb.nrows()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidParameter(
            "weight matrix has non-finite entries".into(),
        ));
    }
    Ok(())
}

/// Flat (row-major) indices of the weight matrix, largest weight first, ties
/// to the lower index.
fn weights_descending(weights: ArrayView2<'_, f32>) -> Vec<usize> {
    let flat: Vec<f32> = weights.iter().copied().collect();
    let mut order: Vec<usize> = (0..flat.len()).collect();
    order.sort_unstable_by(|&a, &b| flat[b].total_cmp(&flat[a]).then(a.cmp(&b)));
    order
}

/// Mean concept cosine over the pairs joined by the `k` largest weights, for
/// each requested `k`. Weights are ranked globally over all C × K entries.
pub fn topk_similarity_curve(
    weights: ArrayView2<'_, f32>,
    neuron_concept_emb: ArrayView2<'_, f32>,
    class_name_emb: ArrayView2<'_, f32>,
    k_values: &[usize],
) -> Result<Vec<(usize, f64)>> {
    check_weights(weights, neuron_concept_emb, class_name_emb)?;
    let total = weights.len();
    if let Some(&bad) = k_values.iter().find(|&&k| k == 0 || k > total) {
        return Err(Error::InvalidParameter(format!(
            "k = {bad} must lie in 1..={total}"
        )));
    }
    let cos = concept_cosines(neuron_concept_emb, class_name_emb)?;
    let neurons = weights.ncols();
    let order = weights_descending(weights);
    let needed = k_values.iter().copied().max().unwrap_or(0);
    let mut prefix = Vec::with_capacity(needed + 1);
    prefix.push(0.0f64);
    for &flat in &order[..needed] {
        let last = *prefix.last().expect("non-empty");
        prefix.push(last + cos[[flat / neurons, flat % neurons]]);
    }
    Ok(k_values
        .iter()
        .map(|&k| (k, prefix[k] / k as f64))
        .collect())
}

/// Renders a curve as CSV with header `k,mean_cos`.
pub fn curve_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("k,mean_cos\n");
    for (k, mean) in curve {
        out.push_str(&format!("{k},{mean}\n"));
    }
    out
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "pearson inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidParameter(
            "pearson needs at least two samples".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidParameter(
            "pearson correlation is undefined for zero-variance input".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub samples: usize,
}

/// Pearson r between connecting weights and the cosine of the concepts they
/// connect, over all weights or only the `top_n` largest.
pub fn weight_concept_correlation(
    weights: ArrayView2<'_, f32>,
    neuron_concept_emb: ArrayView2<'_, f32>,
    class_name_emb: ArrayView2<'_, f32>,
    top_n: Option<usize>,
) -> Result<Correlation> {
    check_weights(weights, neuron_concept_emb, class_name_emb)?;
    let cos = concept_cosines(neuron_concept_emb, class_name_emb)?;
    let neurons = weights.ncols();
    let flat: Vec<f32> = weights.iter().copied().collect();
    let selected: Vec<usize> = match top_n {
        Some(n) if n < flat.len() => weights_descending(weights).into_iter().take(n).collect(),
        _ => (0..flat.len()).collect(),
    };
    let x: Vec<f64> = selected.iter().map(|&i| f64::from(flat[i])).collect();
    let y: Vec<f64> = selected
        .iter()
        .map(|&i| cos[[i / neurons, i % neurons]])
        .collect();
    Ok(Correlation {
        r: pearson(&x, &y)?,
        samples: selected.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionCandidate {
    pub neuron: usize,
    pub first: String,
    pub second: String,
    pub text: String,
    pub score: Option<f64>,
}

/// Record handed to the extractor for embedding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingCandidate {
    pub neuron: usize,
    pub text: String,
}

impl CompositionCandidate {
    pub fn pending(&self) -> PendingCandidate {
        PendingCandidate {
            neuron: self.neuron,
            text: self.text.clone(),
        }
    }
}

/// All unordered pairs of the neuron's `top_n` best single concepts, joined
/// by a space with the higher-scoring concept first. Pairs are listed in
/// lexicographic order of their ranks.
pub fn compose_candidates(
    neuron: usize,
    score_row: &[f64],
    concepts: &ConceptSet,
    top_n: usize,
) -> Result<Vec<CompositionCandidate>> {
    if score_row.len() != concepts.len() {
        return Err(Error::Shape(format!(
            "score row has {} entries for {} concepts",
            score_row.len(),
            concepts.len()
        )));
    }
    let keep = top_n.min(concepts.len());
    if keep < 2 {
        return Err(Error::InvalidParameter(
            "compositions need at least two concepts".into(),
        ));
    }
    let mut ranked: Vec<(usize, f64)> = score_row.iter().copied().enumerate().collect();
    ranked.sort_unstable_by(score_order);
    ranked.truncate(keep);
    let names = concepts.concepts();
    let mut out = Vec::with_capacity(keep * (keep - 1) / 2);
    for a in 0..keep {
        for b in a + 1..keep {
            let first = &names[ranked[a].0];
            let second = &names[ranked[b].0];
            out.push(CompositionCandidate {
                neuron,
                first: first.clone(),
                second: second.clone(),
                text: format!("{first} {second}"),
                score: None,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionOutcome {
    pub neuron: usize,
    pub best: String,
    pub score: f64,
    /// Best single concept when a base concept set was scored alongside.
    pub best_single: Option<(String, f64)>,
    pub beats_single: Option<bool>,
    /// Every candidate with its score, in input order.
    pub candidates: Vec<(String, f64)>,
}

/// Scores candidate texts for one neuron and returns the best.
///
/// Candidates are scored in a shared concept space: the base concept set
/// (when given) followed by the candidates, so softmax normalizers and scores
/// are directly comparable between single concepts and compositions. The
/// rest of the layer supplies the wpmi context as in dissection.
#[allow(clippy::too_many_arguments)]
pub fn compose_score(
    activations: &ActivationMatrix,
    neuron: usize,
    image_emb: ArrayView2<'_, f32>,
    candidates: &[String],
    candidate_emb: ArrayView2<'_, f32>,
    singles: Option<(&ConceptSet, ArrayView2<'_, f32>)>,
    cfg: &DissectConfig,
) -> Result<CompositionOutcome> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter(
            "no composition candidates to score".into(),
        ));
    }
    if candidate_emb.nrows() != candidates.len() {
        return Err(Error::Shape(format!(
            "{} candidates but {} candidate embeddings",
            candidates.len(),
            candidate_emb.nrows()
        )));
    }
    if neuron >= activations.neurons() {
        return Err(Error::InvalidParameter(format!(
            "neuron {neuron} out of range for {} neurons",
            activations.neurons()
        )));
    }
    let (base, text) = match singles {
        Some((set, emb)) => {
            if emb.nrows() != set.len() {
                return Err(Error::Shape(format!(
                    "{} concepts but {} text embeddings",
                    set.len(),
                    emb.nrows()
                )));
            }
            if emb.ncols() != candidate_emb.ncols() {
                return Err(Error::Shape(
                    "concept and candidate embeddings differ in dimension".into(),
                ));
            }
            (
                set.len(),
                concatenate(Axis(0), &[emb, candidate_emb]).expect("column counts checked"),
            )
        }
        None => (0, candidate_emb.to_owned()),
    };
    let scorer = Scorer::new(activations, image_emb, text.view(), cfg)?;
    if scorer.degenerate()[neuron] {
        return Err(Error::DegenerateNeuron);
    }
    let mut row = vec![0.0f64; text.nrows()];
    scorer.for_each_chunk(|range, block| {
        row[range].copy_from_slice(&block.row(neuron).to_vec());
        Ok(())
    })?;

    let best_of = |range: std::ops::Range<usize>| {
        range
            .map(|m| (m, row[m]))
            .min_by(score_order)
            .expect("non-empty range")
    };
    let (best_idx, best_score) = best_of(base..row.len());
    let best_single = singles.map(|(set, _)| {
        let (m, s) = best_of(0..base);
        (set.concepts()[m].clone(), s)
    });
    Ok(CompositionOutcome {
        neuron,
        best: candidates[best_idx - base].clone(),
        score: best_score,
        beats_single: best_single.as_ref().map(|(_, s)| best_score > *s),
        best_single,
        candidates: candidates
            .iter()
            .cloned()
            .zip(row[base..].iter().copied())
            .collect(),
    })
}
