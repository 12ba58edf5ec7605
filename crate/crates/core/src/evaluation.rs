//! Quantitative checks of neuron descriptions against final-layer ground
//! truth, where every output neuron's true concept is its class name.

use std::fs;
use std::path::Path;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dissector::NeuronLabel;
use crate::error::{Error, Result};
use crate::numeric::cosine;
use crate::tensorio::{ConceptSet, TensorFile};

/// Class names index-aligned with the final-layer neurons. Duplicates are
/// allowed since real label sets contain them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub class_names: Vec<String>,
}

impl GroundTruth {
    pub fn new(class_names: Vec<String>) -> Self {
        Self { class_names }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let class_names: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        if class_names.is_empty() {
            return Err(Error::EmptyConcepts {
                path: path.to_path_buf(),
            });
        }
        Ok(Self { class_names })
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }
}

/// Per-neuron and mean cosine similarity between paired rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosReport {
    pub per_neuron: Vec<f64>,
    pub mean: f64,
}

fn row_slice<'a>(row: &'a ArrayView1<'a, f32>) -> std::borrow::Cow<'a, [f32]> {
    match row.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(row.to_vec()),
    }
}

/// Cosine of each row pair. Both matrices must have the same shape.
pub fn paired_cosines(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "paired embeddings differ in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    a.outer_iter()
        .zip(b.outer_iter())
        .enumerate()
        .map(|(row, (x, y))| {
            cosine(&row_slice(&x), &row_slice(&y)).ok_or(Error::ZeroNorm {
                what: "paired embeddings".into(),
                row,
            })
        })
        .collect()
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Compares description embeddings with ground-truth embeddings. Both files
/// must come from the same encoder: their tags and encoder names must agree.
pub fn eval_cos(desc_emb: &TensorFile, gt_emb: &TensorFile) -> Result<CosReport> {
    if desc_emb.meta.tag != gt_emb.meta.tag || desc_emb.meta.encoder != gt_emb.meta.encoder {
        return Err(Error::InvalidParameter(format!(
            "description embeddings ({:?}, encoder {:?}) and ground-truth embeddings ({:?}, encoder {:?}) come from different encoders",
            desc_emb.meta.tag, desc_emb.meta.encoder, gt_emb.meta.tag, gt_emb.meta.encoder
        )));
    }
    let per_neuron = paired_cosines(desc_emb.data.view(), gt_emb.data.view())?;
    let mean = mean(&per_neuron);
    Ok(CosReport { per_neuron, mean })
}

fn normalize_label(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Whether each label exactly names its neuron's class (after lowercasing and
/// trimming). `None` when the dissection concept set does not contain every
/// class name, since the correct answer was then not available.
pub fn label_matches(
    labels: &[NeuronLabel],
    gt: &GroundTruth,
    concepts: &ConceptSet,
) -> Result<Option<Vec<bool>>> {
    if labels.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} labels but {} ground-truth classes",
            labels.len(),
            gt.len()
        )));
    }
    if !gt.class_names.iter().all(|c| concepts.contains(c)) {
        return Ok(None);
    }
    Ok(Some(
        labels
            .iter()
            .zip(&gt.class_names)
            .map(|(label, truth)| {
                label
                    .concept
                    .as_deref()
                    .is_some_and(|c| normalize_label(c) == normalize_label(truth))
            })
            .collect(),
    ))
}

/// Fraction of neurons labeled with exactly their class name.
pub fn eval_top1(
    labels: &[NeuronLabel],
    gt: &GroundTruth,
    concepts: &ConceptSet,
) -> Result<Option<f64>> {
    Ok(label_matches(labels, gt, concepts)?
        .map(|hits| hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronMetrics {
    pub neuron: usize,
    pub ground_truth: String,
    pub description: Option<String>,
    pub clip_cos: Option<f64>,
    pub mpnet_cos: Option<f64>,
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub neurons: usize,
    pub clip_cos: Option<f64>,
    pub mpnet_cos: Option<f64>,
    pub top1_accuracy: Option<f64>,
    #[serde(skip)]
    pub per_neuron: Vec<NeuronMetrics>,
}

/// Pair of embedding files (descriptions, ground truth) from one encoder.
pub struct EncoderPair<'a> {
    pub descriptions: &'a TensorFile,
    pub ground_truth: &'a TensorFile,
}

/// Assembles the full report. `clip` and `mpnet` are the two embedding
/// spaces; either may be absent.
pub fn evaluate(
    labels: &[NeuronLabel],
    gt: &GroundTruth,
    clip: Option<EncoderPair<'_>>,
    mpnet: Option<EncoderPair<'_>>,
    concepts: Option<&ConceptSet>,
) -> Result<MetricsReport> {
    if labels.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} labels but {} ground-truth classes",
            labels.len(),
            gt.len()
        )));
    }
    let space = |pair: Option<EncoderPair<'_>>| -> Result<Option<CosReport>> {
        pair.map(|p| {
            if p.descriptions.data.nrows() != labels.len() {
                return Err(Error::Shape(format!(
                    "{} description embeddings for {} labels",
                    p.descriptions.data.nrows(),
                    labels.len()
                )));
            }
            eval_cos(p.descriptions, p.ground_truth)
        })
        .transpose()
    };
    let clip = space(clip)?;
    let mpnet = space(mpnet)?;
    let hits = match concepts {
        Some(c) => label_matches(labels, gt, c)?,
        None => None,
    };
    let per_neuron = labels
        .iter()
        .enumerate()
        .map(|(i, label)| NeuronMetrics {
            neuron: label.neuron,
            ground_truth: gt.class_names[i].clone(),
            description: label.concept.clone(),
            clip_cos: clip.as_ref().map(|r| r.per_neuron[i]),
            mpnet_cos: mpnet.as_ref().map(|r| r.per_neuron[i]),
            correct: hits.as_ref().map(|h| h[i]),
        })
        .collect();
    let top1_accuracy = hits.map(|h| h.iter().filter(|&&x| x).count() as f64 / h.len() as f64);
    Ok(MetricsReport {
        neurons: labels.len(),
        clip_cos: clip.map(|r| r.mean),
        mpnet_cos: mpnet.map(|r| r.mean),
        top1_accuracy,
        per_neuron,
    })
}

/// Embeddings of neuron descriptions and class names in two text spaces.
pub struct DescriptionSpaces<'a> {
    /// K × d1 and K × d2, one row per neuron.
    pub descriptions: (ArrayView2<'a, f32>, ArrayView2<'a, f32>),
    /// C × d1 and C × d2, one row per class.
    pub classes: (ArrayView2<'a, f32>, ArrayView2<'a, f32>),
}

impl DescriptionSpaces<'_> {
    fn validate(&self, neurons: usize, classes: usize) -> Result<()> {
        let (d1, d2) = &self.descriptions;
        let (c1, c2) = &self.classes;
        if d1.nrows() != neurons || d2.nrows() != neurons {
            return Err(Error::Shape(format!(
                "description embeddings must have {neurons} rows"
            )));
        }
        if c1.nrows() != classes || c2.nrows() != classes {
            return Err(Error::Shape(format!(
                "class-name embeddings must have {classes} rows"
            )));
        }
        if d1.ncols() != c1.ncols() || d2.ncols() != c2.ncols() {
            return Err(Error::Shape(
                "description and class-name embeddings differ in dimension".into(),
            ));
        }
        Ok(())
    }
}

fn cos_rows(a: ArrayView1<'_, f32>, b: ArrayView1<'_, f32>) -> Result<f64> {
    cosine(&row_slice(&a), &row_slice(&b)).ok_or(Error::ZeroNorm {
        what: "description or class-name embedding".into(),
        row: 0,
    })
}

/// The neuron contributing most to class `predicted`: `argmax_j W[c, j] * q_j`,
/// ties to the lower index.
pub fn top_contributor(
    weights: ArrayView2<'_, f32>,
    activations: &[f32],
    predicted: usize,
) -> Result<usize> {
    if weights.ncols() != activations.len() {
        return Err(Error::Shape(format!(
            "weight matrix has {} inputs but {} activations were given",
            weights.ncols(),
            activations.len()
        )));
    }
    if predicted >= weights.nrows() {
        return Err(Error::InvalidParameter(format!(
            "class {predicted} out of range for {} classes",
            weights.nrows()
        )));
    }
    let row = weights.row(predicted);
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (j, (&w, &q)) in row.iter().zip(activations).enumerate() {
        let contribution = f64::from(w) * f64::from(q);
        if contribution > best_value {
            best = j;
            best_value = contribution;
        }
    }
    Ok(best)
}

/// Predicts an image's class from the description of its most contributing
/// neuron: the class whose name is closest to the description, measured by
/// the unweighted mean of the cosines in the two embedding spaces.
///
/// Returns `None` when that neuron has no description (degenerate).
pub fn predict_class(
    weights: ArrayView2<'_, f32>,
    activations: &[f32],
    predicted: usize,
    labels: &[NeuronLabel],
    spaces: &DescriptionSpaces<'_>,
) -> Result<Option<usize>> {
    let (classes, neurons) = weights.dim();
    if labels.len() != neurons {
        return Err(Error::Shape(format!(
            "{} labels for {neurons} neurons",
            labels.len()
        )));
    }
    spaces.validate(neurons, classes)?;
    let k = top_contributor(weights, activations, predicted)?;
    if labels[k].concept.is_none() {
        return Ok(None);
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for c in 0..classes {
        let first = cos_rows(spaces.descriptions.0.row(k), spaces.classes.0.row(c))?;
        let second = cos_rows(spaces.descriptions.1.row(k), spaces.classes.1.row(c))?;
        let score = 0.5 * (first + second);
        if score > best_score {
            best = c;
            best_score = score;
        }
    }
    Ok(Some(best))
}

/// Fraction of images whose true class is recovered by [`predict_class`].
/// `activations` is K × images; images whose top neuron is undescribed count
/// as misses.
pub fn class_prediction_accuracy(
    weights: ArrayView2<'_, f32>,
    activations: ArrayView2<'_, f32>,
    predicted: &[usize],
    truth: &[usize],
    labels: &[NeuronLabel],
    spaces: &DescriptionSpaces<'_>,
) -> Result<f64> {
    let images = activations.ncols();
    if predicted.len() != images || truth.len() != images {
        return Err(Error::Shape(format!(
            "{images} images but {} predictions and {} true classes",
            predicted.len(),
            truth.len()
        )));
    }
    if images == 0 {
        return Err(Error::Shape("no images to predict".into()));
    }
    let mut hits = 0usize;
    for i in 0..images {
        let q = activations.column(i).to_vec();
        if predict_class(weights, &q, predicted[i], labels, spaces)? == Some(truth[i]) {
            hits += 1;
        }
    }
    Ok(hits as f64 / images as f64)
}
