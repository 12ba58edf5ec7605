//! Concept-activation matrix `P` (images × concepts inner products) and the
//! per-image concept distributions `softmax(a · P[i, :])`.
//!
//! Two paths are provided. The dense path materializes `P` and is what the
//! single-pair similarity functions consume. The chunked path computes `P`
//! one contiguous block of concepts at a time from prepared embeddings, so a
//! 50k × 20k problem never needs the whole matrix in memory.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;

/// Entries of a normalized `P` may exceed ±1 by float rounding only.
pub const NORMALIZED_TOLERANCE: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptActivationMatrix {
    values: Array2<f32>,
    normalized: bool,
}

impl ConceptActivationMatrix {
    /// Wraps a precomputed P. The matrix is treated as unnormalized.
    pub fn from_values(values: Array2<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("concept activation matrix is empty".into()));
        }
        if let Some(((row, col), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "concept activation ({row}, {col}) is not finite: {v}"
            )));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn images(&self) -> usize {
        self.values.nrows()
    }

    pub fn concepts(&self) -> usize {
        self.values.ncols()
    }

    /// Column `m` as a contiguous vector.
    pub fn column(&self, m: usize) -> Vec<f32> {
        self.values.column(m).to_vec()
    }
}

/// Scales every row to unit L2 norm. Accumulates in f64.
pub fn normalize_rows(matrix: ArrayView2<'_, f32>, what: &str) -> Result<Array2<f32>> {
    let mut out = matrix.to_owned();
    for (row, mut values) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm {
                what: what.to_string(),
                row,
            });
        }
        values.mapv_inplace(|v| (f64::from(v) / norm) as f32);
    }
    Ok(out)
}

fn check_embedding_pair(
    image_emb: ArrayView2<'_, f32>,
    text_emb: ArrayView2<'_, f32>,
) -> Result<()> {
    if image_emb.nrows() == 0 || text_emb.nrows() == 0 {
        return Err(Error::Shape(
            "image and text embeddings need at least one row each".into(),
        ));
    }
    if image_emb.ncols() != text_emb.ncols() {
        return Err(Error::Shape(format!(
            "image embeddings have dimension {} but text embeddings have {}",
            image_emb.ncols(),
            text_emb.ncols()
        )));
    }
    Ok(())
}

/// Builds `P[i][j] = <I_i, T_j>`, optionally after L2-normalizing both inputs.
pub fn build_concept_activations(
    image_emb: ArrayView2<'_, f32>,
    text_emb: ArrayView2<'_, f32>,
    normalize: bool,
) -> Result<ConceptActivationMatrix> {
    let prepared = PreparedEmbeddings::new(image_emb, text_emb, normalize)?;
    let values = prepared.block(None, 0..prepared.concepts());
    Ok(ConceptActivationMatrix {
        values,
        normalized: normalize,
    })
}

/// Image and concept embeddings, normalized when requested, ready for
/// block-wise products.
#[derive(Debug, Clone)]
pub struct PreparedEmbeddings {
    image: Array2<f32>,
    text: Array2<f32>,
    normalized: bool,
}

impl PreparedEmbeddings {
    pub fn new(
        image_emb: ArrayView2<'_, f32>,
        text_emb: ArrayView2<'_, f32>,
        normalize: bool,
    ) -> Result<Self> {
        check_embedding_pair(image_emb, text_emb)?;
        let (image, text) = if normalize {
            (
                normalize_rows(image_emb, "image embeddings")?,
                normalize_rows(text_emb, "text embeddings")?,
            )
        } else {
            (image_emb.to_owned(), text_emb.to_owned())
        };
        Ok(Self {
            image,
            text,
            normalized: normalize,
        })
    }

    pub fn images(&self) -> usize {
        self.image.nrows()
    }

    pub fn concepts(&self) -> usize {
        self.text.nrows()
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    /// Keeps only the listed image rows, in the given order.
    pub fn select_images(&self, rows: &[usize]) -> Self {
        Self {
            image: self.image.select(Axis(0), rows),
            text: self.text.clone(),
            normalized: self.normalized,
        }
    }

    /// Block of `P` for the given image rows (all rows when `None`) and a
    /// contiguous concept range.
    pub fn block(&self, rows: Option<&[usize]>, concepts: Range<usize>) -> Array2<f32> {
        let text = self.text.slice(s![concepts, ..]);
        match rows {
            None => self.image.dot(&text.t()),
            Some(rows) => self.image.select(Axis(0), rows).dot(&text.t()),
        }
    }

    /// `log sum_m exp(a * P[i, m])` for every image row, computed one concept
    /// chunk at a time. Chunk results are combined in chunk order.
    pub fn row_log_normalizers(&self, temperature: f64, chunk: usize) -> Array1<f64> {
        let ranges = concept_chunks(self.concepts(), chunk);
        let partial: Vec<Array1<f64>> = ranges
            .into_par_iter()
            .map(|range| {
                let block = self.block(None, range);
                block
                    .axis_iter(Axis(0))
                    .map(|row| log_sum_exp(row.iter().map(|&p| temperature * f64::from(p))))
                    .collect()
            })
            .collect();
        Array1::from_shape_fn(self.images(), |i| {
            log_sum_exp(partial.iter().map(|lse| lse[i]))
        })
    }
}

/// Splits `0..total` into contiguous ranges of at most `width` concepts.
pub fn concept_chunks(total: usize, width: usize) -> Vec<Range<usize>> {
    let width = width.max(1);
    (0..total)
        .step_by(width)
        .map(|start| start..(start + width).min(total))
        .collect()
}

/// Row-wise concept distributions `p(t_m | x_i) = softmax(a * P[i, :])_m`,
/// stored as log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptProbabilities {
    log_probs: Array2<f64>,
    temperature: f64,
}

impl ConceptProbabilities {
    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn images(&self) -> usize {
        self.log_probs.nrows()
    }

    pub fn concepts(&self) -> usize {
        self.log_probs.ncols()
    }

    pub fn log_prob(&self, image: usize, concept: usize) -> f64 {
        self.log_probs[[image, concept]]
    }

    pub fn prob(&self, image: usize, concept: usize) -> f64 {
        self.log_probs[[image, concept]].exp()
    }

    pub fn log_probs(&self) -> &Array2<f64> {
        &self.log_probs
    }

    pub fn probs(&self) -> Array2<f64> {
        self.log_probs.mapv(f64::exp)
    }
}

/// Stable row-wise softmax of `a * P`.
pub fn concept_probabilities(
    activations: &ConceptActivationMatrix,
    temperature: f64,
) -> Result<ConceptProbabilities> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut log_probs = activations.values.mapv(|p| temperature * f64::from(p));
    for mut row in log_probs.axis_iter_mut(Axis(0)) {
        let lse = log_sum_exp(row.iter().copied());
        row.mapv_inplace(|z| z - lse);
    }
    Ok(ConceptProbabilities {
        log_probs,
        temperature,
    })
}
