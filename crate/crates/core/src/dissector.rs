//! Layer-wide labeling: score every (neuron, concept) pair and report the
//! best concepts per neuron.
//!
//! Scoring runs over contiguous concept chunks so the full concept-activation
//! matrix is never materialized. For the mutual-information similarities only
//! the probe images that carry nonzero membership for some neuron of the batch
//! are touched, which for the default schedule is at most 100 per neuron.
//!
//! The concept prior `p(t_m)` is estimated from the neurons of the batch
//! being dissected, so a neuron's wpmi / soft wpmi scores depend on which
//! other neurons are dissected with it. Degenerate (constant) neurons are left
//! out of that context and are never labeled.

use std::fs::{self, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::Path;

use log::{debug, info};
use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::concept_space::{concept_chunks, PreparedEmbeddings};
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, score_order};
use crate::similarity::{
    column_ranks, is_degenerate, soft_log_factor, Membership, RankProfile, SimilarityConfig,
    SimilarityKind,
};
use crate::tensorio::{
    meta_path, payload_path, with_suffix, write_atomic, ConceptSet, SummaryKind, TensorFile,
    TensorMeta, TensorTag,
};

pub const DEFAULT_TAU: f64 = 0.16;
pub const DEFAULT_CONCEPT_CHUNK: usize = 1024;
pub const DEFAULT_TOP_N: usize = 5;
pub const DEFAULT_SCORE_CAP: usize = 50_000_000;

/// Summarized activations of one layer: row `k` is neuron `k`'s vector over
/// the probe images.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    values: Array2<f32>,
    layer: String,
    summary: SummaryKind,
}

impl ActivationMatrix {
    pub fn new(
        values: Array2<f32>,
        layer: impl Into<String>,
        summary: SummaryKind,
    ) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Shape("activation matrix must be non-empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "activation matrix has a non-finite entry at flat index {i}"
            )));
        }
        Ok(Self {
            values: values.as_standard_layout().into_owned(),
            layer: layer.into(),
            summary,
        })
    }

    /// Requires the `activations` tag and a recorded summary function. The
    /// layer name falls back to the tensor name.
    pub fn from_tensor(tensor: TensorFile) -> Result<Self> {
        let meta = tensor.meta;
        let complain = |message: String| Error::Metadata {
            path: meta.name.clone().into(),
            message,
        };
        if meta.tag != TensorTag::Activations {
            return Err(complain(format!(
                "expected an activations tensor, found {:?}",
                meta.tag
            )));
        }
        let summary = meta.summary.ok_or_else(|| {
            complain("activations metadata must record the summary function".into())
        })?;
        let layer = meta.layer.clone().unwrap_or_else(|| meta.name.clone());
        Self::new(tensor.data, layer, summary)
    }

    pub fn neurons(&self) -> usize {
        self.values.nrows()
    }

    pub fn images(&self) -> usize {
        self.values.ncols()
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn summary(&self) -> SummaryKind {
        self.summary
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn row(&self, neuron: usize) -> &[f32] {
        self.values.row(neuron).to_slice().expect("standard layout")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissectConfig {
    pub similarity: SimilarityConfig,
    /// Soft wpmi score above which a label counts as interpretable.
    pub interpretability_tau: f64,
    pub concept_chunk: usize,
    pub output_top_n: usize,
    /// L2-normalize image and concept embeddings before their product.
    pub normalize_embeddings: bool,
    /// Largest K × M score matrix `score_matrix` will hold in memory.
    pub score_cap: usize,
}

impl Default for DissectConfig {
    fn default() -> Self {
        Self::new(SimilarityConfig::default())
    }
}

impl DissectConfig {
    pub fn new(similarity: SimilarityConfig) -> Self {
        Self {
            similarity,
            interpretability_tau: DEFAULT_TAU,
            concept_chunk: DEFAULT_CONCEPT_CHUNK,
            output_top_n: DEFAULT_TOP_N,
            normalize_embeddings: true,
            score_cap: DEFAULT_SCORE_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.similarity.validate()?;
        if self.concept_chunk == 0 || self.output_top_n == 0 {
            return Err(Error::InvalidParameter(
                "concept_chunk and output_top_n must be positive".into(),
            ));
        }
        if !self.interpretability_tau.is_finite() {
            return Err(Error::InvalidParameter("tau must be finite".into()));
        }
        Ok(())
    }
}

/// One output record per neuron. `top[0]` is the chosen concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronLabel {
    pub layer: String,
    pub neuron: usize,
    pub concept: Option<String>,
    pub score: Option<f64>,
    pub top: Vec<(String, f64)>,
    pub interpretable: Option<bool>,
    pub degenerate: bool,
    pub similarity: SimilarityKind,
    pub summary: SummaryKind,
}

impl NeuronLabel {
    /// Alternates after the chosen concept.
    pub fn runner_up(&self) -> &[(String, f64)] {
        self.top.get(1..).unwrap_or(&[])
    }
}

/// Full K × M scores. Rows of degenerate neurons are zero-filled and flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub scores: Array2<f64>,
    pub degenerate: Vec<bool>,
}

impl ScoreMatrix {
    pub fn row(&self, neuron: usize) -> &[f64] {
        self.scores.row(neuron).to_slice().expect("standard layout")
    }
}

enum Prepared {
    Cos {
        activations: Array2<f64>,
        norms: Vec<f64>,
    },
    Rank {
        profiles: Vec<Option<RankProfile>>,
    },
    Pmi {
        // Per neuron: (row into `embeddings`, membership weight).
        members: Vec<Vec<(usize, f64)>>,
        context: Vec<usize>,
        row_lse: Array1<f64>,
    },
}

/// Chunked scoring engine shared by the dissector, the score matrix export
/// and compositional search.
pub(crate) struct Scorer<'a> {
    activations: &'a ActivationMatrix,
    embeddings: PreparedEmbeddings,
    cfg: &'a SimilarityConfig,
    chunk: usize,
    degenerate: Vec<bool>,
    prepared: Prepared,
}

impl<'a> Scorer<'a> {
    pub(crate) fn new(
        activations: &'a ActivationMatrix,
        image_emb: ArrayView2<'_, f32>,
        text_emb: ArrayView2<'_, f32>,
        cfg: &'a DissectConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let sim = &cfg.similarity;
        let n = activations.images();
        if image_emb.nrows() != n {
            return Err(Error::Shape(format!(
                "activations cover {n} probe images but there are {} image embeddings",
                image_emb.nrows()
            )));
        }
        let embeddings = PreparedEmbeddings::new(image_emb, text_emb, cfg.normalize_embeddings)?;
        let degenerate: Vec<bool> = (0..activations.neurons())
            .map(|k| is_degenerate(activations.row(k)))
            .collect();
        let live = degenerate.iter().filter(|d| !**d).count();
        debug!(
            "{} of {} neurons in layer {} are non-degenerate",
            live,
            degenerate.len(),
            activations.layer()
        );

        let (embeddings, prepared) = match sim.kind {
            SimilarityKind::Cos => {
                let values = activations.values().mapv(f64::from);
                let norms = values
                    .axis_iter(Axis(0))
                    .map(|row| row.dot(&row).sqrt())
                    .collect();
                (
                    embeddings,
                    Prepared::Cos {
                        activations: values,
                        norms,
                    },
                )
            }
            SimilarityKind::RankReorder => {
                if n < 2 {
                    return Err(Error::InvalidParameter(
                        "rank reorder needs at least two probe images".into(),
                    ));
                }
                let profiles = (0..activations.neurons())
                    .map(|k| {
                        (!degenerate[k])
                            .then(|| RankProfile::new(activations.row(k), sim.top_fraction))
                    })
                    .collect();
                (embeddings, Prepared::Rank { profiles })
            }
            SimilarityKind::Wpmi | SimilarityKind::SoftWpmi => {
                let mut memberships = Vec::with_capacity(activations.neurons());
                for (k, &flat) in degenerate.iter().enumerate() {
                    memberships.push(if flat {
                        None
                    } else {
                        Some(Membership::for_config(activations.row(k), sim)?)
                    });
                }
                // Restrict the probe set to images with nonzero membership somewhere.
                let mut used = vec![false; n];
                for m in memberships.iter().flatten() {
                    for &(i, _) in m.entries() {
                        used[i] = true;
                    }
                }
                let rows: Vec<usize> = (0..n).filter(|&i| used[i]).collect();
                let mut local = vec![usize::MAX; n];
                for (slot, &i) in rows.iter().enumerate() {
                    local[i] = slot;
                }
                let members = memberships
                    .iter()
                    .map(|m| match m {
                        Some(m) => m.entries().iter().map(|&(i, w)| (local[i], w)).collect(),
                        None => Vec::new(),
                    })
                    .collect();
                let context = (0..activations.neurons())
                    .filter(|&k| !degenerate[k])
                    .collect();
                let embeddings = embeddings.select_images(&rows);
                info!(
                    "scoring over {} of {} probe images with nonzero membership",
                    rows.len(),
                    n
                );
                let row_lse = if rows.is_empty() {
                    Array1::zeros(0)
                } else {
                    embeddings.row_log_normalizers(sim.temperature, cfg.concept_chunk)
                };
                (
                    embeddings,
                    Prepared::Pmi {
                        members,
                        context,
                        row_lse,
                    },
                )
            }
        };

        Ok(Self {
            activations,
            embeddings,
            cfg: sim,
            chunk: cfg.concept_chunk,
            degenerate,
            prepared,
        })
    }

    pub(crate) fn degenerate(&self) -> &[bool] {
        &self.degenerate
    }

    pub(crate) fn concepts(&self) -> usize {
        self.embeddings.concepts()
    }

    /// Scores of every neuron against one concept range (K × width).
    pub(crate) fn score_chunk(&self, range: Range<usize>) -> Array2<f64> {
        let k_total = self.activations.neurons();
        let width = range.len();
        let mut out = Array2::zeros((k_total, width));
        match &self.prepared {
            Prepared::Cos { activations, norms } => {
                let block = self.embeddings.block(None, range).mapv(f64::from);
                let col_norms: Vec<f64> =
                    block.axis_iter(Axis(1)).map(|c| c.dot(&c).sqrt()).collect();
                let dots = activations.dot(&block);
                for k in 0..k_total {
                    if self.degenerate[k] {
                        continue;
                    }
                    for m in 0..width {
                        let denom = norms[k] * col_norms[m];
                        out[[k, m]] = if denom == 0.0 {
                            0.0
                        } else {
                            (dots[[k, m]] / denom).clamp(-1.0, 1.0)
                        };
                    }
                }
            }
            Prepared::Rank { profiles } => {
                let block = self.embeddings.block(None, range);
                let columns: Vec<Vec<usize>> = block
                    .axis_iter(Axis(1))
                    .into_par_iter()
                    .map(|c| column_ranks(&c.to_vec()))
                    .collect();
                let p_norm = self.cfg.p_norm;
                out.axis_iter_mut(Axis(0))
                    .into_par_iter()
                    .enumerate()
                    .for_each(|(k, mut row)| {
                        if let Some(profile) = &profiles[k] {
                            let q = self.activations.row(k);
                            for (m, ranks) in columns.iter().enumerate() {
                                row[m] = profile.score(q, ranks, p_norm);
                            }
                        }
                    });
            }
            Prepared::Pmi {
                members,
                context,
                row_lse,
            } => {
                if context.is_empty() {
                    return out;
                }
                let a = self.cfg.temperature;
                let mut log_p = self
                    .embeddings
                    .block(None, range)
                    .mapv(|v| a * f64::from(v));
                for (mut row, &lse) in log_p.axis_iter_mut(Axis(0)).zip(row_lse.iter()) {
                    row.mapv_inplace(|z| z - lse);
                }
                let p = log_p.mapv(f64::exp);
                // log E[p(t_m | B_k)] for every neuron.
                out.axis_iter_mut(Axis(0))
                    .into_par_iter()
                    .enumerate()
                    .for_each(|(k, mut acc)| {
                        let acc = acc.as_slice_mut().expect("contiguous row");
                        for &(u, w) in &members[k] {
                            let log_row = log_p.row(u);
                            let log_row = log_row.as_slice().expect("contiguous row");
                            if w == 1.0 {
                                for (a, &lp) in acc.iter_mut().zip(log_row) {
                                    *a += lp;
                                }
                            } else {
                                let p_row = p.row(u);
                                let p_row = p_row.as_slice().expect("contiguous row");
                                for ((a, &pr), &lp) in acc.iter_mut().zip(p_row).zip(log_row) {
                                    *a += soft_log_factor(w, pr, lp);
                                }
                            }
                        }
                    });
                // log p(t_m) from the batch, then subtract λ times it.
                let log_c = (context.len() as f64).ln();
                let prior: Vec<f64> = (0..width)
                    .map(|m| log_sum_exp(context.iter().map(|&j| out[[j, m]])) - log_c)
                    .collect();
                let lambda = self.cfg.lambda;
                for k in 0..k_total {
                    if self.degenerate[k] {
                        out.row_mut(k).fill(0.0);
                        continue;
                    }
                    for m in 0..width {
                        out[[k, m]] -= lambda * prior[m];
                    }
                }
            }
        }
        out
    }

    /// Scores all chunks, handing each block to `sink` in concept order.
    /// At most one block per worker thread is alive at a time.
    pub(crate) fn for_each_chunk(
        &self,
        mut sink: impl FnMut(Range<usize>, Array2<f64>) -> Result<()>,
    ) -> Result<()> {
        let ranges = concept_chunks(self.concepts(), self.chunk);
        let wave = rayon::current_num_threads().max(1);
        for group in ranges.chunks(wave) {
            let blocks: Vec<Array2<f64>> = group
                .par_iter()
                .map(|r| self.score_chunk(r.clone()))
                .collect();
            for (range, block) in group.iter().zip(blocks) {
                sink(range.clone(), block)?;
            }
        }
        Ok(())
    }

    pub(crate) fn full_scores(&self) -> Result<Array2<f64>> {
        let mut scores = Array2::zeros((self.activations.neurons(), self.concepts()));
        self.for_each_chunk(|range, block| {
            scores.slice_mut(ndarray::s![.., range]).assign(&block);
            Ok(())
        })?;
        Ok(scores)
    }
}

fn check_concepts(text_emb: ArrayView2<'_, f32>, concepts: &ConceptSet) -> Result<()> {
    if concepts.is_empty() {
        return Err(Error::InvalidParameter("concept set is empty".into()));
    }
    if text_emb.nrows() != concepts.len() {
        return Err(Error::Shape(format!(
            "{} concepts but {} text embeddings",
            concepts.len(),
            text_emb.nrows()
        )));
    }
    Ok(())
}

/// Labels every neuron of a layer with its best-scoring concept.
pub fn dissect_layer(
    activations: &ActivationMatrix,
    image_emb: ArrayView2<'_, f32>,
    text_emb: ArrayView2<'_, f32>,
    concepts: &ConceptSet,
    cfg: &DissectConfig,
) -> Result<Vec<NeuronLabel>> {
    check_concepts(text_emb, concepts)?;
    let scorer = Scorer::new(activations, image_emb, text_emb, cfg)?;
    let top_n = cfg.output_top_n;
    let k_total = activations.neurons();
    let mut best: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(2 * top_n); k_total];
    scorer.for_each_chunk(|range, block| {
        debug!("scored concepts {}..{}", range.start, range.end);
        for (k, row) in block.axis_iter(Axis(0)).enumerate() {
            if scorer.degenerate()[k] {
                continue;
            }
            let candidates = &mut best[k];
            candidates.extend(row.iter().enumerate().map(|(m, &s)| (range.start + m, s)));
            if candidates.len() > top_n {
                candidates.select_nth_unstable_by(top_n - 1, score_order);
                candidates.truncate(top_n);
            }
        }
        Ok(())
    })?;

    let kind = cfg.similarity.kind;
    let labels = best
        .into_iter()
        .enumerate()
        .map(|(k, mut top)| {
            top.sort_unstable_by(score_order);
            let degenerate = scorer.degenerate()[k];
            let top: Vec<(String, f64)> = top
                .into_iter()
                .map(|(m, s)| (concepts.concepts()[m].clone(), s))
                .collect();
            let (concept, score) = match top.first() {
                Some((c, s)) => (Some(c.clone()), Some(*s)),
                None => (None, None),
            };
            let interpretable = match (kind, score) {
                (SimilarityKind::SoftWpmi, Some(s)) => Some(s > cfg.interpretability_tau),
                _ => None,
            };
            NeuronLabel {
                layer: activations.layer().to_string(),
                neuron: k,
                concept,
                score,
                top,
                interpretable,
                degenerate,
                similarity: kind,
                summary: activations.summary(),
            }
        })
        .collect();
    Ok(labels)
}

/// All K × M scores in memory; refuses matrices larger than `cfg.score_cap`.
pub fn score_matrix(
    activations: &ActivationMatrix,
    image_emb: ArrayView2<'_, f32>,
    text_emb: ArrayView2<'_, f32>,
    concepts: &ConceptSet,
    cfg: &DissectConfig,
) -> Result<ScoreMatrix> {
    check_concepts(text_emb, concepts)?;
    let cells = activations.neurons().saturating_mul(concepts.len());
    if cells > cfg.score_cap {
        return Err(Error::CapExceeded {
            cells,
            cap: cfg.score_cap,
        });
    }
    let scorer = Scorer::new(activations, image_emb, text_emb, cfg)?;
    Ok(ScoreMatrix {
        scores: scorer.full_scores()?,
        degenerate: scorer.degenerate().to_vec(),
    })
}

/// Streams the K × M score matrix to a tensor file pair at `base`, one concept
/// chunk at a time. Scores are stored as f32 and tagged `scores`; the
/// metadata lists the similarity kind and the degenerate neurons.
pub fn stream_score_matrix(
    activations: &ActivationMatrix,
    image_emb: ArrayView2<'_, f32>,
    text_emb: ArrayView2<'_, f32>,
    concepts: &ConceptSet,
    cfg: &DissectConfig,
    base: &Path,
) -> Result<()> {
    check_concepts(text_emb, concepts)?;
    let scorer = Scorer::new(activations, image_emb, text_emb, cfg)?;
    let (k_total, m_total) = (activations.neurons(), concepts.len());
    let payload = payload_path(base);
    let tmp = with_suffix(&payload, "tmp");
    let mut file = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&tmp)
        .map_err(|e| Error::io(&tmp, e))?;
    file.set_len((k_total * m_total * 4) as u64)
        .map_err(|e| Error::io(&tmp, e))?;
    scorer.for_each_chunk(|range, block| {
        for (k, row) in block.axis_iter(Axis(0)).enumerate() {
            let bytes: Vec<u8> = row.iter().flat_map(|&s| (s as f32).to_le_bytes()).collect();
            file.seek(SeekFrom::Start(((k * m_total + range.start) * 4) as u64))
                .and_then(|_| file.write_all(&bytes))
                .map_err(|e| Error::io(&tmp, e))?;
        }
        Ok(())
    })?;
    file.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, &payload).map_err(|e| Error::io(&payload, e))?;
    let mut meta = TensorMeta::new(
        format!("{}_scores", activations.layer()),
        TensorTag::Scores,
        k_total,
        m_total,
    )
    .with_layer(activations.layer());
    meta.extra.insert(
        "similarity".into(),
        serde_json::Value::String(cfg.similarity.kind.as_str().into()),
    );
    let degenerate: Vec<usize> = (0..k_total).filter(|&k| scorer.degenerate()[k]).collect();
    meta.extra
        .insert("degenerate".into(), serde_json::json!(degenerate));
    let json = serde_json::to_vec_pretty(&meta).expect("metadata serializes");
    write_atomic(&meta_path(base), &json)
}
