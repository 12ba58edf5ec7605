use std::collections::BTreeMap;

use log::info;
use ndarray::Array2;
use neurolens::analysis::{
    compose_candidates, compose_score, curve_csv, topk_similarity_curve,
    weight_concept_correlation, Correlation, PendingCandidate,
};
use neurolens::evaluation::{evaluate, EncoderPair, GroundTruth};
use neurolens::tensorio::{
    read_concepts, read_jsonl, read_tagged, read_tensor, write_atomic, write_json, write_jsonl,
};
use neurolens::{
    dissect_layer, stream_score_matrix, ActivationMatrix, NeuronLabel, TensorFile, TensorTag,
};
use serde::Serialize;

use crate::args::{CandidatesArgs, ComposeScoreArgs, CorrelateArgs, DissectArgs, EvalArgs};
use crate::config::resolve_scoring;
use crate::error::{CliError, CliResult};
use crate::manifest::{sibling, RunManifest};

fn check_same_encoder(a: &TensorFile, b: &TensorFile) -> CliResult<()> {
    if let (Some(x), Some(y)) = (&a.meta.encoder, &b.meta.encoder) {
        if x != y {
            return Err(CliError::Invalid(format!(
                "{} was embedded with {x} but {} with {y}",
                a.meta.name, b.meta.name
            )));
        }
    }
    Ok(())
}

/// Probe-set and vocabulary sizes must agree across the inputs; the message
/// names the flags involved.
fn check_shapes(
    args: &DissectArgs,
    acts: &ActivationMatrix,
    image: &TensorFile,
    text: &TensorFile,
    concepts: usize,
) -> CliResult<()> {
    if image.data.nrows() != acts.images() {
        return Err(CliError::Invalid(format!(
            "--image-emb {} has {} rows but --activations {} covers {} images",
            args.image_emb.display(),
            image.data.nrows(),
            args.activations.display(),
            acts.images()
        )));
    }
    if text.data.nrows() != concepts {
        return Err(CliError::Invalid(format!(
            "--text-emb {} has {} rows but --concepts {} lists {} concepts",
            args.text_emb.display(),
            text.data.nrows(),
            args.concepts.display(),
            concepts
        )));
    }
    if image.data.ncols() != text.data.ncols() {
        return Err(CliError::Invalid(format!(
            "--image-emb has width {} but --text-emb has width {}",
            image.data.ncols(),
            text.data.ncols()
        )));
    }
    Ok(())
}

pub fn cmd_dissect(args: &DissectArgs) -> CliResult<()> {
    let cfg = resolve_scoring(&args.scoring)?;
    let mut manifest = RunManifest::new("dissect");
    manifest.config(&cfg);
    let (acts, image, text, concepts) = manifest.time("load", || {
        let acts =
            ActivationMatrix::from_tensor(read_tagged(&args.activations, TensorTag::Activations)?)?;
        let image = read_tagged(&args.image_emb, TensorTag::ImageEmbeddings)?;
        let text = read_tagged(&args.text_emb, TensorTag::TextEmbeddings)?;
        check_same_encoder(&image, &text)?;
        let concepts = read_concepts(&args.concepts)?;
        check_shapes(args, &acts, &image, &text, concepts.len())?;
        Ok((acts, image, text, concepts))
    })?;
    manifest.tensor_input(&args.activations)?;
    manifest.tensor_input(&args.image_emb)?;
    manifest.tensor_input(&args.text_emb)?;
    manifest.input(&args.concepts)?;
    info!(
        "scoring {} neurons of {} against {} concepts over {} images with {}",
        acts.neurons(),
        acts.layer(),
        concepts.len(),
        acts.images(),
        cfg.similarity.kind
    );
    let labels = manifest.time("score", || {
        Ok(dissect_layer(
            &acts,
            image.data.view(),
            text.data.view(),
            &concepts,
            &cfg,
        )?)
    })?;
    if let Some(base) = &args.scores {
        manifest.time("score_matrix", || {
            Ok(stream_score_matrix(
                &acts,
                image.data.view(),
                text.data.view(),
                &concepts,
                &cfg,
                base,
            )?)
        })?;
        manifest.output(base);
    }
    manifest.time("write", || Ok(write_jsonl(&args.out, &labels)?))?;
    manifest.output(&args.out);
    let degenerate = labels.iter().filter(|l| l.degenerate).count();
    info!("labeled {} neurons ({degenerate} degenerate)", labels.len());
    manifest.write_next_to(&args.out)?;
    Ok(())
}

fn pair(p: &Option<(TensorFile, TensorFile)>) -> Option<EncoderPair<'_>> {
    p.as_ref().map(|(d, g)| EncoderPair {
        descriptions: d,
        ground_truth: g,
    })
}

fn read_pair(
    desc: &Option<std::path::PathBuf>,
    gt: &Option<std::path::PathBuf>,
) -> CliResult<Option<(TensorFile, TensorFile)>> {
    match (desc, gt) {
        (Some(d), Some(g)) => Ok(Some((read_tensor(d)?, read_tensor(g)?))),
        (None, None) => Ok(None),
        _ => Err(CliError::Invalid(
            "description and ground-truth embeddings must be given together".into(),
        )),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new("eval");
    let labels: Vec<NeuronLabel> = read_jsonl(&args.labels)?;
    let gt = GroundTruth::read(&args.gt_classes)?;
    let clip = read_pair(&args.desc_emb, &args.gt_emb)?;
    let mpnet = read_pair(&args.mpnet_desc_emb, &args.mpnet_gt_emb)?;
    let concepts = args.concepts.as_deref().map(read_concepts).transpose()?;
    manifest.input(&args.labels)?;
    manifest.input(&args.gt_classes)?;
    for base in [
        &args.desc_emb,
        &args.gt_emb,
        &args.mpnet_desc_emb,
        &args.mpnet_gt_emb,
    ]
    .into_iter()
    .flatten()
    {
        manifest.tensor_input(base)?;
    }
    if let Some(path) = &args.concepts {
        manifest.input(path)?;
    }
    let report = manifest.time("evaluate", || {
        Ok(evaluate(
            &labels,
            &gt,
            pair(&clip),
            pair(&mpnet),
            concepts.as_ref(),
        )?)
    })?;
    let per_neuron = args
        .per_neuron
        .clone()
        .unwrap_or_else(|| sibling(&args.out, "neurons.jsonl"));
    write_json(&args.out, &report)?;
    write_jsonl(&per_neuron, &report.per_neuron)?;
    manifest.output(&args.out);
    manifest.output(&per_neuron);
    info!(
        "clip cos {:?}, mpnet cos {:?}, top-1 {:?} over {} neurons",
        report.clip_cos, report.mpnet_cos, report.top1_accuracy, report.neurons
    );
    manifest.write_next_to(&args.out)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct CorrelationEntry {
    /// Null when the correlation is undefined, e.g. every similarity is equal.
    r: Option<f64>,
    samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Debug, Serialize)]
struct CorrelationReport {
    all: CorrelationEntry,
    top: Option<CorrelationEntry>,
}

/// Undefined correlations are reported rather than failing the command; shape
/// and I/O problems still propagate.
fn correlation_entry(
    result: neurolens::Result<Correlation>,
    samples: usize,
) -> CliResult<CorrelationEntry> {
    match result {
        Ok(c) => Ok(CorrelationEntry {
            r: Some(c.r),
            samples: c.samples,
            note: None,
        }),
        Err(neurolens::Error::InvalidParameter(msg)) => Ok(CorrelationEntry {
            r: None,
            samples,
            note: Some(msg),
        }),
        Err(e) => Err(e.into()),
    }
}

/// 1, 10, 100, ... up to `total`, plus `total` itself.
fn default_k_values(total: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = std::iter::successors(Some(1usize), |k| k.checked_mul(10))
        .take_while(|&k| k < total)
        .collect();
    ks.push(total);
    ks
}

pub fn cmd_correlate(args: &CorrelateArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new("correlate");
    let weights = read_tagged(&args.weights, TensorTag::Weights)?;
    let neurons = read_tensor(&args.neuron_emb)?;
    let classes = read_tensor(&args.class_emb)?;
    check_same_encoder(&neurons, &classes)?;
    for base in [&args.weights, &args.neuron_emb, &args.class_emb] {
        manifest.tensor_input(base)?;
    }
    let ks = args
        .k_values
        .clone()
        .unwrap_or_else(|| default_k_values(weights.data.len()));
    let (w, ne, ce) = (
        weights.data.view(),
        neurons.data.view(),
        classes.data.view(),
    );
    let curve = manifest.time("curve", || Ok(topk_similarity_curve(w, ne, ce, &ks)?))?;
    let report = manifest.time("correlation", || {
        let total = w.len();
        Ok(CorrelationReport {
            all: correlation_entry(weight_concept_correlation(w, ne, ce, None), total)?,
            top: args
                .top_n
                .map(|n| {
                    correlation_entry(weight_concept_correlation(w, ne, ce, Some(n)), n.min(total))
                })
                .transpose()?,
        })
    })?;
    write_atomic(&args.out, curve_csv(&curve).as_bytes())?;
    let corr_path = args
        .correlation_out
        .clone()
        .unwrap_or_else(|| sibling(&args.out, "correlation.json"));
    write_json(&corr_path, &report)?;
    manifest.output(&args.out);
    manifest.output(&corr_path);
    match report.all.r {
        Some(r) => info!(
            "weight/concept correlation r = {r:.4} over {} weights",
            report.all.samples
        ),
        None => info!("weight/concept correlation undefined"),
    }
    manifest.write_next_to(&args.out)?;
    Ok(())
}

fn degenerate_rows(scores: &TensorFile) -> CliResult<Vec<usize>> {
    match scores.meta.extra.get("degenerate") {
        None => Ok(Vec::new()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| {
            CliError::Invalid(format!(
                "score metadata has a malformed degenerate list: {e}"
            ))
        }),
    }
}

pub fn cmd_compose_candidates(args: &CandidatesArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new("compose candidates");
    let scores = read_tagged(&args.scores, TensorTag::Scores)?;
    let concepts = read_concepts(&args.concepts)?;
    manifest.tensor_input(&args.scores)?;
    manifest.input(&args.concepts)?;
    if scores.data.ncols() != concepts.len() {
        return Err(CliError::Invalid(format!(
            "score matrix has {} columns but {} concepts",
            scores.data.ncols(),
            concepts.len()
        )));
    }
    let degenerate = degenerate_rows(&scores)?;
    let neurons: Vec<usize> = match &args.neurons {
        Some(list) => {
            if let Some(&bad) = list.iter().find(|&&k| k >= scores.data.nrows()) {
                return Err(CliError::Invalid(format!(
                    "neuron {bad} out of range for {} neurons",
                    scores.data.nrows()
                )));
            }
            if let Some(k) = list.iter().find(|k| degenerate.contains(k)) {
                return Err(CliError::Invalid(format!("neuron {k} is degenerate")));
            }
            list.clone()
        }
        None => (0..scores.data.nrows())
            .filter(|k| !degenerate.contains(k))
            .collect(),
    };
    let mut pending: Vec<PendingCandidate> = Vec::new();
    for &k in &neurons {
        let row: Vec<f64> = scores.data.row(k).iter().map(|&s| f64::from(s)).collect();
        pending.extend(
            compose_candidates(k, &row, &concepts, args.top_n)?
                .iter()
                .map(|c| c.pending()),
        );
    }
    write_jsonl(&args.out, &pending)?;
    manifest.output(&args.out);
    info!("{} candidates for {} neurons", pending.len(), neurons.len());
    manifest.write_next_to(&args.out)?;
    Ok(())
}

pub fn cmd_compose_score(args: &ComposeScoreArgs) -> CliResult<()> {
    let cfg = resolve_scoring(&args.scoring)?;
    let mut manifest = RunManifest::new("compose score");
    manifest.config(&cfg);
    let acts =
        ActivationMatrix::from_tensor(read_tagged(&args.activations, TensorTag::Activations)?)?;
    let image = read_tagged(&args.image_emb, TensorTag::ImageEmbeddings)?;
    let pending: Vec<PendingCandidate> = read_jsonl(&args.pending)?;
    let cand = read_tagged(&args.candidate_emb, TensorTag::TextEmbeddings)?;
    check_same_encoder(&image, &cand)?;
    let singles = match (&args.concepts, &args.text_emb) {
        (Some(c), Some(t)) => {
            let text = read_tagged(t, TensorTag::TextEmbeddings)?;
            check_same_encoder(&image, &text)?;
            Some((read_concepts(c)?, text))
        }
        _ => None,
    };
    manifest.tensor_input(&args.activations)?;
    manifest.tensor_input(&args.image_emb)?;
    manifest.input(&args.pending)?;
    manifest.tensor_input(&args.candidate_emb)?;
    if let (Some(c), Some(t)) = (&args.concepts, &args.text_emb) {
        manifest.input(c)?;
        manifest.tensor_input(t)?;
    }
    if cand.data.nrows() != pending.len() {
        return Err(CliError::Invalid(format!(
            "{} candidate embeddings for {} pending candidates",
            cand.data.nrows(),
            pending.len()
        )));
    }
    // Candidate rows per neuron, neurons in order of first appearance.
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut order = Vec::new();
    for (row, p) in pending.iter().enumerate() {
        groups
            .entry(p.neuron)
            .or_insert_with(|| {
                order.push(p.neuron);
                Vec::new()
            })
            .push(row);
    }
    let outcomes = manifest.time("score", || {
        let mut outcomes = Vec::with_capacity(order.len());
        for &neuron in &order {
            let rows = &groups[&neuron];
            let texts: Vec<String> = rows.iter().map(|&r| pending[r].text.clone()).collect();
            let emb = Array2::from_shape_fn((rows.len(), cand.data.ncols()), |(i, d)| {
                cand.data[[rows[i], d]]
            });
            let base = singles.as_ref().map(|(set, t)| (set, t.data.view()));
            outcomes.push(compose_score(
                &acts,
                neuron,
                image.data.view(),
                &texts,
                emb.view(),
                base,
                &cfg,
            )?);
        }
        Ok(outcomes)
    })?;
    write_jsonl(&args.out, &outcomes)?;
    manifest.output(&args.out);
    info!("scored compositions for {} neurons", outcomes.len());
    manifest.write_next_to(&args.out)?;
    Ok(())
}
