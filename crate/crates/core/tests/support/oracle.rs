//! Direct, loop-based reference implementations. Nothing here calls into the
//! library's numeric code.

use ndarray::ArrayView2;

pub fn rows(m: ArrayView2<'_, f32>) -> Vec<Vec<f64>> {
    m.outer_iter()
        .map(|r| r.iter().map(|&v| f64::from(v)).collect())
        .collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// `P[i][m] = <I_i, T_m>`, optionally on unit rows.
pub fn concept_activations(
    image: &[Vec<f64>],
    text: &[Vec<f64>],
    normalize: bool,
) -> Vec<Vec<f64>> {
    let (image, text): (Vec<Vec<f64>>, Vec<Vec<f64>>) = if normalize {
        (
            image.iter().map(|r| unit(r)).collect(),
            text.iter().map(|r| unit(r)).collect(),
        )
    } else {
        (image.to_vec(), text.to_vec())
    };
    let mut p = vec![vec![0.0; text.len()]; image.len()];
    for i in 0..image.len() {
        for m in 0..text.len() {
            let mut s = 0.0;
            for d in 0..image[i].len() {
                s += image[i][d] * text[m][d];
            }
            p[i][m] = s;
        }
    }
    p
}

/// Plain `exp / Σ exp` without any shifting.
pub fn softmax(p: &[Vec<f64>], temperature: f64) -> Vec<Vec<f64>> {
    p.iter()
        .map(|row| {
            let e: Vec<f64> = row.iter().map(|&v| (temperature * v).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Indices sorted by descending value with a stable sort, so ties keep the
/// lower index first.
pub fn descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    idx
}

pub fn top_set(q: &[f64], size: usize) -> Vec<usize> {
    descending(q)[..size].to_vec()
}

fn constant(q: &[f64]) -> bool {
    q.iter().all(|&v| v == q[0])
}

/// Raw `Π_{x∈B} p(t_m|x)`.
fn product(probs: &[Vec<f64>], m: usize, members: &[usize]) -> f64 {
    members.iter().map(|&i| probs[i][m]).product()
}

/// wpmi of neuron `k` against concept `m`; the context is every
/// non-constant neuron in `q`.
pub fn wpmi(q: &[Vec<f64>], k: usize, probs: &[Vec<f64>], m: usize, bk: usize, lambda: f64) -> f64 {
    let own = product(probs, m, &top_set(&q[k], bk));
    let context: Vec<f64> = q
        .iter()
        .filter(|row| !constant(row))
        .map(|row| product(probs, m, &top_set(row, bk)))
        .collect();
    let mean = context.iter().sum::<f64>() / context.len() as f64;
    own.ln() - lambda * mean.ln()
}

/// `(image, weight)` pairs from a rank schedule.
pub fn soft_members(q: &[f64], schedule: &[f64]) -> Vec<(usize, f64)> {
    let n = schedule.len().min(q.len());
    top_set(q, n)
        .into_iter()
        .zip(schedule.iter().copied())
        .collect()
}

/// `Π (1 + w (p - 1))` over the soft members.
fn expectation(probs: &[Vec<f64>], m: usize, members: &[(usize, f64)]) -> f64 {
    members
        .iter()
        .map(|&(i, w)| 1.0 + w * (probs[i][m] - 1.0))
        .product()
}

pub fn soft_wpmi(
    q: &[Vec<f64>],
    k: usize,
    probs: &[Vec<f64>],
    m: usize,
    schedule: &[f64],
    lambda: f64,
) -> f64 {
    let own = expectation(probs, m, &soft_members(&q[k], schedule));
    let context: Vec<f64> = q
        .iter()
        .filter(|row| !constant(row))
        .map(|row| expectation(probs, m, &soft_members(row, schedule)))
        .collect();
    let mean = context.iter().sum::<f64>() / context.len() as f64;
    own.ln() - lambda * mean.ln()
}

pub fn cos(q: &[f64], col: &[f64]) -> f64 {
    let dot: f64 = q.iter().zip(col).map(|(a, b)| a * b).sum();
    let nq = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nc = col.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (nq * nc)
}

/// Number of positions for a top fraction, computed on a decimal grid.
pub fn selection_size(n: usize, fraction: f64) -> usize {
    let exact = (fraction * n as f64 * 1e9).round() / 1e9;
    (exact.ceil() as usize).clamp(1, n)
}

/// Builds the reordered vector explicitly, then takes the restricted norm.
pub fn rank_reorder(q: &[f64], col: &[f64], fraction: f64, p: f64) -> f64 {
    let n = q.len();
    let sorted_q: Vec<f64> = descending(q).into_iter().map(|i| q[i]).collect();
    let mut reordered = vec![0.0; n];
    for (rank, pos) in descending(col).into_iter().enumerate() {
        reordered[pos] = sorted_q[rank];
    }
    let total: f64 = top_set(q, selection_size(n, fraction))
        .into_iter()
        .map(|i| (reordered[i] - q[i]).abs().powf(p))
        .sum();
    -total.powf(1.0 / p)
}

pub fn column(p: &[Vec<f64>], m: usize) -> Vec<f64> {
    p.iter().map(|r| r[m]).collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}
