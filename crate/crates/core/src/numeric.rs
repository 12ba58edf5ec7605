//! Small numerically careful helpers shared across modules.

use std::cmp::Ordering;

/// Stable `log(sum(exp(values)))`. Empty input gives `-inf`.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        return None;
    }
    Some((dot(a, b) / denom).clamp(-1.0, 1.0))
}

/// Descending order by value, lower index first on ties.
pub(crate) fn desc_then_index(values: &[f32]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b))
}

/// Indices of the `n` largest entries, largest first, ties to the lower index.
pub fn top_indices(values: &[f32], n: usize) -> Vec<usize> {
    let n = n.min(values.len());
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let cmp = desc_then_index(values);
    if n < idx.len() && n > 0 {
        idx.select_nth_unstable_by(n - 1, &cmp);
        idx.truncate(n);
    } else {
        idx.truncate(n);
    }
    idx.sort_unstable_by(&cmp);
    idx
}

/// Ordering for (score, index) candidates: higher score first, lower index on ties.
pub(crate) fn score_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}
