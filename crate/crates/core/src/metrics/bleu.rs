use std::collections::HashMap;

use super::MetricError;

/// Stand-in count for n-gram orders with no matches.
pub const SMOOTHING_EPSILON: f64 = 1e-9;
const MAX_N: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 with one reference per hypothesis: clipped n-gram
/// precisions for n = 1..4 pooled over the corpus, uniform weights, brevity
/// penalty `exp(1 - r/c)` when the hypotheses are shorter than the
/// references, and zero match counts replaced by [`SMOOTHING_EPSILON`].
pub fn bleu4(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<f64, MetricError> {
    if hypotheses.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if hypotheses.len() != references.len() {
        return Err(MetricError::Alignment {
            expected: references.len(),
            got: hypotheses.len(),
        });
    }
    let mut matches = [0usize; MAX_N];
    let mut totals = [0usize; MAX_N];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, reference) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=MAX_N {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            for (gram, count) in &h {
                matches[n - 1] += (*count).min(r.get(gram).copied().unwrap_or(0));
                totals[n - 1] += count;
            }
        }
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_N {
        let m = if matches[n] > 0 { matches[n] as f64 } else { SMOOTHING_EPSILON };
        let t = if totals[n] > 0 { totals[n] as f64 } else { 1.0 };
        log_sum += (m / t).ln();
    }
    let precision = (log_sum / MAX_N as f64).exp();
    let bp = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok((bp * precision).clamp(0.0, 1.0))
}
