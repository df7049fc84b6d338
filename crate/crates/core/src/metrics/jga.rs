use crate::dialogue::{calls_equal, parse_call, ApiCall, Episode};

use super::MetricError;

/// Gold call of every Assistant round (rounds where the Assistant spoke), in
/// episode order. `None` marks a round without a call.
pub fn gold_round_calls(gold: &[Episode]) -> Vec<Option<ApiCall>> {
    gold.iter()
        .flat_map(|ep| {
            ep.rounds()
                .into_iter()
                .filter(|r| r.is_complete())
                .map(|r| r.call.and_then(|c| parse_call(c).ok()))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// `(correct, scored)` round counts. A round scores 1 when gold and
/// hypothesis are both silent, or when both calls are equal. With
/// `calls_only` rounds without a gold call are not scored.
pub fn jga_counts(
    gold: &[Option<ApiCall>],
    hyp: &[Option<ApiCall>],
    calls_only: bool,
) -> Result<(usize, usize), MetricError> {
    if gold.len() != hyp.len() {
        return Err(MetricError::Alignment {
            expected: gold.len(),
            got: hyp.len(),
        });
    }
    let mut correct = 0;
    let mut scored = 0;
    for (g, h) in gold.iter().zip(hyp) {
        if calls_only && g.is_none() {
            continue;
        }
        scored += 1;
        let hit = match (g, h) {
            (None, None) => true,
            (Some(g), Some(h)) => calls_equal(g, h),
            _ => false,
        };
        correct += usize::from(hit);
    }
    Ok((correct, scored))
}

/// Joint goal accuracy over Assistant rounds of `gold`, with one hypothesis
/// per round.
pub fn joint_goal_accuracy(
    gold: &[Episode],
    hyp: &[Option<ApiCall>],
    calls_only: bool,
) -> Result<f64, MetricError> {
    let (correct, scored) = jga_counts(&gold_round_calls(gold), hyp, calls_only)?;
    if scored == 0 {
        return Err(MetricError::EmptyInput);
    }
    Ok(correct as f64 / scored as f64)
}
