use rand::Rng;

use super::{DecodeConfig, DecodeMode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InvalidDistribution {
    #[error("empty distribution")]
    Empty,
    #[error("probability {0} is negative or not finite")]
    BadProbability(f64),
    #[error("probabilities sum to {0}, not 1")]
    BadSum(f64),
    #[error("top-p mass {0} outside (0, 1]")]
    BadMass(f64),
}

const SUM_TOLERANCE: f64 = 1e-9;
// Absorbs rounding in the running sum so that e.g. 0.5 + 0.4 reaches p = 0.9.
const MASS_SLACK: f64 = 1e-12;

/// Keeps the smallest probability-descending prefix whose mass reaches `p`,
/// then renormalizes. Ties keep input order; survivors are returned in input
/// order. With `p = 1` the input is returned unchanged.
pub fn nucleus_filter<T: Clone>(
    dist: &[(T, f64)],
    p: f64,
) -> Result<Vec<(T, f64)>, InvalidDistribution> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(InvalidDistribution::BadMass(p));
    }
    if dist.is_empty() {
        return Err(InvalidDistribution::Empty);
    }
    if let Some(&(_, bad)) = dist.iter().find(|(_, q)| !q.is_finite() || *q < 0.0) {
        return Err(InvalidDistribution::BadProbability(bad));
    }
    let total: f64 = dist.iter().map(|(_, q)| q).sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(InvalidDistribution::BadSum(total));
    }
    if p == 1.0 {
        return Ok(dist.to_vec());
    }
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].1.total_cmp(&dist[a].1));
    let mut keep = vec![false; dist.len()];
    let mut mass = 0.0;
    for &i in &order {
        keep[i] = true;
        mass += dist[i].1;
        if mass >= p - MASS_SLACK {
            break;
        }
    }
    Ok(dist
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|((item, q), _)| (item.clone(), q / mass))
        .collect())
}

/// Chooses an index from nonnegative weights: the first maximum when greedy,
/// a nucleus sample otherwise. Returns `None` when all weights are zero.
pub fn pick<R: Rng>(weights: &[f64], decode: &DecodeConfig, rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || !(total > 0.0) {
        return None;
    }
    if decode.mode == DecodeMode::Greedy {
        let mut best = 0;
        for (i, w) in weights.iter().enumerate() {
            if *w > weights[best] {
                best = i;
            }
        }
        return Some(best);
    }
    let dist: Vec<(usize, f64)> = weights.iter().map(|w| w / total).enumerate().collect();
    // Rescale so the sum check never trips on accumulated rounding.
    let sum: f64 = dist.iter().map(|(_, q)| q).sum();
    let dist: Vec<(usize, f64)> = dist.into_iter().map(|(i, q)| (i, q / sum)).collect();
    let kept = match nucleus_filter(&dist, decode.p) {
        Ok(kept) => kept,
        Err(_) => dist,
    };
    let mut u: f64 = rng.random::<f64>();
    for (i, q) in &kept {
        if u < *q {
            return Some(*i);
        }
        u -= q;
    }
    kept.last().map(|(i, _)| *i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_smallest_prefix() {
        let dist = [("a", 0.5), ("b", 0.3), ("c", 0.15), ("d", 0.05)];
        let kept = nucleus_filter(&dist, 0.9).unwrap();
        let names: Vec<&str> = kept.iter().map(|(n, _)| *n).collect();
        assert_eq!(names, ["a", "b", "c"]);
        for ((_, q), want) in kept.iter().zip([0.5 / 0.95, 0.3 / 0.95, 0.15 / 0.95]) {
            assert!((q - want).abs() < 1e-12);
        }
        let uniform = [(0, 0.25), (1, 0.25), (2, 0.25), (3, 0.25)];
        assert_eq!(nucleus_filter(&uniform, 0.9).unwrap().len(), 4);
        assert_eq!(nucleus_filter(&dist, 1.0).unwrap(), dist.to_vec());
    }

    #[test]
    fn ties_break_by_input_order() {
        let dist = [("x", 0.1), ("y", 0.45), ("z", 0.45)];
        let kept = nucleus_filter(&dist, 0.4).unwrap();
        assert_eq!(kept, vec![("y", 1.0)]);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(nucleus_filter::<u8>(&[], 0.5), Err(InvalidDistribution::Empty));
        assert!(matches!(nucleus_filter(&[(0, 0.5)], 0.5), Err(InvalidDistribution::BadSum(_))));
        assert!(matches!(
            nucleus_filter(&[(0, -0.5), (1, 1.5)], 0.5),
            Err(InvalidDistribution::BadProbability(_))
        ));
        assert!(matches!(nucleus_filter(&[(0, 1.0)], 0.0), Err(InvalidDistribution::BadMass(_))));
    }

    #[test]
    fn greedy_pick_is_first_max() {
        let mut rng = crate::seed::rng(&[1]);
        let d = DecodeConfig::greedy(0);
        assert_eq!(pick(&[1.0, 3.0, 3.0], &d, &mut rng), Some(1));
        assert_eq!(pick(&[0.0, 0.0], &d, &mut rng), None);
        let n = DecodeConfig::nucleus(0.5, 0);
        for _ in 0..20 {
            assert_eq!(pick(&[1.0, 9.0], &n, &mut rng), Some(1));
        }
    }
}
