use serde::{Deserialize, Serialize};

pub const ALPHA: f64 = 0.05;
/// Above this many trials the tail is summed in log space.
const LOG_SPACE_ABOVE: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("invalid binomial counts k={k}, n={n}")]
pub struct InvalidCounts {
    pub k: u64,
    pub n: u64,
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Two-sided exact binomial test against p = 0.5:
/// `min(1, 2 * sum_{i >= max(k, n-k)} C(n, i) / 2^n)`.
pub fn binomial_p(k: u64, n: u64) -> Result<f64, InvalidCounts> {
    if n == 0 || k > n {
        return Err(InvalidCounts { k, n });
    }
    let m = k.max(n - k);
    let tail = if n <= LOG_SPACE_ABOVE {
        // C(n, n) / 2^n is exact; walk down to m.
        let mut term = 0.5f64.powi(n as i32);
        let mut terms = vec![term];
        for i in (m + 1..=n).rev() {
            term *= i as f64 / (n - i + 1) as f64;
            terms.push(term);
        }
        compensated_sum(terms.into_iter().rev())
    } else {
        // ln(C(n, m) / 2^n), then the tail relative to its largest term.
        let ln_choose = compensated_sum((1..=n - m).map(|j| ((m + j) as f64 / j as f64).ln()));
        let ln_head = ln_choose - n as f64 * std::f64::consts::LN_2;
        let mut ratio = 1.0f64;
        let mut ratios = vec![ratio];
        for i in m..n {
            ratio *= (n - i) as f64 / (i + 1) as f64;
            if ratio < 1e-300 {
                break;
            }
            ratios.push(ratio);
        }
        ln_head.exp() * compensated_sum(ratios.into_iter())
    };
    Ok((2.0 * tail).min(1.0))
}

/// Pairwise preferences between systems. `wins[i][j]` is the share of i-vs-j
/// comparisons that i won; `n[i][j]` their count. Cells without comparisons
/// and the diagonal are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinMatrix {
    pub systems: Vec<String>,
    pub wins: Vec<Vec<Option<f64>>>,
    pub n: Vec<Vec<u64>>,
    pub p_values: Vec<Vec<Option<f64>>>,
    pub significant: Vec<Vec<bool>>,
}

impl WinMatrix {
    /// Builds the matrix from `(winner, loser)` outcomes.
    pub fn from_outcomes<'a>(systems: &[String], outcomes: impl IntoIterator<Item = (&'a str, &'a str)>, alpha: f64) -> Self {
        let idx = |s: &str| systems.iter().position(|x| x == s);
        let size = systems.len();
        let mut won = vec![vec![0u64; size]; size];
        for (w, l) in outcomes {
            if let (Some(i), Some(j)) = (idx(w), idx(l)) {
                won[i][j] += 1;
            }
        }
        let mut m = WinMatrix {
            systems: systems.to_vec(),
            wins: vec![vec![None; size]; size],
            n: vec![vec![0; size]; size],
            p_values: vec![vec![None; size]; size],
            significant: vec![vec![false; size]; size],
        };
        for i in 0..size {
            for j in 0..size {
                let total = won[i][j] + won[j][i];
                m.n[i][j] = total;
                if i == j || total == 0 {
                    continue;
                }
                let p = binomial_p(won[i][j], total).expect("counts are consistent");
                m.wins[i][j] = Some(won[i][j] as f64 / total as f64);
                m.p_values[i][j] = Some(p);
                m.significant[i][j] = p < alpha;
            }
        }
        m
    }

    pub fn index(&self, system: &str) -> Option<usize> {
        self.systems.iter().position(|s| s == system)
    }
}
