//! Pearson, Spearman and Kendall (τ-b) correlation.

use crate::error::{Result, SfdError};

fn check(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(SfdError::Shape(format!("correlation inputs differ in length: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(SfdError::UndefinedCorrelation("fewer than two samples".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(SfdError::NonFinite {
            term: "correlation input".into(),
        });
    }
    Ok(())
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(SfdError::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    pearson(x, y)
}

/// 1-based ranks, ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean(i+1..=j+1)
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Pair counts behind τ-b: total pairs, pairs tied in x, tied in y, tied in
/// both, and `concordant - discordant`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KendallCounts {
    pub pairs: u64,
    pub ties_x: u64,
    pub ties_y: u64,
    pub ties_xy: u64,
    pub score: i64,
}

impl KendallCounts {
    pub fn tau_b(&self) -> Result<f64> {
        let dx = self.pairs - self.ties_x;
        let dy = self.pairs - self.ties_y;
        if dx == 0 || dy == 0 {
            return Err(SfdError::UndefinedCorrelation("all values tied".into()));
        }
        Ok((self.score as f64 / ((dx as f64).sqrt() * (dy as f64).sqrt())).clamp(-1.0, 1.0))
    }
}

fn tied_pairs(sorted: impl Iterator<Item = f64>) -> u64 {
    let mut total = 0;
    let mut run = 0u64;
    let mut prev: Option<f64> = None;
    for v in sorted {
        if prev == Some(v) {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
        }
        prev = Some(v);
    }
    total + run * (run + 1) / 2
}

/// Merge sort returning the number of inversions (strictly greater before lesser).
fn sort_counting_swaps(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_counting_swaps(&mut v[..mid], buf) + sort_counting_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Knight's O(n log n) pair counting.
pub fn kendall_counts(x: &[f64], y: &[f64]) -> KendallCounts {
    let n = x.len() as u64;
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let ties_x = tied_pairs(idx.iter().map(|&i| x[i]));
    let mut ties_xy = 0;
    let mut run = 0u64;
    for w in idx.windows(2) {
        if x[w[0]] == x[w[1]] && y[w[0]] == y[w[1]] {
            run += 1;
        } else {
            ties_xy += run * (run + 1) / 2;
            run = 0;
        }
    }
    ties_xy += run * (run + 1) / 2;
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let swaps = sort_counting_swaps(&mut ys, &mut buf);
    let ties_y = tied_pairs(ys.iter().copied());
    let pairs = n * (n - 1) / 2;
    // concordant - discordant = pairs - ties_x - ties_y + ties_xy - 2 * discordant
    let score = pairs as i64 - ties_x as i64 - ties_y as i64 + ties_xy as i64 - 2 * swaps as i64;
    KendallCounts {
        pairs,
        ties_x,
        ties_y,
        ties_xy,
        score,
    }
}

pub fn krcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    kendall_counts(x, y).tau_b()
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct CorrelationReport {
    pub n: usize,
    pub plcc: f64,
    pub srcc: f64,
    pub krcc: f64,
}

pub fn correlate(x: &[f64], y: &[f64]) -> Result<CorrelationReport> {
    Ok(CorrelationReport {
        n: x.len(),
        plcc: plcc(x, y)?,
        srcc: srcc(x, y)?,
        krcc: krcc(x, y)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_reversed() {
        let x = [1.0, 2.0, 3.0];
        for (y, expected) in [([2.0, 4.0, 6.0], 1.0), ([6.0, 4.0, 2.0], -1.0)] {
            assert!((plcc(&x, &y).unwrap() - expected).abs() < 1e-12);
            assert!((srcc(&x, &y).unwrap() - expected).abs() < 1e-12);
            assert_eq!(krcc(&x, &y).unwrap(), expected);
        }
    }

    #[test]
    fn small_rank_example() {
        let (x, y) = ([1.0, 2.0, 3.0, 4.0], [1.0, 3.0, 2.0, 4.0]);
        assert!((srcc(&x, &y).unwrap() - 0.8).abs() < 1e-12);
        assert!((krcc(&x, &y).unwrap() - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn undefined_inputs() {
        assert!(matches!(plcc(&[1.0, 1.0], &[1.0, 2.0]), Err(SfdError::UndefinedCorrelation(_))));
        assert!(matches!(krcc(&[1.0, 2.0], &[5.0, 5.0]), Err(SfdError::UndefinedCorrelation(_))));
        assert!(matches!(srcc(&[1.0], &[1.0]), Err(SfdError::UndefinedCorrelation(_))));
        assert!(matches!(srcc(&[1.0, 2.0], &[1.0]), Err(SfdError::Shape(_))));
    }
}
