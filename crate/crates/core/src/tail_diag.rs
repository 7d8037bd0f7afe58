//! Hill tail-index estimation, Hill plots of FPC scores and the empirical
//! tail-comparability statistic `Q_nm`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fpca::fpca;
use crate::func_core::CurveSample;

/// Hill estimate from the `k` largest absolute values.
///
/// `α̂ = [k⁻¹ Σ_{i≤k} log(|X|_(i) / |X|_(k+1))]⁻¹` with `|X|_(1) ≥ |X|_(2) ≥ …`.
/// Only strictly positive absolute values take part.
pub fn hill_estimator(data: &[f64], k: usize) -> Result<f64> {
    let mut abs = data.iter().map(|x| x.abs()).filter(|x| *x > 0.0).collect::<Vec<_>>();
    if abs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("data must be finite".into()));
    }
    if k == 0 || k >= data.len() {
        return Err(Error::Domain(format!("k = {k} outside 1..{}", data.len())));
    }
    if abs.len() < k + 1 {
        return Err(Error::Undefined(format!(
            "k = {k} needs {} positive values, found {}",
            k + 1,
            abs.len()
        )));
    }
    // top k+1 in descending order
    abs.select_nth_unstable_by(k, |a, b| b.total_cmp(a));
    abs.truncate(k + 1);
    abs.sort_unstable_by(|a, b| b.total_cmp(a));
    hill_from_sorted(&abs, k)
}

/// `sorted` holds at least `k + 1` positive values in descending order.
fn hill_from_sorted(sorted: &[f64], k: usize) -> Result<f64> {
    let threshold = sorted[k];
    let sum: f64 = sorted[..k].iter().map(|x| (x / threshold).ln()).sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::Undefined(format!("log-spacings sum to {sum} at k = {k}")));
    }
    Ok(k as f64 / sum)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HillCurve {
    pub n: usize,
    pub k_values: Vec<usize>,
    /// `None` where the estimate is undefined at that `k`.
    pub alpha_hat: Vec<Option<f64>>,
}

impl HillCurve {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.k_values
            .iter()
            .position(|kk| *kk == k)
            .and_then(|i| self.alpha_hat[i])
    }

    pub fn valid_values(&self) -> Vec<f64> {
        self.alpha_hat.iter().flatten().copied().collect()
    }

    pub fn median(&self) -> Option<f64> {
        let mut v = self.valid_values();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 {
            v[m]
        } else {
            0.5 * (v[m - 1] + v[m])
        })
    }
}

/// Hill estimates over a grid of `k`; entries that fail are marked `None`.
pub fn hill_plot(data: &[f64], k_grid: &[usize]) -> HillCurve {
    let n = data.len();
    let mut sorted = data
        .iter()
        .map(|x| x.abs())
        .filter(|x| *x > 0.0 && x.is_finite())
        .collect::<Vec<_>>();
    let all_finite = data.iter().all(|x| x.is_finite());
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let alpha_hat = k_grid
        .iter()
        .map(|&k| {
            if !all_finite || k == 0 || k >= n || sorted.len() < k + 1 {
                None
            } else {
                hill_from_sorted(&sorted, k).ok()
            }
        })
        .collect();
    HillCurve {
        n,
        k_values: k_grid.to_vec(),
        alpha_hat,
    }
}

/// About 20 log-spaced values of `k` from `n/200` to `n/20` (at least 10).
pub fn default_k_grid(n: usize) -> Vec<usize> {
    let lo = (n / 200).max(10) as f64;
    let hi = ((n / 20).max(20) as f64).min(n.saturating_sub(2) as f64).max(lo);
    let steps = 20;
    let mut out = (0..steps)
        .map(|i| (lo * (hi / lo).powf(i as f64 / (steps - 1) as f64)).round() as usize)
        .collect::<Vec<_>>();
    out.dedup();
    out
}

/// Longest run of consecutive valid entries whose spread `max − min` is at
/// most `tolerance · min`. Heuristic, not part of the Hill methodology.
pub fn longest_stable_window(curve: &HillCurve, tolerance: f64) -> Option<(usize, usize)> {
    let v = &curve.alpha_hat;
    let mut best: Option<(usize, usize)> = None;
    for start in 0..v.len() {
        let Some(first) = v[start] else { continue };
        let (mut lo, mut hi) = (first, first);
        let mut end = start;
        for (i, entry) in v.iter().enumerate().skip(start + 1) {
            let Some(a) = *entry else { break };
            let (nlo, nhi) = (lo.min(a), hi.max(a));
            if nhi - nlo > tolerance * nlo {
                break;
            }
            lo = nlo;
            hi = nhi;
            end = i;
        }
        if best.is_none_or(|(s, e)| end - start > e - s) {
            best = Some((start, end));
        }
    }
    best
}

/// Plateau: a stable window (10% spread) covering at least half the k-grid.
pub fn detect_plateau(curve: &HillCurve) -> Option<(usize, usize)> {
    let len = curve.k_values.len();
    longest_stable_window(curve, 0.10).filter(|(s, e)| e - s + 1 >= 3 && 2 * (e - s + 1) >= len)
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelTail {
    /// 1-based FPC level.
    pub level: usize,
    pub curve: HillCurve,
    /// Indices into the k-grid bounding the detected plateau.
    pub plateau: Option<(usize, usize)>,
    pub median_alpha: Option<f64>,
    /// Whether the median estimate lies strictly between 2 and 4.
    pub in_two_four: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreTailReport {
    pub n: usize,
    pub levels: Vec<LevelTail>,
}

impl ScoreTailReport {
    pub fn all_heavy(&self) -> bool {
        !self.levels.is_empty() && self.levels.iter().all(|l| l.plateau.is_some() && l.in_two_four)
    }
}

/// FPCA followed by a Hill plot of each score column `1..=levels`.
pub fn score_tail_report(
    sample: &CurveSample,
    levels: usize,
    k_grid: &[usize],
    subtract_mean: bool,
) -> Result<ScoreTailReport> {
    if levels == 0 {
        return Ok(ScoreTailReport {
            n: sample.len(),
            levels: Vec::new(),
        });
    }
    let res = fpca(sample, levels, subtract_mean)?;
    let levels = (0..levels)
        .map(|j| {
            let col = res.scores.column(j).iter().copied().collect::<Vec<_>>();
            let curve = hill_plot(&col, k_grid);
            let plateau = detect_plateau(&curve);
            let median_alpha = curve.median();
            LevelTail {
                level: j + 1,
                plateau,
                in_two_four: median_alpha.is_some_and(|a| a > 2.0 && a < 4.0),
                median_alpha,
                curve,
            }
        })
        .collect();
    Ok(ScoreTailReport {
        n: sample.len(),
        levels,
    })
}

/// Empirical `Q_nm`: the fraction
/// `#{(Σ_{j≥n} ξ_j²)(Σ_{j≥m} ξ_j²) > u²} / #{(Σ_j ξ_j²)² > u²}`
/// with `u` the empirical `(1−q)` quantile of `Σ_j ξ_j²`. Levels are 1-based.
pub fn q_nm_statistic(scores: &DMatrix<f64>, n: usize, m: usize, q: f64) -> Result<f64> {
    let (rows, j) = scores.shape();
    if rows == 0 {
        return Err(Error::EmptySample);
    }
    if n < 1 || m < 1 || n > j || m > j {
        return Err(Error::Domain(format!("levels ({n}, {m}) outside 1..={j}")));
    }
    if !(q > 0.0 && q < 0.5) {
        return Err(Error::Domain(format!("q must lie in (0, 1/2), got {q}")));
    }
    // forward-order suffix sums keep tail(1) == total and tails monotone in the level
    let tail = |i: usize, from: usize| -> f64 { (from - 1..j).map(|c| scores[(i, c)] * scores[(i, c)]).sum() };
    let totals = (0..rows).map(|i| tail(i, 1)).collect::<Vec<_>>();
    let mut sorted = totals.clone();
    sorted.sort_by(f64::total_cmp);
    let idx = (((1.0 - q) * rows as f64).ceil() as usize).clamp(1, rows) - 1;
    let u = sorted[idx];
    let u2 = u * u;
    let denom = totals.iter().filter(|s| *s * *s > u2).count();
    if denom == 0 {
        return Err(Error::Undefined("no observations above the tail threshold".into()));
    }
    let numer = (0..rows)
        .filter(|&i| {
            let a = if n == 1 { totals[i] } else { tail(i, n) };
            let b = if m == 1 { totals[i] } else { tail(i, m) };
            a * b > u2
        })
        .count();
    Ok(numer as f64 / denom as f64)
}
