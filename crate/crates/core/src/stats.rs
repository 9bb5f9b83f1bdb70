//! Rank-based statistics: tie-averaged ranking, Kruskal–Wallis with η²,
//! Dunn's pairwise test with Bonferroni correction, and Spearman's rho.

use std::cmp::Ordering;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::error::StatsError;

/// Values with their ascending, tie-averaged ranks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedSample {
    pub values: Vec<f64>,
    pub ranks: Vec<f64>,
    /// Sizes of tie groups with more than one member.
    pub tie_groups: Vec<usize>,
}

impl RankedSample {
    /// `Σ (t³ - t)` over tie groups.
    pub fn tie_sum(&self) -> f64 {
        self.tie_groups
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum()
    }
}

pub fn rank_with_ties(values: &[f64]) -> Result<RankedSample, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(StatsError::NaN(i));
    }
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; n];
    let mut tie_groups = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        if j - i > 1 {
            tie_groups.push(j - i);
        }
        i = j;
    }
    Ok(RankedSample {
        values: values.to_vec(),
        ranks,
        tie_groups,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KwResult {
    pub h: f64,
    pub df: usize,
    pub p: f64,
    pub eta_squared: f64,
    pub n: usize,
}

/// η² estimate `(H - k + 1) / (N - k)`.
pub fn eta_squared(h: f64, k: usize, n: usize) -> f64 {
    (h - k as f64 + 1.0) / (n as f64 - k as f64)
}

fn pool(groups: &[Vec<f64>]) -> Result<(RankedSample, Vec<usize>), StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups {
            needed: 2,
            got: groups.len(),
        });
    }
    if let Some(i) = groups.iter().position(|g| g.is_empty()) {
        return Err(StatsError::EmptyGroup(i));
    }
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let sizes = groups.iter().map(Vec::len).collect();
    Ok((rank_with_ties(&all)?, sizes))
}

fn group_rank_sums(ranked: &RankedSample, sizes: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &n in sizes {
        out.push(ranked.ranks[start..start + n].iter().sum());
        start += n;
    }
    out
}

/// Tie-corrected Kruskal–Wallis H.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KwResult, StatsError> {
    let (ranked, sizes) = pool(groups)?;
    let n = ranked.values.len();
    let k = groups.len();
    let nf = n as f64;
    let sums = group_rank_sums(&ranked, &sizes);
    let s: f64 = sums.iter().zip(&sizes).map(|(r, &ni)| r * r / ni as f64).sum();
    let h_raw = 12.0 / (nf * (nf + 1.0)) * s - 3.0 * (nf + 1.0);
    let correction = if n > 1 { 1.0 - ranked.tie_sum() / (nf * nf * nf - nf) } else { 0.0 };
    let df = k - 1;
    if correction <= 0.0 {
        return Ok(KwResult {
            h: 0.0,
            df,
            p: 1.0,
            eta_squared: eta_squared(0.0, k, n),
            n,
        });
    }
    let h = (h_raw / correction).max(0.0);
    Ok(KwResult {
        h,
        df,
        p: chi_square_sf(h, df as f64),
        eta_squared: eta_squared(h, k, n),
        n,
    })
}

/// H without the tie correction; used to compare against the corrected value.
pub fn kruskal_wallis_uncorrected(groups: &[Vec<f64>]) -> Result<f64, StatsError> {
    let (ranked, sizes) = pool(groups)?;
    let nf = ranked.values.len() as f64;
    let sums = group_rank_sums(&ranked, &sizes);
    let s: f64 = sums.iter().zip(&sizes).map(|(r, &ni)| r * r / ni as f64).sum();
    Ok((12.0 / (nf * (nf + 1.0)) * s - 3.0 * (nf + 1.0)).max(0.0))
}

/// Symmetric matrices of Dunn z statistics and Bonferroni-adjusted
/// two-sided p-values (unit diagonal).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseResult {
    pub z: Vec<Vec<f64>>,
    pub p_raw: Vec<Vec<f64>>,
    pub p_adjusted: Vec<Vec<f64>>,
    pub comparisons: usize,
}

impl PairwiseResult {
    pub fn significant(&self, i: usize, j: usize, alpha: f64) -> bool {
        self.p_adjusted[i][j] < alpha
    }
}

/// Dunn's test on pooled, tie-corrected ranks, Bonferroni-adjusted over
/// `k(k-1)/2` comparisons.
pub fn pairwise_dunn(groups: &[Vec<f64>]) -> Result<PairwiseResult, StatsError> {
    let (ranked, sizes) = pool(groups)?;
    let k = groups.len();
    let nf = ranked.values.len() as f64;
    let sums = group_rank_sums(&ranked, &sizes);
    let means: Vec<f64> = sums.iter().zip(&sizes).map(|(s, &n)| s / n as f64).collect();
    let variance = nf * (nf + 1.0) / 12.0 - ranked.tie_sum() / (12.0 * (nf - 1.0));
    let m = k * (k - 1) / 2;
    let mut z = vec![vec![0.0; k]; k];
    let mut p_raw = vec![vec![1.0; k]; k];
    let mut p_adjusted = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let se = (variance * (1.0 / sizes[i] as f64 + 1.0 / sizes[j] as f64)).sqrt();
            let zij = if se > 0.0 { (means[i] - means[j]) / se } else { 0.0 };
            let p = (2.0 * normal_sf(zij.abs())).min(1.0);
            let adj = bonferroni(p, m);
            z[i][j] = zij;
            z[j][i] = -zij;
            p_raw[i][j] = p;
            p_raw[j][i] = p;
            p_adjusted[i][j] = adj;
            p_adjusted[j][i] = adj;
        }
    }
    Ok(PairwiseResult {
        z,
        p_raw,
        p_adjusted,
        comparisons: m,
    })
}

/// `min(1, m·p)`.
pub fn bonferroni(p: f64, comparisons: usize) -> f64 {
    (p * comparisons as f64).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p: f64,
    pub n: usize,
    /// `rho²`, read as the share of rank variance explained.
    pub rank_variance_explained: f64,
}

/// Share of rank variance explained by a rank correlation.
pub fn rank_variance_explained(rho: f64) -> f64 {
    rho * rho
}

/// Spearman's rho with a two-sided p-value from the t approximation on
/// `n - 2` degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewObservations { needed: 3, got: x.len() });
    }
    let rx = rank_with_ties(x)?;
    let ry = rank_with_ties(y)?;
    let rho = pearson(&rx.ranks, &ry.ranks)?;
    let n = x.len();
    let df = (n - 2) as f64;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        student_t_two_sided(rho * (df / (1.0 - rho * rho)).sqrt(), df)
    };
    Ok(SpearmanResult {
        rho,
        p,
        n,
        rank_variance_explained: rank_variance_explained(rho),
    })
}

/// Pearson correlation; errors when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(StatsError::Empty);
    }
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
    if sxx == 0.0 {
        return Err(StatsError::ConstantInput("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::ConstantInput("y"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Chi-square upper tail probability.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).expect("positive degrees of freedom").sf(x)
}

/// Standard normal upper tail.
pub fn normal_sf(z: f64) -> f64 {
    Normal::standard().sf(z)
}

/// Two-sided Student t p-value.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    (2.0 * StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom").sf(t.abs())).min(1.0)
}
