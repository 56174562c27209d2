//! Paired significance testing and method ranking.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest number of non-zero differences for which the exact null
/// distribution is enumerated; larger samples use the normal approximation.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Mdta,
    Hd95,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Mdta, Metric::Hd95];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Mdta => "mdta",
            Metric::Hd95 => "hd95",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alternative {
    #[default]
    TwoSided,
    /// The candidate is better than the baseline.
    CandidateBetter,
}

/// What to do with pairs whose difference is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroHandling {
    /// Discard zero differences before ranking.
    #[default]
    Drop,
    /// Rank zeros with the rest, then discard their ranks (Pratt).
    Pratt,
}

/// Per-case paired values of one metric for a baseline and a candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub baseline: Vec<f64>,
    pub candidate: Vec<f64>,
    pub lower_is_better: bool,
}

impl PairedSample {
    pub fn new(baseline: Vec<f64>, candidate: Vec<f64>, lower_is_better: bool) -> Result<Self> {
        if baseline.len() != candidate.len() {
            return Err(Error::InvalidArgument(format!(
                "paired sample lengths differ: {} baseline vs {} candidate",
                baseline.len(),
                candidate.len()
            )));
        }
        if baseline.iter().chain(&candidate).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("paired sample holds non-finite values".into()));
        }
        Ok(Self { baseline, candidate, lower_is_better })
    }

    /// Differences oriented so that positive values favour the candidate.
    pub fn improvements(&self) -> Vec<f64> {
        self.baseline
            .iter()
            .zip(&self.candidate)
            .map(|(&b, &c)| if self.lower_is_better { b - c } else { c - b })
            .collect()
    }

    /// Whether the median paired improvement is strictly positive.
    pub fn candidate_improved(&self) -> bool {
        median(&self.improvements()).is_some_and(|m| m > 0.0)
    }

    /// Same pairs with baseline and candidate exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            baseline: self.candidate.clone(),
            candidate: self.baseline.clone(),
            lower_is_better: self.lower_is_better,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValueMethod {
    Exact,
    Normal,
    /// No non-zero differences; the p-value is 1 by convention.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// `min(T+, T-)` for two-sided tests, `T+` (candidate-favourable rank
    /// sum) for one-sided tests.
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method: PValueMethod,
}

impl WilcoxonResult {
    pub fn is_degenerate(&self) -> bool {
        self.method == PValueMethod::Degenerate
    }
}

/// Average ranks (1-based) of `values`; ties share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Wilcoxon signed-rank test on the paired improvements of `sample`.
pub fn wilcoxon_signed_rank(sample: &PairedSample, alternative: Alternative) -> WilcoxonResult {
    wilcoxon_with(sample, alternative, ZeroHandling::Drop)
}

pub fn wilcoxon_with(sample: &PairedSample, alternative: Alternative, zeros: ZeroHandling) -> WilcoxonResult {
    let d = sample.improvements();
    let (ranks, positive): (Vec<f64>, Vec<bool>) = match zeros {
        ZeroHandling::Drop => {
            let nz: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
            let abs: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
            (average_ranks(&abs), nz.iter().map(|&v| v > 0.0).collect())
        }
        ZeroHandling::Pratt => {
            let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
            let all = average_ranks(&abs);
            d.iter()
                .zip(all)
                .filter(|(&v, _)| v != 0.0)
                .map(|(&v, r)| (r, v > 0.0))
                .unzip()
        }
    };
    let n = ranks.len();
    if n == 0 {
        return WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n_effective: 0,
            method: PValueMethod::Degenerate,
        };
    }
    let total: f64 = ranks.iter().sum();
    let t_plus: f64 = ranks.iter().zip(&positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let t_minus = total - t_plus;

    let (statistic, p_value, method) = if n <= EXACT_MAX_N {
        let dist = SignedRankDistribution::new(&ranks);
        match alternative {
            Alternative::TwoSided => {
                let w = t_plus.min(t_minus);
                (w, (2.0 * dist.cdf(w)).min(1.0), PValueMethod::Exact)
            }
            Alternative::CandidateBetter => (t_plus, dist.sf(t_plus), PValueMethod::Exact),
        }
    } else {
        // Var(T+) = sum r^2 / 4 with the ranks actually used; this equals the
        // classic tie-corrected variance for average ranks.
        let mean = total / 2.0;
        let sd = (ranks.iter().map(|r| r * r).sum::<f64>() / 4.0).sqrt();
        match alternative {
            Alternative::TwoSided => {
                let z = ((t_plus - mean).abs() - 0.5).max(0.0) / sd;
                (t_plus.min(t_minus), erfc(z / std::f64::consts::SQRT_2).min(1.0), PValueMethod::Normal)
            }
            Alternative::CandidateBetter => {
                let z = (t_plus - mean - 0.5) / sd;
                (t_plus, 0.5 * erfc(z / std::f64::consts::SQRT_2), PValueMethod::Normal)
            }
        }
    };
    WilcoxonResult { statistic, p_value, n_effective: n, method }
}

/// Exact null distribution of `T+` for a fixed set of (possibly tied) ranks,
/// every sign pattern equally likely. Ranks are multiples of 1/2, so the
/// distribution is tabulated over doubled rank sums.
struct SignedRankDistribution {
    /// `counts[s]` = number of sign patterns with doubled `T+` equal to `s`.
    counts: Vec<f64>,
    patterns: f64,
}

impl SignedRankDistribution {
    fn new(ranks: &[f64]) -> Self {
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; max + 1];
        counts[0] = 1.0;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                if counts[s] != 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        Self { counts, patterns: 2f64.powi(ranks.len() as i32) }
    }

    /// `P(T+ <= t)`.
    fn cdf(&self, t: f64) -> f64 {
        let limit = ((t * 2.0).round() as usize).min(self.counts.len() - 1);
        self.counts[..=limit].iter().sum::<f64>() / self.patterns
    }

    /// `P(T+ >= t)`.
    fn sf(&self, t: f64) -> f64 {
        let start = (t * 2.0).round() as usize;
        self.counts.get(start..).map_or(0.0, |c| c.iter().sum::<f64>()) / self.patterns
    }
}

/// Points awarded for a significant improvement, strict inequalities:
/// 5 for p < 5e-6, 4 for p < 5e-5, 3 for p < 5e-4, 2 for p < 5e-3,
/// 1 for p < 0.05, otherwise 0. No points without an improvement.
pub fn significance_points(p: f64, improved: bool) -> u8 {
    if improved {
        significance_level(p)
    } else {
        0
    }
}

/// Significance bracket of `p` regardless of direction, 0..=5.
pub fn significance_level(p: f64) -> u8 {
    const THRESHOLDS: [(f64, u8); 5] = [(5e-6, 5), (5e-5, 4), (5e-4, 3), (5e-3, 2), (5e-2, 1)];
    THRESHOLDS
        .iter()
        .find(|(t, _)| p < *t)
        .map_or(0, |&(_, pts)| pts)
}

/// One asterisk per significance bracket, `"ns"` when not significant.
pub fn significance_marker(p: f64) -> String {
    match significance_level(p) {
        0 => "ns".to_string(),
        k => "*".repeat(k as usize),
    }
}

/// One ensemble-vs-baseline test outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method: String,
    pub organ: String,
    /// Experiment grouping such as the training-set size.
    pub group: String,
    pub metric: Metric,
    pub p_value: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingRow {
    pub method: String,
    pub mdta: u32,
    pub hd95: u32,
    pub total: u32,
}

/// Significance points per method, summed over organs and groups.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RankingTable {
    pub rows: Vec<RankingRow>,
}

impl RankingTable {
    pub fn row(&self, method: &str) -> Option<&RankingRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Sum points per (method, metric); methods keep their first-seen order.
pub fn build_ranking_table(comparisons: &[Comparison]) -> RankingTable {
    let mut rows: Vec<RankingRow> = Vec::new();
    for c in comparisons {
        let idx = match rows.iter().position(|r| r.method == c.method) {
            Some(i) => i,
            None => {
                rows.push(RankingRow { method: c.method.clone(), mdta: 0, hd95: 0, total: 0 });
                rows.len() - 1
            }
        };
        let pts = significance_points(c.p_value, c.improved) as u32;
        let row = &mut rows[idx];
        match c.metric {
            Metric::Mdta => row.mdta += pts,
            Metric::Hd95 => row.hd95 += pts,
        }
        row.total = row.mdta + row.hd95;
    }
    RankingTable { rows }
}

/// Median; mean of the two central order statistics for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Internal-test-set metrics of one cross-validation model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelMetrics {
    pub mdta: Vec<f64>,
    pub hd95: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelStanding {
    pub index: usize,
    pub median_mdta: f64,
    pub median_hd95: f64,
    pub rank_mdta: usize,
    pub rank_hd95: usize,
    pub rank_sum: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestModelSelection {
    pub best: usize,
    /// Standings of every model that had defined values, in model order.
    pub standings: Vec<ModelStanding>,
    /// Models with no defined value for some metric.
    pub excluded: Vec<usize>,
}

/// Pick the model with the smallest sum of its median-mDTA and median-HD95
/// ranks (1 = best, tied medians share the smaller rank). Ties go to the
/// lower median mDTA, then to the lower index.
pub fn select_best_model(models: &[ModelMetrics]) -> Result<BestModelSelection> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models to select from".into()));
    }
    let mut excluded = Vec::new();
    let mut included = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let finite = |v: &[f64]| v.iter().copied().filter(|x| x.is_finite()).collect::<Vec<_>>();
        match (median(&finite(&m.mdta)), median(&finite(&m.hd95))) {
            (Some(a), Some(b)) => included.push((i, a, b)),
            _ => excluded.push(i),
        }
    }
    if included.is_empty() {
        return Err(Error::Validation(format!(
            "all {} models lack defined metric values",
            models.len()
        )));
    }
    let rank = |value: f64, pick: fn(&(usize, f64, f64)) -> f64| {
        1 + included.iter().filter(|m| pick(m) < value).count()
    };
    let standings: Vec<ModelStanding> = included
        .iter()
        .map(|&(index, a, b)| {
            let rank_mdta = rank(a, |m| m.1);
            let rank_hd95 = rank(b, |m| m.2);
            ModelStanding {
                index,
                median_mdta: a,
                median_hd95: b,
                rank_mdta,
                rank_hd95,
                rank_sum: rank_mdta + rank_hd95,
            }
        })
        .collect();
    let best = standings
        .iter()
        .min_by(|x, y| {
            x.rank_sum
                .cmp(&y.rank_sum)
                .then(x.median_mdta.total_cmp(&y.median_mdta))
                .then(x.index.cmp(&y.index))
        })
        .map(|s| s.index)
        .expect("at least one standing");
    Ok(BestModelSelection { best, standings, excluded })
}
