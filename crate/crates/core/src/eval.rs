//! Identification evaluation: rank-of-truth, cumulative match score curves,
//! exact McNemar tests at every rank and rank-1 tables.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};
use crate::matcher::RankedList;

/// The five evaluation categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCategory {
    Expression,
    Illumination,
    LowerOcclusion,
    UpperOcclusion,
    TimeDelay,
}

impl EvalCategory {
    pub const ALL: [EvalCategory; 5] = [
        EvalCategory::Expression,
        EvalCategory::Illumination,
        EvalCategory::LowerOcclusion,
        EvalCategory::UpperOcclusion,
        EvalCategory::TimeDelay,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EvalCategory::Expression => "expression",
            EvalCategory::Illumination => "illumination",
            EvalCategory::LowerOcclusion => "lower_occlusion",
            EvalCategory::UpperOcclusion => "upper_occlusion",
            EvalCategory::TimeDelay => "time_delay",
        }
    }

    /// Row label in the human-readable rank-1 table.
    pub fn title(&self) -> &'static str {
        match self {
            EvalCategory::Expression => "Expression",
            EvalCategory::Illumination => "Illumination",
            EvalCategory::LowerOcclusion => "Lower Occ",
            EvalCategory::UpperOcclusion => "Upper Occ",
            EvalCategory::TimeDelay => "Time Delay",
        }
    }
}

impl fmt::Display for EvalCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalCategory {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        EvalCategory::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown evaluation category `{s}`"))
    }
}

/// Rank of the true class for every (probe, algorithm) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMatrix {
    pub probe_ids: Vec<String>,
    pub algorithms: Vec<String>,
    pub num_classes: usize,
    /// `ranks[probe][algorithm]`, 1-based.
    pub ranks: Vec<Vec<usize>>,
}

impl OutcomeMatrix {
    pub fn new(
        probe_ids: Vec<String>,
        algorithms: Vec<String>,
        num_classes: usize,
        ranks: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if ranks.len() != probe_ids.len() {
            return Err(Error::Evaluation(format!(
                "{} rank rows for {} probes",
                ranks.len(),
                probe_ids.len()
            )));
        }
        for row in &ranks {
            if row.len() != algorithms.len() {
                return Err(Error::Evaluation(
                    "rank row does not cover every algorithm".into(),
                ));
            }
            if let Some(r) = row.iter().find(|&&r| r < 1 || r > num_classes) {
                return Err(Error::Evaluation(format!(
                    "rank {r} outside 1..={num_classes}"
                )));
            }
        }
        Ok(OutcomeMatrix {
            probe_ids,
            algorithms,
            num_classes,
            ranks,
        })
    }

    /// Ranks of one algorithm across all probes.
    pub fn column(&self, algorithm: &str) -> Option<Vec<usize>> {
        let j = self.algorithms.iter().position(|a| a == algorithm)?;
        Some(self.ranks.iter().map(|r| r[j]).collect())
    }
}

/// 1-based position of `truth` in a ranked list.
pub fn rank_of_truth(ranked: &RankedList, truth: u32) -> Result<usize> {
    ranked
        .class_ids
        .iter()
        .position(|&c| c == truth)
        .map(|p| p + 1)
        .ok_or_else(|| Error::Evaluation(format!("true class {truth} not in ranked list")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmsCurve {
    pub algorithm: String,
    pub probe_set: String,
    /// `values[k-1]` is the fraction of probes with rank ≤ k.
    pub values: Vec<f64>,
}

/// Cumulative match scores over ranks `1..=num_classes`.
pub fn cms_curve(ranks: &[usize], num_classes: usize) -> Result<CmsCurve> {
    if ranks.is_empty() {
        return Err(Error::Evaluation("no outcomes for cms curve".into()));
    }
    let mut counts = vec![0usize; num_classes];
    for &r in ranks {
        if r < 1 || r > num_classes {
            return Err(Error::Evaluation(format!(
                "rank {r} outside 1..={num_classes}"
            )));
        }
        counts[r - 1] += 1;
    }
    let total = ranks.len() as f64;
    let mut acc = 0usize;
    let values = counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / total
        })
        .collect();
    Ok(CmsCurve {
        algorithm: String::new(),
        probe_set: String::new(),
        values,
    })
}

/// Exact two-sided McNemar p-value from the discordant counts:
/// `min(1, 2·Σ_{k ≤ min(n01,n10)} C(n,k)/2ⁿ)`, and 1 when `n = 0`.
pub fn mcnemar_p(n01: usize, n10: usize) -> f64 {
    let n = n01 + n10;
    if n == 0 {
        return 1.0;
    }
    let k_max = n01.min(n10);
    let tail = if n <= 1000 {
        let mut term = 0.5f64.powi(n as i32);
        let mut tail = term;
        for k in 0..k_max {
            term = term * (n - k) as f64 / (k + 1) as f64;
            tail += term;
        }
        tail
    } else {
        // 2^-n underflows; accumulate in log space instead.
        let mut log_term = -(n as f64) * std::f64::consts::LN_2;
        let mut tail = log_term.exp();
        for k in 0..k_max {
            log_term += ((n - k) as f64).ln() - ((k + 1) as f64).ln();
            tail += log_term.exp();
        }
        tail
    };
    (2.0 * tail).min(1.0)
}

/// Discordant counts `(n01, n10)`: A fails while B succeeds, and vice versa.
pub fn discordant_counts(success_a: &[bool], success_b: &[bool]) -> Result<(usize, usize)> {
    if success_a.len() != success_b.len() {
        return Err(Error::Dimension {
            context: "mcnemar pairing",
            expected: success_a.len(),
            found: success_b.len(),
        });
    }
    let mut n01 = 0;
    let mut n10 = 0;
    for (&a, &b) in success_a.iter().zip(success_b) {
        match (a, b) {
            (false, true) => n01 += 1,
            (true, false) => n10 += 1,
            _ => {}
        }
    }
    Ok((n01, n10))
}

/// Exact McNemar test on paired success indicators.
pub fn mcnemar_exact(success_a: &[bool], success_b: &[bool]) -> Result<f64> {
    let (n01, n10) = discordant_counts(success_a, success_b)?;
    Ok(mcnemar_p(n01, n10))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarRow {
    pub rank: usize,
    pub n01: usize,
    pub n10: usize,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarReport {
    pub algorithm_a: String,
    pub algorithm_b: String,
    pub alpha: f64,
    pub rows: Vec<McNemarRow>,
}

/// McNemar test at each rank `k = 1..=max_rank` with success meaning
/// "true class within the top k".
pub fn mcnemar_across_ranks(
    ranks_a: &[usize],
    ranks_b: &[usize],
    max_rank: usize,
    alpha: f64,
) -> Result<McNemarReport> {
    if ranks_a.len() != ranks_b.len() {
        return Err(Error::Evaluation(format!(
            "paired outcomes differ in length: {} vs {}",
            ranks_a.len(),
            ranks_b.len()
        )));
    }
    let rows = (1..=max_rank)
        .map(|k| {
            let a: Vec<bool> = ranks_a.iter().map(|&r| r <= k).collect();
            let b: Vec<bool> = ranks_b.iter().map(|&r| r <= k).collect();
            let (n01, n10) = discordant_counts(&a, &b)?;
            let p = mcnemar_p(n01, n10);
            Ok(McNemarRow {
                rank: k,
                n01,
                n10,
                p,
                significant: p < alpha,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(McNemarReport {
        algorithm_a: String::new(),
        algorithm_b: String::new(),
        alpha,
        rows,
    })
}

/// Exact (Clopper–Pearson) binomial confidence interval for `successes/n`.
pub fn clopper_pearson(successes: usize, n: usize, confidence: f64) -> Result<(f64, f64)> {
    if n == 0 || successes > n {
        return Err(Error::Evaluation(format!(
            "invalid binomial counts {successes}/{n}"
        )));
    }
    let tail = (1.0 - confidence) / 2.0;
    let (x, n) = (successes as f64, n as f64);
    let lo = if successes == 0 {
        0.0
    } else {
        Beta::new(x, n - x + 1.0)
            .map_err(|e| Error::Evaluation(e.to_string()))?
            .inverse_cdf(tail)
    };
    let hi = if successes as f64 == n {
        1.0
    } else {
        Beta::new(x + 1.0, n - x)
            .map_err(|e| Error::Evaluation(e.to_string()))?
            .inverse_cdf(1.0 - tail)
    };
    Ok((lo, hi))
}

/// Ranks of one algorithm on one category, split by probe subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryOutcomes {
    pub category: EvalCategory,
    pub algorithm: String,
    pub subsets: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1Cell {
    /// Fraction of probes identified at rank 1, pooled over subsets.
    pub fraction: f64,
    pub successes: usize,
    pub probes: usize,
    /// 95% Clopper–Pearson interval on the fraction.
    pub interval: (f64, f64),
}

impl Rank1Cell {
    pub fn percent(&self) -> f64 {
        100.0 * self.fraction
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1Table {
    pub categories: Vec<EvalCategory>,
    pub algorithms: Vec<String>,
    /// `cells[category][algorithm]`; `None` when not evaluated.
    pub cells: Vec<Vec<Option<Rank1Cell>>>,
}

/// Rank-1 accuracy for each (category, algorithm). Subsets of equal size
/// make the pooled fraction equal to the mean of per-subset accuracies.
pub fn rank1_table(outcomes: &[CategoryOutcomes]) -> Result<Rank1Table> {
    if outcomes.is_empty() {
        return Err(Error::Evaluation("no outcomes for rank-1 table".into()));
    }
    let mut categories: Vec<EvalCategory> = outcomes.iter().map(|o| o.category).collect();
    categories.sort();
    categories.dedup();
    let mut algorithms: Vec<String> = Vec::new();
    for o in outcomes {
        if !algorithms.contains(&o.algorithm) {
            algorithms.push(o.algorithm.clone());
        }
    }
    let mut cells = vec![vec![None; algorithms.len()]; categories.len()];
    for o in outcomes {
        let pooled: Vec<usize> = o.subsets.iter().flatten().copied().collect();
        if pooled.is_empty() {
            return Err(Error::Evaluation(format!(
                "no probes for {} on {}",
                o.algorithm, o.category
            )));
        }
        let successes = pooled.iter().filter(|&&r| r == 1).count();
        let ci = categories
            .iter()
            .position(|&c| c == o.category)
            .expect("collected");
        let ai = algorithms
            .iter()
            .position(|a| *a == o.algorithm)
            .expect("collected");
        cells[ci][ai] = Some(Rank1Cell {
            fraction: successes as f64 / pooled.len() as f64,
            successes,
            probes: pooled.len(),
            interval: clopper_pearson(successes, pooled.len(), 0.95)?,
        });
    }
    Ok(Rank1Table {
        categories,
        algorithms,
        cells,
    })
}

/// Fixed two-decimal percentage, e.g. `90.00%`.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.2}%", 100.0 * fraction)
}
