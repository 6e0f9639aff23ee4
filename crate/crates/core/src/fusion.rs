//! Matching-score fusion: distances become similarities, are MinMax
//! normalized to [0, 100] and combined by a weighted sum.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalCategory;
use crate::matcher::RankedList;

/// Per-probe, per-class scores of one classifier (larger is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub classifier: String,
    pub class_ids: Vec<u32>,
    pub probe_ids: Vec<String>,
    /// `probes×C`.
    pub scores: Array2<f64>,
}

impl ScoreTable {
    pub fn new(
        classifier: impl Into<String>,
        class_ids: Vec<u32>,
        probe_ids: Vec<String>,
        scores: Array2<f64>,
    ) -> Result<Self> {
        if scores.dim() != (probe_ids.len(), class_ids.len()) {
            return Err(Error::Fusion(format!(
                "score table is {}x{} but has {} probes and {} classes",
                scores.nrows(),
                scores.ncols(),
                probe_ids.len(),
                class_ids.len()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fusion("score table has non-finite entries".into()));
        }
        Ok(ScoreTable {
            classifier: classifier.into(),
            class_ids,
            probe_ids,
            scores,
        })
    }

    /// Similarity table from per-probe distance rows.
    pub fn from_distances(
        classifier: impl Into<String>,
        class_ids: Vec<u32>,
        probe_ids: Vec<String>,
        distances: &[Vec<f64>],
    ) -> Result<Self> {
        let c = class_ids.len();
        let mut scores = Array2::zeros((distances.len(), c));
        for (i, row) in distances.iter().enumerate() {
            if row.len() != c {
                return Err(Error::Dimension {
                    context: "distance row",
                    expected: c,
                    found: row.len(),
                });
            }
            for (j, v) in to_similarity(row).into_iter().enumerate() {
                scores[[i, j]] = v;
            }
        }
        ScoreTable::new(classifier, class_ids, probe_ids, scores)
    }

    pub fn num_probes(&self) -> usize {
        self.probe_ids.len()
    }

    /// Descending-score rankings with ascending class-id tie-break. The
    /// ranked "distance" is the negated score.
    pub fn rankings(&self) -> Vec<RankedList> {
        self.scores
            .outer_iter()
            .enumerate()
            .map(|(p, row)| {
                let mut order: Vec<usize> = (0..self.class_ids.len()).collect();
                order.sort_by(|&i, &j| {
                    row[j]
                        .partial_cmp(&row[i])
                        .unwrap_or(Ordering::Equal)
                        .then(self.class_ids[i].cmp(&self.class_ids[j]))
                });
                RankedList {
                    probe_id: p,
                    class_ids: order.iter().map(|&i| self.class_ids[i]).collect(),
                    distances: order.iter().map(|&i| -row[i]).collect(),
                }
            })
            .collect()
    }

    /// Same table with every row MinMax normalized.
    pub fn normalized(&self, scope: &Normalization) -> ScoreTable {
        let mut out = self.clone();
        for mut row in out.scores.outer_iter_mut() {
            let v = normalize_row(row.as_slice().expect("standard layout"), scope);
            for (dst, src) in row.iter_mut().zip(v) {
                *dst = src;
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("probe_id");
        for c in &self.class_ids {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (probe, row) in self.probe_ids.iter().zip(self.scores.outer_iter()) {
            out.push_str(probe);
            for v in row.iter() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(classifier: impl Into<String>, text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Fusion("empty score table".into()))?;
        let class_ids = header
            .split(',')
            .skip(1)
            .map(|c| {
                c.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Fusion(format!("bad class id `{c}` in header")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut probe_ids = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let mut fields = line.split(',');
            probe_ids.push(fields.next().unwrap_or_default().trim().to_string());
            let row = fields
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| {
                        Error::Fusion(format!("bad score `{f}` on data line {}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != class_ids.len() {
                return Err(Error::Fusion(format!(
                    "data line {} has {} scores, header has {} classes",
                    lineno + 1,
                    row.len(),
                    class_ids.len()
                )));
            }
            values.extend(row);
        }
        let scores = Array2::from_shape_vec((probe_ids.len(), class_ids.len()), values)
            .map_err(|e| Error::Fusion(e.to_string()))?;
        ScoreTable::new(classifier, class_ids, probe_ids, scores)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tag = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("scores")
            .to_string();
        ScoreTable::from_csv(tag, &text)
    }
}

/// Order-reversing map from distances to similarities.
pub fn to_similarity(distances: &[f64]) -> Vec<f64> {
    distances.iter().map(|d| -d).collect()
}

/// `100·(s − min)/(max − min)`; an all-equal vector maps to 50 everywhere.
pub fn minmax_normalize(scores: &[f64]) -> Vec<f64> {
    let (min, max) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    minmax_with(scores, min, max)
}

fn minmax_with(scores: &[f64], min: f64, max: f64) -> Vec<f64> {
    if !(max > min) {
        return vec![50.0; scores.len()];
    }
    let span = max - min;
    scores
        .iter()
        .map(|&s| (100.0 * (s - min) / span).clamp(0.0, 100.0))
        .collect()
}

/// Population the MinMax bounds come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum Normalization {
    /// Each probe's own gallery scores.
    PerProbe,
    /// Fixed bounds, typically fitted on a training pass; values outside
    /// are clamped to the range.
    Global { min: f64, max: f64 },
}

impl Normalization {
    pub fn fit_global(table: &ScoreTable) -> Self {
        let (min, max) = table
            .scores
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Normalization::Global { min, max }
    }
}

fn normalize_row(row: &[f64], scope: &Normalization) -> Vec<f64> {
    match *scope {
        Normalization::PerProbe => minmax_normalize(row),
        Normalization::Global { min, max } => minmax_with(row, min, max),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub weights: Vec<f64>,
}

impl FusionWeights {
    /// Validates nonnegativity and unit sum (within 1e-12).
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Fusion("no fusion weights".into()));
        }
        if let Some(w) = weights.iter().find(|&&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Fusion(format!("negative or non-finite weight {w}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Fusion(format!("weights sum to {sum}, not 1")));
        }
        Ok(FusionWeights { weights })
    }
}

/// Rank-1 accuracies (percent) of the classifiers being combined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub accuracies: Vec<f64>,
    pub r_sum: f64,
}

impl AccuracySummary {
    pub fn new(accuracies: Vec<f64>) -> Result<Self> {
        if let Some(r) = accuracies.iter().find(|&&r| !(0.0..=100.0).contains(&r)) {
            return Err(Error::Fusion(format!("accuracy {r} outside [0, 100]")));
        }
        let r_sum = accuracies.iter().sum();
        Ok(AccuracySummary { accuracies, r_sum })
    }
}

/// Winning classifier tag for each of the five evaluation categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryWinTable {
    pub winners: BTreeMap<EvalCategory, String>,
}

impl CategoryWinTable {
    pub fn new(winners: BTreeMap<EvalCategory, String>) -> Result<Self> {
        for cat in EvalCategory::ALL {
            if !winners.contains_key(&cat) {
                return Err(Error::Fusion(format!("no winner for category {cat}")));
            }
        }
        Ok(CategoryWinTable { winners })
    }
}

/// Method 1: each classifier's share of the five category wins.
pub fn weights_method1(wins: &CategoryWinTable, tags: &[String]) -> Result<FusionWeights> {
    let mut weights = vec![0.0; tags.len()];
    for (cat, winner) in &wins.winners {
        let i = tags.iter().position(|t| t == winner).ok_or_else(|| {
            Error::Fusion(format!("winner `{winner}` of {cat} is not a fusion member"))
        })?;
        weights[i] += 1.0;
    }
    let total = wins.winners.len() as f64;
    FusionWeights::new(weights.into_iter().map(|w| w / total).collect())
}

/// Method 2: weights proportional to rank-1 accuracy, `wᵢ = rᵢ / Σr`.
pub fn weights_method2(acc: &AccuracySummary) -> Result<FusionWeights> {
    if !(acc.r_sum > 0.0) {
        return Err(Error::Fusion("all accuracies are zero".into()));
    }
    let mut w: Vec<f64> = acc.accuracies.iter().map(|r| r / acc.r_sum).collect();
    // Absorb rounding so the weights sum to one.
    let sum: f64 = w.iter().sum();
    if let Some(last) = w.iter_mut().rev().find(|v| **v > 0.0) {
        *last += 1.0 - sum;
    }
    FusionWeights::new(w)
}

/// Weighted sum `Σ wᵢ·S′ᵢ` of aligned, normalized score tables.
pub fn fuse(tables: &[ScoreTable], weights: &FusionWeights) -> Result<ScoreTable> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Fusion("nothing to fuse".into()))?;
    if tables.len() != weights.weights.len() {
        return Err(Error::Fusion(format!(
            "{} tables but {} weights",
            tables.len(),
            weights.weights.len()
        )));
    }
    for t in &tables[1..] {
        if t.class_ids != first.class_ids || t.probe_ids != first.probe_ids {
            return Err(Error::Fusion(format!(
                "table `{}` is not aligned with `{}`",
                t.classifier, first.classifier
            )));
        }
    }
    let mut combined = Array2::<f64>::zeros(first.scores.dim());
    for (t, &w) in tables.iter().zip(&weights.weights) {
        combined.scaled_add(w, &t.scores);
    }
    ScoreTable::new(
        "hybrid",
        first.class_ids.clone(),
        first.probe_ids.clone(),
        combined,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tags(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn similarity_and_minmax() {
        assert_eq!(to_similarity(&[1.0, 2.0, 3.0]), vec![-1.0, -2.0, -3.0]);
        assert_eq!(minmax_normalize(&[2.0, 6.0, 10.0]), vec![0.0, 50.0, 100.0]);
        assert_eq!(minmax_normalize(&[3.0, 3.0]), vec![50.0, 50.0]);
    }

    #[test]
    fn method1_counting() {
        let mut w = BTreeMap::new();
        w.insert(EvalCategory::Expression, "LDA".to_string());
        w.insert(EvalCategory::TimeDelay, "LDA".to_string());
        w.insert(EvalCategory::LowerOcclusion, "FA1".to_string());
        w.insert(EvalCategory::UpperOcclusion, "FA1".to_string());
        w.insert(EvalCategory::Illumination, "FA1".to_string());
        let wins = CategoryWinTable::new(w.clone()).unwrap();
        let fw = weights_method1(&wins, &tags(&["FA1", "FA2", "LDA"])).unwrap();
        assert_eq!(fw.weights, vec![0.6, 0.0, 0.4]);
        assert!(weights_method1(&wins, &tags(&["FA1", "FA2"])).is_err());
        w.remove(&EvalCategory::TimeDelay);
        assert!(CategoryWinTable::new(w).is_err());
    }

    #[test]
    fn method2_edge_cases() {
        let eq = weights_method2(&AccuracySummary::new(vec![70.0; 4]).unwrap()).unwrap();
        assert!(eq.weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
        let one = weights_method2(&AccuracySummary::new(vec![100.0, 0.0]).unwrap()).unwrap();
        assert_eq!(one.weights, vec![1.0, 0.0]);
        assert!(weights_method2(&AccuracySummary::new(vec![0.0, 0.0]).unwrap()).is_err());
        assert!(AccuracySummary::new(vec![101.0]).is_err());
    }

    #[test]
    fn weighted_sum_arithmetic() {
        let mk = |v: f64| ScoreTable::new("t", vec![0], vec!["p".into()], array![[v]]).unwrap();
        let fused = fuse(
            &[mk(50.0), mk(100.0), mk(25.0)],
            &FusionWeights::new(vec![0.4, 0.2, 0.4]).unwrap(),
        )
        .unwrap();
        assert!((fused.scores[[0, 0]] - 50.0).abs() < 1e-12);
    }

    #[test]
    fn misaligned_tables_rejected() {
        let a = ScoreTable::new("a", vec![0, 1], vec!["p".into()], array![[1.0, 2.0]]).unwrap();
        let b = ScoreTable::new("b", vec![0, 2], vec!["p".into()], array![[1.0, 2.0]]).unwrap();
        let w = FusionWeights::new(vec![0.5, 0.5]).unwrap();
        assert!(fuse(&[a.clone(), b], &w).is_err());
        assert!(fuse(&[a], &w).is_err());
    }

    #[test]
    fn csv_roundtrip_keeps_full_precision() {
        let t = ScoreTable::new(
            "x",
            vec![3, 8],
            vec!["a".into(), "b".into()],
            array![[0.1 + 0.2, -1e-300], [std::f64::consts::PI, 42.0]],
        )
        .unwrap();
        let back = ScoreTable::from_csv("x", &t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert!(ScoreTable::from_csv("x", "probe_id,1,2\np,1.0\n").is_err());
    }

    #[test]
    fn global_normalization_clamps() {
        let t = ScoreTable::new("t", vec![0, 1], vec!["p".into()], array![[-5.0, 15.0]]).unwrap();
        let n = t.normalized(&Normalization::Global {
            min: 0.0,
            max: 10.0,
        });
        assert_eq!(n.scores, array![[0.0, 100.0]]);
    }
}
