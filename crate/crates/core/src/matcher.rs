//! Nearest-centroid matching under L1, L2, cosine and Mahalanobis distances.

use std::cmp::Ordering;
use std::fmt;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ZERO_NORM: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    L1,
    L2,
    Cosine,
    Mahalanobis,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::L1 => "l1",
            MetricKind::L2 => "l2",
            MetricKind::Cosine => "cosine",
            MetricKind::Mahalanobis => "mahalanobis",
        })
    }
}

/// A distance; smaller is better for every kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub kind: MetricKind,
    /// Per-axis variances, Mahalanobis only.
    pub eigenvalues: Option<Vec<f64>>,
}

impl Metric {
    pub fn l1() -> Self {
        Metric {
            kind: MetricKind::L1,
            eigenvalues: None,
        }
    }

    pub fn l2() -> Self {
        Metric {
            kind: MetricKind::L2,
            eigenvalues: None,
        }
    }

    pub fn cosine() -> Self {
        Metric {
            kind: MetricKind::Cosine,
            eigenvalues: None,
        }
    }

    pub fn mahalanobis(eigenvalues: Vec<f64>) -> Result<Self> {
        if let Some(bad) = eigenvalues.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Metric(format!(
                "mahalanobis weights must be positive, found {bad}"
            )));
        }
        Ok(Metric {
            kind: MetricKind::Mahalanobis,
            eigenvalues: Some(eigenvalues),
        })
    }

    /// Builds `kind`, taking Mahalanobis weights from `spectrum`.
    pub fn with_spectrum(kind: MetricKind, spectrum: &[f64]) -> Result<Self> {
        match kind {
            MetricKind::L1 => Ok(Metric::l1()),
            MetricKind::L2 => Ok(Metric::l2()),
            MetricKind::Cosine => Ok(Metric::cosine()),
            MetricKind::Mahalanobis => Metric::mahalanobis(spectrum.to_vec()),
        }
    }
}

/// Distance between two coefficient vectors.
///
/// Cosine is `1 − cos θ`; when a norm is below 1e-15 it is 0 if both are,
/// otherwise 1. Mahalanobis is `√Σ(aᵢ−bᵢ)²/λᵢ`.
pub fn distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, metric: &Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "distance",
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(match metric.kind {
        MetricKind::L1 => a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum(),
        MetricKind::L2 => a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        MetricKind::Cosine => {
            let na = a.dot(&a).sqrt();
            let nb = b.dot(&b).sqrt();
            if na < ZERO_NORM || nb < ZERO_NORM {
                if na < ZERO_NORM && nb < ZERO_NORM {
                    0.0
                } else {
                    1.0
                }
            } else {
                1.0 - a.dot(&b) / (na * nb)
            }
        }
        MetricKind::Mahalanobis => {
            let lambda = metric
                .eigenvalues
                .as_ref()
                .ok_or_else(|| Error::Metric("mahalanobis metric without eigenvalues".into()))?;
            if lambda.len() != a.len() {
                return Err(Error::Dimension {
                    context: "mahalanobis eigenvalues",
                    expected: a.len(),
                    found: lambda.len(),
                });
            }
            let mut sum = 0.0;
            for ((x, y), &l) in a.iter().zip(b.iter()).zip(lambda) {
                if !(l > 0.0) {
                    return Err(Error::Metric(format!("nonpositive eigenvalue {l}")));
                }
                sum += (x - y) * (x - y) / l;
            }
            sum.sqrt()
        }
    })
}

/// Per-class centroids of training projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryIndex {
    /// `t×C`.
    pub centroids: Array2<f64>,
    /// Ascending.
    pub class_ids: Vec<u32>,
    #[serde(default)]
    pub source: String,
}

impl GalleryIndex {
    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.nrows()
    }

    /// Distances from `probe` to every centroid, in `class_ids` order.
    pub fn distances(&self, probe: ArrayView1<'_, f64>, metric: &Metric) -> Result<Vec<f64>> {
        if probe.len() != self.dim() {
            return Err(Error::Dimension {
                context: "probe vs gallery",
                expected: self.dim(),
                found: probe.len(),
            });
        }
        self.centroids
            .axis_iter(Axis(1))
            .map(|c| distance(probe, c, metric))
            .collect()
    }
}

/// Centroid gallery from training coefficients (`t×M`) and their labels.
pub fn build_gallery(train_coeffs: ArrayView2<'_, f64>, labels: &[u32]) -> Result<GalleryIndex> {
    if labels.len() != train_coeffs.ncols() {
        return Err(Error::Dimension {
            context: "build_gallery labels",
            expected: train_coeffs.ncols(),
            found: labels.len(),
        });
    }
    let mut class_ids = labels.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    if class_ids.is_empty() {
        return Err(Error::Contract("gallery needs at least one class".into()));
    }
    let mut centroids = Array2::zeros((train_coeffs.nrows(), class_ids.len()));
    for (k, &c) in class_ids.iter().enumerate() {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let mean = train_coeffs
            .select(Axis(1), &members)
            .mean_axis(Axis(1))
            .expect("class has members");
        centroids.column_mut(k).assign(&mean);
    }
    Ok(GalleryIndex {
        centroids,
        class_ids,
        source: String::new(),
    })
}

/// Gallery classes ordered best first for one probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub probe_id: usize,
    pub class_ids: Vec<u32>,
    /// Non-decreasing, aligned with `class_ids`.
    pub distances: Vec<f64>,
}

impl RankedList {
    /// Orders `(class, distance)` pairs by ascending distance, ties by class id.
    pub fn from_distances(probe_id: usize, class_ids: &[u32], distances: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..class_ids.len()).collect();
        order.sort_by(|&i, &j| {
            distances[i]
                .partial_cmp(&distances[j])
                .unwrap_or(Ordering::Equal)
                .then(class_ids[i].cmp(&class_ids[j]))
        });
        RankedList {
            probe_id,
            class_ids: order.iter().map(|&i| class_ids[i]).collect(),
            distances: order.iter().map(|&i| distances[i]).collect(),
        }
    }

    pub fn best(&self) -> u32 {
        self.class_ids[0]
    }
}

pub fn rank_classes(
    gallery: &GalleryIndex,
    probe: ArrayView1<'_, f64>,
    metric: &Metric,
) -> Result<RankedList> {
    let d = gallery.distances(probe, metric)?;
    Ok(RankedList::from_distances(0, &gallery.class_ids, &d))
}

pub fn classify(
    gallery: &GalleryIndex,
    probe: ArrayView1<'_, f64>,
    metric: &Metric,
) -> Result<u32> {
    Ok(rank_classes(gallery, probe, metric)?.best())
}
