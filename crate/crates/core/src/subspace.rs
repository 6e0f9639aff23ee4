//! Linear and kernel subspace trainers: PCA, LDA (Fisherface), KPCA and
//! kernel discriminant analysis.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::numerics::{
    self, center_kernel_train, eig_sym, kernel_matrix, pca_decompose, KernelCentering, KernelSpec,
    RANK_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubspaceKind {
    Pca,
    Lda,
    Kpca,
    Kda,
}

/// How many dimensions to retain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DimensionalityPolicy {
    /// `round(fraction·cap)`, rounding half up.
    FeretFraction {
        fraction: f64,
    },
    Fixed {
        t: usize,
    },
    /// Smallest `t` whose leading eigenvalues hold `energy` of the spectrum.
    EnergyTarget {
        energy: f64,
    },
}

impl Default for DimensionalityPolicy {
    fn default() -> Self {
        DimensionalityPolicy::FeretFraction { fraction: 0.4 }
    }
}

impl DimensionalityPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DimensionalityPolicy::FeretFraction { fraction }
                if !(fraction > 0.0 && fraction <= 1.0) =>
            {
                Err(Error::Config(format!(
                    "fraction must lie in (0,1], got {fraction}"
                )))
            }
            DimensionalityPolicy::Fixed { t: 0 } => Err(Error::Config(
                "fixed dimensionality must be at least 1".into(),
            )),
            DimensionalityPolicy::EnergyTarget { energy } if !(energy > 0.0 && energy <= 1.0) => {
                Err(Error::Config(format!(
                    "energy target must lie in (0,1], got {energy}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Fraction of total spectral energy held by the leading `t` eigenvalues.
pub fn energy_fraction(spectrum: &[f64], t: usize) -> f64 {
    let total: f64 = spectrum.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    spectrum.iter().take(t).sum::<f64>() / total
}

/// Retained dimensionality under `policy` for a subspace capped at `cap`.
pub fn select_dimensionality(
    policy: &DimensionalityPolicy,
    cap: usize,
    spectrum: &[f64],
) -> Result<usize> {
    policy.validate()?;
    if cap == 0 {
        return Err(Error::Rank {
            requested: 1,
            attainable: 0,
        });
    }
    match *policy {
        DimensionalityPolicy::FeretFraction { fraction } => {
            let t = (fraction * cap as f64 + 0.5).floor() as usize;
            Ok(t.clamp(1, cap))
        }
        DimensionalityPolicy::Fixed { t } => Ok(t.min(cap)),
        DimensionalityPolicy::EnergyTarget { energy } => {
            if spectrum.is_empty() {
                return Err(Error::Contract("energy target needs a spectrum".into()));
            }
            let total: f64 = spectrum.iter().sum();
            if total <= 0.0 {
                return Err(Error::Rank {
                    requested: 1,
                    attainable: 0,
                });
            }
            let mut acc = 0.0;
            for (i, v) in spectrum.iter().enumerate() {
                acc += v;
                if acc / total >= energy {
                    return Ok((i + 1).min(cap));
                }
            }
            Ok(spectrum.len().min(cap))
        }
    }
}

/// How coordinates are computed from a raw sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Projection {
    /// `basis·(y − mean)`, basis `t×N`.
    Linear { basis: Array2<f64> },
    /// `coefficientsᵀ·k̃(y)`, with `k̃` the kernel row against the stored
    /// training columns, centered in feature space.
    Kernel {
        spec: KernelSpec,
        /// Raw training columns, `N×M`.
        train: Array2<f64>,
        /// `M×t`.
        coefficients: Array2<f64>,
        centering: KernelCentering,
    },
}

/// A trained projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceModel {
    pub kind: SubspaceKind,
    pub mean: Array1<f64>,
    pub projection: Projection,
    /// Retained spectrum: covariance eigenvalues for PCA/KPCA, Fisher
    /// ratios for LDA/KDA.
    pub eigenvalues: Array1<f64>,
    /// Population variance of the training coordinates along each axis.
    pub axis_variance: Array1<f64>,
    /// Training coordinates, `t×M`.
    pub train_coords: Array2<f64>,
    pub train_labels: Vec<u32>,
}

impl SubspaceModel {
    pub fn t(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// Per-axis weights for the Mahalanobis metric.
    pub fn metric_weights(&self) -> Array1<f64> {
        self.axis_variance.clone()
    }

    /// Coordinates of the raw columns of `y` (`N×q`), `t×q`.
    pub fn project_raw(&self, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if y.nrows() != self.input_dim() {
            return Err(Error::Dimension {
                context: "project",
                expected: self.input_dim(),
                found: y.nrows(),
            });
        }
        match &self.projection {
            Projection::Linear { basis } => {
                let mut centered = y.to_owned();
                for mut col in centered.axis_iter_mut(Axis(1)) {
                    col -= &self.mean;
                }
                Ok(basis.dot(&centered))
            }
            Projection::Kernel {
                spec,
                train,
                coefficients,
                centering,
            } => {
                let k = kernel_matrix(y, train.view(), spec)?;
                let kc = centering.apply(k.view())?;
                Ok(kc.dot(coefficients).reversed_axes())
            }
        }
    }

    /// Projection of a data matrix (its raw columns) into this subspace.
    pub fn project(&self, y: &DataMatrix) -> Result<Array2<f64>> {
        self.project_raw(y.raw().view())
    }

    /// Leading-`t` prefix of a PCA or KPCA model.
    pub fn truncate(&self, t: usize) -> Result<SubspaceModel> {
        if !matches!(self.kind, SubspaceKind::Pca | SubspaceKind::Kpca) {
            return Err(Error::Contract(format!(
                "{:?} models cannot be truncated; retrain instead",
                self.kind
            )));
        }
        if t == 0 || t > self.t() {
            return Err(Error::Rank {
                requested: t,
                attainable: self.t(),
            });
        }
        let projection = match &self.projection {
            Projection::Linear { basis } => Projection::Linear {
                basis: basis.slice(s![..t, ..]).to_owned(),
            },
            Projection::Kernel {
                spec,
                train,
                coefficients,
                centering,
            } => Projection::Kernel {
                spec: *spec,
                train: train.clone(),
                coefficients: coefficients.slice(s![.., ..t]).to_owned(),
                centering: centering.clone(),
            },
        };
        Ok(SubspaceModel {
            kind: self.kind,
            mean: self.mean.clone(),
            projection,
            eigenvalues: self.eigenvalues.slice(s![..t]).to_owned(),
            axis_variance: self.axis_variance.slice(s![..t]).to_owned(),
            train_coords: self.train_coords.slice(s![..t, ..]).to_owned(),
            train_labels: self.train_labels.clone(),
        })
    }
}

fn axis_variance(coords: &Array2<f64>) -> Array1<f64> {
    let m = coords.ncols().max(1) as f64;
    coords
        .outer_iter()
        .map(|row| {
            let mean = row.sum() / m;
            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m
        })
        .collect()
}

/// Eigenfaces: top-`t` covariance directions, `cap = M − 1`.
pub fn train_pca(x: &DataMatrix, policy: &DimensionalityPolicy) -> Result<SubspaceModel> {
    let xc = x.centered_columns();
    let m = xc.ncols();
    let pca = pca_decompose(xc.view())?;
    let cap = m.saturating_sub(1);
    let t = select_dimensionality(policy, cap, pca.values.as_slice().unwrap_or(&[]))?;
    let (basis, values) = pca.truncate(t)?;
    let basis = basis.reversed_axes();
    let train_coords = basis.dot(&xc);
    Ok(SubspaceModel {
        kind: SubspaceKind::Pca,
        mean: x.mean.clone(),
        projection: Projection::Linear { basis },
        eigenvalues: values,
        axis_variance: axis_variance(&train_coords),
        train_coords,
        train_labels: x.labels.clone(),
    })
}

fn class_groups(labels: &[u32]) -> Vec<(u32, Vec<usize>)> {
    let mut ids: Vec<u32> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|c| {
            let members = labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == c)
                .map(|(i, _)| i)
                .collect();
            (c, members)
        })
        .collect()
}

/// Fisher directions of zero-mean coordinates `y` (`d×M`).
///
/// Solves `S_B w = λ (S_W + ridge·I) w` by whitening the regularized
/// within-class scatter. Returns unit-norm directions as columns (`d×k`,
/// `k = min(C − 1, d)` restricted to positive ratios) and their ratios.
fn fisher_directions(
    y: &Array2<f64>,
    labels: &[u32],
    ridge: Option<f64>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let (d, m) = y.dim();
    let groups = class_groups(labels);
    let c = groups.len();
    let mut sw = Array2::<f64>::zeros((d, d));
    let mut sb = Array2::<f64>::zeros((d, d));
    for (_, members) in &groups {
        let sub = y.select(Axis(1), members);
        let mu = sub.mean_axis(Axis(1)).expect("nonempty class");
        let mut resid = sub;
        for mut col in resid.axis_iter_mut(Axis(1)) {
            col -= &mu;
        }
        sw += &resid.dot(&resid.t());
        let mu_col = mu.view().insert_axis(Axis(1));
        sb += &(mu_col.dot(&mu_col.t()) * members.len() as f64);
    }
    sw /= m as f64;
    sb /= m as f64;

    let ridge = match ridge {
        Some(r) if r < 0.0 || !r.is_finite() => {
            return Err(Error::Contract(format!(
                "ridge must be finite and >= 0, got {r}"
            )))
        }
        Some(r) => r,
        None => 1e-6 * sw.diag().sum() / d as f64,
    };
    for i in 0..d {
        sw[[i, i]] += ridge;
    }
    let sw_eig = eig_sym(sw.view())?;
    let lead = sw_eig.values[0];
    let floor = sw_eig.values[d - 1];
    if !(lead > 0.0) || floor <= RANK_TOL * lead {
        return Err(Error::Singular(format!(
            "within-class scatter is singular (smallest eigenvalue {floor:.3e}); use a positive ridge"
        )));
    }
    // P = U·D^(−1/2) whitens S_W.
    let p = &sw_eig.vectors * &sw_eig.values.mapv(|v| 1.0 / v.sqrt());
    let mut sbw = p.t().dot(&sb).dot(&p);
    let sym = 0.5 * (&sbw + &sbw.t());
    sbw.assign(&sym);
    let eig = eig_sym(sbw.view())?;
    let limit = (c - 1).min(d);
    let lead_ratio = eig.values[0];
    let k = eig
        .values
        .iter()
        .take(limit)
        .take_while(|&&v| lead_ratio > 0.0 && v > RANK_TOL * lead_ratio)
        .count();
    let mut dirs = p.dot(&eig.vectors.slice(s![.., ..k]));
    for mut col in dirs.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        col.mapv_inplace(|v| v / norm);
        numerics::normalize_sign(col);
    }
    Ok((dirs, eig.values.slice(s![..k]).to_owned()))
}

fn require_classes(labels: &[u32]) -> Result<usize> {
    let c = class_groups(labels).len();
    if c < 2 {
        return Err(Error::Discriminant(format!(
            "needs at least 2 classes, found {c}"
        )));
    }
    Ok(c)
}

/// Fisherfaces: PCA to `min(M − C, rank)` dimensions, then the Fisher
/// criterion with ridge-regularized within-class scatter. `cap = C − 1`.
///
/// `ridge = None` uses `1e-6·trace(S_W)/dim`.
pub fn train_lda(
    x: &DataMatrix,
    policy: &DimensionalityPolicy,
    ridge: Option<f64>,
) -> Result<SubspaceModel> {
    let c = require_classes(&x.labels)?;
    let xc = x.centered_columns();
    let m = xc.ncols();
    let pca = pca_decompose(xc.view())?;
    let d = (m - c).min(pca.rank());
    if d == 0 {
        return Err(Error::Discriminant(
            "no within-class degrees of freedom (one sample per class)".into(),
        ));
    }
    let (pca_basis, _) = pca.truncate(d)?;
    let y = pca_basis.t().dot(&xc);
    let (dirs, ratios) = fisher_directions(&y, &x.labels, ridge)?;
    let t = select_dimensionality(policy, c - 1, ratios.as_slice().unwrap_or(&[]))?;
    if t > ratios.len() {
        return Err(Error::Rank {
            requested: t,
            attainable: ratios.len(),
        });
    }
    let basis = dirs.slice(s![.., ..t]).t().dot(&pca_basis.t());
    let train_coords = basis.dot(&xc);
    Ok(SubspaceModel {
        kind: SubspaceKind::Lda,
        mean: x.mean.clone(),
        projection: Projection::Linear { basis },
        eigenvalues: ratios.slice(s![..t]).to_owned(),
        axis_variance: axis_variance(&train_coords),
        train_coords,
        train_labels: x.labels.clone(),
    })
}

struct KernelPcaFit {
    raw: Array2<f64>,
    centering: KernelCentering,
    centered: Array2<f64>,
    /// Unit eigenvectors of the centered kernel, `M×r`.
    vectors: Array2<f64>,
    /// Centered-kernel eigenvalues, length `r`.
    values: Array1<f64>,
}

fn fit_kernel_pca(x: &DataMatrix, spec: &KernelSpec) -> Result<KernelPcaFit> {
    spec.validate()?;
    let raw = x.raw();
    if raw.ncols() < 2 {
        return Err(Error::Rank {
            requested: 1,
            attainable: 0,
        });
    }
    let k = kernel_matrix(raw.view(), raw.view(), spec)?;
    let kmax = k.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let centering = KernelCentering::fit(k.view());
    let mut centered = center_kernel_train(k.view())?;
    let sym = 0.5 * (&centered + &centered.t());
    centered.assign(&sym);
    let eig = eig_sym(centered.view())?;
    let lead = eig.values[0];
    let rank = if lead <= RANK_TOL * kmax.max(f64::MIN_POSITIVE) {
        0
    } else {
        eig.values
            .iter()
            .take_while(|&&v| v > RANK_TOL * lead)
            .count()
    };
    Ok(KernelPcaFit {
        raw,
        centering,
        centered,
        vectors: eig.vectors.slice(s![.., ..rank]).to_owned(),
        values: eig.values.slice(s![..rank]).to_owned(),
    })
}

impl KernelPcaFit {
    fn rank(&self) -> usize {
        self.values.len()
    }

    /// Coefficients `v/√λ` for the first `t` components.
    fn coefficients(&self, t: usize) -> Array2<f64> {
        let mut a = self.vectors.slice(s![.., ..t]).to_owned();
        for (mut col, &l) in a.axis_iter_mut(Axis(1)).zip(self.values.iter()) {
            col.mapv_inplace(|v| v / l.sqrt());
        }
        a
    }
}

/// Kernel PCA on the feature-space-centered kernel; coefficients are scaled
/// so training coordinates carry the covariance eigenvalues. `cap = M − 1`.
pub fn train_kpca(
    x: &DataMatrix,
    spec: &KernelSpec,
    policy: &DimensionalityPolicy,
) -> Result<SubspaceModel> {
    let fit = fit_kernel_pca(x, spec)?;
    let m = fit.raw.ncols() as f64;
    let spectrum: Vec<f64> = fit.values.iter().map(|v| v / m).collect();
    let t = select_dimensionality(policy, fit.raw.ncols() - 1, &spectrum)?;
    if t > fit.rank() {
        return Err(Error::Rank {
            requested: t,
            attainable: fit.rank(),
        });
    }
    let coefficients = fit.coefficients(t);
    let train_coords = fit.centered.dot(&coefficients).reversed_axes();
    Ok(SubspaceModel {
        kind: SubspaceKind::Kpca,
        mean: x.mean.clone(),
        eigenvalues: Array1::from(spectrum[..t].to_vec()),
        axis_variance: axis_variance(&train_coords),
        train_coords,
        train_labels: x.labels.clone(),
        projection: Projection::Kernel {
            spec: *spec,
            train: fit.raw,
            coefficients,
            centering: fit.centering,
        },
    })
}

/// Generalized discriminant analysis: kernel PCA to `min(rank, M − C)`
/// dimensions, then the ridge-regularized Fisher criterion. `cap = C − 1`.
pub fn train_kda(
    x: &DataMatrix,
    spec: &KernelSpec,
    policy: &DimensionalityPolicy,
    ridge: Option<f64>,
) -> Result<SubspaceModel> {
    let c = require_classes(&x.labels)?;
    let fit = fit_kernel_pca(x, spec)?;
    let m = fit.raw.ncols();
    let d = fit.rank().min(m - c);
    if d == 0 {
        return Err(Error::Discriminant(
            "kernel space has no within-class degrees of freedom".into(),
        ));
    }
    let alpha = fit.coefficients(d);
    let y = fit.centered.dot(&alpha).reversed_axes();
    let (dirs, ratios) = fisher_directions(&y, &x.labels, ridge)?;
    let t = select_dimensionality(policy, c - 1, ratios.as_slice().unwrap_or(&[]))?;
    if t > ratios.len() {
        return Err(Error::Rank {
            requested: t,
            attainable: ratios.len(),
        });
    }
    let coefficients = alpha.dot(&dirs.slice(s![.., ..t]));
    let train_coords = fit.centered.dot(&coefficients).reversed_axes();
    Ok(SubspaceModel {
        kind: SubspaceKind::Kda,
        mean: x.mean.clone(),
        eigenvalues: ratios.slice(s![..t]).to_owned(),
        axis_variance: axis_variance(&train_coords),
        train_coords,
        train_labels: x.labels.clone(),
        projection: Projection::Kernel {
            spec: *spec,
            train: fit.raw,
            coefficients,
            centering: fit.centering,
        },
    })
}
