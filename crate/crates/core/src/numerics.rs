//! Dense linear algebra shared by every trainer.
//!
//! Matrices here are at most a few hundred on a side (the Gram side of the
//! snapshot trick), so a cyclic Jacobi eigensolver is both fast enough and
//! accurate to working precision.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Off-diagonal tolerance of the Jacobi iteration, relative to ‖S‖_F.
pub const EIG_TOL: f64 = 1e-10;
/// Components with eigenvalue below this fraction of the largest are
/// treated as numerically zero.
pub const RANK_TOL: f64 = 1e-12;
const SIGN_THRESHOLD: f64 = 1e-12;

/// Full symmetric eigendecomposition, sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Array1<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: Array2<f64>,
}

/// Flips `v` so its first component above the sign threshold is positive.
pub(crate) fn normalize_sign(mut v: ndarray::ArrayViewMut1<'_, f64>) {
    if let Some(&first) = v.iter().find(|x| x.abs() > SIGN_THRESHOLD) {
        if first < 0.0 {
            v.mapv_inplace(|x| -x);
        }
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Iterates until the off-diagonal Frobenius norm falls below
/// `EIG_TOL·‖S‖_F`, then runs one polishing sweep. Eigenvectors follow the
/// deterministic sign convention: first component above 1e-12 is positive.
pub fn eig_sym(s: ArrayView2<'_, f64>) -> Result<EigenDecomposition> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::Contract(format!(
            "eig_sym needs a square matrix, got {}x{}",
            n,
            s.ncols()
        )));
    }
    if n == 0 {
        return Ok(EigenDecomposition {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }
    let max_abs = s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::Contract(
            "eig_sym input has non-finite entries".into(),
        ));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (s[[i, j]] - s[[j, i]]).abs() > 1e-10 * max_abs.max(f64::MIN_POSITIVE) {
                return Err(Error::Contract(format!(
                    "eig_sym input is not symmetric at ({i},{j})"
                )));
            }
        }
    }

    // Row-major working copy, symmetrized; eigenvectors are kept as rows of
    // `vt` so the rotation updates stay contiguous.
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (s[[i, j]] + s[[j, i]]);
        }
    }
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        vt[i * n + i] = 1.0;
    }

    let frob = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let max_sweeps = 100 * n;
    let mut polished = false;
    let mut sweep = 0;
    loop {
        let off = off_diagonal_norm(&a, n);
        if off == 0.0 || (off <= EIG_TOL * frob && polished) {
            break;
        }
        if off <= EIG_TOL * frob {
            polished = true;
        }
        if sweep >= max_sweeps {
            return Err(Error::Convergence {
                iterations: sweep,
                delta: off,
            });
        }
        sweep += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                if apq.abs() < f64::EPSILON * 1e-3 * app.abs().min(aqq.abs()) {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_finite() {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                } else {
                    0.0
                };
                if t == 0.0 {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, n, p, q, c, sn);
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                // V <- V·J, stored transposed.
                for k in 0..n {
                    let vp = vt[p * n + k];
                    let vq = vt[q * n + k];
                    vt[p * n + k] = c * vp - sn * vq;
                    vt[q * n + k] = sn * vp + c * vq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let mut values = Array1::zeros(n);
    let mut vectors = Array2::zeros((n, n));
    for (col, &idx) in order.iter().enumerate() {
        values[col] = a[idx * n + idx];
        for k in 0..n {
            vectors[[k, col]] = vt[idx * n + k];
        }
        normalize_sign(vectors.column_mut(col));
    }
    Ok(EigenDecomposition { values, vectors })
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[i * n + j] * a[i * n + j];
            }
        }
    }
    sum.sqrt()
}

// Applies A <- Jᵀ A J to every entry outside the (p,q) block.
fn rotate(a: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[k * n + p];
        let akq = a[k * n + q];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[k * n + p] = new_kp;
        a[p * n + k] = new_kp;
        a[k * n + q] = new_kq;
        a[q * n + k] = new_kq;
    }
}

/// Principal directions of a centered `N×M` sample matrix.
///
/// Holds every component whose covariance eigenvalue clears the rank
/// threshold, plus the complete spectrum for energy bookkeeping.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    /// `N×r`, orthonormal columns.
    pub basis: Array2<f64>,
    /// Covariance eigenvalues (1/M normalization), length `r`, descending.
    pub values: Array1<f64>,
    /// Every eigenvalue of the smaller-side problem, clamped at zero.
    pub spectrum: Array1<f64>,
}

impl PcaBasis {
    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// Leading `t` components.
    pub fn truncate(&self, t: usize) -> Result<(Array2<f64>, Array1<f64>)> {
        if t == 0 || t > self.rank() {
            return Err(Error::Rank {
                requested: t,
                attainable: self.rank(),
            });
        }
        Ok((
            self.basis.slice(ndarray::s![.., ..t]).to_owned(),
            self.values.slice(ndarray::s![..t]).to_owned(),
        ))
    }
}

/// Covariance eigenbasis of centered data, solving whichever of the `N×N`
/// covariance or the `M×M` Gram matrix is smaller.
pub fn pca_decompose(x: ArrayView2<'_, f64>) -> Result<PcaBasis> {
    let (n, m) = x.dim();
    if n == 0 || m == 0 {
        return Err(Error::Rank {
            requested: 1,
            attainable: 0,
        });
    }
    let inv_m = 1.0 / m as f64;
    let rows: Vec<Vec<f64>> = if n <= m {
        x.outer_iter().map(|r| r.to_vec()).collect()
    } else {
        x.axis_iter(Axis(1)).map(|c| c.to_vec()).collect()
    };
    let gram = symmetric_gram(&rows, inv_m);
    let eig = eig_sym(gram.view())?;
    let lead = eig.values[0].max(0.0);
    let rank = if lead <= 0.0 {
        0
    } else {
        eig.values
            .iter()
            .take_while(|&&v| v > RANK_TOL * lead)
            .count()
    };
    let spectrum = eig.values.mapv(|v| v.max(0.0));
    let values = eig.values.slice(ndarray::s![..rank]).to_owned();

    let mut basis = Array2::zeros((n, rank));
    if n <= m {
        basis.assign(&eig.vectors.slice(ndarray::s![.., ..rank]));
    } else {
        for i in 0..rank {
            let v = eig.vectors.column(i);
            let mut u = x.dot(&v);
            let norm = u.dot(&u).sqrt();
            u.mapv_inplace(|e| e / norm);
            basis.column_mut(i).assign(&u);
        }
    }
    for i in 0..rank {
        normalize_sign(basis.column_mut(i));
    }
    Ok(PcaBasis {
        basis,
        values,
        spectrum,
    })
}

/// Top-`t` covariance eigenvectors (`N×t`) and eigenvalues of centered data.
pub fn snapshot_pca(x: ArrayView2<'_, f64>, t: usize) -> Result<(Array2<f64>, Array1<f64>)> {
    pca_decompose(x)?.truncate(t)
}

fn symmetric_gram(rows: &[Vec<f64>], scale: f64) -> Array2<f64> {
    let k = rows.len();
    let upper: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|i| {
            (i..k)
                .map(|j| dot(&rows[i], &rows[j]) * scale)
                .collect::<Vec<f64>>()
        })
        .collect();
    let mut g = Array2::zeros((k, k));
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            g[[i, i + off]] = v;
            g[[i + off, i]] = v;
        }
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Rbf,
    Poly2,
}

/// Kernel function and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// RBF width.
    pub sigma: f64,
    /// Additive constant of the second-degree polynomial.
    pub offset: f64,
}

impl KernelSpec {
    pub fn linear() -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            sigma: 1.0,
            offset: 0.0,
        }
    }

    pub fn rbf(sigma: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            sigma,
            offset: 0.0,
        }
    }

    pub fn poly2(offset: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Poly2,
            sigma: 1.0,
            offset,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            KernelKind::Rbf if !(self.sigma.is_finite() && self.sigma > 0.0) => {
                Err(Error::Contract(format!(
                    "rbf sigma must be finite and > 0, got {}",
                    self.sigma
                )))
            }
            KernelKind::Poly2 if !(self.offset >= 0.0) => Err(Error::Contract(format!(
                "poly2 offset must be >= 0, got {}",
                self.offset
            ))),
            _ => Ok(()),
        }
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => dot(x, y),
            KernelKind::Rbf => (-sq_dist(x, y) / (2.0 * self.sigma * self.sigma)).exp(),
            KernelKind::Poly2 => {
                let v = dot(x, y) + self.offset;
                v * v
            }
        }
    }
}

fn columns_as_rows(x: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    x.axis_iter(Axis(1)).map(|c| c.to_vec()).collect()
}

/// `p×q` kernel matrix between the columns of `x` (`N×p`) and `y` (`N×q`).
pub fn kernel_matrix(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    spec: &KernelSpec,
) -> Result<Array2<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension {
            context: "kernel_matrix",
            expected: x.nrows(),
            found: y.nrows(),
        });
    }
    spec.validate()?;
    let xs = columns_as_rows(x);
    let ys = columns_as_rows(y);
    let rows: Vec<Vec<f64>> = xs
        .par_iter()
        .map(|xi| ys.iter().map(|yj| spec.eval(xi, yj)).collect())
        .collect();
    let mut k = Array2::zeros((xs.len(), ys.len()));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            k[[i, j]] = v;
        }
    }
    Ok(k)
}

/// Column and total means of a training kernel, enough to center any test
/// kernel against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCentering {
    pub col_means: Array1<f64>,
    pub total_mean: f64,
}

impl KernelCentering {
    pub fn fit(k_train: ArrayView2<'_, f64>) -> Self {
        let m = k_train.nrows().max(1) as f64;
        let col_means = k_train.sum_axis(Axis(0)).mapv(|v| v / m);
        let total_mean = col_means.sum() / col_means.len().max(1) as f64;
        KernelCentering {
            col_means,
            total_mean,
        }
    }

    pub fn apply(&self, k_test: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let m = self.col_means.len();
        if k_test.ncols() != m {
            return Err(Error::Dimension {
                context: "center_kernel_test",
                expected: m,
                found: k_test.ncols(),
            });
        }
        let mut out = k_test.to_owned();
        for mut row in out.outer_iter_mut() {
            let row_mean = row.sum() / m as f64;
            for (v, &cm) in row.iter_mut().zip(self.col_means.iter()) {
                *v = *v - cm - row_mean + self.total_mean;
            }
        }
        Ok(out)
    }
}

/// Feature-space centering of a training kernel: `K − 1K − K1 + 1K1`.
pub fn center_kernel_train(k: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if k.nrows() != k.ncols() {
        return Err(Error::Dimension {
            context: "center_kernel_train",
            expected: k.nrows(),
            found: k.ncols(),
        });
    }
    KernelCentering::fit(k).apply(k)
}

/// Centers a `q×M` test kernel against the `M×M` training kernel.
pub fn center_kernel_test(
    k_test: ArrayView2<'_, f64>,
    k_train: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if k_train.nrows() != k_train.ncols() {
        return Err(Error::Dimension {
            context: "center_kernel_test",
            expected: k_train.nrows(),
            found: k_train.ncols(),
        });
    }
    KernelCentering::fit(k_train).apply(k_test)
}

/// Linear map to unit-covariance coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningTransform {
    /// `m×N`: Λ^(−1/2)·Uᵀ.
    pub projection: Array2<f64>,
    /// `N×m`: U·Λ^(1/2).
    pub inverse: Array2<f64>,
}

/// Whitening transform from the top-`m` principal directions of centered `x`.
pub fn whiten(x: ArrayView2<'_, f64>, m: usize) -> Result<WhiteningTransform> {
    let (basis, values) = snapshot_pca(x, m)?;
    let n = basis.nrows();
    let mut projection = Array2::zeros((m, n));
    let mut inverse = Array2::zeros((n, m));
    for i in 0..m {
        let s = values[i].sqrt();
        for k in 0..n {
            projection[[i, k]] = basis[[k, i]] / s;
            inverse[[k, i]] = basis[[k, i]] * s;
        }
    }
    Ok(WhiteningTransform {
        projection,
        inverse,
    })
}

/// Inverse of a square matrix by Gauss–Jordan elimination with partial pivoting.
pub fn invert(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension {
            context: "invert",
            expected: n,
            found: a.ncols(),
        });
    }
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut work = a.to_owned();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| work[[i, col]].abs().total_cmp(&work[[j, col]].abs()))
            .unwrap_or(col);
        let pv = work[[pivot, col]];
        if pv.abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Singular(format!("pivot {col} vanishes")));
        }
        if pivot != col {
            for k in 0..n {
                work.swap([pivot, k], [col, k]);
                inv.swap([pivot, k], [col, k]);
            }
        }
        for k in 0..n {
            work[[col, k]] /= pv;
            inv[[col, k]] /= pv;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = work[[r, col]];
            if f == 0.0 {
                continue;
            }
            for k in 0..n {
                work[[r, k]] -= f * work[[col, k]];
                inv[[r, k]] -= f * inv[[col, k]];
            }
        }
    }
    Ok(inv)
}

/// `S^(−1/2)` of a symmetric positive-definite matrix.
pub fn sym_inv_sqrt(s: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let eig = eig_sym(s)?;
    let lead = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if eig
        .values
        .iter()
        .any(|&v| v <= RANK_TOL * lead.max(f64::MIN_POSITIVE))
    {
        return Err(Error::Singular("matrix is not positive definite".into()));
    }
    let scaled = &eig.vectors * &eig.values.mapv(|v| 1.0 / v.sqrt());
    Ok(scaled.dot(&eig.vectors.t()))
}

/// Median Euclidean distance over all distinct column pairs; the default RBF width.
pub fn median_pairwise_distance(x: ArrayView2<'_, f64>) -> f64 {
    let cols = columns_as_rows(x);
    let mut d: Vec<f64> = (0..cols.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let cols = &cols;
            ((i + 1)..cols.len()).map(move |j| sq_dist(&cols[i], &cols[j]).sqrt())
        })
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Sample covariance `XXᵀ/M` of already-centered columns.
pub fn covariance(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let m = x.ncols().max(1) as f64;
    x.dot(&x.t()) / m
}
