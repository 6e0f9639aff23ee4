//! Independent component analysis: FastICA and InfoMax unmixing, wrapped in
//! the two face-recognition architectures.
//!
//! Architecture I treats the PCA basis images as observations mixed over
//! pixels and yields spatially independent basis images. Architecture II
//! runs ICA on the PCA coefficients across samples and yields a factorial
//! code.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::numerics::{invert, sym_inv_sqrt, whiten};
use crate::subspace::{train_pca, DimensionalityPolicy, SubspaceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcaAlgorithm {
    Infomax,
    Fastica,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Logistic,
    Tanh,
    Cube,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Arch1,
    Arch2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcaConfig {
    pub algorithm: IcaAlgorithm,
    pub nonlinearity: Nonlinearity,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// PCA pre-reduction `m`.
    pub pca_dims: DimensionalityPolicy,
    /// InfoMax only: switch sub-Gaussian components to the sub-Gaussian
    /// score function, chosen per component every sweep.
    pub extended: bool,
    /// When false, a non-converged FastICA run returns its last iterate.
    pub require_convergence: bool,
}

impl Default for IcaConfig {
    fn default() -> Self {
        IcaConfig::fastica()
    }
}

impl IcaConfig {
    pub fn fastica() -> Self {
        IcaConfig {
            algorithm: IcaAlgorithm::Fastica,
            nonlinearity: Nonlinearity::Tanh,
            learning_rate: 0.01,
            max_iters: 1000,
            tol: 1e-6,
            seed: 0,
            pca_dims: DimensionalityPolicy::default(),
            extended: true,
            require_convergence: true,
        }
    }

    pub fn infomax() -> Self {
        IcaConfig {
            algorithm: IcaAlgorithm::Infomax,
            nonlinearity: Nonlinearity::Logistic,
            learning_rate: 0.05,
            tol: 1e-5,
            ..IcaConfig::fastica()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!(
                "ica tol must be > 0, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("ica max_iters must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.algorithm == IcaAlgorithm::Infomax && self.nonlinearity == Nonlinearity::Cube {
            return Err(Error::Config(
                "infomax supports logistic or tanh nonlinearities".into(),
            ));
        }
        self.pca_dims.validate()
    }
}

/// Result of an unmixing run on whitened data.
#[derive(Debug, Clone)]
pub struct Unmixing {
    pub w: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_delta: f64,
}

fn check_whitened(z: ArrayView2<'_, f64>) -> Result<()> {
    let (m, n) = z.dim();
    if m == 0 || n == 0 {
        return Err(Error::Contract(
            "ica needs a nonempty whitened matrix".into(),
        ));
    }
    let cov = z.dot(&z.t()) / n as f64;
    for i in 0..m {
        for j in 0..m {
            let target = if i == j { 1.0 } else { 0.0 };
            if (cov[[i, j]] - target).abs() > 1e-3 {
                return Err(Error::Contract(format!(
                    "input is not whitened: covariance[{i},{j}] = {:.4}",
                    cov[[i, j]]
                )));
            }
        }
    }
    Ok(())
}

/// `(WWᵀ)^(−1/2)·W`.
fn symmetric_decorrelation(w: &Array2<f64>) -> Result<Array2<f64>> {
    let s = w.dot(&w.t());
    Ok(sym_inv_sqrt(s.view())?.dot(w))
}

fn random_orthogonal(m: usize, seed: u64) -> Result<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Array2::from_shape_simple_fn((m, m), || StandardNormal.sample(&mut rng));
    symmetric_decorrelation(&g)
}

/// Contrast function `g` and its derivative for the fixed-point iteration.
fn contrast(kind: Nonlinearity, u: f64) -> (f64, f64) {
    match kind {
        Nonlinearity::Tanh => {
            let t = u.tanh();
            (t, 1.0 - t * t)
        }
        Nonlinearity::Cube => (u * u * u, 3.0 * u * u),
        Nonlinearity::Logistic => {
            // 2σ(u) − 1 = tanh(u/2).
            let t = (0.5 * u).tanh();
            (t, 0.5 * (1.0 - t * t))
        }
    }
}

/// Symmetric fixed-point FastICA on whitened `z` (`m×M`).
///
/// Each sweep updates every row with `E[z·g(wᵀz)] − E[g′(wᵀz)]·w` and then
/// decorrelates symmetrically. Converged when every diagonal entry of
/// `W_new·W_oldᵀ` exceeds `1 − tol` in magnitude.
pub fn fastica(z: ArrayView2<'_, f64>, config: &IcaConfig) -> Result<Unmixing> {
    config.validate()?;
    check_whitened(z)?;
    let (m, n) = z.dim();
    let mut w = random_orthogonal(m, config.seed)?;
    let mut delta = f64::INFINITY;
    for iter in 1..=config.max_iters {
        let u = w.dot(&z);
        let mut gu = Array2::<f64>::zeros((m, n));
        let mut mean_dg = Array1::<f64>::zeros(m);
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..n {
                let (g, dg) = contrast(config.nonlinearity, u[[i, j]]);
                gu[[i, j]] = g;
                acc += dg;
            }
            mean_dg[i] = acc / n as f64;
        }
        let mut next = gu.dot(&z.t()) / n as f64;
        for i in 0..m {
            for k in 0..m {
                next[[i, k]] -= mean_dg[i] * w[[i, k]];
            }
        }
        let next = symmetric_decorrelation(&next)?;
        let overlap = next.dot(&w.t());
        let min_diag = (0..m)
            .map(|i| overlap[[i, i]].abs())
            .fold(f64::INFINITY, f64::min);
        delta = 1.0 - min_diag;
        w = next;
        if min_diag > 1.0 - config.tol {
            return Ok(Unmixing {
                w,
                iterations: iter,
                converged: true,
                final_delta: delta,
            });
        }
    }
    if config.require_convergence {
        return Err(Error::Convergence {
            iterations: config.max_iters,
            delta,
        });
    }
    Ok(Unmixing {
        w,
        iterations: config.max_iters,
        converged: false,
        final_delta: delta,
    })
}

/// Full-batch natural-gradient InfoMax on whitened `z` (`m×M`).
///
/// `ΔW = η·(I − φ(U)·Uᵀ/M)·W` with `U = W·Z`. The super-Gaussian score is
/// `φ(u) = 2g(u) − 1` for logistic `g`, i.e. the classic
/// `I + (1 − 2g(U))·Uᵀ/M` rule. With `extended`, components with negative
/// excess kurtosis use the sub-Gaussian score `u³` instead.
/// The rate decays by 0.9 every 100 sweeps.
pub fn infomax(z: ArrayView2<'_, f64>, config: &IcaConfig) -> Result<Unmixing> {
    config.validate()?;
    check_whitened(z)?;
    let (m, n) = z.dim();
    let mut w = random_orthogonal(m, config.seed)?;
    let mut rate = config.learning_rate;
    let mut delta = f64::INFINITY;
    for iter in 1..=config.max_iters {
        if iter > 1 && (iter - 1) % 100 == 0 {
            rate *= 0.9;
        }
        let u = w.dot(&z);
        let mut phi = Array2::<f64>::zeros((m, n));
        for i in 0..m {
            let row = u.row(i);
            let sub_gaussian = config.extended && {
                let nf = n as f64;
                let m2 = row.iter().map(|x| x * x).sum::<f64>() / nf;
                let m4 = row.iter().map(|x| x.powi(4)).sum::<f64>() / nf;
                m4 / (m2 * m2) < 3.0
            };
            for (j, &x) in row.iter().enumerate() {
                phi[[i, j]] = if sub_gaussian {
                    x * x * x
                } else {
                    match config.nonlinearity {
                        Nonlinearity::Tanh => x.tanh(),
                        _ => (0.5 * x).tanh(),
                    }
                };
            }
        }
        let mut grad = -(phi.dot(&u.t()) / n as f64);
        for i in 0..m {
            grad[[i, i]] += 1.0;
        }
        let step = grad.dot(&w) * rate;
        w += &step;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::LearningRate {
                rate: config.learning_rate,
                iteration: iter,
            });
        }
        delta = step.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if delta < config.tol {
            return Ok(Unmixing {
                w,
                iterations: iter,
                converged: true,
                final_delta: delta,
            });
        }
    }
    Ok(Unmixing {
        w,
        iterations: config.max_iters,
        converged: false,
        final_delta: delta,
    })
}

/// Runs the configured unmixing algorithm.
pub fn unmix(z: ArrayView2<'_, f64>, config: &IcaConfig) -> Result<Unmixing> {
    match config.algorithm {
        IcaAlgorithm::Fastica => fastica(z, config),
        IcaAlgorithm::Infomax => infomax(z, config),
    }
}

/// Normalized Amari index of `p = W·A`; 0 for a scaled permutation, at most 1.
pub fn amari_index(p: ArrayView2<'_, f64>) -> f64 {
    let m = p.nrows();
    if m < 2 {
        return 0.0;
    }
    let a = p.mapv(f64::abs);
    let mut total = 0.0;
    for row in a.outer_iter() {
        let max = row.fold(0.0f64, |x, &v| x.max(v));
        total += row.sum() / max - 1.0;
    }
    for col in a.axis_iter(Axis(1)) {
        let max = col.fold(0.0f64, |x, &v| x.max(v));
        total += col.sum() / max - 1.0;
    }
    total / (2.0 * m as f64 * (m as f64 - 1.0))
}

/// A trained ICA representation on top of a PCA pre-projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaModel {
    pub architecture: Architecture,
    pub algorithm: IcaAlgorithm,
    pub pca_pre: SubspaceModel,
    /// Whitening of the ICA input, `m×m`.
    pub whitening: Array2<f64>,
    /// Unmixing found on whitened data, `m×m`.
    pub rotation: Array2<f64>,
    /// Total unmixing `W = rotation·whitening`.
    pub unmixing: Array2<f64>,
    /// `A = W⁻¹`.
    pub mixing: Array2<f64>,
    /// Arch1: independent basis images `m×N`. Arch2: mixing composition `N×m`.
    pub basis_images: Array2<f64>,
    /// Maps PCA coefficients to the representation: `Aᵀ` (arch1) or `W` (arch2).
    pub representation: Array2<f64>,
    /// Training representations, `m×M`.
    pub train_repr: Array2<f64>,
    pub train_labels: Vec<u32>,
    pub axis_variance: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl IcaModel {
    pub fn m(&self) -> usize {
        self.representation.nrows()
    }

    pub fn project_raw(&self, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let r = self.pca_pre.project_raw(y)?;
        Ok(self.representation.dot(&r))
    }
}

/// PCA-reduces `x` to `m` dimensions and learns the architecture's
/// independent representation.
pub fn train_ica(
    x: &DataMatrix,
    architecture: Architecture,
    config: &IcaConfig,
) -> Result<IcaModel> {
    config.validate()?;
    let pca = train_pca(x, &config.pca_dims)?;
    let crate::subspace::Projection::Linear { basis } = &pca.projection else {
        unreachable!("pca models are linear")
    };
    let coeffs = &pca.train_coords;
    let m = pca.t();

    // Observations for the unmixing: basis images over pixels (arch1) or
    // coefficient vectors over samples (arch2).
    let observations = match architecture {
        Architecture::Arch1 => {
            let mut centered = basis.clone();
            let means = basis.mean_axis(Axis(1)).expect("nonempty basis");
            for (mut row, mu) in centered.outer_iter_mut().zip(means.iter()) {
                row -= *mu;
            }
            centered
        }
        Architecture::Arch2 => coeffs.clone(),
    };
    let white = whiten(observations.view(), m)?;
    let z = white.projection.dot(&observations);
    let result = unmix(z.view(), config)?;
    let unmixing = result.w.dot(&white.projection);
    let mixing = invert(unmixing.view())?;
    let (basis_images, representation) = match architecture {
        Architecture::Arch1 => (unmixing.dot(basis), mixing.t().to_owned()),
        Architecture::Arch2 => (basis.t().dot(&mixing), unmixing.clone()),
    };
    let train_repr = representation.dot(coeffs);
    let n = train_repr.ncols() as f64;
    let axis_variance = train_repr
        .outer_iter()
        .map(|row| {
            let mu = row.sum() / n;
            row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n
        })
        .collect();
    Ok(IcaModel {
        architecture,
        algorithm: config.algorithm,
        whitening: white.projection,
        rotation: result.w,
        unmixing,
        mixing,
        basis_images,
        representation,
        train_repr,
        train_labels: x.labels.clone(),
        axis_variance,
        iterations: result.iterations,
        converged: result.converged,
        pca_pre: pca,
    })
}

/// Representation of the raw columns of `y`, `m×q`.
pub fn project_ica(model: &IcaModel, y: &DataMatrix) -> Result<Array2<f64>> {
    model.project_raw(y.raw().view())
}
