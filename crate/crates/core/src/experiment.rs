//! Config-driven experiments: load or synthesize data, train every declared
//! algorithm, rank the probe subsets of each category, fuse, and evaluate.
//!
//! A run is a pure function of its config. Every random draw comes from a
//! named substream of the root seed, and parallel stages collect in input
//! order, so bundles do not depend on the thread count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    build_data_matrix, probe_subsets_from_pool, Category, DataMatrix, ImageSample, IngestOptions,
    SampleFilter,
};
use crate::error::{Error, Result};
use crate::eval::{
    cms_curve, mcnemar_across_ranks, rank1_table, rank_of_truth, CategoryOutcomes, CmsCurve,
    EvalCategory, McNemarReport, OutcomeMatrix, Rank1Table,
};
use crate::fusion::{
    fuse, weights_method1, weights_method2, AccuracySummary, CategoryWinTable, FusionWeights,
    Normalization, ScoreTable,
};
use crate::ica::{train_ica, Architecture, IcaConfig};
use crate::matcher::{build_gallery, GalleryIndex, Metric, MetricKind, RankedList};
use crate::numerics::{median_pairwise_distance, KernelKind, KernelSpec};
use crate::persist::{ModelContainer, StoredModel};
use crate::subspace::{
    train_kda, train_kpca, train_lda, train_pca, DimensionalityPolicy, SubspaceKind,
};

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    /// Root of every random substream.
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub data: DataSource,
    #[serde(default)]
    pub protocol: Protocol,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default)]
    pub fusion: Option<FusionConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Directory relative paths are resolved against; not part of the hash.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Images {
        dir: PathBuf,
        #[serde(default)]
        manifest: Option<PathBuf>,
        rows: usize,
        cols: usize,
        #[serde(default)]
        equalize: bool,
    },
    Synthetic(SuiteSpec),
}

/// Synthetic stand-in for a face database: Gaussian classes with one
/// corruption model per evaluation category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSpec {
    pub num_classes: usize,
    pub ambient_dim: usize,
    pub between_scale: f64,
    pub within_scale: f64,
    /// Neutral training draws per class and session.
    pub train_per_session: usize,
    /// Draws per class, session and corrupted category.
    pub probes_per_session: usize,
    /// Session-2 neutral probes per class.
    pub time_probes: usize,
    /// Held-out draws per class and session (session 2 only for time delay).
    pub validation_per_session: usize,
    /// Session-2 class drift, per coordinate.
    pub drift_scale: f64,
    /// Extra isotropic noise on expression probes.
    pub expression_noise: f64,
    /// Gain lies in `[1 − g, 1 + g]`.
    pub illumination_gain: f64,
    /// Scale of the additive ramp across coordinates.
    pub illumination_ramp: f64,
    /// Fraction of coordinates zeroed in occlusion probes.
    pub occlusion_fraction: f64,
    /// Lower occlusion draws from the last `region` of the coordinates,
    /// upper occlusion from the first.
    pub occlusion_region: f64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            num_classes: 20,
            ambient_dim: 100,
            between_scale: 1.0,
            within_scale: 2.0,
            train_per_session: 2,
            probes_per_session: 3,
            time_probes: 2,
            validation_per_session: 2,
            drift_scale: 0.3,
            expression_noise: 0.6,
            illumination_gain: 0.4,
            illumination_ramp: 1.0,
            occlusion_fraction: 0.4,
            occlusion_region: 0.6,
        }
    }
}

impl SuiteSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.ambient_dim == 0 {
            return Err(Error::Config(
                "suite needs at least 2 classes and 1 dimension".into(),
            ));
        }
        if self.train_per_session == 0 || self.probes_per_session == 0 || self.time_probes == 0 {
            return Err(Error::Config("suite sample counts must be positive".into()));
        }
        if !(self.between_scale > 0.0 && self.within_scale > 0.0) {
            return Err(Error::Config("suite scales must be positive".into()));
        }
        let nonneg = [
            self.drift_scale,
            self.expression_noise,
            self.illumination_ramp,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config(
                "suite noise scales must be nonnegative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.illumination_gain) {
            return Err(Error::Config("illumination_gain must lie in [0, 1)".into()));
        }
        if !(self.occlusion_fraction >= 0.0
            && self.occlusion_region > 0.0
            && self.occlusion_region <= 1.0
            && self.occlusion_fraction <= self.occlusion_region)
        {
            return Err(Error::Config(
                "need 0 <= occlusion_fraction <= occlusion_region <= 1".into(),
            ));
        }
        Ok(())
    }

    /// Filters matching the index layout of [`synth_suite`].
    pub fn protocol_filters(&self) -> (SampleFilter, ProbeFilters, ProbeFilters) {
        let n = |v: usize| v as u32;
        let train = SampleFilter::new(&[Category::Neutral], &[1, 2])
            .with_indices(1, n(self.train_per_session));
        let probe = |c: Category| {
            SampleFilter::new(&[c], &[1, 2]).with_indices(1, n(self.probes_per_session))
        };
        let time_lo = n(self.train_per_session) + 1;
        let time_hi = n(self.train_per_session + self.time_probes);
        let probes = ProbeFilters {
            expression: probe(Category::Expression),
            illumination: probe(Category::Illumination),
            lower_occlusion: probe(Category::LowerOcclusion),
            upper_occlusion: probe(Category::UpperOcclusion),
            time_delay: SampleFilter::new(&[Category::Neutral], &[2])
                .with_indices(time_lo, time_hi),
        };
        let v_lo = n(self.probes_per_session) + 1;
        let v_hi = n(self.probes_per_session + self.validation_per_session);
        let held = |c: Category| SampleFilter::new(&[c], &[1, 2]).with_indices(v_lo, v_hi);
        let validation = ProbeFilters {
            expression: held(Category::Expression),
            illumination: held(Category::Illumination),
            lower_occlusion: held(Category::LowerOcclusion),
            upper_occlusion: held(Category::UpperOcclusion),
            time_delay: SampleFilter::new(&[Category::Neutral], &[2])
                .with_indices(time_hi + 1, time_hi + n(self.validation_per_session)),
        };
        (train, probes, validation)
    }
}

/// One sample filter per evaluation category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeFilters {
    pub expression: SampleFilter,
    pub illumination: SampleFilter,
    pub lower_occlusion: SampleFilter,
    pub upper_occlusion: SampleFilter,
    pub time_delay: SampleFilter,
}

impl ProbeFilters {
    pub fn get(&self, category: EvalCategory) -> &SampleFilter {
        match category {
            EvalCategory::Expression => &self.expression,
            EvalCategory::Illumination => &self.illumination,
            EvalCategory::LowerOcclusion => &self.lower_occlusion,
            EvalCategory::UpperOcclusion => &self.upper_occlusion,
            EvalCategory::TimeDelay => &self.time_delay,
        }
    }
}

impl Default for ProbeFilters {
    fn default() -> Self {
        let both = |c: Category| SampleFilter::new(&[c], &[1, 2]);
        ProbeFilters {
            expression: both(Category::Expression),
            illumination: both(Category::Illumination),
            lower_occlusion: both(Category::LowerOcclusion),
            upper_occlusion: both(Category::UpperOcclusion),
            time_delay: SampleFilter::new(&[Category::Neutral], &[2]).with_indices(2, u32::MAX),
        }
    }
}

/// Training set and probe pools. The filters apply to image sources; the
/// synthetic suite supplies its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol {
    pub k_subsets: usize,
    pub per_subject: usize,
    /// Categories evaluated on their whole pool as a single probe set.
    pub whole_pool: Vec<EvalCategory>,
    pub train: SampleFilter,
    pub probes: ProbeFilters,
    pub validation: Option<ProbeFilters>,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            k_subsets: 10,
            per_subject: 2,
            whole_pool: vec![EvalCategory::TimeDelay],
            train: SampleFilter::new(&[Category::Neutral], &[1, 2]).with_indices(1, 1),
            probes: ProbeFilters::default(),
            validation: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Pca,
    Lda,
    Kpca,
    Kda,
    Ica,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: KernelKind,
    /// RBF width; defaults to the median pairwise training distance.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Polynomial offset; defaults to 1.
    #[serde(default)]
    pub offset: Option<f64>,
}

impl KernelConfig {
    pub fn resolve(&self, train: &DataMatrix) -> KernelSpec {
        match self.kind {
            KernelKind::Linear => KernelSpec::linear(),
            KernelKind::Rbf => KernelSpec::rbf(
                self.sigma
                    .unwrap_or_else(|| median_pairwise_distance(train.columns.view())),
            ),
            KernelKind::Poly2 => KernelSpec::poly2(self.offset.unwrap_or(1.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub tag: String,
    pub kind: AlgorithmKind,
    pub metric: MetricKind,
    /// Retained dimensionality; for ICA the PCA pre-reduction.
    #[serde(default)]
    pub dims: DimensionalityPolicy,
    #[serde(default)]
    pub kernel: Option<KernelConfig>,
    #[serde(default)]
    pub ridge: Option<f64>,
    #[serde(default)]
    pub architecture: Option<Architecture>,
    /// ICA settings; its seed and `pca_dims` are replaced by the seed
    /// substream and `dims`.
    #[serde(default)]
    pub ica: Option<IcaConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    Method1,
    Method2,
    Explicit,
}

impl FusionMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            FusionMethod::Method1 => "Hybrid-M1",
            FusionMethod::Method2 => "Hybrid-M2",
            FusionMethod::Explicit => "Hybrid",
        }
    }
}

/// Where the accuracies behind Method 1 and Method 2 come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// The held-out validation pools.
    #[default]
    Validation,
    /// The evaluation probes themselves.
    Evaluation,
    /// `wins` and `accuracies` from the config.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScope {
    #[default]
    PerProbe,
    /// Bounds fitted on the training projections of each member.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryWinner {
    pub category: EvalCategory,
    pub winner: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryAccuracies {
    pub category: EvalCategory,
    /// Percent, one per member.
    pub values: Vec<f64>,
}

fn both_methods() -> Vec<FusionMethod> {
    vec![FusionMethod::Method1, FusionMethod::Method2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub members: Vec<String>,
    #[serde(default = "both_methods")]
    pub methods: Vec<FusionMethod>,
    #[serde(default)]
    pub source: WeightSource,
    #[serde(default)]
    pub normalization: NormalizationScope,
    #[serde(default)]
    pub wins: Option<Vec<CategoryWinner>>,
    #[serde(default)]
    pub accuracies: Option<Vec<CategoryAccuracies>>,
    /// Weights of the `explicit` method.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub alpha: f64,
    /// Defaults to the number of classes.
    pub max_rank: Option<usize>,
    /// Pairs to test; all pairs when absent.
    pub mcnemar_pairs: Option<Vec<(String, String)>>,
    pub plots: bool,
    pub write_scores: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            alpha: 0.05,
            max_rank: None,
            mcnemar_pairs: None,
            plots: true,
            write_scores: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = ExperimentConfig::from_toml(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        Ok(config)
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms declared".into()));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        let p = &self.protocol;
        if p.k_subsets == 0 || p.per_subject == 0 {
            return Err(Error::Config(
                "k_subsets and per_subject must be positive".into(),
            ));
        }
        let mut tags: Vec<&str> = Vec::new();
        for a in &self.algorithms {
            if a.tag.is_empty() || a.tag.starts_with("Hybrid") {
                return Err(Error::Config(format!("invalid algorithm tag `{}`", a.tag)));
            }
            if tags.contains(&a.tag.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate algorithm tag `{}`",
                    a.tag
                )));
            }
            tags.push(&a.tag);
            a.dims.validate()?;
            match a.kind {
                AlgorithmKind::Kpca | AlgorithmKind::Kda if a.kernel.is_none() => {
                    return Err(Error::Config(format!("`{}` needs a kernel", a.tag)));
                }
                AlgorithmKind::Ica if a.architecture.is_none() => {
                    return Err(Error::Config(format!("`{}` needs an architecture", a.tag)));
                }
                _ => {}
            }
            if let Some(cfg) = &a.ica {
                cfg.validate()?;
            }
        }
        if let Some(f) = &self.fusion {
            if f.members.is_empty() || f.methods.is_empty() {
                return Err(Error::Config("fusion needs members and methods".into()));
            }
            for m in &f.members {
                if !tags.contains(&m.as_str()) {
                    return Err(Error::Config(format!(
                        "fusion member `{m}` is not declared"
                    )));
                }
            }
            if f.methods.contains(&FusionMethod::Explicit) {
                match &f.weights {
                    Some(w) if w.len() == f.members.len() => {
                        FusionWeights::new(w.clone())?;
                    }
                    _ => {
                        return Err(Error::Config(
                            "explicit fusion needs one weight per member".into(),
                        ))
                    }
                }
            }
            if f.source == WeightSource::Explicit {
                if f.methods.contains(&FusionMethod::Method1) && f.wins.is_none() {
                    return Err(Error::Config("explicit method1 needs `wins`".into()));
                }
                if f.methods.contains(&FusionMethod::Method2) && f.accuracies.is_none() {
                    return Err(Error::Config("explicit method2 needs `accuracies`".into()));
                }
            }
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed of the named substream of `root`.
pub fn substream(root: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// All samples with the training set and per-category probe pools.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<ImageSample>,
    pub train: Vec<usize>,
    /// In [`EvalCategory::ALL`] order.
    pub probes: Vec<(EvalCategory, Vec<usize>)>,
    pub validation: Option<Vec<(EvalCategory, Vec<usize>)>>,
}

fn occlude(x: &mut [f64], fraction: f64, region: f64, lower: bool, rng: &mut ChaCha8Rng) {
    let n = x.len();
    let width = ((region * n as f64).round() as usize).clamp(1, n);
    let k = ((fraction * n as f64).round() as usize).min(width);
    let start = if lower { n - width } else { 0 };
    for i in sample_indices(rng, width, k) {
        x[start + i] = 0.0;
    }
}

/// Draws the synthetic suite.
pub fn synth_suite(spec: &SuiteSpec, seed: u64) -> Result<Vec<ImageSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |scale: f64, rng: &mut ChaCha8Rng| -> f64 {
        Normal::new(0.0, scale).expect("validated").sample(rng)
    };
    let d = spec.ambient_dim;
    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..d)
                .map(|_| gauss(spec.between_scale, &mut rng))
                .collect()
        })
        .collect();
    let drift: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..d)
                .map(|_| {
                    if spec.drift_scale > 0.0 {
                        gauss(spec.drift_scale, &mut rng)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let ramp: Vec<f64> = (0..d)
        .map(|i| {
            if d > 1 {
                2.0 * i as f64 / (d - 1) as f64 - 1.0
            } else {
                0.0
            }
        })
        .collect();

    let mut out = Vec::new();
    let mut push =
        |class: usize, session: u8, category: Category, index: usize, rng: &mut ChaCha8Rng| {
            let mut x: Vec<f64> = (0..d)
                .map(|i| {
                    let shift = if session == 2 { drift[class][i] } else { 0.0 };
                    means[class][i] + shift + gauss(spec.within_scale, rng)
                })
                .collect();
            match category {
                Category::Neutral => {}
                Category::Expression => {
                    if spec.expression_noise > 0.0 {
                        for v in x.iter_mut() {
                            *v += gauss(spec.expression_noise, rng);
                        }
                    }
                }
                Category::Illumination => {
                    let g = spec.illumination_gain;
                    let gain = if g > 0.0 {
                        rng.random_range(1.0 - g..1.0 + g)
                    } else {
                        1.0
                    };
                    let slope = rng.random_range(-1.0..1.0) * spec.illumination_ramp;
                    for (v, r) in x.iter_mut().zip(&ramp) {
                        *v = gain * *v + slope * r;
                    }
                }
                Category::LowerOcclusion | Category::UpperOcclusion => occlude(
                    &mut x,
                    spec.occlusion_fraction,
                    spec.occlusion_region,
                    category == Category::LowerOcclusion,
                    rng,
                ),
            }
            out.push(ImageSample {
                subject_id: class as u32,
                session,
                category,
                index: index as u32,
                pixels: x,
                filename: None,
            });
        };

    let corrupted = [
        Category::Expression,
        Category::Illumination,
        Category::LowerOcclusion,
        Category::UpperOcclusion,
    ];
    for class in 0..spec.num_classes {
        for session in [1u8, 2] {
            for i in 1..=spec.train_per_session {
                push(class, session, Category::Neutral, i, &mut rng);
            }
            for &cat in &corrupted {
                for i in 1..=spec.probes_per_session + spec.validation_per_session {
                    push(class, session, cat, i, &mut rng);
                }
            }
        }
        let extra = spec.time_probes + spec.validation_per_session;
        for i in 1..=extra {
            push(
                class,
                2,
                Category::Neutral,
                spec.train_per_session + i,
                &mut rng,
            );
        }
    }
    Ok(out)
}

fn check_disjoint(a: &[usize], b: &[usize], samples: &[ImageSample], what: &str) -> Result<()> {
    if let Some(&shared) = a.iter().find(|i| b.binary_search(i).is_ok()) {
        let s = &samples[shared];
        return Err(Error::Split {
            subject: s.subject_id,
            reason: format!(
                "{what}: sample {} session {} #{} is in both sets",
                s.category, s.session, s.index
            ),
        });
    }
    Ok(())
}

/// Loads or synthesizes the samples and applies the protocol filters.
pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let (samples, train_f, probe_f, val_f) = match &config.data {
        DataSource::Images {
            dir,
            manifest,
            rows,
            cols,
            equalize,
        } => {
            let opts = IngestOptions {
                rows: *rows,
                cols: *cols,
                equalize: *equalize,
            };
            let dir = config.resolve_path(dir);
            let samples = match manifest {
                Some(m) => crate::data::load_with_manifest(&dir, &config.resolve_path(m), &opts)?,
                None => crate::data::load_image_dir_with(&dir, &opts)?,
            };
            let p = &config.protocol;
            (
                samples,
                p.train.clone(),
                p.probes.clone(),
                p.validation.clone(),
            )
        }
        DataSource::Synthetic(spec) => {
            let samples = synth_suite(spec, substream(config.seed, "data/synthetic"))?;
            let (t, p, v) = spec.protocol_filters();
            let v = (spec.validation_per_session > 0).then_some(v);
            (samples, t, p, v)
        }
    };
    let train = train_f.select(&samples);
    if train.is_empty() {
        return Err(Error::Config("training filter selects no samples".into()));
    }
    let pools = |filters: &ProbeFilters, what: &str| -> Result<Vec<(EvalCategory, Vec<usize>)>> {
        EvalCategory::ALL
            .iter()
            .map(|&cat| {
                let pool = filters.get(cat).select(&samples);
                check_disjoint(&train, &pool, &samples, what)?;
                Ok((cat, pool))
            })
            .collect()
    };
    let probes = pools(&probe_f, "train/probe overlap")?;
    let validation = match &val_f {
        Some(v) => {
            let val = pools(v, "train/validation overlap")?;
            for ((_, p), (_, q)) in probes.iter().zip(&val) {
                check_disjoint(p, q, &samples, "probe/validation overlap")?;
            }
            Some(val)
        }
        None => None,
    };
    Ok(Dataset {
        samples,
        train,
        probes,
        validation,
    })
}

fn sample_name(s: &ImageSample) -> String {
    s.filename
        .clone()
        .unwrap_or_else(|| format!("s{}_{}_{}_{}", s.subject_id, s.session, s.category, s.index))
}

fn raw_columns(samples: &[ImageSample], refs: &[usize]) -> Array2<f64> {
    let n = samples[refs[0]].pixels.len();
    let mut x = Array2::zeros((n, refs.len()));
    for (j, &r) in refs.iter().enumerate() {
        for (i, &v) in samples[r].pixels.iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    x
}

impl StoredModel {
    pub fn project_raw(&self, y: ndarray::ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self {
            StoredModel::Subspace(m) => m.project_raw(y),
            StoredModel::Ica(m) => m.project_raw(y),
        }
    }

    pub fn train_coords(&self) -> &Array2<f64> {
        match self {
            StoredModel::Subspace(m) => &m.train_coords,
            StoredModel::Ica(m) => &m.train_repr,
        }
    }

    pub fn train_labels(&self) -> &[u32] {
        match self {
            StoredModel::Subspace(m) => &m.train_labels,
            StoredModel::Ica(m) => &m.train_labels,
        }
    }

    pub fn metric_weights(&self) -> Array1<f64> {
        match self {
            StoredModel::Subspace(m) => m.metric_weights(),
            StoredModel::Ica(m) => m.axis_variance.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.train_coords().nrows()
    }
}

/// A trained algorithm ready to match probes.
#[derive(Debug, Clone)]
pub struct Trained {
    pub tag: String,
    pub model: StoredModel,
    pub gallery: GalleryIndex,
    pub metric: Metric,
}

impl Trained {
    pub fn new(tag: &str, model: StoredModel, metric: MetricKind) -> Result<Self> {
        let mut gallery = build_gallery(model.train_coords().view(), model.train_labels())?;
        gallery.source = tag.to_string();
        let weights = model.metric_weights();
        let metric = Metric::with_spectrum(metric, weights.as_slice().unwrap_or(&[]))?;
        Ok(Trained {
            tag: tag.to_string(),
            model,
            gallery,
            metric,
        })
    }

    /// Distances from every column of `raw` to every gallery class.
    pub fn distances(&self, raw: ndarray::ArrayView2<'_, f64>) -> Result<Vec<Vec<f64>>> {
        let coords = self.model.project_raw(raw)?;
        coords
            .columns()
            .into_iter()
            .map(|c| self.gallery.distances(c, &self.metric))
            .collect()
    }
}

/// Trains one algorithm on the training matrix.
pub fn train_algorithm(
    spec: &AlgorithmSpec,
    dims: &DimensionalityPolicy,
    x: &DataMatrix,
    root_seed: u64,
) -> Result<StoredModel> {
    let model = match spec.kind {
        AlgorithmKind::Pca => StoredModel::Subspace(train_pca(x, dims)?),
        AlgorithmKind::Lda => StoredModel::Subspace(train_lda(x, dims, spec.ridge)?),
        AlgorithmKind::Kpca => {
            let k = spec.kernel.expect("validated").resolve(x);
            StoredModel::Subspace(train_kpca(x, &k, dims)?)
        }
        AlgorithmKind::Kda => {
            let k = spec.kernel.expect("validated").resolve(x);
            StoredModel::Subspace(train_kda(x, &k, dims, spec.ridge)?)
        }
        AlgorithmKind::Ica => {
            let mut cfg = spec.ica.clone().unwrap_or_default();
            cfg.seed = substream(root_seed, &format!("ica/{}", spec.tag));
            cfg.pca_dims = *dims;
            let arch = spec.architecture.expect("validated");
            StoredModel::Ica(train_ica(x, arch, &cfg)?)
        }
    };
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSeed {
    pub name: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub method: FusionMethod,
    /// `None` when the weights apply to every category.
    pub category: Option<EvalCategory>,
    pub members: Vec<String>,
    pub weights: Vec<f64>,
    /// The accuracies (percent) or winners the weights were derived from.
    pub basis: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub category: EvalCategory,
    pub subset: usize,
    pub table: ScoreTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryResult {
    pub category: EvalCategory,
    /// Probes per subset, in order; rows of `outcomes` follow the subsets.
    pub subset_sizes: Vec<usize>,
    pub outcomes: OutcomeMatrix,
    pub cms: Vec<CmsCurve>,
    pub mcnemar: Vec<McNemarReport>,
}

impl CategoryResult {
    /// Ranks of `algorithm`, one vector per probe subset.
    pub fn subsets(&self, algorithm: &str) -> Option<Vec<Vec<usize>>> {
        let col = self.outcomes.column(algorithm)?;
        let mut out = Vec::with_capacity(self.subset_sizes.len());
        let mut start = 0;
        for &n in &self.subset_sizes {
            out.push(col[start..start + n].to_vec());
            start += n;
        }
        Some(out)
    }
}

/// Everything a run produces apart from wall-clock timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seeds: Vec<NamedSeed>,
    pub num_classes: usize,
    pub algorithms: Vec<String>,
    pub models: Vec<ModelContainer>,
    pub fusion_weights: Vec<WeightRecord>,
    /// Normalized tables of fusion members and fused hybrids.
    pub score_tables: Vec<ScoreRecord>,
    pub categories: Vec<CategoryResult>,
    pub rank1: Rank1Table,
}

impl ResultBundle {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Parses a bundle and checks that its hash matches its config.
    pub fn from_json(text: &str) -> Result<Self> {
        let b: ResultBundle =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if b.config.hash() != b.config_hash {
            return Err(Error::Serialization(
                "bundle config hash does not match its config".into(),
            ));
        }
        Ok(b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ResultBundle::from_json(&text)
    }

    pub fn category(&self, category: EvalCategory) -> Option<&CategoryResult> {
        self.categories.iter().find(|c| c.category == category)
    }

    /// Pooled rank-1 fraction of `algorithm` on `category`.
    pub fn rank1(&self, category: EvalCategory, algorithm: &str) -> Option<f64> {
        let ci = self.rank1.categories.iter().position(|&c| c == category)?;
        let ai = self.rank1.algorithms.iter().position(|a| a == algorithm)?;
        self.rank1.cells[ci][ai].as_ref().map(|c| c.fraction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub algorithm: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub bundle: ResultBundle,
    pub timings: Vec<Timing>,
}

struct ProbeSubset {
    index: usize,
    refs: Vec<usize>,
}

fn subsets_for(
    config: &ExperimentConfig,
    dataset: &Dataset,
    category: EvalCategory,
    pool: &[usize],
    seeds: &mut Vec<NamedSeed>,
) -> Result<Vec<ProbeSubset>> {
    if pool.is_empty() {
        return Err(Error::Config(format!("no probes for category {category}")));
    }
    let p = &config.protocol;
    if p.whole_pool.contains(&category) {
        return Ok(vec![ProbeSubset {
            index: 1,
            refs: pool.to_vec(),
        }]);
    }
    let name = format!("probes/{category}");
    let seed = substream(config.seed, &name);
    seeds.push(NamedSeed { name, seed });
    let tagged: Vec<(usize, u32)> = pool
        .iter()
        .map(|&i| (i, dataset.samples[i].subject_id))
        .collect();
    Ok(
        probe_subsets_from_pool(&tagged, p.k_subsets, p.per_subject, seed)?
            .into_iter()
            .map(|s| ProbeSubset {
                index: s.subset_index,
                refs: s.sample_refs,
            })
            .collect(),
    )
}

/// Per-algorithm distance rows and truth ranks for a set of samples.
struct Probed {
    /// Sample index → row.
    row_of: BTreeMap<usize, usize>,
    /// `[algorithm][row]`.
    distances: Vec<Vec<Vec<f64>>>,
    ranks: Vec<Vec<usize>>,
}

fn probe_all(trained: &[Trained], samples: &[ImageSample], refs: &[usize]) -> Result<Probed> {
    let raw = raw_columns(samples, refs);
    let per_alg: Vec<(Vec<Vec<f64>>, Vec<usize>)> = trained
        .par_iter()
        .map(|t| {
            let d = t
                .distances(raw.view())
                .map_err(|e| e.at_stage(&t.tag, "project"))?;
            let ranks = d
                .iter()
                .zip(refs)
                .map(|(row, &r)| {
                    let list = RankedList::from_distances(0, &t.gallery.class_ids, row);
                    rank_of_truth(&list, samples[r].subject_id)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at_stage(&t.tag, "rank"))?;
            Ok((d, ranks))
        })
        .collect::<Result<Vec<_>>>()?;
    let (distances, ranks) = per_alg.into_iter().unzip();
    Ok(Probed {
        row_of: refs.iter().enumerate().map(|(i, &r)| (r, i)).collect(),
        distances,
        ranks,
    })
}

fn rank1_fraction(ranks: &[usize]) -> f64 {
    ranks.iter().filter(|&&r| r == 1).count() as f64 / ranks.len() as f64
}

fn percent_rank1(ranks: &[usize]) -> f64 {
    100.0 * rank1_fraction(ranks)
}

struct FusionPlan {
    members: Vec<usize>,
    normalization: Vec<Normalization>,
    /// Per method: weights per category in ALL order.
    weights: Vec<(FusionMethod, Vec<FusionWeights>)>,
    records: Vec<WeightRecord>,
}

fn plan_fusion(
    fc: &FusionConfig,
    trained: &[Trained],
    dataset: &Dataset,
    eval_acc: &dyn Fn(usize, EvalCategory) -> f64,
    validation: Option<&Probed>,
    train_raw: &Array2<f64>,
) -> Result<FusionPlan> {
    let members: Vec<usize> = fc
        .members
        .iter()
        .map(|m| trained.iter().position(|t| &t.tag == m).expect("validated"))
        .collect();
    let member_tags = fc.members.clone();

    // Accuracies per category (ALL order), one per member.
    let accuracies: Vec<Vec<f64>> = match fc.source {
        WeightSource::Evaluation => EvalCategory::ALL
            .iter()
            .map(|&c| members.iter().map(|&a| eval_acc(a, c)).collect())
            .collect(),
        WeightSource::Validation => {
            let (v, pools) = match (validation, &dataset.validation) {
                (Some(v), Some(p)) => (v, p),
                _ => {
                    return Err(Error::Config(
                        "fusion source `validation` needs validation pools".into(),
                    ))
                }
            };
            pools
                .iter()
                .map(|(cat, pool)| {
                    if pool.is_empty() {
                        return Err(Error::Config(format!("empty validation pool for {cat}")));
                    }
                    Ok(members
                        .iter()
                        .map(|&a| {
                            let ranks: Vec<usize> =
                                pool.iter().map(|r| v.ranks[a][v.row_of[r]]).collect();
                            percent_rank1(&ranks)
                        })
                        .collect())
                })
                .collect::<Result<_>>()?
        }
        WeightSource::Explicit => EvalCategory::ALL
            .iter()
            .map(|&c| {
                fc.accuracies
                    .as_ref()
                    .and_then(|acc| acc.iter().find(|a| a.category == c))
                    .map(|a| a.values.clone())
                    .unwrap_or_default()
            })
            .collect(),
    };

    let mut weights = Vec::new();
    let mut records = Vec::new();
    for &method in &fc.methods {
        let per_cat: Vec<FusionWeights> = match method {
            FusionMethod::Method1 => {
                let winners: BTreeMap<EvalCategory, String> = match fc.source {
                    WeightSource::Explicit => fc
                        .wins
                        .as_ref()
                        .expect("validated")
                        .iter()
                        .map(|w| (w.category, w.winner.clone()))
                        .collect(),
                    // Ties go to the member listed first.
                    _ => EvalCategory::ALL
                        .iter()
                        .zip(&accuracies)
                        .map(|(&c, acc)| {
                            let mut best = 0;
                            for (i, &a) in acc.iter().enumerate() {
                                if a > acc[best] {
                                    best = i;
                                }
                            }
                            (c, member_tags[best].clone())
                        })
                        .collect(),
                };
                let table = CategoryWinTable::new(winners.clone())?;
                let w = weights_method1(&table, &member_tags)?;
                records.push(WeightRecord {
                    method,
                    category: None,
                    members: member_tags.clone(),
                    weights: w.weights.clone(),
                    basis: EvalCategory::ALL
                        .iter()
                        .map(|c| format!("{c}:{}", winners[c]))
                        .collect(),
                });
                vec![w; EvalCategory::ALL.len()]
            }
            FusionMethod::Method2 => EvalCategory::ALL
                .iter()
                .zip(&accuracies)
                .map(|(&c, acc)| {
                    if acc.len() != members.len() {
                        return Err(Error::Config(format!(
                            "need {} accuracies for {c}, found {}",
                            members.len(),
                            acc.len()
                        )));
                    }
                    let w = weights_method2(&AccuracySummary::new(acc.clone())?)?;
                    records.push(WeightRecord {
                        method,
                        category: Some(c),
                        members: member_tags.clone(),
                        weights: w.weights.clone(),
                        basis: acc.iter().map(|a| a.to_string()).collect(),
                    });
                    Ok(w)
                })
                .collect::<Result<_>>()?,
            FusionMethod::Explicit => {
                let w = FusionWeights::new(fc.weights.clone().expect("validated"))?;
                records.push(WeightRecord {
                    method,
                    category: None,
                    members: member_tags.clone(),
                    weights: w.weights.clone(),
                    basis: Vec::new(),
                });
                vec![w; EvalCategory::ALL.len()]
            }
        };
        weights.push((method, per_cat));
    }

    let normalization = members
        .iter()
        .map(|&a| -> Result<Normalization> {
            Ok(match fc.normalization {
                NormalizationScope::PerProbe => Normalization::PerProbe,
                NormalizationScope::Global => {
                    let t = &trained[a];
                    let d = t.distances(train_raw.view())?;
                    let ids = (0..d.len()).map(|i| i.to_string()).collect();
                    let table =
                        ScoreTable::from_distances(&t.tag, t.gallery.class_ids.clone(), ids, &d)?;
                    Normalization::fit_global(&table)
                }
            })
        })
        .collect::<Result<_>>()?;

    Ok(FusionPlan {
        members,
        normalization,
        weights,
        records,
    })
}

/// Runs the configured experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let mut timings = Vec::new();
    let mut seeds = Vec::new();
    let clock = Instant::now();
    let dataset = load_dataset(config)?;
    if matches!(config.data, DataSource::Synthetic(_)) {
        seeds.push(NamedSeed {
            name: "data/synthetic".into(),
            seed: substream(config.seed, "data/synthetic"),
        });
    }
    timings.push(Timing {
        stage: "load".into(),
        algorithm: String::new(),
        seconds: clock.elapsed().as_secs_f64(),
    });

    let train_samples: Vec<ImageSample> = dataset
        .train
        .iter()
        .map(|&i| dataset.samples[i].clone())
        .collect();
    let x = build_data_matrix(&train_samples, true)?;
    let c = x.num_classes();

    let trained: Vec<(Trained, f64)> = config
        .algorithms
        .par_iter()
        .map(|spec| {
            let start = Instant::now();
            let model = train_algorithm(spec, &spec.dims, &x, config.seed)
                .map_err(|e| e.at_stage(&spec.tag, "train"))?;
            let t = Trained::new(&spec.tag, model, spec.metric)
                .map_err(|e| e.at_stage(&spec.tag, "gallery"))?;
            Ok((t, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    for (t, secs) in &trained {
        timings.push(Timing {
            stage: "train".into(),
            algorithm: t.tag.clone(),
            seconds: *secs,
        });
    }
    let trained: Vec<Trained> = trained.into_iter().map(|(t, _)| t).collect();
    for spec in &config.algorithms {
        if spec.kind == AlgorithmKind::Ica {
            let name = format!("ica/{}", spec.tag);
            let seed = substream(config.seed, &name);
            seeds.push(NamedSeed { name, seed });
        }
    }

    // Probe subsets per category.
    let mut subsets: Vec<(EvalCategory, Vec<ProbeSubset>)> = Vec::new();
    for (cat, pool) in &dataset.probes {
        subsets.push((*cat, subsets_for(config, &dataset, *cat, pool, &mut seeds)?));
    }
    let mut needed: Vec<usize> = subsets
        .iter()
        .flat_map(|(_, s)| s.iter().flat_map(|p| p.refs.iter().copied()))
        .collect();
    needed.sort_unstable();
    needed.dedup();

    let clock = Instant::now();
    let probed = probe_all(&trained, &dataset.samples, &needed)?;
    let validation = match (&config.fusion, &dataset.validation) {
        (Some(f), Some(pools)) if f.source == WeightSource::Validation => {
            let mut refs: Vec<usize> = pools.iter().flat_map(|(_, p)| p.iter().copied()).collect();
            refs.sort_unstable();
            refs.dedup();
            if refs.is_empty() {
                None
            } else {
                Some(probe_all(&trained, &dataset.samples, &refs)?)
            }
        }
        _ => None,
    };
    timings.push(Timing {
        stage: "project".into(),
        algorithm: String::new(),
        seconds: clock.elapsed().as_secs_f64(),
    });

    let eval_acc = |a: usize, cat: EvalCategory| -> f64 {
        let (_, subs) = subsets
            .iter()
            .find(|(c, _)| *c == cat)
            .expect("all categories");
        let ranks: Vec<usize> = subs
            .iter()
            .flat_map(|s| s.refs.iter().map(|r| probed.ranks[a][probed.row_of[r]]))
            .collect();
        percent_rank1(&ranks)
    };

    let train_raw = x.raw();
    let plan = match &config.fusion {
        Some(fc) => Some(
            plan_fusion(
                fc,
                &trained,
                &dataset,
                &eval_acc,
                validation.as_ref(),
                &train_raw,
            )
            .map_err(|e| e.at_stage("fusion", "weights"))?,
        ),
        None => None,
    };

    let mut algorithms: Vec<String> = trained.iter().map(|t| t.tag.clone()).collect();
    if let Some(p) = &plan {
        algorithms.extend(p.weights.iter().map(|(m, _)| m.tag().to_string()));
    }

    let clock = Instant::now();
    let mut score_tables = Vec::new();
    let mut categories = Vec::new();
    let mut rank_inputs = Vec::new();
    for (ci, (cat, subs)) in subsets.iter().enumerate() {
        let mut probe_ids = Vec::new();
        let mut rows: Vec<Vec<usize>> = Vec::new();
        let mut sizes = Vec::new();
        for s in subs {
            let ids: Vec<String> = s
                .refs
                .iter()
                .map(|&r| format!("{}:{}", s.index, sample_name(&dataset.samples[r])))
                .collect();
            let mut ranks: Vec<Vec<usize>> = s
                .refs
                .iter()
                .map(|r| {
                    trained
                        .iter()
                        .enumerate()
                        .map(|(a, _)| probed.ranks[a][probed.row_of[r]])
                        .collect()
                })
                .collect();
            if let Some(p) = &plan {
                let tables: Vec<ScoreTable> = p
                    .members
                    .iter()
                    .zip(&p.normalization)
                    .map(|(&a, norm)| {
                        let d: Vec<Vec<f64>> = s
                            .refs
                            .iter()
                            .map(|r| probed.distances[a][probed.row_of[r]].clone())
                            .collect();
                        let t = ScoreTable::from_distances(
                            &trained[a].tag,
                            trained[a].gallery.class_ids.clone(),
                            ids.clone(),
                            &d,
                        )?;
                        Ok(t.normalized(norm))
                    })
                    .collect::<Result<_>>()
                    .map_err(|e| e.at_stage("fusion", "normalize"))?;
                for (method, per_cat) in &p.weights {
                    let mut fused = fuse(&tables, &per_cat[ci])
                        .map_err(|e| e.at_stage(method.tag(), "fuse"))?;
                    fused.classifier = method.tag().to_string();
                    for (row, (list, &r)) in
                        ranks.iter_mut().zip(fused.rankings().iter().zip(&s.refs))
                    {
                        row.push(
                            rank_of_truth(list, dataset.samples[r].subject_id)
                                .map_err(|e| e.at_stage(method.tag(), "rank"))?,
                        );
                    }
                    if config.eval.write_scores {
                        score_tables.push(ScoreRecord {
                            category: *cat,
                            subset: s.index,
                            table: fused,
                        });
                    }
                }
                if config.eval.write_scores {
                    for t in tables {
                        score_tables.push(ScoreRecord {
                            category: *cat,
                            subset: s.index,
                            table: t,
                        });
                    }
                }
            }
            sizes.push(s.refs.len());
            probe_ids.extend(ids);
            rows.extend(ranks);
        }
        let outcomes = OutcomeMatrix::new(probe_ids, algorithms.clone(), c, rows)?;
        let result = evaluate_category(config, *cat, sizes, outcomes)?;
        for alg in &algorithms {
            rank_inputs.push(CategoryOutcomes {
                category: *cat,
                algorithm: alg.clone(),
                subsets: result.subsets(alg).expect("declared"),
            });
        }
        categories.push(result);
    }
    let rank1 = rank1_table(&rank_inputs)?;
    timings.push(Timing {
        stage: "evaluate".into(),
        algorithm: String::new(),
        seconds: clock.elapsed().as_secs_f64(),
    });

    let models = trained
        .iter()
        .map(|t| ModelContainer::new(t.tag.clone(), t.model.clone()))
        .collect();
    let bundle = ResultBundle {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        config_hash: config.hash(),
        seeds,
        num_classes: c,
        algorithms,
        models,
        fusion_weights: plan.map(|p| p.records).unwrap_or_default(),
        score_tables,
        categories,
        rank1,
    };
    Ok(RunOutput { bundle, timings })
}

fn evaluate_category(
    config: &ExperimentConfig,
    category: EvalCategory,
    subset_sizes: Vec<usize>,
    outcomes: OutcomeMatrix,
) -> Result<CategoryResult> {
    let c = outcomes.num_classes;
    let max_rank = config.eval.max_rank.unwrap_or(c).clamp(1, c);
    let columns: Vec<Vec<usize>> = outcomes
        .algorithms
        .iter()
        .map(|a| outcomes.column(a).expect("own column"))
        .collect();
    let cms = outcomes
        .algorithms
        .iter()
        .zip(&columns)
        .map(|(a, col)| {
            let mut curve = cms_curve(col, c)?;
            curve.algorithm = a.clone();
            curve.probe_set = category.to_string();
            Ok(curve)
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = match &config.eval.mcnemar_pairs {
        Some(list) => list
            .iter()
            .map(|(a, b)| {
                let find = |t: &str| {
                    outcomes
                        .algorithms
                        .iter()
                        .position(|x| x == t)
                        .ok_or_else(|| Error::Config(format!("mcnemar pair names unknown `{t}`")))
                };
                Ok((find(a)?, find(b)?))
            })
            .collect::<Result<_>>()?,
        None => {
            let n = outcomes.algorithms.len();
            (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect()
        }
    };
    let mcnemar = pairs
        .into_iter()
        .map(|(i, j)| {
            let mut r =
                mcnemar_across_ranks(&columns[i], &columns[j], max_rank, config.eval.alpha)?;
            r.algorithm_a = outcomes.algorithms[i].clone();
            r.algorithm_b = outcomes.algorithms[j].clone();
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CategoryResult {
        category,
        subset_sizes,
        outcomes,
        cms,
        mcnemar,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t: usize,
    pub algorithm: String,
    /// Rank-1 fraction per category, in [`EvalCategory::ALL`] order.
    pub rank1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,algorithm");
        for c in EvalCategory::ALL {
            out.push(',');
            out.push_str(c.as_str());
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{}", r.t, r.algorithm));
            for v in &r.rank1 {
                out.push_str(&format!(",{:.2}", 100.0 * v));
            }
            out.push('\n');
        }
        out
    }
}

/// Rank-1 accuracy of every algorithm at each `t` in `lo..=hi`.
///
/// PCA and KPCA are trained once at `hi` and truncated; LDA, KDA and ICA
/// are retrained at each `t`.
pub fn sweep_dimensionality(
    config: &ExperimentConfig,
    lo: usize,
    hi: usize,
) -> Result<SweepReport> {
    config.validate()?;
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!("invalid sweep range {lo}..{hi}")));
    }
    let dataset = load_dataset(config)?;
    let train_samples: Vec<ImageSample> = dataset
        .train
        .iter()
        .map(|&i| dataset.samples[i].clone())
        .collect();
    let x = build_data_matrix(&train_samples, true)?;
    let mut seeds = Vec::new();
    let mut refs_by_cat = Vec::new();
    for (cat, pool) in &dataset.probes {
        let subs = subsets_for(config, &dataset, *cat, pool, &mut seeds)?;
        refs_by_cat.push(subs.into_iter().flat_map(|s| s.refs).collect::<Vec<_>>());
    }
    let mut needed: Vec<usize> = refs_by_cat.iter().flatten().copied().collect();
    needed.sort_unstable();
    needed.dedup();

    let per_alg: Vec<Vec<SweepRow>> = config
        .algorithms
        .par_iter()
        .map(|spec| {
            let at = |e: Error| e.at_stage(&spec.tag, "sweep");
            let truncatable = matches!(spec.kind, AlgorithmKind::Pca | AlgorithmKind::Kpca);
            let full = if truncatable {
                let m = train_algorithm(
                    spec,
                    &DimensionalityPolicy::Fixed { t: hi },
                    &x,
                    config.seed,
                )
                .map_err(at)?;
                if m.dim() < hi {
                    return Err(at(Error::Rank {
                        requested: hi,
                        attainable: m.dim(),
                    }));
                }
                Some(m)
            } else {
                None
            };
            (lo..=hi)
                .map(|t| {
                    let model = match &full {
                        Some(StoredModel::Subspace(m)) => {
                            StoredModel::Subspace(m.truncate(t).map_err(at)?)
                        }
                        _ => {
                            let m = train_algorithm(
                                spec,
                                &DimensionalityPolicy::Fixed { t },
                                &x,
                                config.seed,
                            )
                            .map_err(at)?;
                            if m.dim() < t {
                                return Err(at(Error::Rank {
                                    requested: t,
                                    attainable: m.dim(),
                                }));
                            }
                            m
                        }
                    };
                    let trained = Trained::new(&spec.tag, model, spec.metric).map_err(at)?;
                    let probed =
                        probe_all(std::slice::from_ref(&trained), &dataset.samples, &needed)?;
                    let rank1 = refs_by_cat
                        .iter()
                        .map(|refs| {
                            let ranks: Vec<usize> = refs
                                .iter()
                                .map(|r| probed.ranks[0][probed.row_of[r]])
                                .collect();
                            rank1_fraction(&ranks)
                        })
                        .collect();
                    Ok(SweepRow {
                        t,
                        algorithm: spec.tag.clone(),
                        rank1,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(SweepReport {
        config_hash: config.hash(),
        rows: per_alg.into_iter().flatten().collect(),
    })
}

/// Names every model family for reporting.
pub fn model_kind_name(model: &StoredModel) -> &'static str {
    match model {
        StoredModel::Subspace(m) => match m.kind {
            SubspaceKind::Pca => "pca",
            SubspaceKind::Lda => "lda",
            SubspaceKind::Kpca => "kpca",
            SubspaceKind::Kda => "kda",
        },
        StoredModel::Ica(_) => "ica",
    }
}
