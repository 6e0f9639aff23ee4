//! Sample ingestion, data matrices, probe splits and synthetic classes.
//!
//! Image files are labeled from their names:
//! `s<subject>_<session>_<category>_<index>.<ext>`, where `category` is one
//! of `neutral`, `expression`, `illumination`, `lower_occlusion`,
//! `upper_occlusion`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Neutral,
    Expression,
    Illumination,
    LowerOcclusion,
    UpperOcclusion,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Neutral,
        Category::Expression,
        Category::Illumination,
        Category::LowerOcclusion,
        Category::UpperOcclusion,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Neutral => "neutral",
            Category::Expression => "expression",
            Category::Illumination => "illumination",
            Category::LowerOcclusion => "lower_occlusion",
            Category::UpperOcclusion => "upper_occlusion",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

/// One vectorized image with its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSample {
    pub subject_id: u32,
    pub session: u8,
    pub category: Category,
    /// Position within (subject, session, category), 1-based.
    pub index: u32,
    /// Raster-ordered grayscale intensities.
    pub pixels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filename: Option<String>,
}

impl ImageSample {
    pub fn validate(&self, expected_len: usize) -> Result<()> {
        if self.pixels.len() != expected_len {
            return Err(Error::Dimension {
                context: "image sample",
                expected: expected_len,
                found: self.pixels.len(),
            });
        }
        if !(1..=2).contains(&self.session) {
            return Err(Error::Contract(format!(
                "session must be 1 or 2, got {}",
                self.session
            )));
        }
        if self.pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite pixel value".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    pub rows: usize,
    pub cols: usize,
    /// Per-image histogram equalization after grayscale conversion.
    pub equalize: bool,
}

/// Parsed `s<subject>_<session>_<category>_<index>` label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileLabel {
    pub subject_id: u32,
    pub session: u8,
    pub category: Category,
    pub index: u32,
}

pub fn parse_filename(name: &str) -> Result<FileLabel> {
    let fail = |reason: &str| Error::Labeling {
        file: name.to_string(),
        reason: reason.to_string(),
    };
    let stem = Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| fail("no file stem"))?;
    let rest = stem
        .strip_prefix('s')
        .ok_or_else(|| fail("expected `s<subject>_<session>_<category>_<index>`"))?;
    let parts: Vec<&str> = rest.split('_').collect();
    if parts.len() < 4 {
        return Err(fail("expected `s<subject>_<session>_<category>_<index>`"));
    }
    let subject_id = parts[0].parse().map_err(|_| fail("bad subject id"))?;
    let session: u8 = parts[1].parse().map_err(|_| fail("bad session"))?;
    if !(1..=2).contains(&session) {
        return Err(fail("session must be 1 or 2"));
    }
    let index = parts[parts.len() - 1]
        .parse()
        .map_err(|_| fail("bad index"))?;
    let category = parts[2..parts.len() - 1]
        .join("_")
        .parse()
        .map_err(|e: String| fail(&e))?;
    Ok(FileLabel {
        subject_id,
        session,
        category,
        index,
    })
}

const IMAGE_EXTENSIONS: [&str; 4] = ["pgm", "png", "bmp", "pnm"];

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every image in `dir` as a grayscale `rows×cols` raster vector,
/// labeled from its filename. Output is in sorted filename order.
pub fn load_image_dir(dir: &Path, rows: usize, cols: usize) -> Result<Vec<ImageSample>> {
    load_image_dir_with(
        dir,
        &IngestOptions {
            rows,
            cols,
            equalize: false,
        },
    )
}

pub fn load_image_dir_with(dir: &Path, opts: &IngestOptions) -> Result<Vec<ImageSample>> {
    let files = list_images(dir)?;
    files
        .par_iter()
        .map(|path| {
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            let label = parse_filename(&name)?;
            let pixels = load_pixels(path, opts)?;
            Ok(ImageSample {
                subject_id: label.subject_id,
                session: label.session,
                category: label.category,
                index: label.index,
                pixels,
                filename: Some(name),
            })
        })
        .collect()
}

/// Loads images listed in a manifest (`filename,subject,session,category`
/// per line), resolving filenames relative to `dir`.
pub fn load_with_manifest(
    dir: &Path,
    manifest: &Path,
    opts: &IngestOptions,
) -> Result<Vec<ImageSample>> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut entries = Vec::new();
    let mut counters: BTreeMap<(u32, u8, Category), u32> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |reason: String| Error::Labeling {
            file: format!("{}:{}", manifest.display(), lineno + 1),
            reason,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(fail(format!("expected 4 fields, found {}", fields.len())));
        }
        let subject_id: u32 = fields[1].parse().map_err(|_| fail("bad subject".into()))?;
        let session: u8 = fields[2].parse().map_err(|_| fail("bad session".into()))?;
        let category: Category = fields[3].parse().map_err(fail)?;
        let counter = counters.entry((subject_id, session, category)).or_insert(0);
        *counter += 1;
        entries.push((
            fields[0].to_string(),
            subject_id,
            session,
            category,
            *counter,
        ));
    }
    entries
        .par_iter()
        .map(|(name, subject_id, session, category, index)| {
            let pixels = load_pixels(&dir.join(name), opts)?;
            let sample = ImageSample {
                subject_id: *subject_id,
                session: *session,
                category: *category,
                index: *index,
                pixels,
                filename: Some(name.clone()),
            };
            sample.validate(opts.rows * opts.cols)?;
            Ok(sample)
        })
        .collect()
}

fn load_pixels(path: &Path, opts: &IngestOptions) -> Result<Vec<f64>> {
    let img = image::open(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    // 16-bit channels: 8-bit sources widen by exactly 257.
    let rgb = img.to_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut gray = Vec::with_capacity(w * h);
    for p in rgb.pixels() {
        let sum = p.0.iter().map(|&c| c as f64 / 257.0).sum::<f64>();
        gray.push(sum / 3.0);
    }
    let mut pixels = if (h, w) == (opts.rows, opts.cols) {
        gray
    } else {
        resize_bilinear(&gray, h, w, opts.rows, opts.cols)
    };
    if opts.equalize {
        equalize_histogram(&mut pixels);
    }
    Ok(pixels)
}

/// Bilinear resampling of a row-major `h×w` raster to `rows×cols`, with
/// pixel-centre alignment and edge clamping.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    let sy = h as f64 / rows as f64;
    let sx = w as f64 / cols as f64;
    for r in 0..rows {
        let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let dy = fy - y0 as f64;
        for c in 0..cols {
            let fx = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let dx = fx - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - dx) + src[y0 * w + x1] * dx;
            let bottom = src[y1 * w + x0] * (1.0 - dx) + src[y1 * w + x1] * dx;
            out.push(top * (1.0 - dy) + bottom * dy);
        }
    }
    out
}

/// Histogram equalization over 256 intensity bins; constant images are left as is.
pub fn equalize_histogram(pixels: &mut [f64]) {
    let bin = |v: f64| v.round().clamp(0.0, 255.0) as usize;
    let mut hist = [0usize; 256];
    for &v in pixels.iter() {
        hist[bin(v)] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (i, &count) in hist.iter().enumerate() {
        acc += count;
        cdf[i] = acc;
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let total = pixels.len();
    if total == cdf_min {
        return;
    }
    for v in pixels.iter_mut() {
        let c = cdf[bin(*v)];
        *v = ((c - cdf_min) as f64 / (total - cdf_min) as f64 * 255.0).round();
    }
}

/// Writes `filename,subject,session,category`, one line per sample.
pub fn write_manifest(samples: &[ImageSample], path: &Path) -> Result<()> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.filename.as_deref().unwrap_or(""),
            s.subject_id,
            s.session,
            s.category
        ));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Column-wise sample matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    /// `N×M`, one sample per column.
    pub columns: Array2<f64>,
    pub mean: Array1<f64>,
    pub labels: Vec<u32>,
    pub centered: bool,
}

impl DataMatrix {
    pub fn from_columns(columns: Array2<f64>, labels: Vec<u32>, center: bool) -> Result<Self> {
        if labels.len() != columns.ncols() {
            return Err(Error::Dimension {
                context: "data matrix labels",
                expected: columns.ncols(),
                found: labels.len(),
            });
        }
        if columns.ncols() == 0 {
            return Err(Error::Contract(
                "data matrix needs at least one sample".into(),
            ));
        }
        let mean = columns
            .mean_axis(Axis(1))
            .expect("nonempty column set has a mean");
        let mut dm = DataMatrix {
            columns,
            mean,
            labels,
            centered: false,
        };
        if center {
            dm.center();
        }
        Ok(dm)
    }

    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn len(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.ncols() == 0
    }

    /// Subtracts the stored mean from every column. Idempotent.
    pub fn center(&mut self) {
        if self.centered {
            return;
        }
        for mut col in self.columns.axis_iter_mut(Axis(1)) {
            col -= &self.mean;
        }
        self.centered = true;
    }

    /// Columns in the original (uncentered) coordinates.
    pub fn raw(&self) -> Array2<f64> {
        if !self.centered {
            return self.columns.clone();
        }
        let mut raw = self.columns.clone();
        for mut col in raw.axis_iter_mut(Axis(1)) {
            col += &self.mean;
        }
        raw
    }

    /// Columns centered on the matrix's own mean.
    pub fn centered_columns(&self) -> Array2<f64> {
        let mut c = self.clone();
        c.center();
        c.columns
    }

    pub fn num_classes(&self) -> usize {
        let mut l = self.labels.clone();
        l.sort_unstable();
        l.dedup();
        l.len()
    }
}

/// Stacks sample vectors as columns; `center` subtracts the row means.
pub fn build_data_matrix(samples: &[ImageSample], center: bool) -> Result<DataMatrix> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Contract("empty sample list".into()))?;
    let n = first.pixels.len();
    let mut columns = Array2::zeros((n, samples.len()));
    for (j, s) in samples.iter().enumerate() {
        if s.pixels.len() != n {
            return Err(Error::Dimension {
                context: "build_data_matrix",
                expected: n,
                found: s.pixels.len(),
            });
        }
        for (i, &v) in s.pixels.iter().enumerate() {
            columns[[i, j]] = v;
        }
    }
    let labels = samples.iter().map(|s| s.subject_id).collect();
    DataMatrix::from_columns(columns, labels, center)
}

/// A random probe subset: indices into the sample list it was drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub subset_index: usize,
    pub sample_refs: Vec<usize>,
    pub seed: u64,
}

/// Draws `k_subsets` subsets with `per_subject` samples of every subject in
/// each. Selection is without replacement inside a subset; subsets are
/// drawn independently and may overlap.
pub fn make_probe_subsets(
    samples: &[ImageSample],
    k_subsets: usize,
    per_subject: usize,
    seed: u64,
) -> Result<Vec<ProbeSet>> {
    let pool: Vec<(usize, u32)> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (i, s.subject_id))
        .collect();
    probe_subsets_from_pool(&pool, k_subsets, per_subject, seed)
}

/// Same as [`make_probe_subsets`] over explicit `(sample index, subject)` pairs.
pub fn probe_subsets_from_pool(
    pool: &[(usize, u32)],
    k_subsets: usize,
    per_subject: usize,
    seed: u64,
) -> Result<Vec<ProbeSet>> {
    let mut by_subject: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &(idx, subject) in pool {
        by_subject.entry(subject).or_default().push(idx);
    }
    for (subject, refs) in &by_subject {
        if refs.len() < per_subject {
            return Err(Error::Split {
                subject: *subject,
                reason: format!("needs {per_subject} samples, has {}", refs.len()),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subsets = Vec::with_capacity(k_subsets);
    for k in 0..k_subsets {
        let mut refs = Vec::with_capacity(per_subject * by_subject.len());
        for members in by_subject.values() {
            let mut picked: Vec<usize> = sample_indices(&mut rng, members.len(), per_subject)
                .into_iter()
                .map(|i| members[i])
                .collect();
            picked.sort_unstable();
            refs.extend(picked);
        }
        subsets.push(ProbeSet {
            subset_index: k + 1,
            sample_refs: refs,
            seed,
        });
    }
    Ok(subsets)
}

/// Selects samples by category, session and index range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFilter {
    pub categories: Vec<Category>,
    #[serde(default = "both_sessions")]
    pub sessions: Vec<u8>,
    /// Inclusive range of per-(subject, session, category) indices.
    #[serde(default)]
    pub indices: Option<(u32, u32)>,
}

fn both_sessions() -> Vec<u8> {
    vec![1, 2]
}

impl SampleFilter {
    pub fn new(categories: &[Category], sessions: &[u8]) -> Self {
        SampleFilter {
            categories: categories.to_vec(),
            sessions: sessions.to_vec(),
            indices: None,
        }
    }

    pub fn with_indices(mut self, lo: u32, hi: u32) -> Self {
        self.indices = Some((lo, hi));
        self
    }

    pub fn matches(&self, s: &ImageSample) -> bool {
        self.categories.contains(&s.category)
            && self.sessions.contains(&s.session)
            && self
                .indices
                .is_none_or(|(lo, hi)| (lo..=hi).contains(&s.index))
    }

    pub fn select(&self, samples: &[ImageSample]) -> Vec<usize> {
        samples
            .iter()
            .enumerate()
            .filter(|(_, s)| self.matches(s))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Gallery and probe index sets; fails if any sample satisfies both filters.
pub fn split_gallery_probe(
    samples: &[ImageSample],
    gallery: &SampleFilter,
    probe: &SampleFilter,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let g = gallery.select(samples);
    let p = probe.select(samples);
    if let Some(&shared) = g.iter().find(|i| p.binary_search(i).is_ok()) {
        let s = &samples[shared];
        return Err(Error::Split {
            subject: s.subject_id,
            reason: format!(
                "sample {shared} ({} session {} #{}) is in both gallery and probe",
                s.category, s.session, s.index
            ),
        });
    }
    Ok((g, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub ambient_dim: usize,
    pub between_scale: f64,
    pub within_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(
                "synthetic spec needs at least 2 classes".into(),
            ));
        }
        if !(self.between_scale > 0.0 && self.within_scale > 0.0) {
            return Err(Error::Config("synthetic scales must be positive".into()));
        }
        if self.ambient_dim == 0 {
            return Err(Error::Config(
                "synthetic ambient_dim must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Isotropic Gaussian classes: means drawn once, samples drawn around them.
#[derive(Debug, Clone)]
pub struct GaussianClassModel {
    pub means: Vec<Vec<f64>>,
    pub within_scale: f64,
}

impl GaussianClassModel {
    pub fn new(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let between =
            Normal::new(0.0, spec.between_scale).map_err(|e| Error::Config(e.to_string()))?;
        let means = (0..spec.num_classes)
            .map(|_| (0..spec.ambient_dim).map(|_| between.sample(rng)).collect())
            .collect();
        Ok(GaussianClassModel {
            means,
            within_scale: spec.within_scale,
        })
    }

    /// One draw around the mean of `class`.
    pub fn draw(&self, class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let within = Normal::new(0.0, self.within_scale).expect("validated scale");
        self.means[class]
            .iter()
            .map(|m| m + within.sample(rng))
            .collect()
    }
}

/// Seeded Gaussian-class dataset: `samples_per_class` neutral session-1
/// samples for each class, labels `0..C`.
pub fn synth_gaussian_classes(spec: &SyntheticSpec) -> Result<Vec<ImageSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let model = GaussianClassModel::new(spec, &mut rng)?;
    let mut out = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for class in 0..spec.num_classes {
        for i in 0..spec.samples_per_class {
            out.push(ImageSample {
                subject_id: class as u32,
                session: 1,
                category: Category::Neutral,
                index: i as u32 + 1,
                pixels: model.draw(class, &mut rng),
                filename: None,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(subject: u32, pixels: Vec<f64>) -> ImageSample {
        ImageSample {
            subject_id: subject,
            session: 1,
            category: Category::Neutral,
            index: 1,
            pixels,
            filename: None,
        }
    }

    #[test]
    fn filename_scheme() {
        let l = parse_filename("s12_2_lower_occlusion_3.png").unwrap();
        assert_eq!(
            l,
            FileLabel {
                subject_id: 12,
                session: 2,
                category: Category::LowerOcclusion,
                index: 3
            }
        );
        assert!(matches!(
            parse_filename("face_01.png"),
            Err(Error::Labeling { .. })
        ));
        assert!(parse_filename("s1_3_neutral_1.png").is_err());
        assert!(parse_filename("s1_1_smiling_1.png").is_err());
    }

    #[test]
    fn data_matrix_two_points() {
        let dm = build_data_matrix(
            &[sample(0, vec![1.0, 1.0]), sample(1, vec![3.0, 3.0])],
            true,
        )
        .unwrap();
        assert_eq!(dm.mean.to_vec(), vec![2.0, 2.0]);
        assert_eq!(dm.columns.column(0).to_vec(), vec![-1.0, -1.0]);
        assert_eq!(dm.columns.column(1).to_vec(), vec![1.0, 1.0]);
        let single = build_data_matrix(&[sample(0, vec![4.0, -2.0])], true).unwrap();
        assert!(single.columns.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn data_matrix_mixed_lengths() {
        let err = build_data_matrix(&[sample(0, vec![1.0]), sample(1, vec![1.0, 2.0])], false);
        assert!(matches!(err, Err(Error::Dimension { .. })));
        assert!(build_data_matrix(&[], false).is_err());
    }

    #[test]
    fn centered_rows_sum_to_zero() {
        let spec = SyntheticSpec {
            num_classes: 5,
            samples_per_class: 1,
            ambient_dim: 7,
            between_scale: 3.0,
            within_scale: 1.0,
            seed: 9,
        };
        let dm = build_data_matrix(&synth_gaussian_classes(&spec).unwrap(), true).unwrap();
        for row in dm.columns.outer_iter() {
            assert!(row.sum().abs() < 1e-10);
        }
    }

    #[test]
    fn forced_selection_and_errors() {
        let samples: Vec<_> = (0..3)
            .flat_map(|s| (0..2).map(move |_| sample(s, vec![0.0])))
            .collect();
        let subsets = make_probe_subsets(&samples, 1, 2, 5).unwrap();
        assert_eq!(subsets[0].sample_refs, (0..6).collect::<Vec<_>>());
        match make_probe_subsets(&samples, 1, 3, 5) {
            Err(Error::Split { subject: 0, .. }) => {}
            other => panic!("expected split error, got {other:?}"),
        }
    }

    #[test]
    fn standard_probe_protocol_sizes() {
        let samples: Vec<_> = (0..110)
            .flat_map(|s| (0..6).map(move |_| sample(s, vec![0.0])))
            .collect();
        let subsets = make_probe_subsets(&samples, 10, 2, 42).unwrap();
        assert_eq!(subsets.len(), 10);
        for s in &subsets {
            assert_eq!(s.sample_refs.len(), 220);
            let mut uniq = s.sample_refs.clone();
            uniq.dedup();
            assert_eq!(uniq.len(), 220);
        }
        let again = make_probe_subsets(&samples, 10, 2, 42).unwrap();
        assert_eq!(
            serde_json::to_string(&subsets).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn synthetic_counts_and_degenerate_covariance() {
        let spec = SyntheticSpec {
            num_classes: 3,
            samples_per_class: 10,
            ambient_dim: 4,
            between_scale: 1.0,
            within_scale: 1e-9,
            seed: 1,
        };
        let s = synth_gaussian_classes(&spec).unwrap();
        assert_eq!(s.len(), 30);
        for class in 0..3u32 {
            let members: Vec<_> = s.iter().filter(|x| x.subject_id == class).collect();
            assert_eq!(members.len(), 10);
            for m in &members {
                for (a, b) in m.pixels.iter().zip(&members[0].pixels) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
        let bad = SyntheticSpec {
            num_classes: 1,
            ..spec
        };
        assert!(synth_gaussian_classes(&bad).is_err());
    }

    #[test]
    fn within_class_covariance_matches_scale() {
        let spec = SyntheticSpec {
            num_classes: 10,
            samples_per_class: 200,
            ambient_dim: 50,
            between_scale: 10.0,
            within_scale: 1.0,
            seed: 77,
        };
        let s = synth_gaussian_classes(&spec).unwrap();
        let mut resid = Array2::zeros((50, s.len()));
        for class in 0..10u32 {
            let idx: Vec<usize> = (0..s.len()).filter(|&i| s[i].subject_id == class).collect();
            let mean: Vec<f64> = (0..50)
                .map(|d| idx.iter().map(|&i| s[i].pixels[d]).sum::<f64>() / idx.len() as f64)
                .collect();
            for &i in &idx {
                for d in 0..50 {
                    resid[[d, i]] = s[i].pixels[d] - mean[d];
                }
            }
        }
        let cov = resid.dot(&resid.t()) / s.len() as f64;
        for d in 0..50 {
            assert!(
                (cov[[d, d]] - 1.0).abs() < 0.2,
                "diag {d} = {}",
                cov[[d, d]]
            );
        }
    }

    #[test]
    fn bilinear_constant_field() {
        let src = vec![7.5; 16];
        let out = resize_bilinear(&src, 4, 4, 2, 2);
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|&v| (v - 7.5).abs() < 1e-12));
    }

    #[test]
    fn disjoint_split() {
        let mut samples = vec![sample(0, vec![0.0]), sample(0, vec![1.0])];
        samples[1].category = Category::Expression;
        let (g, p) = split_gallery_probe(
            &samples,
            &SampleFilter::new(&[Category::Neutral], &[1, 2]),
            &SampleFilter::new(&[Category::Expression], &[1, 2]),
        )
        .unwrap();
        assert_eq!((g, p), (vec![0], vec![1]));
        assert!(split_gallery_probe(
            &samples,
            &SampleFilter::new(&[Category::Neutral], &[1]),
            &SampleFilter::new(&[Category::Neutral, Category::Expression], &[1]),
        )
        .is_err());
    }
}
