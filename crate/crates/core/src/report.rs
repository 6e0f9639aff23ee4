//! Report files from a result bundle: rank-1 tables, CMS curves, McNemar
//! tables, fusion weights, score tables, a JSON summary and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{CmsCurve, EvalCategory, McNemarReport};
use crate::experiment::{NamedSeed, ResultBundle, WeightRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportOptions {
    pub plots: bool,
    pub scores: bool,
}

impl ReportOptions {
    pub fn from_bundle(bundle: &ResultBundle) -> Self {
        ReportOptions {
            plots: bundle.config.eval.plots,
            scores: bundle.config.eval.write_scores,
        }
    }
}

/// File-name-safe form of a tag.
pub fn sanitize(tag: &str) -> String {
    tag.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write(dir: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

pub fn cms_csv(curve: &CmsCurve) -> String {
    let mut out = String::from("rank,value\n");
    for (k, v) in curve.values.iter().enumerate() {
        let _ = writeln!(out, "{},{v}", k + 1);
    }
    out
}

pub fn mcnemar_csv(report: &McNemarReport) -> String {
    let mut out = String::from("rank,n01,n10,p,significant\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.rank, r.n01, r.n10, r.p, r.significant
        );
    }
    out
}

fn pct(fraction: f64) -> String {
    format!("{:.2}", 100.0 * fraction)
}

fn cell(bundle: &ResultBundle, ci: usize, ai: usize) -> Option<f64> {
    bundle.rank1.cells[ci][ai].as_ref().map(|c| c.fraction)
}

pub fn rank1_csv(bundle: &ResultBundle) -> String {
    let t = &bundle.rank1;
    let mut out = String::from("category");
    for a in &t.algorithms {
        let _ = write!(out, ",{a}");
    }
    out.push('\n');
    for (ci, cat) in t.categories.iter().enumerate() {
        out.push_str(cat.as_str());
        for ai in 0..t.algorithms.len() {
            out.push(',');
            if let Some(f) = cell(bundle, ci, ai) {
                out.push_str(&pct(f));
            }
        }
        out.push('\n');
    }
    out
}

/// First index of the maximum; `None` on an empty slice.
fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Algorithm with the largest area under its CMS curve.
pub fn highest_curve(curves: &[CmsCurve]) -> Option<&str> {
    let areas: Vec<f64> = curves.iter().map(|c| c.values.iter().sum()).collect();
    argmax(&areas).map(|i| curves[i].algorithm.as_str())
}

/// Human-readable table: one row per category, one column per algorithm,
/// then the highest CMS curve and whether it agrees with the rank-1 winner.
pub fn rank1_text(bundle: &ResultBundle) -> String {
    let t = &bundle.rank1;
    let mut header = vec!["Category".to_string()];
    header.extend(t.algorithms.iter().cloned());
    header.push("Highest curve".into());
    header.push("Same as rank-1".into());
    let mut rows = vec![header];
    for (ci, cat) in t.categories.iter().enumerate() {
        let values: Vec<f64> = (0..t.algorithms.len())
            .map(|ai| cell(bundle, ci, ai).unwrap_or(f64::NEG_INFINITY))
            .collect();
        let mut row = vec![cat.title().to_string()];
        row.extend(values.iter().map(|&v| {
            if v.is_finite() {
                format!("{}%", pct(v))
            } else {
                "-".into()
            }
        }));
        let curves = bundle
            .category(*cat)
            .map(|c| c.cms.as_slice())
            .unwrap_or(&[]);
        let best_curve = highest_curve(curves).unwrap_or("-").to_string();
        let best_rank1 = argmax(&values)
            .map(|i| t.algorithms[i].as_str())
            .unwrap_or("-");
        let same = if best_curve == best_rank1 {
            "Yes"
        } else {
            "No"
        };
        row.push(best_curve);
        row.push(same.into());
        rows.push(row);
    }
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::from("Rank-1 identification rates\n\n");
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (v, w))| {
                if j == 0 {
                    format!("{v:<w$}")
                } else {
                    format!("{v:>w$}")
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (cols - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

pub fn weights_csv(records: &[WeightRecord]) -> String {
    let mut out = String::from("method,category,member,weight,basis\n");
    for r in records {
        let cat = r.category.map(|c| c.as_str()).unwrap_or("all");
        for (i, (m, w)) in r.members.iter().zip(&r.weights).enumerate() {
            let basis = match r.method {
                crate::experiment::FusionMethod::Method2 => {
                    r.basis.get(i).cloned().unwrap_or_default()
                }
                _ => String::new(),
            };
            let _ = writeln!(out, "{},{cat},{m},{w},{basis}", r.method.tag());
        }
    }
    out
}

#[derive(Serialize)]
struct SummaryCell<'a> {
    category: EvalCategory,
    algorithm: &'a str,
    percent: String,
    successes: usize,
    probes: usize,
    interval_low: f64,
    interval_high: f64,
}

#[derive(Serialize)]
struct SummaryCategory<'a> {
    category: EvalCategory,
    subsets: usize,
    probes: usize,
    best_rank1: Option<&'a str>,
    highest_curve: Option<&'a str>,
    significant_at_rank1: Vec<(&'a str, &'a str, f64)>,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    config_hash: &'a str,
    seeds: &'a [NamedSeed],
    num_classes: usize,
    algorithms: &'a [String],
    models: Vec<(&'a str, usize)>,
    rank1: Vec<SummaryCell<'a>>,
    categories: Vec<SummaryCategory<'a>>,
    fusion_weights: &'a [WeightRecord],
}

pub fn summary_json(bundle: &ResultBundle) -> Result<String> {
    let t = &bundle.rank1;
    let mut rank1 = Vec::new();
    for (ci, cat) in t.categories.iter().enumerate() {
        for (ai, alg) in t.algorithms.iter().enumerate() {
            if let Some(c) = &t.cells[ci][ai] {
                rank1.push(SummaryCell {
                    category: *cat,
                    algorithm: alg,
                    percent: pct(c.fraction),
                    successes: c.successes,
                    probes: c.probes,
                    interval_low: c.interval.0,
                    interval_high: c.interval.1,
                });
            }
        }
    }
    let categories = bundle
        .categories
        .iter()
        .map(|c| {
            let ci = t.categories.iter().position(|x| *x == c.category);
            let values: Vec<f64> = (0..t.algorithms.len())
                .map(|ai| {
                    ci.and_then(|ci| cell(bundle, ci, ai))
                        .unwrap_or(f64::NEG_INFINITY)
                })
                .collect();
            SummaryCategory {
                category: c.category,
                subsets: c.subset_sizes.len(),
                probes: c.outcomes.probe_ids.len(),
                best_rank1: argmax(&values).map(|i| t.algorithms[i].as_str()),
                highest_curve: highest_curve(&c.cms),
                significant_at_rank1: c
                    .mcnemar
                    .iter()
                    .filter_map(|m| {
                        let first = m.rows.first()?;
                        first.significant.then_some((
                            m.algorithm_a.as_str(),
                            m.algorithm_b.as_str(),
                            first.p,
                        ))
                    })
                    .collect(),
            }
        })
        .collect();
    let summary = Summary {
        schema_version: bundle.schema_version,
        config_hash: &bundle.config_hash,
        seeds: &bundle.seeds,
        num_classes: bundle.num_classes,
        algorithms: &bundle.algorithms,
        models: bundle
            .models
            .iter()
            .map(|m| (m.tag.as_str(), m.model.dim()))
            .collect(),
        rank1,
        categories,
        fusion_weights: &bundle.fusion_weights,
    };
    serde_json::to_string_pretty(&summary).map_err(|e| Error::Serialization(e.to_string()))
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// CMS curves of one category as an SVG line chart.
pub fn cms_svg(category: EvalCategory, curves: &[CmsCurve]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 170.0, 30.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let ranks = curves
        .iter()
        .map(|c| c.values.len())
        .max()
        .unwrap_or(1)
        .max(1);
    let x = |k: usize| {
        if ranks == 1 {
            left
        } else {
            left + pw * (k - 1) as f64 / (ranks - 1) as f64
        }
    };
    let y = |v: f64| top + ph * (1.0 - v);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">CMS: {}</text>"#,
        left + pw / 2.0,
        category.title()
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#dddddd"/><text x="{2}" y="{3:.2}" text-anchor="end">{4:.1}</text>"##,
            y(v),
            left + pw,
            left - 6.0,
            y(v) + 4.0,
            v
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333333"/>"##
    );
    let ticks = ranks.min(10);
    for i in 0..ticks {
        let k = if ticks == 1 {
            1
        } else {
            1 + i * (ranks - 1) / (ticks - 1)
        };
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{k}</text>"#,
            x(k),
            top + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">Rank</text>"#,
        left + pw / 2.0,
        h - 12.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = c
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| format!("{:.2},{:.2}", x(k + 1), y(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 12.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            xml_escape(&c.algorithm)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Writes every report file under `dir` and returns their paths in
/// writing order.
pub fn emit_reports(
    bundle: &ResultBundle,
    dir: &Path,
    opts: ReportOptions,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    write(dir, "rank1.csv", &rank1_csv(bundle), &mut written)?;
    write(dir, "rank1.txt", &rank1_text(bundle), &mut written)?;
    for cat in &bundle.categories {
        let c = cat.category.as_str();
        for curve in &cat.cms {
            let name = format!("cms/{c}_{}.csv", sanitize(&curve.algorithm));
            write(dir, &name, &cms_csv(curve), &mut written)?;
        }
        for m in &cat.mcnemar {
            let name = format!(
                "mcnemar/{c}_{}_vs_{}.csv",
                sanitize(&m.algorithm_a),
                sanitize(&m.algorithm_b)
            );
            write(dir, &name, &mcnemar_csv(m), &mut written)?;
        }
        if opts.plots {
            write(
                dir,
                &format!("plots/cms_{c}.svg"),
                &cms_svg(cat.category, &cat.cms),
                &mut written,
            )?;
        }
    }
    if !bundle.fusion_weights.is_empty() {
        write(
            dir,
            "weights.csv",
            &weights_csv(&bundle.fusion_weights),
            &mut written,
        )?;
    }
    if opts.scores {
        for r in &bundle.score_tables {
            let name = format!(
                "scores/{}_{}_{}.csv",
                r.category.as_str(),
                r.subset,
                sanitize(&r.table.classifier)
            );
            write(dir, &name, &r.table.to_csv(), &mut written)?;
        }
    }
    write(dir, "summary.json", &summary_json(bundle)?, &mut written)?;
    Ok(written)
}
