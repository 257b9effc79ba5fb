//! Focus-map boundary study: grow or shrink the final map by `k` pixels and
//! score the resulting fusions.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plot::line_chart;
use crate::error::{Error, Result};
use crate::fusion::{fuse, fuse_pair_end_to_end, FusionOptions};
use crate::metrics::{evaluate_all, MetricId, MetricReport, Orientation};
use crate::network::Generator;
use crate::raster::{morph, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeStudyConfig {
    pub k_values: Vec<i32>,
    pub fusion: FusionOptions,
}

impl Default for EdgeStudyConfig {
    fn default() -> Self {
        Self {
            k_values: vec![-4, -2, 0, 2, 4],
            fusion: FusionOptions::default(),
        }
    }
}

impl EdgeStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.k_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid(format!(
                "k values {:?} must be strictly increasing",
                self.k_values
            )));
        }
        if !self.k_values.contains(&0) {
            return Err(Error::invalid(
                "k values must include 0 (the unperturbed map)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeStudyResult {
    pub k_values: Vec<i32>,
    pub image_ids: Vec<String>,
    /// `[image][k]` scores.
    pub per_image: Vec<Vec<MetricReport>>,
    /// `[image][k]` foreground pixel counts of the perturbed maps.
    pub foreground: Vec<Vec<usize>>,
    /// Scores of the unperturbed pipeline output, per image.
    pub pipeline: Vec<MetricReport>,
    /// Per-k mean over images.
    pub mean: Vec<MetricReport>,
    /// Per-k means rescaled per metric so the best k is 1 and the worst 0.
    pub normalized: Vec<[f64; 12]>,
}

/// Rescales each metric across rows so that the best row maps to 1 and the
/// worst to 0, respecting the metric's orientation. A metric that is equal
/// on every row maps to 1 everywhere.
pub fn normalize_rows(rows: &[MetricReport]) -> Vec<[f64; 12]> {
    let mut out = vec![[0.0; 12]; rows.len()];
    for (j, m) in MetricId::ALL.into_iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|r| r.get(m)).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (i, &v) in vals.iter().enumerate() {
            out[i][j] = if hi > lo {
                match m.orientation() {
                    Orientation::HigherBetter => (v - lo) / (hi - lo),
                    Orientation::LowerBetter => (hi - v) / (hi - lo),
                }
            } else {
                1.0
            };
        }
    }
    out
}

/// Runs the pipeline once per pair, then re-fuses with `morph(map, k)` for
/// every configured `k` and scores each result against the sources.
pub fn edge_study(
    pairs: &[(String, Image, Image)],
    generator: &Generator,
    config: &EdgeStudyConfig,
) -> Result<EdgeStudyResult> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("edge study needs at least one pair"));
    }
    let mut per_image = Vec::new();
    let mut foreground = Vec::new();
    let mut pipeline = Vec::new();
    for (id, a, b) in pairs {
        let result = fuse_pair_end_to_end(a, b, generator, &config.fusion)?;
        let (a, b) = (a.to_rgb(), b.to_rgb());
        pipeline.push(evaluate_all(&a, &b, &result.fused)?);
        let mut reports = Vec::new();
        let mut counts = Vec::new();
        for &k in &config.k_values {
            let map = morph(&result.focus_map_final, k);
            counts.push(map.foreground_count());
            reports.push(evaluate_all(&a, &b, &fuse(&a, &b, &map)?)?);
        }
        log::info!("edge study: {id} done");
        per_image.push(reports);
        foreground.push(counts);
    }
    let mean: Vec<MetricReport> = (0..config.k_values.len())
        .map(|ki| MetricReport::mean(per_image.iter().map(|r| &r[ki])).expect("non-empty"))
        .collect();
    let normalized = normalize_rows(&mean);
    Ok(EdgeStudyResult {
        k_values: config.k_values.clone(),
        image_ids: pairs.iter().map(|p| p.0.clone()).collect(),
        per_image,
        foreground,
        pipeline,
        mean,
        normalized,
    })
}

impl EdgeStudyResult {
    pub fn raw_csv(&self) -> String {
        let mut s = MetricReport::csv_header("k") + "\n";
        for (k, r) in self.k_values.iter().zip(&self.mean) {
            s += &r.csv_row(&k.to_string());
            s.push('\n');
        }
        s
    }

    pub fn normalized_csv(&self) -> String {
        let mut s = MetricReport::csv_header("k") + "\n";
        for (k, r) in self.k_values.iter().zip(&self.normalized) {
            s += &MetricReport::from_scores(*r).csv_row(&k.to_string());
            s.push('\n');
        }
        s
    }

    /// Normalized score lines over k, one line per metric.
    pub fn svg(&self) -> String {
        let cats: Vec<String> = self.k_values.iter().map(|k| k.to_string()).collect();
        let series: Vec<(String, Vec<f64>)> = MetricId::ALL
            .iter()
            .enumerate()
            .map(|(j, m)| {
                (
                    m.name().to_string(),
                    self.normalized.iter().map(|r| r[j]).collect(),
                )
            })
            .collect();
        line_chart(
            "Normalized scores vs. focus-map boundary shift",
            "k (pixels)",
            &cats,
            &series,
            0.0,
            1.0,
        )
    }

    /// The k with the best normalized score for each metric.
    pub fn best_k(&self) -> Vec<(MetricId, i32)> {
        MetricId::ALL
            .iter()
            .enumerate()
            .map(|(j, &m)| {
                let best = (0..self.k_values.len())
                    .max_by(|&x, &y| self.normalized[x][j].total_cmp(&self.normalized[y][j]))
                    .expect("non-empty");
                (m, self.k_values[best])
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "k_values": self.k_values,
            "images": self.image_ids,
            "foreground": self.foreground,
            "mean": self.mean,
            "normalized": self.normalized.iter().map(|r| MetricReport::from_scores(*r)).collect::<Vec<_>>(),
            "best_k": self.best_k().iter().map(|(m, k)| (m.name().to_string(), serde_json::json!(k))).collect::<serde_json::Map<_, _>>(),
        })
    }

    /// Writes `edge_study_raw.csv`, `edge_study_normalized.csv`,
    /// `edge_study.svg` and `edge_study.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("edge_study_raw.csv", self.raw_csv()),
            ("edge_study_normalized.csv", self.normalized_csv()),
            ("edge_study.svg", self.svg()),
            (
                "edge_study.json",
                serde_json::to_string_pretty(&self.to_json())?,
            ),
        ];
        for (name, body) in files {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
