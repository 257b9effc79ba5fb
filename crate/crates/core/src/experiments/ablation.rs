use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fusion::fuse_pair_end_to_end;
use crate::metrics::{evaluate_all, MetricReport};
use crate::network::BranchMode;
use crate::raster::{FocusMap, Image};
use crate::synth::{SynthesisConfig, SynthesisMode, TrainingSample};
use crate::training::{train, AdversarialLoss, ReconstructionLoss, TrainRun};

/// One row of the ablation matrix; every variant changes exactly one setting
/// relative to the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Baseline,
    TwoBranches,
    NoAlpha,
    BceLoss,
    NoGp,
    NoPp,
    NoSe,
    LsLoss,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 8] = [
        AblationVariant::Baseline,
        AblationVariant::TwoBranches,
        AblationVariant::NoAlpha,
        AblationVariant::BceLoss,
        AblationVariant::NoGp,
        AblationVariant::NoPp,
        AblationVariant::NoSe,
        AblationVariant::LsLoss,
    ];

    pub fn id(self) -> &'static str {
        match self {
            AblationVariant::Baseline => "baseline",
            AblationVariant::TwoBranches => "two_branches",
            AblationVariant::NoAlpha => "no_alpha",
            AblationVariant::BceLoss => "bce_loss",
            AblationVariant::NoGp => "no_gp",
            AblationVariant::NoPp => "no_pp",
            AblationVariant::NoSe => "no_se",
            AblationVariant::LsLoss => "ls_loss",
        }
    }

    /// The configuration path the variant overrides (`None` for the baseline).
    pub fn delta(self) -> Option<&'static str> {
        match self {
            AblationVariant::Baseline => None,
            AblationVariant::TwoBranches => Some("network.branches = two"),
            AblationVariant::NoAlpha => Some("synthesis.mode = conventional"),
            AblationVariant::BceLoss => Some("train.reconstruction = bce"),
            AblationVariant::NoGp => Some("train.lambda_gp = 0"),
            AblationVariant::NoPp => Some("fusion.srr = false"),
            AblationVariant::NoSe => Some("network.use_se = false"),
            AblationVariant::LsLoss => Some("train.adversarial = least_squares"),
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.id() == s)
            .ok_or_else(|| {
                let known: Vec<_> = AblationVariant::ALL.iter().map(|v| v.id()).collect();
                Error::invalid(format!(
                    "unknown ablation variant {s:?} (known: {})",
                    known.join(", ")
                ))
            })
    }
}

/// Applies the variant's single override to `base`.
pub fn build_variant(variant: AblationVariant, base: &ExperimentConfig) -> ExperimentConfig {
    let mut c = base.clone();
    match variant {
        AblationVariant::Baseline => {}
        AblationVariant::TwoBranches => c.network.branches = BranchMode::Two,
        AblationVariant::NoAlpha => c.synthesis.mode = SynthesisMode::Conventional,
        AblationVariant::BceLoss => c.train.reconstruction = ReconstructionLoss::Bce,
        AblationVariant::NoGp => c.train.lambda_gp = 0.0,
        AblationVariant::NoPp => c.fusion.srr = false,
        AblationVariant::NoSe => c.network.use_se = false,
        AblationVariant::LsLoss => c.train.adversarial = AdversarialLoss::LeastSquares,
    }
    c
}

/// Dotted paths of every JSON leaf that differs between two configurations.
pub fn config_diff(a: &ExperimentConfig, b: &ExperimentConfig) -> Vec<String> {
    fn walk(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
        match (a, b) {
            (serde_json::Value::Object(ma), serde_json::Value::Object(mb)) => {
                let mut keys: Vec<&String> = ma.keys().chain(mb.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    let path = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    let null = serde_json::Value::Null;
                    walk(
                        &path,
                        ma.get(k).unwrap_or(&null),
                        mb.get(k).unwrap_or(&null),
                        out,
                    );
                }
            }
            _ if a != b => out.push(prefix.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    let ja = serde_json::to_value(a).expect("config serializes");
    let jb = serde_json::to_value(b).expect("config serializes");
    walk("", &ja, &jb, &mut out);
    out
}

/// An evaluation pair with its reference focus map.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub id: String,
    pub a: Image,
    pub b: Image,
    pub reference: Option<FocusMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationOutcome {
    pub variant: AblationVariant,
    /// Mean scores over the evaluation pairs.
    pub report: MetricReport,
    /// Mean IoU of final maps against reference maps, where available.
    pub mean_iou: Option<f64>,
    pub steps: usize,
}

/// Trains the variant on the samples produced by `training_data` for its
/// synthesis settings, then fuses and scores every evaluation pair.
/// Checkpoint and loss log go to `out_dir/<variant>/` when given.
pub fn run_variant(
    variant: AblationVariant,
    base: &ExperimentConfig,
    training_data: &dyn Fn(&SynthesisConfig) -> Result<Vec<TrainingSample>>,
    eval: &[EvalPair],
    out_dir: Option<&Path>,
) -> Result<AblationOutcome> {
    if eval.is_empty() {
        return Err(Error::invalid(
            "ablation needs at least one evaluation pair",
        ));
    }
    let cfg = build_variant(variant, base);
    let samples = training_data(&cfg.synthesis)?;
    let run = TrainRun {
        out_dir: out_dir.map(|d| d.join(variant.id())),
        meta: serde_json::json!({ "variant": variant.id() }),
    };
    log::info!("ablation {variant}: training on {} samples", samples.len());
    let trained = train(&samples, &cfg.network, &cfg.train, &run)?;
    let mut reports = Vec::with_capacity(eval.len());
    let mut ious = Vec::new();
    for pair in eval {
        let res = fuse_pair_end_to_end(&pair.a, &pair.b, &trained.generator, &cfg.fusion)?;
        reports.push(evaluate_all(
            &pair.a.to_rgb(),
            &pair.b.to_rgb(),
            &res.fused,
        )?);
        if let Some(r) = &pair.reference {
            ious.push(res.focus_map_final.iou(r));
        }
    }
    Ok(AblationOutcome {
        variant,
        report: MetricReport::mean(&reports).expect("non-empty"),
        mean_iou: (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64),
        steps: trained.steps,
    })
}

/// `variant` followed by the twelve metric columns and the mean IoU.
pub fn ablation_csv(outcomes: &[AblationOutcome]) -> String {
    let mut s = MetricReport::csv_header("variant") + ",mean_iou,steps\n";
    for o in outcomes {
        let iou = o.mean_iou.map(|v| format!("{v:.6}")).unwrap_or_default();
        s += &format!("{},{iou},{}\n", o.report.csv_row(o.variant.id()), o.steps);
    }
    s
}

/// Normalized score lines across variants, one line per metric.
pub fn ablation_svg(outcomes: &[AblationOutcome]) -> String {
    let reports: Vec<MetricReport> = outcomes.iter().map(|o| o.report).collect();
    let norm = super::normalize_rows(&reports);
    let cats: Vec<String> = outcomes
        .iter()
        .map(|o| o.variant.id().to_string())
        .collect();
    let series: Vec<(String, Vec<f64>)> = crate::metrics::MetricId::ALL
        .iter()
        .enumerate()
        .map(|(j, m)| (m.name().to_string(), norm.iter().map(|r| r[j]).collect()))
        .collect();
    super::plot::line_chart(
        "Ablation: normalized scores",
        "variant",
        &cats,
        &series,
        0.0,
        1.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_variant_changes_exactly_its_documented_leaf() {
        let base = ExperimentConfig::default();
        for v in AblationVariant::ALL {
            let diff = config_diff(&base, &build_variant(v, &base));
            match v.delta() {
                None => assert!(diff.is_empty()),
                Some(d) => {
                    assert_eq!(diff.len(), 1, "{v}: {diff:?}");
                    assert!(d.starts_with(&diff[0]), "{v}: {} vs {d}", diff[0]);
                }
            }
        }
    }

    #[test]
    fn ids_round_trip_and_unknown_is_rejected() {
        for v in AblationVariant::ALL {
            assert_eq!(v.id().parse::<AblationVariant>().unwrap(), v);
            assert_eq!(serde_json::to_value(v).unwrap(), v.id());
        }
        assert!("no_such".parse::<AblationVariant>().is_err());
    }

    #[test]
    fn no_gp_zeroes_the_penalty_weight() {
        let c = build_variant(AblationVariant::NoGp, &ExperimentConfig::default());
        assert_eq!(c.train.lambda_gp, 0.0);
    }
}
