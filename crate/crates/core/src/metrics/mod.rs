//! The twelve-index fusion-quality battery, scored on luminance.
//!
//! Histogram indices quantize luminance to 256 gray levels; gradient and
//! contrast indices work on gray levels 0–255; MSD works on [0, 1].

mod info;
mod simple;
mod structural;

use std::fmt;
use std::str::FromStr;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::raster::Image;

pub use info::{ncie_from_eigenvalues, unit_diagonal_eigenvalues, TSALLIS_Q};
pub use structural::{QM_LEVELS, WINDOW};

/// Luminance plane scaled to gray levels 0–255.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn from_image(img: &Image) -> Self {
        Self {
            h: img.height(),
            w: img.width(),
            data: img.luminance().into_iter().map(|v| v * 255.0).collect(),
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    #[cfg(test)]
    pub fn map_data(mut self, mut f: impl FnMut(f64) -> f64) -> Self {
        self.data.iter_mut().for_each(|v| *v = f(*v));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricId {
    #[serde(rename = "MI")]
    Mi,
    #[serde(rename = "TE")]
    Te,
    #[serde(rename = "NCIE")]
    Ncie,
    #[serde(rename = "Q_Y")]
    QY,
    #[serde(rename = "Q_CB")]
    QCb,
    #[serde(rename = "Q_G")]
    QG,
    #[serde(rename = "Q_M")]
    QM,
    #[serde(rename = "SF")]
    Sf,
    #[serde(rename = "LIF")]
    Lif,
    #[serde(rename = "AG")]
    Ag,
    #[serde(rename = "MSD")]
    Msd,
    #[serde(rename = "GLD")]
    Gld,
}

impl MetricId {
    /// Report order.
    pub const ALL: [MetricId; 12] = [
        MetricId::Mi,
        MetricId::Te,
        MetricId::Ncie,
        MetricId::QY,
        MetricId::QCb,
        MetricId::QG,
        MetricId::QM,
        MetricId::Sf,
        MetricId::Lif,
        MetricId::Ag,
        MetricId::Msd,
        MetricId::Gld,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Mi => "MI",
            MetricId::Te => "TE",
            MetricId::Ncie => "NCIE",
            MetricId::QY => "Q_Y",
            MetricId::QCb => "Q_CB",
            MetricId::QG => "Q_G",
            MetricId::QM => "Q_M",
            MetricId::Sf => "SF",
            MetricId::Lif => "LIF",
            MetricId::Ag => "AG",
            MetricId::Msd => "MSD",
            MetricId::Gld => "GLD",
        }
    }

    pub fn orientation(self) -> Orientation {
        match self {
            MetricId::Lif => Orientation::LowerBetter,
            _ => Orientation::HigherBetter,
        }
    }

    /// Whether the score depends on the source images.
    pub fn uses_sources(self) -> bool {
        !matches!(
            self,
            MetricId::Lif | MetricId::Ag | MetricId::Msd | MetricId::Gld
        )
    }

    fn index(self) -> usize {
        MetricId::ALL
            .iter()
            .position(|&m| m == self)
            .expect("listed")
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

/// One score per metric, in report order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    scores: [f64; 12],
}

impl MetricReport {
    pub fn from_scores(scores: [f64; 12]) -> Self {
        Self { scores }
    }

    pub fn get(&self, id: MetricId) -> f64 {
        self.scores[id.index()]
    }

    pub fn set(&mut self, id: MetricId, v: f64) {
        self.scores[id.index()] = v;
    }

    pub fn orientation(&self, id: MetricId) -> Orientation {
        id.orientation()
    }

    pub fn iter(&self) -> impl Iterator<Item = (MetricId, f64)> + '_ {
        MetricId::ALL.into_iter().zip(self.scores.iter().copied())
    }

    pub fn scores(&self) -> &[f64; 12] {
        &self.scores
    }

    /// Element-wise mean of several reports.
    pub fn mean<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> Option<MetricReport> {
        let mut sum = [0.0; 12];
        let mut n = 0usize;
        for r in reports {
            sum.iter_mut().zip(&r.scores).for_each(|(s, v)| *s += v);
            n += 1;
        }
        (n > 0).then(|| MetricReport::from_scores(sum.map(|s| s / n as f64)))
    }

    /// `id` followed by the twelve metric names.
    pub fn csv_header(id_column: &str) -> String {
        std::iter::once(id_column.to_string())
            .chain(MetricId::ALL.iter().map(|m| m.name().to_string()))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn csv_row(&self, id: &str) -> String {
        std::iter::once(id.to_string())
            .chain(self.scores.iter().map(|v| format!("{v:.6}")))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// `{"scores": {...}, "orientation": {...}}` in report order.
    pub fn to_json(&self) -> serde_json::Value {
        let scores: serde_json::Map<String, serde_json::Value> = self
            .iter()
            .map(|(m, v)| (m.name().to_string(), serde_json::json!(v)))
            .collect();
        let orientation: serde_json::Map<String, serde_json::Value> = MetricId::ALL
            .iter()
            .map(|m| {
                (
                    m.name().to_string(),
                    serde_json::to_value(m.orientation()).expect("plain enum"),
                )
            })
            .collect();
        serde_json::json!({ "scores": scores, "orientation": orientation })
    }
}

impl Serialize for MetricReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(12))?;
        for (m, v) in self.iter() {
            map.serialize_entry(m.name(), &v)?;
        }
        map.end()
    }
}

fn planes(a: &Image, b: &Image, fused: &Image) -> Result<(Plane, Plane, Plane)> {
    for (img, what) in [(b, "source B"), (fused, "fused image")] {
        if img.height() != a.height() || img.width() != a.width() {
            return Err(Error::invalid(format!(
                "{what} is {}x{}, source A is {}x{}",
                img.height(),
                img.width(),
                a.height(),
                a.width()
            )));
        }
    }
    Ok((
        Plane::from_image(a),
        Plane::from_image(b),
        Plane::from_image(fused),
    ))
}

/// AG, MSD, GLD and LIF of the fused image alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedOnly {
    pub ag: f64,
    pub msd: f64,
    pub gld: f64,
    pub lif: f64,
}

pub fn fused_only_metrics(fused: &Image) -> FusedOnly {
    let p = Plane::from_image(fused);
    FusedOnly {
        ag: simple::average_gradient(&p),
        msd: simple::mean_squared_deviation(&p),
        gld: simple::gray_level_difference(&p),
        lif: simple::linear_index_of_fuzziness(&p),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationScores {
    pub mi: f64,
    pub te: f64,
    pub ncie: f64,
}

pub fn information_metrics(a: &Image, b: &Image, fused: &Image) -> Result<InformationScores> {
    let (pa, pb, pf) = planes(a, b, fused)?;
    Ok(InformationScores {
        mi: info::mutual_information(&pa, &pb, &pf),
        te: info::tsallis_information(&pa, &pb, &pf, TSALLIS_Q),
        ncie: info::ncie(&pa, &pb, &pf),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralScores {
    pub q_y: f64,
    pub q_cb: f64,
    pub q_g: f64,
    pub q_m: f64,
}

pub fn structural_metrics(a: &Image, b: &Image, fused: &Image) -> Result<StructuralScores> {
    let (pa, pb, pf) = planes(a, b, fused)?;
    if pa.h < WINDOW || pa.w < WINDOW {
        return Err(Error::invalid(format!(
            "images of {}x{} are smaller than the {WINDOW}x{WINDOW} metric window",
            pa.h, pa.w
        )));
    }
    Ok(StructuralScores {
        q_y: structural::q_yang(&pa, &pb, &pf),
        q_cb: structural::q_chen_blum(&pa, &pb, &pf),
        q_g: structural::q_gradient(&pa, &pb, &pf),
        q_m: structural::q_multiscale(&pa, &pb, &pf),
    })
}

/// Ratio of spatial-frequency error of the fused image against the sources.
pub fn spatial_frequency_error(a: &Image, b: &Image, fused: &Image) -> Result<f64> {
    let (pa, pb, pf) = planes(a, b, fused)?;
    Ok(simple::spatial_frequency_error(&pa, &pb, &pf))
}

pub fn evaluate_all(a: &Image, b: &Image, fused: &Image) -> Result<MetricReport> {
    let i = information_metrics(a, b, fused)?;
    let s = structural_metrics(a, b, fused)?;
    let sf = spatial_frequency_error(a, b, fused)?;
    let f = fused_only_metrics(fused);
    Ok(MetricReport::from_scores([
        i.mi, i.te, i.ncie, s.q_y, s.q_cb, s.q_g, s.q_m, sf, f.lif, f.ag, f.msd, f.gld,
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_image(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> Image {
        Image::new(
            h,
            w,
            c,
            (0..h * w * c)
                .map(|_| f64::from(rng.gen::<u8>()) / 255.0)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn only_lif_is_lower_better() {
        for m in MetricId::ALL {
            assert_eq!(
                m.orientation() == Orientation::LowerBetter,
                m == MetricId::Lif
            );
            assert_eq!(m.name().parse::<MetricId>().unwrap(), m);
        }
        assert_eq!(MetricId::ALL.iter().filter(|m| m.uses_sources()).count(), 8);
    }

    #[test]
    fn constant_images_give_zero_variation_scores() {
        let c = Image::filled(16, 16, 3, 0.4).unwrap();
        let r = evaluate_all(&c, &c, &c).unwrap();
        for m in [MetricId::Ag, MetricId::Sf, MetricId::Gld, MetricId::Msd] {
            assert_eq!(r.get(m), 0.0, "{m}");
        }
        assert!(r.iter().all(|(_, v)| v.is_finite()));
    }

    #[test]
    fn self_fusion_preserves_structure() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 24, 20, 3);
        let r = evaluate_all(&a, &a, &a).unwrap();
        assert!((r.get(MetricId::QY) - 1.0).abs() < 1e-6);
        assert!((r.get(MetricId::QG) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn swap_symmetry_and_source_independence() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let (h, w) = (rng.gen_range(7..30), rng.gen_range(7..30));
            let (a, b, f) = (
                random_image(&mut rng, h, w, 3),
                random_image(&mut rng, h, w, 1),
                random_image(&mut rng, h, w, 3),
            );
            let ab = evaluate_all(&a, &b, &f).unwrap();
            let ba = evaluate_all(&b, &a, &f).unwrap();
            assert_eq!(ab, ba);
            let other = evaluate_all(&f, &f, &f).unwrap();
            for m in MetricId::ALL.into_iter().filter(|m| !m.uses_sources()) {
                assert_eq!(ab.get(m), other.get(m));
            }
        }
    }

    #[test]
    fn rejects_mismatch_and_tiny_images() {
        let a = Image::filled(8, 8, 3, 0.1).unwrap();
        let b = Image::filled(8, 9, 3, 0.1).unwrap();
        assert!(evaluate_all(&a, &b, &a).is_err());
        let t = Image::filled(6, 8, 1, 0.1).unwrap();
        assert!(evaluate_all(&t, &t, &t).is_err());
    }

    #[test]
    fn report_serializes_in_order() {
        let r = MetricReport::from_scores(std::array::from_fn(|i| i as f64));
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.starts_with(r#"{"MI":0.0,"TE":1.0"#));
        assert_eq!(MetricReport::csv_header("image").split(',').count(), 13);
        assert_eq!(r.csv_row("x"), "x,0.000000,1.000000,2.000000,3.000000,4.000000,5.000000,6.000000,7.000000,8.000000,9.000000,10.000000,11.000000");
        assert_eq!(r.to_json()["orientation"]["LIF"], "lower_better");
        let m = MetricReport::mean([&r, &r]).unwrap();
        assert_eq!(m, r);
    }
}
