use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse_pair_end_to_end, FusionOptions, StageTiming};
use crate::network::Generator;
use crate::raster::Image;

/// Mean per-pair stage times of one repeat (or of all repeats).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub label: String,
    pub map_generation: f64,
    pub post_processing: f64,
    pub fusion: f64,
    pub total: f64,
}

impl TimingRow {
    fn mean(label: String, timings: &[StageTiming]) -> Self {
        let n = timings.len() as f64;
        let sum = |f: fn(&StageTiming) -> f64| timings.iter().map(f).sum::<f64>() / n;
        Self {
            label,
            map_generation: sum(|t| t.map_generation),
            post_processing: sum(|t| t.post_processing),
            fusion: sum(|t| t.fusion),
            total: sum(|t| t.total),
        }
    }

    fn as_timing(&self) -> StageTiming {
        StageTiming {
            map_generation: self.map_generation,
            post_processing: self.post_processing,
            fusion: self.fusion,
            total: self.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub pairs: usize,
    /// One row per repeat followed by the mean row.
    pub rows: Vec<TimingRow>,
}

impl TimingTable {
    pub fn mean(&self) -> &TimingRow {
        self.rows.last().expect("mean row present")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("run,map_generation_s,post_processing_s,fusion_s,total_s\n");
        for r in &self.rows {
            s += &format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.label, r.map_generation, r.post_processing, r.fusion, r.total
            );
        }
        s
    }
}

/// Fuses every pair `repeats` times and reports mean per-pair wall time
/// split into map generation, post-processing and compositing.
pub fn timing_bench(
    pairs: &[(String, Image, Image)],
    generator: &Generator,
    opts: &FusionOptions,
    repeats: usize,
) -> Result<TimingTable> {
    if pairs.is_empty() || repeats == 0 {
        return Err(Error::invalid(
            "timing needs at least one pair and one repeat",
        ));
    }
    let mut rows = Vec::with_capacity(repeats + 1);
    for r in 0..repeats {
        let timings = pairs
            .iter()
            .map(|(_, a, b)| fuse_pair_end_to_end(a, b, generator, opts).map(|res| res.timing))
            .collect::<Result<Vec<_>>>()?;
        rows.push(TimingRow::mean(format!("repeat_{}", r + 1), &timings));
    }
    let per_repeat: Vec<StageTiming> = rows.iter().map(TimingRow::as_timing).collect();
    rows.push(TimingRow::mean("mean".to_string(), &per_repeat));
    Ok(TimingTable {
        pairs: pairs.len(),
        rows,
    })
}
