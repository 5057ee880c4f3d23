//! Dice, precision and recall against ground truth, plus dataset summaries.
//!
//! Evaluation runs on stride cells over the whole slide. Ground truth is
//! binarized per cell at a tumor-area fraction of at least 0.5, and
//! uncovered predicted cells count as negative.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::raster::BinaryRaster;
use crate::simcore::SegmentationMask;
use crate::tiling::CellLayout;

pub const EVALUATION_SCOPE: &str = "stride-cell resolution, all cells, gt binarized at area fraction >= 0.5";

/// Pixel-level ground truth; `true` is tumor. Each pixel stands for a
/// `downsample x downsample` block of slide pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMask {
    pub raster: BinaryRaster,
    pub downsample: u32,
}

impl GroundTruthMask {
    pub fn new(raster: BinaryRaster, downsample: u32) -> Result<Self> {
        if downsample == 0 {
            return Err(invalid("ground-truth downsample must be >= 1"));
        }
        Ok(Self { raster, downsample })
    }

    fn check_scale(&self, layout: &CellLayout) -> Result<()> {
        let ds = self.downsample as u64;
        let w = self.raster.width as u64 * ds;
        let h = self.raster.height as u64 * ds;
        if w.abs_diff(layout.width_px as u64) >= ds || h.abs_diff(layout.height_px as u64) >= ds {
            return Err(invalid(format!(
                "ground truth {}x{} at downsample {ds} does not match slide {}x{}",
                self.raster.width, self.raster.height, layout.width_px, layout.height_px
            )));
        }
        Ok(())
    }
}

/// Binarizes ground truth onto the stride-cell raster: a cell is tumor when
/// at least half of its slide area is tumor.
pub fn resample_gt(gt: &GroundTruthMask, layout: &CellLayout) -> Result<BinaryRaster> {
    gt.check_scale(layout)?;
    let ds = gt.downsample as u64;
    let mut cells = BinaryRaster::filled(layout.cols, layout.rows, false);
    for row in 0..layout.rows {
        for col in 0..layout.cols {
            let (x0, y0, x1, y1) = layout.cell_rect(col, row);
            let area = (x1 - x0) * (y1 - y0);
            let tumor = gt.raster.positive_area(ds, x0, y0, x1, y1);
            cells.set(col, row, 2 * tumor >= area);
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// Cell-wise confusion counts; `tumor_class` is the positive label.
pub fn confusion(pred: &SegmentationMask, gt_cells: &BinaryRaster, tumor_class: u8) -> Result<Confusion> {
    if pred.layout.cols != gt_cells.width || pred.layout.rows != gt_cells.height {
        return Err(invalid(format!(
            "prediction {}x{} and ground truth {}x{} differ in size",
            pred.layout.cols, pred.layout.rows, gt_cells.width, gt_cells.height
        )));
    }
    let mut c = Confusion::default();
    for (&label, &truth) in pred.labels.iter().zip(&gt_cells.bits) {
        match (label == tumor_class, truth) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `2 tp / (2 tp + fp + fn)`; two empty masks score 1.
pub fn dsc(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

fn ratio(tp: u64, other: u64, opposite: u64) -> f64 {
    if tp + other == 0 {
        if opposite == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / (tp + other) as f64
    }
}

/// Returns `(precision, recall)`. An undefined ratio is 1 when the other
/// error count is 0 too and 0 otherwise.
pub fn precision_recall(tp: u64, fp: u64, fn_: u64) -> (f64, f64) {
    (ratio(tp, fp, fn_), ratio(tp, fn_, fp))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideReport {
    pub slide_id: String,
    pub dsc: f64,
    pub precision: f64,
    pub recall: f64,
    #[serde(flatten)]
    pub counts: Confusion,
}

impl SlideReport {
    pub fn from_confusion(slide_id: impl Into<String>, counts: Confusion) -> Self {
        let (precision, recall) = precision_recall(counts.tp, counts.fp, counts.fn_);
        Self {
            slide_id: slide_id.into(),
            dsc: dsc(counts.tp, counts.fp, counts.fn_),
            precision,
            recall,
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub group_key: String,
    pub mean_dsc: f64,
    pub std_dsc: f64,
    pub mean_precision: f64,
    pub std_precision: f64,
    pub mean_recall: f64,
    pub std_recall: f64,
    pub n_slides: usize,
    pub evaluation: String,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation of each metric.
pub fn aggregate(reports: &[SlideReport], group_key: &str) -> Result<DatasetReport> {
    if reports.is_empty() {
        return Err(invalid("cannot aggregate zero slide reports"));
    }
    let (mean_dsc, std_dsc) = mean_std(reports.iter().map(|r| r.dsc));
    let (mean_precision, std_precision) = mean_std(reports.iter().map(|r| r.precision));
    let (mean_recall, std_recall) = mean_std(reports.iter().map(|r| r.recall));
    Ok(DatasetReport {
        group_key: group_key.to_string(),
        mean_dsc,
        std_dsc,
        mean_precision,
        std_precision,
        mean_recall,
        std_recall,
        n_slides: reports.len(),
        evaluation: EVALUATION_SCOPE.to_string(),
    })
}

/// JSON lines: one slide report per line, then the summary object.
pub fn report_jsonl(slides: &[SlideReport], summary: &DatasetReport) -> Result<String> {
    let mut out = String::new();
    for r in slides {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    out.push_str(&serde_json::to_string(summary)?);
    out.push('\n');
    Ok(out)
}

/// Plain-text summary table, `mean±std` to three decimals.
pub fn report_table(summaries: &[DatasetReport]) -> String {
    let width = summaries
        .iter()
        .map(|s| s.group_key.chars().count())
        .max()
        .unwrap_or(0)
        .max("Group".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>13}  {:>13}  {:>13}  {:>4}",
        "Group", "DSC", "Precision", "Recall", "N"
    );
    for s in summaries {
        let cell = |m: f64, sd: f64| format!("{m:.3}±{sd:.3}");
        let _ = writeln!(
            out,
            "{:<width$}  {:>13}  {:>13}  {:>13}  {:>4}",
            s.group_key,
            cell(s.mean_dsc, s.std_dsc),
            cell(s.mean_precision, s.std_precision),
            cell(s.mean_recall, s.std_recall),
            s.n_slides
        );
    }
    out
}
