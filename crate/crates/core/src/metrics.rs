//! Cumulative IoU, precision at IoU thresholds, and threshold calibration.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::mask::Mask;
use crate::model::{Dmn, Stage};
use crate::data::Example;
use crate::numeric::Tensor;
use crate::upsample::binarize;

/// IoU levels reported as `Pr@X`.
pub const PR_LEVELS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// Thresholds `k / 100` for `k = 1..=99`.
pub fn threshold_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAt {
    pub iou: f64,
    /// Percentage of scored examples whose IoU is strictly above `iou`.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Total intersection over total union.
    pub cumulative_miou: f64,
    /// Mean of per-example IoUs, for comparison only.
    pub per_image_mean_iou: f64,
    pub precision: Vec<PrecisionAt>,
    pub threshold: f64,
    /// IoU of every example with a nonempty union, in dataset order.
    pub ious: Vec<f64>,
    /// Examples where both prediction and ground truth are empty.
    pub excluded: usize,
    pub intersection: u64,
    pub union: u64,
}

impl EvalReport {
    pub fn precision_at(&self, iou: f64) -> Option<f64> {
        self.precision.iter().find(|p| p.iou == iou).map(|p| p.percent)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "threshold {:.2}\ncumulative mIoU {:.4}\nper-image mean IoU {:.4}\n",
            self.threshold, self.cumulative_miou, self.per_image_mean_iou
        );
        for p in &self.precision {
            s.push_str(&format!("Pr@{:.1} {:.2}%\n", p.iou, p.percent));
        }
        s.push_str(&format!("scored {} excluded {}\n", self.ious.len(), self.excluded));
        s
    }
}

/// Report for predicted masks against ground truth.
pub fn report_from_masks(preds: &[Mask], gts: &[Mask], threshold: f64) -> Result<EvalReport> {
    ensure!(!gts.is_empty(), "cannot evaluate an empty dataset");
    ensure!(
        preds.len() == gts.len(),
        "{} predictions for {} ground-truth masks",
        preds.len(),
        gts.len()
    );
    let (mut inter, mut union) = (0u64, 0u64);
    let mut ious = Vec::with_capacity(gts.len());
    let mut excluded = 0;
    for (p, t) in preds.iter().zip(gts) {
        let (i, u) = p.overlap(t)?;
        if u == 0 {
            excluded += 1;
            continue;
        }
        inter += i;
        union += u;
        ious.push(i as f64 / u as f64);
    }
    ensure!(
        union > 0,
        "every example has an empty prediction and an empty ground truth"
    );
    let n = ious.len() as f64;
    let precision = PR_LEVELS
        .iter()
        .map(|&x| PrecisionAt {
            iou: x,
            percent: 100.0 * ious.iter().filter(|&&v| v > x).count() as f64 / n,
        })
        .collect();
    Ok(EvalReport {
        cumulative_miou: inter as f64 / union as f64,
        per_image_mean_iou: ious.iter().sum::<f64>() / n,
        precision,
        threshold,
        ious,
        excluded,
        intersection: inter,
        union,
    })
}

pub fn report_from_heatmaps(heatmaps: &[Tensor], gts: &[Mask], threshold: f64) -> Result<EvalReport> {
    let preds = heatmaps
        .iter()
        .map(|h| binarize(h, threshold))
        .collect::<Result<Vec<_>>>()?;
    report_from_masks(&preds, gts, threshold)
}

/// Grid threshold maximizing cumulative IoU; ties go to the smallest.
pub fn calibrate_from_heatmaps(heatmaps: &[Tensor], gts: &[Mask]) -> Result<f64> {
    ensure!(!gts.is_empty(), "cannot calibrate on an empty split");
    let mut best: Option<(f64, f64)> = None;
    for theta in threshold_grid() {
        let score = report_from_heatmaps(heatmaps, gts, theta)?.cumulative_miou;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((theta, score));
        }
    }
    Ok(best.expect("grid is nonempty").0)
}

/// Heatmaps at `stage` resolution and ground truth brought to that resolution.
pub fn model_outputs(model: &Dmn, examples: &[Example], stage: Stage) -> Result<(Vec<Tensor>, Vec<Mask>)> {
    let factor = model.output_factor(stage);
    let mut hms = Vec::with_capacity(examples.len());
    let mut gts = Vec::with_capacity(examples.len());
    for ex in examples {
        hms.push(model.heatmap(&ex.image.to_tensor(), &ex.query, stage)?);
        gts.push(ex.mask.downsample(factor)?);
    }
    Ok((hms, gts))
}

/// Evaluates at the model's configured stage.
pub fn evaluate(model: &Dmn, examples: &[Example], threshold: f64) -> Result<EvalReport> {
    ensure!((0.0..=1.0).contains(&threshold), "threshold {threshold} is outside [0, 1]");
    ensure!(!examples.is_empty(), "cannot evaluate an empty dataset");
    let (hms, gts) = model_outputs(model, examples, model.config().stage)?;
    report_from_heatmaps(&hms, &gts, threshold)
}

pub fn calibrate_threshold(model: &Dmn, examples: &[Example]) -> Result<f64> {
    ensure!(!examples.is_empty(), "cannot calibrate on an empty split");
    let (hms, gts) = model_outputs(model, examples, model.config().stage)?;
    calibrate_from_heatmaps(&hms, &gts)
}
