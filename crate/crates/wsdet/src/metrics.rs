//! Detection evaluation: per-class AP and mAP, CorLoc, and precision of
//! selected pseudo ground truth.
//!
//! AP follows the standard protocol: detections sorted by descending score,
//! greedy matching against unmatched ground truth at the IoU threshold,
//! duplicates counted as false positives, area under the precision envelope
//! versus recall. Mirrored samples are excluded from dataset-wide metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::WeaklyLabeledDataset;
use crate::detector::DetectorModel;
use crate::error::Result;
use crate::geometry::{iou, nms, BBox};
use crate::protocol::PseudoLabel;

/// AP integration rule. All-point is the default; eleven-point is available
/// for comparability with older protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApInterpolation {
    AllPoint,
    ElevenPoint,
}

/// One scored detection of a single class, pooled across a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassDetection {
    /// Index into the evaluated image list.
    pub image: usize,
    pub score: f64,
    pub bbox: BBox,
}

/// Greedy TP/FP assignment for one class: each detection (score-descending)
/// matches the unmatched ground-truth box with the highest IoU >= `iou_min`;
/// everything else, duplicates included, is a false positive.
fn match_detections(
    detections: &[ClassDetection],
    gt: &[Vec<BBox>],
    iou_min: f64,
) -> Vec<bool> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut taken: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = vec![false; detections.len()];
    for &di in &order {
        let det = &detections[di];
        let mut best: Option<(f64, usize)> = None;
        for (gi, gbox) in gt[det.image].iter().enumerate() {
            if taken[det.image][gi] {
                continue;
            }
            let v = iou(&det.bbox, gbox);
            if v >= iou_min && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, gi));
            }
        }
        if let Some((_, gi)) = best {
            taken[det.image][gi] = true;
            tp[di] = true;
        }
    }
    // report flags in score order
    order.iter().map(|&i| tp[i]).collect()
}

/// Average precision for one class. `gt` holds the class's ground-truth
/// boxes per evaluated image. Returns `None` when the class has no ground
/// truth (undefined AP).
pub fn average_precision(
    detections: &[ClassDetection],
    gt: &[Vec<BBox>],
    iou_min: f64,
    interpolation: ApInterpolation,
) -> Option<f64> {
    let total_gt: usize = gt.iter().map(|g| g.len()).sum();
    if total_gt == 0 {
        return None;
    }
    if detections.is_empty() {
        return Some(0.0);
    }
    let tp_flags = match_detections(detections, gt, iou_min);
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut recall = Vec::with_capacity(tp_flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for flag in tp_flags {
        if flag {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / total_gt as f64);
    }
    Some(match interpolation {
        ApInterpolation::AllPoint => {
            // precision envelope from the right, integrated over recall steps
            let mut envelope = precision.clone();
            for i in (0..envelope.len().saturating_sub(1)).rev() {
                envelope[i] = envelope[i].max(envelope[i + 1]);
            }
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (r, p) in recall.iter().zip(&envelope) {
                ap += (r - prev_recall) * p;
                prev_recall = *r;
            }
            ap
        }
        ApInterpolation::ElevenPoint => {
            let mut total = 0.0;
            for k in 0..=10 {
                let r_level = k as f64 / 10.0;
                let p_max = precision
                    .iter()
                    .zip(&recall)
                    .filter(|(_, &r)| r >= r_level)
                    .map(|(&p, _)| p)
                    .fold(0.0, f64::max);
                total += p_max;
            }
            total / 11.0
        }
    })
}

/// Per-class AP and mAP on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// AP per class (index k = class k + 1); `None` for classes without
    /// ground truth, which are excluded from the mean.
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
    pub images_evaluated: usize,
    pub detections_evaluated: usize,
}

/// Forwards the detector over every non-mirrored sample, applies per-image
/// per-class NMS, and computes AP per class against the evaluation ground
/// truth.
pub fn evaluate_detector(
    model: &DetectorModel,
    dataset: &WeaklyLabeledDataset,
    use_regression: bool,
    nms_threshold: f64,
    iou_min: f64,
    interpolation: ApInterpolation,
) -> Result<MetricsReport> {
    let c = dataset.num_classes();
    let eval_indices: Vec<usize> =
        (0..dataset.len()).filter(|&i| !dataset.samples()[i].is_mirrored()).collect();

    // survivors[image][class - 1] = NMS-kept (score, box) list
    let survivors: Vec<Vec<Vec<(f64, BBox)>>> = eval_indices
        .par_iter()
        .map(|&i| -> Result<Vec<Vec<(f64, BBox)>>> {
            let bag = &dataset.samples()[i];
            let dets = model.forward(bag, use_regression)?;
            Ok((1..=c)
                .map(|class| {
                    let class_dets: Vec<(f64, BBox)> = (0..bag.num_proposals())
                        .map(|p| {
                            let d = dets[p * c + (class - 1)];
                            (d.score, d.bbox)
                        })
                        .collect();
                    nms(&class_dets, nms_threshold)
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut detections_evaluated = 0;
    let per_class_ap: Vec<Option<f64>> = (1..=c)
        .map(|class| {
            let mut dets: Vec<ClassDetection> = Vec::new();
            for (local, per_class) in survivors.iter().enumerate() {
                for &(score, bbox) in &per_class[class - 1] {
                    dets.push(ClassDetection { image: local, score, bbox });
                }
            }
            detections_evaluated += dets.len();
            let gt: Vec<Vec<BBox>> = eval_indices
                .iter()
                .map(|&i| {
                    dataset
                        .eval_ground_truth(i)
                        .iter()
                        .filter(|(gc, _)| *gc == class)
                        .map(|(_, b)| *b)
                        .collect()
                })
                .collect();
            average_precision(&dets, &gt, iou_min, interpolation)
        })
        .collect();

    let defined: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    if defined.len() < c {
        log::warn!(
            "{} classes have no ground truth; excluded from mAP",
            c - defined.len()
        );
    }
    let map = if defined.is_empty() { 0.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 };
    Ok(MetricsReport {
        per_class_ap,
        map,
        images_evaluated: eval_indices.len(),
        detections_evaluated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorLocReport {
    /// Correct localization rate per class over (image, label) pairs;
    /// `None` for classes that appear in no label set.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
    pub pairs_evaluated: usize,
}

/// Correct localization: for every non-mirrored (image, label) pair, the
/// top-scoring detection of that class (no NMS) must overlap a ground-truth
/// object of the class with IoU >= 0.5.
pub fn corloc(
    model: &DetectorModel,
    dataset: &WeaklyLabeledDataset,
    use_regression: bool,
) -> Result<CorLocReport> {
    let c = dataset.num_classes();
    let mut correct = vec![0usize; c];
    let mut total = vec![0usize; c];
    let mut pairs = 0;
    for (i, bag) in dataset.samples().iter().enumerate() {
        if bag.is_mirrored() {
            continue;
        }
        for &label in bag.labels() {
            let top = crate::variants::mil_mine(model, bag, label, use_regression)?;
            let hit = dataset
                .eval_ground_truth(i)
                .iter()
                .any(|(gc, gbox)| *gc == label && iou(&top.bbox, gbox) >= 0.5);
            total[label - 1] += 1;
            if hit {
                correct[label - 1] += 1;
            }
            pairs += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| (total[k] > 0).then(|| correct[k] as f64 / total[k] as f64))
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if defined.is_empty() { 0.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 };
    Ok(CorLocReport { per_class, mean, pairs_evaluated: pairs })
}

/// Exact rational precision count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecisionCount {
    pub correct: usize,
    pub total: usize,
}

impl PrecisionCount {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Fraction of selected pseudo labels that match a true ground-truth
/// instance of the same class with IoU >= `iou_min`.
pub fn pseudo_gt_precision(
    selected: &[PseudoLabel],
    dataset: &WeaklyLabeledDataset,
    iou_min: f64,
) -> PrecisionCount {
    let correct = selected
        .iter()
        .filter(|p| {
            dataset
                .eval_ground_truth(p.image_index)
                .iter()
                .any(|(gc, gbox)| *gc == p.class && iou(&p.latent_box, gbox) >= iou_min)
        })
        .count();
    PrecisionCount { correct, total: selected.len() }
}
