//! Image-centric mini-batch construction from pseudo ground truth.
//!
//! Each proposal is matched against its image's pseudo-GT boxes by maximum
//! IoU; matches above `fg_iou_min` become foreground samples with a
//! regression target, matches inside `bg_iou` become background samples.
//! Up to `fg_fraction` of the per-image box budget is filled with foreground
//! drawn uniformly without replacement, the remainder with background.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, ProposalBag};
use crate::detector::{BatchSample, MiniBatch};
use crate::error::{Error, Result};
use crate::geometry::{encode_regression, iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Images per mini-batch (m).
    pub images_per_batch: usize,
    /// Boxes per mini-batch (R).
    pub batch_size: usize,
    pub fg_fraction: f64,
    pub fg_iou_min: f64,
    /// Background IoU range [lo, hi).
    pub bg_iou: (f64, f64),
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            images_per_batch: 2,
            batch_size: 128,
            fg_fraction: 0.25,
            fg_iou_min: 0.5,
            bg_iou: (0.1, 0.5),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.images_per_batch == 0 {
            return bad("images_per_batch must be >= 1".into());
        }
        if self.batch_size < self.images_per_batch {
            return bad(format!(
                "batch_size {} must be >= images_per_batch {}",
                self.batch_size, self.images_per_batch
            ));
        }
        if !(self.fg_fraction > 0.0 && self.fg_fraction < 1.0) {
            return bad(format!("fg_fraction must lie in (0, 1), got {}", self.fg_fraction));
        }
        let (lo, hi) = self.bg_iou;
        if !(0.0 <= lo && lo < hi && hi <= self.fg_iou_min) {
            return bad(format!(
                "bg_iou [{lo}, {hi}) must satisfy 0 <= lo < hi <= fg_iou_min {}",
                self.fg_iou_min
            ));
        }
        Ok(())
    }
}

pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Max-IoU match of one proposal against the pseudo-GT boxes; ties break by
/// lowest GT index.
fn best_match(proposal: &BBox, pseudo_gt: &[(ClassId, BBox)]) -> (f64, usize) {
    let mut best = (0.0, 0);
    for (idx, (_, gt)) in pseudo_gt.iter().enumerate() {
        let v = iou(proposal, gt);
        if v > best.0 {
            best = (v, idx);
        }
    }
    best
}

/// Builds one mini-batch from `m` images and their pseudo ground truth.
/// Deterministic given the rng state.
pub fn build_minibatch(
    bags: &[(&ProposalBag, &[(ClassId, BBox)])],
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MiniBatch> {
    config.validate()?;
    if bags.len() != config.images_per_batch {
        return Err(Error::InvalidConfig(format!(
            "expected {} images per mini-batch, got {}",
            config.images_per_batch,
            bags.len()
        )));
    }
    if let Some((bag, _)) = bags.iter().find(|(_, gt)| gt.is_empty()) {
        return Err(Error::InvalidConfig(format!(
            "image {} has no pseudo ground truth",
            bag.image_id()
        )));
    }

    let m = config.images_per_batch;
    let base_budget = config.batch_size / m;
    let extra = config.batch_size % m;

    let mut batch = MiniBatch::default();
    for (slot, (bag, pseudo_gt)) in bags.iter().enumerate() {
        let budget = base_budget + usize::from(slot < extra);
        batch.image_ids.push(bag.image_id().to_string());

        let matches: Vec<(f64, usize)> =
            bag.proposals().iter().map(|p| best_match(p, pseudo_gt)).collect();
        let fg: Vec<usize> = (0..matches.len())
            .filter(|&i| matches[i].0 >= config.fg_iou_min)
            .collect();
        let (bg_lo, bg_hi) = config.bg_iou;
        let mut bg: Vec<usize> = (0..matches.len())
            .filter(|&i| matches[i].0 >= bg_lo && matches[i].0 < bg_hi)
            .collect();
        if bg.is_empty() {
            // widen to [0, fg_iou_min) so the image still yields negatives
            bg = (0..matches.len()).filter(|&i| matches[i].0 < config.fg_iou_min).collect();
            batch.bg_range_widened += 1;
            log::warn!(
                "image {}: no background proposals in [{bg_lo}, {bg_hi}), widened to [0, {})",
                bag.image_id(),
                config.fg_iou_min
            );
        }

        let fg_quota = round_half_up(config.fg_fraction * budget as f64);
        let n_fg = fg.len().min(fg_quota);
        let chosen_fg = rand::seq::index::sample(rng, fg.len(), n_fg);
        for k in chosen_fg.iter() {
            let i = fg[k];
            let (_, gt_idx) = matches[i];
            let (class, gt_box) = pseudo_gt[gt_idx];
            let target = encode_regression(&bag.proposals()[i], &gt_box);
            batch.samples.push(BatchSample::foreground(bag.feature(i).to_vec(), class, target)?);
        }

        let n_bg = budget - n_fg;
        if bg.is_empty() {
            continue;
        }
        if bg.len() >= n_bg {
            for k in rand::seq::index::sample(rng, bg.len(), n_bg).iter() {
                batch.samples.push(BatchSample::background(bag.feature(bg[k]).to_vec()));
            }
        } else {
            // scarce negatives: sample with replacement
            for _ in 0..n_bg {
                let i = bg[rng.gen_range(0..bg.len())];
                batch.samples.push(BatchSample::background(bag.feature(i).to_vec()));
            }
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::collections::BTreeSet;

    fn bag(proposals: Vec<BBox>, labels: &[usize]) -> ProposalBag {
        let d = 3;
        let features = proposals.iter().enumerate().map(|(i, _)| vec![i as f64; d]).collect();
        let labels: BTreeSet<usize> = labels.iter().copied().collect();
        ProposalBag::new("s".into(), false, proposals, features, labels).unwrap()
    }

    fn grid_boxes(n: usize) -> Vec<BBox> {
        (0..n)
            .map(|i| {
                let x = (i % 10) as f64 * 10.0;
                let y = (i / 10) as f64 * 10.0;
                BBox::new(x, y, x + 8.0, y + 8.0).unwrap()
            })
            .collect()
    }

    #[test]
    fn default_composition_respects_quota() {
        // plenty of fg and bg candidates in both images
        let gt_box = BBox::new(0.0, 0.0, 8.0, 8.0).unwrap();
        let mut proposals = Vec::new();
        for i in 0..40 {
            // 40 near-duplicates of the gt box: all IoU >= 0.5
            let off = i as f64 * 0.02;
            proposals.push(BBox::new(off, 0.0, 8.0 + off, 8.0).unwrap());
        }
        for i in 0..60 {
            // shifted boxes with IoU inside [0.1, 0.5)
            let off = 4.0 + (i % 10) as f64 * 0.05;
            proposals.push(BBox::new(off, 0.0, 8.0 + off, 8.0).unwrap());
        }
        let b1 = bag(proposals.clone(), &[1]);
        let b2 = bag(proposals, &[1]);
        let pseudo = [(1usize, gt_box)];
        let config = SamplerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch =
            build_minibatch(&[(&b1, &pseudo[..]), (&b2, &pseudo[..])], &config, &mut rng).unwrap();
        assert_eq!(batch.samples.len(), 128);
        let n_fg = batch.samples.iter().filter(|s| s.class() != 0).count();
        assert_eq!(n_fg, 32, "16 foreground per image at fg_fraction 0.25, R/m = 64");
        assert_eq!(batch.bg_range_widened, 0);
    }

    #[test]
    fn pseudo_gt_equal_to_proposal_gives_zero_target() {
        let gt = BBox::new(10.0, 10.0, 30.0, 30.0).unwrap();
        let mut proposals = grid_boxes(20);
        proposals.push(gt);
        let b = bag(proposals, &[2]);
        let pseudo = [(2usize, gt)];
        let config = SamplerConfig { images_per_batch: 1, batch_size: 64, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = build_minibatch(&[(&b, &pseudo[..])], &config, &mut rng).unwrap();
        let fg: Vec<_> = batch.samples.iter().filter(|s| s.class() != 0).collect();
        assert_eq!(fg.len(), 1);
        assert_eq!(fg[0].class(), 2);
        assert_eq!(fg[0].regression().unwrap().as_array(), [0.0; 4]);
    }

    #[test]
    fn disjoint_pseudo_gt_yields_all_background() {
        let b = bag(grid_boxes(10), &[1]);
        let far = BBox::new(200.0, 200.0, 220.0, 220.0).unwrap();
        let pseudo = [(1usize, far)];
        let config = SamplerConfig { images_per_batch: 1, batch_size: 32, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = build_minibatch(&[(&b, &pseudo[..])], &config, &mut rng).unwrap();
        assert!(batch.samples.iter().all(|s| s.class() == 0));
        assert_eq!(batch.samples.len(), 32);
        // all proposals have IoU 0 which is below bg_lo -> widening fired
        assert_eq!(batch.bg_range_widened, 1);
    }

    #[test]
    fn deterministic_given_seed() {
        let gt = BBox::new(0.0, 0.0, 8.0, 8.0).unwrap();
        let b = bag(grid_boxes(30), &[1]);
        let pseudo = [(1usize, gt)];
        let config = SamplerConfig { images_per_batch: 1, batch_size: 16, ..Default::default() };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let batch = build_minibatch(&[(&b, &pseudo[..])], &config, &mut rng).unwrap();
            batch.samples.iter().map(|s| (s.class(), s.feature().to_vec())).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn wrong_image_count_is_an_error() {
        let b = bag(grid_boxes(5), &[1]);
        let pseudo = [(1usize, grid_boxes(1)[0])];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = build_minibatch(&[(&b, &pseudo[..])], &SamplerConfig::default(), &mut rng);
        assert!(err.is_err());
    }

    #[test]
    fn fg_samples_meet_iou_threshold() {
        let gt = BBox::new(5.0, 5.0, 20.0, 20.0).unwrap();
        let mut proposals = grid_boxes(40);
        proposals.push(BBox::new(6.0, 5.0, 21.0, 20.0).unwrap());
        proposals.push(BBox::new(5.0, 7.0, 20.0, 22.0).unwrap());
        let b = bag(proposals.clone(), &[3]);
        let pseudo = [(3usize, gt)];
        let config = SamplerConfig { images_per_batch: 1, batch_size: 40, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch = build_minibatch(&[(&b, &pseudo[..])], &config, &mut rng).unwrap();
        for s in batch.samples.iter().filter(|s| s.class() != 0) {
            // recover the proposal by feature identity and check its IoU
            let idx = s.feature()[0] as usize;
            assert!(iou(&proposals[idx], &gt) >= config.fg_iou_min);
        }
    }
}
