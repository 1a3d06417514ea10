//! Dataset model for weakly-labeled bag-of-boxes data.
//!
//! A sample ([`ProposalBag`]) carries candidate boxes, one feature vector per
//! box, and the image-level label set. Box-level ground truth exists only for
//! evaluation and is held by the dataset, never by the bag, so training code
//! that consumes bags cannot reach it:
//!
//! ```compile_fail
//! # use wsdet::data::ProposalBag;
//! fn peek(bag: &ProposalBag) {
//!     let _ = bag.eval_ground_truth();
//! }
//! ```

mod format;
mod synth;

pub use format::{load, save};
pub use synth::{generate, generate_train_test, SyntheticConfig};

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Class label. Classes run 1..=C; 0 is reserved for background in
/// classification targets.
pub type ClassId = usize;

/// One weakly-labeled image: a bag of proposal boxes with per-box features
/// and an image-level label set.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalBag {
    image_id: String,
    mirrored: bool,
    proposals: Vec<BBox>,
    features: Vec<Vec<f64>>,
    labels: BTreeSet<ClassId>,
}

impl ProposalBag {
    pub fn new(
        image_id: String,
        mirrored: bool,
        proposals: Vec<BBox>,
        features: Vec<Vec<f64>>,
        labels: BTreeSet<ClassId>,
    ) -> Result<Self> {
        if proposals.is_empty() {
            return Err(Error::InvalidConfig(format!("bag {image_id}: no proposals")));
        }
        if proposals.len() != features.len() {
            return Err(Error::DimensionMismatch {
                expected: proposals.len(),
                actual: features.len(),
                context: format!("bag {image_id}: one feature vector per proposal"),
            });
        }
        let d = features[0].len();
        if let Some(bad) = features.iter().find(|f| f.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: bad.len(),
                context: format!("bag {image_id}: inconsistent feature dimension"),
            });
        }
        if labels.is_empty() {
            return Err(Error::InvalidConfig(format!("bag {image_id}: empty label set")));
        }
        Ok(Self { image_id, mirrored, proposals, features, labels })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    /// True for samples appended by [`WeaklyLabeledDataset::mirrored`].
    pub fn is_mirrored(&self) -> bool {
        self.mirrored
    }

    pub fn proposals(&self) -> &[BBox] {
        &self.proposals
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn feature(&self, proposal: usize) -> &[f64] {
        &self.features[proposal]
    }

    pub fn labels(&self) -> &BTreeSet<ClassId> {
        &self.labels
    }

    pub fn num_proposals(&self) -> usize {
        self.proposals.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].len()
    }
}

/// A full weakly-labeled dataset. Immutable after construction.
///
/// Evaluation-only box annotations are stored here, parallel to the samples,
/// and exposed only through [`WeaklyLabeledDataset::eval_ground_truth`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeaklyLabeledDataset {
    samples: Vec<ProposalBag>,
    eval_gt: Vec<Vec<(ClassId, BBox)>>,
    num_classes: usize,
    feature_dim: usize,
    plane: (f64, f64),
}

impl WeaklyLabeledDataset {
    pub fn new(
        samples: Vec<ProposalBag>,
        eval_gt: Vec<Vec<(ClassId, BBox)>>,
        num_classes: usize,
        feature_dim: usize,
        plane: (f64, f64),
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidConfig(format!("num_classes must be >= 2, got {num_classes}")));
        }
        if samples.len() != eval_gt.len() {
            return Err(Error::DimensionMismatch {
                expected: samples.len(),
                actual: eval_gt.len(),
                context: "one eval annotation list per sample".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for bag in &samples {
            if !seen.insert(bag.image_id().to_string()) {
                return Err(Error::InvalidConfig(format!("duplicate image_id {}", bag.image_id())));
            }
            if bag.feature_dim() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    actual: bag.feature_dim(),
                    context: format!("bag {}", bag.image_id()),
                });
            }
            if let Some(&c) = bag.labels().iter().find(|&&c| c == 0 || c > num_classes) {
                return Err(Error::InvalidConfig(format!(
                    "bag {}: label {c} outside 1..={num_classes}",
                    bag.image_id()
                )));
            }
        }
        for gts in &eval_gt {
            if let Some((c, _)) = gts.iter().find(|(c, _)| *c == 0 || *c > num_classes) {
                return Err(Error::InvalidConfig(format!("eval class {c} outside 1..={num_classes}")));
            }
        }
        Ok(Self { samples, eval_gt, num_classes, feature_dim, plane })
    }

    pub fn samples(&self) -> &[ProposalBag] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// (width, height) of the image plane all boxes live in.
    pub fn plane(&self) -> (f64, f64) {
        self.plane
    }

    /// Evaluation-only annotations for one sample. Metric code only.
    pub fn eval_ground_truth(&self, index: usize) -> &[(ClassId, BBox)] {
        &self.eval_gt[index]
    }

    /// Number of samples whose label set contains `class`.
    pub fn label_frequency(&self, class: ClassId) -> usize {
        self.samples.iter().filter(|b| b.labels().contains(&class)).count()
    }

    /// Appends a horizontally reflected copy of every sample. Boxes (and the
    /// evaluation annotations) are reflected about the plane's vertical axis;
    /// features are copied unchanged. Mirrored copies get a "/m" id suffix
    /// (extended until unique) and toggle the mirrored flag.
    pub fn mirrored(&self) -> Result<WeaklyLabeledDataset> {
        let w = self.plane.0;
        let mut ids: BTreeSet<String> =
            self.samples.iter().map(|b| b.image_id().to_string()).collect();
        let mut samples = self.samples.clone();
        let mut eval_gt = self.eval_gt.clone();
        for (bag, gts) in self.samples.iter().zip(&self.eval_gt) {
            let mut id = format!("{}/m", bag.image_id());
            while !ids.insert(id.clone()) {
                id.push('m');
            }
            samples.push(ProposalBag::new(
                id,
                !bag.mirrored,
                bag.proposals.iter().map(|b| b.mirrored(w)).collect(),
                bag.features.clone(),
                bag.labels.clone(),
            )?);
            eval_gt.push(gts.iter().map(|(c, b)| (*c, b.mirrored(w))).collect());
        }
        WeaklyLabeledDataset::new(samples, eval_gt, self.num_classes, self.feature_dim, self.plane)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bag(id: &str, labels: &[usize]) -> ProposalBag {
        ProposalBag::new(
            id.to_string(),
            false,
            vec![BBox::new(1.0, 0.0, 3.0, 10.0).unwrap()],
            vec![vec![0.0, 0.0]],
            labels.iter().copied().collect(),
        )
        .unwrap()
    }

    fn tiny_dataset() -> WeaklyLabeledDataset {
        WeaklyLabeledDataset::new(
            vec![bag("a", &[1]), bag("b", &[1, 2])],
            vec![vec![(1, BBox::new(1.0, 0.0, 3.0, 10.0).unwrap())], vec![]],
            2,
            2,
            (10.0, 10.0),
        )
        .unwrap()
    }

    #[test]
    fn mirror_doubles_cardinality() {
        let d = tiny_dataset();
        assert_eq!(d.mirrored().unwrap().len(), 2 * d.len());
    }

    #[test]
    fn mirror_reflects_boxes() {
        let d = tiny_dataset().mirrored().unwrap();
        let m = &d.samples()[2];
        assert!(m.is_mirrored());
        assert_eq!(m.image_id(), "a/m");
        let b = m.proposals()[0];
        // (1,0,3,10) in a width-10 plane reflects to (7,0,9,10)
        assert_eq!((b.x1(), b.y1(), b.x2(), b.y2()), (7.0, 0.0, 9.0, 10.0));
        assert_eq!(d.eval_ground_truth(2)[0].1, b);
    }

    #[test]
    fn mirror_is_involutive_on_boxes() {
        let d = tiny_dataset();
        let dd = d.mirrored().unwrap().mirrored().unwrap();
        // entries 6..8 mirror the first-pass copies: original geometry restored
        for (orig, twice) in d.samples().iter().zip(&dd.samples()[6..8]) {
            assert_eq!(orig.proposals(), twice.proposals());
            assert!(!twice.is_mirrored());
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = WeaklyLabeledDataset::new(
            vec![bag("a", &[1]), bag("a", &[2])],
            vec![vec![], vec![]],
            2,
            2,
            (10.0, 10.0),
        );
        assert!(err.is_err());
    }

    #[test]
    fn label_frequency_counts_samples() {
        let d = tiny_dataset();
        assert_eq!(d.label_frequency(1), 2);
        assert_eq!(d.label_frequency(2), 1);
    }
}
