//! The full family of training protocols sharing the engine in
//! [`crate::protocol`]: the bootstrap phase (Init), basic MIL, static
//! Curriculum, class-selection ablations, regression ablations and the
//! multi-label / multi-instance relaxations of the competition constraint.

use std::fmt;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, ProposalBag, WeaklyLabeledDataset};
use crate::detector::{Detection, DetectorModel, SgdHyperParams};
use crate::error::{Error, Result};
use crate::geometry::{nms, BBox};
use crate::protocol::{
    self, ClassSelectionMode, CompetitionMiner, LatentMiner, ProtocolConfig, ProtocolRun,
    PseudoLabel,
};
use crate::sampling::{build_minibatch, SamplerConfig};

/// The nine named training protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantSpec {
    #[serde(rename = "SP")]
    Sp,
    #[serde(rename = "MIL")]
    Mil,
    #[serde(rename = "Curriculum")]
    Curriculum,
    #[serde(rename = "SP-all-cls")]
    SpAllCls,
    #[serde(rename = "SP-rnd-cls")]
    SpRndCls,
    #[serde(rename = "No-reg-train")]
    NoRegTrain,
    #[serde(rename = "No-reg-train-test")]
    NoRegTrainTest,
    #[serde(rename = "SP-SIML")]
    SpSiml,
    #[serde(rename = "SP-MIML")]
    SpMiml,
}

impl VariantSpec {
    pub const ALL: [VariantSpec; 9] = [
        VariantSpec::Sp,
        VariantSpec::Mil,
        VariantSpec::Curriculum,
        VariantSpec::SpAllCls,
        VariantSpec::SpRndCls,
        VariantSpec::NoRegTrain,
        VariantSpec::NoRegTrainTest,
        VariantSpec::SpSiml,
        VariantSpec::SpMiml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantSpec::Sp => "SP",
            VariantSpec::Mil => "MIL",
            VariantSpec::Curriculum => "Curriculum",
            VariantSpec::SpAllCls => "SP-all-cls",
            VariantSpec::SpRndCls => "SP-rnd-cls",
            VariantSpec::NoRegTrain => "No-reg-train",
            VariantSpec::NoRegTrainTest => "No-reg-train-test",
            VariantSpec::SpSiml => "SP-SIML",
            VariantSpec::SpMiml => "SP-MIML",
        }
    }

    /// The flag combination realizing this protocol on the shared engine.
    pub fn flags(self) -> VariantFlags {
        let sp = VariantFlags {
            mining: MiningMode::Competition,
            class_selection: ClassSelectionMode::Easiness,
            image_selection: true,
            train_regression: true,
            test_regression: true,
        };
        match self {
            VariantSpec::Sp => sp,
            VariantSpec::Mil => VariantFlags {
                mining: MiningMode::PerLabel,
                class_selection: ClassSelectionMode::All,
                image_selection: false,
                ..sp
            },
            VariantSpec::Curriculum => VariantFlags {
                mining: MiningMode::StaticInit,
                class_selection: ClassSelectionMode::All,
                ..sp
            },
            VariantSpec::SpAllCls => {
                VariantFlags { class_selection: ClassSelectionMode::All, ..sp }
            }
            VariantSpec::SpRndCls => {
                VariantFlags { class_selection: ClassSelectionMode::Random, ..sp }
            }
            VariantSpec::NoRegTrain => VariantFlags { train_regression: false, ..sp },
            VariantSpec::NoRegTrainTest => {
                VariantFlags { train_regression: false, test_regression: false, ..sp }
            }
            VariantSpec::SpSiml => VariantFlags { mining: MiningMode::PerLabelPruned, ..sp },
            VariantSpec::SpMiml => VariantFlags { mining: MiningMode::MultiInstance, ..sp },
        }
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for VariantSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        VariantSpec::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant {s:?}")))
    }
}

/// How the candidate pool is mined each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningMode {
    /// Global argmax per image plus inter-classifier competition.
    Competition,
    /// One box per image label, no competition.
    PerLabel,
    /// One box per label, pruned against the complement-class best score.
    PerLabelPruned,
    /// Per-class NMS survivors above the complement-class best score.
    MultiInstance,
    /// The static pseudo ground truth mined during Init.
    StaticInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantFlags {
    pub mining: MiningMode,
    pub class_selection: ClassSelectionMode,
    /// Score-based top-N_t image selection at pace r_t.
    pub image_selection: bool,
    /// Mine latent boxes over regressed predictions (true) or over the raw
    /// proposal set (false).
    pub train_regression: bool,
    /// Apply the regression head when evaluating the detector.
    pub test_regression: bool,
}

/// Class-restricted argmax: the best detection for one given label.
/// Ties break by lowest box index.
pub fn mil_mine(
    model: &DetectorModel,
    bag: &ProposalBag,
    label: ClassId,
    use_regression: bool,
) -> Result<Detection> {
    let detections = model.forward(bag, use_regression)?;
    let c = model.num_classes();
    let mut best: Option<Detection> = None;
    for i in 0..bag.num_proposals() {
        let d = detections[i * c + (label - 1)];
        if best.is_none_or(|b| d.score > b.score) {
            best = Some(d);
        }
    }
    best.ok_or_else(|| Error::InvalidConfig("bag has no proposals".into()))
}

/// The strongest detection over the complement label set (classes not in Y).
/// `None` when Y covers every class.
pub fn complement_best(
    model: &DetectorModel,
    bag: &ProposalBag,
    use_regression: bool,
) -> Result<Option<Detection>> {
    let detections = model.forward(bag, use_regression)?;
    let c = model.num_classes();
    let mut best: Option<Detection> = None;
    for class in 1..=c {
        if bag.labels().contains(&class) {
            continue;
        }
        for i in 0..bag.num_proposals() {
            let d = detections[i * c + (class - 1)];
            if best.is_none_or(|b| d.score > b.score) {
                best = Some(d);
            }
        }
    }
    Ok(best)
}

/// Single-instance multiple-label mining: one candidate per label, kept only
/// if it strictly beats the complement-class best score.
pub fn siml_mine(
    model: &DetectorModel,
    bag: &ProposalBag,
    use_regression: bool,
) -> Result<Vec<(ClassId, f64, BBox)>> {
    let s_o = complement_best(model, bag, use_regression)?
        .map_or(f64::NEG_INFINITY, |d| d.score);
    let mut kept = Vec::new();
    for &label in bag.labels() {
        let d = mil_mine(model, bag, label, use_regression)?;
        if d.score > s_o {
            kept.push((label, d.score, d.bbox));
        }
    }
    Ok(kept)
}

/// Multiple-instance multiple-label mining: per-class NMS over the image's
/// detections, keeping every survivor that strictly beats the
/// complement-class best score. No extra score threshold is applied.
pub fn miml_mine(
    model: &DetectorModel,
    bag: &ProposalBag,
    nms_threshold: f64,
    use_regression: bool,
) -> Result<Vec<(ClassId, f64, BBox)>> {
    let s_o = complement_best(model, bag, use_regression)?
        .map_or(f64::NEG_INFINITY, |d| d.score);
    let detections = model.forward(bag, use_regression)?;
    let c = model.num_classes();
    let mut kept = Vec::new();
    for &label in bag.labels() {
        let class_dets: Vec<(f64, BBox)> = (0..bag.num_proposals())
            .map(|i| {
                let d = detections[i * c + (label - 1)];
                (d.score, d.bbox)
            })
            .collect();
        for (score, bbox) in nms(&class_dets, nms_threshold) {
            if score > s_o {
                kept.push((label, score, bbox));
            }
        }
    }
    Ok(kept)
}

/// A per-box classification scorer used to bootstrap the detector.
pub trait InitScorer: Sync {
    fn score(&self, image_index: usize, bag: &ProposalBag, proposal: usize, class: ClassId) -> f64;
}

/// A whole-bag multi-label linear classifier trained on mean-pooled bag
/// features with image-level labels, then applied per box. This simulates a
/// classification network that never saw box annotations.
pub struct TrainedBagClassifier {
    weights: Array2<f64>,
}

impl TrainedBagClassifier {
    /// Trains with per-class logistic losses over mean-pooled features.
    pub fn train(dataset: &WeaklyLabeledDataset, epochs: usize, learning_rate: f64, seed: u64) -> Self {
        let c = dataset.num_classes();
        let d = dataset.feature_dim();
        let mut weights: Array2<f64> = Array2::zeros((c, d + 1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let pooled: Vec<Array1<f64>> = dataset
            .samples()
            .iter()
            .map(|bag| {
                let mut x = Array1::zeros(d + 1);
                for f in bag.features() {
                    for (k, &v) in f.iter().enumerate() {
                        x[k] += v;
                    }
                }
                x.mapv_inplace(|v| v / bag.num_proposals() as f64);
                x[d] = 1.0;
                x
            })
            .collect();

        let mut order: Vec<usize> = (0..dataset.len()).collect();
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let bag = &dataset.samples()[i];
                let x = &pooled[i];
                for class in 1..=c {
                    let target = if bag.labels().contains(&class) { 1.0 } else { 0.0 };
                    let z = weights.row(class - 1).dot(x);
                    let p = 1.0 / (1.0 + (-z).exp());
                    weights.row_mut(class - 1).scaled_add(-learning_rate * (p - target), x);
                }
            }
        }
        Self { weights }
    }
}

impl InitScorer for TrainedBagClassifier {
    fn score(&self, _image_index: usize, bag: &ProposalBag, proposal: usize, class: ClassId) -> f64 {
        let d = bag.feature_dim();
        let f = bag.feature(proposal);
        let mut z = self.weights[(class - 1, d)];
        for (k, &v) in f.iter().enumerate() {
            z += self.weights[(class - 1, k)] * v;
        }
        1.0 / (1.0 + (-z).exp())
    }
}

/// A controlled-study scorer: the true best IoU of the proposal against
/// ground-truth objects of the class, plus deterministic pseudo-random
/// noise. A configurable fraction of images is "corrupted": the scorer
/// returns pure noise there, modelling a bootstrap classifier that is
/// reliable on prototypical images and useless on cluttered ones.
pub struct OracleScorer {
    gt: Vec<Vec<(ClassId, BBox)>>,
    noise: f64,
    corrupt_fraction: f64,
    seed: u64,
}

impl OracleScorer {
    pub fn new(dataset: &WeaklyLabeledDataset, noise: f64, corrupt_fraction: f64, seed: u64) -> Self {
        let gt = (0..dataset.len()).map(|i| dataset.eval_ground_truth(i).to_vec()).collect();
        Self { gt, noise, corrupt_fraction, seed }
    }

    fn unit_hash(&self, key: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(key));
        rng.gen_range(0.0..1.0)
    }
}

impl InitScorer for OracleScorer {
    fn score(&self, image_index: usize, bag: &ProposalBag, proposal: usize, class: ClassId) -> f64 {
        // per-image corruption flag, deterministic in (seed, image)
        if self.corrupt_fraction > 0.0
            && self.unit_hash((image_index as u64) << 40) < self.corrupt_fraction
        {
            let key = ((image_index as u64) << 32) | ((proposal as u64) << 8) | class as u64;
            return self.unit_hash(key);
        }
        let b = &bag.proposals()[proposal];
        let base = self.gt[image_index]
            .iter()
            .filter(|(c, _)| *c == class)
            .map(|(_, g)| crate::geometry::iou(b, g))
            .fold(0.0, f64::max);
        if self.noise == 0.0 {
            return base;
        }
        let key = ((image_index as u64) << 32) | ((proposal as u64) << 8) | class as u64;
        base + self.noise * (2.0 * self.unit_hash(key ^ 0xA5A5) - 1.0)
    }
}

/// Configuration for the bootstrap phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    /// Epochs of SGD over the static pseudo ground truth to produce W_0.
    pub detector_epochs: usize,
    pub scorer: InitScorerConfig,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { detector_epochs: 2, scorer: InitScorerConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScorerConfig {
    Classifier {
        epochs: usize,
        learning_rate: f64,
    },
    Oracle {
        noise: f64,
        #[serde(default)]
        corrupt_fraction: f64,
    },
}

impl Default for InitScorerConfig {
    fn default() -> Self {
        InitScorerConfig::Classifier { epochs: 2, learning_rate: 0.5 }
    }
}

/// The bootstrap result: the static pseudo ground truth (with the scores the
/// scorer assigned, cached for the Curriculum protocol) and the pre-trained
/// weights W_0.
#[derive(Debug, Clone)]
pub struct InitOutcome {
    /// One entry per image: one (score, box) per image label.
    pub pseudo_gt: Vec<Vec<PseudoLabel>>,
    pub model: DetectorModel,
}

/// Mines the static pseudo ground truth: for every image and every label,
/// the proposal maximizing the scorer's class score. One box per label, no
/// competition, every image used.
pub fn init_pseudo_gt(
    scorer: &dyn InitScorer,
    dataset: &WeaklyLabeledDataset,
) -> Vec<Vec<PseudoLabel>> {
    dataset
        .samples()
        .par_iter()
        .enumerate()
        .map(|(i, bag)| {
            bag.labels()
                .iter()
                .map(|&label| {
                    let (best, score) = (0..bag.num_proposals())
                        .map(|p| (p, scorer.score(i, bag, p, label)))
                        .fold((0, f64::NEG_INFINITY), |acc, (p, s)| if s > acc.1 { (p, s) } else { acc });
                    PseudoLabel {
                        image_index: i,
                        score,
                        latent_box: bag.proposals()[best],
                        class: label,
                    }
                })
                .collect()
        })
        .collect()
}

/// Runs the full bootstrap: mines static pseudo ground truth with the scorer
/// and trains a fresh detector over it for a fixed number of epochs.
pub fn run_init(
    scorer: &dyn InitScorer,
    dataset: &WeaklyLabeledDataset,
    config: &InitConfig,
    hidden_units: usize,
    hyper: SgdHyperParams,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<InitOutcome> {
    sampler.validate()?;
    let pseudo_gt = init_pseudo_gt(scorer, dataset);
    let mut model = DetectorModel::new(
        dataset.num_classes(),
        dataset.feature_dim(),
        hidden_units,
        hyper,
        seed ^ 0x57df,
    );
    let gt_boxes: Vec<Vec<(ClassId, BBox)>> = pseudo_gt
        .iter()
        .map(|entries| entries.iter().map(|e| (e.class, e.latent_box)).collect())
        .collect();

    let m = sampler.images_per_batch;
    let iterations = config.detector_epochs * (dataset.len() / m).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..iterations {
        let picks: Vec<usize> = (0..m).map(|_| rng.gen_range(0..dataset.len())).collect();
        let bags: Vec<(&ProposalBag, &[(ClassId, BBox)])> =
            picks.iter().map(|&p| (&dataset.samples()[p], gt_boxes[p].as_slice())).collect();
        let batch = build_minibatch(&bags, sampler, &mut rng)?;
        let (_, grads) = model.loss_and_gradient(&batch)?;
        model.sgd_step(&grads)?;
    }
    Ok(InitOutcome { pseudo_gt, model })
}

/// Static image order for the Curriculum protocol: images sorted by their
/// highest cached label score, descending; ties by image index.
pub fn curriculum_order(init: &InitOutcome) -> Vec<usize> {
    let mut order: Vec<usize> = (0..init.pseudo_gt.len()).collect();
    let key = |i: usize| {
        init.pseudo_gt[i].iter().map(|e| e.score).fold(f64::NEG_INFINITY, f64::max)
    };
    order.sort_by(|&a, &b| key(b).partial_cmp(&key(a)).unwrap().then(a.cmp(&b)));
    order
}

/// Per-label miner (basic MIL): one latent box per image label, no
/// competition.
pub struct PerLabelMiner {
    pub use_regression: bool,
}

impl LatentMiner for PerLabelMiner {
    fn mine(&self, model: &DetectorModel, dataset: &WeaklyLabeledDataset) -> Result<Vec<PseudoLabel>> {
        let per_image: Vec<Vec<PseudoLabel>> = dataset
            .samples()
            .par_iter()
            .enumerate()
            .map(|(i, bag)| -> Result<Vec<PseudoLabel>> {
                bag.labels()
                    .iter()
                    .map(|&label| {
                        let d = mil_mine(model, bag, label, self.use_regression)?;
                        Ok(PseudoLabel {
                            image_index: i,
                            score: d.score,
                            latent_box: d.bbox,
                            class: label,
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(per_image.into_iter().flatten().collect())
    }
}

/// Single-instance multi-label miner.
pub struct SimlMiner {
    pub use_regression: bool,
}

impl LatentMiner for SimlMiner {
    fn mine(&self, model: &DetectorModel, dataset: &WeaklyLabeledDataset) -> Result<Vec<PseudoLabel>> {
        let per_image: Vec<Vec<PseudoLabel>> = dataset
            .samples()
            .par_iter()
            .enumerate()
            .map(|(i, bag)| -> Result<Vec<PseudoLabel>> {
                Ok(siml_mine(model, bag, self.use_regression)?
                    .into_iter()
                    .map(|(class, score, latent_box)| PseudoLabel {
                        image_index: i,
                        score,
                        latent_box,
                        class,
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(per_image.into_iter().flatten().collect())
    }
}

/// Multi-instance multi-label miner.
pub struct MimlMiner {
    pub use_regression: bool,
    pub nms_threshold: f64,
}

impl LatentMiner for MimlMiner {
    fn mine(&self, model: &DetectorModel, dataset: &WeaklyLabeledDataset) -> Result<Vec<PseudoLabel>> {
        let per_image: Vec<Vec<PseudoLabel>> = dataset
            .samples()
            .par_iter()
            .enumerate()
            .map(|(i, bag)| -> Result<Vec<PseudoLabel>> {
                Ok(miml_mine(model, bag, self.nms_threshold, self.use_regression)?
                    .into_iter()
                    .map(|(class, score, latent_box)| PseudoLabel {
                        image_index: i,
                        score,
                        latent_box,
                        class,
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(per_image.into_iter().flatten().collect())
    }
}

/// The Curriculum miner: ignores the model and always returns the static
/// pseudo ground truth cached at Init time.
pub struct StaticMiner {
    pub cache: Vec<Vec<PseudoLabel>>,
}

impl LatentMiner for StaticMiner {
    fn mine(&self, _model: &DetectorModel, _dataset: &WeaklyLabeledDataset) -> Result<Vec<PseudoLabel>> {
        Ok(self.cache.iter().flatten().cloned().collect())
    }
}

/// Dispatches a named protocol onto the shared engine.
pub fn run_variant(
    spec: VariantSpec,
    init: &InitOutcome,
    dataset: &WeaklyLabeledDataset,
    config: &ProtocolConfig,
) -> Result<ProtocolRun> {
    let flags = spec.flags();
    let miner: Box<dyn LatentMiner> = match flags.mining {
        MiningMode::Competition => {
            Box::new(CompetitionMiner { use_regression: flags.train_regression })
        }
        MiningMode::PerLabel => Box::new(PerLabelMiner { use_regression: flags.train_regression }),
        MiningMode::PerLabelPruned => {
            Box::new(SimlMiner { use_regression: flags.train_regression })
        }
        MiningMode::MultiInstance => Box::new(MimlMiner {
            use_regression: flags.train_regression,
            nms_threshold: config.mining_nms_threshold,
        }),
        MiningMode::StaticInit => Box::new(StaticMiner { cache: init.pseudo_gt.clone() }),
    };
    protocol::run(
        dataset,
        &init.model,
        miner.as_ref(),
        flags.class_selection,
        flags.image_selection,
        config,
    )
}
