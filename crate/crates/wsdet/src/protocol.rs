//! The self-paced training engine: latent-box mining with inter-classifier
//! competition, class easiness and selection, score-based image selection,
//! the linear schedule, and the one-epoch inner SGD loop.
//!
//! The engine is generic over the latent-box miner so every protocol variant
//! shares the same selection and training machinery.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, ProposalBag, WeaklyLabeledDataset};
use crate::detector::{Detection, DetectorModel};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::sampling::{build_minibatch, round_half_up, SamplerConfig};

/// One mined pseudo-ground-truth tuple: the image, the winning score, the
/// latent box and its class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub image_index: usize,
    pub score: f64,
    pub latent_box: BBox,
    pub class: ClassId,
}

/// All pseudo labels selected for one image in one self-paced iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingImage {
    pub image_index: usize,
    pub entries: Vec<PseudoLabel>,
}

impl TrainingImage {
    /// Image-level selection score: the best entry score.
    pub fn score(&self) -> f64 {
        self.entries.iter().map(|e| e.score).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn pseudo_gt(&self) -> Vec<(ClassId, BBox)> {
        self.entries.iter().map(|e| (e.class, e.latent_box)).collect()
    }
}

/// Picks the globally highest-scoring detection over all (proposal, class)
/// pairs. Ties break by lower class index, then lower box index.
pub fn select_latent_box(
    model: &DetectorModel,
    bag: &ProposalBag,
    use_regression: bool,
) -> Result<Detection> {
    let detections = model.forward(bag, use_regression)?;
    let c = model.num_classes();
    let n = bag.num_proposals();
    let mut best: Option<Detection> = None;
    for class in 1..=c {
        for i in 0..n {
            let d = detections[i * c + (class - 1)];
            if best.is_none_or(|b| d.score > b.score) {
                best = Some(d);
            }
        }
    }
    best.ok_or_else(|| Error::InvalidConfig("bag has no proposals".into()))
}

/// Inter-classifier competition: an image is kept only if the winning class
/// is one of its labels.
pub fn competition_filter(winner: &Detection, labels: &BTreeSet<ClassId>) -> bool {
    labels.contains(&winner.class)
}

/// Easiness of every class: competition wins divided by the class frequency
/// in the training set. Index k holds e(k + 1).
pub fn class_easiness(pool: &[PseudoLabel], dataset: &WeaklyLabeledDataset) -> Vec<f64> {
    let c = dataset.num_classes();
    let mut wins = vec![0usize; c];
    for p in pool {
        wins[p.class - 1] += 1;
    }
    (1..=c)
        .map(|class| {
            let p_c = dataset.label_frequency(class);
            if p_c == 0 {
                0.0
            } else {
                wins[class - 1] as f64 / p_c as f64
            }
        })
        .collect()
}

/// The `round(r * C)` easiest classes, in decreasing easiness order. Ties
/// break by lower class index.
pub fn select_classes(easiness: &[f64], r: f64, num_classes: usize) -> Vec<ClassId> {
    let k = round_half_up(r * num_classes as f64).min(num_classes);
    let mut order: Vec<ClassId> = (1..=num_classes).collect();
    order.sort_by(|&a, &b| {
        easiness[b - 1].partial_cmp(&easiness[a - 1]).unwrap().then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

fn group_by_image(pool: Vec<PseudoLabel>) -> Vec<TrainingImage> {
    let mut groups: BTreeMap<usize, Vec<PseudoLabel>> = BTreeMap::new();
    for p in pool {
        groups.entry(p.image_index).or_default().push(p);
    }
    groups
        .into_iter()
        .map(|(image_index, entries)| TrainingImage { image_index, entries })
        .collect()
}

/// Takes the `N_t = min(round(r * N), |P|)` highest-scoring images of the
/// pool. Returns the selected images (score-descending) and N_t.
pub fn select_images(pool: Vec<PseudoLabel>, r: f64, n_total: usize) -> (Vec<TrainingImage>, usize) {
    let mut groups = group_by_image(pool);
    groups.sort_by(|a, b| {
        b.score().partial_cmp(&a.score()).unwrap().then(a.image_index.cmp(&b.image_index))
    });
    let n_t = round_half_up(r * n_total as f64).min(groups.len());
    groups.truncate(n_t);
    (groups, n_t)
}

/// The linear pace schedule r_t = r_1 + (t - 1) * (1 - r_1) / M, t = 1..=M,
/// optionally extended by one extra iteration (which lands exactly on 1).
pub fn r_schedule(r1: f64, iterations: usize, extra_iteration: bool) -> Vec<f64> {
    let step = (1.0 - r1) / iterations as f64;
    (0..iterations + usize::from(extra_iteration))
        .map(|i| (r1 + i as f64 * step).min(1.0))
        .collect()
}

/// A latent-box mining strategy: produces the candidate pool P for one
/// self-paced iteration from the current model. Implementations are pure in
/// the model and dataset, so mining is parallel over images.
pub trait LatentMiner: Sync {
    fn mine(&self, model: &DetectorModel, dataset: &WeaklyLabeledDataset) -> Result<Vec<PseudoLabel>>;
}

/// The standard miner: global argmax per image plus inter-classifier
/// competition, at most one pseudo label per image.
pub struct CompetitionMiner {
    pub use_regression: bool,
}

impl LatentMiner for CompetitionMiner {
    fn mine(&self, model: &DetectorModel, dataset: &WeaklyLabeledDataset) -> Result<Vec<PseudoLabel>> {
        let mined: Vec<Option<PseudoLabel>> = dataset
            .samples()
            .par_iter()
            .enumerate()
            .map(|(i, bag)| -> Result<Option<PseudoLabel>> {
                let winner = select_latent_box(model, bag, self.use_regression)?;
                Ok(competition_filter(&winner, bag.labels()).then_some(PseudoLabel {
                    image_index: i,
                    score: winner.score,
                    latent_box: winner.bbox,
                    class: winner.class,
                }))
            })
            .collect::<Result<_>>()?;
        Ok(mined.into_iter().flatten().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassSelectionMode {
    /// Top round(r * C) classes by easiness.
    Easiness,
    /// round(r * C) classes drawn uniformly at random each iteration.
    Random,
    /// No class selection: all classes eligible.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Initial pace ratio r_1.
    pub r1: f64,
    /// Number of self-paced iterations M.
    pub iterations: usize,
    /// Run one more iteration at r = 1 after the M scheduled ones.
    pub extra_iteration: bool,
    /// Divisor applied to the learning rate once, after the first iteration.
    pub lr_drop_factor: f64,
    pub sampler: SamplerConfig,
    /// NMS threshold used by multi-instance mining.
    pub mining_nms_threshold: f64,
    /// Seed for the engine's sampling streams.
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            r1: 0.5,
            iterations: 4,
            extra_iteration: false,
            lr_drop_factor: 10.0,
            sampler: SamplerConfig::default(),
            mining_nms_threshold: 0.3,
            seed: 0,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r1 > 0.0 && self.r1 <= 1.0) {
            return Err(Error::InvalidConfig(format!("r1 must lie in (0, 1], got {}", self.r1)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.lr_drop_factor < 1.0 {
            return Err(Error::InvalidConfig("lr_drop_factor must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mining_nms_threshold) {
            return Err(Error::InvalidConfig("mining_nms_threshold must lie in [0, 1]".into()));
        }
        self.sampler.validate()
    }
}

/// Per-iteration bookkeeping, one record per t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub r: f64,
    /// |P| after competition, before class filtering.
    pub pool_size: usize,
    pub easiness: Vec<f64>,
    /// Selected class set S (selection order).
    pub selected_classes: Vec<ClassId>,
    /// Pool entries surviving the class filter.
    pub pool_after_class_filter: usize,
    /// min(round(r * N), |P filtered|), counted over images.
    pub n_t: usize,
    pub training_images: usize,
    pub training_entries: usize,
    pub inner_iterations: usize,
    pub mean_loss: f64,
    /// Mini-batches whose background range had to be widened.
    pub bg_range_widened: usize,
}

/// One self-paced iteration: its record, the selected training set T_t and
/// the trained weights W_t.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub record: IterationRecord,
    pub training_set: Vec<TrainingImage>,
    pub model: DetectorModel,
}

#[derive(Debug, Clone, Default)]
pub struct ProtocolRun {
    pub iterations: Vec<IterationOutcome>,
}

impl ProtocolRun {
    pub fn final_model(&self) -> Option<&DetectorModel> {
        self.iterations.last().map(|o| &o.model)
    }
}

/// Runs the full protocol: for each t the pool is rebuilt from scratch with
/// the current model, classes and images are selected at pace r_t, then the
/// model trains for one epoch (|T_t| / m mini-batch SGD iterations) on the
/// pseudo ground truth. After the first iteration the learning rate drops
/// once by `lr_drop_factor`.
pub fn run(
    dataset: &WeaklyLabeledDataset,
    w0: &DetectorModel,
    miner: &dyn LatentMiner,
    class_selection: ClassSelectionMode,
    image_selection: bool,
    config: &ProtocolConfig,
) -> Result<ProtocolRun> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    let n_total = dataset.len();
    let c = dataset.num_classes();
    let m = config.sampler.images_per_batch;

    let mut model = w0.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut outcomes = Vec::new();

    for (idx, &r) in r_schedule(config.r1, config.iterations, config.extra_iteration).iter().enumerate() {
        let t = idx + 1;

        // predictions from the previous iteration are discarded: the pool is
        // re-mined from the original proposals with the current weights
        let pool = miner.mine(&model, dataset)?;
        let pool_size = pool.len();
        let easiness = class_easiness(&pool, dataset);

        let selected_classes: Vec<ClassId> = match class_selection {
            ClassSelectionMode::Easiness => select_classes(&easiness, r, c),
            ClassSelectionMode::All => (1..=c).collect(),
            ClassSelectionMode::Random => {
                let k = round_half_up(r * c as f64).min(c);
                rand::seq::index::sample(&mut rng, c, k).iter().map(|i| i + 1).collect()
            }
        };
        let class_set: BTreeSet<ClassId> = selected_classes.iter().copied().collect();
        let filtered: Vec<PseudoLabel> =
            pool.into_iter().filter(|p| class_set.contains(&p.class)).collect();
        let pool_after_class_filter = filtered.len();

        let (training_set, n_t) = if image_selection {
            select_images(filtered, r, n_total)
        } else {
            let groups = group_by_image(filtered);
            let n = groups.len();
            (groups, n)
        };

        let pseudo: Vec<Vec<(ClassId, BBox)>> =
            training_set.iter().map(|ti| ti.pseudo_gt()).collect();
        let inner_iterations =
            if training_set.is_empty() { 0 } else { (training_set.len() / m).max(1) };
        let mut loss_sum = 0.0;
        let mut bg_range_widened = 0;
        for _ in 0..inner_iterations {
            let picks: Vec<usize> = (0..m).map(|_| rng.gen_range(0..training_set.len())).collect();
            let bags: Vec<(&ProposalBag, &[(ClassId, BBox)])> = picks
                .iter()
                .map(|&p| (&dataset.samples()[training_set[p].image_index], pseudo[p].as_slice()))
                .collect();
            let batch = build_minibatch(&bags, &config.sampler, &mut rng)?;
            let (loss, grads) = model.loss_and_gradient(&batch)?;
            model.sgd_step(&grads)?;
            loss_sum += loss;
            bg_range_widened += batch.bg_range_widened;
        }
        if training_set.is_empty() {
            log::warn!("self-paced iteration {t}: empty training set, weights unchanged");
        }
        if t == 1 {
            model.drop_learning_rate(config.lr_drop_factor);
        }

        outcomes.push(IterationOutcome {
            record: IterationRecord {
                t,
                r,
                pool_size,
                easiness,
                selected_classes,
                pool_after_class_filter,
                n_t,
                training_images: training_set.len(),
                training_entries: training_set.iter().map(|ti| ti.entries.len()).sum(),
                inner_iterations,
                mean_loss: if inner_iterations == 0 { 0.0 } else { loss_sum / inner_iterations as f64 },
                bg_range_widened,
            },
            training_set,
            model: model.clone(),
        });
    }
    Ok(ProtocolRun { iterations: outcomes })
}

/// The standard self-paced protocol: competition mining over regressed
/// predictions, easiness-based class selection and score-based image
/// selection.
pub fn run_self_paced(
    dataset: &WeaklyLabeledDataset,
    w0: &DetectorModel,
    config: &ProtocolConfig,
) -> Result<ProtocolRun> {
    run(
        dataset,
        w0,
        &CompetitionMiner { use_regression: true },
        ClassSelectionMode::Easiness,
        true,
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticConfig};
    use crate::detector::SgdHyperParams;
    use approx::assert_relative_eq;

    fn toy_bag(features: Vec<Vec<f64>>, labels: &[usize]) -> ProposalBag {
        let proposals = (0..features.len())
            .map(|i| BBox::new(10.0 * i as f64, 0.0, 10.0 * i as f64 + 8.0, 8.0).unwrap())
            .collect();
        ProposalBag::new("toy".into(), false, proposals, features, labels.iter().copied().collect())
            .unwrap()
    }

    #[test]
    fn forced_argmax_returns_expected_class() {
        // weights that make class 2 dominate on this feature
        let mut m = DetectorModel::zeros(3, 2, SgdHyperParams::default());
        m.weights_cls_mut()[(2, 0)] = 5.0;
        let bag = toy_bag(vec![vec![1.0, 0.0]], &[2]);
        let winner = select_latent_box(&m, &bag, true).unwrap();
        assert_eq!(winner.class, 2);
        let probs = m.class_probabilities(&[1.0, 0.0]).unwrap();
        assert_relative_eq!(winner.score, probs[2], epsilon = 1e-15);
    }

    #[test]
    fn argmax_matches_bruteforce_on_random_instances() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..200 {
            let c = rng.gen_range(2..=5);
            let d = rng.gen_range(2..=6);
            let n = rng.gen_range(1..=20);
            let mut m = DetectorModel::new(c, d, 0, SgdHyperParams::default(), trial);
            for w in m.weights_cls_mut().iter_mut() {
                *w = rng.gen_range(-1.0..1.0);
            }
            let features: Vec<Vec<f64>> =
                (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let bag = toy_bag(features, &[1]);
            let winner = select_latent_box(&m, &bag, true).unwrap();
            // brute force over the full n x C score matrix
            let dets = m.forward(&bag, true).unwrap();
            let best = dets
                .iter()
                .map(|det| det.score)
                .fold(f64::NEG_INFINITY, f64::max);
            assert_relative_eq!(winner.score, best, epsilon = 0.0);
        }
    }

    #[test]
    fn latent_box_without_regression_stays_in_bag() {
        let m = DetectorModel::new(3, 2, 0, SgdHyperParams::default(), 5);
        let bag = toy_bag(vec![vec![0.2, 0.4], vec![-1.0, 0.7], vec![2.0, -0.3]], &[1]);
        let winner = select_latent_box(&m, &bag, false).unwrap();
        assert!(bag.proposals().contains(&winner.bbox));
    }

    #[test]
    fn competition_examples() {
        let car = 1;
        let tv = 2;
        let labels: BTreeSet<usize> = [car].into_iter().collect();
        let mk = |class| Detection {
            score: 0.9,
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            class,
            proposal: 0,
        };
        assert!(!competition_filter(&mk(tv), &labels));
        assert!(competition_filter(&mk(car), &labels));
        let all: BTreeSet<usize> = (1..=5).collect();
        for class in 1..=5 {
            assert!(competition_filter(&mk(class), &all));
        }
    }

    fn label_only_dataset(label_sets: &[&[usize]], c: usize) -> WeaklyLabeledDataset {
        let samples = label_sets
            .iter()
            .enumerate()
            .map(|(i, ls)| {
                ProposalBag::new(
                    format!("i{i}"),
                    false,
                    vec![BBox::new(0.0, 0.0, 1.0, 1.0).unwrap()],
                    vec![vec![0.0]],
                    ls.iter().copied().collect(),
                )
                .unwrap()
            })
            .collect::<Vec<_>>();
        let gt = vec![Vec::new(); samples.len()];
        WeaklyLabeledDataset::new(samples, gt, c, 1, (10.0, 10.0)).unwrap()
    }

    fn pl(image_index: usize, class: usize, score: f64) -> PseudoLabel {
        PseudoLabel {
            image_index,
            score,
            latent_box: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            class,
        }
    }

    #[test]
    fn easiness_arithmetic() {
        // class 1: p_c = 6; three wins -> 0.5
        let sets: Vec<&[usize]> = vec![&[1], &[1], &[1], &[1], &[1], &[1], &[2], &[2]];
        let d = label_only_dataset(&sets, 2);
        let pool = vec![pl(0, 1, 0.9), pl(1, 1, 0.8), pl(2, 1, 0.7)];
        let e = class_easiness(&pool, &d);
        assert_eq!(e[0], 0.5);
        assert_eq!(e[1], 0.0);
    }

    #[test]
    fn easiness_ranking_matches_counting_oracle() {
        // wins (4, 4), p (8, 16) -> e = (0.5, 0.25): class 1 easier
        let mut sets: Vec<&[usize]> = Vec::new();
        for _ in 0..8 {
            sets.push(&[1]);
        }
        for _ in 0..16 {
            sets.push(&[2]);
        }
        let d = label_only_dataset(&sets, 2);
        let mut pool = Vec::new();
        for i in 0..4 {
            pool.push(pl(i, 1, 0.5));
            pool.push(pl(8 + i, 2, 0.5));
        }
        let e = class_easiness(&pool, &d);
        assert_eq!(e, vec![0.5, 0.25]);
        assert_eq!(select_classes(&e, 0.5, 2), vec![1]);
    }

    #[test]
    fn class_selection_sizes() {
        let e: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(select_classes(&e, 0.5, 20).len(), 10);
        assert_eq!(select_classes(&e, 1.0, 20).len(), 20);
    }

    #[test]
    fn class_selection_matches_sort_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let c = rng.gen_range(2..=5);
            let e: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..1.0)).collect();
            let r = rng.gen_range(0.05..1.0);
            let got = select_classes(&e, r, c);
            let mut oracle: Vec<usize> = (1..=c).collect();
            oracle.sort_by(|&a, &b| e[b - 1].partial_cmp(&e[a - 1]).unwrap().then(a.cmp(&b)));
            oracle.truncate(round_half_up(r * c as f64).min(c));
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn image_selection_keeps_small_pools_whole() {
        let pool: Vec<PseudoLabel> = (0..5).map(|i| pl(i, 1, i as f64 / 10.0)).collect();
        let (t, n_t) = select_images(pool, 0.5, 20);
        assert_eq!(n_t, 5);
        assert_eq!(t.len(), 5);
    }

    #[test]
    fn image_selection_takes_top_scores() {
        let pool: Vec<PseudoLabel> = (0..10).map(|i| pl(i, 1, i as f64 / 10.0)).collect();
        let (t, n_t) = select_images(pool, 0.3, 10);
        assert_eq!(n_t, 3);
        let picked: Vec<usize> = t.iter().map(|ti| ti.image_index).collect();
        assert_eq!(picked, vec![9, 8, 7]);
    }

    #[test]
    fn image_selection_matches_sort_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let n = rng.gen_range(1..=20);
            let pool: Vec<PseudoLabel> =
                (0..n).map(|i| pl(i, 1, rng.gen_range(0.0..1.0))).collect();
            let r = rng.gen_range(0.05..1.0);
            let (t, _) = select_images(pool.clone(), r, n);
            let mut oracle = pool;
            oracle.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.image_index.cmp(&b.image_index)));
            oracle.truncate(round_half_up(r * n as f64).min(n));
            let got: Vec<usize> = t.iter().map(|ti| ti.image_index).collect();
            let want: Vec<usize> = oracle.iter().map(|p| p.image_index).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn schedule_matches_closed_form() {
        assert_eq!(r_schedule(0.5, 4, false), vec![0.5, 0.625, 0.75, 0.875]);
        assert_eq!(r_schedule(0.5, 4, true), vec![0.5, 0.625, 0.75, 0.875, 1.0]);
        assert_eq!(r_schedule(1.0, 3, false), vec![1.0, 1.0, 1.0]);
    }

    fn small_run(seed: u64) -> (WeaklyLabeledDataset, ProtocolRun) {
        let data = generate(&SyntheticConfig {
            num_images: 30,
            num_classes: 3,
            feature_dim: 12,
            proposals_per_image: 12,
            seed,
            ..Default::default()
        })
        .unwrap();
        let w0 = DetectorModel::new(3, 12, 0, SgdHyperParams::default(), seed);
        let config = ProtocolConfig {
            iterations: 2,
            sampler: SamplerConfig { batch_size: 32, ..Default::default() },
            seed,
            ..Default::default()
        };
        let run = run_self_paced(&data, &w0, &config).unwrap();
        (data, run)
    }

    #[test]
    fn rerun_is_bit_identical() {
        let (_, a) = small_run(5);
        let (_, b) = small_run(5);
        for (x, y) in a.iterations.iter().zip(&b.iterations) {
            assert_eq!(x.record, y.record);
            assert_eq!(x.training_set, y.training_set);
            assert_eq!(x.model, y.model);
        }
    }

    #[test]
    fn learning_rate_drops_once_after_first_iteration() {
        let (_, run) = small_run(6);
        assert_relative_eq!(run.iterations[0].model.learning_rate(), 0.0001, epsilon = 1e-18);
        assert_relative_eq!(run.iterations[1].model.learning_rate(), 0.0001, epsilon = 1e-18);
    }

    #[test]
    fn inner_iteration_count_is_images_over_m() {
        let (_, run) = small_run(7);
        for it in &run.iterations {
            if it.record.training_images >= 2 {
                assert_eq!(it.record.inner_iterations, it.record.training_images / 2);
            }
        }
    }

    #[test]
    fn selected_entries_satisfy_membership_invariants() {
        let (data, run) = small_run(8);
        for it in &run.iterations {
            let class_set: BTreeSet<usize> = it.record.selected_classes.iter().copied().collect();
            for ti in &it.training_set {
                let labels = data.samples()[ti.image_index].labels();
                for e in &ti.entries {
                    assert!(class_set.contains(&e.class));
                    assert!(labels.contains(&e.class));
                }
            }
            assert!(
                it.record.training_images
                    <= round_half_up(it.record.r * data.len() as f64)
                        .min(it.record.pool_after_class_filter)
            );
        }
    }

    #[test]
    fn empty_training_set_leaves_model_unchanged() {
        // single-label images of class 1 but weights forcing class 2 to win
        let samples: Vec<ProposalBag> = (0..4)
            .map(|i| {
                ProposalBag::new(
                    format!("i{i}"),
                    false,
                    vec![BBox::new(0.0, 0.0, 5.0, 5.0).unwrap()],
                    vec![vec![1.0, 1.0]],
                    [1].into_iter().collect(),
                )
                .unwrap()
            })
            .collect();
        let gt = vec![Vec::new(); 4];
        let data = WeaklyLabeledDataset::new(samples, gt, 2, 2, (10.0, 10.0)).unwrap();
        let mut w0 = DetectorModel::zeros(2, 2, SgdHyperParams::default());
        w0.weights_cls_mut()[(2, 0)] = 10.0;
        let config = ProtocolConfig { iterations: 1, ..Default::default() };
        let run = run_self_paced(&data, &w0, &config).unwrap();
        let it = &run.iterations[0];
        assert_eq!(it.record.pool_size, 0);
        assert_eq!(it.record.training_images, 0);
        assert_eq!(it.record.inner_iterations, 0);
        // weights untouched (learning rate still dropped, which is hyper state)
        assert_eq!(it.model.weights_cls(), w0.weights_cls());
        assert_eq!(it.model.weights_reg(), w0.weights_reg());
    }
}
