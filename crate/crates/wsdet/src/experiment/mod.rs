//! Configured, seeded, reproducible experiment runs.
//!
//! A run generates (or loads) a dataset, bootstraps W_0 once per seed,
//! executes every requested protocol variant over every seed, evaluates each
//! checkpoint, and writes per-iteration records, checkpoints, per-class AP
//! tables and a seed-aggregated summary CSV. Identical config and seed
//! produce byte-identical outputs.

mod plot;

pub use plot::plot;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, SyntheticConfig, WeaklyLabeledDataset};
use crate::detector::{DetectorModel, SgdHyperParams};
use crate::error::{Error, Result};
use crate::metrics::{
    corloc, evaluate_detector, pseudo_gt_precision, ApInterpolation, MetricsReport, PrecisionCount,
};
use crate::protocol::{ProtocolConfig, PseudoLabel};
use crate::sampling::SamplerConfig;
use crate::variants::{
    run_init, run_variant, InitConfig, InitOutcome, InitScorer, InitScorerConfig, OracleScorer,
    TrainedBagClassifier, VariantSpec,
};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFiles {
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Append mirrored copies of the training images.
    #[serde(default = "default_true")]
    pub mirror_training: bool,
    /// Test split size for synthetic data.
    #[serde(default)]
    pub test_images: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files: Option<DatasetFiles>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub r1: f64,
    pub iterations: usize,
    pub extra_iteration: bool,
    pub lr_drop_factor: f64,
    /// NMS threshold applied before AP at evaluation time.
    pub test_nms_threshold: f64,
    /// NMS threshold for multi-instance mining.
    pub mining_nms_threshold: f64,
    pub eval_iou_min: f64,
    pub ap_interpolation: ApInterpolation,
    pub sgd: SgdHyperParams,
    pub sampler: SamplerConfig,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            r1: 0.5,
            iterations: 4,
            extra_iteration: false,
            lr_drop_factor: 10.0,
            test_nms_threshold: 0.3,
            mining_nms_threshold: 0.3,
            eval_iou_min: 0.5,
            ap_interpolation: ApInterpolation::AllPoint,
            sgd: SgdHyperParams::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

impl ProtocolSection {
    fn protocol_config(&self, seed: u64) -> ProtocolConfig {
        ProtocolConfig {
            r1: self.r1,
            iterations: self.iterations,
            extra_iteration: self.extra_iteration,
            lr_drop_factor: self.lr_drop_factor,
            sampler: self.sampler,
            mining_nms_threshold: self.mining_nms_threshold,
            seed,
        }
    }
}

/// Detector architecture options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Width of the optional shared ReLU layer; 0 keeps the head linear.
    pub hidden_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub variants: Vec<VariantSpec>,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub init: InitConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidConfig("no variants requested".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("no seeds configured".into()));
        }
        match (&self.dataset.synthetic, &self.dataset.files) {
            (Some(s), None) => {
                s.validate()?;
                if self.dataset.test_images == 0 {
                    return Err(Error::InvalidConfig(
                        "dataset.test_images must be positive for synthetic data".into(),
                    ));
                }
            }
            (None, Some(_)) => {}
            _ => {
                return Err(Error::InvalidConfig(
                    "configure exactly one of dataset.synthetic and dataset.files".into(),
                ))
            }
        }
        self.protocol.protocol_config(0).validate()?;
        if !(0.0..=1.0).contains(&self.protocol.test_nms_threshold) {
            return Err(Error::InvalidConfig("test_nms_threshold must lie in [0, 1]".into()));
        }
        if !(0.0 < self.protocol.eval_iou_min && self.protocol.eval_iou_min <= 1.0) {
            return Err(Error::InvalidConfig("eval_iou_min must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// The shipped desk-scale benchmark: four contrasting protocols over
    /// three seeds on a synthetic dataset hard enough that the training
    /// protocols separate. Single-object images with strong class signal,
    /// heavy class-correlated context clutter, frequent spurious labels and
    /// sparse good proposals; the bootstrap classifier is deliberately
    /// undertrained so the self-paced iterations have room to act.
    pub fn demo() -> Self {
        Self {
            version: CONFIG_VERSION,
            variants: vec![
                VariantSpec::Sp,
                VariantSpec::Mil,
                VariantSpec::Curriculum,
                VariantSpec::NoRegTrainTest,
            ],
            seeds: vec![1, 2, 3],
            dataset: DatasetConfig {
                mirror_training: true,
                test_images: 100,
                synthetic: Some(SyntheticConfig {
                    num_images: 150,
                    num_classes: 6,
                    feature_dim: 24,
                    min_objects: 1,
                    max_objects: 1,
                    proposals_per_image: 30,
                    signal_strength: 5.0,
                    geometry_strength: 0.5,
                    context_strength: 6.0,
                    context_fraction: 0.5,
                    context_overlap: 0.5,
                    label_noise: 0.6,
                    coverage: 0.18,
                    class_weights: None,
                    plane: (100.0, 100.0),
                    object_size: (15.0, 45.0),
                    seed: 0,
                }),
                files: None,
            },
            model: ModelSection::default(),
            protocol: ProtocolSection {
                // the paper-style schedule on a from-scratch linear head
                // wants a slightly hotter base step than the fine-tuning
                // default
                sgd: SgdHyperParams { learning_rate: 0.002, ..Default::default() },
                ..Default::default()
            },
            init: InitConfig {
                detector_epochs: 2,
                scorer: InitScorerConfig::Classifier { epochs: 1, learning_rate: 0.05 },
            },
        }
    }
}

/// splitmix64: derives independent named seed streams from a master seed.
pub(crate) fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master
        .wrapping_add(tag.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

const TAG_DATA: u64 = 1;
const TAG_SCORER: u64 = 2;
const TAG_INIT: u64 = 3;
const TAG_ENGINE: u64 = 4;

/// Metrics for one checkpoint W_t of one (variant, seed) run. t = 0 is the
/// bootstrap model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub t: usize,
    pub r: Option<f64>,
    pub map: f64,
    pub mean_corloc: f64,
    pub per_class_ap: Vec<Option<f64>>,
    pub precision: Option<PrecisionCount>,
    pub pool_size: Option<usize>,
    pub pool_after_class_filter: Option<usize>,
    pub n_t: Option<usize>,
    pub training_images: Option<usize>,
    pub training_entries: Option<usize>,
    pub inner_iterations: Option<usize>,
    pub mean_loss: Option<f64>,
    pub selected_classes: Option<Vec<usize>>,
    pub easiness: Option<Vec<f64>>,
    pub bg_range_widened: Option<usize>,
    pub checkpoint: String,
}

#[derive(Debug, Clone)]
pub struct VariantSeedResult {
    pub variant: VariantSpec,
    pub seed: u64,
    pub iterations: Vec<IterationMetrics>,
}

/// One seed-aggregated summary row per (variant, t).
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub variant: VariantSpec,
    pub t: usize,
    pub r: Option<f64>,
    pub seeds: usize,
    pub map_mean: f64,
    pub map_min: f64,
    pub map_max: f64,
    pub corloc_mean: f64,
    pub precision_mean: Option<f64>,
    pub precision_min: Option<f64>,
    pub precision_max: Option<f64>,
    pub pool_mean: Option<f64>,
    pub train_images_mean: Option<f64>,
    pub loss_mean: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub results: Vec<VariantSeedResult>,
    pub rows: Vec<SummaryRow>,
}

impl RunSummary {
    pub fn result(&self, variant: VariantSpec, seed: u64) -> Option<&VariantSeedResult> {
        self.results.iter().find(|r| r.variant == variant && r.seed == seed)
    }

    /// Mean over seeds of the test mAP at checkpoint t.
    pub fn mean_map(&self, variant: VariantSpec, t: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant && r.t == t).map(|r| r.map_mean)
    }

    /// Mean over seeds of the pseudo-GT precision of T_t.
    pub fn mean_precision(&self, variant: VariantSpec, t: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant && r.t == t).and_then(|r| r.precision_mean)
    }
}

fn prepare_data(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(WeaklyLabeledDataset, WeaklyLabeledDataset)> {
    let (train, test) = match (&config.dataset.synthetic, &config.dataset.files) {
        (Some(synth), None) => {
            let mut effective = synth.clone();
            effective.seed = derive_seed(seed, TAG_DATA).wrapping_add(synth.seed);
            data::generate_train_test(&effective, config.dataset.test_images)?
        }
        (None, Some(files)) => (data::load(&files.train)?, data::load(&files.test)?),
        _ => unreachable!("validated"),
    };
    let train = if config.dataset.mirror_training { train.mirrored()? } else { train };
    Ok((train, test))
}

fn build_scorer(
    config: &ExperimentConfig,
    train: &WeaklyLabeledDataset,
    seed: u64,
) -> Box<dyn InitScorer> {
    match &config.init.scorer {
        InitScorerConfig::Classifier { epochs, learning_rate } => Box::new(
            TrainedBagClassifier::train(train, *epochs, *learning_rate, derive_seed(seed, TAG_SCORER)),
        ),
        InitScorerConfig::Oracle { noise, corrupt_fraction } => Box::new(OracleScorer::new(
            train,
            *noise,
            *corrupt_fraction,
            derive_seed(seed, TAG_SCORER),
        )),
    }
}

struct Evaluated {
    map_report: MetricsReport,
    mean_corloc: f64,
}

fn evaluate_checkpoint_model(
    model: &DetectorModel,
    train: &WeaklyLabeledDataset,
    test: &WeaklyLabeledDataset,
    config: &ExperimentConfig,
    test_regression: bool,
) -> Result<Evaluated> {
    let p = &config.protocol;
    let map_report = evaluate_detector(
        model,
        test,
        test_regression,
        p.test_nms_threshold,
        p.eval_iou_min,
        p.ap_interpolation,
    )?;
    let corloc_report = corloc(model, train, test_regression)?;
    Ok(Evaluated { map_report, mean_corloc: corloc_report.mean })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        "variant,t,r,seeds,map_mean,map_min,map_max,corloc_mean,precision_mean,precision_min,precision_max,pool_mean,train_images_mean,loss_mean\n",
    );
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{}",
            row.variant,
            row.t,
            fmt_opt(row.r),
            row.seeds,
            row.map_mean,
            row.map_min,
            row.map_max,
            row.corloc_mean,
            fmt_opt(row.precision_mean),
            fmt_opt(row.precision_min),
            fmt_opt(row.precision_max),
            fmt_opt(row.pool_mean),
            fmt_opt(row.train_images_mean),
            fmt_opt(row.loss_mean),
        )
        .unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_per_class_ap_csv(iterations: &[IterationMetrics], num_classes: usize, path: &Path) -> Result<()> {
    let mut out = String::from("category");
    for it in iterations {
        write!(out, ",W{}", it.t).unwrap();
    }
    out.push('\n');
    for class in 1..=num_classes {
        write!(out, "class_{class}").unwrap();
        for it in iterations {
            match it.per_class_ap[class - 1] {
                Some(v) => write!(out, ",{v:.6}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out.push_str("mAP");
    for it in iterations {
        write!(out, ",{:.6}", it.map).unwrap();
    }
    out.push('\n');
    fs::write(path, out)?;
    Ok(())
}

fn aggregate_rows(config: &ExperimentConfig, results: &[VariantSeedResult]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    let total_iterations =
        config.protocol.iterations + usize::from(config.protocol.extra_iteration);
    for &variant in &config.variants {
        for t in 0..=total_iterations {
            let per_seed: Vec<&IterationMetrics> = results
                .iter()
                .filter(|r| r.variant == variant)
                .filter_map(|r| r.iterations.get(t))
                .collect();
            if per_seed.is_empty() {
                continue;
            }
            let maps: Vec<f64> = per_seed.iter().map(|m| m.map).collect();
            let precisions: Vec<f64> =
                per_seed.iter().filter_map(|m| m.precision.map(|p| p.ratio())).collect();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let fmin = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
            let fmax = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let opt_mean = |v: Vec<f64>| if v.is_empty() { None } else { Some(mean(&v)) };
            rows.push(SummaryRow {
                variant,
                t,
                r: per_seed[0].r,
                seeds: per_seed.len(),
                map_mean: mean(&maps),
                map_min: fmin(&maps),
                map_max: fmax(&maps),
                corloc_mean: mean(&per_seed.iter().map(|m| m.mean_corloc).collect::<Vec<_>>()),
                precision_mean: opt_mean(precisions.clone()),
                precision_min: if precisions.is_empty() { None } else { Some(fmin(&precisions)) },
                precision_max: if precisions.is_empty() { None } else { Some(fmax(&precisions)) },
                pool_mean: opt_mean(
                    per_seed.iter().filter_map(|m| m.pool_size.map(|v| v as f64)).collect(),
                ),
                train_images_mean: opt_mean(
                    per_seed.iter().filter_map(|m| m.training_images.map(|v| v as f64)).collect(),
                ),
                loss_mean: opt_mean(per_seed.iter().filter_map(|m| m.mean_loss).collect()),
            });
        }
    }
    rows
}

/// Executes the configured experiment into `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<RunSummary> {
    config.validate()?;
    let out_dir = out_dir.as_ref().to_path_buf();
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("config.toml"), config.to_toml_string())?;

    let mut results = Vec::new();
    for &seed in &config.seeds {
        let (train, test) = prepare_data(config, seed)?;
        let scorer = build_scorer(config, &train, seed);
        let init: InitOutcome = run_init(
            scorer.as_ref(),
            &train,
            &config.init,
            config.model.hidden_units,
            config.protocol.sgd,
            &config.protocol.sampler,
            derive_seed(seed, TAG_INIT),
        )?;

        for &variant in &config.variants {
            let run_dir = out_dir.join(variant.name()).join(format!("seed_{seed}"));
            let ckpt_dir = run_dir.join("checkpoints");
            fs::create_dir_all(&ckpt_dir)?;

            let flags = variant.flags();
            let pconfig = config.protocol.protocol_config(derive_seed(seed, TAG_ENGINE));
            let protocol_run = run_variant(variant, &init, &train, &pconfig)?;

            let mut iterations = Vec::new();
            // t = 0: the bootstrap model
            let w0_path = ckpt_dir.join("w0.ckpt");
            init.model.save(&w0_path)?;
            let ev = evaluate_checkpoint_model(&init.model, &train, &test, config, flags.test_regression)?;
            iterations.push(IterationMetrics {
                t: 0,
                r: None,
                map: ev.map_report.map,
                mean_corloc: ev.mean_corloc,
                per_class_ap: ev.map_report.per_class_ap,
                precision: None,
                pool_size: None,
                pool_after_class_filter: None,
                n_t: None,
                training_images: None,
                training_entries: None,
                inner_iterations: None,
                mean_loss: None,
                selected_classes: None,
                easiness: None,
                bg_range_widened: None,
                checkpoint: "checkpoints/w0.ckpt".into(),
            });

            for outcome in &protocol_run.iterations {
                let t = outcome.record.t;
                let rel = format!("checkpoints/w{t}.ckpt");
                outcome.model.save(ckpt_dir.join(format!("w{t}.ckpt")))?;
                let ev = evaluate_checkpoint_model(
                    &outcome.model,
                    &train,
                    &test,
                    config,
                    flags.test_regression,
                )?;
                let selected: Vec<PseudoLabel> = outcome
                    .training_set
                    .iter()
                    .flat_map(|ti| ti.entries.iter().cloned())
                    .collect();
                let precision = pseudo_gt_precision(&selected, &train, config.protocol.eval_iou_min);
                iterations.push(IterationMetrics {
                    t,
                    r: Some(outcome.record.r),
                    map: ev.map_report.map,
                    mean_corloc: ev.mean_corloc,
                    per_class_ap: ev.map_report.per_class_ap,
                    precision: Some(precision),
                    pool_size: Some(outcome.record.pool_size),
                    pool_after_class_filter: Some(outcome.record.pool_after_class_filter),
                    n_t: Some(outcome.record.n_t),
                    training_images: Some(outcome.record.training_images),
                    training_entries: Some(outcome.record.training_entries),
                    inner_iterations: Some(outcome.record.inner_iterations),
                    mean_loss: Some(outcome.record.mean_loss),
                    selected_classes: Some(outcome.record.selected_classes.clone()),
                    easiness: Some(outcome.record.easiness.clone()),
                    bg_range_widened: Some(outcome.record.bg_range_widened),
                    checkpoint: rel,
                });
            }

            let mut records = String::new();
            for it in &iterations {
                records.push_str(&serde_json::to_string(it).unwrap());
                records.push('\n');
            }
            fs::write(run_dir.join("records.jsonl"), records)?;
            write_per_class_ap_csv(&iterations, train.num_classes(), &run_dir.join("per_class_ap.csv"))?;

            results.push(VariantSeedResult { variant, seed, iterations });
        }
    }

    let rows = aggregate_rows(config, &results);
    write_summary_csv(&rows, &out_dir.join("summary.csv"))?;
    Ok(RunSummary { out_dir, results, rows })
}

/// Re-scores a saved checkpoint against a dataset file.
pub fn eval_checkpoint(
    checkpoint: impl AsRef<Path>,
    dataset_path: impl AsRef<Path>,
    use_regression: bool,
    nms_threshold: f64,
    iou_min: f64,
    interpolation: ApInterpolation,
) -> Result<MetricsReport> {
    let model = DetectorModel::load(checkpoint)?;
    let dataset = data::load(dataset_path)?;
    evaluate_detector(&model, &dataset, use_regression, nms_threshold, iou_min, interpolation)
}

/// The variant flag table rendered for the `describe` subcommand.
pub fn describe_variants() -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<18} {:<15} {:<11} {:<10} {:<10} {:<9}",
        "variant", "mining", "class-sel", "image-sel", "train-reg", "test-reg"
    )
    .unwrap();
    out.push_str(&"-".repeat(78));
    out.push('\n');
    for v in VariantSpec::ALL {
        let f = v.flags();
        writeln!(
            out,
            "{:<18} {:<15} {:<11} {:<10} {:<10} {:<9}",
            v.name(),
            format!("{:?}", f.mining),
            format!("{:?}", f.class_selection),
            f.image_selection,
            f.train_regression,
            f.test_regression,
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_config_is_valid_and_round_trips() {
        let config = ExperimentConfig::demo();
        config.validate().unwrap();
        let text = config.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(config, back);
        // and the second serialization is byte-identical
        assert_eq!(text, back.to_toml_string());
    }

    #[test]
    fn shipped_demo_file_matches_builtin_demo() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/demo.toml");
        let from_file = ExperimentConfig::load(path).unwrap();
        assert_eq!(from_file, ExperimentConfig::demo());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = ExperimentConfig::demo().to_toml_string();
        text.push_str("\nnot_a_key = 1\n");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("not_a_key"), "{err}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let text = ExperimentConfig::demo().to_toml_string().replace("version = 1", "version = 9");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn dataset_source_must_be_unique() {
        let mut config = ExperimentConfig::demo();
        config.dataset.files =
            Some(DatasetFiles { train: "a.jsonl".into(), test: "b.jsonl".into() });
        assert!(config.validate().is_err());
    }

    #[test]
    fn describe_lists_all_nine_variants() {
        let table = describe_variants();
        for v in VariantSpec::ALL {
            assert!(table.contains(v.name()), "missing {v}");
        }
    }

    #[test]
    fn derive_seed_separates_streams() {
        let a = derive_seed(1, TAG_DATA);
        let b = derive_seed(1, TAG_SCORER);
        let c = derive_seed(2, TAG_DATA);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(1, TAG_DATA));
    }

    #[test]
    fn tiny_run_produces_expected_artifacts() {
        let mut config = ExperimentConfig::demo();
        config.variants = vec![VariantSpec::Sp];
        config.seeds = vec![5];
        config.protocol.iterations = 2;
        config.dataset.test_images = 20;
        config.dataset.synthetic.as_mut().unwrap().num_images = 30;
        let dir = tempfile::tempdir().unwrap();
        let summary = run(&config, dir.path()).unwrap();
        assert_eq!(summary.results.len(), 1);
        assert_eq!(summary.results[0].iterations.len(), 3); // W_0..W_2
        assert_eq!(summary.rows.len(), 3);
        for name in ["config.toml", "summary.csv"] {
            assert!(dir.path().join(name).exists(), "missing {name}");
        }
        let seed_dir = dir.path().join("SP").join("seed_5");
        for name in ["records.jsonl", "per_class_ap.csv"] {
            assert!(seed_dir.join(name).exists(), "missing {name}");
        }
        for t in 0..=2 {
            assert!(seed_dir.join("checkpoints").join(format!("w{t}.ckpt")).exists());
        }
        // summary row count = variants x (iterations + 1)
        let csv = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3);
    }
}
