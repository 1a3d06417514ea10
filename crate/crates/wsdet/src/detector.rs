//! The trainable detection head: per-proposal (C+1)-class scores and C
//! class-specific box regressions over provided feature vectors, with a
//! multi-task loss (cross-entropy + smooth-L1 + weight decay) and mini-batch
//! SGD with momentum.
//!
//! The head is linear by default, so gradients are exact and
//! hand-checkable against finite differences. A single ReLU hidden layer can
//! be enabled as a capacity extension; gradients stay exact.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, ProposalBag};
use crate::error::{Error, Result};
use crate::geometry::{decode_regression, BBox, RegressionTarget};

/// SGD hyper-parameters. Defaults: learning rate 0.001, momentum 0.9,
/// weight decay 0.0005.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdHyperParams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdHyperParams {
    fn default() -> Self {
        Self { learning_rate: 0.001, momentum: 0.9, weight_decay: 0.0005 }
    }
}

/// One detection: the class score, the (possibly regressed) box, the class
/// and the source proposal index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub score: f64,
    pub bbox: BBox,
    pub class: ClassId,
    pub proposal: usize,
}

/// One training sample inside a mini-batch. Foreground samples (class >= 1)
/// always carry a regression target; background samples never do.
#[derive(Debug, Clone)]
pub struct BatchSample {
    feature: Vec<f64>,
    class: ClassId,
    regression: Option<RegressionTarget>,
}

impl BatchSample {
    pub fn foreground(feature: Vec<f64>, class: ClassId, target: RegressionTarget) -> Result<Self> {
        if class == 0 {
            return Err(Error::InvalidConfig("foreground sample cannot have class 0".into()));
        }
        Ok(Self { feature, class, regression: Some(target) })
    }

    pub fn background(feature: Vec<f64>) -> Self {
        Self { feature, class: 0, regression: None }
    }

    pub fn class(&self) -> ClassId {
        self.class
    }

    pub fn feature(&self) -> &[f64] {
        &self.feature
    }

    pub fn regression(&self) -> Option<&RegressionTarget> {
        self.regression.as_ref()
    }
}

/// A mini-batch of box samples drawn from a small set of images.
#[derive(Debug, Clone, Default)]
pub struct MiniBatch {
    pub samples: Vec<BatchSample>,
    /// Ids of the images the samples came from.
    pub image_ids: Vec<String>,
    /// Number of images whose background IoU range had to be widened.
    pub bg_range_widened: usize,
}

/// Gradients matching the model's weight shapes.
#[derive(Debug, Clone)]
pub struct Gradients {
    g_hidden: Option<Array2<f64>>,
    g_cls: Array2<f64>,
    g_reg: Array2<f64>,
}

impl Gradients {
    pub fn hidden(&self) -> Option<&Array2<f64>> {
        self.g_hidden.as_ref()
    }
    pub fn cls(&self) -> &Array2<f64> {
        &self.g_cls
    }
    pub fn reg(&self) -> &Array2<f64> {
        &self.g_reg
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"WSDETCK2";

/// The detection head: a (C+1)-way linear classifier and a 4C-output linear
/// regressor (bias folded into the last input column), plus momentum
/// buffers. With `hidden_units > 0` a shared ReLU layer sits between the
/// features and both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    w_hidden: Option<Array2<f64>>,
    v_hidden: Option<Array2<f64>>,
    w_cls: Array2<f64>,
    w_reg: Array2<f64>,
    v_cls: Array2<f64>,
    v_reg: Array2<f64>,
    hyper: SgdHyperParams,
    num_classes: usize,
    feature_dim: usize,
    hidden_units: usize,
}

impl DetectorModel {
    /// Fresh model. Head weights ~ N(0, 0.01^2) with zero biases; the
    /// optional hidden layer uses He initialization.
    pub fn new(
        num_classes: usize,
        feature_dim: usize,
        hidden_units: usize,
        hyper: SgdHyperParams,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head_inputs = if hidden_units > 0 { hidden_units } else { feature_dim };
        let normal = Normal::new(0.0, 0.01).unwrap();
        let mut init_head = |rows: usize| {
            Array2::from_shape_fn((rows, head_inputs + 1), |(_, j)| {
                if j == head_inputs {
                    0.0
                } else {
                    normal.sample(&mut rng)
                }
            })
        };
        let w_cls = init_head(num_classes + 1);
        let w_reg = init_head(4 * num_classes);
        let w_hidden = (hidden_units > 0).then(|| {
            let he = Normal::new(0.0, (2.0 / (feature_dim + 1) as f64).sqrt()).unwrap();
            Array2::from_shape_fn((hidden_units, feature_dim + 1), |(_, j)| {
                if j == feature_dim {
                    0.0
                } else {
                    he.sample(&mut rng)
                }
            })
        });
        Self {
            v_hidden: w_hidden.as_ref().map(|w| Array2::zeros(w.raw_dim())),
            v_cls: Array2::zeros(w_cls.raw_dim()),
            v_reg: Array2::zeros(w_reg.raw_dim()),
            w_hidden,
            w_cls,
            w_reg,
            hyper,
            num_classes,
            feature_dim,
            hidden_units,
        }
    }

    /// All-zero linear model, useful for tests.
    pub fn zeros(num_classes: usize, feature_dim: usize, hyper: SgdHyperParams) -> Self {
        Self {
            w_hidden: None,
            v_hidden: None,
            w_cls: Array2::zeros((num_classes + 1, feature_dim + 1)),
            w_reg: Array2::zeros((4 * num_classes, feature_dim + 1)),
            v_cls: Array2::zeros((num_classes + 1, feature_dim + 1)),
            v_reg: Array2::zeros((4 * num_classes, feature_dim + 1)),
            hyper,
            num_classes,
            feature_dim,
            hidden_units: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden_units
    }

    pub fn hyper_params(&self) -> SgdHyperParams {
        self.hyper
    }

    pub fn learning_rate(&self) -> f64 {
        self.hyper.learning_rate
    }

    /// Divides the learning rate by `factor`. The caller is responsible for
    /// calling this exactly once per training run.
    pub fn drop_learning_rate(&mut self, factor: f64) {
        self.hyper.learning_rate /= factor;
    }

    pub fn weights_cls(&self) -> &Array2<f64> {
        &self.w_cls
    }

    pub fn weights_reg(&self) -> &Array2<f64> {
        &self.w_reg
    }

    pub fn weights_hidden(&self) -> Option<&Array2<f64>> {
        self.w_hidden.as_ref()
    }

    pub fn weights_cls_mut(&mut self) -> &mut Array2<f64> {
        &mut self.w_cls
    }

    pub fn weights_reg_mut(&mut self) -> &mut Array2<f64> {
        &mut self.w_reg
    }

    pub fn weights_hidden_mut(&mut self) -> Option<&mut Array2<f64>> {
        self.w_hidden.as_mut()
    }

    fn extended(&self, feature: &[f64]) -> Result<Array1<f64>> {
        if feature.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: feature.len(),
                context: "feature vector".into(),
            });
        }
        let mut x = Array1::zeros(self.feature_dim + 1);
        x.slice_mut(ndarray::s![..self.feature_dim])
            .assign(&Array1::from_iter(feature.iter().copied()));
        x[self.feature_dim] = 1.0;
        Ok(x)
    }

    /// Head input: the extended feature itself, or the extended ReLU hidden
    /// activations. Also returns the pre-activations when a hidden layer is
    /// present (needed for backprop).
    fn head_input(&self, feature: &[f64]) -> Result<(Array1<f64>, Option<Array1<f64>>)> {
        let x = self.extended(feature)?;
        match &self.w_hidden {
            None => Ok((x, None)),
            Some(w) => {
                let z = w.dot(&x);
                let mut h = Array1::zeros(self.hidden_units + 1);
                for (k, &zk) in z.iter().enumerate() {
                    h[k] = zk.max(0.0);
                }
                h[self.hidden_units] = 1.0;
                Ok((h, Some(z)))
            }
        }
    }

    /// Softmax class probabilities over classes 0..=C (0 = background).
    /// Sums to 1.
    pub fn class_probabilities(&self, feature: &[f64]) -> Result<Vec<f64>> {
        let (h, _) = self.head_input(feature)?;
        Ok(softmax(&self.w_cls.dot(&h)))
    }

    /// Regression deltas predicted for `class` (1..=C).
    pub fn regression_deltas(&self, feature: &[f64], class: ClassId) -> Result<RegressionTarget> {
        let (h, _) = self.head_input(feature)?;
        let base = 4 * (class - 1);
        let row = |k: usize| self.w_reg.row(base + k).dot(&h);
        Ok(RegressionTarget { tx: row(0), ty: row(1), tw: row(2), th: row(3) })
    }

    /// Runs the head over every proposal of a bag, producing one detection
    /// per (proposal, class) pair with class in 1..=C. With `use_regression`
    /// off the predicted box is the proposal itself.
    pub fn forward(&self, bag: &ProposalBag, use_regression: bool) -> Result<Vec<Detection>> {
        let mut out = Vec::with_capacity(bag.num_proposals() * self.num_classes);
        for (i, (proposal, feature)) in bag.proposals().iter().zip(bag.features()).enumerate() {
            let (h, _) = self.head_input(feature)?;
            let probs = softmax(&self.w_cls.dot(&h));
            #[allow(clippy::needless_range_loop)]
            for class in 1..=self.num_classes {
                let bbox = if use_regression {
                    let base = 4 * (class - 1);
                    let delta = RegressionTarget {
                        tx: self.w_reg.row(base).dot(&h),
                        ty: self.w_reg.row(base + 1).dot(&h),
                        tw: self.w_reg.row(base + 2).dot(&h),
                        th: self.w_reg.row(base + 3).dot(&h),
                    };
                    decode_regression(&delta, proposal)?
                } else {
                    *proposal
                };
                out.push(Detection { score: probs[class], bbox, class, proposal: i });
            }
        }
        Ok(out)
    }

    /// Multi-task loss and its exact gradient over a mini-batch:
    /// mean cross-entropy + mean smooth-L1 over foreground regression
    /// targets + L2 weight decay.
    pub fn loss_and_gradient(&self, batch: &MiniBatch) -> Result<(f64, Gradients)> {
        if batch.samples.is_empty() {
            return Err(Error::InvalidConfig("empty mini-batch".into()));
        }
        let n = batch.samples.len() as f64;
        let num_fg = batch.samples.iter().filter(|s| s.class != 0).count() as f64;

        let mut g_hidden = self.w_hidden.as_ref().map(|w| Array2::zeros(w.raw_dim()));
        let mut g_cls = Array2::zeros(self.w_cls.raw_dim());
        let mut g_reg = Array2::zeros(self.w_reg.raw_dim());
        let mut loss = 0.0;

        for sample in &batch.samples {
            let x = self.extended(&sample.feature)?;
            let (h, pre) = self.head_input(&sample.feature)?;
            let probs = softmax(&self.w_cls.dot(&h));
            loss += -probs[sample.class].max(f64::MIN_POSITIVE).ln() / n;

            // gradient flowing back into the head input (hidden layer only)
            let mut dh: Option<Array1<f64>> =
                self.w_hidden.as_ref().map(|_| Array1::zeros(self.hidden_units));

            for (c, &p) in probs.iter().enumerate() {
                let coeff = (p - if c == sample.class { 1.0 } else { 0.0 }) / n;
                g_cls.row_mut(c).scaled_add(coeff, &h);
                if let Some(dh) = dh.as_mut() {
                    for k in 0..self.hidden_units {
                        dh[k] += coeff * self.w_cls[(c, k)];
                    }
                }
            }

            if let Some(target) = &sample.regression {
                let base = 4 * (sample.class - 1);
                for (k, t) in target.as_array().into_iter().enumerate() {
                    let p = self.w_reg.row(base + k).dot(&h);
                    let u = p - t;
                    // smooth-L1 with transition point 1.0
                    loss += if u.abs() < 1.0 { 0.5 * u * u } else { u.abs() - 0.5 } / num_fg;
                    let du = u.clamp(-1.0, 1.0) / num_fg;
                    g_reg.row_mut(base + k).scaled_add(du, &h);
                    if let Some(dh) = dh.as_mut() {
                        for j in 0..self.hidden_units {
                            dh[j] += du * self.w_reg[(base + k, j)];
                        }
                    }
                }
            }

            if let (Some(g_h), Some(dh), Some(pre)) = (g_hidden.as_mut(), dh, pre) {
                // ReLU gate
                for k in 0..self.hidden_units {
                    if pre[k] > 0.0 {
                        g_h.row_mut(k).scaled_add(dh[k], &x);
                    }
                }
            }
        }

        let wd = self.hyper.weight_decay;
        if wd != 0.0 {
            let mut sq = self.w_cls.iter().map(|w| w * w).sum::<f64>()
                + self.w_reg.iter().map(|w| w * w).sum::<f64>();
            if let Some(w) = &self.w_hidden {
                sq += w.iter().map(|v| v * v).sum::<f64>();
            }
            loss += 0.5 * wd * sq;
            g_cls.scaled_add(wd, &self.w_cls);
            g_reg.scaled_add(wd, &self.w_reg);
            if let (Some(g_h), Some(w)) = (g_hidden.as_mut(), &self.w_hidden) {
                g_h.scaled_add(wd, w);
            }
        }

        Ok((loss, Gradients { g_hidden, g_cls, g_reg }))
    }

    /// One SGD-with-momentum step: v <- mu * v - eta * g; W <- W + v.
    pub fn sgd_step(&mut self, gradients: &Gradients) -> Result<()> {
        if gradients.g_cls.raw_dim() != self.w_cls.raw_dim()
            || gradients.g_reg.raw_dim() != self.w_reg.raw_dim()
            || gradients.g_hidden.is_some() != self.w_hidden.is_some()
        {
            return Err(Error::InvalidConfig("gradient shape does not match model".into()));
        }
        let eta = self.hyper.learning_rate;
        let mu = self.hyper.momentum;
        self.v_cls.zip_mut_with(&gradients.g_cls, |v, &g| *v = mu * *v - eta * g);
        self.v_reg.zip_mut_with(&gradients.g_reg, |v, &g| *v = mu * *v - eta * g);
        self.w_cls += &self.v_cls;
        self.w_reg += &self.v_reg;
        if let (Some(w), Some(v), Some(g)) =
            (self.w_hidden.as_mut(), self.v_hidden.as_mut(), gradients.g_hidden.as_ref())
        {
            v.zip_mut_with(g, |v, &g| *v = mu * *v - eta * g);
            *w += &*v;
        }
        let finite = self
            .w_cls
            .iter()
            .chain(self.w_reg.iter())
            .chain(self.w_hidden.iter().flat_map(|w| w.iter()))
            .all(|w| w.is_finite());
        if !finite {
            return Err(Error::NonFinite(format!(
                "detector weights after SGD step (lr {eta}, momentum {mu})"
            )));
        }
        Ok(())
    }

    /// Writes a versioned binary checkpoint: weights, momentum buffers and
    /// hyper-parameters. `load(save(m)) == m` bit-exact.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [self.num_classes as u32, self.feature_dim as u32, self.hidden_units as u32] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.hyper.learning_rate, self.hyper.momentum, self.hyper.weight_decay] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let arrays = [
            self.w_hidden.as_ref(),
            Some(&self.w_cls),
            Some(&self.w_reg),
            self.v_hidden.as_ref(),
            Some(&self.v_cls),
            Some(&self.v_reg),
        ];
        for arr in arrays.into_iter().flatten() {
            for &v in arr.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let err = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 8 + 12 + 24 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(err("bad magic or truncated header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let num_classes = u32_at(8);
        let feature_dim = u32_at(12);
        let hidden_units = u32_at(16);
        let hyper = SgdHyperParams {
            learning_rate: f64_at(20),
            momentum: f64_at(28),
            weight_decay: f64_at(36),
        };
        let head_inputs = if hidden_units > 0 { hidden_units } else { feature_dim };
        let hidden_len = hidden_units * (feature_dim + 1);
        let cls_len = (num_classes + 1) * (head_inputs + 1);
        let reg_len = 4 * num_classes * (head_inputs + 1);
        let expected = 44 + 8 * (2 * hidden_len + 2 * cls_len + 2 * reg_len);
        if bytes.len() != expected {
            return Err(err(&format!("expected {expected} bytes, got {}", bytes.len())));
        }
        let mut offset = 44;
        let mut read = |rows: usize, cols: usize| {
            let data: Vec<f64> = (0..rows * cols).map(|i| f64_at(offset + 8 * i)).collect();
            offset += 8 * rows * cols;
            Array2::from_shape_vec((rows, cols), data).unwrap()
        };
        let w_hidden = (hidden_units > 0).then(|| read(hidden_units, feature_dim + 1));
        let w_cls = read(num_classes + 1, head_inputs + 1);
        let w_reg = read(4 * num_classes, head_inputs + 1);
        let v_hidden = (hidden_units > 0).then(|| read(hidden_units, feature_dim + 1));
        let v_cls = read(num_classes + 1, head_inputs + 1);
        let v_reg = read(4 * num_classes, head_inputs + 1);
        Ok(Self {
            w_hidden,
            v_hidden,
            w_cls,
            w_reg,
            v_cls,
            v_reg,
            hyper,
            num_classes,
            feature_dim,
            hidden_units,
        })
    }
}

fn softmax(logits: &Array1<f64>) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
