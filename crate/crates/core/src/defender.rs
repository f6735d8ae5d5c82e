//! The receiver-side authenticator: a pre-trained binary classifier labeling
//! frames as Intended (from T) or Other, with misdetection / false-alarm
//! accounting.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::neural::{
    self, HiddenActivation, LossKind, MlpModel, OutputActivation, TrainConfig,
};
use crate::scenario::Scenario;
use crate::signal::{
    frame_to_features, synthesize_direct_frame, synthesize_random_frame, IqFrame, NodeConfig,
    SourceLabel, FEATURES_PER_FRAME, TAU,
};

/// Standard deviations are floored here before standardization.
pub const STD_FLOOR: f64 = 1e-6;

const HIDDEN_WIDTH: usize = 50;
const NUM_CLASSES: usize = 2;
/// Softmax column holding the probability that a frame is from T.
const INTENDED_CLASS: usize = 1;

/// Labeled feature matrix plus the normalization frozen at training time.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    /// Raw (unnormalized) features, one row per frame.
    pub features: Array2<f64>,
    /// 1 = Intended, 0 = Other.
    pub labels: Vec<u8>,
    pub norm_mean: Array1<f64>,
    pub norm_std: Array1<f64>,
}

impl LabeledDataset {
    pub fn from_frames(frames: &[IqFrame]) -> Result<Self> {
        if frames.is_empty() {
            return Err(SimError::Config("dataset must be nonempty".into()));
        }
        let mut features = Array2::zeros((frames.len(), FEATURES_PER_FRAME));
        let mut labels = Vec::with_capacity(frames.len());
        for (r, frame) in frames.iter().enumerate() {
            let feats = frame_to_features(frame);
            features.row_mut(r).assign(&Array1::from_vec(feats));
            labels.push((frame.source_label == SourceLabel::Intended) as u8);
        }
        let norm_mean = features.mean_axis(Axis(0)).expect("nonempty");
        let norm_std = features
            .std_axis(Axis(0), 0.0)
            .mapv(|s| s.max(STD_FLOOR));
        Ok(LabeledDataset {
            features,
            labels,
            norm_mean,
            norm_std,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn normalized(&self) -> Array2<f64> {
        let mut out = self.features.clone();
        for mut row in out.rows_mut() {
            row -= &self.norm_mean;
            row /= &self.norm_std;
        }
        out
    }

    pub fn one_hot_labels(&self) -> Array2<f64> {
        let mut y = Array2::zeros((self.labels.len(), NUM_CLASSES));
        for (r, &l) in self.labels.iter().enumerate() {
            y[[r, l as usize]] = 1.0;
        }
        y
    }
}

/// One "other transmitter" frame: a random QPSK transmission from A_T's
/// position with a fresh random device phase.
pub fn other_class_frame<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<IqFrame> {
    let device_phase = rng.gen::<f64>() * TAU;
    let tx = NodeConfig::new(
        scenario.at.id,
        scenario.at.position,
        scenario.at.transmit_power,
        device_phase,
    )?;
    let channel = scenario.link_at_to_r()?.sample(rng);
    synthesize_random_frame(&tx, &channel, rng)
}

/// One intended frame: T's pilot payload over the T -> R link.
pub fn intended_frame<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<IqFrame> {
    let channel = scenario.link_t_to_r()?.sample(rng);
    synthesize_direct_frame(&scenario.config.pilot_bits, &scenario.t, &channel)
}

/// Build a labeled, shuffled frame set of intended and other transmissions.
pub fn build_labeled_frames<R: Rng + ?Sized>(
    scenario: &Scenario,
    n_intended: usize,
    n_other: usize,
    rng: &mut R,
) -> Result<Vec<IqFrame>> {
    if n_intended == 0 || n_other == 0 {
        return Err(SimError::Config("frame counts must be positive".into()));
    }
    let mut frames = Vec::with_capacity(n_intended + n_other);
    for _ in 0..n_intended {
        frames.push(intended_frame(scenario, rng)?);
    }
    for _ in 0..n_other {
        frames.push(other_class_frame(scenario, rng)?);
    }
    neural::shuffle(&mut frames, rng);
    Ok(frames)
}

/// Build the defender's training set with normalization computed on it.
pub fn build_training_set<R: Rng + ?Sized>(
    scenario: &Scenario,
    n_intended: usize,
    n_other: usize,
    rng: &mut R,
) -> Result<LabeledDataset> {
    let frames = build_labeled_frames(scenario, n_intended, n_other, rng)?;
    LabeledDataset::from_frames(&frames)
}

/// The trained authenticator: MLP plus its frozen input normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Defender {
    pub model: MlpModel,
    pub norm_mean: Array1<f64>,
    pub norm_std: Array1<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct Classification {
    pub intended: bool,
    pub intended_probability: f64,
}

impl Defender {
    pub fn normalize(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut out = features.clone();
        for mut row in out.rows_mut() {
            row -= &self.norm_mean;
            row /= &self.norm_std;
        }
        out
    }

    /// Intended-probabilities for a batch of raw feature rows.
    pub fn intended_probabilities(&self, features: &Array2<f64>) -> Result<Array1<f64>> {
        let fwd = self.model.forward(&self.normalize(features))?;
        Ok(fwd.outputs().column(INTENDED_CLASS).to_owned())
    }

    pub fn classify(&self, frame: &IqFrame) -> Result<Classification> {
        let features = Array2::from_shape_vec((1, FEATURES_PER_FRAME), frame_to_features(frame))
            .map_err(|e| SimError::Shape(e.to_string()))?;
        let p = self.intended_probabilities(&features)?[0];
        Ok(Classification {
            intended: p >= 0.5,
            intended_probability: p,
        })
    }

    pub fn classify_frames(&self, frames: &[IqFrame]) -> Result<Vec<Classification>> {
        let mut features = Array2::zeros((frames.len(), FEATURES_PER_FRAME));
        for (r, frame) in frames.iter().enumerate() {
            features
                .row_mut(r)
                .assign(&Array1::from_vec(frame_to_features(frame)));
        }
        let probs = self.intended_probabilities(&features)?;
        Ok(probs
            .iter()
            .map(|&p| Classification {
                intended: p >= 0.5,
                intended_probability: p,
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DefenderFile {
            format_version: 1,
            defender: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DefenderFile = serde_json::from_str(text)?;
        if file.format_version != 1 {
            return Err(SimError::Serde(format!(
                "unsupported defender format version {}",
                file.format_version
            )));
        }
        Ok(file.defender)
    }
}

#[derive(Serialize, Deserialize)]
struct DefenderFile {
    format_version: u32,
    defender: Defender,
}

/// Train the authenticator: MLP [800, 50, 50, 50, 2], ReLU hidden, Softmax
/// output, cross-entropy. Returns the model and its per-step batch losses.
pub fn train_defender<R: Rng + ?Sized>(
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(Defender, Vec<f64>)> {
    let dims = [
        FEATURES_PER_FRAME,
        HIDDEN_WIDTH,
        HIDDEN_WIDTH,
        HIDDEN_WIDTH,
        NUM_CLASSES,
    ];
    let mut model = MlpModel::init(&dims, HiddenActivation::Relu, OutputActivation::Softmax, rng)?;
    let x = dataset.normalized();
    let y = dataset.one_hot_labels();
    let losses = neural::train_supervised(&mut model, &x, &y, LossKind::CrossEntropy, cfg, rng)?;
    Ok((
        Defender {
            model,
            norm_mean: dataset.norm_mean.clone(),
            norm_std: dataset.norm_std.clone(),
        },
        losses,
    ))
}

/// Counts and rates of the two authentication error types.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// Total test count.
    pub n: usize,
    /// Frames truly from T.
    pub n_t: usize,
    /// Intended frames classified Other.
    pub n_md: usize,
    /// Other frames classified Intended.
    pub n_fa: usize,
    /// n_md / n_t; absent when the set has no intended frames.
    pub e_md: Option<f64>,
    /// n_fa / (n - n_t); absent when the set has no other frames.
    pub e_fa: Option<f64>,
    /// Fraction of non-intended frames accepted as intended (equals e_fa).
    pub success_probability: Option<f64>,
}

impl ErrorMetrics {
    pub fn from_counts(n: usize, n_t: usize, n_md: usize, n_fa: usize) -> Result<Self> {
        if n == 0 || n_t > n || n_md > n_t || n_fa > n - n_t {
            return Err(SimError::DegenerateMetrics(format!(
                "inconsistent counts n={n} n_t={n_t} n_md={n_md} n_fa={n_fa}"
            )));
        }
        let e_md = (n_t > 0).then(|| n_md as f64 / n_t as f64);
        let e_fa = (n > n_t).then(|| n_fa as f64 / (n - n_t) as f64);
        Ok(ErrorMetrics {
            n,
            n_t,
            n_md,
            n_fa,
            e_md,
            e_fa,
            success_probability: e_fa,
        })
    }

    /// max(e_MD, e_FA); requires both classes present.
    pub fn max_error(&self) -> Result<f64> {
        match (self.e_md, self.e_fa) {
            (Some(md), Some(fa)) => Ok(md.max(fa)),
            _ => Err(SimError::DegenerateMetrics(
                "both classes required for max error".into(),
            )),
        }
    }
}

/// Metrics from (truth, predicted-intended) decision pairs.
pub fn metrics_from_decisions(decisions: &[(bool, bool)]) -> Result<ErrorMetrics> {
    let n = decisions.len();
    let n_t = decisions.iter().filter(|(truth, _)| *truth).count();
    let n_md = decisions
        .iter()
        .filter(|(truth, predicted)| *truth && !*predicted)
        .count();
    let n_fa = decisions
        .iter()
        .filter(|(truth, predicted)| !*truth && *predicted)
        .count();
    ErrorMetrics::from_counts(n, n_t, n_md, n_fa)
}

/// Evaluate the defender on a mixed test set (both classes required).
pub fn evaluate(defender: &Defender, frames: &[IqFrame]) -> Result<ErrorMetrics> {
    let classifications = defender.classify_frames(frames)?;
    let decisions: Vec<(bool, bool)> = frames
        .iter()
        .zip(&classifications)
        .map(|(f, c)| (f.source_label == SourceLabel::Intended, c.intended))
        .collect();
    let metrics = metrics_from_decisions(&decisions)?;
    if metrics.e_md.is_none() || metrics.e_fa.is_none() {
        return Err(SimError::DegenerateMetrics(
            "test set contains a single class; both rates undefined".into(),
        ));
    }
    Ok(metrics)
}

/// Evaluate an all-attack frame set: success probability is the fraction
/// classified Intended.
pub fn evaluate_attack(defender: &Defender, frames: &[IqFrame]) -> Result<ErrorMetrics> {
    if frames.is_empty() {
        return Err(SimError::DegenerateMetrics("empty attack set".into()));
    }
    let classifications = defender.classify_frames(frames)?;
    let accepted = classifications.iter().filter(|c| c.intended).count();
    ErrorMetrics::from_counts(frames.len(), 0, 0, accepted)
}
