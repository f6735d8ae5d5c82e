//! The adversary's generative attack pipeline.
//!
//! The adversary trains a GAN at its surrogate receiver A_R: the
//! discriminator separates frames recorded from T from frames the generator
//! transmits over the A_T -> A_R channel, and the generator is updated with
//! the non-saturating objective, its gradients chained through the frozen
//! discriminator and the channel back to its own parameters. The channel is
//! a real-linear map per complex sample, so its backward pass is the
//! conjugate rotation.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::defender::{self, Defender, ErrorMetrics, STD_FLOOR};
use crate::error::{Result, SimError};
use crate::neural::{
    self, loss, Gradients, HiddenActivation, LossKind, MlpModel, OptimizerState, OutputActivation,
    PROB_CLAMP,
};
use crate::scenario::{LinkChannel, Scenario};
use crate::signal::{
    features_to_samples, frame_to_features, synthesize_direct_frame, ChannelRealization, IqFrame,
    SourceLabel, FEATURES_PER_FRAME,
};

/// Loss-plateau convergence test over a trailing window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRule {
    pub window: usize,
    /// Relative tolerance on the deviation from the latest loss.
    pub threshold: f64,
}

/// True when every loss in the trailing window is within `threshold` of the
/// latest value, relatively (absolute fallback 1e-6 at zero).
pub fn check_convergence(history: &[f64], rule: &ConvergenceRule) -> bool {
    if rule.window == 0 || history.len() < rule.window {
        return false;
    }
    let l_now = *history.last().expect("nonempty");
    let tol = if l_now == 0.0 {
        1e-6
    } else {
        rule.threshold * l_now.abs()
    };
    history[history.len() - rule.window..]
        .iter()
        .all(|l| (l - l_now).abs() <= tol)
}

/// Feature standardization frozen from the adversary's recorded frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl FeatureNorm {
    pub fn from_rows(rows: &Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(SimError::Config("normalization needs samples".into()));
        }
        Ok(FeatureNorm {
            mean: rows.mean_axis(Axis(0)).expect("nonempty"),
            std: rows.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR)),
        })
    }

    pub fn apply(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for mut row in out.rows_mut() {
            row -= &self.mean;
            row /= &self.std;
        }
        out
    }
}

/// Both GAN networks plus the training trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanState {
    pub generator: MlpModel,
    pub discriminator: MlpModel,
    pub norm: FeatureNorm,
    /// Epochs actually run.
    pub epoch: usize,
    pub g_loss_history: Vec<f64>,
    pub d_loss_history: Vec<f64>,
    pub converged: bool,
}

const GAN_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GanFile {
    format_version: u32,
    state: GanState,
}

impl GanState {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GanFile {
            format_version: GAN_FORMAT_VERSION,
            state: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GanFile = serde_json::from_str(text)?;
        if file.format_version != GAN_FORMAT_VERSION {
            return Err(SimError::Serde(format!(
                "unsupported GAN format version {}",
                file.format_version
            )));
        }
        Ok(file.state)
    }
}

/// Run latent rows through the generator; outputs are bounded waveform
/// features (ScaledTanh head).
pub fn generate_waveform(generator: &MlpModel, z: &Array2<f64>) -> Result<Array2<f64>> {
    let fwd = generator.forward(z)?;
    Ok(fwd.outputs().clone())
}

/// Apply per-row channel realizations to interleaved (re, im) feature rows:
/// each complex sample is multiplied by `gain * exp(j*phase)`.
pub fn transmit_through_channel(
    features: &Array2<f64>,
    channels: &[ChannelRealization],
) -> Result<Array2<f64>> {
    if features.nrows() != channels.len() {
        return Err(SimError::Shape(format!(
            "{} feature rows but {} channel realizations",
            features.nrows(),
            channels.len()
        )));
    }
    if features.ncols() % 2 != 0 {
        return Err(SimError::Shape("feature width must be even".into()));
    }
    let mut out = features.to_owned();
    for (mut row, ch) in out.rows_mut().into_iter().zip(channels) {
        let (c, s) = (ch.phase.cos(), ch.phase.sin());
        for i in 0..row.len() / 2 {
            let (re, im) = (row[2 * i], row[2 * i + 1]);
            row[2 * i] = ch.gain * (re * c - im * s);
            row[2 * i + 1] = ch.gain * (re * s + im * c);
        }
    }
    Ok(out)
}

/// Transpose of `transmit_through_channel` as a real-linear map: multiply by
/// `gain * exp(-j*phase)`. This chains loss gradients back through the
/// channel.
pub fn channel_transpose(grad: &Array2<f64>, channels: &[ChannelRealization]) -> Result<Array2<f64>> {
    let negated: Vec<ChannelRealization> = channels
        .iter()
        .map(|ch| ChannelRealization::new(ch.gain, -ch.phase).expect("finite"))
        .collect();
    transmit_through_channel(grad, &negated)
}

/// One discriminator update on a real batch vs a fake batch (both already
/// normalized). Returns the pre-step loss `BCE(real; 1) + BCE(fake; 0)`.
pub fn discriminator_step(
    discriminator: &mut MlpModel,
    state: &mut OptimizerState,
    real_norm: &Array2<f64>,
    fake_norm: &Array2<f64>,
    learning_rate: f64,
) -> Result<f64> {
    let n_real = real_norm.nrows();
    let n_fake = fake_norm.nrows();
    let mut batch = Array2::zeros((n_real + n_fake, real_norm.ncols()));
    batch.slice_mut(ndarray::s![..n_real, ..]).assign(real_norm);
    batch.slice_mut(ndarray::s![n_real.., ..]).assign(fake_norm);
    let mut labels = Array2::zeros((n_real + n_fake, 1));
    labels.slice_mut(ndarray::s![..n_real, ..]).fill(1.0);

    let fwd = discriminator.forward(&batch)?;
    let outputs = fwd.outputs();
    let real_loss = loss(
        &outputs.slice(ndarray::s![..n_real, ..]).to_owned(),
        &Array2::ones((n_real, 1)),
        LossKind::BinaryCrossEntropy,
    )?;
    let fake_loss = loss(
        &outputs.slice(ndarray::s![n_real.., ..]).to_owned(),
        &Array2::zeros((n_fake, 1)),
        LossKind::BinaryCrossEntropy,
    )?;
    let (grads, _) = discriminator.backward_loss(&fwd, &labels, LossKind::BinaryCrossEntropy)?;
    neural::opt_step(discriminator, &grads, state, learning_rate);
    Ok(real_loss + fake_loss)
}

/// Generator gradients for the non-saturating objective
/// `-mean(ln D(norm(channel(G(z)))))`, chained through the frozen
/// discriminator, the normalization, and the channel. Returns the gradients
/// and the objective value.
pub fn generator_gradients(
    generator: &MlpModel,
    discriminator: &MlpModel,
    z: &Array2<f64>,
    channels: &[ChannelRealization],
    norm: &FeatureNorm,
) -> Result<(Gradients, f64)> {
    let g_fwd = generator.forward(z)?;
    let transmitted = transmit_through_channel(g_fwd.outputs(), channels)?;
    let received_norm = norm.apply(&transmitted);
    let d_fwd = discriminator.forward(&received_norm)?;
    let p = d_fwd.outputs();
    let n = p.nrows() as f64;
    let g_loss = p
        .iter()
        .map(|&v| -v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln())
        .sum::<f64>()
        / n;
    let output_grad = p.mapv(|v| -1.0 / (n * v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)));
    let (_, grad_received_norm) = discriminator.backward_from_output(&d_fwd, &output_grad)?;
    let mut grad_received = grad_received_norm;
    for mut row in grad_received.rows_mut() {
        row /= &norm.std;
    }
    let grad_transmitted = channel_transpose(&grad_received, channels)?;
    let (grads, _) = generator.backward_from_output(&g_fwd, &grad_transmitted)?;
    Ok((grads, g_loss))
}

/// One generator update; returns the pre-step objective value.
pub fn generator_step(
    generator: &mut MlpModel,
    state: &mut OptimizerState,
    discriminator: &MlpModel,
    z: &Array2<f64>,
    channels: &[ChannelRealization],
    norm: &FeatureNorm,
    learning_rate: f64,
) -> Result<f64> {
    let (grads, g_loss) = generator_gradients(generator, discriminator, z, channels, norm)?;
    neural::opt_step(generator, &grads, state, learning_rate);
    Ok(g_loss)
}

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn sample_channels<R: Rng + ?Sized>(link: &LinkChannel, n: usize, rng: &mut R) -> Vec<ChannelRealization> {
    (0..n).map(|_| link.sample(rng)).collect()
}

/// Train the GAN at the adversary's surrogate receiver.
///
/// Reals are a fixed set of frames recorded from T at A_R; normalization is
/// frozen from them. Each epoch runs `samples_per_class / batch_size`
/// discriminator batches followed by as many generator batches.
///
/// Adversarial losses oscillate heavily epoch to epoch, so the plateau test
/// (see [`check_convergence`]) is applied to the moving average of each loss
/// over the convergence window rather than to the raw per-epoch values.
/// Training stops once both smoothed losses plateau, or at `max_epochs` with
/// `converged = false`.
pub fn train_gan<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<GanState> {
    let cfg = &scenario.config;
    let gs = &cfg.gan;
    let rule = ConvergenceRule {
        window: gs.convergence_window,
        threshold: gs.convergence_threshold,
    };
    let steps_per_epoch = (gs.samples_per_class / gs.batch_size).max(1);

    let link_record = scenario.link_t_to_ar()?;
    let link_transmit = scenario.link_at_to_ar()?;

    // Fixed recorded set of T's frames at A_R.
    let mut real_features = Array2::zeros((gs.samples_per_class, FEATURES_PER_FRAME));
    for i in 0..gs.samples_per_class {
        let ch = link_record.sample(rng);
        let frame = synthesize_direct_frame(&cfg.pilot_bits, &scenario.t, &ch)?;
        real_features
            .row_mut(i)
            .assign(&Array1::from_vec(frame_to_features(&frame)));
    }
    let norm = FeatureNorm::from_rows(&real_features)?;
    let real_norm = norm.apply(&real_features);

    let w = gs.hidden_width;
    let mut generator = MlpModel::init(
        &[gs.z_dim, w, w, w, FEATURES_PER_FRAME],
        HiddenActivation::Relu,
        OutputActivation::ScaledTanh { scale: cfg.power },
        rng,
    )?;
    let mut discriminator = MlpModel::init(
        &[FEATURES_PER_FRAME, w, w, w, 1],
        HiddenActivation::Relu,
        OutputActivation::Sigmoid,
        rng,
    )?;
    let mut g_state = OptimizerState::new(gs.optimizer, &generator);
    let mut d_state = OptimizerState::new(gs.optimizer, &discriminator);

    let mut g_loss_history = Vec::with_capacity(gs.max_epochs);
    let mut d_loss_history = Vec::with_capacity(gs.max_epochs);
    let mut g_smoothed = Vec::with_capacity(gs.max_epochs);
    let mut d_smoothed = Vec::with_capacity(gs.max_epochs);
    let window_mean = |h: &[f64]| {
        h[h.len() - rule.window.min(h.len())..].iter().sum::<f64>() / rule.window.min(h.len()) as f64
    };
    let mut converged = false;
    let mut epoch = 0;

    while epoch < gs.max_epochs {
        let mut d_epoch = 0.0;
        for _ in 0..steps_per_epoch {
            let idx: Vec<usize> = (0..gs.batch_size)
                .map(|_| rng.gen_range(0..gs.samples_per_class))
                .collect();
            let real_batch = neural::select_rows(&real_norm, &idx);
            let z = normal_matrix(gs.batch_size, gs.z_dim, rng);
            let channels = sample_channels(&link_transmit, gs.batch_size, rng);
            let fakes = generate_waveform(&generator, &z)?;
            let fake_batch = norm.apply(&transmit_through_channel(&fakes, &channels)?);
            d_epoch += discriminator_step(
                &mut discriminator,
                &mut d_state,
                &real_batch,
                &fake_batch,
                gs.learning_rate,
            )?;
        }
        let mut g_epoch = 0.0;
        for _ in 0..steps_per_epoch {
            let z = normal_matrix(gs.batch_size, gs.z_dim, rng);
            let channels = sample_channels(&link_transmit, gs.batch_size, rng);
            g_epoch += generator_step(
                &mut generator,
                &mut g_state,
                &discriminator,
                &z,
                &channels,
                &norm,
                gs.learning_rate,
            )?;
        }
        d_loss_history.push(d_epoch / steps_per_epoch as f64);
        g_loss_history.push(g_epoch / steps_per_epoch as f64);
        epoch += 1;
        if epoch >= rule.window {
            d_smoothed.push(window_mean(&d_loss_history));
            g_smoothed.push(window_mean(&g_loss_history));
        }
        if check_convergence(&d_smoothed, &rule) && check_convergence(&g_smoothed, &rule) {
            converged = true;
            break;
        }
    }

    Ok(GanState {
        generator,
        discriminator,
        norm,
        epoch,
        g_loss_history,
        d_loss_history,
        converged,
    })
}

/// One spoofed frame: a generated waveform transmitted over `link`.
pub fn gan_frame<R: Rng + ?Sized>(
    generator: &MlpModel,
    link: &LinkChannel,
    rng: &mut R,
) -> Result<IqFrame> {
    let z = normal_matrix(1, generator.input_dim(), rng);
    let waveform = generate_waveform(generator, &z)?;
    let ch = link.sample(rng);
    let received = transmit_through_channel(&waveform, &[ch])?;
    let samples = features_to_samples(&received.row(0).to_vec())?;
    IqFrame::new(samples, None, SourceLabel::Other)
}

/// Run the spoofing attack from `position`: `n` generated frames transmitted
/// to R and scored against the defender. Success is the accepted fraction.
pub fn spoof_attack<R: Rng + ?Sized>(
    defender: &Defender,
    generator: &MlpModel,
    scenario: &Scenario,
    position: [f64; 2],
    n: usize,
    rng: &mut R,
) -> Result<ErrorMetrics> {
    let link = scenario.link_position_to_r(position)?;
    let frames: Vec<IqFrame> = (0..n)
        .map(|_| gan_frame(generator, &link, rng))
        .collect::<Result<_>>()?;
    defender::evaluate_attack(defender, &frames)
}
