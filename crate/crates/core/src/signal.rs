//! Complex-baseband synthesis of transmitted and received frames.
//!
//! A frame carries 8 bits as 4 QPSK symbols, each observed through 100
//! sample points. Every received sample has the form
//! `gain * P * exp(j(phi_m + theta_dev + theta_ch + k*pi/50))` where
//! `phi_m` is the constellation phase of the symbol, the thetas are device
//! and channel phase shifts, and `k` indexes the sample within the symbol.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Result, SimError};

pub const SYMBOLS_PER_FRAME: usize = 4;
pub const SAMPLES_PER_SYMBOL: usize = 100;
pub const SAMPLES_PER_FRAME: usize = SYMBOLS_PER_FRAME * SAMPLES_PER_SYMBOL;
pub const FEATURES_PER_FRAME: usize = 2 * SAMPLES_PER_FRAME;
/// Phase advance between consecutive sample points of one symbol.
pub const PHASE_STEP: f64 = PI / 50.0;
pub const BITS_PER_FRAME: usize = 8;

pub type BitPayload = [u8; BITS_PER_FRAME];

pub const TAU: f64 = 2.0 * PI;

/// Reduce an angle into [0, 2*pi).
pub fn wrap_phase(phase: f64) -> f64 {
    let p = phase % TAU;
    if p < 0.0 {
        p + TAU
    } else {
        p
    }
}

/// Who a frame claims to come from, as ground truth for the authenticator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceLabel {
    Intended,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeId {
    /// Intended transmitter.
    T,
    /// Receiver running the authenticator.
    R,
    /// Adversary transmitter.
    At,
    /// Adversary (surrogate) receiver.
    Ar,
}

/// A radio node: position, transmit power P, and its device phase shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub id: NodeId,
    pub position: [f64; 2],
    pub transmit_power: f64,
    pub device_phase: f64,
}

impl NodeConfig {
    pub fn new(id: NodeId, position: [f64; 2], transmit_power: f64, device_phase: f64) -> Result<Self> {
        if !transmit_power.is_finite() || transmit_power < 0.0 {
            return Err(SimError::Config(format!(
                "transmit power must be nonnegative, got {transmit_power}"
            )));
        }
        Ok(NodeConfig {
            id,
            position,
            transmit_power,
            device_phase: wrap_phase(device_phase),
        })
    }

    pub fn distance_to(&self, position: [f64; 2]) -> f64 {
        let dx = self.position[0] - position[0];
        let dy = self.position[1] - position[1];
        (dx * dx + dy * dy).sqrt()
    }
}

/// One Rayleigh draw for a directed node pair: power gain and phase shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub gain: f64,
    pub phase: f64,
}

impl ChannelRealization {
    pub fn new(gain: f64, phase: f64) -> Result<Self> {
        if !gain.is_finite() || gain < 0.0 {
            return Err(SimError::Numeric(format!("channel gain must be nonnegative, got {gain}")));
        }
        Ok(ChannelRealization {
            gain,
            phase: wrap_phase(phase),
        })
    }
}

/// One observation: 400 complex baseband samples (4 symbols x 100 points).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqFrame {
    samples: Vec<Complex64>,
    pub bit_payload: Option<BitPayload>,
    pub source_label: SourceLabel,
}

impl IqFrame {
    pub fn new(samples: Vec<Complex64>, bit_payload: Option<BitPayload>, source_label: SourceLabel) -> Result<Self> {
        if samples.len() != SAMPLES_PER_FRAME {
            return Err(SimError::InvalidFrame(format!(
                "expected {SAMPLES_PER_FRAME} samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(SimError::InvalidFrame("non-finite sample".into()));
        }
        Ok(IqFrame {
            samples,
            bit_payload,
            source_label,
        })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }
}

/// QPSK constellation phase for one bit pair.
///
/// Gray mapping: 00 -> pi/4, 01 -> 3pi/4, 11 -> 5pi/4, 10 -> 7pi/4.
/// Nonzero bit values are treated as 1.
pub fn qpsk_phase(b0: u8, b1: u8) -> f64 {
    match (b0 != 0, b1 != 0) {
        (false, false) => PI / 4.0,
        (false, true) => 3.0 * PI / 4.0,
        (true, true) => 5.0 * PI / 4.0,
        (true, false) => 7.0 * PI / 4.0,
    }
}

/// Draw a Rayleigh-fading channel realization for a link of length `distance`.
///
/// Consumes exactly two RNG draws: first the gain (exponential with mean
/// `distance^-2`, inverse-CDF transform), then the phase (uniform on
/// [0, 2*pi)).
pub fn draw_channel<R: Rng + ?Sized>(distance: f64, rng: &mut R) -> Result<ChannelRealization> {
    if !(distance > 0.0) {
        return Err(SimError::InvalidGeometry(format!(
            "link distance must be positive, got {distance}"
        )));
    }
    let mean_gain = distance.powi(-2);
    let u: f64 = rng.gen();
    let gain = -mean_gain * (1.0 - u).ln();
    let phase = rng.gen::<f64>() * TAU;
    ChannelRealization::new(gain, phase)
}

fn modulate(
    bits: &BitPayload,
    amplitude: f64,
    phase_offset: f64,
    bit_payload: Option<BitPayload>,
    source_label: SourceLabel,
) -> Result<IqFrame> {
    let mut samples = Vec::with_capacity(SAMPLES_PER_FRAME);
    for m in 0..SYMBOLS_PER_FRAME {
        let phi = qpsk_phase(bits[2 * m], bits[2 * m + 1]);
        for k in 0..SAMPLES_PER_SYMBOL {
            let theta = phi + phase_offset + k as f64 * PHASE_STEP;
            samples.push(Complex64::from_polar(amplitude, theta));
        }
    }
    IqFrame::new(samples, bit_payload, source_label)
}

/// Synthesize the frame received over a single hop from `tx`.
///
/// Sample k of symbol m is `gain * P * exp(j(phi_m + theta_tx + theta_ch + k*pi/50))`.
pub fn synthesize_direct_frame(bits: &BitPayload, tx: &NodeConfig, channel: &ChannelRealization) -> Result<IqFrame> {
    if !(tx.transmit_power > 0.0) {
        return Err(SimError::Config("transmitter power must be positive".into()));
    }
    let label = if tx.id == NodeId::T {
        SourceLabel::Intended
    } else {
        SourceLabel::Other
    };
    modulate(
        bits,
        channel.gain * tx.transmit_power,
        tx.device_phase + channel.phase,
        Some(*bits),
        label,
    )
}

/// Synthesize an amplify-and-forward replay of one of `tx`'s frames.
///
/// The relay renormalizes the recorded amplitude to full power P, so only the
/// destination-hop gain scales the amplitude while every phase term
/// accumulates: sample k is
/// `g2 * P * exp(j(phi_m + theta_T + theta_1 + theta_relay + theta_2 + k*pi/50))`.
pub fn synthesize_replay_frame(
    original_bits: &BitPayload,
    tx: &NodeConfig,
    relay: &NodeConfig,
    ch_tx_to_relay: &ChannelRealization,
    ch_relay_to_rx: &ChannelRealization,
) -> Result<IqFrame> {
    if !(relay.transmit_power > 0.0) {
        return Err(SimError::Config("relay power must be positive".into()));
    }
    modulate(
        original_bits,
        ch_relay_to_rx.gain * relay.transmit_power,
        tx.device_phase + ch_tx_to_relay.phase + relay.device_phase + ch_relay_to_rx.phase,
        Some(*original_bits),
        SourceLabel::Other,
    )
}

/// Synthesize a random transmission from `tx`: 8 uniform bits through the
/// given channel with the transmitter's own device phase.
pub fn synthesize_random_frame<R: Rng + ?Sized>(
    tx: &NodeConfig,
    channel: &ChannelRealization,
    rng: &mut R,
) -> Result<IqFrame> {
    let mut bits = [0u8; BITS_PER_FRAME];
    for b in bits.iter_mut() {
        *b = rng.gen_range(0..2u8);
    }
    let mut frame = synthesize_direct_frame(&bits, tx, channel)?;
    frame.source_label = SourceLabel::Other;
    Ok(frame)
}

/// Flatten a frame into 800 interleaved (re, im) features in sample order.
pub fn frame_to_features(frame: &IqFrame) -> Vec<f64> {
    let mut out = Vec::with_capacity(FEATURES_PER_FRAME);
    for s in frame.samples() {
        out.push(s.re);
        out.push(s.im);
    }
    out
}

/// Inverse of the feature flattening: 800 interleaved reals back to samples.
pub fn features_to_samples(features: &[f64]) -> Result<Vec<Complex64>> {
    if features.len() != FEATURES_PER_FRAME {
        return Err(SimError::Shape(format!(
            "expected {FEATURES_PER_FRAME} features, got {}",
            features.len()
        )));
    }
    Ok(features
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect())
}
