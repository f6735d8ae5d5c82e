//! Scenario configuration and the per-link channel model.
//!
//! A scenario fixes the four-node geometry (intended transmitter T, defending
//! receiver R, adversary transmitter A_T, adversary receiver A_R), transmit
//! power, training settings, and the master seed. Device phases are drawn
//! once per scenario from the seed and held fixed.
//!
//! Channel model per directed link: the power gain is redrawn per frame from
//! an exponential distribution with mean `d^-2` (Rayleigh fading), while the
//! phase stays centered on a geometry-determined mean (propagation delay
//! modulo the carrier wavelength) with small per-frame jitter. Frames the
//! adversary recorded for replay were collected over a long window, so the
//! recording hop T -> A_T decorrelates completely: its phase is uniform per
//! frame.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::neural::{OptimizerKind, TrainConfig};
use crate::signal::{wrap_phase, BitPayload, ChannelRealization, NodeConfig, NodeId, TAU};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Random,
    Replay,
    Gan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenderSettings {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
}

impl Default for DefenderSettings {
    fn default() -> Self {
        DefenderSettings {
            batch_size: 150,
            steps: 1000,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanSettings {
    pub z_dim: usize,
    pub hidden_width: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Per-epoch real/fake sample count collected by the surrogate receiver.
    pub samples_per_class: usize,
    pub convergence_window: usize,
    pub convergence_threshold: f64,
}

impl Default for GanSettings {
    fn default() -> Self {
        GanSettings {
            z_dim: 100,
            hidden_width: 128,
            batch_size: 100,
            max_epochs: 5000,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            samples_per_class: 500,
            convergence_window: 100,
            convergence_threshold: 0.05,
        }
    }
}

/// Full experiment configuration. The defaults reproduce the reference
/// scenario, so an empty document is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub version: u32,
    pub seed: u64,
    pub power: f64,
    /// Carrier wavelength in the same distance units as positions; sets the
    /// geometry-determined mean phase of each link.
    pub wavelength: f64,
    /// Per-frame phase jitter (radians) around a link's mean phase.
    pub phase_jitter_std: f64,
    /// The 8-bit payload T transmits (its pilot pattern).
    pub pilot_bits: BitPayload,
    pub t_position: [f64; 2],
    pub r_position: [f64; 2],
    pub at_position: [f64; 2],
    pub ar_position: [f64; 2],
    pub n_train: usize,
    pub n_test: usize,
    pub n_attack: usize,
    pub attack: AttackKind,
    /// Optional A_T test-time positions for the mobility sweep.
    pub test_positions: Option<Vec<[f64; 2]>>,
    pub defender: DefenderSettings,
    pub gan: GanSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            version: CONFIG_VERSION,
            seed: 1,
            power: 1000.0,
            wavelength: 60.0,
            phase_jitter_std: 0.2,
            pilot_bits: [0, 0, 0, 1, 1, 0, 1, 1],
            t_position: [0.0, 0.0],
            r_position: [10.0, 0.0],
            at_position: [0.0, 10.0],
            ar_position: [10.0, 0.1],
            n_train: 1000,
            n_test: 1000,
            n_attack: 1000,
            attack: AttackKind::Gan,
            test_positions: None,
            defender: DefenderSettings::default(),
            gan: GanSettings::default(),
        }
    }
}

impl ScenarioConfig {
    /// Parse a TOML document; missing fields fall back to the defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Check every constraint, reporting all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.version != CONFIG_VERSION {
            problems.push(format!("unsupported config version {}", self.version));
        }
        if !(self.power > 0.0) || !self.power.is_finite() {
            problems.push(format!("power must be positive, got {}", self.power));
        }
        if !(self.wavelength > 0.0) || !self.wavelength.is_finite() {
            problems.push(format!("wavelength must be positive, got {}", self.wavelength));
        }
        if self.phase_jitter_std < 0.0 || !self.phase_jitter_std.is_finite() {
            problems.push(format!(
                "phase_jitter_std must be nonnegative, got {}",
                self.phase_jitter_std
            ));
        }
        if self.pilot_bits.iter().any(|&b| b > 1) {
            problems.push("pilot_bits entries must be 0 or 1".into());
        }
        for (name, n) in [
            ("n_train", self.n_train),
            ("n_test", self.n_test),
            ("n_attack", self.n_attack),
        ] {
            if n == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        let positions = [
            ("t_position", self.t_position),
            ("r_position", self.r_position),
            ("at_position", self.at_position),
            ("ar_position", self.ar_position),
        ];
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                if positions[i].1 == positions[j].1 {
                    problems.push(format!(
                        "{} and {} must be distinct, both are {:?}",
                        positions[i].0, positions[j].0, positions[i].1
                    ));
                }
            }
        }
        if self.defender.batch_size == 0 || self.defender.steps == 0 {
            problems.push("defender batch_size and steps must be >= 1".into());
        }
        if !(self.defender.learning_rate > 0.0) {
            problems.push("defender learning_rate must be > 0".into());
        }
        if self.gan.z_dim == 0 || self.gan.hidden_width == 0 || self.gan.batch_size == 0 {
            problems.push("gan z_dim, hidden_width and batch_size must be >= 1".into());
        }
        if self.gan.max_epochs == 0 || self.gan.samples_per_class == 0 {
            problems.push("gan max_epochs and samples_per_class must be >= 1".into());
        }
        if !(self.gan.learning_rate > 0.0) {
            problems.push("gan learning_rate must be > 0".into());
        }
        if self.gan.convergence_window == 0 {
            problems.push("gan convergence_window must be >= 1".into());
        }
        if !(self.gan.convergence_threshold > 0.0) {
            problems.push("gan convergence_threshold must be > 0".into());
        }
        if let Some(positions) = &self.test_positions {
            if positions.is_empty() {
                problems.push("test_positions must not be empty when present".into());
            }
            for p in positions {
                if *p == self.r_position {
                    problems.push(format!("test position {p:?} coincides with r_position"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SimError::Config(problems.join("; ")))
        }
    }

    pub fn defender_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.defender.batch_size,
            steps: self.defender.steps,
            learning_rate: self.defender.learning_rate,
            optimizer: self.defender.optimizer,
            seed,
        }
    }
}

/// A directed link's stationary parameters: per-frame realizations are drawn
/// from these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkChannel {
    pub distance: f64,
    pub mean_gain: f64,
    pub mean_phase: f64,
    pub phase_jitter_std: f64,
    /// Uniform per-frame phase (recordings spread over a long window).
    pub decorrelated: bool,
}

impl LinkChannel {
    pub fn new(from: [f64; 2], to: [f64; 2], wavelength: f64, jitter_std: f64, decorrelated: bool) -> Result<Self> {
        let dx = from[0] - to[0];
        let dy = from[1] - to[1];
        let distance = (dx * dx + dy * dy).sqrt();
        if !(distance > 0.0) {
            return Err(SimError::InvalidGeometry(format!(
                "link endpoints coincide at {from:?}"
            )));
        }
        Ok(LinkChannel {
            distance,
            mean_gain: distance.powi(-2),
            mean_phase: wrap_phase(TAU * distance / wavelength),
            phase_jitter_std: jitter_std,
            decorrelated,
        })
    }

    /// Draw one per-frame realization: exponential gain, then phase.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelRealization {
        let u: f64 = rng.gen();
        let gain = -self.mean_gain * (1.0 - u).ln();
        let phase = if self.decorrelated {
            rng.gen::<f64>() * TAU
        } else {
            let n: f64 = rng.sample(StandardNormal);
            wrap_phase(self.mean_phase + self.phase_jitter_std * n)
        };
        ChannelRealization::new(gain, phase).expect("finite draw")
    }
}

/// A resolved scenario: node configs with device phases drawn from the seed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub t: NodeConfig,
    pub r: NodeConfig,
    pub at: NodeConfig,
    pub ar: NodeConfig,
}

impl Scenario {
    /// Resolve a config for one seed. Device phases for T and A_T come from
    /// the "device-phase" substream of that seed.
    pub fn new(config: ScenarioConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::rng::substream(seed, "device-phase", 0);
        let theta_t = rng.gen::<f64>() * TAU;
        let theta_at = rng.gen::<f64>() * TAU;
        Ok(Scenario {
            t: NodeConfig::new(NodeId::T, config.t_position, config.power, theta_t)?,
            r: NodeConfig::new(NodeId::R, config.r_position, config.power, 0.0)?,
            at: NodeConfig::new(NodeId::At, config.at_position, config.power, theta_at)?,
            ar: NodeConfig::new(NodeId::Ar, config.ar_position, config.power, 0.0)?,
            config,
        })
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    fn link(&self, from: [f64; 2], to: [f64; 2], decorrelated: bool) -> Result<LinkChannel> {
        LinkChannel::new(
            from,
            to,
            self.config.wavelength,
            self.config.phase_jitter_std,
            decorrelated,
        )
    }

    pub fn link_t_to_r(&self) -> Result<LinkChannel> {
        self.link(self.t.position, self.r.position, false)
    }

    pub fn link_at_to_r(&self) -> Result<LinkChannel> {
        self.link(self.at.position, self.r.position, false)
    }

    /// The replay recording hop: fully decorrelated phase.
    pub fn link_t_to_at(&self) -> Result<LinkChannel> {
        self.link(self.t.position, self.at.position, true)
    }

    pub fn link_t_to_ar(&self) -> Result<LinkChannel> {
        self.link(self.t.position, self.ar.position, false)
    }

    pub fn link_at_to_ar(&self) -> Result<LinkChannel> {
        self.link(self.at.position, self.ar.position, false)
    }

    /// Link from an arbitrary A_T test position to R (mobility sweep).
    pub fn link_position_to_r(&self, position: [f64; 2]) -> Result<LinkChannel> {
        self.link(position, self.r.position, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn empty_document_yields_reference_defaults() {
        let cfg = ScenarioConfig::from_toml("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.power, 1000.0);
        assert_eq!(cfg.t_position, [0.0, 0.0]);
        assert_eq!(cfg.r_position, [10.0, 0.0]);
        assert_eq!(cfg.at_position, [0.0, 10.0]);
        assert_eq!(cfg.ar_position, [10.0, 0.1]);
        assert_eq!(cfg.defender.batch_size, 150);
        assert_eq!(cfg.defender.steps, 1000);
    }

    #[test]
    fn position_override_accepted() {
        let cfg = ScenarioConfig::from_toml("at_position = [0.0, 11.0]").unwrap();
        assert_eq!(cfg.at_position, [0.0, 11.0]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ScenarioConfig::from_toml("no_such_key = 1").unwrap_err();
        assert!(matches!(err, SimError::Parse(_)), "{err}");
    }

    #[test]
    fn duplicate_keys_rejected() {
        let err = ScenarioConfig::from_toml("seed = 1\nseed = 2").unwrap_err();
        assert!(matches!(err, SimError::Parse(_)), "{err}");
    }

    #[test]
    fn coincident_positions_rejected() {
        let err = ScenarioConfig::from_toml("t_position = [10.0, 0.0]").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("t_position") && msg.contains("r_position"), "{msg}");
    }

    #[test]
    fn validation_reports_all_violations() {
        let cfg = ScenarioConfig {
            power: -1.0,
            n_train: 0,
            ..Default::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("power") && msg.contains("n_train"), "{msg}");
    }

    #[test]
    fn device_phases_deterministic_per_seed() {
        let cfg = ScenarioConfig::default();
        let a = Scenario::new(cfg.clone(), 9).unwrap();
        let b = Scenario::new(cfg.clone(), 9).unwrap();
        let c = Scenario::new(cfg, 10).unwrap();
        assert_eq!(a.t.device_phase, b.t.device_phase);
        assert_ne!(a.t.device_phase, c.t.device_phase);
        assert!(a.t.device_phase >= 0.0 && a.t.device_phase < TAU);
    }

    #[test]
    fn link_gain_matches_inverse_square_distance() {
        let scenario = Scenario::new(ScenarioConfig::default(), 1).unwrap();
        let link = scenario.link_t_to_r().unwrap();
        assert!((link.distance - 10.0).abs() < 1e-12);
        let mut rng = substream(1, "link-test", 0);
        let n = 200_000;
        let mean = (0..n).map(|_| link.sample(&mut rng).gain).sum::<f64>() / n as f64;
        assert!((mean - 0.01).abs() / 0.01 < 0.02, "mean = {mean}");
    }

    #[test]
    fn decorrelated_link_phase_is_uniform() {
        let scenario = Scenario::new(ScenarioConfig::default(), 1).unwrap();
        let link = scenario.link_t_to_at().unwrap();
        assert!(link.decorrelated);
        let mut rng = substream(1, "link-test", 1);
        let n = 20_000;
        let mean_vector: num_complex::Complex64 = (0..n)
            .map(|_| num_complex::Complex64::from_polar(1.0, link.sample(&mut rng).phase))
            .sum::<num_complex::Complex64>()
            / n as f64;
        // resultant length of uniform phases is ~ 1/sqrt(n)
        assert!(mean_vector.norm() < 0.03, "norm = {}", mean_vector.norm());
    }

    #[test]
    fn correlated_link_phase_concentrates_on_mean() {
        let scenario = Scenario::new(ScenarioConfig::default(), 1).unwrap();
        let link = scenario.link_t_to_r().unwrap();
        let mut rng = substream(1, "link-test", 2);
        for _ in 0..1000 {
            let ch = link.sample(&mut rng);
            let dev = (ch.phase - link.mean_phase + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI;
            assert!(dev.abs() < 6.0 * link.phase_jitter_std, "dev = {dev}");
        }
    }

    #[test]
    fn nearby_receivers_see_similar_link_parameters() {
        let scenario = Scenario::new(ScenarioConfig::default(), 1).unwrap();
        let to_r = scenario.link_t_to_r().unwrap();
        let to_ar = scenario.link_t_to_ar().unwrap();
        assert!((to_r.mean_gain - to_ar.mean_gain).abs() / to_r.mean_gain < 0.01);
        assert!((to_r.mean_phase - to_ar.mean_phase).abs() < 0.01);
    }
}
