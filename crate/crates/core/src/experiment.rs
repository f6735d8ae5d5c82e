//! Seeded end-to-end experiments: train the defender, run attacks, aggregate
//! over seeds, and emit results.
//!
//! Each seed is fully independent and reproducible: every random decision is
//! drawn from a named substream of that seed, so adding or removing attacks
//! never perturbs the trained defender.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::time::Instant;

use crate::defender::{self, ErrorMetrics};
use crate::error::{Result, SimError};
use crate::gan::{self, GanState};
use crate::rng::substream;
use crate::scenario::{AttackKind, Scenario, ScenarioConfig};
use crate::signal::{synthesize_random_frame, synthesize_replay_frame, IqFrame, NodeConfig, TAU};

/// A_T positions used by the mobility sweep when the config gives none.
pub const DEFAULT_TEST_POSITIONS: [[f64; 2]; 4] =
    [[0.0, 10.0], [0.0, 11.0], [0.0, 15.0], [0.0, 20.0]];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// A_T's transmit position for this attack.
    pub position: [f64; 2],
}

/// What to run per seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub attacks: Vec<AttackSpec>,
}

impl ExperimentPlan {
    /// The defender evaluation alone.
    pub fn defender_only() -> Self {
        ExperimentPlan { attacks: vec![] }
    }

    pub fn single_attack(kind: AttackKind, config: &ScenarioConfig) -> Self {
        ExperimentPlan {
            attacks: vec![AttackSpec {
                kind,
                position: config.at_position,
            }],
        }
    }

    /// GAN attacks from every mobility test position.
    pub fn mobility_sweep(config: &ScenarioConfig) -> Self {
        ExperimentPlan {
            attacks: mobility_positions(config)
                .into_iter()
                .map(|position| AttackSpec {
                    kind: AttackKind::Gan,
                    position,
                })
                .collect(),
        }
    }

    /// All three attacks at the home position, then the mobility sweep.
    pub fn full_tables(config: &ScenarioConfig) -> Self {
        let mut attacks = vec![
            AttackSpec { kind: AttackKind::Random, position: config.at_position },
            AttackSpec { kind: AttackKind::Replay, position: config.at_position },
            AttackSpec { kind: AttackKind::Gan, position: config.at_position },
        ];
        attacks.extend(
            mobility_positions(config)
                .into_iter()
                .filter(|p| *p != config.at_position)
                .map(|position| AttackSpec { kind: AttackKind::Gan, position }),
        );
        ExperimentPlan { attacks }
    }

    fn needs_gan(&self) -> bool {
        self.attacks.iter().any(|a| a.kind == AttackKind::Gan)
    }
}

pub fn mobility_positions(config: &ScenarioConfig) -> Vec<[f64; 2]> {
    config
        .test_positions
        .clone()
        .unwrap_or_else(|| DEFAULT_TEST_POSITIONS.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub kind: AttackKind,
    pub position: [f64; 2],
    pub n: usize,
    /// Fraction of attack frames the defender accepted as intended.
    pub success_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub defender: ErrorMetrics,
    pub attacks: Vec<AttackResult>,
    pub gan_epochs: Option<usize>,
    pub gan_converged: Option<bool>,
    pub defender_train_secs: f64,
    pub gan_train_secs: f64,
}

/// Per-attack aggregate over the successful seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub kind: AttackKind,
    pub position: [f64; 2],
    pub mean_success: f64,
    pub std_success: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefenderAggregate {
    pub mean_e_md: f64,
    pub mean_e_fa: f64,
    pub max_e_md: f64,
    pub max_e_fa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// SHA-256 of the canonical JSON form of the config.
    pub config_digest: String,
    pub config: ScenarioConfig,
    pub plan: ExperimentPlan,
    pub seeds: Vec<u64>,
    pub results: Vec<SeedResult>,
    /// Seeds that errored, with their messages.
    pub failures: Vec<(u64, String)>,
    pub defender_aggregate: DefenderAggregate,
    pub attack_aggregates: Vec<AggregateRow>,
    pub wallclock_secs: f64,
}

pub fn config_digest(config: &ScenarioConfig) -> Result<String> {
    let canonical = serde_json::to_string(config)?;
    Ok(format!("{:x}", Sha256::digest(canonical.as_bytes())))
}

fn random_attack_frames(
    scenario: &Scenario,
    position: [f64; 2],
    n: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<IqFrame>> {
    use rand::Rng;
    let link = scenario.link_position_to_r(position)?;
    (0..n)
        .map(|_| {
            let tx = NodeConfig::new(
                scenario.at.id,
                position,
                scenario.at.transmit_power,
                rng.gen::<f64>() * TAU,
            )?;
            let ch = link.sample(rng);
            synthesize_random_frame(&tx, &ch, rng)
        })
        .collect()
}

fn replay_attack_frames(
    scenario: &Scenario,
    position: [f64; 2],
    n: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<IqFrame>> {
    let recording = scenario.link_t_to_at()?;
    let forward = scenario.link_position_to_r(position)?;
    (0..n)
        .map(|_| {
            let ch1 = recording.sample(rng);
            let ch2 = forward.sample(rng);
            synthesize_replay_frame(&scenario.config.pilot_bits, &scenario.t, &scenario.at, &ch1, &ch2)
        })
        .collect()
}

/// Run one fully seeded experiment: train and score the defender, then run
/// every planned attack against it.
pub fn run_seed(config: &ScenarioConfig, seed: u64, plan: &ExperimentPlan) -> Result<SeedResult> {
    let scenario = Scenario::new(config.clone(), seed)?;

    let started = Instant::now();
    let mut train_rng = substream(seed, "defender-train", 0);
    let half_train = (config.n_train / 2).max(1);
    let train_set = defender::build_training_set(&scenario, half_train, half_train, &mut train_rng)?;
    let (trained, _) =
        defender::train_defender(&train_set, &config.defender_train_config(seed), &mut train_rng)?;
    let defender_train_secs = started.elapsed().as_secs_f64();

    let mut test_rng = substream(seed, "defender-test", 0);
    let half_test = (config.n_test / 2).max(1);
    let test_frames = defender::build_labeled_frames(&scenario, half_test, half_test, &mut test_rng)?;
    let defender_metrics = defender::evaluate(&trained, &test_frames)?;

    let mut gan_state: Option<GanState> = None;
    let mut gan_train_secs = 0.0;
    if plan.needs_gan() {
        let started = Instant::now();
        let mut gan_rng = substream(seed, "gan", 0);
        gan_state = Some(gan::train_gan(&scenario, &mut gan_rng)?);
        gan_train_secs = started.elapsed().as_secs_f64();
    }

    let mut attacks = Vec::with_capacity(plan.attacks.len());
    for (i, spec) in plan.attacks.iter().enumerate() {
        let mut attack_rng = substream(seed, "attack", i as u64);
        let metrics = match spec.kind {
            AttackKind::Random => {
                let frames =
                    random_attack_frames(&scenario, spec.position, config.n_attack, &mut attack_rng)?;
                defender::evaluate_attack(&trained, &frames)?
            }
            AttackKind::Replay => {
                let frames =
                    replay_attack_frames(&scenario, spec.position, config.n_attack, &mut attack_rng)?;
                defender::evaluate_attack(&trained, &frames)?
            }
            AttackKind::Gan => {
                let state = gan_state.as_ref().expect("trained above");
                gan::spoof_attack(
                    &trained,
                    &state.generator,
                    &scenario,
                    spec.position,
                    config.n_attack,
                    &mut attack_rng,
                )?
            }
        };
        attacks.push(AttackResult {
            kind: spec.kind,
            position: spec.position,
            n: metrics.n,
            success_probability: metrics.success_probability.unwrap_or(0.0),
        });
    }

    Ok(SeedResult {
        seed,
        defender: defender_metrics,
        attacks,
        gan_epochs: gan_state.as_ref().map(|s| s.epoch),
        gan_converged: gan_state.as_ref().map(|s| s.converged),
        defender_train_secs,
        gan_train_secs,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run the plan for every seed in parallel and aggregate. Individual seed
/// failures are recorded; only a fully failed run is an error.
pub fn run_experiment(
    config: &ScenarioConfig,
    seeds: &[u64],
    plan: &ExperimentPlan,
) -> Result<ExperimentResult> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(SimError::Config("at least one seed is required".into()));
    }
    let started = Instant::now();
    let outcomes: Vec<(u64, Result<SeedResult>)> = seeds
        .par_iter()
        .map(|&seed| (seed, run_seed(config, seed, plan)))
        .collect();

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    if results.is_empty() {
        return Err(SimError::AllSeedsFailed(
            failures
                .iter()
                .map(|(s, e)| format!("seed {s}: {e}"))
                .collect::<Vec<_>>()
                .join("; "),
        ));
    }

    let e_mds: Vec<f64> = results.iter().filter_map(|r| r.defender.e_md).collect();
    let e_fas: Vec<f64> = results.iter().filter_map(|r| r.defender.e_fa).collect();
    let defender_aggregate = DefenderAggregate {
        mean_e_md: mean_std(&e_mds).0,
        mean_e_fa: mean_std(&e_fas).0,
        max_e_md: e_mds.iter().cloned().fold(0.0, f64::max),
        max_e_fa: e_fas.iter().cloned().fold(0.0, f64::max),
    };

    let attack_aggregates = plan
        .attacks
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let successes: Vec<f64> = results
                .iter()
                .map(|r| r.attacks[i].success_probability)
                .collect();
            let (mean_success, std_success) = mean_std(&successes);
            AggregateRow {
                kind: spec.kind,
                position: spec.position,
                mean_success,
                std_success,
            }
        })
        .collect();

    Ok(ExperimentResult {
        config_digest: config_digest(config)?,
        config: config.clone(),
        plan: plan.clone(),
        seeds: seeds.to_vec(),
        results,
        failures,
        defender_aggregate,
        attack_aggregates,
        wallclock_secs: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
    Table,
}

fn kind_name(kind: AttackKind) -> &'static str {
    match kind {
        AttackKind::Random => "random",
        AttackKind::Replay => "replay",
        AttackKind::Gan => "gan",
    }
}

/// Write the experiment result in the requested format.
pub fn emit_results<W: Write>(result: &ExperimentResult, format: OutputFormat, out: &mut W) -> Result<()> {
    match format {
        OutputFormat::Json => {
            writeln!(out, "{}", serde_json::to_string_pretty(result)?)?;
        }
        OutputFormat::Csv => {
            writeln!(out, "attack,seed,position_x,position_y,e_md,e_fa,success,epochs")?;
            for r in &result.results {
                let e_md = r.defender.e_md.unwrap_or(f64::NAN);
                let e_fa = r.defender.e_fa.unwrap_or(f64::NAN);
                if r.attacks.is_empty() {
                    writeln!(out, "none,{},,,{e_md},{e_fa},,", r.seed)?;
                }
                for a in &r.attacks {
                    let epochs = match (a.kind, r.gan_epochs) {
                        (AttackKind::Gan, Some(e)) => e.to_string(),
                        _ => String::new(),
                    };
                    writeln!(
                        out,
                        "{},{},{},{},{e_md},{e_fa},{},{epochs}",
                        kind_name(a.kind),
                        r.seed,
                        a.position[0],
                        a.position[1],
                        a.success_probability,
                    )?;
                }
            }
        }
        OutputFormat::Table => {
            writeln!(out, "config digest : {}", result.config_digest)?;
            writeln!(out, "seeds         : {:?}", result.seeds)?;
            let d = &result.defender_aggregate;
            writeln!(
                out,
                "defender      : e_MD mean {:.2}% (max {:.2}%), e_FA mean {:.2}% (max {:.2}%)",
                100.0 * d.mean_e_md,
                100.0 * d.max_e_md,
                100.0 * d.mean_e_fa,
                100.0 * d.max_e_fa
            )?;
            if !result.attack_aggregates.is_empty() {
                writeln!(out)?;
                writeln!(out, "{:<8} {:>14} {:>12} {:>10}", "attack", "position", "success", "std")?;
                for row in &result.attack_aggregates {
                    writeln!(
                        out,
                        "{:<8} {:>14} {:>11.2}% {:>9.2}%",
                        kind_name(row.kind),
                        format!("({}, {})", row.position[0], row.position[1]),
                        100.0 * row.mean_success,
                        100.0 * row.std_success
                    )?;
                }
            }
            if !result.failures.is_empty() {
                writeln!(out)?;
                for (seed, msg) in &result.failures {
                    writeln!(out, "seed {seed} FAILED: {msg}")?;
                }
            }
            let epochs: Vec<usize> = result.results.iter().filter_map(|r| r.gan_epochs).collect();
            if !epochs.is_empty() {
                writeln!(out)?;
                writeln!(out, "gan epochs    : {epochs:?}")?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{DefenderSettings, GanSettings};

    /// A configuration small enough for unit tests.
    fn tiny_config() -> ScenarioConfig {
        ScenarioConfig {
            n_train: 60,
            n_test: 40,
            n_attack: 30,
            defender: DefenderSettings {
                batch_size: 30,
                steps: 40,
                ..Default::default()
            },
            gan: GanSettings {
                z_dim: 4,
                hidden_width: 8,
                batch_size: 10,
                max_epochs: 2,
                samples_per_class: 20,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn digest_is_stable_and_config_sensitive() {
        let a = config_digest(&tiny_config()).unwrap();
        let b = config_digest(&tiny_config()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        let mut other = tiny_config();
        other.seed = 99;
        assert_ne!(a, config_digest(&other).unwrap());
    }

    #[test]
    fn seed_run_is_deterministic() {
        let cfg = tiny_config();
        let plan = ExperimentPlan::single_attack(AttackKind::Random, &cfg);
        let a = run_seed(&cfg, 3, &plan).unwrap();
        let b = run_seed(&cfg, 3, &plan).unwrap();
        assert_eq!(a.defender, b.defender);
        assert_eq!(a.attacks, b.attacks);
    }

    #[test]
    fn defender_is_independent_of_attack_plan() {
        let cfg = tiny_config();
        let none = run_seed(&cfg, 1, &ExperimentPlan::defender_only()).unwrap();
        let with_attack =
            run_seed(&cfg, 1, &ExperimentPlan::single_attack(AttackKind::Replay, &cfg)).unwrap();
        let moved = run_seed(
            &cfg,
            1,
            &ExperimentPlan {
                attacks: vec![AttackSpec { kind: AttackKind::Replay, position: [0.0, 17.0] }],
            },
        )
        .unwrap();
        assert_eq!(none.defender, with_attack.defender);
        assert_eq!(none.defender, moved.defender);
    }

    #[test]
    fn aggregates_match_manual_mean() {
        let cfg = tiny_config();
        let plan = ExperimentPlan::single_attack(AttackKind::Random, &cfg);
        let result = run_experiment(&cfg, &[1, 2], &plan).unwrap();
        assert_eq!(result.results.len(), 2);
        let manual = result
            .results
            .iter()
            .map(|r| r.attacks[0].success_probability)
            .sum::<f64>()
            / 2.0;
        assert!((result.attack_aggregates[0].mean_success - manual).abs() < 1e-12);
        assert!(result.failures.is_empty());
    }

    #[test]
    fn all_seeds_failing_is_an_error() {
        let cfg = tiny_config();
        // attacking from R's own position makes the link degenerate
        let plan = ExperimentPlan {
            attacks: vec![AttackSpec { kind: AttackKind::Random, position: cfg.r_position }],
        };
        let err = run_experiment(&cfg, &[1, 2], &plan).unwrap_err();
        assert!(matches!(err, SimError::AllSeedsFailed(_)), "{err}");
    }

    #[test]
    fn csv_has_header_and_one_row_per_attack() {
        let cfg = tiny_config();
        let plan = ExperimentPlan::single_attack(AttackKind::Random, &cfg);
        let result = run_experiment(&cfg, &[1, 2], &plan).unwrap();
        let mut buf = Vec::new();
        emit_results(&result, OutputFormat::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.trim().lines().collect();
        assert_eq!(lines[0], "attack,seed,position_x,position_y,e_md,e_fa,success,epochs");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("random,1,"));
    }

    #[test]
    fn json_roundtrips() {
        let cfg = tiny_config();
        let plan = ExperimentPlan::defender_only();
        let result = run_experiment(&cfg, &[1], &plan).unwrap();
        let mut buf = Vec::new();
        emit_results(&result, OutputFormat::Json, &mut buf).unwrap();
        let back: ExperimentResult = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back.config_digest, result.config_digest);
        assert_eq!(back.results, result.results);
    }

    #[test]
    fn table_output_mentions_defender_and_attacks() {
        let cfg = tiny_config();
        let plan = ExperimentPlan::single_attack(AttackKind::Gan, &cfg);
        let result = run_experiment(&cfg, &[1], &plan).unwrap();
        let mut buf = Vec::new();
        emit_results(&result, OutputFormat::Table, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("defender"));
        assert!(text.contains("gan"));
        assert!(text.contains("epochs"));
    }
}
