//! Acceptance gate: statistical bands for the full experiment on seeds 1-5
//! plus exact numerical checks. Each test prints one PASS/FAIL line.

use std::sync::OnceLock;

use spoofsim::defender::ErrorMetrics;
use spoofsim::experiment::{run_experiment, run_seed, ExperimentPlan, ExperimentResult};
use spoofsim::gan::{check_convergence, generator_gradients, ConvergenceRule, FeatureNorm};
use spoofsim::neural::{
    loss, max_relative_error, numeric_gradients, HiddenActivation, LossKind, MlpModel,
    OutputActivation,
};
use spoofsim::rng::substream;
use spoofsim::scenario::{AttackKind, DefenderSettings, GanSettings, ScenarioConfig};
use spoofsim::signal::{
    draw_channel, qpsk_phase, synthesize_direct_frame, synthesize_replay_frame, wrap_phase,
    ChannelRealization, NodeConfig, NodeId, PHASE_STEP, SAMPLES_PER_SYMBOL, SYMBOLS_PER_FRAME,
};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn shared_run() -> &'static ExperimentResult {
    static RUN: OnceLock<ExperimentResult> = OnceLock::new();
    RUN.get_or_init(|| {
        let config = ScenarioConfig::default();
        let plan = ExperimentPlan::full_tables(&config);
        run_experiment(&config, &SEEDS, &plan).expect("experiment must complete")
    })
}

fn report(criterion: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "{} criterion {criterion}: {name} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} failed: {name}: {detail}");
}

/// Mean attack success over seeds for a plan attack index.
fn mean_success(run: &ExperimentResult, index: usize) -> f64 {
    run.attack_aggregates[index].mean_success
}

#[test]
fn criterion_1_defender_error_rates() {
    let run = shared_run();
    let mut ok = run.failures.is_empty() && run.results.len() == SEEDS.len();
    let mut worst = 0.0_f64;
    let mut slowest = 0.0_f64;
    for r in &run.results {
        let max_err = r.defender.max_error().expect("both classes present");
        worst = worst.max(max_err);
        slowest = slowest.max(r.defender_train_secs);
        ok &= max_err <= 0.15 && r.defender_train_secs <= 120.0;
    }
    let agg = &run.defender_aggregate;
    ok &= agg.mean_e_md <= 0.10 && agg.mean_e_fa <= 0.10;
    report(
        1,
        "defender error rates",
        ok,
        &format!(
            "mean e_MD {:.3}, mean e_FA {:.3}, worst per-seed max {:.3}, slowest train {:.1}s",
            agg.mean_e_md, agg.mean_e_fa, worst, slowest
        ),
    );
}

#[test]
fn criterion_2_random_attack() {
    let run = shared_run();
    let random = mean_success(run, 0);
    report(
        2,
        "random attack success",
        random <= 0.15,
        &format!("mean success {random:.3}"),
    );
}

#[test]
fn criterion_3_replay_attack() {
    let run = shared_run();
    let random = mean_success(run, 0);
    let replay = mean_success(run, 1);
    let ok = (0.20..=0.50).contains(&replay) && replay >= random + 0.10;
    report(
        3,
        "replay attack success",
        ok,
        &format!("replay {replay:.3}, random {random:.3}"),
    );
}

#[test]
fn criterion_4_gan_attack() {
    let run = shared_run();
    let replay = mean_success(run, 1);
    let gan = mean_success(run, 2);
    let converged = run
        .results
        .iter()
        .filter(|r| r.gan_converged == Some(true) && r.gan_epochs.unwrap_or(usize::MAX) <= 5000)
        .count();
    let slowest = run
        .results
        .iter()
        .map(|r| r.gan_train_secs)
        .fold(0.0, f64::max);
    let ok = gan >= 0.50 && gan >= replay + 0.10 && converged >= 4 && slowest <= 900.0;
    report(
        4,
        "gan attack success and convergence",
        ok,
        &format!(
            "gan {gan:.3}, replay {replay:.3}, converged {converged}/{} seeds, slowest train {slowest:.0}s",
            run.results.len()
        ),
    );
}

#[test]
fn criterion_5_mobility_degradation() {
    let run = shared_run();
    let replay = mean_success(run, 1);
    // plan layout: [random, replay, gan@(0,10), gan@(0,11), gan@(0,15), gan@(0,20)]
    let home = mean_success(run, 2);
    let positions: Vec<(f64, f64, f64)> = (2..6)
        .map(|i| {
            let row = &run.attack_aggregates[i];
            (row.position[0], row.position[1], row.mean_success)
        })
        .collect();
    let far = positions.last().expect("four positions").2;
    let ok = far <= home - 0.05 && positions.iter().all(|&(_, _, s)| s >= replay);
    report(
        5,
        "mobility degradation",
        ok,
        &format!("successes by position {positions:?}, replay {replay:.3}"),
    );
}

#[test]
fn criterion_6_gradient_checks() {
    // classifier composition
    let mut rng = substream(100, "acceptance-gradcheck", 0);
    let model = MlpModel::init(
        &[6, 5, 4, 2],
        HiddenActivation::Relu,
        OutputActivation::Softmax,
        &mut rng,
    )
    .unwrap();
    let x = ndarray::Array2::from_shape_fn((7, 6), |_| rand::Rng::gen::<f64>(&mut rng) - 0.5);
    let mut y = ndarray::Array2::zeros((7, 2));
    for (r, mut row) in y.rows_mut().into_iter().enumerate() {
        row[r % 2] = 1.0;
    }
    let fwd = model.forward(&x).unwrap();
    let (analytic, _) = model.backward_loss(&fwd, &y, LossKind::CrossEntropy).unwrap();
    let numeric = numeric_gradients(
        &model,
        |probe| loss(probe.forward(&x).unwrap().outputs(), &y, LossKind::CrossEntropy).unwrap(),
        1e-5,
    );
    let classifier_err = max_relative_error(&analytic, &numeric);

    // generator composition: G -> channel -> normalization -> D
    let generator = MlpModel::init(
        &[4, 6, 8],
        HiddenActivation::Relu,
        OutputActivation::ScaledTanh { scale: 3.0 },
        &mut rng,
    )
    .unwrap();
    let discriminator = MlpModel::init(
        &[8, 6, 1],
        HiddenActivation::Relu,
        OutputActivation::Sigmoid,
        &mut rng,
    )
    .unwrap();
    let norm = FeatureNorm {
        mean: ndarray::Array1::from_shape_fn(8, |_| rand::Rng::gen::<f64>(&mut rng) - 0.5),
        std: ndarray::Array1::from_shape_fn(8, |_| rand::Rng::gen::<f64>(&mut rng) + 0.5),
    };
    let z = ndarray::Array2::from_shape_fn((5, 4), |_| rand::Rng::gen::<f64>(&mut rng) - 0.5);
    let channels: Vec<ChannelRealization> = (0..5)
        .map(|_| {
            ChannelRealization::new(
                rand::Rng::gen::<f64>(&mut rng) + 0.2,
                rand::Rng::gen::<f64>(&mut rng) * 6.0,
            )
            .unwrap()
        })
        .collect();
    let (analytic, _) =
        generator_gradients(&generator, &discriminator, &z, &channels, &norm).unwrap();
    let numeric = numeric_gradients(
        &generator,
        |probe| {
            generator_gradients(probe, &discriminator, &z, &channels, &norm)
                .unwrap()
                .1
        },
        1e-5,
    );
    let generator_err = max_relative_error(&analytic, &numeric);

    let ok = classifier_err < 1e-4 && generator_err < 1e-4;
    report(
        6,
        "gradient checks",
        ok,
        &format!("classifier {classifier_err:.2e}, generator {generator_err:.2e}"),
    );
}

#[test]
fn criterion_7_exact_numerics() {
    let mut ok = true;
    let mut notes = Vec::new();

    // error-rate identities on exact counts
    let m = ErrorMetrics::from_counts(1000, 504, 37, 39).unwrap();
    ok &= m.e_md == Some(37.0 / 504.0) && m.e_fa == Some(39.0 / 496.0);
    ok &= m.success_probability == m.e_fa;
    notes.push(format!("rates {:.4}/{:.4}", m.e_md.unwrap(), m.e_fa.unwrap()));

    // constellation, constant modulus, and per-sample phase increments
    ok &= qpsk_phase(0, 0) == std::f64::consts::FRAC_PI_4;
    let tx = NodeConfig::new(NodeId::T, [0.0, 0.0], 1000.0, 0.8).unwrap();
    let ch = ChannelRealization::new(0.004, 5.5).unwrap();
    let frame = synthesize_direct_frame(&[0, 1, 1, 1, 1, 0, 0, 0], &tx, &ch).unwrap();
    for s in frame.samples() {
        ok &= (s.norm() - 4.0).abs() < 1e-9;
    }
    for m in 0..SYMBOLS_PER_FRAME {
        for k in 1..SAMPLES_PER_SYMBOL {
            let prev = frame.samples()[m * SAMPLES_PER_SYMBOL + k - 1];
            let cur = frame.samples()[m * SAMPLES_PER_SYMBOL + k];
            ok &= (wrap_phase(cur.arg() - prev.arg()) - PHASE_STEP).abs() < 1e-9;
        }
    }

    // replay vs direct: exact accumulated phase difference
    let relay = NodeConfig::new(NodeId::At, [0.0, 10.0], 1000.0, 0.4).unwrap();
    let ch_direct = ChannelRealization::new(0.01, 1.3).unwrap();
    let ch1 = ChannelRealization::new(0.5, 0.3).unwrap();
    let ch2 = ChannelRealization::new(0.01, 0.5).unwrap();
    let bits = [1, 0, 0, 1, 1, 1, 0, 0];
    let direct = synthesize_direct_frame(&bits, &tx, &ch_direct).unwrap();
    let replay = synthesize_replay_frame(&bits, &tx, &relay, &ch1, &ch2).unwrap();
    let expected = wrap_phase(ch1.phase + relay.device_phase + ch2.phase - ch_direct.phase);
    for (d, r) in direct.samples().iter().zip(replay.samples()) {
        ok &= (wrap_phase(r.arg() - d.arg()) - expected).abs() < 1e-9;
    }

    // Rayleigh power gain: empirical mean within 2% of d^-2 at 1e5 draws
    let mut rng = substream(7, "acceptance-rayleigh", 0);
    let n = 100_000;
    let mean = (0..n)
        .map(|_| draw_channel(10.0, &mut rng).unwrap().gain)
        .sum::<f64>()
        / n as f64;
    ok &= (mean - 0.01).abs() / 0.01 < 0.02;
    notes.push(format!("rayleigh mean {mean:.5}"));

    // softmax rows sum to one within 1e-9
    let model = MlpModel::init(
        &[6, 5, 3],
        HiddenActivation::Relu,
        OutputActivation::Softmax,
        &mut rng,
    )
    .unwrap();
    let x = ndarray::Array2::from_shape_fn((16, 6), |_| rand::Rng::gen::<f64>(&mut rng) * 8.0 - 4.0);
    for row in model.forward(&x).unwrap().outputs().rows() {
        ok &= (row.sum() - 1.0).abs() < 1e-9;
    }

    // convergence rule truth table
    let rule = ConvergenceRule { window: 100, threshold: 0.05 };
    ok &= !check_convergence(&vec![1.0; 99], &rule);
    ok &= check_convergence(&vec![1.0; 100], &rule);
    let mut jump = vec![1.0; 99];
    jump.push(2.0);
    ok &= !check_convergence(&jump, &rule);
    let mut near = vec![1.04; 99];
    near.push(1.0);
    ok &= check_convergence(&near, &rule);

    // end-to-end determinism on a reduced configuration
    let config = ScenarioConfig {
        n_train: 60,
        n_test: 40,
        n_attack: 30,
        defender: DefenderSettings { batch_size: 30, steps: 40, ..Default::default() },
        gan: GanSettings {
            z_dim: 4,
            hidden_width: 8,
            batch_size: 10,
            max_epochs: 2,
            samples_per_class: 20,
            ..Default::default()
        },
        ..Default::default()
    };
    let plan = ExperimentPlan::single_attack(AttackKind::Gan, &config);
    let a = run_seed(&config, 42, &plan).unwrap();
    let b = run_seed(&config, 42, &plan).unwrap();
    ok &= a.defender == b.defender && a.attacks == b.attacks;

    report(7, "exact numerics", ok, &notes.join(", "));
}
