//! Command-line front end for the spoofing simulator.

use clap::{Parser, Subcommand, ValueEnum};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use spoofsim::experiment::{
    emit_results, run_experiment, ExperimentPlan, ExperimentResult, OutputFormat,
};
use spoofsim::scenario::{AttackKind, ScenarioConfig};
use spoofsim::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Random,
    Replay,
    Gan,
}

impl From<KindArg> for AttackKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Random => AttackKind::Random,
            KindArg::Replay => AttackKind::Replay,
            KindArg::Gan => AttackKind::Gan,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Table,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Table => OutputFormat::Table,
        }
    }
}

#[derive(Parser)]
#[command(name = "spoofsim", about = "Physical-layer spoofing simulator", version)]
struct Cli {
    /// Scenario configuration (TOML); defaults to the reference scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single master seed (default: the config's seed).
    #[arg(long, global = true, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Inclusive seed range, e.g. 1..5.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Directory for result files (also settable via SPOOFSIM_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "table")]
    format: FormatArg,
    /// Override the GAN epoch cap.
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the defender and report its misdetection / false-alarm rates.
    TrainDefender,
    /// Run one attack strategy against a freshly trained defender.
    Attack {
        #[arg(long, value_enum)]
        kind: KindArg,
    },
    /// GAN attack success from each mobility test position.
    SweepMobility,
    /// All attack strategies plus the mobility sweep.
    ReproduceTables,
    /// Verify analytic gradients against finite differences.
    Gradcheck,
}

fn parse_seed_range(text: &str) -> Result<Vec<u64>> {
    let (a, b) = text
        .split_once("..")
        .ok_or_else(|| SimError::Config(format!("expected a..b seed range, got {text:?}")))?;
    let a: u64 = a.trim().parse().map_err(|_| SimError::Config(format!("bad seed {a:?}")))?;
    let b: u64 = b.trim().parse().map_err(|_| SimError::Config(format!("bad seed {b:?}")))?;
    if b < a {
        return Err(SimError::Config(format!("empty seed range {text:?}")));
    }
    Ok((a..=b).collect())
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig> {
    let mut config = match &cli.config {
        Some(path) => ScenarioConfig::from_path(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(max_epochs) = cli.max_epochs {
        if max_epochs == 0 {
            return Err(SimError::Config("max-epochs must be >= 1".into()));
        }
        config.gan.max_epochs = max_epochs;
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(cli: &Cli) -> Option<PathBuf> {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("SPOOFSIM_OUT").map(PathBuf::from))
}

fn write_outputs(result: &ExperimentResult, format: OutputFormat, dir: Option<&PathBuf>) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    emit_results(result, format, &mut stdout)?;
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        let ext = match format {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
            OutputFormat::Table => "txt",
        };
        let path = dir.join(format!("results.{ext}"));
        let mut file = std::fs::File::create(&path)?;
        emit_results(result, format, &mut file)?;
        // the JSON record is always kept alongside for reproducibility
        if format != OutputFormat::Json {
            let mut file = std::fs::File::create(dir.join("results.json"))?;
            emit_results(result, OutputFormat::Json, &mut file)?;
        }
        writeln!(std::io::stderr(), "wrote {}", path.display()).ok();
    }
    Ok(())
}

fn gradcheck() -> Result<()> {
    use ndarray::{Array1, Array2};
    use rand::Rng;
    use spoofsim::gan::{generator_gradients, FeatureNorm};
    use spoofsim::neural::{
        loss, max_relative_error, numeric_gradients, HiddenActivation, LossKind, MlpModel,
        OutputActivation,
    };
    use spoofsim::rng::substream;
    use spoofsim::signal::ChannelRealization;

    let mut rng = substream(0, "gradcheck", 0);

    // classifier path: softmax + cross-entropy
    let model = MlpModel::init(
        &[6, 5, 4, 2],
        HiddenActivation::Relu,
        OutputActivation::Softmax,
        &mut rng,
    )?;
    let x = Array2::from_shape_fn((7, 6), |_| rng.gen::<f64>() - 0.5);
    let mut y = Array2::zeros((7, 2));
    for (r, mut row) in y.rows_mut().into_iter().enumerate() {
        row[r % 2] = 1.0;
    }
    let fwd = model.forward(&x)?;
    let (analytic, _) = model.backward_loss(&fwd, &y, LossKind::CrossEntropy)?;
    let numeric = numeric_gradients(
        &model,
        |probe| {
            let fwd = probe.forward(&x).expect("shapes fixed");
            loss(fwd.outputs(), &y, LossKind::CrossEntropy).expect("valid probabilities")
        },
        1e-5,
    );
    let classifier_err = max_relative_error(&analytic, &numeric);
    let classifier_ok = classifier_err < 1e-4;
    println!(
        "classifier gradient check : max relative error {classifier_err:.3e} ({})",
        if classifier_ok { "ok" } else { "FAILED" }
    );

    // generator path: through the discriminator, normalization, and channel
    let generator = MlpModel::init(
        &[4, 6, 8],
        HiddenActivation::Relu,
        OutputActivation::ScaledTanh { scale: 3.0 },
        &mut rng,
    )?;
    let discriminator = MlpModel::init(
        &[8, 6, 1],
        HiddenActivation::Relu,
        OutputActivation::Sigmoid,
        &mut rng,
    )?;
    let norm = FeatureNorm {
        mean: Array1::from_shape_fn(8, |_| rng.gen::<f64>() - 0.5),
        std: Array1::from_shape_fn(8, |_| rng.gen::<f64>() + 0.5),
    };
    let z = Array2::from_shape_fn((5, 4), |_| rng.gen::<f64>() - 0.5);
    let channels: Vec<ChannelRealization> = (0..5)
        .map(|_| ChannelRealization::new(rng.gen::<f64>() + 0.2, rng.gen::<f64>() * 6.0))
        .collect::<Result<_>>()?;
    let (analytic, _) = generator_gradients(&generator, &discriminator, &z, &channels, &norm)?;
    let numeric = numeric_gradients(
        &generator,
        |probe| {
            generator_gradients(probe, &discriminator, &z, &channels, &norm)
                .expect("shapes fixed")
                .1
        },
        1e-5,
    );
    let generator_err = max_relative_error(&analytic, &numeric);
    let generator_ok = generator_err < 1e-4;
    println!(
        "generator gradient check  : max relative error {generator_err:.3e} ({})",
        if generator_ok { "ok" } else { "FAILED" }
    );

    if classifier_ok && generator_ok {
        Ok(())
    } else {
        Err(SimError::Numeric("gradient check failed".into()))
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::Gradcheck = cli.command {
        return gradcheck();
    }
    let config = load_config(cli)?;
    let seeds = match (&cli.seed, &cli.seeds) {
        (Some(s), None) => vec![*s],
        (None, Some(range)) => parse_seed_range(range)?,
        (None, None) => vec![config.seed],
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    let plan = match &cli.command {
        Command::TrainDefender => ExperimentPlan::defender_only(),
        Command::Attack { kind } => ExperimentPlan::single_attack((*kind).into(), &config),
        Command::SweepMobility => ExperimentPlan::mobility_sweep(&config),
        Command::ReproduceTables => ExperimentPlan::full_tables(&config),
        Command::Gradcheck => unreachable!("handled above"),
    };
    let result = run_experiment(&config, &seeds, &plan)?;
    write_outputs(&result, cli.format.into(), out_dir(cli).as_ref())?;
    if !result.failures.is_empty() {
        return Err(SimError::Numeric(format!(
            "{} of {} seeds failed",
            result.failures.len(),
            result.seeds.len()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful exits
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (SimError::Config(_) | SimError::Parse(_) | SimError::InvalidGeometry(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
