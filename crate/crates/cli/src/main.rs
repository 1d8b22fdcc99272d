use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use deconfound::cloning::{self, compare_arms, Arm, ComparisonConfig, Hyperparameters, PolicyModel, TrainConfig};
use deconfound::dataset::{self, Dataset};
use deconfound::envs::{self, EnvKind, EnvSpec, InitMode};
use deconfound::masking::verify::{verify_conservativeness, verify_fork, verify_monotonicity};
use deconfound::masking::{compute_mask, MaskConfig, MaskDoc, ObservationMask, DEFAULT_HORIZON};
use deconfound::independence::DEFAULT_GAMMA;
use deconfound::scm::fixtures::{fixture_by_name, FixtureName, SampleMode};

/// Detect and mask causally confusing observation coordinates in imitation
/// learning data.
#[derive(Parser, Debug)]
#[command(name = "deconfound", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an expert dataset from an environment or a fixture.
    Gen(GenArgs),
    /// Run the masking algorithm on a dataset.
    Mask(MaskArgs),
    /// Fit a behavior-cloning policy.
    Train(TrainArgs),
    /// Evaluate a policy in closed loop.
    Eval(EvalArgs),
    /// Run an empirical verification suite.
    Verify(VerifyArgs),
    /// Compare the unmasked, masked and manually masked arms end to end.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Init {
    Intervened,
    Confounded,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, conflicts_with = "fixture", required_unless_present = "fixture")]
    env: Option<String>,
    #[arg(long)]
    fixture: Option<String>,
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value_t = Init::Intervened)]
    init: Init,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Imperfect-disentanglement mixing strength (environments only).
    #[arg(long, default_value_t = 0.0)]
    mixing: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MaskArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: u32,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long)]
    out_mask: PathBuf,
    #[arg(long)]
    out_report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Policy {
    Ridge,
    Mlp,
}

#[derive(Args, Debug)]
struct PolicyArgs {
    #[arg(long, value_enum, default_value_t = Policy::Ridge)]
    policy: Policy,
    /// Stacked frames per input.
    #[arg(long, default_value_t = cloning::DEFAULT_HISTORY)]
    history: usize,
    #[arg(long, default_value_t = cloning::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Seed for MLP initialization and batch order.
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
}

impl PolicyArgs {
    fn config(&self) -> TrainConfig {
        let hyperparameters = match self.policy {
            Policy::Ridge => Hyperparameters::Ridge { lambda: self.lambda },
            Policy::Mlp => Hyperparameters::Mlp {
                hidden: self.hidden,
                epochs: self.epochs,
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                rng_seed: self.train_seed,
            },
        };
        TrainConfig {
            history: self.history,
            hyperparameters,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// A mask JSON file, `manual` for the ground-truth nuisance mask, or `none`.
    #[arg(long, default_value = "none")]
    mask: String,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    env: String,
    #[arg(long, default_value_t = 0.0)]
    mixing: f64,
    #[arg(long, default_value_t = cloning::DEFAULT_ROLLOUTS)]
    rollouts: usize,
    /// Seed `k` evaluates with `seed + k`.
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-rollout losses.
    #[arg(long)]
    out: PathBuf,
    /// Per-seed mean and standard deviation.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Suite {
    Conservativeness,
    Monotonicity,
    Prop1,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Full per-trial outcomes as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    env: String,
    /// Expert trajectories per seed.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value_t = cloning::DEFAULT_ROLLOUTS)]
    rollouts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: u32,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long)]
    out: PathBuf,
}

fn env_spec(name: &str, mixing: f64) -> Result<EnvSpec> {
    let kind: EnvKind = name.parse()?;
    Ok(EnvSpec::of(kind).with_mixing(mixing)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn gen(args: GenArgs) -> Result<()> {
    let data = match (&args.env, &args.fixture) {
        (Some(env), None) => {
            let spec = env_spec(env, args.mixing)?;
            let init = match args.init {
                Init::Intervened => InitMode::Intervened,
                Init::Confounded => InitMode::confounded(),
            };
            envs::generate(&spec, &init, args.n, args.seed)?
        }
        (None, Some(name)) => {
            let mode = match args.init {
                Init::Intervened => SampleMode::Intervened,
                Init::Confounded => SampleMode::Confounded,
            };
            fixture_by_name(name)?.dataset(mode, args.n, args.seed)?
        }
        _ => bail!("pass exactly one of --env and --fixture"),
    };
    data.save(&args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    println!(
        "wrote {} trajectories of {} steps to {}",
        data.len(),
        data.manifest.steps,
        args.out.display()
    );
    Ok(())
}

fn load_data(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("cannot read dataset {}", path.display()))
}

fn mask(args: MaskArgs) -> Result<()> {
    let data = load_data(&args.data)?;
    let cfg = MaskConfig::new(args.horizon, args.gamma);
    let (mask, report) = compute_mask(&data, &cfg)?;
    let mut out = create(&args.out_mask)?;
    dataset::write_json(&mut out, &MaskDoc::new(&mask, &cfg, data.dims()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    if let Some(path) = &args.out_report {
        fs::write(path, report.to_csv()).with_context(|| format!("cannot write {}", path.display()))?;
    }
    let masked = mask.masked_indices();
    println!(
        "mask {mask}: {} of {} observation coordinates masked {:?} (H = {}, gamma = {:e})",
        masked.len(),
        mask.len(),
        masked,
        cfg.horizon,
        cfg.gamma
    );
    Ok(())
}

/// The ground-truth nuisance mask for the generator recorded in the manifest.
fn manual_mask(data: &Dataset) -> Result<ObservationMask> {
    let source = data.manifest.source.as_str();
    if let Ok(kind) = source.parse::<EnvKind>() {
        return Ok(envs::manual_mask(&EnvSpec::of(kind)));
    }
    if let Ok(name) = source.parse::<FixtureName>() {
        let f = fixture_by_name(name.as_str())?;
        let d_o = data.dims().obs as usize;
        return Ok(ObservationMask::from_indices(d_o, f.truth.non_causal_observations.iter().copied()));
    }
    bail!("no ground-truth mask is known for data source {source:?}")
}

fn resolve_mask(spec: &str, data: &Dataset) -> Result<ObservationMask> {
    match spec {
        "none" => Ok(ObservationMask::none(data.dims().obs as usize)),
        "manual" => manual_mask(data),
        path => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read mask file {path}"))?;
            let doc: MaskDoc = serde_json::from_str(&text).with_context(|| format!("malformed mask file {path}"))?;
            Ok(doc.to_mask()?)
        }
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let data = load_data(&args.data)?;
    let mask = resolve_mask(&args.mask, &data)?;
    let model = cloning::train(&data, &mask, &args.policy.config())?;
    model
        .save(&args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    println!(
        "trained {:?} policy (L = {}, mask {mask}); open-loop MSE {:e}",
        model.kind,
        model.history,
        model.open_loop_mse(&data)?
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let model = PolicyModel::load(&args.model)
        .with_context(|| format!("cannot read model {}", args.model.display()))?;
    let spec = env_spec(&args.env, args.mixing)?;
    if args.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let mut all = cloning::EvalResult {
        losses: Vec::new(),
        truncated: Vec::new(),
        open_loop_mse: None,
    };
    let mut summary = String::from("seed,mean_loss,sd_loss,rollouts,truncated\n");
    for k in 0..args.seeds as u64 {
        let seed = args.seed.wrapping_add(k);
        let r = cloning::evaluate(&model, &spec, args.rollouts, seed)?;
        summary.push_str(&format!(
            "{seed},{:e},{:e},{},{}\n",
            r.mean(),
            r.sd(),
            r.rollouts(),
            r.truncated_count()
        ));
        println!(
            "seed {seed}: mean loss {:.4e} +- {:.4e} over {} rollouts ({} truncated)",
            r.mean(),
            r.sd(),
            r.rollouts(),
            r.truncated_count()
        );
        all.losses.extend(r.losses);
        all.truncated.extend(r.truncated);
    }
    all.write_csv(create(&args.out)?)?;
    if let Some(path) = &args.summary {
        fs::write(path, summary).with_context(|| format!("cannot write {}", path.display()))?;
    }
    println!("overall mean loss {:.4e} +- {:.4e}", all.mean(), all.sd());
    Ok(())
}

fn write_report<T: serde::Serialize>(path: &Option<PathBuf>, report: &T) -> Result<()> {
    if let Some(path) = path {
        let mut out = create(path)?;
        dataset::write_json_pretty(&mut out, report)?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<bool> {
    let passed = match args.suite {
        Suite::Conservativeness => {
            let r = verify_conservativeness(args.trials, args.n, args.seed)?;
            println!(
                "conservativeness: {} violations in {} trials (n = {})",
                r.violations, r.trials, r.n_per_trial
            );
            write_report(&args.out, &r)?;
            r.passed()
        }
        Suite::Monotonicity => {
            let r = verify_monotonicity(args.trials, args.n, args.seed)?;
            println!(
                "monotonicity: {} coordinates masked without intervention but kept with it, over {} trials (n = {})",
                r.violations,
                r.outcomes.len(),
                r.n_per_trial
            );
            for name in FixtureName::ALL {
                println!("  {name}: intervention strictly shrank the mask in {} trials", r.strict_improvements(name));
            }
            write_report(&args.out, &r)?;
            r.passed()
        }
        Suite::Prop1 => {
            let r = verify_fork(args.trials, args.n, args.seed)?;
            println!(
                "prop1: nuisance masked under intervention in {}/{} trials, kept without intervention in {}/{}; {} violations",
                r.masked_under_intervention,
                r.trials,
                r.kept_without_intervention,
                r.trials,
                r.violations()
            );
            write_report(&args.out, &r)?;
            r.passed()
        }
    };
    Ok(passed)
}

fn report(args: ReportArgs) -> Result<()> {
    let spec = env_spec(&args.env, 0.0)?;
    let cfg = ComparisonConfig {
        trajectories: args.n,
        seeds: args.seeds,
        rollouts: args.rollouts,
        base_seed: args.seed,
        mask: MaskConfig::new(args.horizon, args.gamma),
        train: args.policy.config(),
    };
    let c = compare_arms(&spec, &cfg)?;
    c.write_csv(create(&args.out)?)?;
    for arm in Arm::ALL {
        println!("{arm:>8}: mean closed-loop loss {:.4e}", c.mean_loss(arm));
    }
    let manual = c.mean_loss(Arm::Manual);
    println!(
        "masked/manual = {:.3}, vanilla/manual = {:.3}",
        c.mean_loss(Arm::Masked) / manual,
        c.mean_loss(Arm::Vanilla) / manual
    );
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen(a) => gen(a)?,
        Command::Mask(a) => mask(a)?,
        Command::Train(a) => train(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Report(a) => report(a)?,
        Command::Verify(a) => {
            if !verify(a)? {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
