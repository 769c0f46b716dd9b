use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use poseprior::gait::GaitConfig;
use poseprior::metrics::DistanceKind;
use poseprior::pipeline::{self, FixtureConfig, PipelineConfig};
use poseprior::pose::Representation;
use poseprior::trainer::{EpochRow, FakeTargets, ProjectionStep};
use poseprior::{Error, Result};

#[derive(Parser)]
#[command(name = "poseprior", version, about = "Train and apply a polar-coordinate pose prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert detector output to the canonical 17-keypoint layout.
    Convert(ConvertArgs),
    /// Normalize ground truth and write the real poses of every split.
    Prepare(Shared),
    /// Build the error bank and synthesize labeled fakes.
    Synth(Shared),
    /// Train the distance field.
    Train(TrainArgs),
    /// Correct test-split detections with a trained model.
    Correct(CorrectArgs),
    /// Score raw and corrected detections.
    Eval(Shared),
    /// Run every stage in order.
    Pipeline(PipelineArgs),
    /// Write the procedural gait fixture and its config.
    Fixture(FixtureArgs),
}

#[derive(Args, Clone)]
struct Shared {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Convert every detector in this config instead of a single file.
    #[arg(long, conflicts_with_all = ["input", "output"])]
    config: Option<PathBuf>,
    #[arg(long, requires = "output")]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Built-in format map name or a format map file.
    #[arg(long, default_value = "coco")]
    format: String,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    projection_iters: Option<usize>,
    /// Fixed freezing threshold instead of the validation percentile.
    #[arg(long)]
    projection_threshold: Option<f64>,
    #[arg(long)]
    projection_percentile: Option<f64>,
    /// `gradient` or `normalized`.
    #[arg(long, value_parser = parse_step)]
    projection_step: Option<ProjectionStep>,
    #[arg(long)]
    descent_only: Option<bool>,
    #[arg(long)]
    rebalance: Option<bool>,
    #[arg(long)]
    squared_loss: Option<bool>,
    #[arg(long)]
    batch_projection: Option<bool>,
    #[arg(long)]
    grad_loss: Option<bool>,
    #[arg(long)]
    w_real: Option<f64>,
    #[arg(long)]
    w_fake: Option<f64>,
    #[arg(long)]
    w_grad: Option<f64>,
    /// `projected`, `original` or `both`.
    #[arg(long, value_parser = parse_targets)]
    fake_targets: Option<FakeTargets>,
    /// `polar` or `angular`.
    #[arg(long, value_parser = parse_repr)]
    representation: Option<Representation>,
    /// `arc_radius`, `geodesic` or `angular`; used for labeling and
    /// relabeling.
    #[arg(long, value_parser = parse_distance)]
    distance: Option<DistanceKind>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    shared: Shared,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args, Default)]
struct CorrectFlags {
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    correction_lr: Option<f64>,
    /// Fixed stop threshold; disables calibration.
    #[arg(long)]
    stop_threshold: Option<f64>,
    #[arg(long)]
    trajectories: bool,
}

#[derive(Args)]
struct CorrectArgs {
    #[command(flatten)]
    shared: Shared,
    #[command(flatten)]
    flags: CorrectFlags,
    /// Representation the model was trained with.
    #[arg(long, value_parser = parse_repr)]
    representation: Option<Representation>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    shared: Shared,
    #[command(flatten)]
    flags: TrainFlags,
    #[command(flatten)]
    correct: CorrectFlags,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    sequences: usize,
    #[arg(long, default_value_t = 25)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn parse_step(s: &str) -> std::result::Result<ProjectionStep, String> {
    match s {
        "gradient" => Ok(ProjectionStep::Gradient),
        "normalized" => Ok(ProjectionStep::Normalized),
        _ => Err(format!("unknown projection step {s:?}")),
    }
}

fn parse_targets(s: &str) -> std::result::Result<FakeTargets, String> {
    match s {
        "projected" => Ok(FakeTargets::Projected),
        "original" => Ok(FakeTargets::Original),
        "both" => Ok(FakeTargets::Both),
        _ => Err(format!("unknown fake targets {s:?}")),
    }
}

fn parse_repr(s: &str) -> std::result::Result<Representation, String> {
    match s {
        "polar" => Ok(Representation::Polar),
        "angular" => Ok(Representation::Angular),
        _ => Err(format!("unknown representation {s:?}")),
    }
}

fn parse_distance(s: &str) -> std::result::Result<DistanceKind, String> {
    match s {
        "arc_radius" => Ok(DistanceKind::ArcRadius),
        "geodesic" => Ok(DistanceKind::Geodesic),
        "angular" => Ok(DistanceKind::Angular),
        _ => Err(format!("unknown distance {s:?}")),
    }
}

fn set_workers(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn load(shared: &Shared) -> Result<PipelineConfig> {
    set_workers(shared.workers)?;
    let mut cfg = PipelineConfig::load(&shared.config)?;
    if let Some(seed) = shared.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &shared.out {
        cfg.paths.out_dir = out.clone();
    }
    Ok(cfg)
}

fn apply_train(cfg: &mut PipelineConfig, f: &TrainFlags) {
    let t = &mut cfg.train;
    macro_rules! set {
        ($($flag:ident => $field:expr),* $(,)?) => {
            $(if let Some(v) = f.$flag { $field = v; })*
        };
    }
    set! {
        lr => t.learning_rate,
        beta1 => t.beta1,
        beta2 => t.beta2,
        epsilon => t.epsilon,
        batch_size => t.batch_size,
        projection_iters => t.projection_iters,
        projection_percentile => t.projection_percentile,
        projection_step => t.projection_step,
        descent_only => t.projection_descent_only,
        rebalance => t.rebalance,
        squared_loss => t.squared_loss,
        batch_projection => t.enable_batch_projection,
        grad_loss => t.enable_grad_loss,
        w_real => t.loss_weights.real,
        w_fake => t.loss_weights.fake,
        w_grad => t.loss_weights.grad,
        fake_targets => t.fake_targets,
        representation => t.representation,
    }
    if f.epochs.is_some() {
        t.epochs = f.epochs;
    }
    if f.projection_threshold.is_some() {
        t.projection_threshold = f.projection_threshold;
    }
    if let Some(d) = f.distance {
        t.distance = d;
        cfg.synthesis.distance = d;
    }
    if let Some(k) = f.k {
        t.k = k;
        cfg.synthesis.k = k;
    }
}

fn apply_correct(cfg: &mut PipelineConfig, f: &CorrectFlags) {
    let c = &mut cfg.correction;
    if let Some(n) = f.max_iters {
        c.config.max_iters = n;
    }
    if let Some(lr) = f.correction_lr {
        c.config.learning_rate = lr;
    }
    if let Some(tau) = f.stop_threshold {
        c.config.stop_threshold = tau;
        c.calibrate = false;
    }
    if f.trajectories {
        c.config.record_trajectory = true;
    }
}

fn print_epoch(r: &EpochRow) {
    eprintln!(
        "epoch {:>3}  loss {:.5}  val {:.5}  real f {:.4}  fake f {:.4}",
        r.epoch, r.l_total, r.val_loss, r.val_real_mean_f, r.val_fake_mean_f
    );
}

fn print_report(report: &pipeline::EvalReport) {
    print!("{}", report.to_csv());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert(a) => {
            set_workers(a.workers)?;
            match (&a.config, &a.input, &a.output) {
                (Some(path), _, _) => {
                    let mut cfg = PipelineConfig::load(path)?;
                    if let Some(out) = a.out {
                        cfg.paths.out_dir = out;
                    }
                    cfg.validate()?;
                    for (tag, n) in pipeline::convert_all(&cfg)? {
                        println!("{tag}: {n} records");
                    }
                }
                (None, Some(input), Some(output)) => {
                    let map = pipeline::format_map(&a.format)?
                        .ok_or_else(|| Error::Config("canonical input needs no conversion".into()))?;
                    let output = match &a.out {
                        Some(dir) => dir.join(output),
                        None => output.clone(),
                    };
                    let n = pipeline::cmd_convert(input, &output, &map)?;
                    println!("{n} records");
                }
                _ => return Err(Error::Config("give --config or --input and --output".into())),
            }
        }
        Command::Prepare(s) => {
            let s = pipeline::cmd_prepare(&load(&s)?)?;
            println!(
                "train_full {}  train_half {}  train_quarter {}  val {}  test {}  training reals {}",
                s.train_full, s.train_half, s.train_quarter, s.val, s.test, s.train_reals
            );
        }
        Command::Synth(s) => {
            let s = pipeline::cmd_synth(&load(&s)?)?;
            println!(
                "error bank {}  train {} real / {} fake  val {} real / {} fake",
                s.error_bank, s.train_reals, s.train_fakes, s.val_reals, s.val_fakes
            );
        }
        Command::Train(a) => {
            let mut cfg = load(&a.shared)?;
            apply_train(&mut cfg, &a.flags);
            let s = pipeline::cmd_train(&cfg, print_epoch)?;
            println!("{}  epochs {}  model {}", s.label, s.epochs, s.model_id);
        }
        Command::Correct(a) => {
            let mut cfg = load(&a.shared)?;
            apply_correct(&mut cfg, &a.flags);
            if let Some(r) = a.representation {
                cfg.train.representation = r;
            }
            for s in pipeline::cmd_correct(&cfg)? {
                println!(
                    "{}: {} poses  stop threshold {:.6}  mean iterations {:.2}",
                    s.detector, s.poses, s.stop_threshold, s.mean_iterations
                );
            }
        }
        Command::Eval(s) => print_report(&pipeline::cmd_eval(&load(&s)?)?),
        Command::Pipeline(a) => {
            let mut cfg = load(&a.shared)?;
            apply_train(&mut cfg, &a.flags);
            apply_correct(&mut cfg, &a.correct);
            print_report(&pipeline::cmd_pipeline(&cfg, print_epoch)?);
        }
        Command::Fixture(a) => {
            let fx = FixtureConfig {
                gait: GaitConfig {
                    sequences: a.sequences,
                    frames: a.frames,
                    seed: a.seed,
                },
                ..FixtureConfig::default()
            };
            let path = pipeline::write_gait_fixture(&a.out, &fx)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
