//! The `reenact` binary: align, train, reenact, evaluate and synth
//! subcommands.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for runtime failures.
//! Every run prints the digest of its resolved settings so artifacts can be
//! traced back to the exact configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::data::{
    build_synthetic_manifest, load_manifest, scenario_from_fields, DatasetManifest, PairSampler,
    ScenarioSpec, SynthesisConfig,
};
use crate::geometry::{normalize_face, AnchorTemplate, LandmarkSet};
use crate::image_io;
use crate::losses::create_extractor;
use crate::metrics::{evaluate_pairs, EvalPair, EvalReport, TargetGroundTruth};
use crate::model::{Generator, GeneratorConfig};
use crate::training::{load_checkpoint, text_digest, StepLog, Trainer, TrainingConfig};

#[derive(Parser)]
#[command(
    name = "reenact",
    version,
    about = "One-shot face reenactment: normalize faces, train the generator, reenact pairs, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a face image to the canonical anchor template.
    Align(AlignArgs),
    /// Train the generator/discriminator pair on a manifest.
    Train(TrainArgs),
    /// Generate the target's face wearing the source's expression.
    Reenact(ReenactArgs),
    /// Compute NMSE/CSIM/FID over sampled pairs and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Render a synthetic dataset with exact landmarks.
    Synth(SynthArgs),
}

#[derive(Args)]
struct AlignArgs {
    /// Input image (PNG).
    #[arg(long)]
    input: PathBuf,
    /// Landmark file for the input image.
    #[arg(long)]
    landmarks: PathBuf,
    /// Output path for the aligned crop.
    #[arg(long)]
    out: PathBuf,
    /// Crop size N.
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// Output path for the transformed landmarks; defaults to
    /// `<out>.landmarks.json`.
    #[arg(long)]
    out_landmarks: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest (JSON Lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    out: PathBuf,
    /// Config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Resume from a checkpoint directory (its stored config wins).
    #[arg(long, conflicts_with = "config")]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    decay_start: Option<usize>,
    /// Crop size N (must match the manifest's images).
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    lateral_channels: Option<usize>,
    #[arg(long)]
    share_encoders: Option<bool>,
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    /// Scenario kind: many-to-many, one-to-one, one-to-another.
    #[arg(long)]
    scenario: Option<String>,
    /// Fixed identity for one-to-one.
    #[arg(long)]
    identity: Option<String>,
    /// Fixed source identity for one-to-another.
    #[arg(long)]
    source: Option<String>,
    /// Fixed target identity for one-to-another.
    #[arg(long)]
    target: Option<String>,
}

#[derive(Args)]
struct ReenactArgs {
    /// Source image: the expression donor.
    #[arg(long)]
    source: PathBuf,
    /// Landmarks of the source image (required with --align).
    #[arg(long)]
    source_landmarks: Option<PathBuf>,
    /// Target image: the identity and background donor.
    #[arg(long)]
    target: PathBuf,
    /// Landmarks of the target image (required with --align).
    #[arg(long)]
    target_landmarks: Option<PathBuf>,
    /// Checkpoint directory to load the generator from.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output path for the generated image.
    #[arg(long)]
    out: PathBuf,
    /// Also write a target|output|source strip here.
    #[arg(long)]
    triptych: Option<PathBuf>,
    /// Normalize both inputs before generating.
    #[arg(long)]
    align: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint to evaluate; without it a fresh generator with a zeroed
    /// output projection (the identity-on-target baseline) is used.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long, default_value = "eval_report.json")]
    report: PathBuf,
    #[arg(long, default_value = "many-to-many")]
    scenario: String,
    #[arg(long)]
    identity: Option<String>,
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    target: Option<String>,
    /// Number of pairs to sample.
    #[arg(long, default_value_t = 16)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pair every entry with itself instead of sampling the scenario.
    #[arg(long, conflicts_with = "scenario")]
    self_pairs: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    identities: usize,
    #[arg(long)]
    expressions: usize,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Random pose amplitude (0 renders every face canonically).
    #[arg(long, default_value_t = 0.0)]
    pose_jitter: f64,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Align(args) => run_align(args),
        Command::Train(args) => run_train(args),
        Command::Reenact(args) => run_reenact(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Synth(args) => run_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn print_digest(settings: &str) {
    println!("config digest: {}", text_digest(settings));
}

fn run_align(args: AlignArgs) -> Result<(), CliError> {
    if args.size == 0 {
        return Err(CliError::Usage("--size must be positive".into()));
    }
    print_digest(&format!(
        "align.input = {}\nalign.landmarks = {}\nalign.size = {}\n",
        args.input.display(),
        args.landmarks.display(),
        args.size
    ));
    let image = image_io::load_png(&args.input)?;
    let landmarks = LandmarkSet::load(&args.landmarks)?;
    let template = AnchorTemplate::standard(args.size);
    let normalized = normalize_face(&image, &landmarks, &template)?;
    image_io::save_png(&normalized.image, &args.out)?;
    let lm_path = args
        .out_landmarks
        .unwrap_or_else(|| args.out.with_extension("landmarks.json"));
    normalized.landmarks.save(&lm_path)?;
    println!("anchor residual: {:.6} px", normalized.anchor_residual);
    println!("wrote {} and {}", args.out.display(), lm_path.display());
    Ok(())
}

fn apply_train_overrides(cfg: &mut TrainingConfig, args: &TrainArgs) -> Result<(), CliError> {
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.total_epochs = v;
        if cfg.decay_start_epoch >= v && v > 0 {
            // Keep the paper's 40/100 proportion when the run is shortened.
            cfg.decay_start_epoch = (v * 2) / 5;
        }
    }
    if let Some(v) = args.decay_start {
        cfg.decay_start_epoch = v;
    }
    if let Some(v) = args.size {
        cfg.generator.crop_size = v;
    }
    if let Some(v) = args.lateral_channels {
        cfg.generator.lateral_channels = v;
    }
    if let Some(v) = args.share_encoders {
        cfg.generator.share_encoders = v;
    }
    if let Some(v) = args.checkpoint_interval {
        cfg.checkpoint_interval = v;
    }
    if let Some(kind) = &args.scenario {
        cfg.scenario = scenario_from_fields(
            kind,
            args.identity.as_deref(),
            args.source.as_deref(),
            args.target.as_deref(),
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.manifest)?;
    let mut trainer = if let Some(resume) = &args.resume {
        Trainer::resume(&manifest, resume)?
    } else {
        let mut cfg = match &args.config {
            Some(path) => TrainingConfig::load(path)?,
            None => TrainingConfig::default(),
        };
        apply_train_overrides(&mut cfg, &args)?;
        cfg.validate()?;
        Trainer::new(&manifest, cfg)?
    };
    print_digest(&trainer.config().serialize());
    println!(
        "training {} epochs x {} pairs (scenario {})",
        trainer.config().total_epochs,
        manifest.len(),
        trainer.config().scenario.kind_name()
    );
    let logs = trainer.run(Some(&args.out))?;
    let mut csv = String::from(StepLog::CSV_HEADER);
    csv.push('\n');
    for log in &logs {
        csv.push_str(&log.csv_line());
        csv.push('\n');
    }
    let log_path = args.out.join("loss_log.csv");
    std::fs::write(&log_path, csv).map_err(|e| CliError::Runtime(e.to_string()))?;
    let state = trainer.state();
    println!(
        "done: {} steps, running means: content {:.6} adv {:.6} identity {:.6} D {:.6}",
        state.step,
        state.running.content,
        state.running.adversarial,
        state.running.identity,
        state.running.discriminator
    );
    println!("loss log: {}", log_path.display());
    Ok(())
}

fn load_generator(checkpoint: &Path) -> Result<(TrainingConfig, Generator), CliError> {
    let (cfg, state) = load_checkpoint(checkpoint)?;
    Ok((cfg, state.generator))
}

fn run_reenact(args: ReenactArgs) -> Result<(), CliError> {
    let (cfg, generator) = load_generator(&args.checkpoint)?;
    print_digest(&cfg.serialize());
    let n = cfg.generator.crop_size;
    let template = AnchorTemplate::standard(n);

    let mut source = image_io::load_png(&args.source)?;
    let mut target = image_io::load_png(&args.target)?;
    if args.align {
        let src_lms = args
            .source_landmarks
            .as_ref()
            .ok_or_else(|| CliError::Usage("--align needs --source-landmarks".into()))?;
        let tgt_lms = args
            .target_landmarks
            .as_ref()
            .ok_or_else(|| CliError::Usage("--align needs --target-landmarks".into()))?;
        let sl = LandmarkSet::load(src_lms)?;
        let tl = LandmarkSet::load(tgt_lms)?;
        source = normalize_face(&source, &sl, &template)?.image;
        target = normalize_face(&target, &tl, &template)?.image;
    }
    let generated = generator.generate(&source, &target)?;
    image_io::save_png(&generated, &args.out)?;
    println!("wrote {}", args.out.display());
    if let Some(path) = &args.triptych {
        let strip = image_io::hstack(&[&target, &generated, &source])?;
        image_io::save_png(&strip, path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn baseline_generator(n: usize) -> Result<Generator, CliError> {
    let cfg = GeneratorConfig::scaled(n, 4);
    let mut g = Generator::new(cfg, 0)?;
    g.zero_final_projection();
    Ok(g)
}

fn build_eval_pairs(
    manifest: &DatasetManifest,
    indices: &[(usize, usize)],
) -> Result<Vec<EvalPair>, CliError> {
    let mut pairs = Vec::with_capacity(indices.len());
    for &(si, ti) in indices {
        let (source_image, source_landmarks) = manifest.load_entry(si)?;
        let (target_image, target_landmarks) = manifest.load_entry(ti)?;
        let s = &manifest.entries()[si];
        let t = &manifest.entries()[ti];
        pairs.push(EvalPair {
            id: format!("{}:{} -> {}:{}", s.identity_id, s.expression_id, t.identity_id, t.expression_id),
            source_image,
            source_landmarks,
            target_image,
            target_landmarks,
        });
    }
    Ok(pairs)
}

fn print_report_table(report: &EvalReport) {
    let agg = &report.aggregate;
    let fid = agg.fid.map_or("      -".to_string(), |v| format!("{v:7.3}"));
    let nmse = agg
        .mean_nmse_percent
        .map_or("      -".to_string(), |v| format!("{v:6.2}%"));
    let csim = agg.mean_csim.map_or("     -".to_string(), |v| format!("{v:6.3}"));
    let mut table = String::new();
    let _ = writeln!(table, "{:>16}  {:>7}  {:>7}  {:>6}", "", "FID ↓", "NMSE ↓", "CSIM ↑");
    let _ = writeln!(table, "{:>16}  {fid}  {nmse}  {csim}", report.scenario);
    print!("{table}");
}

fn run_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.manifest)?;
    if args.pairs == 0 {
        return Err(CliError::Usage("--pairs must be positive".into()));
    }
    let (cfg, generator, scenario_label) = match &args.checkpoint {
        Some(path) => {
            let (cfg, generator) = load_generator(path)?;
            (Some(cfg), generator, args.scenario.clone())
        }
        None => {
            let (first, _) = manifest.load_entry(0)?;
            let n = first.height();
            (None, baseline_generator(n)?, args.scenario.clone())
        }
    };
    let identity_desc = cfg
        .as_ref()
        .map(|c| c.identity_extractor.clone())
        .unwrap_or_else(|| "default-identity".to_string());
    let embedder = create_extractor(&identity_desc)?;
    let features = create_extractor(&identity_desc)?;

    let indices: Vec<(usize, usize)> = if args.self_pairs {
        (0..manifest.len().min(args.pairs)).map(|i| (i, i)).collect()
    } else {
        let scenario = scenario_from_fields(
            &args.scenario,
            args.identity.as_deref(),
            args.source.as_deref(),
            args.target.as_deref(),
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
        let mut sampler =
            PairSampler::new(&manifest, &ScenarioSpec { scenario, seed: args.seed })?;
        (0..args.pairs).map(|_| sampler.next_indices()).collect()
    };

    let settings = format!(
        "evaluate.manifest = {}\nevaluate.scenario = {}\nevaluate.pairs = {}\nevaluate.seed = {}\nevaluate.self_pairs = {}\nevaluate.extractor = {}\nevaluate.checkpoint_digest = {}\n",
        args.manifest.display(),
        scenario_label,
        args.pairs,
        args.seed,
        args.self_pairs,
        identity_desc,
        cfg.as_ref().map_or("baseline".to_string(), |c| c.digest()),
    );
    print_digest(&settings);

    let pairs = build_eval_pairs(&manifest, &indices)?;
    let label = if args.self_pairs { "self-pairs".to_string() } else { scenario_label };
    let report = evaluate_pairs(
        &pairs,
        &generator,
        &TargetGroundTruth,
        embedder.as_ref(),
        features.as_ref(),
        &label,
    )?;
    std::fs::write(&args.report, report.to_json())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    print_report_table(&report);
    println!("report: {}", args.report.display());
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<(), CliError> {
    if args.identities == 0 || args.expressions == 0 {
        return Err(CliError::Usage("--identities and --expressions must be positive".into()));
    }
    let cfg = SynthesisConfig {
        identities: args.identities,
        expressions: args.expressions,
        size: args.size,
        seed: args.seed,
        pose_jitter: args.pose_jitter,
    };
    print_digest(&format!(
        "synth.identities = {}\nsynth.expressions = {}\nsynth.size = {}\nsynth.seed = {}\nsynth.pose_jitter = {}\n",
        cfg.identities, cfg.expressions, cfg.size, cfg.seed, cfg.pose_jitter
    ));
    let manifest = build_synthetic_manifest(&cfg, &args.out)?;
    println!(
        "wrote {} entries ({} identities x {} expressions) under {}",
        manifest.len(),
        args.identities,
        args.expressions,
        args.out.display()
    );
    Ok(())
}

