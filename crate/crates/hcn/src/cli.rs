//! Command-line entry point: batch workflows over the library modules.
//!
//! Every subcommand is deterministic given its flags; directories of
//! artifacts carry a `manifest.json` (command, config hash, seed,
//! versions — never timestamps) so reruns are byte-comparable.
//!
//! Exit codes: 0 success, 1 invalid input (bad flags, malformed or
//! missing files, config validation), 2 runtime failure (divergence,
//! numeric errors, write failures).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{
    default_ablation_rows, evaluate, perturb_questions, run_ablation, shortcut_degradation,
    MetricsReport, PerturbationLexicon,
};
use crate::labelgen::{
    generate_labels, label_stats, write_labels, AnchorSource, LabelGenConfig, LabelRecord,
};
use crate::model::{count_flops, ModelConfig, ModelState};
use crate::scene::{load_questions, load_scene_dir, save_questions};
use crate::synth::{make_synthetic_dataset, Featurizer, SyntheticDataset, SyntheticSpec};
use crate::tensor::{
    gradcheck, load_checkpoint, save_checkpoint, Tape, DEFAULT_STEP, DEFAULT_TOLERANCE,
};
use crate::train::{
    config_hash, fit, total_loss, write_log, SupervisionFlags, TrainConfig, TrainData,
};

#[derive(Parser)]
#[command(
    name = "hcn",
    version,
    about = "Nested-mask supervision for grounded question answering over 3D scenes",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive nested object-mask labels for scene/question pairs.
    Labelgen(LabelgenArgs),
    /// Generate a synthetic scene/question corpus.
    Synth(SynthArgs),
    /// Train a model on a generated corpus.
    Train(TrainArgs),
    /// Evaluate a checkpoint: EM@1/EM@10, BLEU, ROUGE-L.
    Eval(EvalArgs),
    /// Rewrite questions through seeded synonym substitution.
    Perturb(PerturbArgs),
    /// Train the supervision-ablation grid and tabulate metrics.
    Ablate(AblateArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Dense-layer FLOPs accounting for a model configuration.
    Flops(FlopsArgs),
}

#[derive(Args)]
struct LabelgenArgs {
    /// Directory of scene JSON files.
    #[arg(long)]
    scenes: PathBuf,
    /// Questions JSONL file.
    #[arg(long)]
    questions: PathBuf,
    /// Grid resolution S for the S×S coarse stage.
    #[arg(long, default_value_t = 5)]
    grid_size: usize,
    /// Where anchors come from.
    #[arg(long, value_enum, default_value_t = AnchorMode::Auto)]
    anchor_source: AnchorMode,
    /// Output labels JSONL file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnchorMode {
    Annotation,
    LabelMatch,
    Union,
    Auto,
}

impl From<AnchorMode> for AnchorSource {
    fn from(m: AnchorMode) -> Self {
        match m {
            AnchorMode::Annotation => AnchorSource::Annotation,
            AnchorMode::LabelMatch => AnchorSource::LabelMatch,
            AnchorMode::Union => AnchorSource::Union,
            AnchorMode::Auto => AnchorSource::Auto,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus spec JSON; omitted = built-in defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Train config JSON; omitted = defaults sized to the dataset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory from `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory: checkpoint.json, log.jsonl, config.json, manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitChoice {
    Train,
    Val,
    All,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint JSON from `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory from `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Which samples to score.
    #[arg(long, value_enum, default_value_t = SplitChoice::Val)]
    split: SplitChoice,
    /// Optional synonym lexicon: also report perturbed EM@1 degradation.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Seed for perturbation draws (only with --lexicon).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional file for the report JSON (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PerturbArgs {
    /// Synonym lexicon JSON: {"token": ["syn1", ...]}.
    #[arg(long)]
    lexicon: PathBuf,
    /// Questions JSONL to rewrite.
    #[arg(long)]
    questions: PathBuf,
    /// Output questions JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Seed for the substitution draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    /// Train config JSON; omitted = defaults sized to the dataset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory from `synth`.
    #[arg(long)]
    data: PathBuf,
    /// JSON array of supervision-flag rows; omitted = the published
    /// 5-row grid.
    #[arg(long)]
    rows: Option<PathBuf>,
    /// Output directory: ablation.csv, ablation.json, manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Max acceptable relative error.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
}

#[derive(Args)]
struct FlopsArgs {
    /// Model config JSON (bare ModelConfig or a train config with a
    /// "model" field); omitted = defaults sized to the default corpus.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Objects per scene for the count.
    #[arg(long, default_value_t = 8)]
    n_objects: usize,
    /// Text tokens per question for the count.
    #[arg(long, default_value_t = 9)]
    t_text: usize,
    /// Backbone budget the mask-stage total is compared against.
    #[arg(long)]
    backbone_flops: Option<f64>,
}

/// Parses argv and runs; the returned code is the process exit status.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Labelgen(args) => cmd_labelgen(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Perturb(args) => cmd_perturb(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Flops(args) => cmd_flops(args),
    }
}

/// User-supplied inputs that don't exist are invalid invocations (exit
/// 1), not runtime failures.
fn require_exists(path: &Path, flag: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::validation(
            "cli",
            flag,
            format!("path does not exist: {}", path.display()),
        ));
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let body =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&body).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: None,
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    body.push('\n');
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    crate_version: &'a str,
    checkpoint_format: u32,
    config_hash: String,
    seed: u64,
}

fn write_manifest(dir: &Path, command: &str, hash: String, seed: u64) -> Result<()> {
    let manifest = RunManifest {
        command,
        crate_version: env!("CARGO_PKG_VERSION"),
        checkpoint_format: crate::tensor::CHECKPOINT_VERSION,
        config_hash: hash,
        seed,
    };
    write_json(&manifest, &dir.join("manifest.json"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn cmd_labelgen(args: LabelgenArgs) -> Result<()> {
    require_exists(&args.scenes, "--scenes")?;
    require_exists(&args.questions, "--questions")?;
    let cfg = LabelGenConfig {
        grid_size: args.grid_size,
        anchor_source: args.anchor_source.into(),
    };
    cfg.validate()?;
    let scenes = load_scene_dir(&args.scenes)?;
    let questions = load_questions(&args.questions, Some(&scenes))?;
    let mut records = Vec::with_capacity(questions.len());
    for q in &questions {
        let scene = &scenes[&q.scene_id];
        let masks = generate_labels(scene, q, &cfg)?;
        records.push(LabelRecord::from_masks(
            scene,
            &q.question_id,
            &masks,
            cfg.grid_size,
        ));
    }
    write_labels(&records, &args.out)?;
    let stats = label_stats(&records);
    eprintln!(
        "{}",
        serde_json::to_string(&stats).expect("stats serialization cannot fail")
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &args.spec {
        Some(path) => {
            require_exists(path, "--spec")?;
            read_json(path)?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let ds = make_synthetic_dataset(&spec)?;
    ensure_dir(&args.out)?;
    ds.write_to_dir(&args.out)?;
    write_manifest(&args.out, "synth", config_hash(&spec)?, spec.seed)?;
    eprintln!(
        "wrote {} scenes and {} questions to {}",
        ds.scenes.len(),
        ds.questions.len(),
        args.out.display()
    );
    Ok(())
}

/// A full-length training configuration sized to the dataset, used when
/// no config file is given.
fn default_train_config(ds: &SyntheticDataset) -> Result<TrainConfig> {
    let featurizer = Featurizer::new(&ds.spec)?;
    Ok(TrainConfig {
        model: featurizer.model_config()?,
        epochs: 200,
        batch_size: 16,
        optimizer: crate::tensor::Optimizer::Adam,
        learning_rate: 3e-3,
        seed: 0,
        loss_weights: Default::default(),
        supervision: SupervisionFlags::full(),
        labels: LabelGenConfig::default(),
        target_val_em1: Some(0.999),
    })
}

fn load_train_config(
    path: &Option<PathBuf>,
    ds: &SyntheticDataset,
    seed: Option<u64>,
) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            require_exists(p, "--config")?;
            read_json(p)?
        }
        None => default_train_config(ds)?,
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    require_exists(&args.data, "--data")?;
    let ds = SyntheticDataset::load_from_dir(&args.data)?;
    let cfg = load_train_config(&args.config, &ds, args.seed)?;
    let data = TrainData::from_dataset(&ds, &cfg.labels)?;
    let result = fit(&cfg, &data)?;

    ensure_dir(&args.out)?;
    save_checkpoint(args.out.join("checkpoint.json"), &result.best)?;
    write_log(&result.log, args.out.join("log.jsonl"))?;
    write_json(&cfg, &args.out.join("config.json"))?;
    write_manifest(&args.out, "train", config_hash(&cfg)?, cfg.seed)?;

    println!(
        "{}",
        serde_json::json!({
            "epochs_run": result.log.len(),
            "best_epoch": result.best_epoch,
            "best_val_em1": result.best_val_em1,
        })
    );
    Ok(())
}

/// The model shape for a checkpoint: the sibling `config.json` written
/// by `train` when present, else defaults derived from the dataset.
fn model_config_for(ckpt_path: &Path, ds: &SyntheticDataset) -> Result<ModelConfig> {
    let sibling = ckpt_path.parent().map(|d| d.join("config.json"));
    if let Some(p) = sibling.filter(|p| p.exists()) {
        let cfg: TrainConfig = read_json(&p)?;
        return Ok(cfg.model);
    }
    Featurizer::new(&ds.spec)?.model_config()
}

#[derive(Serialize)]
struct EvalOutput {
    metrics: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    shortcut: Option<crate::eval::ShortcutReport>,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    require_exists(&args.ckpt, "--ckpt")?;
    require_exists(&args.data, "--data")?;
    let ds = SyntheticDataset::load_from_dir(&args.data)?;
    let ckpt = load_checkpoint(&args.ckpt)?;
    let model_cfg = model_config_for(&args.ckpt, &ds)?;
    let state = ModelState::from_checkpoint(model_cfg, &ckpt)?;

    let labels = LabelGenConfig::default();
    let data = TrainData::from_dataset(&ds, &labels)?;
    let (train_idx, val_idx) = data.split();
    let indices: Vec<usize> = match args.split {
        SplitChoice::Train => train_idx,
        SplitChoice::Val => val_idx,
        SplitChoice::All => (0..data.samples.len()).collect(),
    };
    let metrics = evaluate(&state, &data, &indices)?;

    let shortcut = match &args.lexicon {
        Some(path) => {
            require_exists(path, "--lexicon")?;
            let lexicon = PerturbationLexicon::load(path, args.seed)?;
            Some(shortcut_degradation(&state, &ds, &labels, &lexicon)?)
        }
        None => None,
    };

    let output = EvalOutput { metrics, shortcut };
    let body = serde_json::to_string_pretty(&output)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    println!("{body}");
    if let Some(out) = &args.out {
        std::fs::write(out, format!("{body}\n"))
            .map_err(|e| Error::io(out.display().to_string(), e))?;
    }
    Ok(())
}

fn cmd_perturb(args: PerturbArgs) -> Result<()> {
    require_exists(&args.lexicon, "--lexicon")?;
    require_exists(&args.questions, "--questions")?;
    let lexicon = PerturbationLexicon::load(&args.lexicon, args.seed)?;
    let questions = load_questions(&args.questions, None)?;
    let perturbed = perturb_questions(&questions, &lexicon)?;
    save_questions(&perturbed, &args.out)?;
    eprintln!("rewrote {} questions", perturbed.len());
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    require_exists(&args.data, "--data")?;
    let ds = SyntheticDataset::load_from_dir(&args.data)?;
    let cfg = load_train_config(&args.config, &ds, args.seed)?;
    let rows: Vec<SupervisionFlags> = match &args.rows {
        Some(path) => {
            require_exists(path, "--rows")?;
            read_json(path)?
        }
        None => default_ablation_rows(),
    };
    let data = TrainData::from_dataset(&ds, &cfg.labels)?;
    let table = run_ablation(&cfg, &data, &rows)?;

    ensure_dir(&args.out)?;
    write_json(&table, &args.out.join("ablation.json"))?;
    std::fs::write(args.out.join("ablation.csv"), table.to_csv())
        .map_err(|e| Error::io(args.out.join("ablation.csv").display().to_string(), e))?;
    write_manifest(&args.out, "ablate", config_hash(&cfg)?, cfg.seed)?;
    print!("{}", table.to_csv());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let report = full_model_gradcheck(args.seed, args.step, args.tolerance)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serialization cannot fail")
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "gradient check failed: max relative error {} exceeds {}",
            report.max_rel_err, report.tolerance
        )))
    }
}

/// Checks analytic gradients of the complete objective (extraction →
/// narrowing phases → reweighting → answer head → combined loss) on one
/// six-object sample against central differences.
pub fn full_model_gradcheck(
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<crate::tensor::GradCheckReport> {
    let spec = SyntheticSpec {
        n_scenes: 2,
        objects_min: 6,
        objects_max: 6,
        d_text: 24,
        seed,
        ..SyntheticSpec::default()
    };
    let ds = make_synthetic_dataset(&spec)?;
    let featurizer = Featurizer::new(&spec)?;
    let mut model_cfg = featurizer.model_config()?;
    model_cfg.d_base = 10;
    model_cfg.d_phase = 10;
    model_cfg.attn_dim = 6;
    model_cfg.answer_hidden = 12;
    let labels_cfg = LabelGenConfig::default();
    let data = TrainData::from_dataset(&ds, &labels_cfg)?;
    let sample = &data.samples[0];
    let weights = crate::train::LossWeights::default();
    let flags = SupervisionFlags::full();

    let state = ModelState::init(model_cfg.clone(), seed)?;

    // analytic gradients from one taped pass
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape);
    let fp = bound.forward(&mut tape, &sample.tokens, &sample.text)?;
    let hsm = crate::train::hsm_loss(&mut tape, &fp.hsm, &sample.masks, &weights, &flags)?;
    let ans = tape.cross_entropy(fp.logits, sample.answer_index)?;
    let loss = total_loss(&mut tape, hsm.total, ans, &weights)?;
    let analytic = bound.gradients(&tape.backward(loss)?);

    // numeric gradients re-run the whole forward per probe
    let mut params = state.params.clone();
    let mut loss_fn = |p: &BTreeMap<String, crate::tensor::Tensor>| -> Result<f64> {
        let probe = ModelState {
            config: model_cfg.clone(),
            params: p.clone(),
        };
        let mut tape = Tape::new();
        let bound = probe.bind(&mut tape);
        let fp = bound.forward(&mut tape, &sample.tokens, &sample.text)?;
        let hsm = crate::train::hsm_loss(&mut tape, &fp.hsm, &sample.masks, &weights, &flags)?;
        let ans = tape.cross_entropy(fp.logits, sample.answer_index)?;
        let loss = total_loss(&mut tape, hsm.total, ans, &weights)?;
        Ok(tape.value(loss).item())
    };
    gradcheck(&mut loss_fn, &mut params, &analytic, step, tolerance)
}

fn cmd_flops(args: FlopsArgs) -> Result<()> {
    let config: ModelConfig = match &args.config {
        Some(path) => {
            require_exists(path, "--config")?;
            let value: serde_json::Value = read_json(path)?;
            let model = value.get("model").cloned().unwrap_or(value);
            serde_json::from_value(model).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: None,
                message: e.to_string(),
            })?
        }
        None => Featurizer::new(&SyntheticSpec::default())?.model_config()?,
    };
    config.validate()?;
    let report = count_flops(&config, args.n_objects, args.t_text, args.backbone_flops)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serialization cannot fail")
    );
    Ok(())
}
