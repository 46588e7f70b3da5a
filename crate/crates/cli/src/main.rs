//! `mixdeg` command-line front end.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixdeg::dataset::{build_dataset, load_samples, DatasetConfig, Split, MANIFEST_FILE};
use mixdeg::distortions::DistortionSpec;
use mixdeg::embedding::{
    classifier_examples, to_auto_prompt, train_classifier_on, train_encoder, write_log_csv, ClassifierConfig,
    ClassifierHead, Encoder, TrainConfig, WeightingScheme,
};
use mixdeg::eval::{
    automated_fidelity, classifier_f1, controllability, n_sweep, paired_t_test, single_distortion_items, tau_sweep,
    weighting_ablation, write_report, HarnessConfig, DEFAULT_TAUS,
};
use mixdeg::imaging::io::{read_depth, read_image, write_image};
use mixdeg::imaging::{DepthMap, Image};
use mixdeg::prompts::RestorationRequest;
use mixdeg::restoration::{auto_restore, restore_present, PlanMode, RestorationPlan};
use serde::Serialize;
use sha2::{Digest, Sha256};

const THREADS_VAR: &str = "MIXDEG_THREADS";

#[derive(Parser)]
#[command(name = "mixdeg", version, about = "Compound degradation synthesis, embeddings and prompt-driven restoration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a degraded dataset and its manifest.
    Gen(GenArgs),
    /// Train the contrastive encoder on a manifest's train split.
    TrainEncoder(TrainEncoderArgs),
    /// Train the multi-label classifier on frozen embeddings.
    TrainClassifier(TrainClassifierArgs),
    /// Predict the distortions present in an image.
    Classify(ClassifyArgs),
    /// Restore an image from a prompt or from classifier predictions.
    Restore(RestoreArgs),
    /// Interactive stepwise restoration: one prompt per line.
    Session(SessionArgs),
    /// Classifier F1, automated fidelity and controllability on a split.
    Eval(EvalArgs),
    /// Latent diagnostics over a sweep of temperatures.
    Diag(DiagArgs),
    /// Weighting-scheme ablation and maximum-distortion-count sweep.
    Ablate(AblateArgs),
    /// Paired t-test on two aligned result columns.
    Ttest(TtestArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Dataset config (JSON); the 8-category toy preset when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainEncoderArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scheme: Option<WeightingScheme>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct TrainClassifierArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long, default_value_t = mixdeg::embedding::DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct RestoreArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    prompt: Option<String>,
    /// Restore whatever the classifier detects.
    #[arg(long)]
    auto: bool,
    /// Follow the prompt's mention order instead of the canonical order.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Known forward specs (JSON list) for oracle inversion.
    #[arg(long)]
    specs: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SessionArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Directory for the numbered outputs; next to the input when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    specs: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = mixdeg::embedding::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 200)]
    items: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HarnessArgs {
    /// Harness config (JSON); toy defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scheme: Option<WeightingScheme>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct DiagArgs {
    #[command(flatten)]
    harness: HarnessArgs,
    /// Comma-separated temperatures.
    #[arg(long, value_delimiter = ',')]
    tau: Vec<f64>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Study {
    Weighting,
    NSweep,
    All,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    harness: HarnessArgs,
    #[arg(long, value_enum, default_value = "all")]
    study: Study,
}

#[derive(Args)]
struct TtestArgs {
    /// Baseline column, one value per line.
    #[arg(long)]
    a: PathBuf,
    /// Comparison column; differences are b − a.
    #[arg(long)]
    b: PathBuf,
}

/// A failure after argument parsing.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<mixdeg::Error> for Failure {
    fn from(e: mixdeg::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn require_file(path: &Path, what: &str) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{} not found: {}", what, path.display())))
    }
}

fn print_json<T: Serialize>(value: &T) -> Outcome {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn configure_threads() -> Outcome {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| usage(format!("{} must be a positive integer, got {:?}", THREADS_VAR, raw)))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Gen(a) => gen(a),
        Command::TrainEncoder(a) => train_encoder_cmd(a),
        Command::TrainClassifier(a) => train_classifier_cmd(a),
        Command::Classify(a) => classify(a),
        Command::Restore(a) => restore_cmd(a),
        Command::Session(a) => session(a),
        Command::Eval(a) => eval(a),
        Command::Diag(a) => diag(a),
        Command::Ablate(a) => ablate(a),
        Command::Ttest(a) => ttest(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {}", m);
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {}", m);
            ExitCode::from(2)
        }
    }
}

// ---------------------------------------------------------------------------

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{:02x}", b)).collect()
}

fn gen(a: GenArgs) -> Outcome {
    let mut config = match &a.config {
        Some(p) => {
            require_file(p, "config")?;
            DatasetConfig::load(p).map_err(|e| usage(e.to_string()))?
        }
        None => DatasetConfig::toy(2000),
    };
    if let Some(s) = a.seed {
        config.global_seed = s;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    let triplets = build_dataset(&config, &a.out)?;
    let manifest = a.out.join(MANIFEST_FILE);
    let digest = sha256_hex(&fs::read(&manifest)?);
    println!("{} items, manifest {} sha256 {}", triplets.len(), manifest.display(), digest);
    Ok(())
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> std::result::Result<T, Failure> {
    require_file(path, what)?;
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{} {}: {}", what, path.display(), e)))
}

fn train_encoder_cmd(a: TrainEncoderArgs) -> Outcome {
    require_file(&a.manifest, "manifest")?;
    let mut config: TrainConfig = match &a.config {
        Some(p) => load_json(p, "training config")?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(s) = a.scheme {
        config.weighting_scheme = s;
    }
    if let Some(t) = a.tau {
        config.tau = t;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    let samples = load_samples(&a.manifest)?;
    let trained = train_encoder(&samples, &config)?;
    fs::create_dir_all(&a.out)?;
    trained.encoder.save(a.out.join("encoder.ckpt"))?;
    trained.probe.save(a.out.join("probe.ckpt"))?;
    write_log_csv(&trained.log, a.out.join("train_log.csv"))?;
    fs::write(a.out.join("train_config.json"), serde_json::to_string_pretty(&config)?)?;
    if let Some(last) = trained.log.last() {
        println!(
            "trained {} epochs: l_ctr {:.4} l_qual {:.4} positive cosine {:.4} gap {:.4}",
            last.epoch, last.l_ctr, last.l_qual, last.mean_positive_cosine, last.mean_gap
        );
    }
    Ok(())
}

fn train_classifier_cmd(a: TrainClassifierArgs) -> Outcome {
    require_file(&a.manifest, "manifest")?;
    require_file(&a.encoder, "encoder")?;
    let mut config: ClassifierConfig = match &a.config {
        Some(p) => load_json(p, "classifier config")?,
        None => ClassifierConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let encoder = Encoder::load(&a.encoder)?;
    let samples = load_samples(&a.manifest)?;
    let examples = classifier_examples(&encoder, &samples, Split::Train, config.include_clean)?;
    let (head, losses) = train_classifier_on(&examples, &config)?;
    fs::create_dir_all(&a.out)?;
    head.save(a.out.join("classifier.ckpt"))?;
    let mut log = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        log.push_str(&format!("{},{:.9}\n", i + 1, l));
    }
    fs::write(a.out.join("classifier_log.csv"), log)?;
    let held: Vec<_> = samples.iter().filter(|s| s.triplet.split != Split::Train).collect();
    if !held.is_empty() {
        let f1 = classifier_f1(&head, &encoder, &held, mixdeg::embedding::DEFAULT_THRESHOLD)?;
        println!("held-out micro-F1 {:.4} on {} items", f1, held.len());
    }
    Ok(())
}

struct Models {
    encoder: Encoder,
    classifier: ClassifierHead,
}

fn load_models(m: &ModelArgs, required: bool) -> std::result::Result<Option<Models>, Failure> {
    match (&m.encoder, &m.classifier) {
        (Some(e), Some(c)) => {
            require_file(e, "encoder")?;
            require_file(c, "classifier")?;
            Ok(Some(Models {
                encoder: Encoder::load(e)?,
                classifier: ClassifierHead::load(c)?,
            }))
        }
        (None, None) if !required => Ok(None),
        _ => Err(usage("--encoder and --classifier must be given together")),
    }
}

fn check_threshold(t: f64) -> Outcome {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(usage("--threshold must lie in (0, 1)"))
    }
}

#[derive(Serialize)]
struct Classification {
    labels: Vec<String>,
    probabilities: Vec<(String, f64)>,
    prompt: Option<String>,
}

fn classify(a: ClassifyArgs) -> Outcome {
    require_file(&a.input, "input image")?;
    check_threshold(a.model.threshold)?;
    let models = load_models(&a.model, true)?.expect("required");
    let image = read_image(&a.input)?;
    let z = models.encoder.encode(&image)?;
    let probs = models.classifier.probabilities(&z);
    let labels = models.classifier.predict_labels(&z, a.model.threshold);
    let prompt = if labels.is_empty() { None } else { Some(to_auto_prompt(labels)?) };
    print_json(&Classification {
        labels: labels.iter().map(|c| c.name().to_string()).collect(),
        probabilities: mixdeg::distortions::LabelSet::full()
            .iter()
            .map(|c| (c.name().to_string(), probs[c.index()]))
            .collect(),
        prompt,
    })
}

/// Everything a restoration needs besides the prompt.
struct Context {
    depth: Option<DepthMap>,
    specs: Option<Vec<DistortionSpec>>,
    models: Option<Models>,
    threshold: f64,
    mode: PlanMode,
}

fn load_context(
    depth: &Option<PathBuf>,
    specs: &Option<PathBuf>,
    model: &ModelArgs,
    sequential: bool,
) -> std::result::Result<Context, Failure> {
    check_threshold(model.threshold)?;
    if let Some(d) = depth {
        require_file(d, "depth map")?;
    }
    let specs: Option<Vec<DistortionSpec>> = match specs {
        Some(p) => Some(load_json(p, "specs")?),
        None => None,
    };
    Ok(Context {
        depth: depth.as_ref().map(read_depth).transpose()?,
        specs,
        models: load_models(model, false)?,
        threshold: model.threshold,
        mode: if sequential { PlanMode::Sequential } else { PlanMode::Composite },
    })
}

impl Context {
    /// Prompt-driven restoration. Present labels come from the known specs,
    /// else from the classifier, else from the prompt itself.
    fn restore(&self, image: &Image, prompt: &str) -> std::result::Result<(Image, RestorationPlan), Failure> {
        let request = RestorationRequest::from_text(prompt).map_err(|e| usage(e.to_string()))?;
        let present = if let Some(specs) = &self.specs {
            specs.iter().map(|s| s.category()).collect()
        } else if let Some(m) = &self.models {
            m.classifier.predict_labels(&m.encoder.encode(image)?, self.threshold)
        } else {
            request.targets
        };
        let (out, mut plan) = restore_present(
            &request,
            present,
            image,
            self.depth.as_ref(),
            self.specs.as_deref(),
            self.mode,
        )?;
        if self.specs.is_none() && self.models.is_none() {
            plan.warnings
                .push("no classifier or specs given; assuming every requested distortion is present".into());
        }
        Ok((out, plan))
    }
}

fn plan_path(out: &Path) -> PathBuf {
    out.with_extension("plan.json")
}

fn restore_cmd(a: RestoreArgs) -> Outcome {
    require_file(&a.input, "input image")?;
    if a.auto == a.prompt.is_some() {
        return Err(usage("give exactly one of --prompt and --auto"));
    }
    let ctx = load_context(&a.depth, &a.specs, &a.model, a.sequential)?;
    let image = read_image(&a.input)?;
    let (out, plan) = if a.auto {
        let m = ctx.models.as_ref().ok_or_else(|| usage("--auto needs --encoder and --classifier"))?;
        let (out, plan, prompt) = auto_restore(&image, ctx.depth.as_ref(), &m.classifier, &m.encoder, ctx.mode)?;
        if let Some(p) = prompt {
            eprintln!("auto prompt: {}", p);
        }
        (out, plan)
    } else {
        ctx.restore(&image, a.prompt.as_deref().unwrap_or_default())?
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_image(&out, &a.out)?;
    fs::write(plan_path(&a.out), plan.to_json()?)?;
    for w in &plan.warnings {
        eprintln!("warning: {}", w);
    }
    println!("{}", plan.to_json()?);
    Ok(())
}

fn session(a: SessionArgs) -> Outcome {
    require_file(&a.input, "input image")?;
    let mut ctx = load_context(&a.depth, &a.specs, &a.model, a.sequential)?;
    let dir = match &a.out {
        Some(d) => d.clone(),
        None => a.input.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&dir)?;
    let stem = a
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let mut current = read_image(&a.input)?;
    let mut step = 0usize;
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    eprintln!("enter one prompt per line (e.g. \"unwarp\", \"fix coloring\"); \"quit\" to stop");
    loop {
        eprint!("> ");
        let _ = io::stderr().flush();
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        let prompt = line.trim();
        if prompt.is_empty() {
            continue;
        }
        if matches!(prompt, "quit" | "exit") {
            break;
        }
        match ctx.restore(&current, prompt) {
            Ok((out, plan)) => {
                step += 1;
                let path = dir.join(format!("{}_step{:02}.png", stem, step));
                write_image(&out, &path)?;
                fs::write(plan_path(&path), plan.to_json()?)?;
                writeln!(stdout, "{} [{}]", path.display(), plan_summary(&plan))?;
                // restored categories are gone from the known forward chain
                if let Some(specs) = ctx.specs.as_mut() {
                    let done = plan.categories();
                    specs.retain(|s| !done.contains(&s.category()));
                }
                current = out;
            }
            Err(Failure::Usage(m)) => eprintln!("could not use prompt: {}", m),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn plan_summary(plan: &RestorationPlan) -> String {
    if plan.is_empty() {
        return "no change".into();
    }
    plan.categories().iter().map(|c| c.name()).collect::<Vec<_>>().join(", ")
}

#[derive(Serialize)]
struct EvalReport {
    split: Split,
    items: usize,
    threshold: f64,
    f1: f64,
    automated: mixdeg::eval::MetricReport,
    controllability: mixdeg::eval::ControllabilityReport,
}

fn eval(a: EvalArgs) -> Outcome {
    require_file(&a.manifest, "manifest")?;
    require_file(&a.encoder, "encoder")?;
    require_file(&a.classifier, "classifier")?;
    check_threshold(a.threshold)?;
    let encoder = Encoder::load(&a.encoder)?;
    let classifier = ClassifierHead::load(&a.classifier)?;
    let samples = load_samples(&a.manifest)?;
    let split: Vec<_> = samples.iter().filter(|s| s.triplet.split == a.split).collect();
    if split.is_empty() {
        return Err(Failure::Runtime(format!("no items in split {}", a.split)));
    }
    let config_path = a.manifest.with_file_name(mixdeg::dataset::CONFIG_FILE);
    let mut dataset = if config_path.is_file() {
        DatasetConfig::load(&config_path)?
    } else {
        DatasetConfig::toy(samples.len())
    };
    if let Some(s) = a.seed {
        dataset.global_seed = s;
    }
    let items = single_distortion_items(&dataset, a.items, dataset.global_seed)?;
    let report = EvalReport {
        split: a.split,
        items: split.len(),
        threshold: a.threshold,
        f1: classifier_f1(&classifier, &encoder, &split, a.threshold)?,
        automated: automated_fidelity(&classifier, &encoder, &items)?,
        controllability: controllability(&classifier, &encoder, &split, a.threshold, dataset.global_seed)?,
    };
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "f1 {:.4} | automated psnr {:.2} ssim {:.4} | full faithful {:.3} partial preserved {:.3} negative identical {}/{}",
        report.f1,
        report.automated.mean_psnr,
        report.automated.mean_ssim,
        report.controllability.full_rate,
        report.controllability.partial_rate,
        report.controllability.negative_identical,
        report.controllability.negative_cases
    );
    Ok(())
}

fn harness_config(a: &HarnessArgs) -> std::result::Result<HarnessConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            require_file(p, "harness config")?;
            HarnessConfig::load(p).map_err(|e| usage(e.to_string()))?
        }
        None => HarnessConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.dataset.global_seed = s;
        cfg.train.seed = s;
        cfg.classifier.seed = s;
    }
    if let Some(s) = a.scheme {
        cfg.train.weighting_scheme = s;
    }
    if let Some(t) = a.threshold {
        cfg.threshold = t;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn diag(a: DiagArgs) -> Outcome {
    let cfg = harness_config(&a.harness)?;
    let taus = if a.tau.is_empty() { DEFAULT_TAUS.to_vec() } else { a.tau };
    if taus.iter().any(|t| !(*t > 0.0)) {
        return Err(usage("--tau values must be positive"));
    }
    let report = tau_sweep(&cfg, &taus)?;
    let csv = report.to_csv();
    write_report(&report, &csv, &a.harness.out, "latent_diagnostics")?;
    print!("{}", csv);
    Ok(())
}

fn ablate(a: AblateArgs) -> Outcome {
    let cfg = harness_config(&a.harness)?;
    if matches!(a.study, Study::Weighting | Study::All) {
        let r = weighting_ablation(&cfg)?;
        let csv = r.to_csv();
        write_report(&r, &csv, &a.harness.out, "weighting_ablation")?;
        print!("{}", csv);
    }
    if matches!(a.study, Study::NSweep | Study::All) {
        let r = n_sweep(&cfg)?;
        let csv = r.to_csv();
        write_report(&r, &csv, &a.harness.out, "n_sweep")?;
        print!("{}", csv);
    }
    Ok(())
}

/// One number per line; blank lines, `#` comments and a non-numeric header
/// line are skipped. With several comma-separated columns the last is used.
fn read_column(path: &Path) -> std::result::Result<Vec<f64>, Failure> {
    require_file(path, "column file")?;
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if out.is_empty() && i == 0 => continue,
            Err(_) => return Err(usage(format!("{}:{}: not a number: {:?}", path.display(), i + 1, field))),
        }
    }
    Ok(out)
}

fn ttest(a: TtestArgs) -> Outcome {
    let xa = read_column(&a.a)?;
    let xb = read_column(&a.b)?;
    if xa.len() != xb.len() {
        return Err(usage(format!("columns differ in length: {} vs {}", xa.len(), xb.len())));
    }
    print_json(&paired_t_test(&xa, &xb)?)
}
