//! Experiment protocols: prompt faithfulness, latent diagnostics over τ,
//! the maximum-distortion-count sweep and the weighting-scheme ablation.
//!
//! Every harness regenerates its toy data, retrains from scratch per trial
//! and reports means over seeds. Published full-scale numbers ride along as
//! annotations only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::composition_probe;
use super::metrics::{is_faithful, micro_f1, MetricReport};
use crate::dataset::{generate_clean, generate_samples, DatasetConfig, Sample, Split};
use crate::distortions::{apply, sample_spec, DistortionSpec, LabelSet};
use crate::embedding::{
    classifier_examples, cosine, train_classifier_on, train_with_validation, ClassifierConfig,
    ClassifierHead, Embedding, Encoder, FeatureTable, TrainConfig, WeightingScheme,
    DEFAULT_THRESHOLD,
};
use crate::imaging::io::quantized;
use crate::imaging::{child_seed, DepthMap, Image, SeededRng};
use crate::prompts::{
    make_negative, make_partial, PromptGrammar, PromptMode, PromptStyle, RestorationRequest,
};
use crate::restoration::{auto_restore, restore, PlanMode};
use crate::{Error, Result};

/// Temperatures of the τ sweep.
pub const DEFAULT_TAUS: [f64; 5] = [0.03, 0.07, 0.10, 0.20, 0.50];
/// Maximum distortion counts of the N sweep.
pub const N_SWEEP: [usize; 4] = [1, 2, 3, 4];

const SINGLE_SALT: u64 = 0x51_0000_0000_0003;
const CONTROL_SALT: u64 = 0xC0_0000_0000_0005;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub classifier: ClassifierConfig,
    /// One trial per seed; the seed drives initialization and the probes.
    pub seeds: Vec<u64>,
    /// Compositional-geometry items per trial.
    pub probe_items: usize,
    /// Single-distortion images used for fidelity and faithfulness.
    pub eval_items: usize,
    pub threshold: f64,
    /// Run trials concurrently (each with its own seed) instead of in order.
    pub parallel: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            dataset: DatasetConfig::toy(2000),
            train: TrainConfig::default(),
            classifier: ClassifierConfig::default(),
            seeds: vec![1, 2, 3],
            probe_items: 500,
            eval_items: 200,
            threshold: DEFAULT_THRESHOLD,
            parallel: false,
        }
    }
}

impl HarnessConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: HarnessConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::invalid("harness needs at least one seed"));
        }
        if self.probe_items == 0 || self.eval_items == 0 {
            return Err(Error::invalid("probe_items and eval_items must be >= 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid("threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Published full-scale values, carried for comparison and never checked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub note: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl Reference {
    fn csv_header(&self) -> String {
        let mut s = format!("# reference ({}): {}\n", self.note, self.columns.join(", "));
        for (key, values) in &self.rows {
            let v: Vec<String> = values.iter().map(|v| format!("{}", v)).collect();
            let _ = writeln!(s, "#   {}: {}", key, v.join(", "));
        }
        s
    }
}

const REFERENCE_NOTE: &str = "published full-scale values; not reproducible at toy scale";

fn n_sweep_reference() -> Reference {
    Reference {
        note: REFERENCE_NOTE.into(),
        columns: ["psnr", "ssim", "lpips", "stability", "f1"]
            .map(String::from)
            .to_vec(),
        rows: vec![
            ("N=1".into(), vec![24.35, 0.942, 0.112, 0.014, 0.91]),
            ("N=2".into(), vec![20.65, 0.923, 0.126, 0.018, 0.88]),
            ("N=3".into(), vec![18.73, 0.842, 0.218, 0.022, 0.87]),
            ("N=4".into(), vec![16.98, 0.741, 0.401, 0.047, 0.61]),
        ],
    }
}

fn ablation_reference() -> Reference {
    Reference {
        note: REFERENCE_NOTE.into(),
        columns: ["psnr", "ssim", "lpips"].map(String::from).to_vec(),
        rows: vec![
            ("none".into(), vec![19.52, 0.734, 0.154]),
            ("unweighted".into(), vec![20.63, 0.799, 0.388]),
            ("cosine_labels".into(), vec![21.49, 0.772, 0.429]),
            ("overlap".into(), vec![21.35, 0.784, 0.332]),
            ("jaccard".into(), vec![22.08, 0.842, 0.218]),
        ],
    }
}

// ---------------------------------------------------------------------------
// faithfulness and controllability

/// Labels the classifier detects on an image.
pub fn detect(
    classifier: &ClassifierHead,
    encoder: &Encoder,
    image: &Image,
    threshold: f64,
) -> Result<LabelSet> {
    Ok(classifier.predict_labels(&encoder.encode(image)?, threshold))
}

/// Whether `output` removed every requested degradation the classifier can
/// see and kept every other one it detected on `input`.
pub fn prompt_faithfulness(
    classifier: &ClassifierHead,
    encoder: &Encoder,
    input: &Image,
    output: &Image,
    request: &RestorationRequest,
) -> Result<bool> {
    prompt_faithfulness_at(
        classifier,
        encoder,
        input,
        output,
        request,
        DEFAULT_THRESHOLD,
    )
}

pub fn prompt_faithfulness_at(
    classifier: &ClassifierHead,
    encoder: &Encoder,
    input: &Image,
    output: &Image,
    request: &RestorationRequest,
    threshold: f64,
) -> Result<bool> {
    let before = detect(classifier, encoder, input, threshold)?;
    let after = detect(classifier, encoder, output, threshold)?;
    Ok(is_faithful(before, after, request.targets))
}

fn full_request(targets: LabelSet, rng: &mut SeededRng) -> Result<RestorationRequest> {
    PromptGrammar::builtin().request(targets, PromptMode::Full, PromptStyle::Fixed, rng)
}

fn rate(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Oracle-mode controllability over a set of degraded samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllabilityReport {
    /// Negative requests whose output is bit-identical to the input.
    pub negative_identical: usize,
    pub negative_cases: usize,
    /// Full requests on single-distortion samples judged faithful.
    pub full_faithful: usize,
    pub full_cases: usize,
    pub full_rate: f64,
    /// Partial requests after which every present, non-targeted label that
    /// was detected on the input is still detected.
    pub partial_preserved: usize,
    pub partial_cases: usize,
    pub partial_rate: f64,
    /// Partial requests after which every present, non-targeted label is
    /// detected, whether or not it was detected before. Bounded by the
    /// classifier's recall.
    pub partial_all_detected: usize,
}

#[derive(Clone, Copy, Default)]
struct Control {
    negative: Option<bool>,
    full: Option<bool>,
    partial: Option<bool>,
    partial_all: Option<bool>,
}

/// Issues a negative request for every sample, a full request for every
/// single-distortion sample and a partial request for every compound one,
/// restoring with the known forward specs.
pub fn controllability(
    classifier: &ClassifierHead,
    encoder: &Encoder,
    samples: &[&Sample],
    threshold: f64,
    seed: u64,
) -> Result<ControllabilityReport> {
    let per: Vec<Control> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| -> Result<Control> {
            let mut rng = SeededRng::new(child_seed(seed ^ CONTROL_SALT, i as u64));
            let applied = s.triplet.applied_labels;
            let specs = Some(s.triplet.applied_specs.as_slice());
            let depth = Some(&s.depth);
            let mut c = Control::default();

            let neg = make_negative(applied, &mut rng)?;
            let (out, _) = restore(&neg, &s.distorted, depth, specs, PlanMode::Composite)?;
            c.negative = Some(out.bit_identical(&s.distorted));

            let before = detect(classifier, encoder, &s.distorted, threshold)?;
            if applied.len() == 1 {
                let req = full_request(applied, &mut rng)?;
                let (out, _) = restore(&req, &s.distorted, depth, specs, PlanMode::Composite)?;
                let after = detect(classifier, encoder, &out, threshold)?;
                c.full = Some(is_faithful(before, after, req.targets));
            } else if applied.len() >= 2 {
                let req = make_partial(applied, &mut rng)?;
                let (out, _) = restore(&req, &s.distorted, depth, specs, PlanMode::Composite)?;
                let after = detect(classifier, encoder, &out, threshold)?;
                let kept = applied.difference(req.targets);
                c.partial = Some(kept.intersection(before).is_subset(after));
                c.partial_all = Some(kept.is_subset(after));
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let count = |f: fn(&Control) -> Option<bool>| {
        let v: Vec<bool> = per.iter().filter_map(f).collect();
        (v.iter().filter(|b| **b).count(), v.len())
    };
    let (negative_identical, negative_cases) = count(|c| c.negative);
    let (full_faithful, full_cases) = count(|c| c.full);
    let (partial_preserved, partial_cases) = count(|c| c.partial);
    let (partial_all_detected, _) = count(|c| c.partial_all);
    Ok(ControllabilityReport {
        negative_identical,
        negative_cases,
        full_faithful,
        full_cases,
        full_rate: rate(full_faithful, full_cases),
        partial_preserved,
        partial_cases,
        partial_rate: rate(partial_preserved, partial_cases),
        partial_all_detected,
    })
}

// ---------------------------------------------------------------------------
// single-distortion evaluation set

/// A fresh clean image degraded by one sampled transform.
#[derive(Clone, Debug)]
pub struct SingleItem {
    pub clean: Image,
    pub distorted: Image,
    pub depth: DepthMap,
    pub spec: DistortionSpec,
}

/// `n` single-distortion items over the configured vocabulary, from seeds
/// disjoint from the dataset's.
pub fn single_distortion_items(
    config: &DatasetConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<SingleItem>> {
    let kinds = config.kinds();
    if kinds.is_empty() {
        return Err(Error::Empty("vocabulary".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeededRng::new(child_seed(seed ^ SINGLE_SALT, i as u64));
            let scene = *rng.choose(&config.scenes);
            let (clean, depth) = generate_clean(config.image_size, scene, &mut rng)?;
            let clean = quantized(&clean);
            let spec = sample_spec(*rng.choose(&kinds), &mut rng);
            let distorted = quantized(&apply(&spec, &clean, Some(&depth))?);
            Ok(SingleItem {
                clean,
                distorted,
                depth,
                spec,
            })
        })
        .collect()
}

/// Full-prompt oracle restoration of single-distortion items, judged by
/// the classifier.
pub fn single_faithfulness(
    classifier: &ClassifierHead,
    encoder: &Encoder,
    items: &[SingleItem],
    threshold: f64,
    seed: u64,
) -> Result<f64> {
    let hits: Vec<bool> = items
        .par_iter()
        .enumerate()
        .map(|(i, it)| {
            let mut rng = SeededRng::new(child_seed(seed ^ CONTROL_SALT, i as u64));
            let req = full_request(LabelSet::single(it.spec.category()), &mut rng)?;
            let specs = [it.spec.clone()];
            let (out, _) = restore(
                &req,
                &it.distorted,
                Some(&it.depth),
                Some(&specs),
                PlanMode::Composite,
            )?;
            prompt_faithfulness_at(classifier, encoder, &it.distorted, &out, &req, threshold)
        })
        .collect::<Result<_>>()?;
    Ok(rate(hits.iter().filter(|b| **b).count(), hits.len()))
}

/// Classifier-driven restoration of single-distortion items against their
/// clean references.
pub fn automated_fidelity(
    classifier: &ClassifierHead,
    encoder: &Encoder,
    items: &[SingleItem],
) -> Result<MetricReport> {
    let outputs: Vec<Image> = items
        .par_iter()
        .map(|it| {
            Ok(auto_restore(
                &it.distorted,
                Some(&it.depth),
                classifier,
                encoder,
                PlanMode::Composite,
            )?
            .0)
        })
        .collect::<Result<_>>()?;
    MetricReport::from_pairs(items.iter().zip(&outputs).map(|(it, o)| (&it.clean, o)))
}

/// Micro-F1 of the classifier on the samples of a split set.
pub fn classifier_f1(
    classifier: &ClassifierHead,
    encoder: &Encoder,
    samples: &[&Sample],
    threshold: f64,
) -> Result<f64> {
    let predicted: Vec<LabelSet> = samples
        .par_iter()
        .map(|s| detect(classifier, encoder, &s.distorted, threshold))
        .collect::<Result<_>>()?;
    let truth: Vec<LabelSet> = samples.iter().map(|s| s.triplet.applied_labels).collect();
    micro_f1(&predicted, &truth)
}

// ---------------------------------------------------------------------------
// latent diagnostics

/// `cos(anchor, positive) − max_n cos(anchor, n)`.
pub fn hardest_negative_gap(
    anchor: &[f64],
    positive: &[f64],
    negatives: &[Embedding],
) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::Empty("negatives".into()));
    }
    let hardest = negatives
        .iter()
        .map(|n| cosine(anchor, n))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(cosine(anchor, positive) - hardest)
}

/// Mean positive cosine (degraded vs its own clean image) and mean gap to
/// the hardest clean negative, over the given samples.
pub fn embedding_diagnostics(encoder: &Encoder, samples: &[&Sample]) -> Result<(f64, f64)> {
    let mut cleans: BTreeMap<usize, &Image> = BTreeMap::new();
    for s in samples {
        cleans.entry(s.triplet.clean_index).or_insert(&s.clean);
    }
    if cleans.len() < 2 {
        return Err(Error::Empty(
            "diagnostics need at least two clean images".into(),
        ));
    }
    let keys: Vec<usize> = cleans.keys().copied().collect();
    let clean_z: Vec<Embedding> = keys
        .par_iter()
        .map(|k| encoder.encode(cleans[k]))
        .collect::<Result<_>>()?;
    let slot: BTreeMap<usize, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let parts: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let z = encoder.encode(&s.distorted)?;
            let own = slot[&s.triplet.clean_index];
            let negatives: Vec<Embedding> = clean_z
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != own)
                .map(|(_, e)| e.clone())
                .collect();
            Ok((
                cosine(&z, &clean_z[own]),
                hardest_negative_gap(&z, &clean_z[own], &negatives)?,
            ))
        })
        .collect::<Result<_>>()?;
    let n = parts.len() as f64;
    Ok((
        parts.iter().map(|p| p.0).sum::<f64>() / n,
        parts.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    (
        m,
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauPoint {
    pub tau: f64,
    pub seeds: Vec<u64>,
    pub positive_cosine: Vec<f64>,
    pub gap: Vec<f64>,
    pub mean_positive_cosine: f64,
    pub sd_positive_cosine: f64,
    pub mean_gap: f64,
    pub sd_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentDiagnostics {
    /// Over every encoder.
    pub mean_positive_cosine: f64,
    pub mean_gap: f64,
    pub curves: Vec<TauPoint>,
}

impl LatentDiagnostics {
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("tau,seeds,mean_positive_cosine,sd_positive_cosine,mean_gap,sd_gap\n");
        for p in &self.curves {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                p.tau,
                p.seeds.len(),
                p.mean_positive_cosine,
                p.sd_positive_cosine,
                p.mean_gap,
                p.sd_gap
            );
        }
        s
    }
}

/// An encoder trained at a given temperature and seed.
pub struct TauEncoder<'a> {
    pub tau: f64,
    pub seed: u64,
    pub encoder: &'a Encoder,
}

/// Diagnostics per τ over pre-trained encoders; every τ must have at least
/// one encoder.
pub fn latent_diagnostics(
    encoders: &[TauEncoder],
    samples: &[&Sample],
    taus: &[f64],
) -> Result<LatentDiagnostics> {
    let mut curves = Vec::with_capacity(taus.len());
    let (mut all_pos, mut all_gap) = (Vec::new(), Vec::new());
    for &tau in taus {
        let at: Vec<&TauEncoder> = encoders.iter().filter(|e| e.tau == tau).collect();
        if at.is_empty() {
            return Err(Error::Missing(format!("encoder for tau {}", tau)));
        }
        let (mut pos, mut gap, mut seeds) = (Vec::new(), Vec::new(), Vec::new());
        for e in at {
            let (p, g) = embedding_diagnostics(e.encoder, samples)?;
            pos.push(p);
            gap.push(g);
            seeds.push(e.seed);
        }
        all_pos.extend(&pos);
        all_gap.extend(&gap);
        let (mp, sp) = mean_sd(&pos);
        let (mg, sg) = mean_sd(&gap);
        curves.push(TauPoint {
            tau,
            seeds,
            positive_cosine: pos,
            gap,
            mean_positive_cosine: mp,
            sd_positive_cosine: sp,
            mean_gap: mg,
            sd_gap: sg,
        });
    }
    Ok(LatentDiagnostics {
        mean_positive_cosine: mean_sd(&all_pos).0,
        mean_gap: mean_sd(&all_gap).0,
        curves,
    })
}

/// Retrains one encoder per (τ, seed) and evaluates on the held-out splits.
pub fn tau_sweep(config: &HarnessConfig, taus: &[f64]) -> Result<LatentDiagnostics> {
    config.validate()?;
    let samples = generate_samples(&config.dataset)?;
    let table = FeatureTable::build(
        config.dataset.image_size,
        &samples,
        Some(Split::Train),
        config.train.variants,
    )?;
    let jobs: Vec<(f64, u64)> = taus
        .iter()
        .flat_map(|&t| config.seeds.iter().map(move |&s| (t, s)))
        .collect();
    let train = |&(tau, seed): &(f64, u64)| {
        let tc = TrainConfig {
            tau,
            seed,
            ..config.train.clone()
        };
        Ok(train_with_validation(&table, None, config.dataset.image_size, &tc)?.encoder)
    };
    let encoders: Vec<Encoder> = if config.parallel {
        jobs.par_iter().map(train).collect::<Result<_>>()?
    } else {
        jobs.iter().map(train).collect::<Result<_>>()?
    };
    let held = held_out(&samples);
    let tagged: Vec<TauEncoder> = jobs
        .iter()
        .zip(&encoders)
        .map(|(&(tau, seed), encoder)| TauEncoder { tau, seed, encoder })
        .collect();
    latent_diagnostics(&tagged, &held, taus)
}

// ---------------------------------------------------------------------------
// trials

fn held_out(samples: &[Sample]) -> Vec<&Sample> {
    samples
        .iter()
        .filter(|s| s.triplet.split != Split::Train)
        .collect()
}

/// Population variance of the per-epoch validation loss (training epochs
/// only).
pub fn loss_variance(losses: &[f64]) -> f64 {
    if losses.is_empty() {
        return 0.0;
    }
    let n = losses.len() as f64;
    let m = losses.iter().sum::<f64>() / n;
    losses.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

/// Outcome of one train-and-evaluate run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub seed: u64,
    pub f1: f64,
    pub stability: f64,
    pub final_val_loss: Option<f64>,
    pub psnr: f64,
    pub ssim: f64,
    pub geometry_pass_rate: Option<f64>,
    pub geometry_pass_rate_mean: Option<f64>,
    pub geometry_margin: Option<f64>,
    pub faithfulness: Option<f64>,
}

struct TrialData<'a> {
    config: &'a HarnessConfig,
    dataset: &'a DatasetConfig,
    samples: &'a [Sample],
    table: &'a FeatureTable,
    val: &'a FeatureTable,
    items: &'a [SingleItem],
    with_geometry: bool,
}

fn run_trial(d: &TrialData, train: &TrainConfig, seed: u64) -> Result<Trial> {
    let tc = TrainConfig {
        seed,
        ..train.clone()
    };
    let val = (d
        .val
        .groups
        .iter()
        .filter(|g| !g.variants.is_empty())
        .count()
        >= 2)
        .then_some(d.val);
    let trained = train_with_validation(d.table, val, d.dataset.image_size, &tc)?;
    let encoder = &trained.encoder;
    let val_losses: Vec<f64> = trained
        .log
        .iter()
        .skip(1)
        .filter_map(|l| l.val_loss)
        .collect();

    let cc = ClassifierConfig {
        seed,
        ..d.config.classifier.clone()
    };
    let examples = classifier_examples(encoder, d.samples, Split::Train, cc.include_clean)?;
    let (classifier, _) = train_classifier_on(&examples, &cc)?;
    let held = held_out(d.samples);
    let f1 = classifier_f1(&classifier, encoder, &held, d.config.threshold)?;
    let fidelity = automated_fidelity(&classifier, encoder, d.items)?;

    let (mut gp, mut gm, mut margin, mut faith) = (None, None, None, None);
    if d.with_geometry {
        let g = composition_probe(encoder, d.dataset, d.config.probe_items, seed)?;
        gp = Some(g.pass_rate);
        gm = Some(g.pass_rate_mean);
        margin = Some(g.mean_margin);
        faith = Some(single_faithfulness(
            &classifier,
            encoder,
            d.items,
            d.config.threshold,
            seed,
        )?);
    }
    Ok(Trial {
        seed,
        f1,
        stability: loss_variance(&val_losses),
        final_val_loss: val_losses.last().copied(),
        psnr: fidelity.mean_psnr,
        ssim: fidelity.mean_ssim,
        geometry_pass_rate: gp,
        geometry_pass_rate_mean: gm,
        geometry_margin: margin,
        faithfulness: faith,
    })
}

fn run_trials(d: &TrialData, train: &TrainConfig) -> Result<Vec<Trial>> {
    if d.config.parallel {
        d.config
            .seeds
            .par_iter()
            .map(|&s| run_trial(d, train, s))
            .collect()
    } else {
        d.config
            .seeds
            .iter()
            .map(|&s| run_trial(d, train, s))
            .collect()
    }
}

fn mean_of(trials: &[Trial], f: impl Fn(&Trial) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = trials.iter().filter_map(f).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{:.6}", x)).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// N sweep

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NSweepRow {
    pub n_max: usize,
    /// Held-out micro-F1 at the configured threshold.
    pub f1: f64,
    /// Automated restoration of single-distortion images.
    pub psnr: f64,
    pub ssim: f64,
    /// Unrestored single-distortion images, for scale.
    pub input_psnr: f64,
    pub input_ssim: f64,
    /// Variance of the validation loss across epochs.
    pub stability: f64,
    pub trials: Vec<Trial>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NSweepReport {
    pub config: HarnessConfig,
    pub rows: Vec<NSweepRow>,
    pub reference: Reference,
}

impl NSweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = self.reference.csv_header();
        s.push_str("n_max,f1,psnr,ssim,input_psnr,input_ssim,stability,trials\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.9},{}",
                r.n_max,
                r.f1,
                r.psnr,
                r.ssim,
                r.input_psnr,
                r.input_ssim,
                r.stability,
                r.trials.len()
            );
        }
        s
    }
}

/// Regenerates the toy dataset for every maximum distortion count, retrains
/// encoder and classifier per seed, and reports fidelity, stability and F1.
pub fn n_sweep(config: &HarnessConfig) -> Result<NSweepReport> {
    n_sweep_over(config, &N_SWEEP)
}

pub fn n_sweep_over(config: &HarnessConfig, counts: &[usize]) -> Result<NSweepReport> {
    config.validate()?;
    let items = single_distortion_items(
        &config.dataset,
        config.eval_items,
        config.dataset.global_seed,
    )?;
    let input = MetricReport::from_pairs(items.iter().map(|it| (&it.clean, &it.distorted)))?;
    let mut rows = Vec::with_capacity(counts.len());
    for &n_max in counts {
        let dataset = DatasetConfig {
            n_max,
            n_distribution: None,
            ..config.dataset.clone()
        };
        dataset.validate()?;
        let samples = generate_samples(&dataset)?;
        let size = dataset.image_size;
        let table = FeatureTable::build(size, &samples, Some(Split::Train), config.train.variants)?;
        let val = FeatureTable::build(size, &samples, Some(Split::Val), config.train.variants)?;
        let data = TrialData {
            config,
            dataset: &dataset,
            samples: &samples,
            table: &table,
            val: &val,
            items: &items,
            with_geometry: false,
        };
        let trials = run_trials(&data, &config.train)?;
        rows.push(NSweepRow {
            n_max,
            f1: mean_of(&trials, |t| Some(t.f1)).unwrap_or(0.0),
            psnr: mean_of(&trials, |t| Some(t.psnr)).unwrap_or(0.0),
            ssim: mean_of(&trials, |t| Some(t.ssim)).unwrap_or(0.0),
            input_psnr: input.mean_psnr,
            input_ssim: input.mean_ssim,
            stability: mean_of(&trials, |t| Some(t.stability)).unwrap_or(0.0),
            trials,
        });
    }
    Ok(NSweepReport {
        config: config.clone(),
        rows,
        reference: n_sweep_reference(),
    })
}

// ---------------------------------------------------------------------------
// weighting ablation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub scheme: WeightingScheme,
    /// Mean over seeds of the fraction of compound items closer to both
    /// constituents than to any unrelated single.
    pub geometry_pass_rate: f64,
    /// Same, against the mean unrelated similarity.
    pub geometry_pass_rate_mean: f64,
    pub geometry_margin: f64,
    /// Full-prompt oracle restorations of single-distortion images judged
    /// faithful.
    pub faithfulness: f64,
    pub f1: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub trials: Vec<Trial>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: HarnessConfig,
    pub rows: Vec<AblationRow>,
    pub reference: Reference,
}

impl AblationReport {
    pub fn row(&self, scheme: WeightingScheme) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.scheme == scheme)
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.reference.csv_header();
        s.push_str("scheme,geometry_pass_rate,geometry_pass_rate_mean,geometry_margin,faithfulness,f1,psnr,ssim,per_seed_pass_rate\n");
        for r in &self.rows {
            let per: Vec<String> = r
                .trials
                .iter()
                .map(|t| fmt_opt(t.geometry_pass_rate))
                .collect();
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                r.scheme,
                r.geometry_pass_rate,
                r.geometry_pass_rate_mean,
                r.geometry_margin,
                r.faithfulness,
                r.f1,
                r.psnr,
                r.ssim,
                per.join(";")
            );
        }
        s
    }
}

/// Trains one encoder per scheme and seed on a shared dataset.
pub fn weighting_ablation(config: &HarnessConfig) -> Result<AblationReport> {
    weighting_ablation_over(config, &WeightingScheme::ALL)
}

pub fn weighting_ablation_over(
    config: &HarnessConfig,
    schemes: &[WeightingScheme],
) -> Result<AblationReport> {
    config.validate()?;
    let dataset = &config.dataset;
    let samples = generate_samples(dataset)?;
    let size = dataset.image_size;
    let table = FeatureTable::build(size, &samples, Some(Split::Train), config.train.variants)?;
    let val = FeatureTable::build(size, &samples, Some(Split::Val), config.train.variants)?;
    let items = single_distortion_items(dataset, config.eval_items, dataset.global_seed)?;
    let data = TrialData {
        config,
        dataset,
        samples: &samples,
        table: &table,
        val: &val,
        items: &items,
        with_geometry: true,
    };
    let mut rows = Vec::with_capacity(schemes.len());
    for &scheme in schemes {
        let train = TrainConfig {
            weighting_scheme: scheme,
            ..config.train.clone()
        };
        let trials = run_trials(&data, &train)?;
        rows.push(AblationRow {
            scheme,
            geometry_pass_rate: mean_of(&trials, |t| t.geometry_pass_rate).unwrap_or(0.0),
            geometry_pass_rate_mean: mean_of(&trials, |t| t.geometry_pass_rate_mean).unwrap_or(0.0),
            geometry_margin: mean_of(&trials, |t| t.geometry_margin).unwrap_or(0.0),
            faithfulness: mean_of(&trials, |t| t.faithfulness).unwrap_or(0.0),
            f1: mean_of(&trials, |t| Some(t.f1)).unwrap_or(0.0),
            psnr: mean_of(&trials, |t| Some(t.psnr)).unwrap_or(0.0),
            ssim: mean_of(&trials, |t| Some(t.ssim)).unwrap_or(0.0),
            trials,
        });
    }
    Ok(AblationReport {
        config: config.clone(),
        rows,
        reference: ablation_reference(),
    })
}

/// Writes `<stem>.json` and `<stem>.csv` under `dir`.
pub fn write_report<T: Serialize>(
    report: &T,
    csv: &str,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join(format!("{}.json", stem));
    fs::write(&json, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&json, e))?;
    let path = dir.join(format!("{}.csv", stem));
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distortions::Category;

    fn tiny() -> HarnessConfig {
        let mut dataset = DatasetConfig::toy(96);
        dataset.image_size = 32;
        HarnessConfig {
            dataset,
            train: TrainConfig {
                epochs: 2,
                batch_clean: 4,
                hidden: vec![16, 16],
                embedding_dim: 8,
                probe_hidden: 8,
                ..Default::default()
            },
            classifier: ClassifierConfig {
                hidden: 16,
                epochs: 2,
                ..Default::default()
            },
            seeds: vec![7],
            probe_items: 6,
            eval_items: 6,
            threshold: DEFAULT_THRESHOLD,
            parallel: false,
        }
    }

    #[test]
    fn gap_uses_the_hardest_negative() {
        let a = vec![1.0, 0.0];
        let p = vec![0.8, 0.6];
        let negs = vec![vec![0.0, 1.0], vec![0.6, 0.8]];
        // cos(a,p)=0.8, negatives 0 and 0.6
        assert!((hardest_negative_gap(&a, &p, &negs).unwrap() - 0.2).abs() < 1e-12);
        assert!(hardest_negative_gap(&a, &p, &[]).is_err());
        assert_eq!(cosine(&p, &p), 1.0);
    }

    #[test]
    fn default_taus() {
        assert_eq!(DEFAULT_TAUS, [0.03, 0.07, 0.10, 0.20, 0.50]);
    }

    #[test]
    fn loss_variance_hand_value() {
        assert_eq!(loss_variance(&[1.0, 3.0]), 1.0);
        assert_eq!(loss_variance(&[]), 0.0);
    }

    #[test]
    fn faithfulness_cases() {
        let cfg = tiny();
        let samples = generate_samples(&cfg.dataset).unwrap();
        let enc = train_with_validation(
            &FeatureTable::build(32, &samples, Some(Split::Train), 4).unwrap(),
            None,
            32,
            &cfg.train,
        )
        .unwrap()
        .encoder;
        let ex = classifier_examples(&enc, &samples, Split::Train, true).unwrap();
        let (head, _) = train_classifier_on(&ex, &cfg.classifier).unwrap();
        let img = &samples[0].distorted;
        let mut rng = SeededRng::new(1);
        // identity output under a negative request: before == after
        let before = detect(&head, &enc, img, DEFAULT_THRESHOLD).unwrap();
        let neg = make_negative(before.union(samples[0].triplet.applied_labels), &mut rng).unwrap();
        assert!(prompt_faithfulness(&head, &enc, img, img, &neg).unwrap());
        // clause checks on label sets directly
        let (h, n) = (Category::Haze, Category::GaussianNoise);
        let both: LabelSet = [h, n].into_iter().collect();
        assert!(!is_faithful(both, LabelSet::empty(), LabelSet::single(h)));
        assert!(!is_faithful(both, both, LabelSet::single(h)));
        assert!(is_faithful(both, LabelSet::single(n), LabelSet::single(h)));
    }

    #[test]
    fn latent_diagnostics_requires_every_tau() {
        let cfg = tiny();
        let samples = generate_samples(&cfg.dataset).unwrap();
        let table = FeatureTable::build(32, &samples, Some(Split::Train), 4).unwrap();
        let enc = train_with_validation(&table, None, 32, &cfg.train)
            .unwrap()
            .encoder;
        let held = held_out(&samples);
        let tagged = [TauEncoder {
            tau: 0.1,
            seed: 1,
            encoder: &enc,
        }];
        let d = latent_diagnostics(&tagged, &held, &[0.1]).unwrap();
        assert_eq!(d.curves.len(), 1);
        assert!((-1.0..=1.0).contains(&d.mean_positive_cosine));
        assert!(matches!(
            latent_diagnostics(&tagged, &held, &[0.1, 0.2]),
            Err(Error::Missing(_))
        ));
    }

    #[test]
    fn n_sweep_schema() {
        let cfg = tiny();
        let r = n_sweep(&cfg).unwrap();
        assert_eq!(
            r.rows.iter().map(|r| r.n_max).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
        for row in &r.rows {
            assert!((0.0..=1.0).contains(&row.f1));
            assert!(row.stability >= 0.0);
        }
        assert_eq!(r.reference.rows.len(), 4);
        assert_eq!(r.reference.rows[0].1[4], 0.91);
        assert_eq!(r.reference.rows[3].1[4], 0.61);
        let csv = r.to_csv();
        assert!(csv.starts_with("# reference"));
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 5);
    }

    #[test]
    fn ablation_schema() {
        let cfg = tiny();
        let r = weighting_ablation_over(&cfg, &[WeightingScheme::None, WeightingScheme::Jaccard])
            .unwrap();
        assert_eq!(r.rows.len(), 2);
        let j = r.row(WeightingScheme::Jaccard).unwrap();
        assert!((0.0..=1.0).contains(&j.geometry_pass_rate));
        assert!((0.0..=1.0).contains(&j.faithfulness));
        assert_eq!(r.reference.rows.len(), 5);
        let dir = tempfile::tempdir().unwrap();
        write_report(&r, &r.to_csv(), dir.path(), "ablation").unwrap();
        let back: AblationReport =
            serde_json::from_str(&fs::read_to_string(dir.path().join("ablation.json")).unwrap())
                .unwrap();
        assert_eq!(back.rows.len(), 2);
    }

    #[test]
    fn negative_requests_are_identity() {
        let cfg = tiny();
        let samples = generate_samples(&cfg.dataset).unwrap();
        let table = FeatureTable::build(32, &samples, Some(Split::Train), 4).unwrap();
        let enc = train_with_validation(&table, None, 32, &cfg.train)
            .unwrap()
            .encoder;
        let ex = classifier_examples(&enc, &samples, Split::Train, true).unwrap();
        let (head, _) = train_classifier_on(&ex, &cfg.classifier).unwrap();
        let all: Vec<&Sample> = samples.iter().take(20).collect();
        let r = controllability(&head, &enc, &all, DEFAULT_THRESHOLD, 3).unwrap();
        assert_eq!(r.negative_cases, 20);
        assert_eq!(r.negative_identical, 20);
        assert_eq!(r.full_cases + r.partial_cases, 20);
    }
}
