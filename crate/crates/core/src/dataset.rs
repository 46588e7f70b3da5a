//! Procedural clean scenes, compound degradation and JSONL manifests.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distortions::{
    apply_chain, kinds_to_labels, sample_spec, Category, DistortionKind, DistortionSpec, LabelSet,
};
use crate::imaging::io::{quantized, read_depth, read_image, write_depth, write_image};
use crate::imaging::{child_seed, fractal_noise, resize_to, DepthMap, Image, SeededRng};
use crate::prompts::{
    negative_targets_within, partial_targets, PromptGrammar, PromptMode, PromptStyle,
};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CONFIG_FILE: &str = "config.json";

/// Categories of the small preset used for quick training runs.
pub const TOY_CATEGORIES: [Category; 8] = [
    Category::Haze,
    Category::LowLight,
    Category::Contrast,
    Category::Brightness,
    Category::GaussianNoise,
    Category::DefocusBlur,
    Category::Pixelation,
    Category::ColorShift,
];

const CLEAN_SALT: u64 = 0xC1EA_0000_0000_0001;
const MAX_RESAMPLE: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Gradient,
    Shapes,
    Texture,
    Checker,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [
        SceneKind::Gradient,
        SceneKind::Shapes,
        SceneKind::Texture,
        SceneKind::Checker,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split '{}'", other))),
        }
    }
}

/// Split of item `index`: the fractional part of `index · φ⁻¹` (Fibonacci
/// hashing) against the cumulative fractions. Consecutive indices spread
/// evenly, so counts land within one item of the exact proportions.
pub fn split_for(index: u64, fractions: [f64; 3]) -> Split {
    let u = index.wrapping_mul(0x9E37_79B9_7F4A_7C15) as f64 / 18_446_744_073_709_551_616.0;
    if u < fractions[0] {
        Split::Train
    } else if u < fractions[0] + fractions[1] {
        Split::Val
    } else {
        Split::Test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Number of triplets.
    pub n_images: usize,
    pub n_max: usize,
    /// Probabilities of N = 1..=n_max; uniform when absent.
    pub n_distribution: Option<Vec<f64>>,
    /// full / partial / negative.
    pub mode_fractions: [f64; 3],
    /// train / val / test.
    pub split_fractions: [f64; 3],
    pub prompt_style: PromptStyle,
    pub image_size: usize,
    pub global_seed: u64,
    /// Degraded variants generated from each clean image.
    pub variants_per_clean: usize,
    /// Restricts the vocabulary; every category when absent.
    pub categories: Option<Vec<Category>>,
    pub scenes: Vec<SceneKind>,
    /// Directory of user images to use instead of procedural scenes.
    pub clean_dir: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_images: 1000,
            n_max: 3,
            n_distribution: None,
            mode_fractions: [0.70, 0.20, 0.10],
            split_fractions: [0.80, 0.19, 0.01],
            prompt_style: PromptStyle::Fixed,
            image_size: 64,
            global_seed: crate::DEFAULT_SEED,
            variants_per_clean: 4,
            categories: None,
            scenes: SceneKind::ALL.to_vec(),
            clean_dir: None,
        }
    }
}

fn sums_to_one(v: &[f64]) -> bool {
    v.iter().all(|p| *p >= 0.0 && p.is_finite()) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

impl DatasetConfig {
    /// The 8-category preset at 64 px.
    pub fn toy(n_images: usize) -> Self {
        DatasetConfig {
            n_images,
            categories: Some(TOY_CATEGORIES.to_vec()),
            ..Default::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: DatasetConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn vocabulary(&self) -> LabelSet {
        match &self.categories {
            Some(cs) => cs.iter().copied().collect(),
            None => LabelSet::full(),
        }
    }

    pub fn kinds(&self) -> Vec<DistortionKind> {
        let vocab = self.vocabulary();
        DistortionKind::ALL
            .into_iter()
            .filter(|k| vocab.contains(k.category()))
            .collect()
    }

    pub fn n_probs(&self) -> Vec<f64> {
        match &self.n_distribution {
            Some(p) => p.clone(),
            None => vec![1.0 / self.n_max as f64; self.n_max],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_max == 0 {
            return Err(Error::invalid("n_max must be >= 1"));
        }
        if self.image_size < 16 {
            return Err(Error::invalid(format!(
                "image_size {} < 16",
                self.image_size
            )));
        }
        if self.variants_per_clean == 0 {
            return Err(Error::invalid("variants_per_clean must be >= 1"));
        }
        if !sums_to_one(&self.mode_fractions) {
            return Err(Error::invalid("mode_fractions must sum to 1"));
        }
        if !sums_to_one(&self.split_fractions) {
            return Err(Error::invalid("split_fractions must sum to 1"));
        }
        let p = self.n_probs();
        if p.len() != self.n_max || !sums_to_one(&p) {
            return Err(Error::invalid(
                "n_distribution must have n_max entries summing to 1",
            ));
        }
        if self.vocabulary().is_empty() {
            return Err(Error::invalid("empty category list"));
        }
        if self.kinds().len() < self.n_max {
            return Err(Error::invalid(format!(
                "n_max {} exceeds the {} available distortion kinds",
                self.n_max,
                self.kinds().len()
            )));
        }
        if self.scenes.is_empty() && self.clean_dir.is_none() {
            return Err(Error::invalid("no scene kinds"));
        }
        Ok(())
    }

    /// Mode probabilities actually used, and N distributions conditional on
    /// partial and non-partial modes. Partial items need N >= 2; drawing N
    /// from `p(n | n >= 2)` for them and from the complementary mixture for
    /// the rest keeps both the N marginal and the mode mix exact. When the
    /// requested partial share exceeds `P(N >= 2)` the surplus becomes full.
    fn sampling_plan(&self) -> ([f64; 3], Vec<f64>, Vec<f64>) {
        let p = self.n_probs();
        let multi: f64 = p.iter().skip(1).sum();
        let mut modes = self.mode_fractions;
        if self.vocabulary().len() < 2 {
            modes[0] += modes[1];
            modes[1] = 0.0;
        }
        let fp = modes[1].min(multi);
        modes[0] += modes[1] - fp;
        modes[1] = fp;
        let partial: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(i, &pi)| {
                if i == 0 || multi == 0.0 {
                    0.0
                } else {
                    pi / multi
                }
            })
            .collect();
        let rest: Vec<f64> = if fp >= 1.0 {
            partial.clone()
        } else {
            p.iter()
                .zip(&partial)
                .map(|(&pi, &qi)| ((pi - fp * qi) / (1.0 - fp)).max(0.0))
                .collect()
        };
        (modes, partial, rest)
    }
}

fn draw(probs: &[f64], rng: &mut SeededRng) -> usize {
    let u = rng.uniform(0.0, 1.0);
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// One dataset row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triplet {
    pub id: String,
    pub clean_path: String,
    pub distorted_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<String>,
    pub prompt: String,
    pub applied_specs: Vec<DistortionSpec>,
    pub applied_labels: LabelSet,
    pub target_labels: LabelSet,
    pub mode: PromptMode,
    pub split: Split,
    pub seed: u64,
    pub clean_index: usize,
}

impl Triplet {
    pub fn kinds(&self) -> Vec<DistortionKind> {
        self.applied_specs
            .iter()
            .map(DistortionSpec::kind)
            .collect()
    }

    pub fn check(&self) -> Result<()> {
        let kinds = self.kinds();
        let mut uniq = kinds.clone();
        uniq.sort();
        uniq.dedup();
        if uniq.len() != kinds.len() || kinds.is_empty() {
            return Err(Error::invalid(format!(
                "item {}: duplicate or missing kinds",
                self.id
            )));
        }
        if kinds_to_labels(kinds) != self.applied_labels {
            return Err(Error::invalid(format!(
                "item {}: labels disagree with kinds",
                self.id
            )));
        }
        crate::prompts::RestorationRequest {
            targets: self.target_labels,
            mode: self.mode,
            surface_text: self.prompt.clone(),
        }
        .check(self.applied_labels)
    }
}

/// A triplet with its rasters in memory.
#[derive(Clone, Debug)]
pub struct Sample {
    pub triplet: Triplet,
    pub clean: Image,
    pub distorted: Image,
    pub depth: DepthMap,
}

fn lum(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn color(rng: &mut SeededRng) -> [f64; 3] {
    [
        rng.uniform(0.1, 0.9),
        rng.uniform(0.1, 0.9),
        rng.uniform(0.1, 0.9),
    ]
}

fn color_pair(rng: &mut SeededRng, min_gap: f64) -> ([f64; 3], [f64; 3]) {
    loop {
        let (a, b) = (color(rng), color(rng));
        if (lum(a) - lum(b)).abs() >= min_gap {
            return (a, b);
        }
    }
}

const CANON_SATURATION: f64 = 0.3;
const CANON_LOW: f64 = 0.05;
const CANON_HIGH: f64 = 0.95;

/// Gives a scene neutral white balance (equal channel means), a fixed mean
/// chroma and luminance percentiles 1/99 at 0.05/0.95, so that photometric
/// degradations are departures from a known baseline.
fn canonicalize(img: &Image) -> Result<Image> {
    let (h, w, _) = img.dims();
    let n = (h * w) as f64;
    let px = img.data();
    let means: Vec<f64> = (0..3)
        .map(|c| (0..h * w).map(|i| px[i * 3 + c]).sum::<f64>() / n)
        .collect();
    let grey = means.iter().sum::<f64>() / 3.0;
    let mut out: Vec<f64> = px
        .iter()
        .enumerate()
        .map(|(i, v)| v * grey / means[i % 3].max(1e-3))
        .collect();
    let luma = |p: &[f64]| {
        crate::imaging::LUMA_WEIGHTS
            .iter()
            .zip(p)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let chroma = |p: &[f64]| {
        p.iter().copied().fold(f64::MIN, f64::max) - p.iter().copied().fold(f64::MAX, f64::min)
    };
    let mean_chroma = out.chunks(3).map(chroma).sum::<f64>() / n;
    if mean_chroma > 1e-3 {
        let k = (CANON_SATURATION / mean_chroma).min(4.0);
        for p in out.chunks_mut(3) {
            let l = luma(p);
            for v in p.iter_mut() {
                *v = l + k * (*v - l);
            }
        }
    }
    let mut ls: Vec<f64> = out.chunks(3).map(luma).collect();
    ls.sort_by(f64::total_cmp);
    let lo = ls[((ls.len() - 1) as f64 * 0.01).round() as usize];
    let hi = ls[((ls.len() - 1) as f64 * 0.99).round() as usize];
    let gain = (CANON_HIGH - CANON_LOW) / (hi - lo).max(0.05);
    for v in out.iter_mut() {
        *v = (CANON_LOW + (*v - lo) * gain).clamp(0.0, 1.0);
    }
    Image::from_vec(h, w, 3, out)
}

/// A procedural clean image with a synthetic depth map (larger = farther).
/// Scenes are normalized to a common exposure, white balance and chroma.
pub fn generate_clean(
    size: usize,
    scene: SceneKind,
    rng: &mut SeededRng,
) -> Result<(Image, DepthMap)> {
    let (img, depth) = generate_scene(size, scene, rng)?;
    Ok((canonicalize(&img)?, depth))
}

fn generate_scene(size: usize, scene: SceneKind, rng: &mut SeededRng) -> Result<(Image, DepthMap)> {
    if size < 16 {
        return Err(Error::invalid(format!("scene size {} < 16", size)));
    }
    let n = size;
    let ramp = |i: usize| i as f64 / (n - 1) as f64;
    match scene {
        SceneKind::Gradient => {
            let (c0, c1) = color_pair(rng, 0.2);
            let tilt = rng.uniform(0.0, 0.4);
            let img = Image::from_fn(n, n, 3, |y, x, c| {
                let t = (1.0 - tilt) * ramp(y) + tilt * ramp(x);
                c0[c] + (c1[c] - c0[c]) * t
            })?;
            let depth = DepthMap::from_fn(n, n, |y, _| 1.0 - 0.8 * ramp(y))?;
            Ok((img, depth))
        }
        SceneKind::Shapes => {
            let (b0, b1) = color_pair(rng, 0.1);
            let mut img = Image::from_fn(n, n, 3, |y, _, c| b0[c] + (b1[c] - b0[c]) * ramp(y))?;
            let mut depth: Vec<f64> = (0..n * n).map(|i| 1.0 - 0.5 * ramp(i / n)).collect();
            let count = rng.uniform_int(3, 6) as usize;
            let mut near: Vec<f64> = (0..count).map(|_| rng.uniform(0.1, 0.5)).collect();
            near.sort_by(|a, b| b.total_cmp(a));
            for d in near {
                let col = color(rng);
                let cy = rng.uniform(0.0, n as f64);
                let cx = rng.uniform(0.0, n as f64);
                let r = rng.uniform(0.08, 0.25) * n as f64;
                let circle = rng.coin(0.5);
                for y in 0..n {
                    for x in 0..n {
                        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                        let inside = if circle {
                            dy * dy + dx * dx <= r * r
                        } else {
                            dy.abs() <= r && dx.abs() <= 0.7 * r
                        };
                        if inside {
                            for (c, v) in col.iter().enumerate() {
                                img.set(y, x, c, *v);
                            }
                            depth[y * n + x] = d;
                        }
                    }
                }
            }
            Ok((img, DepthMap::from_vec(n, n, depth)?))
        }
        SceneKind::Texture => {
            let (c0, c1) = color_pair(rng, 0.25);
            let scale = rng.uniform(0.15, 0.4) * n as f64;
            let base = fractal_noise(n, n, scale, 4, rng)?;
            let tint = fractal_noise(n, n, n as f64 * 0.5, 2, rng)?;
            let img = Image::from_fn(n, n, 3, |y, x, c| {
                let i = y * n + x;
                let v = c0[c] + (c1[c] - c0[c]) * base[i];
                v + 0.1 * (tint[i] - 0.5)
            })?;
            let relief = fractal_noise(n, n, n as f64 * 0.6, 2, rng)?;
            let depth = DepthMap::from_fn(n, n, |y, x| {
                0.15 + 0.55 * (1.0 - ramp(y)) + 0.3 * relief[y * n + x]
            })?;
            Ok((img, depth))
        }
        SceneKind::Checker => {
            let (a, b) = color_pair(rng, 0.25);
            let cell = rng.uniform_int(4, (n / 4) as i64) as usize;
            let oy = rng.index(cell);
            let ox = rng.index(cell);
            let img = Image::from_fn(n, n, 3, |y, x, c| {
                if ((y + oy) / cell + (x + ox) / cell) % 2 == 0 {
                    a[c]
                } else {
                    b[c]
                }
            })?;
            let depth =
                DepthMap::from_fn(n, n, |y, x| 0.3 + 0.5 * (1.0 - ramp(y)) + 0.2 * ramp(x))?;
            Ok((img, depth))
        }
    }
}

fn quantize_depth(d: &DepthMap) -> Result<DepthMap> {
    DepthMap::from_vec(
        d.height(),
        d.width(),
        d.data()
            .iter()
            .map(|v| (v * 255.0).round() / 255.0)
            .collect(),
    )
}

fn user_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| e.to_ascii_lowercase())
                    .as_deref(),
                Some("png" | "ppm" | "pgm" | "pnm")
            )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Empty(format!("no images in {}", dir.display())));
    }
    Ok(files)
}

/// Clean image and depth number `clean_index`, as stored on disk (8-bit).
pub fn clean_image(
    config: &DatasetConfig,
    clean_index: usize,
    user: &[PathBuf],
) -> Result<(Image, DepthMap)> {
    let mut rng = SeededRng::new(child_seed(
        config.global_seed ^ CLEAN_SALT,
        clean_index as u64,
    ));
    let n = config.image_size;
    let (img, depth) = if user.is_empty() {
        let scene = *rng.choose(&config.scenes);
        generate_clean(n, scene, &mut rng)?
    } else {
        let img = read_image(&user[clean_index % user.len()])?.to_rgb();
        let img = resize_to(&img, n, n)?;
        // without measured depth, assume the usual upper-far, lower-near layout
        let depth = DepthMap::from_fn(n, n, |y, _| 1.0 - 0.8 * y as f64 / (n - 1) as f64)?;
        (img, depth)
    };
    Ok((quantized(&img), quantize_depth(&depth)?))
}

struct Plan {
    modes: [f64; 3],
    n_partial: Vec<f64>,
    n_rest: Vec<f64>,
    kinds: Vec<DistortionKind>,
    vocab: LabelSet,
}

fn item_paths(index: usize, clean_index: usize) -> (String, String, String) {
    (
        format!("clean/{:06}.png", clean_index),
        format!("distorted/{:06}.png", index),
        format!("depth/{:06}.pgm", clean_index),
    )
}

fn make_item(
    config: &DatasetConfig,
    plan: &Plan,
    index: usize,
    clean: &Image,
    depth: &DepthMap,
) -> Result<Sample> {
    let seed = child_seed(config.global_seed, index as u64);
    let mut rng = SeededRng::new(seed);
    let mode = PromptMode::ALL[draw(&plan.modes, &mut rng)];
    let probs = if mode == PromptMode::Partial {
        &plan.n_partial
    } else {
        &plan.n_rest
    };
    let n = draw(probs, &mut rng) + 1;
    let mut kinds;
    let mut tries = 0;
    loop {
        kinds = rng
            .sample_indices(plan.kinds.len(), n)
            .into_iter()
            .map(|i| plan.kinds[i])
            .collect::<Vec<_>>();
        if mode != PromptMode::Partial || kinds_to_labels(kinds.iter().copied()).len() >= 2 {
            break;
        }
        tries += 1;
        if tries > MAX_RESAMPLE {
            return Err(Error::Degenerate(
                "cannot draw a partial-eligible kind set".into(),
            ));
        }
    }
    let specs: Vec<DistortionSpec> = kinds.iter().map(|&k| sample_spec(k, &mut rng)).collect();
    let applied = kinds_to_labels(kinds.iter().copied());
    let targets = match mode {
        PromptMode::Full => applied,
        PromptMode::Partial => partial_targets(applied, &mut rng)?,
        PromptMode::Negative => {
            let universe = if plan.vocab.difference(applied).is_empty() {
                LabelSet::full()
            } else {
                plan.vocab
            };
            negative_targets_within(applied, universe, &mut rng)?
        }
    };
    let prompt = PromptGrammar::builtin().render(targets, config.prompt_style, &mut rng)?;
    let distorted = quantized(&apply_chain(&specs, clean, Some(depth))?);
    let clean_index = index / config.variants_per_clean;
    let (clean_path, distorted_path, depth_path) = item_paths(index, clean_index);
    Ok(Sample {
        triplet: Triplet {
            id: format!("{:06}", index),
            clean_path,
            distorted_path,
            depth_path: Some(depth_path),
            prompt,
            applied_specs: specs,
            applied_labels: applied,
            target_labels: targets,
            mode,
            split: split_for(index as u64, config.split_fractions),
            seed,
            clean_index,
        },
        clean: clean.clone(),
        distorted,
        depth: depth.clone(),
    })
}

/// Generates every item in memory. Items are independent given the config,
/// so generation runs in parallel; output is ordered by id.
pub fn generate_samples(config: &DatasetConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    let (modes, n_partial, n_rest) = config.sampling_plan();
    let plan = Plan {
        modes,
        n_partial,
        n_rest,
        kinds: config.kinds(),
        vocab: config.vocabulary(),
    };
    let user = match &config.clean_dir {
        Some(d) => user_images(d)?,
        None => Vec::new(),
    };
    let v = config.variants_per_clean;
    let n_clean = config.n_images.div_ceil(v);
    let groups: Vec<Vec<Sample>> = (0..n_clean)
        .into_par_iter()
        .map(|ci| {
            let (clean, depth) = clean_image(config, ci, &user)?;
            (ci * v..((ci + 1) * v).min(config.n_images))
                .map(|i| make_item(config, &plan, i, &clean, &depth))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(groups.into_iter().flatten().collect())
}

/// Generates the dataset under `out_dir`: PNG images, PGM depth maps, the
/// manifest and a copy of the config.
pub fn build_dataset(config: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<Vec<Triplet>> {
    let out = out_dir.as_ref();
    let samples = generate_samples(config)?;
    for sub in ["clean", "distorted", "depth"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    samples.par_iter().try_for_each(|s| -> Result<()> {
        let t = &s.triplet;
        write_image(&s.distorted, out.join(&t.distorted_path))?;
        if t.id.parse::<usize>().ok() == Some(t.clean_index * config.variants_per_clean) {
            write_image(&s.clean, out.join(&t.clean_path))?;
            if let Some(dp) = &t.depth_path {
                write_depth(&s.depth, out.join(dp))?;
            }
        }
        Ok(())
    })?;
    let triplets: Vec<Triplet> = samples.into_iter().map(|s| s.triplet).collect();
    write_manifest(&triplets, out.join(MANIFEST_FILE))?;
    let cfg_path = out.join(CONFIG_FILE);
    fs::write(&cfg_path, serde_json::to_string_pretty(config)? + "\n")
        .map_err(|e| Error::io(&cfg_path, e))?;
    Ok(triplets)
}

pub fn write_manifest(triplets: &[Triplet], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for t in triplets {
        let mut v = serde_json::to_value(t)?;
        if let serde_json::Value::Object(map) = &mut v {
            map.insert("schema_version".into(), SCHEMA_VERSION.into());
        }
        serde_json::to_writer(&mut buf, &v)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<Triplet>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Manifest {
            line: i + 1,
            message,
        };
        let mut v: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let version = v
            .as_object_mut()
            .and_then(|m| m.remove("schema_version"))
            .and_then(|s| s.as_u64())
            .ok_or_else(|| bad("missing schema_version".into()))?;
        if version != SCHEMA_VERSION as u64 {
            return Err(bad(format!("unsupported schema_version {}", version)));
        }
        out.push(serde_json::from_value(v).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

/// Loads the rasters of every manifest row; paths resolve against the
/// manifest's directory.
pub fn load_samples(manifest: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let manifest = manifest.as_ref();
    let root = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_par_iter()
        .map(|t| {
            let clean = read_image(root.join(&t.clean_path))?;
            let distorted = read_image(root.join(&t.distorted_path))?;
            let depth = match &t.depth_path {
                Some(p) => read_depth(root.join(p))?,
                None => DepthMap::constant(clean.height(), clean.width(), 0.0)?,
            };
            Ok(Sample {
                triplet: t,
                clean,
                distorted,
                depth,
            })
        })
        .collect()
}

pub fn by_split(samples: &[Sample], split: Split) -> Vec<&Sample> {
    samples
        .iter()
        .filter(|s| s.triplet.split == split)
        .collect()
}
