//! Prompt-conditioned restoration: a plan over the requested categories,
//! executed with classical inverse operators.
//!
//! With the forward specs at hand (oracle mode) most inverses are algebraic
//! or regenerate the seeded layers they undo; without them, parameters are
//! estimated from the image and recorded in the plan.

use serde::{Deserialize, Serialize};

use crate::distortions::{
    cloud_layers, defocus_taps, fog_weights, mean_luminance, motion_kernel, rain_layer,
    smooth_field, snow_layers, BlurDirection, Category, DistortionSpec, LabelSet, NoiseMode,
    DEPTH_RANGE_METERS, REFERENCE_RESOLUTION,
};
use crate::embedding::{ClassifierHead, Encoder, DEFAULT_THRESHOLD};
use crate::imaging::{
    convolve2d, gaussian_blur, resize_to, warp, DepthMap, Image, Kernel, LUMA_WEIGHTS,
};
use crate::prompts::{PromptGrammar, PromptMode, RestorationRequest};
use crate::{Error, Result};

/// Inverse order for composite plans: occlusions, photometric, blur and
/// noise, geometric, resolution.
pub const CANONICAL_ORDER: [Category; 14] = [
    Category::Rain,
    Category::Snow,
    Category::Clouds,
    Category::Haze,
    Category::LowLight,
    Category::Brightness,
    Category::Contrast,
    Category::ColorShift,
    Category::GaussianNoise,
    Category::DefocusBlur,
    Category::MotionBlur,
    Category::ElasticWarp,
    Category::Refraction,
    Category::Pixelation,
];

const DECONV_ITERATIONS: usize = 60;
const FIELD_INVERSION_ITERATIONS: usize = 20;
const BACKPROJECT_ITERATIONS: usize = 10;
const EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// One pass in canonical order.
    Composite,
    /// User-issued step order.
    Sequential,
}

impl std::str::FromStr for PlanMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "composite" => Ok(PlanMode::Composite),
            "sequential" => Ok(PlanMode::Sequential),
            _ => Err(Error::invalid(format!("unknown plan mode {:?}", s))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Manual,
    Automated,
}

/// Which operator a step ran.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseOp {
    AlgebraicInverse,
    PercentileStretch,
    ColorBalance,
    DarkChannel,
    LayerInversion,
    MedianDetail,
    Deconvolution,
    UnsharpMask,
    DirectionalUnsharp,
    GaussianDenoise,
    MedianDenoise,
    FieldInversion,
    BlockUpsample,
    NoOp,
}

/// Parameters an inverse works from: the exact forward specs in oracle mode,
/// blind estimates otherwise (filled in as the step runs).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InverseHints {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub specs: Vec<DistortionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub haze_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impulse_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<f64>,
}

impl InverseHints {
    pub fn oracle(specs: Vec<DistortionSpec>) -> Self {
        InverseHints {
            specs,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub category: Category,
    pub op: Option<InverseOp>,
    pub hints: InverseHints,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestorationPlan {
    pub steps: Vec<PlanStep>,
    pub mode: PlanMode,
    pub source: PlanSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RestorationPlan {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn categories(&self) -> Vec<Category> {
        self.steps.iter().map(|s| s.category).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn canonical_rank(c: Category) -> usize {
    CANONICAL_ORDER
        .iter()
        .position(|&o| o == c)
        .expect("every category is ordered")
}

/// Plan over `order`, keeping only categories that are present, each once.
pub fn plan_ordered(
    order: &[Category],
    present: LabelSet,
    mode: PlanMode,
    source: PlanSource,
) -> RestorationPlan {
    let mut seen = LabelSet::empty();
    let mut steps = Vec::new();
    for &c in order {
        if present.contains(c) && !seen.contains(c) {
            seen.insert(c);
            steps.push(PlanStep {
                category: c,
                op: None,
                hints: InverseHints::default(),
            });
        }
    }
    if mode == PlanMode::Composite {
        steps.sort_by_key(|s| canonical_rank(s.category));
    }
    RestorationPlan {
        steps,
        mode,
        source,
        warnings: Vec::new(),
    }
}

/// Steps for `request.targets ∩ present`. Composite plans use the canonical
/// order; sequential plans follow the order the categories are mentioned in
/// the request text (canonical order when the text does not parse).
pub fn plan(request: &RestorationRequest, present: LabelSet, mode: PlanMode) -> RestorationPlan {
    let mut order: Vec<Category> = Vec::new();
    if mode == PlanMode::Sequential {
        if let Ok(parsed) = PromptGrammar::builtin().parse(&request.surface_text) {
            order.extend(parsed.matched_spans.iter().map(|s| s.category));
        }
    }
    order.extend(CANONICAL_ORDER);
    let order: Vec<Category> = order
        .into_iter()
        .filter(|c| request.targets.contains(*c))
        .collect();
    plan_ordered(&order, present, mode, PlanSource::Manual)
}

// ---------------------------------------------------------------------------
// pixel helpers

fn luma_plane(image: &Image) -> Vec<f64> {
    let (h, w, _) = image.dims();
    (0..h * w)
        .map(|i| image.luminance_at(i / w, i % w))
        .collect()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

fn clamp_image(image: &Image) -> Image {
    image.map(|v| v.clamp(0.0, 1.0))
}

/// Median over a `(2r+1)²` window with reflected borders.
fn median_filter(image: &Image, r: usize) -> Image {
    let (h, w, ch) = image.dims();
    let r = r as isize;
    let mut buf = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                buf.clear();
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sy = crate::imaging::reflect_index(y as isize + dy, h);
                        let sx = crate::imaging::reflect_index(x as isize + dx, w);
                        buf.push(image.get(sy, sx, c));
                    }
                }
                buf.sort_by(f64::total_cmp);
                out.set(y, x, c, buf[buf.len() / 2]);
            }
        }
    }
    out
}

/// Raw (unclamped) correlation of interleaved data with a square kernel,
/// reflected borders.
fn correlate_raw(
    data: &[f64],
    h: usize,
    w: usize,
    ch: usize,
    k: usize,
    kernel: &[f64],
) -> Vec<f64> {
    let half = (k / 2) as isize;
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            for ky in 0..k {
                let sy = crate::imaging::reflect_index(y as isize + ky as isize - half, h);
                for kx in 0..k {
                    let wgt = kernel[ky * k + kx];
                    if wgt == 0.0 {
                        continue;
                    }
                    let sx = crate::imaging::reflect_index(x as isize + kx as isize - half, w);
                    for c in 0..ch {
                        out[(y * w + x) * ch + c] += wgt * data[(sy * w + sx) * ch + c];
                    }
                }
            }
        }
    }
    out
}

/// Richardson–Lucy deconvolution for a normalized, point-symmetric kernel
/// (`k × k`, row-major), so the operator is its own adjoint up to borders.
fn richardson_lucy(observed: &Image, iterations: usize, k: usize, kernel: &[f64]) -> Result<Image> {
    let (h, w, ch) = observed.dims();
    let floor = 1e-4;
    let obs: Vec<f64> = observed.data().iter().map(|v| v.max(floor)).collect();
    let mut est = obs.clone();
    for _ in 0..iterations {
        let reblurred = correlate_raw(&est, h, w, ch, k, kernel);
        let ratio: Vec<f64> = obs
            .iter()
            .zip(&reblurred)
            .map(|(o, b)| o / b.max(floor))
            .collect();
        let corr = correlate_raw(&ratio, h, w, ch, k, kernel);
        for (e, c) in est.iter_mut().zip(corr) {
            *e = (*e * c).clamp(floor, 1.0);
        }
    }
    Image::from_vec(h, w, ch, est)
}

fn outer(taps: &[f64]) -> Vec<f64> {
    taps.iter()
        .flat_map(|a| taps.iter().map(move |b| a * b))
        .collect()
}

/// `x + amount · (x − G_σ x)`.
fn unsharp(image: &Image, sigma: f64, amount: f64) -> Result<Image> {
    let blurred = gaussian_blur(image, sigma)?;
    Image::from_vec(
        image.height(),
        image.width(),
        image.channels(),
        image
            .data()
            .iter()
            .zip(blurred.data())
            .map(|(x, b)| (x + amount * (x - b)).clamp(0.0, 1.0))
            .collect(),
    )
}

/// Noise level from the median absolute Laplacian-like residual.
fn estimate_noise_sigma(image: &Image) -> f64 {
    let l = luma_plane(image);
    let (h, w) = (image.height(), image.width());
    let mut r = Vec::with_capacity(h * w);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let v = 4.0 * l[y * w + x]
                - l[y * w + x - 1]
                - l[y * w + x + 1]
                - l[(y - 1) * w + x]
                - l[(y + 1) * w + x];
            r.push(v.abs());
        }
    }
    if r.is_empty() {
        return 0.0;
    }
    // the 5-point Laplacian of white noise has standard deviation √20 σ
    quantile(&sorted(r), 0.5) / (0.6745 * 20f64.sqrt())
}

/// Fraction of pixels that are isolated extremes (saturated and unlike the
/// neighbourhood median).
fn impulse_fraction(image: &Image) -> f64 {
    let med = median_filter(image, 1);
    let (h, w, ch) = image.dims();
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            let extreme = (0..ch).all(|c| {
                let v = image.get(y, x, c);
                v <= 0.5 / 255.0 || v >= 254.5 / 255.0
            });
            let far = (0..ch).any(|c| (image.get(y, x, c) - med.get(y, x, c)).abs() > 0.25);
            n += (extreme && far) as usize;
        }
    }
    n as f64 / (h * w) as f64
}

/// Replaces only the impulse pixels by the local median.
fn adaptive_median(image: &Image) -> Image {
    let med = median_filter(image, 1);
    let (h, w, ch) = image.dims();
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let extreme = (0..ch).all(|c| {
                let v = image.get(y, x, c);
                v <= 0.5 / 255.0 || v >= 254.5 / 255.0
            });
            let far = (0..ch).any(|c| (image.get(y, x, c) - med.get(y, x, c)).abs() > 0.1);
            if extreme && far {
                for c in 0..ch {
                    out.set(y, x, c, med.get(y, x, c));
                }
            }
        }
    }
    out
}

const DCT_BLOCK: usize = 8;
const DCT_THRESHOLD: f64 = 2.7;

fn dct_basis() -> [[f64; DCT_BLOCK]; DCT_BLOCK] {
    let n = DCT_BLOCK as f64;
    let mut m = [[0.0; DCT_BLOCK]; DCT_BLOCK];
    for (k, row) in m.iter_mut().enumerate() {
        let scale = if k == 0 {
            (1.0 / n).sqrt()
        } else {
            (2.0 / n).sqrt()
        };
        for (i, v) in row.iter_mut().enumerate() {
            *v = scale * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n).cos();
        }
    }
    m
}

/// Sliding-window 8×8 DCT hard thresholding at 2.7σ, aggregated with
/// sparsity weights. Colour images are filtered in an orthonormal opponent
/// space so i.i.d. channel noise keeps its σ.
fn gaussian_denoise(image: &Image, sigma_noise: f64) -> Result<Image> {
    let (h, w, ch) = image.dims();
    if h < DCT_BLOCK || w < DCT_BLOCK || sigma_noise <= 0.0 {
        return Ok(image.clone());
    }
    let (r2, r3, r6) = (2f64.sqrt(), 3f64.sqrt(), 6f64.sqrt());
    let fwd = [
        [1.0 / r3, 1.0 / r3, 1.0 / r3],
        [1.0 / r2, 0.0, -1.0 / r2],
        [1.0 / r6, -2.0 / r6, 1.0 / r6],
    ];
    let planes: Vec<Vec<f64>> = if ch == 3 {
        (0..3)
            .map(|k| {
                (0..h * w)
                    .map(|i| (0..3).map(|c| fwd[k][c] * image.data()[i * 3 + c]).sum())
                    .collect()
            })
            .collect()
    } else {
        (0..ch)
            .map(|c| (0..h * w).map(|i| image.data()[i * ch + c]).collect())
            .collect()
    };
    let basis = dct_basis();
    let thr = DCT_THRESHOLD * sigma_noise;
    let filtered: Vec<Vec<f64>> = planes
        .iter()
        .map(|p| dct_threshold_plane(p, h, w, &basis, thr))
        .collect();
    let mut data = vec![0.0; h * w * ch];
    for i in 0..h * w {
        for c in 0..ch {
            data[i * ch + c] = if ch == 3 {
                // the opponent transform is orthonormal, so its inverse is the transpose
                (0..3).map(|k| fwd[k][c] * filtered[k][i]).sum()
            } else {
                filtered[c][i]
            };
        }
    }
    Image::from_vec(h, w, ch, data)
}

fn dct_threshold_plane(
    plane: &[f64],
    h: usize,
    w: usize,
    m: &[[f64; DCT_BLOCK]; DCT_BLOCK],
    thr: f64,
) -> Vec<f64> {
    const B: usize = DCT_BLOCK;
    let mut acc = vec![0.0; h * w];
    let mut wsum = vec![0.0; h * w];
    let mut block = [[0.0; B]; B];
    let mut tmp = [[0.0; B]; B];
    for y0 in 0..=h - B {
        for x0 in 0..=w - B {
            for i in 0..B {
                block[i].copy_from_slice(&plane[(y0 + i) * w + x0..(y0 + i) * w + x0 + B]);
            }
            // coefficients = M · block · Mᵀ
            for k in 0..B {
                for j in 0..B {
                    tmp[k][j] = (0..B).map(|i| m[k][i] * block[i][j]).sum();
                }
            }
            let mut kept = 0usize;
            for k in 0..B {
                for l in 0..B {
                    let c: f64 = (0..B).map(|j| tmp[k][j] * m[l][j]).sum();
                    block[k][l] = if (k == 0 && l == 0) || c.abs() > thr {
                        kept += 1;
                        c
                    } else {
                        0.0
                    };
                }
            }
            // back: Mᵀ · coefficients · M
            for i in 0..B {
                for l in 0..B {
                    tmp[i][l] = (0..B).map(|k| m[k][i] * block[k][l]).sum();
                }
            }
            let wt = 1.0 / kept as f64;
            for i in 0..B {
                for j in 0..B {
                    let v: f64 = (0..B).map(|l| tmp[i][l] * m[l][j]).sum();
                    let idx = (y0 + i) * w + x0 + j;
                    acc[idx] += wt * v;
                    wsum[idx] += wt;
                }
            }
        }
    }
    acc.iter().zip(&wsum).map(|(a, s)| a / s).collect()
}

fn per_pixel(image: &Image, mut f: impl FnMut(usize, usize, &[f64], &mut [f64])) -> Image {
    image.map_pixels(|y, x, px, out| f(y, x, px, out))
}

fn require_depth<'a>(
    depth: Option<&'a DepthMap>,
    image: &Image,
    what: &str,
) -> Result<&'a DepthMap> {
    let d = depth.ok_or_else(|| Error::MissingDepth(what.to_string()))?;
    if !d.matches(image) {
        return Err(Error::DimensionMismatch(
            "depth map does not match image".into(),
        ));
    }
    Ok(d)
}

// ---------------------------------------------------------------------------
// oracle inverses

fn invert_overexpose(y: f64, factor: f64, threshold: f64) -> f64 {
    let boosted = if y > threshold {
        let t = ((y - threshold) / (1.0 - threshold)).min(1.0 - 1e-9);
        threshold + (1.0 - threshold) * t.atanh()
    } else {
        y
    };
    (boosted.max(0.0) / factor).powf(factor)
}

fn invert_underexpose(y: f64, factor: f64, shadow: f64) -> f64 {
    let y = y.max(0.0);
    let g = if y < shadow { (y * shadow).sqrt() } else { y };
    g.powf(factor)
}

/// Exact inverse of one forward spec, up to clamping and quantization.
pub fn invert_spec(
    spec: &DistortionSpec,
    image: &Image,
    depth: Option<&DepthMap>,
) -> Result<(Image, InverseOp)> {
    let (h, w, ch) = image.dims();
    use DistortionSpec as S;
    let out = match spec {
        S::LowLight { factor } => (image.map(|v| v / factor), InverseOp::AlgebraicInverse),
        S::Contrast { factor } => {
            // the forward map keeps the mean luminance
            let mu = mean_luminance(image);
            (
                image.map(|v| mu + (v - mu) / factor),
                InverseOp::AlgebraicInverse,
            )
        }
        S::Saturation { factor } => {
            if ch == 1 {
                (image.clone(), InverseOp::NoOp)
            } else {
                let out = per_pixel(image, |y, x, px, out| {
                    let l = image.luminance_at(y, x);
                    for c in 0..3 {
                        out[c] = l + (px[c] - l) / factor;
                    }
                });
                (out, InverseOp::AlgebraicInverse)
            }
        }
        S::ColorJitter {
            shift,
            cast,
            cast_intensity,
        } => {
            let a = *cast_intensity;
            let rgb = cast.rgb();
            let out = if ch == 1 {
                let gain = 1.0 + shift.iter().sum::<f64>() / 3.0;
                let tone = LUMA_WEIGHTS
                    .iter()
                    .zip(rgb)
                    .map(|(w, c)| w * c)
                    .sum::<f64>();
                image.map(|v| (v - a * tone) / ((1.0 - a) * gain))
            } else {
                per_pixel(image, |_, _, px, out| {
                    for c in 0..3 {
                        out[c] = (px[c] - a * rgb[c]) / ((1.0 - a) * (1.0 + shift[c]));
                    }
                })
            };
            (out, InverseOp::AlgebraicInverse)
        }
        S::Overexposure { factor, threshold } => (
            image.map(|v| invert_overexpose(v, *factor, *threshold)),
            InverseOp::AlgebraicInverse,
        ),
        S::Underexposure {
            factor,
            shadow_threshold,
            noise_sigma,
            ..
        } => {
            // the added noise is luminance-weighted; smooth it before undoing the tone curve
            let smoothed = gaussian_denoise(image, 0.5 * noise_sigma)?;
            (
                smoothed.map(|v| invert_underexpose(v, *factor, *shadow_threshold)),
                InverseOp::AlgebraicInverse,
            )
        }
        S::Haze { alpha } => {
            let d = require_depth(depth, image, "haze inversion")?;
            let out = per_pixel(image, |y, x, px, out| {
                let t = d.get(y, x) * alpha;
                for c in 0..px.len() {
                    out[c] = (px[c] - t) / (1.0 - t).max(EPS);
                }
            });
            (out, InverseOp::AlgebraicInverse)
        }
        S::Clouds {
            opacity,
            shadow,
            blur_scale,
            seed,
        } => {
            let (cover, shade) = cloud_layers(h, w, *opacity, *blur_scale, *seed)?;
            let out = per_pixel(image, |y, x, px, out| {
                let i = y * w + x;
                for c in 0..px.len() {
                    let darkened = (px[c] - cover[i]) / (1.0 - cover[i]).max(0.05);
                    out[c] = darkened / (1.0 - shadow * shade[i]).max(0.05);
                }
            });
            (out, InverseOp::LayerInversion)
        }
        S::Rain {
            kernels,
            zoom,
            visibility,
            opacity,
            angle,
            seed,
        } => {
            let d = require_depth(depth, image, "rain inversion")?;
            let streaks = rain_layer(h, w, *kernels, *zoom, *angle, *seed)?;
            let fog = fog_weights(d, 0.9, *visibility, DEPTH_RANGE_METERS);
            let out = per_pixel(image, |y, x, px, out| {
                let i = y * w + x;
                for c in 0..px.len() {
                    let v = (px[c] - fog[i]) / (1.0 - fog[i]).max(0.05);
                    out[c] = 1.0 - (1.0 - v) / (1.0 - opacity * streaks[i]).max(0.05);
                }
            });
            (out, InverseOp::LayerInversion)
        }
        S::Snow { visibility, seed } => {
            let d = require_depth(depth, image, "snow inversion")?;
            let layers = snow_layers(h, w, *seed)?;
            let fog = fog_weights(d, 0.95, *visibility, DEPTH_RANGE_METERS);
            let out = per_pixel(image, |y, x, px, out| {
                let i = y * w + x;
                for c in 0..px.len() {
                    let mut v = px[c];
                    for l in layers.iter().rev() {
                        v = 1.0 - (1.0 - v) / (1.0 - l[i]).max(0.05);
                    }
                    out[c] = (v - fog[i]) / (1.0 - fog[i]).max(0.05);
                }
            });
            // flakes that saturate to white cannot be undone; fill them from the neighbourhood
            let filled = fill_saturated(&clamp_image(&out), image)?;
            (filled, InverseOp::LayerInversion)
        }
        S::Raindrops { drops, .. } => {
            let scale = h.min(w) as f64 / REFERENCE_RESOLUTION;
            let mut mask = vec![false; h * w];
            for drop in drops {
                let r = (drop.radius * scale).max(1.5);
                let (cy, cx) = (drop.y * (h - 1) as f64, drop.x * (w - 1) as f64);
                for y in 0..h {
                    for x in 0..w {
                        if (y as f64 - cy).hypot(x as f64 - cx) <= r {
                            mask[y * w + x] = true;
                        }
                    }
                }
            }
            (inpaint(image, &mask)?, InverseOp::MedianDetail)
        }
        S::GaussianNoise { mode, level, .. } => match mode {
            NoiseMode::Gaussian => (gaussian_denoise(image, *level)?, InverseOp::GaussianDenoise),
            NoiseMode::SaltPepper => (adaptive_median(image), InverseOp::MedianDenoise),
        },
        S::DefocusBlur { kernel_size } => {
            let taps = defocus_taps(*kernel_size);
            let out = richardson_lucy(image, DECONV_ITERATIONS, taps.len(), &outer(&taps))?;
            (out, InverseOp::Deconvolution)
        }
        S::MotionBlur {
            kernel_size,
            direction,
            depth_mask,
        } => {
            let k = motion_kernel(*kernel_size, *direction);
            let deconv = richardson_lucy(image, DECONV_ITERATIONS, k.size(), k.data())?;
            let out = match depth_mask {
                None => deconv,
                Some(mask) => {
                    let d = require_depth(depth, image, "masked motion blur inversion")?;
                    per_pixel(image, |y, x, px, out| {
                        let near = d.get(y, x) < mask.threshold;
                        if near == mask.foreground {
                            let i = deconv.index(y, x, 0);
                            out.copy_from_slice(&deconv.data()[i..i + px.len()]);
                        } else {
                            out.copy_from_slice(px);
                        }
                    })
                }
            };
            (out, InverseOp::Deconvolution)
        }
        S::ElasticWarp { sigma, alpha, seed } => {
            let field = smooth_field(h, w, *sigma, *alpha, true, *seed)?;
            (
                warp(image, &field.inverted(FIELD_INVERSION_ITERATIONS))?,
                InverseOp::FieldInversion,
            )
        }
        S::Refraction {
            strength,
            sigma,
            seed,
        } => {
            let field = smooth_field(h, w, *sigma, *strength, false, *seed)?;
            (
                warp(image, &field.inverted(FIELD_INVERSION_ITERATIONS))?,
                InverseOp::FieldInversion,
            )
        }
        S::Pixelation { factor } => {
            if *factor <= 1.0 {
                (image.clone(), InverseOp::NoOp)
            } else {
                let lh = ((h as f64 / factor).round() as usize).max(1);
                let lw = ((w as f64 / factor).round() as usize).max(1);
                (block_upsample(image, lh, lw)?, InverseOp::BlockUpsample)
            }
        }
    };
    Ok((clamp_image(&out.0), out.1))
}

/// Replaces saturated pixels that were not saturated in `reference`'s
/// neighbourhood median by that median.
fn fill_saturated(restored: &Image, observed: &Image) -> Result<Image> {
    let (h, w, ch) = observed.dims();
    let mask: Vec<bool> = (0..h * w)
        .map(|i| (0..ch).all(|c| observed.data()[i * ch + c] >= 0.98))
        .collect();
    if mask.iter().all(|m| !m) {
        return Ok(restored.clone());
    }
    inpaint(restored, &mask)
}

/// Fills masked pixels by normalized Gaussian averaging of unmasked ones,
/// growing the radius until every pixel is covered.
fn inpaint(image: &Image, mask: &[bool]) -> Result<Image> {
    let (h, w, ch) = image.dims();
    if mask.iter().all(|m| *m) {
        return Ok(image.clone());
    }
    let known: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
    let mut out = image.clone();
    let mut todo: Vec<usize> = (0..h * w).filter(|&i| mask[i]).collect();
    let mut sigma = 1.0;
    while !todo.is_empty() && sigma < (h.max(w) as f64) {
        let wsum = crate::imaging::blur_plane(&known, h, w, sigma)?;
        let mut planes = Vec::with_capacity(ch);
        for c in 0..ch {
            let p: Vec<f64> = (0..h * w)
                .map(|i| image.data()[i * ch + c] * known[i])
                .collect();
            planes.push(crate::imaging::blur_plane(&p, h, w, sigma)?);
        }
        todo.retain(|&i| {
            if wsum[i] > 1e-3 {
                for (c, p) in planes.iter().enumerate() {
                    out.set(i / w, i % w, c, (p[i] / wsum[i]).clamp(0.0, 1.0));
                }
                false
            } else {
                true
            }
        });
        sigma *= 2.0;
    }
    Ok(out)
}

/// Reads one sample per block of a nearest-upsampled image, then bicubic
/// upsampling refined by back-projection onto the block grid.
fn block_upsample(image: &Image, lh: usize, lw: usize) -> Result<Image> {
    let (h, w, ch) = image.dims();
    // output row y of a nearest upsample reads low row ⌊(y + ½)·lh/h⌋
    let rep = |i: usize, n: usize, ln: usize| -> usize {
        let y = (((i as f64 + 0.5) * n as f64 / ln as f64) - 0.5)
            .round()
            .max(0.0) as usize;
        y.min(n - 1)
    };
    let low = Image::from_fn(lh, lw, ch, |i, j, c| {
        image.get(rep(i, h, lh), rep(j, w, lw), c)
    })?;
    let mut est = resize_to(&low, h, w)?;
    for _ in 0..BACKPROJECT_ITERATIONS {
        let down = resize_to(&est, lh, lw)?;
        let resid = Image::from_vec(
            lh,
            lw,
            ch,
            low.data()
                .iter()
                .zip(down.data())
                .map(|(a, b)| a - b)
                .collect(),
        )?;
        let up = resize_to(&resid.map(|v| 0.5 + 0.5 * v), h, w)?;
        est = Image::from_vec(
            h,
            w,
            ch,
            est.data()
                .iter()
                .zip(up.data())
                .map(|(e, u)| (e + 2.0 * (u - 0.5)).clamp(0.0, 1.0))
                .collect(),
        )?;
    }
    Ok(est)
}

// ---------------------------------------------------------------------------
// blind inverses

fn percentile_stretch(image: &Image, lo_target: f64, hi_target: f64) -> (Image, f64) {
    let l = sorted(luma_plane(image));
    let (lo, hi) = (quantile(&l, 0.01), quantile(&l, 0.99));
    let gain = (hi_target - lo_target) / (hi - lo).max(0.05);
    (image.map(|v| lo_target + (v - lo) * gain), gain)
}

fn gray_world(image: &Image) -> Image {
    if image.channels() != 3 {
        return image.clone();
    }
    let n = (image.height() * image.width()) as f64;
    let means: Vec<f64> = (0..3)
        .map(|c| image.channel(c).iter().sum::<f64>() / n)
        .collect();
    let grey = means.iter().sum::<f64>() / 3.0;
    let d = image.data();
    Image::from_vec(
        image.height(),
        image.width(),
        3,
        d.iter()
            .enumerate()
            .map(|(i, v)| v * grey / means[i % 3].max(1e-3))
            .collect(),
    )
    .expect("same dims")
}

fn dark_channel(image: &Image, r: usize) -> Vec<f64> {
    let (h, w, ch) = image.dims();
    let minc: Vec<f64> = (0..h * w)
        .map(|i| {
            image.data()[i * ch..(i + 1) * ch]
                .iter()
                .copied()
                .fold(f64::MAX, f64::min)
        })
        .collect();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut m = f64::MAX;
            for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    m = m.min(minc[yy * w + xx]);
                }
            }
            out[y * w + x] = m;
        }
    }
    out
}

/// Haze removal without the forward parameters: the (white-airlight) dark
/// channel estimates the veil `t`; with depth, `t = α̂·D` for a fitted α̂.
fn dehaze_blind(
    image: &Image,
    depth: Option<&DepthMap>,
    hints: &mut InverseHints,
    warnings: &mut Vec<String>,
) -> Result<Image> {
    let (h, w, _) = image.dims();
    let dark = dark_channel(image, 2);
    let veil: Vec<f64> = match depth.filter(|d| d.matches(image)) {
        Some(d) => {
            let mut ratios: Vec<f64> = (0..h * w)
                .filter(|&i| d.data()[i] > 0.2)
                .map(|i| dark[i] / d.data()[i])
                .collect();
            let alpha = if ratios.is_empty() {
                0.0
            } else {
                ratios.sort_by(f64::total_cmp);
                quantile(&ratios, 0.1).clamp(0.0, 0.9)
            };
            hints.haze_alpha = Some(alpha);
            d.data().iter().map(|v| v * alpha).collect()
        }
        None => {
            warnings.push("haze: no depth map, using a global dark-channel veil".into());
            let smooth = crate::imaging::blur_plane(&dark, h, w, 3.0)?;
            smooth.iter().map(|v| (0.95 * v).clamp(0.0, 0.9)).collect()
        }
    };
    Ok(per_pixel(image, |y, x, px, out| {
        let t = veil[y * w + x];
        for c in 0..px.len() {
            out[c] = (px[c] - t) / (1.0 - t).max(0.1);
        }
    }))
}

/// Unsharp strength along the blur direction, which is where gradients are weakest.
fn directional_unsharp(image: &Image) -> Result<Image> {
    let l = luma_plane(image);
    let (h, w) = (image.height(), image.width());
    let energy = |dy: isize, dx: isize| -> f64 {
        let mut s = 0.0;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let (y2, x2) = ((y as isize + dy) as usize, (x as isize + dx) as usize);
                s += (l[y2 * w + x2] - l[y * w + x]).abs();
            }
        }
        s
    };
    let dirs = [
        (BlurDirection::Horizontal, energy(0, 1)),
        (BlurDirection::Vertical, energy(1, 0)),
        (BlurDirection::Diagonal, energy(1, 1)),
        (BlurDirection::Antidiagonal, energy(1, -1)),
    ];
    let dir = dirs
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|d| d.0)
        .expect("four directions");
    let k: Kernel = motion_kernel(5, dir);
    let blurred = convolve2d(image, &k)?;
    Image::from_vec(
        h,
        w,
        image.channels(),
        image
            .data()
            .iter()
            .zip(blurred.data())
            .map(|(x, b)| (x + (x - b)).clamp(0.0, 1.0))
            .collect(),
    )
}

/// Grid of a nearest-upsampled image: the fewest blocks per axis whose
/// boundaries contain every position where the image changes.
fn estimate_blocks(image: &Image) -> (usize, usize) {
    let (h, w, ch) = image.dims();
    let d = image.data();
    let differs = |a: usize, b: usize| (0..ch).any(|c| d[a * ch + c] != d[b * ch + c]);
    let cols: Vec<usize> = (1..w)
        .filter(|&x| (0..h).any(|y| differs(y * w + x, y * w + x - 1)))
        .collect();
    let rows: Vec<usize> = (1..h)
        .filter(|&y| (0..w).any(|x| differs(y * w + x, (y - 1) * w + x)))
        .collect();
    let cell = |i: usize, n: usize, ln: usize| {
        (((i as f64 + 0.5) * ln as f64 / n as f64) as usize).min(ln - 1)
    };
    let fit = |changes: &[usize], n: usize| -> usize {
        (changes.len() + 1..=n)
            .find(|&ln| {
                changes
                    .iter()
                    .all(|&i| cell(i, n, ln) != cell(i - 1, n, ln))
            })
            .unwrap_or(n)
    };
    (fit(&rows, h), fit(&cols, w))
}

fn invert_blind(
    category: Category,
    image: &Image,
    depth: Option<&DepthMap>,
    hints: &mut InverseHints,
    warnings: &mut Vec<String>,
) -> Result<(Image, InverseOp)> {
    use Category as C;
    Ok(match category {
        C::LowLight => {
            let l = sorted(luma_plane(image));
            let gain = (0.95 / quantile(&l, 0.99).max(1e-3)).clamp(1.0, 2.5);
            hints.gain = Some(gain);
            (image.map(|v| v * gain), InverseOp::AlgebraicInverse)
        }
        C::Brightness | C::Contrast => {
            let (out, gain) = percentile_stretch(image, 0.05, 0.95);
            hints.gain = Some(gain);
            (out, InverseOp::PercentileStretch)
        }
        C::ColorShift => (gray_world(image), InverseOp::ColorBalance),
        C::Haze => (
            dehaze_blind(image, depth, hints, warnings)?,
            InverseOp::DarkChannel,
        ),
        C::Clouds => (
            dehaze_blind(image, None, hints, warnings)?,
            InverseOp::DarkChannel,
        ),
        C::Rain | C::Snow => {
            let med = median_filter(image, 1);
            let base = dehaze_blind(&med, depth, hints, warnings)?;
            (base, InverseOp::MedianDetail)
        }
        C::GaussianNoise => {
            let imp = impulse_fraction(image);
            hints.impulse_fraction = Some(imp);
            if imp > 0.005 {
                (adaptive_median(image), InverseOp::MedianDenoise)
            } else {
                let s = estimate_noise_sigma(image);
                hints.noise_sigma = Some(s);
                (gaussian_denoise(image, s)?, InverseOp::GaussianDenoise)
            }
        }
        C::DefocusBlur => {
            hints.blur_sigma = Some(1.5);
            (unsharp(image, 1.5, 1.0)?, InverseOp::UnsharpMask)
        }
        C::MotionBlur => (directional_unsharp(image)?, InverseOp::DirectionalUnsharp),
        C::ElasticWarp | C::Refraction => {
            warnings.push(format!(
                "{}: field inversion needs the forward parameters; left unchanged",
                category
            ));
            (image.clone(), InverseOp::NoOp)
        }
        C::Pixelation => {
            let (bh, bw) = estimate_blocks(image);
            hints.block_size = Some(image.width() as f64 / bw as f64);
            if bh >= image.height() && bw >= image.width() {
                (image.clone(), InverseOp::NoOp)
            } else {
                (block_upsample(image, bh, bw)?, InverseOp::BlockUpsample)
            }
        }
    })
}

/// Inverse for one category. Oracle specs in `hints` (applied last-first)
/// take precedence over blind estimation.
pub fn invert(
    category: Category,
    image: &Image,
    depth: Option<&DepthMap>,
    hints: &InverseHints,
) -> Result<Image> {
    let mut h = hints.clone();
    Ok(invert_step(category, image, depth, &mut h, &mut Vec::new())?.0)
}

fn invert_step(
    category: Category,
    image: &Image,
    depth: Option<&DepthMap>,
    hints: &mut InverseHints,
    warnings: &mut Vec<String>,
) -> Result<(Image, InverseOp)> {
    if hints.specs.is_empty() {
        let (out, op) = invert_blind(category, image, depth, hints, warnings)?;
        return Ok((clamp_image(&out), op));
    }
    if let Some(s) = hints.specs.iter().find(|s| s.category() != category) {
        return Err(Error::invalid(format!(
            "{} spec given for a {} step",
            s.kind(),
            category
        )));
    }
    let mut out = image.clone();
    let mut op = InverseOp::NoOp;
    for spec in hints.specs.iter().rev() {
        let (next, o) = invert_spec(spec, &out, depth)?;
        out = next;
        op = o;
    }
    Ok((out, op))
}

/// Executes a plan. Oracle specs (forward order) are attached to the steps
/// of their categories; an empty plan returns the input unchanged.
pub fn execute(
    plan: &mut RestorationPlan,
    image: &Image,
    depth: Option<&DepthMap>,
    known_specs: Option<&[DistortionSpec]>,
) -> Result<Image> {
    if plan.steps.is_empty() {
        return Ok(image.clone());
    }
    let mut out = image.clone();
    for step in plan.steps.iter_mut() {
        if let Some(specs) = known_specs {
            step.hints.specs = specs
                .iter()
                .filter(|s| s.category() == step.category)
                .cloned()
                .collect();
            if step.hints.specs.is_empty() {
                plan.warnings.push(format!(
                    "{}: no forward spec known, estimating blind",
                    step.category
                ));
            }
        }
        let (next, op) = invert_step(
            step.category,
            &out,
            depth,
            &mut step.hints,
            &mut plan.warnings,
        )?;
        step.op = Some(op);
        out = next;
    }
    Ok(out)
}

/// Restores the categories a request targets. `present` defaults to the
/// categories of `known_specs` (oracle mode) and to the request targets
/// otherwise, so a request always acts on what it names unless the caller
/// knows better.
pub fn restore(
    request: &RestorationRequest,
    image: &Image,
    depth: Option<&DepthMap>,
    known_specs: Option<&[DistortionSpec]>,
    mode: PlanMode,
) -> Result<(Image, RestorationPlan)> {
    let present = match known_specs {
        Some(specs) => specs.iter().map(|s| s.category()).collect(),
        None => request.targets,
    };
    restore_present(request, present, image, depth, known_specs, mode)
}

/// As [`restore`], with the present label set given explicitly (e.g. from
/// the classifier).
pub fn restore_present(
    request: &RestorationRequest,
    present: LabelSet,
    image: &Image,
    depth: Option<&DepthMap>,
    known_specs: Option<&[DistortionSpec]>,
    mode: PlanMode,
) -> Result<(Image, RestorationPlan)> {
    let mut p = plan(request, present, mode);
    let out = execute(&mut p, image, depth, known_specs)?;
    Ok((out, p))
}

/// Classifier-driven restoration: predicted labels become a full-mode
/// request. A clean prediction leaves the image untouched.
pub fn auto_restore(
    image: &Image,
    depth: Option<&DepthMap>,
    classifier: &ClassifierHead,
    encoder: &Encoder,
    mode: PlanMode,
) -> Result<(Image, RestorationPlan, Option<String>)> {
    let labels = classifier.predict_labels(&encoder.encode(image)?, DEFAULT_THRESHOLD);
    let mut p = plan_ordered(&CANONICAL_ORDER, labels, mode, PlanSource::Automated);
    if labels.is_empty() {
        p.warnings
            .push("no distortion detected; image returned unchanged".into());
        return Ok((image.clone(), p, None));
    }
    let prompt = crate::embedding::to_auto_prompt(labels)?;
    let request = RestorationRequest {
        targets: labels,
        mode: PromptMode::Full,
        surface_text: prompt.clone(),
    };
    let mut p = plan(&request, labels, mode);
    p.source = PlanSource::Automated;
    let out = execute(&mut p, image, depth, None)?;
    Ok((out, p, Some(prompt)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_clean, SceneKind};
    use crate::distortions::{apply, sample_spec, DistortionKind};
    use crate::eval::psnr;
    use crate::imaging::io::quantized;
    use crate::imaging::SeededRng;
    use proptest::prelude::*;

    fn req(targets: &[Category], text: &str) -> RestorationRequest {
        RestorationRequest {
            targets: targets.iter().copied().collect(),
            mode: PromptMode::Full,
            surface_text: text.into(),
        }
    }

    fn scene(seed: u64) -> (Image, DepthMap) {
        let (img, d) = generate_clean(64, SceneKind::Shapes, &mut SeededRng::new(seed)).unwrap();
        (quantized(&img), d)
    }

    #[test]
    fn plan_examples() {
        let present: LabelSet = [Category::Haze, Category::DefocusBlur]
            .into_iter()
            .collect();
        assert!(plan(
            &req(&[Category::Snow], "remove snow"),
            present,
            PlanMode::Composite
        )
        .is_empty());
        let p = plan(
            &req(&[Category::Haze], "remove haze"),
            LabelSet::single(Category::Haze),
            PlanMode::Composite,
        );
        assert_eq!(p.categories(), vec![Category::Haze]);
        let all: LabelSet = [Category::Haze, Category::LowLight, Category::DefocusBlur]
            .into_iter()
            .collect();
        let p = plan(
            &req(
                &[Category::DefocusBlur, Category::LowLight, Category::Haze],
                "x",
            ),
            all,
            PlanMode::Composite,
        );
        assert_eq!(
            p.categories(),
            vec![Category::Haze, Category::LowLight, Category::DefocusBlur]
        );
    }

    #[test]
    fn sequential_follows_mention_order() {
        let all: LabelSet = [Category::Haze, Category::LowLight].into_iter().collect();
        let r = req(
            &[Category::Haze, Category::LowLight],
            "first brighten the low light, then remove the haze",
        );
        assert_eq!(
            plan(&r, all, PlanMode::Sequential).categories(),
            vec![Category::LowLight, Category::Haze]
        );
        assert_eq!(
            plan(&r, all, PlanMode::Composite).categories(),
            vec![Category::Haze, Category::LowLight]
        );
    }

    #[test]
    fn low_light_and_haze_examples() {
        let img = Image::filled(4, 4, 3, 0.4).unwrap();
        let out = invert_spec(&DistortionSpec::LowLight { factor: 0.4 }, &img, None)
            .unwrap()
            .0;
        assert!(out.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let hazy = Image::filled(4, 4, 3, 0.825).unwrap();
        let d = DepthMap::constant(4, 4, 1.0).unwrap();
        let out = invert_spec(&DistortionSpec::Haze { alpha: 0.65 }, &hazy, Some(&d))
            .unwrap()
            .0;
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert!(matches!(
            invert_spec(&DistortionSpec::Haze { alpha: 0.65 }, &hazy, None),
            Err(Error::MissingDepth(_))
        ));
    }

    #[test]
    fn algebraic_inverses_are_exact_without_quantization() {
        let (img, d) = scene(3);
        let img = img.map(|v| 0.1 + 0.6 * v);
        for spec in [
            DistortionSpec::LowLight { factor: 0.5 },
            DistortionSpec::Contrast { factor: 0.6 },
            DistortionSpec::Saturation { factor: 0.5 },
            DistortionSpec::Haze { alpha: 0.8 },
            DistortionSpec::Overexposure {
                factor: 1.3,
                threshold: 0.6,
            },
            DistortionSpec::midpoint(DistortionKind::ColorJitter, 1),
        ] {
            let fwd = apply(&spec, &img, Some(&d)).unwrap();
            let back = invert_spec(&spec, &fwd, Some(&d)).unwrap().0;
            assert!(psnr(&img, &back).unwrap() > 80.0, "{:?}", spec);
        }
    }

    #[test]
    fn oracle_inverses_improve_every_category() {
        let (img, d) = scene(5);
        for kind in DistortionKind::ALL {
            let spec = DistortionSpec::midpoint(kind, 9);
            let fwd = quantized(&apply(&spec, &img, Some(&d)).unwrap());
            let back = invert_spec(&spec, &fwd, Some(&d)).unwrap().0;
            let (before, after) = (psnr(&img, &fwd).unwrap(), psnr(&img, &back).unwrap());
            assert!(back.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(
                after > before || before > 45.0,
                "{}: {:.2} -> {:.2}",
                kind,
                before,
                after
            );
        }
    }

    #[test]
    fn negative_request_is_bit_identical() {
        let (img, d) = scene(7);
        let specs = vec![sample_spec(DistortionKind::Haze, &mut SeededRng::new(1))];
        let fwd = quantized(&apply(&specs[0], &img, Some(&d)).unwrap());
        let (out, p) = restore(
            &req(&[Category::Snow], "remove the snow"),
            &fwd,
            Some(&d),
            Some(&specs),
            PlanMode::Composite,
        )
        .unwrap();
        assert!(p.is_empty());
        assert!(out.bit_identical(&fwd));
    }

    #[test]
    fn selectivity_and_json() {
        let (img, d) = scene(8);
        let specs = vec![
            DistortionSpec::midpoint(DistortionKind::Haze, 1),
            DistortionSpec::midpoint(DistortionKind::GaussianNoise, 2),
        ];
        let fwd = quantized(&crate::distortions::apply_chain(&specs, &img, Some(&d)).unwrap());
        let (_, p) = restore(
            &req(&[Category::Haze], "remove haze"),
            &fwd,
            Some(&d),
            Some(&specs),
            PlanMode::Composite,
        )
        .unwrap();
        assert_eq!(p.categories(), vec![Category::Haze]);
        assert_eq!(p.steps[0].op, Some(InverseOp::AlgebraicInverse));
        let back: RestorationPlan = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn composite_equals_sequential_in_canonical_order() {
        let (img, d) = scene(9);
        let specs = vec![
            DistortionSpec::LowLight { factor: 0.6 },
            DistortionSpec::midpoint(DistortionKind::GaussianNoise, 4),
        ];
        let fwd = quantized(&crate::distortions::apply_chain(&specs, &img, Some(&d)).unwrap());
        let r = req(
            &[Category::LowLight, Category::GaussianNoise],
            "fix the low light and the noise",
        );
        let (a, _) = restore(&r, &fwd, Some(&d), Some(&specs), PlanMode::Composite).unwrap();
        let (b, pb) = restore(&r, &fwd, Some(&d), Some(&specs), PlanMode::Sequential).unwrap();
        assert_eq!(
            pb.categories(),
            vec![Category::LowLight, Category::GaussianNoise]
        );
        assert!(a.bit_identical(&b));
    }

    #[test]
    fn blind_inverses_stay_in_range() {
        let (img, d) = scene(10);
        let mut rng = SeededRng::new(3);
        for kind in DistortionKind::ALL {
            let spec = sample_spec(kind, &mut rng);
            let fwd = quantized(&apply(&spec, &img, Some(&d)).unwrap());
            let out = invert(kind.category(), &fwd, Some(&d), &InverseHints::default()).unwrap();
            assert_eq!(out.dims(), fwd.dims());
            assert!(
                out.data().iter().all(|v| (0.0..=1.0).contains(v)),
                "{}",
                kind
            );
        }
    }

    #[test]
    fn blind_pixelation_finds_the_grid() {
        let (img, _) = scene(11);
        let fwd = apply(&DistortionSpec::Pixelation { factor: 4.0 }, &img, None).unwrap();
        assert_eq!(estimate_blocks(&fwd), (16, 16));
        let out = invert(Category::Pixelation, &fwd, None, &InverseHints::default()).unwrap();
        assert!(psnr(&img, &out).unwrap() > psnr(&img, &fwd).unwrap());
    }

    #[test]
    fn mismatched_oracle_spec_is_rejected() {
        let img = Image::filled(16, 16, 3, 0.5).unwrap();
        let h = InverseHints::oracle(vec![DistortionSpec::LowLight { factor: 0.5 }]);
        assert!(invert(Category::Haze, &img, None, &h).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn plans_cover_exactly_targets_and_present(t in 0u16..(1 << 14), p in 0u16..(1 << 14), seq in any::<bool>()) {
            let targets = LabelSet::from_bits(t).unwrap();
            let present = LabelSet::from_bits(p).unwrap();
            let r = RestorationRequest { targets, mode: PromptMode::Full, surface_text: String::new() };
            let mode = if seq { PlanMode::Sequential } else { PlanMode::Composite };
            let pl = plan(&r, present, mode);
            let cats: LabelSet = pl.categories().into_iter().collect();
            prop_assert_eq!(cats, targets.intersection(present));
            prop_assert_eq!(pl.steps.len(), cats.len());
            prop_assert_eq!(pl.is_empty(), targets.is_disjoint(present));
        }
    }
}
