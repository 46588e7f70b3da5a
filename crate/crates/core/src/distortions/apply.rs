use super::render::{cloud_layers, fog_weights, rain_layer, smooth_field, snow_layers};
use super::spec::{BlurDirection, DistortionSpec, NoiseMode, REFERENCE_RESOLUTION};
use crate::imaging::{
    convolve2d, reflect_index, resize_nearest, resize_to, warp, DepthMap, Image, Kernel, SeededRng,
    LUMA_WEIGHTS,
};
use crate::{Error, Result};

/// Depth, in metres, that a normalized depth of 1 stands for when rain and
/// snow fog is attenuated against a visibility distance.
pub const DEPTH_RANGE_METERS: f64 = 1000.0;

/// Gaussian σ for a defocus kernel of odd size `k`:
/// `0.3 · ((k - 1) / 2 - 1) + 0.8`.
pub fn defocus_sigma(kernel_size: usize) -> f64 {
    0.3 * ((kernel_size as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

pub(crate) fn motion_kernel(size: usize, direction: BlurDirection) -> Kernel {
    let k = if size % 2 == 0 { size + 1 } else { size };
    let c = k / 2;
    let mut data = vec![0.0; k * k];
    for i in 0..k {
        let (r, col) = match direction {
            BlurDirection::Horizontal => (c, i),
            BlurDirection::Vertical => (i, c),
            BlurDirection::Diagonal => (i, i),
            BlurDirection::Antidiagonal => (i, k - 1 - i),
        };
        data[r * k + col] = 1.0;
    }
    // even sizes are rasterized on the next odd grid with the end taps halved
    if size % 2 == 0 {
        for i in [0, k - 1] {
            let (r, col) = match direction {
                BlurDirection::Horizontal => (c, i),
                BlurDirection::Vertical => (i, c),
                BlurDirection::Diagonal => (i, i),
                BlurDirection::Antidiagonal => (i, k - 1 - i),
            };
            data[r * k + col] = 0.5;
        }
    }
    Kernel::new(k, data).expect("odd kernel").normalized()
}

/// Separable filter with a symmetric 1D tap vector and reflected borders.
pub(crate) fn separable(image: &Image, taps: &[f64]) -> Image {
    let (h, w, ch) = image.dims();
    let half = (taps.len() / 2) as isize;
    let src = image.data();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, t) in taps.iter().enumerate() {
                    acc += t * src
                        [(y * w + reflect_index(x as isize + i as isize - half, w)) * ch + c];
                }
                tmp[(y * w + x) * ch + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, t) in taps.iter().enumerate() {
                    acc += t * tmp
                        [(reflect_index(y as isize + i as isize - half, h) * w + x) * ch + c];
                }
                out[(y * w + x) * ch + c] = acc;
            }
        }
    }
    Image::from_vec(h, w, ch, out).expect("same dims")
}

pub(crate) fn defocus_taps(kernel_size: usize) -> Vec<f64> {
    crate::imaging::gaussian_kernel_1d(defocus_sigma(kernel_size), kernel_size)
        .expect("odd positive kernel")
}

fn require_depth<'a>(
    spec: &DistortionSpec,
    image: &Image,
    depth: Option<&'a DepthMap>,
) -> Result<&'a DepthMap> {
    let d = depth.ok_or_else(|| Error::MissingDepth(spec.kind().name().to_string()))?;
    if !d.matches(image) {
        return Err(Error::DimensionMismatch(format!(
            "depth {}x{} vs image {}x{}",
            d.height(),
            d.width(),
            image.height(),
            image.width()
        )));
    }
    Ok(d)
}

fn screen(base: f64, layer: f64) -> f64 {
    1.0 - (1.0 - base) * (1.0 - layer)
}

/// Forward overexposure curve on one intensity.
pub(crate) fn overexpose(x: f64, factor: f64, threshold: f64) -> f64 {
    let boosted = factor * x.powf(1.0 / factor);
    if boosted > threshold {
        threshold + (1.0 - threshold) * ((boosted - threshold) / (1.0 - threshold)).tanh()
    } else {
        boosted
    }
}

/// Forward underexposure tone curve (gamma then shadow compression), before
/// noise.
pub(crate) fn underexpose_tone(x: f64, factor: f64, shadow_threshold: f64) -> f64 {
    let g = x.powf(1.0 / factor);
    if g < shadow_threshold {
        shadow_threshold * (g / shadow_threshold).powi(2)
    } else {
        g
    }
}

pub(crate) fn mean_luminance(image: &Image) -> f64 {
    let (h, w, _) = image.dims();
    let mut s = 0.0;
    for y in 0..h {
        for x in 0..w {
            s += image.luminance_at(y, x);
        }
    }
    s / (h * w) as f64
}

/// Applies one distortion. Output dims equal input dims and every intensity
/// stays in `[0, 1]`.
pub fn apply(spec: &DistortionSpec, image: &Image, depth: Option<&DepthMap>) -> Result<Image> {
    let (h, w, ch) = image.dims();
    match spec {
        DistortionSpec::MotionBlur {
            kernel_size,
            direction,
            depth_mask,
        } => {
            let blurred = convolve2d(image, &motion_kernel(*kernel_size, *direction))?;
            match depth_mask {
                None => Ok(blurred),
                Some(mask) => {
                    let d = require_depth(spec, image, depth)?;
                    Ok(blurred.map_pixels(|y, x, px, out| {
                        let near = d.get(y, x) < mask.threshold;
                        let src = if near == mask.foreground {
                            px
                        } else {
                            &image.data()[image.index(y, x, 0)..image.index(y, x, 0) + ch]
                        };
                        out.copy_from_slice(src);
                    }))
                }
            }
        }
        DistortionSpec::ElasticWarp { sigma, alpha, seed } => {
            if *alpha == 0.0 {
                return Ok(image.clone());
            }
            let field = smooth_field(h, w, *sigma, *alpha, true, *seed)?;
            warp(image, &field)
        }
        DistortionSpec::Refraction {
            strength,
            sigma,
            seed,
        } => {
            if *strength == 0.0 {
                return Ok(image.clone());
            }
            let field = smooth_field(h, w, *sigma, *strength, false, *seed)?;
            warp(image, &field)
        }
        DistortionSpec::DefocusBlur { kernel_size } => {
            if kernel_size % 2 == 0 || *kernel_size == 0 {
                return Err(Error::invalid("defocus kernel size must be odd"));
            }
            Ok(separable(image, &defocus_taps(*kernel_size)))
        }
        DistortionSpec::LowLight { factor } => Ok(image.map(|v| v * factor)),
        DistortionSpec::ColorJitter {
            shift,
            cast,
            cast_intensity,
        } => {
            let rgb = cast.rgb();
            let a = *cast_intensity;
            if ch == 1 {
                let gain = 1.0 + shift.iter().sum::<f64>() / 3.0;
                let tone = LUMA_WEIGHTS
                    .iter()
                    .zip(rgb)
                    .map(|(w, c)| w * c)
                    .sum::<f64>();
                Ok(image.map(|v| (1.0 - a) * (v * gain) + a * tone))
            } else {
                Ok(image.map_pixels(|_, _, px, out| {
                    for c in 0..3 {
                        out[c] = (1.0 - a) * (px[c] * (1.0 + shift[c])) + a * rgb[c];
                    }
                }))
            }
        }
        DistortionSpec::Overexposure { factor, threshold } => {
            Ok(image.map(|v| overexpose(v, *factor, *threshold)))
        }
        DistortionSpec::Underexposure {
            factor,
            shadow_threshold,
            noise_sigma,
            seed,
        } => {
            let toned = image.map(|v| underexpose_tone(v, *factor, *shadow_threshold));
            let mut rng = SeededRng::new(*seed);
            Ok(toned.map_pixels(|y, x, px, out| {
                let lum = toned.luminance_at(y, x);
                let weight = (1.0 - lum).powi(2);
                for c in 0..px.len() {
                    out[c] = px[c] + noise_sigma * weight * rng.normal();
                }
            }))
        }
        DistortionSpec::Contrast { factor } => {
            if *factor == 1.0 {
                return Ok(image.clone());
            }
            let mu = mean_luminance(image);
            Ok(image.map(|v| mu + factor * (v - mu)))
        }
        DistortionSpec::Saturation { factor } => {
            if ch == 1 || *factor == 1.0 {
                return Ok(image.clone());
            }
            Ok(image.map_pixels(|y, x, px, out| {
                let l = image.luminance_at(y, x);
                for c in 0..3 {
                    out[c] = l + factor * (px[c] - l);
                }
            }))
        }
        DistortionSpec::Haze { alpha } => {
            let d = require_depth(spec, image, depth)?;
            Ok(image.map_pixels(|y, x, px, out| {
                let t = d.get(y, x) * alpha;
                for c in 0..px.len() {
                    out[c] = px[c] * (1.0 - t) + t;
                }
            }))
        }
        DistortionSpec::Rain {
            kernels,
            zoom,
            visibility,
            opacity,
            angle,
            seed,
        } => {
            let d = require_depth(spec, image, depth)?;
            let streaks = rain_layer(h, w, *kernels, *zoom, *angle, *seed)?;
            let fog = fog_weights(d, 0.9, *visibility, DEPTH_RANGE_METERS);
            Ok(image.map_pixels(|y, x, px, out| {
                let i = y * w + x;
                for c in 0..px.len() {
                    let v = screen(px[c], opacity * streaks[i]);
                    out[c] = v * (1.0 - fog[i]) + fog[i];
                }
            }))
        }
        DistortionSpec::Snow { visibility, seed } => {
            let d = require_depth(spec, image, depth)?;
            let layers = snow_layers(h, w, *seed)?;
            let fog = fog_weights(d, 0.95, *visibility, DEPTH_RANGE_METERS);
            Ok(image.map_pixels(|y, x, px, out| {
                let i = y * w + x;
                for c in 0..px.len() {
                    let mut v = px[c] * (1.0 - fog[i]) + fog[i];
                    for l in &layers {
                        v = screen(v, l[i]);
                    }
                    out[c] = v;
                }
            }))
        }
        DistortionSpec::Clouds {
            opacity,
            shadow,
            blur_scale,
            seed,
        } => {
            let (cover, shade) = cloud_layers(h, w, *opacity, *blur_scale, *seed)?;
            Ok(image.map_pixels(|y, x, px, out| {
                let i = y * w + x;
                for c in 0..px.len() {
                    let darkened = px[c] * (1.0 - shadow * shade[i]);
                    out[c] = darkened * (1.0 - cover[i]) + cover[i];
                }
            }))
        }
        DistortionSpec::Raindrops { drops, edge_darken } => {
            let scale = h.min(w) as f64 / REFERENCE_RESOLUTION;
            let mut out = image.clone();
            for drop in drops {
                let r = (drop.radius * scale).max(1.5);
                let cy = drop.y * (h - 1) as f64;
                let cx = drop.x * (w - 1) as f64;
                let y0 = (cy - r).floor().max(0.0) as usize;
                let y1 = ((cy + r).ceil() as usize).min(h - 1);
                let x0 = (cx - r).floor().max(0.0) as usize;
                let x1 = ((cx + r).ceil() as usize).min(w - 1);
                let snapshot = out.clone();
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                        let u = dy.hypot(dx) / r;
                        if u > 1.0 {
                            continue;
                        }
                        // inverted, magnified view through the drop lens
                        let sy = cy - 0.6 * dy;
                        let sx = cx - 0.6 * dx;
                        let ring = 1.0 - edge_darken * smoothstep(0.7, 1.0, u);
                        for c in 0..ch {
                            let v = crate::imaging::bilinear_sample(&snapshot, sy, sx, c);
                            out.set(y, x, c, (0.85 * v + 0.15) * ring);
                        }
                    }
                }
            }
            Ok(out)
        }
        DistortionSpec::GaussianNoise { mode, level, seed } => {
            let mut rng = SeededRng::new(*seed);
            match mode {
                NoiseMode::Gaussian => {
                    let mut data = image.data().to_vec();
                    for v in data.iter_mut() {
                        *v += level * rng.normal();
                    }
                    Image::from_vec(h, w, ch, data)
                }
                NoiseMode::SaltPepper => Ok(image.map_pixels(|_, _, px, out| {
                    if rng.coin(*level) {
                        let v = if rng.coin(0.5) { 1.0 } else { 0.0 };
                        out.iter_mut().for_each(|o| *o = v);
                    } else {
                        out.copy_from_slice(px);
                    }
                })),
            }
        }
        DistortionSpec::Pixelation { factor } => {
            if *factor <= 1.0 {
                return Ok(image.clone());
            }
            let lh = ((h as f64 / factor).round() as usize).max(1);
            let lw = ((w as f64 / factor).round() as usize).max(1);
            let low = resize_to(image, lh, lw)?;
            resize_nearest(&low, h, w)
        }
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Left fold of [`apply`] over `specs`, in the given order.
pub fn apply_chain(
    specs: &[DistortionSpec],
    image: &Image,
    depth: Option<&DepthMap>,
) -> Result<Image> {
    if specs.is_empty() {
        return Err(Error::Empty("distortion chain".into()));
    }
    specs
        .iter()
        .try_fold(image.clone(), |img, spec| apply(spec, &img, depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distortions::{sample_spec, DistortionKind};

    fn ramp() -> Image {
        Image::from_fn(16, 16, 3, |y, x, c| {
            (x as f64 + y as f64 * 0.5 + c as f64) / 40.0
        })
        .unwrap()
    }

    fn depth(v: f64) -> DepthMap {
        DepthMap::constant(16, 16, v).unwrap()
    }

    #[test]
    fn haze_with_zero_depth_is_identity() {
        let img = ramp();
        let out = apply(
            &DistortionSpec::Haze { alpha: 0.8 },
            &img,
            Some(&depth(0.0)),
        )
        .unwrap();
        assert!(out.bit_identical(&img));
    }

    #[test]
    fn haze_blend_hand_value() {
        let img = Image::filled(16, 16, 1, 0.5).unwrap();
        let out = apply(
            &DistortionSpec::Haze { alpha: 0.65 },
            &img,
            Some(&depth(1.0)),
        )
        .unwrap();
        // 0.5 · (1 - 0.65) + 0.65
        assert!(out.data().iter().all(|v| (v - 0.825).abs() < 1e-12));
    }

    #[test]
    fn low_light_hand_value() {
        let img = Image::filled(4, 4, 3, 1.0).unwrap();
        let out = apply(&DistortionSpec::LowLight { factor: 0.4 }, &img, None).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn low_light_chain_composes() {
        let img = Image::filled(4, 4, 1, 0.8).unwrap();
        let specs = [
            DistortionSpec::LowLight { factor: 0.5 },
            DistortionSpec::LowLight { factor: 0.5 },
        ];
        let out = apply_chain(&specs, &img, None).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn overexposure_hand_value() {
        // x = 0.25, f = 1.25: 1.25 · 0.25^0.8 = 0.412, below τ = 0.9
        let img = Image::filled(2, 2, 1, 0.25).unwrap();
        let out = apply(
            &DistortionSpec::Overexposure {
                factor: 1.25,
                threshold: 0.9,
            },
            &img,
            None,
        )
        .unwrap();
        let want = 1.25 * 0.25f64.powf(0.8);
        assert!((out.get(0, 0, 0) - want).abs() < 1e-12);
        // above threshold the soft clip applies: τ + (1-τ) tanh((b-τ)/(1-τ))
        let img = Image::filled(2, 2, 1, 0.81).unwrap();
        let out = apply(
            &DistortionSpec::Overexposure {
                factor: 1.25,
                threshold: 0.5,
            },
            &img,
            None,
        )
        .unwrap();
        let b = 1.25 * 0.81f64.powf(0.8);
        let want = 0.5 + 0.5 * ((b - 0.5) / 0.5).tanh();
        assert!((out.get(0, 0, 0) - want).abs() < 1e-12);
    }

    #[test]
    fn chain_rejects_empty_and_keeps_order() {
        let img = ramp();
        assert!(apply_chain(&[], &img, None).is_err());
        let d = depth(0.7);
        let a = DistortionSpec::Overexposure {
            factor: 1.4,
            threshold: 0.5,
        };
        let b = DistortionSpec::Haze { alpha: 0.8 };
        let ab = apply_chain(&[a.clone(), b.clone()], &img, Some(&d)).unwrap();
        let ba = apply_chain(&[b.clone(), a.clone()], &img, Some(&d)).unwrap();
        assert!(!ab.bit_identical(&ba));
        let single = apply_chain(&[b.clone()], &img, Some(&d)).unwrap();
        assert!(single.bit_identical(&apply(&b, &img, Some(&d)).unwrap()));
    }

    #[test]
    fn identity_limits() {
        let img = ramp();
        for spec in [
            DistortionSpec::Contrast { factor: 1.0 },
            DistortionSpec::Saturation { factor: 1.0 },
            DistortionSpec::Refraction {
                strength: 0.0,
                sigma: 10.0,
                seed: 3,
            },
            DistortionSpec::ElasticWarp {
                sigma: 25.0,
                alpha: 0.0,
                seed: 3,
            },
        ] {
            assert!(
                apply(&spec, &img, None).unwrap().bit_identical(&img),
                "{:?}",
                spec
            );
        }
    }

    #[test]
    fn depth_consumers_require_depth() {
        let img = ramp();
        let mut rng = SeededRng::new(1);
        for kind in [
            DistortionKind::Haze,
            DistortionKind::Rain,
            DistortionKind::Snow,
        ] {
            let spec = sample_spec(kind, &mut rng);
            assert!(matches!(
                apply(&spec, &img, None),
                Err(Error::MissingDepth(_))
            ));
        }
    }

    #[test]
    fn all_kinds_preserve_dims_range_and_are_deterministic() {
        let img = ramp();
        let d = DepthMap::from_fn(16, 16, |y, _| 1.0 - y as f64 / 15.0).unwrap();
        let mut rng = SeededRng::new(5);
        for kind in DistortionKind::ALL {
            for _ in 0..3 {
                let spec = sample_spec(kind, &mut rng);
                let a = apply(&spec, &img, Some(&d)).unwrap();
                let b = apply(&spec, &img, Some(&d)).unwrap();
                assert_eq!(a.dims(), img.dims());
                assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
                assert!(a.bit_identical(&b), "{:?} not deterministic", kind);
            }
        }
    }

    #[test]
    fn motion_kernel_is_normalized_line() {
        let k = motion_kernel(5, BlurDirection::Horizontal);
        assert!((k.sum() - 1.0).abs() < 1e-15);
        assert_eq!(k.at(2, 0), 0.2);
        assert_eq!(k.at(0, 0), 0.0);
        let k = motion_kernel(6, BlurDirection::Diagonal);
        assert_eq!(k.size(), 7);
        assert!((k.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn defocus_sigma_rule() {
        assert!((defocus_sigma(3) - 0.8).abs() < 1e-15);
        assert!((defocus_sigma(11) - 2.0).abs() < 1e-12);
    }
}
