//! Field and particle synthesis shared by forward transforms and the oracle
//! inverses that need to regenerate them.

use crate::imaging::{blur_plane, resize_plane};
use crate::imaging::{fractal_noise, DisplacementField, SeededRng};
use crate::Result;

/// Smoothed uniform noise displacement. With `normalize`, the smoothed field
/// is rescaled to unit peak magnitude before multiplying by `scale`.
pub(crate) fn smooth_field(
    h: usize,
    w: usize,
    sigma: f64,
    scale: f64,
    normalize: bool,
    seed: u64,
) -> Result<DisplacementField> {
    let mut rng = SeededRng::new(seed);
    let n = h * w;
    let raw_x: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let raw_y: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let mut dx = blur_plane(&raw_x, h, w, sigma)?;
    let mut dy = blur_plane(&raw_y, h, w, sigma)?;
    let k = if normalize {
        let peak = dx
            .iter()
            .zip(&dy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
            .max(1e-12);
        scale / peak
    } else {
        scale
    };
    dx.iter_mut().for_each(|v| *v *= k);
    dy.iter_mut().for_each(|v| *v *= k);
    DisplacementField::new(h, w, dx, dy)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Cloud coverage in `[0, opacity]` and the shadow mask (the coverage shifted
/// down-right), both row-major `h × w`.
pub(crate) fn cloud_layers(
    h: usize,
    w: usize,
    opacity: f64,
    blur_scale: f64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = SeededRng::new(seed);
    let base = fractal_noise(h, w, (h.max(w) as f64 / 2.0).max(1.0), 4, &mut rng)?;
    let shaped: Vec<f64> = base.iter().map(|&v| smoothstep(0.35, 0.75, v)).collect();
    let blurred = blur_plane(&shaped, h, w, blur_scale)?;
    let cover: Vec<f64> = blurred
        .iter()
        .map(|v| (v * opacity).clamp(0.0, 1.0))
        .collect();
    let (oy, ox) = ((h / 10).max(1), (w / 10).max(1));
    let mut shadow = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let sy = y.saturating_sub(oy);
            let sx = x.saturating_sub(ox);
            shadow[y * w + x] = cover[sy * w + sx];
        }
    }
    Ok((cover, shadow))
}

/// Line kernel of odd size `k` through the centre at `angle_deg` from the
/// vertical axis, normalized to unit sum.
pub(crate) fn line_kernel(k: usize, angle_deg: f64) -> Vec<f64> {
    let k = if k % 2 == 0 { k + 1 } else { k };
    let mut ker = vec![0.0; k * k];
    let c = (k / 2) as f64;
    let (s, co) = angle_deg.to_radians().sin_cos();
    let steps = 4 * k;
    for i in 0..=steps {
        let t = -c + 2.0 * c * i as f64 / steps as f64;
        let y = c + t * co;
        let x = c + t * s;
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                let yy = (y0 + dy) as isize;
                let xx = (x0 + dx) as isize;
                if yy >= 0 && xx >= 0 && (yy as usize) < k && (xx as usize) < k {
                    ker[yy as usize * k + xx as usize] += wy * wx;
                }
            }
        }
    }
    let s: f64 = ker.iter().sum();
    ker.iter_mut().for_each(|v| *v /= s);
    ker
}

/// Correlates a plane with a square kernel, reflected borders, no clamping.
pub(crate) fn filter_plane(plane: &[f64], h: usize, w: usize, ker: &[f64], k: usize) -> Vec<f64> {
    use crate::imaging::reflect_index;
    let half = (k / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..k {
                let sy = reflect_index(y as isize + ky as isize - half, h);
                for kx in 0..k {
                    let wgt = ker[ky * k + kx];
                    if wgt != 0.0 {
                        acc +=
                            wgt * plane[sy * w + reflect_index(x as isize + kx as isize - half, w)];
                    }
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Two-scale rain streak layer in `[0, 1]`.
pub(crate) fn rain_layer(
    h: usize,
    w: usize,
    kernels: [usize; 2],
    zoom: f64,
    angle: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = SeededRng::new(seed);
    let mut layer = vec![0.0f64; h * w];
    for (scale_idx, &k) in kernels.iter().enumerate() {
        let z = if scale_idx == 0 { 1.0 } else { zoom };
        let lh = ((h as f64 / z).round() as usize).max(1);
        let lw = ((w as f64 / z).round() as usize).max(1);
        let density = if scale_idx == 0 { 0.03 } else { 0.015 };
        let drops: Vec<f64> = (0..lh * lw)
            .map(|_| {
                if rng.coin(density) {
                    rng.uniform(0.5, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let kk = ((k as f64 / z).round() as usize).max(3);
        let ker = line_kernel(kk, angle);
        let kk = ((ker.len() as f64).sqrt()) as usize;
        let streaks = filter_plane(&drops, lh, lw, &ker, kk);
        let streaks = resize_plane(&streaks, lh, lw, h, w)?;
        let peak = streaks.iter().copied().fold(0.0, f64::max).max(1e-12);
        for (l, s) in layer.iter_mut().zip(streaks) {
            *l = l.max((s / peak).clamp(0.0, 1.0));
        }
    }
    Ok(layer)
}

/// Three-scale snow particle layers (fine to coarse), each in `[0, 1]`.
pub(crate) fn snow_layers(h: usize, w: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = SeededRng::new(seed);
    let scales = [(0.012, 0.6, 0.7), (0.005, 1.0, 0.85), (0.002, 1.6, 0.95)];
    let mut layers = Vec::with_capacity(scales.len());
    for &(density, sigma, brightness) in &scales {
        let pts: Vec<f64> = (0..h * w)
            .map(|_| if rng.coin(density) { 1.0 } else { 0.0 })
            .collect();
        let blurred = blur_plane(&pts, h, w, sigma)?;
        let peak = blurred.iter().copied().fold(0.0, f64::max).max(1e-12);
        layers.push(
            blurred
                .into_iter()
                .map(|v| (brightness * (v / peak) * 1.6).clamp(0.0, brightness))
                .collect(),
        );
    }
    Ok(layers)
}

/// Fog weight per pixel: zero below the depth percentile `q`, otherwise
/// `1 - exp(-3.912 · D · range / visibility)`.
pub(crate) fn fog_weights(
    depth: &crate::imaging::DepthMap,
    q: f64,
    visibility: f64,
    range_m: f64,
) -> Vec<f64> {
    let thresh = depth.percentile(q);
    depth
        .data()
        .iter()
        .map(|&d| {
            if d >= thresh && d > 0.0 {
                1.0 - (-3.912 * d * range_m / visibility).exp()
            } else {
                0.0
            }
        })
        .collect()
}
