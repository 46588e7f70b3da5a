//! Frozen, hand-designed image statistics feeding the trainable encoder.

use serde::{Deserialize, Serialize};

use crate::imaging::{blur_plane, Image};
use crate::{Error, Result};

const GRID: usize = 6;
const BANDS: usize = 4;
const ENERGY_GRID: usize = 4;
const PERCENTILES: [f64; 7] = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99];
const HIST_BINS: usize = 8;

/// Length of [`extract_features`]' output.
pub const FEATURE_DIM: usize = GRID * GRID
    + 6
    + 4
    + PERCENTILES.len()
    + HIST_BINS
    + 4
    + 4
    + 2
    + 3
    + 2
    + 3 * BANDS
    + ENERGY_GRID * ENERGY_GRID
    + 2
    + 9
    + 4
    + 2
    + 2
    + 1
    + 8;

#[inline]
fn lg(v: f64) -> f64 {
    (v + 1e-4).ln()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn cell_mean(plane: &[f64], w: usize, y0: usize, y1: usize, x0: usize, x1: usize) -> f64 {
    mean((y0..y1).flat_map(|y| (x0..x1).map(move |x| plane[y * w + x])))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

/// Summary statistics sensitive to photometric shifts, blur, noise,
/// blockiness, haze and directional structure. Requires at least 16×16.
pub fn extract_features(image: &Image) -> Result<Vec<f64>> {
    let (h, w, _) = image.dims();
    if h < 16 || w < 16 {
        return Err(Error::invalid(format!(
            "feature extraction needs >= 16x16, got {}x{}",
            h, w
        )));
    }
    let rgb = image.to_rgb();
    let px = rgb.data();
    let luma: Vec<f64> = rgb.luminance().into_data();
    let n = (h * w) as f64;
    let mut f = Vec::with_capacity(FEATURE_DIM);

    // coarse layout
    for gy in 0..GRID {
        for gx in 0..GRID {
            f.push(cell_mean(
                &luma,
                w,
                gy * h / GRID,
                (gy + 1) * h / GRID,
                gx * w / GRID,
                (gx + 1) * w / GRID,
            ));
        }
    }

    // channel moments
    for c in 0..3 {
        let m = mean((0..h * w).map(|i| px[i * 3 + c]));
        let v = mean((0..h * w).map(|i| (px[i * 3 + c] - m).powi(2)));
        f.push(m);
        f.push(v.sqrt());
    }

    // chroma
    let sat: Vec<f64> = (0..h * w)
        .map(|i| {
            let p = &px[i * 3..i * 3 + 3];
            p.iter().copied().fold(f64::MIN, f64::max) - p.iter().copied().fold(f64::MAX, f64::min)
        })
        .collect();
    let sat_mean = mean(sat.iter().copied());
    f.push(mean((0..h * w).map(|i| px[i * 3] - px[i * 3 + 1])));
    f.push(mean((0..h * w).map(|i| px[i * 3 + 2] - px[i * 3 + 1])));
    f.push(sat_mean);
    f.push(mean(sat.iter().map(|s| (s - sat_mean).powi(2))).sqrt());

    // tone distribution
    let mut sorted = luma.clone();
    sorted.sort_by(f64::total_cmp);
    for q in PERCENTILES {
        f.push(quantile(&sorted, q));
    }
    let mut hist = [0.0; HIST_BINS];
    for &v in &luma {
        hist[((v * HIST_BINS as f64) as usize).min(HIST_BINS - 1)] += 1.0 / n;
    }
    f.extend(hist);

    // directional gradients
    let at = |y: usize, x: usize| luma[y * w + x];
    let dirs: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];
    for (dy, dx) in dirs {
        let mut s = 0.0;
        let mut k = 0;
        for y in 0..h - 1 {
            for x in 1..w - 1 {
                let (y2, x2) = ((y as isize + dy) as usize, (x as isize + dx) as usize);
                s += (at(y2, x2) - at(y, x)).abs();
                k += 1;
            }
        }
        f.push(lg(s / k as f64));
    }

    // band-pass energies and noise
    let b1 = blur_plane(&luma, h, w, 1.0)?;
    let b2 = blur_plane(&luma, h, w, 2.0)?;
    let mut lap = Vec::with_capacity((h - 2) * (w - 2));
    let mut impulses = 0usize;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let l = 4.0 * at(y, x) - at(y - 1, x) - at(y + 1, x) - at(y, x - 1) - at(y, x + 1);
            lap.push(l);
            let mut nb = [
                at(y - 1, x - 1),
                at(y - 1, x),
                at(y - 1, x + 1),
                at(y, x - 1),
                at(y, x + 1),
                at(y + 1, x - 1),
                at(y + 1, x),
                at(y + 1, x + 1),
            ];
            nb.sort_by(f64::total_cmp);
            let med = 0.5 * (nb[3] + nb[4]);
            if (at(y, x) - med).abs() > 0.3 {
                impulses += 1;
            }
        }
    }
    let d1 = mean(luma.iter().zip(&b1).map(|(a, b)| (a - b).abs()));
    let d2 = mean(b1.iter().zip(&b2).map(|(a, b)| (a - b).abs()));
    let lap_e = mean(lap.iter().map(|v| v.abs()));
    let grad_e = mean(
        (0..h)
            .flat_map(|y| (0..w - 1).map(move |x| (y, x)))
            .map(|(y, x)| (at(y, x + 1) - at(y, x)).abs()),
    );
    f.push(lg(d1));
    f.push(lg(d2));
    f.push(lg(lap_e));
    f.push(lg(lap_e) - lg(grad_e));
    let mut abs_lap: Vec<f64> = lap.iter().map(|v| v.abs()).collect();
    abs_lap.sort_by(f64::total_cmp);
    f.push(lg(quantile(&abs_lap, 0.5) / 0.6745));
    f.push(impulses as f64 / lap.len() as f64);

    // blockiness: flat neighbour pairs and run lengths
    let flat = 0.5 / 255.0;
    let flat_h = mean(
        (0..h)
            .flat_map(|y| (0..w - 1).map(move |x| (y, x)))
            .map(|(y, x)| ((at(y, x + 1) - at(y, x)).abs() < flat) as u8 as f64),
    );
    let flat_v = mean(
        (0..h - 1)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .map(|(y, x)| ((at(y + 1, x) - at(y, x)).abs() < flat) as u8 as f64),
    );
    let flat_2 = mean(
        (1..h - 1)
            .flat_map(|y| (1..w - 1).map(move |x| (y, x)))
            .map(|(y, x)| {
                ((at(y, x + 1) - 2.0 * at(y, x) + at(y, x - 1)).abs() < flat) as u8 as f64
            }),
    );
    f.extend([flat_h, flat_v, flat_2]);

    // dark channel (3×3 minimum of the per-pixel channel minimum)
    let minc: Vec<f64> = (0..h * w)
        .map(|i| {
            px[i * 3..i * 3 + 3]
                .iter()
                .copied()
                .fold(f64::MAX, f64::min)
        })
        .collect();
    let mut dark = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut m = f64::MAX;
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    m = m.min(minc[yy * w + xx]);
                }
            }
            dark[y * w + x] = m;
        }
    }
    let mut dark_sorted = dark.clone();
    dark_sorted.sort_by(f64::total_cmp);
    f.push(mean(dark.iter().copied()));
    f.push(quantile(&dark_sorted, 0.1));

    // horizontal bands: brightness, texture, dark channel
    for b in 0..BANDS {
        let (y0, y1) = (b * h / BANDS, (b + 1) * h / BANDS);
        f.push(cell_mean(&luma, w, y0, y1, 0, w));
        let e = mean(
            (y0..y1)
                .flat_map(|y| (0..w - 1).map(move |x| (y, x)))
                .map(|(y, x)| (at(y, x + 1) - at(y, x)).abs()),
        );
        f.push(lg(e));
        f.push(cell_mean(&dark, w, y0, y1, 0, w));
    }

    // spatial texture layout
    for gy in 0..ENERGY_GRID {
        for gx in 0..ENERGY_GRID {
            let (y0, y1) = (
                gy * h / ENERGY_GRID,
                ((gy + 1) * h / ENERGY_GRID).min(h - 1),
            );
            let (x0, x1) = (
                gx * w / ENERGY_GRID,
                ((gx + 1) * w / ENERGY_GRID).min(w - 1),
            );
            let e = mean(
                (y0..y1)
                    .flat_map(|y| (x0..x1).map(move |x| (y, x)))
                    .map(|(y, x)| {
                        (at(y, x + 1) - at(y, x)).abs() + (at(y + 1, x) - at(y, x)).abs()
                    }),
            );
            f.push(lg(e));
        }
    }

    // tone shape
    let lm = mean(luma.iter().copied());
    let lv = mean(luma.iter().map(|v| (v - lm).powi(2)));
    let skew = mean(luma.iter().map(|v| (v - lm).powi(3))) / (lv.powf(1.5) + 1e-9);
    f.push(lg(lv.sqrt()));
    f.push(skew.clamp(-10.0, 10.0));

    // per-channel range
    for c in 0..3 {
        let mut ch: Vec<f64> = (0..h * w).map(|i| px[i * 3 + c]).collect();
        ch.sort_by(f64::total_cmp);
        f.extend([quantile(&ch, 0.01), quantile(&ch, 0.5), quantile(&ch, 0.99)]);
    }

    // clipping
    f.push(mean(luma.iter().map(|&v| (v > 0.97) as u8 as f64)));
    f.push(mean(luma.iter().map(|&v| (v < 0.03) as u8 as f64)));
    f.push(mean(px.iter().map(|&v| (v >= 254.5 / 255.0) as u8 as f64)));
    f.push(mean(px.iter().map(|&v| (v <= 0.5 / 255.0) as u8 as f64)));

    // chroma of highlights and shadows
    let (lo_l, hi_l) = (quantile(&sorted, 0.1), quantile(&sorted, 0.9));
    let sel = |pred: &dyn Fn(f64) -> bool| {
        let v: Vec<f64> = (0..h * w)
            .filter(|&i| pred(luma[i]))
            .map(|i| sat[i])
            .collect();
        mean(v.into_iter())
    };
    f.push(sel(&|l| l >= hi_l));
    f.push(sel(&|l| l <= lo_l));

    // edge sharpness: one-pixel step relative to the three-pixel rise at the strongest edges
    let mut edges: Vec<(f64, f64)> = Vec::new();
    for y in 0..h {
        for x in 1..w - 2 {
            let wide = (at(y, x + 2) - at(y, x - 1)).abs();
            let step = (at(y, x + 1) - at(y, x)).abs();
            edges.push((wide, step));
        }
    }
    edges.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top = &edges[..(edges.len() / 50).max(1)];
    f.push(mean(top.iter().map(|(wd, st)| st / (wd + 1e-3))));
    f.push(lg(mean(top.iter().map(|e| e.0))));

    // noise floor in the shadows
    let shadow: Vec<f64> = {
        let cut = quantile(&sorted, 0.3);
        let mut v: Vec<f64> = (1..h - 1)
            .flat_map(|y| (1..w - 1).map(move |x| (y, x)))
            .zip(&lap)
            .filter(|((y, x), _)| at(*y, *x) <= cut)
            .map(|(_, l)| l.abs())
            .collect();
        v.sort_by(f64::total_cmp);
        v
    };
    f.push(lg(if shadow.is_empty() {
        0.0
    } else {
        quantile(&shadow, 0.5)
    }));

    // tone range at coarser scales, insensitive to noise and fine blur
    let b4 = blur_plane(&luma, h, w, 4.0)?;
    for plane in [&b2, &b4] {
        let mut sp = plane.clone();
        sp.sort_by(f64::total_cmp);
        f.extend([
            quantile(&sp, 0.01),
            quantile(&sp, 0.05),
            quantile(&sp, 0.95),
            quantile(&sp, 0.99),
        ]);
    }

    debug_assert_eq!(f.len(), FEATURE_DIM);
    Ok(f)
}

/// Per-feature affine standardization fitted on training features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Standardizer {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Result<Standardizer> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Empty("standardizer rows".into()))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for r in rows {
            for i in 0..d {
                std[i] += (r[i] - mean[i]).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = s.sqrt().max(1e-6);
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| ((v - m) / s).clamp(-8.0, 8.0))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::SeededRng;

    fn noise_img(seed: u64) -> Image {
        let mut rng = SeededRng::new(seed);
        Image::from_fn(32, 32, 3, |_, _, _| rng.uniform(0.0, 1.0)).unwrap()
    }

    #[test]
    fn dimension_and_finiteness() {
        let f = extract_features(&noise_img(1)).unwrap();
        assert_eq!(f.len(), FEATURE_DIM);
        assert!(f.iter().all(|v| v.is_finite()));
        let flat = Image::filled(16, 16, 1, 0.5).unwrap();
        assert!(extract_features(&flat)
            .unwrap()
            .iter()
            .all(|v| v.is_finite()));
        assert!(extract_features(&Image::filled(8, 8, 3, 0.5).unwrap()).is_err());
    }

    #[test]
    fn constant_image_is_fully_flat() {
        let f = extract_features(&Image::filled(20, 20, 3, 0.25).unwrap()).unwrap();
        // first grid cell is the constant; the three flatness ratios are 1
        assert!((f[0] - 0.25).abs() < 1e-12);
        let flat_at = GRID * GRID + 6 + 4 + PERCENTILES.len() + HIST_BINS + 4 + 6;
        assert_eq!(&f[flat_at..flat_at + 3], &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn standardizer_centres() {
        let rows = vec![vec![1.0, 10.0], vec![3.0, 10.0]];
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.mean, vec![2.0, 10.0]);
        assert_eq!(s.apply(&[3.0, 10.0]), vec![1.0, 0.0]);
    }
}
