use serde::{Deserialize, Serialize};

use crate::distortions::LabelSet;
use crate::imaging::{gaussian_kernel_1d, Image};
use crate::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn mse(reference: &Image, candidate: &Image) -> Result<f64> {
    check_dims(reference, candidate)?;
    let n = reference.len() as f64;
    Ok(reference
        .data()
        .iter()
        .zip(candidate.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n)
}

/// `10 log10(1 / MSE)` on the unit range, capped at [`PSNR_CAP`].
pub fn psnr(reference: &Image, candidate: &Image) -> Result<f64> {
    let m = mse(reference, candidate)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Gaussian-weighted local statistics over every full 11×11 window.
fn ssim_channel(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64]) -> f64 {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    // separable sums of x, y, x², y², xy: first along rows, then columns
    let fields: [Box<dyn Fn(usize) -> f64>; 5] = [
        Box::new(|i| a[i]),
        Box::new(|i| b[i]),
        Box::new(|i| a[i] * a[i]),
        Box::new(|i| b[i] * b[i]),
        Box::new(|i| a[i] * b[i]),
    ];
    let mut maps: Vec<Vec<f64>> = Vec::with_capacity(5);
    for f in &fields {
        let mut rows = vec![0.0; h * ow];
        for y in 0..h {
            for x in 0..ow {
                rows[y * ow + x] = (0..k).map(|t| taps[t] * f(y * w + x + t)).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..k).map(|t| taps[t] * rows[(y + t) * ow + x]).sum();
            }
        }
        maps.push(out);
    }
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (mx, my) = (maps[0][i], maps[1][i]);
        let vx = maps[2][i] - mx * mx;
        let vy = maps[3][i] - my * my;
        let cxy = maps[4][i] - mx * my;
        total +=
            ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
    }
    total / (oh * ow) as f64
}

/// Mean SSIM (11-tap Gaussian window, σ = 1.5, C1 = 0.01², C2 = 0.03²)
/// over all fully contained windows, averaged over channels.
pub fn ssim(reference: &Image, candidate: &Image) -> Result<f64> {
    check_dims(reference, candidate)?;
    let (h, w, ch) = reference.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {0}x{0}",
            SSIM_WINDOW
        )));
    }
    let taps = gaussian_kernel_1d(SSIM_SIGMA, SSIM_WINDOW)?;
    let mut s = 0.0;
    for c in 0..ch {
        s += ssim_channel(&reference.channel(c), &candidate.channel(c), h, w, &taps);
    }
    Ok(s / ch as f64)
}

/// Per-item and aggregate fidelity.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub count: usize,
    /// Items whose PSNR hit the identical-image cap.
    pub capped: usize,
}

impl MetricReport {
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a Image, &'a Image)>,
    ) -> Result<MetricReport> {
        let mut r = MetricReport::default();
        for (a, b) in pairs {
            let p = psnr(a, b)?;
            r.capped += (p >= PSNR_CAP) as usize;
            r.psnr.push(p);
            r.ssim.push(ssim(a, b)?);
        }
        r.count = r.psnr.len();
        if r.count > 0 {
            r.mean_psnr = r.psnr.iter().sum::<f64>() / r.count as f64;
            r.mean_ssim = r.ssim.iter().sum::<f64>() / r.count as f64;
        }
        Ok(r)
    }
}

/// Micro-averaged multi-label F1. Perfect (1) when nothing is predicted
/// and nothing is present.
pub fn micro_f1(predicted: &[LabelSet], truth: &[LabelSet]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch(
            "prediction and truth counts differ".into(),
        ));
    }
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for (p, t) in predicted.iter().zip(truth) {
        tp += p.intersection(*t).len();
        fp += p.difference(*t).len();
        fnn += t.difference(*p).len();
    }
    if tp + fp + fnn == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fnn) as f64)
}

/// Requested labels gone and every other detected label kept.
pub fn is_faithful(before: LabelSet, after: LabelSet, targets: LabelSet) -> bool {
    targets.is_disjoint(after) && before.difference(targets).is_subset(after)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distortions::Category as C;
    use crate::imaging::SeededRng;

    #[test]
    fn psnr_hand_values() {
        let a = Image::filled(4, 4, 1, 0.5).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::filled(4, 4, 1, 0.6).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let z = Image::filled(4, 4, 1, 0.0).unwrap();
        let o = Image::filled(4, 4, 1, 1.0).unwrap();
        assert_eq!(psnr(&z, &o).unwrap(), 0.0);
        assert!(psnr(&a, &Image::filled(4, 5, 1, 0.5).unwrap()).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let mut rng = SeededRng::new(1);
        let clean = Image::filled(16, 16, 1, 0.5).unwrap();
        let mut means = vec![];
        for sigma in [0.01, 0.05, 0.1] {
            let mut s = 0.0;
            for _ in 0..100 {
                let draws: Vec<f64> = (0..clean.len()).map(|_| sigma * rng.normal()).collect();
                let noisy = Image::from_vec(
                    16,
                    16,
                    1,
                    clean
                        .data()
                        .iter()
                        .zip(&draws)
                        .map(|(a, b)| a + b)
                        .collect(),
                )
                .unwrap();
                s += psnr(&clean, &noisy).unwrap();
            }
            means.push(s / 100.0);
        }
        assert!(means[0] > means[1] && means[1] > means[2]);
    }

    /// Direct evaluation of the SSIM formula on one window covering the
    /// whole 11×11 image.
    fn ssim_single_window(a: &[f64], b: &[f64]) -> f64 {
        let g = gaussian_kernel_1d(1.5, 11).unwrap();
        let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for y in 0..11 {
            for x in 0..11 {
                let w = g[y] * g[x];
                let (p, q) = (a[y * 11 + x], b[y * 11 + x]);
                mx += w * p;
                my += w * q;
                xx += w * p * p;
                yy += w * q * q;
                xy += w * p * q;
            }
        }
        let (vx, vy, c) = (xx - mx * mx, yy - my * my, xy - mx * my);
        ((2.0 * mx * my + C1) * (2.0 * c + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2))
    }

    #[test]
    fn ssim_identity_symmetry_and_brute_force() {
        let mut rng = SeededRng::new(2);
        let a = Image::from_fn(20, 24, 3, |_, _, _| rng.uniform(0.0, 1.0)).unwrap();
        let b = a.map(|v| v * 0.8 + 0.05);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);

        let checker = Image::from_fn(11, 11, 1, |y, x, _| ((y + x) % 2) as f64).unwrap();
        let inv = checker.map(|v| 1.0 - v);
        let s = ssim(&checker, &inv).unwrap();
        assert!((s - ssim_single_window(checker.data(), inv.data())).abs() < 1e-12);
        // perfect anti-correlation; the C2 stabilizer keeps it just above -1
        assert!(s < -0.99 && s > -1.0, "{}", s);
    }

    #[test]
    fn ssim_continuity_on_constants() {
        let a = Image::filled(16, 16, 1, 0.5).unwrap();
        let near = ssim(&a, &Image::filled(16, 16, 1, 0.5 + 1e-4).unwrap()).unwrap();
        let far = ssim(&a, &Image::filled(16, 16, 1, 0.6).unwrap()).unwrap();
        assert!(near > 0.99999 && far < near);
    }

    #[test]
    fn f1_and_faithfulness() {
        let h = LabelSet::single(C::Haze);
        let hr: LabelSet = [C::Haze, C::Rain].into_iter().collect();
        assert_eq!(micro_f1(&[h], &[h]).unwrap(), 1.0);
        // tp 1, fn 1 → 2/3
        assert!((micro_f1(&[h], &[hr]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            micro_f1(&[LabelSet::empty()], &[LabelSet::empty()]).unwrap(),
            1.0
        );

        let snow = LabelSet::single(C::Snow);
        assert!(is_faithful(LabelSet::empty(), LabelSet::empty(), snow));
        assert!(is_faithful(hr, hr, snow));
        assert!(!is_faithful(hr, LabelSet::single(C::Rain), snow));
        assert!(!is_faithful(hr, hr, h));
        assert!(is_faithful(hr, LabelSet::single(C::Rain), h));
    }
}
