use super::image::clamp01;
use super::Image;
use crate::{Error, Result};

const KEYS_A: f64 = -0.5;

/// Keys cubic convolution weight (a = -0.5).
#[inline]
fn cubic(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (KEYS_A + 2.0) * t * t * t - (KEYS_A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        KEYS_A * t * t * t - 5.0 * KEYS_A * t * t + 8.0 * KEYS_A * t - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Tap indices and weights for every output position along one axis, with
/// half-pixel-centre alignment and clamped borders.
fn axis_taps(src: usize, dst: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = (o as f64 + 0.5) * scale - 0.5;
            let base = s.floor();
            let t = s - base;
            let mut idx = [0usize; 4];
            let mut wts = [0.0; 4];
            for k in 0..4 {
                let off = k as isize - 1;
                idx[k] = (base as isize + off).clamp(0, src as isize - 1) as usize;
                wts[k] = cubic(t - off as f64);
            }
            let sum: f64 = wts.iter().sum();
            wts.iter_mut().for_each(|w| *w /= sum);
            (idx, wts)
        })
        .collect()
}

/// Bicubic resize by `factor`; output dims are `round(dim * factor)`.
pub fn resize(image: &Image, factor: f64) -> Result<Image> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::invalid(format!(
            "resize factor must be positive, got {}",
            factor
        )));
    }
    let h = (image.height() as f64 * factor).round() as usize;
    let w = (image.width() as f64 * factor).round() as usize;
    if h < 1 || w < 1 {
        return Err(Error::invalid(format!(
            "resize by {} gives empty {}x{} raster",
            factor, h, w
        )));
    }
    resize_to(image, h, w)
}

/// Bicubic resize to explicit dims.
pub fn resize_to(image: &Image, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("resize target has zero dims"));
    }
    let (h, w, ch) = image.dims();
    if (h, w) == (height, width) {
        return Ok(image.clone());
    }
    let xt = axis_taps(w, width);
    let yt = axis_taps(h, height);
    let src = image.data();
    let mut tmp = vec![0.0; h * width * ch];
    for y in 0..h {
        for (ox, (idx, wts)) in xt.iter().enumerate() {
            for c in 0..ch {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wts[k] * src[(y * w + idx[k]) * ch + c];
                }
                tmp[(y * width + ox) * ch + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; height * width * ch];
    for (oy, (idx, wts)) in yt.iter().enumerate() {
        for x in 0..width {
            for c in 0..ch {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wts[k] * tmp[(idx[k] * width + x) * ch + c];
                }
                out[(oy * width + x) * ch + c] = clamp01(acc);
            }
        }
    }
    Image::from_vec(height, width, ch, out)
}

/// Nearest-neighbour resize to explicit dims.
pub fn resize_nearest(image: &Image, height: usize, width: usize) -> Result<Image> {
    let (h, w, ch) = image.dims();
    Image::from_fn(height, width, ch, |y, x, c| {
        let sy = (((y as f64 + 0.5) * h as f64 / height as f64) as usize).min(h - 1);
        let sx = (((x as f64 + 0.5) * w as f64 / width as f64) as usize).min(w - 1);
        image.get(sy, sx, c)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_factor_is_identity() {
        let img = Image::from_fn(5, 6, 3, |y, x, c| ((y * 3 + x + c) % 5) as f64 / 4.0).unwrap();
        assert!(resize(&img, 1.0).unwrap().bit_identical(&img));
    }

    #[test]
    fn constant_down_up_round_trip() {
        let img = Image::filled(8, 12, 3, 0.37).unwrap();
        let down = resize(&img, 0.5).unwrap();
        let up = resize(&down, 2.0).unwrap();
        assert_eq!(up.dims(), img.dims());
        assert!(up.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn ramp_downsample_matches_hand_weights() {
        // Output pixel 0 samples source coordinate 0.5: Keys weights at t=0.5
        // are (-1/16, 9/16, 9/16, -1/16) over columns (-1->0, 0, 1, 2).
        let img = Image::from_fn(4, 4, 1, |_, x, _| x as f64 / 3.0).unwrap();
        let out = resize(&img, 0.5).unwrap();
        let c = |j: f64| j / 3.0;
        let want0 = -c(0.0) / 16.0 + 9.0 * c(0.0) / 16.0 + 9.0 * c(1.0) / 16.0 - c(2.0) / 16.0;
        // output 1 samples 2.5: columns 1, 2, 3, 4->3
        let want1 = -c(1.0) / 16.0 + 9.0 * c(2.0) / 16.0 + 9.0 * c(3.0) / 16.0 - c(3.0) / 16.0;
        assert_eq!(out.dims(), (2, 2, 1));
        for y in 0..2 {
            assert!((out.get(y, 0, 0) - want0).abs() < 1e-15);
            assert!((out.get(y, 1, 0) - want1).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_vanishing_output() {
        let img = Image::filled(4, 4, 1, 0.5).unwrap();
        assert!(resize(&img, 0.1).is_err());
        assert!(resize(&img, 0.0).is_err());
    }
}
