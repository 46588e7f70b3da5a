use super::image::clamp01;
use super::Image;
use crate::{Error, Result};

/// Square, odd-sized convolution kernel stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel size must be odd, got {}",
                size
            )));
        }
        if data.len() != size * size {
            return Err(Error::DimensionMismatch(format!(
                "kernel {}x{} needs {} weights, got {}",
                size,
                size,
                size * size,
                data.len()
            )));
        }
        Ok(Self { size, data })
    }

    pub fn identity() -> Self {
        Self {
            size: 1,
            data: vec![1.0],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Rescales weights to sum to one.
    pub fn normalized(mut self) -> Self {
        let s = self.sum();
        if s != 0.0 {
            self.data.iter_mut().for_each(|w| *w /= s);
        }
        self
    }
}

/// Normalized 2D Gaussian `exp(-r²/2σ²)` on a `size × size` grid.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<Kernel> {
    let row = gaussian_kernel_1d(sigma, size)?;
    let mut data = Vec::with_capacity(size * size);
    for a in &row {
        for b in &row {
            data.push(a * b);
        }
    }
    // Products of two normalized 1D kernels already sum to one; renormalize
    // anyway to absorb the rounding of the outer product.
    Kernel::new(size, data).map(Kernel::normalized)
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_kernel_1d(sigma: f64, size: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {}",
            sigma
        )));
    }
    if size == 0 || size % 2 == 0 {
        return Err(Error::invalid(format!(
            "kernel size must be odd, got {}",
            size
        )));
    }
    let half = (size / 2) as isize;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    Ok(taps)
}

/// Mirror index without edge repetition (`d c b | a b c d | c b a`), valid
/// for arbitrarily large offsets.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// 2D convolution with reflected borders; output has the input's dims.
pub fn convolve2d(image: &Image, kernel: &Kernel) -> Result<Image> {
    if image.is_empty() {
        return Err(Error::Empty("convolve2d on empty image".into()));
    }
    let (h, w, ch) = image.dims();
    let k = kernel.size();
    let half = (k / 2) as isize;
    let mut out = vec![0.0; h * w * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for ky in 0..k {
                    // true convolution: flip the kernel
                    let sy = reflect_index(y as isize + half - ky as isize, h);
                    for kx in 0..k {
                        let wgt = kernel.at(ky, kx);
                        if wgt == 0.0 {
                            continue;
                        }
                        let sx = reflect_index(x as isize + half - kx as isize, w);
                        acc += wgt * image.get(sy, sx, c);
                    }
                }
                out[(y * w + x) * ch + c] = clamp01(acc);
            }
        }
    }
    Image::from_vec(h, w, ch, out)
}

/// Separable Gaussian blur with a `2⌈3σ⌉+1` tap kernel and reflected borders.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Result<Image> {
    let raw = blur_plane_channels(
        image.data(),
        image.height(),
        image.width(),
        image.channels(),
        sigma,
    )?;
    Image::from_vec(image.height(), image.width(), image.channels(), raw)
}

/// Gaussian blur of raw interleaved data without clamping, used for
/// displacement fields and other signed planes.
pub(crate) fn blur_plane_channels(
    data: &[f64],
    h: usize,
    w: usize,
    ch: usize,
    sigma: f64,
) -> Result<Vec<f64>> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let taps = gaussian_kernel_1d(sigma, 2 * radius + 1)?;
    let half = radius as isize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, t) in taps.iter().enumerate() {
                    let sx = reflect_index(x as isize + i as isize - half, w);
                    acc += t * data[(y * w + sx) * ch + c];
                }
                tmp[(y * w + x) * ch + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, t) in taps.iter().enumerate() {
                    let sy = reflect_index(y as isize + i as isize - half, h);
                    acc += t * tmp[(sy * w + x) * ch + c];
                }
                out[(y * w + x) * ch + c] = acc;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_kernel() {
        let k = gaussian_kernel(1.0, 1).unwrap();
        assert_eq!(k.data(), &[1.0]);
    }

    #[test]
    fn large_sigma_tends_to_box() {
        let k = gaussian_kernel(1e6, 3).unwrap();
        for w in k.data() {
            assert!((w - 1.0 / 9.0).abs() < 1e-9);
        }
    }

    #[test]
    fn small_sigma_matches_hand_evaluation() {
        // exp(-r²/2σ²) with σ = 0.5: center 1, edge e^-2, corner e^-4.
        let e2 = (-2.0f64).exp();
        let e4 = (-4.0f64).exp();
        let z = 1.0 + 4.0 * e2 + 4.0 * e4;
        let k = gaussian_kernel(0.5, 3).unwrap();
        assert!((k.at(1, 1) - 1.0 / z).abs() < 1e-15);
        assert!((k.at(0, 1) - e2 / z).abs() < 1e-15);
        assert!((k.at(0, 0) - e4 / z).abs() < 1e-15);
        assert!((k.at(1, 1) / k.at(1, 0) - 2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn kernel_sums_to_one_and_is_rotation_symmetric() {
        for &(s, n) in &[(0.3, 5), (1.7, 9), (4.0, 21)] {
            let k = gaussian_kernel(s, n).unwrap();
            assert!((k.sum() - 1.0).abs() < 1e-12);
            for r in 0..n {
                for c in 0..n {
                    assert_eq!(k.at(r, c), k.at(n - 1 - r, n - 1 - c));
                }
            }
        }
    }

    #[test]
    fn rejects_even_and_nonpositive() {
        assert!(gaussian_kernel(1.0, 4).is_err());
        assert!(gaussian_kernel(1.0, 0).is_err());
        assert!(gaussian_kernel(0.0, 3).is_err());
        assert!(gaussian_kernel(-1.0, 3).is_err());
    }

    #[test]
    fn identity_kernel_is_identity() {
        let img = Image::from_fn(5, 4, 3, |y, x, c| (y * 7 + x * 3 + c) as f64 / 40.0).unwrap();
        let out = convolve2d(&img, &Kernel::identity()).unwrap();
        assert!(out.bit_identical(&img));
    }

    #[test]
    fn constant_image_is_preserved() {
        let img = Image::filled(6, 7, 1, 0.5).unwrap();
        let out = convolve2d(&img, &gaussian_kernel(1.3, 7).unwrap()).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn impulse_with_box_replicates_kernel() {
        let mut img = Image::new(3, 3, 1).unwrap();
        img.set(1, 1, 0, 1.0);
        let k = Kernel::new(3, vec![1.0 / 9.0; 9]).unwrap();
        let out = convolve2d(&img, &k).unwrap();
        // Centre sees the impulse once. With mirrored borders an edge pixel's
        // neighbourhood folds the impulse in twice and a corner's four times.
        let want = [4.0, 2.0, 4.0, 2.0, 1.0, 2.0, 4.0, 2.0, 4.0];
        for (v, w) in out.data().iter().zip(want) {
            assert!((v - w / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn impulse_in_larger_image_gives_flipped_kernel() {
        let mut img = Image::new(5, 5, 1).unwrap();
        img.set(2, 2, 0, 1.0);
        let w: Vec<f64> = (1..=9).map(|v| v as f64 / 45.0).collect();
        let k = Kernel::new(3, w.clone()).unwrap();
        let out = convolve2d(&img, &k).unwrap();
        for dy in 0..3 {
            for dx in 0..3 {
                assert!((out.get(1 + dy, 1 + dx, 0) - w[dy * 3 + dx]).abs() < 1e-15);
            }
        }
        assert_eq!(out.get(0, 0, 0), 0.0);
    }

    #[test]
    fn reflect_handles_far_offsets() {
        assert_eq!(reflect_index(-1, 4), 1);
        assert_eq!(reflect_index(4, 4), 2);
        assert_eq!(reflect_index(-7, 4), 1);
        assert_eq!(reflect_index(13, 4), 1);
        assert_eq!(reflect_index(5, 1), 0);
    }

    #[test]
    fn separable_blur_matches_direct_convolution() {
        let img =
            Image::from_fn(9, 8, 1, |y, x, _| ((y * 31 + x * 17) % 11) as f64 / 10.0).unwrap();
        let sigma = 1.0;
        let a = gaussian_blur(&img, sigma).unwrap();
        let b = convolve2d(&img, &gaussian_kernel(sigma, 7).unwrap()).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
