use super::SeededRng;
use crate::{Error, Result};

/// Ken Perlin's improved-noise permutation, shuffled from `rng`.
struct Lattice {
    perm: [u8; 512],
}

impl Lattice {
    fn new(rng: &mut SeededRng) -> Self {
        let mut p: Vec<u8> = (0..=255u8).collect();
        rng.shuffle(&mut p);
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = p[i & 255];
        }
        Self { perm }
    }

    #[inline]
    fn hash(&self, x: i64, y: i64) -> u8 {
        let xi = (x & 255) as usize;
        let yi = (y & 255) as usize;
        self.perm[self.perm[xi] as usize + yi]
    }

    /// Raw 2D gradient noise, range roughly `[-0.71, 0.71]`.
    fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let u = fade(fx);
        let v = fade(fy);
        let n00 = grad(self.hash(xi, yi), fx, fy);
        let n10 = grad(self.hash(xi + 1, yi), fx - 1.0, fy);
        let n01 = grad(self.hash(xi, yi + 1), fx, fy - 1.0);
        let n11 = grad(self.hash(xi + 1, yi + 1), fx - 1.0, fy - 1.0);
        let a = n00 + u * (n10 - n00);
        let b = n01 + u * (n11 - n01);
        a + v * (b - a)
    }
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn grad(hash: u8, x: f64, y: f64) -> f64 {
    // eight unit-length directions
    const D: f64 = std::f64::consts::FRAC_1_SQRT_2;
    match hash & 7 {
        0 => x,
        1 => -x,
        2 => y,
        3 => -y,
        4 => D * (x + y),
        5 => D * (x - y),
        6 => D * (-x + y),
        _ => D * (-x - y),
    }
}

// Unit gradients bound |n| by 1/sqrt(2).
const PERLIN_HALF_RANGE: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Single-octave Perlin noise mapped to `[0, 1]`, with lattice cells of
/// `scale` pixels.
pub fn perlin_noise(
    height: usize,
    width: usize,
    scale: f64,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    if height == 0 || width == 0 {
        return Err(Error::Empty("perlin noise with zero dims".into()));
    }
    if !(scale >= 1.0) {
        return Err(Error::invalid(format!(
            "perlin scale must be >= 1, got {}",
            scale
        )));
    }
    let lattice = Lattice::new(rng);
    let ox = rng.uniform(0.0, 256.0).floor();
    let oy = rng.uniform(0.0, 256.0).floor();
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let n = lattice.sample(ox + x as f64 / scale, oy + y as f64 / scale);
            out.push((0.5 + 0.5 * n / PERLIN_HALF_RANGE).clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

/// Sum of `octaves` Perlin layers (halving cell size, halving amplitude),
/// min-max stretched to `[0, 1]`.
pub fn fractal_noise(
    height: usize,
    width: usize,
    scale: f64,
    octaves: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; height * width];
    let mut amp = 1.0;
    let mut s = scale;
    for _ in 0..octaves.max(1) {
        let layer = perlin_noise(height, width, s.max(1.0), rng)?;
        for (a, l) in acc.iter_mut().zip(layer) {
            *a += amp * (l - 0.5);
        }
        amp *= 0.5;
        s *= 0.5;
    }
    let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    Ok(acc.into_iter().map(|v| (v - lo) / span).collect())
}
