use super::Image;
use crate::{Error, Result};

/// Per-pixel sampling offsets in pixels: output `(y, x)` reads the source at
/// `(y + dy, x + dx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    height: usize,
    width: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl DisplacementField {
    pub fn new(height: usize, width: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        if dx.len() != height * width || dy.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "displacement field {}x{} with {} / {} offsets",
                height,
                width,
                dx.len(),
                dy.len()
            )));
        }
        if dx.iter().chain(&dy).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("displacement offset".into()));
        }
        Ok(Self {
            height,
            width,
            dx,
            dy,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            dx: vec![0.0; height * width],
            dy: vec![0.0; height * width],
        }
    }

    pub fn uniform(height: usize, width: usize, dx: f64, dy: f64) -> Self {
        Self {
            height,
            width,
            dx: vec![dx; height * width],
            dy: vec![dy; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    pub fn max_magnitude(&self) -> f64 {
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    /// Approximate inverse by fixed-point iteration `v(p) = -u(p + v(p))`.
    pub fn inverted(&self, iterations: usize) -> DisplacementField {
        let mut inv = DisplacementField::zeros(self.height, self.width);
        for _ in 0..iterations {
            let mut next = inv.clone();
            for y in 0..self.height {
                for x in 0..self.width {
                    let i = y * self.width + x;
                    let py = y as f64 + inv.dy[i];
                    let px = x as f64 + inv.dx[i];
                    next.dx[i] = -bilinear_plane(&self.dx, self.height, self.width, py, px);
                    next.dy[i] = -bilinear_plane(&self.dy, self.height, self.width, py, px);
                }
            }
            inv = next;
        }
        inv
    }
}

/// Bilinear sample of a single plane with edge clamping.
pub(crate) fn bilinear_plane(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear sample of channel `c` with edge clamping.
#[inline]
pub(crate) fn bilinear(image: &Image, y: f64, x: f64, c: usize) -> f64 {
    let (h, w, _) = image.dims();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = image.get(y0, x0, c) * (1.0 - fx) + image.get(y0, x1, c) * fx;
    let bottom = image.get(y1, x0, c) * (1.0 - fx) + image.get(y1, x1, c) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Backward warp with bilinear sampling; samples beyond the border are
/// clamped to the edge.
pub fn warp(image: &Image, field: &DisplacementField) -> Result<Image> {
    let (h, w, ch) = image.dims();
    if field.height != h || field.width != w {
        return Err(Error::DimensionMismatch(format!(
            "field {}x{} vs image {}x{}",
            field.height, field.width, h, w
        )));
    }
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = field.at(y, x);
            if dx == 0.0 && dy == 0.0 {
                continue;
            }
            for c in 0..ch {
                out.set(y, x, c, bilinear(image, y as f64 + dy, x as f64 + dx, c));
            }
        }
    }
    Ok(out)
}
