use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Rec. 601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Row-major raster of unit-interval intensities.
///
/// Every constructor and setter clamps to `[0, 1]`, so an `Image` never holds
/// an out-of-range value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        check_dims(height, width, channels)?;
        Ok(Self {
            height,
            width,
            channels,
            data: vec![clamp01(value); height * width * channels],
        })
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x{} needs {} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("NaN intensity".into()));
        }
        let data = data.into_iter().map(clamp01).collect();
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from `f(y, x, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(height, width, channels)?;
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(clamp01(f(y, x, c)));
                }
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let i = self.index(y, x, c);
        self.data[i] = clamp01(value);
    }

    /// Clamped access with coordinates outside the raster pinned to the edge.
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize, c: usize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x, c)
    }

    /// Applies `f` to every intensity, clamping the result.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| clamp01(f(v))).collect(),
        }
    }

    /// Applies `f` to every pixel as a channel slice.
    pub fn map_pixels(&self, mut f: impl FnMut(usize, usize, &[f64], &mut [f64])) -> Image {
        let mut out = self.clone();
        let ch = self.channels;
        let mut buf = vec![0.0; ch];
        for y in 0..self.height {
            for x in 0..self.width {
                let i = self.index(y, x, 0);
                f(y, x, &self.data[i..i + ch], &mut buf);
                for c in 0..ch {
                    out.data[i + c] = clamp01(buf[c]);
                }
            }
        }
        out
    }

    /// Single channel plane `c`.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn luminance_at(&self, y: usize, x: usize) -> f64 {
        if self.channels == 1 {
            self.get(y, x, 0)
        } else {
            let i = self.index(y, x, 0);
            LUMA_WEIGHTS[0] * self.data[i]
                + LUMA_WEIGHTS[1] * self.data[i + 1]
                + LUMA_WEIGHTS[2] * self.data[i + 2]
        }
    }

    /// Luma plane as a single-channel image.
    pub fn luminance(&self) -> Image {
        let mut data = Vec::with_capacity(self.height * self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                data.push(self.luminance_at(y, x));
            }
        }
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    /// Pixelwise difference test used by identity checks.
    pub fn bit_identical(&self, other: &Image) -> bool {
        self.dims() == other.dims()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Normalized depth in `[0, 1]`, with 1 the farthest point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, 1)?;
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "depth {}x{} needs {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data: data.into_iter().map(clamp01).collect(),
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::from_vec(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(height, width, 1)?;
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(clamp01(f(y, x)));
            }
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn matches(&self, image: &Image) -> bool {
        self.height == image.height() && self.width == image.width()
    }

    /// Value at quantile `q` (nearest-rank).
    pub fn percentile(&self, q: f64) -> f64 {
        let mut v = self.data.clone();
        v.sort_by(|a, b| a.total_cmp(b));
        let rank = ((q.clamp(0.0, 1.0) * (v.len() - 1) as f64).round()) as usize;
        v[rank]
    }

    pub fn as_image(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.clone(),
        }
    }
}

#[inline]
pub(crate) fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Empty(format!("image dims {}x{}", height, width)));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::invalid(format!(
            "channels must be 1 or 3, got {}",
            channels
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_are_clamped() {
        let img = Image::from_vec(1, 2, 1, vec![-0.5, 1.5]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
        let mut img = img;
        img.set(0, 0, 0, 7.0);
        assert_eq!(img.get(0, 0, 0), 1.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Image::new(0, 4, 1).is_err());
        assert!(Image::new(4, 4, 2).is_err());
        assert!(Image::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn luminance_of_gray_rgb_is_the_gray_level() {
        let img = Image::filled(2, 2, 3, 0.25).unwrap();
        let l = img.luminance();
        assert!(l.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn depth_percentile_nearest_rank() {
        let d = DepthMap::from_vec(1, 5, vec![0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        assert_eq!(d.percentile(0.5), 0.5);
        assert_eq!(d.percentile(1.0), 1.0);
    }
}
