//! Deterministic raster primitives shared by every other module.

mod image;
pub mod io;
mod kernel;
mod noise;
mod resize;
mod rng;
mod warp;

pub use self::image::{DepthMap, Image, LUMA_WEIGHTS};
pub use kernel::{
    convolve2d, gaussian_blur, gaussian_kernel, gaussian_kernel_1d, reflect_index, Kernel,
};
pub use noise::{fractal_noise, perlin_noise};
pub use resize::{resize, resize_nearest, resize_to};
pub use rng::{child_seed, splitmix64, SeededRng};
pub use warp::{warp, DisplacementField};

/// Gaussian blur of a single signed plane (no clamping).
pub(crate) fn blur_plane(plane: &[f64], h: usize, w: usize, sigma: f64) -> crate::Result<Vec<f64>> {
    kernel::blur_plane_channels(plane, h, w, 1, sigma)
}

/// Bicubic resize of a single plane whose values lie in `[0, 1]`.
pub(crate) fn resize_plane(
    plane: &[f64],
    h: usize,
    w: usize,
    new_h: usize,
    new_w: usize,
) -> crate::Result<Vec<f64>> {
    let img = Image::from_vec(h, w, 1, plane.to_vec())?;
    Ok(resize_to(&img, new_h, new_w)?.into_data())
}

pub(crate) use warp::bilinear as bilinear_sample;
