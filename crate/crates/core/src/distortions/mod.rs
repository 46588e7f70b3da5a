//! Parametric degradation library: seventeen concrete transforms grouped into
//! fourteen label categories, with samplers for their parameter ranges.

mod apply;
mod kind;
mod render;
mod spec;

pub use apply::{apply, apply_chain, defocus_sigma, DEPTH_RANGE_METERS};
pub use kind::{kinds_to_labels, Category, DistortionKind, Grouping, LabelSet, NUM_CATEGORIES};
pub use spec::{
    sample_spec, BlurDirection, ColorCast, DepthMask, DistortionSpec, NoiseMode, Raindrop,
    REFERENCE_RESOLUTION,
};

pub(crate) use apply::{defocus_taps, mean_luminance, motion_kernel};
pub(crate) use render::{cloud_layers, fog_weights, rain_layer, smooth_field, snow_layers};
