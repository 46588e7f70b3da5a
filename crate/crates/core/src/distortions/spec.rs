use serde::{Deserialize, Serialize};

use super::kind::{Category, DistortionKind};
use crate::imaging::SeededRng;
use crate::{Error, Result};

/// Resolution at which pixel-valued raindrop radii are specified; drops are
/// rendered scaled by `min(height, width) / REFERENCE_RESOLUTION`.
pub const REFERENCE_RESOLUTION: f64 = 512.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlurDirection {
    Horizontal,
    Vertical,
    Diagonal,
    Antidiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMask {
    pub threshold: f64,
    /// Blur pixels nearer than the threshold when true, farther otherwise.
    pub foreground: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorCast {
    Warm,
    Cool,
    Green,
    Magenta,
    Cyan,
    Yellow,
}

impl ColorCast {
    pub const ALL: [ColorCast; 6] = [
        ColorCast::Warm,
        ColorCast::Cool,
        ColorCast::Green,
        ColorCast::Magenta,
        ColorCast::Cyan,
        ColorCast::Yellow,
    ];

    pub fn rgb(self) -> [f64; 3] {
        match self {
            ColorCast::Warm => [1.0, 0.6, 0.2],
            ColorCast::Cool => [0.2, 0.5, 1.0],
            ColorCast::Green => [0.2, 1.0, 0.3],
            ColorCast::Magenta => [1.0, 0.2, 1.0],
            ColorCast::Cyan => [0.2, 1.0, 1.0],
            ColorCast::Yellow => [1.0, 1.0, 0.2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Gaussian,
    SaltPepper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Raindrop {
    /// Centre as a fraction of width / height.
    pub x: f64,
    pub y: f64,
    /// Radius in pixels at the reference resolution.
    pub radius: f64,
}

/// A sampled distortion: the kind tag plus every parameter needed to apply
/// it. Stochastic transforms carry their own `seed`, so application is a
/// pure function of the spec and the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistortionSpec {
    MotionBlur {
        kernel_size: usize,
        direction: BlurDirection,
        depth_mask: Option<DepthMask>,
    },
    ElasticWarp {
        sigma: f64,
        alpha: f64,
        seed: u64,
    },
    Refraction {
        strength: f64,
        sigma: f64,
        seed: u64,
    },
    DefocusBlur {
        kernel_size: usize,
    },
    LowLight {
        factor: f64,
    },
    ColorJitter {
        shift: [f64; 3],
        cast: ColorCast,
        cast_intensity: f64,
    },
    Overexposure {
        factor: f64,
        threshold: f64,
    },
    Underexposure {
        factor: f64,
        shadow_threshold: f64,
        noise_sigma: f64,
        seed: u64,
    },
    Contrast {
        factor: f64,
    },
    Saturation {
        factor: f64,
    },
    Haze {
        alpha: f64,
    },
    Rain {
        kernels: [usize; 2],
        zoom: f64,
        visibility: f64,
        opacity: f64,
        angle: f64,
        seed: u64,
    },
    Snow {
        visibility: f64,
        seed: u64,
    },
    Clouds {
        opacity: f64,
        shadow: f64,
        blur_scale: f64,
        seed: u64,
    },
    Raindrops {
        drops: Vec<Raindrop>,
        edge_darken: f64,
    },
    GaussianNoise {
        mode: NoiseMode,
        /// σ for Gaussian mode, corrupted fraction for salt-and-pepper.
        level: f64,
        seed: u64,
    },
    Pixelation {
        factor: f64,
    },
}

fn check(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if v.is_finite() && v >= lo && v <= hi {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{} = {} outside [{}, {}]",
            name, v, lo, hi
        )))
    }
}

impl DistortionSpec {
    pub fn kind(&self) -> DistortionKind {
        use DistortionKind as K;
        match self {
            DistortionSpec::MotionBlur { .. } => K::MotionBlur,
            DistortionSpec::ElasticWarp { .. } => K::ElasticWarp,
            DistortionSpec::Refraction { .. } => K::Refraction,
            DistortionSpec::DefocusBlur { .. } => K::DefocusBlur,
            DistortionSpec::LowLight { .. } => K::LowLight,
            DistortionSpec::ColorJitter { .. } => K::ColorJitter,
            DistortionSpec::Overexposure { .. } => K::Overexposure,
            DistortionSpec::Underexposure { .. } => K::Underexposure,
            DistortionSpec::Contrast { .. } => K::Contrast,
            DistortionSpec::Saturation { .. } => K::Saturation,
            DistortionSpec::Haze { .. } => K::Haze,
            DistortionSpec::Rain { .. } => K::Rain,
            DistortionSpec::Snow { .. } => K::Snow,
            DistortionSpec::Clouds { .. } => K::Clouds,
            DistortionSpec::Raindrops { .. } => K::Raindrops,
            DistortionSpec::GaussianNoise { .. } => K::GaussianNoise,
            DistortionSpec::Pixelation { .. } => K::Pixelation,
        }
    }

    pub fn category(&self) -> Category {
        self.kind().category()
    }

    pub fn needs_depth(&self) -> bool {
        match self {
            DistortionSpec::MotionBlur { depth_mask, .. } => depth_mask.is_some(),
            other => other.kind().needs_depth(),
        }
    }

    /// Checks every parameter against its sampling range.
    pub fn validate(&self) -> Result<()> {
        match self {
            DistortionSpec::MotionBlur {
                kernel_size,
                depth_mask,
                ..
            } => {
                check("motion_blur.kernel_size", *kernel_size as f64, 5.0, 10.0)?;
                if let Some(m) = depth_mask {
                    check("motion_blur.threshold", m.threshold, 0.3, 0.7)?;
                }
                Ok(())
            }
            DistortionSpec::ElasticWarp { sigma, alpha, .. } => {
                check("elastic_warp.sigma", *sigma, 20.0, 30.0)?;
                check("elastic_warp.alpha", *alpha, 10.0, 20.0)
            }
            DistortionSpec::Refraction {
                strength, sigma, ..
            } => {
                check("refraction.strength", *strength, 20.0, 80.0)?;
                check("refraction.sigma", *sigma, 10.0, 10.0)
            }
            DistortionSpec::DefocusBlur { kernel_size } => {
                check("defocus_blur.kernel_size", *kernel_size as f64, 3.0, 19.0)?;
                if kernel_size % 2 == 0 {
                    return Err(Error::invalid("defocus_blur.kernel_size must be odd"));
                }
                Ok(())
            }
            DistortionSpec::LowLight { factor } => check("low_light.factor", *factor, 0.4, 0.9),
            DistortionSpec::ColorJitter {
                shift,
                cast_intensity,
                ..
            } => {
                for s in shift {
                    check("color_jitter.shift", *s, -0.4, 0.4)?;
                }
                check("color_jitter.cast_intensity", *cast_intensity, 0.1, 0.3)
            }
            DistortionSpec::Overexposure { factor, threshold } => {
                check("overexposure.factor", *factor, 1.0, 1.5)?;
                check("overexposure.threshold", *threshold, 0.4, 0.9)
            }
            DistortionSpec::Underexposure {
                factor,
                shadow_threshold,
                noise_sigma,
                ..
            } => {
                check("underexposure.factor", *factor, 0.5, 0.9)?;
                check(
                    "underexposure.shadow_threshold",
                    *shadow_threshold,
                    0.1,
                    0.3,
                )?;
                check("underexposure.noise_sigma", *noise_sigma, 0.02, 0.08)
            }
            DistortionSpec::Contrast { factor } => check("contrast.factor", *factor, 0.4, 1.0),
            DistortionSpec::Saturation { factor } => check("saturation.factor", *factor, 0.4, 1.0),
            DistortionSpec::Haze { alpha } => check("haze.alpha", *alpha, 0.65, 0.9),
            DistortionSpec::Rain {
                kernels,
                zoom,
                visibility,
                opacity,
                angle,
                ..
            } => {
                for k in kernels {
                    check("rain.kernel", *k as f64, 7.0, 23.0)?;
                }
                check("rain.zoom", *zoom, 1.0, 3.5)?;
                check("rain.visibility", *visibility, 8000.0, 15000.0)?;
                check("rain.opacity", *opacity, 0.2, 0.4)?;
                check("rain.angle", *angle, -20.0, 20.0)
            }
            DistortionSpec::Snow { visibility, .. } => {
                check("snow.visibility", *visibility, 10000.0, 20000.0)
            }
            DistortionSpec::Clouds {
                opacity,
                shadow,
                blur_scale,
                ..
            } => {
                check("clouds.opacity", *opacity, 0.7, 1.0)?;
                check("clouds.shadow", *shadow, 0.2, 0.7)?;
                check("clouds.blur_scale", *blur_scale, 1.0, 3.0)
            }
            DistortionSpec::Raindrops { drops, edge_darken } => {
                check("raindrops.count", drops.len() as f64, 20.0, 60.0)?;
                for d in drops {
                    check("raindrops.radius", d.radius, 3.0, 50.0)?;
                    check("raindrops.x", d.x, 0.0, 1.0)?;
                    check("raindrops.y", d.y, 0.0, 1.0)?;
                }
                check("raindrops.edge_darken", *edge_darken, 0.4, 0.8)
            }
            DistortionSpec::GaussianNoise { mode, level, .. } => match mode {
                NoiseMode::Gaussian => check("gaussian_noise.sigma", *level, 0.05, 0.1),
                NoiseMode::SaltPepper => check("gaussian_noise.amount", *level, 0.02, 0.08),
            },
            DistortionSpec::Pixelation { factor } => check("pixelation.factor", *factor, 2.0, 4.0),
        }
    }

    /// Spec with every continuous parameter at the midpoint of its range
    /// and discrete choices fixed; used for controlled restoration studies.
    pub fn midpoint(kind: DistortionKind, seed: u64) -> DistortionSpec {
        use DistortionKind as K;
        match kind {
            K::MotionBlur => DistortionSpec::MotionBlur {
                kernel_size: 7,
                direction: BlurDirection::Horizontal,
                depth_mask: None,
            },
            K::ElasticWarp => DistortionSpec::ElasticWarp {
                sigma: 25.0,
                alpha: 15.0,
                seed,
            },
            K::Refraction => DistortionSpec::Refraction {
                strength: 50.0,
                sigma: 10.0,
                seed,
            },
            K::DefocusBlur => DistortionSpec::DefocusBlur { kernel_size: 11 },
            K::LowLight => DistortionSpec::LowLight { factor: 0.65 },
            K::ColorJitter => DistortionSpec::ColorJitter {
                shift: [0.2, 0.0, -0.2],
                cast: ColorCast::Warm,
                cast_intensity: 0.2,
            },
            K::Overexposure => DistortionSpec::Overexposure {
                factor: 1.25,
                threshold: 0.65,
            },
            K::Underexposure => DistortionSpec::Underexposure {
                factor: 0.7,
                shadow_threshold: 0.2,
                noise_sigma: 0.05,
                seed,
            },
            K::Contrast => DistortionSpec::Contrast { factor: 0.7 },
            K::Saturation => DistortionSpec::Saturation { factor: 0.7 },
            K::Haze => DistortionSpec::Haze { alpha: 0.775 },
            K::Rain => DistortionSpec::Rain {
                kernels: [11, 19],
                zoom: 2.25,
                visibility: 11500.0,
                opacity: 0.3,
                angle: 0.0,
                seed,
            },
            K::Snow => DistortionSpec::Snow {
                visibility: 15000.0,
                seed,
            },
            K::Clouds => DistortionSpec::Clouds {
                opacity: 0.85,
                shadow: 0.45,
                blur_scale: 2.0,
                seed,
            },
            K::Raindrops => {
                let mut rng = SeededRng::new(seed);
                let drops = (0..40)
                    .map(|_| Raindrop {
                        x: rng.uniform(0.0, 1.0),
                        y: rng.uniform(0.0, 1.0),
                        radius: 26.5,
                    })
                    .collect();
                DistortionSpec::Raindrops {
                    drops,
                    edge_darken: 0.6,
                }
            }
            K::GaussianNoise => DistortionSpec::GaussianNoise {
                mode: NoiseMode::Gaussian,
                level: 0.075,
                seed,
            },
            K::Pixelation => DistortionSpec::Pixelation { factor: 3.0 },
        }
    }
}

/// Draws every parameter of `kind` uniformly from its range.
pub fn sample_spec(kind: DistortionKind, rng: &mut SeededRng) -> DistortionSpec {
    use DistortionKind as K;
    match kind {
        K::MotionBlur => {
            let kernel_size = rng.uniform_int(5, 10) as usize;
            let direction = *rng.choose(&[
                BlurDirection::Horizontal,
                BlurDirection::Vertical,
                BlurDirection::Diagonal,
                BlurDirection::Antidiagonal,
            ]);
            let threshold = rng.uniform(0.3, 0.7);
            let foreground = rng.coin(0.5);
            let masked = rng.coin(0.5);
            DistortionSpec::MotionBlur {
                kernel_size,
                direction,
                depth_mask: masked.then_some(DepthMask {
                    threshold,
                    foreground,
                }),
            }
        }
        K::ElasticWarp => DistortionSpec::ElasticWarp {
            sigma: rng.uniform(20.0, 30.0),
            alpha: rng.uniform(10.0, 20.0),
            seed: rng.next_seed(),
        },
        K::Refraction => DistortionSpec::Refraction {
            strength: rng.uniform(20.0, 80.0),
            sigma: 10.0,
            seed: rng.next_seed(),
        },
        K::DefocusBlur => DistortionSpec::DefocusBlur {
            kernel_size: (3 + 2 * rng.uniform_int(0, 8)) as usize,
        },
        K::LowLight => DistortionSpec::LowLight {
            factor: rng.uniform(0.4, 0.9),
        },
        K::ColorJitter => DistortionSpec::ColorJitter {
            shift: [
                rng.uniform(-0.4, 0.4),
                rng.uniform(-0.4, 0.4),
                rng.uniform(-0.4, 0.4),
            ],
            cast: *rng.choose(&ColorCast::ALL),
            cast_intensity: rng.uniform(0.1, 0.3),
        },
        K::Overexposure => DistortionSpec::Overexposure {
            factor: rng.uniform(1.0, 1.5),
            threshold: rng.uniform(0.4, 0.9),
        },
        K::Underexposure => DistortionSpec::Underexposure {
            factor: rng.uniform(0.5, 0.9),
            shadow_threshold: rng.uniform(0.1, 0.3),
            noise_sigma: rng.uniform(0.02, 0.08),
            seed: rng.next_seed(),
        },
        K::Contrast => DistortionSpec::Contrast {
            factor: rng.uniform(0.4, 1.0),
        },
        K::Saturation => DistortionSpec::Saturation {
            factor: rng.uniform(0.4, 1.0),
        },
        K::Haze => DistortionSpec::Haze {
            alpha: rng.uniform(0.65, 0.9),
        },
        K::Rain => DistortionSpec::Rain {
            kernels: [
                rng.uniform_int(7, 23) as usize,
                rng.uniform_int(7, 23) as usize,
            ],
            zoom: rng.uniform(1.0, 3.5),
            visibility: rng.uniform(8000.0, 15000.0),
            opacity: rng.uniform(0.2, 0.4),
            angle: rng.uniform(-20.0, 20.0),
            seed: rng.next_seed(),
        },
        K::Snow => DistortionSpec::Snow {
            visibility: rng.uniform(10000.0, 20000.0),
            seed: rng.next_seed(),
        },
        K::Clouds => DistortionSpec::Clouds {
            opacity: rng.uniform(0.7, 1.0),
            shadow: rng.uniform(0.2, 0.7),
            blur_scale: rng.uniform(1.0, 3.0),
            seed: rng.next_seed(),
        },
        K::Raindrops => {
            let count = rng.uniform_int(20, 60) as usize;
            let drops = (0..count)
                .map(|_| Raindrop {
                    x: rng.uniform(0.0, 1.0),
                    y: rng.uniform(0.0, 1.0),
                    radius: rng.uniform(3.0, 50.0),
                })
                .collect();
            DistortionSpec::Raindrops {
                drops,
                edge_darken: rng.uniform(0.4, 0.8),
            }
        }
        K::GaussianNoise => {
            // the Gaussian / salt-and-pepper coin is flipped here and stored
            if rng.coin(0.5) {
                DistortionSpec::GaussianNoise {
                    mode: NoiseMode::Gaussian,
                    level: rng.uniform(0.05, 0.1),
                    seed: rng.next_seed(),
                }
            } else {
                DistortionSpec::GaussianNoise {
                    mode: NoiseMode::SaltPepper,
                    level: rng.uniform(0.02, 0.08),
                    seed: rng.next_seed(),
                }
            }
        }
        K::Pixelation => DistortionSpec::Pixelation {
            factor: rng.uniform(2.0, 4.0),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haze_and_defocus_ranges() {
        let mut rng = SeededRng::new(42);
        for _ in 0..1000 {
            match sample_spec(DistortionKind::Haze, &mut rng) {
                DistortionSpec::Haze { alpha } => assert!((0.65..=0.9).contains(&alpha)),
                _ => unreachable!(),
            }
            match sample_spec(DistortionKind::DefocusBlur, &mut rng) {
                DistortionSpec::DefocusBlur { kernel_size } => {
                    assert!(kernel_size % 2 == 1 && (3..=19).contains(&kernel_size))
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn low_light_moments() {
        // U(0.4, 0.9): mean 0.65, sd 0.144; the 10^4-sample mean has sd 0.0014.
        let mut rng = SeededRng::new(42);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| match sample_spec(DistortionKind::LowLight, &mut rng) {
                DistortionSpec::LowLight { factor } => factor,
                _ => unreachable!(),
            })
            .collect();
        let min = draws.iter().copied().fold(f64::INFINITY, f64::min);
        let max = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(min >= 0.4 && max <= 0.9);
        assert!((mean - 0.65).abs() < 0.01, "mean {}", mean);
    }

    #[test]
    fn every_kind_samples_into_range() {
        let mut rng = SeededRng::new(7);
        for kind in DistortionKind::ALL {
            for _ in 0..500 {
                let s = sample_spec(kind, &mut rng);
                assert_eq!(s.kind(), kind);
                s.validate().unwrap();
            }
        }
    }

    #[test]
    fn midpoints_are_valid() {
        for kind in DistortionKind::ALL {
            DistortionSpec::midpoint(kind, 1).validate().unwrap();
        }
    }

    #[test]
    fn json_uses_kind_tag() {
        let s = DistortionSpec::Haze { alpha: 0.7 };
        let j = serde_json::to_value(&s).unwrap();
        assert_eq!(j["kind"], "haze");
        assert_eq!(j["alpha"], 0.7);
        let err = serde_json::from_str::<DistortionSpec>(r#"{"kind":"smog","alpha":0.7}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("smog"), "{}", err);
    }
}
