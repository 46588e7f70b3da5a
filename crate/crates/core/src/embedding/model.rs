use std::path::Path;

use super::checkpoint::{find, read_checkpoint, write_checkpoint, Tensor};
use super::features::{extract_features, Standardizer, FEATURE_DIM};
use super::mlp::{Activation, Mlp};
use crate::distortions::{Category, LabelSet, NUM_CATEGORIES};
use crate::imaging::{Image, SeededRng};
use crate::prompts::{render_prompt, PromptStyle};
use crate::{Error, Result};

/// Unit-norm embedding vector.
pub type Embedding = Vec<f64>;

/// Default decision threshold of the distortion classifier.
pub const DEFAULT_THRESHOLD: f64 = 0.85;

pub fn normalize(z: &[f64]) -> Embedding {
    let n = super::loss::norm(z).max(1e-300);
    z.iter().map(|v| v / n).collect()
}

/// Gradient through `z ↦ z/‖z‖`: `(g - e (e·g)) / ‖z‖`.
pub fn normalize_backward(z: &[f64], g: &[f64]) -> Vec<f64> {
    let n = super::loss::norm(z).max(1e-300);
    let eg: f64 = z.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / n;
    z.iter()
        .zip(g)
        .map(|(zi, gi)| (gi - zi / n * eg) / n)
        .collect()
}

fn act_code(a: Activation) -> f64 {
    match a {
        Activation::Identity => 0.0,
        Activation::Tanh => 1.0,
        Activation::Relu => 2.0,
        Activation::Sigmoid => 3.0,
    }
}

fn act_from_code(c: f64) -> Result<Activation> {
    Ok(match c as i64 {
        0 => Activation::Identity,
        1 => Activation::Tanh,
        2 => Activation::Relu,
        3 => Activation::Sigmoid,
        _ => return Err(Error::Checkpoint(format!("unknown activation code {}", c))),
    })
}

pub(crate) fn mlp_tensors(prefix: &str, m: &Mlp) -> Result<Vec<Tensor>> {
    let mut out = vec![
        Tensor::new(
            format!("{}.sizes", prefix),
            vec![m.sizes().len()],
            m.sizes().iter().map(|&s| s as f64).collect(),
        )?,
        Tensor::new(
            format!("{}.activations", prefix),
            vec![m.n_layers()],
            m.activations().iter().map(|&a| act_code(a)).collect(),
        )?,
    ];
    for l in 0..m.n_layers() {
        let (n_in, n_out) = (m.sizes()[l], m.sizes()[l + 1]);
        let off = m.layer_offset(l);
        out.push(Tensor::new(
            format!("{}.layer{}.weight", prefix, l),
            vec![n_out, n_in],
            m.params[off..off + n_in * n_out].to_vec(),
        )?);
        out.push(Tensor::new(
            format!("{}.layer{}.bias", prefix, l),
            vec![n_out],
            m.params[off + n_in * n_out..off + n_in * n_out + n_out].to_vec(),
        )?);
    }
    Ok(out)
}

pub(crate) fn mlp_from_tensors(prefix: &str, ts: &[Tensor]) -> Result<Mlp> {
    let sizes: Vec<usize> = find(ts, &format!("{}.sizes", prefix))?
        .data
        .iter()
        .map(|&v| v as usize)
        .collect();
    let acts = find(ts, &format!("{}.activations", prefix))?
        .data
        .iter()
        .map(|&c| act_from_code(c))
        .collect::<Result<Vec<_>>>()?;
    let mut params = Vec::new();
    for l in 0..acts.len() {
        params.extend_from_slice(&find(ts, &format!("{}.layer{}.weight", prefix, l))?.data);
        params.extend_from_slice(&find(ts, &format!("{}.layer{}.bias", prefix, l))?.data);
    }
    Mlp::from_params(&sizes, &acts, params)
}

/// Frozen feature extractor, fitted standardizer, trainable MLP, and
/// projection to the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub image_size: usize,
    pub standardizer: Standardizer,
    pub mlp: Mlp,
}

impl Encoder {
    /// `hidden` tanh layers followed by a linear layer of width `dim`.
    pub fn new(
        image_size: usize,
        hidden: &[usize],
        dim: usize,
        rng: &mut SeededRng,
    ) -> Result<Encoder> {
        if hidden.len() < 2 {
            return Err(Error::invalid("encoder needs at least two hidden layers"));
        }
        let mut sizes = vec![FEATURE_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        let mut acts = vec![Activation::Tanh; hidden.len()];
        acts.push(Activation::Identity);
        Ok(Encoder {
            image_size,
            standardizer: Standardizer::identity(FEATURE_DIM),
            mlp: Mlp::new(&sizes, &acts, rng)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mlp.output_dim()
    }

    /// Raw (unstandardized) features; the image must be `image_size` square.
    pub fn features(&self, image: &Image) -> Result<Vec<f64>> {
        if image.height() != self.image_size || image.width() != self.image_size {
            return Err(Error::DimensionMismatch(format!(
                "encoder expects {0}x{0}, got {1}x{2}",
                self.image_size,
                image.height(),
                image.width()
            )));
        }
        extract_features(image)
    }

    pub fn embed_features(&self, raw_features: &[f64]) -> Embedding {
        normalize(&self.mlp.forward(&self.standardizer.apply(raw_features)))
    }

    pub fn encode(&self, image: &Image) -> Result<Embedding> {
        Ok(self.embed_features(&self.features(image)?))
    }

    pub fn to_tensors(&self) -> Result<Vec<Tensor>> {
        let mut ts = vec![
            Tensor::new("encoder.image_size", vec![1], vec![self.image_size as f64])?,
            Tensor::new(
                "encoder.feature_mean",
                vec![FEATURE_DIM],
                self.standardizer.mean.clone(),
            )?,
            Tensor::new(
                "encoder.feature_std",
                vec![FEATURE_DIM],
                self.standardizer.std.clone(),
            )?,
        ];
        ts.extend(mlp_tensors("encoder.mlp", &self.mlp)?);
        Ok(ts)
    }

    pub fn from_tensors(ts: &[Tensor]) -> Result<Encoder> {
        let mean = find(ts, "encoder.feature_mean")?.data.clone();
        let std = find(ts, "encoder.feature_std")?.data.clone();
        if mean.len() != FEATURE_DIM || std.len() != FEATURE_DIM {
            return Err(Error::Checkpoint("feature dimension mismatch".into()));
        }
        Ok(Encoder {
            image_size: find(ts, "encoder.image_size")?.data[0] as usize,
            standardizer: Standardizer { mean, std },
            mlp: mlp_from_tensors("encoder.mlp", ts)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(path, &self.to_tensors()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Encoder> {
        Encoder::from_tensors(&read_checkpoint(path)?)
    }
}

/// Two-layer sigmoid-output head over embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub mlp: Mlp,
}

/// Probe trained jointly with the encoder for the quality term.
pub type ProbeHead = Head;
/// Deployment classifier trained on the frozen encoder.
pub type ClassifierHead = Head;

impl Head {
    /// `dim → hidden (act) → K sigmoid`.
    pub fn new(dim: usize, hidden: usize, act: Activation, rng: &mut SeededRng) -> Result<Head> {
        Ok(Head {
            mlp: Mlp::new(
                &[dim, hidden, NUM_CATEGORIES],
                &[act, Activation::Sigmoid],
                rng,
            )?,
        })
    }

    pub fn probabilities(&self, embedding: &[f64]) -> Vec<f64> {
        self.mlp.forward(embedding)
    }

    pub fn predict_labels(&self, embedding: &[f64], threshold: f64) -> LabelSet {
        labels_above(&self.probabilities(embedding), threshold)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(path, &mlp_tensors("head", &self.mlp)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Head> {
        Ok(Head {
            mlp: mlp_from_tensors("head", &read_checkpoint(path)?)?,
        })
    }
}

/// Categories whose probability strictly exceeds `threshold`.
pub fn labels_above(probs: &[f64], threshold: f64) -> LabelSet {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > threshold)
        .filter_map(|(i, _)| Category::from_index(i))
        .collect()
}

pub fn predict_labels(classifier: &ClassifierHead, embedding: &[f64], threshold: f64) -> LabelSet {
    classifier.predict_labels(embedding, threshold)
}

/// Fixed-style prompt for an automatically detected label set.
pub fn to_auto_prompt(labels: LabelSet) -> Result<String> {
    if labels.is_empty() {
        return Err(Error::Empty("no distortions detected".into()));
    }
    render_prompt(labels, PromptStyle::Fixed, &mut SeededRng::new(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(seed: u64) -> Image {
        let mut rng = SeededRng::new(seed);
        Image::from_fn(16, 16, 3, |_, _, _| rng.uniform(0.0, 1.0)).unwrap()
    }

    #[test]
    fn encode_is_unit_and_deterministic() {
        let enc = Encoder::new(16, &[32, 32], 8, &mut SeededRng::new(1)).unwrap();
        let img = test_image(3);
        let a = enc.encode(&img).unwrap();
        let b = enc.encode(&img).unwrap();
        assert_eq!(a, b);
        assert!((super::super::loss::norm(&a) - 1.0).abs() < 1e-9);
        let other = Encoder::new(16, &[32, 32], 8, &mut SeededRng::new(2)).unwrap();
        assert_ne!(other.encode(&img).unwrap(), a);
        assert!(enc.encode(&Image::filled(20, 20, 3, 0.5).unwrap()).is_err());
    }

    #[test]
    fn threshold_is_strict() {
        let mut p = vec![0.84; NUM_CATEGORIES];
        assert!(labels_above(&p, DEFAULT_THRESHOLD).is_empty());
        p = vec![0.1; NUM_CATEGORIES];
        p[Category::Haze.index()] = 0.9;
        assert_eq!(labels_above(&p, 0.85), LabelSet::single(Category::Haze));
        p[Category::Haze.index()] = 0.85;
        assert!(labels_above(&p, 0.85).is_empty());
    }

    #[test]
    fn auto_prompt() {
        assert_eq!(
            to_auto_prompt(LabelSet::single(Category::Haze)).unwrap(),
            "remove the effects of haze"
        );
        assert!(to_auto_prompt(LabelSet::empty()).is_err());
    }

    #[test]
    fn normalize_gradient() {
        let z = vec![0.3, -1.2, 2.0];
        let g = vec![1.0, 0.5, -0.25];
        let an = normalize_backward(&z, &g);
        for i in 0..3 {
            let mut zp = z.clone();
            zp[i] += 1e-6;
            let mut zm = z.clone();
            zm[i] -= 1e-6;
            let f = |v: &[f64]| normalize(v).iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
            assert!((an[i] - (f(&zp) - f(&zm)) / 2e-6).abs() < 1e-8);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let enc = Encoder::new(16, &[12, 10], 4, &mut SeededRng::new(5)).unwrap();
        enc.save(dir.path().join("e.bin")).unwrap();
        assert_eq!(Encoder::load(dir.path().join("e.bin")).unwrap(), enc);
        let head = Head::new(4, 9, Activation::Relu, &mut SeededRng::new(6)).unwrap();
        head.save(dir.path().join("h.bin")).unwrap();
        assert_eq!(Head::load(dir.path().join("h.bin")).unwrap(), head);
    }
}
