use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_clean, DatasetConfig};
use crate::distortions::{
    apply, apply_chain, sample_spec, Category, DistortionKind, DistortionSpec,
};
use crate::embedding::{cosine, Encoder};
use crate::imaging::io::quantized;
use crate::imaging::{child_seed, SeededRng};
use crate::{Error, Result};

const PROBE_SALT: u64 = 0x9E0_0000_0000_0007;

/// One compositional-geometry item: a fresh clean image `X` and categories
/// `a ≠ b`; singles `c` range over the rest of the vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryItem {
    pub a: Category,
    pub b: Category,
    /// `(cos(ab, a) + cos(ab, b)) / 2`.
    pub constituent: f64,
    /// Largest `cos(ab, c)` over unrelated singles.
    pub max_unrelated: f64,
    pub mean_unrelated: f64,
}

impl GeometryItem {
    pub fn passes(&self) -> bool {
        self.constituent > self.max_unrelated
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub items: Vec<GeometryItem>,
    /// Fraction of items where the constituent similarity beats every unrelated single.
    pub pass_rate: f64,
    /// Fraction where it beats the mean unrelated similarity.
    pub pass_rate_mean: f64,
    pub mean_margin: f64,
}

fn kind_for(
    category: Category,
    kinds: &[DistortionKind],
    rng: &mut SeededRng,
) -> Result<DistortionKind> {
    let pool: Vec<DistortionKind> = kinds
        .iter()
        .copied()
        .filter(|k| k.category() == category)
        .collect();
    if pool.is_empty() {
        return Err(Error::invalid(format!(
            "no transform for category {}",
            category
        )));
    }
    Ok(*rng.choose(&pool))
}

/// Compositional probe on `n_items` procedurally generated clean images that
/// share no seed with the training set. Every image in an item is made from
/// the same spec instances, so `{a,b}` differs from `{a}` only by `b`.
pub fn composition_probe(
    encoder: &Encoder,
    config: &DatasetConfig,
    n_items: usize,
    seed: u64,
) -> Result<GeometryReport> {
    let vocab = config.vocabulary().to_vec();
    if vocab.len() < 3 {
        return Err(Error::invalid(
            "composition probe needs at least three categories",
        ));
    }
    if n_items == 0 {
        return Err(Error::Empty("composition probe with zero items".into()));
    }
    let kinds = config.kinds();
    let items: Vec<GeometryItem> = (0..n_items)
        .into_par_iter()
        .map(|i| -> Result<GeometryItem> {
            let mut rng = SeededRng::new(child_seed(seed ^ PROBE_SALT, i as u64));
            let scene = *rng.choose(&config.scenes);
            let (clean, depth) = generate_clean(config.image_size, scene, &mut rng)?;
            let clean = quantized(&clean);
            let pick = rng.sample_indices(vocab.len(), 2);
            let (a, b) = (vocab[pick[0]], vocab[pick[1]]);
            let spec_of = |c: Category, rng: &mut SeededRng| -> Result<DistortionSpec> {
                let k = kind_for(c, &kinds, rng)?;
                Ok(sample_spec(k, rng))
            };
            let sa = spec_of(a, &mut rng)?;
            let sb = spec_of(b, &mut rng)?;
            let pair = if rng.coin(0.5) {
                vec![sa.clone(), sb.clone()]
            } else {
                vec![sb.clone(), sa.clone()]
            };
            let embed = |img: crate::imaging::Image| encoder.encode(&quantized(&img));
            let zab = embed(apply_chain(&pair, &clean, Some(&depth))?)?;
            let za = embed(apply(&sa, &clean, Some(&depth))?)?;
            let zb = embed(apply(&sb, &clean, Some(&depth))?)?;
            let constituent = 0.5 * (cosine(&zab, &za) + cosine(&zab, &zb));
            let mut others = Vec::new();
            for &c in vocab.iter().filter(|&&c| c != a && c != b) {
                let sc = spec_of(c, &mut rng)?;
                let zc = embed(apply(&sc, &clean, Some(&depth))?)?;
                others.push(cosine(&zab, &zc));
            }
            Ok(GeometryItem {
                a,
                b,
                constituent,
                max_unrelated: others.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean_unrelated: others.iter().sum::<f64>() / others.len() as f64,
            })
        })
        .collect::<Result<_>>()?;
    let n = items.len() as f64;
    Ok(GeometryReport {
        pass_rate: items.iter().filter(|it| it.passes()).count() as f64 / n,
        pass_rate_mean: items
            .iter()
            .filter(|it| it.constituent > it.mean_unrelated)
            .count() as f64
            / n,
        mean_margin: items
            .iter()
            .map(|it| it.constituent - it.max_unrelated)
            .sum::<f64>()
            / n,
        items,
    })
}
