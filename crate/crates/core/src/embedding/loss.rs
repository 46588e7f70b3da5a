use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::distortions::{LabelSet, NUM_CATEGORIES};
use crate::{Error, Result};

/// How sibling variants are weighted in the contrastive denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingScheme {
    Jaccard,
    CosineLabels,
    Overlap,
    Unweighted,
    /// Plain InfoNCE: unit weights, positive included in the denominator.
    None,
}

impl WeightingScheme {
    pub const ALL: [WeightingScheme; 5] = [
        WeightingScheme::None,
        WeightingScheme::Unweighted,
        WeightingScheme::CosineLabels,
        WeightingScheme::Overlap,
        WeightingScheme::Jaccard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightingScheme::Jaccard => "jaccard",
            WeightingScheme::CosineLabels => "cosine_labels",
            WeightingScheme::Overlap => "overlap",
            WeightingScheme::Unweighted => "unweighted",
            WeightingScheme::None => "none",
        }
    }
}

impl fmt::Display for WeightingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightingScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        WeightingScheme::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown weighting scheme '{}'", s)))
    }
}

/// `exp(1 - |a ∩ b| / |a ∪ b|)`.
pub fn jaccard_weight(a: LabelSet, b: LabelSet) -> Result<f64> {
    Ok((1.0 - label_similarity(WeightingScheme::Jaccard, a, b)?).exp())
}

/// Similarity of two label sets under `scheme`. `None` has no similarity
/// and reports 1 (every pair weighted equally).
pub fn label_similarity(scheme: WeightingScheme, a: LabelSet, b: LabelSet) -> Result<f64> {
    let inter = a.intersection(b).len() as f64;
    match scheme {
        WeightingScheme::Jaccard => {
            let union = a.union(b).len();
            if union == 0 {
                return Err(Error::Empty("jaccard of two empty label sets".into()));
            }
            Ok(inter / union as f64)
        }
        WeightingScheme::CosineLabels => {
            if a.is_empty() || b.is_empty() {
                return Err(Error::Empty("cosine of an empty label set".into()));
            }
            Ok(inter / ((a.len() * b.len()) as f64).sqrt())
        }
        WeightingScheme::Overlap => {
            let m = a.len().min(b.len());
            if m == 0 {
                return Err(Error::Empty(
                    "overlap coefficient with an empty label set".into(),
                ));
            }
            Ok(inter / m as f64)
        }
        WeightingScheme::Unweighted => Ok((a == b) as u8 as f64),
        WeightingScheme::None => Ok(1.0),
    }
}

/// Denominator weight of a sibling pair: `exp(1 - similarity)`.
pub fn pair_weight(scheme: WeightingScheme, a: LabelSet, b: LabelSet) -> Result<f64> {
    Ok((1.0 - label_similarity(scheme, a, b)?).exp())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// Accumulates `g · ∂cos(a,b)/∂a` into `da` and `g · ∂cos(a,b)/∂b` into `db`.
fn cosine_backward(a: &[f64], b: &[f64], g: f64, da: &mut [f64], db: &mut [f64]) {
    let (na, nb) = (norm(a), norm(b));
    let c = dot(a, b) / (na * nb);
    for i in 0..a.len() {
        da[i] += g * (b[i] / (na * nb) - c * a[i] / (na * na));
        db[i] += g * (a[i] / (na * nb) - c * b[i] / (nb * nb));
    }
}

/// Loss value and gradients w.r.t. every input vector.
#[derive(Clone, Debug)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub d_clean: Vec<f64>,
    pub d_variants: Vec<Vec<f64>>,
    pub d_others: Vec<Vec<f64>>,
}

enum Slot {
    Clean,
    Variant(usize),
    Other(usize),
}

fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean over variants `j` of
/// `-log( exp(s_jc/τ) / (Σ_{k≠j} w_jk exp(s_jk/τ) + Σ_l exp(s_jl/τ)) )`
/// with `s` the cosine similarity, `w` the scheme's pair weight, siblings
/// `k` and others `l`. Under `None` the positive term joins the denominator
/// and all weights are 1.
pub fn contrastive_loss(
    e_clean: &[f64],
    variants: &[(Vec<f64>, LabelSet)],
    others: &[Vec<f64>],
    tau: f64,
    scheme: WeightingScheme,
) -> Result<ContrastiveOutput> {
    if variants.is_empty() {
        return Err(Error::Empty("contrastive loss without variants".into()));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {}",
            tau
        )));
    }
    let d = e_clean.len();
    let m = variants.len();
    let mut out = ContrastiveOutput {
        loss: 0.0,
        d_clean: vec![0.0; d],
        d_variants: vec![vec![0.0; d]; m],
        d_others: vec![vec![0.0; d]; others.len()],
    };
    for (j, (ej, dj)) in variants.iter().enumerate() {
        let s_pos = cosine(ej, e_clean);
        let mut slots = Vec::with_capacity(m + others.len());
        let mut logits = Vec::with_capacity(m + others.len());
        if scheme == WeightingScheme::None {
            slots.push(Slot::Clean);
            logits.push(s_pos / tau);
        }
        for (k, (ek, dk)) in variants.iter().enumerate() {
            if k != j {
                slots.push(Slot::Variant(k));
                logits.push(pair_weight(scheme, *dj, *dk)?.ln() + cosine(ej, ek) / tau);
            }
        }
        for (l, el) in others.iter().enumerate() {
            slots.push(Slot::Other(l));
            logits.push(cosine(ej, el) / tau);
        }
        if logits.is_empty() {
            return Err(Error::Degenerate(
                "contrastive denominator has no terms".into(),
            ));
        }
        let lse = logsumexp(&logits);
        out.loss += (-s_pos / tau + lse) / m as f64;

        // ∂/∂s_pos = -1/τ, ∂/∂s_t = softmax_t / τ, all scaled by 1/m
        let scale = 1.0 / (m as f64 * tau);
        let mut dj_acc = vec![0.0; d];
        let mut tmp_clean = std::mem::take(&mut out.d_clean);
        cosine_backward(ej, e_clean, -scale, &mut dj_acc, &mut tmp_clean);
        for (slot, z) in slots.iter().zip(&logits) {
            let g = (z - lse).exp() * scale;
            match *slot {
                Slot::Clean => cosine_backward(ej, e_clean, g, &mut dj_acc, &mut tmp_clean),
                Slot::Variant(k) => {
                    let mut dk = std::mem::take(&mut out.d_variants[k]);
                    cosine_backward(ej, &variants[k].0, g, &mut dj_acc, &mut dk);
                    out.d_variants[k] = dk;
                }
                Slot::Other(l) => {
                    cosine_backward(ej, &others[l], g, &mut dj_acc, &mut out.d_others[l])
                }
            }
        }
        out.d_clean = tmp_clean;
        for (a, b) in out.d_variants[j].iter_mut().zip(dj_acc) {
            *a += b;
        }
    }
    Ok(out)
}

/// `Σ_{c ∈ labels} p̂(c | e_clean)` from a probe with sigmoid outputs.
/// Returns the loss, its gradient w.r.t. `e_clean`, and accumulates the
/// probe parameter gradient (scaled by `weight`) into `grad_probe`.
pub fn quality_loss(
    e_clean: &[f64],
    probe: &Mlp,
    labels: LabelSet,
    weight: f64,
    grad_probe: &mut [f64],
) -> (f64, Vec<f64>) {
    let trace = probe.trace(e_clean);
    let p = trace.output();
    let mut g = vec![0.0; p.len()];
    let mut loss = 0.0;
    for c in labels.iter() {
        loss += p[c.index()];
        g[c.index()] = weight;
    }
    let ge = probe.backward(&trace, &g, grad_probe);
    (loss, ge)
}

/// Binary cross-entropy summed over the `K` outputs.
pub fn bce(probs: &[f64], targets: &[f64]) -> f64 {
    probs
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let p = p.clamp(1e-300, 1.0);
            let q = (1.0 - p).max(1e-300);
            -(y * p.ln() + (1.0 - y) * q.ln())
        })
        .sum()
}

/// BCE of a sigmoid-output head on one example, accumulating `weight ·
/// ∂BCE/∂θ` into `grad`; returns (loss, input gradient).
pub fn bce_backward(
    head: &Mlp,
    x: &[f64],
    labels: LabelSet,
    weight: f64,
    grad: &mut [f64],
) -> (f64, Vec<f64>) {
    let trace = head.trace(x);
    let p = trace.output();
    let y = labels.multi_hot();
    let loss = bce(p, &y[..p.len().min(NUM_CATEGORIES)]);
    let g: Vec<f64> = p
        .iter()
        .zip(y.iter())
        .map(|(p, y)| weight * (p - y))
        .collect();
    let gx = head.backward_from_logits(&trace, &g, grad);
    (loss, gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distortions::Category as C;

    fn set(cs: &[C]) -> LabelSet {
        cs.iter().copied().collect()
    }

    #[test]
    fn jaccard_hand_values() {
        let h = set(&[C::Haze]);
        let hr = set(&[C::Haze, C::Rain]);
        assert_eq!(jaccard_weight(hr, hr).unwrap(), 1.0);
        assert!((jaccard_weight(h, set(&[C::Snow])).unwrap() - 2.718281828459045).abs() < 1e-15);
        assert!((jaccard_weight(hr, h).unwrap() - 0.5f64.exp()).abs() < 1e-15);
        assert!(jaccard_weight(LabelSet::empty(), LabelSet::empty()).is_err());
    }

    #[test]
    fn other_similarities() {
        let (a, b) = (set(&[C::Haze]), set(&[C::Rain]));
        let ab = set(&[C::Haze, C::Rain]);
        assert_eq!(
            label_similarity(WeightingScheme::Overlap, ab, a).unwrap(),
            1.0
        );
        assert_eq!(
            label_similarity(WeightingScheme::CosineLabels, a, b).unwrap(),
            0.0
        );
        assert!(
            (label_similarity(WeightingScheme::CosineLabels, ab, a).unwrap() - 0.5f64.sqrt()).abs()
                < 1e-15
        );
        assert_eq!(
            label_similarity(WeightingScheme::Unweighted, ab, ab).unwrap(),
            1.0
        );
        assert_eq!(
            label_similarity(WeightingScheme::Unweighted, ab, a).unwrap(),
            0.0
        );
        assert!(label_similarity(WeightingScheme::Overlap, ab, LabelSet::empty()).is_err());
    }

    #[test]
    fn one_equal_negative_gives_zero() {
        let c = vec![1.0, 0.0];
        let v = vec![(vec![0.6, 0.8], set(&[C::Haze]))];
        // the other has the same cosine to the variant as the clean does
        let o = vec![vec![2.0, 0.0]];
        let out = contrastive_loss(&c, &v, &o, 0.1, WeightingScheme::Jaccard).unwrap();
        assert!(out.loss.abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_two_variant_case() {
        // clean (1,0); variants v1=(0.8,0.6) {haze,rain}, v2=(0.6,-0.8) {haze};
        // others o=(0,1); τ=0.1; w12 = exp(1 - 1/2).
        // j=1: s_pos=0.8, s_12=0.0, s_1o=0.6
        //   L1 = -8 + ln(e^0.5·e^0 + e^6)
        // j=2: s_pos=0.6, s_21=0.0, s_2o=-0.8
        //   L2 = -6 + ln(e^0.5 + e^-8)
        // L1 = -8 + ln(1.648721 + 403.428793) = -1.995922
        // L2 = -6 + ln(1.648721 + 0.000335) = -5.499797; mean = -3.747859
        let c = vec![1.0, 0.0];
        let v = vec![
            (vec![0.8, 0.6], set(&[C::Haze, C::Rain])),
            (vec![0.6, -0.8], set(&[C::Haze])),
        ];
        let o = vec![vec![0.0, 1.0]];
        let out = contrastive_loss(&c, &v, &o, 0.1, WeightingScheme::Jaccard).unwrap();
        let l1 = -8.0 + (0.5f64.exp() + 6f64.exp()).ln();
        let l2 = -6.0 + (0.5f64.exp() + (-8f64).exp()).ln();
        assert!((out.loss - 0.5 * (l1 + l2)).abs() < 1e-12);
        assert!((out.loss - (-3.747859)).abs() < 1e-6);
    }

    #[test]
    fn high_temperature_limit() {
        let c = vec![1.0, 0.2, 0.0];
        let v = vec![
            (vec![0.3, 1.0, 0.1], set(&[C::Haze])),
            (vec![0.0, 1.0, 1.0], set(&[C::Haze])),
        ];
        let o = vec![vec![1.0, 1.0, 1.0], vec![0.0, 0.0, 1.0]];
        let out = contrastive_loss(&c, &v, &o, 1e9, WeightingScheme::Jaccard).unwrap();
        assert!((out.loss - 3f64.ln()).abs() < 1e-8);
        let out = contrastive_loss(&c, &v, &o, 1e9, WeightingScheme::None).unwrap();
        assert!((out.loss - 4f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn errors() {
        let c = vec![1.0, 0.0];
        assert!(contrastive_loss(&c, &[], &[], 0.1, WeightingScheme::Jaccard).is_err());
        let v = vec![(vec![0.0, 1.0], set(&[C::Haze]))];
        assert!(
            contrastive_loss(&c, &v, &[vec![1.0, 1.0]], 0.0, WeightingScheme::Jaccard).is_err()
        );
        assert!(contrastive_loss(&c, &v, &[], 0.1, WeightingScheme::Jaccard).is_err());
        // InfoNCE always has the positive term
        assert!(contrastive_loss(&c, &v, &[], 0.1, WeightingScheme::None).is_ok());
    }

    #[test]
    fn bce_at_half_is_k_log_two() {
        let p = vec![0.5; NUM_CATEGORIES];
        for bits in [0u16, 1, 0b1010_1010_1010] {
            let y = LabelSet::from_bits(bits).unwrap().multi_hot();
            assert!((bce(&p, &y) - NUM_CATEGORIES as f64 * 2f64.ln()).abs() < 1e-12);
        }
        let y = [1.0, 0.0];
        assert!(bce(&[1.0, 0.0], &y).abs() < 1e-12);
    }
}
