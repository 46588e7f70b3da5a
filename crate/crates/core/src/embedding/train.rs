use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::Standardizer;
use super::loss::{bce_backward, contrastive_loss, cosine, quality_loss, WeightingScheme};
use super::mlp::{Activation, Mlp, Optimizer, OptimizerKind, Trace};
use super::model::{
    normalize, normalize_backward, ClassifierHead, Embedding, Encoder, Head, ProbeHead,
};
use crate::dataset::{Sample, Split};
use crate::distortions::LabelSet;
use crate::imaging::SeededRng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub tau: f64,
    /// Clean images per batch.
    pub batch_clean: usize,
    /// Maximum degraded variants per clean image.
    pub variants: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub weighting_scheme: WeightingScheme,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub probe_hidden: usize,
    pub probe_learning_rate: f64,
    /// Multiplier on the quality term (1 gives the plain sum).
    pub quality_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.10,
            batch_clean: 32,
            variants: 4,
            learning_rate: 0.05,
            epochs: 30,
            optimizer: OptimizerKind::Sgd,
            weighting_scheme: WeightingScheme::Jaccard,
            seed: crate::DEFAULT_SEED,
            hidden: vec![128, 128],
            embedding_dim: 64,
            probe_hidden: 64,
            probe_learning_rate: 0.5,
            quality_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::invalid("tau must be > 0"));
        }
        if self.batch_clean < 2 {
            return Err(Error::invalid("batch_clean must be >= 2"));
        }
        if self.variants == 0 {
            return Err(Error::invalid("variants must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.probe_learning_rate >= 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Also train on the clean images, labelled with the empty set.
    pub include_clean: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 512,
            epochs: 60,
            batch: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: crate::DEFAULT_SEED,
            include_clean: true,
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_ctr: f64,
    pub l_qual: f64,
    pub l_probe: f64,
    pub mean_positive_cosine: f64,
    pub mean_gap: f64,
    /// Contrastive plus quality loss on the validation groups, when given.
    #[serde(default)]
    pub val_loss: Option<f64>,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,l_ctr,l_qual,l_probe,mean_positive_cosine,mean_gap,val_loss\n");
    for r in log {
        let val = r.val_loss.map(|v| format!("{:.9}", v)).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{:.9},{:.9},{:.9},{:.9},{:.9},{}",
            r.epoch, r.l_ctr, r.l_qual, r.l_probe, r.mean_positive_cosine, r.mean_gap, val
        );
    }
    s
}

pub fn write_log_csv(log: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, log_csv(log)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainedEncoder {
    pub encoder: Encoder,
    pub probe: ProbeHead,
    pub log: Vec<EpochLog>,
}

/// A clean image and its degraded variants, as feature-row indices.
#[derive(Clone, Debug)]
pub struct Group {
    pub clean: usize,
    pub variants: Vec<(usize, LabelSet)>,
}

/// Raw features of every image the groups refer to.
#[derive(Clone, Debug)]
pub struct FeatureTable {
    pub rows: Vec<Vec<f64>>,
    pub groups: Vec<Group>,
}

impl FeatureTable {
    /// Groups the samples of `split` by clean image, keeping at most
    /// `max_variants` each, and extracts features in parallel.
    pub fn build(
        encoder_size: usize,
        samples: &[Sample],
        split: Option<Split>,
        max_variants: usize,
    ) -> Result<FeatureTable> {
        let mut by_clean: BTreeMap<usize, Vec<&Sample>> = BTreeMap::new();
        for s in samples {
            if split.is_none_or(|sp| s.triplet.split == sp) {
                let v = by_clean.entry(s.triplet.clean_index).or_default();
                if v.len() < max_variants {
                    v.push(s);
                }
            }
        }
        let probe = Encoder {
            image_size: encoder_size,
            standardizer: Standardizer::identity(super::features::FEATURE_DIM),
            mlp: Mlp::zeros(&[1, 1], &[Activation::Identity])?,
        };
        let mut images = Vec::new();
        let mut groups = Vec::new();
        for (_, items) in by_clean {
            let clean = images.len();
            images.push(&items[0].clean);
            let mut variants = Vec::new();
            for s in items {
                variants.push((images.len(), s.triplet.applied_labels));
                images.push(&s.distorted);
            }
            groups.push(Group { clean, variants });
        }
        let rows = images
            .par_iter()
            .map(|img| probe.features(img))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureTable { rows, groups })
    }
}

/// Loss of one batch and its gradients.
pub struct BatchOutcome {
    pub l_ctr: f64,
    pub l_qual: f64,
    pub l_probe: f64,
    pub pos_cos: f64,
    pub gap: f64,
    pub grad_encoder: Vec<f64>,
    pub grad_probe: Vec<f64>,
}

/// Embedding-level loss of a batch of groups: the contrastive and quality
/// terms averaged over variants, then over groups. Returns the loss parts
/// and the gradient w.r.t. every embedding (clean first, then variants, per
/// group), accumulating the probe gradient into `grad_probe`.
pub fn total_loss(
    batch: &[(Embedding, Vec<(Embedding, LabelSet)>)],
    probe: &ProbeHead,
    tau: f64,
    scheme: WeightingScheme,
    quality_weight: f64,
    grad_probe: &mut [f64],
) -> Result<(f64, f64, Vec<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    let b = batch.len() as f64;
    let mut offsets = Vec::with_capacity(batch.len());
    let mut n = 0;
    for (_, vs) in batch {
        offsets.push(n);
        n += 1 + vs.len();
    }
    let mut grads = vec![vec![0.0; batch[0].0.len()]; n];
    let (mut l_ctr, mut l_qual) = (0.0, 0.0);
    for (g, (clean, variants)) in batch.iter().enumerate() {
        let mut others = Vec::new();
        let mut other_slots = Vec::new();
        for (h, (_, vs)) in batch.iter().enumerate() {
            if h != g {
                for (k, (e, _)) in vs.iter().enumerate() {
                    others.push(e.clone());
                    other_slots.push(offsets[h] + 1 + k);
                }
            }
        }
        let out = contrastive_loss(clean, variants, &others, tau, scheme)?;
        l_ctr += out.loss / b;
        let add = |dst: &mut Vec<f64>, src: &[f64]| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s / b;
            }
        };
        add(&mut grads[offsets[g]], &out.d_clean);
        for (k, d) in out.d_variants.iter().enumerate() {
            add(&mut grads[offsets[g] + 1 + k], d);
        }
        for (slot, d) in other_slots.iter().zip(&out.d_others) {
            add(&mut grads[*slot], d);
        }
        if quality_weight != 0.0 {
            let m = variants.len() as f64;
            let w = quality_weight / (m * b);
            for (_, labels) in variants {
                let (q, ge) = quality_loss(clean, &probe.mlp, *labels, w, grad_probe);
                l_qual += q / (m * b);
                for (d, s) in grads[offsets[g]].iter_mut().zip(&ge) {
                    *d += s;
                }
            }
        }
    }
    Ok((l_ctr, l_qual, grads))
}

fn batch_step(
    enc: &Encoder,
    probe: &ProbeHead,
    standardized: &[Vec<f64>],
    groups: &[&Group],
    cfg: &TrainConfig,
) -> Result<BatchOutcome> {
    let ids: Vec<usize> = groups
        .iter()
        .flat_map(|g| std::iter::once(g.clean).chain(g.variants.iter().map(|v| v.0)))
        .collect();
    let traces: Vec<Trace> = ids
        .par_iter()
        .map(|&i| enc.mlp.trace(&standardized[i]))
        .collect();
    let emb: Vec<Embedding> = traces.iter().map(|t| normalize(t.output())).collect();

    let mut batch = Vec::with_capacity(groups.len());
    let mut k = 0;
    for g in groups {
        let clean = emb[k].clone();
        k += 1;
        let vs: Vec<(Embedding, LabelSet)> = g
            .variants
            .iter()
            .map(|(_, l)| {
                k += 1;
                (emb[k - 1].clone(), *l)
            })
            .collect();
        batch.push((clean, vs));
    }

    let mut grad_probe = vec![0.0; probe.mlp.params.len()];
    let (l_ctr, l_qual, g_emb) = total_loss(
        &batch,
        probe,
        cfg.tau,
        cfg.weighting_scheme,
        cfg.quality_weight,
        &mut grad_probe,
    )?;

    // probe: BCE on detached embeddings, degraded with labels, clean empty
    let n_probe = emb.len() as f64;
    let mut l_probe = 0.0;
    for (clean, vs) in &batch {
        l_probe += bce_backward(
            &probe.mlp,
            clean,
            LabelSet::empty(),
            1.0 / n_probe,
            &mut grad_probe,
        )
        .0 / n_probe;
        for (e, l) in vs {
            l_probe += bce_backward(&probe.mlp, e, *l, 1.0 / n_probe, &mut grad_probe).0 / n_probe;
        }
    }

    // diagnostics
    let (mut pos, mut gap, mut nv) = (0.0, 0.0, 0usize);
    for (g, (clean, vs)) in batch.iter().enumerate() {
        for (j, (e, _)) in vs.iter().enumerate() {
            let p = cosine(e, clean);
            let mut hardest = f64::NEG_INFINITY;
            for (h, (_, ws)) in batch.iter().enumerate() {
                for (k, (o, _)) in ws.iter().enumerate() {
                    if (h, k) != (g, j) {
                        hardest = hardest.max(cosine(e, o));
                    }
                }
            }
            pos += p;
            if hardest.is_finite() {
                gap += p - hardest;
            }
            nv += 1;
        }
    }

    // encoder backward in fixed chunks, reduced in order
    let n_params = enc.mlp.params.len();
    let chunk = 16;
    let partial: Vec<Vec<f64>> = (0..ids.len())
        .collect::<Vec<_>>()
        .par_chunks(chunk)
        .map(|c| {
            let mut gp = vec![0.0; n_params];
            for &r in c {
                let gz = normalize_backward(traces[r].output(), &g_emb[r]);
                enc.mlp.backward(&traces[r], &gz, &mut gp);
            }
            gp
        })
        .collect();
    let mut grad_encoder = vec![0.0; n_params];
    for p in partial {
        for (a, b) in grad_encoder.iter_mut().zip(p) {
            *a += b;
        }
    }
    Ok(BatchOutcome {
        l_ctr,
        l_qual,
        l_probe,
        pos_cos: pos / nv.max(1) as f64,
        gap: gap / nv.max(1) as f64,
        grad_encoder,
        grad_probe,
    })
}

/// Trains the encoder (and its probe) on the train split.
pub fn train_encoder(samples: &[Sample], config: &TrainConfig) -> Result<TrainedEncoder> {
    config.validate()?;
    let size = samples
        .first()
        .ok_or_else(|| Error::Empty("training samples".into()))?
        .clean
        .height();
    let table = FeatureTable::build(size, samples, Some(Split::Train), config.variants)?;
    train_on_table(&table, size, config)
}

/// As [`train_encoder`], over precomputed features.
pub fn train_on_table(
    table: &FeatureTable,
    image_size: usize,
    config: &TrainConfig,
) -> Result<TrainedEncoder> {
    train_with_validation(table, None, image_size, config)
}

/// Loss of held-out groups under the current parameters, no gradients kept.
fn validation_loss(
    encoder: &Encoder,
    probe: &ProbeHead,
    rows: &[Vec<f64>],
    groups: &[&Group],
    config: &TrainConfig,
) -> Result<f64> {
    let mut scratch = vec![0.0; probe.mlp.params.len()];
    let (mut total, mut nb) = (0.0, 0usize);
    for chunk in groups.chunks(config.batch_clean) {
        if chunk.len() < 2 {
            continue;
        }
        let embed = |i: usize| encoder.embed_features(&rows[i]);
        let batch: Vec<(Embedding, Vec<(Embedding, LabelSet)>)> = chunk
            .par_iter()
            .map(|g| {
                (
                    embed(g.clean),
                    g.variants.iter().map(|(i, l)| (embed(*i), *l)).collect(),
                )
            })
            .collect();
        let (lc, lq, _) = total_loss(
            &batch,
            probe,
            config.tau,
            config.weighting_scheme,
            config.quality_weight,
            &mut scratch,
        )?;
        total += lc + lq;
        nb += 1;
    }
    if nb == 0 {
        return Err(Error::Empty(
            "validation split needs at least two clean images with variants".into(),
        ));
    }
    Ok(total / nb as f64)
}

/// As [`train_on_table`], also logging the loss on `val` after every epoch.
pub fn train_with_validation(
    table: &FeatureTable,
    val: Option<&FeatureTable>,
    image_size: usize,
    config: &TrainConfig,
) -> Result<TrainedEncoder> {
    config.validate()?;
    let groups: Vec<&Group> = table
        .groups
        .iter()
        .filter(|g| !g.variants.is_empty())
        .collect();
    if groups.len() < 2 {
        return Err(Error::Empty(
            "train split needs at least two clean images with variants".into(),
        ));
    }
    let mut rng = SeededRng::new(config.seed);
    let mut encoder = Encoder::new(image_size, &config.hidden, config.embedding_dim, &mut rng)?;
    encoder.standardizer = Standardizer::fit(&table.rows)?;
    let standardized: Vec<Vec<f64>> = table
        .rows
        .iter()
        .map(|r| encoder.standardizer.apply(r))
        .collect();
    let val_groups: Vec<&Group> = val
        .map(|t| t.groups.iter().filter(|g| !g.variants.is_empty()).collect())
        .unwrap_or_default();
    let mut probe = Head::new(
        config.embedding_dim,
        config.probe_hidden,
        Activation::Tanh,
        &mut rng,
    )?;
    let mut opt = Optimizer::new(
        config.optimizer,
        config.learning_rate,
        encoder.mlp.params.len(),
    );
    let mut popt = Optimizer::new(
        config.optimizer,
        config.probe_learning_rate,
        probe.mlp.params.len(),
    );

    let mut log = Vec::with_capacity(config.epochs + 1);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    for epoch in 0..=config.epochs {
        let train = epoch > 0;
        if train {
            rng.shuffle(&mut order);
        }
        let (mut lc, mut lq, mut lp, mut pc, mut gp, mut nb) = (0.0, 0.0, 0.0, 0.0, 0.0, 0);
        for chunk in order.chunks(config.batch_clean) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&Group> = chunk.iter().map(|&i| groups[i]).collect();
            let out = batch_step(&encoder, &probe, &standardized, &batch, config)?;
            if ![out.l_ctr, out.l_qual, out.l_probe]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(Error::NonFinite(format!("loss at epoch {}", epoch)));
            }
            lc += out.l_ctr;
            lq += out.l_qual;
            lp += out.l_probe;
            pc += out.pos_cos;
            gp += out.gap;
            nb += 1;
            if train {
                opt.step(&mut encoder.mlp.params, &out.grad_encoder);
                popt.step(&mut probe.mlp.params, &out.grad_probe);
            }
        }
        let nb = nb.max(1) as f64;
        let val_loss = match val {
            Some(t) => Some(validation_loss(
                &encoder,
                &probe,
                &t.rows,
                &val_groups,
                config,
            )?),
            None => None,
        };
        log.push(EpochLog {
            epoch,
            l_ctr: lc / nb,
            l_qual: lq / nb,
            l_probe: lp / nb,
            mean_positive_cosine: pc / nb,
            mean_gap: gp / nb,
            val_loss,
        });
    }
    if encoder.mlp.params.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("encoder parameters".into()));
    }
    Ok(TrainedEncoder {
        encoder,
        probe,
        log,
    })
}

/// Embeddings and label sets the classifier is fitted on.
pub fn classifier_examples(
    encoder: &Encoder,
    samples: &[Sample],
    split: Split,
    include_clean: bool,
) -> Result<Vec<(Embedding, LabelSet)>> {
    let selected: Vec<&Sample> = samples
        .iter()
        .filter(|s| s.triplet.split == split)
        .collect();
    let mut out: Vec<(Embedding, LabelSet)> = selected
        .par_iter()
        .map(|s| Ok((encoder.encode(&s.distorted)?, s.triplet.applied_labels)))
        .collect::<Result<_>>()?;
    if include_clean {
        let mut seen = std::collections::BTreeSet::new();
        let cleans: Vec<&Sample> = selected
            .into_iter()
            .filter(|s| seen.insert(s.triplet.clean_index))
            .collect();
        let clean_rows: Vec<(Embedding, LabelSet)> = cleans
            .par_iter()
            .map(|s| Ok((encoder.encode(&s.clean)?, LabelSet::empty())))
            .collect::<Result<_>>()?;
        out.extend(clean_rows);
    }
    Ok(out)
}

/// Fits a classifier head by minibatch BCE; returns the head and the mean
/// loss per epoch.
pub fn train_classifier_on(
    examples: &[(Embedding, LabelSet)],
    config: &ClassifierConfig,
) -> Result<(ClassifierHead, Vec<f64>)> {
    let dim = examples
        .first()
        .ok_or_else(|| Error::Empty("classifier training set".into()))?
        .0
        .len();
    let mut rng = SeededRng::new(config.seed);
    let mut head = Head::new(dim, config.hidden, Activation::Relu, &mut rng)?;
    let mut opt = Optimizer::new(
        config.optimizer,
        config.learning_rate,
        head.mlp.params.len(),
    );
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    let n_params = head.mlp.params.len();
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(config.batch.max(1)) {
            let w = 1.0 / batch.len() as f64;
            let parts: Vec<(f64, Vec<f64>)> = batch
                .par_chunks(16)
                .map(|c| {
                    let mut g = vec![0.0; n_params];
                    let mut l = 0.0;
                    for &i in c {
                        l += bce_backward(&head.mlp, &examples[i].0, examples[i].1, w, &mut g).0;
                    }
                    (l, g)
                })
                .collect();
            let mut grad = vec![0.0; n_params];
            for (l, g) in parts {
                total += l;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            opt.step(&mut head.mlp.params, &grad);
        }
        losses.push(total / examples.len() as f64);
    }
    Ok((head, losses))
}

/// Trains the deployment classifier on the frozen encoder's embeddings of
/// the train split.
pub fn train_classifier(
    encoder: &Encoder,
    samples: &[Sample],
    config: &ClassifierConfig,
) -> Result<(ClassifierHead, Vec<f64>)> {
    let examples = classifier_examples(encoder, samples, Split::Train, config.include_clean)?;
    train_classifier_on(&examples, config)
}
