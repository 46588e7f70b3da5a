//! Content-preserving feature fusion: decoder features are instance
//! normalized, modulated per pixel by affine maps generated from encoder
//! features, refined by a residual conv block and single-head
//! self-attention, and upsampled 2×.

use super::mlp::{Activation, Mlp};
use crate::imaging::SeededRng;
use crate::{Error, Result};

const NORM_EPS: f64 = 1e-5;

/// Channel-major (`C × H × W`) feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<FeatureMap> {
        if data.len() != channels * height * width || data.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "feature map {}x{}x{} with {} values",
                channels,
                height,
                width,
                data.len()
            )));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn random(channels: usize, height: usize, width: usize, rng: &mut SeededRng) -> FeatureMap {
        let data = (0..channels * height * width)
            .map(|_| rng.normal())
            .collect();
        FeatureMap {
            channels,
            height,
            width,
            data,
        }
    }

    fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Feature vector at pixel `p`.
    fn column(&self, p: usize) -> Vec<f64> {
        (0..self.channels)
            .map(|c| self.data[c * self.pixels() + p])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScpmParams {
    pub gamma: Mlp,
    pub beta: Mlp,
    /// 3×3 convolutions of the residual block, `C × C × 3 × 3` + `C` bias.
    pub conv1: Vec<f64>,
    pub conv2: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    /// Apply instance normalization to the decoder features.
    pub normalize: bool,
    channels: usize,
}

/// Intermediate maps of one forward pass.
#[derive(Clone, Debug)]
pub struct ScpmTrace {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub normalized: Vec<f64>,
    inv_std: Vec<f64>,
    /// `γ ⊙ Norm(f_dec) + β`, before the residual block.
    pub modulated: Vec<f64>,
    hidden: Vec<f64>,
    pub residual: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    mixed: Vec<f64>,
    pub attended: Vec<f64>,
    pub output: FeatureMap,
}

/// Gradients of a scalar loss.
#[derive(Clone, Debug)]
pub struct ScpmGrad {
    /// Same layout as [`ScpmParams::flat`].
    pub params: Vec<f64>,
    pub f_dec: Vec<f64>,
    pub f_enc: Vec<f64>,
}

fn conv_len(c: usize) -> usize {
    c * c * 9 + c
}

fn conv3x3(w: &[f64], c: usize, h: usize, wd: usize, input: &[f64]) -> Vec<f64> {
    let hw = h * wd;
    let bias = &w[c * c * 9..];
    let mut out = vec![0.0; c * hw];
    for o in 0..c {
        for y in 0..h {
            for x in 0..wd {
                let mut acc = bias[o];
                for i in 0..c {
                    for dy in 0..3 {
                        let yy = y as isize + dy as isize - 1;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let xx = x as isize + dx as isize - 1;
                            if xx < 0 || xx >= wd as isize {
                                continue;
                            }
                            acc += w[((o * c + i) * 3 + dy) * 3 + dx]
                                * input[i * hw + yy as usize * wd + xx as usize];
                        }
                    }
                }
                out[o * hw + y * wd + x] = acc;
            }
        }
    }
    out
}

/// Accumulates weight gradients into `gw` and returns the input gradient.
fn conv3x3_backward(
    w: &[f64],
    c: usize,
    h: usize,
    wd: usize,
    input: &[f64],
    g: &[f64],
    gw: &mut [f64],
) -> Vec<f64> {
    let hw = h * wd;
    let mut gin = vec![0.0; c * hw];
    for o in 0..c {
        for y in 0..h {
            for x in 0..wd {
                let go = g[o * hw + y * wd + x];
                gw[c * c * 9 + o] += go;
                for i in 0..c {
                    for dy in 0..3 {
                        let yy = y as isize + dy as isize - 1;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let xx = x as isize + dx as isize - 1;
                            if xx < 0 || xx >= wd as isize {
                                continue;
                            }
                            let wi = ((o * c + i) * 3 + dy) * 3 + dx;
                            let ii = i * hw + yy as usize * wd + xx as usize;
                            gw[wi] += go * input[ii];
                            gin[ii] += go * w[wi];
                        }
                    }
                }
            }
        }
    }
    gin
}

/// `y_p = W x_p` for every pixel of a channel-major map.
fn matmul_pixels(w: &[f64], c: usize, hw: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; c * hw];
    for o in 0..c {
        for i in 0..c {
            let wi = w[o * c + i];
            if wi == 0.0 {
                continue;
            }
            for p in 0..hw {
                out[o * hw + p] += wi * x[i * hw + p];
            }
        }
    }
    out
}

/// Backward of [`matmul_pixels`].
fn matmul_pixels_backward(
    w: &[f64],
    c: usize,
    hw: usize,
    x: &[f64],
    g: &[f64],
    gw: &mut [f64],
) -> Vec<f64> {
    let mut gx = vec![0.0; c * hw];
    for o in 0..c {
        for i in 0..c {
            let mut acc = 0.0;
            for p in 0..hw {
                acc += g[o * hw + p] * x[i * hw + p];
                gx[i * hw + p] += w[o * c + i] * g[o * hw + p];
            }
            gw[o * c + i] += acc;
        }
    }
    gx
}

impl ScpmParams {
    /// Random init with the refinement stages at identity: the second
    /// residual conv and the attention output projection start at zero, and
    /// the γ generator's output bias starts at 1.
    pub fn new(
        enc_channels: usize,
        channels: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<ScpmParams> {
        let mut gamma = Mlp::new(
            &[enc_channels, hidden, channels],
            &[Activation::Tanh, Activation::Identity],
            rng,
        )?;
        let beta = Mlp::new(
            &[enc_channels, hidden, channels],
            &[Activation::Tanh, Activation::Identity],
            rng,
        )?;
        gamma.layer_mut(1).1.iter_mut().for_each(|b| *b = 1.0);
        let c = channels;
        let conv_scale = 1.0 / ((9 * c) as f64).sqrt();
        let mut conv1 = vec![0.0; conv_len(c)];
        conv1[..c * c * 9]
            .iter_mut()
            .for_each(|w| *w = conv_scale * rng.normal());
        let att_scale = 1.0 / (c as f64).sqrt();
        let mut mat = || {
            (0..c * c)
                .map(|_| att_scale * rng.normal())
                .collect::<Vec<f64>>()
        };
        let (wq, wk, wv) = (mat(), mat(), mat());
        Ok(ScpmParams {
            gamma,
            beta,
            conv1,
            conv2: vec![0.0; conv_len(c)],
            wq,
            wk,
            wv,
            wo: vec![0.0; c * c],
            normalize: true,
            channels,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Every trainable parameter: γ, β, conv1, conv2, W_q, W_k, W_v, W_o.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.gamma.params.clone();
        for part in [
            &self.beta.params,
            &self.conv1,
            &self.conv2,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
        ] {
            v.extend_from_slice(part);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat().len() {
            return Err(Error::DimensionMismatch("scpm parameter length".into()));
        }
        let mut off = 0;
        let parts: [&mut Vec<f64>; 8] = [
            &mut self.gamma.params,
            &mut self.beta.params,
            &mut self.conv1,
            &mut self.conv2,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
        ];
        for part in parts {
            let n = part.len();
            part.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Number of parameters in the γ generator (they come first in `flat`).
    pub fn gamma_len(&self) -> usize {
        self.gamma.params.len()
    }
}

/// Runs the fusion and keeps every intermediate.
pub fn scpm_forward(
    f_enc: &FeatureMap,
    f_dec: &FeatureMap,
    params: &ScpmParams,
) -> Result<ScpmTrace> {
    let c = params.channels;
    if f_dec.channels != c || f_enc.channels != params.gamma.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "scpm expects {} encoder / {} decoder channels, got {} / {}",
            params.gamma.input_dim(),
            c,
            f_enc.channels,
            f_dec.channels
        )));
    }
    if f_enc.height != f_dec.height || f_enc.width != f_dec.width {
        return Err(Error::DimensionMismatch(
            "encoder and decoder maps differ in size".into(),
        ));
    }
    let (h, w) = (f_dec.height, f_dec.width);
    let hw = h * w;

    let mut gamma = vec![0.0; c * hw];
    let mut beta = vec![0.0; c * hw];
    for p in 0..hw {
        let col = f_enc.column(p);
        let g = params.gamma.forward(&col);
        let b = params.beta.forward(&col);
        for ch in 0..c {
            gamma[ch * hw + p] = g[ch];
            beta[ch * hw + p] = b[ch];
        }
    }

    let mut normalized = f_dec.data.clone();
    let mut inv_std = vec![1.0; c];
    if params.normalize {
        for ch in 0..c {
            let s = &mut normalized[ch * hw..(ch + 1) * hw];
            let mu = s.iter().sum::<f64>() / hw as f64;
            let var = s.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / hw as f64;
            inv_std[ch] = 1.0 / (var + NORM_EPS).sqrt();
            s.iter_mut().for_each(|v| *v = (*v - mu) * inv_std[ch]);
        }
    }
    let modulated: Vec<f64> = (0..c * hw)
        .map(|i| gamma[i] * normalized[i] + beta[i])
        .collect();

    let hidden: Vec<f64> = conv3x3(&params.conv1, c, h, w, &modulated)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let h2 = conv3x3(&params.conv2, c, h, w, &hidden);
    let residual: Vec<f64> = modulated.iter().zip(&h2).map(|(a, b)| a + b).collect();

    let q = matmul_pixels(&params.wq, c, hw, &residual);
    let k = matmul_pixels(&params.wk, c, hw, &residual);
    let v = matmul_pixels(&params.wv, c, hw, &residual);
    let scale = 1.0 / (c as f64).sqrt();
    let mut attn = vec![0.0; hw * hw];
    for p in 0..hw {
        let row = &mut attn[p * hw..(p + 1) * hw];
        for (r, val) in row.iter_mut().enumerate() {
            *val = scale
                * (0..c)
                    .map(|ch| q[ch * hw + p] * k[ch * hw + r])
                    .sum::<f64>();
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for val in row.iter_mut() {
            *val = (*val - m).exp();
            z += *val;
        }
        row.iter_mut().for_each(|val| *val /= z);
    }
    let mut mixed = vec![0.0; c * hw];
    for ch in 0..c {
        for p in 0..hw {
            mixed[ch * hw + p] = (0..hw).map(|r| attn[p * hw + r] * v[ch * hw + r]).sum();
        }
    }
    let proj = matmul_pixels(&params.wo, c, hw, &mixed);
    let attended: Vec<f64> = residual.iter().zip(&proj).map(|(a, b)| a + b).collect();

    let (oh, ow) = (2 * h, 2 * w);
    let mut up = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                up[ch * oh * ow + y * ow + x] = attended[ch * hw + (y / 2) * w + x / 2];
            }
        }
    }
    Ok(ScpmTrace {
        gamma,
        beta,
        normalized,
        inv_std,
        modulated,
        hidden,
        residual,
        q,
        k,
        v,
        attn,
        mixed,
        attended,
        output: FeatureMap::new(c, oh, ow, up)?,
    })
}

/// Output map of the fusion.
pub fn scpm_fuse(
    f_enc: &FeatureMap,
    f_dec: &FeatureMap,
    params: &ScpmParams,
) -> Result<FeatureMap> {
    Ok(scpm_forward(f_enc, f_dec, params)?.output)
}

/// Back-propagates `grad_out` (shaped like the output map).
pub fn scpm_backward(
    f_enc: &FeatureMap,
    params: &ScpmParams,
    trace: &ScpmTrace,
    grad_out: &[f64],
) -> Result<ScpmGrad> {
    let c = params.channels;
    let (h, w) = (trace.output.height / 2, trace.output.width / 2);
    let hw = h * w;
    if grad_out.len() != trace.output.data.len() {
        return Err(Error::DimensionMismatch("scpm output gradient".into()));
    }
    let ow = 2 * w;
    let mut g_att = vec![0.0; c * hw];
    for ch in 0..c {
        for y in 0..2 * h {
            for x in 0..ow {
                g_att[ch * hw + (y / 2) * w + x / 2] += grad_out[ch * 4 * hw + y * ow + x];
            }
        }
    }

    let mut g_wq = vec![0.0; c * c];
    let mut g_wk = vec![0.0; c * c];
    let mut g_wv = vec![0.0; c * c];
    let mut g_wo = vec![0.0; c * c];
    let g_mixed = matmul_pixels_backward(&params.wo, c, hw, &trace.mixed, &g_att, &mut g_wo);
    let mut g_res = g_att.clone();

    // mixed[ch,p] = Σ_r A[p,r] v[ch,r]
    let mut g_v = vec![0.0; c * hw];
    let mut g_a = vec![0.0; hw * hw];
    for p in 0..hw {
        for r in 0..hw {
            let a = trace.attn[p * hw + r];
            let mut acc = 0.0;
            for ch in 0..c {
                acc += g_mixed[ch * hw + p] * trace.v[ch * hw + r];
                g_v[ch * hw + r] += a * g_mixed[ch * hw + p];
            }
            g_a[p * hw + r] = acc;
        }
    }
    let scale = 1.0 / (c as f64).sqrt();
    let mut g_q = vec![0.0; c * hw];
    let mut g_k = vec![0.0; c * hw];
    for p in 0..hw {
        let row = &trace.attn[p * hw..(p + 1) * hw];
        let dot: f64 = row
            .iter()
            .zip(&g_a[p * hw..(p + 1) * hw])
            .map(|(a, g)| a * g)
            .sum();
        for r in 0..hw {
            let gs = row[r] * (g_a[p * hw + r] - dot) * scale;
            if gs == 0.0 {
                continue;
            }
            for ch in 0..c {
                g_q[ch * hw + p] += gs * trace.k[ch * hw + r];
                g_k[ch * hw + r] += gs * trace.q[ch * hw + p];
            }
        }
    }
    for (wm, gm, gp) in [
        (&params.wq, &g_q, &mut g_wq),
        (&params.wk, &g_k, &mut g_wk),
        (&params.wv, &g_v, &mut g_wv),
    ] {
        let gx = matmul_pixels_backward(wm, c, hw, &trace.residual, gm, gp);
        for (a, b) in g_res.iter_mut().zip(gx) {
            *a += b;
        }
    }

    // residual block
    let mut g_c1 = vec![0.0; conv_len(c)];
    let mut g_c2 = vec![0.0; conv_len(c)];
    let g_hidden = conv3x3_backward(&params.conv2, c, h, w, &trace.hidden, &g_res, &mut g_c2);
    let g_pre: Vec<f64> = g_hidden
        .iter()
        .zip(&trace.hidden)
        .map(|(g, a)| g * (1.0 - a * a))
        .collect();
    let g_mod_conv = conv3x3_backward(&params.conv1, c, h, w, &trace.modulated, &g_pre, &mut g_c1);
    let g_mod: Vec<f64> = g_res.iter().zip(&g_mod_conv).map(|(a, b)| a + b).collect();

    // modulation and normalization
    let g_gamma: Vec<f64> = g_mod
        .iter()
        .zip(&trace.normalized)
        .map(|(g, n)| g * n)
        .collect();
    let g_norm: Vec<f64> = g_mod.iter().zip(&trace.gamma).map(|(g, y)| g * y).collect();
    let mut g_dec = g_norm.clone();
    if params.normalize {
        for ch in 0..c {
            let gn = &g_norm[ch * hw..(ch + 1) * hw];
            let nn = &trace.normalized[ch * hw..(ch + 1) * hw];
            let mg = gn.iter().sum::<f64>() / hw as f64;
            let mgn = gn.iter().zip(nn).map(|(a, b)| a * b).sum::<f64>() / hw as f64;
            for p in 0..hw {
                g_dec[ch * hw + p] = trace.inv_std[ch] * (gn[p] - mg - nn[p] * mgn);
            }
        }
    }

    let mut g_gmlp = vec![0.0; params.gamma.params.len()];
    let mut g_bmlp = vec![0.0; params.beta.params.len()];
    let ce = f_enc.channels;
    let mut g_enc = vec![0.0; ce * hw];
    for p in 0..hw {
        let col = f_enc.column(p);
        let gg: Vec<f64> = (0..c).map(|ch| g_gamma[ch * hw + p]).collect();
        let gb: Vec<f64> = (0..c).map(|ch| g_mod[ch * hw + p]).collect();
        let x1 = params
            .gamma
            .backward(&params.gamma.trace(&col), &gg, &mut g_gmlp);
        let x2 = params
            .beta
            .backward(&params.beta.trace(&col), &gb, &mut g_bmlp);
        for i in 0..ce {
            g_enc[i * hw + p] = x1[i] + x2[i];
        }
    }

    let mut flat = g_gmlp;
    for part in [g_bmlp, g_c1, g_c2, g_wq, g_wk, g_wv, g_wo] {
        flat.extend(part);
    }
    Ok(ScpmGrad {
        params: flat,
        f_dec: g_dec,
        f_enc: g_enc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::gradcheck::{finite_diff_check, sample_params};

    fn setup(seed: u64) -> (FeatureMap, FeatureMap, ScpmParams) {
        let mut rng = SeededRng::new(seed);
        let enc = FeatureMap::random(3, 4, 5, &mut rng);
        let dec = FeatureMap::random(4, 4, 5, &mut rng);
        let p = ScpmParams::new(3, 4, 6, &mut rng).unwrap();
        (enc, dec, p)
    }

    #[test]
    fn identity_modulation_upsamples() {
        let (enc, dec, mut p) = setup(1);
        let (w, b) = p.gamma.layer_mut(1);
        w.iter_mut().for_each(|v| *v = 0.0);
        b.iter_mut().for_each(|v| *v = 1.0);
        let (w, b) = p.beta.layer_mut(1);
        w.iter_mut().for_each(|v| *v = 0.0);
        b.iter_mut().for_each(|v| *v = 0.0);
        p.normalize = false;
        let out = scpm_fuse(&enc, &dec, &p).unwrap();
        assert_eq!((out.channels, out.height, out.width), (4, 8, 10));
        for ch in 0..4 {
            for y in 0..8 {
                for x in 0..10 {
                    assert_eq!(
                        out.data[ch * 80 + y * 10 + x],
                        dec.data[ch * 20 + (y / 2) * 5 + x / 2]
                    );
                }
            }
        }
    }

    #[test]
    fn zero_gamma_collapses_to_beta() {
        let (enc, dec, mut p) = setup(2);
        let (w, b) = p.gamma.layer_mut(1);
        w.iter_mut().for_each(|v| *v = 0.0);
        b.iter_mut().for_each(|v| *v = 0.0);
        let (w, b) = p.beta.layer_mut(1);
        w.iter_mut().for_each(|v| *v = 0.0);
        b.iter_mut().for_each(|v| *v = 0.37);
        let t = scpm_forward(&enc, &dec, &p).unwrap();
        assert!(t.modulated.iter().all(|v| *v == 0.37));
    }

    #[test]
    fn dimension_errors() {
        let (enc, _, p) = setup(3);
        let bad = FeatureMap::random(5, 4, 5, &mut SeededRng::new(0));
        assert!(scpm_fuse(&enc, &bad, &p).is_err());
        let small = FeatureMap::random(4, 3, 5, &mut SeededRng::new(0));
        assert!(scpm_fuse(&enc, &small, &p).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (enc, dec, mut p) = setup(4);
        let mut rng = SeededRng::new(9);
        // move the refinement stages off their identity init
        let mut flat = p.flat();
        let n = flat.len();
        for v in flat.iter_mut() {
            if *v == 0.0 {
                *v = 0.3 * rng.normal();
            }
        }
        p.set_flat(&flat).unwrap();
        let r: Vec<f64> = (0..4 * 8 * 10).map(|_| rng.normal()).collect();
        let loss = |fl: &[f64]| -> Result<f64> {
            let mut q = p.clone();
            q.set_flat(fl)?;
            let out = scpm_fuse(&enc, &dec, &q)?;
            Ok(out.data.iter().zip(&r).map(|(a, b)| a * b).sum())
        };
        let t = scpm_forward(&enc, &dec, &p).unwrap();
        let g = scpm_backward(&enc, &p, &t, &r).unwrap();
        let idx = sample_params(n, n, &mut rng);
        let res = finite_diff_check(loss, &flat, &g.params, &idx, 1e-5).unwrap();
        assert!(res.max_relative_error < 1e-4, "{:?}", res);

        // decoder-feature gradient
        let loss_dec = |d: &[f64]| -> Result<f64> {
            let m = FeatureMap::new(4, 4, 5, d.to_vec())?;
            let out = scpm_fuse(&enc, &m, &p)?;
            Ok(out.data.iter().zip(&r).map(|(a, b)| a * b).sum())
        };
        let idx: Vec<usize> = (0..dec.data.len()).collect();
        let res = finite_diff_check(loss_dec, &dec.data, &g.f_dec, &idx, 1e-5).unwrap();
        assert!(res.max_relative_error < 1e-4, "{:?}", res);
    }
}
