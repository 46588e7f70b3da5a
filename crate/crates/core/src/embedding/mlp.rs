use serde::{Deserialize, Serialize};

use crate::imaging::SeededRng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully connected network over a flat parameter vector. Layer `l` stores
/// its weights row-major (`out × in`) followed by its biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    acts: Vec<Activation>,
    pub params: Vec<f64>,
}

/// Per-layer outputs of one forward pass; `outputs[0]` is the input.
#[derive(Clone, Debug)]
pub struct Trace {
    pub outputs: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("non-empty trace")
    }
}

impl Mlp {
    /// Gaussian init scaled by `1/sqrt(fan_in)` (×√2 before ReLU); zero
    /// biases.
    pub fn new(sizes: &[usize], acts: &[Activation], rng: &mut SeededRng) -> Result<Mlp> {
        let mut mlp = Mlp::zeros(sizes, acts)?;
        let mut off = 0;
        for l in 0..acts.len() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let gain = if acts[l] == Activation::Relu {
                2f64.sqrt()
            } else {
                1.0
            };
            let scale = gain / (n_in as f64).sqrt();
            for p in &mut mlp.params[off..off + n_in * n_out] {
                *p = scale * rng.normal();
            }
            off += n_in * n_out + n_out;
        }
        Ok(mlp)
    }

    pub fn zeros(sizes: &[usize], acts: &[Activation]) -> Result<Mlp> {
        if sizes.len() < 2 || acts.len() != sizes.len() - 1 || sizes.contains(&0) {
            return Err(Error::invalid(format!(
                "bad layer spec: sizes {:?}, {} activations",
                sizes,
                acts.len()
            )));
        }
        let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            acts: acts.to_vec(),
            params: vec![0.0; n],
        })
    }

    pub fn from_params(sizes: &[usize], acts: &[Activation], params: Vec<f64>) -> Result<Mlp> {
        let mut m = Mlp::zeros(sizes, acts)?;
        if params.len() != m.params.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                m.params.len(),
                params.len()
            )));
        }
        m.params = params;
        Ok(m)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.acts
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.acts.len()
    }

    /// Offset of layer `l`'s weights in `params`.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.sizes
            .windows(2)
            .take(l)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Mutable view of layer `l`'s weights and biases.
    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let off = self.layer_offset(l);
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let (w, rest) = self.params[off..].split_at_mut(n_in * n_out);
        (w, &mut rest[..n_out])
    }

    pub fn trace(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.sizes[0]);
        let mut outputs = Vec::with_capacity(self.acts.len() + 1);
        outputs.push(x.to_vec());
        let mut off = 0;
        for l in 0..self.acts.len() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let a = outputs.last().unwrap();
            let y: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let z = b[o] + row.iter().zip(a).map(|(p, q)| p * q).sum::<f64>();
                    self.acts[l].apply(z)
                })
                .collect();
            outputs.push(y);
            off += n_in * n_out + n_out;
        }
        Trace { outputs }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).outputs.pop().unwrap()
    }

    /// Back-propagates `grad_out` (w.r.t. the network output), accumulating
    /// parameter gradients into `grad_params`; returns the input gradient.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        self.backward_pre(trace, grad_out, grad_params, false)
    }

    /// As [`Mlp::backward`], but `grad` is taken w.r.t. the last layer's
    /// pre-activation (for fused sigmoid + cross-entropy).
    pub fn backward_from_logits(
        &self,
        trace: &Trace,
        grad_logits: &[f64],
        grad_params: &mut [f64],
    ) -> Vec<f64> {
        self.backward_pre(trace, grad_logits, grad_params, true)
    }

    fn backward_pre(
        &self,
        trace: &Trace,
        grad: &[f64],
        grad_params: &mut [f64],
        logits: bool,
    ) -> Vec<f64> {
        let mut g = grad.to_vec();
        for l in (0..self.acts.len()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.layer_offset(l);
            let y = &trace.outputs[l + 1];
            let a = &trace.outputs[l];
            if !(logits && l == self.acts.len() - 1) {
                for o in 0..n_out {
                    g[o] *= self.acts[l].derivative(y[o]);
                }
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut g_in = vec![0.0; n_in];
            for o in 0..n_out {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                let gw = &mut grad_params[off + o * n_in..off + (o + 1) * n_in];
                for i in 0..n_in {
                    gw[i] += go * a[i];
                    g_in[i] += go * w[o * n_in + i];
                }
                grad_params[off + n_in * n_out + o] += go;
            }
            g = g_in;
        }
        g
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Sgd,
    Adam,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Optimizer {
        let state = if kind == OptimizerKind::Adam { n } else { 0 };
        Optimizer {
            kind,
            lr,
            m: vec![0.0; state],
            v: vec![0.0; state],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - Self::B1.powi(self.t);
                let c2 = 1.0 - Self::B2.powi(self.t);
                for i in 0..params.len() {
                    self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
                    self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_forward() {
        // 2 -> 1 identity layer: y = 0.5·1 - 2·3 + 0.25 = -5.25
        let m = Mlp::from_params(&[2, 1], &[Activation::Identity], vec![0.5, -2.0, 0.25]).unwrap();
        assert_eq!(m.forward(&[1.0, 3.0]), vec![-5.25]);
        let m = Mlp::from_params(&[1, 1], &[Activation::Sigmoid], vec![0.0, 0.0]).unwrap();
        assert_eq!(m.forward(&[7.0]), vec![0.5]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SeededRng::new(3);
        for acts in [
            [Activation::Tanh, Activation::Identity],
            [Activation::Relu, Activation::Sigmoid],
            [Activation::Sigmoid, Activation::Tanh],
        ] {
            let m = Mlp::new(&[5, 7, 3], &acts, &mut rng).unwrap();
            let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let r: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let f =
                |m: &Mlp, x: &[f64]| m.forward(x).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
            let mut gp = vec![0.0; m.params.len()];
            let gx = m.backward(&m.trace(&x), &r, &mut gp);
            let eps = 1e-6;
            for i in 0..m.params.len() {
                let mut p = m.clone();
                p.params[i] += eps;
                let up = f(&p, &x);
                p.params[i] -= 2.0 * eps;
                let dn = f(&p, &x);
                assert!((gp[i] - (up - dn) / (2.0 * eps)).abs() < 1e-6);
            }
            for i in 0..5 {
                let mut xp = x.clone();
                xp[i] += eps;
                let up = f(&m, &xp);
                xp[i] -= 2.0 * eps;
                let dn = f(&m, &xp);
                assert!((gx[i] - (up - dn) / (2.0 * eps)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.3) - 1.0 / (1.0 + (-0.3f64).exp())).abs() < 1e-16);
    }

    #[test]
    fn optimizers_descend_a_quadratic() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = vec![3.0, -2.0];
            let mut opt = Optimizer::new(kind, 0.1, 2);
            for _ in 0..500 {
                let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
                opt.step(&mut p, &g);
            }
            assert!(p.iter().all(|v| v.abs() < 1e-3), "{:?} {:?}", kind, p);
        }
    }
}
