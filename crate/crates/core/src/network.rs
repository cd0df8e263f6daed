//! Fully connected feed-forward network with a scalar linear output.
//!
//! Besides the usual forward pass and input gradient, the network exposes a
//! reverse-over-forward pass: for a seed `c` and input-space tangent `t` it
//! returns the parameter gradient and the input gradient of
//! `c·y(x) + ∇y(x)·t`. Force-matching losses need exactly this quantity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out × n_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn glorot<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let weights = (0..n_in * n_out).map(|_| rng.random_range(-limit..limit)).collect();
        Dense {
            n_in,
            n_out,
            weights,
            bias: vec![0.0; n_out],
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    #[inline]
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }

    #[inline]
    fn apply_linear(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            out.push(row.iter().zip(x).map(|(w, xi)| w * xi).sum());
        }
    }

    /// `Wᵀ v`
    #[inline]
    fn transpose_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_in];
        for (o, &vo) in v.iter().enumerate() {
            if vo == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            for (acc, w) in out.iter_mut().zip(row) {
                *acc += w * vo;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub activation: Activation,
    pub hidden: Vec<Dense>,
    pub output: Dense,
    /// Fixed multiplier on the output unit; not a trainable parameter.
    #[serde(default = "unit_scale")]
    pub output_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `acts[0]` is the input, `acts[l]` the output of hidden layer `l`.
    acts: Vec<Vec<f64>>,
    pub value: f64,
}

impl Mlp {
    /// Glorot-uniform initialised network with zero biases.
    pub fn new<R: Rng>(n_in: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        if n_in == 0 || hidden.contains(&0) {
            return Err(Error::Config("layer widths must be at least 1".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut prev = n_in;
        for &w in hidden {
            layers.push(Dense::glorot(prev, w, rng));
            prev = w;
        }
        Ok(Mlp {
            activation: Activation::Tanh,
            hidden: layers,
            output: Dense::glorot(prev, 1, rng),
            output_scale: 1.0,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.hidden.first().map_or(self.output.n_in, |l| l.n_in)
    }

    pub fn n_params(&self) -> usize {
        self.hidden.iter().map(Dense::n_params).sum::<usize>() + self.output.n_params()
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = self.n_inputs();
        for l in self.hidden.iter().chain(std::iter::once(&self.output)) {
            if l.n_in != prev || l.n_out == 0 || l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(Error::Config("inconsistent layer shapes".into()));
            }
            if l.weights.iter().chain(&l.bias).any(|x| !x.is_finite()) {
                return Err(Error::Config("non-finite network weight".into()));
            }
            prev = l.n_out;
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(Error::Config("output scale must be positive".into()));
        }
        if self.output.n_out != 1 {
            return Err(Error::Config("output layer must have one unit".into()));
        }
        Ok(())
    }

    /// Flattened parameters: per layer weights then biases, output layer last.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in self.hidden.iter().chain(std::iter::once(&self.output)) {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut off = 0;
        for l in self.hidden.iter_mut().chain(std::iter::once(&mut self.output)) {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Forward {
        debug_assert_eq!(x.len(), self.n_inputs());
        let mut acts = Vec::with_capacity(self.hidden.len() + 1);
        acts.push(x.to_vec());
        let mut buf = Vec::new();
        for l in &self.hidden {
            l.apply(acts.last().unwrap(), &mut buf);
            acts.push(buf.iter().map(|z| z.tanh()).collect());
        }
        let last = acts.last().unwrap();
        let value = self.output_scale
            * (self.output.bias[0] + self.output.weights.iter().zip(last).map(|(w, a)| w * a).sum::<f64>());
        Forward { acts, value }
    }

    /// Changes `output_scale` without changing the function.
    pub fn rescale_output(&mut self, scale: f64) {
        let f = self.output_scale / scale;
        self.output.weights.iter_mut().for_each(|w| *w *= f);
        self.output.bias.iter_mut().for_each(|b| *b *= f);
        self.output_scale = scale;
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.forward(x).value
    }

    /// `∂y/∂x` at the cached forward pass.
    pub fn input_gradient(&self, fw: &Forward) -> Vec<f64> {
        let mut adj: Vec<f64> = self.output.weights.iter().map(|w| self.output_scale * w).collect();
        for (l, layer) in self.hidden.iter().enumerate().rev() {
            let a = &fw.acts[l + 1];
            let zbar: Vec<f64> = adj.iter().zip(a).map(|(g, a)| g * (1.0 - a * a)).collect();
            adj = layer.transpose_apply(&zbar);
        }
        adj
    }

    /// Accumulates into `grad` the parameter gradient of `c·y + ∇y·t` and
    /// returns its input gradient `c·∇y + H·t`.
    pub fn backward(&self, fw: &Forward, c: f64, tangent: Option<&[f64]>, grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.n_params());
        let nl = self.hidden.len();
        // tangent propagation: dz_l = W_l da_{l-1}, da_l = φ'(z_l) dz_l
        let mut dz: Vec<Vec<f64>> = Vec::with_capacity(nl);
        let mut da: Vec<Vec<f64>> = Vec::with_capacity(nl + 1);
        let has_t = tangent.is_some();
        if let Some(t) = tangent {
            da.push(t.to_vec());
            let mut buf = Vec::new();
            for (l, layer) in self.hidden.iter().enumerate() {
                layer.apply_linear(&da[l], &mut buf);
                let a = &fw.acts[l + 1];
                let d: Vec<f64> = buf.iter().zip(a).map(|(z, a)| z * (1.0 - a * a)).collect();
                dz.push(buf.clone());
                da.push(d);
            }
        }

        // parameter offsets per layer
        let mut offsets = Vec::with_capacity(nl + 1);
        let mut off = 0;
        for l in self.hidden.iter().chain(std::iter::once(&self.output)) {
            offsets.push(off);
            off += l.n_params();
        }

        let out = &self.output;
        let s = self.output_scale;
        let c = c * s;
        let o_off = offsets[nl];
        let last = &fw.acts[nl];
        for (k, a) in last.iter().enumerate() {
            grad[o_off + k] += c * a + if has_t { s * da[nl][k] } else { 0.0 };
        }
        grad[o_off + out.weights.len()] += c;

        let mut abar: Vec<f64> = out.weights.iter().map(|w| c * w).collect();
        let mut dabar: Vec<f64> = if has_t {
            out.weights.iter().map(|w| s * w).collect()
        } else {
            Vec::new()
        };

        for l in (0..nl).rev() {
            let layer = &self.hidden[l];
            let a = &fw.acts[l + 1];
            let n_out = layer.n_out;
            let n_in = layer.n_in;
            let mut zbar = vec![0.0; n_out];
            let mut dzbar = vec![0.0; if has_t { n_out } else { 0 }];
            for o in 0..n_out {
                let d1 = 1.0 - a[o] * a[o];
                zbar[o] = d1 * abar[o];
                if has_t {
                    let d2 = -2.0 * a[o] * d1;
                    dzbar[o] = d1 * dabar[o];
                    zbar[o] += d2 * dz[l][o] * dabar[o];
                }
            }
            let prev = &fw.acts[l];
            let w_off = offsets[l];
            let b_off = w_off + layer.weights.len();
            for o in 0..n_out {
                let row = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                let zo = zbar[o];
                if has_t {
                    let dzo = dzbar[o];
                    let dprev = &da[l];
                    for ((g, p), dp) in row.iter_mut().zip(prev).zip(dprev) {
                        *g += zo * p + dzo * dp;
                    }
                } else {
                    for (g, p) in row.iter_mut().zip(prev) {
                        *g += zo * p;
                    }
                }
                grad[b_off + o] += zo;
            }
            abar = layer.transpose_apply(&zbar);
            if has_t {
                dabar = layer.transpose_apply(&dzbar);
            }
        }
        abar
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> (Mlp, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut m = Mlp::new(5, &[7, 4], &mut rng).unwrap();
        // nonzero biases so every path is exercised
        let p: Vec<f64> = m.params().iter().map(|x| x + 0.05).collect();
        m.set_params(&p);
        m.output_scale = 1.7;
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        (m, x, t)
    }

    fn objective(m: &Mlp, x: &[f64], c: f64, t: &[f64]) -> f64 {
        let g = m.input_gradient(&m.forward(x));
        c * m.value(x) + g.iter().zip(t).map(|(a, b)| a * b).sum::<f64>()
    }

    #[test]
    fn input_gradient_matches_differences() {
        let (m, x, _) = net();
        let g = m.input_gradient(&m.forward(&x));
        let h = 1e-6;
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let fd = (m.value(&xp) - m.value(&xm)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn second_order_gradients_match_differences() {
        let (m, x, t) = net();
        let c = 0.7;
        let mut grad = vec![0.0; m.n_params()];
        let input_adj = m.backward(&m.forward(&x), c, Some(&t), &mut grad);
        let h = 1e-6;
        let p0 = m.params();
        for k in 0..p0.len() {
            let mut mp = m.clone();
            let mut pp = p0.clone();
            pp[k] += h;
            mp.set_params(&pp);
            let mut mm = m.clone();
            let mut pm = p0.clone();
            pm[k] -= h;
            mm.set_params(&pm);
            let fd = (objective(&mp, &x, c, &t) - objective(&mm, &x, c, &t)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-7, "param {k}: fd {fd} vs {}", grad[k]);
        }
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let fd = (objective(&m, &xp, c, &t) - objective(&m, &xm, c, &t)) / (2.0 * h);
            assert!((fd - input_adj[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn first_order_backward_without_tangent() {
        let (m, x, _) = net();
        let mut grad = vec![0.0; m.n_params()];
        let adj = m.backward(&m.forward(&x), 1.0, None, &mut grad);
        let g = m.input_gradient(&m.forward(&x));
        for (a, b) in adj.iter().zip(&g) {
            assert!((a - b).abs() < 1e-15);
        }
        // output bias gradient is the seed times the output scale
        assert_eq!(*grad.last().unwrap(), m.output_scale);
    }

    #[test]
    fn params_round_trip_and_validation() {
        let (mut m, _, _) = net();
        let p = m.params();
        m.set_params(&p);
        assert_eq!(m.params(), p);
        assert!(m.validate().is_ok());
        m.hidden[0].weights[0] = f64::NAN;
        assert!(m.validate().is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Mlp::new(3, &[0], &mut rng).is_err());
    }

    #[test]
    fn rescaling_output_keeps_function() {
        let (mut m, x, _) = net();
        let before = m.value(&x);
        m.rescale_output(0.03);
        assert_eq!(m.output_scale, 0.03);
        assert!((m.value(&x) - before).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Mlp::new(4, &[3, 3], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = Mlp::new(4, &[3, 3], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }
}
