//! Dense multilayer perceptrons with hand-written reverse-mode derivatives.
//!
//! Every network in the engine (indexer, decoder, non-rigid offset) is a
//! stack of [`Dense`] layers with one shared hidden activation and a linear
//! output layer. Parameters are laid out layer by layer, weights (row-major,
//! `outputs x inputs`) followed by biases; the same layout is used for flat
//! gradients.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::to_storage;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Silu,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 1,
            Activation::Silu => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Silu),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Silu => "silu",
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => crate::math::tanh(x),
            Activation::Silu => x * crate::math::sigmoid(x),
        }
    }

    /// Derivative given the pre-activation `x` and the activation `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Silu => {
                let s = crate::math::sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Gaussian weights with standard deviation `gain / sqrt(inputs)`, zero bias.
    pub fn gaussian<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain / (inputs as f64).sqrt();
        let weight = (0..inputs * outputs)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                to_storage(z * std)
            })
            .collect();
        Self {
            inputs,
            outputs,
            weight,
            bias: vec![0.0; outputs],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    #[inline]
    fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        crate::math::matvec(&self.weight, &self.bias, &input[..self.inputs], out);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Per-evaluation intermediate values needed by [`Mlp::backward`].
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    /// `acts[l]` is the input to layer `l`; the final entry is the output.
    pub acts: Vec<Vec<f64>>,
    /// Pre-activation values of every hidden layer.
    pub pre: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// Build a network with the given layer widths (`widths[0]` is the input).
    pub fn gaussian<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Self {
        Self::gaussian_with_gain(widths, activation, 1.0, rng)
    }

    pub fn gaussian_with_gain<R: Rng + ?Sized>(
        widths: &[usize],
        activation: Activation,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Dense::gaussian(w[0], w[1], gain, rng))
            .collect();
        Self { layers, activation }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        for l in &self.layers {
            if l.weight.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Shape("layer parameter length mismatch".into()));
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Shape("non-finite network parameter".into()));
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn write_params(&self, out: &mut [f64]) {
        let mut off = 0;
        for l in &self.layers {
            out[off..off + l.weight.len()].copy_from_slice(&l.weight);
            off += l.weight.len();
            out[off..off + l.bias.len()].copy_from_slice(&l.bias);
            off += l.bias.len();
        }
    }

    pub fn read_params(&mut self, src: &[f64]) {
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.copy_from_slice(&src[off..off + n]);
            off += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&src[off..off + n]);
            off += n;
        }
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(&mut f);
        }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut cache = MlpCache::default();
        self.forward_cached(input, &mut cache);
        cache.acts.pop().unwrap_or_default()
    }

    /// Forward pass recording every intermediate value into `cache`.
    /// The cache's buffers are reused between calls.
    pub fn forward_cached<'c>(&self, input: &[f64], cache: &'c mut MlpCache) -> &'c [f64] {
        let n = self.layers.len();
        cache.acts.resize_with(n + 1, Vec::new);
        cache.pre.resize_with(n.saturating_sub(1), Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = cache.acts.split_at_mut(l + 1);
            let x = &head[l];
            let y = &mut tail[0];
            y.resize(layer.outputs, 0.0);
            layer.forward_into(x, y);
            if l + 1 < n {
                let pre = &mut cache.pre[l];
                pre.clear();
                pre.extend_from_slice(y);
                match self.activation {
                    Activation::Tanh => crate::math::tanh_in_place(y),
                    act => y.iter_mut().for_each(|v| *v = act.apply(*v)),
                }
            }
        }
        &cache.acts[n]
    }

    /// Accumulate parameter gradients into `grad_params` (same layout as
    /// [`Mlp::write_params`]) and optionally write the input gradient.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_out: &[f64],
        grad_params: &mut [f64],
        grad_input: Option<&mut [f64]>,
    ) {
        let n = self.layers.len();
        let mut offsets = Vec::with_capacity(n);
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_count();
        }
        let mut g: Vec<f64> = grad_out.to_vec();
        let mut g_prev: Vec<f64> = Vec::new();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            if l + 1 < n {
                let pre = &cache.pre[l];
                let post = &cache.acts[l + 1];
                for ((gv, &x), &y) in g.iter_mut().zip(pre).zip(post) {
                    *gv *= self.activation.derivative(x, y);
                }
            }
            let x = &cache.acts[l];
            let base = offsets[l];
            let (gw, gb) = grad_params[base..base + layer.param_count()].split_at_mut(layer.weight.len());
            if l == 0 && grad_input.is_none() {
                crate::math::matvec_back(&layer.weight, x, &g, gw, gb, None);
                break;
            }
            g_prev.resize(layer.inputs, 0.0);
            crate::math::matvec_back(&layer.weight, x, &g, gw, gb, Some(&mut g_prev));
            std::mem::swap(&mut g, &mut g_prev);
        }
        if let Some(gi) = grad_input {
            gi.copy_from_slice(&g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_loss(mlp: &Mlp, x: &[f64], gout: &[f64]) -> f64 {
        mlp.forward(x).iter().zip(gout).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in [Activation::Tanh, Activation::Silu] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut mlp = Mlp::gaussian(&[5, 7, 6, 3], act, &mut rng);
            for l in &mut mlp.layers {
                for b in &mut l.bias {
                    *b = rng.gen_range(-0.5..0.5);
                }
            }
            let x = [0.3, -0.2, 0.9, 0.1, -0.7];
            let gout = [0.5, -1.0, 0.25];
            let mut cache = MlpCache::default();
            mlp.forward_cached(&x, &mut cache);
            let mut gp = vec![0.0; mlp.param_count()];
            let mut gi = vec![0.0; 5];
            mlp.backward(&cache, &gout, &mut gp, Some(&mut gi));

            let mut params = vec![0.0; mlp.param_count()];
            mlp.write_params(&mut params);
            let h = 1e-6;
            for i in (0..params.len()).step_by(7) {
                let mut p = params.clone();
                p[i] += h;
                let mut m = mlp.clone();
                m.read_params(&p);
                let up = scalar_loss(&m, &x, &gout);
                p[i] -= 2.0 * h;
                m.read_params(&p);
                let dn = scalar_loss(&m, &x, &gout);
                let fd = (up - dn) / (2.0 * h);
                assert!((fd - gp[i]).abs() < 1e-7, "{act:?} param {i}: fd {fd} vs {}", gp[i]);
            }
            for i in 0..5 {
                let mut xp = x;
                xp[i] += h;
                let up = scalar_loss(&mlp, &xp, &gout);
                xp[i] -= 2.0 * h;
                let dn = scalar_loss(&mlp, &xp, &gout);
                let fd = (up - dn) / (2.0 * h);
                assert!((fd - gi[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = Mlp::gaussian(&[3, 4, 2], Activation::Tanh, &mut rng);
        let mut p = vec![0.0; mlp.param_count()];
        mlp.write_params(&mut p);
        let mut other = Mlp::gaussian(&[3, 4, 2], Activation::Tanh, &mut rng);
        other.read_params(&p);
        assert_eq!(mlp, other);
    }

    #[test]
    fn validate_rejects_width_mismatch() {
        let mlp = Mlp {
            layers: vec![Dense::zeros(2, 3), Dense::zeros(4, 1)],
            activation: Activation::Tanh,
        };
        assert!(mlp.validate().is_err());
    }
}
