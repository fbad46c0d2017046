//! Parameter storage, shared point-wise layers, and the Adam optimizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Mat, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamSet {
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat] {
        &mut self.values
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads {
            grads: self.values.iter().map(|m| Mat::zeros(m.dim())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over names, shapes and raw little-endian values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, m) in self.names.iter().zip(&self.values) {
            h.update(name.as_bytes());
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex_string(&h.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Gradients aligned one-to-one with a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct ParamGrads {
    grads: Vec<Mat>,
}

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> &Mat {
        &self.grads[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Mat) {
        self.grads[id.0] += g;
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f32) {
        for g in &mut self.grads {
            g.mapv_inplace(|v| v * s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Softplus,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Softplus => tape.softplus(x),
        }
    }
}

/// Fully connected layer applied to every row independently.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// He-uniform weights for layers feeding a rectifier, Glorot-uniform otherwise; zero bias.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        act: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = match act {
            Activation::Relu => (6.0 / fan_in as f64).sqrt(),
            _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        } as f32;
        let w = Mat::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
        let weight = params.add(format!("{name}.weight"), w);
        let bias = params.add(format!("{name}.bias"), Mat::zeros((1, fan_out)));
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.linear(x, w, b)
    }
}

/// Shared per-point stack: rectifier between layers, configurable activation on the last.
/// With no layers it is the identity map.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub last: Activation,
}

impl Mlp {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        widths: &[usize],
        last: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            let act = if i + 1 == widths.len() { last } else { Activation::Relu };
            layers.push(Linear::new(params, &format!("{name}.{i}"), fan_in, w, act, rng));
            fan_in = w;
        }
        Mlp { layers, last }
    }

    pub fn identity() -> Self {
        Mlp {
            layers: Vec::new(),
            last: Activation::Identity,
        }
    }

    pub fn output_width(&self, input: usize) -> usize {
        self.layers.last().map_or(input, |l| l.fan_out)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h);
            let act = if i + 1 == self.layers.len() { self.last } else { Activation::Relu };
            h = act.apply(tape, h);
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Mat> = params.values.iter().map(|m| Mat::zeros(m.dim())).collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &ParamGrads, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let step_size = (lr * bc2.sqrt() / bc1) as f32;
        let (b1, b2, eps) = (beta1 as f32, beta2 as f32, (eps * bc2.sqrt()) as f32);
        for ((p, g), (m, v)) in params
            .values
            .iter_mut()
            .zip(&grads.grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn empty_mlp_is_identity() {
        let ps = ParamSet::default();
        let mut tape = Tape::new(&ps);
        let x = tape.constant(ndarray::array![[1.0, -2.0]]);
        let y = Mlp::identity().forward(&mut tape, x);
        assert_eq!(x, y);
        assert_eq!(Mlp::identity().output_width(7), 7);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut ps = ParamSet::default();
        let id = ps.add("x", ndarray::array![[3.0, -2.0]]);
        let mut opt = Adam::new(&ps, AdamConfig::default());
        for _ in 0..2000 {
            let mut g = ps.zero_grads();
            let grad = ps.get(id).mapv(|v| 2.0 * v);
            g.accumulate(id, &grad);
            opt.update(&mut ps, &g, 0.01);
        }
        assert!(ps.get(id).iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn digest_tracks_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::default();
        let l = Linear::new(&mut ps, "l", 3, 2, Activation::Relu, &mut rng);
        let before = ps.digest();
        assert_eq!(before, ps.clone().digest());
        ps.get_mut(l.bias)[[0, 0]] = 1.0;
        assert_ne!(before, ps.digest());
    }
}
