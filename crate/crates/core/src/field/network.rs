use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{encode_into, encoded_len};
use super::FieldSample;
use crate::autodiff::{Linear, NodeId, Tape, Tensor};
use crate::geometry::Vec3;

/// Shape of the density/normal network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Fully connected trunk layers.
    pub depth: usize,
    /// Channels per trunk and normal-head layer.
    pub width: usize,
    /// Layers in the normal head, including its 3-channel output layer.
    pub head_depth: usize,
    /// Positional-encoding frequency bands.
    pub encoding_freqs: usize,
    /// Trunk layer whose input is concatenated with the encoded point; 0 disables.
    pub skip_layer: usize,
    /// Density is `density_scale · softplus(raw)`, in 1/m.
    pub density_scale: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            depth: 8,
            width: 256,
            head_depth: 3,
            encoding_freqs: 10,
            skip_layer: 4,
            density_scale: 1.0,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<(), String> {
        if self.depth == 0 || self.width == 0 {
            return Err("trunk depth and width must be positive".into());
        }
        if self.head_depth == 0 {
            return Err("normal head needs at least one layer".into());
        }
        if !(self.density_scale > 0.0 && self.density_scale.is_finite()) {
            return Err("density_scale must be positive".into());
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        encoded_len(self.encoding_freqs)
    }

    fn has_skip(&self, layer: usize) -> bool {
        self.skip_layer > 0 && self.skip_layer == layer
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).len
    }
}

/// Offsets of every layer inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub arch: Architecture,
    pub trunk: Vec<Linear>,
    pub density: Linear,
    pub head: Vec<Linear>,
    pub len: usize,
}

impl Layout {
    pub fn new(arch: &Architecture) -> Self {
        let mut offset = 0;
        let mut layer = |n_in: usize, n_out: usize| {
            let l = Linear {
                weight: offset,
                bias: offset + n_in * n_out,
                n_in,
                n_out,
            };
            offset += Linear::param_count(n_in, n_out);
            l
        };
        let enc = arch.input_len();
        let trunk = (0..arch.depth)
            .map(|i| {
                let n_in = if i == 0 { enc } else { arch.width };
                let n_in = if i > 0 && arch.has_skip(i) { n_in + enc } else { n_in };
                layer(n_in, arch.width)
            })
            .collect();
        let density = layer(arch.width, 1);
        let head = (0..arch.head_depth)
            .map(|j| {
                let n_out = if j + 1 == arch.head_depth { 3 } else { arch.width };
                layer(arch.width, n_out)
            })
            .collect();
        Self {
            arch: *arch,
            trunk,
            density,
            head,
            len: offset,
        }
    }

    /// Encodes `points` into a constant leaf.
    pub fn encode_points(&self, tape: &mut Tape<'_>, points: &[Vec3]) -> NodeId {
        let width = self.arch.input_len();
        let mut data = Vec::with_capacity(points.len() * width);
        for p in points {
            encode_into(p, self.arch.encoding_freqs, &mut data);
        }
        tape.input(Tensor::new(points.len(), width, data))
    }

    /// Records the network on `tape`; returns `(σ: n×1, normal: n×3)`.
    pub fn forward(&self, tape: &mut Tape<'_>, encoded: NodeId) -> (NodeId, NodeId) {
        let mut h = encoded;
        for (i, layer) in self.trunk.iter().enumerate() {
            if i > 0 && self.arch.has_skip(i) {
                h = tape.concat(h, encoded);
            }
            let a = tape.affine(h, *layer);
            h = tape.relu(a);
        }
        let raw = tape.affine(h, self.density);
        let sigma = tape.softplus(raw, self.arch.density_scale);
        let mut g = h;
        for (j, layer) in self.head.iter().enumerate() {
            g = tape.affine(g, *layer);
            if j + 1 < self.head.len() {
                g = tape.relu(g);
            }
        }
        (sigma, g)
    }
}

/// Initialization knobs; weights are He-uniform, biases zero unless set here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitOptions {
    pub seed: u64,
    /// Bias of the raw density output.
    pub density_bias: f64,
    /// Bias of the normal-head output layer.
    pub normal_bias: [f64; 3],
    /// Multiplier on the He bound of the normal-head output weights.
    pub normal_weight_gain: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            density_bias: 0.0,
            normal_bias: [0.0, 0.0, 1.0],
            normal_weight_gain: 0.1,
        }
    }
}

/// Coordinate network mapping a point to volume density and a raw normal.
#[derive(Debug, Clone, PartialEq)]
pub struct NeRefNetwork {
    pub layout: Layout,
    pub params: Vec<f64>,
}

impl NeRefNetwork {
    pub fn new(arch: Architecture, init: &InitOptions) -> Self {
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
        let mut fill = |l: &Linear, gain: f64, params: &mut [f64]| {
            let bound = gain * (6.0 / l.n_in as f64).sqrt();
            for w in &mut params[l.weight..l.weight + l.n_in * l.n_out] {
                *w = rng.random_range(-bound..bound);
            }
        };
        for l in &layout.trunk {
            fill(l, 1.0, &mut params);
        }
        fill(&layout.density, 1.0, &mut params);
        let last = layout.head.len() - 1;
        for (j, l) in layout.head.iter().enumerate() {
            fill(l, if j == last { init.normal_weight_gain } else { 1.0 }, &mut params);
        }
        params[layout.density.bias] = init.density_bias;
        let out = layout.head[last];
        params[out.bias..out.bias + 3].copy_from_slice(&init.normal_bias);
        Self { layout, params }
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self, String> {
        let layout = Layout::new(&arch);
        if params.len() != layout.len {
            return Err(format!(
                "parameter count {} does not match architecture ({})",
                params.len(),
                layout.len
            ));
        }
        Ok(Self { layout, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.layout.arch
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Zeroes the normal-head output layer, making the raw normal vanish.
    pub fn zero_normal_output(&mut self) {
        let out = *self.layout.head.last().expect("head has layers");
        self.params[out.weight..out.bias + out.n_out].fill(0.0);
    }

    pub fn query(&self, point: &Vec3) -> FieldSample {
        self.query_batch(std::slice::from_ref(point))[0]
    }

    pub fn query_batch(&self, points: &[Vec3]) -> Vec<FieldSample> {
        let mut tape = Tape::new(&self.params);
        let enc = self.layout.encode_points(&mut tape, points);
        let (sigma, normal) = self.layout.forward(&mut tape, enc);
        let (s, n) = (tape.value(sigma), tape.value(normal));
        (0..points.len())
            .map(|i| FieldSample {
                sigma: s.data[i],
                normal: Vec3::new(n.get(i, 0), n.get(i, 1), n.get(i, 2)),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Architecture {
        Architecture {
            depth: 2,
            width: 8,
            head_depth: 3,
            encoding_freqs: 2,
            skip_layer: 0,
            density_scale: 1.0,
        }
    }

    #[test]
    fn default_architecture_parameter_count() {
        let arch = Architecture::default();
        let (enc, w) = (63, 256);
        let trunk = (enc * w + w) + 3 * (w * w + w) + ((w + enc) * w + w) + 3 * (w * w + w);
        let head = 2 * (w * w + w) + (w * 3 + 3);
        assert_eq!(arch.param_count(), trunk + (w + 1) + head);
        let net = NeRefNetwork::new(arch, &InitOptions::default());
        assert_eq!(net.params.len(), arch.param_count());
        assert!(net.params.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn zero_normal_head_gives_zero_normal() {
        let mut net = NeRefNetwork::new(tiny(), &InitOptions::default());
        net.zero_normal_output();
        for p in [Vec3::new(0.1, 0.2, 0.3), Vec3::new(-1.0, 0.5, 0.0)] {
            let s = net.query(&p);
            assert_eq!(s.normal, Vec3::zeros());
            assert!(s.sigma >= 0.0);
        }
    }

    #[test]
    fn query_is_bit_reproducible() {
        let net = NeRefNetwork::new(tiny(), &InitOptions { seed: 9, ..Default::default() });
        let p = Vec3::new(0.3, -0.1, 0.2);
        let a = net.query(&p);
        let b = net.query(&p);
        assert_eq!(a.sigma.to_bits(), b.sigma.to_bits());
        assert_eq!(a.normal, b.normal);
    }

    #[test]
    fn single_layer_surrogate_matches_hand_evaluation() {
        // one trunk layer of width 2, one-layer head, no encoding bands
        let arch = Architecture {
            depth: 1,
            width: 2,
            head_depth: 1,
            encoding_freqs: 0,
            skip_layer: 0,
            density_scale: 2.0,
        };
        let layout = Layout::new(&arch);
        assert_eq!(layout.len, (3 * 2 + 2) + (2 + 1) + (2 * 3 + 3));
        #[rustfmt::skip]
        let params = vec![
            // trunk W (2×3), b (2)
            1.0, -1.0, 0.5,   0.0, 2.0, -1.0,   0.1, -0.2,
            // density W (1×2), b
            0.5, -0.25,   0.3,
            // head W (3×2), b (3)
            1.0, 0.0,   0.0, 1.0,   1.0, 1.0,   0.0, 0.0, 1.0,
        ];
        let net = NeRefNetwork::from_params(arch, params).unwrap();
        let p = Vec3::new(0.4, 0.2, 0.6);
        let h0 = (0.4f64 - 0.2 + 0.3 + 0.1).max(0.0);
        let h1 = (0.4f64 - 0.6 - 0.2).max(0.0);
        let raw = 0.5 * h0 - 0.25 * h1 + 0.3;
        let expected_sigma = 2.0 * (1.0 + raw.exp()).ln();
        let s = net.query(&p);
        assert!((s.sigma - expected_sigma).abs() < 1e-14);
        assert!((s.normal - Vec3::new(h0, h1, h0 + h1 + 1.0)).norm() < 1e-14);
    }

    #[test]
    fn from_params_rejects_wrong_length() {
        assert!(NeRefNetwork::from_params(tiny(), vec![0.0; 3]).is_err());
    }
}
