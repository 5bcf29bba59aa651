//! Layer specifications and model profiles.
//!
//! A [`ModelProfile`] is an ordered stack of [`LayerSpec`]s with chainable
//! shapes. Cut `l` places layers `0..l` (zero-based) on the lower node and
//! `l..L` above it, so legal cuts are `0..=L`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Abstract compute cycles charged per multiply-accumulate when a profile does
/// not carry measured costs.
pub const DEFAULT_CYCLES_PER_MAC: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerKind {
    Dense { inputs: usize, outputs: usize },
    Relu,
    /// 3x3, stride 1, no padding.
    Conv2dSmall { in_channels: usize, out_channels: usize },
    Flatten,
    /// Affine classifier head producing logits; the softmax itself is fused
    /// into [`crate::nn::loss_grad`].
    SoftmaxHead { inputs: usize, classes: usize },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Relu => "relu",
            LayerKind::Conv2dSmall { .. } => "conv2d-small",
            LayerKind::Flatten => "flatten",
            LayerKind::SoftmaxHead { .. } => "softmax-head",
        }
    }

    pub fn has_params(&self) -> bool {
        !matches!(self, LayerKind::Relu | LayerKind::Flatten)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub param_count: usize,
    pub fwd_cycles_per_sample: f64,
    pub bwd_cycles_per_sample: f64,
}

impl LayerSpec {
    /// Derives output shape, parameter count and default cycle costs for a
    /// layer of `kind` fed with `in_shape`.
    pub fn infer(kind: LayerKind, in_shape: &[usize]) -> Result<Self> {
        let elems: usize = in_shape.iter().product();
        let (out_shape, param_count, macs) = match kind {
            LayerKind::Dense { inputs, outputs } | LayerKind::SoftmaxHead { inputs, classes: outputs } => {
                if in_shape != [inputs] {
                    return Err(Error::Profile(format!(
                        "{} expects input [{inputs}], got {in_shape:?}",
                        kind.name()
                    )));
                }
                if inputs == 0 || outputs == 0 {
                    return Err(Error::Profile(format!("{} with a zero dimension", kind.name())));
                }
                (vec![outputs], inputs * outputs + outputs, (inputs * outputs) as f64)
            }
            LayerKind::Relu => (in_shape.to_vec(), 0, 0.0),
            LayerKind::Flatten => (vec![elems], 0, 0.0),
            LayerKind::Conv2dSmall {
                in_channels,
                out_channels,
            } => {
                let &[c, h, w] = in_shape else {
                    return Err(Error::Profile(format!(
                        "conv2d-small expects [C, H, W], got {in_shape:?}"
                    )));
                };
                if c != in_channels || h < 3 || w < 3 || out_channels == 0 {
                    return Err(Error::Profile(format!(
                        "conv2d-small({in_channels}->{out_channels}) cannot take {in_shape:?}"
                    )));
                }
                let (oh, ow) = (h - 2, w - 2);
                let params = out_channels * in_channels * 9 + out_channels;
                let macs = (out_channels * in_channels * 9 * oh * ow) as f64;
                (vec![out_channels, oh, ow], params, macs)
            }
        };
        let (fwd, bwd) = match kind {
            // elementwise gate in both directions
            LayerKind::Relu => (elems as f64, elems as f64),
            LayerKind::Flatten => (0.0, 0.0),
            _ => {
                let f = DEFAULT_CYCLES_PER_MAC * macs;
                (f, 2.0 * f)
            }
        };
        Ok(Self {
            kind,
            in_shape: in_shape.to_vec(),
            out_shape,
            param_count,
            fwd_cycles_per_sample: fwd,
            bwd_cycles_per_sample: bwd,
        })
    }

    pub fn in_elements(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_elements(&self) -> usize {
        self.out_shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    layers: Vec<LayerSpec>,
}

impl ModelProfile {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Profile(format!(
                "a profile needs at least 2 layers, got {}",
                layers.len()
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            let expected = LayerSpec::infer(l.kind, &l.in_shape)
                .map_err(|e| Error::Profile(format!("layer {i}: {e}")))?;
            if expected.out_shape != l.out_shape || expected.param_count != l.param_count {
                return Err(Error::Profile(format!(
                    "layer {i} ({}) declares out {:?} / {} params, expected {:?} / {}",
                    l.kind.name(),
                    l.out_shape,
                    l.param_count,
                    expected.out_shape,
                    expected.param_count
                )));
            }
            if !(l.fwd_cycles_per_sample >= 0.0 && l.bwd_cycles_per_sample >= 0.0) {
                return Err(Error::Profile(format!("layer {i} has negative cycle costs")));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.in_shape != l.out_shape {
                    return Err(Error::Profile(format!(
                        "layer {} input {:?} does not chain from layer {i} output {:?}",
                        i + 1,
                        next.in_shape,
                        l.out_shape
                    )));
                }
            }
        }
        Ok(Self { layers })
    }

    /// Chains `kinds` starting from `input_shape`, inferring every shape.
    pub fn from_kinds(input_shape: &[usize], kinds: &[LayerKind]) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(kinds.len());
        for (i, &k) in kinds.iter().enumerate() {
            let spec = LayerSpec::infer(k, &shape).map_err(|e| Error::Profile(format!("layer {i}: {e}")))?;
            shape = spec.out_shape.clone();
            layers.push(spec);
        }
        Self::new(layers)
    }

    /// Fully connected classifier: `dense+relu` per hidden width, then a head.
    pub fn mlp(inputs: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut kinds = Vec::new();
        let mut width = inputs;
        for &h in hidden {
            kinds.push(LayerKind::Dense { inputs: width, outputs: h });
            kinds.push(LayerKind::Relu);
            width = h;
        }
        kinds.push(LayerKind::SoftmaxHead { inputs: width, classes });
        Self::from_kinds(&[inputs], &kinds)
    }

    /// Small CNN over `[channels, side, side]` inputs whose activations shrink
    /// with depth.
    pub fn small_cnn(channels: usize, side: usize, conv_channels: &[usize], hidden: usize, classes: usize) -> Result<Self> {
        let mut kinds = Vec::new();
        let mut c = channels;
        let mut s = side;
        for &oc in conv_channels {
            kinds.push(LayerKind::Conv2dSmall { in_channels: c, out_channels: oc });
            kinds.push(LayerKind::Relu);
            c = oc;
            s = s.saturating_sub(2);
        }
        kinds.push(LayerKind::Flatten);
        kinds.push(LayerKind::Dense { inputs: c * s * s, outputs: hidden });
        kinds.push(LayerKind::Relu);
        kinds.push(LayerKind::SoftmaxHead { inputs: hidden, classes });
        Self::from_kinds(&[channels, side, side], &kinds)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Number of layers `L`.
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.layers[0].in_shape
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_elements()
    }

    /// Per-sample shape of the tensor crossing cut `cut`.
    pub fn cut_shape(&self, cut: usize) -> &[usize] {
        if cut == 0 {
            &self.layers[0].in_shape
        } else {
            &self.layers[cut - 1].out_shape
        }
    }

    pub fn cut_elements(&self, cut: usize) -> usize {
        self.cut_shape(cut).iter().product()
    }

    pub fn param_count(&self, start: usize, end: usize) -> usize {
        self.layers[start..end].iter().map(|l| l.param_count).sum()
    }

    pub fn total_params(&self) -> usize {
        self.param_count(0, self.len())
    }

    pub fn fwd_cycles(&self, start: usize, end: usize) -> f64 {
        self.layers[start..end].iter().map(|l| l.fwd_cycles_per_sample).sum()
    }

    pub fn bwd_cycles(&self, start: usize, end: usize) -> f64 {
        self.layers[start..end].iter().map(|l| l.bwd_cycles_per_sample).sum()
    }

    /// Largest per-sample activation (layer input or output) inside `start..end`.
    pub fn max_activation(&self, start: usize, end: usize) -> usize {
        self.layers[start..end]
            .iter()
            .map(|l| l.in_elements().max(l.out_elements()))
            .max()
            .unwrap_or(0)
    }

    /// Resident bytes for hosting `start..end` at batch size `batch`: 32-bit
    /// parameters plus the largest 32-bit activation cache.
    pub fn memory_bytes(&self, start: usize, end: usize, batch: usize) -> u64 {
        if start == end {
            return 0;
        }
        4 * self.param_count(start, end) as u64 + 4 * (self.max_activation(start, end) * batch) as u64
    }

    pub fn check_cut(&self, cut: usize) -> Result<()> {
        if cut > self.len() {
            return Err(Error::config(format!("cut {cut} outside 0..={}", self.len())));
        }
        Ok(())
    }
}

/// Bytes needed to ship `shape` at `bits` bits per value:
/// `ceil(product(shape) * bits / 8)`.
pub fn bytes_of(shape: &[usize], bits: u32) -> u64 {
    debug_assert!(matches!(bits, 1 | 2 | 4 | 8 | 16 | 32), "unsupported bitwidth {bits}");
    let n: u64 = shape.iter().map(|&d| d as u64).product();
    (n * bits as u64).div_ceil(8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_of_examples() {
        assert_eq!(bytes_of(&[32, 4096], 32), 524_288);
        assert_eq!(bytes_of(&[1], 8), 1);
        assert_eq!(bytes_of(&[3, 5], 4), 8);
    }

    #[test]
    fn mlp_shapes_chain() {
        let p = ModelProfile::mlp(4, &[8, 6], 3).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(p.cut_shape(0), &[4]);
        assert_eq!(p.cut_shape(2), &[8]);
        assert_eq!(p.cut_shape(5), &[3]);
        assert_eq!(p.layers()[1].param_count, 0);
        assert_eq!(p.total_params(), 4 * 8 + 8 + 8 * 6 + 6 + 6 * 3 + 3);
    }

    #[test]
    fn cnn_activations_shrink() {
        let p = ModelProfile::small_cnn(1, 8, &[4, 2], 8, 3).unwrap();
        assert_eq!(p.cut_shape(1), &[4, 6, 6]);
        assert_eq!(p.cut_shape(3), &[2, 4, 4]);
        assert_eq!(p.cut_shape(5), &[32]);
        assert!(p.cut_elements(3) < p.cut_elements(1));
    }

    #[test]
    fn rejects_unchained_or_short_profiles() {
        let d = LayerSpec::infer(LayerKind::Dense { inputs: 2, outputs: 3 }, &[2]).unwrap();
        let h = LayerSpec::infer(LayerKind::SoftmaxHead { inputs: 4, classes: 2 }, &[4]).unwrap();
        assert!(ModelProfile::new(vec![d.clone()]).is_err());
        assert!(ModelProfile::new(vec![d, h]).is_err());
    }

    #[test]
    fn rejects_wrong_param_count() {
        let mut d = LayerSpec::infer(LayerKind::Dense { inputs: 2, outputs: 3 }, &[2]).unwrap();
        let r = LayerSpec::infer(LayerKind::Relu, &[3]).unwrap();
        d.param_count = 5;
        assert!(ModelProfile::new(vec![d, r]).is_err());
    }
}
