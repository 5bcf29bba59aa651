//! Cut-layer payload and weight compression.
//!
//! Quantization is uniform and symmetric over `[-maxabs, +maxabs]` with
//! `2^bits - 1` levels, so zero and both endpoints are representable. A
//! quantized payload carries an 8-byte scale header next to its values.
//! Top-k sparsification keeps the `ceil(k * n)` largest magnitudes and ships
//! each as a 4-byte index plus its value.

use serde::{Deserialize, Serialize};

use crate::nn::{bytes_of, SegmentState};
use crate::{Error, Result, Tensor};

/// Bytes of the per-tensor scale that accompanies quantized values.
pub const SCALE_HEADER_BYTES: u64 = 8;
/// Bytes per index in a sparse payload.
pub const INDEX_BYTES: u64 = 4;

pub const ACTIVATION_BITS: [u32; 5] = [32, 16, 8, 4, 2];
pub const WEIGHT_BITS: [u32; 3] = [32, 16, 8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressionSpec {
    /// Bits per value for activations and cut-layer gradients.
    pub activation_bits: u32,
    /// Fraction of entries kept by top-k sparsification, in `(0, 1]`.
    pub topk_ratio: f64,
    pub client_weight_bits: u32,
    pub server_weight_bits: u32,
}

impl Default for CompressionSpec {
    fn default() -> Self {
        Self {
            activation_bits: 32,
            topk_ratio: 1.0,
            client_weight_bits: 32,
            server_weight_bits: 32,
        }
    }
}

impl CompressionSpec {
    pub fn validate(&self) -> Result<()> {
        if !ACTIVATION_BITS.contains(&self.activation_bits) {
            return Err(Error::config(format!(
                "activation_bits must be one of {ACTIVATION_BITS:?}, got {}",
                self.activation_bits
            )));
        }
        if !(self.topk_ratio > 0.0 && self.topk_ratio <= 1.0) {
            return Err(Error::config(format!(
                "topk_ratio must be in (0, 1], got {}",
                self.topk_ratio
            )));
        }
        for (name, b) in [
            ("client_weight_bits", self.client_weight_bits),
            ("server_weight_bits", self.server_weight_bits),
        ] {
            if !WEIGHT_BITS.contains(&b) {
                return Err(Error::config(format!("{name} must be one of {WEIGHT_BITS:?}, got {b}")));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.activation_bits == 32 && self.topk_ratio >= 1.0
    }

    /// Wire encoding of a cut-layer payload of `elements` values.
    pub fn wire_format(&self, elements: usize) -> WireFormat {
        if self.topk_ratio < 1.0 {
            WireFormat::Sparse {
                kept: kept_count(elements, self.topk_ratio),
                bits: self.activation_bits,
            }
        } else {
            WireFormat::Dense {
                bits: self.activation_bits,
            }
        }
    }
}

/// Encoding of a payload on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "lowercase")]
pub enum WireFormat {
    Dense { bits: u32 },
    Sparse { kept: usize, bits: u32 },
}

impl WireFormat {
    pub const FULL: WireFormat = WireFormat::Dense { bits: 32 };

    /// Value (and index) bytes for a payload of `shape`, excluding any header.
    pub fn payload_bytes(&self, shape: &[usize]) -> u64 {
        match *self {
            WireFormat::Dense { bits } => bytes_of(shape, bits),
            WireFormat::Sparse { kept, bits } => kept as u64 * INDEX_BYTES + bytes_of(&[kept], bits),
        }
    }

    pub fn header_bytes(&self) -> u64 {
        let bits = match *self {
            WireFormat::Dense { bits } | WireFormat::Sparse { bits, .. } => bits,
        };
        if bits < 32 {
            SCALE_HEADER_BYTES
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WireBytes {
    pub payload: u64,
    pub header: u64,
}

impl WireBytes {
    pub fn total(&self) -> u64 {
        self.payload + self.header
    }
}

/// Quantizes to `bits` and back. `bits == 32` is the identity.
///
/// Returns the dequantized tensor, the scale (step between levels) and the
/// wire bytes. An all-zero tensor is returned unchanged with scale 0.
pub fn quantize_dequantize(t: &Tensor, bits: u32) -> Result<(Tensor, f64, WireBytes)> {
    if !(2..=32).contains(&bits) {
        return Err(Error::config(format!("cannot quantize to {bits} bits")));
    }
    if bits == 32 {
        return Ok((
            t.clone(),
            0.0,
            WireBytes {
                payload: bytes_of(t.shape(), 32),
                header: 0,
            },
        ));
    }
    let wire = WireBytes {
        payload: bytes_of(t.shape(), bits),
        header: SCALE_HEADER_BYTES,
    };
    let max_abs = t.max_abs();
    if max_abs == 0.0 {
        return Ok((t.clone(), 0.0, wire));
    }
    let step = max_abs / quant_max(bits);
    let mut out = t.clone();
    snap(out.data_mut(), step, quant_max(bits));
    Ok((out, step, wire))
}

fn quant_max(bits: u32) -> f64 {
    ((1u64 << (bits - 1)) - 1) as f64
}

fn snap(values: &mut [f64], step: f64, qmax: f64) {
    for v in values {
        let q = (*v / step).round().clamp(-qmax, qmax);
        *v = q * step;
    }
}

/// Result of [`topk_sparsify`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePayload {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub dense: Tensor,
    pub bytes: u64,
}

pub fn kept_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Keeps the `ceil(k * n)` largest-magnitude entries (ties to the lower
/// index) and zeros the rest.
pub fn topk_sparsify(t: &Tensor, k: f64) -> Result<SparsePayload> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::config(format!("top-k ratio must be in (0, 1], got {k}")));
    }
    let data = t.data();
    let kept = kept_count(data.len(), k);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data[b].abs().total_cmp(&data[a].abs()).then(a.cmp(&b)));
    let mut indices = order[..kept].to_vec();
    indices.sort_unstable();
    let values: Vec<f64> = indices.iter().map(|&i| data[i]).collect();
    let mut dense = Tensor::zeros(t.shape().to_vec());
    for (&i, &v) in indices.iter().zip(&values) {
        dense.data_mut()[i] = v;
    }
    Ok(SparsePayload {
        bytes: WireFormat::Sparse { kept, bits: 32 }.payload_bytes(t.shape()),
        indices,
        values,
        dense,
    })
}

/// Applies a [`CompressionSpec`] to a cut-layer payload and returns what the
/// receiver reconstructs plus the bytes on the wire.
pub fn compress_payload(t: &Tensor, spec: &CompressionSpec) -> Result<(Tensor, WireBytes)> {
    let format = spec.wire_format(t.len());
    let wire = WireBytes {
        payload: format.payload_bytes(t.shape()),
        header: format.header_bytes(),
    };
    if spec.is_identity() {
        return Ok((t.clone(), wire));
    }
    let sparse;
    let source = if spec.topk_ratio < 1.0 {
        sparse = topk_sparsify(t, spec.topk_ratio)?;
        &sparse.dense
    } else {
        t
    };
    let (out, _, _) = quantize_dequantize(source, spec.activation_bits)?;
    Ok((out, wire))
}

/// Snaps every weight tensor of `seg` onto its `bits`-bit grid; the identity
/// for 32 bits. Gradients are later taken at the snapped weights
/// (straight-through).
pub fn quantize_weights_step(seg: &mut SegmentState, bits: u32) -> Result<()> {
    if bits == 32 {
        return Ok(());
    }
    if !(2..32).contains(&bits) {
        return Err(Error::config(format!("cannot quantize weights to {bits} bits")));
    }
    for layer in seg.params_mut() {
        for p in layer.iter_mut() {
            let max_abs = p.max_abs();
            if max_abs > 0.0 {
                let step = max_abs / quant_max(bits);
                snap(p.data_mut(), step, quant_max(bits));
            }
        }
    }
    Ok(())
}
