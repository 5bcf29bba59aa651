//! Contiguous model segments with explicit forward and backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::profile::{LayerKind, LayerSpec, ModelProfile};
use crate::rng::{self, tag};
use crate::{Error, Result, Tensor};

/// Layers `start..end` of a profile plus their parameters.
///
/// `version` increments on every parameter update; activation caches remember
/// the version they were produced under so a backward pass against updated
/// weights is rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentState {
    start: usize,
    end: usize,
    layers: Vec<LayerSpec>,
    /// Per layer: `[weights, bias]` for parametric layers, empty otherwise.
    params: Vec<Vec<Tensor>>,
    seed: u64,
    version: u64,
}

/// Inputs of every layer in a segment, as needed by [`SegmentState::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache {
    start: usize,
    end: usize,
    version: u64,
    inputs: Vec<Tensor>,
    output_shape: Vec<usize>,
}

impl ActivationCache {
    pub fn batch(&self) -> usize {
        self.output_shape[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    /// Elementwise mean of caches produced by the same segment and version.
    pub fn mean(caches: &[&ActivationCache]) -> Result<ActivationCache> {
        let first = caches
            .first()
            .ok_or_else(|| Error::StaleCache("mean of no caches".into()))?;
        for c in caches {
            if c.start != first.start || c.end != first.end || c.version != first.version {
                return Err(Error::StaleCache("cannot average caches from different segment states".into()));
            }
            if c.output_shape != first.output_shape {
                return Err(Error::Tensor(format!(
                    "cannot average caches of batch shapes {:?} and {:?}",
                    c.output_shape, first.output_shape
                )));
            }
        }
        let mut inputs = Vec::with_capacity(first.inputs.len());
        for i in 0..first.inputs.len() {
            let layer: Vec<&Tensor> = caches.iter().map(|c| &c.inputs[i]).collect();
            inputs.push(Tensor::mean(&layer)?);
        }
        Ok(ActivationCache {
            start: first.start,
            end: first.end,
            version: first.version,
            inputs,
            output_shape: first.output_shape.clone(),
        })
    }
}

/// Parameter gradients mirroring a segment's parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    start: usize,
    pub grads: Vec<Vec<Tensor>>,
}

impl ParamGrads {
    /// `sum_i weights[i] * grads[i]` in slice order.
    pub fn weighted_sum(grads: &[&ParamGrads], weights: &[f64]) -> Result<ParamGrads> {
        let first = grads
            .first()
            .ok_or_else(|| Error::Tensor("weighted sum of no gradients".into()))?;
        if grads.iter().any(|g| g.start != first.start || g.grads.len() != first.grads.len()) {
            return Err(Error::Tensor("gradients from different segments".into()));
        }
        let mut out = Vec::with_capacity(first.grads.len());
        for (l, layer) in first.grads.iter().enumerate() {
            let mut lt = Vec::with_capacity(layer.len());
            for p in 0..layer.len() {
                let ts: Vec<&Tensor> = grads.iter().map(|g| &g.grads[l][p]).collect();
                lt.push(Tensor::weighted_sum(&ts, weights)?);
            }
            out.push(lt);
        }
        Ok(ParamGrads {
            start: first.start,
            grads: out,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(|l| l.is_empty())
    }
}

impl SegmentState {
    /// Initializes layers `start..end` of `profile`.
    ///
    /// Each layer draws from its own stream keyed by `(seed, layer index)`, so a
    /// segment initialized directly equals the same range cut out of a full
    /// model initialized with the same seed.
    pub fn init(profile: &ModelProfile, start: usize, end: usize, seed: u64) -> Result<Self> {
        if start > end || end > profile.len() {
            return Err(Error::config(format!(
                "segment {start}..{end} outside 0..{}",
                profile.len()
            )));
        }
        let layers = profile.layers()[start..end].to_vec();
        let params = layers
            .iter()
            .enumerate()
            .map(|(i, l)| init_layer(l, seed, (start + i) as u64))
            .collect();
        Ok(Self {
            start,
            end,
            layers,
            params,
            seed,
            version: 0,
        })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Vec<Tensor>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<Tensor>] {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count).sum()
    }

    /// Splits at absolute layer index `cut` into `(start..cut, cut..end)`.
    pub fn split_at(&self, cut: usize) -> Result<(SegmentState, SegmentState)> {
        if cut < self.start || cut > self.end {
            return Err(Error::config(format!(
                "cut {cut} outside segment {}..{}",
                self.start, self.end
            )));
        }
        let k = cut - self.start;
        let lower = SegmentState {
            start: self.start,
            end: cut,
            layers: self.layers[..k].to_vec(),
            params: self.params[..k].to_vec(),
            seed: self.seed,
            version: self.version,
        };
        let upper = SegmentState {
            start: cut,
            end: self.end,
            layers: self.layers[k..].to_vec(),
            params: self.params[k..].to_vec(),
            seed: self.seed,
            version: self.version,
        };
        Ok((lower, upper))
    }

    /// Joins adjacent segments back into one.
    pub fn concat(parts: &[&SegmentState]) -> Result<SegmentState> {
        let first = parts
            .first()
            .ok_or_else(|| Error::config("concat of no segments"))?;
        let mut out = (*first).clone();
        for p in &parts[1..] {
            if p.start != out.end {
                return Err(Error::config(format!(
                    "segments {}..{} and {}..{} are not adjacent",
                    out.start, out.end, p.start, p.end
                )));
            }
            out.end = p.end;
            out.layers.extend(p.layers.iter().cloned());
            out.params.extend(p.params.iter().cloned());
            out.version = out.version.max(p.version);
        }
        Ok(out)
    }

    /// Bitwise parameter equality.
    pub fn params_bit_eq(&self, other: &SegmentState) -> bool {
        self.start == other.start
            && self.end == other.end
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bit_eq(y)))
    }

    /// Runs the segment on a batch. An empty segment is the identity.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ActivationCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let idx = self.start + i;
            if x.sample_shape() != layer.in_shape.as_slice() {
                let mut expected = vec![x.rows()];
                expected.extend_from_slice(&layer.in_shape);
                return Err(Error::Shape {
                    layer: idx,
                    expected,
                    actual: x.shape().to_vec(),
                });
            }
            let y = layer_forward(layer, &self.params[i], &x);
            inputs.push(x);
            x = y;
        }
        let cache = ActivationCache {
            start: self.start,
            end: self.end,
            version: self.version,
            inputs,
            output_shape: x.shape().to_vec(),
        };
        Ok((x, cache))
    }

    /// Back-propagates `grad_out` through the segment using `cache` from the
    /// matching forward call. Returns the gradient with respect to the segment
    /// input and the parameter gradients.
    pub fn backward(&self, cache: &ActivationCache, grad_out: &Tensor) -> Result<(Tensor, ParamGrads)> {
        if cache.start != self.start || cache.end != self.end {
            return Err(Error::StaleCache(format!(
                "cache for layers {}..{} used with segment {}..{}",
                cache.start, cache.end, self.start, self.end
            )));
        }
        if cache.version != self.version {
            return Err(Error::StaleCache(format!(
                "cache from parameter version {} but segment is at version {}",
                cache.version, self.version
            )));
        }
        if grad_out.shape() != cache.output_shape.as_slice() {
            return Err(Error::Shape {
                layer: self.end.saturating_sub(1),
                expected: cache.output_shape.clone(),
                actual: grad_out.shape().to_vec(),
            });
        }
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let (gin, pg) = layer_backward(&self.layers[i], &self.params[i], &cache.inputs[i], &g);
            grads[i] = pg;
            g = gin;
        }
        Ok((
            g,
            ParamGrads {
                start: self.start,
                grads,
            },
        ))
    }

    /// `w <- w - lr * g` for every parameter.
    pub fn sgd_step(&mut self, grads: &ParamGrads, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::config(format!("learning rate must be > 0, got {lr}")));
        }
        if grads.start != self.start || grads.grads.len() != self.params.len() {
            return Err(Error::Tensor(format!(
                "gradients for a segment starting at {} applied to {}..{}",
                grads.start, self.start, self.end
            )));
        }
        for (i, (ps, gs)) in self.params.iter().zip(&grads.grads).enumerate() {
            if ps.len() != gs.len() || ps.iter().zip(gs).any(|(p, g)| p.shape() != g.shape()) {
                return Err(Error::Shape {
                    layer: self.start + i,
                    expected: ps.first().map(|p| p.shape().to_vec()).unwrap_or_default(),
                    actual: gs.first().map(|g| g.shape().to_vec()).unwrap_or_default(),
                });
            }
        }
        for (ps, gs) in self.params.iter_mut().zip(&grads.grads) {
            for (p, g) in ps.iter_mut().zip(gs) {
                for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                    *w -= lr * d;
                }
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Replaces parameters (e.g. after averaging), bumping the version.
    pub fn set_params(&mut self, params: Vec<Vec<Tensor>>) -> Result<()> {
        if params.len() != self.params.len()
            || params
                .iter()
                .zip(&self.params)
                .any(|(a, b)| a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.shape() != y.shape()))
        {
            return Err(Error::Tensor("parameter layout mismatch".into()));
        }
        self.params = params;
        self.version += 1;
        Ok(())
    }

    /// `sum_i weights[i] * segments[i]` over parameters, in slice order.
    pub fn weighted_average(segments: &[&SegmentState], weights: &[f64]) -> Result<Vec<Vec<Tensor>>> {
        let first = segments
            .first()
            .ok_or_else(|| Error::config("average of no segments"))?;
        if segments.iter().any(|s| s.start != first.start || s.end != first.end) {
            return Err(Error::config("cannot average segments covering different layers"));
        }
        let mut out = Vec::with_capacity(first.params.len());
        for l in 0..first.params.len() {
            let mut lt = Vec::new();
            for p in 0..first.params[l].len() {
                let ts: Vec<&Tensor> = segments.iter().map(|s| &s.params[l][p]).collect();
                lt.push(Tensor::weighted_sum(&ts, weights)?);
            }
            out.push(lt);
        }
        Ok(out)
    }
}

fn init_layer(layer: &LayerSpec, seed: u64, index: u64) -> Vec<Tensor> {
    let (wshape, fan_in, outputs) = match layer.kind {
        LayerKind::Dense { inputs, outputs } | LayerKind::SoftmaxHead { inputs, classes: outputs } => {
            (vec![outputs, inputs], inputs, outputs)
        }
        LayerKind::Conv2dSmall {
            in_channels,
            out_channels,
        } => (vec![out_channels, in_channels, 3, 3], in_channels * 9, out_channels),
        LayerKind::Relu | LayerKind::Flatten => return Vec::new(),
    };
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut rng = rng::stream(seed, &[tag::INIT, index]);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
    let wn = wshape.iter().product();
    let w = Tensor::from_parts(wshape, draw(wn));
    let b = Tensor::from_parts(vec![outputs], draw(outputs));
    vec![w, b]
}

fn layer_forward(layer: &LayerSpec, params: &[Tensor], x: &Tensor) -> Tensor {
    let batch = x.rows();
    match layer.kind {
        LayerKind::Dense { inputs, outputs } | LayerKind::SoftmaxHead { inputs, classes: outputs } => {
            let (w, b) = (params[0].data(), params[1].data());
            let xd = x.data();
            let mut y = vec![0.0; batch * outputs];
            for n in 0..batch {
                let xr = &xd[n * inputs..(n + 1) * inputs];
                for o in 0..outputs {
                    let wr = &w[o * inputs..(o + 1) * inputs];
                    let mut acc = 0.0;
                    for i in 0..inputs {
                        acc += wr[i] * xr[i];
                    }
                    y[n * outputs + o] = acc + b[o];
                }
            }
            Tensor::from_parts(vec![batch, outputs], y)
        }
        LayerKind::Relu => {
            let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            Tensor::from_parts(x.shape().to_vec(), data)
        }
        LayerKind::Flatten => {
            let n = x.row_len();
            Tensor::from_parts(vec![batch, n], x.data().to_vec())
        }
        LayerKind::Conv2dSmall {
            in_channels: c_in,
            out_channels: c_out,
        } => {
            let (h, w_) = (layer.in_shape[1], layer.in_shape[2]);
            let (oh, ow) = (h - 2, w_ - 2);
            let (w, b) = (params[0].data(), params[1].data());
            let xd = x.data();
            let mut y = vec![0.0; batch * c_out * oh * ow];
            for n in 0..batch {
                let xs = &xd[n * c_in * h * w_..(n + 1) * c_in * h * w_];
                for k in 0..c_out {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut acc = 0.0;
                            for c in 0..c_in {
                                for di in 0..3 {
                                    for dj in 0..3 {
                                        acc += w[((k * c_in + c) * 3 + di) * 3 + dj]
                                            * xs[(c * h + i + di) * w_ + j + dj];
                                    }
                                }
                            }
                            y[((n * c_out + k) * oh + i) * ow + j] = acc + b[k];
                        }
                    }
                }
            }
            Tensor::from_parts(vec![batch, c_out, oh, ow], y)
        }
    }
}

fn layer_backward(layer: &LayerSpec, params: &[Tensor], x: &Tensor, g: &Tensor) -> (Tensor, Vec<Tensor>) {
    let batch = x.rows();
    match layer.kind {
        LayerKind::Dense { inputs, outputs } | LayerKind::SoftmaxHead { inputs, classes: outputs } => {
            let w = params[0].data();
            let (xd, gd) = (x.data(), g.data());
            let mut dw = vec![0.0; outputs * inputs];
            let mut db = vec![0.0; outputs];
            let mut dx = vec![0.0; batch * inputs];
            for n in 0..batch {
                let xr = &xd[n * inputs..(n + 1) * inputs];
                let gr = &gd[n * outputs..(n + 1) * outputs];
                let dxr = &mut dx[n * inputs..(n + 1) * inputs];
                for o in 0..outputs {
                    let go = gr[o];
                    db[o] += go;
                    let dwr = &mut dw[o * inputs..(o + 1) * inputs];
                    let wr = &w[o * inputs..(o + 1) * inputs];
                    for i in 0..inputs {
                        dwr[i] += go * xr[i];
                        dxr[i] += go * wr[i];
                    }
                }
            }
            (
                Tensor::from_parts(x.shape().to_vec(), dx),
                vec![
                    Tensor::from_parts(vec![outputs, inputs], dw),
                    Tensor::from_parts(vec![outputs], db),
                ],
            )
        }
        LayerKind::Relu => {
            let data = x
                .data()
                .iter()
                .zip(g.data())
                .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                .collect();
            (Tensor::from_parts(x.shape().to_vec(), data), Vec::new())
        }
        LayerKind::Flatten => (Tensor::from_parts(x.shape().to_vec(), g.data().to_vec()), Vec::new()),
        LayerKind::Conv2dSmall {
            in_channels: c_in,
            out_channels: c_out,
        } => {
            let (h, w_) = (layer.in_shape[1], layer.in_shape[2]);
            let (oh, ow) = (h - 2, w_ - 2);
            let w = params[0].data();
            let (xd, gd) = (x.data(), g.data());
            let mut dw = vec![0.0; c_out * c_in * 9];
            let mut db = vec![0.0; c_out];
            let mut dx = vec![0.0; xd.len()];
            for n in 0..batch {
                let base = n * c_in * h * w_;
                for k in 0..c_out {
                    for i in 0..oh {
                        for j in 0..ow {
                            let go = gd[((n * c_out + k) * oh + i) * ow + j];
                            db[k] += go;
                            for c in 0..c_in {
                                for di in 0..3 {
                                    for dj in 0..3 {
                                        let wi = ((k * c_in + c) * 3 + di) * 3 + dj;
                                        let xi = base + (c * h + i + di) * w_ + j + dj;
                                        dw[wi] += go * xd[xi];
                                        dx[xi] += go * w[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            (
                Tensor::from_parts(x.shape().to_vec(), dx),
                vec![
                    Tensor::from_parts(vec![c_out, c_in, 3, 3], dw),
                    Tensor::from_parts(vec![c_out], db),
                ],
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::profile::LayerSpec;

    fn dense_profile(inputs: usize, outputs: usize) -> ModelProfile {
        ModelProfile::from_kinds(&[inputs], &[LayerKind::Dense { inputs, outputs }, LayerKind::Relu]).unwrap()
    }

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_dense_is_identity() {
        let p = dense_profile(2, 2);
        let mut seg = SegmentState::init(&p, 0, 1, 1).unwrap();
        seg.params[0] = vec![t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), t(&[2], &[0.0, 0.0])];
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (y, _) = seg.forward(&x).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn relu_forward_and_backward() {
        let p = dense_profile(3, 3);
        let seg = SegmentState::init(&p, 1, 2, 1).unwrap();
        let (y, cache) = seg.forward(&t(&[1, 3], &[-1.0, 0.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let (gin, _) = seg.backward(&cache, &t(&[1, 3], &[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(gin.data(), &[0.0, 0.0, 5.0]);

        let p2 = dense_profile(2, 2);
        let seg2 = SegmentState::init(&p2, 1, 2, 1).unwrap();
        let (_, c2) = seg2.forward(&t(&[1, 2], &[-1.0, 2.0])).unwrap();
        let (g2, _) = seg2.backward(&c2, &t(&[1, 2], &[5.0, 5.0])).unwrap();
        assert_eq!(g2.data(), &[0.0, 5.0]);
    }

    #[test]
    fn dense_param_grad_is_outer_product() {
        let p = dense_profile(3, 2);
        let seg = SegmentState::init(&p, 0, 1, 9).unwrap();
        let x = t(&[1, 3], &[0.5, -1.0, 2.0]);
        let (_, cache) = seg.forward(&x).unwrap();
        let (_, pg) = seg.backward(&cache, &t(&[1, 2], &[1.0, 0.0])).unwrap();
        assert_eq!(pg.grads[0][0].data(), &[0.5, -1.0, 2.0, 0.0, 0.0, 0.0]);
        assert_eq!(pg.grads[0][1].data(), &[1.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let p = ModelProfile::mlp(3, &[4], 2).unwrap();
        let seg = SegmentState::init(&p, 2, 3, 0).unwrap();
        let err = seg.forward(&t(&[1, 3], &[1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, Error::Shape { layer: 2, .. }), "{err}");
    }

    #[test]
    fn stale_cache_rejected() {
        let p = ModelProfile::mlp(2, &[3], 2).unwrap();
        let mut seg = SegmentState::init(&p, 0, 3, 4).unwrap();
        let x = t(&[1, 2], &[0.3, -0.2]);
        let (y, cache) = seg.forward(&x).unwrap();
        let (_, pg) = seg.backward(&cache, &y).unwrap();
        seg.sgd_step(&pg, 0.1).unwrap();
        assert!(matches!(seg.backward(&cache, &y), Err(Error::StaleCache(_))));
        let other = SegmentState::init(&p, 1, 3, 4).unwrap();
        assert!(matches!(other.backward(&cache, &y), Err(Error::StaleCache(_))));
        let (_, fresh) = seg.forward(&x).unwrap();
        assert!(matches!(seg.backward(&fresh, &t(&[2, 2], &[0.0; 4])), Err(Error::Shape { .. })));
    }

    #[test]
    fn sgd_arithmetic_and_fixed_point() {
        let p = dense_profile(1, 1);
        let mut seg = SegmentState::init(&p, 0, 1, 0).unwrap();
        seg.params[0] = vec![t(&[1, 1], &[1.0]), t(&[1], &[0.0])];
        let pg = ParamGrads {
            start: 0,
            grads: vec![vec![t(&[1, 1], &[0.5]), t(&[1], &[0.0])]],
        };
        seg.sgd_step(&pg, 0.1).unwrap();
        assert!((seg.params[0][0].data()[0] - 0.95).abs() < 1e-15);
        let before = seg.clone();
        let zero = ParamGrads {
            start: 0,
            grads: vec![vec![Tensor::zeros(vec![1, 1]), Tensor::zeros(vec![1])]],
        };
        seg.sgd_step(&zero, 0.1).unwrap();
        assert!(seg.params_bit_eq(&before));
        assert!(seg.sgd_step(&zero, 0.0).is_err());
    }

    #[test]
    fn split_then_concat_roundtrips() {
        let p = ModelProfile::mlp(3, &[4, 4], 2).unwrap();
        let full = SegmentState::init(&p, 0, p.len(), 11).unwrap();
        let (a, b) = full.split_at(2).unwrap();
        let direct = SegmentState::init(&p, 2, p.len(), 11).unwrap();
        assert!(b.params_bit_eq(&direct));
        let joined = SegmentState::concat(&[&a, &b]).unwrap();
        assert!(joined.params_bit_eq(&full));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let spec = LayerSpec::infer(LayerKind::Dense { inputs: 16, outputs: 8 }, &[16]).unwrap();
        let ps = init_layer(&spec, 3, 0);
        assert!(ps.iter().all(|p| p.max_abs() <= 0.25));
    }
}
