//! The micro-CNN: layer specifications, forward traces, and exact gradients
//! of any unit with respect to the input pixels.

mod train;
mod weights;

pub use train::{accuracy, train, EpochMetrics, TrainConfig};
pub use weights::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use std::collections::HashSet;

use rand_distr::{Distribution, Normal};

use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{
    conv2d, conv2d_grads, conv_output_extent, max_pool2d, max_pool2d_backward, Shape, Tensor,
};
use crate::Scalar;

/// Name of the penultimate dense layer whose activations serve as image codes.
pub const CODE_LAYER: &str = "fc_code";
/// Name of the class-score layer (pre-softmax logits).
pub const CLASS_LAYER: &str = "fc_class";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Conv { kernel: usize, filters: usize, stride: usize, pad: usize },
    Relu,
    MaxPool { size: usize },
    Dense { units: usize },
    Softmax,
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Softmax => "softmax",
        }
    }

}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec { name: name.into(), kind }
    }
}

/// The desk-scale default stack for `classes` output units.
pub fn default_architecture(classes: usize) -> Vec<LayerSpec> {
    use LayerKind::*;
    vec![
        LayerSpec::new("conv1", Conv { kernel: 5, filters: 16, stride: 1, pad: 2 }),
        LayerSpec::new("relu1", Relu),
        LayerSpec::new("pool1", MaxPool { size: 2 }),
        LayerSpec::new("conv2", Conv { kernel: 5, filters: 32, stride: 1, pad: 2 }),
        LayerSpec::new("relu2", Relu),
        LayerSpec::new("pool2", MaxPool { size: 2 }),
        LayerSpec::new(CODE_LAYER, Dense { units: 64 }),
        LayerSpec::new("relu3", Relu),
        LayerSpec::new(CLASS_LAYER, Dense { units: classes }),
        LayerSpec::new("prob", Softmax),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    /// Conv: (kernel, kernel, in, filters). Dense: (units, fan_in).
    pub weights: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
    out_dims: Vec<usize>,
}

impl<T: Scalar> Layer<T> {
    pub fn out_dims(&self) -> &[usize] {
        &self.out_dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    input_shape: Shape,
    layers: Vec<Layer<T>>,
}

/// Identifies one unit: a channel (optionally at one spatial location) of a
/// spatial layer, or an element of a flat layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UnitSelector {
    pub layer: String,
    pub unit: usize,
    pub location: Option<(usize, usize)>,
}

impl UnitSelector {
    pub fn new(layer: impl Into<String>, unit: usize) -> Self {
        UnitSelector { layer: layer.into(), unit, location: None }
    }

    pub fn at(layer: impl Into<String>, unit: usize, row: usize, col: usize) -> Self {
        UnitSelector { layer: layer.into(), unit, location: Some((row, col)) }
    }
}

/// Every layer's output for one forward pass, in layer order.
#[derive(Debug, Clone)]
pub struct ActivationTrace<T> {
    pub outputs: Vec<Tensor<T>>,
}

impl<T: Scalar> ActivationTrace<T> {
    pub fn last(&self) -> &Tensor<T> {
        self.outputs.last().expect("networks have at least one layer")
    }
}

/// Parameter gradients per layer, accumulated in `f64`: (weights, bias).
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl ParamGrads {
    fn zeros_like<T: Scalar>(net: &Network<T>) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| match (&l.weights, &l.bias) {
                (Some(w), Some(b)) => Some((vec![0.0; w.len()], vec![0.0; b.len()])),
                _ => None,
            })
            .collect();
        ParamGrads { layers }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some((aw, ab)), Some((bw, bb))) = (a, b) {
                aw.iter_mut().zip(bw).for_each(|(x, y)| *x += y);
                ab.iter_mut().zip(bb).for_each(|(x, y)| *x += y);
            }
        }
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl<T: Scalar> Network<T> {
    /// Builds a network with all parameters zero, shape-checking the chain.
    pub fn new(input_dims: &[usize], specs: Vec<LayerSpec>) -> Result<Self> {
        let input_shape = Shape::new(input_dims)?;
        if specs.is_empty() {
            return invalid("a network needs at least one layer");
        }
        let mut seen = HashSet::new();
        let mut dims = input_dims.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            if !seen.insert(spec.name.clone()) {
                return invalid(format!("duplicate layer name '{}'", spec.name));
            }
            let (out_dims, w_dims, b_len) = match spec.kind {
                LayerKind::Conv { kernel, filters, stride, pad } => {
                    let [h, w, c] = dims[..] else {
                        return shape_err(format!("conv layer '{}' needs a rank-3 input", spec.name));
                    };
                    if kernel == 0 || filters == 0 {
                        return invalid(format!("conv layer '{}' has a zero kernel or filter count", spec.name));
                    }
                    let oh = conv_output_extent(h, kernel, stride, pad)?;
                    let ow = conv_output_extent(w, kernel, stride, pad)?;
                    (vec![oh, ow, filters], Some(vec![kernel, kernel, c, filters]), filters)
                }
                LayerKind::MaxPool { size } => {
                    let [h, w, c] = dims[..] else {
                        return shape_err(format!("maxpool layer '{}' needs a rank-3 input", spec.name));
                    };
                    if size == 0 {
                        return invalid(format!("maxpool layer '{}' has size 0", spec.name));
                    }
                    let oh = conv_output_extent(h, size, size, 0)?;
                    let ow = conv_output_extent(w, size, size, 0)?;
                    (vec![oh, ow, c], None, 0)
                }
                LayerKind::Dense { units } => {
                    if units == 0 {
                        return invalid(format!("dense layer '{}' has zero units", spec.name));
                    }
                    let fan_in: usize = dims.iter().product();
                    (vec![units], Some(vec![units, fan_in]), units)
                }
                LayerKind::Relu | LayerKind::Softmax => (dims.clone(), None, 0),
            };
            let weights = w_dims.map(|d| Tensor::zeros(&d));
            let bias = weights.as_ref().map(|_| Tensor::zeros(&[b_len]));
            dims = out_dims.clone();
            layers.push(Layer { spec, weights, bias, out_dims });
        }
        Ok(Network { input_shape, layers })
    }

    /// He-normal weights and zero biases drawn from `seed`.
    pub fn init_random(&mut self, seed: u64) {
        let mut rng = crate::rng::seeded(seed);
        for layer in &mut self.layers {
            if let Some(w) = &mut layer.weights {
                let fan_in = match layer.spec.kind {
                    LayerKind::Conv { kernel, .. } => kernel * kernel * w.dims()[2],
                    _ => w.dims()[1],
                };
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                for v in w.data_mut() {
                    *v = T::lit(normal.sample(&mut rng));
                }
            }
        }
    }

    pub fn input_dims(&self) -> &[usize] {
        self.input_shape.dims()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.spec.name == name)
            .ok_or_else(|| Error::Invalid(format!("no layer named '{name}'")))
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    /// Number of units in the final layer.
    pub fn num_outputs(&self) -> usize {
        self.layers.last().map(|l| l.out_dims.iter().product()).unwrap_or(0)
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.dims() != self.input_dims() {
            return shape_err(format!(
                "input shape {} does not match network input {}",
                x.shape(),
                self.input_shape
            ));
        }
        Ok(())
    }

    fn layer_forward(&self, i: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        let layer = &self.layers[i];
        match layer.spec.kind {
            LayerKind::Conv { stride, pad, .. } => {
                let w = layer.weights.as_ref().expect("conv weights");
                let b = layer.bias.as_ref().expect("conv bias");
                let mut y = conv2d(x, w, stride, pad)?;
                let f = b.len();
                for (k, v) in y.data_mut().iter_mut().enumerate() {
                    *v = T::lit(v.as_f64() + b.data()[k % f].as_f64());
                }
                Ok(y)
            }
            LayerKind::Relu => Ok(x.map(|v| if v > T::zero() { v } else { T::zero() })),
            LayerKind::MaxPool { size } => max_pool2d(x, size),
            LayerKind::Dense { units } => {
                let w = layer.weights.as_ref().expect("dense weights");
                let b = layer.bias.as_ref().expect("dense bias");
                let xin = x.to_f64_vec();
                let fan_in = xin.len();
                let wd = w.data();
                let out = (0..units)
                    .map(|j| {
                        let row = &wd[j * fan_in..(j + 1) * fan_in];
                        let s: f64 = row.iter().zip(&xin).map(|(a, b)| a.as_f64() * b).sum();
                        s + b.data()[j].as_f64()
                    })
                    .collect();
                Ok(Tensor::from_f64(&[units], out))
            }
            LayerKind::Softmax => Ok(Tensor::from_f64(x.dims(), softmax(&x.to_f64_vec()))),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<ActivationTrace<T>> {
        self.check_input(x)?;
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len());
        for i in 0..self.layers.len() {
            let y = self.layer_forward(i, outputs.last().unwrap_or(x))?;
            outputs.push(y);
        }
        Ok(ActivationTrace { outputs })
    }

    /// Forward pass stopping after layer `last` (inclusive).
    pub fn forward_to(&self, x: &Tensor<T>, last: usize) -> Result<ActivationTrace<T>> {
        self.check_input(x)?;
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(last + 1);
        for i in 0..=last.min(self.layers.len() - 1) {
            let y = self.layer_forward(i, outputs.last().unwrap_or(x))?;
            outputs.push(y);
        }
        Ok(ActivationTrace { outputs })
    }

    /// Validates `sel` and returns its layer index.
    pub fn check_selector(&self, sel: &UnitSelector) -> Result<usize> {
        let idx = self.layer_index(&sel.layer)?;
        let dims = &self.layers[idx].out_dims;
        match (dims.as_slice(), sel.location) {
            ([h, w, c], loc) => {
                if sel.unit >= *c {
                    return invalid(format!("unit {} out of range for '{}' with {c} channels", sel.unit, sel.layer));
                }
                if let Some((r, col)) = loc {
                    if r >= *h || col >= *w {
                        return invalid(format!(
                            "location ({r},{col}) outside '{}' extent {h}x{w}",
                            sel.layer
                        ));
                    }
                }
            }
            (_, Some(_)) => {
                return invalid(format!("location given for non-spatial layer '{}'", sel.layer));
            }
            (d, None) => {
                let n: usize = d.iter().product();
                if sel.unit >= n {
                    return invalid(format!("unit {} out of range for '{}' with {n} units", sel.unit, sel.layer));
                }
            }
        }
        Ok(idx)
    }

    fn read_unit(&self, idx: usize, out: &Tensor<T>, sel: &UnitSelector) -> f64 {
        match (self.layers[idx].out_dims.as_slice(), sel.location) {
            ([_, _, _], Some((r, c))) => out.at(r, c, sel.unit).as_f64(),
            ([h, w, c], None) => {
                let s: f64 = (0..h * w).map(|p| out.data()[p * c + sel.unit].as_f64()).sum();
                s / (h * w) as f64
            }
            _ => out.data()[sel.unit].as_f64(),
        }
    }

    // d(unit)/d(layer output): one-hot, or uniform weights over the channel.
    fn unit_seed_grad(&self, idx: usize, sel: &UnitSelector) -> Tensor<T> {
        let dims = &self.layers[idx].out_dims;
        let mut g = Tensor::zeros(dims);
        match (dims.as_slice(), sel.location) {
            ([_, _, _], Some((r, c))) => g.set(r, c, sel.unit, T::one()),
            ([h, w, c], None) => {
                let v = T::lit(1.0 / (h * w) as f64);
                for p in 0..h * w {
                    g.data_mut()[p * c + sel.unit] = v;
                }
            }
            _ => g.data_mut()[sel.unit] = T::one(),
        }
        g
    }

    /// Scalar value of the selected unit. Spatial selectors without a
    /// location read the channel's spatial mean.
    pub fn unit_activation(&self, x: &Tensor<T>, sel: &UnitSelector) -> Result<f64> {
        let idx = self.check_selector(sel)?;
        let trace = self.forward_to(x, idx)?;
        Ok(self.read_unit(idx, trace.last(), sel))
    }

    /// Exact gradient of [`Network::unit_activation`] with respect to `x`.
    pub fn input_gradient(&self, x: &Tensor<T>, sel: &UnitSelector) -> Result<Tensor<T>> {
        Ok(self.activation_and_gradient(x, sel)?.1)
    }

    pub fn activation_and_gradient(&self, x: &Tensor<T>, sel: &UnitSelector) -> Result<(f64, Tensor<T>)> {
        let idx = self.check_selector(sel)?;
        let trace = self.forward_to(x, idx)?;
        let value = self.read_unit(idx, trace.last(), sel);
        let seed = self.unit_seed_grad(idx, sel);
        let g = self.backward(x, &trace, idx, seed, None)?;
        Ok((value, g))
    }

    /// Activation vector of a layer: the whole (flattened) output, or for a
    /// spatial layer with a location, the cross-channel column there.
    pub fn layer_code(&self, x: &Tensor<T>, layer: &str, location: Option<(usize, usize)>) -> Result<Vec<T>> {
        let idx = self.layer_index(layer)?;
        let dims = self.layers[idx].out_dims.clone();
        if location.is_some() && dims.len() != 3 {
            return invalid(format!("location given for non-spatial layer '{layer}'"));
        }
        let trace = self.forward_to(x, idx)?;
        let out = trace.last();
        match location {
            Some((r, c)) => {
                let (h, w, ch) = (dims[0], dims[1], dims[2]);
                if r >= h || c >= w {
                    return invalid(format!("location ({r},{c}) outside '{layer}' extent {h}x{w}"));
                }
                Ok(out.data()[(r * w + c) * ch..(r * w + c + 1) * ch].to_vec())
            }
            None => Ok(out.data().to_vec()),
        }
    }

    /// Back-propagates `upstream` (gradient w.r.t. the output of layer `from`)
    /// down to the input. Parameter gradients are added to `params` if given.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        trace: &ActivationTrace<T>,
        from: usize,
        upstream: Tensor<T>,
        mut params: Option<&mut ParamGrads>,
    ) -> Result<Tensor<T>> {
        if upstream.dims() != self.layers[from].out_dims.as_slice() {
            return shape_err(format!(
                "upstream gradient shape {} does not match layer '{}'",
                upstream.shape(),
                self.layers[from].spec.name
            ));
        }
        let mut g = upstream;
        for i in (0..=from).rev() {
            let input = if i == 0 { x } else { &trace.outputs[i - 1] };
            let layer = &self.layers[i];
            g = match layer.spec.kind {
                LayerKind::Conv { stride, pad, .. } => {
                    let w = layer.weights.as_ref().expect("conv weights");
                    let (gx, gw) = conv2d_grads(input, w, stride, pad, &g)?;
                    if let Some(p) = params.as_deref_mut() {
                        let (pw, pb) = p.layers[i].as_mut().expect("conv grads");
                        pw.iter_mut().zip(gw.data()).for_each(|(a, b)| *a += b.as_f64());
                        let f = pb.len();
                        for (k, v) in g.data().iter().enumerate() {
                            pb[k % f] += v.as_f64();
                        }
                    }
                    gx
                }
                LayerKind::Relu => input.zip_map(&g, |a, gv| if a > T::zero() { gv } else { T::zero() })?,
                LayerKind::MaxPool { size } => max_pool2d_backward(input, size, &g)?,
                LayerKind::Dense { units } => {
                    let w = layer.weights.as_ref().expect("dense weights");
                    let xin = input.to_f64_vec();
                    let fan_in = xin.len();
                    let gv = g.to_f64_vec();
                    let mut gx = vec![0.0; fan_in];
                    for j in 0..units {
                        if gv[j] == 0.0 {
                            continue;
                        }
                        let row = &w.data()[j * fan_in..(j + 1) * fan_in];
                        for (a, wv) in gx.iter_mut().zip(row) {
                            *a += gv[j] * wv.as_f64();
                        }
                    }
                    if let Some(p) = params.as_deref_mut() {
                        let (pw, pb) = p.layers[i].as_mut().expect("dense grads");
                        for j in 0..units {
                            if gv[j] == 0.0 {
                                continue;
                            }
                            let row = &mut pw[j * fan_in..(j + 1) * fan_in];
                            for (a, xv) in row.iter_mut().zip(&xin) {
                                *a += gv[j] * xv;
                            }
                            pb[j] += gv[j];
                        }
                    }
                    Tensor::from_f64(input.dims(), gx)
                }
                LayerKind::Softmax => {
                    let y = trace.outputs[i].to_f64_vec();
                    let gv = g.to_f64_vec();
                    let dot: f64 = y.iter().zip(&gv).map(|(a, b)| a * b).sum();
                    let gz = y.iter().zip(&gv).map(|(yi, gi)| yi * (gi - dot)).collect();
                    Tensor::from_f64(input.dims(), gz)
                }
            };
        }
        Ok(g)
    }

    pub(crate) fn zero_grads(&self) -> ParamGrads {
        ParamGrads::zeros_like(self)
    }

    /// Input-space window `(top, left, height, width)` that influences the
    /// unit at `(row, col)` of a spatial layer, clipped to the input.
    pub fn receptive_field(&self, layer: &str, row: usize, col: usize) -> Result<(usize, usize, usize, usize)> {
        let idx = self.layer_index(layer)?;
        if self.layers[idx].out_dims.len() != 3 {
            return invalid(format!("layer '{layer}' is not spatial"));
        }
        let (mut r0, mut r1, mut c0, mut c1) = (row as isize, row as isize, col as isize, col as isize);
        for layer in self.layers[..=idx].iter().rev() {
            match layer.spec.kind {
                LayerKind::Conv { kernel, stride, pad, .. } => {
                    let (s, p, k) = (stride as isize, pad as isize, kernel as isize);
                    r0 = r0 * s - p;
                    r1 = r1 * s - p + k - 1;
                    c0 = c0 * s - p;
                    c1 = c1 * s - p + k - 1;
                }
                LayerKind::MaxPool { size } => {
                    let s = size as isize;
                    r0 *= s;
                    r1 = r1 * s + s - 1;
                    c0 *= s;
                    c1 = c1 * s + s - 1;
                }
                LayerKind::Relu => {}
                _ => return invalid(format!("layer '{}' breaks the spatial chain", layer.spec.name)),
            }
        }
        let (h, w) = (self.input_dims()[0] as isize, self.input_dims()[1] as isize);
        let (r0, r1) = (r0.max(0), r1.min(h - 1));
        let (c0, c1) = (c0.max(0), c1.min(w - 1));
        Ok((r0 as usize, c0 as usize, (r1 - r0 + 1) as usize, (c1 - c0 + 1) as usize))
    }

    /// Location of the largest value of channel `unit` in a spatial layer.
    pub fn argmax_location(&self, x: &Tensor<T>, layer: &str, unit: usize) -> Result<(usize, usize)> {
        let idx = self.layer_index(layer)?;
        let [h, w, c] = self.layers[idx].out_dims[..] else {
            return invalid(format!("layer '{layer}' is not spatial"));
        };
        if unit >= c {
            return invalid(format!("unit {unit} out of range for '{layer}'"));
        }
        let trace = self.forward_to(x, idx)?;
        let out = trace.last();
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for r in 0..h {
            for col in 0..w {
                let v = out.at(r, col, unit).as_f64();
                if v > best_v {
                    best_v = v;
                    best = (r, col);
                }
            }
        }
        Ok(best)
    }
}
