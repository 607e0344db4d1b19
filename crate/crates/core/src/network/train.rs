use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{LayerKind, Network, ParamGrads};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// Mini-batch SGD with classical momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.01, momentum: 0.9, epochs: 6, batch_size: 16, rng_seed: 7 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return invalid(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's mini-batches.
    pub loss: f64,
    pub accuracy: f64,
}

fn sample_grads<T: Scalar>(net: &Network<T>, x: &Tensor<T>, label: usize) -> Result<(ParamGrads, f64, bool)> {
    let n = net.layers().len();
    let trace = net.forward(x)?;
    let probs = trace.last().to_f64_vec();
    let loss = -probs[label].max(1e-12).ln();
    let predicted = probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
        .0;
    // Cross-entropy through softmax: d/dz = p - onehot.
    let mut dz = probs;
    dz[label] -= 1.0;
    let mut grads = net.zero_grads();
    let logits_dims = net.layers()[n - 2].out_dims().to_vec();
    net.backward(x, &trace, n - 2, Tensor::from_f64(&logits_dims, dz), Some(&mut grads))?;
    Ok((grads, loss, predicted == label))
}

/// Trains a copy of `net` on `(images, labels)`; the input network is not
/// modified. Shuffling is drawn from `cfg.rng_seed`, and per-sample gradients
/// are summed in batch order, so results do not depend on thread count.
pub fn train<T: Scalar>(
    net: &Network<T>,
    images: &[Tensor<T>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(Network<T>, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if images.is_empty() {
        return invalid("training set is empty");
    }
    if images.len() != labels.len() {
        return invalid(format!("{} images but {} labels", images.len(), labels.len()));
    }
    let n = net.layers().len();
    if n < 2 || net.layers()[n - 1].spec.kind != LayerKind::Softmax {
        return invalid("training needs a network ending in a softmax layer");
    }
    let classes = net.num_outputs();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return invalid(format!("label {bad} outside {classes} classes"));
    }
    for x in images {
        net.check_input(x)?;
    }

    let mut net = net.clone();
    let mut velocity = net.zero_grads();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut rng = crate::rng::seeded(cfg.rng_seed);
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let per_sample: Vec<(ParamGrads, f64, bool)> = batch
                .par_iter()
                .map(|&i| sample_grads(&net, &images[i], labels[i]))
                .collect::<Result<_>>()?;
            let mut total = net.zero_grads();
            for (g, loss, ok) in &per_sample {
                total.add_assign(g);
                loss_sum += loss;
                correct += *ok as usize;
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for (layer, (v, g)) in net.layers_mut().iter_mut().zip(velocity.layers.iter_mut().zip(&total.layers)) {
                let (Some((vw, vb)), Some((gw, gb))) = (v, g) else { continue };
                let w = layer.weights.as_mut().expect("trainable layer");
                for ((p, vel), grad) in w.data_mut().iter_mut().zip(vw.iter_mut()).zip(gw) {
                    *vel = cfg.momentum * *vel - scale * grad;
                    *p = T::lit(p.as_f64() + *vel);
                }
                let b = layer.bias.as_mut().expect("trainable layer");
                for ((p, vel), grad) in b.data_mut().iter_mut().zip(vb.iter_mut()).zip(gb) {
                    *vel = cfg.momentum * *vel - scale * grad;
                    *p = T::lit(p.as_f64() + *vel);
                }
            }
        }
        metrics.push(EpochMetrics {
            epoch,
            loss: loss_sum / images.len() as f64,
            accuracy: correct as f64 / images.len() as f64,
        });
    }
    Ok((net, metrics))
}

/// Fraction of `images` whose arg-max output equals the label.
pub fn accuracy<T: Scalar>(net: &Network<T>, images: &[Tensor<T>], labels: &[usize]) -> Result<f64> {
    let hits: Vec<bool> = images
        .par_iter()
        .zip(labels)
        .map(|(x, &l)| {
            let out = net.forward(x)?;
            let best = out
                .last()
                .data()
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, v)| if v.as_f64() > b.1 { (i, v.as_f64()) } else { b })
                .0;
            Ok(best == l)
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / images.len().max(1) as f64)
}
