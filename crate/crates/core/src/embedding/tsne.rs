use rand_distr::{Distribution, Normal};

use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub rng_seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 4.0,
            exaggeration_iters: 50,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            rng_seed: 0,
        }
    }
}

/// 2-D map of a point set; row `i` belongs to `source_ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    pub source_ids: Vec<usize>,
}

impl Embedding2D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Row-major `N × N` squared Euclidean distances between the rows of `x`.
pub fn pairwise_sq_dists<T: Scalar>(x: &Tensor<T>) -> Result<Vec<f64>> {
    let [n, d] = *x.dims() else {
        return shape_err(format!("points must be an N x d matrix, got {}", x.shape()));
    };
    let v = x.to_f64_vec();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = (0..d).map(|k| (v[i * d + k] - v[j * d + k]).powi(2)).sum();
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    Ok(out)
}

fn row_distribution(dists: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    // Shift by the nearest neighbour distance for numerical range; the
    // normalized row is unchanged.
    let dmin = dists
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = dists
        .iter()
        .enumerate()
        .map(|(j, &d)| if j == i { 0.0 } else { (-(d - dmin) * beta).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    // Shannon entropy in nats.
    let h = -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>();
    (p, h)
}

/// Perplexity `exp(H)` of a probability row (entropy in nats).
pub fn perplexity_of(row: &[f64]) -> f64 {
    (-row.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()).exp()
}

/// Conditional `p_{j|i}` rows whose Gaussian bandwidths are found by
/// bisection on the precision so each row's perplexity matches the target.
pub fn conditional_probabilities(sq_dists: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let dists = &sq_dists[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let (mut p, mut h) = row_distribution(dists, i, beta);
        for _ in 0..200 {
            if (h - target).abs() < 1e-10 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            (p, h) = row_distribution(dists, i, beta);
        }
        out[i * n..(i + 1) * n].copy_from_slice(&p);
    }
    out
}

/// Symmetrized joint probabilities `(P + Pᵀ) / 2N`, floored at 1e-12 off the
/// diagonal.
pub fn joint_probabilities(cond: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }
    p
}

fn student_t(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
            let v = 1.0 / (1.0 + d);
            num[i * n + j] = v;
            num[j * n + i] = v;
            total += 2.0 * v;
        }
    }
    (num, total)
}

/// `KL(P || Q)` for the embedding `y`.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let (num, total) = student_t(y);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && p[i * n + j] > 0.0 {
                let q = (num[i * n + j] / total).max(1e-300);
                kl += p[i * n + j] * (p[i * n + j] / q).ln();
            }
        }
    }
    kl
}

/// `∂KL/∂y_i = 4 Σ_j (p_ij − q_ij)(1 + ‖y_i − y_j‖²)⁻¹ (y_i − y_j)`.
pub fn kl_gradient(p: &[f64], y: &[[f64; 2]]) -> Vec<[f64; 2]> {
    gradient_scaled(p, 1.0, y)
}

fn gradient_scaled(p: &[f64], exaggeration: f64, y: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = y.len();
    let (num, total) = student_t(y);
    let mut grad = vec![[0.0; 2]; n];
    for i in 0..n {
        let (mut gx, mut gy) = (0.0, 0.0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let w = num[i * n + j];
            let m = (exaggeration * p[i * n + j] - w / total) * w;
            gx += m * (y[i][0] - y[j][0]);
            gy += m * (y[i][1] - y[j][1]);
        }
        grad[i] = [4.0 * gx, 4.0 * gy];
    }
    grad
}

/// Exact (O(N²)) t-SNE of the rows of `points` into two dimensions.
pub fn tsne<T: Scalar>(points: &Tensor<T>, source_ids: &[usize], cfg: &TsneConfig) -> Result<Embedding2D> {
    let [n, _] = *points.dims() else {
        return shape_err(format!("points must be an N x d matrix, got {}", points.shape()));
    };
    if n < 5 {
        return invalid(format!("t-SNE needs at least 5 points, got {n}"));
    }
    if source_ids.len() != n {
        return invalid(format!("{} source ids for {n} points", source_ids.len()));
    }
    if !(cfg.perplexity > 1.0 && cfg.perplexity < (n - 1) as f64 / 3.0) {
        return invalid(format!(
            "perplexity {} must lie in (1, {:.3}) for {n} points",
            cfg.perplexity,
            (n - 1) as f64 / 3.0
        ));
    }
    let dists = pairwise_sq_dists(points)?;
    if dists.iter().all(|&d| d == 0.0) {
        return invalid("all points are identical; t-SNE is undefined");
    }
    let p = joint_probabilities(&conditional_probabilities(&dists, n, cfg.perplexity), n);

    let mut rng = crate::rng::seeded(cfg.rng_seed);
    let normal = Normal::new(0.0, 1e-4).expect("finite std");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    for it in 0..cfg.iterations {
        let exaggeration = if it < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if it < cfg.momentum_switch_iter { cfg.initial_momentum } else { cfg.final_momentum };
        let grad = gradient_scaled(&p, exaggeration, &y);
        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                gains[i][d] = if (g > 0.0) != (velocity[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(0.01)
                };
                velocity[i][d] = momentum * velocity[i][d] - cfg.learning_rate * gains[i][d] * g;
                y[i][d] += velocity[i][d];
            }
        }
        let cx = y.iter().map(|v| v[0]).sum::<f64>() / n as f64;
        let cy = y.iter().map(|v| v[1]).sum::<f64>() / n as f64;
        y.iter_mut().for_each(|v| {
            v[0] -= cx;
            v[1] -= cy;
        });
    }
    if y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
        return invalid("t-SNE diverged to non-finite coordinates");
    }
    Ok(Embedding2D { points: y, source_ids: source_ids.to_vec() })
}
