//! Image priors for activation maximization: total variation (as a norm and
//! as a split-Bregman proximal step), the α-norm penalty, decaying Gaussian
//! blur, and jittered window sampling.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// Random placement of a network-input-sized window on a larger canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct JitterConfig {
    pub canvas_h: usize,
    pub canvas_w: usize,
    pub window_h: usize,
    pub window_w: usize,
    /// Half-extent (pixels) of the canvas-centred square that window centres
    /// must fall in. `None` lets windows go anywhere on the canvas.
    pub center_box: Option<usize>,
}

impl JitterConfig {
    pub fn new(canvas: (usize, usize), window: (usize, usize)) -> Self {
        JitterConfig { canvas_h: canvas.0, canvas_w: canvas.1, window_h: window.0, window_w: window.1, center_box: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_h == 0 || self.window_w == 0 {
            return invalid("jitter window must be at least 1x1");
        }
        if self.window_h > self.canvas_h || self.window_w > self.canvas_w {
            return invalid(format!(
                "jitter window {}x{} does not fit canvas {}x{}",
                self.window_h, self.window_w, self.canvas_h, self.canvas_w
            ));
        }
        Ok(())
    }

    fn axis_range(&self, canvas: usize, window: usize) -> (usize, usize) {
        let slack = canvas - window;
        match self.center_box {
            None => (0, slack),
            Some(b) => {
                let centred = slack / 2;
                (centred.saturating_sub(b), (centred + b).min(slack))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerConfig {
    /// Fidelity weight of the TV proximal step; larger keeps the image closer
    /// to its pre-smoothing value. `0` disables the TV step.
    pub tv_lambda: f64,
    pub tv_inner_iters: usize,
    pub blur_sigma_start: f64,
    pub blur_sigma_end: f64,
    /// Blur every this many iterations; `0` disables blurring.
    pub blur_every: usize,
    pub alpha: f64,
    pub alpha_weight: f64,
    pub jitter: Option<JitterConfig>,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig::none()
    }
}

impl RegularizerConfig {
    /// Every prior switched off.
    pub fn none() -> Self {
        RegularizerConfig {
            tv_lambda: 0.0,
            tv_inner_iters: 100,
            blur_sigma_start: 0.0,
            blur_sigma_end: 0.0,
            blur_every: 0,
            alpha: 6.0,
            alpha_weight: 0.0,
            jitter: None,
        }
    }

    pub fn tv_enabled(&self) -> bool {
        self.tv_lambda > 0.0
    }

    pub fn blur_enabled(&self) -> bool {
        self.blur_every > 0 && self.blur_sigma_start > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.tv_lambda >= 0.0) || !self.tv_lambda.is_finite() {
            problems.push(format!("tv_lambda must be finite and >= 0, got {}", self.tv_lambda));
        }
        if self.tv_enabled() && self.tv_inner_iters == 0 {
            problems.push("tv_inner_iters must be >= 1 when TV is enabled".to_string());
        }
        if self.blur_sigma_start < 0.0 || self.blur_sigma_end < 0.0 {
            problems.push("blur sigmas must be >= 0".to_string());
        }
        if self.blur_sigma_end > self.blur_sigma_start {
            problems.push(format!(
                "blur_sigma_end {} exceeds blur_sigma_start {}",
                self.blur_sigma_end, self.blur_sigma_start
            ));
        }
        if !(self.alpha >= 1.0) {
            problems.push(format!("alpha must be >= 1, got {}", self.alpha));
        }
        if !(self.alpha_weight >= 0.0) {
            problems.push(format!("alpha_weight must be >= 0, got {}", self.alpha_weight));
        }
        if let Some(j) = &self.jitter {
            if let Err(e) = j.validate() {
                problems.push(e.to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            invalid(problems.join("; "))
        }
    }
}

// Forward differences with a replicate boundary: the last row/column has zero
// difference.
fn forward_diffs(u: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; h * w];
    let mut dy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                dx[p] = u[p + 1] - u[p];
            }
            if y + 1 < h {
                dy[p] = u[p + w] - u[p];
            }
        }
    }
    (dx, dy)
}

fn channel_plane<T: Scalar>(img: &Tensor<T>, ch: usize) -> Vec<f64> {
    let c = img.channels();
    img.data().iter().skip(ch).step_by(c).map(|v| v.as_f64()).collect()
}

/// Isotropic total variation summed over channels.
pub fn tv_norm<T: Scalar>(img: &Tensor<T>) -> f64 {
    let (h, w, c) = img.image_dims().expect("tv_norm needs a rank-3 image");
    (0..c)
        .map(|ch| {
            let u = channel_plane(img, ch);
            let (dx, dy) = forward_diffs(&u, h, w);
            dx.iter().zip(&dy).map(|(a, b)| (a * a + b * b).sqrt()).sum::<f64>()
        })
        .sum()
}

/// `TV(u) + (λ/2)·‖u − f‖²`, the objective minimized by [`tv_denoise`].
pub fn tv_objective<T: Scalar>(u: &Tensor<T>, f: &Tensor<T>, lambda: f64) -> f64 {
    let sq: f64 = u.data().iter().zip(f.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
    tv_norm(u) + 0.5 * lambda * sq
}

fn split_bregman_plane(f: &[f64], h: usize, w: usize, lambda: f64, iters: usize) -> Vec<f64> {
    let mu = 2.0 * lambda;
    let n = h * w;
    let mut u = f.to_vec();
    let (mut dx, mut dy) = (vec![0.0; n], vec![0.0; n]);
    let (mut bx, mut by) = (vec![0.0; n], vec![0.0; n]);
    let mut rhs = vec![0.0; n];
    for _ in 0..iters {
        // rhs = λ f + μ Dᵀ(d − b)
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let mut div = 0.0;
                if x + 1 < w {
                    div -= dx[p] - bx[p];
                }
                if x > 0 {
                    div += dx[p - 1] - bx[p - 1];
                }
                if y + 1 < h {
                    div -= dy[p] - by[p];
                }
                if y > 0 {
                    div += dy[p - w] - by[p - w];
                }
                rhs[p] = lambda * f[p] + mu * div;
            }
        }
        // One Gauss–Seidel sweep on (λ I + μ DᵀD) u = rhs; DᵀD is the grid
        // graph Laplacian.
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let (mut nb, mut count) = (0.0, 0.0);
                if x > 0 {
                    nb += u[p - 1];
                    count += 1.0;
                }
                if x + 1 < w {
                    nb += u[p + 1];
                    count += 1.0;
                }
                if y > 0 {
                    nb += u[p - w];
                    count += 1.0;
                }
                if y + 1 < h {
                    nb += u[p + w];
                    count += 1.0;
                }
                u[p] = (rhs[p] + mu * nb) / (lambda + mu * count);
            }
        }
        let (gx, gy) = forward_diffs(&u, h, w);
        for p in 0..n {
            let (sx, sy) = (gx[p] + bx[p], gy[p] + by[p]);
            let s = (sx * sx + sy * sy).sqrt();
            let k = if s > 0.0 { (s - 1.0 / mu).max(0.0) / s } else { 0.0 };
            dx[p] = k * sx;
            dy[p] = k * sy;
            bx[p] = sx - dx[p];
            by[p] = sy - dy[p];
        }
    }
    u
}

/// Approximately solves `argmin_u TV(u) + (λ/2)‖u − img‖²` per channel with
/// `iters` split-Bregman iterations (splitting penalty `2λ`, one Gauss–Seidel
/// sweep per iteration). Never returns a point with a higher objective than
/// `img` itself.
pub fn tv_denoise<T: Scalar>(img: &Tensor<T>, lambda: f64, iters: usize) -> Result<Tensor<T>> {
    let (h, w, c) = img.image_dims()?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return invalid(format!("tv lambda must be finite and > 0, got {lambda}"));
    }
    if iters == 0 {
        return invalid("tv_denoise needs at least one iteration");
    }
    let mut out = vec![0.0; h * w * c];
    for ch in 0..c {
        let f = channel_plane(img, ch);
        let u = split_bregman_plane(&f, h, w, lambda, iters);
        for (p, v) in u.into_iter().enumerate() {
            out[p * c + ch] = v;
        }
    }
    let u = Tensor::from_f64(img.dims(), out);
    if tv_objective(&u, img, lambda) > tv_objective(img, img, lambda) {
        return Ok(img.clone());
    }
    Ok(u)
}

/// Gradient of `weight · mean(|x − center|^alpha)`. At `x == center` the
/// subgradient 0 is used.
pub fn alpha_norm_grad<T: Scalar>(img: &Tensor<T>, alpha: f64, weight: f64, center: f64) -> Result<Tensor<T>> {
    if !(alpha >= 1.0) {
        return invalid(format!("alpha must be >= 1, got {alpha}"));
    }
    let n = img.len() as f64;
    Ok(img.map(|v| {
        let d = v.as_f64() - center;
        if d == 0.0 {
            T::zero()
        } else {
            T::lit(weight * alpha * d.abs().powf(alpha - 1.0) * d.signum() / n)
        }
    }))
}

/// Value of the α-norm penalty matching [`alpha_norm_grad`].
pub fn alpha_norm<T: Scalar>(img: &Tensor<T>, alpha: f64, weight: f64, center: f64) -> f64 {
    let s: f64 = img.data().iter().map(|v| (v.as_f64() - center).abs().powf(alpha)).sum();
    weight * s / img.len() as f64
}

/// Top-left corner `(row, col)` of a uniformly sampled window.
pub fn jitter_offset(cfg: &JitterConfig, rng: &mut impl Rng) -> (usize, usize) {
    let (r0, r1) = cfg.axis_range(cfg.canvas_h, cfg.window_h);
    let (c0, c1) = cfg.axis_range(cfg.canvas_w, cfg.window_w);
    let row = if r0 == r1 { r0 } else { rng.random_range(r0..=r1) };
    let col = if c0 == c1 { c0 } else { rng.random_range(c0..=c1) };
    (row, col)
}

/// Blur radius at `iter`, decaying linearly from start to end.
pub fn blur_sigma_at(cfg: &RegularizerConfig, iter: usize, total_iters: usize) -> f64 {
    if total_iters <= 1 {
        return cfg.blur_sigma_start;
    }
    let t = iter.min(total_iters - 1) as f64 / (total_iters - 1) as f64;
    cfg.blur_sigma_start + (cfg.blur_sigma_end - cfg.blur_sigma_start) * t
}
