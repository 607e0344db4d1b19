//! Activation maximization: regularized gradient ascent on input pixels, and
//! the five-phase center-biased schedule.
//!
//! One iteration ([`am_step`]) is: ascend the unit's gradient on a (possibly
//! jittered) network-sized window of the canvas, run the TV proximal step on
//! the whole canvas, blur if due, clamp.

use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{invalid, shape_err, Result};
use crate::network::{Network, UnitSelector};
use crate::priors::{self, JitterConfig, RegularizerConfig};
use crate::rng;
use crate::tensor::{gaussian_blur, resize_bilinear, Tensor};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct AMConfig<T: Scalar> {
    pub iterations: usize,
    pub learning_rate: f64,
    pub reg: RegularizerConfig,
    /// Starting canvas. `None` draws uniform noise in the clamp range.
    pub seed_image: Option<Tensor<T>>,
    pub rng_seed: u64,
    /// Pixel bounds `(lo, hi)` in working (mean-subtracted) units.
    pub clamp: (f64, f64),
    /// Divide the activation gradient by its mean magnitude, making
    /// `learning_rate` the mean per-pixel change of a step.
    pub normalize_grad: bool,
    /// Zero the window gradient outside its central `n × n` square.
    pub grad_crop: Option<usize>,
}

impl<T: Scalar> Default for AMConfig<T> {
    fn default() -> Self {
        AMConfig {
            iterations: 200,
            learning_rate: 0.05,
            reg: RegularizerConfig::none(),
            seed_image: None,
            rng_seed: 0,
            clamp: (-1.0, 1.0),
            normalize_grad: false,
            grad_crop: None,
        }
    }
}

impl<T: Scalar> AMConfig<T> {
    /// TV plus jitter on a canvas 20% larger than the `input` window, with a
    /// normalized step of 6/255 per pixel.
    pub fn tv_jitter(input: (usize, usize), clamp: (f64, f64)) -> Self {
        let canvas = ((input.0 as f64 * 1.2).round() as usize, (input.1 as f64 * 1.2).round() as usize);
        let reg = RegularizerConfig {
            tv_lambda: 0.08 * PhaseSchedule::tv_scale(255.0, 227, input.0),
            jitter: Some(JitterConfig::new(canvas, input)),
            ..RegularizerConfig::none()
        };
        AMConfig { learning_rate: 6.0 / 255.0, reg, clamp, normalize_grad: true, ..AMConfig::default() }
    }

    /// Canvas shape `[h, w, c]` this config optimizes for `net`.
    pub fn canvas_dims(&self, net: &Network<T>) -> [usize; 3] {
        let d = net.input_dims();
        match &self.reg.jitter {
            Some(j) => [j.canvas_h, j.canvas_w, d[2]],
            None => [d[0], d[1], d[2]],
        }
    }

    pub fn validate(&self, net: &Network<T>) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(self.clamp.0 < self.clamp.1) {
            problems.push(format!("clamp bounds ({}, {}) need lo < hi", self.clamp.0, self.clamp.1));
        }
        if let Err(e) = self.reg.validate() {
            problems.push(e.to_string());
        }
        let d = net.input_dims();
        if d.len() != 3 {
            problems.push("network input must be an image".to_string());
        } else {
            if let Some(j) = &self.reg.jitter {
                if (j.window_h, j.window_w) != (d[0], d[1]) {
                    problems.push(format!(
                        "jitter window {}x{} differs from network input {}x{}",
                        j.window_h, j.window_w, d[0], d[1]
                    ));
                }
            }
            if let Some(k) = self.grad_crop {
                if k == 0 || k > d[0].min(d[1]) {
                    problems.push(format!("grad_crop {k} must be in 1..={}", d[0].min(d[1])));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            invalid(problems.join("; "))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AMResult<T: Scalar> {
    pub final_image: Tensor<T>,
    /// Activation on the centered window after each iteration.
    pub activation_trace: Vec<f64>,
    /// Iteration index at which each phase starts.
    pub phase_boundaries: Vec<usize>,
    /// Activation on the centered window of the starting canvas.
    pub initial_activation: f64,
}

impl<T: Scalar> AMResult<T> {
    pub fn final_activation(&self) -> f64 {
        self.activation_trace.last().copied().unwrap_or(self.initial_activation)
    }

    /// Phase index (0-based) of iteration `it`.
    pub fn phase_of(&self, it: usize) -> usize {
        self.phase_boundaries.iter().rposition(|&b| b <= it).unwrap_or(0)
    }
}

/// Uniform noise in `clamp`, the default starting canvas.
pub fn noise_image<T: Scalar>(dims: &[usize], clamp: (f64, f64), rng: &mut rng::Rng) -> Tensor<T> {
    Tensor::from_fn(dims, |_| T::lit(rng.random_range(clamp.0..clamp.1)))
}

fn centered_window<T: Scalar>(net: &Network<T>, img: &Tensor<T>) -> Result<Tensor<T>> {
    let d = net.input_dims();
    img.center_crop(d[0], d[1])
}

fn zero_outside_center<T: Scalar>(g: &mut Tensor<T>, k: usize) -> usize {
    let (h, w, c) = (g.height(), g.width(), g.channels());
    let (top, left) = ((h - k) / 2, (w - k) / 2);
    for y in 0..h {
        for x in 0..w {
            if !(top..top + k).contains(&y) || !(left..left + k).contains(&x) {
                for ch in 0..c {
                    g.set(y, x, ch, T::zero());
                }
            }
        }
    }
    k * k * c
}

/// One iteration on canvas `img`; `iter` indexes the blur schedule. Draws the
/// jitter offset from `rng` whenever jitter is configured.
pub fn am_step<T: Scalar>(
    net: &Network<T>,
    sel: &UnitSelector,
    img: &Tensor<T>,
    cfg: &AMConfig<T>,
    iter: usize,
    rng: &mut rng::Rng,
) -> Result<Tensor<T>> {
    let dims = cfg.canvas_dims(net);
    if img.dims() != dims {
        return shape_err(format!("canvas is {} but the config expects {}x{}x{}", img.shape(), dims[0], dims[1], dims[2]));
    }
    let d = net.input_dims();
    let (top, left) = match &cfg.reg.jitter {
        Some(j) => priors::jitter_offset(j, rng),
        None => (0, 0),
    };
    let mut out = img.clone();
    if cfg.learning_rate > 0.0 {
        let window = img.crop(top, left, d[0], d[1])?;
        let mut g = net.input_gradient(&window, sel)?;
        let support = match cfg.grad_crop {
            Some(k) => zero_outside_center(&mut g, k),
            None => g.len(),
        };
        let scale = if cfg.normalize_grad {
            let mean_abs = g.data().iter().map(|v| v.as_f64().abs()).sum::<f64>() / support as f64;
            if mean_abs > 0.0 {
                cfg.learning_rate / mean_abs
            } else {
                0.0
            }
        } else {
            cfg.learning_rate
        };
        out.add_patch(&g, top, left, scale)?;
        if cfg.reg.alpha_weight > 0.0 {
            let a = priors::alpha_norm_grad(img, cfg.reg.alpha, cfg.reg.alpha_weight, 0.0)?;
            let lr = cfg.learning_rate;
            out = out.zip_map(&a, |x, da| T::lit(x.as_f64() - lr * da.as_f64()))?;
        }
    }
    if cfg.reg.tv_enabled() {
        out = priors::tv_denoise(&out, cfg.reg.tv_lambda, cfg.reg.tv_inner_iters)?;
    }
    if cfg.reg.blur_enabled() && (iter + 1) % cfg.reg.blur_every == 0 {
        let sigma = priors::blur_sigma_at(&cfg.reg, iter, cfg.iterations);
        if sigma > 0.0 {
            out = gaussian_blur(&out, sigma)?;
        }
    }
    let (lo, hi) = (T::lit(cfg.clamp.0), T::lit(cfg.clamp.1));
    Ok(out.map(|v| v.max(lo).min(hi)))
}

/// Runs `cfg.iterations` steps of [`am_step`], tracing the activation on the
/// centered network-sized window after each step.
pub fn maximize<T: Scalar>(net: &Network<T>, sel: &UnitSelector, cfg: &AMConfig<T>) -> Result<AMResult<T>> {
    net.check_selector(sel)?;
    cfg.validate(net)?;
    let dims = cfg.canvas_dims(net);
    let mut rng = rng::seeded(cfg.rng_seed);
    let mut img = match &cfg.seed_image {
        Some(s) if s.dims() != dims => {
            return shape_err(format!("seed image is {} but the canvas is {}x{}x{}", s.shape(), dims[0], dims[1], dims[2]))
        }
        Some(s) => s.clone(),
        None => noise_image(&dims, cfg.clamp, &mut rng),
    };
    let initial_activation = net.unit_activation(&centered_window(net, &img)?, sel)?;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        img = am_step(net, sel, &img, cfg, it, &mut rng)?;
        trace.push(net.unit_activation(&centered_window(net, &img)?, sel)?);
    }
    Ok(AMResult { final_image: img, activation_trace: trace, phase_boundaries: vec![0], initial_activation })
}

/// One phase of the center-biased schedule. Pixel-valued fields are in
/// reference-network units (see [`PhaseSchedule`]).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpec {
    pub iterations: usize,
    /// Mean per-pixel step on the reference intensity scale.
    pub learning_rate: f64,
    /// TV fidelity weight on the reference intensity and spatial scale.
    pub tv_lambda: f64,
    /// Canvas extent relative to the network input.
    pub canvas_scale: f64,
    /// Side of the square that jitter windows are centered in, as a fraction
    /// of the canvas extent; `Some(0.0)` pins the window to the center and
    /// `None` allows any placement.
    pub jitter_center_box: Option<f64>,
    /// Central crop of the gradient image, in reference pixels.
    pub grad_crop: Option<usize>,
}

/// Five-phase center-biased schedule. Values are stated for a reference
/// network with `reference_input`-pixel inputs and intensities spanning
/// `intensity_range`, and are converted to the target network when run:
/// learning rates divide by the intensity range, TV weights multiply by the
/// intensity range and by the spatial ratio, and pixel extents scale by the
/// spatial ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSchedule {
    pub phases: Vec<PhaseSpec>,
    pub reference_input: usize,
    pub intensity_range: f64,
    pub tv_inner_iters: usize,
    pub rng_seed: u64,
    pub clamp: (f64, f64),
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        PhaseSchedule::reference()
    }
}

impl PhaseSchedule {
    /// The reference schedule: canvases 227, 272, 327 on a 227-pixel network,
    /// λ = 0.001, 0.08, 2 and learning rates 11, 6, 1 for phases 1 to 3, then
    /// 30 and 10 iterations on a 127-pixel gradient crop. Phases 4 and 5
    /// reuse the phase-3 λ and learning rate.
    pub fn reference() -> Self {
        let phase = |iterations, learning_rate, tv_lambda, p: i32, jitter_center_box, grad_crop| PhaseSpec {
            iterations,
            learning_rate,
            tv_lambda,
            canvas_scale: 1.2f64.powi(p),
            jitter_center_box,
            grad_crop,
        };
        PhaseSchedule {
            phases: vec![
                phase(150, 11.0, 0.001, 0, Some(0.1), None),
                phase(150, 6.0, 0.08, 1, Some(0.1), None),
                phase(150, 1.0, 2.0, 2, Some(0.1), None),
                phase(30, 1.0, 2.0, 2, Some(0.0), Some(127)),
                phase(10, 1.0, 2.0, 2, None, Some(127)),
            ],
            reference_input: 227,
            intensity_range: 255.0,
            tv_inner_iters: 100,
            rng_seed: 0,
            clamp: (-1.0, 1.0),
        }
    }

    /// Converts a reference TV weight to a network with `input`-pixel inputs
    /// and `[0, 1]` intensities. TV scales linearly with length and the
    /// fidelity term quadratically, so the weight grows as the image shrinks.
    pub fn tv_scale(intensity_range: f64, reference_input: usize, input: usize) -> f64 {
        intensity_range * reference_input as f64 / input as f64
    }

    pub fn total_iterations(&self) -> usize {
        self.phases.iter().map(|p| p.iterations).sum()
    }

    /// Canvas extent of phase `p` for an input extent `input`.
    pub fn canvas_extent(&self, p: usize, input: usize) -> usize {
        (input as f64 * self.phases[p].canvas_scale).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.phases.len() != 5 {
            problems.push(format!("schedule needs exactly 5 phases, got {}", self.phases.len()));
        }
        for (i, p) in self.phases.iter().enumerate() {
            let n = i + 1;
            if !(p.learning_rate >= 0.0 && p.learning_rate.is_finite()) {
                problems.push(format!("phase {n}: learning_rate must be finite and >= 0"));
            }
            if !(p.tv_lambda >= 0.0 && p.tv_lambda.is_finite()) {
                problems.push(format!("phase {n}: tv_lambda must be finite and >= 0"));
            }
            if !(p.canvas_scale >= 1.0 && p.canvas_scale.is_finite()) {
                problems.push(format!("phase {n}: canvas_scale must be >= 1, got {}", p.canvas_scale));
            }
            if let Some(b) = p.jitter_center_box {
                if !(0.0..=1.0).contains(&b) {
                    problems.push(format!("phase {n}: jitter_center_box must lie in [0, 1], got {b}"));
                }
            }
            if let Some(k) = p.grad_crop {
                if k == 0 || k > self.reference_input {
                    problems.push(format!("phase {n}: grad_crop must be in 1..={}", self.reference_input));
                }
            }
        }
        for w in self.phases.windows(2).take(2) {
            if w[1].canvas_scale < w[0].canvas_scale {
                problems.push("canvas_scale must not decrease across phases 1-3".to_string());
            }
        }
        if self.reference_input == 0 || !(self.intensity_range > 0.0) {
            problems.push("reference_input and intensity_range must be positive".to_string());
        }
        if self.tv_inner_iters == 0 && self.phases.iter().any(|p| p.tv_lambda > 0.0) {
            problems.push("tv_inner_iters must be >= 1".to_string());
        }
        if !(self.clamp.0 < self.clamp.1) {
            problems.push(format!("clamp bounds ({}, {}) need lo < hi", self.clamp.0, self.clamp.1));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            invalid(problems.join("; "))
        }
    }

    /// The schedule's parameters on the reference scale, one line per field.
    pub fn echo(&self) -> String {
        fn row<I: IntoIterator<Item = String>>(out: &mut String, key: &str, vals: I) {
            let vals: Vec<String> = vals.into_iter().collect();
            let _ = writeln!(out, "{key} = {}", vals.join(" "));
        }
        let mut out = String::new();
        let _ = writeln!(out, "reference_input = {}", self.reference_input);
        let _ = writeln!(out, "intensity_range = {}", self.intensity_range);
        row(&mut out, "tv_lambda", self.phases.iter().map(|p| p.tv_lambda.to_string()));
        row(&mut out, "learning_rate", self.phases.iter().map(|p| p.learning_rate.to_string()));
        row(&mut out, "canvas", (0..self.phases.len()).map(|i| self.canvas_extent(i, self.reference_input).to_string()));
        row(&mut out, "iterations", self.phases.iter().map(|p| p.iterations.to_string()));
        let _ = writeln!(out, "tv_inner_iters = {}", self.tv_inner_iters);
        row(&mut out, "grad_crop", self.phases.iter().map(|p| p.grad_crop.map_or("none".into(), |k| k.to_string())));
        row(
            &mut out,
            "jitter_center_box",
            self.phases.iter().map(|p| p.jitter_center_box.map_or("anywhere".into(), |b| b.to_string())),
        );
        out
    }

    /// Per-phase [`AMConfig`] for a network with `input` = `(h, w)`; the
    /// seed image is left unset.
    pub fn phase_config<T: Scalar>(&self, p: usize, input: (usize, usize)) -> AMConfig<T> {
        let ph = &self.phases[p];
        let (ch, cw) = (self.canvas_extent(p, input.0), self.canvas_extent(p, input.1));
        let ratio = input.0.min(input.1) as f64 / self.reference_input as f64;
        let mut jitter = JitterConfig::new((ch, cw), input);
        jitter.center_box = ph.jitter_center_box.map(|f| (f * ch.max(cw) as f64 / 2.0).round() as usize);
        let reg = RegularizerConfig {
            tv_lambda: ph.tv_lambda * Self::tv_scale(self.intensity_range, self.reference_input, input.0.min(input.1)),
            tv_inner_iters: self.tv_inner_iters,
            jitter: Some(jitter),
            ..RegularizerConfig::none()
        };
        AMConfig {
            iterations: ph.iterations,
            learning_rate: ph.learning_rate / self.intensity_range,
            reg,
            seed_image: None,
            rng_seed: rng::sub_seed(self.rng_seed, p as u64 + 1),
            clamp: self.clamp,
            normalize_grad: true,
            grad_crop: ph.grad_crop.map(|k| ((k as f64 * ratio).round() as usize).max(1)),
        }
    }
}

/// Runs the five phases in order. The canvas is resized bilinearly whenever a
/// phase's canvas extent differs from the current one; the final image is the
/// last phase's full canvas. Without a seed, uniform noise at input size is
/// drawn from `sched.rng_seed`.
pub fn center_biased_maximize<T: Scalar>(
    net: &Network<T>,
    sel: &UnitSelector,
    seed: Option<&Tensor<T>>,
    sched: &PhaseSchedule,
) -> Result<AMResult<T>> {
    sched.validate()?;
    net.check_selector(sel)?;
    let d = net.input_dims().to_vec();
    let mut img = match seed {
        Some(s) if s.dims() != d.as_slice() => {
            return shape_err(format!("seed image is {} but the network input is {:?}", s.shape(), d))
        }
        Some(s) => s.clone(),
        None => noise_image(&d, sched.clamp, &mut rng::seeded(sched.rng_seed)),
    };
    let initial_activation = net.unit_activation(&img, sel)?;
    let mut trace = Vec::with_capacity(sched.total_iterations());
    let mut boundaries = Vec::with_capacity(sched.phases.len());
    for p in 0..sched.phases.len() {
        let mut cfg = sched.phase_config::<T>(p, (d[0], d[1]));
        let (ch, cw) = {
            let j = cfg.reg.jitter.as_ref().expect("phase configs always jitter");
            (j.canvas_h, j.canvas_w)
        };
        if (img.height(), img.width()) != (ch, cw) {
            img = resize_bilinear(&img, ch, cw)?;
        }
        cfg.seed_image = Some(img);
        boundaries.push(trace.len());
        let r = maximize(net, sel, &cfg)?;
        trace.extend(r.activation_trace);
        img = r.final_image;
    }
    Ok(AMResult { final_image: img, activation_trace: trace, phase_boundaries: boundaries, initial_activation })
}

/// Runs every variant from `seed` (resized to each variant's canvas) with the
/// same `rng_seed`. Results keep the variant order and labels.
pub fn compare_regularizers<T: Scalar>(
    net: &Network<T>,
    sel: &UnitSelector,
    seed: &Tensor<T>,
    rng_seed: u64,
    variants: &[(String, AMConfig<T>)],
) -> Result<Vec<(String, AMResult<T>)>> {
    variants
        .par_iter()
        .map(|(label, cfg)| {
            let mut cfg = cfg.clone();
            let [h, w, _] = cfg.canvas_dims(net);
            let start = if (seed.height(), seed.width()) == (h, w) { seed.clone() } else { resize_bilinear(seed, h, w)? };
            cfg.seed_image = Some(start);
            cfg.rng_seed = rng_seed;
            Ok((label.clone(), maximize(net, sel, &cfg)?))
        })
        .collect()
}

/// Mean absolute deviation from the image mean over the central third,
/// divided by the same quantity over the outer frame (the border band one
/// sixth of the extent wide).
pub fn center_mass_ratio<T: Scalar>(img: &Tensor<T>, reference_mean: f64) -> Result<f64> {
    let (h, w, c) = img.image_dims()?;
    if h < 6 || w < 6 {
        return shape_err(format!("center mass needs at least 6x6, got {h}x{w}"));
    }
    let (band_h, band_w) = (h / 6, w / 6);
    let (inner_y, inner_x) = (h / 3..h - h / 3, w / 3..w - w / 3);
    let (mut center, mut nc, mut frame, mut nf) = (0.0, 0usize, 0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let in_frame = y < band_h || y >= h - band_h || x < band_w || x >= w - band_w;
            let in_center = inner_y.contains(&y) && inner_x.contains(&x);
            for ch in 0..c {
                let dev = (img.at(y, x, ch).as_f64() - reference_mean).abs();
                if in_center {
                    center += dev;
                    nc += 1;
                } else if in_frame {
                    frame += dev;
                    nf += 1;
                }
            }
        }
    }
    let frame = frame / nf as f64;
    Ok((center / nc as f64) / frame.max(1e-12))
}
