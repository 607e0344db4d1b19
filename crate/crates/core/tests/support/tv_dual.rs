//! Independent TV proximal solver for tests: projected gradient ascent on
//! the dual of `TV(u) + (λ/2)‖u − f‖²`, plus a fixed set of fixture images.

use facetviz::Tensor;
use rand::Rng;

// Chambolle-style dual projection: u = f - Dᵀp / λ with |p| <= 1 per pixel.
pub fn dual_pgd_plane(f: &[f64], h: usize, w: usize, lambda: f64, iters: usize) -> Vec<f64> {
    let n = h * w;
    let (mut px, mut py) = (vec![0.0; n], vec![0.0; n]);
    let tau = lambda / 8.0;
    let mut u = f.to_vec();
    for _ in 0..iters {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                // Dᵀp = -div p with the adjoint of replicate forward differences.
                let mut dtp = 0.0;
                if x + 1 < w {
                    dtp -= px[p];
                }
                if x > 0 {
                    dtp += px[p - 1];
                }
                if y + 1 < h {
                    dtp -= py[p];
                }
                if y > 0 {
                    dtp += py[p - w];
                }
                u[p] = f[p] - dtp / lambda;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let gx = if x + 1 < w { u[p + 1] - u[p] } else { 0.0 };
                let gy = if y + 1 < h { u[p + w] - u[p] } else { 0.0 };
                let (qx, qy) = (px[p] + tau * gx, py[p] + tau * gy);
                let norm = (qx * qx + qy * qy).sqrt().max(1.0);
                px[p] = qx / norm;
                py[p] = qy / norm;
            }
        }
    }
    u
}

pub fn oracle(img: &Tensor<f64>, lambda: f64) -> Tensor<f64> {
    let (h, w, c) = img.image_dims().unwrap();
    let mut out = vec![0.0; h * w * c];
    for ch in 0..c {
        let f: Vec<f64> = (0..h * w).map(|p| img.data()[p * c + ch]).collect();
        for (p, v) in dual_pgd_plane(&f, h, w, lambda, 40_000).into_iter().enumerate() {
            out[p * c + ch] = v;
        }
    }
    Tensor::from_vec(img.dims(), out).unwrap()
}

/// Ten fixtures `(image, λ)`: steps, squares, ramps, checkers and pure noise
/// at several sizes, channel counts and weights.
pub fn fixtures() -> Vec<(Tensor<f64>, f64)> {
    let mut out = Vec::new();
    let shapes: [(usize, usize, usize); 10] =
        [(8, 8, 1), (10, 12, 1), (12, 12, 3), (16, 16, 1), (9, 14, 2), (16, 12, 3), (8, 8, 3), (14, 14, 1), (12, 16, 1), (10, 10, 3)];
    let lambdas = [2.0, 0.5, 1.0, 5.0, 2.0, 10.0, 0.8, 3.0, 1.5, 4.0];
    for (k, (&(h, w, c), &lambda)) in shapes.iter().zip(&lambdas).enumerate() {
        let mut rng = facetviz::rng::seeded(500 + k as u64);
        let noise = [0.2, 0.1, 0.3, 0.15, 0.25][k % 5];
        let img = Tensor::from_fn(&[h, w, c], |i| {
            let (y, x, ch) = (i / (w * c), (i / c) % w, i % c);
            let base = match k % 5 {
                0 => (x >= w / 2) as u8 as f64,
                1 => (y >= h / 4 && y < 3 * h / 4 && x >= w / 4 && x < 3 * w / 4) as u8 as f64,
                2 => x as f64 / w as f64 + 0.3 * ch as f64,
                3 => ((x / 3 + y / 3) % 2) as f64,
                _ => 0.5,
            };
            base + rng.random_range(-noise..noise)
        });
        out.push((img, lambda));
    }
    out
}
