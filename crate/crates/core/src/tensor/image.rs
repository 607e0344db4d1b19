use super::Tensor;
use crate::error::{invalid, shape_err, Result};
use crate::Scalar;

/// Normalized 1-D Gaussian taps truncated at `ceil(3 sigma)` on each side.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

// Half-sample symmetric extension (edge pixel repeated): d c b a | a b c d | d c b a.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Separable per-channel Gaussian blur with symmetric-reflect borders.
///
/// `sigma == 0` returns an exact copy. The border rule makes each output a
/// permutation-balanced mix of inputs, so channel means are preserved.
pub fn gaussian_blur<T: Scalar>(img: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    let (h, w, c) = img.image_dims()?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return invalid(format!("blur sigma must be finite and >= 0, got {sigma}"));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let src = img.to_f64_vec();
    let mut tmp = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for (k, &t) in taps.iter().enumerate() {
                let sx = reflect(x as isize + k as isize - r, w);
                for ch in 0..c {
                    tmp[(y * w + x) * c + ch] += t * src[(y * w + sx) * c + ch];
                }
            }
        }
    }
    let mut out = vec![0.0f64; src.len()];
    for y in 0..h {
        for (k, &t) in taps.iter().enumerate() {
            let sy = reflect(y as isize + k as isize - r, h);
            for i in 0..w * c {
                out[y * w * c + i] += t * tmp[sy * w * c + i];
            }
        }
    }
    Ok(Tensor::from_f64(img.dims(), out))
}

/// Bilinear resampling with corner-aligned sample grids: output corners land
/// exactly on input corners.
pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, new_h: usize, new_w: usize) -> Result<Tensor<T>> {
    let (h, w, c) = img.image_dims()?;
    if new_h == 0 || new_w == 0 {
        return invalid(format!("resize target {new_h}x{new_w} must be at least 1x1"));
    }
    if (new_h, new_w) == (h, w) {
        return Ok(img.clone());
    }
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let s = if n_out == 1 {
            (n_in - 1) as f64 / 2.0
        } else {
            i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        };
        let lo = (s.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(new_h * new_w * c);
    for y in 0..new_h {
        let (y0, y1, fy) = coord(y, new_h, h);
        for x in 0..new_w {
            let (x0, x1, fx) = coord(x, new_w, w);
            for ch in 0..c {
                let v00 = img.at(y0, x0, ch).as_f64();
                let v01 = img.at(y0, x1, ch).as_f64();
                let v10 = img.at(y1, x0, ch).as_f64();
                let v11 = img.at(y1, x1, ch).as_f64();
                let top = v00 + (v01 - v00) * fx;
                let bottom = v10 + (v11 - v10) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    Ok(Tensor::from_f64(&[new_h, new_w, c], out))
}

/// `a + t * (b - a)`; the endpoints are returned exactly, and equal inputs
/// give `a` for every `t`.
pub fn lerp_images<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, t: f64) -> Result<Tensor<T>> {
    if a.dims() != b.dims() {
        return shape_err(format!("cannot interpolate {} with {}", a.shape(), b.shape()));
    }
    if !(0.0..=1.0).contains(&t) {
        return invalid(format!("interpolation weight {t} outside [0, 1]"));
    }
    if t == 0.0 {
        return Ok(a.clone());
    }
    if t == 1.0 {
        return Ok(b.clone());
    }
    a.zip_map(b, |x, y| T::lit(x.as_f64() + t * (y.as_f64() - x.as_f64())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn blur_keeps_constants() {
        let img = Tensor::<f32>::filled(&[9, 7, 3], 0.37);
        for sigma in [0.5, 1.0, 2.5, 6.0] {
            let b = gaussian_blur(&img, sigma).unwrap();
            assert!(b.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
        }
    }

    #[test]
    fn zero_sigma_is_bit_identical() {
        let mut rng = crate::rng::seeded(2);
        let img = Tensor::<f32>::from_fn(&[5, 6, 2], |_| rng.random());
        let b = gaussian_blur(&img, 0.0).unwrap();
        assert!(img.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn negative_sigma_rejected() {
        let img = Tensor::<f32>::zeros(&[3, 3, 1]);
        assert!(gaussian_blur(&img, -1.0).is_err());
    }

    #[test]
    fn impulse_matches_closed_form_gaussian() {
        let mut img = Tensor::<f64>::zeros(&[11, 11, 1]);
        img.set(5, 5, 0, 1.0);
        let b = gaussian_blur(&img, 1.0).unwrap();
        // Directly evaluated 2-D Gaussian on the 7x7 support, normalized.
        let mut want = [[0.0f64; 7]; 7];
        let mut total = 0.0;
        for (i, row) in want.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (dy, dx) = (i as f64 - 3.0, j as f64 - 3.0);
                *v = (-(dx * dx + dy * dy) / 2.0).exp();
                total += *v;
            }
        }
        for y in 0..11 {
            for x in 0..11 {
                let expected = if (2..9).contains(&y) && (2..9).contains(&x) {
                    want[y - 2][x - 2] / total
                } else {
                    0.0
                };
                assert!((b.at(y, x, 0) - expected).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn blur_preserves_channel_means() {
        let mut rng = crate::rng::seeded(9);
        let img = Tensor::<f32>::from_fn(&[12, 10, 3], |_| rng.random());
        for sigma in [0.7, 2.0, 5.0] {
            let b = gaussian_blur(&img, sigma).unwrap();
            let (m0, m1) = (img.channel_means().unwrap(), b.channel_means().unwrap());
            for (a, c) in m0.iter().zip(&m1) {
                assert!((a - c).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn resize_constant_and_identity() {
        let img = Tensor::<f32>::filled(&[4, 5, 2], -0.25);
        let up = resize_bilinear(&img, 7, 9).unwrap();
        assert_eq!(up.dims(), &[7, 9, 2]);
        assert!(up.data().iter().all(|&v| (v + 0.25).abs() < 1e-7));
        let mut rng = crate::rng::seeded(1);
        let r = Tensor::<f32>::from_fn(&[4, 5, 2], |_| rng.random());
        assert!(resize_bilinear(&r, 4, 5).unwrap().max_abs_diff(&r) < 1e-6);
    }

    #[test]
    fn resize_two_by_two_to_three_by_three() {
        let img = Tensor::<f64>::from_vec(&[2, 2, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let r = resize_bilinear(&img, 3, 3).unwrap();
        // Hand-evaluated: corners keep their values, edge midpoints average
        // two neighbours, the centre averages all four.
        let want = [0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.0, 2.5, 3.0];
        for (g, w) in r.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn lerp_endpoints_and_midpoint() {
        let a = Tensor::<f32>::from_vec(&[1, 2, 1], vec![1.0, -2.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[1, 2, 1], vec![3.0, 5.0]).unwrap();
        assert_eq!(lerp_images(&a, &b, 0.0).unwrap(), a);
        assert_eq!(lerp_images(&a, &b, 1.0).unwrap(), b);
        assert_eq!(lerp_images(&a, &b, 0.5).unwrap().data(), &[2.0, 1.5]);
        let c = Tensor::<f32>::zeros(&[2, 1, 1]);
        assert!(lerp_images(&a, &c, 0.5).is_err());
    }
}
