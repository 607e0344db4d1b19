use super::Tensor;
use crate::error::{invalid, shape_err, Result};
use crate::Scalar;

/// Output extent of a strided, padded window sweep: `floor((n + 2p - k) / s) + 1`.
pub fn conv_output_extent(n: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return invalid("stride must be >= 1");
    }
    if n + 2 * pad < kernel {
        return shape_err(format!(
            "kernel extent {kernel} exceeds padded input extent {}",
            n + 2 * pad
        ));
    }
    Ok((n + 2 * pad - kernel) / stride + 1)
}

struct ConvGeometry {
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
}

fn geometry<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeometry> {
    let (h, w, c) = input.image_dims()?;
    let [kh, kw, cin, cout] = *kernels.dims() else {
        return shape_err(format!("kernels must be rank 4, got shape {}", kernels.shape()));
    };
    if cin != c {
        return shape_err(format!(
            "kernel input channels {cin} do not match image channels {c}"
        ));
    }
    let oh = conv_output_extent(h, kh, stride, pad)?;
    let ow = conv_output_extent(w, kw, stride, pad)?;
    Ok(ConvGeometry { h, w, c, kh, kw, cout, oh, ow })
}

// Calls `f(out_pixel, in_pixel, kernel_tap)` for every in-bounds input/kernel
// pairing; pixel indices are flat spatial offsets, tap is `ky * kw + kx`.
#[inline]
fn for_each_tap(g: &ConvGeometry, stride: usize, pad: usize, mut f: impl FnMut(usize, usize, usize)) {
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let out_px = oy * g.ow + ox;
            for ky in 0..g.kh {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    f(out_px, iy as usize * g.w + ix as usize, ky * g.kw + kx);
                }
            }
        }
    }
}

/// 2-D cross-correlation of an image with a bank of kernels (no bias).
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = geometry(input, kernels, stride, pad)?;
    let x = input.to_f64_vec();
    let wk = kernels.to_f64_vec();
    let mut out = vec![0.0f64; g.oh * g.ow * g.cout];
    for_each_tap(&g, stride, pad, |out_px, in_px, tap| {
        let acc = &mut out[out_px * g.cout..(out_px + 1) * g.cout];
        for ci in 0..g.c {
            let xv = x[in_px * g.c + ci];
            let row = &wk[(tap * g.c + ci) * g.cout..(tap * g.c + ci + 1) * g.cout];
            for (a, &wv) in acc.iter_mut().zip(row) {
                *a += xv * wv;
            }
        }
    });
    Ok(Tensor::from_f64(&[g.oh, g.ow, g.cout], out))
}

/// Gradients of `sum(conv2d(input, kernels) * upstream)` with respect to the
/// input image and the kernels.
pub fn conv2d_grads<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    pad: usize,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = geometry(input, kernels, stride, pad)?;
    if upstream.dims() != [g.oh, g.ow, g.cout] {
        return shape_err(format!(
            "upstream gradient shape {} does not match conv output {}x{}x{}",
            upstream.shape(),
            g.oh,
            g.ow,
            g.cout
        ));
    }
    let x = input.to_f64_vec();
    let wk = kernels.to_f64_vec();
    let up = upstream.to_f64_vec();
    let mut gx = vec![0.0f64; x.len()];
    let mut gw = vec![0.0f64; wk.len()];
    for_each_tap(&g, stride, pad, |out_px, in_px, tap| {
        let u = &up[out_px * g.cout..(out_px + 1) * g.cout];
        for ci in 0..g.c {
            let base = (tap * g.c + ci) * g.cout;
            let row = &wk[base..base + g.cout];
            let xv = x[in_px * g.c + ci];
            let mut s = 0.0;
            for co in 0..g.cout {
                s += u[co] * row[co];
                gw[base + co] += xv * u[co];
            }
            gx[in_px * g.c + ci] += s;
        }
    });
    Ok((
        Tensor::from_f64(input.dims(), gx),
        Tensor::from_f64(kernels.dims(), gw),
    ))
}

/// Non-overlapping max pooling with a square `size` window (stride = size).
/// Ties resolve to the first element in row-major window order.
pub fn max_pool2d<T: Scalar>(input: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let (h, w, c) = input.image_dims()?;
    let oh = conv_output_extent(h, size, size, 0)?;
    let ow = conv_output_extent(w, size, size, 0)?;
    let mut out = Tensor::zeros(&[oh, ow, c]);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let (y, x) = argmax_in_window(input, oy * size, ox * size, size, ch);
                out.set(oy, ox, ch, input.at(y, x, ch));
            }
        }
    }
    Ok(out)
}

fn argmax_in_window<T: Scalar>(
    input: &Tensor<T>,
    top: usize,
    left: usize,
    size: usize,
    ch: usize,
) -> (usize, usize) {
    let mut best = (top, left);
    let mut best_v = input.at(top, left, ch);
    for y in top..top + size {
        for x in left..left + size {
            let v = input.at(y, x, ch);
            if v > best_v {
                best_v = v;
                best = (y, x);
            }
        }
    }
    best
}

/// Routes each upstream value to the input position that won its window.
pub fn max_pool2d_backward<T: Scalar>(
    input: &Tensor<T>,
    size: usize,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w, c) = input.image_dims()?;
    let oh = conv_output_extent(h, size, size, 0)?;
    let ow = conv_output_extent(w, size, size, 0)?;
    if upstream.dims() != [oh, ow, c] {
        return shape_err(format!(
            "upstream gradient shape {} does not match pool output {oh}x{ow}x{c}",
            upstream.shape()
        ));
    }
    let mut grad = Tensor::zeros(input.dims());
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let (y, x) = argmax_in_window(input, oy * size, ox * size, size, ch);
                let v = grad.at(y, x, ch) + upstream.at(oy, ox, ch);
                grad.set(y, x, ch, v);
            }
        }
    }
    Ok(grad)
}
