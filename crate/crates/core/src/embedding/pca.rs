use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel<T> {
    pub mean: Vec<T>,
    /// One principal direction per row, by descending variance.
    pub components: Tensor<T>,
    pub explained_variance: Vec<T>,
}

impl<T: Scalar> PcaModel<T> {
    pub fn input_dims(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dims(&self) -> usize {
        self.explained_variance.len()
    }
}

/// Eigen-decomposition of a symmetric `n × n` matrix (row-major) by cyclic
/// Jacobi rotations. Returns eigenvalues in descending order and the matching
/// eigenvectors as rows.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    (values, vectors)
}

/// Principal directions of the mean-centred rows of `codes` (N × D).
///
/// Each component's largest-magnitude coordinate is made positive.
pub fn pca_fit<T: Scalar>(codes: &Tensor<T>, out_dims: usize) -> Result<PcaModel<T>> {
    let [n, d] = *codes.dims() else {
        return shape_err(format!("codes must be an N x D matrix, got {}", codes.shape()));
    };
    if n < 2 {
        return invalid("PCA needs at least two rows");
    }
    if out_dims == 0 || out_dims > (n - 1).min(d) {
        return invalid(format!("out_dims {out_dims} must be in 1..={}", (n - 1).min(d)));
    }
    let x = codes.to_f64_vec();
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x[i * d + j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        for a in 0..d {
            let ca = row[a] - mean[a];
            if ca == 0.0 {
                continue;
            }
            for b in a..d {
                cov[a * d + b] += ca * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / (n - 1) as f64;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    let (values, mut vectors) = symmetric_eigen(&cov, d);
    let mut comps = Vec::with_capacity(out_dims * d);
    for vec in vectors.iter_mut().take(out_dims) {
        let lead = vec.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            vec.iter_mut().for_each(|v| *v = -*v);
        }
        comps.extend_from_slice(vec);
    }
    Ok(PcaModel {
        mean: mean.into_iter().map(T::lit).collect(),
        components: Tensor::from_f64(&[out_dims, d], comps),
        explained_variance: values.into_iter().take(out_dims).map(|v| T::lit(v.max(0.0))).collect(),
    })
}

/// `(codes − mean) · componentsᵀ`.
pub fn pca_transform<T: Scalar>(model: &PcaModel<T>, codes: &Tensor<T>) -> Result<Tensor<T>> {
    let d = model.input_dims();
    let [n, cd] = *codes.dims() else {
        return shape_err(format!("codes must be an N x D matrix, got {}", codes.shape()));
    };
    if cd != d {
        return shape_err(format!("codes have {cd} columns, model expects {d}"));
    }
    let k = model.output_dims();
    let comps = model.components.to_f64_vec();
    let mut out = Vec::with_capacity(n * k);
    for row in codes.data().chunks_exact(d) {
        let centred: Vec<f64> = row.iter().zip(&model.mean).map(|(a, m)| a.as_f64() - m.as_f64()).collect();
        for c in comps.chunks_exact(d) {
            out.push(c.iter().zip(&centred).map(|(a, b)| a * b).sum());
        }
    }
    Ok(Tensor::from_f64(&[n, k], out))
}

/// Maps projected rows back to code space: `projected · components + mean`.
pub fn pca_inverse<T: Scalar>(model: &PcaModel<T>, projected: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, k) = (model.input_dims(), model.output_dims());
    let [n, pk] = *projected.dims() else {
        return shape_err(format!("projection must be an N x K matrix, got {}", projected.shape()));
    };
    if pk != k {
        return shape_err(format!("projection has {pk} columns, model has {k} components"));
    }
    let comps = model.components.to_f64_vec();
    let mut out = Vec::with_capacity(n * d);
    for row in projected.data().chunks_exact(k) {
        for j in 0..d {
            let v: f64 = row.iter().enumerate().map(|(c, p)| p.as_f64() * comps[c * d + j]).sum();
            out.push(v + model.mean[j].as_f64());
        }
    }
    Ok(Tensor::from_f64(&[n, d], out))
}
