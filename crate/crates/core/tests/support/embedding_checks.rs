//! Measurements of the embedding stack against independent references.
//! Each function returns the measured quantity; callers apply thresholds.

use facetviz::embedding::{conditional_probabilities, kmeans, pairwise_sq_dists, pca_fit, tsne, TsneConfig};
use facetviz::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Largest |exp(H(row)) − target| over every row of several random sets and
/// perplexities, with the entropy evaluated directly.
pub fn max_perplexity_error() -> f64 {
    let mut worst: f64 = 0.0;
    for (seed, n, d) in [(1u64, 60usize, 5usize), (2, 100, 3), (3, 40, 8)] {
        let mut rng = facetviz::rng::seeded(seed);
        let x = Tensor::<f64>::from_fn(&[n, d], |_| rng.random_range(-1.0..1.0));
        let dists = pairwise_sq_dists(&x).unwrap();
        for perp in [5.0, 10.0, (n as f64 - 1.0) / 3.0 - 1.0] {
            let p = conditional_probabilities(&dists, n, perp);
            for i in 0..n {
                let h: f64 = (0..n).filter(|&j| j != i && p[i * n + j] > 0.0).map(|j| -p[i * n + j] * p[i * n + j].ln()).sum();
                worst = worst.max((h.exp() - perp).abs());
            }
        }
    }
    worst
}

/// `n` points around each of `centers` with per-coordinate σ, labeled by blob.
pub fn blobs(centers: &[Vec<f64>], n: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = facetviz::rng::seeded(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (b, c) in centers.iter().enumerate() {
        for _ in 0..n {
            pts.push(c.iter().map(|v| v + noise.sample(&mut rng)).collect());
            labels.push(b);
        }
    }
    (pts, labels)
}

fn mean_dist(points: &[[f64; 2]], pairs: impl Iterator<Item = (usize, usize)>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (i, j) in pairs {
        s += ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt();
        n += 1;
    }
    s / n as f64
}

/// Mean inter-blob over mean intra-blob distance in the t-SNE map of three
/// σ = 0.1 blobs in 10-D with centers at least 10 apart (perplexity 10).
pub fn tsne_blob_separation(seed: u64) -> f64 {
    let centers: Vec<Vec<f64>> = (0..3).map(|b| (0..10).map(|k| if k == b { 10.0 } else { 0.0 }).collect()).collect();
    let (pts, labels) = blobs(&centers, 30, 0.1, seed);
    let n = pts.len();
    let x = Tensor::<f64>::from_vec(&[n, 10], pts.concat()).unwrap();
    let ids: Vec<usize> = (0..n).collect();
    let e = tsne(&x, &ids, &TsneConfig { perplexity: 10.0, iterations: 500, rng_seed: seed, ..TsneConfig::default() }).unwrap();
    let all = || (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
    let intra = mean_dist(&e.points, all().filter(|&(i, j)| labels[i] == labels[j]));
    let inter = mean_dist(&e.points, all().filter(|&(i, j)| labels[i] != labels[j]));
    inter / intra
}

/// Majority-label purity of k-means (k = 3) on three planted 2-D blobs.
pub fn kmeans_blob_purity(seed: u64) -> f64 {
    let centers = vec![vec![0.0, 0.0], vec![6.0, 0.0], vec![3.0, 5.0]];
    let (pts, labels) = blobs(&centers, 50, 0.6, 1000 + seed);
    let points: Vec<[f64; 2]> = pts.iter().map(|p| [p[0], p[1]]).collect();
    let c = kmeans(&points, 3, seed).unwrap();
    let mut agree = 0;
    for k in 0..3 {
        let mut counts = [0usize; 3];
        for (i, &a) in c.assignments.iter().enumerate() {
            if a == k {
                counts[labels[i]] += 1;
            }
        }
        agree += counts.iter().max().unwrap();
    }
    agree as f64 / points.len() as f64
}

/// Largest disagreement between the PCA fit and an eigen-decomposition of
/// the explicitly formed covariance by nalgebra: variances, and components
/// up to sign, on random matrices.
pub fn pca_oracle_error() -> f64 {
    let mut worst: f64 = 0.0;
    for (seed, n, d) in [(7u64, 20usize, 6usize), (8, 40, 10), (9, 15, 4)] {
        let mut rng = facetviz::rng::seeded(seed);
        let data: Vec<f64> = (0..n * d).map(|i| rng.random_range(-1.0..1.0) * (1.0 + (i % d) as f64)).collect();
        let x = Tensor::<f64>::from_vec(&[n, d], data.clone()).unwrap();
        let model = pca_fit(&x, d.min(n - 1)).unwrap();

        let m = nalgebra::DMatrix::from_row_slice(n, d, &data);
        let mean = m.row_mean();
        let mut centered = m.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (r, &k) in order.iter().take(model.output_dims()).enumerate() {
            worst = worst.max((model.explained_variance[r] - eig.eigenvalues[k]).abs());
            let v = eig.eigenvectors.column(k);
            let ours = &model.components.data()[r * d..(r + 1) * d];
            let dot: f64 = ours.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            let sign = dot.signum();
            for (a, b) in ours.iter().zip(v.iter()) {
                worst = worst.max((a - sign * b).abs());
            }
        }
    }
    worst
}
