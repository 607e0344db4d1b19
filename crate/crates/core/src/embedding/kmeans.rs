use rand::Rng;

use super::Embedding2D;
use crate::error::{invalid, Result};

pub const MAX_LLOYD_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<[f64; 2]>,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == cluster).collect()
    }
}

fn sq(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: &[f64; 2], centroids: &[[f64; 2]]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, m)| (c, sq(p, m)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn plus_plus_init(points: &[[f64; 2]], k: usize, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = points.iter().map(|p| sq(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq(p, &points[pick]));
        }
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing (or [`MAX_LLOYD_ITERS`]). An emptied cluster is moved onto the
/// point farthest from its current centroid.
pub fn kmeans(points: &[[f64; 2]], k: usize, rng_seed: u64) -> Result<Clustering> {
    let n = points.len();
    if k == 0 {
        return invalid("k must be >= 1");
    }
    if k > n {
        return invalid(format!("k = {k} exceeds the {n} points"));
    }
    let mut rng = crate::rng::seeded(rng_seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            inertia += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        // Refill empty clusters from the worst-served points.
        let mut counts = vec![0usize; k];
        assignments.iter().for_each(|&a| counts[a] += 1);
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .map(|i| (i, sq(&points[i], &centroids[assignments[i]])))
                .fold((usize::MAX, -1.0), |b, cur| if cur.1 > b.1 { cur } else { b });
            if far.0 == usize::MAX {
                continue;
            }
            inertia -= far.1;
            counts[assignments[far.0]] -= 1;
            counts[c] = 1;
            assignments[far.0] = c;
            centroids[c] = points[far.0];
            changed = true;
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; 2]; k];
        for (p, &a) in points.iter().zip(&assignments) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            }
        }
    }
    Ok(Clustering { assignments, centroids, inertia_history: history })
}

/// The `m` members of `cluster` closest to its centroid in the embedding,
/// ties broken by smaller source id. Returns source ids.
pub fn nearest_members(clustering: &Clustering, embedding: &Embedding2D, cluster: usize, m: usize) -> Result<Vec<usize>> {
    if cluster >= clustering.k() {
        return invalid(format!("cluster {cluster} does not exist (k = {})", clustering.k()));
    }
    if clustering.assignments.len() != embedding.len() {
        return invalid("clustering and embedding sizes differ");
    }
    let centroid = clustering.centroids[cluster];
    let mut members: Vec<(f64, usize)> = clustering
        .members(cluster)
        .into_iter()
        .map(|i| (sq(&embedding.points[i], &centroid), embedding.source_ids[i]))
        .collect();
    if members.is_empty() {
        return invalid(format!("cluster {cluster} is empty"));
    }
    members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(members.into_iter().take(m).map(|(_, id)| id).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64, per: usize) -> (Vec<[f64; 2]>, Vec<usize>) {
        let mut rng = crate::rng::seeded(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let centres = [[0.0, 0.0], [10.0, 0.0], [5.0, 9.0]];
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (l, c) in centres.iter().enumerate() {
            for _ in 0..per {
                pts.push([c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
                labels.push(l);
            }
        }
        (pts, labels)
    }

    #[test]
    fn k_equals_n_is_zero_inertia() {
        let pts: Vec<[f64; 2]> = (0..7).map(|i| [i as f64, (i * i) as f64]).collect();
        let c = kmeans(&pts, 7, 1).unwrap();
        assert!(c.inertia().abs() < 1e-12);
        let mut seen = c.assignments.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 7);
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let (pts, _) = blobs(1, 10);
        let c = kmeans(&pts, 1, 3).unwrap();
        let mx = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p[1]).sum::<f64>() / pts.len() as f64;
        assert!((c.centroids[0][0] - mx).abs() < 1e-9 && (c.centroids[0][1] - my).abs() < 1e-9);
    }

    #[test]
    fn inertia_never_increases_and_centroids_are_means() {
        for seed in 0..10 {
            let (pts, _) = blobs(seed, 20);
            let c = kmeans(&pts, 5, seed).unwrap();
            for w in c.inertia_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9);
            }
            for k in 0..5 {
                let m = c.members(k);
                assert!(!m.is_empty());
                let mx = m.iter().map(|&i| pts[i][0]).sum::<f64>() / m.len() as f64;
                assert!((c.centroids[k][0] - mx).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn rejects_k_above_n() {
        assert!(kmeans(&[[0.0, 0.0]], 2, 0).is_err());
    }

    #[test]
    fn nearest_members_rules() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.2, 0.0]];
        let c = Clustering { assignments: vec![0, 0, 0, 0], centroids: vec![[0.0, 0.0]], inertia_history: vec![] };
        let emb = Embedding2D { points: pts, source_ids: vec![40, 11, 10, 30] };
        assert_eq!(nearest_members(&c, &emb, 0, 1).unwrap(), vec![40]);
        // 11 and 10 are equidistant: lower id first.
        assert_eq!(nearest_members(&c, &emb, 0, 4).unwrap(), vec![40, 30, 10, 11]);
        assert_eq!(nearest_members(&c, &emb, 0, 99).unwrap().len(), 4);
        assert!(nearest_members(&c, &emb, 1, 1).is_err());
    }
}
