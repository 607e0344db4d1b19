//! Multifaceted feature visualization: collect the images a unit responds
//! to, embed their codes (PCA, then t-SNE), cluster the map with k-means,
//! and run activation maximization once per cluster, seeded from the mean
//! of the images nearest its centroid.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::actmax::{center_biased_maximize, maximize, AMConfig, AMResult, PhaseSchedule};
use crate::dataset::LabeledDataset;
use crate::embedding::{kmeans, nearest_members, pca_fit, pca_transform, tsne, Clustering, Embedding2D, TsneConfig};
use crate::error::{invalid, shape_err, Error, Result};
use crate::imageio;
use crate::network::{LayerKind, Network, UnitSelector, CODE_LAYER};
use crate::rng;
use crate::tensor::{lerp_images, resize_bilinear, write_flt1_file, Tensor};
use crate::Scalar;

/// A selection of dataset images, optionally ranked by a unit's activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub ids: Vec<usize>,
    pub activations: Option<Vec<f64>>,
    /// Strongest spatial position of the unit in each image (spatial units).
    pub locations: Option<Vec<(usize, usize)>>,
    /// Receptive-field window `(top, left, h, w)` of that position.
    pub patches: Option<Vec<(usize, usize, usize, usize)>>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Every image labeled `class`, in dataset order.
pub fn collect_class_images<T: Scalar>(ds: &LabeledDataset<T>, class: usize) -> Result<ImageSet> {
    if class >= ds.num_classes {
        return invalid(format!("class {class} does not exist ({} classes)", ds.num_classes));
    }
    let ids = ds.class_ids(class);
    if ids.is_empty() {
        return Err(Error::Data(format!("class {class} has no images")));
    }
    Ok(ImageSet { ids, activations: None, locations: None, patches: None })
}

/// The `ceil(top_fraction · N)` images with the highest activation, highest
/// first; equal activations keep dataset order.
pub fn collect_top_activating<T: Scalar>(
    ds: &LabeledDataset<T>,
    net: &Network<T>,
    sel: &UnitSelector,
    top_fraction: f64,
) -> Result<ImageSet> {
    if ds.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return invalid(format!("top_fraction must be in (0, 1], got {top_fraction}"));
    }
    let idx = net.check_selector(sel)?;
    let spatial = net.layers()[idx].out_dims().len() == 3;
    let scored: Vec<(f64, Option<(usize, usize)>)> = ds
        .images
        .par_iter()
        .map(|img| {
            let a = net.unit_activation(img, sel)?;
            let loc = match (spatial, sel.location) {
                (true, Some(l)) => Some(l),
                (true, None) => Some(net.argmax_location(img, &sel.layer, sel.unit)?),
                _ => None,
            };
            Ok((a, loc))
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0).then(a.cmp(&b)));
    let keep = ((top_fraction * ds.len() as f64).ceil() as usize).clamp(1, ds.len());
    order.truncate(keep);
    let activations = Some(order.iter().map(|&i| scored[i].0).collect());
    let (locations, patches) = if spatial {
        let locs: Vec<(usize, usize)> = order.iter().map(|&i| scored[i].1.expect("spatial location")).collect();
        let patches = locs.iter().map(|&(r, c)| net.receptive_field(&sel.layer, r, c)).collect::<Result<Vec<_>>>()?;
        (Some(locs), Some(patches))
    } else {
        (None, None)
    };
    Ok(ImageSet { ids: order, activations, locations, patches })
}

/// Element-wise mean of the listed images.
pub fn mean_image<T: Scalar>(ds: &LabeledDataset<T>, ids: &[usize]) -> Result<Tensor<T>> {
    if ids.is_empty() {
        return invalid("mean_image needs at least one image");
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= ds.len()) {
        return invalid(format!("image id {bad} out of range ({} images)", ds.len()));
    }
    let mut acc = vec![0.0; ds.images[ids[0]].len()];
    for &i in ids {
        for (a, v) in acc.iter_mut().zip(ds.images[i].data()) {
            *a += v.as_f64();
        }
    }
    let n = ids.len() as f64;
    Ok(Tensor::from_f64(ds.images[ids[0]].dims(), acc.into_iter().map(|s| s / n).collect()))
}

/// The optimizer run from each facet seed.
#[derive(Debug, Clone, PartialEq)]
pub enum FacetOptimizer<T: Scalar> {
    Plain(AMConfig<T>),
    CenterBiased(PhaseSchedule),
}

impl<T: Scalar> FacetOptimizer<T> {
    /// Runs from `seed` (network-input sized) on random stream `stream`.
    pub fn run(&self, net: &Network<T>, sel: &UnitSelector, seed: &Tensor<T>, stream: u64) -> Result<AMResult<T>> {
        match self {
            FacetOptimizer::Plain(cfg) => {
                let mut cfg = cfg.clone();
                let [h, w, _] = cfg.canvas_dims(net);
                cfg.seed_image =
                    Some(if (seed.height(), seed.width()) == (h, w) { seed.clone() } else { resize_bilinear(seed, h, w)? });
                cfg.rng_seed = rng::sub_seed(cfg.rng_seed, stream);
                maximize(net, sel, &cfg)
            }
            FacetOptimizer::CenterBiased(sched) => {
                let sched = PhaseSchedule { rng_seed: rng::sub_seed(sched.rng_seed, stream), ..sched.clone() };
                center_biased_maximize(net, sel, Some(seed), &sched)
            }
        }
    }

    pub fn validate(&self, net: &Network<T>) -> Result<()> {
        match self {
            FacetOptimizer::Plain(cfg) => cfg.validate(net),
            FacetOptimizer::CenterBiased(s) => s.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacetConfig<T: Scalar> {
    pub k: usize,
    /// Images averaged into each facet seed.
    pub m: usize,
    pub top_fraction: f64,
    /// Upper bound on PCA dimensions; also capped by the code width and N − 1.
    pub pca_dims: usize,
    pub code_layer: String,
    pub am: FacetOptimizer<T>,
    /// Perplexity is capped below (N − 1)/3 for small image sets.
    pub tsne: TsneConfig,
    pub kmeans_seed: u64,
}

impl<T: Scalar> Default for FacetConfig<T> {
    fn default() -> Self {
        FacetConfig {
            k: 10,
            m: 15,
            top_fraction: 0.02,
            pca_dims: 50,
            code_layer: CODE_LAYER.to_string(),
            am: FacetOptimizer::Plain(AMConfig::default()),
            tsne: TsneConfig::default(),
            kmeans_seed: 0,
        }
    }
}

impl<T: Scalar> FacetConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.k == 0 {
            problems.push("k must be >= 1".to_string());
        }
        if self.m == 0 {
            problems.push("m must be >= 1".to_string());
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            problems.push(format!("top_fraction must be in (0, 1], got {}", self.top_fraction));
        }
        if self.pca_dims == 0 {
            problems.push("pca_dims must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            invalid(problems.join("; "))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Facet<T: Scalar> {
    /// Dataset ids of every image in the cluster.
    pub members: Vec<usize>,
    pub centroid: [f64; 2],
    /// The images averaged into the seed, nearest to the centroid first.
    pub seed_ids: Vec<usize>,
    pub mean_image: Tensor<T>,
    pub visualization: AMResult<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacetSet<T: Scalar> {
    pub unit: UnitSelector,
    pub k: usize,
    pub facets: Vec<Facet<T>>,
    pub embedding: Embedding2D,
    pub clustering: Clustering,
    pub pca_dims: usize,
    pub perplexity: f64,
}

/// Code vectors of `set`, one row per image.
pub fn collect_codes<T: Scalar>(
    net: &Network<T>,
    sel: &UnitSelector,
    ds: &LabeledDataset<T>,
    set: &ImageSet,
    code_layer: &str,
) -> Result<Tensor<T>> {
    let idx = net.layer_index(code_layer)?;
    let spatial_code = net.layers()[idx].out_dims().len() == 3;
    let use_location = spatial_code && code_layer == sel.layer;
    let rows: Vec<Vec<T>> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let loc = if use_location { set.locations.as_ref().map(|l| l[i]).or(sel.location) } else { None };
            net.layer_code(&ds.images[set.ids[i]], code_layer, loc)
        })
        .collect::<Result<_>>()?;
    let d = rows[0].len();
    Tensor::from_vec(&[rows.len(), d], rows.into_iter().flatten().collect())
}

/// Perplexity actually used for `n` points: the configured value, capped just
/// under `(n − 1)/3`.
pub fn effective_perplexity(configured: f64, n: usize) -> f64 {
    configured.min(0.99 * (n as f64 - 1.0) / 3.0)
}

/// Everything of the pipeline before optimization: the embedding, the
/// clustering and one mean-image seed per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct FacetSeeds<T: Scalar> {
    pub embedding: Embedding2D,
    pub clustering: Clustering,
    /// `(seed_ids, mean_image)` per cluster.
    pub seeds: Vec<(Vec<usize>, Tensor<T>)>,
    pub pca_dims: usize,
    pub perplexity: f64,
}

/// Codes, PCA, t-SNE, k-means and mean images over image set `set`.
pub fn facet_seeds<T: Scalar>(
    net: &Network<T>,
    sel: &UnitSelector,
    ds: &LabeledDataset<T>,
    set: &ImageSet,
    cfg: &FacetConfig<T>,
) -> Result<FacetSeeds<T>> {
    cfg.validate()?;
    net.check_selector(sel)?;
    if set.len() < cfg.k {
        return invalid(format!("{} images cannot form {} facets", set.len(), cfg.k));
    }
    if set.len() < 5 {
        return invalid(format!("facet discovery needs at least 5 images, got {}", set.len()));
    }
    let codes = collect_codes(net, sel, ds, set, &cfg.code_layer)?;
    let (n, d) = (codes.dims()[0], codes.dims()[1]);
    let pca_dims = cfg.pca_dims.min(d).min(n - 1);
    let model = pca_fit(&codes, pca_dims)?;
    let projected = pca_transform(&model, &codes)?;
    let perplexity = effective_perplexity(cfg.tsne.perplexity, n);
    let embedding = tsne(&projected, &set.ids, &TsneConfig { perplexity, ..cfg.tsne.clone() })?;
    let clustering = kmeans(&embedding.points, cfg.k, cfg.kmeans_seed)?;
    let seeds = (0..cfg.k)
        .map(|c| {
            let seed_ids = nearest_members(&clustering, &embedding, c, cfg.m)?;
            let mean = mean_image(ds, &seed_ids)?;
            Ok((seed_ids, mean))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FacetSeeds { embedding, clustering, seeds, pca_dims, perplexity })
}

/// The full pipeline over image set `set`.
pub fn run_mfv<T: Scalar>(
    net: &Network<T>,
    sel: &UnitSelector,
    ds: &LabeledDataset<T>,
    set: &ImageSet,
    cfg: &FacetConfig<T>,
) -> Result<FacetSet<T>> {
    cfg.validate()?;
    cfg.am.validate(net)?;
    let FacetSeeds { embedding, clustering, seeds, pca_dims, perplexity } = facet_seeds(net, sel, ds, set, cfg)?;
    let visualizations = seeds
        .par_iter()
        .enumerate()
        .map(|(c, (_, mean))| cfg.am.run(net, sel, mean, c as u64))
        .collect::<Result<Vec<_>>>()?;
    let facets = seeds
        .into_iter()
        .zip(visualizations)
        .enumerate()
        .map(|(c, ((seed_ids, mean_image), visualization))| Facet {
            members: clustering.members(c).into_iter().map(|i| embedding.source_ids[i]).collect(),
            centroid: clustering.centroids[c],
            seed_ids,
            mean_image,
            visualization,
        })
        .collect();
    Ok(FacetSet { unit: sel.clone(), k: cfg.k, facets, embedding, clustering, pca_dims, perplexity })
}

/// Runs the optimizer from `img_a`, `steps` interpolants at `t = i/(steps+1)`,
/// and `img_b`. Every run uses the same random stream. Results are ordered by `t`.
pub fn interpolation_experiment<T: Scalar>(
    net: &Network<T>,
    sel: &UnitSelector,
    img_a: &Tensor<T>,
    img_b: &Tensor<T>,
    steps: usize,
    am: &FacetOptimizer<T>,
) -> Result<Vec<(f64, AMResult<T>)>> {
    if img_a.dims() != img_b.dims() {
        return shape_err(format!("endpoints differ in shape: {} vs {}", img_a.shape(), img_b.shape()));
    }
    if steps < 2 {
        return invalid(format!("interpolation needs at least 2 steps, got {steps}"));
    }
    let ts: Vec<f64> = (0..steps + 2).map(|i| i as f64 / (steps + 1) as f64).collect();
    ts.par_iter()
        .map(|&t| {
            let seed = lerp_images(img_a, img_b, t)?;
            Ok((t, am.run(net, sel, &seed, 0)?))
        })
        .collect()
}

/// Classes ranked by softmax score, highest first. Images larger than the
/// network input are center-cropped.
pub fn classify_visualization<T: Scalar>(net: &Network<T>, img: &Tensor<T>) -> Result<Vec<(usize, f64)>> {
    let d = net.input_dims();
    let x = if img.dims() == d { img.clone() } else { img.center_crop(d[0], d[1])? };
    let out = net.forward(&x)?.last().to_f64_vec();
    let probs = if matches!(net.layers().last().map(|l| &l.spec.kind), Some(LayerKind::Softmax)) {
        out
    } else {
        let mx = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = out.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    };
    let mut ranked: Vec<(usize, f64)> = probs.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

fn write_trace<T: Scalar>(path: &Path, r: &AMResult<T>) -> Result<()> {
    let mut s = String::from("iteration,activation,phase\n");
    for (i, a) in r.activation_trace.iter().enumerate() {
        let _ = writeln!(s, "{i},{a:.9e},{}", r.phase_of(i) + 1);
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Writes an optimization result as `<stem>.png`, `<stem>.flt1` and a trace CSV.
pub fn save_am_result<T: Scalar>(dir: &Path, stem: &str, r: &AMResult<T>, mean_intensity: &[f64]) -> Result<Vec<String>> {
    let raw = add_channel_offsets(&r.final_image, mean_intensity);
    imageio::write_png(dir.join(format!("{stem}.png")), &raw)?;
    write_flt1_file(dir.join(format!("{stem}.flt1")), &r.final_image)?;
    write_trace(&dir.join("trace.csv"), r)?;
    Ok(vec![format!("{stem}.png"), format!("{stem}.flt1"), "trace.csv".into()])
}

/// Adds per-channel offsets (e.g. a dataset mean) to a working-space image.
pub fn add_channel_offsets<T: Scalar>(img: &Tensor<T>, offsets: &[f64]) -> Tensor<T> {
    let c = img.channels();
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v.as_f64() + offsets.get(i % c).copied().unwrap_or(0.0))
        .collect();
    Tensor::from_f64(img.dims(), data)
}

impl<T: Scalar> FacetSet<T> {
    /// Writes `embedding.csv`, `clusters.csv` and one `facet_<i>` directory
    /// per facet. Returns the written paths relative to `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, mean_intensity: &[f64]) -> Result<Vec<String>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut emb = String::from("id,x,y,cluster\n");
        for (i, p) in self.embedding.points.iter().enumerate() {
            let _ = writeln!(emb, "{},{:.9e},{:.9e},{}", self.embedding.source_ids[i], p[0], p[1], self.clustering.assignments[i]);
        }
        std::fs::write(dir.join("embedding.csv"), emb)?;
        let mut clusters = String::from("cluster,size,centroid_x,centroid_y,seed_activation,final_activation\n");
        for (c, f) in self.facets.iter().enumerate() {
            let _ = writeln!(
                clusters,
                "{c},{},{:.9e},{:.9e},{:.9e},{:.9e}",
                f.members.len(),
                f.centroid[0],
                f.centroid[1],
                f.visualization.initial_activation,
                f.visualization.final_activation()
            );
        }
        std::fs::write(dir.join("clusters.csv"), clusters)?;
        let mut written = vec!["embedding.csv".to_string(), "clusters.csv".to_string()];
        for (c, f) in self.facets.iter().enumerate() {
            let sub = format!("facet_{c}");
            let fdir = dir.join(&sub);
            std::fs::create_dir_all(&fdir)?;
            imageio::write_png(fdir.join("mean.png"), &add_channel_offsets(&f.mean_image, mean_intensity))?;
            write_flt1_file(fdir.join("mean.flt1"), &f.mean_image)?;
            written.push(format!("{sub}/mean.png"));
            written.push(format!("{sub}/mean.flt1"));
            for name in save_am_result(&fdir, "viz", &f.visualization, mean_intensity)? {
                written.push(format!("{sub}/{name}"));
            }
        }
        Ok(written)
    }
}
