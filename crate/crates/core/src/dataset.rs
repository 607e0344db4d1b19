//! Synthetic shape datasets with planted facets, plus directory ingestion.
//!
//! Images are stored mean-subtracted: `pixel − mean_intensity[channel]`, with
//! raw pixels in `[0, 1]`. Exported PNGs hold the raw pixels.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::imageio;
use crate::rng;
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
    Cross,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Cross => "cross",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "square" => Some(ShapeKind::Square),
            "circle" => Some(ShapeKind::Circle),
            "triangle" => Some(ShapeKind::Triangle),
            "cross" => Some(ShapeKind::Cross),
            _ => None,
        }
    }

    /// Point test in units of the shape's half-extent `r`.
    fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
            ShapeKind::Circle => dx * dx + dy * dy <= r * r,
            ShapeKind::Triangle => dy.abs() <= r && dx.abs() <= (dy + r) / 2.0,
            ShapeKind::Cross => {
                let arm = r / 3.0;
                (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
            }
        }
    }
}

/// One planted mode of a class.
#[derive(Debug, Clone, PartialEq)]
pub struct FacetSpec {
    pub fill: [f64; 3],
    pub background: [f64; 3],
    /// Objects per image, 1 to 3.
    pub count: usize,
    /// Standard deviation of per-object position noise, in pixels.
    pub jitter: f64,
    /// Replaces the class shape for this facet only.
    pub shape: Option<ShapeKind>,
}

impl FacetSpec {
    pub fn new(fill: [f64; 3], background: [f64; 3], count: usize) -> Self {
        FacetSpec { fill, background, count, jitter: 1.5, shape: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub shape: ShapeKind,
    pub facets: Vec<FacetSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapesSpec {
    pub classes: Vec<ClassSpec>,
    pub images_per_class: usize,
    pub image_size: usize,
    pub rng_seed: u64,
    /// Standard deviation of additive pixel noise in `[0, 1]` units.
    pub pixel_noise: f64,
}

const RED: [f64; 3] = [0.9, 0.1, 0.1];
const GREEN: [f64; 3] = [0.1, 0.85, 0.15];
const BLUE: [f64; 3] = [0.15, 0.25, 0.95];
const YELLOW: [f64; 3] = [0.95, 0.9, 0.1];
const CYAN: [f64; 3] = [0.1, 0.85, 0.9];
const MAGENTA: [f64; 3] = [0.85, 0.15, 0.85];
const ORANGE: [f64; 3] = [0.95, 0.55, 0.1];
const WHITE: [f64; 3] = [0.95, 0.95, 0.95];
const DARK: [f64; 3] = [0.08, 0.08, 0.1];
const GREY: [f64; 3] = [0.55, 0.55, 0.55];
const NAVY: [f64; 3] = [0.05, 0.05, 0.35];

impl ShapesSpec {
    /// Four classes (square, circle, triangle, cross), three facets each,
    /// varying in color, object count and background.
    pub fn default_spec() -> Self {
        use ShapeKind::*;
        let class = |shape, facets| ClassSpec { shape, facets };
        ShapesSpec {
            classes: vec![
                class(
                    Square,
                    vec![
                        FacetSpec::new(RED, DARK, 1),
                        FacetSpec::new(GREEN, DARK, 2),
                        FacetSpec::new(BLUE, GREY, 1),
                    ],
                ),
                class(
                    Circle,
                    vec![
                        FacetSpec::new(YELLOW, DARK, 1),
                        FacetSpec::new(RED, GREY, 3),
                        FacetSpec::new(CYAN, DARK, 1),
                    ],
                ),
                class(
                    Triangle,
                    vec![
                        FacetSpec::new(GREEN, DARK, 1),
                        FacetSpec::new(MAGENTA, DARK, 2),
                        FacetSpec::new(WHITE, NAVY, 1),
                    ],
                ),
                class(
                    Cross,
                    vec![
                        FacetSpec::new(BLUE, DARK, 1),
                        FacetSpec::new(ORANGE, DARK, 1),
                        FacetSpec::new(RED, GREY, 2),
                    ],
                ),
            ],
            images_per_class: 150,
            image_size: 32,
            rng_seed: 1,
            pixel_noise: 0.03,
        }
    }

    /// Class 0 mixes red squares and green circles under one label; the
    /// remaining classes are single-facet distractors.
    pub fn planted_two_facet() -> Self {
        use ShapeKind::*;
        let mut circle = FacetSpec::new(GREEN, DARK, 1);
        circle.shape = Some(Circle);
        ShapesSpec {
            classes: vec![
                ClassSpec { shape: Square, facets: vec![FacetSpec::new(RED, DARK, 1), circle] },
                ClassSpec { shape: Triangle, facets: vec![FacetSpec::new(BLUE, DARK, 1)] },
                ClassSpec { shape: Cross, facets: vec![FacetSpec::new(YELLOW, DARK, 1)] },
                ClassSpec { shape: Circle, facets: vec![FacetSpec::new(MAGENTA, GREY, 2)] },
            ],
            images_per_class: 150,
            image_size: 32,
            rng_seed: 1,
            pixel_noise: 0.03,
        }
    }

    pub fn num_facets(&self) -> usize {
        self.classes.iter().map(|c| c.facets.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.classes.len() < 2 {
            problems.push(format!("need at least 2 classes, got {}", self.classes.len()));
        }
        if self.images_per_class == 0 {
            problems.push("images_per_class must be positive".to_string());
        }
        if self.image_size < 8 {
            problems.push(format!("image_size must be at least 8, got {}", self.image_size));
        }
        if !(self.pixel_noise >= 0.0 && self.pixel_noise.is_finite()) {
            problems.push(format!("pixel_noise must be a finite non-negative number, got {}", self.pixel_noise));
        }
        for (ci, class) in self.classes.iter().enumerate() {
            if class.facets.is_empty() {
                problems.push(format!("class {ci} has no facets"));
            }
            for (fi, f) in class.facets.iter().enumerate() {
                if !(1..=3).contains(&f.count) {
                    problems.push(format!("class {ci} facet {fi}: count must be 1, 2 or 3, got {}", f.count));
                }
                if !(f.jitter >= 0.0 && f.jitter.is_finite()) {
                    problems.push(format!("class {ci} facet {fi}: jitter must be finite and non-negative"));
                }
                let in_unit = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
                if !in_unit(&f.fill) || !in_unit(&f.background) {
                    problems.push(format!("class {ci} facet {fi}: colors must lie in [0, 1]"));
                }
                for (gi, g) in class.facets.iter().enumerate().skip(fi + 1) {
                    if g.fill == f.fill && g.background == f.background {
                        problems.push(format!("class {ci}: facets {fi} and {gi} share the same colors"));
                    }
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

impl Default for ShapesSpec {
    fn default() -> Self {
        ShapesSpec::default_spec()
    }
}

/// Images with class labels; parallel vectors share one index.
#[derive(Debug, Clone)]
pub struct LabeledDataset<T: Scalar> {
    /// Mean-subtracted images, all the same shape.
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
    pub facet_labels: Option<Vec<usize>>,
    /// Per-channel mean of the raw `[0, 1]` pixels.
    pub mean_intensity: Vec<f64>,
    pub num_classes: usize,
    pub seed: Option<u64>,
}

impl<T: Scalar> LabeledDataset<T> {
    /// Builds a dataset from raw `[0, 1]` images, subtracting the per-channel mean.
    pub fn from_raw(
        raw: Vec<Tensor<T>>,
        labels: Vec<usize>,
        facet_labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        if labels.len() != raw.len() || facet_labels.as_ref().is_some_and(|f| f.len() != raw.len()) {
            return Err(Error::Shape("label vectors must match the image count".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!("label {bad} out of range for {num_classes} classes")));
        }
        let dims = raw[0].dims().to_vec();
        let (_, _, c) = raw[0].image_dims()?;
        let mut mean = vec![0.0; c];
        for (i, img) in raw.iter().enumerate() {
            if img.dims() != dims.as_slice() {
                return Err(Error::Shape(format!("image {i} has shape {} but image 0 has {}", img.shape(), raw[0].shape())));
            }
            for (m, v) in mean.iter_mut().zip(img.channel_means()?) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= raw.len() as f64);
        let images = raw.into_iter().map(|img| subtract_channels(&img, &mean, -1.0)).collect();
        Ok(LabeledDataset { images, labels, facet_labels, mean_intensity: mean, num_classes, seed: None })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_dims(&self) -> &[usize] {
        self.images[0].dims()
    }

    /// Indices of every image with the given label, in dataset order.
    pub fn class_ids(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// Image `i` in raw `[0, 1]` units.
    pub fn raw_image(&self, i: usize) -> Tensor<T> {
        self.to_raw(&self.images[i])
    }

    /// Adds the dataset mean back to a working-space image.
    pub fn to_raw(&self, img: &Tensor<T>) -> Tensor<T> {
        subtract_channels(img, &self.mean_intensity, 1.0)
    }

    /// Subtracts the dataset mean from a raw image.
    pub fn to_working(&self, raw: &Tensor<T>) -> Tensor<T> {
        subtract_channels(raw, &self.mean_intensity, -1.0)
    }

    /// Re-centers every image on `mean` instead of this dataset's own mean,
    /// e.g. to evaluate a held-out set in a training set's working space.
    pub fn recentered(&self, mean: &[f64]) -> Result<Self> {
        if mean.len() != self.mean_intensity.len() {
            return Err(Error::Shape(format!("{} channel means for {} channels", mean.len(), self.mean_intensity.len())));
        }
        let shift: Vec<f64> = self.mean_intensity.iter().zip(mean).map(|(a, b)| a - b).collect();
        let images = self.images.iter().map(|img| subtract_channels(img, &shift, 1.0)).collect();
        Ok(LabeledDataset { images, mean_intensity: mean.to_vec(), ..self.clone() })
    }

    /// Working-space bounds spanning every channel: `(−max mean, 1 − min mean)`.
    pub fn pixel_range(&self) -> (f64, f64) {
        let lo = self.mean_intensity.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let hi = self.mean_intensity.iter().cloned().fold(f64::INFINITY, f64::min);
        (-lo, 1.0 - hi)
    }

    /// Writes `class_<i>/img_<id>.png`, `facets.csv` and `meta` under `dir`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for c in 0..self.num_classes {
            std::fs::create_dir_all(dir.join(format!("class_{c}")))?;
        }
        let mut csv = String::from("id,class,facet\n");
        for i in 0..self.len() {
            let path = dir.join(format!("class_{}", self.labels[i])).join(image_name(i));
            imageio::write_png(&path, &self.raw_image(i))?;
            let facet = self.facet_labels.as_ref().map(|f| f[i].to_string()).unwrap_or_default();
            let _ = writeln!(csv, "{i},{},{facet}", self.labels[i]);
        }
        std::fs::write(dir.join("facets.csv"), csv)?;
        let dims = self.image_dims();
        let mut meta = String::new();
        let means: Vec<String> = self.mean_intensity.iter().map(|m| format!("{m:.9}")).collect();
        let _ = writeln!(meta, "mean_intensity = {}", means.join(" "));
        let _ = writeln!(meta, "size = {} {} {}", dims[0], dims[1], dims[2]);
        let _ = writeln!(meta, "classes = {}", self.num_classes);
        let _ = writeln!(meta, "seed = {}", self.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into()));
        std::fs::write(dir.join("meta"), meta)?;
        Ok(())
    }
}

fn image_name(id: usize) -> String {
    format!("img_{id:05}.png")
}

fn subtract_channels<T: Scalar>(img: &Tensor<T>, mean: &[f64], sign: f64) -> Tensor<T> {
    let c = mean.len();
    let data = img.to_f64_vec().iter().enumerate().map(|(i, v)| v + sign * mean[i % c]).collect();
    Tensor::from_f64(img.dims(), data)
}

fn layout(count: usize, size: f64) -> (f64, Vec<(f64, f64)>) {
    let at = |x: f64, y: f64| (x * size, y * size);
    match count {
        1 => (0.28 * size, vec![at(0.5, 0.5)]),
        2 => (0.17 * size, vec![at(0.28, 0.5), at(0.72, 0.5)]),
        _ => (0.15 * size, vec![at(0.27, 0.3), at(0.73, 0.3), at(0.5, 0.72)]),
    }
}

/// Rasterizes one facet instance in raw `[0, 1]` units with 4×4 supersampling.
fn render(shape: ShapeKind, facet: &FacetSpec, size: usize, noise: f64, rng: &mut rng::Rng) -> Vec<f64> {
    const SS: usize = 4;
    let (r0, centers) = layout(facet.count, size as f64);
    let scale = rng.random_range(0.85..1.15);
    let r = r0 * scale;
    let jitter = Normal::new(0.0, facet.jitter.max(1e-12)).expect("finite jitter");
    let centers: Vec<(f64, f64)> = centers
        .into_iter()
        .map(|(x, y)| {
            if facet.jitter > 0.0 {
                (x + jitter.sample(rng), y + jitter.sample(rng))
            } else {
                (x, y)
            }
        })
        .collect();
    let pixel_noise = Normal::new(0.0, noise.max(1e-12)).expect("finite noise");
    let mut out = Vec::with_capacity(size * size * 3);
    for py in 0..size {
        for px in 0..size {
            let mut hits = 0usize;
            for sy in 0..SS {
                for sx in 0..SS {
                    let x = px as f64 + (sx as f64 + 0.5) / SS as f64;
                    let y = py as f64 + (sy as f64 + 0.5) / SS as f64;
                    if centers.iter().any(|&(cx, cy)| shape.contains(x - cx, y - cy, r)) {
                        hits += 1;
                    }
                }
            }
            let cov = hits as f64 / (SS * SS) as f64;
            for ch in 0..3 {
                let mut v = facet.background[ch] * (1.0 - cov) + facet.fill[ch] * cov;
                if noise > 0.0 {
                    v += pixel_noise.sample(rng);
                }
                out.push(v.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Generates `images_per_class` images per class in class order. Each image
/// draws its facet uniformly from the class's facet list.
pub fn generate_shapes<T: Scalar>(spec: &ShapesSpec) -> Result<LabeledDataset<T>> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.rng_seed);
    let n = spec.images_per_class * spec.classes.len();
    let (mut raw, mut labels, mut facets) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (ci, class) in spec.classes.iter().enumerate() {
        for _ in 0..spec.images_per_class {
            let fi = rng.random_range(0..class.facets.len());
            let facet = &class.facets[fi];
            let pixels = render(facet.shape.unwrap_or(class.shape), facet, spec.image_size, spec.pixel_noise, &mut rng);
            raw.push(Tensor::from_f64(&[spec.image_size, spec.image_size, 3], pixels));
            labels.push(ci);
            facets.push(fi);
        }
    }
    let mut ds = LabeledDataset::from_raw(raw, labels, Some(facets), spec.classes.len())?;
    ds.seed = Some(spec.rng_seed);
    Ok(ds)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.retain(|p| !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')));
    entries.sort();
    Ok(entries)
}

fn is_png(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Parses `facets.csv` into `id → (class, facet)`.
fn read_facets_csv(path: &Path) -> Result<HashMap<usize, (usize, Option<usize>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Data(format!("{}:{}: malformed row '{line}'", path.display(), lineno + 1));
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(bad());
        }
        let id = cols[0].parse().map_err(|_| bad())?;
        let class = cols[1].parse().map_err(|_| bad())?;
        let facet = if cols[2].is_empty() { None } else { Some(cols[2].parse().map_err(|_| bad())?) };
        map.insert(id, (class, facet));
    }
    Ok(map)
}

fn image_id(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.strip_prefix("img_")?.parse().ok()
}

/// Loads PNG images from `path`. With `class_subdirs`, each subdirectory (in
/// alphabetical order) is one class; otherwise every PNG in `path` is class 0.
/// A `facets.csv` next to the images supplies labels and planted facets by
/// image id. Images come back ordered by label, then by file name.
pub fn load_directory<T: Scalar>(path: impl AsRef<Path>, class_subdirs: bool) -> Result<LabeledDataset<T>> {
    let root = path.as_ref();
    if !root.is_dir() {
        return Err(Error::Data(format!("'{}' is not a directory", root.display())));
    }
    let allowed_root_files = ["facets.csv", "meta"];
    let mut groups: Vec<Vec<PathBuf>> = Vec::new();
    let reject = |p: &Path| Error::Data(format!("'{}' is not a PNG image", p.display()));
    if class_subdirs {
        for entry in sorted_entries(root)? {
            if entry.is_dir() {
                let mut files = Vec::new();
                for f in sorted_entries(&entry)? {
                    if !is_png(&f) {
                        return Err(reject(&f));
                    }
                    files.push(f);
                }
                groups.push(files);
            } else if !entry.file_name().and_then(|n| n.to_str()).is_some_and(|n| allowed_root_files.contains(&n)) {
                return Err(reject(&entry));
            }
        }
    } else {
        let mut files = Vec::new();
        for f in sorted_entries(root)? {
            if f.file_name().and_then(|n| n.to_str()).is_some_and(|n| allowed_root_files.contains(&n)) {
                continue;
            }
            if !is_png(&f) {
                return Err(reject(&f));
            }
            files.push(f);
        }
        groups.push(files);
    }
    if groups.iter().all(|g| g.is_empty()) {
        return Err(Error::Data(format!("no images found under '{}'", root.display())));
    }

    let csv_path = root.join("facets.csv");
    let table = if csv_path.is_file() { Some(read_facets_csv(&csv_path)?) } else { None };
    let mut items: Vec<(usize, Option<usize>, PathBuf)> = Vec::new();
    for (gi, group) in groups.into_iter().enumerate() {
        for f in group {
            let row = table.as_ref().and_then(|t| image_id(&f).and_then(|id| t.get(&id)));
            let (class, facet) = match row {
                Some(&(c, fac)) => (c, fac),
                None => (gi, None),
            };
            items.push((class, facet, f));
        }
    }
    items.sort_by(|a, b| (a.0, a.2.file_name()).cmp(&(b.0, b.2.file_name())));
    let num_classes = items.iter().map(|it| it.0).max().unwrap_or(0) + 1;
    let all_facets = items.iter().all(|it| it.1.is_some());
    let mut raw = Vec::with_capacity(items.len());
    for (_, _, f) in &items {
        raw.push(imageio::read_png::<T>(f)?);
    }
    let labels = items.iter().map(|it| it.0).collect();
    let facet_labels = all_facets.then(|| items.iter().map(|it| it.1.unwrap()).collect());
    LabeledDataset::from_raw(raw, labels, facet_labels, num_classes)
}

/// Mean working-space color of every (class, facet) pair; `[class][facet]`.
pub fn facet_mean_colors<T: Scalar>(ds: &LabeledDataset<T>) -> Result<Vec<Vec<[f64; 3]>>> {
    let facets = ds.facet_labels.as_ref().ok_or_else(|| Error::Data("dataset has no facet labels".into()))?;
    let mut sums: Vec<Vec<([f64; 3], usize)>> = vec![Vec::new(); ds.num_classes];
    for i in 0..ds.len() {
        let slot = &mut sums[ds.labels[i]];
        if slot.len() <= facets[i] {
            slot.resize(facets[i] + 1, ([0.0; 3], 0));
        }
        let m = ds.images[i].channel_means()?;
        let (acc, n) = &mut slot[facets[i]];
        for ch in 0..3 {
            acc[ch] += m[ch];
        }
        *n += 1;
    }
    Ok(sums
        .into_iter()
        .map(|v| v.into_iter().map(|(a, n)| a.map(|x| x / n.max(1) as f64)).collect())
        .collect())
}

/// Index of the facet in `refs` whose mean color is closest to `img`'s.
pub fn nearest_facet_by_color<T: Scalar>(img: &Tensor<T>, refs: &[[f64; 3]]) -> Result<usize> {
    let m = img.channel_means()?;
    let dist = |r: &[f64; 3]| (0..3).map(|c| (m[c] - r[c]).powi(2)).sum::<f64>();
    match (0..refs.len()).min_by(|&a, &b| dist(&refs[a]).total_cmp(&dist(&refs[b]))) {
        Some(i) => Ok(i),
        None => invalid("no reference facets"),
    }
}
