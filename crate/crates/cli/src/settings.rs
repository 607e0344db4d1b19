//! Typed settings read from a [`RunConfig`]. Everything here is validated
//! before any data is loaded; settings that depend on the dataset (input
//! size, clamp range, mean intensity) are resolved later by `build` methods.

use std::path::{Path, PathBuf};

use facetviz::actmax::{AMConfig, PhaseSchedule};
use facetviz::dataset::{load_directory, generate_shapes, LabeledDataset, ShapesSpec};
use facetviz::embedding::TsneConfig;
use facetviz::facets::{FacetConfig, FacetOptimizer};
use facetviz::network::{TrainConfig, UnitSelector, CLASS_LAYER, CODE_LAYER};
use facetviz::priors::JitterConfig;
use facetviz::tensor::resize_bilinear;
use facetviz::{imageio, Tensor};

use crate::config::{Reader, RunConfig};
use crate::error::{CliError, CliResult};

/// Keys whose values are file paths. Relative values are resolved against
/// the directory of the config file that sets them.
pub const PATH_KEYS: &[(&str, &str)] =
    &[("dataset", "path"), ("network", "weights"), ("interpolate", "image_a"), ("interpolate", "image_b")];

const SEED_IMAGE_WORDS: &[&str] = &["noise", "zero"];

fn is_path_key(section: &str, key: &str, value: &str) -> bool {
    PATH_KEYS.contains(&(section, key))
        || (key == "seed_image"
            && (section == "am" || section.starts_with("variant."))
            && !SEED_IMAGE_WORDS.iter().any(|w| value.eq_ignore_ascii_case(w)))
}

/// Loads and layers config files in order, resolving relative paths.
pub fn load_layered(paths: &[PathBuf]) -> CliResult<RunConfig> {
    let mut merged = RunConfig::default();
    for path in paths {
        let mut cfg = RunConfig::load(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut fixes = Vec::new();
        for sec in cfg.section_names() {
            for key in ["path", "weights", "image_a", "image_b", "seed_image"] {
                if let Some(v) = cfg.get(sec, key) {
                    if is_path_key(sec, key, v) && Path::new(v).is_relative() {
                        let joined = std::path::absolute(base.join(v)).unwrap_or_else(|_| base.join(v));
                        fixes.push((sec.to_string(), key, joined.display().to_string()));
                    }
                }
            }
        }
        for (sec, key, v) in fixes {
            cfg.set(&sec, key, v);
        }
        merged.merge(cfg);
    }
    Ok(merged)
}

fn missing_paths(cfg: &RunConfig) -> Vec<String> {
    let mut problems = Vec::new();
    for sec in cfg.section_names() {
        for key in ["path", "weights", "image_a", "image_b", "seed_image"] {
            if let Some(v) = cfg.get(sec, key) {
                if is_path_key(sec, key, v) && !Path::new(v).exists() {
                    problems.push(format!("'{sec}.{key}': path '{v}' does not exist"));
                }
            }
        }
    }
    problems
}

/// First of `sections` that sets `key`, so `[variant.x]` can fall back to `[am]`.
fn pick<'s>(cfg: &RunConfig, sections: &[&'s str], key: &str) -> &'s str {
    sections.iter().copied().find(|s| cfg.get(s, key).is_some()).unwrap_or(sections[0])
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Shapes(ShapesSpec),
    Directory { path: PathBuf, class_subdirs: bool },
}

impl DatasetSource {
    pub fn read(r: &mut Reader) -> Self {
        let source: String = r.get("dataset", "source", "shapes".to_string());
        match source.as_str() {
            "shapes" => {
                let preset: String = r.get("dataset", "preset", "default".to_string());
                let mut spec = match preset.as_str() {
                    "default" => ShapesSpec::default_spec(),
                    "planted" => ShapesSpec::planted_two_facet(),
                    other => {
                        r.problem(format!("'dataset.preset': unknown preset '{other}' (expected default or planted)"));
                        ShapesSpec::default_spec()
                    }
                };
                spec.images_per_class = r.get("dataset", "images_per_class", spec.images_per_class);
                spec.image_size = r.get("dataset", "image_size", spec.image_size);
                spec.rng_seed = r.get("dataset", "seed", spec.rng_seed);
                spec.pixel_noise = r.get("dataset", "pixel_noise", spec.pixel_noise);
                if let Err(e) = spec.validate() {
                    r.problem(format!("[dataset]: {e}"));
                }
                for key in ["path", "class_subdirs"] {
                    if r.config().get("dataset", key).is_some() {
                        r.problem(format!("'dataset.{key}' only applies to source = directory"));
                    }
                }
                DatasetSource::Shapes(spec)
            }
            "directory" => {
                let path: Option<String> = r.require("dataset", "path");
                let class_subdirs = r.get("dataset", "class_subdirs", true);
                for key in ["preset", "images_per_class", "image_size", "seed", "pixel_noise"] {
                    if r.config().get("dataset", key).is_some() {
                        r.problem(format!("'dataset.{key}' only applies to source = shapes"));
                    }
                }
                DatasetSource::Directory { path: PathBuf::from(path.unwrap_or_default()), class_subdirs }
            }
            other => {
                r.problem(format!("'dataset.source': unknown source '{other}' (expected shapes or directory)"));
                DatasetSource::Shapes(ShapesSpec::default_spec())
            }
        }
    }

    pub fn load(&self) -> CliResult<LabeledDataset<f32>> {
        Ok(match self {
            DatasetSource::Shapes(spec) => generate_shapes(spec)?,
            DatasetSource::Directory { path, class_subdirs } => load_directory(path, *class_subdirs)?,
        })
    }

    /// A fresh draw of the same distribution (seed + 1), centered on `train`.
    pub fn heldout(&self, train: &LabeledDataset<f32>) -> CliResult<Option<LabeledDataset<f32>>> {
        match self {
            DatasetSource::Shapes(spec) => {
                let spec = ShapesSpec { rng_seed: spec.rng_seed.wrapping_add(1), ..spec.clone() };
                Ok(Some(generate_shapes::<f32>(&spec)?.recentered(&train.mean_intensity)?))
            }
            DatasetSource::Directory { .. } => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeedImage {
    Noise,
    Zero,
    File(PathBuf),
}

/// Raw `[am]` (or `[variant.<name>]`) values; unset fields keep the
/// TV-plus-jitter defaults.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AmSettings {
    pub iterations: Option<usize>,
    pub learning_rate: Option<f64>,
    pub normalize_grad: Option<bool>,
    pub tv_lambda: Option<f64>,
    pub tv_inner_iters: Option<usize>,
    pub blur_sigma_start: Option<f64>,
    pub blur_sigma_end: Option<f64>,
    pub blur_every: Option<usize>,
    pub alpha: Option<f64>,
    pub alpha_weight: Option<f64>,
    /// `Some(None)` turns jitter off.
    pub canvas: Option<Option<usize>>,
    pub center_box: Option<Option<usize>>,
    pub grad_crop: Option<Option<usize>>,
    pub seed: u64,
    pub seed_image: Option<SeedImage>,
    pub clamp_lo: Option<f64>,
    pub clamp_hi: Option<f64>,
}

fn none_or<T: std::str::FromStr>(r: &mut Reader, sec: &str, key: &str) -> Option<Option<T>> {
    r.config().get(sec, key)?;
    Some(r.optional_value(sec, key, None))
}

impl AmSettings {
    pub fn read(r: &mut Reader, sections: &[&str]) -> Self {
        let cfg = r.config().clone();
        let at = |key: &str| pick(&cfg, sections, key).to_string();
        let s = AmSettings {
            iterations: r.opt(&at("iterations"), "iterations"),
            learning_rate: r.opt(&at("learning_rate"), "learning_rate"),
            normalize_grad: r.opt(&at("normalize_grad"), "normalize_grad"),
            tv_lambda: r.opt(&at("tv_lambda"), "tv_lambda"),
            tv_inner_iters: r.opt(&at("tv_inner_iters"), "tv_inner_iters"),
            blur_sigma_start: r.opt(&at("blur_sigma_start"), "blur_sigma_start"),
            blur_sigma_end: r.opt(&at("blur_sigma_end"), "blur_sigma_end"),
            blur_every: r.opt(&at("blur_every"), "blur_every"),
            alpha: r.opt(&at("alpha"), "alpha"),
            alpha_weight: r.opt(&at("alpha_weight"), "alpha_weight"),
            canvas: none_or(r, &at("jitter.canvas"), "jitter.canvas"),
            center_box: none_or(r, &at("jitter.center_box"), "jitter.center_box"),
            grad_crop: none_or(r, &at("grad_crop"), "grad_crop"),
            seed: r.get(&at("seed"), "seed", 0),
            seed_image: cfg.get(&at("seed_image"), "seed_image").map(|v| match v.to_ascii_lowercase().as_str() {
                "noise" => SeedImage::Noise,
                "zero" => SeedImage::Zero,
                _ => SeedImage::File(PathBuf::from(v)),
            }),
            clamp_lo: r.opt(&at("clamp_lo"), "clamp_lo"),
            clamp_hi: r.opt(&at("clamp_hi"), "clamp_hi"),
        };
        if s.canvas == Some(None) && matches!(s.center_box, Some(Some(_))) {
            r.problem(format!("[{}]: jitter.center_box needs jitter.canvas", sections[0]));
        }
        s
    }

    /// Resolves against the dataset's input size, clamp range and mean.
    pub fn build(&self, ds: &LabeledDataset<f32>) -> CliResult<AMConfig<f32>> {
        let d = ds.image_dims();
        let input = (d[0], d[1]);
        let range = ds.pixel_range();
        let clamp = (self.clamp_lo.unwrap_or(range.0), self.clamp_hi.unwrap_or(range.1));
        let mut cfg = AMConfig::<f32>::tv_jitter(input, clamp);
        cfg.rng_seed = self.seed;
        macro_rules! set {
            ($field:ident => $target:expr) => {
                if let Some(v) = self.$field {
                    $target = v;
                }
            };
        }
        set!(iterations => cfg.iterations);
        set!(learning_rate => cfg.learning_rate);
        set!(normalize_grad => cfg.normalize_grad);
        set!(tv_lambda => cfg.reg.tv_lambda);
        set!(tv_inner_iters => cfg.reg.tv_inner_iters);
        set!(blur_sigma_start => cfg.reg.blur_sigma_start);
        set!(blur_sigma_end => cfg.reg.blur_sigma_end);
        set!(blur_every => cfg.reg.blur_every);
        set!(alpha => cfg.reg.alpha);
        set!(alpha_weight => cfg.reg.alpha_weight);
        set!(grad_crop => cfg.grad_crop);
        if let Some(canvas) = self.canvas {
            cfg.reg.jitter = canvas.map(|c| JitterConfig::new((c, c), input));
        }
        if let (Some(b), Some(j)) = (self.center_box, cfg.reg.jitter.as_mut()) {
            j.center_box = b;
        }
        let (ch, cw) = cfg.reg.jitter.as_ref().map_or(input, |j| (j.canvas_h, j.canvas_w));
        cfg.seed_image = match &self.seed_image {
            None | Some(SeedImage::Noise) => None,
            Some(SeedImage::Zero) => Some(Tensor::zeros(&[ch, cw, d[2]])),
            Some(SeedImage::File(p)) => Some(working_image(ds, p, (ch, cw))?),
        };
        Ok(cfg)
    }
}

/// Reads a PNG into the dataset's working space at `size`.
pub fn working_image(ds: &LabeledDataset<f32>, path: &Path, size: (usize, usize)) -> CliResult<Tensor<f32>> {
    let raw = imageio::read_png(path)?;
    let c = ds.image_dims()[2];
    if raw.channels() != c {
        return Err(CliError::new(
            crate::error::Category::Shape,
            format!("'{}' has {} channels, the dataset {c}", path.display(), raw.channels()),
        ));
    }
    let img = ds.to_working(&raw);
    Ok(if (img.height(), img.width()) == size { img } else { resize_bilinear(&img, size.0, size.1)? })
}

/// `[schedule]` layered on the reference schedule. Canvas extents are
/// reference pixels; an unset clamp is filled in from the dataset later.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSettings {
    pub schedule: PhaseSchedule,
    pub clamp: Option<(f64, f64)>,
}

impl ScheduleSettings {
    pub fn read(r: &mut Reader) -> Self {
        let mut s = PhaseSchedule::reference();
        let n = s.phases.len();
        s.reference_input = r.get("schedule", "reference_input", s.reference_input);
        s.intensity_range = r.get("schedule", "intensity_range", s.intensity_range);
        s.tv_inner_iters = r.get("schedule", "tv_inner_iters", s.tv_inner_iters);
        s.rng_seed = r.get("schedule", "seed", s.rng_seed);
        let list = |r: &mut Reader, key: &str, absent: &[&str]| -> Option<Vec<Option<f64>>> {
            let v = r.list::<f64>("schedule", key, absent)?;
            if v.len() != n {
                r.problem(format!("'schedule.{key}' needs {n} values, got {}", v.len()));
                return None;
            }
            Some(v)
        };
        if let Some(v) = list(r, "tv_lambda", &[]) {
            v.iter().zip(&mut s.phases).for_each(|(x, p)| p.tv_lambda = x.unwrap_or_default());
        }
        if let Some(v) = list(r, "learning_rate", &[]) {
            v.iter().zip(&mut s.phases).for_each(|(x, p)| p.learning_rate = x.unwrap_or_default());
        }
        if let Some(v) = list(r, "iterations", &[]) {
            for (x, p) in v.iter().zip(&mut s.phases) {
                let x = x.unwrap_or_default();
                if x < 0.0 || x.fract() != 0.0 {
                    r.problem(format!("'schedule.iterations': {x} is not a whole number"));
                }
                p.iterations = x as usize;
            }
        }
        let reference = s.reference_input as f64;
        if let Some(v) = list(r, "canvas", &[]) {
            v.iter().zip(&mut s.phases).for_each(|(x, p)| p.canvas_scale = x.unwrap_or_default() / reference);
        }
        if let Some(v) = list(r, "grad_crop", &["none"]) {
            v.iter().zip(&mut s.phases).for_each(|(x, p)| p.grad_crop = x.map(|k| k.round() as usize));
        }
        if let Some(v) = list(r, "jitter_center_box", &["anywhere"]) {
            v.iter().zip(&mut s.phases).for_each(|(x, p)| p.jitter_center_box = *x);
        }
        let clamp = match (r.opt::<f64>("schedule", "clamp_lo"), r.opt::<f64>("schedule", "clamp_hi")) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            (None, None) => None,
            _ => {
                r.problem("'schedule.clamp_lo' and 'schedule.clamp_hi' must be set together");
                None
            }
        };
        if let Some(c) = clamp {
            s.clamp = c;
        }
        if let Err(e) = s.validate() {
            r.problem(format!("[schedule]: {e}"));
        }
        ScheduleSettings { schedule: s, clamp }
    }

    pub fn build(&self, ds: &LabeledDataset<f32>) -> PhaseSchedule {
        PhaseSchedule { clamp: self.clamp.unwrap_or_else(|| ds.pixel_range()), ..self.schedule.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Collect {
    Class(usize),
    Top,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Plain,
    Center,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacetSettings {
    pub k: usize,
    pub m: usize,
    pub top_fraction: f64,
    pub pca_dims: usize,
    pub code_layer: String,
    pub collect: Collect,
    pub perplexity: f64,
    pub tsne_iterations: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl FacetSettings {
    pub fn read(r: &mut Reader, unit: &UnitSelector) -> Self {
        let collect_word: String =
            r.get("facet", "collect", if unit.layer == CLASS_LAYER { "class" } else { "top" }.to_string());
        let collect = match collect_word.as_str() {
            "class" => Collect::Class(r.get("facet", "class", unit.unit)),
            "top" => Collect::Top,
            other => {
                r.problem(format!("'facet.collect': unknown value '{other}' (expected class or top)"));
                Collect::Top
            }
        };
        let optimizer = match r.get("facet", "optimizer", "plain".to_string()).as_str() {
            "plain" => OptimizerKind::Plain,
            "center" => OptimizerKind::Center,
            other => {
                r.problem(format!("'facet.optimizer': unknown value '{other}' (expected plain or center)"));
                OptimizerKind::Plain
            }
        };
        let s = FacetSettings {
            k: r.get("facet", "k", 10),
            m: r.get("facet", "m", 15),
            top_fraction: r.get("facet", "top_fraction", 0.02),
            pca_dims: r.get("facet", "pca_dims", 50),
            code_layer: r.get("facet", "code_layer", CODE_LAYER.to_string()),
            collect,
            perplexity: r.get("facet", "perplexity", 30.0),
            tsne_iterations: r.get("facet", "tsne_iterations", 1000),
            seed: r.get("facet", "seed", 0),
            optimizer,
        };
        if let Err(e) = s.build(FacetOptimizer::Plain(AMConfig::default())).validate() {
            r.problem(format!("[facet]: {e}"));
        }
        if !(s.perplexity > 1.0) {
            r.problem(format!("'facet.perplexity' must exceed 1, got {}", s.perplexity));
        }
        s
    }

    /// t-SNE and k-means seeds are separate streams of `facet.seed`.
    pub fn build(&self, am: FacetOptimizer<f32>) -> FacetConfig<f32> {
        FacetConfig {
            k: self.k,
            m: self.m,
            top_fraction: self.top_fraction,
            pca_dims: self.pca_dims,
            code_layer: self.code_layer.clone(),
            am,
            tsne: TsneConfig {
                perplexity: self.perplexity,
                iterations: self.tsne_iterations,
                rng_seed: facetviz::rng::sub_seed(self.seed, 1),
                ..TsneConfig::default()
            },
            kmeans_seed: facetviz::rng::sub_seed(self.seed, 2),
        }
    }
}

pub fn read_unit(r: &mut Reader) -> UnitSelector {
    let layer: String = r.get("unit", "layer", CLASS_LAYER.to_string());
    let index: usize = r.get("unit", "index", 0);
    match (r.opt::<usize>("unit", "row"), r.opt::<usize>("unit", "col")) {
        (Some(row), Some(col)) => UnitSelector::at(layer, index, row, col),
        (None, None) => UnitSelector::new(layer, index),
        _ => {
            r.problem("'unit.row' and 'unit.col' must be set together");
            UnitSelector::new(layer, index)
        }
    }
}

pub fn read_train(r: &mut Reader) -> TrainConfig {
    let d = TrainConfig::default();
    let t = TrainConfig {
        learning_rate: r.get("train", "learning_rate", d.learning_rate),
        momentum: r.get("train", "momentum", d.momentum),
        epochs: r.get("train", "epochs", d.epochs),
        batch_size: r.get("train", "batch_size", d.batch_size),
        rng_seed: r.get("train", "seed", d.rng_seed),
    };
    if let Err(e) = t.validate() {
        r.problem(format!("[train]: {e}"));
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub enum Endpoints {
    Facets(usize, usize),
    Images(PathBuf, PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolateSettings {
    pub steps: usize,
    pub endpoints: Endpoints,
}

impl InterpolateSettings {
    pub fn read(r: &mut Reader, k: usize) -> Self {
        let steps = r.get("interpolate", "steps", 8);
        if steps < 2 {
            r.problem(format!("'interpolate.steps' must be >= 2, got {steps}"));
        }
        let a: Option<String> = r.opt("interpolate", "image_a");
        let b: Option<String> = r.opt("interpolate", "image_b");
        let endpoints = match (a, b) {
            (Some(a), Some(b)) => {
                for key in ["facet_a", "facet_b"] {
                    if r.config().get("interpolate", key).is_some() {
                        r.problem(format!("'interpolate.{key}' conflicts with image endpoints"));
                    }
                }
                Endpoints::Images(a.into(), b.into())
            }
            (None, None) => {
                let (fa, fb) = (r.get("interpolate", "facet_a", 0), r.get("interpolate", "facet_b", 1));
                for f in [fa, fb] {
                    if f >= k {
                        r.problem(format!("interpolation endpoint facet {f} does not exist (k = {k})"));
                    }
                }
                Endpoints::Facets(fa, fb)
            }
            _ => {
                r.problem("'interpolate.image_a' and 'interpolate.image_b' must be set together");
                Endpoints::Facets(0, 1)
            }
        };
        InterpolateSettings { steps, endpoints }
    }
}

/// Named `[variant.<name>]` overrides on top of `[am]`.
pub fn read_variants(r: &mut Reader) -> Vec<(String, AmSettings)> {
    let names: Option<String> = r.require("compare", "variants");
    let names: Vec<String> = names.unwrap_or_default().split_whitespace().map(str::to_string).collect();
    if names.is_empty() {
        r.problem("'compare.variants' lists no variants");
    }
    let declared: Vec<String> =
        r.config().section_names().filter_map(|s| s.strip_prefix("variant.")).map(str::to_string).collect();
    for d in &declared {
        if !names.contains(d) {
            r.problem(format!("[variant.{d}] is not listed in 'compare.variants'"));
        }
    }
    let mut out: Vec<(String, AmSettings)> = Vec::new();
    for n in names {
        if out.iter().any(|(m, _)| *m == n) {
            r.problem(format!("variant '{n}' listed twice"));
            continue;
        }
        let sec = format!("variant.{n}");
        let s = AmSettings::read(r, &[sec.as_str(), "am"]);
        out.push((n, s));
    }
    out
}

/// Unknown keys plus missing paths, reported together.
pub fn structural_problems(cfg: &RunConfig) -> Vec<String> {
    let mut problems = cfg.unknown_keys(crate::config::SCHEMA);
    problems.extend(missing_paths(cfg));
    problems
}
