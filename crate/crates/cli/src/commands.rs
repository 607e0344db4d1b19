//! Subcommand execution: read settings, load inputs, create the run
//! directory, compute, write the manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use facetviz::actmax::{center_biased_maximize, center_mass_ratio, compare_regularizers, maximize, noise_image, AMResult};
use facetviz::dataset::LabeledDataset;
use facetviz::facets::{
    add_channel_offsets, classify_visualization, collect_class_images, collect_top_activating, facet_seeds,
    interpolation_experiment, run_mfv, save_am_result, FacetOptimizer, ImageSet,
};
use facetviz::network::{accuracy, default_architecture, load_weights, save_weights, train, Network, UnitSelector};
use facetviz::{rng, Tensor};

use crate::config::{Reader, RunConfig};
use crate::error::{Category, CliError, CliResult};
use crate::manifest::{
    collect_artifacts, create_run_dir, sha256_file, sha256_hex, FacetRow, FileRecord, RunManifest, StageTiming, Timings,
    CONFIG_FILE,
};
use crate::plot::{emit_montage, emit_scatter_svg};
use crate::settings::{
    load_layered, read_train, read_unit, read_variants, structural_problems, working_image, AmSettings, Collect,
    DatasetSource, Endpoints, FacetSettings, InterpolateSettings, OptimizerKind, ScheduleSettings, SeedImage,
};

/// Tiles are enlarged this many times in montages.
pub const MONTAGE_SCALE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Facets,
    Actmax,
    Center,
    Interpolate,
    Compare,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Generate,
        Command::Train,
        Command::Facets,
        Command::Actmax,
        Command::Center,
        Command::Interpolate,
        Command::Compare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Facets => "facets",
            Command::Actmax => "actmax",
            Command::Center => "center",
            Command::Interpolate => "interpolate",
            Command::Compare => "compare",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Command::ALL.into_iter().find(|c| c.name() == name)
    }

    /// The config key that `--seed` overrides.
    pub fn seed_key(self) -> (&'static str, &'static str) {
        match self {
            Command::Generate => ("dataset", "seed"),
            Command::Train => ("train", "seed"),
            Command::Actmax | Command::Compare => ("am", "seed"),
            Command::Center => ("schedule", "seed"),
            Command::Facets | Command::Interpolate => ("facet", "seed"),
        }
    }

    fn needs_network(self) -> bool {
        !matches!(self, Command::Generate | Command::Train)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub configs: Vec<PathBuf>,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
}

/// Runs `f` on a pool of `jobs` threads, or the global pool if unset.
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> CliResult<R> + Send) -> CliResult<R> {
    match jobs {
        None => f(),
        Some(0) => Err(CliError::config("--jobs must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::runtime(format!("cannot start {n} worker threads: {e}")))?
            .install(f),
    }
}

/// Layers the config files, applies `--seed`, and runs `cmd`.
pub fn run(cmd: Command, opts: &RunOptions) -> CliResult<RunOutcome> {
    let mut cfg = load_layered(&opts.configs)?;
    if let Some(seed) = opts.seed {
        let (sec, key) = cmd.seed_key();
        cfg.set(sec, key, seed.to_string());
    }
    with_jobs(opts.jobs, || execute(cmd, &cfg, &opts.out))
}

/// Everything a command needs, parsed and checked up front.
#[derive(Debug, Clone)]
struct Plan {
    dataset: DatasetSource,
    heldout: bool,
    weights: Option<PathBuf>,
    init_seed: u64,
    train: facetviz::network::TrainConfig,
    unit: UnitSelector,
    am: AmSettings,
    schedule: ScheduleSettings,
    facet: Option<FacetSettings>,
    interpolate: Option<InterpolateSettings>,
    variants: Vec<(String, AmSettings)>,
    columns: Option<usize>,
}

impl Plan {
    fn read(cmd: Command, cfg: &RunConfig) -> CliResult<Self> {
        let mut r = Reader::new(cfg);
        for p in structural_problems(cfg) {
            r.problem(p);
        }
        let dataset = DatasetSource::read(&mut r);
        let heldout = r.get("train", "heldout", true);
        let weights = if cmd.needs_network() {
            r.require::<String>("network", "weights").map(PathBuf::from)
        } else {
            None
        };
        let init_seed = r.get("network", "init_seed", 1);
        let train = read_train(&mut r);
        let unit = read_unit(&mut r);
        let am = AmSettings::read(&mut r, &["am"]);
        let schedule = ScheduleSettings::read(&mut r);
        let facet = matches!(cmd, Command::Facets | Command::Interpolate).then(|| FacetSettings::read(&mut r, &unit));
        let interpolate =
            (cmd == Command::Interpolate).then(|| InterpolateSettings::read(&mut r, facet.as_ref().map_or(0, |f| f.k)));
        let (variants, columns) = if cmd == Command::Compare {
            let v = read_variants(&mut r);
            let c = r.opt::<usize>("compare", "columns");
            if c == Some(0) {
                r.problem("'compare.columns' must be >= 1");
            }
            (v, c)
        } else {
            (Vec::new(), None)
        };
        r.finish()?;
        Ok(Plan { dataset, heldout, weights, init_seed, train, unit, am, schedule, facet, interpolate, variants, columns })
    }
}

struct Ctx {
    dir: PathBuf,
    stages: Vec<StageTiming>,
    inputs: Vec<FileRecord>,
    metrics: BTreeMap<String, f64>,
    facets: Vec<FacetRow>,
}

impl Ctx {
    fn stage<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> CliResult<R>) -> CliResult<R> {
        let t = Instant::now();
        let out = f(self)?;
        self.stages.push(StageTiming { stage: name.to_string(), seconds: t.elapsed().as_secs_f64() });
        Ok(out)
    }

    fn input_file(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(FileRecord { path: path.display().to_string(), sha256: sha256_file(path)? });
        Ok(())
    }

    fn input_dir(&mut self, path: &Path) -> CliResult<()> {
        let listing: String =
            collect_artifacts(path)?.iter().map(|r| format!("{} {}\n", r.sha256, r.path)).collect();
        self.inputs.push(FileRecord { path: path.display().to_string(), sha256: sha256_hex(listing.as_bytes()) });
        Ok(())
    }

    fn save_result(&self, sub: &str, r: &AMResult<f32>, mean: &[f64]) -> CliResult<()> {
        let d = self.dir.join(sub);
        std::fs::create_dir_all(&d)?;
        save_am_result(&d, "viz", r, mean)?;
        Ok(())
    }
}

/// Runs `cmd` on an already layered config.
pub fn execute(cmd: Command, cfg: &RunConfig, out: &Path) -> CliResult<RunOutcome> {
    let plan = Plan::read(cmd, cfg)?;
    let mut ctx = Ctx { dir: PathBuf::new(), stages: Vec::new(), inputs: Vec::new(), metrics: BTreeMap::new(), facets: Vec::new() };

    let ds = ctx.stage("load_dataset", |ctx| {
        if let DatasetSource::Directory { path, .. } = &plan.dataset {
            ctx.input_dir(path)?;
        }
        plan.dataset.load()
    })?;
    let net = match &plan.weights {
        Some(path) => Some(ctx.stage("load_network", |ctx| {
            ctx.input_file(path)?;
            let net: Network<f32> = load_weights(path)?;
            net.check_input(&ds.images[0])?;
            net.check_selector(&plan.unit)?;
            Ok(net)
        })?),
        None => None,
    };
    for s in std::iter::once(&plan.am).chain(plan.variants.iter().map(|(_, s)| s)) {
        if let Some(SeedImage::File(p)) = &s.seed_image {
            if !ctx.inputs.iter().any(|r| Path::new(&r.path) == p) {
                ctx.input_file(p)?;
            }
        }
    }
    if let Some(InterpolateSettings { endpoints: Endpoints::Images(a, b), .. }) = &plan.interpolate {
        ctx.input_file(a)?;
        ctx.input_file(b)?;
    }

    let config_text = cfg.canonical();
    let config_hash = sha256_hex(config_text.as_bytes());
    let (dir, started_at) = create_run_dir(out, &config_hash)?;
    ctx.dir = dir;
    std::fs::write(ctx.dir.join(CONFIG_FILE), &config_text)?;

    match cmd {
        Command::Generate => cmd_generate(&mut ctx, &ds)?,
        Command::Train => cmd_train(&mut ctx, &plan, &ds)?,
        _ => {
            let net = net.as_ref().expect("network commands load weights");
            match cmd {
                Command::Actmax => cmd_actmax(&mut ctx, &plan, &ds, net)?,
                Command::Center => cmd_center(&mut ctx, &plan, &ds, net)?,
                Command::Facets => cmd_facets(&mut ctx, &plan, &ds, net)?,
                Command::Interpolate => cmd_interpolate(&mut ctx, &plan, &ds, net)?,
                Command::Compare => cmd_compare(&mut ctx, &plan, &ds, net)?,
                Command::Generate | Command::Train => unreachable!(),
            }
        }
    }

    let manifest = RunManifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        command: cmd.name().to_string(),
        config_hash,
        config: config_text,
        inputs: ctx.inputs,
        artifacts: collect_artifacts(&ctx.dir)?,
        timings: Timings { started_at, stages: ctx.stages },
        facets: ctx.facets,
        metrics: ctx.metrics,
    };
    manifest.save(&ctx.dir)?;
    Ok(RunOutcome { run_dir: ctx.dir, manifest })
}

fn cmd_generate(ctx: &mut Ctx, ds: &LabeledDataset<f32>) -> CliResult<()> {
    let dir = ctx.dir.join("dataset");
    ctx.stage("export", |_| Ok(ds.export(&dir)?))?;
    ctx.metrics.insert("images".into(), ds.len() as f64);
    ctx.metrics.insert("classes".into(), ds.num_classes as f64);
    Ok(())
}

fn cmd_train(ctx: &mut Ctx, plan: &Plan, ds: &LabeledDataset<f32>) -> CliResult<()> {
    let mut net = Network::<f32>::new(ds.image_dims(), default_architecture(ds.num_classes))?;
    net.init_random(plan.init_seed);
    let (net, epochs) = ctx.stage("train", |_| Ok(train(&net, &ds.images, &ds.labels, &plan.train)?))?;
    save_weights(&net, ctx.dir.join("weights.bin"))?;
    let mut csv = String::from("epoch,loss,accuracy\n");
    for e in &epochs {
        let _ = writeln!(csv, "{},{:.9e},{:.9e}", e.epoch, e.loss, e.accuracy);
    }
    std::fs::write(ctx.dir.join("epochs.csv"), csv)?;
    if let Some(last) = epochs.last() {
        ctx.metrics.insert("train_loss".into(), last.loss);
        ctx.metrics.insert("train_accuracy".into(), last.accuracy);
    }
    if plan.heldout {
        if let Some(test) = plan.dataset.heldout(ds)? {
            let acc = ctx.stage("evaluate", |_| Ok(accuracy(&net, &test.images, &test.labels)?))?;
            ctx.metrics.insert("heldout_accuracy".into(), acc);
        }
    }
    Ok(())
}

fn top1(net: &Network<f32>, img: &Tensor<f32>) -> CliResult<usize> {
    Ok(classify_visualization(net, img)?[0].0)
}

fn record_result(ctx: &mut Ctx, prefix: &str, net: &Network<f32>, r: &AMResult<f32>) -> CliResult<()> {
    ctx.metrics.insert(format!("{prefix}initial_activation"), r.initial_activation);
    ctx.metrics.insert(format!("{prefix}final_activation"), r.final_activation());
    ctx.metrics.insert(format!("{prefix}top1_class"), top1(net, &r.final_image)? as f64);
    Ok(())
}

fn cmd_actmax(ctx: &mut Ctx, plan: &Plan, ds: &LabeledDataset<f32>, net: &Network<f32>) -> CliResult<()> {
    let cfg = plan.am.build(ds)?;
    cfg.validate(net)?;
    let r = ctx.stage("maximize", |_| Ok(maximize(net, &plan.unit, &cfg)?))?;
    ctx.save_result(".", &r, &ds.mean_intensity)?;
    record_result(ctx, "", net, &r)
}

/// Start image at network input size from `am.seed_image`; `None` leaves
/// the choice (noise) to the optimizer.
fn input_seed(plan: &Plan, ds: &LabeledDataset<f32>) -> CliResult<Option<Tensor<f32>>> {
    let d = ds.image_dims();
    Ok(match &plan.am.seed_image {
        None | Some(SeedImage::Noise) => None,
        Some(SeedImage::Zero) => Some(Tensor::zeros(d)),
        Some(SeedImage::File(p)) => Some(working_image(ds, p, (d[0], d[1]))?),
    })
}

fn cmd_center(ctx: &mut Ctx, plan: &Plan, ds: &LabeledDataset<f32>, net: &Network<f32>) -> CliResult<()> {
    let sched = plan.schedule.build(ds);
    std::fs::write(ctx.dir.join("schedule.echo"), sched.echo())?;
    let seed = input_seed(plan, ds)?;
    let r = ctx.stage("maximize", |_| Ok(center_biased_maximize(net, &plan.unit, seed.as_ref(), &sched)?))?;
    ctx.save_result(".", &r, &ds.mean_intensity)?;
    ctx.metrics.insert("center_mass_ratio".into(), center_mass_ratio(&r.final_image, 0.0)?);
    record_result(ctx, "", net, &r)
}

fn facet_optimizer(plan: &Plan, fs: &FacetSettings, ds: &LabeledDataset<f32>) -> CliResult<FacetOptimizer<f32>> {
    Ok(match fs.optimizer {
        OptimizerKind::Plain => FacetOptimizer::Plain(plan.am.build(ds)?),
        OptimizerKind::Center => FacetOptimizer::CenterBiased(plan.schedule.build(ds)),
    })
}

fn collect(fs: &FacetSettings, ds: &LabeledDataset<f32>, net: &Network<f32>, sel: &UnitSelector) -> CliResult<ImageSet> {
    Ok(match fs.collect {
        Collect::Class(c) => collect_class_images(ds, c)?,
        Collect::Top => collect_top_activating(ds, net, sel, fs.top_fraction)?,
    })
}

/// Share of images whose planted `(class, facet)` is their cluster's majority.
fn planted_purity(ds: &LabeledDataset<f32>, members: &[Vec<usize>]) -> Option<f64> {
    let facets = ds.facet_labels.as_ref()?;
    let (mut agree, mut total) = (0usize, 0usize);
    for m in members {
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for &id in m {
            *counts.entry((ds.labels[id], facets[id])).or_default() += 1;
        }
        agree += counts.values().max().copied().unwrap_or(0);
        total += m.len();
    }
    (total > 0).then(|| agree as f64 / total as f64)
}

fn cmd_facets(ctx: &mut Ctx, plan: &Plan, ds: &LabeledDataset<f32>, net: &Network<f32>) -> CliResult<()> {
    let fs = plan.facet.as_ref().expect("facet settings read for facets");
    let cfg = fs.build(facet_optimizer(plan, fs, ds)?);
    let set = ctx.stage("collect", |_| collect(fs, ds, net, &plan.unit))?;
    let result = ctx.stage("mfv", |_| Ok(run_mfv(net, &plan.unit, ds, &set, &cfg)?))?;
    result.save(&ctx.dir, &ds.mean_intensity)?;
    emit_scatter_svg(&result.embedding, &result.clustering, &ctx.dir.join("scatter.svg"))?;
    let mut tiles = Vec::new();
    let mut labels = Vec::new();
    for (c, f) in result.facets.iter().enumerate() {
        let v = &f.visualization;
        ctx.facets.push(FacetRow {
            facet: c,
            cluster_size: f.members.len(),
            seed_activation: v.initial_activation,
            final_activation: v.final_activation(),
            top1_class: top1(net, &v.final_image)?,
        });
        tiles.push(add_channel_offsets(&v.final_image, &ds.mean_intensity));
        labels.push(format!("f{c} n{}", f.members.len()));
    }
    emit_montage(&tiles, &labels, 5, MONTAGE_SCALE, &ctx.dir.join("montage.png"))?;
    ctx.metrics.insert("images".into(), set.len() as f64);
    ctx.metrics.insert("perplexity".into(), result.perplexity);
    ctx.metrics.insert("pca_dims".into(), result.pca_dims as f64);
    let members: Vec<Vec<usize>> = result.facets.iter().map(|f| f.members.clone()).collect();
    if let Some(p) = planted_purity(ds, &members) {
        ctx.metrics.insert("planted_purity".into(), p);
    }
    Ok(())
}

fn cmd_interpolate(ctx: &mut Ctx, plan: &Plan, ds: &LabeledDataset<f32>, net: &Network<f32>) -> CliResult<()> {
    let fs = plan.facet.as_ref().expect("facet settings read for interpolate");
    let ip = plan.interpolate.as_ref().expect("interpolate settings read");
    let d = ds.image_dims();
    let (a, b) = match &ip.endpoints {
        Endpoints::Images(pa, pb) => (working_image(ds, pa, (d[0], d[1]))?, working_image(ds, pb, (d[0], d[1]))?),
        Endpoints::Facets(fa, fb) => {
            let cfg = fs.build(FacetOptimizer::Plain(plan.am.build(ds)?));
            let set = ctx.stage("collect", |_| collect(fs, ds, net, &plan.unit))?;
            let seeds = ctx.stage("facet_seeds", |_| Ok(facet_seeds(net, &plan.unit, ds, &set, &cfg)?))?;
            (seeds.seeds[*fa].1.clone(), seeds.seeds[*fb].1.clone())
        }
    };
    for (name, img) in [("endpoint_a", &a), ("endpoint_b", &b)] {
        facetviz::imageio::write_png(ctx.dir.join(format!("{name}.png")), &add_channel_offsets(img, &ds.mean_intensity))?;
        facetviz::tensor::write_flt1_file(ctx.dir.join(format!("{name}.flt1")), img)?;
    }
    let opt = facet_optimizer(plan, fs, ds)?;
    let runs = ctx.stage("interpolate", |_| Ok(interpolation_experiment(net, &plan.unit, &a, &b, ip.steps, &opt)?))?;
    let mut csv = String::from("index,t,initial_activation,final_activation,top1_class\n");
    let (mut tiles, mut labels) = (Vec::new(), Vec::new());
    for (i, (t, r)) in runs.iter().enumerate() {
        ctx.save_result(&format!("interp_{i:02}"), r, &ds.mean_intensity)?;
        let _ = writeln!(csv, "{i},{t:.6},{:.9e},{:.9e},{}", r.initial_activation, r.final_activation(), top1(net, &r.final_image)?);
        tiles.push(add_channel_offsets(&r.final_image, &ds.mean_intensity));
        labels.push(format!("t={t:.2}"));
    }
    std::fs::write(ctx.dir.join("interpolation.csv"), csv)?;
    emit_montage(&tiles, &labels, runs.len().min(5), MONTAGE_SCALE, &ctx.dir.join("montage.png"))?;
    ctx.metrics.insert("runs".into(), runs.len() as f64);
    Ok(())
}

fn cmd_compare(ctx: &mut Ctx, plan: &Plan, ds: &LabeledDataset<f32>, net: &Network<f32>) -> CliResult<()> {
    let variants = plan
        .variants
        .iter()
        .map(|(name, s)| {
            let cfg = s.build(ds)?;
            cfg.validate(net).map_err(|e| CliError::config(format!("[variant.{name}]: {e}")))?;
            Ok((name.clone(), cfg))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let d = ds.image_dims();
    let range = ds.pixel_range();
    let clamp = (plan.am.clamp_lo.unwrap_or(range.0), plan.am.clamp_hi.unwrap_or(range.1));
    let seed = match input_seed(plan, ds)? {
        Some(s) => s,
        None => noise_image(d, clamp, &mut rng::seeded(plan.am.seed)),
    };
    let results =
        ctx.stage("compare", |_| Ok(compare_regularizers(net, &plan.unit, &seed, plan.am.seed, &variants)?))?;
    let (mut tiles, mut labels) = (Vec::new(), Vec::new());
    for (name, r) in &results {
        ctx.save_result(&format!("variant_{name}"), r, &ds.mean_intensity)?;
        record_result(ctx, &format!("{name}."), net, r)?;
        let window = r.final_image.center_crop(d[0], d[1])?;
        tiles.push(add_channel_offsets(&window, &ds.mean_intensity));
        labels.push(name.clone());
    }
    let columns = plan.columns.unwrap_or(results.len());
    emit_montage(&tiles, &labels, columns, MONTAGE_SCALE, &ctx.dir.join("montage.png"))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub original: RunManifest,
    pub replay: RunOutcome,
    /// Artifacts compared byte-for-byte (by hash).
    pub compared: usize,
    pub flt1_compared: usize,
}

/// Re-runs the command recorded in `manifest_path` from its stored config
/// and checks that every artifact hash matches.
pub fn replay(manifest_path: &Path, out: &Path, jobs: Option<usize>) -> CliResult<ReplayReport> {
    let original = RunManifest::load(manifest_path)?;
    let cmd = Command::parse(&original.command)
        .ok_or_else(|| CliError::data(format!("manifest names unknown command '{}'", original.command)))?;
    let cfg = RunConfig::parse(&original.config, "manifest config")?;
    let replay = with_jobs(jobs, || execute(cmd, &cfg, out))?;
    let mut problems = Vec::new();
    if replay.manifest.config_hash != original.config_hash {
        problems.push("config hash differs".to_string());
    }
    for rec in &original.inputs {
        if !replay.manifest.inputs.contains(rec) {
            problems.push(format!("input '{}' changed since the original run", rec.path));
        }
    }
    let mut flt1 = 0;
    for a in &original.artifacts {
        match replay.manifest.artifact(&a.path) {
            None => problems.push(format!("'{}' was not reproduced", a.path)),
            Some(b) if b.sha256 != a.sha256 => problems.push(format!("'{}' differs", a.path)),
            Some(_) => flt1 += a.path.ends_with(".flt1") as usize,
        }
    }
    if !problems.is_empty() {
        return Err(CliError::new(
            Category::Runtime,
            format!("replay of {} diverged: {}", manifest_path.display(), problems.join("; ")),
        ));
    }
    let compared = original.artifacts.len();
    Ok(ReplayReport { original, replay, compared, flt1_compared: flt1 })
}

/// The center-biased schedule described by the layered `configs`, in
/// reference units.
pub fn schedule_echo(configs: &[PathBuf]) -> CliResult<String> {
    let cfg = load_layered(configs)?;
    let mut r = Reader::new(&cfg);
    for p in cfg.unknown_keys(crate::config::SCHEMA) {
        r.problem(p);
    }
    let s = ScheduleSettings::read(&mut r);
    r.finish()?;
    Ok(s.schedule.echo())
}
