//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N ...: PASS|FAIL` line with its measurements, then asserts.

#[path = "../../core/tests/support/embedding_checks.rs"]
mod embedding_checks;
#[path = "../../core/tests/support/grad_checks.rs"]
mod grad_checks;
#[path = "../../core/tests/support/tv_dual.rs"]
mod tv_dual;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command as Proc;
use std::sync::OnceLock;
use std::time::Instant;

use facetviz::actmax::{center_biased_maximize, center_mass_ratio, maximize, noise_image, AMConfig, PhaseSchedule};
use facetviz::dataset::{facet_mean_colors, generate_shapes, nearest_facet_by_color, LabeledDataset, ShapesSpec};
use facetviz::embedding::TsneConfig;
use facetviz::facets::{collect_class_images, facet_seeds, interpolation_experiment, run_mfv, FacetConfig, FacetOptimizer};
use facetviz::network::{accuracy, default_architecture, save_weights, train, write_weights, Network, TrainConfig, UnitSelector};
use facetviz::priors::{tv_denoise, tv_objective};
use facetviz::Tensor;
use facetviz_cli::{commands, Command, RunOptions};

// Written straight to the process stdout so the line survives test capture.
fn report(n: usize, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {n} {name}: {verdict} ({detail})").unwrap();
}

struct Trained {
    train: LabeledDataset<f32>,
    net: Network<f32>,
    seconds: f64,
}

fn fit(spec: &ShapesSpec) -> Trained {
    let t = Instant::now();
    let ds = generate_shapes::<f32>(spec).unwrap();
    let mut net = Network::<f32>::new(ds.image_dims(), default_architecture(ds.num_classes)).unwrap();
    net.init_random(1);
    let (net, _) = train(&net, &ds.images, &ds.labels, &TrainConfig::default()).unwrap();
    Trained { train: ds, net, seconds: t.elapsed().as_secs_f64() }
}

fn shapes() -> &'static Trained {
    static NET: OnceLock<Trained> = OnceLock::new();
    NET.get_or_init(|| fit(&ShapesSpec::default_spec()))
}

fn planted() -> &'static Trained {
    static NET: OnceLock<Trained> = OnceLock::new();
    NET.get_or_init(|| fit(&ShapesSpec::planted_two_facet()))
}

#[test]
fn criterion_01_gradients() {
    let t = Instant::now();
    let mut rows = grad_checks::per_layer_kind(20);
    rows.push(("alpha_norm", grad_checks::alpha_norm_fixtures(20)));
    let secs = t.elapsed().as_secs_f64();
    let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let pass = worst < 1e-3 && secs < 60.0;
    let detail = rows.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect::<Vec<_>>().join(", ");
    report(1, "gradient correctness", pass, format!("20 fixtures each, worst relative error: {detail}; {secs:.1}s"));
    assert!(pass);
}

#[test]
fn criterion_02_tv_proximal() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for (img, lambda) in tv_dual::fixtures() {
        let ours = tv_objective(&tv_denoise(&img, lambda, 100).unwrap(), &img, lambda);
        let oracle = tv_objective(&tv_dual::oracle(&img, lambda), &img, lambda);
        worst = worst.max(ours / oracle - 1.0);
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst <= 0.02 && secs < 120.0;
    report(2, "TV proximal correctness", pass, format!("10 fixtures, worst excess over oracle {:.3}%; {secs:.1}s", worst * 100.0));
    assert!(pass);
}

#[test]
fn criterion_03_training() {
    let first = shapes();
    let spec = ShapesSpec::default_spec();
    let heldout = generate_shapes::<f32>(&ShapesSpec { rng_seed: spec.rng_seed + 1, ..spec })
        .unwrap()
        .recentered(&first.train.mean_intensity)
        .unwrap();
    let acc = accuracy(&first.net, &heldout.images, &heldout.labels).unwrap();
    let again = fit(&ShapesSpec::default_spec());
    let same = write_weights(&first.net).unwrap() == write_weights(&again.net).unwrap();
    let pass = acc >= 0.90 && same && first.seconds < 600.0;
    report(
        3,
        "micro-CNN training",
        pass,
        format!("held-out accuracy {acc:.4} on {} images, rerun identical {same}; {:.1}s per training", heldout.len(), first.seconds),
    );
    assert!(pass);
}

#[test]
fn criterion_04_activation_maximization() {
    let Trained { train: ds, net, .. } = shapes();
    let t = Instant::now();
    let clamp = ds.pixel_range();
    let mut rng = facetviz::rng::seeded(5);
    let mut lines = Vec::new();
    let mut pass = true;
    for c in 0..ds.num_classes {
        let sel = UnitSelector::new("fc_class", c);
        let mut base: Vec<f64> = (0..1000)
            .map(|_| net.unit_activation(&noise_image::<f32>(net.input_dims(), clamp, &mut rng), &sel).unwrap())
            .collect();
        base.sort_by(f64::total_cmp);
        let p99 = base[989];
        let r = maximize(net, &sel, &AMConfig { rng_seed: c as u64, ..AMConfig::tv_jitter((32, 32), clamp) }).unwrap();
        pass &= r.final_activation() > p99;
        lines.push(format!("class {c} {:.2} vs p99 {p99:.2}", r.final_activation()));
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    report(4, "activation maximization", pass, format!("{}; {secs:.1}s", lines.join(", ")));
    assert!(pass);
}

fn purity(members: &[Vec<usize>], facets: &[usize]) -> f64 {
    let (mut agree, mut total) = (0, 0);
    for m in members {
        let mut counts = [0usize; 2];
        m.iter().for_each(|&id| counts[facets[id]] += 1);
        agree += counts[0].max(counts[1]);
        total += m.len();
    }
    agree as f64 / total as f64
}

fn planted_facet_config(trial: u64, clamp: (f64, f64)) -> FacetConfig<f32> {
    FacetConfig {
        k: 2,
        am: FacetOptimizer::Plain(AMConfig { rng_seed: trial, ..AMConfig::tv_jitter((32, 32), clamp) }),
        tsne: TsneConfig { rng_seed: trial, ..TsneConfig::default() },
        kmeans_seed: trial,
        ..FacetConfig::default()
    }
}

#[test]
fn criterion_05_facet_recovery() {
    let Trained { train: ds, net, .. } = planted();
    let t = Instant::now();
    let sel = UnitSelector::new("fc_class", 0);
    let set = collect_class_images(ds, 0).unwrap();
    let facets = ds.facet_labels.clone().unwrap();
    let colour = |img: &Tensor<f32>| img.center_crop(32, 32).unwrap().channel_means().unwrap();
    let mut passed = 0;
    let mut lines = Vec::new();
    for trial in 0..5u64 {
        let cfg = planted_facet_config(trial, ds.pixel_range());
        let fs = run_mfv(net, &sel, ds, &set, &cfg).unwrap();
        let p = purity(&fs.facets.iter().map(|f| f.members.clone()).collect::<Vec<_>>(), &facets);
        // Five runs per facet: the pipeline's own plus four fresh streams.
        let mut means = Vec::new();
        let mut spread: f64 = 0.0;
        for (i, f) in fs.facets.iter().enumerate() {
            let mut runs = vec![colour(&f.visualization.final_image)];
            for s in 1..5u64 {
                runs.push(colour(&cfg.am.run(net, &sel, &f.mean_image, 100 * s + i as u64).unwrap().final_image));
            }
            let m: Vec<f64> = (0..3).map(|c| runs.iter().map(|r| r[c]).sum::<f64>() / 5.0).collect();
            let sd: f64 = (0..3)
                .map(|c| runs.iter().map(|r| (r[c] - m[c]).powi(2)).sum::<f64>() / 4.0)
                .sum::<f64>()
                .sqrt();
            spread = spread.max(sd);
            means.push(m);
        }
        let sep = (0..3).map(|c| (means[0][c] - means[1][c]).powi(2)).sum::<f64>().sqrt();
        let ratio = sep / spread.max(1e-12);
        let ok = p >= 0.95 && ratio >= 5.0;
        passed += ok as usize;
        lines.push(format!("seed {trial}: purity {p:.3} separation {ratio:.1}x"));
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = passed >= 4 && secs < 900.0;
    report(5, "facet recovery", pass, format!("{passed}/5 seeds pass; {}; {secs:.1}s", lines.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_06_center_bias() {
    let Trained { train: ds, net, .. } = shapes();
    let t = Instant::now();
    let clamp = ds.pixel_range();
    let sched = PhaseSchedule { clamp, ..PhaseSchedule::reference() };
    let seed = Tensor::<f32>::zeros(&[32, 32, 3]);
    let units: Vec<UnitSelector> = (0..4)
        .map(|u| UnitSelector::new("fc_class", u))
        .chain((0..6).map(|u| UnitSelector::new("fc_code", u)))
        .collect();
    let (mut biased, mut plain) = (0.0, 0.0);
    for sel in &units {
        let cb = center_biased_maximize(net, sel, Some(&seed), &sched).unwrap();
        let mut cfg = AMConfig::<f32> { iterations: sched.total_iterations(), ..AMConfig::tv_jitter((32, 32), clamp) };
        cfg.seed_image = Some(Tensor::zeros(&cfg.canvas_dims(net)));
        let pl = maximize(net, sel, &cfg).unwrap();
        biased += center_mass_ratio(&cb.final_image, 0.0).unwrap();
        plain += center_mass_ratio(&pl.final_image, 0.0).unwrap();
    }
    let n = units.len() as f64;
    let (biased, plain) = (biased / n, plain / n);
    let secs = t.elapsed().as_secs_f64();
    let pass = biased >= 1.5 * plain && secs < 1200.0;
    report(
        6,
        "center-biased regularization",
        pass,
        format!(
            "mean center-mass ratio {biased:.3} vs plain {plain:.3} = {:.2}x over 10 units, {} iterations each; {secs:.1}s",
            biased / plain,
            sched.total_iterations()
        ),
    );
    assert!(pass, "center-biased ratio {biased:.3} is not 1.5x plain {plain:.3}");
}

#[test]
fn criterion_07_interpolation() {
    let Trained { train: ds, net, .. } = planted();
    let t = Instant::now();
    let sel = UnitSelector::new("fc_class", 0);
    let set = collect_class_images(ds, 0).unwrap();
    let cfg = planted_facet_config(0, ds.pixel_range());
    let seeds = facet_seeds(net, &sel, ds, &set, &cfg).unwrap();
    let runs = interpolation_experiment(net, &sel, &seeds.seeds[0].1, &seeds.seeds[1].1, 8, &cfg.am).unwrap();
    let refs = &facet_mean_colors(ds).unwrap()[0];
    // Position of a color along the line between the two planted facet means.
    let along = |m: &[f64]| {
        let d: Vec<f64> = (0..3).map(|c| refs[1][c] - refs[0][c]).collect();
        (0..3).map(|c| (m[c] - refs[0][c]) * d[c]).sum::<f64>() / d.iter().map(|v| v * v).sum::<f64>()
    };
    let mut endpoint = 0;
    let mut marks = Vec::new();
    for (_, r) in &runs {
        let img = r.final_image.center_crop(32, 32).unwrap();
        let s = along(&img.channel_means().unwrap());
        let facet = nearest_facet_by_color(&img, refs).unwrap();
        let mixture = (0.4..=0.6).contains(&s);
        endpoint += !mixture as usize;
        marks.push(if mixture { "mix".to_string() } else { format!("f{facet}") });
    }
    let share = endpoint as f64 / runs.len() as f64;
    let pass = runs.len() == 10 && share >= 0.8;
    let secs = t.elapsed().as_secs_f64();
    report(7, "interpolation", pass, format!("{endpoint}/{} runs at an endpoint facet [{}]; {secs:.1}s", runs.len(), marks.join(" ")));
    assert!(pass);
}

#[test]
fn criterion_08_embedding() {
    let t = Instant::now();
    let perp = embedding_checks::max_perplexity_error();
    let purity = (0..20).map(embedding_checks::kmeans_blob_purity).fold(1.0, f64::min);
    let pca = embedding_checks::pca_oracle_error();
    let blobs = embedding_checks::tsne_blob_separation(4);
    let secs = t.elapsed().as_secs_f64();
    let pass = perp <= 1e-3 && purity >= 0.99 && pca <= 1e-4 && secs < 120.0;
    report(
        8,
        "embedding stack",
        pass,
        format!("perplexity error {perp:.1e}, worst k-means purity {purity:.3} over 20 seeds, PCA disagreement {pca:.1e}, t-SNE blob inter/intra {blobs:.1}; {secs:.1}s"),
    );
    assert!(pass);
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn criterion_09_parameter_fidelity() {
    let out = Proc::new(env!("CARGO_BIN_EXE_facetviz"))
        .arg("echo")
        .arg("--config")
        .arg(repo_root().join("presets/paper_center_biased"))
        .output()
        .unwrap();
    let golden = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/paper_center_biased.echo")).unwrap();
    let pass = out.status.success() && out.stdout == golden;
    report(9, "parameter fidelity", pass, format!("echo of presets/paper_center_biased, {} bytes, byte-identical {pass}", out.stdout.len()));
    assert!(pass);
}

#[test]
fn criterion_10_replay() {
    let Trained { net, .. } = shapes();
    let tmp = tempfile::tempdir().unwrap();
    let weights = tmp.path().join("net.bin");
    save_weights(net, &weights).unwrap();
    let write = |name: &str, text: String| {
        let p = tmp.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let base = write("base.ini", format!("[network]\nweights = {}\n[unit]\nlayer = fc_class\nindex = 2\n", weights.display()));
    let runs = [
        (Command::Actmax, "[am]\niterations = 100\n"),
        (Command::Center, "[am]\nseed_image = zero\n"),
        (Command::Facets, "[facet]\nk = 3\nm = 5\ntsne_iterations = 300\n[am]\niterations = 50\n"),
    ];
    let mut lines = Vec::new();
    let mut pass = true;
    for (i, (cmd, extra)) in runs.into_iter().enumerate() {
        let cfg = write(&format!("extra{i}.ini"), extra.to_string());
        let opts = RunOptions { configs: vec![base.clone(), cfg], out: tmp.path().join("runs"), ..Default::default() };
        let out = commands::run(cmd, &opts).unwrap();
        match commands::replay(&out.run_dir.join("manifest.json"), &tmp.path().join("replays"), None) {
            Ok(r) => lines.push(format!("{}: {} artifacts, {} FLT1 identical", cmd.name(), r.compared, r.flt1_compared)),
            Err(e) => {
                pass = false;
                lines.push(format!("{}: {}", cmd.name(), e.line()));
            }
        }
    }
    report(10, "reproducibility", pass, lines.join(", "));
    assert!(pass);
}
