//! End-to-end checks of the command-line surface on tiny workloads.

use std::path::{Path, PathBuf};
use std::process::Command as Proc;
use std::sync::OnceLock;

use facetviz::imageio;
use facetviz_cli::plot::{montage_dims, LABEL_HEIGHT, SEPARATOR};
use facetviz_cli::{commands, Category, Command, RunManifest, RunOptions};

const BIN: &str = env!("CARGO_BIN_EXE_facetviz");

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const TINY: &str = "[dataset]\npreset = planted\nimages_per_class = 30\n[train]\nepochs = 2\n[am]\niterations = 10\n";

/// One trained tiny network shared by the tests below.
fn tiny_net() -> &'static (tempfile::TempDir, PathBuf) {
    static NET: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    NET.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let base = write(tmp.path(), "base.ini", TINY);
        let opts = RunOptions { configs: vec![base.clone()], out: tmp.path().join("runs"), ..Default::default() };
        let out = commands::run(Command::Train, &opts).unwrap();
        let net = write(tmp.path(), "net.ini", &format!("[network]\nweights = {}\n", out.run_dir.join("weights.bin").display()));
        (tmp, net)
    })
}

fn run_with(cmd: Command, extra: &str) -> (tempfile::TempDir, facetviz_cli::RunOutcome) {
    let (shared, net) = tiny_net();
    let tmp = tempfile::tempdir().unwrap();
    let configs = vec![shared.path().join("base.ini"), net.clone(), write(tmp.path(), "extra.ini", extra)];
    let out = commands::run(cmd, &RunOptions { configs, out: tmp.path().join("runs"), ..Default::default() }).unwrap();
    (tmp, out)
}

#[test]
fn unknown_keys_are_listed_together_with_exit_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.ini", "[am]\nbogus = 1\nalso = 2\n[unit]\nlayr = fc_class\n");
    let out = Proc::new(BIN).args(["actmax", "--config"]).arg(&cfg).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[CONFIG]: "));
    for key in ["am.bogus", "am.also", "unit.layr", "network.weights"] {
        assert!(err.contains(key), "{key} missing from {err}");
    }
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 1, "no run directory on config errors");
}

#[test]
fn missing_paths_and_empty_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "a.ini", "[dataset]\nsource = directory\npath = nowhere\n");
    let err = commands::run(Command::Generate, &RunOptions { configs: vec![cfg], out: tmp.path().into(), ..Default::default() })
        .unwrap_err();
    assert_eq!(err.category, Category::Config);
    assert!(err.message.contains("nowhere"));

    std::fs::create_dir(tmp.path().join("empty")).unwrap();
    let cfg = write(tmp.path(), "b.ini", "[dataset]\nsource = directory\npath = empty\n");
    let out = Proc::new(BIN).arg("generate").arg("--config").arg(&cfg).arg("--out").arg(tmp.path().join("r")).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[DATA]"));
}

#[test]
fn later_configs_override_and_seed_flag_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write(tmp.path(), "a.ini", "[dataset]\nimages_per_class = 3\nseed = 4\nimage_size = 16\n");
    let b = write(tmp.path(), "b.ini", "[dataset]\nimages_per_class = 2\n");
    let opts = RunOptions { configs: vec![a, b], out: tmp.path().join("runs"), seed: Some(99), jobs: Some(1) };
    let out = commands::run(Command::Generate, &opts).unwrap();
    let cfg = std::fs::read_to_string(out.run_dir.join("config.ini")).unwrap();
    assert!(cfg.contains("images_per_class = 2"));
    assert!(cfg.contains("seed = 99"));
    assert_eq!(out.manifest.metrics["images"], 8.0);
    let name = out.run_dir.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.ends_with(&out.manifest.config_hash[..8]), "{name}");
    let loaded = RunManifest::load(&out.run_dir.join("manifest.json")).unwrap();
    assert_eq!(loaded.config_hash, out.manifest.config_hash);
    for a in &loaded.artifacts {
        assert!(out.run_dir.join(&a.path).is_file(), "{}", a.path);
    }
}

#[test]
fn relative_paths_resolve_against_their_config_file() {
    let (shared, _) = tiny_net();
    let tmp = tempfile::tempdir().unwrap();
    let sub = tmp.path().join("cfgs");
    std::fs::create_dir(&sub).unwrap();
    let weights = std::fs::read_dir(shared.path().join("runs")).unwrap().next().unwrap().unwrap().path().join("weights.bin");
    std::fs::copy(&weights, sub.join("w.bin")).unwrap();
    let net = write(&sub, "net.ini", "[network]\nweights = w.bin\n");
    let opts =
        RunOptions { configs: vec![shared.path().join("base.ini"), net], out: tmp.path().join("runs"), ..Default::default() };
    let out = commands::run(Command::Actmax, &opts).unwrap();
    assert_eq!(out.manifest.inputs[0].path, sub.join("w.bin").display().to_string());
}

#[test]
fn train_twice_gives_identical_weights_and_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "t.ini", TINY);
    let run = |jobs| {
        commands::run(Command::Train, &RunOptions { configs: vec![cfg.clone()], out: tmp.path().join("runs"), jobs, seed: None })
            .unwrap()
    };
    let (a, b) = (run(None), run(Some(1)));
    assert_ne!(a.run_dir, b.run_dir);
    assert_eq!(std::fs::read(a.run_dir.join("weights.bin")).unwrap(), std::fs::read(b.run_dir.join("weights.bin")).unwrap());
    let strip = |mut m: RunManifest| {
        m.timings = Default::default();
        m
    };
    assert_eq!(strip(a.manifest), strip(b.manifest));
}

#[test]
fn compare_with_four_variants_makes_a_four_tile_montage() {
    let extra = "[compare]\nvariants = none tv blur jitter\ncolumns = 2\n\
        [variant.none]\ntv_lambda = 0\njitter.canvas = none\n\
        [variant.tv]\njitter.canvas = none\n\
        [variant.blur]\ntv_lambda = 0\nblur_sigma_start = 1\nblur_sigma_end = 0.5\nblur_every = 2\n\
        [variant.jitter]\ntv_lambda = 0\n";
    let (_tmp, out) = run_with(Command::Compare, extra);
    let montage: facetviz::Tensor<f32> = imageio::read_png(&out.run_dir.join("montage.png")).unwrap();
    let tile = 32 * commands::MONTAGE_SCALE;
    assert_eq!((montage.height(), montage.width()), montage_dims(4, 2, tile, tile));
    assert_eq!(montage.width(), 2 * tile + 3 * SEPARATOR);
    assert_eq!(montage.height(), 2 * (tile + LABEL_HEIGHT) + 3 * SEPARATOR);
    for name in ["none", "tv", "blur", "jitter"] {
        assert!(out.run_dir.join(format!("variant_{name}/viz.flt1")).is_file());
        assert!(out.manifest.metrics.contains_key(&format!("{name}.final_activation")));
    }
}

#[test]
fn facets_k10_writes_ten_facet_directories_and_a_valid_scatter() {
    let extra = "[dataset]\nimages_per_class = 40\n[facet]\nk = 10\nm = 15\ntsne_iterations = 250\n[am]\niterations = 5\n";
    let (_tmp, out) = run_with(Command::Facets, extra);
    let dirs = (0..20).filter(|c| out.run_dir.join(format!("facet_{c}")).is_dir()).count();
    assert_eq!(dirs, 10);
    assert_eq!(out.manifest.facets.len(), 10);
    let svg = std::fs::read_to_string(out.run_dir.join("scatter.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("well-formed SVG");
    let circles = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
    assert_eq!(circles, 40);
    let labels = doc.descendants().filter(|n| n.has_tag_name("text")).count();
    assert_eq!(labels, 10);
    let sizes: usize = out.manifest.facets.iter().map(|f| f.cluster_size).sum();
    assert_eq!(sizes, 40);
}

#[test]
fn replay_reproduces_every_artifact() {
    let (tmp, out) = run_with(Command::Center, "[schedule]\niterations = 4 4 4 2 2\ntv_inner_iters = 5\n[am]\nseed_image = zero\n");
    let report = commands::replay(&out.run_dir.join("manifest.json"), &tmp.path().join("replay"), Some(1)).unwrap();
    assert_eq!(report.compared, out.manifest.artifacts.len());
    assert_eq!(report.flt1_compared, 1);
    assert!(out.run_dir.join("schedule.echo").is_file());
}

#[test]
fn interpolation_between_facet_seeds() {
    let extra = "[facet]\nk = 2\nm = 5\ntsne_iterations = 250\n[interpolate]\nsteps = 3\n";
    let (_tmp, out) = run_with(Command::Interpolate, extra);
    let csv = std::fs::read_to_string(out.run_dir.join("interpolation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5);
    assert!(out.run_dir.join("interp_04/viz.flt1").is_file());
    assert!(out.run_dir.join("endpoint_a.flt1").is_file());
}

#[test]
fn echo_of_the_center_biased_preset_matches_golden() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let out = Proc::new(BIN).arg("echo").arg("--config").arg(root.join("presets/paper_center_biased")).output().unwrap();
    assert!(out.status.success());
    let golden = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/paper_center_biased.echo")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), golden);
}

#[test]
fn mfv_preset_parses() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let cfg = facetviz_cli::settings::load_layered(&[root.join("presets/paper_mfv")]).unwrap();
    assert!(cfg.unknown_keys(facetviz_cli::config::SCHEMA).is_empty());
    assert_eq!(cfg.get("facet", "k"), Some("10"));
    assert_eq!(cfg.get("facet", "m"), Some("15"));
    assert_eq!(cfg.get("facet", "pca_dims"), Some("50"));
}
