//! Line-oriented run configuration:
//!
//! ```text
//! # comment
//! [section]
//! key = value   # trailing comment
//! ```
//!
//! Several files may be layered; later files override earlier keys. Keys are
//! checked against a fixed schema and every problem is reported at once.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

/// Parsed configuration: `section → key → raw value`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut current: Option<String> = None;
        let mut problems = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            let at = format!("{origin}:{}", n + 1);
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if name.is_empty() {
                    problems.push(format!("{at}: empty section name"));
                } else {
                    cfg.sections.entry(name.to_string()).or_default();
                    current = Some(name.to_string());
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("{at}: expected 'key = value', got '{line}'"));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            match &current {
                None => problems.push(format!("{at}: key '{key}' appears before any [section]")),
                Some(sec) => {
                    let map = cfg.sections.get_mut(sec).expect("section registered");
                    if map.insert(key.to_string(), value.to_string()).is_some() {
                        problems.push(format!("{at}: duplicate key '{sec}.{key}'"));
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::config(problems.join("; ")))
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config '{}': {e}", path.display())))?;
        RunConfig::parse(&text, &path.display().to_string())
    }

    /// Layers `other` on top of `self`.
    pub fn merge(&mut self, other: RunConfig) {
        for (sec, keys) in other.sections {
            self.sections.entry(sec).or_default().extend(keys);
        }
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(String::as_str)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        self.sections.entry(section.to_string()).or_default().insert(key.to_string(), value.into());
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }

    /// Sorted, comment-free rendering; the input of the config hash.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (sec, keys) in &self.sections {
            let _ = writeln!(out, "[{sec}]");
            for (k, v) in keys {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    /// Names every section or key outside `schema`. Sections named
    /// `variant.<name>` are checked against the `variant` entry.
    pub fn unknown_keys(&self, schema: &[(&str, &[&str])]) -> Vec<String> {
        let mut problems = Vec::new();
        for (sec, keys) in &self.sections {
            let family = if sec.starts_with("variant.") { "variant" } else { sec.as_str() };
            match schema.iter().find(|(name, _)| *name == family) {
                None => problems.push(format!("unknown section [{sec}]")),
                Some((_, allowed)) => {
                    for k in keys.keys() {
                        if !allowed.contains(&k.as_str()) {
                            problems.push(format!("unknown key '{sec}.{k}'"));
                        }
                    }
                }
            }
        }
        problems
    }
}

const AM_KEYS: &[&str] = &[
    "iterations",
    "learning_rate",
    "normalize_grad",
    "tv_lambda",
    "tv_inner_iters",
    "blur_sigma_start",
    "blur_sigma_end",
    "blur_every",
    "alpha",
    "alpha_weight",
    "jitter.canvas",
    "jitter.center_box",
    "grad_crop",
    "seed",
    "seed_image",
    "clamp_lo",
    "clamp_hi",
];

/// Every recognised section and its keys.
pub const SCHEMA: &[(&str, &[&str])] = &[
    (
        "dataset",
        &["source", "preset", "images_per_class", "image_size", "seed", "pixel_noise", "path", "class_subdirs"],
    ),
    ("network", &["weights", "init_seed"]),
    ("train", &["learning_rate", "momentum", "epochs", "batch_size", "seed", "heldout"]),
    ("unit", &["layer", "index", "row", "col"]),
    ("am", AM_KEYS),
    (
        "schedule",
        &[
            "reference_input",
            "intensity_range",
            "tv_lambda",
            "learning_rate",
            "canvas",
            "iterations",
            "tv_inner_iters",
            "grad_crop",
            "jitter_center_box",
            "seed",
            "clamp_lo",
            "clamp_hi",
        ],
    ),
    (
        "facet",
        &["k", "m", "top_fraction", "pca_dims", "code_layer", "collect", "class", "perplexity", "tsne_iterations", "seed", "optimizer"],
    ),
    ("interpolate", &["steps", "facet_a", "facet_b", "image_a", "image_b"]),
    ("compare", &["variants", "columns"]),
    ("variant", AM_KEYS),
];

/// Typed reads that collect every problem instead of stopping at the first.
pub struct Reader<'a> {
    cfg: &'a RunConfig,
    problems: Vec<String>,
}

impl<'a> Reader<'a> {
    pub fn new(cfg: &'a RunConfig) -> Self {
        Reader { cfg, problems: Vec::new() }
    }

    pub fn config(&self) -> &RunConfig {
        self.cfg
    }

    pub fn problem(&mut self, msg: impl Into<String>) {
        self.problems.push(msg.into());
    }

    fn parse_one<T: FromStr>(&mut self, section: &str, key: &str, raw: &str) -> Option<T> {
        match raw.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                self.problems.push(format!("'{section}.{key}': cannot parse '{raw}' as {}", short_type::<T>()));
                None
            }
        }
    }

    pub fn opt<T: FromStr>(&mut self, section: &str, key: &str) -> Option<T> {
        let raw = self.cfg.get(section, key)?.to_string();
        self.parse_one(section, key, &raw)
    }

    pub fn get<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> T {
        self.opt(section, key).unwrap_or(default)
    }

    pub fn require<T: FromStr>(&mut self, section: &str, key: &str) -> Option<T> {
        if self.cfg.get(section, key).is_none() {
            self.problems.push(format!("missing required key '{section}.{key}'"));
            return None;
        }
        self.opt(section, key)
    }

    /// `none` (any case) maps to `None`.
    pub fn optional_value<T: FromStr>(&mut self, section: &str, key: &str, default: Option<T>) -> Option<T> {
        match self.cfg.get(section, key) {
            None => default,
            Some(v) if v.eq_ignore_ascii_case("none") => None,
            Some(v) => {
                let v = v.to_string();
                self.parse_one(section, key, &v)
            }
        }
    }

    /// Whitespace-separated values; tokens in `absent` become `None`.
    pub fn list<T: FromStr>(&mut self, section: &str, key: &str, absent: &[&str]) -> Option<Vec<Option<T>>> {
        let raw = self.cfg.get(section, key)?.to_string();
        let mut out = Vec::new();
        for tok in raw.split_whitespace() {
            if absent.iter().any(|a| tok.eq_ignore_ascii_case(a)) {
                out.push(None);
            } else {
                out.push(Some(self.parse_one(section, key, tok)?));
            }
        }
        Some(out)
    }

    pub fn finish(self) -> Result<(), CliError> {
        if self.problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::config(self.problems.join("; ")))
        }
    }
}

fn short_type<T>() -> &'static str {
    let name = std::any::type_name::<T>();
    match name {
        "bool" => "true/false",
        "f64" | "f32" => "a number",
        "usize" | "u64" | "u32" => "a non-negative integer",
        _ => name.rsplit("::").next().unwrap_or(name),
    }
}
