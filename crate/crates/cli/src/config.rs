//! Flat `key = value` run configuration.
//!
//! Every key has a default; [`KEYS`] is the authoritative list. The resolved
//! configuration (defaults merged with file values and overrides) is written
//! next to every run's outputs and parses back to the same [`RunConfig`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rf_uda::{Arch, AugmentMode, AugmentPolicy, Error, Factor, Result, SynthSpec, TrainConfig};

/// Name of the resolved configuration written into every output directory.
pub const RESOLVED_CONFIG_FILE: &str = "config.txt";

/// A configuration key with its default value and a one-line description.
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

/// Every accepted key, in the order used for resolved configs.
pub const KEYS: &[Key] = &[
    key("data_dir", "", "dataset directory with manifest.csv; exclusive with synth"),
    key("classes", "", "class count of a data_dir dataset"),
    key("synth", "false", "generate the synthetic dataset in memory; exclusive with data_dir"),
    key("synth_seed", "0", "seed of the synthetic generator"),
    key("synth_classes", "6", "synthetic gesture classes (2..=8)"),
    key("synth_grid", "16", "synthetic spatial bins per axis"),
    key("synth_frames", "24", "synthetic frames per sample"),
    key("synth_environments", "2", "synthetic environment count"),
    key("synth_subjects", "4", "synthetic subject count"),
    key("synth_locations", "5", "synthetic location count"),
    key("synth_orientations", "4", "synthetic orientation count"),
    key("synth_samples_per_cell", "1", "repetitions per class and domain cell"),
    key("synth_location_shift", "1.5", "translation per location step, in cells"),
    key("synth_orientation_step_deg", "15", "rotation between neighbouring orientations"),
    key("synth_orientation_jitter_deg", "0", "per-sample rotation noise, degrees either side"),
    key("synth_subject_scale_step", "0.08", "relative extent and speed change per subject"),
    key("synth_environment_floor", "0.15", "amplitude of the environment noise floor"),
    key("synth_noise_level", "0.05", "amplitude of i.i.d. noise"),
    key("synth_radius", "4", "trajectory radius in cells"),
    key("synth_blob_sigma", "1.2", "width of the energy blob in cells"),
    key("synth_peak_amplitude", "1", "blob peak value"),
    key("synth_jitter", "0.5", "per-sample positional jitter in cells"),
    key("split_factor", "orientation", "domain factor to hold out"),
    key("held_value", "", "held-out value of split_factor, the target domain"),
    key("out", "out", "output directory"),
    key("checkpoint", "", "checkpoint to evaluate; defaults to <out>/model.ckpt"),
    key("batch_size", "32", "labeled rows per step"),
    key("mu", "1", "unlabeled rows per labeled row"),
    key("tau0", "0.92", "initial pseudo-label threshold"),
    key("tau_step", "0.001", "threshold increase per epoch"),
    key("tau_max", "0.99", "threshold ceiling"),
    key("lambda_u", "1", "weight of the consistency loss"),
    key("eta_c", "0.92", "weight of the confidence constraint"),
    key("lc_divisor", "pseudo_count", "confidence constraint divisor: pseudo_count or mu_b"),
    key("clean_pseudo_forward", "false", "predict unlabeled rows without dropout"),
    key("learning_rate", "0.01", "SGD learning rate"),
    key("momentum", "0.9", "SGD momentum"),
    key("epochs", "50", "training epochs"),
    key("seed", "0", "seed of initialization, shuffling, dropout and augmentation"),
    key("augment_mode", "both", "erasure: none, feature_only, time_only or both"),
    key("erase_cells", "", "cells erased per sample; defaults to ceil(0.1 N^2)"),
    key("erase_frames", "", "frames erased per sample; defaults to ceil(0.1 T)"),
    key("conv_kernels", "16", "convolution kernels"),
    key("kernel_size", "3", "convolution kernel side"),
    key("pool", "2", "max-pool window side"),
    key("dense1", "128", "width of the first per-frame dense layer"),
    key("dense2", "64", "width of the second per-frame dense layer"),
    key("gru_hidden", "64", "GRU state width"),
    key("head_width", "64", "width of the recognizer's hidden layer"),
    key("dropout_extractor", "0.3", "dropout after pooling"),
    key("dropout_head", "0.5", "dropout before the recognizer"),
    key("disable_lc", "false", "ablate: add a variant with eta_c = 0"),
    key("disable_augment", "false", "ablate: add a variant without erasure"),
    key("include_source_only", "false", "ablate: add a variant with mu = 0"),
    key("threshold_sweep", "", "ablate: comma-separated tau0 values"),
    key("eta_sweep", "", "ablate: comma-separated eta_c values"),
    key("seeds", "", "ablate: comma-separated seeds; defaults to seed"),
    key("held_values", "", "ablate: comma-separated held values; defaults to held_value"),
];

/// Split `key = value` lines. `#` starts a comment; blank lines are skipped.
/// Keys must be unique within one text.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if pairs.iter().any(|(p, _)| p == k) {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
        pairs.push((k.to_string(), v.to_string()));
    }
    Ok(pairs)
}

/// Parse a `--set key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Dir { path: PathBuf, classes: usize },
    Synth { spec: SynthSpec, seed: u64 },
}

/// Variant switches of `ablate`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationPlan {
    pub disable_lc: bool,
    pub disable_augment: bool,
    pub include_source_only: bool,
    pub threshold_sweep: Vec<f64>,
    pub eta_sweep: Vec<f64>,
    pub seeds: Vec<u64>,
    pub held_values: Vec<String>,
}

impl AblationPlan {
    pub fn any_switch(&self) -> bool {
        self.disable_lc
            || self.disable_augment
            || self.include_source_only
            || !self.threshold_sweep.is_empty()
            || !self.eta_sweep.is_empty()
    }
}

/// Architecture keys; grid, frames and classes come from the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchSettings {
    pub conv_kernels: usize,
    pub kernel_size: usize,
    pub pool: usize,
    pub dense1: usize,
    pub dense2: usize,
    pub gru_hidden: usize,
    pub head_width: usize,
    pub dropout_extractor: f64,
    pub dropout_head: f64,
}

impl ArchSettings {
    pub fn arch(&self, grid: usize, frames: usize, classes: usize) -> Arch {
        Arch {
            grid,
            frames,
            classes,
            conv_kernels: self.conv_kernels,
            kernel_size: self.kernel_size,
            pool: self.pool,
            dense1: self.dense1,
            dense2: self.dense2,
            gru_hidden: self.gru_hidden,
            head_width: self.head_width,
            dropout_extractor: self.dropout_extractor,
            dropout_head: self.dropout_head,
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    pub data: DataSource,
    pub split_factor: Factor,
    pub held_value: Option<String>,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Training settings; the erasure counts are placeholders until
    /// [`RunConfig::train_config`] knows the geometry.
    pub train: TrainConfig,
    pub augment_mode: AugmentMode,
    pub erase_cells: Option<usize>,
    pub erase_frames: Option<usize>,
    pub arch: ArchSettings,
    pub ablation: AblationPlan,
}

fn lookup<'a>(values: &'a BTreeMap<String, String>, k: &str) -> &'a str {
    values.get(k).map(String::as_str).unwrap_or("")
}

fn parse_value<T: FromStr>(values: &BTreeMap<String, String>, k: &str, what: &str) -> Result<T> {
    let v = lookup(values, k);
    v.parse()
        .map_err(|_| Error::Config(format!("`{k}` expects {what}, got `{v}`")))
}

fn real(values: &BTreeMap<String, String>, k: &str) -> Result<f64> {
    let v: f64 = parse_value(values, k, "a number")?;
    if !v.is_finite() {
        return Err(Error::Config(format!("`{k}` must be finite")));
    }
    Ok(v)
}

fn int(values: &BTreeMap<String, String>, k: &str) -> Result<usize> {
    parse_value(values, k, "a nonnegative integer")
}

fn flag(values: &BTreeMap<String, String>, k: &str) -> Result<bool> {
    parse_value(values, k, "true or false")
}

fn optional_int(values: &BTreeMap<String, String>, k: &str) -> Result<Option<usize>> {
    if lookup(values, k).is_empty() {
        Ok(None)
    } else {
        int(values, k).map(Some)
    }
}

fn list<T: FromStr>(values: &BTreeMap<String, String>, k: &str, what: &str) -> Result<Vec<T>> {
    let v = lookup(values, k);
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|item| {
            let item = item.trim();
            item.parse()
                .map_err(|_| Error::Config(format!("`{k}` expects a comma-separated list of {what}, got `{item}`")))
        })
        .collect()
}

impl RunConfig {
    /// Defaults overlaid with `pairs` in order. Unknown keys are rejected.
    pub fn from_pairs<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut values: BTreeMap<String, String> =
            KEYS.iter().map(|k| (k.name.to_string(), k.default.to_string())).collect();
        for (k, v) in pairs {
            match values.get_mut(&k) {
                Some(slot) => *slot = v,
                None => return Err(Error::Config(format!("unknown key `{k}`"))),
            }
        }
        Self::from_values(values)
    }

    /// Parse a configuration file's text, then apply `overrides`.
    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = parse_pairs(text)?;
        pairs.extend(overrides.iter().cloned());
        Self::from_pairs(pairs)
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text, overrides)
    }

    fn from_values(values: BTreeMap<String, String>) -> Result<Self> {
        let v = &values;
        let data_dir = lookup(v, "data_dir");
        let synth = flag(v, "synth")?;
        let data = match (data_dir.is_empty(), synth) {
            (false, false) => {
                if lookup(v, "classes").is_empty() {
                    return Err(Error::Config("`classes` is required with `data_dir`".into()));
                }
                DataSource::Dir {
                    path: PathBuf::from(data_dir),
                    classes: int(v, "classes")?,
                }
            }
            (true, true) => {
                let spec = SynthSpec {
                    class_count: int(v, "synth_classes")?,
                    grid: int(v, "synth_grid")?,
                    frames: int(v, "synth_frames")?,
                    environments: int(v, "synth_environments")?,
                    subjects: int(v, "synth_subjects")?,
                    locations: int(v, "synth_locations")?,
                    orientations: int(v, "synth_orientations")?,
                    samples_per_cell: int(v, "synth_samples_per_cell")?,
                    location_shift: real(v, "synth_location_shift")?,
                    orientation_step_deg: real(v, "synth_orientation_step_deg")?,
                    orientation_jitter_deg: real(v, "synth_orientation_jitter_deg")?,
                    subject_scale_step: real(v, "synth_subject_scale_step")?,
                    environment_floor: real(v, "synth_environment_floor")?,
                    noise_level: real(v, "synth_noise_level")?,
                    radius: real(v, "synth_radius")?,
                    blob_sigma: real(v, "synth_blob_sigma")?,
                    peak_amplitude: real(v, "synth_peak_amplitude")?,
                    jitter: real(v, "synth_jitter")?,
                };
                spec.validate().map_err(|e| Error::Config(e.to_string()))?;
                DataSource::Synth {
                    spec,
                    seed: parse_value(v, "synth_seed", "an unsigned integer")?,
                }
            }
            (false, true) => return Err(Error::Config("set either `data_dir` or `synth`, not both".into())),
            (true, false) => return Err(Error::Config("no data source: set `data_dir` or `synth = true`".into())),
        };

        let train = TrainConfig {
            batch_size: int(v, "batch_size")?,
            mu: int(v, "mu")?,
            tau0: real(v, "tau0")?,
            tau_step: real(v, "tau_step")?,
            tau_max: real(v, "tau_max")?,
            lambda_u: real(v, "lambda_u")?,
            eta_c: real(v, "eta_c")?,
            learning_rate: real(v, "learning_rate")?,
            momentum: real(v, "momentum")?,
            epochs: int(v, "epochs")?,
            seed: parse_value(v, "seed", "an unsigned integer")?,
            augment: AugmentPolicy::identity(),
            lc_divisor: lookup(v, "lc_divisor").parse()?,
            clean_pseudo_forward: flag(v, "clean_pseudo_forward")?,
        };
        train.validate()?;

        let arch = ArchSettings {
            conv_kernels: int(v, "conv_kernels")?,
            kernel_size: int(v, "kernel_size")?,
            pool: int(v, "pool")?,
            dense1: int(v, "dense1")?,
            dense2: int(v, "dense2")?,
            gru_hidden: int(v, "gru_hidden")?,
            head_width: int(v, "head_width")?,
            dropout_extractor: real(v, "dropout_extractor")?,
            dropout_head: real(v, "dropout_head")?,
        };

        let threshold_sweep: Vec<f64> = list(v, "threshold_sweep", "numbers")?;
        if let Some(t) = threshold_sweep.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Config(format!("threshold_sweep value {t} outside (0, 1)")));
        }
        let eta_sweep: Vec<f64> = list(v, "eta_sweep", "numbers")?;
        if let Some(e) = eta_sweep.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::Config(format!("eta_sweep value {e} must be >= 0")));
        }
        let held = lookup(v, "held_value");
        let held_value = (!held.is_empty()).then(|| held.to_string());
        let mut held_values: Vec<String> = list(v, "held_values", "domain values")?;
        if held_values.is_empty() {
            held_values.extend(held_value.clone());
        }
        let mut seeds: Vec<u64> = list(v, "seeds", "unsigned integers")?;
        if seeds.is_empty() {
            seeds.push(train.seed);
        }
        let ablation = AblationPlan {
            disable_lc: flag(v, "disable_lc")?,
            disable_augment: flag(v, "disable_augment")?,
            include_source_only: flag(v, "include_source_only")?,
            threshold_sweep,
            eta_sweep,
            seeds,
            held_values,
        };

        let checkpoint = lookup(v, "checkpoint");
        let out = lookup(v, "out");
        if out.is_empty() {
            return Err(Error::Config("`out` must not be empty".into()));
        }
        Ok(RunConfig {
            data,
            split_factor: lookup(v, "split_factor").parse()?,
            held_value,
            out: PathBuf::from(out),
            checkpoint: (!checkpoint.is_empty()).then(|| PathBuf::from(checkpoint)),
            train,
            augment_mode: lookup(v, "augment_mode").parse()?,
            erase_cells: optional_int(v, "erase_cells")?,
            erase_frames: optional_int(v, "erase_frames")?,
            arch,
            ablation,
            values,
        })
    }

    /// Replace one key and re-validate.
    pub fn with(&self, key: &str, value: impl ToString) -> Result<Self> {
        let mut values = self.values.clone();
        match values.get_mut(key) {
            Some(slot) => *slot = value.to_string(),
            None => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Self::from_values(values)
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Every key in [`KEYS`] order, one `key = value` line each.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{} = {}\n", k.name, lookup(&self.values, k.name)))
            .collect()
    }

    /// The held-out value, required by every subcommand that splits.
    pub fn require_held_value(&self) -> Result<&str> {
        self.held_value
            .as_deref()
            .ok_or_else(|| Error::Config("`held_value` is required".into()))
    }

    /// Training settings with the erasure policy resolved for a geometry.
    pub fn train_config(&self, grid: usize, frames: usize) -> Result<TrainConfig> {
        let defaults = AugmentPolicy::default_for(grid, frames);
        let augment = AugmentPolicy {
            erase_cells: self.erase_cells.unwrap_or(defaults.erase_cells),
            erase_frames: self.erase_frames.unwrap_or(defaults.erase_frames),
            mode: self.augment_mode,
        };
        augment.validate(grid, frames)?;
        Ok(TrainConfig {
            augment,
            ..self.train.clone()
        })
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }
}
