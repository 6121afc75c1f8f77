//! Flat `key=value` run configuration. Values are resolved in layers:
//! preset defaults, then a config file, then command-line flags, and
//! finally `VITRAY_SEED` if it is set.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use vitray::trainer::TrainConfig;
use vitray::vit::ModelConfig;

use crate::CliError;

pub const SEED_ENV: &str = "VITRAY_SEED";
pub const RESOLVED_FILE: &str = "config.resolved";
pub const DEFAULT_PRESET: &str = "tiny";

/// Keys accepted in files and via `--set`, in the order they are written.
pub const KEYS: &[&str] = &[
    "preset",
    "data",
    "out",
    "image_size",
    "patch_size",
    "embed_dim",
    "num_layers",
    "num_heads",
    "ffn_dim",
    "num_classes",
    "in_channels",
    "learning_rate",
    "batch_size",
    "max_epochs",
    "patience",
    "seed",
    "beta1",
    "beta2",
    "adam_eps",
    "shuffle",
    "split",
    "stratified",
    "standardize",
];

/// Written for reference; ignored when read back.
pub const DERIVED_KEYS: &[&str] = &["num_patches", "seq_len", "head_dim"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Training fraction of the train/test split.
    pub split: f64,
    pub stratified: bool,
    /// Optional `(mean, std)` applied after the /255 scaling.
    pub standardize: Option<(f64, f64)>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| usage(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(usage(format!("invalid value `{value}` for `{key}`, expected true or false"))),
    }
}

fn non_empty_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// Accepts a fraction (`0.8`) or a ratio (`80:20`).
pub fn parse_split(value: &str) -> Result<f64, CliError> {
    let v = value.trim();
    let ratio = match v.split_once(':') {
        Some((a, b)) => {
            let a: f64 = parse("split", a)?;
            let b: f64 = parse("split", b)?;
            a / (a + b)
        }
        None => parse("split", v)?,
    };
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(usage(format!("split `{value}` must leave both parts non-empty")));
    }
    Ok(ratio)
}

/// `off` or `mean,std`.
pub fn parse_standardize(value: &str) -> Result<Option<(f64, f64)>, CliError> {
    let v = value.trim();
    if v.is_empty() || v == "off" {
        return Ok(None);
    }
    let (m, s) = v
        .split_once(',')
        .ok_or_else(|| usage(format!("standardize `{value}` must be `off` or `mean,std`")))?;
    Ok(Some((parse("standardize", m)?, parse("standardize", s)?)))
}

/// `80:20` when the fraction is a whole percentage, the plain number otherwise.
pub fn format_split(ratio: f64) -> String {
    let pct = (ratio * 100.0).round();
    if (ratio * 100.0 - pct).abs() < 1e-9 {
        format!("{}:{}", pct as u32, 100 - pct as u32)
    } else {
        format!("{ratio}")
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, CliError> {
        let model = ModelConfig::preset(name)
            .ok_or_else(|| usage(format!("unknown preset `{name}`, expected tiny or paper")))?;
        Ok(RunConfig {
            preset: name.to_string(),
            model,
            train: TrainConfig::default(),
            split: 0.8,
            stratified: false,
            standardize: None,
            data: None,
            out: None,
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "preset" => {
                if value.trim() != self.preset {
                    return Err(usage("`preset` can only be chosen before other keys"));
                }
            }
            "data" => self.data = non_empty_path(value),
            "out" => self.out = non_empty_path(value),
            "image_size" => self.model.image_size = parse(key, value)?,
            "patch_size" => self.model.patch_size = parse(key, value)?,
            "embed_dim" => self.model.embed_dim = parse(key, value)?,
            "num_layers" => self.model.num_layers = parse(key, value)?,
            "num_heads" => self.model.num_heads = parse(key, value)?,
            "ffn_dim" => self.model.ffn_dim = parse(key, value)?,
            "num_classes" => self.model.num_classes = parse(key, value)?,
            "in_channels" => self.model.in_channels = parse(key, value)?,
            "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "max_epochs" => self.train.max_epochs = parse(key, value)?,
            "patience" => self.train.patience = parse(key, value)?,
            "seed" => self.train.seed = parse(key, value)?,
            "beta1" => self.train.beta1 = parse(key, value)?,
            "beta2" => self.train.beta2 = parse(key, value)?,
            "adam_eps" => self.train.adam_eps = parse(key, value)?,
            "shuffle" => self.train.shuffle = parse_bool(key, value)?,
            "split" => self.split = parse_split(value)?,
            "stratified" => self.stratified = parse_bool(key, value)?,
            "standardize" => self.standardize = parse_standardize(value)?,
            k if DERIVED_KEYS.contains(&k) => {}
            k => return Err(usage(format!("unknown config key `{k}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let (m, t) = (&self.model, &self.train);
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Some(match key {
            "preset" => self.preset.clone(),
            "data" => path(&self.data),
            "out" => path(&self.out),
            "image_size" => m.image_size.to_string(),
            "patch_size" => m.patch_size.to_string(),
            "embed_dim" => m.embed_dim.to_string(),
            "num_layers" => m.num_layers.to_string(),
            "num_heads" => m.num_heads.to_string(),
            "ffn_dim" => m.ffn_dim.to_string(),
            "num_classes" => m.num_classes.to_string(),
            "in_channels" => m.in_channels.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "max_epochs" => t.max_epochs.to_string(),
            "patience" => t.patience.to_string(),
            "seed" => t.seed.to_string(),
            "beta1" => t.beta1.to_string(),
            "beta2" => t.beta2.to_string(),
            "adam_eps" => t.adam_eps.to_string(),
            "shuffle" => t.shuffle.to_string(),
            "split" => format_split(self.split),
            "stratified" => self.stratified.to_string(),
            "standardize" => match self.standardize {
                Some((m, s)) => format!("{m},{s}"),
                None => "off".into(),
            },
            "num_patches" => m.num_patches().to_string(),
            "seq_len" => m.seq_len().to_string(),
            "head_dim" => m.head_dim().to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| usage(e.to_string()))?;
        self.train.validate().map_err(|e| usage(e.to_string()))?;
        if let Some((m, s)) = self.standardize {
            if !(m.is_finite() && s.is_finite() && s > 0.0) {
                return Err(usage(format!("standardize needs a finite mean and positive std, got {m},{s}")));
            }
        }
        if self.model.in_channels != 3 {
            return Err(usage(
                "in_channels must be 3: images are loaded as replicated three-channel tensors",
            ));
        }
        Ok(())
    }

    /// The resolved view: derived geometry first, then every key.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# resolved run configuration\n");
        for k in DERIVED_KEYS.iter().chain(KEYS) {
            writeln!(s, "{k}={}", self.get(k).unwrap()).unwrap();
        }
        s
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(RESOLVED_FILE);
        crate::write_atomic(&path, self.to_text().as_bytes())?;
        Ok(path)
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{origin}:{}: expected key=value, got `{line}`", n + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_pairs(&text, &path.display().to_string())
}

/// Layers preset < file < flags < env seed. The preset comes from the flag
/// if given, else from the file, else `tiny`.
pub fn resolve(
    preset_flag: Option<&str>,
    file_pairs: &[(String, String)],
    flag_pairs: &[(String, String)],
    env_seed: Option<&str>,
) -> Result<RunConfig, CliError> {
    let file_preset = file_pairs
        .iter()
        .rev()
        .find(|(k, _)| k == "preset")
        .map(|(_, v)| v.as_str());
    let name = preset_flag.or(file_preset).unwrap_or(DEFAULT_PRESET);
    let mut cfg = RunConfig::preset(name)?;
    for (k, v) in file_pairs.iter().chain(flag_pairs) {
        if k == "preset" {
            continue;
        }
        cfg.set(k, v)?;
    }
    if let Some(seed) = env_seed {
        cfg.train.seed = parse(SEED_ENV, seed)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
