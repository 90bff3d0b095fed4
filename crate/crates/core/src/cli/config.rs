//! Pipeline configuration: defaults, TOML file, and command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::corpus::read_utf8;
use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::langid::{DEFAULT_ALPHA, DEFAULT_N_MAX, DEFAULT_THRESHOLD};
use crate::tokenize::{DEFAULT_MAX_LEN, DEFAULT_VOCAB_SIZE};
use crate::train::{PlanStage, TrainPlan, DEFAULT_MASK_RATE, DEFAULT_WEIGHT_DECAY};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed. Required by every command that draws random numbers.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub tokenizer: TokenizerSettings,
    pub model: ModelSettings,
    pub langid: LangIdSettings,
    pub adapt: AdaptSettings,
    pub finetune: FinetuneSettings,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub langid_data: Option<PathBuf>,
    pub langid_model: Option<PathBuf>,
    pub tokenizer: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub adapted: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSettings {
    pub vocab_size: usize,
    pub max_len: usize,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        TokenizerSettings {
            vocab_size: DEFAULT_VOCAB_SIZE,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
    pub layer_norm_epsilon: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSettings {
            d_model: m.d_model,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            max_positions: m.max_positions,
            dropout_rate: m.dropout_rate,
            layer_norm_epsilon: m.layer_norm_epsilon,
        }
    }
}

impl ModelSettings {
    pub fn to_model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let c = ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_positions: self.max_positions,
            dropout_rate: self.dropout_rate,
            layer_norm_epsilon: self.layer_norm_epsilon,
        };
        c.validate().map_err(|e| Error::InvalidArgument(format!("model: {e}")))?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LangIdSettings {
    pub n_max: usize,
    pub alpha: f64,
    pub threshold: f64,
    pub target: Option<String>,
}

impl Default for LangIdSettings {
    fn default() -> Self {
        LangIdSettings {
            n_max: DEFAULT_N_MAX,
            alpha: DEFAULT_ALPHA,
            threshold: DEFAULT_THRESHOLD,
            target: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub mask_rate: f64,
    pub shuffle: bool,
}

impl Default for AdaptSettings {
    fn default() -> Self {
        let p = TrainPlan::adapt();
        AdaptSettings {
            epochs: p.epochs,
            batch_size: p.batch_size,
            learning_rate: p.learning_rate,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            mask_rate: DEFAULT_MASK_RATE,
            shuffle: p.shuffle,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub shuffle: bool,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        let p = TrainPlan::finetune();
        FinetuneSettings {
            epochs: p.epochs,
            batch_size: p.batch_size,
            learning_rate: p.learning_rate,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            shuffle: p.shuffle,
        }
    }
}

impl PipelineConfig {
    /// Defaults, overlaid by `file` (if any), overlaid by `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut table = Value::try_from(PipelineConfig::default())
            .map_err(|e| Error::InvalidArgument(format!("config defaults: {e}")))?;
        if let Some(path) = file {
            let text = read_utf8(path)?;
            let parsed: Table = text
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
            merge(&mut table, Value::Table(parsed));
        }
        for (key, value) in overrides {
            set_path(&mut table, key, value.clone())?;
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidArgument(format!("config: {}", e.message())))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::InvalidArgument("seed: required (config file, --seed, or --set seed=N)".into()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    pub fn adapt_plan(&self) -> Result<TrainPlan> {
        let a = &self.adapt;
        Ok(TrainPlan {
            stage: PlanStage::Adapt,
            epochs: a.epochs,
            batch_size: a.batch_size,
            learning_rate: a.learning_rate,
            weight_decay: a.weight_decay,
            seed: self.seed()?,
            shuffle: a.shuffle,
            max_len: self.tokenizer.max_len,
            mask_rate: a.mask_rate,
        })
    }

    pub fn finetune_plan(&self) -> Result<TrainPlan> {
        let f = &self.finetune;
        Ok(TrainPlan {
            stage: PlanStage::Finetune,
            epochs: f.epochs,
            batch_size: f.batch_size,
            learning_rate: f.learning_rate,
            weight_decay: f.weight_decay,
            seed: self.seed()?,
            shuffle: f.shuffle,
            max_len: self.tokenizer.max_len,
            mask_rate: DEFAULT_MASK_RATE,
        })
    }
}

/// Returns the named path or a validation error naming the config key.
pub fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("paths.{key}: required")))
}

/// Like [`required`], and the path must exist.
pub fn existing<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let p = required(value, key)?;
    if !p.exists() {
        return Err(Error::InvalidArgument(format!("paths.{key}: {} does not exist", p.display())));
    }
    Ok(p)
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidArgument(format!("override key {key:?} is malformed")));
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let Value::Table(t) = cur else {
            return Err(Error::InvalidArgument(format!("override key {key:?}: {part} is not a section")));
        };
        cur = t.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
    }
    let Value::Table(t) = cur else {
        return Err(Error::InvalidArgument(format!("override key {key:?} does not name a section field")));
    };
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `section.key=value`. The value is read as a TOML literal, falling
/// back to a plain string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("--set {s:?}: expected KEY=VALUE")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key, value))
}

pub fn path_value(p: &Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = PipelineConfig::resolve(None, &[]).unwrap();
        assert_eq!(c, PipelineConfig::default());
        let back: PipelineConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn precedence_file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.toml");
        std::fs::write(&f, "seed = 3\n[adapt]\nepochs = 7\nbatch_size = 8\n").unwrap();
        let sets = vec![parse_override("adapt.epochs=9").unwrap()];
        let c = PipelineConfig::resolve(Some(&f), &sets).unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.adapt.epochs, 9);
        assert_eq!(c.adapt.batch_size, 8);
        assert_eq!(c.finetune.epochs, 4);
    }

    #[test]
    fn unknown_field_is_named() {
        let sets = vec![parse_override("adapt.epochz=1").unwrap()];
        let e = PipelineConfig::resolve(None, &sets).unwrap_err().to_string();
        assert!(e.contains("epochz"), "{e}");
        let sets = vec![parse_override("adapt.epochs=\"two\"").unwrap()];
        assert!(PipelineConfig::resolve(None, &sets).is_err());
    }

    #[test]
    fn seed_required() {
        assert!(PipelineConfig::default().seed().is_err());
    }

    #[test]
    fn string_fallback() {
        let (_, v) = parse_override("langid.target=tcy_latn").unwrap();
        assert_eq!(v, Value::String("tcy_latn".into()));
    }
}
