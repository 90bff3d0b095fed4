//! Checkpoint directory layout:
//!
//! ```text
//! config.json       model config, manifest, head schema
//! encoder.bin       little-endian f32, tensors concatenated in canonical order
//! encoder.shapes    one "name dim×dim" line per tensor
//! head.bin          (fine-tuned checkpoints only)
//! head.shapes
//! tokenizer.json
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_utf8, TaskSchema};
use crate::encoder::{init_weights, ClassifierHead, EncoderWeights, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tokenize::TokenizerModel;

pub const FORMAT_VERSION: u32 = 1;

const CONFIG_FILE: &str = "config.json";
const ENCODER_BIN: &str = "encoder.bin";
const ENCODER_SHAPES: &str = "encoder.shapes";
const HEAD_BIN: &str = "head.bin";
const HEAD_SHAPES: &str = "head.shapes";
const TOKENIZER_FILE: &str = "tokenizer.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Init,
    Adapted,
    Finetuned,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Adapted => "adapted",
            Stage::Finetuned => "finetuned",
        }
    }
}

/// Provenance carried with every checkpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub stage: Stage,
    pub seed: u64,
    /// Hyperparameters of the run that produced this checkpoint, as strings.
    pub hyperparameters: BTreeMap<String, String>,
}

impl Manifest {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.hyperparameters.get(key).map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadState {
    pub schema: TaskSchema,
    pub weights: ClassifierHead<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderWeights<f32>,
    pub head: Option<HeadState>,
    pub tokenizer: TokenizerModel,
    pub manifest: Manifest,
}

impl Checkpoint {
    /// Freshly initialized encoder for `tokenizer`. The vocabulary size is
    /// taken from the tokenizer, overriding `config.vocab_size`.
    pub fn init(tokenizer: TokenizerModel, config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut config = config.clone();
        config.vocab_size = tokenizer.vocab_size();
        let encoder = init_weights(&config, seed)?;
        let mut hyperparameters = BTreeMap::new();
        hyperparameters.insert("init_seed".into(), seed.to_string());
        Ok(Checkpoint {
            encoder,
            head: None,
            tokenizer,
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                stage: Stage::Init,
                seed,
                hyperparameters,
            },
        })
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.encoder.config
    }
}

#[derive(Serialize, Deserialize)]
struct HeadConfig {
    task: String,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    format_version: u32,
    model: ModelConfig,
    manifest: Manifest,
    head: Option<HeadConfig>,
}

fn shapes_text(named: &[(String, &Tensor<f32>, bool)]) -> String {
    let mut out = String::new();
    for (name, t, _) in named {
        let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{name} {}", dims.join("x"));
    }
    out
}

fn blob(named: &[(String, &Tensor<f32>, bool)]) -> Vec<u8> {
    let n: usize = named.iter().map(|(_, t, _)| t.len()).sum();
    let mut out = Vec::with_capacity(n * 4);
    for (_, t, _) in named {
        for x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Writes the checkpoint into a temporary sibling directory and renames it
/// into place. An existing target is replaced only if it is empty or holds a
/// checkpoint.
pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    if ckpt.manifest.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: ckpt.manifest.format_version,
            supported: FORMAT_VERSION,
        });
    }
    if dir.exists() {
        let has_entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if has_entries && !dir.join(CONFIG_FILE).exists() {
            return Err(Error::InvalidArgument(format!(
                "{} exists and is not a checkpoint directory",
                dir.display()
            )));
        }
    }
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => Path::new(".").to_path_buf(),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let tmp = tempfile::Builder::new()
        .prefix(".ckpt-")
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = tmp.path().join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };

    let config = ConfigFile {
        format_version: FORMAT_VERSION,
        model: ckpt.encoder.config.clone(),
        manifest: ckpt.manifest.clone(),
        head: ckpt.head.as_ref().map(|h| HeadConfig {
            task: h.schema.name.clone(),
            labels: h.schema.labels.clone(),
        }),
    };
    write(CONFIG_FILE, serde_json::to_string_pretty(&config)?.as_bytes())?;
    let enc = ckpt.encoder.named();
    write(ENCODER_BIN, &blob(&enc))?;
    write(ENCODER_SHAPES, shapes_text(&enc).as_bytes())?;
    if let Some(h) = &ckpt.head {
        let named = h.weights.named();
        write(HEAD_BIN, &blob(&named))?;
        write(HEAD_SHAPES, shapes_text(&named).as_bytes())?;
    }
    write(TOKENIZER_FILE, ckpt.tokenizer.to_json()?.as_bytes())?;

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let staged = tmp.keep();
    fs::rename(&staged, dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn require(dir: &Path, name: &str) -> Result<std::path::PathBuf> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::MissingComponent(p))
    }
}

fn parse_shapes(path: &Path) -> Result<Vec<(String, Vec<usize>)>> {
    let text = read_utf8(path)?;
    super::lines_numbered(&text)
        .map(|(n, line)| {
            let bad = || Error::Malformed {
                path: path.to_path_buf(),
                line: n,
                message: format!("expected \"name d1xd2\", found {line:?}"),
            };
            let (name, dims) = line.split_once(' ').ok_or_else(bad)?;
            let dims = dims
                .split('x')
                .map(|d| d.parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            Ok((name.to_string(), dims))
        })
        .collect()
}

/// Reads tensors from `bin` into `targets`, checking names and shapes
/// against the shapes file.
fn read_tensors(dir: &Path, bin: &str, shapes: &str, targets: Vec<(String, &mut Tensor<f32>, bool)>) -> Result<()> {
    let shapes_path = require(dir, shapes)?;
    let bin_path = require(dir, bin)?;
    let listed = parse_shapes(&shapes_path)?;
    if listed.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{}: lists {} tensors, model config implies {}",
            shapes_path.display(),
            listed.len(),
            targets.len()
        )));
    }
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let expected_len: usize = targets.iter().map(|(_, t, _)| t.len() * 4).sum();
    let mut offset = 0;
    for ((name, dims), (want_name, t, _)) in listed.into_iter().zip(targets) {
        if name != want_name || dims != t.shape {
            return Err(Error::ShapeMismatch {
                tensor: want_name,
                expected: t.shape.clone(),
                found: dims,
            });
        }
        let n = t.len() * 4;
        let chunk = bytes.get(offset..offset + n).ok_or_else(|| Error::ShapeMismatch {
            tensor: format!("{bin} (file size)"),
            expected: vec![expected_len],
            found: vec![bytes.len()],
        })?;
        for (x, b) in t.data.iter_mut().zip(chunk.chunks_exact(4)) {
            *x = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
        offset += n;
    }
    if offset != bytes.len() {
        return Err(Error::ShapeMismatch {
            tensor: format!("{bin} (file size)"),
            expected: vec![expected_len],
            found: vec![bytes.len()],
        });
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let config_path = require(dir, CONFIG_FILE)?;
    let raw: serde_json::Value = serde_json::from_str(&read_utf8(&config_path)?)?;
    let found = raw.get("format_version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found,
            supported: FORMAT_VERSION,
        });
    }
    let config: ConfigFile = serde_json::from_value(raw)?;
    if config.manifest.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: config.manifest.format_version,
            supported: FORMAT_VERSION,
        });
    }
    config.model.validate()?;
    let tokenizer = TokenizerModel::load(&require(dir, TOKENIZER_FILE)?)?;
    if tokenizer.vocab_size() != config.model.vocab_size {
        return Err(Error::InvalidArgument(format!(
            "tokenizer has {} tokens but the model expects {}",
            tokenizer.vocab_size(),
            config.model.vocab_size
        )));
    }
    let mut encoder = EncoderWeights::<f32>::zeros(&config.model);
    read_tensors(dir, ENCODER_BIN, ENCODER_SHAPES, encoder.named_mut())?;
    let head = match config.head {
        Some(h) => {
            let schema = TaskSchema::new(h.task, h.labels)?;
            let mut weights = ClassifierHead::zeros(config.model.d_model, schema.len());
            read_tensors(dir, HEAD_BIN, HEAD_SHAPES, weights.named_mut())?;
            Some(HeadState { schema, weights })
        }
        None => None,
    };
    Ok(Checkpoint {
        encoder,
        head,
        tokenizer,
        manifest: config.manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::tokenize::{train_tokenizer, MIN_VOCAB};

    fn small() -> Checkpoint {
        let tok = train_tokenizer(&Corpus::from_texts(["abab abab", "ಕಥೆ ಕಥೆ"]), MIN_VOCAB + 8).unwrap();
        let cfg = ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_positions: 16,
            ..ModelConfig::default()
        };
        Checkpoint::init(tok, &cfg, 5).unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut ckpt = small();
        ckpt.head = Some(HeadState {
            schema: TaskSchema::fine(),
            weights: ClassifierHead::init(8, 5, 3),
        });
        ckpt.manifest.hyperparameters.insert("note".into(), "ಕಥೆ\t\"quoted\"".into());
        let p = dir.path().join("ck");
        save_checkpoint(&ckpt, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        for ((_, a, _), (_, b, _)) in ckpt.encoder.named().iter().zip(back.encoder.named()) {
            let ab: Vec<u32> = a.data.iter().map(|x| x.to_bits()).collect();
            let bb: Vec<u32> = b.data.iter().map(|x| x.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(back, ckpt);
        // overwrite in place
        save_checkpoint(&ckpt, &p).unwrap();
    }

    #[test]
    fn missing_tokenizer_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck");
        save_checkpoint(&small(), &p).unwrap();
        fs::remove_file(p.join(TOKENIZER_FILE)).unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(matches!(&err, Error::MissingComponent(f) if f.ends_with(TOKENIZER_FILE)), "{err}");
    }

    #[test]
    fn version_mismatch_states_both() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck");
        save_checkpoint(&small(), &p).unwrap();
        let cfg = fs::read_to_string(p.join(CONFIG_FILE)).unwrap();
        fs::write(p.join(CONFIG_FILE), cfg.replacen("\"format_version\": 1", "\"format_version\": 9", 1)).unwrap();
        let msg = load_checkpoint(&p).unwrap_err().to_string();
        assert!(msg.contains('9') && msg.contains('1'), "{msg}");
    }

    #[test]
    fn shape_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck");
        save_checkpoint(&small(), &p).unwrap();
        let shapes = fs::read_to_string(p.join(ENCODER_SHAPES)).unwrap();
        fs::write(p.join(ENCODER_SHAPES), shapes.replacen("pos_emb 16x8", "pos_emb 8x16", 1)).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn refuses_to_clobber_foreign_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("notes.txt"), "keep").unwrap();
        assert!(save_checkpoint(&small(), dir.path()).is_err());
        assert!(dir.path().join("notes.txt").exists());
    }
}
