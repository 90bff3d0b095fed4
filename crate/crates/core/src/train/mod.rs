//! Masking, optimization, the adaptation and fine-tuning loops, and model
//! selection.

mod masking;
mod optim;

pub use masking::{mask_batch, MaskedBatch, MaskingPolicy, DEFAULT_MASK_RATE};
pub use optim::{adamw_step, OptimizerHyper, OptimizerState, ParamSlot, DEFAULT_WEIGHT_DECAY};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Checkpoint, Corpus, HeadState, LabeledDataset, Stage};
use crate::encoder::{
    backward_classify, backward_mlm, classify_logits, Batch, ClassifierHead, EncoderWeights, Gradients, PassOptions,
};
use crate::error::{Error, Result};
use crate::evalx::{best_by_macro_f1, evaluate, ConfusionMatrix, EvaluationReport};
use crate::rng;
use crate::tokenize::{TokenSequence, TokenizerModel, DEFAULT_MAX_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanStage {
    Adapt,
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub stage: PlanStage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Sequence length used when tokenizing training and evaluation text.
    pub max_len: usize,
    /// MLM selection rate; ignored by fine-tuning.
    pub mask_rate: f64,
}

impl TrainPlan {
    /// Two epochs, batch 16, learning rate 5e-5.
    pub fn adapt() -> Self {
        TrainPlan {
            stage: PlanStage::Adapt,
            epochs: 2,
            batch_size: 16,
            learning_rate: 5e-5,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            seed: 0,
            shuffle: true,
            max_len: DEFAULT_MAX_LEN,
            mask_rate: DEFAULT_MASK_RATE,
        }
    }

    /// Four epochs, batch 16, learning rate 2e-5.
    pub fn finetune() -> Self {
        TrainPlan {
            stage: PlanStage::Finetune,
            epochs: 4,
            learning_rate: 2e-5,
            ..Self::adapt()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn hyper(&self) -> OptimizerHyper {
        OptimizerHyper::new(self.learning_rate).with_weight_decay(self.weight_decay)
    }

    fn validate(&self, expected: PlanStage, max_positions: usize) -> Result<()> {
        if self.stage != expected {
            return Err(Error::InvalidArgument(format!(
                "plan stage is {:?}, expected {expected:?}",
                self.stage
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.max_len < 2 || self.max_len > max_positions {
            return Err(Error::InvalidArgument(format!(
                "max_len {} must lie in [2, max_positions = {max_positions}]",
                self.max_len
            )));
        }
        self.hyper().validate()
    }

    fn record(&self, manifest: &mut crate::corpus::Manifest) {
        let h = &mut manifest.hyperparameters;
        h.insert("epochs".into(), self.epochs.to_string());
        h.insert("batch_size".into(), self.batch_size.to_string());
        h.insert("learning_rate".into(), format!("{:e}", self.learning_rate));
        h.insert("weight_decay".into(), format!("{:e}", self.weight_decay));
        h.insert("seed".into(), self.seed.to_string());
        h.insert("shuffle".into(), self.shuffle.to_string());
        h.insert("max_len".into(), self.max_len.to_string());
        manifest.seed = self.seed;
    }
}

/// One line of a training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: PlanStage,
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain record")
    }
}

fn encode_all<'a>(tok: &TokenizerModel, texts: impl Iterator<Item = &'a str>, max_len: usize) -> Vec<TokenSequence> {
    texts.map(|t| tok.encode(t, max_len)).collect()
}

fn epoch_order(n: usize, shuffle: bool, rng: &mut rng::StreamRng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(rng);
    }
    order
}

fn collate(seqs: &[TokenSequence], idx: &[usize]) -> Batch {
    let mut b = Batch::from_sequences(idx.iter().map(|&i| &seqs[i]));
    b.trim_padding();
    b
}

fn apply_update(
    encoder: &mut EncoderWeights<f32>,
    head: Option<&mut ClassifierHead<f32>>,
    grads: &Gradients<f32>,
    state: &mut OptimizerState<f32>,
    hyper: &OptimizerHyper,
) -> Result<()> {
    let mut slots: Vec<ParamSlot<'_, f32>> = encoder
        .named_mut()
        .into_iter()
        .map(|(name, t, decay)| ParamSlot {
            name,
            value: t.data.as_mut_slice(),
            decay,
        })
        .collect();
    if let Some(h) = head {
        slots.extend(h.named_mut().into_iter().map(|(name, t, decay)| ParamSlot {
            name,
            value: t.data.as_mut_slice(),
            decay,
        }));
    }
    let g: Vec<&[f32]> = grads.named().into_iter().map(|(_, t, _)| t.data.as_slice()).collect();
    adamw_step(&mut slots, &g, state, hyper)
}

/// Continued MLM training of the checkpoint's encoder on `corpus`. The input
/// checkpoint is left untouched; the result is tagged `adapted` with the plan
/// recorded in its manifest.
pub fn adapt_mlm(ckpt: &Checkpoint, corpus: &Corpus, plan: &TrainPlan) -> Result<(Checkpoint, Vec<EpochLog>)> {
    plan.validate(PlanStage::Adapt, ckpt.model_config().max_positions)?;
    let policy = MaskingPolicy::new(plan.mask_rate)?;
    if corpus.is_empty() {
        return Err(Error::Empty("adaptation corpus".into()));
    }
    let tok = &ckpt.tokenizer;
    let seqs = encode_all(tok, corpus.texts(), plan.max_len);
    let mut weights = ckpt.encoder.clone();
    let mut state = OptimizerState::default();
    let hyper = plan.hyper();
    let mut shuffle_rng = rng::stream(plan.seed, rng::SHUFFLE);
    let mut mask_rng = rng::stream(plan.seed, rng::MASKING);
    let mut dropout_rng = rng::stream(plan.seed, rng::DROPOUT);
    let vocab = weights.config.vocab_size;

    let mut log = Vec::with_capacity(plan.epochs);
    for epoch in 1..=plan.epochs {
        let order = epoch_order(seqs.len(), plan.shuffle, &mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for idx in order.chunks(plan.batch_size) {
            let batch = collate(&seqs, idx);
            let masked = mask_batch(&batch, &policy, &tok.specials, vocab, &mut mask_rng);
            if masked.selected() == 0 {
                continue;
            }
            let input = Batch {
                ids: masked.ids,
                attention: batch.attention,
            };
            let opts = PassOptions {
                loss_scale: 1.0,
                dropout_seed: Some(dropout_rng.random()),
            };
            let (loss, grads) = backward_mlm(&weights, &input, &masked.labels, opts)?;
            apply_update(&mut weights, None, &grads, &mut state, &hyper)?;
            loss_sum += f64::from(loss);
            batches += 1;
        }
        log.push(EpochLog {
            stage: PlanStage::Adapt,
            epoch,
            loss: if batches == 0 { f64::NAN } else { loss_sum / batches as f64 },
            macro_f1: None,
        });
    }

    let mut out = ckpt.clone();
    out.encoder = weights;
    out.manifest.stage = Stage::Adapted;
    plan.record(&mut out.manifest);
    out.manifest
        .hyperparameters
        .insert("mask_rate".into(), format!("{:e}", plan.mask_rate));
    out.manifest
        .hyperparameters
        .insert("adapted_from".into(), ckpt.manifest.stage.as_str().into());
    Ok((out, log))
}

/// Argmax class per sequence (first maximum on ties), evaluation mode.
pub fn predict_indices(
    encoder: &EncoderWeights<f32>,
    head: &ClassifierHead<f32>,
    seqs: &[TokenSequence],
    batch_size: usize,
) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..seqs.len()).collect();
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = collate(seqs, chunk);
        for row in classify_logits(encoder, head, &batch)? {
            let mut best = 0;
            for (i, &z) in row.iter().enumerate() {
                if z > row[best] {
                    best = i;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

fn evaluate_seqs(
    encoder: &EncoderWeights<f32>,
    head: &ClassifierHead<f32>,
    seqs: &[TokenSequence],
    golds: &[usize],
    labels: &[String],
    batch_size: usize,
) -> Result<EvaluationReport> {
    let preds = predict_indices(encoder, head, seqs, batch_size)?;
    evaluate(&ConfusionMatrix::from_indices(&preds, golds, labels)?)
}

/// Scores a fine-tuned checkpoint on a labeled dataset.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, ds: &LabeledDataset, max_len: usize) -> Result<EvaluationReport> {
    let head = ckpt
        .head
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("checkpoint has no classification head".into()))?;
    if head.schema != ds.schema {
        return Err(Error::SchemaMismatch(format!(
            "checkpoint head is for task {}, dataset is {}",
            head.schema.name, ds.schema.name
        )));
    }
    let seqs = encode_all(&ckpt.tokenizer, ds.examples.iter().map(|e| e.text.as_str()), max_len);
    let golds: Vec<usize> = ds.examples.iter().map(|e| e.label).collect();
    evaluate_seqs(&ckpt.encoder, &head.weights, &seqs, &golds, &ds.schema.labels, 32)
}

/// Predicted label names for `texts`.
pub fn predict_labels<S: AsRef<str>>(ckpt: &Checkpoint, texts: &[S], max_len: usize) -> Result<Vec<String>> {
    let head = ckpt
        .head
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("checkpoint has no classification head".into()))?;
    let seqs = encode_all(&ckpt.tokenizer, texts.iter().map(AsRef::as_ref), max_len);
    Ok(predict_indices(&ckpt.encoder, &head.weights, &seqs, 32)?
        .into_iter()
        .map(|i| head.schema.labels[i].clone())
        .collect())
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Snapshot from the epoch with the best dev macro F1.
    pub checkpoint: Checkpoint,
    /// One dev report per epoch.
    pub reports: Vec<EvaluationReport>,
    pub log: Vec<EpochLog>,
    /// 1-based epoch the snapshot was taken from.
    pub best_epoch: usize,
}

/// Supervised fine-tuning with a freshly initialized head sized to the
/// schema. Every epoch is scored on `dev`; the returned checkpoint is the
/// snapshot with the highest dev macro F1 (earliest epoch on ties).
pub fn finetune(ckpt: &Checkpoint, train: &LabeledDataset, dev: &LabeledDataset, plan: &TrainPlan) -> Result<FinetuneOutcome> {
    plan.validate(PlanStage::Finetune, ckpt.model_config().max_positions)?;
    if plan.epochs == 0 {
        return Err(Error::InvalidArgument("fine-tuning needs at least one epoch".into()));
    }
    if train.schema != dev.schema {
        return Err(Error::SchemaMismatch(format!(
            "train is {} but dev is {}",
            train.schema.name, dev.schema.name
        )));
    }
    if train.is_empty() {
        return Err(Error::Empty("fine-tuning train set".into()));
    }
    if dev.is_empty() {
        return Err(Error::Empty("fine-tuning dev set".into()));
    }
    let schema = &train.schema;
    if let Some(h) = &ckpt.head {
        if h.schema.len() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "checkpoint head has {} labels, task {} has {}",
                h.schema.len(),
                schema.name,
                schema.len()
            )));
        }
    }

    let tok = &ckpt.tokenizer;
    let train_seqs = encode_all(tok, train.examples.iter().map(|e| e.text.as_str()), plan.max_len);
    let train_labels: Vec<usize> = train.examples.iter().map(|e| e.label).collect();
    let dev_seqs = encode_all(tok, dev.examples.iter().map(|e| e.text.as_str()), plan.max_len);
    let dev_labels: Vec<usize> = dev.examples.iter().map(|e| e.label).collect();

    let mut encoder = ckpt.encoder.clone();
    let mut head = ClassifierHead::<f32>::init(encoder.config.d_model, schema.len(), plan.seed);
    let mut state = OptimizerState::default();
    let hyper = plan.hyper();
    let mut shuffle_rng = rng::stream(plan.seed, rng::SHUFFLE);
    let mut dropout_rng = rng::stream(plan.seed, rng::DROPOUT);

    let mut reports = Vec::with_capacity(plan.epochs);
    let mut log = Vec::with_capacity(plan.epochs);
    let mut best: Option<(EncoderWeights<f32>, ClassifierHead<f32>)> = None;
    for epoch in 1..=plan.epochs {
        let order = epoch_order(train_seqs.len(), plan.shuffle, &mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for idx in order.chunks(plan.batch_size) {
            let batch = collate(&train_seqs, idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train_labels[i]).collect();
            let opts = PassOptions {
                loss_scale: 1.0,
                dropout_seed: Some(dropout_rng.random()),
            };
            let (loss, grads) = backward_classify(&encoder, &head, &batch, &labels, opts)?;
            apply_update(&mut encoder, Some(&mut head), &grads, &mut state, &hyper)?;
            loss_sum += f64::from(loss);
            batches += 1;
        }
        let report = evaluate_seqs(&encoder, &head, &dev_seqs, &dev_labels, &schema.labels, plan.batch_size.max(32))?;
        let improved = best_by_macro_f1(reports.iter().chain(std::iter::once(&report))) == Some(reports.len());
        if improved {
            best = Some((encoder.clone(), head.clone()));
        }
        log.push(EpochLog {
            stage: PlanStage::Finetune,
            epoch,
            loss: loss_sum / batches as f64,
            macro_f1: Some(report.macro_f1),
        });
        reports.push(report);
    }

    let best_epoch = best_by_macro_f1(reports.iter()).expect("at least one epoch") + 1;
    let (best_encoder, best_head) = best.expect("first epoch always improves");
    let mut out = ckpt.clone();
    out.encoder = best_encoder;
    out.head = Some(HeadState {
        schema: schema.clone(),
        weights: best_head,
    });
    out.manifest.stage = Stage::Finetuned;
    plan.record(&mut out.manifest);
    let h = &mut out.manifest.hyperparameters;
    h.insert("finetuned_from".into(), ckpt.manifest.stage.as_str().into());
    h.insert("task".into(), schema.name.clone());
    h.insert("best_epoch".into(), best_epoch.to_string());
    Ok(FinetuneOutcome {
        checkpoint: out,
        reports,
        log,
        best_epoch,
    })
}

/// Name of the system with the highest macro F1; the earliest wins ties.
pub fn select_model(reports: &[(String, EvaluationReport)]) -> Result<String> {
    best_by_macro_f1(reports.iter().map(|(_, r)| r))
        .map(|i| reports[i].0.clone())
        .ok_or_else(|| Error::Empty("no candidate systems to select from".into()))
}
