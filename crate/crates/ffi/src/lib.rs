//! C interface to the tokenizer, language identifier, fine-tuned classifier,
//! and metric suite.
//!
//! Every fallible function returns an [`HsStatus`]. On failure a message is
//! available from [`hs_last_error`] until the next failing call on the same
//! thread. Handles are opaque and must be released with their `_free`
//! function. Panics never cross the boundary; they surface as
//! `HS_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hopespeech::corpus::{load_checkpoint, Checkpoint};
use hopespeech::evalx::{evaluate, ConfusionMatrix};
use hopespeech::langid::LangIdModel;
use hopespeech::tokenize::TokenizerModel;
use hopespeech::train::predict_labels;
use hopespeech::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    BufferTooSmall = 5,
    Internal = 6,
}

/// Summary metrics filled by [`hs_evaluate`].
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HsMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

/// Opaque tokenizer handle.
pub struct HsTokenizer {
    model: TokenizerModel,
}

/// Opaque language identifier handle.
pub struct HsLangId {
    model: LangIdModel,
    languages: Vec<CString>,
}

/// Opaque fine-tuned classifier handle.
pub struct HsClassifier {
    checkpoint: Checkpoint,
    labels: Vec<CString>,
    max_len: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

struct Failure(HsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io { .. } | Error::MissingComponent(_) => HsStatus::Io,
            Error::Utf8 { .. } => HsStatus::InvalidUtf8,
            _ => HsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HsStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(HsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(HsStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn hs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a tokenizer JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_tokenizer_load(path: *const c_char, out: *mut *mut HsTokenizer) -> HsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let model = TokenizerModel::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(HsTokenizer { model }));
        Ok(())
    })
}

/// # Safety
/// `tok` must come from [`hs_tokenizer_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hs_tokenizer_free(tok: *mut HsTokenizer) {
    if !tok.is_null() {
        drop(Box::from_raw(tok));
    }
}

/// Vocabulary size, or 0 for a null handle.
///
/// # Safety
/// `tok` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hs_tokenizer_vocab_size(tok: *const HsTokenizer) -> usize {
    tok.as_ref().map_or(0, |t| t.model.vocab_size())
}

/// Encodes `text` into a frame of exactly `max_len` ids with its attention
/// mask. `ids` and `mask` must each hold `capacity >= max_len` elements.
/// `overflow` (optional) receives 1 when the text was truncated.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hs_tokenizer_encode(
    tok: *const HsTokenizer,
    text: *const c_char,
    max_len: usize,
    ids: *mut u32,
    mask: *mut u8,
    capacity: usize,
    overflow: *mut u8,
) -> HsStatus {
    guard(|| {
        let tok = handle(tok, "tokenizer")?;
        let text = str_arg(text, "text")?;
        if ids.is_null() || mask.is_null() {
            return Err(null("ids/mask"));
        }
        if max_len < 2 {
            return Err(Failure(HsStatus::InvalidArgument, "max_len must be at least 2".into()));
        }
        if capacity < max_len {
            return Err(Failure(
                HsStatus::BufferTooSmall,
                format!("capacity {capacity} is below max_len {max_len}"),
            ));
        }
        let seq = tok.model.encode(text, max_len);
        std::slice::from_raw_parts_mut(ids, max_len).copy_from_slice(&seq.ids);
        std::slice::from_raw_parts_mut(mask, max_len).copy_from_slice(&seq.attention_mask);
        if let Some(o) = overflow.as_mut() {
            *o = u8::from(seq.overflow);
        }
        Ok(())
    })
}

/// Loads a language identifier JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_langid_load(path: *const c_char, out: *mut *mut HsLangId) -> HsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let model = LangIdModel::load(Path::new(str_arg(path, "path")?))?;
        let languages = model
            .languages
            .iter()
            .map(|l| CString::new(l.as_str()).map_err(|e| Failure(HsStatus::InvalidArgument, e.to_string())))
            .collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(HsLangId { model, languages }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`hs_langid_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hs_langid_free(model: *mut HsLangId) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Identifies the language of `text`. `language` receives a string owned by
/// the handle; `confidence` (optional) the posterior of that language.
///
/// # Safety
/// `model` must be a live handle; `text` NUL-terminated; `language` writable.
#[no_mangle]
pub unsafe extern "C" fn hs_langid_identify(
    model: *const HsLangId,
    text: *const c_char,
    language: *mut *const c_char,
    confidence: *mut f64,
) -> HsStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let text = str_arg(text, "text")?;
        let language = out_arg(language, "language")?;
        let id = m.model.identify(text)?;
        let idx = m
            .model
            .languages
            .iter()
            .position(|l| *l == id.language)
            .expect("identified language is known");
        *language = m.languages[idx].as_ptr();
        if let Some(c) = confidence.as_mut() {
            *c = id.confidence;
        }
        Ok(())
    })
}

/// Loads a fine-tuned checkpoint directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_classifier_load(dir: *const c_char, out: *mut *mut HsClassifier) -> HsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let checkpoint = load_checkpoint(Path::new(str_arg(dir, "dir")?))?;
        let head = checkpoint.head.as_ref().ok_or_else(|| {
            Failure(HsStatus::InvalidArgument, "checkpoint has no classification head".into())
        })?;
        let labels = head
            .schema
            .labels
            .iter()
            .map(|l| CString::new(l.as_str()).map_err(|e| Failure(HsStatus::InvalidArgument, e.to_string())))
            .collect::<Result<_, _>>()?;
        let max_len = checkpoint
            .manifest
            .get("max_len")
            .and_then(|v| v.parse().ok())
            .unwrap_or(checkpoint.model_config().max_positions);
        *out = Box::into_raw(Box::new(HsClassifier {
            checkpoint,
            labels,
            max_len,
        }));
        Ok(())
    })
}

/// # Safety
/// `clf` must come from [`hs_classifier_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hs_classifier_free(clf: *mut HsClassifier) {
    if !clf.is_null() {
        drop(Box::from_raw(clf));
    }
}

/// Number of labels, or 0 for a null handle.
///
/// # Safety
/// `clf` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hs_classifier_num_labels(clf: *const HsClassifier) -> usize {
    clf.as_ref().map_or(0, |c| c.labels.len())
}

/// Label name owned by the handle, or null when out of range.
///
/// # Safety
/// `clf` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hs_classifier_label_name(clf: *const HsClassifier, index: usize) -> *const c_char {
    clf.as_ref()
        .and_then(|c| c.labels.get(index))
        .map_or(ptr::null(), |l| l.as_ptr())
}

/// Predicted label index for `text`.
///
/// # Safety
/// `clf` must be a live handle; `text` NUL-terminated; `label` writable.
#[no_mangle]
pub unsafe extern "C" fn hs_classifier_predict(clf: *const HsClassifier, text: *const c_char, label: *mut usize) -> HsStatus {
    guard(|| {
        let c = handle(clf, "classifier")?;
        let text = str_arg(text, "text")?;
        let label = out_arg(label, "label")?;
        let name = predict_labels(&c.checkpoint, &[text], c.max_len)?.remove(0);
        *label = c
            .labels
            .iter()
            .position(|l| l.to_bytes() == name.as_bytes())
            .expect("predicted label is in the schema");
        Ok(())
    })
}

/// Accuracy, macro F1, and weighted F1 of `n` prediction/gold index pairs
/// over `n_labels` classes.
///
/// # Safety
/// `preds` and `golds` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_evaluate(
    preds: *const usize,
    golds: *const usize,
    n: usize,
    n_labels: usize,
    out: *mut HsMetrics,
) -> HsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if n > 0 && (preds.is_null() || golds.is_null()) {
            return Err(null("preds/golds"));
        }
        let (p, g): (&[usize], &[usize]) = if n == 0 {
            (&[], &[])
        } else {
            (std::slice::from_raw_parts(preds, n), std::slice::from_raw_parts(golds, n))
        };
        let labels: Vec<String> = (0..n_labels).map(|i| i.to_string()).collect();
        let report = evaluate(&ConfusionMatrix::from_indices(p, g, &labels)?)?;
        *out = HsMetrics {
            accuracy: report.accuracy,
            macro_f1: report.macro_f1,
            weighted_f1: report.weighted_f1,
        };
        Ok(())
    })
}
