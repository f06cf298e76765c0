//! C ABI over `synfuse`.
//!
//! Every fallible function returns an [`SfStatus`]; on failure the message is
//! available from [`sf_last_error`] on the same thread. Handles are opaque
//! and owned by the caller, who releases them with the matching `_free`.
//! Strings returned through `char **` are released with [`sf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use synfuse::annotate::{AnnotatedSentence, Word};
use synfuse::harness::checkpoint::{load_classifier, load_translator};
use synfuse::harness::{bleu, Classifier, LabeledPair, Translator};
use synfuse::tokenizer::MergeTable;
use synfuse::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Bad argument values or configuration.
    Invalid = 3,
    /// Unreadable or malformed files and corpora.
    Data = 4,
    /// NaN or other numeric breakdown.
    Numeric = 5,
    /// Caller-provided buffer is too small.
    BufferTooSmall = 6,
    Panic = 7,
}

/// BPE merge table.
pub struct SfMerges(MergeTable);

/// Trained translator loaded from a checkpoint.
pub struct SfTranslator(Translator);

/// Fine-tuned classifier loaded from a checkpoint.
pub struct SfClassifier {
    inner: Classifier,
    labels: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(SfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = if e.is_data_error() {
            SfStatus::Data
        } else if matches!(e, Error::Numeric(_)) {
            SfStatus::Numeric
        } else {
            SfStatus::Invalid
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: SfStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SfStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(SfStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn texts<'a>(p: *const *const c_char, n: usize, what: &str) -> Result<Vec<&'a str>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(fail(SfStatus::NullArgument, format!("{what} is null")));
    }
    (0..n).map(|i| text(*p.add(i), what)).collect()
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(SfStatus::NullArgument, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(SfStatus::NullArgument, "output pointer is null"));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| fail(SfStatus::Invalid, "output contains a NUL byte"))?;
    put(out, c.into_raw())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn sf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn sf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Corpus BLEU-4 in [0, 1] over `n` hypothesis/reference pairs.
///
/// # Safety
/// `hyps` and `refs` must each point to `n` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn sf_bleu(hyps: *const *const c_char, refs: *const *const c_char, n: usize, out: *mut f64) -> SfStatus {
    guard(|| {
        let h = texts(hyps, n, "hyps")?;
        let r = texts(refs, n, "refs")?;
        put(out, bleu(&h, &r)?)
    })
}

/// Learns `num_merges` merges from newline-separated sentences.
///
/// # Safety
/// `corpus` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_merges_learn(corpus: *const c_char, num_merges: usize, out: *mut *mut SfMerges) -> SfStatus {
    guard(|| {
        let lines: Vec<&str> = text(corpus, "corpus")?.lines().filter(|l| !l.trim().is_empty()).collect();
        let table = MergeTable::learn(&lines, num_merges)?;
        put(out, Box::into_raw(Box::new(SfMerges(table))))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_merges_load(path: *const c_char, out: *mut *mut SfMerges) -> SfStatus {
    guard(|| {
        let table = MergeTable::load(Path::new(text(path, "path")?))?;
        put(out, Box::into_raw(Box::new(SfMerges(table))))
    })
}

/// # Safety
/// `merges` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sf_merges_save(merges: *const SfMerges, path: *const c_char) -> SfStatus {
    guard(|| {
        let m = handle(merges, "merges")?;
        m.0.save(Path::new(text(path, "path")?))?;
        Ok(())
    })
}

/// Number of merges, or 0 for a null handle.
///
/// # Safety
/// `merges` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sf_merges_len(merges: *const SfMerges) -> usize {
    merges.as_ref().map_or(0, |m| m.0.len())
}

/// Space-separated subwords of `sentence`, word ends marked with `</w>`.
///
/// # Safety
/// `merges` must be a live handle, `sentence` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_merges_segment(merges: *const SfMerges, sentence: *const c_char, out: *mut *mut c_char) -> SfStatus {
    guard(|| {
        let m = handle(merges, "merges")?;
        let symbols = m.0.sentence_symbols(text(sentence, "sentence")?);
        put_string(out, symbols.join(" "))
    })
}

/// # Safety
/// `merges` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn sf_merges_free(merges: *mut SfMerges) {
    if !merges.is_null() {
        drop(Box::from_raw(merges));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_translator_load(path: *const c_char, out: *mut *mut SfTranslator) -> SfStatus {
    guard(|| {
        let t = load_translator(Path::new(text(path, "path")?))?;
        put(out, Box::into_raw(Box::new(SfTranslator(t))))
    })
}

fn decode_one(t: &Translator, source: AnnotatedSentence, max_len: usize) -> Result<String, Failure> {
    let mut out = t.translate(&[source], max_len, false)?;
    Ok(out.remove(0).text)
}

/// Greedy translation of a whitespace-tokenized sentence; words are
/// POS-tagged by the built-in fallback heuristics.
///
/// # Safety
/// `translator` must be a live handle, `sentence` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_translator_translate(
    translator: *const SfTranslator,
    sentence: *const c_char,
    max_len: usize,
    out: *mut *mut c_char,
) -> SfStatus {
    guard(|| {
        let t = &handle(translator, "translator")?.0;
        let source = AnnotatedSentence::from_text(text(sentence, "sentence")?, &t.tokenizer.tagset);
        put_string(out, decode_one(t, source, max_len)?)
    })
}

/// Greedy translation of `n` words with caller-supplied POS tags. Tags
/// outside the model's inventory map to the unknown tag.
///
/// # Safety
/// `words` and `tags` must each point to `n` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn sf_translator_translate_tagged(
    translator: *const SfTranslator,
    words: *const *const c_char,
    tags: *const *const c_char,
    n: usize,
    max_len: usize,
    out: *mut *mut c_char,
) -> SfStatus {
    guard(|| {
        let t = &handle(translator, "translator")?.0;
        let words = texts(words, n, "words")?;
        let tags = texts(tags, n, "tags")?;
        if let Some(w) = words.iter().find(|w| w.is_empty() || w.contains(char::is_whitespace)) {
            return Err(fail(SfStatus::Invalid, format!("invalid word {w:?}")));
        }
        let source = AnnotatedSentence::from_words(
            words
                .iter()
                .zip(&tags)
                .map(|(w, p)| Word {
                    surface: w.to_string(),
                    pos_id: t.tokenizer.tagset.id(p),
                })
                .collect(),
        );
        put_string(out, decode_one(t, source, max_len)?)
    })
}

/// # Safety
/// `translator` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn sf_translator_free(translator: *mut SfTranslator) {
    if !translator.is_null() {
        drop(Box::from_raw(translator));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sf_classifier_load(path: *const c_char, out: *mut *mut SfClassifier) -> SfStatus {
    guard(|| {
        let inner = load_classifier(Path::new(text(path, "path")?))?;
        let labels = inner
            .labels
            .iter()
            .map(|l| CString::new(l.as_str()).map_err(|_| fail(SfStatus::Data, "label contains a NUL byte")))
            .collect::<Result<_, _>>()?;
        put(out, Box::into_raw(Box::new(SfClassifier { inner, labels })))
    })
}

/// Number of labels, or 0 for a null handle.
///
/// # Safety
/// `classifier` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sf_classifier_num_labels(classifier: *const SfClassifier) -> usize {
    classifier.as_ref().map_or(0, |c| c.labels.len())
}

/// Label name for class `index`, owned by the handle; null when out of range.
///
/// # Safety
/// `classifier` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sf_classifier_label(classifier: *const SfClassifier, index: usize) -> *const c_char {
    classifier
        .as_ref()
        .and_then(|c| c.labels.get(index))
        .map_or(ptr::null(), |l| l.as_ptr())
}

/// Classifies sentence `a`, optionally paired with `b` (null for single
/// sentences). Writes the predicted class index and, when `probs` is not
/// null, one probability per label into `probs[0..capacity]`.
///
/// # Safety
/// `classifier` must be a live handle, `a` NUL-terminated, `b` NUL-terminated
/// or null, `label` writable, `probs` valid for `capacity` writes or null.
#[no_mangle]
pub unsafe extern "C" fn sf_classifier_predict(
    classifier: *const SfClassifier,
    a: *const c_char,
    b: *const c_char,
    label: *mut usize,
    probs: *mut f64,
    capacity: usize,
) -> SfStatus {
    guard(|| {
        let c = handle(classifier, "classifier")?;
        let tagset = &c.inner.tokenizer.tagset;
        let a = AnnotatedSentence::from_text(text(a, "a")?, tagset);
        let b = if b.is_null() {
            None
        } else {
            Some(AnnotatedSentence::from_text(text(b, "b")?, tagset))
        };
        let pair = LabeledPair { label: String::new(), a, b };
        let prediction = c.inner.predict(std::slice::from_ref(&pair))?.remove(0);
        let n = c.labels.len();
        if !probs.is_null() {
            if capacity < n {
                return Err(fail(SfStatus::BufferTooSmall, format!("need room for {n} probabilities, got {capacity}")));
            }
            ptr::copy_nonoverlapping(prediction.probabilities.as_ptr(), probs, n);
        }
        let index = c.inner.labels.iter().position(|l| *l == prediction.label).unwrap_or(0);
        put(label, index)
    })
}

/// # Safety
/// `classifier` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn sf_classifier_free(classifier: *mut SfClassifier) {
    if !classifier.is_null() {
        drop(Box::from_raw(classifier));
    }
}
