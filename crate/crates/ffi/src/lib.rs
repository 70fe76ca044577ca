//! C interface to the clue retriever.
//!
//! Every function returns a [`ClueStatus`]; on failure a description is
//! available from [`clue_last_error`] on the same thread. Handles are opaque
//! and must be released with their matching `_free` function. Strings handed
//! out by the library are released with [`clue_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Mutex;

use clue_core::config::RunConfig;
use clue_core::corpus::{read_jsonl_corpus, KnowledgeBase, Query};
use clue_core::decoder::decode;
use clue_core::fm_index::{ClueIndex, Distinct};
use clue_core::scorer::{NGramConfig, NGramScorer};
use clue_core::store;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClueStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InvalidInput = 4,
    /// The text does not occur in the corpus.
    NotFound = 5,
    /// The text occurs in more than one document.
    Ambiguous = 6,
    Internal = 7,
}

/// A knowledge base with its index, plus a lazily trained n-gram scorer.
pub struct ClueIndexHandle {
    kb: KnowledgeBase,
    index: ClueIndex,
    content_hash: String,
    scorer: Mutex<Option<(NGramConfig, NGramScorer)>>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ClueStatus, String);

impl Failure {
    fn new(status: ClueStatus, msg: impl ToString) -> Self {
        Self(status, msg.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ClueStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ClueStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            ClueStatus::Internal
        }
    }
}

/// # Safety
/// `p` is null or points to a nul-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(ClueStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(ClueStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

/// # Safety
/// `p` is null or points to a live handle.
unsafe fn handle_arg<'a>(p: *const ClueIndexHandle) -> Result<&'a ClueIndexHandle, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(ClueStatus::NullArgument, "index handle is null"))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(ClueStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn invalid(e: impl ToString) -> Failure {
    Failure::new(ClueStatus::InvalidInput, e)
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).expect("json has no nul").into_raw()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn clue_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds an index from a JSON-lines corpus with the default tokenizer. When
/// `save_path` is not null the bundle is also written there.
///
/// # Safety
/// String arguments are null or nul-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn clue_index_build(
    corpus_path: *const c_char,
    save_path: *const c_char,
    out: *mut *mut ClueIndexHandle,
) -> ClueStatus {
    guard(|| {
        out_arg(out, "out")?;
        let corpus = str_arg(corpus_path, "corpus_path")?;
        let save = if save_path.is_null() {
            None
        } else {
            Some(str_arg(save_path, "save_path")?)
        };
        let file = File::open(corpus).map_err(|e| Failure::new(ClueStatus::Io, format!("{corpus}: {e}")))?;
        let docs = read_jsonl_corpus(BufReader::new(file)).map_err(invalid)?;
        let kb = KnowledgeBase::ingest(docs, Default::default()).map_err(invalid)?;
        let index = ClueIndex::build(&kb).map_err(invalid)?;
        let content_hash = match save {
            Some(p) => store::save(p, &kb, Some(&index)).map_err(|e| Failure::new(ClueStatus::Io, e))?,
            None => store::content_hash(&kb, Some(&index)),
        };
        *out = Box::into_raw(Box::new(ClueIndexHandle {
            kb,
            index,
            content_hash,
            scorer: Mutex::new(None),
        }));
        Ok(())
    })
}

/// Opens a bundle written by `clue build-index` or [`clue_index_build`].
///
/// # Safety
/// `path` is null or nul-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn clue_index_open(path: *const c_char, out: *mut *mut ClueIndexHandle) -> ClueStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let bundle = store::load(Path::new(path)).map_err(|e| Failure::new(ClueStatus::Io, format!("{path}: {e}")))?;
        let index = bundle.index.ok_or_else(|| invalid(format!("{path} holds no index")))?;
        *out = Box::into_raw(Box::new(ClueIndexHandle {
            kb: bundle.kb,
            index,
            content_hash: bundle.content_hash,
            scorer: Mutex::new(None),
        }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `handle` is null or came from this library and was not freed before.
#[no_mangle]
pub unsafe extern "C" fn clue_index_free(handle: *mut ClueIndexHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of documents in the index.
///
/// # Safety
/// `handle` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn clue_index_doc_count(handle: *const ClueIndexHandle, out: *mut usize) -> ClueStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = handle_arg(handle)?.kb.len();
        Ok(())
    })
}

/// Content hash of the index bundle as a nul-terminated hex string owned by
/// the caller.
///
/// # Safety
/// `handle` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn clue_index_hash(handle: *const ClueIndexHandle, out: *mut *mut c_char) -> ClueStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = into_c_string(handle_arg(handle)?.content_hash.clone());
        Ok(())
    })
}

/// Occurrences of `text`, tokenized like the corpus, across all documents.
///
/// # Safety
/// `handle` is a live handle; `text` is nul-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn clue_index_count(
    handle: *const ClueIndexHandle,
    text: *const c_char,
    out: *mut usize,
) -> ClueStatus {
    guard(|| {
        out_arg(out, "out")?;
        let h = handle_arg(handle)?;
        let tokens = h.kb.tokenizer().tokenize(str_arg(text, "text")?);
        *out = h.index.count(&tokens);
        Ok(())
    })
}

/// Resolves a clue to the one document containing it. Returns `NotFound`
/// or `Ambiguous` when the clue does not identify a single document.
///
/// # Safety
/// `handle` is a live handle; `text` is nul-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn clue_index_lookup(
    handle: *const ClueIndexHandle,
    text: *const c_char,
    out: *mut u32,
) -> ClueStatus {
    guard(|| {
        out_arg(out, "out")?;
        let h = handle_arg(handle)?;
        let text = str_arg(text, "text")?;
        let tokens = h.kb.tokenizer().tokenize(text);
        match h.index.valid_distinct(h.index.interval_of(&tokens)) {
            Distinct::Unique(d) => {
                *out = d;
                Ok(())
            }
            Distinct::Ambiguous => Err(Failure::new(
                ClueStatus::Ambiguous,
                format!("{text:?} occurs in several documents"),
            )),
            Distinct::Absent => Err(Failure::new(ClueStatus::NotFound, format!("{text:?} does not occur"))),
        }
    })
}

/// Retrieves documents for `query` with the n-gram scorer. `config_toml` is
/// null for defaults or a run configuration in TOML; its `decode` and
/// `scorer.ngram` sections apply. On success `out_json` receives
/// `{"query_id", "ranked": [{"doc_id", "score", "clue_text"}], "diagnostics"}`.
///
/// # Safety
/// `handle` is a live handle; strings are null or nul-terminated;
/// `out_json` is writable.
#[no_mangle]
pub unsafe extern "C" fn clue_retrieve(
    handle: *const ClueIndexHandle,
    query: *const c_char,
    config_toml: *const c_char,
    out_json: *mut *mut c_char,
) -> ClueStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        let h = handle_arg(handle)?;
        let text = str_arg(query, "query")?;
        let cfg = if config_toml.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_toml(str_arg(config_toml, "config_toml")?, Path::new("<ffi>")).map_err(invalid)?
        };
        cfg.decode.validate().map_err(invalid)?;
        let mut decode_cfg = cfg.decode.clone();
        if decode_cfg.terminators.is_empty() {
            decode_cfg.terminators = h.kb.tokenizer().terminators();
        }
        let q = Query::from_text("ffi", text, &h.kb).map_err(invalid)?;

        let mut slot = h.scorer.lock().unwrap_or_else(|p| p.into_inner());
        if slot.as_ref().is_none_or(|(c, _)| *c != cfg.scorer.ngram) {
            let scorer = NGramScorer::train(&h.kb, cfg.scorer.ngram.clone()).map_err(invalid)?;
            *slot = Some((cfg.scorer.ngram.clone(), scorer));
        }
        let (_, scorer) = slot.as_ref().expect("scorer was just set");
        let result = decode(&q, &h.index, scorer, &decode_cfg).map_err(invalid)?;
        drop(slot);

        let ranked: Vec<serde_json::Value> = result
            .ranked
            .iter()
            .map(|d| {
                serde_json::json!({
                    "doc_id": d.doc_id,
                    "score": d.score,
                    "clue_text": h.kb.tokenizer().detokenize(&d.clue),
                })
            })
            .collect();
        let json = serde_json::json!({
            "query_id": result.query_id,
            "ranked": ranked,
            "diagnostics": result.diagnostics,
        });
        *out_json = into_c_string(json.to_string());
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or came from this library and was not freed before.
#[no_mangle]
pub unsafe extern "C" fn clue_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
