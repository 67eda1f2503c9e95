//! C ABI for memaudit.
//!
//! Every fallible function returns an [`MaStatus`]; on failure a description
//! is available from [`ma_last_error_message`] on the same thread. Strings
//! handed out by the library must be released with [`ma_string_free`] and
//! corpora with [`ma_corpus_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use memaudit::corpus::{load_corpus, CorpusError, CorpusIndex};
use memaudit::prompts::{render_prompt, StrategyId};
use memaudit::report::{pearson, recommend_strategy, RiskTier, StatsError};
use memaudit::vector::{cosine_similarity, top_k_similar, EmbeddingVector, VectorError};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Format = 5,
    DimensionMismatch = 6,
    ZeroVector = 7,
    ConstantSeries = 8,
    LengthMismatch = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Prompting strategies, as passed to [`ma_render_prompt`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaStrategy {
    Baseline = 0,
    TaskInstruction = 1,
    Negation = 2,
    ChainOfThought = 3,
}

/// Application risk tiers, as passed to [`ma_recommend_strategy`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaRiskTier {
    High = 0,
    Medium = 1,
    Low = 2,
}

/// One nearest-neighbour hit.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaNeighbor {
    pub row: usize,
    pub score: f64,
}

/// Opaque handle to a loaded corpus.
pub struct MaCorpus {
    inner: CorpusIndex,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

type Failure = (MaStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MaStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MaStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    (MaStatus::NullArgument, format!("{name} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (MaStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn vector_failure(e: VectorError) -> Failure {
    let status = match e {
        VectorError::DimensionMismatch { .. } => MaStatus::DimensionMismatch,
        VectorError::ZeroVector => MaStatus::ZeroVector,
        _ => MaStatus::InvalidArgument,
    };
    (status, e.to_string())
}

fn corpus_failure(e: CorpusError) -> Failure {
    let status = match e {
        CorpusError::Io(_) => MaStatus::Io,
        _ => MaStatus::Format,
    };
    (status, e.to_string())
}

fn strategy(s: MaStrategy) -> StrategyId {
    match s {
        MaStrategy::Baseline => StrategyId::Baseline,
        MaStrategy::TaskInstruction => StrategyId::TaskInstruction,
        MaStrategy::Negation => StrategyId::Negation,
        MaStrategy::ChainOfThought => StrategyId::ChainOfThought,
    }
}

fn to_ma_strategy(s: StrategyId) -> MaStrategy {
    match s {
        StrategyId::Baseline => MaStrategy::Baseline,
        StrategyId::TaskInstruction => MaStrategy::TaskInstruction,
        StrategyId::Negation => MaStrategy::Negation,
        StrategyId::ChainOfThought => MaStrategy::ChainOfThought,
    }
}

fn strategy_from_code(code: u32) -> Result<MaStrategy, Failure> {
    Ok(match code {
        0 => MaStrategy::Baseline,
        1 => MaStrategy::TaskInstruction,
        2 => MaStrategy::Negation,
        3 => MaStrategy::ChainOfThought,
        _ => {
            return Err((
                MaStatus::InvalidArgument,
                format!("unknown strategy code {code}"),
            ))
        }
    })
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn ma_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ma_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ma_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn give_string(s: String, out: *mut *mut c_char) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|e| (MaStatus::InvalidArgument, e.to_string()))?;
    // SAFETY: callers check `out` for null first.
    unsafe { *out = c.into_raw() };
    Ok(())
}

/// Loads a manifest + embedding store pair. On success `*out` owns a new
/// handle.
///
/// # Safety
/// Paths must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_corpus_load(
    manifest_path: *const c_char,
    store_path: *const c_char,
    out: *mut *mut MaCorpus,
) -> MaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let m = str_arg(manifest_path, "manifest_path")?;
        let s = str_arg(store_path, "store_path")?;
        let inner = load_corpus(m, s).map_err(corpus_failure)?;
        *out = Box::into_raw(Box::new(MaCorpus { inner }));
        Ok(())
    })
}

/// Releases a corpus handle. Null is ignored.
///
/// # Safety
/// `corpus` must come from [`ma_corpus_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ma_corpus_free(corpus: *mut MaCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of records, or 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ma_corpus_len(corpus: *const MaCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.inner.len())
}

/// Embedding dimension, or 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ma_corpus_dim(corpus: *const MaCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.inner.dim())
}

/// Hex sha256 of the manifest then store bytes. Free with [`ma_string_free`].
///
/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_corpus_digest(
    corpus: *const MaCorpus,
    out: *mut *mut c_char,
) -> MaStatus {
    guard(|| {
        let c = corpus.as_ref().ok_or_else(|| null("corpus"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        give_string(c.inner.source_digest().to_string(), out)
    })
}

/// Record id at `row`. Free with [`ma_string_free`].
///
/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_corpus_record_id(
    corpus: *const MaCorpus,
    row: usize,
    out: *mut *mut c_char,
) -> MaStatus {
    guard(|| {
        let c = corpus.as_ref().ok_or_else(|| null("corpus"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = c.inner.records().get(row).ok_or_else(|| {
            (
                MaStatus::InvalidArgument,
                format!("row {row} out of range ({} rows)", c.inner.len()),
            )
        })?;
        give_string(r.record_id.clone(), out)
    })
}

/// The `k` rows most similar to `query`, best first, ties by ascending row.
/// Writes `min(k, len)` entries into `out` (capacity `out_cap`) and the
/// count into `*out_len`.
///
/// # Safety
/// `query` must hold `dim` floats, `out` room for `out_cap` entries.
#[no_mangle]
pub unsafe extern "C" fn ma_corpus_top_k(
    corpus: *const MaCorpus,
    query: *const f32,
    dim: usize,
    k: usize,
    out: *mut MaNeighbor,
    out_cap: usize,
    out_len: *mut usize,
) -> MaStatus {
    guard(|| {
        let c = corpus.as_ref().ok_or_else(|| null("corpus"))?;
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        *out_len = 0;
        let q = slice_arg(query, dim, "query")?;
        let q = EmbeddingVector::new(q.to_vec()).map_err(vector_failure)?;
        let hits = top_k_similar(&q, c.inner.embeddings(), k).map_err(vector_failure)?;
        if hits.len() > out_cap {
            return Err((
                MaStatus::BufferTooSmall,
                format!("{} results do not fit in {out_cap}", hits.len()),
            ));
        }
        if !hits.is_empty() && out.is_null() {
            return Err(null("out"));
        }
        for (i, h) in hits.iter().enumerate() {
            *out.add(i) = MaNeighbor {
                row: h.row,
                score: h.score.value(),
            };
        }
        *out_len = hits.len();
        Ok(())
    })
}

/// Cosine similarity of two `dim`-length vectors.
///
/// # Safety
/// `a` and `b` must hold `dim` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_cosine_similarity(
    a: *const f32,
    b: *const f32,
    dim: usize,
    out: *mut f64,
) -> MaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = EmbeddingVector::new(slice_arg(a, dim, "a")?.to_vec()).map_err(vector_failure)?;
        let b = EmbeddingVector::new(slice_arg(b, dim, "b")?.to_vec()).map_err(vector_failure)?;
        *out = cosine_similarity(&a, &b).map_err(vector_failure)?.value();
        Ok(())
    })
}

/// Renders the built-in template for `strategy` (an [`MaStrategy`] value)
/// around `caption`. Free the result with [`ma_string_free`].
///
/// # Safety
/// `caption` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_render_prompt(
    strategy_code: u32,
    caption: *const c_char,
    out: *mut *mut c_char,
) -> MaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = strategy(strategy_from_code(strategy_code)?);
        let caption = str_arg(caption, "caption")?;
        let prompt =
            render_prompt(s, caption).map_err(|e| (MaStatus::InvalidArgument, e.to_string()))?;
        give_string(prompt, out)
    })
}

/// Sample Pearson correlation of two length-`n` series.
///
/// # Safety
/// `xs` and `ys` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ma_pearson(
    xs: *const f64,
    ys: *const f64,
    n: usize,
    out: *mut f64,
) -> MaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let xs = slice_arg(xs, n, "xs")?;
        let ys = slice_arg(ys, n, "ys")?;
        *out = pearson(xs, ys).map_err(|e| {
            let status = match e {
                StatsError::ConstantSeries => MaStatus::ConstantSeries,
                StatsError::LengthMismatch(..) => MaStatus::LengthMismatch,
                StatsError::TooShort(_) => MaStatus::InvalidArgument,
            };
            (status, e.to_string())
        })?;
        Ok(())
    })
}

/// Recommended strategy for a risk tier (an [`MaRiskTier`] value), as an
/// [`MaStrategy`] value; -1 for an unknown tier.
#[no_mangle]
pub extern "C" fn ma_recommend_strategy(tier_code: u32) -> i32 {
    let tier = match tier_code {
        0 => RiskTier::High,
        1 => RiskTier::Medium,
        2 => RiskTier::Low,
        _ => {
            set_error(&format!("unknown risk tier code {tier_code}"));
            return -1;
        }
    };
    to_ma_strategy(recommend_strategy(tier)) as i32
}

/// Stable snake_case name of a strategy code, or null if unknown. Static.
#[no_mangle]
pub extern "C" fn ma_strategy_name(strategy_code: u32) -> *const c_char {
    let name: &'static str = match strategy_from_code(strategy_code) {
        Ok(MaStrategy::Baseline) => "baseline\0",
        Ok(MaStrategy::TaskInstruction) => "task_instruction\0",
        Ok(MaStrategy::Negation) => "negation\0",
        Ok(MaStrategy::ChainOfThought) => "chain_of_thought\0",
        Err(_) => return ptr::null(),
    };
    name.as_ptr().cast()
}
