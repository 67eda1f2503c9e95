use std::ffi::{CStr, CString};
use std::ptr;

use memaudit::corpus::{write_corpus, CorpusIndex};
use memaudit::prompts::{render_prompt, StrategyId};
use memaudit_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ma_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    corpus: CorpusIndex,
    handle: *mut MaCorpus,
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe { ma_corpus_free(self.handle) };
    }
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let corpus = CorpusIndex::synthetic(50, 16, 4).unwrap();
    let (m, s) = (dir.path().join("m.jsonl"), dir.path().join("s.bin"));
    write_corpus(&corpus, &m, &s).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { ma_corpus_load(cstr(&m).as_ptr(), cstr(&s).as_ptr(), &mut handle) };
    assert_eq!(status, MaStatus::Ok, "{}", last_error());
    let corpus = memaudit::corpus::load_corpus(&m, &s).unwrap();
    Fixture {
        _dir: dir,
        corpus,
        handle,
    }
}

#[test]
fn corpus_handle_queries() {
    let f = fixture();
    unsafe {
        assert_eq!(ma_corpus_len(f.handle), 50);
        assert_eq!(ma_corpus_dim(f.handle), 16);
        assert_eq!(ma_corpus_len(ptr::null()), 0);

        let mut digest = ptr::null_mut();
        assert_eq!(ma_corpus_digest(f.handle, &mut digest), MaStatus::Ok);
        assert_eq!(
            CStr::from_ptr(digest).to_str().unwrap(),
            f.corpus.source_digest()
        );
        ma_string_free(digest);

        let mut id = ptr::null_mut();
        assert_eq!(ma_corpus_record_id(f.handle, 7, &mut id), MaStatus::Ok);
        assert_eq!(CStr::from_ptr(id).to_str().unwrap(), "rec-000007");
        ma_string_free(id);
        assert_eq!(
            ma_corpus_record_id(f.handle, 50, &mut id),
            MaStatus::InvalidArgument
        );
        assert!(last_error().contains("out of range"));
    }
}

#[test]
fn top_k_matches_library() {
    let f = fixture();
    let query = f.corpus.embedding_of(&f.corpus.records()[12]);
    let mut out = [MaNeighbor { row: 0, score: 0.0 }; 5];
    let mut n = 0usize;
    let status = unsafe {
        ma_corpus_top_k(
            f.handle,
            query.values().as_ptr(),
            16,
            5,
            out.as_mut_ptr(),
            out.len(),
            &mut n,
        )
    };
    assert_eq!(status, MaStatus::Ok);
    assert_eq!(n, 5);
    let expected = memaudit::vector::top_k_similar(&query, f.corpus.embeddings(), 5).unwrap();
    for (got, want) in out.iter().zip(&expected) {
        assert_eq!(got.row, want.row);
        assert!((got.score - want.score.value()).abs() < 1e-6);
    }
    assert_eq!(out[0].row, 12);

    let status = unsafe {
        ma_corpus_top_k(
            f.handle,
            query.values().as_ptr(),
            16,
            5,
            out.as_mut_ptr(),
            2,
            &mut n,
        )
    };
    assert_eq!(status, MaStatus::BufferTooSmall);
    assert_eq!(n, 0);
    let status = unsafe {
        ma_corpus_top_k(
            f.handle,
            query.values().as_ptr(),
            8,
            5,
            out.as_mut_ptr(),
            5,
            &mut n,
        )
    };
    assert_eq!(status, MaStatus::DimensionMismatch);
}

#[test]
fn load_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cstr(&dir.path().join("none"));
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(
            ma_corpus_load(missing.as_ptr(), missing.as_ptr(), &mut h),
            MaStatus::Io
        );
        assert!(h.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(
            ma_corpus_load(ptr::null(), missing.as_ptr(), &mut h),
            MaStatus::NullArgument
        );
        assert_eq!(
            ma_corpus_load(missing.as_ptr(), missing.as_ptr(), ptr::null_mut()),
            MaStatus::NullArgument
        );
        let bad = [0xffu8, 0];
        assert_eq!(
            ma_corpus_load(bad.as_ptr().cast(), missing.as_ptr(), &mut h),
            MaStatus::InvalidUtf8
        );
    }
    std::fs::write(dir.path().join("m.jsonl"), "not json\n").unwrap();
    std::fs::write(dir.path().join("s.bin"), b"").unwrap();
    let (m, s) = (
        cstr(&dir.path().join("m.jsonl")),
        cstr(&dir.path().join("s.bin")),
    );
    assert_eq!(
        unsafe { ma_corpus_load(m.as_ptr(), s.as_ptr(), &mut h) },
        MaStatus::Format
    );
}

#[test]
fn cosine_and_pearson() {
    let a = [1.0f32, 0.0, 0.0];
    let b = [1.0f32, 1.0, 0.0];
    let mut out = 0.0;
    unsafe {
        assert_eq!(
            ma_cosine_similarity(a.as_ptr(), b.as_ptr(), 3, &mut out),
            MaStatus::Ok
        );
        assert!((out - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-7);
        let z = [0.0f32; 3];
        assert_eq!(
            ma_cosine_similarity(a.as_ptr(), z.as_ptr(), 3, &mut out),
            MaStatus::ZeroVector
        );
        assert_eq!(
            ma_cosine_similarity(a.as_ptr(), b.as_ptr(), 0, &mut out),
            MaStatus::InvalidArgument
        );

        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [1.0, 3.0, 2.0, 4.0];
        assert_eq!(
            ma_pearson(xs.as_ptr(), ys.as_ptr(), 4, &mut out),
            MaStatus::Ok
        );
        assert!((out - 0.8).abs() < 1e-12);
        let c = [2.0; 4];
        assert_eq!(
            ma_pearson(xs.as_ptr(), c.as_ptr(), 4, &mut out),
            MaStatus::ConstantSeries
        );
        assert_eq!(
            ma_pearson(xs.as_ptr(), ptr::null(), 4, &mut out),
            MaStatus::NullArgument
        );
    }
}

#[test]
fn prompts_and_recommendations() {
    let caption = CString::new("a red fox").unwrap();
    for (code, id) in StrategyId::ALL.iter().enumerate() {
        let mut out = ptr::null_mut();
        let status = unsafe { ma_render_prompt(code as u32, caption.as_ptr(), &mut out) };
        assert_eq!(status, MaStatus::Ok);
        let got = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
        unsafe { ma_string_free(out) };
        assert_eq!(got, render_prompt(*id, "a red fox").unwrap());
    }
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { ma_render_prompt(4, caption.as_ptr(), &mut out) },
        MaStatus::InvalidArgument
    );
    let empty = CString::new("   ").unwrap();
    assert_eq!(
        unsafe { ma_render_prompt(0, empty.as_ptr(), &mut out) },
        MaStatus::InvalidArgument
    );
    assert!(out.is_null());

    assert_eq!(
        ma_recommend_strategy(MaRiskTier::High as u32),
        MaStrategy::ChainOfThought as i32
    );
    assert_eq!(
        ma_recommend_strategy(MaRiskTier::Medium as u32),
        MaStrategy::TaskInstruction as i32
    );
    assert_eq!(
        ma_recommend_strategy(MaRiskTier::Low as u32),
        MaStrategy::Negation as i32
    );
    assert_eq!(ma_recommend_strategy(3), -1);
    let v = unsafe { CStr::from_ptr(ma_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn errors_are_thread_local() {
    let mut out = 0.0;
    unsafe { ma_pearson(ptr::null(), ptr::null(), 3, &mut out) };
    assert!(!last_error().is_empty());
    let other = std::thread::spawn(last_error).join().unwrap();
    assert_eq!(other, "");
}
