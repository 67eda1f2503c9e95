//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Built with `harness = false`, so the lines are
//! always shown by `cargo test`.

mod common;

use std::collections::BTreeMap;
use std::io::BufRead;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{ExitCode, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use memaudit::audit::{assemble_records, AuditConfig, GenerationOutcome, PromptAuditRecord};
use memaudit::backend::server::serve;
use memaudit::prompts::{render_prompt, template_for, StrategyId};
use memaudit::report::{pearson, summarize, summary_csv};
use memaudit::vector::{top_k_similar, EmbeddingMatrix, EmbeddingVector};

use common::*;

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    };
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    if took > limit {
        return Err(format!("took {took:.2?}, limit {limit:?}"));
    }
    Ok(())
}

fn frequency_table_arithmetic() -> Result<String, String> {
    let start = Instant::now();
    let records = reference_records();
    let cfg = AuditConfig {
        seeds_per_run: REFERENCE_SEEDS,
        ..AuditConfig::default()
    };
    let summaries = summarize(&records, &cfg).map_err(|e| e.to_string())?;
    let csv = String::from_utf8(summary_csv(&summaries).map_err(|e| e.to_string())?).unwrap();
    let expected = [
        ("baseline", "2082", "41.43", "21", "31.34"),
        ("task_instruction", "1026", "20.42", "7", "10.45"),
        ("negation", "1751", "34.85", "16", "23.88"),
        ("chain_of_thought", "484", "9.63", "1", "1.49"),
    ];
    let rows: Vec<Vec<String>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    ensure!(rows.len() == 4, "expected 4 csv rows, got {}", rows.len());
    for (row, (name, mem, gen_pct, high, prompt_pct)) in rows.iter().zip(expected) {
        let want = [name, mem, gen_pct, high, prompt_pct];
        ensure!(
            row.iter().map(String::as_str).eq(want),
            "row {row:?} != {want:?}"
        );
    }
    within(Duration::from_secs(1), start)?;
    Ok("41.43/20.42/34.85/9.63 and 31.34/10.45/23.88/1.49".into())
}

/// Runs `memaudit run` on `captions`, writing to `dir/out`.
fn cli_run(
    dir: &Path,
    corpus: &CorpusFiles,
    backend: &str,
    captions: &Path,
    out: &str,
    extra: &[&str],
) -> std::process::Output {
    let mut args: Vec<String> = vec![
        "run".into(),
        "--captions".into(),
        captions.display().to_string(),
    ];
    args.extend(["--out".into(), dir.join(out).display().to_string()]);
    args.extend(corpus.args());
    args.extend(["--backend".into(), backend.into()]);
    args.extend(extra.iter().map(|s| s.to_string()));
    bin()
        .args(&args)
        .env_remove("MEMAUDIT_TOKEN")
        .output()
        .expect("spawn memaudit")
}

fn end_to_end_mock() -> Result<String, String> {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let (corpus, files) = write_synthetic(tmp.path(), 67, 64, 2024);
    let ids: Vec<String> = corpus
        .records()
        .iter()
        .map(|r| r.record_id.clone())
        .collect();
    let backend = write_settings(tmp.path(), &strategy_rates(ids.clone()));
    let captions = tmp.path().join("captions.json");
    std::fs::write(&captions, serde_json::to_vec(&ids).unwrap()).unwrap();

    for out in ["a", "b"] {
        let o = cli_run(
            tmp.path(),
            &files,
            &backend,
            &captions,
            out,
            &["--seeds", "75", "--tau", "0.85"],
        );
        ensure!(
            o.status.success(),
            "run {out} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let read = |run: &str, f: &str| std::fs::read(tmp.path().join(run).join(f)).unwrap();
    ensure!(
        read("a", "records.json") == read("b", "records.json"),
        "records.json differs between runs"
    );
    ensure!(
        read("a", "outcomes.jsonl") == read("b", "outcomes.jsonl"),
        "outcomes.jsonl differs between runs"
    );

    let records: Vec<PromptAuditRecord> =
        serde_json::from_slice(&read("a", "records.json")).unwrap();
    let total: usize = records
        .iter()
        .map(|r| r.outcomes.len() + r.failures.len())
        .sum();
    ensure!(total == 20_100, "total outcomes {total}");
    let lines = read("a", "outcomes.jsonl").lines().count();
    ensure!(lines == 20_100, "checkpoint has {lines} lines");

    let mut got: BTreeMap<StrategyId, usize> = BTreeMap::new();
    for r in &records {
        *got.entry(r.strategy).or_default() += r.memorized_count;
    }
    let thousandths = [
        (StrategyId::Baseline, 414),
        (StrategyId::TaskInstruction, 204),
        (StrategyId::Negation, 348),
        (StrategyId::ChainOfThought, 96),
    ];
    let mut shown = Vec::new();
    for (s, t) in thousandths {
        let want = 67 * ceil_rule(t, 75) as usize;
        ensure!(
            got.get(&s) == Some(&want),
            "{s}: {:?} memorized, oracle {want}",
            got.get(&s)
        );
        shown.push(want.to_string());
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!("20100 outcomes, memorized {}", shown.join("/")))
}

fn similarity_oracle() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(579);
    let mut compared = 0;
    for instance in 0..200 {
        let rows = rng.gen_range(1..=1000);
        let dim = rng.gen_range(1..=64);
        let mut data = Vec::with_capacity(rows * dim);
        for _ in 0..rows {
            let (v, n) = loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 1e-3 {
                    break (v, n);
                }
            };
            data.extend(v.iter().map(|x| (x / n) as f32));
        }
        let matrix = EmbeddingMatrix::new(dim, data.clone()).map_err(|e| e.to_string())?;
        let mut q: Vec<f32> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        q[0] += 0.5;
        let query = EmbeddingVector::new(q.clone()).map_err(|e| e.to_string())?;
        let k = rng.gen_range(1..=rows.min(50));
        let got = top_k_similar(&query, &matrix, k).map_err(|e| e.to_string())?;
        let want = brute_force_ranking(&q, &data, dim);
        ensure!(
            got.len() == k,
            "instance {instance}: {} hits for k={k}",
            got.len()
        );
        for (g, w) in got.iter().zip(&want) {
            ensure!(
                g.row == w.0,
                "instance {instance}: row {} vs oracle {}",
                g.row,
                w.0
            );
            ensure!(
                (g.score.value() - w.1).abs() <= 1e-9,
                "instance {instance}: score {} vs {}",
                g.score.value(),
                w.1
            );
            compared += 1;
        }
    }
    within(Duration::from_secs(10), start)?;
    Ok(format!("200 instances, {compared} hits compared"))
}

fn pearson_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(580);
    let mut worst: f64 = 0.0;
    for i in 0..500 {
        let n = rng.gen_range(3..=200);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let slope = rng.gen_range(-3.0..3.0);
        let y: Vec<f64> = x
            .iter()
            .map(|v| slope * v + rng.gen_range(-5.0..5.0))
            .collect();
        let r = pearson(&x, &y).map_err(|e| format!("series {i}: {e}"))?;
        let diff = (r - textbook_pearson(&x, &y)).abs();
        worst = worst.max(diff);
        ensure!(diff <= 1e-9, "series {i}: {r} differs by {diff}");

        let a = rng.gen_range(0.1..5.0);
        let b = rng.gen_range(-50.0..50.0);
        let up: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let down: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
        let (ru, rd) = (pearson(&x, &up).unwrap(), pearson(&x, &down).unwrap());
        ensure!(
            (ru - 1.0).abs() <= 1e-12 && (rd + 1.0).abs() <= 1e-12,
            "series {i}: linear gave {ru}, {rd}"
        );
    }
    Ok(format!("500 series, max deviation {worst:.1e}"))
}

fn template_golden() -> Result<String, String> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/templates");
    let caption = std::fs::read_to_string(dir.join("caption.txt")).unwrap();
    let digests: BTreeMap<String, String> = std::fs::read_to_string(dir.join("template.sha256"))
        .unwrap()
        .lines()
        .map(|l| {
            let (d, name) = l.split_once("  ").unwrap();
            (name.to_string(), d.to_string())
        })
        .collect();
    let phrases = [
        (StrategyId::Baseline, "Generate an image of"),
        (
            StrategyId::TaskInstruction,
            "Create a visually distinctive, highly creative",
        ),
        (
            StrategyId::Negation,
            "must not include realistic replication",
        ),
        (
            StrategyId::ChainOfThought,
            "maintaining a high degree of creativity and uniqueness",
        ),
    ];
    for (s, phrase) in phrases {
        let golden = std::fs::read_to_string(dir.join(format!("{}.txt", s.as_str()))).unwrap();
        let rendered = render_prompt(s, &caption).map_err(|e| e.to_string())?;
        ensure!(
            rendered == golden,
            "{s} renders differently:\n{rendered}\n{golden}"
        );
        ensure!(rendered.contains(phrase), "{s} lacks {phrase:?}");
        ensure!(
            digests.get(s.as_str()) == Some(&template_for(s).digest()),
            "{s} digest changed"
        );
    }
    Ok("4 templates byte-exact, digests pinned".into())
}

fn outcome(caption: &str, seed: u64, sim: f64) -> GenerationOutcome {
    GenerationOutcome {
        caption_id: caption.into(),
        strategy: StrategyId::Baseline,
        seed,
        image_id: Some(format!("{caption}-{seed}")),
        image_digest: None,
        max_similarity: Some(sim),
        matched_record_id: Some(caption.into()),
        relevance: Some(0.2),
        aesthetic: Some(5.5),
        failed: false,
        error: None,
    }
}

fn threshold_boundary() -> Result<String, String> {
    let outs = [outcome("c", 0, 0.85), outcome("c", 1, 0.849999)];
    let rec = &assemble_records(&outs, 0.85)[0];
    ensure!(
        rec.memorized_count == 1,
        "memorized_count {}",
        rec.memorized_count
    );
    ensure!(
        rec.memorized_count_at(0.85) == 1,
        "0.85 not counted at tau 0.85"
    );
    // Through the scorer: an image embedding identical to a corpus row.
    let corpus = memaudit::corpus::CorpusIndex::synthetic(4, 16, 1).map_err(|e| e.to_string())?;
    let row = corpus.embeddings().row_vector(2);
    let s =
        memaudit::audit::score_outcome(&row, &row, 5.0, &corpus, 1.0).map_err(|e| e.to_string())?;
    ensure!(
        s.max_similarity == 1.0 && s.memorized,
        "self match at tau 1.0: {s:?}"
    );
    Ok("0.85 >= 0.85 memorized, 0.849999 not".into())
}

fn line_count(path: &Path) -> usize {
    std::fs::File::open(path)
        .map(|f| std::io::BufReader::new(f).lines().count())
        .unwrap_or(0)
}

fn resume_equivalence() -> Result<String, String> {
    let tmp = tempfile::tempdir().unwrap();
    let (corpus, files) = write_synthetic(tmp.path(), 12, 32, 7);
    let ids: Vec<String> = corpus
        .records()
        .iter()
        .take(6)
        .map(|r| r.record_id.clone())
        .collect();
    let slow = Slow {
        inner: mock(&corpus, strategy_rates(ids[..3].to_vec())),
        delay: Duration::from_millis(3),
    };
    let server = serve(Arc::new(slow), "127.0.0.1:0", 4, None).map_err(|e| e.to_string())?;
    let backend = format!("http:{}", server.url());
    let captions = tmp.path().join("captions.json");
    std::fs::write(&captions, serde_json::to_vec(&ids).unwrap()).unwrap();
    let common_args = ["--seeds", "20", "--concurrency", "2", "--batch-size", "8"];
    let total = 6 * 4 * 20;

    let full = cli_run(
        tmp.path(),
        &files,
        &backend,
        &captions,
        "full",
        &common_args,
    );
    ensure!(
        full.status.success(),
        "uninterrupted run failed: {}",
        String::from_utf8_lossy(&full.stderr)
    );

    let killed_dir = tmp.path().join("killed");
    let mut args: Vec<String> = vec![
        "run".into(),
        "--captions".into(),
        captions.display().to_string(),
    ];
    args.extend(["--out".into(), killed_dir.display().to_string()]);
    args.extend(files.args());
    args.extend(["--backend".into(), backend.clone()]);
    args.extend(common_args.iter().map(|s| s.to_string()));
    let mut child = KillOnDrop(
        bin()
            .args(&args)
            .env_remove("MEMAUDIT_TOKEN")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let outcomes = killed_dir.join("outcomes.jsonl");
    let deadline = Instant::now() + Duration::from_secs(30);
    while line_count(&outcomes) < 40 {
        ensure!(
            Instant::now() < deadline,
            "run never reached 40 checkpointed cells"
        );
        ensure!(
            child.0.try_wait().unwrap().is_none(),
            "run exited before it could be killed"
        );
        std::thread::sleep(Duration::from_millis(1));
    }
    drop(child);
    let at_kill = line_count(&outcomes);
    ensure!(
        at_kill < total,
        "run finished ({at_kill} cells) before the kill"
    );
    ensure!(
        !killed_dir.join("records.json").exists(),
        "records written before the kill"
    );

    let resumed = bin()
        .args(["run", "--resume", &killed_dir.display().to_string()])
        .env_remove("MEMAUDIT_TOKEN")
        .output()
        .unwrap();
    ensure!(
        resumed.status.success(),
        "resume failed: {}",
        String::from_utf8_lossy(&resumed.stderr)
    );
    for f in ["records.json", "outcomes.jsonl"] {
        let a = std::fs::read(tmp.path().join("full").join(f)).unwrap();
        let b = std::fs::read(killed_dir.join(f)).unwrap();
        ensure!(a == b, "{f} differs after resume");
    }
    Ok(format!(
        "killed at {at_kill}/{total} cells, resumed output byte-identical"
    ))
}

fn tau_monotonicity() -> Result<String, String> {
    let taus = [0.5, 0.7, 0.85, 0.95];
    let mut rng = ChaCha8Rng::seed_from_u64(584);
    for set in 0..300 {
        let captions = rng.gen_range(1..8);
        let seeds = rng.gen_range(1..20);
        let mut outs = Vec::new();
        for c in 0..captions {
            for s in 0..seeds {
                let sim = memaudit::numfmt::quantize(rng.gen_range(0.0..1.0));
                outs.push(outcome(&format!("c{c}"), s, sim));
            }
        }
        let mut prev = usize::MAX;
        for tau in taus {
            let records = assemble_records(&outs, tau);
            let n: usize = records.iter().map(|r| r.memorized_count).sum();
            let cfg = AuditConfig {
                tau,
                seeds_per_run: seeds,
                strategies: vec![StrategyId::Baseline],
                ..AuditConfig::default()
            };
            let summary = summarize(&records, &cfg).map_err(|e| e.to_string())?;
            ensure!(
                summary[0].memorized_generations == n,
                "summary disagrees with records at tau {tau}"
            );
            ensure!(
                n <= prev,
                "set {set}: {n} memorized at tau {tau} exceeds {prev}"
            );
            prev = n;
        }
    }
    Ok("300 record sets, counts non-increasing over 0.5/0.7/0.85/0.95".into())
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 8] = [
        ("frequency-table-arithmetic", frequency_table_arithmetic),
        ("end-to-end-mock-audit", end_to_end_mock),
        ("similarity-oracle", similarity_oracle),
        ("pearson-oracle", pearson_oracle),
        ("template-golden-files", template_golden),
        ("threshold-boundary", threshold_boundary),
        ("resume-equivalence", resume_equivalence),
        ("tau-monotonicity", tau_monotonicity),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        match result {
            Ok(detail) => println!("PASS {name}: {detail} ({took:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} ({took:.2?})");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        checks.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
