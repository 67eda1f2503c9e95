//! Report files written into a run directory.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{
    correlation_report, distribution_data, recommend_strategy, summarize, CorrelationReport,
    Distribution, Metric, ReportError, RiskTier, StrategySummary, FAVORABLE_AESTHETIC,
};
use crate::audit::rundir::{write_json_atomic, RunDir, RunManifest};
use crate::audit::{AuditConfig, PromptAuditRecord};
use crate::prompts::StrategyId;

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub bins: usize,
    /// Also render one SVG histogram per metric.
    pub svg: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            bins: 40,
            svg: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub summary_csv: PathBuf,
    pub correlations_json: PathBuf,
    pub distributions_json: PathBuf,
    pub report_md: PathBuf,
    pub svgs: Vec<PathBuf>,
}

/// sha256 of the configuration's JSON form.
pub fn config_digest(cfg: &AuditConfig) -> String {
    hex::encode(Sha256::digest(
        serde_json::to_vec(cfg).expect("config serializes"),
    ))
}

/// Published full-scale coefficients, kept for side-by-side reading only.
fn reference_values() -> serde_json::Value {
    json!({
        "note": "full-scale values from a production diffusion model; not expected to reproduce on other backends",
        "chain_of_thought": { "aesthetic": 0.49, "relevance": 0.33 },
        "task_instruction": { "aesthetic": 0.13, "relevance": 0.25 },
        "other_strategies": "below 0.15 in magnitude"
    })
}

pub fn summary_csv(summaries: &[StrategySummary]) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "strategy",
        "memorized_generations",
        "gen_frequency_pct",
        "high_mean_prompts",
        "prompt_frequency_pct",
    ])?;
    for s in summaries {
        w.write_record([
            s.strategy.as_str().to_string(),
            s.memorized_generations.to_string(),
            format!("{:.2}", s.gen_frequency_pct),
            s.high_mean_prompts.to_string(),
            format!("{:.2}", s.prompt_frequency_pct),
        ])?;
    }
    w.into_inner().map_err(|e| ReportError::Io(e.into_error()))
}

fn opt2(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.2}"))
}

pub fn render_markdown(
    manifest: &RunManifest,
    summaries: &[StrategySummary],
    correlations: &[CorrelationReport],
    distributions: &[Distribution],
) -> String {
    let cfg = &manifest.config;
    let mut md = String::new();
    let _ = writeln!(md, "# Memorization audit report\n");
    let _ = writeln!(
        md,
        "- backend: `{}` ({})",
        manifest.backend.model_label, manifest.backend_selector
    );
    let _ = writeln!(md, "- config digest: `{}`", config_digest(cfg));
    let _ = writeln!(md, "- corpus digest: `{}`", manifest.corpus.digest);
    let _ = writeln!(
        md,
        "- tau: {} | seeds per caption: {} | captions: {}",
        cfg.tau,
        cfg.seeds_per_run,
        summaries.iter().map(|s| s.captions).max().unwrap_or(0)
    );
    let _ = writeln!(md, "\n## Similar generations\n");
    let _ = writeln!(
        md,
        "| strategy | similar generations (prompts) | frequency % (prompts %) | failed cells |"
    );
    let _ = writeln!(md, "|---|---|---|---|");
    for s in summaries {
        let _ = writeln!(
            md,
            "| {} | {} ({}) | {:.2} ({:.2}) | {} |",
            s.strategy.label(),
            s.memorized_generations,
            s.high_mean_prompts,
            s.gen_frequency_pct,
            s.prompt_frequency_pct,
            s.failed_generations
        );
    }
    let _ = writeln!(
        md,
        "\nA generation is similar when its best corpus match reaches tau; a prompt counts when its \
         mean similarity over seeds reaches tau. Generation frequencies use each strategy's own \
         total (captions x seeds) as the denominator[^denom].\n"
    );
    let _ = writeln!(
        md,
        "[^denom]: Dividing by the total across all strategies instead (four times larger) would \
         give a quarter of each frequency. The per-strategy denominator is the one under which \
         counts and percentages in this table agree.\n"
    );

    let _ = writeln!(md, "## Correlation with maximum similarity\n");
    let _ = writeln!(
        md,
        "Per prompt, x is the maximum similarity across seeds and y is the mean over seeds.\n"
    );
    let _ = writeln!(md, "| strategy | n | r (aesthetic) | r (relevance) |");
    let _ = writeln!(md, "|---|---|---|---|");
    for c in correlations {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} |",
            c.strategy.label(),
            c.n,
            opt2(c.r_aesthetic.rounded()),
            opt2(c.r_relevance.rounded())
        );
    }

    let _ = writeln!(md, "\n## Score distributions\n");
    for d in distributions {
        let _ = writeln!(md, "### {}\n", d.metric);
        let _ = writeln!(
            md,
            "| strategy | n | mean |{}",
            if d.metric == Metric::Aesthetic {
                " share above 5 |"
            } else {
                ""
            }
        );
        let _ = writeln!(
            md,
            "|---|---|---|{}",
            if d.metric == Metric::Aesthetic {
                "---|"
            } else {
                ""
            }
        );
        for h in &d.strategies {
            let fav = h
                .favorable_share
                .map_or(String::new(), |f| format!(" {:.2}% |", 100.0 * f));
            let _ = writeln!(
                md,
                "| {} | {} | {:.4} |{}",
                h.strategy.label(),
                h.n,
                h.mean,
                fav
            );
        }
        let _ = writeln!(md);
    }
    if distributions.iter().any(|d| d.metric == Metric::Aesthetic) {
        let _ = writeln!(
            md,
            "Aesthetic scores above {FAVORABLE_AESTHETIC} are considered favorable.\n"
        );
    }

    let _ = writeln!(md, "## Recommendations\n");
    let _ = writeln!(md, "| application risk | strategy |");
    let _ = writeln!(md, "|---|---|");
    for t in RiskTier::ALL {
        let _ = writeln!(md, "| {} | {} |", t, recommend_strategy(t).label());
    }
    md
}

const COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

fn color(s: StrategyId) -> &'static str {
    COLORS[StrategyId::ALL.iter().position(|&x| x == s).unwrap_or(0) % COLORS.len()]
}

/// Step-outline histogram, one series per strategy.
pub fn render_svg(d: &Distribution) -> String {
    let (w, h, m) = (640.0, 360.0, 48.0);
    let (pw, ph) = (w - 2.0 * m, h - 2.0 * m);
    let ymax = d
        .strategies
        .iter()
        .flat_map(|s| s.densities.iter().copied())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let (lo, hi) = (d.edges[0], d.edges[d.bins]);
    let px = |x: f64| m + (x - lo) / (hi - lo) * pw;
    let py = |y: f64| m + ph - y / ymax * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {m} V{y} H{x}" fill="none" stroke="black"/>"#,
        y = m + ph,
        x = m + pw
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        w / 2.0,
        h - 12.0,
        d.metric
    );
    let _ = writeln!(
        svg,
        r#"<text x="{m}" y="{}" text-anchor="middle">{lo:.3}</text>"#,
        m + ph + 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{hi:.3}</text>"#,
        m + pw,
        m + ph + 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">{ymax:.2}</text>"#,
        m - 4.0,
        m + 4.0
    );
    for (i, s) in d.strategies.iter().enumerate() {
        let mut path = format!("M{:.2} {:.2}", px(lo), py(0.0));
        for (b, &dens) in s.densities.iter().enumerate() {
            let _ = write!(path, " V{:.2} H{:.2}", py(dens), px(d.edges[b + 1]));
        }
        let _ = write!(path, " V{:.2}", py(0.0));
        let c = color(s.strategy);
        let _ = writeln!(
            svg,
            r#"<path d="{path}" fill="none" stroke="{c}" stroke-width="1.5"/>"#
        );
        let ly = m + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" text-anchor="end" fill="{c}">{}</text>"#,
            m + pw,
            s.strategy.label()
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Serialize)]
struct CorrelationsFile<'a> {
    x: &'static str,
    y_aggregation: &'static str,
    reference_values: serde_json::Value,
    strategies: &'a [CorrelationReport],
}

fn malformed(e: std::io::Error) -> ReportError {
    if e.kind() == std::io::ErrorKind::InvalidData {
        ReportError::Malformed(e.to_string())
    } else {
        ReportError::Io(e)
    }
}

/// Writes `summary.csv`, `correlations.json`, `distributions.json` and
/// `report.md` (plus `hist_<metric>.svg` on request) into the run directory.
/// Output depends only on the directory's contents.
pub fn write_report(run: &RunDir, opts: &ReportOptions) -> Result<ReportPaths, ReportError> {
    let manifest = run.read_manifest().map_err(malformed)?;
    let records: Vec<PromptAuditRecord> = run.read_records().map_err(malformed)?;
    let summaries = summarize(&records, &manifest.config)?;
    let correlations = correlation_report(&records);
    let mut distributions = Vec::new();
    for metric in Metric::ALL {
        match distribution_data(&records, metric, opts.bins) {
            Ok(d) => distributions.push(d),
            Err(ReportError::NoData(_)) => {}
            Err(e) => return Err(e),
        }
    }

    let root = run.root();
    let paths = ReportPaths {
        summary_csv: root.join("summary.csv"),
        correlations_json: root.join("correlations.json"),
        distributions_json: root.join("distributions.json"),
        report_md: root.join("report.md"),
        svgs: if opts.svg {
            distributions
                .iter()
                .map(|d| root.join(format!("hist_{}.svg", d.metric)))
                .collect()
        } else {
            Vec::new()
        },
    };
    std::fs::write(&paths.summary_csv, summary_csv(&summaries)?)?;
    write_json_atomic(
        &paths.correlations_json,
        &CorrelationsFile {
            x: "per-prompt maximum similarity across seeds",
            y_aggregation: "per-prompt mean over successful seeds",
            reference_values: reference_values(),
            strategies: &correlations,
        },
    )?;
    write_json_atomic(&paths.distributions_json, &distributions)?;
    std::fs::write(
        &paths.report_md,
        render_markdown(&manifest, &summaries, &correlations, &distributions),
    )?;
    for (d, p) in distributions.iter().zip(&paths.svgs) {
        std::fs::write(p, render_svg(d))?;
    }
    Ok(paths)
}
