use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::config::{ExperimentConfig, Method};
use super::run::{ExperimentReport, SweepResult};
use crate::error::{Error, Result};
use crate::metrics::Summary;

/// Field of results.json that varies between otherwise identical runs.
pub const TIMESTAMP_FIELD: &str = "generated_at";

pub enum Results<'a> {
    Experiment(&'a ExperimentReport),
    Sweep(&'a SweepResult),
}

impl Results<'_> {
    fn cells(&self) -> Vec<&ExperimentReport> {
        match self {
            Results::Experiment(r) => vec![r],
            Results::Sweep(s) => s.cells.iter().collect(),
        }
    }
}

#[derive(Serialize)]
struct ResultsFile<'a> {
    generated_at: u64,
    config: &'a ExperimentConfig,
    r_values: Option<&'a [f64]>,
    methods: Vec<Method>,
    cells: Vec<&'a ExperimentReport>,
}

/// Writes results.json and results.csv, plus plot_roc.svg and plot_pr.svg
/// for sweeps.
pub fn emit_results(results: &Results<'_>, config: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<()> {
    let cells = results.cells();
    if cells.is_empty() {
        return Err(Error::invalid("nothing to emit"));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, body: String| {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(path, e))
    };

    let (r_values, methods) = match results {
        Results::Experiment(r) => (None, vec![r.method]),
        Results::Sweep(s) => (Some(s.r_values.as_slice()), s.methods.clone()),
    };
    let file = ResultsFile {
        generated_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or_default(),
        config,
        r_values,
        methods,
        cells: cells.clone(),
    };
    write("results.json", serde_json::to_string_pretty(&file)? + "\n")?;
    write("results.csv", format_results_csv(&cells))?;
    if let Results::Sweep(s) = results {
        write("plot_roc.svg", plot_sweep(s, "ROC-AUC", |c| c.metrics.roc_auc_summary))?;
        write("plot_pr.svg", plot_sweep(s, "PR-AUC", |c| c.metrics.pr_auc_summary))?;
    }
    Ok(())
}

/// One row per run.
pub fn format_results_csv(cells: &[&ExperimentReport]) -> String {
    let mut out = String::from("method,r,repetition,seed,plan_hash,roc_auc,pr_auc\n");
    for run in cells.iter().flat_map(|c| &c.runs) {
        writeln!(
            out,
            "{},{},{},{},{},{:.16e},{:.16e}",
            run.method,
            run.r.map(|r| r.to_string()).unwrap_or_default(),
            run.repetition,
            run.seed,
            run.plan_hash.as_deref().unwrap_or(""),
            run.roc_auc,
            run.pr_auc
        )
        .unwrap();
    }
    out
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Metric against r, one polyline per method, stderr error bars.
pub fn plot_sweep(sweep: &SweepResult, metric: &str, pick: impl Fn(&ExperimentReport) -> Summary) -> String {
    let points: Vec<(Method, Vec<(f64, Summary)>)> = sweep
        .methods
        .iter()
        .map(|&m| {
            let pts = sweep
                .r_values
                .iter()
                .filter_map(|&r| sweep.cell(m, r).map(|c| (r, pick(c))))
                .collect();
            (m, pts)
        })
        .collect();
    let all = points.iter().flat_map(|(_, p)| p.iter().map(|(_, s)| *s));
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s.mean - s.stderr), hi.max(s.mean + s.stderr))
    });
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.1).max(0.01);
    let (lo, hi) = ((lo - pad).max(0.0), (hi + pad).min(1.0));
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |r: f64| LEFT + r * plot_w;
    let sy = |v: f64| TOP + (hi - v) / (hi - lo) * plot_h;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{metric} vs label bias r</text>"#,
        LEFT + plot_w / 2.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for i in 0..=5 {
        let r = i as f64 / 5.0;
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{r:.1}</text>"#,
            sx(r),
            TOP + plot_h + 18.0
        )
        .unwrap();
        let v = lo + (hi - lo) * i as f64 / 5.0;
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            LEFT - 6.0,
            sy(v) + 4.0
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">r</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    )
    .unwrap();

    for (i, (method, pts)) in points.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|(r, s)| format!("{:.2},{:.2}", sx(*r), sy(s.mean)))
            .collect();
        writeln!(
            svg,
            r#"<polyline class="series" data-method="{method}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        )
        .unwrap();
        for (r, s) in pts {
            let x = sx(*r);
            writeln!(
                svg,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/>"#,
                sy(s.mean - s.stderr),
                sy(s.mean + s.stderr)
            )
            .unwrap();
            writeln!(
                svg,
                r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sy(s.mean)
            )
            .unwrap();
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{method}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
