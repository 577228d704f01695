//! Report artifacts for a reduced run: the observation table as CSV and a
//! letter-value chart as hand-rolled SVG.
//!
//! Rendering is fully deterministic: no timestamps, fixed float formatting,
//! stable group order. The same store contents always produce byte-equal
//! artifacts, which makes reports diffable across reruns.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::lingua::{category_profiles, profile_records, write_marker_csv};
use crate::model::Observation;
use crate::stats::{group_summaries, write_summary_csv, StatsError, SummaryTable};
use crate::store::{self, ObsFilter, StoreError};

/// What to render and against which reference. The human baseline is the
/// mean kept share reported for people playing the same one-shot division
/// game; the chart draws it as a dashed reference line.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSpec {
    pub run_id: String,
    pub outlier_prop: f64,
    pub include_linguistics: bool,
    pub human_baseline_keep: f64,
}

pub const DEFAULT_OUTLIER_PROP: f64 = 0.1;
pub const DEFAULT_HUMAN_BASELINE_KEEP: f64 = 0.72;

impl ReportSpec {
    pub fn new(run_id: impl Into<String>) -> ReportSpec {
        ReportSpec {
            run_id: run_id.into(),
            outlier_prop: DEFAULT_OUTLIER_PROP,
            include_linguistics: true,
            human_baseline_keep: DEFAULT_HUMAN_BASELINE_KEEP,
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if !(self.outlier_prop > 0.0 && self.outlier_prop < 1.0) {
            return Err(SpecError::OutlierProp(self.outlier_prop));
        }
        if !(0.0..=1.0).contains(&self.human_baseline_keep) {
            return Err(SpecError::Baseline(self.human_baseline_keep));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("outlier proportion must lie strictly between 0 and 1, got {0}")]
    OutlierProp(f64),
    #[error("human baseline must lie in [0, 1], got {0}")]
    Baseline(f64),
}

/// One observation per row, sorted by trial id, amounts as exact decimal
/// strings.
pub fn write_observation_csv<W: Write>(
    observations: &[Observation],
    writer: W,
) -> Result<(), csv::Error> {
    let mut rows: Vec<&Observation> = observations.iter().collect();
    rows.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "trial_id",
        "model",
        "variant_index",
        "kept",
        "given",
        "amount",
        "retained_fraction",
    ])?;
    for obs in rows {
        out.write_record([
            obs.trial_id.as_str(),
            obs.model.as_str(),
            &obs.variant_index.to_string(),
            &obs.kept.to_string(),
            &obs.given.to_string(),
            &obs.amount.to_string(),
            &format!("{:.6}", obs.retained_fraction),
        ])?;
    }
    out.flush()?;
    Ok(())
}

// Chart geometry. The plot area maps retained fraction 1.0 at the top to
// 0.0 at the bottom.
pub const CHART_MARGIN_LEFT: f64 = 64.0;
pub const CHART_MARGIN_RIGHT: f64 = 24.0;
pub const CHART_MARGIN_TOP: f64 = 48.0;
pub const CHART_MARGIN_BOTTOM: f64 = 56.0;
pub const CHART_PLOT_HEIGHT: f64 = 360.0;
pub const CHART_SLOT_WIDTH: f64 = 96.0;
const BOX_MAX_WIDTH: f64 = 64.0;

fn y_of(fraction: f64) -> f64 {
    CHART_MARGIN_TOP + (1.0 - fraction.clamp(0.0, 1.0)) * CHART_PLOT_HEIGHT
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn xml_escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Renders the letter-value chart: one glyph per (model, variant) group,
/// boxes halving in width per letter-value level outward, outlier dots,
/// and a dashed human-baseline reference line. The run id and plan digest
/// are embedded in the header so every chart names its data.
pub fn render_chart(table: &SummaryTable, spec: &ReportSpec, plan_digest: &str) -> String {
    let slots = table.groups.len().max(1);
    let width = CHART_MARGIN_LEFT + CHART_MARGIN_RIGHT + slots as f64 * CHART_SLOT_WIDTH;
    let height = CHART_MARGIN_TOP + CHART_PLOT_HEIGHT + CHART_MARGIN_BOTTOM;
    let plot_bottom = CHART_MARGIN_TOP + CHART_PLOT_HEIGHT;
    let plot_right = width - CHART_MARGIN_RIGHT;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" font-family=\"monospace\">\n",
        fmt(width), fmt(height), fmt(width), fmt(height)
    ));
    svg.push_str(&format!(
        "  <title>retained fraction by variant, run {}</title>\n",
        xml_escape(&spec.run_id)
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"20\" font-size=\"13\">retained fraction by variant - run {} - plan {}</text>\n",
        fmt(CHART_MARGIN_LEFT),
        xml_escape(&spec.run_id),
        xml_escape(plan_digest)
    ));

    // Frame and y ticks.
    svg.push_str(&format!(
        "  <line class=\"axis\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\"/>\n",
        fmt(CHART_MARGIN_LEFT),
        fmt(CHART_MARGIN_TOP),
        fmt(CHART_MARGIN_LEFT),
        fmt(plot_bottom)
    ));
    svg.push_str(&format!(
        "  <line class=\"axis\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\"/>\n",
        fmt(CHART_MARGIN_LEFT),
        fmt(plot_bottom),
        fmt(plot_right),
        fmt(plot_bottom)
    ));
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(tick);
        svg.push_str(&format!(
            "  <line class=\"tick\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\"/>\n",
            fmt(CHART_MARGIN_LEFT - 5.0),
            fmt(y),
            fmt(CHART_MARGIN_LEFT),
            fmt(y)
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            fmt(CHART_MARGIN_LEFT - 9.0),
            fmt(y + 4.0),
            fmt(tick)
        ));
    }

    // Human baseline reference.
    let baseline_y = y_of(spec.human_baseline_keep);
    svg.push_str(&format!(
        "  <line class=\"baseline\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#b5452a\" stroke-dasharray=\"6 4\"/>\n",
        fmt(CHART_MARGIN_LEFT),
        fmt(baseline_y),
        fmt(plot_right),
        fmt(baseline_y)
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"#b5452a\">human keep {}</text>\n",
        fmt(CHART_MARGIN_LEFT + 4.0),
        fmt(baseline_y - 5.0),
        fmt(spec.human_baseline_keep)
    ));

    if table.groups.is_empty() {
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#666666\">no observations</text>\n",
            fmt(CHART_MARGIN_LEFT + 20.0),
            fmt(y_of(0.5))
        ));
    }

    for (slot, group) in table.groups.iter().enumerate() {
        let center = CHART_MARGIN_LEFT + (slot as f64 + 0.5) * CHART_SLOT_WIDTH;
        let summary = &group.summary;

        // Letter-value boxes, widest innermost.
        for (level, (lower, upper)) in summary.pairs.iter().enumerate() {
            let box_width = BOX_MAX_WIDTH / 2f64.powi(level as i32);
            let y_top = y_of(*upper);
            let y_bottom = y_of(*lower);
            let opacity = (0.85 - 0.13 * level as f64).max(0.2);
            svg.push_str(&format!(
                "  <rect class=\"lv-box\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#4d7fb2\" fill-opacity=\"{}\" stroke=\"#2d4f72\" stroke-width=\"0.5\"/>\n",
                fmt(center - box_width / 2.0),
                fmt(y_top),
                fmt(box_width),
                fmt((y_bottom - y_top).max(0.5)),
                fmt(opacity)
            ));
        }

        // Median stroke across the widest box.
        let median_y = y_of(summary.median);
        svg.push_str(&format!(
            "  <line class=\"median\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#10243a\" stroke-width=\"2\"/>\n",
            fmt(center - BOX_MAX_WIDTH / 2.0),
            fmt(median_y),
            fmt(center + BOX_MAX_WIDTH / 2.0),
            fmt(median_y)
        ));

        for outlier in &summary.outliers {
            svg.push_str(&format!(
                "  <circle class=\"outlier\" cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"none\" stroke=\"#10243a\"/>\n",
                fmt(center),
                fmt(y_of(*outlier))
            ));
        }

        // Slot labels: variant index, then model and sample count.
        svg.push_str(&format!(
            "  <text class=\"slot-label\" x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">v{:02}</text>\n",
            fmt(center),
            fmt(plot_bottom + 16.0),
            group.variant_index
        ));
        svg.push_str(&format!(
            "  <text class=\"slot-label\" x=\"{}\" y=\"{}\" font-size=\"9\" text-anchor=\"middle\">{} n={}</text>\n",
            fmt(center),
            fmt(plot_bottom + 30.0),
            xml_escape(clip(&group.model, 18)),
            summary.n
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

fn clip(s: &str, max_chars: usize) -> &str {
    match s.char_indices().nth(max_chars) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// The artifact files a report run produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub observations_csv: Option<PathBuf>,
    pub summary_csv: PathBuf,
    pub markers_csv: Option<PathBuf>,
    pub chart_svg: Option<PathBuf>,
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError {
    let path = path.to_path_buf();
    move |source| ReportError::Io { path, source }
}

fn write_file(path: &Path, bytes: Vec<u8>) -> Result<(), ReportError> {
    std::fs::write(path, bytes).map_err(io_at(path))
}

/// The analysis tables alone: letter-value summary CSV and, unless
/// disabled, the marker profile CSV. `out_dir` is created if missing.
pub fn write_tables(
    runs_dir: &Path,
    out_dir: &Path,
    spec: &ReportSpec,
) -> Result<ReportPaths, ReportError> {
    write_artifacts(runs_dir, out_dir, spec, false)
}

/// Every report artifact: observation CSV, summary CSV, marker CSV (unless
/// disabled), and the letter-value SVG chart.
pub fn write_report(
    runs_dir: &Path,
    out_dir: &Path,
    spec: &ReportSpec,
) -> Result<ReportPaths, ReportError> {
    write_artifacts(runs_dir, out_dir, spec, true)
}

fn write_artifacts(
    runs_dir: &Path,
    out_dir: &Path,
    spec: &ReportSpec,
    full: bool,
) -> Result<ReportPaths, ReportError> {
    spec.validate()?;
    let manifest = store::load_manifest(runs_dir, &spec.run_id)?;
    let plan = store::load_plan_file(runs_dir, &spec.run_id)?;
    let observations = store::load_observations(runs_dir, &spec.run_id, &ObsFilter::default())?;
    let table = group_summaries(
        &observations,
        &plan.models,
        plan.variant_count,
        spec.outlier_prop,
    )?;

    std::fs::create_dir_all(out_dir).map_err(io_at(out_dir))?;

    let summary_csv = out_dir.join("summary.csv");
    let mut buf = Vec::new();
    write_summary_csv(&table, &spec.run_id, &mut buf)?;
    write_file(&summary_csv, buf)?;

    let markers_csv = if spec.include_linguistics {
        let records = store::load_records(runs_dir, &spec.run_id)?;
        let profiles = profile_records(&records, &observations);
        let grouped = category_profiles(&profiles);
        let path = out_dir.join("markers.csv");
        let mut buf = Vec::new();
        write_marker_csv(&grouped, &mut buf)?;
        write_file(&path, buf)?;
        Some(path)
    } else {
        None
    };

    let (observations_csv, chart_svg) = if full {
        let obs_path = out_dir.join("observations.csv");
        let mut buf = Vec::new();
        write_observation_csv(&observations, &mut buf)?;
        write_file(&obs_path, buf)?;

        let chart_path = out_dir.join("letter_values.svg");
        let svg = render_chart(&table, spec, &manifest.plan_digest);
        write_file(&chart_path, svg.into_bytes())?;
        (Some(obs_path), Some(chart_path))
    } else {
        (None, None)
    };

    Ok(ReportPaths {
        observations_csv,
        summary_csv,
        markers_csv,
        chart_svg,
    })
}
