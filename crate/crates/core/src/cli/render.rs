//! Text renderings of a study: KM step tables and plots, score and
//! importance tables, and a markdown summary.
//!
//! Floats are written with Rust's shortest round-trip formatting so a CSV
//! and an SVG rendered from the same curve carry identical digits.

use std::fmt::Write as _;

use crate::analysis::{
    ComparisonOutcome, FeatureImportanceRow, KmEntry, NriEntry, ScoredSplit, SplitTable, StudyReport,
};
use crate::metrics::{ConfidenceInterval, KmCurve};

fn curves(entry: &KmEntry) -> Vec<&KmCurve> {
    std::iter::once(&entry.high).chain(entry.low.as_ref()).collect()
}

pub fn km_csv(entry: &KmEntry) -> String {
    let mut out = String::from("group,time,survival,at_risk,events,censored\n");
    for c in curves(entry) {
        for p in &c.points {
            writeln!(out, "{},{},{},{},{},{}", c.group_label, p.time, p.survival, p.at_risk, p.events, p.censored).unwrap();
        }
    }
    out
}

/// Vertices of the drawn step function. Every even-indexed vertex after the
/// origin is a curve point.
pub fn step_vertices(curve: &KmCurve) -> Vec<(f64, f64)> {
    let mut v = vec![(0.0, 1.0)];
    let mut last = 1.0;
    for p in &curve.points {
        v.push((p.time, last));
        v.push((p.time, p.survival));
        last = p.survival;
    }
    v
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 40.0, 50.0); // left, right, top, bottom
const COLORS: [&str; 2] = ["#c0392b", "#2471a3"];

/// Step plot with curve vertices written in data units inside a scaled
/// group.
pub fn km_svg(entry: &KmEntry) -> String {
    let (ml, mr, mt, mb) = MARGIN;
    let (pw, ph) = (WIDTH - ml - mr, HEIGHT - mt - mb);
    let t_max = curves(entry)
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.time))
        .fold(0.0_f64, f64::max)
        .max(1.0);

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#).unwrap();
    let title = match &entry.logrank {
        Some(t) => format!("{} ({} split), log-rank p = {:.4}", entry.model, entry.split, t.p_value),
        None => format!("{} ({} split)", entry.model, entry.split),
    };
    writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, WIDTH / 2.0).unwrap();
    writeln!(s, r##"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>"##).unwrap();
    for k in 0..=4 {
        let y = mt + ph * (1.0 - k as f64 / 4.0);
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.2}</text>"#, ml - 6.0, y + 4.0, k as f64 / 4.0).unwrap();
        let x = ml + pw * k as f64 / 4.0;
        writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{:.0}</text>"#, mt + ph + 16.0, t_max * k as f64 / 4.0).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">days</text>"#, ml + pw / 2.0, HEIGHT - 10.0).unwrap();
    writeln!(s, r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">survival</text>"#, mt + ph / 2.0, mt + ph / 2.0).unwrap();

    writeln!(s, r#"<g transform="translate({ml} {}) scale({} {})">"#, mt + ph, pw / t_max, -ph).unwrap();
    for (c, color) in curves(entry).into_iter().zip(COLORS) {
        let pts: Vec<String> = step_vertices(c).iter().map(|(t, v)| format!("{t},{v}")).collect();
        writeln!(
            s,
            r#"<polyline class="km" data-group="{}" fill="none" stroke="{color}" stroke-width="2" vector-effect="non-scaling-stroke" points="{}"/>"#,
            c.group_label,
            pts.join(" ")
        )
        .unwrap();
    }
    writeln!(s, "</g>").unwrap();
    for (k, (c, color)) in curves(entry).into_iter().zip(COLORS).enumerate() {
        let y = mt + 16.0 + 16.0 * k as f64;
        let x = ml + pw - 120.0;
        writeln!(s, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#, x + 20.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}">{} risk (n={})</text>"#, x + 26.0, y + 4.0, c.group_label, c.points.first().map_or(0, |p| p.at_risk)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Parses the `points` of each KM polyline back into vertices, keyed by
/// group label.
pub fn parse_svg_steps(svg: &str) -> Vec<(String, Vec<(f64, f64)>)> {
    let attr = |line: &str, name: &str| -> Option<String> {
        let start = line.find(&format!(r#"{name}=""#))? + name.len() + 2;
        let end = line[start..].find('"')? + start;
        Some(line[start..end].to_string())
    };
    svg.lines()
        .filter(|l| l.contains(r#"class="km""#))
        .filter_map(|l| {
            let group = attr(l, "data-group")?;
            let pts = attr(l, "points")?
                .split_whitespace()
                .filter_map(|p| {
                    let (t, v) = p.split_once(',')?;
                    Some((t.parse().ok()?, v.parse().ok()?))
                })
                .collect();
            Some((group, pts))
        })
        .collect()
}

pub fn scores_csv(splits: &[ScoredSplit]) -> String {
    let models: Vec<_> = splits.first().map(|s| s.scores.keys().copied().collect()).unwrap_or_default();
    let mut out = String::from("split,patient_id,event,time_days");
    for m in &models {
        write!(out, ",{m}").unwrap();
    }
    out.push('\n');
    for s in splits {
        for (i, id) in s.ids.iter().enumerate() {
            let l = s.labels[i];
            write!(out, "{},{id},{},{}", s.split, u8::from(l.event), l.time_days).unwrap();
            for m in &models {
                write!(out, ",{}", s.scores[m][i]).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn feature_importance_csv(rows: &[FeatureImportanceRow]) -> String {
    let mut out = String::from("modality,feature,importance,predictive_ability\n");
    for r in rows {
        let ability = r.predictive_ability.map(|a| a.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{ability}", r.modality, r.feature, r.importance).unwrap();
    }
    out
}

fn ci_text(ci: &Option<ConfidenceInterval>) -> String {
    ci.map(|c| format!("[{:.3}, {:.3}]", c.lo, c.hi)).unwrap_or_else(|| "n/a".into())
}

fn c_table(out: &mut String, tables: &[SplitTable]) {
    for t in tables {
        writeln!(out, "\n**{}** ({} patients, {} events)\n", t.split, t.n_patients, t.n_events).unwrap();
        out.push_str("| model | c-index | 95% CI |\n|---|---|---|\n");
        for m in &t.models {
            let c = m.c_index.map(|c| format!("{c:.3}")).unwrap_or_else(|| "n/a".into());
            writeln!(out, "| {} | {c} | {} |", m.model, ci_text(&m.ci)).unwrap();
        }
    }
}

fn nri_cell(e: &Option<NriEntry>) -> String {
    match e {
        Some(NriEntry { result: Some(r), ci, .. }) => format!("{:.3} ({})", r.nri, ci_text(ci)),
        Some(NriEntry { note: Some(n), .. }) => format!("n/a: {n}"),
        _ => "n/a".into(),
    }
}

/// Markdown summary of a report.
pub fn report_markdown(r: &StudyReport) -> String {
    let mut out = String::from("# Study report\n");
    writeln!(out, "\nConfig fingerprint: `{}`", r.config_fingerprint).unwrap();

    out.push_str("\n## Concordance\n");
    c_table(&mut out, &r.overall);

    writeln!(out, "\n## Concordance, labels truncated at {} days", r.short_term.horizon_days).unwrap();
    c_table(&mut out, &r.short_term.splits);

    out.push_str("\n## Net reclassification improvement\n\n| split | +clinical | +imaging | +PESI |\n|---|---|---|---|\n");
    for row in &r.nri {
        writeln!(out, "| {} | {} | {} | {} |", row.split, nri_cell(&row.plus_clinical), nri_cell(&row.plus_imaging), nri_cell(&row.plus_pesi)).unwrap();
    }

    out.push_str("\n## Risk stratification\n\n| split | model | cut | high | low | log-rank p |\n|---|---|---|---|---|---|\n");
    for k in &r.km {
        let n = |c: Option<&KmCurve>| c.and_then(|c| c.points.first()).map_or(0, |p| p.at_risk);
        let p = k.logrank.as_ref().map(|t| format!("{:.4}", t.p_value)).unwrap_or_else(|| "n/a".into());
        writeln!(out, "| {} | {} | {:.4} | {} | {} | {p} |", k.split, k.model, k.cut_value, n(Some(&k.high)), n(k.low.as_ref())).unwrap();
    }

    out.push_str("\n## RV dysfunction\n\n");
    match &r.rv_analysis {
        Some(rv) => {
            let rep = &rv.report;
            writeln!(out, "Model {} on the {} split, cut {:.4}.\n", rv.model, rv.split, rv.cut_value).unwrap();
            writeln!(
                out,
                "- RV patients in the high-risk group: {} of {} ({})",
                rep.rv_high,
                rep.n_rv,
                rv.rv_high_pct_text.as_deref().unwrap_or("n/a")
            )
            .unwrap();
            writeln!(
                out,
                "- deaths in the high-risk group: {} of {} ({})",
                rep.deaths_high,
                rep.n_deaths,
                rv.accuracy_text.as_deref().unwrap_or("n/a")
            )
            .unwrap();
        }
        None => out.push_str("No RV dysfunction flags in the evaluation cohort.\n"),
    }

    out.push_str("\n## Comparison with PESI\n\n| split | model | mean c-index difference | test | p |\n|---|---|---|---|---|\n");
    for c in &r.comparisons {
        let (diff, method, p) = match &c.comparison {
            Some(cmp) => match &cmp.result {
                ComparisonOutcome::Tested { test } => {
                    (format!("{:+.4}", cmp.mean_difference), test.method.clone(), format!("{:.4}", test.p_value))
                }
                ComparisonOutcome::NoDifference { .. } => (format!("{:+.4}", cmp.mean_difference), "none".into(), "n/a".into()),
            },
            None => ("n/a".into(), c.note.clone().unwrap_or_default(), "n/a".into()),
        };
        writeln!(out, "| {} | {} | {diff} | {method} | {p} |", c.split, c.model).unwrap();
    }
    out
}
