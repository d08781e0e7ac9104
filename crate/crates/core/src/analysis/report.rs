//! CSV table and SVG plots of growth series.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GrowthSeries, Optics, ReportClass};
use crate::error::{PicsError, Result};

/// One CSV row: field_id, well_id, time_hours, class, confluence,
/// dry_mass_pg, dry_mass_norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub field_id: String,
    pub well_id: String,
    pub time_hours: f64,
    pub class: ReportClass,
    pub confluence: f64,
    pub dry_mass_pg: f64,
    pub dry_mass_norm: Option<f64>,
}

pub fn read_growth_csv(path: &Path) -> Result<Vec<GrowthRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(PicsError::from)).collect()
}

#[derive(Serialize)]
struct ReportHeader<'a> {
    series: Vec<SeriesMeta<'a>>,
}

#[derive(Serialize)]
struct SeriesMeta<'a> {
    field_id: &'a str,
    well_id: Option<&'a str>,
    normalization_window_hours: f64,
    optics: Optics,
}

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

fn dash(class: ReportClass) -> &'static str {
    match class {
        ReportClass::Axon => "",
        ReportClass::DendriteSoma => "6 3",
        ReportClass::Nucleus => "2 2",
        ReportClass::Neurite => "8 3 2 3",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Trace {
    label: String,
    color: &'static str,
    dash: &'static str,
    points: Vec<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 50.0, 60.0); // left, right, top, bottom

fn span(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn plot(title: &str, subtitle: &str, xlabel: &str, ylabel: &str, traces: &[Trace], lines: bool) -> String {
    let (x0, x1) = span(traces.iter().flat_map(|t| t.points.iter().map(|p| p.0)));
    let (y0, y1) = span(traces.iter().flat_map(|t| t.points.iter().map(|p| p.1)));
    let (ml, mr, mt, mb) = MARGIN;
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (W - ml - mr);
    let sy = |y: f64| H - mb - (y - y0) / (y1 - y0) * (H - mt - mb);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>
<text x="{}" y="34" text-anchor="middle" fill="#555">{}</text>"##,
        W / 2.0,
        escape(title),
        W / 2.0,
        escape(subtitle)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>"#,
        H - mb,
        W - mr,
        H - mb,
        H - mb
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>
<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#,
            sx(xv),
            H - mb + 16.0,
            ml - 6.0,
            sy(yv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>
<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (ml + W - mr) / 2.0,
        H - 14.0,
        escape(xlabel),
        (mt + H - mb) / 2.0,
        (mt + H - mb) / 2.0,
        escape(ylabel)
    );
    for t in traces {
        let _ = writeln!(s, r#"<g><title>{}</title>"#, escape(&t.label));
        if lines && t.points.len() > 1 {
            let pts: Vec<String> = t.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" stroke-dasharray="{}" points="{}"/>"#,
                t.color,
                t.dash,
                pts.join(" ")
            );
        }
        for &(x, y) in &t.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#, sx(x), sy(y), t.color);
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn subtitle(series: &[GrowthSeries]) -> String {
    let o = series[0].optics;
    let same = series.iter().all(|s| s.optics == o);
    if same {
        format!(
            "wavelength {} um, refractive increment {} mL/g, pixel area {} um2, window {} h",
            o.wavelength_um, o.refractive_increment_ml_per_g, o.pixel_area_um2, series[0].normalization_window_hours
        )
    } else {
        "optics differ per series; see report.json".into()
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| PicsError::io(path, e))
}

/// Writes `growth.csv`, `report.json` (per-series optics and window),
/// `confluence.svg`, `dry_mass_norm.svg`, and `neurite_vs_nucleus.svg`.
/// Colors encode wells; dash patterns encode classes.
pub fn emit_report(series: &[GrowthSeries], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if series.is_empty() {
        return Err(PicsError::EmptyInput("growth series"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| PicsError::io(out_dir, e))?;
    let csv_path = out_dir.join("growth.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for s in series {
        for p in &s.points {
            w.serialize(GrowthRow {
                field_id: s.field_id.clone(),
                well_id: s.well_id.clone().unwrap_or_default(),
                time_hours: p.time_hours,
                class: p.class,
                confluence: p.confluence,
                dry_mass_pg: p.dry_mass_pg,
                dry_mass_norm: p.dry_mass_norm,
            })?;
        }
    }
    w.flush().map_err(|e| PicsError::io(&csv_path, e))?;

    let json_path = out_dir.join("report.json");
    let header = ReportHeader {
        series: series
            .iter()
            .map(|s| SeriesMeta {
                field_id: &s.field_id,
                well_id: s.well_id.as_deref(),
                normalization_window_hours: s.normalization_window_hours,
                optics: s.optics,
            })
            .collect(),
    };
    write(&json_path, &serde_json::to_string_pretty(&header)?)?;

    let wells: BTreeMap<String, &'static str> = {
        let mut ids: Vec<String> = series.iter().map(|s| s.well_id.clone().unwrap_or_default()).collect();
        ids.sort();
        ids.dedup();
        ids.into_iter().enumerate().map(|(i, w)| (w, COLORS[i % COLORS.len()])).collect()
    };
    let color = |s: &GrowthSeries| wells[&s.well_id.clone().unwrap_or_default()];
    let label = |s: &GrowthSeries, c: ReportClass| {
        format!("well {} field {} {}", s.well_id.as_deref().unwrap_or("-"), s.field_id, c.as_str())
    };
    let traces = |value: fn(&super::GrowthPoint) -> Option<f64>| -> Vec<Trace> {
        series
            .iter()
            .flat_map(|s| {
                ReportClass::ALL.into_iter().map(move |c| Trace {
                    label: label(s, c),
                    color: color(s),
                    dash: dash(c),
                    points: s.class_points(c).filter_map(|p| value(p).map(|v| (p.time_hours, v))).collect(),
                })
            })
            .collect()
    };
    let sub = subtitle(series);
    let conf_path = out_dir.join("confluence.svg");
    write(
        &conf_path,
        &plot("Confluence", &sub, "time (h)", "confluence", &traces(|p| Some(p.confluence)), true),
    )?;
    let mass_path = out_dir.join("dry_mass_norm.svg");
    write(
        &mass_path,
        &plot("Normalized dry mass", &sub, "time (h)", "dry mass / window mean", &traces(|p| p.dry_mass_norm), true),
    )?;
    let scatter: Vec<Trace> = series
        .iter()
        .map(|s| Trace {
            label: format!("well {} field {}", s.well_id.as_deref().unwrap_or("-"), s.field_id),
            color: color(s),
            dash: "",
            points: s
                .class_points(ReportClass::Nucleus)
                .zip(s.class_points(ReportClass::Neurite))
                .filter_map(|(n, r)| Some((n.dry_mass_norm?, r.dry_mass_norm?)))
                .collect(),
        })
        .collect();
    let scatter_path = out_dir.join("neurite_vs_nucleus.svg");
    write(
        &scatter_path,
        &plot(
            "Neurite vs nucleus normalized dry mass",
            &sub,
            "nucleus (normalized)",
            "neurite (normalized)",
            &scatter,
            false,
        ),
    )?;
    Ok(vec![csv_path, json_path, conf_path, mass_path, scatter_path])
}

#[cfg(test)]
mod tests {
    use super::super::GrowthPoint;
    use super::*;

    fn series(points: usize) -> GrowthSeries {
        GrowthSeries {
            field_id: "A1_f0".into(),
            well_id: Some("A1 & <b>".into()),
            points: ReportClass::ALL
                .into_iter()
                .flat_map(|class| {
                    (0..points).map(move |i| GrowthPoint {
                        time_hours: i as f64 * 1.7,
                        class,
                        confluence: 0.1 / (i as f64 + 3.0),
                        dry_mass_pg: 43.767_123 + i as f64 / 7.0,
                        dry_mass_norm: (class != ReportClass::Axon).then_some(1.0 + i as f64 / 3.0),
                    })
                })
                .collect(),
            normalization_window_hours: 5.0,
            optics: Optics {
                wavelength_um: 0.55,
                refractive_increment_ml_per_g: 0.2,
                pixel_area_um2: 0.1,
            },
        }
    }

    #[test]
    fn csv_round_trip_and_svg_parse() {
        let tmp = tempfile::tempdir().unwrap();
        let s = series(2);
        let files = emit_report(std::slice::from_ref(&s), tmp.path()).unwrap();
        let rows = read_growth_csv(&files[0]).unwrap();
        assert_eq!(rows.len(), 2 * ReportClass::ALL.len());
        for (row, p) in rows.iter().zip(&s.points) {
            assert_eq!(row.field_id, s.field_id);
            assert_eq!(Some(row.well_id.clone()), s.well_id);
            assert_eq!(row.time_hours, p.time_hours);
            assert_eq!(row.class, p.class);
            assert_eq!(row.confluence, p.confluence);
            assert_eq!(row.dry_mass_pg, p.dry_mass_pg);
            assert_eq!(row.dry_mass_norm, p.dry_mass_norm);
        }
        for svg in &files[2..] {
            let text = std::fs::read_to_string(svg).unwrap();
            let doc = roxmltree::Document::parse(&text).unwrap();
            let root = doc.root_element();
            assert_eq!(root.tag_name().name(), "svg");
            assert_eq!(root.tag_name().namespace(), Some("http://www.w3.org/2000/svg"));
            assert!(root.descendants().any(|n| n.has_tag_name("circle")));
            assert!(text.contains("wavelength 0.55 um"));
        }
        assert!(emit_report(&[], tmp.path()).is_err());
    }
}
