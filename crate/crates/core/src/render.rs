//! Temporal heatmap of marginal scores as a standalone SVG document.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Session;
use crate::error::{Error, Result};
use crate::explain::{top_bottom, MarginalScore, DEFAULT_TOP_K};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub width_px: u32,
    pub height_px: u32,
    pub time_max_s: f64,
    pub low_color: [u8; 3],
    pub high_color: [u8; 3],
    pub k_callouts: usize,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        HeatmapSpec {
            width_px: 1200,
            height_px: 400,
            time_max_s: 900.0,
            low_color: [0x21, 0x66, 0xac],
            high_color: [0xe0, 0x82, 0x14],
            k_callouts: DEFAULT_TOP_K,
        }
    }
}

pub const MAX_CALLOUT_CHARS: usize = 60;
const MARGIN: f64 = 40.0;
const STRIP_HEIGHT: f64 = 40.0;
const ROW: f64 = 22.0;

/// Linear blend between the anchors at parameter `t` in [0, 1].
pub fn blend(low: [u8; 3], high: [u8; 3], t: f64) -> [u8; 3] {
    let mut out = [0u8; 3];
    for c in 0..3 {
        let (a, b) = (low[c] as f64, high[c] as f64);
        out[c] = (a + t * (b - a)).round().clamp(0.0, 255.0) as u8;
    }
    out
}

pub fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Interpolation parameter per marginal; `None` when all deltas are equal.
pub fn color_params(marginals: &[MarginalScore]) -> Option<Vec<f64>> {
    let min = marginals.iter().map(|m| m.delta_y).fold(f64::INFINITY, f64::min);
    let max = marginals.iter().map(|m| m.delta_y).fold(f64::NEG_INFINITY, f64::max);
    (max > min).then(|| {
        marginals
            .iter()
            .map(|m| (m.delta_y - min) / (max - min))
            .collect()
    })
}

/// At most `MAX_CALLOUT_CHARS` characters, the last one an ellipsis when cut.
pub fn ellipsize(text: &str) -> String {
    if text.chars().count() <= MAX_CALLOUT_CHARS {
        return text.to_string();
    }
    let mut s: String = text.chars().take(MAX_CALLOUT_CHARS - 1).collect();
    s.push('…');
    s
}

fn escape(text: &str) -> String {
    let mut s = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => s.push_str("&amp;"),
            '<' => s.push_str("&lt;"),
            '>' => s.push_str("&gt;"),
            '"' => s.push_str("&quot;"),
            '\'' => s.push_str("&apos;"),
            // characters not allowed in XML 1.0
            c if (c as u32) < 0x20 && !matches!(c, '\t' | '\n' | '\r') => s.push(' '),
            c => s.push(c),
        }
    }
    s
}

pub fn heatmap_svg(session: &Session, marginals: &[MarginalScore], spec: &HeatmapSpec) -> Result<String> {
    if marginals.is_empty() {
        return Err(Error::InvalidInput(format!(
            "session {}: no marginal scores to draw",
            session.session_id
        )));
    }
    if marginals.len() != session.utterances.len() {
        return Err(Error::DimensionMismatch {
            expected: session.utterances.len(),
            actual: marginals.len(),
        });
    }
    if spec.time_max_s <= 0.0 || spec.width_px as f64 <= 2.0 * MARGIN {
        return Err(Error::InvalidInput("heatmap canvas or time axis too small".into()));
    }
    let (w, h) = (spec.width_px as f64, spec.height_px as f64);
    let scale = (w - 2.0 * MARGIN) / spec.time_max_s;
    let x_of = |t: f64| MARGIN + t.clamp(0.0, spec.time_max_s) * scale;
    let k = spec.k_callouts;
    let band = (h - STRIP_HEIGHT - 60.0) / 2.0;
    let row = if k == 0 { ROW } else { ROW.min(band / k as f64) };
    let strip_y = 10.0 + band;
    let axis_y = strip_y + STRIP_HEIGHT + band;

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        spec.width_px, spec.height_px, spec.width_px, spec.height_px
    );
    let _ = writeln!(
        out,
        r##"<defs><marker id="arrow" viewBox="0 0 10 10" refX="10" refY="5" markerWidth="6" markerHeight="6" orient="auto-start-reverse"><path d="M 0 0 L 10 5 L 0 10 z" fill="#333333"/></marker></defs>"##
    );
    let _ = writeln!(
        out,
        r#"<title>{}</title>"#,
        escape(&format!("Marginal score heatmap, session {}", session.session_id))
    );
    let _ = writeln!(out, r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff"/>"##);

    let params = color_params(marginals);
    if params.is_none() {
        let _ = writeln!(out, "<!-- all marginal scores are equal; drawn at the midpoint color -->");
    }
    let _ = writeln!(out, r#"<g class="strip">"#);
    for (i, (m, u)) in marginals.iter().zip(&session.utterances).enumerate() {
        let t = params.as_ref().map_or(0.5, |p| p[i]);
        let color = hex(blend(spec.low_color, spec.high_color, t));
        let x0 = x_of(u.start_s);
        let width = (x_of(u.end_s) - x0).max(0.5);
        let _ = writeln!(
            out,
            r#"<rect class="utt" data-index="{}" data-t="{t:.6}" data-delta="{:.6}" x="{x0:.2}" y="{strip_y:.2}" width="{width:.2}" height="{STRIP_HEIGHT:.2}" fill="{color}"/>"#,
            m.utterance_index, m.delta_y
        );
    }
    let _ = writeln!(out, "</g>");

    // time axis
    let _ = writeln!(out, r##"<g class="axis" font-family="sans-serif" font-size="11" fill="#333333">"##);
    let _ = writeln!(
        out,
        r##"<line x1="{MARGIN:.2}" y1="{axis_y:.2}" x2="{:.2}" y2="{axis_y:.2}" stroke="#333333"/>"##,
        x_of(spec.time_max_s)
    );
    let step = if spec.time_max_s > 120.0 { 60.0 } else { 10.0 };
    let mut t = 0.0;
    while t <= spec.time_max_s + 1e-9 {
        let x = x_of(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.2}" y1="{axis_y:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            axis_y + 4.0,
            axis_y + 16.0,
            t as u64
        );
        t += step;
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">time (s)</text>"#,
        w - MARGIN,
        axis_y + 30.0
    );
    let _ = writeln!(out, "</g>");

    let tb = top_bottom(marginals, k);
    if let Some(note) = &tb.note {
        let _ = writeln!(out, "<!-- {} -->", escape(note).replace("--", "- -"));
    }
    let _ = writeln!(out, r##"<g class="callouts" font-family="sans-serif" font-size="12" fill="#111111">"##);
    for (side, list) in [("high", &tb.top), ("low", &tb.bottom)] {
        for (rank, &idx) in list.iter().enumerate() {
            let u = &session.utterances[idx];
            let cx = x_of((u.start_s + u.end_s) / 2.0);
            let (ty, ly1, ly2) = if side == "high" {
                let ty = 10.0 + row * (rank as f64 + 1.0) - 4.0;
                (ty, ty + 3.0, strip_y)
            } else {
                let ty = strip_y + STRIP_HEIGHT + row * (rank as f64 + 1.0);
                (ty, ty - 12.0, strip_y + STRIP_HEIGHT)
            };
            let anchor = if cx < w / 2.0 { "start" } else { "end" };
            let _ = writeln!(
                out,
                r##"<line class="connector" x1="{cx:.2}" y1="{ly1:.2}" x2="{cx:.2}" y2="{ly2:.2}" stroke="#333333" stroke-width="0.8" marker-end="url(#arrow)"/>"##
            );
            let _ = writeln!(
                out,
                r#"<text class="callout callout-{side}" data-index="{idx}" x="{cx:.2}" y="{ty:.2}" text-anchor="{anchor}">{}</text>"#,
                escape(&ellipsize(&u.text))
            );
        }
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(out, "</svg>");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;

    fn session(n: usize) -> Session {
        Session {
            session_id: "s1".into(),
            teacher_id: "t".into(),
            utterances: (0..n)
                .map(|i| Utterance {
                    index: i,
                    start_s: i as f64 * 8.0,
                    end_s: i as f64 * 8.0 + 6.0,
                    text: format!("utterance <{i}> & more"),
                })
                .collect(),
            labels: vec![],
        }
    }

    fn marg(deltas: &[f64]) -> Vec<MarginalScore> {
        deltas
            .iter()
            .enumerate()
            .map(|(i, d)| MarginalScore {
                utterance_index: i,
                delta_y: *d,
                contributions: vec![],
            })
            .collect()
    }

    fn fills(svg: &str) -> Vec<String> {
        let doc = roxmltree::Document::parse(svg).unwrap();
        doc.descendants()
            .filter(|n| n.attribute("class") == Some("utt"))
            .map(|n| n.attribute("fill").unwrap().to_string())
            .collect()
    }

    #[test]
    fn endpoint_and_midpoint_colors() {
        let svg = heatmap_svg(&session(3), &marg(&[-1.0, 0.0, 1.0]), &HeatmapSpec::default()).unwrap();
        let spec = HeatmapSpec::default();
        let f = fills(&svg);
        assert_eq!(f[0], "#2166ac");
        assert_eq!(f[2], "#e08214");
        assert_eq!(f[1], hex(blend(spec.low_color, spec.high_color, 0.5)));
    }

    #[test]
    fn equal_deltas_are_degenerate() {
        let svg = heatmap_svg(&session(4), &marg(&[0.3; 4]), &HeatmapSpec::default()).unwrap();
        assert!(svg.contains("<!-- all marginal scores are equal"));
        let f = fills(&svg);
        assert!(f.iter().all(|c| c == &f[0]));
    }

    #[test]
    fn eight_callouts_for_k4() {
        let deltas: Vec<f64> = (0..100).map(|i| ((i * 7919) % 101) as f64).collect();
        let svg = heatmap_svg(&session(100), &marg(&deltas), &HeatmapSpec::default()).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let callouts = doc
            .descendants()
            .filter(|n| n.attribute("class").is_some_and(|c| c.starts_with("callout ")))
            .count();
        assert_eq!(callouts, 8);
        assert_eq!(fills(&svg).len(), 100);
    }

    #[test]
    fn empty_is_error() {
        assert!(heatmap_svg(&session(0), &[], &HeatmapSpec::default()).is_err());
    }

    #[test]
    fn ellipsis_at_sixty() {
        let long = "x".repeat(80);
        let e = ellipsize(&long);
        assert_eq!(e.chars().count(), 60);
        assert!(e.ends_with('…'));
        assert_eq!(ellipsize("short"), "short");
    }
}
