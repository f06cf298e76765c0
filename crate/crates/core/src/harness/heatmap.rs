//! Attention heatmaps: rows are queries (target subwords for decoder-side
//! kinds), columns are keys, darker cells carry more weight.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{AttentionKind, AttentionRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// One map per (layer, head).
    PerHead,
    /// Mean over the heads of the last layer.
    LastLayerMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Svg,
    Pgm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Svg => "svg",
            ImageFormat::Pgm => "pgm",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub title: String,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

fn labels(names: &[String], n: usize) -> Vec<String> {
    (0..n)
        .map(|i| names.get(i).cloned().unwrap_or_else(|| "</s>".to_string()))
        .collect()
}

/// Builds the maps of one attention kind. `source` and `target` label the
/// encoder and decoder positions.
pub fn heatmaps(
    records: &[AttentionRecord],
    kind: AttentionKind,
    selection: Selection,
    source: &[String],
    target: &[String],
) -> Vec<Heatmap> {
    let chosen: Vec<&AttentionRecord> = records.iter().filter(|r| r.kind == kind).collect();
    let (row_names, col_names) = match kind {
        AttentionKind::EncoderSelf => (source, source),
        AttentionKind::DecoderSelf => (target, target),
        AttentionKind::Cross => (target, source),
    };
    let make = |title: String, weights: Vec<Vec<f64>>| Heatmap {
        title,
        rows: labels(row_names, weights.len()),
        cols: labels(col_names, weights.first().map_or(0, Vec::len)),
        weights,
    };
    match selection {
        Selection::PerHead => chosen
            .iter()
            .map(|r| make(format!("{} layer {} head {}", kind.as_str(), r.layer, r.head), r.weights.clone()))
            .collect(),
        Selection::LastLayerMean => {
            let Some(last) = chosen.iter().map(|r| r.layer).max() else {
                return Vec::new();
            };
            let heads: Vec<&&AttentionRecord> = chosen.iter().filter(|r| r.layer == last).collect();
            let mut mean = heads[0].weights.clone();
            for h in &heads[1..] {
                for (row, other) in mean.iter_mut().zip(&h.weights) {
                    for (x, y) in row.iter_mut().zip(other) {
                        *x += y;
                    }
                }
            }
            let n = heads.len() as f64;
            mean.iter_mut().flatten().for_each(|x| *x /= n);
            vec![make(format!("{} layer {last} mean over heads", kind.as_str()), mean)]
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const CELL: usize = 24;
const MARGIN: usize = 90;

pub fn render_svg(h: &Heatmap) -> String {
    let width = MARGIN + CELL * h.cols.len() + 10;
    let height = MARGIN + CELL * h.rows.len() + 10;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="10">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(&h.title));
    for (j, c) in h.cols.iter().enumerate() {
        let x = MARGIN + j * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" transform="rotate(-60 {x} {})">{}</text>"#,
            MARGIN - 4,
            MARGIN - 4,
            escape(c)
        );
    }
    for (i, (r, row)) in h.rows.iter().zip(&h.weights).enumerate() {
        let y = MARGIN + i * CELL;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, MARGIN - 4, y + CELL / 2 + 3, escape(r));
        for (j, w) in row.iter().enumerate() {
            let level = shade(*w);
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({level},{level},{level})"><title>{w:.4}</title></rect>"#,
                MARGIN + j * CELL
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Gray level for a weight: 255 at 0, 0 at 1.
fn shade(w: f64) -> u8 {
    (255.0 * (1.0 - w.clamp(0.0, 1.0))).round() as u8
}

/// Binary PGM with `scale`-pixel square cells and no labels.
pub fn render_pgm(h: &Heatmap, scale: usize) -> Vec<u8> {
    let (rows, cols) = (h.rows.len(), h.cols.len());
    let mut out = format!("P5\n{} {}\n255\n", cols * scale, rows * scale).into_bytes();
    for row in &h.weights {
        for _ in 0..scale {
            for &w in row {
                out.extend(std::iter::repeat_n(shade(w), scale));
            }
        }
    }
    out
}

/// Writes each map next to `stem` as `<stem>-<kind>[-l<layer>-h<head>].<ext>`.
#[allow(clippy::too_many_arguments)]
pub fn export_attention(
    records: &[AttentionRecord],
    source: &[String],
    target: &[String],
    kind: AttentionKind,
    selection: Selection,
    format: ImageFormat,
    stem: &Path,
) -> Result<Vec<PathBuf>> {
    let maps = heatmaps(records, kind, selection, source, target);
    let chosen: Vec<&AttentionRecord> = records.iter().filter(|r| r.kind == kind).collect();
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut written = Vec::new();
    for (i, map) in maps.iter().enumerate() {
        let suffix = match selection {
            Selection::PerHead => format!("-l{}-h{}", chosen[i].layer, chosen[i].head),
            Selection::LastLayerMean => String::new(),
        };
        let mut name = stem.as_os_str().to_owned();
        name.push(format!("-{}{suffix}.{}", kind.as_str(), format.extension()));
        let path = PathBuf::from(name);
        let bytes = match format {
            ImageFormat::Svg => render_svg(map).into_bytes(),
            ImageFormat::Pgm => render_pgm(map, 8),
        };
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(layer: usize, head: usize, w: f64) -> AttentionRecord {
        AttentionRecord {
            layer,
            head,
            kind: AttentionKind::Cross,
            weights: vec![vec![w, 1.0 - w], vec![0.5, 0.5]],
        }
    }

    #[test]
    fn last_layer_mean_averages_heads() {
        let recs = [record(0, 0, 1.0), record(1, 0, 1.0), record(1, 1, 0.0)];
        let src = vec!["a".to_string(), "b</w>".to_string()];
        let tgt = vec!["x</w>".to_string()];
        let maps = heatmaps(&recs, AttentionKind::Cross, Selection::LastLayerMean, &src, &tgt);
        assert_eq!(maps.len(), 1);
        assert_eq!(maps[0].weights[0], [0.5, 0.5]);
        assert_eq!(maps[0].rows, ["x</w>", "</s>"]);
        assert_eq!(heatmaps(&recs, AttentionKind::Cross, Selection::PerHead, &src, &tgt).len(), 3);
    }

    #[test]
    fn renders_labels_and_cells() {
        let src = vec!["a".to_string(), "b</w>".to_string()];
        let tgt = vec!["x</w>".to_string(), "y".to_string()];
        let map = &heatmaps(&[record(0, 0, 1.0)], AttentionKind::Cross, Selection::PerHead, &src, &tgt)[0];
        let svg = render_svg(map);
        assert!(svg.contains("b&lt;/w&gt;"));
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.contains("rgb(0,0,0)"));
        let pgm = render_pgm(map, 2);
        assert!(pgm.starts_with(b"P5\n4 4\n255\n"));
        assert_eq!(pgm.len(), b"P5\n4 4\n255\n".len() + 16);
    }
}
