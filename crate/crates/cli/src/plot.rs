//! SVG scatter plots of facet embeddings and labeled PNG montages.

use std::fmt::Write as _;
use std::path::Path;

use facetviz::embedding::{Clustering, Embedding2D};
use facetviz::{imageio, Tensor};

use crate::error::{CliError, CliResult};

/// Ten-color qualitative palette; cluster `i` uses entry `i % 10`.
pub const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

const SVG_SIZE: f64 = 480.0;
const SVG_MARGIN: f64 = 24.0;

/// Renders the embedding as an SVG document: one circle per point, filled by
/// cluster, and the cluster index at each centroid.
pub fn scatter_svg(embedding: &Embedding2D, clustering: &Clustering) -> CliResult<String> {
    if embedding.len() != clustering.assignments.len() {
        return Err(CliError::runtime(format!(
            "embedding has {} points but clustering has {} assignments",
            embedding.len(),
            clustering.assignments.len()
        )));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in embedding.points.iter().chain(&clustering.centroids) {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = SVG_SIZE - 2.0 * SVG_MARGIN;
    let map = |p: &[f64; 2]| -> (f64, f64) {
        let f = |a: usize| {
            let w = hi[a] - lo[a];
            if w > 0.0 {
                SVG_MARGIN + (p[a] - lo[a]) / w * span
            } else {
                SVG_SIZE / 2.0
            }
        };
        (f(0), SVG_SIZE - f(1))
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<g class="points">"#);
    for (p, &c) in embedding.points.iter().zip(&clustering.assignments) {
        let (x, y) = map(p);
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{}"/>"#, PALETTE[c % PALETTE.len()]);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="labels" font-family="sans-serif" font-size="14" font-weight="bold">"#);
    for (c, centroid) in clustering.centroids.iter().enumerate() {
        if clustering.assignments.contains(&c) {
            let (x, y) = map(centroid);
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{y:.2}" text-anchor="middle" fill="black">{c}</text>"#);
        }
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_scatter_svg(embedding: &Embedding2D, clustering: &Clustering, out: &Path) -> CliResult<()> {
    std::fs::write(out, scatter_svg(embedding, clustering)?)?;
    Ok(())
}

/// Pixels between tiles and around the border.
pub const SEPARATOR: usize = 2;
/// Height of the label strip under each tile (8-pixel glyphs, 1 pixel padding).
pub const LABEL_HEIGHT: usize = 10;
const GLYPH: usize = 8;

/// Montage extents `(height, width)` for `n` tiles of `tile_h × tile_w`.
pub fn montage_dims(n: usize, columns: usize, tile_h: usize, tile_w: usize) -> (usize, usize) {
    let cols = columns.min(n).max(1);
    let rows = n.div_ceil(cols);
    let width = cols * tile_w + (cols + 1) * SEPARATOR;
    let height = rows * (tile_h + LABEL_HEIGHT) + (rows + 1) * SEPARATOR;
    (height, width)
}

fn draw_text(canvas: &mut Tensor<f32>, text: &str, top: usize, left: usize, max_w: usize) {
    let max_chars = max_w / GLYPH;
    for (i, ch) in text.chars().take(max_chars).enumerate() {
        let code = if ch.is_ascii() { ch as usize } else { b'?' as usize };
        let glyph = font8x8::legacy::BASIC_LEGACY[code];
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..GLYPH {
                if bits & (1 << col) != 0 {
                    for c in 0..3 {
                        canvas.set(top + row, left + i * GLYPH + col, c, 1.0);
                    }
                }
            }
        }
    }
}

/// Lays `images` (values in `[0, 1]`, all the same shape) out row-major in
/// `columns` columns, each enlarged `scale` times by pixel replication, with a
/// label strip under each tile.
pub fn montage(images: &[Tensor<f32>], labels: &[String], columns: usize, scale: usize) -> CliResult<Tensor<f32>> {
    let first = images.first().ok_or_else(|| CliError::runtime("montage needs at least one image"))?;
    if labels.len() != images.len() {
        return Err(CliError::runtime(format!("{} labels for {} images", labels.len(), images.len())));
    }
    let scale = scale.max(1);
    let (h, w) = (first.height(), first.width());
    if images.iter().any(|im| im.dims() != first.dims()) {
        return Err(CliError::runtime("montage images must share one shape"));
    }
    let (th, tw) = (h * scale, w * scale);
    let cols = columns.min(images.len()).max(1);
    let (mh, mw) = montage_dims(images.len(), columns, th, tw);
    let mut canvas = Tensor::<f32>::filled(&[mh, mw, 3], 0.5);
    for (i, (img, label)) in images.iter().zip(labels).enumerate() {
        let (r, c) = (i / cols, i % cols);
        let top = SEPARATOR + r * (th + LABEL_HEIGHT + SEPARATOR);
        let left = SEPARATOR + c * (tw + SEPARATOR);
        let ch = img.channels();
        for y in 0..th {
            for x in 0..tw {
                for k in 0..3 {
                    let v = img.at(y / scale, x / scale, if ch == 3 { k } else { 0 });
                    canvas.set(top + y, left + x, k, v.clamp(0.0, 1.0));
                }
            }
        }
        for y in top + th..top + th + LABEL_HEIGHT {
            for x in left..left + tw {
                for k in 0..3 {
                    canvas.set(y, x, k, 0.0);
                }
            }
        }
        draw_text(&mut canvas, label, top + th + 1, left, tw);
    }
    Ok(canvas)
}

pub fn emit_montage(images: &[Tensor<f32>], labels: &[String], columns: usize, scale: usize, out: &Path) -> CliResult<()> {
    let m = montage(images, labels, columns, scale)?;
    imageio::write_png(out, &m)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn embedding(points: Vec<[f64; 2]>) -> Embedding2D {
        let n = points.len();
        Embedding2D { points, source_ids: (0..n).collect() }
    }

    #[test]
    fn svg_marker_and_fill_counts() {
        let e = embedding(vec![[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]]);
        let c = Clustering { assignments: vec![0, 0, 1], centroids: vec![[0.5, 0.5], [5.0, 5.0]], inertia_history: vec![] };
        let svg = scatter_svg(&e, &c).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
        let fills: std::collections::BTreeSet<&str> =
            svg.lines().filter(|l| l.starts_with("<circle")).map(|l| l.split("fill=\"").nth(1).unwrap()).collect();
        assert_eq!(fills.len(), 2);
        assert_eq!(svg.matches("<text").count(), 2);
    }

    #[test]
    fn empty_svg_has_no_markers() {
        let e = embedding(vec![]);
        let c = Clustering { assignments: vec![], centroids: vec![], inertia_history: vec![] };
        let svg = scatter_svg(&e, &c).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 0);
    }

    #[test]
    fn mismatched_counts_rejected() {
        let e = embedding(vec![[0.0, 0.0]]);
        let c = Clustering { assignments: vec![], centroids: vec![], inertia_history: vec![] };
        assert!(scatter_svg(&e, &c).is_err());
    }

    #[test]
    fn montage_grid_arithmetic() {
        assert_eq!(montage_dims(1, 5, 32, 32), (2 + 32 + 10 + 2, 2 + 32 + 2));
        let (h, w) = montage_dims(10, 5, 32, 32);
        assert_eq!(w, 5 * 32 + 6 * 2);
        assert_eq!(h, 2 * (32 + 10) + 3 * 2);
        let imgs = vec![Tensor::<f32>::filled(&[4, 6, 3], 0.25); 10];
        let labels: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let m = montage(&imgs, &labels, 5, 3).unwrap();
        assert_eq!(m.dims(), &[2 * (12 + 10) + 3 * 2, 5 * 18 + 6 * 2, 3]);
        assert_eq!(m.at(0, 0, 0), 0.5);
        assert_eq!(m.at(2, 2, 0), 0.25);
    }

    #[test]
    fn labels_draw_white_pixels_in_the_strip() {
        let imgs = vec![Tensor::<f32>::zeros(&[8, 8, 3])];
        let m = montage(&imgs, &["AB".to_string()], 1, 2).unwrap();
        let strip_top = SEPARATOR + 16;
        let lit = (strip_top..strip_top + LABEL_HEIGHT)
            .flat_map(|y| (0..m.width()).map(move |x| (y, x)))
            .filter(|&(y, x)| m.at(y, x, 0) == 1.0)
            .count();
        assert!(lit > 10);
    }
}
