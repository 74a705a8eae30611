//! Plot-ready outputs: binary PGM images and small CSV tables.

use std::fmt::Write as _;

use spectra_core::spatial::GrayImage;
use spectra_core::Matrix;

/// Binary (P5) PGM with maxval 255. Each comment line is written as `# ...`
/// in the header.
pub fn pgm_bytes(img: &GrayImage, comments: &[String]) -> Vec<u8> {
    let mut header = String::from("P5\n");
    for c in comments {
        for line in c.lines() {
            let _ = writeln!(header, "# {line}");
        }
    }
    let _ = write!(header, "{} {}\n255\n", img.width, img.height);
    let mut out = header.into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Parses a P5 PGM produced by [`pgm_bytes`] (comments allowed).
pub fn parse_pgm(bytes: &[u8]) -> Option<GrayImage> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return None;
    }
    let width: usize = fields[1].parse().ok()?;
    let height: usize = fields[2].parse().ok()?;
    let pixels = bytes.get(pos + 1..pos + 1 + width * height)?.to_vec();
    Some(GrayImage { width, height, pixels })
}

/// `rank,eigenvalue` table with 1-based ranks.
pub fn eigenvalue_csv(eigenvalues: &[f64], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("rank,eigenvalue\n");
    for (r, l) in eigenvalues.iter().enumerate() {
        let _ = writeln!(out, "{},{}", r + 1, l);
    }
    out
}

/// Heatmap of a non-negative matrix, black at 0 and white at `saturation`
/// and above. Each entry becomes a `cell x cell` block.
pub fn heatmap(m: &Matrix, saturation: f64, cell: usize) -> GrayImage {
    let cell = cell.max(1);
    let (rows, cols) = m.shape();
    let width = cols * cell;
    let mut img = GrayImage::filled(width, rows * cell, 0);
    for r in 0..rows {
        for c in 0..cols {
            let v = if saturation > 0.0 { (m[(r, c)] / saturation).clamp(0.0, 1.0) } else { 0.0 };
            let g = (v * 255.0).round() as u8;
            for dy in 0..cell {
                let row = (r * cell + dy) * width;
                img.pixels[row + c * cell..row + (c + 1) * cell].fill(g);
            }
        }
    }
    img
}
