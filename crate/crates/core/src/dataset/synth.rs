//! Seeded synthetic text lines.
//!
//! Every glyph is a random connected polyline stroked onto a 32x32 cell and
//! labelled with a private-use codepoint starting at U+E000. Lines place
//! their glyphs right to left, so the first symbol of a transcription is the
//! rightmost glyph in the image.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::raster::{save_image, RasterImage};

pub const GLYPH_CELL: usize = 32;
pub const MANIFEST_NAME: &str = "MANIFEST.tsv";
pub const META_NAME: &str = "meta.txt";

const FIRST_CODEPOINT: u32 = 0xE000;
const MAX_GLYPHS: usize = 40;
const JITTER: i64 = 2;
const MAX_SPACING: usize = 4;
const MARGIN: usize = 4;
const BACKGROUND: f64 = 0.8;
const INK: f64 = 0.1;
const STROKE_RADIUS: f64 = 1.6;
/// Minimum summed mask difference between any two glyphs.
const MIN_GLYPH_DISTANCE: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub glyph_count: usize,
    pub line_count: usize,
    /// Inclusive transcription length range.
    pub line_length: (usize, usize),
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_level: f64,
    pub seed: u64,
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        if !(2..=MAX_GLYPHS).contains(&self.glyph_count) {
            return Err(Error::invalid(format!(
                "glyph_count must be in [2, {MAX_GLYPHS}], got {}",
                self.glyph_count
            )));
        }
        if self.line_count == 0 {
            return Err(Error::invalid("line_count must be at least 1"));
        }
        let (lo, hi) = self.line_length;
        if lo == 0 || lo > hi {
            return Err(Error::invalid(format!("invalid line length range ({lo}, {hi})")));
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return Err(Error::invalid(format!(
                "noise level must be non-negative, got {}",
                self.noise_level
            )));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!(
            "glyph_count={}\nline_count={}\nline_length_min={}\nline_length_max={}\n\
             noise_level={}\nseed={}\nglyph_cell={GLYPH_CELL}\n",
            self.glyph_count,
            self.line_count,
            self.line_length.0,
            self.line_length.1,
            self.noise_level,
            self.seed
        )
    }
}

pub fn glyph_codepoint(index: usize) -> char {
    char::from_u32(FIRST_CODEPOINT + index as u32).expect("private-use codepoint")
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Ink coverage in `[0, 1]` for one glyph cell.
fn random_glyph(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let lo = 5.0;
    let hi = (GLYPH_CELL - 6) as f64;
    let segments = rng.random_range(2..=4);
    let mut points = vec![(rng.random_range(lo..hi), rng.random_range(lo..hi))];
    while points.len() <= segments {
        let last = *points.last().unwrap();
        let next = (rng.random_range(lo..hi), rng.random_range(lo..hi));
        if segment_distance(next, last, last) >= 8.0 {
            points.push(next);
        }
    }
    let mut mask = vec![0.0; GLYPH_CELL * GLYPH_CELL];
    for y in 0..GLYPH_CELL {
        for x in 0..GLYPH_CELL {
            let p = (x as f64, y as f64);
            let d = points
                .windows(2)
                .map(|s| segment_distance(p, s[0], s[1]))
                .fold(f64::INFINITY, f64::min);
            mask[y * GLYPH_CELL + x] = (STROKE_RADIUS + 0.5 - d).clamp(0.0, 1.0);
        }
    }
    mask
}

fn make_glyphs(count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut glyphs: Vec<Vec<f64>> = Vec::with_capacity(count);
    while glyphs.len() < count {
        let g = random_glyph(rng);
        let distinct = glyphs.iter().all(|other| {
            other.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum::<f64>() >= MIN_GLYPH_DISTANCE
        });
        if distinct {
            glyphs.push(g);
        }
    }
    glyphs
}

/// Renders one line; `symbols` are glyph indices in reading order.
fn render_line(
    symbols: &[usize],
    glyphs: &[Vec<f64>],
    noise_level: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RasterImage> {
    let spacings: Vec<usize> = (1..symbols.len())
        .map(|_| rng.random_range(0..=MAX_SPACING))
        .collect();
    let width = 2 * MARGIN + symbols.len() * GLYPH_CELL + spacings.iter().sum::<usize>();
    let height = 2 * MARGIN + GLYPH_CELL;
    let mut coverage = vec![0.0f64; width * height];
    let mut right = width - MARGIN;
    for (i, &sym) in symbols.iter().enumerate() {
        let jx = rng.random_range(-JITTER..=JITTER);
        let jy = rng.random_range(-JITTER..=JITTER);
        let left = (right - GLYPH_CELL) as i64 + jx;
        let top = MARGIN as i64 + jy;
        let glyph = &glyphs[sym];
        for gy in 0..GLYPH_CELL {
            for gx in 0..GLYPH_CELL {
                let (x, y) = ((left + gx as i64) as usize, (top + gy as i64) as usize);
                let c = &mut coverage[y * width + x];
                *c = c.max(glyph[gy * GLYPH_CELL + gx]);
            }
        }
        if let Some(gap) = spacings.get(i) {
            right -= GLYPH_CELL + gap;
        }
    }
    let mut data: Vec<f64> = coverage
        .iter()
        .map(|c| BACKGROUND + (INK - BACKGROUND) * c)
        .collect();
    if noise_level > 0.0 {
        let normal = Normal::new(0.0, noise_level)
            .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
        for v in &mut data {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }
    RasterImage::new(width, height, 1, data)
}

/// Writes `images/line_NNNN.pgm`, `MANIFEST.tsv` and `meta.txt` under
/// `out_dir` and returns the manifest path. Output is a pure function of
/// `params`.
pub fn synth_generate(params: &SynthParams, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    params.validate()?;
    let out_dir = out_dir.as_ref();
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let glyphs = make_glyphs(params.glyph_count, &mut rng);
    let digits = params.line_count.saturating_sub(1).to_string().len().max(4);
    let mut manifest = String::new();
    for i in 0..params.line_count {
        let len = rng.random_range(params.line_length.0..=params.line_length.1);
        let symbols: Vec<usize> = (0..len)
            .map(|_| rng.random_range(0..params.glyph_count))
            .collect();
        let img = render_line(&symbols, &glyphs, params.noise_level, &mut rng)?;
        let name = format!("line_{i:0digits$}.pgm");
        save_image(images.join(&name), &img)?;
        let text: String = symbols.iter().map(|&s| glyph_codepoint(s)).collect();
        manifest.push_str(&format!("images/{name}\t{text}\n"));
    }
    let manifest_path = out_dir.join(MANIFEST_NAME);
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    let meta = out_dir.join(META_NAME);
    fs::write(&meta, params.describe()).map_err(|e| Error::io(&meta, e))?;
    Ok(manifest_path)
}
