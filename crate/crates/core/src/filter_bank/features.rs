//! Column-frame serialization of filtered planes.
//!
//! Each frame is one image column taken right to left, the planes stacked
//! plane-major and each plane read top to bottom:
//! `frame[t][p * xheight + y] = plane_p(W' - 1 - t, y)`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use super::{apply_bank, FilterBank};
use crate::error::{Error, Result};
use crate::pyramid::GaussianPyramid;
use crate::raster::{aspect_width, FilteredPlane, RasterImage};

pub const FSEQ_MAGIC: &[u8; 5] = b"FSEQ1";

const VARIANCE_FLOOR: f64 = 1e-8;

/// How pyramid levels become sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureMode {
    /// One sequence per level.
    PerLevel,
    /// All levels resampled onto the base grid and stacked into one sequence.
    Whole,
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::PerLevel => "per_level",
            FeatureMode::Whole => "whole",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_level" => Ok(FeatureMode::PerLevel),
            "whole" => Ok(FeatureMode::Whole),
            other => Err(Error::invalid(format!(
                "unknown feature mode {other:?} (expected per_level or whole)"
            ))),
        }
    }
}

/// Where a sequence came from and how its frames fold back into a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameMeta {
    /// Source pyramid level, `None` for a whole-pyramid sequence.
    pub level: Option<usize>,
    /// Planes stacked in every frame.
    pub channels: usize,
    /// Rows per plane in every frame.
    pub frame_height: usize,
}

/// A `T x D` matrix of frames, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frame_count: usize,
    frame_dim: usize,
    frames: Vec<f64>,
    meta: FrameMeta,
}

impl FeatureSequence {
    pub fn new(
        frame_count: usize,
        frame_dim: usize,
        frames: Vec<f64>,
        meta: FrameMeta,
    ) -> Result<Self> {
        if frame_count == 0 || frame_dim == 0 {
            return Err(Error::invalid(format!(
                "feature sequences need T, D >= 1, got {frame_count}x{frame_dim}"
            )));
        }
        if frames.len() != frame_count * frame_dim {
            return Err(Error::DimensionMismatch {
                expected: frame_count * frame_dim,
                actual: frames.len(),
            });
        }
        if meta.channels * meta.frame_height != frame_dim {
            return Err(Error::invalid(format!(
                "frame layout {}x{} does not match frame dimension {frame_dim}",
                meta.channels, meta.frame_height
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature values must be finite"));
        }
        Ok(FeatureSequence {
            frame_count,
            frame_dim,
            frames,
            meta,
        })
    }

    /// A sequence of flat frames with no volume structure (one row per plane).
    pub fn from_frames(frame_count: usize, frame_dim: usize, frames: Vec<f64>) -> Result<Self> {
        let meta = FrameMeta {
            level: None,
            channels: 1,
            frame_height: frame_dim,
        };
        Self::new(frame_count, frame_dim, frames, meta)
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.frame_dim..(t + 1) * self.frame_dim]
    }

    pub fn meta(&self) -> FrameMeta {
        self.meta
    }

    pub fn with_meta(mut self, meta: FrameMeta) -> Result<Self> {
        if meta.channels * meta.frame_height != self.frame_dim {
            return Err(Error::invalid("frame layout does not match frame dimension"));
        }
        self.meta = meta;
        Ok(self)
    }

    /// The same frames in reverse order.
    pub fn reversed(&self) -> FeatureSequence {
        let frames = (0..self.frame_count)
            .rev()
            .flat_map(|t| self.frame(t).iter().copied())
            .collect();
        FeatureSequence {
            frames,
            ..self.clone()
        }
    }

    /// `FSEQ1`, little-endian u32 T and D, then T·D little-endian f64.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let t = u32::try_from(self.frame_count).map_err(|_| Error::invalid("T exceeds u32"))?;
        let d = u32::try_from(self.frame_dim).map_err(|_| Error::invalid("D exceeds u32"))?;
        let mut buf = Vec::with_capacity(13 + 8 * self.frames.len());
        buf.extend_from_slice(FSEQ_MAGIC);
        buf.extend_from_slice(&t.to_le_bytes());
        buf.extend_from_slice(&d.to_le_bytes());
        for v in &self.frames {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads an `FSEQ1` stream. The container carries no layout, so the
    /// result has flat metadata; attach real metadata with [`Self::with_meta`].
    pub fn read_from<R: Read>(r: &mut R) -> Result<FeatureSequence> {
        let malformed = |msg: &str| Error::Malformed {
            what: "feature file",
            msg: msg.into(),
        };
        let mut head = [0u8; 13];
        r.read_exact(&mut head)
            .map_err(|_| malformed("truncated header"))?;
        if &head[..5] != FSEQ_MAGIC {
            return Err(malformed("bad magic"));
        }
        let t = u32::from_le_bytes(head[5..9].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(head[9..13].try_into().unwrap()) as usize;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != t * d * 8 {
            return Err(malformed("payload length does not match T x D"));
        }
        let frames = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FeatureSequence::from_frames(t, d, frames)
    }
}

/// Resizes planes to `out_w x xheight`, serializes right to left and
/// standardizes each dimension.
fn serialize(
    plane_sets: &[Vec<FilteredPlane>],
    out_w: usize,
    xheight: usize,
    level: Option<usize>,
) -> Result<FeatureSequence> {
    let mut resized = Vec::new();
    for planes in plane_sets {
        for p in planes {
            resized.push(p.resize_bilinear(out_w, xheight)?);
        }
    }
    let channels = resized.len();
    let dim = channels * xheight;
    let mut frames = Vec::with_capacity(out_w * dim);
    for x in (0..out_w).rev() {
        for p in &resized {
            frames.extend((0..xheight).map(|y| p.get(x, y)));
        }
    }
    standardize(&mut frames, out_w, dim);
    FeatureSequence::new(
        out_w,
        dim,
        frames,
        FrameMeta {
            level,
            channels,
            frame_height: xheight,
        },
    )
}

/// Zero mean, unit variance per dimension over the time axis.
fn standardize(frames: &mut [f64], t: usize, d: usize) {
    let n = t as f64;
    let mut mean = vec![0.0; d];
    for row in frames.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for row in frames.chunks_exact(d) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let inv_std: Vec<f64> = var
        .iter()
        .map(|s| 1.0 / (s / n).max(VARIANCE_FLOOR).sqrt())
        .collect();
    for row in frames.chunks_exact_mut(d) {
        for ((v, m), k) in row.iter_mut().zip(&mean).zip(&inv_std) {
            *v = (*v - m) * k;
        }
    }
}

fn check_xheight(xheight: usize) -> Result<()> {
    if xheight == 0 {
        return Err(Error::invalid("x-height must be at least 1"));
    }
    Ok(())
}

/// Filters one level and serializes it at `xheight` rows per plane.
pub fn featurize_level(
    level: &RasterImage,
    bank: &FilterBank,
    xheight: usize,
) -> Result<FeatureSequence> {
    check_xheight(xheight)?;
    let planes = apply_bank(level, bank)?;
    let out_w = aspect_width(level.width(), level.height(), xheight);
    serialize(&[planes], out_w, xheight, Some(0))
}

pub fn featurize_pyramid(
    pyr: &GaussianPyramid,
    bank: &FilterBank,
    xheight: usize,
    mode: FeatureMode,
) -> Result<Vec<FeatureSequence>> {
    check_xheight(xheight)?;
    if pyr.level_count() == 0 {
        return Err(Error::invalid("empty pyramid"));
    }
    match mode {
        FeatureMode::PerLevel => pyr
            .levels()
            .iter()
            .enumerate()
            .map(|(k, level)| {
                let planes = apply_bank(level, bank)?;
                let out_w = aspect_width(level.width(), level.height(), xheight);
                serialize(&[planes], out_w, xheight, Some(k))
            })
            .collect(),
        FeatureMode::Whole => {
            let base = pyr.base();
            let out_w = aspect_width(base.width(), base.height(), xheight);
            let plane_sets = pyr
                .levels()
                .iter()
                .map(|level| apply_bank(level, bank))
                .collect::<Result<Vec<_>>>()?;
            // A single level fuses to exactly its per-level sequence.
            let tag = (pyr.level_count() == 1).then_some(0);
            Ok(vec![serialize(&plane_sets, out_w, xheight, tag)?])
        }
    }
}
