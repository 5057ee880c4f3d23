//! Tissue detection on slide thumbnails and the overlapping tile lattice.

use std::collections::VecDeque;
use std::io::{Read, Write};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, ZeusError};
use crate::raster::BinaryRaster;

pub const GRID_SCHEMA: &str = "zeus-grid/1";
pub const DEFAULT_PATCH_SIZE: u32 = 448;
pub const DEFAULT_OVERLAP: f64 = 0.75;
pub const DEFAULT_MIN_TISSUE_FRAC: f64 = 0.25;

/// Slide dimensions at the working magnification.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideGeometry {
    pub slide_id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub magnification: f64,
    pub mpp: Option<f64>,
}

impl SlideGeometry {
    pub fn new(slide_id: impl Into<String>, width_px: u32, height_px: u32) -> Result<Self> {
        let geom = Self {
            slide_id: slide_id.into(),
            width_px,
            height_px,
            magnification: 10.0,
            mpp: None,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn with_magnification(mut self, magnification: f64) -> Result<Self> {
        self.magnification = magnification;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(invalid("slide dimensions must be at least 1x1"));
        }
        if !(self.magnification.is_finite() && self.magnification > 0.0) {
            return Err(invalid(format!(
                "magnification must be positive, got {}",
                self.magnification
            )));
        }
        if let Some(mpp) = self.mpp {
            if !(mpp.is_finite() && mpp > 0.0) {
                return Err(invalid(format!("mpp must be positive, got {mpp}")));
            }
        }
        Ok(())
    }
}

/// Binary tissue raster at thumbnail resolution; one mask pixel stands for a
/// `downsample x downsample` block of slide pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    pub downsample: u32,
    pub raster: BinaryRaster,
}

impl TissueMask {
    pub fn new(raster: BinaryRaster, downsample: u32) -> Result<Self> {
        if downsample == 0 {
            return Err(invalid("tissue mask downsample must be >= 1"));
        }
        Ok(Self { downsample, raster })
    }

    pub fn width(&self) -> usize {
        self.raster.width
    }

    pub fn height(&self) -> usize {
        self.raster.height
    }

    /// Checks that the mask covers the slide up to one mask pixel of rounding.
    pub fn check_covers(&self, geom: &SlideGeometry) -> Result<()> {
        let ds = self.downsample as u64;
        let w = self.raster.width as u64 * ds;
        let h = self.raster.height as u64 * ds;
        if w + ds < geom.width_px as u64 || h + ds < geom.height_px as u64 {
            return Err(invalid(format!(
                "tissue mask {}x{} at downsample {} does not cover slide {}x{}",
                self.raster.width, self.raster.height, ds, geom.width_px, geom.height_px
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SatThreshold {
    /// Otsu's method on the median-filtered saturation histogram.
    Auto,
    Fixed(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TissueParams {
    pub median_radius: u32,
    pub sat_threshold: SatThreshold,
    pub min_region_px: usize,
}

impl Default for TissueParams {
    fn default() -> Self {
        Self {
            median_radius: 3,
            sat_threshold: SatThreshold::Auto,
            min_region_px: 64,
        }
    }
}

/// HSV saturation scaled to `0..=255`.
#[inline]
fn saturation(px: [u8; 3]) -> u8 {
    let max = px.iter().copied().max().unwrap_or(0) as u32;
    let min = px.iter().copied().min().unwrap_or(0) as u32;
    if max == 0 {
        0
    } else {
        (((max - min) * 255 + max / 2) / max) as u8
    }
}

/// Square median filter with edge replication, using a sliding histogram.
fn median_filter(src: &[u8], width: usize, height: usize, radius: usize) -> Vec<u8> {
    if radius == 0 {
        return src.to_vec();
    }
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let window = (2 * radius + 1) * (2 * radius + 1);
    let rank = window / 2;
    let r = radius as isize;
    let mut out = vec![0u8; src.len()];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let rows: Vec<usize> = (-r..=r).map(|dy| clamp(y as isize + dy, height)).collect();
        let mut hist = [0u32; 256];
        for dx in -r..=r {
            let x = clamp(dx, width);
            for &yy in &rows {
                hist[src[yy * width + x] as usize] += 1;
            }
        }
        for (x, out_px) in row.iter_mut().enumerate() {
            if x > 0 {
                let leaving = clamp(x as isize - 1 - r, width);
                let entering = clamp(x as isize + r, width);
                for &yy in &rows {
                    hist[src[yy * width + leaving] as usize] -= 1;
                    hist[src[yy * width + entering] as usize] += 1;
                }
            }
            let mut acc = 0usize;
            for (level, &count) in hist.iter().enumerate() {
                acc += count as usize;
                if acc > rank {
                    *out_px = level as u8;
                    break;
                }
            }
        }
    });
    out
}

/// Otsu threshold: the largest level of the background class. A histogram
/// with a single occupied level yields 0.
pub fn otsu_threshold(values: &[u8]) -> u8 {
    let mut hist = [0u64; 256];
    for &v in values {
        hist[v as usize] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let (mut best_t, mut best_var) = (0u8, 0.0f64);
    for t in 0..255usize {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    best_t
}

/// Removes 8-connected positive regions smaller than `min_px`.
fn remove_small_regions(raster: &mut BinaryRaster, min_px: usize) {
    if min_px <= 1 {
        return;
    }
    let (w, h) = (raster.width, raster.height);
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    let mut region = Vec::new();
    for start in 0..w * h {
        if !raster.bits[start] || seen[start] {
            continue;
        }
        region.clear();
        seen[start] = true;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            region.push(idx);
            let (x, y) = ((idx % w) as isize, (idx / w) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if raster.bits[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        if region.len() < min_px {
            for &idx in &region {
                raster.bits[idx] = false;
            }
        }
    }
}

/// Saturation-threshold tissue detector for slide thumbnails.
///
/// Pixels whose median-filtered saturation is strictly above the threshold
/// are tissue; small connected regions are dropped afterwards.
pub fn detect_tissue(thumbnail: &RgbImage, downsample: u32, params: &TissueParams) -> Result<TissueMask> {
    let (w, h) = (thumbnail.width() as usize, thumbnail.height() as usize);
    if w == 0 || h == 0 {
        return Err(invalid("empty thumbnail"));
    }
    let sat: Vec<u8> = thumbnail.pixels().map(|p| saturation(p.0)).collect();
    let filtered = median_filter(&sat, w, h, params.median_radius as usize);
    let threshold = match params.sat_threshold {
        SatThreshold::Auto => otsu_threshold(&filtered),
        SatThreshold::Fixed(t) => t,
    };
    let bits = filtered.iter().map(|&s| s > threshold).collect();
    let mut raster = BinaryRaster::new(w, h, bits)?;
    remove_small_regions(&mut raster, params.min_region_px);
    TissueMask::new(raster, downsample)
}

/// One planned patch; `(x, y)` is its top-left corner in slide pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub tile_id: u64,
    pub x: u32,
    pub y: u32,
}

/// Stride-cell raster layout covering the whole slide.
///
/// Cell `(q, r)` spans slide pixels `[q*stride, (q+1)*stride)` horizontally
/// (clipped to the slide) and likewise vertically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellLayout {
    pub width_px: u32,
    pub height_px: u32,
    pub stride: u32,
    pub patch_size: u32,
    pub cols: usize,
    pub rows: usize,
}

impl CellLayout {
    pub fn new(width_px: u32, height_px: u32, stride: u32, patch_size: u32) -> Result<Self> {
        if width_px == 0 || height_px == 0 || stride == 0 || patch_size == 0 {
            return Err(invalid("cell layout dimensions must be positive"));
        }
        Ok(Self {
            width_px,
            height_px,
            stride,
            patch_size,
            cols: width_px.div_ceil(stride) as usize,
            rows: height_px.div_ceil(stride) as usize,
        })
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Slide-pixel rectangle `(x0, y0, x1, y1)` of a cell, clipped to the slide.
    pub fn cell_rect(&self, col: usize, row: usize) -> (u64, u64, u64, u64) {
        let s = self.stride as u64;
        let x0 = col as u64 * s;
        let y0 = row as u64 * s;
        (
            x0,
            y0,
            (x0 + s).min(self.width_px as u64),
            (y0 + s).min(self.height_px as u64),
        )
    }
}

/// The planned overlapping patch lattice of one slide.
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub slide: SlideGeometry,
    pub patch_size: u32,
    pub stride: u32,
    /// Kept tiles, row-major by `(y, x)`, ids dense from 0.
    pub tiles: Vec<Tile>,
    /// Number of candidate origins per row of the full lattice.
    pub grid_cols: usize,
    /// Number of candidate origin rows of the full lattice.
    pub grid_rows: usize,
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn cell_layout(&self) -> CellLayout {
        CellLayout::new(self.slide.width_px, self.slide.height_px, self.stride, self.patch_size)
            .expect("validated grid has positive dimensions")
    }

    /// Checks every structural invariant of the lattice.
    pub fn validate(&self) -> Result<()> {
        self.slide.validate()?;
        let (p, s) = (self.patch_size, self.stride);
        if p == 0 || s == 0 || s > p {
            return Err(ZeusError::InvalidGrid(format!(
                "need 1 <= stride <= patch_size, got stride {s}, patch {p}"
            )));
        }
        if p > self.slide.width_px || p > self.slide.height_px {
            return Err(ZeusError::InvalidGrid(format!(
                "patch {p} larger than slide {}x{}",
                self.slide.width_px, self.slide.height_px
            )));
        }
        let mut prev: Option<(u32, u32)> = None;
        for (i, t) in self.tiles.iter().enumerate() {
            if t.tile_id != i as u64 {
                return Err(ZeusError::InvalidGrid(format!(
                    "tile ids must be dense: position {i} has id {}",
                    t.tile_id
                )));
            }
            if t.x % s != 0 || t.y % s != 0 {
                return Err(ZeusError::InvalidGrid(format!(
                    "tile {} origin ({}, {}) is not a multiple of stride {s}",
                    t.tile_id, t.x, t.y
                )));
            }
            if t.x as u64 + p as u64 > self.slide.width_px as u64 || t.y as u64 + p as u64 > self.slide.height_px as u64
            {
                return Err(ZeusError::InvalidGrid(format!(
                    "tile {} at ({}, {}) extends past the slide",
                    t.tile_id, t.x, t.y
                )));
            }
            if let Some(prev) = prev {
                if (t.y, t.x) <= prev {
                    return Err(ZeusError::InvalidGrid(format!(
                        "tile {} breaks row-major order",
                        t.tile_id
                    )));
                }
            }
            prev = Some((t.y, t.x));
        }
        Ok(())
    }
}

/// Stride for a fractional overlap, rounded half up and clamped to at least 1.
pub fn stride_for_overlap(patch_size: u32, overlap_frac: f64) -> Result<u32> {
    if !(overlap_frac.is_finite() && (0.0..1.0).contains(&overlap_frac)) {
        return Err(invalid(format!("overlap must lie in [0, 1), got {overlap_frac}")));
    }
    let raw = patch_size as f64 * (1.0 - overlap_frac);
    Ok(((raw + 0.5).floor() as u32).max(1))
}

/// Plans the lattice from a fractional overlap.
pub fn plan_tiles(
    geom: &SlideGeometry,
    patch_size: u32,
    overlap_frac: f64,
    tissue: Option<&TissueMask>,
    min_tissue_frac: f64,
) -> Result<TileGrid> {
    let stride = stride_for_overlap(patch_size, overlap_frac)?;
    plan_tiles_with_stride(geom, patch_size, stride, tissue, min_tissue_frac)
}

/// Plans the lattice from an explicit stride.
///
/// Only full patches are emitted. With a tissue mask, a candidate is kept when
/// the tissue area under it (mask upsampled by its downsample factor) is at
/// least `min_tissue_frac` of the patch area.
pub fn plan_tiles_with_stride(
    geom: &SlideGeometry,
    patch_size: u32,
    stride: u32,
    tissue: Option<&TissueMask>,
    min_tissue_frac: f64,
) -> Result<TileGrid> {
    geom.validate()?;
    if patch_size == 0 {
        return Err(invalid("patch size must be >= 1"));
    }
    if patch_size > geom.width_px.min(geom.height_px) {
        return Err(invalid(format!(
            "patch size {patch_size} larger than slide {}x{}",
            geom.width_px, geom.height_px
        )));
    }
    if stride == 0 || stride > patch_size {
        return Err(invalid(format!("stride must lie in [1, {patch_size}], got {stride}")));
    }
    if !(min_tissue_frac.is_finite() && (0.0..=1.0).contains(&min_tissue_frac)) {
        return Err(invalid(format!(
            "min tissue fraction must lie in [0, 1], got {min_tissue_frac}"
        )));
    }
    if let Some(mask) = tissue {
        mask.check_covers(geom)?;
    }
    let grid_cols = ((geom.width_px - patch_size) / stride) as usize + 1;
    let grid_rows = ((geom.height_px - patch_size) / stride) as usize + 1;
    let patch_area = patch_size as f64 * patch_size as f64;
    let p = patch_size as u64;

    let kept: Vec<(u32, u32)> = (0..grid_rows)
        .into_par_iter()
        .flat_map_iter(|row| {
            let y = row as u32 * stride;
            (0..grid_cols).filter_map(move |col| {
                let x = col as u32 * stride;
                let keep = match tissue {
                    None => true,
                    Some(mask) => {
                        let area = mask.raster.positive_area(
                            mask.downsample as u64,
                            x as u64,
                            y as u64,
                            x as u64 + p,
                            y as u64 + p,
                        );
                        area as f64 / patch_area >= min_tissue_frac
                    }
                };
                keep.then_some((x, y))
            })
        })
        .collect();

    let tiles = kept
        .into_iter()
        .enumerate()
        .map(|(i, (x, y))| Tile {
            tile_id: i as u64,
            x,
            y,
        })
        .collect();
    Ok(TileGrid {
        slide: geom.clone(),
        patch_size,
        stride,
        tiles,
        grid_cols,
        grid_rows,
    })
}

#[derive(Serialize, Deserialize)]
struct SlideDoc {
    id: String,
    width_px: u32,
    height_px: u32,
    magnification: f64,
}

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    schema: String,
    slide: SlideDoc,
    patch_size: u32,
    stride: u32,
    tiles: Vec<[u64; 3]>,
}

/// Writes the `zeus-grid/1` JSON manifest.
pub fn write_manifest<W: Write>(grid: &TileGrid, mut out: W) -> Result<()> {
    let doc = ManifestDoc {
        schema: GRID_SCHEMA.to_string(),
        slide: SlideDoc {
            id: grid.slide.slide_id.clone(),
            width_px: grid.slide.width_px,
            height_px: grid.slide.height_px,
            magnification: grid.slide.magnification,
        },
        patch_size: grid.patch_size,
        stride: grid.stride,
        tiles: grid.tiles.iter().map(|t| [t.tile_id, t.x as u64, t.y as u64]).collect(),
    };
    serde_json::to_writer(&mut out, &doc)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Reads and validates a `zeus-grid/1` manifest.
pub fn read_manifest<R: Read>(input: R) -> Result<TileGrid> {
    let doc: ManifestDoc = serde_json::from_reader(input)?;
    if doc.schema != GRID_SCHEMA {
        return Err(ZeusError::Format(format!(
            "expected schema {GRID_SCHEMA}, found {}",
            doc.schema
        )));
    }
    let slide = SlideGeometry {
        slide_id: doc.slide.id,
        width_px: doc.slide.width_px,
        height_px: doc.slide.height_px,
        magnification: doc.slide.magnification,
        mpp: None,
    };
    slide.validate()?;
    if doc.stride == 0 || doc.patch_size == 0 || doc.patch_size > slide.width_px.min(slide.height_px) {
        return Err(ZeusError::InvalidGrid("bad patch size or stride".into()));
    }
    let mut tiles = Vec::with_capacity(doc.tiles.len());
    for [id, x, y] in doc.tiles {
        let (x, y) = match (u32::try_from(x), u32::try_from(y)) {
            (Ok(x), Ok(y)) => (x, y),
            _ => return Err(ZeusError::InvalidGrid(format!("tile {id} origin out of range"))),
        };
        tiles.push(Tile { tile_id: id, x, y });
    }
    let grid = TileGrid {
        grid_cols: ((slide.width_px - doc.patch_size) / doc.stride) as usize + 1,
        grid_rows: ((slide.height_px - doc.patch_size) / doc.stride) as usize + 1,
        slide,
        patch_size: doc.patch_size,
        stride: doc.stride,
        tiles,
    };
    grid.validate()?;
    Ok(grid)
}
