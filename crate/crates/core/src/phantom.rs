//! Synthetic slides with a planted tumor rectangle.
//!
//! A tile's embedding is the linear mix `(1 - f) w_normal + f w_tumor` of the
//! two class prototypes, where `f` is the fraction of the tile inside the
//! tumor rectangle, plus optional Gaussian noise from the counter stream.
//! The correct mask is therefore known in closed form.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embio::{mock_encode, EmbeddingSet};
use crate::error::{Result, ZeusError};
use crate::prompts::{ClassPrototype, NormPolicy};
use crate::raster::{interval_overlap, BinaryRaster};
use crate::simcore::cosine;
use crate::stream::CounterStream;
use crate::tiling::{CellLayout, SlideGeometry, Tile, TileGrid};

pub const PHANTOM_MODEL_ID: &str = "phantom-linear-mix";
const MAX_PROTOTYPE_COSINE: f64 = 0.99;
const PROTOTYPE_SEED_OFFSET: u64 = 0x5052_4F54_0000_0000;

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn area(&self) -> u64 {
        (self.x1 - self.x0) as u64 * (self.y1 - self.y0) as u64
    }

    /// Overlap area with the half-open rectangle `[x0, x1) x [y0, y1)`.
    pub fn overlap(&self, x0: u64, y0: u64, x1: u64, y1: u64) -> u64 {
        interval_overlap(self.x0 as u64, self.x1 as u64, x0, x1)
            * interval_overlap(self.y0 as u64, self.y1 as u64, y0, y1)
    }

    /// A `w x h` rectangle centered on the slide.
    pub fn centered(geom: &SlideGeometry, w: u32, h: u32) -> Self {
        let x0 = geom.width_px.saturating_sub(w) / 2;
        let y0 = geom.height_px.saturating_sub(h) / 2;
        Self {
            x0,
            y0,
            x1: x0 + w.min(geom.width_px),
            y1: y0 + h.min(geom.height_px),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub geometry: SlideGeometry,
    pub tumor_rect: PixelRect,
    /// `[normal, tumor]`, class ids 0 and 1.
    pub prototypes: [ClassPrototype; 2],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let r = &self.tumor_rect;
        if !(r.x0 < r.x1 && r.y0 < r.y1 && r.x1 <= self.geometry.width_px && r.y1 <= self.geometry.height_px) {
            return Err(ZeusError::InvalidSpec(format!(
                "tumor rectangle {r:?} is empty or leaves the {}x{} slide",
                self.geometry.width_px, self.geometry.height_px
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(ZeusError::InvalidSpec(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        let [normal, tumor] = &self.prototypes;
        if normal.class_id != 0 || tumor.class_id != 1 {
            return Err(ZeusError::InvalidSpec("prototypes must be classes 0 and 1".into()));
        }
        if normal.dim() != tumor.dim() || normal.dim() == 0 {
            return Err(ZeusError::InvalidSpec("prototype dimensions differ".into()));
        }
        let c = cosine(&normal.vector, &tumor.vector).map_err(|e| ZeusError::InvalidSpec(e.to_string()))?;
        if c >= MAX_PROTOTYPE_COSINE {
            return Err(ZeusError::InvalidSpec(format!(
                "prototypes are nearly collinear (cosine {c:.6})"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].dim()
    }

    /// Fraction of a tile's area inside the tumor rectangle.
    pub fn tumor_fraction(&self, tile: &Tile, patch_size: u32) -> f64 {
        let p = patch_size as u64;
        let (x, y) = (tile.x as u64, tile.y as u64);
        self.tumor_rect.overlap(x, y, x + p, y + p) as f64 / (p * p) as f64
    }
}

/// Two mock unit prototypes for classes 0 and 1.
pub fn default_prototypes(dim: usize, seed: u64) -> Result<[ClassPrototype; 2]> {
    let make = |id: u64| -> Result<ClassPrototype> {
        let v = mock_encode(id, seed.wrapping_add(PROTOTYPE_SEED_OFFSET), dim)?;
        Ok(ClassPrototype {
            class_id: id,
            vector: v.iter().map(|&x| x as f64).collect(),
            norm_policy: NormPolicy::RawMean,
        })
    };
    Ok([make(0)?, make(1)?])
}

/// Patch embeddings for every tile of `grid`.
pub fn generate_phantom(spec: &PhantomSpec, grid: &TileGrid) -> Result<EmbeddingSet> {
    spec.validate()?;
    if grid.slide.width_px != spec.geometry.width_px || grid.slide.height_px != spec.geometry.height_px {
        return Err(ZeusError::InvalidSpec(
            "grid was planned over a different geometry".into(),
        ));
    }
    let [normal, tumor] = &spec.prototypes;
    let dim = spec.dim();
    let vectors: Vec<Vec<f32>> = grid
        .tiles
        .par_iter()
        .map(|t| {
            let f = spec.tumor_fraction(t, grid.patch_size);
            let stream = CounterStream::new(spec.seed, t.tile_id);
            let mixed: Vec<f64> = (0..dim)
                .map(|d| {
                    let noise = if spec.noise_sigma > 0.0 {
                        spec.noise_sigma * stream.normal(d as u64)
                    } else {
                        0.0
                    };
                    (1.0 - f) * normal.vector[d] + f * tumor.vector[d] + noise
                })
                .collect();
            let norm = mixed.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(ZeusError::InvalidSpec(format!(
                    "tile {} mixes to a zero vector",
                    t.tile_id
                )));
            }
            Ok(mixed.iter().map(|x| (x / norm) as f32).collect())
        })
        .collect::<Result<_>>()?;
    let mut set = EmbeddingSet::patches(PHANTOM_MODEL_ID, spec.geometry.slide_id.clone(), dim)?;
    for (t, v) in grid.tiles.iter().zip(vectors) {
        set.push(t.tile_id, &v)?;
    }
    Ok(set)
}

/// Cells with at least half their area inside the tumor rectangle.
pub fn rect_cell_mask(rect: &PixelRect, layout: &CellLayout) -> BinaryRaster {
    let mut out = BinaryRaster::filled(layout.cols, layout.rows, false);
    for row in 0..layout.rows {
        for col in 0..layout.cols {
            let (x0, y0, x1, y1) = layout.cell_rect(col, row);
            let area = (x1 - x0) * (y1 - y0);
            out.set(col, row, 2 * rect.overlap(x0, y0, x1, y1) >= area);
        }
    }
    out
}

/// Sidecar describing a phantom bundle's known answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleDescriptor {
    pub tumor_rect: [u32; 4],
    pub expected_mask_path: String,
}
