//! Cosine scores, overlap-averaged class grids and argmax masks.
//!
//! Grids live at stride-cell resolution. With every tile origin on the stride
//! lattice and the patch size a multiple of the stride, the per-pixel overlap
//! average is constant over each stride cell, so nothing is lost. When the
//! stride does not divide the patch size the cell value is the per-pixel
//! average at the cell's origin pixel.
//!
//! All sums run in `f64` in ascending tile-id order. Parallel evaluation is
//! per cell or per tile, never across a sum, so results do not depend on
//! the thread count.

use rayon::prelude::*;

use crate::embio::EmbeddingSet;
use crate::error::{invalid, Result, ZeusError};
use crate::prompts::ClassPrototype;
use crate::tiling::{CellLayout, TileGrid};

/// Value stored in cells no tile covers.
pub const UNCOVERED: f64 = -2.0;
/// Label stored in cells no tile covers.
pub const NO_LABEL: u8 = 255;
const MIN_NORM: f64 = 1e-12;

pub trait Component: Copy + Send + Sync {
    fn to_f64(self) -> f64;
}

impl Component for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Component for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

#[inline]
fn sum_squares<A: Component>(v: &[A]) -> f64 {
    v.iter().map(|&x| x.to_f64() * x.to_f64()).fold(0.0, |acc, x| acc + x)
}

#[inline]
fn dot<A: Component, B: Component>(v: &[A], w: &[B]) -> f64 {
    v.iter()
        .zip(w)
        .map(|(&a, &b)| a.to_f64() * b.to_f64())
        .fold(0.0, |acc, x| acc + x)
}

/// Shared tail of every cosine evaluation, so batch scoring is bit-identical
/// to the scalar function.
#[inline]
fn cosine_from_parts(dot: f64, vv: f64, ww: f64) -> Result<f64> {
    let (nv, nw) = (vv.sqrt(), ww.sqrt());
    if !(nv >= MIN_NORM) {
        return Err(ZeusError::DegenerateVector(nv));
    }
    if !(nw >= MIN_NORM) {
        return Err(ZeusError::DegenerateVector(nw));
    }
    // sqrt(vv * ww) keeps cosine(v, v) == 1 exactly.
    let prod = vv * ww;
    let denom = if prod.is_finite() && prod >= f64::MIN_POSITIVE {
        prod.sqrt()
    } else {
        nv * nw
    };
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Cosine similarity with 64-bit accumulation, clamped to `[-1, 1]`.
pub fn cosine<A: Component, B: Component>(v: &[A], w: &[B]) -> Result<f64> {
    if v.len() != w.len() {
        return Err(ZeusError::DimMismatch {
            expected: v.len(),
            found: w.len(),
        });
    }
    cosine_from_parts(dot(v, w), sum_squares(v), sum_squares(w))
}

/// Tile-by-class cosine scores, rows in ascending tile id.
#[derive(Debug, Clone, PartialEq)]
pub struct TileScores {
    pub tile_ids: Vec<u64>,
    pub num_classes: usize,
    /// Row-major `num_tiles x num_classes`.
    pub scores: Vec<f64>,
}

impl TileScores {
    pub fn new(tile_ids: Vec<u64>, num_classes: usize, scores: Vec<f64>) -> Result<Self> {
        if num_classes == 0 || scores.len() != tile_ids.len() * num_classes {
            return Err(invalid(format!(
                "score matrix of {} values does not fit {} tiles x {num_classes} classes",
                scores.len(),
                tile_ids.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !(s.abs() <= 1.0 + 1e-9)) {
            return Err(invalid(format!("score {bad} outside [-1, 1]")));
        }
        Ok(Self {
            tile_ids,
            num_classes,
            scores,
        })
    }

    pub fn num_tiles(&self) -> usize {
        self.tile_ids.len()
    }

    #[inline]
    pub fn get(&self, tile: usize, class: usize) -> f64 {
        self.scores[tile * self.num_classes + class]
    }

    pub fn row(&self, tile: usize) -> &[f64] {
        &self.scores[tile * self.num_classes..(tile + 1) * self.num_classes]
    }
}

fn check_prototypes(protos: &[ClassPrototype], dim: usize) -> Result<()> {
    if protos.is_empty() {
        return Err(invalid("no class prototypes"));
    }
    for (i, p) in protos.iter().enumerate() {
        if p.class_id != i as u64 {
            return Err(invalid(format!(
                "prototypes must be sorted and dense from 0; position {i} has class {}",
                p.class_id
            )));
        }
        if p.dim() != dim {
            return Err(ZeusError::DimMismatch {
                expected: dim,
                found: p.dim(),
            });
        }
    }
    Ok(())
}

/// Scores every patch embedding against every prototype.
pub fn score_tiles(embs: &EmbeddingSet, protos: &[ClassPrototype]) -> Result<TileScores> {
    check_prototypes(protos, embs.dim())?;
    let proto_sq: Vec<f64> = protos.iter().map(|p| sum_squares(&p.vector)).collect();
    let c = protos.len();
    let mut scores = vec![0.0f64; embs.len() * c];
    scores
        .par_chunks_mut(c)
        .enumerate()
        .try_for_each(|(j, row)| -> Result<()> {
            let v = embs.vector(j);
            let vv = sum_squares(v);
            for ((out, p), &ww) in row.iter_mut().zip(protos).zip(&proto_sq) {
                *out = cosine_from_parts(dot(v, &p.vector), vv, ww)?;
            }
            Ok(())
        })?;
    TileScores::new(embs.ids().to_vec(), c, scores)
}

/// Per-class overlap-averaged score rasters at stride-cell resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGrid {
    pub layout: CellLayout,
    pub class_ids: Vec<u64>,
    /// One row-major raster per class; uncovered cells hold [`UNCOVERED`].
    pub per_class: Vec<Vec<f64>>,
    /// Number of tiles covering each cell.
    pub coverage: Vec<u32>,
}

impl SimilarityGrid {
    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    #[inline]
    pub fn value(&self, class: usize, col: usize, row: usize) -> f64 {
        self.per_class[class][row * self.layout.cols + col]
    }

    #[inline]
    pub fn coverage_at(&self, col: usize, row: usize) -> u32 {
        self.coverage[row * self.layout.cols + col]
    }

    /// Applies `f` to every covered value of every class.
    pub fn map_covered(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for raster in &mut out.per_class {
            for (v, &cov) in raster.iter_mut().zip(&self.coverage) {
                if cov > 0 {
                    *v = f(*v);
                }
            }
        }
        out
    }
}

/// Averages tile scores over the cells each tile covers.
///
/// Cell `(q, r)` is covered by tile `(x, y)` when `x <= q*stride < x + patch`
/// and `y <= r*stride < y + patch`.
pub fn accumulate_grid(grid: &TileGrid, scores: &TileScores) -> Result<SimilarityGrid> {
    grid.validate()?;
    if scores.num_tiles() != grid.len() || !scores.tile_ids.iter().zip(&grid.tiles).all(|(&id, t)| id == t.tile_id) {
        return Err(invalid(format!(
            "{} score rows do not match the grid's {} tiles",
            scores.num_tiles(),
            grid.len()
        )));
    }
    let layout = grid.cell_layout();
    let s = grid.stride as usize;
    let c = scores.num_classes;
    let (lat_cols, lat_rows) = (grid.grid_cols, grid.grid_rows);

    // lattice position -> tile index
    let mut lattice = vec![u32::MAX; lat_cols * lat_rows];
    for (j, t) in grid.tiles.iter().enumerate() {
        let (a, b) = (t.x as usize / s, t.y as usize / s);
        lattice[b * lat_cols + a] = j as u32;
    }
    // lattice steps back from a cell that still reach it
    let reach = (grid.patch_size as usize - 1) / s;
    let span = |cell: usize, lat_len: usize| -> (usize, usize) {
        let lo = cell.saturating_sub(reach);
        let hi = cell.min(lat_len - 1);
        (lo, hi)
    };

    let cols = layout.cols;
    let mut interleaved = vec![0.0f64; layout.len() * c];
    let mut coverage = vec![0u32; layout.len()];
    interleaved
        .par_chunks_mut(cols * c)
        .zip(coverage.par_chunks_mut(cols))
        .enumerate()
        .for_each(|(r, (values, cov_row))| {
            let (b_lo, b_hi) = span(r, lat_rows);
            let mut sums = vec![0.0f64; c];
            for q in 0..cols {
                sums.iter_mut().for_each(|x| *x = 0.0);
                let mut count = 0u32;
                if r < lat_rows + reach && q < lat_cols + reach {
                    let (a_lo, a_hi) = span(q, lat_cols);
                    for b in b_lo..=b_hi {
                        for a in a_lo..=a_hi {
                            let j = lattice[b * lat_cols + a];
                            if j == u32::MAX {
                                continue;
                            }
                            for (sum, &score) in sums.iter_mut().zip(scores.row(j as usize)) {
                                *sum += score;
                            }
                            count += 1;
                        }
                    }
                }
                cov_row[q] = count;
                let out = &mut values[q * c..(q + 1) * c];
                if count == 0 {
                    out.iter_mut().for_each(|v| *v = UNCOVERED);
                } else {
                    for (v, &sum) in out.iter_mut().zip(&sums) {
                        *v = sum / count as f64;
                    }
                }
            }
        });

    let per_class = (0..c)
        .map(|k| interleaved.iter().skip(k).step_by(c).copied().collect())
        .collect();
    Ok(SimilarityGrid {
        layout,
        class_ids: (0..c as u64).collect(),
        per_class,
        coverage,
    })
}

/// Per-cell class labels; [`NO_LABEL`] marks uncovered cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    pub layout: CellLayout,
    pub labels: Vec<u8>,
}

impl SegmentationMask {
    pub fn new(layout: CellLayout, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != layout.len() {
            return Err(invalid(format!(
                "mask holds {} labels, layout needs {}",
                labels.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, labels })
    }

    #[inline]
    pub fn label(&self, col: usize, row: usize) -> u8 {
        self.labels[row * self.layout.cols + col]
    }
}

/// Per-cell argmax over classes. Exact ties go to the lowest class index.
pub fn argmax_mask(sim: &SimilarityGrid) -> Result<SegmentationMask> {
    let c = sim.num_classes();
    if c == 0 {
        return Err(invalid("similarity grid has no classes"));
    }
    if c > NO_LABEL as usize {
        return Err(invalid(format!("{c} classes do not fit 8-bit labels")));
    }
    let labels = sim
        .coverage
        .par_iter()
        .enumerate()
        .map(|(i, &cov)| {
            if cov == 0 {
                return NO_LABEL;
            }
            let mut best = 0usize;
            for k in 1..c {
                if sim.per_class[k][i] > sim.per_class[best][i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    SegmentationMask::new(sim.layout, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::NormPolicy;
    use crate::tiling::{plan_tiles_with_stride, SlideGeometry, Tile};

    fn proto(id: u64, v: Vec<f64>) -> ClassPrototype {
        ClassPrototype {
            class_id: id,
            vector: v,
            norm_policy: NormPolicy::RawMean,
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[3.0f64, 4.0], &[3.0f64, 4.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0f64, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0f64, 0.0], &[1.0f64, 1.0]).unwrap();
        assert!((c - 0.7071067811865476).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&[0.0f64, 0.0], &[1.0f64, 0.0]),
            Err(ZeusError::DegenerateVector(_))
        ));
        assert!(matches!(
            cosine(&[1.0f64], &[1.0f64, 0.0]),
            Err(ZeusError::DimMismatch { .. })
        ));
    }

    fn embs(rows: &[(u64, Vec<f32>)]) -> EmbeddingSet {
        let mut e = EmbeddingSet::patches("m", "s", rows[0].1.len()).unwrap();
        for (id, v) in rows {
            e.push(*id, v).unwrap();
        }
        e
    }

    #[test]
    fn score_examples() {
        let e = embs(&[(0, vec![1.0, 2.0])]);
        let s = score_tiles(&e, &[proto(0, vec![1.0, 2.0])]).unwrap();
        assert_eq!(s.scores, vec![1.0]);

        let e = embs(&[(0, vec![0.0, 1.0])]);
        let s = score_tiles(&e, &[proto(0, vec![1.0, 0.0]), proto(1, vec![0.0, 1.0])]).unwrap();
        assert_eq!(s.row(0), &[0.0, 1.0]);
    }

    #[test]
    fn score_errors() {
        let e = embs(&[(0, vec![1.0, 2.0])]);
        assert!(matches!(
            score_tiles(&e, &[proto(0, vec![1.0, 2.0, 3.0])]),
            Err(ZeusError::DimMismatch { .. })
        ));
        assert!(matches!(
            score_tiles(&e, &[proto(1, vec![1.0, 2.0])]),
            Err(ZeusError::InvalidInput(_))
        ));
    }

    fn grid_from(w: u32, h: u32, patch: u32, stride: u32) -> TileGrid {
        plan_tiles_with_stride(&SlideGeometry::new("g", w, h).unwrap(), patch, stride, None, 0.0).unwrap()
    }

    fn scores_for(grid: &TileGrid, per_tile: &[f64]) -> TileScores {
        TileScores::new(grid.tiles.iter().map(|t| t.tile_id).collect(), 1, per_tile.to_vec()).unwrap()
    }

    #[test]
    fn single_tile_single_cell() {
        let g = grid_from(8, 8, 8, 8);
        let sim = accumulate_grid(&g, &scores_for(&g, &[0.8])).unwrap();
        assert_eq!(sim.per_class[0], vec![0.8]);
        assert_eq!(sim.coverage, vec![1]);
    }

    #[test]
    fn two_tile_overlap_mean() {
        // patch 2s, tiles at x = 0 and x = s
        let g = grid_from(30, 20, 20, 10);
        assert_eq!(g.len(), 2);
        let sim = accumulate_grid(&g, &scores_for(&g, &[0.2, 0.4])).unwrap();
        let row0: Vec<f64> = (0..3).map(|q| sim.value(0, q, 0)).collect();
        assert_eq!(row0[0], 0.2);
        assert!((row0[1] - 0.3).abs() < 1e-15);
        assert_eq!(row0[2], 0.4);
        assert_eq!(&sim.coverage[..3], &[1, 2, 1]);
    }

    #[test]
    fn uncovered_cells_get_sentinel() {
        // 35 wide, patch 20, stride 10: pixels from x = 30 on are uncovered
        let g = grid_from(35, 20, 20, 10);
        let sim = accumulate_grid(&g, &scores_for(&g, &[0.5, 0.5])).unwrap();
        assert_eq!(sim.layout.cols, 4);
        assert_eq!(sim.coverage_at(3, 0), 0);
        assert_eq!(sim.value(0, 3, 0), UNCOVERED);
        let mask = argmax_mask(&sim).unwrap();
        assert_eq!(mask.label(3, 0), NO_LABEL);
    }

    #[test]
    fn misaligned_origin_rejected() {
        let mut g = grid_from(40, 20, 20, 10);
        g.tiles[1].x = 5;
        let s = scores_for(&g, &vec![0.1; g.len()]);
        assert!(matches!(accumulate_grid(&g, &s), Err(ZeusError::InvalidGrid(_))));
    }

    #[test]
    fn score_count_mismatch() {
        let g = grid_from(40, 20, 20, 10);
        let s = TileScores::new(vec![0], 1, vec![0.1]).unwrap();
        assert!(matches!(accumulate_grid(&g, &s), Err(ZeusError::InvalidInput(_))));
    }

    #[test]
    fn argmax_examples() {
        let g = grid_from(40, 40, 20, 10);
        let k = g.len();
        let mut raw = Vec::new();
        for _ in 0..k {
            raw.extend([0.1, 0.9]);
        }
        let ids: Vec<u64> = g.tiles.iter().map(|t| t.tile_id).collect();
        let sim = accumulate_grid(&g, &TileScores::new(ids.clone(), 2, raw).unwrap()).unwrap();
        assert!(argmax_mask(&sim).unwrap().labels.iter().all(|&l| l == 1));

        let sim = accumulate_grid(&g, &TileScores::new(ids, 2, vec![0.3; 2 * k]).unwrap()).unwrap();
        assert!(argmax_mask(&sim).unwrap().labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn tissue_gaps_reduce_coverage() {
        let mut g = grid_from(40, 20, 20, 10);
        // drop the middle tile of three
        g.tiles = vec![
            Tile { tile_id: 0, x: 0, y: 0 },
            Tile {
                tile_id: 1,
                x: 20,
                y: 0,
            },
        ];
        let sim = accumulate_grid(&g, &scores_for(&g, &[0.2, 0.6])).unwrap();
        assert_eq!(&sim.coverage[..4], &[1, 1, 1, 1]);
        assert_eq!(sim.value(0, 1, 0), 0.2);
        assert_eq!(sim.value(0, 2, 0), 0.6);
    }
}
