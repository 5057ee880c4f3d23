//! Full-resolution mask expansion and contour overlays on thumbnails.

use image::{Rgb, RgbImage};

use crate::error::{invalid, Result};
use crate::metrics::GroundTruthMask;
use crate::raster::BinaryRaster;
use crate::simcore::SegmentationMask;

pub const DEFAULT_THICKNESS: u32 = 3;
pub const PREDICTION_COLOR: Rgb<u8> = Rgb([0x00, 0x00, 0xFF]);
pub const SECOND_PREDICTION_COLOR: Rgb<u8> = Rgb([0xFF, 0x00, 0x00]);
pub const GROUND_TRUTH_COLOR: Rgb<u8> = Rgb([0x00, 0xFF, 0x00]);

/// Row-major label raster at pixel resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRaster {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

/// Nearest-neighbour expansion of a cell mask to `target_w x target_h` pixels.
pub fn expand_mask(mask: &SegmentationMask, target_w: usize, target_h: usize) -> Result<LabelRaster> {
    if target_w == 0 || target_h == 0 {
        return Err(invalid("expansion target must be at least 1x1"));
    }
    let s = mask.layout.stride as usize;
    let (cols, rows) = (mask.layout.cols, mask.layout.rows);
    let col_of: Vec<usize> = (0..target_w).map(|x| (x / s).min(cols - 1)).collect();
    let mut labels = Vec::with_capacity(target_w * target_h);
    for y in 0..target_h {
        let row = (y / s).min(rows - 1);
        labels.extend(col_of.iter().map(|&col| mask.label(col, row)));
    }
    Ok(LabelRaster {
        width: target_w,
        height: target_h,
        labels,
    })
}

/// Parses `#RRGGBB` (the `#` is optional).
pub fn parse_hex_color(s: &str) -> Result<Rgb<u8>> {
    let hex = s.strip_prefix('#').unwrap_or(s);
    if hex.len() != 6 || !hex.is_ascii() {
        return Err(invalid(format!("color {s:?} is not #RRGGBB")));
    }
    let channel =
        |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| invalid(format!("color {s:?} is not #RRGGBB")));
    Ok(Rgb([channel(0)?, channel(2)?, channel(4)?]))
}

#[derive(Debug, Clone)]
pub enum LayerMask {
    /// Cells labelled `positive` form the region.
    Prediction {
        mask: SegmentationMask,
        positive: u8,
    },
    Truth(GroundTruthMask),
}

#[derive(Debug, Clone)]
pub struct OverlayLayer {
    pub mask: LayerMask,
    pub color: Rgb<u8>,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct OverlaySpec {
    pub layers: Vec<OverlayLayer>,
    pub thumbnail: RgbImage,
    /// Slide pixels per thumbnail pixel.
    pub downsample: u32,
    pub thickness: u32,
}

impl LayerMask {
    /// The region sampled onto thumbnail pixels.
    fn to_thumbnail(&self, tw: usize, th: usize, downsample: u32) -> Result<BinaryRaster> {
        let d = downsample as u64;
        let (slide_w, slide_h, unit) = match self {
            LayerMask::Prediction { mask, .. } => (
                mask.layout.width_px as u64,
                mask.layout.height_px as u64,
                mask.layout.stride as u64,
            ),
            LayerMask::Truth(gt) => {
                let g = gt.downsample as u64;
                (gt.raster.width as u64 * g, gt.raster.height as u64 * g, g)
            }
        };
        let tol = d.max(unit);
        if (tw as u64 * d).abs_diff(slide_w) >= tol || (th as u64 * d).abs_diff(slide_h) >= tol {
            return Err(invalid(format!(
                "layer covering {slide_w}x{slide_h} slide pixels does not match a {tw}x{th} thumbnail at downsample {d}"
            )));
        }
        let mut out = BinaryRaster::filled(tw, th, false);
        for ty in 0..th {
            let sy = ty as u64 * d;
            for tx in 0..tw {
                let sx = tx as u64 * d;
                let on = match self {
                    LayerMask::Prediction { mask, positive } => {
                        let s = mask.layout.stride as u64;
                        let col = ((sx / s) as usize).min(mask.layout.cols - 1);
                        let row = ((sy / s) as usize).min(mask.layout.rows - 1);
                        mask.label(col, row) == *positive
                    }
                    LayerMask::Truth(gt) => {
                        let g = gt.downsample as u64;
                        let col = ((sx / g) as usize).min(gt.raster.width - 1);
                        let row = ((sy / g) as usize).min(gt.raster.height - 1);
                        gt.raster.get(col, row)
                    }
                };
                out.set(tx, ty, on);
            }
        }
        Ok(out)
    }
}

/// Positive pixels with a 4-neighbour that is negative or off the raster.
pub fn boundary_pixels(region: &BinaryRaster) -> BinaryRaster {
    let (w, h) = (region.width, region.height);
    let mut out = BinaryRaster::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if !region.get(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !region.get(x - 1, y)
                || !region.get(x + 1, y)
                || !region.get(x, y - 1)
                || !region.get(x, y + 1);
            out.set(x, y, edge);
        }
    }
    out
}

/// Paints each layer's contour, dilated to a `thickness`-wide square brush,
/// over a copy of the thumbnail. Layers paint in order.
pub fn overlay_contours(spec: &OverlaySpec) -> Result<RgbImage> {
    if spec.downsample == 0 {
        return Err(invalid("overlay downsample must be >= 1"));
    }
    if spec.thickness == 0 {
        return Err(invalid("contour thickness must be >= 1"));
    }
    let mut out = spec.thumbnail.clone();
    let (tw, th) = (out.width() as usize, out.height() as usize);
    if spec.layers.is_empty() {
        return Ok(out);
    }
    if tw == 0 || th == 0 {
        return Err(invalid("empty thumbnail"));
    }
    let lo = (spec.thickness as isize - 1) / 2;
    let hi = spec.thickness as isize / 2;
    for layer in &spec.layers {
        let region = layer.mask.to_thumbnail(tw, th, spec.downsample)?;
        let edge = boundary_pixels(&region);
        for y in 0..th {
            for x in 0..tw {
                if !edge.get(x, y) {
                    continue;
                }
                for dy in -lo..=hi {
                    for dx in -lo..=hi {
                        let (px, py) = (x as isize + dx, y as isize + dy);
                        if px >= 0 && py >= 0 && (px as usize) < tw && (py as usize) < th {
                            out.put_pixel(px as u32, py as u32, layer.color);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiling::CellLayout;

    fn mask(cols: u32, rows: u32, stride: u32, labels: Vec<u8>) -> SegmentationMask {
        SegmentationMask::new(
            CellLayout::new(cols * stride, rows * stride, stride, stride).unwrap(),
            labels,
        )
        .unwrap()
    }

    #[test]
    fn expand_single_cell() {
        let m = mask(1, 1, 4, vec![1]);
        let e = expand_mask(&m, 10, 10).unwrap();
        assert!(e.labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn expand_two_cells() {
        let m = mask(2, 1, 5, vec![0, 1]);
        let e = expand_mask(&m, 10, 5).unwrap();
        for y in 0..5 {
            for x in 0..10 {
                assert_eq!(e.labels[y * 10 + x], (x >= 5) as u8);
            }
        }
        assert!(expand_mask(&m, 0, 5).is_err());
    }

    #[test]
    fn expand_then_sample_roundtrip() {
        let labels: Vec<u8> = (0..12).map(|i| (i % 3) as u8).collect();
        let m = mask(4, 3, 7, labels.clone());
        let e = expand_mask(&m, 28, 21).unwrap();
        let back: Vec<u8> = (0..3)
            .flat_map(|r| (0..4).map(move |q| (q, r)))
            .map(|(q, r)| e.labels[r * 7 * 28 + q * 7])
            .collect();
        assert_eq!(back, labels);
    }

    #[test]
    fn hex_colors() {
        assert_eq!(parse_hex_color("#0000FF").unwrap(), Rgb([0, 0, 255]));
        assert_eq!(parse_hex_color("ff8000").unwrap(), Rgb([255, 128, 0]));
        assert!(parse_hex_color("#12345").is_err());
        assert!(parse_hex_color("#GG0000").is_err());
    }

    #[test]
    fn zero_layers_is_identity() {
        let thumb = RgbImage::from_fn(9, 7, |x, y| Rgb([x as u8, y as u8, 7]));
        let spec = OverlaySpec {
            layers: vec![],
            thumbnail: thumb.clone(),
            downsample: 4,
            thickness: 3,
        };
        assert_eq!(overlay_contours(&spec).unwrap().into_raw(), thumb.into_raw());
    }

    #[test]
    fn mismatched_scale_rejected() {
        let m = mask(2, 2, 10, vec![1; 4]);
        let spec = OverlaySpec {
            layers: vec![OverlayLayer {
                mask: LayerMask::Prediction { mask: m, positive: 1 },
                color: PREDICTION_COLOR,
                label: "p".into(),
            }],
            thumbnail: RgbImage::new(50, 50),
            downsample: 1,
            thickness: 3,
        };
        assert!(overlay_contours(&spec).is_err());
    }

    #[test]
    fn disjoint_layers_keep_their_colors() {
        let thumb = RgbImage::from_pixel(40, 20, Rgb([255, 255, 255]));
        let left = mask(4, 2, 10, vec![1, 0, 0, 0, 1, 0, 0, 0]);
        let mut gt = BinaryRaster::filled(40, 20, false);
        for y in 5..15 {
            for x in 30..38 {
                gt.set(x, y, true);
            }
        }
        let spec = OverlaySpec {
            layers: vec![
                OverlayLayer {
                    mask: LayerMask::Prediction {
                        mask: left,
                        positive: 1,
                    },
                    color: PREDICTION_COLOR,
                    label: "pred".into(),
                },
                OverlayLayer {
                    mask: LayerMask::Truth(GroundTruthMask::new(gt, 1).unwrap()),
                    color: GROUND_TRUTH_COLOR,
                    label: "gt".into(),
                },
            ],
            thumbnail: thumb,
            downsample: 1,
            thickness: 1,
        };
        let out = overlay_contours(&spec).unwrap();
        assert_eq!(*out.get_pixel(0, 0), PREDICTION_COLOR);
        assert_eq!(*out.get_pixel(30, 5), GROUND_TRUTH_COLOR);
        assert_eq!(*out.get_pixel(20, 10), Rgb([255, 255, 255]));
    }
}
