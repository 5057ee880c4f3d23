use image::{Rgb, RgbImage};
use proptest::prelude::*;
use zeus_core::metrics::GroundTruthMask;
use zeus_core::raster::BinaryRaster;
use zeus_core::render::{expand_mask, overlay_contours, LayerMask, OverlayLayer, OverlaySpec, PREDICTION_COLOR};
use zeus_core::simcore::SegmentationMask;
use zeus_core::tiling::CellLayout;

fn rect_layer(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> OverlayLayer {
    let mut r = BinaryRaster::filled(w, h, false);
    for y in y0..y1 {
        for x in x0..x1 {
            r.set(x, y, true);
        }
    }
    OverlayLayer {
        mask: LayerMask::Truth(GroundTruthMask::new(r, 1).unwrap()),
        color: PREDICTION_COLOR,
        label: "rect".into(),
    }
}

#[test]
fn rectangle_contour_matches_enumeration() {
    let (w, h) = (60usize, 40usize);
    let (x0, y0, x1, y1) = (10usize, 8usize, 45usize, 30usize);
    let white = Rgb([255, 255, 255]);
    let spec = OverlaySpec {
        layers: vec![rect_layer(w, h, x0, y0, x1, y1)],
        thumbnail: RgbImage::from_pixel(w as u32, h as u32, white),
        downsample: 1,
        thickness: 3,
    };
    let out = overlay_contours(&spec).unwrap();
    // oracle: boundary ring of the rectangle, then any pixel within
    // Chebyshev distance 1 of it
    let inside = |x: isize, y: isize| x >= x0 as isize && x < x1 as isize && y >= y0 as isize && y < y1 as isize;
    let boundary = |x: isize, y: isize| {
        inside(x, y) && (!inside(x - 1, y) || !inside(x + 1, y) || !inside(x, y - 1) || !inside(x, y + 1))
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let painted = (-1..=1).any(|dy| (-1..=1).any(|dx| boundary(x + dx, y + dy)));
            let px = *out.get_pixel(x as u32, y as u32);
            assert_eq!(px == PREDICTION_COLOR, painted, "pixel ({x},{y})");
            if !painted {
                assert_eq!(px, white);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn overlay_only_touches_pixels_near_boundaries(seed in any::<u64>(), thickness in 1u32..6) {
        let s = zeus_core::stream::CounterStream::new(seed, 0);
        let (w, h) = (24usize, 18usize);
        let bits: Vec<bool> = (0..w * h).map(|i| s.uniform(i as u64) < 0.4).collect();
        let region = BinaryRaster::new(w, h, bits).unwrap();
        let thumb = RgbImage::from_fn(w as u32, h as u32, |x, y| Rgb([x as u8, y as u8, 9]));
        let spec = OverlaySpec {
            layers: vec![OverlayLayer {
                mask: LayerMask::Truth(GroundTruthMask::new(region.clone(), 1).unwrap()),
                color: Rgb([1, 2, 3]),
                label: "r".into(),
            }],
            thumbnail: thumb.clone(),
            downsample: 1,
            thickness,
        };
        let out = overlay_contours(&spec).unwrap();
        let edge = zeus_core::render::boundary_pixels(&region);
        let t = thickness as isize;
        for y in 0..h as isize {
            for x in 0..w as isize {
                let near = (-t..=t).any(|dy| (-t..=t).any(|dx| {
                    let (bx, by) = (x + dx, y + dy);
                    bx >= 0 && by >= 0 && (bx as usize) < w && (by as usize) < h && edge.get(bx as usize, by as usize)
                }));
                if !near {
                    prop_assert_eq!(out.get_pixel(x as u32, y as u32), thumb.get_pixel(x as u32, y as u32));
                }
            }
        }
    }

    #[test]
    fn expansion_preserves_label_set(cols in 1usize..6, rows in 1usize..6, stride in 1u32..6, seed in any::<u64>(), extra in 0usize..7) {
        let s = zeus_core::stream::CounterStream::new(seed, 1);
        let labels: Vec<u8> = (0..cols * rows).map(|i| (s.word(i as u64) % 4) as u8).collect();
        let layout = CellLayout::new(cols as u32 * stride, rows as u32 * stride, stride, stride).unwrap();
        let mask = SegmentationMask::new(layout, labels.clone()).unwrap();
        let (tw, th) = (cols * stride as usize + extra, rows * stride as usize + extra);
        let e = expand_mask(&mask, tw, th).unwrap();
        prop_assert!(e.labels.iter().all(|l| labels.contains(l)));
        for r in 0..rows {
            for q in 0..cols {
                prop_assert_eq!(e.labels[r * stride as usize * tw + q * stride as usize], labels[r * cols + q]);
            }
        }
    }
}
