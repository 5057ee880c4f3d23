//! On-disk rasters: PFM similarity maps, PNG masks and their JSON sidecars.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZeusError};
use crate::raster::BinaryRaster;
use crate::simcore::{SegmentationMask, SimilarityGrid, NO_LABEL, UNCOVERED};
use crate::tiling::CellLayout;

pub const CELLS_SCHEMA: &str = "zeus-cells/1";

/// Describes the cell raster behind a mask or similarity map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSidecar {
    pub schema: String,
    pub slide_id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub stride: u32,
    pub patch_size: u32,
    pub cols: usize,
    pub rows: usize,
    pub class_ids: Vec<u64>,
    /// Similarity sentinel for uncovered cells, or mask label for them.
    pub uncovered: f64,
    pub files: Vec<String>,
}

impl CellSidecar {
    pub fn new(slide_id: &str, layout: &CellLayout, class_ids: Vec<u64>, uncovered: f64, files: Vec<String>) -> Self {
        Self {
            schema: CELLS_SCHEMA.to_string(),
            slide_id: slide_id.to_string(),
            width_px: layout.width_px,
            height_px: layout.height_px,
            stride: layout.stride,
            patch_size: layout.patch_size,
            cols: layout.cols,
            rows: layout.rows,
            class_ids,
            uncovered,
            files,
        }
    }

    pub fn layout(&self) -> Result<CellLayout> {
        if self.schema != CELLS_SCHEMA {
            return Err(ZeusError::Format(format!(
                "expected schema {CELLS_SCHEMA}, found {}",
                self.schema
            )));
        }
        let layout = CellLayout::new(self.width_px, self.height_px, self.stride, self.patch_size)?;
        if layout.cols != self.cols || layout.rows != self.rows {
            return Err(ZeusError::Corrupt(format!(
                "sidecar says {}x{} cells, geometry implies {}x{}",
                self.cols, self.rows, layout.cols, layout.rows
            )));
        }
        Ok(layout)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

/// Grayscale PFM (`Pf`), little-endian, rows stored bottom to top.
pub fn write_pfm<W: Write>(mut out: W, width: usize, height: usize, values: &[f32]) -> Result<()> {
    if values.len() != width * height {
        return Err(ZeusError::InvalidInput("PFM payload does not match dimensions".into()));
    }
    write!(out, "Pf\n{width} {height}\n-1.0\n")?;
    let mut line = Vec::with_capacity(width * 4);
    for row in values.chunks_exact(width).rev() {
        line.clear();
        for v in row {
            line.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&line)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a grayscale little-endian PFM back into top-to-bottom rows.
pub fn read_pfm<R: Read>(mut input: R) -> Result<(usize, usize, Vec<f32>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ZeusError::Truncated("PFM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let bad = || ZeusError::Format("malformed PFM header".into());
    if fields[0] != "Pf" {
        return Err(bad());
    }
    let width: usize = fields[1].parse().map_err(|_| bad())?;
    let height: usize = fields[2].parse().map_err(|_| bad())?;
    let scale: f64 = fields[3].parse().map_err(|_| bad())?;
    if scale >= 0.0 {
        return Err(ZeusError::Format("only little-endian PFM is supported".into()));
    }
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() < width * height * 4 {
        return Err(ZeusError::Truncated("PFM payload".into()));
    }
    let mut values = vec![0f32; width * height];
    for (r, row) in payload.chunks_exact(width * 4).take(height).enumerate() {
        let dst = &mut values[(height - 1 - r) * width..(height - r) * width];
        for (d, c) in dst.iter_mut().zip(row.chunks_exact(4)) {
            *d = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
    }
    Ok((width, height, values))
}

fn class_file_name(class_id: u64) -> String {
    format!("similarity_class{class_id}.pfm")
}

/// Writes one PFM per class plus `similarity.json` into `dir`.
pub fn write_similarity(sim: &SimilarityGrid, slide_id: &str, dir: &Path) -> Result<()> {
    let mut files = Vec::with_capacity(sim.num_classes());
    for (raster, &class_id) in sim.per_class.iter().zip(&sim.class_ids) {
        let name = class_file_name(class_id);
        let values: Vec<f32> = raster.iter().map(|&v| v as f32).collect();
        write_pfm(
            BufWriter::new(File::create(dir.join(&name))?),
            sim.layout.cols,
            sim.layout.rows,
            &values,
        )?;
        files.push(name);
    }
    CellSidecar::new(slide_id, &sim.layout, sim.class_ids.clone(), UNCOVERED, files).write(&dir.join("similarity.json"))
}

fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Writes `mask.png` (8-bit labels, 255 uncovered) and `mask.json`.
pub fn write_mask(mask: &SegmentationMask, slide_id: &str, class_ids: Vec<u64>, png: &Path) -> Result<()> {
    let img = GrayImage::from_raw(mask.layout.cols as u32, mask.layout.rows as u32, mask.labels.clone())
        .expect("label count matches layout");
    save_gray(&img, png)?;
    let files = vec![png
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()];
    CellSidecar::new(slide_id, &mask.layout, class_ids, NO_LABEL as f64, files).write(&sidecar_path(png))
}

/// `foo/mask.png` -> `foo/mask.json`.
pub fn sidecar_path(png: &Path) -> std::path::PathBuf {
    png.with_extension("json")
}

/// Reads a mask PNG and its sidecar.
pub fn read_mask(png: &Path) -> Result<(SegmentationMask, CellSidecar)> {
    let sidecar = CellSidecar::read(&sidecar_path(png))?;
    let layout = sidecar.layout()?;
    let img = image::open(png)?.into_luma8();
    if img.width() as usize != layout.cols || img.height() as usize != layout.rows {
        return Err(ZeusError::Corrupt(format!(
            "mask image {}x{} does not match sidecar {}x{}",
            img.width(),
            img.height(),
            layout.cols,
            layout.rows
        )));
    }
    Ok((SegmentationMask::new(layout, img.into_raw())?, sidecar))
}

/// Single-channel PNG with nonzero = positive.
pub fn read_binary_png(path: &Path) -> Result<BinaryRaster> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    BinaryRaster::new(w, h, img.into_raw().into_iter().map(|v| v != 0).collect())
}

/// Writes 0 / 255 PNG.
pub fn write_binary_png(raster: &BinaryRaster, path: &Path) -> Result<()> {
    let img = GrayImage::from_fn(raster.width as u32, raster.height as u32, |x, y| {
        Luma([if raster.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    save_gray(&img, path)
}
