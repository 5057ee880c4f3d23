use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use image::Rgb;
use log::{info, warn};
use zeus_core::embio::{
    mock_encode_grid, mock_encode_prompts, read_embeddings_file, write_embeddings_file, EmbeddingFile,
};
use zeus_core::export::{read_binary_png, read_mask, write_binary_png, write_mask, write_similarity};
use zeus_core::metrics::{aggregate, confusion, report_jsonl, report_table, resample_gt, GroundTruthMask, SlideReport};
use zeus_core::phantom::{
    default_prototypes, generate_phantom, rect_cell_mask, OracleDescriptor, PhantomSpec, PixelRect, PHANTOM_MODEL_ID,
};
use zeus_core::prompts::{
    ensemble, group_prompt_embeddings, prototypes_from_file, prototypes_to_file, ClassPrototype, NormPolicy, PromptSpec,
};
use zeus_core::render::{
    overlay_contours, parse_hex_color, LayerMask, OverlayLayer, OverlaySpec, GROUND_TRUTH_COLOR, PREDICTION_COLOR,
    SECOND_PREDICTION_COLOR,
};
use zeus_core::simcore::{accumulate_grid, argmax_mask, score_tiles, SegmentationMask};
use zeus_core::tiling::{
    detect_tissue, plan_tiles_with_stride, read_manifest, stride_for_overlap, write_manifest, SatThreshold,
    SlideGeometry, TileGrid, TissueMask, TissueParams, DEFAULT_OVERLAP,
};
use zeus_core::ZeusError;

use crate::args::*;

pub const GRID_FILE: &str = "grid.json";
pub const TISSUE_FILE: &str = "tissue.png";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const TEXT_EMBEDDINGS_FILE: &str = "text_embeddings.bin";
pub const PROTOTYPES_FILE: &str = "prototypes.bin";
pub const MASK_FILE: &str = "mask.png";
pub const REPORT_JSONL: &str = "report.jsonl";
pub const REPORT_TABLE: &str = "report.txt";
pub const OVERLAY_FILE: &str = "overlay.png";
pub const EXPECTED_MASK_FILE: &str = "expected_mask.png";
pub const ORACLE_FILE: &str = "oracle.json";

struct Ctx<'a> {
    seed: u64,
    out_dir: &'a Path,
}

impl Ctx<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        out_dir: &cli.out_dir,
    };
    match &cli.command {
        Command::Plan(a) => plan(&ctx, a).map(drop),
        Command::MockEncode(a) => mock_encode(&ctx, a),
        Command::Prototypes(a) => prototypes(&ctx, a).map(drop),
        Command::Segment(a) => segment(&ctx, a).map(drop),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Overlay(a) => overlay(&ctx, a),
        Command::Phantom(a) => phantom(&ctx, a),
        Command::Pipeline(a) => pipeline(&ctx, a),
    }
}

fn geometry(a: &GeometryArgs) -> Result<SlideGeometry> {
    let mut g = SlideGeometry::new(a.slide_id.clone(), a.width, a.height)?.with_magnification(a.magnification)?;
    g.mpp = a.mpp;
    g.validate()?;
    Ok(g)
}

fn stride(a: &LatticeArgs) -> Result<u32> {
    match a.stride {
        Some(s) => Ok(s),
        None => Ok(stride_for_overlap(a.patch_size, a.overlap.unwrap_or(DEFAULT_OVERLAP))?),
    }
}

fn sat_threshold(s: &str) -> Result<SatThreshold> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(SatThreshold::Auto);
    }
    s.parse::<u8>()
        .map(SatThreshold::Fixed)
        .map_err(|_| ZeusError::InvalidInput(format!("sat threshold must be `auto` or 0..=255, got {s:?}")).into())
}

/// The tissue mask to filter with, and whether it was detected here.
fn tissue_mask(a: &TissueArgs) -> Result<Option<(TissueMask, bool)>> {
    if let Some(path) = &a.thumbnail {
        let ds = a
            .thumb_downsample
            .ok_or_else(|| ZeusError::InvalidInput("--thumbnail needs --thumb-downsample".into()))?;
        let img = image::open(path)
            .map_err(ZeusError::from)
            .with_context(|| format!("reading thumbnail {}", path.display()))?
            .to_rgb8();
        let params = TissueParams {
            median_radius: a.median_radius,
            sat_threshold: sat_threshold(&a.sat_threshold)?,
            min_region_px: a.min_region_px,
        };
        return Ok(Some((detect_tissue(&img, ds, &params)?, true)));
    }
    if let Some(path) = &a.tissue_mask {
        let raster = read_binary_png(path).with_context(|| format!("reading tissue mask {}", path.display()))?;
        return Ok(Some((TissueMask::new(raster, a.mask_downsample.unwrap_or(1))?, false)));
    }
    Ok(None)
}

fn write_grid(grid: &TileGrid, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_manifest(grid, &mut out)?;
    out.flush()?;
    Ok(())
}

fn load_grid(path: &Path) -> Result<TileGrid> {
    let file = File::open(path).with_context(|| format!("opening grid {}", path.display()))?;
    Ok(read_manifest(BufReader::new(file))?)
}

fn load_prompts(path: &Path) -> Result<PromptSpec> {
    let file = File::open(path).with_context(|| format!("opening prompt spec {}", path.display()))?;
    Ok(PromptSpec::from_reader(BufReader::new(file))?)
}

fn load_embeddings(path: &Path) -> Result<EmbeddingFile> {
    read_embeddings_file(path).with_context(|| format!("reading {}", path.display()))
}

fn plan_grid(geom: &GeometryArgs, lattice: &LatticeArgs, tissue: &TissueArgs, ctx: &Ctx) -> Result<TileGrid> {
    let geom = geometry(geom)?;
    let mask = tissue_mask(tissue)?;
    if let Some((m, true)) = &mask {
        write_binary_png(&m.raster, &ctx.out(TISSUE_FILE))?;
    }
    let grid = plan_tiles_with_stride(
        &geom,
        lattice.patch_size,
        stride(lattice)?,
        mask.as_ref().map(|(m, _)| m),
        lattice.min_tissue_frac,
    )?;
    info!(
        "planned {} tiles over {}x{} (stride {})",
        grid.len(),
        geom.width_px,
        geom.height_px,
        grid.stride
    );
    write_grid(&grid, &ctx.out(GRID_FILE))?;
    Ok(grid)
}

fn plan(ctx: &Ctx, a: &PlanArgs) -> Result<TileGrid> {
    plan_grid(&a.geometry, &a.lattice, &a.tissue, ctx)
}

fn mock_encode(ctx: &Ctx, a: &MockEncodeArgs) -> Result<()> {
    if let Some(path) = &a.grid {
        let grid = load_grid(path)?;
        let set = mock_encode_grid(&grid, ctx.seed, a.dim, &a.model_id)?;
        write_embeddings_file(&set, &ctx.out(EMBEDDINGS_FILE))?;
    }
    if let Some(path) = &a.prompts {
        let spec = load_prompts(path)?;
        let set = mock_encode_prompts(&spec, ctx.seed, a.dim, &a.model_id)?;
        write_embeddings_file(&set, &ctx.out(TEXT_EMBEDDINGS_FILE))?;
    }
    Ok(())
}

fn build_prototypes(
    spec: &PromptSpec,
    text: &EmbeddingFile,
    policy: NormPolicy,
    ctx: &Ctx,
) -> Result<Vec<ClassPrototype>> {
    if text.slide_id != spec.spec_hash() {
        warn!(
            "text embeddings were not produced from this prompt spec (hash {:?})",
            text.slide_id
        );
    }
    let protos = group_prompt_embeddings(spec, text)?
        .iter()
        .map(|set| ensemble(set, policy))
        .collect::<zeus_core::Result<Vec<_>>>()?;
    let file = prototypes_to_file(&protos, &text.model_id, &spec.spec_hash())?;
    write_embeddings_file(&file, &ctx.out(PROTOTYPES_FILE))?;
    Ok(protos)
}

fn prototypes(ctx: &Ctx, a: &PrototypeArgs) -> Result<Vec<ClassPrototype>> {
    let spec = load_prompts(&a.prompts)?;
    let text = load_embeddings(&a.text_embeddings)?;
    build_prototypes(&spec, &text, a.norm_policy.into(), ctx)
}

/// Model id without the ensemble-policy suffix.
fn base_model_id(id: &str) -> &str {
    id.split_once(';').map_or(id, |(base, _)| base)
}

fn run_segment(
    grid: &TileGrid,
    embs: &EmbeddingFile,
    protos_file: &EmbeddingFile,
    ctx: &Ctx,
) -> Result<SegmentationMask> {
    grid.validate()?;
    embs.check_matches_grid(grid)?;
    if base_model_id(&protos_file.model_id) != embs.model_id {
        return Err(ZeusError::InvalidInput(format!(
            "prototypes come from model {:?} but patch embeddings from {:?}",
            base_model_id(&protos_file.model_id),
            embs.model_id
        ))
        .into());
    }
    let protos = prototypes_from_file(protos_file)?;
    let scores = score_tiles(embs, &protos)?;
    let sim = accumulate_grid(grid, &scores)?;
    let mask = argmax_mask(&sim)?;
    let slide_id = &grid.slide.slide_id;
    write_similarity(&sim, slide_id, ctx.out_dir)?;
    write_mask(&mask, slide_id, sim.class_ids.clone(), &ctx.out(MASK_FILE))?;
    Ok(mask)
}

fn segment(ctx: &Ctx, a: &SegmentArgs) -> Result<SegmentationMask> {
    let grid = load_grid(&a.grid)?;
    let embs = load_embeddings(&a.embeddings)?;
    let protos = load_embeddings(&a.prototypes)?;
    run_segment(&grid, &embs, &protos, ctx)
}

fn load_gt(path: &Path, downsample: u32) -> Result<GroundTruthMask> {
    let raster = read_binary_png(path).with_context(|| format!("reading ground truth {}", path.display()))?;
    Ok(GroundTruthMask::new(raster, downsample)?)
}

fn write_reports(slides: &[SlideReport], group_key: &str, ctx: &Ctx) -> Result<()> {
    let summary = aggregate(slides, group_key)?;
    std::fs::write(ctx.out(REPORT_JSONL), report_jsonl(slides, &summary)?)?;
    let table = report_table(std::slice::from_ref(&summary));
    std::fs::write(ctx.out(REPORT_TABLE), &table)?;
    print!("{table}");
    Ok(())
}

fn slide_report(mask: &SegmentationMask, slide_id: &str, gt: &GroundTruthMask, tumor_class: u8) -> Result<SlideReport> {
    let cells = resample_gt(gt, &mask.layout)?;
    Ok(SlideReport::from_confusion(
        slide_id,
        confusion(mask, &cells, tumor_class)?,
    ))
}

fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<()> {
    if a.mask.len() != a.gt.len() {
        bail!(ZeusError::InvalidInput(format!(
            "{} masks but {} ground-truth files",
            a.mask.len(),
            a.gt.len()
        )));
    }
    if a.gt_downsample.len() != 1 && a.gt_downsample.len() != a.gt.len() {
        bail!(ZeusError::InvalidInput(
            "--gt-downsample takes one value or one per --gt".into()
        ));
    }
    let mut slides = Vec::with_capacity(a.mask.len());
    for (i, (mask_path, gt_path)) in a.mask.iter().zip(&a.gt).enumerate() {
        let (mask, sidecar) = read_mask(mask_path).with_context(|| format!("reading mask {}", mask_path.display()))?;
        let ds = a.gt_downsample[if a.gt_downsample.len() == 1 { 0 } else { i }];
        let gt = load_gt(gt_path, ds)?;
        slides.push(slide_report(&mask, &sidecar.slide_id, &gt, a.tumor_class)?);
    }
    write_reports(&slides, &a.group_key, ctx)
}

fn default_color(i: usize) -> Rgb<u8> {
    if i.is_multiple_of(2) {
        PREDICTION_COLOR
    } else {
        SECOND_PREDICTION_COLOR
    }
}

fn label_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn render_overlay(
    thumbnail: &Path,
    downsample: u32,
    predictions: Vec<(SegmentationMask, Rgb<u8>, String)>,
    gt: Option<(GroundTruthMask, Rgb<u8>)>,
    tumor_class: u8,
    thickness: u32,
    ctx: &Ctx,
) -> Result<()> {
    let thumb = image::open(thumbnail)
        .map_err(ZeusError::from)
        .with_context(|| format!("reading thumbnail {}", thumbnail.display()))?
        .to_rgb8();
    let mut layers: Vec<OverlayLayer> = predictions
        .into_iter()
        .map(|(mask, color, label)| OverlayLayer {
            mask: LayerMask::Prediction {
                mask,
                positive: tumor_class,
            },
            color,
            label,
        })
        .collect();
    if let Some((gt, color)) = gt {
        layers.push(OverlayLayer {
            mask: LayerMask::Truth(gt),
            color,
            label: "ground truth".into(),
        });
    }
    let spec = OverlaySpec {
        layers,
        thumbnail: thumb,
        downsample,
        thickness,
    };
    overlay_contours(&spec)?
        .save_with_format(ctx.out(OVERLAY_FILE), image::ImageFormat::Png)
        .map_err(ZeusError::from)?;
    Ok(())
}

fn overlay(ctx: &Ctx, a: &OverlayArgs) -> Result<()> {
    if a.mask_color.len() > a.mask.len() {
        bail!(ZeusError::InvalidInput(
            "more --mask-color values than --mask files".into()
        ));
    }
    let mut predictions = Vec::with_capacity(a.mask.len());
    for (i, path) in a.mask.iter().enumerate() {
        let (mask, _) = read_mask(path).with_context(|| format!("reading mask {}", path.display()))?;
        let color = match a.mask_color.get(i) {
            Some(c) => parse_hex_color(c)?,
            None => default_color(i),
        };
        predictions.push((mask, color, label_of(path)));
    }
    let gt = match &a.gt {
        Some(path) => Some((load_gt(path, a.gt_downsample)?, parse_hex_color(&a.gt_color)?)),
        None => None,
    };
    render_overlay(
        &a.thumbnail,
        a.thumb_downsample,
        predictions,
        gt,
        a.tumor_class,
        a.thickness,
        ctx,
    )
}

fn parse_rect(s: &str) -> Result<PixelRect> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| ZeusError::InvalidInput(format!("tumor rect must be x0,y0,x1,y1, got {s:?}")))?;
    let [x0, y0, x1, y1] = parts[..] else {
        return Err(anyhow!(ZeusError::InvalidInput(format!(
            "tumor rect must have four values, got {s:?}"
        ))));
    };
    Ok(PixelRect { x0, y0, x1, y1 })
}

fn phantom(ctx: &Ctx, a: &PhantomArgs) -> Result<()> {
    let geometry = SlideGeometry::new(a.slide_id.clone(), a.width, a.height)?;
    let tumor_rect = match &a.tumor_rect {
        Some(s) => parse_rect(s)?,
        None => PixelRect::centered(&geometry, a.width / 2, a.height / 2),
    };
    let spec = PhantomSpec {
        geometry,
        tumor_rect,
        prototypes: default_prototypes(a.dim, ctx.seed)?,
        noise_sigma: a.noise_sigma,
        seed: ctx.seed,
    };
    spec.validate()?;
    let grid = plan_tiles_with_stride(
        &spec.geometry,
        a.lattice.patch_size,
        stride(&a.lattice)?,
        None,
        a.lattice.min_tissue_frac,
    )?;
    write_grid(&grid, &ctx.out(GRID_FILE))?;
    let embs = generate_phantom(&spec, &grid)?;
    write_embeddings_file(&embs, &ctx.out(EMBEDDINGS_FILE))?;
    let protos = prototypes_to_file(&spec.prototypes, PHANTOM_MODEL_ID, "phantom")?;
    write_embeddings_file(&protos, &ctx.out(PROTOTYPES_FILE))?;

    let layout = grid.cell_layout();
    let expected = rect_cell_mask(&spec.tumor_rect, &layout);
    let labels = expected.bits.iter().map(|&b| b as u8).collect();
    let mask = SegmentationMask::new(layout, labels)?;
    write_mask(&mask, &spec.geometry.slide_id, vec![0, 1], &ctx.out(EXPECTED_MASK_FILE))?;
    let r = spec.tumor_rect;
    let oracle = OracleDescriptor {
        tumor_rect: [r.x0, r.y0, r.x1, r.y1],
        expected_mask_path: EXPECTED_MASK_FILE.into(),
    };
    std::fs::write(ctx.out(ORACLE_FILE), serde_json::to_string_pretty(&oracle)? + "\n")?;
    Ok(())
}

fn pipeline(ctx: &Ctx, a: &RunConfig) -> Result<()> {
    let grid = plan_grid(&a.geometry, &a.lattice, &a.tissue, ctx)?;
    let spec = load_prompts(&a.prompts)?;
    let text = match &a.text_embeddings {
        Some(path) => load_embeddings(path)?,
        None => {
            let t = mock_encode_prompts(&spec, ctx.seed, a.dim, &a.model_id)?;
            write_embeddings_file(&t, &ctx.out(TEXT_EMBEDDINGS_FILE))?;
            t
        }
    };
    let embs = match &a.embeddings {
        Some(path) => load_embeddings(path)?,
        None => {
            let e = mock_encode_grid(&grid, ctx.seed, a.dim, &a.model_id)?;
            write_embeddings_file(&e, &ctx.out(EMBEDDINGS_FILE))?;
            e
        }
    };
    build_prototypes(&spec, &text, a.norm_policy.into(), ctx)?;
    let protos_file = load_embeddings(&ctx.out(PROTOTYPES_FILE))?;
    let mask = run_segment(&grid, &embs, &protos_file, ctx)?;

    let gt = match &a.gt {
        Some(path) => {
            let gt = load_gt(path, a.gt_downsample)?;
            let report = slide_report(&mask, &grid.slide.slide_id, &gt, a.tumor_class)?;
            write_reports(&[report], &a.group_key, ctx)?;
            Some(gt)
        }
        None => None,
    };
    if let (Some(thumb), Some(ds)) = (&a.tissue.thumbnail, a.tissue.thumb_downsample) {
        let label = label_of(&ctx.out(MASK_FILE));
        render_overlay(
            thumb,
            ds,
            vec![(mask, PREDICTION_COLOR, label)],
            gt.map(|g| (g, GROUND_TRUTH_COLOR)),
            a.tumor_class,
            a.thickness,
            ctx,
        )?;
    }
    Ok(())
}
