use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use image::{Rgb, RgbImage};

use mitocount::annotation::{read_annotation_xml, write_annotation_xml, AnnotationDoc};
use mitocount::bench::{bench_csv, bench_hpf};
use mitocount::detect::{export_planted_masks, load_mask_dir, DEFAULT_BINARIZE_THRESHOLD};
use mitocount::pipeline::{run_pipeline, PipelineConfig, WorkloadSpec};
use mitocount::postprocess::{process_slide, PostprocessParams, DEFAULT_MAX_INTERPOLAR_UM, DEFAULT_MIN_WIDTH_UM};
use mitocount::synth::{gen_synthetic_slide, SlideDir, SyntheticBatch};
use mitocount::tissue::{detect_tissue, tissue_tiles, RefineParams, TileParams};
use mitocount::{find_best_hpf, hpf_geometry, Error, MicronsPerPixel, Result};

#[derive(Parser)]
#[command(name = "mitocount", version, about = "Mitotic figure post-processing, 10HPF search and slide pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic slides described by a TOML spec file.
    GenSynthetic {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, env = "MITOCOUNT_OUT_DIR")]
        out: PathBuf,
        /// Also write the planted mask of every tile to <slide>/masks/.
        #[arg(long)]
        with_masks: bool,
    },
    /// Generate a workload and run it through the pipeline.
    RunPipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        /// Output directory; falls back to MITOCOUNT_OUT_DIR, then the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Post-process stored tile masks into an annotation file.
    Postprocess {
        /// Directory of tile_<x>_<y>.png masks.
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        mpp: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        slide_id: Option<String>,
        #[arg(long, default_value_t = DEFAULT_BINARIZE_THRESHOLD)]
        threshold: f32,
        #[arg(long, default_value_t = DEFAULT_MIN_WIDTH_UM)]
        min_width_um: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_INTERPOLAR_UM)]
        max_interpolar_um: f64,
    },
    /// Time brute-force and k-d tree 10HPF search on uniform points.
    BenchHpf {
        /// Comma-separated point counts.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        mpp: f64,
        #[arg(long, default_value_t = 20.0)]
        extent_mm: f64,
    },
    /// Draw the tissue mask and selected tiles over the slide overview.
    TissueMap {
        #[arg(long)]
        slide: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check an annotation file against the schema and its invariants.
    ValidateXml { file: PathBuf },
}

fn gen_synthetic(spec: &Path, out: &Path, with_masks: bool) -> Result<()> {
    let text = std::fs::read_to_string(spec).map_err(|e| Error::Io {
        context: format!("reading {}", spec.display()),
        source: e,
    })?;
    let batch: SyntheticBatch = toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", spec.display())))?;
    for s in &batch.slides {
        let slide = gen_synthetic_slide(s, out)?;
        if with_masks {
            export_planted_masks(&slide.manifest, &slide.dir.join("masks"))?;
        }
        println!(
            "{}\t{} tiles\t{} planted",
            slide.dir.display(),
            slide.manifest.tiles.len(),
            slide.manifest.ground_truth.len()
        );
    }
    Ok(())
}

fn run(config: &Path, workload: &Path, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = PipelineConfig::load(config)?;
    cfg.apply_env(|k| std::env::var(k).ok())?;
    let workload = WorkloadSpec::load(workload)?;
    let out = out
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Error::config("no output directory: pass --out or set MITOCOUNT_OUT_DIR"))?;
    let metrics = run_pipeline(&cfg, &workload, &out)?;
    print!("{}", metrics.summary());
    println!("metrics: {}", out.join("metrics").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn postprocess(
    masks: &Path,
    mpp: f64,
    out: &Path,
    slide_id: Option<String>,
    threshold: f32,
    min_width_um: f64,
    max_interpolar_um: f64,
) -> Result<()> {
    let mpp = MicronsPerPixel::new(mpp)?;
    let tiles = load_mask_dir(masks, threshold)?;
    let params = PostprocessParams {
        min_width_um,
        max_interpolar_um,
        ..PostprocessParams::default()
    };
    let figures = process_slide(&tiles, mpp, &params)?;
    let hpf = if figures.centers.is_empty() {
        None
    } else {
        Some(find_best_hpf(&figures.centers, &hpf_geometry(mpp))?)
    };
    let slide_id = slide_id.unwrap_or_else(|| {
        let dir = masks.canonicalize().unwrap_or_else(|_| masks.to_path_buf());
        let base = if dir.file_name().is_some_and(|n| n == "masks") {
            dir.parent().map(Path::to_path_buf).unwrap_or(dir)
        } else {
            dir
        };
        base.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "slide".into())
    });
    let doc = AnnotationDoc::from_results(slide_id, mpp, &figures, hpf.as_ref());
    write_annotation_xml(&doc, out)?;
    println!(
        "{} figures, 10HPF count {}",
        doc.figures.len(),
        hpf.map(|h| h.count.to_string()).unwrap_or_else(|| "-".into())
    );
    Ok(())
}

fn bench(n: &[usize], seed: u64, out: &Path, mpp: f64, extent_mm: f64) -> Result<()> {
    let rows = bench_hpf(n, seed, MicronsPerPixel::new(mpp)?, extent_mm)?;
    let csv = bench_csv(&rows);
    std::fs::write(out, &csv).map_err(|e| Error::Io {
        context: format!("writing {}", out.display()),
        source: e,
    })?;
    print!("{csv}");
    Ok(())
}

fn tissue_map(slide: &Path, out: &Path) -> Result<()> {
    let slide = SlideDir::open(slide)?;
    let m = &slide.manifest;
    let overview = slide.overview()?;
    let tissue = detect_tissue(&overview, RefineParams::default())?;
    let grid = tissue_tiles(
        &tissue.mask,
        (m.width_px, m.height_px),
        TileParams {
            window_px: m.window_px,
            ..TileParams::default()
        },
    )?;
    let mut img = RgbImage::from_fn(overview.width(), overview.height(), |x, y| {
        let p = overview.get_pixel(x, y).0;
        if tissue.mask.get(x as usize, y as usize) {
            Rgb([p[0] / 2, p[1] / 2 + 120, p[2] / 2])
        } else {
            Rgb(p)
        }
    });
    let (sx, sy) = grid.scale;
    for &(tx, ty) in &grid.tiles {
        let x0 = (f64::from(tx) / sx) as u32;
        let y0 = (f64::from(ty) / sy) as u32;
        let x1 = ((f64::from(tx + grid.window_px) / sx) as u32).min(img.width()) - 1;
        let y1 = ((f64::from(ty + grid.window_px) / sy) as u32).min(img.height()) - 1;
        for x in x0..=x1 {
            img.put_pixel(x, y0, Rgb([220, 0, 0]));
            img.put_pixel(x, y1, Rgb([220, 0, 0]));
        }
        for y in y0..=y1 {
            img.put_pixel(x0, y, Rgb([220, 0, 0]));
            img.put_pixel(x1, y, Rgb([220, 0, 0]));
        }
    }
    img.save(out).map_err(|e| Error::Image {
        context: format!("writing {}", out.display()),
        source: e,
    })?;
    println!(
        "otsu threshold {}, {} of {} tiles selected",
        tissue.otsu.threshold,
        grid.tiles.len(),
        grid.cols * grid.rows
    );
    Ok(())
}

fn validate(file: &Path) -> Result<()> {
    let doc = read_annotation_xml(file)?;
    println!(
        "ok: slide {}, {} figures, hpf {}",
        doc.slide_id,
        doc.figures.len(),
        doc.hpf.map(|h| h.count.to_string()).unwrap_or_else(|| "absent".into())
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynthetic { spec, out, with_masks } => gen_synthetic(&spec, &out, with_masks),
        Command::RunPipeline { config, workload, out } => run(&config, &workload, out),
        Command::Postprocess {
            masks,
            mpp,
            out,
            slide_id,
            threshold,
            min_width_um,
            max_interpolar_um,
        } => postprocess(&masks, mpp, &out, slide_id, threshold, min_width_um, max_interpolar_um),
        Command::BenchHpf {
            n,
            seed,
            out,
            mpp,
            extent_mm,
        } => bench(&n, seed, &out, mpp, extent_mm),
        Command::TissueMap { slide, out } => tissue_map(&slide, &out),
        Command::ValidateXml { file } => validate(&file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
