//! The `rfbake` command line: `fit`, `bake`, `render`, `diff` and `info`.
//!
//! Progress goes to standard error, results to standard output. Exit codes:
//! 0 success, 1 usage, 2 invalid input, 3 runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::assets::{read_bundle, read_cameras, read_checkpoint, write_bundle, write_cameras, write_checkpoint};
use crate::bake::{bake_scene, BakeConfig, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::field::GridDims;
use crate::fit::{fit_field, generate_views, FitConfig, SyntheticScene};
use crate::render::image::format_psnr;
use crate::render::{psnr, RgbImage};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Camera file written next to each checkpoint.
pub const CHECKPOINT_CAMERAS: &str = "cameras.txt";

#[derive(Debug, Parser)]
#[command(name = "rfbake", version, about = "Fit, bake and render triplane + sparse-voxel radiance fields")]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "RFBAKE_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit grids and the shading network to a synthetic scene.
    Fit(FitArgs),
    /// Quantize a checkpoint, compute occupancy and write a bundle.
    Bake(BakeArgs),
    /// Render one PNG per camera from a bundle.
    Render(RenderArgs),
    /// Print the PSNR between two PNG images.
    Diff(DiffArgs),
    /// Summarize a bundle.
    Info(InfoArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Scene description (TOML).
    #[arg(long)]
    pub scene: PathBuf,
    /// Checkpoint directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Voxel and plane resolution, `L,R`.
    #[arg(long, value_parser = parse_res, default_value = "64,128")]
    pub res: (usize, usize),
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rays per iteration.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Train on continuous values instead of simulated bytes.
    #[arg(long)]
    pub no_quant_aware: bool,
}

#[derive(Debug, Args)]
pub struct BakeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Cameras whose pixel rays define occupancy.
    #[arg(long)]
    pub cameras: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub cameras: PathBuf,
    /// Output directory for `frame_NNN.png`.
    #[arg(long)]
    pub out: PathBuf,
    /// Brute-force marching without empty-space skipping.
    #[arg(long)]
    pub reference: bool,
    /// Override the step size (contracted units).
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    #[arg(long)]
    pub bundle: PathBuf,
}

fn parse_res(s: &str) -> std::result::Result<(usize, usize), String> {
    let (l, r) = s.split_once(',').ok_or_else(|| format!("expected L,R, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(l)?, parse(r)?))
}

/// Parses `args`, runs the command and returns the process exit code.
/// Results are written to `out` once the command finishes.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start {} threads: {e}", cli.threads);
            return EXIT_RUNTIME;
        }
    };
    let mut buffer = Vec::new();
    let result = pool.install(|| run(&cli.command, &mut buffer));
    if out.write_all(&buffer).and_then(|_| out.flush()).is_err() {
        return EXIT_RUNTIME;
    }
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

pub fn run(command: &Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(a, out),
        Command::Bake(a) => cmd_bake(a, out),
        Command::Render(a) => cmd_render(a, out),
        Command::Diff(a) => cmd_diff(a, out),
        Command::Info(a) => cmd_info(a, out),
    }
}

fn emit(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(line).and_then(|_| out.write_all(b"\n")).map_err(|e| Error::io("<stdout>", e))
}

pub fn cmd_fit(a: &FitArgs, out: &mut dyn Write) -> Result<()> {
    let scene = SyntheticScene::read(&a.scene)?;
    let dims = GridDims::new(a.res.0, a.res.1)?;
    let defaults = FitConfig::default();
    let cfg = FitConfig {
        iterations: a.iters.unwrap_or(defaults.iterations),
        batch_rays: a.batch.unwrap_or(defaults.batch_rays),
        quantization_aware: !a.no_quant_aware,
        seed: a.seed,
        ..defaults
    };
    cfg.validate()?;
    let v = &scene.views;
    eprintln!("rendering {} ground-truth views at {}x{}", v.count, v.width, v.height);
    let views = generate_views(&scene, v.count, v.width, v.height)?;
    let start = Instant::now();
    let every = cfg.log_every.max(1);
    let fit = fit_field(&views, dims, &cfg, |r| {
        if r.iteration % every == 0 || r.iteration + 1 == cfg.iterations {
            eprintln!("iter {:>6}  loss {:.6}  psnr {:.2}", r.iteration, r.loss, r.psnr);
        }
    })?;
    write_checkpoint(&fit.to_checkpoint(), &a.out)?;
    let cameras: Vec<_> = views.iter().map(|v| v.camera.clone()).collect();
    write_cameras(&a.out.join(CHECKPOINT_CAMERAS), &cameras)?;
    let last = fit.history.last().map_or(0.0, |r| r.loss);
    emit(out, format_args!("checkpoint {}", a.out.display()))?;
    emit(out, format_args!("iterations {} final_loss {last:.6e} seconds {:.1}", cfg.iterations, start.elapsed().as_secs_f64()))
}

pub fn cmd_bake(a: &BakeArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = read_checkpoint(&a.ckpt)?;
    let cameras = read_cameras(&a.cameras)?;
    let rays: Vec<_> = cameras.iter().flat_map(|c| c.rays()).collect();
    eprintln!("baking from {} rays", rays.len());
    let cfg = BakeConfig { threshold: a.threshold, ..BakeConfig::for_plane_res(ckpt.grids.dims.plane_res) };
    let bundle = bake_scene(&ckpt.grids, &ckpt.mlp, &rays, &cfg)?;
    let manifest = write_bundle(&bundle, &a.out)?;
    emit(out, format_args!("occupancy {:.6}", bundle.occupancy.base.fraction_occupied()))?;
    emit(out, format_args!("blocks {}", manifest.blocks.len()))?;
    emit(out, format_args!("bundle_bytes {}", manifest.payload_bytes()))
}

pub fn cmd_render(a: &RenderArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = read_bundle(&a.bundle)?;
    let cameras = read_cameras(&a.cameras)?;
    let mut march = bundle.march;
    if let Some(step) = a.step {
        march.step_size = step;
    }
    march.validate()?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for (i, cam) in cameras.iter().enumerate() {
        let start = Instant::now();
        let frame = if a.reference {
            bundle.render_reference_with(cam, &march)?
        } else {
            bundle.render_image_with(cam, &march)?
        };
        let path = a.out.join(format!("frame_{i:03}.png"));
        frame.to_rgb8().write_png(&path)?;
        eprintln!("{} in {:.2?}", path.display(), start.elapsed());
        emit(out, format_args!("{} queries {}", path.display(), frame.field_queries))?;
    }
    Ok(())
}

pub fn cmd_diff(a: &DiffArgs, out: &mut dyn Write) -> Result<()> {
    let (x, y) = (RgbImage::read_png(&a.a)?, RgbImage::read_png(&a.b)?);
    emit(out, format_args!("{}", format_psnr(psnr(&x, &y)?)))
}

pub fn cmd_info(a: &InfoArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = read_bundle(&a.bundle)?;
    let manifest = crate::assets::bundle::read_manifest(&a.bundle)?;
    emit(out, format_args!("version {}", manifest.version))?;
    emit(out, format_args!("resolution L={} R={}", manifest.voxel_resolution, manifest.plane_resolution))?;
    emit(out, format_args!("blocks {}", manifest.blocks.len()))?;
    for (name, f) in &manifest.files {
        emit(out, format_args!("file {name} {}", f.bytes))?;
    }
    emit(out, format_args!("payload_bytes {}", manifest.payload_bytes()))?;
    let occ = &bundle.occupancy;
    emit(out, format_args!("occupancy base {} {:.6}", occ.base.res, occ.base.fraction_occupied()))?;
    for level in &occ.levels {
        emit(out, format_args!("occupancy pool{} {} {:.6}", level.factor, level.grid.res, level.grid.fraction_occupied()))?;
    }
    Ok(())
}
