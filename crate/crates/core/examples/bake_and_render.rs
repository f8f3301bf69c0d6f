//! Fits a small scene, bakes it into a bundle on disk, reads it back and
//! compares the accelerated marcher with the brute-force one.
//!
//! cargo run --release --example bake_and_render -- [out-dir]

use std::path::PathBuf;
use std::time::Instant;

use rfbake::assets::{read_bundle, write_bundle};
use rfbake::bake::{bake_scene, BakeConfig};
use rfbake::field::GridDims;
use rfbake::fit::{fit_field, generate_views, FitConfig, SyntheticScene};
use rfbake::render::psnr;

fn main() -> rfbake::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("rfbake_bundle"));
    let scene = SyntheticScene::read(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenes/small.toml"))?;
    let views = generate_views(&scene, scene.views.count, scene.views.width, scene.views.height)?;
    let dims = GridDims::new(16, 128)?;
    let cfg = FitConfig { iterations: 150, batch_rays: 1024, log_every: 0, ..FitConfig::default() };
    let fit = fit_field(&views, dims, &cfg, |_| {})?;
    println!("fit: final loss {:.5}", fit.history.last().map_or(0.0, |r| r.loss));

    let rays: Vec<_> = views.iter().flat_map(|v| v.camera.rays()).collect();
    let bundle = bake_scene(&fit.grids, &fit.mlp, &rays, &BakeConfig::for_plane_res(dims.plane_res))?;
    let manifest = write_bundle(&bundle, &out)?;
    println!(
        "bundle {}: {} blocks, {} payload bytes, {:.3}% occupied",
        out.display(),
        manifest.blocks.len(),
        manifest.payload_bytes(),
        100.0 * bundle.occupancy.base.fraction_occupied()
    );

    let loaded = read_bundle(&out)?;
    let cam = views[0].camera.resized(64, 64);
    let t = Instant::now();
    let fast = loaded.render_image(&cam)?;
    let t_fast = t.elapsed();
    let t = Instant::now();
    let slow = loaded.render_reference(&cam)?;
    let t_slow = t.elapsed();
    println!("accelerated: {} field queries in {t_fast:.2?}", fast.field_queries);
    println!("reference:   {} field queries in {t_slow:.2?}", slow.field_queries);
    println!("PSNR accelerated vs reference: {:.2} dB", psnr(&fast.to_rgb8(), &slow.to_rgb8())?);
    Ok(())
}
