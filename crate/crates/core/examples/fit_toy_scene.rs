//! Fits the built-in toy scene and reports train PSNR.
//!
//! cargo run --release --example fit_toy_scene -- [iterations] [batch] [views] [size]

use std::time::Instant;

use rfbake::field::GridDims;
use rfbake::fit::{evaluate_views, fit_field, generate_views, FitConfig, SyntheticScene};
use rfbake::render::MarchConfig;

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> rfbake::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (iterations, batch, views, size) = (arg(1, 300), arg(2, 2048), arg(3, 20), arg(4, 128));
    let scene = SyntheticScene::toy();
    let start = Instant::now();
    let gt = generate_views(&scene, views, size, size)?;
    println!("ground truth: {views} views at {size}² in {:.1?}", start.elapsed());

    let dims = GridDims::new(64, 128)?;
    let cfg = FitConfig { iterations, batch_rays: batch, log_every: 25, ..FitConfig::default() };
    let start = Instant::now();
    let fit = fit_field(&gt, dims, &cfg, |_| {})?;
    println!("fit: {iterations} iterations of {batch} rays in {:.1?}", start.elapsed());

    let start = Instant::now();
    let psnr = evaluate_views(&fit.grids, &fit.mlp, &gt, &MarchConfig::for_plane_res(dims.plane_res))?;
    println!("train PSNR {psnr:.2} dB (evaluated in {:.1?})", start.elapsed());
    Ok(())
}
