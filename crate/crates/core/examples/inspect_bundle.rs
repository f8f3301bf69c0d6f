//! Prints what a bundle directory contains and recounts its occupancy bits.
//!
//! cargo run --example inspect_bundle -- <bundle-dir>

use std::path::PathBuf;

use rfbake::assets::bundle::read_manifest;
use rfbake::assets::read_bundle;

fn main() -> rfbake::Result<()> {
    let Some(dir) = std::env::args().nth(1).map(PathBuf::from) else {
        eprintln!("usage: inspect_bundle <bundle-dir>");
        std::process::exit(1);
    };
    let manifest = read_manifest(&dir)?;
    println!("version {}  L={}  R={}", manifest.version, manifest.voxel_resolution, manifest.plane_resolution);
    for (name, f) in &manifest.files {
        println!("  {name:<28} {:>10} bytes  sha256 {}", f.bytes, &f.sha256[..16]);
    }
    let bundle = read_bundle(&dir)?;
    let base = &bundle.occupancy.base;
    println!("base occupancy {}^3: {} set ({:.4}%)", base.res, base.count_ones(), 100.0 * base.fraction_occupied());
    for level in &bundle.occupancy.levels {
        let g = &level.grid;
        println!("  pool {:>3}: {}^3, {} set", level.factor, g.res, g.count_ones());
    }
    let sparse = bundle.sparse_voxels();
    println!("voxel blocks: {} of {}", sparse.block_count(), sparse.blocks_per_axis.pow(3));
    Ok(())
}
