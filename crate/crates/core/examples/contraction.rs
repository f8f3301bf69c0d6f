//! Contracts a few world points and splits a ray into straight contracted
//! segments.
//!
//! cargo run --example contraction

use rfbake::contraction::{contract_pi, contract_spherical, region_of, segment_ray, Ray};
use rfbake::math::Vec3;

fn main() -> rfbake::Result<()> {
    println!("{:>28}  {:>6}  {:>28}  {:>28}", "x", "region", "piecewise-projective", "spherical");
    for x in [
        Vec3::new(0.5, -0.25, 0.75),
        Vec3::new(2.0, 1.0, 0.0),
        Vec3::new(-4.0, 1.0, 3.0),
        Vec3::new(0.0, 1e6, 0.0),
    ] {
        let (p, s) = (contract_pi(x), contract_spherical(x));
        println!(
            "{:>28}  {:>6}  {:>28}  {:>28}",
            format!("({:.2}, {:.2}, {:.2})", x.x, x.y, x.z),
            format!("{:?}", region_of(x)),
            format!("({:.4}, {:.4}, {:.4})", p.x, p.y, p.z),
            format!("({:.4}, {:.4}, {:.4})", s.x, s.y, s.z),
        );
    }

    let ray = Ray::new(Vec3::new(0.2, -0.9, 0.1), Vec3::new(1.0, 1.2, 0.0).normalized(), 0.0, 1e4)?;
    println!("\nray from (0.2, -0.9, 0.1) along (1, 1.2, 0):");
    for seg in &segment_ray(&ray).segments {
        println!(
            "  {:?}: t in [{:.4}, {:.4}], contracted length {:.4}",
            seg.region, seg.t0, seg.t1, seg.length
        );
    }
    Ok(())
}
