//! Acceptance run: one PASS/FAIL line per primary criterion.
//!
//! Runs without the libtest harness so the lines are always printed. The
//! reconstruction-scale settings are calibrated for a single-core machine;
//! `RFBAKE_ACCEPT_ITERS` and `RFBAKE_ACCEPT_BATCH` override them.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rfbake::assets::{read_bundle, write_bundle, AssetBundle};
use rfbake::bake::occupancy::BitGrid;
use rfbake::bake::{bake_scene, BakeConfig};
use rfbake::contraction::{contract_in_region, contract_pi, region_of, segment_ray, Ray, RegionId};
use rfbake::field::quantize::{decode_cell, encode_cell, quantize_value, quantize_value_grad};
use rfbake::field::{FieldGrids, FieldSample, GridDims, RadianceField, Storage, VoxelGrid, CHANNELS};
use rfbake::fit::{
    batch_backgrounds, batch_loss, evaluate_views, fit_field, generate_views, loss_and_grad, training_rays,
    FieldParams, FitConfig, FitResult, GroundTruthView, SyntheticScene,
};
use rfbake::field::mlp::DeferredMlp;
use rfbake::math::{Point3, Vec3};
use rfbake::render::{composite_step, psnr, render_with, MarchConfig, MarchMode, RayAccumulation};

const TOY_ITERATIONS: usize = 1200;
const TOY_BATCH: usize = 2048;
const WIDE_ITERATIONS: usize = 200;

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        let line = format!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((pass, line));
    }
}

fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn max_abs(a: Point3, b: Point3) -> f64 {
    (a - b).norm_inf()
}

fn contraction_suite(report: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let identity = (0..10_000).all(|_| {
        let x = Vec3::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
        contract_pi(x) == x
    });
    let bounded = (0..10_000).all(|_| {
        let scale = 10f64.powf(rng.gen_range(0.0..8.0));
        let x = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale;
        contract_pi(x).norm_inf() < 2.0
    });
    // core/shell: both formulas evaluated on the boundary |x|∞ = 1
    let mut core_jump: f64 = 0.0;
    // shell/shell: the two dominant-axis formulas on |x_i| = |x_j| > 1
    let mut side_jump: f64 = 0.0;
    for _ in 0..10_000 {
        let mut x = Vec3::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
        let j = rng.gen_range(0..3);
        let s = if rng.gen() { 1.0 } else { -1.0 };
        x[j] = s;
        let shell = region_of(x * 1.5);
        core_jump = core_jump.max(max_abs(contract_in_region(x, RegionId::Core), contract_in_region(x, shell)));
        let mut y = x * rng.gen_range(1.0..50.0);
        let i = (j + 1) % 3;
        y[i] = y[j].abs() * if rng.gen() { 1.0 } else { -1.0 };
        let mut nudged = y;
        nudged[i] += y[i].signum() * 1e-9;
        let (ri, rj) = (region_of(nudged), region_of(y));
        if ri != rj {
            side_jump = side_jump.max(max_abs(contract_in_region(y, ri), contract_in_region(y, rj)));
        }
    }
    let hand = [
        (Vec3::new(0.5, -0.3, 0.2), Vec3::new(0.5, -0.3, 0.2)),
        (Vec3::new(4.0, 0.0, 0.0), Vec3::new(1.75, 0.0, 0.0)),
        (Vec3::new(2.0, 4.0, 0.0), Vec3::new(0.5, 1.75, 0.0)),
        (Vec3::new(-3.0, 1.0, 0.5), Vec3::new(-5.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0)),
    ];
    let hand_err = hand.iter().map(|&(x, y)| max_abs(contract_pi(x), y)).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    report.record(
        "contraction suite",
        identity && bounded && core_jump <= 1e-12 && hand_err <= 1e-12 && elapsed < Duration::from_secs(5),
        format!(
            "identity {identity}, bounded {bounded}, core/shell jump {core_jump:.1e}, hand examples {hand_err:.1e}, \
             {elapsed:.2?}; shell/shell jump {side_jump:.3} (the formula is discontinuous on |x_i| = |x_j| > 1)"
        ),
    );
}

fn piecewise_linearity(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let o = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let Ok(ray) = Ray::new(o, d.normalized(), 0.0, 200.0) else { continue };
        for seg in &segment_ray(&ray).segments {
            if seg.length <= 0.0 {
                continue;
            }
            // endpoints can sit on a tie plane; use the segment's own branch there
            for k in 0..=32 {
                let t = seg.t0 + (seg.t1 - seg.t0) * k as f64 / 32.0;
                let x = ray.at(t);
                let y = if k == 0 || k == 32 { contract_in_region(x, seg.region) } else { contract_pi(x) };
                let p = y - seg.start;
                let along = p.dot(seg.direction);
                worst = worst.max((p - seg.direction * along).norm() / seg.length);
            }
        }
    }
    let axis = Ray::new(Vec3::ZERO, Vec3::new(0.0, 0.0, -1.0), 0.0, 1e6).expect("valid ray");
    let n = segment_ray(&axis).segments.len();
    report.record(
        "piecewise linearity",
        worst < 1e-7 && n == 2,
        format!("max relative collinearity residual {worst:.2e} over 1000 rays, axis ray segments {n}"),
    );
}

fn quantization_suite(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut idempotent = true;
    let mut err: f64 = 0.0;
    let mut codec: f64 = 0.0;
    for _ in 0..10_000 {
        let v: f64 = rng.gen();
        idempotent &= quantize_value(quantize_value(v)) == quantize_value(v);
        err = err.max((quantize_value(v) - v).abs());
        let raw: f64 = rng.gen_range(-12.0..12.0);
        let m = if rng.gen() { 14.0 } else { 7.0 };
        let expect = 2.0 * m * ((255.0 / (1.0 + (-raw).exp()) + 0.5).floor() / 255.0) - m;
        codec = codec.max((decode_cell(encode_cell(raw), m) - expect).abs());
    }
    let ste = (0..=100).all(|i| quantize_value_grad(i as f64 / 100.0) == 1.0);
    report.record(
        "quantization suite",
        idempotent && err <= 1.0 / 510.0 && ste && codec <= 1e-12,
        format!("idempotent {idempotent}, max |q(v)-v| {err:.6} (<= {:.6}), STE gradient 1: {ste}, codec error {codec:.1e}", 1.0 / 510.0),
    );
}

fn lerp_corner(values: &[f64], n: usize, coords: &[f64], strides: &[usize], channel: usize) -> f64 {
    // brute-force multilinear interpolation over 2^d corners
    let d = coords.len();
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..d {
        let u = (coords[a] + 2.0) / 4.0 * (n - 1) as f64;
        let i = (u.floor() as isize).clamp(0, n as isize - 2) as usize;
        base[a] = i;
        frac[a] = u - i as f64;
    }
    let mut total = 0.0;
    for corner in 0..(1 << d) {
        let mut w = 1.0;
        let mut idx = 0;
        for a in 0..d {
            let bit = (corner >> a) & 1;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            idx += (base[a] + bit) * strides[a];
        }
        total += w * values[idx * CHANNELS + channel];
    }
    total
}

fn field_query_oracle(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 10_000 {
        let dims = GridDims::new(rng.gen_range(2..7), rng.gen_range(2..9)).expect("dims");
        let mut rand_vec = |n: usize| (0..n * CHANNELS).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<f64>>();
        let voxel = rand_vec(dims.voxel_cells());
        let planes = [rand_vec(dims.plane_cells()), rand_vec(dims.plane_cells()), rand_vec(dims.plane_cells())];
        let grids = FieldGrids::new(
            dims,
            Default::default(),
            VoxelGrid::Dense(Storage::Continuous(voxel.clone())),
            [
                Storage::Continuous(planes[0].clone()),
                Storage::Continuous(planes[1].clone()),
                Storage::Continuous(planes[2].clone()),
            ],
        )
        .expect("grids");
        for _ in 0..100 {
            let p = Vec3::new(rng.gen_range(-2.0..=2.0), rng.gen_range(-2.0..=2.0), rng.gen_range(-2.0..=2.0));
            let got = grids.query(p).expect("inside domain");
            let (l, r) = (dims.voxel_res, dims.plane_res);
            let mut t = [0.0; CHANNELS];
            for (c, tc) in t.iter_mut().enumerate() {
                *tc = lerp_corner(&voxel, l, &[p.x, p.y, p.z], &[1, l, l * l], c)
                    + lerp_corner(&planes[0], r, &[p.y, p.z], &[1, r], c)
                    + lerp_corner(&planes[1], r, &[p.x, p.z], &[1, r], c)
                    + lerp_corner(&planes[2], r, &[p.x, p.y], &[1, r], c);
            }
            let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
            worst = worst.max(rel(got.density, t[0].exp()));
            for c in 0..3 {
                worst = worst.max(rel(got.diffuse[c], sig(t[1 + c])));
            }
            for c in 0..4 {
                worst = worst.max(rel(got.feature[c], sig(t[4 + c])));
            }
            cases += 1;
        }
    }
    // 1D cell with corner densities -10 and +10, queried halfway
    let dims = GridDims::new(2, 2).expect("dims");
    let mut voxel = vec![0.0; dims.voxel_cells() * CHANNELS];
    for cell in 0..dims.voxel_cells() {
        voxel[cell * CHANNELS] = if cell % 2 == 0 { -10.0 } else { 10.0 };
    }
    let zero = || Storage::Continuous(vec![0.0; dims.plane_cells() * CHANNELS]);
    let cell = FieldGrids::new(dims, Default::default(), VoxelGrid::Dense(Storage::Continuous(voxel)), [zero(), zero(), zero()])
        .expect("grids");
    let mid = cell.query(Vec3::ZERO).expect("inside").density;
    let post = mid == 0f64.exp();
    let pre = 0.5 * ((-10f64).exp() + 10f64.exp());
    report.record(
        "field-query oracle",
        worst <= 1e-12 && post && (mid - pre).abs() > 1.0,
        format!("max relative error {worst:.1e} on {cases} cases; midpoint density {mid} = exp(lerp) (lerp(exp) = {pre:.1})"),
    );
}

fn compositing_identities(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mut acc = RayAccumulation::default();
        let mut weights = 0.0;
        for _ in 0..rng.gen_range(1..200) {
            let s = FieldSample { density: rng.gen_range(0.0..50.0), diffuse: [rng.gen(); 3], feature: [rng.gen(); 4] };
            let t = acc.transmittance;
            acc = composite_step(acc, &s, rng.gen_range(0.001..0.1));
            weights += t - acc.transmittance;
        }
        worst = worst.max((1.0 - acc.transmittance - weights).abs());
    }
    let mut acc = RayAccumulation::default();
    acc.composite_alpha(&FieldSample { density: 1.0, diffuse: [1.0, 0.0, 0.0], feature: [0.0; 4] }, 0.5);
    acc.composite_alpha(&FieldSample { density: 1.0, diffuse: [0.0, 1.0, 0.0], feature: [0.0; 4] }, 0.5);
    let hand = acc.diffuse == [0.5, 0.25, 0.0] && acc.transmittance == 0.25;
    report.record(
        "compositing identities",
        worst <= 1e-12 && hand,
        format!("max |1 - T - sum w| {worst:.1e}; hand example C_d {:?}, T {}", acc.diffuse, acc.transmittance),
    );
}

fn gradient_check(report: &mut Report) {
    let dims = GridDims::new(8, 16).expect("dims");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut params = FieldParams::zeros(dims);
    params.raw.iter_mut().for_each(|r| *r = rng.gen_range(-1.0..1.0));
    let mlp = DeferredMlp::init(6);
    let scene = SyntheticScene::toy();
    let views = generate_views(&scene, 2, 6, 6).expect("views");
    let rays = training_rays(&views);
    let cfg = FitConfig { quantization_aware: false, ..FitConfig::default() };
    let march = MarchConfig::for_plane_res(dims.plane_res);
    let bgs = batch_backgrounds(rays.len(), true, &mut rng);
    let lg = loss_and_grad(&params, &mlp, &rays, &bgs, &cfg, &march, 0).expect("gradient");
    let candidates: Vec<usize> = (0..params.raw.len()).filter(|&i| lg.raw[i].abs() > 1e-8).collect();
    let mut worst: f64 = 0.0;
    let h = 1e-3;
    for _ in 0..20 {
        let i = candidates[rng.gen_range(0..candidates.len())];
        let mut p = params.clone();
        p.raw[i] += h;
        let up = batch_loss(&p, &mlp, &rays, &bgs, &cfg, &march, 0).expect("loss");
        p.raw[i] -= 2.0 * h;
        let down = batch_loss(&p, &mlp, &rays, &bgs, &cfg, &march, 0).expect("loss");
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - lg.raw[i]).abs() / fd.abs().max(lg.raw[i].abs()));
    }
    report.record(
        "gradient check",
        worst <= 1e-3,
        format!("max relative error {worst:.2e} over 20 random cells with nonzero gradient (of {})", candidates.len()),
    );
}

/// Counts density reads at points whose base occupancy bit is unset.
struct Audited<'a> {
    bundle: &'a AssetBundle,
    unoccupied: AtomicUsize,
}

impl RadianceField for Audited<'_> {
    fn density_at(&self, p: Point3) -> f64 {
        if !self.bundle.occupancy.base.occupied_at(p) {
            self.unoccupied.fetch_add(1, Ordering::Relaxed);
        }
        self.bundle.density_at(p)
    }

    fn sample_at(&self, p: Point3) -> FieldSample {
        if !self.bundle.occupancy.base.occupied_at(p) {
            self.unoccupied.fetch_add(1, Ordering::Relaxed);
        }
        self.bundle.sample_at(p)
    }
}

fn renderer_equivalence(report: &mut Report, bundle: &AssetBundle, views: &[GroundTruthView]) {
    let start = Instant::now();
    let audited = Audited { bundle, unoccupied: AtomicUsize::new(0) };
    let mut worst = f64::INFINITY;
    let mut queries = (0, 0);
    for v in views.iter().step_by(5) {
        let cam = v.camera.resized(64, 64);
        let fast = render_with(&cam, &audited, MarchMode::Accelerated(&bundle.occupancy), &bundle.mlp, &bundle.march)
            .expect("render");
        let slow = bundle.render_reference(&cam).expect("render");
        worst = worst.min(psnr(&fast.to_rgb8(), &slow.to_rgb8()).expect("psnr"));
        queries.0 += fast.field_queries;
        queries.1 += slow.field_queries;
    }
    let elapsed = start.elapsed();
    let unocc = audited.unoccupied.load(Ordering::Relaxed);
    report.record(
        "renderer equivalence",
        worst >= 60.0 && unocc == 0 && elapsed < Duration::from_secs(60),
        format!(
            "min PSNR {} dB over 4 frames at 64x64, unoccupied queries {unocc}, queries {} vs {} brute force, {elapsed:.1?}",
            rfbake::render::image::format_psnr(worst),
            queries.0,
            queries.1
        ),
    );
}

fn fit_toy(views: &[GroundTruthView], quantization_aware: bool) -> (FitResult, Duration) {
    let cfg = FitConfig {
        iterations: env_usize("RFBAKE_ACCEPT_ITERS", TOY_ITERATIONS),
        batch_rays: env_usize("RFBAKE_ACCEPT_BATCH", TOY_BATCH),
        quantization_aware,
        log_every: 250,
        ..FitConfig::default()
    };
    let start = Instant::now();
    let fit = fit_field(views, GridDims::new(64, 128).expect("dims"), &cfg, |_| {}).expect("fit");
    (fit, start.elapsed())
}

fn baked_psnr(bundle: &AssetBundle, views: &[GroundTruthView]) -> f64 {
    let total: f64 = views
        .iter()
        .map(|v| psnr(&bundle.render_image(&v.camera).expect("render").to_rgb8(), &v.image.to_rgb8()).expect("psnr"))
        .sum();
    total / views.len() as f64
}

fn bake(fit: &FitResult, views: &[GroundTruthView]) -> AssetBundle {
    let rays: Vec<Ray> = views.iter().flat_map(|v| v.camera.rays()).collect();
    bake_scene(&fit.grids, &fit.mlp, &rays, &BakeConfig::for_plane_res(fit.grids.dims.plane_res)).expect("bake")
}

fn payload_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .expect("bundle dir")
        .map(|e| e.expect("entry").path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).expect("read")))
        .collect();
    files.sort();
    files
}

fn asset_round_trip(report: &mut Report, bundle: &AssetBundle) {
    let tmp = tempfile::tempdir().expect("tempdir");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    write_bundle(bundle, &a).expect("write");
    let loaded = read_bundle(&a).expect("read");
    write_bundle(&loaded, &b).expect("write");
    let (fa, fb) = (payload_files(&a), payload_files(&b));
    let identical = fa == fb && loaded == *bundle;
    let mut fixture = BitGrid::new(2);
    fixture.set(1, 0, 0);
    fixture.set(0, 1, 0);
    fixture.set(1, 1, 1);
    let bits = fixture.as_bytes() == [0b1000_0110];
    report.record(
        "asset round trip",
        identical && bits,
        format!("{} files byte-identical after write/read/write: {identical}; bit-order fixture {bits}", fa.len()),
    );
}

fn main() {
    let mut report = Report { lines: Vec::new() };
    contraction_suite(&mut report);
    piecewise_linearity(&mut report);
    quantization_suite(&mut report);
    field_query_oracle(&mut report);
    compositing_identities(&mut report);
    gradient_check(&mut report);

    let scene = SyntheticScene::toy();
    let gt_start = Instant::now();
    let views = generate_views(&scene, 20, 128, 128).expect("views");
    let gt_time = gt_start.elapsed();
    let march = MarchConfig::for_plane_res(128);

    let (qat, qat_time) = fit_toy(&views, true);
    let pre = evaluate_views(&qat.grids, &qat.mlp, &views, &march).expect("evaluate");
    let total = gt_time + qat_time;
    report.record(
        "toy reconstruction",
        pre >= 28.0 && total < Duration::from_secs(600),
        format!(
            "train PSNR {pre:.2} dB (floor 28, target 30) after {} iterations x {} rays, fit {:.0?} + ground truth {:.1?}",
            qat.history.len(),
            env_usize("RFBAKE_ACCEPT_BATCH", TOY_BATCH),
            qat_time,
            gt_time
        ),
    );

    let qat_bundle = bake(&qat, &views);
    renderer_equivalence(&mut report, &qat_bundle, &views);
    asset_round_trip(&mut report, &qat_bundle);

    let post = baked_psnr(&qat_bundle, &views);
    let (plain, _) = fit_toy(&views, false);
    let plain_pre = evaluate_views(&plain.grids, &plain.mlp, &views, &march).expect("evaluate");
    let plain_post = baked_psnr(&bake(&plain, &views), &views);
    report.record(
        "baking losslessness",
        (pre - post).abs() <= 0.1 && plain_post < post,
        format!(
            "quantization-aware: pre {pre:.3} / post {post:.3} dB (drop {:.3}); without: pre {plain_pre:.3} / post {plain_post:.3} dB",
            pre - post
        ),
    );

    let wide_cfg = FitConfig { iterations: WIDE_ITERATIONS, batch_rays: TOY_BATCH, log_every: 0, ..FitConfig::default() };
    let wide = fit_field(&views, GridDims::new(64, 256).expect("dims"), &wide_cfg, |_| {}).expect("fit");
    let wide_bundle = bake(&wide, &views);
    let bytes = wide_bundle.payload_bytes();
    let dense = 256usize.pow(3) * CHANNELS;
    report.record(
        "memory scaling",
        bytes < dense,
        format!(
            "L=64 R=256 bundle {bytes} payload bytes ({} voxel blocks) vs dense 256^3 x {CHANNELS} grid {dense} bytes ({:.1}x smaller)",
            wide_bundle.sparse_voxels().block_count(),
            dense as f64 / bytes as f64
        ),
    );

    let failed = report.lines.iter().filter(|(ok, _)| !ok).count();
    println!("{} of {} primary criteria passed", report.lines.len() - failed, report.lines.len());
    // failures are reported above; RFBAKE_ACCEPT_STRICT=1 also turns them into a failing exit code
    if failed > 0 && std::env::var("RFBAKE_ACCEPT_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
