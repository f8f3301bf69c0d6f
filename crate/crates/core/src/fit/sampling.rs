//! Sample placement along contracted rays.

use rand::Rng;

use crate::contraction::{segment_ray, Ray, SegmentedRay};
use crate::field::RadianceField;
use crate::math::Point3;
use crate::render::{alpha_from_density, MarchConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleCounts {
    pub coarse: usize,
    pub fine: usize,
}

/// One sample of the renderer's step grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSample {
    pub position: Point3,
    /// Step length in contracted units.
    pub delta: f64,
}

/// The exact sample positions and step lengths the marcher uses for `ray`
/// (no skipping, no early termination).
pub fn step_grid(ray: &Ray, cfg: &MarchConfig) -> Vec<StepSample> {
    let mut out = Vec::new();
    let step = cfg.step_size;
    for seg in &segment_ray(ray).segments {
        let mut k = 0usize;
        loop {
            let s = k as f64 * step;
            if s >= seg.length || out.len() >= cfg.max_steps {
                break;
            }
            out.push(StepSample { position: seg.point_at(s), delta: step.min(seg.length - s) });
            k += 1;
        }
    }
    out
}

/// Two-pass placement in contracted arc length: `coarse` stratified samples,
/// then `fine` samples drawn by inverse CDF from the coarse weights
/// (uniform when every weight is zero). Returns sorted, strictly increasing
/// arc positions in `[0, L]` for the ray's contracted length `L`.
pub fn stratified_then_refined_sampling<F: RadianceField + ?Sized, R: Rng>(
    ray: &Ray,
    field: &F,
    counts: SampleCounts,
    rng: &mut R,
) -> Vec<f64> {
    let segmented = segment_ray(ray);
    let (coarse, fine) = refine(&segmented, field, counts, rng);
    let mut all: Vec<f64> = coarse.into_iter().chain(fine).collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

/// Coarse and fine arc positions, separately.
pub fn refine<F: RadianceField + ?Sized, R: Rng>(
    segmented: &SegmentedRay,
    field: &F,
    counts: SampleCounts,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let n = counts.coarse.max(1);
    let total = segmented.contracted_length();
    let width = total / n as f64;
    let coarse: Vec<f64> = (0..n).map(|i| (i as f64 + rng.gen::<f64>()) * width).collect();
    let mut transmittance = 1.0;
    let mut weights = Vec::with_capacity(n);
    for &s in &coarse {
        let p = segmented.point_at_arc(s).unwrap_or_default();
        let alpha = alpha_from_density(field.density_at(p), width);
        weights.push(alpha * transmittance);
        transmittance *= 1.0 - alpha;
    }
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        weights.iter_mut().for_each(|w| *w = 1.0);
    }
    let sum: f64 = weights.iter().sum();
    let mut cdf = Vec::with_capacity(n + 1);
    cdf.push(0.0);
    for w in &weights {
        cdf.push(cdf.last().copied().unwrap_or(0.0) + w / sum);
    }
    let fine = (0..counts.fine)
        .map(|j| {
            let u = (j as f64 + rng.gen::<f64>()) / counts.fine as f64;
            let i = cdf.partition_point(|&c| c <= u).clamp(1, n) - 1;
            let span = cdf[i + 1] - cdf[i];
            let frac = if span > 0.0 { ((u - cdf[i]) / span).clamp(0.0, 1.0) } else { 0.5 };
            ((i as f64 + frac) * width).min(total)
        })
        .collect();
    (coarse, fine)
}
