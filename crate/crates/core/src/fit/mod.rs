//! Direct optimization of explicit grids and the shading network against
//! posed images.
//!
//! Every grid cell holds an unconstrained raw parameter `r`; the value the
//! field sees is `2m · q(σ(r)) - m` (quantization-aware) or `2m · σ(r) - m`.
//! Rays are rendered with the same sample placement and arithmetic as the
//! marcher, composited over a random background color using the
//! ground-truth opacity, and shaded by the deferred network. The loss is the
//! mean squared color error plus a small weight decay on raw grid values.

pub mod sampling;
pub mod scene;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use sampling::{step_grid, stratified_then_refined_sampling, SampleCounts, StepSample};
pub use scene::{generate_views, GroundTruthView, Primitive, Shape, SyntheticScene, ViewSpec};

use crate::assets::checkpoint::{Checkpoint, LossRecord};
use crate::contraction::{segment_ray, Ray};
use crate::error::{Error, Result};
use crate::field::mlp::DeferredMlp;
use crate::field::quantize::{grid_value, grid_value_grad, quantize_value, quantize_value_grad};
use crate::math::sigmoid;
use crate::field::{
    FieldGrids, FieldSample, GridDims, QuantizationSpec, Stencil, Storage, VoxelGrid, CHANNELS, FEATURE_DIM,
};
use crate::render::image::psnr_from_mse;
use crate::render::{alpha_from_density, render_with, MarchConfig, MarchMode};

/// Fixed number of gradient shards; the reduction order does not depend on
/// the thread count.
const GRADIENT_SHARDS: usize = 4;

/// Where training samples are placed along each ray.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleStrategy {
    /// The renderer's own uniform step grid.
    StepGrid,
    /// Stratified pass followed by inverse-CDF refinement.
    StratifiedRefined { coarse: usize, fine: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub iterations: usize,
    pub batch_rays: usize,
    pub lr_init: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coefficient of the mean squared raw grid value, per grid.
    pub weight_decay: f64,
    pub quantization_aware: bool,
    /// Composite over a random color per ray instead of black.
    pub random_background: bool,
    pub sampling: SampleStrategy,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_rays: 1 << 14,
            lr_init: 1e-4,
            lr_peak: 1e-2,
            lr_final: 1e-3,
            warmup_iterations: 100,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-15,
            weight_decay: 0.1,
            quantization_aware: true,
            random_background: true,
            sampling: SampleStrategy::StepGrid,
            seed: 0,
            log_every: 50,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_rays == 0 {
            return Err(Error::InvalidConfig("iterations and batch size must be positive".into()));
        }
        if !(self.lr_init > 0.0 && self.lr_peak > 0.0 && self.lr_final > 0.0) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig("bad optimizer moments".into()));
        }
        if let SampleStrategy::StratifiedRefined { coarse, .. } = self.sampling {
            if coarse == 0 {
                return Err(Error::InvalidConfig("need at least one coarse sample".into()));
            }
        }
        Ok(())
    }

    /// Log-linear warmup from `lr_init` to `lr_peak`, then log-linear decay
    /// to `lr_final` at the last iteration.
    pub fn learning_rate(&self, iteration: usize) -> f64 {
        let lerp_log = |a: f64, b: f64, t: f64| (a.ln() + (b.ln() - a.ln()) * t.clamp(0.0, 1.0)).exp();
        if iteration < self.warmup_iterations {
            lerp_log(self.lr_init, self.lr_peak, iteration as f64 / self.warmup_iterations as f64)
        } else {
            let span = self.iterations.saturating_sub(self.warmup_iterations + 1).max(1);
            lerp_log(self.lr_peak, self.lr_final, (iteration - self.warmup_iterations) as f64 / span as f64)
        }
    }
}

/// Raw parameters of all grids in one flat array: voxel grid, then planes
/// x, y, z; `C` interleaved channels per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams {
    pub dims: GridDims,
    pub quant: QuantizationSpec,
    pub raw: Vec<f64>,
}

impl FieldParams {
    pub fn zeros(dims: GridDims) -> Self {
        Self { dims, quant: QuantizationSpec::default(), raw: vec![0.0; Self::len_for(dims)] }
    }

    pub fn len_for(dims: GridDims) -> usize {
        (dims.voxel_cells() + 3 * dims.plane_cells()) * CHANNELS
    }

    /// `[start, end)` ranges of the voxel grid and the three planes.
    pub fn grid_ranges(&self) -> [(usize, usize); 4] {
        let v = self.dims.voxel_cells() * CHANNELS;
        let p = self.dims.plane_cells() * CHANNELS;
        [(0, v), (v, v + p), (v + p, v + 2 * p), (v + 2 * p, v + 3 * p)]
    }

    #[inline]
    fn m_of(&self, index: usize) -> f64 {
        self.quant.m_for_channel(index % CHANNELS)
    }

    /// Field with every value computed from its raw parameter.
    pub fn to_grids(&self, quantized: bool) -> FieldGrids {
        let values: Vec<f64> = self
            .raw
            .par_iter()
            .enumerate()
            .map(|(i, &r)| grid_value(r, self.m_of(i), quantized))
            .collect();
        let [v, p0, p1, p2] = self.grid_ranges();
        let part = |(a, b): (usize, usize)| Storage::Continuous(values[a..b].to_vec());
        FieldGrids::new(self.dims, self.quant, VoxelGrid::Dense(part(v)), [part(p0), part(p1), part(p2)])
            .expect("ranges match dims")
    }
}

/// One supervised ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingRay {
    pub ray: Ray,
    /// Ground-truth color over black.
    pub color: [f64; 3],
    pub opacity: f64,
}

pub fn training_rays(views: &[GroundTruthView]) -> Vec<TrainingRay> {
    let mut out = Vec::new();
    for v in views {
        for y in 0..v.camera.height {
            for x in 0..v.camera.width {
                let i = y * v.camera.width + x;
                out.push(TrainingRay { ray: v.camera.ray(x, y), color: v.image.pixel(x, y), opacity: v.opacity[i] });
            }
        }
    }
    out
}

/// Sample positions and step lengths for one ray under `strategy`.
pub fn ray_samples(
    ray: &Ray,
    grids: &FieldGrids,
    strategy: SampleStrategy,
    march: &MarchConfig,
    seed: u64,
) -> Vec<StepSample> {
    match strategy {
        SampleStrategy::StepGrid => step_grid(ray, march),
        SampleStrategy::StratifiedRefined { coarse, fine } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seg = segment_ray(ray);
            let total = seg.contracted_length();
            let arcs = stratified_then_refined_sampling(ray, grids, SampleCounts { coarse, fine }, &mut rng);
            arcs.iter()
                .enumerate()
                .map(|(i, &s)| {
                    let next = arcs.get(i + 1).copied().unwrap_or(total);
                    StepSample { position: seg.point_at_arc(s).unwrap_or_default(), delta: (next - s).max(0.0) }
                })
                .collect()
        }
    }
}

struct SampleRecord {
    stencil: Stencil,
    sample: FieldSample,
    delta: f64,
    alpha: f64,
    /// Transmittance before the sample.
    transmittance: f64,
}

/// Gradient accumulators for one shard.
#[derive(Clone, Debug)]
pub struct Gradients {
    /// With respect to grid values (not raw parameters).
    pub values: Vec<f64>,
    pub mlp: DeferredMlp,
}

impl Gradients {
    fn new(len: usize, mlp: &DeferredMlp) -> Self {
        Self { values: vec![0.0; len], mlp: mlp.zeros_like() }
    }
}

/// Squared color error of one ray; accumulates `scale ·` its gradient.
/// Stops where the marcher would, once transmittance drops below
/// `termination`.
#[allow(clippy::too_many_arguments)]
fn ray_forward_backward(
    tr: &TrainingRay,
    background: [f64; 3],
    samples: &[StepSample],
    grids: &FieldGrids,
    mlp: &DeferredMlp,
    ranges: &[(usize, usize); 4],
    scale: f64,
    termination: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let dims = grids.dims;
    let mut records = Vec::with_capacity(samples.len());
    let mut diffuse = [0.0; 3];
    let mut feature = [0.0; FEATURE_DIM];
    let mut transmittance = 1.0;
    for s in samples {
        let stencil = Stencil::new(&dims, s.position);
        let sample = FieldSample::from_preactivation(&grids.preactivation_stencil(&stencil));
        let alpha = alpha_from_density(sample.density, s.delta);
        let w = alpha * transmittance;
        for i in 0..3 {
            diffuse[i] += w * sample.diffuse[i];
        }
        for i in 0..FEATURE_DIM {
            feature[i] += w * sample.feature[i];
        }
        records.push(SampleRecord { stencil, sample, delta: s.delta, alpha, transmittance });
        transmittance *= 1.0 - alpha;
        if transmittance < termination {
            break;
        }
    }

    let trace = mlp.forward_trace(&DeferredMlp::shading_input(diffuse, &feature, tr.ray.direction))?;
    let residual = trace.output();
    let target_bg = 1.0 - tr.opacity;
    let mut err_sq = 0.0;
    let mut d_pre = [0.0; 3];
    let mut g_t = 0.0;
    for c in 0..3 {
        let pre = diffuse[c] + residual[c];
        let out = pre.clamp(0.0, 1.0) + transmittance * background[c];
        let err = out - (tr.color[c] + target_bg * background[c]);
        err_sq += err * err;
        let d_out = 2.0 * err * scale;
        g_t += d_out * background[c];
        if pre > 0.0 && pre < 1.0 {
            d_pre[c] = d_out;
        }
    }
    let d_input = mlp.backward(&trace, &d_pre, &mut grads.mlp);
    let mut g_c = [0.0; 3];
    let mut g_f = [0.0; FEATURE_DIM];
    for c in 0..3 {
        g_c[c] = d_pre[c] + d_input[c];
    }
    g_f.copy_from_slice(&d_input[3..3 + FEATURE_DIM]);

    // d/dx_k of the composite, x_k = τ_k δ_k:
    //   T_{k+1} e_k - Σ_{i>k} w_i e_i - T_final g_T
    let mut suffix = 0.0;
    for rec in records.iter().rev() {
        let s = &rec.sample;
        let e: f64 = (0..3).map(|c| s.diffuse[c] * g_c[c]).sum::<f64>()
            + (0..FEATURE_DIM).map(|c| s.feature[c] * g_f[c]).sum::<f64>();
        let w = rec.alpha * rec.transmittance;
        let t_next = rec.transmittance * (1.0 - rec.alpha);
        let d_x = t_next * e - suffix - transmittance * g_t;
        suffix += w * e;

        let mut d_t = [0.0; CHANNELS];
        d_t[0] = d_x * rec.delta * s.density;
        for c in 0..3 {
            d_t[1 + c] = w * g_c[c] * s.diffuse[c] * (1.0 - s.diffuse[c]);
        }
        for c in 0..FEATURE_DIM {
            d_t[4 + c] = w * g_f[c] * s.feature[c] * (1.0 - s.feature[c]);
        }
        if d_t.iter().all(|&g| g == 0.0) {
            continue;
        }
        let st = &rec.stencil;
        for k in 0..8 {
            let base = ranges[0].0 + st.voxel_cell(&dims, k) * CHANNELS;
            let wk = st.voxel.weights[k];
            for c in 0..CHANNELS {
                grads.values[base + c] += wk * d_t[c];
            }
        }
        for i in 0..3 {
            for k in 0..4 {
                let base = ranges[1 + i].0 + st.plane_cell(&dims, i, k) * CHANNELS;
                let wk = st.planes[i].weights[k];
                for c in 0..CHANNELS {
                    grads.values[base + c] += wk * d_t[c];
                }
            }
        }
    }
    Ok(err_sq)
}

/// Loss of a batch and its gradients.
#[derive(Clone, Debug)]
pub struct LossAndGrad {
    /// Mean squared color error.
    pub mse: f64,
    /// `mse` plus the weight-decay term.
    pub loss: f64,
    /// With respect to raw grid parameters.
    pub raw: Vec<f64>,
    pub mlp: DeferredMlp,
}

/// Background colors for a batch.
pub fn batch_backgrounds(n: usize, random: bool, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    (0..n).map(|_| if random { [rng.gen(), rng.gen(), rng.gen()] } else { [0.0; 3] }).collect()
}

fn weight_decay_term(params: &FieldParams, coefficient: f64, raw_grad: Option<&mut [f64]>) -> f64 {
    let mut total = 0.0;
    let ranges = params.grid_ranges();
    for &(a, b) in &ranges {
        let n = (b - a) as f64;
        total += coefficient * params.raw[a..b].iter().map(|r| r * r).sum::<f64>() / n;
    }
    if let Some(g) = raw_grad {
        for &(a, b) in &ranges {
            let n = (b - a) as f64;
            for i in a..b {
                g[i] += coefficient * 2.0 * params.raw[i] / n;
            }
        }
    }
    total
}

struct Workspace {
    shards: Vec<Gradients>,
}

impl Workspace {
    fn new(len: usize, mlp: &DeferredMlp) -> Self {
        Self { shards: (0..GRADIENT_SHARDS).map(|_| Gradients::new(len, mlp)).collect() }
    }
}

/// Runs every ray of `batch` into the shard accumulators and returns the
/// summed squared error. Value gradients must be zero on entry; network
/// gradients are reset here.
#[allow(clippy::too_many_arguments)]
fn accumulate(
    ws: &mut Workspace,
    params: &FieldParams,
    grids: &FieldGrids,
    mlp: &DeferredMlp,
    batch: &[TrainingRay],
    backgrounds: &[[f64; 3]],
    cfg: &FitConfig,
    march: &MarchConfig,
    sample_seed: u64,
) -> Result<f64> {
    let n = batch.len();
    let scale = 1.0 / (3 * n) as f64;
    let ranges = params.grid_ranges();
    let per_shard = n.div_ceil(GRADIENT_SHARDS);
    let sq: Vec<Result<f64>> = ws
        .shards
        .par_iter_mut()
        .enumerate()
        .map(|(s, g)| {
            g.mlp.scale(0.0);
            let mut total = 0.0;
            for i in (s * per_shard)..((s + 1) * per_shard).min(n) {
                let seed = sample_seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                let samples = ray_samples(&batch[i].ray, grids, cfg.sampling, march, seed);
                let t = march.termination_transmittance;
                total += ray_forward_backward(&batch[i], backgrounds[i], &samples, grids, mlp, &ranges, scale, t, g)?;
            }
            Ok(total)
        })
        .collect();
    let mut err = 0.0;
    for s in sq {
        err += s?;
    }
    Ok(err)
}

impl Workspace {
    /// Shard sum of the value gradient at `i`, in shard order.
    #[inline]
    fn value_grad(&self, i: usize) -> f64 {
        self.shards.iter().map(|s| s.values[i]).sum()
    }

    fn mlp_grad(&self) -> DeferredMlp {
        let mut total = self.shards[0].mlp.clone();
        for s in &self.shards[1..] {
            total.add_assign(&s.mlp);
        }
        total
    }
}

#[allow(clippy::too_many_arguments)]
fn loss_and_grad_in(
    ws: &mut Workspace,
    params: &FieldParams,
    grids: &FieldGrids,
    mlp: &DeferredMlp,
    batch: &[TrainingRay],
    backgrounds: &[[f64; 3]],
    cfg: &FitConfig,
    march: &MarchConfig,
    sample_seed: u64,
) -> Result<LossAndGrad> {
    let err = accumulate(ws, params, grids, mlp, batch, backgrounds, cfg, march, sample_seed)?;
    let mut raw: Vec<f64> = (0..params.raw.len())
        .map(|i| match ws.value_grad(i) {
            0.0 => 0.0,
            g => g * grid_value_grad(params.raw[i], params.m_of(i)),
        })
        .collect();
    let mse = err / (3 * batch.len()) as f64;
    let loss = mse + weight_decay_term(params, cfg.weight_decay, Some(&mut raw));
    Ok(LossAndGrad { mse, loss, raw, mlp: ws.mlp_grad() })
}

/// Mutable continuous value arrays of the voxel grid and the three planes.
fn value_slices(grids: &mut FieldGrids) -> [&mut [f64]; 4] {
    let [p0, p1, p2] = &mut grids.planes;
    match (&mut grids.voxel, p0, p1, p2) {
        (
            VoxelGrid::Dense(Storage::Continuous(v)),
            Storage::Continuous(a),
            Storage::Continuous(b),
            Storage::Continuous(c),
        ) => [v, a, b, c],
        _ => unreachable!("training grids are dense and continuous"),
    }
}

/// Per-parameter optimizer state for the grids.
struct GridOptimizer {
    adam: Adam,
    /// `σ(raw)`, refreshed with every update.
    sigma: Vec<f64>,
}

impl GridOptimizer {
    fn new(params: &FieldParams) -> Self {
        Self { adam: Adam::new(params.raw.len()), sigma: params.raw.iter().map(|&r| sigmoid(r)).collect() }
    }

    /// One step on every raw grid parameter, fused with the shard reduction,
    /// the chain rule through the value map, weight decay and the refresh of
    /// the field values. Zeroes the shard value gradients. Returns false on a
    /// non-finite gradient.
    fn step(&mut self, params: &mut FieldParams, grids: &mut FieldGrids, ws: &mut Workspace, lr: f64, cfg: &FitConfig) -> bool {
        let ranges = params.grid_ranges();
        let (c1, c2) = self.adam.begin_step(cfg);
        let mut finite = true;
        for (slice, &(a, b)) in value_slices(grids).into_iter().zip(&ranges) {
            let decay = 2.0 * cfg.weight_decay / (b - a) as f64;
            for (i, value) in (a..b).zip(slice.iter_mut()) {
                let mut g_value = 0.0;
                for shard in ws.shards.iter_mut() {
                    g_value += std::mem::take(&mut shard.values[i]);
                }
                let r = params.raw[i];
                let m = params.quant.m_for_channel(i % CHANNELS);
                let s = self.sigma[i];
                let g = g_value * (2.0 * m * s * (1.0 - s) * quantize_value_grad(s)) + decay * r;
                if g == 0.0 && self.adam.m[i] == 0.0 && self.adam.v[i] == 0.0 {
                    continue;
                }
                finite &= g.is_finite();
                self.adam.apply(i, &mut params.raw[i], g, lr, c1, c2, cfg);
                let s = sigmoid(params.raw[i]);
                self.sigma[i] = s;
                let unit = if cfg.quantization_aware { quantize_value(s) } else { s };
                *value = 2.0 * m * unit - m;
            }
        }
        finite
    }
}

/// Loss and gradients of `batch` at `params`; `sample_seed` fixes the
/// sample placement of randomized strategies.
pub fn loss_and_grad(
    params: &FieldParams,
    mlp: &DeferredMlp,
    batch: &[TrainingRay],
    backgrounds: &[[f64; 3]],
    cfg: &FitConfig,
    march: &MarchConfig,
    sample_seed: u64,
) -> Result<LossAndGrad> {
    let grids = params.to_grids(cfg.quantization_aware);
    let mut ws = Workspace::new(params.raw.len(), mlp);
    loss_and_grad_in(&mut ws, params, &grids, mlp, batch, backgrounds, cfg, march, sample_seed)
}

/// Loss alone, for finite-difference checks.
pub fn batch_loss(
    params: &FieldParams,
    mlp: &DeferredMlp,
    batch: &[TrainingRay],
    backgrounds: &[[f64; 3]],
    cfg: &FitConfig,
    march: &MarchConfig,
    sample_seed: u64,
) -> Result<f64> {
    Ok(loss_and_grad(params, mlp, batch, backgrounds, cfg, march, sample_seed)?.loss)
}

/// Adam moments for a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    /// Advances the step counter; returns the bias corrections.
    pub fn begin_step(&mut self, cfg: &FitConfig) -> (f64, f64) {
        self.step += 1;
        (1.0 - cfg.beta1.powi(self.step), 1.0 - cfg.beta2.powi(self.step))
    }

    #[allow(clippy::too_many_arguments)]
    #[inline]
    pub fn apply(&mut self, i: usize, p: &mut f64, g: f64, lr: f64, c1: f64, c2: f64, cfg: &FitConfig) {
        let (m, v) = (&mut self.m[i], &mut self.v[i]);
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let denom = (*v / c2).sqrt() + cfg.epsilon;
        if denom > 0.0 {
            *p -= lr * (*m / c1) / denom;
        }
    }

    pub fn update<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = f64>,
        lr: f64,
        cfg: &FitConfig,
    ) {
        let (c1, c2) = self.begin_step(cfg);
        for (i, (p, g)) in params.zip(grads).enumerate() {
            self.apply(i, p, g, lr, c1, c2, cfg);
        }
    }
}

fn mlp_params_mut(mlp: &mut DeferredMlp) -> impl Iterator<Item = &mut f64> {
    mlp.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
}

fn mlp_params(mlp: &DeferredMlp) -> impl Iterator<Item = f64> + '_ {
    mlp.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
}

/// Output of [`fit_field`].
#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: FieldParams,
    /// Field values in the mode used for training.
    pub grids: FieldGrids,
    pub mlp: DeferredMlp,
    pub history: Vec<LossRecord>,
    pub quantization_aware: bool,
    pub seed: u64,
}

impl FitResult {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            grids: self.grids.clone(),
            mlp: self.mlp.clone(),
            quantization_aware: self.quantization_aware,
            seed: self.seed,
            history: self.history.clone(),
        }
    }
}

/// Fits grids and the shading network to ground-truth views. `progress`
/// receives each loss record.
pub fn fit_field(
    views: &[GroundTruthView],
    dims: GridDims,
    cfg: &FitConfig,
    mut progress: impl FnMut(&LossRecord),
) -> Result<FitResult> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::InvalidConfig("need at least one training view".into()));
    }
    let rays = training_rays(views);
    let march = MarchConfig::for_plane_res(dims.plane_res);
    let mut params = FieldParams::zeros(dims);
    let mut mlp = DeferredMlp::init(cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grid_opt = GridOptimizer::new(&params);
    let mut mlp_opt = Adam::new(mlp.parameter_count());
    let mut ws = Workspace::new(params.raw.len(), &mlp);
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut grids = params.to_grids(cfg.quantization_aware);
    for it in 0..cfg.iterations {
        let batch: Vec<TrainingRay> = (0..cfg.batch_rays).map(|_| rays[rng.gen_range(0..rays.len())]).collect();
        let bgs = batch_backgrounds(batch.len(), cfg.random_background, &mut rng);
        let sample_seed: u64 = rng.gen();
        let err = accumulate(&mut ws, &params, &grids, &mlp, &batch, &bgs, cfg, &march, sample_seed)?;
        let mse = err / (3 * batch.len()) as f64;
        let non_finite = |detail: String| Error::NonFiniteLoss { iteration: it, detail };
        if !mse.is_finite() {
            return Err(non_finite(format!("loss {mse} with {} rays", batch.len())));
        }
        let lr = cfg.learning_rate(it);
        if !grid_opt.step(&mut params, &mut grids, &mut ws, lr, cfg) {
            return Err(non_finite("grid gradient".into()));
        }
        let g_mlp: Vec<f64> = mlp_params(&ws.mlp_grad()).collect();
        if g_mlp.iter().any(|g| !g.is_finite()) {
            return Err(non_finite("network gradient".into()));
        }
        mlp_opt.update(mlp_params_mut(&mut mlp), g_mlp.into_iter(), lr, cfg);
        let record = LossRecord { iteration: it, loss: mse, psnr: psnr_from_mse(mse) };
        if cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == cfg.iterations) {
            log::info!("iter {it:>5}  loss {:.6}  psnr {:.2}  lr {lr:.2e}", record.loss, record.psnr);
        }
        progress(&record);
        history.push(record);
    }
    Ok(FitResult { params, grids, mlp, history, quantization_aware: cfg.quantization_aware, seed: cfg.seed })
}

/// Mean PSNR of the renderer's output for `field` over `views` (brute-force
/// marching, black background).
pub fn evaluate_views<F: crate::field::RadianceField + ?Sized>(
    field: &F,
    mlp: &DeferredMlp,
    views: &[GroundTruthView],
    march: &MarchConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for v in views {
        let r = render_with(&v.camera, field, MarchMode::Reference, mlp, march)?;
        total += crate::render::psnr(&r.to_rgb8(), &v.image.to_rgb8())?;
    }
    Ok(total / views.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    #[test]
    fn learning_rate_schedule() {
        let cfg = FitConfig { iterations: 1100, ..FitConfig::default() };
        assert!((cfg.learning_rate(0) - 1e-4).abs() < 1e-16);
        assert!((cfg.learning_rate(50) - 1e-3).abs() < 1e-15);
        assert!((cfg.learning_rate(100) - 1e-2).abs() < 1e-15);
        assert!((cfg.learning_rate(1099) - 1e-3).abs() < 1e-15);
        assert!(cfg.learning_rate(600) < cfg.learning_rate(300));
    }

    fn tiny_setup() -> (FieldParams, DeferredMlp, Vec<TrainingRay>) {
        let dims = GridDims::new(5, 8).unwrap();
        let mut params = FieldParams::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        params.raw.iter_mut().for_each(|r| *r = rng.gen_range(-0.6..0.6));
        let rays = (0..6)
            .map(|i| TrainingRay {
                ray: Ray::new(
                    Vec3::new(-2.5, 0.1 * i as f64, 0.3),
                    Vec3::new(1.0, -0.05, 0.02 * i as f64).normalized(),
                    0.0,
                    8.0,
                )
                .unwrap(),
                color: [0.2, 0.5, 0.7],
                opacity: 0.8,
            })
            .collect();
        (params, DeferredMlp::init(2), rays)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (params, mlp, rays) = tiny_setup();
        let cfg = FitConfig { quantization_aware: false, ..FitConfig::default() };
        let march = MarchConfig::for_plane_res(8);
        let bgs = batch_backgrounds(rays.len(), true, &mut ChaCha8Rng::seed_from_u64(1));
        let lg = loss_and_grad(&params, &mlp, &rays, &bgs, &cfg, &march, 0).unwrap();
        let mut checked = 0;
        for i in (0..params.raw.len()).filter(|&i| lg.raw[i].abs() > 1e-7).step_by(37).take(10) {
            let h = 1e-3;
            let mut p = params.clone();
            p.raw[i] += h;
            let up = batch_loss(&p, &mlp, &rays, &bgs, &cfg, &march, 0).unwrap();
            p.raw[i] -= 2.0 * h;
            let down = batch_loss(&p, &mlp, &rays, &bgs, &cfg, &march, 0).unwrap();
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - lg.raw[i]).abs() / fd.abs().max(lg.raw[i].abs());
            assert!(rel < 1e-3, "cell {i}: analytic {} fd {fd}", lg.raw[i]);
            checked += 1;
        }
        assert_eq!(checked, 10);
    }

    #[test]
    fn straight_through_gradient_is_mode_independent() {
        let (params, mlp, rays) = tiny_setup();
        let march = MarchConfig::for_plane_res(8);
        let bgs = vec![[0.0; 3]; rays.len()];
        // raw values that already sit on quantization levels give identical
        // fields in both modes, hence identical gradients
        let mut p = params.clone();
        for r in p.raw.iter_mut() {
            let unit = crate::field::quantize::encode_cell(*r) as f64 / 255.0;
            *r = (unit / (1.0 - unit)).ln().clamp(-30.0, 30.0);
        }
        let qat = FitConfig { quantization_aware: true, ..FitConfig::default() };
        let plain = FitConfig { quantization_aware: false, ..FitConfig::default() };
        let a = loss_and_grad(&p, &mlp, &rays, &bgs, &qat, &march, 0).unwrap();
        let b = loss_and_grad(&p, &mlp, &rays, &bgs, &plain, &march, 0).unwrap();
        let max_diff = a.raw.iter().zip(&b.raw).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let scale = a.raw.iter().map(|g| g.abs()).fold(0.0, f64::max);
        assert!(max_diff <= 1e-9 * scale, "{max_diff} vs {scale}");
    }

    #[test]
    fn shard_reduction_is_thread_independent() {
        let (params, mlp, rays) = tiny_setup();
        let cfg = FitConfig::default();
        let march = MarchConfig::for_plane_res(8);
        let bgs = vec![[0.3; 3]; rays.len()];
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| loss_and_grad(&params, &mlp, &rays, &bgs, &cfg, &march, 0).unwrap())
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.raw, b.raw);
    }
}
