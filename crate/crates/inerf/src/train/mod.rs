//! Task-sequenced training: self-distillation with generated past rays, plus
//! the five baselines (plain incremental, joint upper bound, Fisher-penalty
//! regularization, prune-and-freeze isolation, loss-weighted replay), all
//! behind one method-state interface with exact auxiliary-memory accounting.

mod ewc;
mod meil;
mod packnet;
mod replay;

pub use ewc::estimate_fisher_diagonal;
pub use packnet::{free_param_count, masked_params};
pub use replay::{select_exemplars, ReplayRecord, REPLAY_RECORD_BYTES};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::{pixel_ray, Intrinsics, Pose, Ray};
use crate::error::{Error, Result};
use crate::metrics::{ms_ssim, psnr, ImageBuffer};
use crate::mlp::{NetworkConfig, ParamSet};
use crate::render::{render_batch_backward, render_image, LossKind, SampleSpec};
use crate::rgn::{RgnConfig, RgnState};
use crate::scene::Aabb;

/// One posed ground-truth image.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub image: ImageBuffer,
    pub pose: Pose,
}

/// The unit of incremental arrival: N posed views sharing intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    /// 1-based arrival index.
    pub index: usize,
    pub views: Vec<View>,
    pub intrinsics: Intrinsics,
}

impl Task {
    pub fn validate(&self) -> Result<()> {
        if self.views.len() < 2 {
            return Err(Error::Config(
                "a task needs more than one view; geometry is unconstrained otherwise".into(),
            ));
        }
        self.intrinsics.validate()
    }
}

/// Progress-dependent weight of the past-data loss term.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    S1,
    S2,
    S3,
    S4,
    S5,
    Constant(f64),
}

/// Evaluates the schedule at progress `r` in [0, 1].
///
/// S2 and S3 are normalized to climb from 0 to 1 via `(1 + cos(..)) / 2`.
pub fn lambda_p(schedule: LambdaSchedule, r: f64) -> f64 {
    use std::f64::consts::PI;
    debug_assert!((0.0..=1.0).contains(&r));
    match schedule {
        LambdaSchedule::S1 => (PI / 2.0 * (1.0 - r)).cos(),
        LambdaSchedule::S2 => (1.0 + (PI * (1.0 + r)).cos()) / 2.0,
        LambdaSchedule::S3 => (1.0 + (PI * (1.0 + 3.0 * r)).cos()) / 2.0,
        LambdaSchedule::S4 => 10f64.powf((PI * (1.0 + 1.5 * r)).cos()),
        LambdaSchedule::S5 => 10f64.powf((PI * (1.0 + 3.5 * r)).cos()),
        LambdaSchedule::Constant(v) => v,
    }
}

/// Where the self-distillation trainer gets its past rays from. `Rgn` is the
/// real method; the other two are ablation arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PastRaySource {
    Rgn,
    /// Oracle: true principal rays of past tasks, kept by the harness.
    GroundTruth,
    /// Directions uniform on the sphere, origins uniform in the scene bounds.
    Random,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub sample: SampleSpec,
    /// Current-task rays per iteration.
    pub m_c: usize,
    /// Past rays per iteration (self-distillation and replay).
    pub m_p: usize,
    pub iterations_per_view: usize,
    pub lr: f64,
    pub eps_charbonnier: f64,
    pub lambda_schedule: LambdaSchedule,
    pub seed: u64,
    pub past_rays: PastRaySource,
    /// Scene bounds, used only by the random-ray ablation arm.
    pub random_ray_bounds: Aabb,
    pub ewc_weight: f64,
    pub ewc_fisher_batches: usize,
    pub prune_rate: f64,
    /// Fraction of the task iteration budget spent retraining after pruning.
    pub packnet_retrain_fraction: f64,
    pub replay_capacity: usize,
    pub rgn: RgnConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_c < 1 {
            return Err(Error::Config("m_c must be at least 1".into()));
        }
        if !(self.eps_charbonnier > 0.0) {
            return Err(Error::Config("Charbonnier eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.prune_rate) {
            return Err(Error::Config("prune rate must be in [0, 1)".into()));
        }
        self.sample.validate()
    }

    pub fn iterations_for(&self, n_views: usize) -> usize {
        self.iterations_per_view * n_views
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            network: NetworkConfig::default(),
            sample: SampleSpec { samples: 32, z_near: 0.5, z_far: 4.5, stratified: true },
            m_c: 1024,
            m_p: 512,
            iterations_per_view: 3000,
            lr: 5e-4,
            eps_charbonnier: 1e-3,
            lambda_schedule: LambdaSchedule::S2,
            seed: 0,
            past_rays: PastRaySource::Rgn,
            random_ray_bounds: Aabb { min: [-1.0; 3], max: [1.0; 3] },
            ewc_weight: 20.0,
            ewc_fisher_batches: 32,
            prune_rate: 0.5,
            packnet_retrain_fraction: 0.5,
            replay_capacity: 512,
            rgn: RgnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Meil,
    Incre,
    Joint,
    Ewc,
    PackNet,
    Replay,
}

impl MethodKind {
    pub const ALL: [MethodKind; 6] = [
        MethodKind::Meil,
        MethodKind::Incre,
        MethodKind::Joint,
        MethodKind::Ewc,
        MethodKind::PackNet,
        MethodKind::Replay,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Meil => "meil",
            MethodKind::Incre => "incre",
            MethodKind::Joint => "joint",
            MethodKind::Ewc => "ewc",
            MethodKind::PackNet => "packnet",
            MethodKind::Replay => "replay",
        }
    }

    fn stream_tag(&self) -> u64 {
        match self {
            MethodKind::Meil => 1,
            MethodKind::Incre => 2,
            MethodKind::Joint => 3,
            MethodKind::Ewc => 4,
            MethodKind::PackNet => 5,
            MethodKind::Replay => 6,
        }
    }
}

impl std::str::FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "meil" => Ok(MethodKind::Meil),
            "incre" => Ok(MethodKind::Incre),
            "joint" => Ok(MethodKind::Joint),
            "ewc" => Ok(MethodKind::Ewc),
            "packnet" => Ok(MethodKind::PackNet),
            "replay" => Ok(MethodKind::Replay),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Per-method auxiliary storage.
#[derive(Debug, Clone, PartialEq)]
pub enum Aux {
    None,
    Meil {
        /// Frozen teacher from before the current task.
        snapshot: Option<ParamSet>,
        rgn: RgnState,
        /// Ground-truth principal rays seen so far; only the oracle ablation
        /// arm reads these.
        gt_principals: Vec<Ray>,
    },
    Ewc {
        fisher: Vec<f64>,
        anchor: Vec<f64>,
        weight: f64,
    },
    PackNet {
        /// Per-parameter owner: 0 = free, t = frozen by task t.
        mask: Vec<u8>,
    },
    Replay {
        buffer: Vec<ReplayRecord>,
    },
}

/// A method's full mutable state across a task sequence.
#[derive(Debug, Clone)]
pub struct MethodState {
    pub kind: MethodKind,
    pub nerf: ParamSet,
    pub aux: Aux,
    /// Number of tasks trained so far.
    pub tasks_seen: usize,
}

impl MethodState {
    /// Fresh state with seeded network init. All methods with the same seed
    /// start from bit-identical parameters.
    pub fn new(kind: MethodKind, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(cfg.seed, &[0xA11C, 0]);
        let nerf = cfg.network.init_params(&mut rng)?;
        let aux = match kind {
            MethodKind::Meil => Aux::Meil {
                snapshot: None,
                rgn: RgnState::init(&cfg.rgn, &mut stream_rng(cfg.seed, &[0xA11C, 1]))?,
                gt_principals: vec![],
            },
            MethodKind::Ewc => Aux::Ewc { fisher: vec![], anchor: vec![], weight: cfg.ewc_weight },
            MethodKind::PackNet => Aux::PackNet { mask: vec![0; nerf.num_params()] },
            MethodKind::Replay => Aux::Replay { buffer: vec![] },
            MethodKind::Incre | MethodKind::Joint => Aux::None,
        };
        Ok(MethodState { kind, nerf, aux, tasks_seen: 0 })
    }

    /// Exact auxiliary byte count, the memory-accounting comparison:
    /// snapshot + ray network for self-distillation (constant in T), Fisher +
    /// anchor for the penalty baseline, one mask byte per parameter for
    /// isolation, and capacity * record size per task for replay.
    pub fn aux_bytes(&self) -> usize {
        match &self.aux {
            Aux::None => 0,
            Aux::Meil { rgn, .. } => self.nerf.byte_size() + rgn.params().byte_size(),
            Aux::Ewc { .. } => 2 * self.nerf.byte_size() + std::mem::size_of::<f64>(),
            Aux::PackNet { mask } => mask.len(),
            Aux::Replay { buffer } => buffer.len() * REPLAY_RECORD_BYTES,
        }
    }

    /// Parameters used to render task `t`'s views. Identity for everything
    /// except prune-and-freeze, which evaluates the task's subnetwork.
    pub fn eval_params(&self, t: usize) -> ParamSet {
        match &self.aux {
            Aux::PackNet { mask } => masked_params(&self.nerf, mask, t as u8),
            _ => self.nerf.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// RNG streams
// ---------------------------------------------------------------------------

/// Independent deterministic stream for (`seed`, tag path). Distinct paths
/// give statistically independent streams, so auxiliary draws (Fisher
/// batches, past-ray synthesis) never perturb the main training stream.
pub fn stream_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut x = seed ^ 0x6a09e667f3bcc908;
    for &t in tags {
        x ^= t.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(x << 6).wrapping_add(x >> 2);
        // splitmix64 finalizer
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
        x ^= x >> 31;
    }
    ChaCha8Rng::seed_from_u64(x)
}

pub(crate) const STREAM_TRAIN: u64 = 10;
pub(crate) const STREAM_PAST: u64 = 11;
pub(crate) const STREAM_AUX: u64 = 12;

pub(crate) fn task_rng(cfg: &TrainConfig, kind: MethodKind, task: usize, stream: u64) -> ChaCha8Rng {
    // the main training stream is shared across methods so that reductions
    // (penalty weight 0, lambda_p == 0, joint on one task) are bit-exact
    let tag = if stream == STREAM_TRAIN { 0 } else { kind.stream_tag() };
    stream_rng(cfg.seed, &[tag, task as u64, stream])
}

// ---------------------------------------------------------------------------
// Batch sampling
// ---------------------------------------------------------------------------

/// Uniform i.i.d. pixel batch over the given views: each draw picks a view,
/// a column and a row, and returns the pixel's ray and ground-truth color.
pub fn sample_batch(
    views: &[&View],
    intr: &Intrinsics,
    m: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<Ray>, Vec<[f64; 3]>)> {
    if views.is_empty() {
        return Err(Error::Domain("sample_batch: no views".into()));
    }
    let mut rays = Vec::with_capacity(m);
    let mut colors = Vec::with_capacity(m);
    for _ in 0..m {
        let view = views[rng.gen_range(0..views.len())];
        let u = rng.gen_range(0..intr.width);
        let v = rng.gen_range(0..intr.height);
        rays.push(pixel_ray(intr, &view.pose, u, v)?);
        colors.push(view.image.get(u, v));
    }
    Ok((rays, colors))
}

/// Every pixel of every view exactly once, in scan order.
pub fn exhaustive_batch(views: &[&View], intr: &Intrinsics) -> Result<(Vec<Ray>, Vec<[f64; 3]>)> {
    let mut rays = vec![];
    let mut colors = vec![];
    for view in views {
        for v in 0..intr.height {
            for u in 0..intr.width {
                rays.push(pixel_ray(intr, &view.pose, u, v)?);
                colors.push(view.image.get(u, v));
            }
        }
    }
    Ok((rays, colors))
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Combined training loss: mean squared error on the current batch plus the
/// weighted mean Charbonnier penalty on the past batch.
pub fn meil_loss(
    pred_current: &[[f64; 3]],
    gt_current: &[[f64; 3]],
    pred_past: &[[f64; 3]],
    distilled_past: &[[f64; 3]],
    lambda: f64,
    eps: f64,
) -> f64 {
    let current: f64 = pred_current
        .iter()
        .zip(gt_current)
        .map(|(p, g)| (0..3).map(|ch| (p[ch] - g[ch]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / pred_current.len() as f64;
    if pred_past.is_empty() {
        return current;
    }
    let past: f64 = pred_past
        .iter()
        .zip(distilled_past)
        .map(|(p, g)| crate::render::charbonnier([p[0] - g[0], p[1] - g[1], p[2] - g[2]], eps))
        .sum::<f64>()
        / pred_past.len() as f64;
    current + lambda * past
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adaptive-moment gradient descent. State is reset at every task boundary
/// so stale moments never leak across frozen-target shifts.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step_masked(params, grad, None)
    }

    /// Update restricted to `active` parameters when a mask is given.
    pub fn step_masked(&mut self, params: &mut [f64], grad: &[f64], active: Option<&[bool]>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if let Some(mask) = active {
                if !mask[i] {
                    continue;
                }
            }
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Per-method task training
// ---------------------------------------------------------------------------

/// Plain training loop on a view set: L2 on i.i.d. pixel batches. Shared by
/// the incremental and joint baselines, and by reductions of the others.
fn train_on_views(
    params: &mut ParamSet,
    cfg: &TrainConfig,
    views: &[&View],
    intr: &Intrinsics,
    iterations: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut adam = Adam::new(cfg.lr, params.num_params());
    let mut grad = vec![0.0; params.num_params()];
    for _ in 0..iterations {
        let (rays, colors) = sample_batch(views, intr, cfg.m_c, rng)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        render_batch_backward(params, &cfg.network, &rays, &colors, LossKind::L2, 1.0, &cfg.sample, rng, &mut grad)?;
        adam.step(params.data_mut(), &grad);
    }
    Ok(())
}

/// Trains the current task with only its own data.
pub fn train_task_incre(state: &mut MethodState, task: &Task, cfg: &TrainConfig) -> Result<()> {
    debug_assert_eq!(state.kind, MethodKind::Incre);
    task.validate()?;
    let views: Vec<&View> = task.views.iter().collect();
    let mut rng = task_rng(cfg, state.kind, task.index, STREAM_TRAIN);
    train_on_views(
        &mut state.nerf,
        cfg,
        &views,
        &task.intrinsics,
        cfg.iterations_for(task.views.len()),
        &mut rng,
    )?;
    state.tasks_seen = task.index;
    Ok(())
}

/// Upper bound: batches drawn uniformly over every task seen so far.
pub fn train_task_joint(state: &mut MethodState, tasks_so_far: &[Task], cfg: &TrainConfig) -> Result<()> {
    debug_assert_eq!(state.kind, MethodKind::Joint);
    let current = tasks_so_far.last().ok_or_else(|| Error::Domain("joint: no tasks".into()))?;
    current.validate()?;
    let views: Vec<&View> = tasks_so_far.iter().flat_map(|t| t.views.iter()).collect();
    let mut rng = task_rng(cfg, state.kind, current.index, STREAM_TRAIN);
    train_on_views(
        &mut state.nerf,
        cfg,
        &views,
        &current.intrinsics,
        cfg.iterations_for(current.views.len()),
        &mut rng,
    )?;
    state.tasks_seen = current.index;
    Ok(())
}

/// Dispatches one task of training to the method implementation. `tasks_so_far`
/// must end with the current task; only the joint baseline and the oracle
/// ablation arm look past the last element.
pub fn train_task(state: &mut MethodState, tasks_so_far: &[Task], cfg: &TrainConfig) -> Result<()> {
    let task = tasks_so_far.last().ok_or_else(|| Error::Domain("train_task: no tasks".into()))?;
    match state.kind {
        MethodKind::Incre => train_task_incre(state, task, cfg),
        MethodKind::Joint => train_task_joint(state, tasks_so_far, cfg),
        MethodKind::Meil => meil::train_task(state, task, cfg),
        MethodKind::Ewc => ewc::train_task(state, task, cfg),
        MethodKind::PackNet => packnet::train_task(state, task, cfg),
        MethodKind::Replay => replay::train_task(state, task, cfg),
    }
}

// ---------------------------------------------------------------------------
// Evaluation and sequencing
// ---------------------------------------------------------------------------

/// One evaluation record: metrics of task `eval_task`'s views after having
/// trained through task `trained`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub trained: usize,
    pub eval_task: usize,
    pub psnr_db: f64,
    pub msssim: f64,
    pub aux_bytes: usize,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn row(&self, trained: usize, eval_task: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.trained == trained && r.eval_task == eval_task)
    }
}

/// Renders every view of `task` with the method's evaluation parameters and
/// averages PSNR / MS-SSIM against the ground truth.
pub fn evaluate_task(state: &MethodState, task: &Task, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let params = state.eval_params(task.index);
    let spec = SampleSpec { stratified: false, ..cfg.sample };
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for view in &task.views {
        let rendered = render_image(&params, &cfg.network, &task.intrinsics, &view.pose, &spec, 0)?;
        psnr_sum += psnr(&rendered, &view.image)?;
        ssim_sum += ms_ssim(&rendered, &view.image)?;
    }
    let n = task.views.len() as f64;
    Ok((psnr_sum / n, ssim_sum / n))
}

/// Trains the task sequence in order, evaluating every seen task after each
/// one. The per-task callback (if any) sees the state at each boundary, e.g.
/// for checkpointing.
pub fn run_sequence(
    tasks: &[Task],
    kind: MethodKind,
    cfg: &TrainConfig,
    label: &str,
    mut on_task: impl FnMut(&MethodState, &MetricsLog) -> Result<()>,
) -> Result<(MethodState, MetricsLog)> {
    if tasks.is_empty() {
        return Err(Error::Domain("run_sequence: no tasks".into()));
    }
    let mut state = MethodState::new(kind, cfg)?;
    let mut log = MetricsLog::default();
    for t in 0..tasks.len() {
        let start = std::time::Instant::now();
        train_task(&mut state, &tasks[..=t], cfg)?;
        let wall_s = start.elapsed().as_secs_f64();
        let aux = state.aux_bytes();
        for eval_task in &tasks[..=t] {
            let (p, s) = evaluate_task(&state, eval_task, cfg)?;
            if !p.is_finite() || !s.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite metrics for {label} task {}",
                    eval_task.index
                )));
            }
            log.rows.push(MetricsRow {
                method: label.to_string(),
                trained: t + 1,
                eval_task: eval_task.index,
                psnr_db: p,
                msssim: s,
                aux_bytes: aux,
                wall_s,
            });
        }
        on_task(&state, &log)?;
    }
    Ok((state, log))
}
