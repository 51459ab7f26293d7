//! Replay baseline: after each task, store a loss-weighted sample of its
//! pixels (ray + color, compact f32 records) and mix them into later tasks'
//! batches under an L2 loss. Memory grows linearly with the task count.

use rand::Rng;

use crate::camera::Ray;
use crate::error::{Error, Result};
use crate::render::{render_batch_backward, render_ray, LossKind, SampleSpec};

use super::{
    exhaustive_batch, sample_batch, task_rng, Adam, Aux, MethodKind, MethodState, Task,
    TrainConfig, View, STREAM_AUX, STREAM_PAST, STREAM_TRAIN,
};

/// One stored exemplar: ray origin, ray direction, ground-truth color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayRecord {
    pub origin: [f32; 3],
    pub direction: [f32; 3],
    pub color: [f32; 3],
}

/// 9 f32 scalars per record.
pub const REPLAY_RECORD_BYTES: usize = 9 * std::mem::size_of::<f32>();

impl ReplayRecord {
    pub fn new(ray: &Ray, color: [f64; 3]) -> Self {
        ReplayRecord {
            origin: ray.origin.map(|x| x as f32),
            direction: ray.direction.map(|x| x as f32),
            color: color.map(|x| x as f32),
        }
    }

    pub fn ray(&self) -> Ray {
        Ray {
            origin: self.origin.map(f64::from),
            direction: self.direction.map(f64::from),
        }
    }

    pub fn color_f64(&self) -> [f64; 3] {
        self.color.map(f64::from)
    }
}

/// Samples `k` indices without replacement with probability proportional to
/// `weights` (weighted reservoir keys: rank by `u^(1/w)`). Zero or negative
/// weights never win unless everything is zero, in which case the draw
/// degenerates to uniform.
pub fn select_exemplars(weights: &[f64], k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if k > weights.len() {
        return Err(Error::Domain(format!(
            "cannot select {k} exemplars from {} candidates",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Numeric("exemplar weights must be finite and nonnegative".into()));
    }
    let all_zero = weights.iter().all(|&w| w == 0.0);
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let key = if all_zero { u } else if w == 0.0 { 0.0 } else { u.powf(1.0 / w) };
            (key, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = keyed[..k].iter().map(|&(_, i)| i).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn train_task(state: &mut MethodState, task: &Task, cfg: &TrainConfig) -> Result<()> {
    debug_assert_eq!(state.kind, MethodKind::Replay);
    task.validate()?;
    let t = task.index;
    let Aux::Replay { buffer } = &mut state.aux else {
        return Err(Error::Config("method state is not a replay state".into()));
    };
    let views: Vec<&View> = task.views.iter().collect();
    let intr = &task.intrinsics;
    let mut rng = task_rng(cfg, MethodKind::Replay, t, STREAM_TRAIN);
    let mut rng_past = task_rng(cfg, MethodKind::Replay, t, STREAM_PAST);
    let mut adam = Adam::new(cfg.lr, state.nerf.num_params());
    let mut grad = vec![0.0; state.nerf.num_params()];

    for _ in 0..cfg.iterations_for(task.views.len()) {
        let (rays, colors) = sample_batch(&views, intr, cfg.m_c, &mut rng)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        render_batch_backward(
            &state.nerf,
            &cfg.network,
            &rays,
            &colors,
            LossKind::L2,
            1.0,
            &cfg.sample,
            &mut rng,
            &mut grad,
        )?;
        if !buffer.is_empty() && cfg.m_p > 0 {
            let (past_rays, past_colors): (Vec<Ray>, Vec<[f64; 3]>) = (0..cfg.m_p)
                .map(|_| {
                    let rec = &buffer[rng_past.gen_range(0..buffer.len())];
                    (rec.ray(), rec.color_f64())
                })
                .unzip();
            render_batch_backward(
                &state.nerf,
                &cfg.network,
                &past_rays,
                &past_colors,
                LossKind::L2,
                1.0,
                &cfg.sample,
                &mut rng_past,
                &mut grad,
            )?;
        }
        adam.step(state.nerf.data_mut(), &grad);
    }

    // store this task's exemplars, weighted by per-pixel squared error of the
    // freshly trained network
    if cfg.replay_capacity > 0 {
        let (rays, colors) = exhaustive_batch(&views, intr)?;
        let spec = SampleSpec { stratified: false, ..cfg.sample };
        let mut rng_aux = task_rng(cfg, MethodKind::Replay, t, STREAM_AUX);
        let losses: Vec<f64> = rays
            .iter()
            .zip(&colors)
            .map(|(ray, gt)| {
                let pred = render_ray(&state.nerf, &cfg.network, ray, &spec, &mut rng_aux)?.color;
                Ok((0..3).map(|ch| (pred[ch] - gt[ch]).powi(2)).sum::<f64>())
            })
            .collect::<Result<_>>()?;
        let k = cfg.replay_capacity.min(rays.len());
        for i in select_exemplars(&losses, k, &mut rng_aux)? {
            buffer.push(ReplayRecord::new(&rays[i], colors[i]));
        }
    }
    state.tasks_seen = t;
    Ok(())
}
