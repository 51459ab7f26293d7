//! Self-distillation trainer: before each task the network is snapshotted
//! and frozen; past rays (from the ray generator, or an ablation source) are
//! rendered through the snapshot to produce pseudo ground truth, and the live
//! network learns the current task under L2 plus a scheduled Charbonnier
//! penalty toward that pseudo ground truth.

use rand::Rng;

use crate::camera::{self, principal_ray, sample_nonprincipal, Intrinsics, Ray};
use crate::error::{Error, Result};
use crate::render::{render_batch_backward, render_ray, LossKind, SampleSpec};
use crate::rgn::{generate_past_rays, rgn_update};
use crate::scene::Aabb;

use super::{
    lambda_p, sample_batch, task_rng, Adam, Aux, MethodKind, MethodState, PastRaySource, Task,
    TrainConfig, STREAM_PAST, STREAM_TRAIN,
};

fn uniform_unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = camera::norm(v);
        if n > 1e-3 && n <= 1.0 {
            return camera::scale(v, 1.0 / n);
        }
    }
}

fn random_rays(bounds: &Aabb, count: usize, rng: &mut impl Rng) -> Vec<Ray> {
    (0..count)
        .map(|_| {
            let origin = [
                rng.gen_range(bounds.min[0]..=bounds.max[0]),
                rng.gen_range(bounds.min[1]..=bounds.max[1]),
                rng.gen_range(bounds.min[2]..=bounds.max[2]),
            ];
            Ray { origin, direction: uniform_unit(rng) }
        })
        .collect()
}

/// Cone samples around uniformly chosen known principal rays; the oracle
/// ablation arm, matching the generator path but with exact principals.
fn rays_from_principals(
    principals: &[Ray],
    intr: &Intrinsics,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Ray>> {
    let s_max = intr.max_offset();
    (0..count)
        .map(|_| {
            let p = &principals[rng.gen_range(0..principals.len())];
            let s = rng.gen_range(0.0..=s_max);
            let u_theta = rng.gen_range(0.0..std::f64::consts::TAU);
            sample_nonprincipal(p, intr, s, u_theta)
        })
        .collect()
}

pub fn train_task(state: &mut MethodState, task: &Task, cfg: &TrainConfig) -> Result<()> {
    debug_assert_eq!(state.kind, MethodKind::Meil);
    task.validate()?;
    let t = task.index;
    let Aux::Meil { snapshot, rgn, gt_principals } = &mut state.aux else {
        return Err(Error::Config("method state is not a self-distillation state".into()));
    };

    // copy and freeze the teacher before touching the live network
    let teacher = state.nerf.snapshot((t - 1) as u32);
    *snapshot = Some(teacher.clone());

    let views: Vec<&super::View> = task.views.iter().collect();
    let intr = &task.intrinsics;
    let total = cfg.iterations_for(task.views.len());
    let mut rng = task_rng(cfg, MethodKind::Meil, t, STREAM_TRAIN);
    let mut rng_past = task_rng(cfg, MethodKind::Meil, t, STREAM_PAST);
    let mut adam = Adam::new(cfg.lr, state.nerf.num_params());
    let mut grad = vec![0.0; state.nerf.num_params()];
    let distill_spec = SampleSpec { stratified: false, ..cfg.sample };

    for it in 0..total {
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

        if t > 1 && cfg.m_p > 0 {
            let progress = if total > 1 { it as f64 / (total - 1) as f64 } else { 1.0 };
            let lambda = lambda_p(cfg.lambda_schedule, progress);
            if lambda > 0.0 {
                let past_rays = match cfg.past_rays {
                    PastRaySource::Rgn => generate_past_rays(rgn, intr, cfg.m_p, &mut rng_past)?,
                    PastRaySource::GroundTruth => {
                        rays_from_principals(gt_principals, intr, cfg.m_p, &mut rng_past)?
                    }
                    PastRaySource::Random => random_rays(&cfg.random_ray_bounds, cfg.m_p, &mut rng_past),
                };
                // pseudo ground truth comes from the frozen teacher only
                debug_assert!(teacher.is_frozen() && (teacher.version() as usize) < t);
                let distilled: Vec<[f64; 3]> = past_rays
                    .iter()
                    .map(|ray| {
                        Ok(render_ray(&teacher, &cfg.network, ray, &distill_spec, &mut rng_past)?.color)
                    })
                    .collect::<Result<_>>()?;
                render_batch_backward(
                    &state.nerf,
                    &cfg.network,
                    &past_rays,
                    &distilled,
                    LossKind::Charbonnier { eps: cfg.eps_charbonnier },
                    lambda,
                    &cfg.sample,
                    &mut rng_past,
                    &mut grad,
                )?;
            }
        }
        adam.step(state.nerf.data_mut(), &grad);
    }

    // fold the finished task's principal rays into the ray generator
    let principals: Vec<Ray> = task.views.iter().map(|v| principal_ray(intr, &v.pose)).collect();
    if cfg.past_rays == PastRaySource::Rgn {
        let (next, _loss) = rgn_update(rgn, &principals, t, task.views.len())?;
        *rgn = next;
    }
    gt_principals.extend(principals);
    state.tasks_seen = t;
    Ok(())
}
