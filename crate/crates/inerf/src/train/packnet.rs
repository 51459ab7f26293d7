//! Parameter-isolation baseline: train the free parameters, prune the
//! lowest-magnitude fraction per layer, retrain the survivors, then freeze
//! them into the task's mask. Frozen parameters never change again, so each
//! task's subnetwork is bit-stable forever.

use crate::error::{Error, Result};
use crate::mlp::ParamSet;
use crate::render::{render_batch_backward, LossKind};

use super::{sample_batch, task_rng, Adam, Aux, MethodKind, MethodState, Task, TrainConfig, View, STREAM_TRAIN};

/// Parameters still unowned by any task.
pub fn free_param_count(mask: &[u8]) -> usize {
    mask.iter().filter(|&&m| m == 0).count()
}

/// Copy of `params` keeping only scalars frozen at tasks `1..=t`; everything
/// else (free or frozen later) is zeroed. This is the subnetwork used to
/// evaluate task `t`.
pub fn masked_params(params: &ParamSet, mask: &[u8], t: u8) -> ParamSet {
    let mut out = params.thaw();
    for (x, &m) in out.data_mut().iter_mut().zip(mask) {
        if m == 0 || m > t {
            *x = 0.0;
        }
    }
    out
}

fn train_phase(
    state_nerf: &mut ParamSet,
    cfg: &TrainConfig,
    views: &[&View],
    intr: &super::Intrinsics,
    iterations: usize,
    active: &[bool],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<()> {
    let mut adam = Adam::new(cfg.lr, state_nerf.num_params());
    let mut grad = vec![0.0; state_nerf.num_params()];
    for _ in 0..iterations {
        let (rays, colors) = sample_batch(views, intr, cfg.m_c, rng)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        render_batch_backward(
            state_nerf,
            &cfg.network,
            &rays,
            &colors,
            LossKind::L2,
            1.0,
            &cfg.sample,
            rng,
            &mut grad,
        )?;
        adam.step_masked(state_nerf.data_mut(), &grad, Some(active));
    }
    Ok(())
}

pub fn train_task(state: &mut MethodState, task: &Task, cfg: &TrainConfig) -> Result<()> {
    debug_assert_eq!(state.kind, MethodKind::PackNet);
    task.validate()?;
    let t = task.index;
    if t > u8::MAX as usize {
        return Err(Error::Config("prune masks support at most 255 tasks".into()));
    }
    let Aux::PackNet { mask } = &mut state.aux else {
        return Err(Error::Config("method state is not a prune-and-freeze state".into()));
    };
    let free: Vec<bool> = mask.iter().map(|&m| m == 0).collect();
    if free.iter().all(|&f| !f) {
        return Err(Error::Domain("prune-and-freeze capacity exhausted: no free parameters left".into()));
    }
    let views: Vec<&View> = task.views.iter().collect();
    let intr = &task.intrinsics;
    let total = cfg.iterations_for(task.views.len());
    let mut rng = task_rng(cfg, MethodKind::PackNet, t, STREAM_TRAIN);

    // phase 1: train everything still free
    train_phase(&mut state.nerf, cfg, &views, intr, total, &free, &mut rng)?;

    // prune per layer: among this task's free parameters, drop the
    // smallest-magnitude `prune_rate` fraction (per-layer ranking avoids
    // starving small layers), zeroing them for future tasks
    let mut keep = vec![false; free.len()];
    let dims = state.nerf.dims().to_vec();
    for (layer, d) in dims.iter().enumerate() {
        let start = state.nerf.layer_offset(layer);
        let mut candidates: Vec<usize> =
            (start..start + d.param_count()).filter(|&k| free[k]).collect();
        let n_prune = (cfg.prune_rate * candidates.len() as f64).floor() as usize;
        candidates.sort_by(|&a, &b| {
            state.nerf.data()[b]
                .abs()
                .partial_cmp(&state.nerf.data()[a].abs())
                .unwrap()
                .then(a.cmp(&b))
        });
        let n_keep = candidates.len() - n_prune;
        for &k in &candidates[..n_keep] {
            keep[k] = true;
        }
        for &k in &candidates[n_keep..] {
            state.nerf.data_mut()[k] = 0.0;
        }
    }

    // phase 2: retrain only the kept parameters, then freeze them
    let retrain = (cfg.packnet_retrain_fraction * total as f64).round() as usize;
    train_phase(&mut state.nerf, cfg, &views, intr, retrain, &keep, &mut rng)?;
    for (m, &k) in mask.iter_mut().zip(&keep) {
        if k {
            *m = t as u8;
        }
    }
    state.tasks_seen = t;
    Ok(())
}
