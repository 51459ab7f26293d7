//! Ray generator network: a tiny MLP mapping a scalar in [0, 1] to a past
//! principal ray, trained incrementally by distilling its own previous
//! predictions alongside the newest task's principal rays. Sampling it (plus
//! the sensor-cone synthesis around each principal ray) reproduces past query
//! rays from constant memory.

use rand::Rng;

use crate::camera::{self, Intrinsics, Ray};
use crate::error::{Error, Result};
use crate::mlp::{dense_backward, dense_forward, encode, EncodingConfig, LayerDims, ParamSet};
use crate::train::Adam;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RgnConfig {
    pub hidden: [usize; 3],
    /// The scalar input is frequency-encoded before the first layer; a bare
    /// scalar through a 16-unit layer underfits multi-task trajectories.
    pub input_enc: EncodingConfig,
    pub train_steps: usize,
    pub lr: f64,
}

impl Default for RgnConfig {
    fn default() -> Self {
        RgnConfig {
            hidden: [16, 64, 32],
            input_enc: EncodingConfig::new(8, true),
            train_steps: 2000,
            lr: 1e-3,
        }
    }
}

impl RgnConfig {
    pub fn layer_dims(&self) -> Vec<LayerDims> {
        let mut dims = vec![];
        let mut prev = self.input_enc.encoded_dim(1);
        for &h in &self.hidden {
            dims.push(LayerDims { in_dim: prev, out_dim: h });
            prev = h;
        }
        dims.push(LayerDims { in_dim: prev, out_dim: 6 });
        dims
    }
}

/// The ray generator's weights. The architecture is fixed across tasks, so
/// its byte size never grows with the task count.
#[derive(Debug, Clone, PartialEq)]
pub struct RgnState {
    cfg: RgnConfig,
    params: ParamSet,
}

impl RgnState {
    pub fn init(cfg: &RgnConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(RgnState { cfg: *cfg, params: ParamSet::init(&cfg.layer_dims(), rng)? })
    }

    pub fn from_params(cfg: &RgnConfig, params: ParamSet) -> Result<Self> {
        if params.dims() != cfg.layer_dims().as_slice() {
            return Err(Error::Config("ray generator parameters do not match its architecture".into()));
        }
        Ok(RgnState { cfg: *cfg, params })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn config(&self) -> &RgnConfig {
        &self.cfg
    }

    fn raw_forward(&self, x: f64) -> Vec<f64> {
        let enc = encode(&[x], self.cfg.input_enc);
        dense_forward(&self.params, &enc, None).output
    }

    /// Maps `x` in [0, 1] to a ray; the direction half of the output is
    /// normalized on read.
    pub fn forward(&self, x: f64) -> Result<Ray> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("ray generator input {x} outside [0, 1]")));
        }
        let out = self.raw_forward(x);
        let dir = [out[3], out[4], out[5]];
        let n = camera::norm(dir);
        if n < 1e-8 {
            return Err(Error::Numeric("ray generator produced a degenerate direction".into()));
        }
        Ok(Ray { origin: [out[0], out[1], out[2]], direction: camera::scale(dir, 1.0 / n) })
    }
}

/// `[0, 1/(T*N-1), ..., 1]`: the inputs assigned to the principal rays seen
/// so far, oldest at 0, newest at 1.
pub fn equally_spaced_inputs(tasks: usize, views_per_task: usize) -> Result<Vec<f64>> {
    let n = tasks * views_per_task;
    if tasks < 1 || n < 2 {
        return Err(Error::Domain("need at least two principal rays to space inputs".into()));
    }
    Ok((0..n).map(|i| i as f64 / (n - 1) as f64).collect())
}

fn ray_target(r: &Ray) -> [f64; 6] {
    [r.origin[0], r.origin[1], r.origin[2], r.direction[0], r.direction[1], r.direction[2]]
}

/// One incremental update: distills the previous generator at the old input
/// grid, appends the current task's principal rays, and refits the fixed
/// architecture to the new grid by full-batch MSE. Returns the new state and
/// the final training loss.
pub fn rgn_update(
    prev: &RgnState,
    current_principals: &[Ray],
    task_count: usize,
    views_per_task: usize,
) -> Result<(RgnState, f64)> {
    assert_eq!(current_principals.len(), views_per_task);
    let mut targets: Vec<[f64; 6]> = vec![];
    if task_count > 1 {
        for x in equally_spaced_inputs(task_count - 1, views_per_task)? {
            targets.push(ray_target(&prev.forward(x)?));
        }
    }
    targets.extend(current_principals.iter().map(ray_target));
    let xs = equally_spaced_inputs(task_count, views_per_task)?;
    debug_assert_eq!(xs.len(), targets.len());
    let encoded: Vec<Vec<f64>> = xs.iter().map(|&x| encode(&[x], prev.cfg.input_enc)).collect();

    let mut params = prev.params.thaw();
    let mut adam = Adam::new(prev.cfg.lr, params.num_params());
    let mut grad = vec![0.0; params.num_params()];
    let mut loss = f64::NAN;
    let inv_n = 1.0 / targets.len() as f64;
    for _ in 0..prev.cfg.train_steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        loss = 0.0;
        for (enc, target) in encoded.iter().zip(&targets) {
            let tape = dense_forward(&params, enc, None);
            let mut d_out = [0.0; 6];
            for k in 0..6 {
                let res = tape.output[k] - target[k];
                loss += res * res * inv_n;
                d_out[k] = 2.0 * res * inv_n;
            }
            dense_backward(&params, &tape, &d_out, None, &mut grad);
        }
        if !loss.is_finite() {
            return Err(Error::Numeric("ray generator training diverged".into()));
        }
        adam.step(params.data_mut(), &grad);
    }
    Ok((RgnState { cfg: prev.cfg, params }, loss))
}

/// Draws `count` past rays: `x ~ U[0,1]` through the generator, then a
/// uniform sample inside the sensor cone around the generated principal ray.
pub fn generate_past_rays(
    rgn: &RgnState,
    intr: &Intrinsics,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Ray>> {
    if count < 1 {
        return Err(Error::Domain("generate_past_rays: count must be at least 1".into()));
    }
    let s_max = intr.max_offset();
    (0..count)
        .map(|_| {
            let x: f64 = rng.gen_range(0.0..=1.0);
            let principal = rgn.forward(x)?;
            let s = rng.gen_range(0.0..=s_max);
            let u_theta = rng.gen_range(0.0..std::f64::consts::TAU);
            camera::sample_nonprincipal(&principal, intr, s, u_theta)
        })
        .collect()
}
