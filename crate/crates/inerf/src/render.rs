//! Quadrature volume rendering: sample points along a ray, query a radiance
//! field, alpha-composite front to back. This is the forward map from a ray
//! to a pixel color, and the exact reverse-mode path through it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::{Intrinsics, Pose, Ray};
use crate::error::{Error, Result};
use crate::metrics::ImageBuffer;
use crate::mlp::{self, NetworkConfig, ParamSet};

/// Sampling plan for one ray.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub samples: usize,
    pub z_near: f64,
    pub z_far: f64,
    pub stratified: bool,
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 1 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        if !(self.z_near > 0.0 && self.z_near < self.z_far) {
            return Err(Error::Config(format!(
                "need 0 < z_near < z_far, got [{}, {}]",
                self.z_near, self.z_far
            )));
        }
        Ok(())
    }
}

/// Output of compositing one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderResult {
    pub color: [f64; 3],
    pub weights: Vec<f64>,
    pub transmittance: Vec<f64>,
    pub depths: Vec<f64>,
    pub alphas: Vec<f64>,
}

/// Anything that can be queried for (color, density) at a point seen from a
/// direction: the scene network, or an analytic scene.
pub trait RadianceField: Sync {
    fn query(&self, p: [f64; 3], d: [f64; 3]) -> ([f64; 3], f64);
}

/// Scene network as a radiance field. Construction validates the shapes once
/// so per-sample queries can skip the check.
pub struct NerfField<'a> {
    params: &'a ParamSet,
    cfg: &'a NetworkConfig,
}

impl<'a> NerfField<'a> {
    pub fn new(params: &'a ParamSet, cfg: &'a NetworkConfig) -> Result<Self> {
        // one shape check up front
        mlp::forward(params, cfg, [0.0; 3], [0.0, 0.0, 1.0])?;
        Ok(NerfField { params, cfg })
    }
}

impl RadianceField for NerfField<'_> {
    fn query(&self, p: [f64; 3], d: [f64; 3]) -> ([f64; 3], f64) {
        let (out, _) = mlp::forward_unchecked(self.params, self.cfg, p, d);
        (out.color, out.sigma)
    }
}

/// Depths of the quadrature points: bin midpoints, or one uniform draw per
/// equal bin when stratified.
pub fn sample_depths(spec: &SampleSpec, rng: &mut impl Rng) -> Vec<f64> {
    let p = spec.samples;
    let width = (spec.z_far - spec.z_near) / p as f64;
    (0..p)
        .map(|i| {
            let lo = spec.z_near + i as f64 * width;
            if spec.stratified {
                lo + rng.gen_range(0.0..1.0) * width
            } else {
                lo + 0.5 * width
            }
        })
        .collect()
}

/// Alpha-composites per-sample colors and densities along a ray.
///
/// `alpha_i = 1 - exp(-sigma_i * delta_i)` with `delta_i = z_{i+1} - z_i` and
/// the last interval closed by `z_far`.
pub fn composite(colors: &[[f64; 3]], sigmas: &[f64], depths: &[f64], z_far: f64) -> Result<RenderResult> {
    let p = depths.len();
    assert_eq!(colors.len(), p);
    assert_eq!(sigmas.len(), p);
    if depths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("composite: depths must be strictly increasing".into()));
    }
    if sigmas.iter().any(|&s| s < 0.0) {
        return Err(Error::Domain("composite: negative density".into()));
    }
    let mut weights = vec![0.0; p];
    let mut transmittance = vec![0.0; p];
    let mut alphas = vec![0.0; p];
    let mut color = [0.0; 3];
    let mut t = 1.0;
    for i in 0..p {
        let delta = if i + 1 < p { depths[i + 1] - depths[i] } else { z_far - depths[i] };
        let alpha = 1.0 - (-sigmas[i] * delta).exp();
        let w = t * alpha;
        transmittance[i] = t;
        alphas[i] = alpha;
        weights[i] = w;
        for ch in 0..3 {
            color[ch] += w * colors[i][ch];
        }
        t *= 1.0 - alpha;
    }
    Ok(RenderResult { color, weights, transmittance, depths: depths.to_vec(), alphas })
}

/// Renders one ray against an arbitrary radiance field.
pub fn render_ray_field(
    field: &impl RadianceField,
    ray: &Ray,
    spec: &SampleSpec,
    rng: &mut impl Rng,
) -> Result<RenderResult> {
    spec.validate()?;
    let depths = sample_depths(spec, rng);
    let mut colors = Vec::with_capacity(depths.len());
    let mut sigmas = Vec::with_capacity(depths.len());
    for &z in &depths {
        let (c, s) = field.query(ray.point_at(z), ray.direction);
        colors.push(c);
        sigmas.push(s);
    }
    composite(&colors, &sigmas, &depths, spec.z_far)
}

/// Renders one ray through the scene network.
pub fn render_ray(
    params: &ParamSet,
    cfg: &NetworkConfig,
    ray: &Ray,
    spec: &SampleSpec,
    rng: &mut impl Rng,
) -> Result<RenderResult> {
    let field = NerfField::new(params, cfg)?;
    render_ray_field(&field, ray, spec, rng)
}

/// Renders a full image, parallel across rows. Per-pixel RNG streams are
/// derived from `seed` and the pixel index, so the result does not depend on
/// the traversal or thread schedule.
pub fn render_image(
    params: &ParamSet,
    cfg: &NetworkConfig,
    intr: &Intrinsics,
    pose: &Pose,
    spec: &SampleSpec,
    seed: u64,
) -> Result<ImageBuffer> {
    spec.validate()?;
    intr.validate()?;
    let field = NerfField::new(params, cfg)?;
    let (w, h) = (intr.width, intr.height);
    let rows: Vec<Result<Vec<[f64; 3]>>> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut row = Vec::with_capacity(w as usize);
            for u in 0..w {
                let ray = crate::camera::pixel_ray(intr, pose, u, v)?;
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed ^ (v as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ u as u64,
                );
                row.push(render_ray_field(&field, &ray, spec, &mut rng)?.color);
            }
            Ok(row)
        })
        .collect();
    let mut img = ImageBuffer::black(w, h);
    for (v, row) in rows.into_iter().enumerate() {
        for (u, c) in row?.into_iter().enumerate() {
            img.set(u as u32, v as u32, c);
        }
    }
    Ok(img)
}

/// Per-ray data term of the training loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// Squared L2 norm of the color residual.
    L2,
    /// `sqrt(|residual|^2 + eps^2)`, a smooth L1 variant.
    Charbonnier { eps: f64 },
}

impl LossKind {
    /// Returns (loss term, d(term)/d(residual)).
    fn eval(&self, residual: [f64; 3]) -> (f64, [f64; 3]) {
        match *self {
            LossKind::L2 => {
                let term = residual.iter().map(|r| r * r).sum();
                (term, [2.0 * residual[0], 2.0 * residual[1], 2.0 * residual[2]])
            }
            LossKind::Charbonnier { eps } => {
                let sq: f64 = residual.iter().map(|r| r * r).sum();
                let rho = (sq + eps * eps).sqrt();
                (rho, [residual[0] / rho, residual[1] / rho, residual[2] / rho])
            }
        }
    }
}

/// Charbonnier penalty of a color residual: `sqrt(|v|^2 + eps^2)`.
pub fn charbonnier(residual: [f64; 3], eps: f64) -> f64 {
    LossKind::Charbonnier { eps }.eval(residual).0
}

/// Backward through compositing: upstream gradient on the pixel color down to
/// per-sample gradients on (color, sigma).
fn composite_backward(res: &RenderResult, colors: &[[f64; 3]], z_far: f64, d_color_up: [f64; 3]) -> Vec<([f64; 3], f64)> {
    let p = res.depths.len();
    // suffix recurrence: s_i = alpha_{i+1} c_{i+1} + (1 - alpha_{i+1}) s_{i+1}
    let mut suffix = vec![[0.0; 3]; p];
    for i in (0..p.saturating_sub(1)).rev() {
        for ch in 0..3 {
            suffix[i][ch] =
                res.alphas[i + 1] * colors[i + 1][ch] + (1.0 - res.alphas[i + 1]) * suffix[i + 1][ch];
        }
    }
    (0..p)
        .map(|i| {
            let dc = [
                d_color_up[0] * res.weights[i],
                d_color_up[1] * res.weights[i],
                d_color_up[2] * res.weights[i],
            ];
            let mut d_alpha = 0.0;
            for ch in 0..3 {
                d_alpha += d_color_up[ch] * res.transmittance[i] * (colors[i][ch] - suffix[i][ch]);
            }
            let delta = if i + 1 < p { res.depths[i + 1] - res.depths[i] } else { z_far - res.depths[i] };
            let d_sigma = d_alpha * delta * (1.0 - res.alphas[i]);
            (dc, d_sigma)
        })
        .collect()
}

/// Mean loss over a ray batch plus its exact gradient, accumulated into
/// `grad` (flat ParamSet layout) in batch order.
///
/// The contribution is `weight / batch_len * sum(term)`; the returned scalar
/// is that same quantity.
#[allow(clippy::too_many_arguments)]
pub fn render_batch_backward(
    params: &ParamSet,
    cfg: &NetworkConfig,
    rays: &[Ray],
    targets: &[[f64; 3]],
    loss: LossKind,
    weight: f64,
    spec: &SampleSpec,
    rng: &mut impl Rng,
    grad: &mut [f64],
) -> Result<f64> {
    if rays.is_empty() {
        return Err(Error::Domain("render_batch_backward: empty batch".into()));
    }
    assert_eq!(rays.len(), targets.len());
    spec.validate()?;
    // one shape check for the whole batch
    mlp::forward(params, cfg, [0.0; 3], [0.0, 0.0, 1.0])?;
    let scale = weight / rays.len() as f64;
    let mut total = 0.0;
    let mut colors = Vec::with_capacity(spec.samples);
    let mut sigmas = Vec::with_capacity(spec.samples);
    let mut tapes = Vec::with_capacity(spec.samples);
    let mut outs = Vec::with_capacity(spec.samples);
    for (ray, target) in rays.iter().zip(targets) {
        let depths = sample_depths(spec, rng);
        colors.clear();
        sigmas.clear();
        tapes.clear();
        outs.clear();
        for &z in &depths {
            let (out, tape) = mlp::forward_unchecked(params, cfg, ray.point_at(z), ray.direction);
            colors.push(out.color);
            sigmas.push(out.sigma);
            tapes.push(tape);
            outs.push(out);
        }
        let res = composite(&colors, &sigmas, &depths, spec.z_far)?;
        let residual = [
            res.color[0] - target[0],
            res.color[1] - target[1],
            res.color[2] - target[2],
        ];
        let (term, d_res) = loss.eval(residual);
        total += term;
        let d_color_up = [scale * d_res[0], scale * d_res[1], scale * d_res[2]];
        let per_sample = composite_backward(&res, &colors, spec.z_far, d_color_up);
        for (i, (dc, ds)) in per_sample.into_iter().enumerate() {
            mlp::backward_sample(params, cfg, &tapes[i], &outs[i], dc, ds, grad);
        }
    }
    let loss_value = scale * total;
    if !loss_value.is_finite() {
        return Err(Error::Numeric(format!("non-finite batch loss {loss_value}")));
    }
    Ok(loss_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(p: usize, stratified: bool) -> SampleSpec {
        SampleSpec { samples: p, z_near: 1.0, z_far: 2.0, stratified }
    }

    #[test]
    fn single_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = sample_depths(&spec(1, false), &mut rng);
        assert_eq!(z, vec![1.5]);
    }

    #[test]
    fn four_bin_midpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = sample_depths(&spec(4, false), &mut rng);
        assert_eq!(z, vec![1.125, 1.375, 1.625, 1.875]);
    }

    #[test]
    fn stratified_draws_stay_in_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let z = sample_depths(&spec(8, true), &mut rng);
            for (i, &zi) in z.iter().enumerate() {
                let lo = 1.0 + i as f64 * 0.125;
                assert!(zi >= lo && zi < lo + 0.125);
            }
        }
    }

    #[test]
    fn zero_density_is_black() {
        let colors = vec![[1.0, 0.5, 0.2]; 4];
        let sigmas = vec![0.0; 4];
        let depths = vec![1.0, 1.2, 1.4, 1.6];
        let res = composite(&colors, &sigmas, &depths, 2.0).unwrap();
        assert_eq!(res.color, [0.0; 3]);
        assert!(res.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn opaque_sample_saturates() {
        let res = composite(&[[0.3, 0.6, 0.9]], &[1e6], &[1.0], 2.0).unwrap();
        for ch in 0..3 {
            assert!((res.color[ch] - [0.3, 0.6, 0.9][ch]).abs() < 1e-6);
        }
        assert!((res.weights[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn two_sample_analytic_case() {
        let colors = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let sigmas = [std::f64::consts::LN_2, 1e9];
        let depths = [1.0, 2.0];
        let res = composite(&colors, &sigmas, &depths, 3.0).unwrap();
        assert!((res.alphas[0] - 0.5).abs() < 1e-12);
        assert!((res.color[0] - 0.5).abs() < 1e-9);
        assert!((res.color[1] - 0.5).abs() < 1e-9);
        assert_eq!(res.color[2], 0.0);
    }

    #[test]
    fn non_increasing_depths_rejected() {
        let err = composite(&[[0.0; 3]; 2], &[1.0, 1.0], &[1.5, 1.5], 2.0);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn weight_sum_identity_and_monotone_transmittance() {
        // sum(w) = 1 - prod(1 - alpha), telescoping, over random rays
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let p = rng.gen_range(1..12);
            let mut depths: Vec<f64> = (0..p).map(|i| 1.0 + i as f64 * 0.1 + rng.gen_range(0.0..0.05)).collect();
            depths.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let sigmas: Vec<f64> = (0..p).map(|_| rng.gen_range(0.0..20.0)).collect();
            let colors: Vec<[f64; 3]> =
                (0..p).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
            let res = composite(&colors, &sigmas, &depths, depths[p - 1] + 0.2).unwrap();
            let w_sum: f64 = res.weights.iter().sum();
            let opacity = 1.0 - res.alphas.iter().map(|a| 1.0 - a).product::<f64>();
            assert!((w_sum - opacity).abs() < 1e-9);
            assert!(w_sum <= 1.0 + 1e-6);
            for w in res.transmittance.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            assert_eq!(res.transmittance[0], 1.0);
            // convex combination with black
            let max_c = colors.iter().flat_map(|c| c.iter()).cloned().fold(0.0, f64::max);
            for ch in 0..3 {
                assert!(res.color[ch] >= 0.0 && res.color[ch] <= max_c + 1e-12);
            }
        }
    }

    struct ConstField {
        color: [f64; 3],
        sigma: f64,
    }

    impl RadianceField for ConstField {
        fn query(&self, _p: [f64; 3], _d: [f64; 3]) -> ([f64; 3], f64) {
            (self.color, self.sigma)
        }
    }

    #[test]
    fn constant_field_matches_closed_form() {
        // constant density: the alpha products telescope, so the quadrature
        // is exactly C = (1 - exp(-sigma * (L - h/2))) * c -- the covered
        // span runs from the first midpoint to z_far
        let field = ConstField { color: [0.8, 0.4, 0.1], sigma: 0.9 };
        let ray = Ray { origin: [0.0; 3], direction: [0.0, 0.0, 1.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let res = render_ray_field(&field, &ray, &spec(128, false), &mut rng).unwrap();
        let expect = 1.0 - (-0.9f64 * (1.0 - 0.5 / 128.0)).exp();
        for ch in 0..3 {
            assert!((res.color[ch] - expect * field.color[ch]).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_render() {
        let field = ConstField { color: [0.5, 0.5, 0.5], sigma: 1.0 };
        let ray = Ray { origin: [0.0; 3], direction: [0.0, 0.0, 1.0] };
        let mut a = ChaCha8Rng::seed_from_u64(77);
        let mut b = ChaCha8Rng::seed_from_u64(77);
        let ra = render_ray_field(&field, &ray, &spec(16, true), &mut a).unwrap();
        let rb = render_ray_field(&field, &ray, &spec(16, true), &mut b).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn charbonnier_values() {
        assert_eq!(charbonnier([0.0; 3], 4.0), 4.0);
        assert!((charbonnier([3.0, 0.0, 0.0], 4.0) - 5.0).abs() < 1e-12);
        let v = charbonnier([1.0, 0.0, 0.0], 1e-3);
        assert!(v >= 1.0 && v - 1.0 < 1e-6);
    }

    fn tiny_net() -> (ParamSet, NetworkConfig) {
        let cfg = NetworkConfig {
            hidden: vec![8, 8],
            pos_enc: crate::mlp::EncodingConfig::new(2, true),
            dir_enc: crate::mlp::EncodingConfig::new(0, true),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = cfg.init_params(&mut rng).unwrap();
        (params, cfg)
    }

    #[test]
    fn batch_gradient_matches_finite_differences_through_pipeline() {
        let (mut params, cfg) = tiny_net();
        assert!(params.num_params() <= 500);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rays: Vec<Ray> = (0..5)
            .map(|_| Ray {
                origin: [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), -1.0],
                direction: crate::camera::normalize([
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                    1.0,
                ]),
            })
            .collect();
        let targets: Vec<[f64; 3]> =
            (0..5).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
        let sp = SampleSpec { samples: 8, z_near: 0.5, z_far: 2.5, stratified: false };
        for loss in [LossKind::L2, LossKind::Charbonnier { eps: 1e-3 }] {
            let mut grad = vec![0.0; params.num_params()];
            let mut r0 = ChaCha8Rng::seed_from_u64(1);
            let base = render_batch_backward(&params, &cfg, &rays, &targets, loss, 1.0, &sp, &mut r0, &mut grad)
                .unwrap();
            assert!(base.is_finite());
            let h = 1e-6;
            let mut max_rel = 0.0f64;
            for k in 0..params.num_params() {
                let orig = params.data()[k];
                let eval = |params: &ParamSet| {
                    let mut g = vec![0.0; params.num_params()];
                    let mut r = ChaCha8Rng::seed_from_u64(1);
                    render_batch_backward(params, &cfg, &rays, &targets, loss, 1.0, &sp, &mut r, &mut g).unwrap()
                };
                params.data_mut()[k] = orig + h;
                let plus = eval(&params);
                params.data_mut()[k] = orig - h;
                let minus = eval(&params);
                params.data_mut()[k] = orig;
                let fd = (plus - minus) / (2.0 * h);
                let rel = (grad[k] - fd).abs() / (fd.abs() + 1e-8);
                max_rel = max_rel.max(rel);
            }
            assert!(max_rel < 1e-4, "max relative error {max_rel} for {loss:?}");
        }
    }

    #[test]
    fn perfect_targets_give_zero_l2_gradient() {
        let (params, cfg) = tiny_net();
        let sp = SampleSpec { samples: 4, z_near: 0.5, z_far: 2.0, stratified: false };
        let ray = Ray { origin: [0.0, 0.0, -1.0], direction: [0.0, 0.0, 1.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let current = render_ray(&params, &cfg, &ray, &sp, &mut rng).unwrap().color;
        let mut grad = vec![0.0; params.num_params()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = render_batch_backward(&params, &cfg, &[ray], &[current], LossKind::L2, 1.0, &sp, &mut rng, &mut grad)
            .unwrap();
        assert!(loss < 1e-20);
        assert!(grad.iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn doubled_batch_keeps_mean_gradient() {
        let (params, cfg) = tiny_net();
        let sp = SampleSpec { samples: 4, z_near: 0.5, z_far: 2.0, stratified: false };
        let rays = vec![
            Ray { origin: [0.0, 0.0, -1.0], direction: [0.0, 0.0, 1.0] },
            Ray { origin: [0.1, 0.0, -1.0], direction: [0.0, 0.0, 1.0] },
        ];
        let targets = vec![[0.2, 0.3, 0.4], [0.9, 0.1, 0.5]];
        let mut g1 = vec![0.0; params.num_params()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l1 = render_batch_backward(&params, &cfg, &rays, &targets, LossKind::L2, 1.0, &sp, &mut rng, &mut g1)
            .unwrap();
        let rays2: Vec<Ray> = rays.iter().chain(&rays).cloned().collect();
        let targets2: Vec<[f64; 3]> = targets.iter().chain(&targets).cloned().collect();
        let mut g2 = vec![0.0; params.num_params()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l2 = render_batch_backward(&params, &cfg, &rays2, &targets2, LossKind::L2, 1.0, &sp, &mut rng, &mut g2)
            .unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
