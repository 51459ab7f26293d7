//! Synthetic scenes with closed-form ground truth.
//!
//! Scenes are unions of constant-density colored spheres, so the exact pixel
//! color follows from ray-sphere chord lengths and `exp(-sigma * chord)`
//! transmittance. The same density/color field is also exposed as a
//! [`RadianceField`], which lets the quadrature renderer be checked against
//! the closed form.

use rayon::prelude::*;

use crate::camera::{self, Intrinsics, Pose, Ray};
use crate::error::{Error, Result};
use crate::metrics::ImageBuffer;
use crate::render::RadianceField;
use crate::train::{Task, View};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
    pub density: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn diagonal(&self) -> f64 {
        camera::norm(camera::sub(self.max, self.min))
    }
}

/// A set of constant-density spheres inside an axis-aligned bounding box.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDef {
    pub spheres: Vec<Sphere>,
    pub bounds: Aabb,
}

impl SceneDef {
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.spheres.iter().enumerate() {
            if !(s.radius > 0.0) || !s.density.is_finite() || s.density < 0.0 {
                return Err(Error::Config(format!("sphere {i} has invalid radius or density")));
            }
            if s.color.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                return Err(Error::Config(format!("sphere {i} color outside [0,1]")));
            }
            for k in 0..3 {
                if s.center[k] - s.radius < self.bounds.min[k] || s.center[k] + s.radius > self.bounds.max[k] {
                    return Err(Error::Config(format!("sphere {i} extends outside the scene bounds")));
                }
            }
        }
        Ok(())
    }
}

impl RadianceField for SceneDef {
    /// Densities of overlapping spheres add; the emitted color is the
    /// density-weighted mean.
    fn query(&self, p: [f64; 3], _d: [f64; 3]) -> ([f64; 3], f64) {
        let mut sigma = 0.0;
        let mut color = [0.0; 3];
        for s in &self.spheres {
            if camera::norm(camera::sub(p, s.center)) <= s.radius {
                sigma += s.density;
                for ch in 0..3 {
                    color[ch] += s.density * s.color[ch];
                }
            }
        }
        if sigma > 0.0 {
            for ch in &mut color {
                *ch /= sigma;
            }
        }
        (color, sigma)
    }
}

/// Exact pixel color along one ray: piecewise-constant density between
/// sphere-boundary crossings, front-to-back compositing.
pub fn analytic_render_ray(scene: &SceneDef, ray: &Ray) -> [f64; 3] {
    let mut cuts: Vec<f64> = vec![];
    for s in &scene.spheres {
        let oc = camera::sub(ray.origin, s.center);
        let b = camera::dot(oc, ray.direction);
        let disc = b * b - (camera::dot(oc, oc) - s.radius * s.radius);
        if disc > 0.0 {
            let sq = disc.sqrt();
            for t in [-b - sq, -b + sq] {
                if t > 0.0 {
                    cuts.push(t);
                }
            }
        }
    }
    if cuts.is_empty() {
        return [0.0; 3];
    }
    cuts.push(0.0);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut transmittance = 1.0;
    let mut out = [0.0; 3];
    for pair in cuts.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let mid = 0.5 * (lo + hi);
        let (color, sigma) = scene.query(ray.point_at(mid), ray.direction);
        if sigma > 0.0 {
            let absorbed = 1.0 - (-sigma * (hi - lo)).exp();
            for ch in 0..3 {
                out[ch] += transmittance * absorbed * color[ch];
            }
            transmittance *= 1.0 - absorbed;
        }
    }
    out
}

/// Ground-truth image: the closed form evaluated at every pixel center.
pub fn analytic_render(scene: &SceneDef, intr: &Intrinsics, pose: &Pose) -> Result<ImageBuffer> {
    intr.validate()?;
    pose.validate()?;
    scene.validate()?;
    let rows: Vec<Result<Vec<[f64; 3]>>> = (0..intr.height)
        .into_par_iter()
        .map(|v| {
            (0..intr.width)
                .map(|u| Ok(analytic_render_ray(scene, &camera::pixel_ray(intr, pose, u, v)?)))
                .collect()
        })
        .collect();
    let mut img = ImageBuffer::black(intr.width, intr.height);
    for (v, row) in rows.into_iter().enumerate() {
        for (u, c) in row?.into_iter().enumerate() {
            img.set(u as u32, v as u32, c);
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    OrbitArc,
    LineSweep,
}

/// Non-revisiting camera path split into tasks of consecutive views.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub tasks: usize,
    pub views_per_task: usize,
    /// Orbit: swept arc in degrees. Line sweep: end offset from `start`.
    pub extent: f64,
    /// Orbit only: circle radius around `target`.
    #[serde(default)]
    pub radius: f64,
    /// Orbit only: camera height above the target plane.
    #[serde(default)]
    pub height: f64,
    /// Line sweep only: first camera position.
    #[serde(default)]
    pub start: [f64; 3],
    /// Line sweep: direction of travel (normalized internally).
    #[serde(default)]
    pub travel: [f64; 3],
    #[serde(default)]
    pub target: [f64; 3],
}

impl TrajectorySpec {
    pub fn total_views(&self) -> usize {
        self.tasks * self.views_per_task
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks < 1 || self.views_per_task < 2 {
            return Err(Error::Config(
                "a trajectory needs at least 1 task and 2 views per task (single-view tasks carry no geometry)"
                    .into(),
            ));
        }
        if !(self.extent > 0.0) {
            return Err(Error::Domain("trajectory extent must be positive".into()));
        }
        if self.kind == TrajectoryKind::OrbitArc && !(self.radius > 0.0) {
            return Err(Error::Config("orbit radius must be positive".into()));
        }
        if self.kind == TrajectoryKind::LineSweep && camera::norm(self.travel) < 1e-12 {
            return Err(Error::Config("line sweep needs a nonzero travel direction".into()));
        }
        Ok(())
    }

    /// All poses along the path, equally spaced, endpoints inclusive.
    pub fn poses(&self) -> Result<Vec<Pose>> {
        self.validate()?;
        let n = self.total_views();
        let up = [0.0, 0.0, 1.0];
        (0..n)
            .map(|k| {
                let frac = k as f64 / (n - 1) as f64;
                let origin = match self.kind {
                    TrajectoryKind::OrbitArc => {
                        let theta = (frac * self.extent).to_radians();
                        [
                            self.target[0] + self.radius * theta.cos(),
                            self.target[1] + self.radius * theta.sin(),
                            self.target[2] + self.height,
                        ]
                    }
                    TrajectoryKind::LineSweep => camera::add(
                        self.start,
                        camera::scale(camera::normalize(self.travel), frac * self.extent),
                    ),
                };
                Pose::look_at(origin, self.target, up)
            })
            .collect()
    }
}

/// Renders the ground-truth views along the trajectory and groups them into
/// tasks of consecutive views. Pose sets are pairwise disjoint across tasks.
pub fn build_tasks(scene: &SceneDef, traj: &TrajectorySpec, intr: &Intrinsics) -> Result<Vec<Task>> {
    let poses = traj.poses()?;
    let mut tasks = Vec::with_capacity(traj.tasks);
    for t in 0..traj.tasks {
        let views = poses[t * traj.views_per_task..(t + 1) * traj.views_per_task]
            .iter()
            .map(|pose| {
                Ok(View { image: analytic_render(scene, intr, pose)?, pose: *pose })
            })
            .collect::<Result<Vec<_>>>()?;
        tasks.push(Task { index: t + 1, views, intrinsics: *intr });
    }
    Ok(tasks)
}

/// The fixed benchmark scene: colored spheres spread so that different arc
/// segments see different subsets.
pub fn reference_scene() -> SceneDef {
    SceneDef {
        spheres: vec![
            Sphere { center: [0.45, 0.0, 0.0], radius: 0.28, density: 14.0, color: [0.92, 0.18, 0.12] },
            Sphere { center: [0.1, 0.5, 0.15], radius: 0.24, density: 12.0, color: [0.15, 0.75, 0.2] },
            Sphere { center: [-0.4, 0.25, -0.1], radius: 0.26, density: 16.0, color: [0.2, 0.3, 0.9] },
            Sphere { center: [-0.15, -0.35, 0.2], radius: 0.2, density: 10.0, color: [0.95, 0.85, 0.2] },
            Sphere { center: [0.2, -0.1, -0.3], radius: 0.17, density: 18.0, color: [0.85, 0.4, 0.85] },
        ],
        bounds: Aabb { min: [-1.0, -1.0, -1.0], max: [1.0, 1.0, 1.0] },
    }
}
