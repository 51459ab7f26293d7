//! Pinhole camera model and ray geometry.
//!
//! Conventions, fixed project-wide: the camera looks down +z in its own
//! frame, pixel (u, v) casts a ray through the pixel center (u+0.5, v+0.5),
//! and rotations are camera-to-world.

use crate::error::{Error, Result};

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

pub fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub focal: f64,
    pub width: u32,
    pub height: u32,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Centered principal point.
    pub fn centered(focal: f64, width: u32, height: u32) -> Self {
        Intrinsics { focal, width, height, cx: width as f64 / 2.0, cy: height as f64 / 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) {
            return Err(Error::Config(format!("focal length must be positive, got {}", self.focal)));
        }
        if self.width < 1 || self.height < 1 {
            return Err(Error::Config("image dimensions must be at least 1x1".into()));
        }
        if !(0.0..=self.width as f64).contains(&self.cx) || !(0.0..=self.height as f64).contains(&self.cy) {
            return Err(Error::Config("principal point outside the sensor".into()));
        }
        Ok(())
    }

    /// Radius of the sensor-diagonal disc, the upper bound for the offset `s`
    /// when synthesizing non-principal rays.
    pub fn max_offset(&self) -> f64 {
        ((self.width as f64).powi(2) + (self.height as f64).powi(2)).sqrt() / 2.0
    }
}

/// Camera-to-world pose: origin plus an orthonormal rotation (det +1).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Pose {
    pub origin: [f64; 3],
    /// Rows are world-frame images of the camera axes' coordinates, i.e.
    /// `world = rotation * camera` with `rotation[r][c]`.
    pub rotation: [[f64; 3]; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Pose { origin: [0.0; 3], rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    /// Camera at `origin` facing `target`. `up` breaks the roll ambiguity;
    /// the camera y axis points against it so images come out upright under
    /// the v-grows-down pixel convention.
    pub fn look_at(origin: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Result<Pose> {
        let z = sub(target, origin);
        if norm(z) < 1e-12 {
            return Err(Error::Domain("look_at: origin and target coincide".into()));
        }
        let z = normalize(z);
        let x = cross(z, up);
        if norm(x) < 1e-9 {
            return Err(Error::Domain("look_at: view direction parallel to up".into()));
        }
        let x = normalize(x);
        let y = cross(z, x);
        Ok(Pose {
            origin,
            rotation: [
                [x[0], y[0], z[0]],
                [x[1], y[1], z[1]],
                [x[2], y[2], z[2]],
            ],
        })
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let col = |c: usize| [r[0][c], r[1][c], r[2][c]];
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(col(i), col(j));
                let expect = if i == j { 1.0 } else { 0.0 };
                if (d - expect).abs() > 1e-6 {
                    return Err(Error::Config("pose rotation is not orthonormal".into()));
                }
            }
        }
        let det = dot(col(0), cross(col(1), col(2)));
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::Config("pose rotation determinant is not +1".into()));
        }
        if self.origin.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("pose origin is not finite".into()));
        }
        Ok(())
    }
}

/// Origin + unit direction; the universal query currency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
}

impl Ray {
    pub fn point_at(&self, z: f64) -> [f64; 3] {
        add(self.origin, scale(self.direction, z))
    }
}

/// Ray through the center of pixel (u, v).
pub fn pixel_ray(intr: &Intrinsics, pose: &Pose, u: u32, v: u32) -> Result<Ray> {
    if u >= intr.width || v >= intr.height {
        return Err(Error::Domain(format!(
            "pixel ({u}, {v}) outside {}x{} sensor",
            intr.width, intr.height
        )));
    }
    Ok(ray_through(intr, pose, u as f64 + 0.5, v as f64 + 0.5))
}

/// Ray through continuous sensor coordinates (su, sv), in pixels.
pub fn ray_through(intr: &Intrinsics, pose: &Pose, su: f64, sv: f64) -> Ray {
    let dir_cam = [(su - intr.cx) / intr.focal, (sv - intr.cy) / intr.focal, 1.0];
    Ray { origin: pose.origin, direction: normalize(pose.rotate(dir_cam)) }
}

/// Ray through the principal point.
pub fn principal_ray(intr: &Intrinsics, pose: &Pose) -> Ray {
    ray_through(intr, pose, intr.cx, intr.cy)
}

/// Two unit vectors completing `dir` to an orthonormal frame.
///
/// Seeded with the world x axis unless `dir` is nearly parallel to it, in
/// which case the y axis. The cross products stay well-conditioned for every
/// unit `dir`, unlike subtracting projections of two fixed seeds.
pub fn gram_schmidt_basis(dir: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let seed = if dir[0].abs() > 0.9 { [0.0, 1.0, 0.0] } else { [1.0, 0.0, 0.0] };
    let p1 = normalize(cross(dir, seed));
    let p2 = cross(dir, p1);
    (p1, p2)
}

/// Synthesizes a ray within the sensor cone around the principal ray:
/// direction `normalize(f * d* + s cos(u) p1 + s sin(u) p2)`, same origin.
///
/// `s` must lie in `[0, sqrt(W^2+H^2)/2]`; `u_theta` in `[0, 2pi)`.
pub fn sample_nonprincipal(principal: &Ray, intr: &Intrinsics, s: f64, u_theta: f64) -> Result<Ray> {
    let s_max = intr.max_offset();
    if !(0.0..=s_max).contains(&s) {
        return Err(Error::Domain(format!("offset s = {s} outside [0, {s_max}]")));
    }
    if s == 0.0 {
        return Ok(*principal);
    }
    let (p1, p2) = gram_schmidt_basis(principal.direction);
    let mut d = scale(principal.direction, intr.focal);
    d = add(d, scale(p1, s * u_theta.cos()));
    d = add(d, scale(p2, s * u_theta.sin()));
    Ok(Ray { origin: principal.origin, direction: normalize(d) })
}
