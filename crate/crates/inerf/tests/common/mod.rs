//! Shared fixtures for the integration tests: the procedurally generated
//! image pairs behind the MS-SSIM cross-implementation check and their frozen
//! reference values from `tf.image.ssim_multiscale` (float64 inputs, the
//! truncated-and-renormalized 3-scale weights this library uses at 64x64).
//!
//! `tools/msssim_reference.py` holds the mirror generator that produced the
//! reference values. Keep the two generators in sync.

use inerf::metrics::ImageBuffer;

pub const W: u32 = 64;
pub const H: u32 = 64;

/// Frozen output of `python3 tools/msssim_reference.py`.
pub const MSSSIM_GOLDEN: [f64; 20] = [
    0.999845445156,
    0.999573707581,
    0.999818086624,
    0.999794185162,
    0.997381925583,
    0.992014586926,
    0.999043285847,
    0.999605894089,
    0.994093716145,
    0.973500192165,
    0.998067796230,
    0.999376833439,
    0.990700900555,
    0.942340195179,
    0.996950924397,
    0.999109268188,
    0.987590789795,
    0.901886761189,
    0.995351552963,
    0.998803853989,
];

/// Must match the Python `Lcg` in tools/msssim_reference.py bit-for-bit.
struct Lcg {
    state: u64,
}

impl Lcg {
    fn new(k: u64) -> Self {
        Lcg { state: 0x243F6A8885A308D3 ^ k.wrapping_mul(0x9E3779B97F4A7C15) }
    }

    fn next(&mut self) -> f64 {
        self.state = self.state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.state >> 11) as f64 / (1u64 << 53) as f64
    }
}

pub fn base_image(k: usize) -> ImageBuffer {
    let kf = k as f64;
    let (fu, fv) = (0.11 + 0.013 * kf, 0.07 + 0.009 * kf);
    let (gu, gv) = (0.05 + 0.011 * kf, 0.17 - 0.004 * kf);
    let mut img = ImageBuffer::black(W, H);
    for v in 0..H {
        for u in 0..W {
            let mut px = [0.0; 3];
            for (c, p) in px.iter_mut().enumerate() {
                let (uf, vf, cf) = (u as f64, v as f64, c as f64);
                let x = 0.5
                    + 0.25 * (fu * uf + fv * vf + 1.7 * cf).sin()
                    + 0.25 * (gu * uf - gv * vf + 0.9 * cf).cos();
                *p = x.clamp(0.0, 1.0);
            }
            img.set(u, v, px);
        }
    }
    img
}

fn box3(img: &ImageBuffer) -> ImageBuffer {
    let mut out = ImageBuffer::black(W, H);
    for v in 0..H as i64 {
        for u in 0..W as i64 {
            let mut acc = [0.0; 3];
            for dv in -1..=1 {
                for du in -1..=1 {
                    let p = img.get(
                        (u + du).clamp(0, W as i64 - 1) as u32,
                        (v + dv).clamp(0, H as i64 - 1) as u32,
                    );
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                }
            }
            out.set(u as u32, v as u32, [acc[0] / 9.0, acc[1] / 9.0, acc[2] / 9.0]);
        }
    }
    out
}

pub fn distorted(k: usize, base: &ImageBuffer) -> ImageBuffer {
    let mut rng = Lcg::new(k as u64);
    let kf = k as f64;
    let mut out = ImageBuffer::black(W, H);
    match k % 4 {
        0 => {
            let amp = 0.01 + 0.01 * kf;
            for v in 0..H {
                for u in 0..W {
                    let p = base.get(u, v);
                    let mut q = [0.0; 3];
                    for c in 0..3 {
                        q[c] = p[c] + amp * (rng.next() - 0.5);
                    }
                    out.set(u, v, q);
                }
            }
        }
        1 => {
            let g = 1.0 - 0.02 * kf;
            for (o, &x) in out.data.iter_mut().zip(&base.data) {
                *o = 0.5 + (x - 0.5) * g + 0.01 * kf;
            }
        }
        2 => {
            let blurred = box3(base);
            let amp = 0.005 * kf;
            for v in 0..H {
                for u in 0..W {
                    let p = blurred.get(u, v);
                    let mut q = [0.0; 3];
                    for c in 0..3 {
                        q[c] = p[c] + amp * (rng.next() - 0.5);
                    }
                    out.set(u, v, q);
                }
            }
        }
        _ => {
            for v in 0..H {
                for u in 0..W {
                    let p = base.get(u, v);
                    let s = base.get((u + 1).min(W - 1), v);
                    let mut q = [0.0; 3];
                    for c in 0..3 {
                        q[c] = 0.85 * p[c] + 0.15 * s[c];
                    }
                    out.set(u, v, q);
                }
            }
        }
    }
    for x in &mut out.data {
        *x = x.clamp(0.0, 1.0);
    }
    out
}
