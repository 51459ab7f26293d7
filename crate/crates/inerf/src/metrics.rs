//! Image-quality metrics: PSNR and multi-scale SSIM.
//!
//! MS-SSIM follows the canonical construction: 11x11 Gaussian window with
//! sigma 1.5, valid convolution, stabilizers K1 = 0.01 / K2 = 0.03, 2x2
//! average-pool downsampling between scales, and the published five scale
//! weights. For images too small for five scales the scale count shrinks to
//! the largest feasible one and the leading weights are renormalized.

use crate::error::{Error, Result};

/// Row-major RGB image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    /// `height * width * 3` scalars, RGB interleaved.
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn black(width: u32, height: u32) -> Self {
        ImageBuffer { width, height, data: vec![0.0; (width * height * 3) as usize] }
    }

    pub fn get(&self, u: u32, v: u32) -> [f64; 3] {
        let i = ((v * self.width + u) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, u: u32, v: u32, c: [f64; 3]) {
        let i = ((v * self.width + u) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn clamped(&self) -> ImageBuffer {
        let mut out = self.clone();
        for x in &mut out.data {
            *x = x.clamp(0.0, 1.0);
        }
        out
    }

    fn channel(&self, ch: usize) -> Vec<f64> {
        self.data.iter().skip(ch).step_by(3).cloned().collect()
    }
}

/// Peak signal-to-noise ratio in dB against peak 1.0, capped at 99 dB for
/// identical images so downstream CSV aggregation never sees infinities.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Domain("psnr: image dimensions differ".into()));
    }
    let a = a.clamped();
    let b = b.clamped();
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, wi) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *wi = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *wi;
    }
    for wi in &mut w {
        *wi /= sum;
    }
    w
}

struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    /// Separable valid convolution with the Gaussian window.
    fn blur(&self, kernel: &[f64; WINDOW]) -> Plane {
        let ow = self.w - WINDOW + 1;
        // horizontal pass
        let mut tmp = vec![0.0; ow * self.h];
        for v in 0..self.h {
            for u in 0..ow {
                let mut acc = 0.0;
                for (k, g) in kernel.iter().enumerate() {
                    acc += g * self.data[v * self.w + u + k];
                }
                tmp[v * ow + u] = acc;
            }
        }
        let oh = self.h - WINDOW + 1;
        let mut out = vec![0.0; ow * oh];
        for v in 0..oh {
            for u in 0..ow {
                let mut acc = 0.0;
                for (k, g) in kernel.iter().enumerate() {
                    acc += g * tmp[(v + k) * ow + u];
                }
                out[v * ow + u] = acc;
            }
        }
        Plane { w: ow, h: oh, data: out }
    }

    fn mul(&self, other: &Plane) -> Plane {
        Plane { w: self.w, h: self.h, data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect() }
    }

    /// 2x2 average pooling with stride 2; odd trailing row/column replicated.
    fn downsample(&self) -> Plane {
        let (w, h) = (self.w, self.h);
        let ow = w.div_ceil(2);
        let oh = h.div_ceil(2);
        let mut out = vec![0.0; ow * oh];
        let at = |u: usize, v: usize| self.data[v.min(h - 1) * w + u.min(w - 1)];
        for v in 0..oh {
            for u in 0..ow {
                out[v * ow + u] =
                    0.25 * (at(2 * u, 2 * v) + at(2 * u + 1, 2 * v) + at(2 * u, 2 * v + 1) + at(2 * u + 1, 2 * v + 1));
            }
        }
        Plane { w: ow, h: oh, data: out }
    }

}

/// Mean luminance*contrast-structure and mean contrast-structure of one
/// channel pair at one scale.
fn ssim_channel(x: &Plane, y: &Plane, kernel: &[f64; WINDOW]) -> (f64, f64) {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mu_x = x.blur(kernel);
    let mu_y = y.blur(kernel);
    let xx = x.mul(x).blur(kernel);
    let yy = y.mul(y).blur(kernel);
    let xy = x.mul(y).blur(kernel);
    let n = mu_x.data.len();
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..n {
        let mx = mu_x.data[i];
        let my = mu_y.data[i];
        let var_x = xx.data[i] - mx * mx;
        let var_y = yy.data[i] - my * my;
        let cov = xy.data[i] - mx * my;
        let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        let cs = (2.0 * cov + c2) / (var_x + var_y + c2);
        ssim_sum += l * cs;
        cs_sum += cs;
    }
    (ssim_sum / n as f64, cs_sum / n as f64)
}

/// Largest scale count with `min(W, H) >= 11 * 2^(scales-1)`, at most 5.
pub fn ms_ssim_scales(width: u32, height: u32) -> usize {
    let min_dim = width.min(height) as usize;
    let mut s = 0;
    while s < 5 && min_dim >= WINDOW << s {
        s += 1;
    }
    s
}

/// Multi-scale SSIM averaged over the three channels, in [0, 1].
pub fn ms_ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Domain("ms_ssim: image dimensions differ".into()));
    }
    let scales = ms_ssim_scales(a.width, a.height);
    if scales == 0 {
        return Err(Error::Domain(format!(
            "ms_ssim: image {}x{} smaller than the {WINDOW}x{WINDOW} window",
            a.width, a.height
        )));
    }
    let kernel = gaussian_window();
    let mut weights: Vec<f64> = SCALE_WEIGHTS[..scales].to_vec();
    let wsum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= wsum;
    }
    let a = a.clamped();
    let b = b.clamped();
    let mut value = 0.0;
    for ch in 0..3 {
        let mut x = Plane { w: a.width as usize, h: a.height as usize, data: a.channel(ch) };
        let mut y = Plane { w: b.width as usize, h: b.height as usize, data: b.channel(ch) };
        let mut acc = 1.0;
        for (s, &weight) in weights.iter().enumerate() {
            let (ssim_mean, cs_mean) = ssim_channel(&x, &y, &kernel);
            let factor = if s + 1 == weights.len() { ssim_mean } else { cs_mean };
            acc *= factor.max(0.0).powf(weight);
            if s + 1 < weights.len() {
                x = x.downsample();
                y = y.downsample();
            }
        }
        value += acc;
    }
    Ok((value / 3.0).clamp(0.0, 1.0))
}
